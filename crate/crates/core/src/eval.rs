//! Metrics and experiment drivers: mIoU by occlusion level, order accuracy,
//! ablations over the reasoning variants.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::TrainedModel;
use crate::model::LogPdfCache;
use crate::orm::{segment_scene, OrderGraph, OrmConfig, SceneResult};
use crate::synth::{GeneratedScene, GroundTruth, OcclusionLevel, Scenario};
use crate::tensor::{iou, BinaryMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MaskMode {
    #[serde(rename = "modal")]
    Modal,
    #[serde(rename = "amodal")]
    Amodal,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "modal" => Ok(MaskMode::Modal),
            "amodal" => Ok(MaskMode::Amodal),
            other => Err(Error::InvalidParameter(format!("unknown mask mode `{other}`"))),
        }
    }
}

/// Predicted masks for one object, in scene coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedObject {
    pub id: usize,
    pub class: usize,
    pub modal: BinaryMask,
    pub amodal: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePrediction {
    pub objects: Vec<PredictedObject>,
    pub graph: OrderGraph,
}

impl From<&SceneResult> for ScenePrediction {
    fn from(r: &SceneResult) -> Self {
        Self {
            objects: r
                .objects
                .iter()
                .map(|o| PredictedObject {
                    id: o.id,
                    class: o.class,
                    modal: o.modal().clone(),
                    amodal: o.amodal().clone(),
                })
                .collect(),
            graph: r.graph.clone(),
        }
    }
}

/// Running IoU sum and object count for one bucket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub sum: f64,
    pub count: usize,
}

impl Bucket {
    /// Mean IoU in percent, if the bucket is nonempty.
    pub fn miou(&self) -> Option<f64> {
        (self.count > 0).then(|| 100.0 * self.sum / self.count as f64)
    }
}

/// mIoU per occlusion level plus the object-weighted mean.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelTable {
    pub levels: BTreeMap<OcclusionLevel, Bucket>,
    pub mean: Bucket,
}

impl LevelTable {
    pub fn level(&self, level: OcclusionLevel) -> Option<f64> {
        self.levels.get(&level).and_then(Bucket::miou)
    }

    pub fn mean(&self) -> Option<f64> {
        self.mean.miou()
    }

    fn add(&mut self, level: OcclusionLevel, value: f64) {
        let b = self.levels.entry(level).or_default();
        b.sum += value;
        b.count += 1;
        self.mean.sum += value;
        self.mean.count += 1;
    }

    fn merge(&mut self, other: &LevelTable) {
        for (l, b) in &other.levels {
            let e = self.levels.entry(*l).or_default();
            e.sum += b.sum;
            e.count += b.count;
        }
        self.mean.sum += other.mean.sum;
        self.mean.count += other.mean.count;
    }

    /// Cells `L0 L1 L2 L3 Mean`, `-` where empty.
    pub fn cells(&self) -> Vec<String> {
        OcclusionLevel::ALL
            .iter()
            .map(|&l| self.level(l))
            .chain(std::iter::once(self.mean()))
            .map(|v| v.map_or_else(|| "-".to_string(), |x| format!("{x:.1}")))
            .collect()
    }
}

/// Per-object IoU bucketed by ground-truth occlusion. Objects beyond 90%
/// occlusion are excluded; a missing prediction scores 0.
pub fn miou_by_level(
    predictions: &[ScenePrediction],
    truths: &[GroundTruth],
    mode: MaskMode,
) -> Result<LevelTable> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} scenes",
            predictions.len(),
            truths.len()
        )));
    }
    let mut table = LevelTable::default();
    for (pred, truth) in predictions.iter().zip(truths) {
        for obj in &truth.objects {
            let Some(level) = obj.level else { continue };
            let gt = match mode {
                MaskMode::Modal => obj.modal(),
                MaskMode::Amodal => obj.amodal(),
            };
            let value = match pred.objects.iter().find(|p| p.id == obj.id) {
                Some(p) => iou(
                    match mode {
                        MaskMode::Modal => &p.modal,
                        MaskMode::Amodal => &p.amodal,
                    },
                    gt,
                )?,
                None => 0.0,
            };
            table.add(level, value);
        }
    }
    Ok(table)
}

/// Fraction of true edges whose direction the prediction reproduces; a
/// missing predicted edge counts as wrong. `None` without true edges.
pub fn order_accuracy(predicted: &OrderGraph, truth: &OrderGraph) -> Option<f64> {
    if truth.edges.is_empty() {
        return None;
    }
    let correct = truth
        .edges
        .iter()
        .filter(|e| predicted.front_of(e.front, e.back) == Some(e.front))
        .count();
    Some(correct as f64 / truth.edges.len() as f64)
}

/// True when the predicted edge set, directions included, equals the truth.
pub fn graph_matches(predicted: &OrderGraph, truth: &OrderGraph) -> bool {
    let key = |g: &OrderGraph| {
        let mut v: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.front, e.back)).collect();
        v.sort_unstable();
        v
    };
    key(predicted) == key(truth)
}

/// Classifies and segments a generated scene using its ground-truth boxes.
pub fn segment_generated(scene: &GeneratedScene, model: &TrainedModel, config: &OrmConfig) -> Result<SceneResult> {
    let cache = LogPdfCache::new(&scene.features, &model.dictionary, &model.occluder)?;
    let boxes: Vec<_> = scene.truth.objects.iter().map(|o| o.bbox).collect();
    segment_scene(&cache, &boxes, &model.classes, config)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Independent per-object segmentation.
    Baseline,
    /// Competition without order-based reassignment.
    Nod,
    /// Order-based reassignment, one self-correction pass.
    OdIter1,
    /// Order-based reassignment, two self-correction passes.
    OdIter2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::Nod, Variant::OdIter1, Variant::OdIter2];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "CompNet",
            Variant::Nod => "NOD",
            Variant::OdIter1 => "Ours (iter=1)",
            Variant::OdIter2 => "Ours (iter=2)",
        }
    }

    /// NOD runs at the same iteration count as the OD(iter=2) row it is
    /// compared against.
    pub fn config(self, base: &OrmConfig) -> OrmConfig {
        let (iters, use_order) = match self {
            Variant::Baseline => (0, true),
            Variant::Nod => (2, false),
            Variant::OdIter1 => (1, true),
            Variant::OdIter2 => (2, true),
        };
        OrmConfig {
            iters,
            use_order,
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScores {
    pub modal: LevelTable,
    pub amodal: LevelTable,
    /// Mean per-scene order accuracy over scenes with true edges.
    pub order_accuracy: Option<f64>,
    /// Classification accuracy over objects.
    pub class_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub scores: BTreeMap<Scenario, BTreeMap<Variant, VariantScores>>,
}

/// Runs every variant over every test scene; scenes run in parallel and the
/// aggregation order is fixed.
pub fn run_ablation(
    scenes: &[GeneratedScene],
    model: &TrainedModel,
    base: &OrmConfig,
    variants: &[Variant],
) -> Result<AblationReport> {
    let mut scores = BTreeMap::new();
    let mut scenarios: Vec<Scenario> = scenes.iter().map(|s| s.spec.scenario).collect();
    scenarios.sort_unstable();
    scenarios.dedup();
    for scenario in scenarios {
        let subset: Vec<&GeneratedScene> = scenes.iter().filter(|s| s.spec.scenario == scenario).collect();
        let truths: Vec<GroundTruth> = subset.iter().map(|s| s.truth.clone()).collect();
        let mut per_variant = BTreeMap::new();
        for &v in variants {
            let cfg = v.config(base);
            let preds: Vec<ScenePrediction> = subset
                .par_iter()
                .map(|s| segment_generated(s, model, &cfg).map(|r| ScenePrediction::from(&r)))
                .collect::<Result<_>>()?;
            per_variant.insert(v, score_predictions(&preds, &truths)?);
        }
        scores.insert(scenario, per_variant);
    }
    Ok(AblationReport { scores })
}

pub fn score_predictions(preds: &[ScenePrediction], truths: &[GroundTruth]) -> Result<VariantScores> {
    let accs: Vec<f64> = preds
        .iter()
        .zip(truths)
        .filter_map(|(p, t)| order_accuracy(&p.graph, &t.order))
        .collect();
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, t) in preds.iter().zip(truths) {
        for o in &t.objects {
            total += 1;
            correct += usize::from(p.objects.iter().any(|q| q.id == o.id && q.class == o.class));
        }
    }
    Ok(VariantScores {
        modal: miou_by_level(preds, truths, MaskMode::Modal)?,
        amodal: miou_by_level(preds, truths, MaskMode::Amodal)?,
        order_accuracy: (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64),
        class_accuracy: if total == 0 { 1.0 } else { correct as f64 / total as f64 },
    })
}

impl AblationReport {
    pub fn get(&self, scenario: Scenario, variant: Variant) -> Option<&VariantScores> {
        self.scores.get(&scenario).and_then(|m| m.get(&variant))
    }

    /// Rows per variant, five columns (L0–L3, Mean) per scenario.
    pub fn level_table(&self, mode: MaskMode) -> String {
        let scenarios: Vec<Scenario> = self.scores.keys().copied().collect();
        let mut header = vec![String::new()];
        let mut levels = vec!["Occ Level".to_string()];
        for s in &scenarios {
            header.push(s.title().to_string());
            header.extend(std::iter::repeat_n(String::new(), 4));
            levels.extend(["L0", "L1", "L2", "L3", "Mean"].iter().map(|x| x.to_string()));
        }
        let mut rows = vec![header, levels];
        for v in Variant::ALL {
            if !self.scores.values().any(|m| m.contains_key(&v)) {
                continue;
            }
            let mut row = vec![v.name().to_string()];
            for s in &scenarios {
                match self.get(*s, v) {
                    Some(sc) => row.extend(match mode {
                        MaskMode::Modal => sc.modal.cells(),
                        MaskMode::Amodal => sc.amodal.cells(),
                    }),
                    None => row.extend(std::iter::repeat_n("-".to_string(), 5)),
                }
            }
            rows.push(row);
        }
        render(&rows)
    }

    /// NOD and OD rows with modal/amodal mean columns per scenario.
    pub fn order_ablation_table(&self) -> String {
        let scenarios: Vec<Scenario> = self.scores.keys().copied().collect();
        let mut header = vec![String::new()];
        let mut sub = vec![String::new()];
        for s in &scenarios {
            header.push(s.title().to_string());
            header.push(String::new());
            sub.push("Modal".into());
            sub.push("Amodal".into());
        }
        let mut rows = vec![header, sub];
        for (name, v) in [("NOD", Variant::Nod), ("OD", Variant::OdIter2)] {
            let mut row = vec![name.to_string()];
            for s in &scenarios {
                let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"));
                let sc = self.get(*s, v);
                row.push(fmt(sc.and_then(|c| c.modal.mean())));
                row.push(fmt(sc.and_then(|c| c.amodal.mean())));
            }
            rows.push(row);
        }
        render(&rows)
    }
}

/// Left-aligned first column, right-aligned numbers, `|` separators.
pub fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        for (c, w) in widths.iter().enumerate() {
            let cell = row.get(c).map_or("", String::as_str);
            if c == 0 {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, " | {cell:>w$}");
            }
        }
        out.push('\n');
    }
    out
}

/// Combined table over several scenario-restricted reports.
pub fn merge_tables(tables: &[LevelTable]) -> LevelTable {
    let mut out = LevelTable::default();
    for t in tables {
        out.merge(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orm::OrderEdge;
    use crate::synth::GroundTruthObject;
    use crate::tensor::BoundingBox;

    fn truth_with(mask: BinaryMask, occlusion: f64) -> GroundTruth {
        GroundTruth {
            objects: vec![GroundTruthObject {
                id: 0,
                class: 0,
                template: 0,
                bbox: BoundingBox::new(0, 0, mask.width() as i64, mask.height() as i64).unwrap(),
                depth: 0,
                amodal: Some(mask.clone()),
                modal: Some(mask),
                occlusion,
                level: OcclusionLevel::from_fraction(occlusion),
            }],
            unknown: BinaryMask::empty(2, 2),
            order: OrderGraph::default(),
        }
    }

    fn pred(mask: BinaryMask) -> ScenePrediction {
        ScenePrediction {
            objects: vec![PredictedObject {
                id: 0,
                class: 0,
                modal: mask.clone(),
                amodal: mask,
            }],
            graph: OrderGraph::default(),
        }
    }

    #[test]
    fn perfect_and_empty_predictions() {
        let m = BinaryMask::from_fn(2, 2, |r, _| r == 0);
        let t = truth_with(m.clone(), 0.4);
        let table = miou_by_level(&[pred(m)], std::slice::from_ref(&t), MaskMode::Modal).unwrap();
        assert_eq!(table.level(OcclusionLevel::L2), Some(100.0));
        let table = miou_by_level(&[pred(BinaryMask::empty(2, 2))], &[t], MaskMode::Modal).unwrap();
        assert_eq!(table.mean(), Some(0.0));
    }

    #[test]
    fn half_overlap_is_fifty() {
        let t = truth_with(BinaryMask::from_fn(2, 2, |r, _| r == 0), 0.45);
        let p = pred(BinaryMask::from_fn(2, 2, |_, c| c == 0));
        // |∩| = 1, |∪| = 3
        let table = miou_by_level(&[p], &[t.clone()], MaskMode::Modal).unwrap();
        assert!((table.level(OcclusionLevel::L2).unwrap() - 100.0 / 3.0).abs() < 1e-9);
        let p = pred(BinaryMask::from_fn(2, 2, |r, c| r == 0 && c == 0));
        let table = miou_by_level(&[p], &[t], MaskMode::Modal).unwrap();
        assert_eq!(table.level(OcclusionLevel::L2), Some(50.0));
        assert_eq!(table.mean(), Some(50.0));
    }

    #[test]
    fn heavily_occluded_objects_are_excluded() {
        let t = truth_with(BinaryMask::from_fn(2, 2, |_, _| true), 0.95);
        let table = miou_by_level(&[pred(BinaryMask::empty(2, 2))], &[t], MaskMode::Modal).unwrap();
        assert_eq!(table.mean(), None);
    }

    fn edge(front: usize, back: usize) -> OrderEdge {
        OrderEdge {
            front,
            back,
            votes_front: 0,
            votes_back: 0,
            conflict: 1,
        }
    }

    #[test]
    fn order_accuracy_examples() {
        let truth = OrderGraph {
            nodes: vec![0, 1, 2, 3, 4],
            edges: vec![edge(0, 1), edge(1, 2), edge(2, 3), edge(3, 4)],
        };
        assert_eq!(order_accuracy(&truth, &truth), Some(1.0));
        let flipped = OrderGraph {
            nodes: truth.nodes.clone(),
            edges: truth.edges.iter().map(|e| edge(e.back, e.front)).collect(),
        };
        assert_eq!(order_accuracy(&flipped, &truth), Some(0.0));
        let mut three = truth.clone();
        three.edges[3] = edge(4, 3);
        assert_eq!(order_accuracy(&three, &truth), Some(0.75));
        assert!(graph_matches(&truth, &truth) && !graph_matches(&three, &truth));
    }

    #[test]
    fn rendered_tables_align() {
        let rows = vec![
            vec!["".to_string(), "a".to_string()],
            vec!["long name".to_string(), "10.0".to_string()],
        ];
        let s = render(&rows);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0].len(), lines[1].len());
    }
}
