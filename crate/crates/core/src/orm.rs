//! Occlusion reasoning over the objects of one scene: conflict detection,
//! pixel competition, pairwise order votes, all-or-nothing reassignment,
//! the order graph and recurrent self-correction.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    amodal_mask, classify_box, classify_box_hidden, label_at, ClassModel, Composition, LikelihoodMaps, LogPdfCache,
    PixelLabel, DEFAULT_AMODAL_THRESHOLD,
};
use crate::tensor::{BinaryMask, BoundingBox};

/// One classified object with its maps in scene coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: usize,
    pub bbox: BoundingBox,
    pub maps: LikelihoodMaps,
    pub label: usize,
    pub mixture: usize,
    pub score: f64,
}

impl SceneObject {
    /// Per-pixel label at a lattice position covered by the maps.
    pub fn label_at(&self, row: i64, col: i64) -> Option<PixelLabel> {
        self.maps.index_of(row, col).map(|i| label_at(&self.maps, i))
    }

    fn values_at(&self, row: i64, col: i64) -> Option<(f64, f64)> {
        self.maps.index_of(row, col).map(|i| (self.maps.fg[i], self.maps.occ[i]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Owner {
    None,
    Outlier,
    Object(usize),
}

/// Exactly one owner per lattice cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityAssignment {
    height: usize,
    width: usize,
    owners: Vec<Owner>,
}

impl VisibilityAssignment {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            owners: vec![Owner::None; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn owners(&self) -> &[Owner] {
        &self.owners
    }

    pub fn get(&self, row: usize, col: usize) -> Owner {
        self.owners[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, owner: Owner) {
        self.owners[row * self.width + col] = owner;
    }

    pub fn mask_of(&self, owner: Owner) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |r, c| self.get(r, c) == owner)
    }
}

/// How the occluder likelihood of competing objects is merged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OccMerge {
    /// One outlier score: the max of the competitors' occluder maps.
    #[default]
    Max,
    /// An object competes only where its foreground beats its own occluder map.
    PerObject,
}

impl std::str::FromStr for OccMerge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(OccMerge::Max),
            "per-object" => Ok(OccMerge::PerObject),
            other => Err(Error::InvalidParameter(format!("unknown occ merge `{other}`"))),
        }
    }
}

/// Pixels both objects label foreground.
pub fn detect_conflicts(a: &SceneObject, b: &SceneObject, height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::empty(height, width);
    let Some(overlap) = a.maps.region.intersection(&b.maps.region) else {
        return mask;
    };
    for row in overlap.y0..overlap.y1 {
        for col in overlap.x0..overlap.x1 {
            if a.label_at(row, col) == Some(PixelLabel::Foreground)
                && b.label_at(row, col) == Some(PixelLabel::Foreground)
            {
                mask.set(row as usize, col as usize, true);
            }
        }
    }
    mask
}

/// Argmax over `(id, fg, occ)` candidates and the outlier. Ties go to the
/// outlier, then to the lower id.
pub fn compete(candidates: &[(usize, f64, f64)], merge: OccMerge) -> Owner {
    match merge {
        OccMerge::Max => {
            let outlier = candidates.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
            let mut best = (Owner::Outlier, outlier);
            for &(id, fg, _) in candidates {
                let better = match best.0 {
                    Owner::Object(b) => fg > best.1 || (fg == best.1 && id < b),
                    _ => fg > best.1,
                };
                if better {
                    best = (Owner::Object(id), fg);
                }
            }
            best.0
        }
        OccMerge::PerObject => {
            let mut best: Option<(usize, f64)> = None;
            for &(id, fg, occ) in candidates {
                if fg > occ && best.is_none_or(|(b, v)| fg > v || (fg == v && id < b)) {
                    best = Some((id, fg));
                }
            }
            best.map_or(Owner::Outlier, |(id, _)| Owner::Object(id))
        }
    }
}

/// Two-object competition at one lattice cell inside both maps.
pub fn pixel_competition(a: &SceneObject, b: &SceneObject, row: i64, col: i64, merge: OccMerge) -> Owner {
    let mut candidates = Vec::with_capacity(2);
    for o in [a, b] {
        if let Some((fg, occ)) = o.values_at(row, col) {
            candidates.push((o.id, fg, occ));
        }
    }
    compete(&candidates, merge)
}

/// Ownership before order reassignment. Objects labeling a cell foreground
/// compete for it against the outlier; unclaimed cells labeled occluder by
/// some covering object go to the outlier; the rest stay unowned.
pub fn competition_ownership(
    objects: &[SceneObject],
    height: usize,
    width: usize,
    merge: OccMerge,
) -> VisibilityAssignment {
    let mut out = VisibilityAssignment::new(height, width);
    let mut claimants = Vec::new();
    for row in 0..height as i64 {
        for col in 0..width as i64 {
            claimants.clear();
            let mut occluded = false;
            for o in objects {
                match o.label_at(row, col) {
                    Some(PixelLabel::Foreground) => {
                        let (fg, occ) = o.values_at(row, col).expect("label implies coverage");
                        claimants.push((o.id, fg, occ));
                    }
                    Some(PixelLabel::Occluder) => occluded = true,
                    _ => {}
                }
            }
            let owner = match claimants.len() {
                0 if occluded => Owner::Outlier,
                0 => Owner::None,
                _ => compete(&claimants, merge),
            };
            out.set(row as usize, col as usize, owner);
        }
    }
    out
}

/// Order relation: `+1` when `a` is in front, `-1` otherwise (including ties).
pub fn recover_order(votes_a: usize, votes_b: usize) -> i8 {
    if votes_a > votes_b {
        1
    } else {
        -1
    }
}

/// Conflict cells owned by `a` and by `b` under the given ownership.
pub fn count_votes(a: usize, b: usize, conflict: &BinaryMask, ownership: &VisibilityAssignment) -> (usize, usize) {
    let (mut va, mut vb) = (0, 0);
    for row in 0..conflict.height() {
        for col in 0..conflict.width() {
            if conflict.get(row, col) {
                match ownership.get(row, col) {
                    Owner::Object(id) if id == a => va += 1,
                    Owner::Object(id) if id == b => vb += 1,
                    _ => {}
                }
            }
        }
    }
    (va, vb)
}

/// All-or-nothing: every conflict cell not owned by the outlier goes to the
/// front object.
pub fn reassign(assignment: &mut VisibilityAssignment, front: usize, conflict: &BinaryMask) {
    for row in 0..conflict.height() {
        for col in 0..conflict.width() {
            if conflict.get(row, col) && assignment.get(row, col) != Owner::Outlier {
                assignment.set(row, col, Owner::Object(front));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderEdge {
    /// Occluder.
    pub front: usize,
    /// Occludee.
    pub back: usize,
    pub votes_front: usize,
    pub votes_back: usize,
    /// Conflict-set size.
    pub conflict: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderGraph {
    pub nodes: Vec<usize>,
    pub edges: Vec<OrderEdge>,
}

impl OrderGraph {
    /// Front object of the unordered pair, if an edge exists.
    pub fn front_of(&self, a: usize, b: usize) -> Option<usize> {
        self.edges
            .iter()
            .find(|e| (e.front == a && e.back == b) || (e.front == b && e.back == a))
            .map(|e| e.front)
    }

    /// True when the edges contain a directed cycle.
    pub fn has_cycle(&self) -> bool {
        let n = self.nodes.iter().copied().max().map_or(0, |m| m + 1);
        let mut indeg = vec![0usize; n];
        for e in &self.edges {
            indeg[e.back] += 1;
        }
        let mut stack: Vec<usize> = self.nodes.iter().copied().filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for e in self.edges.iter().filter(|e| e.front == v) {
                indeg[e.back] -= 1;
                if indeg[e.back] == 0 {
                    stack.push(e.back);
                }
            }
        }
        seen < self.nodes.len()
    }

    /// One line per edge: `a -> b votes_a votes_b |C|`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for e in &self.edges {
            let _ = writeln!(s, "{} -> {} {} {} {}", e.front, e.back, e.votes_front, e.votes_back, e.conflict);
        }
        s
    }

    pub fn from_text(nodes: Vec<usize>, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 || parts[1] != "->" {
                return Err(Error::Malformed(format!("order edge `{line}`")));
            }
            let num = |i: usize| {
                parts[i]
                    .parse::<usize>()
                    .map_err(|_| Error::Malformed(format!("order edge `{line}`")))
            };
            edges.push(OrderEdge {
                front: num(0)?,
                back: num(2)?,
                votes_front: num(3)?,
                votes_back: num(4)?,
                conflict: num(5)?,
            });
        }
        Ok(Self { nodes, edges })
    }
}

/// Result of one reasoning pass over fixed maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Reasoning {
    pub ownership: VisibilityAssignment,
    pub graph: OrderGraph,
    /// Per-object union of the conflict sets it takes part in.
    pub conflicts: Vec<BinaryMask>,
}

/// Conflict detection, competition and (when `use_order`) order recovery with
/// all-or-nothing reassignment. Pairs are processed in descending conflict
/// size, ties by id pair; every pair votes with the ownership from competition
/// among all objects, before any reassignment.
pub fn reason(
    objects: &[SceneObject],
    height: usize,
    width: usize,
    use_order: bool,
    merge: OccMerge,
) -> Reasoning {
    let competition = competition_ownership(objects, height, width, merge);
    let mut ownership = competition.clone();
    let mut conflicts = vec![BinaryMask::empty(height, width); objects.len()];
    let mut pairs = Vec::new();
    for i in 0..objects.len() {
        for j in i + 1..objects.len() {
            let (a, b) = (&objects[i], &objects[j]);
            if !a.bbox.overlaps(&b.bbox) {
                continue;
            }
            let c = detect_conflicts(a, b, height, width);
            let size = c.count();
            if size > 0 {
                pairs.push((i, j, c, size));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.3.cmp(&x.3)
            .then((objects[x.0].id, objects[x.1].id).cmp(&(objects[y.0].id, objects[y.1].id)))
    });
    let mut edges = Vec::new();
    for (i, j, c, size) in &pairs {
        let (a, b) = (&objects[*i], &objects[*j]);
        conflicts[*i] = conflicts[*i].or(c).expect("same lattice");
        conflicts[*j] = conflicts[*j].or(c).expect("same lattice");
        if !use_order {
            continue;
        }
        let (va, vb) = count_votes(a.id, b.id, c, &competition);
        let (front, back, vf, vbk) = if recover_order(va, vb) > 0 {
            (a.id, b.id, va, vb)
        } else {
            (b.id, a.id, vb, va)
        };
        reassign(&mut ownership, front, c);
        edges.push(OrderEdge {
            front,
            back,
            votes_front: vf,
            votes_back: vbk,
            conflict: *size,
        });
    }
    Reasoning {
        ownership,
        graph: OrderGraph {
            nodes: objects.iter().map(|o| o.id).collect(),
            edges,
        },
        conflicts,
    }
}

/// Order graph alone; see [`reason`].
pub fn build_order_graph(objects: &[SceneObject], height: usize, width: usize, merge: OccMerge) -> OrderGraph {
    reason(objects, height, width, true, merge).graph
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrmConfig {
    /// 0 gives the independent feed-forward baseline.
    pub iters: usize,
    pub use_order: bool,
    pub occ_merge: OccMerge,
    pub composition: Composition,
    pub amodal_threshold: f64,
}

impl Default for OrmConfig {
    fn default() -> Self {
        Self {
            iters: 1,
            use_order: true,
            occ_merge: OccMerge::Max,
            composition: Composition::Max,
            amodal_threshold: DEFAULT_AMODAL_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub id: usize,
    pub bbox: BoundingBox,
    pub class: usize,
    pub mixture: usize,
    pub score: f64,
    #[serde(skip)]
    pub amodal: Option<BinaryMask>,
    #[serde(skip)]
    pub modal: Option<BinaryMask>,
}

impl ObjectResult {
    pub fn amodal(&self) -> &BinaryMask {
        self.amodal.as_ref().expect("results carry masks")
    }

    pub fn modal(&self) -> &BinaryMask {
        self.modal.as_ref().expect("results carry masks")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub labels: Vec<(usize, usize)>,
    pub scores: Vec<f64>,
    pub graph: OrderGraph,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneResult {
    pub objects: Vec<ObjectResult>,
    pub ownership: VisibilityAssignment,
    pub graph: OrderGraph,
    /// Union of the pairwise conflict sets of the final maps.
    pub conflict: BinaryMask,
    pub trace: Vec<IterationTrace>,
}

/// Independent classification of every box; concurrent across objects.
pub fn feed_forward(
    cache: &LogPdfCache,
    boxes: &[BoundingBox],
    models: &[ClassModel],
    composition: Composition,
) -> Result<Vec<SceneObject>> {
    boxes
        .par_iter()
        .enumerate()
        .map(|(id, bbox)| {
            let (c, maps) = classify_box(cache, bbox, models, None, composition)?;
            Ok(SceneObject {
                id,
                bbox: *bbox,
                maps,
                label: c.class,
                mixture: c.mixture,
                score: c.score,
            })
        })
        .collect()
}

/// Cells of an object's maps explained by something else: owned by another
/// object, or by the outlier inside one of its conflict sets.
fn hidden_cells(o: &SceneObject, r: &Reasoning) -> Vec<bool> {
    let region = o.maps.region;
    let conflict = &r.conflicts[o.id];
    let mut hidden = Vec::with_capacity(o.maps.len());
    for row in region.y0..region.y1 {
        for col in region.x0..region.x1 {
            let (ur, uc) = (row as usize, col as usize);
            hidden.push(match r.ownership.get(ur, uc) {
                Owner::Object(id) => id != o.id,
                Owner::Outlier => conflict.get(ur, uc),
                Owner::None => false,
            });
        }
    }
    hidden
}

/// One self-correction step: reclassify each object with cells explained by
/// others forced to the occluder branch.
pub fn self_correct_step(
    cache: &LogPdfCache,
    objects: &[SceneObject],
    reasoning: &Reasoning,
    models: &[ClassModel],
    composition: Composition,
) -> Result<Vec<SceneObject>> {
    objects
        .par_iter()
        .map(|o| {
            let hidden = hidden_cells(o, reasoning);
            let (c, maps) = classify_box_hidden(cache, &o.bbox, models, &hidden, composition)?;
            let mut next = o.clone();
            next.score = c.score;
            if (c.class, c.mixture) != (o.label, o.mixture) {
                next.label = c.class;
                next.mixture = c.mixture;
                next.maps = maps;
            }
            Ok(next)
        })
        .collect()
}

/// Full scene segmentation. Object ids are box indices.
pub fn segment_scene(
    cache: &LogPdfCache,
    boxes: &[BoundingBox],
    models: &[ClassModel],
    config: &OrmConfig,
) -> Result<SceneResult> {
    let (height, width) = (cache.height(), cache.width());
    let mut objects = feed_forward(cache, boxes, models, config.composition)?;
    let mut trace = Vec::with_capacity(config.iters);
    for _ in 0..config.iters {
        let r = reason(&objects, height, width, config.use_order, config.occ_merge);
        objects = self_correct_step(cache, &objects, &r, models, config.composition)?;
        trace.push(IterationTrace {
            labels: objects.iter().map(|o| (o.label, o.mixture)).collect(),
            scores: objects.iter().map(|o| o.score).collect(),
            graph: r.graph,
        });
    }

    let results_amodal: Vec<BinaryMask> = objects
        .iter()
        .map(|o| {
            let mix = &models[o.label].mixtures[o.mixture];
            let local = amodal_mask(mix, o.bbox.height(), o.bbox.width(), config.amodal_threshold);
            BinaryMask::paste(height, width, &o.bbox, &local)
        })
        .collect();

    let (ownership, graph) = if config.iters == 0 {
        // baseline: every object keeps its own foreground
        let mut own = VisibilityAssignment::new(height, width);
        for o in &objects {
            for row in o.maps.region.y0..o.maps.region.y1 {
                for col in o.maps.region.x0..o.maps.region.x1 {
                    if o.label_at(row, col) == Some(PixelLabel::Foreground) {
                        own.set(row as usize, col as usize, Owner::Object(o.id));
                    }
                }
            }
        }
        let graph = OrderGraph {
            nodes: objects.iter().map(|o| o.id).collect(),
            edges: Vec::new(),
        };
        (own, graph)
    } else {
        let r = reason(&objects, height, width, config.use_order, config.occ_merge);
        (r.ownership, r.graph)
    };

    let mut conflict = BinaryMask::empty(height, width);
    for (i, a) in objects.iter().enumerate() {
        for b in &objects[i + 1..] {
            if a.bbox.overlaps(&b.bbox) {
                conflict = conflict.or(&detect_conflicts(a, b, height, width))?;
            }
        }
    }

    let results = objects
        .iter()
        .zip(results_amodal)
        .map(|(o, amodal)| {
            let modal = if config.iters == 0 {
                BinaryMask::from_fn(height, width, |r, c| {
                    amodal.get(r, c) && o.label_at(r as i64, c as i64) == Some(PixelLabel::Foreground)
                })
            } else {
                BinaryMask::from_fn(height, width, |r, c| {
                    amodal.get(r, c) && ownership.get(r, c) == Owner::Object(o.id)
                })
            };
            ObjectResult {
                id: o.id,
                bbox: o.bbox,
                class: o.label,
                mixture: o.mixture,
                score: o.score,
                amodal: Some(amodal),
                modal: Some(modal),
            }
        })
        .collect();
    Ok(SceneResult {
        objects: results,
        ownership,
        graph,
        conflict,
        trace,
    })
}
