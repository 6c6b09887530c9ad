//! Synthetic occlusion challenge: planted class templates rendered as vMF
//! features, composed into scenes at controlled occlusion levels with exact
//! modal/amodal ground truth and occlusion order.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{AnnotatedMap, AnnotatedObject, TrainingSet};
use crate::orm::{OrderEdge, OrderGraph};
use crate::tensor::{BinaryMask, BoundingBox, FeatureMap};
use crate::vmf::{sample_uniform_sphere, sample_vmf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "two")]
    TwoObject,
    #[serde(rename = "four")]
    FourObject,
    #[serde(rename = "unknown")]
    TwoPlusUnknown,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::TwoObject, Scenario::FourObject, Scenario::TwoPlusUnknown];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::TwoObject => "two",
            Scenario::FourObject => "four",
            Scenario::TwoPlusUnknown => "unknown",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Scenario::TwoObject => "2 Objects",
            Scenario::FourObject => "4 Objects",
            Scenario::TwoPlusUnknown => "2 Objects + Unknown Occlusion",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two" => Ok(Scenario::TwoObject),
            "four" => Ok(Scenario::FourObject),
            "unknown" => Ok(Scenario::TwoPlusUnknown),
            other => Err(Error::InvalidParameter(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Occlusion buckets: L0 [0,1%), L1 [1,30%), L2 [30,60%), L3 [60,90%].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OcclusionLevel {
    L0,
    L1,
    L2,
    L3,
}

impl OcclusionLevel {
    pub const ALL: [OcclusionLevel; 4] = [
        OcclusionLevel::L0,
        OcclusionLevel::L1,
        OcclusionLevel::L2,
        OcclusionLevel::L3,
    ];

    pub fn range(self) -> (f64, f64) {
        match self {
            OcclusionLevel::L0 => (0.0, 0.01),
            OcclusionLevel::L1 => (0.01, 0.30),
            OcclusionLevel::L2 => (0.30, 0.60),
            OcclusionLevel::L3 => (0.60, 0.90),
        }
    }

    /// Bucket for an occluded fraction; `None` above 90%.
    pub fn from_fraction(fraction: f64) -> Option<OcclusionLevel> {
        match fraction {
            f if f < 0.01 => Some(OcclusionLevel::L0),
            f if f < 0.30 => Some(OcclusionLevel::L1),
            f if f < 0.60 => Some(OcclusionLevel::L2),
            f if f <= 0.90 => Some(OcclusionLevel::L3),
            _ => None,
        }
    }

    pub fn contains(self, fraction: f64) -> bool {
        OcclusionLevel::from_fraction(fraction) == Some(self)
    }

    fn target(self) -> f64 {
        let (lo, hi) = self.range();
        0.5 * (lo + hi)
    }

    pub fn name(self) -> &'static str {
        match self {
            OcclusionLevel::L0 => "L0",
            OcclusionLevel::L1 => "L1",
            OcclusionLevel::L2 => "L2",
            OcclusionLevel::L3 => "L3",
        }
    }
}

impl fmt::Display for OcclusionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Free parameters of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub dim: usize,
    pub classes: usize,
    pub templates_per_class: usize,
    pub background_components: usize,
    pub unknown_components: usize,
    pub sigma_gen: f64,
    /// Weight of the direction shared by every object part.
    pub object_weight: f64,
    /// Weight of the per-class direction.
    pub class_weight: f64,
    /// Weight of the part-specific direction.
    pub part_weight: f64,
    /// Side of the square blocks sharing one background component.
    pub background_block: usize,
    pub margin: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            classes: 2,
            templates_per_class: 2,
            background_components: 24,
            unknown_components: 8,
            sigma_gen: 30.0,
            object_weight: 0.55,
            class_weight: 0.45,
            part_weight: 0.70,
            background_block: 3,
            margin: 3,
            seed: 0x0c_c1_0d_ed,
        }
    }
}

/// A planted object template on its canonical grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTemplate {
    pub class: usize,
    pub id: usize,
    pub height: usize,
    pub width: usize,
    /// Generator component per canonical position; `None` outside the shape.
    pub parts: Vec<Option<usize>>,
}

impl ClassTemplate {
    pub fn shape(&self) -> BinaryMask {
        BinaryMask::from_fn(self.height, self.width, |r, c| self.parts[r * self.width + c].is_some())
    }

    pub fn area(&self) -> usize {
        self.parts.iter().filter(|p| p.is_some()).count()
    }

    pub fn covers(&self, row: i64, col: i64) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.parts[row as usize * self.width + col as usize].is_some()
    }
}

/// Generator vocabulary and templates shared by all scenes.
#[derive(Debug, Clone)]
pub struct ChallengeWorld {
    pub config: WorldConfig,
    pub class_labels: Vec<String>,
    /// Unit mean directions of every generator component.
    pub components: Vec<Vec<f64>>,
    pub templates: Vec<ClassTemplate>,
    pub background_pool: Vec<usize>,
    pub unknown_pool: Vec<usize>,
}

const TEMPLATE_SIZES: [(usize, usize); 6] = [(10, 14), (12, 11), (12, 10), (10, 13), (11, 12), (9, 14)];

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl ChallengeWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        let free = config.dim as i64 - config.classes as i64 - 1;
        if free < 2 {
            return Err(Error::InvalidParameter(format!(
                "dimension {} too small for {} classes",
                config.dim, config.classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dim = config.dim;
        let offset = config.classes + 1;
        // random unit vector in the subspace orthogonal to object/class axes
        let free_dir = |rng: &mut ChaCha8Rng| {
            let u = sample_uniform_sphere(dim - offset, rng);
            let mut v = vec![0.0; offset];
            v.extend(u);
            v
        };

        let mut components = Vec::new();
        let mut templates = Vec::new();
        let n_templates = config.classes * config.templates_per_class;
        for t in 0..n_templates {
            let class = t / config.templates_per_class;
            let (height, width) = TEMPLATE_SIZES[t % TEMPLATE_SIZES.len()];
            let n_parts = rng.random_range(3..=6usize);
            let first = components.len();
            for _ in 0..n_parts {
                let u = free_dir(&mut rng);
                let mut v: Vec<f64> = u.iter().map(|x| x * config.part_weight).collect();
                v[0] += config.object_weight;
                v[1 + class] += config.class_weight;
                components.push(unit(v));
            }
            let shape = template_shape(t % 3, height, width);
            let rotation = rng.random::<f64>() * std::f64::consts::TAU;
            let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
            let parts = (0..height * width)
                .map(|i| {
                    let (r, c) = (i / width, i % width);
                    shape.get(r, c).then(|| {
                        let angle = ((r as f64 - cy).atan2(c as f64 - cx) + rotation)
                            .rem_euclid(std::f64::consts::TAU);
                        let sector = (angle / std::f64::consts::TAU * n_parts as f64) as usize;
                        first + sector.min(n_parts - 1)
                    })
                })
                .collect();
            templates.push(ClassTemplate {
                class,
                id: t,
                height,
                width,
                parts,
            });
        }

        let background_pool: Vec<usize> = (0..config.background_components)
            .map(|_| {
                components.push(free_dir(&mut rng));
                components.len() - 1
            })
            .collect();
        // unseen clutter: blends of background directions, never drawn during training
        let mut unknown_pool = Vec::new();
        for _ in 0..config.unknown_components {
            let a = background_pool[rng.random_range(0..background_pool.len())];
            let b = loop {
                let b = background_pool[rng.random_range(0..background_pool.len())];
                if b != a {
                    break b;
                }
            };
            let v = components[a].iter().zip(&components[b]).map(|(x, y)| x + y).collect();
            components.push(unit(v));
            unknown_pool.push(components.len() - 1);
        }

        let class_labels = (0..config.classes).map(|c| format!("class{c}")).collect();
        Ok(Self {
            config,
            class_labels,
            components,
            templates,
            background_pool,
            unknown_pool,
        })
    }

    pub fn templates_of(&self, class: usize) -> impl Iterator<Item = &ClassTemplate> {
        self.templates.iter().filter(move |t| t.class == class)
    }

    /// Indices of every component used by some class template.
    pub fn part_components(&self) -> Vec<usize> {
        let mut parts: Vec<usize> = self.templates.iter().flat_map(|t| t.parts.iter().flatten().copied()).collect();
        parts.sort_unstable();
        parts.dedup();
        parts
    }

    fn sample(&self, component: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        sample_vmf(&self.components[component], self.config.sigma_gen, rng)
    }
}

fn template_shape(kind: usize, height: usize, width: usize) -> BinaryMask {
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let (ry, rx) = (height as f64 / 2.0, width as f64 / 2.0);
    match kind {
        0 => BinaryMask::from_fn(height, width, |r, c| {
            let (dy, dx) = ((r as f64 - cy) / ry, (c as f64 - cx) / rx);
            dy * dy + dx * dx <= 1.0
        }),
        1 => {
            // rounded rectangle with corner radius 3
            let rad = 3.0f64;
            BinaryMask::from_fn(height, width, |r, c| {
                let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
                let qy = (y - rad).min(height as f64 - rad - y).min(0.0);
                let qx = (x - rad).min(width as f64 - rad - x).min(0.0);
                qy * qy + qx * qx <= rad * rad
            })
        }
        _ => BinaryMask::from_fn(height, width, |r, c| {
            // union of a wide lower ellipse and a narrow upper one
            let (y, x) = (r as f64, c as f64);
            let lower = {
                let (dy, dx) = ((y - height as f64 * 0.65) / (height as f64 * 0.36), (x - cx) / rx);
                dy * dy + dx * dx <= 1.0
            };
            let upper = {
                let (dy, dx) = ((y - height as f64 * 0.3) / (height as f64 * 0.32), (x - cx) / (rx * 0.6));
                dy * dy + dx * dx <= 1.0
            };
            lower || upper
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub template: usize,
    pub bbox: BoundingBox,
    /// 0 is frontmost.
    pub depth: usize,
}

/// An unseen-category occluder: an ellipse painted above every object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownOccluder {
    pub bbox: BoundingBox,
    pub components: [usize; 2],
}

impl UnknownOccluder {
    fn component_at(&self, row: i64, col: i64) -> Option<usize> {
        let (h, w) = (self.bbox.height() as f64, self.bbox.width() as f64);
        let (dy, dx) = (
            (row - self.bbox.y0) as f64 + 0.5 - h / 2.0,
            (col - self.bbox.x0) as f64 + 0.5 - w / 2.0,
        );
        let inside = (dy / (h / 2.0)).powi(2) + (dx / (w / 2.0)).powi(2) <= 1.0;
        inside.then(|| if dx < 0.0 { self.components[0] } else { self.components[1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scenario: Scenario,
    pub level: OcclusionLevel,
    pub height: usize,
    pub width: usize,
    /// Listed in object-id order.
    pub placements: Vec<Placement>,
    pub unknown: Vec<UnknownOccluder>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub id: usize,
    pub class: usize,
    pub template: usize,
    pub bbox: BoundingBox,
    pub depth: usize,
    #[serde(skip)]
    pub amodal: Option<BinaryMask>,
    #[serde(skip)]
    pub modal: Option<BinaryMask>,
    pub occlusion: f64,
    pub level: Option<OcclusionLevel>,
}

impl GroundTruthObject {
    pub fn amodal(&self) -> &BinaryMask {
        self.amodal.as_ref().expect("ground truth carries masks")
    }

    pub fn modal(&self) -> &BinaryMask {
        self.modal.as_ref().expect("ground truth carries masks")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub objects: Vec<GroundTruthObject>,
    /// Lattice cells painted by unknown occluders (visible ones).
    pub unknown: BinaryMask,
    pub order: OrderGraph,
}

/// Which generator source painted a lattice cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Background(usize),
    Object(usize, usize),
    Unknown(usize),
}

/// Paints the scene back to front and samples one feature per cell.
pub fn render_scene(spec: &SceneSpec, world: &ChallengeWorld) -> Result<(FeatureMap, GroundTruth)> {
    let (h, w) = (spec.height, spec.width);
    for p in &spec.placements {
        let t = world
            .templates
            .get(p.template)
            .ok_or_else(|| Error::InvalidParameter(format!("template {} missing", p.template)))?;
        if p.bbox.height() != t.height || p.bbox.width() != t.width {
            return Err(Error::InvalidBox("placement box differs from template size".into()));
        }
        if p.bbox.x0 < 0 || p.bbox.y0 < 0 || p.bbox.x1 as usize > w || p.bbox.y1 as usize > h {
            return Err(Error::InvalidBox("placement does not fit the lattice".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let block = world.config.background_block.max(1);
    let (bh, bw) = (h.div_ceil(block), w.div_ceil(block));
    let blocks: Vec<usize> = (0..bh * bw)
        .map(|_| world.background_pool[rng.random_range(0..world.background_pool.len())])
        .collect();
    let mut sources: Vec<Source> = (0..h * w)
        .map(|i| Source::Background(blocks[(i / w / block) * bw + (i % w) / block]))
        .collect();

    let mut by_depth: Vec<usize> = (0..spec.placements.len()).collect();
    by_depth.sort_by_key(|&i| std::cmp::Reverse(spec.placements[i].depth));
    for &id in &by_depth {
        let p = &spec.placements[id];
        let t = &world.templates[p.template];
        for r in 0..t.height {
            for c in 0..t.width {
                if let Some(comp) = t.parts[r * t.width + c] {
                    let (sr, sc) = (p.bbox.y0 as usize + r, p.bbox.x0 as usize + c);
                    sources[sr * w + sc] = Source::Object(id, comp);
                }
            }
        }
    }
    for u in &spec.unknown {
        for r in u.bbox.y0.max(0)..u.bbox.y1.min(h as i64) {
            for c in u.bbox.x0.max(0)..u.bbox.x1.min(w as i64) {
                if let Some(comp) = u.component_at(r, c) {
                    sources[r as usize * w + c as usize] = Source::Unknown(comp);
                }
            }
        }
    }

    let mut vectors = Vec::with_capacity(h * w);
    for s in &sources {
        let comp = match *s {
            Source::Background(c) | Source::Object(_, c) | Source::Unknown(c) => c,
        };
        vectors.push(world.sample(comp, &mut rng));
    }
    let fmap = FeatureMap::from_vectors(h, w, &vectors)?;

    let mut objects = Vec::with_capacity(spec.placements.len());
    for (id, p) in spec.placements.iter().enumerate() {
        let t = &world.templates[p.template];
        let amodal = BinaryMask::paste(h, w, &p.bbox, &t.shape());
        let modal = BinaryMask::from_fn(h, w, |r, c| matches!(sources[r * w + c], Source::Object(o, _) if o == id));
        let occlusion = 1.0 - modal.count() as f64 / amodal.count() as f64;
        objects.push(GroundTruthObject {
            id,
            class: t.class,
            template: t.id,
            bbox: p.bbox,
            depth: p.depth,
            amodal: Some(amodal),
            modal: Some(modal),
            occlusion,
            level: OcclusionLevel::from_fraction(occlusion),
        });
    }
    let unknown = BinaryMask::from_fn(h, w, |r, c| matches!(sources[r * w + c], Source::Unknown(_)));
    let order = true_order(&objects);
    Ok((
        fmap,
        GroundTruth {
            objects,
            unknown,
            order,
        },
    ))
}

/// Edges from every object to each deeper object it visibly hides: some cell
/// of the deeper object's shape shows the front object.
fn true_order(objects: &[GroundTruthObject]) -> OrderGraph {
    let mut edges = Vec::new();
    for a in objects {
        for b in objects {
            if a.depth < b.depth {
                let overlap = a.modal().and(b.amodal()).map(|m| m.count()).unwrap_or(0);
                if overlap > 0 {
                    edges.push(OrderEdge {
                        front: a.id,
                        back: b.id,
                        votes_front: 0,
                        votes_back: 0,
                        conflict: overlap,
                    });
                }
            }
        }
    }
    edges.sort_by_key(|e| (e.front.min(e.back), e.front.max(e.back)));
    OrderGraph {
        nodes: objects.iter().map(|o| o.id).collect(),
        edges,
    }
}

/// Fraction of `back`'s shape covered by `front`'s shape when `back` sits at
/// offset (dy, dx) from `front`.
fn covered_fraction(front: &ClassTemplate, back: &ClassTemplate, dy: i64, dx: i64) -> f64 {
    let mut covered = 0usize;
    for r in 0..back.height {
        for c in 0..back.width {
            if back.parts[r * back.width + c].is_some() && front.covers(r as i64 + dy, c as i64 + dx) {
                covered += 1;
            }
        }
    }
    covered as f64 / back.area() as f64
}

/// Horizontal offset of `next` relative to `prev` (positive: to the right)
/// bringing the deeper object's covered fraction nearest the level centre.
fn search_offset(
    prev: &ClassTemplate,
    next: &ClassTemplate,
    next_in_front: bool,
    dy: i64,
    level: OcclusionLevel,
    rightward_only: bool,
    allowed: impl Fn(i64) -> bool,
    rng: &mut ChaCha8Rng,
) -> Option<i64> {
    if level == OcclusionLevel::L0 {
        let gap = rng.random_range(1..=3i64);
        let dx = if rightward_only || rng.random_bool(0.5) {
            prev.width as i64 + gap
        } else {
            -(next.width as i64) - gap
        };
        return allowed(dx).then_some(dx);
    }
    let lo = if rightward_only { 1 } else { -(next.width as i64) };
    let hi = prev.width as i64;
    let target = level.target();
    let mut best: Option<(f64, i64)> = None;
    let mut offsets: Vec<i64> = (lo..=hi).collect();
    offsets.shuffle(rng);
    for dx in offsets.into_iter().filter(|&dx| allowed(dx)) {
        let fraction = if next_in_front {
            covered_fraction(next, prev, -dy, -dx)
        } else {
            covered_fraction(prev, next, dy, dx)
        };
        if level.contains(fraction) {
            let err = (fraction - target).abs();
            if best.is_none_or(|(e, _)| err < e) {
                best = Some((err, dx));
            }
        }
    }
    best.map(|(_, dx)| dx)
}

fn pick_template(world: &ChallengeWorld, rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(0..world.templates.len())
}

/// Lays out a scene of the given scenario at the target level.
pub fn plan_scene(
    scenario: Scenario,
    level: OcclusionLevel,
    world: &ChallengeWorld,
    seed: u64,
) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = match scenario {
        Scenario::FourObject => 4,
        _ => 2,
    };
    let templates: Vec<usize> = (0..n).map(|_| pick_template(world, &mut rng)).collect();
    let mut depths: Vec<usize> = (0..n).collect();
    depths.shuffle(&mut rng);

    // one link carries the target level; the others are light
    let key_link = rng.random_range(0..n - 1);
    let link_level = |j: usize| {
        if j == key_link {
            level
        } else {
            level.min(OcclusionLevel::L1)
        }
    };

    // chain layout: object j+1 placed relative to object j
    let mut origins = vec![(0i64, 0i64)];
    for j in 0..n - 1 {
        let level = link_level(j);
        let (prev, next) = (&world.templates[templates[j]], &world.templates[templates[j + 1]]);
        let next_in_front = depths[j + 1] < depths[j];
        let (py, px) = origins[j];
        // chain layout: the new box may only touch its predecessor's box
        let clear_of_earlier = |dy: i64, dx: i64| {
            let b = BoundingBox {
                x0: px + dx,
                y0: py + dy,
                x1: px + dx + next.width as i64,
                y1: py + dy + next.height as i64,
            };
            origins[..j].iter().zip(&templates).all(|(&(y, x), &t)| {
                let t = &world.templates[t];
                !b.overlaps(&BoundingBox {
                    x0: x,
                    y0: y,
                    x1: x + t.width as i64,
                    y1: y + t.height as i64,
                })
            })
        };
        let mut found = None;
        for _ in 0..12 {
            let dy = rng.random_range(-3..=3i64);
            let allowed = |dx: i64| clear_of_earlier(dy, dx);
            if let Some(dx) = search_offset(prev, next, next_in_front, dy, level, n > 2, allowed, &mut rng) {
                found = Some((dy, dx));
                break;
            }
        }
        let (dy, dx) = found.ok_or_else(|| Error::UnreachableLevel {
            wanted: level.to_string(),
            achieved: 0.0,
        })?;
        origins.push((py + dy, px + dx));
    }

    let margin = world.config.margin as i64;
    let min_y = origins.iter().map(|o| o.0).min().unwrap_or(0);
    let min_x = origins.iter().map(|o| o.1).min().unwrap_or(0);
    let mut placements: Vec<Placement> = origins
        .iter()
        .zip(&templates)
        .zip(&depths)
        .map(|((&(y, x), &t), &depth)| {
            let tpl = &world.templates[t];
            let (y0, x0) = (y - min_y + margin, x - min_x + margin);
            Placement {
                template: t,
                bbox: BoundingBox {
                    x0,
                    y0,
                    x1: x0 + tpl.width as i64,
                    y1: y0 + tpl.height as i64,
                },
                depth,
            }
        })
        .collect();
    let mut height = placements.iter().map(|p| p.bbox.y1).max().unwrap_or(0) + margin;
    let mut width = placements.iter().map(|p| p.bbox.x1).max().unwrap_or(0) + margin;

    let mut unknown = Vec::new();
    if scenario == Scenario::TwoPlusUnknown {
        // an unseen occluder over a random object, in front of everything
        let target = &placements[rng.random_range(0..placements.len())];
        let tpl = &world.templates[target.template];
        let cells: Vec<usize> = (0..tpl.parts.len()).filter(|&i| tpl.parts[i].is_some()).collect();
        let cell = cells[rng.random_range(0..cells.len())];
        let (cy, cx) = (
            target.bbox.y0 + (cell / tpl.width) as i64,
            target.bbox.x0 + (cell % tpl.width) as i64,
        );
        let (uh, uw) = (rng.random_range(4..=6i64), rng.random_range(4..=6i64));
        let pool = &world.unknown_pool;
        let bbox = BoundingBox {
            x0: cx - uw / 2,
            y0: cy - uh / 2,
            x1: cx - uw / 2 + uw,
            y1: cy - uh / 2 + uh,
        };
        unknown.push(UnknownOccluder {
            bbox,
            components: [pool[rng.random_range(0..pool.len())], pool[rng.random_range(0..pool.len())]],
        });
        // keep the occluder on the lattice
        let shift_y = (margin - bbox.y0).max(0);
        let shift_x = (margin - bbox.x0).max(0);
        if shift_y > 0 || shift_x > 0 {
            for p in &mut placements {
                p.bbox = p.bbox.translate(shift_x, shift_y);
            }
            for u in &mut unknown {
                u.bbox = u.bbox.translate(shift_x, shift_y);
            }
            height += shift_y;
            width += shift_x;
        }
        height = height.max(unknown[0].bbox.y1 + margin);
        width = width.max(unknown[0].bbox.x1 + margin);
    }

    Ok(SceneSpec {
        scenario,
        level,
        height: height as usize,
        width: width as usize,
        placements,
        unknown,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChallengeConfig {
    pub scenarios: Vec<Scenario>,
    /// Scenes per (scenario, level) in the training split. Scenes with
    /// unknown occluders are never generated for training.
    pub train_per_level: usize,
    pub test_per_level: usize,
    pub seed: u64,
}

impl ChallengeConfig {
    /// Desk scale: ~300 training and 300 test scenes.
    pub fn desk(seed: u64) -> Self {
        Self {
            scenarios: Scenario::ALL.to_vec(),
            train_per_level: 38,
            test_per_level: 25,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedScene {
    pub id: String,
    pub split: Split,
    pub spec: SceneSpec,
    pub features: FeatureMap,
    pub truth: GroundTruth,
}

/// splitmix64 step, for deriving independent per-scene seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const MAX_ATTEMPTS: u64 = 32;

/// One scene of the given kind; retries placement with fresh seeds when a
/// layout cannot reach the requested level.
pub fn generate_scene(
    world: &ChallengeWorld,
    scenario: Scenario,
    level: OcclusionLevel,
    seed: u64,
) -> Result<(SceneSpec, FeatureMap, GroundTruth)> {
    let mut last = None;
    for attempt in 0..MAX_ATTEMPTS {
        let s = derive_seed(seed, attempt);
        match plan_scene(scenario, level, world, s) {
            Ok(spec) => {
                let (features, truth) = render_scene(&spec, world)?;
                if scene_meets_level(&spec, &truth) {
                    return Ok((spec, features, truth));
                }
                let achieved = truth.objects.iter().map(|o| o.occlusion).fold(0.0, f64::max);
                last = Some(Error::UnreachableLevel {
                    wanted: level.to_string(),
                    achieved,
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Two-object scenes need exactly one object at the target level (the other
/// unoccluded, or occluded only by the unknown occluder); four-object scenes
/// need at least one object at the target level and none beyond 90%.
fn scene_meets_level(spec: &SceneSpec, truth: &GroundTruth) -> bool {
    let objects = &truth.objects;
    match spec.scenario {
        Scenario::TwoObject => {
            if spec.level == OcclusionLevel::L0 {
                objects.iter().all(|o| o.level == Some(OcclusionLevel::L0))
            } else {
                objects.iter().filter(|o| o.level == Some(spec.level)).count() == 1
                    && objects.iter().any(|o| o.level == Some(OcclusionLevel::L0))
            }
        }
        Scenario::TwoPlusUnknown => objects.iter().any(|o| o.level == Some(spec.level) || spec.level == OcclusionLevel::L0) && objects.iter().all(|o| o.level.is_some()),
        Scenario::FourObject => {
            objects.iter().all(|o| o.level.is_some()) && objects.iter().any(|o| o.level == Some(spec.level))
        }
    }
}

/// Generates the full challenge; scene ids encode split, scenario, level and
/// index, and every scene draws from its own seed-derived stream.
pub fn generate_challenge(world: &ChallengeWorld, config: &ChallengeConfig) -> Result<Vec<GeneratedScene>> {
    let mut jobs = Vec::new();
    for (split, count) in [(Split::Train, config.train_per_level), (Split::Test, config.test_per_level)] {
        for &scenario in &config.scenarios {
            if split == Split::Train && scenario == Scenario::TwoPlusUnknown {
                continue;
            }
            for level in OcclusionLevel::ALL {
                for index in 0..count {
                    jobs.push((split, scenario, level, index));
                }
            }
        }
    }
    jobs.par_iter()
        .map(|&(split, scenario, level, index)| {
            let salt = ((split as u64) << 48) | ((scenario as u64) << 40) | ((level as u64) << 32) | index as u64;
            let seed = derive_seed(config.seed, salt);
            let (spec, features, truth) = generate_scene(world, scenario, level, seed)?;
            Ok(GeneratedScene {
                id: format!("{}-{}-{}-{:04}", split.name(), scenario.name(), level.name(), index),
                split,
                spec,
                features,
                truth,
            })
        })
        .collect()
}

/// Training view of generated scenes: boxes and classes, with objects marked
/// occluded at 1% or more.
pub fn training_set(world: &ChallengeWorld, scenes: &[GeneratedScene]) -> TrainingSet {
    TrainingSet {
        class_labels: world.class_labels.clone(),
        maps: scenes
            .iter()
            .map(|s| AnnotatedMap {
                features: s.features.clone(),
                objects: s
                    .truth
                    .objects
                    .iter()
                    .map(|o| AnnotatedObject {
                        class: o.class,
                        bbox: o.bbox,
                        occluded: o.level != Some(OcclusionLevel::L0),
                    })
                    .collect(),
            })
            .collect(),
    }
}
