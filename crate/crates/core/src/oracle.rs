//! Brute-force references for the inference code.
//!
//! The likelihood math is written out again from the model definitions with
//! plain loops over raw parameter arrays. The only pipeline type the
//! references read is [`FeatureMap`]; results are returned as pipeline types
//! so they can be compared directly. The suites at the bottom run pipeline
//! and reference side by side on random instances.

use std::f64::consts::{LN_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::learning::TrainedModel;
use crate::model::{maps_for_box, ClassModel, LogPdfCache, MixtureModel, OccluderModel};
use crate::orm::{
    competition_ownership, count_votes, recover_order, segment_scene, OccMerge, OrmConfig, Owner, SceneObject,
    VisibilityAssignment,
};
use crate::synth::GeneratedScene;
use crate::tensor::{BinaryMask, BoundingBox, FeatureMap};
use crate::vmf::{log_normalizer, VmfComponent, VmfDictionary};

/// Pixel guard for the per-pixel enumeration.
pub const MAX_ORACLE_PIXELS: usize = 64;
/// Guard on the number of joint assignments enumerated.
pub const MAX_JOINT_ASSIGNMENTS: usize = 1 << 20;
/// Same clamp the model applies to spatial priors.
const PRIOR_CLAMP: f64 = 1e-6;
const QUADRATURE_INTERVALS: usize = 20_000;

/// `ln Γ(n/2)` by the recursion `Γ(x+1) = x Γ(x)` down to Γ(1) or Γ(1/2).
fn ln_gamma_half(n: usize) -> f64 {
    let mut x = n as f64 / 2.0;
    let mut acc = 0.0;
    while x > 1.0 {
        x -= 1.0;
        acc += x.ln();
    }
    if x == 0.5 {
        acc + 0.5 * PI.ln()
    } else {
        acc
    }
}

/// `log ∫_{S^{D-1}} exp(σ μᵀx) dx` by one-dimensional quadrature.
///
/// Writing `t = μᵀx`, the integral is `|S^{D-2}| ∫ e^{σt} (1-t²)^{(D-3)/2} dt`.
/// Odd D has a polynomial weight and uses Simpson in `t`; even D uses the
/// angle form `∫_0^π e^{σ cos θ} sin^{D-2} θ dθ`, whose periodic integrand
/// makes the trapezoid rule converge geometrically.
pub fn quadrature_log_normalizer(sigma: f64, dim: usize) -> f64 {
    assert!(dim >= 2);
    let d = dim as f64;
    let log_area = LN_2 + 0.5 * (d - 1.0) * PI.ln() - ln_gamma_half(dim - 1);
    let n = QUADRATURE_INTERVALS;
    // integrands scaled by e^{-σ} to stay finite
    let integral = if dim % 2 == 1 {
        let h = 2.0 / n as f64;
        let f = |t: f64| (sigma * (t - 1.0)).exp() * (1.0 - t * t).powi((dim as i32 - 3) / 2);
        let mut sum = f(-1.0) + f(1.0);
        for j in 1..n {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(-1.0 + j as f64 * h);
        }
        sum * h / 3.0
    } else {
        let h = PI / n as f64;
        let f = |th: f64| (sigma * (th.cos() - 1.0)).exp() * th.sin().powi(dim as i32 - 2);
        let mut sum = 0.5 * (f(0.0) + f(PI));
        for j in 1..n {
            sum += f(j as f64 * h);
        }
        sum * h
    };
    log_area + sigma + integral.ln()
}

/// Dictionary as plain arrays, with normalizers computed by quadrature.
#[derive(Debug, Clone)]
pub struct RawDictionary {
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    log_norms: Vec<f64>,
}

impl RawDictionary {
    pub fn new(means: Vec<Vec<f64>>, sigmas: Vec<f64>) -> Self {
        let log_norms = means
            .iter()
            .zip(&sigmas)
            .map(|(m, &s)| quadrature_log_normalizer(s, m.len()))
            .collect();
        Self {
            means,
            sigmas,
            log_norms,
        }
    }

    pub fn from_dictionary(dict: &VmfDictionary) -> Self {
        let comps = dict.components();
        Self::new(
            comps.iter().map(|c| c.mean.iter().map(|&x| x as f64).collect()).collect(),
            comps.iter().map(|c| c.concentration).collect(),
        )
    }

    /// `log p(f | λ_k)` for every component.
    pub fn log_pdfs(&self, f: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.means.len());
        for k in 0..self.means.len() {
            let mut dot = 0.0;
            for d in 0..f.len() {
                dot += self.means[k][d] * f[d];
            }
            out.push(self.sigmas[k] * dot - self.log_norms[k]);
        }
        out
    }
}

/// One mixture as plain arrays indexed by canonical position.
#[derive(Debug, Clone)]
pub struct RawMixture {
    pub height: usize,
    pub width: usize,
    pub prior: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub chi: Vec<Vec<f64>>,
}

impl RawMixture {
    pub fn from_mixture(mix: &MixtureModel) -> Self {
        let k = mix.k();
        let rows = |v: &[f32]| v.chunks(k).map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        Self {
            height: mix.height(),
            width: mix.width(),
            prior: mix.fg_prior().iter().map(|&p| p as f64).collect(),
            alpha: rows(mix.fg_coeffs()),
            chi: rows(mix.ctx_coeffs()),
        }
    }
}

/// Box `[x0, x1) × [y0, y1)`, possibly extending past the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: i64,
    pub x0: i64,
    pub y1: i64,
    pub x1: i64,
}

impl From<&BoundingBox> for Rect {
    fn from(b: &BoundingBox) -> Self {
        Rect {
            y0: b.y0,
            x0: b.x0,
            y1: b.y1,
            x1: b.x1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleObject {
    pub id: usize,
    pub rect: Rect,
    pub mixture: RawMixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    Foreground,
    Context,
    Occluder,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelValues {
    pub fg: f64,
    pub ctx: f64,
    pub occ: f64,
}

impl PixelValues {
    /// Argmax of the three hypotheses; ties favour foreground, then occluder.
    pub fn hypothesis(&self) -> Hypothesis {
        if self.fg >= self.ctx && self.fg >= self.occ {
            Hypothesis::Foreground
        } else if self.occ >= self.ctx {
            Hypothesis::Occluder
        } else {
            Hypothesis::Context
        }
    }
}

/// Cell of a length-`from` canonical grid whose centre is nearest to the
/// centre of cell `i` of a length-`to` box.
fn canonical_cell(i: usize, to: usize, from: usize) -> usize {
    let centre = (i as f64 + 0.5) / to as f64;
    ((centre * from as f64).floor() as usize).min(from - 1)
}

fn ln_weighted_sum(weights: &[f64], log_pdfs: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..weights.len() {
        s += weights[k] * log_pdfs[k].exp();
    }
    s.ln()
}

/// Foreground, context and occluder log-likelihoods of one feature at one
/// canonical position.
pub fn pixel_values(f: &[f64], dict: &RawDictionary, beta: &[f64], mix: &RawMixture, pos: usize) -> PixelValues {
    let lp = dict.log_pdfs(f);
    let prior = mix.prior[pos].clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
    PixelValues {
        fg: prior.ln() + ln_weighted_sum(&mix.alpha[pos], &lp),
        ctx: (1.0 - prior).ln() + ln_weighted_sum(&mix.chi[pos], &lp),
        occ: prior.ln() + ln_weighted_sum(beta, &lp),
    }
}

/// Values for every lattice cell the object covers, row-major over the map.
pub fn object_values(
    map: &FeatureMap,
    obj: &OracleObject,
    dict: &RawDictionary,
    beta: &[f64],
) -> Vec<Option<PixelValues>> {
    let (h, w) = (map.height(), map.width());
    let (bh, bw) = ((obj.rect.y1 - obj.rect.y0) as usize, (obj.rect.x1 - obj.rect.x0) as usize);
    let mut out = vec![None; h * w];
    for row in 0..h {
        for col in 0..w {
            let (r, c) = (row as i64, col as i64);
            if r < obj.rect.y0 || r >= obj.rect.y1 || c < obj.rect.x0 || c >= obj.rect.x1 {
                continue;
            }
            let mr = canonical_cell((r - obj.rect.y0) as usize, bh, obj.mixture.height);
            let mc = canonical_cell((c - obj.rect.x0) as usize, bw, obj.mixture.width);
            let f: Vec<f64> = map.get(row, col).iter().map(|&x| x as f64).collect();
            out[row * w + col] = Some(pixel_values(&f, dict, beta, &obj.mixture, mr * obj.mixture.width + mc));
        }
    }
    out
}

/// Per-pixel candidate table `[outlier, object 0, object 1, …]`.
///
/// An object is a candidate where it labels the pixel foreground, scored by
/// its foreground value. The outlier is scored by the largest occluder value
/// of the candidates; with no candidates it stands alone if some covering
/// object labels the pixel occluder. Non-candidates carry `-inf`.
pub fn competition_table(values: &[Vec<Option<PixelValues>>]) -> Vec<Vec<f64>> {
    let pixels = values.first().map_or(0, Vec::len);
    let mut table = Vec::with_capacity(pixels);
    for i in 0..pixels {
        let mut row = vec![f64::NEG_INFINITY; values.len() + 1];
        let mut any_occluder = false;
        for (n, v) in values.iter().enumerate() {
            let Some(v) = v[i] else { continue };
            match v.hypothesis() {
                Hypothesis::Foreground => {
                    row[n + 1] = v.fg;
                    row[0] = row[0].max(v.occ);
                }
                Hypothesis::Occluder => any_occluder = true,
                Hypothesis::Context => {}
            }
        }
        if row[0] == f64::NEG_INFINITY && any_occluder {
            row[0] = 0.0;
        }
        table.push(row);
    }
    table
}

/// Index of the best entry, scanning in order and keeping the first maximum.
/// `None` when every entry is `-inf`.
fn first_argmax(row: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (c, &v) in row.iter().enumerate() {
        if v == f64::NEG_INFINITY {
            continue;
        }
        match best {
            Some(b) if v <= row[b] => {}
            _ => best = Some(c),
        }
    }
    best
}

/// MAP visibility under the factorized multi-object likelihood, by trying
/// all N+1 owners of every pixel. Entry 0 of each row is the outlier and
/// entry `n + 1` belongs to `ids[n]`. Ties go to the outlier, then to the
/// lower id.
pub fn bruteforce_map_eq11(
    height: usize,
    width: usize,
    ids: &[usize],
    table: &[Vec<f64>],
) -> Result<VisibilityAssignment> {
    if height * width > MAX_ORACLE_PIXELS {
        return Err(Error::InvalidParameter(format!(
            "oracle grid {height}x{width} exceeds {MAX_ORACLE_PIXELS} pixels"
        )));
    }
    if table.len() != height * width || table.iter().any(|r| r.len() != ids.len() + 1) {
        return Err(Error::DimensionMismatch("likelihood table shape".into()));
    }
    if table.iter().flatten().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidParameter("likelihood table must be finite or -inf".into()));
    }
    // enumeration order: outlier, then objects by ascending id
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&n| ids[n]);
    let mut out = VisibilityAssignment::new(height, width);
    for (i, row) in table.iter().enumerate() {
        let mut best = (Owner::None, f64::NEG_INFINITY);
        let choices = std::iter::once((Owner::Outlier, row[0]))
            .chain(order.iter().map(|&n| (Owner::Object(ids[n]), row[n + 1])));
        for (owner, v) in choices {
            if v > best.1 {
                best = (owner, v);
            }
        }
        out.set(i / width, i % width, best.0);
    }
    Ok(out)
}

/// Per-pixel argmax indices of a finite table, first maximum on ties.
pub fn per_pixel_map(table: &[Vec<f64>]) -> Vec<usize> {
    table.iter().map(|r| first_argmax(r).unwrap_or(0)).collect()
}

/// Joint MAP over all assignments, by explicit enumeration. The first
/// optimum in lexicographic order is returned, which matches the per-pixel
/// tie rule.
pub fn joint_map(table: &[Vec<f64>]) -> Result<Vec<usize>> {
    let mut total: usize = 1;
    for r in table {
        total = total
            .checked_mul(r.len())
            .filter(|&t| t <= MAX_JOINT_ASSIGNMENTS)
            .ok_or_else(|| Error::InvalidParameter("joint enumeration too large".into()))?;
    }
    let mut choice = vec![0usize; table.len()];
    let mut best = (choice.clone(), f64::NEG_INFINITY);
    for _ in 0..total {
        let score: f64 = choice.iter().zip(table).map(|(&c, r)| r[c]).sum();
        if score > best.1 {
            best = (choice.clone(), score);
        }
        // mixed-radix increment, last pixel fastest
        for p in (0..choice.len()).rev() {
            choice[p] += 1;
            if choice[p] < table[p].len() {
                break;
            }
            choice[p] = 0;
        }
    }
    Ok(best.0)
}

/// Counts conflict pixels owned by `a` and by `b` and applies the majority
/// rule: `+1` only when `a` has strictly more.
pub fn vote_oracle(a: usize, b: usize, conflict: &[bool], owners: &[Owner]) -> (usize, usize, i8) {
    let mut ca = 0;
    let mut cb = 0;
    for i in 0..conflict.len() {
        if !conflict[i] {
            continue;
        }
        if owners[i] == Owner::Object(a) {
            ca += 1;
        }
        if owners[i] == Owner::Object(b) {
            cb += 1;
        }
    }
    let r = if ca > cb { 1 } else { -1 };
    (ca, cb, r)
}

/// Summed log-likelihood of both objects under each of the two orders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderLikelihoods {
    pub a_front: f64,
    pub b_front: f64,
}

impl OrderLikelihoods {
    pub const TIE_TOLERANCE: f64 = 1e-9;

    /// `+1` if `a` in front is more likely, `-1` if `b` is, `0` on a tie.
    pub fn best(&self) -> i8 {
        let d = self.a_front - self.b_front;
        if d.abs() <= Self::TIE_TOLERANCE * (1.0 + self.a_front.abs().max(self.b_front.abs())) {
            0
        } else if d > 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Scores both orders of a pair: competition ownership, reassignment of the
/// non-outlier conflict pixels to the assumed front object, then each object
/// scored with pixels owned by the other forced to the occluder branch.
pub fn bruteforce_best_order(
    map: &FeatureMap,
    a: &OracleObject,
    b: &OracleObject,
    dict: &RawDictionary,
    beta: &[f64],
) -> OrderLikelihoods {
    let values = [object_values(map, a, dict, beta), object_values(map, b, dict, beta)];
    let table = competition_table(&values);
    let (lo, hi) = if a.id <= b.id { (0, 1) } else { (1, 0) };
    // outlier, then lower id, then higher id
    let owners: Vec<Owner> = table
        .iter()
        .map(|r| {
            let mut best = (Owner::Outlier, r[0]);
            for n in [lo, hi] {
                if r[n + 1] > best.1 {
                    best = (Owner::Object(n), r[n + 1]);
                }
            }
            if best.1 == f64::NEG_INFINITY {
                Owner::None
            } else {
                best.0
            }
        })
        .collect();
    let conflict: Vec<bool> = (0..table.len())
        .map(|i| {
            values[0][i].is_some_and(|v| v.hypothesis() == Hypothesis::Foreground)
                && values[1][i].is_some_and(|v| v.hypothesis() == Hypothesis::Foreground)
        })
        .collect();

    // owners here index the pair (0 = a, 1 = b), not object ids
    let total = |front: usize| -> f64 {
        let mut sum = 0.0;
        for n in 0..2 {
            for i in 0..table.len() {
                let Some(v) = values[n][i] else { continue };
                let mut owner = owners[i];
                if conflict[i] && owner != Owner::Outlier {
                    owner = Owner::Object(front);
                }
                sum += if owner == Owner::Object(1 - n) {
                    v.occ
                } else {
                    v.fg.max(v.ctx).max(v.occ)
                };
            }
        }
        sum
    };
    OrderLikelihoods {
        a_front: total(0),
        b_front: total(1),
    }
}

/// Outcome of one equivalence suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub mismatches: usize,
    pub detail: String,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} cases, {} mismatches{}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.mismatches,
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" ({})", self.detail)
            }
        )
    }
}

/// Random small scene with one single-mixture class per object.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub map: FeatureMap,
    pub dict: VmfDictionary,
    pub beta: OccluderModel,
    pub models: Vec<ClassModel>,
    pub boxes: Vec<BoundingBox>,
}

const RANDOM_DIM: usize = 4;

fn unit_f32<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / n) as f32).collect()
}

fn simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { -rng.random::<f64>().max(1e-12).ln() })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..k)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Draws a scene of at most `max_side × max_side` cells and `max_objects`
/// objects. Boxes may hang over the lattice edge.
pub fn random_instance<R: Rng>(rng: &mut R, max_side: usize, max_objects: usize) -> Result<RandomInstance> {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let k = rng.random_range(2..=5);
    let comps = (0..k)
        .map(|_| VmfComponent::new(unit_f32(rng, RANDOM_DIM), rng.random_range(1.0..12.0)))
        .collect::<Result<Vec<_>>>()?;
    let dict = VmfDictionary::new(comps)?;
    let beta = OccluderModel::new(simplex(rng, k))?;
    let data: Vec<f32> = (0..h * w).flat_map(|_| unit_f32(rng, RANDOM_DIM)).collect();
    let map = FeatureMap::new(h, w, RANDOM_DIM, data)?;
    let n = rng.random_range(1..=max_objects);
    let mut models = Vec::with_capacity(n);
    let mut boxes = Vec::with_capacity(n);
    for y in 0..n {
        let (mh, mw) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let cells = mh * mw;
        let prior: Vec<f32> = (0..cells)
            .map(|_| match rng.random_range(0..10) {
                0 => 0.0,
                1 => 1.0,
                _ => rng.random::<f32>().sqrt(),
            })
            .collect();
        let mut rows = |_| simplex(rng, k).into_iter().map(|x| x as f32).collect::<Vec<f32>>();
        let alpha: Vec<f32> = (0..cells).flat_map(&mut rows).collect();
        let chi: Vec<f32> = (0..cells).flat_map(&mut rows).collect();
        models.push(ClassModel::new(
            format!("c{y}"),
            vec![MixtureModel::new(mh, mw, k, prior, alpha, chi)?],
        )?);
        let y0 = rng.random_range(-1..h as i64);
        let x0 = rng.random_range(-1..w as i64);
        let y1 = rng.random_range(y0.max(0) + 1..=h as i64 + 1);
        let x1 = rng.random_range(x0.max(0) + 1..=w as i64 + 1);
        boxes.push(BoundingBox::new(x0, y0, x1, y1)?);
    }
    Ok(RandomInstance {
        map,
        dict,
        beta,
        models,
        boxes,
    })
}

impl RandomInstance {
    /// Pipeline objects: object `n` uses class `n`, mixture 0.
    pub fn scene_objects(&self) -> Result<Vec<SceneObject>> {
        let cache = LogPdfCache::new(&self.map, &self.dict, &self.beta)?;
        self.boxes
            .iter()
            .enumerate()
            .map(|(n, b)| {
                Ok(SceneObject {
                    id: n,
                    bbox: *b,
                    maps: maps_for_box(&cache, b, n, &self.models[n], 0)?,
                    label: n,
                    mixture: 0,
                    score: 0.0,
                })
            })
            .collect()
    }

    pub fn oracle_objects(&self) -> Vec<OracleObject> {
        self.boxes
            .iter()
            .enumerate()
            .map(|(n, b)| OracleObject {
                id: n,
                rect: b.into(),
                mixture: RawMixture::from_mixture(&self.models[n].mixtures[0]),
            })
            .collect()
    }

    pub fn oracle_values(&self) -> Vec<Vec<Option<PixelValues>>> {
        let dict = RawDictionary::from_dictionary(&self.dict);
        self.oracle_objects()
            .iter()
            .map(|o| object_values(&self.map, o, &dict, self.beta.coeffs()))
            .collect()
    }
}

/// Pipeline competition ownership against the enumerated MAP.
pub fn check_competition(scenes: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut contested = 0;
    for _ in 0..scenes {
        let inst = random_instance(&mut rng, 8, 4)?;
        let (h, w) = (inst.map.height(), inst.map.width());
        let objects = inst.scene_objects()?;
        let pipeline = competition_ownership(&objects, h, w, OccMerge::Max);
        let table = competition_table(&inst.oracle_values());
        contested += table.iter().filter(|r| r[1..].iter().filter(|v| v.is_finite()).count() > 1).count();
        let ids: Vec<usize> = (0..objects.len()).collect();
        let oracle = bruteforce_map_eq11(h, w, &ids, &table)?;
        if oracle != pipeline {
            mismatches += 1;
        }
    }
    Ok(SuiteOutcome {
        name: "pixel competition".into(),
        cases: scenes,
        mismatches,
        detail: format!("{contested} contested pixels"),
    })
}

/// Pipeline likelihood maps against the per-pixel reimplementation.
pub fn check_maps(scenes: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for _ in 0..scenes {
        let inst = random_instance(&mut rng, 6, 3)?;
        let w = inst.map.width();
        let objects = inst.scene_objects()?;
        let values = inst.oracle_values();
        let mut bad = false;
        for (o, vals) in objects.iter().zip(&values) {
            let r = o.maps.region;
            for row in r.y0..r.y1 {
                for col in r.x0..r.x1 {
                    let i = o.maps.index_of(row, col).expect("inside region");
                    let v = vals[row as usize * w + col as usize].expect("oracle covers region");
                    for (p, q) in [(o.maps.fg[i], v.fg), (o.maps.ctx[i], v.ctx), (o.maps.occ[i], v.occ)] {
                        let d = (p - q).abs() / (1.0 + q.abs());
                        worst = worst.max(d);
                        bad |= d > 1e-9;
                    }
                }
            }
        }
        mismatches += bad as usize;
    }
    Ok(SuiteOutcome {
        name: "likelihood maps".into(),
        cases: scenes,
        mismatches,
        detail: format!("max relative deviation {worst:.2e}"),
    })
}

/// `recover_order` on pipeline-counted votes against explicit counting, on
/// random conflict sets. A quarter of the cases are forced ties.
pub fn check_votes(cases: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut ties = 0;
    for case in 0..cases {
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (a, b) = (rng.random_range(0..4usize), rng.random_range(4..8usize));
        let (a, b) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        let mut conflict = vec![false; h * w];
        let mut owners = vec![Owner::None; h * w];
        for i in 0..h * w {
            conflict[i] = rng.random_bool(0.6);
            owners[i] = match rng.random_range(0..5) {
                0 => Owner::Outlier,
                1 => Owner::None,
                2 => Owner::Object(rng.random_range(0..8)),
                3 => Owner::Object(a),
                _ => Owner::Object(b),
            };
        }
        if case % 4 == 0 {
            // balance the counts to exercise the tie branch
            let cells: Vec<usize> = (0..h * w).filter(|&i| conflict[i]).collect();
            for (j, &i) in cells.iter().enumerate() {
                owners[i] = if j % 2 == 0 { Owner::Object(a) } else { Owner::Object(b) };
            }
            if cells.len() % 2 == 1 {
                owners[*cells.last().unwrap()] = Owner::Outlier;
            }
        }
        let (ca, cb, r) = vote_oracle(a, b, &conflict, &owners);
        ties += (ca == cb) as usize;
        let mask = BinaryMask::from_bits(h, w, conflict)?;
        let mut assignment = VisibilityAssignment::new(h, w);
        for (i, &o) in owners.iter().enumerate() {
            assignment.set(i / w, i % w, o);
        }
        let (va, vb) = count_votes(a, b, &mask, &assignment);
        if (va, vb) != (ca, cb) || recover_order(va, vb) != r {
            mismatches += 1;
        }
    }
    Ok(SuiteOutcome {
        name: "order recovery".into(),
        cases,
        mismatches,
        detail: format!("{ties} ties"),
    })
}

/// Joint enumeration against per-pixel maximization on 8-pixel, two-object
/// tables: every one of the 3^8 joint assignments is scored.
pub fn check_factorization(cases: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..cases {
        let table: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| -rng.random_range(0.0..10.0f64)).collect())
            .collect();
        if joint_map(&table)? != per_pixel_map(&table) {
            mismatches += 1;
        }
    }
    Ok(SuiteOutcome {
        name: "factorization".into(),
        cases,
        mismatches,
        detail: String::new(),
    })
}

/// Normalizer against the D=3 closed form, quadrature for other dimensions,
/// and Monte-Carlo unit mass.
pub fn check_normalizer(seed: u64) -> Result<SuiteOutcome> {
    let mut cases = 0;
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    let sigmas: Vec<f64> = (0..=60).map(|i| 1e-6 * (50.0f64 / 1e-6).powf(i as f64 / 60.0)).collect();
    for &s in &sigmas {
        let closed = 4.0 * PI * s.sinh() / s;
        let rel = (log_normalizer(s, 3).exp() - closed).abs() / closed;
        worst = worst.max(rel);
        cases += 1;
        mismatches += (rel > 1e-9) as usize;
    }
    for dim in [2, 4, 5, 8, 16] {
        for &s in &sigmas {
            let rel = (log_normalizer(s, dim) - quadrature_log_normalizer(s, dim)).exp_m1().abs();
            worst = worst.max(rel);
            cases += 1;
            mismatches += (rel > 1e-9) as usize;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mass_detail = Vec::new();
    for dim in [3, 8, 16] {
        let mass = monte_carlo_mass(dim, 3.0, 100_000, &mut rng);
        cases += 1;
        mismatches += ((mass - 1.0).abs() > 0.02) as usize;
        mass_detail.push(format!("D={dim} mass {mass:.4}"));
    }
    Ok(SuiteOutcome {
        name: "vMF normalizer".into(),
        cases,
        mismatches,
        detail: format!("max relative error {worst:.2e}; {}", mass_detail.join(", ")),
    })
}

/// Estimates `∫ p(x|μ,σ) dx` over the sphere by uniform sampling, using the
/// pipeline normalizer.
pub fn monte_carlo_mass<R: Rng>(dim: usize, sigma: f64, samples: usize, rng: &mut R) -> f64 {
    let d = dim as f64;
    let log_area = LN_2 + 0.5 * d * PI.ln() - ln_gamma_half(dim);
    let log_norm = log_normalizer(sigma, dim);
    let mut sum = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        // mean direction e_0
        sum += (sigma * x[0] / n - log_norm).exp();
    }
    sum / samples as f64 * log_area.exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Tiny,
    Small,
}

impl std::str::FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Scale::Tiny),
            "small" => Ok(Scale::Small),
            other => Err(Error::InvalidParameter(format!("unknown scale `{other}`"))),
        }
    }
}

/// Every equivalence suite at the given scale.
pub fn run_all(scale: Scale, seed: u64) -> Result<Vec<SuiteOutcome>> {
    let n = match scale {
        Scale::Tiny => 100,
        Scale::Small => 1000,
    };
    Ok(vec![
        check_normalizer(seed)?,
        check_maps(n, seed.wrapping_add(1))?,
        check_competition(n, seed.wrapping_add(2))?,
        check_votes(n, seed.wrapping_add(3))?,
        check_factorization(n.min(200), seed.wrapping_add(4))?,
    ])
}

/// Agreement of the vote rule, the likelihood rule and the planted order
/// over pairs the pipeline links with an edge.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AgreementReport {
    pub pairs: usize,
    pub likelihood_ties: usize,
    pub vote_matches_likelihood: usize,
    /// Pairs that also have a planted edge.
    pub planted_pairs: usize,
    pub vote_matches_planted: usize,
    pub likelihood_matches_planted: usize,
}

pub fn order_agreement(scenes: &[GeneratedScene], model: &TrainedModel, config: &OrmConfig) -> Result<AgreementReport> {
    let dict = RawDictionary::from_dictionary(&model.dictionary);
    let beta = model.occluder.coeffs();
    let mut report = AgreementReport::default();
    for scene in scenes {
        let cache = LogPdfCache::new(&scene.features, &model.dictionary, &model.occluder)?;
        let boxes: Vec<_> = scene.truth.objects.iter().map(|o| o.bbox).collect();
        let result = segment_scene(&cache, &boxes, &model.classes, config)?;
        let raw: Vec<OracleObject> = result
            .objects
            .iter()
            .map(|o| OracleObject {
                id: o.id,
                rect: (&o.bbox).into(),
                mixture: RawMixture::from_mixture(&model.classes[o.class].mixtures[o.mixture]),
            })
            .collect();
        for e in &result.graph.edges {
            let lik = bruteforce_best_order(&scene.features, &raw[e.front], &raw[e.back], &dict, beta);
            report.pairs += 1;
            match lik.best() {
                0 => report.likelihood_ties += 1,
                1 => report.vote_matches_likelihood += 1,
                _ => {}
            }
            if let Some(front) = scene.truth.order.front_of(e.front, e.back) {
                report.planted_pairs += 1;
                report.vote_matches_planted += (front == e.front) as usize;
                let lik_front = match lik.best() {
                    1 => Some(e.front),
                    -1 => Some(e.back),
                    _ => None,
                };
                report.likelihood_matches_planted += (lik_front == Some(front)) as usize;
            }
        }
    }
    Ok(report)
}
