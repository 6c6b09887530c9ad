//! Per-class compositional likelihoods, the occluder model and the
//! foreground / context / occluder likelihood maps derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{nearest_index, BinaryMask, BoundingBox, FeatureMap};
use crate::vmf::VmfDictionary;

/// Priors are clamped to `[PRIOR_EPS, 1 - PRIOR_EPS]` before taking logs.
pub const PRIOR_EPS: f64 = 1e-6;
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_AMODAL_THRESHOLD: f64 = 0.5;

fn check_simplex(row: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for x in row {
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidSimplex(format!("{what}: entry {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::InvalidSimplex(format!("{what}: sums to {sum}")));
    }
    Ok(())
}

/// One pose/viewpoint template of a class: per-position foreground and
/// context coefficient simplices plus the spatial foreground prior.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    height: usize,
    width: usize,
    k: usize,
    fg_prior: Vec<f32>,
    fg_coeffs: Vec<f32>,
    ctx_coeffs: Vec<f32>,
}

impl MixtureModel {
    pub fn new(
        height: usize,
        width: usize,
        k: usize,
        fg_prior: Vec<f32>,
        fg_coeffs: Vec<f32>,
        ctx_coeffs: Vec<f32>,
    ) -> Result<Self> {
        let n = height * width;
        if n == 0 || k == 0 {
            return Err(Error::DimensionMismatch("mixture grid must be nonempty".into()));
        }
        if fg_prior.len() != n || fg_coeffs.len() != n * k || ctx_coeffs.len() != n * k {
            return Err(Error::DimensionMismatch(format!(
                "mixture {height}x{width}xK{k}: prior {}, fg {}, ctx {}",
                fg_prior.len(),
                fg_coeffs.len(),
                ctx_coeffs.len()
            )));
        }
        if let Some(p) = fg_prior.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidParameter(format!("prior {p} outside [0,1]")));
        }
        for (i, (a, c)) in fg_coeffs.chunks_exact(k).zip(ctx_coeffs.chunks_exact(k)).enumerate() {
            check_simplex(a.iter().map(|&x| x as f64), &format!("fg coeffs at {i}"))?;
            check_simplex(c.iter().map(|&x| x as f64), &format!("ctx coeffs at {i}"))?;
        }
        Ok(Self {
            height,
            width,
            k,
            fg_prior,
            fg_coeffs,
            ctx_coeffs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fg_prior(&self) -> &[f32] {
        &self.fg_prior
    }

    pub fn fg_coeffs(&self) -> &[f32] {
        &self.fg_coeffs
    }

    pub fn ctx_coeffs(&self) -> &[f32] {
        &self.ctx_coeffs
    }

    pub fn prior_at(&self, pos: usize) -> f64 {
        self.fg_prior[pos] as f64
    }

    pub fn fg_row(&self, pos: usize) -> &[f32] {
        &self.fg_coeffs[pos * self.k..(pos + 1) * self.k]
    }

    pub fn ctx_row(&self, pos: usize) -> &[f32] {
        &self.ctx_coeffs[pos * self.k..(pos + 1) * self.k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    pub label: String,
    pub mixtures: Vec<MixtureModel>,
}

impl ClassModel {
    pub fn new(label: impl Into<String>, mixtures: Vec<MixtureModel>) -> Result<Self> {
        let Some(first) = mixtures.first() else {
            return Err(Error::InvalidParameter("class model needs M >= 1".into()));
        };
        if mixtures.iter().any(|m| m.k != first.k) {
            return Err(Error::DimensionMismatch("mixtures disagree on K".into()));
        }
        Ok(Self {
            label: label.into(),
            mixtures,
        })
    }
}

/// Position-independent occluder coefficients β.
#[derive(Debug, Clone, PartialEq)]
pub struct OccluderModel {
    coeffs: Vec<f64>,
}

impl OccluderModel {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        check_simplex(coeffs.iter().copied(), "occluder coeffs")?;
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }
}

/// `log Σ_k w_k exp(l_k)` over the positive weights, max-shifted.
pub fn log_mixture<W: Copy + Into<f64>>(log_pdfs: &[f64], weights: &[W]) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    for (&l, &w) in log_pdfs.iter().zip(weights) {
        let w: f64 = w.into();
        if w > 0.0 {
            max = max.max(l + w.ln());
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidSimplex("all-zero coefficient row".into()));
    }
    let sum: f64 = log_pdfs
        .iter()
        .zip(weights)
        .filter_map(|(&l, &w)| {
            let w: f64 = w.into();
            (w > 0.0).then(|| (l + w.ln() - max).exp())
        })
        .sum();
    Ok(max + sum.ln())
}

/// `log Σ_k α_{i,k} p(f | λ_k)` at mixture position `pos`.
pub fn fg_loglik(f: &[f32], mix: &MixtureModel, pos: usize, dict: &VmfDictionary) -> Result<f64> {
    if pos >= mix.height * mix.width {
        return Err(Error::InvalidParameter(format!("position {pos} outside mixture")));
    }
    check_k(mix.k, dict)?;
    log_mixture(&dict.log_pdfs(f)?, mix.fg_row(pos))
}

pub fn ctx_loglik(f: &[f32], mix: &MixtureModel, pos: usize, dict: &VmfDictionary) -> Result<f64> {
    if pos >= mix.height * mix.width {
        return Err(Error::InvalidParameter(format!("position {pos} outside mixture")));
    }
    check_k(mix.k, dict)?;
    log_mixture(&dict.log_pdfs(f)?, mix.ctx_row(pos))
}

/// `log Σ_k β_k p(f | λ_k)`.
pub fn occ_loglik(f: &[f32], beta: &OccluderModel, dict: &VmfDictionary) -> Result<f64> {
    check_k(beta.coeffs.len(), dict)?;
    log_mixture(&dict.log_pdfs(f)?, &beta.coeffs)
}

fn check_k(k: usize, dict: &VmfDictionary) -> Result<()> {
    if k != dict.len() {
        return Err(Error::DimensionMismatch(format!(
            "model has K={k}, dictionary K={}",
            dict.len()
        )));
    }
    Ok(())
}

/// Component log-densities for every lattice position of a feature map,
/// plus the occluder log-likelihood, computed once and shared by every
/// class hypothesis.
#[derive(Debug, Clone)]
pub struct LogPdfCache {
    height: usize,
    width: usize,
    k: usize,
    log_pdfs: Vec<f64>,
    occ: Vec<f64>,
}

impl LogPdfCache {
    pub fn new(map: &FeatureMap, dict: &VmfDictionary, beta: &OccluderModel) -> Result<Self> {
        if map.channels() != dict.dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature map has {} channels, dictionary {}",
                map.channels(),
                dict.dim()
            )));
        }
        check_k(beta.coeffs.len(), dict)?;
        let k = dict.len();
        let mut log_pdfs = Vec::with_capacity(map.len() * k);
        let mut occ = Vec::with_capacity(map.len());
        for f in map.vectors() {
            let lp = dict.log_pdfs_unchecked(f);
            occ.push(log_mixture(&lp, &beta.coeffs)?);
            log_pdfs.extend(lp);
        }
        Ok(Self {
            height: map.height(),
            width: map.width(),
            k,
            log_pdfs,
            occ,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.k;
        &self.log_pdfs[i..i + self.k]
    }

    pub fn occ_at(&self, row: usize, col: usize) -> f64 {
        self.occ[row * self.width + col]
    }
}

/// Per-pixel log-likelihoods of the three hypotheses over an object's box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodMaps {
    /// Lattice region the maps cover (the object box clipped to the lattice).
    pub region: BoundingBox,
    pub class: usize,
    pub mixture: usize,
    pub fg: Vec<f64>,
    pub ctx: Vec<f64>,
    pub occ: Vec<f64>,
    /// Raw occluder log-likelihood `log p(f|β)` without the spatial prior.
    pub occ_raw: Vec<f64>,
}

impl LikelihoodMaps {
    pub fn height(&self) -> usize {
        self.region.height()
    }

    pub fn width(&self) -> usize {
        self.region.width()
    }

    pub fn len(&self) -> usize {
        self.fg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fg.is_empty()
    }

    /// Index into the maps for a lattice position, if covered.
    pub fn index_of(&self, row: i64, col: i64) -> Option<usize> {
        self.region.contains(row, col).then(|| {
            (row - self.region.y0) as usize * self.width() + (col - self.region.x0) as usize
        })
    }
}

/// Evaluates the maps of mixture `m` of `model` for an object occupying
/// `bbox`. Each lattice cell inside the box is matched to the nearest
/// canonical mixture position.
pub fn maps_for_box(
    cache: &LogPdfCache,
    bbox: &BoundingBox,
    class: usize,
    model: &ClassModel,
    m: usize,
) -> Result<LikelihoodMaps> {
    let mix = model
        .mixtures
        .get(m)
        .ok_or_else(|| Error::InvalidParameter(format!("mixture {m} out of range")))?;
    if mix.k != cache.k {
        return Err(Error::DimensionMismatch("model K differs from cache K".into()));
    }
    let region = bbox.clip(cache.height, cache.width)?;
    let n = region.area();
    let (mut fg, mut ctx, mut occ, mut occ_raw) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for row in region.y0..region.y1 {
        let mr = nearest_index((row - bbox.y0) as usize, bbox.height(), mix.height);
        for col in region.x0..region.x1 {
            let mc = nearest_index((col - bbox.x0) as usize, bbox.width(), mix.width);
            let pos = mr * mix.width + mc;
            let prior = mix.prior_at(pos).clamp(PRIOR_EPS, 1.0 - PRIOR_EPS);
            let lp = cache.at(row as usize, col as usize);
            let o = cache.occ_at(row as usize, col as usize);
            fg.push(prior.ln() + log_mixture(lp, mix.fg_row(pos))?);
            ctx.push((1.0 - prior).ln() + log_mixture(lp, mix.ctx_row(pos))?);
            occ.push(prior.ln() + o);
            occ_raw.push(o);
        }
    }
    Ok(LikelihoodMaps {
        region,
        class,
        mixture: m,
        fg,
        ctx,
        occ,
        occ_raw,
    })
}

/// Maps over a whole crop (the crop is the object box).
pub fn likelihood_maps(
    crop: &FeatureMap,
    model: &ClassModel,
    m: usize,
    beta: &OccluderModel,
    dict: &VmfDictionary,
) -> Result<LikelihoodMaps> {
    let cache = LogPdfCache::new(crop, dict, beta)?;
    let bbox = BoundingBox::new(0, 0, crop.width() as i64, crop.height() as i64)?;
    maps_for_box(&cache, &bbox, 0, model, m)
}

/// How foreground and context combine into the object likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Composition {
    /// `max(fg, ctx)`, coherent with the per-pixel segmentation rule.
    #[default]
    Max,
    /// `log(e^fg + e^ctx)`, the additive mixture form.
    Additive,
}

impl Composition {
    fn object(self, fg: f64, ctx: f64) -> f64 {
        match self {
            Composition::Max => fg.max(ctx),
            Composition::Additive => {
                let m = fg.max(ctx);
                m + ((fg - m).exp() + (ctx - m).exp()).ln()
            }
        }
    }
}

/// Image log-likelihood from precomputed maps. Without `z` every pixel takes
/// the best of object and occluder; with `z`, `true` selects the object
/// branch and `false` the occluder branch.
pub fn score_maps(maps: &LikelihoodMaps, z: Option<&[bool]>, composition: Composition) -> Result<f64> {
    let n = maps.len();
    match z {
        None => Ok((0..n)
            .map(|i| composition.object(maps.fg[i], maps.ctx[i]).max(maps.occ[i]))
            .sum()),
        Some(z) => {
            if z.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "visibility has {} entries for {n} pixels",
                    z.len()
                )));
            }
            Ok((0..n)
                .map(|i| {
                    if z[i] {
                        composition.object(maps.fg[i], maps.ctx[i])
                    } else {
                        maps.occ[i]
                    }
                })
                .sum())
        }
    }
}

pub fn image_loglik(
    crop: &FeatureMap,
    model: &ClassModel,
    m: usize,
    beta: &OccluderModel,
    dict: &VmfDictionary,
    z: Option<&[bool]>,
) -> Result<f64> {
    score_maps(&likelihood_maps(crop, model, m, beta, dict)?, z, Composition::Max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: usize,
    pub mixture: usize,
    pub score: f64,
}

/// Score with some pixels forced to the occluder branch; the rest take the
/// best of object and occluder.
pub fn score_hidden(maps: &LikelihoodMaps, hidden: &[bool], composition: Composition) -> Result<f64> {
    if hidden.len() != maps.len() {
        return Err(Error::DimensionMismatch(format!(
            "hidden mask has {} entries for {} pixels",
            hidden.len(),
            maps.len()
        )));
    }
    Ok((0..maps.len())
        .map(|i| {
            if hidden[i] {
                maps.occ[i]
            } else {
                composition.object(maps.fg[i], maps.ctx[i]).max(maps.occ[i])
            }
        })
        .sum())
}

/// Argmax over (class, mixture); ties go to the lowest (class, mixture).
pub fn classify_box(
    cache: &LogPdfCache,
    bbox: &BoundingBox,
    models: &[ClassModel],
    z: Option<&[bool]>,
    composition: Composition,
) -> Result<(Classification, LikelihoodMaps)> {
    classify_with(cache, bbox, models, |maps| score_maps(maps, z, composition))
}

/// [`classify_box`] scoring with [`score_hidden`].
pub fn classify_box_hidden(
    cache: &LogPdfCache,
    bbox: &BoundingBox,
    models: &[ClassModel],
    hidden: &[bool],
    composition: Composition,
) -> Result<(Classification, LikelihoodMaps)> {
    classify_with(cache, bbox, models, |maps| score_hidden(maps, hidden, composition))
}

fn classify_with(
    cache: &LogPdfCache,
    bbox: &BoundingBox,
    models: &[ClassModel],
    score: impl Fn(&LikelihoodMaps) -> Result<f64>,
) -> Result<(Classification, LikelihoodMaps)> {
    let mut best: Option<(Classification, LikelihoodMaps)> = None;
    for (y, model) in models.iter().enumerate() {
        for m in 0..model.mixtures.len() {
            let maps = maps_for_box(cache, bbox, y, model, m)?;
            let score = score(&maps)?;
            if best.as_ref().is_none_or(|(b, _)| score > b.score) {
                best = Some((
                    Classification {
                        class: y,
                        mixture: m,
                        score,
                    },
                    maps,
                ));
            }
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("no class models".into()))
}

pub fn classify(
    crop: &FeatureMap,
    models: &[ClassModel],
    beta: &OccluderModel,
    dict: &VmfDictionary,
    z: Option<&[bool]>,
) -> Result<Classification> {
    let cache = LogPdfCache::new(crop, dict, beta)?;
    let bbox = BoundingBox::new(0, 0, crop.width() as i64, crop.height() as i64)?;
    classify_box(&cache, &bbox, models, z, Composition::Max).map(|(c, _)| c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelLabel {
    Foreground,
    Context,
    Occluder,
}

/// Per-pixel argmax; ties resolve foreground, then occluder, then context.
pub fn label_at(maps: &LikelihoodMaps, i: usize) -> PixelLabel {
    let (f, c, o) = (maps.fg[i], maps.ctx[i], maps.occ[i]);
    if f >= o && f >= c {
        PixelLabel::Foreground
    } else if o >= c {
        PixelLabel::Occluder
    } else {
        PixelLabel::Context
    }
}

pub fn segment_single(maps: &LikelihoodMaps) -> Vec<PixelLabel> {
    (0..maps.len()).map(|i| label_at(maps, i)).collect()
}

/// Thresholded spatial prior of a mixture, resampled to a `height × width` box.
pub fn amodal_mask(mix: &MixtureModel, height: usize, width: usize, threshold: f64) -> BinaryMask {
    BinaryMask::from_fn(height, width, |r, c| {
        let pos = nearest_index(r, height, mix.height) * mix.width + nearest_index(c, width, mix.width);
        mix.prior_at(pos) >= threshold
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vmf::{log_pdf, VmfComponent};

    fn dict2() -> VmfDictionary {
        VmfDictionary::new(vec![
            VmfComponent::new(vec![1.0, 0.0, 0.0], 5.0).unwrap(),
            VmfComponent::new(vec![0.0, 1.0, 0.0], 5.0).unwrap(),
        ])
        .unwrap()
    }

    fn flat_mixture(h: usize, w: usize, prior: f32, fg: [f32; 2], ctx: [f32; 2]) -> MixtureModel {
        let n = h * w;
        MixtureModel::new(
            h,
            w,
            2,
            vec![prior; n],
            fg.iter().copied().cycle().take(2 * n).collect(),
            ctx.iter().copied().cycle().take(2 * n).collect(),
        )
        .unwrap()
    }

    #[test]
    fn log_mixture_scalar_case() {
        let v = log_mixture(&[-1.0, -3.0], &[0.7f64, 0.3]).unwrap();
        let expect = (0.7 * (-1.0f64).exp() + 0.3 * (-3.0f64).exp()).ln();
        assert!((v - expect).abs() < 1e-12);
        assert!((v - (-1.300_293_820_642_035)).abs() < 1e-12);
        assert_eq!(log_mixture(&[-2.0, -2.0], &[0.5f64, 0.5]).unwrap(), -2.0);
        assert!(log_mixture(&[-2.0, -2.0], &[0.0f64, 0.0]).is_err());
    }

    #[test]
    fn fg_and_occ_reduce_to_component() {
        let d = dict2();
        let f = [0.6f32, 0.8, 0.0];
        let mix = flat_mixture(1, 1, 0.5, [1.0, 0.0], [0.5, 0.5]);
        let want = log_pdf(&f, &d.components()[0]).unwrap();
        assert!((fg_loglik(&f, &mix, 0, &d).unwrap() - want).abs() < 1e-12);
        let beta = OccluderModel::new(vec![0.0, 1.0]).unwrap();
        let want = log_pdf(&f, &d.components()[1]).unwrap();
        assert!((occ_loglik(&f, &beta, &d).unwrap() - want).abs() < 1e-12);
        assert!(fg_loglik(&f, &mix, 1, &d).is_err());
    }

    #[test]
    fn identical_components_mix_to_shared_value() {
        let c = VmfComponent::new(vec![0.0, 0.0, 1.0], 2.0).unwrap();
        let d = VmfDictionary::new(vec![c.clone(), c.clone()]).unwrap();
        let f = [0.0f32, 0.6, 0.8];
        let mix = flat_mixture(1, 1, 0.5, [0.5, 0.5], [0.5, 0.5]);
        let want = log_pdf(&f, &c).unwrap();
        assert!((fg_loglik(&f, &mix, 0, &d).unwrap() - want).abs() < 1e-12);
        let beta = OccluderModel::new(vec![0.5, 0.5]).unwrap();
        assert!((occ_loglik(&f, &beta, &d).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn symmetric_prior_equal_branches() {
        let d = dict2();
        let crop = FeatureMap::new(1, 2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let model = ClassModel::new("a", vec![flat_mixture(1, 2, 0.5, [0.3, 0.7], [0.3, 0.7])]).unwrap();
        let beta = OccluderModel::new(vec![0.5, 0.5]).unwrap();
        let maps = likelihood_maps(&crop, &model, 0, &beta, &d).unwrap();
        for i in 0..2 {
            assert!((maps.fg[i] - maps.ctx[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_tie_order() {
        let maps = LikelihoodMaps {
            region: BoundingBox::new(0, 0, 4, 1).unwrap(),
            class: 0,
            mixture: 0,
            fg: vec![0.0, -1.0, -1.0, -1.0],
            ctx: vec![0.0, -1.0, 0.0, -2.0],
            occ: vec![0.0, -1.0, -2.0, -1.0],
            occ_raw: vec![0.0; 4],
        };
        assert_eq!(
            segment_single(&maps),
            vec![
                PixelLabel::Foreground,
                PixelLabel::Foreground,
                PixelLabel::Context,
                PixelLabel::Foreground
            ]
        );
    }

    #[test]
    fn occluder_beats_context_on_tie() {
        let maps = LikelihoodMaps {
            region: BoundingBox::new(0, 0, 1, 1).unwrap(),
            class: 0,
            mixture: 0,
            fg: vec![-3.0],
            ctx: vec![-1.0],
            occ: vec![-1.0],
            occ_raw: vec![0.0],
        };
        assert_eq!(segment_single(&maps), vec![PixelLabel::Occluder]);
    }

    #[test]
    fn amodal_mask_extremes() {
        let full = flat_mixture(3, 3, 1.0, [1.0, 0.0], [0.0, 1.0]);
        assert_eq!(amodal_mask(&full, 3, 3, 0.5).count(), 9);
        let none = flat_mixture(3, 3, 0.0, [1.0, 0.0], [0.0, 1.0]);
        assert!(amodal_mask(&none, 5, 4, 0.5).is_empty());
    }

    #[test]
    fn tie_break_prefers_lower_class() {
        let d = dict2();
        let crop = FeatureMap::new(1, 1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let m = ClassModel::new("x", vec![flat_mixture(1, 1, 0.9, [0.9, 0.1], [0.1, 0.9])]).unwrap();
        let models = vec![m.clone(), m];
        let beta = OccluderModel::new(vec![0.5, 0.5]).unwrap();
        let c = classify(&crop, &models, &beta, &d, None).unwrap();
        assert_eq!((c.class, c.mixture), (0, 0));
    }

    #[test]
    fn invalid_simplex_rejected() {
        assert!(OccluderModel::new(vec![0.5, 0.6]).is_err());
        assert!(MixtureModel::new(1, 1, 2, vec![0.5], vec![0.5, 0.4], vec![0.5, 0.5]).is_err());
        assert!(MixtureModel::new(1, 1, 2, vec![1.5], vec![0.5, 0.5], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn z_shape_mismatch() {
        let d = dict2();
        let crop = FeatureMap::new(1, 2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let model = ClassModel::new("a", vec![flat_mixture(1, 2, 0.5, [0.5, 0.5], [0.5, 0.5])]).unwrap();
        let beta = OccluderModel::new(vec![0.5, 0.5]).unwrap();
        assert!(image_loglik(&crop, &model, 0, &beta, &d, Some(&[true])).is_err());
    }
}
