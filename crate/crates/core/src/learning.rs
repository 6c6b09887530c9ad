//! Parameter estimation from box-annotated feature maps: dictionary,
//! mixture assignment, foreground prior, α/χ coefficients and occluder β.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassModel, MixtureModel, OccluderModel};
use crate::tensor::{BoundingBox, FeatureMap};
use crate::vmf::{fit_dictionary, FitConfig, VmfDictionary, DEFAULT_SHARED_SIGMA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub class: usize,
    pub bbox: BoundingBox,
    /// Only unoccluded objects are used as training crops.
    pub occluded: bool,
}

#[derive(Debug, Clone)]
pub struct AnnotatedMap {
    pub features: FeatureMap,
    pub objects: Vec<AnnotatedObject>,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub class_labels: Vec<String>,
    pub maps: Vec<AnnotatedMap>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub m: usize,
    pub sigma: f64,
    pub seed: u64,
    pub max_iters: usize,
    /// Width of the band around a box whose cells serve as context.
    pub context_ring: usize,
    /// Features subsampled for the dictionary fit.
    pub max_dictionary_samples: usize,
    /// Fraction by which a box is shrunk before taking context cells from
    /// outside it.
    pub context_shrink: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 64,
            m: 8,
            sigma: DEFAULT_SHARED_SIGMA,
            seed: 0,
            max_iters: 50,
            context_ring: 3,
            max_dictionary_samples: 40_000,
            context_shrink: 0.1,
        }
    }
}

/// A training crop: features inside the box, plus context features from
/// around it.
#[derive(Debug, Clone)]
pub struct Crop {
    pub class: usize,
    /// (map index, object index) in the training set.
    pub source: (usize, usize),
    pub features: FeatureMap,
    pub context: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub dictionary: VmfDictionary,
    pub classes: Vec<ClassModel>,
    pub occluder: OccluderModel,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: TrainedModel,
    /// Per class: (crop source, mixture) for every training crop.
    pub assignments: Vec<Vec<((usize, usize), usize)>>,
}

/// Average responsibility rows; summation order is fixed.
fn responsibility_rows(features: &[&[f32]], dict: &VmfDictionary) -> Result<Vec<Vec<f64>>> {
    features.par_iter().map(|f| dict.responsibilities(f)).collect()
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-crop, per-position foreground votes in {0, ½, 1}: a cell votes
/// foreground when its responsibility mass on the pooled inside-box
/// distribution exceeds that on the pooled context distribution.
pub fn foreground_votes(crops: &[FeatureMap], context: &[&[f32]], dict: &VmfDictionary) -> Result<Vec<Vec<f64>>> {
    if crops.is_empty() {
        return Err(Error::EmptyDataset("no crops for foreground prior".into()));
    }
    let (h, w) = (crops[0].height(), crops[0].width());
    if crops.iter().any(|c| c.height() != h || c.width() != w) {
        return Err(Error::DimensionMismatch("crops must share the canonical shape".into()));
    }
    let k = dict.len();
    let rows: Vec<Vec<Vec<f64>>> = crops
        .iter()
        .map(|c| responsibility_rows(&c.vectors().collect::<Vec<_>>(), dict))
        .collect::<Result<_>>()?;
    let mut inside = vec![0.0; k];
    for r in rows.iter().flatten() {
        inside.iter_mut().zip(r).for_each(|(s, x)| *s += x);
    }
    normalize(&mut inside);
    let mut outside = vec![0.0; k];
    for r in responsibility_rows(context, dict)? {
        outside.iter_mut().zip(&r).for_each(|(s, x)| *s += x);
    }
    normalize(&mut outside);
    Ok(rows
        .iter()
        .map(|crop| {
            crop.iter()
                .map(|r| {
                    let (f, c) = (dot(r, &inside), dot(r, &outside));
                    if f > c {
                        1.0
                    } else if f == c {
                        0.5
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// Foreground prior per canonical position: the fraction of crops whose
/// cell there votes foreground.
pub fn estimate_fg_prior(crops: &[FeatureMap], context: &[&[f32]], dict: &VmfDictionary) -> Result<Vec<f64>> {
    let votes = foreground_votes(crops, context, dict)?;
    Ok(mean_rows(&votes))
}

fn mean_rows(votes: &[Vec<f64>]) -> Vec<f64> {
    let n = votes[0].len();
    (0..n)
        .map(|i| votes.iter().map(|v| v[i]).sum::<f64>() / votes.len() as f64)
        .collect()
}

/// Per-position simplex: normalized weighted average of responsibilities.
/// `weights[crop][pos]` selects the contributing cells; a position with no
/// weight falls back to the unweighted average. `smoothing` adds that many
/// uniform pseudo-observations.
pub fn estimate_coeffs(
    crops: &[FeatureMap],
    dict: &VmfDictionary,
    weights: Option<&[Vec<f64>]>,
    smoothing: f64,
) -> Result<Vec<Vec<f64>>> {
    if crops.is_empty() {
        return Err(Error::EmptyDataset("no crops for coefficients".into()));
    }
    let n = crops[0].len();
    if crops.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch("crops must share the canonical shape".into()));
    }
    let k = dict.len();
    let rows: Vec<Vec<Vec<f64>>> = crops
        .iter()
        .map(|c| responsibility_rows(&c.vectors().collect::<Vec<_>>(), dict))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n);
    for pos in 0..n {
        let mut acc = vec![0.0; k];
        let mut total = 0.0;
        for (ci, crop) in rows.iter().enumerate() {
            let wgt = weights.map_or(1.0, |w| w[ci][pos]);
            if wgt > 0.0 {
                acc.iter_mut().zip(&crop[pos]).for_each(|(s, x)| *s += wgt * x);
                total += wgt;
            }
        }
        if total == 0.0 {
            for crop in &rows {
                acc.iter_mut().zip(&crop[pos]).for_each(|(s, x)| *s += x);
            }
            total = rows.len() as f64;
        }
        let denom = total + smoothing;
        out.push(acc.iter().map(|a| (a + smoothing / k as f64) / denom).collect());
    }
    Ok(out)
}

/// Occluder mixture: the average responsibility over all background features.
pub fn learn_occluder(backgrounds: &[&[f32]], dict: &VmfDictionary) -> Result<OccluderModel> {
    if backgrounds.is_empty() {
        return Err(Error::EmptyDataset("no background features".into()));
    }
    let mut beta = vec![0.0; dict.len()];
    for r in responsibility_rows(backgrounds, dict)? {
        beta.iter_mut().zip(&r).for_each(|(s, x)| *s += x);
    }
    normalize(&mut beta);
    OccluderModel::new(beta)
}

/// Partition crops into `m` groups by spherical k-means over their pooled
/// responsibility vectors.
pub fn assign_mixtures(crops: &[FeatureMap], dict: &VmfDictionary, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidParameter("M must be >= 1".into()));
    }
    if crops.len() < m {
        return Err(Error::TooFewSamples {
            samples: crops.len(),
            clusters: m,
        });
    }
    if m == 1 {
        return Ok(vec![0; crops.len()]);
    }
    let pooled: Vec<Vec<f32>> = crops
        .iter()
        .map(|c| {
            let rows = responsibility_rows(&c.vectors().collect::<Vec<_>>(), dict)?;
            let mut acc = vec![0.0f64; dict.len()];
            for r in &rows {
                acc.iter_mut().zip(r).for_each(|(s, x)| *s += x);
            }
            let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
            Ok(acc.iter().map(|x| (x / norm) as f32).collect())
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[f32]> = pooled.iter().map(|v| v.as_slice()).collect();
    let config = FitConfig {
        max_iters: 100,
        shared_sigma: Some(1.0),
    };
    Ok(fit_dictionary(&refs, m, seed, &config)?.assignments)
}

/// Median height and width of a group of crops.
fn median_shape(crops: &[&Crop]) -> (usize, usize) {
    let median = |mut v: Vec<usize>| {
        v.sort_unstable();
        v[(v.len() - 1) / 2]
    };
    (
        median(crops.iter().map(|c| c.features.height()).collect()),
        median(crops.iter().map(|c| c.features.width()).collect()),
    )
}

/// Unoccluded objects whose box overlaps no other box, with their context:
/// cells within `ring` of the box (outside the box shrunk by `shrink`) that
/// fall in no other object's box.
pub fn extract_crops(set: &TrainingSet, ring: usize, shrink: f64) -> Result<Vec<Crop>> {
    let mut crops = Vec::new();
    for (mi, map) in set.maps.iter().enumerate() {
        let f = &map.features;
        for (oi, obj) in map.objects.iter().enumerate() {
            let isolated = !map.objects.iter().enumerate().any(|(j, o)| j != oi && o.bbox.overlaps(&obj.bbox));
            if obj.occluded || !isolated {
                continue;
            }
            if obj.class >= set.class_labels.len() {
                return Err(Error::Malformed(format!("class index {} out of range", obj.class)));
            }
            let bbox = obj.bbox.clip(f.height(), f.width())?;
            let inner = bbox.shrink(shrink);
            let r = ring as i64;
            let outer = BoundingBox {
                x0: bbox.x0 - r,
                y0: bbox.y0 - r,
                x1: bbox.x1 + r,
                y1: bbox.y1 + r,
            }
            .clip(f.height(), f.width())?;
            let mut context = Vec::new();
            for row in outer.y0..outer.y1 {
                for col in outer.x0..outer.x1 {
                    let in_inner = inner.is_some_and(|b| b.contains(row, col));
                    let in_box = bbox.contains(row, col);
                    let in_other = map
                        .objects
                        .iter()
                        .enumerate()
                        .any(|(j, o)| j != oi && o.bbox.contains(row, col));
                    // the band inside the box holds object cells; context comes from outside it
                    if !in_inner && !in_box && !in_other {
                        context.push(f.get(row as usize, col as usize).to_vec());
                    }
                }
            }
            crops.push(Crop {
                class: obj.class,
                source: (mi, oi),
                features: f.crop(&bbox)?,
                context,
            });
        }
    }
    Ok(crops)
}

/// Background cells: those in no object box.
fn background_features(set: &TrainingSet) -> Vec<&[f32]> {
    let mut out = Vec::new();
    for map in &set.maps {
        let f = &map.features;
        for row in 0..f.height() {
            for col in 0..f.width() {
                if !map.objects.iter().any(|o| o.bbox.contains(row as i64, col as i64)) {
                    out.push(f.get(row, col));
                }
            }
        }
    }
    out
}

fn dictionary_sample(set: &TrainingSet, max: usize, seed: u64) -> Vec<&[f32]> {
    let all: Vec<&[f32]> = set.maps.iter().flat_map(|m| m.features.vectors()).collect();
    if all.len() <= max {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, all.len(), max).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| all[i]).collect()
}

fn to_f32(rows: &[Vec<f64>]) -> Vec<f32> {
    rows.iter().flatten().map(|&x| x as f32).collect()
}

/// Fits one class's mixtures from its crops.
fn train_class(
    label: &str,
    crops: &[&Crop],
    dict: &VmfDictionary,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ClassModel, Vec<usize>)> {
    let raw: Vec<FeatureMap> = crops.iter().map(|c| c.features.clone()).collect();
    let groups = assign_mixtures(&raw, dict, config.m, seed).map_err(Error::in_stage("assign_mixtures"))?;
    let mut mixtures = Vec::with_capacity(config.m);
    for g in 0..config.m {
        let members: Vec<&Crop> = crops.iter().zip(&groups).filter(|(_, &a)| a == g).map(|(c, _)| *c).collect();
        let (h, w) = median_shape(&members);
        let canonical: Vec<FeatureMap> = members.iter().map(|c| c.features.resample(h, w)).collect();
        let context: Vec<&[f32]> = members.iter().flat_map(|c| c.context.iter().map(|v| v.as_slice())).collect();
        let votes = foreground_votes(&canonical, &context, dict).map_err(Error::in_stage("estimate_fg_prior"))?;
        let prior = mean_rows(&votes);
        let alpha = estimate_coeffs(&canonical, dict, Some(&votes), 0.0).map_err(Error::in_stage("estimate_coeffs"))?;
        let background: Vec<Vec<f64>> = votes.iter().map(|v| v.iter().map(|x| 1.0 - x).collect()).collect();
        let chi = estimate_coeffs(&canonical, dict, Some(&background), 1.0).map_err(Error::in_stage("estimate_coeffs"))?;
        mixtures.push(MixtureModel::new(
            h,
            w,
            dict.len(),
            prior.iter().map(|&p| p as f32).collect(),
            to_f32(&alpha),
            to_f32(&chi),
        )?);
    }
    Ok((ClassModel::new(label, mixtures)?, groups))
}

/// Deterministic pipeline: dictionary, then per class mixtures, prior and
/// coefficients, then the occluder model.
pub fn train(set: &TrainingSet, config: &TrainConfig) -> Result<TrainReport> {
    if set.maps.is_empty() {
        return Err(Error::EmptyDataset("training set has no feature maps".into()));
    }
    let sample = dictionary_sample(set, config.max_dictionary_samples, config.seed);
    let fit_config = FitConfig {
        max_iters: config.max_iters,
        shared_sigma: Some(config.sigma),
    };
    let dict = fit_dictionary(&sample, config.k, config.seed, &fit_config)
        .map_err(Error::in_stage("fit_dictionary"))?
        .dictionary;

    let crops = extract_crops(set, config.context_ring, config.context_shrink)?;
    let mut classes = Vec::with_capacity(set.class_labels.len());
    let mut assignments = Vec::with_capacity(set.class_labels.len());
    for (y, label) in set.class_labels.iter().enumerate() {
        let members: Vec<&Crop> = crops.iter().filter(|c| c.class == y).collect();
        if members.is_empty() {
            return Err(Error::Training {
                stage: "estimate_fg_prior",
                source: Box::new(Error::EmptyDataset(format!("no clean crops of class `{label}`"))),
            });
        }
        let (model, groups) = train_class(label, &members, &dict, config, config.seed.wrapping_add(y as u64 + 1))?;
        classes.push(model);
        assignments.push(members.iter().map(|c| c.source).zip(groups).collect());
    }

    let occluder = learn_occluder(&background_features(set), &dict).map_err(Error::in_stage("learn_occluder"))?;
    Ok(TrainReport {
        model: TrainedModel {
            dictionary: dict,
            classes,
            occluder,
        },
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vmf::{sample_uniform_sphere, sample_vmf, VmfComponent};
    use rand::Rng;

    fn axis_dict(k: usize, sigma: f64) -> VmfDictionary {
        VmfDictionary::new(
            (0..k)
                .map(|i| {
                    let mut v = vec![0.0f32; k];
                    v[i] = 1.0;
                    VmfComponent::new(v, sigma).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    fn axis(k: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        v
    }

    #[test]
    fn one_hot_features_give_one_hot_alpha() {
        let dict = axis_dict(3, 50.0);
        let crop = FeatureMap::from_vectors(1, 2, &[axis(3, 0), axis(3, 2)]).unwrap();
        let alpha = estimate_coeffs(&[crop], &dict, None, 0.0).unwrap();
        assert!(alpha[0][0] > 0.999 && alpha[1][2] > 0.999);
    }

    #[test]
    fn single_crop_alpha_equals_responsibilities() {
        let dict = axis_dict(3, 2.0);
        let v = vec![0.6, 0.8, 0.0];
        let crop = FeatureMap::from_vectors(1, 1, std::slice::from_ref(&v)).unwrap();
        let alpha = estimate_coeffs(std::slice::from_ref(&crop), &dict, None, 0.0).unwrap();
        let r = dict.responsibilities(crop.get(0, 0)).unwrap();
        for (a, b) in alpha[0].iter().zip(&r) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_features_give_uniform_alpha() {
        let dict = axis_dict(4, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let crops: Vec<FeatureMap> = (0..10_000)
            .map(|_| FeatureMap::from_vectors(1, 1, &[sample_uniform_sphere(4, &mut rng)]).unwrap())
            .collect();
        let alpha = estimate_coeffs(&crops, &dict, None, 0.0).unwrap();
        for a in &alpha[0] {
            assert!((a - 0.25).abs() < 0.05, "{a}");
        }
    }

    #[test]
    fn occluder_examples() {
        let dict = axis_dict(2, 60.0);
        let one: Vec<Vec<f32>> = (0..5).map(|_| vec![1.0, 0.0]).collect();
        let refs: Vec<&[f32]> = one.iter().map(|v| v.as_slice()).collect();
        let beta = learn_occluder(&refs, &dict).unwrap();
        assert!(beta.coeffs()[0] > 0.999);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let planted: Vec<Vec<f32>> = (0..5000)
            .map(|_| {
                let i = usize::from(rng.random::<f64>() >= 0.7);
                sample_vmf(&axis(2, i), 60.0, &mut rng).iter().map(|&x| x as f32).collect()
            })
            .collect();
        let refs: Vec<&[f32]> = planted.iter().map(|v| v.as_slice()).collect();
        let beta = learn_occluder(&refs, &dict).unwrap();
        assert!((beta.coeffs()[0] - 0.7).abs() < 0.03);
        assert!(learn_occluder(&[], &dict).is_err());
    }

    #[test]
    fn planted_disk_prior() {
        // inner disk from components 0/1, border and context from 2/3
        let dict = axis_dict(4, 40.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, w) = (9, 9);
        let inside = |r: usize, c: usize| {
            let (dy, dx) = (r as f64 - 4.0, c as f64 - 4.0);
            dy * dy + dx * dx <= 9.0
        };
        let mut crops = Vec::new();
        let mut context = Vec::new();
        for _ in 0..30 {
            let vecs: Vec<Vec<f64>> = (0..h * w)
                .map(|i| {
                    let k = if inside(i / w, i % w) { rng.random_range(0..2) } else { rng.random_range(2..4) };
                    sample_vmf(&axis(4, k), 40.0, &mut rng)
                })
                .collect();
            crops.push(FeatureMap::from_vectors(h, w, &vecs).unwrap());
            for _ in 0..20 {
                let k = rng.random_range(2..4);
                context.push(sample_vmf(&axis(4, k), 40.0, &mut rng).iter().map(|&x| x as f32).collect::<Vec<_>>());
            }
        }
        let refs: Vec<&[f32]> = context.iter().map(|v| v.as_slice()).collect();
        let prior = estimate_fg_prior(&crops, &refs, &dict).unwrap();
        for (i, p) in prior.iter().enumerate() {
            if inside(i / w, i % w) {
                assert!(*p > 0.95, "{i}: {p}");
            } else {
                assert!(*p < 0.05, "{i}: {p}");
            }
        }
    }

    #[test]
    fn uninformative_prior_is_half() {
        let dict = axis_dict(4, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let crops: Vec<FeatureMap> = (0..400)
            .map(|_| {
                let v: Vec<Vec<f64>> = (0..4).map(|_| sample_uniform_sphere(4, &mut rng)).collect();
                FeatureMap::from_vectors(2, 2, &v).unwrap()
            })
            .collect();
        let context: Vec<Vec<f32>> = (0..1600)
            .map(|_| sample_uniform_sphere(4, &mut rng).iter().map(|&x| x as f32).collect())
            .collect();
        let refs: Vec<&[f32]> = context.iter().map(|v| v.as_slice()).collect();
        for p in estimate_fg_prior(&crops, &refs, &dict).unwrap() {
            assert!((p - 0.5).abs() < 0.15, "{p}");
        }
    }

    #[test]
    fn mixture_assignment_edge_cases() {
        let dict = axis_dict(2, 5.0);
        let crop = FeatureMap::from_vectors(1, 1, &[axis(2, 0)]).unwrap();
        assert_eq!(assign_mixtures(&[crop.clone(), crop.clone()], &dict, 1, 0).unwrap(), vec![0, 0]);
        assert!(matches!(
            assign_mixtures(&[crop], &dict, 2, 0),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn two_templates_separate() {
        let dict = axis_dict(4, 30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut crops = Vec::new();
        let mut truth = Vec::new();
        for i in 0..40 {
            let t = i % 2;
            let v: Vec<Vec<f64>> = (0..6).map(|_| sample_vmf(&axis(4, 2 * t + rng.random_range(0..2)), 30.0, &mut rng)).collect();
            crops.push(FeatureMap::from_vectors(2, 3, &v).unwrap());
            truth.push(t);
        }
        let groups = assign_mixtures(&crops, &dict, 2, 1).unwrap();
        let agree = groups.iter().zip(&truth).filter(|(g, t)| g == t).count();
        assert!(agree == 40 || agree == 0);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let set = TrainingSet {
            class_labels: vec!["a".into()],
            maps: vec![],
        };
        assert!(matches!(train(&set, &TrainConfig::default()), Err(Error::EmptyDataset(_))));
    }
}
