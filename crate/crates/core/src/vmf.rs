//! von Mises–Fisher components, the shared dictionary and its fitting.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::dot;

/// Below this concentration the normalizer is the sphere area.
const SMALL_SIGMA: f64 = 1e-8;
/// Accepted deviation from unit norm for query vectors stored as f32.
const QUERY_UNIT_TOLERANCE: f64 = 1e-5;

pub const DEFAULT_SHARED_SIGMA: f64 = 30.0;

/// `ln Γ(n / 2)` for a positive integer `n`, exact up to rounding.
fn ln_gamma_half_integer(n: usize) -> f64 {
    debug_assert!(n > 0);
    let (mut acc, mut x) = if n.is_multiple_of(2) {
        (0.0, 1.0) // Γ(1) = 1
    } else {
        (0.5 * std::f64::consts::PI.ln(), 0.5) // Γ(1/2) = √π
    };
    while 2.0 * x < n as f64 - 0.5 {
        acc += x.ln();
        x += 1.0;
    }
    acc
}

/// Log of the vMF normalizer on the unit sphere in `dim` dimensions:
/// `Z(σ) = (2π)^{D/2} I_{D/2-1}(σ) / σ^{D/2-1}`.
///
/// The Bessel function is summed as a power series in log space, folded with
/// the `σ^{-ν}` factor so the σ → 0 limit stays continuous.
pub fn log_normalizer(sigma: f64, dim: usize) -> f64 {
    assert!(dim >= 2, "vMF needs at least 2 dimensions");
    assert!(sigma >= 0.0, "concentration must be nonnegative");
    let d = dim as f64;
    if sigma < SMALL_SIGMA {
        // surface area 2 π^{D/2} / Γ(D/2)
        return std::f64::consts::LN_2 + 0.5 * d * std::f64::consts::PI.ln()
            - ln_gamma_half_integer(dim);
    }
    let nu = 0.5 * d - 1.0;
    let log_half = (0.5 * sigma).ln();
    // term_m = (σ/2)^{2m} / (2^ν m! Γ(m+ν+1))
    let mut log_term = -nu * std::f64::consts::LN_2 - ln_gamma_half_integer(dim);
    let mut acc_max = log_term;
    let mut acc_sum = 1.0;
    let mut m = 0.0f64;
    loop {
        m += 1.0;
        log_term += 2.0 * log_half - m.ln() - (m + nu).ln();
        if log_term > acc_max {
            acc_sum = acc_sum * (acc_max - log_term).exp() + 1.0;
            acc_max = log_term;
        } else {
            acc_sum += (log_term - acc_max).exp();
        }
        if m > 0.5 * sigma && log_term - acc_max < -40.0 {
            break;
        }
    }
    0.5 * d * (2.0 * std::f64::consts::PI).ln() + acc_max + acc_sum.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VmfComponent {
    pub mean: Vec<f32>,
    pub concentration: f64,
}

impl VmfComponent {
    pub fn new(mean: Vec<f32>, concentration: f64) -> Result<Self> {
        let norm = dot(&mean, &mean).sqrt();
        if (norm - 1.0).abs() > crate::tensor::UNIT_TOLERANCE {
            return Err(Error::NotUnit(norm));
        }
        if !(concentration >= 0.0 && concentration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "concentration {concentration} must be finite and nonnegative"
            )));
        }
        Ok(Self { mean, concentration })
    }
}

fn check_unit(f: &[f32]) -> Result<()> {
    let norm = dot(f, f).sqrt();
    if (norm - 1.0).abs() > QUERY_UNIT_TOLERANCE {
        return Err(Error::NotUnit(norm));
    }
    Ok(())
}

/// `σ μᵀf − log Z(σ, D)`.
pub fn log_pdf(f: &[f32], comp: &VmfComponent) -> Result<f64> {
    if f.len() != comp.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature has {} channels, component {}",
            f.len(),
            comp.mean.len()
        )));
    }
    check_unit(f)?;
    Ok(comp.concentration * dot(&comp.mean, f) - log_normalizer(comp.concentration, f.len()))
}

/// The shared dictionary Λ of K vMF components.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfDictionary {
    components: Vec<VmfComponent>,
    dim: usize,
    log_norms: Vec<f64>,
}

impl VmfDictionary {
    pub fn new(components: Vec<VmfComponent>) -> Result<Self> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::InvalidParameter("dictionary needs K >= 1".into()))?;
        if dim < 2 {
            return Err(Error::DimensionMismatch("dictionary dimension < 2".into()));
        }
        if components.iter().any(|c| c.mean.len() != dim) {
            return Err(Error::DimensionMismatch("components differ in dimension".into()));
        }
        let log_norms = components
            .iter()
            .map(|c| log_normalizer(c.concentration, dim))
            .collect();
        Ok(Self {
            components,
            dim,
            log_norms,
        })
    }

    pub fn components(&self) -> &[VmfComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Replaces every concentration with `sigma`.
    pub fn with_shared_sigma(&self, sigma: f64) -> Result<Self> {
        let comps = self
            .components
            .iter()
            .map(|c| VmfComponent::new(c.mean.clone(), sigma))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    /// Per-component log densities at `f`. The caller guarantees unit norm.
    pub fn log_pdfs_unchecked(&self, f: &[f32]) -> Vec<f64> {
        self.components
            .iter()
            .zip(&self.log_norms)
            .map(|(c, ln)| c.concentration * dot(&c.mean, f) - ln)
            .collect()
    }

    pub fn log_pdfs(&self, f: &[f32]) -> Result<Vec<f64>> {
        if f.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "feature has {} channels, dictionary {}",
                f.len(),
                self.dim
            )));
        }
        check_unit(f)?;
        Ok(self.log_pdfs_unchecked(f))
    }

    /// Posterior over components under a uniform component prior.
    pub fn responsibilities(&self, f: &[f32]) -> Result<Vec<f64>> {
        Ok(softmax(&self.log_pdfs(f)?))
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Fitting knobs for [`fit_dictionary`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Overrides the per-cluster concentration estimates when set.
    pub shared_sigma: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            shared_sigma: Some(DEFAULT_SHARED_SIGMA),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DictionaryFit {
    pub dictionary: VmfDictionary,
    pub assignments: Vec<usize>,
    /// Σ cos(f, μ_assigned) after every assignment step; under a shared σ
    /// the hard-assignment log-likelihood is an affine function of it.
    pub objective_trace: Vec<f64>,
}

/// Spherical k-means with k-means++ seeding, then one concentration per
/// cluster from the mean resultant length (optionally overridden).
pub fn fit_dictionary(
    features: &[&[f32]],
    k: usize,
    seed: u64,
    config: &FitConfig,
) -> Result<DictionaryFit> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    if features.len() < k {
        return Err(Error::TooFewSamples {
            samples: features.len(),
            clusters: k,
        });
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch("ragged feature set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_init(features, k, &mut rng);
    let mut assignments = vec![usize::MAX; features.len()];
    let mut trace = Vec::new();

    for _ in 0..config.max_iters.max(1) {
        let (next, sims): (Vec<usize>, Vec<f64>) = features
            .par_iter()
            .map(|f| nearest_center(f, &centers))
            .unzip();
        trace.push(sims.iter().sum());
        let changed = next != assignments;
        assignments = next;
        if !changed {
            break;
        }
        centers = update_centers(features, &assignments, &sims, k, dim);
    }

    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (f, &a) in features.iter().zip(&assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(f.iter()) {
            *s += x as f64;
        }
    }
    let components = centers
        .into_iter()
        .zip(sums.iter().zip(&counts))
        .map(|(mean, (sum, &n))| {
            let kappa = match config.shared_sigma {
                Some(s) => s,
                None => concentration_estimate(sum, n, dim),
            };
            VmfComponent::new(mean, kappa)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DictionaryFit {
        dictionary: VmfDictionary::new(components)?,
        assignments,
        objective_trace: trace,
    })
}

/// Mean-resultant-length approximation `r̄ (D − r̄²) / (1 − r̄²)`.
pub fn concentration_estimate(sum: &[f64], n: usize, dim: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let r = sum.iter().map(|x| x * x).sum::<f64>().sqrt() / n as f64;
    let r = r.min(1.0 - 1e-9);
    r * (dim as f64 - r * r) / (1.0 - r * r)
}

fn nearest_center(f: &[f32], centers: &[Vec<f32>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let s = dot(f, c);
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

fn normalized(v: &[f64]) -> Option<Vec<f32>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 1e-12).then(|| v.iter().map(|x| (x / norm) as f32).collect())
}

fn kmeans_pp_init(features: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let first = features
        .choose(rng)
        .expect("nonempty features")
        .to_vec();
    let mut centers = vec![first];
    let mut dist: Vec<f64> = features
        .iter()
        .map(|f| (1.0 - dot(f, &centers[0])).max(0.0))
        .collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let idx = if total <= 0.0 {
            // all remaining points coincide with a center
            rng.random_range(0..features.len())
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = features.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        let c = features[idx].to_vec();
        for (d, f) in dist.iter_mut().zip(features) {
            *d = d.min((1.0 - dot(f, &c)).max(0.0));
        }
        centers.push(c);
    }
    centers
}

fn update_centers(
    features: &[&[f32]],
    assignments: &[usize],
    sims: &[f64],
    k: usize,
    dim: usize,
) -> Vec<Vec<f32>> {
    let mut sums = vec![vec![0.0f64; dim]; k];
    for (f, &a) in features.iter().zip(assignments) {
        for (s, &x) in sums[a].iter_mut().zip(f.iter()) {
            *s += x as f64;
        }
    }
    // farthest points first, for reseeding degenerate clusters
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)));
    let mut reseed = order.into_iter();
    sums.iter()
        .map(|s| {
            normalized(s).unwrap_or_else(|| {
                let idx = reseed.next().unwrap_or(0);
                features[idx].to_vec()
            })
        })
        .collect()
}

/// Uniform sample on the unit sphere in `dim` dimensions.
pub fn sample_uniform_sphere<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Draws from vMF(`mean`, `kappa`) with Wood's rejection sampler.
pub fn sample_vmf<R: Rng + ?Sized>(mean: &[f64], kappa: f64, rng: &mut R) -> Vec<f64> {
    let dim = mean.len();
    if kappa < SMALL_SIGMA {
        return sample_uniform_sphere(dim, rng);
    }
    let d1 = (dim - 1) as f64;
    let b = d1 / (2.0 * kappa + (4.0 * kappa * kappa + d1 * d1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + d1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(0.5 * d1, 0.5 * d1).expect("valid beta parameters");
    let w = loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random::<f64>();
        if kappa * w + d1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            break w;
        }
    };
    // direction orthogonal to the mean
    let v = loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let proj: f64 = g.iter().zip(mean).map(|(a, b)| a * b).sum();
        let v: Vec<f64> = g.iter().zip(mean).map(|(a, m)| a - proj * m).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
        }
    };
    let s = (1.0 - w * w).max(0.0).sqrt();
    mean.iter().zip(&v).map(|(m, vv)| w * m + s * vv).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form_d3(sigma: f64) -> f64 {
        (4.0 * std::f64::consts::PI * sigma.sinh() / sigma).ln()
    }

    fn unit(v: &[f64]) -> Vec<f32> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / n) as f32).collect()
    }

    #[test]
    fn normalizer_examples() {
        assert!((log_normalizer(0.0, 3) - (4.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!((log_normalizer(1.0, 3) - 2.692_463_608_540_486_5).abs() < 1e-12);
        assert!((log_normalizer(2.0, 3) - 3.126_244_439_023_514).abs() < 1e-12);
        assert!((log_normalizer(1.0, 3) - closed_form_d3(1.0)).abs() < 1e-12);
    }

    #[test]
    fn normalizer_is_continuous_at_zero() {
        for dim in [2, 3, 8, 16, 65] {
            let a = log_normalizer(0.0, dim);
            let b = log_normalizer(2e-8, dim);
            assert!((a - b).abs() < 1e-12, "dim {dim}: {a} vs {b}");
        }
    }

    #[test]
    fn normalizer_d2_matches_bessel_i0() {
        // Z = 2π I₀(σ); I₀(1) = 1.2660658777520082
        let expect = (2.0 * std::f64::consts::PI * 1.266_065_877_752_008_2f64).ln();
        assert!((log_normalizer(1.0, 2) - expect).abs() < 1e-12);
    }

    #[test]
    fn log_pdf_examples() {
        let c = VmfComponent::new(vec![1.0, 0.0, 0.0], 1.0).unwrap();
        let lp = log_pdf(&[1.0, 0.0, 0.0], &c).unwrap();
        assert!((lp - (-1.692_463_608_540_486_5)).abs() < 1e-12);
        let perp = log_pdf(&[0.0, 1.0, 0.0], &c).unwrap();
        assert!((perp + log_normalizer(1.0, 3)).abs() < 1e-12);
        let flat = VmfComponent::new(vec![0.0, 0.0, 1.0], 0.0).unwrap();
        let u = unit(&[0.3, -0.2, 0.9]);
        assert!((log_pdf(&u, &flat).unwrap() + (4.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert!(matches!(log_pdf(&[2.0, 0.0, 0.0], &c), Err(Error::NotUnit(_))));
    }

    #[test]
    fn responsibilities_examples() {
        let single = VmfDictionary::new(vec![VmfComponent::new(vec![0.0, 1.0], 3.0).unwrap()]).unwrap();
        assert_eq!(single.responsibilities(&[1.0, 0.0]).unwrap(), vec![1.0]);

        let s = std::f32::consts::FRAC_1_SQRT_2;
        let sym = VmfDictionary::new(vec![
            VmfComponent::new(vec![1.0, 0.0], 4.0).unwrap(),
            VmfComponent::new(vec![0.0, 1.0], 4.0).unwrap(),
        ])
        .unwrap();
        let r = sym.responsibilities(&[s, s]).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-9 && (r[1] - 0.5).abs() < 1e-9);

        let d = VmfDictionary::new(vec![
            VmfComponent::new(vec![1.0, 0.0, 0.0], 5.0).unwrap(),
            VmfComponent::new(vec![0.0, 1.0, 0.0], 5.0).unwrap(),
        ])
        .unwrap();
        let r = d.responsibilities(&[1.0, 0.0, 0.0]).unwrap();
        let e5 = 5f64.exp();
        assert!((r[0] - e5 / (e5 + 1.0)).abs() < 1e-12);
        assert!((r[0] - 0.99331).abs() < 1e-5 && (r[1] - 0.00669).abs() < 1e-5);
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_antipodal_and_identical() {
        let a = [0.0f32, 0.0, 1.0];
        let b = [0.0f32, 0.0, -1.0];
        let feats: Vec<&[f32]> = (0..20).map(|i| if i % 2 == 0 { &a[..] } else { &b[..] }).collect();
        let fit = fit_dictionary(&feats, 2, 7, &FitConfig::default()).unwrap();
        let mut means: Vec<f32> = fit.dictionary.components().iter().map(|c| c.mean[2]).collect();
        means.sort_by(f32::total_cmp);
        assert_eq!(means, vec![-1.0, 1.0]);

        let same: Vec<&[f32]> = (0..5).map(|_| &a[..]).collect();
        let fit = fit_dictionary(&same, 1, 0, &FitConfig::default()).unwrap();
        assert_eq!(fit.dictionary.components()[0].mean, a.to_vec());
        assert_eq!(fit.dictionary.components()[0].concentration, DEFAULT_SHARED_SIGMA);
    }

    #[test]
    fn fit_rejects_too_few_samples() {
        let a = [1.0f32, 0.0];
        let err = fit_dictionary(&[&a[..]], 2, 0, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, Error::TooFewSamples { samples: 1, clusters: 2 }));
    }

    #[test]
    fn concentration_estimate_without_override() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mean = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let samples: Vec<Vec<f32>> = (0..4000)
            .map(|_| sample_vmf(&mean, 20.0, &mut rng).iter().map(|&x| x as f32).collect())
            .collect();
        let refs: Vec<&[f32]> = samples.iter().map(|v| v.as_slice()).collect();
        let cfg = FitConfig {
            shared_sigma: None,
            ..FitConfig::default()
        };
        let fit = fit_dictionary(&refs, 1, 1, &cfg).unwrap();
        let kappa = fit.dictionary.components()[0].concentration;
        assert!((kappa - 20.0).abs() < 2.0, "estimated {kappa}");
    }

    #[test]
    fn vmf_sampler_mean_resultant() {
        // E[μᵀf] = A_D(κ) = I_{D/2}(κ) / I_{D/2-1}(κ); for D=3: coth κ − 1/κ.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kappa = 5.0;
        let n = 20000;
        let m: f64 = (0..n)
            .map(|_| sample_vmf(&[0.0, 1.0, 0.0], kappa, &mut rng)[1])
            .sum::<f64>()
            / n as f64;
        let expect = 1.0 / kappa.tanh() - 1.0 / kappa;
        assert!((m - expect).abs() < 0.01, "{m} vs {expect}");
    }
}
