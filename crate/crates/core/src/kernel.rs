//! Translation-invariant kernels and their random Fourier feature maps.
//!
//! A shift-invariant kernel `K(x, y) = k(x - y)` with `k(0) = 1` is the
//! characteristic function of a probability measure Λ (its spectral measure).
//! Drawing `ω_1, …, ω_r ~ Λ` gives the explicit map
//!
//! ```text
//! z(x) = r^{-1/2} · (sin ωⱼᵀx, cos ωⱼᵀx)_{j=1..r}
//! ```
//!
//! whose inner products `⟨z(x), z(y)⟩` are unbiased for `K(x, y)`. Every
//! `z(x)` has unit Euclidean norm.
//!
//! Only the Gaussian kernel `exp(-γ‖x-y‖²)` is built in; its spectral
//! measure is the centered normal with per-coordinate variance `2γ`.

use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, invalid, Error, Result};
use crate::seed;

/// Point count above which the median heuristic works on a subsample.
pub const MEDIAN_EXACT_LIMIT: usize = 2000;
const MEDIAN_SUBSAMPLE_SEED: u64 = 0x6d65_6469_616e;

/// A shift-invariant kernel with a samplable spectral measure.
pub trait ShiftInvariantKernel {
    fn dim(&self) -> usize;

    /// Kernel value `k(x - y)`, normalized so `k(0) = 1`.
    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    /// Fill `omega` (length `dim`) with one draw from the spectral measure.
    fn sample_frequency(&self, rng: &mut seed::Rng, omega: &mut [f64]);

    /// `∫‖ω‖² dΛ(ω)`.
    fn spectral_second_moment(&self) -> f64;
}

/// Gaussian kernel `K(x, y) = exp(-γ‖x - y‖²)` on `R^dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    gamma: f64,
    dim: usize,
}

impl KernelSpec {
    pub fn new(gamma: f64, dim: usize) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        if dim == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        Ok(Self { gamma, dim })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl ShiftInvariantKernel for KernelSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        gaussian_kernel(x, y, self)
    }

    fn sample_frequency(&self, rng: &mut seed::Rng, omega: &mut [f64]) {
        let sd = (2.0 * self.gamma).sqrt();
        for w in omega.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *w = sd * z;
        }
    }

    fn spectral_second_moment(&self) -> f64 {
        2.0 * self.gamma * self.dim as f64
    }
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    check_dim(spec.dim, x.len())?;
    check_dim(spec.dim, y.len())?;
    Ok((-spec.gamma * squared_distance(x, y)).exp())
}

pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Fits `γ = 1 / (2m²)` where `m` is the median Euclidean distance over
/// distinct unordered pairs. Samples larger than [`MEDIAN_EXACT_LIMIT`] are
/// reduced to a fixed-seed subsample of that size first.
pub fn median_heuristic<P: AsRef<[f64]>>(sample: &[P]) -> Result<KernelSpec> {
    if sample.len() < 2 {
        return Err(Error::Degenerate(format!(
            "median heuristic needs at least 2 points, got {}",
            sample.len()
        )));
    }
    let dim = sample[0].as_ref().len();
    for p in sample {
        check_dim(dim, p.as_ref().len())?;
    }

    let picked: Vec<&[f64]> = if sample.len() > MEDIAN_EXACT_LIMIT {
        let mut rng = seed::rng(MEDIAN_SUBSAMPLE_SEED);
        let mut idx = index::sample(&mut rng, sample.len(), MEDIAN_EXACT_LIMIT).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| sample[i].as_ref()).collect()
    } else {
        sample.iter().map(AsRef::as_ref).collect()
    };

    let mut dists = Vec::with_capacity(picked.len() * (picked.len() - 1) / 2);
    for (i, a) in picked.iter().enumerate() {
        for b in &picked[i + 1..] {
            dists.push(squared_distance(a, b).sqrt());
        }
    }
    let m = median(&mut dists);
    if !(m > 0.0) {
        return Err(Error::Degenerate(
            "median pairwise distance is zero".to_string(),
        ));
    }
    KernelSpec::new(1.0 / (2.0 * m * m), dim)
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// The `r` frequencies defining one random Fourier feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    /// Row-major `features × dim`.
    frequencies: Vec<f64>,
    features: usize,
    dim: usize,
    seed: u64,
}

impl SpectralSample {
    pub fn features(&self) -> usize {
        self.features
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Length of every feature vector, `2r`.
    pub fn feature_len(&self) -> usize {
        2 * self.features
    }

    pub fn frequency(&self, j: usize) -> &[f64] {
        &self.frequencies[j * self.dim..(j + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.frequencies.chunks_exact(self.dim)
    }

    /// Writes the feature map of `x` into `out` (length `2r`) without
    /// allocating.
    pub fn map_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        check_dim(self.feature_len(), out.len())?;
        let scale = 1.0 / (self.features as f64).sqrt();
        for (omega, pair) in self.rows().zip(out.chunks_exact_mut(2)) {
            let phase: f64 = omega.iter().zip(x).map(|(w, v)| w * v).sum();
            let (s, c) = phase.sin_cos();
            pair[0] = s * scale;
            pair[1] = c * scale;
        }
        Ok(())
    }
}

/// Draws `r` frequencies i.i.d. from the kernel's spectral measure. The
/// result is a pure function of `(kernel, r, seed)`.
pub fn sample_frequencies<K: ShiftInvariantKernel>(
    kernel: &K,
    r: usize,
    seed: u64,
) -> Result<SpectralSample> {
    if r == 0 {
        return Err(invalid("number of random features must be at least 1"));
    }
    let dim = kernel.dim();
    let mut rng = seed::rng(seed);
    let mut frequencies = vec![0.0; r * dim];
    for row in frequencies.chunks_exact_mut(dim) {
        kernel.sample_frequency(&mut rng, row);
    }
    Ok(SpectralSample {
        frequencies,
        features: r,
        dim,
        seed,
    })
}

/// `ẑ(x)`: interleaved `(sin, cos)` pairs scaled by `1/√r`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub fn feature_map(x: &[f64], sample: &SpectralSample) -> Result<FeatureVector> {
    let mut out = vec![0.0; sample.feature_len()];
    sample.map_into(x, &mut out)?;
    Ok(FeatureVector(out))
}

/// `K̂(x, y) = ⟨ẑ(x), ẑ(y)⟩`.
pub fn approx_kernel(x: &[f64], y: &[f64], sample: &SpectralSample) -> Result<f64> {
    let zx = feature_map(x, sample)?;
    let zy = feature_map(y, sample)?;
    Ok(zx.dot(&zy))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The dimension-dependent constant controlling uniform RFF concentration
/// over a compact domain of Lebesgue measure `domain_measure`, for a
/// spectral measure with `∫‖ω‖² dΛ = sigma²`. Natural logarithms.
pub fn h_function(d: usize, domain_measure: f64, sigma: f64) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d must be positive"));
    }
    if !(domain_measure > 0.0 && sigma > 0.0) {
        return Err(invalid("domain measure and sigma must be positive"));
    }
    let two_d = 2.0 * d as f64;
    let l = (2.0 * domain_measure + 1.0).ln();
    Ok(23.0 * (two_d * l).sqrt()
        + 32.0 * (two_d * (sigma + 1.0).ln()).sqrt()
        + 16.0 * (two_d / l).sqrt())
}

/// `C₃ = (√6 + √50 + √54)² / (4 / (√2 − 1))²`.
pub fn delay_constant() -> f64 {
    let num = 6f64.sqrt() + 50f64.sqrt() + 54f64.sqrt();
    let den = 4.0 / (2f64.sqrt() - 1.0);
    (num * num) / (den * den)
}

/// `|C₂|` with `C₂ = ⅓[(√2 − 1)/4 − (√50 + √6)/√C₃]`. The displayed
/// expression is negative; its magnitude is used.
pub fn feature_constant() -> f64 {
    let c3 = delay_constant();
    let c2 = ((2f64.sqrt() - 1.0) / 4.0 - (50f64.sqrt() + 6f64.sqrt()) / c3.sqrt()) / 3.0;
    c2.abs()
}

/// Smallest `r` with `√r ≥ |C₂| (h(d, |X|, σ) + √(2 log(2/α))) / gap²`,
/// where `σ² = 2γd` for the Gaussian spectral measure.
pub fn required_features(
    alpha: f64,
    mmd_gap: f64,
    d: usize,
    domain_measure: f64,
    spec: &KernelSpec,
) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(mmd_gap > 0.0 && mmd_gap.is_finite()) {
        return Err(invalid(format!("MMD gap must be positive, got {mmd_gap}")));
    }
    let sigma = (2.0 * spec.gamma() * d as f64).sqrt();
    let h = h_function(d, domain_measure, sigma)?;
    let root = feature_constant() * (h + (2.0 * (2.0 / alpha).ln()).sqrt()) / (mmd_gap * mmd_gap);
    let mut r = (root * root).ceil().max(1.0) as u64;
    while r > 1 && ((r - 1) as f64).sqrt() >= root {
        r -= 1;
    }
    while (r as f64).sqrt() < root {
        r += 1;
    }
    Ok(r)
}
