//! Maximum mean discrepancy: the quadratic-time plug-in estimator and its
//! linear-time random Fourier feature counterpart.

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernel::{dot, feature_map, gaussian_kernel, KernelSpec, SpectralSample};

/// Mean of feature vectors over `count` points.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEmbedding {
    z_mean: Vec<f64>,
    count: u64,
}

impl MeanEmbedding {
    pub fn from_sum(z_sum: &[f64], count: u64) -> Result<Self> {
        if count == 0 {
            return Err(invalid("mean embedding needs a positive count"));
        }
        let inv = 1.0 / count as f64;
        Ok(Self {
            z_mean: z_sum.iter().map(|v| v * inv).collect(),
            count,
        })
    }

    /// Averages the feature maps of `points` (oldest first).
    pub fn from_points<P: AsRef<[f64]>>(points: &[P], sample: &SpectralSample) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Degenerate("cannot embed an empty sample".into()));
        }
        let mut sum = vec![0.0; sample.feature_len()];
        let mut z = vec![0.0; sample.feature_len()];
        for p in points {
            sample.map_into(p.as_ref(), &mut z)?;
            for (s, v) in sum.iter_mut().zip(&z) {
                *s += v;
            }
        }
        Self::from_sum(&sum, points.len() as u64)
    }

    pub fn z_mean(&self) -> &[f64] {
        &self.z_mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn norm(&self) -> f64 {
        dot(&self.z_mean, &self.z_mean).sqrt()
    }
}

fn check_samples<P: AsRef<[f64]>>(x: &[P], y: &[P], dim: usize) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Degenerate("MMD needs two nonempty samples".into()));
    }
    for p in x.iter().chain(y) {
        check_dim(dim, p.as_ref().len())?;
    }
    Ok(())
}

/// Square root of the three double sums (biased V-statistic, diagonal
/// included), with a fixed kernel function.
fn plug_in<P, K>(x: &[P], y: &[P], k: K) -> f64
where
    P: AsRef<[f64]>,
    K: Fn(&[f64], &[f64]) -> f64,
{
    let (n, m) = (x.len() as f64, y.len() as f64);
    let mut kxx = 0.0;
    for a in x {
        for b in x {
            kxx += k(a.as_ref(), b.as_ref());
        }
    }
    let mut kyy = 0.0;
    for a in y {
        for b in y {
            kyy += k(a.as_ref(), b.as_ref());
        }
    }
    let mut kxy = 0.0;
    for a in x {
        for b in y {
            kxy += k(a.as_ref(), b.as_ref());
        }
    }
    let sq = kxx / (n * n) + kyy / (m * m) - 2.0 * kxy / (n * m);
    sq.max(0.0).sqrt()
}

/// Exact plug-in MMD under the Gaussian kernel. Quadratic time.
pub fn mmd_exact<P: AsRef<[f64]>>(x: &[P], y: &[P], spec: &KernelSpec) -> Result<f64> {
    check_samples(x, y, spec.dim())?;
    Ok(plug_in(x, y, |a, b| {
        gaussian_kernel(a, b, spec).expect("dimensions checked")
    }))
}

/// The plug-in MMD with the approximate kernel `K̂` substituted for `K`.
/// Quadratic time; used as a brute-force reference for [`mmd_rff`].
pub fn mmd_exact_rff_kernel<P: AsRef<[f64]>>(
    x: &[P],
    y: &[P],
    sample: &SpectralSample,
) -> Result<f64> {
    check_samples(x, y, sample.dim())?;
    let zx: Vec<Vec<f64>> = x
        .iter()
        .map(|p| feature_map(p.as_ref(), sample).map(|f| f.into_inner()))
        .collect::<Result<_>>()?;
    let zy: Vec<Vec<f64>> = y
        .iter()
        .map(|p| feature_map(p.as_ref(), sample).map(|f| f.into_inner()))
        .collect::<Result<_>>()?;
    Ok(plug_in(&zx, &zy, dot))
}

/// Euclidean distance between two mean embeddings.
pub fn mmd_rff(a: &MeanEmbedding, b: &MeanEmbedding) -> Result<f64> {
    check_dim(a.z_mean.len(), b.z_mean.len())?;
    Ok(euclidean(&a.z_mean, &b.z_mean))
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `√(c1·c2 / (c1 + c2)) · mmd`.
pub fn normalized_stat(c1: u64, c2: u64, mmd: f64) -> Result<f64> {
    if c1 == 0 || c2 == 0 {
        return Err(invalid("normalization needs positive counts"));
    }
    Ok(split_scale(c1 as f64, c2 as f64) * mmd)
}

#[inline]
pub(crate) fn split_scale(c1: f64, c2: f64) -> f64 {
    (c1 * c2 / (c1 + c2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::sample_frequencies;
    use crate::seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss_points(rng: &mut seed::Rng, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        shift + z
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn exact_mmd_singletons() {
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let v = mmd_exact(&[vec![0.0]], &[vec![1.0]], &spec).unwrap();
        assert_abs_diff_eq!(v, 1.124_384_772_956_800_3, epsilon = 1e-12);
    }

    #[test]
    fn exact_mmd_identical_and_symmetric() {
        let spec = KernelSpec::new(0.4, 2).unwrap();
        let mut rng = seed::rng(3);
        let x = gauss_points(&mut rng, 20, 2, 0.0);
        let y = gauss_points(&mut rng, 13, 2, 0.5);
        assert!(mmd_exact(&x, &x, &spec).unwrap() < 1e-9);
        assert_abs_diff_eq!(
            mmd_exact(&x, &y, &spec).unwrap(),
            mmd_exact(&y, &x, &spec).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn exact_mmd_errors() {
        let spec = KernelSpec::new(1.0, 1).unwrap();
        let empty: Vec<Vec<f64>> = vec![];
        assert!(mmd_exact(&empty, &[vec![1.0]], &spec).is_err());
        assert!(matches!(
            mmd_exact(&[vec![1.0, 2.0]], &[vec![1.0]], &spec),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rff_mmd_matches_brute_force_on_seeded_corpus() {
        let spec = KernelSpec::new(0.5, 3).unwrap();
        let mut rng = seed::rng(77);
        for case in 0..100 {
            let freq = sample_frequencies(&spec, 32, case).unwrap();
            let n = rng.random_range(1..=32);
            let m = rng.random_range(1..=32);
            let x = gauss_points(&mut rng, n, 3, 0.0);
            let y = gauss_points(&mut rng, m, 3, 0.3);
            let brute = mmd_exact_rff_kernel(&x, &y, &freq).unwrap();
            let fast = mmd_rff(
                &MeanEmbedding::from_points(&x, &freq).unwrap(),
                &MeanEmbedding::from_points(&y, &freq).unwrap(),
            )
            .unwrap();
            assert!((fast - brute).abs() <= 1e-9 * brute.max(1.0), "case {case}");
        }
    }

    #[test]
    fn rff_brute_force_is_permutation_invariant() {
        let spec = KernelSpec::new(0.5, 2).unwrap();
        let freq = sample_frequencies(&spec, 16, 1).unwrap();
        let mut rng = seed::rng(5);
        let x = gauss_points(&mut rng, 9, 2, 0.0);
        let y = gauss_points(&mut rng, 7, 2, 1.0);
        let mut xr = x.clone();
        xr.reverse();
        let mut yr = y.clone();
        yr.rotate_left(3);
        assert_abs_diff_eq!(
            mmd_exact_rff_kernel(&x, &y, &freq).unwrap(),
            mmd_exact_rff_kernel(&xr, &yr, &freq).unwrap(),
            epsilon = 1e-12
        );
        assert!(mmd_exact_rff_kernel(&x, &x, &freq).unwrap() < 1e-9);
    }

    #[test]
    fn rff_mmd_approaches_exact_mmd() {
        let spec = KernelSpec::new(0.5, 2).unwrap();
        let freq = sample_frequencies(&spec, 100_000, 8).unwrap();
        let mut rng = seed::rng(9);
        let x = gauss_points(&mut rng, 30, 2, 0.0);
        let y = gauss_points(&mut rng, 30, 2, 0.8);
        let exact = mmd_exact(&x, &y, &spec).unwrap();
        let approx = mmd_rff(
            &MeanEmbedding::from_points(&x, &freq).unwrap(),
            &MeanEmbedding::from_points(&y, &freq).unwrap(),
        )
        .unwrap();
        assert!((exact - approx).abs() <= 0.05, "{exact} vs {approx}");
    }

    #[test]
    fn normalization() {
        assert_eq!(normalized_stat(2, 2, 1.0).unwrap(), 1.0);
        assert_eq!(normalized_stat(5, 9, 0.0).unwrap(), 0.0);
        assert!(normalized_stat(0, 2, 1.0).is_err());
        assert!(MeanEmbedding::from_sum(&[1.0], 0).is_err());
    }

    #[test]
    fn length_mismatch() {
        let a = MeanEmbedding::from_sum(&[1.0, 0.0], 1).unwrap();
        let b = MeanEmbedding::from_sum(&[1.0, 0.0, 0.0, 0.0], 1).unwrap();
        assert!(mmd_rff(&a, &b).is_err());
    }

    proptest! {
        // ½·min(c1,c2) ≤ c1c2/(c1+c2) ≤ min(c1,c2)
        #[test]
        fn harmonic_mean_bounds(c1 in 1u64..1_000_000, c2 in 1u64..1_000_000) {
            let s = normalized_stat(c1, c2, 1.0).unwrap().powi(2);
            let lo = 0.5 * c1.min(c2) as f64;
            let hi = c1.min(c2) as f64;
            prop_assert!(s >= lo * (1.0 - 1e-12) && s <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn rff_mmd_bounded(
            xs in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 2), 1..12),
            ys in prop::collection::vec(prop::collection::vec(-20.0f64..20.0, 2), 1..12),
            seed in any::<u64>(),
        ) {
            let freq = sample_frequencies(&KernelSpec::new(1.3, 2).unwrap(), 24, seed).unwrap();
            let a = MeanEmbedding::from_points(&xs, &freq).unwrap();
            let b = MeanEmbedding::from_points(&ys, &freq).unwrap();
            prop_assert!(a.norm() <= 1.0 + 1e-12);
            let v = mmd_rff(&a, &b).unwrap();
            prop_assert!((0.0..=2.0 + 1e-12).contains(&v));
            prop_assert!(mmd_rff(&a, &a).unwrap() == 0.0);
        }
    }
}
