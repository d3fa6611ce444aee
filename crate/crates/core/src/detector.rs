//! Online change point detection over a dyadic window structure.
//!
//! Observations are never stored. Each one becomes a window holding its
//! feature vector and a count of 1; windows of equal count are merged
//! newest-first, so the counts always read as the binary decomposition of
//! the number of retained observations (e.g. `[4, 2, 1]` after 7 inserts).
//! Every window boundary is a candidate change location. One sweep from the
//! newest window to the oldest moves each window from the running "older"
//! sum to the running "newer" sum and evaluates
//!
//! ```text
//! √(c_old · c_new / (c_old + c_new)) · ‖z̄_old − z̄_new‖₂
//! ```
//!
//! against the threshold policy. Both the sweep and the maintenance step
//! touch `O(log n)` windows of length `2r`, so an insert costs
//! `O(r log n)` time and the state occupies `O(r log n)` memory.
//!
//! Two reference modes use extra knowledge of the pre-change law: a
//! historical sample folded into the older side of every split, or a
//! known pre-change mean embedding each suffix is compared against with
//! normalization `√c_new`.

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernel::{sample_frequencies, KernelSpec, SpectralSample};
use crate::mmd::{split_scale, MeanEmbedding};
use crate::threshold::ThresholdPolicy;

/// What happens to the window list after a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResetPolicy {
    /// Drop the windows before the estimated change and keep monitoring
    /// with the post-change data.
    #[default]
    DropPreChange,
    /// Forget everything and restart from an empty structure.
    ClearAll,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub kernel: KernelSpec,
    /// Number of random frequencies `r`; feature vectors have length `2r`.
    pub features: usize,
    /// Seed for the spectral sample.
    pub seed: u64,
    pub policy: ThresholdPolicy,
    pub reset: ResetPolicy,
    /// Recompute the running total from the windows after every
    /// maintenance step instead of updating it incrementally.
    pub exact_totals: bool,
}

impl DetectorConfig {
    pub fn new(kernel: KernelSpec, features: usize, seed: u64, policy: ThresholdPolicy) -> Self {
        Self {
            kernel,
            features,
            seed,
            policy,
            reset: ResetPolicy::default(),
            exact_totals: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    TwoSample,
    WithHistory,
    KnownPreChange,
}

/// One dyadic block: summed feature vectors and how many were summed.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSummary {
    pub z_sum: Vec<f64>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Reference {
    None,
    History { z_sum: Vec<f64>, count: u64 },
    PreChange(MeanEmbedding),
}

/// Statistic of one candidate split. `split` is the number of windows on
/// the older side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitStat {
    pub split: usize,
    pub older_count: u64,
    pub newer_count: u64,
    pub stat: f64,
    pub threshold: f64,
}

/// Result of one sweep: the split reported for this insert.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub split: usize,
    pub stat: f64,
    pub threshold: f64,
    pub exceeded: bool,
}

/// Outcome of one insert.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    /// Absolute index of the observation just inserted.
    pub time: u64,
    pub detected: bool,
    /// Absolute index of the last observation attributed to the pre-change
    /// regime, when `detected`.
    pub change_at: Option<u64>,
    /// Whether any split was evaluated for this insert.
    pub swept: bool,
    /// Statistic of the reported split: the largest exceeding one when
    /// `detected`, otherwise the largest overall (0 when nothing was swept).
    pub peak_stat: f64,
    /// Threshold the reported split was compared against.
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    spectral: SpectralSample,
    /// Oldest first.
    windows: Vec<WindowSummary>,
    total: Vec<f64>,
    retained: u64,
    t: u64,
    origin: u64,
    reference: Reference,
    work: u64,
    splits: Vec<SplitStat>,
    older: Vec<f64>,
    newer: Vec<f64>,
    spare: Vec<Vec<f64>>,
}

impl Detector {
    /// A two-sample detector.
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.policy.validate()?;
        let spectral = sample_frequencies(&config.kernel, config.features, config.seed)?;
        let len = spectral.feature_len();
        Ok(Self {
            config,
            spectral,
            windows: Vec::new(),
            total: vec![0.0; len],
            retained: 0,
            t: 0,
            origin: 1,
            reference: Reference::None,
            work: 0,
            splits: Vec::new(),
            older: vec![0.0; len],
            newer: vec![0.0; len],
            spare: Vec::new(),
        })
    }

    /// Builds a detector in `mode`. `reference` is the historical sample for
    /// [`Mode::WithHistory`] and the reference sample whose mean embedding
    /// stands in for the known pre-change law in [`Mode::KnownPreChange`].
    pub fn with_mode(
        config: DetectorConfig,
        mode: Mode,
        reference: Option<&[Vec<f64>]>,
    ) -> Result<Self> {
        let mut det = Self::new(config)?;
        match (mode, reference) {
            (Mode::TwoSample, None) => {}
            (Mode::TwoSample, Some(_)) => {
                return Err(invalid("two-sample mode takes no reference sample"))
            }
            (_, None) | (_, Some([])) => {
                return Err(invalid(format!(
                    "{mode:?} mode needs a nonempty reference sample"
                )))
            }
            (Mode::WithHistory, Some(hist)) => {
                let emb = MeanEmbedding::from_points(hist, &det.spectral)?;
                let count = emb.count();
                let z_sum = emb.z_mean().iter().map(|v| v * count as f64).collect();
                det.reference = Reference::History { z_sum, count };
            }
            (Mode::KnownPreChange, Some(sample)) => {
                det.reference =
                    Reference::PreChange(MeanEmbedding::from_points(sample, &det.spectral)?);
            }
        }
        Ok(det)
    }

    /// A known-pre-change detector from an embedding computed with this
    /// detector's spectral sample (see [`Detector::spectral`]).
    pub fn with_prechange_embedding(
        config: DetectorConfig,
        embedding: MeanEmbedding,
    ) -> Result<Self> {
        let mut det = Self::new(config)?;
        check_dim(det.spectral.feature_len(), embedding.z_mean().len())?;
        det.reference = Reference::PreChange(embedding);
        Ok(det)
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn spectral(&self) -> &SpectralSample {
        &self.spectral
    }

    pub fn mode(&self) -> Mode {
        match self.reference {
            Reference::None => Mode::TwoSample,
            Reference::History { .. } => Mode::WithHistory,
            Reference::PreChange(_) => Mode::KnownPreChange,
        }
    }

    /// Size `ν` of the historical sample, in [`Mode::WithHistory`].
    pub fn history_count(&self) -> Option<u64> {
        match self.reference {
            Reference::History { count, .. } => Some(count),
            _ => None,
        }
    }

    pub fn windows(&self) -> &[WindowSummary] {
        &self.windows
    }

    pub fn window_counts(&self) -> Vec<u64> {
        self.windows.iter().map(|w| w.count).collect()
    }

    /// Observations seen so far.
    pub fn time(&self) -> u64 {
        self.t
    }

    /// Absolute index of the oldest retained observation.
    pub fn origin(&self) -> u64 {
        self.origin
    }

    pub fn retained(&self) -> u64 {
        self.retained
    }

    /// Cumulative window visits across all inserts.
    pub fn work_counter(&self) -> u64 {
        self.work
    }

    /// Statistics of every split evaluated by the most recent sweep, ordered
    /// by split index.
    pub fn last_sweep(&self) -> &[SplitStat] {
        &self.splits
    }

    pub fn insert(&mut self, x: &[f64]) -> Result<Verdict> {
        check_dim(self.spectral.dim(), x.len())?;
        let mut z = self
            .spare
            .pop()
            .unwrap_or_else(|| vec![0.0; self.spectral.feature_len()]);
        self.spectral.map_into(x, &mut z)?;
        self.t += 1;
        if self.windows.is_empty() {
            self.origin = self.t;
        }
        for (s, v) in self.total.iter_mut().zip(&z) {
            *s += v;
        }
        self.windows.push(WindowSummary { z_sum: z, count: 1 });
        self.retained += 1;
        self.work += 1;

        let mut verdict = Verdict {
            time: self.t,
            detected: false,
            change_at: None,
            swept: false,
            peak_stat: 0.0,
            threshold: f64::INFINITY,
        };
        if self.can_sweep() {
            let best = self.sweep();
            verdict.swept = true;
            verdict.peak_stat = best.stat;
            verdict.threshold = best.threshold;
            if best.exceeded {
                verdict.detected = true;
                verdict.change_at = Some(self.change_index(best.split));
                self.reset_after_detection(best.split);
            }
        } else {
            self.splits.clear();
        }
        self.maintain();
        Ok(verdict)
    }

    fn can_sweep(&self) -> bool {
        match self.reference {
            Reference::None => self.windows.len() >= 2,
            _ => !self.windows.is_empty(),
        }
    }

    fn first_split(&self) -> usize {
        match self.reference {
            Reference::None => 1,
            _ => 0,
        }
    }

    /// Evaluates every candidate split with running sums. Per-split results
    /// are available from [`last_sweep`](Self::last_sweep).
    pub fn detect_sweep(&mut self) -> Result<SweepSummary> {
        if !self.can_sweep() {
            return Err(Error::Degenerate(format!(
                "{:?} sweep needs more windows, have {}",
                self.mode(),
                self.windows.len()
            )));
        }
        Ok(self.sweep())
    }

    fn sweep(&mut self) -> SweepSummary {
        let t = self.t;
        let policy = self.config.policy;
        let first = self.first_split();
        self.splits.clear();

        let (mut older_count, ref_mean) = match &self.reference {
            Reference::None => {
                self.older.copy_from_slice(&self.total);
                (self.retained, None)
            }
            Reference::History { z_sum, count } => {
                for ((o, a), b) in self.older.iter_mut().zip(&self.total).zip(z_sum) {
                    *o = a + b;
                }
                (self.retained + count, None)
            }
            Reference::PreChange(emb) => (0, Some(emb.z_mean())),
        };
        self.newer.iter_mut().for_each(|v| *v = 0.0);
        let mut newer_count = 0u64;

        for k in (first..self.windows.len()).rev() {
            let w = &self.windows[k];
            self.work += 1;
            for ((n, o), z) in self
                .newer
                .iter_mut()
                .zip(self.older.iter_mut())
                .zip(&w.z_sum)
            {
                *n += z;
                *o -= z;
            }
            newer_count += w.count;
            let inv_new = 1.0 / newer_count as f64;
            let (stat, min_side) = match ref_mean {
                Some(mu) => {
                    let d2: f64 = self
                        .newer
                        .iter()
                        .zip(mu)
                        .map(|(n, m)| {
                            let d = n * inv_new - m;
                            d * d
                        })
                        .sum();
                    ((newer_count as f64).sqrt() * d2.sqrt(), newer_count)
                }
                None => {
                    older_count -= w.count;
                    let inv_old = 1.0 / older_count as f64;
                    let d2: f64 = self
                        .newer
                        .iter()
                        .zip(&self.older)
                        .map(|(n, o)| {
                            let d = n * inv_new - o * inv_old;
                            d * d
                        })
                        .sum();
                    (
                        split_scale(older_count as f64, newer_count as f64) * d2.sqrt(),
                        older_count.min(newer_count),
                    )
                }
            };
            self.splits.push(SplitStat {
                split: k,
                older_count: if ref_mean.is_some() {
                    u64::MAX
                } else {
                    older_count
                },
                newer_count,
                stat,
                threshold: policy.lambda(t, min_side),
            });
        }
        self.splits.reverse();

        // Largest exceeding statistic wins; otherwise the largest overall.
        // Ties go to the smallest split index.
        let pick = |exceeding: bool| {
            self.splits
                .iter()
                .filter(|s| !exceeding || s.stat >= s.threshold)
                .fold(None::<&SplitStat>, |best, s| match best {
                    Some(b) if b.stat >= s.stat => Some(b),
                    _ => Some(s),
                })
                .copied()
        };
        let (best, exceeded) = match pick(true) {
            Some(s) => (s, true),
            None => (pick(false).expect("at least one split"), false),
        };
        SweepSummary {
            split: best.split,
            stat: best.stat,
            threshold: best.threshold,
            exceeded,
        }
    }

    /// Absolute index of the last observation in windows `0..split`:
    /// `origin − 1 + Σ counts[0..split]`.
    pub fn estimated_change_index(&self, split: usize) -> Result<u64> {
        if split < self.first_split() || split >= self.windows.len() {
            return Err(invalid(format!(
                "split {split} outside {}..{}",
                self.first_split(),
                self.windows.len()
            )));
        }
        Ok(self.change_index(split))
    }

    fn change_index(&self, split: usize) -> u64 {
        self.origin - 1 + self.windows[..split].iter().map(|w| w.count).sum::<u64>()
    }

    fn reset_after_detection(&mut self, split: usize) {
        match self.config.reset {
            ResetPolicy::DropPreChange => {
                let dropped: u64 = self.windows[..split].iter().map(|w| w.count).sum();
                for w in self.windows.drain(..split) {
                    self.spare.push(w.z_sum);
                }
                self.retained -= dropped;
                self.origin += dropped;
                self.recompute_total();
            }
            ResetPolicy::ClearAll => {
                for w in self.windows.drain(..) {
                    self.spare.push(w.z_sum);
                }
                self.retained = 0;
                self.origin = self.t + 1;
                self.total.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        // the reference described the regime that just ended
        self.reference = Reference::None;
    }

    /// Rebuilds the running total from the window sums.
    pub fn recompute_total(&mut self) {
        self.total.iter_mut().for_each(|v| *v = 0.0);
        for w in &self.windows {
            for (s, v) in self.total.iter_mut().zip(&w.z_sum) {
                *s += v;
            }
        }
    }

    /// Merges the two newest windows while their counts agree.
    pub fn maintain(&mut self) {
        while self.windows.len() >= 2 {
            let newest = self.windows.pop().expect("len >= 2");
            let next = self.windows.pop().expect("len >= 2");
            self.work += 2;
            if newest.count == next.count {
                let mut merged = next;
                for (a, b) in merged.z_sum.iter_mut().zip(&newest.z_sum) {
                    *a += b;
                }
                merged.count += newest.count;
                self.spare.push(newest.z_sum);
                self.windows.push(merged);
            } else {
                self.windows.push(next);
                self.windows.push(newest);
                break;
            }
        }
        if self.config.exact_totals {
            self.recompute_total();
        }
    }

    #[cfg(test)]
    pub(crate) fn set_windows(&mut self, counts: &[u64]) {
        let len = self.spectral.feature_len();
        self.windows = counts
            .iter()
            .map(|&c| WindowSummary {
                z_sum: vec![0.0; len],
                count: c,
            })
            .collect();
        self.retained = counts.iter().sum();
        self.t = self.retained;
        self.origin = 1;
        self.recompute_total();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::feature_map;
    use crate::mmd::{euclidean, normalized_stat};
    use crate::seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn config(policy: ThresholdPolicy) -> DetectorConfig {
        DetectorConfig::new(KernelSpec::new(0.5, 2).unwrap(), 16, 3, policy)
    }

    fn never() -> DetectorConfig {
        config(ThresholdPolicy::Constant(f64::INFINITY))
    }

    fn gauss(rng: &mut seed::Rng, d: usize, shift: f64) -> Vec<f64> {
        (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                shift + z
            })
            .collect()
    }

    fn binary_decomposition(mut n: u64) -> Vec<u64> {
        let mut out = Vec::new();
        let mut bit = 1u64 << 63;
        while bit > 0 {
            if n >= bit {
                out.push(bit);
                n -= bit;
            }
            bit >>= 1;
        }
        out
    }

    #[test]
    fn fresh_detector_is_empty() {
        let d = Detector::new(never()).unwrap();
        assert!(d.windows().is_empty());
        assert_eq!(d.time(), 0);
        assert_eq!(d.mode(), Mode::TwoSample);
        let hist: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 0.0]).collect();
        let h = Detector::with_mode(never(), Mode::WithHistory, Some(&hist)).unwrap();
        assert_eq!(h.history_count(), Some(8));
        assert!(h.windows().is_empty());
        assert!(Detector::with_mode(never(), Mode::KnownPreChange, None).is_err());
        assert!(Detector::with_mode(never(), Mode::WithHistory, Some(&[])).is_err());
        assert!(Detector::with_mode(never(), Mode::TwoSample, Some(&hist)).is_err());
    }

    #[test]
    fn structure_follows_binary_counter() {
        let mut d = Detector::new(never()).unwrap();
        let mut rng = seed::rng(1);
        for n in 1..=200u64 {
            d.insert(&gauss(&mut rng, 2, 0.0)).unwrap();
            assert_eq!(d.window_counts(), binary_decomposition(n), "n = {n}");
            match n {
                6 => assert_eq!(d.window_counts(), vec![4, 2]),
                7 => assert_eq!(d.window_counts(), vec![4, 2, 1]),
                13 => assert_eq!(d.window_counts(), vec![8, 4, 1]),
                _ => {}
            }
        }
        assert!(d.insert(&[1.0]).is_err());
    }

    #[test]
    fn maintenance_carry_chain() {
        let mut d = Detector::new(never()).unwrap();
        d.set_windows(&[1, 1]);
        d.maintain();
        assert_eq!(d.window_counts(), vec![2]);
        d.set_windows(&[4, 2, 1, 1]);
        d.maintain();
        assert_eq!(d.window_counts(), vec![8]);
        d.set_windows(&[4, 1]);
        d.maintain();
        assert_eq!(d.window_counts(), vec![4, 1]);
    }

    #[test]
    fn single_boundary_sweep() {
        let mut d = Detector::new(never()).unwrap();
        let mut rng = seed::rng(2);
        for _ in 0..6 {
            d.insert(&gauss(&mut rng, 2, 0.0)).unwrap();
        }
        assert_eq!(d.window_counts(), vec![4, 2]);
        d.detect_sweep().unwrap();
        let s = d.last_sweep();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].older_count, s[0].newer_count), (4, 2));
    }

    #[test]
    fn sweep_needs_windows() {
        let mut d = Detector::new(never()).unwrap();
        assert!(d.detect_sweep().is_err());
        d.insert(&[0.0, 0.0]).unwrap();
        assert!(d.detect_sweep().is_err());
    }

    // Rebuilds both sides of every split directly from the window sums.
    fn naive_sweep(d: &Detector) -> Vec<f64> {
        let ws = d.windows();
        let len = d.spectral().feature_len();
        let first = if d.mode() == Mode::TwoSample { 1 } else { 0 };
        (first..ws.len())
            .map(|i| {
                let mut old = vec![0.0; len];
                let mut c_old = 0u64;
                if let Reference::History { z_sum, count } = &d.reference {
                    for (a, b) in old.iter_mut().zip(z_sum) {
                        *a += b;
                    }
                    c_old += count;
                }
                for w in &ws[..i] {
                    for (a, b) in old.iter_mut().zip(&w.z_sum) {
                        *a += b;
                    }
                    c_old += w.count;
                }
                let mut new = vec![0.0; len];
                let mut c_new = 0u64;
                for w in &ws[i..] {
                    for (a, b) in new.iter_mut().zip(&w.z_sum) {
                        *a += b;
                    }
                    c_new += w.count;
                }
                let new_mean = MeanEmbedding::from_sum(&new, c_new).unwrap();
                if let Reference::PreChange(mu) = &d.reference {
                    return (c_new as f64).sqrt() * euclidean(new_mean.z_mean(), mu.z_mean());
                }
                let old_mean = MeanEmbedding::from_sum(&old, c_old).unwrap();
                normalized_stat(
                    c_old,
                    c_new,
                    euclidean(old_mean.z_mean(), new_mean.z_mean()),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn sweep_matches_naive_recomputation() {
        let mut rng = seed::rng(3);
        let hist: Vec<Vec<f64>> = (0..37).map(|_| gauss(&mut rng, 2, 0.0)).collect();
        for mode in [Mode::TwoSample, Mode::WithHistory, Mode::KnownPreChange] {
            let reference = (mode != Mode::TwoSample).then_some(hist.as_slice());
            let mut d = Detector::with_mode(never(), mode, reference).unwrap();
            let n = rng.random_range(50..700);
            for i in 0..n {
                d.insert(&gauss(&mut rng, 2, if i > n / 2 { 0.7 } else { 0.0 }))
                    .unwrap();
                if d.can_sweep() {
                    d.detect_sweep().unwrap();
                    let fast: Vec<f64> = d.last_sweep().iter().map(|s| s.stat).collect();
                    let slow = naive_sweep(&d);
                    assert_eq!(fast.len(), slow.len());
                    for (a, b) in fast.iter().zip(&slow) {
                        assert!((a - b).abs() <= 1e-10, "{mode:?}: {a} vs {b}");
                    }
                }
            }
        }
    }

    #[test]
    fn dyadic_split_normalization() {
        // split at c_new = 2^j, c_old = n - 2^j reproduces √(2^j(n-2^j)/n)
        let n = 13u64;
        for j in 0..3 {
            let c = 1u64 << j;
            let want = ((c * (n - c)) as f64 / n as f64).sqrt();
            assert_eq!(split_scale((n - c) as f64, c as f64), want);
        }
    }

    #[test]
    fn known_prechange_zero_distance() {
        let cfg = never();
        let mut d = Detector::new(cfg.clone()).unwrap();
        let p = vec![0.25, -1.0];
        let emb =
            MeanEmbedding::from_sum(feature_map(&p, d.spectral()).unwrap().as_slice(), 1).unwrap();
        d = Detector::with_prechange_embedding(cfg, emb).unwrap();
        for _ in 0..11 {
            let v = d.insert(&p).unwrap();
            assert!(v.swept);
            assert!(d.last_sweep().iter().all(|s| s.stat.abs() < 1e-12));
        }
    }

    #[test]
    fn change_index_arithmetic() {
        let mut d = Detector::new(never()).unwrap();
        d.set_windows(&[4, 2]);
        assert_eq!(d.estimated_change_index(1).unwrap(), 4);
        assert!(d.estimated_change_index(0).is_err());
        assert!(d.estimated_change_index(2).is_err());
        d.set_windows(&[8, 4, 1]);
        d.origin = 101;
        assert_eq!(d.estimated_change_index(2).unwrap(), 112);
    }

    #[test]
    fn unreachable_threshold_never_alarms() {
        let mut d = Detector::new(never()).unwrap();
        let mut rng = seed::rng(4);
        for i in 0..10_000 {
            let v = d
                .insert(&gauss(&mut rng, 2, if i > 5000 { 3.0 } else { 0.0 }))
                .unwrap();
            assert!(!v.detected);
        }
    }

    #[test]
    fn zero_threshold_alarms_at_first_sweep() {
        let mut d = Detector::new(config(ThresholdPolicy::Constant(0.0))).unwrap();
        assert!(!d.insert(&[0.0, 0.0]).unwrap().detected);
        let v = d.insert(&[1.0, 0.0]).unwrap();
        assert!(v.detected);
        assert_eq!(v.change_at, Some(1));
        assert_eq!(d.window_counts(), vec![1]);
        assert_eq!(d.origin(), 2);
    }

    #[test]
    fn reset_keeps_post_change_data() {
        let mut rng = seed::rng(5);
        let mut d = Detector::new(config(ThresholdPolicy::FixedArl { gamma_run: 1000.0 })).unwrap();
        let mut hit = None;
        for i in 1..=2000u64 {
            let v = d
                .insert(&gauss(&mut rng, 2, if i > 300 { 4.0 } else { 0.0 }))
                .unwrap();
            assert!(!v.detected || v.peak_stat >= v.threshold);
            if v.detected {
                hit = Some(v);
                break;
            }
        }
        let v = hit.expect("a 4σ shift is detected");
        let change = v.change_at.unwrap();
        assert!(change < v.time);
        // boundaries are dyadic, so the estimate is only within a factor 2
        assert!((150..=600).contains(&change), "change at {change}");
        // after maintenance the structure is the binary decomposition of what is left
        assert_eq!(d.retained(), v.time - change);
        assert_eq!(d.origin(), change + 1);
        assert_eq!(d.window_counts(), binary_decomposition(d.retained()));
    }

    #[test]
    fn clear_all_reset() {
        let mut cfg = config(ThresholdPolicy::Constant(0.0));
        cfg.reset = ResetPolicy::ClearAll;
        let mut d = Detector::new(cfg).unwrap();
        d.insert(&[0.0, 0.0]).unwrap();
        assert!(d.insert(&[1.0, 1.0]).unwrap().detected);
        assert!(d.windows().is_empty());
        assert_eq!(d.origin(), 3);
        d.insert(&[0.0, 1.0]).unwrap();
        assert_eq!(d.origin(), 3);
        assert_eq!(d.window_counts(), vec![1]);
    }

    #[test]
    fn reference_modes_fall_back_after_detection() {
        let mut rng = seed::rng(6);
        let hist: Vec<Vec<f64>> = (0..64).map(|_| gauss(&mut rng, 2, 0.0)).collect();
        let cfg = config(ThresholdPolicy::FixedArl { gamma_run: 500.0 });
        let mut d = Detector::with_mode(cfg, Mode::WithHistory, Some(&hist)).unwrap();
        let mut detected = false;
        for _ in 0..200 {
            if d.insert(&gauss(&mut rng, 2, 5.0)).unwrap().detected {
                detected = true;
                break;
            }
        }
        assert!(detected);
        assert_eq!(d.mode(), Mode::TwoSample);
    }

    #[test]
    fn work_counter_is_logarithmic() {
        let mut d = Detector::new(DetectorConfig::new(
            KernelSpec::new(1.0, 1).unwrap(),
            1,
            0,
            ThresholdPolicy::Constant(f64::INFINITY),
        ))
        .unwrap();
        d.insert(&[0.0]).unwrap();
        assert!(d.work_counter() <= 4);
        let mut prev = d.work_counter();
        for n in 2..=5000u64 {
            d.insert(&[n as f64]).unwrap();
            let w = d.work_counter();
            assert!(w >= prev);
            prev = w;
            let log = 63 - n.leading_zeros() as u64;
            assert!(w <= 4 * n * (log + 2));
            assert!(d.windows().len() as u64 <= log + 1);
        }
    }
}
