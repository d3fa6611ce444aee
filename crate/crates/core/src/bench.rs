//! Simulation protocols: average run length under the null, detection delay
//! after a change, and the offline tightness comparison between empirical
//! and theoretical thresholds. Reports serialize to CSV.
//!
//! Every replication `i` derives its seeds from `master_seed ^ i` and draws
//! fresh random features, so a report is identical whether replications
//! run serially or on any number of workers.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::detector::{Detector, DetectorConfig};
use crate::error::{invalid, Result};
use crate::kernel::{median_heuristic, sample_frequencies};
use crate::mmd::{euclidean, split_scale};
use crate::par::{self, Execution};
use crate::seed::{self, Lane};
use crate::streams::{DistributionSpec, StreamSource};
use crate::threshold::{estimate_sigma_tilde, nearest_rank_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Arl,
    Edd,
}

impl ExperimentKind {
    fn name(self) -> &'static str {
        match self {
            Self::Arl => "arl",
            Self::Edd => "edd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub replication: usize,
    /// Stopping time, or the censoring horizon when nothing was detected.
    pub stop_time: u64,
    pub detected: bool,
    pub censored: bool,
    /// Alarm at or before the change (EDD runs only).
    pub false_alarm: bool,
    /// `N − η` for detections after the change.
    pub delay: Option<u64>,
    pub change_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub replications: usize,
    pub mean_stop_time: f64,
    pub stop_time_stderr: f64,
    pub censored: usize,
    pub detections: usize,
    pub false_alarms: usize,
    /// Over detections after the change; false alarms excluded.
    pub mean_delay: Option<f64>,
    pub delay_stderr: Option<f64>,
}

impl Aggregates {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let stops: Vec<f64> = records.iter().map(|r| r.stop_time as f64).collect();
        let delays: Vec<f64> = records
            .iter()
            .filter_map(|r| r.delay.map(|d| d as f64))
            .collect();
        let (mean_stop_time, stop_time_stderr) = mean_and_stderr(&stops);
        let delay_stats = (!delays.is_empty()).then(|| mean_and_stderr(&delays));
        Self {
            replications: records.len(),
            mean_stop_time,
            stop_time_stderr,
            censored: records.iter().filter(|r| r.censored).count(),
            detections: records.iter().filter(|r| r.detected).count(),
            false_alarms: records.iter().filter(|r| r.false_alarm).count(),
            mean_delay: delay_stats.map(|s| s.0),
            delay_stderr: delay_stats.map(|s| s.1),
        }
    }
}

// Summed in record order, so results do not depend on scheduling.
fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    /// `key=value` pairs echoed at the top of the CSV.
    pub config: Vec<(String, String)>,
    pub records: Vec<RunRecord>,
    pub aggregates: Aggregates,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl ExperimentReport {
    fn new(kind: ExperimentKind, config: Vec<(String, String)>, records: Vec<RunRecord>) -> Self {
        let aggregates = Aggregates::from_records(&records);
        Self {
            kind,
            config,
            records,
            aggregates,
        }
    }

    pub fn config_line(&self) -> String {
        let kv: Vec<String> = self
            .config
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("# config {}", kv.join(" "))
    }

    /// `#`-prefixed title and config echo, one column header line, one row
    /// per replication, then a `#`-prefixed aggregate block.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# rffmmd {} report", self.kind.name());
        let _ = writeln!(s, "{}", self.config_line());
        s.push_str("replication,stop_time,detected,censored,false_alarm,delay,change_at\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.replication,
                r.stop_time,
                r.detected as u8,
                r.censored as u8,
                r.false_alarm as u8,
                opt(r.delay),
                opt(r.change_at)
            );
        }
        let a = &self.aggregates;
        let _ = writeln!(s, "# aggregate replications={}", a.replications);
        let _ = writeln!(s, "# aggregate mean_stop_time={}", a.mean_stop_time);
        let _ = writeln!(s, "# aggregate stop_time_stderr={}", a.stop_time_stderr);
        let _ = writeln!(s, "# aggregate censored={}", a.censored);
        let _ = writeln!(s, "# aggregate detections={}", a.detections);
        let _ = writeln!(s, "# aggregate false_alarms={}", a.false_alarms);
        let _ = writeln!(s, "# aggregate mean_delay={}", opt(a.mean_delay));
        let _ = writeln!(s, "# aggregate delay_stderr={}", opt(a.delay_stderr));
        s
    }
}

fn detector_echo(cfg: &DetectorConfig, out: &mut Vec<(String, String)>) {
    out.push(("gamma".into(), cfg.kernel.gamma().to_string()));
    out.push(("dim".into(), cfg.kernel.dim().to_string()));
    out.push(("features".into(), cfg.features.to_string()));
    out.push((
        "policy".into(),
        format!("{:?}", cfg.policy).replace(' ', ""),
    ));
    out.push(("reset".into(), format!("{:?}", cfg.reset)));
}

struct Run {
    stop_time: Option<u64>,
    change_at: Option<u64>,
}

// Feeds one stream until the first alarm or `len` points.
fn run_until_alarm<S: StreamSource>(
    config: &DetectorConfig,
    source: &S,
    rep_seed: u64,
    len: u64,
) -> Result<Run> {
    let config = DetectorConfig {
        seed: seed::lane_seed(rep_seed, Lane::Features),
        ..config.clone()
    };
    let mut det = Detector::new(config)?;
    let mut rng = seed::rng(seed::lane_seed(rep_seed, Lane::Data));
    let mut x = vec![0.0; source.dim()];
    for t in 1..=len {
        source.fill(&mut rng, t, &mut x);
        let v = det.insert(&x)?;
        if v.detected {
            return Ok(Run {
                stop_time: Some(t),
                change_at: v.change_at,
            });
        }
    }
    Ok(Run {
        stop_time: None,
        change_at: None,
    })
}

fn check_source<S: StreamSource>(config: &DetectorConfig, source: &S) -> Result<()> {
    source.validate()?;
    crate::error::check_dim(config.kernel.dim(), source.dim())?;
    config.policy.validate()
}

/// Mean stopping time under `null`, censored at `horizon`.
pub fn run_arl(
    config: &DetectorConfig,
    null: &DistributionSpec,
    reps: usize,
    horizon: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<ExperimentReport> {
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    check_source(config, null)?;
    let runs = par::map_indexed(reps, exec, |i| {
        run_until_alarm(
            config,
            null,
            seed::replication_seed(master_seed, i as u64),
            horizon,
        )
    });
    let records = runs
        .into_iter()
        .enumerate()
        .map(|(i, run)| {
            let run = run?;
            Ok(RunRecord {
                replication: i,
                stop_time: run.stop_time.unwrap_or(horizon),
                detected: run.stop_time.is_some(),
                censored: run.stop_time.is_none(),
                false_alarm: false,
                delay: None,
                change_at: run.change_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut echo = vec![
        ("experiment".into(), "arl".into()),
        ("reps".into(), reps.to_string()),
        ("horizon".into(), horizon.to_string()),
        ("seed".into(), master_seed.to_string()),
    ];
    detector_echo(config, &mut echo);
    Ok(ExperimentReport::new(ExperimentKind::Arl, echo, records))
}

struct PrePost<'a> {
    pre: &'a DistributionSpec,
    post: &'a DistributionSpec,
    eta: u64,
}

impl StreamSource for PrePost<'_> {
    fn dim(&self) -> usize {
        self.pre.dim()
    }

    fn validate(&self) -> Result<()> {
        self.pre.validate()?;
        self.post.validate()?;
        crate::error::check_dim(self.pre.dim(), self.post.dim())
    }

    fn fill(&self, rng: &mut seed::Rng, t: u64, out: &mut [f64]) {
        if t > self.eta {
            self.post.sample_into(rng, out)
        } else {
            self.pre.sample_into(rng, out)
        }
    }
}

/// Detection delay after a change at `eta`. Each replication runs until the
/// first alarm or `eta + horizon` points. Alarms at or before `eta` are
/// recorded as false alarms and left out of the delay mean.
#[allow(clippy::too_many_arguments)]
pub fn run_edd(
    config: &DetectorConfig,
    pre: &DistributionSpec,
    post: &DistributionSpec,
    eta: u64,
    reps: usize,
    horizon: u64,
    master_seed: u64,
    exec: Execution,
) -> Result<ExperimentReport> {
    if eta == 0 {
        return Err(invalid("change index must be at least 1"));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    let source = PrePost { pre, post, eta };
    check_source(config, &source)?;
    let len = eta + horizon;
    let runs = par::map_indexed(reps, exec, |i| {
        run_until_alarm(
            config,
            &source,
            seed::replication_seed(master_seed, i as u64),
            len,
        )
    });
    let records = runs
        .into_iter()
        .enumerate()
        .map(|(i, run)| {
            let run = run?;
            let stop = run.stop_time;
            Ok(RunRecord {
                replication: i,
                stop_time: stop.unwrap_or(len),
                detected: stop.is_some(),
                censored: stop.is_none(),
                false_alarm: stop.is_some_and(|n| n <= eta),
                delay: stop.filter(|&n| n > eta).map(|n| n - eta),
                change_at: run.change_at,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut echo = vec![
        ("experiment".into(), "edd".into()),
        ("reps".into(), reps.to_string()),
        ("eta".into(), eta.to_string()),
        ("horizon".into(), horizon.to_string()),
        ("seed".into(), master_seed.to_string()),
    ];
    detector_echo(config, &mut echo);
    Ok(ExperimentReport::new(ExperimentKind::Edd, echo, records))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessConfig {
    /// Points per side.
    pub n: usize,
    pub features: usize,
    pub rounds: usize,
    pub alpha: f64,
    pub master_seed: u64,
}

impl Default for TightnessConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            features: 1000,
            rounds: 1000,
            alpha: 0.01,
            master_seed: 0,
        }
    }
}

/// Empirical and theoretical `1 − α` quantiles of the unnormalized RFF-MMD
/// between two samples of size `n` from the same law.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdComparison {
    pub config: TightnessConfig,
    pub gamma: f64,
    pub sigma_tilde: f64,
    /// MMD of fresh sample pairs, one per round.
    pub resampled: Vec<f64>,
    /// MMD of random splits of one fixed pooled sample, one per round.
    pub permuted: Vec<f64>,
    pub resampling_quantile: f64,
    pub permutation_quantile: f64,
    /// `(√2 + √(2 log(1/α))) / √(nm/(n+m))`.
    pub distribution_free_bound: f64,
    /// Solution of `2 exp(−½ min(n,m) ε² / (σ̃² + 2√2 ε)) = α`.
    pub bernstein_bound: f64,
}

impl ThresholdComparison {
    /// The four thresholds, ascending.
    pub fn ordered(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![
            ("resampling_quantile", self.resampling_quantile),
            ("permutation_quantile", self.permutation_quantile),
            ("distribution_free_bound", self.distribution_free_bound),
            ("bernstein_bound", self.bernstein_bound),
        ];
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(b.0)));
        v
    }

    pub fn to_csv(&self) -> String {
        let c = &self.config;
        let mut s = String::from("# rffmmd tightness report\n");
        let _ = writeln!(
            s,
            "# config n={} features={} rounds={} alpha={} seed={} gamma={} sigma_tilde={}",
            c.n, c.features, c.rounds, c.alpha, c.master_seed, self.gamma, self.sigma_tilde
        );
        s.push_str("round,resampled,permuted\n");
        for (i, (a, b)) in self.resampled.iter().zip(&self.permuted).enumerate() {
            let _ = writeln!(s, "{i},{a},{b}");
        }
        for (name, v) in self.ordered() {
            let _ = writeln!(s, "# aggregate {name}={v}");
        }
        let names: Vec<&str> = self.ordered().into_iter().map(|(n, _)| n).collect();
        let _ = writeln!(s, "# order {}", names.join("<="));
        s
    }
}

/// `(√2 + √(2 ln(1/α))) / √(nm/(n+m))`.
pub fn distribution_free_bound(n: u64, m: u64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || n == 0 || m == 0 {
        return Err(invalid("need 0 < alpha < 1 and positive sample sizes"));
    }
    Ok(
        (std::f64::consts::SQRT_2 + (2.0 * (1.0 / alpha).ln()).sqrt())
            / split_scale(n as f64, m as f64),
    )
}

/// Smallest `ε` with `2 exp(−½ k ε² / (σ̃² + 2√2 ε)) ≤ α`, `k = min(n, m)`,
/// by bisection to `1e-10`.
pub fn bernstein_bound(min_side: u64, sigma_tilde: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || min_side == 0 || !(sigma_tilde >= 0.0) {
        return Err(invalid(
            "need 0 < alpha < 1, min_side > 0 and sigma_tilde >= 0",
        ));
    }
    let k = min_side as f64;
    let s2 = sigma_tilde * sigma_tilde;
    let tail =
        |eps: f64| 2.0 * (-0.5 * k * eps * eps / (s2 + 2.0 * std::f64::consts::SQRT_2 * eps)).exp();
    if tail(0.0) <= alpha {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while tail(hi) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

fn mean_feature(z: &[f64], rows: impl Iterator<Item = usize>, len: usize, n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; len];
    for i in rows {
        for (a, v) in acc.iter_mut().zip(&z[i * len..(i + 1) * len]) {
            *a += v;
        }
    }
    let inv = 1.0 / n as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Compares resampling and permutation quantiles of the two-sample RFF-MMD
/// against the distribution-free and Bernstein-type bounds. The bandwidth
/// is fitted by the median heuristic and `σ̃` is estimated on the fixed
/// pooled sample; the random features are drawn once.
pub fn run_threshold_comparison(
    null: &DistributionSpec,
    cfg: &TightnessConfig,
    exec: Execution,
) -> Result<ThresholdComparison> {
    null.validate()?;
    if cfg.n == 0 || cfg.rounds == 0 {
        return Err(invalid("need positive sample size and round count"));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(invalid(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    let n = cfg.n;
    let mut pilot_rng = seed::rng(seed::lane_seed(cfg.master_seed, Lane::Pilot));
    let pooled = null.sample_n(&mut pilot_rng, 2 * n);
    let kernel = median_heuristic(&pooled)?;
    let sigma_tilde = estimate_sigma_tilde(&pooled, &kernel)?;
    let freq = sample_frequencies(
        &kernel,
        cfg.features,
        seed::lane_seed(cfg.master_seed, Lane::Features),
    )?;
    let len = freq.feature_len();

    let mut pooled_z = vec![0.0; 2 * n * len];
    for (p, out) in pooled.iter().zip(pooled_z.chunks_exact_mut(len)) {
        freq.map_into(p, out)?;
    }

    let per_round: Vec<Result<(f64, f64)>> = par::map_indexed(cfg.rounds, exec, |i| {
        let rep = seed::replication_seed(cfg.master_seed, i as u64);
        let mut rng = seed::rng(seed::lane_seed(rep, Lane::Data));
        let mut z = vec![0.0; 2 * n * len];
        let mut x = vec![0.0; null.dim()];
        for out in z.chunks_exact_mut(len) {
            null.sample_into(&mut rng, &mut x);
            freq.map_into(&x, out)?;
        }
        let resampled = euclidean(
            &mean_feature(&z, 0..n, len, n),
            &mean_feature(&z, n..2 * n, len, n),
        );

        let mut idx: Vec<usize> = (0..2 * n).collect();
        idx.shuffle(&mut seed::rng(seed::lane_seed(rep, Lane::Permutation)));
        let permuted = euclidean(
            &mean_feature(&pooled_z, idx[..n].iter().copied(), len, n),
            &mean_feature(&pooled_z, idx[n..].iter().copied(), len, n),
        );
        Ok((resampled, permuted))
    });
    let (mut resampled, mut permuted) = (Vec::new(), Vec::new());
    for r in per_round {
        let (a, b) = r?;
        resampled.push(a);
        permuted.push(b);
    }
    let level = 1.0 - cfg.alpha;
    let resampling_quantile = nearest_rank_quantile(&mut resampled.clone(), level)?;
    let permutation_quantile = nearest_rank_quantile(&mut permuted.clone(), level)?;
    Ok(ThresholdComparison {
        config: cfg.clone(),
        gamma: kernel.gamma(),
        sigma_tilde,
        resampled,
        permuted,
        resampling_quantile,
        permutation_quantile,
        distribution_free_bound: distribution_free_bound(n as u64, n as u64, cfg.alpha)?,
        bernstein_bound: bernstein_bound(n as u64, sigma_tilde, cfg.alpha)?,
    })
}
