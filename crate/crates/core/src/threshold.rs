//! Rejection thresholds for the detector.
//!
//! Two distribution-free sequences guarantee an average run length
//! (`E∞[N] ≥ γ`) or a uniform false alarm probability (`P∞(N < ∞) ≤ α`).
//! Their scale-dependent variants additionally use the variance proxy
//! `σ̃² = 2E[K(X,X)] − E[K(X,Y)]` of the pre-change law and the smaller side
//! of each split. A Monte-Carlo policy carries a constant calibrated from
//! simulated null streams.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::detector::{Detector, DetectorConfig};
use crate::error::{invalid, Error, Result};
use crate::kernel::ShiftInvariantKernel;
use crate::par::{self, Execution};
use crate::seed::{self, Lane};
use crate::streams::StreamSource;

/// Version tag written on the first line of calibration tables.
pub const CALIBRATION_FORMAT: &str = "rffmmd-calibration v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// Constant threshold achieving `E∞[N] ≥ gamma_run`.
    FixedArl { gamma_run: f64 },
    /// Time-indexed threshold achieving `P∞(N < ∞) ≤ alpha`.
    UniformFa { alpha: f64 },
    /// Scale-dependent ARL threshold.
    ScaleArl { gamma_run: f64, sigma_tilde: f64 },
    /// Scale-dependent false-alarm threshold.
    ScaleFa { alpha: f64, sigma_tilde: f64 },
    /// Constant calibrated by [`calibrate_monte_carlo`].
    MonteCarlo {
        lambda: f64,
        target_arl: f64,
        seed: u64,
    },
    /// A fixed constant, e.g. `f64::INFINITY` to never alarm.
    Constant(f64),
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::FixedArl { gamma_run } => check_gamma(gamma_run),
            Self::UniformFa { alpha } => check_alpha(alpha),
            Self::ScaleArl {
                gamma_run,
                sigma_tilde,
            } => check_gamma(gamma_run).and(check_sigma(sigma_tilde)),
            Self::ScaleFa { alpha, sigma_tilde } => {
                check_alpha(alpha).and(check_sigma(sigma_tilde))
            }
            Self::MonteCarlo {
                lambda, target_arl, ..
            } => {
                if lambda.is_nan() || lambda < 0.0 {
                    return Err(invalid(format!(
                        "calibrated lambda must be >= 0, got {lambda}"
                    )));
                }
                if !(target_arl > 1.0) {
                    return Err(invalid(format!(
                        "target ARL must exceed 1, got {target_arl}"
                    )));
                }
                Ok(())
            }
            Self::Constant(l) => {
                if l.is_nan() {
                    Err(invalid("constant threshold is NaN"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Threshold at absolute time `t` for a split whose smaller side holds
    /// `min_side` observations. Times below 2 are evaluated at 2.
    ///
    /// Assumes [`validate`](Self::validate) succeeded.
    pub fn lambda(&self, t: u64, min_side: u64) -> f64 {
        let n = t.max(2);
        let side = min_side.max(1);
        match *self {
            Self::FixedArl { gamma_run } => arl_bound(gamma_run),
            Self::UniformFa { alpha } => fa_bound(alpha, n as f64),
            Self::ScaleArl {
                gamma_run,
                sigma_tilde,
            } => scale_bound(arl_exponent(gamma_run), side, sigma_tilde),
            Self::ScaleFa { alpha, sigma_tilde } => {
                scale_bound(fa_scale_exponent(alpha, n as f64), side, sigma_tilde)
            }
            Self::MonteCarlo { lambda, .. } => lambda,
            Self::Constant(l) => l,
        }
    }

    /// Whether `lambda` ignores `t`.
    pub fn is_time_invariant(&self) -> bool {
        !matches!(self, Self::UniformFa { .. } | Self::ScaleFa { .. })
    }
}

fn check_gamma(gamma_run: f64) -> Result<()> {
    if gamma_run > 1.0 && gamma_run.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "target run length must exceed 1, got {gamma_run}"
        )))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "sigma_tilde must be positive, got {sigma}"
        )))
    }
}

fn check_time(n: u64) -> Result<()> {
    if n >= 2 {
        Ok(())
    } else {
        Err(invalid(format!("time index must be at least 2, got {n}")))
    }
}

// log(4γ log₂(2γ))
fn arl_exponent(gamma_run: f64) -> f64 {
    (4.0 * gamma_run * (2.0 * gamma_run).log2()).ln()
}

fn arl_bound(gamma_run: f64) -> f64 {
    SQRT_2 + (2.0 * arl_exponent(gamma_run)).sqrt()
}

fn fa_bound(alpha: f64, n: f64) -> f64 {
    let e = (n / alpha).ln() + 2.0 * n.log2().ln() + (2.0 * n).log2().ln();
    SQRT_2 + (2.0 * e).sqrt()
}

// log(n/α) + log log₂ n + ½ log log₂ n
fn fa_scale_exponent(alpha: f64, n: f64) -> f64 {
    let ll = n.log2().ln();
    (n / alpha).ln() + ll + 0.5 * ll
}

fn scale_bound(f: f64, min_side: u64, sigma_tilde: f64) -> f64 {
    4.0 * SQRT_2 * f / (min_side as f64).sqrt() + sigma_tilde * (2.0 * f).sqrt()
}

/// `√2 + √(2 log(4γ log₂(2γ)))`.
pub fn threshold_arl(gamma_run: f64) -> Result<f64> {
    check_gamma(gamma_run)?;
    Ok(arl_bound(gamma_run))
}

/// `√2 + √(2(log(n/α) + 2 log log₂ n + log log₂ 2n))`.
pub fn threshold_fa(alpha: f64, n: u64) -> Result<f64> {
    check_alpha(alpha)?;
    check_time(n)?;
    Ok(fa_bound(alpha, n as f64))
}

/// `4√2 f / √min_side + σ̃ √(2f)` with `f = log(4γ log₂(2γ))`.
pub fn threshold_scale_arl(gamma_run: f64, min_side: u64, sigma_tilde: f64) -> Result<f64> {
    check_gamma(gamma_run)?;
    check_sigma(sigma_tilde)?;
    if min_side == 0 {
        return Err(invalid("min_side must be at least 1"));
    }
    Ok(scale_bound(arl_exponent(gamma_run), min_side, sigma_tilde))
}

/// `4√2 f / √min_side + σ̃ √(2f)` with
/// `f = log(n/α) + log log₂ n + ½ log log₂ n`.
pub fn threshold_scale_fa(alpha: f64, n: u64, min_side: u64, sigma_tilde: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_time(n)?;
    check_sigma(sigma_tilde)?;
    if min_side == 0 {
        return Err(invalid("min_side must be at least 1"));
    }
    Ok(scale_bound(
        fa_scale_exponent(alpha, n as f64),
        min_side,
        sigma_tilde,
    ))
}

/// Plug-in `σ̃ = √(2·mean K(xᵢ,xᵢ) − mean_{i≠j} K(xᵢ,xⱼ))`.
pub fn estimate_sigma_tilde<P, K>(sample: &[P], kernel: &K) -> Result<f64>
where
    P: AsRef<[f64]>,
    K: ShiftInvariantKernel,
{
    let n = sample.len();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "sigma_tilde needs at least 2 points, got {n}"
        )));
    }
    let mut diag = 0.0;
    let mut off = 0.0;
    for (i, a) in sample.iter().enumerate() {
        diag += kernel.eval(a.as_ref(), a.as_ref())?;
        for b in &sample[i + 1..] {
            off += kernel.eval(a.as_ref(), b.as_ref())?;
        }
    }
    let nf = n as f64;
    let sq = 2.0 * diag / nf - 2.0 * off / (nf * (nf - 1.0));
    Ok(sq.max(0.0).sqrt())
}

/// Nearest-rank quantile: the `⌈p·N⌉`-th smallest value (1-based, clamped
/// to `[1, N]`). Reorders `values`.
pub fn nearest_rank_quantile(values: &mut [f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("quantile of an empty set".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!(
            "quantile level must lie in [0, 1], got {p}"
        )));
    }
    let n = values.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    let (_, v, _) = values.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub target_arl: f64,
    pub reps: usize,
    /// Defaults to `⌈10 · target_arl⌉`.
    pub stream_len: Option<usize>,
    pub master_seed: u64,
}

impl CalibrationConfig {
    pub fn new(target_arl: f64, reps: usize, master_seed: u64) -> Self {
        Self {
            target_arl,
            reps,
            stream_len: None,
            master_seed,
        }
    }

    pub fn effective_stream_len(&self) -> usize {
        self.stream_len
            .unwrap_or_else(|| (10.0 * self.target_arl).ceil() as usize)
    }

    pub fn level(&self) -> f64 {
        1.0 - 1.0 / self.target_arl
    }
}

/// Outcome of a Monte-Carlo calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub target_arl: f64,
    pub reps: usize,
    pub stream_len: usize,
    pub features: usize,
    pub gamma: f64,
    pub master_seed: u64,
    pub statistics: usize,
    /// `(level, value)` pairs, ascending in level; the last is the target.
    pub quantiles: Vec<(f64, f64)>,
}

impl Calibration {
    pub fn lambda(&self) -> f64 {
        self.quantiles.last().map(|q| q.1).unwrap_or(f64::NAN)
    }

    pub fn policy(&self) -> ThresholdPolicy {
        ThresholdPolicy::MonteCarlo {
            lambda: self.lambda(),
            target_arl: self.target_arl,
            seed: self.master_seed,
        }
    }

    /// Plain-text table: a version/parameter header line, then one
    /// `level value` line per recorded quantile.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{CALIBRATION_FORMAT} target_arl={} reps={} stream_len={} features={} gamma={} seed={} statistics={}\n",
            self.target_arl,
            self.reps,
            self.stream_len,
            self.features,
            self.gamma,
            self.master_seed,
            self.statistics
        );
        for (p, v) in &self.quantiles {
            let _ = writeln!(s, "{p} {v}");
        }
        s
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_table().as_bytes())?;
        Ok(())
    }

    pub fn read_table<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::CalibrationTable("empty file".into()))??;
        let rest = header
            .strip_prefix(CALIBRATION_FORMAT)
            .ok_or_else(|| Error::CalibrationTable(format!("unknown header {header:?}")))?;
        let mut fields = std::collections::HashMap::new();
        for kv in rest.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::CalibrationTable(format!("bad field {kv:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        fn get<T: std::str::FromStr>(
            f: &std::collections::HashMap<String, String>,
            k: &str,
        ) -> Result<T> {
            f.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::CalibrationTable(format!("missing or bad field {k}")))
        }
        let mut quantiles = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parsed = (|| {
                let p: f64 = it.next()?.parse().ok()?;
                let v: f64 = it.next()?.parse().ok()?;
                Some((p, v))
            })();
            quantiles.push(parsed.ok_or_else(|| {
                Error::CalibrationTable(format!("bad quantile line {}: {line:?}", i + 2))
            })?);
        }
        if quantiles.is_empty() {
            return Err(Error::CalibrationTable("no quantile lines".into()));
        }
        let cal = Self {
            target_arl: get(&fields, "target_arl")?,
            reps: get(&fields, "reps")?,
            stream_len: get(&fields, "stream_len")?,
            features: get(&fields, "features")?,
            gamma: get(&fields, "gamma")?,
            master_seed: get(&fields, "seed")?,
            statistics: get(&fields, "statistics")?,
            quantiles,
        };
        let level = 1.0 - 1.0 / cal.target_arl;
        let last = cal.quantiles.last().expect("nonempty").0;
        if (last - level).abs() > 1e-12 {
            return Err(Error::CalibrationTable(format!(
                "last quantile level {last} does not match target {level}"
            )));
        }
        cal.policy().validate()?;
        Ok(cal)
    }
}

const REPORTED_LEVELS: [f64; 3] = [0.5, 0.9, 0.99];

/// Runs `reps` independent null streams of length `10 × target_arl` through
/// a detector that never alarms, pools every per-insert peak statistic and
/// returns their `1 − 1/target_arl` nearest-rank quantile.
///
/// Replication `i` draws its data and its random features from seeds derived
/// from `master_seed ^ i`, so the result does not depend on scheduling.
pub fn calibrate_monte_carlo<S: StreamSource>(
    source: &S,
    detector: &DetectorConfig,
    cfg: &CalibrationConfig,
    exec: Execution,
) -> Result<Calibration> {
    if !(cfg.target_arl > 1.0) {
        return Err(invalid(format!(
            "target ARL must exceed 1, got {}",
            cfg.target_arl
        )));
    }
    if cfg.reps == 0 {
        return Err(invalid("calibration needs at least one replication"));
    }
    source.validate()?;
    if source.dim() != detector.kernel.dim() {
        return Err(Error::Degenerate(format!(
            "generator dimension {} does not match kernel dimension {}",
            source.dim(),
            detector.kernel.dim()
        )));
    }
    let len = cfg.effective_stream_len();
    if len < 2 {
        return Err(invalid("calibration streams need at least 2 points"));
    }

    let unreachable = DetectorConfig {
        policy: ThresholdPolicy::Constant(f64::INFINITY),
        ..detector.clone()
    };
    let per_rep: Vec<Result<Vec<f64>>> = par::map_indexed(cfg.reps, exec, |i| {
        let rep = seed::replication_seed(cfg.master_seed, i as u64);
        let config = DetectorConfig {
            seed: seed::lane_seed(rep, Lane::Features),
            ..unreachable.clone()
        };
        let mut det = Detector::new(config)?;
        let mut rng = seed::rng(seed::lane_seed(rep, Lane::Data));
        let mut x = vec![0.0; source.dim()];
        let mut peaks = Vec::with_capacity(len - 1);
        for t in 1..=len as u64 {
            source.fill(&mut rng, t, &mut x);
            let v = det.insert(&x)?;
            if v.swept {
                peaks.push(v.peak_stat);
            }
        }
        Ok(peaks)
    });
    let mut pooled = Vec::with_capacity(cfg.reps * (len - 1));
    for r in per_rep {
        pooled.extend(r?);
    }

    let mut levels: Vec<f64> = REPORTED_LEVELS
        .iter()
        .copied()
        .filter(|&p| p < cfg.level())
        .collect();
    levels.push(cfg.level());
    let quantiles = levels
        .into_iter()
        .map(|p| nearest_rank_quantile(&mut pooled, p).map(|v| (p, v)))
        .collect::<Result<Vec<_>>>()?;

    Ok(Calibration {
        target_arl: cfg.target_arl,
        reps: cfg.reps,
        stream_len: len,
        features: detector.features,
        gamma: detector.kernel.gamma(),
        master_seed: cfg.master_seed,
        statistics: pooled.len(),
        quantiles,
    })
}
