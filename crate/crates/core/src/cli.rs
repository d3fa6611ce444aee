//! Command-line front end.
//!
//! Exit codes: 0 ok, 2 input error, 3 detection with `--halt-on-first`,
//! 4 configuration error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{self, TightnessConfig};
use crate::detector::{Detector, DetectorConfig, Mode};
use crate::error::Error;
use crate::kernel::{median_heuristic, KernelSpec};
use crate::par::{self, Execution};
use crate::seed::{self, Lane};
use crate::streams::{read_csv_path, read_idx, ChangeStreamSpec, CsvPoints, DistributionSpec};
use crate::threshold::{
    calibrate_monte_carlo, estimate_sigma_tilde, Calibration, CalibrationConfig, ThresholdPolicy,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_HALT: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "rffmmd",
    version,
    about = "Online change point detection with RFF-MMD"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stream observations through a detector and print detections.
    Detect(DetectArgs),
    /// Print threshold values over a grid of times.
    Thresholds(ThresholdsArgs),
    /// Calibrate a constant threshold by Monte-Carlo simulation.
    Calibrate(CalibrateArgs),
    /// Run simulation experiments.
    #[command(subcommand)]
    Bench(BenchCommand),
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Average run length under the null.
    Arl(BenchArlArgs),
    /// Detection delay after a change.
    Edd(BenchEddArgs),
    /// Empirical quantiles against theoretical bounds.
    Tightness(TightnessArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Idx,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Gaussian kernel parameter in exp(-gamma |x-y|^2).
    #[arg(long, conflicts_with = "median")]
    pub gamma: Option<f64>,
    /// Fit gamma by the median heuristic on K pilot observations.
    #[arg(long, value_name = "K")]
    pub median: Option<usize>,
    /// Number of random frequencies r.
    #[arg(long, default_value_t = 100)]
    pub features: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExecArgs {
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Run replications sequentially on one thread.
    #[arg(long)]
    pub serial: bool,
}

impl ExecArgs {
    fn execution(&self) -> Execution {
        if self.serial {
            Execution::Serial
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// File path, `-` for CSV on stdin, or `gen:FAMILY:key=value,...`.
    #[arg(long, default_value = "-")]
    pub input: String,
    /// Input format; inferred from the file name when omitted.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value = "arl:10000")]
    pub policy: PolicyArg,
    #[arg(long, default_value = "twosample")]
    pub mode: ModeArg,
    /// Exit with status 3 at the first detection.
    #[arg(long)]
    pub halt_on_first: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ThresholdsArgs {
    #[arg(long)]
    pub policy: PolicyArg,
    /// Comma-separated, strictly increasing times.
    #[arg(long, value_delimiter = ',', default_values_t = default_grid())]
    pub n: Vec<u64>,
    /// Smaller side of the split for scale policies; defaults to n/2.
    #[arg(long)]
    pub min_side: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_grid() -> Vec<u64> {
    (1..=20).map(|k| 1u64 << k).collect()
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Null generator, `gen:FAMILY:key=value,...`.
    #[arg(long)]
    pub input: String,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long, default_value_t = 5000.0)]
    pub target: f64,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Stream length per replication; defaults to 10 x target.
    #[arg(long)]
    pub len: Option<usize>,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArlArgs {
    /// Null generator, `gen:FAMILY:key=value,...`.
    #[arg(long)]
    pub input: String,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Censoring horizon; defaults to 20 x the policy's target run length.
    #[arg(long)]
    pub horizon: Option<u64>,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchEddArgs {
    /// Generator with a change, `gen:FAMILY:d=..,eta=..,shift=..`.
    #[arg(long)]
    pub input: String,
    #[command(flatten)]
    pub kernel: KernelArgs,
    #[arg(long)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Post-change samples before a run is censored.
    #[arg(long, default_value_t = 512)]
    pub horizon: u64,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TightnessArgs {
    /// Null generator, `gen:FAMILY:key=value,...`.
    #[arg(long)]
    pub input: String,
    /// Points per sample.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub features: usize,
    #[arg(long, default_value_t = 1000)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub exec: ExecArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// `arl:G`, `fa:A`, `scale-arl:G[:S]`, `scale-fa:A[:S]`, `mc:PATH` or
/// `const:L`. A missing `S` is estimated from the pilot or reference sample.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyArg {
    Arl(f64),
    Fa(f64),
    ScaleArl(f64, Option<f64>),
    ScaleFa(f64, Option<f64>),
    MonteCarlo(PathBuf),
    Constant(f64),
}

fn num(s: &str, what: &str) -> Result<f64, String> {
    s.parse()
        .map_err(|_| format!("cannot parse {what} from {s:?}"))
}

impl FromStr for PolicyArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| format!("policy {s:?} needs a parameter, e.g. arl:1000"))?;
        let scale = |rest: &str| -> Result<(f64, Option<f64>), String> {
            match rest.split_once(':') {
                Some((a, b)) => Ok((num(a, "policy parameter")?, Some(num(b, "sigma")?))),
                None => Ok((num(rest, "policy parameter")?, None)),
            }
        };
        match kind {
            "arl" => Ok(Self::Arl(num(rest, "run length")?)),
            "fa" => Ok(Self::Fa(num(rest, "alpha")?)),
            "scale-arl" => scale(rest).map(|(g, s)| Self::ScaleArl(g, s)),
            "scale-fa" => scale(rest).map(|(a, s)| Self::ScaleFa(a, s)),
            "mc" => Ok(Self::MonteCarlo(PathBuf::from(rest))),
            "const" => Ok(Self::Constant(num(rest, "threshold")?)),
            _ => Err(format!("unknown policy {kind:?}")),
        }
    }
}

impl PolicyArg {
    fn needs_sigma(&self) -> bool {
        matches!(self, Self::ScaleArl(_, None) | Self::ScaleFa(_, None))
    }

    fn resolve(&self, sigma: Option<f64>) -> Result<ThresholdPolicy, Fail> {
        let sigma_or = |s: Option<f64>| {
            s.or(sigma).ok_or_else(|| {
                Fail::Config(
                    "scale policy needs an explicit sigma (e.g. scale-arl:1000:1.2), \
                     a --median pilot or a reference sample"
                        .into(),
                )
            })
        };
        let policy = match *self {
            Self::Arl(gamma_run) => ThresholdPolicy::FixedArl { gamma_run },
            Self::Fa(alpha) => ThresholdPolicy::UniformFa { alpha },
            Self::ScaleArl(gamma_run, s) => ThresholdPolicy::ScaleArl {
                gamma_run,
                sigma_tilde: sigma_or(s)?,
            },
            Self::ScaleFa(alpha, s) => ThresholdPolicy::ScaleFa {
                alpha,
                sigma_tilde: sigma_or(s)?,
            },
            Self::MonteCarlo(ref path) => {
                let f = File::open(path).map_err(|e| {
                    Fail::Config(format!(
                        "cannot open calibration table {}: {e}",
                        path.display()
                    ))
                })?;
                Calibration::read_table(BufReader::new(f))
                    .map_err(|e| Fail::Config(e.to_string()))?
                    .policy()
            }
            Self::Constant(l) => ThresholdPolicy::Constant(l),
        };
        policy.validate().map_err(|e| Fail::Config(e.to_string()))?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModeArg {
    TwoSample,
    History(PathBuf),
    Known(PathBuf),
}

impl FromStr for ModeArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            None if s == "twosample" => Ok(Self::TwoSample),
            Some(("history", p)) if !p.is_empty() => Ok(Self::History(p.into())),
            Some(("known", p)) if !p.is_empty() => Ok(Self::Known(p.into())),
            _ => Err(format!(
                "mode must be twosample, history:PATH or known:PATH, got {s:?}"
            )),
        }
    }
}

/// Parsed `gen:FAMILY:key=value,...` input.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub pre: DistributionSpec,
    pub eta: Option<u64>,
    pub shift: f64,
    pub len: Option<u64>,
}

impl GeneratorSpec {
    pub fn post(&self) -> DistributionSpec {
        self.pre.shifted(self.shift)
    }
}

impl FromStr for GeneratorSpec {
    type Err = String;

    /// Families: `normal`, `laplace`, `uniform`, `mixed`. Keys: `d`,
    /// `scale` (σ for `mixed`), `eta`, `shift`, `len`.
    fn from_str(s: &str) -> Result<Self, String> {
        let body = s
            .strip_prefix("gen:")
            .ok_or_else(|| format!("generator spec must start with gen:, got {s:?}"))?;
        let (family, params) = body.split_once(':').unwrap_or((body, ""));
        let mut d = 1usize;
        let mut scale = None;
        let mut eta = None;
        let mut shift = 0.0;
        let mut len = None;
        for kv in params.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {kv:?}"))?;
            let int = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| format!("bad value for {k}: {v:?}"))
            };
            match k {
                "d" => d = int(v)? as usize,
                "scale" => scale = Some(num(v, "scale")?),
                "eta" => eta = Some(int(v)?),
                "shift" => shift = num(v, "shift")?,
                "len" => len = Some(int(v)?),
                _ => return Err(format!("unknown generator key {k:?}")),
            }
        }
        if d == 0 {
            return Err("generator dimension must be at least 1".into());
        }
        let pre = match family {
            "normal" | "gaussian" => {
                DistributionSpec::gaussian(vec![0.0; d], vec![scale.unwrap_or(1.0); d])
            }
            "laplace" => DistributionSpec::laplace(vec![0.0; d], vec![scale.unwrap_or(1.0); d]),
            "uniform" => DistributionSpec::uniform(vec![0.0; d], vec![scale.unwrap_or(1.0); d]),
            "mixed" => DistributionSpec::mixed_normal(d, scale.unwrap_or(2.0)),
            _ => return Err(format!("unknown generator family {family:?}")),
        };
        pre.validate().map_err(|e| e.to_string())?;
        Ok(Self {
            pre,
            eta,
            shift,
            len,
        })
    }
}

#[derive(Debug)]
enum Fail {
    Input(String),
    Config(String),
}

impl Fail {
    fn code(&self) -> i32 {
        match self {
            Self::Input(_) => EXIT_INPUT,
            Self::Config(_) => EXIT_CONFIG,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Input(m) | Self::Config(m) => m,
        }
    }
}

fn input(e: impl std::fmt::Display) -> Fail {
    Fail::Input(e.to_string())
}

fn config(e: impl std::fmt::Display) -> Fail {
    Fail::Config(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_CONFIG,
            };
        }
    };
    let result = match &cli.command {
        Command::Detect(a) => cmd_detect(a, stdout, stderr),
        Command::Thresholds(a) => cmd_thresholds(a, stdout),
        Command::Calibrate(a) => cmd_calibrate(a, stdout),
        Command::Bench(BenchCommand::Arl(a)) => cmd_bench_arl(a, stdout),
        Command::Bench(BenchCommand::Edd(a)) => cmd_bench_edd(a, stdout),
        Command::Bench(BenchCommand::Tightness(a)) => cmd_bench_tightness(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}

fn with_output<F>(out: &Option<PathBuf>, stdout: &mut dyn Write, f: F) -> Result<i32, Fail>
where
    F: FnOnce(&mut dyn Write) -> Result<i32, Fail>,
{
    match out {
        Some(path) => {
            let file = File::create(path)
                .map_err(|e| Fail::Input(format!("cannot create {}: {e}", path.display())))?;
            let mut w = BufWriter::new(file);
            let code = f(&mut w)?;
            w.flush().map_err(input)?;
            Ok(code)
        }
        None => f(stdout),
    }
}

fn emit(w: &mut dyn Write, text: &str) -> Result<(), Fail> {
    w.write_all(text.as_bytes()).map_err(input)
}

fn infer_format(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| {
        let name = path.to_string_lossy();
        if name.ends_with(".idx") || name.contains("ubyte") {
            Format::Idx
        } else {
            Format::Csv
        }
    })
}

fn read_points(path: &Path, format: Option<Format>) -> Result<Vec<Vec<f64>>, Fail> {
    let r = match infer_format(path, format) {
        Format::Csv => read_csv_path(path),
        Format::Idx => read_idx(path),
    };
    r.map_err(|e| Fail::Input(format!("{}: {e}", path.display())))
}

type Points<'a> = Box<dyn Iterator<Item = crate::Result<Vec<f64>>> + 'a>;

fn open_input(a: &DetectArgs) -> Result<Points<'static>, Fail> {
    if a.input.starts_with("gen:") {
        let g: GeneratorSpec = a.input.parse().map_err(Fail::Config)?;
        let len = g
            .len
            .ok_or_else(|| Fail::Config("generator input for detect needs len=N".into()))?;
        let spec = ChangeStreamSpec {
            post: g.post(),
            pre: g.pre,
            eta: g.eta,
            seed: seed::lane_seed(a.kernel.seed, Lane::Data),
        };
        crate::streams::StreamSource::validate(&spec).map_err(config)?;
        let points: Vec<Vec<f64>> = spec.iter().map_err(config)?.take(len as usize).collect();
        return Ok(Box::new(points.into_iter().map(Ok)));
    }
    if a.input == "-" {
        if a.format == Some(Format::Idx) {
            return Err(Fail::Config(
                "idx input is only supported from files".into(),
            ));
        }
        return Ok(Box::new(CsvPoints::new(io::stdin())));
    }
    let path = PathBuf::from(&a.input);
    match infer_format(&path, a.format) {
        Format::Idx => Ok(Box::new(read_points(&path, a.format)?.into_iter().map(Ok))),
        Format::Csv => {
            let f = File::open(&path)
                .map_err(|e| Fail::Input(format!("cannot open {}: {e}", path.display())))?;
            let reader: Box<dyn Read> = Box::new(BufReader::new(f));
            Ok(Box::new(CsvPoints::new(reader)))
        }
    }
}

fn check_kernel_args(k: &KernelArgs) -> Result<(), Fail> {
    if k.features == 0 {
        return Err(Fail::Config("--features must be at least 1".into()));
    }
    if k.median == Some(0) || k.median == Some(1) {
        return Err(Fail::Config("--median needs at least 2 points".into()));
    }
    Ok(())
}

fn cmd_detect(a: &DetectArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Fail> {
    check_kernel_args(&a.kernel)?;
    let reference = match &a.mode {
        ModeArg::TwoSample => None,
        ModeArg::History(p) | ModeArg::Known(p) => Some(read_points(p, None)?),
    };
    let mut points = open_input(a)?;

    let mut pilot = Vec::new();
    let gamma = match (a.kernel.gamma, a.kernel.median) {
        (Some(g), _) => Some(g),
        (None, k) => {
            let k = k.unwrap_or(1000);
            while pilot.len() < k {
                match points.next() {
                    Some(p) => pilot.push(p.map_err(input)?),
                    None => break,
                }
            }
            match pilot.len() {
                0 => None,
                1 => {
                    return Err(Fail::Input(
                        "median heuristic needs at least two observations".into(),
                    ))
                }
                _ => Some(median_heuristic(&pilot).map_err(input)?.gamma()),
            }
        }
    };

    let mut head = pilot;
    if head.is_empty() {
        if let Some(p) = points.next() {
            head.push(p.map_err(input)?);
        }
    }
    if head.is_empty() {
        let _ = writeln!(stderr, "zero observations processed");
        return Ok(EXIT_OK);
    }
    let gamma = gamma.expect("set whenever data is present");
    let kernel = KernelSpec::new(gamma, head[0].len()).map_err(config)?;

    let sigma = if a.policy.needs_sigma() {
        let sample = reference.as_deref().unwrap_or(&head);
        if sample.len() < 2 {
            None
        } else {
            Some(estimate_sigma_tilde(sample, &kernel).map_err(input)?)
        }
    } else {
        None
    };
    let policy = a.policy.resolve(sigma)?;
    let cfg = DetectorConfig::new(
        kernel,
        a.kernel.features,
        seed::lane_seed(a.kernel.seed, Lane::Features),
        policy,
    );
    let mut det = match (&a.mode, &reference) {
        (ModeArg::History(_), Some(r)) => Detector::with_mode(cfg, Mode::WithHistory, Some(r)),
        (ModeArg::Known(_), Some(r)) => Detector::with_mode(cfg, Mode::KnownPreChange, Some(r)),
        _ => Detector::new(cfg),
    }
    .map_err(|e| match e {
        Error::DimensionMismatch { .. } => Fail::Input(format!("reference sample: {e}")),
        e => config(e),
    })?;

    with_output(&a.out, stdout, |w| {
        emit(w, "t,change_at,stat,lambda\n")?;
        let mut processed = 0u64;
        let mut detections = 0u64;
        let stream = head.into_iter().map(Ok).chain(points);
        for p in stream {
            let x = p.map_err(input)?;
            let v = det.insert(&x).map_err(input)?;
            processed += 1;
            if v.detected {
                detections += 1;
                emit(
                    w,
                    &format!(
                        "{},{},{},{}\n",
                        v.time,
                        v.change_at.expect("set on detection"),
                        v.peak_stat,
                        v.threshold
                    ),
                )?;
                if a.halt_on_first {
                    w.flush().map_err(input)?;
                    let _ = writeln!(stderr, "halted at observation {processed}");
                    return Ok(EXIT_HALT);
                }
            }
        }
        let _ = writeln!(
            stderr,
            "processed {processed} observations, {detections} detections"
        );
        Ok(EXIT_OK)
    })
}

/// `v` rounded to six significant digits.
pub fn six_digits(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("valid float");
    rounded.to_string()
}

fn cmd_thresholds(a: &ThresholdsArgs, stdout: &mut dyn Write) -> Result<i32, Fail> {
    if a.n.is_empty() || a.n.windows(2).any(|w| w[0] >= w[1]) || a.n[0] == 0 {
        return Err(Fail::Config(
            "--n must be a nonempty, strictly increasing list of positive times".into(),
        ));
    }
    if a.policy.needs_sigma() {
        return Err(Fail::Config(
            "scale policies need an explicit sigma here, e.g. scale-fa:0.01:1".into(),
        ));
    }
    let policy = a.policy.resolve(None)?;
    let scale = matches!(
        policy,
        ThresholdPolicy::ScaleArl { .. } | ThresholdPolicy::ScaleFa { .. }
    );
    let mut s = String::from(if scale {
        "n,min_side,lambda\n"
    } else {
        "n,lambda\n"
    });
    for &n in &a.n {
        let side = a.min_side.unwrap_or((n / 2).max(1));
        let l = six_digits(policy.lambda(n, side));
        if scale {
            s.push_str(&format!("{n},{side},{l}\n"));
        } else {
            s.push_str(&format!("{n},{l}\n"));
        }
    }
    with_output(&a.out, stdout, |w| emit(w, &s).map(|_| EXIT_OK))
}

fn generator(spec: &str) -> Result<GeneratorSpec, Fail> {
    spec.parse().map_err(Fail::Config)
}

// Kernel from --gamma, or by the median heuristic on a pilot sample drawn
// from the generator's pre-change law. The pilot is also returned.
fn pilot_kernel(
    k: &KernelArgs,
    pre: &DistributionSpec,
) -> Result<(KernelSpec, Vec<Vec<f64>>), Fail> {
    check_kernel_args(k)?;
    let size = k.median.unwrap_or(1000);
    let mut rng = seed::rng(seed::lane_seed(k.seed, Lane::Pilot));
    let pilot = pre.sample_n(&mut rng, size);
    let kernel = match k.gamma {
        Some(g) => KernelSpec::new(g, pre.dim()).map_err(config)?,
        None => median_heuristic(&pilot).map_err(config)?,
    };
    Ok((kernel, pilot))
}

fn bench_config(
    k: &KernelArgs,
    policy: &PolicyArg,
    pre: &DistributionSpec,
) -> Result<DetectorConfig, Fail> {
    let (kernel, pilot) = pilot_kernel(k, pre)?;
    let sigma = if policy.needs_sigma() {
        Some(estimate_sigma_tilde(&pilot, &kernel).map_err(config)?)
    } else {
        None
    };
    Ok(DetectorConfig::new(
        kernel,
        k.features,
        seed::lane_seed(k.seed, Lane::Features),
        policy.resolve(sigma)?,
    ))
}

fn cmd_calibrate(a: &CalibrateArgs, stdout: &mut dyn Write) -> Result<i32, Fail> {
    let g = generator(&a.input)?;
    if g.eta.is_some() {
        return Err(Fail::Config(
            "calibration needs a generator without eta".into(),
        ));
    }
    let (kernel, _) = pilot_kernel(&a.kernel, &g.pre)?;
    let det = DetectorConfig::new(
        kernel,
        a.kernel.features,
        0,
        ThresholdPolicy::Constant(f64::INFINITY),
    );
    let cfg = CalibrationConfig {
        target_arl: a.target,
        reps: a.reps,
        stream_len: a.len,
        master_seed: a.kernel.seed,
    };
    let exec = a.exec.execution();
    let cal = par::with_threads(a.exec.threads, || {
        calibrate_monte_carlo(&g.pre, &det, &cfg, exec)
    })
    .map_err(config)?;
    with_output(&a.out, stdout, |w| {
        emit(w, &cal.to_table()).map(|_| EXIT_OK)
    })
}

fn default_horizon(policy: &ThresholdPolicy) -> u64 {
    match *policy {
        ThresholdPolicy::FixedArl { gamma_run } | ThresholdPolicy::ScaleArl { gamma_run, .. } => {
            (20.0 * gamma_run).ceil() as u64
        }
        ThresholdPolicy::MonteCarlo { target_arl, .. } => (20.0 * target_arl).ceil() as u64,
        _ => 10_000,
    }
}

fn cmd_bench_arl(a: &BenchArlArgs, stdout: &mut dyn Write) -> Result<i32, Fail> {
    let g = generator(&a.input)?;
    let cfg = bench_config(&a.kernel, &a.policy, &g.pre)?;
    let horizon = a.horizon.unwrap_or_else(|| default_horizon(&cfg.policy));
    let exec = a.exec.execution();
    let mut report = par::with_threads(a.exec.threads, || {
        bench::run_arl(&cfg, &g.pre, a.reps, horizon, a.kernel.seed, exec)
    })
    .map_err(config)?;
    report.config.insert(1, ("input".into(), a.input.clone()));
    with_output(&a.out, stdout, |w| {
        emit(w, &report.to_csv()).map(|_| EXIT_OK)
    })
}

fn cmd_bench_edd(a: &BenchEddArgs, stdout: &mut dyn Write) -> Result<i32, Fail> {
    let g = generator(&a.input)?;
    let eta = g
        .eta
        .ok_or_else(|| Fail::Config("edd generator needs eta=N".into()))?;
    let cfg = bench_config(&a.kernel, &a.policy, &g.pre)?;
    let exec = a.exec.execution();
    let post = g.post();
    let mut report = par::with_threads(a.exec.threads, || {
        bench::run_edd(
            &cfg,
            &g.pre,
            &post,
            eta,
            a.reps,
            a.horizon,
            a.kernel.seed,
            exec,
        )
    })
    .map_err(config)?;
    report.config.insert(1, ("input".into(), a.input.clone()));
    with_output(&a.out, stdout, |w| {
        emit(w, &report.to_csv()).map(|_| EXIT_OK)
    })
}

fn cmd_bench_tightness(a: &TightnessArgs, stdout: &mut dyn Write) -> Result<i32, Fail> {
    let g = generator(&a.input)?;
    let cfg = TightnessConfig {
        n: a.n,
        features: a.features,
        rounds: a.rounds,
        alpha: a.alpha,
        master_seed: a.seed,
    };
    let exec = a.exec.execution();
    let cmp = par::with_threads(a.exec.threads, || {
        bench::run_threshold_comparison(&g.pre, &cfg, exec)
    })
    .map_err(config)?;
    with_output(&a.out, stdout, |w| emit(w, &cmp.to_csv()).map(|_| EXIT_OK))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("rffmmd").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn policy_parsing() {
        assert_eq!("arl:1000".parse(), Ok(PolicyArg::Arl(1000.0)));
        assert_eq!("fa:0.01".parse(), Ok(PolicyArg::Fa(0.01)));
        assert_eq!(
            "scale-arl:1000:1.2".parse(),
            Ok(PolicyArg::ScaleArl(1000.0, Some(1.2)))
        );
        assert_eq!("scale-fa:0.05".parse(), Ok(PolicyArg::ScaleFa(0.05, None)));
        assert_eq!("const:inf".parse(), Ok(PolicyArg::Constant(f64::INFINITY)));
        assert!("arl".parse::<PolicyArg>().is_err());
        assert!("foo:1".parse::<PolicyArg>().is_err());
        assert!("arl:x".parse::<PolicyArg>().is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("twosample".parse(), Ok(ModeArg::TwoSample));
        assert_eq!(
            "history:h.csv".parse(),
            Ok(ModeArg::History("h.csv".into()))
        );
        assert_eq!("known:k.csv".parse(), Ok(ModeArg::Known("k.csv".into())));
        assert!("history:".parse::<ModeArg>().is_err());
        assert!("known".parse::<ModeArg>().is_err());
    }

    #[test]
    fn generator_parsing() {
        let g: GeneratorSpec = "gen:normal:d=3,eta=64,shift=0.5,len=100".parse().unwrap();
        assert_eq!(g.pre.dim(), 3);
        assert_eq!(g.eta, Some(64));
        assert_eq!(g.len, Some(100));
        assert_eq!(g.post().mean, vec![0.5; 3]);
        assert!("gen:mixed".parse::<GeneratorSpec>().is_ok());
        assert!("gen:cauchy:d=2".parse::<GeneratorSpec>().is_err());
        assert!("gen:normal:d=0".parse::<GeneratorSpec>().is_err());
        assert!("gen:normal:q=1".parse::<GeneratorSpec>().is_err());
        assert!("normal:d=1".parse::<GeneratorSpec>().is_err());
    }

    #[test]
    fn significant_digits() {
        assert_eq!(six_digits(6.037811630026246), "6.03781");
        assert_eq!(six_digits(7.503500458286935), "7.5035");
        assert_eq!(six_digits(123456789.0), "123457000");
        assert_eq!(six_digits(f64::INFINITY), "inf");
    }

    #[test]
    fn thresholds_table() {
        let (code, out, _) = run_str(&["thresholds", "--policy", "arl:1000", "--n", "2,10,100"]);
        assert_eq!(code, 0);
        assert_eq!(out, "n,lambda\n2,6.03781\n10,6.03781\n100,6.03781\n");
        let (_, out, _) = run_str(&["thresholds", "--policy", "fa:0.01", "--n", "1024"]);
        assert_eq!(out, "n,lambda\n1024,7.5035\n");
    }

    #[test]
    fn config_errors_exit_4() {
        assert_eq!(run_str(&["thresholds", "--policy", "fa:2"]).0, EXIT_CONFIG);
        assert_eq!(
            run_str(&["thresholds", "--policy", "arl:10", "--n", "4,2"]).0,
            EXIT_CONFIG
        );
        assert_eq!(
            run_str(&["thresholds", "--policy", "nope:1"]).0,
            EXIT_CONFIG
        );
        assert_eq!(run_str(&["frobnicate"]).0, EXIT_CONFIG);
        assert_eq!(
            run_str(&["thresholds", "--policy", "scale-arl:100"]).0,
            EXIT_CONFIG
        );
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(run_str(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn detect_generated_change() {
        let (code, out, _) = run_str(&[
            "detect",
            "--input",
            "gen:normal:d=2,eta=64,shift=20,len=400",
            "--gamma",
            "0.05",
            "--features",
            "50",
            "--policy",
            "arl:1000",
            "--halt-on-first",
        ]);
        assert_eq!(code, EXIT_HALT);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 2);
        let fields: Vec<f64> = lines[1].split(',').map(|f| f.parse().unwrap()).collect();
        assert!(fields[0] > 64.0);
        assert!((32.0..=128.0).contains(&fields[1]), "{}", lines[1]);
        assert!(fields[2] > fields[3]);
    }

    #[test]
    fn detect_missing_file_is_input_error() {
        let (code, _, err) = run_str(&["detect", "--input", "/nonexistent/x.csv", "--gamma", "1"]);
        assert_eq!(code, EXIT_INPUT);
        assert!(err.contains("cannot open"));
    }

    #[test]
    fn detect_scale_policy_estimates_sigma_from_pilot() {
        let (code, _, _) = run_str(&[
            "detect",
            "--input",
            "gen:normal:d=2,len=300",
            "--median",
            "100",
            "--policy",
            "scale-fa:0.05",
        ]);
        assert_eq!(code, EXIT_OK);
        let (code, _, _) = run_str(&[
            "detect",
            "--input",
            "gen:normal:d=2,len=300",
            "--gamma",
            "0.5",
            "--policy",
            "scale-fa:0.05",
        ]);
        assert_eq!(code, EXIT_CONFIG);
    }
}
