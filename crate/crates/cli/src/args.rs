use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "gyromix",
    version,
    about = "Gyro-guided rolling-shutter image alignment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for per-pair and per-row work (default: all cores).
    #[arg(long, global = true, value_parser = parse_jobs)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,
    /// Print errors to stderr as one JSON object.
    #[arg(long, global = true)]
    pub json_errors: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Error,
    Warn,
    Info,
    Debug,
}

impl From<LogLevel> for log::LevelFilter {
    fn from(l: LogLevel) -> Self {
        match l {
            LogLevel::Error => Self::Error,
            LogLevel::Warn => Self::Warn,
            LogLevel::Info => Self::Info,
            LogLevel::Debug => Self::Debug,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a sequence and write flows, logs, correspondences and a manifest.
    Synth(SynthArgs),
    /// Gyro flows for every consecutive frame pair of a gyro/frame log.
    Gyroflow(GyroflowArgs),
    /// Fundamental-mixtures ground-truth flows from correspondence files.
    Gtflow(GtflowArgs),
    /// Fit a per-patch correction from a manifest's gyro and target homographies.
    Fit(FitArgs),
    /// Apply a fitted correction to a manifest's gyro homographies.
    Compensate(CompensateArgs),
    /// Geometry-distance report of flows against annotations.
    Eval(EvalArgs),
    /// Same as `synth`, with defaults sized for training (201 frames).
    ExportTraining(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OmegaKind {
    Constant,
    Sinusoid,
    RandomWalk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OisChoice {
    None,
    Drift,
    Shake,
}

/// Comma-separated fixed-length float list, e.g. `0.1,-0.2,0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Floats<const N: usize>(pub [f64; N]);

impl<const N: usize> FromStr for Floats<N> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(format!("expected {N} comma-separated numbers, got {s:?}"));
        }
        let mut out = [0.0; N];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.parse().map_err(|_| format!("bad number {p:?}"))?;
        }
        Ok(Self(out))
    }
}

/// A length in pixels, or a fraction of the frame height written `0.1h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Length {
    Pixels(f64),
    OfHeight(f64),
}

impl Length {
    pub fn resolve(&self, height: usize) -> f64 {
        match *self {
            Self::Pixels(v) => v,
            Self::OfHeight(f) => f * height as f64,
        }
    }
}

impl std::fmt::Display for Length {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Pixels(v) => write!(f, "{v}"),
            Self::OfHeight(v) => write!(f, "{v}h"),
        }
    }
}

impl FromStr for Length {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (num, rel) = match s.strip_suffix('h') {
            Some(n) => (n, true),
            None => (s.strip_suffix("px").unwrap_or(s), false),
        };
        let v: f64 = num.parse().map_err(|_| format!("bad length {s:?}"))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(format!("length must be positive, got {s:?}"));
        }
        Ok(if rel {
            Self::OfHeight(v)
        } else {
            Self::Pixels(v)
        })
    }
}

fn parse_jobs(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("jobs must be a positive integer, got {s:?}")),
    }
}

fn parse_frames(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("bad frame count {s:?}"))?;
    if n < 2 {
        return Err(format!("need at least 2 frames to form a pair, got {n}"));
    }
    Ok(n)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of frames, at least 2 (default 2, or 201 for export-training).
    #[arg(long, value_parser = parse_frames)]
    pub frames: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Camera config (`key=value`); the built-in 360x270 camera otherwise.
    #[arg(long)]
    pub camera: Option<PathBuf>,
    /// Overrides the camera's readout time, seconds.
    #[arg(long)]
    pub t_s: Option<f64>,
    #[arg(long)]
    pub n_patches: Option<usize>,
    #[arg(long, default_value_t = 200.0)]
    pub gyro_rate: f64,
    /// Gyro noise standard deviation, rad/s.
    #[arg(long, default_value_t = 5e-4)]
    pub gyro_noise: f64,
    #[arg(long, default_value = "0,0,0")]
    pub gyro_bias: Floats<3>,
    #[arg(long, value_enum, default_value_t = OmegaKind::Sinusoid)]
    pub omega: OmegaKind,
    /// Rate for `constant`, amplitude for `sinusoid`, rad/s.
    #[arg(long, default_value = "0.4,0.4,0.15")]
    pub omega_amplitude: Floats<3>,
    #[arg(long, default_value = "1.9,2.3,1.3")]
    pub omega_freq: Floats<3>,
    /// Stationary deviation and correlation time of `random-walk`.
    #[arg(long, default_value_t = 0.3)]
    pub walk_sigma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub walk_tau: f64,
    /// Camera-center velocity, scene units per second
    /// (default: 0.02 z_min per frame along x).
    #[arg(long)]
    pub velocity: Option<Floats<3>>,
    #[arg(long, value_enum, default_value_t = OisChoice::Shake)]
    pub ois: OisChoice,
    #[arg(long, default_value_t = 0.7)]
    pub ois_gain: f64,
    #[arg(long, default_value_t = 8.0)]
    pub ois_cutoff: f64,
    #[arg(long, default_value_t = 15.0)]
    pub ois_smax: f64,
    /// Drift speed, pixels per second.
    #[arg(long, default_value = "150,-90")]
    pub ois_rate: Floats<2>,
    /// Drift lens shift at t = 0, pixels.
    #[arg(long, default_value = "0,0")]
    pub ois_offset: Floats<2>,
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, default_value_t = 8)]
    pub annotations: usize,
    #[arg(long, default_value_t = 2.0)]
    pub z_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub z_max: f64,
}

#[derive(Debug, Args)]
pub struct GyroflowArgs {
    #[arg(long)]
    pub camera: PathBuf,
    #[arg(long)]
    pub gyro: PathBuf,
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each pair's homography array as JSON.
    #[arg(long)]
    pub homographies: bool,
}

#[derive(Debug, Args)]
pub struct GtflowArgs {
    #[arg(long)]
    pub camera: PathBuf,
    /// Correspondence CSV files (`x1,y1,x2,y2`).
    #[arg(long, num_args = 1.., required_unless_present = "manifest")]
    pub corrs: Vec<PathBuf>,
    /// Take the correspondence files listed in a synth manifest.
    #[arg(long, conflicts_with = "corrs")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub n_patches: usize,
    /// Gaussian width in pixels, or relative to the frame height (`0.1h`).
    #[arg(long, default_value = "0.001h")]
    pub sigma: Length,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Weight tying every pair of adjacent patches (0 disables).
    #[arg(long, default_value_t = 1.0)]
    pub smoothness: f64,
    /// Disable Hartley normalization.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Correction JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Leave out every K-th pair (index % K == K-1) for evaluation.
    #[arg(long, default_value_t = 0)]
    pub holdout_every: usize,
}

#[derive(Debug, Args)]
pub struct CompensateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub correction: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlowSource {
    /// `<flows>/<key><suffix>` files.
    Files,
    /// The zero flow (identity warp).
    Zero,
    /// The manifest's gyro flows.
    Gyro,
    /// The manifest's ground-truth flows.
    Gt,
    /// The manifest's full-motion flows.
    Full,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = FlowSource::Files)]
    pub source: FlowSource,
    #[arg(long, required_if_eq("source", "files"))]
    pub flows: Option<PathBuf>,
    #[arg(long, default_value = ".flo")]
    pub suffix: String,
    /// Label stored in the report (default: the flow source).
    #[arg(long)]
    pub method: Option<String>,
    /// Evaluate only pairs with index % K == K-1.
    #[arg(long, default_value_t = 0)]
    pub holdout_every: usize,
    /// Report JSON to write; the text table always goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}
