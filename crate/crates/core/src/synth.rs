//! Synthetic rolling-shutter camera with optical image stabilization.
//!
//! The simulator integrates a known angular-velocity profile into camera
//! orientations, moves the camera center along a straight line, shifts the
//! image plane with an OIS model, and projects a smooth non-planar scene with
//! per-row exposure times. It produces gyro logs, frame stamps,
//! correspondences and exact flows for every consecutive frame pair.
//!
//! Orientation convention matches [`crate::gyro`]: `R(t)` maps world (the
//! camera at `t = 0`) to camera coordinates and evolves as
//! `dR/dt = [omega]x R`. A world point `X` is seen at time `t` at
//! `K R(t) (X - C(t))`, dehomogenized, plus the lens shift `s(t)`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::RsCameraModel;
use crate::eval::{AnnotationPair, Category};
use crate::flo::{save_flo, FloError};
use crate::geometry::{
    homography_array_to_flow, patch_index, rodrigues_unchecked, FlowField, GeometryError,
    Homography, HomographyArray, Point2,
};
use crate::gyro::{
    format_frame_stamps, format_gyro_log, gyro_homography_array, FrameStamp, GyroError, GyroSample,
    NS,
};
use crate::io::{write_homography_array, IoError};
use crate::mixtures::{format_correspondences, Correspondence};

/// Integration step of the orientation and OIS tables, seconds.
const SIM_STEP: f64 = 1e-4;
/// Grid spacing of the filtered random-walk rate, seconds.
const WALK_STEP: f64 = 1e-3;
const FIXED_POINT_TOL: f64 = 1e-11;
const FIXED_POINT_ITERS: usize = 100;
/// Attempts per requested point before giving up.
const RESAMPLE_BUDGET: usize = 200;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synth: invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("synth: scene point behind camera at t = {t}")]
    BehindCamera { t: f64 },
    #[error("synth: could only place {got} of {wanted} visible points for pair ({a}, {b})")]
    Budget {
        a: usize,
        b: usize,
        got: usize,
        wanted: usize,
    },
    #[error("synth: i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Flo(#[from] FloError),
    #[error(transparent)]
    Files(#[from] IoError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Gyro(#[from] GyroError),
}

/// Parametric angular-velocity families, rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OmegaProfile {
    Constant {
        omega: [f64; 3],
    },
    /// `offset + amplitude * sin(2 pi freq t + phase)` per axis.
    Sinusoid {
        offset: [f64; 3],
        amplitude: [f64; 3],
        freq_hz: [f64; 3],
        phase: [f64; 3],
    },
    /// Ornstein-Uhlenbeck rate per axis with stationary deviation `sigma`
    /// and correlation time `tau`, drawn from `seed`.
    RandomWalk {
        sigma: f64,
        tau: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub omega: OmegaProfile,
    /// Constant camera-center velocity in world units per second.
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OisKind {
    Disabled,
    /// Lens shift moving at constant speed, `s(t) = offset + rate * t`, so
    /// consecutive frames differ by a constant image offset.
    Drift {
        offset: [f64; 2],
        rate: [f64; 2],
    },
    /// `s = -gain * lowpass(m)`, `m` the image motion of the principal point
    /// caused by rotation since `t = 0`.
    Shake {
        gain: f64,
        cutoff_hz: f64,
    },
}

/// Image-plane lens shift; every component is clamped to `[-s_max, s_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OisModel {
    pub kind: OisKind,
    pub s_max: f64,
}

impl OisModel {
    pub fn disabled() -> Self {
        Self {
            kind: OisKind::Disabled,
            s_max: 15.0,
        }
    }

    pub fn shake(gain: f64, cutoff_hz: f64, s_max: f64) -> Self {
        Self {
            kind: OisKind::Shake { gain, cutoff_hz },
            s_max,
        }
    }

    pub fn drift(offset: [f64; 2], rate: [f64; 2], s_max: f64) -> Self {
        Self {
            kind: OisKind::Drift { offset, rate },
            s_max,
        }
    }

    pub fn is_enabled(&self) -> bool {
        !matches!(self.kind, OisKind::Disabled)
    }
}

impl Default for OisModel {
    /// Gain 0.7, 8 Hz cutoff, 15 px saturation.
    fn default() -> Self {
        Self::shake(0.7, 8.0, 15.0)
    }
}

/// Points are placed on the smooth surface
/// `z = mid + amp * sin(2 pi 1.3 x / w + phi_x) * cos(2 pi 0.9 y / h + phi_y)`
/// spanning `[z_min, z_max]` in front of the first camera of each pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_points: usize,
    /// Extra points per pair kept apart as evaluation annotations.
    pub n_annotations: usize,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_points: 200,
            n_annotations: 8,
            z_min: 2.0,
            z_max: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub camera: RsCameraModel,
    pub trajectory: Trajectory,
    pub ois: OisModel,
    pub scene: SceneConfig,
    pub n_frames: usize,
    pub gyro_rate_hz: f64,
    /// Standard deviation of additive gyro noise, rad/s.
    pub gyro_noise_std: f64,
    pub gyro_bias: [f64; 3],
    pub seed: u64,
}

impl SynthConfig {
    /// Handheld-like shake with seed-dependent phases, default OIS,
    /// translation of `0.02 z_min` per frame.
    pub fn new(seed: u64, n_frames: usize) -> Self {
        let camera = RsCameraModel::default_synthetic();
        let scene = SceneConfig::default();
        let speed = 0.02 * scene.z_min / camera.timing.t_f;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let phase = std::array::from_fn(|_| rng.random::<f64>() * 2.0 * PI);
        Self {
            camera,
            trajectory: Trajectory {
                omega: OmegaProfile::Sinusoid {
                    offset: [0.0; 3],
                    amplitude: [0.4, 0.4, 0.15],
                    freq_hz: [1.9, 2.3, 1.3],
                    phase,
                },
                velocity: [speed, 0.0, 0.0],
            },
            ois: OisModel::default(),
            scene,
            n_frames,
            gyro_rate_hz: 200.0,
            gyro_noise_std: 5e-4,
            gyro_bias: [0.0; 3],
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.camera
            .validate()
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.n_frames));
        }
        if !(self.gyro_rate_hz.is_finite() && self.gyro_rate_hz >= 2.0 / self.camera.timing.t_f) {
            return bad(format!(
                "gyro rate {} Hz is below twice the frame rate",
                self.gyro_rate_hz
            ));
        }
        if !(self.gyro_noise_std >= 0.0 && self.gyro_noise_std.is_finite()) {
            return bad("gyro noise must be a nonnegative number".into());
        }
        let s = &self.scene;
        if !(s.z_min > 0.0 && s.z_max >= s.z_min && s.z_max.is_finite()) {
            return bad(format!("bad depth range [{}, {}]", s.z_min, s.z_max));
        }
        if self.ois.s_max.is_nan() || self.ois.s_max < 0.0 {
            return bad("s_max must be nonnegative".into());
        }
        match self.ois.kind {
            OisKind::Shake { gain, cutoff_hz } => {
                if !(0.0..=1.0).contains(&gain) || cutoff_hz.is_nan() || cutoff_hz <= 0.0 {
                    return bad(format!("OIS gain {gain} / cutoff {cutoff_hz} out of range"));
                }
            }
            OisKind::Drift { offset, rate } => {
                if !rate.iter().chain(&offset).all(|r| r.is_finite()) {
                    return bad("OIS drift rate must be finite".into());
                }
            }
            OisKind::Disabled => {}
        }
        if let OmegaProfile::RandomWalk { sigma, tau, .. } = self.trajectory.omega {
            if !(sigma >= 0.0 && tau > 0.0) {
                return bad("random walk needs sigma >= 0 and tau > 0".into());
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.trajectory.velocity) || !finite(&self.gyro_bias) {
            return bad("non-finite velocity or gyro bias".into());
        }
        Ok(())
    }

    fn frame_start_ns(&self, i: usize) -> i64 {
        // first frame after a short lead-in so gyro samples bracket it
        let lead = 0.01;
        ((lead + i as f64 * self.camera.timing.t_f) * 1e9).round() as i64
    }
}

enum RateFn {
    Constant(Vector3<f64>),
    Sinusoid {
        offset: Vector3<f64>,
        amplitude: Vector3<f64>,
        freq: Vector3<f64>,
        phase: Vector3<f64>,
    },
    Table(Vec<Vector3<f64>>),
}

impl RateFn {
    fn new(profile: &OmegaProfile, duration: f64) -> Self {
        match profile {
            OmegaProfile::Constant { omega } => Self::Constant(Vector3::from(*omega)),
            OmegaProfile::Sinusoid {
                offset,
                amplitude,
                freq_hz,
                phase,
            } => Self::Sinusoid {
                offset: Vector3::from(*offset),
                amplitude: Vector3::from(*amplitude),
                freq: Vector3::from(*freq_hz),
                phase: Vector3::from(*phase),
            },
            OmegaProfile::RandomWalk { sigma, tau, seed } => {
                let n = (duration / WALK_STEP).ceil() as usize + 2;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                let decay = (-WALK_STEP / tau).exp();
                let kick = sigma * (1.0 - decay * decay).sqrt();
                let mut w = Vector3::from_fn(|_, _| sigma * normal.sample(&mut rng));
                let mut table = Vec::with_capacity(n);
                for _ in 0..n {
                    table.push(w);
                    w = w * decay + Vector3::from_fn(|_, _| kick * normal.sample(&mut rng));
                }
                Self::Table(table)
            }
        }
    }

    fn at(&self, t: f64) -> Vector3<f64> {
        match self {
            Self::Constant(w) => *w,
            Self::Sinusoid {
                offset,
                amplitude,
                freq,
                phase,
            } => Vector3::from_fn(|i, _| {
                offset[i] + amplitude[i] * (2.0 * PI * freq[i] * t + phase[i]).sin()
            }),
            Self::Table(tab) => {
                let s = (t / WALK_STEP).max(0.0);
                let k = (s.floor() as usize).min(tab.len() - 2);
                let a = (s - k as f64).min(1.0);
                tab[k] * (1.0 - a) + tab[k + 1] * a
            }
        }
    }
}

/// Magnus step of `dR/dt = [w]x R` over `[t, t + dt]`.
fn magnus_step(rate: &RateFn, t: f64, dt: f64) -> Matrix3<f64> {
    let w0 = rate.at(t);
    let w1 = rate.at(t + dt);
    let wm = rate.at(t + 0.5 * dt);
    let v = wm * dt + (w1 - w0).cross(&wm) * (dt * dt / 12.0);
    *rodrigues_unchecked(&v).matrix()
}

/// Camera orientation, center and lens shift as functions of time.
pub struct Motion {
    rate: RateFn,
    constant: Option<Vector3<f64>>,
    rots: Vec<Matrix3<f64>>,
    velocity: Vector3<f64>,
    ois: OisModel,
    shifts: Vec<[f64; 2]>,
}

impl Motion {
    fn new(cfg: &SynthConfig, duration: f64) -> Self {
        let rate = RateFn::new(&cfg.trajectory.omega, duration);
        let constant = match cfg.trajectory.omega {
            OmegaProfile::Constant { omega } => Some(Vector3::from(omega)),
            _ => None,
        };
        let n = (duration / SIM_STEP).ceil() as usize + 2;
        let mut rots = Vec::with_capacity(n);
        let mut r = Matrix3::identity();
        for k in 0..n {
            rots.push(r);
            r = magnus_step(&rate, k as f64 * SIM_STEP, SIM_STEP) * r;
        }
        let mut motion = Self {
            rate,
            constant,
            rots,
            velocity: Vector3::from(cfg.trajectory.velocity),
            ois: cfg.ois,
            shifts: Vec::new(),
        };
        motion.shifts = motion.ois_table(&cfg.camera, n);
        motion
    }

    fn ois_table(&self, camera: &RsCameraModel, n: usize) -> Vec<[f64; 2]> {
        let clamp = |v: f64| v.clamp(-self.ois.s_max, self.ois.s_max);
        match self.ois.kind {
            OisKind::Disabled => Vec::new(),
            OisKind::Drift { .. } => Vec::new(),
            OisKind::Shake { gain, cutoff_hz } => {
                let k = &camera.intrinsics;
                let center = Vector3::new(k.cx, k.cy, 1.0);
                let ray = k.inverse() * center;
                let alpha = 1.0 - (-2.0 * PI * cutoff_hz * SIM_STEP).exp();
                let mut state = [0.0f64; 2];
                let mut out = Vec::with_capacity(n);
                for r in &self.rots {
                    let p = k.project(&(r * ray));
                    let m = [p.x - k.cx, p.y - k.cy];
                    out.push([clamp(-gain * state[0]), clamp(-gain * state[1])]);
                    for i in 0..2 {
                        state[i] += alpha * (m[i] - state[i]);
                    }
                }
                out
            }
        }
    }

    /// `R(t)`.
    pub fn orientation(&self, t: f64) -> Matrix3<f64> {
        if let Some(w) = self.constant {
            return *rodrigues_unchecked(&(w * t)).matrix();
        }
        let s = (t / SIM_STEP).max(0.0);
        let k = (s.floor() as usize).min(self.rots.len() - 1);
        let tk = k as f64 * SIM_STEP;
        let dt = t - tk;
        if dt <= 0.0 {
            return self.rots[k];
        }
        magnus_step(&self.rate, tk, dt) * self.rots[k]
    }

    /// `R(t1) R(t0)^T`.
    pub fn relative_rotation(&self, t0: f64, t1: f64) -> Matrix3<f64> {
        self.orientation(t1) * self.orientation(t0).transpose()
    }

    pub fn omega(&self, t: f64) -> Vector3<f64> {
        self.rate.at(t)
    }

    pub fn center(&self, t: f64) -> Vector3<f64> {
        self.velocity * t
    }

    pub fn lens_shift(&self, t: f64) -> Point2 {
        let clamp = |v: f64| v.clamp(-self.ois.s_max, self.ois.s_max);
        match self.ois.kind {
            OisKind::Disabled => Point2::zeros(),
            OisKind::Drift { offset, rate } => Point2::new(
                clamp(offset[0] + rate[0] * t),
                clamp(offset[1] + rate[1] * t),
            ),
            OisKind::Shake { .. } => {
                let s = (t / SIM_STEP).max(0.0);
                let k = (s.floor() as usize).min(self.shifts.len() - 2);
                let a = (s - k as f64).min(1.0);
                let (p, q) = (self.shifts[k], self.shifts[k + 1]);
                Point2::new(p[0] + (q[0] - p[0]) * a, p[1] + (q[1] - p[1]) * a)
            }
        }
    }
}

/// Which effects a projection includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Effects {
    pub translation: bool,
    pub ois: bool,
}

impl Effects {
    pub const FULL: Effects = Effects {
        translation: true,
        ois: true,
    };
    pub const ROTATION_ONLY: Effects = Effects {
        translation: false,
        ois: false,
    };
}

/// One consecutive frame pair with its sampled correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub a: usize,
    pub b: usize,
    pub correspondences: Vec<Correspondence>,
    pub annotations: Vec<Correspondence>,
}

impl SynthPair {
    pub fn key(&self) -> String {
        format!("{:04}_{:04}", self.a, self.b)
    }
}

/// Simulated sequence. Dense flows are produced on demand per pair.
pub struct SynthBundle {
    pub config: SynthConfig,
    pub motion: Motion,
    /// `(t_ns, omega)` exactly as written to the gyro log.
    pub gyro_log: Vec<(i64, Vector3<f64>)>,
    /// `(frame_index, t_start_ns)`.
    pub frames: Vec<(i64, i64)>,
    pub pairs: Vec<SynthPair>,
    depth_phase: [f64; 2],
}

pub fn simulate_sequence(cfg: &SynthConfig) -> Result<SynthBundle, SynthError> {
    cfg.validate()?;
    let timing = cfg.camera.timing;
    let frames: Vec<(i64, i64)> = (0..cfg.n_frames)
        .map(|i| (i as i64, cfg.frame_start_ns(i)))
        .collect();
    let last_start = frames.last().expect("n_frames >= 2").1 as f64 * NS;
    let end = last_start + 2.0 * (timing.t_f + timing.t_s);
    let motion = Motion::new(cfg, end + 0.1);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let depth_phase = [
        rng.random::<f64>() * 2.0 * PI,
        rng.random::<f64>() * 2.0 * PI,
    ];

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let bias = Vector3::from(cfg.gyro_bias);
    let n_samples = (end * cfg.gyro_rate_hz).ceil() as usize + 1;
    let gyro_log = (0..n_samples)
        .map(|k| {
            let t_ns = (k as f64 * 1e9 / cfg.gyro_rate_hz).round() as i64;
            let mut w = motion.omega(t_ns as f64 * NS) + bias;
            if cfg.gyro_noise_std > 0.0 {
                w += Vector3::from_fn(|_, _| cfg.gyro_noise_std * noise.sample(&mut noise_rng));
            }
            (t_ns, w)
        })
        .collect();

    let mut bundle = SynthBundle {
        config: cfg.clone(),
        motion,
        gyro_log,
        frames,
        pairs: Vec::new(),
        depth_phase,
    };
    let pairs = (0..cfg.n_frames - 1)
        .map(|a| {
            let mut pr = ChaCha8Rng::seed_from_u64(cfg.seed);
            pr.set_stream(2 + a as u64);
            let correspondences = bundle.sample_points(a, cfg.scene.n_points, &mut pr)?;
            let annotations = bundle.sample_points(a, cfg.scene.n_annotations, &mut pr)?;
            Ok(SynthPair {
                a,
                b: a + 1,
                correspondences,
                annotations,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    bundle.pairs = pairs;
    Ok(bundle)
}

impl SynthBundle {
    pub fn camera(&self) -> &RsCameraModel {
        &self.config.camera
    }

    pub fn frame_stamp(&self, i: usize) -> FrameStamp {
        let (idx, t) = self.frames[i];
        FrameStamp::from_ns(idx, t)
    }

    fn frame_start(&self, i: usize) -> f64 {
        self.frames[i].1 as f64 * NS
    }

    fn row_time(&self, frame: usize, y: f64) -> f64 {
        let t = &self.config.camera.timing;
        self.frame_start(frame) + t.t_s * y / self.config.camera.height as f64
    }

    /// Inverse scene depth along the optical (lens-shift-free) pixel `q`.
    pub fn inverse_depth(&self, q: &Point2) -> f64 {
        let s = &self.config.scene;
        let cam = &self.config.camera;
        let mid = 0.5 * (s.z_min + s.z_max);
        let amp = 0.5 * (s.z_max - s.z_min);
        let z = mid
            + amp
                * (2.0 * PI * 1.3 * q.x / cam.width as f64 + self.depth_phase[0]).sin()
                * (2.0 * PI * 0.9 * q.y / cam.height as f64 + self.depth_phase[1]).cos();
        1.0 / z
    }

    /// Where pixel `p` of frame `a` appears in frame `a + 1`, solving for the
    /// second frame's exposure row by fixed-point iteration.
    pub fn project_pixel(
        &self,
        a: usize,
        p: &Point2,
        effects: Effects,
    ) -> Result<Point2, SynthError> {
        let cam = &self.config.camera;
        let k = &cam.intrinsics;
        let t_a = self.row_time(a, p.y);
        let q = if effects.ois && self.config.ois.is_enabled() {
            p - self.motion.lens_shift(t_a)
        } else {
            *p
        };
        let ray = self.motion.orientation(t_a).transpose() * k.backproject(&q);
        let inv_depth = if effects.translation {
            self.inverse_depth(&q)
        } else {
            0.0
        };
        let c_a = self.motion.center(t_a);
        let t_s = cam.timing.t_s;
        let mut y = p.y;
        for _ in 0..FIXED_POINT_ITERS {
            let t = self.row_time(a + 1, y);
            let mut x = ray;
            if inv_depth != 0.0 {
                x += (c_a - self.motion.center(t)) * inv_depth;
            }
            let xb = self.motion.orientation(t) * x;
            if xb.z <= 0.0 {
                return Err(SynthError::BehindCamera { t });
            }
            let mut out = k.project(&xb);
            if effects.ois && self.config.ois.is_enabled() {
                out += self.motion.lens_shift(t);
            }
            if t_s == 0.0 || (out.y - y).abs() < FIXED_POINT_TOL {
                return Ok(out);
            }
            y = out.y;
        }
        Ok(self.project_pixel_final(a, p, y, effects))
    }

    fn project_pixel_final(&self, a: usize, p: &Point2, y: f64, effects: Effects) -> Point2 {
        // Non-converged fall-back: evaluate at the last iterate.
        let cam = &self.config.camera;
        let k = &cam.intrinsics;
        let t_a = self.row_time(a, p.y);
        let q = if effects.ois {
            p - self.motion.lens_shift(t_a)
        } else {
            *p
        };
        let ray = self.motion.orientation(t_a).transpose() * k.backproject(&q);
        let t = self.row_time(a + 1, y);
        let mut out = k.project(&(self.motion.orientation(t) * ray));
        if effects.ois {
            out += self.motion.lens_shift(t);
        }
        out
    }

    fn sample_points(
        &self,
        a: usize,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Correspondence>, SynthError> {
        let cam = &self.config.camera;
        let (w, h) = ((cam.width - 1) as f64, (cam.height - 1) as f64);
        let mut out = Vec::with_capacity(n);
        let mut attempts = 0;
        while out.len() < n {
            if attempts >= RESAMPLE_BUDGET * n.max(1) {
                return Err(SynthError::Budget {
                    a,
                    b: a + 1,
                    got: out.len(),
                    wanted: n,
                });
            }
            attempts += 1;
            let p1 = Point2::new(rng.random::<f64>() * w, rng.random::<f64>() * h);
            let p2 = match self.project_pixel(a, &p1, Effects::FULL) {
                Ok(p) => p,
                Err(SynthError::BehindCamera { .. }) => continue,
                Err(e) => return Err(e),
            };
            if (0.0..=w).contains(&p2.x) && (0.0..=h).contains(&p2.y) {
                out.push(Correspondence { p1, p2 });
            }
        }
        Ok(out)
    }

    fn dense_flow(&self, a: usize, effects: Effects) -> Result<FlowField, SynthError> {
        let cam = &self.config.camera;
        let (w, h) = (cam.width, cam.height);
        let mut uv = vec![[0.0; 2]; w * h];
        uv.par_chunks_mut(w).enumerate().try_for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let p = Point2::new(x as f64, y as f64);
                let q = self.project_pixel(a, &p, effects)?;
                *out = [q.x - p.x, q.y - p.y];
            }
            Ok::<(), SynthError>(())
        })?;
        Ok(FlowField::from_vec(w, h, uv)?)
    }

    /// Exact flow with rotation, translation, OIS and rolling shutter.
    pub fn full_flow(&self, pair: usize) -> Result<FlowField, SynthError> {
        self.dense_flow(self.pairs[pair].a, Effects::FULL)
    }

    /// Exact rolling-shutter flow of rotation alone (no OIS, no translation).
    pub fn rotation_flow(&self, pair: usize) -> Result<FlowField, SynthError> {
        self.dense_flow(self.pairs[pair].a, Effects::ROTATION_ONLY)
    }

    /// Flow of the per-patch rotation model, evaluated by rotating each
    /// pixel's viewing ray (no homography matrices involved).
    pub fn patch_model_flow(&self, pair: usize) -> Result<FlowField, SynthError> {
        let cam = &self.config.camera;
        let (w, h, n) = (cam.width, cam.height, cam.timing.n_patches);
        let rels: Vec<Matrix3<f64>> = (0..n)
            .map(|i| {
                let (t0, t1) = self.patch_times(pair, i);
                self.motion.relative_rotation(t0, t1)
            })
            .collect();
        let k = &cam.intrinsics;
        let mut uv = Vec::with_capacity(w * h);
        for y in 0..h {
            let r = &rels[patch_index(y as f64, n, h)];
            for x in 0..w {
                let p = Point2::new(x as f64, y as f64);
                let q = k.project(&(r * k.backproject(&p)));
                uv.push([q.x - p.x, q.y - p.y]);
            }
        }
        Ok(FlowField::from_vec(w, h, uv)?)
    }

    /// Exposure start of patch `i` in the pair's first frame and one frame
    /// period later.
    pub fn patch_times(&self, pair: usize, i: usize) -> (f64, f64) {
        let t = &self.config.camera.timing;
        let t0 = self.frame_start(self.pairs[pair].a) + t.t_s * i as f64 / t.n_patches as f64;
        (t0, t0 + t.t_f)
    }

    /// True per-patch rotation homographies `K R(t_b) R(t_a)^T K^-1`.
    pub fn rotation_homographies(&self, pair: usize) -> Result<HomographyArray, SynthError> {
        self.patch_homographies(pair, false)
    }

    /// Per-patch homographies including the lens shift:
    /// `T(s(t_b)) K R(t_b) R(t_a)^T K^-1 T(-s(t_a))`. This is the
    /// translation-free motion a perfect image-based estimate would recover
    /// and serves as the compensation target.
    pub fn motion_homographies(&self, pair: usize) -> Result<HomographyArray, SynthError> {
        self.patch_homographies(pair, true)
    }

    fn patch_homographies(&self, pair: usize, ois: bool) -> Result<HomographyArray, SynthError> {
        let cam = &self.config.camera;
        let k = cam.intrinsics.matrix();
        let k_inv = cam.intrinsics.inverse();
        let hs = (0..cam.timing.n_patches)
            .map(|i| {
                let (t0, t1) = self.patch_times(pair, i);
                let mut m = k * self.motion.relative_rotation(t0, t1) * k_inv;
                if ois && self.config.ois.is_enabled() {
                    let (s0, s1) = (self.motion.lens_shift(t0), self.motion.lens_shift(t1));
                    m = Homography::translation(s1.x, s1.y).matrix()
                        * m
                        * Homography::translation(-s0.x, -s0.y).matrix();
                }
                Homography::new(m)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(HomographyArray::new(hs, cam.height)?)
    }

    /// Ground-truth training target: flow of [`Self::motion_homographies`].
    pub fn gt_flow(&self, pair: usize) -> Result<FlowField, SynthError> {
        let cam = &self.config.camera;
        Ok(homography_array_to_flow(
            &self.motion_homographies(pair)?,
            cam.width,
            cam.height,
        )?)
    }

    /// Gyro samples as a reader of the written log would see them.
    pub fn gyro_samples(&self) -> Vec<GyroSample> {
        self.gyro_log
            .iter()
            .map(|(t, w)| GyroSample::from_ns(*t, *w))
            .collect()
    }

    pub fn gyro_homographies(&self, pair: usize) -> Result<HomographyArray, SynthError> {
        self.gyro_homographies_from(&self.gyro_samples(), pair)
    }

    fn gyro_homographies_from(
        &self,
        samples: &[GyroSample],
        pair: usize,
    ) -> Result<HomographyArray, SynthError> {
        let p = &self.pairs[pair];
        Ok(gyro_homography_array(
            samples,
            &self.frame_stamp(p.a),
            &self.frame_stamp(p.b),
            self.camera(),
        )?)
    }

    pub fn gyro_flow(&self, pair: usize) -> Result<FlowField, SynthError> {
        let cam = self.camera();
        Ok(homography_array_to_flow(
            &self.gyro_homographies(pair)?,
            cam.width,
            cam.height,
        )?)
    }

    pub fn annotation(&self, pair: usize) -> AnnotationPair {
        let p = &self.pairs[pair];
        AnnotationPair {
            category: Category::Synth,
            points_a: p.annotations.iter().map(|c| [c.p1.x, c.p1.y]).collect(),
            points_b: p.annotations.iter().map(|c| [c.p2.x, c.p2.y]).collect(),
        }
    }
}

/// One exported frame pair; paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPair {
    pub a: usize,
    pub b: usize,
    pub gyro_flow: String,
    pub gt_flow: String,
    pub full_flow: String,
    pub corrs: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gyro_homographies: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_homographies: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pairs: Vec<ManifestPair>,
    pub camera: RsCameraModel,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SynthConfig>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), SynthError> {
    fs::write(path, contents).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the camera config, gyro and frame logs, and per pair the gyro,
/// ground-truth and full-motion flows, correspondences, annotations and
/// homography arrays, then `manifest.json`. Pairs are written in parallel.
pub fn export_training_pairs(bundle: &SynthBundle, out_dir: &Path) -> Result<Manifest, SynthError> {
    let pairs_dir = out_dir.join("pairs");
    fs::create_dir_all(&pairs_dir).map_err(|source| SynthError::Io {
        path: pairs_dir.clone(),
        source,
    })?;
    write_file(&out_dir.join("camera.cfg"), bundle.camera().to_config())?;
    write_file(&out_dir.join("gyro.csv"), format_gyro_log(&bundle.gyro_log))?;
    write_file(
        &out_dir.join("frames.csv"),
        format_frame_stamps(&bundle.frames),
    )?;

    let samples = bundle.gyro_samples();
    let cam = bundle.camera();
    let entries = (0..bundle.pairs.len())
        .into_par_iter()
        .map(|i| {
            let pair = &bundle.pairs[i];
            let key = pair.key();
            let rel = |suffix: &str| format!("pairs/{key}.{suffix}");
            let entry = ManifestPair {
                a: pair.a,
                b: pair.b,
                gyro_flow: rel("gyro.flo"),
                gt_flow: rel("gt.flo"),
                full_flow: rel("full.flo"),
                corrs: rel("corrs.csv"),
                annotations: Some(rel("ann.json")),
                gyro_homographies: Some(rel("gyro.h.json")),
                gt_homographies: Some(rel("gt.h.json")),
            };
            let gyro_h = bundle.gyro_homographies_from(&samples, i)?;
            let gyro = homography_array_to_flow(&gyro_h, cam.width, cam.height)?;
            let gt_h = bundle.motion_homographies(i)?;
            let gt = homography_array_to_flow(&gt_h, cam.width, cam.height)?;
            save_flo(&gyro, out_dir.join(&entry.gyro_flow))?;
            save_flo(&gt, out_dir.join(&entry.gt_flow))?;
            save_flo(&bundle.full_flow(i)?, out_dir.join(&entry.full_flow))?;
            write_file(
                &out_dir.join(&entry.corrs),
                format_correspondences(&pair.correspondences),
            )?;
            write_file(
                &out_dir.join(entry.annotations.as_ref().expect("set above")),
                bundle.annotation(i).to_json(),
            )?;
            write_homography_array(
                &gyro_h,
                &out_dir.join(entry.gyro_homographies.as_ref().expect("set above")),
            )?;
            write_homography_array(
                &gt_h,
                &out_dir.join(entry.gt_homographies.as_ref().expect("set above")),
            )?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let manifest = Manifest {
        pairs: entries,
        camera: *cam,
        seed: bundle.config.seed,
        config: Some(bundle.config.clone()),
    };
    write_file(&out_dir.join(MANIFEST_FILE), manifest.to_json())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still_config(seed: u64) -> SynthConfig {
        let mut cfg = SynthConfig::new(seed, 2);
        cfg.trajectory.omega = OmegaProfile::Constant { omega: [0.0; 3] };
        cfg.trajectory.velocity = [0.0; 3];
        cfg.ois = OisModel::disabled();
        cfg.gyro_noise_std = 0.0;
        cfg.scene.n_points = 20;
        cfg.camera.width = 40;
        cfg.camera.height = 30;
        cfg
    }

    #[test]
    fn still_camera_has_zero_motion() {
        let b = simulate_sequence(&still_config(3)).unwrap();
        for c in &b.pairs[0].correspondences {
            assert!((c.p1 - c.p2).norm() < 1e-12);
        }
        for f in [b.full_flow(0).unwrap(), b.rotation_flow(0).unwrap()] {
            assert!(f.max_abs_diff(&FlowField::zeros(40, 30)).unwrap() < 1e-12);
        }
        let g = b.gyro_flow(0).unwrap();
        assert!(g.data().iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = still_config(0);
        cfg.n_frames = 1;
        assert!(matches!(
            simulate_sequence(&cfg),
            Err(SynthError::InvalidConfig(_))
        ));
        let mut cfg = still_config(0);
        cfg.gyro_rate_hz = 50.0;
        assert!(matches!(
            simulate_sequence(&cfg),
            Err(SynthError::InvalidConfig(_))
        ));
    }

    #[test]
    fn lens_shift_is_bounded() {
        let mut cfg = SynthConfig::new(5, 40);
        cfg.ois = OisModel::shake(1.0, 8.0, 4.0);
        cfg.scene.n_points = 10;
        let b = simulate_sequence(&cfg).unwrap();
        let mut peak = 0.0f64;
        for k in 0..2000 {
            let s = b.motion.lens_shift(k as f64 * 7e-4);
            peak = peak.max(s.x.abs()).max(s.y.abs());
        }
        assert!(peak <= 4.0);
        assert!(peak > 1.0, "shake should reach the clamp, got {peak}");
    }

    #[test]
    fn random_walk_is_reproducible() {
        let mut cfg = still_config(9);
        cfg.trajectory.omega = OmegaProfile::RandomWalk {
            sigma: 0.3,
            tau: 0.2,
            seed: 17,
        };
        let a = simulate_sequence(&cfg).unwrap();
        let b = simulate_sequence(&cfg).unwrap();
        assert_eq!(a.gyro_log, b.gyro_log);
        assert_eq!(a.pairs, b.pairs);
        assert!(a.gyro_log.iter().any(|(_, w)| w.norm() > 0.01));
    }
}
