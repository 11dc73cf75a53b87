//! Gyro log ingestion, angular-velocity integration and gyro-based
//! homography arrays / flows.
//!
//! Angular velocity `omega` is the rate of the camera-to-camera rotation in
//! camera axes: over a short step `dt` the rotation advances as
//! `R <- exp([omega dt]x) R`. Any fixed sign or axis convention difference of
//! a real device is absorbed by [`AxisMap`](crate::camera::AxisMap).

use std::io::BufRead;

use log::warn;
use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{RsCameraModel, RsTiming};
use crate::geometry::{
    homography_array_to_flow, reorthonormalize, rodrigues_unchecked, rotation_to_homography,
    FlowField, GeometryError, HomographyArray, RotationMatrix,
};

/// Nanoseconds to seconds.
pub const NS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GyroError {
    #[error("gyro: line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("gyro: line {line}: timestamp {t_ns} ns does not increase")]
    Ordering { line: usize, t_ns: i64 },
    #[error("gyro: i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("gyro: invalid interval [{t0}, {t1}]")]
    InvalidInterval { t0: f64, t1: f64 },
    #[error("gyro: no samples")]
    NoData,
    #[error("gyro: patch index {index} out of range for {n_patches} patches")]
    PatchOutOfRange { index: usize, n_patches: usize },
    #[error("gyro: frame {b} does not follow frame {a}")]
    FrameOrder { a: i64, b: i64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One gyroscope reading; `t` in seconds (converted from integer nanoseconds
/// at parse time), `omega` in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroSample {
    pub t: f64,
    pub omega: Vector3<f64>,
}

impl GyroSample {
    pub fn from_ns(t_ns: i64, omega: Vector3<f64>) -> Self {
        Self {
            t: t_ns as f64 * NS,
            omega,
        }
    }
}

/// Start of first-row exposure of a frame, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStamp {
    pub frame_index: i64,
    pub t_start: f64,
}

impl FrameStamp {
    pub fn from_ns(frame_index: i64, t_start_ns: i64) -> Self {
        Self {
            frame_index,
            t_start: t_start_ns as f64 * NS,
        }
    }
}

fn data_lines<R: BufRead>(r: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    r.lines().enumerate().map(|(i, l)| (i + 1, l))
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn field<T: std::str::FromStr>(s: Option<&str>, line: usize, what: &str) -> Result<T, GyroError> {
    let s = s.ok_or_else(|| GyroError::Parse {
        line,
        msg: format!("missing {what}"),
    })?;
    s.trim().parse().map_err(|_| GyroError::Parse {
        line,
        msg: format!("invalid {what} {s:?}"),
    })
}

/// Parses `t_ns,omega_x,omega_y,omega_z` lines.
pub fn parse_gyro_log<R: BufRead>(r: R) -> Result<Vec<GyroSample>, GyroError> {
    let mut out: Vec<GyroSample> = Vec::new();
    let mut last_ns: Option<i64> = None;
    for (line_no, line) in data_lines(r) {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let mut it = line.split(',');
        let t_ns: i64 = field(it.next(), line_no, "timestamp")?;
        let mut w = [0.0f64; 3];
        for (c, name) in w.iter_mut().zip(["omega_x", "omega_y", "omega_z"]) {
            *c = field(it.next(), line_no, name)?;
            if !c.is_finite() {
                return Err(GyroError::Parse {
                    line: line_no,
                    msg: format!("non-finite {name}"),
                });
            }
        }
        if it.next().is_some() {
            return Err(GyroError::Parse {
                line: line_no,
                msg: "expected 4 fields".into(),
            });
        }
        if last_ns.is_some_and(|prev| t_ns <= prev) {
            return Err(GyroError::Ordering {
                line: line_no,
                t_ns,
            });
        }
        last_ns = Some(t_ns);
        out.push(GyroSample::from_ns(t_ns, Vector3::from(w)));
    }
    Ok(out)
}

/// Writes samples whose timestamps are whole nanoseconds; `omega` uses the
/// shortest representation that parses back to the same `f64`.
pub fn format_gyro_log(samples: &[(i64, Vector3<f64>)]) -> String {
    let mut s = String::with_capacity(samples.len() * 48);
    for (t, w) in samples {
        s.push_str(&format!("{t},{},{},{}\n", w.x, w.y, w.z));
    }
    s
}

/// Parses `frame_index,t_start_ns` lines.
pub fn parse_frame_stamps<R: BufRead>(r: R) -> Result<Vec<FrameStamp>, GyroError> {
    let mut out: Vec<FrameStamp> = Vec::new();
    let mut last: Option<(i64, i64)> = None;
    for (line_no, line) in data_lines(r) {
        let line = line?;
        if is_skippable(&line) {
            continue;
        }
        let mut it = line.split(',');
        let idx: i64 = field(it.next(), line_no, "frame index")?;
        let t_ns: i64 = field(it.next(), line_no, "timestamp")?;
        if it.next().is_some() {
            return Err(GyroError::Parse {
                line: line_no,
                msg: "expected 2 fields".into(),
            });
        }
        if let Some((pi, pt)) = last {
            if idx <= pi || t_ns <= pt {
                return Err(GyroError::Ordering {
                    line: line_no,
                    t_ns,
                });
            }
        }
        last = Some((idx, t_ns));
        out.push(FrameStamp::from_ns(idx, t_ns));
    }
    Ok(out)
}

pub fn format_frame_stamps(frames: &[(i64, i64)]) -> String {
    frames.iter().map(|(i, t)| format!("{i},{t}\n")).collect()
}

/// Exposure-start times of patch `i` in the first frame and one frame period
/// later.
pub fn patch_exposure_times(
    f: &FrameStamp,
    timing: &RsTiming,
    i: usize,
) -> Result<(f64, f64), GyroError> {
    if i >= timing.n_patches {
        return Err(GyroError::PatchOutOfRange {
            index: i,
            n_patches: timing.n_patches,
        });
    }
    let t_a = f.t_start + timing.t_s * i as f64 / timing.n_patches as f64;
    Ok((t_a, t_a + timing.t_f))
}

/// Angular velocity at `t`: linear between samples, held constant beyond the
/// first and last sample.
pub fn omega_at(samples: &[GyroSample], t: f64) -> Vector3<f64> {
    let first = &samples[0];
    let last = &samples[samples.len() - 1];
    if t <= first.t {
        return first.omega;
    }
    if t >= last.t {
        return last.omega;
    }
    let j = samples.partition_point(|s| s.t <= t);
    let (a, b) = (&samples[j - 1], &samples[j]);
    let alpha = (t - a.t) / (b.t - a.t);
    a.omega + (b.omega - a.omega) * alpha
}

/// Rotation accumulated over `[t0, t1]`, i.e. `R(t1) R(t0)^T`.
///
/// The interval is split at every sample timestamp; on each piece the rate is
/// affine, and the piece is integrated with the midpoint rate plus the
/// second-order commutator term, which is exact to fourth order for affine
/// rates.
pub fn integrate_rotation(
    samples: &[GyroSample],
    t0: f64,
    t1: f64,
) -> Result<RotationMatrix, GyroError> {
    if samples.is_empty() {
        return Err(GyroError::NoData);
    }
    if !(t0.is_finite() && t1.is_finite()) || t0 > t1 {
        return Err(GyroError::InvalidInterval { t0, t1 });
    }
    if t0 == t1 {
        return Ok(RotationMatrix::identity());
    }
    warn_on_gap(samples, t0, t1);

    let start = samples.partition_point(|s| s.t <= t0);
    let end = samples.partition_point(|s| s.t < t1);
    let mut r = nalgebra::Matrix3::identity();
    let mut u = t0;
    let mut w_u = omega_at(samples, t0);
    let inner = samples[start..end].iter().map(|s| (s.t, s.omega));
    let tail = std::iter::once((t1, omega_at(samples, t1)));
    for (v, w_v) in inner.chain(tail) {
        let dt = v - u;
        if dt > 0.0 {
            let mid = (w_u + w_v) * 0.5;
            let step = mid * dt + (w_v - w_u).cross(&mid) * (dt * dt / 12.0);
            r = rodrigues_unchecked(&step).matrix() * r;
        }
        u = v;
        w_u = w_v;
    }
    Ok(reorthonormalize(r))
}

fn warn_on_gap(samples: &[GyroSample], t0: f64, t1: f64) {
    if samples.len() < 2 {
        warn!("gyro: single sample; holding its rate over [{t0}, {t1}]");
        return;
    }
    let period = (samples[samples.len() - 1].t - samples[0].t) / (samples.len() - 1) as f64;
    let before = samples[0].t - t0;
    let after = t1 - samples[samples.len() - 1].t;
    if before > 2.0 * period || after > 2.0 * period {
        warn!(
            "gyro: interval [{t0}, {t1}] extends past the log [{}, {}]; holding edge rates",
            samples[0].t,
            samples[samples.len() - 1].t
        );
    }
}

/// Per-patch rotation homographies between two frames.
pub fn gyro_homography_array(
    samples: &[GyroSample],
    frame_a: &FrameStamp,
    frame_b: &FrameStamp,
    camera: &RsCameraModel,
) -> Result<HomographyArray, GyroError> {
    if frame_b.t_start <= frame_a.t_start {
        return Err(GyroError::FrameOrder {
            a: frame_a.frame_index,
            b: frame_b.frame_index,
        });
    }
    let mapped;
    let samples = if camera.axis_map.is_identity() {
        samples
    } else {
        mapped = samples
            .iter()
            .map(|s| GyroSample {
                t: s.t,
                omega: camera.axis_map.apply(&s.omega),
            })
            .collect::<Vec<_>>();
        &mapped
    };
    let timing = &camera.timing;
    // Only the frame-a patch times are used: t_b(i) = t_a(i) + t_f.
    let patches = (0..timing.n_patches)
        .map(|i| {
            let (t_a, t_b) = patch_exposure_times(frame_a, timing, i)?;
            let r = integrate_rotation(samples, t_a, t_b)?;
            Ok(rotation_to_homography(&r, &camera.intrinsics)?)
        })
        .collect::<Result<Vec<_>, GyroError>>()?;
    Ok(HomographyArray::new(patches, camera.height)?)
}

/// Gyro-based flow `G_ab`.
pub fn gyro_flow(
    samples: &[GyroSample],
    frame_a: &FrameStamp,
    frame_b: &FrameStamp,
    camera: &RsCameraModel,
) -> Result<FlowField, GyroError> {
    let arr = gyro_homography_array(samples, frame_a, frame_b, camera)?;
    Ok(homography_array_to_flow(&arr, camera.width, camera.height)?)
}
