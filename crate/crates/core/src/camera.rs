//! Rolling-shutter camera description and its `key=value` config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::CameraIntrinsics;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("camera: line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("camera: missing key `{0}`")]
    MissingKey(&'static str),
    #[error("camera: invalid value: {0}")]
    Invalid(String),
}

/// Readout and frame timing of a rolling-shutter sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsTiming {
    /// Delay between first-row and last-row exposure start, seconds.
    pub t_s: f64,
    /// Frame period (1 / fps), seconds.
    pub t_f: f64,
    pub n_patches: usize,
}

impl RsTiming {
    /// `t_s = 0` is accepted as the global-shutter limit.
    pub fn new(t_s: f64, t_f: f64, n_patches: usize) -> Result<Self, CameraError> {
        let t = Self {
            t_s,
            t_f,
            n_patches,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.t_f.is_finite() && self.t_f > 0.0) {
            return Err(CameraError::Invalid(format!(
                "t_f must be positive, got {}",
                self.t_f
            )));
        }
        if !(self.t_s.is_finite() && self.t_s >= 0.0 && self.t_s < self.t_f) {
            return Err(CameraError::Invalid(format!(
                "readout time must satisfy 0 <= t_s < t_f, got t_s={} t_f={}",
                self.t_s, self.t_f
            )));
        }
        if self.n_patches == 0 {
            return Err(CameraError::Invalid("n_patches must be at least 1".into()));
        }
        Ok(())
    }
}

/// Signed axis permutation taking gyro axes to camera axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisMap {
    /// For each camera axis: the gyro axis it reads from and the sign.
    pub axes: [(u8, i8); 3],
}

impl Default for AxisMap {
    fn default() -> Self {
        Self {
            axes: [(0, 1), (1, 1), (2, 1)],
        }
    }
}

impl AxisMap {
    pub fn is_identity(&self) -> bool {
        *self == Self::default()
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for (row, &(axis, sign)) in self.axes.iter().enumerate() {
            m[(row, axis as usize)] = sign as f64;
        }
        m
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|row, _| {
            let (axis, sign) = self.axes[row];
            sign as f64 * v[axis as usize]
        })
    }
}

impl FromStr for AxisMap {
    type Err = CameraError;

    /// Parses e.g. `x,-z,y`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(CameraError::Invalid(format!(
                "axis map needs 3 entries: {s:?}"
            )));
        }
        let mut axes = [(0u8, 1i8); 3];
        let mut seen = [false; 3];
        for (slot, p) in axes.iter_mut().zip(&parts) {
            let (sign, name) = match p.strip_prefix('-') {
                Some(rest) => (-1, rest),
                None => (1, p.strip_prefix('+').unwrap_or(p)),
            };
            let axis = match name {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => return Err(CameraError::Invalid(format!("bad axis {p:?} in {s:?}"))),
            };
            if seen[axis as usize] {
                return Err(CameraError::Invalid(format!("axis repeated in {s:?}")));
            }
            seen[axis as usize] = true;
            *slot = (axis, sign);
        }
        Ok(Self { axes })
    }
}

impl std::fmt::Display for AxisMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names = ["x", "y", "z"];
        let parts: Vec<String> = self
            .axes
            .iter()
            .map(|&(a, s)| format!("{}{}", if s < 0 { "-" } else { "" }, names[a as usize]))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Intrinsics, rolling-shutter timing and frame size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsCameraModel {
    pub intrinsics: CameraIntrinsics,
    pub timing: RsTiming,
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub axis_map: AxisMap,
}

impl RsCameraModel {
    pub fn validate(&self) -> Result<(), CameraError> {
        self.intrinsics
            .validate()
            .map_err(|e| CameraError::Invalid(e.to_string()))?;
        self.timing.validate()?;
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::Invalid(format!(
                "frame size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// A 360x270 phone-like camera at 30 fps with 6 row patches.
    pub fn default_synthetic() -> Self {
        Self {
            intrinsics: CameraIntrinsics {
                fx: 320.0,
                fy: 320.0,
                cx: 180.0,
                cy: 135.0,
                skew: 0.0,
            },
            timing: RsTiming {
                t_s: 0.025,
                t_f: 1.0 / 30.0,
                n_patches: 6,
            },
            width: 360,
            height: 270,
            axis_map: AxisMap::default(),
        }
    }

    /// Parses the `key=value` config text. Unknown keys are rejected;
    /// `skew` and `axis_map` are optional.
    pub fn parse_config(text: &str) -> Result<Self, CameraError> {
        let map = parse_key_values(text)?;
        Self::from_key_values(&map)
    }

    pub fn from_key_values(map: &BTreeMap<String, String>) -> Result<Self, CameraError> {
        fn num<T: FromStr>(
            map: &BTreeMap<String, String>,
            key: &'static str,
        ) -> Result<T, CameraError> {
            let v = map.get(key).ok_or(CameraError::MissingKey(key))?;
            v.parse()
                .map_err(|_| CameraError::Invalid(format!("{key}={v:?} is not a valid number")))
        }
        const KNOWN: [&str; 11] = [
            "fx",
            "fy",
            "cx",
            "cy",
            "skew",
            "t_s",
            "t_f",
            "n_patches",
            "width",
            "height",
            "axis_map",
        ];
        if let Some(k) = map.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(CameraError::Invalid(format!("unknown key `{k}`")));
        }
        let skew = if map.contains_key("skew") {
            num(map, "skew")?
        } else {
            0.0
        };
        let axis_map = match map.get("axis_map") {
            Some(s) => s.parse()?,
            None => AxisMap::default(),
        };
        let cam = Self {
            intrinsics: CameraIntrinsics {
                fx: num(map, "fx")?,
                fy: num(map, "fy")?,
                cx: num(map, "cx")?,
                cy: num(map, "cy")?,
                skew,
            },
            timing: RsTiming {
                t_s: num(map, "t_s")?,
                t_f: num(map, "t_f")?,
                n_patches: num(map, "n_patches")?,
            },
            width: num(map, "width")?,
            height: num(map, "height")?,
            axis_map,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Serializes to the config format; floats use shortest round-trip form.
    pub fn to_config(&self) -> String {
        let k = &self.intrinsics;
        let t = &self.timing;
        let mut s = String::new();
        let _ = writeln!(s, "fx={}", k.fx);
        let _ = writeln!(s, "fy={}", k.fy);
        let _ = writeln!(s, "cx={}", k.cx);
        let _ = writeln!(s, "cy={}", k.cy);
        let _ = writeln!(s, "skew={}", k.skew);
        let _ = writeln!(s, "t_s={}", t.t_s);
        let _ = writeln!(s, "t_f={}", t.t_f);
        let _ = writeln!(s, "n_patches={}", t.n_patches);
        let _ = writeln!(s, "width={}", self.width);
        let _ = writeln!(s, "height={}", self.height);
        if !self.axis_map.is_identity() {
            let _ = writeln!(s, "axis_map={}", self.axis_map);
        }
        s
    }
}

/// `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, CameraError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CameraError::Parse {
            line: i + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CameraError::Parse {
                line: i + 1,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    Ok(map)
}
