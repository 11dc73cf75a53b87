//! Parametric OIS compensation: a corrective homography per row patch plus a
//! global bias flow, fitted by linear least squares from pairs of gyro and
//! ground-truth homography arrays.

use std::path::Path;

use nalgebra::{Matrix3, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    homography_array_to_flow, FlowField, GeometryError, Homography, HomographyArray, Point2,
};
use crate::io::{read_json, write_json, IoError};

pub const MIN_FIT_PAIRS: usize = 4;
/// Reciprocal condition number below which the normal matrix is singular.
const RCOND_MIN: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum CompensatorError {
    #[error("compensator: need at least {MIN_FIT_PAIRS} pairs, got {0}")]
    TooFewPairs(usize),
    #[error("compensator: patch count mismatch: expected {expected}, got {got}")]
    PatchMismatch { expected: usize, got: usize },
    #[error("compensator: degenerate fit for patch {patch}: {msg}")]
    Degenerate { patch: usize, msg: String },
    #[error("compensator: invalid correction: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CorrectionFile", into = "CorrectionFile")]
pub struct PatchCorrection {
    mats: Vec<Matrix3<f64>>,
    bias: Vector2<f64>,
}

#[derive(Serialize, Deserialize)]
struct CorrectionFile {
    n_patches: usize,
    mats: Vec<[f64; 9]>,
    bias: [f64; 2],
}

impl From<PatchCorrection> for CorrectionFile {
    fn from(c: PatchCorrection) -> Self {
        Self {
            n_patches: c.mats.len(),
            mats: c
                .mats
                .iter()
                .map(|m| std::array::from_fn(|k| m[(k / 3, k % 3)]))
                .collect(),
            bias: [c.bias.x, c.bias.y],
        }
    }
}

impl TryFrom<CorrectionFile> for PatchCorrection {
    type Error = CompensatorError;

    fn try_from(f: CorrectionFile) -> Result<Self, Self::Error> {
        if f.n_patches != f.mats.len() {
            return Err(CompensatorError::Invalid(format!(
                "n_patches is {} but {} matrices are listed",
                f.n_patches,
                f.mats.len()
            )));
        }
        let mats = f.mats.iter().map(|v| Matrix3::from_row_slice(v)).collect();
        Self::new(mats, Vector2::from(f.bias))
    }
}

impl PatchCorrection {
    pub fn new(mats: Vec<Matrix3<f64>>, bias: Vector2<f64>) -> Result<Self, CompensatorError> {
        if mats.is_empty() {
            return Err(CompensatorError::Invalid("no patches".into()));
        }
        if !bias.iter().all(|v| v.is_finite()) {
            return Err(CompensatorError::Invalid("bias must be finite".into()));
        }
        for (i, m) in mats.iter().enumerate() {
            if !m.iter().all(|v| v.is_finite()) || m.determinant().abs() < 1e-12 {
                return Err(CompensatorError::Degenerate {
                    patch: i,
                    msg: "matrix is not invertible".into(),
                });
            }
        }
        Ok(Self { mats, bias })
    }

    pub fn identity(n_patches: usize) -> Self {
        Self {
            mats: vec![Matrix3::identity(); n_patches.max(1)],
            bias: Vector2::zeros(),
        }
    }

    pub fn n_patches(&self) -> usize {
        self.mats.len()
    }

    pub fn mats(&self) -> &[Matrix3<f64>] {
        &self.mats
    }

    pub fn bias(&self) -> Vector2<f64> {
        self.bias
    }

    /// `{C_i H_i}` for a gyro array.
    pub fn correct_array(
        &self,
        gyro: &HomographyArray,
    ) -> Result<HomographyArray, CompensatorError> {
        if gyro.patch_count() != self.mats.len() {
            return Err(CompensatorError::PatchMismatch {
                expected: self.mats.len(),
                got: gyro.patch_count(),
            });
        }
        let hs = self
            .mats
            .iter()
            .zip(gyro.patches())
            .map(|(c, h)| Homography::new(c * h.matrix()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(HomographyArray::new(hs, gyro.frame_height())?)
    }

    pub fn save(&self, path: &Path) -> Result<(), CompensatorError> {
        Ok(write_json(self, path)?)
    }

    pub fn load(path: &Path) -> Result<Self, CompensatorError> {
        Ok(read_json(path)?)
    }
}

/// Per patch, `C_i = argmin sum ||C H_gyro - H_gt||_F^2` over homographies
/// scaled to `h22 = 1`, i.e. `C = (sum H_gt H_gyro^T)(sum H_gyro H_gyro^T)^-1`.
/// Matrices are first conjugated into image-centered coordinates scaled to
/// `[-1, 1]` so that translation and perspective entries are weighted
/// comparably; the result is mapped back to pixels. The bias is the mean
/// residual flow at the image center after correction.
pub fn fit_correction(
    pairs: &[(HomographyArray, HomographyArray)],
    width: usize,
    height: usize,
) -> Result<PatchCorrection, CompensatorError> {
    if pairs.len() < MIN_FIT_PAIRS {
        return Err(CompensatorError::TooFewPairs(pairs.len()));
    }
    let n = pairs[0].0.patch_count();
    for (g, t) in pairs {
        for arr in [g, t] {
            if arr.patch_count() != n {
                return Err(CompensatorError::PatchMismatch {
                    expected: n,
                    got: arr.patch_count(),
                });
            }
        }
    }
    let (cond, cond_inv) = conditioning(width, height);
    let unit = |h: &Homography| {
        let m = cond * h.matrix() * cond_inv;
        m / m[(2, 2)]
    };
    let mut mats = Vec::with_capacity(n);
    for i in 0..n {
        let mut gg = Matrix3::zeros();
        let mut tg = Matrix3::zeros();
        for (g, t) in pairs {
            let g = unit(&g.patches()[i]);
            let t = unit(&t.patches()[i]);
            gg += g * g.transpose();
            tg += t * g.transpose();
        }
        let svd = gg.svd(false, false);
        let rcond = svd.singular_values.min() / svd.singular_values.max();
        if rcond.is_nan() || rcond <= RCOND_MIN {
            return Err(CompensatorError::Degenerate {
                patch: i,
                msg: format!("gyro homographies span a rank-deficient set (rcond {rcond:e})"),
            });
        }
        let inv = gg.try_inverse().ok_or(CompensatorError::Degenerate {
            patch: i,
            msg: "normal matrix not invertible".into(),
        })?;
        mats.push(cond_inv * tg * inv * cond);
    }
    let corr = PatchCorrection::new(mats, Vector2::zeros())?;

    let center = Point2::new(0.5 * (width as f64 - 1.0), 0.5 * (height as f64 - 1.0));
    let mut bias = Vector2::zeros();
    for (g, t) in pairs {
        let fixed = corr.correct_array(g)?;
        let patch = t.patch_of_row(center.y);
        let want = t.patches()[patch].apply(&center);
        let got = fixed.patches()[patch].apply(&center);
        match (want, got) {
            (Some(w), Some(p)) => bias += w - p,
            _ => {
                return Err(CompensatorError::Degenerate {
                    patch,
                    msg: "image center maps to infinity".into(),
                })
            }
        }
    }
    bias /= pairs.len() as f64;
    PatchCorrection::new(corr.mats, bias)
}

/// Maps pixels to `[-1, 1]` around the image center, and back.
fn conditioning(width: usize, height: usize) -> (Matrix3<f64>, Matrix3<f64>) {
    let half = 0.5 * width.max(height).max(2) as f64;
    let (cx, cy) = (0.5 * width as f64, 0.5 * height as f64);
    let fwd = Matrix3::new(
        1.0 / half,
        0.0,
        -cx / half,
        0.0,
        1.0 / half,
        -cy / half,
        0.0,
        0.0,
        1.0,
    );
    let inv = Matrix3::new(half, 0.0, cx, 0.0, half, cy, 0.0, 0.0, 1.0);
    (fwd, inv)
}

/// Flow of `{C_i H_i}` plus the bias.
pub fn apply_correction(
    c: &PatchCorrection,
    gyro: &HomographyArray,
    width: usize,
    height: usize,
) -> Result<FlowField, CompensatorError> {
    let flow = homography_array_to_flow(&c.correct_array(gyro)?, width, height)?;
    Ok(if c.bias == Vector2::zeros() {
        flow
    } else {
        flow.offset(c.bias.x, c.bias.y)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn array(shifts: &[(f64, f64)]) -> HomographyArray {
        let hs = shifts
            .iter()
            .map(|&(x, y)| Homography::translation(x, y))
            .collect();
        HomographyArray::new(hs, 40).unwrap()
    }

    fn rotation_array(a: f64, b: f64) -> HomographyArray {
        let m = |t: f64| {
            Matrix3::new(
                t.cos(),
                -t.sin(),
                5.0 * a,
                t.sin(),
                t.cos(),
                3.0 * b,
                1e-4 * a,
                -1e-4 * b,
                1.0,
            )
        };
        let hs = [a, b]
            .iter()
            .map(|&t| Homography::new(m(t)).unwrap())
            .collect();
        HomographyArray::new(hs, 40).unwrap()
    }

    fn training() -> Vec<HomographyArray> {
        [
            (0.1, -0.2),
            (0.3, 0.05),
            (-0.2, 0.25),
            (0.05, 0.4),
            (-0.35, -0.1),
        ]
        .iter()
        .map(|&(a, b)| rotation_array(a, b))
        .collect()
    }

    #[test]
    fn identical_targets_fit_identity() {
        let pairs: Vec<_> = training().into_iter().map(|g| (g.clone(), g)).collect();
        let c = fit_correction(&pairs, 60, 40).unwrap();
        for m in c.mats() {
            assert!((m - Matrix3::identity()).abs().max() < 1e-10, "{m}");
        }
        assert!(c.bias().norm() < 1e-10);
    }

    #[test]
    fn fewer_than_four_pairs_are_rejected() {
        let pairs: Vec<_> = training()
            .into_iter()
            .take(3)
            .map(|g| (g.clone(), g))
            .collect();
        assert!(matches!(
            fit_correction(&pairs, 60, 40),
            Err(CompensatorError::TooFewPairs(3))
        ));
    }

    #[test]
    fn repeated_pair_is_solved_exactly() {
        let g = rotation_array(0.2, -0.1);
        let t = array(&[(1.0, 0.0), (2.0, -3.0)]);
        let c = fit_correction(&vec![(g.clone(), t.clone()); 4], 60, 40).unwrap();
        for ((m, g), t) in c.mats().iter().zip(g.patches()).zip(t.patches()) {
            let want = t.matrix() * g.matrix().try_inverse().unwrap();
            let (m, want) = (m / m[(2, 2)], want / want[(2, 2)]);
            assert!((m - want).abs().max() < 1e-10, "{m} vs {want}");
        }
    }

    #[test]
    fn patch_counts_must_agree() {
        let mut pairs: Vec<_> = training().into_iter().map(|g| (g.clone(), g)).collect();
        pairs[2].1 = array(&[(0.0, 0.0)]);
        assert!(matches!(
            fit_correction(&pairs, 60, 40),
            Err(CompensatorError::PatchMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    #[test]
    fn bias_offsets_the_corrected_flow() {
        let c =
            PatchCorrection::new(vec![Matrix3::identity(); 2], Vector2::new(2.0, -1.0)).unwrap();
        let flow = apply_correction(&c, &array(&[(0.5, 0.0), (0.0, 0.25)]), 6, 40).unwrap();
        assert_eq!(flow.get(3, 5), [2.5, -1.0]);
        assert_eq!(flow.get(3, 30), [2.0, -0.75]);
    }

    #[test]
    fn corrections_round_trip_through_json() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("c.json");
        let m = Matrix3::new(1.01, 0.002, -3.5, 0.0, 0.99, 1.25, 1e-6, 0.0, 1.0);
        let c =
            PatchCorrection::new(vec![m, Matrix3::identity()], Vector2::new(0.1, -0.3)).unwrap();
        c.save(&path).unwrap();
        assert_eq!(PatchCorrection::load(&path).unwrap(), c);
    }

    #[test]
    fn singular_corrections_are_rejected() {
        let bad = PatchCorrection::new(vec![Matrix3::zeros()], Vector2::zeros());
        assert!(matches!(
            bad,
            Err(CompensatorError::Degenerate { patch: 0, .. })
        ));
    }
}
