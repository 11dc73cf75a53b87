//! Rotation, camera and homography primitives, plus dense flow synthesis from
//! per-row-patch homography arrays.
//!
//! Conventions used throughout the crate:
//!
//! - Pixel coordinates are `(x, y)` with integer values at pixel centers; row
//!   `y` of an `h`-row frame split into `N` patches belongs to patch
//!   `floor(y * N / h)`.
//! - A rotation `R` maps camera-`a` coordinates to camera-`b` coordinates, so a
//!   point at infinity moves as `p_b ~ K R K^-1 p_a`.
//! - Flow is forward: `flow(p) = H p - p` for pixels of the first frame.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point2 = Vector2<f64>;

/// Frobenius drift from orthonormality that triggers re-projection onto SO(3).
pub const ORTHO_DRIFT_TOL: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-12;
const DEGENERATE_W: f64 = 1e-12;
const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("geometry: invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "geometry: homography of patch {patch} maps pixel ({x}, {y}) to the plane at infinity"
    )]
    DegenerateWarp { patch: usize, x: f64, y: f64 },
    #[error("geometry: singular homography (det = {0:e})")]
    Singular(f64),
    #[error("geometry: flow dimensions {got_w}x{got_h} do not match {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Axis-angle rotation vector; its norm is the rotation angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationVector(pub Vector3<f64>);

impl RotationVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking it is orthonormal with positive determinant
    /// (tolerance `1e-9`).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidArgument(
                "rotation matrix has non-finite entries".into(),
            ));
        }
        let drift = orthonormality_error(&m);
        let det = m.determinant();
        if drift > ORTHO_DRIFT_TOL || (det - 1.0).abs() > ORTHO_DRIFT_TOL {
            return Err(GeometryError::InvalidArgument(format!(
                "not a rotation: |RtR - I| = {drift:e}, det = {det}"
            )));
        }
        Ok(Self(m))
    }

    /// Projects an arbitrary matrix onto the nearest rotation (Frobenius sense).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        Self(nearest_rotation(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn mul(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    /// Rotation angle of `self^T * other`, in radians.
    pub fn geodesic_distance(&self, other: &RotationMatrix) -> f64 {
        let rel = self.0.transpose() * other.0;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos loses precision near 0; use the skew part there.
        let s = 0.5
            * Vector3::new(
                rel[(2, 1)] - rel[(1, 2)],
                rel[(0, 2)] - rel[(2, 0)],
                rel[(1, 0)] - rel[(0, 1)],
            )
            .norm();
        s.atan2(c)
    }

    /// Rotation vector via the matrix logarithm.
    pub fn log(&self) -> RotationVector {
        let m = &self.0;
        let w = Vector3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        );
        let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let s = 0.5 * w.norm();
        let angle = s.atan2(c);
        if angle < 1e-8 {
            return RotationVector(0.5 * w);
        }
        if std::f64::consts::PI - angle < 1e-6 {
            // Near pi the skew part vanishes; read the axis from the symmetric part.
            let b = (m + Matrix3::identity()) * 0.5;
            let mut axis = Vector3::new(
                b[(0, 0)].max(0.0).sqrt(),
                b[(1, 1)].max(0.0).sqrt(),
                b[(2, 2)].max(0.0).sqrt(),
            );
            let k = axis.imax();
            for j in 0..3 {
                if j != k && b[(k, j)] < 0.0 {
                    axis[j] = -axis[j];
                }
            }
            if axis.dot(&w) < 0.0 {
                axis = -axis;
            }
            return RotationVector(axis.normalize() * angle);
        }
        RotationVector(w * (angle / (2.0 * s)))
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        // Flip along the smallest singular direction.
        let (k, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("three singular values");
        d[(k, k)] = -1.0;
        r = u * d * v_t;
    }
    r
}

/// Exponential map `so(3) -> SO(3)`.
pub fn rodrigues(v: &RotationVector) -> Result<RotationMatrix, GeometryError> {
    if !v.0.iter().all(|c| c.is_finite()) {
        return Err(GeometryError::InvalidArgument(
            "rotation vector has non-finite components".into(),
        ));
    }
    Ok(rodrigues_unchecked(&v.0))
}

pub(crate) fn rodrigues_unchecked(v: &Vector3<f64>) -> RotationMatrix {
    let theta = v.norm();
    if theta < SMALL_ANGLE {
        return RotationMatrix::identity();
    }
    let k = skew(&(v / theta));
    let m = Matrix3::identity() + k * theta.sin() + k * k * (1.0 - theta.cos());
    RotationMatrix(m)
}

/// Left-to-right product `R_0 * R_1 * ... * R_{n-1}`.
pub fn compose_rotations(list: &[RotationMatrix]) -> Result<RotationMatrix, GeometryError> {
    let (first, rest) = list
        .split_first()
        .ok_or_else(|| GeometryError::InvalidArgument("empty rotation list".into()))?;
    let m = rest.iter().fold(first.0, |acc, r| acc * r.0);
    Ok(reorthonormalize(m))
}

pub(crate) fn reorthonormalize(m: Matrix3<f64>) -> RotationMatrix {
    if orthonormality_error(&m) > ORTHO_DRIFT_TOL {
        RotationMatrix(nearest_rotation(&m))
    } else {
        RotationMatrix(m)
    }
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        Self::with_skew(fx, fy, cx, cy, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            skew,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy, self.skew]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidArgument(format!(
                "intrinsics need finite values and positive focal lengths, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0,
        )
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        let (fx, fy, cx, cy, s) = (self.fx, self.fy, self.cx, self.cy, self.skew);
        Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn project(&self, x: &Vector3<f64>) -> Point2 {
        let p = self.matrix() * x;
        Point2::new(p.x / p.z, p.y / p.z)
    }

    pub fn backproject(&self, p: &Point2) -> Vector3<f64> {
        self.inverse() * Vector3::new(p.x, p.y, 1.0)
    }
}

/// A planar projective transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
    normalized: bool,
}

impl Homography {
    /// Validates invertibility and scales so the bottom-right entry is 1 when
    /// it is not vanishingly small; otherwise the matrix is kept as-is and
    /// [`Homography::is_normalized`] reports `false`.
    pub fn new(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidArgument(
                "homography has non-finite entries".into(),
            ));
        }
        let h22 = m[(2, 2)];
        let (m, normalized) = if h22.abs() > NORMALIZE_EPS {
            (m / h22, true)
        } else {
            (m, false)
        };
        let det = m.determinant();
        let scale = m.norm().powi(3).max(f64::MIN_POSITIVE);
        if det.abs() <= 1e-14 * scale {
            return Err(GeometryError::Singular(det));
        }
        Ok(Self { m, normalized })
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
            normalized: true,
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
            normalized: true,
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn compose(&self, other: &Homography) -> Result<Homography, GeometryError> {
        Homography::new(self.m * other.m)
    }

    /// Maps `p`, returning `None` when the image lands at (or behind) infinity.
    pub fn apply(&self, p: &Point2) -> Option<Point2> {
        apply_matrix(&self.m, p.x, p.y)
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(v))
    }
}

#[inline]
fn apply_matrix(m: &Matrix3<f64>, x: f64, y: f64) -> Option<Point2> {
    let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
    if w <= DEGENERATE_W {
        return None;
    }
    let u = (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w;
    let v = (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w;
    Some(Point2::new(u, v))
}

/// Rotation-conjugate homography `K R K^-1`.
pub fn rotation_to_homography(
    r: &RotationMatrix,
    k: &CameraIntrinsics,
) -> Result<Homography, GeometryError> {
    k.validate()?;
    Homography::new(k.matrix() * r.matrix() * k.inverse())
}

/// One homography per horizontal row patch.
#[derive(Debug, Clone, PartialEq)]
pub struct HomographyArray {
    patches: Vec<Homography>,
    frame_height: usize,
}

impl HomographyArray {
    pub fn new(patches: Vec<Homography>, frame_height: usize) -> Result<Self, GeometryError> {
        if patches.is_empty() {
            return Err(GeometryError::InvalidArgument(
                "homography array needs at least one patch".into(),
            ));
        }
        if frame_height == 0 {
            return Err(GeometryError::InvalidArgument(
                "frame height must be positive".into(),
            ));
        }
        Ok(Self {
            patches,
            frame_height,
        })
    }

    pub fn identity(n_patches: usize, frame_height: usize) -> Result<Self, GeometryError> {
        Self::new(vec![Homography::identity(); n_patches], frame_height)
    }

    pub fn patches(&self) -> &[Homography] {
        &self.patches
    }

    pub fn patch_count(&self) -> usize {
        self.patches.len()
    }

    pub fn frame_height(&self) -> usize {
        self.frame_height
    }

    pub fn patch_of_row(&self, y: f64) -> usize {
        patch_index(y, self.patches.len(), self.frame_height)
    }
}

/// Patch index of (possibly fractional) row `y`, clamped into `[0, n)`.
pub fn patch_index(y: f64, n_patches: usize, frame_height: usize) -> usize {
    let i = (y * n_patches as f64 / frame_height as f64).floor();
    if i <= 0.0 {
        0
    } else {
        (i as usize).min(n_patches - 1)
    }
}

/// Dense per-pixel displacement field.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    uv: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            uv: vec![[0.0; 2]; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, uv: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        if uv.len() != width * height {
            return Err(GeometryError::InvalidArgument(format!(
                "flow buffer has {} vectors, expected {width}x{height}",
                uv.len()
            )));
        }
        if !uv.iter().flatten().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidArgument(
                "flow contains non-finite values".into(),
            ));
        }
        Ok(Self { width, height, uv })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.uv
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 2] {
        self.uv[y * self.width + x]
    }

    /// Adds `(du, dv)` to every vector.
    pub fn offset(mut self, du: f64, dv: f64) -> Self {
        for v in &mut self.uv {
            v[0] += du;
            v[1] += dv;
        }
        self
    }

    /// Bilinear sample; `p` must lie in `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, p: &Point2) -> Option<[f64; 2]> {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 || !p.x.is_finite() || !p.y.is_finite() {
            return None;
        }
        let max_x = (w - 1) as f64;
        let max_y = (h - 1) as f64;
        if p.x < 0.0 || p.y < 0.0 || p.x > max_x || p.y > max_y {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(w.saturating_sub(2));
        let y0 = (p.y.floor() as usize).min(h.saturating_sub(2));
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        let a = self.get(x0, y0);
        let b = self.get(x1, y0);
        let c = self.get(x0, y1);
        let d = self.get(x1, y1);
        let mut out = [0.0; 2];
        for k in 0..2 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bottom = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bottom - top) * fy;
        }
        Some(out)
    }

    /// Mean endpoint error against `other`.
    pub fn mean_epe(&self, other: &FlowField) -> Result<f64, GeometryError> {
        self.check_same_size(other)?;
        if self.uv.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self
            .uv
            .iter()
            .zip(&other.uv)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .sum();
        Ok(sum / self.uv.len() as f64)
    }

    /// Largest per-component absolute difference against `other`.
    pub fn max_abs_diff(&self, other: &FlowField) -> Result<f64, GeometryError> {
        self.check_same_size(other)?;
        Ok(self
            .uv
            .iter()
            .zip(&other.uv)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max))
    }

    fn check_same_size(&self, other: &FlowField) -> Result<(), GeometryError> {
        if self.width != other.width || self.height != other.height {
            return Err(GeometryError::DimensionMismatch {
                got_w: other.width,
                got_h: other.height,
                want_w: self.width,
                want_h: self.height,
            });
        }
        Ok(())
    }
}

/// How rows pick their homography when converting an array into flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PatchBlend {
    /// Each row uses its own patch's homography.
    #[default]
    Hard,
    /// Entry-wise linear interpolation between adjacent patch centers.
    Linear,
}

pub fn homography_array_to_flow(
    arr: &HomographyArray,
    width: usize,
    height: usize,
) -> Result<FlowField, GeometryError> {
    homography_array_to_flow_with(arr, width, height, PatchBlend::Hard)
}

pub fn homography_array_to_flow_with(
    arr: &HomographyArray,
    width: usize,
    height: usize,
    blend: PatchBlend,
) -> Result<FlowField, GeometryError> {
    if width == 0 || height == 0 {
        return Err(GeometryError::InvalidArgument(format!(
            "flow size must be positive, got {width}x{height}"
        )));
    }
    if arr.frame_height() != height {
        return Err(GeometryError::InvalidArgument(format!(
            "homography array covers {} rows but the flow has {height}",
            arr.frame_height()
        )));
    }
    let n = arr.patch_count();
    let mut uv = vec![[0.0; 2]; width * height];
    uv.par_chunks_mut(width)
        .enumerate()
        .try_for_each(|(y, row)| {
            let yf = y as f64;
            let (patch, m) = row_matrix(arr, yf, n, height, blend);
            for (x, out) in row.iter_mut().enumerate() {
                let xf = x as f64;
                let q = apply_matrix(&m, xf, yf).ok_or(GeometryError::DegenerateWarp {
                    patch,
                    x: xf,
                    y: yf,
                })?;
                *out = [q.x - xf, q.y - yf];
            }
            Ok(())
        })?;
    Ok(FlowField { width, height, uv })
}

fn row_matrix(
    arr: &HomographyArray,
    y: f64,
    n: usize,
    height: usize,
    blend: PatchBlend,
) -> (usize, Matrix3<f64>) {
    let patch = patch_index(y, n, height);
    let hs = arr.patches();
    match blend {
        PatchBlend::Hard => (patch, *hs[patch].matrix()),
        PatchBlend::Linear => {
            let band = height as f64 / n as f64;
            let s = y / band - 0.5;
            if s <= 0.0 {
                return (0, *hs[0].matrix());
            }
            let lo = s.floor() as usize;
            if lo + 1 >= n {
                return (n - 1, *hs[n - 1].matrix());
            }
            let a = s - lo as f64;
            let m = hs[lo].matrix() * (1.0 - a) + hs[lo + 1].matrix() * a;
            (patch, m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn rot_z(a: f64) -> RotationMatrix {
        rodrigues(&RotationVector::new(0.0, 0.0, a)).unwrap()
    }

    #[test]
    fn rodrigues_zero_is_identity() {
        let r = rodrigues(&RotationVector::new(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let r = rot_z(PI / 2.0);
        let want = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*r.matrix(), want, epsilon = 1e-15);
    }

    #[test]
    fn rodrigues_trace_matches_angle() {
        let axis = Vector3::new(0.3, -0.8, 0.52).normalize();
        let r = rodrigues(&RotationVector(axis * 0.3)).unwrap();
        assert_relative_eq!(
            r.matrix().trace(),
            1.0 + 2.0 * 0.3f64.cos(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn rodrigues_rejects_nan() {
        assert!(rodrigues(&RotationVector::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn log_inverts_rodrigues_near_pi() {
        let v = Vector3::new(0.2, -0.5, 0.9).normalize() * (PI - 1e-8);
        let r = rodrigues(&RotationVector(v)).unwrap();
        assert_relative_eq!(r.log().0, v, epsilon = 1e-6);
    }

    #[test]
    fn identity_rotation_gives_identity_homography() {
        let k = CameraIntrinsics::with_skew(500.0, 480.0, 320.0, 240.0, 0.5).unwrap();
        let h = rotation_to_homography(&RotationMatrix::identity(), &k).unwrap();
        assert_relative_eq!(*h.matrix(), Matrix3::identity(), epsilon = 1e-12);
    }

    #[test]
    fn z_rotation_with_centered_k_is_in_plane_rotation() {
        let k = CameraIntrinsics::new(400.0, 400.0, 0.0, 0.0).unwrap();
        let theta = 0.2;
        let h = rotation_to_homography(&rot_z(theta), &k).unwrap();
        let want = Matrix3::new(
            theta.cos(),
            -theta.sin(),
            0.0,
            theta.sin(),
            theta.cos(),
            0.0,
            0.0,
            0.0,
            1.0,
        );
        assert_relative_eq!(*h.matrix(), want, epsilon = 1e-14);
    }

    #[test]
    fn rotation_homography_matches_ray_reprojection() {
        let k = CameraIntrinsics::new(320.0, 320.0, 180.0, 135.0).unwrap();
        let r = rodrigues(&RotationVector::new(0.0, 0.05, 0.0)).unwrap();
        let h = rotation_to_homography(&r, &k).unwrap();
        for &(x, y) in &[(0.0, 0.0), (359.0, 10.0), (100.5, 269.0), (180.0, 135.0)] {
            // points at infinity: rotate the viewing ray, then project
            let ray = k.backproject(&Point2::new(x, y));
            let want = k.project(&(r.matrix() * ray));
            let got = h.apply(&Point2::new(x, y)).unwrap();
            assert!((got - want).norm() < 1e-6);
        }
    }

    #[test]
    fn homography_normalization_and_flags() {
        let h = Homography::new(Matrix3::identity() * 4.0).unwrap();
        assert!(h.is_normalized());
        assert_eq!(*h.matrix(), Matrix3::identity());
        let m = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
        let h = Homography::new(m).unwrap();
        assert!(!h.is_normalized());
        assert!(matches!(
            Homography::new(Matrix3::zeros()),
            Err(GeometryError::Singular(_))
        ));
    }

    #[test]
    fn identity_array_gives_exact_zero_flow() {
        let arr = HomographyArray::identity(6, 27).unwrap();
        let f = homography_array_to_flow(&arr, 31, 27).unwrap();
        assert!(f.data().iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn translation_array_gives_constant_flow() {
        let arr = HomographyArray::new(vec![Homography::translation(3.0, -2.0)], 20).unwrap();
        let f = homography_array_to_flow(&arr, 25, 20).unwrap();
        assert!(f.data().iter().all(|v| *v == [3.0, -2.0]));
    }

    #[test]
    fn hard_assignment_uses_each_patch_exactly() {
        let hs: Vec<_> = (0..3)
            .map(|i| Homography::translation(i as f64, 0.0))
            .collect();
        let arr = HomographyArray::new(hs, 10).unwrap();
        let f = homography_array_to_flow(&arr, 4, 10).unwrap();
        let rows: Vec<f64> = (0..10).map(|y| f.get(0, y)[0]).collect();
        // patch i covers rows [10 i / 3, 10 (i + 1) / 3)
        assert_eq!(rows, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn linear_blend_interpolates_between_centers() {
        let hs = vec![
            Homography::translation(0.0, 0.0),
            Homography::translation(2.0, 0.0),
        ];
        let arr = HomographyArray::new(hs, 8).unwrap();
        let f = homography_array_to_flow_with(&arr, 2, 8, PatchBlend::Linear).unwrap();
        // centers at rows 2 and 6
        assert_eq!(f.get(0, 0)[0], 0.0);
        assert_eq!(f.get(0, 2)[0], 0.0);
        assert_relative_eq!(f.get(0, 4)[0], 1.0, epsilon = 1e-15);
        assert_eq!(f.get(0, 7)[0], 2.0);
    }

    #[test]
    fn degenerate_warp_reports_patch() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -0.5, 1.0);
        let arr = HomographyArray::new(
            vec![Homography::identity(), Homography::new(m).unwrap()],
            10,
        )
        .unwrap();
        let err = homography_array_to_flow(&arr, 4, 10).unwrap_err();
        assert!(matches!(
            err,
            GeometryError::DegenerateWarp { patch: 1, .. }
        ));
    }

    #[test]
    fn flow_size_must_match_array() {
        let arr = HomographyArray::identity(2, 10).unwrap();
        assert!(homography_array_to_flow(&arr, 4, 12).is_err());
        assert!(homography_array_to_flow(&arr, 0, 10).is_err());
    }

    #[test]
    fn compose_same_axis_adds_angles() {
        let r = compose_rotations(&[rot_z(0.3), rot_z(-1.1)]).unwrap();
        assert_relative_eq!(*r.matrix(), *rot_z(-0.8).matrix(), epsilon = 1e-14);
        let r = compose_rotations(&[RotationMatrix::identity(); 3]).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
        assert!(compose_rotations(&[]).is_err());
    }

    #[test]
    fn bilinear_sampling() {
        let uv: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, 0.0]).collect();
        let f = FlowField::from_vec(3, 2, uv).unwrap();
        assert_eq!(f.sample_bilinear(&Point2::new(0.5, 0.5)).unwrap()[0], 2.0);
        assert_eq!(f.sample_bilinear(&Point2::new(2.0, 1.0)).unwrap()[0], 5.0);
        assert!(f.sample_bilinear(&Point2::new(2.1, 0.0)).is_none());
    }
}
