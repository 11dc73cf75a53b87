//! Fundamental mixtures: one fundamental matrix per row patch, estimated
//! jointly from point correspondences with Gaussian row weights, then turned
//! into rotation-only homographies and a ground-truth flow.
//!
//! Epipolar convention: `p1^T F p2 = 0` with `p1` in the first frame. The
//! coefficient vector of a patch stacks the columns of its matrix, which makes
//! the constraint row of a correspondence
//! `(x' x, x' y, x', y' x, y' y, y', x, y, 1)` with `p1 = (x, y)` and
//! `p2 = (x', y')`.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{
    homography_array_to_flow, rotation_to_homography, CameraIntrinsics, FlowField, GeometryError,
    HomographyArray, Point2, RotationMatrix,
};

/// Minimum correspondences a patch needs before it stops being tied to its
/// neighbor, and before it is trusted for cheirality on its own.
pub const MIN_PATCH_POINTS: usize = 8;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("mixtures: invalid argument: {0}")]
    InvalidArgument(String),
    #[error("mixtures: no correspondences")]
    Empty,
    #[error(
        "mixtures: ambiguous solution ({rows} rows for {unknowns} unknowns, \
         second-smallest singular value {second:e} vs largest {largest:e})"
    )]
    AmbiguousSolution {
        rows: usize,
        unknowns: usize,
        second: f64,
        largest: f64,
    },
    #[error("mixtures: no decomposition puts a majority of points in front of both cameras (best {best}/{total})")]
    CheiralityFailure { best: usize, total: usize },
    #[error("mixtures: degenerate essential matrix")]
    DegenerateEssential,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p1: Point2,
    pub p2: Point2,
}

impl Correspondence {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            p1: Point2::new(x1, y1),
            p2: Point2::new(x2, y2),
        }
    }
}

/// Normalized Gaussian weights of one point over the row patches.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights(pub Vec<f64>);

impl MixtureWeights {
    pub fn dominant(&self) -> usize {
        // first maximum wins ties
        let mut best = 0;
        for (i, w) in self.0.iter().enumerate() {
            if *w > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// `w_i ∝ exp(-(y - c_i)^2 / (2 sigma^2))`, `c_i = (i + 0.5) h / N`, summing
/// to one. Evaluated in the log domain so tiny `sigma` cannot underflow every
/// weight.
pub fn mixture_weights(
    y: f64,
    n_patches: usize,
    frame_height: usize,
    sigma: f64,
) -> Result<MixtureWeights, MixtureError> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(MixtureError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if n_patches == 0 || frame_height == 0 {
        return Err(MixtureError::InvalidArgument(
            "need at least one patch and a positive frame height".into(),
        ));
    }
    if !y.is_finite() {
        return Err(MixtureError::InvalidArgument(format!(
            "row {y} is not finite"
        )));
    }
    let band = frame_height as f64 / n_patches as f64;
    let logits: Vec<f64> = (0..n_patches)
        .map(|i| {
            let d = y - (i as f64 + 0.5) * band;
            -d * d / (2.0 * sigma * sigma)
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(MixtureWeights(
        exps.into_iter().map(|e| e / total).collect(),
    ))
}

/// Constraint row of one correspondence for a single fundamental matrix.
pub fn dlt_row(c: &Correspondence) -> [f64; 9] {
    let (x, y) = (c.p1.x, c.p1.y);
    let (xp, yp) = (c.p2.x, c.p2.y);
    [xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureParams {
    pub n_patches: usize,
    pub frame_height: usize,
    /// Gaussian width in pixels.
    pub sigma: f64,
    /// Weight of the rows tying an under-populated patch to its neighbor.
    pub lambda: f64,
    /// Hartley normalization of each frame's points before assembly.
    pub normalize: bool,
    /// Weight of rows tying every pair of adjacent patches; 0 disables them.
    pub smoothness: f64,
}

impl MixtureParams {
    /// `sigma = 0.001 h`, `lambda = 1`, Hartley normalization on, adjacent
    /// patches tied with weight 1.
    ///
    /// Without the adjacent-patch rows, patches that barely share
    /// correspondences decouple and the joint system has one near-null
    /// direction per patch; the unit-norm solution then concentrates on a
    /// single patch and leaves the others arbitrary.
    pub fn new(n_patches: usize, frame_height: usize) -> Self {
        Self {
            n_patches,
            frame_height,
            sigma: 0.001 * frame_height as f64,
            lambda: 1.0,
            normalize: true,
            smoothness: 1.0,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_normalization(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn with_smoothness(mut self, smoothness: f64) -> Self {
        self.smoothness = smoothness;
        self
    }
}

/// Stacked homogeneous system `A f = 0` plus what is needed to map its
/// solution back to pixel coordinates.
#[derive(Debug, Clone)]
pub struct MixtureSystem {
    pub a: DMatrix<f64>,
    pub params: MixtureParams,
    /// Normalizing similarity applied to first-frame points.
    pub t1: Matrix3<f64>,
    /// Normalizing similarity applied to second-frame points.
    pub t2: Matrix3<f64>,
    pub data_rows: usize,
    /// Patches tied to a neighbor, in order.
    pub regularized: Vec<usize>,
}

/// Per-patch fundamental matrices; their stacked coefficients have unit norm.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMixture {
    pub mats: Vec<Matrix3<f64>>,
    pub frame_height: usize,
    pub sigma: f64,
}

impl FundamentalMixture {
    pub fn n_patches(&self) -> usize {
        self.mats.len()
    }

    /// Column-stacked coefficient vector of every patch, concatenated.
    pub fn coefficients(&self) -> DVector<f64> {
        let mut f = DVector::zeros(9 * self.mats.len());
        for (i, m) in self.mats.iter().enumerate() {
            for c in 0..3 {
                for r in 0..3 {
                    f[9 * i + 3 * c + r] = m[(r, c)];
                }
            }
        }
        f
    }

    /// Text dump: one block of three row-major lines per patch, blocks
    /// separated by a blank line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, m) in self.mats.iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            for r in 0..3 {
                s.push_str(&format!(
                    "{:e} {:e} {:e}\n",
                    m[(r, 0)],
                    m[(r, 1)],
                    m[(r, 2)]
                ));
            }
        }
        s
    }
}

/// Similarity moving the centroid to the origin with mean distance `sqrt(2)`.
pub fn hartley_transform<'a>(points: impl Iterator<Item = &'a Point2> + Clone) -> Matrix3<f64> {
    let n = points.clone().count().max(1) as f64;
    let centroid = points.clone().fold(Point2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(
        s,
        0.0,
        -s * centroid.x,
        0.0,
        s,
        -s * centroid.y,
        0.0,
        0.0,
        1.0,
    )
}

fn transform_point(t: &Matrix3<f64>, p: &Point2) -> Point2 {
    Point2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Builds the weighted constraint rows and, for every patch holding fewer
/// than [`MIN_PATCH_POINTS`] dominant correspondences, nine rows
/// `lambda (f_i - f_{i-1}) = 0` (`f_0 - f_1` for the first patch).
pub fn assemble_mixture_system(
    cs: &[Correspondence],
    params: &MixtureParams,
) -> Result<MixtureSystem, MixtureError> {
    if cs.is_empty() {
        return Err(MixtureError::Empty);
    }
    let n = params.n_patches;
    if n == 0 || params.frame_height == 0 {
        return Err(MixtureError::InvalidArgument(
            "need at least one patch and a positive frame height".into(),
        ));
    }
    if !(params.lambda.is_finite() && params.lambda >= 0.0) {
        return Err(MixtureError::InvalidArgument(format!(
            "lambda must be nonnegative, got {}",
            params.lambda
        )));
    }
    if !(params.smoothness.is_finite() && params.smoothness >= 0.0) {
        return Err(MixtureError::InvalidArgument(format!(
            "smoothness must be nonnegative, got {}",
            params.smoothness
        )));
    }
    if cs
        .iter()
        .any(|c| !(c.p1.iter().chain(c.p2.iter()).all(|v| v.is_finite())))
    {
        return Err(MixtureError::InvalidArgument(
            "correspondence with non-finite coordinates".into(),
        ));
    }
    let (t1, t2) = if params.normalize {
        (
            hartley_transform(cs.iter().map(|c| &c.p1)),
            hartley_transform(cs.iter().map(|c| &c.p2)),
        )
    } else {
        (Matrix3::identity(), Matrix3::identity())
    };

    let mut counts = vec![0usize; n];
    let mut weights = Vec::with_capacity(cs.len());
    for c in cs {
        let w = mixture_weights(c.p1.y, n, params.frame_height, params.sigma)?;
        counts[w.dominant()] += 1;
        weights.push(w);
    }
    let regularized: Vec<usize> = if n > 1 {
        (0..n).filter(|&i| counts[i] < MIN_PATCH_POINTS).collect()
    } else {
        Vec::new()
    };

    let smooth_pairs = if params.smoothness > 0.0 { n - 1 } else { 0 };
    let rows = cs.len() + 9 * regularized.len() + 9 * smooth_pairs;
    let mut a = DMatrix::zeros(rows, 9 * n);
    for (j, (c, w)) in cs.iter().zip(&weights).enumerate() {
        let q = Correspondence {
            p1: transform_point(&t1, &c.p1),
            p2: transform_point(&t2, &c.p2),
        };
        let row = dlt_row(&q);
        for (i, wi) in w.0.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                a[(j, 9 * i + k)] = wi * v;
            }
        }
    }
    for (b, &i) in regularized.iter().enumerate() {
        let neighbor = if i == 0 { 1 } else { i - 1 };
        for k in 0..9 {
            let r = cs.len() + 9 * b + k;
            a[(r, 9 * i + k)] = params.lambda;
            a[(r, 9 * neighbor + k)] = -params.lambda;
        }
    }
    let base = cs.len() + 9 * regularized.len();
    for i in 1..=smooth_pairs {
        for k in 0..9 {
            let r = base + 9 * (i - 1) + k;
            a[(r, 9 * i + k)] = params.smoothness;
            a[(r, 9 * (i - 1) + k)] = -params.smoothness;
        }
    }
    Ok(MixtureSystem {
        a,
        params: *params,
        t1,
        t2,
        data_rows: cs.len(),
        regularized,
    })
}

/// Unit-norm null vector of `a` with its singular values, ascending.
fn null_vector(a: &DMatrix<f64>) -> (DVector<f64>, Vec<f64>) {
    let n = a.ncols();
    // Reduce tall systems to an n x n triangle first; pad short ones with zeros
    // so the full right singular basis is available.
    let square = if a.nrows() > n {
        a.clone().qr().r()
    } else {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        m
    };
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let f = v_t.row(order[0]).transpose();
    (f, sv)
}

fn rank2(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let mut s = svd.singular_values;
    let k = s.imin();
    s[k] = 0.0;
    svd.u.expect("u") * Matrix3::from_diagonal(&s) * svd.v_t.expect("v_t")
}

/// Solves `A f = 0` under `|f| = 1`, maps every block back to pixel
/// coordinates, projects each to rank 2 and fixes the overall sign so the
/// largest-magnitude coefficient is positive.
pub fn solve_mixture(sys: &MixtureSystem) -> Result<FundamentalMixture, MixtureError> {
    let n = sys.params.n_patches;
    let unknowns = 9 * n;
    let rows = sys.a.nrows();
    let (f, sv) = null_vector(&sys.a);
    let largest = *sv.last().expect("non-empty");
    let second = sv[1];
    if rows + 1 < unknowns || second < 1e-10 * largest {
        return Err(MixtureError::AmbiguousSolution {
            rows,
            unknowns,
            second,
            largest,
        });
    }
    if second < 1e3 * sv[0] {
        warn!(
            "mixtures: near-degenerate system (singular values {:e}, {:e}); \
             fundamental matrices are ill-defined without translation",
            sv[0], second
        );
    }

    let mut mats: Vec<Matrix3<f64>> = (0..n)
        .map(|i| {
            let fi = Matrix3::from_fn(|r, c| f[9 * i + 3 * c + r]);
            sys.t1.transpose() * rank2(&fi) * sys.t2
        })
        .collect();
    let norm = mats.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
    if norm <= 0.0 || !norm.is_finite() {
        return Err(MixtureError::InvalidArgument("solution vanished".into()));
    }
    let mut peak = 0.0f64;
    for m in &mut mats {
        *m /= norm;
        for v in m.iter() {
            if v.abs() > peak.abs() {
                peak = *v;
            }
        }
    }
    if peak < 0.0 {
        for m in &mut mats {
            *m = -*m;
        }
    }
    Ok(FundamentalMixture {
        mats,
        frame_height: sys.params.frame_height,
        sigma: sys.params.sigma,
    })
}

/// Assembly followed by [`solve_mixture`].
pub fn estimate_mixture(
    cs: &[Correspondence],
    params: &MixtureParams,
) -> Result<FundamentalMixture, MixtureError> {
    solve_mixture(&assemble_mixture_system(cs, params)?)
}

/// Weight-blended fundamental matrix at `p`.
pub fn evaluate_mixture_at(
    fm: &FundamentalMixture,
    p: &Point2,
) -> Result<Matrix3<f64>, MixtureError> {
    let w = mixture_weights(p.y, fm.n_patches(), fm.frame_height, fm.sigma)?;
    Ok(fm
        .mats
        .iter()
        .zip(&w.0)
        .fold(Matrix3::zeros(), |acc, (m, wi)| acc + m * *wi))
}

/// `K^T F K` projected onto the essential manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix {
    pub m: Matrix3<f64>,
    /// Set when the two leading singular values vanish.
    pub degenerate: bool,
}

pub fn essential_from_fundamental(f: &Matrix3<f64>, k: &CameraIntrinsics) -> EssentialMatrix {
    let km = k.matrix();
    let e = km.transpose() * f * km;
    let svd = e.svd(true, true);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let avg = 0.5 * (s[0] + s[1]);
    let scale = e.norm().max(f64::MIN_POSITIVE);
    if !avg.is_finite() || avg <= 1e-14 * scale {
        return EssentialMatrix {
            m: Matrix3::zeros(),
            degenerate: true,
        };
    }
    let mut d = svd.singular_values;
    let k_min = d.imin();
    for (i, v) in d.iter_mut().enumerate() {
        *v = if i == k_min { 0.0 } else { avg };
    }
    EssentialMatrix {
        m: svd.u.expect("u") * Matrix3::from_diagonal(&d) * svd.v_t.expect("v_t"),
        degenerate: false,
    }
}

/// The four `(R, t)` factorizations of a standard-convention essential matrix
/// (`x2^T E x1 = 0`, `x2 ~ R x1 + t`).
pub fn decompose_essential(e_std: &Matrix3<f64>) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = e_std.svd(true, true);
    let mut u = svd.u.expect("u");
    let mut v_t = svd.v_t.expect("v_t");
    // Order columns so the null direction is last.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    u = Matrix3::from_columns(&[u.column(idx[0]), u.column(idx[1]), u.column(idx[2])]);
    v_t = Matrix3::from_rows(&[v_t.row(idx[0]), v_t.row(idx[1]), v_t.row(idx[2])]);
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<f64> = u.column(2).into();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Depths `(d1, d2)` with `d2 x2 ≈ R d1 x1 + t`, by least squares.
fn triangulate_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    x1: &Vector3<f64>,
    x2: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let a = r * x1;
    // [a, -x2] [d1; d2] = -t
    let (aa, ab, bb) = (a.dot(&a), -a.dot(x2), x2.dot(x2));
    let (ar, br) = (-a.dot(t), x2.dot(t));
    let det = aa * bb - ab * ab;
    if det.abs() <= 1e-15 * aa * bb {
        return None;
    }
    Some(((ar * bb - ab * br) / det, (aa * br - ab * ar) / det))
}

/// Rotation of the decomposition candidate that puts the most correspondences
/// in front of both cameras. `e` follows the `p1^T E p2 = 0` convention.
pub fn rotation_from_essential(
    e: &EssentialMatrix,
    cs: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<RotationMatrix, MixtureError> {
    if cs.is_empty() {
        return Err(MixtureError::Empty);
    }
    if e.degenerate || e.m.norm() == 0.0 {
        return Err(MixtureError::DegenerateEssential);
    }
    let k_inv = k.inverse();
    let rays: Vec<(Vector3<f64>, Vector3<f64>)> = cs
        .iter()
        .map(|c| {
            (
                k_inv * Vector3::new(c.p1.x, c.p1.y, 1.0),
                k_inv * Vector3::new(c.p2.x, c.p2.y, 1.0),
            )
        })
        .collect();
    let candidates = decompose_essential(&e.m.transpose());
    let mut best: Option<(usize, Matrix3<f64>)> = None;
    for (r, t) in &candidates {
        let count = rays
            .iter()
            .filter(|(x1, x2)| {
                triangulate_depths(r, t, x1, x2).is_some_and(|(d1, d2)| d1 > 0.0 && d2 > 0.0)
            })
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, *r));
        }
    }
    let (count, r) = best.expect("four candidates");
    if 2 * count <= cs.len() {
        return Err(MixtureError::CheiralityFailure {
            best: count,
            total: cs.len(),
        });
    }
    Ok(RotationMatrix::nearest(&r))
}

fn patch_members(
    fm: &FundamentalMixture,
    cs: &[Correspondence],
    patch: usize,
) -> Result<Vec<Correspondence>, MixtureError> {
    let mut own = Vec::new();
    for c in cs {
        let w = mixture_weights(c.p1.y, fm.n_patches(), fm.frame_height, fm.sigma)?;
        if w.dominant() == patch {
            own.push(*c);
        }
    }
    if own.len() < MIN_PATCH_POINTS {
        return Ok(cs.to_vec());
    }
    Ok(own)
}

/// Per-patch rotations recovered from the mixture.
pub fn mixture_rotations(
    fm: &FundamentalMixture,
    cs: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<Vec<RotationMatrix>, MixtureError> {
    if cs.is_empty() {
        return Err(MixtureError::Empty);
    }
    (0..fm.n_patches())
        .map(|i| {
            let e = essential_from_fundamental(&fm.mats[i], k);
            rotation_from_essential(&e, &patch_members(fm, cs, i)?, k)
        })
        .collect()
}

/// Rotation-only homography array `K R_i K^-1` of the mixture.
pub fn mixture_homography_array(
    fm: &FundamentalMixture,
    cs: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<HomographyArray, MixtureError> {
    let hs = mixture_rotations(fm, cs, k)?
        .iter()
        .map(|r| rotation_to_homography(r, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HomographyArray::new(hs, fm.frame_height)?)
}

/// Fundamental-mixtures flow `F_ab`.
pub fn mixture_to_gt_flow(
    fm: &FundamentalMixture,
    cs: &[Correspondence],
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<FlowField, MixtureError> {
    let arr = mixture_homography_array(fm, cs, k)?;
    Ok(homography_array_to_flow(&arr, width, height)?)
}

/// Parses `x1,y1,x2,y2` lines (`#` comments and blank lines skipped).
pub fn parse_correspondences(text: &str) -> Result<Vec<Correspondence>, MixtureError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = t
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MixtureError::InvalidArgument(format!("line {}: {e}: {t:?}", i + 1)))?;
        if vals.len() != 4 || !vals.iter().all(|v| v.is_finite()) {
            return Err(MixtureError::InvalidArgument(format!(
                "line {}: expected four finite numbers, got {t:?}",
                i + 1
            )));
        }
        out.push(Correspondence::new(vals[0], vals[1], vals[2], vals[3]));
    }
    Ok(out)
}

pub fn format_correspondences(cs: &[Correspondence]) -> String {
    cs.iter()
        .map(|c| format!("{},{},{},{}\n", c.p1.x, c.p1.y, c.p2.x, c.p2.y))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_at_patch_center_are_one_hot() {
        let h = 270;
        let y = 3.5 * h as f64 / 6.0;
        let w = mixture_weights(y, 6, h, 0.001 * h as f64).unwrap();
        assert!((w.0[3] - 1.0).abs() < 1e-10);
        for (i, v) in w.0.iter().enumerate() {
            if i != 3 {
                assert!(*v < 1e-10);
            }
        }
    }

    #[test]
    fn weights_single_patch_and_symmetry() {
        assert_eq!(mixture_weights(17.0, 1, 100, 0.1).unwrap().0, vec![1.0]);
        let h = 270;
        let boundary = 3.0 * h as f64 / 6.0;
        let w = mixture_weights(boundary, 6, h, 0.2 * h as f64).unwrap();
        assert!((w.0[2] - w.0[3]).abs() < 1e-12);
        assert_relative_eq!(w.0.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        assert!(mixture_weights(1.0, 6, h, 0.0).is_err());
        assert!(mixture_weights(1.0, 6, h, -1.0).is_err());
    }

    #[test]
    fn tiny_sigma_far_from_centers_does_not_underflow() {
        let w = mixture_weights(0.0, 6, 270, 0.27).unwrap();
        assert_eq!(w.dominant(), 0);
        assert!(w.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dlt_rows() {
        assert_eq!(
            dlt_row(&Correspondence::new(0.0, 0.0, 0.0, 0.0)),
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(
            dlt_row(&Correspondence::new(1.0, 2.0, 3.0, 4.0)),
            [3.0, 6.0, 3.0, 4.0, 8.0, 4.0, 1.0, 2.0, 1.0]
        );
        assert_eq!(
            dlt_row(&Correspondence::new(1.0, 0.0, 0.0, 1.0)),
            [0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn dlt_row_matches_bilinear_form_with_column_stacking() {
        let f = Matrix3::new(0.1, -0.4, 0.7, 0.25, 0.5, -0.9, 0.3, 0.2, -0.6);
        let c = Correspondence::new(3.0, -2.0, 0.5, 7.0);
        let fm = FundamentalMixture {
            mats: vec![f],
            frame_height: 1,
            sigma: 1.0,
        };
        let row = dlt_row(&c);
        let lhs: f64 = row
            .iter()
            .zip(fm.coefficients().iter())
            .map(|(a, b)| a * b)
            .sum();
        let p1 = Vector3::new(3.0, -2.0, 1.0);
        let p2 = Vector3::new(0.5, 7.0, 1.0);
        assert_relative_eq!(lhs, p1.dot(&(f * p2)), epsilon = 1e-12);
    }

    fn grid_points(n: usize, y0: f64, y1: f64) -> Vec<Correspondence> {
        (0..n)
            .map(|j| {
                let x = 10.0 + 37.0 * j as f64 % 300.0;
                let y = y0 + (y1 - y0) * (j as f64 + 0.5) / n as f64;
                Correspondence::new(x, y, x + 1.0, y + 0.5)
            })
            .collect()
    }

    #[test]
    fn single_patch_system_has_no_regularizer() {
        let cs = grid_points(8, 0.0, 270.0);
        let sys = assemble_mixture_system(&cs, &MixtureParams::new(1, 270)).unwrap();
        assert_eq!(sys.a.shape(), (8, 9));
        assert!(sys.regularized.is_empty());
    }

    #[test]
    fn empty_patches_get_tied() {
        let cs = grid_points(12, 0.0, 40.0);
        let params = MixtureParams::new(6, 270)
            .with_sigma(0.27)
            .with_smoothness(0.0);
        let sys = assemble_mixture_system(&cs, &params).unwrap();
        assert_eq!(sys.regularized, vec![1, 2, 3, 4, 5]);
        assert_eq!(sys.a.shape(), (12 + 45, 54));
        // patch 3 tied to patch 2
        let r = 12 + 9 * 2;
        assert_eq!(sys.a[(r, 27)], 1.0);
        assert_eq!(sys.a[(r, 18)], -1.0);
    }

    #[test]
    fn patch_zero_is_tied_forward() {
        let cs = grid_points(10, 200.0, 270.0);
        let params = MixtureParams::new(2, 270).with_sigma(1.0);
        let sys = assemble_mixture_system(&cs, &params).unwrap();
        assert_eq!(sys.regularized, vec![0]);
        assert_eq!(sys.a[(10, 0)], 1.0);
        assert_eq!(sys.a[(10, 9)], -1.0);
    }

    #[test]
    fn evenly_split_points_need_no_regularizer() {
        let mut cs = grid_points(8, 0.0, 100.0);
        cs.extend(grid_points(8, 150.0, 270.0));
        let params = MixtureParams::new(2, 270)
            .with_sigma(0.27)
            .with_smoothness(0.0);
        let sys = assemble_mixture_system(&cs, &params).unwrap();
        assert_eq!(sys.a.nrows(), 16);
        assert!(sys.regularized.is_empty());
    }

    #[test]
    fn smoothness_ties_every_adjacent_pair() {
        let mut cs = grid_points(8, 0.0, 100.0);
        cs.extend(grid_points(8, 150.0, 270.0));
        let params = MixtureParams::new(2, 270)
            .with_sigma(0.27)
            .with_smoothness(0.5);
        let sys = assemble_mixture_system(&cs, &params).unwrap();
        assert_eq!(sys.a.nrows(), 16 + 9);
        assert!(sys.regularized.is_empty());
        assert_eq!(sys.a[(16 + 4, 9 + 4)], 0.5);
        assert_eq!(sys.a[(16 + 4, 4)], -0.5);
    }

    #[test]
    fn assemble_rejects_empty() {
        assert!(matches!(
            assemble_mixture_system(&[], &MixtureParams::new(1, 10)),
            Err(MixtureError::Empty)
        ));
    }

    #[test]
    fn seven_points_are_ambiguous() {
        let cs = grid_points(7, 0.0, 270.0);
        let err = estimate_mixture(&cs, &MixtureParams::new(1, 270)).unwrap_err();
        assert!(matches!(err, MixtureError::AmbiguousSolution { .. }));
    }

    #[test]
    fn evaluate_single_patch() {
        let f = Matrix3::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0);
        let fm = FundamentalMixture {
            mats: vec![f],
            frame_height: 100,
            sigma: 0.1,
        };
        assert_eq!(
            evaluate_mixture_at(&fm, &Point2::new(3.0, 77.0)).unwrap(),
            f
        );
    }

    #[test]
    fn evaluate_midway_averages() {
        let a = Matrix3::identity();
        let b = Matrix3::from_element(2.0);
        let fm = FundamentalMixture {
            mats: vec![a, b],
            frame_height: 100,
            sigma: 40.0,
        };
        let m = evaluate_mixture_at(&fm, &Point2::new(0.0, 50.0)).unwrap();
        assert_relative_eq!(m, (a + b) * 0.5, epsilon = 1e-12);
        let fm = FundamentalMixture { sigma: 0.1, ..fm };
        let m = evaluate_mixture_at(&fm, &Point2::new(0.0, 75.0)).unwrap();
        assert_relative_eq!(m, b, epsilon = 1e-10);
    }

    #[test]
    fn zero_fundamental_is_degenerate() {
        let k = CameraIntrinsics::new(300.0, 300.0, 100.0, 80.0).unwrap();
        let e = essential_from_fundamental(&Matrix3::zeros(), &k);
        assert!(e.degenerate);
        assert_eq!(e.m, Matrix3::zeros());
        let cs = [Correspondence::new(0.0, 0.0, 1.0, 1.0)];
        assert!(matches!(
            rotation_from_essential(&e, &cs, &k),
            Err(MixtureError::DegenerateEssential)
        ));
    }

    #[test]
    fn identity_k_projects_only() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let f = Matrix3::new(0.0, -1.0, 0.2, 1.1, 0.0, -0.7, -0.3, 0.6, 0.0);
        let e = essential_from_fundamental(&f, &k);
        let sv = e.m.svd(false, false).singular_values;
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert_relative_eq!(s[0], s[1], epsilon = 1e-12);
        assert!(s[2] < 1e-12);
    }

    #[test]
    fn correspondence_text_round_trip() {
        let cs = vec![
            Correspondence::new(1.5, 2.0, 3.25, -4.0),
            Correspondence::new(0.1, 1.0 / 3.0, 2.0, 2.0),
        ];
        assert_eq!(
            parse_correspondences(&format_correspondences(&cs)).unwrap(),
            cs
        );
        assert!(parse_correspondences("1,2,3\n").is_err());
    }
}
