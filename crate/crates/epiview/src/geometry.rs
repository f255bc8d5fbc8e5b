//! Calibrated multi-camera geometry: projection, fundamental matrices,
//! epipolar lines, rectifying rotations, triangulation, and degeneracy
//! screening.
//!
//! Conventions used by every downstream module:
//! - `rotation` maps world to camera coordinates and `center` is the camera
//!   center in world coordinates, so a world point projects through
//!   `K R (X - C)` followed by perspective division.
//! - Homogeneous image points are `(u, v, 1)` with `u` right, `v` down,
//!   origin at the top-left pixel center.
//! - The fundamental matrix of the ordered pair `(i, j)` satisfies
//!   `x_j^T F x_i = 0` for corresponding pixels.
//! - Lines are `a u + b v + c = 0` with `(a, b)` scaled to unit length, so
//!   the point-line residual is a Euclidean pixel distance.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Point2, Point3, RowVector4, Vector3, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Camera-frame depths at or below this count as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;
/// Baselines at or below this length are treated as coincident centers.
pub const MIN_BASELINE: f64 = 1e-9;
/// Sine of the angle below which the rectification seed axis counts as
/// collinear with the baseline.
const MIN_GAZE_CROSS: f64 = 1e-6;
/// Relative floor for degenerate homogeneous lines.
const LINE_REL_EPS: f64 = 1e-9;
/// Relative singular-value gap below which a linear solve is rejected.
const SVD_GAP_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("point depth {depth:e} is not positive in the camera frame")]
    DepthNonPositive { depth: f64 },
    #[error("camera centers coincide (baseline norm {norm:e})")]
    CoincidentCenters { norm: f64 },
    #[error("mean gaze is collinear with the baseline; rectified frame undefined")]
    GazeParallelToBaseline,
    #[error("epipolar line is degenerate (query at or near the epipole)")]
    DegenerateLine,
    #[error("need at least {needed} views, got {got}")]
    InsufficientViews { needed: usize, got: usize },
    #[error("linear system is ill conditioned")]
    IllConditioned,
    #[error("no RANSAC hypothesis could be evaluated")]
    NoConsensus,
    #[error("rotation is not proper orthonormal")]
    InvalidRotation,
    #[error("intrinsics are not upper triangular with positive focal lengths")]
    InvalidIntrinsics,
}

/// A calibrated pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    /// Upper-triangular intrinsics; `f_x`, `f_y` on the diagonal and the
    /// principal point in the last column, bottom row `(0, 0, 1)`.
    pub intrinsics: Matrix3<f64>,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    pub center: Point3<f64>,
}

impl CameraModel {
    /// Validates invariants: proper orthonormal rotation within `1e-9` and
    /// upper-triangular intrinsics with positive focal lengths.
    pub fn new(
        intrinsics: Matrix3<f64>,
        rotation: Matrix3<f64>,
        center: Point3<f64>,
    ) -> Result<Self, GeometryError> {
        let lower_ok = intrinsics[(1, 0)] == 0.0
            && intrinsics[(2, 0)] == 0.0
            && intrinsics[(2, 1)] == 0.0
            && (intrinsics[(2, 2)] - 1.0).abs() <= 1e-12;
        if !(intrinsics[(0, 0)] > 0.0) || !(intrinsics[(1, 1)] > 0.0) || !lower_ok {
            return Err(GeometryError::InvalidIntrinsics);
        }
        let gram_dev = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if gram_dev > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self { intrinsics, rotation, center })
    }

    pub fn focal(&self) -> (f64, f64) {
        (self.intrinsics[(0, 0)], self.intrinsics[(1, 1)])
    }

    pub fn principal_point(&self) -> Point2<f64> {
        Point2::new(self.intrinsics[(0, 2)], self.intrinsics[(1, 2)])
    }

    /// `K R [I | -C]`, mapping homogeneous world points to homogeneous pixels.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let kr = self.intrinsics * self.rotation;
        let t = kr * (-self.center.coords);
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&kr);
        p.set_column(3, &t);
        p
    }
}

/// A 2D line `a u + b v + c = 0` with `(a, b)` unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Axis-aligned pixel rectangle with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PixelRect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl PixelRect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        assert!(x1 > x0 && y1 > y0, "degenerate rectangle");
        Self { x0, y0, x1, y1 }
    }

    pub fn corners(&self) -> [Point2<f64>; 4] {
        [
            Point2::new(self.x0, self.y0),
            Point2::new(self.x1, self.y0),
            Point2::new(self.x1, self.y1),
            Point2::new(self.x0, self.y1),
        ]
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// One calibrated view of a rig.
#[derive(Debug, Clone)]
pub struct RigView {
    pub id: String,
    pub camera: CameraModel,
}

/// An ordered set of calibrated views sharing one world frame.
#[derive(Debug, Clone)]
pub struct Rig {
    pub views: Vec<RigView>,
}

impl Rig {
    pub fn cameras(&self) -> Vec<CameraModel> {
        self.views.iter().map(|v| v.camera).collect()
    }

    pub fn camera_by_id(&self, id: &str) -> Option<&CameraModel> {
        self.views.iter().find(|v| v.id == id).map(|v| &v.camera)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.views.iter().position(|v| v.id == id)
    }
}

/// Projects a world point and performs perspective division.
pub fn project(cam: &CameraModel, point: &Point3<f64>) -> Result<Point2<f64>, GeometryError> {
    let cam_coords = cam.rotation * (point - cam.center);
    let depth = cam_coords.z;
    if depth <= MIN_DEPTH {
        return Err(GeometryError::DepthNonPositive { depth });
    }
    let h = cam.intrinsics * cam_coords;
    Ok(Point2::new(h.x / h.z, h.y / h.z))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Fundamental matrix of the ordered pair `(i, j)`, unit Frobenius norm,
/// convention `x_j^T F x_i = 0`.
///
/// Built as `K_j^-T R_j [C_j - C_i]_x R_i^T K_i^-1`; rank 2 by construction.
pub fn fundamental_matrix(
    cam_i: &CameraModel,
    cam_j: &CameraModel,
) -> Result<Matrix3<f64>, GeometryError> {
    let baseline = cam_j.center - cam_i.center;
    let norm = baseline.norm();
    if norm <= MIN_BASELINE {
        return Err(GeometryError::CoincidentCenters { norm });
    }
    let ki_inv = cam_i
        .intrinsics
        .try_inverse()
        .ok_or(GeometryError::InvalidIntrinsics)?;
    let kj_inv = cam_j
        .intrinsics
        .try_inverse()
        .ok_or(GeometryError::InvalidIntrinsics)?;
    let f = kj_inv.transpose()
        * cam_j.rotation
        * skew(&baseline)
        * cam_i.rotation.transpose()
        * ki_inv;
    Ok(f / f.norm())
}

/// Epipolar line in image `j` of a pixel in image `i`, given `F` of `(i, j)`.
pub fn epipolar_line(f: &Matrix3<f64>, x_i: &Point2<f64>) -> Result<Line2, GeometryError> {
    let xh = Vector3::new(x_i.x, x_i.y, 1.0);
    let l = f * xh;
    if l.norm() <= LINE_REL_EPS * f.norm() * xh.norm() {
        return Err(GeometryError::DegenerateLine);
    }
    let ab = l.x.hypot(l.y);
    if ab <= LINE_REL_EPS * l.norm() {
        return Err(GeometryError::DegenerateLine);
    }
    Ok(Line2 { a: l.x / ab, b: l.y / ab, c: l.z / ab })
}

/// Euclidean pixel distance from a point to a normalized line.
pub fn point_line_distance(line: &Line2, x: &Point2<f64>) -> f64 {
    (line.a * x.x + line.b * x.y + line.c).abs()
}

/// World-to-rectified rotation for a camera pair.
///
/// Row 0 is the unit baseline; row 1 comes from crossing the normalized mean
/// of the two optical axes with the baseline; row 2 completes the
/// right-handed frame. The mean-gaze seed keeps the construction symmetric
/// in `i` and `j`.
pub fn rectifying_rotation(
    cam_i: &CameraModel,
    cam_j: &CameraModel,
) -> Result<Matrix3<f64>, GeometryError> {
    let baseline = cam_j.center - cam_i.center;
    let bnorm = baseline.norm();
    if bnorm <= MIN_BASELINE {
        return Err(GeometryError::CoincidentCenters { norm: bnorm });
    }
    let r_x = baseline / bnorm;
    let gaze =
        cam_i.rotation.transpose() * Vector3::z() + cam_j.rotation.transpose() * Vector3::z();
    let gnorm = gaze.norm();
    if gnorm <= 1e-9 {
        // Opposite gazes cancel; no usable seed axis.
        return Err(GeometryError::GazeParallelToBaseline);
    }
    let seed = gaze / gnorm;
    let y = seed.cross(&r_x);
    let ynorm = y.norm();
    if ynorm < MIN_GAZE_CROSS {
        return Err(GeometryError::GazeParallelToBaseline);
    }
    let r_y = y / ynorm;
    let r_z = r_x.cross(&r_y);
    Ok(Matrix3::from_rows(&[
        r_x.transpose(),
        r_y.transpose(),
        r_z.transpose(),
    ]))
}

/// Homogeneous linear least-squares triangulation (smallest singular vector).
pub fn triangulate_dlt(
    cams: &[CameraModel],
    pixels: &[Point2<f64>],
) -> Result<Point3<f64>, GeometryError> {
    assert_eq!(cams.len(), pixels.len(), "one pixel per camera");
    if cams.len() < 2 {
        return Err(GeometryError::InsufficientViews { needed: 2, got: cams.len() });
    }
    let mut a = DMatrix::<f64>::zeros(2 * cams.len(), 4);
    for (k, (cam, px)) in cams.iter().zip(pixels).enumerate() {
        let p = cam.projection_matrix();
        let r0: RowVector4<f64> = p.row(0).into_owned();
        let r1: RowVector4<f64> = p.row(1).into_owned();
        let r2: RowVector4<f64> = p.row(2).into_owned();
        a.row_mut(2 * k).copy_from(&(r2 * px.x - r0));
        a.row_mut(2 * k + 1).copy_from(&(r2 * px.y - r1));
    }
    let svd = SVD::new(a, false, true);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&p, &q| sv[p].total_cmp(&sv[q]));
    let s_min = sv[order[0]];
    let s_second = sv[order[1]];
    let s_max = sv[order[order.len() - 1]];
    if s_second - s_min <= SVD_GAP_REL * s_max {
        return Err(GeometryError::IllConditioned);
    }
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let h = vt.row(order[0]);
    let w = h[3];
    // h is unit norm, so a vanishing w means a point at infinity.
    if w.abs() <= 1e-12 {
        return Err(GeometryError::IllConditioned);
    }
    Ok(Point3::new(h[0] / w, h[1] / w, h[2] / w))
}

/// RANSAC triangulation over 2-view hypotheses.
///
/// Hypotheses are all `C(n,2)` pairs when `n <= 8`, otherwise `iterations`
/// seeded random pairs. A hypothesis counts its own two views as inliers by
/// construction and other views by strict reprojection distance below
/// `inlier_thresh_px`; the best consensus (first wins on ties) is refined by
/// DLT over its inliers. The returned mask is recomputed against the refined
/// point, so it reports which views agree with the final answer.
pub fn ransac_triangulate(
    cams: &[CameraModel],
    pixels: &[Point2<f64>],
    inlier_thresh_px: f64,
    iterations: usize,
    seed: u64,
) -> Result<(Point3<f64>, Vec<bool>), GeometryError> {
    assert_eq!(cams.len(), pixels.len(), "one pixel per camera");
    let n = cams.len();
    if n < 2 {
        return Err(GeometryError::InsufficientViews { needed: 2, got: n });
    }
    let pairs: Vec<(usize, usize)> = if n <= 8 {
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..iterations.max(1))
            .map(|_| loop {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i != j {
                    break (i.min(j), i.max(j));
                }
            })
            .collect()
    };

    let mut best: Option<(usize, Point3<f64>, Vec<bool>)> = None;
    for &(i, j) in &pairs {
        let Ok(candidate) = triangulate_dlt(&[cams[i], cams[j]], &[pixels[i], pixels[j]]) else {
            continue;
        };
        let mut mask = vec![false; n];
        mask[i] = true;
        mask[j] = true;
        let mut count = 2usize;
        for k in 0..n {
            if k == i || k == j {
                continue;
            }
            if let Ok(px) = project(&cams[k], &candidate) {
                if (px - pixels[k]).norm() < inlier_thresh_px {
                    mask[k] = true;
                    count += 1;
                }
            }
        }
        if best.as_ref().is_none_or(|(c, _, _)| count > *c) {
            best = Some((count, candidate, mask));
        }
    }
    let Some((_, candidate, mask)) = best else {
        return Err(GeometryError::NoConsensus);
    };

    let mut in_cams = Vec::new();
    let mut in_px = Vec::new();
    for k in 0..n {
        if mask[k] {
            in_cams.push(cams[k]);
            in_px.push(pixels[k]);
        }
    }
    let refined = triangulate_dlt(&in_cams, &in_px).unwrap_or(candidate);
    let final_mask: Vec<bool> = (0..n)
        .map(|k| match project(&cams[k], &refined) {
            Ok(px) => (px - pixels[k]).norm() < inlier_thresh_px,
            Err(_) => false,
        })
        .collect();
    Ok((refined, final_mask))
}

fn smallest_right_singular_vector(m: &Matrix3<f64>) -> Vector3<f64> {
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let sv = svd.singular_values;
    let mut min_i = 0;
    for i in 1..3 {
        if sv[i] < sv[min_i] {
            min_i = i;
        }
    }
    vt.row(min_i).transpose()
}

/// Angular spread in degrees of the epipolar pencil in image `i` across a
/// window.
///
/// The epipole of image `i` is the right null vector of `F`; the pencil line
/// through each window corner is the cross product of the two. The result is
/// the maximum pairwise direction difference taken modulo 180 degrees, which
/// lands in `[0, 90]`. An epipole at infinity gives parallel lines and
/// spread 0 with no special casing.
pub fn pair_degeneracy_check(
    cam_i: &CameraModel,
    cam_j: &CameraModel,
    roi: &PixelRect,
) -> Result<f64, GeometryError> {
    let f = fundamental_matrix(cam_i, cam_j)?;
    let e = smallest_right_singular_vector(&f);
    let mut dirs = [0.0f64; 4];
    for (slot, corner) in roi.corners().iter().enumerate() {
        let ch = Vector3::new(corner.x, corner.y, 1.0);
        let l = e.cross(&ch);
        let ab = l.x.hypot(l.y);
        if ab <= 1e-12 * e.norm() * ch.norm() {
            return Err(GeometryError::DegenerateLine);
        }
        // Direction (-b, a) of the line, folded into [0, pi).
        let mut theta = l.x.atan2(-l.y);
        if theta < 0.0 {
            theta += std::f64::consts::PI;
        }
        if theta >= std::f64::consts::PI {
            theta -= std::f64::consts::PI;
        }
        dirs[slot] = theta;
    }
    let mut max_spread = 0.0f64;
    for p in 0..4 {
        for q in p + 1..4 {
            let mut d = (dirs[p] - dirs[q]).abs();
            if d > std::f64::consts::FRAC_PI_2 {
                d = std::f64::consts::PI - d;
            }
            max_spread = max_spread.max(d);
        }
    }
    Ok(max_spread.to_degrees())
}

/// Rewrites a fundamental matrix for transformed pixel frames.
///
/// With `x_i' = H_i x_i` and `x_j' = H_j x_j`, the returned unit-norm matrix
/// satisfies `x_j'^T F' x_i' = 0` exactly when `x_j^T F x_i = 0`.
pub fn conjugate_fundamental(
    f: &Matrix3<f64>,
    h_i: &Matrix3<f64>,
    h_j: &Matrix3<f64>,
) -> Result<Matrix3<f64>, GeometryError> {
    let hi_inv = h_i.try_inverse().ok_or(GeometryError::IllConditioned)?;
    let hj_inv = h_j.try_inverse().ok_or(GeometryError::IllConditioned)?;
    let out = hj_inv.transpose() * f * hi_inv;
    let n = out.norm();
    if !(n > 0.0) {
        return Err(GeometryError::IllConditioned);
    }
    Ok(out / n)
}
