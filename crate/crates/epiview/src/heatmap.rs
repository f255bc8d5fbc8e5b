//! Raster keypoint distributions and the coordinate chain that connects
//! them: Gaussian label synthesis, crop/heatmap affines, rectification
//! homographies, inverse-homography warping with bilinear interpolation, and
//! row-wise flattening with its affine row correspondence.
//!
//! Coordinate frames, in the order a pixel travels through them:
//! image (original camera pixels) -> crop (box cut out and resampled to
//! height `h_c`) -> heatmap (resampled again to height `h_h`). Rectified
//! variants of all three exist per camera pair; `chain_*` maps plain heatmap
//! pixels straight to rectified heatmap pixels.

use nalgebra::{Matrix3, Point2, Vector3};

use crate::geometry::{rectifying_rotation, CameraModel, GeometryError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HeatmapError {
    #[error("value buffer has {got} entries, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value {value} at flat index {index}")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("heatmap dimensions must be at least 2x2")]
    InvalidSize,
    #[error("invalid crop transform: {reason}")]
    InvalidCrop { reason: &'static str },
    #[error("homography is singular")]
    SingularHomography,
    #[error("row rescaling factor is zero")]
    ZeroScale,
    #[error("epipole falls inside or near the cropped field of view")]
    EpipoleInImage,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Dense per-channel keypoint probabilities in `[0, 1]`.
///
/// Layout is row-major within a channel and channel-outermost overall:
/// `values[c*W*H + y*W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub w: usize,
    pub h: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// Builds a heatmap, clamping finite values into `[0, 1]` and rejecting
    /// non-finite entries and shape mismatches.
    pub fn new(w: usize, h: usize, c: usize, mut values: Vec<f64>) -> Result<Self, HeatmapError> {
        if w < 2 || h < 2 {
            return Err(HeatmapError::InvalidSize);
        }
        if values.len() != w * h * c {
            return Err(HeatmapError::ShapeMismatch { expected: w * h * c, got: values.len() });
        }
        for (index, v) in values.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(HeatmapError::ValueOutOfRange { index, value: *v });
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { w, h, c, values })
    }

    pub fn zeros(w: usize, h: usize, c: usize) -> Self {
        assert!(w >= 2 && h >= 2);
        Self { w, h, c, values: vec![0.0; w * h * c] }
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.values[ch * self.w * self.h..(ch + 1) * self.w * self.h]
    }

    pub fn at(&self, ch: usize, x: usize, y: usize) -> f64 {
        self.values[ch * self.w * self.h + y * self.w + x]
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.w == other.w && self.h == other.h && self.c == other.c
    }
}

/// An unconstrained grid with heatmap layout; holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub w: usize,
    pub h: usize,
    pub c: usize,
    pub values: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(w: usize, h: usize, c: usize) -> Self {
        Self { w, h, c, values: vec![0.0; w * h * c] }
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.values[ch * self.w * self.h..(ch + 1) * self.w * self.h]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [f64] {
        &mut self.values[ch * self.w * self.h..(ch + 1) * self.w * self.h]
    }

    pub fn at(&self, ch: usize, x: usize, y: usize) -> f64 {
        self.values[ch * self.w * self.h + y * self.w + x]
    }

    /// `self += alpha * other`, matching shapes required.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor3) {
        assert!(self.w == other.w && self.h == other.h && self.c == other.c);
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }
}

/// Renders one Gaussian blob per channel, peak value 1 at the keypoint;
/// channels with no keypoint stay all-zero.
pub fn gaussian_label(
    keypoints: &[Option<Point2<f64>>],
    sigma: f64,
    w: usize,
    h: usize,
) -> Heatmap {
    assert!(sigma > 0.0, "sigma must be positive");
    assert!(w >= 2 && h >= 2);
    let mut out = Heatmap::zeros(w, h, keypoints.len());
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (c, kp) in keypoints.iter().enumerate() {
        let Some(kp) = kp else { continue };
        let plane = &mut out.values[c * w * h..(c + 1) * w * h];
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 - kp.x;
                let dy = y as f64 - kp.y;
                plane[y * w + x] = (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    out
}

/// Box-crop and resample parameters taking original-image pixels to heatmap
/// pixels. Serialized with exactly these field names.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CropTransform {
    /// Top-left of the (square) bounding box in image pixels.
    pub u_x: f64,
    pub u_y: f64,
    /// Box height in image pixels.
    pub h_b: f64,
    /// Extra shift applied in cropped-image pixels.
    pub w_x: f64,
    pub w_y: f64,
    /// Cropped-image height in pixels.
    pub h_c: f64,
    /// Heatmap height in pixels.
    pub h_h: f64,
}

impl CropTransform {
    pub fn s(&self) -> f64 {
        self.h_c / self.h_b
    }

    pub fn s_h(&self) -> f64 {
        self.h_h / self.h_c
    }

    pub fn validate(&self) -> Result<(), HeatmapError> {
        if !(self.h_b > 0.0 && self.h_c > 0.0 && self.h_h > 0.0) {
            return Err(HeatmapError::InvalidCrop { reason: "h_b, h_c, h_h must be positive" });
        }
        Ok(())
    }

    /// Raster side length of the (square) heatmap this crop produces.
    pub fn heatmap_size(&self) -> Result<usize, HeatmapError> {
        let r = self.h_h.round();
        if (self.h_h - r).abs() > 1e-9 || r < 2.0 {
            return Err(HeatmapError::InvalidCrop {
                reason: "h_h must be an integer of at least 2 to raster heatmaps",
            });
        }
        Ok(r as usize)
    }

    pub fn heatmap_from_image(&self) -> Matrix3<f64> {
        let chain = crop_to_heatmap_chain(self);
        chain.heatmap_from_crop * chain.crop_from_image
    }

    pub fn image_from_heatmap(&self) -> Matrix3<f64> {
        let chain = crop_to_heatmap_chain(self);
        chain.image_from_crop * chain.crop_from_heatmap
    }
}

/// The two affine legs of the image-to-heatmap chain plus their inverses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropChain {
    pub crop_from_image: Matrix3<f64>,
    pub image_from_crop: Matrix3<f64>,
    pub heatmap_from_crop: Matrix3<f64>,
    pub crop_from_heatmap: Matrix3<f64>,
}

/// Exact closed-form chain matrices for a crop transform.
pub fn crop_to_heatmap_chain(t: &CropTransform) -> CropChain {
    let s = t.s();
    let s_h = t.s_h();
    let crop_from_image = Matrix3::new(
        s, 0.0, t.w_x - s * t.u_x,
        0.0, s, t.w_y - s * t.u_y,
        0.0, 0.0, 1.0,
    );
    let image_from_crop = Matrix3::new(
        1.0 / s, 0.0, t.u_x - t.w_x / s,
        0.0, 1.0 / s, t.u_y - t.w_y / s,
        0.0, 0.0, 1.0,
    );
    let heatmap_from_crop = Matrix3::new(s_h, 0.0, 0.0, 0.0, s_h, 0.0, 0.0, 0.0, 1.0);
    let crop_from_heatmap =
        Matrix3::new(1.0 / s_h, 0.0, 0.0, 0.0, 1.0 / s_h, 0.0, 0.0, 0.0, 1.0);
    CropChain { crop_from_image, image_from_crop, heatmap_from_crop, crop_from_heatmap }
}

/// The camera whose pixel frame is the heatmap grid of `crop`: intrinsics
/// conjugated by the image-to-heatmap affine, pose unchanged.
pub fn heatmap_frame_camera(cam: &CameraModel, crop: &CropTransform) -> CameraModel {
    CameraModel {
        intrinsics: crop.heatmap_from_image() * cam.intrinsics,
        rotation: cam.rotation,
        center: cam.center,
    }
}

/// Per-view inputs of the affine row correspondence between two rectified
/// heatmaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMapView {
    pub f_y: f64,
    pub p_y: f64,
    pub s: f64,
    pub s_h: f64,
    /// y of the rectified bounding-box origin in rectified image pixels.
    pub ubar_y: f64,
}

/// Row rescaling factors `(a, b)` with `v_i = a * v_j + b` on rectified
/// heatmap rows.
///
/// General per-view-scale form; it reduces to the familiar single-`s_h`
/// expressions `a = (s_i f_y_i)/(s_j f_y_j)` and
/// `b = s_h s_i ((ubar_y_j - p_y_j) f_y_i / f_y_j + p_y_i - ubar_y_i)` when
/// both views share `s_h`. Derivation: both rectified frames share their y
/// and z axes, so a 3D point has one ray slope `rho = d_y / d_z` in both,
/// rectified image rows are `v = f_y rho + p_y`, and the crop chain maps
/// them affinely into heatmap rows.
pub fn rescaling_factors(view_i: &RowMapView, view_j: &RowMapView) -> (f64, f64) {
    let a = (view_i.s_h * view_i.s * view_i.f_y) / (view_j.s_h * view_j.s * view_j.f_y);
    let b = view_i.s_h
        * view_i.s
        * ((view_j.ubar_y - view_j.p_y) * view_i.f_y / view_j.f_y + view_i.p_y - view_i.ubar_y);
    (a, b)
}

/// Everything pair-specific the transfer pipeline needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RectifiedPairGeometry {
    /// Rectification homographies in original image pixels, `K R_n R^T K^-1`.
    pub h_r_i: Matrix3<f64>,
    pub h_r_j: Matrix3<f64>,
    /// Heatmap pixels -> rectified heatmap pixels, per view.
    pub chain_i: Matrix3<f64>,
    pub chain_j: Matrix3<f64>,
    /// Rectified fundamental matrix in rectified image pixels, unit
    /// Frobenius norm; rows/columns touching index 0 and entry (1,1) vanish.
    pub f_rect: Matrix3<f64>,
    /// Row correspondence `v_i = a * v_j + b` on rectified heatmap rows.
    pub a: f64,
    pub b: f64,
    /// Square raster sides of the source heatmaps the chains expect.
    pub hm_size_i: usize,
    pub hm_size_j: usize,
    /// Rectified raster extents, fitted to each view's warped heatmap quad
    /// so rectification never clips content, only empty margin.
    pub rect_w_i: usize,
    pub rect_h_i: usize,
    pub rect_w_j: usize,
    pub rect_h_j: usize,
}

/// Rasters wider or taller than this multiple of the heatmap side mean the
/// epipole sits close enough to the window to stretch it without bound.
const MAX_RECT_SIDE_FACTOR: f64 = 12.0;

/// Largest row offset |b| the raster placement leaves in the pair
/// correspondence; roughly a fifth of the default window, well inside the
/// regime where resampled flats still overlap across most of their rows.
const ROW_OFFSET_BAND: f64 = 9.5;

fn rect_homography(cam: &CameraModel, r_n: &Matrix3<f64>) -> Result<Matrix3<f64>, HeatmapError> {
    let k_inv = cam
        .intrinsics
        .try_inverse()
        .ok_or(HeatmapError::Geometry(GeometryError::InvalidIntrinsics))?;
    Ok(cam.intrinsics * r_n * cam.rotation.transpose() * k_inv)
}

/// One view's rectified window before its rows are placed: the warp into
/// rectified image pixels, the center anchor, the column placement, and the
/// row half-extent of the warped heatmap quad about the anchor, all in
/// rectified heatmap cells.
struct RectWindow {
    to_rect: Matrix3<f64>,
    mbar: Point2<f64>,
    ss: f64,
    ext_y: f64,
    rect_w: usize,
    c_x: f64,
}

/// Measures one view's rectified window: anchors the warped position of the
/// heatmap center, bounds the warped quad around it, and fixes the column
/// placement symmetrically. Row placement waits for the pair, because the
/// two views' row frames must stay aligned.
fn rect_window(
    h_r: &Matrix3<f64>,
    crop: &CropTransform,
    size: usize,
) -> Result<RectWindow, HeatmapError> {
    let img_from_hm = crop.image_from_heatmap();
    let to_rect = h_r * img_from_hm;
    let c = (size as f64 - 1.0) / 2.0;
    let center = Vector3::new(c, c, 1.0);
    let pc = to_rect * center;
    if pc.z.abs() <= 1e-9 * to_rect.norm() * center.norm() {
        return Err(HeatmapError::EpipoleInImage);
    }
    // The homogeneous w is affine over the heatmap plane, so corner checks
    // bound it over the whole square; signs are normalized by the center.
    let last = size as f64 - 1.0;
    let mbar = Point2::new(pc.x / pc.z, pc.y / pc.z);
    let (mut ext_x, mut ext_y) = (0.0f64, 0.0f64);
    for (cx, cy) in [(0.0, 0.0), (last, 0.0), (last, last), (0.0, last)] {
        let p = to_rect * Vector3::new(cx, cy, 1.0);
        if p.z / pc.z <= 1e-9 {
            return Err(HeatmapError::EpipoleInImage);
        }
        ext_x = ext_x.max((p.x / p.z - mbar.x).abs());
        ext_y = ext_y.max((p.y / p.z - mbar.y).abs());
    }
    let ss = crop.s() * crop.s_h();
    // Homographies keep quad edges straight, so corner extremes bound the
    // whole warped square. A near-window epipole blows the quad up; treat
    // oversized rasters as the epipole being effectively in view.
    let (ext_x, ext_y) = (ss * ext_x, ss * ext_y);
    let cap = MAX_RECT_SIDE_FACTOR * size as f64;
    if !(ext_x.is_finite() && ext_y.is_finite()) || 2.0 * ext_x > cap || 2.0 * ext_y > cap {
        return Err(HeatmapError::EpipoleInImage);
    }
    // Matching the raster's parity to the heatmap's keeps the anchored
    // center on the same sub-cell phase, so an axis-aligned rectification
    // warps by an exact integer translation instead of resampling.
    let (rect_w, c_x) = parity_extent(ext_x, size);
    Ok(RectWindow { to_rect, mbar, ss, ext_y, rect_w, c_x })
}

/// Smallest raster side of the same parity as `size` whose center index
/// clears `ext` with at least a one-cell margin, plus that center.
fn parity_extent(ext: f64, size: usize) -> (usize, f64) {
    if size % 2 == 0 {
        let base = (ext + 0.5).ceil() as usize + 1;
        (2 * base, base as f64 - 0.5)
    } else {
        let base = ext.ceil() as usize + 1;
        (2 * base + 1, base as f64)
    }
}

/// Rows the quad overhangs past one edge of the bare `size`-row window, plus
/// a one-cell margin.
fn row_overhang(ext_y: f64, size: usize) -> usize {
    let c_std = (size as f64 - 1.0) / 2.0;
    (ext_y - c_std).max(0.0).ceil() as usize + 1
}

/// Finalizes one view's chain once its rows are placed: the anchored center
/// sits `top` rows below the raster's first row.
fn place_chain(
    win: &RectWindow,
    crop: &CropTransform,
    size: usize,
    top: usize,
) -> (Matrix3<f64>, f64) {
    let c_y = (size as f64 - 1.0) / 2.0 + top as f64;
    let rect_crop = CropTransform {
        u_x: win.mbar.x - win.c_x / win.ss,
        u_y: win.mbar.y - c_y / win.ss,
        h_b: crop.h_b,
        w_x: 0.0,
        w_y: 0.0,
        h_c: crop.h_c,
        h_h: crop.h_h,
    };
    let chain = rect_crop.heatmap_from_image() * win.to_rect;
    (chain, rect_crop.u_y)
}

/// Assembles the full rectified-pair geometry for two calibrated, cropped
/// views: rectifying rotation, per-view homography chains, the rectified
/// fundamental matrix, and the row rescaling factors.
pub fn rectified_pair(
    cam_i: &CameraModel,
    cam_j: &CameraModel,
    crop_i: &CropTransform,
    crop_j: &CropTransform,
) -> Result<RectifiedPairGeometry, HeatmapError> {
    crop_i.validate()?;
    crop_j.validate()?;
    let size_i = crop_i.heatmap_size()?;
    let size_j = crop_j.heatmap_size()?;
    let r_n = rectifying_rotation(cam_i, cam_j)?;
    let h_r_i = rect_homography(cam_i, &r_n)?;
    let h_r_j = rect_homography(cam_j, &r_n)?;
    let win_i = rect_window(&h_r_i, crop_i, size_i)?;
    let win_j = rect_window(&h_r_j, crop_j, size_j)?;
    let (f_y_i, p_y_i) = (cam_i.intrinsics[(1, 1)], cam_i.intrinsics[(1, 2)]);
    let (f_y_j, p_y_j) = (cam_j.intrinsics[(1, 1)], cam_j.intrinsics[(1, 2)]);
    // Row scale ratio of the correspondence v_i = a v_j + b; it is fixed by
    // cameras and crops alone, so it is known before rows are placed.
    let a = (crop_i.s_h() * crop_i.s() * f_y_i) / (crop_j.s_h() * crop_j.s() * f_y_j);
    if !(a.is_finite() && a > 0.0) {
        return Err(HeatmapError::Geometry(GeometryError::InvalidIntrinsics));
    }
    let c_std_i = (size_i as f64 - 1.0) / 2.0;
    let c_std_j = (size_j as f64 - 1.0) / 2.0;
    let (_, b_bare) = rescaling_factors(
        &RowMapView {
            f_y: f_y_i,
            p_y: p_y_i,
            s: crop_i.s(),
            s_h: crop_i.s_h(),
            ubar_y: win_i.mbar.y - c_std_i / win_i.ss,
        },
        &RowMapView {
            f_y: f_y_j,
            p_y: p_y_j,
            s: crop_j.s(),
            s_h: crop_j.s_h(),
            ubar_y: win_j.mbar.y - c_std_j / win_j.ss,
        },
    );
    // Minimal placement just covers each quad. Extra top padding then pulls
    // a grossly misaligned row correspondence back into a small-offset
    // band: each top row on side i shifts b by +1, each on side j by -a,
    // and a bounded offset keeps the resampled flats mostly overlapping.
    let mut top_i = row_overhang(win_i.ext_y, size_i);
    let mut top_j = row_overhang(win_j.ext_y, size_j);
    let mut b_placed = b_bare + top_i as f64 - a * top_j as f64;
    if !b_placed.is_finite() {
        return Err(HeatmapError::EpipoleInImage);
    }
    if b_placed > ROW_OFFSET_BAND {
        let n = ((b_placed - ROW_OFFSET_BAND) / a).ceil();
        top_j += n as usize;
        b_placed -= a * n;
    }
    if b_placed < -ROW_OFFSET_BAND {
        let m = (-ROW_OFFSET_BAND - b_placed).ceil();
        top_i += m as usize;
    }
    let rect_h_i = top_i + size_i + row_overhang(win_i.ext_y, size_i);
    let rect_h_j = top_j + size_j + row_overhang(win_j.ext_y, size_j);
    // Band padding can only stretch a raster further; a pair whose frames
    // need that much padding to stay aligned is as unusable as a near-view
    // epipole.
    if rect_h_i > MAX_RECT_SIDE_FACTOR as usize * size_i
        || rect_h_j > MAX_RECT_SIDE_FACTOR as usize * size_j
    {
        return Err(HeatmapError::EpipoleInImage);
    }
    let (chain_i, ubar_y_i) = place_chain(&win_i, crop_i, size_i, top_i);
    let (chain_j, ubar_y_j) = place_chain(&win_j, crop_j, size_j, top_j);
    let (rect_w_i, rect_w_j) = (win_i.rect_w, win_j.rect_w);
    let (a, b) = rescaling_factors(
        &RowMapView { f_y: f_y_i, p_y: p_y_i, s: crop_i.s(), s_h: crop_i.s_h(), ubar_y: ubar_y_i },
        &RowMapView { f_y: f_y_j, p_y: p_y_j, s: crop_j.s(), s_h: crop_j.s_h(), ubar_y: ubar_y_j },
    );
    let f_rect = Matrix3::new(
        0.0, 0.0, 0.0,
        0.0, 0.0, -1.0 / f_y_j,
        0.0, 1.0 / f_y_i, p_y_j / f_y_j - p_y_i / f_y_i,
    );
    let f_rect = f_rect / f_rect.norm();
    Ok(RectifiedPairGeometry {
        h_r_i,
        h_r_j,
        chain_i,
        chain_j,
        f_rect,
        a,
        b,
        hm_size_i: size_i,
        hm_size_j: size_j,
        rect_w_i,
        rect_h_i,
        rect_w_j,
        rect_h_j,
    })
}

/// Collects the bilinear taps at `(x, y)`: flat indices and weights of the
/// up-to-four surrounding cells that lie inside the `w x h` domain. Taps
/// outside contribute nothing, which makes out-of-domain reads fade to 0.
/// Shared by the forward warp, its transpose, and the line-sampling oracle
/// so all of them agree bit-for-bit on boundary behavior.
fn bilinear_taps(w: usize, h: usize, x: f64, y: f64) -> ([(usize, f64); 4], usize) {
    let mut taps = [(0usize, 0.0f64); 4];
    let mut count = 0;
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as i64;
    let y0 = y0 as i64;
    for (yi, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
        if yi < 0 || yi >= h as i64 || wy == 0.0 {
            continue;
        }
        for (xi, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
            if xi < 0 || xi >= w as i64 || wx == 0.0 {
                continue;
            }
            taps[count] = (yi as usize * w + xi as usize, wy * wx);
            count += 1;
        }
    }
    (taps, count)
}

fn bilinear_sample(src: &[f64], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let (taps, count) = bilinear_taps(w, h, x, y);
    let mut acc = 0.0;
    for &(idx, wt) in &taps[..count] {
        acc += src[idx] * wt;
    }
    acc
}

/// Warps one channel by a homography: every output pixel samples the input
/// at `H^-1 x` with bilinear interpolation; reads outside the input domain
/// contribute 0, and the output is clamped to `[0, 1]` (a no-op for inputs
/// already in range, since bilinear interpolation cannot leave the hull).
pub fn warp(
    src: &[f64],
    src_w: usize,
    src_h: usize,
    hom: &Matrix3<f64>,
    out_w: usize,
    out_h: usize,
) -> Result<Vec<f64>, HeatmapError> {
    assert_eq!(src.len(), src_w * src_h, "channel shape mismatch");
    if hom.determinant().abs() <= 1e-12 {
        return Err(HeatmapError::SingularHomography);
    }
    let inv = hom.try_inverse().ok_or(HeatmapError::SingularHomography)?;
    let mut out = vec![0.0; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            let p = inv * Vector3::new(x as f64, y as f64, 1.0);
            if p.z.abs() <= 1e-12 {
                continue;
            }
            out[y * out_w + x] =
                bilinear_sample(src, src_w, src_h, p.x / p.z, p.y / p.z).clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Transpose of [`warp`] as a linear map of the grid values: scatters an
/// output-sized gradient back onto the source grid through the identical
/// tap structure. The forward clamp never binds for in-range inputs and is
/// treated as the identity.
pub fn warp_transpose(
    grad_out: &[f64],
    out_w: usize,
    out_h: usize,
    hom: &Matrix3<f64>,
    src_w: usize,
    src_h: usize,
) -> Result<Vec<f64>, HeatmapError> {
    assert_eq!(grad_out.len(), out_w * out_h, "gradient shape mismatch");
    if hom.determinant().abs() <= 1e-12 {
        return Err(HeatmapError::SingularHomography);
    }
    let inv = hom.try_inverse().ok_or(HeatmapError::SingularHomography)?;
    let mut grad_src = vec![0.0; src_w * src_h];
    for y in 0..out_h {
        for x in 0..out_w {
            let g = grad_out[y * out_w + x];
            let p = inv * Vector3::new(x as f64, y as f64, 1.0);
            if p.z.abs() <= 1e-12 {
                continue;
            }
            let (taps, count) = bilinear_taps(src_w, src_h, p.x / p.z, p.y / p.z);
            for &(idx, wt) in &taps[..count] {
                grad_src[idx] += g * wt;
            }
        }
    }
    Ok(grad_src)
}

/// A 1D distribution over rectified rows: one maximum per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatDistribution {
    pub values: Vec<f64>,
}

impl FlatDistribution {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Row-wise max-pool of one channel, plus the argmax column per row (ties
/// break to the smallest column, making subgradients deterministic).
pub fn row_max(ch: &[f64], w: usize, h: usize) -> (FlatDistribution, Vec<usize>) {
    assert_eq!(ch.len(), w * h, "channel shape mismatch");
    let mut values = Vec::with_capacity(h);
    let mut argmax = Vec::with_capacity(h);
    for y in 0..h {
        let row = &ch[y * w..(y + 1) * w];
        let mut best = row[0];
        let mut best_x = 0usize;
        for (x, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_x = x;
            }
        }
        values.push(best);
        argmax.push(best_x);
    }
    (FlatDistribution { values }, argmax)
}

/// Resamples a flat distribution at `a * v + b` with linear interpolation;
/// positions outside `[0, len - 1]` read 0.
pub fn resample_flat(
    q: &FlatDistribution,
    a: f64,
    b: f64,
    out_h: usize,
) -> Result<FlatDistribution, HeatmapError> {
    if a.abs() < 1e-12 {
        return Err(HeatmapError::ZeroScale);
    }
    let n = q.len();
    let mut values = vec![0.0; out_h];
    for (v, slot) in values.iter_mut().enumerate() {
        let pos = a * v as f64 + b;
        if pos < 0.0 || pos > (n - 1) as f64 {
            continue;
        }
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        let mut val = q.values[i0] * (1.0 - frac);
        if frac > 0.0 {
            val += q.values[i0 + 1] * frac;
        }
        *slot = val;
    }
    Ok(FlatDistribution { values })
}

/// Transpose of [`resample_flat`] as a linear map: scatters an output-sized
/// gradient back over the input flat through the identical interpolation
/// branches.
pub fn resample_flat_transpose(
    grad_out: &[f64],
    a: f64,
    b: f64,
    in_len: usize,
) -> Result<Vec<f64>, HeatmapError> {
    if a.abs() < 1e-12 {
        return Err(HeatmapError::ZeroScale);
    }
    let mut grad_in = vec![0.0; in_len];
    for (v, &g) in grad_out.iter().enumerate() {
        let pos = a * v as f64 + b;
        if pos < 0.0 || pos > (in_len - 1) as f64 {
            continue;
        }
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        grad_in[i0] += g * (1.0 - frac);
        if frac > 0.0 {
            grad_in[i0 + 1] += g * frac;
        }
    }
    Ok(grad_in)
}

/// Dense-sampling transfer oracle: for every output pixel, takes the maximum
/// of bilinear samples of `p_j` along the clipped segment of its epipolar
/// line `F x` inside `p_j`'s domain. Pixels whose line is degenerate or
/// misses the domain read 0. `f` must live in the same pixel frames as the
/// input and output grids.
///
/// This is deliberately the slow, direct evaluation of line max-pooling; the
/// rectified pipeline is tested against it.
pub fn direct_transfer_oracle(
    p_j: &[f64],
    w: usize,
    h: usize,
    f: &Matrix3<f64>,
    out_w: usize,
    out_h: usize,
    samples_per_line: usize,
) -> Vec<f64> {
    assert_eq!(p_j.len(), w * h, "channel shape mismatch");
    assert!(
        samples_per_line >= 4 * w.max(h),
        "sampling density below the 4x max-dimension contract"
    );
    let fnorm = f.norm();
    let mut out = vec![0.0; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            let xh = Vector3::new(x as f64, y as f64, 1.0);
            let l = f * xh;
            let n2 = l.x * l.x + l.y * l.y;
            if l.norm() <= 1e-12 * fnorm * xh.norm() || n2.sqrt() <= 1e-12 * l.norm() {
                continue;
            }
            // Closest point of the line to the origin plus a unit direction.
            let p0x = -l.x * l.z / n2;
            let p0y = -l.y * l.z / n2;
            let inv_n = 1.0 / n2.sqrt();
            let dx = -l.y * inv_n;
            let dy = l.x * inv_n;
            // Slab-clip the parameter to the inclusive pixel domain.
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut hit = true;
            for (p0c, dc, hi) in [(p0x, dx, (w - 1) as f64), (p0y, dy, (h - 1) as f64)] {
                if dc.abs() > 1e-12 {
                    let ta = (0.0 - p0c) / dc;
                    let tb = (hi - p0c) / dc;
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                } else if p0c < 0.0 || p0c > hi {
                    hit = false;
                    break;
                }
            }
            if !hit || t1 < t0 {
                continue;
            }
            let mut best = 0.0f64;
            for k in 0..samples_per_line {
                let t = t0 + (t1 - t0) * k as f64 / (samples_per_line - 1) as f64;
                best = best.max(bilinear_sample(p_j, w, h, p0x + t * dx, p0y + t * dy));
            }
            out[y * out_w + x] = best;
        }
    }
    out
}
