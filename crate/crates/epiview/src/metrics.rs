//! Detection accuracy and cross-view precision measures: PCK curves over
//! normalized pixel distances, and reprojection error of plain DLT
//! triangulations of per-view detections.
//!
//! Callers choose the pixel frame by choosing the cameras they pass in; to
//! evaluate heatmap-grid detections, pass cameras conjugated with
//! [`crate::heatmap::heatmap_frame_camera`].

use nalgebra::Point2;

use crate::geometry::{project, triangulate_dlt, CameraModel, GeometryError};
use crate::heatmap::Heatmap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    EmptySamples,
}

/// Fraction of detections within each normalized distance threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PckCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

/// The default threshold grid: 0.00 to 0.50 in steps of 0.01.
pub fn default_thresholds() -> Vec<f64> {
    (0..=50).map(|i| i as f64 * 0.01).collect()
}

/// PCK at every threshold: the fraction of samples whose distance to the
/// truth, normalized by the detection-window width, is at most t.
pub fn pck_curve(
    detections: &[Point2<f64>],
    truths: &[Point2<f64>],
    window_w: f64,
    thresholds: &[f64],
) -> Result<PckCurve, MetricsError> {
    assert_eq!(detections.len(), truths.len(), "sample lists must align");
    assert!(window_w > 0.0, "window width must be positive");
    if detections.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    let normalized: Vec<f64> = detections
        .iter()
        .zip(truths)
        .map(|(d, t)| (d - t).norm() / window_w)
        .collect();
    let values = thresholds
        .iter()
        .map(|&t| normalized.iter().filter(|&&r| r <= t).count() as f64 / normalized.len() as f64)
        .collect();
    Ok(PckCurve { thresholds: thresholds.to_vec(), values })
}

/// Why a channel contributed no residuals.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelExclusion {
    /// Fewer than two views cleared the confidence floor.
    TooFewViews { views: usize },
    /// Triangulation or back-projection failed.
    Geometry(GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReprojStats {
    /// Population mean and standard deviation over all residuals, in the
    /// pixel frame of the supplied cameras; NaN when nothing qualified.
    pub mean: f64,
    pub std: f64,
    /// (view, channel, residual) for every qualifying detection.
    pub residuals: Vec<(usize, usize, f64)>,
    pub excluded: Vec<(usize, ChannelExclusion)>,
}

/// Triangulates each channel's detections over every view whose confidence
/// clears the floor (non-strict), projects the point back, and aggregates
/// per-view residuals. Channels with fewer than two qualifying views, or
/// whose triangulation fails, are excluded and reported, never fatal.
pub fn reprojection_error(
    cameras: &[CameraModel],
    detections: &[Vec<Option<(Point2<f64>, f64)>>],
    confidence_floor: f64,
) -> ReprojStats {
    assert_eq!(cameras.len(), detections.len(), "one detection list per camera");
    let channels = detections.iter().map(|d| d.len()).max().unwrap_or(0);
    let mut residuals = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..channels {
        let mut cams = Vec::new();
        let mut pts = Vec::new();
        let mut view_ids = Vec::new();
        for (v, per_view) in detections.iter().enumerate() {
            let Some(Some((p, conf))) = per_view.get(c) else { continue };
            if *conf >= confidence_floor {
                cams.push(cameras[v]);
                pts.push(*p);
                view_ids.push(v);
            }
        }
        if cams.len() < 2 {
            excluded.push((c, ChannelExclusion::TooFewViews { views: cams.len() }));
            continue;
        }
        let point = match triangulate_dlt(&cams, &pts) {
            Ok(p) => p,
            Err(e) => {
                excluded.push((c, ChannelExclusion::Geometry(e)));
                continue;
            }
        };
        let mut channel_residuals = Vec::with_capacity(cams.len());
        let mut failed = None;
        for ((cam, det), &v) in cams.iter().zip(&pts).zip(&view_ids) {
            match project(cam, &point) {
                Ok(reproj) => channel_residuals.push((v, c, (det - reproj).norm())),
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        match failed {
            Some(e) => excluded.push((c, ChannelExclusion::Geometry(e))),
            None => residuals.extend(channel_residuals),
        }
    }
    let (mean, std) = if residuals.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let n = residuals.len() as f64;
        let mean = residuals.iter().map(|r| r.2).sum::<f64>() / n;
        let var = residuals.iter().map(|r| (r.2 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    ReprojStats { mean, std, residuals, excluded }
}

/// Grid argmax per channel with its peak value as confidence; ties break to
/// the smallest row-major index.
pub fn argmax_keypoints(h: &Heatmap) -> Vec<(Point2<f64>, f64)> {
    let mut out = Vec::with_capacity(h.c);
    for c in 0..h.c {
        let plane = h.channel(c);
        let mut best = plane[0];
        let mut best_idx = 0usize;
        for (idx, &v) in plane.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                best_idx = idx;
            }
        }
        let (x, y) = (best_idx % h.w, best_idx / h.w);
        out.push((Point2::new(x as f64, y as f64), best));
    }
    out
}
