//! Loss assembly over a multi-camera frame: squared-error labeled and
//! bootstrap terms, the cross-view divergence term, triangulation-based
//! pseudo-label generation, and a direct heatmap optimizer that descends
//! the total loss through logistic-parameterized grids.

use nalgebra::{Point2, Point3};

use crate::divergence::{scene_loss, DivergenceConfig, DivergenceError, ScenePair};
use crate::geometry::{
    pair_degeneracy_check, project, ransac_triangulate, triangulate_dlt, GeometryError,
    PixelRect, Rig,
};
use crate::heatmap::{
    heatmap_frame_camera, rectified_pair, CropTransform, Heatmap, HeatmapError, Tensor3,
};
use crate::metrics::{argmax_keypoints, reprojection_error};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SupervisionError {
    #[error("heatmap shapes disagree: {0}")]
    ShapeMismatch(&'static str),
    #[error("no loss term applies: no labels, no pseudo-labels, no view pairs")]
    NoApplicableTerm,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("view references unknown camera id {id:?}")]
    UnknownCamera { id: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
}

/// One camera's slice of a frame: its prediction and whatever supervision
/// exists for it. Annotations are per-channel points in original image
/// pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRecord {
    pub camera_id: String,
    pub crop: CropTransform,
    pub pred: Heatmap,
    pub label: Option<Heatmap>,
    pub pseudo_label: Option<Heatmap>,
    pub annotations: Vec<Option<Point2<f64>>>,
}

/// A single synchronized multi-view frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSnapshot {
    pub frame: u64,
    pub views: Vec<ViewRecord>,
}

impl SceneSnapshot {
    /// Checks the structural invariants: every heatmap shares one
    /// (W, H, C), and every view resolves to a rig camera.
    pub fn validate(&self, rig: &Rig) -> Result<(), SupervisionError> {
        let Some(first) = self.views.first() else {
            return Ok(());
        };
        let shape = (first.pred.w, first.pred.h, first.pred.c);
        for view in &self.views {
            if rig.camera_by_id(&view.camera_id).is_none() {
                return Err(SupervisionError::UnknownCamera { id: view.camera_id.clone() });
            }
            for hm in [Some(&view.pred), view.label.as_ref(), view.pseudo_label.as_ref()]
                .into_iter()
                .flatten()
            {
                if (hm.w, hm.h, hm.c) != shape {
                    return Err(SupervisionError::ShapeMismatch(
                        "all heatmaps of a snapshot must share one (W, H, C)",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.views.first().map_or(0, |v| v.pred.c)
    }
}

/// Term weights of the total loss; the labeled term is unweighted.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub lambda_e: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_e: 5.0, lambda_p: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> bool {
        self.lambda_e >= 0.0 && self.lambda_p >= 0.0
    }
}

fn squared_error_loss(pred: &Heatmap, target: &Heatmap) -> Result<(f64, Tensor3), SupervisionError> {
    if !pred.same_shape(target) {
        return Err(SupervisionError::ShapeMismatch("prediction and target shapes differ"));
    }
    let mut grad = Tensor3::zeros(pred.w, pred.h, pred.c);
    let mut loss = 0.0;
    for ((g, p), t) in grad.values.iter_mut().zip(&pred.values).zip(&target.values) {
        let d = p - t;
        loss += d * d;
        *g = 2.0 * d;
    }
    Ok((loss, grad))
}

/// Sum of squared differences against a label heatmap; gradient 2(pred - z).
/// Unnormalized, so magnitudes scale with W*H*C.
pub fn labeled_loss(pred: &Heatmap, z: &Heatmap) -> Result<(f64, Tensor3), SupervisionError> {
    squared_error_loss(pred, z)
}

/// Identical contract to [`labeled_loss`], against a pseudo-label heatmap.
pub fn bootstrap_loss(pred: &Heatmap, z_hat: &Heatmap) -> Result<(f64, Tensor3), SupervisionError> {
    squared_error_loss(pred, z_hat)
}

/// Every term of one total-loss evaluation, with per-view gradients of the
/// weighted total with respect to the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub labeled: f64,
    pub epipolar: f64,
    pub bootstrap: f64,
    pub grads: Vec<Tensor3>,
}

/// Core evaluation against caller-supplied predictions (one per view, same
/// order); lets the optimizer substitute its current iterate without
/// rebuilding snapshots.
fn loss_terms(
    views: &[ViewRecord],
    preds: &[Heatmap],
    pairs: &[ScenePair],
    weights: &LossWeights,
    cfg: &DivergenceConfig,
) -> Result<LossBreakdown, SupervisionError> {
    assert_eq!(views.len(), preds.len(), "one prediction per view");
    assert!(weights.validate(), "loss weights must be nonnegative");
    let any_label = views.iter().any(|v| v.label.is_some());
    let any_pseudo = views.iter().any(|v| v.pseudo_label.is_some());
    if !any_label && !any_pseudo && pairs.is_empty() {
        return Err(SupervisionError::NoApplicableTerm);
    }
    let mut grads: Vec<Tensor3> =
        preds.iter().map(|p| Tensor3::zeros(p.w, p.h, p.c)).collect();
    let mut labeled = 0.0;
    let mut bootstrap = 0.0;
    for (i, (view, pred)) in views.iter().zip(preds).enumerate() {
        if let Some(z) = &view.label {
            let (l, g) = labeled_loss(pred, z)?;
            labeled += l;
            grads[i].axpy(1.0, &g);
        }
        if let Some(z_hat) = &view.pseudo_label {
            let (l, g) = bootstrap_loss(pred, z_hat)?;
            bootstrap += l;
            grads[i].axpy(weights.lambda_p, &g);
        }
    }
    let mut epipolar = 0.0;
    if !pairs.is_empty() {
        let (l, pair_grads) = scene_loss(preds, pairs, cfg)?;
        epipolar = l;
        for (acc, g) in grads.iter_mut().zip(&pair_grads) {
            acc.axpy(weights.lambda_e, g);
        }
    }
    let total = labeled + weights.lambda_e * epipolar + weights.lambda_p * bootstrap;
    Ok(LossBreakdown { total, labeled, epipolar, bootstrap, grads })
}

/// Weighted total loss over a snapshot: labeled + lambda_e * cross-view +
/// lambda_p * bootstrap, with additively accumulated per-view gradients.
pub fn total_loss(
    snapshot: &SceneSnapshot,
    pairs: &[ScenePair],
    weights: &LossWeights,
    cfg: &DivergenceConfig,
) -> Result<LossBreakdown, SupervisionError> {
    let preds: Vec<Heatmap> = snapshot.views.iter().map(|v| v.pred.clone()).collect();
    loss_terms(&snapshot.views, &preds, pairs, weights, cfg)
}

/// Outcome of triangulating annotated keypoints and projecting them back
/// into every view.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialAugment {
    /// Triangulated point per channel; None where skipped.
    pub points: Vec<Option<Point3<f64>>>,
    /// `labels[view][channel]` in original image pixels.
    pub labels: Vec<Vec<Option<Point2<f64>>>>,
    /// Channels that produced no point, with the reason.
    pub skipped: Vec<(usize, GeometryError)>,
    pub dropped_out_of_bounds: usize,
    pub dropped_behind_camera: usize,
}

/// Triangulates every keypoint annotated in at least `min_views` views and
/// projects it into all views, producing pseudo 2D labels. Projections
/// outside the per-view bounds (when given) or behind a camera are dropped
/// and counted; under-annotated keypoints are skipped and reported.
pub fn spatial_augment(
    rig: &Rig,
    annotations: &[Vec<Option<Point2<f64>>>],
    min_views: usize,
    bounds: Option<&[PixelRect]>,
) -> SpatialAugment {
    assert_eq!(annotations.len(), rig.views.len(), "one annotation list per view");
    if let Some(b) = bounds {
        assert_eq!(b.len(), rig.views.len(), "one bounds rect per view");
    }
    let channels = annotations.iter().map(|a| a.len()).max().unwrap_or(0);
    let min_views = min_views.max(2);
    let mut points = vec![None; channels];
    let mut labels = vec![vec![None; channels]; rig.views.len()];
    let mut skipped = Vec::new();
    let mut dropped_out_of_bounds = 0;
    let mut dropped_behind_camera = 0;
    for c in 0..channels {
        let mut cams = Vec::new();
        let mut pts = Vec::new();
        for (v, per_view) in annotations.iter().enumerate() {
            if let Some(Some(p)) = per_view.get(c) {
                cams.push(rig.views[v].camera);
                pts.push(*p);
            }
        }
        if cams.len() < min_views {
            skipped.push((c, GeometryError::InsufficientViews { needed: min_views, got: cams.len() }));
            continue;
        }
        let point = match triangulate_dlt(&cams, &pts) {
            Ok(p) => p,
            Err(e) => {
                skipped.push((c, e));
                continue;
            }
        };
        points[c] = Some(point);
        for (v, view) in rig.views.iter().enumerate() {
            match project(&view.camera, &point) {
                Ok(px) => {
                    if bounds.is_some_and(|b| !b[v].contains(&px)) {
                        dropped_out_of_bounds += 1;
                    } else {
                        labels[v][c] = Some(px);
                    }
                }
                Err(_) => dropped_behind_camera += 1,
            }
        }
    }
    SpatialAugment { points, labels, skipped, dropped_out_of_bounds, dropped_behind_camera }
}

/// Outcome of robust per-frame triangulation of a 2D track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackAugment {
    /// Reconstructed point per frame; None where the frame failed.
    pub points: Vec<Option<Point3<f64>>>,
    /// `labels[frame][view]` in original image pixels.
    pub labels: Vec<Vec<Option<Point2<f64>>>>,
    /// `inliers[frame][view]`: whether that view's observation supported
    /// the consensus; false for views with no observation.
    pub inliers: Vec<Option<Vec<bool>>>,
    pub failures: Vec<(usize, GeometryError)>,
}

const TRACK_RANSAC_ITERATIONS: usize = 64;

/// Robustly triangulates one keypoint's 2D track (`tracks[view][frame]`)
/// frame by frame and projects each consensus point into all views. Frames
/// without consensus or with fewer than two observations become gaps,
/// recorded per frame. Deterministic given `seed`.
pub fn track_augment(
    rig: &Rig,
    tracks: &[Vec<Option<Point2<f64>>>],
    inlier_thresh_px: f64,
    seed: u64,
) -> TrackAugment {
    assert_eq!(tracks.len(), rig.views.len(), "one track per view");
    let frames = tracks.iter().map(|t| t.len()).max().unwrap_or(0);
    let mut points = vec![None; frames];
    let mut labels = vec![vec![None; rig.views.len()]; frames];
    let mut inliers = vec![None; frames];
    let mut failures = Vec::new();
    for t in 0..frames {
        let mut cams = Vec::new();
        let mut pts = Vec::new();
        let mut view_ids = Vec::new();
        for (v, track) in tracks.iter().enumerate() {
            if let Some(Some(p)) = track.get(t) {
                cams.push(rig.views[v].camera);
                pts.push(*p);
                view_ids.push(v);
            }
        }
        if cams.len() < 2 {
            failures.push((t, GeometryError::InsufficientViews { needed: 2, got: cams.len() }));
            continue;
        }
        match ransac_triangulate(
            &cams,
            &pts,
            inlier_thresh_px,
            TRACK_RANSAC_ITERATIONS,
            seed.wrapping_add(t as u64),
        ) {
            Ok((point, mask)) => {
                points[t] = Some(point);
                let mut full_mask = vec![false; rig.views.len()];
                for (&v, &is_in) in view_ids.iter().zip(&mask) {
                    full_mask[v] = is_in;
                }
                inliers[t] = Some(full_mask);
                for (v, view) in rig.views.iter().enumerate() {
                    labels[t][v] = project(&view.camera, &point).ok();
                }
            }
            Err(e) => failures.push((t, e)),
        }
    }
    TrackAugment { points, labels, inliers, failures }
}

/// One recorded optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub total: f64,
    pub labeled: f64,
    pub epipolar: f64,
    pub bootstrap: f64,
    pub mean_reproj_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    /// `steps + 1` rows; row 0 is the initial state.
    pub trajectory: Vec<TrajectoryRow>,
    pub final_heatmaps: Vec<Heatmap>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(0.01, 0.99);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean reprojection error of the current per-view argmax detections,
/// measured in heatmap pixels via heatmap-frame cameras.
fn mean_reprojection(
    rig: &Rig,
    views: &[ViewRecord],
    preds: &[Heatmap],
) -> Result<f64, SupervisionError> {
    let mut cams = Vec::with_capacity(views.len());
    let mut dets = Vec::with_capacity(views.len());
    for (view, pred) in views.iter().zip(preds) {
        let cam = rig
            .camera_by_id(&view.camera_id)
            .ok_or_else(|| SupervisionError::UnknownCamera { id: view.camera_id.clone() })?;
        cams.push(heatmap_frame_camera(cam, &view.crop));
        dets.push(argmax_keypoints(pred).into_iter().map(Some).collect::<Vec<_>>());
    }
    Ok(reprojection_error(&cams, &dets, 0.0).mean)
}

/// Plain gradient descent on the total loss over logistic-parameterized
/// heatmap grids. Records every step's loss terms and mean reprojection
/// error (row 0 is the initial state) and returns the final heatmaps.
/// Aborts with the step index if the loss leaves the finite range.
pub fn optimize_heatmaps(
    snapshot: &SceneSnapshot,
    rig: &Rig,
    pairs: &[ScenePair],
    weights: &LossWeights,
    cfg: &DivergenceConfig,
    steps: usize,
    step_size: f64,
) -> Result<OptimizeOutcome, SupervisionError> {
    assert!(step_size > 0.0, "step size must be positive");
    snapshot.validate(rig)?;
    let mut logits: Vec<Vec<f64>> = snapshot
        .views
        .iter()
        .map(|v| v.pred.values.iter().map(|&p| logit(p)).collect())
        .collect();
    let shapes: Vec<(usize, usize, usize)> =
        snapshot.views.iter().map(|v| (v.pred.w, v.pred.h, v.pred.c)).collect();
    let mut trajectory = Vec::with_capacity(steps + 1);
    let mut preds: Vec<Heatmap> = Vec::new();
    for step in 0..=steps {
        preds = logits
            .iter()
            .zip(&shapes)
            .map(|(l, &(w, h, c))| Heatmap {
                w,
                h,
                c,
                values: l.iter().map(|&x| sigmoid(x)).collect(),
            })
            .collect();
        let breakdown = loss_terms(&snapshot.views, &preds, pairs, weights, cfg)?;
        if !breakdown.total.is_finite() {
            return Err(SupervisionError::NonFiniteLoss { step });
        }
        let mean_reproj_px = mean_reprojection(rig, &snapshot.views, &preds)?;
        trajectory.push(TrajectoryRow {
            step,
            total: breakdown.total,
            labeled: breakdown.labeled,
            epipolar: breakdown.epipolar,
            bootstrap: breakdown.bootstrap,
            mean_reproj_px,
        });
        if step == steps {
            break;
        }
        for ((logit_grid, grad), pred) in
            logits.iter_mut().zip(&breakdown.grads).zip(&preds)
        {
            for ((x, &g), &p) in
                logit_grid.iter_mut().zip(&grad.values).zip(&pred.values)
            {
                *x -= step_size * g * p * (1.0 - p);
            }
        }
    }
    Ok(OptimizeOutcome { trajectory, final_heatmaps: preds })
}

/// Why an ordered view pair was left out of the divergence set.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSkipReason {
    /// Epipolar-direction spread across the heatmap window fell below the
    /// threshold: the lines are near-parallel and supervise only one
    /// direction.
    NearDegenerate { spread_deg: f64 },
    /// No usable rectified chain exists for the pair (epipole inside a
    /// crop, gaze parallel to baseline, or a singular transform).
    Unrectifiable(HeatmapError),
}

/// Builds every usable ordered view pair of a snapshot. A pair survives
/// when its epipolar-direction spread over the full heatmap window clears
/// `degeneracy_deg` and rectification succeeds; everything else is
/// reported in the skip list. Invalid rigs or snapshots still error.
pub fn build_scene_pairs(
    rig: &Rig,
    snapshot: &SceneSnapshot,
    degeneracy_deg: f64,
) -> Result<(Vec<ScenePair>, Vec<(usize, usize, PairSkipReason)>), SupervisionError> {
    snapshot.validate(rig)?;
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for i in 0..snapshot.views.len() {
        for j in 0..snapshot.views.len() {
            if i == j {
                continue;
            }
            let vi = &snapshot.views[i];
            let vj = &snapshot.views[j];
            let cam_i = rig.camera_by_id(&vi.camera_id).expect("validated above");
            let cam_j = rig.camera_by_id(&vj.camera_id).expect("validated above");
            let hm_i = heatmap_frame_camera(cam_i, &vi.crop);
            let hm_j = heatmap_frame_camera(cam_j, &vj.crop);
            let side = vi.pred.w as f64 - 1.0;
            let roi = PixelRect::new(0.0, 0.0, side, side);
            match pair_degeneracy_check(&hm_i, &hm_j, &roi) {
                Ok(spread) if spread < degeneracy_deg => {
                    skipped.push((i, j, PairSkipReason::NearDegenerate { spread_deg: spread }));
                    continue;
                }
                Ok(_) => {}
                // A window corner on the epipole implies the epipole sits in
                // the window, which rectification rejects anyway.
                Err(GeometryError::DegenerateLine) => {
                    skipped.push((
                        i,
                        j,
                        PairSkipReason::Unrectifiable(HeatmapError::EpipoleInImage),
                    ));
                    continue;
                }
                Err(e) => return Err(e.into()),
            }
            match rectified_pair(cam_i, cam_j, &vi.crop, &vj.crop) {
                Ok(geom) => pairs.push(ScenePair { i, j, geom }),
                Err(
                    err @ (HeatmapError::EpipoleInImage
                    | HeatmapError::SingularHomography
                    | HeatmapError::Geometry(GeometryError::GazeParallelToBaseline)),
                ) => skipped.push((i, j, PairSkipReason::Unrectifiable(err))),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok((pairs, skipped))
}
