//! Command-line front end: synthetic data generation, loss tables,
//! heatmap optimization, pseudo-labeling, and metric reports, all wired to
//! the on-disk formats of `epiview::io`.
//!
//! Every command is deterministic given its flags. Failure modes that a
//! harness script needs to distinguish use fixed exit codes: 2 invalid
//! spec or config, 3 no usable view pair, 4 non-finite loss, 5 nothing
//! triangulable, 6 no evaluation samples; everything else exits 1.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use epiview::divergence::{pair_loss, DivergenceConfig};
use epiview::geometry::GeometryError;
use epiview::heatmap::{heatmap_frame_camera, Heatmap, HeatmapError};
use epiview::io::{
    load_annotations, load_rig, load_scene, render_line_svg, save_annotations, save_rig,
    save_scene, write_json, write_pair_loss_csv, write_pck_csv, write_residual_csv, write_svg,
    write_trajectory_csv, AnnotationRecord, IoError,
};
use epiview::metrics::{
    argmax_keypoints, default_thresholds, pck_curve, reprojection_error, MetricsError,
};
use epiview::supervision::{
    build_scene_pairs, optimize_heatmaps, spatial_augment, total_loss, track_augment,
    LossWeights, SupervisionError,
};
use epiview::synth::{make_rig, make_scene, NoiseSpec, Placement, RigSpec, SynthError};
use epiview::DEGENERACY_THRESHOLD_DEG;

const EXIT_INVALID_SPEC: u8 = 2;
const EXIT_DEGENERATE_PAIRS: u8 = 3;
const EXIT_NON_FINITE: u8 = 4;
const EXIT_NO_TRIANGULATION: u8 = 5;
const EXIT_NO_SAMPLES: u8 = 6;

struct CliError {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> CliError {
    CliError { code, message: message.into() }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        fail(1, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        fail(1, e.to_string())
    }
}

/// The whole synthetic-spec path answers with the invalid-spec code: every
/// failure there means the requested rig or scene cannot exist.
impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        fail(EXIT_INVALID_SPEC, e.to_string())
    }
}

impl From<SupervisionError> for CliError {
    fn from(e: SupervisionError) -> Self {
        let code = match &e {
            SupervisionError::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            _ => 1,
        };
        fail(code, e.to_string())
    }
}

impl From<HeatmapError> for CliError {
    fn from(e: HeatmapError) -> Self {
        fail(1, e.to_string())
    }
}

impl From<epiview::divergence::DivergenceError> for CliError {
    fn from(e: epiview::divergence::DivergenceError) -> Self {
        fail(1, e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        fail(1, e.to_string())
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        fail(1, e.to_string())
    }
}

// ------------------------------------------------------------- run config

/// Fully resolved settings of a loss or optimizer run, echoed into the
/// output directory so a run can be reproduced from its artifacts alone.
#[derive(Debug, Clone, PartialEq)]
struct RunConfig {
    rig: PathBuf,
    scene: PathBuf,
    out: PathBuf,
    weights: LossWeights,
    divergence: DivergenceConfig,
    steps: usize,
    step_size: f64,
    seed: u64,
    degeneracy_deg: f64,
}

impl RunConfig {
    fn for_loss(args: &LossArgs) -> Self {
        Self {
            rig: args.rig.clone(),
            scene: args.scene.clone(),
            out: args.out.clone(),
            weights: args.shared.weights(),
            divergence: args.shared.divergence(),
            steps: 0,
            step_size: 0.0,
            seed: args.seed,
            degeneracy_deg: args.shared.degeneracy_deg,
        }
    }

    fn for_optimize(args: &OptimizeArgs) -> Self {
        Self {
            rig: args.rig.clone(),
            scene: args.scene.clone(),
            out: args.out.clone(),
            weights: args.shared.weights(),
            divergence: args.shared.divergence(),
            steps: args.steps,
            step_size: args.step_size,
            seed: args.seed,
            degeneracy_deg: args.shared.degeneracy_deg,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if !self.weights.validate() {
            return Err(fail(EXIT_INVALID_SPEC, "loss weights must be nonnegative"));
        }
        if !self.divergence.validate() {
            return Err(fail(EXIT_INVALID_SPEC, "eps must be positive"));
        }
        if !(self.degeneracy_deg >= 0.0) {
            return Err(fail(EXIT_INVALID_SPEC, "degeneracy threshold must be nonnegative"));
        }
        Ok(())
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "rig": self.rig.display().to_string(),
            "scene": self.scene.display().to_string(),
            "out": self.out.display().to_string(),
            "lambda_e": self.weights.lambda_e,
            "lambda_p": self.weights.lambda_p,
            "eps": self.divergence.epsilon,
            "normalize_flats": self.divergence.normalize,
            "steps": self.steps,
            "step_size": self.step_size,
            "seed": self.seed,
            "degeneracy_deg": self.degeneracy_deg,
        })
    }
}

// ------------------------------------------------------------------ flags

#[derive(Args, Debug)]
struct WeightArgs {
    /// Weight of the cross-view divergence term.
    #[arg(long = "lambda-e", default_value_t = LossWeights::default().lambda_e)]
    lambda_e: f64,
    /// Weight of the pseudo-label term.
    #[arg(long = "lambda-p", default_value_t = LossWeights::default().lambda_p)]
    lambda_p: f64,
    /// Smoothing constant inside the divergence logarithms.
    #[arg(long, default_value_t = DivergenceConfig::default().epsilon)]
    eps: f64,
    /// Normalize flattened distributions to unit mass before comparing.
    #[arg(long = "normalize-flats", default_value_t = false)]
    normalize_flats: bool,
    /// Minimum epipolar-direction spread in degrees for a usable pair.
    #[arg(long = "degeneracy-deg", default_value_t = DEGENERACY_THRESHOLD_DEG)]
    degeneracy_deg: f64,
}

impl WeightArgs {
    fn weights(&self) -> LossWeights {
        LossWeights { lambda_e: self.lambda_e, lambda_p: self.lambda_p }
    }

    fn divergence(&self) -> DivergenceConfig {
        DivergenceConfig { epsilon: self.eps, normalize: self.normalize_flats }
    }
}

#[derive(Clone, Copy, PartialEq, Debug, ValueEnum)]
enum PlacementKind {
    Ring,
    Sphere,
}

#[derive(Clone, Copy, PartialEq, Debug, ValueEnum)]
enum AugmentMode {
    Spatial,
    Track,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory for rig.json, scene.json, and scene.bin.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    cameras: usize,
    #[arg(long, value_enum, default_value_t = PlacementKind::Ring)]
    placement: PlacementKind,
    /// Camera distance from the scene center, world units.
    #[arg(long, default_value_t = 3.0)]
    radius: f64,
    /// Height jitter of ring cameras, world units.
    #[arg(long = "height-jitter", default_value_t = 0.2)]
    height_jitter: f64,
    #[arg(long = "focal-min", default_value_t = 1000.0)]
    focal_min: f64,
    #[arg(long = "focal-max", default_value_t = 1400.0)]
    focal_max: f64,
    /// Square sensor side in pixels.
    #[arg(long = "image-size", default_value_t = 1000.0)]
    image_size: f64,
    /// Number of 3D keypoints, drawn uniformly near the scene center.
    #[arg(long, default_value_t = 3)]
    points: usize,
    /// Peak width of the rendered heatmap blobs, heatmap pixels.
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Gaussian peak jitter, heatmap pixels.
    #[arg(long = "jitter-sigma", default_value_t = 0.0)]
    jitter_sigma: f64,
    /// Probability of swapping each symmetric channel pair per view.
    #[arg(long = "swap-probability", default_value_t = 0.0)]
    swap_probability: f64,
    #[arg(long = "clutter-blobs", default_value_t = 0)]
    clutter_blobs: usize,
    #[arg(long = "clutter-amplitude", default_value_t = 0.0)]
    clutter_amplitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct LossArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for pair_losses.csv, totals.json, run_config.json.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    shared: WeightArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for trajectory.csv, final_scene.json, trajectory.svg.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    shared: WeightArgs,
    /// Gradient steps; 0 evaluates the initial state only.
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long = "step-size", default_value_t = 0.5)]
    step_size: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PseudoLabelArgs {
    #[arg(long)]
    rig: PathBuf,
    /// Annotation records to lift into all views.
    #[arg(long)]
    annotations: PathBuf,
    /// Output directory for pseudo_labels.json.
    #[arg(long)]
    out: PathBuf,
    /// spatial: per-frame multi-view triangulation; track: per-channel
    /// RANSAC over the frame sequence.
    #[arg(long, value_enum, default_value_t = AugmentMode::Spatial)]
    mode: AugmentMode,
    /// Fewest annotated views that still triangulate a spatial point.
    #[arg(long = "min-views", default_value_t = 2)]
    min_views: usize,
    /// RANSAC inlier threshold in image pixels (track mode).
    #[arg(long = "inlier-thresh-px", default_value_t = 2.0)]
    inlier_thresh_px: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Output directory for pck.csv, residuals.csv, pck.svg, metrics.json.
    #[arg(long)]
    out: PathBuf,
    /// Detections at or above this confidence enter the reprojection stats.
    #[arg(long = "confidence-floor", default_value_t = 0.0)]
    confidence_floor: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a deterministic synthetic rig and scene.
    Synth(SynthArgs),
    /// Evaluate the cross-view loss of a scene, per pair and channel.
    Loss(LossArgs),
    /// Gradient-descend the scene's heatmaps and record the trajectory.
    Optimize(OptimizeArgs),
    /// Triangulate sparse annotations into labels for every view.
    PseudoLabel(PseudoLabelArgs),
    /// Score detections against annotated truth: PCK and reprojection.
    Eval(EvalArgs),
}

#[derive(Parser, Debug)]
#[command(name = "epiview", version, about = "Cross-view geometric supervision toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Loss(args) => cmd_loss(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::PseudoLabel(args) => cmd_pseudo_label(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

// --------------------------------------------------------------- commands

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.points == 0 {
        return Err(fail(EXIT_INVALID_SPEC, "need at least one keypoint"));
    }
    if !(args.sigma > 0.0) {
        return Err(fail(EXIT_INVALID_SPEC, "sigma must be positive"));
    }
    let placement = match args.placement {
        PlacementKind::Ring => {
            Placement::Ring { radius: args.radius, height_jitter: args.height_jitter }
        }
        PlacementKind::Sphere => Placement::Sphere { radius: args.radius },
    };
    let rig = make_rig(&RigSpec {
        cameras: args.cameras,
        placement,
        target: Point3::origin(),
        focal_range: (args.focal_min, args.focal_max),
        image_size: (args.image_size, args.image_size),
        seed: args.seed,
    })?;
    let noise = NoiseSpec {
        jitter_sigma: args.jitter_sigma,
        swap_probability: args.swap_probability,
        clutter_blobs: args.clutter_blobs,
        clutter_amplitude: args.clutter_amplitude,
    };
    // Keypoints draw from their own stream so the noise draws inside
    // make_scene stay independent of the point count.
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.wrapping_add(1));
    let points: Vec<Point3<f64>> = (0..args.points)
        .map(|_| {
            Point3::new(
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
                rng.random_range(-0.25..0.25),
            )
        })
        .collect();
    let scene = make_scene(&rig, &points, args.sigma, &noise, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    save_rig(&rig, &args.out.join("rig.json"))?;
    save_scene(&scene.snapshot, &args.out.join("scene.json"))?;
    println!(
        "synth: {} cameras, {} keypoints, seed {} -> {}",
        rig.views.len(),
        points.len(),
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_loss(args: LossArgs) -> Result<(), CliError> {
    let config = RunConfig::for_loss(&args);
    config.validate()?;
    let rig = load_rig(&config.rig)?;
    let snapshot = load_scene(&config.scene)?;
    let (pairs, skipped) = build_scene_pairs(&rig, &snapshot, config.degeneracy_deg)?;
    if pairs.is_empty() {
        return Err(fail(
            EXIT_DEGENERATE_PAIRS,
            format!("every view pair is degenerate or unrectifiable ({} skipped)", skipped.len()),
        ));
    }
    let cfg = config.divergence;
    let channels = snapshot.channels();
    let mut rows = Vec::with_capacity(pairs.len() * channels);
    for pair in &pairs {
        let pi = &snapshot.views[pair.i].pred;
        let pj = &snapshot.views[pair.j].pred;
        for c in 0..channels {
            let hi = Heatmap::new(pi.w, pi.h, 1, pi.channel(c).to_vec())?;
            let hj = Heatmap::new(pj.w, pj.h, 1, pj.channel(c).to_vec())?;
            let (loss, _) = pair_loss(&hi, &hj, &pair.geom, &cfg)?;
            rows.push((pair.i, pair.j, c, loss));
        }
    }
    let breakdown = total_loss(&snapshot, &pairs, &config.weights, &cfg)?;
    let any_label = snapshot.views.iter().any(|v| v.label.is_some());
    let any_pseudo = snapshot.views.iter().any(|v| v.pseudo_label.is_some());
    let totals = LossTotals {
        total: breakdown.total,
        labeled: any_label.then_some(breakdown.labeled),
        epipolar: breakdown.epipolar,
        bootstrap: any_pseudo.then_some(breakdown.bootstrap),
        lambda_e: config.weights.lambda_e,
        lambda_p: config.weights.lambda_p,
        pairs: pairs.len(),
        channels,
        skipped_pairs: skipped.len(),
    };
    std::fs::create_dir_all(&config.out)?;
    write_pair_loss_csv(&rows, &config.out.join("pair_losses.csv"))?;
    write_json(&totals, &config.out.join("totals.json"))?;
    write_json(&config.echo(), &config.out.join("run_config.json"))?;
    println!(
        "loss: {} pairs x {} channels, total {:.6e}, epipolar {:.6e} -> {}",
        pairs.len(),
        channels,
        breakdown.total,
        breakdown.epipolar,
        config.out.display()
    );
    Ok(())
}

/// Totals of one loss run. Terms with no supervision source in the scene
/// are omitted entirely rather than reported as zero.
#[derive(serde::Serialize)]
struct LossTotals {
    total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    labeled: Option<f64>,
    epipolar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap: Option<f64>,
    lambda_e: f64,
    lambda_p: f64,
    pairs: usize,
    channels: usize,
    skipped_pairs: usize,
}

fn cmd_optimize(args: OptimizeArgs) -> Result<(), CliError> {
    let config = RunConfig::for_optimize(&args);
    config.validate()?;
    if !(config.step_size > 0.0) {
        return Err(fail(EXIT_INVALID_SPEC, "step size must be positive"));
    }
    let rig = load_rig(&config.rig)?;
    let snapshot = load_scene(&config.scene)?;
    let (pairs, skipped) = build_scene_pairs(&rig, &snapshot, config.degeneracy_deg)?;
    if pairs.is_empty() {
        return Err(fail(
            EXIT_DEGENERATE_PAIRS,
            format!("every view pair is degenerate or unrectifiable ({} skipped)", skipped.len()),
        ));
    }
    let outcome = optimize_heatmaps(
        &snapshot,
        &rig,
        &pairs,
        &config.weights,
        &config.divergence,
        config.steps,
        config.step_size,
    )?;
    let mut final_scene = snapshot.clone();
    for (view, pred) in final_scene.views.iter_mut().zip(outcome.final_heatmaps) {
        view.pred = pred;
    }
    std::fs::create_dir_all(&config.out)?;
    write_trajectory_csv(&outcome.trajectory, &config.out.join("trajectory.csv"))?;
    save_scene(&final_scene, &config.out.join("final_scene.json"))?;
    let totals: Vec<(f64, f64)> =
        outcome.trajectory.iter().map(|r| (r.step as f64, r.total)).collect();
    let reprojs: Vec<(f64, f64)> =
        outcome.trajectory.iter().map(|r| (r.step as f64, r.mean_reproj_px)).collect();
    let svg = render_line_svg(
        &[("total", totals), ("mean_reproj_px", reprojs)],
        "optimization trajectory",
    );
    write_svg(&svg, &config.out.join("trajectory.svg"))?;
    write_json(&config.echo(), &config.out.join("run_config.json"))?;
    let first = outcome.trajectory.first().expect("trajectory has the initial row");
    let last = outcome.trajectory.last().expect("trajectory has the initial row");
    println!(
        "optimize: {} steps, total {:.6e} -> {:.6e}, mean reprojection {:.3} -> {:.3} px -> {}",
        config.steps,
        first.total,
        last.total,
        first.mean_reproj_px,
        last.mean_reproj_px,
        config.out.display()
    );
    Ok(())
}

fn cmd_pseudo_label(args: PseudoLabelArgs) -> Result<(), CliError> {
    let rig = load_rig(&args.rig)?;
    let records = load_annotations(&args.annotations)?;
    if records.is_empty() {
        return Err(fail(EXIT_NO_TRIANGULATION, "annotation file holds no records"));
    }
    let rig_index: HashMap<&str, usize> =
        rig.views.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
    for r in &records {
        if !rig_index.contains_key(r.view.as_str()) {
            return Err(fail(1, format!("annotation references unknown camera id {:?}", r.view)));
        }
    }
    let channels = records.iter().map(|r| r.channel).max().unwrap_or(0) + 1;
    let mut frames: Vec<u64> = records.iter().map(|r| r.frame).collect();
    frames.sort_unstable();
    frames.dedup();
    let mut out_records: Vec<AnnotationRecord> = Vec::new();
    let mut points_recovered = 0usize;
    match args.mode {
        AugmentMode::Spatial => {
            for &frame in &frames {
                let mut ann: Vec<Vec<Option<Point2<f64>>>> =
                    vec![vec![None; channels]; rig.views.len()];
                for r in records.iter().filter(|r| r.frame == frame) {
                    ann[rig_index[r.view.as_str()]][r.channel] = Some(Point2::new(r.u, r.v));
                }
                let aug = spatial_augment(&rig, &ann, args.min_views, None);
                points_recovered += aug.points.iter().flatten().count();
                for (c, point) in aug.points.iter().enumerate() {
                    if point.is_none() {
                        continue;
                    }
                    for (v, labels) in aug.labels.iter().enumerate() {
                        if let Some(p) = labels[c] {
                            out_records.push(AnnotationRecord {
                                frame,
                                view: rig.views[v].id.clone(),
                                channel: c,
                                u: p.x,
                                v: p.y,
                                source: "spatial".into(),
                            });
                        }
                    }
                }
            }
        }
        AugmentMode::Track => {
            for c in 0..channels {
                let mut tracks: Vec<Vec<Option<Point2<f64>>>> =
                    vec![vec![None; frames.len()]; rig.views.len()];
                for r in records.iter().filter(|r| r.channel == c) {
                    let t = frames.binary_search(&r.frame).expect("frame list is complete");
                    tracks[rig_index[r.view.as_str()]][t] = Some(Point2::new(r.u, r.v));
                }
                let aug = track_augment(
                    &rig,
                    &tracks,
                    args.inlier_thresh_px,
                    args.seed.wrapping_add(c as u64 * 1_000_003),
                );
                points_recovered += aug.points.iter().flatten().count();
                for (t, point) in aug.points.iter().enumerate() {
                    if point.is_none() {
                        continue;
                    }
                    for (v, label) in aug.labels[t].iter().enumerate() {
                        if let Some(p) = label {
                            out_records.push(AnnotationRecord {
                                frame: frames[t],
                                view: rig.views[v].id.clone(),
                                channel: c,
                                u: p.x,
                                v: p.y,
                                source: "track".into(),
                            });
                        }
                    }
                }
            }
        }
    }
    if points_recovered == 0 {
        return Err(fail(EXIT_NO_TRIANGULATION, "no keypoint could be triangulated"));
    }
    out_records.sort_by_key(|r| (r.frame, rig_index[r.view.as_str()], r.channel));
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("pseudo_labels.json");
    save_annotations(&out_records, &path)?;
    println!(
        "pseudo-label: {} frames, {} channels, {} points, {} records -> {}",
        frames.len(),
        channels,
        points_recovered,
        out_records.len(),
        path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let rig = load_rig(&args.rig)?;
    let snapshot = load_scene(&args.scene)?;
    let mut det_pts = Vec::new();
    let mut truth_pts = Vec::new();
    let mut dets_conf: Vec<Vec<Option<(Point2<f64>, f64)>>> = Vec::new();
    let mut cams = Vec::new();
    let mut window = 0.0f64;
    for view in &snapshot.views {
        let cam = rig.camera_by_id(&view.camera_id).ok_or_else(|| {
            fail(1, format!("scene references unknown camera id {:?}", view.camera_id))
        })?;
        cams.push(heatmap_frame_camera(cam, &view.crop));
        let peaks = argmax_keypoints(&view.pred);
        window = window.max(view.pred.w as f64);
        let to_hm = view.crop.heatmap_from_image();
        for (c, ann) in view.annotations.iter().enumerate() {
            let (Some(truth_img), Some((det, _))) = (ann, peaks.get(c)) else { continue };
            let t = to_hm * Vector3::new(truth_img.x, truth_img.y, 1.0);
            det_pts.push(*det);
            truth_pts.push(Point2::new(t.x / t.z, t.y / t.z));
        }
        dets_conf.push(peaks.into_iter().map(Some).collect());
    }
    if det_pts.is_empty() {
        return Err(fail(EXIT_NO_SAMPLES, "scene carries no annotated truth points"));
    }
    let curve = pck_curve(&det_pts, &truth_pts, window, &default_thresholds())?;
    let stats = reprojection_error(&cams, &dets_conf, args.confidence_floor);
    if stats.residuals.is_empty() {
        return Err(fail(EXIT_NO_SAMPLES, "confidence floor excluded every detection"));
    }
    std::fs::create_dir_all(&args.out)?;
    write_pck_csv(&curve, &args.out.join("pck.csv"))?;
    write_residual_csv(&stats.residuals, &args.out.join("residuals.csv"))?;
    let series: Vec<(f64, f64)> =
        curve.thresholds.iter().zip(&curve.values).map(|(&t, &p)| (t, p)).collect();
    write_svg(
        &render_line_svg(&[("pck", series)], "PCK by normalized threshold"),
        &args.out.join("pck.svg"),
    )?;
    write_json(
        &serde_json::json!({
            "mean_reproj_px": stats.mean,
            "std_reproj_px": stats.std,
            "residuals": stats.residuals.len(),
            "pck_samples": det_pts.len(),
            "excluded_channels": stats.excluded.len(),
        }),
        &args.out.join("metrics.json"),
    )?;
    println!(
        "eval: {} samples, PCK@0.5 {:.3}, reprojection {:.3} +/- {:.3} px -> {}",
        det_pts.len(),
        curve.values.last().copied().unwrap_or(f64::NAN),
        stats.mean,
        stats.std,
        args.out.display()
    );
    Ok(())
}
