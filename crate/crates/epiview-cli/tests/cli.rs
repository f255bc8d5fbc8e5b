//! End-to-end checks of the `epiview` binary: every command runs against
//! real files in a temp directory and the outputs are parsed back.

use std::path::{Path, PathBuf};
use std::process::Output;

use nalgebra::{Matrix3, Point2, Point3};

use epiview::geometry::{project, CameraModel, Rig, RigView};
use epiview::heatmap::{gaussian_label, CropTransform};
use epiview::io::{load_annotations, load_rig, load_scene, save_annotations, save_rig, save_scene, AnnotationRecord};
use epiview::supervision::SceneSnapshot;
use epiview::synth::{make_rig, make_scene, Placement, RigSpec, NoiseSpec, SynthScene};

const S: usize = 46;

fn bin(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_epiview"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("temp paths are valid UTF-8")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).expect("file exists")).expect("valid JSON")
}

/// Data rows of a CSV file (header dropped), cells as parsed f64.
fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).expect("CSV opens");
    reader
        .records()
        .map(|r| {
            r.expect("CSV row")
                .iter()
                .map(|cell| cell.parse::<f64>().expect("numeric cell"))
                .collect()
        })
        .collect()
}

/// Ring rig with dyadic image geometry (focal 1024, sensor 1024), so the
/// axis keypoints below land on integer heatmap cells in every view.
fn exact_ring_rig(cameras: usize, radius: f64, seed: u64) -> Rig {
    make_rig(&RigSpec {
        cameras,
        placement: Placement::Ring { radius, height_jitter: 0.0 },
        target: Point3::origin(),
        focal_range: (1024.0, 1024.0),
        image_size: (1024.0, 1024.0),
        seed,
    })
    .unwrap()
}

/// Points on the ring axis at depth steps of radius/92: one heatmap cell
/// per step for the rig above.
fn axis_keypoints(radius: f64, count: usize, cell_step: i32) -> Vec<Point3<f64>> {
    assert!(count % 2 == 1, "odd counts keep offsets integral");
    let half = (count / 2) as i32;
    (-half..=half)
        .map(|m| Point3::new(0.0, 0.0, (m * cell_step) as f64 * radius / 92.0))
        .collect()
}

/// Saves a rig + scene fixture and returns the two manifest paths.
fn save_fixture(dir: &Path, rig: &Rig, snapshot: &SceneSnapshot) -> (PathBuf, PathBuf) {
    let rig_path = dir.join("rig.json");
    let scene_path = dir.join("scene.json");
    save_rig(rig, &rig_path).unwrap();
    save_scene(snapshot, &scene_path).unwrap();
    (rig_path, scene_path)
}

/// The consistent integer-cell scene used by the loss and optimizer tests.
fn exact_scene(cameras: usize, channels: usize, seed: u64, sigma: f64) -> (Rig, SynthScene) {
    let radius = 3.0;
    let rig = exact_ring_rig(cameras, radius, seed);
    let points = axis_keypoints(radius, channels, 2);
    let scene = make_scene(&rig, &points, sigma, &NoiseSpec::default(), seed).unwrap();
    (rig, scene)
}

/// Replaces one channel of one view's prediction with a fresh Gaussian.
fn replace_peak(snapshot: &mut SceneSnapshot, view: usize, channel: usize, peak: Point2<f64>, sigma: f64) {
    let rendered = gaussian_label(&[Some(peak)], sigma, S, S);
    let plane = rendered.channel(0).to_vec();
    let pred = &mut snapshot.views[view].pred;
    let start = channel * S * S;
    pred.values[start..start + S * S].copy_from_slice(&plane);
}

// ------------------------------------------------------------------ synth

#[test]
fn synth_ring_four_writes_a_four_camera_rig() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["synth", "--out", path_arg(dir.path()), "--cameras", "4", "--seed", "3"]);
    assert_exit(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("synth:"), "summary line expected");
    let rig = load_rig(&dir.path().join("rig.json")).unwrap();
    assert_eq!(rig.views.len(), 4);
    let scene = load_scene(&dir.path().join("scene.json")).unwrap();
    assert_eq!(scene.views.len(), 4);
}

#[test]
fn synth_fixed_seed_reproduces_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = bin(&[
            "synth", "--out", path_arg(dir.path()), "--seed", "11", "--jitter-sigma", "0.8",
            "--clutter-blobs", "2", "--clutter-amplitude", "0.4",
        ]);
        assert_exit(&out, 0);
    }
    for name in ["rig.json", "scene.json", "scene.bin"] {
        let left = std::fs::read(a.path().join(name)).unwrap();
        let right = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} must be byte-identical across reruns");
    }
}

#[test]
fn synth_round_trip_matches_the_in_memory_rig() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        "synth", "--out", path_arg(dir.path()), "--seed", "21", "--cameras", "5",
        "--radius", "3.5", "--height-jitter", "0.3",
    ]);
    assert_exit(&out, 0);
    let expected = make_rig(&RigSpec {
        cameras: 5,
        placement: Placement::Ring { radius: 3.5, height_jitter: 0.3 },
        target: Point3::origin(),
        focal_range: (1000.0, 1400.0),
        image_size: (1000.0, 1000.0),
        seed: 21,
    })
    .unwrap();
    let loaded = load_rig(&dir.path().join("rig.json")).unwrap();
    assert_eq!(loaded.views.len(), expected.views.len());
    for (l, e) in loaded.views.iter().zip(&expected.views) {
        assert_eq!(l.id, e.id);
        assert_eq!(l.camera.intrinsics, e.camera.intrinsics);
        assert_eq!(l.camera.rotation, e.camera.rotation);
        assert_eq!(l.camera.center, e.camera.center);
    }
}

#[test]
fn synth_rejects_an_invalid_spec_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_exit(&bin(&["synth", "--out", path_arg(dir.path()), "--cameras", "1"]), 2);
    assert_exit(&bin(&["synth", "--out", path_arg(dir.path()), "--sigma", "0"]), 2);
    assert_exit(
        &bin(&["synth", "--out", path_arg(dir.path()), "--swap-probability", "1.5"]),
        2,
    );
}

// ------------------------------------------------------------------- loss

#[test]
fn loss_on_a_consistent_scene_is_small_per_pair_channel() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 3, 41, 3.0);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &scene.snapshot);
    let out_dir = dir.path().join("loss");
    let out = bin(&[
        "loss", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&out_dir), "--normalize-flats",
    ]);
    assert_exit(&out, 0);
    let totals = read_json(&out_dir.join("totals.json"));
    let pairs = totals["pairs"].as_u64().unwrap() as f64;
    let channels = totals["channels"].as_u64().unwrap() as f64;
    assert!(pairs >= 2.0 && channels == 3.0);
    let epipolar = totals["epipolar"].as_f64().unwrap();
    assert!(
        epipolar <= 1e-3 * pairs * channels,
        "consistent-scene epipolar total {epipolar} over {pairs} pairs x {channels} channels"
    );
    // No labels and no pseudo-labels in the scene: both terms absent.
    assert!(totals.get("labeled").is_none(), "labeled term must be absent");
    assert!(totals.get("bootstrap").is_none(), "bootstrap term must be absent");
    // Every per-pair-channel row respects the same bound.
    let rows = read_csv(&out_dir.join("pair_losses.csv"));
    assert_eq!(rows.len(), (pairs * channels) as usize);
    for row in &rows {
        assert!(row[3] <= 1e-3, "pair ({}, {}) channel {} loss {}", row[0], row[1], row[2], row[3]);
    }
}

#[test]
fn loss_lambda_e_zero_keeps_the_column_and_total_excludes_it() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 1, 42, 3.0);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &scene.snapshot);
    let out_dir = dir.path().join("loss");
    let out = bin(&[
        "loss", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&out_dir), "--lambda-e", "0",
    ]);
    assert_exit(&out, 0);
    let totals = read_json(&out_dir.join("totals.json"));
    let epipolar = totals["epipolar"].as_f64().unwrap();
    assert!(epipolar > 0.0, "epipolar term still reported");
    assert_eq!(totals["total"].as_f64().unwrap(), 0.0, "total must exclude the zero-weight term");
    // The per-pair column is still written. Raw-profile divergence carries
    // no sign guarantee (mass mismatch can dip slightly negative), so
    // finiteness is the contractual part.
    let rows = read_csv(&out_dir.join("pair_losses.csv"));
    assert!(!rows.is_empty(), "per-pair rows must still be written");
    for row in &rows {
        assert!(
            row[3].is_finite(),
            "pair ({}, {}) channel {} loss {}",
            row[0], row[1], row[2], row[3]
        );
    }
}

/// Two identical side-by-side cameras: every epipolar line is horizontal in
/// both views, so the pair is degenerate in both directions.
#[test]
fn loss_with_only_degenerate_pairs_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let k = Matrix3::new(1000.0, 0.0, 500.0, 0.0, 1000.0, 500.0, 0.0, 0.0, 1.0);
    let rig = Rig {
        views: vec![
            RigView {
                id: "a".into(),
                camera: CameraModel::new(k, Matrix3::identity(), Point3::origin()).unwrap(),
            },
            RigView {
                id: "b".into(),
                camera: CameraModel::new(k, Matrix3::identity(), Point3::new(0.4, 0.0, 0.0))
                    .unwrap(),
            },
        ],
    };
    let crop = CropTransform {
        u_x: 200.0, u_y: 200.0, h_b: 600.0, w_x: 0.0, w_y: 0.0, h_c: 368.0, h_h: 46.0,
    };
    let pred = gaussian_label(&[Some(Point2::new(23.0, 23.0))], 2.0, S, S);
    let views = rig
        .views
        .iter()
        .map(|v| epiview::supervision::ViewRecord {
            camera_id: v.id.clone(),
            crop,
            pred: pred.clone(),
            label: None,
            pseudo_label: None,
            annotations: vec![None],
        })
        .collect();
    let snapshot = SceneSnapshot { frame: 0, views };
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &snapshot);
    let out = bin(&[
        "loss", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&dir.path().join("loss")),
    ]);
    assert_exit(&out, 3);
}

// --------------------------------------------------------------- optimize

#[test]
fn optimize_pulls_a_perturbed_scene_back() {
    let dir = tempfile::tempdir().unwrap();
    let radius = 3.0;
    let rig = exact_ring_rig(4, radius, 77);
    let points = vec![Point3::new(0.0, 0.0, 2.0 * radius / 92.0)];
    let scene = make_scene(&rig, &points, 2.5, &NoiseSpec::default(), 77).unwrap();
    let mut snapshot = scene.snapshot.clone();
    let truth = scene.truth_peaks[0][0];
    replace_peak(&mut snapshot, 0, 0, Point2::new(truth.x, truth.y + 5.0), scene.sigmas[0]);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &snapshot);
    let out_dir = dir.path().join("opt");
    let out = bin(&[
        "optimize", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&out_dir), "--steps", "500", "--step-size", "0.5",
        "--lambda-e", "5", "--lambda-p", "0",
    ]);
    assert_exit(&out, 0);
    let rows = read_csv(&out_dir.join("trajectory.csv"));
    assert_eq!(rows.len(), 501);
    let initial = rows[0][5];
    let last = rows[rows.len() - 1][5];
    assert!(
        last <= 0.2 * initial,
        "reprojection column {initial:.3} -> {last:.3} px"
    );
    // The optimized scene is a loadable scene bundle.
    let final_scene = load_scene(&out_dir.join("final_scene.json")).unwrap();
    assert_eq!(final_scene.views.len(), 4);
}

#[test]
fn optimize_zero_steps_writes_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 1, 51, 2.5);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &scene.snapshot);
    let out_dir = dir.path().join("opt");
    let out = bin(&[
        "optimize", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&out_dir), "--steps", "0",
    ]);
    assert_exit(&out, 0);
    let rows = read_csv(&out_dir.join("trajectory.csv"));
    assert_eq!(rows.len(), 1, "steps=0 evaluates the initial state only");
    assert_eq!(rows[0][0], 0.0);
}

/// A scene that is already consistent has nothing to gain geometrically:
/// the reprojection column must not move. The raw loss still polishes the
/// interpolation floor of the transfer, so flatness is asserted on the
/// geometric column.
#[test]
fn optimize_consistent_scene_keeps_reprojection_flat() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 1, 77, 2.5);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &scene.snapshot);
    let out_dir = dir.path().join("opt");
    let out = bin(&[
        "optimize", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&out_dir), "--steps", "30",
    ]);
    assert_exit(&out, 0);
    let rows = read_csv(&out_dir.join("trajectory.csv"));
    assert_eq!(rows.len(), 31);
    let initial = rows[0][5];
    for row in &rows {
        assert!(
            (row[5] - initial).abs() <= 1e-6,
            "reprojection drifted at step {}: {} vs {}",
            row[0], row[5], initial
        );
    }
}

#[test]
fn optimize_with_a_non_finite_step_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 1, 52, 2.5);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &scene.snapshot);
    let out = bin(&[
        "optimize", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&dir.path().join("opt")), "--steps", "3", "--step-size", "inf",
    ]);
    assert_exit(&out, 4);
}

// ----------------------------------------------------------- pseudo-label

fn annotate_views(
    rig: &Rig,
    point: &Point3<f64>,
    frame: u64,
    views: &[usize],
) -> Vec<AnnotationRecord> {
    views
        .iter()
        .map(|&v| {
            let p = project(&rig.views[v].camera, point).unwrap();
            AnnotationRecord {
                frame,
                view: rig.views[v].id.clone(),
                channel: 0,
                u: p.x,
                v: p.y,
                source: "manual".into(),
            }
        })
        .collect()
}

#[test]
fn pseudo_label_lifts_four_views_to_eight() {
    let dir = tempfile::tempdir().unwrap();
    let rig = exact_ring_rig(8, 3.0, 61);
    let rig_path = dir.path().join("rig.json");
    save_rig(&rig, &rig_path).unwrap();
    let point = Point3::new(0.1, -0.05, 0.08);
    let ann_path = dir.path().join("ann.json");
    save_annotations(&annotate_views(&rig, &point, 0, &[0, 2, 4, 6]), &ann_path).unwrap();
    let out_dir = dir.path().join("pl");
    let out = bin(&[
        "pseudo-label", "--rig", path_arg(&rig_path), "--annotations", path_arg(&ann_path),
        "--out", path_arg(&out_dir),
    ]);
    assert_exit(&out, 0);
    let records = load_annotations(&out_dir.join("pseudo_labels.json")).unwrap();
    assert_eq!(records.len(), 8, "every rig view gets a label");
    for (v, record) in records.iter().enumerate() {
        assert_eq!(record.view, rig.views[v].id);
        assert_eq!(record.source, "spatial");
        let expected = project(&rig.views[v].camera, &point).unwrap();
        let err = (Point2::new(record.u, record.v) - expected).norm();
        assert!(err <= 1e-9, "view {v} label off by {err} px");
    }
}

#[test]
fn pseudo_label_single_view_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let rig = exact_ring_rig(4, 3.0, 62);
    let rig_path = dir.path().join("rig.json");
    save_rig(&rig, &rig_path).unwrap();
    let ann_path = dir.path().join("ann.json");
    save_annotations(
        &annotate_views(&rig, &Point3::new(0.1, 0.0, 0.0), 0, &[1]),
        &ann_path,
    )
    .unwrap();
    let out = bin(&[
        "pseudo-label", "--rig", path_arg(&rig_path), "--annotations", path_arg(&ann_path),
        "--out", path_arg(&dir.path().join("pl")),
    ]);
    assert_exit(&out, 5);
}

#[test]
fn pseudo_label_rerun_on_own_output_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let rig = exact_ring_rig(8, 3.0, 63);
    let rig_path = dir.path().join("rig.json");
    save_rig(&rig, &rig_path).unwrap();
    let ann_path = dir.path().join("ann.json");
    save_annotations(
        &annotate_views(&rig, &Point3::new(-0.08, 0.12, -0.05), 0, &[1, 3, 5, 7]),
        &ann_path,
    )
    .unwrap();
    let first_dir = dir.path().join("pl1");
    assert_exit(
        &bin(&[
            "pseudo-label", "--rig", path_arg(&rig_path), "--annotations", path_arg(&ann_path),
            "--out", path_arg(&first_dir),
        ]),
        0,
    );
    let second_dir = dir.path().join("pl2");
    assert_exit(
        &bin(&[
            "pseudo-label", "--rig", path_arg(&rig_path),
            "--annotations", path_arg(&first_dir.join("pseudo_labels.json")),
            "--out", path_arg(&second_dir),
        ]),
        0,
    );
    let first = load_annotations(&first_dir.join("pseudo_labels.json")).unwrap();
    let second = load_annotations(&second_dir.join("pseudo_labels.json")).unwrap();
    assert_eq!(first.len(), second.len());
    for (a, b) in first.iter().zip(&second) {
        assert_eq!((a.frame, &a.view, a.channel, &a.source), (b.frame, &b.view, b.channel, &b.source));
        let drift = (Point2::new(a.u, a.v) - Point2::new(b.u, b.v)).norm();
        assert!(drift <= 1e-9, "rerun moved a label by {drift} px");
    }
}

#[test]
fn pseudo_label_track_mode_cleans_a_corrupted_observation() {
    let dir = tempfile::tempdir().unwrap();
    let rig = exact_ring_rig(6, 3.0, 64);
    let rig_path = dir.path().join("rig.json");
    save_rig(&rig, &rig_path).unwrap();
    let trajectory: Vec<Point3<f64>> = (0..4)
        .map(|t| Point3::new(0.05 * t as f64, -0.03 * t as f64, 0.02 * t as f64))
        .collect();
    let mut records = Vec::new();
    for (t, point) in trajectory.iter().enumerate() {
        records.extend(annotate_views(&rig, point, t as u64, &[0, 1, 2, 3, 4, 5]));
    }
    // One gross outlier: camera 2 at frame 1 drifts 50 px sideways.
    let corrupt = records
        .iter_mut()
        .find(|r| r.frame == 1 && r.view == rig.views[2].id)
        .unwrap();
    corrupt.u += 50.0;
    let corrupt_u = corrupt.u;
    let ann_path = dir.path().join("ann.json");
    save_annotations(&records, &ann_path).unwrap();
    let out_dir = dir.path().join("pl");
    let out = bin(&[
        "pseudo-label", "--rig", path_arg(&rig_path), "--annotations", path_arg(&ann_path),
        "--out", path_arg(&out_dir), "--mode", "track",
    ]);
    assert_exit(&out, 0);
    let labels = load_annotations(&out_dir.join("pseudo_labels.json")).unwrap();
    assert_eq!(labels.len(), 4 * 6, "every frame and view labeled");
    assert!(labels.iter().all(|r| r.source == "track"));
    // The corrupted observation is replaced by the consensus projection.
    let cleaned = labels
        .iter()
        .find(|r| r.frame == 1 && r.view == rig.views[2].id)
        .unwrap();
    let expected = project(&rig.views[2].camera, &trajectory[1]).unwrap();
    assert!((corrupt_u - cleaned.u).abs() > 40.0, "outlier must not survive");
    assert!((Point2::new(cleaned.u, cleaned.v) - expected).norm() <= 1e-6);
    // A clean observation reprojects to itself.
    let kept = labels
        .iter()
        .find(|r| r.frame == 3 && r.view == rig.views[0].id)
        .unwrap();
    let original = project(&rig.views[0].camera, &trajectory[3]).unwrap();
    assert!((Point2::new(kept.u, kept.v) - original).norm() <= 1e-6);
}

// ------------------------------------------------------------------- eval

#[test]
fn eval_exact_detections_give_pck_one_and_zero_reprojection() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 3, 71, 2.5);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &scene.snapshot);
    let out_dir = dir.path().join("eval");
    let out = bin(&[
        "eval", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&out_dir),
    ]);
    assert_exit(&out, 0);
    let rows = read_csv(&out_dir.join("pck.csv"));
    assert_eq!(rows.len(), 51);
    // Threshold 0.0 demands bitwise equality, which the image-to-heatmap
    // mapping of the truth points cannot promise (float dust around 1e-16
    // survives the homogeneous divide). Every positive threshold must be
    // perfect on this exact scene.
    for row in &rows[1..] {
        assert_eq!(row[1], 1.0, "PCK at threshold {} must be 1.0", row[0]);
    }
    let metrics = read_json(&out_dir.join("metrics.json"));
    assert!(metrics["mean_reproj_px"].as_f64().unwrap() <= 1e-9);
    assert!(metrics["std_reproj_px"].as_f64().unwrap() <= 1e-9);
    let svg = std::fs::read_to_string(out_dir.join("pck.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));
}

#[test]
fn eval_confidence_floor_above_peaks_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 1, 72, 2.5);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &scene.snapshot);
    let out = bin(&[
        "eval", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&dir.path().join("eval")), "--confidence-floor", "1.1",
    ]);
    assert_exit(&out, 6);
}

#[test]
fn eval_scene_without_annotations_exits_6() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 1, 73, 2.5);
    let mut snapshot = scene.snapshot;
    for view in &mut snapshot.views {
        view.annotations = vec![None; 1];
    }
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &snapshot);
    let out = bin(&[
        "eval", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
        "--out", path_arg(&dir.path().join("eval")),
    ]);
    assert_exit(&out, 6);
}

/// PCK written by the binary equals a counting oracle recomputed from the
/// same scene file, row for row.
#[test]
fn eval_matches_a_counting_oracle_on_a_noisy_scene() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_exit(
        &bin(&[
            "synth", "--out", path_arg(&data), "--seed", "19", "--jitter-sigma", "1.5",
            "--points", "4", "--cameras", "5",
        ]),
        0,
    );
    let out_dir = dir.path().join("eval");
    let out = bin(&[
        "eval", "--rig", path_arg(&data.join("rig.json")),
        "--scene", path_arg(&data.join("scene.json")), "--out", path_arg(&out_dir),
    ]);
    assert_exit(&out, 0);
    let snapshot = load_scene(&data.join("scene.json")).unwrap();
    let window = snapshot
        .views
        .iter()
        .fold(0.0f64, |w, view| w.max(view.pred.w as f64));
    let mut normalized = Vec::new();
    for view in &snapshot.views {
        let peaks = epiview::metrics::argmax_keypoints(&view.pred);
        let to_hm = view.crop.heatmap_from_image();
        for (c, ann) in view.annotations.iter().enumerate() {
            let (Some(truth), Some((det, _))) = (ann, peaks.get(c)) else { continue };
            let t = to_hm * nalgebra::Vector3::new(truth.x, truth.y, 1.0);
            let truth_hm = Point2::new(t.x / t.z, t.y / t.z);
            normalized.push((det - truth_hm).norm() / window);
        }
    }
    assert!(!normalized.is_empty());
    let rows = read_csv(&out_dir.join("pck.csv"));
    assert_eq!(rows.len(), 51);
    for row in &rows {
        let oracle = normalized.iter().filter(|&&r| r <= row[0]).count() as f64
            / normalized.len() as f64;
        assert_eq!(row[1], oracle, "PCK mismatch at threshold {}", row[0]);
    }
    // Jitter must actually have detached some detections from truth.
    assert!(rows[0][1] < 1.0, "noise should break exactness at threshold 0");
}

// ----------------------------------------------------------- determinism

#[test]
fn loss_and_eval_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (rig, scene) = exact_scene(4, 3, 81, 3.0);
    let (rig_path, scene_path) = save_fixture(dir.path(), &rig, &scene.snapshot);
    let loss_a = dir.path().join("loss_a");
    let loss_b = dir.path().join("loss_b");
    for out in [&loss_a, &loss_b] {
        assert_exit(
            &bin(&[
                "loss", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
                "--out", path_arg(out), "--normalize-flats",
            ]),
            0,
        );
    }
    for name in ["pair_losses.csv", "totals.json"] {
        assert_eq!(
            std::fs::read(loss_a.join(name)).unwrap(),
            std::fs::read(loss_b.join(name)).unwrap(),
            "{name} must be deterministic"
        );
    }
    let eval_a = dir.path().join("eval_a");
    let eval_b = dir.path().join("eval_b");
    for out in [&eval_a, &eval_b] {
        assert_exit(
            &bin(&[
                "eval", "--rig", path_arg(&rig_path), "--scene", path_arg(&scene_path),
                "--out", path_arg(out),
            ]),
            0,
        );
    }
    for name in ["pck.csv", "residuals.csv", "metrics.json", "pck.svg"] {
        assert_eq!(
            std::fs::read(eval_a.join(name)).unwrap(),
            std::fs::read(eval_b.join(name)).unwrap(),
            "{name} must be deterministic"
        );
    }
}
