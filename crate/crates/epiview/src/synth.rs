//! Deterministic synthetic data: multi-camera rigs, ground-truth heatmap
//! scenes rendered from 3D keypoints, and controlled noise models (peak
//! jitter, symmetric-channel swaps, clutter blobs) for tests and demos.
//!
//! World scale is unit-ish (ring radii around 3, subjects inside the unit
//! box) so pixel tolerances transfer between tests.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{project, CameraModel, GeometryError, Rig, RigView};
use crate::heatmap::{gaussian_label, CropTransform, Heatmap};
use crate::supervision::{SceneSnapshot, ViewRecord};
use crate::{DEFAULT_CROP_HEIGHT, DEFAULT_HEATMAP_SIZE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid rig spec: {reason}")]
    InvalidSpec { reason: &'static str },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Camera placement pattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Placement {
    /// Evenly spaced on a horizontal circle around the target, optionally
    /// jittered in height (standard deviation in world units).
    Ring { radius: f64, height_jitter: f64 },
    /// Uniform-ish directions on a sphere around the target, excluding the
    /// poles so the look-at frame stays well conditioned.
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigSpec {
    pub cameras: usize,
    pub placement: Placement,
    pub target: Point3<f64>,
    /// Per-camera focal length drawn uniformly from this closed range.
    pub focal_range: (f64, f64),
    /// (width, height) of the synthetic sensor in pixels.
    pub image_size: (f64, f64),
    pub seed: u64,
}

/// Detection-failure model layered over ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Per-axis Gaussian peak jitter, in heatmap pixels.
    pub jitter_sigma: f64,
    /// Probability of exchanging the channels of each symmetric pair
    /// (2k, 2k+1) per view.
    pub swap_probability: f64,
    pub clutter_blobs: usize,
    /// Peak value of each clutter blob; combined with the signal by max.
    pub clutter_amplitude: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { jitter_sigma: 0.0, swap_probability: 0.0, clutter_blobs: 0, clutter_amplitude: 0.0 }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.swap_probability) {
            return Err(SynthError::InvalidSpec { reason: "swap probability must be in [0,1]" });
        }
        if self.jitter_sigma < 0.0 || self.clutter_amplitude < 0.0 {
            return Err(SynthError::InvalidSpec { reason: "noise magnitudes must be nonnegative" });
        }
        Ok(())
    }
}

fn look_at(center: Point3<f64>, target: Point3<f64>) -> Result<Matrix3<f64>, SynthError> {
    let z = (target - center).normalize();
    let cross = z.cross(&Vector3::z());
    if cross.norm() < 1e-6 {
        return Err(SynthError::InvalidSpec { reason: "camera gaze too close to vertical" });
    }
    let x = cross.normalize();
    let y = z.cross(&x);
    Ok(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}

/// Builds a deterministic rig from a [`RigSpec`]: cameras on the requested
/// placement, all looking at the target, ids `cam0..camN`.
pub fn make_rig(spec: &RigSpec) -> Result<Rig, SynthError> {
    if spec.cameras < 2 {
        return Err(SynthError::InvalidSpec { reason: "at least two cameras" });
    }
    let radius = match spec.placement {
        Placement::Ring { radius, .. } | Placement::Sphere { radius } => radius,
    };
    if radius <= 0.0 {
        return Err(SynthError::InvalidSpec { reason: "placement radius must be positive" });
    }
    if !(spec.focal_range.0 > 0.0 && spec.focal_range.0 <= spec.focal_range.1) {
        return Err(SynthError::InvalidSpec { reason: "focal range must be positive and ordered" });
    }
    if !(spec.image_size.0 > 0.0 && spec.image_size.1 > 0.0) {
        return Err(SynthError::InvalidSpec { reason: "image size must be positive" });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut views = Vec::with_capacity(spec.cameras);
    let mut centers: Vec<Point3<f64>> = Vec::with_capacity(spec.cameras);
    for i in 0..spec.cameras {
        let f = if spec.focal_range.1 - spec.focal_range.0 < 1e-12 {
            spec.focal_range.0
        } else {
            rng.random_range(spec.focal_range.0..spec.focal_range.1)
        };
        let center = match spec.placement {
            Placement::Ring { radius, height_jitter } => {
                let theta = 2.0 * std::f64::consts::PI * i as f64 / spec.cameras as f64;
                let dz = if height_jitter > 0.0 {
                    Normal::new(0.0, height_jitter).unwrap().sample(&mut rng)
                } else {
                    0.0
                };
                spec.target + Vector3::new(radius * theta.cos(), radius * theta.sin(), dz)
            }
            Placement::Sphere { radius } => {
                let mut attempts = 0;
                loop {
                    attempts += 1;
                    if attempts > 256 {
                        return Err(SynthError::InvalidSpec {
                            reason: "could not place distinct sphere cameras",
                        });
                    }
                    let v: Vector3<f64> = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let n = v.norm();
                    // Reject near-zero vectors and near-polar directions.
                    if n < 1e-3 || (v.z / n).abs() >= 0.95 {
                        continue;
                    }
                    let candidate = spec.target + v * (radius / n);
                    if centers.iter().all(|c| (candidate - c).norm() > 1e-6) {
                        break candidate;
                    }
                }
            }
        };
        centers.push(center);
        let k = Matrix3::new(
            f, 0.0, spec.image_size.0 / 2.0,
            0.0, f, spec.image_size.1 / 2.0,
            0.0, 0.0, 1.0,
        );
        let rotation = look_at(center, spec.target)?;
        let camera = CameraModel::new(k, rotation, center)?;
        views.push(RigView { id: format!("cam{i}"), camera });
    }
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            if (centers[a] - centers[b]).norm() <= 1e-9 {
                return Err(SynthError::InvalidSpec { reason: "coincident camera centers" });
            }
        }
    }
    Ok(Rig { views })
}

/// A rendered synthetic frame plus everything its tests need: the noisy
/// snapshot, the clean render, and exact peak/point ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    /// Predictions carry the noise model; annotations carry the exact
    /// image-pixel projections.
    pub snapshot: SceneSnapshot,
    /// Noise-free renders, one per view.
    pub clean: Vec<Heatmap>,
    /// `truth_peaks[view][channel]`: exact projections in heatmap pixels.
    pub truth_peaks: Vec<Vec<Point2<f64>>>,
    /// Rendered (jittered/swapped) peak positions in heatmap pixels.
    pub noisy_peaks: Vec<Vec<Point2<f64>>>,
    /// Per-view Gaussian width in heatmap pixels after depth/focal scaling.
    pub sigmas: Vec<f64>,
    pub points: Vec<Point3<f64>>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Renders ground-truth heatmaps for the keypoints into every view and applies
/// the noise model. Each view's crop is a square box of half the image
/// height centered on the projected centroid, so subjects land mid-heatmap;
/// blob widths scale with each view's focal-over-depth ratio so one world
/// size renders consistently everywhere.
pub fn make_scene(
    rig: &Rig,
    keypoints: &[Point3<f64>],
    sigma: f64,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<SynthScene, SynthError> {
    assert!(sigma > 0.0, "sigma must be positive");
    assert!(!keypoints.is_empty(), "need at least one keypoint");
    noise.validate()?;
    let size = DEFAULT_HEATMAP_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per-view projections, crops, and focal-over-depth scale factors.
    let mut projections = Vec::with_capacity(rig.views.len());
    let mut crops = Vec::with_capacity(rig.views.len());
    let mut f_over_z = Vec::with_capacity(rig.views.len());
    for view in &rig.views {
        let cam = &view.camera;
        let mut pts = Vec::with_capacity(keypoints.len());
        let mut mean_depth = 0.0;
        for x in keypoints {
            pts.push(project(cam, x)?);
            mean_depth += (cam.rotation * (x - cam.center)).z;
        }
        mean_depth /= keypoints.len() as f64;
        let centroid = pts
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + Vector3::new(p.x, p.y, 0.0))
            / pts.len() as f64;
        let h_b = cam.intrinsics[(1, 2)];
        crops.push(CropTransform {
            u_x: centroid.x - h_b / 2.0,
            u_y: centroid.y - h_b / 2.0,
            h_b,
            w_x: 0.0,
            w_y: 0.0,
            h_c: DEFAULT_CROP_HEIGHT as f64,
            h_h: size as f64,
        });
        f_over_z.push(cam.intrinsics[(1, 1)] / mean_depth);
        projections.push(pts);
    }
    let scale_ref = median(f_over_z.clone());
    let sigmas: Vec<f64> = f_over_z.iter().map(|r| sigma * r / scale_ref).collect();

    // Exact heatmap-pixel peaks, then the noise model in rendering order:
    // jitter, then symmetric swaps. Draws are conditional on the relevant
    // noise term being active so zero-noise scenes stay bit-stable.
    let mut truth_peaks = Vec::with_capacity(rig.views.len());
    for (pts, crop) in projections.iter().zip(&crops) {
        let to_hm = crop.heatmap_from_image();
        let peaks: Vec<Point2<f64>> = pts
            .iter()
            .map(|p| {
                let h = to_hm * Vector3::new(p.x, p.y, 1.0);
                Point2::new(h.x / h.z, h.y / h.z)
            })
            .collect();
        truth_peaks.push(peaks);
    }
    let mut noisy_peaks = truth_peaks.clone();
    if noise.jitter_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.jitter_sigma).unwrap();
        for peaks in noisy_peaks.iter_mut() {
            for p in peaks.iter_mut() {
                p.x += normal.sample(&mut rng);
                p.y += normal.sample(&mut rng);
            }
        }
    }
    if noise.swap_probability > 0.0 {
        for peaks in noisy_peaks.iter_mut() {
            for k in 0..peaks.len() / 2 {
                if rng.random::<f64>() < noise.swap_probability {
                    peaks.swap(2 * k, 2 * k + 1);
                }
            }
        }
    }

    let mut clean = Vec::with_capacity(rig.views.len());
    let mut views = Vec::with_capacity(rig.views.len());
    for (v, rig_view) in rig.views.iter().enumerate() {
        let truth_opts: Vec<Option<Point2<f64>>> =
            truth_peaks[v].iter().copied().map(Some).collect();
        let noisy_opts: Vec<Option<Point2<f64>>> =
            noisy_peaks[v].iter().copied().map(Some).collect();
        clean.push(gaussian_label(&truth_opts, sigmas[v], size, size));
        let mut pred = gaussian_label(&noisy_opts, sigmas[v], size, size);
        if noise.clutter_blobs > 0 && noise.clutter_amplitude > 0.0 {
            for c in 0..pred.c {
                for _ in 0..noise.clutter_blobs {
                    let bx = rng.random_range(0.0..(size as f64 - 1.0));
                    let by = rng.random_range(0.0..(size as f64 - 1.0));
                    let inv = 1.0 / (2.0 * sigmas[v] * sigmas[v]);
                    let plane = &mut pred.values[c * size * size..(c + 1) * size * size];
                    for y in 0..size {
                        for x in 0..size {
                            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                            let blob = noise.clutter_amplitude * (-d2 * inv).exp();
                            let cell = &mut plane[y * size + x];
                            *cell = cell.max(blob).min(1.0);
                        }
                    }
                }
            }
        }
        views.push(ViewRecord {
            camera_id: rig_view.id.clone(),
            crop: crops[v],
            pred,
            label: None,
            pseudo_label: None,
            annotations: projections[v].iter().copied().map(Some).collect(),
        });
    }
    Ok(SynthScene {
        snapshot: SceneSnapshot { frame: 0, views },
        clean,
        truth_peaks,
        noisy_peaks,
        sigmas,
        points: keypoints.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pair_degeneracy_check, PixelRect};
    use crate::heatmap::heatmap_frame_camera;
    use crate::metrics::argmax_keypoints;
    use approx::assert_abs_diff_eq;

    fn ring_spec(cameras: usize, seed: u64) -> RigSpec {
        RigSpec {
            cameras,
            placement: Placement::Ring { radius: 3.0, height_jitter: 0.0 },
            target: Point3::origin(),
            focal_range: (1200.0, 1200.0),
            image_size: (1000.0, 1000.0),
            seed,
        }
    }

    #[test]
    fn ring_of_four_looks_at_target() {
        let rig = make_rig(&ring_spec(4, 1)).unwrap();
        assert_eq!(rig.views.len(), 4);
        for view in &rig.views {
            assert_abs_diff_eq!(view.camera.center.coords.norm(), 3.0, epsilon = 1e-12);
            let px = project(&view.camera, &Point3::origin()).unwrap();
            assert!((px - Point2::new(500.0, 500.0)).norm() <= 1e-9, "axis misses target");
        }
        let ids: std::collections::BTreeSet<_> =
            rig.views.iter().map(|v| v.id.clone()).collect();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn rigs_are_deterministic_per_seed() {
        let spec = RigSpec {
            cameras: 5,
            placement: Placement::Ring { radius: 2.5, height_jitter: 0.3 },
            target: Point3::new(0.1, 0.0, 0.2),
            focal_range: (900.0, 1500.0),
            image_size: (1000.0, 1000.0),
            seed: 42,
        };
        let a = make_rig(&spec).unwrap();
        let b = make_rig(&spec).unwrap();
        for (va, vb) in a.views.iter().zip(&b.views) {
            assert_eq!(va.camera.intrinsics, vb.camera.intrinsics);
            assert_eq!(va.camera.rotation, vb.camera.rotation);
            assert_eq!(va.camera.center, vb.camera.center);
        }
        let c = make_rig(&RigSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.views[0].camera.intrinsics, c.views[0].camera.intrinsics);
    }

    #[test]
    fn coplanar_ring_degenerates_on_plane_points() {
        // Zero height jitter puts every camera center on the target plane;
        // epipolar lines around an in-plane point collapse to one direction.
        let rig = make_rig(&ring_spec(6, 3)).unwrap();
        let plane_point = Point3::new(0.2, 0.1, 0.0);
        let cam_i = &rig.views[0].camera;
        let cam_j = &rig.views[1].camera;
        let px = project(cam_i, &plane_point).unwrap();
        let roi = PixelRect::new(px.x - 5.0, px.y - 5.0, px.x + 5.0, px.y + 5.0);
        let spread = pair_degeneracy_check(cam_i, cam_j, &roi).unwrap();
        assert!(spread < 2.0, "in-plane spread {spread}");
        // An off-plane point in a taller window is far from degenerate.
        let tall = PixelRect::new(px.x - 5.0, px.y - 300.0, px.x + 5.0, px.y + 300.0);
        let spread_tall = pair_degeneracy_check(cam_i, cam_j, &tall).unwrap();
        assert!(spread_tall > 2.0, "tall-window spread {spread_tall}");
    }

    #[test]
    fn sphere_rigs_avoid_poles_and_coincidence() {
        let spec = RigSpec {
            cameras: 12,
            placement: Placement::Sphere { radius: 3.0 },
            target: Point3::origin(),
            focal_range: (1000.0, 1400.0),
            image_size: (1000.0, 1000.0),
            seed: 9,
        };
        let rig = make_rig(&spec).unwrap();
        for view in &rig.views {
            let c = view.camera.center.coords;
            assert_abs_diff_eq!(c.norm(), 3.0, epsilon = 1e-9);
            assert!((c.z / c.norm()).abs() < 0.95);
        }
        for a in 0..12 {
            for b in a + 1..12 {
                let d = (rig.views[a].camera.center - rig.views[b].camera.center).norm();
                assert!(d > 1e-6);
            }
        }
    }

    #[test]
    fn make_rig_rejects_bad_specs() {
        let mut spec = ring_spec(1, 0);
        assert!(matches!(make_rig(&spec), Err(SynthError::InvalidSpec { .. })));
        spec = ring_spec(4, 0);
        spec.placement = Placement::Ring { radius: 0.0, height_jitter: 0.0 };
        assert!(matches!(make_rig(&spec), Err(SynthError::InvalidSpec { .. })));
        spec = ring_spec(4, 0);
        spec.focal_range = (1500.0, 900.0);
        assert!(matches!(make_rig(&spec), Err(SynthError::InvalidSpec { .. })));
    }

    fn test_points() -> Vec<Point3<f64>> {
        vec![Point3::new(0.2, -0.1, 0.1), Point3::new(-0.15, 0.25, -0.2)]
    }

    #[test]
    fn zero_noise_scene_recovers_projections_within_half_cell() {
        let rig = make_rig(&ring_spec(4, 5)).unwrap();
        let scene =
            make_scene(&rig, &test_points(), 2.0, &NoiseSpec::default(), 11).unwrap();
        for (v, view) in scene.snapshot.views.iter().enumerate() {
            assert_eq!(view.pred, scene.clean[v], "zero noise leaves the render clean");
            let peaks = argmax_keypoints(&view.pred);
            for (c, truth) in scene.truth_peaks[v].iter().enumerate() {
                assert!((peaks[c].0.x - truth.x).abs() <= 0.5 + 1e-9);
                assert!((peaks[c].0.y - truth.y).abs() <= 0.5 + 1e-9);
            }
        }
        // Centroid of the subject sits mid-heatmap by crop construction:
        // half the box height scales to half the heatmap height exactly.
        let mid = (scene.truth_peaks[0][0].coords + scene.truth_peaks[0][1].coords) / 2.0;
        assert_abs_diff_eq!(mid.x, 23.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mid.y, 23.0, epsilon = 1e-9);
    }

    #[test]
    fn swap_probability_one_exchanges_symmetric_pairs() {
        let rig = make_rig(&ring_spec(4, 5)).unwrap();
        let noise = NoiseSpec { swap_probability: 1.0, ..NoiseSpec::default() };
        let scene = make_scene(&rig, &test_points(), 2.0, &noise, 11).unwrap();
        for v in 0..4 {
            assert_eq!(scene.noisy_peaks[v][0], scene.truth_peaks[v][1]);
            assert_eq!(scene.noisy_peaks[v][1], scene.truth_peaks[v][0]);
        }
    }

    #[test]
    fn jitter_displacement_matches_rayleigh_mean() {
        let rig = make_rig(&ring_spec(4, 5)).unwrap();
        let noise = NoiseSpec { jitter_sigma: 5.0, ..NoiseSpec::default() };
        let mut displacements = Vec::new();
        for seed in 0..125 {
            let scene = make_scene(&rig, &test_points(), 2.0, &noise, seed).unwrap();
            for v in 0..4 {
                for c in 0..2 {
                    displacements
                        .push((scene.noisy_peaks[v][c] - scene.truth_peaks[v][c]).norm());
                }
            }
        }
        assert_eq!(displacements.len(), 1000);
        let mean = displacements.iter().sum::<f64>() / displacements.len() as f64;
        let expected = 5.0 * (std::f64::consts::PI / 2.0).sqrt();
        assert!(
            (mean - expected).abs() <= 0.05 * expected,
            "mean {mean} vs Rayleigh {expected}"
        );
    }

    #[test]
    fn clutter_keeps_range_and_primary_peaks() {
        let rig = make_rig(&ring_spec(4, 5)).unwrap();
        let noise = NoiseSpec { clutter_blobs: 3, clutter_amplitude: 0.5, ..NoiseSpec::default() };
        let scene = make_scene(&rig, &test_points(), 2.0, &noise, 11).unwrap();
        for (v, view) in scene.snapshot.views.iter().enumerate() {
            assert!(view.pred.values.iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert_ne!(view.pred, scene.clean[v], "clutter must change the render");
            // Sub-unit clutter cannot displace the unit-peak argmax.
            let peaks = argmax_keypoints(&view.pred);
            for (c, truth) in scene.truth_peaks[v].iter().enumerate() {
                assert!((peaks[c].0 - truth).norm() <= 1.0);
            }
        }
    }

    #[test]
    fn behind_camera_keypoint_is_rejected() {
        let rig = make_rig(&ring_spec(4, 5)).unwrap();
        let outside = vec![Point3::new(4.0, 0.0, 0.0)];
        assert!(matches!(
            make_scene(&rig, &outside, 2.0, &NoiseSpec::default(), 1),
            Err(SynthError::Geometry(GeometryError::DepthNonPositive { .. }))
        ));
    }

    #[test]
    fn heatmap_frame_consistency_of_scene_crops() {
        // The scene's truth peaks equal the projections through the
        // heatmap-frame cameras, tying synth output to the metrics frame.
        let rig = make_rig(&ring_spec(5, 8)).unwrap();
        let scene =
            make_scene(&rig, &test_points(), 2.0, &NoiseSpec::default(), 3).unwrap();
        for (v, view) in scene.snapshot.views.iter().enumerate() {
            let hm_cam = heatmap_frame_camera(&rig.views[v].camera, &view.crop);
            for (c, point) in scene.points.iter().enumerate() {
                let px = project(&hm_cam, point).unwrap();
                assert!((px - scene.truth_peaks[v][c]).norm() <= 1e-9);
            }
        }
    }
}
