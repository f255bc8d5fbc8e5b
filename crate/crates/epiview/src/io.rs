//! File formats behind the command-line tools: rig JSON, scene bundles
//! (a JSON manifest plus one little-endian f32 plane file), annotation
//! records, CSV tables, and a small hand-rolled SVG line plot.
//!
//! Formats are deterministic: saving the same value twice produces
//! identical bytes, and save(load(f)) reproduces f.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Point2, Point3};

use crate::geometry::{CameraModel, GeometryError, Rig, RigView};
use crate::heatmap::{CropTransform, Heatmap, HeatmapError};
use crate::metrics::PckCurve;
use crate::supervision::{SceneSnapshot, TrajectoryRow, ViewRecord};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("bad file contents: {reason}")]
    Format { reason: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
}

fn format_err(reason: impl Into<String>) -> IoError {
    IoError::Format { reason: reason.into() }
}

// ---------------------------------------------------------------- rig JSON

#[derive(serde::Serialize, serde::Deserialize)]
struct RigFileCamera {
    id: String,
    /// Row-major 3x3.
    k: [f64; 9],
    /// Row-major 3x3.
    r: [f64; 9],
    c: [f64; 3],
}

#[derive(serde::Serialize, serde::Deserialize)]
struct RigFile {
    cameras: Vec<RigFileCamera>,
}

fn mat_to_rows(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

fn rows_to_mat(v: &[f64; 9]) -> Matrix3<f64> {
    Matrix3::from_row_slice(v)
}

pub fn save_rig(rig: &Rig, path: &Path) -> Result<(), IoError> {
    let file = RigFile {
        cameras: rig
            .views
            .iter()
            .map(|view| RigFileCamera {
                id: view.id.clone(),
                k: mat_to_rows(&view.camera.intrinsics),
                r: mat_to_rows(&view.camera.rotation),
                c: [view.camera.center.x, view.camera.center.y, view.camera.center.z],
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Loads a rig and re-validates every camera.
pub fn load_rig(path: &Path) -> Result<Rig, IoError> {
    let file: RigFile = serde_json::from_slice(&std::fs::read(path)?)?;
    let mut views = Vec::with_capacity(file.cameras.len());
    for cam in file.cameras {
        let camera = CameraModel::new(
            rows_to_mat(&cam.k),
            rows_to_mat(&cam.r),
            Point3::new(cam.c[0], cam.c[1], cam.c[2]),
        )?;
        views.push(RigView { id: cam.id, camera });
    }
    Ok(Rig { views })
}

// ------------------------------------------------------------ scene bundle

#[derive(serde::Serialize, serde::Deserialize)]
struct SceneShape {
    w: usize,
    h: usize,
    c: usize,
    dtype: String,
    order: String,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SceneViewEntry {
    camera_id: String,
    crop: CropTransform,
    annotations: Vec<Option<(f64, f64)>>,
    has_label: bool,
    has_pseudo_label: bool,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SceneFile {
    frame: u64,
    heatmap: SceneShape,
    /// Plane file name, relative to this manifest.
    data: String,
    views: Vec<SceneViewEntry>,
}

fn data_path(manifest: &Path, name: &str) -> PathBuf {
    manifest.parent().unwrap_or(Path::new(".")).join(name)
}

fn push_planes(out: &mut Vec<u8>, hm: &Heatmap) {
    for &v in &hm.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Saves a snapshot as `<path>` plus a sibling `<stem>.bin` holding all
/// planes as little-endian f32: per view, prediction planes, then label
/// planes when present, then pseudo-label planes when present.
pub fn save_scene(snapshot: &SceneSnapshot, path: &Path) -> Result<(), IoError> {
    let Some(first) = snapshot.views.first() else {
        return Err(format_err("cannot save an empty snapshot"));
    };
    let shape = SceneShape {
        w: first.pred.w,
        h: first.pred.h,
        c: first.pred.c,
        dtype: "f32".into(),
        order: "row-major, channel-outermost".into(),
    };
    let stem = path
        .file_stem()
        .ok_or_else(|| format_err("scene path needs a file name"))?
        .to_string_lossy();
    let bin_name = format!("{stem}.bin");
    let mut planes = Vec::new();
    let mut views = Vec::with_capacity(snapshot.views.len());
    for view in &snapshot.views {
        if (view.pred.w, view.pred.h, view.pred.c) != (shape.w, shape.h, shape.c) {
            return Err(format_err("snapshot views disagree on heatmap shape"));
        }
        push_planes(&mut planes, &view.pred);
        if let Some(label) = &view.label {
            push_planes(&mut planes, label);
        }
        if let Some(pseudo) = &view.pseudo_label {
            push_planes(&mut planes, pseudo);
        }
        views.push(SceneViewEntry {
            camera_id: view.camera_id.clone(),
            crop: view.crop,
            annotations: view.annotations.iter().map(|a| a.map(|p| (p.x, p.y))).collect(),
            has_label: view.label.is_some(),
            has_pseudo_label: view.pseudo_label.is_some(),
        });
    }
    let file =
        SceneFile { frame: snapshot.frame, heatmap: shape, data: bin_name.clone(), views };
    let mut bytes = serde_json::to_vec_pretty(&file)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    std::fs::write(data_path(path, &bin_name), planes)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<SceneSnapshot, IoError> {
    let file: SceneFile = serde_json::from_slice(&std::fs::read(path)?)?;
    if file.heatmap.dtype != "f32" {
        return Err(format_err(format!("unsupported dtype {:?}", file.heatmap.dtype)));
    }
    let raw = std::fs::read(data_path(path, &file.data))?;
    if raw.len() % 4 != 0 {
        return Err(format_err("plane file length is not a multiple of 4"));
    }
    let floats: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let plane_len = file.heatmap.w * file.heatmap.h * file.heatmap.c;
    let mut offset = 0;
    let mut take = |n: usize| -> Result<Vec<f64>, IoError> {
        let end = offset + n;
        if end > floats.len() {
            return Err(format_err("plane file is shorter than the manifest requires"));
        }
        let slice = floats[offset..end].to_vec();
        offset = end;
        Ok(slice)
    };
    let mut views = Vec::with_capacity(file.views.len());
    for entry in &file.views {
        let (w, h, c) = (file.heatmap.w, file.heatmap.h, file.heatmap.c);
        let pred = Heatmap::new(w, h, c, take(plane_len)?)?;
        let label = if entry.has_label {
            Some(Heatmap::new(w, h, c, take(plane_len)?)?)
        } else {
            None
        };
        let pseudo_label = if entry.has_pseudo_label {
            Some(Heatmap::new(w, h, c, take(plane_len)?)?)
        } else {
            None
        };
        views.push(ViewRecord {
            camera_id: entry.camera_id.clone(),
            crop: entry.crop,
            pred,
            label,
            pseudo_label,
            annotations: entry
                .annotations
                .iter()
                .map(|a| a.map(|(x, y)| Point2::new(x, y)))
                .collect(),
        });
    }
    if offset != floats.len() {
        return Err(format_err("plane file is longer than the manifest requires"));
    }
    Ok(SceneSnapshot { frame: file.frame, views })
}

// ------------------------------------------------------------- annotations

/// One 2D keypoint observation tied to a frame, view, and channel.
/// `source` records where it came from: "manual", "spatial", or "track".
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationRecord {
    pub frame: u64,
    pub view: String,
    pub channel: usize,
    pub u: f64,
    pub v: f64,
    pub source: String,
}

pub fn save_annotations(records: &[AnnotationRecord], path: &Path) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(records)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, IoError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

// -------------------------------------------------------------- CSV tables

pub fn write_pair_loss_csv(
    rows: &[(usize, usize, usize, f64)],
    path: &Path,
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pair_i", "pair_j", "channel", "loss"])?;
    for &(i, j, c, loss) in rows {
        w.write_record([i.to_string(), j.to_string(), c.to_string(), loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "total", "labeled", "epipolar", "bootstrap", "mean_reproj_px"])?;
    for row in rows {
        w.write_record([
            row.step.to_string(),
            row.total.to_string(),
            row.labeled.to_string(),
            row.epipolar.to_string(),
            row.bootstrap.to_string(),
            row.mean_reproj_px.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pck_csv(curve: &PckCurve, path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "pck"])?;
    for (t, v) in curve.thresholds.iter().zip(&curve.values) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Rows are (view, channel, residual in pixels).
pub fn write_residual_csv(rows: &[(usize, usize, f64)], path: &Path) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["view", "channel", "residual_px"])?;
    for &(view, channel, r) in rows {
        w.write_record([view.to_string(), channel.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

// ---------------------------------------------------------------- SVG plot

/// Renders named series as a fixed-size line plot. Axes are scaled to the
/// joint data range; no external plotting dependency.
pub fn render_line_svg(series: &[(&str, Vec<(f64, f64)>)], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const M: f64 = 52.0;
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut out = String::new();
    let mut w = |s: String| out.push_str(&s);
    w(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    w(format!("<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"));
    w(format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"15\">{title}</text>\n",
        W / 2.0
    ));
    w(format!(
        "<line x1=\"{M}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - M,
        W - M
    ));
    w(format!("<line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n", H - M));
    for (frac, value, vertical) in
        [(0.0f64, x0, false), (1.0, x1, false), (0.0, y0, true), (1.0, y1, true)]
    {
        if vertical {
            w(format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" \
                 font-size=\"11\">{value:.4}</text>\n",
                M - 6.0,
                sy(y0 + frac * (y1 - y0)) + 4.0
            ));
        } else {
            w(format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
                 font-size=\"11\">{value:.4}</text>\n",
                sx(x0 + frac * (x1 - x0)),
                H - M + 16.0
            ));
        }
    }
    for (idx, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[idx % COLORS.len()];
        let coords: Vec<String> =
            pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        w(format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" \
             points=\"{}\"/>\n",
            coords.join(" ")
        ));
        w(format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             fill=\"{color}\">{name}</text>\n",
            W - M + 6.0 - 110.0,
            M + 16.0 * idx as f64
        ));
    }
    w("</svg>\n".to_string());
    out
}

pub fn write_svg(svg: &str, path: &Path) -> Result<(), IoError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(svg.as_bytes())?;
    Ok(())
}
