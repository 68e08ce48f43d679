//! Post-hoc artifacts: a top-down SVG of the tracks and CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::adjustment::MouseStateTrack;
use crate::evaluation::reconstructed_parts;
use crate::geometry::PoseVector;
use crate::model::RigidMouseModel;
use crate::simulator::SimulatedDataset;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

const SVG_SIZE_PX: f64 = 600.0;
const MARGIN_MM: f64 = 10.0;

/// Planar vertices of a track with consecutive duplicates removed.
pub fn polyline(poses: &[PoseVector<f64>]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(poses.len());
    for p in poses {
        let v = (p.translation.x, p.translation.y);
        if out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

/// Top-down SVG with one `path` per named track. The table's `+y` axis
/// points up in the image.
pub fn track_svg(tracks: &[(&str, &[PoseVector<f64>])], half_extent_mm: f64) -> String {
    let e = half_extent_mm + MARGIN_MM;
    let scale = SVG_SIZE_PX / (2.0 * e);
    let colours = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_SIZE_PX}" height="{SVG_SIZE_PX}" viewBox="0 0 {SVG_SIZE_PX} {SVG_SIZE_PX}">"#
    );
    let _ = writeln!(
        svg,
        r##"<rect x="0" y="0" width="{SVG_SIZE_PX}" height="{SVG_SIZE_PX}" fill="#202020"/>"##
    );
    for (k, (name, poses)) in tracks.iter().enumerate() {
        let mut d = String::new();
        for (j, (x, y)) in polyline(poses).iter().enumerate() {
            let (px, py) = ((x + e) * scale, (e - y) * scale);
            let _ = write!(d, "{}{px:.3} {py:.3}", if j == 0 { "M" } else { " L" });
        }
        let _ = writeln!(
            svg,
            r#"<path id="{name}" d="{d}" fill="none" stroke="{}" stroke-width="1.5" stroke-linecap="round" stroke-linejoin="round"/>"#,
            colours[k % colours.len()]
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-epoch pose parameters of the estimate and the truth.
pub fn timeseries_csv(track: &MouseStateTrack, dataset: &SimulatedDataset) -> String {
    let mut csv = String::from(
        "t,rx,ry,rz,tx_mm,ty_mm,tz_mm,true_rx,true_ry,true_rz,true_tx_mm,true_ty_mm,true_tz_mm,solved_from\n",
    );
    for (t, e) in track.epochs.iter().enumerate() {
        let est = e.pose.to_array();
        let truth = dataset.true_pose(t).to_array();
        let _ = write!(csv, "{t}");
        for v in est.iter().chain(&truth) {
            let _ = write!(csv, ",{v:.9}");
        }
        let flag = serde_json::to_value(e.solved_from).expect("flag serialises");
        let _ = writeln!(csv, ",{}", flag.as_str().unwrap_or_default());
    }
    csv
}

/// Observed and reprojected pixel of every visible part in camera `slot`.
pub fn reprojection_csv(
    track: &MouseStateTrack,
    dataset: &SimulatedDataset,
    slot: usize,
) -> String {
    let model = RigidMouseModel::table();
    let cams = dataset.cameras().unwrap_or_default();
    let mut csv = String::from("t,part,u_obs,v_obs,u_pred,v_pred\n");
    let Some(cam) = cams.get(slot) else {
        return csv;
    };
    for t in 0..track.len().min(dataset.n_epochs()) {
        let parts = reconstructed_parts(track, &model, t);
        for (i, x) in parts.iter().enumerate() {
            let Some(obs) = dataset.observation(t, slot, i).pixel() else {
                continue;
            };
            let (u, v) = cam.project(x).map_or((f64::NAN, f64::NAN), |p| (p.x, p.y));
            let _ = writeln!(csv, "{t},{i},{:.6},{:.6},{u:.6},{v:.6}", obs.x, obs.y);
        }
    }
    csv
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, PlotError> {
    fs::write(&path, text).map_err(|source| PlotError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `track.svg`, `timeseries.csv` and `reprojection_cam<id>.csv` into
/// `out_dir`; returns the paths in that order.
pub fn plot(
    track: &MouseStateTrack,
    dataset: &SimulatedDataset,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, PlotError> {
    fs::create_dir_all(out_dir).map_err(|source| PlotError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let estimate = track.poses();
    let truth = dataset.true_track();
    let svg = track_svg(
        &[("estimate", &estimate), ("ground_truth", &truth)],
        dataset.meta.config.plane_half_extent_mm,
    );
    let mut paths = vec![
        write(out_dir.join("track.svg"), &svg)?,
        write(
            out_dir.join("timeseries.csv"),
            &timeseries_csv(track, dataset),
        )?,
    ];
    for (slot, cam) in dataset.meta.config.cameras.iter().enumerate() {
        paths.push(write(
            out_dir.join(format!("reprojection_cam{}.csv", cam.id)),
            &reprojection_csv(track, dataset, slot),
        )?);
    }
    Ok(paths)
}
