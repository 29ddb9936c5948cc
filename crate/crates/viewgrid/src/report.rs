//! JSON and CSV outputs of the experiment commands.

use std::fs;
use std::path::Path;

use serde::Serialize;
use viewgrid_core::camera;
use viewgrid_core::model::Network;
use viewgrid_core::trainer::{Accuracies, EpochLosses, Metrics};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct MetricsReport<'a> {
    pub config: &'a RunConfig,
    pub epochs: &'a [EpochLosses],
    pub accuracy: Accuracies,
}

impl<'a> MetricsReport<'a> {
    pub fn new(config: &'a RunConfig, m: &'a Metrics) -> Self {
        Self { config, epochs: &m.epochs, accuracy: m.accuracy }
    }
}

#[derive(Debug, Serialize)]
pub struct EvalReport<'a> {
    pub config: &'a RunConfig,
    pub accuracy: Accuracies,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::from)?;
    text.push('\n');
    fs::write(path, text)
}

/// One-line summary printed by `train` and `eval`.
pub fn summary(a: &Accuracies) -> String {
    format!("seen={:.3} unseen={:.3}", a.test_seen, a.test_unseen)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct CameraRow {
    pub camera: usize,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub x_0: f64,
    pub y_0: f64,
    pub k00: f64,
    pub k01: f64,
    pub k02: f64,
    pub k10: f64,
    pub k11: f64,
    pub k12: f64,
    pub k20: f64,
    pub k21: f64,
    pub k22: f64,
}

pub fn camera_rows(net: &Network) -> viewgrid_core::Result<Vec<CameraRow>> {
    let cams = net.learned_cameras()?;
    Ok(cams
        .iter()
        .enumerate()
        .map(|(camera, c)| {
            let k = camera::intrinsic_matrix(&c.intrinsics, &camera::rotation_from_euler(c.angles));
            CameraRow {
                camera,
                yaw: c.angles.yaw,
                pitch: c.angles.pitch,
                roll: c.angles.roll,
                s_x: c.intrinsics.s_x,
                s_y: c.intrinsics.s_y,
                x_0: c.intrinsics.x_0,
                y_0: c.intrinsics.y_0,
                k00: k[0][0],
                k01: k[0][1],
                k02: k[0][2],
                k10: k[1][0],
                k11: k[1][1],
                k12: k[1][2],
                k20: k[2][0],
                k21: k[2][1],
                k22: k[2][2],
            }
        })
        .collect())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
