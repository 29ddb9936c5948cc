//! JSON-Lines dataset files.
//!
//! Line 1 is a header `{"format":"viewgrid-ds","version":1,"config":{..}}`; every further
//! line is one sample. Frames list only occupied cells, each as `[i, j, [x, y, z], features]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use viewgrid_core::camera::EulerAngles;
use viewgrid_core::npl::FeatureMap;
use viewgrid_core::synthdata::{Dataset, DatasetConfig, Sample, Split, View, NUM_JOINTS};

pub const FORMAT: &str = "viewgrid-ds";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported dataset version {found} (expected {VERSION})")]
    Version { found: u32 },
    #[error("not a {FORMAT} file (format {0:?})")]
    Format(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: DatasetConfig,
}

type CellRecord = (usize, usize, [f64; 3], Vec<f64>);

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewRecord {
    yaw: f64,
    pitch: f64,
    roll: f64,
    t: [f64; 3],
    frames: Vec<Vec<CellRecord>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    class: usize,
    split: Split,
    world: Vec<Vec<[f64; 3]>>,
    views: Vec<ViewRecord>,
}

fn encode_view(v: &View) -> ViewRecord {
    let frames = v
        .frames
        .iter()
        .map(|fm| {
            let mut cells = Vec::new();
            for i in 0..fm.width() {
                for j in 0..fm.height() {
                    let c = fm.cell(i, j);
                    if c[..NUM_JOINTS].iter().any(|&x| x != 0.0) {
                        cells.push((
                            i,
                            j,
                            [c[NUM_JOINTS], c[NUM_JOINTS + 1], c[NUM_JOINTS + 2]],
                            c[..NUM_JOINTS].to_vec(),
                        ));
                    }
                }
            }
            cells
        })
        .collect();
    ViewRecord { yaw: v.angles.yaw, pitch: v.angles.pitch, roll: v.angles.roll, t: v.translation, frames }
}

fn decode_view(r: ViewRecord, side: usize) -> Result<View, String> {
    let mut frames = Vec::with_capacity(r.frames.len());
    for cells in r.frames {
        let mut fm = FeatureMap::zeros(side, side, NUM_JOINTS);
        for (i, j, xyz, features) in cells {
            if i >= side || j >= side {
                return Err(format!("cell ({i}, {j}) outside a {side}x{side} raster"));
            }
            if features.len() != NUM_JOINTS {
                return Err(format!("cell ({i}, {j}) has {} features, expected {NUM_JOINTS}", features.len()));
            }
            let c = fm.cell_mut(i, j);
            c[..NUM_JOINTS].copy_from_slice(&features);
            c[NUM_JOINTS..].copy_from_slice(&xyz);
        }
        frames.push(fm);
    }
    Ok(View { angles: EulerAngles::new(r.yaw, r.pitch, r.roll), translation: r.t, frames })
}

fn encode_sample(s: &Sample) -> SampleRecord {
    SampleRecord {
        class: s.class,
        split: s.split,
        world: s.world.iter().map(|f| f.to_vec()).collect(),
        views: s.views.iter().map(encode_view).collect(),
    }
}

fn decode_sample(r: SampleRecord, side: usize) -> Result<Sample, String> {
    let mut world = Vec::with_capacity(r.world.len());
    for frame in r.world {
        let joints: [[f64; 3]; NUM_JOINTS] =
            frame.try_into().map_err(|f: Vec<_>| format!("frame has {} joints, expected {NUM_JOINTS}", f.len()))?;
        world.push(joints);
    }
    let views = r.views.into_iter().map(|v| decode_view(v, side)).collect::<Result<_, _>>()?;
    Ok(Sample { class: r.class, split: r.split, world, views })
}

pub fn write_to<W: Write>(ds: &Dataset, mut w: W) -> Result<(), DatasetError> {
    let header = Header { format: FORMAT.into(), version: VERSION, config: ds.config.clone() };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for s in &ds.samples {
        serde_json::to_writer(&mut w, &encode_sample(s)).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_from<R: Read>(r: R) -> Result<Dataset, DatasetError> {
    let mut lines = BufReader::new(r).lines();
    let parse = |line: usize, e: serde_json::Error| DatasetError::Parse { line, message: e.to_string() };
    let first = lines.next().ok_or(DatasetError::Parse { line: 1, message: "empty file".into() })??;
    let header_value: serde_json::Value = serde_json::from_str(&first).map_err(|e| parse(1, e))?;
    match header_value.get("format").and_then(|f| f.as_str()) {
        Some(FORMAT) => {}
        other => return Err(DatasetError::Format(other.unwrap_or("").to_string())),
    }
    if let Some(found) = header_value.get("version").and_then(|v| v.as_u64()) {
        if found != u64::from(VERSION) {
            return Err(DatasetError::Version { found: found as u32 });
        }
    }
    let header: Header = serde_json::from_value(header_value).map_err(|e| parse(1, e))?;
    let side = header.config.raster;
    let mut samples = Vec::new();
    for (k, line) in lines.enumerate() {
        let n = k + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| parse(n, e))?;
        samples.push(decode_sample(rec, side).map_err(|message| DatasetError::Parse { line: n, message })?);
    }
    Ok(Dataset { config: header.config, samples })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    write_to(ds, BufWriter::new(File::create(path)?))
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    read_from(File::open(path)?)
}
