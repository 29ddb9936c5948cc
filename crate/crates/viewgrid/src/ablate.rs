//! Ablation grids: each cell is a full train-and-evaluate run on a shared dataset.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use viewgrid_core::model::Head;
use viewgrid_core::synthdata::Dataset;
use viewgrid_core::trainer::train_on;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Grid {
    /// Multi-view head with 1, 2, 4 and 8 cameras.
    Cameras,
    /// Multi-view head inserted after each encoder block.
    Insertion,
    /// Baseline, then the multi-view head with and without each loss term.
    Loss,
    /// Baseline against the feature-matching baseline.
    Repmatch,
    /// Every grid above.
    All,
}

pub const CAMERA_COUNTS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone)]
pub struct Cell {
    pub name: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub cell: String,
    pub head: String,
    pub num_cameras: usize,
    pub insertion_block: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub train_seen: f64,
    pub test_seen: f64,
    pub test_unseen: f64,
}

fn with(base: &RunConfig, name: String, f: impl FnOnce(&mut RunConfig)) -> Cell {
    let mut config = base.clone();
    f(&mut config);
    Cell { name, config }
}

fn baseline(base: &RunConfig) -> Cell {
    with(base, "baseline".into(), |c| {
        c.model.head = Head::BaselineNone;
        c.loss.lambda1 = 0.0;
        c.loss.lambda2 = 0.0;
    })
}

/// Cells of `grid`, each derived from `base`. Loss weights of `base` are the "on" values.
pub fn cells(grid: Grid, base: &RunConfig) -> Vec<Cell> {
    let mv = |c: &mut RunConfig| c.model.head = Head::Multiview2d;
    let (l1, l2) = (base.loss.lambda1, base.loss.lambda2);
    match grid {
        Grid::Cameras => CAMERA_COUNTS
            .iter()
            .map(|&n| {
                with(base, format!("cameras={n}"), |c| {
                    mv(c);
                    c.model.num_cameras = n;
                })
            })
            .collect(),
        Grid::Insertion => (1..=viewgrid_core::model::ENCODER_BLOCKS)
            .map(|b| {
                with(base, format!("block={b}"), |c| {
                    mv(c);
                    c.model.insertion_block = b;
                })
            })
            .collect(),
        Grid::Loss => {
            let mut out = vec![baseline(base)];
            for (name, a, b) in
                [("mvp", 0.0, 0.0), ("mvp+3d", l1, 0.0), ("mvp+camreg", 0.0, l2), ("mvp+3d+camreg", l1, l2)]
            {
                out.push(with(base, name.into(), |c| {
                    mv(c);
                    c.loss.lambda1 = a;
                    c.loss.lambda2 = b;
                }));
            }
            out
        }
        Grid::Repmatch => vec![
            baseline(base),
            with(base, "repmatch".into(), |c| {
                c.model.head = Head::Repmatch;
                c.loss.lambda2 = 0.0;
            }),
        ],
        Grid::All => {
            let mut out = Vec::new();
            for g in [Grid::Loss, Grid::Cameras, Grid::Insertion, Grid::Repmatch] {
                for cell in cells(g, base) {
                    if !out.iter().any(|c: &Cell| c.name == cell.name) {
                        out.push(cell);
                    }
                }
            }
            out
        }
    }
}

/// Runs every cell (in parallel across cells), returning rows in cell order.
pub fn run(cells: &[Cell], dataset: &Dataset) -> viewgrid_core::Result<Vec<Row>> {
    cells
        .par_iter()
        .map(|cell| {
            let (_, m) = train_on(&cell.config.experiment(), dataset, |_, _| {})?;
            let c = &cell.config;
            Ok(Row {
                cell: cell.name.clone(),
                head: c.model.head.as_str().into(),
                num_cameras: c.model.num_cameras,
                insertion_block: c.model.insertion_block,
                lambda1: c.loss.lambda1,
                lambda2: c.loss.lambda2,
                train_seen: m.accuracy.train_seen,
                test_seen: m.accuracy.test_seen,
                test_unseen: m.accuracy.test_unseen,
            })
        })
        .collect()
}
