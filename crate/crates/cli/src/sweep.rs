//! Parameter sweeps written as CSV matrices.

use std::fs;

use anyhow::{bail, Context, Result};
use hsphr::io::write_pgm;
use hsphr::{NoiseKind, RealImage};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Layout};
use crate::kv::KvDoc;
use crate::run::{execute, OutputDir, MANIFEST};

pub const MATRIX: &str = "sweep.csv";
pub const HEATMAP: &str = "heatmap.pgm";
pub const LOG: &str = "sweep.log";

/// Side of one matrix cell in the heatmap, in pixels.
const HEATMAP_CELL: usize = 8;

pub struct SweepTable {
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

/// One experiment per cell; what it reports depends on the layout.
fn cell_configs(cfg: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let w = &cfg.sweep;
    let mut cells = Vec::new();
    match w.layout {
        Layout::ChannelsByExperiments => {
            for &k in &w.channels {
                for &t in &w.experiments {
                    let mut c = cfg.clone();
                    c.scenario.channels = k;
                    c.scenario.experiments = t;
                    cells.push(c);
                }
            }
        }
        Layout::SnrByWavelength | Layout::SnrByIteration => {
            if cfg.scenario.noise.kind == NoiseKind::None {
                bail!("the {} layout needs a noise kind", w.layout);
            }
            for &snr in &w.snr_db {
                let mut c = cfg.clone();
                c.scenario.noise.snr_db = snr;
                cells.push(c);
            }
        }
    }
    for c in &cells {
        c.validate().with_context(|| {
            format!(
                "sweep cell K={} T={} snr_db={}",
                c.scenario.channels, c.scenario.experiments, c.scenario.noise.snr_db
            )
        })?;
    }
    Ok(cells)
}

/// Values reported by one cell, or the reason it failed.
fn cell_values(layout: Layout, cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let (_, _, out) = execute(cfg)?;
    let trace = out.trace.context("no error trace")?;
    Ok(match layout {
        Layout::ChannelsByExperiments => vec![trace.final_mean().context("no iterations")?],
        Layout::SnrByWavelength => trace.final_channels().context("no iterations")?.to_vec(),
        Layout::SnrByIteration => trace.means(),
    })
}

pub fn compute(cfg: &ExperimentConfig) -> Result<(SweepTable, Vec<String>)> {
    cfg.validate()?;
    let w = &cfg.sweep;
    let cells = cell_configs(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(w.workers)
        .build()
        .context("building the worker pool")?;
    let results: Vec<Result<Vec<f64>>> = pool.install(|| cells.par_iter().map(|c| cell_values(w.layout, c)).collect());

    let width = match w.layout {
        Layout::ChannelsByExperiments => 1,
        Layout::SnrByWavelength => cfg.scenario.channels,
        Layout::SnrByIteration => cfg.solver.iterations,
    };
    let mut log = Vec::new();
    let mut values = Vec::with_capacity(results.len());
    for (c, r) in cells.iter().zip(results) {
        match r {
            Ok(v) => values.push(v),
            Err(e) => {
                let msg = format!(
                    "cell K={} T={} snr_db={} failed: {e:#}",
                    c.scenario.channels, c.scenario.experiments, c.scenario.noise.snr_db
                );
                eprintln!("{msg}");
                log.push(msg);
                values.push(vec![f64::NAN; width]);
            }
        }
    }

    let table = match w.layout {
        Layout::ChannelsByExperiments => SweepTable {
            corner: "K\\T".into(),
            columns: w.experiments.iter().map(usize::to_string).collect(),
            rows: w
                .channels
                .iter()
                .zip(values.chunks(w.experiments.len()))
                .map(|(k, row)| (k.to_string(), row.iter().map(|v| v[0]).collect()))
                .collect(),
        },
        Layout::SnrByWavelength => SweepTable {
            corner: "snr_db\\lambda_nm".into(),
            columns: cfg.scenario.grid()?.wavelengths().iter().map(|l| (l * 1e9).to_string()).collect(),
            rows: w.snr_db.iter().map(|s| s.to_string()).zip(values).collect(),
        },
        Layout::SnrByIteration => SweepTable {
            corner: "snr_db\\iteration".into(),
            columns: (1..=cfg.solver.iterations).map(|s| s.to_string()).collect(),
            rows: w.snr_db.iter().map(|s| s.to_string()).zip(values).collect(),
        },
    };
    Ok((table, log))
}

/// Matrix rendered with a fixed gray ramp: black at the smallest finite
/// value, white at the largest; NaN cells are black.
fn heatmap(table: &SweepTable) -> (RealImage, f64, f64) {
    let finite = table.rows.iter().flat_map(|(_, r)| r).copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let (rows, cols) = (table.rows.len(), table.columns.len());
    let img = RealImage::from_fn(rows * HEATMAP_CELL, cols * HEATMAP_CELL, |i| {
        let (y, x) = (i / (cols * HEATMAP_CELL), i % (cols * HEATMAP_CELL));
        let v = table.rows[y / HEATMAP_CELL].1[x / HEATMAP_CELL];
        if v.is_finite() {
            v
        } else {
            lo
        }
    });
    (img, lo, hi)
}

pub fn run_sweep(cfg: &ExperimentConfig, force: bool) -> Result<SweepTable> {
    cfg.validate()?;
    let mut out_dir = OutputDir::prepare(&cfg.out, force)?;
    let (table, log) = compute(cfg)?;

    let mut w = csv::Writer::from_path(out_dir.file(MATRIX))?;
    let header: Vec<&str> = std::iter::once(table.corner.as_str())
        .chain(table.columns.iter().map(String::as_str))
        .collect();
    w.write_record(&header)?;
    for (label, row) in &table.rows {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut doc: KvDoc = cfg.to_doc();
    doc.set("run", "command", "sweep");
    doc.set("run", "version", env!("CARGO_PKG_VERSION"));
    doc.set("run", "failed_cells", log.len());
    if !log.is_empty() {
        fs::write(out_dir.file(LOG), log.join("\n") + "\n")?;
    }
    let (img, lo, hi) = heatmap(&table);
    if lo.is_finite() {
        write_pgm(out_dir.file(HEATMAP), &img, lo, hi)?;
        doc.set("heatmap", "file", HEATMAP);
        doc.set("heatmap", "colormap", "gray, linear, black = min, white = max, NaN = black");
        doc.set("heatmap", "cell_pixels", HEATMAP_CELL);
        doc.set("heatmap", "min", lo);
        doc.set("heatmap", "max", hi);
    }
    fs::write(out_dir.file(MANIFEST), doc.render())?;
    out_dir.commit();
    Ok(table)
}
