//! Sweep driver: the cartesian grid over lambda / d_equi / intermediates /
//! transform, dedup by config hash, per-cell pretrain + eval with failures
//! recorded rather than fatal.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use equilearn::config::RunConfig;
use equilearn::data::ingest;
use equilearn::error::{Error, Result};
use equilearn::eval::{eval_equivariance, linear_probe, FrozenEncoder, R2Report};
use equilearn::trainer::{pretrain, TrainConfig, TransformChoice};

#[derive(Debug, Clone)]
struct Cell {
    train: TrainConfig,
    hash: String,
}

#[derive(Debug, Clone)]
struct CellResult {
    cell: Cell,
    mean_r2: Option<f64>,
    probe_acc: Option<f64>,
    status: String,
    out_dir: PathBuf,
}

fn config_hash(cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("train config serializes");
    let digest = Sha256::digest(&json);
    hex_prefix(&digest, 12)
}

fn hex_prefix(bytes: &[u8], n: usize) -> String {
    bytes.iter().flat_map(|b| [b >> 4, b & 0xf]).take(n).map(|h| char::from_digit(h as u32, 16).unwrap()).collect()
}

fn build_cells(cfg: &RunConfig) -> Result<Vec<Cell>> {
    let base = &cfg.train;
    let lambdas = if cfg.sweep.lambda.is_empty() { vec![base.lambda] } else { cfg.sweep.lambda.clone() };
    let d_equis = if cfg.sweep.d_equi.is_empty() { vec![base.d_equi] } else { cfg.sweep.d_equi.clone() };
    let ks = if cfg.sweep.intermediates.is_empty() {
        vec![base.intermediates]
    } else {
        cfg.sweep.intermediates.clone()
    };
    let transforms: Vec<TransformChoice> = if cfg.sweep.transform.is_empty() {
        vec![base.transform]
    } else {
        cfg.sweep.transform.iter().map(|t| TransformChoice::parse(t)).collect::<Result<_>>()?
    };
    let mut seen = HashSet::new();
    let mut cells = Vec::new();
    for &lambda in &lambdas {
        for &d_equi in &d_equis {
            for &k in &ks {
                for &transform in &transforms {
                    let mut train = base.clone();
                    train.lambda = lambda;
                    train.d_equi = d_equi;
                    train.intermediates = k;
                    train.transform = transform;
                    train.validate()?;
                    let hash = config_hash(&train);
                    if seen.insert(hash.clone()) {
                        cells.push(Cell { train, hash });
                    }
                }
            }
        }
    }
    Ok(cells)
}

fn run_cell(cfg: &RunConfig, cell: &Cell, sweep_dir: &Path) -> CellResult {
    let out_dir = sweep_dir.join(format!("cell_{}", cell.hash));
    let attempt = || -> Result<(f64, Option<f64>)> {
        let dataset = ingest(Path::new(&cfg.dataset_path))?;
        let outcome = pretrain(&cell.train, &dataset, &out_dir, None)?;
        let frozen = FrozenEncoder::from_checkpoint(&outcome.final_checkpoint)?;
        let mut entries = Vec::new();
        for kind in cfg.parsed_eval_kinds()? {
            entries.push(eval_equivariance(&frozen, &dataset, kind, &cfg.probe)?);
        }
        let report = R2Report::from_entries(entries, cfg.probe.clone());
        std::fs::write(
            out_dir.join("r2_report.json"),
            serde_json::to_vec_pretty(&report).map_err(Error::from)?,
        )?;
        let acc = if dataset.labels.is_some() {
            Some(linear_probe(&frozen, &dataset, &cfg.linear_probe)?)
        } else {
            None
        };
        Ok((report.mean_r2, acc))
    };
    match attempt() {
        Ok((mean_r2, probe_acc)) => CellResult {
            cell: cell.clone(),
            mean_r2: Some(mean_r2),
            probe_acc,
            status: "ok".to_string(),
            out_dir,
        },
        Err(e) => CellResult {
            cell: cell.clone(),
            mean_r2: None,
            probe_acc: None,
            status: format!("error: {e}"),
            out_dir,
        },
    }
}

pub fn run_sweep(cfg: &RunConfig, threads: usize) -> Result<()> {
    let cells = build_cells(cfg)?;
    if cells.is_empty() {
        return Err(Error::Config("sweep grid is empty".to_string()));
    }
    let sweep_dir = PathBuf::from(&cfg.out_dir).join("sweep");
    std::fs::create_dir_all(&sweep_dir)?;
    println!("sweep: {} unique cells, {} thread(s)", cells.len(), threads);

    let mut results: Vec<Option<CellResult>> = vec![None; cells.len()];
    if threads <= 1 {
        for (i, cell) in cells.iter().enumerate() {
            println!("[{}/{}] lambda={} d_equi={} K={} transform={}", i + 1, cells.len(),
                cell.train.lambda, cell.train.d_equi, cell.train.intermediates, cell.train.transform);
            results[i] = Some(run_cell(cfg, cell, &sweep_dir));
        }
    } else {
        // Static round-robin assignment keeps cell/rng isolation and a
        // deterministic result order regardless of scheduling.
        std::thread::scope(|scope| {
            let chunks: Vec<Vec<usize>> = (0..threads)
                .map(|t| (t..cells.len()).step_by(threads).collect())
                .collect();
            let mut handles = Vec::new();
            for chunk in chunks {
                let cells = &cells;
                let sweep_dir = &sweep_dir;
                handles.push(scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|i| (i, run_cell(cfg, &cells[i], sweep_dir)))
                        .collect::<Vec<_>>()
                }));
            }
            for h in handles {
                for (i, r) in h.join().expect("sweep worker panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }

    let mut csv = String::from("lambda,d_equi,intermediates,transform,mean_r2,probe_accuracy,status,out_dir\n");
    let mut failures = 0usize;
    for r in results.into_iter().flatten() {
        let mean = r.mean_r2.map(|v| v.to_string()).unwrap_or_default();
        let acc = r.probe_acc.map(|v| v.to_string()).unwrap_or_default();
        if r.status != "ok" {
            failures += 1;
        }
        csv.push_str(&format!(
            "{},{},{},{},{mean},{acc},{},{}\n",
            r.cell.train.lambda,
            r.cell.train.d_equi,
            r.cell.train.intermediates,
            r.cell.train.transform,
            r.status.replace(',', ";"),
            r.out_dir.display()
        ));
    }
    let csv_path = sweep_dir.join("sweep.csv");
    std::fs::write(&csv_path, csv)?;
    println!("sweep finished: results at {} ({failures} failed cells)", csv_path.display());
    Ok(())
}
