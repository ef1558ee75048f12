//! Per-step metrics CSV. Floats are written with the shortest representation
//! that round-trips, so rows can be re-parsed and re-checked bit-exactly.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;

pub const METRICS_HEADER: &str = "step,lr,l_ssl,l_inv_term,l_var_term,l_cov_term,l_recon,l_total";

pub(crate) struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn open(path: &Path, append: bool) -> Result<MetricsWriter> {
        let exists = path.exists();
        let file = OpenOptions::new()
            .create(true)
            .append(append)
            .write(true)
            .truncate(!append)
            .open(path)?;
        let mut out = BufWriter::new(file);
        if !append || !exists {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(MetricsWriter { out })
    }

    pub fn append(&mut self, step: usize, lr: f64, b: &LossBreakdown) -> Result<()> {
        writeln!(
            self.out,
            "{step},{lr},{},{},{},{},{},{}",
            b.l_ssl, b.inv_term, b.var_term, b.cov_term, b.l_recon, b.l_total
        )?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub lr: f64,
    pub l_ssl: f32,
    pub l_inv_term: f32,
    pub l_var_term: f32,
    pub l_cov_term: f32,
    pub l_recon: f32,
    pub l_total: f32,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != METRICS_HEADER {
                return Err(Error::Dataset(format!("unexpected metrics header: {line}")));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Dataset(format!("bad metrics row {i}: {line}")));
        }
        let parse_err = |f: &str| Error::Dataset(format!("bad number '{f}' in metrics row {i}"));
        rows.push(MetricsRow {
            step: fields[0].parse().map_err(|_| parse_err(fields[0]))?,
            lr: fields[1].parse().map_err(|_| parse_err(fields[1]))?,
            l_ssl: fields[2].parse().map_err(|_| parse_err(fields[2]))?,
            l_inv_term: fields[3].parse().map_err(|_| parse_err(fields[3]))?,
            l_var_term: fields[4].parse().map_err(|_| parse_err(fields[4]))?,
            l_cov_term: fields[5].parse().map_err(|_| parse_err(fields[5]))?,
            l_recon: fields[6].parse().map_err(|_| parse_err(fields[6]))?,
            l_total: fields[7].parse().map_err(|_| parse_err(fields[7]))?,
        });
    }
    Ok(rows)
}
