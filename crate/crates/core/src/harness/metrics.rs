use super::config::MetricsFormat;
use crate::error::{Error, Result};
use crate::transport::Phase;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const CSV_HEADER: &str =
    "iter,objective,phase,rank,words_sent,words_recv,msgs,selected_k,exact_k,xi,wall_ns";

/// One (iteration, phase, rank) cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: u64,
    pub objective: Option<f64>,
    pub phase: Phase,
    pub rank: usize,
    pub words_sent: u64,
    pub words_recv: u64,
    pub msgs: u64,
    pub selected_k: u64,
    pub exact_k: u64,
    pub xi: Option<f64>,
    pub wall_ns: u64,
}

pub fn write_metrics<W: Write>(rows: &[MetricsRow], out: W, format: MetricsFormat) -> Result<()> {
    match format {
        MetricsFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in rows {
                w.serialize(r)?;
            }
            if rows.is_empty() {
                w.write_record(CSV_HEADER.split(','))?;
            }
            w.flush()?;
        }
        MetricsFormat::Jsonl => {
            let mut w = BufWriter::new(out);
            for r in rows {
                serde_json::to_writer(&mut w, r)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Writes `rows` to `path`.
pub fn emit_metrics(rows: &[MetricsRow], path: &Path, format: MetricsFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::invalid("no metrics rows to write"));
    }
    write_metrics(rows, File::create(path)?, format)
}

pub fn read_metrics(path: &Path, format: MetricsFormat) -> Result<Vec<MetricsRow>> {
    let file = File::open(path)?;
    match format {
        MetricsFormat::Csv => csv::Reader::from_reader(file)
            .deserialize()
            .map(|r| r.map_err(Error::from))
            .collect(),
        MetricsFormat::Jsonl => BufReader::new(file)
            .lines()
            .filter(|l| !matches!(l, Ok(s) if s.is_empty()))
            .map(|l| Ok(serde_json::from_str(&l?)?))
            .collect(),
    }
}
