//! Per-epoch metrics table.
//!
//! `report.csv` starts with a `# config: <json>` comment line followed by a
//! header and one row per epoch. Readers skip `#` lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::trajectory_stats;
use crate::error::{Error, Result};

pub const CONFIG_PREFIX: &str = "# config: ";

pub const REPORT_HEADER: [&str; 9] = [
    "epoch",
    "iter",
    "variant",
    "lr",
    "student_src_miou",
    "student_tgt_miou",
    "aggregate_tgt_miou",
    "dist_entropy",
    "mean_vkl",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epoch: usize,
    /// Global iteration count at the end of the epoch, warmup included.
    pub iter: usize,
    pub variant: String,
    /// Learning rate of the last iteration in the epoch.
    pub lr: f64,
    pub student_src_miou: f64,
    pub student_tgt_miou: f64,
    pub aggregate_tgt_miou: f64,
    /// Entropy of the sampling distribution used during the epoch.
    pub dist_entropy: f64,
    /// Mean prediction-variance score of the aggregate on the target set.
    pub mean_vkl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub config_echo: String,
    pub rows: Vec<ReportRow>,
}

/// Last-k statistics of one report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub lastk: usize,
    pub final_student_miou: f64,
    pub final_aggregate_miou: f64,
    pub lastk_student_mean: f64,
    pub lastk_student_std: f64,
    pub lastk_aggregate_mean: f64,
    pub lastk_aggregate_std: f64,
}

impl MetricsReport {
    pub fn student_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.student_tgt_miou).collect()
    }

    pub fn aggregate_series(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.aggregate_tgt_miou).collect()
    }

    /// Statistics over the last `min(k, rows)` epochs.
    pub fn summary(&self, k: usize) -> Result<Summary> {
        let last = self
            .rows
            .last()
            .ok_or_else(|| Error::domain("report has no rows"))?;
        let k = k.min(self.rows.len());
        let (sm, ss) = trajectory_stats(&self.student_series(), k)?;
        let (am, as_) = trajectory_stats(&self.aggregate_series(), k)?;
        Ok(Summary {
            lastk: k,
            final_student_miou: last.student_tgt_miou,
            final_aggregate_miou: last.aggregate_tgt_miou,
            lastk_student_mean: sm,
            lastk_student_std: ss,
            lastk_aggregate_mean: am,
            lastk_aggregate_std: as_,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CONFIG_PREFIX}{}", self.config_echo)?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(REPORT_HEADER)?;
        for row in &self.rows {
            csv.write_record([
                row.epoch.to_string(),
                row.iter.to_string(),
                row.variant.clone(),
                row.lr.to_string(),
                row.student_src_miou.to_string(),
                row.student_tgt_miou.to_string(),
                row.aggregate_tgt_miou.to_string(),
                row.dist_entropy.to_string(),
                row.mean_vkl.to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config_echo = text
            .lines()
            .find_map(|l| l.strip_prefix(CONFIG_PREFIX))
            .unwrap_or_default()
            .to_string();
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().ne(REPORT_HEADER) {
            return Err(Error::Config(format!("unexpected report header {headers:?}")));
        }
        let rows = reader.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(MetricsReport { config_echo, rows })
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
