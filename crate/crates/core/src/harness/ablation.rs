use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Experiment, ExperimentConfig, Summary, Variant};
use crate::error::{Error, Result};
use crate::pool::Workers;

pub const SUMMARY_HEADER: &str =
    "variant,seed,final_student_miou,final_aggregate_miou,lastk_student_std,lastk_aggregate_std";

/// Result of one (variant, seed) run. Failed runs keep their error message.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: std::result::Result<Summary, String>,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub cells: Vec<AblationCell>,
}

impl AblationResult {
    pub fn succeeded(&self) -> impl Iterator<Item = (&AblationCell, &Summary)> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().ok().map(|s| (c, s)))
    }

    pub fn failures(&self) -> impl Iterator<Item = &AblationCell> {
        self.cells.iter().filter(|c| c.outcome.is_err())
    }

    /// Summaries of `variant` in seed order.
    pub fn summaries(&self, variant: Variant) -> Vec<Summary> {
        self.succeeded()
            .filter(|(c, _)| c.variant == variant)
            .map(|(_, s)| *s)
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for (c, s) in self.succeeded() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                c.variant.name(),
                c.seed,
                s.final_student_miou,
                s.final_aggregate_miou,
                s.lastk_student_std,
                s.lastk_aggregate_std
            )
            .expect("writing to a string");
        }
        out
    }

    /// Seed-averaged final mIoU and last-k standard deviation per variant.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<18} {:>6} {:>14} {:>14} {:>12} {:>12}\n",
            "variant", "runs", "student_miou", "aggregate_miou", "student_std", "aggregate_std"
        );
        let mut seen: Vec<Variant> = Vec::new();
        for c in &self.cells {
            if !seen.contains(&c.variant) {
                seen.push(c.variant);
            }
        }
        for v in seen {
            let rows = self.summaries(v);
            if rows.is_empty() {
                writeln!(out, "{:<18} {:>6} (all runs failed)", v.name(), 0).expect("writing to a string");
                continue;
            }
            let n = rows.len() as f64;
            let avg = |f: fn(&Summary) -> f64| rows.iter().map(f).sum::<f64>() / n;
            writeln!(
                out,
                "{:<18} {:>6} {:>14.4} {:>14.4} {:>12.4} {:>12.4}",
                v.name(),
                rows.len(),
                avg(|s| s.final_student_miou),
                avg(|s| s.final_aggregate_miou),
                avg(|s| s.lastk_student_std),
                avg(|s| s.lastk_aggregate_std)
            )
            .expect("writing to a string");
        }
        out
    }
}

/// Runs every variant under every seed. Runs are spread over `workers`; each
/// run is single-threaded, so results do not depend on the worker count.
///
/// With `out_dir` set, each run writes to `<out_dir>/<variant>/seed-<seed>/`,
/// and `summary.csv` plus `failures.csv` are written at the top level.
pub fn run_ablation(
    base: &ExperimentConfig,
    variants: &[Variant],
    seeds: &[u64],
    out_dir: Option<&Path>,
    workers: &Workers,
) -> Result<AblationResult> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    base.validate()?;
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let cells = workers.map(jobs.len(), |i| {
        let (variant, seed) = jobs[i];
        let mut cfg = base.clone();
        variant.apply(&mut cfg);
        cfg.seed = seed;
        cfg.output_dir = out_dir.map(|d| d.join(variant.name()).join(format!("seed-{seed}")));
        let outcome = Experiment::new(cfg.clone())
            .and_then(|e| e.run())
            .and_then(|o| o.report.summary(cfg.lastk))
            .map_err(|e| e.to_string());
        AblationCell { variant, seed, outcome }
    });
    let result = AblationResult { cells };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("summary.csv"), result.summary_csv())?;
        let mut failures = String::from("variant,seed,error\n");
        for c in result.failures() {
            let msg = c.outcome.as_ref().err().map_or("", |s| s.as_str()).replace(['\n', ','], " ");
            writeln!(failures, "{},{},{}", c.variant.name(), c.seed, msg).expect("writing to a string");
        }
        fs::write(dir.join("failures.csv"), failures)?;
    }
    Ok(result)
}
