//! Command-line front end. Exit codes: 0 success, 2 bad config or input,
//! 3 training divergence, 4 I/O failure or corrupt snapshot.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{export_domain_pair, generate_domain_pair, import_domain_pair};
use crate::error::Result;
use crate::harness::{run_ablation, Experiment, ExperimentConfig, Variant, REPORT_FILE};
use crate::model::read_snapshot_file;
use crate::pool::Workers;

#[derive(Debug, Parser)]
#[command(name = "adastudent", version, about = "Adaptive target sampling with student weight averaging")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one variant and write report.csv, student.abst and aggregate.abst.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Named variant (baseline, sampler-only, aggregation-only, full, full-entropy,
        /// momentum-0.9, momentum-0.5, ema, oracle-alpha).
        #[arg(long)]
        variant: Option<String>,
        /// Dataset directory written by gen-data; generated from the config otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write distribution.csv.
        #[arg(long)]
        dump_distribution: bool,
    },
    /// Run the five ablation variants over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Comma-separated variant names; the ablation set by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the header and parameter statistics of a snapshot file.
    Inspect {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Generate a synthetic domain pair and write it to a directory.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cfg: ExperimentConfig, data: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let mut exp = Experiment::new(cfg)?.with_workers(Workers::from_env());
    if let Some(dir) = data {
        exp = exp.with_data(import_domain_pair(dir)?)?;
    }
    let outcome = exp.run()?;
    let s = outcome.report.summary(exp.config().lastk)?;
    writeln!(
        out,
        "epochs={} final_student_miou={:.4} final_aggregate_miou={:.4} lastk_student_std={:.4} lastk_aggregate_std={:.4}",
        outcome.report.rows.len(),
        s.final_student_miou,
        s.final_aggregate_miou,
        s.lastk_student_std,
        s.lastk_aggregate_std
    )?;
    if let Some(dir) = &exp.config().output_dir {
        writeln!(out, "wrote {}", dir.join(REPORT_FILE).display())?;
    }
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            variant,
            data,
            out: dir,
            dump_distribution,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(name) = variant {
                Variant::from_name(&name)?.apply(&mut cfg);
            }
            cfg.output_dir = Some(dir);
            cfg.dump_distribution |= dump_distribution;
            run(cfg, data.as_deref(), out)
        }
        Command::Ablate {
            config,
            seeds,
            variants,
            out: dir,
        } => {
            let cfg = load_config(&ConfigArgs { config, seed: None })?;
            let variants = if variants.is_empty() {
                Variant::ABLATION.to_vec()
            } else {
                variants.iter().map(|n| Variant::from_name(n)).collect::<Result<_>>()?
            };
            let result = run_ablation(&cfg, &variants, &seeds, Some(&dir), &Workers::from_env())?;
            write!(out, "{}", result.table())?;
            let failed = result.failures().count();
            writeln!(out, "runs={} failed={failed}", result.cells.len())?;
            Ok(())
        }
        Command::Inspect { snapshot } => {
            let snap = read_snapshot_file(&snapshot)?;
            let values = snap.params.as_slice();
            let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
            let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            writeln!(out, "role={}", snap.role.name())?;
            writeln!(out, "index={}", snap.index)?;
            writeln!(out, "params={}", values.len())?;
            writeln!(out, "l2_norm={norm}")?;
            writeln!(out, "max_abs={max}")?;
            Ok(())
        }
        Command::GenData { config, out: dir } => {
            let cfg = load_config(&config)?;
            let shift = crate::data::ShiftConfig {
                seed: cfg.seed,
                ..cfg.shift
            };
            let manifest = export_domain_pair(&generate_domain_pair(&shift)?, &dir)?;
            writeln!(
                out,
                "wrote {} source and {} target images to {}",
                manifest.source_count,
                manifest.target_count,
                dir.display()
            )?;
            Ok(())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
