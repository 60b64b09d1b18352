use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use safeflow_core::trajectory::Method;

#[derive(Debug, Parser)]
#[command(name = "safeflow", version, about = "Safe flow-matching path planning")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed of the run, dataset or training stream (command dependent).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps; defaults to all cores.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Run config file (TOML or JSON), applied before command-line flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root directory for every output.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an environment and a reference dataset.
    Generate(GenerateArgs),
    /// Train an MLP field with the CFM loss on the mixture fitted to a dataset.
    Train(TrainArgs),
    /// Plan one path and write its run directory.
    Plan(PlanArgs),
    /// Run a grid of configurations over many seeds.
    Sweep(SweepArgs),
    /// Re-check the certificate of a run directory.
    Verify(VerifyArgs),
    /// Aggregate run directories into one table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Built-in environment name or environment file.
    #[arg(default_value = "corridor")]
    pub environment: String,
    /// Number of paths.
    #[arg(default_value_t = 1000)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset file written by `generate`.
    #[arg(long, default_value = "datasets/corridor.json")]
    pub dataset: PathBuf,
    /// Mixture components fitted to the dataset.
    #[arg(long, default_value_t = 4)]
    pub components: usize,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "128,128")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 5000)]
    pub steps: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Probes used for the field distance to the exact mixture field.
    #[arg(long, default_value_t = 512)]
    pub probes: usize,
    /// Steps between field-distance evaluations in the log.
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    /// Checkpoint name under `checkpoints/`.
    #[arg(long, default_value = "mlp")]
    pub name: String,
}

#[derive(Debug, Args, Default)]
pub struct PlanOverrides {
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long = "t-pred")]
    pub t_pred: Option<usize>,
    #[arg(long = "t-corr")]
    pub t_corr: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Built-in environment name or environment file.
    #[arg(long)]
    pub environment: Option<String>,
    /// Use this dataset file instead of generating one.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Drive the flow with a trained checkpoint instead of the exact mixture.
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Disable the safety filter in every phase.
    #[arg(long)]
    pub no_safety: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub overrides: PlanOverrides,
    /// Measure wall-clock time per step (makes record.csv non-reproducible).
    #[arg(long)]
    pub timing: bool,
    /// Run directory name under `runs/`; derived from the config by default.
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Experiment plan file (TOML or JSON); flags below override its axes.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long = "t-pred", value_delimiter = ',')]
    pub t_pred: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Seed list: `a..b` (half open) or comma separated values.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub environment: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Output name under `sweeps/`.
    #[arg(long, default_value = "sweep")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub run_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, or directories containing run directories.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parses `a..b` or `a,b,c`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("seed range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("seed range end: {e}"))?;
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|e| format!("seed {x:?}: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4, 7").unwrap(), vec![4, 7]);
        assert!(parse_seeds("").unwrap().is_empty());
        assert!(parse_seeds("3..1").unwrap().is_empty());
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
