//! `feddadil`: generate benchmarks, run federated dictionary learning with
//! its baselines, sweep hyper-parameters and distill the target domain.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 1 on runtime
//! failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use feddadil_core::adaptation::LabelMode;
use feddadil_core::datasets::SyntheticConfig;
use feddadil_core::experiment::{
    distill_sweep, generate, run_experiment, sweep, write_csv, write_run_outputs,
    AdaptationMode, BenchmarkSource, ExperimentConfig, SweepAxis,
};
use feddadil_core::Error;

#[derive(Parser)]
#[command(name = "feddadil", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark as per-domain CSV files plus a manifest.
    Generate(GenerateArgs),
    /// Train the baselines and the federated dictionary, then adapt.
    Run(RunArgs),
    /// Run a grid over E, K, n and n_b and write one CSV row per cell.
    Sweep(SweepArgs),
    /// Summarize the target with n_c · SPC points for each SPC.
    Distill(DistillArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Axis and values, e.g. `E=1,2,4`; repeat for a cross product.
    #[arg(long = "axis", required = true, value_parser = parse_axis)]
    axes: Vec<(SweepAxis, Vec<usize>)>,
    /// Output CSV (default: <output_dir>/sweep.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    common: Common,
    /// Samples per class.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10, 20])]
    spc: Vec<usize>,
    /// Output CSV (default: <output_dir>/distill.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    R,
    E,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Soft,
    Hard,
}

/// Flags overriding fields of the JSON config.
#[derive(Args)]
struct Common {
    /// JSON experiment config; absent fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the benchmark described by this manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory for results, transcripts and CSVs.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated root seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Atoms K.
    #[arg(long)]
    atoms: Option<usize>,
    /// Points per atom n.
    #[arg(long)]
    atom_size: Option<usize>,
    /// Mini-batch size n_b.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Local epochs per round E.
    #[arg(long)]
    epochs: Option<usize>,
    /// Communication rounds R.
    #[arg(long)]
    rounds: Option<usize>,
    /// Atom step size.
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    /// Step size for the barycentric coordinates.
    #[arg(long, allow_negative_numbers = true)]
    alpha_eta: Option<f64>,
    /// Weight of the label term in the transport cost.
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    labels: Option<LabelArg>,
    /// Skip the FedAVG baseline.
    #[arg(long)]
    no_fedavg: bool,
    /// Reference model parameter count for the communication ratio.
    #[arg(long)]
    reference_parameters: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.manifest {
            cfg.benchmark = BenchmarkSource::Manifest { path: p.clone() };
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag.clone() { cfg.$field = v; })*
            };
        }
        set!(
            output_dir => output_dir,
            seeds => seeds,
            atoms => n_atoms,
            atom_size => atom_size,
            batch_size => batch_size,
            epochs => epochs,
            rounds => rounds,
            eta => eta,
            alpha_eta => alpha_eta,
            beta => beta
        );
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::R => AdaptationMode::Reconstruction,
                ModeArg::E => AdaptationMode::Ensemble,
                ModeArg::Both => AdaptationMode::Both,
            };
        }
        if let Some(l) = self.labels {
            cfg.label_mode = match l {
                LabelArg::Soft => LabelMode::Soft,
                LabelArg::Hard => LabelMode::Hard,
            };
        }
        if self.no_fedavg {
            cfg.fedavg = false;
        }
        if self.reference_parameters.is_some() {
            cfg.reference_parameters = self.reference_parameters;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_axis(s: &str) -> Result<(SweepAxis, Vec<usize>), String> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| format!("expected AXIS=v1,v2,…, got {s:?}"))?;
    let axis: SweepAxis = name.parse().map_err(|e: Error| e.to_string())?;
    let values = values
        .split(',')
        .filter(|v| !v.is_empty())
        .map(|v| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err(format!("axis {} has no values", axis.name()));
    }
    Ok((axis, values))
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidParameter { .. } => Failure::Config(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn synthetic_of(cfg: &ExperimentConfig) -> Result<SyntheticConfig, Failure> {
    match &cfg.benchmark {
        BenchmarkSource::Synthetic(s) => Ok(s.clone()),
        _ => Err(Failure::Config(anyhow::anyhow!(
            "generate needs a synthetic benchmark in the config"
        ))),
    }
}

fn csv_path(explicit: &Option<PathBuf>, cfg: &ExperimentConfig, default: &str) -> PathBuf {
    explicit
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(default))
}

fn announce(path: &Path) {
    println!("{}", path.display());
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => {
            let cfg = a.common.resolve()?;
            let synthetic = synthetic_of(&cfg)?;
            let manifest = generate(&synthetic, cfg.seeds[0], &cfg.output_dir)
                .with_context(|| format!("writing benchmark to {}", cfg.output_dir.display()))?;
            announce(&manifest);
        }
        Command::Run(a) => {
            let cfg = a.common.resolve()?;
            let (results, transcripts) = run_experiment(&cfg)?;
            let path = write_run_outputs(&cfg, &results, &transcripts)
                .with_context(|| format!("writing results to {}", cfg.output_dir.display()))?;
            let m = &results.mean;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.4}", x));
            eprintln!(
                "fedavg_acc={} dadil_r_acc={} dadil_e_acc={}",
                fmt(m.fedavg_acc),
                fmt(m.dadil_r_acc),
                fmt(m.dadil_e_acc)
            );
            announce(&path);
        }
        Command::Sweep(a) => {
            let cfg = a.common.resolve()?;
            let rows = sweep(&cfg, &a.axes)?;
            let path = csv_path(&a.csv, &cfg, "sweep.csv");
            write_csv(&path, &rows).with_context(|| format!("writing {}", path.display()))?;
            announce(&path);
        }
        Command::Distill(a) => {
            let cfg = a.common.resolve()?;
            let rows = distill_sweep(&cfg, &a.spc)?;
            let path = csv_path(&a.csv, &cfg, "distill.csv");
            write_csv(&path, &rows).with_context(|| format!("writing {}", path.display()))?;
            announce(&path);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("{e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!(parse_axis("E=1,2,4").unwrap(), (SweepAxis::E, vec![1, 2, 4]));
        assert_eq!(parse_axis("n_b=8").unwrap(), (SweepAxis::Nb, vec![8]));
        assert!(parse_axis("E=").is_err());
        assert!(parse_axis("Z=1").is_err());
        assert!(parse_axis("E").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
