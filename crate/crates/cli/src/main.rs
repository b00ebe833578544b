//! `fsc`: train, ablate and sweep fixed sub-center models.
//!
//! Exit codes: 0 on success, 2 for invalid configuration or input data,
//! 3 for I/O failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fsc_core::backbone::HeadVariant;
use fsc_core::datagen::load_feature_csv;
use fsc_core::experiment::{
    export_embeddings, run_ablation, run_sweep, run_train, write_mixture, AblationGrid,
    ExperimentConfig, SweepParameter, CONFIG_JSON, DEFAULT_SEEDS,
};
use fsc_core::Error;

#[derive(Parser)]
#[command(
    name = "fsc",
    version,
    about = "Fixed sub-center classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write its run directory.
    Train(Common),
    /// Train the five-cell ablation grid over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Train one model per value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_sweep_param)]
        param: SweepParameter,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Write 3-D PCA embeddings of the test split under a checkpoint.
    ExportEmbeddings {
        /// Run directory holding the checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Feature CSV to embed instead of the configured test split.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "label")]
        label_column: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the train and test splits of a synthetic mixture as CSV.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the mixture seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    head: Option<HeadVariant>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn parse_sweep_param(s: &str) -> Result<SweepParameter, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::from_json_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = load_config(self.config.as_deref())?;
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.head {
            t.head_variant = v;
        }
        if let Some(v) = self.s {
            t.s = v;
        }
        if let Some(v) = self.sigma2 {
            t.sigma2 = v;
        }
        if let Some(v) = self.beta {
            t.beta = v;
        }
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.resolved()
    }
}

fn parse_list<T: std::str::FromStr>(what: &str, text: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Contract(format!("invalid {what} {s:?}")))
        })
        .collect()
}

fn seeds(text: Option<&str>) -> Result<Vec<u64>, Error> {
    match text {
        Some(t) => parse_list("seed", t),
        None => Ok(DEFAULT_SEEDS.to_vec()),
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let out = run_train(&cfg)?;
            println!("run directory: {}", out.dir.display());
            println!("test top1: {:.4}", out.report.top1);
            println!("bank hash: {}", out.bank_hash);
        }
        Command::Ablate { common, seeds: s } => {
            let cfg = common.resolve()?;
            let grid = AblationGrid {
                seeds: seeds(s.as_deref())?,
                ..AblationGrid::standard(cfg.train.beta)
            };
            let rows = run_ablation(&cfg, &grid)?;
            println!("{:<28} {:>9} {:>8}", "cell", "mean_top1", "std");
            for r in rows {
                println!("{:<28} {:>9.4} {:>8.4}", r.label, r.mean_top1, r.std_top1);
            }
            println!("summary: {}", cfg.out_dir.join("ablation.csv").display());
        }
        Command::Sweep {
            common,
            param,
            values,
            seeds: s,
        } => {
            let cfg = common.resolve()?;
            let values: Vec<f64> = parse_list("value", &values)?;
            let rows = run_sweep(&cfg, param, &values, &seeds(s.as_deref())?)?;
            for r in rows {
                println!(
                    "{}={:<10} mean_top1 {:.4} std {:.4}",
                    param.as_str(),
                    r.value,
                    r.mean_top1,
                    r.std_top1
                );
            }
            println!(
                "summary: {}",
                cfg.out_dir
                    .join(format!("sweep_{}.csv", param.as_str()))
                    .display()
            );
        }
        Command::ExportEmbeddings {
            checkpoint,
            data,
            label_column,
            config,
            out,
        } => {
            let dataset = match data {
                Some(path) => load_feature_csv(&path, &label_column)?,
                None => {
                    let saved = checkpoint.join(CONFIG_JSON);
                    let cfg_path = config.or_else(|| saved.is_file().then_some(saved));
                    load_config(cfg_path.as_deref())?.load_data()?.1
                }
            };
            let rows = export_embeddings(&checkpoint, &dataset, &out)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::GenData { config, seed, out } => {
            let cfg = load_config(config.as_deref())?.resolved()?;
            let Some(mut spec) = cfg.mixture else {
                return Err(Error::Contract(
                    "gen-data needs a mixture data source".into(),
                ));
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (train, test) = write_mixture(&spec, &out)?;
            println!("wrote {} and {}", train.display(), test.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
