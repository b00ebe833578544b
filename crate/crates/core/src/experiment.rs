//! Reproducible runs: single training runs, ablation grids and
//! one-parameter sweeps, each writing its artifacts to a run directory.
//!
//! Run directory layout (`run_train`):
//!
//! | file | content |
//! |------|---------|
//! | `config.json` | resolved [`ExperimentConfig`] |
//! | `checkpoint.json`, `checkpoint.bin` | model, see [`crate::checkpoint`] |
//! | `bank.json`, `bank.bin` | sub-center bank with its content hash |
//! | `losses.csv`, `losses.jsonl` | one record per optimizer step |
//! | `eval_report.json` | [`EvalReport`] on the test split |

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbone::{HeadVariant, TrainConfig};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::datagen::{generate_mixture, load_feature_csv, LabeledDataset, MixtureSpec, Split};
use crate::error::{ensure, Error, Result};
use crate::metrics::{embedding_export, EvalReport};
use crate::train::{fit, BatchRecord};

pub const CONFIG_JSON: &str = "config.json";
pub const LOSSES_CSV: &str = "losses.csv";
pub const LOSSES_JSONL: &str = "losses.jsonl";
pub const REPORT_JSON: &str = "eval_report.json";

/// Seeds used for aggregate results unless told otherwise.
pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Pre-split feature files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    #[serde(default = "default_label_column")]
    pub label_column: String,
}

fn default_label_column() -> String {
    "label".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub train: TrainConfig,
    /// Synthetic data; the default mixture is used when neither source is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<CsvSource>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_run_label")]
    pub label: String,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_run_label() -> String {
    "run".into()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            mixture: None,
            csv: None,
            out_dir: default_out_dir(),
            label: default_run_label(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Fills in the default mixture and checks the configuration.
    pub fn resolved(&self) -> Result<Self> {
        ensure!(
            self.mixture.is_none() || self.csv.is_none(),
            "config sets both `mixture` and `csv`; choose one data source"
        );
        ensure!(!self.label.is_empty(), "run label must not be empty");
        let mut out = self.clone();
        if out.csv.is_none() && out.mixture.is_none() {
            out.mixture = Some(MixtureSpec::default());
        }
        if let Some(m) = &out.mixture {
            m.validate()?;
        }
        out.train.validate()?;
        Ok(out)
    }

    /// Train and test splits of the configured data source.
    pub fn load_data(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        let cfg = self.resolved()?;
        if let Some(src) = &cfg.csv {
            let mut train = load_feature_csv(&src.train, &src.label_column)?;
            let mut test = load_feature_csv(&src.test, &src.label_column)?;
            ensure!(
                train.dim() == test.dim(),
                "train file has {} features, test file {}",
                train.dim(),
                test.dim()
            );
            let classes = train.classes.max(test.classes);
            train.classes = classes;
            test.classes = classes;
            train.split = Split::Train;
            test.split = Split::Test;
            return Ok((train, test));
        }
        generate_mixture(
            cfg.mixture
                .as_ref()
                .expect("resolved config has a data source"),
        )
    }
}

/// Artifacts of one finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub report: EvalReport,
    pub records: Vec<BatchRecord>,
    pub bank_hash: String,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

pub fn losses_csv(records: &[BatchRecord]) -> String {
    let mut out = String::from("epoch,batch,cross_entropy,compactness,total,lr\n");
    for r in records {
        writeln!(
            out,
            "{},{},{:?},{:?},{:?},{:?}",
            r.epoch, r.batch, r.cross_entropy, r.compactness, r.total, r.lr
        )
        .unwrap();
    }
    out
}

fn losses_jsonl(records: &[BatchRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Trains on the configured data and writes every artifact to `out_dir`.
pub fn run_train(config: &ExperimentConfig) -> Result<RunOutcome> {
    let config = config.resolved()?;
    let (train, test) = config.load_data()?;
    run_train_on(&config, &train, &test)
}

fn run_train_on(
    config: &ExperimentConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<RunOutcome> {
    let dir = config.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join(CONFIG_JSON), to_json(config))?;

    let (model, records) = fit(&config.train, train)?;
    save_checkpoint(&model, &config.train, &dir)?;
    write_file(&dir.join(LOSSES_CSV), losses_csv(&records))?;
    write_file(&dir.join(LOSSES_JSONL), losses_jsonl(&records))?;
    let report = model.evaluate(test)?;
    write_file(&dir.join(REPORT_JSON), to_json(&report))?;
    Ok(RunOutcome {
        dir,
        report,
        records,
        bank_hash: model.head.bank().content_hash(),
    })
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

/// One ablation cell: a head variant with its compactness weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub label: String,
    pub head_variant: HeadVariant,
    pub beta: f64,
}

impl AblationCell {
    pub fn new(label: &str, head_variant: HeadVariant, beta: f64) -> Self {
        Self {
            label: label.into(),
            head_variant,
            beta,
        }
    }

    fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            head_variant: self.head_variant,
            beta: self.beta,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
    pub seeds: Vec<u64>,
}

impl AblationGrid {
    /// Plain softmax, trainable sub-centers with and without the compactness
    /// term, fixed sub-centers without it, and F-SC (fixed plus compactness).
    pub fn standard(beta: f64) -> Self {
        Self {
            cells: vec![
                AblationCell::new("softmax", HeadVariant::Softmax, 0.0),
                AblationCell::new("subcenter_trainable", HeadVariant::TrainableSubcenter, 0.0),
                AblationCell::new(
                    "subcenter_trainable+L_sc-c",
                    HeadVariant::TrainableSubcenter,
                    beta,
                ),
                AblationCell::new("subcenter_fixed", HeadVariant::Fsc, 0.0),
                AblationCell::new("fsc", HeadVariant::Fsc, beta),
            ],
            seeds: DEFAULT_SEEDS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.cells.is_empty(), "ablation grid has no cells");
        ensure!(!self.seeds.is_empty(), "ablation grid has no seeds");
        let mut seen = HashSet::new();
        for c in &self.cells {
            ensure!(!c.label.is_empty(), "ablation cell with empty label");
            ensure!(
                seen.insert(c.label.as_str()),
                "duplicate ablation cell label {:?}",
                c.label
            );
        }
        Ok(())
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-cell aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub head_variant: HeadVariant,
    pub beta: f64,
    pub seeds: Vec<u64>,
    pub top1: Vec<f64>,
    pub mean_top1: f64,
    pub std_top1: f64,
    pub subclass_variance: Vec<f64>,
}

fn seed_dir(root: &Path, cell: &str, seed: u64) -> PathBuf {
    root.join(cell).join(format!("seed-{seed}"))
}

/// Runs every `(cell, seed)` pair in its own directory under `out_dir`,
/// then summarizes the written reports into `ablation.csv`.
pub fn run_ablation(config: &ExperimentConfig, grid: &AblationGrid) -> Result<Vec<CellSummary>> {
    grid.validate()?;
    let config = config.resolved()?;
    let (train, test) = config.load_data()?;
    let jobs: Vec<(&AblationCell, u64)> = grid
        .cells
        .iter()
        .flat_map(|c| grid.seeds.iter().map(move |&s| (c, s)))
        .collect();
    jobs.par_iter()
        .map(|&(cell, seed)| {
            let run = ExperimentConfig {
                train: TrainConfig {
                    seed,
                    ..cell.apply(&config.train)
                },
                out_dir: seed_dir(&config.out_dir, &cell.label, seed),
                label: format!("{}/seed-{seed}", cell.label),
                ..config.clone()
            };
            run_train_on(&run, &train, &test).map(|_| ())
        })
        .collect::<Result<Vec<()>>>()?;

    let mut summaries = Vec::with_capacity(grid.cells.len());
    for cell in &grid.cells {
        let reports = grid
            .seeds
            .iter()
            .map(|&s| read_report(&seed_dir(&config.out_dir, &cell.label, s)))
            .collect::<Result<Vec<_>>>()?;
        let top1: Vec<f64> = reports.iter().map(|r| r.top1).collect();
        let (mean_top1, std_top1) = mean_std(&top1);
        summaries.push(CellSummary {
            label: cell.label.clone(),
            head_variant: cell.head_variant,
            beta: cell.beta,
            seeds: grid.seeds.clone(),
            mean_top1,
            std_top1,
            top1,
            subclass_variance: reports.iter().map(|r| r.subclass_variance).collect(),
        });
    }
    write_file(
        &config.out_dir.join("ablation.csv"),
        ablation_csv(&summaries),
    )?;
    Ok(summaries)
}

pub fn ablation_csv(rows: &[CellSummary]) -> String {
    let mut out =
        String::from("cell,head_variant,beta,seeds,mean_top1,std_top1,mean_subclass_variance\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{:?},{},{:?},{:?},{:?}",
            r.label,
            r.head_variant.as_str(),
            r.beta,
            r.seeds.len(),
            r.mean_top1,
            r.std_top1,
            mean_std(&r.subclass_variance).0
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Sigma2,
    Beta,
    S,
}

impl SweepParameter {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParameter::Sigma2 => "sigma2",
            SweepParameter::Beta => "beta",
            SweepParameter::S => "s",
        }
    }

    fn apply(&self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParameter::Sigma2 => cfg.sigma2 = value,
            SweepParameter::Beta => cfg.beta = value,
            SweepParameter::S => {
                ensure!(
                    value >= 1.0 && value.fract() == 0.0,
                    "s must be a positive integer, got {value}"
                );
                cfg.s = value as usize;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma2" => Ok(SweepParameter::Sigma2),
            "beta" => Ok(SweepParameter::Beta),
            "s" => Ok(SweepParameter::S),
            other => Err(Error::contract(format!(
                "unknown sweep parameter {other:?} (expected sigma2, beta or s)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub top1: Vec<f64>,
    pub mean_top1: f64,
    pub std_top1: f64,
    /// Mean same-class pairwise squared sub-center distance, over seeds.
    /// Absent for a single sub-center per class.
    pub mean_dispersion: Option<f64>,
}

/// One run per `(value, seed)`; every value shares the same seeds.
pub fn run_sweep(
    config: &ExperimentConfig,
    parameter: SweepParameter,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    ensure!(
        !values.is_empty(),
        "sweep over {} needs at least one value",
        parameter.as_str()
    );
    ensure!(!seeds.is_empty(), "sweep needs at least one seed");
    let config = config.resolved()?;
    let configs = values
        .iter()
        .map(|&v| parameter.apply(&config.train, v))
        .collect::<Result<Vec<_>>>()?;
    let (train, test) = config.load_data()?;

    let value_dir = |v: f64| config.out_dir.join(format!("{}={v:?}", parameter.as_str()));
    let jobs: Vec<(usize, u64)> = (0..values.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    jobs.par_iter()
        .map(|&(i, seed)| {
            let run = ExperimentConfig {
                train: TrainConfig {
                    seed,
                    ..configs[i].clone()
                },
                out_dir: value_dir(values[i]).join(format!("seed-{seed}")),
                label: format!("{}={:?}/seed-{seed}", parameter.as_str(), values[i]),
                ..config.clone()
            };
            run_train_on(&run, &train, &test).map(|_| ())
        })
        .collect::<Result<Vec<()>>>()?;

    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let reports = seeds
            .iter()
            .map(|&s| read_report(&value_dir(value).join(format!("seed-{s}"))))
            .collect::<Result<Vec<_>>>()?;
        let top1: Vec<f64> = reports.iter().map(|r| r.top1).collect();
        let (mean_top1, std_top1) = mean_std(&top1);
        let dispersion: Option<Vec<f64>> = reports
            .iter()
            .map(|r| r.dispersion.as_ref().map(|d| d.mean_pairwise_sq_dist))
            .collect();
        rows.push(SweepRow {
            value,
            mean_top1,
            std_top1,
            top1,
            mean_dispersion: dispersion.map(|d| mean_std(&d).0),
        });
    }
    write_file(
        &config
            .out_dir
            .join(format!("sweep_{}.csv", parameter.as_str())),
        sweep_csv(parameter, &rows),
    )?;
    Ok(rows)
}

pub fn sweep_csv(parameter: SweepParameter, rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{},mean_top1,std_top1,mean_dispersion\n",
        parameter.as_str()
    );
    for r in rows {
        let disp = r
            .mean_dispersion
            .map(|d| format!("{d:?}"))
            .unwrap_or_default();
        writeln!(
            out,
            "{:?},{:?},{:?},{}",
            r.value, r.mean_top1, r.std_top1, disp
        )
        .unwrap();
    }
    out
}

/// Writes 3-D PCA embeddings of `data` under the checkpointed model.
/// Returns the number of rows written.
pub fn export_embeddings(
    checkpoint_dir: &Path,
    data: &LabeledDataset,
    path: &Path,
) -> Result<usize> {
    let (model, _) = load_checkpoint(checkpoint_dir)?;
    ensure!(
        data.dim() == model.backbone.input_dim(),
        "dataset has {} features but the checkpoint expects {}",
        data.dim(),
        model.backbone.input_dim()
    );
    ensure!(
        data.labels.iter().all(|&y| y < model.classes()),
        "dataset labels exceed the checkpoint's {} classes",
        model.classes()
    );
    let feats = model.features(&data.inputs)?;
    let pass = model.head_pass(feats, &data.labels, false)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    embedding_export(&pass.features, &data.labels, &pass.assignment, path)?;
    Ok(data.len())
}

/// Writes `train.csv` and `test.csv` for `spec` into `dir`.
pub fn write_mixture(spec: &MixtureSpec, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (train, test) = generate_mixture(spec)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (tp, sp) = (dir.join("train.csv"), dir.join("test.csv"));
    train.write_csv(&tp)?;
    test.write_csv(&sp)?;
    Ok((tp, sp))
}
