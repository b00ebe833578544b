//! Synthetic multi-modal classification data and feature-CSV ingestion.
//!
//! Every class is a mixture of several Gaussian modes, so a single prototype
//! per class is a poor fit while a handful of sub-centers is a good one.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::numerics::{Matrix, RandomStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub classes: usize,
    pub modes_per_class: usize,
    pub input_dim: usize,
    /// Distance from a class center to each of its mode centers.
    pub mode_separation: f64,
    /// Exact pairwise distance between class centers.
    pub class_separation: f64,
    pub mode_stddev: f64,
    pub samples_per_mode: usize,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            modes_per_class: 4,
            input_dim: 16,
            mode_separation: 4.5,
            class_separation: 2.0,
            mode_stddev: 0.9,
            samples_per_mode: 100,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.classes >= 1
                && self.modes_per_class >= 1
                && self.input_dim >= 1
                && self.samples_per_mode >= 1,
            "mixture counts must all be >= 1"
        );
        ensure!(
            self.mode_separation > 0.0 && self.class_separation > 0.0,
            "mixture separations must be > 0"
        );
        ensure!(self.mode_stddev > 0.0, "mode_stddev must be > 0");
        ensure!(
            self.classes <= self.input_dim,
            "cannot place {} classes at equal pairwise distance {} in {} dimensions: \
             the construction needs input_dim >= classes",
            self.classes,
            self.class_separation,
            self.input_dim
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    /// Generating mode of each sample. Diagnostics only; never used in training.
    pub mode_ids: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// CSV with header `f0,...,f{D-1},label,mode`. Values are written in
    /// their shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for k in 0..d {
            let _ = write!(out, "f{k},");
        }
        out.push_str("label,mode\n");
        for (i, row) in self.inputs.row_iter().enumerate() {
            for v in row {
                let _ = write!(out, "{v:?},");
            }
            let _ = writeln!(out, "{},{}", self.labels[i], self.mode_ids[i]);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Orthonormal basis from Gram–Schmidt on a Gaussian matrix; rows are the
/// basis vectors.
fn random_rotation(dim: usize, stream: &mut RandomStream) -> Matrix {
    let mut q = Matrix::zeros(dim, dim);
    let mut r = 0;
    while r < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| stream.standard_normal_pair().0).collect();
        for p in 0..r {
            let proj: f64 = v.iter().zip(q.row(p)).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q.row(p)) {
                *a -= proj * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for (dst, a) in q.row_mut(r).iter_mut().zip(&v) {
            *dst = a / norm;
        }
        r += 1;
    }
    q
}

fn random_unit(dim: usize, stream: &mut RandomStream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| stream.standard_normal_pair().0).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Class centers at `class_separation / √2` along the rows of a random
/// rotation, so every pair sits exactly `class_separation` apart.
pub fn class_centers(spec: &MixtureSpec) -> Result<Matrix> {
    spec.validate()?;
    let root = RandomStream::new(spec.seed);
    let q = random_rotation(spec.input_dim, &mut root.derive(0));
    let scale = spec.class_separation / std::f64::consts::SQRT_2;
    let rows: Vec<Vec<f64>> = (0..spec.classes)
        .map(|i| q.row(i).iter().map(|v| v * scale).collect())
        .collect();
    Matrix::from_rows(&rows)
}

/// Mode centers, row `class · modes_per_class + mode`.
pub fn mode_centers(spec: &MixtureSpec) -> Result<Matrix> {
    let centers = class_centers(spec)?;
    let mut stream = RandomStream::new(spec.seed).derive(1);
    let mut rows = Vec::with_capacity(spec.classes * spec.modes_per_class);
    for c in 0..spec.classes {
        for _ in 0..spec.modes_per_class {
            let u = random_unit(spec.input_dim, &mut stream);
            rows.push(
                centers
                    .row(c)
                    .iter()
                    .zip(&u)
                    .map(|(a, b)| a + spec.mode_separation * b)
                    .collect::<Vec<f64>>(),
            );
        }
    }
    Matrix::from_rows(&rows)
}

/// Number of training samples out of `n` for one (class, mode) cell.
fn train_count(n: usize) -> usize {
    if n < 2 {
        return n;
    }
    ((n as f64 * 0.8).round() as usize).clamp(1, n - 1)
}

/// Draws the mixture and splits each (class, mode) cell 80/20 into train
/// and test, keeping generation order within each split.
pub fn generate_mixture(spec: &MixtureSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let modes = mode_centers(spec)?;
    let mut stream = RandomStream::new(spec.seed).derive(2);
    let d = spec.input_dim;
    let per = spec.samples_per_mode;
    let cells = spec.classes * spec.modes_per_class;
    let n_train = train_count(per);

    let mut train = (
        Vec::with_capacity(cells * n_train * d),
        Vec::new(),
        Vec::new(),
    );
    let mut test = (
        Vec::with_capacity(cells * (per - n_train) * d),
        Vec::new(),
        Vec::new(),
    );
    for c in 0..spec.classes {
        for m in 0..spec.modes_per_class {
            let center = modes.row(c * spec.modes_per_class + m);
            for k in 0..per {
                let target = if k < n_train { &mut train } else { &mut test };
                for &mu in center {
                    target
                        .0
                        .push(mu + spec.mode_stddev * stream.standard_normal_pair().0);
                }
                target.1.push(c);
                target.2.push(m);
            }
        }
    }
    let build = |(data, labels, mode_ids): (Vec<f64>, Vec<usize>, Vec<usize>),
                 split|
     -> Result<LabeledDataset> {
        Ok(LabeledDataset {
            inputs: Matrix::new(labels.len(), d, data)?,
            labels,
            mode_ids,
            split,
            classes: spec.classes,
        })
    };
    Ok((build(train, Split::Train)?, build(test, Split::Test)?))
}

/// Reads a numeric CSV of features plus one integer label column.
///
/// The first row is treated as a header when any field in it is not a
/// number. `label_column` is a header name or a 0-based column index;
/// without a header, the name `label` means the last column. A `mode`
/// header column, when present, fills `mode_ids`; otherwise they are 0.
pub fn load_feature_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::data(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<String> = rec.iter().map(|f| f.trim().to_string()).collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        records.push((line, fields));
    }
    let has_header = records
        .first()
        .is_some_and(|(_, f)| f.iter().any(|v| v.parse::<f64>().is_err()));
    let header = if has_header {
        Some(records.remove(0))
    } else {
        None
    };
    let Some((_, first)) = records.first() else {
        return Err(Error::data(path, "no data rows"));
    };
    let width = header.as_ref().map_or(first.len(), |(_, h)| h.len());

    let label_idx = match (&header, label_column.parse::<usize>()) {
        (_, Ok(i)) => i,
        (Some((_, h)), Err(_)) => {
            h.iter()
                .position(|name| name == label_column)
                .ok_or_else(|| {
                    Error::data(path, format!("no column named '{label_column}' in header"))
                })?
        }
        (None, Err(_)) if label_column == "label" => width - 1,
        (None, Err(_)) => {
            return Err(Error::data(
                path,
                format!("file has no header, so label column '{label_column}' cannot be resolved"),
            ))
        }
    };
    ensure!(
        label_idx < width,
        "label column {label_idx} out of range for {width} columns"
    );
    let mode_idx = header
        .as_ref()
        .and_then(|(_, h)| h.iter().position(|name| name == "mode"))
        .filter(|&i| i != label_idx);

    let feature_cols: Vec<usize> = (0..width)
        .filter(|&i| i != label_idx && Some(i) != mode_idx)
        .collect();
    let mut data = Vec::with_capacity(records.len() * feature_cols.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut mode_ids = Vec::with_capacity(records.len());
    for (line, fields) in &records {
        if fields.len() != width {
            return Err(Error::data(
                path,
                format!(
                    "line {line}: expected {width} fields, found {}",
                    fields.len()
                ),
            ));
        }
        for &c in &feature_cols {
            let v: f64 = fields[c].parse().map_err(|_| {
                Error::data(
                    path,
                    format!(
                        "line {line}: column {}: '{}' is not a number",
                        c + 1,
                        fields[c]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::data(
                    path,
                    format!("line {line}: column {}: non-finite value", c + 1),
                ));
            }
            data.push(v);
        }
        let label: usize = fields[label_idx].parse().map_err(|_| {
            Error::data(
                path,
                format!(
                    "line {line}: label '{}' is not a non-negative integer",
                    fields[label_idx]
                ),
            )
        })?;
        labels.push(label);
        let mode = match mode_idx {
            Some(i) => fields[i].parse().map_err(|_| {
                Error::data(
                    path,
                    format!("line {line}: mode '{}' is not an integer", fields[i]),
                )
            })?,
            None => 0,
        };
        mode_ids.push(mode);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(LabeledDataset {
        inputs: Matrix::new(labels.len(), feature_cols.len(), data)?,
        labels,
        mode_ids,
        split: Split::Train,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn small_spec() -> MixtureSpec {
        MixtureSpec {
            classes: 3,
            modes_per_class: 2,
            input_dim: 5,
            samples_per_mode: 10,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn class_centers_are_equidistant() {
        let spec = MixtureSpec::default();
        let c = class_centers(&spec).unwrap();
        for i in 0..spec.classes {
            for j in (i + 1)..spec.classes {
                let d: f64 = c
                    .row(i)
                    .iter()
                    .zip(c.row(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!((d - spec.class_separation).abs() < 1e-9, "{d}");
            }
        }
    }

    #[test]
    fn infeasible_separation_is_reported() {
        let spec = MixtureSpec {
            classes: 6,
            input_dim: 4,
            ..Default::default()
        };
        let msg = generate_mixture(&spec).unwrap_err().to_string();
        assert!(
            msg.contains("6 classes") && msg.contains("4 dimensions"),
            "{msg}"
        );
    }

    #[test]
    fn counts_and_stratification() {
        let spec = small_spec();
        let (train, test) = generate_mixture(&spec).unwrap();
        assert_eq!(train.len() + test.len(), 3 * 2 * 10);
        assert_eq!((train.len(), test.len()), (48, 12));
        for ds in [&train, &test] {
            let cells: BTreeSet<(usize, usize)> = ds
                .labels
                .iter()
                .copied()
                .zip(ds.mode_ids.iter().copied())
                .collect();
            assert_eq!(cells.len(), 6);
        }
        for c in 0..3 {
            let total = train
                .labels
                .iter()
                .chain(&test.labels)
                .filter(|&&l| l == c)
                .count();
            assert_eq!(total, 20);
        }
    }

    #[test]
    fn single_mode_is_plain_blobs() {
        let spec = MixtureSpec {
            modes_per_class: 1,
            ..small_spec()
        };
        let (train, _) = generate_mixture(&spec).unwrap();
        assert!(train.mode_ids.iter().all(|&m| m == 0));
    }

    #[test]
    fn tiny_stddev_collapses_to_mode_centers() {
        let spec = MixtureSpec {
            classes: 2,
            modes_per_class: 2,
            input_dim: 2,
            mode_stddev: 1e-300,
            samples_per_mode: 5,
            ..Default::default()
        };
        let (train, test) = generate_mixture(&spec).unwrap();
        let points: BTreeSet<Vec<u64>> = train
            .inputs
            .row_iter()
            .chain(test.inputs.row_iter())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(points.len(), 4);
    }

    #[test]
    fn deterministic() {
        let (a, b) = generate_mixture(&small_spec()).unwrap();
        let (c, d) = generate_mixture(&small_spec()).unwrap();
        assert_eq!(a.to_csv(), c.to_csv());
        assert_eq!(b.to_csv(), d.to_csv());
        let other = generate_mixture(&MixtureSpec {
            seed: 5,
            ..small_spec()
        })
        .unwrap()
        .0;
        assert_ne!(a.to_csv(), other.to_csv());
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        let (train, _) = generate_mixture(&small_spec()).unwrap();
        train.write_csv(&path).unwrap();
        let back = load_feature_csv(&path, "label").unwrap();
        assert_eq!(back.inputs.to_binary(), train.inputs.to_binary());
        assert_eq!(back.labels, train.labels);
        assert_eq!(back.mode_ids, train.mode_ids);
        assert_eq!(back.classes, 3);
    }

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn headerless_three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "0.5,1.0,0\n-1,2,1\n3,4e-3,2\n");
        let ds = load_feature_csv(&p, "label").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels, vec![0, 1, 2]);
        assert!(ds.mode_ids.iter().all(|&m| m == 0));
        let by_index = load_feature_csv(&p, "0").unwrap_err().to_string();
        assert!(by_index.contains("non-negative integer"), "{by_index}");
    }

    #[test]
    fn empty_and_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        for (name, text) in [("e.csv", ""), ("h.csv", "f0,label\n")] {
            let err = load_feature_csv(&write(&dir, name, text), "label").unwrap_err();
            assert!(err.to_string().contains("no data rows"), "{err}");
        }
    }

    #[test]
    fn ragged_row_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "r.csv", "f0,f1,label\n1,2,0\n3,1\n5,6,1\n");
        let err = load_feature_csv(&p, "label").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn bad_labels_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "l.csv", "f0,label\n1,0\n2,1.5\n");
        let err = load_feature_csv(&p, "label").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("1.5"), "{err}");
        let p = write(&dir, "n.csv", "f0,label\n1,-1\n");
        assert!(load_feature_csv(&p, "label").is_err());
        let missing = load_feature_csv(&dir.path().join("nope.csv"), "label").unwrap_err();
        assert_eq!(missing.exit_code(), 3);
    }
}
