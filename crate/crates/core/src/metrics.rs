//! Classification accuracy, Recall@k retrieval, and geometric diagnostics of
//! learned features.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::head::{DispersionStats, LossBreakdown};
use crate::numerics::{pca_project, Matrix};

/// Retrieval cut-offs reported by default.
pub const RECALL_KS: [usize; 4] = [1, 2, 4, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub recall_at: BTreeMap<usize, f64>,
    /// Absent when the head has a single sub-center per class.
    pub dispersion: Option<DispersionStats>,
    pub per_class_accuracy: Vec<f64>,
    /// Mean within-(class, assigned sub-center) feature variance.
    pub subclass_variance: f64,
    pub loss: LossBreakdown,
    pub samples: usize,
}

pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    ensure!(
        predictions.len() == labels.len(),
        "{} predictions for {} labels",
        predictions.len(),
        labels.len()
    );
    ensure!(!labels.is_empty(), "accuracy of an empty set");
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy per class; classes with no samples report 0.
pub fn per_class_accuracy(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<Vec<f64>> {
    ensure!(
        predictions.len() == labels.len(),
        "predictions and labels differ in length"
    );
    let mut hits = vec![0usize; classes];
    let mut counts = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        ensure!(l < classes, "label {l} out of range for {classes} classes");
        counts[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&counts)
        .map(|(&h, &c)| if c == 0 { 0.0 } else { h as f64 / c as f64 })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalDistance {
    /// Cosine similarity of L2-normalized features.
    #[default]
    Cosine,
    Euclidean,
}

fn normalized(features: &Matrix) -> Matrix {
    let mut out = features.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Recall@k with cosine similarity; see [`recall_at_k_with`].
pub fn recall_at_k(
    features: &Matrix,
    labels: &[usize],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    recall_at_k_with(features, labels, ks, RetrievalDistance::Cosine)
}

/// For each query, ranks every other sample by similarity (ties to the lower
/// index) and counts a hit at `k` when a same-label sample is among the top
/// `k`. Returns the hit rate per `k`.
pub fn recall_at_k_with(
    features: &Matrix,
    labels: &[usize],
    ks: &[usize],
    distance: RetrievalDistance,
) -> Result<BTreeMap<usize, f64>> {
    let n = features.rows();
    ensure!(
        labels.len() == n,
        "{n} feature rows but {} labels",
        labels.len()
    );
    ensure!(n >= 2, "recall@k needs at least 2 samples, got {n}");
    for &k in ks {
        ensure!(
            k >= 1 && k < n,
            "recall@{k} is undefined for {n} samples (need 1 <= k < N)"
        );
    }
    let feats = match distance {
        RetrievalDistance::Cosine => normalized(features),
        RetrievalDistance::Euclidean => features.clone(),
    };
    // Rank (0-based) of the first same-label neighbor, or n when none exists.
    let first_hit: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            let q = feats.row(i);
            let mut scored: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let r = feats.row(j);
                    let score = match distance {
                        RetrievalDistance::Cosine => {
                            q.iter().zip(r).map(|(a, b)| a * b).sum::<f64>()
                        }
                        RetrievalDistance::Euclidean => {
                            -q.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                        }
                    };
                    (score, j)
                })
                .collect();
            // `partial_cmp` so that -0.0 and 0.0 tie; scores are finite.
            scored.sort_by(|a, b| {
                b.0.partial_cmp(&a.0)
                    .expect("finite scores")
                    .then(a.1.cmp(&b.1))
            });
            scored
                .iter()
                .position(|&(_, j)| labels[j] == labels[i])
                .unwrap_or(n)
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = first_hit.iter().filter(|&&r| r < k).count();
            (k, hits as f64 / n as f64)
        })
        .collect())
}

fn group_keys(labels: &[usize], assignment: &[usize]) -> Vec<(usize, usize)> {
    labels
        .iter()
        .copied()
        .zip(assignment.iter().copied())
        .collect()
}

/// Mean over (class, assigned sub-center) groups with at least two members
/// of the average squared distance to the group mean.
pub fn subclass_variance(features: &Matrix, labels: &[usize], assignment: &[usize]) -> Result<f64> {
    ensure!(
        labels.len() == features.rows() && assignment.len() == features.rows(),
        "features, labels and assignment must have equal lengths"
    );
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, key) in group_keys(labels, assignment).into_iter().enumerate() {
        groups.entry(key).or_default().push(i);
    }
    let d = features.cols();
    let mut total = 0.0;
    let mut used = 0usize;
    for members in groups.values().filter(|m| m.len() >= 2) {
        let mut mean = vec![0.0; d];
        for &i in members {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= members.len() as f64);
        let spread: f64 = members
            .iter()
            .map(|&i| {
                features
                    .row(i)
                    .iter()
                    .zip(&mean)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum();
        total += spread / members.len() as f64;
        used += 1;
    }
    Ok(if used == 0 { 0.0 } else { total / used as f64 })
}

/// Mean silhouette coefficient of the grouping by (label, assignment), with
/// Euclidean distances. Singleton groups score 0.
pub fn silhouette(features: &Matrix, labels: &[usize], assignment: &[usize]) -> Result<f64> {
    let n = features.rows();
    ensure!(
        labels.len() == n && assignment.len() == n,
        "features, labels and assignment must have equal lengths"
    );
    let keys = group_keys(labels, assignment);
    let mut ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for k in &keys {
        let next = ids.len();
        ids.entry(*k).or_insert(next);
    }
    let group: Vec<usize> = keys.iter().map(|k| ids[k]).collect();
    let g = ids.len();
    ensure!(g >= 2, "silhouette needs at least two groups");
    let mut sizes = vec![0usize; g];
    for &gi in &group {
        sizes[gi] += 1;
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            if sizes[group[i]] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; g];
            for j in 0..n {
                if j != i {
                    let d: f64 = features
                        .row(i)
                        .iter()
                        .zip(features.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    sums[group[j]] += d;
                }
            }
            let own = group[i];
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..g)
                .filter(|&h| h != own)
                .map(|h| sums[h] / sizes[h] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

/// Number of projected columns written by [`embedding_export`].
pub const EMBEDDING_DIMS: usize = 3;

/// Writes a PCA projection of `features` (up to 3 components) with the label
/// and assigned sub-center of each row.
pub fn embedding_export(
    features: &Matrix,
    labels: &[usize],
    assignment: &[usize],
    path: &Path,
) -> Result<()> {
    let n = features.rows();
    ensure!(
        labels.len() == n && assignment.len() == n,
        "features, labels and assignment must have equal lengths"
    );
    let m = EMBEDDING_DIMS.min(features.cols());
    let proj = pca_project(features, m)?;
    let mut out = String::new();
    for k in 0..m {
        let _ = write!(out, "pca_{k},");
    }
    out.push_str("label,subclass\n");
    for i in 0..n {
        for v in proj.row(i) {
            let _ = write!(out, "{v:?},");
        }
        let _ = writeln!(out, "{},{}", labels[i], assignment[i]);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`embedding_export`]: projections, labels, sub-classes.
pub fn read_embeddings(path: &Path) -> Result<(Matrix, Vec<usize>, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut subclasses = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        ensure!(fields.len() >= 2, "line {}: too few fields", lineno + 1);
        let (vals, tail) = fields.split_at(fields.len() - 2);
        let parse_err = |what: &str| Error::data(path, format!("line {}: bad {what}", lineno + 1));
        rows.push(
            vals.iter()
                .map(|v| v.parse::<f64>().map_err(|_| parse_err("value")))
                .collect::<Result<Vec<_>>>()?,
        );
        labels.push(tail[0].parse().map_err(|_| parse_err("label"))?);
        subclasses.push(tail[1].parse().map_err(|_| parse_err("subclass"))?);
    }
    Ok((Matrix::from_rows(&rows)?, labels, subclasses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomStream;

    #[test]
    fn accuracy_cases() {
        assert_eq!(top1_accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert!((top1_accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(top1_accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(top1_accuracy(&[0], &[0, 1]).is_err());
        assert_eq!(
            per_class_accuracy(&[0, 1, 1], &[0, 1, 0], 3).unwrap(),
            vec![0.5, 1.0, 0.0]
        );
    }

    #[test]
    fn identical_pair_recall() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert_eq!(recall_at_k(&x, &[3, 3], &[1]).unwrap()[&1], 1.0);
    }

    #[test]
    fn opposite_corners() {
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.1, 0.9], [-1.0, -1.0], [-0.9, -1.1]]).unwrap();
        let r = recall_at_k(&x, &[0, 0, 1, 1], &[1, 2, 3]).unwrap();
        assert_eq!(r[&1], 1.0);
        let e = recall_at_k_with(&x, &[0, 0, 1, 1], &[1], RetrievalDistance::Euclidean).unwrap();
        assert_eq!(e[&1], 1.0);
    }

    #[test]
    fn distinct_labels_never_hit() {
        let mut s = RandomStream::new(1);
        let x = Matrix::new(6, 3, (0..18).map(|_| s.uniform(-1.0, 1.0)).collect()).unwrap();
        let r = recall_at_k(&x, &[0, 1, 2, 3, 4, 5], &[1, 2, 4, 5]).unwrap();
        assert!(r.values().all(|&v| v == 0.0));
    }

    #[test]
    fn k_out_of_range() {
        let x = Matrix::zeros(3, 2);
        assert!(recall_at_k(&x, &[0, 1, 0], &[3]).is_err());
        assert!(recall_at_k(&x, &[0, 1, 0], &[0]).is_err());
        assert!(recall_at_k(&Matrix::zeros(1, 2), &[0], &[]).is_err());
    }

    #[test]
    fn tied_scores_prefer_lower_index() {
        // Query 0 sees samples 1 and 2 at identical similarity; 1 wins the tie.
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(recall_at_k(&x, &[0, 0, 1], &[1]).unwrap()[&1], 1.0 / 3.0);
        assert_eq!(recall_at_k(&x, &[0, 1, 0], &[1]).unwrap()[&1], 0.0);
    }

    #[test]
    fn signed_zero_similarities_tie() {
        // Query 0 scores sample 1 at -0.0 and sample 2 at +0.0.
        let x = Matrix::from_rows(&[[-1.0, 0.0], [0.0, -1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(recall_at_k(&x, &[0, 0, 1], &[1]).unwrap()[&1], 2.0 / 3.0);
    }

    #[test]
    fn variance_of_known_groups() {
        let x = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0], [5.0, 5.0], [5.0, 7.0], [9.0, 9.0]])
            .unwrap();
        // Groups (0,0): spread 1; (1,0): spread 1; (1,1) singleton ignored.
        let v = subclass_variance(&x, &[0, 0, 1, 1, 1], &[0, 0, 0, 0, 1]).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn silhouette_of_separated_groups_is_high() {
        let x = Matrix::from_rows(&[[0.0], [0.1], [10.0], [10.1]]).unwrap();
        let s = silhouette(&x, &[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
        assert!(s > 0.98, "{s}");
        let mixed = silhouette(&x, &[0, 1, 0, 1], &[0, 0, 0, 0]).unwrap();
        assert!(mixed < 0.0);
    }

    #[test]
    fn embedding_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        let mut s = RandomStream::new(3);
        let x = Matrix::new(10, 5, (0..50).map(|_| s.uniform(-1.0, 1.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let sub: Vec<usize> = (0..10).map(|i| i % 2).collect();
        embedding_export(&x, &labels, &sub, &path).unwrap();
        let (proj, l, a) = read_embeddings(&path).unwrap();
        let expected = pca_project(&x, 3).unwrap();
        assert_eq!(proj.shape(), (10, 3));
        assert!(proj.sq_distance(&expected).sqrt() < 1e-9);
        assert_eq!((l, a), (labels, sub));
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("pca_0,pca_1,pca_2,label,subclass\n"));
    }

    #[test]
    fn embedding_edge_cases() {
        let dir = tempfile::tempdir().unwrap();
        assert!(
            embedding_export(&Matrix::zeros(1, 3), &[0], &[0], &dir.path().join("a.csv")).is_err()
        );
        let rank1 =
            Matrix::from_rows(&[[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [-1.0, -2.0, -3.0]]).unwrap();
        let path = dir.path().join("b.csv");
        embedding_export(&rank1, &[0, 1, 0], &[0, 0, 0], &path).unwrap();
        let (proj, _, _) = read_embeddings(&path).unwrap();
        let col_energy: Vec<f64> = (0..3)
            .map(|c| proj.row_iter().map(|r| r[c] * r[c]).sum())
            .collect();
        assert!(col_energy[0] > 1.0);
        assert!(
            col_energy[1] < 1e-20 && col_energy[2] < 1e-20,
            "{col_energy:?}"
        );
    }
}
