use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::numerics::{sample_normal, sample_uniform, Matrix, RandomStream};

/// Half-width of the kaiming-uniform range used for class centers:
/// `gain · sqrt(3 / fan_in)` with ReLU gain `sqrt(2)` and `fan_in = d`,
/// i.e. `sqrt(6 / d)`.
pub fn kaiming_bound(d: usize) -> f64 {
    (6.0 / d as f64).sqrt()
}

/// Class centers `μ`, one row per class, drawn i.i.d. from
/// `U[-sqrt(6/d), sqrt(6/d))` in row-major order.
pub fn init_centers(c: usize, d: usize, stream: &mut RandomStream) -> Result<Matrix> {
    ensure!(
        c >= 1 && d >= 1,
        "init_centers needs c >= 1 and d >= 1, got c={c}, d={d}"
    );
    let b = kaiming_bound(d);
    Matrix::new(c, d, sample_uniform(stream, -b, b, c * d)?)
}

/// The classifier's sub-center weights: `c` classes with `s` sub-centers
/// each in `R^d`. Row `i·s + j` of [`weights`](Self::weights) is sub-center
/// `j` of class `i`.
///
/// A frozen bank rejects every mutation; this is how the head stays out of
/// the optimizer. Trainable baselines use an unfrozen bank with the same
/// layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SubCenterBank {
    c: usize,
    s: usize,
    d: usize,
    mu: Matrix,
    w: Matrix,
    sigma2: f64,
    seed: u64,
    frozen: bool,
}

fn draw_subcenters(
    mu: &Matrix,
    s: usize,
    sigma2: f64,
    stream: &mut RandomStream,
) -> Result<Matrix> {
    ensure!(s >= 1, "need at least one sub-center per class");
    ensure!(
        sigma2 >= 0.0 && sigma2.is_finite(),
        "sub-center variance must be finite and >= 0, got {sigma2}"
    );
    let (c, d) = mu.shape();
    ensure!(
        c >= 1 && d >= 1,
        "class centers must be non-empty, got {c}x{d}"
    );
    let noise = sample_normal(stream, 0.0, sigma2, c * s * d)?;
    let mut w = Vec::with_capacity(c * s * d);
    for i in 0..c {
        for j in 0..s {
            let base = (i * s + j) * d;
            w.extend(
                mu.row(i)
                    .iter()
                    .zip(&noise[base..base + d])
                    .map(|(m, z)| m + z),
            );
        }
    }
    Matrix::new(c * s, d, w)
}

/// Samples `s` sub-centers per class from `N(μ_i, σ² I)` and freezes them.
pub fn sample_subcenters(
    mu: &Matrix,
    s: usize,
    sigma2: f64,
    stream: &mut RandomStream,
) -> Result<SubCenterBank> {
    let seed = stream.seed();
    let w = draw_subcenters(mu, s, sigma2, stream)?;
    Ok(SubCenterBank {
        c: mu.rows(),
        s,
        d: mu.cols(),
        mu: mu.clone(),
        w,
        sigma2,
        seed,
        frozen: true,
    })
}

/// Same sampling as [`sample_subcenters`] but the bank stays trainable.
pub fn sample_trainable_subcenters(
    mu: &Matrix,
    s: usize,
    sigma2: f64,
    stream: &mut RandomStream,
) -> Result<SubCenterBank> {
    let mut bank = sample_subcenters(mu, s, sigma2, stream)?;
    bank.frozen = false;
    Ok(bank)
}

/// JSON header written next to the binary weight dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankHeader {
    pub c: usize,
    pub s: usize,
    pub d: usize,
    pub sigma2: f64,
    pub seed: u64,
    pub frozen: bool,
    pub content_hash: String,
}

/// Statistics over all same-class sub-center pairs, averaged over classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionStats {
    pub mean_pairwise_sq_dist: f64,
    pub mean_pairwise_cosine: f64,
}

impl SubCenterBank {
    /// Centers from child stream 0 of `seed`, sub-centers from child stream 1.
    pub fn generate(
        c: usize,
        s: usize,
        d: usize,
        sigma2: f64,
        seed: u64,
        frozen: bool,
    ) -> Result<Self> {
        let root = RandomStream::new(seed);
        let mu = init_centers(c, d, &mut root.derive(0))?;
        let mut bank = sample_subcenters(&mu, s, sigma2, &mut root.derive(1))?;
        bank.seed = seed;
        bank.frozen = frozen;
        Ok(bank)
    }

    /// Wraps explicit sub-center weights (`c·s` rows). The recorded centers
    /// are the per-class means of the sub-centers; `sigma2` and `seed` are 0.
    pub fn from_weights(c: usize, s: usize, w: Matrix, frozen: bool) -> Result<Self> {
        ensure!(c >= 1 && s >= 1, "need c >= 1 and s >= 1, got c={c}, s={s}");
        ensure!(
            w.rows() == c * s && w.cols() >= 1,
            "weights shape {:?} does not hold {c}x{s} sub-centers",
            w.shape()
        );
        let d = w.cols();
        let mut mu = Matrix::zeros(c, d);
        for i in 0..c {
            for j in 0..s {
                for (m, v) in mu.row_mut(i).iter_mut().zip(w.row(i * s + j)) {
                    *m += v / s as f64;
                }
            }
        }
        Ok(SubCenterBank {
            c,
            s,
            d,
            mu,
            w,
            sigma2: 0.0,
            seed: 0,
            frozen,
        })
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    pub fn subcenters_per_class(&self) -> usize {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Class centers the sub-centers were sampled around. Diagnostic only.
    pub fn centers(&self) -> &Matrix {
        &self.mu
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn subcenter(&self, class: usize, j: usize) -> &[f64] {
        self.w.row(class * self.s + j)
    }

    /// Mutable weights; fails on a frozen bank.
    pub fn weights_mut(&mut self) -> Result<&mut Matrix> {
        ensure!(
            !self.frozen,
            "sub-center bank is frozen; its weights cannot be modified"
        );
        Ok(&mut self.w)
    }

    /// Freezes the bank for good.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Hex SHA-256 of the binary weight dump.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.w.to_binary()))
    }

    pub fn header(&self) -> BankHeader {
        BankHeader {
            c: self.c,
            s: self.s,
            d: self.d,
            sigma2: self.sigma2,
            seed: self.seed,
            frozen: self.frozen,
            content_hash: self.content_hash(),
        }
    }

    pub fn dispersion_stats(&self) -> Result<DispersionStats> {
        ensure!(
            self.s >= 2,
            "dispersion needs at least 2 sub-centers per class, got s={}",
            self.s
        );
        let mut sq_total = 0.0;
        let mut cos_total = 0.0;
        for i in 0..self.c {
            let mut sq = 0.0;
            let mut cos = 0.0;
            let mut pairs = 0usize;
            for a in 0..self.s {
                for b in (a + 1)..self.s {
                    let (u, v) = (self.subcenter(i, a), self.subcenter(i, b));
                    sq += u.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
                    cos += cosine(u, v);
                    pairs += 1;
                }
            }
            sq_total += sq / pairs as f64;
            cos_total += cos / pairs as f64;
        }
        Ok(DispersionStats {
            mean_pairwise_sq_dist: sq_total / self.c as f64,
            mean_pairwise_cosine: cos_total / self.c as f64,
        })
    }

    /// Writes `<stem>.json` (header) and `<stem>.bin` (weights, then centers).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let json_path = dir.join(format!("{stem}.json"));
        let bin_path = dir.join(format!("{stem}.bin"));
        let header = serde_json::to_string_pretty(&self.header()).expect("header serializes");
        fs::write(&json_path, header + "\n").map_err(|e| Error::io(&json_path, e))?;
        let mut buf = self.w.to_binary();
        buf.extend(self.mu.to_binary());
        fs::write(&bin_path, buf).map_err(|e| Error::io(&bin_path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let bin_path = dir.join(format!("{stem}.bin"));
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let header: BankHeader = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: json_path.clone(),
            source,
        })?;
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let mut cursor = bytes.as_slice();
        let w = Matrix::read_binary(&mut cursor)?;
        let mu = Matrix::read_binary(&mut cursor)?;
        Self::from_parts(header, mu, w)
    }

    pub(crate) fn from_parts(header: BankHeader, mu: Matrix, w: Matrix) -> Result<Self> {
        let BankHeader {
            c,
            s,
            d,
            sigma2,
            seed,
            frozen,
            content_hash,
        } = header;
        ensure!(
            w.shape() == (c * s, d) && mu.shape() == (c, d),
            "bank dump shapes {:?}/{:?} disagree with header c={c} s={s} d={d}",
            w.shape(),
            mu.shape()
        );
        let bank = SubCenterBank {
            c,
            s,
            d,
            mu,
            w,
            sigma2,
            seed,
            frozen,
        };
        ensure!(
            bank.content_hash() == content_hash,
            "bank content hash mismatch: header {content_hash}, weights {}",
            bank.content_hash()
        );
        Ok(bank)
    }
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return if u == v { 1.0 } else { 0.0 };
    }
    dot / (nu * nv)
}
