use super::Matrix;
use crate::error::{ensure, Result};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue
/// (ties keep the lower original index); eigenvector `j` is column `j`.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    ensure!(
        a.cols() == n,
        "symmetric_eigen needs a square matrix, got {}x{}",
        a.rows(),
        a.cols()
    );
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale: f64 = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m.get(p, q).powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors.set(k, dst, v.get(k, src));
        }
    }
    Ok((values, vectors))
}

/// Projects centered `x` onto its top `dims` principal directions.
///
/// Each direction's sign is chosen so that its largest-magnitude component
/// (first one on ties) is positive.
pub fn pca_project(x: &Matrix, dims: usize) -> Result<Matrix> {
    let (n, d) = x.shape();
    ensure!(n >= 2, "pca_project needs at least 2 rows, got {n}");
    ensure!(
        dims <= d,
        "pca_project: dims {dims} exceeds column count {d}"
    );

    let mut mean = vec![0.0; d];
    for row in x.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = x.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let mut cov = centered.transpose_matmul(&centered)?;
    cov.scale(1.0 / (n - 1) as f64);
    let (_, vectors) = symmetric_eigen(&cov)?;

    let mut basis = Matrix::zeros(d, dims);
    for j in 0..dims {
        let mut best = 0;
        for k in 1..d {
            if vectors.get(k, j).abs() > vectors.get(best, j).abs() {
                best = k;
            }
        }
        let sign = if vectors.get(best, j) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for k in 0..d {
            basis.set(k, j, sign * vectors.get(k, j));
        }
    }
    centered.matmul(&basis)
}
