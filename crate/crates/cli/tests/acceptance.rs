//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use fsc_core::backbone::{HeadVariant, TrainConfig};
use fsc_core::datagen::{generate_mixture, MixtureSpec};
use fsc_core::experiment::{run_ablation, AblationGrid, CellSummary, ExperimentConfig};
use fsc_core::head::{fsc_loss, loss_grad_features, FeatureBatch, SubCenterBank};
use fsc_core::metrics::recall_at_k;
use fsc_core::train::{fit, Model};
use fsc_core::{Matrix, RandomStream};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn normal_matrix(stream: &mut RandomStream, rows: usize, cols: usize) -> Matrix {
    let data = fsc_core::numerics::sample_normal(stream, 0.0, 1.0, rows * cols).unwrap();
    Matrix::new(rows, cols, data).unwrap()
}

fn labels(stream: &mut RandomStream, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| stream.below(classes)).collect()
}

// 1. Gradient exactness.

/// Fourth-order central difference of `f` at 0. A two-point stencil with a
/// step small enough for its truncation error leaves roundoff near 1e-10,
/// which swamps gradient components of order 1e-6.
fn five_point(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-4;
    (f(-2.0 * h) - 8.0 * f(-h) + 8.0 * f(h) - f(2.0 * h)) / (12.0 * h)
}

fn head_instance(i: u64) -> (f64, f64) {
    let mut rng = RandomStream::new(10_000 + i);
    let c = 1 + rng.below(5);
    let s = 1 + rng.below(4);
    let d = 1 + rng.below(16);
    let n = 1 + rng.below(8);
    let beta = [0.0, 1e-4, 1e-1][(i % 3) as usize];
    let sigma2 = [1e-3, 1e-1, 1.0][rng.below(3)];
    let bank = SubCenterBank::generate(c, s, d, sigma2, rng.next_u64(), true).unwrap();
    let x = normal_matrix(&mut rng, n, d);
    let y = labels(&mut rng, n, c);
    let batch = FeatureBatch::new(x.clone(), y.clone()).unwrap();
    let analytic = loss_grad_features(&bank, &batch, beta).unwrap();

    let loss_at = |k: usize, delta: f64| {
        let mut moved = x.clone();
        moved.as_mut_slice()[k] += delta;
        fsc_loss(&bank, &FeatureBatch::new(moved, y.clone()).unwrap(), beta)
            .unwrap()
            .total
    };
    let worst = (0..n * d)
        .map(|k| {
            rel_err(
                analytic.as_slice()[k],
                five_point(|delta| loss_at(k, delta)),
            )
        })
        .fold(0.0f64, f64::max);
    (worst, beta)
}

fn composite_instance(i: u64) -> f64 {
    let mut rng = RandomStream::new(20_000 + i);
    let input = 1 + rng.below(8);
    let hidden = 1 + rng.below(8);
    let d = 1 + rng.below(8);
    let classes = 1 + rng.below(3);
    let n = 1 + rng.below(8);
    let config = TrainConfig {
        s: 1 + rng.below(3),
        sigma2: 1e-1,
        beta: [0.0, 1e-4, 1e-1][(i % 3) as usize],
        hidden: vec![hidden],
        feature_dim: d,
        seed: rng.next_u64(),
        ..TrainConfig::default()
    };
    let mut model = Model::new(&config, input, classes).unwrap();
    // Zero biases put dead-ReLU samples on the zero feature vector, where all
    // logits tie and the assignment is not differentiable.
    let offsets =
        fsc_core::numerics::sample_normal(&mut rng, 0.0, 0.1, model.backbone.param_count())
            .unwrap();
    let mut offsets = offsets.into_iter();
    for layer in model.backbone.params_mut().into_iter().skip(1).step_by(2) {
        layer.iter_mut().for_each(|b| *b += offsets.next().unwrap());
    }
    let x = normal_matrix(&mut rng, n, input);
    let y = labels(&mut rng, n, classes);
    let (_, grads) = model.gradients(&x, &y).unwrap();
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|g| g.to_vec()).collect();

    let mut worst = 0.0f64;
    for (p, g) in analytic.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let numeric = five_point(|delta| {
                let mut moved = model.clone();
                moved.backbone.params_mut()[p][k] += delta;
                moved.loss(&x, &y).unwrap().total
            });
            worst = worst.max(rel_err(a, numeric));
        }
    }
    worst
}

fn gradient_exactness() -> Verdict {
    let start = Instant::now();
    let mut head_worst = [0.0f64; 3];
    for i in 0..100 {
        let (err, beta) = head_instance(i);
        let slot = [0.0, 1e-4, 1e-1].iter().position(|&b| b == beta).unwrap();
        head_worst[slot] = head_worst[slot].max(err);
    }
    let composite_worst = (0..100).map(composite_instance).fold(0.0f64, f64::max);
    let elapsed = start.elapsed();
    let head_max = head_worst.iter().copied().fold(0.0, f64::max);
    verdict(
        head_max <= 1e-5 && composite_worst <= 1e-4 && within(elapsed, 30.0),
        format!(
            "head max rel err {head_max:.2e} (beta 0: {:.2e}, 1e-4: {:.2e}, 1e-1: {:.2e}; limit 1e-5), composite {composite_worst:.2e} (limit 1e-4), {:.1}s (limit 30s)",
            head_worst[0],
            head_worst[1],
            head_worst[2],
            elapsed.as_secs_f64()
        ),
    )
}

// 2. Reduction identities.

fn stable_lse(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Mean over samples of `lse(all logits) - lse(true-class logits)`.
fn direct_subcenter_ce(bank: &SubCenterBank, x: &Matrix, y: &[usize]) -> f64 {
    let s = bank.subcenters_per_class();
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let logits: Vec<f64> = (0..bank.weights().rows())
            .map(|r| {
                x.row(i)
                    .iter()
                    .zip(bank.weights().row(r))
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        total += stable_lse(&logits) - stable_lse(&logits[yi * s..(yi + 1) * s]);
    }
    total / y.len() as f64
}

fn reduction_identities() -> Verdict {
    let mut softmax_err = 0.0f64;
    let mut eq3_err = 0.0f64;
    let mut beta_zero_exact = true;
    let mut coincident = true;
    let mut max_dispersion = 0.0f64;
    for i in 0..50 {
        let mut rng = RandomStream::new(30_000 + i);
        let c = 1 + rng.below(6);
        let d = 1 + rng.below(16);
        let n = 1 + rng.below(10);
        let x = normal_matrix(&mut rng, n, d);
        let y = labels(&mut rng, n, c);
        let batch = FeatureBatch::new(x.clone(), y.clone()).unwrap();

        let single = SubCenterBank::generate(c, 1, d, 1e-2, rng.next_u64(), true).unwrap();
        let loss = fsc_loss(&single, &batch, 0.0).unwrap();
        let mut plain = 0.0;
        for (r, &yi) in y.iter().enumerate() {
            let z: Vec<f64> = (0..c)
                .map(|k| {
                    x.row(r)
                        .iter()
                        .zip(single.weights().row(k))
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect();
            plain += stable_lse(&z) - z[yi];
        }
        softmax_err = softmax_err.max((loss.total - plain / n as f64).abs());

        let s = 2 + rng.below(4);
        let multi = SubCenterBank::generate(c, s, d, 1e-1, rng.next_u64(), true).unwrap();
        let loss = fsc_loss(&multi, &batch, 0.0).unwrap();
        beta_zero_exact &=
            loss.total.to_bits() == loss.cross_entropy.to_bits() && loss.compactness.is_finite();
        eq3_err = eq3_err.max((loss.total - direct_subcenter_ce(&multi, &x, &y)).abs());

        let flat = SubCenterBank::generate(c, s, d, 0.0, rng.next_u64(), true).unwrap();
        for k in 0..c {
            for j in 0..s {
                coincident &= flat.subcenter(k, j) == flat.centers().row(k);
            }
        }
        max_dispersion = max_dispersion.max(flat.dispersion_stats().unwrap().mean_pairwise_sq_dist);
    }
    verdict(
        softmax_err <= 1e-12 && eq3_err <= 1e-12 && beta_zero_exact && coincident && max_dispersion == 0.0,
        format!(
            "s=1,beta=0 vs softmax CE {softmax_err:.1e}; beta=0 vs sub-center CE {eq3_err:.1e} (total==CE bitwise: {beta_zero_exact}); sigma2=0 coincident: {coincident}, dispersion {max_dispersion}"
        ),
    )
}

// 3. Frozen head.

fn frozen_head() -> Verdict {
    let (train, _) = generate_mixture(&MixtureSpec::default()).unwrap();
    let mut detail = Vec::new();
    let mut pass = true;
    for (variant, should_change) in [
        (HeadVariant::Fsc, false),
        (HeadVariant::TrainableSubcenter, true),
    ] {
        let config = TrainConfig {
            head_variant: variant,
            epochs: 50,
            ..TrainConfig::default()
        };
        let before = Model::new(&config, train.dim(), train.classes)
            .unwrap()
            .head
            .bank()
            .content_hash();
        let (model, _) = fit(&config, &train).unwrap();
        let changed = model.head.bank().content_hash() != before;
        pass &= changed == should_change;
        detail.push(format!(
            "{}: hash {}",
            variant.as_str(),
            if changed { "changed" } else { "unchanged" }
        ));
    }
    verdict(pass, detail.join(", ") + " after 50 epochs")
}

// 4. Dispersion law.

fn dispersion_law() -> Verdict {
    let start = Instant::now();
    let (c, d, s) = (100, 512, 64);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (i, sigma2) in [1e-4, 1e-3, 1e-2].into_iter().enumerate() {
        let bank = SubCenterBank::generate(c, s, d, sigma2, 40 + i as u64, true).unwrap();
        let got = bank.dispersion_stats().unwrap().mean_pairwise_sq_dist;
        let ratio = got / (2.0 * d as f64 * sigma2);
        worst = worst.max((ratio - 1.0).abs());
        parts.push(format!("sigma2 {sigma2:e}: ratio {ratio:.4}"));
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 0.10 && within(elapsed, 10.0),
        format!(
            "{} (limit 10%), {:.1}s (limit 10s)",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    )
}

// 5 and 6 share one run of the standard grid.

struct AblationRun {
    rows: Vec<CellSummary>,
    elapsed: Duration,
}

fn ablation() -> &'static AblationRun {
    static RUN: OnceLock<AblationRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            out_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let grid = AblationGrid::standard(TrainConfig::default().beta);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let start = Instant::now();
        let rows = pool.install(|| run_ablation(&config, &grid)).unwrap();
        AblationRun {
            rows,
            elapsed: start.elapsed(),
        }
    })
}

fn cell<'a>(rows: &'a [CellSummary], label: &str) -> &'a CellSummary {
    rows.iter()
        .find(|r| r.label == label)
        .expect("standard grid cell")
}

fn ordering() -> Verdict {
    let run = ablation();
    let m = |l: &str| cell(&run.rows, l).mean_top1;
    let (fsc, fixed, trainable, softmax) = (
        m("fsc"),
        m("subcenter_fixed"),
        m("subcenter_trainable"),
        m("softmax"),
    );
    let gap = 100.0 * (fsc - softmax);
    let table: Vec<String> = run
        .rows
        .iter()
        .map(|r| format!("{} {:.4}±{:.4}", r.label, r.mean_top1, r.std_top1))
        .collect();
    verdict(
        fsc >= fixed && fixed >= trainable && gap >= 1.0 && within(run.elapsed, 900.0),
        format!(
            "{}; fsc-softmax {gap:.2} pt (limit >= 1), {:.0}s on one thread (limit 900s)",
            table.join(", "),
            run.elapsed.as_secs_f64()
        ),
    )
}

fn compactness_effect() -> Verdict {
    let run = ablation();
    let with = &cell(&run.rows, "fsc").subclass_variance;
    let without = &cell(&run.rows, "subcenter_fixed").subclass_variance;
    let wins = with.iter().zip(without).filter(|(a, b)| a < b).count();
    let pairs: Vec<String> = with
        .iter()
        .zip(without)
        .map(|(a, b)| format!("{a:.2}/{b:.2}"))
        .collect();
    verdict(
        wins >= 4,
        format!(
            "beta 1e-4 lower in {wins}/5 seeds (need 4); variance beta=1e-4/beta=0: {}",
            pairs.join(" ")
        ),
    )
}

// 7. Retrieval metric.

/// Hit at k iff some same-label sample has fewer than k samples ranked
/// ahead of it (higher cosine, or equal cosine and lower index).
fn recall_oracle(x: &Matrix, y: &[usize], k: usize) -> f64 {
    let n = x.rows();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let r = x.row(i);
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter()
                .map(|v| if norm > 0.0 { v / norm } else { *v })
                .collect()
        })
        .collect();
    let sim = |a: usize, b: usize| {
        unit[a]
            .iter()
            .zip(&unit[b])
            .map(|(p, q)| p * q)
            .sum::<f64>()
    };
    let mut hits = 0;
    for q in 0..n {
        let hit = (0..n).filter(|&j| j != q && y[j] == y[q]).any(|j| {
            let sj = sim(q, j);
            let ahead = (0..n)
                .filter(|&m| m != q && m != j)
                .filter(|&m| {
                    let sm = sim(q, m);
                    sm > sj || (sm == sj && m < j)
                })
                .count();
            ahead < k
        });
        hits += hit as usize;
    }
    hits as f64 / n as f64
}

fn retrieval() -> Verdict {
    let mut mismatches = 0;
    let mut non_monotone = 0;
    for i in 0..50 {
        let mut rng = RandomStream::new(50_000 + i);
        let n = 2 + rng.below(199);
        let d = 1 + rng.below(6);
        let classes = 1 + rng.below(6);
        let mut x = normal_matrix(&mut rng, n, d);
        if i % 2 == 0 {
            // Coarse integer grid with duplicated rows, to exercise ties.
            x.as_mut_slice().iter_mut().for_each(|v| *v = v.round());
            for r in 0..n / 4 {
                let src = x.row(rng.below(n)).to_vec();
                x.row_mut(r).copy_from_slice(&src);
            }
        }
        let y = labels(&mut rng, n, classes);
        let ks: Vec<usize> = [1, 2, 4, 8, 16].into_iter().filter(|&k| k < n).collect();
        let got = recall_at_k(&x, &y, &ks).unwrap();
        mismatches += ks
            .iter()
            .filter(|&&k| got[&k] != recall_oracle(&x, &y, k))
            .count();
        non_monotone += got
            .values()
            .zip(got.values().skip(1))
            .filter(|(a, b)| a > b)
            .count() as u32;
    }
    verdict(
        mismatches == 0 && non_monotone == 0,
        format!("50 datasets: {mismatches} mismatches against the brute-force oracle, {non_monotone} monotonicity violations"),
    )
}

// 8 and 9 go through the binary.

fn fsc(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fsc"))
        .args(args)
        .output()
        .expect("spawn fsc")
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let out = fsc(&["train", "--seed", "7", "--out", d.to_str().unwrap()]);
        if !out.status.success() {
            return verdict(
                false,
                format!("train failed: {}", String::from_utf8_lossy(&out.stderr)),
            );
        }
    }
    let files = [
        "losses.csv",
        "checkpoint.json",
        "checkpoint.bin",
        "bank.json",
        "bank.bin",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(dirs[0].join(f)).unwrap() != fs::read(dirs[1].join(f)).unwrap())
        .collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} byte-identical across two runs", files.join(", "))
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

/// Parses a sweep CSV into `(value, mean_top1)` rows, checking its shape.
fn read_sweep(path: &Path, param: &str, expected_rows: usize) -> Result<Vec<(f64, f64)>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header = format!("{param},mean_top1,std_top1,mean_dispersion");
    if lines.next() != Some(header.as_str()) {
        return Err(format!("bad header in {}", path.display()));
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(format!("bad row {line:?}"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| format!("bad number {s:?} in {line:?}"))
        };
        let (value, mean, std) = (num(f[0])?, num(f[1])?, num(f[2])?);
        if !(0.0..=1.0).contains(&mean) || std < 0.0 || (!f[3].is_empty() && num(f[3])? < 0.0) {
            return Err(format!("out-of-range row {line:?}"));
        }
        rows.push((value, mean));
    }
    if rows.len() != expected_rows {
        return Err(format!("{} rows, expected {expected_rows}", rows.len()));
    }
    Ok(rows)
}

fn rank_of(rows: &[(f64, f64)], value: f64) -> usize {
    let mine = rows.iter().find(|r| r.0 == value).expect("value present").1;
    1 + rows.iter().filter(|r| r.1 > mine).count()
}

fn sweep_sanity() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    for (param, values, chosen) in [("s", "1,2,4,8", 4.0), ("sigma2", "1e-4,1e-3,1e-2", 1e-3)] {
        let dir = tmp.path().join(param);
        let out = fsc(&[
            "sweep",
            "--param",
            param,
            "--values",
            values,
            "--out",
            dir.to_str().unwrap(),
        ]);
        if !out.status.success() {
            return verdict(
                false,
                format!(
                    "sweep {param} failed: {}",
                    String::from_utf8_lossy(&out.stderr)
                ),
            );
        }
        let expected = values.split(',').count();
        match read_sweep(&dir.join(format!("sweep_{param}.csv")), param, expected) {
            Err(e) => return verdict(false, e),
            Ok(rows) => {
                let rank = rank_of(&rows, chosen);
                pass &= rank <= 2;
                let cells: Vec<String> = rows.iter().map(|(v, m)| format!("{v}:{m:.4}")).collect();
                parts.push(format!(
                    "{param} [{}] default ranks {rank}",
                    cells.join(" ")
                ));
            }
        }
    }
    verdict(pass, parts.join("; ") + " (need rank <= 2 in each sweep)")
}

fn main() {
    type Check = fn() -> Verdict;
    let criteria: [(&str, Check); 9] = [
        ("gradient exactness", gradient_exactness),
        ("reduction identities", reduction_identities),
        ("frozen-head invariant", frozen_head),
        ("dispersion law", dispersion_law),
        ("ablation ordering", ordering),
        ("compactness effect", compactness_effect),
        ("retrieval metric", retrieval),
        ("determinism", determinism),
        ("sweep sanity", sweep_sanity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = check();
        failed += !v.pass as usize;
        println!(
            "{} [{}] {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
