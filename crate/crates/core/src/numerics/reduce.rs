use crate::error::{ensure, Result};

/// `max(v) + ln Σ exp(v_i − max(v))`, summed left to right.
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    ensure!(!v.is_empty(), "logsumexp of an empty vector");
    ensure!(
        v.iter().all(|x| x.is_finite()),
        "logsumexp input contains non-finite values"
    );
    Ok(logsumexp_unchecked(v))
}

pub(crate) fn logsumexp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Replaces `v` by `softmax(v)` and returns the log-normalizer.
pub fn softmax_in_place(v: &mut [f64]) -> Result<f64> {
    let lse = logsumexp(v)?;
    for x in v.iter_mut() {
        *x = (*x - lse).exp();
    }
    Ok(lse)
}
