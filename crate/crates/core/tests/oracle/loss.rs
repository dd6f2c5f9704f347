//! Cross-entropy and contrastive loss by explicit loops.

use super::softmax;

pub fn ce_row(logits: &[f64], y: usize) -> f64 {
    -softmax(logits)[y].ln()
}

pub fn ce_mean(logits: &[f64], ys: &[usize]) -> f64 {
    let c = logits.len() / ys.len();
    ys.iter().enumerate().map(|(k, &y)| ce_row(&logits[k * c..(k + 1) * c], y)).sum::<f64>() / ys.len() as f64
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Sum over rows of `a` of the negative log-ratio of the matched pair
/// against the mismatched pairs, `n` rows each.
pub fn clip_oracle(a: &[f64], b: &[f64], n: usize, tau: f64) -> f64 {
    let e = a.len() / n;
    let row = |x: &[f64], k: usize| x[k * e..(k + 1) * e].to_vec();
    let mut total = 0.0;
    for j in 0..n {
        let num = (cos(&row(a, j), &row(b, j)) / tau).exp();
        let mut den = 0.0;
        for k in 0..n {
            if k != j {
                den += (cos(&row(a, j), &row(b, k)) / tau).exp();
            }
        }
        total -= (num / den).ln();
    }
    total
}
