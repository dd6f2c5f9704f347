//! Brute-force metric and ranking oracles.

/// Matthews correlation as the correlation of one-hot truth and prediction
/// indicator matrices.
pub fn mcc(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    let n = truth.len() as f64;
    let onehot = |v: &[usize]| -> Vec<Vec<f64>> {
        v.iter().map(|&y| (0..classes).map(|k| f64::from(u8::from(k == y))).collect()).collect()
    };
    let (x, y) = (onehot(truth), onehot(pred));
    let cov = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> f64 {
        (0..classes)
            .map(|k| {
                let ma = a.iter().map(|r| r[k]).sum::<f64>() / n;
                let mb = b.iter().map(|r| r[k]).sum::<f64>() / n;
                a.iter().zip(b).map(|(ra, rb)| (ra[k] - ma) * (rb[k] - mb)).sum::<f64>()
            })
            .sum()
    };
    let den = (cov(&x, &x) * cov(&y, &y)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        cov(&x, &y) / den
    }
}

/// Fraction of (positive, negative) pairs ordered correctly, ties ½.
pub fn auroc_pairs(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if positive[i] && !positive[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Average precision by recounting at every distinct threshold.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    if n_pos == 0.0 || n_pos == positive.len() as f64 {
        return None;
    }
    let mut th: Vec<f64> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let mut prev_r = 0.0;
    let mut ap = 0.0;
    for t in th {
        let tp = scores.iter().zip(positive).filter(|(s, p)| **s >= t && **p).count() as f64;
        let fp = scores.iter().zip(positive).filter(|(s, p)| **s >= t && !**p).count() as f64;
        let r = tp / n_pos;
        ap += (r - prev_r) * tp / (tp + fp);
        prev_r = r;
    }
    Some(ap)
}

fn counts(truth: &[usize], pred: &[usize], k: usize) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == k, p == k) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fn_ += 1.0,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

/// |pred ∩ truth| / |pred ∪ truth| over the index sets of class `k`.
pub fn jaccard_class(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    let inter = truth.iter().zip(pred).filter(|(t, p)| **t == k && **p == k).count() as f64;
    let union = truth.iter().zip(pred).filter(|(t, p)| **t == k || **p == k).count() as f64;
    div(inter, union)
}

pub fn f1_class(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    let (tp, fp, fn_) = counts(truth, pred, k);
    let prec = div(tp, tp + fp);
    let rec = div(tp, tp + fn_);
    div(2.0 * prec * rec, prec + rec)
}

pub fn recall_class(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    let (tp, _, fn_) = counts(truth, pred, k);
    div(tp, tp + fn_)
}

pub fn macro_f1(truth: &[usize], pred: &[usize], classes: usize) -> f64 {
    (0..classes).map(|k| f1_class(truth, pred, k)).sum::<f64>() / classes as f64
}

/// Shapley values as the mean marginal contribution over every ordering.
pub fn shapley_by_permutations(n: usize, f: impl Fn(u32) -> f64) -> Vec<f64> {
    let mut phi = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut count = 0usize;
    permute(&mut order, 0, &mut |perm| {
        let mut mask = 0u32;
        for &i in perm {
            let before = f(mask);
            mask |= 1 << i;
            phi[i] += f(mask) - before;
        }
        count += 1;
    });
    phi.iter().map(|p| p / count as f64).collect()
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}
