//! Ensemble decision rule and classification metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_THETA: f64 = 0.5;

/// Probability vectors of one sample; absent branches are `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct BranchLikelihoods<'a> {
    pub z_i: Option<&'a [f64]>,
    pub z_t: Option<&'a [f64]>,
    pub z_f: Option<&'a [f64]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Mean of the present branch vectors.
    pub scores: Vec<f64>,
    pub label: usize,
}

/// Average the present branches; binary decisions use `p(1) ≥ θ`, larger
/// class counts take the argmax (lowest index on ties).
pub fn ensemble_predict(b: &BranchLikelihoods<'_>, theta: f64) -> Result<Prediction> {
    let present: Vec<&[f64]> = [b.z_i, b.z_t, b.z_f].into_iter().flatten().collect();
    let first = present
        .first()
        .ok_or_else(|| Error::Contract("ensemble needs at least one branch".into()))?;
    let c = first.len();
    if c < 2 || present.iter().any(|p| p.len() != c) {
        return Err(Error::Validation("branch likelihoods differ in class count".into()));
    }
    let k = present.len() as f64;
    let scores: Vec<f64> = (0..c).map(|j| present.iter().map(|p| p[j]).sum::<f64>() / k).collect();
    let label = decide(&scores, theta)?;
    Ok(Prediction { scores, label })
}

pub fn decide(scores: &[f64], theta: f64) -> Result<usize> {
    if scores.len() == 2 {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {theta}")));
        }
        return Ok(usize::from(scores[1] >= theta));
    }
    Ok(argmax(scores))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub classes: usize,
    pub acc: f64,
    pub mcc: f64,
    /// `None` when the ground truth lacks a class.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub recall: f64,
    pub jaccard: f64,
    pub macro_f1: f64,
    /// `(FPR, TPR)`; one-vs-rest for class 1 (binary) only.
    pub roc_points: Vec<(f64, f64)>,
    /// `(recall, precision)`.
    pub pr_points: Vec<(f64, f64)>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "n,acc,mcc,auroc,auprc,recall,jaccard,macro_f1";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{},{},{:.6},{:.6},{:.6}",
            self.n,
            self.acc,
            self.mcc,
            fmt_opt(self.auroc),
            fmt_opt(self.auprc),
            self.recall,
            self.jaccard,
            self.macro_f1
        )
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "classes = {}", self.classes);
        let _ = writeln!(s, "acc = {:.6}", self.acc);
        let _ = writeln!(s, "mcc = {:.6}", self.mcc);
        let _ = writeln!(s, "auroc = {}", fmt_opt(self.auroc));
        let _ = writeln!(s, "auprc = {}", fmt_opt(self.auprc));
        let _ = writeln!(s, "recall = {:.6}", self.recall);
        let _ = writeln!(s, "jaccard = {:.6}", self.jaccard);
        let _ = writeln!(s, "macro_f1 = {:.6}", self.macro_f1);
        s
    }
}

/// `C × C` confusion counts, `m[truth][pred]`.
pub fn confusion(truth: &[usize], pred: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(pred) {
        m[t][p] += 1;
    }
    m
}

/// Multi-class Matthews correlation; 0 when undefined.
pub fn mcc(m: &[Vec<u64>]) -> f64 {
    let c = m.len();
    let s: f64 = m.iter().flatten().map(|&v| v as f64).sum();
    let correct: f64 = (0..c).map(|k| m[k][k] as f64).sum();
    let t: Vec<f64> = (0..c).map(|k| m[k].iter().sum::<u64>() as f64).collect();
    let p: Vec<f64> = (0..c).map(|k| (0..c).map(|r| m[r][k]).sum::<u64>() as f64).collect();
    let tp: f64 = t.iter().zip(&p).map(|(a, b)| a * b).sum();
    let den = ((s * s - p.iter().map(|x| x * x).sum::<f64>()) * (s * s - t.iter().map(|x| x * x).sum::<f64>())).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (correct * s - tp) / den
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Mann–Whitney AUROC with ½ credit for ties, or `None` without both classes.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Sum of positive mid-ranks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Cumulative `(fp, tp)` counts at each distinct threshold, descending.
fn threshold_counts(scores: &[f64], positive: &[bool]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut fp, mut tp) = (0, 0);
    let mut out = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if positive[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((fp, tp));
    }
    out
}

fn check_both(positive: &[bool]) -> Result<(usize, usize)> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation("curve needs both classes in the ground truth".into()));
    }
    Ok((n_pos, n_neg))
}

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct threshold.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != positive.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    let (n_pos, n_neg) = check_both(positive)?;
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(
        threshold_counts(scores, positive)
            .into_iter()
            .map(|(fp, tp)| (fp as f64 / n_neg as f64, tp as f64 / n_pos as f64)),
    );
    Ok(pts)
}

/// Precision–recall points `(recall, precision)`, one per distinct threshold.
pub fn pr_curve(scores: &[f64], positive: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != positive.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    let (n_pos, _) = check_both(positive)?;
    Ok(threshold_counts(scores, positive)
        .into_iter()
        .map(|(fp, tp)| (tp as f64 / n_pos as f64, tp as f64 / (tp + fp) as f64))
        .collect())
}

/// Step-integrated average precision `Σ (R_k − R_{k−1})·P_k`.
pub fn auprc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let pts = pr_curve(scores, positive).ok()?;
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in pts {
        ap += (r - prev) * p;
        prev = r;
    }
    Some(ap)
}

/// Trapezoidal area under ordered points.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Metrics for `truth` against `pred`. `scores` holds one `[C]` score vector
/// per sample (the ensemble means); AUROC/AUPRC use the class-1 score for
/// binary tasks and are macro one-vs-rest otherwise.
pub fn compute_metrics(truth: &[usize], pred: &[usize], scores: &[Vec<f64>], classes: usize) -> Result<MetricsReport> {
    let n = truth.len();
    if n == 0 || pred.len() != n || scores.len() != n {
        return Err(Error::Validation(format!(
            "metrics need equal, non-empty inputs (truth {n}, pred {}, scores {})",
            pred.len(),
            scores.len()
        )));
    }
    if classes < 2
        || truth.iter().chain(pred).any(|&y| y >= classes)
        || scores.iter().any(|s| s.len() != classes)
    {
        return Err(Error::Validation(format!("labels or scores outside {classes} classes")));
    }
    let m = confusion(truth, pred, classes);
    let correct: u64 = (0..classes).map(|k| m[k][k]).sum();
    let per_class = |k: usize| {
        let tp = m[k][k] as f64;
        let fn_ = m[k].iter().sum::<u64>() as f64 - tp;
        let fp = (0..classes).map(|r| m[r][k]).sum::<u64>() as f64 - tp;
        (tp, fp, fn_)
    };
    let f1s: Vec<f64> = (0..classes)
        .map(|k| {
            let (tp, fp, fn_) = per_class(k);
            ratio(2.0 * tp, 2.0 * tp + fp + fn_)
        })
        .collect();
    let macro_f1 = f1s.iter().sum::<f64>() / classes as f64;
    let (recall, jaccard) = if classes == 2 {
        let (tp, fp, fn_) = per_class(1);
        (ratio(tp, tp + fn_), ratio(tp, tp + fp + fn_))
    } else {
        let mut r = 0.0;
        let mut j = 0.0;
        for k in 0..classes {
            let (tp, fp, fn_) = per_class(k);
            r += ratio(tp, tp + fn_);
            j += ratio(tp, tp + fp + fn_);
        }
        (r / classes as f64, j / classes as f64)
    };
    let one_vs_rest = |k: usize| {
        let s: Vec<f64> = scores.iter().map(|v| v[k]).collect();
        let p: Vec<bool> = truth.iter().map(|&y| y == k).collect();
        (s, p)
    };
    let (auroc_v, auprc_v, roc_points, pr_points) = if classes == 2 {
        let (s, p) = one_vs_rest(1);
        (
            auroc(&s, &p),
            auprc(&s, &p),
            roc_curve(&s, &p).unwrap_or_default(),
            pr_curve(&s, &p).unwrap_or_default(),
        )
    } else {
        let per: Vec<(Option<f64>, Option<f64>)> = (0..classes)
            .map(|k| {
                let (s, p) = one_vs_rest(k);
                (auroc(&s, &p), auprc(&s, &p))
            })
            .collect();
        let mean = |v: Vec<Option<f64>>| -> Option<f64> {
            let v: Option<Vec<f64>> = v.into_iter().collect();
            v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        (
            mean(per.iter().map(|p| p.0).collect()),
            mean(per.iter().map(|p| p.1).collect()),
            Vec::new(),
            Vec::new(),
        )
    };
    Ok(MetricsReport {
        n,
        classes,
        acc: correct as f64 / n as f64,
        mcc: mcc(&m),
        auroc: auroc_v,
        auprc: auprc_v,
        recall,
        jaccard,
        macro_f1,
        roc_points,
        pr_points,
    })
}

/// Two-column CSV of curve points.
pub fn points_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut s = format!("{header}\n");
    for (x, y) in points {
        let _ = writeln!(s, "{x:.9},{y:.9}");
    }
    s
}
