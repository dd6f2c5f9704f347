mod oracle;

use oracle::metrics as brute;
use proptest::prelude::*;
use rand::Rng;
use tnf_core::metrics::{
    auprc, auroc, compute_metrics, confusion, decide, ensemble_predict, mcc, roc_curve, trapezoid, BranchLikelihoods,
    DEFAULT_THETA,
};

fn random_set(r: &mut impl Rng, classes: usize) -> (Vec<usize>, Vec<usize>, Vec<Vec<f64>>) {
    let n = r.random_range(2..=200);
    let mut truth: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
    truth[0] = 0;
    truth[1] = 1;
    let pred: Vec<usize> = truth
        .iter()
        .map(|&y| if r.random_bool(0.7) { y } else { r.random_range(0..classes) })
        .collect();
    let scores = (0..n)
        .map(|_| {
            // coarse grid so ties occur
            let raw: Vec<f64> = (0..classes).map(|_| f64::from(r.random_range(1u8..=20))).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
        .collect();
    (truth, pred, scores)
}

#[test]
fn binary_metrics_match_brute_force() {
    let mut r = oracle::rng(5);
    for _ in 0..50 {
        let (truth, pred, scores) = random_set(&mut r, 2);
        let rep = compute_metrics(&truth, &pred, &scores, 2).unwrap();
        let s1: Vec<f64> = scores.iter().map(|s| s[1]).collect();
        let pos: Vec<bool> = truth.iter().map(|&y| y == 1).collect();
        let acc = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
        assert!((rep.acc - acc).abs() < 1e-12);
        assert!((rep.mcc - brute::mcc(&truth, &pred, 2)).abs() < 1e-9);
        assert!((rep.auroc.unwrap() - brute::auroc_pairs(&s1, &pos).unwrap()).abs() < 1e-9);
        assert!((rep.auprc.unwrap() - brute::average_precision(&s1, &pos).unwrap()).abs() < 1e-9);
        assert!((rep.recall - brute::recall_class(&truth, &pred, 1)).abs() < 1e-12);
        assert!((rep.jaccard - brute::jaccard_class(&truth, &pred, 1)).abs() < 1e-12);
        assert!((rep.macro_f1 - brute::macro_f1(&truth, &pred, 2)).abs() < 1e-12);
        assert!((trapezoid(&rep.roc_points) - rep.auroc.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn multiclass_metrics_match_brute_force() {
    let mut r = oracle::rng(6);
    for _ in 0..50 {
        let (mut truth, pred, scores) = random_set(&mut r, 3);
        truth.push(2);
        let mut pred = pred;
        pred.push(0);
        let mut scores = scores;
        scores.push(vec![0.2, 0.3, 0.5]);
        let rep = compute_metrics(&truth, &pred, &scores, 3).unwrap();
        assert!((rep.mcc - brute::mcc(&truth, &pred, 3)).abs() < 1e-9);
        assert!((rep.macro_f1 - brute::macro_f1(&truth, &pred, 3)).abs() < 1e-12);
        let jac = (0..3).map(|k| brute::jaccard_class(&truth, &pred, k)).sum::<f64>() / 3.0;
        assert!((rep.jaccard - jac).abs() < 1e-12);
        let ovr = (0..3)
            .map(|k| {
                let s: Vec<f64> = scores.iter().map(|v| v[k]).collect();
                let p: Vec<bool> = truth.iter().map(|&y| y == k).collect();
                brute::auroc_pairs(&s, &p).unwrap()
            })
            .sum::<f64>()
            / 3.0;
        assert!((rep.auroc.unwrap() - ovr).abs() < 1e-9);
    }
}

#[test]
fn balanced_confusion_gives_zero_mcc() {
    let truth = [0, 0, 1, 1];
    let pred = [0, 1, 0, 1];
    let m = confusion(&truth, &pred, 2);
    assert_eq!(m, vec![vec![1, 1], vec![1, 1]]);
    assert_eq!(mcc(&m), 0.0);
}

#[test]
fn small_ranking_examples() {
    let scores = [0.9, 0.4, 0.6, 0.1];
    let pos = [true, true, false, false];
    assert!((auroc(&scores, &pos).unwrap() - 0.75).abs() < 1e-12);

    let flat = [0.5; 6];
    let pos = [true, false, true, false, false, true];
    assert_eq!(auroc(&flat, &pos), Some(0.5));
    assert_eq!(roc_curve(&flat, &pos).unwrap(), vec![(0.0, 0.0), (1.0, 1.0)]);

    let sep = [0.9, 0.8, 0.3, 0.2];
    let pos = [true, true, false, false];
    let roc = roc_curve(&sep, &pos).unwrap();
    assert_eq!(roc[0], (0.0, 0.0));
    assert!(roc.contains(&(0.0, 1.0)));
    assert_eq!(*roc.last().unwrap(), (1.0, 1.0));
    assert_eq!(auprc(&sep, &pos), Some(1.0));
}

#[test]
fn undefined_ranking_metrics() {
    assert_eq!(auroc(&[0.1, 0.7], &[true, true]), None);
    assert_eq!(auprc(&[0.1, 0.7], &[false, false]), None);
    let rep = compute_metrics(&[1, 1], &[1, 0], &[vec![0.3, 0.7], vec![0.6, 0.4]], 2).unwrap();
    assert_eq!(rep.auroc, None);
    assert!(rep.to_kv().contains("auroc = undefined"));
    assert!(compute_metrics(&[], &[], &[], 2).is_err());
}

#[test]
fn ensemble_examples() {
    let z = [0.1, 0.9];
    let all = BranchLikelihoods { z_i: Some(&z), z_t: Some(&z), z_f: Some(&z) };
    assert_eq!(ensemble_predict(&all, DEFAULT_THETA).unwrap().label, 1);

    let (a, b, c) = ([0.6, 0.4], [0.4, 0.6], [0.5, 0.5]);
    let p = ensemble_predict(&BranchLikelihoods { z_i: Some(&a), z_t: Some(&b), z_f: Some(&c) }, 0.5).unwrap();
    assert!((p.scores[1] - 0.5).abs() < 1e-15);
    assert_eq!(p.label, 1);

    let (zi, zf) = ([0.7, 0.3], [0.5, 0.5]);
    let p = ensemble_predict(&BranchLikelihoods { z_i: Some(&zi), z_t: None, z_f: Some(&zf) }, 0.5).unwrap();
    assert!((p.scores[0] - 0.6).abs() < 1e-15 && (p.scores[1] - 0.4).abs() < 1e-15);
    assert_eq!(p.label, 0);

    let none = BranchLikelihoods::default();
    assert!(matches!(ensemble_predict(&none, 0.5), Err(tnf_core::Error::Contract(_))));
    assert!(decide(&[0.5, 0.5], 1.0).is_err());
    assert_eq!(decide(&[0.3, 0.35, 0.35], 0.5).unwrap(), 1);
}

fn prob(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.01f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn ensemble_ignores_branch_order(a in prob(3), b in prob(3), c in prob(3)) {
        let p1 = ensemble_predict(&BranchLikelihoods { z_i: Some(&a), z_t: Some(&b), z_f: Some(&c) }, 0.5).unwrap();
        let p2 = ensemble_predict(&BranchLikelihoods { z_i: Some(&c), z_t: Some(&a), z_f: Some(&b) }, 0.5).unwrap();
        prop_assert_eq!(p1.label, p2.label);
        for (x, y) in p1.scores.iter().zip(&p2.scores) {
            prop_assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_branches_reduce_to_one(a in prob(2), theta in 0.05f64..0.95) {
        let all = ensemble_predict(&BranchLikelihoods { z_i: Some(&a), z_t: Some(&a), z_f: Some(&a) }, theta).unwrap();
        let one = ensemble_predict(&BranchLikelihoods { z_i: Some(&a), ..Default::default() }, theta).unwrap();
        prop_assert_eq!(all.label, one.label);
        prop_assert_eq!(one.label, usize::from(a[1] >= theta));
    }

    #[test]
    fn missing_modality_averages_the_rest(a in prob(2), c in prob(2)) {
        let p = ensemble_predict(&BranchLikelihoods { z_i: Some(&a), z_t: None, z_f: Some(&c) }, 0.5).unwrap();
        prop_assert!((p.scores[1] - (a[1] + c[1]) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn auroc_is_rank_invariant(scores in proptest::collection::vec(0.0f64..1.0, 4..40), seed in 0u64..1000) {
        let mut r = oracle::rng(seed);
        let mut pos: Vec<bool> = scores.iter().map(|_| r.random_bool(0.5)).collect();
        pos[0] = true;
        pos[1] = false;
        let a = auroc(&scores, &pos).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| s.powi(3) * 5.0 - 2.0).collect();
        prop_assert!((a - auroc(&warped, &pos).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
