mod oracle;

use oracle::fusion::*;
use oracle::*;
use tnf_autograd::{Graph, Tensor};
use tnf_core::fusion::{ConcatLinear, ConcatTransformer, CrossModalAttention, Mmtm, TokenFusion};
use tnf_core::Error;

#[test]
fn mmtm_matches_gate_transcription() {
    for seed in 0..10 {
        assert!(mmtm_error(seed) < 1e-8);
    }
}

#[test]
fn mmtm_identity_and_null_gates() {
    let mut r = rng(1);
    let vi = rand_tensor(&mut r, &[2, 3, 2, 2, 2]);
    let vt = rand_tensor(&mut r, &[2, 4]);
    let mut g = Graph::<f64>::new();
    let (xi, xt) = (g.constant(vi.clone()), g.constant(vt.clone()));
    let ones_i = g.constant(Tensor::ones([2, 3]).unwrap());
    let ones_t = g.constant(Tensor::ones([2, 4]).unwrap());
    let (a, b) = Mmtm::apply(&mut g, xi, xt, ones_i, ones_t).unwrap();
    assert_eq!(g.data(a), vi.data());
    assert_eq!(g.data(b), vt.data());
    let zeros = g.constant(Tensor::zeros([2, 3]).unwrap());
    let (a, _) = Mmtm::apply(&mut g, xi, xt, zeros, ones_t).unwrap();
    assert!(g.data(a).iter().all(|&v| v == 0.0));
    let wrong = g.constant(Tensor::ones([2, 5]).unwrap());
    let err = Mmtm::apply(&mut g, xi, xt, wrong, ones_t).unwrap_err();
    assert!(matches!(err, Error::Tensor(tnf_autograd::TensorError::Dimension { .. })));
}

#[test]
fn mmtm_preserves_shapes() {
    let (store, m) = build(3, |pb| Mmtm::new(pb, 3, 4, 5, 2).unwrap());
    let mut g = Graph::new();
    let xi = g.constant(Tensor::full([1, 3, 2, 3, 4], 0.5).unwrap());
    let xt = g.constant(Tensor::full([1, 4], -0.5).unwrap());
    let out = m.forward(&mut g, &store, xi, xt).unwrap();
    assert_eq!(g.shape(out.v_i_prime), &[1, 3, 2, 3, 4]);
    assert_eq!(g.shape(out.v_t_prime), &[1, 4]);
    assert_eq!(g.shape(out.logits), &[1, 2]);
}

#[test]
fn token_fuse_matches_transcription() {
    for seed in 0..10 {
        assert!(token_fusion_error(seed) < 1e-8);
    }
}

#[test]
fn token_fuse_zero_residual_and_gate_off() {
    let e = 8;
    let (mut store, m) = build(4, |pb| TokenFusion::new(pb, 4, e, 1, 2, 2).unwrap());
    let mut r = rng(5);
    let v = rand_tensor(&mut r, &[1, 3, e]);
    let mut g = Graph::new();
    let x = g.constant(v.clone());
    let off = m.img.forward(&mut g, &store, x, Some(0.0)).unwrap();
    let want = add(v.data(), &mlp(&store, &m.img.mlp, v.data()));
    assert!(max_diff(g.data(off), &want) < 1e-12);

    for id in [m.img.mlp.fc2.w, m.img.mlp.fc2.b] {
        store.get_mut(id).data_mut().iter_mut().for_each(|w| *w = 0.0);
    }
    let mut g = Graph::new();
    let x = g.constant(v.clone());
    let y = m.img.forward(&mut g, &store, x, None).unwrap();
    assert_eq!(g.data(y), v.data());
}

#[test]
fn token_fuse_rejects_width_mismatch() {
    let (store, m) = build(6, |pb| TokenFusion::new(pb, 4, 8, 1, 2, 2).unwrap());
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros([1, 3, 8]).unwrap());
    let b = g.constant(Tensor::zeros([1, 3, 6]).unwrap());
    let err = m.fuse_tokens(&mut g, &store, a, b, None).unwrap_err();
    assert!(matches!(err, Error::Tensor(tnf_autograd::TensorError::Dimension { .. })));
}

#[test]
fn cross_modal_attention_matches_transcription() {
    for seed in 0..10 {
        assert!(cross_modal_error(seed) < 1e-8);
    }
}

#[test]
fn cross_modal_attention_single_token_identity() {
    let e = 4;
    let (mut store, m) = build(7, |pb| CrossModalAttention::new(pb, 4, e, 1, 1, 2).unwrap());
    let eye = Tensor::<f64>::eye(e).unwrap();
    for a in [&m.to_img, &m.to_tab] {
        for l in [&a.q, &a.k, &a.v, &a.o] {
            store.assign(l.w, &eye).unwrap();
            store.assign(l.b, &Tensor::zeros([e]).unwrap()).unwrap();
        }
    }
    let mut g = Graph::new();
    let vi = g.constant(Tensor::new([1, 1, e], vec![0.3, -0.2, 0.9, 0.1]).unwrap());
    let vt = g.constant(Tensor::new([1, 1, e], vec![-0.5, 0.4, 0.0, 0.7]).unwrap());
    let (a, b) = m.attend(&mut g, &store, vi, vt).unwrap();
    assert!(max_diff(g.data(a), &[0.3, -0.2, 0.9, 0.1]) < 1e-15);
    assert!(max_diff(g.data(b), &[-0.5, 0.4, 0.0, 0.7]) < 1e-15);
}

#[test]
fn concat_transformer_matches_explicit_chain() {
    for seed in 0..10 {
        assert!(concat_transformer_error(seed) < 1e-8);
    }
}

#[test]
fn concat_transformer_token_counts() {
    let e = 8;
    let (store, m) = build(8, |pb| ConcatTransformer::new(pb, 2, e, 1, 2, 2).unwrap());
    let mut g = Graph::new();
    let vi = g.constant(Tensor::full([1, 2, 2, 2, 1], 0.1).unwrap());
    let vt = g.constant(Tensor::full([1, 6, e], 0.2).unwrap());
    let (_, joint) = m.fused_tokens(&mut g, &store, vi, vt).unwrap();
    assert_eq!(g.shape(joint)[1] + 1, 11);

    let vi = g.constant(Tensor::full([1, 2, 6, 6, 1], 0.1).unwrap());
    let vt = g.constant(Tensor::full([1, 99, e], 0.2).unwrap());
    let (img, joint) = m.fused_tokens(&mut g, &store, vi, vt).unwrap();
    assert_eq!(g.shape(img)[1], 36);
    assert_eq!(g.shape(joint), &[1, 135, e]);

    let bad = g.constant(Tensor::full([1, 6, e + 2], 0.2).unwrap());
    let err = m.fused_tokens(&mut g, &store, vi, bad).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn concat_linear_widths_and_matmul_chain() {
    let (_, big) = build(9, |pb| ConcatLinear::new(pb, 5760, 768, 2, 2).unwrap());
    assert_eq!(big.width(), 6528);

    for seed in 0..5 {
        let (store, m) = build(seed, |pb| ConcatLinear::new(pb, 6, 4, 5, 3).unwrap());
        let mut r = rng(500 + seed);
        let img = rand_tensor(&mut r, &[3, 6]);
        let tab = rand_tensor(&mut r, &[3, 4]);
        let mut g = Graph::new();
        let (a, t) = (g.constant(img.clone()), g.constant(tab.clone()));
        let out = m.forward(&mut g, &store, a, Some(t)).unwrap();
        for k in 0..3 {
            let x: Vec<f64> = sample(img.data(), 3, k).iter().chain(sample(tab.data(), 3, k)).cloned().collect();
            assert!(max_diff(sample(g.data(out.logits), 3, k), &mlp(&store, &m.mlp, &x)) < 1e-10);
        }
    }

    let (store, m) = build(10, |pb| ConcatLinear::new(pb, 6, 0, 5, 2).unwrap());
    let mut r = rng(11);
    let img = rand_tensor(&mut r, &[2, 6]);
    let mut g = Graph::new();
    let a = g.constant(img.clone());
    let out = m.forward(&mut g, &store, a, None).unwrap();
    assert!(max_diff(g.data(out.logits), &mlp(&store, &m.mlp, img.data())) < 1e-12);
}

#[test]
fn fusion_blocks_pass_finite_differences() {
    for seed in 0..3 {
        for (name, err, n) in fusion_fd(seed) {
            assert!(err < 1e-4 && n > 0, "{name}: {err}");
        }
    }
}
