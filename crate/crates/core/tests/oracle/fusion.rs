//! Per-sample transcriptions of the fusion blocks. Each `*_error` builds a
//! block from `seed`, runs it on random inputs and returns the largest
//! deviation from the loop version over every output.

use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tnf_autograd::gradcheck::random_projection;
use tnf_core::blocks::ParamBuilder;
use tnf_core::fusion::{ConcatTransformer, CrossModalAttention, Mmtm, TokenBranch, TokenFusion};

pub fn build<B>(seed: u64, f: impl FnOnce(&mut ParamBuilder<'_, f64>) -> B) -> (ParamStore<f64>, B) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = f(&mut ParamBuilder::new(&mut store, &mut rng, "fusion"));
    (store, b)
}

/// `[c, s]` image features of one sample, pooled per channel.
pub fn channel_means(v: &[f64], c: usize) -> Vec<f64> {
    let s = v.len() / c;
    v.chunks(s).map(|ch| ch.iter().sum::<f64>() / s as f64).collect()
}

pub fn mmtm_error(seed: u64) -> f64 {
    let (b, c, l, sp) = (2, 3, 4, [2, 2, 3]);
    let (store, m) = build(seed, |pb| Mmtm::new(pb, c, l, 5, 2).unwrap());
    let mut r = rng(100 + seed);
    let vi = rand_tensor(&mut r, &[b, c, sp[0], sp[1], sp[2]]);
    let vt = rand_tensor(&mut r, &[b, l]);
    let mut g = Graph::new();
    let (xi, xt) = (g.constant(vi.clone()), g.constant(vt.clone()));
    let out = m.forward(&mut g, &store, xi, xt).unwrap();
    let mut err = 0.0f64;
    for k in 0..b {
        let v_i = sample(vi.data(), b, k);
        let v_t = sample(vt.data(), b, k);
        let joint: Vec<f64> = channel_means(v_i, c).into_iter().chain(v_t.iter().cloned()).collect();
        let z = linear(&store, &m.squeeze, &joint);
        let gi: Vec<f64> = linear(&store, &m.gate_i, &z).into_iter().map(sigmoid).collect();
        let gt: Vec<f64> = linear(&store, &m.gate_t, &z).into_iter().map(sigmoid).collect();
        let s = v_i.len() / c;
        let want_i: Vec<f64> = v_i.iter().enumerate().map(|(j, v)| v * gi[j / s]).collect();
        let want_t: Vec<f64> = v_t.iter().zip(&gt).map(|(v, g)| v * g).collect();
        let joint2: Vec<f64> = channel_means(&want_i, c).into_iter().chain(want_t.iter().cloned()).collect();
        let want_z = linear(&store, &m.head, &joint2);
        err = err
            .max(max_diff(sample(g.data(out.v_i_prime), b, k), &want_i))
            .max(max_diff(sample(g.data(out.v_t_prime), b, k), &want_t))
            .max(max_diff(sample(g.data(out.logits), b, k), &want_z));
    }
    err
}

pub fn token_branch(store: &ParamStore<f64>, br: &TokenBranch, v: &[f64], gate: Option<f64>) -> Vec<f64> {
    let sa = attention(store, &br.attn, v, v);
    let e = vals(store, br.attn.q.b).len();
    let scores: Vec<f64> = match gate {
        Some(c) => vec![c; v.len() / e],
        None => linear(store, &br.score, v).into_iter().map(sigmoid).collect(),
    };
    let inner: Vec<f64> = sa.iter().enumerate().map(|(j, s)| s * scores[j / e] + v[j]).collect();
    add(v, &mlp(store, &br.mlp, &inner))
}

pub fn token_fusion_error(seed: u64) -> f64 {
    let (b, ti, tt, e) = (2, 3, 5, 8);
    let (store, m) = build(seed, |pb| TokenFusion::new(pb, 4, e, 1, 2, 2).unwrap());
    let mut r = rng(200 + seed);
    let vi = rand_tensor(&mut r, &[b, ti, e]);
    let vt = rand_tensor(&mut r, &[b, tt, e]);
    let mut g = Graph::new();
    let (xi, xt) = (g.constant(vi.clone()), g.constant(vt.clone()));
    let out = m.fuse_tokens(&mut g, &store, xi, xt, None).unwrap();
    let mut err = 0.0f64;
    for k in 0..b {
        let want_i = token_branch(&store, &m.img, sample(vi.data(), b, k), None);
        let want_t = token_branch(&store, &m.tab, sample(vt.data(), b, k), None);
        let joint: Vec<f64> = want_i.iter().chain(&want_t).cloned().collect();
        let want_z = class_head(&store, &m.head, &joint);
        err = err
            .max(max_diff(sample(g.data(out.v_i_prime), b, k), &want_i))
            .max(max_diff(sample(g.data(out.v_t_prime), b, k), &want_t))
            .max(max_diff(sample(g.data(out.logits), b, k), &want_z));
    }
    err
}

pub fn cross_modal_error(seed: u64) -> f64 {
    let (b, ti, tt, e) = (2, 4, 3, 8);
    let (store, m) = build(seed, |pb| CrossModalAttention::new(pb, 4, e, 1, 2, 2).unwrap());
    let mut r = rng(300 + seed);
    let vi = rand_tensor(&mut r, &[b, ti, e]);
    let vt = rand_tensor(&mut r, &[b, tt, e]);
    let mut g = Graph::new();
    let (xi, xt) = (g.constant(vi.clone()), g.constant(vt.clone()));
    let out = m.fuse_tokens(&mut g, &store, xi, xt).unwrap();
    assert_eq!(g.shape(out.v_i_prime), &[b, tt, e]);
    assert_eq!(g.shape(out.v_t_prime), &[b, ti, e]);
    let mut err = 0.0f64;
    for k in 0..b {
        let (si, st) = (sample(vi.data(), b, k), sample(vt.data(), b, k));
        let want_i = attention(&store, &m.to_img, st, si);
        let want_t = attention(&store, &m.to_tab, si, st);
        let joint: Vec<f64> = want_i.iter().chain(&want_t).cloned().collect();
        let want_z = class_head(&store, &m.head, &joint);
        err = err
            .max(max_diff(sample(g.data(out.v_i_prime), b, k), &want_i))
            .max(max_diff(sample(g.data(out.v_t_prime), b, k), &want_t))
            .max(max_diff(sample(g.data(out.logits), b, k), &want_z));
    }
    err
}

pub fn concat_transformer_error(seed: u64) -> f64 {
    let (b, c, e) = (2, 3, 8);
    let (store, m) = build(seed, |pb| ConcatTransformer::new(pb, c, e, 2, 2, 2).unwrap());
    let mut r = rng(400 + seed);
    let vi = rand_tensor(&mut r, &[b, c, 2, 1, 2]);
    let vt = rand_tensor(&mut r, &[b, 5, e]);
    let mut g = Graph::new();
    let (xi, xt) = (g.constant(vi.clone()), g.constant(vt.clone()));
    let out = m.forward(&mut g, &store, xi, xt).unwrap();
    let (w, bias) = (vals(&store, m.tokenizer.w), vals(&store, m.tokenizer.b));
    let mut err = 0.0f64;
    for k in 0..b {
        let v = sample(vi.data(), b, k);
        let t_img = v.len() / c;
        let mut tokens = Vec::new();
        for p in 0..t_img {
            for o in 0..e {
                tokens.push(bias[o] + (0..c).map(|ch| w[o * c + ch] * v[ch * t_img + p]).sum::<f64>());
            }
        }
        tokens.extend_from_slice(sample(vt.data(), b, k));
        let want_z = class_head(&store, &m.head, &tokens);
        err = err.max(max_diff(sample(g.data(out.logits), b, k), &want_z));
    }
    err
}

/// Finite-difference relative errors of the four attention/gating blocks,
/// over inputs and parameters. Returns `(name, error, checked)` per block.
pub fn fusion_fd(seed: u64) -> Vec<(&'static str, f64, usize)> {
    let h = 1e-5;
    let mut r = rng(600 + seed);
    let mut out = Vec::new();

    let (store, m) = build(seed, |pb| Mmtm::new(pb, 2, 3, 4, 2).unwrap());
    let inputs = [rand_tensor(&mut r, &[2, 2, 2, 1, 2]), rand_tensor(&mut r, &[2, 3])];
    let (err, n) = fd_check_with_params(&store, &inputs, h, |g, s, v| {
        let o = m.forward(g, s, v[0], v[1]).unwrap();
        random_projection(g, o.logits, seed).unwrap()
    });
    out.push(("mmtm", err, n));

    let (store, m) = build(seed, |pb| ConcatTransformer::new(pb, 2, 4, 1, 2, 2).unwrap());
    let inputs = [rand_tensor(&mut r, &[1, 2, 2, 1, 1]), rand_tensor(&mut r, &[1, 2, 4])];
    let (err, n) = fd_check_with_params(&store, &inputs, h, |g, s, v| {
        let o = m.forward(g, s, v[0], v[1]).unwrap();
        random_projection(g, o.logits, seed).unwrap()
    });
    out.push(("concat_transformer", err, n));

    let (store, m) = build(seed, |pb| TokenFusion::new(pb, 2, 4, 1, 2, 2).unwrap());
    let inputs = [rand_tensor(&mut r, &[1, 2, 4]), rand_tensor(&mut r, &[1, 3, 4])];
    let (err, n) = fd_check_with_params(&store, &inputs, h, |g, s, v| {
        let o = m.fuse_tokens(g, s, v[0], v[1], None).unwrap();
        random_projection(g, o.logits, seed).unwrap()
    });
    out.push(("token_fusion", err, n));

    let (store, m) = build(seed, |pb| CrossModalAttention::new(pb, 2, 4, 1, 2, 2).unwrap());
    let inputs = [rand_tensor(&mut r, &[1, 3, 4]), rand_tensor(&mut r, &[1, 2, 4])];
    let (err, n) = fd_check_with_params(&store, &inputs, h, |g, s, v| {
        let o = m.fuse_tokens(g, s, v[0], v[1]).unwrap();
        random_projection(g, o.logits, seed).unwrap()
    });
    out.push(("cross_modal_attention", err, n));
    out
}
