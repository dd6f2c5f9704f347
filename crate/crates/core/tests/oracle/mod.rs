//! Plain-loop reference implementations used by the integration and
//! acceptance tests. Everything here works on row-major `f64` slices of a
//! single sample and reads weights straight out of a parameter store.
#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tnf_autograd::gradcheck::rel_error;
use tnf_autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use tnf_core::blocks::{Attention, ClassTokenHead, LayerNorm, Linear, Mlp, TransformerBlock, LN_EPS};

pub fn vals(store: &ParamStore<f64>, id: ParamId) -> Vec<f64> {
    store.get(id).data().to_vec()
}

pub fn rand_vec(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn rand_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), rand_vec(rng, shape.iter().product())).unwrap()
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `x: [n, d_in]` times `w: [d_in, d_out]` plus `b`.
pub fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let d_out = b.len();
    let d_in = w.len() / d_out;
    let n = x.len() / d_in;
    let mut out = vec![0.0; n * d_out];
    for r in 0..n {
        for o in 0..d_out {
            let mut acc = b[o];
            for i in 0..d_in {
                acc += x[r * d_in + i] * w[i * d_out + o];
            }
            out[r * d_out + o] = acc;
        }
    }
    out
}

pub fn linear(store: &ParamStore<f64>, l: &Linear, x: &[f64]) -> Vec<f64> {
    affine(x, &vals(store, l.w), &vals(store, l.b))
}

pub fn mlp(store: &ParamStore<f64>, m: &Mlp, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(store, &m.fc1, x).into_iter().map(gelu).collect();
    linear(store, &m.fc2, &h)
}

pub fn layer_norm(store: &ParamStore<f64>, ln: &LayerNorm, x: &[f64]) -> Vec<f64> {
    let (g, b) = (vals(store, ln.gamma), vals(store, ln.beta));
    let e = g.len();
    x.chunks(e)
        .flat_map(|row| {
            let mean = row.iter().sum::<f64>() / e as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * inv * g[j] + b[j])
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Multi-head attention with queries from `query: [t_q, e]` and keys and
/// values from `context: [t_k, e]`.
pub fn attention(store: &ParamStore<f64>, a: &Attention, query: &[f64], context: &[f64]) -> Vec<f64> {
    let e = vals(store, a.q.b).len();
    let (tq, tk) = (query.len() / e, context.len() / e);
    let q = linear(store, &a.q, query);
    let k = linear(store, &a.k, context);
    let v = linear(store, &a.v, context);
    let dh = e / a.heads;
    let mut ctx = vec![0.0; tq * e];
    for h in 0..a.heads {
        for i in 0..tq {
            let scores: Vec<f64> = (0..tk)
                .map(|j| (0..dh).map(|d| q[i * e + h * dh + d] * k[j * e + h * dh + d]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let p = softmax(&scores);
            for d in 0..dh {
                ctx[i * e + h * dh + d] = (0..tk).map(|j| p[j] * v[j * e + h * dh + d]).sum();
            }
        }
    }
    linear(store, &a.o, &ctx)
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn block(store: &ParamStore<f64>, b: &TransformerBlock, x: &[f64]) -> Vec<f64> {
    let h = layer_norm(store, &b.ln1, x);
    let x = add(x, &attention(store, &b.attn, &h, &h));
    let h = layer_norm(store, &b.ln2, &x);
    add(&x, &mlp(store, &b.mlp, &h))
}

/// Logits of a class-token head over `tokens: [t, e]`.
pub fn class_head(store: &ParamStore<f64>, h: &ClassTokenHead, tokens: &[f64]) -> Vec<f64> {
    let mut x = vals(store, h.cls);
    let e = x.len();
    x.extend_from_slice(tokens);
    for b in &h.blocks {
        x = block(store, b, &x);
    }
    let x = layer_norm(store, &h.ln, &x);
    linear(store, &h.head, &x[..e])
}

/// Rows `k*n .. (k+1)*n` of a batched buffer.
pub fn sample(data: &[f64], batch: usize, k: usize) -> &[f64] {
    let n = data.len() / batch;
    &data[k * n..(k + 1) * n]
}

/// Worst relative error between analytic and central-difference gradients
/// of a scalar `f`, over the inputs and every parameter the graph reaches.
pub fn fd_check_with_params(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    f: impl Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Var,
) -> (f64, usize) {
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>], track: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone().with_requires_grad(track))).collect();
        let root = f(&mut g, store, &vars);
        (g, vars, root)
    };
    let (mut g, vars, root) = eval(store, inputs, true);
    g.backward(root).unwrap();
    let value = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| {
        let (g, _, r) = eval(store, inputs, false);
        g.data(r)[0]
    };
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut probe = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let grad = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = value(store, &probe);
            probe[i].data_mut()[j] = orig - h;
            let down = value(store, &probe);
            probe[i].data_mut()[j] = orig;
            worst = worst.max(rel_error(grad[j], (up - down) / (2.0 * h)));
            checked += 1;
        }
    }
    let mut s = store.clone();
    for (id, grad, reached) in g.param_grads() {
        let (Some(grad), true) = (grad, reached) else { continue };
        for j in 0..grad.len() {
            let orig = store.get(id).data()[j];
            s.get_mut(id).data_mut()[j] = orig + h;
            let up = value(&s, inputs);
            s.get_mut(id).data_mut()[j] = orig - h;
            let down = value(&s, inputs);
            s.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(rel_error(grad[j], (up - down) / (2.0 * h)));
            checked += 1;
        }
    }
    (worst, checked)
}

pub mod metrics;
pub mod fusion;
pub mod loss;
