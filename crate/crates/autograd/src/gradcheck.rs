//! Central finite-difference checking of analytic gradients (64-bit).

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Denominator floor: gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn eval<F>(inputs: &[Tensor<f64>], f: &F, track: bool) -> Result<(Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.leaf(t.clone().with_requires_grad(track)))
        .collect();
    let root = f(&mut g, &vars)?;
    if g.value(root).numel() != 1 {
        return Err(TensorError::Contract("gradcheck function must return a scalar".into()));
    }
    Ok((g, vars, root))
}

/// Compare `∂f/∂inputs` from [`Graph::backward`] against central differences
/// with step `h`. `f` must build a scalar from the given input vars.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (mut g, vars, root) = eval(inputs, &f, true)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            probe[i].data_mut()[j] = orig + h;
            let (gp, _, rp) = eval(&probe, &f, false)?;
            probe[i].data_mut()[j] = orig - h;
            let (gm, _, rm) = eval(&probe, &f, false)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (gp.data(rp)[0] - gm.data(rm)[0]) / (2.0 * h);
            let a = analytic[i][j];
            let err = rel_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, j, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Reduce `v` to a scalar by a seeded random weighting, so that a gradient
/// check of the scalar exercises the full vector-Jacobian product.
pub fn random_projection(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let mut rng = StdRng::seed_from_u64(seed);
    let shape = g.shape(v).to_vec();
    let w = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))?;
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    g.sum(p)
}

/// One primitive's finite-difference case, parameterized by a seed that
/// draws fresh shapes (≤ 6 per axis) and values.
pub struct PrimitiveCase {
    pub name: &'static str,
    pub run: fn(u64) -> Result<GradCheckReport>,
}

/// Step used by the primitive cases.
pub const STEP: f64 = 1e-4;

fn rand_tensor(rng: &mut StdRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)).expect("valid shape")
}

/// Values bounded away from zero, for ops with a kink there.
fn rand_tensor_off_zero(rng: &mut StdRng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .expect("valid shape")
}

fn dims(rng: &mut StdRng, n: usize, max: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=max)).collect()
}

fn unary_case(seed: u64, f: fn(&mut Graph<f64>, Var) -> Result<Var>, off_zero: bool) -> Result<GradCheckReport> {
    let mut rng = StdRng::seed_from_u64(seed);
    let nd = rng.random_range(1..=3);
    let shape = dims(&mut rng, nd, 4);
    let x = if off_zero {
        rand_tensor_off_zero(&mut rng, &shape)
    } else {
        rand_tensor(&mut rng, &shape)
    };
    check(&[x], STEP, move |g, v| {
        let y = f(g, v[0])?;
        random_projection(g, y, seed ^ 0x5eed)
    })
}

/// Random operand shapes that broadcast: `b` drops leading axes and sets
/// some remaining axes to 1.
fn broadcast_pair(rng: &mut StdRng) -> (Vec<usize>, Vec<usize>) {
    let nd = rng.random_range(1..=4);
    let a = dims(rng, nd, 4);
    let drop = rng.random_range(0..nd);
    let b = a[drop..]
        .iter()
        .map(|&d| if rng.random_bool(0.3) { 1 } else { d })
        .collect();
    if rng.random_bool(0.5) {
        (a, b)
    } else {
        (b, a)
    }
}

fn binary_case(seed: u64, f: fn(&mut Graph<f64>, Var, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut rng = StdRng::seed_from_u64(seed);
    let (sa, sb) = broadcast_pair(&mut rng);
    let a = rand_tensor(&mut rng, &sa);
    let b = rand_tensor(&mut rng, &sb);
    check(&[a, b], STEP, move |g, v| {
        let y = f(g, v[0], v[1])?;
        random_projection(g, y, seed ^ 0xb1)
    })
}

pub fn primitive_suite() -> Vec<PrimitiveCase> {
    vec![
        PrimitiveCase {
            name: "add",
            run: |s| binary_case(s, |g, a, b| g.add(a, b)),
        },
        PrimitiveCase {
            name: "sub",
            run: |s| binary_case(s, |g, a, b| g.sub(a, b)),
        },
        PrimitiveCase {
            name: "mul",
            run: |s| binary_case(s, |g, a, b| g.mul(a, b)),
        },
        PrimitiveCase {
            name: "scale",
            run: |s| unary_case(s, |g, x| g.scale(x, -1.7), false),
        },
        PrimitiveCase {
            name: "relu",
            run: |s| unary_case(s, |g, x| g.relu(x), true),
        },
        PrimitiveCase {
            name: "sigmoid",
            run: |s| unary_case(s, |g, x| g.sigmoid(x), false),
        },
        PrimitiveCase {
            name: "tanh",
            run: |s| unary_case(s, |g, x| g.tanh(x), false),
        },
        PrimitiveCase {
            name: "gelu",
            run: |s| unary_case(s, |g, x| g.gelu(x), false),
        },
        PrimitiveCase {
            name: "exp",
            run: |s| unary_case(s, |g, x| g.exp(x), false),
        },
        PrimitiveCase {
            name: "softmax",
            run: |s| unary_case(s, |g, x| g.softmax(x), false),
        },
        PrimitiveCase {
            name: "sum",
            run: |s| unary_case(s, |g, x| g.sum(x), false),
        },
        PrimitiveCase {
            name: "mean",
            run: |s| unary_case(s, |g, x| g.mean(x), false),
        },
        PrimitiveCase {
            name: "matmul",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let d = dims(&mut rng, 3, 6);
                let nl = rng.random_range(0..=2);
                let lead = dims(&mut rng, nl, 3);
                let mut sa = lead.clone();
                sa.extend([d[0], d[1]]);
                let a = rand_tensor(&mut rng, &sa);
                let b = rand_tensor(&mut rng, &[d[1], d[2]]);
                check(&[a, b], STEP, move |g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "batched_matmul",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let d = dims(&mut rng, 3, 5);
                let nl = rng.random_range(1..=2);
                let lead = dims(&mut rng, nl, 3);
                let (mut sa, mut sb) = (lead.clone(), lead);
                sa.extend([d[0], d[1]]);
                sb.extend([d[1], d[2]]);
                let a = rand_tensor(&mut rng, &sa);
                let b = rand_tensor(&mut rng, &sb);
                check(&[a, b], STEP, move |g, v| {
                    let y = g.matmul(v[0], v[1])?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "permute",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let shape = dims(&mut rng, 4, 4);
                let mut perm: Vec<usize> = (0..4).collect();
                for i in (1..4).rev() {
                    perm.swap(i, rng.random_range(0..=i));
                }
                let x = rand_tensor(&mut rng, &shape);
                check(&[x], STEP, move |g, v| {
                    let y = g.permute(v[0], &perm)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "reshape",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let shape = dims(&mut rng, 3, 4);
                let x = rand_tensor(&mut rng, &shape);
                check(&[x], STEP, move |g, v| {
                    let y = g.reshape(v[0], &[shape[0] * shape[1], shape[2]])?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "cross_entropy",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let (b, c) = (rng.random_range(1..=6), rng.random_range(2..=6));
                let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
                let x = rand_tensor(&mut rng, &[b, c]);
                let reduction = if seed % 2 == 0 {
                    crate::graph::Reduction::Mean
                } else {
                    crate::graph::Reduction::Sum
                };
                check(&[x], STEP, move |g, v| g.cross_entropy(v[0], &labels, reduction))
            },
        },
        PrimitiveCase {
            name: "layer_norm",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let shape = dims(&mut rng, 2, 6);
                let e = shape[1].max(2);
                let x = rand_tensor(&mut rng, &[shape[0], e]);
                let gamma = rand_tensor(&mut rng, &[e]);
                let beta = rand_tensor(&mut rng, &[e]);
                check(&[x, gamma, beta], STEP, move |g, v| {
                    let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "mean_trailing",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let shape = dims(&mut rng, 5, 3);
                let x = rand_tensor(&mut rng, &shape);
                check(&[x], STEP, move |g, v| {
                    let y = g.mean_trailing(v[0], 2)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "avg_pool3d",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let mut shape = dims(&mut rng, 2, 2);
                shape.extend(dims(&mut rng, 3, 6).iter().map(|&d| d.max(2)));
                let x = rand_tensor(&mut rng, &shape);
                check(&[x], STEP, move |g, v| {
                    let y = g.avg_pool3d(v[0], [2, 2, 2])?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "conv3d",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let (b, c, o) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=3));
                let sp = dims(&mut rng, 3, 5).iter().map(|&d| d.max(2)).collect::<Vec<_>>();
                let k = rng.random_range(1..=3).min(*sp.iter().min().unwrap_or(&1));
                let stride = rng.random_range(1..=2);
                let pad = rng.random_range(0..=1);
                let x = rand_tensor(&mut rng, &[b, c, sp[0], sp[1], sp[2]]);
                let w = rand_tensor(&mut rng, &[o, c, k, k, k]);
                let bias = rand_tensor(&mut rng, &[o]);
                check(&[x, w, bias], STEP, move |g, v| {
                    let y = g.conv3d(v[0], v[1], Some(v[2]), stride, pad)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "concat",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let shape = dims(&mut rng, 3, 4);
                let axis = rng.random_range(0..3);
                let mut s2 = shape.clone();
                s2[axis] = rng.random_range(1..=3);
                let a = rand_tensor(&mut rng, &shape);
                let b = rand_tensor(&mut rng, &s2);
                check(&[a, b], STEP, move |g, v| {
                    let y = g.concat(&[v[0], v[1], v[0]], axis)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "slice",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let mut shape = dims(&mut rng, 3, 5);
                let axis = rng.random_range(0..3);
                shape[axis] = shape[axis].max(2);
                let start = rng.random_range(0..shape[axis]);
                let len = rng.random_range(1..=shape[axis] - start);
                let x = rand_tensor(&mut rng, &shape);
                check(&[x], STEP, move |g, v| {
                    let y = g.slice(v[0], axis, start, len)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "broadcast_to",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let target = dims(&mut rng, 3, 4);
                let src: Vec<usize> = target.iter().map(|&d| if rng.random_bool(0.5) { 1 } else { d }).collect();
                let x = rand_tensor(&mut rng, &src);
                check(&[x], STEP, move |g, v| {
                    let y = g.broadcast_to(v[0], &target)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "select_rows",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let shape = dims(&mut rng, 2, 5);
                let rows: Vec<usize> = (0..rng.random_range(1..=6)).map(|_| rng.random_range(0..shape[0])).collect();
                let x = rand_tensor(&mut rng, &shape);
                check(&[x], STEP, move |g, v| {
                    let y = g.select_rows(v[0], &rows)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "l2_normalize",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let shape = dims(&mut rng, 2, 5);
                let x = rand_tensor_off_zero(&mut rng, &shape);
                check(&[x], STEP, move |g, v| {
                    let y = g.l2_normalize(v[0])?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "logsumexp_masked",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let (r, c) = (rng.random_range(1..=5), rng.random_range(2..=5));
                let mut mask: Vec<bool> = (0..r * c).map(|_| rng.random_bool(0.6)).collect();
                for row in 0..r {
                    mask[row * c + rng.random_range(0..c)] = true;
                }
                let x = rand_tensor(&mut rng, &[r, c]);
                check(&[x], STEP, move |g, v| {
                    let y = g.logsumexp_masked(v[0], &mask)?;
                    random_projection(g, y, seed)
                })
            },
        },
        PrimitiveCase {
            name: "multi_head_attention",
            run: |seed| {
                let mut rng = StdRng::seed_from_u64(seed);
                let heads = rng.random_range(1..=2);
                let e = heads * rng.random_range(1..=3);
                let (b, tq, tk) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
                let mut inputs = vec![
                    rand_tensor(&mut rng, &[b, tq, e]),
                    rand_tensor(&mut rng, &[b, tk, e]),
                ];
                for _ in 0..4 {
                    inputs.push(rand_tensor(&mut rng, &[e, e]));
                    inputs.push(rand_tensor(&mut rng, &[e]));
                }
                check(&inputs, STEP, move |g, v| {
                    let w = crate::nn::AttentionVars {
                        wq: v[2],
                        bq: v[3],
                        wk: v[4],
                        bk: v[5],
                        wv: v[6],
                        bv: v[7],
                        wo: v[8],
                        bo: v[9],
                    };
                    let y = crate::nn::multi_head_attention(g, v[0], v[1], v[1], &w, heads)?;
                    random_projection(g, y, seed)
                })
            },
        },
    ]
}
