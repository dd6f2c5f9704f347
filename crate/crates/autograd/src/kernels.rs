//! Raw slice kernels. Shapes are validated by the caller.

use crate::real::Real;
use crate::shape::strides;

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn mm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] · b[k,n]ᵀ`
pub(crate) fn mm_nt_acc<T: Real>(g: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            out[i * k + p] += s;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · g[m,n]`
pub(crate) fn mm_tn_acc<T: Real>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// Geometry of a 3D convolution over `[b, c, h, w, d]` inputs.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub inp: [usize; 3],
    pub ker: [usize; 3],
    pub out: [usize; 3],
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    fn in_index(&self, b: usize, c: usize) -> usize {
        (b * self.c_in + c) * self.inp[0] * self.inp[1] * self.inp[2]
    }

    fn out_index(&self, b: usize, o: usize) -> usize {
        (b * self.c_out + o) * self.out[0] * self.out[1] * self.out[2]
    }

    fn ker_index(&self, o: usize, c: usize) -> usize {
        (o * self.c_in + c) * self.ker[0] * self.ker[1] * self.ker[2]
    }

    /// Visit every (output cell, input cell, kernel cell) triple inside the
    /// unpadded input, for one (batch, c_out, c_in) plane.
    #[inline]
    fn walk(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [ih, iw, id] = self.inp;
        let [kh, kw, kd] = self.ker;
        let [oh, ow, od] = self.out;
        let (s, p) = (self.stride as isize, self.pad as isize);
        for y in 0..oh {
            for x in 0..ow {
                for z in 0..od {
                    let o = (y * ow + x) * od + z;
                    for a in 0..kh {
                        let iy = y as isize * s + a as isize - p;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        for bb in 0..kw {
                            let ix = x as isize * s + bb as isize - p;
                            if ix < 0 || ix >= iw as isize {
                                continue;
                            }
                            let base_in = (iy as usize * iw + ix as usize) * id;
                            let base_k = (a * kw + bb) * kd;
                            for cc in 0..kd {
                                let iz = z as isize * s + cc as isize - p;
                                if iz < 0 || iz >= id as isize {
                                    continue;
                                }
                                f(o, base_in + iz as usize, base_k + cc);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv3d_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane = g.out[0] * g.out[1] * g.out[2];
    let mut out = vec![T::zero(); g.batch * g.c_out * plane];
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let ob = g.out_index(b, o);
            if let Some(bias) = bias {
                out[ob..ob + plane].iter_mut().for_each(|v| *v = bias[o]);
            }
            for c in 0..g.c_in {
                let xb = g.in_index(b, c);
                let kb = g.ker_index(o, c);
                g.walk(|oi, ii, ki| {
                    out[ob + oi] += x[xb + ii] * w[kb + ki];
                });
            }
        }
    }
    out
}

type ConvGrads<T> = (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>);

/// Returns (dx, dw, dbias); each only when requested.
pub(crate) fn conv3d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    grad: &[T],
    want: [bool; 3],
) -> ConvGrads<T> {
    let plane = g.out[0] * g.out[1] * g.out[2];
    let mut dx = want[0].then(|| vec![T::zero(); x.len()]);
    let mut dw = want[1].then(|| vec![T::zero(); w.len()]);
    let db = want[2].then(|| {
        let mut db = vec![T::zero(); g.c_out];
        for b in 0..g.batch {
            for (o, dbo) in db.iter_mut().enumerate() {
                let ob = g.out_index(b, o);
                *dbo += grad[ob..ob + plane].iter().copied().sum::<T>();
            }
        }
        db
    });
    if dx.is_none() && dw.is_none() {
        return (dx, dw, db);
    }
    for b in 0..g.batch {
        for o in 0..g.c_out {
            let ob = g.out_index(b, o);
            for c in 0..g.c_in {
                let xb = g.in_index(b, c);
                let kb = g.ker_index(o, c);
                match (&mut dx, &mut dw) {
                    (Some(dx), Some(dw)) => g.walk(|oi, ii, ki| {
                        let gv = grad[ob + oi];
                        dx[xb + ii] += gv * w[kb + ki];
                        dw[kb + ki] += gv * x[xb + ii];
                    }),
                    (Some(dx), None) => g.walk(|oi, ii, ki| {
                        dx[xb + ii] += grad[ob + oi] * w[kb + ki];
                    }),
                    (None, Some(dw)) => g.walk(|oi, ii, ki| {
                        dw[kb + ki] += grad[ob + oi] * x[xb + ii];
                    }),
                    (None, None) => unreachable!(),
                }
            }
        }
    }
    (dx, dw, db)
}

/// Non-overlapping average pooling over the three trailing axes.
pub(crate) fn avg_pool3d<T: Real>(x: &[T], planes: usize, inp: [usize; 3], k: [usize; 3]) -> Vec<T> {
    let out = [inp[0] / k[0], inp[1] / k[1], inp[2] / k[2]];
    let (in_plane, out_plane) = (inp[0] * inp[1] * inp[2], out[0] * out[1] * out[2]);
    let scale = T::one() / T::c((k[0] * k[1] * k[2]) as f64);
    let mut res = vec![T::zero(); planes * out_plane];
    for p in 0..planes {
        for y in 0..out[0] {
            for xx in 0..out[1] {
                for z in 0..out[2] {
                    let mut s = T::zero();
                    for a in 0..k[0] {
                        for b in 0..k[1] {
                            for c in 0..k[2] {
                                let iy = y * k[0] + a;
                                let ix = xx * k[1] + b;
                                let iz = z * k[2] + c;
                                s += x[p * in_plane + (iy * inp[1] + ix) * inp[2] + iz];
                            }
                        }
                    }
                    res[p * out_plane + (y * out[1] + xx) * out[2] + z] = s * scale;
                }
            }
        }
    }
    res
}

pub(crate) fn avg_pool3d_backward<T: Real>(
    grad: &[T],
    planes: usize,
    inp: [usize; 3],
    k: [usize; 3],
) -> Vec<T> {
    let out = [inp[0] / k[0], inp[1] / k[1], inp[2] / k[2]];
    let (in_plane, out_plane) = (inp[0] * inp[1] * inp[2], out[0] * out[1] * out[2]);
    let scale = T::one() / T::c((k[0] * k[1] * k[2]) as f64);
    let mut dx = vec![T::zero(); planes * in_plane];
    for p in 0..planes {
        for y in 0..out[0] {
            for xx in 0..out[1] {
                for z in 0..out[2] {
                    let gv = grad[p * out_plane + (y * out[1] + xx) * out[2] + z] * scale;
                    for a in 0..k[0] {
                        for b in 0..k[1] {
                            for c in 0..k[2] {
                                let iy = y * k[0] + a;
                                let ix = xx * k[1] + b;
                                let iz = z * k[2] + c;
                                dx[p * in_plane + (iy * inp[1] + ix) * inp[2] + iz] += gv;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Transpose `data` of `shape` so that output axis `i` is input axis `perm[i]`.
pub(crate) fn permute<T: Real>(data: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let walk_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let nd = shape.len();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            src += walk_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= walk_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_swaps_matrix_axes() {
        let data: Vec<f64> = (0..6).map(|x| x as f64).collect();
        assert_eq!(permute(&data, &[2, 3], &[1, 0]), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn permute_then_inverse_is_identity() {
        let shape = [2, 3, 4, 5];
        let data: Vec<f64> = (0..120).map(|x| x as f64).collect();
        let perm = [2, 0, 3, 1];
        let fwd = permute(&data, &shape, &perm);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        assert_eq!(permute(&fwd, &out_shape, &inverse_perm(&perm)), data);
    }
}
