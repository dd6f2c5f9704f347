//! Shape arithmetic shared by the graph ops.

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}

/// Numpy-style broadcast of two shapes, or `None` when incompatible.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![1; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `src` laid over `out`, with 0 on broadcast axes.
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(src);
    let pad = out.len() - src.len();
    (0..out.len())
        .map(|i| {
            if i < pad || src[i - pad] == 1 {
                0
            } else {
                s[i - pad]
            }
        })
        .collect()
}

/// How the flat index of a broadcast operand relates to the output index.
pub(crate) enum BroadcastPlan {
    Same,
    /// Operand is repeated every `period` output elements (a suffix shape).
    Suffix { period: usize },
    /// Operand value is held for `run` consecutive output elements (a prefix shape).
    Prefix { run: usize },
    General { strides: Vec<usize> },
}

impl BroadcastPlan {
    pub(crate) fn new(src: &[usize], out: &[usize]) -> Self {
        if src == out {
            return BroadcastPlan::Same;
        }
        let pad = out.len() - src.len();
        let src_padded: Vec<usize> = std::iter::repeat_n(1, pad).chain(src.iter().copied()).collect();
        // suffix: leading padded axes are 1, trailing axes equal
        if let Some(first) = src_padded.iter().position(|&d| d != 1) {
            if src_padded[..first].iter().all(|&d| d == 1) && src_padded[first..] == out[first..] {
                return BroadcastPlan::Suffix {
                    period: numel(&out[first..]),
                };
            }
            let last = src_padded.iter().rposition(|&d| d != 1).unwrap_or(0);
            if src_padded[..=last] == out[..=last] && src_padded[last + 1..].iter().all(|&d| d == 1) {
                return BroadcastPlan::Prefix {
                    run: numel(&out[last + 1..]),
                };
            }
        } else {
            // scalar-like operand
            return BroadcastPlan::Prefix { run: numel(out) };
        }
        BroadcastPlan::General {
            strides: broadcast_strides(src, out),
        }
    }

    /// Call `f(out_index, src_index)` for every output element.
    pub(crate) fn for_each(&self, out_shape: &[usize], mut f: impl FnMut(usize, usize)) {
        let n = numel(out_shape);
        match self {
            BroadcastPlan::Same => (0..n).for_each(|i| f(i, i)),
            BroadcastPlan::Suffix { period } => (0..n).for_each(|i| f(i, i % period)),
            BroadcastPlan::Prefix { run } => (0..n).for_each(|i| f(i, i / run)),
            BroadcastPlan::General { strides } => {
                let nd = out_shape.len();
                let mut idx = vec![0usize; nd];
                let mut src = 0usize;
                for o in 0..n {
                    f(o, src);
                    for ax in (0..nd).rev() {
                        idx[ax] += 1;
                        src += strides[ax];
                        if idx[ax] < out_shape[ax] {
                            break;
                        }
                        src -= strides[ax] * idx[ax];
                        idx[ax] = 0;
                    }
                }
            }
        }
    }
}

/// Per-output-element lookup of a broadcast operand's flat index.
pub(crate) enum IndexMap {
    Same,
    Suffix(usize),
    Prefix(usize),
    Table(Vec<usize>),
}

impl IndexMap {
    pub(crate) fn new(src: &[usize], out: &[usize]) -> Self {
        match BroadcastPlan::new(src, out) {
            BroadcastPlan::Same => IndexMap::Same,
            BroadcastPlan::Suffix { period } => IndexMap::Suffix(period),
            BroadcastPlan::Prefix { run } => IndexMap::Prefix(run),
            plan @ BroadcastPlan::General { .. } => {
                let mut table = Vec::with_capacity(numel(out));
                plan.for_each(out, |_, s| table.push(s));
                IndexMap::Table(table)
            }
        }
    }

    #[inline]
    pub(crate) fn at(&self, o: usize) -> usize {
        match self {
            IndexMap::Same => o,
            IndexMap::Suffix(p) => o % p,
            IndexMap::Prefix(r) => o / r,
            IndexMap::Table(t) => t[o],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gather(src: &[usize], out: &[usize]) -> Vec<usize> {
        let mut v = Vec::new();
        BroadcastPlan::new(src, out).for_each(out, |_, s| v.push(s));
        v
    }

    fn gather_general(src: &[usize], out: &[usize]) -> Vec<usize> {
        let mut v = Vec::new();
        BroadcastPlan::General {
            strides: broadcast_strides(src, out),
        }
        .for_each(out, |_, s| v.push(s));
        v
    }

    #[test]
    fn fast_paths_agree_with_general_walk() {
        let cases: &[(&[usize], &[usize])] = &[
            (&[3], &[2, 3]),
            (&[2, 1], &[2, 3]),
            (&[2, 3, 1, 1], &[2, 3, 4, 5]),
            (&[1], &[4, 2]),
            (&[4, 1, 5], &[4, 3, 5]),
            (&[1, 3, 1], &[2, 3, 4]),
        ];
        for (src, out) in cases {
            assert_eq!(gather(src, out), gather_general(src, out), "{src:?} -> {out:?}");
        }
    }

    #[test]
    fn broadcast_shape_rules() {
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]), Some(vec![2, 3, 4]));
        assert_eq!(broadcast_shape(&[2, 3], &[4]), None);
    }
}
