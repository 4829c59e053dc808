//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Only the handful of operations the graph network needs are provided.
//! Each op stores what its backward pass needs; [`Tape::backward`] walks the
//! tape once in reverse.

use super::tensor::{matmul, matmul_nt, matmul_tn, Mat, Real};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Relu(usize),
    ConcatCols(Vec<usize>),
    SliceCols { src: usize, start: usize },
    ConcatRows(Vec<usize>),
    Gather { src: usize, index: Vec<usize> },
    SegmentMax { src: usize, argmax: Vec<usize> },
    ScatterMean {
        src: usize,
        index: Vec<usize>,
        counts: Vec<usize>,
        fallback: Option<usize>,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        block: usize,
        probs: Vec<f64>,
    },
    CosineLoss {
        pred: usize,
        target: Mat<T>,
        present: Vec<bool>,
    },
}

pub struct Tape<T> {
    values: Vec<Mat<T>>,
    ops: Vec<Op<T>>,
    track_kinks: bool,
    signature: u64,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mix(h: u64, x: u64) -> u64 {
    (h.rotate_left(5) ^ x).wrapping_mul(0x100_0000_01b3)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            ops: Vec::new(),
            track_kinks: false,
            signature: 0xcbf2_9ce4_8422_2325,
        }
    }

    /// Records ReLU sign patterns and max-pool winners into [`Tape::signature`].
    pub fn with_kink_tracking() -> Self {
        Self {
            track_kinks: true,
            ..Self::new()
        }
    }

    /// Hash of every piecewise choice made so far (only with kink tracking).
    pub fn signature(&self) -> u64 {
        self.signature
    }

    fn push(&mut self, value: Mat<T>, op: Op<T>) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.values[v.0]
    }

    pub fn leaf(&mut self, m: Mat<T>) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = matmul(&self.values[a.0], &self.values[b.0]);
        self.push(out, Op::MatMul(a.0, b.0))
    }

    /// Adds a `1 × m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (&self.values[a.0], &self.values[bias.0]);
        assert_eq!((b.rows, b.cols), (1, x.cols), "bias shape");
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o = *o + bv;
            }
        }
        self.push(out, Op::AddRow(a.0, bias.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.values[a.0].clone();
        assert_eq!((out.rows, out.cols), (self.values[b.0].rows, self.values[b.0].cols), "add shape");
        out.add_assign(&self.values[b.0]);
        self.push(out, Op::Add(a.0, b.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        let mut sig = self.signature;
        for (i, v) in out.data.iter_mut().enumerate() {
            let pos = *v > T::zero();
            if !pos {
                *v = T::zero();
            }
            if self.track_kinks && pos {
                sig = mix(sig, i as u64);
            }
        }
        if self.track_kinks {
            self.signature = mix(sig, out.data.len() as u64);
        }
        self.push(out, Op::Relu(a.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.values[parts[0].0].rows;
        let cols: usize = parts.iter().map(|p| self.values[p.0].cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let m = &self.values[p.0];
                assert_eq!(m.rows, rows, "concat_cols rows");
                out.row_mut(r)[c0..c0 + m.cols].copy_from_slice(m.row(r));
                c0 += m.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = &self.values[a.0];
        assert!(start + len <= x.cols, "slice_cols range");
        let mut out = Mat::zeros(x.rows, len);
        for r in 0..x.rows {
            out.row_mut(r).copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { src: a.0, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.values[parts[0].0].cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = &self.values[p.0];
            assert_eq!(m.cols, cols, "concat_rows cols");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Var {
        let x = &self.values[a.0];
        let mut out = Mat::zeros(index.len(), x.cols);
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(x.row(i));
        }
        self.push(
            out,
            Op::Gather {
                src: a.0,
                index: index.to_vec(),
            },
        )
    }

    /// Column-wise max over consecutive row segments; `offsets` has one more
    /// entry than there are segments. Ties go to the earliest row.
    pub fn segment_max(&mut self, a: Var, offsets: &[usize]) -> Var {
        let x = &self.values[a.0];
        let segs = offsets.len() - 1;
        let mut out = Mat::zeros(segs, x.cols);
        let mut argmax = vec![0usize; segs * x.cols];
        let mut sig = self.signature;
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            assert!(hi > lo, "empty segment {s}");
            for c in 0..x.cols {
                let mut best = lo;
                for r in lo + 1..hi {
                    if x.get(r, c) > x.get(best, c) {
                        best = r;
                    }
                }
                argmax[s * x.cols + c] = best;
                out.data[s * x.cols + c] = x.get(best, c);
                if self.track_kinks {
                    sig = mix(sig, best as u64);
                }
            }
        }
        self.signature = sig;
        self.push(out, Op::SegmentMax { src: a.0, argmax })
    }

    /// Mean of the rows of `a` grouped by `index` into `n` output rows.
    /// Rows receiving nothing copy `fallback` (or stay zero without one).
    pub fn scatter_mean(&mut self, a: Var, index: &[usize], n: usize, fallback: Option<Var>) -> Var {
        let x = &self.values[a.0];
        assert_eq!(index.len(), x.rows, "scatter_mean index length");
        let mut acc = vec![0.0f64; n * x.cols];
        let mut counts = vec![0usize; n];
        for (r, &dst) in index.iter().enumerate() {
            counts[dst] += 1;
            for (s, &v) in acc[dst * x.cols..(dst + 1) * x.cols].iter_mut().zip(x.row(r)) {
                *s += v.f64();
            }
        }
        let mut out = Mat::zeros(n, x.cols);
        for (dst, &c) in counts.iter().enumerate() {
            if c > 0 {
                for (o, &s) in out.row_mut(dst).iter_mut().zip(&acc[dst * x.cols..(dst + 1) * x.cols]) {
                    *o = T::of(s / c as f64);
                }
            } else if let Some(fb) = fallback {
                let f = &self.values[fb.0];
                assert_eq!((f.rows, f.cols), (n, x.cols), "fallback shape");
                out.row_mut(dst).copy_from_slice(f.row(dst));
            }
        }
        self.push(
            out,
            Op::ScatterMean {
                src: a.0,
                index: index.to_vec(),
                counts,
                fallback: fallback.map(|v| v.0),
            },
        )
    }

    /// Per-row normalisation with affine `gamma`, `beta` (both `1 × cols`).
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        let x = &self.values[a.0];
        let (g, b) = (&self.values[gamma.0], &self.values[beta.0]);
        let cols = x.cols;
        let mut out = Mat::zeros(x.rows, cols);
        let mut xhat = vec![0.0f64; x.rows * cols];
        let mut inv_std = vec![0.0f64; x.rows];
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().map(|v| v.f64()).sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c].f64() - mean) * is;
                xhat[r * cols + c] = h;
                out.data[r * cols + c] = T::of(h * g.data[c].f64() + b.data[c].f64());
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x: a.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        )
    }

    /// Scaled dot-product attention within consecutive blocks of `block` rows.
    pub fn block_attention(&mut self, q: Var, k: Var, v: Var, block: usize) -> Var {
        let (qm, km, vm) = (&self.values[q.0], &self.values[k.0], &self.values[v.0]);
        assert!(block > 0 && qm.rows % block == 0, "attention block size");
        let d = qm.cols;
        let scale = 1.0 / (d as f64).sqrt();
        let blocks = qm.rows / block;
        let mut probs = vec![0.0f64; blocks * block * block];
        let mut out = Mat::zeros(qm.rows, vm.cols);
        for bi in 0..blocks {
            let base = bi * block;
            for t in 0..block {
                let p = &mut probs[(bi * block + t) * block..(bi * block + t + 1) * block];
                let qrow = qm.row(base + t);
                for (s, pv) in p.iter_mut().enumerate() {
                    *pv = qrow.iter().zip(km.row(base + s)).map(|(a, b)| a.f64() * b.f64()).sum::<f64>() * scale;
                }
                let mx = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for pv in p.iter_mut() {
                    *pv = (*pv - mx).exp();
                    z += *pv;
                }
                for pv in p.iter_mut() {
                    *pv /= z;
                }
                for c in 0..vm.cols {
                    let s: f64 = (0..block).map(|s| p[s] * vm.get(base + s, c).f64()).sum();
                    out.data[(base + t) * vm.cols + c] = T::of(s);
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                block,
                probs,
            },
        )
    }

    /// Mean over present rows of `1 − cos(pred_r, target_r)`; a `1 × 1` value.
    /// Zero when no row is present.
    pub fn cosine_loss(&mut self, pred: Var, target: Mat<T>, present: &[bool]) -> Var {
        let p = &self.values[pred.0];
        assert_eq!((p.rows, p.cols), (target.rows, target.cols), "cosine_loss shapes");
        assert_eq!(present.len(), p.rows, "cosine_loss mask length");
        let n = present.iter().filter(|&&b| b).count();
        let mut total = 0.0f64;
        for r in (0..p.rows).filter(|&r| present[r]) {
            total += 1.0 - cosine_eps(p.row(r), target.row(r));
        }
        let value = if n == 0 { 0.0 } else { total / n as f64 };
        self.push(
            Mat::scalar(T::of(value)),
            Op::CosineLoss {
                pred: pred.0,
                target,
                present: present.to_vec(),
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every tape entry.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let n = self.values.len();
        let mut grads: Vec<Option<Mat<T>>> = (0..n).map(|_| None).collect();
        let l = &self.values[loss.0];
        assert_eq!((l.rows, l.cols), (1, 1), "backward needs a scalar");
        grads[loss.0] = Some(Mat::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, &self.values[*b]);
                    let gb = matmul_tn(&self.values[*a], &g);
                    accum(&mut grads, *a, ga);
                    accum(&mut grads, *b, gb);
                }
                Op::AddRow(a, bias) => {
                    let mut gb = vec![0.0f64; g.cols];
                    for r in 0..g.rows {
                        for (s, &v) in gb.iter_mut().zip(g.row(r)) {
                            *s += v.f64();
                        }
                    }
                    accum(&mut grads, *bias, Mat::from_vec(1, g.cols, gb.into_iter().map(T::of).collect()));
                    accum(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accum(&mut grads, *b, g.clone());
                    accum(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let out = &self.values[idx];
                    let mut ga = g;
                    for (gv, &o) in ga.data.iter_mut().zip(&out.data) {
                        if !(o > T::zero()) {
                            *gv = T::zero();
                        }
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut c0 = 0;
                    for &p in parts {
                        let cols = self.values[p].cols;
                        let mut gp = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        c0 += cols;
                        accum(&mut grads, p, gp);
                    }
                }
                Op::SliceCols { src, start } => {
                    let s = &self.values[*src];
                    let mut gs = Mat::zeros(s.rows, s.cols);
                    for r in 0..g.rows {
                        gs.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accum(&mut grads, *src, gs);
                }
                Op::ConcatRows(parts) => {
                    let mut r0 = 0;
                    for &p in parts {
                        let m = &self.values[p];
                        let gp = Mat::from_vec(m.rows, m.cols, g.data[r0 * g.cols..(r0 + m.rows) * g.cols].to_vec());
                        r0 += m.rows;
                        accum(&mut grads, p, gp);
                    }
                }
                Op::Gather { src, index } => {
                    let s = &self.values[*src];
                    let mut acc = vec![0.0f64; s.rows * s.cols];
                    for (r, &i) in index.iter().enumerate() {
                        for (a, &v) in acc[i * s.cols..(i + 1) * s.cols].iter_mut().zip(g.row(r)) {
                            *a += v.f64();
                        }
                    }
                    accum(&mut grads, *src, Mat::from_vec(s.rows, s.cols, acc.into_iter().map(T::of).collect()));
                }
                Op::SegmentMax { src, argmax } => {
                    let s = &self.values[*src];
                    let mut gs = Mat::zeros(s.rows, s.cols);
                    for (o, &row) in argmax.iter().enumerate() {
                        let c = o % s.cols;
                        let slot = &mut gs.data[row * s.cols + c];
                        *slot = *slot + g.data[o];
                    }
                    accum(&mut grads, *src, gs);
                }
                Op::ScatterMean {
                    src,
                    index,
                    counts,
                    fallback,
                } => {
                    let s = &self.values[*src];
                    let mut gs = Mat::zeros(s.rows, s.cols);
                    for (r, &dst) in index.iter().enumerate() {
                        let inv = 1.0 / counts[dst] as f64;
                        for (a, &v) in gs.row_mut(r).iter_mut().zip(g.row(dst)) {
                            *a = T::of(v.f64() * inv);
                        }
                    }
                    accum(&mut grads, *src, gs);
                    if let Some(fb) = fallback {
                        let mut gf = Mat::zeros(g.rows, g.cols);
                        for (dst, &c) in counts.iter().enumerate() {
                            if c == 0 {
                                gf.row_mut(dst).copy_from_slice(g.row(dst));
                            }
                        }
                        accum(&mut grads, *fb, gf);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gm = &self.values[*gamma];
                    let cols = g.cols;
                    let mut gx = Mat::zeros(g.rows, cols);
                    let mut ggamma = vec![0.0f64; cols];
                    let mut gbeta = vec![0.0f64; cols];
                    let mut dxhat = vec![0.0f64; cols];
                    for r in 0..g.rows {
                        let grow = g.row(r);
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let (mut m1, mut m2) = (0.0, 0.0);
                        for c in 0..cols {
                            let gv = grow[c].f64();
                            ggamma[c] += gv * xh[c];
                            gbeta[c] += gv;
                            dxhat[c] = gv * gm.data[c].f64();
                            m1 += dxhat[c];
                            m2 += dxhat[c] * xh[c];
                        }
                        m1 /= cols as f64;
                        m2 /= cols as f64;
                        for c in 0..cols {
                            gx.data[r * cols + c] = T::of(inv_std[r] * (dxhat[c] - m1 - xh[c] * m2));
                        }
                    }
                    accum(&mut grads, *x, gx);
                    accum(&mut grads, *gamma, Mat::from_vec(1, cols, ggamma.into_iter().map(T::of).collect()));
                    accum(&mut grads, *beta, Mat::from_vec(1, cols, gbeta.into_iter().map(T::of).collect()));
                }
                Op::Attention { q, k, v, block, probs } => {
                    let (qm, km, vm) = (&self.values[*q], &self.values[*k], &self.values[*v]);
                    let block = *block;
                    let d = qm.cols;
                    let scale = 1.0 / (d as f64).sqrt();
                    let mut gq = vec![0.0f64; qm.rows * d];
                    let mut gk = vec![0.0f64; km.rows * d];
                    let mut gv = vec![0.0f64; vm.rows * vm.cols];
                    let mut dp = vec![0.0f64; block];
                    for bi in 0..qm.rows / block {
                        let base = bi * block;
                        for t in 0..block {
                            let p = &probs[(base + t) * block..(base + t + 1) * block];
                            let grow = g.row(base + t);
                            for s in 0..block {
                                // dV[s] += p[t,s] * dO[t];  dP[t,s] = dO[t] · V[s]
                                let mut acc = 0.0;
                                for c in 0..vm.cols {
                                    let go = grow[c].f64();
                                    gv[(base + s) * vm.cols + c] += p[s] * go;
                                    acc += go * vm.get(base + s, c).f64();
                                }
                                dp[s] = acc;
                            }
                            let inner: f64 = (0..block).map(|s| dp[s] * p[s]).sum();
                            for s in 0..block {
                                let ds = p[s] * (dp[s] - inner) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..d {
                                    gq[(base + t) * d + c] += ds * km.get(base + s, c).f64();
                                    gk[(base + s) * d + c] += ds * qm.get(base + t, c).f64();
                                }
                            }
                        }
                    }
                    let to = |rows, cols, v: Vec<f64>| Mat::from_vec(rows, cols, v.into_iter().map(T::of).collect());
                    let (qr, kr, vr, vc) = (qm.rows, km.rows, vm.rows, vm.cols);
                    accum(&mut grads, *q, to(qr, d, gq));
                    accum(&mut grads, *k, to(kr, d, gk));
                    accum(&mut grads, *v, to(vr, vc, gv));
                }
                Op::CosineLoss { pred, target, present } => {
                    let p = &self.values[*pred];
                    let n = present.iter().filter(|&&b| b).count();
                    let mut gp = Mat::zeros(p.rows, p.cols);
                    if n > 0 {
                        let w = g.data[0].f64() / n as f64;
                        for r in (0..p.rows).filter(|&r| present[r]) {
                            let grad = cosine_eps_grad(p.row(r), target.row(r));
                            for (o, gc) in gp.row_mut(r).iter_mut().zip(grad) {
                                *o = T::of(-w * gc);
                            }
                        }
                    }
                    accum(&mut grads, *pred, gp);
                }
            }
        }
        Grads { grads }
    }
}

fn accum<T: Real>(grads: &mut [Option<Mat<T>>], idx: usize, g: Mat<T>) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// `a·b / ((|a|+ε)(|b|+ε))`.
pub fn cosine_eps<T: Real>(a: &[T], b: &[T]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| x.f64() * y.f64()).sum();
    let na = a.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt();
    s / ((na + COSINE_EPS) * (nb + COSINE_EPS))
}

/// Gradient of [`cosine_eps`] with respect to `a`.
pub fn cosine_eps_grad<T: Real>(a: &[T], b: &[T]) -> Vec<f64> {
    let s: f64 = a.iter().zip(b).map(|(x, y)| x.f64() * y.f64()).sum();
    let na = a.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x.f64().powi(2)).sum::<f64>().sqrt();
    let da = na + COSINE_EPS;
    let db = nb + COSINE_EPS;
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let radial = if na > 0.0 { s / (da * da * db) * x.f64() / na } else { 0.0 };
            y.f64() / (da * db) - radial
        })
        .collect()
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros of the given shape when it did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Mat<T> {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(rows, cols))
    }
}
