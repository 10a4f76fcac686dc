//! Reverse-mode tape over [`Tensor`] operations.

use super::gemm::{gemm, gemm_view, View};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Spatial geometry of a (transposed) convolution or pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// "Same" padding: `out = ceil(in / stride)`, extra padding at the bottom/right.
    pub fn same(in_h: usize, in_w: usize, kh: usize, kw: usize, stride: usize) -> Self {
        let out_h = in_h.div_ceil(stride);
        let out_w = in_w.div_ceil(stride);
        let pad_h = ((out_h - 1) * stride + kh).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * stride + kw).saturating_sub(in_w);
        ConvGeom {
            kh,
            kw,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            in_h,
            in_w,
            out_h,
            out_w,
        }
    }

    /// Input row/column feeding output `(o, p)` through kernel tap `(k, q)`.
    #[inline]
    fn source(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let s = (o * self.stride + k) as isize - pad as isize;
        (s >= 0 && (s as usize) < limit).then_some(s as usize)
    }

    fn patch_len(&self, channels: usize) -> usize {
        self.kh * self.kw * channels
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cin: usize, cols: &mut [f64]) {
    let k = g.patch_len(cin);
    for oi in 0..g.out_h {
        for oj in 0..g.out_w {
            let row = &mut cols[(oi * g.out_w + oj) * k..(oi * g.out_w + oj + 1) * k];
            for p in 0..g.kh {
                let si = g.source(oi, p, g.pad_top, g.in_h);
                for q in 0..g.kw {
                    let dst = &mut row[(p * g.kw + q) * cin..(p * g.kw + q + 1) * cin];
                    match (si, g.source(oj, q, g.pad_left, g.in_w)) {
                        (Some(i), Some(j)) => {
                            let src = (i * g.in_w + j) * cin;
                            dst.copy_from_slice(&x[src..src + cin]);
                        }
                        _ => dst.fill(0.0),
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, cin: usize, x: &mut [f64]) {
    let k = g.patch_len(cin);
    for oi in 0..g.out_h {
        for oj in 0..g.out_w {
            let row = &cols[(oi * g.out_w + oj) * k..(oi * g.out_w + oj + 1) * k];
            for p in 0..g.kh {
                let Some(i) = g.source(oi, p, g.pad_top, g.in_h) else { continue };
                for q in 0..g.kw {
                    let Some(j) = g.source(oj, q, g.pad_left, g.in_w) else { continue };
                    let dst = (i * g.in_w + j) * cin;
                    let src = &row[(p * g.kw + q) * cin..(p * g.kw + q + 1) * cin];
                    for (d, s) in x[dst..dst + cin].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Stride-1 convolutions with enough input channels skip `im2col`.
const SHIFTED_MIN_CIN: usize = 8;

fn use_shifted(g: &ConvGeom, cin: usize) -> bool {
    g.stride == 1 && cin >= SHIFTED_MIN_CIN
}

/// Zero-padded copy of one item with an extra bottom row so that every
/// kernel-tap shift of the flattened `out_h × padded width` grid stays in
/// bounds.
fn pad_item(x: &[f64], g: &ConvGeom, cin: usize) -> (Vec<f64>, usize) {
    let wp = g.in_w + g.kw - 1;
    let hp = g.in_h + g.kh - 1;
    let mut out = vec![0.0; (hp + 1) * wp * cin];
    for i in 0..g.in_h {
        let dst = ((i + g.pad_top) * wp + g.pad_left) * cin;
        out[dst..dst + g.in_w * cin].copy_from_slice(&x[i * g.in_w * cin..(i + 1) * g.in_w * cin]);
    }
    (out, wp)
}

/// Stride-1 convolution of one item as one strided product per kernel tap.
fn conv_shifted(x: &[f64], w: &[f64], bias: &[f64], g: &ConvGeom, cin: usize, cout: usize, y: &mut [f64]) {
    let (xp, wp) = pad_item(x, g, cin);
    let rows = g.out_h * wp;
    let mut acc = vec![0.0; rows * cout];
    for di in 0..g.kh {
        for dj in 0..g.kw {
            gemm_view(
                rows,
                cin,
                cout,
                &xp,
                View { offset: (di * wp + dj) * cin, rs: cin, cs: 1 },
                w,
                View { offset: (di * g.kw + dj) * cin * cout, rs: cout, cs: 1 },
                1.0,
                &mut acc,
                View { offset: 0, rs: cout, cs: 1 },
            );
        }
    }
    for i in 0..g.out_h {
        for j in 0..g.out_w {
            let dst = &mut y[(i * g.out_w + j) * cout..(i * g.out_w + j + 1) * cout];
            let src = &acc[(i * wp + j) * cout..(i * wp + j + 1) * cout];
            for ((d, s), b) in dst.iter_mut().zip(src).zip(bias) {
                *d = s + b;
            }
        }
    }
}

/// Backward of [`conv_shifted`]: accumulates into `dw` and, if given, `dx`.
#[allow(clippy::too_many_arguments)]
fn conv_shifted_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    cin: usize,
    cout: usize,
    dw: Option<&mut [f64]>,
    dx: Option<&mut [f64]>,
) {
    let (xp, wp) = pad_item(x, g, cin);
    let rows = g.out_h * wp;
    let mut dyp = vec![0.0; rows * cout];
    for i in 0..g.out_h {
        dyp[i * wp * cout..(i * wp + g.out_w) * cout]
            .copy_from_slice(&dy[i * g.out_w * cout..(i + 1) * g.out_w * cout]);
    }
    if let Some(dw) = dw {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                gemm_view(
                    cin,
                    rows,
                    cout,
                    &xp,
                    View { offset: (di * wp + dj) * cin, rs: 1, cs: cin },
                    &dyp,
                    View { offset: 0, rs: cout, cs: 1 },
                    1.0,
                    dw,
                    View { offset: (di * g.kw + dj) * cin * cout, rs: cout, cs: 1 },
                );
            }
        }
    }
    if let Some(dx) = dx {
        let mut dxp = vec![0.0; xp.len()];
        for di in 0..g.kh {
            for dj in 0..g.kw {
                gemm_view(
                    rows,
                    cout,
                    cin,
                    &dyp,
                    View { offset: 0, rs: cout, cs: 1 },
                    w,
                    View { offset: (di * g.kw + dj) * cin * cout, rs: 1, cs: cout },
                    1.0,
                    &mut dxp,
                    View { offset: (di * wp + dj) * cin, rs: cin, cs: 1 },
                );
            }
        }
        for i in 0..g.in_h {
            let src = ((i + g.pad_top) * wp + g.pad_left) * cin;
            for (d, s) in dx[i * g.in_w * cin..(i + 1) * g.in_w * cin].iter_mut().zip(&dxp[src..src + g.in_w * cin]) {
                *d += s;
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Var, g: ConvGeom },
    Deconv { x: Var, w: Var, b: Var, g: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    Tlu { x: Var, t: f64 },
    AvgPool { x: Var, g: ConvGeom },
    GlobalAvg { x: Var },
    Fc { x: Var, w: Var, b: Var },
    Concat { a: Var, b: Var },
    Softmax { x: Var },
    SoftmaxXent { x: Var, labels: Vec<usize>, scale: f64, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Pending moving-average update produced by a training-mode batchnorm.
#[derive(Debug, Clone)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub momentum: f64,
}

/// One forward pass worth of recorded operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bn_updates: Vec<BnUpdate>,
}

/// Gradients for every node of a tape after [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        value.check_finite(op_name(&op))?;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn input(&mut self, value: Tensor, needs_grad: bool) -> Result<Var> {
        self.push(value, Op::Input, needs_grad)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    /// Applies pending moving-average updates, storing at `f32` precision.
    pub fn commit_bn(&mut self, store: &mut ParamStore) {
        for u in self.bn_updates.drain(..) {
            for (id, batch) in [(u.mean, &u.batch_mean), (u.var, &u.batch_var)] {
                let t = store.value_mut(id);
                for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                    *r = (u.momentum * *r + (1.0 - u.momentum) * b) as f32 as f64;
                }
            }
        }
    }

    fn check_channels(&self, x: Var, expected: usize, what: &str) -> Result<()> {
        let c = self.value(x).channels();
        if c != expected {
            return Err(Error::DimensionMismatch(format!(
                "{what}: expected {expected} input channels, got {c}"
            )));
        }
        Ok(())
    }

    /// Convolution with weights `[kh, kw, cin, cout]` and bias `[1, 1, 1, cout]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let [kh, kw, cin, cout] = self.value(w).shape();
        self.check_channels(x, cin, "conv")?;
        let xs = self.value(x).shape();
        let g = ConvGeom::same(xs[1], xs[2], kh, kw, stride);
        let k = g.patch_len(cin);
        let p = g.out_h * g.out_w;
        let mut out = Tensor::zeros([xs[0], g.out_h, g.out_w, cout]);
        let shifted = use_shifted(&g, cin);
        let mut cols = vec![0.0; if shifted { 0 } else { p * k }];
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for n in 0..xs[0] {
                let y = &mut out.data_mut()[n * p * cout..(n + 1) * p * cout];
                if shifted {
                    conv_shifted(xv.item(n), wv, bv, &g, cin, cout, y);
                    continue;
                }
                im2col(xv.item(n), &g, cin, &mut cols);
                for row in y.chunks_exact_mut(cout) {
                    row.copy_from_slice(bv);
                }
                gemm(p, k, cout, &cols, false, wv, false, 1.0, y);
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, Op::Conv { x, w, b, g }, needs)
    }

    /// Transposed convolution, the adjoint of a stride-`s` same-padded
    /// convolution from `cout` to `cin` channels. Weights `[kh, kw, cout, cin]`.
    pub fn deconv(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let [kh, kw, cout, cin] = self.value(w).shape();
        self.check_channels(x, cin, "deconv")?;
        let xs = self.value(x).shape();
        let g = ConvGeom::same(xs[1] * stride, xs[2] * stride, kh, kw, stride);
        debug_assert_eq!((g.out_h, g.out_w), (xs[1], xs[2]));
        let k = g.patch_len(cout);
        let p = g.out_h * g.out_w;
        let item = g.in_h * g.in_w * cout;
        let mut out = Tensor::zeros([xs[0], g.in_h, g.in_w, cout]);
        let mut cols = vec![0.0; p * k];
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            let bv = self.value(b).data();
            for n in 0..xs[0] {
                gemm(p, cin, k, xv.item(n), false, wv, true, 0.0, &mut cols);
                let y = &mut out.data_mut()[n * item..(n + 1) * item];
                for row in y.chunks_exact_mut(cout) {
                    row.copy_from_slice(bv);
                }
                col2im(&cols, &g, cout, y);
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, Op::Deconv { x, w, b, g }, needs)
    }

    /// Per-channel batch normalization. In training mode the batch statistics
    /// normalize and a moving-average update is queued; otherwise the stored
    /// running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm(
        &mut self,
        store: &ParamStore,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        eps: f64,
        momentum: f64,
        train: bool,
    ) -> Result<Var> {
        let c = self.value(x).channels();
        self.check_channels(x, store.value(gamma).len(), "batchnorm")?;
        let m = self.value(x).len() / c;
        let (mean, var) = if train {
            let xv = self.value(x).data();
            let mut mean = vec![0.0; c];
            for row in xv.chunks_exact(c) {
                for (a, v) in mean.iter_mut().zip(row) {
                    *a += v;
                }
            }
            mean.iter_mut().for_each(|a| *a /= m as f64);
            let mut var = vec![0.0; c];
            for row in xv.chunks_exact(c) {
                for ((a, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                    *a += (v - mu) * (v - mu);
                }
            }
            var.iter_mut().for_each(|a| *a /= m as f64);
            (mean, var)
        } else {
            (
                store.value(running_mean).data().to_vec(),
                store.value(running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.param(store, gamma)?;
        let bv = self.param(store, beta)?;
        let xv = self.value(x);
        let mut xhat = vec![0.0; xv.len()];
        let mut out = Tensor::zeros(xv.shape());
        {
            let gd = self.value(gv).data();
            let bd = self.value(bv).data();
            for ((src, h), y) in xv
                .data()
                .chunks_exact(c)
                .zip(xhat.chunks_exact_mut(c))
                .zip(out.data_mut().chunks_exact_mut(c))
            {
                for ch in 0..c {
                    h[ch] = (src[ch] - mean[ch]) * inv_std[ch];
                    y[ch] = gd[ch] * h[ch] + bd[ch];
                }
            }
        }
        if train {
            self.bn_updates.push(BnUpdate {
                mean: running_mean,
                var: running_var,
                batch_mean: mean,
                batch_var: var,
                momentum,
            });
        }
        let needs = self.needs(x) || self.needs(gv) || self.needs(bv);
        self.push(
            out,
            Op::BatchNorm {
                x,
                gamma: gv,
                beta: bv,
                xhat,
                inv_std,
                train,
            },
            needs,
        )
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::from_vec(xv.shape(), xv.data().iter().map(|&v| f(v)).collect())?;
        let needs = self.needs(x);
        self.push(out, op, needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Relu { x }, |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.map(x, Op::LeakyRelu { x, slope }, |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Sigmoid { x }, sigmoid)
    }

    /// `clamp(x, −t, t)`.
    pub fn tlu(&mut self, x: Var, t: f64) -> Result<Var> {
        self.map(x, Op::Tlu { x, t }, |v| v.clamp(-t, t))
    }

    /// Same-padded `k × k` average pooling; padded cells are not counted.
    pub fn avg_pool(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        let g = ConvGeom::same(xs[1], xs[2], k, k, stride);
        let c = xs[3];
        let mut out = Tensor::zeros([xs[0], g.out_h, g.out_w, c]);
        let xv = self.value(x);
        for n in 0..xs[0] {
            for oi in 0..g.out_h {
                for oj in 0..g.out_w {
                    let (mut count, base) = (0usize, out.index(n, oi, oj, 0));
                    for p in 0..k {
                        let Some(i) = g.source(oi, p, g.pad_top, g.in_h) else { continue };
                        for q in 0..k {
                            let Some(j) = g.source(oj, q, g.pad_left, g.in_w) else { continue };
                            count += 1;
                            let src = xv.index(n, i, j, 0);
                            for ch in 0..c {
                                out.data_mut()[base + ch] += xv.data()[src + ch];
                            }
                        }
                    }
                    for ch in 0..c {
                        out.data_mut()[base + ch] /= count as f64;
                    }
                }
            }
        }
        let needs = self.needs(x);
        self.push(out, Op::AvgPool { x, g }, needs)
    }

    /// Mean over all spatial positions: `[n, h, w, c] → [n, 1, 1, c]`.
    pub fn global_avg(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, h, w, c] = xv.shape();
        let mut out = Tensor::zeros([n, 1, 1, c]);
        for b in 0..n {
            for row in xv.item(b).chunks_exact(c) {
                for ch in 0..c {
                    out.data_mut()[b * c + ch] += row[ch];
                }
            }
        }
        out.data_mut().iter_mut().for_each(|v| *v /= (h * w) as f64);
        let needs = self.needs(x);
        self.push(out, Op::GlobalAvg { x }, needs)
    }

    /// Fully connected layer on the flattened item, weights `[1, 1, fin, fout]`.
    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [_, _, fin, fout] = self.value(w).shape();
        let xv = self.value(x);
        if xv.item_len() != fin {
            return Err(Error::DimensionMismatch(format!(
                "fully connected layer expects {fin} inputs, got {}",
                xv.item_len()
            )));
        }
        let n = xv.batch();
        let mut out = Tensor::zeros([n, 1, 1, fout]);
        for row in out.data_mut().chunks_exact_mut(fout) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(n, fin, fout, xv.data(), false, self.value(w).data(), false, 1.0, out.data_mut());
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        self.push(out, Op::Fc { x, w, b }, needs)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa[..3] != sb[..3] {
            return Err(Error::DimensionMismatch(format!("cannot concat {sa:?} and {sb:?}")));
        }
        let (ca, cb) = (sa[3], sb[3]);
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for (ra, rb) in av.data().chunks_exact(ca).zip(bv.data().chunks_exact(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let out = Tensor::from_vec([sa[0], sa[1], sa[2], ca + cb], data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::Concat { a, b }, needs)
    }

    /// Softmax over channels of a `[n, 1, 1, c]` tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.channels();
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(c) {
            softmax_in_place(row);
        }
        let out = Tensor::from_vec(xv.shape(), data)?;
        let needs = self.needs(x);
        self.push(out, Op::Softmax { x }, needs)
    }

    /// `scale · Σ_n −log softmax(x_n)[label_n]` as a `[1, 1, 1, 1]` scalar.
    pub fn softmax_cross_entropy(&mut self, x: Var, labels: &[usize], scale: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.channels();
        if xv.batch() != labels.len() || xv.item_len() != c {
            return Err(Error::DimensionMismatch(
                "softmax cross-entropy needs one [1, 1, c] logit row per label".into(),
            ));
        }
        if labels.iter().any(|&l| l >= c) {
            return Err(Error::InvalidInput("label outside class range".into()));
        }
        let mut probs = xv.data().to_vec();
        let mut loss = 0.0;
        for (row, &label) in probs.chunks_exact_mut(c).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            softmax_in_place(row);
        }
        let out = Tensor::from_vec([1, 1, 1, 1], vec![scale * loss])?;
        let needs = self.needs(x);
        self.push(
            out,
            Op::SoftmaxXent {
                x,
                labels: labels.to_vec(),
                scale,
                probs,
            },
            needs,
        )
    }

    /// Reverse pass from `out` seeded with `seed` (same shape as `out`).
    pub fn backward(&self, out: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(out).shape() {
            return Err(Error::DimensionMismatch(format!(
                "seed gradient {:?} does not match output {:?}",
                seed.shape(),
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.needs_grad {
                self.backprop_node(node, &dy, &mut grads)?;
            }
            grads[idx] = Some(dy);
        }
        for g in grads.iter().flatten() {
            g.check_finite("gradient")?;
        }
        Ok(Gradients { grads })
    }

    /// Per trainable parameter, the gradient accumulated over every use.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<(ParamId, Tensor)> = Vec::new();
        for (n, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), true) = (&node.op, node.needs_grad) {
                if let Some(g) = &grads.grads[n] {
                    match out.iter_mut().find(|(p, _)| p == id) {
                        Some((_, acc)) => acc.add_assign(g),
                        None => out.push((*id, g.clone())),
                    }
                }
            }
        }
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn backprop_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot => *slot = Some(g),
        };
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv { x, w, b, g } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [_, _, cin, cout] = wv.shape();
                let k = g.patch_len(cin);
                let p = g.out_h * g.out_w;
                let shifted = use_shifted(g, cin);
                let scratch = if shifted { 0 } else { p * k };
                let mut cols = vec![0.0; scratch];
                let mut dcols = vec![0.0; scratch];
                let mut dw = Tensor::zeros(wv.shape());
                let mut db = Tensor::zeros([1, 1, 1, cout]);
                let mut dx = self.needs(*x).then(|| Tensor::zeros(xv.shape()));
                let item = xv.item_len();
                for n in 0..xv.batch() {
                    let dyn_ = &dy.data()[n * p * cout..(n + 1) * p * cout];
                    for row in dyn_.chunks_exact(cout) {
                        for (d, v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    if shifted {
                        conv_shifted_backward(
                            xv.item(n),
                            wv.data(),
                            dyn_,
                            g,
                            cin,
                            cout,
                            self.needs(*w).then(|| dw.data_mut()),
                            dx.as_mut().map(|d| &mut d.data_mut()[n * item..(n + 1) * item]),
                        );
                        continue;
                    }
                    if self.needs(*w) {
                        im2col(xv.item(n), g, cin, &mut cols);
                        gemm(k, p, cout, &cols, true, dyn_, false, 1.0, dw.data_mut());
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(p, cout, k, dyn_, false, wv.data(), true, 0.0, &mut dcols);
                        col2im(&dcols, g, cin, &mut dx.data_mut()[n * item..(n + 1) * item]);
                    }
                }
                if self.needs(*w) {
                    acc(*w, dw);
                }
                if self.needs(*b) {
                    acc(*b, db);
                }
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
            }
            Op::Deconv { x, w, b, g } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [_, _, cout, cin] = wv.shape();
                let k = g.patch_len(cout);
                let p = g.out_h * g.out_w;
                let item = g.in_h * g.in_w * cout;
                let mut cols = vec![0.0; p * k];
                let mut dw = Tensor::zeros(wv.shape());
                let mut db = Tensor::zeros([1, 1, 1, cout]);
                let mut dx = self.needs(*x).then(|| Tensor::zeros(xv.shape()));
                for n in 0..xv.batch() {
                    let dyn_ = &dy.data()[n * item..(n + 1) * item];
                    im2col(dyn_, g, cout, &mut cols);
                    if self.needs(*w) {
                        // dW[K, cin] = colsᵀ · x
                        gemm(k, p, cin, &cols, true, xv.item(n), false, 1.0, dw.data_mut());
                    }
                    for row in dyn_.chunks_exact(cout) {
                        for (d, v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let xi = p * cin;
                        gemm(p, k, cin, &cols, false, wv.data(), false, 0.0, &mut dx.data_mut()[n * xi..(n + 1) * xi]);
                    }
                }
                if self.needs(*w) {
                    acc(*w, dw);
                }
                if self.needs(*b) {
                    acc(*b, db);
                }
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = inv_std.len();
                let m = (xhat.len() / c) as f64;
                let gd = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (row, h) in dy.data().chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    for ch in 0..c {
                        dgamma[ch] += row[ch] * h[ch];
                        dbeta[ch] += row[ch];
                    }
                }
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(dy.shape());
                    for ((d, row), h) in dx
                        .data_mut()
                        .chunks_exact_mut(c)
                        .zip(dy.data().chunks_exact(c))
                        .zip(xhat.chunks_exact(c))
                    {
                        for ch in 0..c {
                            d[ch] = if *train {
                                gd[ch] * inv_std[ch] / m
                                    * (m * row[ch] - dbeta[ch] - h[ch] * dgamma[ch])
                            } else {
                                gd[ch] * inv_std[ch] * row[ch]
                            };
                        }
                    }
                    acc(*x, dx);
                }
                if self.needs(*gamma) {
                    acc(*gamma, Tensor::from_vec([1, 1, 1, c], dgamma)?);
                }
                if self.needs(*beta) {
                    acc(*beta, Tensor::from_vec([1, 1, 1, c], dbeta)?);
                }
            }
            Op::Relu { x } => {
                let g = zip_map(dy, self.value(*x), |d, v| if v > 0.0 { d } else { 0.0 });
                acc(*x, g);
            }
            Op::LeakyRelu { x, slope } => {
                let g = zip_map(dy, self.value(*x), |d, v| if v > 0.0 { d } else { slope * d });
                acc(*x, g);
            }
            Op::Sigmoid { x } => {
                let g = zip_map(dy, &node.value, |d, s| d * s * (1.0 - s));
                acc(*x, g);
            }
            Op::Tlu { x, t } => {
                let g = zip_map(dy, self.value(*x), |d, v| if v.abs() < *t { d } else { 0.0 });
                acc(*x, g);
            }
            Op::AvgPool { x, g } => {
                let xv = self.value(*x);
                let c = xv.channels();
                let mut dx = Tensor::zeros(xv.shape());
                for n in 0..xv.batch() {
                    for oi in 0..g.out_h {
                        for oj in 0..g.out_w {
                            let mut taps = Vec::with_capacity(g.kh * g.kw);
                            for p in 0..g.kh {
                                let Some(i) = g.source(oi, p, g.pad_top, g.in_h) else { continue };
                                for q in 0..g.kw {
                                    let Some(j) = g.source(oj, q, g.pad_left, g.in_w) else { continue };
                                    taps.push(xv.index(n, i, j, 0));
                                }
                            }
                            let base = dy.index(n, oi, oj, 0);
                            let inv = 1.0 / taps.len() as f64;
                            for &t in &taps {
                                for ch in 0..c {
                                    dx.data_mut()[t + ch] += dy.data()[base + ch] * inv;
                                }
                            }
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::GlobalAvg { x } => {
                let xv = self.value(*x);
                let [n, h, w, c] = xv.shape();
                let mut dx = Tensor::zeros(xv.shape());
                let inv = 1.0 / (h * w) as f64;
                let item = h * w * c;
                for b in 0..n {
                    for row in dx.data_mut()[b * item..(b + 1) * item].chunks_exact_mut(c) {
                        for ch in 0..c {
                            row[ch] = dy.data()[b * c + ch] * inv;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Fc { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let [_, _, fin, fout] = wv.shape();
                let n = xv.batch();
                if self.needs(*w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    gemm(fin, n, fout, xv.data(), true, dy.data(), false, 0.0, dw.data_mut());
                    acc(*w, dw);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros([1, 1, 1, fout]);
                    for row in dy.data().chunks_exact(fout) {
                        for (d, v) in db.data_mut().iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(*b, db);
                }
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    gemm(n, fout, fin, dy.data(), false, wv.data(), true, 0.0, dx.data_mut());
                    acc(*x, dx);
                }
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.value(*a).shape(), self.value(*b).shape());
                let (ca, cb) = (sa[3], sb[3]);
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut dbv = Vec::with_capacity(self.value(*b).len());
                for row in dy.data().chunks_exact(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    dbv.extend_from_slice(&row[ca..]);
                }
                if self.needs(*a) {
                    acc(*a, Tensor::from_vec(sa, da)?);
                }
                if self.needs(*b) {
                    acc(*b, Tensor::from_vec(sb, dbv)?);
                }
            }
            Op::Softmax { x } => {
                let c = node.value.channels();
                let mut dx = Tensor::zeros(dy.shape());
                for ((d, g), p) in dx
                    .data_mut()
                    .chunks_exact_mut(c)
                    .zip(dy.data().chunks_exact(c))
                    .zip(node.value.data().chunks_exact(c))
                {
                    let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                    for ch in 0..c {
                        d[ch] = p[ch] * (g[ch] - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::SoftmaxXent {
                x,
                labels,
                scale,
                probs,
            } => {
                let c = self.value(*x).channels();
                let s = dy.data()[0] * scale;
                let mut dx = probs.clone();
                for (row, &label) in dx.chunks_exact_mut(c).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= s);
                }
                acc(*x, Tensor::from_vec(self.value(*x).shape(), dx)?);
            }
        }
        Ok(())
    }
}

fn zip_map(dy: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = dy.data().iter().zip(x.data()).map(|(&d, &v)| f(d, v)).collect();
    Tensor::from_vec(dy.shape(), data).expect("same shape")
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Input => "input",
        Op::Param(_) => "parameter",
        Op::Conv { .. } => "conv",
        Op::Deconv { .. } => "deconv",
        Op::BatchNorm { .. } => "batchnorm",
        Op::Relu { .. } => "relu",
        Op::LeakyRelu { .. } => "leaky_relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tlu { .. } => "tlu",
        Op::AvgPool { .. } => "avgpool",
        Op::GlobalAvg { .. } => "global_avg",
        Op::Fc { .. } => "fully_connected",
        Op::Concat { .. } => "concat",
        Op::Softmax { .. } => "softmax",
        Op::SoftmaxXent { .. } => "softmax_cross_entropy",
    }
}
