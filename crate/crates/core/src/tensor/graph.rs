use super::kernels::{col2im_nhwc, gemm, im2col_nhwc, permute};
use super::{sigmoid, softplus, Real, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Mapping from the raw action-head output to mixture parameters.
///
/// `mu = center + scale * r_mu`, `s = floor + scale * softplus(r_s)`, with
/// `alpha = softmax(r_alpha)`. Rows are laid out per action dimension as
/// `[alpha_1..m, mu_1..m, s_1..m]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureLayout {
    pub components: usize,
    pub dims: usize,
    pub bins: usize,
    pub center: f64,
    pub scale: f64,
    pub floor: f64,
}

impl MixtureLayout {
    pub fn row_width(&self) -> usize {
        self.dims * 3 * self.components
    }
}

enum Op<R> {
    Constant,
    Param(usize),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    BatchMatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, R),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Softmax(Var),
    Conv2d { x: Var, w: Var, b: Var, dims: [usize; 4], kernel: usize, stride: usize, pad: usize },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow { x: Var, axis: usize, start: usize },
    IndexSelect(Var, Vec<usize>),
    MeanAxis(Var, usize),
    SumAll(Var),
    MixtureNll { raw: Var, bins: Vec<u8>, layout: MixtureLayout },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    L2Normalize { x: Var, eps: f64 },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Append-only computation tape.
pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Log-probability of bin `a` under a discretized logistic with edge bins
/// absorbing the tails, and its partials with respect to `mu` and `s`.
pub(crate) fn log_bin_prob(a: f64, mu: f64, s: f64, top: f64) -> (f64, f64, f64) {
    let up = (a + 0.5 - mu) / s;
    let lo = (a - 0.5 - mu) / s;
    if a <= 0.0 {
        let g = sigmoid(-up);
        (-softplus(-up), -g / s, -g * up / s)
    } else if a >= top {
        let g = -sigmoid(lo);
        (-softplus(lo), -g / s, -g * lo / s)
    } else {
        let inv = 1.0 / s;
        // log(sigma(up) - sigma(lo)) = log(1 - e^{-1/s}) - sp(-up) - sp(lo)
        let width_term = (-(-inv).exp_m1()).ln();
        let lp = width_term - softplus(-up) - softplus(lo);
        let g_up = 1.0 - sigmoid(up);
        let g_lo = -sigmoid(lo);
        let dwidth = if inv > 700.0 { 0.0 } else { -1.0 / (s * s * inv.exp_m1()) };
        let dmu = -(g_up + g_lo) / s;
        let ds = -(g_up * up + g_lo * lo) / s + dwidth;
        (lp, dmu, ds)
    }
}

/// Per-row mixture NLL and (optionally) its gradient with respect to the raw row.
fn mixture_row(raw: &[f64], bins: &[u8], layout: &MixtureLayout, mut grad: Option<&mut [f64]>) -> f64 {
    let m = layout.components;
    let top = (layout.bins - 1) as f64;
    let mut nll = 0.0;
    let mut la = vec![0.0; m];
    let mut tot = vec![0.0; m];
    let mut dmu = vec![0.0; m];
    let mut ds = vec![0.0; m];
    for (d, &bin) in bins.iter().enumerate().take(layout.dims) {
        let base = d * 3 * m;
        let logits = &raw[base..base + m];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse_a = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        let a = bin as f64;
        for i in 0..m {
            la[i] = logits[i] - lse_a;
            let mu = layout.center + layout.scale * raw[base + m + i];
            let s = layout.floor + layout.scale * softplus(raw[base + 2 * m + i]);
            let (lp, gmu, gs) = log_bin_prob(a, mu, s, top);
            tot[i] = la[i] + lp;
            dmu[i] = gmu;
            ds[i] = gs;
        }
        let tmax = tot.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = tmax + tot.iter().map(|t| (t - tmax).exp()).sum::<f64>().ln();
        nll -= lse;
        if let Some(g) = grad.as_deref_mut() {
            for i in 0..m {
                let resp = (tot[i] - lse).exp();
                let alpha = la[i].exp();
                g[base + i] = alpha - resp;
                g[base + m + i] = -resp * dmu[i] * layout.scale;
                g[base + 2 * m + i] =
                    -resp * ds[i] * layout.scale * sigmoid(raw[base + 2 * m + i]);
            }
        }
    }
    nll
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Constant => false,
            Op::Param(_) => true,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor<R>) -> Var {
        self.push(t, Op::Constant, &[])
    }

    /// Leaf bound to parameter slot `id`; its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, id: usize, t: &Tensor<R>) -> Var {
        self.push(t.clone(), Op::Param(id), &[])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    /// 2-D product `op(a) op(b)`.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a), self.shape(b));
        assert!(sa.len() == 2 && sb.len() == 2, "matmul expects 2-D operands, got {sa:?} {sb:?}");
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        assert_eq!(k, k2, "matmul inner dims {sa:?} x {sb:?}");
        let mut out = vec![R::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb, &mut out, false);
        self.push(Tensor::new(&[m, n], out), Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    /// Batched 3-D product over a shared leading axis.
    pub fn bmm(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        assert!(sa.len() == 3 && sb.len() == 3 && sa[0] == sb[0], "bmm shapes {sa:?} {sb:?}");
        let bs = sa[0];
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        assert_eq!(k, k2, "bmm inner dims {sa:?} x {sb:?}");
        let mut out = vec![R::zero(); bs * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..bs {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    ta,
                    &bv[i * k * n..(i + 1) * k * n],
                    tb,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        self.push(Tensor::new(&[bs, m, n], out), Op::BatchMatMul { a, b, ta, tb }, &[a, b])
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(R, R) -> R) -> Tensor<R> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = R::c(c);
        let t = self.value(x).map(|v| v * c);
        self.push(t, Op::Scale(x, c), &[x])
    }

    /// Adds a vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let n = *self.shape(b).last().expect("bias rank");
        assert_eq!(self.shape(b).len(), 1, "bias must be 1-D");
        assert_eq!(*self.shape(x).last().expect("rank"), n, "bias width mismatch");
        let mut t = self.value(x).clone();
        let bias = self.value(b).data().to_vec();
        for row in t.data_mut().chunks_mut(n) {
            for (v, bb) in row.iter_mut().zip(&bias) {
                *v += *bb;
            }
        }
        self.push(t, Op::AddBias(x, b), &[x, b])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > R::zero() { v } else { R::zero() });
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| R::c(sigmoid(v.f64())));
        self.push(t, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.tanh());
        self.push(t, Op::Tanh(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| R::c(softplus(v.f64())));
        self.push(t, Op::Softplus(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = *self.shape(x).last().expect("rank");
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let mut sum = R::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(t, Op::Softmax(x), &[x])
    }

    /// NHWC convolution. `w` is `[k*k*c_in, c_out]`, `b` is `[c_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let sx = self.shape(x);
        assert_eq!(sx.len(), 4, "conv2d expects [n, h, w, c]");
        let dims = [sx[0], sx[1], sx[2], sx[3]];
        let sw = self.shape(w).to_vec();
        assert_eq!(sw[0], kernel * kernel * dims[3], "conv2d weight rows");
        let cout = sw[1];
        let (col, ho, wo) = im2col_nhwc(self.value(x).data(), dims, kernel, stride, pad);
        let rows = dims[0] * ho * wo;
        let mut out = vec![R::zero(); rows * cout];
        gemm(rows, sw[0], cout, &col, false, self.value(w).data(), false, &mut out, false);
        let bias = self.value(b).data();
        for row in out.chunks_mut(cout) {
            for (v, bb) in row.iter_mut().zip(bias) {
                *v += *bb;
            }
        }
        self.push(
            Tensor::new(&[dims[0], ho, wo, cout], out),
            Op::Conv2d { x, w, b, dims, kernel, stride, pad },
            &[x, w, b],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        self.push(t, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let (data, shape) = permute(self.value(x).data(), self.shape(x), perm);
        self.push(Tensor::new(&shape, data), Op::Permute(x, perm.to_vec()), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty(), "concat of nothing");
        let first = self.shape(xs[0]).to_vec();
        let (outer, _, inner) = split_axis(&first, axis);
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            assert_eq!(s.len(), first.len(), "concat rank mismatch");
            for (d, (&p, &q)) in s.iter().zip(&first).enumerate() {
                assert!(d == axis || p == q, "concat shape mismatch {s:?} vs {first:?}");
            }
            total += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        self.push(Tensor::new(&shape, data), Op::Concat(xs.to_vec(), axis), xs)
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert!(start + len <= s[axis], "narrow out of range");
        let (outer, full, inner) = split_axis(&s, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        let src = self.value(x).data();
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(Tensor::new(&shape, data), Op::Narrow { x, axis, start }, &[x])
    }

    /// Gathers slices along axis 0.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Var {
        let s = self.shape(x).to_vec();
        let inner: usize = s[1..].iter().product();
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            assert!(i < s[0], "index_select out of range");
            data.extend_from_slice(&src[i * inner..(i + 1) * inner]);
        }
        let mut shape = s;
        shape[0] = indices.len();
        self.push(Tensor::new(&shape, data), Op::IndexSelect(x, indices.to_vec()), &[x])
    }

    /// Mean over one axis, which is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let s = self.shape(x).to_vec();
        let (outer, len, inner) = split_axis(&s, axis);
        let src = self.value(x).data();
        let mut data = vec![R::zero(); outer * inner];
        let inv = R::c(1.0 / len as f64);
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        data.iter_mut().for_each(|v| *v *= inv);
        let mut shape = s;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        self.push(Tensor::new(&shape, data), Op::MeanAxis(x, axis), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.f64()).sum();
        self.push(Tensor::scalar(R::c(s)), Op::SumAll(x), &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row negative log-likelihood (summed over action dimensions) of
    /// bin targets under the discretized logistic mixture encoded by `raw`.
    pub fn mixture_nll(&mut self, raw: Var, bins: &[u8], layout: MixtureLayout) -> Var {
        let s = self.shape(raw).to_vec();
        assert_eq!(s.len(), 2, "mixture_nll expects [rows, width]");
        assert_eq!(s[1], layout.row_width(), "mixture row width");
        assert_eq!(bins.len(), s[0] * layout.dims, "one bin per row and dimension");
        let src = self.value(raw).data();
        let mut row = vec![0.0; s[1]];
        let mut out = Vec::with_capacity(s[0]);
        for r in 0..s[0] {
            for (dst, v) in row.iter_mut().zip(&src[r * s[1]..(r + 1) * s[1]]) {
                *dst = v.f64();
            }
            let nll = mixture_row(&row, &bins[r * layout.dims..(r + 1) * layout.dims], &layout, None);
            out.push(R::c(nll));
        }
        self.push(
            Tensor::new(&[s[0]], out),
            Op::MixtureNll { raw, bins: bins.to_vec(), layout },
            &[raw],
        )
    }

    /// Per-row softmax cross-entropy against integer targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let s = self.shape(logits).to_vec();
        assert_eq!(s.len(), 2, "cross_entropy expects [rows, classes]");
        assert_eq!(targets.len(), s[0], "one target per row");
        let src = self.value(logits).data();
        let mut out = Vec::with_capacity(s[0]);
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < s[1], "target out of range");
            let row = &src[r * s[1]..(r + 1) * s[1]];
            let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v.f64() - max).exp()).sum::<f64>().ln();
            out.push(R::c(lse - row[t].f64()));
        }
        self.push(
            Tensor::new(&[s[0]], out),
            Op::CrossEntropy { logits, targets: targets.to_vec() },
            &[logits],
        )
    }

    /// Row-wise `x / (|x| + eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Var {
        let n = *self.shape(x).last().expect("rank");
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            let norm = row.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            let d = R::c(norm + eps);
            row.iter_mut().for_each(|v| *v /= d);
        }
        self.push(t, Op::L2Normalize { x, eps }, &[x])
    }

    /// Reverse sweep from scalar `loss`. Returns `(param slot, gradient)` pairs
    /// in slot order; slots never reached do not appear.
    pub fn backward(&self, loss: Var) -> Vec<(usize, Tensor<R>)> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<R>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape(), vec![R::one()]));
        let mut params = Vec::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut params);
        }
        params.sort_by_key(|(id, _)| *id);
        params
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<R>>], v: Var, g: Tensor<R>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += *x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(
        &self,
        node: &Node<R>,
        g: Tensor<R>,
        grads: &mut [Option<Tensor<R>>],
        params: &mut Vec<(usize, Tensor<R>)>,
    ) {
        let out = &node.value;
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => params.push((*id, g)),
            &Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(a), self.value(b));
                let (m, k) = if ta { (av.shape()[1], av.shape()[0]) } else { (av.shape()[0], av.shape()[1]) };
                let n = out.shape()[1];
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![R::zero(); m * k];
                    if ta {
                        gemm(k, n, m, bv.data(), tb, g.data(), true, &mut da, false);
                    } else {
                        gemm(m, n, k, g.data(), false, bv.data(), !tb, &mut da, false);
                    }
                    self.accumulate(grads, a, Tensor::new(av.shape(), da));
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![R::zero(); k * n];
                    if tb {
                        gemm(n, m, k, g.data(), true, av.data(), ta, &mut db, false);
                    } else {
                        gemm(k, m, n, av.data(), !ta, g.data(), false, &mut db, false);
                    }
                    self.accumulate(grads, b, Tensor::new(bv.shape(), db));
                }
            }
            &Op::BatchMatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(a), self.value(b));
                let bs = av.shape()[0];
                let (m, k) = if ta { (av.shape()[2], av.shape()[1]) } else { (av.shape()[1], av.shape()[2]) };
                let n = out.shape()[2];
                let gd = g.data();
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![R::zero(); bs * m * k];
                    for i in 0..bs {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let bi = &bv.data()[i * k * n..(i + 1) * k * n];
                        let dai = &mut da[i * m * k..(i + 1) * m * k];
                        if ta {
                            gemm(k, n, m, bi, tb, gi, true, dai, false);
                        } else {
                            gemm(m, n, k, gi, false, bi, !tb, dai, false);
                        }
                    }
                    self.accumulate(grads, a, Tensor::new(av.shape(), da));
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![R::zero(); bs * k * n];
                    for i in 0..bs {
                        let gi = &gd[i * m * n..(i + 1) * m * n];
                        let ai = &av.data()[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if tb {
                            gemm(n, m, k, gi, true, ai, ta, dbi, false);
                        } else {
                            gemm(k, m, n, ai, !ta, gi, false, dbi, false);
                        }
                    }
                    self.accumulate(grads, b, Tensor::new(bv.shape(), db));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g);
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, b, g.map(|v| -v));
                self.accumulate(grads, a, g);
            }
            &Op::Mul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    let d = g.data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, a, Tensor::new(g.shape(), d));
                }
                if self.nodes[b.0].needs_grad {
                    let d = g.data().iter().zip(self.value(a).data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, b, Tensor::new(g.shape(), d));
                }
            }
            &Op::Scale(x, c) => self.accumulate(grads, x, g.map(|v| v * c)),
            &Op::AddBias(x, b) => {
                if self.nodes[b.0].needs_grad {
                    let n = self.value(b).numel();
                    let mut db = vec![R::zero(); n];
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    self.accumulate(grads, b, Tensor::new(&[n], db));
                }
                self.accumulate(grads, x, g);
            }
            &Op::Relu(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &o)| if o > R::zero() { gv } else { R::zero() })
                    .collect();
                self.accumulate(grads, x, Tensor::new(g.shape(), d));
            }
            &Op::Sigmoid(x) => {
                let d = g.data().iter().zip(out.data()).map(|(&gv, &o)| gv * o * (R::one() - o)).collect();
                self.accumulate(grads, x, Tensor::new(g.shape(), d));
            }
            &Op::Tanh(x) => {
                let d = g.data().iter().zip(out.data()).map(|(&gv, &o)| gv * (R::one() - o * o)).collect();
                self.accumulate(grads, x, Tensor::new(g.shape(), d));
            }
            &Op::Softplus(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&gv, &xv)| gv * R::c(sigmoid(xv.f64())))
                    .collect();
                self.accumulate(grads, x, Tensor::new(g.shape(), d));
            }
            &Op::Softmax(x) => {
                let n = *out.shape().last().expect("rank");
                let mut d = Vec::with_capacity(out.numel());
                for (gr, yr) in g.data().chunks(n).zip(out.data().chunks(n)) {
                    let dot: R = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    d.extend(gr.iter().zip(yr).map(|(&a, &b)| b * (a - dot)));
                }
                self.accumulate(grads, x, Tensor::new(g.shape(), d));
            }
            &Op::Conv2d { x, w, b, dims, kernel, stride, pad } => {
                let cout = out.shape()[3];
                let rows = g.numel() / cout;
                let xv = self.value(x);
                let wv = self.value(w);
                let kk = wv.shape()[0];
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![R::zero(); cout];
                    for row in g.data().chunks(cout) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += *v;
                        }
                    }
                    self.accumulate(grads, b, Tensor::new(&[cout], db));
                }
                let need_w = self.nodes[w.0].needs_grad;
                let need_x = self.nodes[x.0].needs_grad;
                if need_w {
                    let (col, _, _) = im2col_nhwc(xv.data(), dims, kernel, stride, pad);
                    let mut dw = vec![R::zero(); kk * cout];
                    gemm(kk, rows, cout, &col, true, g.data(), false, &mut dw, false);
                    self.accumulate(grads, w, Tensor::new(wv.shape(), dw));
                }
                if need_x {
                    let mut dcol = vec![R::zero(); rows * kk];
                    gemm(rows, cout, kk, g.data(), false, wv.data(), true, &mut dcol, false);
                    let mut dx = vec![R::zero(); xv.numel()];
                    col2im_nhwc(&dcol, dims, kernel, stride, pad, &mut dx);
                    self.accumulate(grads, x, Tensor::new(xv.shape(), dx));
                }
            }
            &Op::Reshape(x) => {
                let shape = self.shape(x).to_vec();
                self.accumulate(grads, x, g.reshaped(&shape));
            }
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (d, s) = permute(g.data(), g.shape(), &inv);
                self.accumulate(grads, *x, Tensor::new(&s, d));
            }
            Op::Concat(xs, axis) => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    if self.nodes[v.0].needs_grad {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        self.accumulate(grads, v, Tensor::new(self.shape(v), d));
                    }
                    offset += len;
                }
            }
            &Op::Narrow { x, axis, start } => {
                let s = self.shape(x).to_vec();
                let (outer, full, inner) = split_axis(&s, axis);
                let len = g.shape()[axis];
                let mut d = vec![R::zero(); outer * full * inner];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, x, Tensor::new(&s, d));
            }
            Op::IndexSelect(x, indices) => {
                let s = self.shape(*x).to_vec();
                let inner: usize = s[1..].iter().product();
                let mut d = vec![R::zero(); s.iter().product()];
                for (j, &i) in indices.iter().enumerate() {
                    for (dst, v) in d[i * inner..(i + 1) * inner].iter_mut().zip(&g.data()[j * inner..(j + 1) * inner]) {
                        *dst += *v;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(&s, d));
            }
            &Op::MeanAxis(x, axis) => {
                let s = self.shape(x).to_vec();
                let (outer, len, inner) = split_axis(&s, axis);
                let inv = R::c(1.0 / len as f64);
                let mut d = vec![R::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i in 0..inner {
                            d[base + i] = g.data()[o * inner + i] * inv;
                        }
                    }
                }
                self.accumulate(grads, x, Tensor::new(&s, d));
            }
            &Op::SumAll(x) => {
                let gv = g.item();
                self.accumulate(grads, x, Tensor::full(self.shape(x), gv));
            }
            Op::MixtureNll { raw, bins, layout } => {
                let rv = self.value(*raw);
                let width = rv.shape()[1];
                let mut d = vec![R::zero(); rv.numel()];
                let mut row = vec![0.0; width];
                let mut grow = vec![0.0; width];
                for r in 0..rv.shape()[0] {
                    for (dst, v) in row.iter_mut().zip(&rv.data()[r * width..(r + 1) * width]) {
                        *dst = v.f64();
                    }
                    mixture_row(&row, &bins[r * layout.dims..(r + 1) * layout.dims], layout, Some(&mut grow));
                    let gr = g.data()[r].f64();
                    for (dst, v) in d[r * width..(r + 1) * width].iter_mut().zip(&grow) {
                        *dst = R::c(gr * v);
                    }
                }
                self.accumulate(grads, *raw, Tensor::new(rv.shape(), d));
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let k = lv.shape()[1];
                let mut d = Vec::with_capacity(lv.numel());
                for (r, &t) in targets.iter().enumerate() {
                    let row = &lv.data()[r * k..(r + 1) * k];
                    let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v.f64() - max).exp()).sum();
                    let gr = g.data()[r].f64();
                    for (j, v) in row.iter().enumerate() {
                        let p = (v.f64() - max).exp() / sum;
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        d.push(R::c(gr * (p - onehot)));
                    }
                }
                self.accumulate(grads, *logits, Tensor::new(lv.shape(), d));
            }
            &Op::L2Normalize { x, eps } => {
                let xv = self.value(x);
                let n = *xv.shape().last().expect("rank");
                let mut d = Vec::with_capacity(xv.numel());
                for (xr, gr) in xv.data().chunks(n).zip(g.data().chunks(n)) {
                    let norm = xr.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
                    let den = norm + eps;
                    let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a.f64() * b.f64()).sum();
                    let corr = if norm > 0.0 { dot / (den * den * norm) } else { 0.0 };
                    d.extend(xr.iter().zip(gr).map(|(a, b)| R::c(b.f64() / den - a.f64() * corr)));
                }
                self.accumulate(grads, x, Tensor::new(xv.shape(), d));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central-difference check of every op against the tape, in f64.
    fn check(build: impl Fn(&mut Graph<f64>, &[Var]) -> Var, inputs: &[Tensor<f64>]) {
        let eval = |ins: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().enumerate().map(|(i, t)| g.param(i, t)).collect();
            let out = build(&mut g, &vars);
            let loss = g.sum_all(out);
            (g.value(loss).item(), g.backward(loss))
        };
        let (_, grads) = eval(inputs);
        let h = 1e-6;
        for (pid, grad) in grads {
            for j in 0..inputs[pid].numel() {
                let mut plus = inputs.to_vec();
                plus[pid].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[pid].data_mut()[j] -= h;
                let num = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let ana = grad.data()[j];
                assert!(
                    (num - ana).abs() <= 1e-6 * (1.0 + num.abs()),
                    "input {pid}[{j}]: numeric {num} vs analytic {ana}"
                );
            }
        }
    }

    fn t(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| (((i as u64 + 1) * (seed * 2 + 7919)) % 1000) as f64 / 500.0 - 1.0).collect();
        Tensor::new(shape, data)
    }

    #[test]
    fn matmul_variants() {
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a = if ta { t(&[4, 3], 1) } else { t(&[3, 4], 1) };
            let b = if tb { t(&[5, 4], 2) } else { t(&[4, 5], 2) };
            check(|g, v| { let y = g.matmul_t(v[0], v[1], ta, tb); g.tanh(y) }, &[a, b]);
        }
    }

    #[test]
    fn batched_matmul_variants() {
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a = if ta { t(&[2, 4, 3], 3) } else { t(&[2, 3, 4], 3) };
            let b = if tb { t(&[2, 5, 4], 4) } else { t(&[2, 4, 5], 4) };
            check(|g, v| { let y = g.bmm(v[0], v[1], ta, tb); g.sigmoid(y) }, &[a, b]);
        }
    }

    #[test]
    fn elementwise_and_reductions() {
        check(
            |g, v| {
                let s = g.add(v[0], v[1]);
                let d = g.sub(s, v[1]);
                let m = g.mul(d, v[1]);
                let b = g.add_bias(m, v[2]);
                let r = g.softplus(b);
                let sm = g.softmax(r);
                let mean = g.mean_axis(sm, 1);
                g.scale(mean, 3.0)
            },
            &[t(&[2, 3, 4], 5), t(&[2, 3, 4], 6), t(&[4], 7)],
        );
    }

    #[test]
    fn conv_matches_tape() {
        check(
            |g, v| { let y = g.conv2d(v[0], v[1], v[2], 3, 2, 1); g.tanh(y) },
            &[t(&[2, 5, 6, 2], 8), t(&[18, 3], 9), t(&[3], 10)],
        );
    }

    #[test]
    fn shape_ops() {
        check(
            |g, v| {
                let p = g.permute(v[0], &[2, 0, 1]);
                let r = g.reshape(p, &[4, 6]);
                let c = g.concat(&[r, v[1]], 0);
                let n = g.narrow(c, 1, 1, 4);
                let s = g.index_select(n, &[0, 5, 5, 2]);
                let q = g.mul(s, s);
                g.tanh(q)
            },
            &[t(&[2, 3, 4], 11), t(&[2, 6], 12)],
        );
    }

    #[test]
    fn losses() {
        let layout = MixtureLayout { components: 2, dims: 3, bins: 256, center: 127.5, scale: 127.5, floor: 0.01 };
        let raw = t(&[3, layout.row_width()], 13);
        let bins = [0u8, 128, 255, 17, 200, 0, 255, 255, 3];
        check(move |g, v| g.mixture_nll(v[0], &bins, layout), &[raw]);
        check(|g, v| g.cross_entropy(v[0], &[1, 0, 3]), &[t(&[3, 4], 14)]);
        check(|g, v| { let y = g.l2_normalize(v[0], 1e-8); g.mul(y, v[1]) }, &[t(&[3, 4], 15), t(&[3, 4], 16)]);
        check(|g, v| { let y = g.relu(v[0]); g.mean_all(y) }, &[t(&[3, 4], 17)]);
    }
}
