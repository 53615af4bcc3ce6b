use super::kernels::{self, ConvGeometry};
use super::{Node, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn expect_rank<E: Element>(op: &'static str, t: &Tensor<E>, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn same_shape<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("operand shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn nchw(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

fn zip_map<E: Element>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}

impl<E: Element> Tape<E> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb)?;
        let out = zip_map(ta, tb, |x, y| x + y);
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb)?;
        let out = zip_map(ta, tb, |x, y| x - y);
        Ok(self.push_op(out, Op::Sub(a, b), &[a, b]))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let out = zip_map(ta, tb, |x, y| x * y);
        Ok(self.push_op(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = E::of(factor);
        let out = self.value(a).map(|x| x * f);
        self.push_op(out, Op::Scale(a, factor), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push_op(out, Op::Square(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.abs());
        self.push_op(out, Op::Abs(a), &[a])
    }

    /// Sum of all elements, accumulated in 64-bit.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(E::of(self.value(a).sum_f64()));
        self.push_op(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::scalar(E::of(t.sum_f64() / t.len() as f64));
        self.push_op(out, Op::Mean(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(E::zero()));
        self.push_op(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| E::one() / (E::one() + (-x).exp()));
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    /// Softmax along `axis`, max-shifted for stability.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", t.shape()),
            ));
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let src = t.data();
        let mut out = vec![E::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let mut m = src[idx(0)];
                for k in 1..len {
                    m = m.max(src[idx(k)]);
                }
                let mut total = 0.0f64;
                for k in 0..len {
                    let e = (src[idx(k)] - m).exp();
                    out[idx(k)] = e;
                    total += e.as_f64();
                }
                for k in 0..len {
                    out[idx(k)] = E::of(out[idx(k)].as_f64() / total);
                }
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push_op(out, Op::Softmax { x: a, axis }, &[a]))
    }

    /// Affine map `x · W + b` for `x: [N,D]`, `W: [D,M]`, `b: [M]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        expect_rank("linear", tx, 2)?;
        expect_rank("linear", tw, 2)?;
        expect_rank("linear", tb, 1)?;
        let (n, d) = (tx.shape()[0], tx.shape()[1]);
        let m = tw.shape()[1];
        if tw.shape()[0] != d || tb.shape()[0] != m {
            return Err(Error::shape(
                "linear",
                format!(
                    "input {:?}, weight {:?}, bias {:?} do not agree",
                    tx.shape(),
                    tw.shape(),
                    tb.shape()
                ),
            ));
        }
        let mut out = vec![E::zero(); n * m];
        for row in out.chunks_exact_mut(m) {
            row.copy_from_slice(tb.data());
        }
        kernels::gemm_nn(tx.data(), tw.data(), &mut out, n, d, m);
        let out = Tensor::new([n, m], out)?;
        Ok(self.push_op(out, Op::Linear { x, weight, bias }, &[x, weight, bias]))
    }

    /// Cross-correlation of `x: [N,C,H,W]` with `kernel: [K,C,kh,kw]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv2d_impl(x, kernel, None, stride, padding)
    }

    /// [`Tape::conv2d`] plus a per-output-channel bias `[K]`.
    pub fn conv2d_bias(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        self.conv2d_impl(x, kernel, Some(bias), stride, padding)
    }

    fn conv2d_impl(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (tx, tk) = (self.value(x), self.value(kernel));
        expect_rank("conv2d", tx, 4)?;
        expect_rank("conv2d", tk, 4)?;
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        let (n, c, h, w) = nchw(tx.shape());
        let (k, kc, kh, kw) = nchw(tk.shape());
        if kc != c {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels but kernel expects {kc}"),
            ));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            ));
        }
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.shape() != [k] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {:?} does not match {k} filters", tb.shape()),
                ));
            }
        }
        let geom = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
        };
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let plane = oh * ow;
        let patch = geom.patch_len();
        let mut col = vec![E::zero(); patch * plane];
        let mut out = vec![E::zero(); n * k * plane];
        let in_stride = c * h * w;
        for (img, dst) in tx
            .data()
            .chunks_exact(in_stride)
            .zip(out.chunks_exact_mut(k * plane))
        {
            if let Some(b) = bias {
                for (ch, &bv) in dst.chunks_exact_mut(plane).zip(self.value(b).data()) {
                    ch.fill(bv);
                }
            }
            kernels::im2col(img, &geom, &mut col);
            kernels::gemm_nn(tk.data(), &col, dst, k, patch, plane);
        }
        let out = Tensor::new([n, k, oh, ow], out)?;
        let operands: Vec<Var> = [Some(x), Some(kernel), bias].into_iter().flatten().collect();
        Ok(self.push_op(
            out,
            Op::Conv2d {
                x,
                kernel,
                bias,
                geom,
            },
            &operands,
        ))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    /// Ties go to the first element in row-major order.
    pub fn maxpool2x(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        expect_rank("maxpool2x", t, 4)?;
        let (n, c, h, w) = nchw(t.shape());
        let (oh, ow) = (h / 2, w / 2);
        if oh == 0 || ow == 0 {
            return Err(Error::shape(
                "maxpool2x",
                format!("spatial extent {h}x{w} too small to pool"),
            ));
        }
        let src = t.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], out)?;
        Ok(self.push_op(out, Op::MaxPool2x { x, argmax }, &[x]))
    }

    /// Nearest-neighbour upsampling: each pixel becomes a 2×2 block.
    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        expect_rank("upsample_nearest2x", t, 4)?;
        let (n, c, h, w) = nchw(t.shape());
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![E::zero(); n * c * oh * ow];
        for (src, dst) in t
            .data()
            .chunks_exact(h * w)
            .zip(out.chunks_exact_mut(oh * ow))
        {
            for y in 0..oh {
                let src_row = &src[(y / 2) * w..(y / 2 + 1) * w];
                for (xo, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                    *d = src_row[xo / 2];
                }
            }
        }
        let out = Tensor::new([n, c, oh, ow], out)?;
        Ok(self.push_op(out, Op::Upsample2x(x), &[x]))
    }

    /// Concatenates two `[N,·,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        expect_rank("concat_channels", ta, 4)?;
        expect_rank("concat_channels", tb, 4)?;
        let (n, ca, h, w) = nchw(ta.shape());
        let (nb, cb, hb, wb) = nchw(tb.shape());
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("{:?} and {:?} differ outside the channel axis", ta.shape(), tb.shape()),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            out.extend_from_slice(&ta.data()[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&tb.data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let out = Tensor::new([n, ca + cb, h, w], out)?;
        Ok(self.push_op(out, Op::ConcatChannels(a, b), &[a, b]))
    }

    /// Mean over the spatial axes: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        expect_rank("global_avg_pool", t, 4)?;
        let (n, c, h, w) = nchw(t.shape());
        let plane = h * w;
        let out: Vec<E> = t
            .data()
            .chunks_exact(plane)
            .map(|p| E::of(p.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64))
            .collect();
        let out = Tensor::new([n, c], out)?;
        Ok(self.push_op(out, Op::GlobalAvgPool(x), &[x]))
    }

    /// Batch mean of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        expect_rank("cross_entropy", t, 2)?;
        let (k, c) = (t.shape()[0], t.shape()[1]);
        if labels.len() != k {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} labels for {k} rows of logits", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Data(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut total = 0.0f64;
        for (row, &label) in t.data().chunks_exact(c).zip(labels) {
            total += log_sum_exp(row) - row[label].as_f64();
        }
        let out = Tensor::scalar(E::of(total / k as f64));
        Ok(self.push_op(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
            &[logits],
        ))
    }

    /// Per-sample class-weighted channel sum: for `features: [N,C,h,w]` and a
    /// classifier weight `[C,M]`, returns `[N,1,h,w]` with
    /// `out[n] = Σ_c weight[c, classes[n]] · features[n,c]`.
    pub fn class_map(&mut self, features: Var, weight: Var, classes: &[usize]) -> Result<Var> {
        let (tf, tw) = (self.value(features), self.value(weight));
        expect_rank("class_map", tf, 4)?;
        expect_rank("class_map", tw, 2)?;
        let (n, c, h, w) = nchw(tf.shape());
        let m = tw.shape()[1];
        if tw.shape()[0] != c {
            return Err(Error::shape(
                "class_map",
                format!("{c} feature channels but weight has {} rows", tw.shape()[0]),
            ));
        }
        if classes.len() != n {
            return Err(Error::shape(
                "class_map",
                format!("{} class indices for batch of {n}", classes.len()),
            ));
        }
        if let Some(&bad) = classes.iter().find(|&&k| k >= m) {
            return Err(Error::Data(format!("class {bad} out of range for {m} classes")));
        }
        let plane = h * w;
        let mut out = vec![E::zero(); n * plane];
        for (i, dst) in out.chunks_exact_mut(plane).enumerate() {
            let feat = &tf.data()[i * c * plane..(i + 1) * c * plane];
            for (ch, fplane) in feat.chunks_exact(plane).enumerate() {
                let coef = tw.data()[ch * m + classes[i]];
                kernels::axpy(coef, fplane, dst);
            }
        }
        let out = Tensor::new([n, 1, h, w], out)?;
        Ok(self.push_op(
            out,
            Op::ClassMap {
                features,
                weight,
                classes: classes.to_vec(),
            },
            &[features, weight],
        ))
    }

    /// Per-sample min-max normalization to `[0,1]` over all non-batch axes:
    /// `(x - min) / (max - min + eps)`. A constant sample maps to zeros.
    pub fn minmax_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        if t.rank() < 2 {
            return Err(Error::shape(
                "minmax_normalize",
                format!("expected a batch axis, got shape {:?}", t.shape()),
            ));
        }
        let per = t.len() / t.shape()[0];
        let mut out = Vec::with_capacity(t.len());
        let mut argmin = Vec::new();
        let mut argmax = Vec::new();
        for sample in t.data().chunks_exact(per) {
            let (mut lo, mut hi) = (0, 0);
            for (i, &v) in sample.iter().enumerate() {
                if v < sample[lo] {
                    lo = i;
                }
                if v > sample[hi] {
                    hi = i;
                }
            }
            let (mn, mx) = (sample[lo].as_f64(), sample[hi].as_f64());
            let denom = mx - mn + eps;
            out.extend(sample.iter().map(|&v| E::of((v.as_f64() - mn) / denom)));
            argmin.push(lo);
            argmax.push(hi);
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push_op(
            out,
            Op::MinMaxNormalize {
                x,
                eps,
                argmin,
                argmax,
            },
            &[x],
        ))
    }
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn log_sum_exp<E: Element>(row: &[E]) -> f64 {
    let m = row
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v.as_f64() - m).exp()).sum::<f64>().ln()
}

/// Gradients of node `i`'s operands given the gradient `g` of its output.
pub(super) fn backward_rule<E: Element>(
    nodes: &[Node<E>],
    i: usize,
    g: &Tensor<E>,
) -> Vec<(Var, Tensor<E>)> {
    let needs = |v: Var| nodes[v.0].requires_grad;
    let val = |v: Var| &nodes[v.0].value;
    let out = &nodes[i].value;
    let gd = g.data();
    let like = |t: &Tensor<E>, data: Vec<E>| Tensor::new(t.shape().to_vec(), data).expect("shape");

    match &nodes[i].op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
        Op::Mul(a, b) => {
            let mut res = Vec::new();
            if needs(*a) {
                res.push((*a, zip_map(g, val(*b), |x, y| x * y)));
            }
            if needs(*b) {
                res.push((*b, zip_map(g, val(*a), |x, y| x * y)));
            }
            res
        }
        Op::Scale(a, f) => {
            let f = E::of(*f);
            vec![(*a, g.map(|x| x * f))]
        }
        Op::Square(a) => {
            let two = E::of(2.0);
            vec![(*a, zip_map(g, val(*a), |gv, x| two * x * gv))]
        }
        Op::Abs(a) => vec![(
            *a,
            zip_map(g, val(*a), |gv, x| {
                if x > E::zero() {
                    gv
                } else if x < E::zero() {
                    -gv
                } else {
                    E::zero()
                }
            }),
        )],
        Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape().to_vec(), gd[0]))],
        Op::Mean(a) => {
            let t = val(*a);
            let v = E::of(gd[0].as_f64() / t.len() as f64);
            vec![(*a, Tensor::full(t.shape().to_vec(), v))]
        }
        Op::Relu(a) => vec![(
            *a,
            zip_map(g, val(*a), |gv, x| if x > E::zero() { gv } else { E::zero() }),
        )],
        Op::Sigmoid(a) => vec![(*a, zip_map(g, out, |gv, y| gv * y * (E::one() - y)))],
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = axis_split(out.shape(), *axis);
            let y = out.data();
            let mut dx = vec![E::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let s: f64 = (0..len).map(|k| (gd[idx(k)] * y[idx(k)]).as_f64()).sum();
                    let s = E::of(s);
                    for k in 0..len {
                        dx[idx(k)] = y[idx(k)] * (gd[idx(k)] - s);
                    }
                }
            }
            vec![(*x, like(out, dx))]
        }
        Op::Linear { x, weight, bias } => {
            let (tx, tw) = (val(*x), val(*weight));
            let (n, d) = (tx.shape()[0], tx.shape()[1]);
            let m = tw.shape()[1];
            let mut res = Vec::new();
            if needs(*x) {
                let mut dx = vec![E::zero(); n * d];
                kernels::gemm_nt(gd, tw.data(), &mut dx, n, m, d);
                res.push((*x, like(tx, dx)));
            }
            if needs(*weight) {
                let mut dw = vec![E::zero(); d * m];
                kernels::gemm_tn(tx.data(), gd, &mut dw, d, n, m);
                res.push((*weight, like(tw, dw)));
            }
            if needs(*bias) {
                let db = (0..m)
                    .map(|j| E::of((0..n).map(|r| gd[r * m + j].as_f64()).sum()))
                    .collect();
                res.push((*bias, like(val(*bias), db)));
            }
            res
        }
        Op::Conv2d {
            x,
            kernel,
            bias,
            geom,
        } => {
            let (tx, tk) = (val(*x), val(*kernel));
            let n = tx.shape()[0];
            let k = tk.shape()[0];
            let plane = geom.out_h() * geom.out_w();
            let patch = geom.patch_len();
            let in_stride = geom.channels * geom.height * geom.width;
            let (want_x, want_k) = (needs(*x), needs(*kernel));
            let mut dx = if want_x { vec![E::zero(); tx.len()] } else { Vec::new() };
            let mut dk = vec![E::zero(); if want_k { tk.len() } else { 0 }];
            let mut col = vec![E::zero(); patch * plane];
            let mut dcol = vec![E::zero(); if want_x { patch * plane } else { 0 }];
            for s in 0..n {
                let gs = &gd[s * k * plane..(s + 1) * k * plane];
                if want_k {
                    kernels::im2col(&tx.data()[s * in_stride..(s + 1) * in_stride], geom, &mut col);
                    kernels::gemm_nt(gs, &col, &mut dk, k, plane, patch);
                }
                if want_x {
                    dcol.fill(E::zero());
                    kernels::gemm_tn(tk.data(), gs, &mut dcol, patch, k, plane);
                    kernels::col2im(&dcol, geom, &mut dx[s * in_stride..(s + 1) * in_stride]);
                }
            }
            let mut res = Vec::new();
            if want_x {
                res.push((*x, like(tx, dx)));
            }
            if want_k {
                res.push((*kernel, like(tk, dk)));
            }
            if let Some(b) = bias {
                if needs(*b) {
                    let db = (0..k)
                        .map(|ch| {
                            let mut acc = 0.0f64;
                            for s in 0..n {
                                let start = (s * k + ch) * plane;
                                acc += gd[start..start + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                            }
                            E::of(acc)
                        })
                        .collect();
                    res.push((*b, like(val(*b), db)));
                }
            }
            res
        }
        Op::MaxPool2x { x, argmax } => {
            let mut dx = vec![E::zero(); val(*x).len()];
            for (&src, &gv) in argmax.iter().zip(gd) {
                dx[src] += gv;
            }
            vec![(*x, like(val(*x), dx))]
        }
        Op::Upsample2x(x) => {
            let t = val(*x);
            let (_, _, h, w) = nchw(t.shape());
            let ow = 2 * w;
            let mut dx = vec![E::zero(); t.len()];
            for (dst, src) in dx.chunks_exact_mut(h * w).zip(gd.chunks_exact(4 * h * w)) {
                for y in 0..2 * h {
                    for xo in 0..ow {
                        dst[(y / 2) * w + xo / 2] += src[y * ow + xo];
                    }
                }
            }
            vec![(*x, like(t, dx))]
        }
        Op::ConcatChannels(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (n, ca, h, w) = nchw(ta.shape());
            let cb = tb.shape()[1];
            let plane = h * w;
            let mut da = Vec::with_capacity(ta.len());
            let mut db = Vec::with_capacity(tb.len());
            for s in 0..n {
                let base = s * (ca + cb) * plane;
                da.extend_from_slice(&gd[base..base + ca * plane]);
                db.extend_from_slice(&gd[base + ca * plane..base + (ca + cb) * plane]);
            }
            vec![(*a, like(ta, da)), (*b, like(tb, db))]
        }
        Op::GlobalAvgPool(x) => {
            let t = val(*x);
            let (_, _, h, w) = nchw(t.shape());
            let plane = h * w;
            let inv = 1.0 / plane as f64;
            let mut dx = Vec::with_capacity(t.len());
            for &gv in gd {
                let v = E::of(gv.as_f64() * inv);
                dx.extend(std::iter::repeat(v).take(plane));
            }
            vec![(*x, like(t, dx))]
        }
        Op::CrossEntropy { logits, labels } => {
            let t = val(*logits);
            let (k, c) = (t.shape()[0], t.shape()[1]);
            let scale = gd[0].as_f64() / k as f64;
            let mut dx = Vec::with_capacity(t.len());
            for (row, &label) in t.data().chunks_exact(c).zip(labels) {
                let lse = log_sum_exp(row);
                for (j, &v) in row.iter().enumerate() {
                    let p = (v.as_f64() - lse).exp();
                    let onehot = if j == label { 1.0 } else { 0.0 };
                    dx.push(E::of((p - onehot) * scale));
                }
            }
            vec![(*logits, like(t, dx))]
        }
        Op::ClassMap {
            features,
            weight,
            classes,
        } => {
            let (tf, tw) = (val(*features), val(*weight));
            let (n, c, h, w) = nchw(tf.shape());
            let m = tw.shape()[1];
            let plane = h * w;
            let mut res = Vec::new();
            if needs(*features) {
                let mut df = vec![E::zero(); tf.len()];
                for s in 0..n {
                    let gs = &gd[s * plane..(s + 1) * plane];
                    for ch in 0..c {
                        let coef = tw.data()[ch * m + classes[s]];
                        let start = (s * c + ch) * plane;
                        kernels::axpy(coef, gs, &mut df[start..start + plane]);
                    }
                }
                res.push((*features, like(tf, df)));
            }
            if needs(*weight) {
                let mut dw = vec![E::zero(); tw.len()];
                for s in 0..n {
                    let gs = &gd[s * plane..(s + 1) * plane];
                    for ch in 0..c {
                        let start = (s * c + ch) * plane;
                        dw[ch * m + classes[s]] += kernels::dot(gs, &tf.data()[start..start + plane]);
                    }
                }
                res.push((*weight, like(tw, dw)));
            }
            res
        }
        Op::MinMaxNormalize {
            x,
            eps,
            argmin,
            argmax,
        } => {
            let t = val(*x);
            let per = t.len() / t.shape()[0];
            let mut dx = Vec::with_capacity(t.len());
            for (s, (xs, (ys, gs))) in t
                .data()
                .chunks_exact(per)
                .zip(out.data().chunks_exact(per).zip(gd.chunks_exact(per)))
                .enumerate()
            {
                let denom = xs[argmax[s]].as_f64() - xs[argmin[s]].as_f64() + eps;
                let sum_g: f64 = gs.iter().map(|v| v.as_f64()).sum();
                let sum_gy: f64 = gs.iter().zip(ys).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                let start = dx.len();
                dx.extend(gs.iter().map(|v| v.as_f64() / denom));
                let mut d_min = -sum_g / denom + sum_gy / denom;
                let d_max = -sum_gy / denom;
                if argmin[s] == argmax[s] {
                    d_min += d_max;
                    dx[start + argmin[s]] += d_min;
                } else {
                    dx[start + argmin[s]] += d_min;
                    dx[start + argmax[s]] += d_max;
                }
            }
            let dx = dx.into_iter().map(E::of).collect();
            vec![(*x, like(t, dx))]
        }
    }
}
