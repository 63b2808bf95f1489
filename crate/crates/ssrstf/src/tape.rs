//! Reverse-mode differentiation over tensor primitives.
//!
//! A [`Tape`] is an append-only arena of operation nodes. Forward calls
//! record the operation and its output; [`Tape::backward`] replays adjoints
//! in reverse topological order (which is construction order, since inputs
//! always precede outputs). A tape is consumed by exactly one backward pass.

use crate::error::{Error, Result};
use crate::parallel;
use crate::scalar::Scalar;
use crate::tensor::{row_major_strides, Tensor};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TenId(usize);

/// Axis selector for 1D depth-wise convolutions over a channels-last grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvAxis {
    /// Frame axis of a batch x T x J x C grid.
    Temporal,
    /// Joint axis of a batch x T x J x C grid.
    Joint,
}

impl ConvAxis {
    /// Concrete axis index in a rank-4 (B, T, J, C) grid.
    pub fn index(self) -> usize {
        match self {
            ConvAxis::Temporal => 1,
            ConvAxis::Joint => 2,
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Scale { a: usize, factor: T },
    Hadamard { a: usize, b: usize },
    Matmul { a: usize, b: usize },
    Linear { x: usize, w: usize, bias: Option<usize> },
    SoftmaxLast { a: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: T },
    Gelu { a: usize },
    Tanh { a: usize },
    NormLast { a: usize },
    SumAll { a: usize },
    ConcatLast { a: usize, b: usize },
    SliceAxis { a: usize, axis: usize, start: usize },
    PadAxis { a: usize, axis: usize, before: usize },
    Permute { a: usize, perm: Vec<usize> },
    Reshape { a: usize },
    DepthwiseConv1d { x: usize, w: usize, axis: usize, dilation: usize },
}

pub struct Tape<T: Scalar> {
    values: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    grads: Vec<Vec<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: TenId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn shape(&self, id: TenId) -> &[usize] {
        self.values[id.0].shape()
    }

    /// Gradient of the last backward pass, if one ran.
    pub fn grad(&self, id: TenId) -> Option<&[T]> {
        if self.consumed {
            Some(&self.grads[id.0])
        } else {
            None
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> TenId {
        self.values.push(value);
        self.ops.push(op);
        TenId(self.values.len() - 1)
    }

    /// Insert a tensor as an input node.
    pub fn leaf(&mut self, value: Tensor<T>) -> TenId {
        self.push(value, Op::Leaf)
    }

    // ── Elementwise and shape ops ───────────────────────────────────────

    pub fn add(&mut self, a: TenId, b: TenId) -> Result<TenId> {
        let out_shape = broadcast_shape("add", self.shape(a), self.shape(b))?;
        let value = self.broadcast_zip(&out_shape, a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: TenId, b: TenId) -> Result<TenId> {
        let out_shape = broadcast_shape("sub", self.shape(a), self.shape(b))?;
        let value = self.broadcast_zip(&out_shape, a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub { a: a.0, b: b.0 }))
    }

    pub fn hadamard(&mut self, a: TenId, b: TenId) -> Result<TenId> {
        let out_shape = broadcast_shape("hadamard", self.shape(a), self.shape(b))?;
        let value = self.broadcast_zip(&out_shape, a, b, |x, y| x * y);
        Ok(self.push(value, Op::Hadamard { a: a.0, b: b.0 }))
    }

    pub fn scale(&mut self, a: TenId, factor: T) -> TenId {
        let v = self.value(a);
        let value = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&x| x * factor).collect(),
        )
        .expect("scale preserves shape");
        self.push(value, Op::Scale { a: a.0, factor })
    }

    pub fn reshape(&mut self, a: TenId, shape: impl Into<Vec<usize>>) -> Result<TenId> {
        let value = self.value(a).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { a: a.0 }))
    }

    pub fn permute(&mut self, a: TenId, perm: &[usize]) -> Result<TenId> {
        let in_shape = self.shape(a).to_vec();
        if !is_permutation(perm, in_shape.len()) {
            return Err(Error::invalid(
                "permute",
                format!("{perm:?} is not a permutation of 0..{}", in_shape.len()),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&d| in_shape[d]).collect();
        let in_strides = row_major_strides(&in_shape);
        // Stride of output digit d inside the input buffer.
        let contrib: Vec<usize> = perm.iter().map(|&d| in_strides[d]).collect();
        let src = self.value(a).data();
        let mut out = vec![T::ZERO; src.len()];
        for_each_mapped(&out_shape, &contrib, |o, i| out[o] = src[i]);
        let value = Tensor::new(out_shape, out).expect("permute element count");
        Ok(self.push(value, Op::Permute { a: a.0, perm: perm.to_vec() }))
    }

    pub fn concat_last(&mut self, a: TenId, b: TenId) -> Result<TenId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let ok = sa.len() == sb.len()
            && !sa.is_empty()
            && sa[..sa.len() - 1] == sb[..sb.len() - 1];
        if !ok {
            return Err(Error::ShapeMismatch { op: "concat_last", lhs: sa, rhs: sb });
        }
        let (la, lb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = self.value(a).numel() / la;
        let mut out_shape = sa.clone();
        *out_shape.last_mut().unwrap() = la + lb;
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut out = Vec::with_capacity(rows * (la + lb));
        for r in 0..rows {
            out.extend_from_slice(&da[r * la..(r + 1) * la]);
            out.extend_from_slice(&db[r * lb..(r + 1) * lb]);
        }
        let value = Tensor::new(out_shape, out).expect("concat element count");
        Ok(self.push(value, Op::ConcatLast { a: a.0, b: b.0 }))
    }

    /// Contiguous slice `[start, start+len)` along one axis.
    pub fn slice_axis(&mut self, a: TenId, axis: usize, start: usize, len: usize) -> Result<TenId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::invalid(
                "slice_axis",
                format!("slice [{start}, {}) on axis {axis} of shape {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * mid * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, out).expect("slice element count");
        Ok(self.push(value, Op::SliceAxis { a: a.0, axis, start }))
    }

    /// Slice of the last axis; used for channel splits.
    pub fn slice_last(&mut self, a: TenId, start: usize, len: usize) -> Result<TenId> {
        let axis = self.shape(a).len().saturating_sub(1);
        self.slice_axis(a, axis, start, len)
    }

    /// Zero padding of one axis. The convolution cascade runs on a
    /// halo-padded grid so that it matches the composed dense kernel exactly,
    /// boundaries included.
    pub fn pad_axis(&mut self, a: TenId, axis: usize, before: usize, after: usize) -> Result<TenId> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::invalid(
                "pad_axis",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        if before == 0 && after == 0 {
            // Still record a node so crop offsets stay uniform for callers.
            let value = self.value(a).clone();
            return Ok(self.push(value, Op::PadAxis { a: a.0, axis, before }));
        }
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let new_mid = mid + before + after;
        let src = self.value(a).data();
        let mut out = vec![T::ZERO; outer * new_mid * inner];
        for o in 0..outer {
            let dst_base = (o * new_mid + before) * inner;
            let src_base = o * mid * inner;
            out[dst_base..dst_base + mid * inner]
                .copy_from_slice(&src[src_base..src_base + mid * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = new_mid;
        let value = Tensor::new(out_shape, out).expect("pad element count");
        Ok(self.push(value, Op::PadAxis { a: a.0, axis, before }))
    }

    // ── Dense linear algebra ────────────────────────────────────────────

    /// Batched matrix product. Operands are `[..., m, k]` and `[..., k, n]`;
    /// leading extents broadcast against each other.
    pub fn matmul(&mut self, a: TenId, b: TenId) -> Result<TenId> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let lead = broadcast_shape("matmul", &sa[..sa.len() - 2], &sb[..sb.len() - 2])?;
        let batches: usize = lead.iter().product();
        let map_a = BcastMap::new(&lead, &sa[..sa.len() - 2]);
        let map_b = BcastMap::new(&lead, &sb[..sb.len() - 2]);
        let da = self.value(a).data();
        let db = self.value(b).data();
        let mut out = vec![T::ZERO; batches * m * n];
        for batch in 0..batches {
            let pa = map_a.source_index(batch) * m * k;
            let pb = map_b.source_index(batch) * k * n;
            matmul2d(
                &da[pa..pa + m * k],
                &db[pb..pb + k * n],
                m,
                k,
                n,
                &mut out[batch * m * n..(batch + 1) * m * n],
            );
        }
        let mut out_shape = lead;
        out_shape.push(m);
        out_shape.push(n);
        let value = Tensor::new(out_shape, out).expect("matmul element count");
        Ok(self.push(value, Op::Matmul { a: a.0, b: b.0 }))
    }

    /// Per-position linear map over the channel (last) axis:
    /// `y[..., o] = sum_i x[..., i] * w[i, o] + bias[o]`.
    ///
    /// This is the pointwise (1x1) convolution of the architecture.
    pub fn linear(&mut self, x: TenId, w: TenId, bias: Option<TenId>) -> Result<TenId> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let c_in = *sx.last().ok_or_else(|| Error::invalid("linear", "rank-0 input"))?;
        if sw.len() != 2 || sw[0] != c_in {
            return Err(Error::ShapeMismatch { op: "linear", lhs: sx, rhs: sw });
        }
        let c_out = sw[1];
        if let Some(b) = bias {
            let sbias = self.shape(b);
            if sbias != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    lhs: vec![c_out],
                    rhs: sbias.to_vec(),
                });
            }
        }
        let positions = self.value(x).numel() / c_in;
        let dx = self.value(x).data();
        let dw = self.value(w).data();
        let dbias = bias.map(|b| self.value(b).data().to_vec());
        let mut out = vec![T::ZERO; positions * c_out];
        parallel::for_each_row(&mut out, c_out, |pos, orow| {
            if let Some(ref bv) = dbias {
                orow.copy_from_slice(bv);
            }
            let xrow = &dx[pos * c_in..(pos + 1) * c_in];
            for (i, &xv) in xrow.iter().enumerate() {
                let wrow = &dw[i * c_out..(i + 1) * c_out];
                for (o, &wv) in orow.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        });
        let mut out_shape = sx;
        *out_shape.last_mut().unwrap() = c_out;
        let value = Tensor::new(out_shape, out).expect("linear element count");
        Ok(self.push(value, Op::Linear { x: x.0, w: w.0, bias: bias.map(|b| b.0) }))
    }

    // ── Nonlinearities and normalization ────────────────────────────────

    /// Numerically stable softmax over the last axis.
    pub fn softmax_last(&mut self, a: TenId) -> Result<TenId> {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::invalid("softmax_last", "rank-0 input"))?;
        let src = self.value(a).data();
        if src.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax_last input".into()));
        }
        let mut out = vec![T::ZERO; src.len()];
        for (orow, xrow) in out.chunks_mut(width).zip(src.chunks(width)) {
            let max = xrow.iter().fold(xrow[0], |m, &v| m.maximum(v));
            let mut sum = T::ZERO;
            for (o, &x) in orow.iter_mut().zip(xrow) {
                let e = (x - max).exp();
                *o = e;
                sum += e;
            }
            let inv = T::ONE / sum;
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        let value = Tensor::new(shape, out).expect("softmax element count");
        Ok(self.push(value, Op::SoftmaxLast { a: a.0 }))
    }

    /// Layer normalization over the channel (last) axis with affine map.
    pub fn layer_norm(&mut self, x: TenId, gamma: TenId, beta: TenId, eps: T) -> Result<TenId> {
        let shape = self.shape(x).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::invalid("layer_norm", "rank-0 input"))?;
        if self.shape(gamma) != [width] || self.shape(beta) != [width] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let inv_w = T::ONE / T::from_usize(width);
        let mut out = vec![T::ZERO; src.len()];
        for (orow, xrow) in out.chunks_mut(width).zip(src.chunks(width)) {
            let mut mean = T::ZERO;
            for &v in xrow {
                mean += v;
            }
            mean *= inv_w;
            let mut var = T::ZERO;
            for &v in xrow {
                let d = v - mean;
                var += d * d;
            }
            var *= inv_w;
            let inv_std = T::ONE / (var + eps).sqrt();
            for (j, (o, &v)) in orow.iter_mut().zip(xrow).enumerate() {
                *o = (v - mean) * inv_std * g[j] + b[j];
            }
        }
        let value = Tensor::new(shape, out).expect("layer_norm element count");
        Ok(self.push(value, Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, eps }))
    }

    /// Gaussian error linear unit, exact erf form.
    pub fn gelu(&mut self, a: TenId) -> TenId {
        let v = self.value(a);
        let half = T::from_f64(0.5);
        let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
        let data = v
            .data()
            .iter()
            .map(|&x| half * x * (T::ONE + (x * inv_sqrt2).erf()))
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("gelu shape");
        self.push(value, Op::Gelu { a: a.0 })
    }

    pub fn tanh(&mut self, a: TenId) -> TenId {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| x.tanh()).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("tanh shape");
        self.push(value, Op::Tanh { a: a.0 })
    }

    // ── Reductions ──────────────────────────────────────────────────────

    /// Euclidean norm over the last axis: `[..., k] -> [...]`.
    pub fn norm_last(&mut self, a: TenId) -> Result<TenId> {
        let shape = self.shape(a).to_vec();
        let width = *shape
            .last()
            .ok_or_else(|| Error::invalid("norm_last", "rank-0 input"))?;
        let src = self.value(a).data();
        let out: Vec<T> = src
            .chunks(width)
            .map(|row| {
                let mut s = T::ZERO;
                for &v in row {
                    s += v * v;
                }
                s.sqrt()
            })
            .collect();
        let out_shape = shape[..shape.len() - 1].to_vec();
        let value = Tensor::new(out_shape, out).expect("norm_last element count");
        Ok(self.push(value, Op::NormLast { a: a.0 }))
    }

    /// Full reduction to a rank-0 scalar.
    pub fn sum_all(&mut self, a: TenId) -> TenId {
        let mut s = T::ZERO;
        for &v in self.value(a).data() {
            s += v;
        }
        self.push(Tensor::scalar(s), Op::SumAll { a: a.0 })
    }

    // ── Convolution ─────────────────────────────────────────────────────

    /// Per-channel 1D cross-correlation along `axis` of a channels-last grid,
    /// zero-padded to preserve shape. Weights are `(channels, kernel_size)`
    /// with odd `kernel_size`.
    pub fn depthwise_conv1d(
        &mut self,
        x: TenId,
        w: TenId,
        axis: usize,
        dilation: usize,
    ) -> Result<TenId> {
        let shape = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if shape.len() < 2 {
            return Err(Error::invalid("depthwise_conv1d", "input rank must be >= 2"));
        }
        if axis >= shape.len() - 1 {
            return Err(Error::invalid(
                "depthwise_conv1d",
                format!("axis {axis} out of range for shape {shape:?} (channels are last)"),
            ));
        }
        let channels = *shape.last().unwrap();
        if sw.len() != 2 || sw[0] != channels {
            return Err(Error::ShapeMismatch { op: "depthwise_conv1d", lhs: shape, rhs: sw });
        }
        let ksize = sw[1];
        if ksize % 2 == 0 {
            return Err(Error::invalid(
                "depthwise_conv1d",
                format!("kernel size {ksize} must be odd"),
            ));
        }
        if dilation == 0 {
            return Err(Error::invalid("depthwise_conv1d", "dilation must be >= 1"));
        }
        let geo = ConvGeometry::new(&shape, axis, channels);
        let src = self.value(x).data();
        let wdat = self.value(w).data();
        let mut out = vec![T::ZERO; src.len()];
        geo.correlate(src, wdat, ksize, dilation as isize, &mut out);
        let value = Tensor::new(shape, out).expect("conv element count");
        Ok(self.push(value, Op::DepthwiseConv1d { x: x.0, w: w.0, axis, dilation }))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Populates a gradient for every node;
    /// nodes the loss does not reach keep a zero gradient. The tape cannot be
    /// extended or replayed afterwards.
    pub fn backward(&mut self, loss: TenId) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        self.grads = self.values.iter().map(|v| vec![T::ZERO; v.numel()]).collect();
        self.grads[loss.0][0] = T::ONE;

        for i in (0..self.values.len()).rev() {
            let op = self.ops[i].clone();
            let (head_grads, tail) = self.grads.split_at_mut(i);
            let g: &[T] = &tail[0];
            let out_shape = self.values[i].shape();
            match op {
                Op::Leaf => {}
                Op::Add { a, b } => {
                    accumulate_reduced(&mut head_grads[a], g, out_shape, self.values[a].shape(), T::ONE);
                    accumulate_reduced(&mut head_grads[b], g, out_shape, self.values[b].shape(), T::ONE);
                }
                Op::Sub { a, b } => {
                    accumulate_reduced(&mut head_grads[a], g, out_shape, self.values[a].shape(), T::ONE);
                    accumulate_reduced(&mut head_grads[b], g, out_shape, self.values[b].shape(), -T::ONE);
                }
                Op::Scale { a, factor } => {
                    for (ga, &gv) in head_grads[a].iter_mut().zip(g) {
                        *ga += gv * factor;
                    }
                }
                Op::Hadamard { a, b } => {
                    let (sa, sb) = (self.values[a].shape(), self.values[b].shape());
                    let (da, db) = (self.values[a].data(), self.values[b].data());
                    let map_a = BcastMap::new(out_shape, sa);
                    let map_b = BcastMap::new(out_shape, sb);
                    if a == b {
                        let ga = &mut head_grads[a];
                        for o in 0..g.len() {
                            let ia = map_a.source_index(o);
                            ga[ia] += g[o] * da[ia] * T::from_f64(2.0);
                        }
                    } else {
                        let (ga, gb) = index_pair(head_grads, a, b);
                        for o in 0..g.len() {
                            let ia = map_a.source_index(o);
                            let ib = map_b.source_index(o);
                            ga[ia] += g[o] * db[ib];
                            gb[ib] += g[o] * da[ia];
                        }
                    }
                }
                Op::Matmul { a, b } => {
                    backward_matmul(&self.values, head_grads, g, i, a, b);
                }
                Op::Linear { x, w, bias } => {
                    let c_in = *self.values[x].shape().last().unwrap();
                    let c_out = *self.values[w].shape().last().unwrap();
                    let positions = self.values[x].numel() / c_in;
                    let dx = self.values[x].data();
                    let dw = self.values[w].data();
                    {
                        let gx = &mut head_grads[x];
                        for pos in 0..positions {
                            let grow = &g[pos * c_out..(pos + 1) * c_out];
                            let gxrow = &mut gx[pos * c_in..(pos + 1) * c_in];
                            for (iidx, gxi) in gxrow.iter_mut().enumerate() {
                                let wrow = &dw[iidx * c_out..(iidx + 1) * c_out];
                                let mut s = T::ZERO;
                                for (&gv, &wv) in grow.iter().zip(wrow) {
                                    s += gv * wv;
                                }
                                *gxi += s;
                            }
                        }
                    }
                    {
                        let gw = &mut head_grads[w];
                        for pos in 0..positions {
                            let grow = &g[pos * c_out..(pos + 1) * c_out];
                            let xrow = &dx[pos * c_in..(pos + 1) * c_in];
                            for (iidx, &xv) in xrow.iter().enumerate() {
                                let gwrow = &mut gw[iidx * c_out..(iidx + 1) * c_out];
                                for (gwv, &gv) in gwrow.iter_mut().zip(grow) {
                                    *gwv += xv * gv;
                                }
                            }
                        }
                    }
                    if let Some(bid) = bias {
                        let gb = &mut head_grads[bid];
                        for grow in g.chunks(c_out) {
                            for (gbv, &gv) in gb.iter_mut().zip(grow) {
                                *gbv += gv;
                            }
                        }
                    }
                }
                Op::SoftmaxLast { a } => {
                    let s = self.values[i].data();
                    let width = *out_shape.last().unwrap();
                    let ga = &mut head_grads[a];
                    for r in 0..s.len() / width {
                        let srow = &s[r * width..(r + 1) * width];
                        let grow = &g[r * width..(r + 1) * width];
                        let mut dot = T::ZERO;
                        for (&sv, &gv) in srow.iter().zip(grow) {
                            dot += sv * gv;
                        }
                        let garow = &mut ga[r * width..(r + 1) * width];
                        for ((gav, &sv), &gv) in garow.iter_mut().zip(srow).zip(grow) {
                            *gav += sv * (gv - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    backward_layer_norm(&self.values, head_grads, g, x, gamma, beta, eps);
                }
                Op::Gelu { a } => {
                    let src = self.values[a].data();
                    let ga = &mut head_grads[a];
                    let half = T::from_f64(0.5);
                    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
                    let inv_sqrt_2pi = T::from_f64(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                    for ((gav, &x), &gv) in ga.iter_mut().zip(src).zip(g) {
                        let cdf = half * (T::ONE + (x * inv_sqrt2).erf());
                        let pdf = inv_sqrt_2pi * (-half * x * x).exp();
                        *gav += gv * (cdf + x * pdf);
                    }
                }
                Op::Tanh { a } => {
                    let y = self.values[i].data();
                    let ga = &mut head_grads[a];
                    for ((gav, &yv), &gv) in ga.iter_mut().zip(y).zip(g) {
                        *gav += gv * (T::ONE - yv * yv);
                    }
                }
                Op::NormLast { a } => {
                    let src = self.values[a].data();
                    let y = self.values[i].data();
                    let width = src.len() / y.len().max(1);
                    let ga = &mut head_grads[a];
                    for (r, (&yv, &gv)) in y.iter().zip(g).enumerate() {
                        if yv > T::ZERO {
                            let scale = gv / yv;
                            let xrow = &src[r * width..(r + 1) * width];
                            let garow = &mut ga[r * width..(r + 1) * width];
                            for (gav, &xv) in garow.iter_mut().zip(xrow) {
                                *gav += scale * xv;
                            }
                        }
                    }
                }
                Op::SumAll { a } => {
                    let gv = g[0];
                    for gav in head_grads[a].iter_mut() {
                        *gav += gv;
                    }
                }
                Op::ConcatLast { a, b } => {
                    let la = *self.values[a].shape().last().unwrap();
                    let lb = *self.values[b].shape().last().unwrap();
                    let rows = self.values[a].numel() / la;
                    let (ga, gb) = index_pair(head_grads, a, b);
                    for r in 0..rows {
                        let grow = &g[r * (la + lb)..(r + 1) * (la + lb)];
                        for (gav, &gv) in ga[r * la..(r + 1) * la].iter_mut().zip(&grow[..la]) {
                            *gav += gv;
                        }
                        for (gbv, &gv) in gb[r * lb..(r + 1) * lb].iter_mut().zip(&grow[la..]) {
                            *gbv += gv;
                        }
                    }
                }
                Op::SliceAxis { a, axis, start } => {
                    let in_shape = self.values[a].shape();
                    let len = out_shape[axis];
                    let outer: usize = in_shape[..axis].iter().product();
                    let mid = in_shape[axis];
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let ga = &mut head_grads[a];
                    for o in 0..outer {
                        let src_base = o * len * inner;
                        let dst_base = o * mid * inner + start * inner;
                        for (gav, &gv) in ga[dst_base..dst_base + len * inner]
                            .iter_mut()
                            .zip(&g[src_base..src_base + len * inner])
                        {
                            *gav += gv;
                        }
                    }
                }
                Op::PadAxis { a, axis, before } => {
                    let in_shape = self.values[a].shape();
                    let outer: usize = in_shape[..axis].iter().product();
                    let mid = in_shape[axis];
                    let inner: usize = in_shape[axis + 1..].iter().product();
                    let new_mid = out_shape[axis];
                    let ga = &mut head_grads[a];
                    for o in 0..outer {
                        let src_base = (o * new_mid + before) * inner;
                        let dst_base = o * mid * inner;
                        for (gav, &gv) in ga[dst_base..dst_base + mid * inner]
                            .iter_mut()
                            .zip(&g[src_base..src_base + mid * inner])
                        {
                            *gav += gv;
                        }
                    }
                }
                Op::Permute { a, perm } => {
                    let in_shape = self.values[a].shape();
                    let in_strides = row_major_strides(in_shape);
                    let contrib: Vec<usize> = perm.iter().map(|&d| in_strides[d]).collect();
                    let ga = &mut head_grads[a];
                    for_each_mapped(out_shape, &contrib, |o, iidx| ga[iidx] += g[o]);
                }
                Op::Reshape { a } => {
                    for (gav, &gv) in head_grads[a].iter_mut().zip(g) {
                        *gav += gv;
                    }
                }
                Op::DepthwiseConv1d { x, w, axis, dilation } => {
                    let shape = self.values[x].shape();
                    let channels = *shape.last().unwrap();
                    let ksize = self.values[w].shape()[1];
                    let geo = ConvGeometry::new(shape, axis, channels);
                    let src = self.values[x].data();
                    let wdat = self.values[w].data();
                    let (gx, gw) = index_pair(head_grads, x, w);
                    geo.correlate_adjoint(src, wdat, ksize, dilation as isize, g, gx, gw);
                }
            }
        }
        Ok(())
    }

    fn broadcast_zip(
        &self,
        out_shape: &[usize],
        a: TenId,
        b: TenId,
        f: impl Fn(T, T) -> T,
    ) -> Tensor<T> {
        let da = self.value(a).data();
        let db = self.value(b).data();
        let numel: usize = out_shape.iter().product();
        let mut out = vec![T::ZERO; numel];
        if self.shape(a) == out_shape && self.shape(b) == out_shape {
            for (o, (&x, &y)) in out.iter_mut().zip(da.iter().zip(db)) {
                *o = f(x, y);
            }
        } else {
            let map_a = BcastMap::new(out_shape, self.shape(a));
            let map_b = BcastMap::new(out_shape, self.shape(b));
            for (o, ov) in out.iter_mut().enumerate() {
                *ov = f(da[map_a.source_index(o)], db[map_b.source_index(o)]);
            }
        }
        Tensor::new(out_shape.to_vec(), out).expect("broadcast element count")
    }
}

// ── Shared kernels and index helpers ────────────────────────────────────

fn backward_matmul<T: Scalar>(
    values: &[Tensor<T>],
    head_grads: &mut [Vec<T>],
    g: &[T],
    out: usize,
    a: usize,
    b: usize,
) {
    let sa = values[a].shape();
    let sb = values[b].shape();
    let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
    let n = sb[sb.len() - 1];
    let lead = &values[out].shape()[..sa.len().max(sb.len()) - 2];
    let batches: usize = lead.iter().product();
    let map_a = BcastMap::new(lead, &sa[..sa.len() - 2]);
    let map_b = BcastMap::new(lead, &sb[..sb.len() - 2]);
    let da = values[a].data();
    let db = values[b].data();
    let (ga, gb) = index_pair(head_grads, a, b);
    for batch in 0..batches {
        let pa = map_a.source_index(batch) * m * k;
        let pb = map_b.source_index(batch) * k * n;
        let gblock = &g[batch * m * n..(batch + 1) * m * n];
        // dA[i,p] += sum_j g[i,j] * b[p,j]
        for i in 0..m {
            let grow = &gblock[i * n..(i + 1) * n];
            let garow = &mut ga[pa + i * k..pa + (i + 1) * k];
            for (p, gav) in garow.iter_mut().enumerate() {
                let brow = &db[pb + p * n..pb + (p + 1) * n];
                let mut s = T::ZERO;
                for (&gv, &bv) in grow.iter().zip(brow) {
                    s += gv * bv;
                }
                *gav += s;
            }
        }
        // dB[p,j] += sum_i a[i,p] * g[i,j]
        for i in 0..m {
            let grow = &gblock[i * n..(i + 1) * n];
            let arow = &da[pa + i * k..pa + (i + 1) * k];
            for (p, &av) in arow.iter().enumerate() {
                let gbrow = &mut gb[pb + p * n..pb + (p + 1) * n];
                for (gbv, &gv) in gbrow.iter_mut().zip(grow) {
                    *gbv += av * gv;
                }
            }
        }
    }
}

fn backward_layer_norm<T: Scalar>(
    values: &[Tensor<T>],
    head_grads: &mut [Vec<T>],
    g: &[T],
    x: usize,
    gamma: usize,
    beta: usize,
    eps: T,
) {
    let src = values[x].data();
    let gdat = values[gamma].data();
    let width = values[gamma].numel();
    let inv_w = T::ONE / T::from_usize(width);
    // gamma == beta cannot happen: they are distinct parameter nodes.
    let (gx, ggamma, gbeta) = index_triple(head_grads, x, gamma, beta);
    let mut xhat = vec![T::ZERO; width];
    let mut dxhat = vec![T::ZERO; width];
    for r in 0..src.len() / width {
        let xrow = &src[r * width..(r + 1) * width];
        let grow = &g[r * width..(r + 1) * width];
        let mut mean = T::ZERO;
        for &v in xrow {
            mean += v;
        }
        mean *= inv_w;
        let mut var = T::ZERO;
        for &v in xrow {
            let d = v - mean;
            var += d * d;
        }
        var *= inv_w;
        let inv_std = T::ONE / (var + eps).sqrt();
        for j in 0..width {
            xhat[j] = (xrow[j] - mean) * inv_std;
            dxhat[j] = grow[j] * gdat[j];
            ggamma[j] += grow[j] * xhat[j];
            gbeta[j] += grow[j];
        }
        let mut sum_dxhat = T::ZERO;
        let mut sum_dxhat_xhat = T::ZERO;
        for j in 0..width {
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat[j];
        }
        let w_t = T::from_usize(width);
        let gxrow = &mut gx[r * width..(r + 1) * width];
        for j in 0..width {
            gxrow[j] +=
                inv_std * inv_w * (w_t * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
        }
    }
}


/// `out += a @ b` for row-major 2D blocks.
fn matmul2d<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Right-aligned broadcast of two shapes (each extent equal or 1).
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        let da = if d < rank - a.len() { 1 } else { a[d - (rank - a.len())] };
        let db = if d < rank - b.len() { 1 } else { b[d - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() });
        }
        out[d] = da.max(db);
    }
    Ok(out)
}

/// Maps flat indexes of a broadcast output back to a source tensor.
struct BcastMap {
    out_shape: Vec<usize>,
    /// Source stride per output digit; 0 where the source broadcasts.
    strides: Vec<usize>,
    identity: bool,
}

impl BcastMap {
    fn new(out_shape: &[usize], src_shape: &[usize]) -> Self {
        let rank = out_shape.len();
        let offset = rank - src_shape.len();
        let src_strides = row_major_strides(src_shape);
        let mut strides = vec![0usize; rank];
        for d in 0..rank {
            if d >= offset && src_shape[d - offset] != 1 {
                strides[d] = src_strides[d - offset];
            }
        }
        let identity = offset == 0 && out_shape == src_shape;
        BcastMap { out_shape: out_shape.to_vec(), strides, identity }
    }

    #[inline]
    fn source_index(&self, mut flat: usize) -> usize {
        if self.identity {
            return flat;
        }
        let mut idx = 0usize;
        for d in (0..self.out_shape.len()).rev() {
            let extent = self.out_shape[d];
            let digit = flat % extent;
            flat /= extent;
            idx += digit * self.strides[d];
        }
        idx
    }
}

/// grad accumulation with broadcast reduction: `dst[map(o)] += sign * g[o]`.
fn accumulate_reduced<T: Scalar>(
    dst: &mut [T],
    g: &[T],
    out_shape: &[usize],
    src_shape: &[usize],
    sign: T,
) {
    let map = BcastMap::new(out_shape, src_shape);
    if map.identity {
        for (d, &gv) in dst.iter_mut().zip(g) {
            *d += sign * gv;
        }
    } else {
        for (o, &gv) in g.iter().enumerate() {
            dst[map.source_index(o)] += sign * gv;
        }
    }
}

/// Visits every flat output index with its mapped source index, where the
/// source index is a weighted digit sum (used by permute).
fn for_each_mapped(out_shape: &[usize], contrib: &[usize], mut f: impl FnMut(usize, usize)) {
    let numel: usize = out_shape.iter().product();
    let rank = out_shape.len();
    if rank == 0 {
        if numel == 1 {
            f(0, 0);
        }
        return;
    }
    let mut digits = vec![0usize; rank];
    let mut src = 0usize;
    for o in 0..numel {
        f(o, src);
        // Odometer increment.
        for d in (0..rank).rev() {
            digits[d] += 1;
            src += contrib[d];
            if digits[d] < out_shape[d] {
                break;
            }
            src -= contrib[d] * out_shape[d];
            digits[d] = 0;
        }
    }
}

fn is_permutation(perm: &[usize], rank: usize) -> bool {
    if perm.len() != rank {
        return false;
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// Two distinct mutable references into a slice of vectors.
fn index_pair<T>(items: &mut [Vec<T>], a: usize, b: usize) -> (&mut Vec<T>, &mut Vec<T>) {
    assert_ne!(a, b, "aliased operands");
    if a < b {
        let (lo, hi) = items.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = items.split_at_mut(a);
        let b_ref = &mut lo[b];
        (&mut hi[0], b_ref)
    }
}

fn index_triple<T>(
    items: &mut [Vec<T>],
    a: usize,
    b: usize,
    c: usize,
) -> (&mut Vec<T>, &mut Vec<T>, &mut Vec<T>) {
    assert!(a != b && b != c && a != c, "aliased operands");
    let ptr = items.as_mut_ptr();
    // Safety: indexes are pairwise distinct and in bounds.
    unsafe {
        (
            &mut *ptr.add(a),
            &mut *ptr.add(b),
            &mut *ptr.add(c),
        )
    }
}

/// Index geometry for channels-last 1D convolution along one axis.
struct ConvGeometry {
    outer: usize,
    length: usize,
    inner: usize,
    channels: usize,
}

impl ConvGeometry {
    fn new(shape: &[usize], axis: usize, channels: usize) -> Self {
        let outer: usize = shape[..axis].iter().product();
        let length = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        ConvGeometry { outer, length, inner, channels }
    }

    /// `out[o, l, q, c] = sum_j w[c, j] * x[o, l + (j - ctr) * dil, q, c]`.
    fn correlate<T: Scalar>(&self, x: &[T], w: &[T], ksize: usize, dil: isize, out: &mut [T]) {
        let ctr = (ksize / 2) as isize;
        let blocks = self.inner / self.channels;
        let row = self.inner;
        for o in 0..self.outer {
            let base = o * self.length * row;
            for l in 0..self.length as isize {
                let obase = base + l as usize * row;
                for j in 0..ksize as isize {
                    let src_l = l + (j - ctr) * dil;
                    if src_l < 0 || src_l >= self.length as isize {
                        continue;
                    }
                    let ibase = base + src_l as usize * row;
                    for blk in 0..blocks {
                        let off = blk * self.channels;
                        let xs = &x[ibase + off..ibase + off + self.channels];
                        let os = &mut out[obase + off..obase + off + self.channels];
                        for c in 0..self.channels {
                            os[c] += w[c * ksize + j as usize] * xs[c];
                        }
                    }
                }
            }
        }
    }

    /// Adjoints of [`ConvGeometry::correlate`] w.r.t. input and weights.
    fn correlate_adjoint<T: Scalar>(
        &self,
        x: &[T],
        w: &[T],
        ksize: usize,
        dil: isize,
        g: &[T],
        gx: &mut [T],
        gw: &mut [T],
    ) {
        let ctr = (ksize / 2) as isize;
        let blocks = self.inner / self.channels;
        let row = self.inner;
        for o in 0..self.outer {
            let base = o * self.length * row;
            for l in 0..self.length as isize {
                let obase = base + l as usize * row;
                for j in 0..ksize as isize {
                    let src_l = l + (j - ctr) * dil;
                    if src_l < 0 || src_l >= self.length as isize {
                        continue;
                    }
                    let ibase = base + src_l as usize * row;
                    for blk in 0..blocks {
                        let off = blk * self.channels;
                        let gs = &g[obase + off..obase + off + self.channels];
                        let xs = &x[ibase + off..ibase + off + self.channels];
                        let gxs = &mut gx[ibase + off..ibase + off + self.channels];
                        for c in 0..self.channels {
                            let wv = w[c * ksize + j as usize];
                            gxs[c] += wv * gs[c];
                            gw[c * ksize + j as usize] += xs[c] * gs[c];
                        }
                    }
                }
            }
        }
    }
}
