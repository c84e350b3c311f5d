//! Dense f32 tensors and a tape for reverse-mode differentiation.
//!
//! Forward ops take the [`PrecisionMode`] to emulate: inputs are expected to
//! already be exact in that format, products and sums run in binary32, and
//! the result buffer is quantized at the op boundary. The backward pass
//! always runs in binary32 on the saved (quantized) values, mirroring how
//! mixed-precision training keeps a full-precision gradient path.
//!
//! Reductions and matrix products accumulate in a fixed order (last index
//! ascending), so results are bit-reproducible run to run.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::Fft;

use crate::error::{Error, Result};
use crate::precision::{quantize_buffer, PrecisionMode};

/// Dense row-major tensor. The format tag records which storage format every
/// element is exactly representable in.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    format: PrecisionMode,
}

impl Tensor {
    /// Binary32 tensor; the data is taken as-is.
    pub fn fp32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape/data length mismatch"
        );
        Tensor {
            shape,
            data,
            format: PrecisionMode::Fp32,
        }
    }

    /// Tensor quantized into `format` on construction.
    pub fn quantized(shape: Vec<usize>, mut data: Vec<f32>, format: PrecisionMode) -> Self {
        quantize_buffer(&mut data, format);
        let mut t = Tensor::fp32(shape, data);
        t.format = format;
        t
    }

    pub fn scalar(v: f32) -> Self {
        Tensor::fp32(vec![1], vec![v])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::fp32(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn format(&self) -> PrecisionMode {
        self.format
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar");
        self.data[0]
    }

    fn rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(op, format!("expected rank 2, got {:?}", self.shape))),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    AddScalar(NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f32),
    Matmul(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Ln(NodeId),
    Sqrt(NodeId),
    LogSoftmax(NodeId),
    Row(NodeId, usize),
    StackRows(Vec<NodeId>),
    Sum(NodeId),
    Mean(NodeId),
    Frames { input: NodeId, frame_len: usize, hop: usize },
    PowerSpectrum { input: NodeId, spectra: Vec<f32> },
    QuantizeTo(NodeId),
    CtcLoss { input: NodeId, target: Vec<usize>, blank: usize, alphas: Vec<f32> },
    MaxAbs { input: NodeId, argmax: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one scalar node with respect to tape nodes, in binary32.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient tensor for a node, if it was on a differentiable path.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }
}

/// Recorded computation. Append-only; node ids index in creation order, so
/// every node's parents precede it and one reverse sweep visits each node
/// exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Leaf that gradients flow into.
    pub fn variable(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Elementwise sum. Shapes must match exactly, except that a
    /// single-element operand broadcasts against any shape.
    pub fn add(&mut self, a: NodeId, b: NodeId, mode: PrecisionMode) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (shape, data) = if va.shape == vb.shape {
            let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
            (va.shape.clone(), data)
        } else if vb.len() == 1 {
            let s = vb.data[0];
            (va.shape.clone(), va.data.iter().map(|x| x + s).collect())
        } else if va.len() == 1 {
            let s = va.data[0];
            (vb.shape.clone(), vb.data.iter().map(|x| s + x).collect())
        } else {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", va.shape, vb.shape),
            ));
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::quantized(shape, data, mode), Op::Add(a, b), needs))
    }

    /// Elementwise product, with the same broadcast rule as [`Tape::add`].
    pub fn mul(&mut self, a: NodeId, b: NodeId, mode: PrecisionMode) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (shape, data) = if va.shape == vb.shape {
            let data = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).collect();
            (va.shape.clone(), data)
        } else if vb.len() == 1 {
            let s = vb.data[0];
            (va.shape.clone(), va.data.iter().map(|x| x * s).collect())
        } else if va.len() == 1 {
            let s = va.data[0];
            (vb.shape.clone(), vb.data.iter().map(|x| s * x).collect())
        } else {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", va.shape, vb.shape),
            ));
        };
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::quantized(shape, data, mode), Op::Mul(a, b), needs))
    }

    /// Add a fixed scalar to every element.
    pub fn add_scalar(&mut self, a: NodeId, c: f32, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::quantized(va.shape.clone(), va.data.iter().map(|x| x + c).collect(), mode);
        let needs = self.needs(&[a]);
        self.push(t, Op::AddScalar(a), needs)
    }

    /// Multiply every element by a fixed scalar.
    pub fn scale(&mut self, a: NodeId, c: f32, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::quantized(va.shape.clone(), va.data.iter().map(|x| x * c).collect(), mode);
        let needs = self.needs(&[a]);
        self.push(t, Op::Scale(a, c), needs)
    }

    /// Matrix product of rank-2 tensors, accumulated per element with the
    /// inner index ascending.
    pub fn matmul(&mut self, a: NodeId, b: NodeId, mode: PrecisionMode) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, ka) = va.rank2("matmul")?;
        let (kb, n) = vb.rank2("matmul")?;
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("inner dims {ka} vs {kb}"),
            ));
        }
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            let arow = &va.data[i * ka..(i + 1) * ka];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &vb.data[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(
            Tensor::quantized(vec![m, n], out, mode),
            Op::Matmul(a, b),
            needs,
        ))
    }

    pub fn tanh(&mut self, a: NodeId, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::quantized(va.shape.clone(), va.data.iter().map(|x| x.tanh()).collect(), mode);
        let needs = self.needs(&[a]);
        self.push(t, Op::Tanh(a), needs)
    }

    pub fn relu(&mut self, a: NodeId, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::quantized(
            va.shape.clone(),
            va.data.iter().map(|x| x.max(0.0)).collect(),
            mode,
        );
        let needs = self.needs(&[a]);
        self.push(t, Op::Relu(a), needs)
    }

    /// Natural log; the caller keeps inputs positive.
    pub fn ln(&mut self, a: NodeId, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::quantized(va.shape.clone(), va.data.iter().map(|x| x.ln()).collect(), mode);
        let needs = self.needs(&[a]);
        self.push(t, Op::Ln(a), needs)
    }

    pub fn sqrt(&mut self, a: NodeId, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::quantized(va.shape.clone(), va.data.iter().map(|x| x.sqrt()).collect(), mode);
        let needs = self.needs(&[a]);
        self.push(t, Op::Sqrt(a), needs)
    }

    /// Row-wise log-softmax of a rank-2 tensor. The normalization runs in
    /// binary32 with the max subtracted first; only the result is quantized.
    pub fn log_softmax(&mut self, a: NodeId, mode: PrecisionMode) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let (rows, cols) = va.rank2("log_softmax")?;
        let mut out = vec![0.0f32; rows * cols];
        for r in 0..rows {
            let row = &va.data[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let s: f32 = row.iter().map(|x| (x - m).exp()).sum();
            let lse = m + s.ln();
            for (o, &x) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(
            Tensor::quantized(vec![rows, cols], out, mode),
            Op::LogSoftmax(a),
            needs,
        ))
    }

    /// View of one row of a rank-2 tensor as a [1, n] tensor.
    pub fn row(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let (rows, cols) = va.rank2("row")?;
        if index >= rows {
            return Err(Error::invalid("row", format!("row {index} of {rows}")));
        }
        let data = va.data[index * cols..(index + 1) * cols].to_vec();
        let mut t = Tensor::fp32(vec![1, cols], data);
        t.format = va.format;
        let needs = self.needs(&[a]);
        Ok(self.push(t, Op::Row(a, index), needs))
    }

    /// Stack [1, n] tensors into an [r, n] tensor.
    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("stack_rows", "no rows"));
        }
        let cols = self.nodes[parts[0].0].value.rank2("stack_rows")?.1;
        let fmt = self.nodes[parts[0].0].value.format;
        let mut data = Vec::with_capacity(parts.len() * cols);
        for &p in parts {
            let v = &self.nodes[p.0].value;
            let (r, c) = v.rank2("stack_rows")?;
            if r != 1 || c != cols {
                return Err(Error::shape(
                    "stack_rows",
                    format!("expected [1, {cols}], got {:?}", v.shape),
                ));
            }
            data.extend_from_slice(&v.data);
        }
        let mut t = Tensor::fp32(vec![parts.len(), cols], data);
        t.format = fmt;
        let needs = self.needs(parts);
        Ok(self.push(t, Op::StackRows(parts.to_vec()), needs))
    }

    /// Sum of all elements, accumulated in index order.
    pub fn sum(&mut self, a: NodeId, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let mut acc = 0.0f32;
        for &x in &va.data {
            acc += x;
        }
        let needs = self.needs(&[a]);
        self.push(Tensor::quantized(vec![1], vec![acc], mode), Op::Sum(a), needs)
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: NodeId, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let n = va.len() as f32;
        let mut acc = 0.0f32;
        for &x in &va.data {
            acc += x;
        }
        let needs = self.needs(&[a]);
        self.push(
            Tensor::quantized(vec![1], vec![acc / n], mode),
            Op::Mean(a),
            needs,
        )
    }

    /// Slice a rank-1 signal into overlapping frames: row t covers samples
    /// [t*hop, t*hop + frame_len). Runs in binary32; formats pass through.
    pub fn frames(&mut self, a: NodeId, frame_len: usize, hop: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let n = match va.shape[..] {
            [n] => n,
            _ => return Err(Error::shape("frames", format!("expected rank 1, got {:?}", va.shape))),
        };
        if frame_len == 0 || hop == 0 {
            return Err(Error::invalid("frames", "frame_len and hop must be positive"));
        }
        if n < frame_len {
            return Err(Error::invalid(
                "frames",
                format!("signal of {n} samples shorter than one {frame_len}-sample frame"),
            ));
        }
        let count = 1 + (n - frame_len) / hop;
        let mut data = Vec::with_capacity(count * frame_len);
        for t in 0..count {
            data.extend_from_slice(&va.data[t * hop..t * hop + frame_len]);
        }
        let mut t = Tensor::fp32(vec![count, frame_len], data);
        t.format = va.format;
        let needs = self.needs(&[a]);
        Ok(self.push(t, Op::Frames { input: a, frame_len, hop }, needs))
    }

    /// Per-row power spectrum of already-windowed frames: row t becomes the
    /// squared DFT magnitudes at bins 0..=len/2. Always binary32.
    pub fn power_spectrum(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let (count, frame_len) = va.rank2("power_spectrum")?;
        let bins = frame_len / 2 + 1;
        let fft = plan_fft(frame_len, FftDirection::Forward);
        let mut buf = vec![Complex::new(0.0f32, 0.0f32); frame_len];
        let mut out = vec![0.0f32; count * bins];
        let mut spectra = vec![0.0f32; count * bins * 2];
        for t in 0..count {
            for (c, &x) in buf.iter_mut().zip(&va.data[t * frame_len..(t + 1) * frame_len]) {
                *c = Complex::new(x, 0.0);
            }
            fft.process(&mut buf);
            for k in 0..bins {
                let (re, im) = (buf[k].re, buf[k].im);
                spectra[(t * bins + k) * 2] = re;
                spectra[(t * bins + k) * 2 + 1] = im;
                out[t * bins + k] = re * re + im * im;
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(
            Tensor::fp32(vec![count, bins], out),
            Op::PowerSpectrum { input: a, spectra },
            needs,
        ))
    }

    /// Re-express a tensor in another storage format. The gradient passes
    /// through unchanged.
    pub fn quantize_to(&mut self, a: NodeId, mode: PrecisionMode) -> NodeId {
        let va = &self.nodes[a.0].value;
        let t = Tensor::quantized(va.shape.clone(), va.data.clone(), mode);
        let needs = self.needs(&[a]);
        self.push(t, Op::QuantizeTo(a), needs)
    }

    /// Alignment-marginal negative log-likelihood of `target` given per-frame
    /// log-probabilities (rank 2, frames x classes). The lattice recursion
    /// always runs in binary32 and the output is a binary32 scalar.
    pub fn ctc_loss(&mut self, a: NodeId, target: &[usize], blank: usize) -> Result<NodeId> {
        let va = &self.nodes[a.0].value;
        let (frames, classes) = va.rank2("ctc_loss")?;
        if blank >= classes {
            return Err(Error::invalid("ctc_loss", format!("blank {blank} out of {classes} classes")));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= classes || t == blank) {
            return Err(Error::invalid("ctc_loss", format!("target symbol {bad} invalid")));
        }
        let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
        let needed = target.len() + repeats;
        if frames < needed {
            return Err(Error::InfeasibleTarget { needed, frames });
        }

        let states = 2 * target.len() + 1;
        let lab = |s: usize| if s % 2 == 0 { blank } else { target[s / 2] };
        let lp = |t: usize, c: usize| va.data[t * classes + c];
        let mut alphas = vec![f32::NEG_INFINITY; frames * states];
        alphas[0] = lp(0, blank);
        if states > 1 {
            alphas[1] = lp(0, lab(1));
        }
        for t in 1..frames {
            for s in 0..states {
                let mut best = alphas[(t - 1) * states + s];
                if s >= 1 {
                    best = log_add(best, alphas[(t - 1) * states + s - 1]);
                }
                if s >= 2 && lab(s) != blank && lab(s) != lab(s - 2) {
                    best = log_add(best, alphas[(t - 1) * states + s - 2]);
                }
                alphas[t * states + s] = if best == f32::NEG_INFINITY {
                    f32::NEG_INFINITY
                } else {
                    best + lp(t, lab(s))
                };
            }
        }
        let mut total = alphas[(frames - 1) * states + states - 1];
        if states > 1 {
            total = log_add(total, alphas[(frames - 1) * states + states - 2]);
        }
        let needs = self.needs(&[a]);
        Ok(self.push(
            Tensor::fp32(vec![1], vec![-total]),
            Op::CtcLoss { input: a, target: target.to_vec(), blank, alphas },
            needs,
        ))
    }

    /// Largest absolute element, as a scalar. The subgradient goes to the
    /// first element attaining the maximum.
    pub fn max_abs(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let mut argmax = 0usize;
        let mut best = -1.0f32;
        for (i, &x) in va.data.iter().enumerate() {
            if x.abs() > best {
                best = x.abs();
                argmax = i;
            }
        }
        let needs = self.needs(&[a]);
        self.push(
            Tensor::fp32(vec![1], vec![best.max(0.0)]),
            Op::MaxAbs { input: a, argmax },
            needs,
        )
    }

    /// Reverse sweep from a scalar node. Returns binary32 gradients for every
    /// node on a differentiable path to `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|data| Tensor::fp32(self.nodes[i].value.shape.clone(), data)))
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], id: NodeId, delta: impl Iterator<Item = f32>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let buf = grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.len()]);
        for (b, d) in buf.iter_mut().zip(delta) {
            *b += d;
        }
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&self, id: usize, g: &[f32], grads: &mut Vec<Option<Vec<f32>>>) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if va.shape == vb.shape {
                    self.accumulate(grads, *a, g.iter().copied());
                    self.accumulate(grads, *b, g.iter().copied());
                } else if vb.len() == 1 {
                    self.accumulate(grads, *a, g.iter().copied());
                    self.accumulate(grads, *b, std::iter::once(sum_f32(g)));
                } else {
                    self.accumulate(grads, *a, std::iter::once(sum_f32(g)));
                    self.accumulate(grads, *b, g.iter().copied());
                }
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.iter().copied()),
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if va.shape == vb.shape {
                    self.accumulate(grads, *a, g.iter().zip(&vb.data).map(|(gi, y)| gi * y));
                    self.accumulate(grads, *b, g.iter().zip(&va.data).map(|(gi, x)| gi * x));
                } else if vb.len() == 1 {
                    let s = vb.data[0];
                    self.accumulate(grads, *a, g.iter().map(|gi| gi * s));
                    let dot = dot_f32(g, &va.data);
                    self.accumulate(grads, *b, std::iter::once(dot));
                } else {
                    let s = va.data[0];
                    let dot = dot_f32(g, &vb.data);
                    self.accumulate(grads, *a, std::iter::once(dot));
                    self.accumulate(grads, *b, g.iter().map(|gi| gi * s));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.iter().map(|gi| gi * c)),
            Op::Matmul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k) = (va.shape[0], va.shape[1]);
                let n = vb.shape[1];
                if self.nodes[a.0].needs_grad {
                    // dA = dC * B^T
                    let mut da = vec![0.0f32; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &vb.data[kk * n..(kk + 1) * n];
                            da[i * k + kk] = dot_f32(grow, brow);
                        }
                    }
                    self.accumulate(grads, *a, da.into_iter());
                }
                if self.nodes[b.0].needs_grad {
                    // dB = A^T * dC, accumulated with the row index ascending.
                    let mut db = vec![0.0f32; k * n];
                    for i in 0..m {
                        let arow = &va.data[i * k..(i + 1) * k];
                        let grow = &g[i * n..(i + 1) * n];
                        for (kk, &av) in arow.iter().enumerate() {
                            let drow = &mut db[kk * n..(kk + 1) * n];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += av * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *b, db.into_iter());
                }
            }
            Op::Tanh(a) => {
                let y = &node.value.data;
                self.accumulate(grads, *a, g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)));
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value.data;
                self.accumulate(
                    grads,
                    *a,
                    g.iter().zip(x).map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 }),
                );
            }
            Op::Ln(a) => {
                let x = &self.nodes[a.0].value.data;
                self.accumulate(grads, *a, g.iter().zip(x).map(|(gi, xi)| gi / xi));
            }
            Op::Sqrt(a) => {
                let y = &node.value.data;
                // At 0 the derivative diverges; 0 is a valid subgradient
                // choice and keeps norm terms usable at their minimum.
                self.accumulate(
                    grads,
                    *a,
                    g.iter()
                        .zip(y)
                        .map(|(gi, yi)| if *yi == 0.0 { 0.0 } else { gi / (2.0 * yi) }),
                );
            }
            Op::LogSoftmax(a) => {
                let y = &node.value.data;
                let cols = node.value.shape[1];
                let mut dx = Vec::with_capacity(y.len());
                for (yrow, grow) in y.chunks_exact(cols).zip(g.chunks_exact(cols)) {
                    let gsum = sum_f32(grow);
                    dx.extend(yrow.iter().zip(grow).map(|(yi, gi)| gi - yi.exp() * gsum));
                }
                self.accumulate(grads, *a, dx.into_iter());
            }
            Op::Row(a, index) => {
                let va = &self.nodes[a.0].value;
                let cols = va.shape[1];
                if self.nodes[a.0].needs_grad {
                    let buf = grads[a.0].get_or_insert_with(|| vec![0.0; va.len()]);
                    for (b, gi) in buf[index * cols..(index + 1) * cols].iter_mut().zip(g) {
                        *b += gi;
                    }
                }
            }
            Op::StackRows(parts) => {
                let cols = node.value.shape[1];
                for (r, &p) in parts.iter().enumerate() {
                    self.accumulate(grads, p, g[r * cols..(r + 1) * cols].iter().copied());
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                self.accumulate(grads, *a, std::iter::repeat(g[0]).take(n));
            }
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                let v = g[0] / n as f32;
                self.accumulate(grads, *a, std::iter::repeat(v).take(n));
            }
            Op::Frames { input, frame_len, hop } => {
                let va = &self.nodes[input.0].value;
                if self.nodes[input.0].needs_grad {
                    let count = node.value.shape[0];
                    let buf = grads[input.0].get_or_insert_with(|| vec![0.0; va.len()]);
                    for t in 0..count {
                        let grow = &g[t * frame_len..(t + 1) * frame_len];
                        for (b, gi) in buf[t * hop..t * hop + frame_len].iter_mut().zip(grow) {
                            *b += gi;
                        }
                    }
                }
            }
            Op::PowerSpectrum { input, spectra } => {
                if !self.nodes[input.0].needs_grad {
                    return Ok(());
                }
                let count = node.value.shape[0];
                let bins = node.value.shape[1];
                let frame_len = self.nodes[input.0].value.shape[1];
                let ifft = plan_fft(frame_len, FftDirection::Inverse);
                let mut buf = vec![Complex::new(0.0f32, 0.0f32); frame_len];
                let mut dx = vec![0.0f32; count * frame_len];
                for t in 0..count {
                    for c in buf.iter_mut() {
                        *c = Complex::new(0.0, 0.0);
                    }
                    for k in 0..bins {
                        let re = spectra[(t * bins + k) * 2];
                        let im = spectra[(t * bins + k) * 2 + 1];
                        let gp = g[t * bins + k];
                        // d|S|^2/dS, fed through the adjoint transform below.
                        buf[k] = Complex::new(2.0 * re * gp, 2.0 * im * gp);
                    }
                    ifft.process(&mut buf);
                    for (d, c) in dx[t * frame_len..(t + 1) * frame_len].iter_mut().zip(&buf) {
                        *d = c.re;
                    }
                }
                self.accumulate(grads, *input, dx.into_iter());
            }
            Op::QuantizeTo(a) => self.accumulate(grads, *a, g.iter().copied()),
            Op::CtcLoss { input, target, blank, alphas } => {
                if !self.nodes[input.0].needs_grad {
                    return Ok(());
                }
                let dx = self.ctc_input_grad(input, target, *blank, alphas, -node.value.data[0], g[0]);
                self.accumulate(grads, *input, dx.into_iter());
            }
            Op::MaxAbs { input, argmax } => {
                let x = self.nodes[input.0].value.data[*argmax];
                let s = if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                if self.nodes[input.0].needs_grad {
                    let buf =
                        grads[input.0].get_or_insert_with(|| vec![0.0; self.nodes[input.0].value.len()]);
                    buf[*argmax] += g[0] * s;
                }
            }
        }
        Ok(())
    }

    /// Gradient of the alignment NLL with respect to the log-probabilities:
    /// run the suffix recursion, then for each (frame, class) combine every
    /// lattice state with that label.
    fn ctc_input_grad(
        &self,
        input: &NodeId,
        target: &[usize],
        blank: usize,
        alphas: &[f32],
        log_z: f32,
        upstream: f32,
    ) -> Vec<f32> {
        let va = &self.nodes[input.0].value;
        let (frames, classes) = (va.shape[0], va.shape[1]);
        let states = 2 * target.len() + 1;
        let lab = |s: usize| if s % 2 == 0 { blank } else { target[s / 2] };
        let lp = |t: usize, c: usize| va.data[t * classes + c];

        let mut dx = vec![0.0f32; frames * classes];
        if !log_z.is_finite() {
            return dx;
        }
        let mut beta = vec![f32::NEG_INFINITY; states];
        let mut beta_next = vec![f32::NEG_INFINITY; states];
        beta[states - 1] = lp(frames - 1, lab(states - 1));
        if states > 1 {
            beta[states - 2] = lp(frames - 1, lab(states - 2));
        }
        for t in (0..frames).rev() {
            if t < frames - 1 {
                for s in 0..states {
                    let mut acc = beta_next[s];
                    if s + 1 < states {
                        acc = log_add(acc, beta_next[s + 1]);
                    }
                    if s + 2 < states && lab(s + 2) != blank && lab(s + 2) != lab(s) {
                        acc = log_add(acc, beta_next[s + 2]);
                    }
                    beta[s] = if acc == f32::NEG_INFINITY {
                        f32::NEG_INFINITY
                    } else {
                        acc + lp(t, lab(s))
                    };
                }
            }
            // Per class: logsumexp of alpha+beta over states with that label.
            // alpha and beta both include the frame-t emission, so divide one
            // copy back out.
            let mut class_acc = vec![f32::NEG_INFINITY; classes];
            for s in 0..states {
                let v = alphas[t * states + s] + beta[s];
                let c = lab(s);
                class_acc[c] = log_add(class_acc[c], v);
            }
            for c in 0..classes {
                if class_acc[c] != f32::NEG_INFINITY {
                    dx[t * classes + c] = -upstream * (class_acc[c] - lp(t, c) - log_z).exp();
                }
            }
            std::mem::swap(&mut beta, &mut beta_next);
        }
        dx
    }
}

fn sum_f32(xs: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for &x in xs {
        acc += x;
    }
    acc
}

fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// log(exp(a) + exp(b)) with negative-infinity passthrough.
fn log_add(a: f32, b: f32) -> f32 {
    if a == f32::NEG_INFINITY {
        return b;
    }
    if b == f32::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum FftDirection {
    Forward,
    Inverse,
}

thread_local! {
    static FFT_PLANS: RefCell<HashMap<(usize, FftDirection), Arc<dyn Fft<f32>>>> =
        RefCell::new(HashMap::new());
}

fn plan_fft(len: usize, dir: FftDirection) -> Arc<dyn Fft<f32>> {
    FFT_PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((len, dir))
            .or_insert_with(|| {
                let mut planner = rustfft::FftPlanner::new();
                match dir {
                    FftDirection::Forward => planner.plan_fft_forward(len),
                    FftDirection::Inverse => planner.plan_fft_inverse(len),
                }
            })
            .clone()
    })
}
