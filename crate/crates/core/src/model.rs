//! The toy ASR system: log mel front-end, a small recurrent network with a
//! CTC head, greedy decoding, training, and weight-file I/O.
//!
//! One model is trained in FP32 and then evaluated under any
//! [`PrecisionMode`]: weights are quantized to the evaluation mode on entry
//! and every op's output is quantized as it is computed. The front-end is
//! the exception; it runs in FP32 and its features are quantized once at
//! the end, so precision effects isolate to the network itself.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::{Utterance, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::metrics;
use crate::precision::PrecisionMode;
use crate::rng::Rng;
use crate::tensor::{NodeId, Tape, Tensor};

/// Transcription output and attack target: vocabulary ids, blank excluded.
pub type Transcript = Vec<u32>;

/// Front-end framing and filter-bank layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontEndConfig {
    pub frame_length: usize,
    pub hop: usize,
    pub num_filters: usize,
}

impl Default for FrontEndConfig {
    fn default() -> Self {
        FrontEndConfig {
            frame_length: 400,
            hop: 160,
            num_filters: 40,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Center frequencies (Hz) of the triangular filters: `num_filters` points
/// uniformly spaced on the mel scale between 0 and Nyquist, endpoints
/// excluded.
pub fn filter_centers(num_filters: usize) -> Vec<f64> {
    let top = hz_to_mel(f64::from(SAMPLE_RATE) / 2.0);
    (1..=num_filters)
        .map(|j| mel_to_hz(top * j as f64 / (num_filters + 1) as f64))
        .collect()
}

/// Triangular mel filter bank as a [bins x num_filters] matrix, so that
/// `power_spectrum_rows · M` yields per-frame filter energies. Triangles are
/// linear in Hz between mel-uniform edge frequencies.
fn mel_filterbank(bins: usize, frame_length: usize, num_filters: usize) -> Tensor {
    let top = hz_to_mel(f64::from(SAMPLE_RATE) / 2.0);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|j| mel_to_hz(top * j as f64 / (num_filters + 1) as f64))
        .collect();
    let bin_hz = f64::from(SAMPLE_RATE) / frame_length as f64;
    let mut m = vec![0.0f32; bins * num_filters];
    for k in 0..bins {
        let f = k as f64 * bin_hz;
        for j in 0..num_filters {
            let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            m[k * num_filters + j] = w as f32;
        }
    }
    Tensor::fp32(vec![bins, num_filters], m)
}

/// Periodic Hann window tiled across `rows` frames, matching the shape the
/// elementwise multiply expects.
fn tiled_hann(rows: usize, frame_length: usize) -> Tensor {
    let n = frame_length as f32;
    let window: Vec<f32> = (0..frame_length)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f32::consts::PI * i as f32 / n).cos()))
        .collect();
    let mut data = Vec::with_capacity(rows * frame_length);
    for _ in 0..rows {
        data.extend_from_slice(&window);
    }
    Tensor::fp32(vec![rows, frame_length], data)
}

/// Number of analysis frames a signal of `len` samples yields.
pub fn frame_count(len: usize, cfg: &FrontEndConfig) -> usize {
    if len < cfg.frame_length {
        0
    } else {
        1 + (len - cfg.frame_length) / cfg.hop
    }
}

/// Log mel filter-bank features as a graph over an existing signal node, so
/// gradients reach the samples. Everything up to the final quantization runs
/// in FP32.
pub fn features_graph(
    tape: &mut Tape,
    signal: NodeId,
    cfg: &FrontEndConfig,
    mode: PrecisionMode,
) -> Result<NodeId> {
    const FP: PrecisionMode = PrecisionMode::Fp32;
    let framed = tape.frames(signal, cfg.frame_length, cfg.hop)?;
    let rows = tape.value(framed).shape()[0];
    let window = tape.constant(tiled_hann(rows, cfg.frame_length));
    let windowed = tape.mul(framed, window, FP)?;
    let power = tape.power_spectrum(windowed)?;
    let bins = cfg.frame_length / 2 + 1;
    let bank = tape.constant(mel_filterbank(bins, cfg.frame_length, cfg.num_filters));
    let energies = tape.matmul(power, bank, FP)?;
    // Floor before the log bounds gradients on silent frames.
    let floored = tape.add_scalar(energies, 1e-10, FP);
    let logged = tape.ln(floored, FP);
    Ok(tape.quantize_to(logged, mode))
}

/// Log mel features of a signal as a plain tensor.
pub fn features(x: &[f32], cfg: &FrontEndConfig, mode: PrecisionMode) -> Result<Tensor> {
    let mut tape = Tape::new();
    let sig = tape.constant(Tensor::fp32(vec![x.len()], x.to_vec()));
    let out = features_graph(&mut tape, sig, cfg, mode)?;
    Ok(tape.value(out).clone())
}

/// Network weights, stored FP32. Shapes carry the architecture: filters F,
/// hidden width H, and classes C = vocab + 1 with the blank id last.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Input projection, [F x H].
    pub w1: Tensor,
    /// Input bias, [1 x H].
    pub b1: Tensor,
    /// Recurrent input weights, [H x H].
    pub w: Tensor,
    /// Recurrent state weights, [H x H].
    pub u: Tensor,
    /// Recurrent bias, [1 x H].
    pub b: Tensor,
    /// Output projection, [H x C].
    pub w2: Tensor,
    /// Output bias, [1 x C].
    pub b2: Tensor,
}

impl ModelParams {
    /// Fresh parameters with variance-scaled Gaussian weights and zero
    /// biases, deterministic in the seed.
    pub fn init(seed: u64, num_filters: usize, hidden: usize, vocab: usize) -> Self {
        let classes = vocab + 1;
        let mut rng = Rng::derive(seed, 0x706172616d, 0);
        let mut gauss = |n: usize, scale: f32| -> Vec<f32> {
            (0..n).map(|_| rng.gaussian() as f32 * scale).collect()
        };
        // Log filter-bank energies arrive with magnitude around ten, not
        // unit, so the input projection starts an extra order of magnitude
        // smaller to keep the first tanh out of saturation.
        let sf = 1.0 / ((num_filters as f32).sqrt() * 10.0);
        let sh = 1.0 / (hidden as f32).sqrt();
        ModelParams {
            w1: Tensor::fp32(vec![num_filters, hidden], gauss(num_filters * hidden, sf)),
            b1: Tensor::fp32(vec![1, hidden], vec![0.0; hidden]),
            w: Tensor::fp32(vec![hidden, hidden], gauss(hidden * hidden, sh)),
            // Slightly contractive at initialization so early recurrent
            // states cannot blow up over long utterances.
            u: Tensor::fp32(vec![hidden, hidden], gauss(hidden * hidden, 0.7 * sh)),
            b: Tensor::fp32(vec![1, hidden], vec![0.0; hidden]),
            w2: Tensor::fp32(vec![hidden, classes], gauss(hidden * classes, sh)),
            // The blank starts handicapped. Steady-tone segments give CTC a
            // peaky local optimum (one spread-out emission, blanks
            // elsewhere); biasing early training toward label runs lands it
            // in the collapse-friendly basin instead.
            b2: Tensor::fp32(vec![1, classes], {
                let mut b2 = vec![0.0; classes];
                b2[classes - 1] = -2.0;
                b2
            }),
        }
    }

    pub fn num_filters(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w1.shape()[1]
    }

    /// Output classes including the blank.
    pub fn classes(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn vocab(&self) -> usize {
        self.classes() - 1
    }

    /// Blank id: the last class.
    pub fn blank(&self) -> usize {
        self.vocab()
    }

    fn tensors(&self) -> [&Tensor; 7] {
        [&self.w1, &self.b1, &self.w, &self.u, &self.b, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w,
            &mut self.u,
            &mut self.b,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    fn shapes_consistent(&self) -> bool {
        let all_rank2 = self.tensors().iter().all(|t| t.shape().len() == 2);
        if !all_rank2 {
            return false;
        }
        let (f, h, c) = (self.num_filters(), self.hidden(), self.classes());
        f >= 1
            && h >= 1
            && c >= 2
            && self.b1.shape() == [1, h]
            && self.w.shape() == [h, h]
            && self.u.shape() == [h, h]
            && self.b.shape() == [1, h]
            && self.w2.shape() == [h, c]
            && self.b2.shape() == [1, c]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

/// Tape nodes for one set of weights, either quantized constants (inference,
/// attacks) or FP32 variables (training).
pub struct ParamNodes {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w: NodeId,
    pub u: NodeId,
    pub b: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl ParamNodes {
    /// Weights entered as constants, quantized to the evaluation mode.
    pub fn constants(tape: &mut Tape, params: &ModelParams, mode: PrecisionMode) -> Self {
        let mut quantized = |t: &Tensor| {
            tape.constant(Tensor::quantized(t.shape().to_vec(), t.data().to_vec(), mode))
        };
        ParamNodes {
            w1: quantized(&params.w1),
            b1: quantized(&params.b1),
            w: quantized(&params.w),
            u: quantized(&params.u),
            b: quantized(&params.b),
            w2: quantized(&params.w2),
            b2: quantized(&params.b2),
        }
    }

    /// Weights entered as FP32 variables for training.
    pub fn variables(tape: &mut Tape, params: &ModelParams) -> Self {
        ParamNodes {
            w1: tape.variable(params.w1.clone()),
            b1: tape.variable(params.b1.clone()),
            w: tape.variable(params.w.clone()),
            u: tape.variable(params.u.clone()),
            b: tape.variable(params.b.clone()),
            w2: tape.variable(params.w2.clone()),
            b2: tape.variable(params.b2.clone()),
        }
    }

    fn list(&self) -> [NodeId; 7] {
        [self.w1, self.b1, self.w, self.u, self.b, self.w2, self.b2]
    }
}

/// Per-frame log-probabilities [frames x classes] from a feature node.
/// The network is a tanh input layer, one unidirectional recurrent layer
/// (h_t = tanh(a_t W + h_{t-1} U + b), h_0 = 0), and a linear CTC head
/// under log-softmax. Every op runs under `mode`.
pub fn forward_from_features(
    tape: &mut Tape,
    nodes: &ParamNodes,
    feats: NodeId,
    mode: PrecisionMode,
) -> Result<NodeId> {
    let frames = tape.value(feats).shape()[0];
    let hidden = tape.value(nodes.b1).shape()[1];
    let mut h = tape.constant(Tensor::fp32(vec![1, hidden], vec![0.0; hidden]));
    let mut rows = Vec::with_capacity(frames);
    for t in 0..frames {
        let x = tape.row(feats, t)?;
        let xw = tape.matmul(x, nodes.w1, mode)?;
        let pre = tape.add(xw, nodes.b1, mode)?;
        let a = tape.tanh(pre, mode);
        let aw = tape.matmul(a, nodes.w, mode)?;
        let hu = tape.matmul(h, nodes.u, mode)?;
        let sum = tape.add(aw, hu, mode)?;
        let sum_b = tape.add(sum, nodes.b, mode)?;
        h = tape.tanh(sum_b, mode);
        let hw = tape.matmul(h, nodes.w2, mode)?;
        let logits = tape.add(hw, nodes.b2, mode)?;
        rows.push(logits);
    }
    let stacked = tape.stack_rows(&rows)?;
    tape.log_softmax(stacked, mode)
}

/// Full evaluation graph from a signal node to log-probabilities.
pub fn forward_graph(
    tape: &mut Tape,
    params: &ModelParams,
    signal: NodeId,
    cfg: &FrontEndConfig,
    mode: PrecisionMode,
) -> Result<NodeId> {
    let feats = features_graph(tape, signal, cfg, mode)?;
    let nodes = ParamNodes::constants(tape, params, mode);
    forward_from_features(tape, &nodes, feats, mode)
}

/// Log-probabilities for a signal under the given evaluation mode. A NaN or
/// infinite output (possible under FP16's narrow range) is an error, never
/// something to decode.
pub fn forward(
    params: &ModelParams,
    x: &[f32],
    cfg: &FrontEndConfig,
    mode: PrecisionMode,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let sig = tape.constant(Tensor::fp32(vec![x.len()], x.to_vec()));
    let out = forward_graph(&mut tape, params, sig, cfg, mode)?;
    let t = tape.value(out);
    if t.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow { op: "forward", mode });
    }
    Ok(t.clone())
}

/// Best-path CTC decode: per-frame argmax with ties to the lowest id,
/// consecutive repeats collapsed, blanks dropped. The blank is the last
/// class.
pub fn greedy_decode(log_probs: &Tensor) -> Transcript {
    let shape = log_probs.shape();
    assert!(shape.len() == 2, "log-probability matrix expected");
    let classes = shape[1];
    let blank = classes - 1;
    let mut out = Vec::new();
    let mut prev = blank;
    for row in log_probs.data().chunks_exact(classes) {
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best != blank && best != prev {
            out.push(best as u32);
        }
        prev = best;
    }
    out
}

/// Forward then greedy decode.
pub fn transcribe(
    params: &ModelParams,
    x: &[f32],
    cfg: &FrontEndConfig,
    mode: PrecisionMode,
) -> Result<Transcript> {
    Ok(greedy_decode(&forward(params, x, cfg, mode)?))
}

/// Optimization hyperparameters. Defaults match the training recipe used
/// throughout: Adam(1e-3, 0.9, 0.999, 1e-8), 30 epochs of batch-16 updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Highest acceptable held-out token error rate.
    pub target_error: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 30,
            batch_size: 16,
            seed: 0,
            target_error: 0.05,
        }
    }
}

/// What training did, epoch by epoch.
#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean CTC loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Corpus-level token error rate on the held-out set, FP32 decoding.
    pub held_out_error: f64,
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    step: u64,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut ModelParams, grads: &[Vec<f32>], cfg: &TrainConfig) {
        self.step += 1;
        let b1c = 1.0 - (cfg.beta1 as f64).powi(self.step as i32);
        let b2c = 1.0 - (cfg.beta2 as f64).powi(self.step as i32);
        for (i, t) in params.tensors_mut().into_iter().enumerate() {
            let mut data = t.data().to_vec();
            for (j, d) in data.iter_mut().enumerate() {
                let g = grads[i][j];
                self.m[i][j] = cfg.beta1 * self.m[i][j] + (1.0 - cfg.beta1) * g;
                self.v[i][j] = cfg.beta2 * self.v[i][j] + (1.0 - cfg.beta2) * g * g;
                let mh = (f64::from(self.m[i][j]) / b1c) as f32;
                let vh = (f64::from(self.v[i][j]) / b2c) as f32;
                *d -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
            *t = Tensor::fp32(t.shape().to_vec(), data);
        }
    }
}

/// Corpus-level token error rate of FP32 transcription over `set`.
pub fn token_error_rate(
    params: &ModelParams,
    set: &[Utterance],
    cfg: &FrontEndConfig,
) -> Result<f64> {
    let mut edits = 0usize;
    let mut reference = 0usize;
    for utt in set {
        let hyp = transcribe(params, &utt.audio, cfg, PrecisionMode::Fp32)?;
        edits += metrics::levenshtein(&hyp, &utt.tokens).total();
        reference += utt.tokens.len();
    }
    Ok(edits as f64 / reference.max(1) as f64)
}

/// Minimize mean CTC loss over the training set with Adam, then check the
/// held-out token error rate against the configured budget. Features are
/// precomputed once in FP32; the whole run is deterministic in the seed.
/// A non-finite loss aborts with the epoch index; a missed error budget is
/// an error carrying the achieved rate.
pub fn train(
    mut params: ModelParams,
    train_set: &[Utterance],
    held_out: &[Utterance],
    cfg: &FrontEndConfig,
    tc: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::invalid("train", "empty training set"));
    }
    let feats: Vec<Tensor> = train_set
        .iter()
        .map(|u| features(&u.audio, cfg, PrecisionMode::Fp32))
        .collect::<Result<_>>()?;

    let mut adam = Adam::new(&params);
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    const FP: PrecisionMode = PrecisionMode::Fp32;

    for epoch in 0..tc.epochs {
        let mut rng = Rng::derive(tc.seed, 0x65706f6368, epoch as u64);
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for batch in order.chunks(tc.batch_size.max(1)) {
            let mut tape = Tape::new();
            let nodes = ParamNodes::variables(&mut tape, &params);
            let mut total: Option<NodeId> = None;
            for &idx in batch {
                let f = tape.constant(feats[idx].clone());
                let lp = forward_from_features(&mut tape, &nodes, f, FP)?;
                let target: Vec<usize> =
                    train_set[idx].tokens.iter().map(|&t| t as usize).collect();
                let loss = tape.ctc_loss(lp, &target, params.blank())?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss, FP)?,
                });
            }
            let mean = tape.scale(total.expect("nonempty batch"), 1.0 / batch.len() as f32, FP);
            let loss_value = f64::from(tape.value(mean).item());
            if !loss_value.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss_value;
            batches += 1;
            let grads = tape.backward(mean)?;
            let grad_data: Vec<Vec<f32>> = nodes
                .list()
                .iter()
                .map(|&n| {
                    grads
                        .get(n)
                        .map(|g| g.data().to_vec())
                        .unwrap_or_else(|| vec![0.0; tape.value(n).len()])
                })
                .collect();
            adam.update(&mut params, &grad_data, tc);
        }
        epoch_losses.push(epoch_loss / batches as f64);
        if !params.all_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
    }

    let held_out_error = token_error_rate(&params, held_out, cfg)?;
    if held_out_error > tc.target_error {
        return Err(Error::TrainingMissedTarget {
            rate: held_out_error,
            limit: tc.target_error,
        });
    }
    Ok((
        params,
        TrainReport {
            epoch_losses,
            held_out_error,
        },
    ))
}

const WEIGHTS_MAGIC: &[u8; 4] = b"PGW1";
const WEIGHTS_VERSION: u32 = 1;

/// Serialize weights: magic, version, tensor count, per-tensor shape
/// descriptors, then each tensor's raw FP32 data in descriptor order.
/// Everything little-endian; round-trips bit-exactly.
pub fn save_params(path: &Path, params: &ModelParams) -> Result<()> {
    let tensors = params.tensors();
    let mut bytes = Vec::new();
    bytes.extend_from_slice(WEIGHTS_MAGIC);
    bytes.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        bytes.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            bytes.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for t in tensors {
        for &v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read weights written by [`save_params`], validating the layout.
pub fn load_params(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path)?;
    let malformed = |detail: String| Error::MalformedFile {
        path: path.display().to_string(),
        detail,
    };
    struct Cursor<'a> {
        bytes: &'a [u8],
        pos: usize,
    }
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Option<&'a [u8]> {
            let s = self.bytes.get(self.pos..self.pos + n)?;
            self.pos += n;
            Some(s)
        }
        fn u32(&mut self) -> Option<u32> {
            Some(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
        }
    }
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    let truncated = || malformed("file truncated".into());

    if cur.take(4).ok_or_else(truncated)? != WEIGHTS_MAGIC {
        return Err(malformed("bad magic, not a weights file".into()));
    }
    let version = cur.u32().ok_or_else(truncated)?;
    if version != WEIGHTS_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let count = cur.u32().ok_or_else(truncated)? as usize;
    if count != 7 {
        return Err(malformed(format!("expected 7 tensors, found {count}")));
    }
    let mut shapes = Vec::with_capacity(count);
    for i in 0..count {
        let ndim = cur.u32().ok_or_else(truncated)? as usize;
        if ndim == 0 || ndim > 2 {
            return Err(malformed(format!("tensor {i}: rank {ndim} unsupported")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32().ok_or_else(truncated)? as usize);
        }
        shapes.push(shape);
    }
    let mut tensors = Vec::with_capacity(count);
    for shape in &shapes {
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4).ok_or_else(truncated)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::fp32(shape.clone(), data));
    }
    if cur.pos != bytes.len() {
        return Err(malformed("trailing bytes after tensor data".into()));
    }
    let mut it = tensors.into_iter();
    let params = ModelParams {
        w1: it.next().unwrap(),
        b1: it.next().unwrap(),
        w: it.next().unwrap(),
        u: it.next().unwrap(),
        b: it.next().unwrap(),
        w2: it.next().unwrap(),
        b2: it.next().unwrap(),
    };
    if !params.shapes_consistent() {
        return Err(malformed("tensor shapes are mutually inconsistent".into()));
    }
    Ok(params)
}
