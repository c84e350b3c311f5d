//! Gradient-based targeted attacks on the recognizer.
//!
//! All three attacks search for a small additive perturbation δ such that
//! the recognizer transcribes `x + δ` as an attacker-chosen target. They
//! share one optimizer: Adam on δ against `‖δ‖_q + c·(transcription
//! loss)`, with δ clipped to an L∞ box and `x + δ` kept inside [−1, 1]
//! after every step.
//!
//! * [`cw_attack`] runs the plain norm-plus-loss objective at one
//!   inference precision.
//! * [`psychoacoustic_attack`] continues from a finished plain attack and
//!   adds a frequency-masking penalty so the perturbation hides under the
//!   carrier's audibility floor.
//! * [`adaptive_cw_attack`] averages the transcription loss across all
//!   emulated precisions and only counts success when every precision
//!   decodes the target — the counter-move to a detector that compares
//!   transcripts across precisions.
//!
//! Success is always judged on the perturbation as it would survive a
//! 16-bit PCM file: δ is snapped to the PCM grid of `x + δ` before each
//! decode check, and the best (smallest-norm) grid perturbation seen is
//! what the returned record carries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, FrontEndConfig, ModelParams, ParamNodes, Transcript};
use crate::precision::PrecisionMode;
use crate::psychoacoustics::{self, MaskingThreshold};
use crate::tensor::{Tape, Tensor};

/// Norm used for the ‖δ‖ term of the objective and for ranking candidate
/// perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeltaNorm {
    L2,
    Linf,
}

/// Hyperparameters shared by every attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Optimizer steps to run. The full budget is always spent; success
    /// polling along the way only updates which δ gets returned.
    pub iterations: usize,
    /// Adam step size on δ.
    pub learning_rate: f32,
    /// Weight of the transcription loss against the norm term.
    pub c: f32,
    /// Weight of the masking penalty (psychoacoustic attack only).
    pub c2: f32,
    /// L∞ box: every sample of δ stays within ±this.
    pub delta_bound: f32,
    /// Which ‖δ‖_q the objective carries.
    pub norm: DeltaNorm,
    /// Recorded for provenance; the optimization itself is deterministic.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            iterations: 4000,
            learning_rate: 5e-4,
            c: 1.0,
            c2: 0.05,
            delta_bound: 0.02,
            norm: DeltaNorm::L2,
            seed: 0,
        }
    }
}

impl AttackConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("attack", "iterations must be at least 1"));
        }
        if !(self.delta_bound > 0.0) {
            return Err(Error::invalid("attack", "delta_bound must be positive"));
        }
        if !(self.c > 0.0) {
            return Err(Error::invalid("attack", "loss weight c must be positive"));
        }
        if !(self.c2 >= 0.0) {
            return Err(Error::invalid("attack", "penalty weight c2 must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("attack", "learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Which attack produced a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Cw,
    Psychoacoustic,
    AdaptiveCw,
}

/// The inference precision an attack optimized against: one fixed mode,
/// or the whole emulated set at once. Serializes as the mode name or
/// `"all"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackPrecision {
    Fixed(PrecisionMode),
    All,
}

impl AttackPrecision {
    /// The modes a record's success claim covers.
    pub fn modes(self) -> Vec<PrecisionMode> {
        match self {
            AttackPrecision::Fixed(m) => vec![m],
            AttackPrecision::All => PrecisionMode::ALL.to_vec(),
        }
    }
}

impl std::fmt::Display for AttackPrecision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackPrecision::Fixed(m) => write!(f, "{m}"),
            AttackPrecision::All => write!(f, "all"),
        }
    }
}

impl std::str::FromStr for AttackPrecision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(AttackPrecision::All),
            "fp32" => Ok(AttackPrecision::Fixed(PrecisionMode::Fp32)),
            "fp16" => Ok(AttackPrecision::Fixed(PrecisionMode::Fp16)),
            "bf16" => Ok(AttackPrecision::Fixed(PrecisionMode::Bf16)),
            other => Err(Error::invalid(
                "attack_precision",
                format!("unknown precision {other:?}"),
            )),
        }
    }
}

impl Serialize for AttackPrecision {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AttackPrecision {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A finished attack attempt: the carrier, the perturbation, what it was
/// aiming for, and how it went.
#[derive(Clone, Debug)]
pub struct AdversarialRecord {
    /// Unmodified carrier samples.
    pub benign: Vec<f32>,
    /// Additive perturbation, already snapped to the PCM-16 grid of
    /// `benign + delta`.
    pub delta: Vec<f32>,
    /// Transcript the attack tried to force.
    pub target: Transcript,
    /// Precision(s) the attack optimized and was judged against.
    pub source_precision: AttackPrecision,
    pub attack_kind: AttackKind,
    /// Whether `benign + delta` decodes to `target` at the source
    /// precision(s).
    pub success_at_source: bool,
    /// Iteration at which the returned δ was captured (the full configured
    /// budget when the attack failed).
    pub iterations_used: usize,
    /// Segmental SNR of the carrier against the returned δ, in dB.
    pub snr_seg_db: f32,
}

impl AdversarialRecord {
    /// The adversarial signal itself.
    pub fn adversarial_audio(&self) -> Vec<f32> {
        self.benign
            .iter()
            .zip(&self.delta)
            .map(|(x, d)| (x + d).clamp(-1.0, 1.0))
            .collect()
    }
}

/// JSON sidecar stored next to each adversarial WAV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordSidecar {
    pub id: String,
    pub target: Transcript,
    pub source_precision: AttackPrecision,
    pub attack_kind: AttackKind,
    pub success_at_source: bool,
    pub iterations_used: usize,
    pub snr_seg_db: f32,
    pub config: AttackConfig,
}

/// Write a record as `{id}.wav` (the adversarial audio, PCM-16) plus
/// `{id}.json` under `dir`. The sidecar echoes the attack configuration.
pub fn save_record(
    dir: &Path,
    id: &str,
    record: &AdversarialRecord,
    cfg: &AttackConfig,
) -> Result<RecordSidecar> {
    let sidecar = RecordSidecar {
        id: id.to_string(),
        target: record.target.clone(),
        source_precision: record.source_precision,
        attack_kind: record.attack_kind,
        success_at_source: record.success_at_source,
        iterations_used: record.iterations_used,
        snr_seg_db: record.snr_seg_db,
        config: cfg.clone(),
    };
    data_io::write_wav(&dir.join(format!("{id}.wav")), &record.adversarial_audio())?;
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(dir.join(format!("{id}.json")), json)?;
    Ok(sidecar)
}

/// Read back an adversarial WAV and its sidecar.
pub fn load_record_audio(dir: &Path, id: &str) -> Result<(Vec<f32>, RecordSidecar)> {
    let audio = data_io::read_wav(&dir.join(format!("{id}.wav")))?;
    let json = std::fs::read_to_string(dir.join(format!("{id}.json")))?;
    let sidecar: RecordSidecar = serde_json::from_str(&json)?;
    Ok((audio, sidecar))
}

/// One attack's optimization setup, shared by all three public entry
/// points.
struct Problem<'a> {
    params: &'a ModelParams,
    fe: &'a FrontEndConfig,
    x: &'a [f32],
    target: &'a [u32],
    precisions: Vec<PrecisionMode>,
    c: f32,
    c2: f32,
    threshold: Option<MaskingThreshold>,
    norm: DeltaNorm,
}

/// What the optimizer hands back.
struct Outcome {
    delta: Vec<f32>,
    success: bool,
    iterations_used: usize,
    /// Best (lowest) finite objective seen, sampled at every poll point;
    /// non-increasing by construction. Observability for tests only.
    #[cfg_attr(not(test), allow(dead_code))]
    best_objective: Vec<f64>,
}

enum StepEval {
    Value { objective: f64, grad: Vec<f32> },
    Overflow,
}

/// Objective and its gradient w.r.t. δ at the current iterate. A
/// non-finite objective or gradient reports as `Overflow` instead of
/// failing the attack.
fn evaluate(problem: &Problem<'_>, delta: &[f32]) -> Result<StepEval> {
    const FP: PrecisionMode = PrecisionMode::Fp32;
    let n = delta.len();
    let mut tape = Tape::new();
    let d = tape.variable(Tensor::fp32(vec![n], delta.to_vec()));
    let carrier = tape.constant(Tensor::fp32(vec![n], problem.x.to_vec()));
    let adversarial = tape.add(d, carrier, FP)?;
    let feats = model::features_graph(&mut tape, adversarial, problem.fe, FP)?;
    let target: Vec<usize> = problem.target.iter().map(|&t| t as usize).collect();
    let blank = problem.params.blank();
    let mut loss_sum = None;
    for &p in &problem.precisions {
        let feats_p = tape.quantize_to(feats, p);
        let nodes = ParamNodes::constants(&mut tape, problem.params, p);
        let log_probs = model::forward_from_features(&mut tape, &nodes, feats_p, p)?;
        let loss = tape.ctc_loss(log_probs, &target, blank)?;
        loss_sum = Some(match loss_sum {
            None => loss,
            Some(acc) => tape.add(acc, loss, FP)?,
        });
    }
    let mean_loss = tape.scale(
        loss_sum.expect("at least one precision"),
        1.0 / problem.precisions.len() as f32,
        FP,
    );
    let norm = match problem.norm {
        DeltaNorm::L2 => {
            let sq = tape.mul(d, d, FP)?;
            let total = tape.sum(sq, FP);
            tape.sqrt(total, FP)
        }
        DeltaNorm::Linf => tape.max_abs(d),
    };
    let weighted_loss = tape.scale(mean_loss, problem.c, FP);
    let mut objective = tape.add(norm, weighted_loss, FP)?;
    if problem.c2 > 0.0 {
        let threshold = problem
            .threshold
            .as_ref()
            .expect("threshold present when c2 > 0");
        let penalty = psychoacoustics::masking_penalty_graph(&mut tape, d, threshold)?;
        let weighted_penalty = tape.scale(penalty, problem.c2, FP);
        objective = tape.add(objective, weighted_penalty, FP)?;
    }
    let value = tape.value(objective).item() as f64;
    if !value.is_finite() {
        return Ok(StepEval::Overflow);
    }
    let grads = tape.backward(objective)?;
    let grad = grads
        .get(d)
        .ok_or_else(|| Error::invalid("attack", "objective does not depend on delta"))?
        .data()
        .to_vec();
    if grad.iter().any(|g| !g.is_finite()) {
        return Ok(StepEval::Overflow);
    }
    Ok(StepEval::Value {
        objective: value,
        grad,
    })
}

/// Snap δ so that `x + δ` lands exactly on the 16-bit PCM grid — the
/// perturbation as it survives being written to a WAV file.
fn pcm_grid_delta(x: &[f32], delta: &[f32]) -> Vec<f32> {
    x.iter()
        .zip(delta)
        .map(|(&xi, &di)| {
            let q = ((xi + di) * 32768.0).round().clamp(-32768.0, 32767.0);
            q / 32768.0 - xi
        })
        .collect()
}

fn norm_of(delta: &[f32], norm: DeltaNorm) -> f64 {
    match norm {
        DeltaNorm::L2 => delta.iter().map(|&d| d as f64 * d as f64).sum::<f64>().sqrt(),
        DeltaNorm::Linf => delta.iter().fold(0.0f64, |m, &d| m.max(d.abs() as f64)),
    }
}

/// Whether `x + delta` decodes to the target at every precision in the
/// set. Numerical overflow during a decode counts as failure at that
/// precision.
fn decodes_to_target(problem: &Problem<'_>, delta: &[f32]) -> Result<bool> {
    let adversarial: Vec<f32> = problem
        .x
        .iter()
        .zip(delta)
        .map(|(x, d)| (x + d).clamp(-1.0, 1.0))
        .collect();
    for &p in &problem.precisions {
        match model::transcribe(problem.params, &adversarial, problem.fe, p) {
            Ok(t) => {
                if t != problem.target {
                    return Ok(false);
                }
            }
            Err(Error::NumericalOverflow { .. }) => return Ok(false),
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// The shared optimizer: Adam on δ with per-step box projection, periodic
/// grid-projected success polling, and norm-ranked best tracking.
fn optimize(problem: &Problem<'_>, cfg: &AttackConfig, init: &[f32]) -> Result<Outcome> {
    cfg.validate()?;
    let n = problem.x.len();
    if init.len() != n {
        return Err(Error::shape(
            "attack",
            format!("initial delta has {} samples, carrier {n}", init.len()),
        ));
    }
    // Keep a one-PCM-step margin inside the box so grid snapping cannot
    // push a sample past the configured bound.
    let bound = (cfg.delta_bound - 1.0 / 32768.0).max(cfg.delta_bound * 0.5);
    let clip = |delta: &mut [f32]| {
        for (d, &xi) in delta.iter_mut().zip(problem.x) {
            let lo = (-bound).max(-1.0 - xi);
            let hi = bound.min(1.0 - xi);
            *d = d.clamp(lo, hi);
        }
    };
    let mut delta = init.to_vec();
    clip(&mut delta);
    let mut m = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let mut backoff = 1.0f32;
    let mut adam_step = 0u32;
    let (beta1, beta2, eps) = (0.9f32, 0.999f32, 1e-8f32);
    let mut best: Option<(f64, Vec<f32>, usize)> = None;
    let mut best_objective = Vec::new();
    let mut lowest = f64::INFINITY;
    for it in 1..=cfg.iterations {
        match evaluate(problem, &delta)? {
            StepEval::Overflow => {
                // A non-finite forward pass: skip the update and retreat
                // to smaller steps.
                backoff = (backoff * 0.5).max(1e-6);
            }
            StepEval::Value { objective, grad } => {
                lowest = lowest.min(objective);
                adam_step += 1;
                let lr = cfg.learning_rate * backoff;
                let b1c = 1.0 - beta1.powi(adam_step as i32);
                let b2c = 1.0 - beta2.powi(adam_step as i32);
                for i in 0..n {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mh = m[i] / b1c;
                    let vh = v[i] / b2c;
                    delta[i] -= lr * mh / (vh.sqrt() + eps);
                }
                clip(&mut delta);
            }
        }
        if it % 50 == 0 || it == cfg.iterations {
            let grid = pcm_grid_delta(problem.x, &delta);
            if decodes_to_target(problem, &grid)? {
                let norm = norm_of(&grid, problem.norm);
                if best.as_ref().map_or(true, |(b, _, _)| norm < *b) {
                    best = Some((norm, grid, it));
                }
            }
            best_objective.push(lowest);
        }
    }
    Ok(match best {
        Some((_, grid, it)) => Outcome {
            delta: scale_to_boundary(problem, &grid)?,
            success: true,
            iterations_used: it,
            best_objective,
        },
        None => Outcome {
            delta: pcm_grid_delta(problem.x, &delta),
            success: false,
            iterations_used: cfg.iterations,
            best_objective,
        },
    })
}

/// Number of contiguous trim regions used by the per-block phase of the
/// norm-minimal refinement.
const TRIM_BLOCKS: usize = 8;

/// Norm-minimal refinement of a successful perturbation, in two phases:
/// first binary-search the largest global down-scaling of δ that still
/// decodes the target, then cyclically trim contiguous blocks of the
/// signal the same way. The result sits against the decision boundary
/// across the whole utterance instead of comfortably inside the target's
/// decode region. Every candidate is verified on the PCM-snapped signal
/// at the attack's full precision set, preserving the success guarantee.
fn scale_to_boundary(problem: &Problem<'_>, grid_delta: &[f32]) -> Result<Vec<f32>> {
    let scaled = |s: f32| -> Vec<f32> {
        let d: Vec<f32> = grid_delta.iter().map(|d| d * s).collect();
        pcm_grid_delta(problem.x, &d)
    };
    let mut lo = 0.0f32;
    let mut hi = 1.0f32;
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if decodes_to_target(problem, &scaled(mid))? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut base = scaled(hi);

    let n = base.len();
    let blocks = TRIM_BLOCKS.min(n.max(1));
    for _sweep in 0..2 {
        for b in 0..blocks {
            let (start, end) = (b * n / blocks, (b + 1) * n / blocks);
            let block_scaled = |s: f32| -> Vec<f32> {
                let mut d = base.clone();
                for di in &mut d[start..end] {
                    *di *= s;
                }
                pcm_grid_delta(problem.x, &d)
            };
            let mut lo = 0.0f32;
            let mut hi = 1.0f32;
            for _ in 0..10 {
                let mid = 0.5 * (lo + hi);
                if decodes_to_target(problem, &block_scaled(mid))? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            if hi < 1.0 {
                base = block_scaled(hi);
            }
        }
    }
    Ok(base)
}

/// Common prechecks: the target must be alignable within the carrier's
/// frame budget and must differ from what the model already transcribes.
fn precheck(
    params: &ModelParams,
    fe: &FrontEndConfig,
    x: &[f32],
    target: &[u32],
    precisions: &[PrecisionMode],
) -> Result<()> {
    let frames = model::frame_count(x.len(), fe);
    let repeats = target.windows(2).filter(|w| w[0] == w[1]).count();
    let needed = target.len() + repeats;
    if frames < needed {
        return Err(Error::InfeasibleTarget { needed, frames });
    }
    let vocab = params.vocab();
    if let Some(&bad) = target.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::invalid(
            "attack",
            format!("target token {bad} outside vocabulary of {vocab}"),
        ));
    }
    for &p in precisions {
        match model::transcribe(params, x, fe, p) {
            Ok(current) if current == target => {
                return Err(Error::invalid(
                    "attack",
                    format!("target already transcribed from the benign input at {p}"),
                ));
            }
            // An overflowing benign decode cannot equal the target.
            Ok(_) | Err(Error::NumericalOverflow { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn finish(
    problem: &Problem<'_>,
    outcome: Outcome,
    kind: AttackKind,
    source: AttackPrecision,
) -> Result<AdversarialRecord> {
    let snr = metrics::snr_seg(problem.x, &outcome.delta, 256)? as f32;
    Ok(AdversarialRecord {
        benign: problem.x.to_vec(),
        delta: outcome.delta,
        target: problem.target.to_vec(),
        source_precision: source,
        attack_kind: kind,
        success_at_source: outcome.success,
        iterations_used: outcome.iterations_used,
        snr_seg_db: snr,
    })
}

/// Norm-bounded targeted attack at one inference precision: minimizes
/// `‖δ‖_q + c·ctc_loss(forward(x+δ, p), target)` from δ = 0.
pub fn cw_attack(
    params: &ModelParams,
    fe: &FrontEndConfig,
    x: &[f32],
    target: &[u32],
    p: PrecisionMode,
    cfg: &AttackConfig,
) -> Result<AdversarialRecord> {
    cfg.validate()?;
    precheck(params, fe, x, target, &[p])?;
    let problem = Problem {
        params,
        fe,
        x,
        target,
        precisions: vec![p],
        c: cfg.c,
        c2: 0.0,
        threshold: None,
        norm: cfg.norm,
    };
    let outcome = optimize(&problem, cfg, &vec![0.0; x.len()])?;
    finish(&problem, outcome, AttackKind::Cw, AttackPrecision::Fixed(p))
}

/// Imperceptibility refinement: continues a finished plain attack with
/// the masking penalty added (`‖δ‖_q + c·ctc_loss + c2·penalty`). With
/// `c2 = 0` the objective — and therefore the whole run — is identical to
/// simply continuing the plain attack.
pub fn psychoacoustic_attack(
    params: &ModelParams,
    fe: &FrontEndConfig,
    record: &AdversarialRecord,
    cfg: &AttackConfig,
) -> Result<AdversarialRecord> {
    cfg.validate()?;
    if record.attack_kind != AttackKind::Cw {
        return Err(Error::invalid(
            "psychoacoustic_attack",
            "refinement starts from a plain norm-bounded attack record",
        ));
    }
    let p = match record.source_precision {
        AttackPrecision::Fixed(p) => p,
        AttackPrecision::All => {
            return Err(Error::invalid(
                "psychoacoustic_attack",
                "refinement needs a single-precision record",
            ));
        }
    };
    let threshold = if cfg.c2 > 0.0 {
        Some(psychoacoustics::masking_threshold(&record.benign)?)
    } else {
        None
    };
    let problem = Problem {
        params,
        fe,
        x: &record.benign,
        target: &record.target,
        precisions: vec![p],
        c: cfg.c,
        c2: cfg.c2,
        threshold,
        norm: cfg.norm,
    };
    let outcome = optimize(&problem, cfg, &record.delta)?;
    finish(
        &problem,
        outcome,
        AttackKind::Psychoacoustic,
        AttackPrecision::Fixed(p),
    )
}

/// Precision-averaged attack: minimizes the norm term plus the mean CTC
/// loss over every emulated precision, and only counts success when all
/// of them decode the target.
pub fn adaptive_cw_attack(
    params: &ModelParams,
    fe: &FrontEndConfig,
    x: &[f32],
    target: &[u32],
    cfg: &AttackConfig,
) -> Result<AdversarialRecord> {
    cfg.validate()?;
    let precisions = PrecisionMode::ALL.to_vec();
    precheck(params, fe, x, target, &precisions)?;
    let problem = Problem {
        params,
        fe,
        x,
        target,
        precisions,
        c: cfg.c,
        c2: 0.0,
        threshold: None,
        norm: cfg.norm,
    };
    let outcome = optimize(&problem, cfg, &vec![0.0; x.len()])?;
    finish(&problem, outcome, AttackKind::AdaptiveCw, AttackPrecision::All)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_fixtures::{make_utterance, trained as fixture, TrainedFixture};

    /// A target transcript that differs from what the model currently
    /// reads from `x` at every listed precision.
    fn differing_target(fx: &TrainedFixture, x: &[f32], modes: &[PrecisionMode]) -> Vec<u32> {
        for cand in [vec![4u32, 9], vec![8u32, 1], vec![2u32, 6, 3]] {
            let clear = modes.iter().all(|&p| {
                model::transcribe(&fx.params, x, &fx.fe, p)
                    .map(|t| t != cand)
                    .unwrap_or(true)
            });
            if clear {
                return cand;
            }
        }
        unreachable!("one of the candidates must differ");
    }

    fn quick_cfg(iterations: usize) -> AttackConfig {
        AttackConfig {
            iterations,
            learning_rate: 2e-3,
            ..AttackConfig::default()
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[3, 7], 21);
        let target = vec![4u32, 9];
        for cfg in [
            AttackConfig { iterations: 0, ..AttackConfig::default() },
            AttackConfig { delta_bound: 0.0, ..AttackConfig::default() },
            AttackConfig { c: 0.0, ..AttackConfig::default() },
            AttackConfig { learning_rate: 0.0, ..AttackConfig::default() },
        ] {
            let err = cw_attack(&fx.params, &fx.fe, &utt.audio, &target, PrecisionMode::Fp32, &cfg);
            assert!(matches!(err, Err(Error::InvalidArgument { .. })), "{cfg:?}");
        }
    }

    #[test]
    fn target_equal_to_the_current_transcript_is_rejected() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[3, 7], 22);
        let current = model::transcribe(&fx.params, &utt.audio, &fx.fe, PrecisionMode::Fp32).unwrap();
        let err = cw_attack(
            &fx.params,
            &fx.fe,
            &utt.audio,
            &current,
            PrecisionMode::Fp32,
            &quick_cfg(10),
        );
        assert!(matches!(err, Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn overlong_targets_are_infeasible() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[5, 2], 23);
        // Two chords yield well under 40 frames; 25 tokens of the same
        // class need 49.
        let target = vec![1u32; 25];
        let err = cw_attack(
            &fx.params,
            &fx.fe,
            &utt.audio,
            &target,
            PrecisionMode::Fp32,
            &quick_cfg(10),
        );
        match err {
            Err(Error::InfeasibleTarget { needed, frames }) => {
                assert_eq!(needed, 49);
                assert!(frames < needed);
            }
            other => panic!("expected infeasible target, got {other:?}"),
        }
    }

    #[test]
    fn out_of_vocabulary_targets_are_rejected() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[5, 2], 29);
        let err = cw_attack(
            &fx.params,
            &fx.fe,
            &utt.audio,
            &[3, 10],
            PrecisionMode::Fp32,
            &quick_cfg(10),
        );
        assert!(matches!(err, Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn attack_is_deterministic() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[1, 6], 24);
        let target = differing_target(fx, &utt.audio, &[PrecisionMode::Fp32]);
        let cfg = quick_cfg(60);
        let a = cw_attack(&fx.params, &fx.fe, &utt.audio, &target, PrecisionMode::Fp32, &cfg)
            .unwrap();
        let b = cw_attack(&fx.params, &fx.fe, &utt.audio, &target, PrecisionMode::Fp32, &cfg)
            .unwrap();
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.success_at_source, b.success_at_source);
        assert_eq!(a.iterations_used, b.iterations_used);
    }

    #[test]
    fn box_constraints_hold_even_on_failed_attacks() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[0, 9, 4], 25);
        let target = differing_target(fx, &utt.audio, &[PrecisionMode::Fp32]);
        let cfg = quick_cfg(50);
        let rec = cw_attack(&fx.params, &fx.fe, &utt.audio, &target, PrecisionMode::Fp32, &cfg)
            .unwrap();
        assert_eq!(rec.delta.len(), rec.benign.len());
        for (&d, (&x, &xd)) in rec
            .delta
            .iter()
            .zip(rec.benign.iter().zip(&rec.adversarial_audio()))
        {
            assert!(d.abs() <= cfg.delta_bound, "delta {d} outside the box");
            assert!((-1.0..=1.0).contains(&xd));
            // The adversarial signal sits on the 16-bit PCM grid.
            let steps = (x + d) * 32768.0;
            assert!((steps - steps.round()).abs() < 1e-2, "off-grid sample {steps}");
        }
    }

    #[test]
    fn best_tracked_objective_never_increases() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[8, 3], 26);
        let target = differing_target(fx, &utt.audio, &[PrecisionMode::Fp32]);
        let problem = Problem {
            params: &fx.params,
            fe: &fx.fe,
            x: &utt.audio,
            target: &target,
            precisions: vec![PrecisionMode::Fp32],
            c: 1.0,
            c2: 0.0,
            threshold: None,
            norm: DeltaNorm::L2,
        };
        let outcome = optimize(&problem, &quick_cfg(300), &vec![0.0; utt.audio.len()]).unwrap();
        for pair in outcome.best_objective.windows(2) {
            assert!(pair[1] <= pair[0], "best objective rose: {pair:?}");
        }
    }

    #[test]
    fn zero_weight_refinement_continues_the_plain_attack_bit_for_bit() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[2, 7], 27);
        let target = differing_target(fx, &utt.audio, &[PrecisionMode::Fp32]);
        let first = quick_cfg(100);
        let rec = cw_attack(&fx.params, &fx.fe, &utt.audio, &target, PrecisionMode::Fp32, &first)
            .unwrap();
        let second = AttackConfig { c2: 0.0, ..quick_cfg(100) };
        let refined = psychoacoustic_attack(&fx.params, &fx.fe, &rec, &second).unwrap();
        let problem = Problem {
            params: &fx.params,
            fe: &fx.fe,
            x: &utt.audio,
            target: &target,
            precisions: vec![PrecisionMode::Fp32],
            c: second.c,
            c2: 0.0,
            threshold: None,
            norm: second.norm,
        };
        let direct = optimize(&problem, &second, &rec.delta).unwrap();
        assert_eq!(refined.delta, direct.delta);
        assert_eq!(refined.attack_kind, AttackKind::Psychoacoustic);
    }

    #[test]
    fn refinement_rejects_non_plain_records() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[2, 7], 30);
        let target = differing_target(fx, &utt.audio, &[PrecisionMode::Fp32]);
        let rec = cw_attack(
            &fx.params,
            &fx.fe,
            &utt.audio,
            &target,
            PrecisionMode::Fp32,
            &quick_cfg(50),
        )
        .unwrap();
        let refined = psychoacoustic_attack(&fx.params, &fx.fe, &rec, &quick_cfg(50)).unwrap();
        let err = psychoacoustic_attack(&fx.params, &fx.fe, &refined, &quick_cfg(50));
        assert!(matches!(err, Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn single_precision_set_matches_the_fixed_attack() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[6, 1], 28);
        let target = differing_target(fx, &utt.audio, &[PrecisionMode::Fp32]);
        let cfg = quick_cfg(100);
        let public = cw_attack(&fx.params, &fx.fe, &utt.audio, &target, PrecisionMode::Fp32, &cfg)
            .unwrap();
        let problem = Problem {
            params: &fx.params,
            fe: &fx.fe,
            x: &utt.audio,
            target: &target,
            precisions: vec![PrecisionMode::Fp32],
            c: cfg.c,
            c2: 0.0,
            threshold: None,
            norm: cfg.norm,
        };
        let direct = optimize(&problem, &cfg, &vec![0.0; utt.audio.len()]).unwrap();
        assert_eq!(public.delta, direct.delta);
    }

    #[test]
    fn targeted_attack_succeeds_on_the_trained_model() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[3, 7], 31);
        let target = differing_target(fx, &utt.audio, &[PrecisionMode::Fp32]);
        let cfg = quick_cfg(1500);
        let rec = cw_attack(&fx.params, &fx.fe, &utt.audio, &target, PrecisionMode::Fp32, &cfg)
            .unwrap();
        assert!(rec.success_at_source, "attack failed to reach {target:?}");
        let decoded = model::transcribe(
            &fx.params,
            &rec.adversarial_audio(),
            &fx.fe,
            PrecisionMode::Fp32,
        )
        .unwrap();
        assert_eq!(decoded, target);
        assert!(rec.iterations_used <= cfg.iterations);
        assert!(rec.snr_seg_db > 0.0, "snr {}", rec.snr_seg_db);
    }

    #[test]
    fn sidecar_round_trips_with_the_wav() {
        let fx = fixture();
        let utt = make_utterance(&fx.spec, &[9, 0], 32);
        let target = differing_target(fx, &utt.audio, &[PrecisionMode::Fp32]);
        let cfg = quick_cfg(50);
        let rec = cw_attack(&fx.params, &fx.fe, &utt.audio, &target, PrecisionMode::Fp32, &cfg)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let saved = save_record(dir.path(), "probe", &rec, &cfg).unwrap();
        let (audio, sidecar) = load_record_audio(dir.path(), "probe").unwrap();
        assert_eq!(saved, sidecar);
        assert_eq!(sidecar.config, cfg);
        assert_eq!(sidecar.target, target);
        assert_eq!(sidecar.source_precision, AttackPrecision::Fixed(PrecisionMode::Fp32));
        let direct = rec.adversarial_audio();
        assert_eq!(audio.len(), direct.len());
        for (a, b) in audio.iter().zip(&direct) {
            assert!((a - b).abs() < 1.0 / 32768.0 + 1e-6);
        }
    }

    #[test]
    fn attack_precision_serializes_as_plain_names() {
        for (v, s) in [
            (AttackPrecision::Fixed(PrecisionMode::Fp32), "\"fp32\""),
            (AttackPrecision::Fixed(PrecisionMode::Bf16), "\"bf16\""),
            (AttackPrecision::All, "\"all\""),
        ] {
            assert_eq!(serde_json::to_string(&v).unwrap(), s);
            let back: AttackPrecision = serde_json::from_str(s).unwrap();
            assert_eq!(back, v);
        }
        assert!(serde_json::from_str::<AttackPrecision>("\"fp64\"").is_err());
    }
}
