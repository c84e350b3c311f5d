//! Transcription accuracy and signal-level evaluation metrics.
//!
//! Token error rates are computed from a Levenshtein alignment with a fixed
//! backtrace preference so the substitution/deletion/insertion split is
//! deterministic. Detector quality is summarized by an exact rank-statistic
//! AUROC kept in integer counts until the final division.

use crate::error::{Error, Result};

/// Outcome of aligning a hypothesis against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_length: usize,
}

impl EditCounts {
    /// Total edit distance between the two sequences.
    pub fn total(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// Error rate normalized by reference length; an empty reference
    /// divides by one so inserted tokens still register.
    pub fn error_rate(&self) -> f64 {
        self.total() as f64 / self.reference_length.max(1) as f64
    }
}

/// Minimal-cost alignment of `hyp` against `reference` with unit edit costs.
///
/// When several alignments share the minimal cost, the backtrace prefers
/// substitution over deletion over insertion, so the returned split is a
/// deterministic function of the inputs. The total is tie-independent.
pub fn levenshtein(hyp: &[u32], reference: &[u32]) -> EditCounts {
    let n = hyp.len();
    let m = reference.len();
    let w = m + 1;
    let mut cost = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        cost[j] = j as u32;
    }
    for i in 1..=n {
        cost[i * w] = i as u32;
        for j in 1..=m {
            let diag = cost[(i - 1) * w + j - 1] + u32::from(hyp[i - 1] != reference[j - 1]);
            let del = cost[i * w + j - 1] + 1;
            let ins = cost[(i - 1) * w + j] + 1;
            cost[i * w + j] = diag.min(del).min(ins);
        }
    }

    let (mut i, mut j) = (n, m);
    let mut counts = EditCounts {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        reference_length: m,
    };
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 && hyp[i - 1] == reference[j - 1] && cost[(i - 1) * w + j - 1] == here {
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && cost[(i - 1) * w + j - 1] + 1 == here {
            counts.substitutions += 1;
            i -= 1;
            j -= 1;
        } else if j > 0 && cost[i * w + j - 1] + 1 == here {
            counts.deletions += 1;
            j -= 1;
        } else {
            counts.insertions += 1;
            i -= 1;
        }
    }
    counts
}

/// Word (token) error rate for a single pair: edit distance over reference
/// length. May exceed 1 when the hypothesis is much longer than the reference.
pub fn wer(hyp: &[u32], reference: &[u32]) -> f64 {
    levenshtein(hyp, reference).error_rate()
}

/// Sequence error rate: the fraction of pairs whose hypothesis differs from
/// the reference in any position.
pub fn ser<A: AsRef<[u32]>, B: AsRef<[u32]>>(pairs: &[(A, B)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("ser", "empty pair list"));
    }
    let wrong = pairs
        .iter()
        .filter(|(h, r)| h.as_ref() != r.as_ref())
        .count();
    Ok(wrong as f64 / pairs.len() as f64)
}

/// Segmental signal-to-noise ratio of `delta` against the clean signal `x`,
/// in dB. Non-overlapping frames; each frame's energy ratio is clamped to
/// [-10, +35] dB before averaging, a silent-perturbation frame contributes
/// the +35 dB ceiling, and a trailing partial frame is dropped.
pub fn snr_seg(x: &[f32], delta: &[f32], frame: usize) -> Result<f64> {
    if x.len() != delta.len() {
        return Err(Error::shape(
            "snr_seg",
            format!("signal length {} vs perturbation length {}", x.len(), delta.len()),
        ));
    }
    if frame == 0 || x.len() < frame {
        return Err(Error::invalid(
            "snr_seg",
            format!("need one full frame of {frame}, have {}", x.len()),
        ));
    }
    let mut acc = 0.0f64;
    let mut frames = 0usize;
    for start in (0..=(x.len() - frame)).step_by(frame) {
        let sx: f64 = x[start..start + frame].iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        let sd: f64 = delta[start..start + frame]
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum();
        let db = if sd < 1e-20 {
            35.0
        } else {
            (10.0 * (sx / sd).log10()).clamp(-10.0, 35.0)
        };
        acc += db;
        frames += 1;
    }
    Ok(acc / frames as f64)
}

/// Exact pairwise win/tie counts underlying the AUROC.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AurocCounts {
    /// Pairs where the positive score strictly exceeds the negative.
    pub wins: u64,
    pub ties: u64,
    pub pairs: u64,
}

impl AurocCounts {
    /// (wins + ties/2) / pairs, evaluated as (2w + t) / 2p in one division.
    pub fn value(&self) -> f64 {
        (2 * self.wins + self.ties) as f64 / (2 * self.pairs) as f64
    }
}

/// Pairwise comparison counts between negative (benign) and positive
/// (adversarial) score lists. Sorting the negatives makes each positive a
/// pair of binary searches, so counts stay exact integers.
pub fn auroc_counts(neg: &[f64], pos: &[f64]) -> Result<AurocCounts> {
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::invalid("auroc", "both score lists must be nonempty"));
    }
    let mut sorted: Vec<f64> = neg.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("detector scores are finite"));
    let mut wins = 0u64;
    let mut ties = 0u64;
    for &p in pos {
        let below = sorted.partition_point(|&s| s < p) as u64;
        let not_above = sorted.partition_point(|&s| s <= p) as u64;
        wins += below;
        ties += not_above - below;
    }
    Ok(AurocCounts {
        wins,
        ties,
        pairs: neg.len() as u64 * pos.len() as u64,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counted half. Equals the area under the ROC curve.
pub fn auroc(neg: &[f64], pos: &[f64]) -> Result<f64> {
    Ok(auroc_counts(neg, pos)?.value())
}
