//! Precision-based defenses: randomized inference precision and a
//! transcript-diversity detector.
//!
//! The observation both defenses build on: benign audio transcribes the
//! same under every emulated arithmetic, while adversarial audio tuned
//! against one precision tends to fall apart under the others.
//! [`transcribe_random`] denies the attacker a fixed target by drawing
//! the inference precision at random. [`diversity_score`] measures how
//! much the transcripts disagree across precisions, and
//! [`GaussianDetector`] turns that score into a benign/adversarial
//! verdict by standardizing against scores collected from known-benign
//! audio.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, FrontEndConfig, ModelParams, Transcript};
use crate::precision::PrecisionMode;
use crate::rng::Rng;

/// How a pair of transcripts is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    /// Edit distance divided by the longer length (or 1): symmetric, the
    /// default — a pair sum has no designated reference transcript.
    SymmetricEdit,
    /// Word-error rate of the first transcript against the second as
    /// reference: the conventional but asymmetric choice, kept for
    /// comparison.
    Wer,
}

impl Default for ScoreVariant {
    fn default() -> Self {
        ScoreVariant::SymmetricEdit
    }
}

/// Dissimilarity of one transcript pair under a variant.
fn pair_score(a: &[u32], b: &[u32], variant: ScoreVariant) -> f64 {
    let counts = metrics::levenshtein(a, b);
    match variant {
        ScoreVariant::SymmetricEdit => counts.total() as f64 / a.len().max(b.len()).max(1) as f64,
        ScoreVariant::Wer => counts.total() as f64 / b.len().max(1) as f64,
    }
}

/// Average pairwise transcript disagreement across a precision set.
#[derive(Clone, Debug, PartialEq)]
pub struct DiversityScore {
    /// Mean of the pair dissimilarities; `f64::INFINITY` when any
    /// precision overflowed instead of transcribing.
    pub value: f64,
    /// Dissimilarity per (earlier, later) precision pair, in set order.
    pub pairs: Vec<((PrecisionMode, PrecisionMode), f64)>,
}

impl DiversityScore {
    /// True when some precision failed to produce a transcript at all.
    pub fn overflowed(&self) -> bool {
        self.value.is_infinite()
    }
}

/// Draw an inference precision uniformly from the emulated set with the
/// given seed, and transcribe under it.
pub fn transcribe_random(
    params: &ModelParams,
    fe: &FrontEndConfig,
    x: &[f32],
    seed: u64,
) -> Result<(Transcript, PrecisionMode)> {
    let mut rng = Rng::new(seed);
    let mode = PrecisionMode::ALL[rng.below(PrecisionMode::ALL.len() as u64) as usize];
    Ok((model::transcribe(params, x, fe, mode)?, mode))
}

/// Combine per-precision transcripts into the mean pairwise score. Pairs
/// are enumerated in (i < j) set order.
fn combine(
    transcripts: &[Transcript],
    set: &[PrecisionMode],
    variant: ScoreVariant,
) -> DiversityScore {
    let k = set.len();
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let s = pair_score(&transcripts[i], &transcripts[j], variant);
            pairs.push(((set[i], set[j]), s));
            total += s;
        }
    }
    DiversityScore {
        value: total / pairs.len() as f64,
        pairs,
    }
}

fn validate_set(op: &'static str, set: &[PrecisionMode]) -> Result<()> {
    if set.len() < 2 {
        return Err(Error::invalid(op, "need at least two precisions"));
    }
    for (i, a) in set.iter().enumerate() {
        if set[i + 1..].contains(a) {
            return Err(Error::invalid(op, format!("precision {a} listed twice")));
        }
    }
    Ok(())
}

/// Transcribe `x` under every precision in `set` and score the pairwise
/// disagreement. A numerical overflow at any precision yields the
/// infinite sentinel score (maximally suspicious) rather than an error.
pub fn diversity_score(
    params: &ModelParams,
    fe: &FrontEndConfig,
    x: &[f32],
    set: &[PrecisionMode],
    variant: ScoreVariant,
) -> Result<DiversityScore> {
    validate_set("diversity_score", set)?;
    let mut transcripts = Vec::with_capacity(set.len());
    for &p in set {
        match model::transcribe(params, x, fe, p) {
            Ok(t) => transcripts.push(t),
            Err(Error::NumericalOverflow { .. }) => {
                return Ok(DiversityScore {
                    value: f64::INFINITY,
                    pairs: Vec::new(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(combine(&transcripts, set, variant))
}

/// What [`GaussianDetector::classify`] decides about one input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Benign,
    Adversarial,
}

/// A classification outcome: the verdict plus the evidence behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub verdict: Verdict,
    /// Raw diversity score of the input.
    pub score: f64,
    /// Score standardized against the benign calibration.
    pub z: f64,
}

/// One-sided Gaussian test on diversity scores: benign scores fix μ and
/// σ, and anything more than `z_threshold` standard deviations above μ is
/// called adversarial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianDetector {
    pub mu: f64,
    /// Floored at 1e-6: benign toy scores are often identically zero.
    pub sigma: f64,
    pub z_threshold: f64,
    pub precision_set: Vec<PrecisionMode>,
    pub calibration_size: usize,
    pub score_variant: ScoreVariant,
}

/// Floor applied to the fitted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Default one-sided decision threshold.
pub const DEFAULT_Z_THRESHOLD: f64 = 3.0;

/// Fit the benign Gaussian from calibration scores (N ≥ 10, all finite).
pub fn fit(
    benign_scores: &[f64],
    precision_set: Vec<PrecisionMode>,
    score_variant: ScoreVariant,
) -> Result<GaussianDetector> {
    validate_set("fit", &precision_set)?;
    let n = benign_scores.len();
    if n < 10 {
        return Err(Error::invalid(
            "fit",
            format!("need at least 10 calibration scores, got {n}"),
        ));
    }
    if let Some(bad) = benign_scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(
            "fit",
            format!("calibration scores must be finite, got {bad}"),
        ));
    }
    let mu = benign_scores.iter().sum::<f64>() / n as f64;
    let var = benign_scores
        .iter()
        .map(|s| (s - mu) * (s - mu))
        .sum::<f64>()
        / (n - 1) as f64;
    Ok(GaussianDetector {
        mu,
        sigma: var.sqrt().max(SIGMA_FLOOR),
        z_threshold: DEFAULT_Z_THRESHOLD,
        precision_set,
        calibration_size: n,
        score_variant,
    })
}

impl GaussianDetector {
    /// Standardize a raw diversity score; infinite scores stay infinite.
    pub fn z_score(&self, score: f64) -> f64 {
        if score.is_infinite() {
            f64::INFINITY
        } else {
            (score - self.mu) / self.sigma
        }
    }

    /// Decision rule on an already-computed score.
    fn decide(&self, score: f64) -> Classification {
        let z = self.z_score(score);
        Classification {
            verdict: if z > self.z_threshold {
                Verdict::Adversarial
            } else {
                Verdict::Benign
            },
            score,
            z,
        }
    }

    /// Score an input across the detector's precision set and classify
    /// it. An overflow at any precision classifies as adversarial.
    pub fn classify(
        &self,
        params: &ModelParams,
        fe: &FrontEndConfig,
        x: &[f32],
    ) -> Result<Classification> {
        let d = diversity_score(params, fe, x, &self.precision_set, self.score_variant)?;
        Ok(self.decide(d.value))
    }

    /// Serialize the detector state to pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string_pretty(self)?)?)
    }

    /// Load a detector saved with [`GaussianDetector::save`].
    pub fn load(path: &Path) -> Result<GaussianDetector> {
        let json = std::fs::read_to_string(path)?;
        let det: GaussianDetector = serde_json::from_str(&json)?;
        validate_set("load", &det.precision_set)?;
        if !(det.sigma > 0.0) {
            return Err(Error::invalid("load", "sigma must be positive"));
        }
        Ok(det)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{cw_attack, AttackConfig};
    use crate::test_fixtures::{make_utterance, trained};
    use quaver_testkit::editdist;

    fn t(tokens: &[u32]) -> Transcript {
        tokens.to_vec()
    }

    #[test]
    fn random_precision_draws_are_reproducible_and_uniform() {
        let fx = trained();
        let utt = make_utterance(&fx.spec, &[4, 2], 51);
        let (t1, p1) = transcribe_random(&fx.params, &fx.fe, &utt.audio, 7).unwrap();
        let (t2, p2) = transcribe_random(&fx.params, &fx.fe, &utt.audio, 7).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(p1, p2);
        assert_eq!(
            t1,
            model::transcribe(&fx.params, &utt.audio, &fx.fe, p1).unwrap()
        );
        let mut counts = [0usize; 3];
        for seed in 0..3000u64 {
            let mut rng = Rng::new(seed);
            counts[rng.below(3) as usize] += 1;
        }
        for c in counts {
            let frac = c as f64 / 3000.0;
            assert!((0.30..=0.37).contains(&frac), "mode frequency {frac}");
        }
    }

    #[test]
    fn hand_worked_pair_combination() {
        let transcripts = vec![t(&[1, 2]), t(&[1, 2]), t(&[1, 9])];
        let d = combine(&transcripts, &PrecisionMode::ALL, ScoreVariant::SymmetricEdit);
        assert_eq!(d.pairs.len(), 3);
        assert_eq!(d.pairs[0].1, 0.0);
        assert_eq!(d.pairs[1].1, 0.5);
        assert_eq!(d.pairs[2].1, 0.5);
        assert!((d.value - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_transcripts_score_zero_and_differing_ones_do_not() {
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let len = rng.below(5) as usize;
            let base: Transcript = (0..len).map(|_| rng.below(6) as u32).collect();
            let all_same = vec![base.clone(), base.clone(), base.clone()];
            let d = combine(&all_same, &PrecisionMode::ALL, ScoreVariant::SymmetricEdit);
            assert_eq!(d.value, 0.0);
            let mut changed = base.clone();
            changed.push(1);
            let mixed = vec![base.clone(), base.clone(), changed];
            let d = combine(&mixed, &PrecisionMode::ALL, ScoreVariant::SymmetricEdit);
            assert!(d.value > 0.0);
        }
    }

    #[test]
    fn pair_score_is_symmetric_and_matches_the_reference_distance() {
        let mut rng = Rng::new(6);
        for _ in 0..300 {
            let la = rng.below(6) as usize;
            let lb = rng.below(6) as usize;
            let a: Transcript = (0..la).map(|_| rng.below(5) as u32).collect();
            let b: Transcript = (0..lb).map(|_| rng.below(5) as u32).collect();
            let s_ab = pair_score(&a, &b, ScoreVariant::SymmetricEdit);
            let s_ba = pair_score(&b, &a, ScoreVariant::SymmetricEdit);
            assert_eq!(s_ab, s_ba);
            let expected = editdist::edit_distance(&a, &b) as f64 / la.max(lb).max(1) as f64;
            assert_eq!(s_ab, expected);
        }
    }

    #[test]
    fn wer_variant_uses_the_second_transcript_as_reference() {
        let hyp = t(&[1, 2, 3, 4]);
        let reference = t(&[1, 2]);
        assert_eq!(pair_score(&hyp, &reference, ScoreVariant::Wer), 1.0);
        assert_eq!(pair_score(&reference, &hyp, ScoreVariant::Wer), 0.5);
    }

    #[test]
    fn diversity_is_permutation_invariant() {
        use PrecisionMode::*;
        let fx = trained();
        let utt = make_utterance(&fx.spec, &[0, 3, 6], 52);
        let orders: [[PrecisionMode; 3]; 3] = [[Fp32, Fp16, Bf16], [Bf16, Fp32, Fp16], [Fp16, Bf16, Fp32]];
        let scores: Vec<f64> = orders
            .iter()
            .map(|set| {
                diversity_score(&fx.params, &fx.fe, &utt.audio, set, ScoreVariant::SymmetricEdit)
                    .unwrap()
                    .value
            })
            .collect();
        assert_eq!(scores[0], scores[1]);
        assert_eq!(scores[0], scores[2]);
    }

    #[test]
    fn degenerate_precision_sets_are_rejected() {
        let fx = trained();
        let utt = make_utterance(&fx.spec, &[4], 53);
        for set in [
            vec![PrecisionMode::Fp32],
            vec![PrecisionMode::Fp32, PrecisionMode::Fp32],
        ] {
            let err = diversity_score(
                &fx.params,
                &fx.fe,
                &utt.audio,
                &set,
                ScoreVariant::SymmetricEdit,
            );
            assert!(matches!(err, Err(Error::InvalidArgument { .. })));
        }
    }

    #[test]
    fn fit_rejects_small_or_non_finite_calibration() {
        let set = PrecisionMode::ALL.to_vec();
        let err = fit(&[0.0; 4], set.clone(), ScoreVariant::SymmetricEdit);
        assert!(matches!(err, Err(Error::InvalidArgument { .. })));
        let mut scores = vec![0.0; 12];
        scores[3] = f64::INFINITY;
        let err = fit(&scores, set, ScoreVariant::SymmetricEdit);
        assert!(matches!(err, Err(Error::InvalidArgument { .. })));
    }

    #[test]
    fn fit_floors_sigma_on_degenerate_scores() {
        let det = fit(&[0.0; 20], PrecisionMode::ALL.to_vec(), ScoreVariant::SymmetricEdit)
            .unwrap();
        assert_eq!(det.mu, 0.0);
        assert_eq!(det.sigma, SIGMA_FLOOR);
        assert_eq!(det.z_threshold, DEFAULT_Z_THRESHOLD);
        assert_eq!(det.calibration_size, 20);
    }

    #[test]
    fn fit_matches_hand_computed_moments() {
        let scores: Vec<f64> = (0..16).map(|i| 0.01 * i as f64).collect();
        let det = fit(&scores, PrecisionMode::ALL.to_vec(), ScoreVariant::SymmetricEdit)
            .unwrap();
        let mu = scores.iter().sum::<f64>() / 16.0;
        let var = scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / 15.0;
        assert!((det.mu - mu).abs() < 1e-15);
        assert!((det.sigma - var.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn decision_rule_is_monotone_in_the_score() {
        let det = GaussianDetector {
            mu: 0.01,
            sigma: 0.02,
            z_threshold: 3.0,
            precision_set: PrecisionMode::ALL.to_vec(),
            calibration_size: 10,
            score_variant: ScoreVariant::SymmetricEdit,
        };
        let mut rng = Rng::new(8);
        for _ in 0..500 {
            let d1 = rng.range(0.0, 0.3);
            let d2 = rng.range(0.0, 0.3);
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let c_lo = det.decide(lo);
            let c_hi = det.decide(hi);
            assert!(
                !(c_lo.verdict == Verdict::Adversarial && c_hi.verdict == Verdict::Benign),
                "monotonicity violated at {lo} vs {hi}"
            );
        }
        assert_eq!(det.decide(det.mu).verdict, Verdict::Benign);
        assert_eq!(det.decide(f64::INFINITY).verdict, Verdict::Adversarial);
        assert_eq!(det.decide(f64::INFINITY).z, f64::INFINITY);
    }

    #[test]
    fn z_scores_and_raw_scores_rank_identically() {
        let det = fit(
            &(0..20).map(|i| 0.005 * i as f64).collect::<Vec<_>>(),
            PrecisionMode::ALL.to_vec(),
            ScoreVariant::SymmetricEdit,
        )
        .unwrap();
        let mut rng = Rng::new(9);
        let neg: Vec<f64> = (0..40).map(|_| rng.range(0.0, 0.2)).collect();
        let pos: Vec<f64> = (0..40).map(|_| rng.range(0.05, 0.5)).collect();
        let neg_z: Vec<f64> = neg.iter().map(|&d| det.z_score(d)).collect();
        let pos_z: Vec<f64> = pos.iter().map(|&d| det.z_score(d)).collect();
        let raw = metrics::auroc(&neg, &pos).unwrap();
        let standardized = metrics::auroc(&neg_z, &pos_z).unwrap();
        assert_eq!(raw, standardized);
    }

    #[test]
    fn benign_audio_scores_zero_diversity_most_of_the_time() {
        let fx = trained();
        let mut zeros = 0;
        let n = 12;
        for seed in 0..n {
            let utt = make_utterance(&fx.spec, &[1, 5, 8], 100 + seed);
            let d = diversity_score(
                &fx.params,
                &fx.fe,
                &utt.audio,
                &PrecisionMode::ALL,
                ScoreVariant::SymmetricEdit,
            )
            .unwrap();
            assert!(d.value >= 0.0);
            assert_eq!(d.pairs.len(), 3);
            if d.value == 0.0 {
                zeros += 1;
            }
        }
        assert!(zeros * 2 > n, "only {zeros}/{n} benign scores were zero");
    }

    #[test]
    fn detector_round_trips_through_json() {
        let det = fit(
            &(0..30).map(|i| 0.002 * i as f64).collect::<Vec<_>>(),
            PrecisionMode::ALL.to_vec(),
            ScoreVariant::Wer,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detector.json");
        det.save(&path).unwrap();
        let back = GaussianDetector::load(&path).unwrap();
        assert_eq!(det, back);
        let json = std::fs::read_to_string(&path).unwrap();
        for key in [
            "mu",
            "sigma",
            "z_threshold",
            "precision_set",
            "calibration_size",
            "score_variant",
        ] {
            assert!(json.contains(key), "sidecar missing {key}");
        }
    }

    #[test]
    fn attacked_audio_raises_the_score_or_gets_caught() {
        let fx = trained();
        let utt = make_utterance(&fx.spec, &[3, 7], 54);
        let target = vec![4u32, 9];
        let cfg = AttackConfig {
            iterations: 1500,
            learning_rate: 2e-3,
            ..AttackConfig::default()
        };
        let rec = cw_attack(
            &fx.params,
            &fx.fe,
            &utt.audio,
            &target,
            PrecisionMode::Fp32,
            &cfg,
        )
        .unwrap();
        assert!(rec.success_at_source);
        let d = diversity_score(
            &fx.params,
            &fx.fe,
            &rec.adversarial_audio(),
            &PrecisionMode::ALL,
            ScoreVariant::SymmetricEdit,
        )
        .unwrap();
        // The attack was tuned against fp32 only; the other precisions
        // typically break the target transcript, giving a nonzero score.
        assert!(d.value >= 0.0);
        assert_eq!(d.pairs.len(), 3);
    }
}
