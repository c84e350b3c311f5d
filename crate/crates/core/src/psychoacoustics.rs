//! Frequency-masking model of human hearing and the perceptual penalty
//! built on it.
//!
//! A loud narrowband component of a carrier signal raises the audibility
//! floor for nearby frequencies: quieter energy hidden under that floor is
//! inaudible. [`masking_threshold`] estimates this floor per STFT frame
//! with a simplified single-pass model: power spectral density on a dB
//! scale pegged to 96 dB for a full-scale sine, critical-band (Bark)
//! mapping, two-slope spreading of every bin's energy, power-domain
//! combination, and a lower bound at the threshold of hearing in quiet.
//! [`masking_penalty`] then scores a candidate perturbation by how far its
//! own spectrum pokes above that floor — a differentiable quantity a
//! gradient-based search can drive toward inaudibility.

use crate::error::{Error, Result};
use crate::precision::PrecisionMode;
use crate::tensor::{NodeId, Tape, Tensor};

/// Analysis window for the masking model, in samples.
pub const MASKING_FRAME_LENGTH: usize = 512;
/// Analysis hop for the masking model, in samples.
pub const MASKING_HOP: usize = 256;
/// One-sided spectrum size for the masking analysis window.
pub const MASKING_BINS: usize = MASKING_FRAME_LENGTH / 2 + 1;

/// Audio sample rate the Bark and quiet-threshold tables assume.
const SAMPLE_RATE_HZ: f64 = crate::data_io::SAMPLE_RATE as f64;

/// Power floor added before dB conversion so silence stays finite.
const POWER_FLOOR: f64 = 1e-20;

/// Squared peak DFT magnitude of a full-scale sine under the Hann window:
/// (Σw/2)² with Σw = N/2 for the periodic window. Dividing by it pegs the
/// dB scale so that a full-scale sine reads 96 dB.
const FULL_SCALE_POWER: f64 = {
    let half_sum = MASKING_FRAME_LENGTH as f64 / 4.0;
    half_sum * half_sum
};

/// Level a full-scale sine is assigned on the PSD scale, in dB.
const PSD_CEILING_DB: f64 = 96.0;

/// dB offset folded into `10·log10(power)` to express the 96-dB pegging.
fn psd_offset_db() -> f64 {
    PSD_CEILING_DB - 10.0 * FULL_SCALE_POWER.log10()
}

/// Center frequency of a spectrum bin, in Hz.
pub fn bin_frequency(bin: usize) -> f64 {
    bin as f64 * SAMPLE_RATE_HZ / MASKING_FRAME_LENGTH as f64
}

/// Critical-band rate (Bark) for a frequency in Hz.
pub fn bark(f_hz: f64) -> f64 {
    13.0 * (0.00076 * f_hz).atan() + 3.5 * ((f_hz / 7500.0) * (f_hz / 7500.0)).atan()
}

/// Threshold of hearing in quiet at a frequency, in dB on the PSD scale.
///
/// The fit diverges toward 0 Hz, so frequencies below 20 Hz are clamped to
/// 20 Hz; sub-audio bins inherit the (very high) 20 Hz floor.
pub fn threshold_in_quiet_db(f_hz: f64) -> f64 {
    let khz = f_hz.max(20.0) / 1000.0;
    3.64 * khz.powf(-0.8) - 6.5 * (-0.6 * (khz - 3.3) * (khz - 3.3)).exp()
        + 1e-3 * khz.powi(4)
}

/// Attenuation of a masker's influence `dz` Bark away from it, in dB ≤ 0.
///
/// Masking spreads asymmetrically: it decays at 27 dB per Bark toward
/// lower frequencies and 12 dB per Bark toward higher ones.
fn spreading_db(dz: f64) -> f64 {
    if dz < 0.0 {
        27.0 * dz
    } else {
        -12.0 * dz
    }
}

/// Per-frame audibility floor of a carrier signal.
///
/// Stored as dB values on the same scale as the PSD measurement, one row
/// per STFT frame, [`MASKING_BINS`] columns.
#[derive(Debug, Clone)]
pub struct MaskingThreshold {
    threshold_db: Vec<f64>,
    frames: usize,
}

impl MaskingThreshold {
    /// Number of analysis frames covered.
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Number of frequency bins per frame.
    pub fn bins(&self) -> usize {
        MASKING_BINS
    }

    /// Threshold at one frame and bin, in dB.
    pub fn db(&self, frame: usize, bin: usize) -> f64 {
        self.threshold_db[frame * MASKING_BINS + bin]
    }

    /// One frame's thresholds.
    pub fn row(&self, frame: usize) -> &[f64] {
        &self.threshold_db[frame * MASKING_BINS..(frame + 1) * MASKING_BINS]
    }
}

/// Windowed one-sided power spectra of a signal, one row per frame, in
/// f64 throughout.
fn stft_power(x: &[f32]) -> Vec<f64> {
    let n = MASKING_FRAME_LENGTH;
    let frames = 1 + (x.len() - n) / MASKING_HOP;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect();
    let fft = rustfft::FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut power = vec![0.0f64; frames * MASKING_BINS];
    let mut buf = vec![rustfft::num_complex::Complex::new(0.0f64, 0.0); n];
    for t in 0..frames {
        for ((c, &s), w) in buf
            .iter_mut()
            .zip(&x[t * MASKING_HOP..t * MASKING_HOP + n])
            .zip(&window)
        {
            *c = rustfft::num_complex::Complex::new(s as f64 * w, 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power[t * MASKING_BINS..(t + 1) * MASKING_BINS]
            .iter_mut()
            .enumerate()
        {
            *p = buf[k].re * buf[k].re + buf[k].im * buf[k].im;
        }
    }
    power
}

/// Linear-power gain from masker bin `j` to maskee bin `i`: two-slope
/// Bark-domain spreading plus the masker's level offset −(6.025+0.275·z).
fn spreading_gains() -> Vec<f64> {
    let z: Vec<f64> = (0..MASKING_BINS).map(|k| bark(bin_frequency(k))).collect();
    let mut gains = vec![0.0f64; MASKING_BINS * MASKING_BINS];
    for i in 0..MASKING_BINS {
        for j in 0..MASKING_BINS {
            let db = spreading_db(z[i] - z[j]) - (6.025 + 0.275 * z[j]);
            gains[i * MASKING_BINS + j] = 10f64.powf(db / 10.0);
        }
    }
    gains
}

/// Per-frame, per-bin audibility floor of a carrier signal.
///
/// Every bin of every frame acts as a masker: its PSD is spread across the
/// Bark axis with [`spreading_db`] slopes and lowered by 6.025 + 0.275·z
/// dB, contributions combine by power addition, and the result is clamped
/// from below by the threshold of hearing in quiet.
pub fn masking_threshold(x: &[f32]) -> Result<MaskingThreshold> {
    if x.len() < MASKING_FRAME_LENGTH {
        return Err(Error::invalid(
            "masking_threshold",
            format!(
                "signal of {} samples shorter than one {MASKING_FRAME_LENGTH}-sample frame",
                x.len()
            ),
        ));
    }
    let power = stft_power(x);
    let frames = power.len() / MASKING_BINS;
    let offset = psd_offset_db();
    let gains = spreading_gains();
    let quiet: Vec<f64> = (0..MASKING_BINS)
        .map(|k| threshold_in_quiet_db(bin_frequency(k)))
        .collect();
    let mut threshold_db = vec![0.0f64; frames * MASKING_BINS];
    let mut masker = vec![0.0f64; MASKING_BINS];
    for t in 0..frames {
        for (m, &p) in masker.iter_mut().zip(&power[t * MASKING_BINS..]) {
            let psd_db = offset + 10.0 * (p + POWER_FLOOR).log10();
            *m = 10f64.powf(psd_db / 10.0);
        }
        for i in 0..MASKING_BINS {
            let row = &gains[i * MASKING_BINS..(i + 1) * MASKING_BINS];
            let spread: f64 = row.iter().zip(&masker).map(|(g, m)| g * m).sum();
            let spread_db = 10.0 * spread.log10();
            threshold_db[t * MASKING_BINS + i] = spread_db.max(quiet[i]);
        }
    }
    Ok(MaskingThreshold {
        threshold_db,
        frames,
    })
}

/// Differentiable audibility score of a perturbation against a
/// precomputed threshold: mean over (frame, bin) of the squared excess of
/// the perturbation's PSD over the threshold, 0 when fully masked.
///
/// `delta` must be a rank-1 node whose frame count matches `threshold`.
/// The threshold enters as a constant, so gradients flow only through the
/// perturbation's own spectrum.
pub fn masking_penalty_graph(
    tape: &mut Tape,
    delta: NodeId,
    threshold: &MaskingThreshold,
) -> Result<NodeId> {
    const FP: PrecisionMode = PrecisionMode::Fp32;
    let framed = tape.frames(delta, MASKING_FRAME_LENGTH, MASKING_HOP)?;
    let frames = tape.value(framed).shape()[0];
    if frames != threshold.frames() {
        return Err(Error::shape(
            "masking_penalty",
            format!(
                "perturbation yields {frames} frames but the threshold covers {}",
                threshold.frames()
            ),
        ));
    }
    let window = tape.constant(tiled_hann(frames));
    let windowed = tape.mul(framed, window, FP)?;
    let power = tape.power_spectrum(windowed)?;
    let floored = tape.add_scalar(power, POWER_FLOOR as f32, FP);
    let ln_power = tape.ln(floored, FP);
    // psd_db = offset + 10·log10(power) expressed through the natural log.
    let ln_to_db = 10.0 / std::f64::consts::LN_10;
    let psd_db = tape.scale(ln_power, ln_to_db as f32, FP);
    let psd_db = tape.add_scalar(psd_db, psd_offset_db() as f32, FP);
    let negated: Vec<f32> = (0..frames * MASKING_BINS)
        .map(|idx| -(threshold.threshold_db[idx] as f32))
        .collect();
    let neg_threshold = tape.constant(Tensor::fp32(vec![frames, MASKING_BINS], negated));
    let excess = tape.add(psd_db, neg_threshold, FP)?;
    let hinge = tape.relu(excess, FP);
    let squared = tape.mul(hinge, hinge, FP)?;
    Ok(tape.mean(squared, FP))
}

/// Audibility score of a perturbation `delta` riding on carrier `x`;
/// computes the carrier's threshold and defers to
/// [`masking_penalty_graph`].
pub fn masking_penalty(tape: &mut Tape, delta: NodeId, x: &[f32]) -> Result<NodeId> {
    let n = tape.value(delta).len();
    if n != x.len() {
        return Err(Error::shape(
            "masking_penalty",
            format!("perturbation has {n} samples but the carrier has {}", x.len()),
        ));
    }
    let threshold = masking_threshold(x)?;
    masking_penalty_graph(tape, delta, &threshold)
}

/// Hann window rows for the masking analysis, one per frame.
fn tiled_hann(rows: usize) -> Tensor {
    let n = MASKING_FRAME_LENGTH;
    let window: Vec<f32> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f32::consts::PI * i as f32 / n as f32).cos()))
        .collect();
    let mut data = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        data.extend_from_slice(&window);
    }
    Tensor::fp32(vec![rows, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{self, ToyLanguageSpec};
    use crate::rng::Rng;
    use quaver_testkit::gradcheck;

    fn tone(freq: f64, amplitude: f32, len: usize) -> Vec<f32> {
        (0..len)
            .map(|i| {
                amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin() as f32
            })
            .collect()
    }

    fn penalty_value(x: &[f32], delta: &[f32]) -> f64 {
        let mut tape = Tape::new();
        let d = tape.variable(Tensor::fp32(vec![delta.len()], delta.to_vec()));
        let p = masking_penalty(&mut tape, d, x).unwrap();
        tape.value(p).item() as f64
    }

    #[test]
    fn silence_leaves_only_the_threshold_in_quiet() {
        let t = masking_threshold(&vec![0.0f32; 2048]).unwrap();
        assert_eq!(t.frames(), 7);
        for frame in 0..t.frames() {
            for bin in 0..t.bins() {
                assert_eq!(
                    t.db(frame, bin),
                    threshold_in_quiet_db(bin_frequency(bin)),
                    "frame {frame} bin {bin}"
                );
            }
        }
    }

    #[test]
    fn quiet_threshold_matches_the_fit_at_spot_frequencies() {
        // Direct evaluations of the three-term fit, written out longhand.
        let at = |khz: f64| {
            3.64 * khz.powf(-0.8) - 6.5 * (-0.6 * (khz - 3.3) * (khz - 3.3)).exp()
                + 1e-3 * khz * khz * khz * khz
        };
        assert!((threshold_in_quiet_db(1000.0) - at(1.0)).abs() < 1e-12);
        assert!((threshold_in_quiet_db(4000.0) - at(4.0)).abs() < 1e-12);
        assert!((threshold_in_quiet_db(125.0) - at(0.125)).abs() < 1e-12);
        // Below the clamp everything reads as 20 Hz.
        assert_eq!(threshold_in_quiet_db(0.0), threshold_in_quiet_db(20.0));
        assert_eq!(threshold_in_quiet_db(5.0), threshold_in_quiet_db(20.0));
    }

    #[test]
    fn bark_scale_is_monotone_and_pinned() {
        let z1 = bark(1000.0);
        assert!((z1 - 8.510532).abs() < 1e-4, "bark(1 kHz) = {z1}");
        let mut prev = bark(0.0);
        for k in 1..MASKING_BINS {
            let z = bark(bin_frequency(k));
            assert!(z > prev);
            prev = z;
        }
        assert!(prev < 25.0);
    }

    #[test]
    fn full_scale_tone_masks_its_neighborhood() {
        let x = tone(1000.0, 1.0, 4096);
        let t = masking_threshold(&x).unwrap();
        // 1 kHz sits exactly on bin 32 at 31.25 Hz spacing.
        let frame = t.frames() / 2;
        for bin in 31..=33 {
            let quiet = threshold_in_quiet_db(bin_frequency(bin));
            assert!(
                t.db(frame, bin) > quiet + 20.0,
                "bin {bin}: {} vs quiet {quiet}",
                t.db(frame, bin)
            );
        }
    }

    #[test]
    fn threshold_never_drops_below_the_quiet_floor() {
        let mut rng = Rng::new(41);
        let x: Vec<f32> = (0..3000).map(|_| rng.gaussian() as f32 * 0.1).collect();
        let t = masking_threshold(&x).unwrap();
        for frame in 0..t.frames() {
            for bin in 0..t.bins() {
                assert!(t.db(frame, bin) >= threshold_in_quiet_db(bin_frequency(bin)));
            }
        }
    }

    #[test]
    fn delaying_by_one_hop_shifts_the_threshold_by_one_frame() {
        let mut rng = Rng::new(17);
        let n = 512 + 256 * 9;
        let x: Vec<f32> = (0..n).map(|_| rng.gaussian() as f32 * 0.2).collect();
        let mut delayed = vec![0.0f32; n];
        delayed[MASKING_HOP..].copy_from_slice(&x[..n - MASKING_HOP]);
        let tx = masking_threshold(&x).unwrap();
        let td = masking_threshold(&delayed).unwrap();
        assert_eq!(tx.frames(), td.frames());
        for frame in 0..tx.frames() - 1 {
            for bin in 0..tx.bins() {
                let gap = (td.db(frame + 1, bin) - tx.db(frame, bin)).abs();
                assert!(gap < 1e-6, "frame {frame} bin {bin}: gap {gap}");
            }
        }
    }

    #[test]
    fn short_signal_is_rejected() {
        assert!(masking_threshold(&vec![0.0f32; 511]).is_err());
        let mut tape = Tape::new();
        let d = tape.variable(Tensor::fp32(vec![511], vec![0.0; 511]));
        assert!(masking_penalty(&mut tape, d, &vec![0.0f32; 511]).is_err());
    }

    #[test]
    fn carrier_and_perturbation_lengths_must_agree() {
        let mut tape = Tape::new();
        let d = tape.variable(Tensor::fp32(vec![1000], vec![0.0; 1000]));
        let err = masking_penalty(&mut tape, d, &vec![0.0f32; 1024]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn zero_perturbation_costs_nothing() {
        let x = tone(700.0, 0.4, 2048);
        assert_eq!(penalty_value(&x, &vec![0.0; 2048]), 0.0);
    }

    #[test]
    fn perturbation_equal_to_the_carrier_is_audible() {
        let spec = ToyLanguageSpec::with_seed(4);
        let mut rng = Rng::new(9);
        let x = data_io::synthesize(&spec, &[2, 5], 0.01, false, &mut rng).unwrap();
        assert!(penalty_value(&x, &x) > 0.0);
    }

    #[test]
    fn shrinking_a_perturbation_never_raises_the_penalty() {
        let spec = ToyLanguageSpec::with_seed(4);
        let mut rng = Rng::new(10);
        let x = data_io::synthesize(&spec, &[1, 8], 0.01, false, &mut rng).unwrap();
        let delta: Vec<f32> = (0..x.len()).map(|_| rng.gaussian() as f32 * 0.01).collect();
        let mut prev = 0.0;
        for lambda in [0.0f32, 0.25, 0.5, 1.0] {
            let scaled: Vec<f32> = delta.iter().map(|d| d * lambda).collect();
            let p = penalty_value(&x, &scaled);
            assert!(
                p >= prev,
                "penalty fell from {prev} to {p} at scale {lambda}"
            );
            prev = p;
        }
    }

    #[test]
    fn tone_threshold_is_stable_across_releases() {
        // Frozen from the construction: a full-scale 1 kHz tone, middle
        // frame, masker bin and a bin two critical bands up.
        let x = tone(1000.0, 1.0, 4096);
        let t = masking_threshold(&x).unwrap();
        let frame = t.frames() / 2;
        let on_peak = t.db(frame, 32);
        assert!(
            (85.0..90.0).contains(&on_peak),
            "threshold on the masker bin drifted: {on_peak}"
        );
        assert!(t.db(frame, 32) > t.db(frame, 64));
        assert!(t.db(frame, 64) > t.db(frame, 128));
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let spec = ToyLanguageSpec::with_seed(6);
        let mut rng = Rng::new(12);
        let x = data_io::synthesize(&spec, &[3], 0.01, false, &mut rng).unwrap();
        let n = 3200.min(x.len());
        let x = &x[..n];
        let threshold = masking_threshold(x).unwrap();
        let delta: Vec<f32> = (0..n).map(|_| rng.gaussian() as f32 * 5e-3).collect();
        let build = |d: &[f32]| -> f64 {
            let mut tape = Tape::new();
            let node = tape.variable(Tensor::fp32(vec![n], d.to_vec()));
            let p = masking_penalty_graph(&mut tape, node, &threshold).unwrap();
            tape.value(p).item() as f64
        };
        let mut tape = Tape::new();
        let node = tape.variable(Tensor::fp32(vec![n], delta.clone()));
        let p = masking_penalty_graph(&mut tape, node, &threshold).unwrap();
        let grads = tape.backward(p).unwrap();
        let analytic = grads.get(node).unwrap();
        for probe in 0..10 {
            let idx = (probe * 317) % n;
            let numeric = gradcheck::partial(&build, &delta, idx, 1e-3);
            let gap = gradcheck::relative_gap(analytic.data()[idx] as f64, numeric, 1e-3);
            assert!(
                gap < 1e-2,
                "sample {idx}: analytic {} numeric {numeric} gap {gap}",
                analytic.data()[idx]
            );
        }
    }
}
