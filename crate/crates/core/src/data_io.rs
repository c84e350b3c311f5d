//! Synthetic corpus generation and PCM16 WAV I/O.
//!
//! The corpus is a toy stand-in for speech: each vocabulary token is a fixed
//! two-sinusoid chord, utterances are token chords separated by short gaps,
//! and everything runs at a fixed 16 kHz. Audio lives on disk as canonical
//! PCM16 mono WAV next to a JSON-lines manifest.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Everything in this crate runs at this rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Token chord length: 0.12 s.
pub const TOKEN_SAMPLES: usize = 1920;
/// Silence between tokens: 0.03 s.
pub const GAP_SAMPLES: usize = 480;

const DEFAULT_VOCAB: usize = 10;
const CHORD_AMPLITUDE: f32 = 0.3;
const FADE_SAMPLES: usize = 48;

/// Frequency layout and synthesis parameters of the toy language.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ToyLanguageSpec {
    /// Two sinusoid frequencies (Hz) per vocabulary token.
    pub signatures: Vec<[f32; 2]>,
    pub token_samples: usize,
    pub gap_samples: usize,
    pub noise_std: f32,
}

impl ToyLanguageSpec {
    /// Default ten-token language with signature frequencies drawn
    /// deterministically from the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self::with_vocab(seed, DEFAULT_VOCAB).expect("default vocab fits the frequency grid")
    }

    /// Language with `vocab_size` tokens. Frequencies come from a 100 Hz grid
    /// spanning 300..=3500 Hz, shuffled and paired, so all pairs are distinct
    /// and any two used frequencies are at least 100 Hz apart.
    pub fn with_vocab(seed: u64, vocab_size: usize) -> Result<Self> {
        let mut grid: Vec<f32> = (0..=32).map(|k| 300.0 + 100.0 * k as f32).collect();
        if vocab_size == 0 || 2 * vocab_size > grid.len() {
            return Err(Error::invalid(
                "toy_language",
                format!("vocab size {vocab_size} outside 1..={}", grid.len() / 2),
            ));
        }
        let mut rng = Rng::derive(seed, 0x746f_6b65, 0);
        rng.shuffle(&mut grid);
        let signatures = (0..vocab_size)
            .map(|i| [grid[2 * i], grid[2 * i + 1]])
            .collect();
        Ok(ToyLanguageSpec {
            signatures,
            token_samples: TOKEN_SAMPLES,
            gap_samples: GAP_SAMPLES,
            noise_std: 0.01,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.signatures.len()
    }

    /// Samples consumed per token including its trailing gap.
    pub fn stride(&self) -> usize {
        self.token_samples + self.gap_samples
    }
}

/// Dataset partition an utterance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestCleanAnalog,
    TestOtherAnalog,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::TestCleanAnalog, Split::TestOtherAnalog];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestCleanAnalog => "test_clean_analog",
            Split::TestOtherAnalog => "test_other_analog",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::invalid("split", format!("unknown split {s:?}")))
    }
}

/// One synthesized recording with its reference token sequence.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub audio: Vec<f32>,
    pub tokens: Vec<u32>,
    pub split: Split,
}

/// Manifest line pointing at one WAV on disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    /// WAV path relative to the manifest's directory.
    pub path: String,
    pub tokens: Vec<u32>,
    pub split: Split,
}

/// Number of utterances to synthesize per split; zero skips the split.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub test_clean: usize,
    pub test_other: usize,
}

impl SplitCounts {
    fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::TestCleanAnalog => self.test_clean,
            Split::TestOtherAnalog => self.test_other,
        }
    }
}

/// Render a token sequence as audio. Each token is a two-sine chord with a
/// short raised-cosine fade at both ends, followed by a silent gap; Gaussian
/// noise at `noise_std` covers the whole utterance. `amplitude_jitter`
/// rescales every token by an independent factor in [0.9, 1.1].
pub fn synthesize(
    spec: &ToyLanguageSpec,
    tokens: &[u32],
    noise_std: f32,
    amplitude_jitter: bool,
    rng: &mut Rng,
) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; tokens.len() * spec.stride()];
    for (slot, &tok) in tokens.iter().enumerate() {
        let sig = spec
            .signatures
            .get(tok as usize)
            .ok_or_else(|| Error::invalid("synthesize", format!("token {tok} outside vocab")))?;
        let amp = if amplitude_jitter {
            CHORD_AMPLITUDE * (1.0 + rng.range(-0.1, 0.1) as f32)
        } else {
            CHORD_AMPLITUDE
        };
        let base = slot * spec.stride();
        for n in 0..spec.token_samples {
            let t = n as f32 / SAMPLE_RATE as f32;
            let mut v = 0.0f32;
            for &f in sig {
                v += amp * (2.0 * std::f32::consts::PI * f * t).sin();
            }
            out[base + n] = v * fade(n, spec.token_samples);
        }
    }
    if noise_std > 0.0 {
        for v in &mut out {
            *v += noise_std * rng.gaussian() as f32;
        }
    }
    for v in &mut out {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok(out)
}

/// Raised-cosine ramp over the first and last `FADE_SAMPLES` of a token,
/// suppressing onset clicks that would smear energy across the spectrum.
fn fade(n: usize, token_len: usize) -> f32 {
    let edge = FADE_SAMPLES.min(token_len / 2);
    let from_end = token_len - 1 - n;
    let d = n.min(from_end);
    if d >= edge {
        return 1.0;
    }
    let x = d as f32 / edge as f32;
    0.5 * (1.0 - (std::f32::consts::PI * x).cos())
}

/// Synthesize `counts` utterances per split under `out_dir`, writing one WAV
/// per utterance plus a `manifest.jsonl`. Token sequences are uniform with
/// lengths 2..=8; the test-other split triples the noise and adds per-token
/// amplitude jitter. Fully deterministic in `seed`.
pub fn generate_corpus(
    spec: &ToyLanguageSpec,
    counts: SplitCounts,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (split_idx, split) in Split::ALL.into_iter().enumerate() {
        let count = counts.get(split);
        if count == 0 {
            continue;
        }
        fs::create_dir_all(out_dir.join(split.name()))?;
        for u in 0..count {
            let mut rng = Rng::derive(seed, split_idx as u64, u as u64);
            let len = 2 + rng.below(7) as usize;
            let tokens: Vec<u32> = (0..len)
                .map(|_| rng.below(spec.vocab_size() as u64) as u32)
                .collect();
            let (noise, jitter) = match split {
                Split::TestOtherAnalog => (3.0 * spec.noise_std, true),
                _ => (spec.noise_std, false),
            };
            let audio = synthesize(spec, &tokens, noise, jitter, &mut rng)?;
            let id = format!("{}-{u:04}", split.name());
            let rel = format!("{}/{id}.wav", split.name());
            write_wav(&out_dir.join(&rel), &audio)?;
            entries.push(ManifestEntry {
                id,
                path: rel,
                tokens,
                split,
            });
        }
    }
    let mut manifest = fs::File::create(out_dir.join("manifest.jsonl"))?;
    for e in &entries {
        serde_json::to_writer(&mut manifest, e)?;
        manifest.write_all(b"\n")?;
    }
    Ok(entries)
}

/// Parse a `manifest.jsonl` written by [`generate_corpus`].
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::MalformedFile {
            path: path.display().to_string(),
            detail: format!("line {}: {e}", lineno + 1),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

/// Load the audio behind a manifest entry, resolving its relative path
/// against the manifest's directory.
pub fn load_entry(manifest_dir: &Path, entry: &ManifestEntry) -> Result<Utterance> {
    let audio = read_wav(&manifest_dir.join(&entry.path))?;
    Ok(Utterance {
        id: entry.id.clone(),
        audio,
        tokens: entry.tokens.clone(),
        split: entry.split,
    })
}

/// Write samples as canonical PCM16 mono 16 kHz WAV. Values are scaled by
/// 32768, rounded to nearest, and clamped to the i16 range.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let data_len = (samples.len() * 2) as u32;
    let mut bytes = Vec::with_capacity(44 + samples.len() * 2);
    bytes.extend_from_slice(b"RIFF");
    bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
    bytes.extend_from_slice(b"WAVE");
    bytes.extend_from_slice(b"fmt ");
    bytes.extend_from_slice(&16u32.to_le_bytes());
    bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
    bytes.extend_from_slice(&1u16.to_le_bytes()); // mono
    bytes.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    bytes.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    bytes.extend_from_slice(&2u16.to_le_bytes()); // block align
    bytes.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    bytes.extend_from_slice(b"data");
    bytes.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        bytes.extend_from_slice(&q.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Read a PCM16 mono 16 kHz WAV back to samples in [-1, 1]. Any other
/// layout is rejected rather than converted.
pub fn read_wav(path: &Path) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let malformed = |detail: &str| Error::MalformedFile {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("not a RIFF/WAVE file"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(malformed("chunk extends past end of file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed("fmt chunk too small"));
                }
                let c = &bytes[body..];
                fmt = Some((
                    u16::from_le_bytes(c[0..2].try_into().unwrap()),
                    u16::from_le_bytes(c[2..4].try_into().unwrap()),
                    u32::from_le_bytes(c[4..8].try_into().unwrap()),
                    u16::from_le_bytes(c[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(&bytes[body..body + size]),
            _ => {} // LIST and friends carry no audio
        }
        // Chunks are word-aligned; odd sizes get a pad byte.
        pos = body + size + (size & 1);
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if format != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "format tag {format}, only PCM (1) is supported"
        )));
    }
    if channels != 1 {
        return Err(Error::UnsupportedAudio(format!(
            "{channels} channels, only mono is supported"
        )));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::UnsupportedAudio(format!(
            "sample rate {rate}, only {SAMPLE_RATE} is supported"
        )));
    }
    if bits != 16 {
        return Err(Error::UnsupportedAudio(format!(
            "{bits} bits per sample, only 16 is supported"
        )));
    }
    if data.len() % 2 != 0 {
        return Err(malformed("data chunk has an odd byte count"));
    }
    Ok(data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect())
}

/// Recursively hash-free byte comparison helper for determinism checks.
#[cfg(test)]
fn file_bytes(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use quaver_testkit::chords;

    #[test]
    fn wav_round_trip_stays_within_one_quantum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..1000)
            .map(|i| ((i as f32 * 0.37).sin() * 0.8).clamp(-1.0, 1.0))
            .collect();
        write_wav(&path, &samples).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn wav_full_scale_endpoints_survive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&path, &[1.0, -1.0, 0.0]).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back[0], 32767.0 / 32768.0);
        assert_eq!(back[1], -1.0);
        assert_eq!(back[2], 0.0);
    }

    fn header(rate: u32, channels: u16, bits: u16, format: u16, data: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * channels as u32 * bits as u32 / 8).to_le_bytes());
        b.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(data);
        b
    }

    #[test]
    fn wrong_rate_channels_or_depth_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            header(8000, 1, 16, 1, &[0, 0]),
            header(16000, 2, 16, 1, &[0, 0, 0, 0]),
            header(16000, 1, 8, 1, &[0]),
            header(16000, 1, 16, 3, &[0, 0]),
        ];
        for (i, bytes) in cases.iter().enumerate() {
            let path = dir.path().join(format!("bad{i}.wav"));
            fs::write(&path, bytes).unwrap();
            match read_wav(&path) {
                Err(Error::UnsupportedAudio(_)) => {}
                other => panic!("case {i}: expected unsupported-audio, got {other:?}"),
            }
        }
    }

    #[test]
    fn truncated_and_non_riff_files_are_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("short.wav");
        fs::write(&p1, b"RIFF").unwrap();
        assert!(matches!(read_wav(&p1), Err(Error::MalformedFile { .. })));
        let p2 = dir.path().join("notwav.wav");
        fs::write(&p2, b"OggS0000000000000000").unwrap();
        assert!(matches!(read_wav(&p2), Err(Error::MalformedFile { .. })));
        // data chunk claiming more bytes than the file holds
        let mut bytes = header(16000, 1, 16, 1, &[0u8; 8]);
        bytes.truncate(bytes.len() - 4);
        let p3 = dir.path().join("trunc.wav");
        fs::write(&p3, bytes).unwrap();
        assert!(matches!(read_wav(&p3), Err(Error::MalformedFile { .. })));
    }

    #[test]
    fn zero_length_data_chunk_reads_as_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        fs::write(&path, header(16000, 1, 16, 1, &[])).unwrap();
        assert_eq!(read_wav(&path).unwrap(), Vec::<f32>::new());
    }

    #[test]
    fn language_signatures_are_distinct_and_in_band() {
        let spec = ToyLanguageSpec::with_seed(7);
        assert_eq!(spec.vocab_size(), 10);
        let mut seen = Vec::new();
        for sig in &spec.signatures {
            for &f in sig {
                assert!((300.0..=3500.0).contains(&f), "{f}");
                assert!(
                    seen.iter().all(|&g: &f32| (g - f).abs() >= 100.0),
                    "{f} too close to an earlier frequency"
                );
                seen.push(f);
            }
        }
        assert!(ToyLanguageSpec::with_vocab(7, 0).is_err());
        assert!(ToyLanguageSpec::with_vocab(7, 17).is_err());
    }

    #[test]
    fn clean_synthesis_is_decodable_by_matched_filter() {
        let spec = ToyLanguageSpec::with_seed(11);
        let mut rng = Rng::new(42);
        for _ in 0..10 {
            let len = 2 + rng.below(7) as usize;
            let tokens: Vec<u32> = (0..len).map(|_| rng.below(10) as u32).collect();
            let audio = synthesize(&spec, &tokens, 0.0, false, &mut rng).unwrap();
            assert_eq!(audio.len(), tokens.len() * spec.stride());
            let decoded = chords::decode(
                &audio,
                SAMPLE_RATE as f32,
                &spec.signatures,
                spec.token_samples,
                spec.gap_samples,
            );
            let want: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
            assert_eq!(decoded, want);
        }
    }

    #[test]
    fn synthesis_rejects_out_of_vocab_tokens() {
        let spec = ToyLanguageSpec::with_seed(11);
        let mut rng = Rng::new(1);
        assert!(synthesize(&spec, &[10], 0.0, false, &mut rng).is_err());
    }

    #[test]
    fn corpus_layout_and_manifest_agree() {
        let spec = ToyLanguageSpec::with_seed(3);
        let dir = tempfile::tempdir().unwrap();
        let counts = SplitCounts {
            train: 4,
            test_clean: 3,
            test_other: 2,
        };
        let entries = generate_corpus(&spec, counts, 99, dir.path()).unwrap();
        assert_eq!(entries.len(), 9);
        let read_back = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(entries, read_back);
        for split in Split::ALL {
            let n = read_back.iter().filter(|e| e.split == split).count();
            let want = counts.get(split);
            assert_eq!(n, want, "{split}");
        }
        for e in &read_back {
            let utt = load_entry(dir.path(), e).unwrap();
            assert_eq!(utt.audio.len(), e.tokens.len() * spec.stride());
            assert!((2..=8).contains(&e.tokens.len()));
            assert!(e.tokens.iter().all(|&t| (t as usize) < spec.vocab_size()));
        }
    }

    #[test]
    fn same_seed_reproduces_the_corpus_byte_for_byte() {
        let spec = ToyLanguageSpec::with_seed(3);
        let counts = SplitCounts {
            train: 2,
            test_clean: 2,
            test_other: 2,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let e1 = generate_corpus(&spec, counts, 7, d1.path()).unwrap();
        let e2 = generate_corpus(&spec, counts, 7, d2.path()).unwrap();
        assert_eq!(e1, e2);
        assert_eq!(
            file_bytes(&d1.path().join("manifest.jsonl")),
            file_bytes(&d2.path().join("manifest.jsonl"))
        );
        for e in &e1 {
            assert_eq!(
                file_bytes(&d1.path().join(&e.path)),
                file_bytes(&d2.path().join(&e.path)),
                "{}",
                e.id
            );
        }
        // A different seed must actually change the audio.
        let d3 = tempfile::tempdir().unwrap();
        let e3 = generate_corpus(&spec, counts, 8, d3.path()).unwrap();
        assert_ne!(
            file_bytes(&d1.path().join(&e1[0].path)),
            file_bytes(&d3.path().join(&e3[0].path))
        );
    }

    #[test]
    fn other_split_is_noisier_than_clean() {
        let spec = ToyLanguageSpec::with_seed(3);
        let dir = tempfile::tempdir().unwrap();
        let counts = SplitCounts {
            train: 0,
            test_clean: 8,
            test_other: 8,
        };
        let entries = generate_corpus(&spec, counts, 5, dir.path()).unwrap();
        let gap_power = |utt: &Utterance| -> f64 {
            // Look only at gap regions, where clean audio is pure noise.
            let mut acc = 0.0;
            let mut n = 0usize;
            for slot in 0..utt.tokens.len() {
                let start = slot * spec.stride() + spec.token_samples;
                for &v in &utt.audio[start..start + spec.gap_samples] {
                    acc += f64::from(v) * f64::from(v);
                    n += 1;
                }
            }
            acc / n as f64
        };
        let mean_power = |split: Split| -> f64 {
            let picked: Vec<f64> = entries
                .iter()
                .filter(|e| e.split == split)
                .map(|e| gap_power(&load_entry(dir.path(), e).unwrap()))
                .collect();
            picked.iter().sum::<f64>() / picked.len() as f64
        };
        let clean = mean_power(Split::TestCleanAnalog);
        let other = mean_power(Split::TestOtherAnalog);
        // Tripled noise std means roughly 9x the power; allow slack for
        // 16-bit quantization and finite samples.
        assert!(other > 4.0 * clean, "clean {clean}, other {other}");
    }
}
