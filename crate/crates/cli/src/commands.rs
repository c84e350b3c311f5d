//! The seven pipeline commands: corpus synthesis, training, benign and
//! adversarial evaluation sweeps, detector fitting, and detection.

use std::collections::HashSet;
use std::path::Path;

use serde_json::json;

use quaver_core::attacks::{self, AdversarialRecord, AttackKind, RecordSidecar};
use quaver_core::data_io::{self, ManifestEntry, Split, ToyLanguageSpec, Utterance};
use quaver_core::detector::{self, GaussianDetector};
use quaver_core::metrics;
use quaver_core::model::{self, ModelParams, Transcript};
use quaver_core::rng::Rng;
use quaver_core::Error as CoreError;
use quaver_core::PrecisionMode;

use crate::config::ExperimentConfig;
use crate::report::{num, Report};
use crate::CliError;

/// Seed-derivation tags keeping the pipeline's independent random
/// streams apart.
const TAG_TARGETS: u64 = 0x7461_7267;
const TAG_RANDOM_BENIGN: u64 = 0x6265_6e69;
const TAG_RANDOM_ROBUST: u64 = 0x726f_6275;

pub fn kind_dir_name(kind: AttackKind) -> &'static str {
    match kind {
        AttackKind::Cw => "cw",
        AttackKind::Psychoacoustic => "psycho",
        AttackKind::AdaptiveCw => "adaptive",
    }
}

// ---------------------------------------------------------------------
// Shared plumbing

fn language(cfg: &ExperimentConfig) -> Result<ToyLanguageSpec, CliError> {
    ToyLanguageSpec::with_vocab(cfg.language.seed, cfg.language.vocab_size)
        .map_err(|e| CliError::usage(e.to_string()))
}

fn require_file(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "{} not found at {}; run `{hint}` first",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("file"),
            path.display()
        )))
    }
}

fn read_manifest(cfg: &ExperimentConfig) -> Result<Vec<ManifestEntry>, CliError> {
    let path = cfg.paths.corpus.join("manifest.jsonl");
    require_file(&path, "quaver gen-data")?;
    Ok(data_io::read_manifest(&path)?)
}

fn load_model(cfg: &ExperimentConfig) -> Result<ModelParams, CliError> {
    require_file(&cfg.paths.weights, "quaver train")?;
    Ok(model::load_params(&cfg.paths.weights)?)
}

fn split_of<'a>(entries: &'a [ManifestEntry], split: Split) -> Vec<&'a ManifestEntry> {
    entries.iter().filter(|e| e.split == split).collect()
}

fn load_audio(cfg: &ExperimentConfig, entry: &ManifestEntry) -> Result<Utterance, CliError> {
    Ok(data_io::load_entry(&cfg.paths.corpus, entry)?)
}

/// The three disjoint clean-split sample sets, in manifest order:
/// attacked, detector calibration, detection evaluation.
fn clean_subsets<'a>(
    cfg: &ExperimentConfig,
    entries: &'a [ManifestEntry],
) -> Result<(Vec<&'a ManifestEntry>, Vec<&'a ManifestEntry>, Vec<&'a ManifestEntry>), CliError> {
    let clean = split_of(entries, Split::TestCleanAnalog);
    let needed = cfg.attack_samples + cfg.calibration_samples + cfg.eval_samples;
    if clean.len() < needed {
        return Err(CliError::usage(format!(
            "clean split has {} utterances but the config partitions it into {needed} \
             (attack {} + calibration {} + eval {}); regenerate the corpus or shrink the sets",
            clean.len(),
            cfg.attack_samples,
            cfg.calibration_samples,
            cfg.eval_samples
        )));
    }
    let a = cfg.attack_samples;
    let b = a + cfg.calibration_samples;
    Ok((
        clean[..a].to_vec(),
        clean[a..b].to_vec(),
        clean[b..needed].to_vec(),
    ))
}

/// Corpus-level token error: total edits over total reference tokens,
/// plus the fraction of utterances with any error.
struct ErrorAccumulator {
    edits: usize,
    reference_tokens: usize,
    sentence_errors: usize,
    utterances: usize,
}

impl ErrorAccumulator {
    fn new() -> Self {
        ErrorAccumulator {
            edits: 0,
            reference_tokens: 0,
            sentence_errors: 0,
            utterances: 0,
        }
    }

    fn add(&mut self, hyp: &[u32], reference: &[u32]) {
        self.edits += metrics::levenshtein(hyp, reference).total();
        self.reference_tokens += reference.len();
        self.sentence_errors += usize::from(hyp != reference);
        self.utterances += 1;
    }

    /// An inference that overflowed instead of producing a transcript
    /// counts as deleting the whole reference.
    fn add_failure(&mut self, reference: &[u32]) {
        self.edits += reference.len();
        self.reference_tokens += reference.len();
        self.sentence_errors += 1;
        self.utterances += 1;
    }

    fn wer(&self) -> f64 {
        self.edits as f64 / self.reference_tokens.max(1) as f64
    }

    fn ser(&self) -> f64 {
        self.sentence_errors as f64 / self.utterances.max(1) as f64
    }
}

// ---------------------------------------------------------------------
// gen-data

pub fn gen_data(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let spec = language(cfg)?;
    let entries = data_io::generate_corpus(&spec, cfg.corpus, cfg.corpus_seed, &cfg.paths.corpus)?;
    for split in Split::ALL {
        let n = entries.iter().filter(|e| e.split == split).count();
        println!("{}: {n} utterances", split.name());
    }
    println!(
        "corpus written to {} ({} utterances total)",
        cfg.paths.corpus.display(),
        entries.len()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// train

pub fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let entries = read_manifest(cfg)?;
    let train_entries = split_of(&entries, Split::Train);
    let held_entries = split_of(&entries, Split::TestCleanAnalog);
    if train_entries.is_empty() {
        return Err(CliError::usage("training split is empty".to_string()));
    }
    let train_set: Vec<Utterance> = train_entries
        .iter()
        .map(|e| load_audio(cfg, e))
        .collect::<Result<_, _>>()?;
    let held_out: Vec<Utterance> = held_entries
        .iter()
        .map(|e| load_audio(cfg, e))
        .collect::<Result<_, _>>()?;

    let params = ModelParams::init(
        cfg.model.init_seed,
        cfg.front_end.num_filters,
        cfg.model.hidden,
        cfg.language.vocab_size,
    );
    println!(
        "training: {} utterances, hidden size {}, {} epochs",
        train_set.len(),
        cfg.model.hidden,
        cfg.train.epochs
    );
    let (trained, report) = model::train(params, &train_set, &held_out, &cfg.front_end, &cfg.train)?;
    if let Some(dir) = cfg.paths.weights.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    model::save_params(&cfg.paths.weights, &trained)?;
    println!(
        "final epoch loss {:.4}, held-out token error {:.2}%, weights at {}",
        report.epoch_losses.last().copied().unwrap_or(f64::NAN),
        100.0 * report.held_out_error,
        cfg.paths.weights.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// eval-benign

/// Transcribe one utterance at a fixed precision and accumulate; the
/// model surfacing a numerical overflow counts as a total miss.
fn accumulate_at(
    acc: &mut ErrorAccumulator,
    params: &ModelParams,
    cfg: &ExperimentConfig,
    audio: &[f32],
    reference: &[u32],
    mode: PrecisionMode,
) -> Result<(), CliError> {
    match model::transcribe(params, audio, &cfg.front_end, mode) {
        Ok(hyp) => acc.add(&hyp, reference),
        Err(CoreError::NumericalOverflow { .. }) => acc.add_failure(reference),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}

pub fn eval_benign(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let params = load_model(cfg)?;
    let entries = read_manifest(cfg)?;
    let hash = cfg.hash();

    let mut report = Report::new(
        json!({
            "command": "eval-benign",
            "config_hash": hash,
            "random_trials": cfg.random_trials,
        }),
        &[
            "split",
            "precision",
            "wer",
            "ser",
            "utterances",
            "config_hash",
            "seed",
        ],
    );

    for (split_idx, split) in [Split::TestCleanAnalog, Split::TestOtherAnalog]
        .into_iter()
        .enumerate()
    {
        let set = split_of(&entries, split);
        if set.is_empty() {
            return Err(CliError::usage(format!(
                "split {} is empty; nothing to evaluate",
                split.name()
            )));
        }
        let utterances: Vec<Utterance> = set
            .iter()
            .map(|e| load_audio(cfg, e))
            .collect::<Result<_, _>>()?;

        for &mode in &cfg.precisions {
            let mut acc = ErrorAccumulator::new();
            for u in &utterances {
                accumulate_at(&mut acc, &params, cfg, &u.audio, &u.tokens, mode)?;
            }
            report.push(vec![
                split.name().to_string(),
                mode.to_string(),
                num(acc.wer()),
                num(acc.ser()),
                acc.utterances.to_string(),
                hash.clone(),
                cfg.seed.to_string(),
            ]);
            println!(
                "{} @ {mode}: WER {:.2}% SER {:.2}%",
                split.name(),
                100.0 * acc.wer(),
                100.0 * acc.ser()
            );
        }

        // Stochastic-precision column: each trial redraws every
        // utterance's inference precision; trials average evenly.
        let mut wer_sum = 0.0;
        let mut ser_sum = 0.0;
        for trial in 0..cfg.random_trials {
            let mut seeds = Rng::derive(cfg.seed, TAG_RANDOM_BENIGN + split_idx as u64, trial as u64);
            let mut acc = ErrorAccumulator::new();
            for u in &utterances {
                let draw = seeds.next_u64();
                match detector::transcribe_random(&params, &cfg.front_end, &u.audio, draw) {
                    Ok((hyp, _)) => acc.add(&hyp, &u.tokens),
                    Err(CoreError::NumericalOverflow { .. }) => acc.add_failure(&u.tokens),
                    Err(e) => return Err(e.into()),
                }
            }
            wer_sum += acc.wer();
            ser_sum += acc.ser();
        }
        let trials = cfg.random_trials as f64;
        report.push(vec![
            split.name().to_string(),
            "random".to_string(),
            num(wer_sum / trials),
            num(ser_sum / trials),
            utterances.len().to_string(),
            hash.clone(),
            cfg.seed.to_string(),
        ]);
        println!(
            "{} @ random ({} trials): WER {:.2}% SER {:.2}%",
            split.name(),
            cfg.random_trials,
            100.0 * wer_sum / trials,
            100.0 * ser_sum / trials
        );
    }

    let out = cfg.paths.reports.join("eval_benign.csv");
    report.write(&out)?;
    println!("report written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// attack

/// Per-sample attack targets: same length as the reference, uniformly
/// random tokens, never equal to the reference or to any benign
/// transcription at the attacked precisions, and never repeated across
/// samples.
fn draw_targets(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    samples: &[(String, Utterance)],
    precisions: &[PrecisionMode],
) -> Result<Vec<Transcript>, CliError> {
    let vocab = cfg.language.vocab_size as u64;
    let mut rng = Rng::derive(cfg.seed, TAG_TARGETS, 0);
    let mut used: HashSet<Transcript> = HashSet::new();
    let mut targets = Vec::with_capacity(samples.len());
    for (_, utt) in samples {
        let mut forbidden: HashSet<Transcript> = HashSet::new();
        forbidden.insert(utt.tokens.clone());
        for &p in precisions {
            match model::transcribe(params, &utt.audio, &cfg.front_end, p) {
                Ok(t) => {
                    forbidden.insert(t);
                }
                // An overflowing benign decode can never equal a target.
                Err(CoreError::NumericalOverflow { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        let target = loop {
            let cand: Transcript = (0..utt.tokens.len())
                .map(|_| rng.below(vocab) as u32)
                .collect();
            if !forbidden.contains(&cand) && !used.contains(&cand) {
                break cand;
            }
        };
        used.insert(target.clone());
        targets.push(target);
    }
    Ok(targets)
}

/// Rebuild a saved plain attack so the imperceptibility refinement can
/// continue from it. Both WAVs sit on the PCM-16 grid, so the
/// perturbation reconstructs exactly.
fn reload_cw_record(
    cfg: &ExperimentConfig,
    id: &str,
) -> Result<(AdversarialRecord, RecordSidecar), CliError> {
    let cw_dir = cfg.paths.records.join(kind_dir_name(AttackKind::Cw));
    let (adversarial, sidecar) = attacks::load_record_audio(&cw_dir, id)?;
    let entries = read_manifest(cfg)?;
    let entry = entries
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| CliError::usage(format!("record {id} has no matching corpus entry")))?;
    let benign = load_audio(cfg, entry)?.audio;
    if benign.len() != adversarial.len() {
        return Err(CliError::usage(format!(
            "record {id} length does not match its corpus entry"
        )));
    }
    let delta: Vec<f32> = adversarial
        .iter()
        .zip(&benign)
        .map(|(a, b)| a - b)
        .collect();
    let record = AdversarialRecord {
        benign,
        delta,
        target: sidecar.target.clone(),
        source_precision: sidecar.source_precision,
        attack_kind: sidecar.attack_kind,
        success_at_source: sidecar.success_at_source,
        iterations_used: sidecar.iterations_used,
        snr_seg_db: sidecar.snr_seg_db,
    };
    Ok((record, sidecar))
}

/// Sorted record ids present in one attack kind's directory.
pub fn list_record_ids(records_root: &Path, kind: AttackKind) -> Result<Vec<String>, CliError> {
    let dir = records_root.join(kind_dir_name(kind));
    if !dir.is_dir() {
        return Err(CliError::usage(format!(
            "no {} records at {}; run `quaver attack --attack {}` first",
            kind_dir_name(kind),
            dir.display(),
            kind_dir_name(kind)
        )));
    }
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(&dir)
        .map_err(|e| CliError::runtime(format!("cannot list {}: {e}", dir.display())))?
    {
        let path = entry
            .map_err(|e| CliError::runtime(format!("cannot list {}: {e}", dir.display())))?
            .path();
        if path.extension().and_then(|x| x.to_str()) == Some("json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    if ids.is_empty() {
        return Err(CliError::usage(format!(
            "no {} records at {}; run `quaver attack --attack {}` first",
            kind_dir_name(kind),
            dir.display(),
            kind_dir_name(kind)
        )));
    }
    ids.sort();
    Ok(ids)
}

pub fn attack(
    cfg: &ExperimentConfig,
    kind: AttackKind,
    source: PrecisionMode,
) -> Result<(), CliError> {
    let params = load_model(cfg)?;
    let entries = read_manifest(cfg)?;
    let (attack_entries, _, _) = clean_subsets(cfg, &entries)?;
    let samples: Vec<(String, Utterance)> = attack_entries
        .iter()
        .map(|e| Ok((e.id.clone(), load_audio(cfg, e)?)))
        .collect::<Result<_, CliError>>()?;

    let out_dir = cfg.paths.records.join(kind_dir_name(kind));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut successes = 0usize;
    match kind {
        AttackKind::Cw | AttackKind::AdaptiveCw => {
            let judged = if kind == AttackKind::Cw {
                vec![source]
            } else {
                PrecisionMode::ALL.to_vec()
            };
            let targets = draw_targets(cfg, &params, &samples, &judged)?;
            for ((id, utt), target) in samples.iter().zip(&targets) {
                let record = if kind == AttackKind::Cw {
                    attacks::cw_attack(
                        &params,
                        &cfg.front_end,
                        &utt.audio,
                        target,
                        source,
                        &cfg.attack,
                    )?
                } else {
                    attacks::adaptive_cw_attack(
                        &params,
                        &cfg.front_end,
                        &utt.audio,
                        target,
                        &cfg.attack,
                    )?
                };
                successes += usize::from(record.success_at_source);
                println!(
                    "{id}: target {:?} success={} iterations={} snr={:.1} dB",
                    target, record.success_at_source, record.iterations_used, record.snr_seg_db
                );
                attacks::save_record(&out_dir, id, &record, &cfg.attack)?;
            }
        }
        AttackKind::Psychoacoustic => {
            // Refinement stage: continues the saved plain attacks, so
            // those must exist and cover the attacked sample set.
            let ids = list_record_ids(&cfg.paths.records, AttackKind::Cw)?;
            let wanted: Vec<&String> = samples.iter().map(|(id, _)| id).collect();
            for id in &wanted {
                if !ids.contains(id) {
                    return Err(CliError::usage(format!(
                        "sample {id} has no plain attack record to refine; \
                         run `quaver attack --attack cw` first"
                    )));
                }
            }
            for id in wanted {
                let (record, _) = reload_cw_record(cfg, id)?;
                let refined =
                    attacks::psychoacoustic_attack(&params, &cfg.front_end, &record, &cfg.attack)?;
                successes += usize::from(refined.success_at_source);
                println!(
                    "{id}: success={} iterations={} snr={:.1} dB",
                    refined.success_at_source, refined.iterations_used, refined.snr_seg_db
                );
                attacks::save_record(&out_dir, id, &refined, &cfg.attack)?;
            }
        }
    }
    println!(
        "{}/{} attacks succeeded at the source precision(s); records at {}",
        successes,
        samples.len(),
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// eval-robust

pub fn eval_robust(cfg: &ExperimentConfig, kind: AttackKind) -> Result<(), CliError> {
    let params = load_model(cfg)?;
    let ids = list_record_ids(&cfg.paths.records, kind)?;
    let dir = cfg.paths.records.join(kind_dir_name(kind));
    let hash = cfg.hash();

    let mut audios = Vec::with_capacity(ids.len());
    let mut snr_sum = 0.0f64;
    for id in &ids {
        let (audio, sidecar) = attacks::load_record_audio(&dir, id)?;
        snr_sum += f64::from(sidecar.snr_seg_db);
        audios.push((audio, sidecar.target));
    }
    let mean_snr = snr_sum / ids.len() as f64;

    let mut report = Report::new(
        json!({
            "command": "eval-robust",
            "config_hash": hash,
            "attack_kind": kind_dir_name(kind),
            "random_trials": cfg.random_trials,
            "score_convention": "edit distance against the attack target; lower means a stronger attack",
        }),
        &[
            "attack_kind",
            "precision",
            "target_wer",
            "target_ser",
            "mean_snr_seg_db",
            "records",
            "config_hash",
            "seed",
        ],
    );

    for &mode in &cfg.precisions {
        let mut acc = ErrorAccumulator::new();
        for (audio, target) in &audios {
            accumulate_at(&mut acc, &params, cfg, audio, target, mode)?;
        }
        report.push(vec![
            kind_dir_name(kind).to_string(),
            mode.to_string(),
            num(acc.wer()),
            num(acc.ser()),
            num(mean_snr),
            ids.len().to_string(),
            hash.clone(),
            cfg.seed.to_string(),
        ]);
        println!(
            "{} @ {mode}: target-WER {:.2}% target-SER {:.2}%",
            kind_dir_name(kind),
            100.0 * acc.wer(),
            100.0 * acc.ser()
        );
    }

    let mut wer_sum = 0.0;
    let mut ser_sum = 0.0;
    for trial in 0..cfg.random_trials {
        let mut seeds = Rng::derive(cfg.seed, TAG_RANDOM_ROBUST, trial as u64);
        let mut acc = ErrorAccumulator::new();
        for (audio, target) in &audios {
            let draw = seeds.next_u64();
            match detector::transcribe_random(&params, &cfg.front_end, audio, draw) {
                Ok((hyp, _)) => acc.add(&hyp, target),
                Err(CoreError::NumericalOverflow { .. }) => acc.add_failure(target),
                Err(e) => return Err(e.into()),
            }
        }
        wer_sum += acc.wer();
        ser_sum += acc.ser();
    }
    let trials = cfg.random_trials as f64;
    report.push(vec![
        kind_dir_name(kind).to_string(),
        "random".to_string(),
        num(wer_sum / trials),
        num(ser_sum / trials),
        num(mean_snr),
        ids.len().to_string(),
        hash.clone(),
        cfg.seed.to_string(),
    ]);
    println!(
        "{} @ random ({} trials): target-WER {:.2}% target-SER {:.2}%",
        kind_dir_name(kind),
        cfg.random_trials,
        100.0 * wer_sum / trials,
        100.0 * ser_sum / trials
    );

    let out = cfg
        .paths
        .reports
        .join(format!("eval_robust_{}.csv", kind_dir_name(kind)));
    report.write(&out)?;
    println!("report written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------------
// fit-detector

pub fn fit_detector(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let params = load_model(cfg)?;
    let entries = read_manifest(cfg)?;
    let (_, calibration, _) = clean_subsets(cfg, &entries)?;

    let mut scores = Vec::with_capacity(calibration.len());
    for entry in &calibration {
        let utt = load_audio(cfg, entry)?;
        let d = detector::diversity_score(
            &params,
            &cfg.front_end,
            &utt.audio,
            &cfg.precisions,
            cfg.detector.score_variant,
        )?;
        if !d.value.is_finite() {
            return Err(CliError::runtime(format!(
                "benign calibration sample {} overflowed during transcription; \
                 it cannot anchor the benign score distribution",
                entry.id
            )));
        }
        scores.push(d.value);
    }

    let mut det = detector::fit(&scores, cfg.precisions.clone(), cfg.detector.score_variant)?;
    det.z_threshold = cfg.detector.z_threshold;
    if let Some(dir) = cfg.paths.detector.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    det.save(&cfg.paths.detector)?;
    println!(
        "fitted on {} benign scores: mu={:.6} sigma={:.6}; detector at {}",
        det.calibration_size,
        det.mu,
        det.sigma,
        cfg.paths.detector.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------
// detect

/// z-scores of the successful (actually adversarial) records of a kind;
/// also reports how many records existed in total.
fn adversarial_z_scores(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    det: &GaussianDetector,
    kind: AttackKind,
) -> Result<Vec<f64>, CliError> {
    let dir = cfg.paths.records.join(kind_dir_name(kind));
    let ids = list_record_ids(&cfg.paths.records, kind)?;
    let mut zs = Vec::new();
    for id in &ids {
        let (audio, sidecar) = attacks::load_record_audio(&dir, id)?;
        if !sidecar.success_at_source {
            continue;
        }
        let d = detector::diversity_score(
            params,
            &cfg.front_end,
            &audio,
            &det.precision_set,
            det.score_variant,
        )?;
        zs.push(det.z_score(d.value));
    }
    if zs.is_empty() {
        return Err(CliError::usage(format!(
            "no successful {} records to evaluate detection on",
            kind_dir_name(kind)
        )));
    }
    Ok(zs)
}

fn flagged_fraction(zs: &[f64], threshold: f64) -> f64 {
    zs.iter().filter(|&&z| z > threshold).count() as f64 / zs.len().max(1) as f64
}

pub fn detect(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let params = load_model(cfg)?;
    require_file(&cfg.paths.detector, "quaver fit-detector")?;
    let det = GaussianDetector::load(&cfg.paths.detector)?;
    if det.precision_set != cfg.precisions || det.score_variant != cfg.detector.score_variant {
        return Err(CliError::usage(format!(
            "detector at {} was fitted for precisions {:?} with {:?} scoring, but the config \
             asks for {:?} with {:?}; refit or fix the config",
            cfg.paths.detector.display(),
            det.precision_set,
            det.score_variant,
            cfg.precisions,
            cfg.detector.score_variant
        )));
    }

    let entries = read_manifest(cfg)?;
    let (_, _, eval_benign_set) = clean_subsets(cfg, &entries)?;
    let mut benign_z = Vec::with_capacity(eval_benign_set.len());
    for entry in &eval_benign_set {
        let utt = load_audio(cfg, entry)?;
        let d = detector::diversity_score(
            &params,
            &cfg.front_end,
            &utt.audio,
            &det.precision_set,
            det.score_variant,
        )?;
        benign_z.push(det.z_score(d.value));
    }
    let benign_fpr = flagged_fraction(&benign_z, det.z_threshold);

    let cw_z = adversarial_z_scores(cfg, &params, &det, AttackKind::Cw)?;
    let psy_z = adversarial_z_scores(cfg, &params, &det, AttackKind::Psychoacoustic)?;
    let both_z: Vec<f64> = cw_z.iter().chain(&psy_z).copied().collect();

    // The adaptive row appears only when those records exist; the other
    // two are the headline comparison and are required.
    let adaptive_z = if cfg
        .paths
        .records
        .join(kind_dir_name(AttackKind::AdaptiveCw))
        .is_dir()
    {
        Some(adversarial_z_scores(cfg, &params, &det, AttackKind::AdaptiveCw)?)
    } else {
        None
    };

    let hash = cfg.hash();
    let mut report = Report::new(
        json!({
            "command": "detect",
            "config_hash": hash,
            "z_threshold": det.z_threshold,
            "calibration_size": det.calibration_size,
        }),
        &[
            "comparison",
            "auroc",
            "detection_rate",
            "benign_fpr",
            "positives",
            "negatives",
            "config_hash",
            "seed",
        ],
    );
    let mut add_row = |name: &str, zs: &[f64]| -> Result<(), CliError> {
        let auroc = metrics::auroc(&benign_z, zs)?;
        report.push(vec![
            name.to_string(),
            num(auroc),
            num(flagged_fraction(zs, det.z_threshold)),
            num(benign_fpr),
            zs.len().to_string(),
            benign_z.len().to_string(),
            hash.clone(),
            cfg.seed.to_string(),
        ]);
        println!(
            "{name}: AUROC {:.4}, detection rate {:.1}%, benign FPR {:.1}%",
            auroc,
            100.0 * flagged_fraction(zs, det.z_threshold),
            100.0 * benign_fpr
        );
        Ok(())
    };
    add_row("cw_vs_benign", &cw_z)?;
    add_row("psycho_vs_benign", &psy_z)?;
    add_row("both_vs_benign", &both_z)?;
    if let Some(zs) = &adaptive_z {
        add_row("adaptive_vs_benign", zs)?;
    }

    let out = cfg.paths.reports.join("detect.csv");
    report.write(&out)?;
    println!("report written to {}", out.display());
    Ok(())
}
