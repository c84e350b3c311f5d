//! Expensive fixtures shared by in-crate tests: one small trained model
//! and corpus helpers.

use std::sync::OnceLock;

use crate::data_io::{self, Split, ToyLanguageSpec, Utterance};
use crate::model::{train, FrontEndConfig, ModelParams, TrainConfig};
use crate::rng::Rng;

pub(crate) struct TrainedFixture {
    pub spec: ToyLanguageSpec,
    pub params: ModelParams,
    pub fe: FrontEndConfig,
}

/// One deterministic utterance with the given tokens.
pub(crate) fn make_utterance(spec: &ToyLanguageSpec, tokens: &[u32], seed: u64) -> Utterance {
    let mut rng = Rng::new(seed);
    let audio = data_io::synthesize(spec, tokens, spec.noise_std, false, &mut rng).unwrap();
    Utterance {
        id: format!("fx-{seed:04}"),
        audio,
        tokens: tokens.to_vec(),
        split: Split::Train,
    }
}

/// Deterministic corpus of random-length utterances.
pub(crate) fn random_corpus(spec: &ToyLanguageSpec, n: usize, seed: u64) -> Vec<Utterance> {
    (0..n)
        .map(|u| {
            let mut rng = Rng::derive(seed, 7, u as u64);
            let len = 2 + rng.below(7) as usize;
            let tokens: Vec<u32> = (0..len).map(|_| rng.below(10) as u32).collect();
            let audio =
                data_io::synthesize(spec, &tokens, spec.noise_std, false, &mut rng).unwrap();
            Utterance {
                id: format!("train-{u:04}"),
                audio,
                tokens,
                split: Split::Train,
            }
        })
        .collect()
}

/// A small model trained once per test binary: ~10% held-out token error,
/// cheap to attack. Shared so every test module pays the training cost at
/// most once.
pub(crate) fn trained() -> &'static TrainedFixture {
    static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let spec = ToyLanguageSpec::with_seed(11);
        let train_set = random_corpus(&spec, 200, 11);
        let held = random_corpus(&spec, 40, 12);
        let params = ModelParams::init(1, 40, 32, spec.vocab_size());
        let tc = TrainConfig {
            target_error: 1.0,
            ..TrainConfig::default()
        };
        let fe = FrontEndConfig::default();
        let (params, report) = train(params, &train_set, &held, &fe, &tc).unwrap();
        assert!(
            report.held_out_error < 0.2,
            "fixture model too weak: {}",
            report.held_out_error
        );
        TrainedFixture { spec, params, fe }
    })
}
