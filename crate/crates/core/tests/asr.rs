mod common;

use cascade_vc::asr::{
    ctc_prefix_scorer, greedy_attention, recognize, recognize_features, train_asr, train_ngram_lm, AsrModel, AsrModelConfig, AsrTrainConfig, DecodeConfig, BLANK,
};
use cascade_vc::nn::{ctc_log_prob, Checkpoint, Mat, ModuleKind, TransformerConfig};
use cascade_vc::train::manifest_features;
use cascade_vc::Waveform;
use common::{brute_edit_distance, small_corpus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn tiny_model_config() -> AsrModelConfig {
    let t = TransformerConfig { layers: 1, heads: 2, d_model: 16, d_ff: 32, dropout: 0.0 };
    AsrModelConfig { encoder: t, decoder: t, ..AsrModelConfig::default() }
}

fn random_feats(seed: u64, frames: usize) -> Mat<f32> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Mat::from_vec(frames, 80, (0..frames * 80).map(|_| rng.random_range(-10.0f32..0.0)).collect())
}

fn random_log_probs(rng: &mut impl Rng, t: usize, c: usize) -> Mat<f64> {
    let mut m = Mat::zeros(t, c);
    for r in 0..t {
        let row: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let lse = row.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        for (j, v) in row.iter().enumerate() {
            *m.at_mut(r, j) = v - lse;
        }
    }
    m
}

#[test]
fn ctc_prefix_full_score_matches_forward_algorithm() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let t = rng.random_range(1..=6);
        let c = rng.random_range(2..=4);
        let lp = random_log_probs(&mut rng, t, c);
        let u = rng.random_range(0..=3);
        let labels: Vec<usize> = (0..u).map(|_| rng.random_range(1..c)).collect();
        let scorer = ctc_prefix_scorer(lp.clone(), BLANK);
        let mut st = scorer.initial();
        for &l in &labels {
            st = scorer.extend(&st, l);
        }
        let full = scorer.full(&st);
        match ctc_log_prob(&lp, &labels, BLANK) {
            Ok(expected) => assert!((full - expected).abs() < 1e-8 * expected.abs().max(1.0), "{full} vs {expected}"),
            Err(_) => assert_eq!(full, f64::NEG_INFINITY),
        }
    }
}

#[test]
fn ctc_prefix_probability_is_sum_over_extensions() {
    // P(prefix h) = P(h complete) + Σ_c P(prefix h·c).
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let lp = random_log_probs(&mut rng, 5, 3);
        let scorer = ctc_prefix_scorer(lp, BLANK);
        let h = scorer.extend(&scorer.initial(), 1);
        let total = (1..3).map(|c| scorer.extend(&h, c).prefix.exp()).sum::<f64>() + scorer.full(&h).exp();
        assert!((total - h.prefix.exp()).abs() < 1e-10);
    }
}

#[test]
fn beam_one_without_fusion_is_greedy_attention() {
    let model = AsrModel::new(tiny_model_config(), 3).unwrap();
    for seed in 0..5 {
        let f = random_feats(seed, 40);
        let g = greedy_attention(&f, &model, 1.0).unwrap();
        let b = recognize_features(&f, &model, &DecodeConfig::greedy(), None).unwrap();
        assert_eq!(g.tokens, b.tokens);
        assert!((g.score - b.score).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn wider_beam_never_scores_below_greedy(seed in 0u64..10_000, frames in 4usize..40, beam in 2usize..6, w in 0.0f64..1.0) {
        let model = AsrModel::new(tiny_model_config(), seed % 7).unwrap();
        let f = random_feats(seed, frames);
        let base = DecodeConfig { ctc_decode_weight: w, ..DecodeConfig::default() };
        let greedy = recognize_features(&f, &model, &DecodeConfig { beam_size: 1, ..base }, None).unwrap();
        let wide = recognize_features(&f, &model, &DecodeConfig { beam_size: beam, ..base }, None).unwrap();
        prop_assert!(wide.score >= greedy.score - 1e-12);
    }
}

#[test]
fn empty_input_gives_empty_hypothesis() {
    let model = AsrModel::new(tiny_model_config(), 0).unwrap();
    let r = recognize(&Waveform::empty(16000), &model, &DecodeConfig::default(), None).unwrap();
    assert!(r.tokens.is_empty());
    assert_eq!(r.score, 0.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let model = AsrModel::new(tiny_model_config(), 0).unwrap();
    let f = random_feats(0, 10);
    assert!(recognize_features(&f, &model, &DecodeConfig { beam_size: 0, ..DecodeConfig::default() }, None).is_err());
    assert!(recognize_features(&f, &model, &DecodeConfig { ctc_decode_weight: 1.5, ..DecodeConfig::default() }, None).is_err());
    let cfg = AsrTrainConfig { ctc_weight: 1.2, ..AsrTrainConfig::default() };
    assert!(cfg.validate().is_err());
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_corpus(dir.path(), 2, 6, 4);
    let cfg = AsrTrainConfig { model: tiny_model_config(), epochs: 2, batch_size: 4, seed: 9, ..AsrTrainConfig::default() };
    let (a, log_a) = train_asr(&m, None, &cfg).unwrap();
    let (b, log_b) = train_asr(&m, None, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(log_a, log_b);

    let path = dir.path().join("asr.ckpt");
    a.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.module_kind, ModuleKind::Asr);
    let model = AsrModel::from_checkpoint(&back).unwrap();
    let again = model.to_checkpoint(back.train_config.clone(), back.rng_seed);
    assert_eq!(again.to_bytes(), a.to_bytes());

    let mut wrong = back.clone();
    wrong.module_kind = ModuleKind::Tts;
    assert!(AsrModel::from_checkpoint(&wrong).is_err());
}

#[test]
fn vocabulary_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = small_corpus(dir.path(), 1, 2, 4);
    m.records[0].token_string = "a q".into();
    let cfg = AsrTrainConfig { model: tiny_model_config(), epochs: 1, ..AsrTrainConfig::default() };
    let err = train_asr(&m, None, &cfg).err().unwrap();
    assert!(err.to_string().contains("q"), "{err}");
}

#[test]
fn toy_model_recovers_training_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let m = small_corpus(dir.path(), 4, 40, 21);
    let (train, valid) = m.split_per_speaker(30);
    let cfg = AsrTrainConfig { epochs: 30, batch_size: 4, seed: 2, ..AsrTrainConfig::default() };
    let (ckpt, log) = train_asr(&train, Some(&valid), &cfg).unwrap();
    assert!(log.last_valid().unwrap() < log.first_valid().unwrap(), "{log:?}");
    let model = AsrModel::from_checkpoint(&ckpt).unwrap();
    let feats = manifest_features(&train, &cfg.model.features).unwrap();
    let lm = train_ngram_lm(&train, 2).unwrap();
    let mut exact = 0;
    let mut fused_errors = 0;
    for (r, f) in train.records.iter().zip(&feats) {
        let hyp = recognize_features(f, &model, &DecodeConfig::default(), None).unwrap();
        exact += usize::from(hyp.tokens == r.tokens());
        let fused = recognize_features(f, &model, &DecodeConfig { lm_weight: 0.3, ..DecodeConfig::default() }, Some(&lm)).unwrap();
        fused_errors += brute_edit_distance(&fused.tokens.symbols, &r.tokens().symbols);
    }
    let rate = exact as f64 / train.len() as f64;
    assert!(rate >= 0.95, "exact recovery {rate}");
    assert!(fused_errors < train.len(), "LM fusion broke decoding: {fused_errors} errors");
}
