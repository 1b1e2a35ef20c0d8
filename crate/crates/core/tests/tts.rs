mod common;

use std::collections::BTreeMap;

use cascade_vc::dsp::FeatureConfig;
use cascade_vc::nn::{Ctx, Mat, TransformerConfig};
use cascade_vc::spkemb::*;
use cascade_vc::synthcorpus::*;
use cascade_vc::train::features;
use cascade_vc::tts::*;
use cascade_vc::{CorpusManifest, TokenSequence};

fn tiny_config() -> TtsTrainConfig {
    let t = TransformerConfig { layers: 1, heads: 2, d_model: 16, d_ff: 32, dropout: 0.1 };
    let model = TtsModelConfig { encoder: t, decoder: t, prenet_dim: 16, postnet_channels: 8, postnet_layers: 2, ..TtsModelConfig::default() };
    TtsTrainConfig { model, epochs: 1, finetune_epochs: 1, batch_size: 2, ..TtsTrainConfig::default() }
}

fn untrained_spkemb() -> SpkembModel {
    SpkembModel::new(SpkembModelConfig::default(), 3).unwrap()
}

fn tiny_pretrained(dir: &std::path::Path) -> (CorpusManifest, cascade_vc::nn::Checkpoint, SpkembModel) {
    let m = common::small_corpus(dir, 2, 3, 5);
    let spk = untrained_spkemb();
    let (ck, log) = pretrain_tts(&m, None, &spk, &tiny_config()).unwrap();
    assert_eq!(log.epochs.len(), 1);
    (m, ck, spk)
}

#[test]
fn config_validation() {
    let mut cfg = TtsTrainConfig::default();
    cfg.validate().unwrap();
    cfg.model.vocab = vec!["a".into(), "k".into()];
    assert!(cfg.validate().is_err());
    let bad = TtsTrainConfig { guided_attention_weight: -1.0, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = SynthesisConfig { stop_threshold: 1.0, ..Default::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn pretraining_requires_both_languages_and_matching_dims() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::small_corpus(dir.path(), 2, 2, 5);
    let only_a = m.filter(|r| r.language == Language::A);
    assert!(pretrain_tts(&only_a, None, &untrained_spkemb(), &tiny_config()).is_err());
    let wide = SpkembModel::new(SpkembModelConfig { dim: 8, ..Default::default() }, 0).unwrap();
    assert!(pretrain_tts(&m, None, &wide, &tiny_config()).is_err());
}

#[test]
fn finetuning_freezes_the_token_table_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (m, pre, spk) = tiny_pretrained(dir.path());
    let before = TtsModel::from_checkpoint(&pre).unwrap().embedding_table().clone();
    let target = m.for_speakers(&[m.speakers()[0].clone()]);
    let emb = extract_speaker_embedding(&target, &m.speakers()[0], &spk).unwrap();

    let cfg = TtsTrainConfig { finetune_epochs: 3, ..tiny_config() };
    let (frozen, _) = finetune_tts(&pre, &target, &emb, &cfg).unwrap();
    let frozen = TtsModel::from_checkpoint(&frozen).unwrap();
    assert_eq!(frozen.embedding_table().data, before.data);
    assert_ne!(frozen.store.to_bundle("x"), TtsModel::from_checkpoint(&pre).unwrap().store.to_bundle("x"));

    let cfg = TtsTrainConfig { freeze_embedding: false, finetune_epochs: 1, batch_size: 64, ..tiny_config() };
    let (free, log) = finetune_tts(&pre, &target, &emb, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 1);
    let free = TtsModel::from_checkpoint(&free).unwrap();
    assert!(free.embedding_table().data.iter().zip(&before.data).any(|(a, b)| a != b));
}

#[test]
fn finetuning_rejects_multi_speaker_and_foreign_configs() {
    let dir = tempfile::tempdir().unwrap();
    let (m, pre, spk) = tiny_pretrained(dir.path());
    let emb = extract_speaker_embedding(&m, &m.speakers()[0], &spk).unwrap();
    let err = finetune_tts(&pre, &m, &emb, &tiny_config()).unwrap_err();
    assert!(err.to_string().contains("single-speaker"), "{err}");
    let one = m.for_speakers(&[m.speakers()[0].clone()]);
    let mut other = tiny_config();
    other.model.postnet_layers = 3;
    assert!(finetune_tts(&pre, &one, &emb, &other).is_err());
}

#[test]
fn teacher_forced_eval_matches_training_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (m, ck, spk) = tiny_pretrained(dir.path());
    let embs = speaker_embeddings(&m, &spk).unwrap();
    let rows = teacher_forced_eval(&m, &ck, &embs).unwrap();
    assert_eq!(rows.len(), m.len());
    let model = TtsModel::from_checkpoint(&ck).unwrap();
    let cfg = tiny_config();
    for (r, row) in m.records.iter().zip(&rows) {
        assert_eq!(row.utt_id, r.utt_id);
        let ex = TtsExample {
            utt_id: r.utt_id.clone(),
            ids: model.cfg.token_ids(&r.tokens()).unwrap(),
            spk: embs[&r.speaker_id].vector.clone(),
            target: model.cmvn.apply(&features(&m.load_audio(r).unwrap(), &model.cfg.features).unwrap()),
        };
        let mut ctx = Ctx::eval(&model.store);
        let terms = tts_loss(&model, &mut ctx, &ex, &cfg, 0.0, true, None).unwrap();
        assert_eq!(row.mel_l1, ctx.g.scalar(terms.post_l1) as f64);
        assert_eq!(row.stop_bce, ctx.g.scalar(terms.stop_bce) as f64);
        assert!(row.mel_l1.is_finite() && row.mel_l1 >= 0.0 && row.stop_bce >= 0.0);
    }
}

#[test]
fn perfect_predictions_score_zero_l1() {
    let target = Mat::from_vec(3, 2, vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25]);
    let stop = Mat::from_vec(3, 1, vec![-30.0, -30.0, 30.0]);
    let (l1, bce) = tts_metrics(&target, &stop, &target, 8.0).unwrap();
    assert_eq!(l1, 0.0);
    assert!(bce >= 0.0 && bce < 1e-6);
}

#[test]
fn synthesis_is_capped_and_deterministic() {
    let model = TtsModel::new(tiny_config().model, 4).unwrap();
    let spk = vec![0.25f32; 16];
    let scfg = SynthesisConfig { stop_threshold: 0.999, max_frames_per_token: 3, ..Default::default() };
    for text in ["a", "a k e", "m o n i p u"] {
        let toks = TokenSequence::parse(text);
        let s = synthesize(&toks, &spk, &model, &scfg).unwrap();
        assert!(s.mel.frames() <= 3 * toks.len());
        assert_eq!(s.mel.config_digest, FeatureConfig::default().digest());
        assert_eq!(s, synthesize(&toks, &spk, &model, &scfg).unwrap());
    }
    assert!(synthesize(&TokenSequence::parse("a x"), &spk, &model, &scfg).is_err());
    assert!(synthesize(&TokenSequence::parse("a"), &spk[..4], &model, &scfg).is_err());
}

fn accuracy(got: &TokenSequence, want: &TokenSequence) -> usize {
    got.symbols.iter().zip(&want.symbols).filter(|(a, b)| a == b).count()
}

/// Four pretraining speakers (two per language) and a held-out fifth
/// speaker used as the finetuning target.
#[test]
fn trained_model_recovers_tokens_adapts_and_follows_the_speaker() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { speakers: Speakers::Count(5), utterances_per_speaker: 80, tokens_per_utterance: TokenCount::Range { min: 3, max: 6 }, seed: 1, base_duration_ms: 80.0, sample_rate: 16000 };
    let m = generate_corpus(&spec, dir.path()).unwrap();
    let profiles = spec.profiles().unwrap();
    let (train, test) = m.split_per_speaker(70);
    let pre_ids: Vec<String> = profiles[..4].iter().map(|p| p.speaker_id.clone()).collect();
    let target_id = profiles[4].speaker_id.clone();
    let pre_train = train.for_speakers(&pre_ids);

    let (sck, _) = train_spkemb(&pre_train, None, &SpkembTrainConfig::default()).unwrap();
    let spk = SpkembModel::from_checkpoint(&sck).unwrap();
    let cfg = TtsTrainConfig::default();
    let (pre, log) = pretrain_tts(&pre_train, Some(&test.for_speakers(&pre_ids)), &spk, &cfg).unwrap();
    assert!(log.last_valid().unwrap() < 0.5 * log.first_valid().unwrap(), "{:?}", log.epochs);
    let model = TtsModel::from_checkpoint(&pre).unwrap();
    let embs = speaker_embeddings(&pre_train, &spk).unwrap();
    let scfg = SynthesisConfig::default();
    let fc = FeatureConfig::default();

    let (mut ok, mut n) = (0, 0);
    for p in &profiles[..4] {
        let cls = PrototypeClassifier::for_speaker(p, &fc, spec.base_duration_ms).unwrap();
        for r in train.records.iter().filter(|r| r.speaker_id == p.speaker_id).take(10) {
            let toks = r.tokens();
            let s = synthesize(&toks, &embs[&p.speaker_id].vector, &model, &scfg).unwrap();
            ok += accuracy(&cls.classify_segments(&s.mel, toks.len()), &toks);
            n += toks.len();
        }
    }
    let recovery = ok as f64 / n as f64;
    println!("token recovery {ok}/{n} = {recovery:.3}");
    assert!(recovery >= 0.8);

    let (a, b) = (&pre_ids[0], &pre_ids[2]);
    for text in ["a e i o u", "o a u e", "i u a"] {
        let toks = TokenSequence::parse(text);
        let ea = spk.embed_mel(&synthesize(&toks, &embs[a].vector, &model, &scfg).unwrap().mel.values).unwrap();
        let eb = spk.embed_mel(&synthesize(&toks, &embs[b].vector, &model, &scfg).unwrap().mel.values).unwrap();
        assert!(similarity(&ea, &embs[a].vector).unwrap() > similarity(&ea, &embs[b].vector).unwrap(), "{text}: voice {a}");
        assert!(similarity(&eb, &embs[b].vector).unwrap() > similarity(&eb, &embs[a].vector).unwrap(), "{text}: voice {b}");
    }

    let target = train.for_speakers(std::slice::from_ref(&target_id));
    let temb = extract_speaker_embedding(&target, &target_id, &spk).unwrap();
    let (ft, _) = finetune_tts(&pre, &target, &temb, &cfg).unwrap();
    assert_eq!(TtsModel::from_checkpoint(&ft).unwrap().embedding_table(), model.embedding_table());
    let held = test.for_speakers(std::slice::from_ref(&target_id));
    let table = BTreeMap::from([(target_id.clone(), temb)]);
    let mean = |ck| {
        let rows = teacher_forced_eval(&held, ck, &table).unwrap();
        rows.iter().map(|r| r.mel_l1).sum::<f64>() / rows.len() as f64
    };
    let (before, after) = (mean(&pre), mean(&ft));
    println!("target teacher-forced L1: pretrained {before:.4}, finetuned {after:.4}");
    assert!(after < before);
}
