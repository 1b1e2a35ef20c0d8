mod common;

use cascade_vc::nn::{Ctx, Mat, ParamStore};
use cascade_vc::spkemb::{embedding_from_vectors, extract_embedding, extract_speaker_embedding, identify, similarity, stats_pool, train_spkemb, SpeakerEmbedding, SpkembModel, SpkembModelConfig, SpkembTrainConfig};
use cascade_vc::nn::Checkpoint;
use proptest::prelude::*;

fn cfg(epochs: usize) -> SpkembTrainConfig {
    SpkembTrainConfig { epochs, ..SpkembTrainConfig::default() }
}

#[test]
fn pooled_std_of_constant_input_is_zero() {
    let store = ParamStore::<f32>::new();
    let mut ctx = Ctx::eval(&store);
    let x = ctx.g.input(Mat::from_vec(5, 3, [0.5f32, -1.0, 2.0].repeat(5)));
    let p = stats_pool(&mut ctx, x);
    assert_eq!(ctx.g.value(p).data, vec![0.5, -1.0, 2.0, 0.0, 0.0, 0.0]);
}

#[test]
fn single_speaker_manifest_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::small_corpus(dir.path(), 2, 3, 1);
    let one = m.filter(|r| r.speaker_id == "spk00");
    assert!(train_spkemb(&one, None, &cfg(1)).is_err());
}

#[test]
fn embeddings_are_unit_norm_and_duplicates_do_not_move_them() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::small_corpus(dir.path(), 2, 2, 3);
    let model = SpkembModel::new(SpkembModelConfig::default(), 5).unwrap();
    let w = m.load_audio(&m.records[0]).unwrap();
    let one = extract_embedding(std::slice::from_ref(&w), &model).unwrap();
    let two = extract_embedding(&[w.clone(), w], &model).unwrap();
    let norm: f64 = one.vector.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
    for (a, b) in one.vector.iter().zip(&two.vector) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!(extract_embedding(&[], &model).is_err());
}

#[test]
fn similarity_rejects_zero_and_mismatched_vectors() {
    assert!(similarity(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    assert!(similarity(&[1.0], &[1.0, 0.0]).is_err());
    assert!((similarity(&[1.0, 0.0], &[-2.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn similarity_is_symmetric_and_bounded(a in prop::collection::vec(-5.0f32..5.0, 4), b in prop::collection::vec(-5.0f32..5.0, 4)) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let s = similarity(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - similarity(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn averaged_embedding_has_unit_norm(vs in prop::collection::vec(prop::collection::vec(0.1f32..3.0, 6), 1..5)) {
        let e = embedding_from_vectors(&vs, vec![]).unwrap();
        let n: f64 = e.vector.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-6);
    }
}

#[test]
fn trained_embeddings_separate_speakers() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::small_corpus(dir.path(), 6, 24, 11);
    let (train, test) = m.split_per_speaker(18);
    let (ckpt, log) = train_spkemb(&train, Some(&test), &cfg(10)).unwrap();
    assert!(log.last_valid().unwrap() < log.first_valid().unwrap());

    let bytes = ckpt.to_bytes();
    let model = SpkembModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert!(ckpt.bundle.tensors.keys().all(|k| !k.starts_with("spk.head")));

    let speakers = m.speakers();
    let enrolled: Vec<SpeakerEmbedding> = speakers.iter().map(|s| extract_speaker_embedding(&train, s, &model).unwrap()).collect();
    let test_vecs: Vec<(usize, Vec<f32>)> = test
        .records
        .iter()
        .map(|r| (speakers.iter().position(|s| *s == r.speaker_id).unwrap(), model.embed_waveform(&test.load_audio(r).unwrap()).unwrap()))
        .collect();
    let correct = test_vecs.iter().filter(|(y, v)| identify(v, &enrolled).unwrap() == *y).count();
    let acc = correct as f64 / test_vecs.len() as f64;
    assert!(acc >= 0.9, "held-out accuracy {acc}");

    let (mut within, mut between) = (Vec::new(), Vec::new());
    for i in 0..test_vecs.len() {
        for j in i + 1..test_vecs.len() {
            let s = similarity(&test_vecs[i].1, &test_vecs[j].1).unwrap();
            if test_vecs[i].0 == test_vecs[j].0 { within.push(s) } else { between.push(s) }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let gap = mean(&within) - mean(&between);
    assert!(gap >= 0.2, "within-between gap {gap}");
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::small_corpus(dir.path(), 2, 4, 2);
    let a = train_spkemb(&m, None, &cfg(2)).unwrap().0.to_bytes();
    let b = train_spkemb(&m, None, &cfg(2)).unwrap().0.to_bytes();
    assert_eq!(a, b);
}
