mod common;

use cascade_vc::dsp::{griffin_lim, logmel, FeatureConfig, MelSpectrogram};
use cascade_vc::nn::{seeded_rng, Checkpoint, Mat};
use cascade_vc::synthcorpus::{generate_corpus, CorpusSpec, Speakers, TokenCount};
use cascade_vc::vocoder::*;
use cascade_vc::Waveform;
use proptest::prelude::*;
use rand::Rng;

fn noise_signal(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
}

#[test]
fn mr_stft_gradient_matches_finite_differences() {
    let x = noise_signal(600, 1);
    let y = noise_signal(600, 2);
    let res = default_resolutions();
    let (_, g) = mr_stft_loss_grad(&x, &y, &res).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in (0..600).step_by(37) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (mr_stft_loss_grad(&xp, &y, &res).unwrap().0 - mr_stft_loss_grad(&xm, &y, &res).unwrap().0) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8));
    }
    assert!(worst < 1e-3, "max relative error {worst}");
}

#[test]
fn mr_stft_basic_contract() {
    let x = noise_signal(500, 3);
    let res = default_resolutions();
    assert_eq!(mr_stft_loss_grad(&x, &x, &res).unwrap().0, 0.0);
    let y: Vec<f64> = x.iter().map(|v| v * 0.9).collect();
    assert!(mr_stft_loss_grad(&x, &y, &res).unwrap().0 > 0.0);
    assert!(mr_stft_loss_grad(&x, &x[..499], &res).is_err());
    assert!(mr_stft_loss_grad(&x, &x, &res[..1]).is_err());
    let w = Waveform::new(x.iter().map(|&v| v as f32).collect(), 16000);
    assert_eq!(mr_stft_loss(&w, &w, &res).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn lsgan_losses_are_nonnegative(r in prop::collection::vec(-3.0f64..3.0, 1..20), f in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        let l = adversarial_losses(&r, &f).unwrap();
        prop_assert!(l.d_loss >= 0.0 && l.g_loss >= 0.0);
    }
}

#[test]
fn output_length_contract() {
    let cfg16 = VocoderModelConfig::default();
    let cfg24 = VocoderModelConfig { output_rate: 24000, ..cfg16 };
    let v16 = Vocoder::new(cfg16, 0).unwrap();
    let v24 = Vocoder::new(cfg24, 0).unwrap();
    let fc = FeatureConfig::default();
    for frames in [0usize, 1, 17, 100] {
        let mel = MelSpectrogram { values: Mat::from_vec(frames, 80, vec![-3.0; frames * 80]), config_digest: fc.digest() };
        let a = vocode(&mel, &v16).unwrap();
        let b = vocode(&mel, &v24).unwrap();
        assert_eq!(a.len(), frames * 160);
        assert_eq!(b.len(), frames * 240);
        assert_eq!(b.len() * 2, a.len() * 3);
        assert_eq!(b.sample_rate, 24000);
        assert!(a.samples.iter().all(|v| v.abs() <= 1.0));
    }
    let foreign = MelSpectrogram { values: Mat::zeros(3, 80), config_digest: FeatureConfig { hop: 128, ..fc }.digest() };
    assert!(vocode(&foreign, &v16).is_err());
}

#[test]
fn config_validation() {
    let bad = VocoderTrainConfig { resolutions: vec![default_resolutions()[0]; 2], ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = VocoderModelConfig { output_rate: 22050, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = VocoderTrainConfig { lambda_adv: -1.0, ..Default::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn trained_vocoder_improves_and_is_stochastic() {
    let dir = tempfile::tempdir().unwrap();
    let m = common::small_corpus(dir.path(), 2, 12, 4);
    let (train, valid) = m.split_per_speaker(10);
    let cfg = VocoderTrainConfig { steps: 300, eval_every: 100, ..Default::default() };
    let (ckpt, log) = train_vocoder(&train, Some(&valid), &cfg).unwrap();
    let (first, last) = (log.first_valid().unwrap(), log.last_valid().unwrap());
    assert!(last <= 0.5 * first, "validation mr_stft {first} -> {last}");
    assert!(log.train.iter().skip(cfg.adv_start_step()).all(|s| s.d_loss.is_some()));
    assert!(log.train.iter().take(cfg.adv_start_step()).all(|s| s.d_loss.is_none()));

    let voc = Vocoder::from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap()).unwrap();
    let fc = FeatureConfig::default();
    let truth = valid.load_audio(&valid.records[0]).unwrap();
    let mel = logmel(&truth, &fc).unwrap();
    let mut target = truth.clone();
    target.samples.resize(mel.frames() * 160, 0.0);
    let a = vocode_with_seed(&mel, &voc, 1).unwrap();
    let b = vocode_with_seed(&mel, &voc, 2).unwrap();
    assert_ne!(a.samples, b.samples);
    assert_eq!(a, vocode_with_seed(&mel, &voc, 1).unwrap());
    let res = default_resolutions();
    let (la, lb) = (mr_stft_loss(&a, &target, &res).unwrap(), mr_stft_loss(&b, &target, &res).unwrap());
    assert!((la - lb).abs() / la.max(lb) < 0.1, "seed distances {la} vs {lb}");

    let mut gl = griffin_lim(&mel, &fc, 32, 1e-10).unwrap();
    gl.samples.resize(target.len(), 0.0);
    let lg = mr_stft_loss(&gl, &target, &res).unwrap();
    println!("held-out mr_stft: vocoder {la:.4}, griffin-lim(32 iterations) {lg:.4}");
}

#[test]
fn training_is_deterministic_and_24k_mode_works() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        speakers: Speakers::Count(2),
        utterances_per_speaker: 2,
        tokens_per_utterance: TokenCount::Fixed(3),
        seed: 9,
        base_duration_ms: 80.0,
        sample_rate: 24000,
    };
    let m = generate_corpus(&spec, dir.path()).unwrap();
    let cfg = VocoderTrainConfig { model: VocoderModelConfig { output_rate: 24000, ..Default::default() }, steps: 3, eval_every: 1, ..Default::default() };
    let (a, _) = train_vocoder(&m, None, &cfg).unwrap();
    let (b, _) = train_vocoder(&m, None, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let voc = Vocoder::from_checkpoint(&a).unwrap();
    let w = m.load_audio(&m.records[0]).unwrap();
    let mel = logmel(&cascade_vc::dsp::resample(&w, 16000).unwrap(), &FeatureConfig::default()).unwrap();
    assert_eq!(vocode(&mel, &voc).unwrap().len(), mel.frames() * 240);

    let wrong = VocoderTrainConfig { model: VocoderModelConfig::default(), ..cfg };
    assert!(train_vocoder(&m, None, &wrong).is_err());
}
