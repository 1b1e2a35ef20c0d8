mod common;

use cascade_vc::dsp::{logmel, FeatureConfig};
use cascade_vc::synthcorpus::{
    generate_corpus, inventory, make_speaker_profile, random_tokens, render_utterance, render_utterance_at, utterance_rng, CorpusSpec, Language, PrototypeClassifier, SpeakerProfile,
    Speakers, TokenCount, MANIFEST_FILE,
};
use cascade_vc::tokens::{TokenSequence, SHARED};
use cascade_vc::CorpusManifest;
use common::pitch_hz;

fn profile(f0: f64, formant_scale: f64, language: Language) -> SpeakerProfile {
    SpeakerProfile { speaker_id: "x".into(), f0_hz: f0, formant_scale, rate_scale: 1.0, language, seed: 3 }
}

#[test]
fn vowel_pitch_matches_f0() {
    for f0 in [120.0, 85.0, 210.0, 290.0] {
        let w = render_utterance(&TokenSequence::parse("a a a"), &profile(f0, 1.0, Language::A), 80.0).unwrap();
        let est = pitch_hz(&w.samples[400..w.len() - 400], 16000, 60.0, 400.0);
        assert!((est - f0).abs() <= 0.05 * f0, "f0 {f0}: estimated {est}");
    }
}

#[test]
fn rendering_at_24k_keeps_duration_and_pitch() {
    let t = TokenSequence::parse("o o");
    let p = profile(150.0, 1.0, Language::B);
    let w = render_utterance_at(&t, &p, 80.0, 24000, &mut utterance_rng(0, "x")).unwrap();
    assert_eq!(w.len(), 2 * 1920);
    let est = pitch_hz(&w.samples[500..3400], 24000, 60.0, 400.0);
    assert!((est - 150.0).abs() < 7.5, "{est}");
}

fn spec(speakers: usize, utts: usize) -> CorpusSpec {
    CorpusSpec { speakers: Speakers::Count(speakers), utterances_per_speaker: utts, tokens_per_utterance: TokenCount::Range { min: 3, max: 6 }, seed: 11, base_duration_ms: 80.0, sample_rate: 16000 }
}

#[test]
fn corpus_has_one_record_per_utterance() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_corpus(&spec(8, 70), dir.path()).unwrap();
    assert_eq!(m.len(), 560);
    assert_eq!(m.speakers().len(), 8);
    assert_eq!(m.languages(), vec![Language::A, Language::B]);
    for r in &m.records {
        assert!(m.audio_path(r).exists());
        let inv = inventory(r.language);
        let t = r.tokens();
        assert!((3..=6).contains(&t.len()));
        assert!(t.symbols.iter().all(|s| inv.contains(s)));
    }
    let back = CorpusManifest::read(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(back.records, m.records);
}

#[test]
fn corpus_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_corpus(&spec(3, 4), a.path()).unwrap();
    generate_corpus(&spec(3, 4), b.path()).unwrap();
    assert_eq!(std::fs::read(a.path().join(MANIFEST_FILE)).unwrap(), std::fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    for r in &ma.records {
        assert_eq!(std::fs::read(a.path().join(&r.audio_path)).unwrap(), std::fs::read(b.path().join(&r.audio_path)).unwrap());
    }
}

#[test]
fn zero_utterances_writes_no_audio() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_corpus(&spec(4, 0), dir.path()).unwrap();
    assert!(m.is_empty());
    assert!(!dir.path().join("wav").exists());
    assert_eq!(std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap(), "");
}

#[test]
fn speakers_differing_in_pitch_differ_in_features() {
    let cfg = FeatureConfig::default();
    for seed in [1u64, 2, 3] {
        let a = make_speaker_profile(seed, Language::A);
        let b = SpeakerProfile { f0_hz: if a.f0_hz > 150.0 { a.f0_hz - 20.0 } else { a.f0_hz + 20.0 }, ..a.clone() };
        for s in SHARED {
            let t = TokenSequence::new([s]);
            let ma = logmel(&render_utterance(&t, &a, 80.0).unwrap(), &cfg).unwrap();
            let mb = logmel(&render_utterance(&t, &b, 80.0).unwrap(), &cfg).unwrap();
            let d: f64 = ma.values.data.iter().zip(&mb.values.data).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / ma.values.data.len() as f64;
            assert!(d > 0.0, "{s}");
        }
    }
}

#[test]
fn clean_tokens_classify_perfectly() {
    let cfg = FeatureConfig::default();
    for (seed, lang) in (0u64..16).map(|s| (s, if s % 2 == 0 { Language::A } else { Language::B })) {
        let p = make_speaker_profile(seed, lang);
        let clf = PrototypeClassifier::for_speaker(&p, &cfg, 80.0).unwrap();
        let mut rng = utterance_rng(seed, "probe");
        for _ in 0..10 {
            let t = random_tokens(&mut rng, lang, 6);
            let w = render_utterance_at(&t, &p, 80.0, 16000, &mut rng).unwrap();
            let got = clf.classify_segments(&logmel(&w, &cfg).unwrap(), t.len());
            assert_eq!(got, t, "speaker seed {seed}");
        }
    }
}
