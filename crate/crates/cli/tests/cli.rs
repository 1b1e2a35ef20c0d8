use std::path::Path;
use std::process::{Command, Output};

use cascade_vc::audio::read_wav;
use cascade_vc::pipeline::{convert, Cascade, ConvertConfig, ModelRegistry, RegistryEntry, Role};

fn vc(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_vc")).current_dir(dir).args(args).output().unwrap();
    if !out.status.success() {
        eprintln!("vc {args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = vc(dir, args);
    assert!(out.status.success(), "vc {args:?} failed");
    String::from_utf8(out.stdout).unwrap()
}

const TRANSFORMER: &str = r#"{ "layers": 1, "heads": 2, "d_model": 16, "d_ff": 32, "dropout": 0.1 }"#;

fn write_configs(dir: &Path) {
    let t = TRANSFORMER;
    let files = [
        ("asr.json", format!(r#"{{ "model": {{ "encoder": {t}, "decoder": {t} }}, "epochs": 30, "batch_size": 2 }}"#)),
        ("spkemb.json", r#"{ "model": { "channels": 8, "layers": 1 }, "epochs": 1 }"#.to_string()),
        ("tts.json", format!(r#"{{ "model": {{ "encoder": {t}, "decoder": {t}, "prenet_dim": 16, "postnet_channels": 8, "postnet_layers": 2 }}, "epochs": 1, "finetune_epochs": 1, "batch_size": 4 }}"#)),
        ("vocoder.toml", "steps = 2\neval_every = 1\n\n[model.generator]\nchannels = 4\ncond_channels = 4\nlayers = 2\nkernel = 3\ndilation_cycle = 2\n\n[model.discriminator]\nchannels = 4\nlayers = 2\n".to_string()),
    ];
    for (name, text) in files {
        std::fs::write(dir.join(name), text).unwrap();
    }
}

#[test]
fn chained_stages_match_convert_run_and_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_configs(d);
    ok(d, &["corpus", "--out", "corpus", "--speakers", "2", "--utterances", "3", "--seed", "4"]);
    let manifest = "corpus/manifest.jsonl";
    assert!(d.join(manifest).is_file());

    ok(d, &["--config", "asr.json", "asr", "train", "--manifest", manifest, "--out", "asr.ckpt"]);
    assert!(d.join("asr.log.json").is_file());
    ok(d, &["asr", "lm", "--manifest", manifest, "--order", "2", "--out", "lm.json"]);
    ok(d, &["--config", "spkemb.json", "spkemb", "train", "--manifest", manifest, "--out", "spkemb.ckpt"]);
    ok(d, &["spkemb", "extract", "--ckpt", "spkemb.ckpt", "--manifest", manifest, "--speaker", "spk00", "--out", "emb.json"]);
    ok(d, &["--config", "tts.json", "tts", "pretrain", "--manifest", manifest, "--spkemb", "spkemb.ckpt", "--out", "pre.ckpt"]);

    let m = cascade_vc::CorpusManifest::read(d.join(manifest)).unwrap();
    let target = m.for_speakers(&["spk00".to_string()]);
    target.write(d.join("corpus/target.jsonl")).unwrap();
    ok(d, &["tts", "finetune", "--pretrained", "pre.ckpt", "--manifest", "corpus/target.jsonl", "--speaker-emb", "emb.json", "--out", "tts.ckpt"]);
    ok(d, &["--config", "vocoder.toml", "vocoder", "train", "--manifest", manifest, "--out", "voc.ckpt"]);

    let mut reg = ModelRegistry::new(d);
    reg.insert(&Role::Asr, reg.checkpoint_entry("asr.ckpt").unwrap());
    reg.insert(&Role::Lm, reg.lm_entry("lm.json").unwrap());
    reg.insert(&Role::Spkemb, reg.checkpoint_entry("spkemb.ckpt").unwrap());
    reg.insert(&Role::Vocoder("default".into()), reg.checkpoint_entry("voc.ckpt").unwrap());
    let e = reg.checkpoint_entry("tts.ckpt").unwrap();
    reg.insert(&Role::Tts("spk00".into()), RegistryEntry { embedding: Some("emb.json".into()), ..e });
    reg.write(d.join("registry.json")).unwrap();
    assert!(ok(d, &["convert", "validate", "--registry", "registry.json"]).contains("ok"));

    let source = m.records.iter().find(|r| r.speaker_id == "spk01").unwrap();
    let wav = m.audio_path(source);
    let wav = wav.to_str().unwrap();

    let tokens = ok(d, &["asr", "recognize", "--ckpt", "asr.ckpt", "--lm", "lm.json", "--wav", wav]);
    let tokens = tokens.trim_end();
    ok(d, &["tts", "synth", "--ckpt", "tts.ckpt", "--tokens", tokens, "--speaker-emb", "emb.json", "--out", "mel.bin"]);
    ok(d, &["vocoder", "infer", "--ckpt", "voc.ckpt", "--mel", "mel.bin", "--out", "chained.wav"]);
    let chained = std::fs::read(d.join("chained.wav")).unwrap();

    let printed = ok(d, &["convert", "run", "--registry", "registry.json", "--wav", wav, "--target", "spk00", "--out-dir", "cli", "--utt-id", "u"]);
    assert_eq!(printed.lines().next().unwrap(), tokens);
    assert_eq!(std::fs::read(d.join("cli/u_to_spk00.wav")).unwrap(), chained);

    let cascade = Cascade::load(&ModelRegistry::read(d.join("registry.json")).unwrap()).unwrap();
    let r = convert(&read_wav(d.join(wav)).unwrap(), "u", "spk00", &cascade, &ConvertConfig::default(), &d.join("lib")).unwrap();
    assert_eq!(r.tokens.to_string(), tokens);
    assert_eq!(std::fs::read(&r.waveform_path).unwrap(), chained);

    // Different vocoder noise, different waveform.
    ok(d, &["--seed", "5", "vocoder", "infer", "--ckpt", "voc.ckpt", "--mel", "mel.bin", "--out", "seed5.wav"]);
    assert_ne!(std::fs::read(d.join("seed5.wav")).unwrap(), chained);

    // A tampered digest fails validation and conversion with exit code 2.
    let mut bad = reg.clone();
    bad.entries.get_mut("asr").unwrap().digest = "0".repeat(16);
    bad.write(d.join("bad.json")).unwrap();
    assert_eq!(vc(d, &["convert", "validate", "--registry", "bad.json"]).status.code(), Some(2));
    assert_eq!(vc(d, &["convert", "run", "--registry", "bad.json", "--wav", wav, "--target", "spk00", "--out-dir", "x"]).status.code(), Some(2));
    assert!(!d.join("x").exists());
}

#[test]
fn validation_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(vc(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(vc(d, &["eval", "cer", "--ref", "", "--hyp", "a"]).status.code(), Some(2));
    std::fs::write(d.join("bad.toml"), "epochs = \"many\"\n").unwrap();
    assert_eq!(vc(d, &["--config", "bad.toml", "asr", "train", "--manifest", "m.jsonl", "--out", "a.ckpt"]).status.code(), Some(2));
    assert_eq!(vc(d, &["tts", "synth", "--ckpt", "missing.ckpt", "--tokens", "a", "--speaker-emb", "e.json", "--out", "m.bin"]).status.code(), Some(2));
}

#[test]
fn rates_print_counts() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(ok(tmp.path(), &["eval", "cer", "--ref", "kitten", "--hyp", "sitting"]).trim(), "50.00% (S=2 D=0 I=1 N=6)");
    assert_eq!(ok(tmp.path(), &["eval", "wer", "--ref", "a b c", "--hyp", "a c"]).trim(), "33.33% (S=0 D=1 I=0 N=3)");
}
