use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{convert, Cascade, ConvertConfig, ModelRegistry, RegistryEntry, Role};
use crate::asr::{train_asr, train_ngram_lm, AsrTrainConfig, DecodeConfig};
use crate::error::{Error, Result};
use crate::eval::{conversion_similarity, intelligibility_report, Condition, IntelligibilityReport, ScoredItem, SimilarityReport};
use crate::manifest::CorpusManifest;
use crate::nn::Checkpoint;
use crate::spkemb::{extract_speaker_embedding, identify, train_spkemb, SpeakerEmbedding, SpkembModel, SpkembTrainConfig};
use crate::synthcorpus::{generate_corpus, CorpusSpec, Language, PrototypeClassifier, SpeakerProfile, MANIFEST_FILE};
use crate::tokens::SHARED;
use crate::train::TrainLog;
use crate::tts::{finetune_tts, pretrain_tts, synthesize, teacher_forced_eval, SynthesisConfig, TtsModel, TtsTrainConfig};
use crate::vocoder::{train_vocoder, VocoderTrainConfig, VocoderTrainLog};
use crate::{TokenSequence, Waveform};

pub const VOCODER_GROUP: &str = "default";

/// Everything one end-to-end run needs: corpus, data split, speaker roles,
/// per-module training configs and the evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub corpus: CorpusSpec,
    /// Leading utterances of each speaker used for training; the rest are test.
    pub train_per_speaker: usize,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// N-gram order of the token LM; 0 disables it.
    #[serde(default)]
    pub lm_order: usize,
    #[serde(default)]
    pub asr: AsrTrainConfig,
    #[serde(default)]
    pub spkemb: SpkembTrainConfig,
    #[serde(default)]
    pub tts: TtsTrainConfig,
    #[serde(default)]
    pub vocoder: VocoderTrainConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    /// Test utterances converted per source speaker (all when absent).
    pub test_per_source: Option<usize>,
    /// Random shared-vowel sequences synthesised per language-B target.
    pub cross_lingual_utterances: usize,
    pub cross_lingual_length: usize,
    pub seed: u64,
    pub vocoder_seed: u64,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        Self { test_per_source: None, cross_lingual_utterances: 20, cross_lingual_length: 4, seed: 0, vocoder_seed: 0 }
    }
}

impl ExperimentSpec {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let profiles = self.corpus.profiles()?;
        self.corpus.validate()?;
        if self.train_per_speaker == 0 || self.train_per_speaker >= self.corpus.utterances_per_speaker {
            return Err(Error::Config("train_per_speaker must leave at least one test utterance".into()));
        }
        if self.sources.is_empty() || self.targets.is_empty() {
            return Err(Error::Config("need at least one source and one target speaker".into()));
        }
        for s in self.sources.iter().chain(&self.targets) {
            if !profiles.iter().any(|p| &p.speaker_id == s) {
                return Err(Error::Config(format!("speaker {s:?} is not in the corpus")));
            }
        }
        if let Some(s) = self.sources.iter().find(|s| self.targets.contains(s)) {
            return Err(Error::Config(format!("{s} is both a source and a target")));
        }
        self.asr.validate()?;
        self.tts.validate()?;
        self.vocoder.validate()?;
        self.decode.validate()?;
        self.synthesis.validate()
    }

    /// Replaces every training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.asr.seed = seed;
        self.spkemb.seed = seed;
        self.tts.seed = seed;
        self.vocoder.seed = seed;
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Reuse the corpus and checkpoints already present in `out_dir`.
    pub skip_existing: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub source: String,
    pub target: String,
    pub report: SimilarityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRow {
    pub speaker: String,
    pub pretrained_mel_l1: f64,
    pub finetuned_mel_l1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossLingual {
    pub speakers: Vec<String>,
    pub tokens: usize,
    pub correct: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub asr_test_cer: f64,
    pub asr_test_wer: f64,
    pub spkemb_accuracy: f64,
    pub similarity: SimilarityReport,
    pub pairs: Vec<PairSimilarity>,
    pub intelligibility: IntelligibilityReport,
    pub cross_lingual: CrossLingual,
    pub finetune: Vec<FinetuneRow>,
    pub vocoder_valid_first: Option<f64>,
    pub vocoder_valid_last: Option<f64>,
    pub criteria: Vec<Criterion>,
}

impl ExperimentReport {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("== recognition (held-out, all speakers)\n");
        s += &format!("CER {:.2}%  WER {:.2}%\n\n", self.asr_test_cer, self.asr_test_wer);
        s += &format!("== speaker identification\naccuracy {:.1}%\n\n", self.spkemb_accuracy);
        s += "== tts finetuning (teacher-forced mel L1 on target test split)\n";
        for r in &self.finetune {
            s += &format!("{:<12} pretrained {:.4}  finetuned {:.4}\n", r.speaker, r.pretrained_mel_l1, r.finetuned_mel_l1);
        }
        s += "\n== vocoder validation mr_stft\n";
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        s += &format!("first {}  last {}\n\n", opt(self.vocoder_valid_first), opt(self.vocoder_valid_last));
        s += "== intelligibility\n";
        s += &self.intelligibility.to_text();
        s += "\n== conversion similarity\n";
        for p in &self.pairs {
            s += &format!("{} -> {}: closer to target {:.1}% (cos target {:.3}, source {:.3})\n", p.source, p.target, p.report.percent_closer_to_target, p.report.mean_cos_target, p.report.mean_cos_source);
        }
        s += &format!("pooled: {}", self.similarity.to_text());
        s += &format!("\n== cross-lingual shared vowels ({})\n{}/{} correct ({:.1}%)\n", self.cross_lingual.speakers.join(", "), self.cross_lingual.correct, self.cross_lingual.tokens, self.cross_lingual.percent);
        s += "\n== criteria\n";
        for c in &self.criteria {
            s += &format!("{:<4} {:<44} {:>8.2} {:<8}\n", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
        }
        s
    }
}

struct Stopwatch {
    stages: Vec<(String, f64)>,
    t: Instant,
}

impl Stopwatch {
    fn lap(&mut self, stage: &str) {
        self.stages.push((stage.to_string(), self.t.elapsed().as_secs_f64()));
        self.t = Instant::now();
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads `path` when reusing is allowed and it exists; otherwise trains,
/// then saves the checkpoint and its log.
fn cached(path: &Path, skip_existing: bool, train: impl FnOnce() -> Result<(Checkpoint, TrainLog)>) -> Result<Checkpoint> {
    if skip_existing && path.is_file() {
        log::info!("reusing {}", path.display());
        return Checkpoint::load(path);
    }
    let (ckpt, log) = train()?;
    ckpt.save(path)?;
    log.write(path.with_extension("log.json"))?;
    Ok(ckpt)
}

fn load_all(m: &CorpusManifest) -> Result<Vec<Waveform>> {
    m.records.iter().map(|r| m.load_audio(r)).collect()
}

/// Generates the corpus, trains every model, converts the test set and
/// writes `report.txt`, `report.json`, `registry.json` and `timings.json`
/// under `opts.out_dir`.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentReport> {
    spec.validate()?;
    let out = &opts.out_dir;
    let models = out.join("models");
    for d in [out, &models, &out.join("embeddings")] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut sw = Stopwatch { stages: Vec::new(), t: Instant::now() };

    let corpus_dir = out.join("corpus");
    let manifest = if opts.skip_existing && corpus_dir.join(MANIFEST_FILE).is_file() {
        stage("corpus", CorpusManifest::read(corpus_dir.join(MANIFEST_FILE)))?
    } else {
        stage("corpus", generate_corpus(&spec.corpus, &corpus_dir))?
    };
    let profiles: Vec<SpeakerProfile> = spec.corpus.profiles()?;
    let (train, test) = manifest.split_per_speaker(spec.train_per_speaker);
    sw.lap("corpus");

    let asr_path = models.join("asr.ckpt");
    stage("asr", cached(&asr_path, opts.skip_existing, || train_asr(&train, Some(&test), &spec.asr)))?;
    let lm_path = models.join("lm.json");
    if spec.lm_order > 0 {
        stage("asr", train_ngram_lm(&train, spec.lm_order).and_then(|lm| lm.save(&lm_path)))?;
    }
    sw.lap("asr");

    let spk_ckpt = stage("spkemb", cached(&models.join("spkemb.ckpt"), opts.skip_existing, || train_spkemb(&train, Some(&test), &spec.spkemb)))?;
    let spk_model = stage("spkemb", SpkembModel::from_checkpoint(&spk_ckpt))?;
    let mut embeddings: BTreeMap<String, SpeakerEmbedding> = BTreeMap::new();
    for p in &profiles {
        let e = stage("spkemb", extract_speaker_embedding(&train, &p.speaker_id, &spk_model))?;
        stage("spkemb", e.save(out.join("embeddings").join(format!("{}.json", p.speaker_id))))?;
        embeddings.insert(p.speaker_id.clone(), e);
    }
    sw.lap("spkemb");

    let pre_speakers: Vec<String> = profiles.iter().map(|p| p.speaker_id.clone()).filter(|s| !spec.targets.contains(s)).collect();
    let pre_train = train.for_speakers(&pre_speakers);
    let pre_valid = test.for_speakers(&pre_speakers);
    let pretrained = stage("tts", cached(&models.join("tts_pretrained.ckpt"), opts.skip_existing, || pretrain_tts(&pre_train, Some(&pre_valid), &spk_model, &spec.tts)))?;
    let mut finetune_rows = Vec::new();
    for t in &spec.targets {
        let tm = train.for_speakers(std::slice::from_ref(t));
        let ck = stage("tts", cached(&models.join(format!("tts_{t}.ckpt")), opts.skip_existing, || finetune_tts(&pretrained, &tm, &embeddings[t], &spec.tts)))?;
        let held = test.for_speakers(std::slice::from_ref(t));
        let mean_l1 = |c: &Checkpoint| -> Result<f64> {
            let rows = teacher_forced_eval(&held, c, &embeddings)?;
            Ok(rows.iter().map(|r| r.mel_l1 as f64).sum::<f64>() / rows.len().max(1) as f64)
        };
        finetune_rows.push(FinetuneRow { speaker: t.clone(), pretrained_mel_l1: stage("tts", mean_l1(&pretrained))?, finetuned_mel_l1: stage("tts", mean_l1(&ck))? });
    }
    sw.lap("tts");

    let voc_path = models.join(format!("vocoder_{VOCODER_GROUP}.ckpt"));
    let voc_log_path = voc_path.with_extension("log.json");
    let voc_log: VocoderTrainLog = if opts.skip_existing && voc_path.is_file() && voc_log_path.is_file() {
        let text = std::fs::read_to_string(&voc_log_path).map_err(|e| Error::io(&voc_log_path, e).in_stage("vocoder"))?;
        stage("vocoder", serde_json::from_str(&text).map_err(Error::from))?
    } else {
        let (ck, log) = stage("vocoder", train_vocoder(&train, Some(&test), &spec.vocoder))?;
        stage("vocoder", ck.save(&voc_path))?;
        stage("vocoder", log.write(&voc_log_path))?;
        log
    };
    let (vocoder_valid_first, vocoder_valid_last) = (voc_log.first_valid(), voc_log.last_valid());
    sw.lap("vocoder");

    let mut reg = ModelRegistry::new(out);
    reg.insert(&Role::Asr, reg.checkpoint_entry("models/asr.ckpt")?);
    if spec.lm_order > 0 {
        reg.insert(&Role::Lm, reg.lm_entry("models/lm.json")?);
    }
    reg.insert(&Role::Spkemb, reg.checkpoint_entry("models/spkemb.ckpt")?);
    reg.insert(&Role::Vocoder(VOCODER_GROUP.into()), reg.checkpoint_entry(format!("models/vocoder_{VOCODER_GROUP}.ckpt"))?);
    for t in &spec.targets {
        let e = reg.checkpoint_entry(format!("models/tts_{t}.ckpt"))?;
        reg.insert(&Role::Tts(t.clone()), RegistryEntry { embedding: Some(format!("embeddings/{t}.json").into()), vocoder: Some(VOCODER_GROUP.into()), ..e });
    }
    reg.write(out.join("registry.json"))?;
    let cascade = Cascade::load(&reg)?;

    let ccfg = ConvertConfig { decode: spec.decode, synthesis: spec.synthesis, vocoder_seed: spec.evaluation.vocoder_seed, keep_intermediates: false };
    let conv_dir = out.join("converted");
    let mut items = Vec::new();
    let mut converted: BTreeMap<(String, String), Vec<Waveform>> = BTreeMap::new();
    for src in &spec.sources {
        let recs: Vec<_> = test.records.iter().filter(|r| &r.speaker_id == src).take(spec.evaluation.test_per_source.unwrap_or(usize::MAX)).collect();
        for r in recs {
            items.push(ScoredItem { utt_id: r.utt_id.clone(), source_speaker: src.clone(), condition: Condition::Input, audio: test.audio_path(r), reference: r.tokens() });
            let w = stage("convert", test.load_audio(r))?;
            for t in &spec.targets {
                let res = stage("convert", convert(&w, &r.utt_id, t, &cascade, &ccfg, &conv_dir))?;
                items.push(ScoredItem { utt_id: format!("{}_to_{t}", r.utt_id), source_speaker: src.clone(), condition: Condition::Converted, audio: res.waveform_path.clone(), reference: r.tokens() });
                converted.entry((src.clone(), t.clone())).or_default().push(stage("convert", crate::audio::read_wav(&res.waveform_path))?);
            }
        }
    }
    sw.lap("convert");

    let report = stage("eval", evaluate(spec, &profiles, &train, &test, &cascade, &spk_model, &embeddings, &items, &converted))?;
    let report = ExperimentReport { finetune: finetune_rows, vocoder_valid_first, vocoder_valid_last, ..report };
    let report = with_criteria(report);
    sw.lap("eval");

    std::fs::write(out.join("report.txt"), report.to_text()).map_err(|e| Error::io(out.join("report.txt"), e))?;
    write_json(&out.join("report.json"), &report)?;
    let timings: BTreeMap<String, f64> = sw.stages.iter().cloned().collect();
    write_json(&out.join("timings.json"), &timings)?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    spec: &ExperimentSpec,
    profiles: &[SpeakerProfile],
    train: &CorpusManifest,
    test: &CorpusManifest,
    cascade: &Cascade,
    spk_model: &SpkembModel,
    embeddings: &BTreeMap<String, SpeakerEmbedding>,
    items: &[ScoredItem],
    converted: &BTreeMap<(String, String), Vec<Waveform>>,
) -> Result<ExperimentReport> {
    let held_out: Vec<ScoredItem> = test
        .records
        .iter()
        .map(|r| ScoredItem { utt_id: r.utt_id.clone(), source_speaker: r.speaker_id.clone(), condition: Condition::Input, audio: test.audio_path(r), reference: r.tokens() })
        .collect();
    let asr_rep = intelligibility_report(&held_out, &cascade.asr, &spec.decode, cascade.lm.as_ref())?;
    let asr_cell = asr_rep.overall(Condition::Input).ok_or_else(|| Error::Invalid("no held-out utterances".into()))?;

    let enrolled: Vec<SpeakerEmbedding> = embeddings.values().cloned().collect();
    let names: Vec<&String> = embeddings.keys().collect();
    let mut hits = 0usize;
    for r in &test.records {
        let v = spk_model.embed_waveform(&test.load_audio(r)?)?;
        if names[identify(&v, &enrolled)?] == &r.speaker_id {
            hits += 1;
        }
    }
    let spkemb_accuracy = 100.0 * hits as f64 / test.len().max(1) as f64;

    let intelligibility = intelligibility_report(items, &cascade.asr, &spec.decode, cascade.lm.as_ref())?;

    let mut pairs = Vec::new();
    let (mut n, mut closer, mut ct, mut cs) = (0usize, 0.0, 0.0, 0.0);
    for ((src, tgt), waves) in converted {
        let t_audio = load_all(&train.for_speakers(std::slice::from_ref(tgt)))?;
        let s_audio = load_all(&train.for_speakers(std::slice::from_ref(src)))?;
        let rep = conversion_similarity(waves, &t_audio, &s_audio, spk_model)?;
        n += rep.n;
        closer += rep.percent_closer_to_target * rep.n as f64 / 100.0;
        ct += rep.mean_cos_target * rep.n as f64;
        cs += rep.mean_cos_source * rep.n as f64;
        pairs.push(PairSimilarity { source: src.clone(), target: tgt.clone(), report: rep });
    }
    let nf = n.max(1) as f64;
    let similarity = SimilarityReport { n, percent_closer_to_target: 100.0 * closer / nf, mean_cos_target: ct / nf, mean_cos_source: cs / nf };

    let cross_lingual = cross_lingual_vowels(spec, profiles, cascade)?;

    Ok(ExperimentReport {
        asr_test_cer: asr_cell.cer,
        asr_test_wer: asr_cell.wer,
        spkemb_accuracy,
        similarity,
        pairs,
        intelligibility,
        cross_lingual,
        finetune: Vec::new(),
        vocoder_valid_first: None,
        vocoder_valid_last: None,
        criteria: Vec::new(),
    })
}

/// Each language-B target voice reads random shared-vowel sequences; every
/// equal-length segment of the synthesised mel is labelled by the target
/// speaker's own prototype classifier.
fn cross_lingual_vowels(spec: &ExperimentSpec, profiles: &[SpeakerProfile], cascade: &Cascade) -> Result<CrossLingual> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spec.evaluation.seed);
    let (mut tokens, mut correct) = (0usize, 0usize);
    let mut speakers = Vec::new();
    for p in profiles.iter().filter(|p| p.language == Language::B && spec.targets.contains(&p.speaker_id)) {
        let voice = &cascade.voices[&p.speaker_id];
        let tts: &TtsModel = &voice.tts;
        let classifier = PrototypeClassifier::for_speaker(p, &tts.cfg.features, spec.corpus.base_duration_ms)?;
        speakers.push(p.speaker_id.clone());
        for _ in 0..spec.evaluation.cross_lingual_utterances {
            let seq = TokenSequence::new((0..spec.evaluation.cross_lingual_length).map(|_| SHARED[rng.random_range(0..SHARED.len())]));
            let mel = synthesize(&seq, &voice.embedding.vector, tts, &spec.synthesis)?.mel;
            let got = classifier.classify_segments(&mel, seq.len());
            tokens += seq.len();
            correct += seq.symbols.iter().zip(&got.symbols).filter(|(a, b)| a == b).count();
        }
    }
    Ok(CrossLingual { speakers, tokens, correct, percent: 100.0 * correct as f64 / tokens.max(1) as f64 })
}

fn with_criteria(mut r: ExperimentReport) -> ExperimentReport {
    let input = r.intelligibility.overall(Condition::Input).map_or(f64::NAN, |c| c.cer);
    let conv = r.intelligibility.overall(Condition::Converted).map_or(f64::NAN, |c| c.cer);
    let c = |name: &str, value: f64, threshold: &str, pass: bool| Criterion { name: name.into(), value, threshold: threshold.into(), pass };
    r.criteria = vec![
        c("asr held-out CER %", r.asr_test_cer, "< 10", r.asr_test_cer < 10.0),
        c("spkemb held-out accuracy %", r.spkemb_accuracy, ">= 90", r.spkemb_accuracy >= 90.0),
        c("converted closer to target %", r.similarity.percent_closer_to_target, ">= 80", r.similarity.percent_closer_to_target >= 80.0),
        c("converted CER minus input CER", conv - input, "> 0", conv > input),
        c("cross-lingual shared vowels %", r.cross_lingual.percent, ">= 70", r.cross_lingual.percent >= 70.0),
    ];
    r
}
