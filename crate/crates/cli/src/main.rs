use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use cascade_vc::asr::{recognize, train_asr, train_ngram_lm, AsrModel, AsrTrainConfig, DecodeConfig, NgramLm};
use cascade_vc::audio::{read_wav, write_wav};
use cascade_vc::dsp::{read_features, write_features, FeatureConfig, MelSpectrogram};
use cascade_vc::eval::{aggregate_ratings, cer_wer, conversion_similarity, edit_distance, intelligibility_report, ratings_text, units, Condition, RatingScale, RatingsTable, ScoredItem, Unit};
use cascade_vc::nn::Checkpoint;
use cascade_vc::pipeline::{convert, run_experiment, validate_registry, Cascade, ConvertConfig, ExperimentSpec, ModelRegistry, RunOptions};
use cascade_vc::spkemb::{extract_speaker_embedding, train_spkemb, SpeakerEmbedding, SpkembModel, SpkembTrainConfig};
use cascade_vc::synthcorpus::{generate_corpus, CorpusSpec, Speakers, TokenCount};
use cascade_vc::train::features;
use cascade_vc::tts::{finetune_tts, pretrain_tts, synthesize, SynthesisConfig, TtsModel, TtsTrainConfig};
use cascade_vc::vocoder::{train_vocoder, vocode_with_seed, Vocoder, VocoderTrainConfig};
use cascade_vc::{CorpusManifest, TokenSequence};

#[derive(Parser)]
#[command(name = "vc", version, about = "Recognition-synthesis cascade voice conversion")]
struct Cli {
    /// Configuration file (TOML, or JSON by extension) for the chosen command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the chosen command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (`--config` takes a corpus spec).
    Corpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 20)]
        utterances: usize,
        #[arg(long, default_value_t = 3)]
        min_tokens: usize,
        #[arg(long, default_value_t = 6)]
        max_tokens: usize,
        #[arg(long, default_value_t = 16000)]
        sample_rate: u32,
    },
    /// Log-mel feature dumps.
    #[command(subcommand)]
    Features(FeaturesCmd),
    #[command(subcommand)]
    Asr(AsrCmd),
    #[command(subcommand)]
    Spkemb(SpkembCmd),
    #[command(subcommand)]
    Tts(TtsCmd),
    #[command(subcommand)]
    Vocoder(VocoderCmd),
    #[command(subcommand)]
    Convert(ConvertCmd),
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Run an experiment spec end to end.
    Experiment {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse the corpus and checkpoints already in `--out`.
        #[arg(long)]
        skip_existing: bool,
    },
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// One `<utt_id>.bin` per manifest record.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Features of a single WAV file.
    Wav {
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AsrCmd {
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print one hypothesis line per input.
    Recognize {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        wav: Vec<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        lm_weight: Option<f64>,
    },
    /// Token n-gram language model.
    Lm {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum SpkembCmd {
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enrollment embedding of one speaker as JSON.
    Extract {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        speaker: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum TtsCmd {
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        spkemb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Without `--config`, the pretrained model's training config is reused.
    Finetune {
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        speaker_emb: PathBuf,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        freeze_embedding: bool,
        #[arg(long)]
        out: PathBuf,
    },
    Synth {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        tokens: String,
        #[arg(long)]
        speaker_emb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum VocoderCmd {
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        valid: Option<PathBuf>,
        #[arg(long)]
        output_rate: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise is drawn from `--seed` (default 0).
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mel: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ConvertCmd {
    /// Convert one WAV file into the target voice.
    Run {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// Defaults to the WAV file stem.
        #[arg(long)]
        utt_id: Option<String>,
        #[arg(long)]
        keep_intermediates: bool,
    },
    /// Load every registry entry and check its digest.
    Validate {
        #[arg(long)]
        registry: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    Cer {
        #[arg(long = "ref")]
        reference: String,
        #[arg(long)]
        hyp: String,
    },
    Wer {
        #[arg(long = "ref")]
        reference: String,
        #[arg(long)]
        hyp: String,
    },
    /// CER/WER of source input and, with `--converted-dir`, of its conversions.
    Intelligibility {
        #[arg(long)]
        asr: PathBuf,
        #[arg(long)]
        lm: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, requires = "target")]
        converted_dir: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        /// Writes `<out>.txt` and `<out>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Share of converted utterances closer to the target than the source.
    Similarity {
        #[arg(long)]
        spkemb: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        converted_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean and 95% interval per system from a ratings CSV.
    Aggregate {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, default_value = "mos")]
        scale: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A command-line error detected before any stage ran.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

/// 2 for invalid input or configuration, 3 when a stage failed.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<cascade_vc::Error>() {
            use cascade_vc::Error as E;
            return match e {
                E::Stage { stage: "registry", .. } => 2,
                E::Config(_) | E::UnknownToken(_) | E::Shape(_) | E::SampleRate { .. } | E::DigestMismatch { .. } | E::Invalid(_) | E::Checkpoint(_) | E::Json(_) | E::Io { .. } | E::Wav(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_report<T: Serialize>(prefix: Option<&Path>, text: &str, value: &T) -> Result<()> {
    print!("{text}");
    if let Some(p) = prefix {
        let txt = p.with_extension("txt");
        std::fs::write(&txt, text).with_context(|| txt.display().to_string())?;
        let json = p.with_extension("json");
        std::fs::write(&json, serde_json::to_string_pretty(value)? + "\n").with_context(|| json.display().to_string())?;
    }
    Ok(())
}

fn read_manifest(p: &Path) -> Result<CorpusManifest> {
    Ok(CorpusManifest::read(p)?)
}

fn read_valid(p: Option<&PathBuf>) -> Result<Option<CorpusManifest>> {
    p.map(|p| read_manifest(p)).transpose()
}

fn save_trained(out: &Path, ckpt: &Checkpoint, log: &cascade_vc::train::TrainLog) -> Result<()> {
    ckpt.save(out)?;
    log.write(out.with_extension("log.json"))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Corpus { out, speakers, utterances, min_tokens, max_tokens, sample_rate } => {
            let mut spec: CorpusSpec = match config {
                Some(_) => load_config::<Option<CorpusSpec>>(config)?.ok_or_else(|| usage("empty corpus spec"))?,
                None => CorpusSpec {
                    speakers: Speakers::Count(speakers),
                    utterances_per_speaker: utterances,
                    tokens_per_utterance: TokenCount::Range { min: min_tokens, max: max_tokens },
                    seed: 0,
                    base_duration_ms: cascade_vc::synthcorpus::DEFAULT_BASE_DURATION_MS,
                    sample_rate,
                },
            };
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let m = generate_corpus(&spec, &out)?;
            println!("{} utterances from {} speakers in {}", m.len(), m.speakers().len(), out.display());
        }
        Command::Features(cmd) => {
            let cfg: FeatureConfig = load_config(config)?;
            match cmd {
                FeaturesCmd::Extract { manifest, out } => {
                    let m = read_manifest(&manifest)?;
                    for r in &m.records {
                        let values = features(&m.load_audio(r)?, &cfg)?;
                        write_features(out.join(format!("{}.bin", r.utt_id)), &MelSpectrogram { values, config_digest: cfg.digest() })?;
                    }
                    println!("{} feature files in {}", m.len(), out.display());
                }
                FeaturesCmd::Wav { wav, out } => {
                    let values = features(&read_wav(&wav)?, &cfg)?;
                    write_features(&out, &MelSpectrogram { values, config_digest: cfg.digest() })?;
                }
            }
        }
        Command::Asr(cmd) => match cmd {
            AsrCmd::Train { manifest, valid, out } => {
                let mut cfg: AsrTrainConfig = load_config(config)?;
                cfg.seed = cli.seed.unwrap_or(cfg.seed);
                let (ckpt, log) = train_asr(&read_manifest(&manifest)?, read_valid(valid.as_ref())?.as_ref(), &cfg)?;
                save_trained(&out, &ckpt, &log)?;
            }
            AsrCmd::Recognize { ckpt, wav, beam, lm, lm_weight } => {
                let mut dcfg: DecodeConfig = load_config(config)?;
                dcfg.beam_size = beam.unwrap_or(dcfg.beam_size);
                dcfg.lm_weight = lm_weight.unwrap_or(dcfg.lm_weight);
                let model = AsrModel::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
                let lm = lm.map(NgramLm::load).transpose()?;
                for w in &wav {
                    println!("{}", recognize(&read_wav(w)?, &model, &dcfg, lm.as_ref())?.tokens);
                }
            }
            AsrCmd::Lm { manifest, order, out } => {
                train_ngram_lm(&read_manifest(&manifest)?, order)?.save(&out)?;
            }
        },
        Command::Spkemb(cmd) => match cmd {
            SpkembCmd::Train { manifest, valid, out } => {
                let mut cfg: SpkembTrainConfig = load_config(config)?;
                cfg.seed = cli.seed.unwrap_or(cfg.seed);
                let (ckpt, log) = train_spkemb(&read_manifest(&manifest)?, read_valid(valid.as_ref())?.as_ref(), &cfg)?;
                save_trained(&out, &ckpt, &log)?;
            }
            SpkembCmd::Extract { ckpt, manifest, speaker, out } => {
                let model = SpkembModel::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
                extract_speaker_embedding(&read_manifest(&manifest)?, &speaker, &model)?.save(&out)?;
            }
        },
        Command::Tts(cmd) => match cmd {
            TtsCmd::Pretrain { manifest, valid, spkemb, out } => {
                let mut cfg: TtsTrainConfig = load_config(config)?;
                cfg.seed = cli.seed.unwrap_or(cfg.seed);
                let spk = SpkembModel::from_checkpoint(&Checkpoint::load(&spkemb)?)?;
                let (ckpt, log) = pretrain_tts(&read_manifest(&manifest)?, read_valid(valid.as_ref())?.as_ref(), &spk, &cfg)?;
                save_trained(&out, &ckpt, &log)?;
            }
            TtsCmd::Finetune { pretrained, manifest, speaker_emb, freeze_embedding, out } => {
                let pre = Checkpoint::load(&pretrained)?;
                let mut cfg: TtsTrainConfig = if config.is_some() { load_config(config)? } else { pre.config()? };
                cfg.seed = cli.seed.unwrap_or(cfg.seed);
                cfg.freeze_embedding = freeze_embedding;
                let (ckpt, log) = finetune_tts(&pre, &read_manifest(&manifest)?, &SpeakerEmbedding::load(&speaker_emb)?, &cfg)?;
                save_trained(&out, &ckpt, &log)?;
            }
            TtsCmd::Synth { ckpt, tokens, speaker_emb, out } => {
                let scfg: SynthesisConfig = load_config(config)?;
                let model = TtsModel::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
                let s = synthesize(&TokenSequence::parse(&tokens), &SpeakerEmbedding::load(&speaker_emb)?.vector, &model, &scfg)?;
                write_features(&out, &s.mel)?;
                println!("{} frames, stop {}", s.mel.frames(), s.stop_frame.map_or("cap".to_string(), |f| f.to_string()));
            }
        },
        Command::Vocoder(cmd) => match cmd {
            VocoderCmd::Train { manifest, valid, output_rate, out } => {
                let mut cfg: VocoderTrainConfig = load_config(config)?;
                cfg.seed = cli.seed.unwrap_or(cfg.seed);
                cfg.model.output_rate = output_rate.unwrap_or(cfg.model.output_rate);
                let (ckpt, log) = train_vocoder(&read_manifest(&manifest)?, read_valid(valid.as_ref())?.as_ref(), &cfg)?;
                ckpt.save(&out)?;
                log.write(out.with_extension("log.json"))?;
                println!("wrote {}; validation mr_stft {:?} -> {:?}", out.display(), log.first_valid(), log.last_valid());
            }
            VocoderCmd::Infer { ckpt, mel, out } => {
                let voc = Vocoder::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
                write_wav(&out, &vocode_with_seed(&read_features(&mel)?, &voc, cli.seed.unwrap_or(0))?)?;
            }
        },
        Command::Convert(cmd) => match cmd {
            ConvertCmd::Run { registry, wav, target, out_dir, utt_id, keep_intermediates } => {
                let mut cfg: ConvertConfig = load_config(config)?;
                cfg.vocoder_seed = cli.seed.unwrap_or(cfg.vocoder_seed);
                cfg.keep_intermediates |= keep_intermediates;
                let cascade = Cascade::load(&ModelRegistry::read(&registry)?)?;
                let id = match utt_id {
                    Some(id) => id,
                    None => wav.file_stem().and_then(|s| s.to_str()).ok_or_else(|| usage("cannot derive an utterance id; pass --utt-id"))?.to_string(),
                };
                let r = convert(&read_wav(&wav)?, &id, &target, &cascade, &cfg, &out_dir)?;
                println!("{}", r.tokens);
                println!("{}", r.waveform_path.display());
                let t = r.timings;
                println!("asr {:.1} ms, tts {:.1} ms, vocoder {:.1} ms", t.asr_ms, t.tts_ms, t.vocoder_ms);
            }
            ConvertCmd::Validate { registry } => {
                let report = validate_registry(&ModelRegistry::read(&registry)?);
                print!("{}", report.to_text());
                if !report.is_valid() {
                    return Err(usage("registry validation failed"));
                }
            }
        },
        Command::Eval(cmd) => eval(cmd, config)?,
        Command::Experiment { spec, out, skip_existing } => {
            let mut s = ExperimentSpec::read(&spec)?;
            if let Some(seed) = cli.seed {
                s = s.with_seed(seed);
            }
            let report = run_experiment(&s, &RunOptions { out_dir: out.clone(), skip_existing })?;
            print!("{}", report.to_text());
            println!("report written to {}", out.join("report.txt").display());
        }
    }
    Ok(())
}

fn eval(cmd: EvalCmd, config: Option<&Path>) -> Result<()> {
    match cmd {
        EvalCmd::Cer { reference, hyp } | EvalCmd::Wer { reference, hyp } if reference.trim().is_empty() => {
            let _ = hyp;
            Err(usage("reference is empty"))
        }
        EvalCmd::Cer { reference, hyp } => print_rate(&reference, &hyp, Unit::Char),
        EvalCmd::Wer { reference, hyp } => print_rate(&reference, &hyp, Unit::Word),
        EvalCmd::Intelligibility { asr, lm, manifest, converted_dir, target, out } => {
            let dcfg: DecodeConfig = load_config(config)?;
            let m = read_manifest(&manifest)?;
            let model = AsrModel::from_checkpoint(&Checkpoint::load(&asr)?)?;
            let lm = lm.map(NgramLm::load).transpose()?;
            let mut items = Vec::new();
            for r in &m.records {
                items.push(ScoredItem { utt_id: r.utt_id.clone(), source_speaker: r.speaker_id.clone(), condition: Condition::Input, audio: m.audio_path(r), reference: r.tokens() });
                if let (Some(dir), Some(t)) = (&converted_dir, &target) {
                    let id = format!("{}_to_{t}", r.utt_id);
                    items.push(ScoredItem { audio: dir.join(format!("{id}.wav")), utt_id: id, source_speaker: r.speaker_id.clone(), condition: Condition::Converted, reference: r.tokens() });
                }
            }
            let report = intelligibility_report(&items, &model, &dcfg, lm.as_ref())?;
            write_report(out.as_deref(), &report.to_text(), &report)
        }
        EvalCmd::Similarity { spkemb, manifest, source, target, converted_dir, out } => {
            let m = read_manifest(&manifest)?;
            let model = SpkembModel::from_checkpoint(&Checkpoint::load(&spkemb)?)?;
            let audio = |spk: &str| -> Result<Vec<_>> { m.records.iter().filter(|r| r.speaker_id == spk).map(|r| Ok(m.load_audio(r)?)).collect() };
            let mut converted = Vec::new();
            for r in m.records.iter().filter(|r| r.speaker_id == source) {
                let p = converted_dir.join(format!("{}_to_{target}.wav", r.utt_id));
                if p.is_file() {
                    converted.push(read_wav(&p)?);
                }
            }
            if converted.is_empty() {
                return Err(usage(format!("no converted {source} -> {target} files in {}", converted_dir.display())));
            }
            let report = conversion_similarity(&converted, &audio(&target)?, &audio(&source)?, &model)?;
            write_report(out.as_deref(), &report.to_text(), &report)
        }
        EvalCmd::Aggregate { ratings, scale, out } => {
            let scale: RatingScale = scale.parse()?;
            let scores = aggregate_ratings(&RatingsTable::read(&ratings, scale)?);
            write_report(out.as_deref(), &ratings_text(&scores), &scores)
        }
    }
}

fn print_rate(reference: &str, hyp: &str, unit: Unit) -> Result<()> {
    let rate = cer_wer(reference, hyp, unit)?;
    let a = edit_distance(&units(reference, unit), &units(hyp, unit));
    println!("{rate:.2}% (S={} D={} I={} N={})", a.substitutions, a.deletions, a.insertions, a.ref_len);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(if cli.verbose { "info" } else { "warn" }).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
