//! Acceptance suite: prints one PASS/FAIL line per criterion, then fails if
//! any criterion failed. Criteria 6 to 8 run the bundled `desk.spec` twice.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use cascade_vc::dsp::{istft, mel_filterbank, mel_from_power, resample, stft, FeatureConfig};
use cascade_vc::eval::{edit_distance, units, Unit};
use cascade_vc::nn::ctc::ctc_loss;
use cascade_vc::nn::graph::Graph;
use cascade_vc::nn::layers::Memory;
use cascade_vc::nn::{check_params, ctc_loss_var, seeded_rng, sequence_loss_var, Ctx, LossKind, Mat, ParamStore, StackMode, Target, TransformerConfig, TransformerStack, Var};
use cascade_vc::pipeline::{run_experiment, ExperimentReport, ExperimentSpec, RunOptions};
use cascade_vc::spkemb::{extract_speaker_embedding, SpkembModel, SpkembModelConfig};
use cascade_vc::synthcorpus::{generate_corpus, CorpusSpec, Speakers, TokenCount};
use cascade_vc::tts::{finetune_tts, pretrain_tts, TtsModel, TtsModelConfig, TtsTrainConfig};
use cascade_vc::vocoder::{default_resolutions, mr_stft_loss, vocode, Vocoder, VocoderModelConfig};
use cascade_vc::Waveform;
use rand::{Rng, SeedableRng};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat<f64> {
    Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn noise(seed: u64, len: usize) -> Vec<f32> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(-0.5f32..0.5)).collect()
}

fn snr_db(reference: &[f32], estimate: &[f32]) -> f64 {
    let sig: f64 = reference.iter().map(|&v| (v as f64).powi(2)).sum();
    let err: f64 = reference.iter().zip(estimate).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    10.0 * (sig / err.max(1e-300)).log10()
}

// ---- 1. gradient checks ----

fn project(g: &mut Graph<f64>, v: Var) -> Var {
    let (r, c) = g.shape(v);
    let w = g.constant(rand_mat(&mut rng(5), r, c));
    let p = g.mul(v, w);
    g.sum_all(p)
}

type Op = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

fn gradient_checks() -> Check {
    let t = Instant::now();
    let ops: Vec<(&str, Vec<(usize, usize)>, Op)> = vec![
        ("matmul", vec![(3, 4), (4, 2)], Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("matmul_t", vec![(4, 3), (2, 4)], Box::new(|g, v| g.matmul_t(v[0], true, v[1], true))),
        ("add", vec![(3, 4), (3, 4)], Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", vec![(3, 4), (3, 4)], Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", vec![(3, 4), (3, 4)], Box::new(|g, v| g.mul(v[0], v[1]))),
        ("add_row", vec![(3, 4), (1, 4)], Box::new(|g, v| g.add_row(v[0], v[1]))),
        ("mul_row", vec![(3, 4), (1, 4)], Box::new(|g, v| g.mul_row(v[0], v[1]))),
        ("add_col", vec![(3, 4), (3, 1)], Box::new(|g, v| g.add_col(v[0], v[1]))),
        ("concat", vec![(3, 4), (3, 2)], Box::new(|g, v| g.concat_cols(&[v[0], v[1]]))),
        ("concat_rows", vec![(3, 4), (2, 4)], Box::new(|g, v| g.concat_rows(&[v[0], v[1]]))),
        ("conv1d", vec![(3, 9), (2, 9)], Box::new(|g, v| g.conv1d(v[0], v[1], 3, 2, 2, 2))),
        ("scale", vec![(3, 4)], Box::new(|g, v| g.scale(v[0], -1.7))),
        ("relu", vec![(3, 4)], Box::new(|g, v| g.relu(v[0]))),
        ("leaky_relu", vec![(3, 4)], Box::new(|g, v| g.leaky_relu(v[0], 0.2))),
        ("tanh", vec![(3, 4)], Box::new(|g, v| g.tanh(v[0]))),
        ("sigmoid", vec![(3, 4)], Box::new(|g, v| g.sigmoid(v[0]))),
        ("softmax", vec![(3, 5)], Box::new(|g, v| g.softmax_rows(v[0]))),
        ("log_softmax", vec![(3, 5)], Box::new(|g, v| g.log_softmax_rows(v[0]))),
        ("layer_norm", vec![(3, 6)], Box::new(|g, v| g.layer_norm(v[0], 1e-5))),
        ("slice_rows", vec![(5, 3)], Box::new(|g, v| g.slice_rows(v[0], 1, 3))),
        ("slice_cols", vec![(3, 5)], Box::new(|g, v| g.slice_cols(v[0], 2, 2))),
        ("transpose", vec![(3, 5)], Box::new(|g, v| g.transpose(v[0]))),
        ("mean_rows", vec![(4, 3)], Box::new(|g, v| g.mean_rows(v[0]))),
        ("std_rows", vec![(5, 3)], Box::new(|g, v| g.std_rows(v[0]))),
        ("repeat_cols", vec![(2, 3)], Box::new(|g, v| g.repeat_cols(v[0], 4))),
        ("embed", vec![(5, 4)], Box::new(|g, v| g.embed(v[0], &[2, 0, 2, 4], false))),
        ("l1", vec![(4, 3)], Box::new(|g, v| sequence_loss_var(g, LossKind::L1, v[0], Target::Values(&rand_mat(&mut rng(1), 4, 3)), &[true, false, true, true], 1.0).unwrap())),
        (
            "bce",
            vec![(4, 3)],
            Box::new(|g, v| sequence_loss_var(g, LossKind::Bce, v[0], Target::Values(&rand_mat(&mut rng(2), 4, 3).map(|x| 0.5 + 0.5 * x)), &[true; 4], 2.5).unwrap()),
        ),
        ("cross_entropy", vec![(4, 5)], Box::new(|g, v| sequence_loss_var(g, LossKind::CrossEntropy, v[0], Target::Classes(&[1, 4, 0, 2]), &[true, true, false, true], 1.0).unwrap())),
        (
            "ctc",
            vec![(6, 4)],
            Box::new(|g, v| {
                let lp = g.log_softmax_rows(v[0]);
                ctc_loss_var(g, lp, &[1, 3, 3], 0).unwrap()
            }),
        ),
    ];
    let mut worst = (0.0f64, "");
    let mut n = 0;
    for (name, shapes, op) in &ops {
        let mut r = rng(11);
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes.iter().enumerate().map(|(i, &(a, b))| store.add(&format!("p{i}"), rand_mat(&mut r, a, b))).collect();
        let report = check_params(&mut store, 1e-5, |g, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(s, id)).collect();
            let y = op(g, &vars);
            project(g, y)
        });
        if report.max_rel_error > worst.0 {
            worst = (report.max_rel_error, name);
        }
        n += 1;
    }
    for mode in [StackMode::Encoder, StackMode::DecoderWithCrossAttention] {
        let cfg = TransformerConfig { layers: 2, heads: 2, d_model: 8, d_ff: 12, dropout: 0.0 };
        let mut r = seeded_rng(4);
        let mut store: ParamStore<f64> = ParamStore::new();
        let stack = TransformerStack::new(&mut store, "t", cfg, mode, &mut r).unwrap();
        let x = store.add("x", rand_mat(&mut r, 5, 8));
        let mem = store.add("mem", rand_mat(&mut r, 3, 8));
        let report = check_params(&mut store, 1e-5, |g, s| {
            let mut ctx = Ctx::eval(s);
            std::mem::swap(&mut ctx.g, g);
            let xv = ctx.p(x);
            let out = match mode {
                StackMode::Encoder => stack.forward(&mut ctx, xv, Some(&[true, true, true, false, true]), None).unwrap(),
                StackMode::DecoderWithCrossAttention => {
                    let m = ctx.p(mem);
                    stack.forward(&mut ctx, xv, None, Some(Memory { value: m, mask: Some(&[true, false, true]) })).unwrap()
                }
            };
            std::mem::swap(&mut ctx.g, g);
            project(g, out.out)
        });
        if report.max_rel_error > worst.0 {
            worst = (report.max_rel_error, "transformer");
        }
        n += 1;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(worst.0 < 1e-4 && secs < 120.0, format!("{n} checks, max relative error {:.2e} ({}), {secs:.1} s", worst.0, worst.1))
}

// ---- 2. CTC ----

fn brute_force_ctc(lp: &Mat<f64>, labels: &[usize]) -> f64 {
    let (t_len, classes) = lp.shape();
    let mut total = 0.0;
    for code in 0..classes.pow(t_len as u32) {
        let mut c = code;
        let path: Vec<usize> = (0..t_len)
            .map(|_| {
                let k = c % classes;
                c /= classes;
                k
            })
            .collect();
        let mut collapsed = Vec::new();
        let mut prev = None;
        for &p in &path {
            if Some(p) != prev && p != 0 {
                collapsed.push(p);
            }
            prev = Some(p);
        }
        if collapsed == labels {
            total += path.iter().enumerate().map(|(t, &k)| lp.at(t, k)).sum::<f64>().exp();
        }
    }
    total
}

fn ctc_oracle() -> Check {
    let mut r = rng(99);
    let (mut worst, mut cases) = (0.0f64, 0);
    for t_len in 1..=6 {
        for v in 1..=3usize {
            for u in 0..=3usize {
                for _ in 0..3 {
                    let labels: Vec<usize> = (0..u).map(|_| r.random_range(1..=v)).collect();
                    let mut lp = rand_mat(&mut r, t_len, v + 1).map(|x| 2.0 * x);
                    for row in 0..t_len {
                        let lse = lp.row(row).iter().map(|x| x.exp()).sum::<f64>().ln();
                        lp.row_mut(row).iter_mut().for_each(|x| *x -= lse);
                    }
                    let oracle = brute_force_ctc(&lp, &labels);
                    match ctc_loss(&lp, &labels, 0) {
                        Ok(out) => {
                            worst = worst.max((((-out.loss).exp() - oracle) / oracle).abs());
                            cases += 1;
                        }
                        Err(_) if oracle == 0.0 => {}
                        Err(e) => return Err(format!("rejected labels {labels:?} with legal alignments: {e}")),
                    }
                }
            }
        }
    }
    let half = 0.5f64.ln();
    let a = ctc_loss(&Mat::filled(1, 2, half), &[1], 0).unwrap().loss;
    let b = ctc_loss(&Mat::filled(2, 2, half), &[1], 0).unwrap().loss;
    let hand = (a - 2f64.ln()).abs().max((b + 0.75f64.ln()).abs());
    ensure(worst < 1e-10 && hand < 1e-9, format!("{cases} enumerated cases, max relative error {worst:.2e}; hand cases off by {hand:.1e}"))
}

// ---- 3. DSP ----

fn dsp_checks() -> Check {
    let cfg = FeatureConfig::default();
    let x = noise(4, 16000);
    let spec = stft(&Waveform::new(x.clone(), 16000), &cfg).map_err(|e| e.to_string())?;
    let y = istft(&spec, &cfg, Some(x.len())).map_err(|e| e.to_string())?;
    let stft_snr = snr_db(&x, &y.samples);

    let fb = mel_filterbank(&cfg);
    let mel = mel_from_power(&Mat::filled(2, cfg.n_bins(), 1.0), &cfg).map_err(|e| e.to_string())?;
    let flat = (0..cfg.n_mels).map(|m| (mel.values.at(0, m) as f64 - fb.row(m).iter().sum::<f64>().ln()).abs()).fold(0.0, f64::max);

    let w = Waveform::new(noise(6, 4000), 16000);
    let same = resample(&w, 16000).map_err(|e| e.to_string())?;
    let identity = same.samples == w.samples;

    let mut tones = vec![0.0f32; 16000];
    let mut r = rng(9);
    for _ in 0..20 {
        let (f, ph) = (r.random_range(50.0..6900.0), r.random_range(0.0..6.28));
        for (n, v) in tones.iter_mut().enumerate() {
            *v += (0.04 * (2.0 * std::f64::consts::PI * f * n as f64 / 16000.0 + ph).sin()) as f32;
        }
    }
    let up = resample(&Waveform::new(tones.clone(), 16000), 24000).map_err(|e| e.to_string())?;
    let back = resample(&up, 16000).map_err(|e| e.to_string())?;
    let rs_snr = snr_db(&tones[200..15800], &back.samples[200..15800]);
    ensure(
        stft_snr > 60.0 && flat < 1e-6 && identity && rs_snr > 40.0,
        format!("STFT round trip {stft_snr:.1} dB, flat-spectrum deviation {flat:.1e}, resample identity {identity}, 16k-24k-16k round trip {rs_snr:.1} dB"),
    )
}

// ---- 4. edit distance ----

fn memo_distance(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() || b.is_empty() {
        return a.len() + b.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let d = (memo_distance(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0])).min(memo_distance(&a[1..], b, memo) + 1).min(memo_distance(a, &b[1..], memo) + 1);
    memo.insert((a.len(), b.len()), d);
    d
}

fn edit_distance_checks() -> Check {
    let mut r = rng(17);
    let seq = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<u8> { (0..r.random_range(0..=8)).map(|_| r.random_range(0..4u8)).collect() };
    let mut mismatches = 0;
    let mut axiom_failures = 0;
    for _ in 0..1000 {
        let (a, b, c) = (seq(&mut r), seq(&mut r), seq(&mut r));
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y).distance();
        if d(&a, &b) != memo_distance(&a, &b, &mut HashMap::new()) {
            mismatches += 1;
        }
        let identity = d(&a, &a) == 0 && (d(&a, &b) == 0) == (a == b);
        if !identity || d(&a, &b) != d(&b, &a) || d(&a, &c) > d(&a, &b) + d(&b, &c) {
            axiom_failures += 1;
        }
    }
    let kitten = edit_distance(&units("kitten", Unit::Char), &units("sitting", Unit::Char)).distance();
    ensure(mismatches == 0 && axiom_failures == 0 && kitten == 3, format!("1000 pairs: {mismatches} oracle mismatches, {axiom_failures} axiom violations; kitten/sitting = {kitten}"))
}

// ---- 5. freeze invariance ----

fn freeze_invariance(dir: &Path) -> Check {
    let spec = CorpusSpec { speakers: Speakers::Count(2), utterances_per_speaker: 3, tokens_per_utterance: TokenCount::Range { min: 3, max: 6 }, seed: 5, base_duration_ms: 80.0, sample_rate: 16000 };
    let m = generate_corpus(&spec, dir).map_err(|e| e.to_string())?;
    let t = TransformerConfig { layers: 1, heads: 2, d_model: 16, d_ff: 32, dropout: 0.1 };
    let model = TtsModelConfig { encoder: t, decoder: t, prenet_dim: 16, postnet_channels: 8, postnet_layers: 2, ..TtsModelConfig::default() };
    let cfg = TtsTrainConfig { model, epochs: 1, finetune_epochs: 2, batch_size: 2, ..TtsTrainConfig::default() };
    let spk = SpkembModel::new(SpkembModelConfig::default(), 3).map_err(|e| e.to_string())?;
    let (pre, _) = pretrain_tts(&m, None, &spk, &cfg).map_err(|e| e.to_string())?;
    let table = |ck| TtsModel::from_checkpoint(ck).map(|m| m.embedding_table().data.clone()).map_err(|e| e.to_string());
    let before = table(&pre)?;
    let speaker = m.speakers()[0].clone();
    let target = m.for_speakers(std::slice::from_ref(&speaker));
    let emb = extract_speaker_embedding(&target, &speaker, &spk).map_err(|e| e.to_string())?;
    let (frozen, _) = finetune_tts(&pre, &target, &emb, &cfg).map_err(|e| e.to_string())?;
    let unchanged = table(&frozen)? == before;
    // One epoch over three utterances with batch 64 is exactly one update.
    let one_step = TtsTrainConfig { freeze_embedding: false, finetune_epochs: 1, batch_size: 64, ..cfg };
    let (free, _) = finetune_tts(&pre, &target, &emb, &one_step).map_err(|e| e.to_string())?;
    let moved = table(&free)?.iter().zip(&before).filter(|(a, b)| a != b).count();
    ensure(unchanged && moved > 0, format!("frozen table bit-identical: {unchanged}; unfrozen entries changed after one step: {moved}/{}", before.len()))
}

// ---- 6 to 8: desk experiment ----

fn desk_spec() -> ExperimentSpec {
    ExperimentSpec::read(concat!(env!("CARGO_MANIFEST_DIR"), "/../../desk.spec")).expect("desk.spec")
}

fn desk_run(out: &Path) -> Result<(ExperimentReport, f64), String> {
    let t = Instant::now();
    let r = run_experiment(&desk_spec(), &RunOptions { out_dir: out.to_path_buf(), skip_existing: false }).map_err(|e| e.to_string())?;
    Ok((r, t.elapsed().as_secs_f64()))
}

fn desk_criteria(r: &ExperimentReport, secs: f64) -> Check {
    let parts: Vec<String> = r.criteria.iter().map(|c| format!("{} {:.2} ({} {})", c.name, c.value, if c.pass { "ok" } else { "FAIL" }, c.threshold)).collect();
    let minutes = secs / 60.0;
    ensure(r.passed() && minutes < 30.0, format!("{}; {minutes:.1} min", parts.join("; ")))
}

fn vocoder_checks(r: &ExperimentReport) -> Check {
    let x = Waveform::new(noise(3, 8000), 16000);
    let self_loss = mr_stft_loss(&x, &x, &default_resolutions()).map_err(|e| e.to_string())?;
    let (first, last) = (r.vocoder_valid_first.unwrap_or(f64::NAN), r.vocoder_valid_last.unwrap_or(f64::NAN));
    let drop = 100.0 * (1.0 - last / first);
    let fc = FeatureConfig::default();
    let v16 = Vocoder::new(VocoderModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let v24 = Vocoder::new(VocoderModelConfig { output_rate: 24000, ..VocoderModelConfig::default() }, 0).map_err(|e| e.to_string())?;
    let mel = cascade_vc::dsp::MelSpectrogram { values: Mat::from_vec(37, 80, vec![-3.0; 37 * 80]), config_digest: fc.digest() };
    let (a, b) = (vocode(&mel, &v16).map_err(|e| e.to_string())?.len(), vocode(&mel, &v24).map_err(|e| e.to_string())?.len());
    ensure(
        self_loss == 0.0 && drop >= 50.0 && 2 * b == 3 * a,
        format!("mr_stft(x, x) = {self_loss}; validation mr_stft {first:.3} -> {last:.3} ({drop:.1}% drop); 24k/16k samples {b}/{a}"),
    )
}

fn determinism(a: &Path, b: &Path) -> Check {
    let mut same = Vec::new();
    for f in ["report.txt", "report.json"] {
        let (x, y) = (std::fs::read(a.join(f)).map_err(|e| e.to_string())?, std::fs::read(b.join(f)).map_err(|e| e.to_string())?);
        if x != y {
            return Err(format!("{f} differs between runs"));
        }
        same.push(format!("{f} {} bytes identical", x.len()));
    }
    Ok(same.join(", "))
}

fn guarded(f: impl FnOnce() -> Check) -> Check {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
    })
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u8, &str, Check)> = vec![
        (1, "gradient checks", guarded(gradient_checks)),
        (2, "CTC vs brute force", guarded(ctc_oracle)),
        (3, "DSP round trips", guarded(dsp_checks)),
        (4, "edit distance", guarded(edit_distance_checks)),
        (5, "freeze invariance", guarded(|| freeze_invariance(&tmp.path().join("freeze")))),
    ];
    let (run_a, run_b) = (tmp.path().join("desk_a"), tmp.path().join("desk_b"));
    match desk_run(&run_a) {
        Ok((report, secs)) => {
            println!("{}", report.to_text());
            results.push((6, "desk end-to-end", desk_criteria(&report, secs)));
            results.push((7, "vocoder", guarded(|| vocoder_checks(&report))));
            let second = desk_run(&run_b).map(|_| ());
            results.push((8, "determinism", second.and_then(|_| determinism(&run_a, &run_b))));
        }
        Err(e) => {
            for (n, name) in [(6, "desk end-to-end"), (7, "vocoder"), (8, "determinism")] {
                results.push((n, name, Err(format!("desk run failed: {e}"))));
            }
        }
    }
    let mut out = std::io::stdout().lock();
    for (n, name, r) in &results {
        let line = match r {
            Ok(d) => format!("criterion {n} ({name}): PASS  {d}\n"),
            Err(d) => format!("criterion {n} ({name}): FAIL  {d}\n"),
        };
        out.write_all(line.as_bytes()).unwrap();
    }
    out.flush().unwrap();
    drop(out);
    let failed: Vec<u8> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
