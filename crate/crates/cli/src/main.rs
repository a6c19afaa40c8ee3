//! `convtts` command line: toy corpus generation, training, synthesis,
//! throughput benchmarking and attention / speaker diagnostics.
//!
//! Every artifact lands under `--out-dir` with a fixed file name. Config
//! keys can be overridden with `CONVTTS_<KEY>` environment variables.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use convtts::diagnostics::{
    attention_diagnostics, challenge_set, pca_csv, read_sentence_slot, speaker_embeddings, speaker_pca,
    ErrorThresholds,
};
use convtts::dsp::{write_wav, ToyCorpus, ToySpec};
use convtts::infer::{bench_sweep, stream_sweep, synthesize, write_bench_csv, InferenceModel, SynthesisOptions};
use convtts::model::{load_checkpoint, CorpusStats, Model, ModelConfig, Precision};
use convtts::textfront::{encode_characters, normalize_text, SymbolSequence, SymbolTable};
use convtts::train::{Dataset, MetricsLog, Trainer};

const ENV_PREFIX: &str = "CONVTTS";

#[derive(Debug, Parser)]
#[command(name = "convtts", version, about = "Convolutional attention text-to-speech")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML file of config overrides applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Tiny,
    Desk,
    Single,
    Vctk,
    Librispeech,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a synthetic toy corpus (manifest, audio, alignments).
    Corpus {
        #[arg(long, default_value_t = 200)]
        utterances: usize,
        /// Defaults to the config's speaker count.
        #[arg(long)]
        speakers: Option<usize>,
    },
    /// Trains on a toy corpus; writes metrics.csv and checkpoint.ckpt.
    Train {
        /// Directory written by `corpus`; a fresh toy corpus is generated
        /// from the seed when absent.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Synthesizes one utterance: out.wav, mel.csv, attention_layer{l}.csv
    /// and diagnostics.txt.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long, default_value_t = 0)]
        speaker: usize,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        constraint: Switch,
    },
    /// Throughput sweep over 1, 2, 4, … streams; writes bench.csv.
    Bench {
        /// A fresh model built from the config is used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        streams: usize,
        /// Wall time per sweep point.
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        constraint: Switch,
    },
    /// Attention error proxies over a sentence list; writes diagnostics.csv.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sentence file, one per line, `#` comments. The generated
        /// challenge set is used when absent.
        #[arg(long)]
        sentences: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        speaker: usize,
        #[arg(long, value_enum, default_value_t = Switch::On)]
        constraint: Switch,
    },
    /// Speaker-embedding principal components; writes pca.csv.
    Pca {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    fs::create_dir_all(&common.out_dir).with_context(|| format!("creating {}", common.out_dir.display()))?;
    match &cli.command {
        Command::Corpus { utterances, speakers } => {
            let cfg = config(common)?;
            let spec = toy_spec(&cfg, *utterances, speakers.unwrap_or(cfg.speakers));
            let corpus = ToyCorpus::generate(&spec, common.seed)?;
            let manifest = corpus.write(&common.out_dir)?;
            println!("wrote {} utterances to {}", corpus.utterances.len(), manifest.display());
        }
        Command::Train {
            corpus,
            steps,
            checkpoint,
        } => train(common, corpus.as_deref(), *steps, checkpoint.as_deref())?,
        Command::Synth {
            checkpoint,
            text,
            speaker,
            constraint,
        } => {
            let model = load_model(checkpoint)?;
            match model.config.precision {
                Precision::F32 => synth::<f32>(common, &model, text, *speaker, *constraint)?,
                Precision::F64 => synth::<f64>(common, &model, text, *speaker, *constraint)?,
            }
        }
        Command::Bench {
            checkpoint,
            streams,
            seconds,
            constraint,
        } => {
            let model = match checkpoint {
                Some(p) => load_model(p)?,
                None => fresh_model(common)?,
            };
            match model.config.precision {
                Precision::F32 => bench::<f32>(common, &model, *streams, *seconds, *constraint)?,
                Precision::F64 => bench::<f64>(common, &model, *streams, *seconds, *constraint)?,
            }
        }
        Command::Diagnose {
            checkpoint,
            sentences,
            count,
            speaker,
            constraint,
        } => {
            let model = load_model(checkpoint)?;
            let list: Vec<(String, String)> = match sentences {
                Some(p) => read_sentence_slot(p)?
                    .into_iter()
                    .map(|s| ("slot".to_string(), s))
                    .collect(),
                None => challenge_set(*count, common.seed)
                    .into_iter()
                    .map(|(k, s)| (format!("{k:?}").to_lowercase(), s))
                    .collect(),
            };
            if list.is_empty() {
                bail!("no sentences to diagnose");
            }
            match model.config.precision {
                Precision::F32 => diagnose::<f32>(common, &model, &list, *speaker, *constraint)?,
                Precision::F64 => diagnose::<f64>(common, &model, &list, *speaker, *constraint)?,
            }
        }
        Command::Pca { checkpoint } => {
            let model = load_model(checkpoint)?;
            let table = speaker_embeddings(&model).context("model has no speaker embeddings")?;
            let pca = speaker_pca(&table)?;
            let path = common.out_dir.join("pca.csv");
            fs::write(&path, pca_csv(&pca)).with_context(|| format!("writing {}", path.display()))?;
            println!(
                "explained variance {:.4} {:.4} of {:.4}",
                pca.variances[0], pca.variances[1], pca.total_variance
            );
        }
    }
    Ok(())
}

fn config(common: &Common) -> Result<ModelConfig> {
    let base = match common.preset {
        Preset::Tiny => ModelConfig::tiny(),
        Preset::Desk => ModelConfig::desk(),
        Preset::Single => ModelConfig::single_speaker(),
        Preset::Vctk => ModelConfig::vctk(),
        Preset::Librispeech => ModelConfig::librispeech(),
    };
    let cfg = match &common.config {
        Some(p) => ModelConfig::load(p, &base)?,
        None => base,
    };
    Ok(cfg.with_env_overrides(ENV_PREFIX, std::env::vars())?)
}

/// Checkpoints carry their own config; only environment variables apply
/// on top of it.
fn load_model(path: &Path) -> Result<Model> {
    let (mut model, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let cfg = model.config.with_env_overrides(ENV_PREFIX, std::env::vars())?;
    if cfg != model.config {
        let probe = Model::new(cfg.clone(), model.vocab.clone(), model.stats.clone(), 0)?;
        if probe.store.num_coordinates() != model.store.num_coordinates() {
            bail!("environment overrides change the network shape of {}", path.display());
        }
        model.config = cfg;
    }
    Ok(model)
}

fn toy_spec(cfg: &ModelConfig, utterances: usize, speakers: usize) -> ToySpec {
    ToySpec {
        utterances,
        speakers: speakers.max(1),
        sample_rate: cfg.sample_rate,
        hop: cfg.window_shift[1],
        envelope_bands: cfg.envelope_bands,
        aperiodicity_bands: cfg.aperiodicity_bands,
        ..ToySpec::default()
    }
}

fn toy_vocab() -> SymbolTable {
    SymbolTable::with_characters(&ToySpec::default().alphabet)
}

fn fresh_model(common: &Common) -> Result<Model> {
    let cfg = config(common)?;
    let spec = toy_spec(&cfg, 1, cfg.speakers);
    let ratio = spec.frames_per_symbol() as f64 / cfg.reduction as f64;
    let stats = CorpusStats::identity(cfg.mel_bands, cfg.spectro().bins(), ratio);
    Ok(Model::new(cfg, toy_vocab(), stats, common.seed)?)
}

fn train(common: &Common, corpus: Option<&Path>, steps: u64, checkpoint: Option<&Path>) -> Result<()> {
    let out = common.out_dir.join("checkpoint.ckpt");
    let metrics_path = common.out_dir.join("metrics.csv");
    let mut trainer = match checkpoint {
        Some(p) => {
            let (model, _) = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            let data = dataset(common, &model.config, corpus)?;
            Trainer::resume(p, data)?
        }
        None => {
            let cfg = config(common)?;
            let data = dataset(common, &cfg, corpus)?;
            let model = Model::new(cfg, toy_vocab(), data.stats.clone(), common.seed)?;
            Trainer::new(model, data, common.seed)?
        }
    };
    let mut log = MetricsLog::open(&metrics_path)?;
    let reports = trainer.run(steps, Some(&mut log), Some(&out))?;
    if let Some(last) = reports.last() {
        println!("step {} loss {:.5} mel {:.5}", last.step, last.loss.total, last.loss.mel);
    }
    println!("checkpoint {}", out.display());
    Ok(())
}

fn dataset(common: &Common, cfg: &ModelConfig, corpus: Option<&Path>) -> Result<Dataset> {
    let corpus = match corpus {
        Some(dir) => ToyCorpus::load(dir).with_context(|| format!("loading corpus {}", dir.display()))?,
        None => ToyCorpus::generate(&toy_spec(cfg, 200, cfg.speakers), common.seed)?,
    };
    Ok(Dataset::from_toy(&corpus, cfg, &toy_vocab())?)
}

fn encode(model: &Model, text: &str, speaker: usize) -> Result<SymbolSequence> {
    let normalized = normalize_text(text)?;
    let seq = encode_characters(&normalized, &model.vocab)
        .with_context(|| format!("encoding {text:?}"))?
        .with_speaker(speaker);
    Ok(seq)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn synth<T: Float>(common: &Common, model: &Model, text: &str, speaker: usize, constraint: Switch) -> Result<()> {
    let seq = encode(model, text, speaker)?;
    let engine = InferenceModel::<T>::new(model);
    let opts = SynthesisOptions::from_model(model, constraint == Switch::On);
    let out = synthesize(model, &engine, &seq, &opts)?;
    let dir = &common.out_dir;
    let mut report = String::new();
    for (l, rec) in out.records.iter().enumerate() {
        write(dir.join(format!("attention_layer{l}.csv")), rec.to_csv())?;
        let r = attention_diagnostics(rec, None, model.config.reduction, &ErrorThresholds::default())?;
        report.push_str(&format!("layer {l}: {r}\n"));
    }
    report.push_str(&format!("steps {} truncated {}\n", out.steps, out.truncated));
    write(dir.join("diagnostics.txt"), &report)?;
    write(dir.join("mel.csv"), matrix_csv(out.mel.data(), out.mel.cols()))?;
    match &out.wave {
        Some(w) => {
            write_wav(dir.join("out.wav"), w)?;
            println!("wrote {:.2} s of audio", w.seconds());
        }
        None => println!("no audio: the model has no linear head or the output is too short"),
    }
    print!("{report}");
    Ok(())
}

fn matrix_csv(data: &[f64], cols: usize) -> String {
    let mut s = String::new();
    for row in data.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

fn bench<T: Float + Send + Sync>(
    common: &Common,
    model: &Model,
    streams: usize,
    seconds: f64,
    constraint: Switch,
) -> Result<()> {
    if !(seconds.is_finite() && seconds >= 0.0) {
        bail!("--seconds must be a non-negative number, got {seconds}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let alphabet = ToySpec::default().alphabet;
    let utterances = (0..8)
        .map(|_| {
            let len = rng.random_range(4..=10);
            let text: String = (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect();
            encode(model, &format!("{text}."), 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let engine = InferenceModel::<T>::new(model);
    let opts = SynthesisOptions::from_model(model, constraint == Switch::On);
    let rows = bench_sweep(
        model,
        &engine,
        &utterances,
        &opts,
        streams,
        Duration::from_secs_f64(seconds),
    )?;
    debug_assert_eq!(rows.len(), stream_sweep(streams).len());
    write_bench_csv(common.out_dir.join("bench.csv"), &rows)?;
    for r in &rows {
        println!("streams {} qps {:.3} p50 {:.1} ms", r.streams, r.qps, r.p50_ms);
    }
    Ok(())
}

fn diagnose<T: Float>(
    common: &Common,
    model: &Model,
    sentences: &[(String, String)],
    speaker: usize,
    constraint: Switch,
) -> Result<()> {
    let engine = InferenceModel::<T>::new(model);
    let opts = SynthesisOptions {
        vocoder: false,
        ..SynthesisOptions::from_model(model, constraint == Switch::On)
    };
    let mut csv = String::from("index,kind,layer,steps,regressions,stalls,jumps,truncated\n");
    let (mut regressions, mut stalls, mut jumps) = (0, 0, 0);
    for (i, (kind, text)) in sentences.iter().enumerate() {
        let seq = encode(model, text, speaker)?;
        let out = synthesize(model, &engine, &seq, &opts)?;
        for (l, rec) in out.records.iter().enumerate() {
            let r = attention_diagnostics(rec, None, model.config.reduction, &ErrorThresholds::default())?;
            csv.push_str(&format!(
                "{i},{kind},{l},{},{},{},{},{}\n",
                r.steps, r.regressions, r.stalls, r.jumps, out.truncated
            ));
            regressions += r.regressions;
            stalls += r.stalls;
            jumps += r.jumps;
        }
    }
    write(common.out_dir.join("diagnostics.csv"), csv)?;
    println!(
        "{} sentences: regressions(repeat proxy) {regressions} stalls(repeat proxy) {stalls} jumps(skip proxy) {jumps}",
        sentences.len()
    );
    Ok(())
}
