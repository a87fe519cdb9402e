//! Command-line entry point: synthetic corpus generation, tokenizer
//! training, alignment, fine-tuning, and evaluation.

use clap::{Args, Parser, Subcommand};
use gesturelm::align::{build_pair, masking_sweep, train_alignment, whole_word};
use gesturelm::config::RunConfig;
use gesturelm::data::{generate_synthetic, load_corpus, CorpusManifest, Split};
use gesturelm::infill::{
    prepare_pipeline_with, relative_confusion, run_experiment, split_by_counts,
    synth_config_for_task, AdversarialMode, EvalReport, ExperimentConfig, PipelineSources,
    Variant,
};
use gesturelm::motion::Skeleton;
use gesturelm::textlm::{pretrain_mlm, LmBackbone, Vocab};
use gesturelm::tokenizer::{tokenize, train_tokenizer, VqVae};
use gesturelm::{Error, Result};
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "gesturelm", about = "Gesture-aligned language modeling toolkit")]
struct Cli {
    /// TOML run configuration; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Task: discourse, quantifier, or stance.
    #[arg(long, global = true)]
    task: Option<String>,
    /// Corpus directory (overrides the config's `corpus_dir`).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Force single-threaded numeric paths.
    #[arg(long, global = true, default_value_t = false)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a deterministic synthetic corpus.
    Synth(SynthArgs),
    /// Gesture tokenizer stages.
    Tokenizer {
        #[command(subcommand)]
        cmd: TokenizerCmd,
    },
    /// Feature-alignment stages.
    Align {
        #[command(subcommand)]
        cmd: AlignCmd,
    },
    /// Fine-tune one model variant on marker infilling.
    Finetune(FinetuneArgs),
    /// Evaluate fine-tuned variants; optionally compare two report files.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of utterances.
    #[arg(long)]
    utterances: Option<usize>,
    /// Probability that an utterance carries its marker's motion cue.
    #[arg(long)]
    p_cue: Option<f64>,
    /// Exact train,val,test counts (e.g. 2000,200,400); default 80/10/10.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Subcommand)]
enum TokenizerCmd {
    /// Train the VQ-VAE on the corpus training split.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Tokenize every utterance with a trained checkpoint.
    Tokenize,
    /// Per-utterance reconstruction-error report.
    Reconstruct,
}

#[derive(Subcommand)]
enum AlignCmd {
    /// Train the projector/gesture-head alignment stage.
    Train,
    /// Validation loss across masking percentages.
    AblateMasking {
        /// Comma-separated masking percentages, e.g. 10,30,50,80.
        #[arg(long, default_value = "10,30,50,80")]
        pcts: String,
    },
}

#[derive(Args)]
struct FinetuneArgs {
    /// text_only, gesture, gesture_no_fa, gesture_abs_pos, grid_tokens, or
    /// codebook_indices.
    #[arg(long)]
    variant: String,
    /// Comma-separated fine-tuning seeds (default from config).
    #[arg(long)]
    seeds: Option<String>,
    /// Reuse checkpoints from the output directory instead of retraining
    /// upstream stages.
    #[arg(long, default_value_t = false)]
    from_checkpoints: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Variant to fine-tune and evaluate.
    #[arg(long)]
    variant: Option<String>,
    /// Eval-time gesture corruption: none, random_normal, positional_only.
    #[arg(long)]
    adversarial: Vec<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Two report JSON files to diff into a relative confusion matrix
    /// (CSV + SVG heatmap).
    #[arg(long, num_args = 2, value_names = ["REPORT_A", "REPORT_B"])]
    relative_cm: Option<Vec<PathBuf>>,
    #[arg(long, default_value_t = false)]
    from_checkpoints: bool,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(task) = &cli.task {
        cfg.task = task.clone();
    }
    if let Some(corpus) = &cli.corpus {
        cfg.corpus_dir = corpus.clone();
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn parse_counts(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidInput(format!("bad split counts {s:?}: {e}")))?;
    if parts.len() != 3 {
        return Err(Error::InvalidInput(format!("split needs 3 counts, got {s:?}")));
    }
    Ok((parts[0], parts[1], parts[2]))
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|e| Error::InvalidInput(format!("bad seed {p:?}: {e}")))
        })
        .collect()
}

/// Experiment configuration assembled from the run config.
fn experiment_config(cfg: &RunConfig, variant: Variant) -> ExperimentConfig {
    ExperimentConfig {
        task: cfg.task.clone(),
        variant,
        seeds: cfg.eval.seeds.clone(),
        tokenizer: cfg.tokenizer.clone(),
        align: cfg.align.clone(),
        lm: cfg.lm.clone(),
        pretrain: cfg.pretrain.clone(),
        finetune: cfg.finetune.clone(),
        adversarial_evals: Vec::new(),
        adversarial_seed: cfg.eval.adversarial_seed,
        frequency_threshold: cfg.eval.frequency_threshold,
        grid: cfg.grid,
    }
}

fn tokenizer_ckpt(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("tokenizer.ckpt")
}

fn align_ckpt(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("align.ckpt")
}

fn backbone_ckpt(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("backbone.ckpt")
}

/// Motion windows of the training split, padded to whole windows.
fn training_windows(
    cfg: &RunConfig,
    manifest: &CorpusManifest,
) -> Result<Vec<gesturelm::motion::MotionSequence>> {
    let tolerance = cfg.tokenizer.window as f64 / cfg.tokenizer.fps;
    let (utts, report) = load_corpus(manifest, tolerance);
    if utts.is_empty() {
        return Err(Error::Data(format!("no usable utterances: {:?}", report.reasons)));
    }
    let mut windows = Vec::new();
    for u in utts.iter().filter(|u| u.entry.split == Split::Train) {
        let padded = u.motion.pad_to_multiple(cfg.tokenizer.window)?;
        for w in 0..padded.n_frames / cfg.tokenizer.window {
            windows.push(padded.window(w * cfg.tokenizer.window, (w + 1) * cfg.tokenizer.window)?);
        }
    }
    Ok(windows)
}

fn load_manifest(cfg: &RunConfig) -> Result<CorpusManifest> {
    CorpusManifest::load(&cfg.corpus_dir.join("manifest.jsonl"))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::Synth(args) => cmd_synth(&mut cfg, args),
        Cmd::Tokenizer { cmd } => cmd_tokenizer(&mut cfg, cmd),
        Cmd::Align { cmd } => cmd_align(&cfg, cmd),
        Cmd::Finetune(args) => cmd_finetune(&cfg, args),
        Cmd::Eval(args) => cmd_eval(&cfg, args),
    }
}

fn cmd_synth(cfg: &mut RunConfig, args: &SynthArgs) -> Result<()> {
    let mut synth = if cfg.synth.markers.is_empty() {
        synth_config_for_task(&cfg.task, cfg.seed, cfg.synth.utterances, cfg.synth.p_cue)?
    } else {
        cfg.synth.clone()
    };
    synth.seed = cfg.seed;
    if let Some(n) = args.utterances {
        synth.utterances = n;
    }
    if let Some(p) = args.p_cue {
        synth.p_cue = p;
    }
    let (mut manifest, records) = generate_synthetic(&synth, &cfg.corpus_dir)?;
    match &args.split {
        Some(counts) => split_by_counts(&mut manifest, parse_counts(counts)?, cfg.seed)?,
        None => gesturelm::data::split_corpus(&mut manifest, (0.8, 0.1, 0.1), cfg.seed)?,
    }
    manifest.save(&cfg.corpus_dir.join("manifest.jsonl"))?;
    cfg.synth = synth;
    cfg.save_resolved(&cfg.corpus_dir)?;
    println!(
        "wrote {} utterances ({} records) to {}",
        manifest.entries.len(),
        records.len(),
        cfg.corpus_dir.display()
    );
    Ok(())
}

fn cmd_tokenizer(cfg: &mut RunConfig, cmd: &TokenizerCmd) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cmd {
        TokenizerCmd::Train { epochs, lr } => {
            if let Some(e) = epochs {
                cfg.tokenizer.epochs = *e;
            }
            if let Some(l) = lr {
                cfg.tokenizer.lr = *l;
            }
            let windows = training_windows(cfg, &manifest)?;
            let skeleton = Skeleton::default_upper_body();
            let (vq, log) =
                train_tokenizer(&windows, &cfg.tokenizer, &skeleton, candle_core::DType::F64)?;
            vq.save(&tokenizer_ckpt(cfg), cfg.tokenizer.epochs)?;
            let mut csv = String::from(
                "epoch,rec6d,rec_axis_angle,rec_joint_pos,rec_geodesic,codebook,velocity,acceleration,total\n",
            );
            for (i, e) in log.epochs.iter().enumerate() {
                csv.push_str(&format!(
                    "{i},{},{},{},{},{},{},{},{}\n",
                    e.rec6d,
                    e.rec_axis_angle,
                    e.rec_joint_pos,
                    e.rec_geodesic,
                    e.codebook,
                    e.velocity,
                    e.acceleration,
                    e.total
                ));
            }
            std::fs::write(cfg.out_dir.join("tokenizer_loss.csv"), csv)?;
            cfg.save_resolved(&cfg.out_dir)?;
            println!("tokenizer checkpoint: {}", tokenizer_ckpt(cfg).display());
        }
        TokenizerCmd::Tokenize => {
            let (vq, _) = VqVae::load(&tokenizer_ckpt(cfg), candle_core::DType::F64)?;
            let tolerance = vq.config.window as f64 / vq.config.fps;
            let (utts, _) = load_corpus(&manifest, tolerance);
            let mut out = String::new();
            for u in &utts {
                let padded = u.motion.pad_to_multiple(vq.config.window)?;
                let seq = tokenize(&vq, &padded)?;
                out.push_str(&serde_json::to_string(&serde_json::json!({
                    "id": u.entry.id,
                    "ids": seq.ids,
                    "spans": seq.spans,
                }))?);
                out.push('\n');
            }
            let path = cfg.out_dir.join("tokens.jsonl");
            std::fs::write(&path, out)?;
            println!("token streams: {}", path.display());
        }
        TokenizerCmd::Reconstruct => {
            let (vq, _) = VqVae::load(&tokenizer_ckpt(cfg), candle_core::DType::F64)?;
            let tolerance = vq.config.window as f64 / vq.config.fps;
            let (utts, _) = load_corpus(&manifest, tolerance);
            let mut csv = String::from("id,mse_6d\n");
            for u in &utts {
                let padded = u.motion.pad_to_multiple(vq.config.window)?;
                let mut err = 0.0;
                let mut n = 0usize;
                for w in 0..padded.n_frames / vq.config.window {
                    let window =
                        padded.window(w * vq.config.window, (w + 1) * vq.config.window)?;
                    let rec = vq.reconstruct(&window)?;
                    err += window
                        .data
                        .iter()
                        .zip(&rec.data)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    n += window.data.len();
                }
                csv.push_str(&format!("{},{}\n", u.entry.id, err / n as f64));
            }
            let path = cfg.out_dir.join("reconstruction_mse.csv");
            std::fs::write(&path, csv)?;
            println!("reconstruction report: {}", path.display());
        }
    }
    Ok(())
}

fn cmd_align(cfg: &RunConfig, cmd: &AlignCmd) -> Result<()> {
    let manifest = load_manifest(cfg)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let (vq, _) = VqVae::load(&tokenizer_ckpt(cfg), candle_core::DType::F64)?;
    let tolerance = vq.config.window as f64 / vq.config.fps;
    let (utts, _) = load_corpus(&manifest, tolerance);
    if utts.is_empty() {
        return Err(Error::Data("corpus loaded no usable utterances".into()));
    }
    let fps = utts[0].motion.fps;
    let mut vocab = Vocab::from_words(utts.iter().flat_map(|u| u.transcript.word_strings()));
    gesturelm::infill::LabelSet::builtin(&cfg.task)?.register(&mut vocab);
    let mut lm_config = cfg.lm.clone();
    lm_config.vocab_size = vocab.size();
    let lm = if backbone_ckpt(cfg).exists() {
        LmBackbone::load(&backbone_ckpt(cfg), candle_core::DType::F64)?
    } else {
        let b = LmBackbone::new(lm_config, candle_core::DType::F64);
        if cfg.pretrain.epochs > 0 {
            let mut train_seqs = Vec::new();
            let mut val_seqs = Vec::new();
            for u in &utts {
                let dest = match u.entry.split {
                    Split::Train => &mut train_seqs,
                    Split::Val => &mut val_seqs,
                    Split::Test => continue,
                };
                let mut ids = vec![Vocab::BOS_ID];
                ids.extend(vocab.encode(&u.transcript.word_strings())?);
                ids.push(Vocab::EOS_ID);
                dest.push(ids);
            }
            let log = pretrain_mlm(&b, &train_seqs, &val_seqs, &cfg.pretrain)?;
            println!(
                "backbone pretraining: best val CE {:.4} at epoch {}",
                log.best_val, log.best_epoch
            );
        }
        b.save(&backbone_ckpt(cfg))?;
        println!("backbone checkpoint: {}", backbone_ckpt(cfg).display());
        b
    };
    let mut train_pairs = Vec::new();
    let mut val_pairs = Vec::new();
    for u in &utts {
        let padded = u.motion.pad_to_multiple(vq.config.window)?;
        let seq = tokenize(&vq, &padded)?;
        let pair = build_pair(&u.transcript, &seq, fps, &vocab, &whole_word)?;
        match u.entry.split {
            Split::Train => train_pairs.push(pair),
            Split::Val => val_pairs.push(pair),
            Split::Test => {}
        }
    }
    match cmd {
        AlignCmd::Train => {
            let backbone_before = lm.store.snapshot();
            let (align, log) = train_alignment(
                &train_pairs,
                &val_pairs,
                &lm,
                &vq.codebook,
                cfg.align.clone(),
                candle_core::DType::F64,
            )?;
            assert!(
                lm.store.snapshot() == backbone_before,
                "backbone changed during alignment"
            );
            println!("frozen-backbone check passed: language model bitwise unchanged");
            align.save(&align_ckpt(cfg), lm.hidden())?;
            std::fs::write(
                cfg.out_dir.join("align_log.json"),
                serde_json::to_string_pretty(&log)?,
            )?;
            cfg.save_resolved(&cfg.out_dir)?;
            println!(
                "alignment checkpoint: {} (best val loss {:.4} at epoch {})",
                align_ckpt(cfg).display(),
                log.best_val,
                log.best_epoch
            );
        }
        AlignCmd::AblateMasking { pcts } => {
            let pcts: Vec<u32> = pcts
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<u32>()
                        .map_err(|e| Error::InvalidInput(format!("bad percentage {p:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            let rows = masking_sweep(
                &pcts,
                &train_pairs,
                &val_pairs,
                &lm,
                &vq.codebook,
                &cfg.align,
                candle_core::DType::F64,
            )?;
            let mut csv = String::from("masking_pct,val_loss\n");
            println!("masking %  validation loss");
            for (p, v) in &rows {
                csv.push_str(&format!("{p},{v}\n"));
                println!("{p:>9}  {v:.4}");
            }
            let path = cfg.out_dir.join("masking_sweep.csv");
            std::fs::write(&path, csv)?;
            println!("sweep table: {}", path.display());
        }
    }
    Ok(())
}

fn sources_for(cfg: &RunConfig, variant: Variant, from_checkpoints: bool) -> Result<PipelineSources> {
    if !from_checkpoints {
        return Ok(PipelineSources::default());
    }
    // The saved backbone only fits variants with the relative positional
    // scheme; the absolute-position ablation repretrains its own.
    let backbone = match variant {
        Variant::GestureAbsPos => None,
        _ => Some(backbone_ckpt(cfg)).filter(|p| p.exists()),
    };
    if !variant.uses_gestures() {
        return Ok(PipelineSources { backbone_ckpt: backbone, ..PipelineSources::default() });
    }
    let tok = tokenizer_ckpt(cfg);
    if !tok.exists() {
        return Err(Error::Data(format!("missing tokenizer checkpoint {}", tok.display())));
    }
    let align = match variant {
        Variant::Gesture => {
            let p = align_ckpt(cfg);
            if !p.exists() {
                return Err(Error::Data(format!("missing alignment checkpoint {}", p.display())));
            }
            Some(p)
        }
        _ => None,
    };
    Ok(PipelineSources { tokenizer_ckpt: Some(tok), align_ckpt: align, backbone_ckpt: backbone })
}

fn run_variant(
    cfg: &RunConfig,
    variant: Variant,
    seeds: Option<&str>,
    adversarial: &[String],
    from_checkpoints: bool,
) -> Result<()> {
    let mut exp = experiment_config(cfg, variant);
    if let Some(s) = seeds {
        exp.seeds = parse_seeds(s)?;
    }
    exp.adversarial_evals = adversarial
        .iter()
        .filter(|m| m.as_str() != "none")
        .map(|m| AdversarialMode::from_str(m))
        .collect::<Result<_>>()?;
    let sources = sources_for(cfg, variant, from_checkpoints)?;
    let pipeline = prepare_pipeline_with(&cfg.corpus_dir, &exp, &sources)?;
    if pipeline.load_report.skipped > 0 {
        eprintln!(
            "warning: skipped {} utterances: {:?}",
            pipeline.load_report.skipped, pipeline.load_report.reasons
        );
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    cfg.save_resolved(&cfg.out_dir)?;
    let outcome = run_experiment(&pipeline, &exp, Some(&cfg.out_dir))?;
    println!(
        "{}: accuracy {:.2} ± {:.2} %, macro F1 {:.4} ± {:.4} over seeds {:?}",
        variant.tag(),
        outcome.aggregate.accuracy_mean,
        outcome.aggregate.accuracy_std,
        outcome.aggregate.f1_mean,
        outcome.aggregate.f1_std,
        exp.seeds
    );
    for (mode, _, agg) in &outcome.adversarial {
        println!(
            "{} + {:?}: accuracy {:.2} ± {:.2} %, macro F1 {:.4} ± {:.4}",
            variant.tag(),
            mode,
            agg.accuracy_mean,
            agg.accuracy_std,
            agg.f1_mean,
            agg.f1_std
        );
    }
    Ok(())
}

fn cmd_finetune(cfg: &RunConfig, args: &FinetuneArgs) -> Result<()> {
    let variant = Variant::from_str(&args.variant)?;
    run_variant(cfg, variant, args.seeds.as_deref(), &[], args.from_checkpoints)
}

fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<()> {
    if let Some(paths) = &args.relative_cm {
        let a = EvalReport::load(&paths[0])?;
        let b = EvalReport::load(&paths[1])?;
        let rel = relative_confusion(&a, &b)?;
        std::fs::create_dir_all(&cfg.out_dir)?;
        let csv = cfg.out_dir.join("relative_confusion.csv");
        let svg = cfg.out_dir.join("relative_confusion.svg");
        rel.save(&csv, &svg)?;
        println!("relative confusion matrix: {} and {}", csv.display(), svg.display());
        return Ok(());
    }
    let variant = Variant::from_str(args.variant.as_deref().unwrap_or("gesture"))?;
    let adversarial: Vec<String> = if args.adversarial.is_empty() {
        cfg.eval.adversarial.clone()
    } else {
        args.adversarial.clone()
    };
    run_variant(cfg, variant, args.seeds.as_deref(), &adversarial, args.from_checkpoints)
}
