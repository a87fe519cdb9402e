//! End-to-end experiment orchestration: corpus to per-seed reports.
//!
//! A [`Pipeline`] holds everything shared across seeds for one corpus and
//! model variant (vocabulary, filtered label set, tokenized gestures, trained
//! alignment stage, built examples). [`run_experiment`] then fine-tunes and
//! evaluates once per seed and aggregates mean ± std over the seed runs.

use super::eval::{aggregate, Aggregate, EvalReport};
use super::finetune::{evaluate_model, finetune, FinetuneConfig, FinetuneLog};
use super::labels::LabelSet;
use super::model::{AdversarialMode, GesturePath, InfillModel, Variant};
use super::task::{build_infill_example, find_markers, frequency_filter, InfillExample};
use crate::align::{
    build_pair, train_alignment, whole_word, AlignConfig, AlignLog, AlignModel, TimedTranscript,
};
use crate::data::{load_corpus, CorpusManifest, LoadReport, ManifestEntry, Split, Utterance};
use crate::motion::{MotionSequence, Skeleton};
use crate::textlm::{pretrain_mlm, LmBackbone, LmConfig, PositionalScheme, PretrainConfig, Vocab};
use crate::tokenizer::{
    grid_tokenize, project_wrist_2d, tokenize, train_tokenizer, Codebook, GestureTokenSeq,
    GridSpec, TokenizerConfig, VqVae,
};
use crate::{Error, Result};
use candle_core::DType;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One experiment = one corpus + one variant + several fine-tuning seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: String,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub tokenizer: TokenizerConfig,
    pub align: AlignConfig,
    /// `vocab_size` and the positional scheme are overwritten per pipeline.
    pub lm: LmConfig,
    /// Masked-LM pretraining of the backbone on the corpus text; zero
    /// epochs leaves the backbone at its random initialization.
    #[serde(default)]
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    /// Extra eval-time corruptions applied after clean evaluation.
    pub adversarial_evals: Vec<AdversarialMode>,
    pub adversarial_seed: u64,
    /// Markers kept only when their training-split count is strictly above
    /// this threshold.
    pub frequency_threshold: usize,
    pub grid: GridSpec,
}

impl ExperimentConfig {
    /// Small CPU-friendly configuration used by the synthetic experiments.
    pub fn desk_scale(task: &str, variant: Variant) -> Self {
        Self {
            task: task.to_string(),
            variant,
            seeds: vec![1, 2, 3, 4, 5],
            tokenizer: TokenizerConfig {
                codebook_size: 64,
                embed_dim: 32,
                chunks: 4,
                window: 32,
                layers: 1,
                heads: 2,
                lr: 3e-5,
                epochs: 3,
                batch_size: 64,
                ..TokenizerConfig::default()
            },
            align: AlignConfig {
                projector_hidden: 64,
                epochs: 3,
                batch_size: 32,
                patience: 2,
                ..AlignConfig::default()
            },
            lm: LmConfig {
                vocab_size: 0,
                hidden: 64,
                layers: 2,
                heads: 4,
                max_position: 128,
                positional: PositionalScheme::Relative,
                seed: 17,
            },
            pretrain: PretrainConfig { epochs: 8, ..PretrainConfig::default() },
            finetune: FinetuneConfig {
                lora: crate::textlm::LoraConfig {
                    rank: 16,
                    alpha: 32.0,
                    ..crate::textlm::LoraConfig::default()
                },
                epochs: 8,
                patience: 2,
                ..FinetuneConfig::default()
            },
            adversarial_evals: Vec::new(),
            adversarial_seed: 0xadf0,
            frequency_threshold: 30,
            grid: GridSpec::default_normalized(),
        }
    }
}

/// Gesture-side artifacts shared across seeds.
pub enum GestureArtifacts {
    /// Text-only: no gesture files were read.
    None,
    /// Frozen codebook rows through the (trained or random) projector.
    Projected { align: AlignModel, codebook: Codebook, align_log: Option<AlignLog> },
    /// From-scratch embedding table of `n_ids` gesture ids.
    Scratch { n_ids: usize },
}

pub struct Pipeline {
    pub variant: Variant,
    pub labels: LabelSet,
    pub label_ids: Vec<u32>,
    pub vocab: Vocab,
    pub lm_config: LmConfig,
    /// Shared (optionally pretrained) backbone; per-seed models clone it
    /// and inject their own adapters, so the frozen weights are shared.
    pub backbone: LmBackbone,
    pub gesture: GestureArtifacts,
    pub train: Vec<InfillExample>,
    pub val: Vec<InfillExample>,
    pub test: Vec<InfillExample>,
    pub load_report: LoadReport,
}

/// The outcome of one multi-seed experiment.
#[derive(Serialize)]
pub struct ExperimentOutcome {
    pub variant: Variant,
    pub reports: Vec<EvalReport>,
    pub aggregate: Aggregate,
    /// Per corruption mode: per-seed reports and their aggregate.
    pub adversarial: Vec<(AdversarialMode, Vec<EvalReport>, Aggregate)>,
    #[serde(skip)]
    pub logs: Vec<FinetuneLog>,
}

/// Loaded utterance content; motion present only when the variant reads it.
struct Loaded {
    entry: ManifestEntry,
    transcript: TimedTranscript,
    motion: Option<MotionSequence>,
}

fn load_for_variant(
    manifest: &CorpusManifest,
    variant: Variant,
    tolerance: f64,
) -> Result<(Vec<Loaded>, LoadReport)> {
    if variant.uses_gestures() {
        let (utts, report) = load_corpus(manifest, tolerance);
        let loaded = utts
            .into_iter()
            .map(|Utterance { entry, motion, transcript }| Loaded {
                entry,
                transcript,
                motion: Some(motion),
            })
            .collect();
        Ok((loaded, report))
    } else {
        // Text-only pipelines never open a motion file.
        let mut report = LoadReport::default();
        let mut out = Vec::new();
        for entry in &manifest.entries {
            match crate::align::load_transcripts(&entry.transcript)
                .and_then(|ts| {
                    ts.into_iter().find(|t| t.id == entry.id).ok_or_else(|| {
                        Error::Data(format!("transcript file has no utterance {:?}", entry.id))
                    })
                }) {
                Ok(transcript) => {
                    report.loaded += 1;
                    out.push(Loaded { entry: entry.clone(), transcript, motion: None });
                }
                Err(e) => {
                    report.skipped += 1;
                    report.reasons.push(format!("{}: {e}", entry.id));
                }
            }
        }
        Ok((out, report))
    }
}

fn default_skeleton() -> Skeleton {
    Skeleton::default_upper_body()
}

/// Tokenize every utterance's motion with the trained VQ-VAE, padding the
/// tail to a whole window first.
fn vq_tokenize_all(
    model: &VqVae,
    loaded: &[Loaded],
) -> Result<Vec<GestureTokenSeq>> {
    loaded
        .iter()
        .map(|l| {
            let motion = l.motion.as_ref().expect("gesture variant has motion");
            let padded = motion.pad_to_multiple(model.config.window)?;
            tokenize(model, &padded)
        })
        .collect()
}

/// Grid-cell token stream for one utterance, wrapped in begin/end markers
/// placed past the cell-id range.
fn grid_tokenize_one(
    motion: &MotionSequence,
    skeleton: &Skeleton,
    grid: &GridSpec,
    span_len: usize,
) -> Result<GestureTokenSeq> {
    let wrist = motion.n_joints - 1;
    let padded = motion.pad_to_multiple(span_len)?;
    let points = project_wrist_2d(&padded, skeleton, wrist)?;
    let cells = grid_tokenize(&points, grid, span_len)?;
    let n_cells = grid.n_cells() as u32;
    let mut ids = vec![n_cells];
    let mut spans: Vec<Option<(usize, usize)>> = vec![None];
    for (i, c) in cells.into_iter().enumerate() {
        ids.push(c);
        spans.push(Some((i * span_len, (i + 1) * span_len)));
    }
    ids.push(n_cells + 1);
    spans.push(None);
    Ok(GestureTokenSeq { ids, spans })
}

/// Where the gesture-side artifacts come from: train them now, or load
/// previously saved checkpoints.
#[derive(Debug, Clone, Default)]
pub struct PipelineSources {
    /// Saved VQ-VAE checkpoint; trained fresh on the training split when
    /// absent.
    pub tokenizer_ckpt: Option<std::path::PathBuf>,
    /// Saved alignment checkpoint; trained fresh when absent (ignored by
    /// variants that do not use the projector).
    pub align_ckpt: Option<std::path::PathBuf>,
    /// Saved pretrained-backbone checkpoint; pretrained fresh when absent.
    pub backbone_ckpt: Option<std::path::PathBuf>,
}

/// Build everything shared across seeds for one corpus directory.
///
/// The manifest must already carry train/val/test split assignments.
pub fn prepare_pipeline(corpus_dir: &Path, config: &ExperimentConfig) -> Result<Pipeline> {
    prepare_pipeline_with(corpus_dir, config, &PipelineSources::default())
}

/// [`prepare_pipeline`] with explicit checkpoint sources.
pub fn prepare_pipeline_with(
    corpus_dir: &Path,
    config: &ExperimentConfig,
    sources: &PipelineSources,
) -> Result<Pipeline> {
    let manifest = CorpusManifest::load(&corpus_dir.join("manifest.jsonl"))?;
    let variant = config.variant;
    let tolerance = config.tokenizer.window as f64 / config.tokenizer.fps;
    let (loaded, load_report) = load_for_variant(&manifest, variant, tolerance)?;
    if loaded.is_empty() {
        return Err(Error::Data("corpus loaded no usable utterances".into()));
    }
    let fps = loaded
        .iter()
        .filter_map(|l| l.motion.as_ref().map(|m| m.fps))
        .next()
        .unwrap_or(config.tokenizer.fps);

    // Vocabulary over the whole corpus plus the markers as single entries.
    let mut vocab = Vocab::from_words(
        loaded.iter().flat_map(|l| l.transcript.word_strings()),
    );
    let full_labels = LabelSet::builtin(&config.task)?;
    full_labels.register(&mut vocab);

    // Retain only markers frequent enough in the training split.
    let mut counts = vec![0usize; full_labels.len()];
    for l in loaded.iter().filter(|l| l.entry.split == Split::Train) {
        for occ in find_markers(&l.transcript.word_strings(), &full_labels) {
            counts[occ.label] += 1;
        }
    }
    let labels = frequency_filter(&full_labels, &counts, config.frequency_threshold)?;
    let label_ids = labels.ids(&vocab)?;

    let mut lm_config = config.lm.clone();
    lm_config.vocab_size = vocab.size();
    lm_config.positional = match variant {
        Variant::GestureAbsPos => PositionalScheme::LearnedAbsolute,
        _ => PositionalScheme::Relative,
    };

    // Backbone: loaded, or built once and masked-LM pretrained on the
    // corpus text. All later stages treat it as frozen.
    let backbone = if let Some(ckpt) = &sources.backbone_ckpt {
        let b = LmBackbone::load(ckpt, DType::F64)?;
        if b.config != lm_config {
            return Err(Error::Config(format!(
                "backbone checkpoint config {:?} does not match the pipeline's {:?}",
                b.config, lm_config
            )));
        }
        b
    } else {
        let b = LmBackbone::new(lm_config.clone(), DType::F64);
        if config.pretrain.epochs > 0 {
            let mut train_seqs = Vec::new();
            let mut val_seqs = Vec::new();
            for l in &loaded {
                let dest = match l.entry.split {
                    Split::Train => &mut train_seqs,
                    Split::Val => &mut val_seqs,
                    Split::Test => continue,
                };
                let mut ids = vec![Vocab::BOS_ID];
                ids.extend(vocab.encode(&l.transcript.word_strings())?);
                ids.push(Vocab::EOS_ID);
                dest.push(ids);
            }
            pretrain_mlm(&b, &train_seqs, &val_seqs, &config.pretrain)?;
        }
        b
    };

    // Gesture tokenization and, where applicable, alignment training.
    let skeleton = default_skeleton();
    let (gesture, token_seqs): (GestureArtifacts, Option<Vec<GestureTokenSeq>>) = match variant {
        Variant::TextOnly => (GestureArtifacts::None, None),
        Variant::GridTokens => {
            let span = config.tokenizer.frames_per_token();
            let seqs = loaded
                .iter()
                .map(|l| {
                    grid_tokenize_one(
                        l.motion.as_ref().expect("grid variant has motion"),
                        &skeleton,
                        &config.grid,
                        span,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            (GestureArtifacts::Scratch { n_ids: config.grid.n_cells() + 2 }, Some(seqs))
        }
        _ => {
            let vq = if let Some(ckpt) = &sources.tokenizer_ckpt {
                VqVae::load(ckpt, DType::F64)?.0
            } else {
                let mut tok_cfg = config.tokenizer.clone();
                tok_cfg.fps = fps;
                let mut windows = Vec::new();
                for l in loaded.iter().filter(|l| l.entry.split == Split::Train) {
                    let padded = l
                        .motion
                        .as_ref()
                        .expect("gesture variant has motion")
                        .pad_to_multiple(tok_cfg.window)?;
                    for w in 0..padded.n_frames / tok_cfg.window {
                        windows
                            .push(padded.window(w * tok_cfg.window, (w + 1) * tok_cfg.window)?);
                    }
                }
                train_tokenizer(&windows, &tok_cfg, &skeleton, DType::F64)?.0
            };
            let seqs = vq_tokenize_all(&vq, &loaded)?;
            let artifacts = match variant {
                Variant::CodebookIndices => {
                    GestureArtifacts::Scratch { n_ids: vq.codebook.size() + 2 }
                }
                Variant::GestureNoFa => {
                    // Same architecture, untrained projector.
                    let align = AlignModel::new(
                        config.align.clone(),
                        vq.codebook.size(),
                        vq.codebook.dim(),
                        lm_config.hidden,
                        DType::F64,
                    );
                    GestureArtifacts::Projected {
                        align,
                        codebook: vq.codebook.clone(),
                        align_log: None,
                    }
                }
                _ if sources.align_ckpt.is_some() => {
                    let align =
                        AlignModel::load(sources.align_ckpt.as_ref().unwrap(), DType::F64)?;
                    if align.codebook_size() != vq.codebook.size()
                        || align.codebook_dim() != vq.codebook.dim()
                    {
                        return Err(Error::Config(format!(
                            "alignment checkpoint fits a {}x{} codebook, tokenizer has {}x{}",
                            align.codebook_size(),
                            align.codebook_dim(),
                            vq.codebook.size(),
                            vq.codebook.dim()
                        )));
                    }
                    GestureArtifacts::Projected {
                        align,
                        codebook: vq.codebook.clone(),
                        align_log: None,
                    }
                }
                _ => {
                    let mut train_pairs = Vec::new();
                    let mut val_pairs = Vec::new();
                    for (l, seq) in loaded.iter().zip(&seqs) {
                        let dest = match l.entry.split {
                            Split::Train => &mut train_pairs,
                            Split::Val => &mut val_pairs,
                            Split::Test => continue,
                        };
                        dest.push(build_pair(&l.transcript, seq, fps, &vocab, &whole_word)?);
                    }
                    let (align, align_log) = train_alignment(
                        &train_pairs,
                        &val_pairs,
                        &backbone,
                        &vq.codebook,
                        config.align.clone(),
                        DType::F64,
                    )?;
                    GestureArtifacts::Projected {
                        align,
                        codebook: vq.codebook.clone(),
                        align_log: Some(align_log),
                    }
                }
            };
            (artifacts, Some(seqs))
        }
    };

    // Infilling examples per split.
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (i, l) in loaded.iter().enumerate() {
        let gestures = token_seqs.as_ref().map(|seqs| (&seqs[i], fps));
        for occ in find_markers(&l.transcript.word_strings(), &labels) {
            let ex = build_infill_example(
                &l.transcript,
                occ,
                &labels,
                &vocab,
                gestures,
                &whole_word,
            )?;
            match l.entry.split {
                Split::Train => train.push(ex),
                Split::Val => val.push(ex),
                Split::Test => test.push(ex),
            }
        }
    }
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Data(format!(
            "marker occurrences per split: {} train / {} val / {} test; all must be non-empty",
            train.len(),
            val.len(),
            test.len()
        )));
    }

    Ok(Pipeline {
        variant,
        labels,
        label_ids,
        vocab,
        lm_config,
        backbone,
        gesture,
        train,
        val,
        test,
        load_report,
    })
}

fn model_for_seed(pipeline: &Pipeline, config: &ExperimentConfig, seed: u64) -> Result<InfillModel> {
    // Clones share the frozen backbone tensors; adapters are per seed.
    let mut lm = pipeline.backbone.clone();
    lm.inject_lora(&config.finetune.lora, seed)?;
    let path = match &pipeline.gesture {
        GestureArtifacts::None => GesturePath::None,
        GestureArtifacts::Projected { align, codebook, .. } => {
            GesturePath::Projected { align: align.clone(), codebook: codebook.clone() }
        }
        GestureArtifacts::Scratch { n_ids } => {
            InfillModel::scratch_path(*n_ids, pipeline.lm_config.hidden, seed)
        }
    };
    Ok(InfillModel::new(lm, path, pipeline.label_ids.clone()))
}

/// Fine-tune and evaluate once per seed; aggregate mean ± sample std.
///
/// Any adversarial evaluations in the config reuse each seed's fine-tuned
/// model with only its gesture inputs corrupted at test time. When `out_dir`
/// is given, every per-seed and aggregate report is persisted there.
pub fn run_experiment(
    pipeline: &Pipeline,
    config: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    if config.seeds.is_empty() {
        return Err(Error::Config("experiment needs at least one seed".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let tag = pipeline.variant.tag();
    let mut reports = Vec::new();
    let mut logs = Vec::new();
    let mut adversarial: Vec<(AdversarialMode, Vec<EvalReport>, Aggregate)> = config
        .adversarial_evals
        .iter()
        .map(|&m| (m, Vec::new(), Aggregate {
            seeds: vec![],
            accuracy_per_seed: vec![],
            f1_per_seed: vec![],
            accuracy_mean: 0.0,
            accuracy_std: 0.0,
            f1_mean: 0.0,
            f1_std: 0.0,
        }))
        .collect();
    for &seed in &config.seeds {
        let with_seed = |e: Error| Error::Data(format!("seed {seed} run failed: {e}"));
        let mut model = model_for_seed(pipeline, config, seed).map_err(with_seed)?;
        let mut ft = config.finetune.clone();
        ft.seed = seed;
        let log = finetune(&mut model, &pipeline.labels, &pipeline.train, &pipeline.val, &ft)
            .map_err(with_seed)?;
        let report =
            evaluate_model(&model, &pipeline.labels, &pipeline.test, ft.batch_size)
                .map_err(with_seed)?;
        if let Some(dir) = out_dir {
            report.save(&dir.join(format!("{tag}_seed{seed}.json")))?;
        }
        for (mode, mode_reports, _) in adversarial.iter_mut() {
            model
                .set_adversarial(*mode, config.adversarial_seed ^ seed)
                .map_err(with_seed)?;
            let r = evaluate_model(&model, &pipeline.labels, &pipeline.test, ft.batch_size)
                .map_err(with_seed)?;
            if let Some(dir) = out_dir {
                r.save(&dir.join(format!("{tag}_{}_seed{seed}.json", mode_tag(*mode))))?;
            }
            mode_reports.push(r);
        }
        if !adversarial.is_empty() {
            model.set_adversarial(AdversarialMode::None, 0).map_err(with_seed)?;
        }
        reports.push(report);
        logs.push(log);
    }
    let agg = aggregate(&config.seeds, &reports)?;
    for (mode, mode_reports, mode_agg) in adversarial.iter_mut() {
        *mode_agg = aggregate(&config.seeds, mode_reports)?;
        if let Some(dir) = out_dir {
            std::fs::write(
                dir.join(format!("{tag}_{}_aggregate.json", mode_tag(*mode))),
                serde_json::to_string_pretty(mode_agg)?,
            )?;
        }
    }
    if let Some(dir) = out_dir {
        std::fs::write(
            dir.join(format!("{tag}_aggregate.json")),
            serde_json::to_string_pretty(&agg)?,
        )?;
    }
    Ok(ExperimentOutcome { variant: pipeline.variant, reports, aggregate: agg, adversarial, logs })
}

fn mode_tag(mode: AdversarialMode) -> &'static str {
    match mode {
        AdversarialMode::None => "none",
        AdversarialMode::RandomNormal => "random_normal",
        AdversarialMode::PositionalOnly => "positional_only",
    }
}

/// Synthetic-corpus configuration for one of the built-in tasks: its marker
/// inventory plus the ambiguous sentence templates.
pub fn synth_config_for_task(
    task: &str,
    seed: u64,
    utterances: usize,
    p_cue: f64,
) -> Result<crate::data::SynthConfig> {
    let labels = LabelSet::builtin(task)?;
    Ok(crate::data::SynthConfig {
        seed,
        task: task.to_string(),
        markers: labels.markers,
        templates: crate::data::default_templates(task),
        utterances,
        p_cue,
        ..crate::data::SynthConfig::default()
    })
}

/// Rewrite split assignments so the three splits hold exactly the requested
/// utterance counts (speaker-stratified, seed-deterministic).
pub fn split_by_counts(
    manifest: &mut CorpusManifest,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<()> {
    let total = manifest.entries.len();
    let (a, b, c) = counts;
    if a + b + c != total {
        return Err(Error::InvalidInput(format!(
            "split counts {counts:?} do not sum to the {total} manifest entries"
        )));
    }
    let t = total as f64;
    crate::data::split_corpus(manifest, (a as f64 / t, b as f64 / t, c as f64 / t), seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn tiny_config(task: &str, variant: Variant) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk_scale(task, variant);
        cfg.seeds = vec![1, 2];
        cfg.frequency_threshold = 0;
        cfg.tokenizer.codebook_size = 16;
        cfg.tokenizer.embed_dim = 16;
        cfg.tokenizer.epochs = 1;
        cfg.align.epochs = 1;
        cfg.lm.hidden = 32;
        cfg.lm.layers = 1;
        cfg.lm.heads = 2;
        cfg.finetune.epochs = 1;
        cfg
    }

    fn tiny_corpus(dir: &Path, task: &str, p_cue: f64, utterances: usize) -> CorpusManifest {
        let mut synth = synth_config_for_task(task, 11, utterances, p_cue).unwrap();
        synth.speakers = 2;
        let (mut manifest, _) = generate_synthetic(&synth, dir).unwrap();
        let n = manifest.entries.len();
        split_by_counts(&mut manifest, (n - 8, 4, 4), 5).unwrap();
        manifest.save(&dir.join("manifest.jsonl")).unwrap();
        manifest
    }

    #[test]
    fn text_only_pipeline_runs_without_motion_files() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = tiny_corpus(dir.path(), "stance", 1.0, 24);
        // Delete every motion file: the text-only pipeline must not notice.
        for e in &manifest.entries {
            std::fs::remove_file(&e.motion).unwrap();
        }
        let cfg = tiny_config("stance", Variant::TextOnly);
        let pipeline = prepare_pipeline(dir.path(), &cfg).unwrap();
        assert!(matches!(pipeline.gesture, GestureArtifacts::None));
        assert!(pipeline.train.iter().all(|e| !e.has_gestures()));
        let outcome = run_experiment(&pipeline, &cfg, None).unwrap();
        assert_eq!(outcome.reports.len(), 2);
        assert!(outcome.aggregate.accuracy_mean >= 0.0);
    }

    #[test]
    fn gesture_pipeline_builds_examples_with_token_streams() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path(), "stance", 1.0, 24);
        let cfg = tiny_config("stance", Variant::Gesture);
        let pipeline = prepare_pipeline(dir.path(), &cfg).unwrap();
        assert!(matches!(pipeline.gesture, GestureArtifacts::Projected { align_log: Some(_), .. }));
        assert!(pipeline.train.iter().all(|e| e.has_gestures()));
        assert_eq!(pipeline.test.len(), 4);
    }

    #[test]
    fn seed_reruns_reproduce_the_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path(), "quantifier", 1.0, 24);
        let cfg = tiny_config("quantifier", Variant::CodebookIndices);
        let pipeline = prepare_pipeline(dir.path(), &cfg).unwrap();
        let a = run_experiment(&pipeline, &cfg, None).unwrap();
        let b = run_experiment(&pipeline, &cfg, None).unwrap();
        assert_eq!(a.aggregate.accuracy_per_seed, b.aggregate.accuracy_per_seed);
        assert_eq!(a.aggregate.f1_per_seed, b.aggregate.f1_per_seed);
    }

    #[test]
    fn adversarial_evaluations_are_emitted_per_mode() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path(), "stance", 1.0, 24);
        let mut cfg = tiny_config("stance", Variant::GestureNoFa);
        cfg.adversarial_evals =
            vec![AdversarialMode::RandomNormal, AdversarialMode::PositionalOnly];
        let out = tempfile::tempdir().unwrap();
        let pipeline = prepare_pipeline(dir.path(), &cfg).unwrap();
        let outcome = run_experiment(&pipeline, &cfg, Some(out.path())).unwrap();
        assert_eq!(outcome.adversarial.len(), 2);
        for (_, reports, agg) in &outcome.adversarial {
            assert_eq!(reports.len(), 2);
            assert_eq!(agg.accuracy_per_seed.len(), 2);
        }
        assert!(out.path().join("gesture_no_fa_seed1.json").exists());
        assert!(out.path().join("gesture_no_fa_random_normal_seed2.json").exists());
        assert!(out.path().join("gesture_no_fa_aggregate.json").exists());
    }

    #[test]
    fn grid_variant_tokenizes_without_a_vqvae() {
        let dir = tempfile::tempdir().unwrap();
        tiny_corpus(dir.path(), "discourse", 1.0, 24);
        let cfg = tiny_config("discourse", Variant::GridTokens);
        let pipeline = prepare_pipeline(dir.path(), &cfg).unwrap();
        match pipeline.gesture {
            GestureArtifacts::Scratch { n_ids } => {
                assert_eq!(n_ids, cfg.grid.n_cells() + 2)
            }
            _ => panic!("grid variant must use a scratch table"),
        }
        let max_id = pipeline
            .train
            .iter()
            .flat_map(|e| e.gesture_ids.iter())
            .max()
            .copied()
            .unwrap();
        assert_eq!(max_id as usize, cfg.grid.n_cells() + 1);
    }

    #[test]
    fn bad_split_counts_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut manifest = tiny_corpus(dir.path(), "stance", 1.0, 24);
        assert!(split_by_counts(&mut manifest, (1, 1, 1), 0).is_err());
    }
}
