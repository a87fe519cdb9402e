//! Temporary probe: masking-sweep loss decomposition.

use candle_core::DType;
use gesturelm::align::{
    build_pair, mask_tokens, train_alignment, whole_word, AlignConfig,
};
use gesturelm::data::{generate_synthetic, load_corpus, split_corpus, Split};
use gesturelm::infill::synth_config_for_task;
use gesturelm::motion::{MotionSequence, Skeleton};
use gesturelm::textlm::{pretrain_mlm, LmBackbone, LmConfig, PositionalScheme, PretrainConfig, Vocab};
use gesturelm::tokenizer::{tokenize, train_tokenizer, TokenizerConfig};
use gesturelm::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn masking_decomposition() -> Result<()> {
    let mut utts = Vec::new();
    let mut dirs = Vec::new();
    for (i, task) in ["discourse", "quantifier", "stance"].iter().enumerate() {
        let dir = tempfile::tempdir()?;
        let mut synth = synth_config_for_task(task, 11 + i as u64, 80, 1.0)?;
        synth.speakers = 3;
        let (mut manifest, _) = generate_synthetic(&synth, dir.path())?;
        split_corpus(&mut manifest, (0.8, 0.1, 0.1), 5)?;
        manifest.save(&dir.path().join("manifest.jsonl"))?;
        let (task_utts, _) = load_corpus(&manifest, 3.0);
        utts.extend(task_utts);
        dirs.push(dir);
    }
    let fps = utts[0].motion.fps;
    let tok_cfg = TokenizerConfig {
        codebook_size: 16,
        embed_dim: 16,
        chunks: 4,
        window: 32,
        layers: 1,
        heads: 2,
        lr: 3e-5,
        epochs: 1,
        batch_size: 32,
        ..TokenizerConfig::default()
    };
    let skeleton = Skeleton::default_upper_body();
    let mut windows: Vec<MotionSequence> = Vec::new();
    for u in utts.iter().filter(|u| u.entry.split == Split::Train) {
        let padded = u.motion.pad_to_multiple(32)?;
        for w in 0..padded.n_frames / 32 {
            windows.push(padded.window(w * 32, (w + 1) * 32)?);
        }
    }
    let (vq, _) = train_tokenizer(&windows, &tok_cfg, &skeleton, DType::F64)?;
    let vocab = Vocab::from_words(utts.iter().flat_map(|u| u.transcript.word_strings()));
    let lm = LmBackbone::new(
        LmConfig {
            vocab_size: vocab.size(),
            hidden: 64,
            layers: 2,
            heads: 4,
            max_position: 128,
            positional: PositionalScheme::Relative,
            seed: 5,
        },
        DType::F64,
    );
    let encode = |u: &gesturelm::data::Utterance| -> Result<Vec<u32>> {
        let mut ids = vec![Vocab::BOS_ID];
        ids.extend(vocab.encode(&u.transcript.word_strings())?);
        ids.push(Vocab::EOS_ID);
        Ok(ids)
    };
    let pre_train: Vec<Vec<u32>> =
        utts.iter().filter(|u| u.entry.split == Split::Train).map(encode).collect::<Result<_>>()?;
    let pre_val: Vec<Vec<u32>> =
        utts.iter().filter(|u| u.entry.split == Split::Val).map(encode).collect::<Result<_>>()?;
    let plog =
        pretrain_mlm(&lm, &pre_train, &pre_val, &PretrainConfig { epochs: 8, ..Default::default() })?;
    println!("pretrain epochs: {:?}", plog.epochs);
    let mut train_pairs = Vec::new();
    let mut val_pairs = Vec::new();
    for u in &utts {
        let seq = tokenize(&vq, &u.motion.pad_to_multiple(32)?)?;
        let pair = build_pair(&u.transcript, &seq, fps, &vocab, &whole_word)?;
        match u.entry.split {
            Split::Train => train_pairs.push(pair),
            Split::Val => val_pairs.push(pair),
            Split::Test => {}
        }
    }
    println!("train {} val {} vocab {}", train_pairs.len(), val_pairs.len(), vocab.size());
    for pct in [30u32, 80u32] {
        let p = pct as f64 / 100.0;
        let cfg = AlignConfig {
            projector_hidden: 32,
            mask_text: p,
            mask_gesture: p,
            epochs: 30,
            batch_size: 16,
            patience: 30,
            ..AlignConfig::default()
        };
        let (model, log) = train_alignment(&train_pairs, &val_pairs, &lm, &vq.codebook, cfg.clone(), DType::F64)?;
        // Decompose validation loss at this masking rate.
        let gmask = vq.codebook.gmask_id();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0a11);
        let masked: Vec<_> = val_pairs
            .iter()
            .map(|pr| mask_tokens(pr, p, p, gmask, &mut rng))
            .collect::<Result<_>>()?;
        let mut mlm = 0.0;
        let mut mgp = 0.0;
        let mut n = 0usize;
        for chunk in masked.chunks(16) {
            let refs: Vec<_> = chunk.iter().collect();
            let l = model.loss(&lm, &vq.codebook, &refs)?;
            mlm += l.mlm;
            mgp += l.mgp;
            n += 1;
        }
        println!(
            "pct {pct}: best_val {:.4} (epoch {}), mlm {:.4} mgp {:.4}, first epochs {:?}",
            log.best_val,
            log.best_epoch,
            mlm / n as f64,
            mgp / n as f64,
            &log.epochs[..log.epochs.len().min(5)]
        );
        // Same trained model, evaluated across masking rates.
        for eval_p in [0.1, 0.3, 0.6, 0.9] {
            let mut rng2 = ChaCha8Rng::seed_from_u64(99);
            let m2: Vec<_> = val_pairs
                .iter()
                .map(|pr| mask_tokens(pr, eval_p, eval_p, gmask, &mut rng2))
                .collect::<Result<_>>()?;
            let mut mlm2 = 0.0;
            let mut mgp2 = 0.0;
            let mut n2 = 0usize;
            for chunk in m2.chunks(16) {
                let refs: Vec<_> = chunk.iter().collect();
                let l = model.loss(&lm, &vq.codebook, &refs)?;
                mlm2 += l.mlm;
                mgp2 += l.mgp;
                n2 += 1;
            }
            println!(
                "  eval at {eval_p}: mlm {:.4} mgp {:.4}",
                mlm2 / n2 as f64,
                mgp2 / n2 as f64
            );
        }
    }
    Ok(())
}
