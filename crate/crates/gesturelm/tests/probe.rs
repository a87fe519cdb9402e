//! Temporary timing/accuracy probe (not part of the acceptance gate).

use gesturelm::data::generate_synthetic;
use gesturelm::infill::{
    prepare_pipeline, run_experiment, split_by_counts, synth_config_for_task, ExperimentConfig,
    Variant,
};
use std::time::Instant;

#[test]
#[ignore]
fn probe_central_claim_single_task() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let synth = synth_config_for_task("stance", 7, 2600, 1.0).unwrap();
    let (mut manifest, _) = generate_synthetic(&synth, dir.path()).unwrap();
    split_by_counts(&mut manifest, (2000, 200, 400), 3).unwrap();
    manifest.save(&dir.path().join("manifest.jsonl")).unwrap();
    println!("synth+split: {:.1}s", t0.elapsed().as_secs_f64());

    let mut cfg = ExperimentConfig::desk_scale("stance", Variant::Gesture);
    cfg.seeds = vec![1];
    let t1 = Instant::now();
    let pipeline = prepare_pipeline(dir.path(), &cfg).unwrap();
    println!("prepare (tokenizer+align): {:.1}s", t1.elapsed().as_secs_f64());
    println!(
        "examples: {} train / {} val / {} test, labels {}",
        pipeline.train.len(),
        pipeline.val.len(),
        pipeline.test.len(),
        pipeline.labels.len()
    );

    let t2 = Instant::now();
    let outcome = run_experiment(&pipeline, &cfg, None).unwrap();
    println!("gesture finetune+eval 1 seed: {:.1}s", t2.elapsed().as_secs_f64());
    println!("gesture acc: {:?}", outcome.aggregate.accuracy_per_seed);
    println!("gesture log: {:?}", outcome.logs[0].epochs);

    let mut tcfg = ExperimentConfig::desk_scale("stance", Variant::TextOnly);
    tcfg.seeds = vec![1];
    let t3 = Instant::now();
    let tp = prepare_pipeline(dir.path(), &tcfg).unwrap();
    let toutcome = run_experiment(&tp, &tcfg, None).unwrap();
    println!("text-only prepare+1 seed: {:.1}s", t3.elapsed().as_secs_f64());
    println!("text acc: {:?}", toutcome.aggregate.accuracy_per_seed);
}
