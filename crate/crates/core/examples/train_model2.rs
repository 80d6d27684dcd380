//! Trains the quantizing generator on a two-colour toy set and scores it.
//!
//! cargo run --release --example train_model2 -- [epochs] [seed]

use std::time::Instant;

use t2ci::dataset::{generate_toy_dataset, toy_word_vectors};
use t2ci::evaluation::{evaluate_generator, EvalConfig};
use t2ci::models::{ModelVariant, Profile};
use t2ci::training::{model_manifest, run_training, TrainConfig, TrainingSet};

fn main() -> t2ci::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = TrainConfig::tiny(ModelVariant::V2);
    if let Some(e) = args.next() {
        config.epochs = e.parse().expect("epochs");
    }
    if let Some(s) = args.next() {
        config.seed = s.parse().expect("seed");
    }
    let dataset = generate_toy_dataset(64, 2, config.seed, 16)?;
    let table = toy_word_vectors(config.seed);
    let data = TrainingSet::from_rgb(&dataset, &table)?;

    let start = Instant::now();
    let run = run_training(&data, &config, None, None)?;
    for m in run.log.iter().step_by((config.epochs / 10).max(1)) {
        println!("epoch {:4}  d_loss {:.4}  g_loss {:.4}", m.epoch, m.d_loss, m.g_loss);
    }
    println!("trained {} epochs in {:.1}s", run.log.len(), start.elapsed().as_secs_f64());

    let manifest = model_manifest(&run, &data, &config);
    let eval = EvalConfig {
        seed: config.seed,
        ..EvalConfig::default()
    };
    let report = evaluate_generator(&run.model.generator, &manifest, &dataset, None, &table, &eval)?;
    print!("{}", report.to_kv());
    assert_eq!(manifest.profile, Profile::Tiny);
    Ok(())
}
