//! Trains the coefficient-domain generator on a compressed toy set and
//! scores it in both the coefficient and pixel domains.
//!
//! cargo run --release --example train_model1 -- [epochs] [seed]

use t2ci::coeffs::CoefficientMask;
use t2ci::dataset::{generate_toy_dataset, prepare_compressed_dataset, toy_word_vectors};
use t2ci::evaluation::{evaluate_generator, EvalConfig};
use t2ci::models::ModelVariant;
use t2ci::training::{model_manifest, run_training, TrainConfig, TrainingSet};

fn main() -> t2ci::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut config = TrainConfig::tiny(ModelVariant::V1);
    config.epochs = args.next().map_or(40, |e| e.parse().expect("epochs"));
    if let Some(s) = args.next() {
        config.seed = s.parse().expect("seed");
    }
    let rgb = generate_toy_dataset(64, 2, config.seed, 16)?;
    let dct = prepare_compressed_dataset(&rgb, config.quality, CoefficientMask::default())?;
    let table = toy_word_vectors(config.seed);
    let data = TrainingSet::from_dct(&dct, &table)?;

    let run = run_training(&data, &config, None, None)?;
    for m in run.log.iter().step_by((config.epochs / 10).max(1)) {
        println!("epoch {:4}  d_loss {:.4}  g_loss {:.4}", m.epoch, m.d_loss, m.g_loss);
    }
    let manifest = model_manifest(&run, &data, &config);
    let eval = EvalConfig {
        seed: config.seed,
        ..EvalConfig::default()
    };
    let report = evaluate_generator(&run.model.generator, &manifest, &rgb, Some(&dct), &table, &eval)?;
    print!("{}", report.to_kv());
    Ok(())
}
