//! Trains the bottleneck model on a separable synthetic task.

use nvdp::embedding_io::{generate_synthetic, SyntheticConfig};
use nvdp::network::{train, training_log_csv, LossWeights, ModelParams, TrainConfig, STREAM_INIT};
use nvdp::pipeline::examples_from_records;
use nvdp::posterior::PriorParams;
use nvdp::sampling::RngState;

fn main() -> nvdp::Result<()> {
    let records = generate_synthetic(&SyntheticConfig { n_examples: 300, seed: 1, ..Default::default() })?;
    let (examples, classes) = examples_from_records(&records)?;
    let (train_set, val_set) = examples.split_at(240);
    let initial = ModelParams::init(8, 2, classes, &mut RngState::new(1, STREAM_INIT))?;
    let config = TrainConfig { epochs: 20, seed: 1, ..Default::default() };
    let out = train(train_set, val_set, initial, &PriorParams::standard(8), &config, LossWeights::tied(0.01)?)?;
    print!("{}", training_log_csv(&out.log));
    println!("best epoch {}", out.best_epoch);
    Ok(())
}
