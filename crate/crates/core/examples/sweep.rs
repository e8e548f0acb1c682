//! A small regularization-weight sweep: accuracy on released samples
//! against the audited privacy loss.

use nvdp::embedding_io::{generate_synthetic, SyntheticConfig};
use nvdp::network::TrainConfig;
use nvdp::pipeline::{sweep, sweep_csv, SweepSpec};

fn main() -> nvdp::Result<()> {
    let data = |n, seed| generate_synthetic(&SyntheticConfig { n_examples: n, n_range: (6, 6), seed, ..Default::default() });
    let (train_set, val_set) = (data(200, 3)?, data(100, 4)?);
    let spec = SweepSpec {
        lambda_d: vec![1e-3, 1e-1, 1.0],
        lambda_g: vec![1e-3, 1e-1, 1.0],
        tied: true,
        seeds: vec![0, 1],
        train: TrainConfig { epochs: 40, ..Default::default() },
        ..Default::default()
    };
    let result = sweep(&train_set, &val_set, &spec, |cell| {
        if let Err(f) = cell {
            eprintln!("cell failed: {}", f.error);
        }
    })?;
    print!("{}", sweep_csv(&result.rows));
    Ok(())
}
