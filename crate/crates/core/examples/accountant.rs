//! Turns a pairwise divergence matrix into a Bayesian privacy guarantee.

use nvdp::accountant::{bdp_epsilon, bdp_optimize, default_lambda_grid, PairwiseRDMatrix, PrivacyReport};
use nvdp::renyi::RenyiOrder;

fn main() -> nvdp::Result<()> {
    let l = RenyiOrder::new(2.0)?;
    println!("row {{0, 1}} at λ = 2, δ = 0.01: ε = {:.4}", bdp_epsilon(&[0.0, 1.0], l, 1e-2)?);

    // divergences that grow like (λ/2)·|i − j|² / 10
    let matrix = |l: RenyiOrder| {
        let m = 4;
        let values = (0..m * m)
            .map(|k| l.value() / 2.0 * ((k / m) as f64 - (k % m) as f64).powi(2) / 10.0)
            .collect();
        PairwiseRDMatrix::from_dense(m, values, l)
    };
    let fixed = PrivacyReport::from_matrix(&matrix(RenyiOrder::new(1.1)?)?, 1e-5, "toy", 0.0)?;
    println!("{}", nvdp::accountant::CSV_HEADER);
    println!("{}", fixed.csv_row());
    let best = bdp_optimize(matrix, &default_lambda_grid(), 1e-5, "toy", 0.0)?;
    println!("best order {} gives ε_μ = {:.4}", best.lambda.value(), best.epsilon_mu);
    Ok(())
}
