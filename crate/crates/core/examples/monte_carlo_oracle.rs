//! Checks a closed-form divergence against its Monte-Carlo estimate.

use nvdp::posterior::{build_posterior, PriorParams, TokenParams};
use nvdp::renyi::{rd_dp_monte_carlo, rd_dp_posteriors, RenyiOrder};
use nvdp::sampling::RngState;

fn main() -> nvdp::Result<()> {
    let prior = PriorParams::standard(3);
    let tok = |a: f64, m: f64| TokenParams { alpha: a, mu: vec![m; 3], sigma: vec![1.0; 3] };
    let q = build_posterior(&[tok(1.5, 0.2), tok(0.8, -0.3)], &prior)?;
    let qp = build_posterior(&[tok(1.2, 0.0), tok(1.0, 0.1)], &prior)?;
    let o = RenyiOrder::new(2.0)?;
    let closed = rd_dp_posteriors(&q, &qp, o)?.value;
    let mc = rd_dp_monte_carlo(&q, &qp, o, 1_000_000, &RngState::new(0, 0))?;
    println!("closed form {closed:.6}");
    println!("Monte-Carlo {:.6} ± {:.6} (99%, {} draws)", mc.estimate, mc.ci99, mc.draws);
    println!("inside interval: {}", mc.contains(closed));
    Ok(())
}
