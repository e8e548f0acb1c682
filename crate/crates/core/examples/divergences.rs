//! Closed-form Rényi divergences between two DP posteriors and for the
//! Gaussian baselines.

use nvdp::posterior::{build_posterior, PriorParams, TokenParams};
use nvdp::renyi::{rd_dp_posteriors, rd_gaussian_diag, rd_gaussian_isotropic, RenyiOrder};

fn main() -> nvdp::Result<()> {
    let prior = PriorParams::standard(2);
    let tok = |a: f64, m: f64| TokenParams { alpha: a, mu: vec![m, 0.0], sigma: vec![1.0, 0.8] };
    let q = build_posterior(&[tok(1.0, 0.0), tok(0.5, 1.0)], &prior)?;
    let qp = build_posterior(&[tok(1.2, 0.5), tok(0.4, -1.0)], &prior)?;
    for l in [1.1, 2.0, 10.0] {
        let r = rd_dp_posteriors(&q, &qp, RenyiOrder::new(l)?)?;
        println!(
            "λ = {l:>4}: D = {:.6} (total {:.6}, components {:.6}, gaussian {:.6})",
            r.value, r.blocks.dirichlet_total, r.blocks.dirichlet_components, r.blocks.gaussian_components
        );
    }
    let o = RenyiOrder::new(1.1)?;
    println!("isotropic, σ = 0.55, ‖Δμ‖ = 1: {:.6}", rd_gaussian_isotropic(&[1.0], &[0.0], 0.55, o)?);
    let g = rd_gaussian_diag(&[0.0, 1.0], &[1.0, 0.5], &[0.5, 0.0], &[1.2, 0.6], o)?;
    println!("diagonal Gaussians: {:.6}", g.value);
    Ok(())
}
