use rayon::prelude::*;

use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::posterior::{build_posterior, DPPosterior, PriorParams, ReparamNoise, TokenParams, WeightedVectorSample};
use crate::renyi::kl::{dirichlet_kl, gaussian_kl_diag};
use crate::sampling::RngState;
use crate::special::{gamma_p_inv, gamma_quantile_shape_derivative, sigmoid, softplus, trigamma_unchecked};

/// Supervision for one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

/// An `n × d` embedding sequence, row-major, with its target.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub n: usize,
    pub x: Vec<f64>,
    pub target: Target,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_d: f64,
    pub lambda_g: f64,
}

impl LossWeights {
    pub fn new(lambda_d: f64, lambda_g: f64) -> Result<Self> {
        if !(lambda_d >= 0.0 && lambda_g >= 0.0) || !lambda_d.is_finite() || !lambda_g.is_finite() {
            return Err(Error::arg(format!("loss weights ({lambda_d}, {lambda_g}) must be non-negative")));
        }
        Ok(LossWeights { lambda_d, lambda_g })
    }

    pub fn tied(lambda: f64) -> Result<Self> {
        Self::new(lambda, lambda)
    }
}

/// `total = task + λ_D·dirichlet + λ_G·gaussian`, each a batch mean.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub task: f64,
    pub dirichlet: f64,
    pub gaussian: f64,
}

fn check_rows(x: &[f64], d: usize) -> Result<usize> {
    if d == 0 || x.is_empty() || !x.len().is_multiple_of(d) {
        return Err(Error::arg(format!("{} values do not form rows of dimension {d}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("non-finite input embedding"));
    }
    Ok(x.len() / d)
}

/// Token parameters for a row-major `n × d` input: `α = softplus(wᵀx + b)`,
/// `μ = W x + b`, `σ = exp(½(W x + b))`, with the prior appended.
pub fn project_posterior(x: &[f64], params: &ModelParams, prior: &PriorParams) -> Result<DPPosterior> {
    let d = params.d;
    let n = check_rows(x, d)?;
    if prior.dim() != d {
        return Err(Error::arg(format!("prior has dimension {}, model has {d}", prior.dim())));
    }
    let tokens: Vec<TokenParams> = (0..n)
        .map(|i| {
            let xi = &x[i * d..(i + 1) * d];
            let mut a = [0.0];
            params.proj_alpha.apply(xi, &mut a);
            let mut mu = vec![0.0; d];
            params.proj_mu.apply(xi, &mut mu);
            let mut ls = vec![0.0; d];
            params.proj_logsigma.apply(xi, &mut ls);
            TokenParams {
                alpha: softplus(a[0]),
                mu,
                sigma: ls.iter().map(|l| (0.5 * l).exp()).collect(),
            }
        })
        .collect();
    build_posterior(&tokens, prior)
}

struct AttentionCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Per head, `r × m` attention weights.
    attn: Vec<Vec<f64>>,
    concat: Vec<f64>,
    out: Vec<f64>,
}

fn attention_forward(query_src: &[f64], z: &[f64], log_pi: &[f64], p: &ModelParams) -> Result<AttentionCache> {
    let d = p.d;
    let (r, m) = (query_src.len() / d, log_pi.len());
    if log_pi.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(Error::arg("all mixture weights are zero"));
    }
    let project = |a: &super::params::Affine, src: &[f64], rows: usize| {
        let mut out = vec![0.0; rows * d];
        for i in 0..rows {
            a.apply(&src[i * d..(i + 1) * d], &mut out[i * d..(i + 1) * d]);
        }
        out
    };
    let q = project(&p.attn_q, query_src, r);
    let k = project(&p.attn_k, z, m);
    let v = project(&p.attn_v, z, m);
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attn = Vec::with_capacity(p.h);
    let mut concat = vec![0.0; r * d];
    for head in 0..p.h {
        let off = head * dh;
        let mut a = vec![0.0; r * m];
        for i in 0..r {
            let qi = &q[i * d + off..i * d + off + dh];
            let row = &mut a[i * m..(i + 1) * m];
            let mut max = f64::NEG_INFINITY;
            for j in 0..m {
                row[j] = if log_pi[j] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    let kj = &k[j * d + off..j * d + off + dh];
                    scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() + log_pi[j]
                };
                max = max.max(row[j]);
            }
            let mut sum = 0.0;
            for w in row.iter_mut() {
                *w = (*w - max).exp();
                sum += *w;
            }
            for w in row.iter_mut() {
                *w /= sum;
            }
            let out = &mut concat[i * d + off..i * d + off + dh];
            for j in 0..m {
                let w = row[j];
                if w == 0.0 {
                    continue;
                }
                for (o, vv) in out.iter_mut().zip(&v[j * d + off..j * d + off + dh]) {
                    *o += w * vv;
                }
            }
        }
        attn.push(a);
    }
    let out = project(&p.attn_o, &concat, r);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite attention output".into()));
    }
    Ok(AttentionCache { q, k, v, attn, concat, out })
}

/// Multi-head attention of `query_src` rows over the sample's vectors.
///
/// Logits are scaled dot products plus `ln πⱼ`; components with `πⱼ = 0`
/// get zero attention. There is no residual path from `query_src`.
pub fn denoising_attention(query_src: &[f64], s: &WeightedVectorSample, params: &ModelParams) -> Result<Vec<f64>> {
    if s.d != params.d {
        return Err(Error::arg(format!("sample dimension {} differs from model dimension {}", s.d, params.d)));
    }
    check_rows(query_src, params.d)?;
    if s.pi.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::arg("negative mixture weight"));
    }
    let log_pi: Vec<f64> = s.pi.iter().map(|p| p.ln()).collect();
    Ok(attention_forward(query_src, &s.z, &log_pi, params)?.out)
}

fn mean_rows(rows: &[f64], d: usize) -> Vec<f64> {
    let r = rows.len() / d;
    let mut out = vec![0.0; d];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(&rows[i * d..(i + 1) * d]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= r as f64);
    out
}

/// Head outputs for a released sample. The sample's own vectors serve as
/// queries, so a receiver needs nothing but the sample.
pub fn predict_sample(s: &WeightedVectorSample, params: &ModelParams) -> Result<Vec<f64>> {
    let att = denoising_attention(&s.z, s, params)?;
    let pooled = mean_rows(&att, params.d);
    let mut y = vec![0.0; params.c];
    params.head.apply(&pooled, &mut y);
    Ok(y)
}

/// Whether head outputs `y` get `target` right: arg-max class, or within
/// 0.5 of a real target.
pub fn is_correct(y: &[f64], target: Target) -> bool {
    match target {
        Target::Class(c) => {
            let best = y
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(usize::MAX);
            best == c
        }
        Target::Value(v) => (y[0] - v).abs() < 0.5,
    }
}

/// Task loss and its gradient with respect to the head outputs.
fn task_loss(y: &[f64], target: Target, c: usize) -> Result<(f64, Vec<f64>)> {
    match target {
        Target::Class(k) => {
            if c < 2 || k >= c {
                return Err(Error::arg(format!("class label {k} does not fit a head with {c} outputs")));
            }
            let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = y.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            let grad = y
                .iter()
                .enumerate()
                .map(|(i, v)| (v - lse).exp() - if i == k { 1.0 } else { 0.0 })
                .collect();
            Ok((lse - y[k], grad))
        }
        Target::Value(t) => {
            if c != 1 {
                return Err(Error::arg(format!("real-valued target needs a single-output head, got {c}")));
            }
            let e = y[0] - t;
            Ok((e * e, vec![2.0 * e]))
        }
    }
}

/// Symmetric prior Dirichlet for an `n`-token posterior: `α₀/(n + 1)` in
/// every component.
pub fn prior_dirichlet(prior: &PriorParams, n: usize) -> Vec<f64> {
    vec![prior.alpha0 / (n + 1) as f64; n + 1]
}

/// `(L_D, L_G)` of one posterior: the Dirichlet KL against
/// [`prior_dirichlet`] and the summed per-token Gaussian KL against the
/// prior component.
pub fn kl_regularizers(q: &DPPosterior, prior: &PriorParams) -> Result<(f64, f64)> {
    let ld = dirichlet_kl(q.alpha(), &prior_dirichlet(prior, q.n()))?;
    let lg = (0..q.n())
        .map(|i| gaussian_kl_diag(q.mu(i), q.sigma(i), &prior.mu, &prior.sigma))
        .sum();
    Ok((ld, lg))
}

struct Forward {
    parts: LossParts,
    correct: bool,
    grad: Option<ModelParams>,
}

/// Loss of one example under fixed base noise, with its gradient when
/// `want_grad` is set. Task, Dirichlet and Gaussian parts are unweighted;
/// the gradient is of `task + λ_D·dirichlet + λ_G·gaussian`.
fn example_forward(
    ex: &Example,
    p: &ModelParams,
    w: LossWeights,
    prior: &PriorParams,
    noise: &ReparamNoise,
    task_weight: f64,
    want_grad: bool,
) -> Result<Forward> {
    let d = p.d;
    let n = ex.n;
    if ex.x.len() != n * d || n == 0 {
        return Err(Error::arg(format!("example with n = {n} has {} values for d = {d}", ex.x.len())));
    }
    if prior.dim() != d {
        return Err(Error::arg("prior dimension differs from model dimension"));
    }
    let m = n + 1;
    if noise.uniforms.len() != m || noise.normals.len() != m * d {
        return Err(Error::arg("noise is shaped for a different sequence length"));
    }

    // projection
    let mut pre_alpha = vec![0.0; n];
    let mut alpha = Vec::with_capacity(m);
    let mut mu = vec![0.0; m * d];
    let mut logsig = vec![0.0; m * d];
    for i in 0..n {
        let xi = &ex.x[i * d..(i + 1) * d];
        let mut a = [0.0];
        p.proj_alpha.apply(xi, &mut a);
        pre_alpha[i] = a[0];
        alpha.push(softplus(a[0]));
        p.proj_mu.apply(xi, &mut mu[i * d..(i + 1) * d]);
        p.proj_logsigma.apply(xi, &mut logsig[i * d..(i + 1) * d]);
    }
    alpha.push(prior.alpha0);
    mu[n * d..].copy_from_slice(&prior.mu);
    let sigma: Vec<f64> = logsig
        .iter()
        .enumerate()
        .map(|(k, l)| if k >= n * d { prior.sigma[k - n * d] } else { (0.5 * l).exp() })
        .collect();

    // reparameterized sample
    let mut g = Vec::with_capacity(m);
    for (&a, &u) in alpha.iter().zip(&noise.uniforms) {
        g.push(if a > 0.0 { gamma_p_inv(a, u)? } else { 0.0 });
    }
    let g_total: f64 = g.iter().sum();
    if !(g_total > 0.0) || !g_total.is_finite() {
        return Err(Error::Numerical(format!("Gamma variates sum to {g_total}")));
    }
    let live = g.iter().filter(|v| **v > 0.0).count();
    let log_pi: Vec<f64> = g
        .iter()
        .map(|&v| if live == 1 { if v > 0.0 { 0.0 } else { f64::NEG_INFINITY } } else { (v / g_total).ln() })
        .collect();
    let z: Vec<f64> = (0..m * d).map(|k| mu[k] + sigma[k] * noise.normals[k]).collect();

    // attention, pooling, head
    let att = attention_forward(&z, &z, &log_pi, p)?;
    let pooled = mean_rows(&att.out, d);
    let mut y = vec![0.0; p.c];
    p.head.apply(&pooled, &mut y);
    let (task, mut dy) = task_loss(&y, ex.target, p.c)?;
    dy.iter_mut().for_each(|g| *g *= task_weight);
    let correct = is_correct(&y, ex.target);

    // regularizers
    let beta = prior.alpha0 / m as f64;
    let dirichlet = dirichlet_kl(&alpha, &vec![beta; m])?;
    let mut gaussian = 0.0;
    for i in 0..n {
        gaussian += gaussian_kl_diag(&mu[i * d..(i + 1) * d], &sigma[i * d..(i + 1) * d], &prior.mu, &prior.sigma);
    }
    let total = task_weight * task + w.lambda_d * dirichlet + w.lambda_g * gaussian;
    if !total.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss (task {task}, dirichlet {dirichlet}, gaussian {gaussian})"
        )));
    }
    let parts = LossParts { total, task, dirichlet, gaussian };
    if !want_grad {
        return Ok(Forward { parts, correct, grad: None });
    }

    let mut gr = p.zeros_like();

    // head and pooling
    p.head.backward(&pooled, &dy, &mut gr.head, None);
    let mut dpooled = vec![0.0; d];
    for (r, &gy) in dy.iter().enumerate() {
        for (dp, wv) in dpooled.iter_mut().zip(&p.head.w[r * d..(r + 1) * d]) {
            *dp += gy * wv;
        }
    }
    let dout_row: Vec<f64> = dpooled.iter().map(|v| v / m as f64).collect();

    // output map
    let mut dconcat = vec![0.0; m * d];
    for i in 0..m {
        p.attn_o.backward(
            &att.concat[i * d..(i + 1) * d],
            &dout_row,
            &mut gr.attn_o,
            Some(&mut dconcat[i * d..(i + 1) * d]),
        );
    }

    // heads
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; m * d];
    let mut dk = vec![0.0; m * d];
    let mut dv = vec![0.0; m * d];
    let mut dlog_pi = vec![0.0; m];
    for head in 0..p.h {
        let off = head * dh;
        let a = &att.attn[head];
        for i in 0..m {
            let dci = &dconcat[i * d + off..i * d + off + dh];
            let row = &a[i * m..(i + 1) * m];
            let mut da = vec![0.0; m];
            for j in 0..m {
                if row[j] == 0.0 {
                    continue;
                }
                let vj = &att.v[j * d + off..j * d + off + dh];
                da[j] = dci.iter().zip(vj).map(|(x, y)| x * y).sum();
                for (t, g) in dv[j * d + off..j * d + off + dh].iter_mut().zip(dci) {
                    *t += row[j] * g;
                }
            }
            let mean: f64 = row.iter().zip(&da).map(|(x, y)| x * y).sum();
            for j in 0..m {
                if row[j] == 0.0 {
                    continue;
                }
                let dl = row[j] * (da[j] - mean);
                dlog_pi[j] += dl;
                for t in 0..dh {
                    dq[i * d + off + t] += dl * scale * att.k[j * d + off + t];
                    dk[j * d + off + t] += dl * scale * att.q[i * d + off + t];
                }
            }
        }
    }

    // q, k, v projections of Z
    let mut dz = vec![0.0; m * d];
    for i in 0..m {
        let zi = &z[i * d..(i + 1) * d];
        let dzi = &mut dz[i * d..(i + 1) * d];
        p.attn_q.backward(zi, &dq[i * d..(i + 1) * d], &mut gr.attn_q, Some(&mut *dzi));
        p.attn_k.backward(zi, &dk[i * d..(i + 1) * d], &mut gr.attn_k, Some(&mut *dzi));
        p.attn_v.backward(zi, &dv[i * d..(i + 1) * d], &mut gr.attn_v, Some(dzi));
    }

    // Z = μ + σ ε, plus the Gaussian regularizer; only token rows are trainable
    let mut dmu = vec![0.0; n * d];
    let mut dlogsig = vec![0.0; n * d];
    for i in 0..n {
        for t in 0..d {
            let k = i * d + t;
            let (ps, pm) = (prior.sigma[t], prior.mu[t]);
            dmu[k] = dz[k] + w.lambda_g * (mu[k] - pm) / (ps * ps);
            let dsigma = dz[k] * noise.normals[k];
            dlogsig[k] = 0.5 * sigma[k] * dsigma + w.lambda_g * (0.5 * sigma[k] * sigma[k] / (ps * ps) - 0.5);
        }
    }

    // π = g / Σg through the implicit Gamma quantile derivative, plus the
    // Dirichlet regularizer
    let mut dalpha = vec![0.0; n];
    if live > 1 {
        let weighted: f64 = dlog_pi.iter().zip(&g).filter(|(_, gv)| **gv > 0.0).map(|(dl, _)| dl).sum();
        for i in 0..n {
            if g[i] > 0.0 {
                let dg = dlog_pi[i] / g[i] - weighted / g_total;
                dalpha[i] = dg * gamma_quantile_shape_derivative(alpha[i], g[i])?;
            }
        }
    }
    if w.lambda_d != 0.0 {
        let a_total: f64 = alpha.iter().sum();
        let shift = (a_total - prior.alpha0) * trigamma_unchecked(a_total);
        for i in 0..n {
            dalpha[i] += w.lambda_d * ((alpha[i] - beta) * trigamma_unchecked(alpha[i]) - shift);
        }
    }

    for i in 0..n {
        let xi = &ex.x[i * d..(i + 1) * d];
        let da = dalpha[i] * sigmoid(pre_alpha[i]);
        p.proj_alpha.backward(xi, &[da], &mut gr.proj_alpha, None);
        p.proj_mu.backward(xi, &dmu[i * d..(i + 1) * d], &mut gr.proj_mu, None);
        p.proj_logsigma.backward(xi, &dlogsig[i * d..(i + 1) * d], &mut gr.proj_logsigma, None);
    }

    if let Some((name, idx)) = gr.first_non_finite() {
        return Err(Error::Numerical(format!("non-finite gradient at {name}[{idx}]")));
    }
    Ok(Forward { parts, correct, grad: Some(gr) })
}

/// One base-noise draw per example, in batch order.
pub fn draw_noise(batch: &[Example], d: usize, rng: &mut RngState) -> Vec<ReparamNoise> {
    batch.iter().map(|ex| ReparamNoise::draw(rng, ex.n + 1, d)).collect()
}

fn check_batch(batch: &[Example], noise: &[ReparamNoise]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if noise.len() != batch.len() {
        return Err(Error::arg(format!("{} noise draws for {} examples", noise.len(), batch.len())));
    }
    Ok(())
}

fn batch_forward(
    batch: &[Example],
    params: &ModelParams,
    weights: LossWeights,
    prior: &PriorParams,
    noise: &[ReparamNoise],
    task_weight: f64,
    want_grad: bool,
) -> Result<(LossParts, usize, Option<ModelParams>)> {
    check_batch(batch, noise)?;
    let results: Vec<Result<Forward>> = batch
        .par_iter()
        .zip(noise.par_iter())
        .map(|(ex, nz)| example_forward(ex, params, weights, prior, nz, task_weight, want_grad))
        .collect();
    let scale = 1.0 / batch.len() as f64;
    let mut parts = LossParts::default();
    let mut correct = 0;
    let mut grad = want_grad.then(|| params.zeros_like());
    for r in results {
        let f = r?;
        parts.task += scale * f.parts.task;
        parts.dirichlet += scale * f.parts.dirichlet;
        parts.gaussian += scale * f.parts.gaussian;
        correct += f.correct as usize;
        if let (Some(g), Some(fg)) = (grad.as_mut(), f.grad.as_ref()) {
            g.add_scaled(fg, scale);
        }
    }
    parts.total = task_weight * parts.task + weights.lambda_d * parts.dirichlet + weights.lambda_g * parts.gaussian;
    Ok((parts, correct, grad))
}

/// Batch-mean loss under fixed base noise.
pub fn loss_with_noise(
    batch: &[Example],
    params: &ModelParams,
    weights: LossWeights,
    prior: &PriorParams,
    noise: &[ReparamNoise],
) -> Result<LossParts> {
    Ok(batch_forward(batch, params, weights, prior, noise, 1.0, false)?.0)
}

/// Batch-mean loss with one reparameterized draw per example.
pub fn loss(
    batch: &[Example],
    params: &ModelParams,
    weights: LossWeights,
    prior: &PriorParams,
    rng: &mut RngState,
) -> Result<LossParts> {
    let noise = draw_noise(batch, params.d, rng);
    loss_with_noise(batch, params, weights, prior, &noise)
}

/// Gradient of the batch-mean loss under fixed base noise.
pub fn grad(
    batch: &[Example],
    params: &ModelParams,
    weights: LossWeights,
    prior: &PriorParams,
    noise: &[ReparamNoise],
) -> Result<(LossParts, ModelParams)> {
    let (parts, _, g) = batch_forward(batch, params, weights, prior, noise, 1.0, true)?;
    Ok((parts, g.unwrap()))
}

pub(crate) fn grad_and_correct(
    batch: &[Example],
    params: &ModelParams,
    weights: LossWeights,
    prior: &PriorParams,
    noise: &[ReparamNoise],
) -> Result<(LossParts, usize, ModelParams)> {
    let (parts, correct, g) = batch_forward(batch, params, weights, prior, noise, 1.0, true)?;
    Ok((parts, correct, g.unwrap()))
}

/// `λ_D·L_D + λ_G·L_G` and its gradient, with the task loss switched off.
/// No randomness is involved; `total` excludes the task part.
pub fn regularizer_grad(
    batch: &[Example],
    params: &ModelParams,
    weights: LossWeights,
    prior: &PriorParams,
) -> Result<(LossParts, ModelParams)> {
    let noise: Vec<ReparamNoise> = batch
        .iter()
        .map(|ex| ReparamNoise::zero_gaussian(vec![0.5; ex.n + 1], params.d))
        .collect();
    let (parts, _, g) = batch_forward(batch, params, weights, prior, &noise, 0.0, true)?;
    Ok((parts, g.unwrap()))
}

/// Loss and number of correct predictions under fixed noise.
pub(crate) fn evaluate_with_noise(
    batch: &[Example],
    params: &ModelParams,
    weights: LossWeights,
    prior: &PriorParams,
    noise: &[ReparamNoise],
) -> Result<(LossParts, usize)> {
    let (parts, correct, _) = batch_forward(batch, params, weights, prior, noise, 1.0, false)?;
    Ok((parts, correct))
}

/// Projects `x` and draws the single sample released for it.
pub fn sanitize(x: &[f64], params: &ModelParams, prior: &PriorParams, rng: &mut RngState) -> Result<WeightedVectorSample> {
    let q = project_posterior(x, params, prior)?;
    crate::posterior::sample_embedding(&q, rng)
}

/// Fraction of samples whose head prediction matches the target.
pub fn sample_accuracy(samples: &[WeightedVectorSample], targets: &[Target], params: &ModelParams) -> Result<f64> {
    if samples.len() != targets.len() || samples.is_empty() {
        return Err(Error::arg("samples and targets must be non-empty and of equal length"));
    }
    let correct: Result<Vec<bool>> = samples
        .par_iter()
        .zip(targets.par_iter())
        .map(|(s, &t)| Ok(is_correct(&predict_sample(s, params)?, t)))
        .collect();
    Ok(correct?.iter().filter(|c| **c).count() as f64 / samples.len() as f64)
}
