use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sampling::RngState;

/// Dense row-major matrix with its bias: `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Affine {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; rows],
        }
    }

    fn random(rows: usize, cols: usize, rng: &mut RngState) -> Self {
        let scale = 1.0 / (cols as f64).sqrt();
        let w = (0..rows * cols).map(|_| scale * rng.standard_normal()).collect();
        Affine {
            rows,
            cols,
            w,
            b: vec![0.0; rows],
        }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            *o = self.b[r] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy` and returns nothing; `dx` gets
    /// `Wᵀ dy` added when given.
    pub(crate) fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine, dx: Option<&mut [f64]>) {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.b[r] += g;
            let gw = &mut grad.w[r * self.cols..(r + 1) * self.cols];
            for (w, xv) in gw.iter_mut().zip(x) {
                *w += g * xv;
            }
        }
        if let Some(dx) = dx {
            for (r, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.w[r * self.cols..(r + 1) * self.cols];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }
}

/// All trainable parameters. `h` heads split the `d` attention features
/// into contiguous blocks of `d / h`. A head with one output is a
/// regression head; two or more outputs are class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub d: usize,
    pub h: usize,
    pub c: usize,
    pub proj_alpha: Affine,
    pub proj_mu: Affine,
    pub proj_logsigma: Affine,
    pub attn_q: Affine,
    pub attn_k: Affine,
    pub attn_v: Affine,
    pub attn_o: Affine,
    pub head: Affine,
}

/// softplus⁻¹(1): initial pseudo-counts of one.
const UNIT_ALPHA_BIAS: f64 = 0.541_324_854_612_918_1;

impl ModelParams {
    pub fn zeros(d: usize, h: usize, c: usize) -> Result<Self> {
        check_dims(d, h, c)?;
        Ok(ModelParams {
            d,
            h,
            c,
            proj_alpha: Affine::zeros(1, d),
            proj_mu: Affine::zeros(d, d),
            proj_logsigma: Affine::zeros(d, d),
            attn_q: Affine::zeros(d, d),
            attn_k: Affine::zeros(d, d),
            attn_v: Affine::zeros(d, d),
            attn_o: Affine::zeros(d, d),
            head: Affine::zeros(c, d),
        })
    }

    /// Weights drawn with scale `1/√fan_in`. The pseudo-count bias starts at
    /// α = 1 and the mean projection at the identity.
    pub fn init(d: usize, h: usize, c: usize, rng: &mut RngState) -> Result<Self> {
        check_dims(d, h, c)?;
        let mut proj_alpha = Affine::random(1, d, rng);
        proj_alpha.b[0] = UNIT_ALPHA_BIAS;
        let mut proj_mu = Affine::random(d, d, rng);
        for i in 0..d {
            proj_mu.w[i * d + i] += 1.0;
        }
        let mut proj_logsigma = Affine::random(d, d, rng);
        proj_logsigma.w.iter_mut().for_each(|w| *w *= 0.1);
        Ok(ModelParams {
            d,
            h,
            c,
            proj_alpha,
            proj_mu,
            proj_logsigma,
            attn_q: Affine::random(d, d, rng),
            attn_k: Affine::random(d, d, rng),
            attn_v: Affine::random(d, d, rng),
            attn_o: Affine::random(d, d, rng),
            head: Affine::random(c, d, rng),
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.h
    }

    pub fn is_regression(&self) -> bool {
        self.c == 1
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 16] {
        [
            ("proj_alpha.w", &self.proj_alpha.w),
            ("proj_alpha.b", &self.proj_alpha.b),
            ("proj_mu.w", &self.proj_mu.w),
            ("proj_mu.b", &self.proj_mu.b),
            ("proj_logsigma.w", &self.proj_logsigma.w),
            ("proj_logsigma.b", &self.proj_logsigma.b),
            ("attn_q.w", &self.attn_q.w),
            ("attn_q.b", &self.attn_q.b),
            ("attn_k.w", &self.attn_k.w),
            ("attn_k.b", &self.attn_k.b),
            ("attn_v.w", &self.attn_v.w),
            ("attn_v.b", &self.attn_v.b),
            ("attn_o.w", &self.attn_o.w),
            ("attn_o.b", &self.attn_o.b),
            ("head.w", &self.head.w),
            ("head.b", &self.head.b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 16] {
        [
            &mut self.proj_alpha.w,
            &mut self.proj_alpha.b,
            &mut self.proj_mu.w,
            &mut self.proj_mu.b,
            &mut self.proj_logsigma.w,
            &mut self.proj_logsigma.b,
            &mut self.attn_q.w,
            &mut self.attn_q.b,
            &mut self.attn_k.w,
            &mut self.attn_k.b,
            &mut self.attn_v.w,
            &mut self.attn_v.b,
            &mut self.attn_o.w,
            &mut self.attn_o.b,
            &mut self.head.w,
            &mut self.head.b,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All parameters in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::arg(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_parameters()
            )));
        }
        let mut rest = flat;
        for t in self.tensors_mut() {
            let (head, tail) = rest.split_at(t.len());
            t.copy_from_slice(head);
            rest = tail;
        }
        Ok(())
    }

    /// Name and index within the tensor of flat coordinate `k`.
    pub fn locate(&self, mut k: usize) -> (&'static str, usize) {
        for (name, t) in self.tensors() {
            if k < t.len() {
                return (name, k);
            }
            k -= t.len();
        }
        ("<out of range>", k)
    }

    pub(crate) fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.d, self.h, self.c).unwrap()
    }

    pub(crate) fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// First non-finite coordinate, by tensor name and index.
    pub fn first_non_finite(&self) -> Option<(&'static str, usize)> {
        self.tensors()
            .into_iter()
            .find_map(|(name, t)| t.iter().position(|v| !v.is_finite()).map(|i| (name, i)))
    }
}

fn check_dims(d: usize, h: usize, c: usize) -> Result<()> {
    if d == 0 || h == 0 || !d.is_multiple_of(h) {
        return Err(Error::arg(format!("{h} heads do not divide dimension {d}")));
    }
    if c == 0 {
        return Err(Error::arg("the head needs at least one output"));
    }
    Ok(())
}

const CHECKPOINT_MAGIC: &[u8; 6] = b"NVDPM1";

/// `NVDPM1`, little-endian `u32` d, h, c, then every tensor in
/// [`ModelParams::tensors`] order as little-endian `f64`.
pub fn serialize_params(p: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(18 + 8 * p.num_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [p.d, p.h, p.c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (_, t) in p.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn deserialize_params(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 6 || &bytes[..6] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, expected NVDPM1"));
    }
    if bytes.len() < 18 {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (d, h, c) = (word(6), word(10), word(14));
    let mut p = ModelParams::zeros(d, h, c).map_err(|e| Error::format(6, e.to_string()))?;
    let expected = 18 + 8 * p.num_parameters();
    if bytes.len() != expected {
        let offset = bytes.len().min(expected) as u64;
        return Err(Error::format(
            offset,
            format!("payload is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let flat: Vec<f64> = bytes[18..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(k) = flat.iter().position(|v| !v.is_finite()) {
        return Err(Error::format((18 + 8 * k) as u64, "non-finite parameter"));
    }
    p.set_flat(&flat)?;
    Ok(p)
}

pub fn write_params(path: impl AsRef<Path>, p: &ModelParams) -> Result<()> {
    fs::write(path, serialize_params(p))?;
    Ok(())
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    deserialize_params(&fs::read(path)?)
}
