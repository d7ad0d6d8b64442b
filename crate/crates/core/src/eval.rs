//! Fréchet distance over a frozen random encoder, and mixture mode coverage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{build_model, Activation, ArchSpec, Family, Model, Role, SnMode};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Seed of the evaluation encoder, shared by every run.
pub const ENCODER_SEED: u64 = 1729;
pub const DEFAULT_FEATURE_DIM: usize = 32;
const CHUNK: usize = 256;

/// Maps samples to feature vectors.
#[derive(Clone, Debug)]
pub enum FeatureEncoder {
    /// Features are the flattened samples themselves.
    Identity { dim: usize },
    Network { model: Model, dim: usize },
}

impl FeatureEncoder {
    /// Frozen random network for samples of `sample_shape`: an mlp for
    /// points, a small conv net for images. Weights use `1/√fan_in` scaling.
    pub fn new(sample_shape: &[usize], dim: usize) -> Result<Self> {
        let image = sample_shape.len() == 3;
        let spec = ArchSpec {
            family: if image { Family::Conv } else { Family::Mlp },
            hidden_widths: if image { vec![16, 32] } else { vec![64, 64] },
            activation: Activation::LeakyRelu,
            residual: false,
            input_shape: sample_shape.to_vec(),
            latent_dim: 1,
            use_spectral_norm: false,
        };
        let mut model = build_model(&spec, Role::Encoder { out_dim: dim }, ENCODER_SEED)?;
        for p in model.params_mut() {
            if p.is_weight() {
                let fan_in = match p.shape.as_slice() {
                    [_, c, kh, kw] => c * kh * kw,
                    [i, _] => *i,
                    _ => 1,
                } as f64;
                let k = 1.0 / (fan_in.sqrt() * crate::nn::INIT_STD);
                p.data.iter_mut().for_each(|v| *v *= k);
            }
        }
        Ok(FeatureEncoder::Network { model, dim })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureEncoder::Identity { dim } | FeatureEncoder::Network { dim, .. } => *dim,
        }
    }

    pub fn checksum(&self) -> u64 {
        match self {
            FeatureEncoder::Identity { dim } => *dim as u64,
            FeatureEncoder::Network { model, .. } => model.checksum(),
        }
    }

    /// Features for a batch `[n, ...]`, row-major `n × dim`.
    pub fn encode(&self, samples: &Tensor) -> Result<Vec<f64>> {
        match self {
            FeatureEncoder::Identity { dim } => {
                let n = samples.shape().first().copied().unwrap_or(0);
                if n * dim != samples.numel() {
                    return Err(Error::invalid("samples", format!("identity encoder expects {dim} values per sample")));
                }
                Ok(samples.to_vec())
            }
            FeatureEncoder::Network { model, .. } => {
                // Binding clones the parameters; the encoder itself is never mutated.
                let bound = model.clone().bind(None, SnMode::Frozen)?;
                let n = samples.shape()[0];
                let per = samples.numel() / n.max(1);
                let mut out = Vec::new();
                for start in (0..n).step_by(CHUNK) {
                    let len = CHUNK.min(n - start);
                    let mut shape = samples.shape().to_vec();
                    shape[0] = len;
                    let chunk = Tensor::new(shape, samples.data()[start * per..(start + len) * per].to_vec())?;
                    out.extend_from_slice(bound.discriminator_forward(&chunk)?.0.data());
                }
                Ok(out)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean and unbiased covariance of `n × dim` row-major features.
    pub fn from_features(features: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 || features.len() % dim != 0 {
            return Err(Error::invalid("features", "length is not a multiple of the feature dim"));
        }
        let n = features.len() / dim;
        if n < dim + 1 || n < 2 {
            return Err(Error::invalid("samples", format!("need at least {} samples, got {n}", dim.max(1) + 1)));
        }
        let mut mean = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; dim * dim];
        let mut centred = vec![0.0; dim];
        for row in features.chunks_exact(dim) {
            centred.iter_mut().zip(row.iter().zip(&mean)).for_each(|(c, (v, m))| *c = v - m);
            for i in 0..dim {
                let ci = centred[i];
                for j in i..dim {
                    cov[i * dim + j] += ci * centred[j];
                }
            }
        }
        for i in 0..dim {
            for j in i..dim {
                let v = cov[i * dim + j] / (n - 1) as f64;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        Ok(GaussianStats { mean, cov })
    }
}

pub fn extract_stats(encoder: &FeatureEncoder, samples: &Tensor) -> Result<GaussianStats> {
    let n = samples.shape().first().copied().unwrap_or(0);
    if n < encoder.dim() + 1 {
        return Err(Error::invalid("samples", format!("need at least {} samples, got {n}", encoder.dim() + 1)));
    }
    GaussianStats::from_features(&encoder.encode(samples)?, encoder.dim())
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and row-major eigenvectors (column `k` pairs with value `k`).
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Square root of a symmetric PSD matrix, negative eigenvalues clamped to 0.
pub fn psd_sqrt(a: &[f64], n: usize) -> Vec<f64> {
    let (vals, vecs) = symmetric_eigen(a, n);
    let mut out = vec![0.0; n * n];
    for (k, &l) in vals.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..n {
            let vi = vecs[i * n + k] * s;
            for j in 0..n {
                out[i * n + j] += vi * vecs[j * n + k];
            }
        }
    }
    out
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

fn check_symmetric(s: &GaussianStats, which: &str) -> Result<()> {
    let n = s.dim();
    if s.cov.len() != n * n {
        return Err(Error::invalid(which, "covariance size does not match the mean"));
    }
    let scale = s.cov.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..i {
            if (s.cov[i * n + j] - s.cov[j * n + i]).abs() > 1e-9 * scale {
                return Err(Error::invalid(which, "covariance is not symmetric"));
            }
        }
    }
    Ok(())
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            kind: "frechet_distance",
            lhs: vec![a.dim()],
            rhs: vec![b.dim()],
        });
    }
    check_symmetric(a, "a")?;
    check_symmetric(b, "b")?;
    let n = a.dim();
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = psd_sqrt(&a.cov, n);
    let mut m = matmul_sq(&matmul_sq(&sa, &b.cov, n), &sa, n);
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    let (vals, _) = symmetric_eigen(&m, n);
    let tr_sqrt: f64 = vals.iter().map(|l| l.max(0.0).sqrt()).sum();
    let tr = |c: &[f64]| (0..n).map(|i| c[i * n + i]).sum::<f64>();
    Ok((mean_term + tr(&a.cov) + tr(&b.cov) - 2.0 * tr_sqrt).max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    /// `k` equally weighted components equally spaced on a circle.
    pub fn ring(k: usize, radius: f64, sigma: f64) -> Result<Self> {
        let tau = std::f64::consts::TAU;
        let m = MixtureSpec {
            means: (0..k).map(|i| {
                let a = tau * i as f64 / k as f64;
                vec![radius * a.cos(), radius * a.sin()]
            }).collect(),
            sigma,
            weights: vec![1.0 / k as f64; k],
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.means.len() != self.weights.len() {
            return Err(Error::invalid("mixture", "need one weight per mean"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("weights", "must be non-negative and sum to 1"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Draws `n` samples; returns row-major values and component labels.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> (Vec<f64>, Vec<usize>) {
        let mut data = Vec::with_capacity(n * self.dim());
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut c = self.weights.len() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    c = i;
                    break;
                }
            }
            labels.push(c);
            data.extend(self.means[c].iter().map(|m| m + self.sigma * rng.normal()));
        }
        (data, labels)
    }
}

/// Returns `(modes covered, fraction of samples within hq_radius of a mean)`.
/// A mode is covered when at least `max(10, 0.2·n/k)` samples lie within
/// `hq_radius` (default `3σ`) of its mean.
pub fn mode_coverage(samples: &[f64], mixture: &MixtureSpec, hq_radius: Option<f64>) -> Result<(usize, f64)> {
    mixture.validate()?;
    if mixture.means.len() < 2 {
        return Err(Error::invalid("mixture", "need at least two modes"));
    }
    let d = mixture.dim();
    if samples.is_empty() || samples.len() % d != 0 {
        return Err(Error::invalid("samples", "empty or not a multiple of the mixture dimension"));
    }
    let r2 = hq_radius.unwrap_or(3.0 * mixture.sigma).powi(2);
    let n = samples.len() / d;
    let k = mixture.means.len();
    let mut counts = vec![0usize; k];
    let mut hq = 0usize;
    for s in samples.chunks_exact(d) {
        let (best, dist) = mixture
            .means
            .iter()
            .enumerate()
            .map(|(i, m)| (i, m.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
        if dist <= r2 {
            counts[best] += 1;
            hq += 1;
        }
    }
    let need = (0.2 * n as f64 / k as f64).max(10.0);
    let covered = counts.iter().filter(|&&c| c as f64 >= need).count();
    Ok((covered, hq as f64 / n as f64))
}
