//! Generator and discriminator families, per-layer taps, spectral normalization.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{fnv1a, Rng};
use crate::tensor::{self as t, Tape, Tensor};

/// Standard deviation of the Gaussian weight initializer.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Mlp,
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => t::relu(x),
            Activation::LeakyRelu => t::leaky_relu(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// Conv family only: identity skip around equal-width conv layers.
    pub residual: bool,
    /// Per-sample data shape: `[d]` for points, `[c, h, w]` for images.
    pub input_shape: Vec<usize>,
    pub latent_dim: usize,
    pub use_spectral_norm: bool,
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_widths.is_empty() {
            return Err(Error::invalid("hidden_widths", "must be non-empty"));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::invalid("hidden_widths", "widths must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::invalid("latent_dim", "must be at least 1"));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid("input_shape", "must be non-empty with positive dims"));
        }
        if self.family == Family::Conv {
            match self.input_shape.as_slice() {
                [_, h, w] if h == w && h % 4 == 0 => {}
                _ => {
                    return Err(Error::invalid(
                        "input_shape",
                        format!("conv family needs [c, s, s] with s a multiple of 4, got {:?}", self.input_shape),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn is_image(&self) -> bool {
        self.input_shape.len() == 3
    }

    pub fn sample_dim(&self) -> usize {
        self.input_shape.iter().product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    Discriminator,
    /// A discriminator-shaped network with a vector output.
    Encoder { out_dim: usize },
}

impl Role {
    fn tag(self) -> &'static str {
        match self {
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
            Role::Encoder { .. } => "encoder",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn is_weight(&self) -> bool {
        self.name.ends_with(".w")
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.clone()).expect("param shape matches data")
    }

    /// Rows and columns of the matrix view used by spectral normalization;
    /// conv kernels `[o, c, 3, 3]` become `o × 9c`.
    pub fn matrix_dims(&self) -> (usize, usize) {
        matrix_dims(&self.shape)
    }
}

fn matrix_dims(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, rest @ ..] => (*r, rest.iter().product()),
    }
}

/// Persistent left singular vector estimate for one weight.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: Vec<f64>,
}

impl SpectralState {
    pub fn random(rows: usize, rng: &mut Rng) -> Self {
        let mut u = rng.normal_vec(rows, 1.0);
        let n = norm(&u);
        u.iter_mut().for_each(|v| *v /= n);
        SpectralState { u }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalized(v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm(&v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid("weight", "spectral norm undefined for a zero matrix"));
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

/// Runs `iters` power iterations from `u`; returns `(u, v, σ̂ = uᵀWv)`.
pub fn power_iteration(w: &[f64], rows: usize, cols: usize, u: &[f64], iters: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let wt_u = |u: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; cols];
        for (r, &ur) in u.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *o += ur * wv;
            }
        }
        out
    };
    let w_v = |v: &[f64]| -> Vec<f64> {
        (0..rows)
            .map(|r| w[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    };
    let mut u = u.to_vec();
    let mut v = normalized(wt_u(&u))?;
    for _ in 0..iters {
        v = normalized(wt_u(&u))?;
        u = normalized(w_v(&v))?;
    }
    let sigma = u.iter().zip(w_v(&v)).map(|(a, b)| a * b).sum();
    Ok((u, v, sigma))
}

/// Divides `weight` by its power-iteration estimate of the top singular
/// value. The estimate `uᵀWv` is differentiated through `W` with `u`, `v`
/// held constant.
pub fn spectral_normalize(weight: &Tensor, state: &SpectralState, n_power_iter: usize) -> Result<(Tensor, SpectralState)> {
    if n_power_iter == 0 {
        return Err(Error::invalid("n_power_iter", "must be at least 1"));
    }
    normalize_with(weight, state, n_power_iter)
}

fn normalize_with(weight: &Tensor, state: &SpectralState, n_power_iter: usize) -> Result<(Tensor, SpectralState)> {
    let (rows, cols) = matrix_dims(weight.shape());
    if state.u.len() != rows {
        return Err(Error::Shape {
            kind: "spectral_normalize",
            lhs: weight.shape().to_vec(),
            rhs: vec![state.u.len()],
        });
    }
    let (u, v, _) = power_iteration(weight.data(), rows, cols, &state.u, n_power_iter)?;
    let outer: Vec<f64> = u.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect();
    let outer = Tensor::new(weight.shape().to_vec(), outer)?;
    let sigma = t::reduce_sum(&t::mul(weight, &outer)?)?;
    if sigma.item() <= 0.0 {
        return Err(Error::invalid("weight", "non-positive singular value estimate"));
    }
    let w = t::mul_scalar(weight, &t::recip(&sigma)?)?;
    Ok((w, SpectralState { u }))
}

/// How a bind treats spectral state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnMode {
    /// One power iteration, persisted into the model.
    Update,
    /// Normalize with the stored `u`, leave it unchanged.
    Frozen,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ArchSpec,
    pub role: Role,
    params: Vec<Param>,
    spectral: Vec<Option<SpectralState>>,
}

pub fn build_model(spec: &ArchSpec, role: Role, seed: u64) -> Result<Model> {
    build_model_with_std(spec, role, seed, INIT_STD)
}

pub fn build_model_with_std(spec: &ArchSpec, role: Role, seed: u64, std: f64) -> Result<Model> {
    spec.validate()?;
    if let Role::Encoder { out_dim: 0 } = role {
        return Err(Error::invalid("out_dim", "must be at least 1"));
    }
    let mut layout: Vec<(String, Vec<usize>)> = Vec::new();
    let widths = &spec.hidden_widths;
    let mut add = |name: String, shape: Vec<usize>| layout.push((name, shape));
    match (spec.family, role) {
        (Family::Mlp, Role::Generator) => {
            let mut fan_in = spec.latent_dim;
            for (i, &w) in widths.iter().enumerate() {
                add(format!("fc{i}.w"), vec![fan_in, w]);
                add(format!("fc{i}.b"), vec![w]);
                fan_in = w;
            }
            let i = widths.len();
            add(format!("fc{i}.w"), vec![fan_in, spec.sample_dim()]);
            add(format!("fc{i}.b"), vec![spec.sample_dim()]);
        }
        (Family::Mlp, _) => {
            let mut fan_in = spec.sample_dim();
            for (i, &w) in widths.iter().enumerate() {
                add(format!("fc{i}.w"), vec![fan_in, w]);
                add(format!("fc{i}.b"), vec![w]);
                fan_in = w;
            }
            let i = widths.len();
            add(format!("fc{i}.w"), vec![fan_in, output_dim(role)]);
            add(format!("fc{i}.b"), vec![output_dim(role)]);
        }
        (Family::Conv, Role::Generator) => {
            let (c, s) = (spec.input_shape[0], spec.input_shape[1] / 4);
            let chans = generator_channels(widths);
            add("proj.w".into(), vec![spec.latent_dim, chans[0] * s * s]);
            add("proj.b".into(), vec![chans[0] * s * s]);
            for i in 0..2 {
                add(format!("conv{i}.w"), vec![chans[i + 1], chans[i], 3, 3]);
                add(format!("conv{i}.b"), vec![chans[i + 1]]);
            }
            add("out.w".into(), vec![c, chans[2], 3, 3]);
            add("out.b".into(), vec![c]);
        }
        (Family::Conv, _) => {
            let mut c = spec.input_shape[0];
            let mut side = spec.input_shape[1];
            for (i, &w) in widths.iter().enumerate() {
                add(format!("conv{i}.w"), vec![w, c, 3, 3]);
                add(format!("conv{i}.b"), vec![w]);
                c = w;
                if i < 2 {
                    side /= 2;
                }
            }
            add("out.w".into(), vec![c * side * side, output_dim(role)]);
            add("out.b".into(), vec![output_dim(role)]);
        }
    }

    let mut rng = Rng::new(seed, &format!("init/{}", role.tag()));
    let mut sn_rng = rng.derive("spectral");
    let mut params = Vec::with_capacity(layout.len());
    let mut spectral = Vec::with_capacity(layout.len());
    for (name, shape) in layout {
        let n: usize = shape.iter().product();
        let p = Param {
            data: if name.ends_with(".w") { rng.normal_vec(n, std) } else { vec![0.0; n] },
            name,
            shape,
        };
        spectral.push((spec.use_spectral_norm && p.is_weight()).then(|| SpectralState::random(p.matrix_dims().0, &mut sn_rng)));
        params.push(p);
    }
    Ok(Model {
        spec: spec.clone(),
        role,
        params,
        spectral,
    })
}

fn output_dim(role: Role) -> usize {
    match role {
        Role::Encoder { out_dim } => out_dim,
        _ => 1,
    }
}

/// Channel counts at side/4, side/2 and side for the conv generator.
fn generator_channels(widths: &[usize]) -> [usize; 3] {
    let w0 = widths[0];
    let w1 = widths.get(1).copied().unwrap_or(w0);
    let w2 = widths.get(2).copied().unwrap_or(w1);
    [w0, w1, w2]
}

impl Model {
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn spectral_states(&self) -> &[Option<SpectralState>] {
        &self.spectral
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn set_param(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let p = self
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::invalid("param", format!("no parameter named {name}")))?;
        if p.data.len() != data.len() {
            return Err(Error::Shape {
                kind: "set_param",
                lhs: p.shape.clone(),
                rhs: vec![data.len()],
            });
        }
        p.data = data;
        Ok(())
    }

    /// Number of discriminator layers, i.e. number of taps.
    pub fn layer_count(&self) -> usize {
        self.spec.hidden_widths.len() + 1
    }

    /// FNV-1a over parameter names and value bits.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        for p in &self.params {
            bytes.extend_from_slice(p.name.as_bytes());
            for v in &p.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a(&bytes)
    }

    pub(crate) fn spectral_mut(&mut self) -> &mut [Option<SpectralState>] {
        &mut self.spectral
    }

    /// Materializes the parameters for one step. With a tape, parameters
    /// become gradient-requiring leaves; without, they are constants.
    pub fn bind(&mut self, tape: Option<&Tape>, sn: SnMode) -> Result<Bound> {
        let mut leaves = Vec::with_capacity(self.params.len());
        let mut weights = Vec::with_capacity(self.params.len());
        for (p, state) in self.params.iter().zip(self.spectral.iter_mut()) {
            let leaf = match tape {
                Some(tp) => tp.var(&p.tensor())?,
                None => p.tensor(),
            };
            let effective = match state {
                Some(st) => {
                    let iters = if sn == SnMode::Update { 1 } else { 0 };
                    let (w, next) = normalize_with(&leaf, st, iters)?;
                    if sn == SnMode::Update {
                        *st = next;
                    }
                    w
                }
                None => leaf.clone(),
            };
            leaves.push(leaf);
            weights.push(effective);
        }
        Ok(Bound {
            spec: self.spec.clone(),
            role: self.role,
            leaves,
            weights,
            forwards: Cell::new(0),
        })
    }

    /// Binds (updating spectral state once) and runs the discriminator.
    pub fn discriminator_forward(&mut self, tape: Option<&Tape>, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        self.bind(tape, SnMode::Update)?.discriminator_forward(x)
    }

    pub fn generator_forward(&mut self, tape: Option<&Tape>, z: &Tensor) -> Result<Tensor> {
        self.bind(tape, SnMode::Frozen)?.generator_forward(z)
    }
}

/// A model's parameters materialized for one step.
pub struct Bound {
    spec: ArchSpec,
    role: Role,
    leaves: Vec<Tensor>,
    weights: Vec<Tensor>,
    forwards: Cell<usize>,
}

impl Bound {
    /// Raw parameter tensors, in `Model::params` order.
    pub fn leaves(&self) -> &[Tensor] {
        &self.leaves
    }

    pub fn forward_count(&self) -> usize {
        self.forwards.get()
    }

    fn w(&self, i: usize) -> &Tensor {
        &self.weights[i]
    }

    fn check_batch(&self, x: &Tensor, expect: &[usize], kind: &'static str) -> Result<usize> {
        let s = x.shape();
        if s.is_empty() || &s[1..] != expect || s[0] == 0 {
            let mut want = vec![s.first().copied().unwrap_or(0)];
            want.extend_from_slice(expect);
            return Err(Error::Shape {
                kind,
                lhs: s.to_vec(),
                rhs: want,
            });
        }
        Ok(s[0])
    }

    /// Returns per-sample logits `[n, out]` and the pre-activation output of
    /// every layer; the last tap is the logits tensor itself.
    pub fn discriminator_forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        if self.role == Role::Generator {
            return Err(Error::invalid("role", "discriminator_forward on a generator"));
        }
        let n = self.check_batch(x, &self.spec.input_shape, "discriminator_forward")?;
        self.forwards.set(self.forwards.get() + 1);
        let act = self.spec.activation;
        let mut taps = Vec::with_capacity(self.spec.hidden_widths.len() + 1);
        let layers = self.spec.hidden_widths.len();
        let logits = match self.spec.family {
            Family::Mlp => {
                let mut h = t::reshape(x, &[n, self.spec.sample_dim()])?;
                for i in 0..=layers {
                    let pre = t::add_bias(&t::matmul(&h, self.w(2 * i))?, self.w(2 * i + 1))?;
                    taps.push(pre.clone());
                    if i < layers {
                        h = act.apply(&pre)?;
                    }
                }
                taps.last().cloned().expect("at least one layer")
            }
            Family::Conv => {
                let mut h = x.clone();
                for i in 0..layers {
                    let pre = t::add_bias(&t::conv2d(&h, self.w(2 * i))?, self.w(2 * i + 1))?;
                    taps.push(pre.clone());
                    let mut a = act.apply(&pre)?;
                    if self.spec.residual && h.shape() == a.shape() {
                        a = t::add(&a, &h)?;
                    }
                    if i < 2 {
                        a = t::avg_pool2(&a)?;
                    }
                    h = a;
                }
                let flat = t::flatten_rows(&h)?;
                let out = t::add_bias(&t::matmul(&flat, self.w(2 * layers))?, self.w(2 * layers + 1))?;
                taps.push(out.clone());
                out
            }
        };
        Ok((logits, taps))
    }

    /// Maps latents `[n, latent_dim]` to samples `[n, ...input_shape]`.
    pub fn generator_forward(&self, z: &Tensor) -> Result<Tensor> {
        if self.role != Role::Generator {
            return Err(Error::invalid("role", "generator_forward on a non-generator"));
        }
        let n = self.check_batch(z, &[self.spec.latent_dim], "generator_forward")?;
        self.forwards.set(self.forwards.get() + 1);
        let act = self.spec.activation;
        let out = match self.spec.family {
            Family::Mlp => {
                let layers = self.spec.hidden_widths.len();
                let mut h = z.clone();
                for i in 0..layers {
                    h = act.apply(&t::add_bias(&t::matmul(&h, self.w(2 * i))?, self.w(2 * i + 1))?)?;
                }
                t::add_bias(&t::matmul(&h, self.w(2 * layers))?, self.w(2 * layers + 1))?
            }
            Family::Conv => {
                let chans = generator_channels(&self.spec.hidden_widths);
                let s = self.spec.input_shape[1] / 4;
                let proj = act.apply(&t::add_bias(&t::matmul(z, self.w(0))?, self.w(1))?)?;
                let mut h = t::reshape(&proj, &[n, chans[0], s, s])?;
                for i in 0..2 {
                    h = t::upsample2(&h)?;
                    h = act.apply(&t::add_bias(&t::conv2d(&h, self.w(2 + 2 * i))?, self.w(3 + 2 * i))?)?;
                }
                t::add_bias(&t::conv2d(&h, self.w(6))?, self.w(7))?
            }
        };
        let out = if self.spec.is_image() { t::tanh(&out)? } else { out };
        let mut shape = vec![n];
        shape.extend_from_slice(&self.spec.input_shape);
        t::reshape(&out, &shape)
    }
}
