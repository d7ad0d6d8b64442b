//! End-to-end acceptance checks. Runs as a plain binary (no libtest) and
//! prints one PASS/FAIL line per criterion; the exit status is nonzero if
//! any criterion fails.
//!
//! `cargo test -p crgan-harness --test acceptance -- 3 5` runs a subset.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use crgan::augment::AugmentSpec;
use crgan::data::{gen_ring, Dataset};
use crgan::eval::{frechet_distance, GaussianStats};
use crgan::losses::{disc_loss, LossKind};
use crgan::nn::{build_model, spectral_normalize, Bound, Model, Role, SnMode, SpectralState};
use crgan::optim::preset;
use crgan::regularizers::{dragan_penalty, gradient_penalty, jsr_penalty, CrMode, RegKind, RegSpec};
use crgan::tensor::{self as t, finite_diff_check, gradient, Tape, Tensor};
use crgan::trainer::{probe_discriminator_accuracy, train, RunResult, Trainer, TrainConfig, TIMING_STEPS, TIMING_WARMUP};
use crgan::Rng;
use crgan_harness::config::{parse_config, ExperimentConfig};
use crgan_harness::grid::{GridPoint, GridSpec, AXES};
use crgan_harness::runner::{run_dir, run_grid, RunOptions, D_CKPT, G_CKPT, METRICS_FILE, RESOLVED_FILE};
use crgan_harness::timing::time_variants;
use nalgebra::DMatrix;

type Check = Result<String, String>;

fn s<E: Display>(e: E) -> String {
    e.to_string()
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape.to_vec(), data).unwrap()
}

// ---------------------------------------------------------------- 1

/// Magnitudes in [0.2, 2] with random sign, kept 0.05 away from `kink`.
fn probe_values(rng: &mut Rng, n: usize, positive: bool, kink: Option<f64>) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v = if positive {
                0.5 + 1.5 * rng.uniform()
            } else {
                let m = 0.2 + 1.8 * rng.uniform();
                if rng.bernoulli(0.5) { -m } else { m }
            };
            if kink.is_none_or(|k| (v - k).abs() >= 0.05) {
                break v;
            }
        })
        .collect()
}

type Op = Box<dyn Fn(&[Tensor]) -> crgan::Result<Tensor>>;

fn primitives() -> Vec<(&'static str, Vec<Vec<usize>>, bool, Option<f64>, Op)> {
    fn op(f: impl Fn(&[Tensor]) -> crgan::Result<Tensor> + 'static) -> Op {
        Box::new(f)
    }
    let sh = |v: &[&[usize]]| v.iter().map(|s| s.to_vec()).collect::<Vec<_>>();
    vec![
        ("add", sh(&[&[3, 2], &[3, 2]]), false, None, op(|x| t::add(&x[0], &x[1]))),
        ("sub", sh(&[&[3, 2], &[3, 2]]), false, None, op(|x| t::sub(&x[0], &x[1]))),
        ("mul", sh(&[&[3, 2], &[3, 2]]), false, None, op(|x| t::mul(&x[0], &x[1]))),
        ("matmul", sh(&[&[3, 4], &[4, 2]]), false, None, op(|x| t::matmul(&x[0], &x[1]))),
        ("transpose", sh(&[&[3, 4]]), false, None, op(|x| t::transpose(&x[0]))),
        ("scale", sh(&[&[5]]), false, None, op(|x| t::scale(&x[0], -1.7))),
        ("add_scalar", sh(&[&[5]]), false, None, op(|x| t::add_scalar(&x[0], 0.3))),
        ("neg", sh(&[&[5]]), false, None, op(|x| t::neg(&x[0]))),
        ("relu", sh(&[&[6]]), false, Some(0.0), op(|x| t::relu(&x[0]))),
        ("leaky_relu", sh(&[&[6]]), false, Some(0.0), op(|x| t::leaky_relu(&x[0]))),
        ("sigmoid", sh(&[&[6]]), false, None, op(|x| t::sigmoid(&x[0]))),
        ("log_sigmoid", sh(&[&[6]]), false, None, op(|x| t::log_sigmoid(&x[0]))),
        ("tanh", sh(&[&[6]]), false, None, op(|x| t::tanh(&x[0]))),
        ("square", sh(&[&[6]]), false, None, op(|x| t::square(&x[0]))),
        ("sqrt", sh(&[&[6]]), true, None, op(|x| t::sqrt(&x[0]))),
        ("exp", sh(&[&[6]]), false, None, op(|x| t::exp(&x[0]))),
        ("recip", sh(&[&[6]]), true, None, op(|x| t::recip(&x[0]))),
        ("min_with_const", sh(&[&[6]]), false, Some(0.3), op(|x| t::min_with_const(&x[0], 0.3))),
        ("reduce_sum", sh(&[&[2, 3]]), false, None, op(|x| t::reduce_sum(&x[0]))),
        ("reduce_mean", sh(&[&[2, 3]]), false, None, op(|x| t::reduce_mean(&x[0]))),
        ("l2_norm_sq", sh(&[&[3, 4]]), false, None, op(|x| t::l2_norm_sq(&x[0]))),
        ("sum_rows", sh(&[&[3, 2, 2]]), false, None, op(|x| t::sum_rows(&x[0]))),
        ("broadcast_rows", sh(&[&[3, 1]]), false, None, op(|x| t::broadcast_rows(&x[0], &[3, 4]))),
        ("broadcast_scalar", sh(&[&[]]), false, None, op(|x| t::broadcast_scalar(&x[0], &[2, 3]))),
        ("mul_scalar", sh(&[&[2, 3], &[]]), false, None, op(|x| t::mul_scalar(&x[0], &x[1]))),
        ("add_bias", sh(&[&[2, 3, 2, 2], &[3]]), false, None, op(|x| t::add_bias(&x[0], &x[1]))),
        ("bias_reduce", sh(&[&[2, 3, 2]]), false, None, op(|x| t::bias_reduce(&x[0]))),
        ("bias_broadcast", sh(&[&[3]]), false, None, op(|x| t::bias_broadcast(&x[0], &[2, 3, 2]))),
        ("conv2d", sh(&[&[2, 2, 4, 4], &[3, 2, 3, 3]]), false, None, op(|x| t::conv2d(&x[0], &x[1]))),
        ("kernel_flip", sh(&[&[2, 3, 3, 3]]), false, None, op(|x| t::kernel_flip(&x[0]))),
        ("conv2d_kernel_grad", sh(&[&[2, 2, 3, 3], &[2, 3, 3, 3]]), false, None, op(|x| t::conv2d_kernel_grad(&x[0], &x[1]))),
        ("avg_pool2", sh(&[&[2, 2, 4, 4]]), false, None, op(|x| t::avg_pool2(&x[0]))),
        ("upsample2", sh(&[&[1, 2, 2, 3]]), false, None, op(|x| t::upsample2(&x[0]))),
        ("concat_rows", sh(&[&[2, 3], &[1, 3]]), false, None, op(|x| t::concat_rows(&[&x[0], &x[1]]))),
        ("slice_rows", sh(&[&[4, 2]]), false, None, op(|x| t::slice_rows(&x[0], 1, 2))),
        ("pad_rows", sh(&[&[2, 2]]), false, None, op(|x| t::pad_rows(&x[0], 1, 4))),
        ("reshape", sh(&[&[2, 3]]), false, None, op(|x| t::reshape(&x[0], &[3, 2]))),
    ]
}

fn small_disc(image: bool, seed: u64) -> Model {
    let text = if image {
        "[dataset]\nkind = \"sprites\"\nside = 8\n[model]\nd_hidden = [3, 4]\n"
    } else {
        "[dataset]\nkind = \"ring\"\n[model]\nd_hidden = [6, 5]\n"
    };
    let cfg = parse_config(text).unwrap();
    let mut d = build_model(&cfg.arch(false), Role::Discriminator, seed).unwrap();
    // A few updates move the stored singular vectors off their initial draw.
    for _ in 0..3 {
        d.bind(None, SnMode::Update).unwrap();
    }
    d
}

fn flat_params(m: &Model) -> Vec<f64> {
    m.params().iter().flat_map(|p| p.data.clone()).collect()
}

fn set_flat(m: &mut Model, flat: &[f64]) {
    let mut at = 0;
    let names: Vec<(String, usize)> = m.params().iter().map(|p| (p.name.clone(), p.data.len())).collect();
    for (name, n) in names {
        m.set_param(&name, flat[at..at + n].to_vec()).unwrap();
        at += n;
    }
}

/// Reverse-mode gradient of `f` with respect to every parameter of `d`,
/// next to central differences of the same function.
fn param_gradients(d: &Model, f: &dyn Fn(&Bound, &Tape) -> crgan::Result<Tensor>, eps: f64) -> crgan::Result<(Vec<f64>, Vec<f64>)> {
    let mut m = d.clone();
    let tape = Tape::new();
    let b = m.bind(Some(&tape), SnMode::Frozen)?;
    let y = f(&b, &tape)?;
    let leaves: Vec<&Tensor> = b.leaves().iter().collect();
    let analytic: Vec<f64> = gradient(&y, &leaves, false)?.iter().flat_map(|g| g.to_vec()).collect();
    let base = flat_params(d);
    let mut numeric = Vec::with_capacity(base.len());
    let mut eval = |v: Vec<f64>| -> crgan::Result<f64> {
        set_flat(&mut m, &v);
        let tape = Tape::new();
        let b = m.bind(None, SnMode::Frozen)?;
        Ok(f(&b, &tape)?.item())
    };
    for i in 0..base.len() {
        let (mut p, mut q) = (base.clone(), base.clone());
        p[i] += eps;
        q[i] -= eps;
        numeric.push((eval(p)? - eval(q)?) / (2.0 * eps));
    }
    Ok((analytic, numeric))
}

/// Relative error with a 1e-4 floor on the denominator: gradients that are
/// exactly zero (a hinge past its margin, say) are compared absolutely,
/// since central differences carry ~1e-10 of roundoff there.
fn floored_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs() / a.abs().max(1e-4)).fold(0.0, f64::max)
}

/// Central differences at h = 1e-6, or `None` when they disagree with
/// h = 1e-7: a leaky-relu kink lies within reach of the probe point.
fn smooth_gradients(d: &Model, f: &dyn Fn(&Bound, &Tape) -> crgan::Result<Tensor>) -> crgan::Result<Option<(Vec<f64>, Vec<f64>)>> {
    let (a, n) = param_gradients(d, f, 1e-6)?;
    let (_, fine) = param_gradients(d, f, 1e-7)?;
    // Roundoff at h = 1e-7 is a few 1e-9; a crossed kink shifts by far more.
    let smooth = n.iter().zip(&fine).all(|(x, y)| (x - y).abs() <= 1e-7 + 1e-5 * x.abs());
    Ok(smooth.then_some((a, n)))
}

fn batch_for(image: bool, n: usize, rng: &mut Rng) -> Tensor {
    if image {
        tensor(&[n, 1, 8, 8], rng.normal_vec(n * 64, 0.7))
    } else {
        tensor(&[n, 2], rng.normal_vec(n * 2, 1.5))
    }
}

fn criterion_1() -> Check {
    let mut rng = Rng::new(101, "acceptance-fd");
    let cases = primitives();
    let mut worst_prim: f64 = 0.0;
    for (name, shapes, positive, kink, f) in &cases {
        for _ in 0..10 {
            let inputs: Vec<Tensor> = shapes
                .iter()
                .map(|sh| tensor(sh, probe_values(&mut rng, sh.iter().product(), *positive, *kink)))
                .collect();
            let out = f(&inputs).map_err(s)?;
            let w = tensor(out.shape(), probe_values(&mut rng, out.numel(), false, None));
            for k in 0..inputs.len() {
                let err = finite_diff_check(
                    |x| {
                        let mut args = inputs.clone();
                        args[k] = x.clone();
                        t::reduce_sum(&t::mul(&f(&args)?, &w)?)
                    },
                    &inputs[k],
                    1e-5,
                )
                .map_err(s)?;
                ensure!(err < 1e-5, "primitive {name}: relative error {err:e}");
                worst_prim = worst_prim.max(err);
            }
        }
    }

    // Discriminator losses composed with full mlp and conv discriminators
    // (spectral norm on), differentiated with respect to every parameter.
    let mut worst_loss: f64 = 0.0;
    let mut redrawn = 0;
    for image in [false, true] {
        for kind in LossKind::ALL {
            let mut seed = 0;
            for _ in 0..10 {
                let (a, n) = loop {
                    let d = small_disc(image, seed);
                    seed += 1;
                    let (real, fake) = (batch_for(image, 4, &mut rng), batch_for(image, 4, &mut rng));
                    let f = |b: &Bound, _: &Tape| disc_loss(kind, &b.discriminator_forward(&real)?.0, &b.discriminator_forward(&fake)?.0);
                    match smooth_gradients(&d, &f).map_err(s)? {
                        Some(g) => break g,
                        None => redrawn += 1,
                    }
                };
                let err = floored_error(&a, &n);
                ensure!(err < 1e-5, "{kind} loss, {} discriminator: relative error {err:e}", if image { "conv" } else { "mlp" });
                worst_loss = worst_loss.max(err);
            }
        }
    }

    // Second order: mean ‖∇ₓD(x)‖² differentiated with respect to the
    // parameters through the recorded backward pass.
    let mut worst_2nd: f64 = 0.0;
    for image in [false, true] {
        let mut seed = 100;
        for _ in 0..10 {
            let (a, n) = loop {
                let d = small_disc(image, seed);
                seed += 1;
                let x = batch_for(image, 3, &mut rng);
                let f = |b: &Bound, tape: &Tape| {
                    let xv = tape.var(&x)?;
                    let out = t::reduce_sum(&b.discriminator_forward(&xv)?.0)?;
                    let gx = gradient(&out, &[&xv], true)?.remove(0);
                    t::scale(&t::reduce_sum(&t::l2_norm_sq(&gx)?)?, 1.0 / 3.0)
                };
                match smooth_gradients(&d, &f).map_err(s)? {
                    Some(g) => break g,
                    None => redrawn += 1,
                }
            };
            let err = floored_error(&a, &n);
            ensure!(err < 1e-4, "‖∇ₓD‖², {}: relative error {err:e}", if image { "conv" } else { "mlp" });
            worst_2nd = worst_2nd.max(err);
        }
    }
    Ok(format!(
        "{} primitives worst {worst_prim:.1e}; ns/hinge/wasserstein D losses worst {worst_loss:.1e}; \
         second order worst {worst_2nd:.1e}; {redrawn} probes redrawn at activation kinks",
        cases.len()
    ))
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Check {
    let mut rng = Rng::new(102, "acceptance-closed-forms");
    let mut dr_spec = RegSpec::new(RegKind::Dr);
    dr_spec.dr_noise_scale = 0.0;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dim = 1 + rng.below(8) as usize;
        let w = tensor(&[dim, 1], rng.normal_vec(dim, 1.5));
        let norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let linear = |x: &Tensor| t::matmul(x, &w);
        let real = tensor(&[6, dim], rng.normal_vec(6 * dim, 1.0));
        let fake = tensor(&[6, dim], rng.normal_vec(6 * dim, 1.0));
        let tape = Tape::new();
        let gp = gradient_penalty(&linear, &tape, &real, &fake, &mut rng).map_err(s)?.item();
        let jsr = jsr_penalty(&linear, &tape, &real, &fake).map_err(s)?.item();
        let dr = dragan_penalty(&linear, &tape, &real, &mut rng, &dr_spec).map_err(s)?.item();
        let want_gp = (norm - 1.0).powi(2);
        for (name, got, want) in [("gp", gp, want_gp), ("jsr", jsr, 2.0 * norm * norm), ("dr", dr, want_gp)] {
            let e = (got - want).abs();
            ensure!(e <= 1e-9, "{name} at ‖w‖ = {norm}: {got} vs {want}");
            worst = worst.max(e);
        }
    }
    Ok(format!("100 linear critics, worst absolute error {worst:.1e}"))
}

// ---------------------------------------------------------------- 3

fn small_train_config(image: bool, reg: &str, steps: usize) -> (TrainConfig, Dataset) {
    let text = if image {
        format!(
            "[run]\nsteps = {steps}\neval_every = 20\nbatch_size = 16\n[dataset]\nkind = \"sprites\"\nside = 8\nn = 256\n\
             [model]\ng_hidden = [4, 4]\nd_hidden = [4, 8]\nlatent_dim = 6\n[reg]\nkind = \"{reg}\"\n\
             [augment]\nspec = \"shiftflip:1\"\n[eval]\nsamples = 100\nfeature_dim = 8\nprobe_n = 50\n"
        )
    } else {
        format!(
            "[run]\nsteps = {steps}\neval_every = 50\nbatch_size = 32\n[dataset]\nkind = \"ring\"\nn = 2000\n\
             [model]\ng_hidden = [16, 16]\nd_hidden = [16, 16]\n[reg]\nkind = \"{reg}\"\n\
             [eval]\nsamples = 200\nfeature_dim = 8\nprobe_n = 100\n"
        )
    };
    let cfg = parse_config(&text).unwrap();
    let data = cfg.dataset.load().unwrap();
    (cfg.train_config(&data, 7).unwrap(), data)
}

fn param_bits(m: &Model) -> Vec<u64> {
    m.params().iter().flat_map(|p| p.data.iter().map(|v| v.to_bits())).collect()
}

fn trajectory(r: &RunResult) -> Vec<(usize, u64, u64, u64)> {
    r.records.iter().map(|x| (x.step, x.l_d.to_bits(), x.l_g.to_bits(), x.fd.to_bits())).collect()
}

fn criterion_3() -> Check {
    let mut compared = 0;
    for image in [false, true] {
        let (base_cfg, data) = small_train_config(image, "none", 100);
        let base = train(&base_cfg, &data, &mut ()).map_err(s)?;
        for (lambda, mode) in [(10.0, CrMode::Real), (0.37, CrMode::Fake), (5000.0, CrMode::All)] {
            let (mut cfg, _) = small_train_config(image, "cr", 100);
            cfg.augment = AugmentSpec::Identity;
            cfg.reg.lambda = lambda;
            cfg.reg.cr_mode = mode;
            let cr = train(&cfg, &data, &mut ()).map_err(s)?;
            ensure!(param_bits(&cr.g) == param_bits(&base.g), "generator differs at λ = {lambda}");
            ensure!(param_bits(&cr.d) == param_bits(&base.d), "discriminator differs at λ = {lambda}");
            ensure!(cr.d.spectral_states() == base.d.spectral_states(), "spectral state differs at λ = {lambda}");
            ensure!(trajectory(&cr) == trajectory(&base), "metrics differ at λ = {lambda}");
            compared += 1;
        }
    }

    let mut augmentations = 0;
    for (image, augs) in [(false, vec!["noise:0.1", "noise:0.5"]), (true, vec!["shiftflip:2", "cutout:4", "shiftflip:1+cutout:2", "noise:0.2"])] {
        let (base_cfg, data) = small_train_config(image, "none", 10);
        let z_dim = base_cfg.g_arch.latent_dim;
        let z = tensor(&[16, z_dim], Rng::new(3, "z").normal_vec(16 * z_dim, 1.0));
        let grads = |cfg: TrainConfig| -> Result<Vec<u64>, String> {
            let mut tr = Trainer::new(cfg, &data).map_err(s)?;
            let (_, g) = tr.generator_gradients(&z).map_err(s)?;
            Ok(g.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect())
        };
        let reference = grads(base_cfg)?;
        for aug in augs {
            let (mut cfg, _) = small_train_config(image, "cr", 10);
            cfg.augment = aug.parse().map_err(s)?;
            cfg.reg.lambda = 10.0;
            ensure!(grads(cfg)? == reference, "generator gradient differs under {aug}");
            augmentations += 1;
        }
    }
    Ok(format!(
        "identity-augmentation CR matched the baseline bit for bit in {compared} runs; generator gradients identical under {augmentations} augmentations"
    ))
}

// ---------------------------------------------------------------- 4

/// `rows × cols` with random singular vectors and σ₂ ≤ σ₁ / 1.1.
fn gapped_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Vec<f64> {
    let r = rows.min(cols);
    let orth = |n: usize, rng: &mut Rng| DMatrix::from_row_slice(n, r, &rng.normal_vec(n * r, 1.0)).qr().q();
    let (u, v) = (orth(rows, rng), orth(cols, rng));
    let top = 0.1 + 9.9 * rng.uniform();
    let mut sv = DMatrix::zeros(r, r);
    sv[(0, 0)] = top;
    for i in 1..r {
        sv[(i, i)] = top / 1.1 * rng.uniform();
    }
    let w = u * sv * v.transpose();
    (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| w[(i, j)]).collect()
}

fn criterion_4() -> Check {
    let mut rng = Rng::new(104, "acceptance-sn");
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut largest = (0, 0);
    for k in 0..100 {
        let (rows, cols) = if k == 0 { (64, 64) } else { (1 + rng.below(64) as usize, 1 + rng.below(64) as usize) };
        let w = tensor(&[rows, cols], gapped_matrix(rows, cols, &mut rng));
        let state = SpectralState::random(rows, &mut Rng::new(k, "u"));
        let (n, _) = spectral_normalize(&w, &state, 50).map_err(s)?;
        let top = DMatrix::from_row_slice(rows, cols, n.data()).singular_values().max();
        ensure!((0.999..=1.0 + 1e-6).contains(&top), "{rows}x{cols}: normalized top singular value {top}");
        lo = lo.min(top);
        hi = hi.max(top);
        if rows * cols > largest.0 * largest.1 {
            largest = (rows, cols);
        }
    }
    Ok(format!("100 matrices up to {}x{}, 50 power iterations: top singular value in [{lo:.9}, {hi:.9}]", largest.0, largest.1))
}

// ---------------------------------------------------------------- 5

fn random_psd(n: usize, rng: &mut Rng) -> Vec<f64> {
    let a = DMatrix::from_row_slice(n, n, &rng.normal_vec(n * n, 1.0));
    let m = &a * a.transpose() + DMatrix::identity(n, n) * 1e-3;
    (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
}

/// ‖μa − μb‖² + tr Σa + tr Σb − 2 Σᵢ √λᵢ(ΣaΣb), eigenvalues of the
/// non-symmetric product taken directly.
fn brute_force_fd(a: &GaussianStats, b: &GaussianStats) -> f64 {
    let n = a.mean.len();
    let ma = DMatrix::from_row_slice(n, n, &a.cov);
    let mb = DMatrix::from_row_slice(n, n, &b.cov);
    let tr_sqrt: f64 = (&ma * &mb).complex_eigenvalues().iter().map(|z| z.re.max(0.0).sqrt()).sum();
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    mean + ma.trace() + mb.trace() - 2.0 * tr_sqrt
}

fn criterion_5() -> Check {
    let g = |m: f64, v: f64| GaussianStats { mean: vec![m], cov: vec![v] };
    let shift = frechet_distance(&g(0.0, 1.0), &g(3.0, 1.0)).map_err(s)?;
    ensure!((shift - 9.0).abs() <= 1e-6, "N(0,1) vs N(3,1): {shift}");
    let spread = frechet_distance(&g(0.0, 1.0), &g(0.0, 4.0)).map_err(s)?;
    ensure!((spread - 1.0).abs() <= 1e-6, "N(0,1) vs N(0,4): {spread}");

    let mut rng = Rng::new(105, "acceptance-fd-oracle");
    let mut worst: f64 = 0.0;
    for k in 0..200 {
        let n = 1 + k % 8;
        let a = GaussianStats { mean: rng.normal_vec(n, 1.0), cov: random_psd(n, &mut rng) };
        let b = GaussianStats { mean: rng.normal_vec(n, 1.0), cov: random_psd(n, &mut rng) };
        let fd = frechet_distance(&a, &b).map_err(s)?;
        let oracle = brute_force_fd(&a, &b);
        ensure!((fd - oracle).abs() <= 1e-6, "dim {n}: {fd} vs oracle {oracle}");
        worst = worst.max((fd - oracle).abs());
    }
    Ok(format!("closed forms {shift:.9} and {spread:.9}; 200 random pairs (dim 1..8) within {worst:.1e} of the eigenvalue oracle"))
}

// ---------------------------------------------------------------- 6

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

fn point(cfg: ExperimentConfig) -> GridPoint {
    GridPoint { id: cfg.run.id.clone(), axes: Default::default(), config: cfg }
}

fn criterion_6() -> Check {
    let dir = tempfile::tempdir().map_err(s)?;
    let load = |name: &str| crgan_harness::load_config(&root().join("configs").join(name)).map_err(s);
    let (cr, base) = (load("ring_cr.toml")?, load("ring_baseline.toml")?);
    ensure!(cr.run.repeat == 5 && base.run.repeat == 5, "shipped configs must run 5 seeds");
    ensure!(cr.reg.kind == RegKind::Cr && cr.reg.lambda == 10.0 && base.reg.kind == RegKind::None, "unexpected regularizers");
    ensure!(cr.optimizer.preset.to_string() == "C" && base.optimizer.preset.to_string() == "C", "preset must be C");
    ensure!(cr.loss.kind == LossKind::Ns && cr.run.steps == 20_000, "NS loss, 20k steps");
    let started = Instant::now();
    let mut opts = RunOptions::new(dir.path());
    opts.report = false;
    let outcome = run_grid(&[point(cr), point(base)], &opts).map_err(s)?;
    let pick = |id: &str| outcome.rows.iter().filter(|r| r.run_id == id).collect::<Vec<_>>();
    let (cr_rows, base_rows) = (pick("ring_cr"), pick("ring_baseline"));
    ensure!(cr_rows.len() == 5 && base_rows.len() == 5, "expected 5 runs per arm");
    let fd = |rows: &[&crgan_harness::ReportRow]| median(rows.iter().map(|r| r.best_fd.unwrap_or(f64::INFINITY)).collect());
    let cov = |rows: &[&crgan_harness::ReportRow]| median(rows.iter().map(|r| r.coverage.unwrap_or(0) as f64).collect());
    let per_seed = |rows: &[&crgan_harness::ReportRow]| {
        rows.iter()
            .map(|r| format!("{:.4}/{}", r.best_fd.unwrap_or(f64::NAN), r.coverage.map_or("-".into(), |c| c.to_string())))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let (fd_cr, fd_base, cov_cr, cov_base) = (fd(&cr_rows), fd(&base_rows), cov(&cr_rows), cov(&base_rows));
    let detail = format!(
        "median best FD cr {fd_cr:.4} vs none {fd_base:.4}; median coverage cr {cov_cr} vs none {cov_base} \
         (per seed fd/coverage: cr [{}], none [{}]; {:.0} s)",
        per_seed(&cr_rows),
        per_seed(&base_rows),
        started.elapsed().as_secs_f64()
    );
    ensure!(fd_cr <= fd_base && cov_cr >= cov_base, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Check {
    let cfg = crgan_harness::load_config(&root().join("configs/timing_conv.toml")).map_err(s)?;
    let data = cfg.dataset.load().map_err(s)?;
    let rows = time_variants(&cfg, &data, &[RegKind::None, RegKind::Cr, RegKind::Gp], TIMING_WARMUP, TIMING_STEPS).map_err(s)?;
    let ms = |k: &str| rows.iter().find(|r| r.reg == k).map(|r| r.mean_ms).unwrap();
    let (none, cr, gp) = (ms("none"), ms("cr"), ms("gp"));
    let detail = format!(
        "per D step over {TIMING_STEPS} steps: none {none:.2} ms, cr {cr:.2} ms, gp {gp:.2} ms; gp/cr {:.2}, cr/none {:.2}",
        gp / cr,
        cr / none
    );
    ensure!(gp / cr > 1.2 && cr / none < 2.0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Check {
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut files = 0;
    for entry in std::fs::read_dir(root().join("grids")).map_err(s)? {
        let path = entry.map_err(s)?.path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        files += 1;
        let spec = GridSpec::load(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        for p in spec.expand().map_err(s)? {
            seen.extend(p.axes);
        }
    }
    let required: &[(&str, &[&str])] = &[
        ("loss", &["ns", "hinge", "wasserstein"]),
        ("reg", &["none", "cr", "gp", "dr", "jsr"]),
        ("lambda", &["0.1", "1", "10", "100"]),
        ("preset", &["A", "B", "C", "D", "E", "F", "G"]),
        ("sn", &["true", "false"]),
        ("family", &["mlp", "conv"]),
        ("residual", &["true", "false"]),
        ("cr_mode", &["real", "fake", "all"]),
        ("augment_only", &["true", "false"]),
    ];
    for (axis, values) in required {
        for v in *values {
            ensure!(seen.contains(&(axis.to_string(), v.to_string())), "no shipped grid covers {axis} = {v}");
        }
    }
    for (axis, _, _) in AXES {
        ensure!(seen.iter().any(|(a, _)| a == axis), "no shipped grid varies {axis}");
    }
    let augments = seen.iter().filter(|(a, _)| a == "augment").count();
    ensure!(augments >= 3, "only {augments} augmentation settings");
    let rules: Vec<&str> = seen.iter().filter(|(a, _)| a == "layer_rule").map(|(_, v)| v.as_str()).collect();
    ensure!(
        rules.contains(&"final") && rules.iter().any(|r| r.ends_with(":invdim")) && rules.iter().any(|r| r.ends_with(":equal")),
        "layer rules {rules:?}"
    );

    let base = std::fs::read_to_string(root().join("configs/ring_cr.toml")).map_err(s)?;
    let sweep = GridSpec::sweep_lambda(&base).map_err(s)?.expand().map_err(s)?;
    let cells: BTreeSet<(String, u64)> = sweep.iter().map(|p| (p.config.reg.kind.to_string(), p.config.reg.lambda.to_bits())).collect();
    let mut want = BTreeSet::new();
    for reg in ["cr", "gp", "dr", "jsr"] {
        for l in [0.1f64, 1.0, 10.0, 100.0] {
            want.insert((reg.to_string(), l.to_bits()));
        }
    }
    ensure!(sweep.len() == 16 && cells == want, "lambda sweep has {} runs, cells {cells:?}", sweep.len());
    let shipped = GridSpec::load(&root().join("grids/lambda_sweep.toml")).map_err(s)?.expand().map_err(s)?;
    let shipped_cells: BTreeSet<(String, u64)> = shipped.iter().map(|p| (p.config.reg.kind.to_string(), p.config.reg.lambda.to_bits())).collect();
    ensure!(shipped_cells == want, "grids/lambda_sweep.toml does not match the sweep matrix");

    // Learning rate, β1, β2, discriminator steps per generator step.
    let table = [
        ("A", 0.0001, 0.5, 0.9, 5),
        ("B", 0.0001, 0.5, 0.999, 1),
        ("C", 0.0002, 0.5, 0.999, 1),
        ("D", 0.0002, 0.5, 0.999, 5),
        ("E", 0.001, 0.5, 0.9, 5),
        ("F", 0.001, 0.5, 0.999, 5),
        ("G", 0.001, 0.9, 0.999, 5),
    ];
    for (id, lr, b1, b2, n_dis) in table {
        let p = preset(id).map_err(s)?;
        ensure!((p.lr, p.beta1, p.beta2, p.n_dis) == (lr, b1, b2, n_dis), "preset {id}: {p:?}");
        let cfg = parse_config(&format!("[dataset]\nkind = \"ring\"\n[optimizer]\npreset = \"{id}\"\n")).map_err(s)?;
        let (d, g) = (cfg.optimizer.d_adam(), cfg.optimizer.g_adam());
        ensure!(d == p && g == p, "preset {id} resolves to {d:?} / {g:?}");
    }
    let presets = GridSpec::load(&root().join("grids/presets.toml")).map_err(s)?.expand().map_err(s)?;
    let ids: BTreeSet<String> = presets.iter().map(|p| p.config.optimizer.preset.to_string()).collect();
    ensure!(ids.len() == 7, "presets grid covers {ids:?}");
    Ok(format!("{files} grid files cover all {} axes; lambda sweep is the 16-cell matrix; presets A-G match the table", AXES.len()))
}

// ---------------------------------------------------------------- 9

fn crgan_bin(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crgan")).args(args).current_dir(cwd).output().map_err(s)?;
    ensure!(out.status.success(), "crgan {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn metrics_without_timing(path: &Path) -> Result<Vec<serde_json::Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).map_err(s)?;
            v.as_object_mut().ok_or("metrics line is not an object")?.remove("disc_step_seconds");
            Ok(v)
        })
        .collect()
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(s)?;
    let cwd = dir.path();
    let cases = [("smoke.toml", "smoke", None), ("sprites_cr.toml", "sprites_cr", Some("40"))];
    let mut checked = Vec::new();
    for (file, id, steps) in cases {
        let config = root().join("configs").join(file);
        let config = config.to_str().unwrap();
        let mut dirs = Vec::new();
        for out in ["a", "b"] {
            let mut args = vec!["train", config, "--out", out, "--seed", "11"];
            if let Some(n) = steps {
                args.extend(["--steps", n]);
            }
            crgan_bin(&args, cwd)?;
            dirs.push(run_dir(&cwd.join(out), id, 11));
        }
        // Third run from the first run's resolved config.
        let resolved = dirs[0].join(RESOLVED_FILE);
        crgan_bin(&["train", resolved.to_str().unwrap(), "--out", "c"], cwd)?;
        dirs.push(run_dir(&cwd.join("c"), id, 11));

        let metrics = metrics_without_timing(&dirs[0].join(METRICS_FILE))?;
        ensure!(!metrics.is_empty(), "{file}: no metrics");
        for other in &dirs[1..] {
            ensure!(metrics_without_timing(&other.join(METRICS_FILE))? == metrics, "{file}: metrics differ in {}", other.display());
            for ckpt in [G_CKPT, D_CKPT] {
                let a = std::fs::read(dirs[0].join(ckpt)).map_err(s)?;
                let b = std::fs::read(other.join(ckpt)).map_err(s)?;
                ensure!(a == b, "{file}: {ckpt} differs in {}", other.display());
            }
        }
        checked.push(format!("{file} ({} records)", metrics.len()));
    }
    Ok(format!("three runs each of {}: identical metrics and checkpoints", checked.join(", ")))
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Check {
    let text = "[run]\nid = \"aug_only\"\nsteps = 60\neval_every = 20\nbatch_size = 16\naugment_only = true\n\
                [dataset]\nkind = \"sprites\"\nside = 8\nn = 512\n[model]\ng_hidden = [4, 4]\nd_hidden = [4, 8]\n\
                [augment]\nspec = \"shiftflip:1\"\n[eval]\nsamples = 100\nfeature_dim = 8\nprobe_n = 100\n";
    let cfg = parse_config(text).map_err(s)?;
    let dir = tempfile::tempdir().map_err(s)?;
    let outcome = run_grid(&[point(cfg)], &RunOptions::new(dir.path())).map_err(s)?;
    let row = &outcome.rows[0];
    ensure!(!row.diverged && row.augment_only, "augment-only run did not complete");
    let lines = std::fs::read_to_string(run_dir(dir.path(), "aug_only", 0).join(METRICS_FILE)).map_err(s)?;
    let mut records = 0;
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).map_err(s)?;
        for key in ["acc_train", "acc_test"] {
            let a = v[key].as_f64().ok_or(format!("record without {key}: {l}"))?;
            ensure!((0.0..=1.0).contains(&a), "{key} = {a}");
        }
        records += 1;
    }
    ensure!(records == 3, "expected 3 checkpoints, got {records}");

    let (data, _) = gen_ring(8, 2.0, 0.02, 2000, 0).map_err(s)?;
    let g_spec = parse_config("[dataset]\nkind = \"ring\"\n[model]\ng_hidden = [8]\n").map_err(s)?.arch(true);
    let mut g = build_model(&g_spec, Role::Generator, 0).map_err(s)?;
    let g = g.bind(None, SnMode::Frozen).map_err(s)?;

    let constant = |x: &Tensor| Ok(Tensor::full(&[x.shape()[0], 1], 10.0));
    let (a, b) = probe_discriminator_accuracy(LossKind::Ns, &constant, &g, &data, 200, &mut Rng::new(0, "probe")).map_err(s)?;
    ensure!((a, b) == (0.5, 0.5), "constant +10 critic: {a} / {b}");

    // Real points lie near radius 2; an untrained generator stays near 0.
    let separating = |x: &Tensor| {
        let v: Vec<f64> = x.data().chunks(2).map(|p| p[0] * p[0] + p[1] * p[1] - 1.0).collect();
        Tensor::new(vec![v.len(), 1], v)
    };
    let (c, d) = probe_discriminator_accuracy(LossKind::Hinge, &separating, &g, &data, 200, &mut Rng::new(0, "probe")).map_err(s)?;
    ensure!((c, d) == (1.0, 1.0), "separating critic: {c} / {d}");

    let coin = std::cell::RefCell::new(Rng::new(5, "coin"));
    let random = |x: &Tensor| {
        let n = x.shape()[0];
        Tensor::new(vec![n, 1], coin.borrow_mut().normal_vec(n, 1.0))
    };
    let (e, f) = probe_discriminator_accuracy(LossKind::Ns, &random, &g, &data, 500, &mut Rng::new(1, "probe")).map_err(s)?;
    ensure!((0.35..=0.65).contains(&e) && (0.35..=0.65).contains(&f), "random critic: {e} / {f}");

    Ok(format!(
        "augment-only run logged train/test accuracy at {records} checkpoints (last {:.2}/{:.2}); probes: constant {a}, separating {c}, random {e:.3}/{f:.3}",
        row.acc_train.unwrap_or(f64::NAN),
        row.acc_test.unwrap_or(f64::NAN)
    ))
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Check); 10] = [
        (1, "autodiff finite differences", criterion_1),
        (2, "regularizer closed forms", criterion_2),
        (3, "consistency term stays out of the generator", criterion_3),
        (4, "spectral normalization vs SVD", criterion_4),
        (5, "Fréchet distance oracles", criterion_5),
        (6, "ring of eight: cr vs unregularized", criterion_6),
        (7, "discriminator step cost", criterion_7),
        (8, "grid coverage, lambda sweep, presets", criterion_8),
        (9, "train determinism", criterion_9),
        (10, "augmentation-only harness and accuracy probe", criterion_10),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|m| m.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
