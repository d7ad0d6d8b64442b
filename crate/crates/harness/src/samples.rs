//! PPM sample grids.

use std::path::Path;

use crgan::checkpoint;
use crgan::nn::{build_model, Model, Role};
use crgan::{Rng, Tensor};

use crate::config::parse_config;
use crate::error::{HarnessError, Result};
use crate::runner::{write_atomic, RESOLVED_FILE};

/// Maps `[-1, 1]` to `[0, 255]`, clamping outside values.
pub fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Binary PPM (P6) of `n_rows × n_cols` tiles; one-channel images become gray.
pub fn encode_ppm(samples: &[f64], shape: &[usize], n_rows: usize, n_cols: usize) -> Result<Vec<u8>> {
    let [c, h, w] = *shape else {
        return Err(HarnessError::Report(format!("sample grids need image samples, got shape {shape:?}")));
    };
    if c != 1 && c != 3 {
        return Err(HarnessError::Report(format!("sample grids need 1 or 3 channels, got {c}")));
    }
    let per = c * h * w;
    if samples.len() != n_rows * n_cols * per {
        return Err(HarnessError::Report("sample count does not match the grid".into()));
    }
    let (width, height) = (n_cols * w, n_rows * h);
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(width * height * 3);
    for y in 0..height {
        let (tr, iy) = (y / h, y % h);
        for x in 0..width {
            let (tc, ix) = (x / w, x % w);
            let img = &samples[(tr * n_cols + tc) * per..][..per];
            for ch in 0..3 {
                let plane = if c == 1 { 0 } else { ch };
                out.push(to_byte(img[(plane * h + iy) * w + ix]));
            }
        }
    }
    Ok(out)
}

pub fn emit_sample_grid(g: &mut Model, n_rows: usize, n_cols: usize, rng: &mut Rng, path: &Path) -> Result<()> {
    if !g.spec.is_image() {
        return Err(HarnessError::Report("sample grids need an image generator".into()));
    }
    if n_rows == 0 || n_cols == 0 {
        return Err(HarnessError::Report("grid needs at least one row and column".into()));
    }
    let n = n_rows * n_cols;
    let dim = g.spec.latent_dim;
    let z = Tensor::new(vec![n, dim], rng.normal_vec(n * dim, 1.0))?;
    let x = g.generator_forward(None, &z)?;
    let shape = g.spec.input_shape.clone();
    write_atomic(path, &encode_ppm(x.data(), &shape, n_rows, n_cols)?)
}

/// Rebuilds the generator saved as `ckpt`, reading its architecture from the
/// `resolved.toml` next to it.
pub fn load_generator(ckpt: &Path) -> Result<Model> {
    let dir = ckpt.parent().unwrap_or(Path::new("."));
    let resolved = dir.join(RESOLVED_FILE);
    let text = std::fs::read_to_string(&resolved).map_err(|e| HarnessError::io(&resolved, e))?;
    let cfg = parse_config(&text)?;
    let mut g = build_model(&cfg.arch(true), Role::Generator, cfg.run.seed)?;
    checkpoint::load_into(&mut g, &checkpoint::load(ckpt)?)?;
    Ok(g)
}
