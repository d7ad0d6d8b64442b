//! Slice-level numeric kernels shared by forward evaluation and the
//! first-order backward pass. All tensors are row-major.

/// `a[n,k] · b[k,m]`
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a[n,m] · b[k,m]ᵀ` -> `[n,k]`
pub fn matmul_nt(a: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for j in 0..k {
            let brow = &b[j * m..(j + 1) * m];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[n,k]ᵀ · g[n,m]` -> `[k,m]`
pub fn matmul_tn(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

/// Valid output index range `[lo, hi)` along one spatial axis for a 3×3
/// tap at offset `d` (in 0..3) with zero padding 1.
#[inline]
fn tap_range(d: usize, len: usize) -> (usize, usize) {
    match d {
        0 => (1, len),
        1 => (0, len),
        _ => (0, len.saturating_sub(1)),
    }
}

/// Patch matrix `[c*9, n*h*w]`: row `ci*9 + a*3 + b` holds input channel `ci`
/// shifted by tap `(a-1, b-1)` for every sample and position, zero outside.
fn im2col(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let cols_w = n * hw;
    let mut cols = vec![0.0; c * 9 * cols_w];
    for ci in 0..c {
        for a in 0..3 {
            let (ilo, ihi) = tap_range(a, h);
            for b in 0..3 {
                let (jlo, jhi) = tap_range(b, w);
                let row = &mut cols[(ci * 9 + a * 3 + b) * cols_w..(ci * 9 + a * 3 + b + 1) * cols_w];
                for ni in 0..n {
                    let xs = &x[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    let dst = &mut row[ni * hw..(ni + 1) * hw];
                    for i in ilo..ihi {
                        let src = (i + a - 1) * w;
                        dst[i * w + jlo..i * w + jhi].copy_from_slice(&xs[src + jlo + b - 1..src + jhi + b - 1]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back onto `[n,c,h,w]`.
fn col2im(cols: &[f64], n: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let cols_w = n * hw;
    let mut x = vec![0.0; n * c * hw];
    for ci in 0..c {
        for a in 0..3 {
            let (ilo, ihi) = tap_range(a, h);
            for b in 0..3 {
                let (jlo, jhi) = tap_range(b, w);
                let row = &cols[(ci * 9 + a * 3 + b) * cols_w..(ci * 9 + a * 3 + b + 1) * cols_w];
                for ni in 0..n {
                    let xs = &mut x[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    let src = &row[ni * hw..(ni + 1) * hw];
                    for i in ilo..ihi {
                        let dst = (i + a - 1) * w;
                        let d = &mut xs[dst + jlo + b - 1..dst + jhi + b - 1];
                        for (dv, &sv) in d.iter_mut().zip(&src[i * w + jlo..i * w + jhi]) {
                            *dv += sv;
                        }
                    }
                }
            }
        }
    }
    x
}

/// `[n,o,hw]` <-> `[o,n,hw]`
fn swap_batch_channel(a: &[f64], n: usize, o: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * o * hw];
    for ni in 0..n {
        for oi in 0..o {
            out[(oi * n + ni) * hw..(oi * n + ni + 1) * hw].copy_from_slice(&a[(ni * o + oi) * hw..(ni * o + oi + 1) * hw]);
        }
    }
    out
}

/// 3×3 convolution (cross-correlation), stride 1, zero padding 1.
/// `x[n,c,h,w]`, `k[o,c,3,3]` -> `[n,o,h,w]`
pub fn conv2d(x: &[f64], k: &[f64], n: usize, c: usize, h: usize, w: usize, o: usize) -> Vec<f64> {
    let hw = h * w;
    let cols = im2col(x, n, c, h, w);
    let y = matmul(k, &cols, o, c * 9, n * hw);
    swap_batch_channel(&y, o, n, hw)
}

/// Adjoint of [`conv2d`] in its input: `gy[n,o,h,w]`, `k[o,c,3,3]` -> `[n,c,h,w]`.
pub fn conv2d_input_grad(gy: &[f64], k: &[f64], n: usize, c: usize, h: usize, w: usize, o: usize) -> Vec<f64> {
    let hw = h * w;
    let g = swap_batch_channel(gy, n, o, hw);
    let dcols = matmul_tn(k, &g, o, c * 9, n * hw);
    col2im(&dcols, n, c, h, w)
}

/// Kernel gradient of [`conv2d`]: `x[n,c,h,w]`, `gy[n,o,h,w]` -> `[o,c,3,3]`.
pub fn conv2d_kernel_grad(x: &[f64], gy: &[f64], n: usize, c: usize, h: usize, w: usize, o: usize) -> Vec<f64> {
    let hw = h * w;
    let g = swap_batch_channel(gy, n, o, hw);
    let cols = im2col(x, n, c, h, w);
    matmul_nt(&g, &cols, o, n * hw, c * 9)
}

/// `[o,c,3,3]` -> `[c,o,3,3]` with both spatial axes reversed. An involution.
pub fn kernel_flip(k: &[f64], o: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; o * c * 9];
    for oi in 0..o {
        for ci in 0..c {
            for a in 0..3 {
                for b in 0..3 {
                    out[(ci * o + oi) * 9 + (2 - a) * 3 + (2 - b)] = k[(oi * c + ci) * 9 + a * 3 + b];
                }
            }
        }
    }
    out
}

/// 2×2 average pooling over the trailing two axes; `planes` = n·c.
pub fn avg_pool2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let xs = &x[p * h * w..(p + 1) * h * w];
        let ys = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                let s = xs[2 * i * w + 2 * j]
                    + xs[2 * i * w + 2 * j + 1]
                    + xs[(2 * i + 1) * w + 2 * j]
                    + xs[(2 * i + 1) * w + 2 * j + 1];
                ys[i * wo + j] = 0.25 * s;
            }
        }
    }
    out
}

/// Nearest-neighbour ×2 upsampling of the trailing two axes; `h`,`w` are the input sizes.
pub fn upsample2(x: &[f64], planes: usize, h: usize, w: usize) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; planes * ho * wo];
    for p in 0..planes {
        let xs = &x[p * h * w..(p + 1) * h * w];
        let ys = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                ys[i * wo + j] = xs[(i / 2) * w + j / 2];
            }
        }
    }
    out
}

/// Sum over every axis except axis 1: `[n, c, rest...]` -> `[c]`.
pub fn bias_reduce(g: &[f64], n: usize, c: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for ni in 0..n {
        for (ci, o) in out.iter_mut().enumerate() {
            let base = (ni * c + ci) * inner;
            *o += g[base..base + inner].iter().sum::<f64>();
        }
    }
    out
}

/// Broadcast `[c]` to `[n, c, rest...]`.
pub fn bias_broadcast(b: &[f64], n: usize, c: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c * inner];
    for ni in 0..n {
        for (ci, &bv) in b.iter().enumerate() {
            let base = (ni * c + ci) * inner;
            out[base..base + inner].fill(bv);
        }
    }
    out
}

/// Numerically stable `ln σ(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
