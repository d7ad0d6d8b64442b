use super::kernels;
use crate::error::{Error, Result};

/// Negative-side slope of `LeakyRelu`.
pub const LEAKY_SLOPE: f64 = 0.2;

/// A differentiable primitive. Every tape node records one of these.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    MatMul,
    Transpose,
    Scale(f64),
    AddScalar(f64),
    Neg,
    Relu,
    LeakyRelu,
    Sigmoid,
    LogSigmoid,
    Tanh,
    Square,
    Sqrt,
    Exp,
    Recip,
    MinConst(f64),
    ReduceSum,
    ReduceMean,
    /// Squared L2 norm of every row: `[n, ...]` -> `[n, 1]`.
    L2NormSqRows,
    /// `[n, ...]` -> `[n, 1]`.
    SumRows,
    /// `[n, 1]` -> the given shape with leading dimension n.
    BroadcastRows(Vec<usize>),
    /// Scalar -> the given shape.
    BroadcastScalar(Vec<usize>),
    /// Tensor times a scalar tensor.
    MulScalar,
    /// `x[n, c, ...] + b[c]`.
    AddBias,
    BiasReduce,
    BiasBroadcast(Vec<usize>),
    /// 3×3, stride 1, zero padding 1.
    Conv2d,
    KernelFlip,
    Conv2dKernelGrad,
    AvgPool2,
    Upsample2,
    ConcatRows,
    SliceRows { start: usize, len: usize },
    PadRows { start: usize, total: usize },
    Reshape(Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Neg => "neg",
            Op::Relu => "relu",
            Op::LeakyRelu => "leaky_relu",
            Op::Sigmoid => "sigmoid",
            Op::LogSigmoid => "log_sigmoid",
            Op::Tanh => "tanh",
            Op::Square => "square",
            Op::Sqrt => "sqrt",
            Op::Exp => "exp",
            Op::Recip => "recip",
            Op::MinConst(_) => "min_with_const",
            Op::ReduceSum => "reduce_sum",
            Op::ReduceMean => "reduce_mean",
            Op::L2NormSqRows => "l2_norm_sq",
            Op::SumRows => "sum_rows",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::BroadcastScalar(_) => "broadcast_scalar",
            Op::MulScalar => "mul_scalar",
            Op::AddBias => "broadcast_add_bias",
            Op::BiasReduce => "bias_reduce",
            Op::BiasBroadcast(_) => "bias_broadcast",
            Op::Conv2d => "conv2d",
            Op::KernelFlip => "kernel_flip",
            Op::Conv2dKernelGrad => "conv2d_kernel_grad",
            Op::AvgPool2 => "avg_pool2",
            Op::Upsample2 => "upsample2",
            Op::ConcatRows => "concat",
            Op::SliceRows { .. } => "slice_rows",
            Op::PadRows { .. } => "pad_rows",
            Op::Reshape(_) => "reshape",
        }
    }

    fn arity(&self) -> Option<usize> {
        Some(match self {
            Op::Leaf => 0,
            Op::Add | Op::Sub | Op::Mul | Op::MatMul | Op::MulScalar | Op::AddBias => 2,
            Op::Conv2d | Op::Conv2dKernelGrad => 2,
            Op::ConcatRows => return None,
            _ => 1,
        })
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Input to a forward evaluation: shape and flat data.
pub(crate) type Arg<'a> = (&'a [usize], &'a [f64]);

fn mismatch(op: &Op, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::Shape {
        kind: op.name(),
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn unary(x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    x.iter().map(|&v| f(v)).collect()
}

fn binary(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Leading dimension and the product of the rest.
fn rows(shape: &[usize]) -> (usize, usize) {
    match shape.split_first() {
        Some((&n, rest)) => (n, numel(rest)),
        None => (1, 1),
    }
}

/// Computes the output shape and value of `op` on `args`.
pub(crate) fn forward(op: &Op, args: &[Arg]) -> Result<(Vec<usize>, Vec<f64>)> {
    if let Some(a) = op.arity() {
        if args.len() != a {
            return Err(Error::Gradient(format!(
                "{} expects {} inputs, got {}",
                op.name(),
                a,
                args.len()
            )));
        }
    }
    let (s0, x) = args.first().copied().unwrap_or((&[], &[]));
    let out = match op {
        Op::Leaf => return Err(Error::Gradient("leaf has no forward rule".into())),
        Op::Add | Op::Sub | Op::Mul => {
            let (s1, y) = args[1];
            if s0 != s1 {
                return Err(mismatch(op, s0, s1));
            }
            let v = match op {
                Op::Add => binary(x, y, |a, b| a + b),
                Op::Sub => binary(x, y, |a, b| a - b),
                _ => binary(x, y, |a, b| a * b),
            };
            (s0.to_vec(), v)
        }
        Op::MatMul => {
            let (s1, y) = args[1];
            if s0.len() != 2 || s1.len() != 2 || s0[1] != s1[0] {
                return Err(mismatch(op, s0, s1));
            }
            (vec![s0[0], s1[1]], kernels::matmul(x, y, s0[0], s0[1], s1[1]))
        }
        Op::Transpose => {
            if s0.len() != 2 {
                return Err(mismatch(op, s0, &[]));
            }
            (vec![s0[1], s0[0]], kernels::transpose(x, s0[0], s0[1]))
        }
        Op::Scale(c) => (s0.to_vec(), unary(x, |v| v * c)),
        Op::AddScalar(c) => (s0.to_vec(), unary(x, |v| v + c)),
        Op::Neg => (s0.to_vec(), unary(x, |v| -v)),
        Op::Relu => (s0.to_vec(), unary(x, |v| if v >= 0.0 { v } else { 0.0 })),
        Op::LeakyRelu => (s0.to_vec(), unary(x, |v| if v >= 0.0 { v } else { LEAKY_SLOPE * v })),
        Op::Sigmoid => (s0.to_vec(), unary(x, kernels::sigmoid)),
        Op::LogSigmoid => (s0.to_vec(), unary(x, kernels::log_sigmoid)),
        Op::Tanh => (s0.to_vec(), unary(x, f64::tanh)),
        Op::Square => (s0.to_vec(), unary(x, |v| v * v)),
        Op::Sqrt => (s0.to_vec(), unary(x, f64::sqrt)),
        Op::Exp => (s0.to_vec(), unary(x, f64::exp)),
        Op::Recip => (s0.to_vec(), unary(x, |v| 1.0 / v)),
        Op::MinConst(c) => (s0.to_vec(), unary(x, |v| v.min(*c))),
        Op::ReduceSum => (vec![], vec![x.iter().sum()]),
        Op::ReduceMean => {
            if x.is_empty() {
                return Err(mismatch(op, s0, &[]));
            }
            (vec![], vec![x.iter().sum::<f64>() / x.len() as f64])
        }
        Op::L2NormSqRows | Op::SumRows => {
            if s0.is_empty() {
                return Err(mismatch(op, s0, &[]));
            }
            let (n, d) = rows(s0);
            let v = (0..n)
                .map(|r| {
                    let row = &x[r * d..(r + 1) * d];
                    if *op == Op::SumRows {
                        row.iter().sum()
                    } else {
                        row.iter().map(|v| v * v).sum()
                    }
                })
                .collect();
            (vec![n, 1], v)
        }
        Op::BroadcastRows(shape) => {
            let (n, d) = rows(shape);
            if shape.is_empty() || x.len() != n {
                return Err(mismatch(op, s0, shape));
            }
            let mut v = Vec::with_capacity(n * d);
            for &r in x {
                v.extend(std::iter::repeat(r).take(d));
            }
            (shape.clone(), v)
        }
        Op::BroadcastScalar(shape) => {
            if x.len() != 1 {
                return Err(mismatch(op, s0, shape));
            }
            (shape.clone(), vec![x[0]; numel(shape)])
        }
        Op::MulScalar => {
            let (s1, s) = args[1];
            if s.len() != 1 {
                return Err(mismatch(op, s0, s1));
            }
            (s0.to_vec(), unary(x, |v| v * s[0]))
        }
        Op::AddBias => {
            let (s1, b) = args[1];
            if s0.len() < 2 || s1.len() != 1 || s1[0] != s0[1] {
                return Err(mismatch(op, s0, s1));
            }
            let inner = numel(&s0[2..]);
            let bb = kernels::bias_broadcast(b, s0[0], s0[1], inner);
            (s0.to_vec(), binary(x, &bb, |a, c| a + c))
        }
        Op::BiasReduce => {
            if s0.len() < 2 {
                return Err(mismatch(op, s0, &[]));
            }
            (vec![s0[1]], kernels::bias_reduce(x, s0[0], s0[1], numel(&s0[2..])))
        }
        Op::BiasBroadcast(shape) => {
            if shape.len() < 2 || s0.len() != 1 || s0[0] != shape[1] {
                return Err(mismatch(op, s0, shape));
            }
            (shape.clone(), kernels::bias_broadcast(x, shape[0], shape[1], numel(&shape[2..])))
        }
        Op::Conv2d => {
            let (s1, k) = args[1];
            if s0.len() != 4 || s1.len() != 4 || s1[1] != s0[1] || s1[2] != 3 || s1[3] != 3 {
                return Err(mismatch(op, s0, s1));
            }
            let (n, c, h, w, o) = (s0[0], s0[1], s0[2], s0[3], s1[0]);
            (vec![n, o, h, w], kernels::conv2d(x, k, n, c, h, w, o))
        }
        Op::KernelFlip => {
            if s0.len() != 4 || s0[2] != 3 || s0[3] != 3 {
                return Err(mismatch(op, s0, &[]));
            }
            (vec![s0[1], s0[0], 3, 3], kernels::kernel_flip(x, s0[0], s0[1]))
        }
        Op::Conv2dKernelGrad => {
            let (s1, gy) = args[1];
            if s0.len() != 4 || s1.len() != 4 || s0[0] != s1[0] || s0[2..] != s1[2..] {
                return Err(mismatch(op, s0, s1));
            }
            let (n, c, h, w, o) = (s0[0], s0[1], s0[2], s0[3], s1[1]);
            (vec![o, c, 3, 3], kernels::conv2d_kernel_grad(x, gy, n, c, h, w, o))
        }
        Op::AvgPool2 => {
            if s0.len() != 4 || s0[2] % 2 != 0 || s0[3] % 2 != 0 {
                return Err(mismatch(op, s0, &[]));
            }
            let planes = s0[0] * s0[1];
            (
                vec![s0[0], s0[1], s0[2] / 2, s0[3] / 2],
                kernels::avg_pool2(x, planes, s0[2], s0[3]),
            )
        }
        Op::Upsample2 => {
            if s0.len() != 4 {
                return Err(mismatch(op, s0, &[]));
            }
            let planes = s0[0] * s0[1];
            (
                vec![s0[0], s0[1], s0[2] * 2, s0[3] * 2],
                kernels::upsample2(x, planes, s0[2], s0[3]),
            )
        }
        Op::ConcatRows => {
            if args.is_empty() {
                return Err(Error::Gradient("concat of zero tensors".into()));
            }
            let tail = &s0[1..];
            let mut n = 0;
            let mut v = Vec::new();
            for (s, d) in args {
                if s.is_empty() || &s[1..] != tail {
                    return Err(mismatch(op, s0, s));
                }
                n += s[0];
                v.extend_from_slice(d);
            }
            let mut shape = vec![n];
            shape.extend_from_slice(tail);
            (shape, v)
        }
        Op::SliceRows { start, len } => {
            if s0.is_empty() || start + len > s0[0] {
                return Err(mismatch(op, s0, &[*start, *len]));
            }
            let (_, d) = rows(s0);
            let mut shape = s0.to_vec();
            shape[0] = *len;
            (shape, x[start * d..(start + len) * d].to_vec())
        }
        Op::PadRows { start, total } => {
            if s0.is_empty() || start + s0[0] > *total {
                return Err(mismatch(op, s0, &[*start, *total]));
            }
            let (_, d) = rows(s0);
            let mut v = vec![0.0; total * d];
            v[start * d..start * d + x.len()].copy_from_slice(x);
            let mut shape = s0.to_vec();
            shape[0] = *total;
            (shape, v)
        }
        Op::Reshape(shape) => {
            if numel(shape) != x.len() {
                return Err(mismatch(op, s0, shape));
            }
            (shape.clone(), x.to_vec())
        }
    };
    Ok(out)
}
