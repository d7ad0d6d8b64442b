use std::rc::Rc;

use super::op::{self, Op};
use super::{Node, NodeRef, Tape, Tensor};
use crate::error::{Error, Result};

/// Evaluates `op` on `inputs`, recording it when any input is on a tape.
pub fn apply(op: Op, inputs: &[&Tensor]) -> Result<Tensor> {
    let kind = op.name();
    for t in inputs {
        t.check_finite(kind)?;
    }
    let args: Vec<op::Arg> = inputs.iter().map(|t| (t.shape(), t.data())).collect();
    let (shape, value) = op::forward(&op, &args)?;
    if !value.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { kind });
    }

    let mut tape: Option<&Tape> = None;
    for t in inputs {
        if let Some(n) = t.node() {
            match tape {
                None => tape = Some(&n.tape),
                Some(tp) if !tp.same(&n.tape) => {
                    return Err(Error::Gradient(format!("{kind}: inputs live on different tapes")))
                }
                _ => {}
            }
        }
    }
    let Some(tape) = tape else {
        return Tensor::new(shape, value);
    };

    let mut ids = Vec::with_capacity(inputs.len());
    let mut requires_grad = false;
    for t in inputs {
        match t.node() {
            Some(n) => {
                ids.push(n.id);
                requires_grad |= t.requires_grad();
            }
            None => ids.push(tape.constant(t)?.node_id().expect("constant is on tape")),
        }
    }
    let value = Rc::new(value);
    let id = tape.push(Node {
        op,
        inputs: ids,
        shape: shape.clone(),
        value: value.clone(),
        requires_grad,
    });
    Ok(Tensor::from_parts(
        shape,
        value,
        Some(NodeRef {
            tape: tape.clone(),
            id,
        }),
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    apply(Op::Add, &[a, b])
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    apply(Op::Sub, &[a, b])
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    apply(Op::Mul, &[a, b])
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    apply(Op::MatMul, &[a, b])
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    apply(Op::Transpose, &[a])
}

pub fn scale(a: &Tensor, c: f64) -> Result<Tensor> {
    apply(Op::Scale(c), &[a])
}

pub fn add_scalar(a: &Tensor, c: f64) -> Result<Tensor> {
    apply(Op::AddScalar(c), &[a])
}

pub fn neg(a: &Tensor) -> Result<Tensor> {
    apply(Op::Neg, &[a])
}

pub fn relu(a: &Tensor) -> Result<Tensor> {
    apply(Op::Relu, &[a])
}

pub fn leaky_relu(a: &Tensor) -> Result<Tensor> {
    apply(Op::LeakyRelu, &[a])
}

pub fn sigmoid(a: &Tensor) -> Result<Tensor> {
    apply(Op::Sigmoid, &[a])
}

pub fn log_sigmoid(a: &Tensor) -> Result<Tensor> {
    apply(Op::LogSigmoid, &[a])
}

pub fn tanh(a: &Tensor) -> Result<Tensor> {
    apply(Op::Tanh, &[a])
}

pub fn square(a: &Tensor) -> Result<Tensor> {
    apply(Op::Square, &[a])
}

pub fn sqrt(a: &Tensor) -> Result<Tensor> {
    apply(Op::Sqrt, &[a])
}

pub fn exp(a: &Tensor) -> Result<Tensor> {
    apply(Op::Exp, &[a])
}

pub fn recip(a: &Tensor) -> Result<Tensor> {
    apply(Op::Recip, &[a])
}

pub fn min_with_const(a: &Tensor, c: f64) -> Result<Tensor> {
    apply(Op::MinConst(c), &[a])
}

pub fn reduce_sum(a: &Tensor) -> Result<Tensor> {
    apply(Op::ReduceSum, &[a])
}

pub fn reduce_mean(a: &Tensor) -> Result<Tensor> {
    apply(Op::ReduceMean, &[a])
}

/// Row-wise squared L2 norm: `[n, ...]` -> `[n, 1]`.
pub fn l2_norm_sq(a: &Tensor) -> Result<Tensor> {
    apply(Op::L2NormSqRows, &[a])
}

pub fn sum_rows(a: &Tensor) -> Result<Tensor> {
    apply(Op::SumRows, &[a])
}

pub fn broadcast_rows(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    apply(Op::BroadcastRows(shape.to_vec()), &[a])
}

pub fn broadcast_scalar(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    apply(Op::BroadcastScalar(shape.to_vec()), &[a])
}

/// `a * s` for a one-element tensor `s`.
pub fn mul_scalar(a: &Tensor, s: &Tensor) -> Result<Tensor> {
    apply(Op::MulScalar, &[a, s])
}

pub fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    apply(Op::AddBias, &[x, b])
}

pub fn bias_reduce(g: &Tensor) -> Result<Tensor> {
    apply(Op::BiasReduce, &[g])
}

pub fn bias_broadcast(b: &Tensor, shape: &[usize]) -> Result<Tensor> {
    apply(Op::BiasBroadcast(shape.to_vec()), &[b])
}

pub fn conv2d(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    apply(Op::Conv2d, &[x, kernel])
}

pub fn kernel_flip(kernel: &Tensor) -> Result<Tensor> {
    apply(Op::KernelFlip, &[kernel])
}

pub fn conv2d_kernel_grad(x: &Tensor, gy: &Tensor) -> Result<Tensor> {
    apply(Op::Conv2dKernelGrad, &[x, gy])
}

pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    apply(Op::AvgPool2, &[x])
}

pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    apply(Op::Upsample2, &[x])
}

pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    apply(Op::ConcatRows, parts)
}

pub fn slice_rows(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    apply(Op::SliceRows { start, len }, &[a])
}

pub fn pad_rows(a: &Tensor, start: usize, total: usize) -> Result<Tensor> {
    apply(Op::PadRows { start, total }, &[a])
}

pub fn reshape(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    apply(Op::Reshape(shape.to_vec()), &[a])
}

/// Flattens every sample: `[n, ...]` -> `[n, d]`.
pub fn flatten_rows(a: &Tensor) -> Result<Tensor> {
    let n = a.shape().first().copied().unwrap_or(1);
    let d = if n == 0 { 0 } else { a.numel() / n };
    reshape(a, &[n, d])
}
