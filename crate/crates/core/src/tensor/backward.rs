use super::kernels;
use super::op::{numel, Op, LEAKY_SLOPE};
use super::ops;
use super::{Tape, Tensor};
use crate::error::{Error, Result};

/// Gradients of the scalar `output` with respect to each tensor in `wrt`.
///
/// With `create_graph` the backward pass is recorded on the tape, so the
/// returned gradients can be differentiated again. Tensors that `output`
/// does not depend on get a zero gradient.
pub fn gradient(output: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
    if output.numel() != 1 {
        return Err(Error::Gradient(format!(
            "output must be a scalar, got shape {:?}",
            output.shape()
        )));
    }
    let out = output
        .node()
        .ok_or_else(|| Error::Gradient("output is not on a tape".into()))?;
    let tape = out.tape.clone();
    let mut wrt_ids = Vec::with_capacity(wrt.len());
    for (k, w) in wrt.iter().enumerate() {
        match w.node() {
            Some(n) if n.tape.same(&tape) => wrt_ids.push(n.id),
            _ => return Err(Error::Gradient(format!("wrt[{k}] is not on the output's tape"))),
        }
    }
    tape.bump_stats(create_graph);

    let n = out.id + 1;
    let mut is_wrt = vec![false; n];
    for &id in &wrt_ids {
        if id < n {
            is_wrt[id] = true;
        }
    }
    // Nodes lying on some path from a wrt tensor to the output.
    let relevant = tape.with_nodes(|nodes| {
        let mut rel = vec![false; n];
        for id in 0..n {
            rel[id] = is_wrt[id] || nodes[id].inputs.iter().any(|&i| rel[i]);
        }
        rel
    });

    if create_graph {
        symbolic(&tape, out.id, &relevant, &is_wrt, wrt, &wrt_ids)
    } else {
        numeric(&tape, out.id, &relevant, &is_wrt, wrt, &wrt_ids)
    }
}

fn numeric(
    tape: &Tape,
    out_id: usize,
    relevant: &[bool],
    is_wrt: &[bool],
    wrt: &[&Tensor],
    wrt_ids: &[usize],
) -> Result<Vec<Tensor>> {
    let n = out_id + 1;
    let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut found: Vec<Option<Vec<f64>>> = vec![None; n];
    adj[out_id] = Some(vec![1.0]);
    tape.with_nodes(|nodes| {
        for id in (0..n).rev() {
            if !relevant[id] {
                continue;
            }
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if is_wrt[id] {
                found[id] = Some(g.clone());
            }
            if node.op == Op::Leaf {
                continue;
            }
            let need: Vec<bool> = node.inputs.iter().map(|&i| relevant[i]).collect();
            let ins: Vec<(&[usize], &[f64])> = node
                .inputs
                .iter()
                .map(|&i| (nodes[i].shape.as_slice(), nodes[i].value.as_slice()))
                .collect();
            let grads = vjp_numeric(&node.op, &ins, &node.value, &g, &need);
            for (k, gi) in grads.into_iter().enumerate() {
                let Some(gi) = gi else { continue };
                let slot = &mut adj[node.inputs[k]];
                match slot {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    None => *slot = Some(gi),
                }
            }
        }
    });
    wrt.iter()
        .zip(wrt_ids)
        .map(|(w, &id)| match found.get_mut(id).and_then(Option::take) {
            Some(g) => Tensor::new(w.shape().to_vec(), g),
            None => Ok(Tensor::zeros(w.shape())),
        })
        .collect()
}

fn symbolic(
    tape: &Tape,
    out_id: usize,
    relevant: &[bool],
    is_wrt: &[bool],
    wrt: &[&Tensor],
    wrt_ids: &[usize],
) -> Result<Vec<Tensor>> {
    let n = out_id + 1;
    let mut adj: Vec<Option<Tensor>> = vec![None; n];
    let mut found: Vec<Option<Tensor>> = vec![None; n];
    let out_shape = tape.with_nodes(|nodes| nodes[out_id].shape.clone());
    adj[out_id] = Some(tape.constant(&Tensor::full(&out_shape, 1.0))?);
    for id in (0..n).rev() {
        if !relevant[id] {
            continue;
        }
        let Some(g) = adj[id].take() else { continue };
        if is_wrt[id] {
            found[id] = Some(g.clone());
        }
        let (op, inputs) = tape.with_nodes(|nodes| (nodes[id].op.clone(), nodes[id].inputs.clone()));
        if op == Op::Leaf {
            continue;
        }
        let need: Vec<bool> = inputs.iter().map(|&i| relevant[i]).collect();
        let ins: Vec<Tensor> = inputs.iter().map(|&i| tape.tensor(i)).collect();
        let out = tape.tensor(id);
        let grads = vjp_symbolic(&op, &ins, &out, &g, &need)?;
        for (k, gi) in grads.into_iter().enumerate() {
            let Some(gi) = gi else { continue };
            let slot = &mut adj[inputs[k]];
            *slot = Some(match slot.take() {
                Some(acc) => ops::add(&acc, &gi)?,
                None => gi,
            });
        }
    }
    wrt.iter()
        .zip(wrt_ids)
        .map(|(w, &id)| match found.get_mut(id).and_then(Option::take) {
            Some(g) => Ok(g),
            None => Ok(Tensor::zeros(w.shape())),
        })
        .collect()
}

fn map(x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    x.iter().map(|&v| f(v)).collect()
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn leading(shape: &[usize]) -> (usize, usize) {
    match shape.split_first() {
        Some((&n, rest)) => (n, numel(rest)),
        None => (1, 1),
    }
}

/// First-order vector-Jacobian products on plain slices.
fn vjp_numeric(op: &Op, ins: &[(&[usize], &[f64])], y: &[f64], g: &[f64], need: &[bool]) -> Vec<Option<Vec<f64>>> {
    let want = |k: usize| need.get(k).copied().unwrap_or(false);
    let one = |v: Vec<f64>| vec![Some(v)];
    let x = ins.first().map(|a| a.1).unwrap_or(&[]);
    let sx = ins.first().map(|a| a.0).unwrap_or(&[]);
    match op {
        Op::Leaf => vec![],
        Op::Add => vec![want(0).then(|| g.to_vec()), want(1).then(|| g.to_vec())],
        Op::Sub => vec![want(0).then(|| g.to_vec()), want(1).then(|| map(g, |v| -v))],
        Op::Mul => {
            let b = ins[1].1;
            vec![want(0).then(|| zip(g, b, |p, q| p * q)), want(1).then(|| zip(g, x, |p, q| p * q))]
        }
        Op::MatMul => {
            let (sb, b) = ins[1];
            let (nr, k, m) = (sx[0], sx[1], sb[1]);
            vec![
                want(0).then(|| kernels::matmul_nt(g, b, nr, m, k)),
                want(1).then(|| kernels::matmul_tn(x, g, nr, k, m)),
            ]
        }
        Op::Transpose => one(kernels::transpose(g, sx[1], sx[0])),
        Op::Scale(c) => one(map(g, |v| v * c)),
        Op::AddScalar(_) => one(g.to_vec()),
        Op::Neg => one(map(g, |v| -v)),
        Op::Relu => one(zip(g, x, |gv, xv| if xv >= 0.0 { gv } else { 0.0 })),
        Op::LeakyRelu => one(zip(g, x, |gv, xv| if xv >= 0.0 { gv } else { LEAKY_SLOPE * gv })),
        Op::MinConst(c) => one(zip(g, x, |gv, xv| if xv < *c { gv } else { 0.0 })),
        Op::Sigmoid => one(zip(g, y, |gv, s| gv * s * (1.0 - s))),
        Op::LogSigmoid => one(zip(g, x, |gv, xv| gv * kernels::sigmoid(-xv))),
        Op::Tanh => one(zip(g, y, |gv, t| gv * (1.0 - t * t))),
        Op::Square => one(zip(g, x, |gv, xv| 2.0 * xv * gv)),
        Op::Sqrt => one(zip(g, y, |gv, r| 0.5 * gv / r)),
        Op::Exp => one(zip(g, y, |gv, e| gv * e)),
        Op::Recip => one(zip(g, y, |gv, r| -gv * r * r)),
        Op::ReduceSum => one(vec![g[0]; x.len()]),
        Op::ReduceMean => one(vec![g[0] / x.len() as f64; x.len()]),
        Op::L2NormSqRows => {
            let (nr, d) = leading(sx);
            let mut out = vec![0.0; x.len()];
            for r in 0..nr {
                for j in 0..d {
                    out[r * d + j] = 2.0 * x[r * d + j] * g[r];
                }
            }
            one(out)
        }
        Op::SumRows => {
            let (_, d) = leading(sx);
            one(g.iter().flat_map(|&v| std::iter::repeat(v).take(d)).collect())
        }
        Op::BroadcastRows(shape) => {
            let (nr, d) = leading(shape);
            one((0..nr).map(|r| g[r * d..(r + 1) * d].iter().sum()).collect())
        }
        Op::BroadcastScalar(_) => one(vec![g.iter().sum()]),
        Op::MulScalar => {
            let s = ins[1].1[0];
            vec![
                want(0).then(|| map(g, |v| v * s)),
                want(1).then(|| vec![g.iter().zip(x).map(|(p, q)| p * q).sum()]),
            ]
        }
        Op::AddBias => vec![
            want(0).then(|| g.to_vec()),
            want(1).then(|| kernels::bias_reduce(g, sx[0], sx[1], numel(&sx[2..]))),
        ],
        Op::BiasReduce => one(kernels::bias_broadcast(g, sx[0], sx[1], numel(&sx[2..]))),
        Op::BiasBroadcast(shape) => one(kernels::bias_reduce(g, shape[0], shape[1], numel(&shape[2..]))),
        Op::Conv2d => {
            let (sk, k) = ins[1];
            let (nb, c, h, w, o) = (sx[0], sx[1], sx[2], sx[3], sk[0]);
            vec![
                want(0).then(|| kernels::conv2d_input_grad(g, k, nb, c, h, w, o)),
                want(1).then(|| kernels::conv2d_kernel_grad(x, g, nb, c, h, w, o)),
            ]
        }
        Op::KernelFlip => one(kernels::kernel_flip(g, sx[1], sx[0])),
        Op::Conv2dKernelGrad => {
            let (sg, gy) = ins[1];
            let (nb, c, h, w, o) = (sx[0], sx[1], sx[2], sx[3], sg[1]);
            vec![
                want(0).then(|| kernels::conv2d_input_grad(gy, g, nb, c, h, w, o)),
                want(1).then(|| kernels::conv2d(x, g, nb, c, h, w, o)),
            ]
        }
        Op::AvgPool2 => {
            let planes = sx[0] * sx[1];
            one(map(&kernels::upsample2(g, planes, sx[2] / 2, sx[3] / 2), |v| 0.25 * v))
        }
        Op::Upsample2 => {
            let planes = sx[0] * sx[1];
            one(map(&kernels::avg_pool2(g, planes, 2 * sx[2], 2 * sx[3]), |v| 4.0 * v))
        }
        Op::ConcatRows => {
            let mut offset = 0;
            ins.iter()
                .enumerate()
                .map(|(k, (_, d))| {
                    let part = want(k).then(|| g[offset..offset + d.len()].to_vec());
                    offset += d.len();
                    part
                })
                .collect()
        }
        Op::SliceRows { start, .. } => {
            let (_, d) = leading(sx);
            let mut out = vec![0.0; x.len()];
            out[start * d..start * d + g.len()].copy_from_slice(g);
            one(out)
        }
        Op::PadRows { start, .. } => {
            let (_, d) = leading(sx);
            one(g[start * d..start * d + x.len()].to_vec())
        }
        Op::Reshape(_) => one(g.to_vec()),
    }
}

fn mask(x: &Tensor, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

/// Vector-Jacobian products expressed as recorded operations.
fn vjp_symbolic(op: &Op, ins: &[Tensor], y: &Tensor, g: &Tensor, need: &[bool]) -> Result<Vec<Option<Tensor>>> {
    let want = |k: usize| need.get(k).copied().unwrap_or(false);
    let when = |k: usize, f: &dyn Fn() -> Result<Tensor>| -> Result<Option<Tensor>> {
        if want(k) {
            f().map(Some)
        } else {
            Ok(None)
        }
    };
    let one = |t: Result<Tensor>| t.map(|t| vec![Some(t)]);
    let x = ins.first();
    let xs = || x.expect("unary op has an input");
    Ok(match op {
        Op::Leaf => vec![],
        Op::Add => vec![when(0, &|| Ok(g.clone()))?, when(1, &|| Ok(g.clone()))?],
        Op::Sub => vec![when(0, &|| Ok(g.clone()))?, when(1, &|| ops::neg(g))?],
        Op::Mul => vec![
            when(0, &|| ops::mul(g, &ins[1]))?,
            when(1, &|| ops::mul(g, &ins[0]))?,
        ],
        Op::MatMul => vec![
            when(0, &|| ops::matmul(g, &ops::transpose(&ins[1])?))?,
            when(1, &|| ops::matmul(&ops::transpose(&ins[0])?, g))?,
        ],
        Op::Transpose => one(ops::transpose(g))?,
        Op::Scale(c) => one(ops::scale(g, *c))?,
        Op::AddScalar(_) => vec![Some(g.clone())],
        Op::Neg => one(ops::neg(g))?,
        Op::Relu => one(ops::mul(g, &mask(xs(), |v| if v >= 0.0 { 1.0 } else { 0.0 })?))?,
        Op::LeakyRelu => one(ops::mul(g, &mask(xs(), |v| if v >= 0.0 { 1.0 } else { LEAKY_SLOPE })?))?,
        Op::MinConst(c) => one(ops::mul(g, &mask(xs(), |v| if v < *c { 1.0 } else { 0.0 })?))?,
        Op::Sigmoid => one(ops::mul(g, &ops::mul(y, &ops::add_scalar(&ops::neg(y)?, 1.0)?)?))?,
        Op::LogSigmoid => one(ops::mul(g, &ops::sigmoid(&ops::neg(xs())?)?))?,
        Op::Tanh => one(ops::mul(g, &ops::add_scalar(&ops::neg(&ops::square(y)?)?, 1.0)?))?,
        Op::Square => one(ops::mul(g, &ops::scale(xs(), 2.0)?))?,
        Op::Sqrt => one(ops::mul(g, &ops::scale(&ops::recip(y)?, 0.5)?))?,
        Op::Exp => one(ops::mul(g, y))?,
        Op::Recip => one(ops::mul(g, &ops::neg(&ops::square(y)?)?))?,
        Op::ReduceSum => one(ops::broadcast_scalar(g, xs().shape()))?,
        Op::ReduceMean => {
            let n = xs().numel() as f64;
            one(ops::scale(&ops::broadcast_scalar(g, xs().shape())?, 1.0 / n))?
        }
        Op::L2NormSqRows => one(ops::mul(
            &ops::broadcast_rows(g, xs().shape())?,
            &ops::scale(xs(), 2.0)?,
        ))?,
        Op::SumRows => one(ops::broadcast_rows(g, xs().shape()))?,
        Op::BroadcastRows(_) => one(ops::sum_rows(g))?,
        Op::BroadcastScalar(_) => one(ops::reduce_sum(g))?,
        Op::MulScalar => vec![
            when(0, &|| ops::mul_scalar(g, &ins[1]))?,
            when(1, &|| ops::reduce_sum(&ops::mul(g, &ins[0])?))?,
        ],
        Op::AddBias => vec![when(0, &|| Ok(g.clone()))?, when(1, &|| ops::bias_reduce(g))?],
        Op::BiasReduce => one(ops::bias_broadcast(g, xs().shape()))?,
        Op::BiasBroadcast(_) => one(ops::bias_reduce(g))?,
        Op::Conv2d => vec![
            when(0, &|| ops::conv2d(g, &ops::kernel_flip(&ins[1])?))?,
            when(1, &|| ops::conv2d_kernel_grad(&ins[0], g))?,
        ],
        Op::KernelFlip => one(ops::kernel_flip(g))?,
        Op::Conv2dKernelGrad => vec![
            when(0, &|| ops::conv2d(&ins[1], &ops::kernel_flip(g)?))?,
            when(1, &|| ops::conv2d(&ins[0], g))?,
        ],
        Op::AvgPool2 => one(ops::scale(&ops::upsample2(g)?, 0.25))?,
        Op::Upsample2 => one(ops::scale(&ops::avg_pool2(g)?, 4.0))?,
        Op::ConcatRows => {
            let mut offset = 0;
            let mut out = Vec::with_capacity(ins.len());
            for (k, t) in ins.iter().enumerate() {
                let rows = t.shape()[0];
                out.push(when(k, &|| ops::slice_rows(g, offset, rows))?);
                offset += rows;
            }
            out
        }
        Op::SliceRows { start, .. } => one(ops::pad_rows(g, *start, xs().shape()[0]))?,
        Op::PadRows { start, .. } => one(ops::slice_rows(g, *start, xs().shape()[0]))?,
        Op::Reshape(_) => one(ops::reshape(g, xs().shape()))?,
    })
}
