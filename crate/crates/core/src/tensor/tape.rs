use std::cell::RefCell;
use std::rc::Rc;

use super::conv::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Mul(usize, usize),
    AddScalar(usize),
    Scale(usize, f64),
    Relu(usize),
    BiasAdd(usize, usize),
    Conv2d(usize, usize),
    Concat(Vec<usize>),
    Narrow { src: usize, start: usize, len: usize },
    CropCols { src: usize, width: usize },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    L1(usize, usize),
    MatVec(usize, usize),
    Interleave(Vec<usize>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Append-only record of a forward computation.
///
/// Node ids are assigned in creation order, so every node's inputs have
/// smaller ids than the node itself and reverse id order is a valid
/// topological order for the backward sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var<'_>) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[v.id].value)
    }

    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.id];
        node.grad.as_ref().map(|g| Tensor {
            shape: node.value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'_> {
        let rg = self.requires(inputs);
        self.push(value, op, rg)
    }

    pub fn concat_channels<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = super::concat_channels(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.record(out, Op::Concat(ids.clone()), &ids))
    }

    /// Periodic shuffle along the last axis: `r` tensors of shape `[1, H, W]`
    /// become one `[1, H, r * W]` tensor with `out[h][w * r + c] = parts[c][h][w]`.
    pub fn interleave_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let first = values
            .first()
            .ok_or_else(|| Error::invalid("interleave of zero tensors"))?;
        if first.shape.len() != 3 || first.shape[0] != 1 {
            return Err(Error::invalid(format!(
                "interleave expects [1, H, W] parts, got {:?}",
                first.shape
            )));
        }
        for v in &values {
            if v.shape != first.shape {
                return Err(Error::shape("interleave_cols", &first.shape, &v.shape));
            }
        }
        let (h, w, r) = (first.shape[1], first.shape[2], values.len());
        let mut data = vec![0.0; h * w * r];
        for (c, v) in values.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    data[y * w * r + x * r + c] = v.data[y * w + x];
                }
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.record(
            Tensor {
                shape: vec![1, h, w * r],
                data,
            },
            Op::Interleave(ids.clone()),
            &ids,
        ))
    }

    /// Reverse sweep from a one-element `loss`, adding into the stored
    /// gradient of every node that requires one. Calling it again without
    /// [`Tape::zero_grad`] accumulates.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape.clone()));
        }
        if !root.requires_grad {
            return Ok(());
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        local[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = local[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            propagate(&nodes, &node.op, &node.value, &g, &mut local);
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }
}

fn accumulate(local: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut local[id] {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib),
    }
}

fn wants(nodes: &[Node], id: usize) -> bool {
    nodes[id].requires_grad
}

fn propagate(nodes: &[Node], op: &Op, out: &Tensor, g: &[f64], local: &mut [Option<Vec<f64>>]) {
    match *op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(local, nodes, a, g.to_vec());
            accumulate(local, nodes, b, g.to_vec());
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value.data, &nodes[b].value.data);
            if wants(nodes, a) {
                accumulate(local, nodes, a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
            }
            if wants(nodes, b) {
                accumulate(local, nodes, b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
        }
        Op::AddScalar(a) => accumulate(local, nodes, a, g.to_vec()),
        Op::Scale(a, s) => accumulate(local, nodes, a, g.iter().map(|v| v * s).collect()),
        Op::Relu(a) => {
            let x = &nodes[a].value.data;
            let ga = g
                .iter()
                .zip(x)
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(local, nodes, a, ga);
        }
        Op::BiasAdd(x, b) => {
            if wants(nodes, x) {
                accumulate(local, nodes, x, g.to_vec());
            }
            if wants(nodes, b) {
                let channels = nodes[b].value.len();
                let plane = g.len() / channels;
                let gb = (0..channels)
                    .map(|c| g[c * plane..(c + 1) * plane].iter().sum())
                    .collect();
                accumulate(local, nodes, b, gb);
            }
        }
        Op::Conv2d(x, k) => {
            let (xv, kv) = (&nodes[x].value, &nodes[k].value);
            let geom = ConvGeom {
                c_in: xv.shape[0],
                c_out: kv.shape[0],
                h: xv.shape[1],
                w: xv.shape[2],
                k: kv.shape[2],
            };
            if wants(nodes, x) {
                accumulate(local, nodes, x, conv::backward_input(g, &kv.data, geom));
            }
            if wants(nodes, k) {
                accumulate(local, nodes, k, conv::backward_kernel(g, &xv.data, geom));
            }
        }
        Op::Concat(ref ids) => {
            let mut start = 0;
            for &id in ids {
                let n = nodes[id].value.len();
                if wants(nodes, id) {
                    accumulate(local, nodes, id, g[start..start + n].to_vec());
                }
                start += n;
            }
        }
        Op::Narrow { src, start, len } => {
            let sv = &nodes[src].value;
            let plane = sv.len() / sv.shape[0];
            let mut gs = vec![0.0; sv.len()];
            gs[start * plane..(start + len) * plane].copy_from_slice(g);
            accumulate(local, nodes, src, gs);
        }
        Op::CropCols { src, width } => {
            let sv = &nodes[src].value;
            let full = *sv.shape.last().unwrap();
            let rows = sv.len() / full;
            let mut gs = vec![0.0; sv.len()];
            for r in 0..rows {
                gs[r * full..r * full + width].copy_from_slice(&g[r * width..(r + 1) * width]);
            }
            accumulate(local, nodes, src, gs);
        }
        Op::Reshape(a) => accumulate(local, nodes, a, g.to_vec()),
        Op::Sum(a) => {
            let n = nodes[a].value.len();
            accumulate(local, nodes, a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = nodes[a].value.len();
            accumulate(local, nodes, a, vec![g[0] / n as f64; n]);
        }
        Op::L1(a, b) => {
            let (va, vb) = (&nodes[a].value.data, &nodes[b].value.data);
            let scale = g[0] / va.len() as f64;
            let sign: Vec<f64> = va
                .iter()
                .zip(vb)
                .map(|(x, y)| {
                    let d = x - y;
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            if wants(nodes, b) {
                accumulate(local, nodes, b, sign.iter().map(|s| -s).collect());
            }
            accumulate(local, nodes, a, sign);
        }
        Op::MatVec(w, x) => {
            let (wv, xv) = (&nodes[w].value, &nodes[x].value);
            let (rows, cols) = (wv.shape[0], wv.shape[1]);
            if wants(nodes, w) {
                let mut gw = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        gw[i * cols + j] = g[i] * xv.data[j];
                    }
                }
                accumulate(local, nodes, w, gw);
            }
            if wants(nodes, x) {
                let mut gx = vec![0.0; cols];
                for i in 0..rows {
                    for j in 0..cols {
                        gx[j] += wv.data[i * cols + j] * g[i];
                    }
                }
                accumulate(local, nodes, x, gx);
            }
        }
        Op::Interleave(ref ids) => {
            let r = ids.len();
            let (h, w) = (out.shape[1], out.shape[2] / r);
            for (c, &id) in ids.iter().enumerate() {
                if !wants(nodes, id) {
                    continue;
                }
                let mut gc = vec![0.0; h * w];
                for y in 0..h {
                    for x in 0..w {
                        gc[y * w + x] = g[y * w * r + x * r + c];
                    }
                }
                accumulate(local, nodes, id, gc);
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    fn binary(self, other: Var<'t>, op: &'static str) -> Result<(Rc<Tensor>, Rc<Tensor>)> {
        let (a, b) = (self.value(), other.value());
        if a.shape != b.shape {
            return Err(Error::shape(op, &a.shape, &b.shape));
        }
        Ok((a, b))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.binary(other, "add")?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        let out = Tensor {
            shape: a.shape.clone(),
            data,
        };
        Ok(self.tape.record(out, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.binary(other, "mul")?;
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        let out = Tensor {
            shape: a.shape.clone(),
            data,
        };
        Ok(self.tape.record(out, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn add_scalar(self, s: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().map(|x| x + s).collect(),
        };
        self.tape.record(out, Op::AddScalar(self.id), &[self.id])
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let a = self.value();
        let out = Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().map(|x| x * s).collect(),
        };
        self.tape.record(out, Op::Scale(self.id, s), &[self.id])
    }

    /// `max(x, 0)`; the gradient at exactly zero is taken as 0.
    pub fn relu(self) -> Var<'t> {
        let a = self.value();
        let out = Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
        };
        self.tape.record(out, Op::Relu(self.id), &[self.id])
    }

    /// Adds `bias[c]` to every element of channel `c` of a `[C, ...]` tensor.
    pub fn bias_add(self, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, b) = (self.value(), bias.value());
        if x.shape.is_empty() || b.shape != [x.shape[0]] {
            return Err(Error::shape("bias_add", &x.shape, &b.shape));
        }
        let plane = x.len() / x.shape[0];
        let mut data = x.data.clone();
        for (c, chunk) in data.chunks_mut(plane.max(1)).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b.data[c]);
        }
        let out = Tensor {
            shape: x.shape.clone(),
            data,
        };
        Ok(self.tape.record(out, Op::BiasAdd(self.id, bias.id), &[self.id, bias.id]))
    }

    /// Zero-padded stride-1 convolution of a `[C_in, H, W]` input with a
    /// `[C_out, C_in, k, k]` kernel (`k` odd). Output is `[C_out, H, W]`.
    pub fn conv2d(self, kernel: Var<'t>) -> Result<Var<'t>> {
        let (x, k) = (self.value(), kernel.value());
        let ok = x.shape.len() == 3
            && k.shape.len() == 4
            && k.shape[1] == x.shape[0]
            && k.shape[2] == k.shape[3]
            && k.shape[2] % 2 == 1;
        if !ok {
            return Err(Error::shape("conv2d", &x.shape, &k.shape));
        }
        let geom = ConvGeom {
            c_in: x.shape[0],
            c_out: k.shape[0],
            h: x.shape[1],
            w: x.shape[2],
            k: k.shape[2],
        };
        let data = conv::forward(&x.data, &k.data, geom);
        let out = Tensor {
            shape: vec![geom.c_out, geom.h, geom.w],
            data,
        };
        Ok(self.tape.record(out, Op::Conv2d(self.id, kernel.id), &[self.id, kernel.id]))
    }

    /// Channels `start..start + len` of a `[C, ...]` tensor.
    pub fn narrow_channels(self, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        if a.shape.is_empty() || start + len > a.shape[0] || len == 0 {
            return Err(Error::invalid(format!(
                "channels {start}..{} out of range for {:?}",
                start + len,
                a.shape
            )));
        }
        let plane = a.len() / a.shape[0];
        let mut shape = a.shape.clone();
        shape[0] = len;
        let out = Tensor {
            shape,
            data: a.data[start * plane..(start + len) * plane].to_vec(),
        };
        Ok(self.tape.record(
            out,
            Op::Narrow {
                src: self.id,
                start,
                len,
            },
            &[self.id],
        ))
    }

    /// Keep the first `width` entries along the last axis.
    pub fn crop_cols(self, width: usize) -> Result<Var<'t>> {
        let a = self.value();
        let full = *a
            .shape
            .last()
            .ok_or_else(|| Error::invalid("crop_cols on a scalar"))?;
        if width > full {
            return Err(Error::invalid(format!("crop width {width} exceeds {full}")));
        }
        if width == full {
            return Ok(self);
        }
        let rows = a.len() / full;
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&a.data[r * full..r * full + width]);
        }
        let mut shape = a.shape.clone();
        *shape.last_mut().unwrap() = width;
        let out = Tensor { shape, data };
        Ok(self.tape.record(
            out,
            Op::CropCols {
                src: self.id,
                width,
            },
            &[self.id],
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        Ok(self.tape.record(out, Op::Reshape(self.id), &[self.id]))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data.iter().sum();
        self.tape.record(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let a = self.value();
        let s = a.data.iter().sum::<f64>() / a.len() as f64;
        self.tape.record(Tensor::scalar(s), Op::Mean(self.id), &[self.id])
    }

    /// Mean absolute difference; the subgradient at a tie is 0.
    pub fn l1_loss(self, target: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = self.binary(target, "l1_loss")?;
        let s = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.len() as f64;
        Ok(self
            .tape
            .record(Tensor::scalar(s), Op::L1(self.id, target.id), &[self.id, target.id]))
    }

    /// `W x` for `W: [rows, cols]` (self) and `x: [cols]`.
    pub fn matvec(self, x: Var<'t>) -> Result<Var<'t>> {
        let (w, xv) = (self.value(), x.value());
        if w.shape.len() != 2 || xv.shape != [w.shape[1]] {
            return Err(Error::shape("matvec", &w.shape, &xv.shape));
        }
        let (rows, cols) = (w.shape[0], w.shape[1]);
        let data = (0..rows)
            .map(|i| {
                w.data[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(&xv.data)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let out = Tensor {
            shape: vec![rows],
            data,
        };
        Ok(self.tape.record(out, Op::MatVec(self.id, x.id), &[self.id, x.id]))
    }
}
