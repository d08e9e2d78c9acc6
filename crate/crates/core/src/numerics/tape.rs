//! Reverse-mode differentiation over a linear tape.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! through [`Tape::param`] and are borrowed, not copied; frozen parameters are
//! recorded as constants so no gradient is ever produced for them.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};

use crate::activations::ActivationSpec;
use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm, layer_norm_raw, masked_softmax_row, MatView, Tensor};

/// Stable handle of a trainable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle of a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Activation {
        x: Var,
        params: Option<Var>,
        spec: ActivationSpec,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        pad_id: usize,
        probs: Vec<f64>,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients of the trainable parameters reachable from a loss.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    /// Gradient of a non-parameter leaf created with [`Tape::leaf`].
    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.leaves.get(&var.0)
    }

    pub fn contains(&self, id: ParamId) -> bool {
        self.map.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor)> {
        self.map.iter_mut().map(|(k, v)| (*k, v))
    }

    pub fn insert(&mut self, id: ParamId, grad: Tensor) {
        self.map.insert(id, grad);
    }

    pub fn global_norm(&self) -> f64 {
        self.map.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
    }
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<ParamId, Var>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    /// A differentiable non-parameter input, read back with [`Gradients::wrt`].
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    /// Registers a parameter once per tape; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId, value: &'a Tensor, frozen: bool) -> Var {
        if let Some(v) = self.params.get(&id) {
            return *v;
        }
        let var = if frozen {
            self.push(Cow::Borrowed(value), Op::Leaf, false)
        } else {
            self.push(Cow::Borrowed(value), Op::Param(id), true)
        };
        self.params.insert(id, var);
        var
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 || self.value(a).shape().len() != 2 || self.value(b).shape().len() != 2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            MatView::new(self.value(a).data(), m, k),
            MatView::new(self.value(b).data(), k, n),
            0.0,
            &mut out,
        );
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.push_derived(t, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push_derived(t, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("add", a, b));
        }
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        Ok(self.push_derived(t, Op::Add(a, b), &[a, b]))
    }

    /// Adds the vector `bias` to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(bias).len() != c {
            return Err(self.mismatch("add_row", x, bias));
        }
        let mut t = self.value(x).clone();
        let b = self.value(bias).data();
        for i in 0..r {
            for (v, bv) in t.data_mut()[i * c..(i + 1) * c].iter_mut().zip(b) {
                *v += bv;
            }
        }
        Ok(self.push_derived(t, Op::AddRow(x, bias), &[x, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch("mul", a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push_derived(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a).map(|v| v * factor);
        self.push_derived(t, Op::Scale(a, factor), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push_derived(t, Op::Sum(a), &[a])
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + width > c {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: self.value(x).shape().to_vec(),
                rhs: vec![start, width],
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * width);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + width]);
        }
        let t = Tensor::new(vec![r, width], out)?;
        Ok(self.push_derived(t, Op::SliceCols(x, start), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts.iter().map(|p| self.dims(*p).1).collect();
        if parts.iter().any(|p| self.dims(*p).0 != r) {
            return Err(self.mismatch("concat_cols", parts[0], parts[parts.len() - 1]));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![r, total], out)?;
        Ok(self.push_derived(t, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Rows of `table` selected by `ids` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if let Some(bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Contract(format!("row index {bad} out of range for {r} rows")));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let t = Tensor::new(vec![ids.len(), c], out)?;
        Ok(self.push_derived(t, Op::Gather(table, ids.to_vec()), &[table]))
    }

    /// Row-wise softmax; `keep[i * cols + j] == false` excludes entry `(i, j)`.
    pub fn softmax_rows(&mut self, x: Var, keep: Option<Vec<bool>>) -> Result<Var> {
        let (r, c) = self.dims(x);
        if let Some(k) = &keep {
            if k.len() != r * c {
                return Err(Error::Dimension {
                    op: "softmax_rows",
                    lhs: vec![r, c],
                    rhs: vec![k.len()],
                });
            }
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            masked_softmax_row(
                &src[i * c..(i + 1) * c],
                keep.as_ref().map(|k| &k[i * c..(i + 1) * c]),
                &mut out[i * c..(i + 1) * c],
            );
        }
        let t = Tensor::new(vec![r, c], out)?;
        Ok(self.push_derived(t, Op::Softmax(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let c = self.dims(x).1;
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(self.mismatch("layer_norm", x, gain));
        }
        let (t, stats) = layer_norm_raw(self.value(x), self.value(gain).data(), self.value(bias).data(), eps);
        Ok(self.push_derived(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized: stats.normalized,
                inv_std: stats.inv_std,
            },
            &[x, gain, bias],
        ))
    }

    pub fn activation(&mut self, spec: ActivationSpec, x: Var, params: Option<Var>) -> Result<Var> {
        let p: &[f64] = params.map_or(&[], |p| self.value(p).data());
        spec.check_params(p)?;
        let t = self.value(x).map(|v| spec.eval(p, v));
        let inputs: Vec<Var> = std::iter::once(x).chain(params).collect();
        Ok(self.push_derived(t, Op::Activation { x, params, spec }, &inputs))
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, skipping rows whose target is `pad_id`.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize], pad_id: usize) -> Result<Var> {
        let (r, c) = self.dims(logits);
        if targets.len() != r {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vec![r, c],
                rhs: vec![targets.len()],
            });
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Contract(format!("target id {bad} outside vocabulary of {c}")));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; r * c];
        let mut total = 0.0;
        for i in 0..r {
            if targets[i] == pad_id {
                continue;
            }
            let row = &src[i * c..(i + 1) * c];
            masked_softmax_row(row, None, &mut probs[i * c..(i + 1) * c]);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[targets[i]];
        }
        Ok(self.push_derived(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad_id,
                probs,
            },
            &[logits],
        ))
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let value = |v: Var| -> &Tensor { &nodes[v.0].value };
            let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                let buf = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
                f(buf.data_mut());
            };
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(idx, g);
                }
                Op::Param(id) => {
                    out.map.insert(*id, g);
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (value(*a).rows(), value(*a).cols());
                    let n = value(*b).cols();
                    let gv = MatView::new(g.data(), m, n);
                    acc(*a, &mut |da| {
                        gemm(gv, MatView::new(value(*b).data(), k, n).t(), 1.0, da);
                    });
                    acc(*b, &mut |db| {
                        gemm(MatView::new(value(*a).data(), m, k).t(), gv, 1.0, db);
                    });
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    acc(*a, &mut |da| add_into(da, gt.data()));
                }
                Op::Add(a, b) => {
                    acc(*a, &mut |da| add_into(da, g.data()));
                    acc(*b, &mut |db| add_into(db, g.data()));
                }
                Op::AddRow(x, bias) => {
                    acc(*x, &mut |dx| add_into(dx, g.data()));
                    let c = g.cols();
                    acc(*bias, &mut |db| {
                        for row in g.data().chunks(c) {
                            add_into(db, row);
                        }
                    });
                }
                Op::Mul(a, b) => {
                    acc(*a, &mut |da| {
                        for ((d, gv), bv) in da.iter_mut().zip(g.data()).zip(value(*b).data()) {
                            *d += gv * bv;
                        }
                    });
                    acc(*b, &mut |db| {
                        for ((d, gv), av) in db.iter_mut().zip(g.data()).zip(value(*a).data()) {
                            *d += gv * av;
                        }
                    });
                }
                Op::Scale(a, f) => {
                    acc(*a, &mut |da| {
                        for (d, gv) in da.iter_mut().zip(g.data()) {
                            *d += gv * f;
                        }
                    });
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += s));
                }
                Op::SliceCols(x, start) => {
                    let c = value(*x).cols();
                    let w = g.cols();
                    acc(*x, &mut |dx| {
                        for (i, row) in g.data().chunks(w).enumerate() {
                            add_into(&mut dx[i * c + start..i * c + start + w], row);
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let w = value(*p).cols();
                        acc(*p, &mut |dp| {
                            for (i, row) in dp.chunks_mut(w).enumerate() {
                                add_into(row, &g.data()[i * total + offset..i * total + offset + w]);
                            }
                        });
                        offset += w;
                    }
                }
                Op::Gather(table, ids) => {
                    let c = g.cols();
                    acc(*table, &mut |dt| {
                        for (row, &id) in g.data().chunks(c).zip(ids) {
                            add_into(&mut dt[id * c..(id + 1) * c], row);
                        }
                    });
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let c = y.cols();
                    acc(*x, &mut |dx| {
                        for ((dxr, yr), gr) in dx.chunks_mut(c).zip(y.data().chunks(c)).zip(g.data().chunks(c)) {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((d, yv), gv) in dxr.iter_mut().zip(yr).zip(gr) {
                                *d += yv * (gv - dot);
                            }
                        }
                    });
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    normalized,
                    inv_std,
                } => {
                    let c = g.cols();
                    let gamma = value(*gain).data();
                    acc(*x, &mut |dx| {
                        for (i, ((dxr, gr), nr)) in dx
                            .chunks_mut(c)
                            .zip(g.data().chunks(c))
                            .zip(normalized.chunks(c))
                            .enumerate()
                        {
                            let dn: Vec<f64> = gr.iter().zip(gamma).map(|(a, b)| a * b).collect();
                            let sum_dn: f64 = dn.iter().sum();
                            let sum_dn_n: f64 = dn.iter().zip(nr).map(|(a, b)| a * b).sum();
                            let scale = inv_std[i] / c as f64;
                            for ((d, dnv), nv) in dxr.iter_mut().zip(&dn).zip(nr) {
                                *d += scale * (c as f64 * dnv - sum_dn - nv * sum_dn_n);
                            }
                        }
                    });
                    acc(*gain, &mut |dg| {
                        for (gr, nr) in g.data().chunks(c).zip(normalized.chunks(c)) {
                            for ((d, gv), nv) in dg.iter_mut().zip(gr).zip(nr) {
                                *d += gv * nv;
                            }
                        }
                    });
                    acc(*bias, &mut |db| {
                        for gr in g.data().chunks(c) {
                            add_into(db, gr);
                        }
                    });
                }
                Op::Activation { x, params, spec } => {
                    let p: &[f64] = params.map_or(&[], |p| value(p).data());
                    let xs = value(*x).data();
                    acc(*x, &mut |dx| {
                        for ((d, gv), xv) in dx.iter_mut().zip(g.data()).zip(xs) {
                            *d += gv * spec.grad_input(p, *xv);
                        }
                    });
                    if let Some(pv) = params {
                        let mut buf = vec![0.0; p.len()];
                        acc(*pv, &mut |dp| {
                            for (gv, xv) in g.data().iter().zip(xs) {
                                spec.grad_params_into(*xv, &mut buf);
                                for (d, b) in dp.iter_mut().zip(&buf) {
                                    *d += gv * b;
                                }
                            }
                        });
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    pad_id,
                    probs,
                } => {
                    let s = g.data()[0];
                    let c = value(*logits).cols();
                    acc(*logits, &mut |dl| {
                        for (i, &t) in targets.iter().enumerate() {
                            if t == *pad_id {
                                continue;
                            }
                            for j in 0..c {
                                dl[i * c + j] += s * probs[i * c + j];
                            }
                            dl[i * c + t] -= s;
                        }
                    });
                }
            }
        }
        Ok(out)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
