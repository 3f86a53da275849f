//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on the tape is a 2-D array; scalars are `1×1`. Parameters are
//! interned by an integer id so a network can be applied several times in one
//! graph (for example, a dynamics head unrolled over depth) while its gradient
//! is accumulated into a single slot.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    SimNorm(Var, usize),
    SoftmaxXent(Var, Array2<f64>),
    SumCols(Var),
    MeanAll(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Gradients of a scalar with respect to every parameter id touched on the tape.
#[derive(Debug, Default)]
pub struct ParamGrads {
    grads: HashMap<usize, Array2<f64>>,
}

impl ParamGrads {
    pub fn get(&self, id: usize) -> Option<&Array2<f64>> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: usize) -> Option<Array2<f64>> {
        self.grads.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
    param_ids: HashMap<usize, usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf for parameter `id`; repeated calls with the same id return the same node.
    pub fn param(&mut self, id: usize, value: &Array2<f64>) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param);
        self.params.insert(id, v);
        self.param_ids.insert(v.0, id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `x + b` where `b` is a `1×n` row broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let value = self.value(x) + self.value(b);
        self.push(value, Op::AddRow(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(elu);
        self.push(value, Op::Elu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v * v);
        self.push(value, Op::Square(x))
    }

    /// Hard clamp; the gradient is zero wherever the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).mapv(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(x, lo, hi))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let value = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_cols: row counts differ");
        self.push(value, Op::ConcatCols(a, b))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let value = self.value(x).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(x, start))
    }

    /// Softmax within each contiguous group of `group` columns.
    pub fn simnorm(&mut self, x: Var, group: usize) -> Var {
        let mut value = self.value(x).clone();
        for mut row in value.rows_mut() {
            crate::worldmodel::simnorm::simnorm_in_place(row.as_slice_mut().expect("contiguous row"), group);
        }
        self.push(value, Op::SimNorm(x, group))
    }

    /// Row-wise cross-entropy `-Σ_k target[r,k] · log softmax(logits[r])_k`, shape `B×1`.
    pub fn softmax_xent(&mut self, logits: Var, target: Array2<f64>) -> Var {
        let x = self.value(logits);
        assert_eq!(x.dim(), target.dim(), "softmax_xent: shape mismatch");
        let mut out = Array2::zeros((x.nrows(), 1));
        for (r, (row, t)) in x.rows().into_iter().zip(target.rows()).enumerate() {
            let lse = log_sum_exp(row.as_slice().expect("contiguous row"));
            out[[r, 0]] = row
                .iter()
                .zip(t.iter())
                .map(|(&l, &tk)| if tk == 0.0 { 0.0 } else { -tk * (l - lse) })
                .sum();
        }
        self.push(out, Op::SoftmaxXent(logits, target))
    }

    /// Row sums, shape `B×1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let value = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::SumCols(x))
    }

    /// Mean over all entries, shape `1×1`.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let mean = v.sum() / v.len() as f64;
        self.push(Array2::from_elem((1, 1), mean), Op::MeanAll(x))
    }

    /// Gradients of the scalar `loss` with respect to every interned parameter.
    pub fn backward(&self, loss: Var) -> ParamGrads {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(x, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g * *c),
                Op::Elu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .and(&node.value)
                        .for_each(|gv, &xv, &yv| {
                            if xv <= 0.0 {
                                *gv *= yv + 1.0;
                            }
                        });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|gv, &yv| *gv *= 1.0 - yv * yv);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Exp(x) => {
                    let gx = g * &node.value;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Square(x) => {
                    let gx = g * self.value(*x) * 2.0;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Clamp(x, lo, hi) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(self.value(*x)).for_each(|gv, &xv| {
                        if xv < *lo || xv > *hi {
                            *gv = 0.0;
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(a, b) => {
                    let na = self.value(*a).ncols();
                    let ga = g.slice(s![.., ..na]).to_owned();
                    let gb = g.slice(s![.., na..]).to_owned();
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SliceCols(x, start) => {
                    let mut gx = Array2::zeros(self.value(*x).raw_dim());
                    let width = g.ncols();
                    gx.slice_mut(s![.., *start..*start + width]).assign(&g);
                    accumulate(&mut grads, *x, gx);
                }
                Op::SimNorm(x, group) => {
                    let y = &node.value;
                    let mut gx = Array2::zeros(y.raw_dim());
                    for ((mut gr, yr), g_row) in gx.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                        for start in (0..yr.len()).step_by(*group) {
                            let end = start + group;
                            let dot: f64 = (start..end).map(|k| g_row[k] * yr[k]).sum();
                            for k in start..end {
                                gr[k] = yr[k] * (g_row[k] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxXent(logits, target) => {
                    let x = self.value(*logits);
                    let mut gx = Array2::zeros(x.raw_dim());
                    for (r, (mut gr, xr)) in gx.rows_mut().into_iter().zip(x.rows()).enumerate() {
                        let row = xr.as_slice().expect("contiguous row");
                        let lse = log_sum_exp(row);
                        let t = target.row(r);
                        let mass: f64 = t.sum();
                        for k in 0..row.len() {
                            gr[k] = g[[r, 0]] * ((row[k] - lse).exp() * mass - t[k]);
                        }
                    }
                    accumulate(&mut grads, *logits, gx);
                }
                Op::SumCols(x) => {
                    let shape = self.value(*x).raw_dim();
                    let gx = g.broadcast(shape).expect("column broadcast").to_owned();
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanAll(x) => {
                    let shape = self.value(*x).raw_dim();
                    let n = self.value(*x).len() as f64;
                    let gx = Array2::from_elem(shape, g[[0, 0]] / n);
                    accumulate(&mut grads, *x, gx);
                }
            }
        }

        let mut out = ParamGrads::default();
        for (node_idx, id) in &self.param_ids {
            if let Some(g) = grads[*node_idx].take() {
                out.grads.insert(*id, g);
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}
