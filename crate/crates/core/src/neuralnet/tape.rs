use alloc::sync::Arc;

use super::tensor::gemm;
use super::{ParamId, ParamStore, Tensor};
use crate::math;
use crate::prelude::*;

/// Node of a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Pointwise activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    Identity,
    Relu,
    /// `sin(omega * z)`.
    Sin(f64),
    Tanh,
}

impl Act {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Act::Identity => z,
            Act::Relu => z.max(0.0),
            Act::Sin(w) => math::sin(w * z),
            Act::Tanh => math::tanh(z),
        }
    }

    /// Derivative from the pre-activation `z` and the output `y`.
    #[inline]
    fn grad(self, z: f64, y: f64) -> f64 {
        match self {
            Act::Identity => 1.0,
            Act::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Sin(w) => w * math::cos(w * z),
            Act::Tanh => 1.0 - y * y,
        }
    }

    fn needs_pre(self) -> bool {
        matches!(self, Act::Sin(_))
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    /// `act(x W + b)`; `pre` is kept only for activations that need it.
    Linear {
        x: Var,
        w: Var,
        b: Var,
        act: Act,
        pre: Vec<f64>,
    },
    Activate {
        x: Var,
        act: Act,
        pre: Vec<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Scales each row of the first operand by the matching entry of an `n x 1` column.
    MulCol(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    Cols(Var, usize),
    Gather(Var, Arc<[usize]>),
    ScatterAdd(Var, Arc<[usize]>),
    SumSq(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation so it can be differentiated in reverse.
///
/// Parameters are copied onto the tape when first used; `backward` adds their
/// gradients into the [`ParamStore`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// A constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// The current value of a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.push((id, v));
        v
    }

    /// `act(x W + b)` with `x: m x k`, `W: k x n`, `b: 1 x n`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var, act: Act) -> Var {
        let [m, k] = self.shape(x);
        let [k2, n] = self.shape(w);
        assert_eq!(k, k2, "linear: input width {k} vs weight rows {k2}");
        assert_eq!(self.shape(b), [1, n], "linear: bias shape");
        let mut out = Tensor::zeros(m, n);
        {
            let bias = &self.value(b).data;
            for r in 0..m {
                out.data[r * n..(r + 1) * n].copy_from_slice(bias);
            }
        }
        gemm(
            m,
            k,
            n,
            &self.value(x).data,
            k as isize,
            1,
            &self.value(w).data,
            n as isize,
            1,
            1.0,
            &mut out.data,
        );
        let pre = if act.needs_pre() { out.data.clone() } else { Vec::new() };
        if act != Act::Identity {
            out.data.iter_mut().for_each(|z| *z = act.apply(*z));
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(out, Op::Linear { x, w, b, act, pre }, ng)
    }

    pub fn activate(&mut self, x: Var, act: Act) -> Var {
        let xv = self.value(x);
        let pre = if act.needs_pre() { xv.data.clone() } else { Vec::new() };
        let out = Tensor {
            rows: xv.rows,
            cols: xv.cols,
            data: xv.data.iter().map(|&z| act.apply(z)).collect(),
        };
        let ng = self.ng(x);
        self.push(out, Op::Activate { x, act, pre }, ng)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape mismatch");
        let out = Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().zip(&bv.data).map(|(&x, &y)| f(x, y)).collect(),
        };
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(cv.shape(), [av.rows, 1], "mul_col expects an n x 1 column");
        let mut out = av.clone();
        for r in 0..out.rows {
            let s = cv.data[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let out = Tensor {
            rows: av.rows,
            cols: av.cols,
            data: av.data.iter().map(|x| x * s).collect(),
        };
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    /// Column-wise concatenation of equally tall inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0])[0];
        let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut c0 = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows, rows, "concat: row mismatch");
            for r in 0..rows {
                out.data[r * cols + c0..r * cols + c0 + pv.cols].copy_from_slice(pv.row(r));
            }
            c0 += pv.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::Concat(parts.to_vec()), ng)
    }

    /// Row-wise concatenation of equally wide inputs.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0])[1];
        let mut data = Vec::new();
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows: column mismatch");
            data.extend_from_slice(&pv.data);
        }
        let out = Tensor {
            rows: data.len() / cols.max(1),
            cols,
            data,
        };
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Columns `start..start + len`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols, "cols: out of range");
        let mut out = Tensor::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::Cols(a, start), ng)
    }

    /// Row `k` of the output is row `index[k]` of `a`.
    pub fn gather(&mut self, a: Var, index: Arc<[usize]>) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(index.len(), av.cols);
        for (k, &i) in index.iter().enumerate() {
            out.row_mut(k).copy_from_slice(av.row(i));
        }
        let ng = self.ng(a);
        self.push(out, Op::Gather(a, index), ng)
    }

    /// Output row `i` sums the rows `k` of `a` with `index[k] == i`.
    pub fn scatter_add(&mut self, a: Var, index: Arc<[usize]>, rows: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, index.len(), "scatter_add: index length");
        let mut out = Tensor::zeros(rows, av.cols);
        for (k, &i) in index.iter().enumerate() {
            let src = av.row(k);
            out.row_mut(i).iter_mut().zip(src).for_each(|(o, s)| *o += s);
        }
        let ng = self.ng(a);
        self.push(out, Op::ScatterAdd(a, index), ng)
    }

    /// Like [`Tape::scatter_add`] but divides each output row by its contributor
    /// count; rows without contributors stay zero.
    pub fn scatter_mean(&mut self, a: Var, index: Arc<[usize]>, rows: usize) -> Var {
        let mut counts = vec![0.0; rows];
        index.iter().for_each(|&i| counts[i] += 1.0);
        let inv = counts.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect();
        let s = self.scatter_add(a, index, rows);
        let inv = self.leaf(Tensor::column(inv));
        self.mul_col(s, inv)
    }

    /// Sum of squares of all entries, as a `1 x 1` tensor.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().map(|x| x * x).sum();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumSq(a), ng)
    }

    /// Reverse sweep from the scalar `loss`, accumulating into `store`'s gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) {
        assert_eq!(self.shape(loss), [1, 1], "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = &mut store.params[id.0];
                    if p.grad.len() != g.len() {
                        p.grad = Tensor::zeros(p.value.rows, p.value.cols);
                    }
                    p.grad.data.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Linear { x, w, b, act, pre } => {
                    let [m, k] = self.shape(*x);
                    let n = node.value.cols;
                    let gz: Vec<f64> = if *act == Act::Identity {
                        g
                    } else {
                        let y = &node.value.data;
                        g.iter()
                            .enumerate()
                            .map(|(i, &gi)| gi * act.grad(pre.get(i).copied().unwrap_or(0.0), y[i]))
                            .collect()
                    };
                    if self.ng(*x) {
                        let wv = &self.value(*w).data;
                        let gx = slot(&mut grads, *x, m * k);
                        gemm(m, n, k, &gz, n as isize, 1, wv, 1, n as isize, 1.0, gx);
                    }
                    if self.ng(*w) {
                        let xv = &self.value(*x).data;
                        let gw = slot(&mut grads, *w, k * n);
                        gemm(k, m, n, xv, 1, k as isize, &gz, n as isize, 1, 1.0, gw);
                    }
                    if self.ng(*b) {
                        let gb = slot(&mut grads, *b, n);
                        for r in 0..m {
                            gb.iter_mut().zip(&gz[r * n..(r + 1) * n]).for_each(|(a, b)| *a += b);
                        }
                    }
                }
                Op::Activate { x, act, pre } => {
                    let y = &node.value.data;
                    let gx = slot(&mut grads, *x, g.len());
                    for i in 0..g.len() {
                        gx[i] += g[i] * act.grad(pre.get(i).copied().unwrap_or(0.0), y[i]);
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.ng(v) {
                            add_into(slot(&mut grads, v, g.len()), &g, 1.0);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*a) {
                        add_into(slot(&mut grads, *a, g.len()), &g, 1.0);
                    }
                    if self.ng(*b) {
                        add_into(slot(&mut grads, *b, g.len()), &g, -1.0);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        let bv = &self.value(*b).data;
                        let ga = slot(&mut grads, *a, g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    }
                    if self.ng(*b) {
                        let av = &self.value(*a).data;
                        let gb = slot(&mut grads, *b, g.len());
                        for i in 0..g.len() {
                            gb[i] += g[i] * av[i];
                        }
                    }
                }
                Op::MulCol(a, c) => {
                    let cols = node.value.cols;
                    let rows = node.value.rows;
                    if self.ng(*a) {
                        let cv = &self.value(*c).data;
                        let ga = slot(&mut grads, *a, g.len());
                        for r in 0..rows {
                            for j in 0..cols {
                                ga[r * cols + j] += g[r * cols + j] * cv[r];
                            }
                        }
                    }
                    if self.ng(*c) {
                        let av = &self.value(*a).data;
                        let gc = slot(&mut grads, *c, rows);
                        for r in 0..rows {
                            let mut s = 0.0;
                            for j in 0..cols {
                                s += g[r * cols + j] * av[r * cols + j];
                            }
                            gc[r] += s;
                        }
                    }
                }
                Op::Scale(a, s) => add_into(slot(&mut grads, *a, g.len()), &g, *s),
                Op::Concat(parts) => {
                    let rows = node.value.rows;
                    let cols = node.value.cols;
                    let mut c0 = 0;
                    for &p in parts {
                        let pc = self.shape(p)[1];
                        if self.ng(p) {
                            let gp = slot(&mut grads, p, rows * pc);
                            for r in 0..rows {
                                add_into(
                                    &mut gp[r * pc..(r + 1) * pc],
                                    &g[r * cols + c0..r * cols + c0 + pc],
                                    1.0,
                                );
                            }
                        }
                        c0 += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut k0 = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if self.ng(p) {
                            add_into(slot(&mut grads, p, len), &g[k0..k0 + len], 1.0);
                        }
                        k0 += len;
                    }
                }
                Op::Cols(a, start) => {
                    let [rows, acols] = self.shape(*a);
                    let len = node.value.cols;
                    let ga = slot(&mut grads, *a, rows * acols);
                    for r in 0..rows {
                        add_into(
                            &mut ga[r * acols + start..r * acols + start + len],
                            &g[r * len..(r + 1) * len],
                            1.0,
                        );
                    }
                }
                Op::Gather(a, index) => {
                    let [rows, cols] = self.shape(*a);
                    {
                        let ga = slot(&mut grads, *a, rows * cols);
                        for (k, &i) in index.iter().enumerate() {
                            add_into(&mut ga[i * cols..(i + 1) * cols], &g[k * cols..(k + 1) * cols], 1.0);
                        }
                    }
                    if let Op::Param(id) = self.nodes[a.0].op {
                        let p = &mut store.params[id.0];
                        if p.embedding {
                            p.row_hits.resize(rows, 0.0);
                            index.iter().for_each(|&i| p.row_hits[i] += 1.0);
                        }
                    }
                }
                Op::ScatterAdd(a, index) => {
                    let cols = node.value.cols;
                    let ga = slot(&mut grads, *a, index.len() * cols);
                    for (k, &i) in index.iter().enumerate() {
                        add_into(&mut ga[k * cols..(k + 1) * cols], &g[i * cols..(i + 1) * cols], 1.0);
                    }
                }
                Op::SumSq(a) => {
                    let av = &self.value(*a).data;
                    let ga = slot(&mut grads, *a, av.len());
                    for i in 0..av.len() {
                        ga[i] += 2.0 * g[0] * av[i];
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

#[inline]
fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += s * b);
}
