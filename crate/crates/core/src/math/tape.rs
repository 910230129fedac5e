//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every primitive records a node holding its inputs; values are stored
//! alongside. Nodes are appended in evaluation order, so the recording order
//! is a topological order and [`Tape::backward`] simply walks it in reverse.
//! Parameters enter through [`Tape::param`]; constants through
//! [`Tape::constant`] and never receive gradients, which also lets the
//! backward pass skip work for constant operands.

use crate::error::{Error, Result};
use crate::math::interp::BilinearFootprint;
use crate::math::params::{Gradients, ParamId, ParamStore};
use crate::math::tensor::gemm;
use crate::math::volume::{composite_ray, composite_ray_backward};
use crate::math::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulScalarVar(Var, Var),
    MatMul(Var, Var),
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
        relu: bool,
    },
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Sin(Var),
    Cos(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Abs(Var),
    Square(Var),
    Recip(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    Bilinear {
        grid: Var,
        coords: Var,
        width: usize,
        height: usize,
    },
    Composite(Box<CompositeSpec>),
}

/// Constant inputs of a batched composite node.
#[derive(Clone, Debug)]
struct CompositeSpec {
    sigma: Var,
    color: Var,
    samples: usize,
    deltas: Vec<f64>,
    ts: Vec<f64>,
    background: [f64; 3],
}

struct Node {
    op: Op,
    requires_grad: bool,
}

/// Recording of a single forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Clears all nodes so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.values.clear();
        self.backward_done = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, requires_grad: bool, value: Tensor, name: &'static str) -> Result<Var> {
        if self.backward_done {
            return Err(Error::Tape("cannot record after backward; reset the tape".into()));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { op, requires_grad });
        self.values.push(value);
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Constant, false, value, "constant")
    }

    /// Registers parameter `id` as a differentiable leaf.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Result<Var> {
        self.push(Op::Param(id), true, value, "param")
    }

    /// Registers parameter `id` from a store (the value is copied).
    pub fn param_from(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        self.param(id, store.get(id).clone())
    }

    fn binary_same(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "add")?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), rg, out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "sub")?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Sub(a, b), rg, out, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul")?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), rg, out, "mul")
    }

    /// `a[r, c] + bias[c]` for a rank-2 `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let cols = ta.cols();
        if tb.len() != cols {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + bias {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(cols.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(bias);
        self.push(Op::AddBias(a, bias), rg, out, "add_bias")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(Op::Scale(a, factor), rg, out, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + offset);
        let rg = self.rg(a);
        self.push(Op::AddScalar(a), rg, out, "add_scalar")
    }

    /// `a * s` where `s` is a one-element value.
    pub fn mul_scalar_var(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s).item().map_err(|_| Error::shape("mul_scalar_var", "scale must have one element"))?;
        let out = self.value(a).map(|x| x * sv);
        let rg = self.rg(a) || self.rg(s);
        self.push(Op::MulScalarVar(a, s), rg, out, "mul_scalar_var")
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let out = Tensor::matrix(n, m, out)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), rg, out, "matmul")
    }

    /// `x W + b`, followed by a ReLU when `relu` is set, as one node.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var, relu: bool) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(weight), self.value(bias));
        if tx.shape().len() != 2 || tw.shape().len() != 2 || tx.shape()[1] != tw.shape()[0] || tb.len() != tw.shape()[1] {
            return Err(Error::shape(
                "linear",
                format!("{:?} x {:?} + {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let (n, k, m) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
        let mut out = vec![0.0; n * m];
        gemm(n, k, m, tx.data(), false, tw.data(), false, &mut out, 0.0);
        for row in out.chunks_exact_mut(m.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
                if relu {
                    *v = v.max(0.0);
                }
            }
        }
        let out = Tensor::matrix(n, m, out)?;
        let rg = self.rg(x) || self.rg(weight) || self.rg(bias);
        self.push(Op::Linear { x, weight, bias, relu }, rg, out, "linear")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Op::Sum(a), rg, Tensor::scalar(s), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s: f64 = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Op::Mean(a), rg, Tensor::scalar(s), "mean")
    }

    fn unary(
        &mut self,
        a: Var,
        op: Op,
        name: &'static str,
        f: impl Fn(f64) -> f64,
    ) -> Result<Var> {
        let out = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(op, rg, out, name)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), "exp", f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a), "log", f64::ln)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sin(a), "sin", f64::sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Cos(a), "cos", f64::cos)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), "relu", |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), "softplus", softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a), "sigmoid", sigmoid)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.unary(a, Op::Clamp(a, lo, hi), "clamp", |x| x.clamp(lo, hi))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a), "abs", f64::abs)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Recip(a), "recip", |x| 1.0 / x)
    }

    /// Concatenates rank-2 values along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs"));
        }
        let rows = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row counts {rows} vs {}", t.rows()),
                ));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatCols(parts.to_vec()), rg, out, "concat_cols")
    }

    /// Columns `start..end` of a rank-2 value.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        if start >= end || end > cols {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}..{end} of {cols} columns"),
            ));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + end]);
        }
        let out = Tensor::matrix(rows, w, data)?;
        let rg = self.rg(a);
        self.push(Op::SliceCols(a, start, end), rg, out, "slice_cols")
    }

    /// Row selection `out[i] = a[index[i]]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::shape("gather_rows", format!("row {i} of {rows}")));
            }
            data.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
        }
        let out = Tensor::matrix(index.len(), cols, data)?;
        let rg = self.rg(a);
        self.push(Op::GatherRows(a, index.to_vec()), rg, out, "gather_rows")
    }

    /// Places row `i` of `a` at row `index[i]` of a zero `[total_rows, cols]`
    /// value. Indices must be distinct.
    pub fn scatter_rows(&mut self, a: Var, index: &[usize], total_rows: usize) -> Result<Var> {
        let t = self.value(a);
        let cols = t.cols();
        if index.len() != t.rows() {
            return Err(Error::shape(
                "scatter_rows",
                format!("{} indices for {} rows", index.len(), t.rows()),
            ));
        }
        let mut data = vec![0.0; total_rows * cols];
        let mut seen = vec![false; total_rows];
        for (r, &i) in index.iter().enumerate() {
            if i >= total_rows || seen[i] {
                return Err(Error::shape(
                    "scatter_rows",
                    format!("index {i} out of range or repeated"),
                ));
            }
            seen[i] = true;
            data[i * cols..(i + 1) * cols].copy_from_slice(&t.data()[r * cols..(r + 1) * cols]);
        }
        let out = Tensor::matrix(total_rows, cols, data)?;
        let rg = self.rg(a);
        self.push(Op::ScatterRows(a, index.to_vec()), rg, out, "scatter_rows")
    }

    /// Bilinear lookup into `grid` (`[height * width, channels]`) at texel-space
    /// coordinates `coords` (`[n, 2]`, columns x then y). Differentiable with
    /// respect to both the grid values and the coordinates.
    pub fn bilinear(&mut self, grid: Var, coords: Var, width: usize, height: usize) -> Result<Var> {
        let (tg, tc) = (self.value(grid), self.value(coords));
        if tg.rows() != width * height || tg.shape().len() != 2 {
            return Err(Error::shape(
                "bilinear",
                format!("grid {:?} for {height}x{width}", tg.shape()),
            ));
        }
        if tc.cols() != 2 || tc.shape().len() != 2 {
            return Err(Error::shape("bilinear", format!("coords {:?}", tc.shape())));
        }
        let ch = tg.cols();
        let n = tc.rows();
        let mut data = vec![0.0; n * ch];
        for r in 0..n {
            let c = tc.row(r);
            let fp = BilinearFootprint::new(width, height, c[0], c[1]);
            let out = &mut data[r * ch..(r + 1) * ch];
            for (&idx, &w) in fp.index.iter().zip(&fp.weight) {
                for (o, g) in out.iter_mut().zip(tg.row(idx)) {
                    *o += w * g;
                }
            }
        }
        let out = Tensor::matrix(n, ch, data)?;
        let rg = self.rg(grid) || self.rg(coords);
        self.push(
            Op::Bilinear {
                grid,
                coords,
                width,
                height,
            },
            rg,
            out,
            "bilinear",
        )
    }

    /// Batched emission-absorption compositing.
    ///
    /// `sigma` holds `rays * samples` densities (ray-major), `color` the
    /// matching `rays * samples * 3` colors. Output is `[rays, 5]` with
    /// columns `r, g, b, depth, opacity`.
    pub fn composite(
        &mut self,
        sigma: Var,
        color: Var,
        samples: usize,
        deltas: Vec<f64>,
        ts: Vec<f64>,
        background: [f64; 3],
    ) -> Result<Var> {
        let (ts_, tc) = (self.value(sigma), self.value(color));
        if samples == 0 || ts_.len() % samples != 0 {
            return Err(Error::shape(
                "composite",
                format!("{} densities for {samples} samples per ray", ts_.len()),
            ));
        }
        let rays = ts_.len() / samples;
        if tc.len() != 3 * ts_.len() || deltas.len() != ts_.len() || ts.len() != ts_.len() {
            return Err(Error::shape("composite", "mismatched sample buffers"));
        }
        if ts_.data().iter().any(|&s| s < 0.0) {
            return Err(Error::invalid("negative density in composite"));
        }
        let mut data = Vec::with_capacity(rays * 5);
        for r in 0..rays {
            let s = r * samples..(r + 1) * samples;
            let out = composite_ray(
                &ts_.data()[s.clone()],
                &tc.data()[3 * s.start..3 * s.end],
                &deltas[s.clone()],
                &ts[s],
                background,
            );
            data.extend_from_slice(&out.color);
            data.push(out.depth);
            data.push(out.opacity);
        }
        let out = Tensor::matrix(rays, 5, data)?;
        let rg = self.rg(sigma) || self.rg(color);
        let spec = CompositeSpec {
            sigma,
            color,
            samples,
            deltas,
            ts,
            background,
        };
        self.push(Op::Composite(Box::new(spec)), rg, out, "composite")
    }

    /// Propagates d`loss`/d(.) through the tape and returns one gradient
    /// buffer per registered parameter (summed over its registrations in
    /// recording order). Parameters that do not influence the loss receive
    /// exact zeros. A second call without [`Tape::reset`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Tape("backward already ran on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Param(_) = self.nodes[i].op {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads)?;
        }

        let mut out = Gradients::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                match &grads[i] {
                    Some(g) => out.accumulate(id, g),
                    None => out.accumulate(id, &Tensor::zeros(self.values[i].shape())),
                }
            }
        }
        Ok(out)
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.values[i];
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.accumulate(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let elementwise = |a: Var, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            let x = self.value(a);
            let data = x
                .data()
                .iter()
                .zip(out.data())
                .zip(g.data())
                .map(|((&x, &y), &gy)| f(x, y, gy))
                .collect();
            Tensor::new(x.shape().to_vec(), data).expect("shape")
        };

        match &self.nodes[i].op {
            Op::Constant | Op::Param(_) => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let t = zip(g, self.value(*b), |x, y| x * y);
                    send(*a, t);
                }
                if self.rg(*b) {
                    let t = zip(g, self.value(*a), |x, y| x * y);
                    send(*b, t);
                }
            }
            Op::AddBias(a, bias) => {
                send(*a, g.clone());
                if self.rg(*bias) {
                    let cols = g.cols();
                    let mut db = vec![0.0; cols];
                    for row in g.data().chunks(cols.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let t = Tensor::new(self.value(*bias).shape().to_vec(), db)?;
                    send(*bias, t);
                }
            }
            Op::Scale(a, f) => send(*a, g.map(|v| v * f)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::MulScalarVar(a, s) => {
                let sv = self.value(*s).data()[0];
                if self.rg(*a) {
                    send(*a, g.map(|v| v * sv));
                }
                if self.rg(*s) {
                    let d: f64 = g.data().iter().zip(self.value(*a).data()).map(|(x, y)| x * y).sum();
                    send(*s, Tensor::new(self.value(*s).shape().to_vec(), vec![d])?);
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![0.0; n * k];
                    gemm(n, m, k, g.data(), false, tb.data(), true, &mut da, 0.0);
                    send(*a, Tensor::matrix(n, k, da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * m];
                    gemm(k, n, m, ta.data(), true, g.data(), false, &mut db, 0.0);
                    send(*b, Tensor::matrix(k, m, db)?);
                }
            }
            Op::Linear { x, weight, bias, relu } => {
                let (tx, tw) = (self.value(*x), self.value(*weight));
                let (n, k, m) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
                let masked;
                let g = if *relu {
                    let mut d = g.data().to_vec();
                    for (d, y) in d.iter_mut().zip(out.data()) {
                        if *y <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    masked = d;
                    &masked[..]
                } else {
                    g.data()
                };
                if self.rg(*x) {
                    let mut dx = vec![0.0; n * k];
                    gemm(n, m, k, g, false, tw.data(), true, &mut dx, 0.0);
                    send(*x, Tensor::matrix(n, k, dx)?);
                }
                if self.rg(*weight) {
                    let mut dw = vec![0.0; k * m];
                    gemm(k, n, m, tx.data(), true, g, false, &mut dw, 0.0);
                    send(*weight, Tensor::matrix(k, m, dw)?);
                }
                if self.rg(*bias) {
                    let mut db = vec![0.0; m];
                    for row in g.chunks(m.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    send(*bias, Tensor::new(self.value(*bias).shape().to_vec(), db)?);
                }
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                send(*a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let gv = g.data()[0] / t.len() as f64;
                send(*a, Tensor::full(t.shape(), gv));
            }
            Op::Exp(a) => send(*a, elementwise(*a, &|_, y, gy| gy * y)),
            Op::Log(a) => send(*a, elementwise(*a, &|x, _, gy| gy / x)),
            Op::Sin(a) => send(*a, elementwise(*a, &|x, _, gy| gy * x.cos())),
            Op::Cos(a) => send(*a, elementwise(*a, &|x, _, gy| -gy * x.sin())),
            Op::Relu(a) => send(*a, elementwise(*a, &|x, _, gy| if x > 0.0 { gy } else { 0.0 })),
            Op::Softplus(a) => send(*a, elementwise(*a, &|x, _, gy| gy * sigmoid(x))),
            Op::Sigmoid(a) => send(*a, elementwise(*a, &|_, y, gy| gy * y * (1.0 - y))),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                send(
                    *a,
                    elementwise(*a, &|x, _, gy| if x > lo && x < hi { gy } else { 0.0 }),
                )
            }
            Op::Abs(a) => send(
                *a,
                elementwise(*a, &|x, _, gy| {
                    if x > 0.0 {
                        gy
                    } else if x < 0.0 {
                        -gy
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Square(a) => send(*a, elementwise(*a, &|x, _, gy| 2.0 * x * gy)),
            Op::Recip(a) => send(*a, elementwise(*a, &|_, y, gy| -gy * y * y)),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        send(p, Tensor::new(self.value(p).shape().to_vec(), data)?);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let t = self.value(*a);
                let (rows, cols) = (t.rows(), t.cols());
                let w = end - start;
                let mut data = vec![0.0; rows * cols];
                for r in 0..rows {
                    data[r * cols + start..r * cols + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                send(*a, Tensor::new(t.shape().to_vec(), data)?);
            }
            Op::GatherRows(a, index) => {
                let t = self.value(*a);
                let cols = t.cols();
                let mut data = vec![0.0; t.len()];
                for (r, &src) in index.iter().enumerate() {
                    for c in 0..cols {
                        data[src * cols + c] += g.data()[r * cols + c];
                    }
                }
                send(*a, Tensor::new(t.shape().to_vec(), data)?);
            }
            Op::ScatterRows(a, index) => {
                let t = self.value(*a);
                let cols = t.cols();
                let mut data = Vec::with_capacity(t.len());
                for &dst in index {
                    data.extend_from_slice(&g.data()[dst * cols..(dst + 1) * cols]);
                }
                send(*a, Tensor::new(t.shape().to_vec(), data)?);
            }
            Op::Bilinear {
                grid,
                coords,
                width,
                height,
            } => {
                let (tg, tc) = (self.value(*grid), self.value(*coords));
                let ch = tg.cols();
                let n = tc.rows();
                let mut dgrid = if self.rg(*grid) {
                    Some(vec![0.0; tg.len()])
                } else {
                    None
                };
                let mut dcoords = if self.rg(*coords) {
                    Some(vec![0.0; tc.len()])
                } else {
                    None
                };
                for r in 0..n {
                    let c = tc.row(r);
                    let fp = BilinearFootprint::new(*width, *height, c[0], c[1]);
                    let gr = &g.data()[r * ch..(r + 1) * ch];
                    if let Some(dg) = dgrid.as_mut() {
                        for (&idx, &w) in fp.index.iter().zip(&fp.weight) {
                            if w == 0.0 {
                                continue;
                            }
                            for (d, gv) in dg[idx * ch..(idx + 1) * ch].iter_mut().zip(gr) {
                                *d += w * gv;
                            }
                        }
                    }
                    if let Some(dc) = dcoords.as_mut() {
                        let [p00, p10, p01, p11] = fp.index.map(|idx| tg.row(idx));
                        let (fx, fy) = (fp.fx, fp.fy);
                        let mut dx = 0.0;
                        let mut dy = 0.0;
                        for k in 0..ch {
                            dx += gr[k] * ((1.0 - fy) * (p10[k] - p00[k]) + fy * (p11[k] - p01[k]));
                            dy += gr[k] * ((1.0 - fx) * (p01[k] - p00[k]) + fx * (p11[k] - p10[k]));
                        }
                        if fp.inside_x {
                            dc[2 * r] += dx;
                        }
                        if fp.inside_y {
                            dc[2 * r + 1] += dy;
                        }
                    }
                }
                if let Some(dg) = dgrid {
                    send(*grid, Tensor::new(tg.shape().to_vec(), dg)?);
                }
                if let Some(dc) = dcoords {
                    send(*coords, Tensor::new(tc.shape().to_vec(), dc)?);
                }
            }
            Op::Composite(spec) => {
                let sig = self.value(spec.sigma);
                let col = self.value(spec.color);
                let n = spec.samples;
                let rays = sig.len() / n;
                let mut ds = vec![0.0; sig.len()];
                let mut dc = vec![0.0; col.len()];
                for r in 0..rays {
                    let s = r * n..(r + 1) * n;
                    let gr = &g.data()[r * 5..(r + 1) * 5];
                    composite_ray_backward(
                        &sig.data()[s.clone()],
                        &col.data()[3 * s.start..3 * s.end],
                        &spec.deltas[s.clone()],
                        &spec.ts[s.clone()],
                        spec.background,
                        [gr[0], gr[1], gr[2]],
                        gr[3],
                        gr[4],
                        &mut ds[s.clone()],
                        &mut dc[3 * s.start..3 * s.end],
                    );
                }
                if self.rg(spec.sigma) {
                    send(spec.sigma, Tensor::new(sig.shape().to_vec(), ds)?);
                }
                if self.rg(spec.color) {
                    send(spec.color, Tensor::new(col.shape().to_vec(), dc)?);
                }
            }
        }
        Ok(())
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(tape: &mut Tape, v: f64) -> Var {
        tape.param(ParamId(0), Tensor::scalar(v)).unwrap()
    }

    #[test]
    fn softplus_at_zero_is_ln_two() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0)).unwrap();
        let y = tape.softplus(x).unwrap();
        assert!((tape.value(y).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((tape.value(y).data()[0] - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn identity_matmul_returns_vector() {
        let mut tape = Tape::new();
        let i3 = tape.constant(Tensor::identity(3)).unwrap();
        let v = tape.constant(Tensor::matrix(3, 1, vec![1.5, -2.0, 7.25]).unwrap()).unwrap();
        let y = tape.matmul(i3, v).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, -2.0, 7.25]);
    }

    #[test]
    fn exp_of_sum() {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 1.0])).unwrap();
        let s = tape.sum(v).unwrap();
        let e = tape.exp(s).unwrap();
        let got = tape.value(e).data()[0];
        assert!((got - std::f64::consts::E.powi(2)).abs() < 1e-12);
        assert!((got - 7.389056).abs() < 1e-6);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 3.0);
        let y = tape.square(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[6.0]);
    }

    #[test]
    fn saturated_clamp_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 2.0);
        let c = tape.clamp(x, 0.0, 1.0).unwrap();
        let s = tape.sum(c).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(ParamId(0)).unwrap().data(), &[0.0]);
    }

    #[test]
    fn kinks_use_zero_subgradient() {
        for op in ["relu", "abs", "clamp_lo", "clamp_hi"] {
            let mut tape = Tape::new();
            let x0 = if op == "clamp_hi" { 1.0 } else { 0.0 };
            let x = scalar_param(&mut tape, x0);
            let y = match op {
                "relu" => tape.relu(x),
                "abs" => tape.abs(x),
                _ => tape.clamp(x, 0.0, 1.0),
            }
            .unwrap();
            let g = tape.backward(y).unwrap();
            assert_eq!(g.get(ParamId(0)).unwrap().data(), &[0.0], "{op}");
        }
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut tape = Tape::new();
        let x = scalar_param(&mut tape, 1.0);
        let y = tape.square(x).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.backward(y).is_err());
        tape.reset();
        let x = scalar_param(&mut tape, 1.0);
        let y = tape.square(x).unwrap();
        assert!(tape.backward(y).is_ok());
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Tape(_))));
    }

    #[test]
    fn unused_parameters_get_exact_zeros() {
        let mut tape = Tape::new();
        let x = tape.param(ParamId(0), Tensor::scalar(2.0)).unwrap();
        let _unused = tape.param(ParamId(1), Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let y = tape.square(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(ParamId(1)).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(tape.add(a, b), Err(Error::Shape { .. })));
        let z = tape.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(tape.log(z), Err(Error::NonFinite { .. })));
        assert!(matches!(tape.recip(z), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn composite_rejects_negative_density() {
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::vector(vec![-1.0, 1.0])).unwrap();
        let c = tape.constant(Tensor::vector(vec![0.5; 6])).unwrap();
        let r = tape.composite(s, c, 2, vec![0.5, 0.5], vec![0.25, 0.75], [0.0; 3]);
        assert!(r.is_err());
    }
}
