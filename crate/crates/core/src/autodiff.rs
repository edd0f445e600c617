//! Reverse-mode automatic differentiation over dense 2-d matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and the indices of its inputs. [`Graph::backward`] walks the tape in
//! reverse and returns a [`Gradients`] table. Nodes created with
//! [`Graph::constant`] never receive gradients, and nothing downstream of
//! constants only is differentiated, which is how frozen parameters are kept
//! out of the backward pass.
//!
//! All values are `f64` row-major matrices; batches are laid out one example
//! per row.

use ndarray::{s, Array2, Axis, Zip};

pub type Matrix = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        src: Var,
        start: usize,
    },
    StackSteps(Vec<Var>),
    LogSoftmax(Var),
    Softmax(Var),
    PickRows {
        src: Var,
        cols: Vec<Option<usize>>,
    },
    SumAll(Var),
    StraightThrough(Var),
    RowSelect {
        mask: Vec<bool>,
        on: Var,
        off: Var,
    },
    Unfold {
        src: Var,
        batch: usize,
        len: usize,
        width: usize,
    },
    MaxPoolTime {
        src: Var,
        argmax: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        let v = self.value(var);
        debug_assert_eq!(v.dim(), (1, 1));
        v[[0, 0]]
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Every input node, leaves and constants, in creation order.
    pub fn inputs(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.nodes[i].op, Op::Leaf))
            .map(Var)
            .collect()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a single row");
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a, factor), &[a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 - x);
        self.push(value, Op::OneMinus(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    /// Selects rows `ids` of `table`, one output row per id.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Matrix::zeros((ids.len(), t.ncols()));
        for (mut row, &id) in value.rows_mut().into_iter().zip(ids) {
            row.assign(&t.row(id));
        }
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut value = Matrix::zeros((rows, cols));
        let mut offset = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.nrows(), rows, "concat_cols row mismatch");
            value
                .slice_mut(s![.., offset..offset + v.ncols()])
                .assign(v);
            offset += v.ncols();
        }
        self.push(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, end: usize) -> Var {
        let value = self.value(src).slice(s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols { src, start }, &[src])
    }

    /// Interleaves `steps` (each `batch x d`) into a `(batch * steps) x d`
    /// matrix whose row `b * steps + t` is row `b` of step `t`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Var {
        assert!(!steps.is_empty());
        let (batch, dim) = self.value(steps[0]).dim();
        let len = steps.len();
        let mut value = Matrix::zeros((batch * len, dim));
        for (t, step) in steps.iter().enumerate() {
            let v = self.value(*step);
            for b in 0..batch {
                value.row_mut(b * len + t).assign(&v.row(b));
            }
        }
        self.push(value, Op::StackSteps(steps.to_vec()), steps)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("contiguous row"));
        }
        self.push(value, Op::Softmax(a), &[a])
    }

    /// Picks one column per row into an `n x 1` column; `None` rows yield 0.
    pub fn pick_rows(&mut self, src: Var, cols: &[Option<usize>]) -> Var {
        let v = self.value(src);
        assert_eq!(v.nrows(), cols.len());
        let mut value = Matrix::zeros((cols.len(), 1));
        for (i, c) in cols.iter().enumerate() {
            if let Some(c) = c {
                value[[i, 0]] = v[[i, *c]];
            }
        }
        self.push(
            value,
            Op::PickRows {
                src,
                cols: cols.to_vec(),
            },
            &[src],
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::SumAll(a), &[a])
    }

    /// Forward: one-hot rows at `chosen`. Backward: identity onto `dist`.
    pub fn straight_through(&mut self, dist: Var, chosen: &[usize]) -> Var {
        let (rows, cols) = self.value(dist).dim();
        assert_eq!(rows, chosen.len());
        let mut value = Matrix::zeros((rows, cols));
        for (i, &c) in chosen.iter().enumerate() {
            value[[i, c]] = 1.0;
        }
        self.push(value, Op::StraightThrough(dist), &[dist])
    }

    /// Row `i` comes from `on` where `mask[i]`, else from `off`.
    pub fn row_select(&mut self, mask: &[bool], on: Var, off: Var) -> Var {
        let a = self.value(on);
        let b = self.value(off);
        assert_eq!(a.dim(), b.dim());
        assert_eq!(a.nrows(), mask.len());
        let mut value = b.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                value.row_mut(i).assign(&a.row(i));
            }
        }
        self.push(
            value,
            Op::RowSelect {
                mask: mask.to_vec(),
                on,
                off,
            },
            &[on, off],
        )
    }

    /// Sliding windows over time for a `(batch * len) x d` input laid out as
    /// in [`Graph::stack_steps`]. Output row `b * positions + p` holds the
    /// concatenation of input rows `b * len + p .. b * len + p + width`.
    pub fn unfold(&mut self, src: Var, batch: usize, len: usize, width: usize) -> Var {
        assert!(width <= len, "window wider than the sequence");
        let v = self.value(src);
        let dim = v.ncols();
        assert_eq!(v.nrows(), batch * len);
        let positions = len - width + 1;
        let mut value = Matrix::zeros((batch * positions, width * dim));
        for b in 0..batch {
            for p in 0..positions {
                let mut out = value.row_mut(b * positions + p);
                for k in 0..width {
                    out.slice_mut(s![k * dim..(k + 1) * dim])
                        .assign(&v.row(b * len + p + k));
                }
            }
        }
        self.push(
            value,
            Op::Unfold {
                src,
                batch,
                len,
                width,
            },
            &[src],
        )
    }

    /// Column-wise max over the first `valid[b]` of `positions` rows in each
    /// example's block.
    pub fn max_pool_time(&mut self, src: Var, positions: usize, valid: &[usize]) -> Var {
        let v = self.value(src);
        let batch = valid.len();
        let cols = v.ncols();
        assert_eq!(v.nrows(), batch * positions);
        let mut value = Matrix::zeros((batch, cols));
        let mut argmax = vec![0usize; batch * cols];
        for (b, &n) in valid.iter().enumerate() {
            assert!(n >= 1 && n <= positions, "invalid pooling window count");
            for c in 0..cols {
                let mut best = b * positions;
                for p in 1..n {
                    let r = b * positions + p;
                    if v[[r, c]] > v[[best, c]] {
                        best = r;
                    }
                }
                value[[b, c]] = v[[best, c]];
                argmax[b * cols + c] = best;
            }
        }
        self.push(value, Op::MaxPoolTime { src, argmax }, &[src])
    }

    /// Gradients of the scalar `root` with respect to every node upstream of
    /// it that requires one.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Matrix::ones((1, 1)));
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*row) {
                    accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g * self.value(*b));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, f) => accumulate(grads, *a, g * *f),
            Op::OneMinus(a) => accumulate(grads, *a, -g),
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                    if y <= 0.0 {
                        *d = 0.0
                    }
                });
                accumulate(grads, *a, d);
            }
            Op::Gather { table, ids } => {
                if self.wants(*table) {
                    let mut d = Matrix::zeros(self.value(*table).dim());
                    for (row, &id) in g.rows().into_iter().zip(ids) {
                        let mut target = d.row_mut(id);
                        target += &row;
                    }
                    accumulate(grads, *table, d);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).ncols();
                    if self.wants(*p) {
                        accumulate(grads, *p, g.slice(s![.., offset..offset + w]).to_owned());
                    }
                    offset += w;
                }
            }
            Op::SliceCols { src, start } => {
                let mut d = Matrix::zeros(self.value(*src).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                accumulate(grads, *src, d);
            }
            Op::StackSteps(steps) => {
                let len = steps.len();
                for (t, step) in steps.iter().enumerate() {
                    if !self.wants(*step) {
                        continue;
                    }
                    let (batch, dim) = self.value(*step).dim();
                    let mut d = Matrix::zeros((batch, dim));
                    for b in 0..batch {
                        d.row_mut(b).assign(&g.row(b * len + t));
                    }
                    accumulate(grads, *step, d);
                }
            }
            Op::LogSoftmax(a) => {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(node.value.rows()) {
                    let total: f64 = drow.sum();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d -= y.exp() * total);
                }
                accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(node.value.rows()) {
                    let dot: f64 = drow.iter().zip(yrow.iter()).map(|(g, y)| g * y).sum();
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d = y * (*d - dot));
                }
                accumulate(grads, *a, d);
            }
            Op::PickRows { src, cols } => {
                let mut d = Matrix::zeros(self.value(*src).dim());
                for (i, c) in cols.iter().enumerate() {
                    if let Some(c) = c {
                        d[[i, *c]] = g[[i, 0]];
                    }
                }
                accumulate(grads, *src, d);
            }
            Op::SumAll(a) => {
                accumulate(grads, *a, Matrix::from_elem(self.value(*a).dim(), g[[0, 0]]));
            }
            Op::StraightThrough(dist) => accumulate(grads, *dist, g.clone()),
            Op::RowSelect { mask, on, off } => {
                if self.wants(*on) {
                    let mut d = g.clone();
                    for (i, &m) in mask.iter().enumerate() {
                        if !m {
                            d.row_mut(i).fill(0.0);
                        }
                    }
                    accumulate(grads, *on, d);
                }
                if self.wants(*off) {
                    let mut d = g.clone();
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            d.row_mut(i).fill(0.0);
                        }
                    }
                    accumulate(grads, *off, d);
                }
            }
            Op::Unfold {
                src,
                batch,
                len,
                width,
            } => {
                let dim = self.value(*src).ncols();
                let positions = len - width + 1;
                let mut d = Matrix::zeros((batch * len, dim));
                for b in 0..*batch {
                    for p in 0..positions {
                        let grow = g.row(b * positions + p);
                        for k in 0..*width {
                            let mut target = d.row_mut(b * len + p + k);
                            target += &grow.slice(s![k * dim..(k + 1) * dim]);
                        }
                    }
                }
                accumulate(grads, *src, d);
            }
            Op::MaxPoolTime { src, argmax } => {
                let mut d = Matrix::zeros(self.value(*src).dim());
                let cols = g.ncols();
                for (b, grow) in g.rows().into_iter().enumerate() {
                    for c in 0..cols {
                        d[[argmax[b * cols + c], c]] += grow[c];
                    }
                }
                accumulate(grads, *src, d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, delta: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
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

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central finite differences of `f` around `x`.
    fn numeric_grad(x: &Matrix, f: &dyn Fn(&Matrix) -> f64) -> Matrix {
        let eps = 1e-6;
        let mut out = Matrix::zeros(x.dim());
        for idx in 0..x.len() {
            let mut plus = x.clone();
            let mut minus = x.clone();
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            plus[[r, c]] += eps;
            minus[[r, c]] -= eps;
            out[[r, c]] = (f(&plus) - f(&minus)) / (2.0 * eps);
        }
        out
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            let scale = x.abs().max(y.abs()).max(1.0);
            assert!((x - y).abs() / scale < tol, "{x} vs {y}");
        }
    }

    fn check(x: Matrix, build: impl Fn(&mut Graph, Var) -> Var) {
        let f = |m: &Matrix| {
            let mut g = Graph::new();
            let v = g.leaf(m.clone());
            let out = build(&mut g, v);
            let total = g.sum_all(out);
            g.scalar(total)
        };
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let out = build(&mut g, v);
        let total = g.sum_all(out);
        let grads = g.backward(total);
        let analytic = grads.get(v).cloned().unwrap_or_else(|| Matrix::zeros(x.dim()));
        assert_close(&analytic, &numeric_grad(&x, &f), 1e-6);
    }

    fn probe() -> Matrix {
        array![[0.3, -0.7, 1.1], [-0.2, 0.5, 0.05]]
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        check(probe(), |g, v| g.sigmoid(v));
        check(probe(), |g, v| g.tanh(v));
        check(probe(), |g, v| g.relu(v));
        check(probe(), |g, v| g.one_minus(v));
        check(probe(), |g, v| {
            let t = g.tanh(v);
            g.mul(t, v)
        });
        check(probe(), |g, v| {
            let s = g.scale(v, 3.0);
            g.sub(s, v)
        });
    }

    #[test]
    fn softmax_family_matches_finite_differences() {
        let w = array![[0.2, -1.0, 0.4], [1.5, 0.3, -0.6]];
        check(probe(), move |g, v| {
            let y = g.log_softmax(v);
            let c = g.constant(w.clone());
            g.mul(y, c)
        });
        let w = array![[0.2, -1.0, 0.4], [1.5, 0.3, -0.6]];
        check(probe(), move |g, v| {
            let y = g.softmax(v);
            let c = g.constant(w.clone());
            g.mul(y, c)
        });
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let w = array![[0.5, -0.1], [0.3, 0.8], [-0.4, 0.2]];
        check(probe(), move |g, v| {
            let c = g.constant(w.clone());
            let m = g.matmul(v, c);
            g.tanh(m)
        });
        check(probe(), |g, v| {
            let r = g.gather(v, &[1, 0, 1]);
            g.sigmoid(r)
        });
        check(probe(), |g, v| {
            let a = g.slice_cols(v, 1, 3);
            let b = g.slice_cols(v, 0, 1);
            let c = g.concat_cols(&[a, b, a]);
            g.tanh(c)
        });
        check(probe(), |g, v| {
            let p = g.pick_rows(v, &[Some(2), None]);
            g.sigmoid(p)
        });
        check(probe(), |g, v| {
            let row = g.slice_cols(v, 0, 3);
            let top = g.gather(row, &[0]);
            g.add_row(v, top)
        });
    }

    #[test]
    fn conv_ops_match_finite_differences() {
        // two examples of length 3, dim 2
        let x = array![
            [0.1, 0.2],
            [-0.3, 0.4],
            [0.5, -0.6],
            [0.7, 0.05],
            [-0.9, 0.15],
            [0.25, -0.35]
        ];
        let w = array![[0.3, -0.2], [0.1, 0.4], [-0.5, 0.2], [0.6, -0.1]];
        check(x, move |g, v| {
            let u = g.unfold(v, 2, 3, 2);
            let c = g.constant(w.clone());
            let h = g.matmul(u, c);
            let t = g.tanh(h);
            g.max_pool_time(t, 2, &[2, 1])
        });
    }

    #[test]
    fn stack_and_select_match_finite_differences() {
        check(probe(), |g, v| {
            let a = g.sigmoid(v);
            let b = g.tanh(v);
            let sel = g.row_select(&[true, false], a, b);
            let st = g.stack_steps(&[sel, v, a]);
            g.tanh(st)
        });
    }

    #[test]
    fn straight_through_is_hard_forward_identity_backward() {
        let mut g = Graph::new();
        let d = g.leaf(array![[0.1, 0.7, 0.2]]);
        let st = g.straight_through(d, &[1]);
        assert_eq!(g.value(st), &array![[0.0, 1.0, 0.0]]);
        let w = g.constant(array![[1.0], [2.0], [3.0]]);
        let y = g.matmul(st, w);
        let grads = g.backward(y);
        assert_eq!(grads.get(d).unwrap(), &array![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(probe());
        let c = g.constant(probe());
        let m = g.mul(a, c);
        let s = g.sum_all(m);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert!(grads.get(a).is_some());
    }
}
