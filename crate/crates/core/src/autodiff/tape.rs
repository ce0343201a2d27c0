//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse insertion order, which is a
//! valid topological order because a node can only reference earlier nodes.
//!
//! Shape mismatches are programming errors and panic with a description of
//! the offending operands; the only fallible operation is [`Tape::cholesky`].
//!
//! Elementwise binary operations broadcast: each operand dimension must
//! equal the output dimension or be 1.

use super::tensor::{cholesky_jittered, gemm, solve_lower, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Affine { x: Var, w: Var, b: Var },
    Neg(Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Sinh(Var),
    Asinh(Var),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    Transpose(Var),
    Tril(Var),
    Diag(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    SumCols(Var),
    Cholesky(Var),
    Solve { l: Var, b: Var, transpose: bool },
    SliceCols { a: Var, start: usize },
    SliceRows { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Broadcast(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient for `v`; exactly zero when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn broadcast_dim(a: usize, b: usize, op: &'static str) -> usize {
    if a == b || b == 1 {
        a
    } else if a == 1 {
        b
    } else {
        panic!("{op}: cannot broadcast dimension {a} against {b}");
    }
}

#[inline]
fn bcast_index(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

fn binary_map(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let rows = broadcast_dim(a.rows(), b.rows(), op);
    let cols = broadcast_dim(a.cols(), b.cols(), op);
    let (sa, sb) = (a.shape(), b.shape());
    let (da, db) = (a.data(), b.data());
    Tensor::from_fn(rows, cols, |r, c| f(da[bcast_index(sa, r, c)], db[bcast_index(sb, r, c)]))
}

/// Sums `g` over the axes along which `shape` was broadcast.
fn reduce_to(g: &Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    let data = out.data_mut();
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            data[bcast_index(shape, r, c)] += g.get(r, c);
        }
    }
    out
}

fn expand(t: &Tensor, rows: usize, cols: usize) -> Tensor {
    if t.shape() == [rows, cols] {
        return t.clone();
    }
    let s = t.shape();
    let d = t.data();
    Tensor::from_fn(rows, cols, |r, c| d[bcast_index(s, r, c)])
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tril` with the diagonal halved.
fn phi(x: &Tensor) -> Tensor {
    let mut out = x.tril();
    for i in 0..out.rows().min(out.cols()) {
        let v = out.get(i, i);
        out.set(i, i, 0.5 * v);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input. Constants are leaves whose gradient is ignored.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = binary_map(self.value(a), self.value(b), "add", |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = binary_map(self.value(a), self.value(b), "sub", |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = binary_map(self.value(a), self.value(b), "mul", |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) · op(b)` with optional transposes on either operand.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let v = gemm(self.value(a), ta, self.value(b), tb).unwrap_or_else(|e| panic!("{e}"));
        self.push(v, Op::MatMul { a, b, ta, tb })
    }

    /// `x · w + b` with `b` a `1×n` row broadcast over the rows of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut v = gemm(self.value(x), false, self.value(w), false).unwrap_or_else(|e| panic!("{e}"));
        let bias = self.value(b);
        assert!(
            bias.rows() == 1 && bias.cols() == v.cols(),
            "affine: bias {:?} does not match output width {}",
            bias.shape(),
            v.cols()
        );
        let cols = v.cols();
        let bd = bias.data().to_vec();
        for row in v.data_mut().chunks_mut(cols) {
            for (o, b) in row.iter_mut().zip(&bd) {
                *o += b;
            }
        }
        self.push(v, Op::Affine { x, w, b })
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::Offset(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sinh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sinh);
        self.push(v, Op::Sinh(a))
    }

    pub fn asinh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::asinh);
        self.push(v, Op::Asinh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Square root; the derivative at exactly 0 is taken to be 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn tril(&mut self, a: Var) -> Var {
        let v = self.value(a).tril();
        self.push(v, Op::Tril(a))
    }

    /// Diagonal of a square matrix as an `n×1` column.
    pub fn diag(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.rows(), t.cols(), "diag of non-square {:?}", t.shape());
        let v = Tensor::column(&t.diag());
        self.push(v, Op::Diag(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(v, Op::Mean(a))
    }

    /// Sum over rows, giving a `1×cols` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(1, t.cols());
        for r in 0..t.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
                *o += x;
            }
        }
        self.push(out, Op::SumRows(a))
    }

    /// Sum over columns, giving a `rows×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::from_fn(t.rows(), 1, |r, _| t.row_slice(r).iter().sum());
        self.push(v, Op::SumCols(a))
    }

    /// Lower Cholesky factor, with the escalating-jitter retry policy. The
    /// jitter enters as a constant shift and is transparent to gradients.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let (l, _) = cholesky_jittered(self.value(a))?;
        Ok(self.push(l, Op::Cholesky(a)))
    }

    /// `L⁻¹ B`, or `L⁻ᵀ B` when `transpose`, for lower-triangular `L`.
    pub fn solve_lower(&mut self, l: Var, b: Var, transpose: bool) -> Var {
        let v = solve_lower(self.value(l), self.value(b), transpose).unwrap_or_else(|e| panic!("{e}"));
        self.push(v, Op::Solve { l, b, transpose })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_cols(start, end);
        self.push(v, Op::SliceCols { a, start })
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice_rows(start, end);
        self.push(v, Op::SliceRows { a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts
            .iter()
            .map(|&p| {
                let t = self.value(p);
                assert_eq!(t.rows(), rows, "concat_cols: row counts differ");
                t.cols()
            })
            .sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            for r in 0..rows {
                out.data_mut()[r * cols + offset..r * cols + offset + t.cols()].copy_from_slice(t.row_slice(r));
            }
            offset += t.cols();
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows: column counts differ");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let v = Tensor::from_vec(rows, cols, data).expect("concat_rows");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn broadcast(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let t = self.value(a);
        broadcast_dim(rows, t.rows(), "broadcast");
        broadcast_dim(cols, t.cols(), "broadcast");
        let v = expand(t, rows, cols);
        self.push(v, Op::Broadcast(a))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != [1, 1] {
            return Err(Error::Contract(format!("backward from non-scalar root of shape {:?}", rv.shape())));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[i].value;
        let mut acc = |v: Var, t: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, reduce_to(g, val(*a).shape()));
                acc(*b, reduce_to(g, val(*b).shape()));
            }
            Op::Sub(a, b) => {
                acc(*a, reduce_to(g, val(*a).shape()));
                acc(*b, reduce_to(&g.scale(-1.0), val(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = binary_map(g, bv, "mul backward", |x, y| x * y);
                let gb = binary_map(g, av, "mul backward", |x, y| x * y);
                acc(*a, reduce_to(&ga, av.shape()));
                acc(*b, reduce_to(&gb, bv.shape()));
            }
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (val(*a), val(*b));
                // C = op(A) op(B)
                let ga = if *ta { gemm(bv, *tb, g, true) } else { gemm(g, false, bv, !*tb) };
                let gb = if *tb { gemm(g, true, av, *ta) } else { gemm(av, !*ta, g, false) };
                acc(*a, ga.expect("matmul backward"));
                acc(*b, gb.expect("matmul backward"));
            }
            Op::Affine { x, w, b } => {
                acc(*x, gemm(g, false, val(*w), true).expect("affine backward"));
                acc(*w, gemm(val(*x), true, g, false).expect("affine backward"));
                acc(*b, reduce_to(g, [1, g.cols()]));
            }
            Op::Neg(a) => acc(*a, g.scale(-1.0)),
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::Offset(a) => acc(*a, g.clone()),
            Op::Exp(a) => acc(*a, g.zip_map(out, |g, y| g * y)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |g, x| g / x)),
            Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |g, x| g * sigmoid(x))),
            Op::Sinh(a) => acc(*a, g.zip_map(val(*a), |g, x| g * x.cosh())),
            Op::Asinh(a) => acc(*a, g.zip_map(val(*a), |g, x| g / (1.0 + x * x).sqrt())),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |g, x| 2.0 * g * x)),
            Op::Sqrt(a) => acc(*a, g.zip_map(out, |g, y| if y > 0.0 { 0.5 * g / y } else { 0.0 })),
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Tril(a) => acc(*a, g.tril()),
            Op::Diag(a) => acc(*a, Tensor::from_diag(g.data())),
            Op::Sum(a) => {
                let [r, c] = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let [r, c] = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::SumRows(a) | Op::SumCols(a) => {
                let [r, c] = val(*a).shape();
                acc(*a, expand(g, r, c));
            }
            Op::Broadcast(a) => acc(*a, reduce_to(g, val(*a).shape())),
            Op::Cholesky(a) => {
                let l = out;
                // Ā = L⁻ᵀ Φ(Lᵀ L̄) L⁻¹, symmetrized.
                let p = phi(&gemm(l, true, g, false).expect("cholesky backward"));
                let x = solve_lower(l, &p, true).expect("cholesky backward");
                let abar = solve_lower(l, &x.transpose(), true).expect("cholesky backward").transpose();
                let sym = abar.zip_map(&abar.transpose(), |u, v| 0.5 * (u + v));
                acc(*a, sym);
            }
            Op::Solve { l, b, transpose } => {
                let lv = val(*l);
                if !*transpose {
                    let gb = solve_lower(lv, g, true).expect("solve backward");
                    let gl = gemm(&gb, false, out, true).expect("solve backward").tril().scale(-1.0);
                    acc(*b, gb);
                    acc(*l, gl);
                } else {
                    let gb = solve_lower(lv, g, false).expect("solve backward");
                    let gl = gemm(out, false, &gb, true).expect("solve backward").tril().scale(-1.0);
                    acc(*b, gb);
                    acc(*l, gl);
                }
            }
            Op::SliceCols { a, start } => {
                let s = val(*a).shape();
                let mut t = Tensor::zeros(s[0], s[1]);
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        t.set(r, start + c, g.get(r, c));
                    }
                }
                acc(*a, t);
            }
            Op::SliceRows { a, start } => {
                let s = val(*a).shape();
                let mut t = Tensor::zeros(s[0], s[1]);
                let w = s[1];
                t.data_mut()[start * w..start * w + g.len()].copy_from_slice(g.data());
                acc(*a, t);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, g.slice_cols(offset, offset + w));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = val(p).rows();
                    acc(p, g.slice_rows(offset, offset + h));
                    offset += h;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_at_zero() {
        let mut tape = Tape::new();
        let x = tape.scalar(0.0);
        let y = tape.softplus(x);
        assert!((tape.item(y) - 2f64.ln()).abs() < 1e-15);
        assert!((tape.item(y) - 0.693147).abs() < 1e-6);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::column(&[1.0, -2.0]));
        let sq = tape.square(x);
        let root = tape.sum(sq);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, -4.0]);
    }

    #[test]
    fn logdet_gradient_is_inverse() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::from_diag(&[2.0, 2.0]));
        let l = tape.cholesky(a).unwrap();
        let d = tape.diag(l);
        let ld = tape.log(d);
        let s = tape.sum(ld);
        let root = tape.scale(s, 2.0);
        assert!((tape.item(root) - 2.0 * 2f64.ln()).abs() < 1e-14);
        let g = tape.backward(root).unwrap().wrt(a);
        let expected = Tensor::from_diag(&[0.5, 0.5]);
        assert!(g.zip_map(&expected, |a, b| (a - b).abs()).max_abs() < 1e-14);
    }

    #[test]
    fn unreachable_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::column(&[1.0, 2.0]));
        let unused = tape.leaf(Tensor::filled(2, 3, 5.0));
        let root = tape.sum(x);
        let g = tape.backward(root).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.wrt(unused), Tensor::zeros(2, 3));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::column(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    #[should_panic(expected = "cannot broadcast")]
    fn shape_mismatch_panics() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(3, 2));
        tape.add(a, b);
    }

    #[test]
    fn broadcast_row_and_column() {
        let mut tape = Tape::new();
        let m = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
        let row = tape.leaf(Tensor::row(&[10.0, 20.0]));
        let col = tape.leaf(Tensor::column(&[1.0, 2.0, 3.0]));
        let a = tape.add(m, row);
        let b = tape.mul(a, col);
        assert_eq!(tape.value(b).get(2, 1), 78.0);
        let root = tape.sum(b);
        let g = tape.backward(root).unwrap();
        assert_eq!(g.wrt(row).data(), &[6.0, 6.0]);
        assert_eq!(g.wrt(col).data(), &[33.0, 37.0, 41.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(4, 3, |r, c| (r as f64 - 1.3) * (c as f64 + 0.7)));
        let w = tape.leaf(Tensor::from_fn(3, 5, |r, c| ((r * 5 + c) as f64).sin()));
        let y = tape.matmul(x, w);
        let z = tape.softplus(y);
        let root = tape.mean(z);
        let g1 = tape.backward(root).unwrap();
        let g2 = tape.backward(root).unwrap();
        assert_eq!(g1.wrt(x).data(), g2.wrt(x).data());
        assert_eq!(g1.wrt(w).data(), g2.wrt(w).data());
    }
}
