//! Tape of dense 2-D array nodes with reverse-mode accumulation.
//!
//! Every node is a matrix; scalars are `1 × 1`. Elementwise binary ops
//! broadcast a length-1 axis against the other operand (`1 × c` against
//! `r × c`, `1 × 1` against anything) and reduce gradients back over the
//! broadcast axes. Nodes are appended in evaluation order, so the tape is a
//! topological order by construction.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Scale(Var, T),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Softplus(Var),
    Sqrt(Var),
    Square(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    BlockContract(Var, Var),
    GaussianLogDensity(Var, Var, Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<(usize, usize)> {
    match (broadcast_dim(a.0, b.0), broadcast_dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

fn expand<T: Scalar>(v: &Array2<T>, shape: (usize, usize)) -> ArrayView2<'_, T> {
    v.broadcast(shape).expect("shape checked at construction")
}

/// Sums `g` over the axes along which `shape` was broadcast.
fn reduce_to<T: Scalar>(g: Array2<T>, shape: (usize, usize)) -> Array2<T> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf: a parameter or a constant input.
    pub fn leaf(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// `1 × 1` leaf.
    pub fn scalar(&mut self, v: T) -> Var {
        self.leaf(Array2::from_elem((1, 1), v))
    }

    /// `1 × n` leaf from a slice.
    pub fn row(&mut self, v: &[T]) -> Var {
        self.leaf(Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row shape"))
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 × 1` node.
    pub fn scalar_value(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Array2<T>, (usize, usize))> {
        let shape = broadcast_shape(op, self.shape(a), self.shape(b))?;
        let av = expand(self.value(a), shape);
        let bv = expand(self.value(b), shape);
        Ok((Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y)), shape))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, _) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let v = self.value(a).dot(self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `x W + b` with `b` a `1 × out` row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.1 != sw.0 {
            return Err(Error::ShapeMismatch {
                op: "affine",
                lhs: sx,
                rhs: sw,
            });
        }
        if sb != (1, sw.1) {
            return Err(Error::ShapeMismatch {
                op: "affine bias",
                lhs: (1, sw.1),
                rhs: sb,
            });
        }
        let mut v = self.value(x).dot(self.value(w));
        v += self.value(b);
        Ok(self.push(v, Op::Affine(x, w, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::Offset(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(T::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| !(x > T::zero())) {
            return Err(Error::Domain("log of a nonpositive value".into()));
        }
        let v = self.value(a).mapv(T::ln);
        Ok(self.push(v, Op::Log(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(T::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.value(a).iter().any(|&x| !(x > T::zero())) {
            return Err(Error::Domain("sqrt of a nonpositive value (gradient undefined)".into()));
        }
        let v = self.value(a).mapv(T::sqrt);
        Ok(self.push(v, Op::Sqrt(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Clamp to `[lo, hi]`; zero gradient outside the open interval.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        let v = self.value(a).mapv(|x| x.max(lo).min(hi));
        self.push(v, Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean of all entries, `1 × 1`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::invalid("mean of an empty node"));
        }
        let v = Array2::from_elem((1, 1), self.value(a).sum() / T::from_usize_lossy(n));
        Ok(self.push(v, Op::Mean(a)))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let cols = self.shape(a).1;
        if start >= end || end > cols {
            return Err(Error::invalid(format!("column slice {start}..{end} of {cols} columns")));
        }
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(v, Op::SliceCols(a, start, end)))
    }

    /// Horizontal concatenation of nodes with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let rows = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(first),
                    rhs: self.shape(p),
                });
            }
        }
        let views: Vec<ArrayView2<'_, T>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("rows checked");
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Row-wise block contraction: `w` is `B × J`, `z` is `B × (J·N)`;
    /// `out[b, n] = Σ_j w[b, j] z[b, j·N + n]`.
    pub fn block_contract(&mut self, w: Var, z: Var) -> Result<Var> {
        let (sw, sz) = (self.shape(w), self.shape(z));
        if sw.0 != sz.0 || sw.1 == 0 || sz.1 % sw.1 != 0 {
            return Err(Error::ShapeMismatch {
                op: "block_contract",
                lhs: sw,
                rhs: sz,
            });
        }
        let n = sz.1 / sw.1;
        let (wv, zv) = (self.value(w), self.value(z));
        let mut out = Array2::zeros((sw.0, n));
        for b in 0..sw.0 {
            for j in 0..sw.1 {
                let c = wv[[b, j]];
                if c == T::zero() {
                    continue;
                }
                for i in 0..n {
                    out[[b, i]] += c * zv[[b, j * n + i]];
                }
            }
        }
        Ok(self.push(out, Op::BlockContract(w, z)))
    }

    /// `−½ Σ [ (x − μ)² / σ² + log σ² + log 2π ]` over the broadcast shape,
    /// `1 × 1`.
    pub fn gaussian_log_density(&mut self, x: Var, mu: Var, var: Var) -> Result<Var> {
        let s1 = broadcast_shape("gaussian_log_density", self.shape(x), self.shape(mu))?;
        let shape = broadcast_shape("gaussian_log_density", s1, self.shape(var))?;
        if self.value(var).iter().any(|&v| !(v > T::zero())) {
            return Err(Error::Domain("gaussian variance must be positive".into()));
        }
        let ln_2pi = T::TAU().ln();
        let half = T::lit(0.5);
        let mut acc = T::zero();
        Zip::from(&expand(self.value(x), shape))
            .and(&expand(self.value(mu), shape))
            .and(&expand(self.value(var), shape))
            .for_each(|&x, &m, &v| {
                let r = x - m;
                acc += r * r / v + v.ln() + ln_2pi;
            });
        let value = Array2::from_elem((1, 1), -half * acc);
        Ok(self.push(value, Op::GaussianLogDensity(x, mu, var)))
    }

    /// Reverse accumulation from a `1 × 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.shape(root) != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Array2<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Array2::from_elem((1, 1), T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let mut acc = |v: Var, d: Array2<T>| {
            let shape = self.shape(v);
            let d = reduce_to(d, shape);
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        let out_shape = node.value.dim();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                let av = expand(self.value(*a), out_shape);
                let bv = expand(self.value(*b), out_shape);
                acc(*a, Zip::from(g).and(&bv).map_collect(|&g, &y| g * y));
                acc(*b, Zip::from(g).and(&av).map_collect(|&g, &x| g * x));
            }
            Op::MatMul(a, b) => {
                acc(*a, g.dot(&self.value(*b).t()));
                acc(*b, self.value(*a).t().dot(g));
            }
            Op::Affine(x, w, b) => {
                acc(*x, g.dot(&self.value(*w).t()));
                acc(*w, self.value(*x).t().dot(g));
                acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, c) => acc(*a, g.mapv(|x| x * *c)),
            Op::Offset(a) => acc(*a, g.clone()),
            Op::Exp(a) => acc(*a, g * &node.value),
            Op::Log(a) => acc(*a, g / self.value(*a)),
            Op::Tanh(a) => acc(
                *a,
                Zip::from(g)
                    .and(&node.value)
                    .map_collect(|&g, &y| g * (T::one() - y * y)),
            ),
            Op::Softplus(a) => acc(
                *a,
                Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| g * sigmoid(x)),
            ),
            Op::Sqrt(a) => acc(
                *a,
                Zip::from(g)
                    .and(&node.value)
                    .map_collect(|&g, &y| g / (T::lit(2.0) * y)),
            ),
            Op::Square(a) => acc(
                *a,
                Zip::from(g)
                    .and(self.value(*a))
                    .map_collect(|&g, &x| T::lit(2.0) * x * g),
            ),
            Op::Clamp(a, lo, hi) => acc(
                *a,
                Zip::from(g).and(self.value(*a)).map_collect(|&g, &x| {
                    if x > *lo && x < *hi {
                        g
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Sum(a) => acc(*a, Array2::from_elem(self.shape(*a), g[[0, 0]])),
            Op::Mean(a) => {
                let n = T::from_usize_lossy(self.value(*a).len());
                acc(*a, Array2::from_elem(self.shape(*a), g[[0, 0]] / n));
            }
            Op::SliceCols(a, start, end) => {
                let mut d = Array2::zeros(self.shape(*a));
                d.slice_mut(s![.., *start..*end]).assign(g);
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice(s![.., col..col + w]).to_owned());
                    col += w;
                }
            }
            Op::BlockContract(w, z) => {
                let (wv, zv) = (self.value(*w), self.value(*z));
                let (rows, blocks) = wv.dim();
                let n = out_shape.1;
                let mut dw = Array2::zeros((rows, blocks));
                let mut dz = Array2::zeros(zv.dim());
                for b in 0..rows {
                    for j in 0..blocks {
                        let c = wv[[b, j]];
                        let mut s = T::zero();
                        for i in 0..n {
                            s += g[[b, i]] * zv[[b, j * n + i]];
                            dz[[b, j * n + i]] = g[[b, i]] * c;
                        }
                        dw[[b, j]] = s;
                    }
                }
                acc(*w, dw);
                acc(*z, dz);
            }
            Op::GaussianLogDensity(x, mu, var) => {
                let shape = broadcast_shape(
                    "gaussian_log_density",
                    broadcast_shape("gaussian_log_density", self.shape(*x), self.shape(*mu)).unwrap(),
                    self.shape(*var),
                )
                .unwrap();
                let g0 = g[[0, 0]];
                let xv = expand(self.value(*x), shape);
                let mv = expand(self.value(*mu), shape);
                let vv = expand(self.value(*var), shape);
                let mut dx = Array2::zeros(shape);
                let mut dv = Array2::zeros(shape);
                Zip::from(&mut dx)
                    .and(&mut dv)
                    .and(&xv)
                    .and(&mv)
                    .and(&vv)
                    .for_each(|dx, dv, &x, &m, &v| {
                        let r = x - m;
                        *dx = -g0 * r / v;
                        *dv = -T::lit(0.5) * g0 * (T::one() / v - r * r / (v * v));
                    });
                acc(*mu, dx.mapv(|d| -d));
                acc(*x, dx);
                acc(*var, dv);
            }
        }
    }
}

/// Gradients of a backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient with respect to `v`, zeros if `v` does not influence the root.
    pub fn wrt(&self, tape: &Tape<T>, v: Var) -> Array2<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(tape.shape(v)))
    }
}
