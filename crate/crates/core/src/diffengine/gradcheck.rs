//! Central-difference gradient checks for tape operations.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffengine::{Tape, Var};
use crate::error::Result;

/// Builds one output node from the leaves of its inputs.
pub type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// A tape operation with input shapes and the sampling range of each input.
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<(usize, usize)>,
    pub ranges: Vec<(f64, f64)>,
    pub op: OpFn,
}

/// Central differences of a scalar function of one matrix input.
pub fn finite_difference(x: &Array2<f64>, f: &dyn Fn(&Array2<f64>) -> f64, h: f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[idx] += h;
        xm[idx] -= h;
        g[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn random_matrix(rng: &mut ChaCha8Rng, shape: (usize, usize), (lo, hi): (f64, f64)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

impl OpCase {
    fn new(
        name: &'static str,
        shapes: &[(usize, usize)],
        ranges: &[(f64, f64)],
        op: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name,
            shapes: shapes.to_vec(),
            ranges: ranges.to_vec(),
            op: Box::new(op),
        }
    }

    /// Largest relative error between reverse-mode and central-difference
    /// gradients of `Σ r ⊙ op(inputs)` over `instances` random draws, where
    /// `r` is a random weight so that every output entry contributes.
    pub fn max_relative_error(&self, instances: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let inputs: Vec<Array2<f64>> = self
                .shapes
                .iter()
                .zip(&self.ranges)
                .map(|(&s, &r)| random_matrix(&mut rng, s, r))
                .collect();
            let out_shape = {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
                let out = (self.op)(&mut tape, &vars)?;
                tape.shape(out)
            };
            let weight = random_matrix(&mut rng, out_shape, (-1.0, 1.0));
            let eval = |inputs: &[Array2<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
                let mut tape = Tape::new();
                let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
                let out = (self.op)(&mut tape, &vars)?;
                let w = tape.leaf(weight.clone());
                let prod = tape.mul(out, w)?;
                let root = tape.sum(prod);
                Ok((tape, vars, root))
            };
            let (tape, vars, root) = eval(&inputs)?;
            let grads = tape.backward(root)?;
            for (i, input) in inputs.iter().enumerate() {
                let f = |x: &Array2<f64>| {
                    let mut perturbed = inputs.clone();
                    perturbed[i] = x.clone();
                    let (t, _, r) = eval(&perturbed).expect("shapes already validated");
                    t.scalar_value(r)
                };
                let fd = finite_difference(input, &f, 1e-5);
                for (a, b) in grads.wrt(&tape, vars[i]).iter().zip(fd.iter()) {
                    worst = worst.max(relative_error(*a, *b, 1e-3));
                }
            }
        }
        Ok(worst)
    }
}

/// One case per differentiable operation of [`Tape`], with inputs kept away
/// from the kinks of `clamp` and inside the domains of `log` and `sqrt`.
pub fn standard_cases() -> Vec<OpCase> {
    let any = (-2.0, 2.0);
    let pos = (0.2, 3.0);
    vec![
        OpCase::new("add", &[(3, 4), (1, 4)], &[any, any], |t, v| t.add(v[0], v[1])),
        OpCase::new("sub", &[(3, 4), (3, 4)], &[any, any], |t, v| t.sub(v[0], v[1])),
        OpCase::new("mul", &[(1, 4), (3, 4)], &[any, any], |t, v| t.mul(v[0], v[1])),
        OpCase::new("mul_scalar", &[(1, 1), (3, 2)], &[any, any], |t, v| t.mul(v[0], v[1])),
        OpCase::new("matmul", &[(3, 4), (4, 2)], &[any, any], |t, v| t.matmul(v[0], v[1])),
        OpCase::new("affine", &[(3, 4), (4, 2), (1, 2)], &[any, any, any], |t, v| {
            t.affine(v[0], v[1], v[2])
        }),
        OpCase::new("scale", &[(2, 3)], &[any], |t, v| Ok(t.scale(v[0], -1.7))),
        OpCase::new("offset", &[(2, 3)], &[any], |t, v| Ok(t.offset(v[0], 0.4))),
        OpCase::new("neg", &[(2, 3)], &[any], |t, v| Ok(t.neg(v[0]))),
        OpCase::new("exp", &[(2, 3)], &[any], |t, v| Ok(t.exp(v[0]))),
        OpCase::new("log", &[(2, 3)], &[pos], |t, v| t.log(v[0])),
        OpCase::new("tanh", &[(2, 3)], &[any], |t, v| Ok(t.tanh(v[0]))),
        OpCase::new("softplus", &[(2, 3)], &[(-6.0, 6.0)], |t, v| Ok(t.softplus(v[0]))),
        OpCase::new("sqrt", &[(2, 3)], &[pos], |t, v| t.sqrt(v[0])),
        OpCase::new("square", &[(2, 3)], &[any], |t, v| Ok(t.square(v[0]))),
        OpCase::new("clamp_inside", &[(2, 3)], &[(-0.9, 0.9)], |t, v| Ok(t.clamp(v[0], -1.0, 1.0))),
        OpCase::new("clamp_outside", &[(2, 3)], &[(1.1, 3.0)], |t, v| Ok(t.clamp(v[0], -1.0, 1.0))),
        OpCase::new("sum", &[(3, 3)], &[any], |t, v| Ok(t.sum(v[0]))),
        OpCase::new("mean", &[(3, 3)], &[any], |t, v| t.mean(v[0])),
        OpCase::new("slice_cols", &[(3, 5)], &[any], |t, v| t.slice_cols(v[0], 1, 4)),
        OpCase::new("concat_cols", &[(3, 2), (3, 1)], &[any, any], |t, v| {
            t.concat_cols(&[v[0], v[1], v[0]])
        }),
        OpCase::new("block_contract", &[(2, 3), (2, 12)], &[any, any], |t, v| {
            t.block_contract(v[0], v[1])
        }),
        OpCase::new("gaussian_log_density", &[(3, 4), (3, 4), (1, 4)], &[any, any, pos], |t, v| {
            t.gaussian_log_density(v[0], v[1], v[2])
        }),
    ]
}
