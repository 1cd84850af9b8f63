//! The weighted ELBO as a differentiable graph over a minibatch.

use ndarray::{s, Array2, ArrayView2};

use crate::diffengine::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stochastics::{standard_normal, stream, stream_rng};
use crate::vlm::model::{ModelParams, ModelSpec, LOGVAR_MAX, LOGVAR_MIN};

/// Constant matrices shared by every ELBO evaluation of one model shape.
#[derive(Clone, Debug)]
pub struct GraphConsts<T> {
    /// `N × d`, copies `λ_n` to every block entry of mode `n`.
    expand_lambda: Array2<T>,
    /// `L × d`, routes `√q_ℓ` to the forced entries of noise index `ℓ`.
    expand_q: Array2<T>,
    /// `1 × d` rows holding `m_k(t)` at the forced entries, at grid times.
    forcing_at_nodes: Vec<Array2<T>>,
    /// Same at interval midpoints.
    forcing_at_mids: Vec<Array2<T>>,
    /// `N × M3`, `h_n(x_j)`.
    design: Array2<T>,
}

impl<T: Scalar> GraphConsts<T> {
    pub fn new(spec: &ModelSpec<T>) -> Result<Self> {
        let layout = spec.layout;
        let d = layout.dim();
        let n_modes = layout.n_modes;
        let mut expand_lambda = Array2::zeros((n_modes, d));
        for flat in 0..d {
            expand_lambda[[flat % n_modes, flat]] = T::one();
        }
        let forced = layout.forced_entries();
        let mut expand_q = Array2::zeros((layout.l_noise, d));
        for &(flat, _, l) in &forced {
            expand_q[[l - 1, flat]] = T::one();
        }
        let tb = spec.time_basis();
        let row_at = |t: T| {
            let mut row = Array2::zeros((1, d));
            for &(flat, k, _) in &forced {
                row[[0, flat]] = tb.eval_unchecked(k, t);
            }
            row
        };
        let forcing_at_nodes = spec.times.iter().map(|&t| row_at(t)).collect();
        let forcing_at_mids = spec
            .times
            .windows(2)
            .map(|w| row_at(T::lit(0.5) * (w[0] + w[1])))
            .collect();
        Ok(Self {
            expand_lambda,
            expand_q,
            forcing_at_nodes,
            forcing_at_mids,
            design: spec.basis().design(&spec.space),
        })
    }
}

/// Standard-normal draws feeding the reparameterization, `B × N` and `B × KL`.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboNoise<T> {
    pub z: Array2<T>,
    pub xi: Array2<T>,
}

impl<T: Scalar> ElboNoise<T> {
    pub fn zeros(spec: &ModelSpec<T>, batch: usize) -> Self {
        Self {
            z: Array2::zeros((batch, spec.layout.n_modes)),
            xi: Array2::zeros((batch, spec.layout.n_chaos())),
        }
    }

    /// Draws from a dedicated stream so a given `(seed, stream_id)` always
    /// yields the same noise.
    pub fn sample(spec: &ModelSpec<T>, batch: usize, seed: u64, stream_id: u64) -> Self {
        let mut rng = stream_rng(seed, stream_id);
        let z = Array2::from_shape_simple_fn((batch, spec.layout.n_modes), || standard_normal(&mut rng));
        let xi = Array2::from_shape_simple_fn((batch, spec.layout.n_chaos()), || standard_normal(&mut rng));
        Self { z, xi }
    }

    pub(crate) fn for_batch(spec: &ModelSpec<T>, batch: usize, seed: u64, epoch: usize, index: usize) -> Self {
        Self::sample(spec, batch, seed, stream::id(stream::REPARAM, epoch as u64, index as u64))
    }
}

/// KL weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlWeights<T> {
    pub beta_z: T,
    pub beta_xi: T,
}

/// Batch sums of the ELBO and its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms<T> {
    pub elbo: T,
    pub log_likelihood: T,
    pub kl_z: T,
    pub kl_xi: T,
}

/// Graph handles produced by [`build_elbo`].
#[derive(Clone, Copy, Debug)]
pub struct ElboGraph {
    pub params: [Var; 9],
    pub elbo: Var,
    pub log_likelihood: Var,
    pub kl_z: Var,
    pub kl_xi: Var,
}

impl ElboGraph {
    pub fn terms<T: Scalar>(&self, tape: &Tape<T>) -> ElboTerms<T> {
        ElboTerms {
            elbo: tape.scalar_value(self.elbo),
            log_likelihood: tape.scalar_value(self.log_likelihood),
            kl_z: tape.scalar_value(self.kl_z),
            kl_xi: tape.scalar_value(self.kl_xi),
        }
    }
}

/// `½ Σ (μ² + e^{v} − 1 − v)` over all entries.
fn kl_node<T: Scalar>(tape: &mut Tape<T>, mean: Var, logvar: Var) -> Result<Var> {
    let (rows, cols) = tape.shape(mean);
    let m2 = tape.square(mean);
    let ev = tape.exp(logvar);
    let a = tape.add(m2, ev)?;
    let b = tape.sub(a, logvar)?;
    let total = tape.sum(b);
    let shifted = tape.offset(total, -T::from_usize_lossy(rows * cols));
    Ok(tape.scale(shifted, T::lit(0.5)))
}

/// Records the batch ELBO `Σ_b [log p(X_b | ·) − β_z KL_z − β_ξ KL_ξ]` for
/// observations `x` of shape `B × (M2 + 1)·M3` (time-major rows).
pub fn build_elbo<T: Scalar>(
    tape: &mut Tape<T>,
    spec: &ModelSpec<T>,
    consts: &GraphConsts<T>,
    params: &ModelParams<T>,
    x: ArrayView2<'_, T>,
    noise: &ElboNoise<T>,
    weights: KlWeights<T>,
) -> Result<ElboGraph> {
    let batch = x.nrows();
    if x.ncols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "elbo",
            lhs: x.dim(),
            rhs: (batch, spec.input_dim()),
        });
    }
    let (n, c) = (spec.layout.n_modes, spec.layout.n_chaos());
    if noise.z.dim() != (batch, n) || noise.xi.dim() != (batch, c) {
        return Err(Error::ShapeMismatch {
            op: "elbo noise",
            lhs: noise.z.dim(),
            rhs: (batch, n),
        });
    }
    let p: Vec<Var> = params.tensors().iter().map(|t| tape.leaf((*t).clone())).collect();
    let pv: [Var; 9] = p.try_into().expect("nine tensors");
    let [w1, b1, w2, b2, w3, b3, lambda_raw, q_raw, dec_logvar] = pv;

    // encoder
    let xv = tape.leaf(params.input_norm.apply(x));
    let a1 = tape.affine(xv, w1, b1)?;
    let h1 = tape.tanh(a1);
    let a2 = tape.affine(h1, w2, b2)?;
    let h2 = tape.tanh(a2);
    let out = tape.affine(h2, w3, b3)?;
    let (lo, hi) = (T::lit(LOGVAR_MIN), T::lit(LOGVAR_MAX));
    let mean_z = tape.slice_cols(out, 0, n)?;
    let raw_lv_z = tape.slice_cols(out, n, 2 * n)?;
    let logvar_z = tape.clamp(raw_lv_z, lo, hi);
    let mean_xi = tape.slice_cols(out, 2 * n, 2 * n + c)?;
    let raw_lv_xi = tape.slice_cols(out, 2 * n + c, 2 * n + 2 * c)?;
    let logvar_xi = tape.clamp(raw_lv_xi, lo, hi);

    // reparameterized samples
    let sample = |tape: &mut Tape<T>, mean: Var, logvar: Var, g: &Array2<T>| -> Result<Var> {
        let half = tape.scale(logvar, T::lit(0.5));
        let sd = tape.exp(half);
        let gv = tape.leaf(g.clone());
        let e = tape.mul(sd, gv)?;
        tape.add(mean, e)
    };
    let z0 = sample(tape, mean_z, logvar_z, &noise.z)?;
    let xi = sample(tape, mean_xi, logvar_xi, &noise.xi)?;

    // dynamics
    let lambdas = tape.softplus(lambda_raw);
    let lam_const = tape.leaf(consts.expand_lambda.clone());
    let lam_full = tape.matmul(lambdas, lam_const)?;
    let qs = tape.softplus(q_raw);
    let sqrt_q = tape.sqrt(qs)?;
    let q_const = tape.leaf(consts.expand_q.clone());
    let sqrt_q_full = tape.matmul(sqrt_q, q_const)?;
    let forcing = |tape: &mut Tape<T>, row: &Array2<T>| -> Result<Var> {
        let r = tape.leaf(row.clone());
        tape.mul(sqrt_q_full, r)
    };
    let field = |tape: &mut Tape<T>, f: Var, y: Var| -> Result<Var> {
        let decay = tape.mul(y, lam_full)?;
        tape.sub(f, decay)
    };

    let rest = tape.leaf(Array2::zeros((batch, spec.layout.dim() - n)));
    let mut state = tape.concat_cols(&[z0, rest])?;
    let mut states = Vec::with_capacity(spec.n_times());
    states.push(state);
    let mut f_left = forcing(tape, &consts.forcing_at_nodes[0])?;
    for i in 0..spec.n_times() - 1 {
        let h = spec.times[i + 1] - spec.times[i];
        let half = T::lit(0.5) * h;
        let f_mid = forcing(tape, &consts.forcing_at_mids[i])?;
        let f_right = forcing(tape, &consts.forcing_at_nodes[i + 1])?;
        let k1 = field(tape, f_left, state)?;
        let d1 = tape.scale(k1, half);
        let y2 = tape.add(state, d1)?;
        let k2 = field(tape, f_mid, y2)?;
        let d2 = tape.scale(k2, half);
        let y3 = tape.add(state, d2)?;
        let k3 = field(tape, f_mid, y3)?;
        let d3 = tape.scale(k3, h);
        let y4 = tape.add(state, d3)?;
        let k4 = field(tape, f_right, y4)?;
        let k23 = tape.add(k2, k3)?;
        let k23x2 = tape.scale(k23, T::lit(2.0));
        let s14 = tape.add(k1, k4)?;
        let sum = tape.add(s14, k23x2)?;
        let incr = tape.scale(sum, h / T::lit(6.0));
        state = tape.add(state, incr)?;
        states.push(state);
        f_left = f_right;
    }

    // reconstruction and likelihood
    let ones = tape.leaf(Array2::ones((batch, 1)));
    let chaos_weights = tape.concat_cols(&[ones, xi])?;
    let design = tape.leaf(consts.design.clone());
    let dec_lv = tape.clamp(dec_logvar, lo, hi);
    let dec_var = tape.exp(dec_lv);
    let m3 = spec.n_space();
    let mut log_likelihood = None;
    for (j, &z) in states.iter().enumerate() {
        let coeffs = tape.block_contract(chaos_weights, z)?;
        let mean = tape.matmul(coeffs, design)?;
        let target = tape.leaf(x.slice(s![.., j * m3..(j + 1) * m3]).to_owned());
        let ll = tape.gaussian_log_density(target, mean, dec_var)?;
        log_likelihood = Some(match log_likelihood {
            None => ll,
            Some(acc) => tape.add(acc, ll)?,
        });
    }
    let log_likelihood = log_likelihood.expect("at least one time");

    let kl_z = kl_node(tape, mean_z, logvar_z)?;
    let kl_xi = kl_node(tape, mean_xi, logvar_xi)?;
    let wz = tape.scale(kl_z, weights.beta_z);
    let wxi = tape.scale(kl_xi, weights.beta_xi);
    let penalty = tape.add(wz, wxi)?;
    let elbo = tape.sub(log_likelihood, penalty)?;
    Ok(ElboGraph {
        params: pv,
        elbo,
        log_likelihood,
        kl_z,
        kl_xi,
    })
}

/// Batch ELBO terms without gradients.
pub fn elbo_terms<T: Scalar>(
    spec: &ModelSpec<T>,
    consts: &GraphConsts<T>,
    params: &ModelParams<T>,
    x: ArrayView2<'_, T>,
    noise: &ElboNoise<T>,
    weights: KlWeights<T>,
) -> Result<ElboTerms<T>> {
    let mut tape = Tape::new();
    let g = build_elbo(&mut tape, spec, consts, params, x, noise, weights)?;
    Ok(g.terms(&tape))
}

/// Batch ELBO terms and the gradient of the batch ELBO with respect to
/// every parameter tensor.
pub fn elbo_with_gradients<T: Scalar>(
    spec: &ModelSpec<T>,
    consts: &GraphConsts<T>,
    params: &ModelParams<T>,
    x: ArrayView2<'_, T>,
    noise: &ElboNoise<T>,
    weights: KlWeights<T>,
) -> Result<(ElboTerms<T>, Vec<Array2<T>>)> {
    let mut tape = Tape::new();
    let g = build_elbo(&mut tape, spec, consts, params, x, noise, weights)?;
    let grads = tape.backward(g.elbo)?;
    let out = g.params.iter().map(|&v| grads.wrt(&tape, v)).collect();
    Ok((g.terms(&tape), out))
}
