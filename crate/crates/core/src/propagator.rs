//! Deterministic latent dynamics of the first-order chaos expansion.
//!
//! The latent state `z_t ∈ ℝ^d`, `d = N(1 + KL)`, stacks `1 + KL` blocks of
//! `N` modal coefficients: block 0 holds the zero-order (mean) propagators,
//! block `b = (k−1)L + ℓ` the first-order propagators of `e_{k,ℓ}`. Each
//! entry obeys
//!
//! ```text
//! d/dt z^{(0,n)}       = −λ_n z^{(0,n)}
//! d/dt z^{(e_{k,ℓ},n)} = −λ_n z^{(e_{k,ℓ},n)} + δ_{nℓ} m_k(t) √q_ℓ
//! ```
//!
//! with `Q` diagonal in the eigenbasis. Higher-order propagators vanish, so
//! nothing beyond these blocks is represented.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::{inverse_softplus, softplus, Scalar};
use crate::spectral::{SpatialBasis, SpatialGrid};
use crate::stochastics::{ChaosIndex, ChaosIndexSet, TimeBasis};

/// Shape of the latent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentLayout {
    pub n_modes: usize,
    pub k_time: usize,
    pub l_noise: usize,
}

impl LatentLayout {
    pub fn new(n_modes: usize, k_time: usize, l_noise: usize) -> Result<Self> {
        if n_modes == 0 || k_time == 0 || l_noise == 0 {
            return Err(Error::invalid("latent layout needs N, K, L >= 1"));
        }
        Ok(Self {
            n_modes,
            k_time,
            l_noise,
        })
    }

    /// `d = N(1 + KL)`.
    pub fn dim(&self) -> usize {
        self.n_modes * (1 + self.n_chaos())
    }

    pub fn n_chaos(&self) -> usize {
        self.k_time * self.l_noise
    }

    /// Number of blocks, `1 + KL`.
    pub fn n_blocks(&self) -> usize {
        1 + self.n_chaos()
    }

    pub fn chaos_set(&self) -> ChaosIndexSet {
        ChaosIndexSet::new(self.k_time, self.l_noise).expect("layout validated")
    }

    /// Flat position of coefficient `(α, n)`.
    pub fn latent_index(&self, n: usize, alpha: ChaosIndex) -> Result<usize> {
        if n == 0 || n > self.n_modes {
            return Err(Error::IndexOutOfRange {
                what: "mode",
                index: n,
                max: self.n_modes,
            });
        }
        match alpha {
            ChaosIndex::Zero => Ok(n - 1),
            ChaosIndex::First { k, l } => {
                let pos = self.chaos_set().position(k, l)?;
                Ok(self.n_modes * (pos + 1) + (n - 1))
            }
        }
    }

    /// Inverse of [`latent_index`](Self::latent_index).
    pub fn decompose(&self, flat: usize) -> (usize, ChaosIndex) {
        let block = flat / self.n_modes;
        let n = flat % self.n_modes + 1;
        if block == 0 {
            (n, ChaosIndex::Zero)
        } else {
            let (k, l) = self.chaos_set().index_at(block - 1);
            (n, ChaosIndex::First { k, l })
        }
    }

    /// Positions of the forced first-order entries `(e_{k,ℓ}, n = ℓ)`,
    /// as `(flat index, k, ℓ)`. Entries with `ℓ > N` have no forced mode.
    pub fn forced_entries(&self) -> Vec<(usize, usize, usize)> {
        let set = self.chaos_set();
        set.iter()
            .filter(|&(_, l)| l <= self.n_modes)
            .map(|(k, l)| {
                let flat = self
                    .latent_index(l, ChaosIndex::First { k, l })
                    .expect("in range");
                (flat, k, l)
            })
            .collect()
    }
}

/// Unconstrained dynamics parameters; `λ = softplus(lambda_raw)`,
/// `q = softplus(q_raw)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsParams<T> {
    pub lambda_raw: Vec<T>,
    pub q_raw: Vec<T>,
}

impl<T: Scalar> DynamicsParams<T> {
    /// All `λ_n = 1`, `q_ℓ = 1`.
    pub fn initial(n_modes: usize, l_noise: usize) -> Self {
        let one = inverse_softplus(T::one());
        Self {
            lambda_raw: vec![one; n_modes],
            q_raw: vec![one; l_noise],
        }
    }

    /// From positive values.
    pub fn from_positive(lambdas: &[T], qs: &[T]) -> Result<Self> {
        if lambdas.iter().chain(qs).any(|&v| !(v > T::zero())) {
            return Err(Error::invalid("λ and q must be strictly positive"));
        }
        Ok(Self {
            lambda_raw: lambdas.iter().map(|&v| inverse_softplus(v)).collect(),
            q_raw: qs.iter().map(|&v| inverse_softplus(v)).collect(),
        })
    }

    pub fn lambdas(&self) -> Vec<T> {
        self.lambda_raw.iter().map(|&u| softplus(u)).collect()
    }

    pub fn qs(&self) -> Vec<T> {
        self.q_raw.iter().map(|&u| softplus(u)).collect()
    }
}

/// The propagator vector field with positive rates resolved.
#[derive(Clone, Debug)]
pub struct Dynamics<T> {
    pub layout: LatentLayout,
    pub time_basis: TimeBasis<T>,
    lambdas: Vec<T>,
    sqrt_q: Vec<T>,
    forced: Vec<(usize, usize, usize)>,
}

impl<T: Scalar> Dynamics<T> {
    pub fn new(layout: LatentLayout, time_basis: TimeBasis<T>, lambdas: Vec<T>, qs: Vec<T>) -> Result<Self> {
        if lambdas.len() != layout.n_modes {
            return Err(Error::LengthMismatch {
                what: "λ",
                expected: layout.n_modes,
                actual: lambdas.len(),
            });
        }
        if qs.len() != layout.l_noise {
            return Err(Error::LengthMismatch {
                what: "q",
                expected: layout.l_noise,
                actual: qs.len(),
            });
        }
        if time_basis.k_max < layout.k_time {
            return Err(Error::invalid("time basis shorter than K"));
        }
        if qs.iter().any(|&q| q < T::zero()) {
            return Err(Error::invalid("q must be nonnegative"));
        }
        Ok(Self {
            forced: layout.forced_entries(),
            layout,
            time_basis,
            lambdas,
            sqrt_q: qs.iter().map(|q| q.sqrt()).collect(),
        })
    }

    pub fn from_params(layout: LatentLayout, time_basis: TimeBasis<T>, params: &DynamicsParams<T>) -> Result<Self> {
        Self::new(layout, time_basis, params.lambdas(), params.qs())
    }

    pub fn lambdas(&self) -> &[T] {
        &self.lambdas
    }

    /// Writes `f(t, z)` into `out`.
    pub fn vector_field_into(&self, t: T, z: &[T], out: &mut [T]) {
        let n_modes = self.layout.n_modes;
        for (i, (o, &v)) in out.iter_mut().zip(z).enumerate() {
            *o = -self.lambdas[i % n_modes] * v;
        }
        for &(flat, k, l) in &self.forced {
            out[flat] += self.time_basis.eval_unchecked(k, t) * self.sqrt_q[l - 1];
        }
    }

    pub fn vector_field(&self, t: T, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.layout.dim() {
            return Err(Error::LengthMismatch {
                what: "latent state",
                expected: self.layout.dim(),
                actual: z.len(),
            });
        }
        let mut out = vec![T::zero(); z.len()];
        self.vector_field_into(t, z, &mut out);
        Ok(out)
    }

    /// Classical RK4, one step per grid interval; row `j` is the state at
    /// `times[j]` (row 0 is `z0`).
    pub fn rk4_integrate(&self, z0: &[T], times: &[T]) -> Result<Array2<T>> {
        let d = self.layout.dim();
        if z0.len() != d {
            return Err(Error::LengthMismatch {
                what: "initial latent state",
                expected: d,
                actual: z0.len(),
            });
        }
        if times.is_empty() {
            return Err(Error::invalid("empty time grid"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        let mut out = Array2::zeros((times.len(), d));
        out.row_mut(0).assign(&ndarray::ArrayView1::from(z0));
        let mut z = z0.to_vec();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d]);
        let two = T::lit(2.0);
        let six = T::lit(6.0);
        for j in 1..times.len() {
            let t = times[j - 1];
            let h = times[j] - t;
            let half = h / two;
            self.vector_field_into(t, &z, &mut k1);
            for i in 0..d {
                tmp[i] = z[i] + half * k1[i];
            }
            self.vector_field_into(t + half, &tmp, &mut k2);
            for i in 0..d {
                tmp[i] = z[i] + half * k2[i];
            }
            self.vector_field_into(t + half, &tmp, &mut k3);
            for i in 0..d {
                tmp[i] = z[i] + h * k3[i];
            }
            self.vector_field_into(t + h, &tmp, &mut k4);
            for i in 0..d {
                z[i] += h / six * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
            }
            out.row_mut(j).assign(&ndarray::ArrayView1::from(&z[..]));
        }
        Ok(out)
    }

    /// Initial state with the zero-order block set to `c0` and every
    /// first-order block zero.
    pub fn initial_state(&self, c0: &[T]) -> Result<Vec<T>> {
        if c0.len() != self.layout.n_modes {
            return Err(Error::LengthMismatch {
                what: "zero-order initial block",
                expected: self.layout.n_modes,
                actual: c0.len(),
            });
        }
        let mut z = vec![T::zero(); self.layout.dim()];
        z[..c0.len()].copy_from_slice(c0);
        Ok(z)
    }
}

/// `f(t, z)` for the given parameters.
pub fn vector_field<T: Scalar>(
    params: &DynamicsParams<T>,
    layout: LatentLayout,
    time_basis: TimeBasis<T>,
    t: T,
    z: &[T],
) -> Result<Vec<T>> {
    Dynamics::from_params(layout, time_basis, params)?.vector_field(t, z)
}

/// RK4 states at every grid time.
pub fn rk4_integrate<T: Scalar>(
    params: &DynamicsParams<T>,
    layout: LatentLayout,
    time_basis: TimeBasis<T>,
    z0: &[T],
    times: &[T],
) -> Result<Array2<T>> {
    Dynamics::from_params(layout, time_basis, params)?.rk4_integrate(z0, times)
}

/// `√q ∫_0^t e^{−λ(t−s)} m_k(s) ds`, the exact first-order propagator.
pub fn closed_form_propagator<T: Scalar>(lambda: T, q: T, k: usize, t: T, time_basis: &TimeBasis<T>) -> T {
    q.sqrt() * time_basis.damped_integral(k, lambda, t)
}

/// Closed-form latent trajectory for `c0` on `times`.
pub fn closed_form_states<T: Scalar>(
    layout: LatentLayout,
    time_basis: &TimeBasis<T>,
    lambdas: &[T],
    qs: &[T],
    c0: &[T],
    times: &[T],
) -> Array2<T> {
    let mut out = Array2::zeros((times.len(), layout.dim()));
    for (j, &t) in times.iter().enumerate() {
        for n in 0..layout.n_modes {
            out[[j, n]] = c0[n] * (-lambdas[n] * t).exp();
        }
        for (flat, k, l) in layout.forced_entries() {
            out[[j, flat]] = closed_form_propagator(lambdas[l - 1], qs[l - 1], k, t, time_basis);
        }
    }
    out
}

/// Evaluates the truncated chaos expansion on an observation grid.
#[derive(Clone, Debug)]
pub struct Reconstructor<T> {
    layout: LatentLayout,
    /// `N × M3`, `h_n(x_j)`.
    design: Array2<T>,
}

impl<T: Scalar> Reconstructor<T> {
    pub fn new(layout: LatentLayout, basis: &SpatialBasis<T>, grid: &SpatialGrid<T>) -> Result<Self> {
        if basis.n_modes() != layout.n_modes {
            return Err(Error::LengthMismatch {
                what: "basis modes",
                expected: layout.n_modes,
                actual: basis.n_modes(),
            });
        }
        Ok(Self {
            layout,
            design: basis.design(&grid.points),
        })
    }

    pub fn design(&self) -> &Array2<T> {
        &self.design
    }

    /// Modal coefficients `c_n(t) = z^{(0,n)} + Σ_α z^{(α,n)} ξ_α`,
    /// shape `times × N`.
    pub fn modal_coefficients(&self, states: ArrayView2<'_, T>, xi: &[T]) -> Result<Array2<T>> {
        let layout = &self.layout;
        if states.ncols() != layout.dim() {
            return Err(Error::LengthMismatch {
                what: "latent state",
                expected: layout.dim(),
                actual: states.ncols(),
            });
        }
        if xi.len() != layout.n_chaos() {
            return Err(Error::LengthMismatch {
                what: "chaos coordinates",
                expected: layout.n_chaos(),
                actual: xi.len(),
            });
        }
        let n_modes = layout.n_modes;
        let mut c = Array2::zeros((states.nrows(), n_modes));
        for (j, row) in states.rows().into_iter().enumerate() {
            for n in 0..n_modes {
                let mut acc = row[n];
                for (a, &x) in xi.iter().enumerate() {
                    acc += row[(a + 1) * n_modes + n] * x;
                }
                c[[j, n]] = acc;
            }
        }
        Ok(c)
    }

    /// Field `X̂[m2, m3]`, shape `times × M3`.
    pub fn reconstruct(&self, states: ArrayView2<'_, T>, xi: &[T]) -> Result<Array2<T>> {
        Ok(self.modal_coefficients(states, xi)?.dot(&self.design))
    }
}

/// One-shot [`Reconstructor::reconstruct`].
pub fn reconstruct<T: Scalar>(
    layout: LatentLayout,
    states: ArrayView2<'_, T>,
    xi: &[T],
    basis: &SpatialBasis<T>,
    grid: &SpatialGrid<T>,
) -> Result<Array2<T>> {
    Reconstructor::new(layout, basis, grid)?.reconstruct(states, xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Regime;
    use crate::stochastics::{sample_chaos_stream, TimeBasis};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn uniform_times(m2: usize, horizon: f64) -> Vec<f64> {
        (0..=m2).map(|j| horizon * j as f64 / m2 as f64).collect()
    }

    #[test]
    fn latent_index_examples() {
        let layout = LatentLayout::new(8, 16, 8).unwrap();
        assert_eq!(layout.dim(), 1032);
        assert_eq!(layout.latent_index(1, ChaosIndex::Zero).unwrap(), 0);
        assert_eq!(layout.latent_index(1, ChaosIndex::First { k: 1, l: 1 }).unwrap(), 8);
        assert_eq!(layout.latent_index(8, ChaosIndex::First { k: 16, l: 8 }).unwrap(), 1031);
        assert!(layout.latent_index(9, ChaosIndex::Zero).is_err());
        assert!(layout.latent_index(1, ChaosIndex::First { k: 17, l: 1 }).is_err());
        let mut seen = vec![false; layout.dim()];
        for flat in 0..layout.dim() {
            let (n, alpha) = layout.decompose(flat);
            let back = layout.latent_index(n, alpha).unwrap();
            assert_eq!(back, flat);
            seen[back] = true;
        }
        assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn vector_field_examples() {
        let layout = LatentLayout::new(3, 2, 2).unwrap();
        let tb = TimeBasis::new(1.0, 2).unwrap();
        let dynamics = Dynamics::new(layout, tb, vec![2.0, 1.0, 3.0], vec![4.0, 0.25]).unwrap();
        let f = dynamics.vector_field(0.0, &vec![0.0; layout.dim()]).unwrap();
        for (flat, v) in f.iter().enumerate() {
            let (n, alpha) = layout.decompose(flat);
            match alpha {
                ChaosIndex::First { k, l } if l == n => {
                    let want = tb.eval(k, 0.0).unwrap() * [2.0, 0.5][l - 1];
                    assert_abs_diff_eq!(*v, want, epsilon = 1e-15);
                }
                _ => assert_eq!(*v, 0.0),
            }
        }
        let mut z = vec![0.0; layout.dim()];
        z[0] = 1.0;
        let f = dynamics.vector_field(0.3, &z).unwrap();
        assert_eq!(f[0], -2.0);

        let quiet = Dynamics::new(layout, tb, vec![2.0, 1.0, 3.0], vec![0.0, 0.0]).unwrap();
        let z: Vec<f64> = (0..layout.dim()).map(|i| i as f64 * 0.1).collect();
        let f = quiet.vector_field(0.7, &z).unwrap();
        for (i, v) in f.iter().enumerate() {
            assert_abs_diff_eq!(*v, -[2.0, 1.0, 3.0][i % 3] * z[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn rk4_scalar_decay() {
        let layout = LatentLayout::new(1, 1, 1).unwrap();
        let tb = TimeBasis::new(1.0, 1).unwrap();
        let dynamics = Dynamics::new(layout, tb, vec![1.0], vec![0.0]).unwrap();
        let states = dynamics.rk4_integrate(&[1.0, 0.0], &uniform_times(200, 1.0)).unwrap();
        assert!((states[[200, 0]] - (-1.0f64).exp()).abs() < 1e-9);
        assert!(dynamics.rk4_integrate(&[1.0, 0.0], &[0.0, 0.5, 0.4]).is_err());
    }

    #[test]
    fn rk4_first_order_entry() {
        let layout = LatentLayout::new(1, 1, 1).unwrap();
        let tb = TimeBasis::new(1.0, 1).unwrap();
        let dynamics = Dynamics::new(layout, tb, vec![1.0], vec![1.0]).unwrap();
        let states = dynamics.rk4_integrate(&[0.0, 0.0], &uniform_times(200, 1.0)).unwrap();
        assert!((states[[200, 1]] - 0.632_120_558_828_557_7).abs() < 1e-8);
        let quiet = Dynamics::new(layout, tb, vec![1.0], vec![0.0]).unwrap();
        let states = quiet.rk4_integrate(&[0.0, 0.0], &uniform_times(200, 1.0)).unwrap();
        assert!(states.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_form_examples() {
        let tb = TimeBasis::new(1.0, 4).unwrap();
        assert_abs_diff_eq!(closed_form_propagator(1.0, 1.0, 1, 1.0, &tb), 0.632_120_558_828_557_7, epsilon = 1e-15);
        for k in 1..=4 {
            assert_eq!(closed_form_propagator(2.0, 0.5, k, 0.0, &tb), 0.0);
        }
        let stiff = closed_form_propagator(1e8, 1.0, 1, 1.0, &tb);
        assert!(stiff > 0.0 && stiff < 1e-7);
    }

    fn rk4_sup_error(regime: Regime, m2: usize) -> (f64, LatentLayout, Array2<f64>) {
        let layout = LatentLayout::new(8, 16, 8).unwrap();
        let basis = SpatialBasis::<f64>::new(regime, 8).unwrap();
        let lambdas = basis.eigenvalues();
        let qs: Vec<f64> = (1..=8).map(|l| (l as f64).powf(-2.01)).collect();
        let c0 = basis.initial_condition_coeffs();
        let tb = TimeBasis::new(1.0, 16).unwrap();
        let times = uniform_times(m2, 1.0);
        let dynamics = Dynamics::new(layout, tb, lambdas.clone(), qs.clone()).unwrap();
        let rk4 = dynamics
            .rk4_integrate(&dynamics.initial_state(&c0).unwrap(), &times)
            .unwrap();
        let exact = closed_form_states(layout, &tb, &lambdas, &qs, &c0, &times);
        let sup = (&rk4 - &exact).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (sup, layout, rk4)
    }

    #[test]
    fn rk4_matches_closed_form_both_spectra() {
        for regime in [Regime::OrnsteinUhlenbeck, Regime::DirichletHeat] {
            let (coarse, layout, rk4) = rk4_sup_error(regime, 200);
            let (fine, _, _) = rk4_sup_error(regime, 400);
            // one step per interval leaves an O(h⁴) floor set by ω = 15π and λ_max
            let floor = match regime {
                Regime::OrnsteinUhlenbeck => 5e-8,
                Regime::DirichletHeat => 2e-6,
            };
            assert!(coarse < floor, "{regime:?}: {coarse}");
            let order = (coarse / fine).log2();
            assert!((3.5..4.5).contains(&order), "{regime:?}: order {order}");
            // off-diagonal first-order blocks stay exactly zero
            for flat in 0..layout.dim() {
                if let (n, ChaosIndex::First { l, .. }) = layout.decompose(flat) {
                    if n != l {
                        assert!(rk4.column(flat).iter().all(|&v| v == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn reconstruct_examples() {
        let layout = LatentLayout::new(3, 2, 2).unwrap();
        let basis = SpatialBasis::<f64>::new(Regime::DirichletHeat, 3).unwrap();
        let grid = SpatialGrid::observation(Regime::DirichletHeat, 10).unwrap();
        let tb = TimeBasis::new(1.0, 2).unwrap();
        let dynamics = Dynamics::new(layout, tb, vec![1.0, 4.0, 9.0], vec![1.0, 0.3]).unwrap();
        let times = uniform_times(10, 1.0);
        let states = dynamics
            .rk4_integrate(&dynamics.initial_state(&[1.0, 0.5, -0.2]).unwrap(), &times)
            .unwrap();
        let rec = Reconstructor::new(layout, &basis, &grid).unwrap();
        let mean = rec.reconstruct(states.view(), &[0.0; 4]).unwrap();
        let mut zero_order = states.clone();
        zero_order.slice_mut(ndarray::s![.., 3..]).fill(0.0);
        assert_eq!(mean, rec.reconstruct(zero_order.view(), &[0.7; 4]).unwrap());
        let zeros = Array2::zeros(states.raw_dim());
        assert!(rec.reconstruct(zeros.view(), &[1.0; 4]).unwrap().iter().all(|&v| v == 0.0));
        assert!(rec.reconstruct(states.view(), &[0.0; 3]).is_err());
    }

    #[test]
    fn reconstructed_variance_matches_parseval_sum() {
        let layout = LatentLayout::new(4, 8, 4).unwrap();
        let basis = SpatialBasis::<f64>::new(Regime::DirichletHeat, 4).unwrap();
        let grid = SpatialGrid::observation(Regime::DirichletHeat, 8).unwrap();
        let lambdas = basis.eigenvalues();
        let qs: Vec<f64> = (1..=4).map(|l| (l as f64).powf(-2.01)).collect();
        let tb = TimeBasis::new(1.0, 8).unwrap();
        let times = uniform_times(50, 1.0);
        let c0 = basis.initial_condition_coeffs();
        let dynamics = Dynamics::new(layout, tb, lambdas.clone(), qs.clone()).unwrap();
        let states = dynamics.rk4_integrate(&dynamics.initial_state(&c0).unwrap(), &times).unwrap();
        let rec = Reconstructor::new(layout, &basis, &grid).unwrap();
        let last = states.slice(ndarray::s![50..51, ..]);
        let m = 100_000;
        let (mut s, mut s2) = (vec![0.0; 4], vec![0.0; 4]);
        let idx = layout.chaos_set();
        for i in 0..m {
            let xi = sample_chaos_stream::<f64>(&idx, 5, i as u64).xi;
            let c = rec.modal_coefficients(last, &xi).unwrap();
            for n in 0..4 {
                s[n] += c[[0, n]];
                s2[n] += c[[0, n]] * c[[0, n]];
            }
        }
        for n in 0..4 {
            let mean = s[n] / m as f64;
            let var = s2[n] / m as f64 - mean * mean;
            let target: f64 = (1..=8)
                .map(|k| closed_form_propagator(lambdas[n], qs[n], k, 1.0, &tb).powi(2))
                .sum();
            let se = target * (2.0 / (m - 1) as f64).sqrt();
            assert!((var - target).abs() < 3.0 * se, "mode {}: {var} vs {target}", n + 1);
            // truncated variance sits below the OU variance
            let full = qs[n] * (1.0 - (-2.0 * lambdas[n]).exp()) / (2.0 * lambdas[n]);
            assert!(target <= full);
        }
    }

    #[test]
    fn truncated_variance_nondecreasing_in_k() {
        let lambdas = [1.0f64, 4.0, 9.0, 16.0];
        let qs = [1.0, 0.25, 0.11, 0.06];
        let mut prev = 0.0;
        let bound: f64 = lambdas
            .iter()
            .zip(qs)
            .map(|(l, q)| q * (1.0 - (-2.0 * l).exp()) / (2.0 * l))
            .sum();
        for k_max in 1..=32 {
            let tb = TimeBasis::new(1.0, k_max).unwrap();
            let total: f64 = (0..4)
                .map(|n| {
                    (1..=k_max)
                        .map(|k| closed_form_propagator(lambdas[n], qs[n], k, 1.0, &tb).powi(2))
                        .sum::<f64>()
                })
                .sum();
            assert!(total >= prev - 1e-15);
            assert!(total <= bound * (1.0 + 1e-12));
            prev = total;
        }
    }

    proptest! {
        #[test]
        fn reconstruct_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let layout = LatentLayout::new(3, 2, 2).unwrap();
            let basis = SpatialBasis::<f64>::new(Regime::OrnsteinUhlenbeck, 3).unwrap();
            let grid = SpatialGrid::observation(Regime::OrnsteinUhlenbeck, 7).unwrap();
            let rec = Reconstructor::new(layout, &basis, &grid).unwrap();
            let idx = layout.chaos_set();
            let xi = sample_chaos_stream::<f64>(&idx, seed, 0).xi;
            let s1 = Array2::from_shape_fn((4, layout.dim()), |(i, j)| ((i * 7 + j * 3 + seed as usize) % 11) as f64 - 5.0);
            let s2 = Array2::from_shape_fn((4, layout.dim()), |(i, j)| ((i * 5 + j + 2 * seed as usize) % 13) as f64 * 0.3);
            let lhs = rec.reconstruct(s1.view(), &xi).unwrap() * a + rec.reconstruct(s2.view(), &xi).unwrap() * b;
            let combo = &s1 * a + &s2 * b;
            let rhs = rec.reconstruct(combo.view(), &xi).unwrap();
            for (u, v) in lhs.iter().zip(rhs.iter()) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }
}
