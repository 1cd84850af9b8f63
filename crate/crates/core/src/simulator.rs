//! Ground-truth data: each Galerkin mode `c_n` is a scalar OU process
//! `dc_n = −λ_n c_n dt + √q_n dw_n` (forcing only for `n ≤ L`), integrated
//! either by the semi-implicit Euler–Maruyama scheme or by the exact Gaussian
//! transition, then synthesized on the observation grid.
//!
//! The draw for `(trajectory, mode, step)` is the `step`-th normal of the
//! stream `(master_seed, SIMULATION, trajectory, mode)`, so output does not
//! depend on how trajectories are scheduled.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{Regime, SpatialBasis, SpatialGrid};
use crate::stochastics::{self, stream, ChaosIndexSet, NoiseSpectrum, TimeBasis};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    SemiImplicitEM,
    ExactOU,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::SemiImplicitEM => "semi_implicit",
            Scheme::ExactOU => "exact_ou",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s.trim() {
            "semi_implicit" | "em" => Ok(Scheme::SemiImplicitEM),
            "exact_ou" | "exact" => Ok(Scheme::ExactOU),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig<T> {
    pub regime: Regime,
    pub n_modes: usize,
    pub k_time: usize,
    pub l_noise: usize,
    pub horizon: T,
    pub m1: usize,
    pub m2: usize,
    pub m3: usize,
    pub scheme: Scheme,
    pub master_seed: u64,
    pub noise_r: T,
    pub noise_eps: T,
}

impl<T: Scalar> SimConfig<T> {
    /// N = 8, K = 16, L = 8, T = 1, M1 = 1000, M2 = 200, regime grid size.
    pub fn paper(regime: Regime) -> Self {
        Self {
            regime,
            n_modes: 8,
            k_time: 16,
            l_noise: 8,
            horizon: T::one(),
            m1: 1000,
            m2: 200,
            m3: regime.default_grid_points(),
            scheme: Scheme::SemiImplicitEM,
            master_seed: 0,
            noise_r: T::lit(0.5),
            noise_eps: T::lit(0.01),
        }
    }

    /// N = 4, K = 8, L = 4, M1 = 256, M2 = 50, M3 = 64.
    pub fn desk(regime: Regime) -> Self {
        Self {
            n_modes: 4,
            k_time: 8,
            l_noise: 4,
            m1: 256,
            m2: 50,
            m3: 64,
            ..Self::paper(regime)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 || self.k_time == 0 || self.l_noise == 0 {
            return Err(Error::invalid("truncations N, K, L must be positive"));
        }
        if self.l_noise > self.n_modes {
            return Err(Error::invalid(format!(
                "L = {} exceeds N = {}: forcing component ℓ drives mode ℓ",
                self.l_noise, self.n_modes
            )));
        }
        if !(self.horizon > T::zero()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if self.m1 == 0 || self.m2 == 0 {
            return Err(Error::invalid("M1 and M2 must be positive"));
        }
        if self.m1 as u64 >= 1 << 40 {
            return Err(Error::invalid("M1 too large for the stream layout"));
        }
        SpatialGrid::<T>::observation(self.regime, self.m3)?;
        Ok(())
    }

    pub fn dt(&self) -> T {
        self.horizon / T::from_usize_lossy(self.m2)
    }

    pub fn times(&self) -> Vec<T> {
        let dt = self.dt();
        (0..=self.m2)
            .map(|j| if j == self.m2 { self.horizon } else { T::from_usize_lossy(j) * dt })
            .collect()
    }

    pub fn basis(&self) -> Result<SpatialBasis<T>> {
        SpatialBasis::new(self.regime, self.n_modes)
    }

    pub fn noise(&self) -> Result<NoiseSpectrum<T>> {
        NoiseSpectrum::new(self.l_noise, self.noise_r, self.noise_eps)
    }

    /// Forcing amplitude `q_n` per mode, zero for `n > L`.
    pub fn mode_forcing(&self) -> Result<Vec<T>> {
        let noise = self.noise()?;
        Ok((1..=self.n_modes)
            .map(|n| if n <= self.l_noise { noise.amplitude(n).unwrap() } else { T::zero() })
            .collect())
    }
}

/// Semi-implicit Euler–Maruyama: `(z + √(q Δt) g) / (1 + λ Δt)`.
pub fn step_semi_implicit<T: Scalar>(z: T, lambda: T, q: T, dt: T, g: T) -> Result<T> {
    if !(dt > T::zero()) {
        return Err(Error::invalid("time step must be positive"));
    }
    Ok((z + (q * dt).sqrt() * g) / (T::one() + lambda * dt))
}

/// Exact OU transition: `e^{−λΔt} z + √(q (1 − e^{−2λΔt}) / (2λ)) g`.
pub fn step_exact_ou<T: Scalar>(z: T, lambda: T, q: T, dt: T, g: T) -> Result<T> {
    if !(dt > T::zero()) {
        return Err(Error::invalid("time step must be positive"));
    }
    let decay = (-lambda * dt).exp();
    let var = q * (-(-T::lit(2.0) * lambda * dt).exp_m1()) / (T::lit(2.0) * lambda);
    Ok(decay * z + var.sqrt() * g)
}

/// Precomputed per-configuration quantities shared by all trajectories.
pub struct ModalSimulator<T> {
    cfg: SimConfig<T>,
    lambdas: Vec<T>,
    forcing: Vec<T>,
    c0: Vec<T>,
    dt: T,
}

impl<T: Scalar> ModalSimulator<T> {
    pub fn new(cfg: &SimConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let basis = cfg.basis()?;
        Ok(Self {
            lambdas: basis.eigenvalues(),
            forcing: cfg.mode_forcing()?,
            c0: basis.initial_condition_coeffs(),
            dt: cfg.dt(),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SimConfig<T> {
        &self.cfg
    }

    pub fn initial_coeffs(&self) -> &[T] {
        &self.c0
    }

    /// Modal coefficients of trajectory `m1`, shape `(M2 + 1) × N`.
    pub fn trajectory(&self, m1: usize) -> Array2<T> {
        self.run(m1, None).0
    }

    /// As [`trajectory`](Self::trajectory), also returning the chaos
    /// coordinates `ξ_{k,ℓ} = ∫ m_k dw^ℓ` of the realized Brownian increments
    /// (semi-implicit scheme only; the exact sampler has no increments).
    pub fn trajectory_with_chaos(&self, m1: usize, chaos: &ChaosIndexSet) -> Result<(Array2<T>, Vec<T>)> {
        if self.cfg.scheme != Scheme::SemiImplicitEM {
            return Err(Error::invalid("chaos coordinates need the semi-implicit scheme"));
        }
        if chaos.l_max > self.cfg.l_noise {
            return Err(Error::invalid("chaos L exceeds simulated noise components"));
        }
        let (c, xi) = self.run(m1, Some(chaos));
        Ok((c, xi.unwrap()))
    }

    fn run(&self, m1: usize, chaos: Option<&ChaosIndexSet>) -> (Array2<T>, Option<Vec<T>>) {
        let cfg = &self.cfg;
        let n_modes = cfg.n_modes;
        let mut out = Array2::zeros((cfg.m2 + 1, n_modes));
        let mut xi = chaos.map(|c| vec![T::zero(); c.len()]);
        // per-step averages of m_k, for the chaos coordinates
        let tb = chaos.map(|c| TimeBasis::new(cfg.horizon, c.k_max).unwrap());
        let sqrt_dt = self.dt.sqrt();
        for n in 0..n_modes {
            let lambda = self.lambdas[n];
            let q = self.forcing[n];
            let mut z = self.c0[n];
            out[[0, n]] = z;
            if q == T::zero() {
                let decay_em = T::one() / (T::one() + lambda * self.dt);
                let decay_exact = (-lambda * self.dt).exp();
                for j in 1..=cfg.m2 {
                    z = match cfg.scheme {
                        Scheme::SemiImplicitEM => z * decay_em,
                        Scheme::ExactOU => z * decay_exact,
                    };
                    out[[j, n]] = z;
                }
                continue;
            }
            let mut rng = stochastics::stream_rng(
                cfg.master_seed,
                stream::id(stream::SIMULATION, m1 as u64, n as u64),
            );
            for j in 1..=cfg.m2 {
                let g: T = stochastics::standard_normal(&mut rng);
                z = match cfg.scheme {
                    Scheme::SemiImplicitEM => step_semi_implicit(z, lambda, q, self.dt, g),
                    Scheme::ExactOU => step_exact_ou(z, lambda, q, self.dt, g),
                }
                .expect("dt validated positive");
                out[[j, n]] = z;
                if let (Some(xi), Some(idx), Some(tb)) = (xi.as_mut(), chaos, tb.as_ref()) {
                    let l = n + 1;
                    if l <= idx.l_max {
                        let t0 = T::from_usize_lossy(j - 1) * self.dt;
                        let t1 = t0 + self.dt;
                        let dw = sqrt_dt * g;
                        for k in 1..=idx.k_max {
                            let avg = tb.integral(k, t0, t1) / self.dt;
                            xi[idx.position(k, l).unwrap()] += avg * dw;
                        }
                    }
                }
            }
        }
        (out, xi)
    }
}

/// Provenance of a generated dataset (not stored in the binary container).
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationMeta {
    pub scheme: Scheme,
    pub master_seed: u64,
}

/// `M1` trajectories on the `(M2 + 1) × M3` observation mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub regime: Regime,
    pub n_modes: usize,
    pub k_time: usize,
    pub l_noise: usize,
    pub times: Vec<T>,
    pub space: Vec<T>,
    /// `[M1][M2 + 1][M3]`, trajectory-major.
    pub fields: Array3<T>,
    pub meta: Option<GenerationMeta>,
}

impl<T: Scalar> Dataset<T> {
    pub fn n_trajectories(&self) -> usize {
        self.fields.len_of(Axis(0))
    }

    pub fn n_times(&self) -> usize {
        self.fields.len_of(Axis(1))
    }

    pub fn n_space(&self) -> usize {
        self.fields.len_of(Axis(2))
    }

    pub fn horizon(&self) -> T {
        *self.times.last().expect("dataset has at least one time")
    }

    pub fn grid(&self) -> Result<SpatialGrid<T>> {
        SpatialGrid::from_points(self.regime, self.space.clone())
    }

    pub fn trajectory(&self, m1: usize) -> ndarray::ArrayView2<'_, T> {
        self.fields.index_axis(Axis(0), m1)
    }

    /// Subset of trajectories, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            fields: self.fields.select(Axis(0), indices),
            times: self.times.clone(),
            space: self.space.clone(),
            meta: self.meta.clone(),
            ..*self
        }
    }
}

/// Simulates all `M1` trajectories and synthesizes them on the observation grid.
pub fn generate_dataset<T: Scalar>(cfg: &SimConfig<T>) -> Result<Dataset<T>> {
    let sim = ModalSimulator::new(cfg)?;
    let basis = cfg.basis()?;
    let grid = SpatialGrid::observation(cfg.regime, cfg.m3)?;
    let design = basis.design(&grid.points);
    let per_trajectory: Vec<Array2<T>> = (0..cfg.m1)
        .into_par_iter()
        .map(|m1| sim.trajectory(m1).dot(&design))
        .collect();
    let mut fields = Array3::zeros((cfg.m1, cfg.m2 + 1, grid.len()));
    for (m1, f) in per_trajectory.into_iter().enumerate() {
        fields.index_axis_mut(Axis(0), m1).assign(&f);
    }
    Ok(Dataset {
        regime: cfg.regime,
        n_modes: cfg.n_modes,
        k_time: cfg.k_time,
        l_noise: cfg.l_noise,
        times: cfg.times(),
        space: grid.points,
        fields,
        meta: Some(GenerationMeta {
            scheme: cfg.scheme,
            master_seed: cfg.master_seed,
        }),
    })
}

/// Closed-form `Var(c_n(t)) = q_n (1 − e^{−2λ_n t}) / (2λ_n)`.
pub fn ou_variance<T: Scalar>(lambda: T, q: T, t: T) -> T {
    q * (-(-T::lit(2.0) * lambda * t).exp_m1()) / (T::lit(2.0) * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn semi_implicit_examples() {
        assert_abs_diff_eq!(step_semi_implicit(1.0, 1.0, 0.0, 0.5, 3.0).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(step_semi_implicit(0.0, 1.0, 1.0, 0.01, 1.0).unwrap(), 0.1 / 1.01, epsilon = 1e-15);
        let mut z = 1.0f64;
        for _ in 0..200 {
            z = step_semi_implicit(z, 1.0, 0.0, 1.0 / 200.0, 0.0).unwrap();
        }
        assert_abs_diff_eq!(z, (1.0f64 + 1.0 / 200.0).powi(-200), epsilon = 1e-14);
        assert!((z - (-1.0f64).exp()).abs() < 1e-2);
        assert!(step_semi_implicit(1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn exact_ou_examples() {
        assert_abs_diff_eq!(step_exact_ou(1.0, 1.0, 0.0, 1.0, 2.0).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        // unit draw from zero: the standard deviation of the transition
        let sd = step_exact_ou(0.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(sd * sd, 0.432_332_358_381_693_65, epsilon = 1e-14);
        let tiny = step_exact_ou(0.7f64, 3.0, 1.0, 1e-14, 0.5).unwrap();
        assert!((tiny - 0.7).abs() < 1e-6);
        assert!(step_exact_ou(1.0, 1.0, 0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn exact_ou_single_step_variance_monte_carlo() {
        let m = 100_000;
        let mut rng = stochastics::stream_rng(11, 0);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..m {
            let g: f64 = stochastics::standard_normal(&mut rng);
            let z = step_exact_ou(0.0, 1.0, 1.0, 1.0, g).unwrap();
            s += z;
            s2 += z * z;
        }
        let mean = s / m as f64;
        let var = s2 / m as f64 - mean * mean;
        let target = 0.432_332_358_381_693_65;
        let se = target * (2.0 / m as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "{var}");
    }

    #[test]
    fn rejects_l_greater_than_n() {
        let mut cfg = SimConfig::<f64>::desk(Regime::DirichletHeat);
        cfg.l_noise = cfg.n_modes + 1;
        assert!(generate_dataset(&cfg).is_err());
    }

    #[test]
    fn noiseless_dataset_matches_decay() {
        let mut cfg = SimConfig::<f64>::paper(Regime::DirichletHeat);
        cfg.m1 = 3;
        cfg.noise_r = 0.5;
        let sim = ModalSimulator::new(&cfg).unwrap();
        let basis = cfg.basis().unwrap();
        let c0 = basis.initial_condition_coeffs();
        let grid = SpatialGrid::observation(cfg.regime, cfg.m3).unwrap();
        // zero forcing: bypass the spectrum by zeroing the amplitudes
        let sim = ModalSimulator {
            forcing: vec![0.0; cfg.n_modes],
            ..sim
        };
        let design = basis.design(&grid.points);
        let times = cfg.times();
        let fields: Vec<Array2<f64>> = (0..3).map(|m| sim.trajectory(m).dot(&design)).collect();
        assert_eq!(fields[0], fields[1]);
        assert_eq!(fields[1], fields[2]);
        for (j, &t) in times.iter().enumerate() {
            let coeffs: Vec<f64> = (0..cfg.n_modes)
                .map(|n| c0[n] * (-basis.eigenvalue(n + 1).unwrap() * t).exp())
                .collect();
            let exact = basis.synthesize(&coeffs, &grid.points).unwrap();
            let sup_err = exact
                .iter()
                .zip(fields[0].row(j))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let sup = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(sup_err <= 1e-2 * sup.max(1e-300) || sup < 1e-6, "t={t}: {sup_err} vs {sup}");
        }
    }

    #[test]
    fn dataset_shape_and_initial_slice() {
        let mut cfg = SimConfig::<f64>::desk(Regime::OrnsteinUhlenbeck);
        cfg.m1 = 5;
        cfg.master_seed = 3;
        let ds = generate_dataset(&cfg).unwrap();
        assert_eq!(ds.fields.dim(), (5, 51, 64));
        assert_eq!(ds.times[0], 0.0);
        assert_eq!(ds.times[50], 1.0);
        for m in 1..5 {
            assert_eq!(ds.trajectory(m).row(0), ds.trajectory(0).row(0));
        }
        assert_ne!(ds.trajectory(1).row(50), ds.trajectory(0).row(50));
        let again = generate_dataset(&cfg).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn unforced_modes_have_zero_variance() {
        let mut cfg = SimConfig::<f64>::paper(Regime::DirichletHeat);
        cfg.l_noise = 3;
        cfg.scheme = Scheme::ExactOU;
        let sim = ModalSimulator::new(&cfg).unwrap();
        let first = sim.trajectory(0);
        for m in 1..200 {
            let c = sim.trajectory(m);
            for n in 3..8 {
                assert_eq!(c[[200, n]], first[[200, n]]);
            }
        }
    }

    #[test]
    fn modal_variance_law_exact_ou() {
        let mut cfg = SimConfig::<f64>::desk(Regime::DirichletHeat);
        cfg.scheme = Scheme::ExactOU;
        cfg.m2 = 20;
        let sim = ModalSimulator::new(&cfg).unwrap();
        let m = 20_000;
        let n_modes = cfg.n_modes;
        let (mut s, mut s2) = (vec![0.0; n_modes], vec![0.0; n_modes]);
        for i in 0..m {
            let c = sim.trajectory(i);
            for n in 0..n_modes {
                let v = c[[10, n]];
                s[n] += v;
                s2[n] += v * v;
            }
        }
        let q = cfg.mode_forcing().unwrap();
        for n in 0..n_modes {
            let mean = s[n] / m as f64;
            let var = s2[n] / m as f64 - mean * mean;
            let target = ou_variance(((n + 1) * (n + 1)) as f64, q[n], 0.5);
            let se = target * (2.0 / (m - 1) as f64).sqrt();
            assert!((var - target).abs() < 3.0 * se, "mode {}: {var} vs {target}", n + 1);
        }
    }

    #[test]
    fn semi_implicit_converges_at_first_order() {
        // variance at T of mode λ = 4 under the semi-implicit scheme is
        // deterministic given Δt: Σ_j q Δt / (1 + λΔt)^{2j}
        let (lambda, q, horizon) = (4.0f64, 1.0, 1.0);
        let exact = ou_variance(lambda, q, horizon);
        let err = |m2: usize| {
            let dt = horizon / m2 as f64;
            let r = 1.0 / (1.0 + lambda * dt);
            let var: f64 = (1..=m2).map(|j| q * dt * r.powi(2 * j as i32)).sum();
            (var - exact).abs()
        };
        let errs: Vec<f64> = [50, 100, 200, 400].iter().map(|&m| err(m)).collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((0.7..=1.3).contains(&order), "observed order {order}");
        }
    }

    #[test]
    fn chaos_coordinates_are_standard_normal() {
        let cfg = SimConfig::<f64> {
            m2: 100,
            ..SimConfig::desk(Regime::DirichletHeat)
        };
        let sim = ModalSimulator::new(&cfg).unwrap();
        let idx = ChaosIndexSet::new(3, 2).unwrap();
        let m = 20_000;
        let mut s2 = vec![0.0; idx.len()];
        for i in 0..m {
            let (_, xi) = sim.trajectory_with_chaos(i, &idx).unwrap();
            for (a, x) in s2.iter_mut().zip(&xi) {
                *a += x * x;
            }
        }
        for v in s2 {
            let var = v / m as f64;
            assert!((var - 1.0).abs() < 4.0 * (2.0 / m as f64).sqrt(), "{var}");
        }
        let exact_cfg = SimConfig {
            scheme: Scheme::ExactOU,
            ..cfg
        };
        assert!(ModalSimulator::new(&exact_cfg)
            .unwrap()
            .trajectory_with_chaos(0, &idx)
            .is_err());
    }
}
