//! Orthonormal spatial eigenbases for the two supported regimes, their
//! spectra, observation grids, projection quadrature and synthesis.
//!
//! Regime A is the perturbed Ornstein–Uhlenbeck generator on
//! `L²(ℝ, γ)` with the standard Gaussian weight; its eigenfunctions are the
//! normalized probabilists' Hermite polynomials `He_n / √(n!)` for `n ≥ 1`
//! with eigenvalues `n + 1` (the constant mode is not part of the basis).
//! Regime B is the Dirichlet Laplacian on `(0, π)` with `√(2/π) sin(n x)`
//! and eigenvalues `n²`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of Gauss–Hermite nodes used for Regime A projections.
pub const HERMITE_PROJECTION_NODES: usize = 96;
/// Number of trapezoid intervals on `[0, π]` used for Regime B projections.
pub const SINE_PROJECTION_INTERVALS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Ornstein–Uhlenbeck operator on the Gaussian-weighted real line.
    OrnsteinUhlenbeck,
    /// Stochastic heat equation on `(0, π)` with Dirichlet boundary.
    DirichletHeat,
}

impl Regime {
    /// Code used in the binary dataset header.
    pub fn code(self) -> u32 {
        match self {
            Regime::OrnsteinUhlenbeck => 0,
            Regime::DirichletHeat => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Regime::OrnsteinUhlenbeck),
            1 => Ok(Regime::DirichletHeat),
            other => Err(Error::format("regime", format!("unknown regime code {other}"))),
        }
    }

    /// Short tag, `A` or `B`.
    pub fn tag(self) -> &'static str {
        match self {
            Regime::OrnsteinUhlenbeck => "A",
            Regime::DirichletHeat => "B",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.trim() {
            "A" | "a" | "ou" => Ok(Regime::OrnsteinUhlenbeck),
            "B" | "b" | "heat" => Ok(Regime::DirichletHeat),
            other => Err(Error::invalid(format!("unknown regime `{other}`"))),
        }
    }

    /// Default number of observation grid points.
    pub fn default_grid_points(self) -> usize {
        match self {
            Regime::OrnsteinUhlenbeck => 200,
            Regime::DirichletHeat => 100,
        }
    }

    /// Deterministic initial condition `u0`.
    pub fn initial_condition<T: Scalar>(self, x: T) -> T {
        match self {
            Regime::OrnsteinUhlenbeck => {
                let sigma = T::lit(0.8);
                T::lit(10.0) * (-(x * x) / (T::lit(2.0) * sigma * sigma)).exp()
            }
            Regime::DirichletHeat => {
                let sigma = T::lit(0.5);
                let pi = T::PI();
                let c = x - T::lit(0.5) * pi;
                x * (pi - x) * (-(c * c) / (sigma * sigma)).exp()
            }
        }
    }
}

/// Standard Gaussian density.
pub fn gaussian_weight<T: Scalar>(x: T) -> T {
    (-(x * x) / T::lit(2.0)).exp() / (T::TAU()).sqrt()
}

/// Nodes and weights of a quadrature rule for the regime inner product:
/// `⟨f, g⟩_H ≈ Σ_j w_j f(x_j) g(x_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<T> {
    pub nodes: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Scalar> QuadratureRule<T> {
    pub fn new(nodes: Vec<T>, weights: Vec<T>) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::LengthMismatch {
                what: "quadrature weights",
                expected: nodes.len(),
                actual: weights.len(),
            });
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ_j w_j f(x_j)`.
    pub fn integrate(&self, f: impl Fn(T) -> T) -> T {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Gauss–Hermite rule for the probabilists' weight: `Σ w_j f(x_j) ≈
    /// ∫ f(x) γ(x) dx`, exact for polynomials of degree `≤ 2n − 1`.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        let (x, w) = gauss_hermite_physicists(n)?;
        let sqrt2 = std::f64::consts::SQRT_2;
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        // ascending order
        let mut pairs: Vec<(f64, f64)> = x
            .into_iter()
            .zip(w)
            .map(|(x, w)| (x * sqrt2, w * inv_sqrt_pi))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self {
            nodes: pairs.iter().map(|p| T::lit(p.0)).collect(),
            weights: pairs.iter().map(|p| T::lit(p.1)).collect(),
        })
    }

    /// Composite trapezoid on `[0, π]` with `intervals` panels; the endpoint
    /// weights are zero because Dirichlet integrands vanish there.
    pub fn dirichlet_trapezoid(intervals: usize) -> Result<Self> {
        if intervals < 2 {
            return Err(Error::invalid("trapezoid rule needs at least 2 intervals"));
        }
        let h = T::PI() / T::from_usize_lossy(intervals);
        let nodes = (0..=intervals)
            .map(|j| T::from_usize_lossy(j) * h)
            .collect();
        let weights = (0..=intervals)
            .map(|j| if j == 0 || j == intervals { T::zero() } else { h })
            .collect();
        Ok(Self { nodes, weights })
    }
}

/// Golub–Welsch is overkill here; Newton on the orthonormal recurrence with
/// the usual asymptotic starting guesses converges in a handful of steps.
fn gauss_hermite_physicists(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("Gauss-Hermite rule needs at least one node"));
    }
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Numerical(format!(
                "Gauss-Hermite root {i} of {n} did not converge"
            )));
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    Ok((x, w))
}

/// `ln(n!)` by direct summation; exact enough for the small `n` used here.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Probabilists' Hermite polynomial `He_n(x)` by the three-term recurrence.
pub fn hermite_he<T: Scalar>(n: usize, x: T) -> T {
    let mut prev = T::one();
    if n == 0 {
        return prev;
    }
    let mut cur = x;
    for k in 1..n {
        let next = x * cur - T::from_usize_lossy(k) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// The first `N` eigenfunctions of `−A` for a regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialBasis<T> {
    regime: Regime,
    n_modes: usize,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar> SpatialBasis<T> {
    pub fn new(regime: Regime, n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::invalid("basis needs at least one mode"));
        }
        Ok(Self {
            regime,
            n_modes,
            _scalar: std::marker::PhantomData,
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    fn check_mode(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.n_modes {
            return Err(Error::IndexOutOfRange {
                what: "mode",
                index: n,
                max: self.n_modes,
            });
        }
        Ok(())
    }

    /// `h_n(x)`, `1 ≤ n ≤ N`.
    pub fn eval(&self, n: usize, x: T) -> Result<T> {
        self.check_mode(n)?;
        if self.regime == Regime::DirichletHeat && (x < T::zero() || x > T::PI()) {
            return Err(Error::Domain(format!(
                "sine basis evaluated at x = {x} outside [0, π]"
            )));
        }
        Ok(self.eval_unchecked(n, x))
    }

    pub(crate) fn eval_unchecked(&self, n: usize, x: T) -> T {
        match self.regime {
            Regime::OrnsteinUhlenbeck => {
                let norm = T::lit((-0.5 * ln_factorial(n)).exp());
                hermite_he(n, x) * norm
            }
            Regime::DirichletHeat => {
                (T::lit(2.0) / T::PI()).sqrt() * (T::from_usize_lossy(n) * x).sin()
            }
        }
    }

    /// `λ_n`: `n + 1` for Regime A, `n²` for Regime B.
    pub fn eigenvalue(&self, n: usize) -> Result<T> {
        self.check_mode(n)?;
        Ok(self.eigenvalue_unchecked(n))
    }

    fn eigenvalue_unchecked(&self, n: usize) -> T {
        let nf = T::from_usize_lossy(n);
        match self.regime {
            Regime::OrnsteinUhlenbeck => nf + T::one(),
            Regime::DirichletHeat => nf * nf,
        }
    }

    /// All `N` eigenvalues in mode order.
    pub fn eigenvalues(&self) -> Vec<T> {
        (1..=self.n_modes)
            .map(|n| self.eigenvalue_unchecked(n))
            .collect()
    }

    /// The exact projection rule of the regime.
    pub fn projection_rule(&self) -> QuadratureRule<T> {
        match self.regime {
            Regime::OrnsteinUhlenbeck => {
                QuadratureRule::gauss_hermite(HERMITE_PROJECTION_NODES.max(2 * self.n_modes + 2))
            }
            Regime::DirichletHeat => {
                QuadratureRule::dirichlet_trapezoid(SINE_PROJECTION_INTERVALS.max(4 * self.n_modes))
            }
        }
        .expect("default projection rule parameters are valid")
    }

    /// Design matrix `D[n−1, j] = h_n(x_j)` (shape `N × len(points)`).
    pub fn design(&self, points: &[T]) -> Array2<T> {
        Array2::from_shape_fn((self.n_modes, points.len()), |(i, j)| {
            self.eval_unchecked(i + 1, points[j])
        })
    }

    /// Coefficients `c_n = ⟨f, h_n⟩_H` of a function sampled on `rule`.
    pub fn project(&self, rule: &QuadratureRule<T>, values: &[T]) -> Result<Vec<T>> {
        if values.len() != rule.len() {
            return Err(Error::LengthMismatch {
                what: "projected samples",
                expected: rule.len(),
                actual: values.len(),
            });
        }
        Ok((1..=self.n_modes)
            .map(|n| {
                rule.nodes
                    .iter()
                    .zip(&rule.weights)
                    .zip(values)
                    .map(|((&x, &w), &f)| w * f * self.eval_unchecked(n, x))
                    .sum()
            })
            .collect())
    }

    /// Pointwise `Σ_n c_n h_n(x)` at each point.
    pub fn synthesize(&self, coeffs: &[T], points: &[T]) -> Result<Vec<T>> {
        if coeffs.len() != self.n_modes {
            return Err(Error::LengthMismatch {
                what: "coefficients",
                expected: self.n_modes,
                actual: coeffs.len(),
            });
        }
        Ok(points
            .iter()
            .map(|&x| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| c * self.eval_unchecked(i + 1, x))
                    .sum()
            })
            .collect())
    }

    /// `⟨u0, h_n⟩_H` for `n = 1..N`. The constant Hermite component of
    /// `u0` in Regime A lies outside the basis and is dropped.
    pub fn initial_condition_coeffs(&self) -> Vec<T> {
        let rule = self.projection_rule();
        let values: Vec<T> = rule
            .nodes
            .iter()
            .map(|&x| self.regime.initial_condition(x))
            .collect();
        self.project(&rule, &values)
            .expect("rule and samples have equal length")
    }
}

/// Observation grid with quadrature weights for the regime inner product.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialGrid<T> {
    pub points: Vec<T>,
    pub weights: Vec<T>,
    pub domain_bounds: (T, T),
}

impl<T: Scalar> SpatialGrid<T> {
    /// Regime A: `m3` uniform points on `[−3, 3]`, trapezoid weights times
    /// `γ(x)`. Regime B: `m3` uniform interior points of `(0, π)`, weights
    /// `π / (m3 + 1)` (the zero Dirichlet endpoints are implicit).
    pub fn observation(regime: Regime, m3: usize) -> Result<Self> {
        match regime {
            Regime::OrnsteinUhlenbeck => {
                if m3 < 2 {
                    return Err(Error::invalid("Regime A grid needs at least 2 points"));
                }
                let (a, b) = (T::lit(-3.0), T::lit(3.0));
                let h = (b - a) / T::from_usize_lossy(m3 - 1);
                let points: Vec<T> = (0..m3).map(|j| a + T::from_usize_lossy(j) * h).collect();
                let weights = points
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| {
                        let trap = if j == 0 || j == m3 - 1 { h / T::lit(2.0) } else { h };
                        trap * gaussian_weight(x)
                    })
                    .collect();
                Ok(Self {
                    points,
                    weights,
                    domain_bounds: (a, b),
                })
            }
            Regime::DirichletHeat => {
                if m3 == 0 {
                    return Err(Error::invalid("Regime B grid needs at least 1 point"));
                }
                let h = T::PI() / T::from_usize_lossy(m3 + 1);
                let points = (1..=m3).map(|j| T::from_usize_lossy(j) * h).collect();
                Ok(Self {
                    points,
                    weights: vec![h; m3],
                    domain_bounds: (T::zero(), T::PI()),
                })
            }
        }
    }

    /// Grid over externally supplied points (e.g. read from a dataset file),
    /// with the weights the regime would assign.
    pub fn from_points(regime: Regime, points: Vec<T>) -> Result<Self> {
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid points must be strictly increasing"));
        }
        let m = points.len();
        if m < 2 {
            return Err(Error::invalid("grid needs at least 2 points"));
        }
        let weights: Vec<T> = (0..m)
            .map(|j| {
                let left = if j == 0 { points[0] - domain_lo(regime, points[0]) } else { points[j] - points[j - 1] };
                let right = if j == m - 1 {
                    domain_hi(regime, points[m - 1]) - points[m - 1]
                } else {
                    points[j + 1] - points[j]
                };
                let w = (left + right) / T::lit(2.0);
                match regime {
                    Regime::OrnsteinUhlenbeck => w * gaussian_weight(points[j]),
                    Regime::DirichletHeat => w,
                }
            })
            .collect();
        let bounds = match regime {
            Regime::OrnsteinUhlenbeck => (points[0], points[m - 1]),
            Regime::DirichletHeat => (T::zero(), T::PI()),
        };
        Ok(Self {
            points,
            weights,
            domain_bounds: bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn domain_lo<T: Scalar>(regime: Regime, first: T) -> T {
    match regime {
        Regime::OrnsteinUhlenbeck => first,
        Regime::DirichletHeat => T::zero(),
    }
}

fn domain_hi<T: Scalar>(regime: Regime, last: T) -> T {
    match regime {
        Regime::OrnsteinUhlenbeck => last,
        Regime::DirichletHeat => T::PI(),
    }
}
