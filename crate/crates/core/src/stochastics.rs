//! Noise covariance spectrum, the cosine time basis of `L²([0, T])`, the
//! first-order chaos index set `J_{K,L}` and chaos-coordinate sampling.
//!
//! Random streams are derived from a master seed and a stream id
//! ([`stream_rng`]); every consumer that needs reproducible draws indexes its
//! stream explicitly, so parallel sampling is order-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stream-id namespaces. The upper byte separates consumers.
pub mod stream {
    pub const SIMULATION: u64 = 1;
    pub const CHAOS: u64 = 2;
    pub const INIT: u64 = 3;
    pub const REPARAM: u64 = 4;
    pub const VALIDATION: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const GENERATE: u64 = 7;
    pub const SHUFFLE: u64 = 8;

    /// Packs `(tag, a, b)` into one stream id; `a < 2^40`, `b < 2^16`.
    pub fn id(tag: u64, a: u64, b: u64) -> u64 {
        debug_assert!(a < (1 << 40) && b < (1 << 16));
        (tag << 56) | (a << 16) | b
    }
}

/// ChaCha8 generator keyed by `master` on stream `stream_id`.
pub fn stream_rng(master: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id);
    rng
}

/// One standard normal draw converted to `T`.
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let g: f64 = rng.sample(StandardNormal);
    T::lit(g)
}

/// Diagonal covariance spectrum `q_ℓ = ℓ^{−(2r + 1 + ε)}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpectrum<T> {
    pub n_components: usize,
    pub r: T,
    pub eps: T,
}

impl<T: Scalar> NoiseSpectrum<T> {
    pub fn new(n_components: usize, r: T, eps: T) -> Result<Self> {
        if n_components == 0 {
            return Err(Error::invalid("noise spectrum needs at least one component"));
        }
        if T::lit(2.0) * r + T::one() + eps <= T::one() {
            return Err(Error::invalid("noise spectrum exponent must exceed 1 for trace class"));
        }
        Ok(Self {
            n_components,
            r,
            eps,
        })
    }

    /// `r = 0.5`, `ε = 0.01`.
    pub fn standard(n_components: usize) -> Result<Self> {
        Self::new(n_components, T::lit(0.5), T::lit(0.01))
    }

    pub fn exponent(&self) -> T {
        T::lit(2.0) * self.r + T::one() + self.eps
    }

    pub fn amplitude(&self, l: usize) -> Result<T> {
        if l == 0 || l > self.n_components {
            return Err(Error::IndexOutOfRange {
                what: "noise component",
                index: l,
                max: self.n_components,
            });
        }
        Ok(T::from_usize_lossy(l).powf(-self.exponent()))
    }

    pub fn amplitudes(&self) -> Vec<T> {
        (1..=self.n_components)
            .map(|l| self.amplitude(l).expect("index in range"))
            .collect()
    }
}

/// Orthonormal cosine basis `m_1 = 1/√T`, `m_k = √(2/T) cos((k−1)πt/T)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeBasis<T> {
    pub horizon: T,
    pub k_max: usize,
}

impl<T: Scalar> TimeBasis<T> {
    pub fn new(horizon: T, k_max: usize) -> Result<Self> {
        if !(horizon > T::zero()) {
            return Err(Error::invalid(format!("time horizon must be positive, got {horizon}")));
        }
        if k_max == 0 {
            return Err(Error::invalid("time basis needs K >= 1"));
        }
        Ok(Self { horizon, k_max })
    }

    fn frequency(&self, k: usize) -> T {
        T::from_usize_lossy(k - 1) * T::PI() / self.horizon
    }

    pub fn eval(&self, k: usize, t: T) -> Result<T> {
        if k == 0 || k > self.k_max {
            return Err(Error::IndexOutOfRange {
                what: "time basis",
                index: k,
                max: self.k_max,
            });
        }
        if t < T::zero() || t > self.horizon {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        Ok(self.eval_unchecked(k, t))
    }

    pub(crate) fn eval_unchecked(&self, k: usize, t: T) -> T {
        if k == 1 {
            T::one() / self.horizon.sqrt()
        } else {
            (T::lit(2.0) / self.horizon).sqrt() * (self.frequency(k) * t).cos()
        }
    }

    /// `∫_a^b m_k(s) ds` in closed form.
    pub fn integral(&self, k: usize, a: T, b: T) -> T {
        if k == 1 {
            (b - a) / self.horizon.sqrt()
        } else {
            let w = self.frequency(k);
            (T::lit(2.0) / self.horizon).sqrt() * ((w * b).sin() - (w * a).sin()) / w
        }
    }

    /// `g_k(t) = ∫_0^t e^{−λ(t−s)} m_k(s) ds` in closed form.
    pub fn damped_integral(&self, k: usize, lambda: T, t: T) -> T {
        let decay = (-lambda * t).exp();
        if k == 1 {
            (T::one() - decay) / (lambda * self.horizon.sqrt())
        } else {
            let w = self.frequency(k);
            let (s, c) = (w * t).sin_cos();
            (T::lit(2.0) / self.horizon).sqrt() * (lambda * c + w * s - lambda * decay)
                / (lambda * lambda + w * w)
        }
    }
}

/// A chaos index: the constant (zero-order) element or a first-order `e_{k,ℓ}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChaosIndex {
    Zero,
    First { k: usize, l: usize },
}

/// First-order multi-indices `e_{k,ℓ}`, `1 ≤ k ≤ K`, `1 ≤ ℓ ≤ L`, in
/// k-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChaosIndexSet {
    pub k_max: usize,
    pub l_max: usize,
}

impl ChaosIndexSet {
    pub fn new(k_max: usize, l_max: usize) -> Result<Self> {
        if k_max == 0 || l_max == 0 {
            return Err(Error::invalid("chaos index set needs K >= 1 and L >= 1"));
        }
        Ok(Self { k_max, l_max })
    }

    pub fn len(&self) -> usize {
        self.k_max * self.l_max
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Zero-based position of `e_{k,ℓ}`: `(k−1)L + (ℓ−1)`.
    pub fn position(&self, k: usize, l: usize) -> Result<usize> {
        if k == 0 || k > self.k_max {
            return Err(Error::IndexOutOfRange {
                what: "chaos time index",
                index: k,
                max: self.k_max,
            });
        }
        if l == 0 || l > self.l_max {
            return Err(Error::IndexOutOfRange {
                what: "chaos noise index",
                index: l,
                max: self.l_max,
            });
        }
        Ok((k - 1) * self.l_max + (l - 1))
    }

    /// Inverse of [`position`](Self::position).
    pub fn index_at(&self, pos: usize) -> (usize, usize) {
        (pos / self.l_max + 1, pos % self.l_max + 1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).map(|p| self.index_at(p))
    }
}

/// Gaussian chaos coordinates `ξ`, ordered as the [`ChaosIndexSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChaosSample<T> {
    pub xi: Vec<T>,
}

/// `K·L` i.i.d. standard normal coordinates drawn from `stream_rng(seed, stream)`.
pub fn sample_chaos_stream<T: Scalar>(idx: &ChaosIndexSet, seed: u64, stream_id: u64) -> ChaosSample<T> {
    let mut rng = stream_rng(seed, stream_id);
    ChaosSample {
        xi: (0..idx.len()).map(|_| standard_normal(&mut rng)).collect(),
    }
}

/// [`sample_chaos_stream`] on the default chaos stream.
pub fn sample_chaos<T: Scalar>(idx: &ChaosIndexSet, seed: u64) -> ChaosSample<T> {
    sample_chaos_stream(idx, seed, stream::id(stream::CHAOS, 0, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Composite Simpson with `n` (even) panels; test-only oracle.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn time_basis_examples() {
        let tb = TimeBasis::new(1.0f64, 16).unwrap();
        assert_eq!(tb.eval(1, 0.5).unwrap(), 1.0);
        assert_abs_diff_eq!(tb.eval(2, 0.0).unwrap(), 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(tb.eval(3, 1.0).unwrap(), 2f64.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(tb.eval(2, 0.5).unwrap(), 0.0, epsilon = 1e-15);
        assert!(tb.eval(17, 0.5).is_err());
        assert!(tb.eval(1, 1.5).is_err());
        assert!(TimeBasis::new(0.0f64, 4).is_err());
        assert!(TimeBasis::new(1.0f64, 0).is_err());
    }

    #[test]
    fn time_basis_gram_by_simpson() {
        for horizon in [1.0f64, 2.5] {
            let tb = TimeBasis::new(horizon, 16).unwrap();
            for i in 1..=16 {
                for j in 1..=16 {
                    let g = simpson(
                        |t| tb.eval_unchecked(i, t) * tb.eval_unchecked(j, t),
                        0.0,
                        horizon,
                        10_000,
                    );
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-10, "({i},{j}) {g}");
                }
            }
        }
    }

    #[test]
    fn closed_form_integrals_match_simpson() {
        let tb = TimeBasis::new(1.3f64, 8).unwrap();
        for k in 1..=8 {
            let i = simpson(|s| tb.eval_unchecked(k, s), 0.2, 1.1, 10_000);
            assert_abs_diff_eq!(tb.integral(k, 0.2, 1.1), i, epsilon = 1e-12);
            for lambda in [0.5, 3.0, 16.0] {
                let t = 0.9;
                let g = simpson(
                    |s| (-lambda * (t - s)).exp() * tb.eval_unchecked(k, s),
                    0.0,
                    t,
                    10_000,
                );
                assert_abs_diff_eq!(tb.damped_integral(k, lambda, t), g, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn parseval_in_time() {
        // Σ_k g_k(t)² increases in K towards (1 − e^{−2λt}) / (2λ).
        let tb = TimeBasis::new(1.0f64, 64).unwrap();
        for lambda in [1.0f64, 2.0, 4.0, 9.0] {
            for t in [0.3, 1.0] {
                let limit = (1.0 - (-2.0 * lambda * t).exp()) / (2.0 * lambda);
                let mut acc = 0.0;
                let mut partial = Vec::new();
                for k in 1..=64 {
                    let g = simpson(|s| (-lambda * (t - s)).exp() * tb.eval_unchecked(k, s), 0.0, t, 10_000);
                    acc += g * g;
                    partial.push(acc);
                }
                assert!(partial.windows(2).all(|w| w[1] >= w[0]));
                assert!(acc <= limit * (1.0 + 1e-9));
                if t == 1.0 {
                    assert!((limit - partial[15]) / limit < 0.02, "λ={lambda}");
                    assert!((limit - partial[63]) / limit < 0.002, "λ={lambda}");
                }
            }
        }
    }

    #[test]
    fn chaos_index_ordering() {
        let idx = ChaosIndexSet::new(16, 8).unwrap();
        assert_eq!(idx.len(), 128);
        assert_eq!(idx.position(1, 1).unwrap(), 0);
        assert_eq!(idx.position(2, 1).unwrap(), 8);
        assert_eq!(idx.position(16, 8).unwrap(), 127);
        for p in 0..idx.len() {
            let (k, l) = idx.index_at(p);
            assert_eq!(idx.position(k, l).unwrap(), p);
        }
        assert!(idx.position(17, 1).is_err());
        assert!(idx.position(1, 0).is_err());
    }

    #[test]
    fn noise_amplitudes() {
        let spec = NoiseSpectrum::<f64>::standard(8).unwrap();
        assert_eq!(spec.amplitude(1).unwrap(), 1.0);
        // 2^{-2.01} evaluated independently at 50 digits
        assert_abs_diff_eq!(spec.amplitude(2).unwrap(), 0.248_273_123_859_258_98, epsilon = 1e-14);
        let q = spec.amplitudes();
        assert!(q.windows(2).all(|w| w[1] < w[0]));
        assert!(q.iter().all(|&v| v > 0.0));
        assert!(spec.amplitude(9).is_err());
        assert!(spec.amplitude(0).is_err());
        // partial sums bounded by the full p-series ζ(2.01) ≈ 1.6357
        let big = NoiseSpectrum::<f64>::standard(100_000).unwrap();
        let mut partial = 0.0;
        for (l, v) in big.amplitudes().into_iter().enumerate() {
            partial += v;
            if l == 7 {
                assert!(partial < 1.6357);
            }
        }
        assert!(partial < 1.6357);
    }

    #[test]
    fn chaos_sampling_is_deterministic() {
        let idx = ChaosIndexSet::new(4, 3).unwrap();
        let a: ChaosSample<f64> = sample_chaos(&idx, 42);
        let b: ChaosSample<f64> = sample_chaos(&idx, 42);
        let c: ChaosSample<f64> = sample_chaos(&idx, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.xi.len(), 12);
    }

    #[test]
    fn chaos_sampling_statistics() {
        let idx = ChaosIndexSet::new(2, 2).unwrap();
        let m = 100_000;
        let d = idx.len();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut cross = 0.0;
        let mut draws0 = Vec::with_capacity(m);
        let mut draws3 = Vec::with_capacity(m);
        for i in 0..m {
            let s: ChaosSample<f64> = sample_chaos_stream(&idx, 7, i as u64);
            for j in 0..d {
                sum[j] += s.xi[j];
                sq[j] += s.xi[j] * s.xi[j];
            }
            cross += s.xi[0] * s.xi[1];
            draws0.push(s.xi[0]);
            draws3.push(s.xi[3]);
        }
        let mf = m as f64;
        for j in 0..d {
            let mean = sum[j] / mf;
            let var = sq[j] / mf - mean * mean;
            assert!(mean.abs() < 4.0 / mf.sqrt());
            assert!((var - 1.0).abs() < 4.0 * (2.0 / mf).sqrt());
            assert!((0.98..=1.02).contains(&var));
        }
        assert!((cross / mf).abs() < 0.02);

        // two-sample Kolmogorov–Smirnov, 1% critical value 1.628·√(2/m)
        draws0.sort_by(f64::total_cmp);
        draws3.sort_by(f64::total_cmp);
        let (mut i, mut j, mut dmax) = (0usize, 0usize, 0.0f64);
        while i < m && j < m {
            if draws0[i] <= draws3[j] {
                i += 1;
            } else {
                j += 1;
            }
            dmax = dmax.max((i as f64 / mf - j as f64 / mf).abs());
        }
        assert!(dmax < 1.628 * (2.0 / mf).sqrt(), "KS statistic {dmax}");
    }
}
