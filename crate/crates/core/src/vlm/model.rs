use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::propagator::{Dynamics, DynamicsParams, LatentLayout, Reconstructor};
use crate::scalar::{inverse_softplus, softplus, Scalar};
use crate::simulator::Dataset;
use crate::spectral::{Regime, SpatialBasis, SpatialGrid};
use crate::stochastics::{stream, stream_rng, TimeBasis};

/// Bounds applied to every log-variance the model produces.
pub const LOGVAR_MIN: f64 = -18.420_680_743_952_367; // ln 1e-8
pub const LOGVAR_MAX: f64 = 9.210_340_371_976_184; // ln 1e4

/// Static shape of a model: regime, truncation, observation mesh, encoder width.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec<T> {
    pub regime: Regime,
    pub layout: LatentLayout,
    pub hidden: usize,
    pub times: Vec<T>,
    pub space: Vec<T>,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(regime: Regime, layout: LatentLayout, hidden: usize, times: Vec<T>, space: Vec<T>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("encoder width must be positive"));
        }
        if times.len() < 2 {
            return Err(Error::invalid("need at least two observation times"));
        }
        if times[0] != T::zero() || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("observation times must start at 0 and increase"));
        }
        if space.is_empty() {
            return Err(Error::invalid("empty spatial grid"));
        }
        if layout.l_noise > layout.n_modes {
            return Err(Error::invalid("L must not exceed N"));
        }
        Ok(Self {
            regime,
            layout,
            hidden,
            times,
            space,
        })
    }

    pub fn from_dataset(ds: &Dataset<T>, hidden: usize) -> Result<Self> {
        let layout = LatentLayout::new(ds.n_modes, ds.k_time, ds.l_noise)?;
        Self::new(ds.regime, layout, hidden, ds.times.clone(), ds.space.clone())
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_space(&self) -> usize {
        self.space.len()
    }

    pub fn horizon(&self) -> T {
        *self.times.last().expect("validated")
    }

    /// Flattened observation length `(M2 + 1)·M3`.
    pub fn input_dim(&self) -> usize {
        self.n_times() * self.n_space()
    }

    /// `2(N + KL)`.
    pub fn output_dim(&self) -> usize {
        2 * (self.layout.n_modes + self.layout.n_chaos())
    }

    pub fn time_basis(&self) -> TimeBasis<T> {
        TimeBasis::new(self.horizon(), self.layout.k_time).expect("validated")
    }

    pub fn basis(&self) -> SpatialBasis<T> {
        SpatialBasis::new(self.regime, self.layout.n_modes).expect("validated")
    }

    pub fn grid(&self) -> Result<SpatialGrid<T>> {
        SpatialGrid::from_points(self.regime, self.space.clone())
    }

    pub fn reconstructor(&self) -> Result<Reconstructor<T>> {
        Reconstructor::new(self.layout, &self.basis(), &self.grid()?)
    }

    /// Shapes of the nine parameter tensors, in [`ModelParams::tensors`] order.
    pub fn param_shapes(&self) -> [(usize, usize); 9] {
        let h = self.hidden;
        [
            (self.input_dim(), h),
            (1, h),
            (h, h),
            (1, h),
            (h, self.output_dim()),
            (1, self.output_dim()),
            (1, self.layout.n_modes),
            (1, self.layout.l_noise),
            (1, self.n_space()),
        ]
    }
}

/// Optimizer group of each tensor: encoder, ODE parameters, decoder variance.
pub const PARAM_GROUPS: [usize; 9] = [0, 0, 0, 0, 0, 0, 1, 1, 2];
pub const PARAM_NAMES: [&str; 9] = ["w1", "b1", "w2", "b2", "w3", "b3", "lambda_raw", "q_raw", "dec_logvar"];

/// Every learnable array of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub w1: Array2<T>,
    pub b1: Array2<T>,
    pub w2: Array2<T>,
    pub b2: Array2<T>,
    pub w3: Array2<T>,
    pub b3: Array2<T>,
    /// `1 × N`; `λ = softplus(lambda_raw)`.
    pub lambda_raw: Array2<T>,
    /// `1 × L`; `q = softplus(q_raw)`.
    pub q_raw: Array2<T>,
    /// `1 × M3` decoder log-variances, shared over time.
    pub dec_logvar: Array2<T>,
    /// Unconditional initial state; set after training.
    pub z0_mean: Option<Vec<T>>,
    /// Fixed encoder input shift.
    pub input_norm: InputNorm<T>,
}

/// Fixed shift `x − center` applied to encoder inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm<T> {
    /// `1 × (M2 + 1)·M3`.
    pub center: Array2<T>,
}

impl<T: Scalar> InputNorm<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            center: Array2::zeros((1, dim)),
        }
    }

    /// Per-input mean of the rows of `x`.
    pub fn fit(x: ArrayView2<'_, T>) -> Result<Self> {
        let center = x
            .mean_axis(Axis(0))
            .ok_or_else(|| Error::invalid("cannot fit input normalization on no rows"))?
            .insert_axis(Axis(0));
        Ok(Self { center })
    }

    pub fn apply(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        &x - &self.center
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Uniform `±1/√fan_in` weights and biases, `λ = q = 1`, unit decoder variance.
    pub fn init(spec: &ModelSpec<T>, seed: u64) -> Self {
        let mut rng = stream_rng(seed, stream::id(stream::INIT, 0, 0));
        let shapes = spec.param_shapes();
        let mut dense = |i: usize| -> (Array2<T>, Array2<T>) {
            let (fan_in, fan_out) = shapes[i];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |shape| Array2::from_shape_simple_fn(shape, || T::lit(rng.random_range(-bound..bound)));
            let w = draw((fan_in, fan_out));
            let b = draw((1, fan_out));
            (w, b)
        };
        let (w1, b1) = dense(0);
        let (w2, b2) = dense(2);
        let (w3, b3) = dense(4);
        let one = inverse_softplus(T::one());
        Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            lambda_raw: Array2::from_elem((1, spec.layout.n_modes), one),
            q_raw: Array2::from_elem((1, spec.layout.l_noise), one),
            dec_logvar: Array2::zeros((1, spec.n_space())),
            z0_mean: None,
            input_norm: InputNorm::identity(spec.input_dim()),
        }
    }

    /// Sets the bias of every encoder log-variance output and the decoder
    /// log-variances.
    pub fn with_logvar_init(mut self, spec: &ModelSpec<T>, encoder: T, decoder: T) -> Self {
        let (n, c) = (spec.layout.n_modes, spec.layout.n_chaos());
        self.b3.slice_mut(s![0, n..2 * n]).fill(encoder);
        self.b3.slice_mut(s![0, 2 * n + c..]).fill(encoder);
        self.dec_logvar.fill(decoder);
        self
    }

    pub fn tensors(&self) -> [&Array2<T>; 9] {
        [
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w3,
            &self.b3,
            &self.lambda_raw,
            &self.q_raw,
            &self.dec_logvar,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<T>; 9] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
            &mut self.lambda_raw,
            &mut self.q_raw,
            &mut self.dec_logvar,
        ]
    }

    /// Builds from nine tensors in [`tensors`](Self::tensors) order, checking shapes.
    pub fn from_tensors(spec: &ModelSpec<T>, tensors: Vec<Array2<T>>, z0_mean: Option<Vec<T>>) -> Result<Self> {
        if tensors.len() != 9 {
            return Err(Error::LengthMismatch {
                what: "parameter tensors",
                expected: 9,
                actual: tensors.len(),
            });
        }
        for (i, (t, shape)) in tensors.iter().zip(spec.param_shapes()).enumerate() {
            if t.dim() != shape {
                return Err(Error::format(PARAM_NAMES[i], format!("shape {:?}, expected {:?}", t.dim(), shape)));
            }
        }
        if let Some(z) = &z0_mean {
            if z.len() != spec.layout.n_modes {
                return Err(Error::format("z0_mean", "length differs from N"));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("nine tensors");
        Ok(Self {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
            w3: next(),
            b3: next(),
            lambda_raw: next(),
            q_raw: next(),
            dec_logvar: next(),
            z0_mean,
            input_norm: InputNorm::identity(spec.input_dim()),
        })
    }

    pub fn dynamics_params(&self) -> DynamicsParams<T> {
        DynamicsParams {
            lambda_raw: self.lambda_raw.iter().copied().collect(),
            q_raw: self.q_raw.iter().copied().collect(),
        }
    }

    pub fn lambdas(&self) -> Vec<T> {
        self.lambda_raw.iter().map(|&u| softplus(u)).collect()
    }

    pub fn qs(&self) -> Vec<T> {
        self.q_raw.iter().map(|&u| softplus(u)).collect()
    }

    pub fn decoder_variances(&self) -> Vec<T> {
        self.dec_logvar
            .iter()
            .map(|&v| clamp_logvar(v).exp())
            .collect()
    }

    /// Replaces the dynamics with given positive `λ` and `q`.
    pub fn set_dynamics(&mut self, lambdas: &[T], qs: &[T]) -> Result<()> {
        let p = DynamicsParams::from_positive(lambdas, qs)?;
        if p.lambda_raw.len() != self.lambda_raw.len() || p.q_raw.len() != self.q_raw.len() {
            return Err(Error::invalid("λ/q lengths differ from the model"));
        }
        self.lambda_raw = Array2::from_shape_vec((1, p.lambda_raw.len()), p.lambda_raw).expect("row");
        self.q_raw = Array2::from_shape_vec((1, p.q_raw.len()), p.q_raw).expect("row");
        Ok(())
    }

    pub fn dynamics(&self, spec: &ModelSpec<T>) -> Result<Dynamics<T>> {
        Dynamics::from_params(spec.layout, spec.time_basis(), &self.dynamics_params())
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

pub(crate) fn clamp_logvar<T: Scalar>(v: T) -> T {
    v.max(T::lit(LOGVAR_MIN)).min(T::lit(LOGVAR_MAX))
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_encoder: T,
    pub lr_dynamics: T,
    pub lr_decoder: T,
    pub weight_decay: T,
    pub adam_beta1: T,
    pub adam_beta2: T,
    pub adam_eps: T,
    pub beta_z: T,
    pub beta_xi: T,
    pub split_train: T,
    pub split_val: T,
    pub split_test: T,
    /// Validation criterion for the kept checkpoint.
    pub selection: Selection,
    /// Initial bias of the encoder log-variance outputs.
    pub init_encoder_logvar: T,
    /// Initial decoder log-variance.
    pub init_decoder_logvar: T,
    pub hidden: usize,
    pub seed: u64,
}

/// Validation score used to pick the kept parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    /// Highest validation ELBO.
    Elbo,
    /// Lowest mean relative L² of conditional reconstructions.
    RelL2,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::Elbo => "elbo",
            Selection::RelL2 => "rel_l2",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s.trim() {
            "elbo" => Ok(Selection::Elbo),
            "rel_l2" => Ok(Selection::RelL2),
            other => Err(Error::invalid(format!("unknown selection criterion `{other}`"))),
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Selection::Elbo => 0,
            Selection::RelL2 => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Selection::Elbo),
            1 => Ok(Selection::RelL2),
            other => Err(Error::format("selection", format!("unknown code {other}"))),
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn paper() -> Self {
        Self {
            batch_size: 40,
            epochs: 2000,
            warmup_epochs: 10,
            lr_encoder: T::lit(1e-3),
            lr_dynamics: T::lit(2e-2),
            lr_decoder: T::lit(1e-3),
            weight_decay: T::lit(1e-4),
            adam_beta1: T::lit(0.9),
            adam_beta2: T::lit(0.999),
            adam_eps: T::lit(1e-8),
            beta_z: T::lit(7e-2),
            beta_xi: T::lit(1.3),
            split_train: T::lit(0.70),
            split_val: T::lit(0.15),
            split_test: T::lit(0.15),
            selection: Selection::Elbo,
            init_encoder_logvar: T::lit(-4.0),
            init_decoder_logvar: T::lit(-2.0),
            hidden: 256,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            epochs: 300,
            batch_size: 20,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.epochs <= self.warmup_epochs {
            return Err(Error::invalid("epochs must exceed warmup epochs"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let fractions = [self.split_train, self.split_val, self.split_test];
        if fractions.iter().any(|&f| f < T::zero()) {
            return Err(Error::invalid("split fractions must be nonnegative"));
        }
        let total: T = fractions.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::invalid(format!("split fractions sum to {total}, not 1")));
        }
        if self.beta_z < T::zero() || self.beta_xi < T::zero() {
            return Err(Error::invalid("KL weights must be nonnegative"));
        }
        Ok(())
    }

    pub fn base_learning_rates(&self) -> Vec<T> {
        vec![self.lr_encoder, self.lr_dynamics, self.lr_decoder]
    }
}

/// Diagonal Gaussian posteriors over `z_{t0}` (dim `N`) and `ξ` (dim `KL`).
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior<T> {
    pub mean_z: Array1<T>,
    pub var_z: Array1<T>,
    pub mean_xi: Array1<T>,
    pub var_xi: Array1<T>,
}

/// Raw encoder output for a batch of flattened observations, `B × 2(N + KL)`.
pub(crate) fn encoder_forward<T: Scalar>(params: &ModelParams<T>, x: ArrayView2<'_, T>) -> Array2<T> {
    let h1 = (params.input_norm.apply(x).dot(&params.w1) + &params.b1).mapv(T::tanh);
    let h2 = (h1.dot(&params.w2) + &params.b2).mapv(T::tanh);
    h2.dot(&params.w3) + &params.b3
}

fn split_posterior<T: Scalar>(out: ArrayView1<'_, T>, n: usize, c: usize) -> Posterior<T> {
    let var = |v: ArrayView1<'_, T>| v.mapv(|u| clamp_logvar(u).exp());
    Posterior {
        mean_z: out.slice(s![0..n]).to_owned(),
        var_z: var(out.slice(s![n..2 * n])),
        mean_xi: out.slice(s![2 * n..2 * n + c]).to_owned(),
        var_xi: var(out.slice(s![2 * n + c..2 * n + 2 * c])),
    }
}

/// Posteriors for one observation of shape `(M2 + 1) × M3`.
pub fn encode<T: Scalar>(spec: &ModelSpec<T>, params: &ModelParams<T>, observation: ArrayView2<'_, T>) -> Result<Posterior<T>> {
    let (rows, cols) = observation.dim();
    if rows != spec.n_times() || cols != spec.n_space() {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: (rows, cols),
            rhs: (spec.n_times(), spec.n_space()),
        });
    }
    let flat = observation
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, spec.input_dim()))
        .expect("contiguous");
    Ok(encode_batch(spec, params, flat.view())?.remove(0))
}

/// Posteriors for a batch of flattened observations, `B × (M2 + 1)·M3`.
pub fn encode_batch<T: Scalar>(spec: &ModelSpec<T>, params: &ModelParams<T>, x: ArrayView2<'_, T>) -> Result<Vec<Posterior<T>>> {
    if x.ncols() != spec.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "encode_batch",
            lhs: x.dim(),
            rhs: (x.nrows(), spec.input_dim()),
        });
    }
    let out = encoder_forward(params, x);
    let (n, c) = (spec.layout.n_modes, spec.layout.n_chaos());
    Ok(out.axis_iter(Axis(0)).map(|row| split_posterior(row, n, c)).collect())
}

/// `μ + σ ⊙ g`.
pub fn reparameterize<T: Scalar>(mean: &[T], var: &[T], noise: &[T]) -> Result<Vec<T>> {
    if mean.len() != var.len() || mean.len() != noise.len() {
        return Err(Error::LengthMismatch {
            what: "reparameterization inputs",
            expected: mean.len(),
            actual: var.len().min(noise.len()),
        });
    }
    Ok(mean
        .iter()
        .zip(var)
        .zip(noise)
        .map(|((&m, &v), &g)| m + v.sqrt() * g)
        .collect())
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn gaussian_kl<T: Scalar>(mean: &[T], var: &[T]) -> Result<T> {
    if mean.len() != var.len() {
        return Err(Error::LengthMismatch {
            what: "KL variances",
            expected: mean.len(),
            actual: var.len(),
        });
    }
    let mut acc = T::zero();
    for (&m, &v) in mean.iter().zip(var) {
        if !(v > T::zero()) {
            return Err(Error::Domain(format!("nonpositive variance {v}")));
        }
        acc += m * m + v - T::one() - v.ln();
    }
    Ok(T::lit(0.5) * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::standard_normal;
    use approx::assert_abs_diff_eq;
    use crate::vlm::tests::tiny_spec;
    use proptest::prelude::*;

    #[test]
    fn input_centering_and_logvar_init() {
        let spec = tiny_spec();
        let x = Array2::from_shape_fn((3, spec.input_dim()), |(i, j)| (i * 2 + j) as f64);
        let norm = InputNorm::fit(x.view()).unwrap();
        let shifted = norm.apply(x.view());
        for col in shifted.axis_iter(Axis(1)) {
            assert_abs_diff_eq!(col.sum(), 0.0, epsilon = 1e-12);
        }
        assert!(InputNorm::fit(x.slice(s![..0, ..])).is_err());

        // the encoder sees only the shifted input
        let mut p = ModelParams::init(&spec, 1);
        let before = encoder_forward(&p, shifted.view());
        p.input_norm = norm;
        assert_eq!(encoder_forward(&p, x.view()), before);

        let p = ModelParams::init(&spec, 1).with_logvar_init(&spec, -4.0, -2.0);
        let post = encode_batch(&spec, &p, Array2::zeros((1, spec.input_dim())).view()).unwrap();
        assert!(p.dec_logvar.iter().all(|&v| v == -2.0));
        let (n, c) = (spec.layout.n_modes, spec.layout.n_chaos());
        let lv = |v: f64| v.ln();
        let raw = encoder_forward(&p, Array2::zeros((1, spec.input_dim())).view());
        for j in 0..n {
            assert_abs_diff_eq!(lv(post[0].var_z[j]), raw[[0, n + j]], epsilon = 1e-12);
        }
        for j in 0..c {
            assert_abs_diff_eq!(lv(post[0].var_xi[j]), raw[[0, 2 * n + c + j]], epsilon = 1e-12);
        }
        assert_eq!(p.b3.slice(s![0, ..n]), ModelParams::init(&spec, 1).b3.slice(s![0, ..n]));
        assert!(p.b3.slice(s![0, n..2 * n]).iter().all(|&v| v == -4.0));
    }

    #[test]
    fn init_matches_model_shapes() {
        let spec = tiny_spec();
        let p = ModelParams::init(&spec, 3);
        for (t, s) in p.tensors().iter().zip(spec.param_shapes()) {
            assert_eq!(t.dim(), s);
        }
        assert_eq!(spec.output_dim(), 2 * (2 + 4));
        for v in p.lambdas().into_iter().chain(p.qs()) {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-14);
        }
        let bound = 1.0 / (spec.input_dim() as f64).sqrt();
        assert!(p.w1.iter().all(|v| v.abs() <= bound));
        assert_eq!(p, ModelParams::init(&spec, 3));
        assert_ne!(p, ModelParams::init(&spec, 4));
        assert_eq!(p.decoder_variances(), vec![1.0; 8]);
    }

    #[test]
    fn encode_is_deterministic_and_positive() {
        let spec = tiny_spec();
        let p = ModelParams::init(&spec, 1);
        let obs = Array2::from_shape_fn((6, 8), |(i, j)| ((i * 8 + j) as f64 * 0.37).sin());
        let a = encode(&spec, &p, obs.view()).unwrap();
        let b = encode(&spec, &p, obs.view()).unwrap();
        assert_eq!(a, b);
        assert!(a.var_z.iter().chain(a.var_xi.iter()).all(|&v| v > 0.0));
        assert_eq!(a.mean_xi.len(), 4);
        assert!(encode(&spec, &p, Array2::zeros((5, 8)).view()).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        assert_eq!(reparameterize(&[1.0, -2.0], &[4.0, 9.0], &[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
        assert_eq!(reparameterize(&[1.0f64], &[0.0], &[3.7]).unwrap(), vec![1.0]);
        assert!(reparameterize(&[1.0f64], &[1.0, 2.0], &[0.0]).is_err());
        let mut rng = stream_rng(11, 0);
        let n = 100_000;
        let (mu, var) = (0.3f64, 2.25);
        let mean: f64 = (0..n)
            .map(|_| reparameterize(&[mu], &[var], &[standard_normal(&mut rng)]).unwrap()[0])
            .sum::<f64>()
            / n as f64;
        assert!((mean - mu).abs() < 4.0 * var.sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn kl_examples() {
        assert_eq!(gaussian_kl(&[0.0f64], &[1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(gaussian_kl(&[1.0f64], &[1.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(gaussian_kl(&[0.0f64], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn kl_nonnegative(mu in -5.0f64..5.0, lv in -8.0f64..8.0) {
            prop_assert!(gaussian_kl(&[mu], &[lv.exp()]).unwrap() >= 0.0);
        }
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::<f64>::paper();
        c.validate().unwrap();
        assert_eq!(c.batch_size, 40);
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::<f64>::desk();
        c.split_val = 0.2;
        assert!(c.validate().is_err());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let spec = tiny_spec();
        let p = ModelParams::init(&spec, 1);
        let ts: Vec<Array2<f64>> = p.tensors().iter().map(|t| (*t).clone()).collect();
        assert_eq!(ModelParams::from_tensors(&spec, ts.clone(), None).unwrap(), p);
        let mut bad = ts;
        bad[7] = Array2::zeros((1, 3));
        let err = ModelParams::from_tensors(&spec, bad, None).unwrap_err();
        assert!(err.to_string().contains("q_raw"));
    }
}
