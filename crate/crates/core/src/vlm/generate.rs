use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stochastics::{standard_normal, stream, stream_rng};
use crate::vlm::model::{encode, ModelParams, ModelSpec};

/// How fields are produced from a trained model.
#[derive(Clone, Copy, Debug)]
pub enum GenerationMode<'a, T> {
    /// Posterior means of an encoded observation `(M2 + 1) × M3`.
    Conditional(ArrayView2<'a, T>),
    /// Shared initial state, standard-normal `ξ` per sample.
    Unconditional,
}

/// Latent states `times × d` started from `z0` in the zero-order block.
pub fn latent_states<T: Scalar>(spec: &ModelSpec<T>, params: &ModelParams<T>, z0: &[T]) -> Result<Array2<T>> {
    let dynamics = params.dynamics(spec)?;
    dynamics.rk4_integrate(&dynamics.initial_state(z0)?, &spec.times)
}

/// Field reconstructed from the posterior means of `observation`; with
/// `use_chaos = false` the chaos coordinates are set to zero.
pub fn conditional_reconstruction<T: Scalar>(
    spec: &ModelSpec<T>,
    params: &ModelParams<T>,
    observation: ArrayView2<'_, T>,
    use_chaos: bool,
) -> Result<Array2<T>> {
    let post = encode(spec, params, observation)?;
    let states = latent_states(spec, params, post.mean_z.as_slice().expect("contiguous"))?;
    let xi = if use_chaos {
        post.mean_xi.to_vec()
    } else {
        vec![T::zero(); spec.layout.n_chaos()]
    };
    spec.reconstructor()?.reconstruct(states.view(), &xi)
}

/// Modal coefficients `count × times × N` of unconditional samples.
pub fn unconditional_coefficients<T: Scalar>(
    spec: &ModelSpec<T>,
    params: &ModelParams<T>,
    count: usize,
    seed: u64,
) -> Result<Array3<T>> {
    let z0 = params
        .z0_mean
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no unconditional initial state; train it first"))?;
    let states = latent_states(spec, params, z0)?;
    let rec = spec.reconstructor()?;
    let mut out = Array3::zeros((count, spec.n_times(), spec.layout.n_modes));
    for s in 0..count {
        let xi = sample_xi(spec, seed, s);
        out.index_axis_mut(Axis(0), s).assign(&rec.modal_coefficients(states.view(), &xi)?);
    }
    Ok(out)
}

fn sample_xi<T: Scalar>(spec: &ModelSpec<T>, seed: u64, sample: usize) -> Vec<T> {
    let mut rng = stream_rng(seed, stream::id(stream::GENERATE, sample as u64, 0));
    (0..spec.layout.n_chaos()).map(|_| standard_normal(&mut rng)).collect()
}

/// Fields `count × (M2 + 1) × M3`. Conditional mode ignores `seed` and
/// repeats the same reconstruction `count` times.
pub fn generate<T: Scalar>(
    spec: &ModelSpec<T>,
    params: &ModelParams<T>,
    mode: GenerationMode<'_, T>,
    count: usize,
    seed: u64,
) -> Result<Array3<T>> {
    let mut out = Array3::zeros((count, spec.n_times(), spec.n_space()));
    match mode {
        GenerationMode::Conditional(obs) => {
            let field = conditional_reconstruction(spec, params, obs, true)?;
            for mut slot in out.axis_iter_mut(Axis(0)) {
                slot.assign(&field);
            }
        }
        GenerationMode::Unconditional => {
            let coeffs = unconditional_coefficients(spec, params, count, seed)?;
            let design = spec.basis().design(&spec.space);
            for (s, c) in coeffs.axis_iter(Axis(0)).enumerate() {
                out.index_axis_mut(Axis(0), s).assign(&c.dot(&design));
            }
        }
    }
    Ok(out)
}

/// The unconditional field with `ξ = 0`.
pub fn mean_field<T: Scalar>(spec: &ModelSpec<T>, params: &ModelParams<T>) -> Result<Array2<T>> {
    let z0 = params
        .z0_mean
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no unconditional initial state; train it first"))?;
    let states = latent_states(spec, params, z0)?;
    spec.reconstructor()?
        .reconstruct(states.view(), &vec![T::zero(); spec.layout.n_chaos()])
}
