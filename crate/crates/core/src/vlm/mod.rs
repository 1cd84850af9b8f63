//! The variational latent model: a feed-forward encoder producing diagonal
//! Gaussian posteriors over the initial modal state and the chaos
//! coordinates, the propagator dynamics unrolled with RK4, and a Gaussian
//! observation model with one learnable variance per spatial location.

mod checkpoint;
mod generate;
mod model;
mod objective;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use generate::{
    conditional_reconstruction, generate, latent_states, mean_field, unconditional_coefficients, GenerationMode,
};
pub use model::{
    encode, encode_batch, gaussian_kl, reparameterize, InputNorm, ModelParams, ModelSpec, Posterior, Selection, TrainConfig, LOGVAR_MAX,
    LOGVAR_MIN, PARAM_GROUPS, PARAM_NAMES,
};
pub use objective::{
    build_elbo, elbo_terms, elbo_with_gradients, ElboGraph, ElboNoise, ElboTerms, GraphConsts, KlWeights,
};
pub use train::{mean_initial_state, BestState, EpochLog, Split, Trainer};

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::propagator::LatentLayout;
    use crate::spectral::{Regime, SpatialGrid};

    /// `N = K = L = 2`, `M2 = 5`, `M3 = 8`, Regime B, encoder width 6.
    pub(crate) fn tiny_spec() -> ModelSpec<f64> {
        let layout = LatentLayout::new(2, 2, 2).unwrap();
        let times: Vec<f64> = (0..=5).map(|i| i as f64 / 5.0).collect();
        let grid = SpatialGrid::<f64>::observation(Regime::DirichletHeat, 8).unwrap();
        ModelSpec::new(Regime::DirichletHeat, layout, 6, times, grid.points).unwrap()
    }
}
