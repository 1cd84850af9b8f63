use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::diffengine::{AdamConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simulator::Dataset;
use crate::stochastics::{stream, stream_rng};
use crate::vlm::checkpoint::Checkpoint;
use crate::metrics::rel_l2;
use crate::vlm::generate::conditional_reconstruction;
use crate::vlm::model::{encode_batch, InputNorm, ModelParams, ModelSpec, Selection, TrainConfig, PARAM_GROUPS};
use crate::vlm::objective::{elbo_terms, elbo_with_gradients, ElboNoise, GraphConsts, KlWeights};

/// Trajectory indices of the three splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded permutation of `0..m1` cut at the configured fractions
    /// (rounded to the nearest trajectory; the test split takes the rest).
    pub fn new<T: Scalar>(m1: usize, config: &TrainConfig<T>) -> Result<Self> {
        let mut order: Vec<usize> = (0..m1).collect();
        order.shuffle(&mut stream_rng(config.seed, stream::id(stream::SPLIT, 0, 0)));
        let count = |f: T| (f.to_f64_lossy() * m1 as f64).round() as usize;
        let n_train = count(config.split_train).min(m1);
        let n_val = count(config.split_val).min(m1 - n_train);
        let split = Self {
            train: order[..n_train].to_vec(),
            val: order[n_train..n_train + n_val].to_vec(),
            test: order[n_train + n_val..].to_vec(),
        };
        if split.train.is_empty() || split.val.is_empty() {
            return Err(Error::invalid(format!(
                "{m1} trajectories leave an empty training or validation split"
            )));
        }
        if config.split_test > T::zero() && split.test.is_empty() {
            return Err(Error::invalid(format!("{m1} trajectories leave an empty test split")));
        }
        Ok(split)
    }
}

/// One row of the training log. ELBO values are per trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog<T> {
    pub epoch: usize,
    pub train_elbo: T,
    pub val_elbo: T,
    pub lambdas: Vec<T>,
    pub qs: Vec<T>,
}

/// Parameters of the best validation epoch seen so far.
#[derive(Clone, Debug, PartialEq)]
pub struct BestState<T> {
    pub epoch: usize,
    pub val_elbo: T,
    /// Selection score, higher is better: the validation ELBO or minus the
    /// mean validation relative L².
    pub score: T,
    pub params: ModelParams<T>,
}

/// Minibatch ELBO ascent with validation-based model selection.
///
/// All randomness derives from `config.seed` and the epoch/batch counters, so
/// a run resumed from a checkpoint continues exactly as an uninterrupted one.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub spec: ModelSpec<T>,
    pub config: TrainConfig<T>,
    pub split: Split,
    pub params: ModelParams<T>,
    pub optimizer: OptimizerState<T>,
    pub next_epoch: usize,
    pub history: Vec<EpochLog<T>>,
    pub best: Option<BestState<T>>,
    consts: GraphConsts<T>,
    /// `M1 × (M2 + 1)·M3`.
    observations: Array2<T>,
}

pub(crate) fn flatten_fields<T: Scalar>(ds: &Dataset<T>) -> Array2<T> {
    let m1 = ds.n_trajectories();
    ds.fields
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((m1, ds.n_times() * ds.n_space()))
        .expect("contiguous")
}

impl<T: Scalar> Trainer<T> {
    pub fn new(dataset: &Dataset<T>, config: TrainConfig<T>) -> Result<Self> {
        config.validate()?;
        let spec = ModelSpec::from_dataset(dataset, config.hidden)?;
        let split = Split::new(dataset.n_trajectories(), &config)?;
        let mut params = ModelParams::init(&spec, config.seed)
            .with_logvar_init(&spec, config.init_encoder_logvar, config.init_decoder_logvar);
        params.input_norm = InputNorm::fit(flatten_fields(dataset).select(Axis(0), &split.train).view())?;
        let optimizer = OptimizerState::new(
            AdamConfig {
                beta1: config.adam_beta1,
                beta2: config.adam_beta2,
                eps: config.adam_eps,
                weight_decay: config.weight_decay,
            },
            &spec.param_shapes(),
            PARAM_GROUPS.to_vec(),
            config.base_learning_rates(),
            config.warmup_epochs,
            config.epochs,
        )?;
        Self::assemble(dataset, spec, config, params, optimizer, 0, Vec::new(), None)
    }

    /// Continues the run stored in `checkpoint` on the same dataset.
    pub fn resume(dataset: &Dataset<T>, checkpoint: Checkpoint<T>) -> Result<Self> {
        let spec = ModelSpec::from_dataset(dataset, checkpoint.config.hidden)?;
        if spec != checkpoint.spec {
            return Err(Error::invalid("checkpoint was trained on a differently shaped dataset"));
        }
        Self::assemble(
            dataset,
            checkpoint.spec,
            checkpoint.config,
            checkpoint.params,
            checkpoint.optimizer,
            checkpoint.next_epoch,
            checkpoint.history,
            checkpoint.best,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        dataset: &Dataset<T>,
        spec: ModelSpec<T>,
        config: TrainConfig<T>,
        params: ModelParams<T>,
        optimizer: OptimizerState<T>,
        next_epoch: usize,
        history: Vec<EpochLog<T>>,
        best: Option<BestState<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let split = Split::new(dataset.n_trajectories(), &config)?;
        if config.batch_size > split.train.len() {
            return Err(Error::invalid(format!(
                "batch size {} exceeds the {} training trajectories",
                config.batch_size,
                split.train.len()
            )));
        }
        let consts = GraphConsts::new(&spec)?;
        Ok(Self {
            observations: flatten_fields(dataset),
            spec,
            config,
            split,
            params,
            optimizer,
            next_epoch,
            history,
            best,
            consts,
        })
    }

    fn weights(&self) -> KlWeights<T> {
        KlWeights {
            beta_z: self.config.beta_z,
            beta_xi: self.config.beta_xi,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.next_epoch >= self.config.epochs
    }

    /// Rows of the flattened observation matrix.
    pub fn observations(&self, indices: &[usize]) -> Array2<T> {
        self.observations.select(Axis(0), indices)
    }

    /// Per-trajectory validation ELBO with noise fixed across epochs.
    pub fn validation_elbo(&self, params: &ModelParams<T>) -> Result<T> {
        let mut total = T::zero();
        for (chunk_id, chunk) in self.split.val.chunks(self.config.batch_size).enumerate() {
            let x = self.observations(chunk);
            let noise = ElboNoise::sample(
                &self.spec,
                chunk.len(),
                self.config.seed,
                stream::id(stream::VALIDATION, 0, chunk_id as u64),
            );
            total += elbo_terms(&self.spec, &self.consts, params, x.view(), &noise, self.weights())?.elbo;
        }
        Ok(total / T::from_usize_lossy(self.split.val.len()))
    }

    /// Mean relative L² of conditional reconstructions over the validation split.
    pub fn validation_rel_l2(&self, params: &ModelParams<T>) -> Result<T> {
        let shape = (self.spec.n_times(), self.spec.n_space());
        let mut total = T::zero();
        for &i in &self.split.val {
            let obs = self.observations.row(i).into_shape_with_order(shape).expect("contiguous row");
            let rec = conditional_reconstruction(&self.spec, params, obs, true)?;
            total += rel_l2(rec.view(), obs)?;
        }
        Ok(total / T::from_usize_lossy(self.split.val.len()))
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog<T>> {
        if self.is_finished() {
            return Err(Error::invalid("training already completed all epochs"));
        }
        let epoch = self.next_epoch;
        let mut order = self.split.train.clone();
        order.shuffle(&mut stream_rng(
            self.config.seed,
            stream::id(stream::SHUFFLE, epoch as u64, 0),
        ));
        let mut train_total = T::zero();
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let x = self.observations(batch);
            let noise = ElboNoise::for_batch(&self.spec, batch.len(), self.config.seed, epoch, b);
            let (terms, grads) =
                elbo_with_gradients(&self.spec, &self.consts, &self.params, x.view(), &noise, self.weights())?;
            if !terms.elbo.is_finite() {
                return Err(Error::Numerical(format!("non-finite ELBO at epoch {epoch}, batch {b}")));
            }
            train_total += terms.elbo;
            let scale = -T::one() / T::from_usize_lossy(batch.len());
            let loss_grads: Vec<Array2<T>> = grads.into_iter().map(|g| g * scale).collect();
            let mut tensors = self.params.tensors_mut();
            self.optimizer.adam_step(epoch, &mut tensors, &loss_grads)?;
        }
        let val_elbo = self.validation_elbo(&self.params)?;
        let score = match self.config.selection {
            Selection::Elbo => val_elbo,
            Selection::RelL2 => -self.validation_rel_l2(&self.params)?,
        };
        let log = EpochLog {
            epoch,
            train_elbo: train_total / T::from_usize_lossy(order.len()),
            val_elbo,
            lambdas: self.params.lambdas(),
            qs: self.params.qs(),
        };
        if self.best.as_ref().is_none_or(|b| score > b.score) {
            self.best = Some(BestState {
                epoch,
                val_elbo,
                score,
                params: self.params.clone(),
            });
        }
        self.history.push(log.clone());
        self.next_epoch += 1;
        Ok(log)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochLog<T>)) -> Result<()> {
        while !self.is_finished() {
            let log = self.run_epoch()?;
            on_epoch(&log);
        }
        Ok(())
    }

    /// Validation-best parameters with the unconditional initial state set to
    /// the mean posterior mean over the training split.
    pub fn best_model(&self) -> Result<ModelParams<T>> {
        let best = self
            .best
            .as_ref()
            .ok_or_else(|| Error::invalid("no epoch has been trained"))?;
        let mut params = best.params.clone();
        params.z0_mean = Some(mean_initial_state(
            &self.spec,
            &params,
            self.observations(&self.split.train).view(),
        )?);
        Ok(params)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            spec: self.spec.clone(),
            config: self.config.clone(),
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            next_epoch: self.next_epoch,
            history: self.history.clone(),
            best: self.best.clone(),
        }
    }
}

/// Average posterior mean of `z_{t0}` over flattened observations.
pub fn mean_initial_state<T: Scalar>(spec: &ModelSpec<T>, params: &ModelParams<T>, x: ArrayView2<'_, T>) -> Result<Vec<T>> {
    if x.nrows() == 0 {
        return Err(Error::invalid("no observations to average"));
    }
    let posteriors = encode_batch(spec, params, x)?;
    let mut acc = vec![T::zero(); spec.layout.n_modes];
    for p in &posteriors {
        for (a, &m) in acc.iter_mut().zip(p.mean_z.iter()) {
            *a += m;
        }
    }
    let count = T::from_usize_lossy(posteriors.len());
    Ok(acc.into_iter().map(|a| a / count).collect())
}
