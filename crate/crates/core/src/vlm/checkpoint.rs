//! Versioned binary checkpoints.
//!
//! Field order, all little-endian, reals stored as `f64`:
//!
//! ```text
//! magic          8 bytes "SPDECK01"
//! spec           u32 regime code, N, K, L, hidden, M2 + 1, M3;
//!                f64 times[M2 + 1], space[M3]
//! config         u32 batch, epochs, warmup, hidden;
//!                f64 lr_encoder, lr_dynamics, lr_decoder, weight_decay,
//!                    adam_beta1, adam_beta2, adam_eps, beta_z, beta_xi,
//!                    split_train, split_val, split_test,
//!                    init_encoder_logvar, init_decoder_logvar;
//!                u64 seed; u32 selection (0 elbo, 1 rel_l2)
//! progress       u32 next_epoch; u64 optimizer step
//! params         9 tensors (w1 b1 w2 b2 w3 b3 lambda_raw q_raw dec_logvar),
//!                each u32 rows, u32 cols, f64 data row-major;
//!                u8 has_z0_mean, then N × f64 if set;
//!                f64 input center[(M2 + 1)·M3]
//! moments        9 first-moment tensors, then 9 second-moment tensors
//! best           u8 present; if set: u32 epoch, f64 val_elbo, f64 score, 9 tensors,
//!                u8 has_z0_mean (+ N × f64), input center
//! history        u32 count; each: u32 epoch, f64 train_elbo, f64 val_elbo,
//!                f64 λ[N], f64 q[L]
//! ```
//!
//! The random state is fully determined by `seed` and `next_epoch`: every
//! shuffle and reparameterization draw uses a stream keyed by epoch and batch.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::diffengine::{AdamConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::io::bin;
use crate::propagator::LatentLayout;
use crate::scalar::Scalar;
use crate::spectral::Regime;
use crate::vlm::model::{ModelParams, ModelSpec, Selection, TrainConfig, PARAM_GROUPS};
use crate::vlm::train::{BestState, EpochLog};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPDECK01";

/// Everything needed to resume training or evaluate a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec<T>,
    pub config: TrainConfig<T>,
    pub params: ModelParams<T>,
    pub optimizer: OptimizerState<T>,
    pub next_epoch: usize,
    pub history: Vec<EpochLog<T>>,
    pub best: Option<BestState<T>>,
}

fn put_tensor<T: Scalar>(w: &mut impl Write, t: &Array2<T>) -> Result<()> {
    bin::put_len(w, "tensor rows", t.nrows())?;
    bin::put_len(w, "tensor cols", t.ncols())?;
    bin::put_scalars(w, t.iter().copied())
}

fn get_tensor<T: Scalar>(r: &mut impl Read) -> Result<Array2<T>> {
    let rows = bin::get_len(r, "tensor rows")?;
    let cols = bin::get_len(r, "tensor cols")?;
    let data = bin::get_scalars(r, "tensor data", rows * cols)?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("sized"))
}

fn put_params<T: Scalar>(w: &mut impl Write, p: &ModelParams<T>) -> Result<()> {
    for t in p.tensors() {
        put_tensor(w, t)?;
    }
    match &p.z0_mean {
        Some(z) => {
            bin::put_u8(w, 1)?;
            bin::put_scalars(w, z.iter().copied())?
        }
        None => bin::put_u8(w, 0)?,
    }
    bin::put_scalars(w, p.input_norm.center.iter().copied())
}

fn get_params<T: Scalar>(r: &mut impl Read, spec: &ModelSpec<T>) -> Result<ModelParams<T>> {
    let tensors = (0..9).map(|_| get_tensor(r)).collect::<Result<Vec<_>>>()?;
    let z0 = match bin::get_u8(r, "has_z0_mean")? {
        0 => None,
        1 => Some(bin::get_scalars(r, "z0_mean", spec.layout.n_modes)?),
        other => return Err(Error::format("has_z0_mean", format!("flag {other}"))),
    };
    let mut params = ModelParams::from_tensors(spec, tensors, z0)?;
    let center = bin::get_scalars(r, "input center", spec.input_dim())?;
    params.input_norm.center = Array2::from_shape_vec((1, center.len()), center).expect("sized");
    Ok(params)
}

impl<T: Scalar> Checkpoint<T> {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        let s = &self.spec;
        for (name, v) in [
            ("regime", s.regime.code() as usize),
            ("N", s.layout.n_modes),
            ("K", s.layout.k_time),
            ("L", s.layout.l_noise),
            ("hidden", s.hidden),
            ("M2+1", s.n_times()),
            ("M3", s.n_space()),
        ] {
            bin::put_len(w, name, v)?;
        }
        bin::put_scalars(w, s.times.iter().copied())?;
        bin::put_scalars(w, s.space.iter().copied())?;

        let c = &self.config;
        for (name, v) in [
            ("batch", c.batch_size),
            ("epochs", c.epochs),
            ("warmup", c.warmup_epochs),
            ("hidden", c.hidden),
        ] {
            bin::put_len(w, name, v)?;
        }
        bin::put_scalars(
            w,
            [
                c.lr_encoder,
                c.lr_dynamics,
                c.lr_decoder,
                c.weight_decay,
                c.adam_beta1,
                c.adam_beta2,
                c.adam_eps,
                c.beta_z,
                c.beta_xi,
                c.split_train,
                c.split_val,
                c.split_test,
                c.init_encoder_logvar,
                c.init_decoder_logvar,
            ],
        )?;
        bin::put_u64(w, c.seed)?;
        bin::put_u32(w, c.selection.code())?;

        bin::put_len(w, "next_epoch", self.next_epoch)?;
        bin::put_u64(w, self.optimizer.step)?;
        put_params(w, &self.params)?;
        for t in self.optimizer.first_moment.iter().chain(&self.optimizer.second_moment) {
            put_tensor(w, t)?;
        }
        match &self.best {
            Some(b) => {
                bin::put_u8(w, 1)?;
                bin::put_len(w, "best epoch", b.epoch)?;
                bin::put_f64(w, b.val_elbo.to_f64_lossy())?;
                bin::put_f64(w, b.score.to_f64_lossy())?;
                put_params(w, &b.params)?;
            }
            None => bin::put_u8(w, 0)?,
        }
        bin::put_len(w, "history", self.history.len())?;
        for h in &self.history {
            bin::put_len(w, "history epoch", h.epoch)?;
            bin::put_f64(w, h.train_elbo.to_f64_lossy())?;
            bin::put_f64(w, h.val_elbo.to_f64_lossy())?;
            bin::put_scalars(w, h.lambdas.iter().copied())?;
            bin::put_scalars(w, h.qs.iter().copied())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        bin::expect_magic(r, CHECKPOINT_MAGIC)?;
        let regime = Regime::from_code(bin::get_u32(r, "regime")?)?;
        let n = bin::get_len(r, "N")?;
        let k = bin::get_len(r, "K")?;
        let l = bin::get_len(r, "L")?;
        let hidden = bin::get_len(r, "hidden")?;
        let n_times = bin::get_len(r, "M2+1")?;
        let m3 = bin::get_len(r, "M3")?;
        let times = bin::get_scalars(r, "times", n_times)?;
        let space = bin::get_scalars(r, "space", m3)?;
        let spec = ModelSpec::new(regime, LatentLayout::new(n, k, l)?, hidden, times, space)?;

        let batch_size = bin::get_len(r, "batch")?;
        let epochs = bin::get_len(r, "epochs")?;
        let warmup_epochs = bin::get_len(r, "warmup")?;
        let config_hidden = bin::get_len(r, "hidden")?;
        let reals: Vec<T> = bin::get_scalars(r, "config reals", 14)?;
        let seed = bin::get_u64(r, "seed")?;
        let selection = Selection::from_code(bin::get_u32(r, "selection")?)?;
        let config = TrainConfig {
            batch_size,
            epochs,
            warmup_epochs,
            lr_encoder: reals[0],
            lr_dynamics: reals[1],
            lr_decoder: reals[2],
            weight_decay: reals[3],
            adam_beta1: reals[4],
            adam_beta2: reals[5],
            adam_eps: reals[6],
            beta_z: reals[7],
            beta_xi: reals[8],
            split_train: reals[9],
            split_val: reals[10],
            split_test: reals[11],
            init_encoder_logvar: reals[12],
            init_decoder_logvar: reals[13],
            selection,
            hidden: config_hidden,
            seed,
        };
        config
            .validate()
            .map_err(|e| Error::format("config", e.to_string()))?;

        let next_epoch = bin::get_len(r, "next_epoch")?;
        let step = bin::get_u64(r, "optimizer step")?;
        let params = get_params(r, &spec)?;
        let mut optimizer = OptimizerState::new(
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
        optimizer.step = step;
        for slot in optimizer.first_moment.iter_mut().chain(optimizer.second_moment.iter_mut()) {
            let t = get_tensor(r)?;
            if t.dim() != slot.dim() {
                return Err(Error::format("optimizer moments", "shape differs from parameters"));
            }
            *slot = t;
        }
        let best = match bin::get_u8(r, "best")? {
            0 => None,
            1 => {
                let epoch = bin::get_len(r, "best epoch")?;
                let val_elbo = bin::get_scalar(r, "best val_elbo")?;
                let score = bin::get_scalar(r, "best score")?;
                let params = get_params(r, &spec)?;
                Some(BestState {
                    epoch,
                    val_elbo,
                    score,
                    params,
                })
            }
            other => return Err(Error::format("best", format!("flag {other}"))),
        };
        let count = bin::get_len(r, "history")?;
        let mut history = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            history.push(EpochLog {
                epoch: bin::get_len(r, "history epoch")?,
                train_elbo: bin::get_scalar(r, "history train_elbo")?,
                val_elbo: bin::get_scalar(r, "history val_elbo")?,
                lambdas: bin::get_scalars(r, "history lambdas", n)?,
                qs: bin::get_scalars(r, "history qs", l)?,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format("history", "trailing bytes after the last record"));
        }
        Ok(Self {
            spec,
            config,
            params,
            optimizer,
            next_epoch,
            history,
            best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
