//! Flat `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. `profile` (`desk` or
//! `paper`) and `regime` (`A` or `B`) choose the defaults, wherever they
//! appear; every other key overrides one default. Unknown or repeated keys
//! are errors. [`Config::echo`] prints every key with its resolved value in a
//! form that parses back to the same configuration.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use wiener_chaos::vlm::Selection;
use wiener_chaos::{Regime, Scheme, SimConfig64, TrainConfig64};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

/// Law diagnostics of `eval`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Unconditional model samples.
    pub samples: usize,
    pub seed: u64,
    /// Fresh reference trajectories simulated from the config; 0 uses the
    /// dataset's test split instead.
    pub reference_samples: usize,
    pub reference_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub profile: Profile,
    pub sim: SimConfig64,
    pub train: TrainConfig64,
    pub eval: EvalConfig,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Every key in echo order.
pub const KEYS: [&str; 40] = [
    "profile",
    "regime",
    "n_modes",
    "k_time",
    "l_noise",
    "horizon",
    "m1",
    "m2",
    "m3",
    "scheme",
    "sim_seed",
    "noise_r",
    "noise_eps",
    "batch_size",
    "epochs",
    "warmup_epochs",
    "lr_encoder",
    "lr_dynamics",
    "lr_decoder",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "beta_z",
    "beta_xi",
    "split_train",
    "split_val",
    "split_test",
    "init_encoder_logvar",
    "init_decoder_logvar",
    "hidden",
    "train_seed",
    "selection",
    "eval_samples",
    "eval_seed",
    "reference_samples",
    "reference_seed",
    "dataset",
    "checkpoint",
    "out",
];

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V, CliError> {
    value
        .parse()
        .map_err(|_| CliError::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl Config {
    pub fn defaults(profile: Profile, regime: Regime) -> Self {
        let (sim, train) = match profile {
            Profile::Desk => (SimConfig64::desk(regime), TrainConfig64::desk()),
            Profile::Paper => (SimConfig64::paper(regime), TrainConfig64::paper()),
        };
        Self {
            profile,
            sim,
            train,
            eval: EvalConfig {
                samples: 2000,
                seed: 0,
                reference_samples: 0,
                reference_seed: 1,
            },
            dataset: None,
            checkpoint: None,
            out: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::config(format!("line {}: unknown key `{key}`", i + 1)));
            }
            if let Some(first) = seen.insert(key.to_owned(), i + 1) {
                return Err(CliError::config(format!(
                    "line {}: `{key}` already set on line {first}",
                    i + 1
                )));
            }
            entries.push((i + 1, key.to_owned(), value.trim().to_owned()));
        }
        let lookup = |k: &str| entries.iter().find(|(_, key, _)| key == k).map(|(_, _, v)| v.as_str());
        let profile = match lookup("profile") {
            None | Some("paper") => Profile::Paper,
            Some("desk") => Profile::Desk,
            Some(other) => return Err(CliError::config(format!("unknown profile `{other}`"))),
        };
        let regime = match lookup("regime") {
            None => Regime::DirichletHeat,
            Some(tag) => Regime::from_tag(tag).map_err(|e| CliError::config(e.to_string()))?,
        };
        let mut cfg = Self::defaults(profile, regime);
        for (line, key, value) in &entries {
            cfg.set(key, value)
                .map_err(|e| CliError::config(format!("line {line}: {e}")))?;
        }
        cfg.sim
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let (s, t, e) = (&mut self.sim, &mut self.train, &mut self.eval);
        match key {
            "profile" | "regime" => {}
            "n_modes" => s.n_modes = parse_value(key, v)?,
            "k_time" => s.k_time = parse_value(key, v)?,
            "l_noise" => s.l_noise = parse_value(key, v)?,
            "horizon" => s.horizon = parse_value(key, v)?,
            "m1" => s.m1 = parse_value(key, v)?,
            "m2" => s.m2 = parse_value(key, v)?,
            "m3" => s.m3 = parse_value(key, v)?,
            "scheme" => s.scheme = Scheme::from_name(v).map_err(|e| CliError::config(e.to_string()))?,
            "sim_seed" => s.master_seed = parse_value(key, v)?,
            "noise_r" => s.noise_r = parse_value(key, v)?,
            "noise_eps" => s.noise_eps = parse_value(key, v)?,
            "batch_size" => t.batch_size = parse_value(key, v)?,
            "epochs" => t.epochs = parse_value(key, v)?,
            "warmup_epochs" => t.warmup_epochs = parse_value(key, v)?,
            "lr_encoder" => t.lr_encoder = parse_value(key, v)?,
            "lr_dynamics" => t.lr_dynamics = parse_value(key, v)?,
            "lr_decoder" => t.lr_decoder = parse_value(key, v)?,
            "weight_decay" => t.weight_decay = parse_value(key, v)?,
            "adam_beta1" => t.adam_beta1 = parse_value(key, v)?,
            "adam_beta2" => t.adam_beta2 = parse_value(key, v)?,
            "adam_eps" => t.adam_eps = parse_value(key, v)?,
            "beta_z" => t.beta_z = parse_value(key, v)?,
            "beta_xi" => t.beta_xi = parse_value(key, v)?,
            "split_train" => t.split_train = parse_value(key, v)?,
            "split_val" => t.split_val = parse_value(key, v)?,
            "split_test" => t.split_test = parse_value(key, v)?,
            "init_encoder_logvar" => t.init_encoder_logvar = parse_value(key, v)?,
            "init_decoder_logvar" => t.init_decoder_logvar = parse_value(key, v)?,
            "hidden" => t.hidden = parse_value(key, v)?,
            "train_seed" => t.seed = parse_value(key, v)?,
            "selection" => t.selection = Selection::from_name(v).map_err(|e| CliError::config(e.to_string()))?,
            "eval_samples" => e.samples = parse_value(key, v)?,
            "eval_seed" => e.seed = parse_value(key, v)?,
            "reference_samples" => e.reference_samples = parse_value(key, v)?,
            "reference_seed" => e.reference_seed = parse_value(key, v)?,
            "dataset" => self.dataset = parse_path(v),
            "checkpoint" => self.checkpoint = parse_path(v),
            "out" => self.out = parse_path(v),
            other => return Err(CliError::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn value(&self, key: &str) -> String {
        let (s, t, e) = (&self.sim, &self.train, &self.eval);
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "profile" => self.profile.name().into(),
            "regime" => s.regime.tag().into(),
            "n_modes" => s.n_modes.to_string(),
            "k_time" => s.k_time.to_string(),
            "l_noise" => s.l_noise.to_string(),
            "horizon" => s.horizon.to_string(),
            "m1" => s.m1.to_string(),
            "m2" => s.m2.to_string(),
            "m3" => s.m3.to_string(),
            "scheme" => s.scheme.name().into(),
            "sim_seed" => s.master_seed.to_string(),
            "noise_r" => s.noise_r.to_string(),
            "noise_eps" => s.noise_eps.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "warmup_epochs" => t.warmup_epochs.to_string(),
            "lr_encoder" => t.lr_encoder.to_string(),
            "lr_dynamics" => t.lr_dynamics.to_string(),
            "lr_decoder" => t.lr_decoder.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "adam_beta1" => t.adam_beta1.to_string(),
            "adam_beta2" => t.adam_beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "beta_z" => t.beta_z.to_string(),
            "beta_xi" => t.beta_xi.to_string(),
            "split_train" => t.split_train.to_string(),
            "split_val" => t.split_val.to_string(),
            "split_test" => t.split_test.to_string(),
            "init_encoder_logvar" => t.init_encoder_logvar.to_string(),
            "init_decoder_logvar" => t.init_decoder_logvar.to_string(),
            "hidden" => t.hidden.to_string(),
            "train_seed" => t.seed.to_string(),
            "selection" => t.selection.name().into(),
            "eval_samples" => e.samples.to_string(),
            "eval_seed" => e.seed.to_string(),
            "reference_samples" => e.reference_samples.to_string(),
            "reference_seed" => e.reference_seed.to_string(),
            "dataset" => path(&self.dataset),
            "checkpoint" => path(&self.checkpoint),
            "out" => path(&self.out),
            _ => unreachable!("every key in KEYS has a value"),
        }
    }

    /// Fully resolved configuration, one `key = value` per line.
    pub fn echo(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.value(k)))
            .collect()
    }
}
