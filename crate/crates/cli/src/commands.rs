//! Command implementations shared by the binary and the tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Axis};
use wiener_chaos::io::{load_dataset, save_dataset, sidecar_path, write_sidecar};
use wiener_chaos::metrics::{
    curve_relative_error, energy_spectrum_from_coeffs, read_csv, rel_l2, rmse, spatial_normalizer,
    spatial_variance_curve, write_csv, write_metrics_csv, EvalReport, LeastSquaresProjector, MeanStd,
    VarianceAccumulator,
};
use wiener_chaos::simulator::{generate_dataset, ou_variance, ModalSimulator};
use wiener_chaos::vlm::{
    conditional_reconstruction, mean_initial_state, unconditional_coefficients, Checkpoint, ModelSpec, Split,
};
use wiener_chaos::{Dataset64, ModelParams64, Regime, SpatialGrid64, Trainer};

use crate::config::Config;
use crate::error::{CliError, Context};

/// Command-line overrides of configured paths.
#[derive(Clone, Debug, Default)]
pub struct Paths {
    pub out: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Paths {
    fn out(&self, cfg: &Config) -> PathBuf {
        self.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."))
    }

    fn dataset(&self, cfg: &Config, out: &Path) -> PathBuf {
        self.dataset
            .clone()
            .or_else(|| cfg.dataset.clone())
            .unwrap_or_else(|| out.join("dataset.bin"))
    }

    fn checkpoint(&self, cfg: &Config) -> Option<PathBuf> {
        self.checkpoint.clone().or_else(|| cfg.checkpoint.clone())
    }
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

/// Writes `resolved.cfg` with the paths actually used.
fn write_resolved(cfg: &Config, out: &Path, dataset: &Path, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let mut resolved = cfg.clone();
    resolved.out = Some(out.to_path_buf());
    resolved.dataset = Some(dataset.to_path_buf());
    resolved.checkpoint = checkpoint.map(Path::to_path_buf);
    let path = out.join("resolved.cfg");
    fs::write(&path, resolved.echo()).map_err(|e| CliError::io(&path, e))
}

fn load(path: &Path) -> Result<Dataset64, CliError> {
    if !path.exists() {
        return Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset not found"),
        ));
    }
    load_dataset(path).context(format!("reading {}", path.display()))
}

fn mismatch(field: &str, dataset: impl std::fmt::Display, config: impl std::fmt::Display) -> CliError {
    CliError::Incompatible(format!("dataset has {field} = {dataset} but the config has {config}"))
}

/// Checks that a dataset header matches the simulation settings of `cfg`.
pub fn check_dataset(cfg: &Config, ds: &Dataset64) -> Result<(), CliError> {
    let s = &cfg.sim;
    if ds.regime != s.regime {
        return Err(mismatch("regime", ds.regime.tag(), s.regime.tag()));
    }
    let counts = [
        ("n_modes", ds.n_modes, s.n_modes),
        ("k_time", ds.k_time, s.k_time),
        ("l_noise", ds.l_noise, s.l_noise),
        ("m1", ds.n_trajectories(), s.m1),
        ("m2", ds.n_times() - 1, s.m2),
        ("m3", ds.n_space(), s.m3),
    ];
    for (field, have, want) in counts {
        if have != want {
            return Err(mismatch(field, have, want));
        }
    }
    if (ds.horizon() - s.horizon).abs() > 1e-12 * s.horizon {
        return Err(mismatch("horizon", ds.horizon(), s.horizon));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SimulateOutcome {
    pub dataset: PathBuf,
    /// Per mode: empirical `Var c_n(T)` over all trajectories and the exact OU value.
    pub terminal_variance: Vec<(f64, f64)>,
}

pub fn simulate(cfg: &Config, paths: &Paths, log: &mut dyn Write) -> Result<SimulateOutcome, CliError> {
    let out = paths.out(cfg);
    let dataset = paths.dataset(cfg, &out);
    create_out(&out)?;
    let ds = generate_dataset(&cfg.sim).context("simulating")?;
    if let Some(parent) = dataset.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out(parent)?;
    }
    save_dataset(&dataset, &ds).context(format!("writing {}", dataset.display()))?;
    write_sidecar(&sidecar_path(&dataset), &cfg.sim).context("writing sidecar")?;
    write_resolved(cfg, &out, &dataset, None)?;

    let sim = ModalSimulator::new(&cfg.sim).context("simulator")?;
    let lambdas = cfg.sim.basis().context("basis")?.eigenvalues();
    let forcing = cfg.sim.mode_forcing().context("noise spectrum")?;
    let mut sum = vec![0.0; cfg.sim.n_modes];
    let mut sum_sq = vec![0.0; cfg.sim.n_modes];
    for m in 0..cfg.sim.m1 {
        let c = sim.trajectory(m);
        for (n, &v) in c.row(cfg.sim.m2).iter().enumerate() {
            sum[n] += v;
            sum_sq[n] += v * v;
        }
    }
    let count = cfg.sim.m1 as f64;
    let terminal_variance: Vec<(f64, f64)> = (0..cfg.sim.n_modes)
        .map(|n| {
            let mean = sum[n] / count;
            let var = if cfg.sim.m1 > 1 { (sum_sq[n] - count * mean * mean) / (count - 1.0) } else { 0.0 };
            (var, ou_variance(lambdas[n], forcing[n], cfg.sim.horizon))
        })
        .collect();

    let _ = writeln!(
        log,
        "wrote {} ({} trajectories, {} times, {} points)",
        dataset.display(),
        ds.n_trajectories(),
        ds.n_times(),
        ds.n_space()
    );
    let _ = writeln!(log, "mode  Var c_n(T) empirical  closed form");
    for (n, (emp, exact)) in terminal_variance.iter().enumerate() {
        let _ = writeln!(log, "{:>4}  {:>20.6e}  {:>11.6e}", n + 1, emp, exact);
    }
    Ok(SimulateOutcome {
        dataset,
        terminal_variance,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub epochs_run: usize,
    pub finished: bool,
    pub best_epoch: usize,
    pub lambdas: Vec<f64>,
    pub qs: Vec<f64>,
}

pub const TRAIN_LOG: &str = "train_log.csv";

fn write_train_log(path: &Path, trainer: &Trainer<f64>) -> Result<(), CliError> {
    let layout = trainer.spec.layout;
    let mut header = vec!["epoch".to_owned(), "train_elbo".into(), "val_elbo".into()];
    header.extend((1..=layout.n_modes).map(|n| format!("lambda_{n}")));
    header.extend((1..=layout.l_noise).map(|l| format!("q_{l}")));
    let rows: Vec<Vec<String>> = trainer
        .history
        .iter()
        .map(|h| {
            let mut row = vec![h.epoch.to_string(), h.train_elbo.to_string(), h.val_elbo.to_string()];
            row.extend(h.lambdas.iter().chain(&h.qs).map(f64::to_string));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(path, &header, &rows).context(format!("writing {}", path.display()))
}

/// Trains (or resumes) and writes `checkpoint.bin` and `train_log.csv`.
/// `stop_after` bounds the number of epochs run by this call.
pub fn train(
    cfg: &Config,
    paths: &Paths,
    stop_after: Option<usize>,
    log: &mut dyn Write,
) -> Result<TrainOutcome, CliError> {
    if stop_after == Some(0) {
        return Err(CliError::Usage("--stop-after must be positive".into()));
    }
    cfg.train.validate().map_err(|e| CliError::config(e.to_string()))?;
    let out = paths.out(cfg);
    let dataset_path = paths.dataset(cfg, &out);
    let ds = load(&dataset_path)?;
    check_dataset(cfg, &ds)?;

    let resume_from = paths.checkpoint(cfg);
    let mut trainer = match &resume_from {
        Some(path) => {
            let ck = Checkpoint::<f64>::load(path).context(format!("reading {}", path.display()))?;
            if ck.config != cfg.train {
                return Err(CliError::Incompatible(format!(
                    "training settings in {} differ from the config",
                    path.display()
                )));
            }
            Trainer::resume(&ds, ck).context("resuming")?
        }
        None => Trainer::new(&ds, cfg.train.clone()).context("initializing")?,
    };
    create_out(&out)?;
    write_resolved(cfg, &out, &dataset_path, resume_from.as_deref())?;

    let budget = stop_after.unwrap_or(usize::MAX);
    let mut ran = 0;
    while !trainer.is_finished() && ran < budget {
        let h = trainer.run_epoch().context("training")?;
        ran += 1;
        let _ = writeln!(
            log,
            "epoch {:>5}  train_elbo {:>12.4}  val_elbo {:>12.4}  lambda {:?}",
            h.epoch,
            h.train_elbo,
            h.val_elbo,
            h.lambdas.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }

    let mut ck = trainer.checkpoint();
    let best_model = trainer.best_model().context("selecting the best epoch")?;
    let best = ck.best.as_mut().expect("at least one epoch ran");
    best.params = best_model;
    let best_epoch = best.epoch;
    let (lambdas, qs) = (best.params.lambdas(), best.params.qs());
    let checkpoint = out.join("checkpoint.bin");
    ck.save(&checkpoint).context(format!("writing {}", checkpoint.display()))?;
    write_train_log(&out.join(TRAIN_LOG), &trainer)?;
    let _ = writeln!(log, "best epoch {best_epoch}; wrote {}", checkpoint.display());
    Ok(TrainOutcome {
        checkpoint,
        epochs_run: ran,
        finished: trainer.is_finished(),
        best_epoch,
        lambdas,
        qs,
    })
}

/// Best parameters of a checkpoint, with the unconditional initial state.
pub fn best_params(ck: &Checkpoint<f64>, ds: &Dataset64) -> Result<ModelParams64, CliError> {
    let best = ck
        .best
        .as_ref()
        .ok_or_else(|| CliError::Incompatible("checkpoint holds no trained epoch".into()))?;
    let mut params = best.params.clone();
    if params.z0_mean.is_none() {
        let split = Split::new(ds.n_trajectories(), &ck.config).context("split")?;
        let x = flatten(ds, &split.train);
        params.z0_mean = Some(mean_initial_state(&ck.spec, &params, x.view()).context("initial state")?);
    }
    Ok(params)
}

fn flatten(ds: &Dataset64, indices: &[usize]) -> Array2<f64> {
    let width = ds.n_times() * ds.n_space();
    let mut x = Array2::zeros((indices.len(), width));
    for (r, &i) in indices.iter().enumerate() {
        x.row_mut(r)
            .assign(&ds.trajectory(i).to_shape(width).expect("contiguous trajectory"));
    }
    x
}

/// Per test trajectory errors of conditional reconstructions.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryErrors {
    pub index: usize,
    pub rel_l2: f64,
    pub rel_l2_mean_only: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub trajectories: Vec<TrajectoryErrors>,
    pub reference_count: usize,
}

fn spectrum_at_terminal(
    projector: &LeastSquaresProjector,
    terminal_fields: &Array2<f64>,
) -> Result<Vec<f64>, CliError> {
    let coeffs = projector.project(terminal_fields.view()).context("projecting fields")?;
    energy_spectrum_from_coeffs(coeffs.view()).context("spectrum")
}

pub fn evaluate(cfg: &Config, paths: &Paths, log: &mut dyn Write) -> Result<EvalOutcome, CliError> {
    let out = paths.out(cfg);
    let dataset_path = paths.dataset(cfg, &out);
    let ck_path = paths.checkpoint(cfg).unwrap_or_else(|| out.join("checkpoint.bin"));
    let ds = load(&dataset_path)?;
    check_dataset(cfg, &ds)?;
    let ck = Checkpoint::<f64>::load(&ck_path).context(format!("reading {}", ck_path.display()))?;
    let spec = ModelSpec::from_dataset(&ds, ck.config.hidden).context("model shape")?;
    if spec != ck.spec {
        return Err(CliError::Incompatible(format!(
            "{} was trained on a differently shaped dataset",
            ck_path.display()
        )));
    }
    let params = best_params(&ck, &ds)?;
    let split = Split::new(ds.n_trajectories(), &ck.config).context("split")?;
    if split.test.is_empty() {
        return Err(CliError::Incompatible("the test split is empty".into()));
    }

    let mut trajectories = Vec::with_capacity(split.test.len());
    for &i in &split.test {
        let obs = ds.trajectory(i);
        let full = conditional_reconstruction(&spec, &params, obs, true).context("reconstruction")?;
        let mean_only = conditional_reconstruction(&spec, &params, obs, false).context("reconstruction")?;
        trajectories.push(TrajectoryErrors {
            index: i,
            rel_l2: rel_l2(full.view(), obs).context("relative error")?,
            rel_l2_mean_only: rel_l2(mean_only.view(), obs).context("relative error")?,
            rmse: rmse(full.view(), obs).context("rmse")?,
        });
    }
    let stat = |f: fn(&TrajectoryErrors) -> f64| {
        MeanStd::from_values(&trajectories.iter().map(f).collect::<Vec<_>>()).context("statistics")
    };
    let wins = trajectories.iter().filter(|t| t.rel_l2 < t.rel_l2_mean_only).count();

    let grid: SpatialGrid64 = ds.grid().context("grid")?;
    let basis = spec.basis();
    let design = basis.design(&spec.space);
    let projector = LeastSquaresProjector::new(&basis, &grid).context("projection")?;
    let last = spec.n_times() - 1;

    let samples = cfg.eval.samples.max(2);
    let coeffs = unconditional_coefficients(&spec, &params, samples, cfg.eval.seed).context("generation")?;
    let mut model_acc = VarianceAccumulator::new(spec.n_times(), spec.n_space());
    for c in coeffs.axis_iter(Axis(0)) {
        model_acc.push(c.dot(&design).view()).context("variance")?;
    }
    let variance_model = model_acc.curve(spec.regime, &grid).context("variance")?;
    let spectrum_model =
        energy_spectrum_from_coeffs(coeffs.slice(s![.., last, ..])).context("spectrum")?;

    let (variance_reference, terminal, reference_count) = if cfg.eval.reference_samples > 0 {
        let mut sim_cfg = cfg.sim.clone();
        sim_cfg.master_seed = cfg.eval.reference_seed;
        let sim = ModalSimulator::new(&sim_cfg).context("simulator")?;
        let count = cfg.eval.reference_samples.max(2);
        let mut acc = VarianceAccumulator::new(spec.n_times(), spec.n_space());
        let mut terminal = Array2::zeros((count, spec.n_space()));
        for m in 0..count {
            let field = sim.trajectory(m).dot(&design);
            acc.push(field.view()).context("variance")?;
            terminal.row_mut(m).assign(&field.row(last));
        }
        (acc.curve(spec.regime, &grid).context("variance")?, terminal, count)
    } else {
        let fields = ds.fields.select(Axis(0), &split.test);
        let curve = if split.test.len() >= 2 {
            spatial_variance_curve(fields.view(), spec.regime, &grid).context("variance")?
        } else {
            vec![0.0; spec.n_times()]
        };
        let terminal = fields.slice(s![.., last, ..]).to_owned();
        (curve, terminal, split.test.len())
    };
    let spectrum_reference = spectrum_at_terminal(&projector, &terminal)?;

    let noise = cfg.sim.noise().context("noise spectrum")?;
    let window_mass = match spec.regime {
        Regime::OrnsteinUhlenbeck => spatial_normalizer(spec.regime, &grid),
        Regime::DirichletHeat => 1.0,
    };
    let report = EvalReport {
        rel_l2: stat(|t| t.rel_l2)?,
        rmse: stat(|t| t.rmse)?,
        rel_l2_mean_only: stat(|t| t.rel_l2_mean_only)?,
        chaos_win_rate: wins as f64 / trajectories.len() as f64,
        times: spec.times.clone(),
        variance_rel_error: curve_relative_error(&variance_model, &variance_reference).context("variance curve")?,
        variance_reference,
        variance_model,
        spectrum_reference,
        spectrum_model,
        lambda_true: basis.eigenvalues(),
        lambda_learned: params.lambdas(),
        q_true: noise.amplitudes(),
        q_learned: params.qs(),
        window_mass,
    };

    create_out(&out)?;
    report.write(&out).context("writing the report")?;
    let rows: Vec<Vec<String>> = trajectories
        .iter()
        .map(|t| {
            vec![
                t.index.to_string(),
                t.rel_l2.to_string(),
                t.rel_l2_mean_only.to_string(),
                t.rmse.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("trajectories.csv"),
        &["trajectory", "rel_l2", "rel_l2_mean_only", "rmse"],
        &rows,
    )
    .context("writing trajectories.csv")?;
    write_resolved(cfg, &out, &dataset_path, Some(&ck_path))?;
    let _ = writeln!(log, "{}", report.summary());
    Ok(EvalOutcome {
        report,
        trajectories,
        reference_count,
    })
}

/// One training plus evaluation per seed under `<out>/seed_<s>/`, then
/// `aggregate.csv` with mean and std over seeds.
pub fn train_seeds(
    cfg: &Config,
    paths: &Paths,
    seeds: &[u64],
    log: &mut dyn Write,
) -> Result<Vec<(u64, EvalReport)>, CliError> {
    let out = paths.out(cfg);
    let dataset = paths.dataset(cfg, &out);
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.train.seed = seed;
        let run = Paths {
            out: Some(out.join(format!("seed_{seed}"))),
            dataset: Some(dataset.clone()),
            checkpoint: None,
        };
        let _ = writeln!(log, "seed {seed}");
        train(&c, &run, None, log)?;
        reports.push((seed, evaluate(&c, &run, log)?.report));
    }
    let metric = |f: &dyn Fn(&EvalReport) -> f64| {
        MeanStd::from_values(&reports.iter().map(|(_, r)| f(r)).collect::<Vec<_>>()).context("aggregate")
    };
    let mut rows = vec![
        ("rel_l2", metric(&|r| r.rel_l2.mean)?),
        ("rel_l2_mean_only", metric(&|r| r.rel_l2_mean_only.mean)?),
        ("rmse", metric(&|r| r.rmse.mean)?),
        ("chaos_win_rate", metric(&|r| r.chaos_win_rate)?),
        ("variance_rel_error", metric(&|r| r.variance_rel_error)?),
    ];
    let n_modes = reports.first().map_or(0, |(_, r)| r.lambda_learned.len());
    let names: Vec<String> = (1..=n_modes).map(|n| format!("lambda_{n}")).collect();
    for (n, name) in names.iter().enumerate() {
        rows.push((name.as_str(), metric(&|r| r.lambda_learned[n])?));
    }
    create_out(&out)?;
    write_metrics_csv(&out.join("aggregate.csv"), &rows).context("writing aggregate.csv")?;
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct DiagnoseOutcome {
    pub variance: Vec<f64>,
    pub spectrum: Vec<f64>,
}

/// Variance curve and terminal energy spectrum of a dataset.
pub fn diagnose(cfg: &Config, paths: &Paths, log: &mut dyn Write) -> Result<DiagnoseOutcome, CliError> {
    let out = paths.out(cfg);
    let dataset_path = paths.dataset(cfg, &out);
    let ds = load(&dataset_path)?;
    let grid = ds.grid().context("grid")?;
    let variance = if ds.n_trajectories() >= 2 {
        spatial_variance_curve(ds.fields.view(), ds.regime, &grid).context("variance")?
    } else {
        vec![0.0; ds.n_times()]
    };
    let basis = wiener_chaos::SpatialBasis64::new(ds.regime, ds.n_modes).context("basis")?;
    let projector = LeastSquaresProjector::new(&basis, &grid).context("projection")?;
    let terminal = ds.fields.slice(s![.., ds.n_times() - 1, ..]).to_owned();
    let spectrum = spectrum_at_terminal(&projector, &terminal)?;

    create_out(&out)?;
    let rows: Vec<Vec<String>> = ds
        .times
        .iter()
        .zip(&variance)
        .map(|(t, v)| vec![t.to_string(), v.to_string()])
        .collect();
    write_csv(&out.join("variance_curve.csv"), &["time", "variance"], &rows).context("writing variance_curve.csv")?;
    let rows: Vec<Vec<String>> = spectrum
        .iter()
        .enumerate()
        .map(|(n, e)| vec![(n + 1).to_string(), e.to_string()])
        .collect();
    write_csv(&out.join("spectrum.csv"), &["mode", "energy"], &rows).context("writing spectrum.csv")?;
    write_resolved(cfg, &out, &dataset_path, None)?;
    let _ = writeln!(
        log,
        "variance at T {:.6e}; spectrum {:?}",
        variance.last().copied().unwrap_or(0.0),
        spectrum
    );
    Ok(DiagnoseOutcome { variance, spectrum })
}

/// Reads back any CSV written by the commands.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    read_csv(path).context(format!("reading {}", path.display()))
}
