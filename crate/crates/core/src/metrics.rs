//! Trajectory errors and second-order law diagnostics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{QuadratureRule, Regime, SpatialBasis, SpatialGrid};

fn check_same_shape<T>(op: &'static str, a: &ArrayView2<'_, T>, b: &ArrayView2<'_, T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.dim(),
            rhs: b.dim(),
        });
    }
    if a.nrows() < 2 {
        return Err(Error::invalid(format!("{op} needs at least one time after t0")));
    }
    Ok(())
}

/// `‖pred − truth‖₂ / ‖truth‖₂` over times `1..=M2` (the initial slice is excluded).
pub fn rel_l2<T: Scalar>(pred: ArrayView2<'_, T>, truth: ArrayView2<'_, T>) -> Result<T> {
    check_same_shape("rel_l2", &pred, &truth)?;
    let (p, t) = (pred.slice(s![1.., ..]), truth.slice(s![1.., ..]));
    let num: T = p.iter().zip(t.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let den: T = t.iter().map(|&b| b * b).sum();
    if den == T::zero() {
        return Err(Error::Domain("relative error against a zero field".into()));
    }
    Ok((num / den).sqrt())
}

/// Root mean squared error over times `1..=M2`.
pub fn rmse<T: Scalar>(pred: ArrayView2<'_, T>, truth: ArrayView2<'_, T>) -> Result<T> {
    check_same_shape("rmse", &pred, &truth)?;
    let (p, t) = (pred.slice(s![1.., ..]), truth.slice(s![1.., ..]));
    let sq: T = p.iter().zip(t.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
    Ok((sq / T::from_usize_lossy(p.len())).sqrt())
}

/// Sample mean and standard deviation (denominator `n − 1`; zero for one value).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd<T> {
    pub mean: T,
    pub std: T,
    pub count: usize,
}

impl<T: Scalar> MeanStd<T> {
    pub fn from_values(values: &[T]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("no values to aggregate"));
        }
        let n = T::from_usize_lossy(values.len());
        let mean = values.iter().copied().sum::<T>() / n;
        let std = if values.len() > 1 {
            let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
            (ss / (n - T::one())).sqrt()
        } else {
            T::zero()
        };
        Ok(Self {
            mean,
            std,
            count: values.len(),
        })
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> T {
        self.std / T::from_usize_lossy(self.count).sqrt()
    }
}

/// Per-mode Monte-Carlo mean of `c_n²` from modal coefficients `S × N`.
pub fn energy_spectrum_from_coeffs<T: Scalar>(coeffs: ArrayView2<'_, T>) -> Result<Vec<T>> {
    if coeffs.nrows() == 0 {
        return Err(Error::invalid("empty sample set"));
    }
    Ok(coeffs
        .axis_iter(Axis(1))
        .map(|col| col.iter().map(|&c| c * c).sum::<T>() / T::from_usize_lossy(col.len()))
        .collect())
}

/// Energy spectrum of fields sampled on the nodes of `rule`, one row per sample.
pub fn energy_spectrum<T: Scalar>(
    samples: ArrayView2<'_, T>,
    basis: &SpatialBasis<T>,
    rule: &QuadratureRule<T>,
) -> Result<Vec<T>> {
    if samples.nrows() == 0 {
        return Err(Error::invalid("empty sample set"));
    }
    let mut coeffs = Array2::zeros((samples.nrows(), basis.n_modes()));
    for (i, row) in samples.axis_iter(Axis(0)).enumerate() {
        let c = basis.project(rule, &row.to_vec())?;
        coeffs.row_mut(i).assign(&ndarray::ArrayView1::from(&c));
    }
    energy_spectrum_from_coeffs(coeffs.view())
}

/// Eigenvalues (ascending is not guaranteed) and eigenvectors as columns
/// of a symmetric matrix.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch {
            op: "symmetric_eigen",
            lhs: a.dim(),
            rhs: (n, n),
        });
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let eig = m.symmetric_eigen();
    let vecs = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, j)]);
    Ok((eig.eigenvalues.iter().copied().collect(), vecs))
}

/// Largest condition number accepted by [`LeastSquaresProjector`].
pub const MAX_CONDITION: f64 = 1e8;

/// Weighted least-squares fit of the first `N` basis functions to fields
/// sampled on an observation grid.
#[derive(Clone, Debug)]
pub struct LeastSquaresProjector {
    /// `N × M3`, maps grid values to coefficients.
    solve: Array2<f64>,
    pub condition: f64,
}

impl LeastSquaresProjector {
    pub fn new<T: Scalar>(basis: &SpatialBasis<T>, grid: &SpatialGrid<T>) -> Result<Self> {
        let design = basis.design(&grid.points).mapv(|v| v.to_f64_lossy());
        let w: Vec<f64> = grid.weights.iter().map(|v| v.to_f64_lossy()).collect();
        let weighted = &design * &ndarray::ArrayView1::from(&w);
        let normal = weighted.dot(&design.t());
        let (eig, vecs) = symmetric_eigen(&normal)?;
        let max = eig.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, &v| m.min(v.abs()));
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::Numerical(format!(
                "least-squares projection is ill-conditioned (condition number {condition:.3e})"
            )));
        }
        let inv = vecs.dot(&Array2::from_diag(&ndarray::Array1::from_iter(eig.iter().map(|e| 1.0 / e)))).dot(&vecs.t());
        Ok(Self {
            solve: inv.dot(&weighted),
            condition,
        })
    }

    /// Coefficients of each row of `fields` (`S × M3` → `S × N`).
    pub fn project<T: Scalar>(&self, fields: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if fields.ncols() != self.solve.ncols() {
            return Err(Error::ShapeMismatch {
                op: "least-squares projection",
                lhs: fields.dim(),
                rhs: (fields.nrows(), self.solve.ncols()),
            });
        }
        let f = fields.mapv(|v| v.to_f64_lossy());
        Ok(f.dot(&self.solve.t()).mapv(T::lit))
    }
}

/// Normalizer of the spatial average: `π` for Regime B, the total
/// quadrature weight (the γ-mass of the observation window) for Regime A.
pub fn spatial_normalizer<T: Scalar>(regime: Regime, grid: &SpatialGrid<T>) -> T {
    match regime {
        Regime::OrnsteinUhlenbeck => grid.weights.iter().copied().sum(),
        Regime::DirichletHeat => T::PI(),
    }
}

/// Spatially averaged pointwise variance per time from samples `S × (M2 + 1) × M3`.
pub fn spatial_variance_curve<T: Scalar>(
    samples: ArrayView3<'_, T>,
    regime: Regime,
    grid: &SpatialGrid<T>,
) -> Result<Vec<T>> {
    let (count, n_times, m3) = samples.dim();
    if count < 2 {
        return Err(Error::invalid("variance needs at least 2 samples"));
    }
    if m3 != grid.len() {
        return Err(Error::LengthMismatch {
            what: "grid points",
            expected: m3,
            actual: grid.len(),
        });
    }
    let norm = spatial_normalizer(regime, grid);
    let n = T::from_usize_lossy(count);
    let mut curve = Vec::with_capacity(n_times);
    for t in 0..n_times {
        let slice = samples.slice(s![.., t, ..]);
        let mean = slice.sum_axis(Axis(0)) / n;
        let mut acc = T::zero();
        for (j, &w) in grid.weights.iter().enumerate() {
            let ss: T = slice.column(j).iter().map(|&v| (v - mean[j]) * (v - mean[j])).sum();
            acc += w * ss / (n - T::one());
        }
        curve.push(acc / norm);
    }
    Ok(curve)
}

/// Streaming per-time, per-location sums for variance curves over sample
/// sets too large to hold at once.
#[derive(Clone, Debug)]
pub struct VarianceAccumulator {
    count: usize,
    sum: Array2<f64>,
    sum_sq: Array2<f64>,
    shift: Option<Array2<f64>>,
}

impl VarianceAccumulator {
    pub fn new(n_times: usize, m3: usize) -> Self {
        Self {
            count: 0,
            sum: Array2::zeros((n_times, m3)),
            sum_sq: Array2::zeros((n_times, m3)),
            shift: None,
        }
    }

    pub fn push<T: Scalar>(&mut self, field: ArrayView2<'_, T>) -> Result<()> {
        if field.dim() != self.sum.dim() {
            return Err(Error::ShapeMismatch {
                op: "variance accumulator",
                lhs: field.dim(),
                rhs: self.sum.dim(),
            });
        }
        let f = field.mapv(|v| v.to_f64_lossy());
        // shifting by the first sample keeps the sums well conditioned
        let shift = self.shift.get_or_insert_with(|| f.clone());
        let d = &f - &*shift;
        self.sum += &d;
        self.sum_sq += &(&d * &d);
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Pointwise sample variances `(M2 + 1) × M3`.
    pub fn variances(&self) -> Result<Array2<f64>> {
        if self.count < 2 {
            return Err(Error::invalid("variance needs at least 2 samples"));
        }
        let n = self.count as f64;
        Ok((&self.sum_sq - &(&self.sum * &self.sum / n)) / (n - 1.0))
    }

    pub fn curve<T: Scalar>(&self, regime: Regime, grid: &SpatialGrid<T>) -> Result<Vec<f64>> {
        let var = self.variances()?;
        let w: Vec<f64> = grid.weights.iter().map(|v| v.to_f64_lossy()).collect();
        let norm = spatial_normalizer(regime, grid).to_f64_lossy();
        Ok(var
            .axis_iter(Axis(0))
            .map(|row| row.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / norm)
            .collect())
    }
}

/// Time-averaged relative deviation `Σ_t |model − ref| / Σ_t ref` over
/// `t ≥ 1` (the deterministic initial time is skipped).
pub fn curve_relative_error(model: &[f64], reference: &[f64]) -> Result<f64> {
    if model.len() != reference.len() {
        return Err(Error::LengthMismatch {
            what: "variance curve",
            expected: reference.len(),
            actual: model.len(),
        });
    }
    let num: f64 = model.iter().zip(reference).skip(1).map(|(m, r)| (m - r).abs()).sum();
    let den: f64 = reference.iter().skip(1).map(|r| r.abs()).sum();
    if den == 0.0 {
        return Err(Error::Domain("reference curve is identically zero".into()));
    }
    Ok(num / den)
}

/// Evaluation results of a model against a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rel_l2: MeanStd<f64>,
    pub rmse: MeanStd<f64>,
    /// Reconstructions with `ξ = 0`, for comparison.
    pub rel_l2_mean_only: MeanStd<f64>,
    /// Fraction of test trajectories where the chaos coordinates lower the error.
    pub chaos_win_rate: f64,
    pub times: Vec<f64>,
    pub variance_reference: Vec<f64>,
    pub variance_model: Vec<f64>,
    pub variance_rel_error: f64,
    pub spectrum_reference: Vec<f64>,
    pub spectrum_model: Vec<f64>,
    pub lambda_true: Vec<f64>,
    pub lambda_learned: Vec<f64>,
    pub q_true: Vec<f64>,
    pub q_learned: Vec<f64>,
    /// γ-mass of the observation window (1 for Regime B).
    pub window_mass: f64,
}

pub const VARIANCE_HEADER: [&str; 3] = ["time", "reference", "model"];
pub const SPECTRUM_HEADER: [&str; 3] = ["mode", "reference", "model"];
pub const LAMBDA_HEADER: [&str; 3] = ["mode", "true", "learned"];
pub const Q_HEADER: [&str; 3] = ["component", "true", "learned"];
pub const METRICS_HEADER: [&str; 3] = ["metric", "mean", "std"];

/// Writes a CSV with a one-line header. Cells are written with full
/// round-trip precision.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::LengthMismatch {
                what: "CSV row",
                expected: header.len(),
                actual: row.len(),
            });
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Header and rows of a CSV written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::format("header", "empty CSV"))?
        .split(',')
        .map(str::to_owned)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect();
    Ok((header, rows))
}

fn cell(v: f64) -> String {
    format!("{v:e}")
}

/// Reference and model columns over an index column; a missing model entry is left empty.
fn paired_rows(index: &[String], reference: &[f64], model: &[f64]) -> Vec<Vec<String>> {
    index
        .iter()
        .enumerate()
        .map(|(i, idx)| {
            vec![
                idx.clone(),
                reference.get(i).map(|&v| cell(v)).unwrap_or_default(),
                model.get(i).map(|&v| cell(v)).unwrap_or_default(),
            ]
        })
        .collect()
}

pub fn write_variance_csv(path: &Path, times: &[f64], reference: &[f64], model: &[f64]) -> Result<()> {
    let idx: Vec<String> = times.iter().map(|&t| cell(t)).collect();
    write_csv(path, &VARIANCE_HEADER, &paired_rows(&idx, reference, model))
}

pub fn write_spectrum_csv(path: &Path, reference: &[f64], model: &[f64]) -> Result<()> {
    let idx: Vec<String> = (1..=reference.len().max(model.len())).map(|n| n.to_string()).collect();
    write_csv(path, &SPECTRUM_HEADER, &paired_rows(&idx, reference, model))
}

pub fn write_lambda_csv(path: &Path, truth: &[f64], learned: &[f64]) -> Result<()> {
    let idx: Vec<String> = (1..=truth.len().max(learned.len())).map(|n| n.to_string()).collect();
    write_csv(path, &LAMBDA_HEADER, &paired_rows(&idx, truth, learned))
}

pub fn write_q_csv(path: &Path, truth: &[f64], learned: &[f64]) -> Result<()> {
    let idx: Vec<String> = (1..=truth.len().max(learned.len())).map(|n| n.to_string()).collect();
    write_csv(path, &Q_HEADER, &paired_rows(&idx, truth, learned))
}

pub fn write_metrics_csv(path: &Path, metrics: &[(&str, MeanStd<f64>)]) -> Result<()> {
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|(name, m)| vec![(*name).to_owned(), cell(m.mean), cell(m.std)])
        .collect();
    write_csv(path, &METRICS_HEADER, &rows)
}

impl EvalReport {
    /// Writes `metrics.csv`, `variance_curve.csv`, `spectrum.csv`,
    /// `lambda.csv` and `q.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let scalar = |v: f64| MeanStd {
            mean: v,
            std: 0.0,
            count: 1,
        };
        write_metrics_csv(
            &dir.join("metrics.csv"),
            &[
                ("rel_l2", self.rel_l2),
                ("rmse", self.rmse),
                ("rel_l2_mean_only", self.rel_l2_mean_only),
                ("chaos_win_rate", scalar(self.chaos_win_rate)),
                ("variance_rel_error", scalar(self.variance_rel_error)),
                ("window_mass", scalar(self.window_mass)),
            ],
        )?;
        write_variance_csv(
            &dir.join("variance_curve.csv"),
            &self.times,
            &self.variance_reference,
            &self.variance_model,
        )?;
        write_spectrum_csv(&dir.join("spectrum.csv"), &self.spectrum_reference, &self.spectrum_model)?;
        write_lambda_csv(&dir.join("lambda.csv"), &self.lambda_true, &self.lambda_learned)?;
        write_q_csv(&dir.join("q.csv"), &self.q_true, &self.q_learned)
    }

    /// Short human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rel L2          {:.4e} ± {:.4e}", self.rel_l2.mean, self.rel_l2.std);
        let _ = writeln!(s, "RMSE            {:.4e} ± {:.4e}", self.rmse.mean, self.rmse.std);
        let _ = writeln!(s, "rel L2 (ξ = 0)  {:.4e} ± {:.4e}", self.rel_l2_mean_only.mean, self.rel_l2_mean_only.std);
        let _ = writeln!(s, "chaos win rate  {:.3}", self.chaos_win_rate);
        let _ = writeln!(s, "variance curve  {:.4e} time-averaged relative error", self.variance_rel_error);
        let _ = writeln!(s, "λ learned       {:?}", self.lambda_learned);
        let _ = write!(s, "q learned       {:?}", self.q_learned);
        s
    }
}
