//! Marginal GEV parameters over the control space: per-cell MLEs are
//! interpolated by a linear trend `α + βᵀs` plus a zero-mean Gaussian
//! process, one surface per critical point and parameter (ξ, μ, ln σ).
//!
//! Inputs are rescaled to the unit cube using the design bounds and targets
//! are standardized before fitting. The intercept `α` is profiled out by
//! generalized least squares. The slopes `β` carry an isotropic Gaussian
//! prior whose variance is a hyperparameter, so they are integrated out of
//! the marginal likelihood; a trend the data do not support shrinks to zero
//! instead of absorbing noise when there are few designs per dimension.

use crate::data::{DesignMatrix, ExtremeDataset};
use crate::error::{MesmError, Result};
use crate::gev::{fit_gev_mle, GevFit, GevParams};
use crate::optim::{bfgs, BfgsOptions};
use crate::rng;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub const MIN_NUGGET: f64 = 1e-10;
const LN_SIGNAL_BOUNDS: (f64, f64) = (-13.815_510_557_964_274, 4.605_170_185_988_092); // [1e-6, 1e2]
const LN_LENGTH_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 6.907_755_278_982_137); // [1e-2, 1e3]
const LN_NUGGET_BOUNDS: (f64, f64) = (-23.025_850_929_940_457, 2.302_585_092_994_046); // [1e-10, 10]
const LN_TREND_BOUNDS: (f64, f64) = (-18.420_680_743_952_367, 6.907_755_278_982_137); // [1e-8, 1e3]

/// Kernel hyperparameters on the normalized scale (unit-cube inputs,
/// standardized targets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    /// Prior variance of each slope on the centered unit cube.
    pub trend_variance: f64,
    pub nugget: f64,
}

#[derive(Debug, Clone)]
pub struct SurfaceOptions {
    /// Total optimizer starts; the first is a fixed default, the rest are
    /// drawn log-uniformly inside the hyperparameter box.
    pub restarts: usize,
    pub fixed_nugget: Option<f64>,
    /// Known per-design noise variances (target units) added to the diagonal.
    pub noise: Option<Vec<f64>>,
    pub seed: u64,
    pub bfgs: BfgsOptions,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            fixed_nugget: None,
            noise: None,
            seed: 0,
            bfgs: BfgsOptions {
                max_iter: 500,
                gtol: 1e-6,
                ftol: 1e-8,
            },
        }
    }
}

/// Serializable content of a surface; everything else is rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRecord {
    pub targets: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Vec<f64>>,
    pub hyper: GpHyper,
    pub converged: bool,
}

#[derive(Debug, Clone)]
struct Solved {
    chol: Cholesky<f64, Dyn>,
    /// `K⁻¹ (y − intercept)`.
    alpha: DVector<f64>,
    intercept: f64,
    /// `1ᵀ K⁻¹ 1`.
    intercept_precision: f64,
    /// `K⁻¹ 1`.
    kinv_one: DVector<f64>,
    log_likelihood: f64,
    /// Centered unit-cube training inputs.
    x: Vec<Vec<f64>>,
}

/// One GP surface `y(s) = α + βᵀs + g(s)`.
#[derive(Debug, Clone)]
pub struct ParameterSurface {
    designs: Arc<DesignMatrix>,
    record: SurfaceRecord,
    center: f64,
    scale: f64,
    solved: Solved,
}

struct Problem<'a> {
    /// Centered unit-cube inputs, one row per design point.
    x: Vec<Vec<f64>>,
    /// Per-dimension squared differences, `sq[d][(a, b)]`.
    sq: Vec<DMatrix<f64>>,
    /// Gram matrix of the centered inputs.
    gram: DMatrix<f64>,
    y: DVector<f64>,
    noise: Option<DVector<f64>>,
    fixed_nugget: Option<f64>,
    _designs: &'a DesignMatrix,
}

/// Position in the unit cube, shifted so the cube is centered at the origin.
fn normalize(designs: &DesignMatrix, s: &[f64]) -> Vec<f64> {
    s.iter()
        .zip(designs.lower().iter().zip(designs.upper()))
        .map(|(v, (lo, hi))| (v - lo) / (hi - lo) - 0.5)
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_box(x: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let s = sigmoid(x);
    (lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s))
}

fn from_box(v: f64, (lo, hi): (f64, f64)) -> f64 {
    let s = ((v - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
    (s / (1.0 - s)).ln()
}

impl<'a> Problem<'a> {
    fn new(designs: &'a DesignMatrix, y: &[f64], noise: Option<&[f64]>, fixed_nugget: Option<f64>) -> Self {
        let n = designs.len();
        let d = designs.dim();
        let x: Vec<Vec<f64>> = designs.rows().iter().map(|r| normalize(designs, r)).collect();
        let sq = (0..d)
            .map(|k| DMatrix::from_fn(n, n, |a, b| (x[a][k] - x[b][k]).powi(2)))
            .collect();
        let gram = DMatrix::from_fn(n, n, |a, b| dot(&x[a], &x[b]));
        Self {
            x,
            sq,
            gram,
            y: DVector::from_column_slice(y),
            noise: noise.map(DVector::from_column_slice),
            fixed_nugget,
            _designs: designs,
        }
    }

    fn dim(&self) -> usize {
        self.sq.len()
    }

    fn correlation(&self, lengths: &[f64]) -> DMatrix<f64> {
        let n = self.y.len();
        let mut r = DMatrix::zeros(n, n);
        for (k, l) in lengths.iter().enumerate() {
            r -= &self.sq[k] * (0.5 / (l * l));
        }
        r.apply(|v| *v = v.exp());
        r
    }

    fn covariance(&self, h: &GpHyper, corr: &DMatrix<f64>) -> DMatrix<f64> {
        let mut k = corr * h.signal_variance + &self.gram * h.trend_variance;
        for i in 0..k.nrows() {
            k[(i, i)] += h.nugget;
            if let Some(noise) = &self.noise {
                k[(i, i)] += noise[i];
            }
        }
        k
    }

    fn solve(&self, h: &GpHyper) -> Result<(Solved, DMatrix<f64>)> {
        let corr = self.correlation(&h.length_scales);
        let k = self.covariance(h, &corr);
        let chol = Cholesky::new(k).ok_or_else(|| {
            MesmError::numerical(format!("GP covariance is not positive definite at {h:?}"))
        })?;
        let n_obs = self.y.len();
        let kinv_one = chol.solve(&DVector::from_element(n_obs, 1.0));
        let intercept_precision = kinv_one.sum();
        if !(intercept_precision > 0.0) {
            return Err(MesmError::numerical("intercept precision is not positive"));
        }
        let intercept = kinv_one.dot(&self.y) / intercept_precision;
        let resid = self.y.add_scalar(-intercept);
        let alpha = chol.solve(&resid);
        let n = self.y.len() as f64;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let log_likelihood = -0.5 * resid.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln();
        Ok((
            Solved {
                chol,
                alpha,
                intercept,
                intercept_precision,
                kinv_one,
                log_likelihood,
                x: self.x.clone(),
            },
            corr,
        ))
    }

    fn n_params(&self) -> usize {
        2 + self.dim() + usize::from(self.fixed_nugget.is_none())
    }

    fn unpack(&self, theta: &[f64]) -> (GpHyper, Vec<f64>) {
        let d = self.dim();
        let mut jac = Vec::with_capacity(theta.len());
        let (ls, j) = to_box(theta[0], LN_SIGNAL_BOUNDS);
        jac.push(j);
        let mut lengths = Vec::with_capacity(d);
        for &t in &theta[1..=d] {
            let (ll, j) = to_box(t, LN_LENGTH_BOUNDS);
            lengths.push(ll.exp());
            jac.push(j);
        }
        let (lt, j) = to_box(theta[d + 1], LN_TREND_BOUNDS);
        jac.push(j);
        let nugget = match self.fixed_nugget {
            Some(v) => v,
            None => {
                let (ln, j) = to_box(theta[d + 2], LN_NUGGET_BOUNDS);
                jac.push(j);
                ln.exp().max(MIN_NUGGET)
            }
        };
        (
            GpHyper {
                signal_variance: ls.exp(),
                length_scales: lengths,
                trend_variance: lt.exp(),
                nugget,
            },
            jac,
        )
    }

    fn pack(&self, h: &GpHyper) -> Vec<f64> {
        let mut theta = vec![from_box(h.signal_variance.ln(), LN_SIGNAL_BOUNDS)];
        theta.extend(h.length_scales.iter().map(|l| from_box(l.ln(), LN_LENGTH_BOUNDS)));
        theta.push(from_box(h.trend_variance.ln(), LN_TREND_BOUNDS));
        if self.fixed_nugget.is_none() {
            theta.push(from_box(h.nugget.ln(), LN_NUGGET_BOUNDS));
        }
        theta
    }

    /// Log marginal likelihood and its gradient with respect to the log
    /// hyperparameters (signal, lengths, trend, nugget).
    fn loglik_and_grad(&self, h: &GpHyper) -> Result<(f64, Vec<f64>)> {
        let (solved, corr) = self.solve(h)?;
        let kinv = solved.chol.inverse();
        let a = &solved.alpha;
        // ∂L/∂θ = ½ αᵀ ∂K α − ½ tr(K⁻¹ ∂K)
        let term = |dk: &DMatrix<f64>| -> f64 {
            let quad = (dk * a).dot(a);
            let trace = kinv.component_mul(dk).sum();
            0.5 * (quad - trace)
        };
        let ks = &corr * h.signal_variance;
        let mut grad = vec![term(&ks)];
        for (k, l) in h.length_scales.iter().enumerate() {
            let dk = ks.component_mul(&self.sq[k]) / (l * l);
            grad.push(term(&dk));
        }
        grad.push(term(&(&self.gram * h.trend_variance)));
        if self.fixed_nugget.is_none() {
            let quad = a.dot(a);
            let trace = kinv.trace();
            grad.push(0.5 * h.nugget * (quad - trace));
        }
        Ok((solved.log_likelihood, grad))
    }

    fn objective(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (h, jac) = self.unpack(theta);
        match self.loglik_and_grad(&h) {
            Ok((l, g)) => (-l, g.iter().zip(&jac).map(|(gi, ji)| -gi * ji).collect()),
            Err(_) => (f64::INFINITY, vec![f64::NAN; theta.len()]),
        }
    }

    fn default_start(&self) -> GpHyper {
        GpHyper {
            signal_variance: 1.0,
            length_scales: vec![0.5; self.dim()],
            trend_variance: 0.1,
            nugget: self.fixed_nugget.unwrap_or(1e-3),
        }
    }

    fn random_start(&self, seed: u64, index: u64) -> GpHyper {
        let mut r = rng::stream(seed, "gp-restart", index);
        let mut draw = |(lo, hi): (f64, f64)| -> f64 { r.random_range(lo..hi) };
        let signal_variance = draw((-2.0, 1.0)).exp();
        let length_scales = (0..self.dim()).map(|_| draw((-2.5, 2.0)).exp()).collect();
        let trend_variance = draw((-8.0, 2.0)).exp();
        let nugget = match self.fixed_nugget {
            Some(v) => v,
            None => draw((-12.0, -1.0)).exp(),
        };
        GpHyper {
            signal_variance,
            length_scales,
            trend_variance,
            nugget,
        }
    }
}

fn standardize(targets: &[f64]) -> (f64, f64, Vec<f64>) {
    let n = targets.len() as f64;
    let center = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-12 * center.abs().max(1.0) { var.sqrt() } else { 1.0 };
    (center, scale, targets.iter().map(|v| (v - center) / scale).collect())
}

fn check_targets(designs: &DesignMatrix, targets: &[f64], noise: Option<&[f64]>) -> Result<()> {
    if targets.len() != designs.len() {
        return Err(MesmError::invalid(format!(
            "{} targets for {} design points",
            targets.len(),
            designs.len()
        )));
    }
    if let Some(bad) = targets.iter().find(|v| !v.is_finite()) {
        return Err(MesmError::invalid(format!("non-finite surface target {bad}")));
    }
    if let Some(noise) = noise {
        if noise.len() != designs.len() || noise.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(MesmError::invalid("noise variances must be finite, >= 0, one per design"));
        }
    }
    Ok(())
}

pub fn fit_parameter_surface(designs: &Arc<DesignMatrix>, targets: &[f64]) -> Result<ParameterSurface> {
    fit_parameter_surface_with(designs, targets, &SurfaceOptions::default())
}

pub fn fit_parameter_surface_with(
    designs: &Arc<DesignMatrix>,
    targets: &[f64],
    opts: &SurfaceOptions,
) -> Result<ParameterSurface> {
    check_targets(designs, targets, opts.noise.as_deref())?;
    if let Some(v) = opts.fixed_nugget {
        if !(v >= MIN_NUGGET) {
            return Err(MesmError::invalid(format!("nugget must be >= {MIN_NUGGET}, got {v}")));
        }
    }
    let (_, scale, y) = standardize(targets);
    let noise_std: Option<Vec<f64>> = opts.noise.as_ref().map(|v| v.iter().map(|e| e / (scale * scale)).collect());
    let problem = Problem::new(designs, &y, noise_std.as_deref(), opts.fixed_nugget);

    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for r in 0..opts.restarts.max(1) {
        let start = if r == 0 {
            problem.default_start()
        } else {
            problem.random_start(opts.seed, r as u64)
        };
        let res = bfgs(|t| problem.objective(t), &problem.pack(&start), &opts.bfgs);
        if res.value.is_finite() && best.as_ref().is_none_or(|b| res.value < b.0) {
            best = Some((res.value, res.x, res.converged));
        }
    }
    let (_, theta, converged) = best.ok_or_else(|| {
        MesmError::numerical(format!(
            "GP covariance factorization failed from every start (last tried {:?})",
            problem.default_start()
        ))
    })?;
    debug_assert_eq!(theta.len(), problem.n_params());
    let (hyper, _) = problem.unpack(&theta);
    ParameterSurface::from_record(
        designs.clone(),
        SurfaceRecord {
            targets: targets.to_vec(),
            noise: opts.noise.clone(),
            hyper,
            converged,
        },
    )
}

impl ParameterSurface {
    /// Rebuild the solve state from stored data and hyperparameters.
    pub fn from_record(designs: Arc<DesignMatrix>, record: SurfaceRecord) -> Result<Self> {
        check_targets(&designs, &record.targets, record.noise.as_deref())?;
        let h = &record.hyper;
        if !(h.signal_variance > 0.0)
            || h.length_scales.len() != designs.dim()
            || h.length_scales.iter().any(|l| !(*l > 0.0))
            || !(h.trend_variance >= 0.0)
            || !(h.nugget >= MIN_NUGGET)
        {
            return Err(MesmError::invalid(format!("invalid GP hyperparameters {h:?}")));
        }
        let (center, scale, y) = standardize(&record.targets);
        let noise_std: Option<Vec<f64>> =
            record.noise.as_ref().map(|v| v.iter().map(|e| e / (scale * scale)).collect());
        let problem = Problem::new(&designs, &y, noise_std.as_deref(), Some(h.nugget));
        let (solved, _) = problem.solve(h)?;
        Ok(Self {
            designs,
            record,
            center,
            scale,
            solved,
        })
    }

    pub fn record(&self) -> &SurfaceRecord {
        &self.record
    }

    pub fn hyper(&self) -> &GpHyper {
        &self.record.hyper
    }

    pub fn converged(&self) -> bool {
        self.record.converged
    }

    pub fn designs(&self) -> &Arc<DesignMatrix> {
        &self.designs
    }

    /// Concentrated log marginal likelihood on the standardized scale.
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.solved.log_likelihood
    }

    /// Predictive mean and latent variance at `s` (original units).
    pub fn predict(&self, s: &[f64]) -> Result<(f64, f64)> {
        self.designs.check_point(s)?;
        Ok(self.predict_unchecked(s))
    }

    pub fn predict_mean(&self, s: &[f64]) -> Result<f64> {
        Ok(self.predict(s)?.0)
    }

    /// Intercept `α` and slopes `β` of the trend in original units, with
    /// `β` at its posterior mean.
    pub fn trend(&self) -> (f64, Vec<f64>) {
        let h = &self.record.hyper;
        let (lo, hi) = (self.designs.lower(), self.designs.upper());
        let mut intercept = self.solved.intercept;
        let slopes = (0..self.designs.dim())
            .map(|d| {
                let b: f64 = self.solved.x.iter().zip(self.solved.alpha.iter()).map(|(x, a)| x[d] * a).sum::<f64>()
                    * h.trend_variance;
                let width = hi[d] - lo[d];
                intercept -= b * (0.5 + lo[d] / width);
                self.scale * b / width
            })
            .collect();
        (self.center + self.scale * intercept, slopes)
    }

    fn predict_unchecked(&self, s: &[f64]) -> (f64, f64) {
        let h = &self.record.hyper;
        let u = normalize(&self.designs, s);
        let kvec = DVector::from_fn(self.designs.len(), |a, _| {
            let x = &self.solved.x[a];
            let q: f64 = x
                .iter()
                .zip(&u)
                .zip(&h.length_scales)
                .map(|((x, v), l)| ((x - v) / l).powi(2))
                .sum();
            h.signal_variance * (-0.5 * q).exp() + h.trend_variance * dot(x, &u)
        });
        let prior_var = h.signal_variance + h.trend_variance * dot(&u, &u);
        let mean = self.solved.intercept + kvec.dot(&self.solved.alpha);
        let kinv_k = self.solved.chol.solve(&kvec);
        let resid_one = 1.0 - self.solved.kinv_one.dot(&kvec);
        let intercept_var = resid_one * resid_one / self.solved.intercept_precision;
        let var = (prior_var - kvec.dot(&kinv_k) + intercept_var).max(0.0);
        (self.center + self.scale * mean, var * self.scale * self.scale)
    }
}

/// Per-point surfaces for ξ, μ and ln σ plus the per-cell MLEs they interpolate.
#[derive(Debug, Clone)]
pub struct MarginalField {
    designs: Arc<DesignMatrix>,
    cells: Vec<GevParams>,
    points: usize,
    shape: Vec<ParameterSurface>,
    location: Vec<ParameterSurface>,
    log_scale: Vec<ParameterSurface>,
}

/// Serialized form of a [`MarginalField`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFieldRecord {
    pub designs: DesignMatrix,
    /// Per-cell MLE triples indexed `[n * J + j]`.
    pub cells: Vec<GevParams>,
    pub shape: Vec<SurfaceRecord>,
    pub location: Vec<SurfaceRecord>,
    pub log_scale: Vec<SurfaceRecord>,
}

/// Per-cell GEV MLEs, indexed `[n * J + j]`; a failing cell aborts with its index.
pub fn fit_cells(extremes: &ExtremeDataset) -> Result<Vec<GevFit>> {
    let j_total = extremes.points();
    (0..extremes.designs() * j_total)
        .into_par_iter()
        .map(|c| {
            let (n, j) = (c / j_total, c % j_total);
            fit_gev_mle(&extremes.cell(n, j)).map_err(|e| MesmError::Cell {
                    design: n,
                    point: j,
                    source: Box::new(e),
                })
        })
        .collect()
}

pub fn fit_marginal_field(designs: &DesignMatrix, extremes: &ExtremeDataset) -> Result<MarginalField> {
    if designs.len() != extremes.designs() {
        return Err(MesmError::invalid(format!(
            "{} design rows but block maxima for {} designs",
            designs.len(),
            extremes.designs()
        )));
    }
    let fits = fit_cells(extremes)?;
    let noise = cell_noise(&fits, extremes.points());
    let cells = fits.into_iter().map(|f| f.params).collect();
    MarginalField::from_cells(Arc::new(designs.clone()), cells, Some(noise), extremes.points())
}

/// Sampling variances of `(ξ, μ, ln σ)` per cell from the MLE standard
/// errors. A cell without standard errors takes, per parameter, the median
/// variance of the other cells at the same point.
pub fn cell_noise(fits: &[GevFit], points: usize) -> Vec<[f64; 3]> {
    let mut noise: Vec<Option<[f64; 3]>> = fits
        .iter()
        .map(|f| f.std_errors.map(|se| se.map(|v| v * v)))
        .collect();
    for j in 0..points {
        let idx: Vec<usize> = (j..fits.len()).step_by(points).collect();
        let fill: [f64; 3] = std::array::from_fn(|p| {
            let mut v: Vec<f64> = idx.iter().filter_map(|&c| noise[c].map(|x| x[p])).collect();
            v.sort_by(f64::total_cmp);
            match v.len() {
                0 => 0.0,
                m if m % 2 == 1 => v[m / 2],
                m => 0.5 * (v[m / 2 - 1] + v[m / 2]),
            }
        });
        for &c in &idx {
            noise[c].get_or_insert(fill);
        }
    }
    noise.into_iter().map(|v| v.unwrap_or([0.0; 3])).collect()
}

impl MarginalField {
    /// Fit the three surfaces per point from given per-cell triples.
    /// `noise` holds known sampling variances of `(ξ, μ, ln σ)` per cell,
    /// added to the GP diagonal.
    pub fn from_cells(
        designs: Arc<DesignMatrix>,
        cells: Vec<GevParams>,
        noise: Option<Vec<[f64; 3]>>,
        points: usize,
    ) -> Result<Self> {
        let n_total = designs.len();
        if cells.len() != n_total * points || noise.as_ref().is_some_and(|v| v.len() != cells.len()) {
            return Err(MesmError::invalid("cell parameter count must equal designs × points"));
        }
        let column = |j: usize, f: fn(&GevParams) -> f64| -> Vec<f64> {
            (0..n_total).map(|n| f(&cells[n * points + j])).collect()
        };
        let fit_all = |p: usize, f: fn(&GevParams) -> f64| -> Result<Vec<ParameterSurface>> {
            (0..points)
                .into_par_iter()
                .map(|j| {
                    let opts = SurfaceOptions {
                        noise: noise
                            .as_ref()
                            .map(|v| (0..n_total).map(|n| v[n * points + j][p]).collect()),
                        ..Default::default()
                    };
                    fit_parameter_surface_with(&designs, &column(j, f), &opts)
                })
                .collect()
        };
        let shape = fit_all(0, |p| p.shape)?;
        let location = fit_all(1, |p| p.location)?;
        let log_scale = fit_all(2, |p| p.scale.ln())?;
        Ok(Self {
            designs,
            cells,
            points,
            shape,
            location,
            log_scale,
        })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn designs(&self) -> &DesignMatrix {
        &self.designs
    }

    pub fn cell(&self, n: usize, j: usize) -> GevParams {
        self.cells[n * self.points + j]
    }

    pub fn surfaces(&self, j: usize) -> [&ParameterSurface; 3] {
        [&self.shape[j], &self.location[j], &self.log_scale[j]]
    }

    /// Whether every surface optimizer reported convergence.
    pub fn all_converged(&self) -> bool {
        self.shape
            .iter()
            .chain(&self.location)
            .chain(&self.log_scale)
            .all(|s| s.converged())
    }

    pub fn predict_marginals(&self, s: &[f64]) -> Result<Vec<GevParams>> {
        self.designs.check_point(s)?;
        (0..self.points)
            .map(|j| {
                let shape = self.shape[j].predict_unchecked(s).0;
                let location = self.location[j].predict_unchecked(s).0;
                let scale = self.log_scale[j].predict_unchecked(s).0.exp();
                GevParams::new(shape, location, scale)
            })
            .collect()
    }

    pub fn to_record(&self) -> MarginalFieldRecord {
        let rec = |v: &[ParameterSurface]| v.iter().map(|s| s.record().clone()).collect();
        MarginalFieldRecord {
            designs: (*self.designs).clone(),
            cells: self.cells.clone(),
            shape: rec(&self.shape),
            location: rec(&self.location),
            log_scale: rec(&self.log_scale),
        }
    }

    pub fn from_record(record: MarginalFieldRecord) -> Result<Self> {
        let designs = Arc::new(record.designs);
        let points = record.shape.len();
        if record.location.len() != points
            || record.log_scale.len() != points
            || record.cells.len() != designs.len() * points
        {
            return Err(MesmError::invalid("marginal field record has inconsistent sizes"));
        }
        let build = |v: Vec<SurfaceRecord>| -> Result<Vec<ParameterSurface>> {
            v.into_iter()
                .map(|r| ParameterSurface::from_record(designs.clone(), r))
                .collect()
        };
        Ok(Self {
            shape: build(record.shape)?,
            location: build(record.location)?,
            log_scale: build(record.log_scale)?,
            cells: record.cells,
            points,
            designs,
        })
    }
}
