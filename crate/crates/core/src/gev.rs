//! Generalized extreme value distribution.
//!
//! `G(y) = exp[-{1 + ξ(y-μ)/σ}^(-1/ξ)]` on `{y : 1 + ξ(y-μ)/σ > 0}`, with the
//! Gumbel limit `exp[-exp(-(y-μ)/σ)]` used when `|ξ| < GUMBEL_SWITCH`.
//! Near the switch the power terms are evaluated through `ln_1p`/`exp_m1`
//! so there is no cancellation as ξ → 0.

use crate::error::{MesmError, Result};
use crate::optim::{self, BfgsOptions, NelderMeadOptions};
use rand::Rng;
use serde::{Deserialize, Serialize};
use libm::tgamma as gamma;

/// Below this |ξ| the Gumbel-limit formulas are used.
pub const GUMBEL_SWITCH: f64 = 1e-8;

/// Minimum number of block maxima accepted by [`fit_gev_mle`].
pub const MIN_FIT_SAMPLES: usize = 20;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub shape: f64,
    pub location: f64,
    pub scale: f64,
}

impl GevParams {
    pub const UNIT_FRECHET: GevParams = GevParams {
        shape: 1.0,
        location: 1.0,
        scale: 1.0,
    };

    pub fn new(shape: f64, location: f64, scale: f64) -> Result<Self> {
        let p = GevParams {
            shape,
            location,
            scale,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(MesmError::invalid(format!(
                "GEV scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if !self.shape.is_finite() || !self.location.is_finite() {
            return Err(MesmError::invalid(format!(
                "GEV shape and location must be finite, got ({}, {})",
                self.shape, self.location
            )));
        }
        Ok(())
    }

    fn is_gumbel(&self) -> bool {
        self.shape.abs() < GUMBEL_SWITCH
    }

    /// `-ln G(y)`, i.e. `t(y) = {1+ξx}^(-1/ξ)`; `None` outside the support.
    fn neg_log_cdf(&self, y: f64) -> Option<f64> {
        let x = (y - self.location) / self.scale;
        if self.is_gumbel() {
            return Some((-x).exp());
        }
        let u = self.shape * x;
        if u <= -1.0 {
            return None;
        }
        Some((-u.ln_1p() / self.shape).exp())
    }

    /// Support as a `(lower, upper)` pair with infinite ends where unbounded.
    pub fn support(&self) -> (f64, f64) {
        if self.is_gumbel() {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else if self.shape > 0.0 {
            (self.location - self.scale / self.shape, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, self.location - self.scale / self.shape)
        }
    }

    pub fn in_support(&self, y: f64) -> bool {
        y.is_finite() && self.neg_log_cdf(y).is_some()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match self.neg_log_cdf(y) {
            Some(t) => (-t).exp(),
            None if self.shape > 0.0 => 0.0,
            None => 1.0,
        }
    }

    /// Survival function `1 - G(y)`, accurate in the upper tail.
    pub fn sf(&self, y: f64) -> f64 {
        match self.neg_log_cdf(y) {
            Some(t) => -(-t).exp_m1(),
            None if self.shape > 0.0 => 1.0,
            None => 0.0,
        }
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        let x = (y - self.location) / self.scale;
        if self.is_gumbel() {
            return -self.scale.ln() - x - (-x).exp();
        }
        let u = self.shape * x;
        if u <= -1.0 {
            return f64::NEG_INFINITY;
        }
        let lt = u.ln_1p() / self.shape;
        -self.scale.ln() - (1.0 + self.shape) * lt - (-lt).exp()
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(MesmError::invalid(format!(
                "quantile probability must lie in (0, 1), got {p}"
            )));
        }
        Ok(self.quantile_unchecked(p))
    }

    fn quantile_unchecked(&self, p: f64) -> f64 {
        let w = -p.ln();
        if self.is_gumbel() {
            self.location - self.scale * w.ln()
        } else {
            self.location + self.scale * (-self.shape * w.ln()).exp_m1() / self.shape
        }
    }

    /// Level exceeded on average once every `r` blocks: the `1 - 1/r` quantile.
    pub fn return_level(&self, r: u64) -> Result<f64> {
        if r < 2 {
            return Err(MesmError::invalid(format!("return period must be >= 2, got {r}")));
        }
        // -ln p with p = 1 - 1/r, computed without forming p.
        let w = -(-1.0 / r as f64).ln_1p();
        Ok(if self.is_gumbel() {
            self.location - self.scale * w.ln()
        } else {
            self.location + self.scale / self.shape * (-self.shape * w.ln()).exp_m1()
        })
    }

    /// Mean of the distribution; infinite for ξ ≥ 1.
    pub fn mean(&self) -> f64 {
        if self.is_gumbel() {
            self.location + self.scale * EULER_GAMMA
        } else if self.shape >= 1.0 {
            f64::INFINITY
        } else {
            self.location + self.scale * (gamma(1.0 - self.shape) - 1.0) / self.shape
        }
    }

    /// Map `y` to the unit-Fréchet scale: `z = {1+ξ(y-μ)/σ}^(1/ξ)`.
    pub fn to_unit_frechet(&self, y: f64) -> Result<f64> {
        match self.neg_log_cdf(y) {
            Some(t) if y.is_finite() && t > 0.0 && t.is_finite() => Ok(1.0 / t),
            _ => Err(MesmError::invalid(format!(
                "value {y} lies outside the support of GEV({}, {}, {})",
                self.shape, self.location, self.scale
            ))),
        }
    }

    /// Inverse of [`Self::to_unit_frechet`].
    pub fn from_unit_frechet(&self, z: f64) -> Result<f64> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(MesmError::invalid(format!(
                "unit-Fréchet value must be positive and finite, got {z}"
            )));
        }
        let lz = z.ln();
        Ok(if self.is_gumbel() {
            self.location + self.scale * lz
        } else {
            self.location + self.scale * (self.shape * lz).exp_m1() / self.shape
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        self.quantile_unchecked(u)
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&y| self.ln_pdf(y)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMaximaConfig {
    pub block_size: usize,
}

impl BlockMaximaConfig {
    pub fn new(block_size: usize) -> Result<Self> {
        if block_size == 0 {
            return Err(MesmError::invalid("block size must be at least 1"));
        }
        Ok(Self { block_size })
    }

    /// Number of blocks `⌈L/T⌉` extracted from `replicates` observations.
    pub fn block_count(&self, replicates: usize) -> usize {
        replicates.div_ceil(self.block_size)
    }
}

/// Maxima over consecutive blocks of `config.block_size`; the last block may be short.
pub fn block_maxima(observations: &[f64], config: BlockMaximaConfig) -> Result<Vec<f64>> {
    if observations.is_empty() {
        return Err(MesmError::invalid("block maxima of an empty series"));
    }
    if config.block_size == 0 {
        return Err(MesmError::invalid("block size must be at least 1"));
    }
    if observations.len() < config.block_size {
        return Err(MesmError::invalid(format!(
            "series of length {} is shorter than block size {}",
            observations.len(),
            config.block_size
        )));
    }
    Ok(observations
        .chunks(config.block_size)
        .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GevFit {
    pub params: GevParams,
    pub log_likelihood: f64,
    /// Standard errors of `(ξ, μ, ln σ)` from the observed information;
    /// `None` when the numerical Hessian is not positive definite.
    pub std_errors: Option<[f64; 3]>,
}

/// Probability-weighted-moment starting values (Hosking, Wallis & Wood).
fn pwm_start(sorted: &[f64]) -> GevParams {
    let n = sorted.len() as f64;
    let mut b0 = 0.0;
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let i = i as f64;
        b0 += x;
        b1 += x * i / (n - 1.0);
        b2 += x * i * (i - 1.0) / ((n - 1.0) * (n - 2.0));
    }
    b0 /= n;
    b1 /= n;
    b2 /= n;
    let c = (2.0 * b1 - b0) / (3.0 * b2 - b0) - 2f64.ln() / 3f64.ln();
    let k = (7.8590 * c + 2.9554 * c * c).clamp(-0.5, 0.5);
    let (scale, location) = if k.abs() < 1e-6 {
        let scale = (2.0 * b1 - b0) / 2f64.ln();
        (scale, b0 - EULER_GAMMA * scale)
    } else {
        let g = gamma(1.0 + k);
        let scale = (2.0 * b1 - b0) * k / (g * (1.0 - 2f64.powf(-k)));
        (scale, b0 + scale * (g - 1.0) / k)
    };
    GevParams {
        shape: -k,
        location,
        scale,
    }
}

/// Open interval searched for the shape parameter by [`fit_gev_mle`].
///
/// Below `-0.5` the likelihood loses regularity, and below `-1` it is
/// unbounded as the upper endpoint approaches the sample maximum.
pub const SHAPE_RANGE: (f64, f64) = (-0.5, 5.0);

/// Negative log-likelihood in `(μ, ln σ, ξ)` with a +∞ barrier outside the support.
fn nll(theta: &[f64], data: &[f64]) -> f64 {
    let shape = theta[2];
    if !(shape > SHAPE_RANGE.0 && shape < SHAPE_RANGE.1) || !theta.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let p = GevParams {
        shape,
        location: theta[0],
        scale: theta[1].exp(),
    };
    let mut total = 0.0;
    for &y in data {
        let l = p.ln_pdf(y);
        if !l.is_finite() {
            return f64::INFINITY;
        }
        total -= l;
    }
    total
}

/// Maximum-likelihood GEV fit: simplex search from PWM starting values,
/// then a quasi-Newton polish with numerical gradients. Data are standardized
/// internally; the returned log-likelihood is recomputed on the original scale.
/// The shape is restricted to the open interval [`SHAPE_RANGE`].
pub fn fit_gev_mle(samples: &[f64]) -> Result<GevFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(MesmError::invalid(format!(
            "GEV fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
        return Err(MesmError::invalid(format!("non-finite sample {bad}")));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return Err(MesmError::invalid(
            "degenerate sample: all values (numerically) equal, scale would collapse to 0",
        ));
    }
    let mut std: Vec<f64> = samples.iter().map(|v| (v - mean) / sd).collect();
    std.sort_by(f64::total_cmp);

    let mut start = pwm_start(&std);
    if !(start.scale > 0.0) || !start.location.is_finite() {
        start = GevParams {
            shape: 0.0,
            location: -EULER_GAMMA * 6f64.sqrt() / std::f64::consts::PI,
            scale: 6f64.sqrt() / std::f64::consts::PI,
        };
    }
    let mut theta0 = vec![start.location, start.scale.ln(), start.shape.max(-0.45)];
    if !nll(&theta0, &std).is_finite() {
        theta0 = vec![-0.45, (0.78f64).ln(), 0.0];
    }

    let objective = |t: &[f64]| nll(t, &std);
    let nm = optim::nelder_mead(
        objective,
        &theta0,
        &NelderMeadOptions {
            max_iter: 5000,
            xatol: 1e-9,
            fatol: 1e-11,
            initial_step: 0.2,
            ..Default::default()
        },
    );
    let polish = optim::bfgs(
        |t: &[f64]| {
            let v = nll(t, &std);
            let g = if v.is_finite() {
                optim::central_gradient(|u| nll(u, &std), t, 1e-6)
            } else {
                vec![f64::NAN; 3]
            };
            (v, g)
        },
        &nm.x,
        &BfgsOptions {
            max_iter: 200,
            gtol: 1e-7,
            ftol: 1e-13,
        },
    );
    let (theta, converged) = if polish.value.is_finite() && polish.value <= nm.value {
        (polish.x, nm.converged || polish.converged)
    } else {
        (nm.x, nm.converged)
    };

    let params = GevParams {
        shape: theta[2],
        location: mean + sd * theta[0],
        scale: sd * theta[1].exp(),
    };
    if !converged {
        return Err(MesmError::NotConverged {
            iterations: nm.iterations + polish.iterations,
            best_value: -params.log_likelihood(samples),
            best_point: vec![params.shape, params.location, params.scale],
        });
    }
    let log_likelihood = params.log_likelihood(samples);
    if !log_likelihood.is_finite() || !samples.iter().all(|&y| params.in_support(y)) {
        return Err(MesmError::numerical(format!(
            "fitted GEV({}, {}, {}) does not cover every sample",
            params.shape, params.location, params.scale
        )));
    }
    let std_errors = observed_std_errors(&theta, &std).map(|[m, ls, sh]| [sh, sd * m, ls]);
    Ok(GevFit {
        params,
        log_likelihood,
        std_errors,
    })
}

/// Standard errors of `(μ, ln σ, ξ)` on the standardized scale.
fn observed_std_errors(theta: &[f64], data: &[f64]) -> Option<[f64; 3]> {
    let h = optim::central_hessian(|t| nll(t, data), theta, 1e-4);
    if h.iter().flatten().any(|v| !v.is_finite()) {
        return None;
    }
    let info = nalgebra::Matrix3::from_fn(|i, k| h[i][k]);
    let cov = nalgebra::Cholesky::new(info)?.inverse();
    let se = [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), cov[(2, 2)].sqrt()];
    se.iter().all(|v| v.is_finite() && *v > 0.0).then_some(se)
}
