//! Brown-Resnick max-stable process with an anisotropic RBF correlation.
//!
//! The underlying Gaussian field has unit variance and correlation
//! `k(h; τ) = exp(-Σ_d h_d² / (2 τ_d²))`, semivariogram `γ = 1 − k`, so each
//! pair of sites follows a Hüsler-Reiss law with parameter `a = sqrt(2γ)`.
//! Because `γ ≤ 1`, `a ≤ sqrt(2)` and the extremal coefficient never exceeds
//! `2Φ(sqrt(2)/2) ≈ 1.5205`.

use crate::data::BlockMatrix;
use crate::error::{MesmError, Result};
use crate::rng;
use crate::special::{ln_norm_cdf, ln_norm_pdf, log_add_exp, norm_cdf};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Maximum number of spectral functions drawn per location in exact sampling.
pub const MAX_SPECTRAL_PER_SITE: usize = 1_000_000;

/// Eigenvalues of the site correlation matrix below this fraction of the
/// largest one are dropped from the square-root factor.
const EIGEN_CUTOFF: f64 = 1e-13;

/// Closed-form bivariate Hüsler-Reiss quantities in terms of `a`.
pub mod husler_reiss {
    use super::*;

    fn check_z(z1: f64, z2: f64) -> Result<()> {
        if !(z1 > 0.0 && z2 > 0.0) || !z1.is_finite() || !z2.is_finite() {
            return Err(MesmError::invalid(format!(
                "unit-Fréchet arguments must be positive and finite, got ({z1}, {z2})"
            )));
        }
        Ok(())
    }

    /// `V(z1, z2) = Φ(a/2 + ln(z2/z1)/a)/z1 + Φ(a/2 + ln(z1/z2)/a)/z2`;
    /// `a = 0` gives complete dependence `1/min(z1, z2)`.
    pub fn exponent_measure(a: f64, z1: f64, z2: f64) -> Result<f64> {
        check_z(z1, z2)?;
        if !(a >= 0.0) {
            return Err(MesmError::invalid(format!("Hüsler-Reiss parameter must be >= 0, got {a}")));
        }
        if a == 0.0 {
            return Ok(1.0 / z1.min(z2));
        }
        let r = (z2 / z1).ln() / a;
        Ok(norm_cdf(0.5 * a + r) / z1 + norm_cdf(0.5 * a - r) / z2)
    }

    /// `θ = V(1, 1) = 2Φ(a/2)`.
    pub fn extremal_coefficient(a: f64) -> f64 {
        2.0 * norm_cdf(0.5 * a)
    }

    /// Log of `∂²/∂z1∂z2 exp(−V)`:
    /// `exp(−V)·[Φ(q1)Φ(q2)/(z1² z2²) + φ(q1)/(a z1² z2)]`.
    pub fn log_density(a: f64, z1: f64, z2: f64) -> Result<f64> {
        check_z(z1, z2)?;
        if !(a > 0.0) || !a.is_finite() {
            return Err(MesmError::invalid(format!(
                "pairwise density needs a > 0 (distinct sites), got {a}"
            )));
        }
        let (l1, l2) = (z1.ln(), z2.ln());
        let q1 = 0.5 * a + (l2 - l1) / a;
        let q2 = a - q1;
        let v = norm_cdf(q1) / z1 + norm_cdf(q2) / z2;
        let both = ln_norm_cdf(q1) + ln_norm_cdf(q2) - 2.0 * l1 - 2.0 * l2;
        let mixed = ln_norm_pdf(q1) - a.ln() - 2.0 * l1 - l2;
        Ok(-v + log_add_exp(both, mixed))
    }

    pub fn density(a: f64, z1: f64, z2: f64) -> Result<f64> {
        Ok(log_density(a, z1, z2)?.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownResnickModel {
    tau: Vec<f64>,
}

impl BrownResnickModel {
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        if tau.len() != 2 {
            return Err(MesmError::invalid(format!(
                "τ must have one length scale per coordinate (2), got {}",
                tau.len()
            )));
        }
        if tau.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(MesmError::invalid(format!("length scales must be positive, got {tau:?}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    fn scaled_sq_norm(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        let dx = (u[0] - v[0]) / self.tau[0];
        let dy = (u[1] - v[1]) / self.tau[1];
        0.5 * (dx * dx + dy * dy)
    }

    pub fn correlation(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        (-self.scaled_sq_norm(u, v)).exp()
    }

    /// `γ(u − v) = 1 − k(u − v)`, computed without cancellation for close sites.
    pub fn semivariogram(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        -(-self.scaled_sq_norm(u, v)).exp_m1()
    }

    /// Hüsler-Reiss parameter `a(u, v) = sqrt(2(1 − k))`.
    pub fn dependence_param(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        (2.0 * self.semivariogram(u, v)).sqrt()
    }

    pub fn exponent_measure_2(&self, u: [f64; 2], v: [f64; 2], z1: f64, z2: f64) -> Result<f64> {
        husler_reiss::exponent_measure(self.dependence_param(u, v), z1, z2)
    }

    pub fn extremal_coefficient(&self, u: [f64; 2], v: [f64; 2]) -> f64 {
        husler_reiss::extremal_coefficient(self.dependence_param(u, v))
    }

    pub fn pairwise_density(&self, u: [f64; 2], v: [f64; 2], z1: f64, z2: f64) -> Result<f64> {
        husler_reiss::density(self.dependence_param(u, v), z1, z2)
    }

    pub fn log_pairwise_density(&self, u: [f64; 2], v: [f64; 2], z1: f64, z2: f64) -> Result<f64> {
        husler_reiss::log_density(self.dependence_param(u, v), z1, z2)
    }

    pub fn sampler(&self, sites: &[[f64; 2]]) -> Result<ExactSampler> {
        ExactSampler::new(self, sites)
    }
}

/// Exact simulation by extremal functions: at each site, Poisson arrivals
/// are processed until they can no longer exceed the current maximum there;
/// each arrival carries a log-Gaussian function anchored at the site, which
/// is discarded if it would have exceeded the process at an earlier site.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    /// Site -> index of its distinct location.
    location_of: Vec<usize>,
    /// Square-root factor of the correlation matrix of distinct locations.
    factor: DMatrix<f64>,
    /// Semivariogram between distinct locations.
    gamma: DMatrix<f64>,
}

impl ExactSampler {
    pub fn new(model: &BrownResnickModel, sites: &[[f64; 2]]) -> Result<Self> {
        if sites.is_empty() {
            return Err(MesmError::invalid("exact sampling needs at least one site"));
        }
        let mut locations: Vec<[f64; 2]> = Vec::new();
        let location_of = sites
            .iter()
            .map(|s| match locations.iter().position(|l| l == s) {
                Some(i) => i,
                None => {
                    locations.push(*s);
                    locations.len() - 1
                }
            })
            .collect();
        let m = locations.len();
        let cov = DMatrix::from_fn(m, m, |a, b| model.correlation(locations[a], locations[b]));
        let gamma = DMatrix::from_fn(m, m, |a, b| model.semivariogram(locations[a], locations[b]));
        let eig = SymmetricEigen::new(cov);
        let largest = eig.eigenvalues.max().max(0.0);
        let keep: Vec<usize> = (0..m)
            .filter(|&c| eig.eigenvalues[c] > EIGEN_CUTOFF * largest)
            .collect();
        let mut factor = DMatrix::zeros(m, keep.len().max(1));
        for (k, &c) in keep.iter().enumerate() {
            let s = eig.eigenvalues[c].sqrt();
            factor.set_column(k, &(eig.eigenvectors.column(c) * s));
        }
        Ok(Self {
            location_of,
            factor,
            gamma,
        })
    }

    pub fn sites(&self) -> usize {
        self.location_of.len()
    }

    fn gaussian<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let eps = DVector::from_fn(self.factor.ncols(), |_, _| rng.sample(StandardNormal));
        &self.factor * eps
    }

    /// One draw of the process at every site; margins are unit Fréchet.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        let j_total = self.sites();
        let mut z = vec![0.0f64; j_total];
        for j in 0..j_total {
            let anchor = self.location_of[j];
            let shift = self.gamma.column(anchor);
            let mut arrival: f64 = rng.sample(Exp1);
            let mut count = 0usize;
            while 1.0 / arrival > z[j] {
                count += 1;
                if count > MAX_SPECTRAL_PER_SITE {
                    return Err(MesmError::numerical(format!(
                        "exact sampler exceeded {MAX_SPECTRAL_PER_SITE} spectral functions at site {j}"
                    )));
                }
                let g = self.gaussian(rng);
                let base = g[anchor] + arrival.ln();
                let value = |i: usize| {
                    let loc = self.location_of[i];
                    (g[loc] - shift[loc] - base).exp()
                };
                if (0..j).all(|i| value(i) < z[i]) {
                    for (i, zi) in z.iter_mut().enumerate().skip(j) {
                        *zi = zi.max(value(i));
                    }
                }
                arrival += rng.sample::<f64, _>(Exp1);
            }
        }
        Ok(z)
    }

    /// `n` independent draws; draw `i` uses stream `(seed, tag, i)`, so the
    /// result does not depend on the thread pool.
    pub fn sample_many(&self, n: usize, seed: u64, tag: &str) -> Result<BlockMatrix> {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| self.sample(&mut rng::stream(seed, tag, i as u64)))
            .collect::<Result<_>>()?;
        BlockMatrix::new(n, self.sites(), rows.into_iter().flatten().collect())
    }
}

/// Convenience wrapper: a single exact draw at `sites`.
pub fn sample_exact<R: Rng + ?Sized>(
    model: &BrownResnickModel,
    sites: &[[f64; 2]],
    rng: &mut R,
) -> Result<Vec<f64>> {
    ExactSampler::new(model, sites)?.sample(rng)
}
