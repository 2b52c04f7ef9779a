//! Comparison models: linear quantile regression, stochastic kriging on
//! replicate means, and its upper-tail variant.

use crate::data::{BlockMatrix, DesignMatrix, RawObservations};
use crate::error::{MesmError, Result};
use crate::marginal::{fit_parameter_surface_with, ParameterSurface, SurfaceOptions, MIN_NUGGET};
use crate::rng;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::sync::Arc;

/// Pinball loss `ρ_q(u) = u (q − 1{u < 0})`.
pub fn pinball(u: f64, q: f64) -> f64 {
    if u < 0.0 {
        u * (q - 1.0)
    } else {
        u * q
    }
}

pub fn pinball_objective(x: &[Vec<f64>], y: &[f64], coef: &[f64], q: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(row, yi)| pinball(yi - row.iter().zip(coef).map(|(a, b)| a * b).sum::<f64>(), q))
        .sum()
}

fn step_bound(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1e20, f64::min)
}

/// Linear quantile regression `min Σ ρ_q(y − Xb)` by the Frisch-Newton
/// primal-dual interior point method applied to the bounded dual
/// `max yᵀa  s.t. Xᵀa = (1 − q) Xᵀ1, 0 ≤ a ≤ 1`. Rows of `x` should include
/// an intercept column if one is wanted.
pub fn quantile_regression(x: &[Vec<f64>], y: &[f64], q: f64) -> Result<Vec<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(MesmError::invalid(format!("quantile must lie in (0, 1), got {q}")));
    }
    let m = y.len();
    let p = x.first().map(|r| r.len()).unwrap_or(0);
    if m == 0 || x.len() != m || p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(MesmError::invalid("quantile regression needs a non-empty rectangular design"));
    }
    // A = Xᵀ (p × m), c = −y, b = A · (1 − q)1
    let a = DMatrix::from_fn(p, m, |i, k| x[k][i]);
    let c = DVector::from_iterator(m, y.iter().map(|v| -v));
    let mut xv = DVector::from_element(m, 1.0 - q);
    let b = &a * &xv;
    let u = DVector::from_element(m, 1.0);
    let mut s = &u - &xv;
    let gram = &a * a.transpose();
    let rank_deficient = || MesmError::invalid("quantile regression design is rank deficient");
    let gram_chol = gram.clone().cholesky().ok_or_else(rank_deficient)?;
    let diag = gram_chol.l_dirty().diagonal();
    // Column-scaled pivots: a tiny ratio means a (near) linear dependence.
    if (0..p).any(|i| !(diag[i] * diag[i] > 1e-10 * gram[(i, i)])) {
        return Err(rank_deficient());
    }
    let mut yv = gram_chol.solve(&(&a * &c));
    let mut r = &c - a.transpose() * &yv;
    r.apply(|v| {
        if *v == 0.0 {
            *v = 0.001
        }
    });
    let mut z = r.map(|v| v.max(0.0));
    let mut w = &z - &r;
    let gap = |xv: &DVector<f64>, yv: &DVector<f64>, w: &DVector<f64>| c.dot(xv) - yv.dot(&b) + w.dot(&u);
    let scale = 1.0 + y.iter().map(|v| v.abs()).sum::<f64>();
    let beta = 0.9995;
    let mut it = 0;
    let mut current_gap = gap(&xv, &yv, &w);
    while current_gap > 1e-12 * scale && it < 200 {
        it += 1;
        let qd = DVector::from_fn(m, |i, _| 1.0 / (z[i] / xv[i] + w[i] / s[i]));
        r = &z - &w;
        let aq = DMatrix::from_fn(p, m, |i, k| a[(i, k)] * qd[k]);
        let aqa = &aq * a.transpose();
        let chol = aqa.cholesky().ok_or_else(|| MesmError::numerical("interior point normal equations became singular"))?;
        let rhs = &aq * &r;
        let mut dy = chol.solve(&rhs);
        let aty = a.transpose() * &dy;
        let mut dx = DVector::from_fn(m, |i, _| qd[i] * (aty[i] - r[i]));
        let mut ds = -&dx;
        let mut dz = DVector::from_fn(m, |i, _| -z[i] * (dx[i] / xv[i] + 1.0));
        let mut dw = DVector::from_fn(m, |i, _| -w[i] * (ds[i] / s[i] + 1.0));
        let lengths = |dx: &DVector<f64>, ds: &DVector<f64>, dz: &DVector<f64>, dw: &DVector<f64>| {
            let fp = step_bound(xv.as_slice(), dx.as_slice()).min(step_bound(s.as_slice(), ds.as_slice()));
            let fd = step_bound(w.as_slice(), dw.as_slice()).min(step_bound(z.as_slice(), dz.as_slice()));
            ((beta * fp).min(1.0), (beta * fd).min(1.0))
        };
        let (mut fp, mut fd) = lengths(&dx, &ds, &dz, &dw);
        if fp.min(fd) < 1.0 {
            // Mehrotra corrector with an adaptively centered barrier.
            let mu0 = z.dot(&xv) + w.dot(&s);
            let g = (&z + &dz * fd).dot(&(&xv + &dx * fp)) + (&w + &dw * fd).dot(&(&s + &ds * fp));
            let mu = mu0 * (g / mu0).powi(3) / (2.0 * m as f64);
            let dxdz = dx.component_mul(&dz);
            let dsdw = ds.component_mul(&dw);
            let xi = DVector::from_fn(m, |i, _| mu * (1.0 / xv[i] - 1.0 / s[i]));
            let corr = DVector::from_fn(m, |i, _| qd[i] * (dxdz[i] - dsdw[i] - xi[i]));
            let rhs2 = &rhs + &a * corr;
            dy = chol.solve(&rhs2);
            let aty = a.transpose() * &dy;
            dx = DVector::from_fn(m, |i, _| qd[i] * (aty[i] + xi[i] - r[i] - dxdz[i] + dsdw[i]));
            ds = -&dx;
            dz = DVector::from_fn(m, |i, _| mu / xv[i] - z[i] - z[i] / xv[i] * dx[i] - dxdz[i]);
            dw = DVector::from_fn(m, |i, _| mu / s[i] - w[i] - w[i] / s[i] * ds[i] - dsdw[i]);
            (fp, fd) = lengths(&dx, &ds, &dz, &dw);
        }
        let next = (&xv + &dx * fp, &s + &ds * fp, &yv + &dy * fd, &w + &dw * fd, &z + &dz * fd);
        let next_gap = gap(&next.0, &next.2, &next.3);
        // The gap bottoms out at rounding level; further steps only shrink the iterates toward underflow.
        let stalled = current_gap < 1e-8 * scale && next_gap >= current_gap * (1.0 - 1e-3);
        if !next_gap.is_finite() || next.2.iter().any(|v| !v.is_finite()) || stalled {
            if next_gap.is_finite() && next_gap < current_gap {
                yv = next.2;
            }
            break;
        }
        (xv, s, yv, w, z) = next;
        current_gap = next_gap;
    }
    let coef: Vec<f64> = yv.iter().map(|v| -v).collect();
    if coef.iter().any(|v| !v.is_finite()) {
        return Err(MesmError::numerical("quantile regression produced non-finite coefficients"));
    }
    Ok(coef)
}

/// Per-point linear quantile regressions `y_j(s) ≈ α_j + β_jᵀ s` on all replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct QlrModel {
    pub q: f64,
    /// Per point: `[α, β_1, …, β_D]`.
    pub coefficients: Vec<Vec<f64>>,
}

impl QlrModel {
    pub fn predict(&self, s: &[f64]) -> Vec<f64> {
        self.coefficients
            .iter()
            .map(|c| c[0] + c[1..].iter().zip(s).map(|(b, v)| b * v).sum::<f64>())
            .collect()
    }
}

pub fn fit_qlr(designs: &DesignMatrix, raw: &RawObservations, q: f64) -> Result<QlrModel> {
    check_shapes(designs, raw)?;
    let rows: Vec<Vec<f64>> = (0..raw.designs())
        .flat_map(|n| {
            let mut r = vec![1.0];
            r.extend_from_slice(designs.row(n));
            std::iter::repeat_n(r, raw.replicates())
        })
        .collect();
    let coefficients = (0..raw.points())
        .into_par_iter()
        .map(|j| {
            let y: Vec<f64> = (0..raw.designs()).flat_map(|n| raw.series(n, j)).collect();
            quantile_regression(&rows, &y, q)
        })
        .collect::<Result<_>>()?;
    Ok(QlrModel { q, coefficients })
}

fn check_shapes(designs: &DesignMatrix, raw: &RawObservations) -> Result<()> {
    if designs.len() != raw.designs() {
        return Err(MesmError::invalid(format!(
            "{} design rows but observations for {} designs",
            designs.len(),
            raw.designs()
        )));
    }
    Ok(())
}

/// Number of replicates kept by the upper-tail selection at level `q`.
pub fn retained_count(replicates: usize, q: f64) -> usize {
    (((1.0 - q) * replicates as f64 - 1e-9).ceil() as usize).clamp(1, replicates)
}

/// The `retained_count` largest values, in their original order.
pub fn upper_tail(values: &[f64], q: f64) -> Vec<f64> {
    let keep = retained_count(values.len(), q);
    if keep == values.len() {
        return values.to_vec();
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| values[i]).collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Stochastic kriging: a GP on per-design sample means with known
/// heteroscedastic noise (sample variance / count), plus a GP on the log
/// sample variance that supplies the predictive spread of a new response.
#[derive(Debug, Clone)]
pub struct KrigingModel {
    /// Upper-tail level for QSK, `None` for plain SK.
    pub q: Option<f64>,
    mean: Vec<ParameterSurface>,
    log_var: Vec<ParameterSurface>,
}

fn fit_kriging(designs: &DesignMatrix, raw: &RawObservations, q: Option<f64>, seed: u64) -> Result<KrigingModel> {
    check_shapes(designs, raw)?;
    if let Some(q) = q {
        if !(0.0..1.0).contains(&q) {
            return Err(MesmError::invalid(format!("QSK level must lie in [0, 1), got {q}")));
        }
        if retained_count(raw.replicates(), q) < 2 {
            return Err(MesmError::invalid(format!(
                "QSK at q = {q} keeps fewer than 2 of {} replicates",
                raw.replicates()
            )));
        }
    } else if raw.replicates() < 2 {
        return Err(MesmError::invalid("stochastic kriging needs at least 2 replicates"));
    }
    let designs = Arc::new(designs.clone());
    let fits: Vec<(ParameterSurface, ParameterSurface)> = (0..raw.points())
        .into_par_iter()
        .map(|j| {
            let stats: Vec<(f64, f64, usize)> = (0..raw.designs())
                .map(|n| {
                    let series = raw.series(n, j);
                    let kept = match q {
                        Some(q) => upper_tail(&series, q),
                        None => series,
                    };
                    let (m, v) = mean_var(&kept);
                    (m, v, kept.len())
                })
                .collect();
            let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
            let noise: Vec<f64> = stats.iter().map(|s| s.1 / s.2 as f64).collect();
            let floor = 1e-12 * stats.iter().map(|s| s.1).fold(0.0, f64::max).max(1e-300);
            let log_var: Vec<f64> = stats.iter().map(|s| s.1.max(floor).ln()).collect();
            let mean_opts = SurfaceOptions {
                fixed_nugget: Some(MIN_NUGGET),
                noise: Some(noise),
                seed: rng::derive_seed(seed, "sk-mean", j as u64),
                ..Default::default()
            };
            let var_opts = SurfaceOptions {
                seed: rng::derive_seed(seed, "sk-var", j as u64),
                ..Default::default()
            };
            Ok((
                fit_parameter_surface_with(&designs, &means, &mean_opts)?,
                fit_parameter_surface_with(&designs, &log_var, &var_opts)?,
            ))
        })
        .collect::<Result<_>>()?;
    let (mean, log_var) = fits.into_iter().unzip();
    Ok(KrigingModel { q, mean, log_var })
}

pub fn fit_sk(designs: &DesignMatrix, raw: &RawObservations) -> Result<KrigingModel> {
    fit_kriging(designs, raw, None, 0)
}

pub fn fit_qsk(designs: &DesignMatrix, raw: &RawObservations, q: f64) -> Result<KrigingModel> {
    fit_kriging(designs, raw, Some(q), 0)
}

impl KrigingModel {
    pub fn points(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_surface(&self, j: usize) -> &ParameterSurface {
        &self.mean[j]
    }

    /// Per point: predictive mean and the variance of a new response
    /// (latent variance plus predicted replicate variance).
    pub fn predict(&self, s: &[f64]) -> Result<Vec<(f64, f64)>> {
        self.mean
            .iter()
            .zip(&self.log_var)
            .map(|(m, v)| {
                let (mu, latent) = m.predict(s)?;
                let noise = v.predict_mean(s)?.exp();
                Ok((mu, latent + noise))
            })
            .collect()
    }

    /// Independent Gaussian draws per point.
    pub fn sample(&self, s: &[f64], n: usize, seed: u64) -> Result<BlockMatrix> {
        let pred = self.predict(s)?;
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|r| {
                let mut g = rng::stream(seed, "kriging-sample", r as u64);
                pred.iter()
                    .map(|(m, v)| {
                        let e: f64 = StandardNormal.sample(&mut g);
                        m + v.sqrt() * e
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        BlockMatrix::new(n, self.points(), rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn noiseless_line_recovered_at_any_quantile() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![1.0, i as f64 / 10.0, ((i * 7) % 11) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[1] + 1.0).collect();
        for q in [0.1, 0.5, 0.9] {
            let c = quantile_regression(&x, &y, q).unwrap();
            assert!((c[0] - 1.0).abs() < 1e-4 && (c[1] - 2.0).abs() < 1e-4 && c[2].abs() < 1e-4, "{c:?}");
        }
    }

    #[test]
    fn uniform_noise_quantile_line() {
        let mut g = rng::stream(1, "t", 0);
        let q = 0.8;
        let x: Vec<Vec<f64>> = (0..10_000).map(|_| vec![1.0, g.random::<f64>()]).collect();
        // y = 1 + 2s + U(0, 1) ⇒ q-quantile line is (1 + q) + 2s
        let y: Vec<f64> = x.iter().map(|r| 1.0 + 2.0 * r[1] + g.random::<f64>()).collect();
        let c = quantile_regression(&x, &y, q).unwrap();
        assert!((c[0] - 1.8).abs() < 0.05 && (c[1] - 2.0).abs() < 0.05, "{c:?}");
    }

    #[test]
    fn median_regression_minimizes_absolute_deviation() {
        let mut g = rng::stream(2, "t", 0);
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![1.0, g.random::<f64>()]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[1] + (g.random::<f64>() - 0.5).powi(3) * 8.0).collect();
        let c = quantile_regression(&x, &y, 0.5).unwrap();
        let lad = |c: &[f64]| pinball_objective(&x, &y, c, 0.5);
        let best = lad(&c);
        for d in [[1e-3, 0.0], [-1e-3, 0.0], [0.0, 1e-3], [0.0, -1e-3]] {
            assert!(lad(&[c[0] + d[0], c[1] + d[1]]) >= best - 1e-9);
        }
    }

    #[test]
    fn rank_deficient_design_is_flagged() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, 2.0, i as f64]).collect();
        let x: Vec<Vec<f64>> = x.into_iter().map(|r| vec![r[0], r[0] * 2.0, r[2]]).collect();
        let y: Vec<f64> = (0..10).map(f64::from).collect();
        assert!(quantile_regression(&x, &y, 0.5).is_err());
    }

    #[test]
    fn upper_tail_counts_and_order() {
        assert_eq!(retained_count(500, 0.99), 5);
        assert_eq!(retained_count(500, 0.95), 25);
        assert_eq!(retained_count(500, 0.0), 500);
        assert_eq!(upper_tail(&[3.0, 9.0, 1.0, 7.0, 5.0], 0.6), vec![9.0, 7.0]);
    }
}
