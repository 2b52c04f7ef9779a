//! Synthetic data: maximin Latin hypercube designs, the unit-square
//! Brown-Resnick recovery study, and a fuselage-like generator with a known
//! generating law.

use crate::brownresnick::BrownResnickModel;
use crate::data::{BlockMatrix, DesignMatrix, RawObservations};
use crate::error::{MesmError, Result};
use crate::gev::GevParams;
use crate::rng;
use crate::space::{CriticalPointSpace, Metric};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..points.len() {
        for b in (a + 1)..points.len() {
            let d: f64 = points[a].iter().zip(&points[b]).map(|(x, y)| (x - y).powi(2)).sum();
            best = best.min(d);
        }
    }
    best.sqrt()
}

/// A random Latin hypercube in the unit cube: one point per stratum on every axis.
pub fn random_lhd<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[k] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

/// Best of `candidates` random Latin hypercubes by minimum pairwise distance
/// (measured in the unit cube), scaled to the given bounds.
pub fn maximin_lhd(
    n: usize,
    lower: &[f64],
    upper: &[f64],
    seed: u64,
    candidates: usize,
) -> Result<DesignMatrix> {
    let d = lower.len();
    if n < 2 || d == 0 || upper.len() != d || candidates == 0 {
        return Err(MesmError::invalid(
            "maximin LHD needs n >= 2, matching non-empty bounds and at least one candidate",
        ));
    }
    let best = (0..candidates)
        .into_par_iter()
        .map(|c| {
            let pts = random_lhd(n, d, &mut rng::stream(seed, "lhd", c as u64));
            (min_pairwise_distance(&pts), c, pts)
        })
        .reduce_with(|a, b| {
            if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                b
            } else {
                a
            }
        })
        .expect("at least one candidate");
    let rows = best
        .2
        .into_iter()
        .map(|p| {
            p.iter()
                .zip(lower.iter().zip(upper))
                .map(|(u, (lo, hi))| lo + u * (hi - lo))
                .collect()
        })
        .collect();
    DesignMatrix::new(rows, lower.to_vec(), upper.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStudyConfig {
    pub points: usize,
    pub blocks: usize,
    pub tau: Vec<f64>,
    pub seed: u64,
}

impl Default for SimStudyConfig {
    fn default() -> Self {
        Self {
            points: 20,
            blocks: 20,
            tau: vec![0.5, 0.02],
            seed: 0,
        }
    }
}

/// Uniform points on the unit square and `blocks` exact Brown-Resnick draws.
pub fn gen_simulation_study(cfg: &SimStudyConfig) -> Result<(CriticalPointSpace, BlockMatrix)> {
    let model = BrownResnickModel::new(cfg.tau.clone())?;
    let mut g = rng::stream(cfg.seed, "simstudy-points", 0);
    let coords: Vec<[f64; 2]> = (0..cfg.points)
        .map(|_| [g.random::<f64>(), g.random::<f64>()])
        .collect();
    let space = CriticalPointSpace::from_coordinates(None, coords.clone(), Metric::Euclidean)?;
    let data = model.sampler(&coords)?.sample_many(cfg.blocks, cfg.seed, "simstudy-draws")?;
    Ok((space, data))
}

/// Generating law of the fuselage-like dataset. Block maxima over
/// `block_size` replicates at point `j` and design `s` follow
/// `GEV(ξ_j, μ_j(s), σ_j(s))` with, for `v = ` s rescaled to `[-1, 1]^D`
/// and `c_j = cos(2πj/J)`:
///
/// * `ξ_j = shape_base + shape_amp · sin(2πj/J)`
/// * `μ_j(s) = loc_base + loc_amp · c_j + Σ_d loc_slope · cos(2πj/J + 2πd/D) · v_d + loc_bend · v_1 v_2`
/// * `ln σ_j(s) = ln scale_base + scale_amp · c_j + scale_slope · (v_1 + v_2)/2`
///
/// and the dependence across points is Brown-Resnick with length scales `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuselageTruth {
    pub points: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub block_size: usize,
    pub tau: Vec<f64>,
    pub shape_base: f64,
    pub shape_amp: f64,
    pub loc_base: f64,
    pub loc_amp: f64,
    pub loc_slope: f64,
    pub loc_bend: f64,
    pub scale_base: f64,
    pub scale_amp: f64,
    pub scale_slope: f64,
}

impl FuselageTruth {
    fn rescaled(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| 2.0 * (v - lo) / (hi - lo) - 1.0)
            .collect()
    }

    /// Law of the block maxima at design `s`, point `j`.
    pub fn block_maxima_params(&self, s: &[f64], j: usize) -> Result<GevParams> {
        if s.len() != self.lower.len() || j >= self.points {
            return Err(MesmError::invalid("design dimension or point index out of range"));
        }
        let v = self.rescaled(s);
        let d_total = v.len() as f64;
        let angle = 2.0 * PI * j as f64 / self.points as f64;
        let c = angle.cos();
        let shape = self.shape_base + self.shape_amp * angle.sin();
        let slope: f64 = v
            .iter()
            .enumerate()
            .map(|(d, vd)| self.loc_slope * (angle + 2.0 * PI * d as f64 / d_total).cos() * vd)
            .sum();
        let bend = if v.len() >= 2 { self.loc_bend * v[0] * v[1] } else { 0.0 };
        let location = self.loc_base + self.loc_amp * c + slope + bend;
        let tilt = if v.len() >= 2 { 0.5 * (v[0] + v[1]) } else { v[0] };
        let scale = (self.scale_base.ln() + self.scale_amp * c + self.scale_slope * tilt).exp();
        GevParams::new(shape, location, scale)
    }

    /// Law of a single replicate: the GEV whose `block_size`-fold maximum is
    /// [`Self::block_maxima_params`].
    pub fn replicate_params(&self, s: &[f64], j: usize) -> Result<GevParams> {
        let p = self.block_maxima_params(s, j)?;
        let t = self.block_size as f64;
        let (location, scale) = if p.shape.abs() < crate::gev::GUMBEL_SWITCH {
            (p.location - p.scale * t.ln(), p.scale)
        } else {
            let f = t.powf(-p.shape);
            (p.location - p.scale * (1.0 - f) / p.shape, p.scale * f)
        };
        GevParams::new(p.shape, location, scale)
    }
}

#[derive(Debug, Clone)]
pub struct FuselageConfig {
    pub designs: usize,
    pub replicates: usize,
    pub points: usize,
    pub dim: usize,
    pub lower: f64,
    pub upper: f64,
    pub block_size: usize,
    pub tau: Vec<f64>,
    pub seed: u64,
    pub lhd_candidates: usize,
}

impl Default for FuselageConfig {
    fn default() -> Self {
        Self {
            designs: 30,
            replicates: 500,
            points: 128,
            dim: 20,
            lower: -200.0,
            upper: 200.0,
            block_size: 25,
            tau: vec![6.0, 9.0],
            seed: 0,
            lhd_candidates: 200,
        }
    }
}

impl FuselageConfig {
    pub fn truth(&self) -> FuselageTruth {
        FuselageTruth {
            points: self.points,
            lower: vec![self.lower; self.dim],
            upper: vec![self.upper; self.dim],
            block_size: self.block_size,
            tau: self.tau.clone(),
            shape_base: 0.15,
            shape_amp: 0.05,
            loc_base: 50.0,
            loc_amp: 10.0,
            loc_slope: 6.0,
            loc_bend: 3.0,
            scale_base: 4.0,
            scale_amp: 0.15,
            scale_slope: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FuselageDataset {
    pub designs: DesignMatrix,
    pub space: CriticalPointSpace,
    pub observations: RawObservations,
    pub truth: FuselageTruth,
}

/// `points` equispaced critical points on a circle with unit spacing, a
/// maximin LHD of designs, and replicates whose block maxima follow
/// [`FuselageTruth`].
pub fn gen_synthetic_fuselage(cfg: &FuselageConfig) -> Result<FuselageDataset> {
    let designs = maximin_lhd(
        cfg.designs,
        &vec![cfg.lower; cfg.dim],
        &vec![cfg.upper; cfg.dim],
        rng::derive_seed(cfg.seed, "fuselage-designs", 0),
        cfg.lhd_candidates,
    )?;
    gen_synthetic_fuselage_at(cfg, designs)
}

/// As [`gen_synthetic_fuselage`] at given designs (e.g. a held-out test set).
pub fn gen_synthetic_fuselage_at(cfg: &FuselageConfig, designs: DesignMatrix) -> Result<FuselageDataset> {
    if cfg.block_size == 0 || cfg.replicates < cfg.block_size {
        return Err(MesmError::invalid("replicates must cover at least one block"));
    }
    let truth = cfg.truth();
    let space = CriticalPointSpace::circle(cfg.points, cfg.points as f64)?;
    let coords = space.require_coordinates("fuselage generation")?.to_vec();
    let sampler = BrownResnickModel::new(cfg.tau.clone())?.sampler(&coords)?;
    let (n_total, l_total, j_total) = (designs.len(), cfg.replicates, cfg.points);
    let per_design: Vec<Vec<f64>> = (0..n_total)
        .into_par_iter()
        .map(|n| {
            let s = designs.row(n);
            let laws: Vec<GevParams> = (0..j_total)
                .map(|j| truth.replicate_params(s, j))
                .collect::<Result<_>>()?;
            let z = sampler.sample_many(l_total, rng::derive_seed(cfg.seed, "fuselage-draws", n as u64), "replicate")?;
            let mut out = Vec::with_capacity(l_total * j_total);
            for l in 0..l_total {
                for (j, law) in laws.iter().enumerate() {
                    out.push(law.from_unit_frechet(z.get(l, j))?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let observations = RawObservations::new(n_total, l_total, j_total, per_design.concat())?;
    Ok(FuselageDataset {
        designs,
        space,
        observations,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lhd_is_stratified() {
        let d = maximin_lhd(30, &[0.0; 20], &[1.0; 20], 1, 20).unwrap();
        for k in 0..20 {
            let mut strata: Vec<usize> = d.rows().iter().map(|r| (r[k] * 30.0).floor() as usize).collect();
            strata.sort();
            assert_eq!(strata, (0..30).collect::<Vec<_>>());
        }
        let two = maximin_lhd(2, &[0.0], &[1.0], 2, 5).unwrap();
        assert_ne!((two.row(0)[0] * 2.0).floor(), (two.row(1)[0] * 2.0).floor());
    }

    #[test]
    fn maximin_beats_random_on_average() {
        let mut better = 0.0;
        for seed in 0..20 {
            let m = maximin_lhd(15, &[0.0; 3], &[1.0; 3], seed, 50).unwrap();
            let r = random_lhd(15, 3, &mut rng::stream(seed, "plain", 0));
            better += min_pairwise_distance(m.rows()) - min_pairwise_distance(&r);
        }
        assert!(better > 0.0);
    }

    #[test]
    fn simulation_study_defaults_and_reproducibility() {
        let cfg = SimStudyConfig::default();
        assert_eq!((cfg.points, cfg.blocks, cfg.tau.as_slice()), (20, 20, &[0.5, 0.02][..]));
        let (s1, d1) = gen_simulation_study(&cfg).unwrap();
        let (s2, d2) = gen_simulation_study(&cfg).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(s1.coordinates(), s2.coordinates());
        assert_eq!((d1.rows(), d1.cols()), (20, 20));
    }

    #[test]
    fn replicate_law_maxes_to_block_law() {
        let truth = FuselageConfig::default().truth();
        let s = vec![37.0; 20];
        for j in [0, 17, 64] {
            let b = truth.block_maxima_params(&s, j).unwrap();
            let r = truth.replicate_params(&s, j).unwrap();
            for y in [40.0, 55.0, 90.0] {
                assert!((r.cdf(y).powi(25) - b.cdf(y)).abs() < 1e-12);
            }
        }
    }
}
