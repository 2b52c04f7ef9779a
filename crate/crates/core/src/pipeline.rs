//! End-to-end model: fit marginals and dependence from raw replicated
//! observations, then sample, compute return levels and exceedance
//! probabilities at new control inputs.

use crate::brownresnick::{BrownResnickModel, ExactSampler};
use crate::data::{BlockMatrix, DesignMatrix, ExtremeDataset, RawObservations};
use crate::dependence::{equal_count_bin_edges, f_madogram, BootstrapOptions, DependenceEstimate, DEFAULT_BINS};
use crate::error::{MesmError, Result};
use crate::gev::{BlockMaximaConfig, GevParams};
use crate::likelihood::{composite_loglik, fit_tau, TauFitDiagnostics, TauFitOptions};
use crate::marginal::{cell_noise, fit_cells, MarginalField, MarginalFieldRecord};
use crate::rng;
use crate::space::{CliqueGraph, CriticalPointSpace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub block_size: usize,
    pub order: usize,
    pub q_g: f64,
    pub tau: TauFitOptions,
    /// Design indices excluded from the dependence fit and scored afterwards.
    pub holdout: Vec<usize>,
    /// Bootstrap resamples for the madogram diagnostic (0 disables it).
    pub diagnostic_resamples: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            block_size: 25,
            order: 2,
            q_g: 0.02,
            tau: TauFitOptions::default(),
            holdout: Vec::new(),
            diagnostic_resamples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub blocks_per_design: usize,
    pub pooled_blocks: usize,
    pub surfaces_converged: bool,
    pub tau: TauFitDiagnostics,
    pub composite_loglik: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_loglik_per_block: Option<f64>,
    /// F-madogram of the pooled unit-Fréchet block maxima.
    pub madogram: Vec<DependenceEstimate>,
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone)]
pub struct FittedMesm {
    space: CriticalPointSpace,
    marginal: MarginalField,
    dependence: BrownResnickModel,
    graph: CliqueGraph,
    block_size: usize,
    diagnostics: FitDiagnostics,
    sampler: ExactSampler,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphRecord {
    #[serde(rename = "H")]
    pub order: usize,
    #[serde(rename = "q_G")]
    pub q_g: f64,
    pub total: u64,
    pub cliques: Vec<Vec<usize>>,
    pub deltas: Vec<f64>,
}

/// On-disk model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub space: CriticalPointSpace,
    pub marginal_field: MarginalFieldRecord,
    pub tau: Vec<f64>,
    pub graph: GraphRecord,
    pub block_size: usize,
    pub diagnostics: FitDiagnostics,
}

/// Map block maxima to unit Fréchet with the per-cell MLEs; rows are
/// `(design, block)` pairs for the selected designs.
pub fn to_unit_frechet(extremes: &ExtremeDataset, cells: &[GevParams], designs: &[usize]) -> Result<BlockMatrix> {
    let j_total = extremes.points();
    let mut values = Vec::with_capacity(designs.len() * extremes.blocks() * j_total);
    for &n in designs {
        for b in 0..extremes.blocks() {
            for j in 0..j_total {
                let z = cells[n * j_total + j]
                    .to_unit_frechet(extremes.get(n, b, j))
                    .map_err(|e| MesmError::Cell {
                        design: n,
                        point: j,
                        source: Box::new(e),
                    })?;
                values.push(z);
            }
        }
    }
    BlockMatrix::new(designs.len() * extremes.blocks(), j_total, values)
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t = Instant::now();
    let out = f().map_err(|e| e.at_stage(stage))?;
    timings.push(StageTiming {
        stage: stage.to_string(),
        seconds: t.elapsed().as_secs_f64(),
    });
    Ok(out)
}

/// Two-step fit: block maxima → per-cell GEV MLEs → marginal surfaces, then
/// unit-Fréchet transform → clique graph → length scales by truncated
/// composite likelihood.
pub fn fit_mesm(
    designs: &DesignMatrix,
    raw: &RawObservations,
    space: &CriticalPointSpace,
    opts: &FitOptions,
) -> Result<FittedMesm> {
    let mut timings = Vec::new();
    timed(&mut timings, "validate", || {
        if raw.designs() != designs.len() {
            return Err(MesmError::invalid(format!(
                "{} design rows but observations for {} designs",
                designs.len(),
                raw.designs()
            )));
        }
        if raw.points() != space.len() {
            return Err(MesmError::invalid(format!(
                "observations cover {} points but the space has {}",
                raw.points(),
                space.len()
            )));
        }
        if opts.holdout.iter().any(|&n| n >= designs.len()) {
            return Err(MesmError::invalid("holdout design index out of range"));
        }
        space.require_coordinates("the Brown-Resnick model")?;
        Ok(())
    })?;
    let config = BlockMaximaConfig::new(opts.block_size).map_err(|e| e.at_stage("block-maxima"))?;
    let extremes = timed(&mut timings, "block-maxima", || raw.block_maxima(config))?;
    let fits = timed(&mut timings, "gev-cells", || fit_cells(&extremes))?;
    let noise = cell_noise(&fits, space.len());
    let cells: Vec<GevParams> = fits.into_iter().map(|f| f.params).collect();
    let marginal = timed(&mut timings, "marginal-surfaces", || {
        MarginalField::from_cells(std::sync::Arc::new(designs.clone()), cells.clone(), Some(noise), space.len())
    })?;
    let train: Vec<usize> = (0..designs.len()).filter(|n| !opts.holdout.contains(n)).collect();
    if train.is_empty() {
        return Err(MesmError::invalid("every design is held out").at_stage("validate"));
    }
    let pooled = timed(&mut timings, "transform", || to_unit_frechet(&extremes, &cells, &train))?;
    let graph = timed(&mut timings, "graph", || space.generate_graph(opts.order, opts.q_g))?;
    let tau_fit = timed(&mut timings, "dependence", || fit_tau(&pooled, space, &graph, &opts.tau))?;
    let holdout_loglik_per_block = if opts.holdout.is_empty() {
        None
    } else {
        let held = to_unit_frechet(&extremes, &cells, &opts.holdout).map_err(|e| e.at_stage("holdout"))?;
        let v = composite_loglik(&tau_fit.model, &held, space, &graph).map_err(|e| e.at_stage("holdout"))?;
        Some(v.value / held.rows() as f64)
    };
    let madogram = timed(&mut timings, "diagnostics", || {
        if opts.diagnostic_resamples == 0 || pooled.rows() < 20 || space.len() < 2 {
            return Ok(Vec::new());
        }
        let edges = equal_count_bin_edges(space, DEFAULT_BINS)?;
        let boot = BootstrapOptions {
            resamples: opts.diagnostic_resamples,
            level: 0.95,
            seed: rng::derive_seed(opts.seed, "fit-madogram", 0),
        };
        f_madogram(&pooled, space, &edges, &boot)
    })?;
    let sampler = timed(&mut timings, "sampler", || tau_fit.model.sampler(space.require_coordinates("sampling")?))?;
    let diagnostics = FitDiagnostics {
        blocks_per_design: extremes.blocks(),
        pooled_blocks: pooled.rows(),
        surfaces_converged: marginal.all_converged(),
        tau: tau_fit.diagnostics,
        composite_loglik: tau_fit.loglik,
        holdout_loglik_per_block,
        madogram,
        timings,
    };
    Ok(FittedMesm {
        space: space.clone(),
        marginal,
        dependence: tau_fit.model,
        graph,
        block_size: opts.block_size,
        diagnostics,
        sampler,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub index: usize,
    pub argmax: usize,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceReport {
    /// Monte Carlo `P(Y_j ≥ κ_j)`.
    pub marginal: Vec<f64>,
    /// Closed form `1 − F_j(κ_j)`.
    pub marginal_exact: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Monte Carlo `P(∃ j: Y_j ≥ κ_j)`.
    pub joint: f64,
    pub samples: usize,
}

impl FittedMesm {
    pub fn space(&self) -> &CriticalPointSpace {
        &self.space
    }

    pub fn marginal(&self) -> &MarginalField {
        &self.marginal
    }

    pub fn dependence(&self) -> &BrownResnickModel {
        &self.dependence
    }

    pub fn graph(&self) -> &CliqueGraph {
        &self.graph
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn points(&self) -> usize {
        self.space.len()
    }

    pub fn predict_marginals(&self, s: &[f64]) -> Result<Vec<GevParams>> {
        self.marginal.predict_marginals(s)
    }

    /// `n` joint draws of the block maxima at `s`, in response units.
    pub fn sample_extremes(&self, s: &[f64], n: usize, seed: u64) -> Result<BlockMatrix> {
        let margins = self.predict_marginals(s)?;
        let z = self.sampler.sample_many(n, seed, "extremes")?;
        let values = z
            .values()
            .par_chunks(self.points())
            .map(|row| {
                row.iter()
                    .zip(&margins)
                    .map(|(z, m)| m.from_unit_frechet(*z))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        BlockMatrix::new(n, self.points(), values.concat())
    }

    /// `R`-block return level of point `j` at `s`.
    pub fn return_level(&self, s: &[f64], j: usize, r: u64) -> Result<f64> {
        if j >= self.points() {
            return Err(MesmError::invalid(format!("point index {j} out of range")));
        }
        self.predict_marginals(s)?[j].return_level(r)
    }

    /// For every control point, the critical point with the largest return level.
    pub fn return_level_scan(&self, points: &[Vec<f64>], r: u64) -> Result<Vec<ScanRow>> {
        points
            .par_iter()
            .enumerate()
            .map(|(index, s)| {
                let levels = self
                    .predict_marginals(s)?
                    .iter()
                    .map(|m| m.return_level(r))
                    .collect::<Result<Vec<f64>>>()?;
                let (argmax, level) = levels
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (j, v)| if v > b.1 { (j, v) } else { b });
                Ok(ScanRow { index, argmax, level })
            })
            .collect()
    }

    pub fn exceedance_probability(&self, s: &[f64], tolerances: &[f64], n: usize, seed: u64) -> Result<ExceedanceReport> {
        if tolerances.len() != self.points() {
            return Err(MesmError::invalid(format!(
                "{} tolerances for {} critical points",
                tolerances.len(),
                self.points()
            )));
        }
        if n == 0 {
            return Err(MesmError::invalid("exceedance estimation needs at least one sample"));
        }
        let margins = self.predict_marginals(s)?;
        let draws = self.sample_extremes(s, n, seed)?;
        let mut hits = vec![0usize; self.points()];
        let mut any = 0usize;
        for r in 0..n {
            let mut hit = false;
            for (j, (y, k)) in draws.row(r).iter().zip(tolerances).enumerate() {
                if y >= k {
                    hits[j] += 1;
                    hit = true;
                }
            }
            any += usize::from(hit);
        }
        let nf = n as f64;
        let marginal: Vec<f64> = hits.iter().map(|h| *h as f64 / nf).collect();
        Ok(ExceedanceReport {
            standard_errors: marginal.iter().map(|p| (p * (1.0 - p) / nf).sqrt()).collect(),
            marginal_exact: margins.iter().zip(tolerances).map(|(m, k)| m.sf(*k)).collect(),
            marginal,
            joint: any as f64 / nf,
            samples: n,
        })
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            version: MODEL_VERSION,
            space: self.space.clone(),
            marginal_field: self.marginal.to_record(),
            tau: self.dependence.tau().to_vec(),
            graph: GraphRecord {
                order: self.graph.order,
                q_g: self.graph.q_g,
                total: self.graph.total,
                cliques: self.graph.cliques.clone(),
                deltas: self.graph.deltas.clone(),
            },
            block_size: self.block_size,
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        if doc.version != MODEL_VERSION {
            return Err(MesmError::invalid(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                doc.version
            )));
        }
        let marginal = MarginalField::from_record(doc.marginal_field)?;
        if marginal.points() != doc.space.len() {
            return Err(MesmError::invalid("marginal field and space disagree on the point count"));
        }
        let graph = CliqueGraph {
            order: doc.graph.order,
            q_g: doc.graph.q_g,
            total: doc.graph.total,
            cliques: doc.graph.cliques,
            deltas: doc.graph.deltas,
        };
        graph.validate(doc.space.len())?;
        let dependence = BrownResnickModel::new(doc.tau)?;
        let sampler = dependence.sampler(doc.space.require_coordinates("sampling")?)?;
        Ok(Self {
            space: doc.space,
            marginal,
            dependence,
            graph,
            block_size: doc.block_size,
            diagnostics: doc.diagnostics,
            sampler,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(s)?)
    }
}

/// A `k × k` grid over two design coordinates, other coordinates at the
/// center of their range.
pub fn grid_scan_points(designs: &DesignMatrix, k: usize, dims: (usize, usize)) -> Result<Vec<Vec<f64>>> {
    let d = designs.dim();
    if k < 2 || dims.0 >= d || dims.1 >= d || dims.0 == dims.1 {
        return Err(MesmError::invalid("grid scan needs k >= 2 and two distinct valid dimensions"));
    }
    let (lo, hi) = (designs.lower(), designs.upper());
    let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let at = |dim: usize, i: usize| lo[dim] + (hi[dim] - lo[dim]) * i as f64 / (k - 1) as f64;
    Ok((0..k * k)
        .map(|i| {
            let mut s = center.clone();
            s[dims.0] = at(dims.0, i / k);
            s[dims.1] = at(dims.1, i % k);
            s
        })
        .collect())
}
