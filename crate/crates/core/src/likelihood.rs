//! Pairwise composite likelihood restricted to a clique graph, and the
//! simplex fit of the Brown-Resnick length scales.

use crate::brownresnick::{husler_reiss, BrownResnickModel};
use crate::data::BlockMatrix;
use crate::error::{MesmError, Result};
use crate::metrics::l1_score;
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng;
use crate::space::{CliqueGraph, CriticalPointSpace};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Per-term log-density floor.
pub const LOG_DENSITY_FLOOR: f64 = -700.0;
const PARALLEL_TERMS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeValue {
    pub value: f64,
    pub terms: usize,
    /// Terms that fell below [`LOG_DENSITY_FLOOR`] and were clamped to it.
    pub clamped: usize,
}

/// Deterministic pairwise (tree) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn check_data(data: &BlockMatrix, space: &CriticalPointSpace, graph: &CliqueGraph) -> Result<()> {
    if graph.order != 2 {
        return Err(MesmError::invalid(format!(
            "composite likelihood is implemented for pairs only (H = 2), got H = {}",
            graph.order
        )));
    }
    if data.cols() != space.len() {
        return Err(MesmError::invalid(format!(
            "{} data columns but {} critical points",
            data.cols(),
            space.len()
        )));
    }
    if data.rows() == 0 {
        return Err(MesmError::invalid("composite likelihood needs at least one block"));
    }
    graph.validate(space.len())?;
    if let Some(bad) = data.values().iter().find(|z| !(**z > 0.0) || !z.is_finite()) {
        return Err(MesmError::invalid(format!(
            "unit-Fréchet data must be positive and finite, found {bad}"
        )));
    }
    Ok(())
}

fn evaluate(model: &BrownResnickModel, data: &BlockMatrix, coords: &[[f64; 2]], graph: &CliqueGraph) -> Result<CompositeValue> {
    let a: Vec<f64> = graph
        .cliques
        .iter()
        .map(|c| model.dependence_param(coords[c[0]], coords[c[1]]))
        .collect();
    let n_cliques = graph.cliques.len();
    let total = data.rows() * n_cliques;
    let term = |t: usize| -> Result<f64> {
        let (b, c) = (t / n_cliques, t % n_cliques);
        let clique = &graph.cliques[c];
        husler_reiss::log_density(a[c], data.get(b, clique[0]), data.get(b, clique[1]))
    };
    let terms: Vec<f64> = if total > PARALLEL_TERMS {
        (0..total).into_par_iter().map(term).collect::<Result<_>>()?
    } else {
        (0..total).map(term).collect::<Result<_>>()?
    };
    let mut clamped = 0;
    let terms: Vec<f64> = terms
        .into_iter()
        .map(|v| {
            if v < LOG_DENSITY_FLOOR || v.is_nan() {
                clamped += 1;
                LOG_DENSITY_FLOOR
            } else {
                v
            }
        })
        .collect();
    Ok(CompositeValue {
        value: pairwise_sum(&terms),
        terms: total,
        clamped,
    })
}

/// `Σ_b Σ_{(i,k) ∈ G} ln f(z_i^(b), z_k^(b); τ)` over the rows (blocks) of `data`.
pub fn composite_loglik(
    model: &BrownResnickModel,
    data: &BlockMatrix,
    space: &CriticalPointSpace,
    graph: &CliqueGraph,
) -> Result<CompositeValue> {
    check_data(data, space, graph)?;
    let coords = space.require_coordinates("the Brown-Resnick likelihood")?;
    evaluate(model, data, coords, graph)
}

#[derive(Debug, Clone)]
pub struct TauFitOptions {
    pub tau0: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub restarts: usize,
    pub seed: u64,
    pub simplex: NelderMeadOptions,
}

impl Default for TauFitOptions {
    fn default() -> Self {
        Self {
            tau0: vec![1.0, 1.0],
            lower: 1e-3,
            upper: 1e2,
            restarts: 3,
            seed: 0,
            simplex: NelderMeadOptions {
                max_iter: 2000,
                xatol: 1e-7,
                fatol: 1e-9,
                initial_step: 0.5,
                lower: None,
                upper: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauFitDiagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    /// Total likelihood terms evaluated across all restarts.
    pub term_evaluations: u64,
    pub clamped_terms: usize,
    pub converged: bool,
    /// Per length scale: whether the estimate sits within 1e-6 (log scale) of a bound.
    pub at_bound: Vec<bool>,
    pub restart_values: Vec<f64>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TauFit {
    pub model: BrownResnickModel,
    pub loglik: f64,
    pub initial_loglik: f64,
    pub diagnostics: TauFitDiagnostics,
}

/// Maximize the truncated composite likelihood over `ln τ` with a bounded
/// simplex search. Restart 0 starts at `tau0`; later restarts start at
/// seeded log-uniform points within the bounds.
pub fn fit_tau(
    data: &BlockMatrix,
    space: &CriticalPointSpace,
    graph: &CliqueGraph,
    opts: &TauFitOptions,
) -> Result<TauFit> {
    let started = Instant::now();
    check_data(data, space, graph)?;
    let coords = space.require_coordinates("the Brown-Resnick likelihood")?;
    if !(opts.lower > 0.0 && opts.upper > opts.lower) {
        return Err(MesmError::invalid(format!(
            "τ bounds must satisfy 0 < lower < upper, got [{}, {}]",
            opts.lower, opts.upper
        )));
    }
    let initial_model = BrownResnickModel::new(opts.tau0.clone())?;
    if opts.tau0.iter().any(|t| *t < opts.lower || *t > opts.upper) {
        return Err(MesmError::invalid(format!(
            "τ0 {:?} lies outside [{}, {}]",
            opts.tau0, opts.lower, opts.upper
        )));
    }
    let initial = evaluate(&initial_model, data, coords, graph)?;
    let (lo, hi) = (opts.lower.ln(), opts.upper.ln());
    let dim = opts.tau0.len();
    let simplex = NelderMeadOptions {
        lower: Some(vec![lo; dim]),
        upper: Some(vec![hi; dim]),
        ..opts.simplex.clone()
    };
    let objective = |x: &[f64]| -> f64 {
        let model = match BrownResnickModel::new(x.iter().map(|v| v.exp()).collect()) {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        match evaluate(&model, data, coords, graph) {
            Ok(v) => -v.value,
            Err(_) => f64::INFINITY,
        }
    };
    let runs: Vec<_> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let x0: Vec<f64> = if r == 0 {
                opts.tau0.iter().map(|t| t.ln()).collect()
            } else {
                let mut g = rng::stream(opts.seed, "tau-restart", r as u64);
                (0..dim).map(|_| g.random_range(lo..hi)).collect()
            };
            nelder_mead(objective, &x0, &simplex)
        })
        .collect();
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .map(|(_, r)| r)
        .expect("at least one restart");
    if !best.value.is_finite() {
        return Err(MesmError::NotConverged {
            iterations: best.iterations,
            best_value: best.value,
            best_point: best.x.iter().map(|v| v.exp()).collect(),
        });
    }
    let model = BrownResnickModel::new(best.x.iter().map(|v| v.exp()).collect())?;
    let fin = evaluate(&model, data, coords, graph)?;
    let evaluations: usize = runs.iter().map(|r| r.evaluations).sum();
    let diagnostics = TauFitDiagnostics {
        iterations: runs.iter().map(|r| r.iterations).sum(),
        evaluations,
        term_evaluations: evaluations as u64 * fin.terms as u64,
        clamped_terms: fin.clamped,
        converged: best.converged,
        at_bound: best.x.iter().map(|v| (v - lo).abs() < 1e-6 || (hi - v).abs() < 1e-6).collect(),
        restart_values: runs.iter().map(|r| -r.value).collect(),
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok(TauFit {
        model,
        loglik: fin.value,
        initial_loglik: initial.value,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q_g: f64,
    pub replication: usize,
    pub score: f64,
    pub seconds: f64,
    pub converged: bool,
    pub cliques: usize,
    pub evaluations: usize,
    pub term_evaluations: u64,
    pub tau_hat: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSummary {
    pub q_g: f64,
    pub mean_score: f64,
    pub median_score: f64,
    pub best_score: f64,
    pub mean_seconds: f64,
    pub mean_term_evaluations: f64,
}

/// Fit τ on every replication for every `q_G` and score against the truth.
/// Each replication carries its own critical points. Cells run one after
/// another so that their wall times are comparable.
pub fn qg_sweep(
    replications: &[(CriticalPointSpace, BlockMatrix)],
    truth: &BrownResnickModel,
    q_list: &[f64],
    opts: &TauFitOptions,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(replications.len() * q_list.len());
    for (rep, (space, data)) in replications.iter().enumerate() {
        for &q in q_list {
            let graph = space.generate_graph(2, q)?;
            let cell_opts = TauFitOptions {
                seed: rng::derive_seed(opts.seed, "sweep", rep as u64),
                ..opts.clone()
            };
            let fit = fit_tau(data, space, &graph, &cell_opts)?;
            rows.push(SweepRow {
                q_g: q,
                replication: rep,
                score: l1_score(fit.model.tau(), truth.tau())?,
                seconds: fit.diagnostics.seconds,
                converged: fit.diagnostics.converged,
                cliques: graph.len(),
                evaluations: fit.diagnostics.evaluations,
                term_evaluations: fit.diagnostics.term_evaluations,
                tau_hat: fit.model.tau().to_vec(),
            });
        }
    }
    Ok(rows)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregate sweep rows per `q_G`, in first-appearance order.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut qs: Vec<f64> = Vec::new();
    for r in rows {
        if !qs.contains(&r.q_g) {
            qs.push(r.q_g);
        }
    }
    qs.into_iter()
        .map(|q| {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.q_g == q).collect();
            let n = cell.len() as f64;
            let scores: Vec<f64> = cell.iter().map(|r| r.score).collect();
            SweepSummary {
                q_g: q,
                mean_score: scores.iter().sum::<f64>() / n,
                median_score: median(scores.clone()),
                best_score: scores.iter().copied().fold(f64::INFINITY, f64::min),
                mean_seconds: cell.iter().map(|r| r.seconds).sum::<f64>() / n,
                mean_term_evaluations: cell.iter().map(|r| r.term_evaluations as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Metric;

    fn toy() -> (CriticalPointSpace, BlockMatrix) {
        let space = CriticalPointSpace::from_coordinates(
            None,
            vec![[0.0, 0.0], [0.3, 0.1], [0.9, 0.7]],
            Metric::Euclidean,
        )
        .unwrap();
        let data = BlockMatrix::from_rows(vec![
            vec![0.7, 1.9, 3.2],
            vec![5.0, 0.4, 1.1],
            vec![1.3, 1.2, 0.25],
            vec![12.0, 8.0, 0.9],
        ])
        .unwrap();
        (space, data)
    }

    /// Independent path: density as exp(−V)(V₁V₂ − V₁₂) with explicit partials.
    fn brute_log_density(a: f64, z1: f64, z2: f64) -> f64 {
        use crate::special::{norm_cdf, norm_pdf};
        let q1 = a / 2.0 + (z2 / z1).ln() / a;
        let q2 = a / 2.0 + (z1 / z2).ln() / a;
        let v = norm_cdf(q1) / z1 + norm_cdf(q2) / z2;
        let v1 = -norm_cdf(q1) / (z1 * z1) - norm_pdf(q1) / (a * z1 * z1) + norm_pdf(q2) / (a * z1 * z2);
        let v2 = -norm_cdf(q2) / (z2 * z2) - norm_pdf(q2) / (a * z2 * z2) + norm_pdf(q1) / (a * z1 * z2);
        let v12 = -norm_pdf(q1) / (a * z1 * z1 * z2);
        (-v + (v1 * v2 - v12).ln()).max(LOG_DENSITY_FLOOR)
    }

    #[test]
    fn matches_brute_force_on_toy() {
        let (space, data) = toy();
        let model = BrownResnickModel::new(vec![0.4, 0.7]).unwrap();
        let coords = space.coordinates().unwrap();
        for q in [0.34, 0.67, 1.0] {
            let graph = space.generate_graph(2, q).unwrap();
            let got = composite_loglik(&model, &data, &space, &graph).unwrap();
            let mut expect = 0.0;
            for b in 0..data.rows() {
                for c in &graph.cliques {
                    let d2 = (0..2)
                        .map(|k| ((coords[c[0]][k] - coords[c[1]][k]) / model.tau()[k]).powi(2))
                        .sum::<f64>();
                    let a = (2.0 * (1.0 - (-0.5 * d2).exp())).sqrt();
                    expect += brute_log_density(a, data.get(b, c[0]), data.get(b, c[1]));
                }
            }
            assert!((got.value - expect).abs() <= 1e-10 * expect.abs(), "{} vs {expect}", got.value);
            assert_eq!(got.terms, graph.len() * data.rows());
        }
    }

    #[test]
    fn single_term_equals_pair_density() {
        let (space, data) = toy();
        let model = BrownResnickModel::new(vec![0.4, 0.7]).unwrap();
        let graph = space.generate_graph(2, 0.1).unwrap();
        assert_eq!(graph.len(), 1);
        let one = BlockMatrix::from_rows(vec![data.row(0).to_vec()]).unwrap();
        let c = &graph.cliques[0];
        let coords = space.coordinates().unwrap();
        let expect = model
            .log_pairwise_density(coords[c[0]], coords[c[1]], one.get(0, c[0]), one.get(0, c[1]))
            .unwrap();
        assert_eq!(composite_loglik(&model, &one, &space, &graph).unwrap().value, expect);
    }

    #[test]
    fn rejects_nonpositive_data_and_higher_order() {
        let (space, _) = toy();
        let model = BrownResnickModel::new(vec![0.4, 0.7]).unwrap();
        let bad = BlockMatrix::from_rows(vec![vec![1.0, 0.0, 2.0]]).unwrap();
        let g = space.generate_graph(2, 1.0).unwrap();
        assert!(composite_loglik(&model, &bad, &space, &g).is_err());
        let g3 = space.generate_graph(3, 1.0).unwrap();
        let ok = BlockMatrix::from_rows(vec![vec![1.0, 1.5, 2.0]]).unwrap();
        assert!(composite_loglik(&model, &ok, &space, &g3).is_err());
    }

    #[test]
    fn complete_dependence_drives_tau_to_upper_bound() {
        let (space, _) = toy();
        let mut g = rng::stream(5, "t", 0);
        let rows = (0..30)
            .map(|_| {
                let z = 1.0 / g.random::<f64>().max(1e-12);
                vec![z; 3]
            })
            .collect();
        let data = BlockMatrix::from_rows(rows).unwrap();
        let graph = space.generate_graph(2, 1.0).unwrap();
        let fit = fit_tau(&data, &space, &graph, &TauFitOptions::default()).unwrap();
        assert!(fit.diagnostics.at_bound.iter().any(|b| *b), "{:?}", fit.model.tau());
        assert!(fit.loglik >= fit.initial_loglik);
    }

    #[test]
    fn pairwise_sum_handles_edges() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }
}
