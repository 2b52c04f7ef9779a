//! Distances between predicted and observed extremes, and the protocol that
//! scores fitted models on held-out block maxima.

use crate::baselines::{KrigingModel, QlrModel};
use crate::data::{BlockMatrix, DesignMatrix, ExtremeDataset};
use crate::error::{MesmError, Result};
use crate::pipeline::FittedMesm;
use crate::rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Empirical 1-Wasserstein distance between equal-size samples:
/// the mean absolute difference of order statistics.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MesmError::invalid(format!(
            "Wasserstein distance needs equal, non-empty sample sizes ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(sorted_distance(&a, &b))
}

fn sorted_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Percentage mean distance `|mean(a) − mean(b)| / |mean(a)|`, `a` the reference.
pub fn pmd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(MesmError::invalid("PMD needs non-empty samples"));
    }
    pmd_of_means(mean(a), mean(b))
}

fn pmd_of_means(reference: f64, other: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(MesmError::invalid("PMD is undefined for a zero reference mean"));
    }
    Ok((reference - other).abs() / reference.abs())
}

/// `‖τ̂ − τ‖₁`.
pub fn l1_score(tau_hat: &[f64], tau: &[f64]) -> Result<f64> {
    if tau_hat.len() != tau.len() {
        return Err(MesmError::invalid("τ vectors differ in length"));
    }
    Ok(tau_hat.iter().zip(tau).map(|(a, b)| (a - b).abs()).sum())
}

/// What a model offers at a control input.
pub enum Prediction {
    /// `n × J` draws of the outputs.
    Samples(BlockMatrix),
    /// A single value per output (no distributional prediction).
    Point(Vec<f64>),
}

pub trait Predictor: Sync {
    fn model_name(&self) -> String;
    fn parameter(&self) -> String;
    fn predict(&self, s: &[f64], n: usize, seed: u64) -> Result<Prediction>;
}

impl Predictor for FittedMesm {
    fn model_name(&self) -> String {
        "MESM".into()
    }
    fn parameter(&self) -> String {
        format!("T={},q_G={}", self.block_size(), self.graph().q_g)
    }
    fn predict(&self, s: &[f64], n: usize, seed: u64) -> Result<Prediction> {
        Ok(Prediction::Samples(self.sample_extremes(s, n, seed)?))
    }
}

impl Predictor for KrigingModel {
    fn model_name(&self) -> String {
        if self.q.is_some() { "QSK" } else { "SK" }.into()
    }
    fn parameter(&self) -> String {
        self.q.map(|q| format!("q={q}")).unwrap_or_default()
    }
    fn predict(&self, s: &[f64], n: usize, seed: u64) -> Result<Prediction> {
        Ok(Prediction::Samples(self.sample(s, n, seed)?))
    }
}

impl Predictor for QlrModel {
    fn model_name(&self) -> String {
        "QLR".into()
    }
    fn parameter(&self) -> String {
        format!("q={}", self.q)
    }
    fn predict(&self, s: &[f64], _n: usize, _seed: u64) -> Result<Prediction> {
        Ok(Prediction::Point(QlrModel::predict(self, s)))
    }
}

/// Held-out block maxima: `B × J` per test design.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub designs: Vec<Vec<f64>>,
    pub maxima: Vec<BlockMatrix>,
}

impl TestSet {
    pub fn new(designs: &DesignMatrix, extremes: &ExtremeDataset) -> Result<Self> {
        if designs.len() != extremes.designs() {
            return Err(MesmError::invalid("test designs and test block maxima disagree in count"));
        }
        Ok(Self {
            designs: designs.rows().to_vec(),
            maxima: (0..extremes.designs()).map(|n| extremes.design_block(n)).collect(),
        })
    }

    fn check(&self) -> Result<(usize, usize)> {
        let first = self
            .maxima
            .first()
            .ok_or_else(|| MesmError::invalid("empty test set"))?;
        let (b, j) = (first.rows(), first.cols());
        if self.designs.len() != self.maxima.len() || self.maxima.iter().any(|m| m.rows() != b || m.cols() != j) {
            return Err(MesmError::invalid("test blocks must share one shape"));
        }
        Ok((b, j))
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// Model samples of the test-set size drawn per test design, each scored separately.
    pub resamples: usize,
    /// Bootstrap resamples of the test blocks for the standard deviations.
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            resamples: 50,
            bootstrap: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Per critical point, averaged over test designs.
    pub per_point: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub parameter: String,
    /// Absent for models without distributional predictions.
    pub wd: Option<MetricSummary>,
    pub pmd: MetricSummary,
    /// Some output had zero predicted spread at some test design.
    pub degenerate: bool,
    pub train_seconds: f64,
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

struct DesignPrediction {
    /// Per point: sorted model sample chunks of the test size.
    chunks: Option<Vec<Vec<Vec<f64>>>>,
    /// Per point model mean (sample mean or point value).
    means: Vec<f64>,
    degenerate: bool,
}

fn predict_design(model: &dyn Predictor, s: &[f64], b: usize, j_total: usize, opts: &EvalOptions, t: usize) -> Result<DesignPrediction> {
    let seed = rng::derive_seed(opts.seed, "eval-predict", t as u64);
    match model.predict(s, b * opts.resamples, seed)? {
        Prediction::Point(v) => {
            if v.len() != j_total {
                return Err(MesmError::invalid("point prediction has the wrong number of outputs"));
            }
            Ok(DesignPrediction {
                chunks: None,
                means: v,
                degenerate: false,
            })
        }
        Prediction::Samples(m) => {
            if m.cols() != j_total || m.rows() != b * opts.resamples {
                return Err(MesmError::invalid("sample prediction has the wrong shape"));
            }
            let mut degenerate = false;
            let mut means = Vec::with_capacity(j_total);
            let chunks = (0..j_total)
                .map(|j| {
                    let col = m.column(j);
                    means.push(mean(&col));
                    if col.iter().all(|v| *v == col[0]) {
                        degenerate = true;
                    }
                    col.chunks(b)
                        .map(|c| {
                            let mut c = c.to_vec();
                            c.sort_by(f64::total_cmp);
                            c
                        })
                        .collect()
                })
                .collect();
            Ok(DesignPrediction {
                chunks: Some(chunks),
                means,
                degenerate,
            })
        }
    }
}

/// Per (design, point) WD and PMD for the test blocks selected by `rows`.
fn score(pred: &[DesignPrediction], test: &TestSet, rows: &[Vec<usize>]) -> Result<(Option<Vec<f64>>, Vec<f64>)> {
    let (_, j_total) = (test.maxima[0].rows(), test.maxima[0].cols());
    let n_t = test.maxima.len() as f64;
    let mut wd = pred[0].chunks.as_ref().map(|_| vec![0.0; j_total]);
    let mut pm = vec![0.0; j_total];
    for (t, p) in pred.iter().enumerate() {
        for j in 0..j_total {
            let mut obs: Vec<f64> = rows[t].iter().map(|&r| test.maxima[t].get(r, j)).collect();
            pm[j] += pmd_of_means(mean(&obs), p.means[j])? / n_t;
            if let (Some(w), Some(chunks)) = (wd.as_mut(), p.chunks.as_ref()) {
                obs.sort_by(f64::total_cmp);
                let avg = chunks[j].iter().map(|c| sorted_distance(&obs, c)).sum::<f64>() / chunks[j].len() as f64;
                w[j] += avg / n_t;
            }
        }
    }
    Ok((wd, pm))
}

/// Score each model on the test set: per critical point, WD and PMD are
/// averaged over test designs; the reported mean averages over points and
/// the standard deviation comes from resampling test blocks.
pub fn evaluate_models(models: &[&dyn Predictor], test: &TestSet, opts: &EvalOptions) -> Result<Vec<MetricReport>> {
    let (b, j_total) = test.check()?;
    if opts.resamples == 0 {
        return Err(MesmError::invalid("evaluation needs at least one model resample"));
    }
    models
        .iter()
        .map(|model| {
            let pred: Vec<DesignPrediction> = test
                .designs
                .par_iter()
                .enumerate()
                .map(|(t, s)| predict_design(*model, s, b, j_total, opts, t))
                .collect::<Result<_>>()?;
            let identity: Vec<Vec<usize>> = vec![(0..b).collect(); test.maxima.len()];
            let (wd, pm) = score(&pred, test, &identity)?;
            let boot: Vec<(Option<f64>, f64)> = (0..opts.bootstrap)
                .into_par_iter()
                .map(|r| {
                    let mut g = rng::stream(opts.seed, "eval-bootstrap", r as u64);
                    let rows: Vec<Vec<usize>> = (0..test.maxima.len())
                        .map(|_| (0..b).map(|_| g.random_range(0..b)).collect())
                        .collect();
                    let (w, p) = score(&pred, test, &rows)?;
                    Ok((w.map(|w| mean(&w)), mean(&p)))
                })
                .collect::<Result<_>>()?;
            let summary = |per_point: Vec<f64>, reps: Vec<f64>| MetricSummary {
                mean: mean(&per_point),
                sd: sd(&reps),
                per_point,
            };
            Ok(MetricReport {
                model: model.model_name(),
                parameter: model.parameter(),
                wd: wd.map(|w| summary(w, boot.iter().filter_map(|x| x.0).collect())),
                pmd: summary(pm, boot.iter().map(|x| x.1).collect()),
                degenerate: pred.iter().any(|p| p.degenerate),
                train_seconds: 0.0,
            })
        })
        .collect()
}
