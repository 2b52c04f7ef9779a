//! Empirical extremal-dependence diagnostics: the tail-dependence
//! coefficient χ at a threshold and the F-madogram over distance bins,
//! with block-bootstrap confidence intervals.

use crate::brownresnick::{husler_reiss, BrownResnickModel};
use crate::data::BlockMatrix;
use crate::error::{MesmError, Result};
use crate::rng;
use crate::space::CriticalPointSpace;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.9, 0.95, 0.98];
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Locus {
    Threshold { t: f64 },
    DistanceBin { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DependenceEstimate {
    pub estimate: f64,
    pub locus: Locus,
    pub level: f64,
    pub low: f64,
    pub high: f64,
    /// Exceedances of the conditioning variable (χ) or site pairs (madogram).
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 500,
            level: 0.95,
            seed: 0,
        }
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval, widened if needed so that it contains the point estimate.
fn interval(estimate: f64, mut reps: Vec<f64>, level: f64) -> (f64, f64) {
    reps.retain(|v| v.is_finite());
    if reps.is_empty() {
        return (estimate, estimate);
    }
    reps.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    (
        percentile(&reps, a).min(estimate),
        percentile(&reps, 1.0 - a).max(estimate),
    )
}

fn check_bootstrap(opts: &BootstrapOptions) -> Result<()> {
    if opts.resamples == 0 || !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(MesmError::invalid("bootstrap needs resamples >= 1 and a level in (0, 1)"));
    }
    Ok(())
}

/// Empirical CDF values `rank / (n + 1)` with mid-ranks for ties.
pub fn empirical_cdf(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut k = i;
        while k + 1 < n && xs[order[k + 1]] == xs[order[i]] {
            k += 1;
        }
        let rank = 0.5 * ((i + 1) + (k + 1)) as f64;
        for &o in &order[i..=k] {
            out[o] = rank / (n as f64 + 1.0);
        }
        i = k + 1;
    }
    out
}

/// `χ̂(t) = #{F̂ᵢ > t, F̂ₖ > t} / #{F̂ₖ > t}`; pairs are resampled for the interval
/// with ranks held at their full-sample values.
pub fn chi_empirical(
    z_i: &[f64],
    z_k: &[f64],
    t: f64,
    opts: &BootstrapOptions,
) -> Result<DependenceEstimate> {
    if z_i.len() != z_k.len() {
        return Err(MesmError::invalid("χ estimation needs paired samples of equal length"));
    }
    if z_i.len() < 50 {
        return Err(MesmError::invalid(format!("χ estimation needs n >= 50, got {}", z_i.len())));
    }
    if !(t > 0.5 && t < 1.0) {
        return Err(MesmError::invalid(format!("threshold must lie in (0.5, 1), got {t}")));
    }
    check_bootstrap(opts)?;
    let fi = empirical_cdf(z_i);
    let fk = empirical_cdf(z_k);
    // 0: neither relevant, 1: conditioning exceeds only, 2: both exceed.
    let flags: Vec<u8> = fi
        .iter()
        .zip(&fk)
        .map(|(a, b)| match (*a > t, *b > t) {
            (true, true) => 2,
            (_, true) => 1,
            _ => 0,
        })
        .collect();
    let ratio = |count: &mut dyn FnMut() -> Option<u8>| -> (usize, usize) {
        let (mut both, mut denom) = (0, 0);
        while let Some(f) = count() {
            if f > 0 {
                denom += 1;
            }
            if f == 2 {
                both += 1;
            }
        }
        (both, denom)
    };
    let mut it = flags.iter().copied();
    let (both, denom) = ratio(&mut || it.next());
    if denom == 0 {
        return Err(MesmError::invalid(format!(
            "no exceedances of t = {t} in {} samples; lower the threshold",
            z_i.len()
        )));
    }
    let estimate = both as f64 / denom as f64;
    let n = flags.len();
    let reps: Vec<f64> = (0..opts.resamples)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(opts.seed, "chi-bootstrap", r as u64);
            let mut left = n;
            let (b, d) = ratio(&mut || {
                (left > 0).then(|| {
                    left -= 1;
                    flags[g.random_range(0..n)]
                })
            });
            if d == 0 {
                f64::NAN
            } else {
                b as f64 / d as f64
            }
        })
        .collect();
    let (low, high) = interval(estimate, reps, opts.level);
    Ok(DependenceEstimate {
        estimate,
        locus: Locus::Threshold { t },
        level: opts.level,
        low,
        high,
        count: denom,
    })
}

/// `χ = 2 − V(1, 1)` under a fitted Brown-Resnick model.
pub fn chi_model(model: &BrownResnickModel, u: [f64; 2], v: [f64; 2]) -> f64 {
    2.0 - husler_reiss::extremal_coefficient(model.dependence_param(u, v))
}

/// Edges splitting the off-diagonal pairwise distances into `bins` groups of
/// (nearly) equal size; duplicate edges from tied distances are merged.
pub fn equal_count_bin_edges(space: &CriticalPointSpace, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(MesmError::invalid("need at least one distance bin"));
    }
    let j = space.len();
    let mut d: Vec<f64> = (0..j)
        .flat_map(|a| ((a + 1)..j).map(move |b| (a, b)))
        .map(|(a, b)| space.distance(a, b))
        .collect();
    if d.is_empty() {
        return Err(MesmError::invalid("distance bins need at least two critical points"));
    }
    d.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (0..=bins).map(|b| percentile(&d, b as f64 / bins as f64)).collect();
    edges.dedup();
    if edges.len() == 1 {
        edges.push(edges[0]);
    }
    Ok(edges)
}

fn bin_of(edges: &[f64], d: f64) -> Option<usize> {
    let last = edges.len() - 2;
    if d < edges[0] || d > edges[last + 1] {
        return None;
    }
    Some(edges[1..].partition_point(|e| *e <= d).min(last))
}

/// F-madogram `η̂ = mean |F(z_j) − F(z_j′)| / 2` per distance bin, with `F` the
/// unit-Fréchet CDF. Bins without pairs are omitted from the result.
pub fn f_madogram(
    samples: &BlockMatrix,
    space: &CriticalPointSpace,
    edges: &[f64],
    opts: &BootstrapOptions,
) -> Result<Vec<DependenceEstimate>> {
    let (b_total, j_total) = (samples.rows(), samples.cols());
    if b_total < 20 {
        return Err(MesmError::invalid(format!("madogram needs B >= 20 blocks, got {b_total}")));
    }
    if j_total != space.len() {
        return Err(MesmError::invalid(format!(
            "{j_total} sample columns but {} critical points",
            space.len()
        )));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(MesmError::invalid("bin edges must be nondecreasing with at least two entries"));
    }
    if samples.values().iter().any(|z| !(*z > 0.0)) {
        return Err(MesmError::invalid("madogram input must be positive unit-Fréchet values"));
    }
    check_bootstrap(opts)?;
    let n_bins = edges.len() - 1;
    let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_bins];
    for a in 0..j_total {
        for b in (a + 1)..j_total {
            if let Some(k) = bin_of(edges, space.distance(a, b)) {
                pairs[k].push((a, b));
            }
        }
    }
    // per_block[b][k]: mean over the pairs in bin k within block b
    let per_block: Vec<Vec<f64>> = (0..b_total)
        .into_par_iter()
        .map(|b| {
            let f: Vec<f64> = samples.row(b).iter().map(|z| (-1.0 / z).exp()).collect();
            pairs
                .iter()
                .map(|ps| {
                    ps.iter().map(|&(x, y)| 0.5 * (f[x] - f[y]).abs()).sum::<f64>() / ps.len().max(1) as f64
                })
                .collect()
        })
        .collect();
    let mean_over = |rows: &mut dyn Iterator<Item = usize>| -> Vec<f64> {
        let mut acc = vec![0.0; n_bins];
        let mut count = 0usize;
        for r in rows {
            for (a, v) in acc.iter_mut().zip(&per_block[r]) {
                *a += v;
            }
            count += 1;
        }
        acc.iter().map(|a| a / count as f64).collect()
    };
    let estimate = mean_over(&mut (0..b_total));
    let reps: Vec<Vec<f64>> = (0..opts.resamples)
        .into_par_iter()
        .map(|r| {
            let mut g = rng::stream(opts.seed, "madogram-bootstrap", r as u64);
            let idx: Vec<usize> = (0..b_total).map(|_| g.random_range(0..b_total)).collect();
            mean_over(&mut idx.into_iter())
        })
        .collect();
    Ok((0..n_bins)
        .filter(|&k| !pairs[k].is_empty())
        .map(|k| {
            let (low, high) = interval(estimate[k], reps.iter().map(|r| r[k]).collect(), opts.level);
            DependenceEstimate {
                estimate: estimate[k],
                locus: Locus::DistanceBin {
                    low: edges[k],
                    high: edges[k + 1],
                },
                level: opts.level,
                low,
                high,
                count: pairs[k].len(),
            }
        })
        .collect())
}

/// Variation of a dependence curve across groups of design points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    /// Per locus: max − min of the estimates across groups.
    pub ranges: Vec<f64>,
    /// Per locus: mean confidence-interval width across groups.
    pub pooled_widths: Vec<f64>,
    pub max_range: f64,
    /// True when every range is within the pooled interval width.
    pub flat: bool,
}

/// Compare dependence curves estimated separately per design point (or per
/// design-space distance bin). All curves must share the same loci.
pub fn input_invariance_check(curves: &[Vec<DependenceEstimate>]) -> Result<InvarianceReport> {
    let Some(first) = curves.first() else {
        return Err(MesmError::invalid("invariance check needs at least one curve"));
    };
    if first.is_empty() || curves.iter().any(|c| c.len() != first.len()) {
        return Err(MesmError::invalid("all dependence curves must be non-empty and aligned"));
    }
    for c in curves {
        if c.iter().zip(first).any(|(a, b)| a.locus != b.locus) {
            return Err(MesmError::invalid("dependence curves are estimated at different loci"));
        }
    }
    let g = curves.len() as f64;
    let (ranges, pooled_widths): (Vec<f64>, Vec<f64>) = (0..first.len())
        .map(|i| {
            let (lo, hi) = curves.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c[i].estimate), hi.max(c[i].estimate))
            });
            let width = curves.iter().map(|c| c[i].high - c[i].low).sum::<f64>() / g;
            (hi - lo, width)
        })
        .unzip();
    let flat = ranges.iter().zip(&pooled_widths).all(|(r, w)| r <= w);
    Ok(InvarianceReport {
        max_range: ranges.iter().copied().fold(0.0, f64::max),
        ranges,
        pooled_widths,
        flat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Exp1;

    fn frechet<R: Rng>(g: &mut R) -> f64 {
        1.0 / g.sample::<f64, _>(Exp1)
    }

    fn opts() -> BootstrapOptions {
        BootstrapOptions {
            resamples: 200,
            ..Default::default()
        }
    }

    #[test]
    fn chi_of_copies_is_one() {
        let mut g = rng::stream(1, "t", 0);
        let z: Vec<f64> = (0..500).map(|_| frechet(&mut g)).collect();
        for t in DEFAULT_THRESHOLDS {
            let e = chi_empirical(&z, &z, t, &opts()).unwrap();
            assert_eq!(e.estimate, 1.0);
            assert!(e.low <= e.estimate && e.estimate <= e.high);
        }
    }

    #[test]
    fn chi_of_independent_uniforms_is_one_minus_t() {
        let mut g = rng::stream(2, "t", 0);
        let a: Vec<f64> = (0..100_000).map(|_| g.random::<f64>()).collect();
        let b: Vec<f64> = (0..100_000).map(|_| g.random::<f64>()).collect();
        let e = chi_empirical(&a, &b, 0.9, &opts()).unwrap();
        assert!((e.estimate - 0.1).abs() < 0.01, "{}", e.estimate);
    }

    #[test]
    fn chi_rejects_bad_input() {
        let z = vec![1.0; 60];
        assert!(chi_empirical(&z, &z[..59], 0.9, &opts()).is_err());
        assert!(chi_empirical(&z[..40], &z[..40], 0.9, &opts()).is_err());
        assert!(chi_empirical(&z, &z, 0.4, &opts()).is_err());
        let ramp: Vec<f64> = (0..60).map(f64::from).collect();
        assert!(chi_empirical(&ramp, &ramp, 0.999, &opts()).is_err());
    }

    #[test]
    fn empirical_cdf_uses_mid_ranks() {
        assert_eq!(empirical_cdf(&[3.0, 1.0, 3.0]), vec![2.5 / 4.0, 0.25, 2.5 / 4.0]);
    }

    #[test]
    fn chi_model_examples() {
        let m = BrownResnickModel::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(chi_model(&m, [0.5, 0.5], [0.5, 0.5]), 1.0);
        assert!((2.0 - husler_reiss::exponent_measure(40.0, 1.0, 1.0).unwrap()).abs() < 1e-12);
        assert!((2.0 - husler_reiss::extremal_coefficient(2.0) - 0.317_310_507_862_914).abs() < 1e-12);
        let (u, v) = ([0.0, 0.1], [0.7, -0.2]);
        assert_eq!(chi_model(&m, u, v), chi_model(&m, v, u));
    }

    #[test]
    fn madogram_zero_for_duplicates_and_sixth_for_independent() {
        let space = CriticalPointSpace::from_coordinates(
            None,
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 5.0], [1.0, 5.0]],
            crate::space::Metric::Euclidean,
        )
        .unwrap();
        let mut g = rng::stream(3, "t", 0);
        let b = 5000;
        let mut values = Vec::with_capacity(b * 4);
        for _ in 0..b {
            let x = frechet(&mut g);
            let y = frechet(&mut g);
            values.extend([x, x, y, frechet(&mut g)]);
        }
        let samples = BlockMatrix::new(b, 4, values).unwrap();
        let est = f_madogram(&samples, &space, &[0.0, 1.5, 10.0], &opts()).unwrap();
        // bin 0 holds pairs (0,1) [duplicate] and (2,3) [independent]
        assert_eq!(est[0].count, 2);
        assert!((est[0].estimate - 1.0 / 12.0).abs() < 0.01);
        assert!((est[1].estimate - 1.0 / 6.0).abs() < 0.01, "{}", est[1].estimate);
    }

    #[test]
    fn empty_bins_are_absent() {
        let space = CriticalPointSpace::circle(8, 8.0).unwrap();
        let mut g = rng::stream(4, "t", 0);
        let samples = BlockMatrix::new(30, 8, (0..240).map(|_| frechet(&mut g)).collect()).unwrap();
        let est = f_madogram(&samples, &space, &[0.0, 0.5, 0.9, 1.1, 5.0], &opts()).unwrap();
        assert_eq!(est.len(), 2);
        assert!(est.iter().all(|e| e.estimate >= 0.0 && e.estimate <= 0.5));
    }

    #[test]
    fn equal_count_edges_cover_all_distances() {
        let space = CriticalPointSpace::circle(16, 16.0).unwrap();
        let edges = equal_count_bin_edges(&space, 4).unwrap();
        assert_eq!(edges[0], 1.0);
        assert_eq!(*edges.last().unwrap(), 8.0);
        assert!(edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn invariance_flags() {
        let est = |v: f64| DependenceEstimate {
            estimate: v,
            locus: Locus::Threshold { t: 0.9 },
            level: 0.95,
            low: v - 0.05,
            high: v + 0.05,
            count: 10,
        };
        let same = vec![vec![est(0.3)], vec![est(0.3)], vec![est(0.3)]];
        let r = input_invariance_check(&same).unwrap();
        assert!(r.flat);
        assert_eq!(r.max_range, 0.0);
        let split = vec![vec![est(0.1)], vec![est(0.6)]];
        assert!(!input_invariance_check(&split).unwrap().flat);
    }
}
