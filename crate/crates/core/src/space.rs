//! Metric space of critical points and clique graphs over it.
//!
//! A clique is an `H`-subset of point indices; its average distance is the
//! mean of the `C(H,2)` pairwise distances. [`CriticalPointSpace::generate_graph`]
//! keeps the `⌊q_G · C(J,H)⌋` cliques with the smallest average distance
//! (at least one), ties broken by lexicographic index order.

use crate::error::{MesmError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Refuse to enumerate more cliques than this.
pub const MAX_ENUMERATED_CLIQUES: u128 = 10_000_000;

const TRIANGLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Euclidean,
    /// Arc length along a circle centered at the origin.
    CircleArc,
    /// Distances supplied directly as a matrix.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceRecord")]
pub struct CriticalPointSpace {
    ids: Vec<String>,
    coordinates: Option<Vec<[f64; 2]>>,
    metric: Metric,
    distances: Vec<f64>,
}

#[derive(Deserialize)]
struct SpaceRecord {
    ids: Vec<String>,
    coordinates: Option<Vec<[f64; 2]>>,
    metric: Metric,
    distances: Vec<f64>,
}

impl TryFrom<SpaceRecord> for CriticalPointSpace {
    type Error = MesmError;

    /// Stored distances are kept verbatim after checking them against what
    /// the metric (or the matrix validation) implies.
    fn try_from(r: SpaceRecord) -> Result<Self> {
        let j = r.ids.len();
        if r.distances.len() != j * j {
            return Err(MesmError::invalid("stored distance matrix does not match the point count"));
        }
        let rebuilt = match (r.metric, r.coordinates.clone()) {
            (Metric::Precomputed, coords) => {
                let matrix = r.distances.chunks(j.max(1)).map(|c| c.to_vec()).collect();
                Self::from_distance_matrix(Some(r.ids.clone()), matrix, coords)?
            }
            (metric, Some(coords)) => Self::from_coordinates(Some(r.ids.clone()), coords, metric)?,
            (_, None) => return Err(MesmError::invalid("coordinate metric without coordinates")),
        };
        if rebuilt
            .distances
            .iter()
            .zip(&r.distances)
            .any(|(a, b)| (a - b).abs() > TRIANGLE_TOL * a.abs().max(1.0))
        {
            return Err(MesmError::invalid("stored distances disagree with the stated metric"));
        }
        Ok(Self {
            distances: r.distances,
            ..rebuilt
        })
    }
}

fn default_ids(j: usize) -> Vec<String> {
    (0..j).map(|i| i.to_string()).collect()
}

impl CriticalPointSpace {
    pub fn from_coordinates(
        ids: Option<Vec<String>>,
        coordinates: Vec<[f64; 2]>,
        metric: Metric,
    ) -> Result<Self> {
        let j = coordinates.len();
        if j == 0 {
            return Err(MesmError::invalid("critical-point space needs at least one point"));
        }
        if coordinates.iter().flatten().any(|v| !v.is_finite()) {
            return Err(MesmError::invalid("non-finite critical-point coordinate"));
        }
        let ids = ids.unwrap_or_else(|| default_ids(j));
        if ids.len() != j {
            return Err(MesmError::invalid("point id count does not match coordinates"));
        }
        let mut distances = vec![0.0; j * j];
        for a in 0..j {
            for b in a + 1..j {
                let d = match metric {
                    Metric::Euclidean => {
                        let dx = coordinates[a][0] - coordinates[b][0];
                        let dy = coordinates[a][1] - coordinates[b][1];
                        dx.hypot(dy)
                    }
                    Metric::CircleArc => {
                        let ra = coordinates[a][0].hypot(coordinates[a][1]);
                        let rb = coordinates[b][0].hypot(coordinates[b][1]);
                        let ta = coordinates[a][1].atan2(coordinates[a][0]);
                        let tb = coordinates[b][1].atan2(coordinates[b][0]);
                        let mut dt = (ta - tb).abs() % (2.0 * PI);
                        if dt > PI {
                            dt = 2.0 * PI - dt;
                        }
                        0.5 * (ra + rb) * dt
                    }
                    Metric::Precomputed => {
                        return Err(MesmError::invalid(
                            "precomputed metric requires a distance matrix",
                        ))
                    }
                };
                distances[a * j + b] = d;
                distances[b * j + a] = d;
            }
        }
        Ok(Self {
            ids,
            coordinates: Some(coordinates),
            metric,
            distances,
        })
    }

    /// `J` equispaced points on a circle of the given circumference, centered
    /// at the origin, with arc-length distances `C·min(|i−k|, J−|i−k|)/J`.
    pub fn circle(j: usize, circumference: f64) -> Result<Self> {
        if j == 0 || !(circumference > 0.0) {
            return Err(MesmError::invalid("circle needs J >= 1 and positive circumference"));
        }
        let radius = circumference / (2.0 * PI);
        let coordinates: Vec<[f64; 2]> = (0..j)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / j as f64;
                [radius * t.cos(), radius * t.sin()]
            })
            .collect();
        let mut distances = vec![0.0; j * j];
        for a in 0..j {
            for b in 0..j {
                let k = a.abs_diff(b);
                distances[a * j + b] = circumference * k.min(j - k) as f64 / j as f64;
            }
        }
        Ok(Self {
            ids: default_ids(j),
            coordinates: Some(coordinates),
            metric: Metric::CircleArc,
            distances,
        })
    }

    /// Validated square distance matrix: symmetric, zero diagonal, positive
    /// off-diagonal, triangle inequality within 1e-9. Coordinates may be
    /// attached for models that need them.
    pub fn from_distance_matrix(
        ids: Option<Vec<String>>,
        matrix: Vec<Vec<f64>>,
        coordinates: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        let j = matrix.len();
        if j == 0 {
            return Err(MesmError::invalid("empty distance matrix"));
        }
        if matrix.iter().any(|r| r.len() != j) {
            return Err(MesmError::invalid("distance matrix is not square"));
        }
        for a in 0..j {
            if matrix[a][a] != 0.0 {
                return Err(MesmError::invalid(format!("distance matrix diagonal ({a},{a}) is not zero")));
            }
            for b in 0..j {
                let d = matrix[a][b];
                if !d.is_finite() {
                    return Err(MesmError::invalid(format!("non-finite distance at ({a},{b})")));
                }
                if a != b && !(d > 0.0) {
                    return Err(MesmError::invalid(format!("distance at ({a},{b}) is not positive")));
                }
                if (d - matrix[b][a]).abs() > TRIANGLE_TOL * d.abs().max(1.0) {
                    return Err(MesmError::invalid(format!("distance matrix is not symmetric at ({a},{b})")));
                }
            }
        }
        for a in 0..j {
            for b in 0..j {
                for c in 0..j {
                    if matrix[a][c] > matrix[a][b] + matrix[b][c] + TRIANGLE_TOL {
                        return Err(MesmError::invalid(format!(
                            "triangle inequality violated for points ({a},{b},{c})"
                        )));
                    }
                }
            }
        }
        if let Some(c) = &coordinates {
            if c.len() != j {
                return Err(MesmError::invalid("coordinate count does not match distance matrix"));
            }
        }
        let ids = ids.unwrap_or_else(|| default_ids(j));
        if ids.len() != j {
            return Err(MesmError::invalid("point id count does not match distance matrix"));
        }
        Ok(Self {
            ids,
            coordinates,
            metric: Metric::Precomputed,
            distances: matrix.into_iter().flatten().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn coordinates(&self) -> Option<&[[f64; 2]]> {
        self.coordinates.as_deref()
    }

    /// Coordinates, or an error naming the operation that needs them.
    pub fn require_coordinates(&self, what: &str) -> Result<&[[f64; 2]]> {
        self.coordinates().ok_or_else(|| {
            MesmError::invalid(format!("{what} needs point coordinates, but the space has only distances"))
        })
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.distances[a * self.len() + b]
    }

    pub fn pairwise_distances(&self) -> Vec<Vec<f64>> {
        let j = self.len();
        (0..j).map(|a| self.distances[a * j..(a + 1) * j].to_vec()).collect()
    }

    pub fn clique_average_distance(&self, clique: &[usize]) -> Result<f64> {
        let h = clique.len();
        if h < 2 {
            return Err(MesmError::invalid("a clique needs at least two points"));
        }
        for (x, &a) in clique.iter().enumerate() {
            if a >= self.len() {
                return Err(MesmError::invalid(format!("point index {a} out of range")));
            }
            if clique[..x].contains(&a) {
                return Err(MesmError::invalid(format!("point index {a} repeated in clique")));
            }
        }
        Ok(self.clique_delta_unchecked(clique))
    }

    fn clique_delta_unchecked(&self, clique: &[usize]) -> f64 {
        let h = clique.len();
        let mut total = 0.0;
        for x in 0..h {
            for y in x + 1..h {
                total += self.distance(clique[x], clique[y]);
            }
        }
        total / (h * (h - 1) / 2) as f64
    }

    pub fn generate_graph(&self, order: usize, q_g: f64) -> Result<CliqueGraph> {
        let j = self.len();
        if order < 2 || order > j {
            return Err(MesmError::invalid(format!(
                "clique order must lie in [2, {j}], got {order}"
            )));
        }
        if !(q_g > 0.0 && q_g <= 1.0) {
            return Err(MesmError::invalid(format!("q_G must lie in (0, 1], got {q_g}")));
        }
        let total = binomial(j as u128, order as u128);
        if total > MAX_ENUMERATED_CLIQUES {
            return Err(MesmError::invalid(format!(
                "C({j},{order}) = {total} cliques exceeds the enumeration limit {MAX_ENUMERATED_CLIQUES}"
            )));
        }
        let keep = ((q_g * total as f64 + 1e-9).floor() as u128).clamp(1, total) as usize;

        let mut all: Vec<(Vec<usize>, f64)> = Vec::with_capacity(total as usize);
        let mut comb: Vec<usize> = (0..order).collect();
        loop {
            all.push((comb.clone(), self.clique_delta_unchecked(&comb)));
            if !next_combination(&mut comb, j) {
                break;
            }
        }
        // Enumeration is lexicographic; a stable sort on a tie-tolerant key keeps that order within ties.
        let scale = all.iter().map(|c| c.1).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
        all.sort_by_key(|c| (c.1 / scale * 1e12).round() as i64);
        all.truncate(keep);
        let (cliques, deltas) = all.into_iter().unzip();
        Ok(CliqueGraph {
            order,
            q_g,
            total: total as u64,
            cliques,
            deltas,
        })
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
        if r > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    r
}

fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if comb[i] < n - k + i {
            comb[i] += 1;
            for x in i + 1..k {
                comb[x] = comb[x - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Selected cliques sorted by (average distance, lexicographic order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueGraph {
    pub order: usize,
    pub q_g: f64,
    /// Size of the full enumeration `C(J, H)`.
    pub total: u64,
    pub cliques: Vec<Vec<usize>>,
    pub deltas: Vec<f64>,
}

impl CliqueGraph {
    pub fn len(&self) -> usize {
        self.cliques.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cliques.is_empty()
    }

    /// Check indices against a space of `j` points.
    pub fn validate(&self, j: usize) -> Result<()> {
        if self.cliques.is_empty() {
            return Err(MesmError::invalid("clique graph is empty"));
        }
        for c in &self.cliques {
            if c.len() != self.order || c.iter().any(|&i| i >= j) {
                return Err(MesmError::invalid(format!("invalid clique {c:?} for {j} points")));
            }
        }
        Ok(())
    }
}
