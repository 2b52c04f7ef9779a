//! Dense containers for designs, raw observations, and block maxima.

use crate::error::{MesmError, Result};
use crate::gev::{block_maxima, BlockMaximaConfig};
use serde::{Deserialize, Serialize};

/// Design points `s_n` in a box-shaped control space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DesignRecord")]
pub struct DesignMatrix {
    rows: Vec<Vec<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct DesignRecord {
    rows: Vec<Vec<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<DesignRecord> for DesignMatrix {
    type Error = MesmError;

    fn try_from(r: DesignRecord) -> Result<Self> {
        DesignMatrix::new(r.rows, r.lower, r.upper)
    }
}

impl DesignMatrix {
    pub fn new(rows: Vec<Vec<f64>>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = lower.len();
        if d == 0 || upper.len() != d {
            return Err(MesmError::invalid("design bounds must be non-empty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite()) {
            return Err(MesmError::invalid("each design bound must satisfy lower < upper"));
        }
        if rows.len() < 2 {
            return Err(MesmError::invalid(format!(
                "at least 2 design points are required, got {}",
                rows.len()
            )));
        }
        for (n, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(MesmError::invalid(format!(
                    "design point {n} has {} coordinates, expected {d}",
                    r.len()
                )));
            }
            if r.iter().zip(lower.iter().zip(&upper)).any(|(v, (l, u))| !(v >= l && v <= u)) {
                return Err(MesmError::invalid(format!("design point {n} lies outside the bounds")));
            }
        }
        for a in 0..rows.len() {
            for b in a + 1..rows.len() {
                if rows[a] == rows[b] {
                    return Err(MesmError::invalid(format!(
                        "design points {a} and {b} are duplicates"
                    )));
                }
            }
        }
        Ok(Self { rows, lower, upper })
    }

    /// Bounds taken as the per-column range of the rows.
    pub fn with_data_bounds(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for r in &rows {
            for (k, v) in r.iter().enumerate().take(d) {
                lower[k] = lower[k].min(*v);
                upper[k] = upper[k].max(*v);
            }
        }
        for k in 0..d {
            if lower[k] == upper[k] {
                lower[k] -= 0.5;
                upper[k] += 0.5;
            }
        }
        Self::new(rows, lower, upper)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Reject points outside the control space; the model interpolates only.
    pub fn check_point(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.dim() {
            return Err(MesmError::invalid(format!(
                "control point has {} coordinates, expected {}",
                s.len(),
                self.dim()
            )));
        }
        let tol = 1e-12;
        for (k, v) in s.iter().enumerate() {
            let span = self.upper[k] - self.lower[k];
            if !(*v >= self.lower[k] - tol * span && *v <= self.upper[k] + tol * span) {
                return Err(MesmError::invalid(format!(
                    "control coordinate {k} = {v} is outside [{}, {}]",
                    self.lower[k], self.upper[k]
                )));
            }
        }
        Ok(())
    }
}

/// Row-major `rows × cols` matrix of reals, e.g. blocks × critical points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl BlockMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(MesmError::invalid(format!(
                "matrix of shape {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(MesmError::invalid("ragged rows"));
        }
        let n = rows.len();
        Self::new(n, cols, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[BlockMatrix]) -> Result<Self> {
        let cols = parts.first().map(|p| p.cols).unwrap_or(0);
        if parts.iter().any(|p| p.cols != cols) {
            return Err(MesmError::invalid("cannot stack matrices with different column counts"));
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let values = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
        Self::new(rows, cols, values)
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let values = idx.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }
}

/// Raw replicated observations indexed by (design `n`, replicate `l`, point `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservations {
    designs: usize,
    replicates: usize,
    points: usize,
    values: Vec<f64>,
}

impl RawObservations {
    pub fn new(designs: usize, replicates: usize, points: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != designs * replicates * points {
            return Err(MesmError::invalid(format!(
                "observation tensor {designs}x{replicates}x{points} needs {} values, got {}",
                designs * replicates * points,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(MesmError::invalid(format!("non-finite observation at flat index {i}")));
        }
        Ok(Self {
            designs,
            replicates,
            points,
            values,
        })
    }

    pub fn designs(&self) -> usize {
        self.designs
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn get(&self, n: usize, l: usize, j: usize) -> f64 {
        self.values[(n * self.replicates + l) * self.points + j]
    }

    /// Replicates `0..L` at design `n`, point `j`.
    pub fn series(&self, n: usize, j: usize) -> Vec<f64> {
        (0..self.replicates).map(|l| self.get(n, l, j)).collect()
    }

    /// Replicate rows (`L × J`) at design `n`.
    pub fn design_block(&self, n: usize) -> BlockMatrix {
        let start = n * self.replicates * self.points;
        let end = start + self.replicates * self.points;
        BlockMatrix {
            rows: self.replicates,
            cols: self.points,
            values: self.values[start..end].to_vec(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn block_maxima(&self, config: BlockMaximaConfig) -> Result<ExtremeDataset> {
        if self.replicates < config.block_size {
            return Err(MesmError::invalid(format!(
                "{} replicates are fewer than block size {}",
                self.replicates, config.block_size
            )));
        }
        let blocks = config.block_count(self.replicates);
        let mut values = vec![0.0; self.designs * blocks * self.points];
        for n in 0..self.designs {
            for j in 0..self.points {
                let m = block_maxima(&self.series(n, j), config)?;
                for (b, v) in m.into_iter().enumerate() {
                    values[(n * blocks + b) * self.points + j] = v;
                }
            }
        }
        ExtremeDataset::new(self.designs, blocks, self.points, values)
    }
}

/// Block maxima indexed by (design `n`, block `b`, point `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremeDataset {
    designs: usize,
    blocks: usize,
    points: usize,
    values: Vec<f64>,
}

impl ExtremeDataset {
    pub fn new(designs: usize, blocks: usize, points: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != designs * blocks * points {
            return Err(MesmError::invalid(format!(
                "extreme tensor {designs}x{blocks}x{points} needs {} values, got {}",
                designs * blocks * points,
                values.len()
            )));
        }
        Ok(Self {
            designs,
            blocks,
            points,
            values,
        })
    }

    pub fn designs(&self) -> usize {
        self.designs
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn get(&self, n: usize, b: usize, j: usize) -> f64 {
        self.values[(n * self.blocks + b) * self.points + j]
    }

    /// The `B` block maxima at design `n`, point `j`.
    pub fn cell(&self, n: usize, j: usize) -> Vec<f64> {
        (0..self.blocks).map(|b| self.get(n, b, j)).collect()
    }

    /// `B × J` matrix of maxima at design `n`.
    pub fn design_block(&self, n: usize) -> BlockMatrix {
        let start = n * self.blocks * self.points;
        BlockMatrix {
            rows: self.blocks,
            cols: self.points,
            values: self.values[start..start + self.blocks * self.points].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn design_validation() {
        let ok = DesignMatrix::new(vec![vec![0.0], vec![1.0]], vec![0.0], vec![1.0]);
        assert!(ok.is_ok());
        assert!(DesignMatrix::new(vec![vec![0.0]], vec![0.0], vec![1.0]).is_err());
        assert!(DesignMatrix::new(vec![vec![0.5], vec![0.5]], vec![0.0], vec![1.0]).is_err());
        assert!(DesignMatrix::new(vec![vec![0.0], vec![2.0]], vec![0.0], vec![1.0]).is_err());
        let d = ok.unwrap();
        assert!(d.check_point(&[0.5]).is_ok());
        assert!(d.check_point(&[1.5]).is_err());
        assert!(d.check_point(&[0.5, 0.1]).is_err());
    }

    #[test]
    fn raw_to_block_maxima_layout() {
        // 2 designs, 5 replicates, 2 points; value encodes (n, l, j).
        let mut v = Vec::new();
        for n in 0..2 {
            for l in 0..5 {
                for j in 0..2 {
                    v.push((n * 100 + l * 10 + j) as f64);
                }
            }
        }
        let raw = RawObservations::new(2, 5, 2, v).unwrap();
        let ext = raw.block_maxima(BlockMaximaConfig::new(2).unwrap()).unwrap();
        assert_eq!(ext.blocks(), 3);
        assert_eq!(ext.cell(1, 1), vec![111.0, 131.0, 141.0]);
        assert_eq!(ext.design_block(0).row(2), &[40.0, 41.0]);
    }
}
