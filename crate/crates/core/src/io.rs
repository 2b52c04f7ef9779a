//! On-disk formats. All tables are CSV with a header row; floating-point
//! values are written in shortest round-trip form.
//!
//! * designs: `design_id,s_1,…,s_D`
//! * observations (long): `design_id,replicate,point_id,value`
//! * points: `point_id,x,y`, or a square distance matrix with header
//!   `point_id,<id_1>,…,<id_J>`

use crate::data::{BlockMatrix, DesignMatrix, RawObservations};
use crate::dependence::{DependenceEstimate, Locus};
use crate::error::{MesmError, Result};
use crate::likelihood::SweepRow;
use crate::metrics::MetricReport;
use crate::pipeline::ScanRow;
use crate::space::{CriticalPointSpace, Metric};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?)
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn parse_f64(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| MesmError::invalid(format!("line {line}: cannot parse {what} `{field}` as a number")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

fn f(v: f64) -> String {
    v.to_string()
}

/// Identifier-indexed designs; bounds default to the data range.
#[derive(Debug, Clone)]
pub struct DesignTable {
    pub ids: Vec<String>,
    pub designs: DesignMatrix,
}

pub fn read_designs(path: &Path, bounds: Option<(f64, f64)>) -> Result<DesignTable> {
    let mut rdr = reader(path)?;
    let width = rdr.headers()?.len();
    if width < 2 {
        return Err(MesmError::invalid("designs file needs `design_id` and at least one coordinate column"));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        ids.push(rec[0].to_string());
        rows.push(
            (1..width)
                .map(|k| parse_f64(&rec[k], "design coordinate", line))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    check_unique(&ids, "design_id")?;
    let designs = match bounds {
        Some((lo, hi)) => DesignMatrix::new(rows, vec![lo; width - 1], vec![hi; width - 1])?,
        None => DesignMatrix::with_data_bounds(rows)?,
    };
    Ok(DesignTable { ids, designs })
}

pub fn write_designs(path: &Path, ids: &[String], designs: &DesignMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["design_id".to_string()];
    header.extend((1..=designs.dim()).map(|k| format!("s_{k}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(designs.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| f(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), i) {
            return Err(MesmError::invalid(format!("duplicate {what} `{id}` (rows {prev} and {i})")));
        }
    }
    Ok(())
}

/// Long-format observations; every `(design, replicate, point)` must appear exactly once.
pub fn read_observations(path: &Path, design_ids: &[String], point_ids: &[String]) -> Result<RawObservations> {
    let dmap: HashMap<&str, usize> = design_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let pmap: HashMap<&str, usize> = point_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut rdr = reader(path)?;
    let mut entries = Vec::new();
    let mut max_rep = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != 4 {
            return Err(MesmError::invalid(format!("line {line}: expected 4 fields")));
        }
        let n = *dmap
            .get(&rec[0])
            .ok_or_else(|| MesmError::invalid(format!("line {line}: unknown design_id `{}`", &rec[0])))?;
        let l: usize = rec[1]
            .parse()
            .map_err(|_| MesmError::invalid(format!("line {line}: replicate `{}` is not a non-negative integer", &rec[1])))?;
        let j = *pmap
            .get(&rec[2])
            .ok_or_else(|| MesmError::invalid(format!("line {line}: unknown point_id `{}`", &rec[2])))?;
        let v = parse_f64(&rec[3], "value", line)?;
        max_rep = max_rep.max(l);
        entries.push((n, l, j, v));
    }
    let (nd, nl, nj) = (design_ids.len(), max_rep + 1, point_ids.len());
    if entries.len() != nd * nl * nj {
        return Err(MesmError::invalid(format!(
            "observations must cover every (design, replicate, point): expected {} rows, found {}",
            nd * nl * nj,
            entries.len()
        )));
    }
    let mut values = vec![f64::NAN; nd * nl * nj];
    let mut filled = vec![false; nd * nl * nj];
    for (n, l, j, v) in entries {
        let idx = (n * nl + l) * nj + j;
        if filled[idx] {
            return Err(MesmError::invalid(format!(
                "duplicate observation for design `{}`, replicate {l}, point `{}`",
                design_ids[n], point_ids[j]
            )));
        }
        filled[idx] = true;
        values[idx] = v;
    }
    RawObservations::new(nd, nl, nj, values)
}

pub fn write_observations(path: &Path, design_ids: &[String], point_ids: &[String], raw: &RawObservations) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["design_id", "replicate", "point_id", "value"])?;
    for n in 0..raw.designs() {
        for l in 0..raw.replicates() {
            for j in 0..raw.points() {
                w.write_record([design_ids[n].as_str(), &l.to_string(), &point_ids[j], &f(raw.get(n, l, j))])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_points(path: &Path, metric: Metric) -> Result<CriticalPointSpace> {
    let (ids, coords) = read_coordinates(path)?;
    CriticalPointSpace::from_coordinates(Some(ids), coords, metric)
}

fn read_coordinates(path: &Path) -> Result<(Vec<String>, Vec<[f64; 2]>)> {
    let mut rdr = reader(path)?;
    if rdr.headers()?.len() != 3 {
        return Err(MesmError::invalid("points file must have columns point_id,x,y"));
    }
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        ids.push(rec[0].to_string());
        coords.push([parse_f64(&rec[1], "x", line)?, parse_f64(&rec[2], "y", line)?]);
    }
    check_unique(&ids, "point_id")?;
    Ok((ids, coords))
}

/// Square distance matrix; coordinates (matched by id order) may be attached
/// from a points file.
pub fn read_distance_matrix(path: &Path, coordinates: Option<&Path>) -> Result<CriticalPointSpace> {
    let mut rdr = reader(path)?;
    let header = rdr.headers()?.clone();
    let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    check_unique(&ids, "point_id")?;
    let mut matrix = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() != ids.len() + 1 || ids.get(r).map(String::as_str) != Some(&rec[0]) {
            return Err(MesmError::invalid(format!(
                "line {line}: distance matrix rows must follow the header order with {} values",
                ids.len()
            )));
        }
        matrix.push(
            (1..rec.len())
                .map(|k| parse_f64(&rec[k], "distance", line))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let coords = match coordinates {
        Some(p) => {
            let (cids, c) = read_coordinates(p)?;
            if cids != ids {
                return Err(MesmError::invalid("points file ids do not match the distance matrix ids"));
            }
            Some(c)
        }
        None => None,
    };
    CriticalPointSpace::from_distance_matrix(Some(ids), matrix, coords)
}

pub fn write_points(path: &Path, space: &CriticalPointSpace) -> Result<()> {
    let coords = space.require_coordinates("writing a points file")?;
    let mut w = writer(path)?;
    w.write_record(["point_id", "x", "y"])?;
    for (id, c) in space.ids().iter().zip(coords) {
        w.write_record([id.as_str(), &f(c[0]), &f(c[1])])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_distance_matrix(path: &Path, space: &CriticalPointSpace) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["point_id".to_string()];
    header.extend(space.ids().iter().cloned());
    w.write_record(&header)?;
    for (a, id) in space.ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..space.len()).map(|b| f(space.distance(a, b))));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Wide sample table: `sample,<point ids>`.
pub fn write_samples(path: &Path, point_ids: &[String], samples: &BlockMatrix) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["sample".to_string()];
    header.extend(point_ids.iter().cloned());
    w.write_record(&header)?;
    for r in 0..samples.rows() {
        let mut rec = vec![r.to_string()];
        rec.extend(samples.row(r).iter().map(|v| f(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Wide numeric table with a header; first column is a row label.
pub fn read_wide_matrix(path: &Path) -> Result<(Vec<String>, BlockMatrix)> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        rows.push(
            (1..rec.len())
                .map(|k| parse_f64(&rec[k], "value", line))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok((header, BlockMatrix::from_rows(rows)?))
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["q_G", "replication", "score", "seconds", "converged"])?;
    for r in rows {
        w.write_record([f(r.q_g), r.replication.to_string(), f(r.score), f(r.seconds), r.converged.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "parameter", "WD", "WD_sd", "PMD", "PMD_sd", "train_seconds"])?;
    for r in reports {
        let (wd, wd_sd) = match &r.wd {
            Some(s) => (f(s.mean), f(s.sd)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            r.model.clone(),
            r.parameter.clone(),
            wd,
            wd_sd,
            f(r.pmd.mean),
            f(r.pmd.sd),
            f(r.train_seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_madogram(path: &Path, estimates: &[DependenceEstimate]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["bin_low", "bin_high", "estimate", "ci_low", "ci_high", "n_pairs"])?;
    for e in estimates {
        let Locus::DistanceBin { low, high } = e.locus else {
            return Err(MesmError::invalid("madogram table expects distance-bin estimates"));
        };
        w.write_record([f(low), f(high), f(e.estimate), f(e.low), f(e.high), e.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `point_i,point_k,threshold,estimate,ci_low,ci_high,n_exceed`.
pub fn write_chi(path: &Path, rows: &[(String, String, DependenceEstimate)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["point_i", "point_k", "threshold", "estimate", "ci_low", "ci_high", "n_exceed"])?;
    for (a, b, e) in rows {
        let Locus::Threshold { t } = e.locus else {
            return Err(MesmError::invalid("χ table expects threshold estimates"));
        };
        w.write_record([a.clone(), b.clone(), f(t), f(e.estimate), f(e.low), f(e.high), e.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `index,s_1..s_D,argmax_point,return_level`.
pub fn write_scan(path: &Path, points: &[Vec<f64>], point_ids: &[String], rows: &[ScanRow]) -> Result<()> {
    let mut w = writer(path)?;
    let d = points.first().map(|p| p.len()).unwrap_or(0);
    let mut header = vec!["index".to_string()];
    header.extend((1..=d).map(|k| format!("s_{k}")));
    header.extend(["argmax_point".to_string(), "return_level".to_string()]);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.index.to_string()];
        rec.extend(points[r.index].iter().map(|v| f(*v)));
        rec.push(point_ids[r.argmax].clone());
        rec.push(f(r.level));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Parse a comma-separated list of numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| MesmError::invalid(format!("cannot parse `{t}` as a number")))
        })
        .collect()
}
