//! CSV interchange for point sets, training histories and metric tables.

use std::path::Path;

use neuropmd::manifold::{MarginalManifold, Point, ProductManifoldSpec};
use neuropmd::objective::EpochRecord;
use neuropmd::{Error, Result};
use serde::Serialize;

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

/// Column names for a point on `spec`: `theta{d}` for circles and
/// `x{d},y{d},z{d}` for spheres, numbered from 1.
pub fn point_header(spec: &ProductManifoldSpec) -> Vec<String> {
    let mut h = Vec::with_capacity(spec.coord_len());
    for (d, m) in spec.marginals().iter().enumerate() {
        let d = d + 1;
        match m {
            MarginalManifold::Circle => h.push(format!("theta{d}")),
            MarginalManifold::Sphere2 => h.extend(["x", "y", "z"].map(|c| format!("{c}{d}"))),
        }
    }
    h
}

pub fn write_points(path: &Path, spec: &ProductManifoldSpec, points: &[Point<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(point_header(spec)).map_err(|e| csv_err(path, e))?;
    for p in points {
        w.write_record(p.coords.iter().map(|c| c.to_string())).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed CSV of points and checks each against `spec`.
pub fn read_points(path: &Path, spec: &ProductManifoldSpec) -> Result<Vec<Point<f64>>> {
    let pts = read_rows(path)?;
    for (i, p) in pts.iter().enumerate() {
        spec.validate(p).map_err(|e| Error::Input(format!("{} row {}: {e}", path.display(), i + 1)))?;
    }
    Ok(pts)
}

/// Reads a headed CSV of equal-length numeric rows.
pub fn read_rows(path: &Path) -> Result<Vec<Point<f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let coords = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Input(format!("{} row {}: {e}", path.display(), i + 1)))?;
        out.push(Point::new(coords));
    }
    if out.is_empty() {
        return Err(Error::Input(format!("{} has no data rows", path.display())));
    }
    Ok(out)
}

/// Torus dimension inferred from a headed CSV of angles.
pub fn read_torus_points(path: &Path) -> Result<(ProductManifoldSpec, Vec<Point<f64>>)> {
    let rows = read_rows(path)?;
    let spec = ProductManifoldSpec::torus(rows[0].coords.len())?;
    for (i, p) in rows.iter().enumerate() {
        spec.validate(p).map_err(|e| Error::Input(format!("{} row {}: {e}", path.display(), i + 1)))?;
    }
    Ok((spec, rows))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["epoch", "objective", "lr", "validation_criterion", "snr_a", "snr_b", "snr_c"])
        .map_err(|e| csv_err(path, e))?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.objective.to_string(),
            r.lr.to_string(),
            opt(r.validation_criterion),
            opt(r.snr.map(|s| s.snr_a)),
            opt(r.snr.map(|s| s.snr_b)),
            opt(r.snr.map(|s| s.snr_c)),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

/// One evaluation result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub convention: String,
    pub value: f64,
    pub integrator: String,
    pub seed: String,
}

/// Writes rows as CSV to `path`, or to stdout when `path` is `None`.
/// With `append`, rows go below an existing header.
pub fn write_rows<R: Serialize>(path: Option<&Path>, rows: &[R], append: bool) -> Result<()> {
    let Some(path) = path else {
        return serialize_rows(csv::Writer::from_writer(std::io::stdout().lock()), rows, Path::new("<stdout>"));
    };
    let exists = append && path.exists() && std::fs::metadata(path)?.len() > 0;
    let file = std::fs::OpenOptions::new().create(true).write(true).append(append).truncate(!append).open(path)?;
    serialize_rows(csv::WriterBuilder::new().has_headers(!exists).from_writer(file), rows, path)
}

fn serialize_rows<W: std::io::Write, R: Serialize>(mut w: csv::Writer<W>, rows: &[R], path: &Path) -> Result<()> {
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}
