//! CSV artifacts: point files, particle snapshots, telemetry, reports.

use std::fs::File;
use std::path::Path;

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::flow::TelemetryRecord;

pub const TELEMETRY_HEADER: [&str; 6] = [
    "outer",
    "inner",
    "mean_sq_velocity",
    "divergence_estimate",
    "classifier_loss",
    "clamp_count",
];

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// Reads a point file: a header row, then one point per row, all columns
/// numeric. Rows are numbered from 1 for the first data row.
pub fn read_points(path: &Path) -> Result<ParticleEnsemble> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(f);
    let dim = reader.headers()?.len();
    let data_err = |row: usize, message: String| Error::Data {
        path: path.to_path_buf(),
        row,
        message,
    };
    let mut flat = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != dim {
            return Err(data_err(
                row,
                format!("expected {dim} columns, found {}", record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| data_err(row, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(data_err(row, format!("`{field}` is not finite")));
            }
            flat.push(v);
        }
    }
    if flat.is_empty() {
        return Err(data_err(0, "no points".to_string()));
    }
    ParticleEnsemble::from_flat(dim, flat)
}

pub fn write_points(path: &Path, points: &ParticleEnsemble) -> Result<()> {
    let mut w = create(path)?;
    w.write_record((0..points.dim()).map(|c| format!("x{c}")))?;
    for p in points.points() {
        w.write_record(p.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Streams rows of `loop,index,x0,...,xd-1`.
pub struct SnapshotWriter {
    inner: csv::Writer<File>,
}

impl SnapshotWriter {
    pub fn create(path: &Path, dim: usize) -> Result<Self> {
        let mut inner = create(path)?;
        let mut header = vec!["loop".to_string(), "index".to_string()];
        header.extend((0..dim).map(|c| format!("x{c}")));
        inner.write_record(&header)?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, outer: usize, particles: &ParticleEnsemble) -> Result<()> {
        for (i, p) in particles.points().enumerate() {
            let mut row = vec![outer.to_string(), i.to_string()];
            row.extend(p.iter().map(|v| v.to_string()));
            self.inner.write_record(&row)?;
        }
        self.inner.flush().map_err(|e| Error::io("snapshots", e))
    }
}

/// Streams telemetry rows. A missing classifier loss is written as an empty
/// field.
pub struct TelemetryWriter {
    inner: csv::Writer<File>,
}

impl TelemetryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = create(path)?;
        inner.write_record(TELEMETRY_HEADER)?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, records: &[TelemetryRecord]) -> Result<()> {
        for r in records {
            self.inner.write_record([
                r.outer.to_string(),
                r.inner.to_string(),
                r.mean_sq_velocity.to_string(),
                r.divergence_estimate.to_string(),
                r.classifier_loss.map(|l| l.to_string()).unwrap_or_default(),
                r.clamp_count.to_string(),
            ])?;
        }
        self.inner.flush().map_err(|e| Error::io("telemetry", e))
    }
}

/// Writes a header plus rows of already formatted fields.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn points_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let x = ParticleEnsemble::from_rows(&[vec![1.5, -2.0], vec![0.1, 1e-12]]).unwrap();
        write_points(&path, &x).unwrap();
        assert_eq!(read_points(&path).unwrap(), x);
    }

    #[test]
    fn ragged_row_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        fs::write(&path, "x0,x1\n1,2\n3,4\n5\n").unwrap();
        match read_points(&path) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn empty_and_non_numeric_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        fs::write(&path, "x0,x1\n").unwrap();
        assert!(matches!(read_points(&path), Err(Error::Data { .. })));
        fs::write(&path, "").unwrap();
        assert!(read_points(&path).is_err());
        fs::write(&path, "x0\n1\nabc\n").unwrap();
        assert!(matches!(
            read_points(&path),
            Err(Error::Data { row: 2, .. })
        ));
    }

    #[test]
    fn telemetry_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut w = TelemetryWriter::create(&path).unwrap();
        w.write(&[TelemetryRecord {
            outer: 1,
            inner: 2,
            mean_sq_velocity: 0.5,
            divergence_estimate: 0.25,
            classifier_loss: None,
            clamp_count: 3,
            clipped_count: 0,
        }])
        .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "outer,inner,mean_sq_velocity,divergence_estimate,classifier_loss,clamp_count\n1,2,0.5,0.25,,3\n"
        );
    }
}
