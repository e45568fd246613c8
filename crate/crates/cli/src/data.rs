//! Data files: a header row, then one row per sample with the targets in the last columns.

use std::path::Path;

use anyhow::{bail, Context, Result};
use police::train::Dataset;
use police::Mat;

/// Reads `path`, taking the last `outputs` columns as targets.
pub fn read_dataset(path: &Path, outputs: usize) -> Result<Dataset<f64>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let width = reader.headers().with_context(|| format!("reading header of {}", path.display()))?.len();
    if width <= outputs {
        bail!("{}: {width} columns, need more than {outputs}", path.display());
    }
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.with_context(|| format!("{}:{line}", path.display()))?;
        if record.len() != width {
            bail!("{}:{line}: {} fields, expected {width}", path.display(), record.len());
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{}:{line} column {}: {field:?} is not a number", path.display(), c + 1))?;
            if !v.is_finite() {
                bail!("{}:{line} column {}: non-finite value", path.display(), c + 1);
            }
            if c < width - outputs {
                inputs.push(v);
            } else {
                targets.push(v);
            }
        }
        rows += 1;
    }
    if rows == 0 {
        bail!("{}: no data rows", path.display());
    }
    Ok(Dataset::new(
        Mat::new(rows, width - outputs, inputs)?,
        Mat::new(rows, outputs, targets)?,
    )?)
}

pub fn write_dataset(path: &Path, data: &Dataset<f64>, header: &[&str]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(header)?;
    for (x, t) in data.inputs.row_iter().zip(data.targets.row_iter()) {
        writer.write_record(x.iter().chain(t).map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
