//! On-disk formats: the dataset directory layout and atomic file writes.
//!
//! A dataset directory holds `X0.csv` (d₀ rows × n comma-separated columns,
//! shortest round-trip decimal, '\n' newlines), `Y.csv` (one response per
//! line), and `meta.json` (spec, seed record, latents).

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::model::{spec_from_json, spec_to_json, Dataset, Latents, NetworkSpec, SeedRecord};
use crate::{Error, Result};

/// Write bytes to `path` through a sibling temp file and rename, so a
/// killed run never leaves a partial file at the destination.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp.{}",
        path.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn matrix_to_csv(m: &Array2<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            s.push_str(&format!("{}", m[(i, j)]));
        }
        s.push('\n');
    }
    s
}

fn csv_to_matrix(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.is_empty() {
            rows.push(Vec::new());
            continue;
        }
        let mut row = Vec::new();
        for cell in line.split(',') {
            row.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Numeric(format!("csv line {}: {e}", ln + 1)))?,
            );
        }
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Shape("ragged csv matrix".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((nrows, ncols), flat)
        .map_err(|e| Error::Shape(format!("csv shape: {e}")))
}

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: serde_json::Value,
    seed_record: SeedRecord,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latents: Option<Latents>,
}

pub fn write_dataset_dir(dir: &Path, spec: &NetworkSpec, dataset: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join("X0.csv"), matrix_to_csv(&dataset.inputs).as_bytes())?;
    let mut y = String::new();
    for v in dataset.labels.iter() {
        y.push_str(&format!("{v}\n"));
    }
    atomic_write(&dir.join("Y.csv"), y.as_bytes())?;
    let meta = Meta {
        spec: spec_to_json(spec),
        seed_record: dataset.seed_record.clone(),
        n: dataset.n(),
        latents: dataset.latents.clone(),
    };
    atomic_write(
        &dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )?;
    Ok(())
}

pub fn read_dataset_dir(dir: &Path) -> Result<(NetworkSpec, Dataset)> {
    let meta_text = std::fs::read_to_string(dir.join("meta.json"))
        .map_err(|e| Error::Spec(format!("cannot read meta.json: {e}")))?;
    let meta: Meta =
        serde_json::from_str(&meta_text).map_err(|e| Error::Spec(format!("bad meta.json: {e}")))?;
    let spec = spec_from_json(&meta.spec)?;
    let x_text = std::fs::read_to_string(dir.join("X0.csv"))?;
    let inputs = if meta.n == 0 {
        Array2::zeros((spec.input_dim(), 0))
    } else {
        csv_to_matrix(&x_text)?
    };
    let y_text = std::fs::read_to_string(dir.join("Y.csv"))?;
    let mut labels = Vec::new();
    for line in y_text.lines() {
        if line.is_empty() {
            continue;
        }
        labels.push(
            line.trim()
                .parse::<f64>()
                .map_err(|e| Error::Numeric(format!("Y.csv: {e}")))?,
        );
    }
    if inputs.ncols() != labels.len() {
        return Err(Error::Shape(format!(
            "X0 has {} columns but Y has {} entries",
            inputs.ncols(),
            labels.len()
        )));
    }
    Ok((
        spec,
        Dataset {
            inputs,
            labels: Array1::from_vec(labels),
            latents: meta.latents,
            seed_record: meta.seed_record,
        },
    ))
}
