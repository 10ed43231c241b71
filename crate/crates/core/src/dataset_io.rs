//! On-disk panel format.
//!
//! A dataset directory holds `meta.json` (dimensions, variant, sampling and
//! the generating config), `y.csv` (N rows × T columns), `x.csv` (N·T rows ×
//! K columns, individual-major then period) and, for slope effects, `z.csv`
//! (N × T). Absent cells of truncated panels are empty fields. The latent
//! truth is never written.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::g17_opt;
use crate::panel_sim::{ModelVariant, PanelConfig, PanelDataset, Sampling};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub variant: ModelVariant,
    pub sampling: Sampling,
    pub n_individuals: usize,
    pub n_periods: usize,
    pub n_regressors: usize,
    pub has_z: bool,
    pub retained_cells: usize,
    pub config: PanelConfig,
}

pub fn write_dataset(dataset: &PanelDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (n, t, k) = (
        dataset.n_individuals,
        dataset.n_periods,
        dataset.n_regressors,
    );

    let meta = DatasetMeta {
        format_version: FORMAT_VERSION,
        variant: dataset.variant(),
        sampling: dataset.sampling(),
        n_individuals: n,
        n_periods: t,
        n_regressors: k,
        has_z: dataset.z.is_some(),
        retained_cells: dataset.retained_cells(),
        config: dataset.config.clone(),
    };
    let meta_path = dir.join("meta.json");
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

    let period_header: Vec<String> = (0..t).map(|s| format!("t{s}")).collect();
    write_matrix(&dir.join("y.csv"), &period_header, &dataset.y, t)?;
    let x_header: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
    write_matrix(&dir.join("x.csv"), &x_header, &dataset.x, k)?;
    if let Some(z) = &dataset.z {
        write_matrix(&dir.join("z.csv"), &period_header, z, t)?;
    }
    Ok(())
}

fn write_matrix(path: &Path, header: &[String], values: &[f64], cols: usize) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in values.chunks(cols) {
        w.write_record(row.iter().map(|v| g17_opt(*v)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Loads a dataset directory. The result carries no latent truth.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<PanelDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: meta_path.display().to_string(),
        message: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Parse {
            path: meta_path.display().to_string(),
            message: format!("unsupported format_version {}", meta.format_version),
        });
    }
    let (n, t, k) = (meta.n_individuals, meta.n_periods, meta.n_regressors);
    if meta.config.n_individuals != n || meta.config.n_periods != t || meta.config.n_regressors != k
    {
        return Err(Error::Parse {
            path: meta_path.display().to_string(),
            message: "dimensions disagree with the embedded config".into(),
        });
    }

    let y = read_matrix(&dir.join("y.csv"), n, t)?;
    let x = read_matrix(&dir.join("x.csv"), n * t, k)?;
    let z = if meta.has_z {
        Some(read_matrix(&dir.join("z.csv"), n, t)?)
    } else {
        None
    };
    if meta.sampling == Sampling::Censored && y.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse {
            path: dir.join("y.csv").display().to_string(),
            message: "censored panels cannot have absent cells".into(),
        });
    }
    if y.iter().any(|v| *v < 0.0) {
        return Err(Error::Parse {
            path: dir.join("y.csv").display().to_string(),
            message: "outcomes must be non-negative".into(),
        });
    }
    Ok(PanelDataset {
        n_individuals: n,
        n_periods: t,
        n_regressors: k,
        y,
        x,
        z,
        truth: None,
        config: meta.config,
    })
}

fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let parse_err = |message: String| Error::Parse {
        path: path.display().to_string(),
        message,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != cols {
            return Err(parse_err(format!(
                "row {} has {} fields, expected {cols}",
                line + 1,
                rec.len()
            )));
        }
        for field in rec.iter() {
            let field = field.trim();
            let v = if field.is_empty() {
                f64::NAN
            } else {
                field
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("row {}: `{field}`: {e}", line + 1)))?
            };
            out.push(v);
        }
        seen += 1;
    }
    if seen != rows {
        return Err(parse_err(format!("found {seen} rows, expected {rows}")));
    }
    Ok(out)
}
