//! Spectrum tables for plotting, gathered from one or more runs.

use crate::config::RunConfig;
use crate::output::{
    config_comment, read_json, spectrum_rows, write_json, MomentumRecord, SpectrumFile,
};
use crate::{Result, RunError};
use peps_kernel::extraction::Provenance;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// Format implied by a file extension.
    pub fn from_path(p: &Path) -> Option<Self> {
        match p.extension()?.to_str()? {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExportedSpectrum {
    pub source: String,
    pub config: RunConfig,
    pub geometry: String,
    pub momentum: MomentumRecord,
    pub provenance: Provenance,
    pub eigenvalues: Vec<f64>,
    pub deflated_eigenvalues: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
struct CsvRow<'a> {
    source: &'a str,
    geometry: &'a str,
    momentum: &'a str,
    index: usize,
    eigenvalue: f64,
    deflated: f64,
}

/// Read `spectrum.json` files (or directories containing one), in the given order.
pub fn collect(inputs: &[PathBuf]) -> Result<Vec<ExportedSpectrum>> {
    inputs
        .iter()
        .map(|p| {
            let file = if p.is_dir() {
                p.join(crate::output::SPECTRUM_JSON)
            } else {
                p.clone()
            };
            let f: SpectrumFile = read_json(&file)?;
            Ok(ExportedSpectrum {
                source: p.display().to_string(),
                config: f.config,
                geometry: f.geometry,
                momentum: f.momentum,
                provenance: f.provenance,
                eigenvalues: f.eigenvalues,
                deflated_eigenvalues: f.deflated_eigenvalues,
            })
        })
        .collect()
}

pub fn write(out: &Path, format: Format, spectra: &[ExportedSpectrum]) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
            path: dir.into(),
            source,
        })?;
    }
    match format {
        Format::Json => write_json(out, &spectra),
        Format::Csv => {
            let mut buf = Vec::new();
            for s in spectra {
                buf.extend(format!("# source: {}\n", s.source).bytes());
                buf.extend(config_comment(&s.config).bytes());
            }
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                for s in spectra {
                    for r in spectrum_rows(&s.eigenvalues, &s.deflated_eigenvalues) {
                        w.serialize(CsvRow {
                            source: &s.source,
                            geometry: &s.geometry,
                            momentum: &s.momentum.label,
                            index: r.index,
                            eigenvalue: r.eigenvalue,
                            deflated: r.deflated,
                        })
                        .map_err(|e| RunError::Input(e.to_string()))?;
                    }
                }
                w.flush().map_err(|source| RunError::Io {
                    path: out.into(),
                    source,
                })?;
            }
            std::fs::write(out, buf).map_err(|source| RunError::Io {
                path: out.into(),
                source,
            })
        }
    }
}
