//! Result files of an extraction run. Every file carries the resolved config.

use crate::config::RunConfig;
use crate::pipeline::{Extraction, Quality, SubKernel};
use crate::{Result, RunError};
use peps_kernel::extraction::{DeflationRecord, Provenance, RvbAnsatzCoefficients};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SPECTRUM_JSON: &str = "spectrum.json";
pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const SOLUTIONS_JSON: &str = "solutions.json";
pub const STRUCTURE_FACTOR_JSON: &str = "structure_factor.json";

/// Coefficients below this magnitude are omitted from the readable term list.
const TERM_CUTOFF: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumRecord {
    pub n: usize,
    pub m: usize,
    pub lx: usize,
    pub ly: usize,
    pub label: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub config: RunConfig,
    pub geometry: String,
    pub momentum: MomentumRecord,
    pub provenance: Provenance,
    /// Ascending eigenvalues of `𝒮`.
    pub eigenvalues: Vec<f64>,
    /// Ascending eigenvalues after deflation; deflated directions sit at the sentinel.
    pub deflated_eigenvalues: Vec<f64>,
    pub deflation: DeflationRecord,
    pub sub_kernels: Vec<SubKernel>,
    pub quality: Quality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub label: String,
    pub coefficient: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub index: usize,
    pub eigenvalue: f64,
    pub block: usize,
    pub block_size: usize,
    /// Unit-norm coefficients in basis order.
    pub coefficients: Vec<f64>,
    pub terms: Vec<Term>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rvb: Option<RvbAnsatzCoefficients>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionsFile {
    pub config: RunConfig,
    pub geometry: String,
    pub momentum: MomentumRecord,
    pub provenance: Provenance,
    pub labels: Vec<String>,
    pub deflation: DeflationRecord,
    pub quality: Quality,
    pub solutions: Vec<SolutionRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StructureFactorFile {
    pub config: RunConfig,
    pub labels: Vec<String>,
    /// Rows of `S` as `(re, im)` pairs.
    pub raw: Vec<Vec<[f64; 2]>>,
    /// Rows of `𝒮 = Re(S + Sᵀ)/2`.
    pub sym: Vec<Vec<f64>>,
    pub max_imag: f64,
    pub asymmetry: f64,
}

fn momentum_record(e: &Extraction) -> MomentumRecord {
    let q = e.structure_factor.q;
    MomentumRecord {
        n: q.n,
        m: q.m,
        lx: q.lx,
        ly: q.ly,
        label: q.label(),
    }
}

pub fn spectrum_file(e: &Extraction) -> SpectrumFile {
    SpectrumFile {
        config: e.config.clone(),
        geometry: e.basis.geometry.name(),
        momentum: momentum_record(e),
        provenance: e.structure_factor.provenance,
        eigenvalues: e.eigenvalues.clone(),
        deflated_eigenvalues: e.deflated_eigenvalues.clone(),
        deflation: e.deflated.record.clone(),
        sub_kernels: e.sub_kernels.clone(),
        quality: e.quality.clone(),
    }
}

pub fn solutions_file(e: &Extraction) -> SolutionsFile {
    let labels = e.basis.labels();
    let solutions = e
        .solutions
        .iter()
        .zip(&e.rvb)
        .enumerate()
        .map(|(index, (s, rvb))| SolutionRecord {
            index,
            eigenvalue: s.eigenvalue,
            block: s.block,
            block_size: s.block_size,
            coefficients: s.coefficients.clone(),
            terms: s
                .coefficients
                .iter()
                .zip(&labels)
                .filter(|(c, _)| c.abs() > TERM_CUTOFF)
                .map(|(&coefficient, label)| Term {
                    label: label.clone(),
                    coefficient,
                })
                .collect(),
            rvb: *rvb,
        })
        .collect();
    SolutionsFile {
        config: e.config.clone(),
        geometry: e.basis.geometry.name(),
        momentum: momentum_record(e),
        provenance: e.structure_factor.provenance,
        labels,
        deflation: e.deflated.record.clone(),
        quality: e.quality.clone(),
        solutions,
    }
}

pub fn structure_factor_file(e: &Extraction) -> StructureFactorFile {
    let s = &e.structure_factor;
    let n = s.dim();
    StructureFactorFile {
        config: e.config.clone(),
        labels: s.labels.clone(),
        raw: (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| [s.raw[(i, j)].re, s.raw[(i, j)].im])
                    .collect()
            })
            .collect(),
        sym: (0..n)
            .map(|i| (0..n).map(|j| s.sym[(i, j)]).collect())
            .collect(),
        max_imag: s.max_imag,
        asymmetry: s.asymmetry,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| RunError::Input(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Input(format!("{}: {e}", path.display())))
}

/// `#`-prefixed lines carrying the config, for the head of CSV files.
pub fn config_comment(cfg: &RunConfig) -> String {
    cfg.to_toml()
        .lines()
        .map(|l| {
            if l.is_empty() {
                "#\n".to_string()
            } else {
                format!("# {l}\n")
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub index: usize,
    pub eigenvalue: f64,
    pub deflated: f64,
}

pub fn spectrum_rows(eigenvalues: &[f64], deflated: &[f64]) -> Vec<SpectrumRow> {
    eigenvalues
        .iter()
        .zip(deflated)
        .enumerate()
        .map(|(index, (&eigenvalue, &deflated))| SpectrumRow {
            index,
            eigenvalue,
            deflated,
        })
        .collect()
}

pub fn write_spectrum_csv(path: &Path, f: &SpectrumFile) -> Result<()> {
    let mut buf = config_comment(&f.config).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in spectrum_rows(&f.eigenvalues, &f.deflated_eigenvalues) {
            w.serialize(row)
                .map_err(|e| RunError::Input(e.to_string()))?;
        }
        w.flush().map_err(io_err(path))?;
    }
    std::fs::write(path, buf).map_err(io_err(path))
}

/// Write all result files into the configured output directory; returns their paths.
pub fn write_all(e: &Extraction) -> Result<Vec<PathBuf>> {
    let dir = &e.config.output.dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let spectrum = spectrum_file(e);
    let paths: Vec<PathBuf> = [
        SPECTRUM_JSON,
        SPECTRUM_CSV,
        SOLUTIONS_JSON,
        STRUCTURE_FACTOR_JSON,
    ]
    .iter()
    .map(|f| dir.join(f))
    .collect();
    write_json(&paths[0], &spectrum)?;
    write_spectrum_csv(&paths[1], &spectrum)?;
    write_json(&paths[2], &solutions_file(e))?;
    write_json(&paths[3], &structure_factor_file(e))?;
    Ok(paths)
}
