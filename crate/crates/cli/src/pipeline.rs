//! Model construction, structure-factor evaluation, deflation and solving.

use crate::config::{BackendKind, BasisName, ModelName, RunConfig};
use crate::{Result, RunError};
use peps_kernel::basis::{
    embed_smaller_support, product_basis, su2_reduced_plaquette_basis, trivial_subspace, Momentum,
    OperatorBasis, Su2Class, SupportGeometry,
};
use peps_kernel::ctmrg::CtmParams;
use peps_kernel::extraction::{
    deflate, rvb_coefficients, solve, subspace_in_basis, ConservedOperatorSolution, DeflatedMatrix,
    RvbAnsatzCoefficients, StructureFactorMatrix,
};
use peps_kernel::genfunc::{
    genfunc_structure_factor, GenFuncDiagnostics, GenFuncParams, PepoKind, RowCache,
};
use peps_kernel::models::{
    build_aklt_peps, build_ising_peps, build_rvb_peps, FiniteTorus, PepsUnitCell,
};
use peps_kernel::oracle::{
    contract_torus_statevector, exact_structure_factor, StateSource, MAX_STATE_DIM,
};
use peps_kernel::C64;
use serde::{Deserialize, Serialize};

/// The state named by the config and a short tag for cache keys.
pub fn build_model(cfg: &RunConfig) -> Result<(PepsUnitCell, String)> {
    let m = &cfg.model;
    Ok(match m.name {
        ModelName::Ising => {
            let beta = m.beta.as_ref().expect("validated").value()?;
            (build_ising_peps(beta)?, format!("ising-b{beta:e}"))
        }
        ModelName::Aklt => (build_aklt_peps(), "aklt".into()),
        ModelName::Rvb => (build_rvb_peps(), "rvb".into()),
        ModelName::File => {
            let path = m.path.as_ref().expect("validated");
            let peps = PepsUnitCell::load(path)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into());
            (peps, format!("file-{stem}"))
        }
    })
}

/// The operator basis of the config, with symmetry classes for the SU(2) basis.
pub fn build_basis(cfg: &RunConfig, d: usize) -> Result<(OperatorBasis, Option<Vec<Su2Class>>)> {
    match cfg.basis.geometry {
        BasisName::Su2Plaquette => {
            if d != 2 {
                return Err(RunError::Input(format!(
                    "su2-39 basis needs d = 2, model has d = {d}"
                )));
            }
            let (b, c) = su2_reduced_plaquette_basis();
            Ok((b, Some(c)))
        }
        g => Ok((product_basis(&g.geometry(d)), None)),
    }
}

/// Smaller supports whose solutions are projected out of `g`.
pub fn sub_geometries(g: &SupportGeometry) -> Vec<SupportGeometry> {
    let d = g.d;
    match g.k() {
        1 => vec![],
        2 => vec![SupportGeometry::site(d)],
        _ => vec![
            SupportGeometry::site(d),
            SupportGeometry::pair(d),
            SupportGeometry::vertical_pair(d),
        ]
        .into_iter()
        .filter(|s| !s.placements_in(g).is_empty())
        .collect(),
    }
}

/// A structure-factor evaluator bound to one state.
pub enum Backend {
    Oracle {
        peps: PepsUnitCell,
        torus: FiniteTorus,
        psi: Option<Vec<C64>>,
    },
    Genfunc {
        peps: PepsUnitCell,
        params: GenFuncParams,
        cache: Option<RowCache>,
    },
}

impl Backend {
    pub fn new(cfg: &RunConfig, peps: PepsUnitCell, tag: &str) -> Result<Self> {
        let b = &cfg.backend;
        Ok(match b.kind {
            BackendKind::Oracle => {
                let [lx, ly] = b.torus.expect("validated");
                let torus = FiniteTorus::new(lx, ly, peps.d);
                let psi = match torus.dim() {
                    Ok(dim) if dim <= MAX_STATE_DIM => {
                        Some(contract_torus_statevector(&peps, &torus)?)
                    }
                    _ => None,
                };
                Backend::Oracle { peps, torus, psi }
            }
            BackendKind::Genfunc => {
                let chi = b.chi.expect("validated");
                let mut ctm = CtmParams::new(chi);
                if let Some(t) = b.tol {
                    ctm.tol = t;
                }
                if let Some(n) = b.max_iter {
                    ctm.max_iter = n;
                }
                let kind = PepoKind::of(&cfg.basis.geometry.geometry(peps.d))?;
                let mut params = GenFuncParams::new(chi, kind);
                params.ctm = ctm;
                params.delta = b.delta.expect("validated");
                if let Some(m) = b.m_tol {
                    params.m_tol = m;
                }
                params.cold_check = b.cold_check;
                let cache = b.cache.as_ref().map(|dir| RowCache {
                    dir: dir.clone(),
                    tag: tag.to_string(),
                });
                Backend::Genfunc {
                    peps,
                    params,
                    cache,
                }
            }
        })
    }

    pub fn into_peps(self) -> PepsUnitCell {
        match self {
            Backend::Oracle { peps, .. } | Backend::Genfunc { peps, .. } => peps,
        }
    }

    /// `S(q)` in `basis`, with row diagnostics for the generating-function backend.
    pub fn structure_factor(
        &self,
        basis: &OperatorBasis,
        q: &Momentum,
        progress: &mut dyn FnMut(usize, usize),
    ) -> Result<(StructureFactorMatrix, Option<GenFuncDiagnostics>)> {
        match self {
            Backend::Oracle { peps, torus, psi } => {
                let source = match psi {
                    Some(psi) => StateSource::Statevector { psi, torus: *torus },
                    None => StateSource::DoubleLayer {
                        peps,
                        torus: *torus,
                    },
                };
                let s = exact_structure_factor(&source, basis, q)?;
                progress(1, 1);
                Ok((s, None))
            }
            Backend::Genfunc {
                peps,
                params,
                cache,
            } => {
                // Row indices are per geometry, so each geometry gets its own cache key.
                let cache = cache.as_ref().map(|c| RowCache {
                    dir: c.dir.clone(),
                    tag: format!("{}-{}", c.tag, basis.geometry.name()),
                });
                let (s, d) =
                    genfunc_structure_factor(peps, basis, q, params, cache.as_ref(), progress)?;
                Ok((s, Some(d)))
            }
        }
    }

    /// Eigenvalue below which a sub-geometry direction counts as a solution.
    pub fn kernel_threshold(&self, g: &SupportGeometry) -> f64 {
        match self {
            Backend::Oracle { .. } if g.k() == 1 => 1e-9,
            Backend::Oracle { .. } => 1e-7,
            Backend::Genfunc { .. } => 1e-6,
        }
    }
}

/// Solutions found on a smaller support and embedded into the target one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubKernel {
    pub geometry: String,
    pub threshold: f64,
    /// Kernel dimension on the smaller support.
    pub dimension: usize,
    /// Dimension of the embedded span inside the target basis.
    pub embedded_rank: usize,
}

/// Numerical-quality summary; any flag turns the exit status into "degraded".
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Quality {
    pub converged: bool,
    pub unconverged_rows: Vec<usize>,
    pub unstable_rows: Vec<usize>,
    pub max_roundoff_estimate: f64,
    pub max_iterations: usize,
    pub max_imag: f64,
    pub asymmetry: f64,
    pub min_eigenvalue: f64,
    pub psd_floor: f64,
    pub psd: bool,
    pub flags: Vec<String>,
}

impl Quality {
    pub fn degraded(&self) -> bool {
        !self.flags.is_empty()
    }
}

/// Everything an extraction run produces.
pub struct Extraction {
    pub config: RunConfig,
    pub state: PepsUnitCell,
    pub basis: OperatorBasis,
    pub classes: Option<Vec<Su2Class>>,
    pub structure_factor: StructureFactorMatrix,
    /// Ascending eigenvalues of `𝒮`.
    pub eigenvalues: Vec<f64>,
    pub deflated: DeflatedMatrix,
    /// Ascending eigenvalues of the deflated matrix.
    pub deflated_eigenvalues: Vec<f64>,
    pub sub_kernels: Vec<SubKernel>,
    pub solutions: Vec<ConservedOperatorSolution>,
    pub rvb: Vec<Option<RvbAnsatzCoefficients>>,
    pub quality: Quality,
}

fn kernel_vectors(s: &StructureFactorMatrix, threshold: f64) -> Result<Vec<Vec<f64>>> {
    let (vals, vecs) = peps_kernel::tensor::eigh_real_mat(s.sym.as_ref())?;
    let n = s.dim();
    Ok((0..n)
        .filter(|&k| vals[k] < threshold)
        .map(|k| (0..n).map(|i| vecs[(i, k)]).collect())
        .collect())
}

/// Run the full extraction described by `cfg`.
///
/// `progress` receives a stage name and (done, total) counts.
pub fn extract(
    cfg: &RunConfig,
    progress: &mut dyn FnMut(&str, usize, usize),
) -> Result<Extraction> {
    cfg.validate()?;
    let q = cfg.momentum()?;
    let (peps, tag) = build_model(cfg)?;
    let d = peps.d;
    let (basis, classes) = build_basis(cfg, d)?;
    if !q.is_real() && (cfg.deflation.trivial || cfg.deflation.embedded) {
        return Err(RunError::Input(format!(
            "deflation needs a real-phase momentum; disable it for {}",
            q.label()
        )));
    }
    let backend = Backend::new(cfg, peps, &tag)?;
    let g = basis.geometry.clone();

    let mut subspaces: Vec<(&str, Vec<Vec<f64>>)> = Vec::new();
    if cfg.deflation.trivial {
        subspaces.push((
            "trivial",
            subspace_in_basis(&basis, &trivial_subspace(&g, &q)?)?,
        ));
    }
    let mut sub_kernels = Vec::new();
    let mut sub_diags = Vec::new();
    if cfg.deflation.embedded {
        for sub in sub_geometries(&g) {
            let name = sub.name();
            let sb = product_basis(&sub);
            let (s, diag) = backend.structure_factor(&sb, &q, &mut |a, b| progress(&name, a, b))?;
            sub_diags.extend(diag);
            let threshold = backend.kernel_threshold(&sub);
            let kernel = kernel_vectors(&s, threshold)?;
            let (_, span) = embed_smaller_support(&kernel, &sub, &g, &q)?;
            let embedded = subspace_in_basis(&basis, &span)?;
            sub_kernels.push(SubKernel {
                geometry: name,
                threshold,
                dimension: kernel.len(),
                embedded_rank: embedded.len(),
            });
            subspaces.push(("embedded", embedded));
        }
    }
    let main_name = g.name();
    let (sf, diag) =
        backend.structure_factor(&basis, &q, &mut |a, b| progress(&main_name, a, b))?;
    let eigenvalues = sf.eigenvalues()?;
    let deflated = deflate(&sf, &subspaces)?;
    let deflated_eigenvalues = deflated.eigenvalues.clone();
    let solutions = solve(&deflated, &basis, cfg.output.solutions)?;
    let rvb = match &classes {
        Some(c) => solutions
            .iter()
            .map(|s| rvb_coefficients(s, c).ok())
            .collect(),
        None => vec![None; solutions.len()],
    };
    let quality = assess(&sf, &eigenvalues, diag.iter().chain(&sub_diags));
    Ok(Extraction {
        config: cfg.clone(),
        state: backend.into_peps(),
        basis,
        classes,
        structure_factor: sf,
        eigenvalues,
        deflated,
        deflated_eigenvalues,
        sub_kernels,
        solutions,
        rvb,
        quality,
    })
}

fn assess<'a>(
    sf: &StructureFactorMatrix,
    eigenvalues: &[f64],
    diags: impl Iterator<Item = &'a GenFuncDiagnostics>,
) -> Quality {
    let mut q = Quality {
        converged: true,
        unconverged_rows: vec![],
        unstable_rows: vec![],
        max_roundoff_estimate: 0.0,
        max_iterations: 0,
        max_imag: sf.max_imag,
        asymmetry: sf.asymmetry,
        min_eigenvalue: eigenvalues.first().copied().unwrap_or(0.0),
        psd_floor: sf.provenance.psd_floor(),
        psd: true,
        flags: vec![],
    };
    for d in diags {
        q.unconverged_rows.extend(&d.unconverged_rows);
        q.unstable_rows.extend(&d.unstable_rows);
        q.max_roundoff_estimate = q.max_roundoff_estimate.max(d.max_roundoff_estimate);
        q.max_iterations = q.max_iterations.max(d.max_iterations);
    }
    q.unconverged_rows.sort_unstable();
    q.unconverged_rows.dedup();
    q.unstable_rows.sort_unstable();
    q.unstable_rows.dedup();
    q.converged = q.unconverged_rows.is_empty();
    q.psd = q.min_eigenvalue >= q.psd_floor;
    if !q.converged {
        q.flags.push(format!(
            "{} rows did not converge",
            q.unconverged_rows.len()
        ));
    }
    if !q.unstable_rows.is_empty() {
        q.flags.push(format!(
            "{} rows exceed the stencil noise limit",
            q.unstable_rows.len()
        ));
    }
    if !q.psd {
        q.flags.push(format!(
            "lowest eigenvalue {:.3e} below {:.0e}",
            q.min_eigenvalue, q.psd_floor
        ));
    }
    q
}
