//! Finite-torus checks of an extracted solution.

use crate::config::{ModelName, RunConfig};
use crate::output::SolutionsFile;
use crate::pipeline::{build_basis, build_model};
use crate::{Result, RunError};
use peps_kernel::basis::{wegner_dual, OperatorBasis};
use peps_kernel::hamiltonians::dual_vertex_term;
use peps_kernel::models::{build_deformed_tc_state, EdgeLattice, FiniteTorus};
use peps_kernel::oracle::{
    build_edge_global_operator, build_global_operator, contract_torus_statevector,
    expectation_and_variance, spectrum, zz_bond_sum, GlobalOperator, SpectrumMode,
    FULL_SPECTRUM_LIMIT, MAX_STATE_DIM,
};
use peps_kernel::C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Deformed toric-code temperatures checked for annihilation.
pub const DUAL_BETAS: [f64; 3] = [0.0, 0.4, 1.0];
/// Eigenvalues with smaller magnitude count as zero modes.
pub const ZERO_MODE_THRESHOLD: f64 = 1e-10;

#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    /// The global operator vanishes or is a multiple of the identity.
    GlobalOp,
    /// Variance per site of the global operator equals the solution's eigenvalue.
    Variance,
    /// Commutes with the Ising bond sum and annihilates the all-plus state.
    Commutator,
    /// Zero-mode count and spectral symmetry of the full spectrum.
    ScarDos,
    /// Edge dual matches the dual vertex term and annihilates the deformed toric code.
    Duality,
}

impl Check {
    pub fn name(&self) -> &'static str {
        match self {
            Check::GlobalOp => "global-op",
            Check::Variance => "variance",
            Check::Commutator => "commutator",
            Check::ScarDos => "scar-dos",
            Check::Duality => "duality",
        }
    }

    pub fn default_torus(&self) -> [usize; 2] {
        match self {
            Check::GlobalOp | Check::Variance => [4, 4],
            Check::Commutator => [3, 3],
            Check::ScarDos => [3, 4],
            Check::Duality => [2, 2],
        }
    }

    pub fn default_tolerance(&self) -> f64 {
        match self {
            Check::Variance => 1e-9,
            _ => 1e-10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: Check,
    pub torus: [usize; 2],
    pub tolerance: f64,
    pub passed: bool,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: RunConfig,
    pub solution: usize,
    pub eigenvalue: f64,
    pub checks: Vec<CheckReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// One requested check with optional torus and tolerance overrides.
#[derive(Clone, Copy, Debug)]
pub struct CheckRequest {
    pub check: Check,
    pub torus: Option<[usize; 2]>,
    pub tolerance: Option<f64>,
    pub expected_zero_modes: Option<usize>,
}

impl CheckRequest {
    pub fn new(check: Check) -> Self {
        Self {
            check,
            torus: None,
            tolerance: None,
            expected_zero_modes: None,
        }
    }
}

struct Subject<'a> {
    cfg: &'a RunConfig,
    basis: OperatorBasis,
    h: Vec<f64>,
    eigenvalue: f64,
    /// `2 J1` of the SU(2) family, used to normalize energies.
    j1_scale: Option<f64>,
}

/// Run the requested checks concurrently; reports come back in request order.
pub fn verify(
    file: &SolutionsFile,
    index: usize,
    requests: &[CheckRequest],
) -> Result<VerifyReport> {
    let sol = file.solutions.get(index).ok_or_else(|| {
        RunError::Input(format!(
            "solution {index} not in file ({} present)",
            file.solutions.len()
        ))
    })?;
    let cfg = &file.config;
    let d = build_model(cfg)?.0.d;
    let (basis, _) = build_basis(cfg, d)?;
    if sol.coefficients.len() != basis.len() {
        return Err(RunError::Input(format!(
            "solution has {} coefficients, basis has {}",
            sol.coefficients.len(),
            basis.len()
        )));
    }
    let subject = Subject {
        cfg,
        basis,
        h: sol.coefficients.clone(),
        eigenvalue: sol.eigenvalue,
        j1_scale: sol.rvb.map(|r| 2.0 * r.j1_raw),
    };
    let results: Vec<Result<CheckReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = requests
            .iter()
            .map(|r| s.spawn(|| run_check(&subject, r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("check thread panicked"))
            .collect()
    });
    Ok(VerifyReport {
        config: cfg.clone(),
        solution: index,
        eigenvalue: sol.eigenvalue,
        checks: results.into_iter().collect::<Result<_>>()?,
    })
}

fn run_check(s: &Subject, r: &CheckRequest) -> Result<CheckReport> {
    let torus = r.torus.unwrap_or_else(|| match r.check {
        Check::GlobalOp | Check::Variance => s.cfg.backend.torus.unwrap_or(r.check.default_torus()),
        _ => r.check.default_torus(),
    });
    let tol = r.tolerance.unwrap_or(r.check.default_tolerance());
    let mut values = BTreeMap::new();
    let passed = match r.check {
        Check::GlobalOp => global_op(s, torus, tol, &mut values)?,
        Check::Variance => variance(s, torus, tol, &mut values)?,
        Check::Commutator => commutator(s, torus, tol, &mut values)?,
        Check::ScarDos => scar_dos(s, torus, tol, r.expected_zero_modes, &mut values)?,
        Check::Duality => duality(s, torus, tol, &mut values)?,
    };
    Ok(CheckReport {
        check: r.check,
        torus,
        tolerance: tol,
        passed,
        values,
    })
}

fn global(s: &Subject, torus: [usize; 2]) -> Result<GlobalOperator> {
    let t = FiniteTorus::new(torus[0], torus[1], s.basis.d());
    Ok(build_global_operator(
        &s.h,
        &s.basis,
        &t,
        &s.cfg.momentum()?,
    )?)
}

fn global_op(
    s: &Subject,
    torus: [usize; 2],
    tol: f64,
    out: &mut BTreeMap<String, f64>,
) -> Result<bool> {
    let op = global(s, torus)?;
    let max = op.max_abs();
    let (c, resid) = op.identity_residual();
    out.insert("max_abs".into(), max);
    out.insert("identity_coefficient".into(), c.re);
    out.insert("identity_residual".into(), resid);
    Ok(max < tol || resid < tol)
}

fn variance(
    s: &Subject,
    torus: [usize; 2],
    tol: f64,
    out: &mut BTreeMap<String, f64>,
) -> Result<bool> {
    let (peps, _) = build_model(s.cfg)?;
    let t = FiniteTorus::new(torus[0], torus[1], peps.d);
    let dim = t.dim()?;
    if dim > MAX_STATE_DIM {
        return Err(RunError::Input(format!(
            "{}x{} torus has dimension {dim} above {MAX_STATE_DIM}",
            torus[0], torus[1]
        )));
    }
    let psi = contract_torus_statevector(&peps, &t)?;
    let op = build_global_operator(&s.h, &s.basis, &t, &s.cfg.momentum()?)?;
    let (e, var) = expectation_and_variance(&op, &psi)?;
    let resid = (var - s.eigenvalue).abs();
    out.insert("energy_per_site".into(), e);
    out.insert("variance_per_site".into(), var);
    out.insert("eigenvalue".into(), s.eigenvalue);
    out.insert("residual".into(), resid);
    if let Some(scale) = s.j1_scale {
        out.insert("energy_per_site_j1".into(), e / scale);
        out.insert("variance_per_site_j1".into(), var / (scale * scale));
        if s.cfg.momentum()?.is_real() {
            let ground = spectrum(&op, SpectrumMode::Lowest(1), false)?;
            out.insert(
                "ground_energy_per_site_j1".into(),
                ground.values[0] / t.n_sites() as f64 / scale,
            );
        }
    }
    Ok(resid < tol)
}

fn commutator(
    s: &Subject,
    torus: [usize; 2],
    tol: f64,
    out: &mut BTreeMap<String, f64>,
) -> Result<bool> {
    if s.basis.d() != 2 {
        return Err(RunError::Input(
            "commutator check needs spin-1/2 sites".into(),
        ));
    }
    let t = FiniteTorus::new(torus[0], torus[1], 2);
    let op = global(s, torus)?;
    let comm = op.commutator_max(&zz_bond_sum(&t)?)?;
    let amp = 1.0 / (op.dim as f64).sqrt();
    let plus = vec![C64::new(amp, 0.0); op.dim];
    let on_plus = op
        .matvec(&plus)
        .iter()
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        .sqrt();
    out.insert("bond_sum_commutator".into(), comm);
    out.insert("all_plus_residual".into(), on_plus);
    Ok(comm < tol && on_plus < tol)
}

fn scar_dos(
    s: &Subject,
    torus: [usize; 2],
    tol: f64,
    expected: Option<usize>,
    out: &mut BTreeMap<String, f64>,
) -> Result<bool> {
    let op = global(s, torus)?;
    if op.dim > FULL_SPECTRUM_LIMIT {
        return Err(RunError::Input(format!(
            "dense spectrum of dimension {} above {FULL_SPECTRUM_LIMIT}",
            op.dim
        )));
    }
    let sp = spectrum(&op, SpectrumMode::Full, false)?;
    let n = sp.values.len();
    let zeros = sp.zero_mode_count(ZERO_MODE_THRESHOLD);
    let asym = (0..n)
        .map(|i| (sp.values[i] + sp.values[n - 1 - i]).abs())
        .fold(0.0, f64::max);
    out.insert("dimension".into(), n as f64);
    out.insert("zero_modes".into(), zeros as f64);
    out.insert("symmetry_residual".into(), asym);
    Ok(asym < tol && expected.is_none_or(|e| e == zeros))
}

fn duality(
    s: &Subject,
    torus: [usize; 2],
    tol: f64,
    out: &mut BTreeMap<String, f64>,
) -> Result<bool> {
    if s.basis.geometry != peps_kernel::basis::SupportGeometry::plaquette(2)
        || s.basis.combination_rows().is_some()
    {
        return Err(RunError::Input(
            "duality check needs a spin-1/2 plaquette product basis".into(),
        ));
    }
    if s.cfg.model.name != ModelName::Ising {
        return Err(RunError::Input(
            "duality check applies to the Ising model".into(),
        ));
    }
    // Drop eigensolver noise so that strings outside the Z2-even sector vanish.
    let max = s.h.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let cut = 1e-9 * max;
    let dropped =
        s.h.iter()
            .filter(|c| c.abs() <= cut)
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt();
    let h: Vec<f64> =
        s.h.iter()
            .map(|&c| if c.abs() > cut { c } else { 0.0 })
            .collect();
    let lat = EdgeLattice::new(torus[0], torus[1]);
    let dual = build_edge_global_operator(&wegner_dual(&h)?, &lat)?;
    let reference = build_edge_global_operator(&dual_vertex_term(), &lat)?;
    let (lambda, resid) = dual.proportionality(&reference)?;
    let rel = resid / dual.max_abs().max(f64::MIN_POSITIVE);
    out.insert("dropped_norm".into(), dropped);
    out.insert("dual_ratio".into(), lambda.re);
    out.insert("dual_residual".into(), rel);
    let mut worst = 0.0f64;
    for beta in DUAL_BETAS {
        let psi: Vec<C64> = build_deformed_tc_state(beta, lat)?
            .into_iter()
            .map(|x| C64::new(x, 0.0))
            .collect();
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let r = dual
            .matvec(&psi)
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
            / norm
            / lambda.norm();
        out.insert(format!("annihilation_beta_{beta}"), r);
        worst = worst.max(r);
    }
    Ok(rel < tol && worst < tol && lambda.norm() > 0.0)
}
