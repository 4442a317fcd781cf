//! Structure factor rows from the generating function
//! `G^α(μ, q) = Π_x (𝟙 + μ e^{-iq·x} o^α_x)`.
//!
//! `S_{αβ}(q)` is the μ-derivative at zero of `⟨Ψ|G^α o^β_0|Ψ⟩ / ⟨Ψ|G^α|Ψ⟩`,
//! evaluated with CTMRG on the triple-layer network and a five-point stencil.
//!
//! Operator tensors have legs `[p_out, p_in, l, u, r, d]`. The constructions
//! agree with `G^α` through first order in μ, which is all the derivative sees:
//!
//! - site elements use bond dimension 1;
//! - pairs use a two-state bond along the pair carrying the first factor
//!   (with μ and the phase) to the second;
//! - plaquettes use a hard-core gas of unit squares: horizontal bonds have two
//!   states, vertical bonds three (empty, left edge, right edge), and the
//!   top-left corner carries μ and the phase.

use crate::basis::{product_coefficients, Momentum, OperatorBasis, SupportGeometry};
use crate::ctmrg::{
    converge_environment, patch_matrix, ConvergenceReport, CtmEnvironment, CtmParams, Network, Seed,
};
use crate::error::{Error, Result};
use crate::extraction::{Provenance, StructureFactorMatrix};
use crate::models::{Injectivity, PepsUnitCell};
use crate::tensor::Tensor;
use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Shape of the support of a basis element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PepoKind {
    Site,
    Pair,
    VerticalPair,
    Plaquette,
}

impl PepoKind {
    pub fn of(g: &SupportGeometry) -> Result<Self> {
        let d = g.d;
        if *g == SupportGeometry::site(d) {
            Ok(Self::Site)
        } else if *g == SupportGeometry::pair(d) {
            Ok(Self::Pair)
        } else if *g == SupportGeometry::vertical_pair(d) {
            Ok(Self::VerticalPair)
        } else if *g == SupportGeometry::plaquette(d) {
            Ok(Self::Plaquette)
        } else {
            Err(Error::Unsupported(format!(
                "no generating-function operator for {}",
                g.name()
            )))
        }
    }

    /// Patch width and height of the support.
    pub fn patch(&self) -> (usize, usize) {
        match self {
            Self::Site => (1, 1),
            Self::Pair => (2, 1),
            Self::VerticalPair => (1, 2),
            Self::Plaquette => (2, 2),
        }
    }

    /// Operator bond dimensions (horizontal, vertical).
    pub fn bond_dims(&self) -> (usize, usize) {
        match self {
            Self::Site => (1, 1),
            Self::Pair => (2, 1),
            Self::VerticalPair => (1, 2),
            Self::Plaquette => (2, 3),
        }
    }

    /// Default finite-difference step.
    pub fn default_delta(&self) -> f64 {
        match self {
            Self::Site | Self::Pair | Self::VerticalPair => 1e-4,
            Self::Plaquette => 1e-2,
        }
    }
}

/// Operator network encoding `G^α(μ, q)` on a repeating cell.
#[derive(Clone, Debug)]
pub struct GenFuncPepo {
    pub kind: PepoKind,
    pub alpha: usize,
    pub q: Momentum,
    pub mu: f64,
    pub lx: usize,
    pub ly: usize,
    /// `O[p_out, p_in, l, u, r, d]`, row-major over the cell.
    pub tensors: Vec<Tensor>,
}

impl GenFuncPepo {
    pub fn tensor(&self, x: i64, y: i64) -> &Tensor {
        let i =
            y.rem_euclid(self.ly as i64) as usize * self.lx + x.rem_euclid(self.lx as i64) as usize;
        &self.tensors[i]
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

/// Smallest cell on which `e^{iq·x}` is periodic.
pub fn momentum_cell(q: &Momentum) -> (usize, usize) {
    (q.lx / gcd(q.n, q.lx), q.ly / gcd(q.m, q.ly))
}

fn scaled_identity_plus(d: usize, c: C64, a: &Mat<C64>) -> Mat<C64> {
    Mat::from_fn(d, d, |i, j| {
        a[(i, j)] * c
            + if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
    })
}

fn scaled(a: &Mat<C64>, c: C64) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * c)
}

/// Operator network for product element `alpha` of `basis` at momentum `q`.
pub fn build_pepo(
    basis: &OperatorBasis,
    alpha: usize,
    q: &Momentum,
    mu: f64,
) -> Result<GenFuncPepo> {
    if !basis.is_product() {
        return Err(Error::InvalidArgument(
            "generating function needs a product basis element".into(),
        ));
    }
    if alpha >= basis.len() {
        return Err(Error::IndexOutOfRange(format!(
            "element {alpha} of {}",
            basis.len()
        )));
    }
    if mu.is_nan() || mu.abs() > 1.0 {
        return Err(Error::InvalidArgument(format!("|mu| = {mu} exceeds 1")));
    }
    let kind = PepoKind::of(&basis.geometry)?;
    let d = basis.d();
    let mats: Vec<Mat<C64>> = basis
        .digits(alpha)
        .iter()
        .map(|&a| basis.site_matrices()[a].clone())
        .collect();
    let (lx, ly) = momentum_cell(q);
    let (dh, dv) = kind.bond_dims();
    let id = Mat::<C64>::identity(d, d);
    let mut tensors = Vec::with_capacity(lx * ly);
    for y in 0..ly as i64 {
        for x in 0..lx as i64 {
            let c = q.phase(x, y).conj() * mu;
            // Operator for each virtual configuration (l, u, r, d); absent entries are zero.
            let entry = |l: usize, u: usize, r: usize, dn: usize| -> Option<Mat<C64>> {
                match kind {
                    PepoKind::Site => Some(scaled_identity_plus(d, c, &mats[0])),
                    PepoKind::Pair => {
                        let right_end = if l == 1 { mats[1].clone() } else { id.clone() };
                        let left_end = if r == 1 {
                            scaled(&mats[0], c)
                        } else {
                            id.clone()
                        };
                        Some(&right_end * &left_end)
                    }
                    PepoKind::VerticalPair => {
                        let lower_end = if u == 1 { mats[1].clone() } else { id.clone() };
                        let upper_end = if dn == 1 {
                            scaled(&mats[0], c)
                        } else {
                            id.clone()
                        };
                        Some(&lower_end * &upper_end)
                    }
                    PepoKind::Plaquette => match (l, u, r, dn) {
                        (0, 0, 0, 0) => Some(id.clone()),
                        (0, 0, 1, 1) => Some(scaled(&mats[0], c)),
                        (1, 0, 0, 2) => Some(mats[1].clone()),
                        (0, 1, 1, 0) => Some(mats[2].clone()),
                        (1, 2, 0, 0) => Some(mats[3].clone()),
                        _ => None,
                    },
                }
            };
            let mut table = vec![None; dh * dv * dh * dv];
            for l in 0..dh {
                for u in 0..dv {
                    for r in 0..dh {
                        for dn in 0..dv {
                            table[((l * dv + u) * dh + r) * dv + dn] = entry(l, u, r, dn);
                        }
                    }
                }
            }
            let t = Tensor::from_fn_complex(vec![d, d, dh, dv, dh, dv], |ix| {
                match &table[((ix[2] * dv + ix[3]) * dh + ix[4]) * dv + ix[5]] {
                    Some(m) => m[(ix[0], ix[1])],
                    None => C64::new(0.0, 0.0),
                }
            });
            tensors.push(t);
        }
    }
    Ok(GenFuncPepo {
        kind,
        alpha,
        q: *q,
        mu,
        lx,
        ly,
        tensors,
    })
}

/// Triple-layer network of `⟨Ψ|G|Ψ⟩` and the symmetry used at evaluation time.
pub fn triple_layer(peps: &PepsUnitCell, pepo: &GenFuncPepo) -> Result<(Network, Option<Tensor>)> {
    let lx = lcm(peps.width, pepo.lx);
    let ly = lcm(peps.height, pepo.ly);
    let cat = peps.injectivity == Injectivity::SymmetryBrokenCat;
    let seed = if cat { Seed::Polarized } else { Seed::Trace };
    let sym = if cat { peps.u_x.clone() } else { None };
    if cat && sym.is_none() {
        return Err(Error::InvalidArgument(
            "cat state without a virtual symmetry".into(),
        ));
    }
    let net = Network::layered(
        peps,
        lx,
        ly,
        &|x, y| Some(pepo.tensor(x as i64, y as i64).clone()),
        seed,
    )?;
    Ok((net, sym))
}

/// `M^α(μ)` with `Tr(M · o) = ⟨Ψ|G o|Ψ⟩ / ⟨Ψ|G|Ψ⟩` for `o` on the support at the origin.
///
/// After the corner spectra settle, single sweeps continue until no entry of `M`
/// moves by more than `m_tol` (relative to its largest entry) or `max_iter` is spent.
pub fn m_matrix(
    peps: &PepsUnitCell,
    pepo: &GenFuncPepo,
    params: &CtmParams,
    m_tol: f64,
    warm: Option<&CtmEnvironment>,
) -> Result<(Mat<C64>, CtmEnvironment)> {
    let (net, sym) = triple_layer(peps, pepo)?;
    let (w, h) = pepo.kind.patch();
    let mut env = converge_environment(&net, params, warm)?;
    let mut m = patch_matrix(&env, &net, 0, 0, w, h, sym.as_ref())?;
    let mut total = env.report.iterations;
    let single = CtmParams {
        max_iter: 1,
        ..*params
    };
    let mut settled = false;
    while total < params.max_iter {
        let next = converge_environment(&net, &single, Some(&env))?;
        let mn = patch_matrix(&next, &net, 0, 0, w, h, sym.as_ref())?;
        let change = (&mn - &m).norm_max();
        total += 1;
        env = next;
        m = mn;
        if change <= m_tol * m.norm_max().max(1.0) {
            settled = true;
            break;
        }
    }
    env.report.iterations = total;
    env.report.converged &= settled;
    Ok((m, env))
}

/// `(f(-2δ) − 8 f(−δ) + 8 f(δ) − f(2δ)) / (12 δ)` from values at `[2δ, δ, −δ, −2δ]`.
pub fn five_point(values: [f64; 4], delta: f64) -> f64 {
    let [p2, p1, m1, m2] = values;
    (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * delta)
}

/// Central five-point derivative of `f` at zero.
pub fn finite_diff_5pt(mut f: impl FnMut(f64) -> f64, delta: f64) -> Result<f64> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    let v = [f(2.0 * delta), f(delta), f(-delta), f(-2.0 * delta)];
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("stencil evaluation".into()));
    }
    Ok(five_point(v, delta))
}

/// Parameters of a generating-function evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GenFuncParams {
    pub ctm: CtmParams,
    pub delta: f64,
    /// Largest per-sweep change of `M` accepted as converged, relative to its largest entry.
    pub m_tol: f64,
    /// Also converge the `μ = δ` point from a cold start at half the bond dimension and report the gap.
    pub cold_check: bool,
}

impl GenFuncParams {
    pub fn new(chi: usize, kind: PepoKind) -> Self {
        Self {
            ctm: CtmParams::new(chi),
            delta: kind.default_delta(),
            m_tol: 1e-12,
            cold_check: false,
        }
    }
}

/// Noise level below which stencil differences are not resolved.
pub const STENCIL_NOISE_LIMIT: f64 = 1e-6;

/// One row `S_{α·}` in the product basis, with diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowResult {
    pub alpha: usize,
    /// `(re, im)` of each entry.
    pub values: Vec<[f64; 2]>,
    /// Reports for μ = 0, 2δ, δ, −δ, −2δ.
    pub reports: Vec<ConvergenceReport>,
    pub converged: bool,
    /// Propagated error of the stencil from the per-point tolerance on `M`.
    pub roundoff_estimate: f64,
    /// Set when `roundoff_estimate` exceeds [`STENCIL_NOISE_LIMIT`].
    pub unstable: bool,
    pub cold_start_gap: Option<f64>,
}

impl RowResult {
    pub fn row(&self) -> Vec<C64> {
        self.values.iter().map(|v| C64::new(v[0], v[1])).collect()
    }
}

/// Converged environment of the `μ = 0` network for the support of `basis` at `q`.
///
/// Its value does not depend on the element, so one environment serves as the
/// warm start for every row.
pub fn base_environment(
    peps: &PepsUnitCell,
    basis: &OperatorBasis,
    q: &Momentum,
    params: &GenFuncParams,
) -> Result<CtmEnvironment> {
    let base = build_pepo(basis, 0, q, 0.0)?;
    Ok(m_matrix(peps, &base, &params.ctm, params.m_tol, None)?.1)
}

/// `S_{α·}(q)` for product element `alpha`, all product-basis columns.
///
/// The four stencil environments warm-start from the `μ = 0` environment.
pub fn structure_factor_row(
    peps: &PepsUnitCell,
    basis: &OperatorBasis,
    alpha: usize,
    q: &Momentum,
    params: &GenFuncParams,
) -> Result<RowResult> {
    let env0 = base_environment(peps, basis, q, params)?;
    structure_factor_row_from(peps, basis, alpha, q, params, &env0)
}

/// [`structure_factor_row`] with a precomputed [`base_environment`].
pub fn structure_factor_row_from(
    peps: &PepsUnitCell,
    basis: &OperatorBasis,
    alpha: usize,
    q: &Momentum,
    params: &GenFuncParams,
    env0: &CtmEnvironment,
) -> Result<RowResult> {
    let delta = params.delta;
    if delta.is_nan() || delta <= 0.0 || 2.0 * delta > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "delta {delta} outside (0, 0.5]"
        )));
    }
    let g = &basis.geometry;
    let (k, d) = (g.k(), g.d);
    let mut reports = vec![env0.report.clone()];
    let mut traces = Vec::with_capacity(4);
    let mut max_val = 0.0f64;
    for mu in [2.0 * delta, delta, -delta, -2.0 * delta] {
        let pepo = build_pepo(basis, alpha, q, mu)?;
        let (m, env) = m_matrix(peps, &pepo, &params.ctm, params.m_tol, Some(env0))?;
        let t = product_coefficients(&m, d, k)?;
        max_val = t.iter().fold(max_val, |a, z| a.max(z.norm()));
        traces.push(t);
        reports.push(env.report);
    }
    let n = traces[0].len();
    let values: Vec<C64> = (0..n)
        .map(|b| {
            let re = five_point(
                [
                    traces[0][b].re,
                    traces[1][b].re,
                    traces[2][b].re,
                    traces[3][b].re,
                ],
                delta,
            );
            let im = five_point(
                [
                    traces[0][b].im,
                    traces[1][b].im,
                    traces[2][b].im,
                    traces[3][b].im,
                ],
                delta,
            );
            C64::new(re, im)
        })
        .collect();
    if values
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::NonFinite(format!("structure factor row {alpha}")));
    }
    // Stencil weights sum to 18/12 in absolute value.
    let roundoff_estimate = 1.5 * params.m_tol.max(100.0 * f64::EPSILON) * max_val / delta;
    let cold_start_gap = if params.cold_check {
        let pepo = build_pepo(basis, alpha, q, delta)?;
        let reduced = CtmParams {
            chi: (params.ctm.chi / 2).max(1),
            ..params.ctm
        };
        let (m, _) = m_matrix(peps, &pepo, &reduced, params.m_tol, None)?;
        let t = product_coefficients(&m, d, k)?;
        Some(
            t.iter()
                .zip(&traces[1])
                .fold(0.0f64, |a, (x, y)| a.max((x - y).norm())),
        )
    } else {
        None
    };
    Ok(RowResult {
        alpha,
        values: values.iter().map(|z| [z.re, z.im]).collect(),
        converged: reports.iter().all(|r| r.converged),
        reports,
        roundoff_estimate,
        unstable: roundoff_estimate > STENCIL_NOISE_LIMIT,
        cold_start_gap,
    })
}

/// Directory of finished rows keyed by model tag, element, momentum, χ and δ.
#[derive(Clone, Debug)]
pub struct RowCache {
    pub dir: PathBuf,
    pub tag: String,
}

impl RowCache {
    fn path(&self, alpha: usize, q: &Momentum, p: &GenFuncParams) -> PathBuf {
        self.dir.join(format!(
            "{}_a{alpha}_q{}-{}-{}-{}_chi{}_delta{:e}.json",
            self.tag, q.n, q.m, q.lx, q.ly, p.ctm.chi, p.delta
        ))
    }

    pub fn get(&self, alpha: usize, q: &Momentum, p: &GenFuncParams) -> Option<RowResult> {
        let s = std::fs::read_to_string(self.path(alpha, q, p)).ok()?;
        serde_json::from_str(&s).ok()
    }

    pub fn put(&self, q: &Momentum, p: &GenFuncParams, row: &RowResult) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let s = serde_json::to_string(row).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(self.path(row.alpha, q, p), s)?;
        Ok(())
    }
}

/// Quality summary of a full matrix evaluation.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GenFuncDiagnostics {
    pub rows: usize,
    pub unconverged_rows: Vec<usize>,
    pub unstable_rows: Vec<usize>,
    pub max_roundoff_estimate: f64,
    pub max_iterations: usize,
}

/// Product-basis elements whose rows are needed for `basis`.
pub fn required_rows(basis: &OperatorBasis) -> Vec<usize> {
    match basis.combination_rows() {
        None => (0..basis.len()).collect(),
        Some(rows) => {
            let n = basis.geometry.product_len();
            (0..n)
                .filter(|&j| rows.iter().any(|r| r[j] != 0.0))
                .collect()
        }
    }
}

/// Full `S(q)` in `basis` from generating-function rows.
///
/// Combination bases are handled as `R S Rᵀ` over the product rows they touch.
/// `progress` is called with (rows done, rows total) after each row.
pub fn genfunc_structure_factor(
    peps: &PepsUnitCell,
    basis: &OperatorBasis,
    q: &Momentum,
    params: &GenFuncParams,
    cache: Option<&RowCache>,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<(StructureFactorMatrix, GenFuncDiagnostics)> {
    if peps.d != basis.d() {
        return Err(Error::ExtentMismatch(
            "basis and state physical dimensions differ".into(),
        ));
    }
    let product = crate::basis::product_basis(&basis.geometry);
    let need = required_rows(basis);
    let nb = product.len();
    let mut s = Mat::<C64>::zeros(nb, nb);
    let mut diag = GenFuncDiagnostics {
        rows: need.len(),
        ..Default::default()
    };
    let mut env0 = None;
    for (done, &a) in need.iter().enumerate() {
        let row = match cache.and_then(|c| c.get(a, q, params)) {
            Some(r) if r.values.len() == nb => r,
            _ => {
                if env0.is_none() {
                    env0 = Some(base_environment(peps, &product, q, params)?);
                }
                let r = structure_factor_row_from(
                    peps,
                    &product,
                    a,
                    q,
                    params,
                    env0.as_ref().expect("set above"),
                )?;
                if let Some(c) = cache {
                    c.put(q, params, &r)?;
                }
                r
            }
        };
        if !row.converged {
            diag.unconverged_rows.push(a);
        }
        if row.unstable {
            diag.unstable_rows.push(a);
        }
        diag.max_roundoff_estimate = diag.max_roundoff_estimate.max(row.roundoff_estimate);
        diag.max_iterations = row
            .reports
            .iter()
            .fold(diag.max_iterations, |m, r| m.max(r.iterations));
        for (b, z) in row.row().into_iter().enumerate() {
            s[(a, b)] = z;
        }
        progress(done + 1, need.len());
    }
    let s = match basis.combination_rows() {
        None => s,
        Some(rows) => {
            let r = Mat::<C64>::from_fn(rows.len(), nb, |i, j| C64::new(rows[i][j], 0.0));
            &r * &s * r.transpose()
        }
    };
    let prov = Provenance::Genfunc {
        chi: params.ctm.chi,
        delta: params.delta,
    };
    Ok((
        StructureFactorMatrix::new(s, basis.labels(), basis.geometry.clone(), *q, prov)?,
        diag,
    ))
}
