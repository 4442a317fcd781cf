//! Structure-factor matrices, deflation, kernel solutions and their
//! physical interpretation.

use crate::basis::{kron, orthonormalize, Momentum, OperatorBasis, Su2Class, SupportGeometry};
use crate::error::{Error, Result};
use crate::spin::clebsch_gordan;
use crate::tensor::eigh_real_mat;
use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Eigenvalue placed on deflated directions.
pub const SENTINEL: f64 = 1e6;
/// Largest imaginary part of `S` tolerated at real-phase momenta.
pub const MAX_IMAG: f64 = 1e-6;
/// Eigenvalue gap below which solutions form one degenerate block.
pub const DEGENERACY_GAP: f64 = 1e-9;

/// Where a structure factor came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Provenance {
    ExactOracle { lx: usize, ly: usize },
    Genfunc { chi: usize, delta: f64 },
}

impl Provenance {
    /// Lowest eigenvalue of `𝒮` accepted as positive semidefinite.
    pub fn psd_floor(&self) -> f64 {
        match self {
            Provenance::ExactOracle { .. } => -1e-10,
            Provenance::Genfunc { .. } => -1e-8,
        }
    }
}

/// `S` as computed and its symmetrized real part `𝒮 = Re(S + Sᵀ)/2`.
#[derive(Clone, Debug)]
pub struct StructureFactorMatrix {
    pub raw: Mat<C64>,
    pub sym: Mat<f64>,
    pub labels: Vec<String>,
    pub geometry: SupportGeometry,
    pub q: Momentum,
    pub provenance: Provenance,
    /// Largest `|Im 𝒮_αβ|` before taking the real part.
    pub max_imag: f64,
    /// Largest `|S_αβ − conj(S_βα)|`.
    pub asymmetry: f64,
}

impl StructureFactorMatrix {
    pub fn new(
        raw: Mat<C64>,
        labels: Vec<String>,
        geometry: SupportGeometry,
        q: Momentum,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = raw.nrows();
        if raw.ncols() != n {
            return Err(Error::NotSquare(n, raw.ncols()));
        }
        if labels.len() != n {
            return Err(Error::ExtentMismatch(format!(
                "{} labels for a {n}x{n} matrix",
                labels.len()
            )));
        }
        let mut max_imag = 0.0f64;
        let mut asymmetry = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let z = raw[(i, j)];
                if !z.re.is_finite() || !z.im.is_finite() {
                    return Err(Error::NonFinite(format!("S[{i},{j}]")));
                }
                max_imag = max_imag.max(0.5 * (z.im + raw[(j, i)].im).abs());
                asymmetry = asymmetry.max((z - raw[(j, i)].conj()).norm());
            }
        }
        if q.is_real() && max_imag > MAX_IMAG {
            return Err(Error::InvalidArgument(format!(
                "imaginary part {max_imag:.3e} at real momentum"
            )));
        }
        let sym = Mat::from_fn(n, n, |i, j| 0.5 * (raw[(i, j)].re + raw[(j, i)].re));
        Ok(Self {
            raw,
            sym,
            labels,
            geometry,
            q,
            provenance,
            max_imag,
            asymmetry,
        })
    }

    /// Build from rows `S_{α·}`; every row must be present.
    pub fn assemble(
        rows: Vec<Option<Vec<C64>>>,
        labels: Vec<String>,
        geometry: SupportGeometry,
        q: Momentum,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = rows.len();
        if let Some(i) = rows.iter().position(|r| r.is_none()) {
            return Err(Error::InvalidArgument(format!("row {i} of {n} missing")));
        }
        let rows: Vec<Vec<C64>> = rows.into_iter().map(|r| r.expect("checked")).collect();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ExtentMismatch("row length".into()));
        }
        Self::new(
            Mat::from_fn(n, n, |i, j| rows[i][j]),
            labels,
            geometry,
            q,
            provenance,
        )
    }

    pub fn dim(&self) -> usize {
        self.sym.nrows()
    }

    /// Ascending eigenvalues of `𝒮`.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(eigh_real_mat(self.sym.as_ref())?.0)
    }

    /// Whether the lowest eigenvalue clears the provenance-dependent floor.
    pub fn is_psd(&self) -> Result<bool> {
        Ok(self
            .eigenvalues()?
            .first()
            .is_none_or(|&e| e >= self.provenance.psd_floor()))
    }

    /// `hᵀ 𝒮 h`.
    pub fn quadratic_form(&self, h: &[f64]) -> f64 {
        let n = self.dim();
        (0..n)
            .map(|i| h[i] * (0..n).map(|j| self.sym[(i, j)] * h[j]).sum::<f64>())
            .sum()
    }
}

/// Which subspaces were projected out.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeflationRecord {
    /// `(name, number of vectors supplied)` in order.
    pub sources: Vec<(String, usize)>,
    /// Rank of the orthonormalized union.
    pub rank: usize,
    pub sentinel: f64,
}

/// `P𝒮P + sentinel·VVᵀ` with the orthonormal deflation basis `V`.
///
/// The eigenpairs are computed from `𝒮` restricted to the complement of `V`,
/// so their accuracy is set by `‖𝒮‖` rather than by the sentinel.
#[derive(Clone, Debug)]
pub struct DeflatedMatrix {
    pub matrix: Mat<f64>,
    pub v: Vec<Vec<f64>>,
    pub record: DeflationRecord,
    pub q: Momentum,
    /// Ascending eigenvalues; the last `rank` equal the sentinel.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenvectors as columns.
    pub eigenvectors: Mat<f64>,
}

/// Project the named subspaces out of `𝒮`.
pub fn deflate(
    m: &StructureFactorMatrix,
    subspaces: &[(&str, Vec<Vec<f64>>)],
) -> Result<DeflatedMatrix> {
    let n = m.dim();
    let mut all = Vec::new();
    let mut sources = Vec::new();
    for (name, vs) in subspaces {
        if vs.iter().any(|v| v.len() != n) {
            return Err(Error::ExtentMismatch(format!(
                "deflation vectors '{name}' have wrong length"
            )));
        }
        sources.push((name.to_string(), vs.len()));
        all.extend(vs.iter().cloned());
    }
    let v = orthonormalize(&all, 1e-10);
    let proj = Mat::<f64>::from_fn(n, n, |i, j| {
        let vv: f64 = v.iter().map(|u| u[i] * u[j]).sum();
        if i == j {
            1.0 - vv
        } else {
            -vv
        }
    });
    let psp = &proj * &m.sym * &proj;
    let matrix = Mat::from_fn(n, n, |i, j| {
        let vv: f64 = v.iter().map(|u| u[i] * u[j]).sum();
        0.5 * (psp[(i, j)] + psp[(j, i)]) + SENTINEL * vv
    });
    // Orthonormal complement of V from the unit eigenvalues of P.
    let (pvals, pvecs) = eigh_real_mat(proj.as_ref())?;
    let comp: Vec<usize> = (0..n).filter(|&k| pvals[k] > 0.5).collect();
    let c = n - v.len();
    if comp.len() != c {
        return Err(Error::Decomposition(format!(
            "complement of rank {} expected {c}",
            comp.len()
        )));
    }
    let qm = Mat::<f64>::from_fn(n, c, |i, k| pvecs[(i, comp[k])]);
    let reduced = qm.transpose() * &m.sym * &qm;
    let reduced = Mat::from_fn(c, c, |i, j| 0.5 * (reduced[(i, j)] + reduced[(j, i)]));
    let (rvals, rvecs) = if c == 0 {
        (vec![], Mat::zeros(0, 0))
    } else {
        eigh_real_mat(reduced.as_ref())?
    };
    let lifted = &qm * &rvecs;
    let mut eigenvalues = rvals;
    eigenvalues.extend(std::iter::repeat_n(SENTINEL, v.len()));
    let eigenvectors = Mat::from_fn(
        n,
        n,
        |i, k| if k < c { lifted[(i, k)] } else { v[k - c][i] },
    );
    let record = DeflationRecord {
        sources,
        rank: v.len(),
        sentinel: SENTINEL,
    };
    Ok(DeflatedMatrix {
        matrix,
        v,
        record,
        q: m.q,
        eigenvalues,
        eigenvectors,
    })
}

/// Vectors (in basis coordinates) spanning the intersection of the basis span
/// with the span of the given product-basis vectors.
pub fn subspace_in_basis(
    basis: &OperatorBasis,
    product_vectors: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let rows = match basis.combination_rows() {
        None => return Ok(orthonormalize(product_vectors, 1e-10)),
        Some(r) => r,
    };
    let v = orthonormalize(product_vectors, 1e-10);
    if v.is_empty() {
        return Ok(vec![]);
    }
    // Singular values of R V equal to one mark directions lying in both spans.
    let m = rows.len();
    let rv = Mat::<f64>::from_fn(m, v.len(), |i, j| {
        rows[i].iter().zip(&v[j]).map(|(a, b)| a * b).sum()
    });
    let gram = &rv * rv.transpose();
    let (vals, vecs) = eigh_real_mat(gram.as_ref())?;
    let out: Vec<Vec<f64>> = (0..m)
        .filter(|&k| vals[k] > 1.0 - 1e-10)
        .map(|k| (0..m).map(|i| vecs[(i, k)]).collect())
        .collect();
    Ok(orthonormalize(&out, 1e-10))
}

/// One eigenpair of the deflated `𝒮`, materialized as a local operator.
#[derive(Clone, Debug)]
pub struct ConservedOperatorSolution {
    pub eigenvalue: f64,
    /// Unit-norm coefficients in the basis.
    pub coefficients: Vec<f64>,
    pub labels: Vec<String>,
    pub local_matrix: Mat<C64>,
    pub q: Momentum,
    /// Index of the degenerate block this solution belongs to.
    pub block: usize,
    pub block_size: usize,
    pub deflation: DeflationRecord,
}

/// The `count` lowest solutions, with degenerate blocks canonicalized.
pub fn solve(
    m: &DeflatedMatrix,
    basis: &OperatorBasis,
    count: usize,
) -> Result<Vec<ConservedOperatorSolution>> {
    let n = m.matrix.nrows();
    if basis.len() != n {
        return Err(Error::ExtentMismatch(format!(
            "basis of {} for a {n}x{n} matrix",
            basis.len()
        )));
    }
    let (vals, vecs) = (&m.eigenvalues, &m.eigenvectors);
    let count = count.min(n);
    // Extend to the end of the last requested degenerate block.
    let mut end = count;
    while end > 0 && end < n && vals[end] - vals[end - 1] < DEGENERACY_GAP {
        end += 1;
    }
    let labels = basis.labels();
    let mut out = Vec::new();
    let mut start = 0;
    let mut block = 0;
    while start < end {
        let mut stop = start + 1;
        while stop < n && vals[stop] - vals[stop - 1] < DEGENERACY_GAP {
            stop += 1;
        }
        let cols: Vec<Vec<f64>> = (start..stop)
            .map(|k| (0..n).map(|i| vecs[(i, k)]).collect())
            .collect();
        let canon = if cols.len() == 1 {
            cols
        } else {
            canonical_block(&cols)
        };
        let size = stop - start;
        for (j, mut h) in canon.into_iter().enumerate() {
            fix_sign(&mut h);
            out.push(ConservedOperatorSolution {
                eigenvalue: vals[start + j],
                local_matrix: basis.local_matrix(&h),
                coefficients: h,
                labels: labels.clone(),
                q: m.q,
                block,
                block_size: size,
                deflation: m.record.clone(),
            });
        }
        start = stop;
        block += 1;
    }
    Ok(out)
}

/// Orthonormal basis of a span obtained by projecting unit vectors `e_0, e_1, …` in order.
pub fn canonical_block(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols[0].len();
    let mut picked = Vec::new();
    for i in 0..n {
        if picked.len() == cols.len() {
            break;
        }
        let proj: Vec<f64> = (0..n)
            .map(|r| cols.iter().map(|c| c[r] * c[i]).sum())
            .collect();
        let mut trial = picked.clone();
        trial.push(proj);
        let o = orthonormalize(&trial, 1e-8);
        if o.len() > picked.len() {
            picked = o;
        }
    }
    picked
}

/// Make the largest-magnitude coefficient positive.
pub fn fix_sign(h: &mut [f64]) {
    let mut best = 0;
    for (i, x) in h.iter().enumerate() {
        if x.abs() > h[best].abs() + 1e-12 {
            best = i;
        }
    }
    if h.get(best).is_some_and(|&x| x < 0.0) {
        h.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Largest principal-angle sine between two spans; 1 when dimensions differ.
pub fn span_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let a = orthonormalize(a, 1e-10);
    let b = orthonormalize(b, 1e-10);
    if a.len() != b.len() {
        return Ok(1.0);
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    // Residuals of `b` off span(a) give the sines directly, without cancellation.
    let res: Vec<Vec<f64>> = b
        .iter()
        .map(|v| {
            let mut r = v.clone();
            for u in &a {
                let c: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
                r.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
            }
            r
        })
        .collect();
    let k = res.len();
    let g = Mat::<f64>::from_fn(k, k, |i, j| {
        res[i].iter().zip(&res[j]).map(|(x, y)| x * y).sum()
    });
    let (vals, _) = eigh_real_mat(g.as_ref())?;
    Ok(vals[k - 1].max(0.0).sqrt().min(1.0))
}

/// `|⟨a, b⟩| / (‖a‖ ‖b‖)`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

/// Coefficients of the plaquette Hamiltonian family with both raw and `J1`-normalized values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RvbAnsatzCoefficients {
    pub j1: f64,
    pub j2: f64,
    pub q1: f64,
    pub q2: f64,
    pub j1_raw: f64,
    pub j2_raw: f64,
    pub q1_raw: f64,
    pub q2_raw: f64,
    /// `s / (2 J̃1)²`: variance per site of the `J1`-normalized operator.
    pub variance_per_site: f64,
    /// Spread of coefficients within each symmetry class.
    pub class_spread: f64,
}

/// Read off `J1, J2, Q1, Q2` from a solution in the 39-element SU(2) plaquette basis.
pub fn rvb_coefficients(
    sol: &ConservedOperatorSolution,
    classes: &[Su2Class],
) -> Result<RvbAnsatzCoefficients> {
    if classes.len() != sol.coefficients.len() {
        return Err(Error::ExtentMismatch(
            "class list and coefficients differ in length".into(),
        ));
    }
    let mut spread = 0.0f64;
    let mut mean = |c: Su2Class| {
        let vals: Vec<f64> = classes
            .iter()
            .zip(&sol.coefficients)
            .filter(|(k, _)| **k == c)
            .map(|(_, &h)| h)
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        spread = vals.iter().fold(spread, |s, v| s.max((v - m).abs()));
        m
    };
    let j1_raw = mean(Su2Class::NearestPair);
    let j2_raw = mean(Su2Class::DiagonalPair);
    let q1_raw = mean(Su2Class::NearestPairing);
    let q2_raw = mean(Su2Class::DiagonalPairing);
    if j1_raw.abs() < 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "nearest-neighbor coefficient {j1_raw:.3e} too small to normalize"
        )));
    }
    let scale = 2.0 * j1_raw;
    Ok(RvbAnsatzCoefficients {
        j1: 1.0,
        j2: j2_raw / scale,
        q1: 4.0 * q1_raw / scale,
        q2: 4.0 * q2_raw / scale,
        j1_raw,
        j2_raw,
        q1_raw,
        q2_raw,
        variance_per_site: sol.eigenvalue / (scale * scale),
        class_spread: spread,
    })
}

/// Distance of a pair operator from the two-site AKLT parent family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AkltFamilyReport {
    /// Frobenius norm of the part outside the family, relative to the operator norm.
    pub residual: f64,
    /// Multiple of the identity on total spin 0–3.
    pub alpha: f64,
    pub passed: bool,
}

/// Columns: coupled states `|S, M⟩` for `S = 0..=4`, `M` descending; rows: `|m1, m2⟩`.
fn coupled_basis_spin2() -> Mat<f64> {
    let mut cols = Vec::new();
    for s in 0..=4i64 {
        for p in 0..=2 * s {
            let tm = 2 * s - 2 * p;
            cols.push((2 * s, tm));
        }
    }
    Mat::from_fn(25, 25, |row, col| {
        let (a, b) = (row / 5, row % 5);
        let (tj, tm) = cols[col];
        clebsch_gordan(4, 4 - 2 * a as i64, 4, 4 - 2 * b as i64, tj, tm)
    })
}

/// Residual components of a 25×25 operator outside `α·(𝟙 − P₄) + P₄ M P₄`, and `α`.
fn family_residual(h: &Mat<C64>, u: &Mat<f64>) -> (Vec<f64>, f64) {
    let uc = Mat::<C64>::from_fn(25, 25, |i, j| C64::new(u[(i, j)], 0.0));
    let b = uc.adjoint() * h * &uc;
    const LOW: usize = 16;
    let alpha = (0..LOW).map(|i| b[(i, i)].re).sum::<f64>() / LOW as f64;
    let mut r = Vec::new();
    for i in 0..25 {
        for j in 0..25 {
            let z = match (i < LOW, j < LOW) {
                (true, true) if i == j => b[(i, j)] - alpha,
                (true, true) => b[(i, j)],
                (false, false) => continue,
                _ => b[(i, j)],
            };
            r.push(z.re);
            r.push(z.im);
        }
    }
    (r, alpha)
}

/// Check that a pair operator lies in the AKLT parent family, up to any
/// combination of the `modulo` vectors (product-basis coefficients, e.g. the
/// deflated trivial and embedded directions).
pub fn aklt_family_membership(
    basis: &OperatorBasis,
    h: &[f64],
    modulo: &[Vec<f64>],
    tolerance: f64,
) -> Result<AkltFamilyReport> {
    if basis.geometry != SupportGeometry::pair(5) {
        return Err(Error::InvalidArgument(format!(
            "family check needs a d = 5 pair support, got {}",
            basis.geometry.name()
        )));
    }
    let u = coupled_basis_spin2();
    let local = basis.local_matrix(h);
    let norm = (0..25)
        .flat_map(|i| (0..25).map(move |j| (i, j)))
        .map(|(i, j)| local[(i, j)].norm_sqr())
        .sum::<f64>()
        .sqrt();
    let (mut r, alpha) = family_residual(&local, &u);
    let pb = crate::basis::product_basis(&basis.geometry);
    let images: Vec<Vec<f64>> = modulo
        .iter()
        .map(|v| family_residual(&pb.local_matrix(v), &u).0)
        .collect();
    for w in orthonormalize(&images, 1e-10) {
        let c: f64 = w.iter().zip(&r).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(&w).for_each(|(x, y)| *x -= c * y);
    }
    let residual = r.iter().map(|x| x * x).sum::<f64>().sqrt() / norm.max(f64::MIN_POSITIVE);
    Ok(AkltFamilyReport {
        residual,
        alpha,
        passed: residual < tolerance,
    })
}

/// Projector onto total spin 4 of two spin-2 sites.
pub fn aklt_spin4_projector() -> Mat<C64> {
    let u = coupled_basis_spin2();
    Mat::from_fn(25, 25, |i, j| {
        C64::new((16..25).map(|k| u[(i, k)] * u[(j, k)]).sum(), 0.0)
    })
}

/// `S^a ⊗ 𝟙 + 𝟙 ⊗ S^a` for two spin-2 sites.
pub fn pair_total_spin(a: usize) -> Mat<C64> {
    let s = &crate::spin::spin_matrices(4)[a];
    let id = Mat::<C64>::identity(5, 5);
    kron(s, &id) + kron(&id, s)
}
