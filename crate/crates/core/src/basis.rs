//! Orthonormal Hermitian operator bases on small lattice supports.
//!
//! A product-basis element is a tensor product of single-site basis
//! operators. Its index is the mixed-radix number of the site labels with the
//! first offset of the geometry as the most significant digit, and its matrix
//! uses the same site order for the `d^k` product-state index.

use crate::error::{Error, Result};
use crate::tensor::{Labeled, Tensor};
use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Ordered list of lattice offsets with a common per-site dimension.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportGeometry {
    pub offsets: Vec<(i64, i64)>,
    pub d: usize,
}

impl SupportGeometry {
    pub fn new(offsets: Vec<(i64, i64)>, d: usize) -> Result<Self> {
        if offsets.is_empty() || offsets[0] != (0, 0) {
            return Err(Error::InvalidArgument("first offset must be (0, 0)".into()));
        }
        for (i, o) in offsets.iter().enumerate() {
            if offsets[..i].contains(o) {
                return Err(Error::InvalidArgument(format!("duplicate offset {o:?}")));
            }
        }
        if d < 2 {
            return Err(Error::InvalidArgument(
                "site dimension must be at least 2".into(),
            ));
        }
        Ok(Self { offsets, d })
    }

    pub fn site(d: usize) -> Self {
        Self::new(vec![(0, 0)], d).expect("valid")
    }

    /// Horizontal nearest-neighbor pair.
    pub fn pair(d: usize) -> Self {
        Self::new(vec![(0, 0), (1, 0)], d).expect("valid")
    }

    /// Vertical nearest-neighbor pair, upper site first.
    pub fn vertical_pair(d: usize) -> Self {
        Self::new(vec![(0, 0), (0, 1)], d).expect("valid")
    }

    /// 2×2 plaquette ordered top-left, top-right, bottom-left, bottom-right (y points down).
    pub fn plaquette(d: usize) -> Self {
        Self::new(vec![(0, 0), (1, 0), (0, 1), (1, 1)], d).expect("valid")
    }

    /// Two columns by three rows, row-major.
    pub fn window_2x3(d: usize) -> Self {
        Self::new(vec![(0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2)], d).expect("valid")
    }

    pub fn k(&self) -> usize {
        self.offsets.len()
    }

    pub fn index_of(&self, o: (i64, i64)) -> Option<usize> {
        self.offsets.iter().position(|&x| x == o)
    }

    /// Hilbert-space dimension `d^k` of the support.
    pub fn matrix_dim(&self) -> usize {
        self.d.pow(self.k() as u32)
    }

    /// Number of product-basis elements `(d²)^k`.
    pub fn product_len(&self) -> usize {
        (self.d * self.d).pow(self.k() as u32)
    }

    /// Short name used in labels and output files.
    pub fn name(&self) -> String {
        if *self == Self::site(self.d) {
            "site".into()
        } else if *self == Self::pair(self.d) {
            "pair".into()
        } else if *self == Self::vertical_pair(self.d) {
            "vertical-pair".into()
        } else if *self == Self::plaquette(self.d) {
            "plaquette".into()
        } else if *self == Self::window_2x3(self.d) {
            "window-2x3".into()
        } else {
            format!("custom-{}", self.k())
        }
    }

    /// Translations `t` such that `offsets(self) + t` lies inside `other`.
    pub fn placements_in(&self, other: &SupportGeometry) -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        for &(ox, oy) in &other.offsets {
            let t = (ox - self.offsets[0].0, oy - self.offsets[0].1);
            if self
                .offsets
                .iter()
                .all(|&(x, y)| other.index_of((x + t.0, y + t.1)).is_some())
            {
                out.push(t);
            }
        }
        out
    }
}

/// Commensurate momentum `q = (2πn/Lx, 2πm/Ly)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Momentum {
    pub n: usize,
    pub m: usize,
    pub lx: usize,
    pub ly: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Momentum {
    pub fn new(n: usize, m: usize, lx: usize, ly: usize) -> Result<Self> {
        if lx == 0 || ly == 0 || n >= lx || m >= ly {
            return Err(Error::InvalidArgument(format!(
                "momentum ({n},{m}) with cell {lx}x{ly}"
            )));
        }
        if (n != 0 && gcd(n, lx) != 1) || (m != 0 && gcd(m, ly) != 1) {
            return Err(Error::InvalidArgument(format!(
                "momentum ({n}/{lx}, {m}/{ly}) not reduced"
            )));
        }
        if (n == 0 && lx != 1) || (m == 0 && ly != 1) {
            return Err(Error::InvalidArgument(
                "zero component requires unit period".into(),
            ));
        }
        Ok(Self { n, m, lx, ly })
    }

    pub fn zero() -> Self {
        Self {
            n: 0,
            m: 0,
            lx: 1,
            ly: 1,
        }
    }

    pub fn pi_pi() -> Self {
        Self {
            n: 1,
            m: 1,
            lx: 2,
            ly: 2,
        }
    }

    pub fn pi_zero() -> Self {
        Self {
            n: 1,
            m: 0,
            lx: 2,
            ly: 1,
        }
    }

    pub fn zero_pi() -> Self {
        Self {
            n: 0,
            m: 1,
            lx: 1,
            ly: 2,
        }
    }

    pub fn q(&self) -> (f64, f64) {
        let tau = 2.0 * std::f64::consts::PI;
        (
            tau * self.n as f64 / self.lx as f64,
            tau * self.m as f64 / self.ly as f64,
        )
    }

    /// `e^{i q·(dx, dy)}`, exact when the phase is ±1.
    pub fn phase(&self, dx: i64, dy: i64) -> C64 {
        let den = (self.lx * self.ly) as i64;
        let num = (self.n as i64 * dx * self.ly as i64 + self.m as i64 * dy * self.lx as i64)
            .rem_euclid(den);
        if num == 0 {
            return C64::new(1.0, 0.0);
        }
        if 2 * num == den {
            return C64::new(-1.0, 0.0);
        }
        let ang = 2.0 * std::f64::consts::PI * num as f64 / den as f64;
        C64::new(ang.cos(), ang.sin())
    }

    /// True when every phase is ±1.
    pub fn is_real(&self) -> bool {
        self.lx <= 2 && self.ly <= 2
    }

    /// Whether the momentum is a lattice momentum of an Lx × Ly torus.
    pub fn fits_torus(&self, lx: usize, ly: usize) -> bool {
        lx.is_multiple_of(self.lx) && ly.is_multiple_of(self.ly)
    }

    pub fn label(&self) -> String {
        format!("({}/{},{}/{})", self.n, self.lx, self.m, self.ly)
    }
}

/// Single-site Hermitian operators with unit Frobenius norm: identity first,
/// then symmetric, antisymmetric and diagonal generalized Gell-Mann matrices.
/// For `d = 2` these are `I, X, Y, Z` divided by √2.
pub fn site_operators(d: usize) -> Result<Vec<(String, Mat<C64>)>> {
    if d < 2 {
        return Err(Error::InvalidArgument(
            "site dimension must be at least 2".into(),
        ));
    }
    let r2 = 0.5f64.sqrt();
    let mut out = Vec::with_capacity(d * d);
    let id = 1.0 / (d as f64).sqrt();
    out.push((
        "I".to_string(),
        Mat::from_fn(d, d, |i, j| C64::new(if i == j { id } else { 0.0 }, 0.0)),
    ));
    let pauli = d == 2;
    for j in 0..d {
        for k in (j + 1)..d {
            let lab = if pauli {
                "X".to_string()
            } else {
                format!("S{j}{k}")
            };
            out.push((
                lab,
                Mat::from_fn(d, d, |a, b| {
                    C64::new(
                        if (a, b) == (j, k) || (a, b) == (k, j) {
                            r2
                        } else {
                            0.0
                        },
                        0.0,
                    )
                }),
            ));
        }
    }
    for j in 0..d {
        for k in (j + 1)..d {
            let lab = if pauli {
                "Y".to_string()
            } else {
                format!("A{j}{k}")
            };
            out.push((
                lab,
                Mat::from_fn(d, d, |a, b| {
                    if (a, b) == (j, k) {
                        C64::new(0.0, -r2)
                    } else if (a, b) == (k, j) {
                        C64::new(0.0, r2)
                    } else {
                        C64::new(0.0, 0.0)
                    }
                }),
            ));
        }
    }
    for l in 1..d {
        let lab = if pauli {
            "Z".to_string()
        } else {
            format!("D{l}")
        };
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        out.push((
            lab,
            Mat::from_fn(d, d, |a, b| {
                let v = if a != b {
                    0.0
                } else if a < l {
                    norm
                } else if a == l {
                    -(l as f64) * norm
                } else {
                    0.0
                };
                C64::new(v, 0.0)
            }),
        ));
    }
    Ok(out)
}

/// Kronecker product with the left factor most significant.
pub fn kron(a: &Mat<C64>, b: &Mat<C64>) -> Mat<C64> {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

#[derive(Clone, Debug)]
enum Kind {
    Product,
    Combination {
        rows: Vec<Vec<f64>>,
        labels: Vec<String>,
    },
}

/// Orthonormal Hermitian basis on a support geometry.
///
/// Elements are either the product basis itself or real combinations of
/// product-basis elements.
#[derive(Clone, Debug)]
pub struct OperatorBasis {
    pub geometry: SupportGeometry,
    site: Vec<Mat<C64>>,
    site_labels: Vec<String>,
    kind: Kind,
}

/// Serializable description of a basis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisManifest {
    pub geometry: SupportGeometry,
    pub labels: Vec<String>,
    /// Matrix of each element, row-major `(re, im)` pairs.
    pub matrices: Vec<Vec<[f64; 2]>>,
}

/// Single-site basis of dimension `d`.
pub fn hermitian_site_basis(d: usize) -> Result<OperatorBasis> {
    Ok(product_basis(&SupportGeometry::new(vec![(0, 0)], d)?))
}

/// All tensor products of the single-site basis, ordered lexicographically by site then label.
pub fn product_basis(geometry: &SupportGeometry) -> OperatorBasis {
    let ops = site_operators(geometry.d).expect("geometry has d >= 2");
    let (site_labels, site) = ops.into_iter().unzip();
    OperatorBasis {
        geometry: geometry.clone(),
        site,
        site_labels,
        kind: Kind::Product,
    }
}

impl OperatorBasis {
    /// Basis of real combinations of product-basis elements; rows must be orthonormal.
    pub fn from_combinations(
        geometry: &SupportGeometry,
        rows: Vec<Vec<f64>>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let base = product_basis(geometry);
        let n = geometry.product_len();
        if rows.iter().any(|r| r.len() != n) || labels.len() != rows.len() {
            return Err(Error::ExtentMismatch("combination rows or labels".into()));
        }
        Ok(Self {
            kind: Kind::Combination { rows, labels },
            ..base
        })
    }

    pub fn len(&self) -> usize {
        match &self.kind {
            Kind::Product => self.geometry.product_len(),
            Kind::Combination { rows, .. } => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_product(&self) -> bool {
        matches!(self.kind, Kind::Product)
    }

    pub fn d(&self) -> usize {
        self.geometry.d
    }

    /// Single-site operator matrices.
    pub fn site_matrices(&self) -> &[Mat<C64>] {
        &self.site
    }

    pub fn site_labels(&self) -> &[String] {
        &self.site_labels
    }

    /// Site labels of product element `i`, most significant first.
    pub fn digits(&self, mut i: usize) -> Vec<usize> {
        let base = self.geometry.d * self.geometry.d;
        let k = self.geometry.k();
        let mut out = vec![0; k];
        for s in (0..k).rev() {
            out[s] = i % base;
            i /= base;
        }
        out
    }

    /// Product element index from site labels.
    pub fn index_of_digits(&self, digits: &[usize]) -> usize {
        let base = self.geometry.d * self.geometry.d;
        digits.iter().fold(0, |acc, &x| acc * base + x)
    }

    fn product_label(&self, i: usize) -> String {
        let parts: Vec<&str> = self
            .digits(i)
            .iter()
            .map(|&a| self.site_labels[a].as_str())
            .collect();
        if self.geometry.d == 2 {
            parts.concat()
        } else {
            parts.join(".")
        }
    }

    pub fn label(&self, i: usize) -> String {
        match &self.kind {
            Kind::Product => self.product_label(i),
            Kind::Combination { labels, .. } => labels[i].clone(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Coefficients of element `i` in the product basis.
    pub fn coefficients(&self, i: usize) -> Vec<f64> {
        match &self.kind {
            Kind::Product => {
                let mut v = vec![0.0; self.geometry.product_len()];
                v[i] = 1.0;
                v
            }
            Kind::Combination { rows, .. } => rows[i].clone(),
        }
    }

    /// Rows expressing each element in the product basis, if this is not the product basis.
    pub fn combination_rows(&self) -> Option<&[Vec<f64>]> {
        match &self.kind {
            Kind::Product => None,
            Kind::Combination { rows, .. } => Some(rows),
        }
    }

    /// Map coefficients in this basis to product-basis coefficients.
    pub fn to_product_coefficients(&self, h: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Product => h.to_vec(),
            Kind::Combination { rows, .. } => {
                let mut out = vec![0.0; self.geometry.product_len()];
                for (c, row) in h.iter().zip(rows) {
                    if *c != 0.0 {
                        for (o, r) in out.iter_mut().zip(row) {
                            *o += c * r;
                        }
                    }
                }
                out
            }
        }
    }

    /// Project product-basis coefficients onto this basis.
    pub fn from_product_coefficients(&self, v: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Product => v.to_vec(),
            Kind::Combination { rows, .. } => rows
                .iter()
                .map(|r| r.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect(),
        }
    }

    /// Matrix of a product element.
    pub fn product_matrix(&self, i: usize) -> Mat<C64> {
        let digits = self.digits(i);
        let mut m = self.site[digits[0]].clone();
        for &a in &digits[1..] {
            m = kron(&m, &self.site[a]);
        }
        m
    }

    /// Matrix of element `i`.
    pub fn matrix(&self, i: usize) -> Mat<C64> {
        match &self.kind {
            Kind::Product => self.product_matrix(i),
            Kind::Combination { rows, .. } => self.product_combination_matrix(&rows[i]),
        }
    }

    /// `Σ_a v_a E_a` for product-basis coefficients `v`.
    pub fn product_combination_matrix(&self, v: &[f64]) -> Mat<C64> {
        let n = self.geometry.matrix_dim();
        let mut m = Mat::<C64>::zeros(n, n);
        for (a, &c) in v.iter().enumerate() {
            if c != 0.0 {
                let e = self.product_matrix(a);
                for j in 0..n {
                    for i in 0..n {
                        m[(i, j)] += e[(i, j)] * c;
                    }
                }
            }
        }
        m
    }

    /// Local operator `Σ_i h_i o^i` for coefficients in this basis.
    pub fn local_matrix(&self, h: &[f64]) -> Mat<C64> {
        self.product_combination_matrix(&self.to_product_coefficients(h))
    }

    pub fn elements(&self) -> Vec<Mat<C64>> {
        (0..self.len()).map(|i| self.matrix(i)).collect()
    }

    pub fn manifest(&self) -> BasisManifest {
        BasisManifest {
            geometry: self.geometry.clone(),
            labels: self.labels(),
            matrices: (0..self.len())
                .map(|i| {
                    let m = self.matrix(i);
                    let n = m.nrows();
                    (0..n * n)
                        .map(|k| [m[(k / n, k % n)].re, m[(k / n, k % n)].im])
                        .collect()
                })
                .collect(),
        }
    }
}

/// Coefficients `Tr(E_a M)` of a `d^k × d^k` matrix in the product basis of `k` sites.
///
/// The transform acts one site at a time, so the cost is `O(k d^{2k+2})`.
pub fn product_coefficients(m: &Mat<C64>, d: usize, k: usize) -> Result<Vec<C64>> {
    let n = d.pow(k as u32);
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::ExtentMismatch(format!(
            "{}x{} matrix for {k} sites of dimension {d}",
            m.nrows(),
            m.ncols()
        )));
    }
    let ops = site_operators(d)?;
    let mut data = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            data.push(m[(i, j)]);
        }
    }
    let t = Tensor::from_complex_raw(vec![d; 2 * k], data)?;
    let ket: Vec<String> = (0..k).map(|s| format!("i{s}")).collect();
    let bra: Vec<String> = (0..k).map(|s| format!("j{s}")).collect();
    let mut lab = Labeled::new(t, &[ket.clone(), bra.clone()].concat());
    // q[l, i, j] = o_l[j, i], so the contraction gives Σ M[i, j] o_l[j, i].
    let q = Tensor::from_fn_complex(vec![d * d, d, d], |ix| ops[ix[0]].1[(ix[2], ix[1])]);
    for s in 0..k {
        let qs = Labeled::new(
            q.clone(),
            &[format!("l{s}"), ket[s].clone(), bra[s].clone()],
        );
        lab = lab.contract(&qs)?;
    }
    let order: Vec<String> = (0..k).map(|s| format!("l{s}")).collect();
    Ok(lab.ordered(&order)?.to_complex_vec())
}

/// Real parts of [`product_coefficients`] for a Hermitian matrix.
pub fn hermitian_coefficients(m: &Mat<C64>, d: usize, k: usize) -> Result<Vec<f64>> {
    Ok(product_coefficients(m, d, k)?
        .iter()
        .map(|z| z.re)
        .collect())
}

/// Modified Gram–Schmidt with a second pass; vectors whose residual falls
/// below `tol` times their original norm are dropped.
pub fn orthonormalize(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let n0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n0 == 0.0 {
            continue;
        }
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &out {
                let dot: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
                for (x, y) in w.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
        }
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > tol * n0 {
            w.iter_mut().for_each(|x| *x /= n);
            out.push(w);
        }
    }
    out
}

/// Orthonormal basis of the trivial solutions at momentum `q`, in product-basis coefficients.
///
/// Besides the identity, every operator string whose support is a proper
/// sub-shape of the geometry that fits at several placements yields the
/// vectors `P@t₀ − e^{iq·(tₖ−t₀)} P@tₖ`, whose global operator vanishes.
pub fn trivial_subspace(geometry: &SupportGeometry, q: &Momentum) -> Result<Vec<Vec<f64>>> {
    if !q.is_real() {
        return Err(Error::Unsupported(format!(
            "trivial subspace at momentum {}",
            q.label()
        )));
    }
    let basis = product_basis(geometry);
    let k = geometry.k();
    let dd = geometry.d * geometry.d;
    let mut vectors = vec![basis.coefficients(0)];
    // Group proper subsets of sites by their shape up to translation: each
    // placement is the shape's offset and its sites in shape order.
    type Placement = ((i64, i64), Vec<usize>);
    let mut shapes: BTreeMap<Vec<(i64, i64)>, Vec<Placement>> = BTreeMap::new();
    for mask in 1usize..(1 << k) - 1 {
        let sites: Vec<usize> = (0..k).filter(|s| mask >> s & 1 == 1).collect();
        let mut pts: Vec<(i64, i64)> = sites.iter().map(|&s| geometry.offsets[s]).collect();
        pts.sort_by_key(|&(x, y)| (y, x));
        let t = pts[0];
        let key: Vec<(i64, i64)> = pts.iter().map(|&(x, y)| (x - t.0, y - t.1)).collect();
        let ordered: Vec<usize> = key
            .iter()
            .map(|&(x, y)| geometry.index_of((x + t.0, y + t.1)).expect("in support"))
            .collect();
        shapes.entry(key).or_default().push((t, ordered));
    }
    for placements in shapes.values() {
        if placements.len() < 2 {
            continue;
        }
        let w = placements[0].1.len();
        let strings = (dd - 1).pow(w as u32);
        for s in 0..strings {
            let mut labels = vec![0usize; w];
            let mut r = s;
            for l in labels.iter_mut().rev() {
                *l = 1 + r % (dd - 1);
                r /= dd - 1;
            }
            let at = |sites: &[usize]| {
                let mut digits = vec![0usize; k];
                for (&site, &l) in sites.iter().zip(&labels) {
                    digits[site] = l;
                }
                basis.index_of_digits(&digits)
            };
            let (t0, s0) = &placements[0];
            let i0 = at(s0);
            for (tk, sk) in &placements[1..] {
                let ph = q.phase(tk.0 - t0.0, tk.1 - t0.1).re;
                let mut v = vec![0.0; geometry.product_len()];
                v[i0] += 1.0;
                v[at(sk)] -= ph;
                vectors.push(v);
            }
        }
    }
    Ok(orthonormalize(&vectors, 1e-10))
}

/// Embed solutions on `g1` into `g2`: one vector per placement of `g1`
/// inside `g2`, carrying the momentum phase of the placement offset. Each
/// returned vector has the same global operator as the input. Returns the raw
/// vectors and an orthonormal basis of their span.
#[allow(clippy::type_complexity)]
pub fn embed_smaller_support(
    solutions: &[Vec<f64>],
    g1: &SupportGeometry,
    g2: &SupportGeometry,
    q: &Momentum,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if g1.d != g2.d {
        return Err(Error::InvalidArgument("site dimensions differ".into()));
    }
    let placements = g1.placements_in(g2);
    if placements.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} does not fit in {}",
            g1.name(),
            g2.name()
        )));
    }
    if !q.is_real() {
        return Err(Error::Unsupported(
            "embedding at complex momentum phases".into(),
        ));
    }
    let b1 = product_basis(g1);
    let b2 = product_basis(g2);
    let scale = (g1.d as f64).sqrt().powi((g2.k() - g1.k()) as i32);
    let mut raw = Vec::new();
    for h in solutions {
        if h.len() != g1.product_len() {
            return Err(Error::ExtentMismatch("solution length".into()));
        }
        for &t in &placements {
            let sites: Vec<usize> = g1
                .offsets
                .iter()
                .map(|&(x, y)| g2.index_of((x + t.0, y + t.1)).expect("placement"))
                .collect();
            let ph = q.phase(t.0, t.1).re;
            let mut v = vec![0.0; g2.product_len()];
            for (a, &c) in h.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let mut digits = vec![0usize; g2.k()];
                for (s, &l) in sites.iter().zip(&b1.digits(a)) {
                    digits[*s] = l;
                }
                v[b2.index_of_digits(&digits)] += c * ph * scale;
            }
            raw.push(v);
        }
    }
    let span = orthonormalize(&raw, 1e-10);
    Ok((raw, span))
}

/// Coefficients in the `d = 2` product basis of `Σ c · P` for Pauli strings
/// written with one letter per site in geometry order.
pub fn pauli_coefficients(geometry: &SupportGeometry, terms: &[(f64, &str)]) -> Result<Vec<f64>> {
    if geometry.d != 2 {
        return Err(Error::InvalidArgument("Pauli strings need d = 2".into()));
    }
    let basis = product_basis(geometry);
    let norm = 2f64.powi(geometry.k() as i32 / 2)
        * if geometry.k() % 2 == 1 {
            2f64.sqrt()
        } else {
            1.0
        };
    let mut v = vec![0.0; geometry.product_len()];
    for &(c, s) in terms {
        let digits: Vec<usize> = s
            .chars()
            .map(|ch| match ch {
                'I' => Ok(0),
                'X' => Ok(1),
                'Y' => Ok(2),
                'Z' => Ok(3),
                _ => Err(Error::InvalidArgument(format!("bad Pauli letter {ch}"))),
            })
            .collect::<Result<_>>()?;
        if digits.len() != geometry.k() {
            return Err(Error::ExtentMismatch(format!(
                "string {s} on {} sites",
                geometry.k()
            )));
        }
        v[basis.index_of_digits(&digits)] += c * norm;
    }
    Ok(v)
}

/// Pattern class of an element of the 39-string plaquette basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Su2Class {
    /// σ^α σ^α on a nearest-neighbor pair.
    NearestPair,
    /// σ^α σ^α on a diagonal pair.
    DiagonalPair,
    /// σ^α σ^α σ^β σ^β with α ≠ β on two nearest-neighbor pairs.
    NearestPairing,
    /// σ^α σ^α σ^β σ^β with α ≠ β on the two diagonals.
    DiagonalPairing,
    /// σ^α on all four sites.
    AllEqual,
}

/// Site pairs of the plaquette (indices into the plaquette geometry).
const NN_PAIRS: [(usize, usize); 4] = [(0, 1), (2, 3), (0, 2), (1, 3)];
const DIAG_PAIRS: [(usize, usize); 2] = [(0, 3), (1, 2)];
const NN_PAIRINGS: [[(usize, usize); 2]; 2] = [[(0, 1), (2, 3)], [(0, 2), (1, 3)]];
const DIAG_PAIRING: [(usize, usize); 2] = [(0, 3), (1, 2)];

/// The 39 Pauli strings `σ^α σ^α` (nearest and diagonal pairs) and
/// `σ^α σ^α σ^β σ^β` (three pairings) on the `d = 2` plaquette, each divided
/// by 4, with their classes.
pub fn su2_reduced_plaquette_basis() -> (OperatorBasis, Vec<Su2Class>) {
    let g = SupportGeometry::plaquette(2);
    let letters = ['X', 'Y', 'Z'];
    let mut strings: Vec<(String, Su2Class)> = Vec::new();
    let mut push = |s: String, c: Su2Class| {
        if !strings.iter().any(|(t, _)| *t == s) {
            strings.push((s, c));
        }
    };
    let place = |ops: &[(usize, char)]| {
        let mut s = ['I'; 4];
        for &(i, c) in ops {
            s[i] = c;
        }
        s.iter().collect::<String>()
    };
    for &(i, j) in &NN_PAIRS {
        for &a in &letters {
            push(place(&[(i, a), (j, a)]), Su2Class::NearestPair);
        }
    }
    for &(i, j) in &DIAG_PAIRS {
        for &a in &letters {
            push(place(&[(i, a), (j, a)]), Su2Class::DiagonalPair);
        }
    }
    for &a in &letters {
        push(place(&[(0, a), (1, a), (2, a), (3, a)]), Su2Class::AllEqual);
    }
    for pairing in NN_PAIRINGS {
        for &a in &letters {
            for &b in &letters {
                if a != b {
                    let [(i, j), (k, l)] = pairing;
                    push(
                        place(&[(i, a), (j, a), (k, b), (l, b)]),
                        Su2Class::NearestPairing,
                    );
                }
            }
        }
    }
    for &a in &letters {
        for &b in &letters {
            if a != b {
                let [(i, j), (k, l)] = DIAG_PAIRING;
                push(
                    place(&[(i, a), (j, a), (k, b), (l, b)]),
                    Su2Class::DiagonalPairing,
                );
            }
        }
    }
    let rows = strings
        .iter()
        .map(|(s, _)| pauli_coefficients(&g, &[(0.25, s.as_str())]).expect("valid string"))
        .collect();
    let labels = strings.iter().map(|(s, _)| s.clone()).collect();
    let classes = strings.iter().map(|(_, c)| *c).collect();
    (
        OperatorBasis::from_combinations(&g, rows, labels).expect("valid rows"),
        classes,
    )
}

/// Pauli strings on the 2×3 window supported on rows 0–1 or on rows 1–2,
/// each divided by 8. Strings supported on row 1 alone appear once.
pub fn medial_restricted_basis() -> OperatorBasis {
    let g = SupportGeometry::window_2x3(2);
    let base = product_basis(&g);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..g.product_len() {
        let dg = base.digits(i);
        let upper = dg[4] == 0 && dg[5] == 0;
        let lower = dg[0] == 0 && dg[1] == 0;
        if upper || lower {
            let mut v = vec![0.0; g.product_len()];
            v[i] = 1.0;
            rows.push(v);
            labels.push(base.label(i));
        }
    }
    OperatorBasis::from_combinations(&g, rows, labels).expect("valid rows")
}

/// Edge of the square lattice: the horizontal edge leaving vertex (x, y) to
/// the right, or the vertical edge leaving it downward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId {
    pub x: i64,
    pub y: i64,
    pub vertical: bool,
}

impl EdgeId {
    pub fn h(x: i64, y: i64) -> Self {
        Self {
            x,
            y,
            vertical: false,
        }
    }

    pub fn v(x: i64, y: i64) -> Self {
        Self {
            x,
            y,
            vertical: true,
        }
    }

    /// Edge joining two nearest-neighbor vertices.
    pub fn between(a: (i64, i64), b: (i64, i64)) -> Option<Self> {
        let (lo, hi) = if (a.1, a.0) <= (b.1, b.0) {
            (a, b)
        } else {
            (b, a)
        };
        match (hi.0 - lo.0, hi.1 - lo.1) {
            (1, 0) => Some(Self::h(lo.0, lo.1)),
            (0, 1) => Some(Self::v(lo.0, lo.1)),
            _ => None,
        }
    }

    /// Edges (left, up, right, down) at a vertex.
    pub fn star(x: i64, y: i64) -> [Self; 4] {
        [
            Self::h(x - 1, y),
            Self::v(x, y - 1),
            Self::h(x, y),
            Self::v(x, y),
        ]
    }
}

/// Pauli letter: 0 = I, 1 = X, 2 = Y, 3 = Z.
pub type Pauli = u8;

/// Product of two Pauli letters as (phase, letter).
pub fn pauli_mul(a: Pauli, b: Pauli) -> (C64, Pauli) {
    let i = C64::new(0.0, 1.0);
    match (a, b) {
        (0, p) | (p, 0) => (C64::new(1.0, 0.0), p),
        (p, q) if p == q => (C64::new(1.0, 0.0), 0),
        (1, 2) => (i, 3),
        (2, 1) => (-i, 3),
        (2, 3) => (i, 1),
        (3, 2) => (-i, 1),
        (3, 1) => (i, 2),
        (1, 3) => (-i, 2),
        _ => unreachable!("Pauli letters are 0..=3"),
    }
}

/// Weighted sum of Pauli strings on edges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeOperator {
    pub terms: Vec<(C64, BTreeMap<EdgeId, Pauli>)>,
}

impl EdgeOperator {
    /// Add `c · Π P_e`, merging equal strings.
    pub fn add_term(&mut self, c: C64, ops: BTreeMap<EdgeId, Pauli>) {
        if let Some(t) = self.terms.iter_mut().find(|t| t.1 == ops) {
            t.0 += c;
        } else {
            self.terms.push((c, ops));
        }
    }

    /// Build from strings of letters on listed edges.
    pub fn from_terms(terms: &[(f64, &[(EdgeId, char)])]) -> Self {
        let mut op = Self::default();
        for &(c, s) in terms {
            let ops = s
                .iter()
                .filter(|(_, ch)| *ch != 'I')
                .map(|&(e, ch)| (e, letter(ch)))
                .collect();
            op.add_term(C64::new(c, 0.0), ops);
        }
        op
    }
}

fn letter(ch: char) -> Pauli {
    match ch {
        'I' => 0,
        'X' => 1,
        'Y' => 2,
        'Z' => 3,
        _ => panic!("bad Pauli letter {ch}"),
    }
}

/// Map a `Z₂`-symmetric plaquette operator on vertex spins to edge spins.
///
/// `X_v` becomes the X star of `v`; `Z_a Z_b` on neighbors becomes `Z` on
/// the shared edge; a diagonal `Z_a Z_c` becomes `Z Z` along the two edges
/// through a common neighbor, taken to be the one carrying the string's `X`
/// if exactly one does and the left one otherwise; four `Z`s are paired
/// along the top and bottom rows.
pub fn wegner_dual(h: &[f64]) -> Result<EdgeOperator> {
    let g = SupportGeometry::plaquette(2);
    if h.len() != g.product_len() {
        return Err(Error::ExtentMismatch(
            "expected d = 2 plaquette coefficients".into(),
        ));
    }
    let basis = product_basis(&g);
    let mut out = EdgeOperator::default();
    for (a, &c) in h.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let digits = basis.digits(a);
        if digits.contains(&2) {
            return Err(Error::InvalidArgument(format!(
                "string {} contains Y",
                basis.label(a)
            )));
        }
        let zs: Vec<usize> = (0..4).filter(|&s| digits[s] == 3).collect();
        let xs: Vec<usize> = (0..4).filter(|&s| digits[s] == 1).collect();
        if zs.len() % 2 == 1 {
            return Err(Error::InvalidArgument(format!(
                "string {} does not commute with the global spin flip",
                basis.label(a)
            )));
        }
        let pos = |s: usize| g.offsets[s];
        let mut factors: Vec<(EdgeId, Pauli)> = Vec::new();
        for &s in &xs {
            let (x, y) = pos(s);
            factors.extend(EdgeId::star(x, y).iter().map(|&e| (e, 1)));
        }
        let mut zpath = |p: (i64, i64), r: (i64, i64)| {
            if let Some(e) = EdgeId::between(p, r) {
                factors.push((e, 3));
                return;
            }
            let c1 = (p.0, r.1);
            let c2 = (r.0, p.1);
            let has_x = |c: (i64, i64)| xs.iter().any(|&s| pos(s) == c);
            let via = match (has_x(c1), has_x(c2)) {
                (true, false) => c1,
                (false, true) => c2,
                _ => {
                    if c1.0 <= c2.0 {
                        c1
                    } else {
                        c2
                    }
                }
            };
            factors.push((EdgeId::between(p, via).expect("neighbor"), 3));
            factors.push((EdgeId::between(via, r).expect("neighbor"), 3));
        };
        match zs.len() {
            0 => {}
            2 => zpath(pos(zs[0]), pos(zs[1])),
            4 => {
                zpath(pos(0), pos(1));
                zpath(pos(2), pos(3));
            }
            _ => unreachable!("even count up to four"),
        }
        let mut phase = C64::new(c / 4.0, 0.0);
        let mut ops: BTreeMap<EdgeId, Pauli> = BTreeMap::new();
        for (e, p) in factors {
            let cur = ops.get(&e).copied().unwrap_or(0);
            let (ph, r) = pauli_mul(cur, p);
            phase *= ph;
            if r == 0 {
                ops.remove(&e);
            } else {
                ops.insert(e, r);
            }
        }
        out.add_term(phase, ops);
    }
    out.terms.retain(|t| t.0.norm() > 0.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn frob(a: &Mat<C64>, b: &Mat<C64>) -> C64 {
        let n = a.nrows();
        let mut s = C64::new(0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                s += a[(i, j)].conj() * b[(i, j)];
            }
        }
        s
    }

    fn assert_orthonormal_hermitian(b: &OperatorBasis, tol: f64) {
        let els = b.elements();
        for (i, a) in els.iter().enumerate() {
            let n = a.nrows();
            for r in 0..n {
                for c in 0..n {
                    assert!((a[(r, c)] - a[(c, r)].conj()).norm() < 1e-14);
                }
            }
            for (j, e) in els.iter().enumerate() {
                let g = frob(a, e);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).norm() < tol, "gram ({i},{j}) = {g}");
            }
        }
    }

    #[test]
    fn site_bases() {
        for d in [2, 3, 5] {
            let b = hermitian_site_basis(d).unwrap();
            assert_eq!(b.len(), d * d);
            assert_orthonormal_hermitian(&b, 1e-12);
        }
        assert_eq!(
            hermitian_site_basis(2).unwrap().labels(),
            vec!["I", "X", "Y", "Z"]
        );
        assert!(hermitian_site_basis(1).is_err());
        let y = hermitian_site_basis(2).unwrap().matrix(2);
        assert!((y[(0, 1)] - C64::new(0.0, -0.5f64.sqrt())).norm() < 1e-15);
    }

    #[test]
    fn product_basis_sizes_and_order() {
        assert_eq!(product_basis(&SupportGeometry::pair(2)).len(), 16);
        assert_eq!(product_basis(&SupportGeometry::plaquette(2)).len(), 256);
        assert_eq!(product_basis(&SupportGeometry::plaquette(5)).len(), 390625);
        let b = product_basis(&SupportGeometry::pair(2));
        assert_eq!(b.label(1), "IX");
        assert_eq!(b.label(4), "XI");
        assert_orthonormal_hermitian(&b, 1e-12);
        assert_orthonormal_hermitian(&product_basis(&SupportGeometry::pair(3)), 1e-12);
    }

    /// Global operator `Σ_x e^{iq·x} h_x` on a torus as a map from translated
    /// product strings to coefficients; identity is dropped.
    fn global_strings(
        v: &[f64],
        g: &SupportGeometry,
        q: &Momentum,
        lx: i64,
        ly: i64,
    ) -> HashMap<Vec<usize>, C64> {
        let b = product_basis(g);
        // Padding identities: 1 = sqrt(d) times the normalized identity element.
        let pad = (g.d as f64).sqrt().powi(-(g.k() as i32));
        let mut out: HashMap<Vec<usize>, C64> = HashMap::new();
        for (a, &c) in v.iter().enumerate() {
            if c.abs() < 1e-15 || a == 0 {
                continue;
            }
            let dg = b.digits(a);
            for y in 0..ly {
                for x in 0..lx {
                    let mut key = vec![0usize; (lx * ly) as usize];
                    for (s, &(ox, oy)) in g.offsets.iter().enumerate() {
                        let site =
                            ((y + oy).rem_euclid(ly) * lx + (x + ox).rem_euclid(lx)) as usize;
                        key[site] = dg[s];
                    }
                    *out.entry(key).or_default() += q.phase(x, y) * (c * pad);
                }
            }
        }
        out.retain(|_, z| z.norm() > 1e-12);
        out
    }

    /// Dimension of {h : Σ_x e^{iq·x} h_x ∝ 1} on a 4×4 torus, by rank counting
    /// over translation classes of product strings.
    fn brute_force_trivial_dim(g: &SupportGeometry, q: &Momentum) -> usize {
        let b = product_basis(g);
        let (lx, ly) = (4i64, 4i64);
        // Canonical class of a global string: lexicographically smallest translate.
        let canon = |key: &Vec<usize>| {
            let mut best = key.clone();
            for ty in 0..ly {
                for tx in 0..lx {
                    let mut t = vec![0usize; key.len()];
                    for y in 0..ly {
                        for x in 0..lx {
                            let src = (y * lx + x) as usize;
                            let dst = (((y + ty) % ly) * lx + (x + tx) % lx) as usize;
                            t[dst] = key[src];
                        }
                    }
                    if t < best {
                        best = t;
                    }
                }
            }
            best
        };
        let mut classes: BTreeMap<Vec<usize>, Vec<HashMap<Vec<usize>, C64>>> = BTreeMap::new();
        let mut zero_cols = 1; // identity maps to a multiple of identity
        for a in 1..b.len() {
            let mut e = vec![0.0; b.len()];
            e[a] = 1.0;
            let col = global_strings(&e, g, q, lx, ly);
            match col.keys().next() {
                None => zero_cols += 1,
                Some(k) => classes.entry(canon(k)).or_default().push(col),
            }
        }
        let mut rank = 0;
        for cols in classes.values() {
            let mut rows: Vec<&Vec<usize>> = cols.iter().flat_map(|c| c.keys()).collect();
            rows.sort();
            rows.dedup();
            let m = Mat::<C64>::from_fn(rows.len(), cols.len(), |i, j| {
                cols[j].get(rows[i]).copied().unwrap_or_default()
            });
            let s = m.singular_values().unwrap();
            rank += s.iter().filter(|&&x| x > 1e-9 * s[0]).count();
        }
        assert_eq!(
            classes.values().map(|c| c.len()).sum::<usize>() + zero_cols,
            b.len()
        );
        b.len() - rank
    }

    #[test]
    fn plaquette_trivial_counts() {
        for q in [Momentum::zero(), Momentum::pi_pi(), Momentum::pi_zero()] {
            assert_eq!(
                trivial_subspace(&SupportGeometry::plaquette(2), &q)
                    .unwrap()
                    .len(),
                28
            );
            assert_eq!(
                trivial_subspace(&SupportGeometry::plaquette(3), &q)
                    .unwrap()
                    .len(),
                153
            );
        }
    }

    #[test]
    fn pair_and_site_trivial_counts() {
        assert_eq!(
            trivial_subspace(&SupportGeometry::pair(2), &Momentum::zero())
                .unwrap()
                .len(),
            4
        );
        assert_eq!(
            trivial_subspace(&SupportGeometry::site(2), &Momentum::zero())
                .unwrap()
                .len(),
            1
        );
        assert_eq!(
            trivial_subspace(&SupportGeometry::pair(5), &Momentum::zero())
                .unwrap()
                .len(),
            25
        );
        let q = Momentum::new(1, 0, 3, 1).unwrap();
        assert!(trivial_subspace(&SupportGeometry::pair(2), &q).is_err());
    }

    #[test]
    fn trivial_counts_match_brute_force() {
        for q in [Momentum::zero(), Momentum::pi_pi(), Momentum::pi_zero()] {
            for g in [SupportGeometry::pair(2), SupportGeometry::plaquette(2)] {
                let want = brute_force_trivial_dim(&g, &q);
                assert_eq!(
                    trivial_subspace(&g, &q).unwrap().len(),
                    want,
                    "{} {}",
                    g.name(),
                    q.label()
                );
            }
        }
    }

    #[test]
    fn trivial_vectors_have_vanishing_global_operator() {
        for q in [Momentum::zero(), Momentum::pi_pi(), Momentum::pi_zero()] {
            let g = SupportGeometry::plaquette(2);
            for v in trivial_subspace(&g, &q).unwrap() {
                assert!(global_strings(&v, &g, &q, 4, 4).is_empty());
            }
        }
    }

    #[test]
    fn pair_trivial_family_at_zero_momentum() {
        let g = SupportGeometry::pair(2);
        let tri = trivial_subspace(&g, &Momentum::zero()).unwrap();
        let expect = pauli_coefficients(&g, &[(1.0, "XI"), (-1.0, "IX")]).unwrap();
        let proj: f64 = tri
            .iter()
            .map(|t| {
                t.iter()
                    .zip(&expect)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    .powi(2)
            })
            .sum();
        let n2: f64 = expect.iter().map(|x| x * x).sum();
        assert!((proj - n2).abs() < 1e-12);
    }

    #[test]
    fn embedding_site_into_pair() {
        let g1 = SupportGeometry::site(2);
        let g2 = SupportGeometry::pair(2);
        let q = Momentum::zero();
        let z = product_basis(&g1).coefficients(3);
        let (raw, span) = embed_smaller_support(std::slice::from_ref(&z), &g1, &g2, &q).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(span.len(), 2);
        let want = global_strings(&z, &g1, &q, 4, 4);
        for v in &raw {
            let got = global_strings(v, &g2, &q, 4, 4);
            assert_eq!(got.len(), want.len());
            for (k, c) in &want {
                assert!((got[k] - c).norm() < 1e-12);
            }
        }
        let id = product_basis(&g1).coefficients(0);
        let (_, span) = embed_smaller_support(&[id], &g1, &g2, &q).unwrap();
        assert_eq!(span.len(), 1);
        assert!((span[0][0] - 1.0).abs() < 1e-14);
        let (raw, _) =
            embed_smaller_support(&[z], &g1, &SupportGeometry::plaquette(2), &q).unwrap();
        assert_eq!(raw.len(), 4);
        assert!(embed_smaller_support(&[vec![0.0; 16]], &g2, &g1, &q).is_err());
    }

    #[test]
    fn embedding_respects_momentum() {
        let g1 = SupportGeometry::site(2);
        let g2 = SupportGeometry::plaquette(2);
        for q in [Momentum::pi_pi(), Momentum::pi_zero()] {
            let x = product_basis(&g1).coefficients(1);
            let want = global_strings(&x, &g1, &q, 4, 4);
            let (raw, _) = embed_smaller_support(&[x], &g1, &g2, &q).unwrap();
            for v in &raw {
                let got = global_strings(v, &g2, &q, 4, 4);
                for (k, c) in &want {
                    assert!((got[k] - c).norm() < 1e-12);
                }
            }
        }
    }

    fn total_spin(k: usize) -> [Mat<C64>; 3] {
        let p = crate::spin::pauli();
        let n = 1 << k;
        std::array::from_fn(|a| {
            let mut m = Mat::<C64>::zeros(n, n);
            for s in 0..k {
                let mut op = Mat::<C64>::identity(1, 1);
                for t in 0..k {
                    let f = if t == s {
                        p[a].clone()
                    } else {
                        Mat::<C64>::identity(2, 2)
                    };
                    op = kron(&op, &f);
                }
                m += op;
            }
            m
        })
    }

    #[test]
    fn su2_basis_structure() {
        let (b, classes) = su2_reduced_plaquette_basis();
        assert_eq!(b.len(), 39);
        assert_orthonormal_hermitian(&b, 1e-12);
        let count = |c: Su2Class| classes.iter().filter(|&&x| x == c).count();
        assert_eq!(count(Su2Class::NearestPair), 12);
        assert_eq!(count(Su2Class::DiagonalPair), 6);
        assert_eq!(count(Su2Class::AllEqual), 3);
        assert_eq!(count(Su2Class::NearestPairing), 12);
        assert_eq!(count(Su2Class::DiagonalPairing), 6);
        // Heisenberg-type sums over α of each pattern commute with total spin.
        let s = total_spin(4);
        let g = SupportGeometry::plaquette(2);
        let heis = |pairs: &[(usize, usize)]| {
            let mut terms: Vec<(f64, String)> = Vec::new();
            let l = ['X', 'Y', 'Z'];
            let npair = pairs.len();
            for a in 0..3usize.pow(npair as u32) {
                let mut st = ['I'; 4];
                let mut r = a;
                for &(i, j) in pairs {
                    st[i] = l[r % 3];
                    st[j] = l[r % 3];
                    r /= 3;
                }
                terms.push((1.0, st.iter().collect()));
            }
            let t: Vec<(f64, &str)> = terms.iter().map(|(c, s)| (*c, s.as_str())).collect();
            pauli_coefficients(&g, &t).unwrap()
        };
        let mut patterns: Vec<Vec<f64>> = NN_PAIRS
            .iter()
            .chain(&DIAG_PAIRS)
            .map(|&p| heis(&[p]))
            .collect();
        patterns.extend(NN_PAIRINGS.iter().map(|p| heis(p)));
        patterns.push(heis(&DIAG_PAIRING));
        let prod = product_basis(&g);
        for v in &patterns {
            // Each pattern sum lies in the span of the 39 strings.
            let inside = b.to_product_coefficients(&b.from_product_coefficients(v));
            assert!(inside.iter().zip(v).all(|(a, c)| (a - c).abs() < 1e-12));
            let m = prod.product_combination_matrix(v);
            for sa in &s {
                let c = &m * sa - sa * &m;
                assert!(c.norm_max() < 1e-13);
            }
        }
    }

    #[test]
    fn medial_basis_enumeration() {
        let b = medial_restricted_basis();
        // Independent count: strings with identity on both sites of row 2, or of row 0.
        let mut count = 0;
        for s in 0..4096usize {
            let letter = |site: usize| (s >> (2 * (5 - site))) & 3;
            if (letter(4) == 0 && letter(5) == 0) || (letter(0) == 0 && letter(1) == 0) {
                count += 1;
            }
        }
        assert_eq!(b.len(), count);
        assert_eq!(b.len(), 496);
        for l in b.labels() {
            let c: Vec<char> = l.chars().collect();
            assert!((c[4] == 'I' && c[5] == 'I') || (c[0] == 'I' && c[1] == 'I'));
        }
        // Gram matrix in coefficient space.
        let rows = b.combination_rows().unwrap();
        for (i, r) in rows.iter().enumerate().step_by(37) {
            for (j, s) in rows.iter().enumerate() {
                let dot: f64 = r.iter().zip(s).map(|(a, c)| a * c).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
        assert_orthonormal_hermitian(
            &OperatorBasis::from_combinations(
                &b.geometry,
                rows[..6].to_vec(),
                b.labels()[..6].to_vec(),
            )
            .unwrap(),
            1e-12,
        );
    }

    #[test]
    fn dual_of_identity_and_errors() {
        let g = SupportGeometry::plaquette(2);
        let id = pauli_coefficients(&g, &[(4.0, "IIII")]).unwrap();
        let d = wegner_dual(&id).unwrap();
        assert_eq!(d.terms.len(), 1);
        assert!(d.terms[0].1.is_empty());
        assert!((d.terms[0].0 - C64::new(4.0, 0.0)).norm() < 1e-14);
        assert!(wegner_dual(&pauli_coefficients(&g, &[(1.0, "YIII")]).unwrap()).is_err());
        assert!(wegner_dual(&pauli_coefficients(&g, &[(1.0, "ZIII")]).unwrap()).is_err());
    }

    #[test]
    fn dual_rules() {
        let g = SupportGeometry::plaquette(2);
        // X at top-left becomes its star.
        let d = wegner_dual(&pauli_coefficients(&g, &[(1.0, "XIII")]).unwrap()).unwrap();
        let star: BTreeMap<EdgeId, Pauli> = EdgeId::star(0, 0).iter().map(|&e| (e, 1)).collect();
        assert_eq!(d.terms, vec![(C64::new(1.0, 0.0), star)]);
        // Vertical Z Z on the left column becomes Z on the left edge.
        let d = wegner_dual(&pauli_coefficients(&g, &[(1.0, "ZIZI")]).unwrap()).unwrap();
        let e: BTreeMap<EdgeId, Pauli> = [(EdgeId::v(0, 0), 3)].into_iter().collect();
        assert_eq!(d.terms, vec![(C64::new(1.0, 0.0), e)]);
    }

    #[test]
    fn coefficients_round_trip() {
        let g = SupportGeometry::pair(3);
        let b = product_basis(&g);
        let v: Vec<f64> = (0..b.len())
            .map(|i| ((i * 7 + 3) % 11) as f64 - 5.0)
            .collect();
        let m = b.product_combination_matrix(&v);
        let back = hermitian_coefficients(&m, 3, 2).unwrap();
        for (a, c) in v.iter().zip(&back) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn momentum_validation_and_phases() {
        assert!(Momentum::new(2, 0, 4, 1).is_err());
        assert!(Momentum::new(0, 0, 2, 1).is_err());
        let q = Momentum::pi_zero();
        assert_eq!(q.phase(1, 0), C64::new(-1.0, 0.0));
        assert_eq!(q.phase(3, 5), C64::new(-1.0, 0.0));
        assert_eq!(Momentum::pi_pi().phase(1, 1), C64::new(1.0, 0.0));
        let q3 = Momentum::new(1, 0, 3, 1).unwrap();
        assert!(
            (q3.phase(1, 0)
                - C64::new(
                    (2.0 * std::f64::consts::PI / 3.0).cos(),
                    (2.0 * std::f64::consts::PI / 3.0).sin()
                ))
            .norm()
                < 1e-15
        );
        assert!(q.fits_torus(4, 4) && !q3.fits_torus(4, 4));
    }
}
