//! Benchmark states as uniform PEPS unit cells, plus the deformed toric-code
//! statevector on small edge tori.
//!
//! Site tensors use the axis order (physical, left, up, right, down). Bond
//! matrices are absorbed into the site on the right (resp. below) of the bond:
//! for a bond matrix `E[a, b]` whose first index sits on the left/up site, the
//! right/down site carries `T'[p, l, u, r, d] = Σ E[l, l'] E[u, u'] T[p, l', u', r, d]`.
//! Physical spin-1/2 index 0 is `|↑⟩` (Z = +1).

use crate::error::{Error, Result};
use crate::spin::clebsch_gordan;
use crate::tensor::{contract, Tensor};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Critical inverse temperature ln(1+√2)/2 of the square-lattice Ising model.
pub fn beta_c() -> f64 {
    (1.0 + 2f64.sqrt()).ln() / 2.0
}

/// How a contraction of the state should treat degenerate fixed points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Injectivity {
    Injective,
    SymmetryBrokenCat,
    Topological,
}

/// Translationally repeated grid of site tensors.
#[derive(Clone, Debug)]
pub struct PepsUnitCell {
    pub width: usize,
    pub height: usize,
    /// Row-major grid, `sites[y * width + x]`.
    pub sites: Vec<Tensor>,
    pub d: usize,
    pub injectivity: Injectivity,
    /// Virtual symmetry operator for non-injective states.
    pub u_x: Option<Tensor>,
}

impl PepsUnitCell {
    pub fn new(
        width: usize,
        height: usize,
        sites: Vec<Tensor>,
        injectivity: Injectivity,
        u_x: Option<Tensor>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || sites.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{} tensors for a {width}x{height} cell",
                sites.len()
            )));
        }
        let d = sites[0].shape().first().copied().unwrap_or(0);
        for (i, t) in sites.iter().enumerate() {
            if t.rank() != 5 {
                return Err(Error::InvalidArgument(format!(
                    "site {i} has rank {}",
                    t.rank()
                )));
            }
            if t.shape()[0] != d {
                return Err(Error::ExtentMismatch(format!(
                    "site {i} physical dimension"
                )));
            }
        }
        let cell = Self {
            width,
            height,
            sites,
            d,
            injectivity,
            u_x,
        };
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                let t = cell.site(x, y).shape();
                if t[3] != cell.site(x + 1, y).shape()[1] {
                    return Err(Error::ExtentMismatch(format!(
                        "horizontal bond at ({x},{y})"
                    )));
                }
                if t[4] != cell.site(x, y + 1).shape()[2] {
                    return Err(Error::ExtentMismatch(format!("vertical bond at ({x},{y})")));
                }
            }
        }
        Ok(cell)
    }

    /// Single-site cell.
    pub fn uniform(t: Tensor, injectivity: Injectivity, u_x: Option<Tensor>) -> Result<Self> {
        Self::new(1, 1, vec![t], injectivity, u_x)
    }

    /// Site tensor at lattice position (x, y), periodic in the cell.
    pub fn site(&self, x: i64, y: i64) -> &Tensor {
        let xx = x.rem_euclid(self.width as i64) as usize;
        let yy = y.rem_euclid(self.height as i64) as usize;
        &self.sites[yy * self.width + xx]
    }

    /// Bond dimensions (right, down) of the site at (x, y).
    pub fn bond_dims(&self, x: i64, y: i64) -> (usize, usize) {
        let s = self.site(x, y).shape();
        (s[3], s[4])
    }

    pub fn is_real(&self) -> bool {
        self.sites.iter().all(|t| t.is_real())
    }

    pub fn to_file(&self) -> PepsFile {
        PepsFile {
            cell_width: self.width,
            cell_height: self.height,
            physical_dim: self.d,
            bond_dims: (0..self.height as i64)
                .flat_map(|y| (0..self.width as i64).map(move |x| (x, y)))
                .map(|(x, y)| {
                    let (r, d) = self.bond_dims(x, y);
                    [r, d]
                })
                .collect(),
            injectivity: self.injectivity,
            u_x: self.u_x.as_ref().map(TensorRecord::from_tensor),
            tensors: self.sites.iter().map(TensorRecord::from_tensor).collect(),
        }
    }

    pub fn from_file(f: &PepsFile) -> Result<Self> {
        let sites = f
            .tensors
            .iter()
            .map(TensorRecord::to_tensor)
            .collect::<Result<Vec<_>>>()?;
        let u_x = f.u_x.as_ref().map(TensorRecord::to_tensor).transpose()?;
        let cell = Self::new(f.cell_width, f.cell_height, sites, f.injectivity, u_x)?;
        if cell.d != f.physical_dim {
            return Err(Error::Format("physical_dim disagrees with tensors".into()));
        }
        Ok(cell)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(&self.to_file())
            .map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let f: PepsFile = serde_json::from_str(&s).map_err(|e| Error::Format(e.to_string()))?;
        Self::from_file(&f)
    }
}

/// Serialized tensor: shape plus row-major (re, im) pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub elements: Vec<[f64; 2]>,
}

impl TensorRecord {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            elements: t.to_complex_vec().iter().map(|z| [z.re, z.im]).collect(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = self.elements.iter().map(|e| C64::new(e[0], e[1])).collect();
        Tensor::from_complex(self.shape.clone(), data)
    }
}

/// On-disk PEPS container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PepsFile {
    pub cell_width: usize,
    pub cell_height: usize,
    pub physical_dim: usize,
    /// (right, down) bond dimension per cell site, row-major.
    pub bond_dims: Vec<[usize; 2]>,
    pub injectivity: Injectivity,
    pub u_x: Option<TensorRecord>,
    pub tensors: Vec<TensorRecord>,
}

/// Periodic Lx × Ly lattice, sites numbered row-major with x fastest.
///
/// Product-state indices put site 0 in the most significant digit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteTorus {
    pub lx: usize,
    pub ly: usize,
    pub d: usize,
}

impl FiniteTorus {
    pub fn new(lx: usize, ly: usize, d: usize) -> Self {
        assert!(
            lx > 0 && ly > 0 && d > 0,
            "torus dimensions must be positive"
        );
        Self { lx, ly, d }
    }

    pub fn n_sites(&self) -> usize {
        self.lx * self.ly
    }

    pub fn site(&self, x: i64, y: i64) -> usize {
        let xx = x.rem_euclid(self.lx as i64) as usize;
        let yy = y.rem_euclid(self.ly as i64) as usize;
        yy * self.lx + xx
    }

    pub fn coords(&self, i: usize) -> (i64, i64) {
        ((i % self.lx) as i64, (i / self.lx) as i64)
    }

    /// Nearest-neighbor bonds (site, right) and (site, down). On a torus of
    /// length 2 a pair of sites is joined by two bonds and appears twice.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_sites() {
            let (x, y) = self.coords(i);
            for (dx, dy) in [(1, 0), (0, 1)] {
                let j = self.site(x + dx, y + dy);
                if i != j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn neighbors(&self, i: usize) -> [usize; 4] {
        let (x, y) = self.coords(i);
        [
            self.site(x - 1, y),
            self.site(x, y - 1),
            self.site(x + 1, y),
            self.site(x, y + 1),
        ]
    }

    pub fn dim(&self) -> Result<usize> {
        (0..self.n_sites())
            .try_fold(1usize, |acc, _| acc.checked_mul(self.d))
            .ok_or_else(|| Error::Budget("Hilbert space dimension overflows".into()))
    }
}

/// Absorb a bond matrix into the left and up legs of a vertex tensor.
fn absorb_left_up(vertex: &Tensor, e: &Tensor) -> Result<Tensor> {
    // e[a, b] with b on this site: contract b with the leg.
    let t = contract(e, vertex, &[(1, 1)])?; // a, p, u, r, d
    let t = t.permute(&[1, 0, 2, 3, 4])?; // p, l, u, r, d
    let t = contract(e, &t, &[(1, 2)])?; // a, p, l, r, d
    t.permute(&[1, 2, 0, 3, 4])
}

/// Bare spin-2 AKLT vertex tensor `T[p, l, u, r, d]` with `p = 2 - m` and virtual 0 = ↑.
pub fn aklt_vertex() -> Tensor {
    // Virtual index v -> doubled m: 0 -> +1, 1 -> -1.
    let vm = |v: usize| if v == 0 { 1 } else { -1 };
    Tensor::from_fn_real(vec![5, 2, 2, 2, 2], |ix| {
        let tm = 4 - 2 * ix[0] as i64;
        let (l, u, r, d) = (vm(ix[1]), vm(ix[2]), vm(ix[3]), vm(ix[4]));
        let mut acc = 0.0;
        for tj in [-2i64, 0, 2] {
            for tk in [-2i64, 0, 2] {
                acc += clebsch_gordan(2, tj, 2, tk, 4, tm)
                    * clebsch_gordan(1, l, 1, r, 2, tj)
                    * clebsch_gordan(1, u, 1, d, 2, tk);
            }
        }
        acc
    })
}

/// Spin-2 AKLT state: d = 5, D = 2, singlets `[[0, 1], [-1, 0]]` absorbed.
pub fn build_aklt_peps() -> PepsUnitCell {
    let eps = Tensor::from_real(vec![2, 2], vec![0.0, 1.0, -1.0, 0.0]).expect("2x2");
    let site = absorb_left_up(&aklt_vertex(), &eps).expect("shapes agree");
    PepsUnitCell::uniform(site, Injectivity::Injective, None).expect("valid cell")
}

/// Bare RVB vertex: virtual 0 is the spin-0 state, 1 = ↑, 2 = ↓.
pub fn rvb_vertex() -> Tensor {
    Tensor::from_fn_real(vec![2, 3, 3, 3, 3], |ix| {
        let want = 1 + ix[0];
        let hits = ix[1..].iter().filter(|&&v| v == want).count();
        let zeros = ix[1..].iter().filter(|&&v| v == 0).count();
        if hits == 1 && zeros == 3 {
            1.0
        } else {
            0.0
        }
    })
}

/// Nearest-neighbor RVB state: d = 2, D = 3, bond matrix `|00) + |↑↓) − |↓↑)` absorbed.
pub fn build_rvb_peps() -> PepsUnitCell {
    let mut e = vec![0.0; 9];
    e[0] = 1.0;
    e[3 + 2] = 1.0;
    e[2 * 3 + 1] = -1.0;
    let e = Tensor::from_real(vec![3, 3], e).expect("3x3");
    let site = absorb_left_up(&rvb_vertex(), &e).expect("shapes agree");
    PepsUnitCell::uniform(site, Injectivity::Injective, None).expect("valid cell")
}

/// Symmetric square root W of the bond weight `[[e^{β/2}, e^{-β/2}], [e^{-β/2}, e^{β/2}]]`.
pub fn ising_bond_root(beta: f64) -> [[C64; 2]; 2] {
    let a = C64::new(2.0 * (beta / 2.0).cosh(), 0.0).sqrt();
    let b = C64::new(2.0 * (beta / 2.0).sinh(), 0.0).sqrt();
    let p = (a + b) / 2.0;
    let m = (a - b) / 2.0;
    [[p, m], [m, p]]
}

/// Deformed Ising state `exp((β/2) Σ Z_i Z_j) |+…+⟩`: copy tensor with `W` on every leg.
pub fn build_ising_peps(beta: f64) -> Result<PepsUnitCell> {
    if !beta.is_finite() {
        return Err(Error::InvalidArgument("beta must be finite".into()));
    }
    let w = ising_bond_root(beta);
    let site = Tensor::from_fn_complex(vec![2, 2, 2, 2, 2], |ix| {
        ix[1..].iter().map(|&v| w[ix[0]][v]).product()
    });
    let x = Tensor::from_real(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0])?;
    let hint = if beta > beta_c() {
        Injectivity::SymmetryBrokenCat
    } else {
        Injectivity::Injective
    };
    PepsUnitCell::uniform(site, hint, Some(x))
}

/// Edge numbering on an Lx × Ly torus: horizontal edge leaving vertex (x, y)
/// to the right is `2(y Lx + x)`, the vertical edge leaving it downward is
/// `2(y Lx + x) + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeLattice {
    pub lx: usize,
    pub ly: usize,
}

impl EdgeLattice {
    pub fn new(lx: usize, ly: usize) -> Self {
        Self { lx, ly }
    }

    pub fn n_edges(&self) -> usize {
        2 * self.lx * self.ly
    }

    fn v(&self, x: i64, y: i64) -> usize {
        let xx = x.rem_euclid(self.lx as i64) as usize;
        let yy = y.rem_euclid(self.ly as i64) as usize;
        yy * self.lx + xx
    }

    pub fn h(&self, x: i64, y: i64) -> usize {
        2 * self.v(x, y)
    }

    pub fn vert(&self, x: i64, y: i64) -> usize {
        2 * self.v(x, y) + 1
    }

    /// Edges (left, up, right, down) incident to vertex (x, y).
    pub fn star(&self, x: i64, y: i64) -> [usize; 4] {
        [
            self.h(x - 1, y),
            self.vert(x, y - 1),
            self.h(x, y),
            self.vert(x, y),
        ]
    }

    /// Edges (top, left, bottom, right) of the plaquette with top-left vertex (x, y).
    pub fn plaquette(&self, x: i64, y: i64) -> [usize; 4] {
        [
            self.h(x, y),
            self.vert(x, y),
            self.h(x, y + 1),
            self.vert(x + 1, y),
        ]
    }

    /// Bit mask of a set of edges, with edge 0 the most significant bit.
    pub fn mask(&self, edges: &[usize]) -> usize {
        let n = self.n_edges();
        edges.iter().fold(0, |m, &e| m ^ (1 << (n - 1 - e)))
    }
}

/// Deformed toric code `Π_e exp((β/2) Z_e) Π_v (1 + A_v) |0…0⟩` on the edges of an Lx × Ly torus.
pub fn build_deformed_tc_state(beta: f64, lat: EdgeLattice) -> Result<Vec<f64>> {
    let n = lat.n_edges();
    if n > 24 {
        return Err(Error::Budget(format!("{n} edges exceed the limit of 24")));
    }
    if lat.lx < 2 || lat.ly < 2 {
        return Err(Error::InvalidArgument("torus must be at least 2x2".into()));
    }
    let dim = 1usize << n;
    let mut psi = vec![0.0; dim];
    psi[0] = 1.0;
    for y in 0..lat.ly as i64 {
        for x in 0..lat.lx as i64 {
            let m = lat.mask(&lat.star(x, y));
            let old = psi.clone();
            for (i, amp) in psi.iter_mut().enumerate() {
                *amp += old[i ^ m];
            }
        }
    }
    for (i, amp) in psi.iter_mut().enumerate() {
        let down = i.count_ones() as f64;
        let zsum = n as f64 - 2.0 * down;
        *amp *= (beta / 2.0 * zsum).exp();
    }
    Ok(psi)
}
