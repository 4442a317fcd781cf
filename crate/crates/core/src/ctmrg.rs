//! Corner transfer matrix renormalization group on rectangular unit cells.
//!
//! A [`Network`] holds one bundled rank-4 tensor `a[l, u, r, d]` per cell
//! position. Bundled legs combine (bra, operator, ket) virtual indices as
//! `(b · D' + o) · D + k`. The environment of each position consists of four
//! corners and four edges stored with legs `[in, out]` and `[in, k, out]`,
//! `in` and `out` following the clockwise direction around the position:
//!
//! - `C_tl[down, right]`, `T_top[left, k, right]`, `C_tr[left, down]`,
//! - `T_right[up, k, down]`, `C_br[up, left]`, `T_bottom[right, k, left]`,
//! - `C_bl[right, up]`, `T_left[down, k, up]`.
//!
//! Only the left move is implemented; the other three directions rotate the
//! whole network by 90° and reuse it. Projectors come from the truncated SVD
//! of the product of the upper and lower half systems of each 2×2 block.

use crate::error::{Error, Result};
use crate::models::{PepsUnitCell, TensorRecord};
use crate::tensor::{contract, outer, svd_truncate, Labeled, Tensor};
use faer::Mat;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Boundary condition used to seed the environment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Seed {
    /// Bra and ket traced together, operator layer in state 0.
    Trace,
    /// Every layer fixed to virtual state 0; selects one branch of a cat state.
    Polarized,
}

/// Unit cell of bundled tensors together with their open-leg variants.
#[derive(Clone, Debug)]
pub struct Network {
    pub lx: usize,
    pub ly: usize,
    /// `a[l, u, r, d]`, row-major over the cell.
    pub tensors: Vec<Tensor>,
    /// `e[b, c, l, u, r, d]` with the physical legs between operator and ket left open.
    pub open: Vec<Tensor>,
    /// Seed vectors for the four legs (l, u, r, d) of each tensor.
    pub boundary: Vec<[Tensor; 4]>,
    /// Ket bond dimensions (left, up, right, down) of each position.
    pub ket_dims: Vec<[usize; 4]>,
}

fn wrap(v: i64, n: usize) -> usize {
    v.rem_euclid(n as i64) as usize
}

fn layer_boundary(dk: usize, dop: usize, seed: Seed) -> Tensor {
    Tensor::from_fn_real(vec![dk * dop * dk], |ix| {
        let k = ix[0] % dk;
        let o = (ix[0] / dk) % dop;
        let b = ix[0] / (dk * dop);
        let hit = match seed {
            Seed::Trace => b == k && o == 0,
            Seed::Polarized => b == 0 && k == 0 && o == 0,
        };
        if hit {
            1.0
        } else {
            0.0
        }
    })
}

/// Bundle `⟨T| O |T⟩` into `a[l, u, r, d]`; `op` is `O[p_out, p_in, l, u, r, d]`.
pub fn bundle(ket: &Tensor, op: Option<&Tensor>) -> Result<Tensor> {
    let ks = ket.shape().to_vec();
    if ks.len() != 5 {
        return Err(Error::InvalidArgument(
            "site tensor must have rank 5".into(),
        ));
    }
    let bra = ket.conj();
    match op {
        None => {
            let t = contract(&bra, ket, &[(0, 0)])?;
            let t = t.permute(&[0, 4, 1, 5, 2, 6, 3, 7])?;
            t.reshape((1..5).map(|i| ks[i] * ks[i]).collect())
        }
        Some(o) => {
            let os = check_op(o, &ks)?;
            let t = contract(&bra, o, &[(0, 0)])?; // b4, p_in, o4
            let t = contract(&t, ket, &[(4, 0)])?; // b4, o4, k4
            let t = t.permute(&[0, 4, 8, 1, 5, 9, 2, 6, 10, 3, 7, 11])?;
            t.reshape((1..5).map(|i| ks[i] * os[i + 1] * ks[i]).collect())
        }
    }
}

/// Bundle with open physical legs: `e[b, c, l, u, r, d] = Σ_a conj(T[a]) O[a, b] T[c]`.
pub fn bundle_open(ket: &Tensor, op: Option<&Tensor>) -> Result<Tensor> {
    let ks = ket.shape().to_vec();
    if ks.len() != 5 {
        return Err(Error::InvalidArgument(
            "site tensor must have rank 5".into(),
        ));
    }
    let bra = ket.conj();
    match op {
        None => {
            let t = outer(&bra, ket); // b, b4, c, k4
            let t = t.permute(&[0, 5, 1, 6, 2, 7, 3, 8, 4, 9])?;
            let mut shape = vec![ks[0], ks[0]];
            shape.extend((1..5).map(|i| ks[i] * ks[i]));
            t.reshape(shape)
        }
        Some(o) => {
            let os = check_op(o, &ks)?;
            let t = contract(&bra, o, &[(0, 0)])?; // b4, b, o4
            let t = outer(&t, ket); // b4, b, o4, c, k4
            let t = t.permute(&[4, 9, 0, 5, 10, 1, 6, 11, 2, 7, 12, 3, 8, 13])?;
            let mut shape = vec![ks[0], ks[0]];
            shape.extend((1..5).map(|i| ks[i] * os[i + 1] * ks[i]));
            t.reshape(shape)
        }
    }
}

fn check_op(o: &Tensor, ks: &[usize]) -> Result<Vec<usize>> {
    let os = o.shape().to_vec();
    if os.len() != 6 || os[0] != ks[0] || os[1] != ks[0] {
        return Err(Error::ExtentMismatch(format!(
            "operator tensor {os:?} for site {ks:?}"
        )));
    }
    Ok(os)
}

impl Network {
    /// Norm network `⟨Ψ|Ψ⟩` of a PEPS.
    pub fn double_layer(peps: &PepsUnitCell, seed: Seed) -> Result<Self> {
        Self::layered(peps, peps.width, peps.height, &|_, _| None, seed)
    }

    /// Network of `⟨Ψ| O |Ψ⟩` on an `lx × ly` cell; `op(x, y)` gives the operator
    /// tensor `O[p_out, p_in, l, u, r, d]` at each position, or `None` for the identity.
    pub fn layered(
        peps: &PepsUnitCell,
        lx: usize,
        ly: usize,
        op: &dyn Fn(usize, usize) -> Option<Tensor>,
        seed: Seed,
    ) -> Result<Self> {
        if lx == 0 || ly == 0 || !lx.is_multiple_of(peps.width) || !ly.is_multiple_of(peps.height) {
            return Err(Error::InvalidArgument(format!(
                "{lx}x{ly} cell is not a multiple of the {}x{} state cell",
                peps.width, peps.height
            )));
        }
        let mut tensors = Vec::with_capacity(lx * ly);
        let mut open = Vec::with_capacity(lx * ly);
        let mut boundary = Vec::with_capacity(lx * ly);
        let mut ket_dims = Vec::with_capacity(lx * ly);
        for y in 0..ly {
            for x in 0..lx {
                let ket = peps.site(x as i64, y as i64);
                let o = op(x, y);
                let a = bundle(ket, o.as_ref())?;
                let e = bundle_open(ket, o.as_ref())?;
                let ks = ket.shape();
                let dop = |i: usize| o.as_ref().map_or(1, |t| t.shape()[i + 1]);
                boundary.push([1, 2, 3, 4].map(|i| layer_boundary(ks[i], dop(i), seed)));
                ket_dims.push([ks[1], ks[2], ks[3], ks[4]]);
                tensors.push(a);
                open.push(e);
            }
        }
        let net = Self {
            lx,
            ly,
            tensors,
            open,
            boundary,
            ket_dims,
        };
        net.check_bonds()?;
        Ok(net)
    }

    fn check_bonds(&self) -> Result<()> {
        for y in 0..self.ly as i64 {
            for x in 0..self.lx as i64 {
                let a = self.site(x, y).shape();
                if !a.iter().all(|&e| e > 0) || a.len() != 4 {
                    return Err(Error::InvalidArgument(
                        "bundled tensors must have rank 4".into(),
                    ));
                }
                if a[2] != self.site(x + 1, y).shape()[0] || a[3] != self.site(x, y + 1).shape()[1]
                {
                    return Err(Error::ExtentMismatch(format!("bundled bond at ({x},{y})")));
                }
            }
        }
        if self
            .tensors
            .iter()
            .chain(&self.open)
            .any(|t| !t.is_finite())
        {
            return Err(Error::NonFinite("network tensor".into()));
        }
        Ok(())
    }

    pub fn index(&self, x: i64, y: i64) -> usize {
        wrap(y, self.ly) * self.lx + wrap(x, self.lx)
    }

    pub fn site(&self, x: i64, y: i64) -> &Tensor {
        &self.tensors[self.index(x, y)]
    }

    pub fn is_real(&self) -> bool {
        self.tensors.iter().all(Tensor::is_real)
    }
}

/// Sweep parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CtmParams {
    pub chi: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Singular values below this fraction of the largest are dropped from projectors.
    pub rel_cutoff: f64,
}

impl CtmParams {
    pub fn new(chi: usize) -> Self {
        Self {
            chi,
            tol: 1e-10,
            max_iter: 5000,
            rel_cutoff: 1e-12,
        }
    }
}

/// Outcome of [`converge_environment`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    /// Max-norm change of the normalized corner spectra in the last sweep.
    pub drift: f64,
    pub converged: bool,
    /// Largest relative discarded weight of any projector in the last sweep.
    pub discarded_weight: f64,
    /// Projector truncations that had to split a degenerate multiplet, over all sweeps.
    pub degeneracy_splits: usize,
    /// Drifts of the final ten sweeps, oldest first.
    pub recent_drift: Vec<f64>,
}

impl ConvergenceReport {
    /// Whether the drift was non-increasing over the recorded final sweeps.
    pub fn drift_monotone(&self) -> bool {
        self.recent_drift
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }
}

/// Converged corner and edge tensors for every cell position.
#[derive(Clone, Debug)]
pub struct CtmEnvironment {
    pub lx: usize,
    pub ly: usize,
    pub chi: usize,
    /// `[C_tl, C_tr, C_br, C_bl]` per position.
    pub corners: Vec<[Tensor; 4]>,
    /// `[T_top, T_right, T_bottom, T_left]` per position.
    pub edges: Vec<[Tensor; 4]>,
    pub report: ConvergenceReport,
}

#[derive(Serialize, Deserialize)]
struct EnvironmentFile {
    lx: usize,
    ly: usize,
    chi: usize,
    corners: Vec<Vec<TensorRecord>>,
    edges: Vec<Vec<TensorRecord>>,
    report: ConvergenceReport,
}

impl CtmEnvironment {
    /// Normalized, descending singular values of the four corners at each position.
    pub fn corner_spectra(&self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for cs in &self.corners {
            for c in cs {
                let s = svd_truncate(c, &[0], &[1], 1 << 20, 0.0)?.s;
                let top = s[0];
                out.push(
                    s.into_iter()
                        .map(|v| if top > 0.0 { v / top } else { 0.0 })
                        .collect(),
                );
            }
        }
        Ok(out)
    }

    /// Write a resumable checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let rec = |ts: &[[Tensor; 4]]| {
            ts.iter()
                .map(|a| a.iter().map(TensorRecord::from_tensor).collect())
                .collect()
        };
        let f = EnvironmentFile {
            lx: self.lx,
            ly: self.ly,
            chi: self.chi,
            corners: rec(&self.corners),
            edges: rec(&self.edges),
            report: self.report.clone(),
        };
        let s = serde_json::to_string(&f).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        let f: EnvironmentFile =
            serde_json::from_str(&s).map_err(|e| Error::Format(e.to_string()))?;
        let unrec = |v: &[Vec<TensorRecord>]| -> Result<Vec<[Tensor; 4]>> {
            v.iter()
                .map(|a| {
                    let ts = a
                        .iter()
                        .map(TensorRecord::to_tensor)
                        .collect::<Result<Vec<_>>>()?;
                    <[Tensor; 4]>::try_from(ts)
                        .map_err(|_| Error::Format("expected four tensors".into()))
                })
                .collect()
        };
        let corners = unrec(&f.corners)?;
        let edges = unrec(&f.edges)?;
        if corners.len() != f.lx * f.ly || edges.len() != f.lx * f.ly {
            return Err(Error::Format("tensor count disagrees with cell".into()));
        }
        Ok(Self {
            lx: f.lx,
            ly: f.ly,
            chi: f.chi,
            corners,
            edges,
            report: f.report,
        })
    }
}

/// Working copy of network and environment in a rotated frame.
struct Frame {
    lx: usize,
    ly: usize,
    sites: Vec<Tensor>,
    corners: Vec<[Tensor; 4]>,
    edges: Vec<[Tensor; 4]>,
}

impl Frame {
    fn index(&self, x: i64, y: i64) -> usize {
        wrap(y, self.ly) * self.lx + wrap(x, self.lx)
    }

    /// Rotate by 90° counter-clockwise: right becomes top.
    fn rotate(self) -> Result<Frame> {
        let (olx, oly) = (self.lx, self.ly);
        let (lx, ly) = (oly, olx);
        let mut sites = Vec::with_capacity(lx * ly);
        let mut corners = Vec::with_capacity(lx * ly);
        let mut edges = Vec::with_capacity(lx * ly);
        for yn in 0..ly {
            for xn in 0..lx {
                let old = wrap(-(yn as i64), olx) + xn * olx;
                sites.push(self.sites[old].permute(&[1, 2, 3, 0])?);
                let c = &self.corners[old];
                corners.push([c[1].clone(), c[2].clone(), c[3].clone(), c[0].clone()]);
                let e = &self.edges[old];
                edges.push([e[1].clone(), e[2].clone(), e[3].clone(), e[0].clone()]);
            }
        }
        Ok(Frame {
            lx,
            ly,
            sites,
            corners,
            edges,
        })
    }

    fn view(&self) -> View<'_> {
        View {
            lx: self.lx,
            ly: self.ly,
            sites: &self.sites,
            corners: &self.corners,
            edges: &self.edges,
        }
    }
}

#[derive(Clone, Copy)]
struct View<'a> {
    lx: usize,
    ly: usize,
    sites: &'a [Tensor],
    corners: &'a [[Tensor; 4]],
    edges: &'a [[Tensor; 4]],
}

impl View<'_> {
    fn index(&self, x: i64, y: i64) -> usize {
        wrap(y, self.ly) * self.lx + wrap(x, self.lx)
    }
    fn corner(&self, x: i64, y: i64, k: usize) -> &Tensor {
        &self.corners[self.index(x, y)][k]
    }
    fn edge(&self, x: i64, y: i64, k: usize) -> &Tensor {
        &self.edges[self.index(x, y)][k]
    }
}

const TL: usize = 0;
const TR: usize = 1;
const BR: usize = 2;
const BL: usize = 3;
const TOP: usize = 0;
const RIGHT: usize = 1;
const BOTTOM: usize = 2;
const LEFT: usize = 3;

/// Labeled pieces of a `w × h` patch with its surrounding environment.
struct Patch {
    corners: [Labeled; 4],
    top: Vec<Labeled>,
    right: Vec<Labeled>,
    bottom: Vec<Labeled>,
    left: Vec<Labeled>,
    /// Row-major, `sites[j * w + i]`.
    sites: Vec<Labeled>,
    w: usize,
    h: usize,
}

fn l(t: &Tensor, labels: &[String]) -> Labeled {
    Labeled::new(t.clone(), labels)
}

/// Label scheme: environment chain bonds `et{i}`, `er{j}`, `eb{i}`, `el{j}`;
/// site bonds `h{i}_{j}` (left of site i in row j) and `v{i}_{j}` (above site i
/// in row j); open physical legs `b{i}_{j}`, `c{i}_{j}`.
fn patch(
    v: View<'_>,
    x0: i64,
    y0: i64,
    w: usize,
    h: usize,
    site: &dyn Fn(usize, usize) -> Result<(Tensor, bool)>,
    kmap: &dyn Fn(&Tensor, usize) -> Result<Tensor>,
) -> Result<Patch> {
    let (wi, hi) = (w as i64, h as i64);
    let s = |x: String| x;
    let corners = [
        l(v.corner(x0, y0, TL), &[s("el0".into()), s("et0".into())]),
        l(
            v.corner(x0 + wi - 1, y0, TR),
            &[format!("et{w}"), s("er0".into())],
        ),
        l(
            v.corner(x0 + wi - 1, y0 + hi - 1, BR),
            &[format!("er{h}"), format!("eb{w}")],
        ),
        l(
            v.corner(x0, y0 + hi - 1, BL),
            &[s("eb0".into()), format!("el{h}")],
        ),
    ];
    let mut top = Vec::new();
    let mut bottom = Vec::new();
    for i in 0..w {
        let t = kmap(v.edge(x0 + i as i64, y0, TOP), 1)?;
        top.push(Labeled::new(
            t,
            &[format!("et{i}"), format!("v{i}_0"), format!("et{}", i + 1)],
        ));
        let t = kmap(v.edge(x0 + i as i64, y0 + hi - 1, BOTTOM), 1)?;
        bottom.push(Labeled::new(
            t,
            &[
                format!("eb{}", i + 1),
                format!("v{i}_{h}"),
                format!("eb{i}"),
            ],
        ));
    }
    let mut right = Vec::new();
    let mut left = Vec::new();
    for j in 0..h {
        let t = kmap(v.edge(x0 + wi - 1, y0 + j as i64, RIGHT), 1)?;
        right.push(Labeled::new(
            t,
            &[
                format!("er{j}"),
                format!("h{w}_{j}"),
                format!("er{}", j + 1),
            ],
        ));
        let t = kmap(v.edge(x0, y0 + j as i64, LEFT), 1)?;
        left.push(Labeled::new(
            t,
            &[format!("el{}", j + 1), format!("h0_{j}"), format!("el{j}")],
        ));
    }
    let mut sites = Vec::new();
    for j in 0..h {
        for i in 0..w {
            let (t, open) = site(i, j)?;
            let mut labels = Vec::new();
            if open {
                labels.push(format!("b{i}_{j}"));
                labels.push(format!("c{i}_{j}"));
            }
            labels.extend([
                format!("h{i}_{j}"),
                format!("v{i}_{j}"),
                format!("h{}_{j}", i + 1),
                format!("v{i}_{}", j + 1),
            ]);
            sites.push(Labeled::new(t, &labels));
        }
    }
    Ok(Patch {
        corners,
        top,
        right,
        bottom,
        left,
        sites,
        w,
        h,
    })
}

fn chain(items: Vec<&Labeled>) -> Result<Labeled> {
    let mut it = items.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty contraction".into()))?
        .clone();
    it.try_fold(first, |acc, x| acc.contract(x))
}

impl Patch {
    fn site(&self, i: usize, j: usize) -> &Labeled {
        &self.sites[j * self.w + i]
    }

    /// Enlarged corner made of the given corner, its two edges and the adjacent site.
    fn quadrant(&self, k: usize) -> Result<Labeled> {
        let (w, h) = (self.w, self.h);
        match k {
            TL => chain(vec![
                &self.corners[TL],
                &self.top[0],
                &self.left[0],
                self.site(0, 0),
            ]),
            TR => chain(vec![
                &self.corners[TR],
                &self.top[w - 1],
                &self.right[0],
                self.site(w - 1, 0),
            ]),
            BR => chain(vec![
                &self.corners[BR],
                &self.right[h - 1],
                &self.bottom[w - 1],
                self.site(w - 1, h - 1),
            ]),
            _ => chain(vec![
                &self.corners[BL],
                &self.bottom[0],
                &self.left[h - 1],
                self.site(0, h - 1),
            ]),
        }
    }

    /// Full contraction, ordered to keep intermediates small for the supported shapes.
    fn contract(&self) -> Result<Labeled> {
        match (self.w, self.h) {
            (1, 1) => chain(vec![
                &self.corners[TL],
                &self.top[0],
                &self.corners[TR],
                &self.left[0],
                &self.sites[0],
                &self.right[0],
                &self.corners[BL],
                &self.bottom[0],
                &self.corners[BR],
            ]),
            (2, 1) => {
                let left = chain(vec![
                    &self.corners[TL],
                    &self.top[0],
                    &self.left[0],
                    &self.sites[0],
                    &self.bottom[0],
                    &self.corners[BL],
                ])?;
                let right = chain(vec![
                    &self.corners[TR],
                    &self.top[1],
                    &self.right[0],
                    &self.sites[1],
                    &self.bottom[1],
                    &self.corners[BR],
                ])?;
                left.contract(&right)
            }
            (2, 2) => {
                let left = self.quadrant(TL)?.contract(&self.quadrant(BL)?)?;
                let right = self.quadrant(TR)?.contract(&self.quadrant(BR)?)?;
                left.contract(&right)
            }
            _ => {
                let mut items: Vec<&Labeled> = vec![&self.corners[TL]];
                items.extend(self.top.iter());
                items.push(&self.corners[TR]);
                for j in 0..self.h {
                    items.push(&self.left[j]);
                    items.extend(self.sites[j * self.w..(j + 1) * self.w].iter());
                    items.push(&self.right[j]);
                }
                items.push(&self.corners[BL]);
                items.extend(self.bottom.iter());
                items.push(&self.corners[BR]);
                chain(items)
            }
        }
    }
}

fn identity_kmap(t: &Tensor, _: usize) -> Result<Tensor> {
    Ok(t.clone())
}

fn closed_site(
    v: View<'_>,
    x0: i64,
    y0: i64,
) -> impl Fn(usize, usize) -> Result<(Tensor, bool)> + '_ {
    move |i, j| {
        Ok((
            v.sites[v.index(x0 + i as i64, y0 + j as i64)].clone(),
            false,
        ))
    }
}

fn scale_last(t: &Tensor, s: &[f64]) -> Result<Tensor> {
    let n = s.len();
    let d = Tensor::from_fn_real(vec![n, n], |ix| if ix[0] == ix[1] { s[ix[0]] } else { 0.0 });
    contract(t, &d, &[(t.rank() - 1, 0)])
}

struct Projectors {
    /// `[χ, D, c]` on the objects above the cut.
    up: Tensor,
    /// `[χ, D, c]` on the objects below the cut.
    down: Tensor,
    discarded: f64,
    split: bool,
}

fn projectors(v: View<'_>, x: i64, y: i64, p: &CtmParams) -> Result<Projectors> {
    let site = closed_site(v, x, y);
    let pt = patch(v, x, y, 2, 2, &site, &identity_kmap)?;
    let f = pt.quadrant(TL)?.contract(&pt.quadrant(TR)?)?;
    let g = pt
        .quadrant(BL)?
        .contract(&pt.quadrant(BR)?)?
        .relabel("er1", "er1'")
        .relabel("v1_1", "v1_1'");
    let n = f.contract(&g)?.ordered(&["er1", "v1_1", "er1'", "v1_1'"])?;
    let scale = n.max_abs();
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::NonFinite(format!(
            "half-system product at ({x},{y}) has scale {scale}"
        )));
    }
    let svd = svd_truncate(
        &n.scale_real(1.0 / scale),
        &[0, 1],
        &[2, 3],
        p.chi,
        p.rel_cutoff,
    )?;
    let inv: Vec<f64> = svd.s.iter().map(|s| 1.0 / s.sqrt()).collect();
    let vconj = Labeled::new(svd.v.conj(), &["c", "er1'", "v1_1'"]);
    let uconj = Labeled::new(svd.u.conj(), &["er1", "v1_1", "c"]);
    let up = scale_last(&g.contract(&vconj)?.ordered(&["el1", "v0_1", "c"])?, &inv)?;
    let down = scale_last(&f.contract(&uconj)?.ordered(&["el1", "v0_1", "c"])?, &inv)?;
    Ok(Projectors {
        up,
        down,
        discarded: svd.discarded_weight,
        split: svd.degeneracy_split,
    })
}

fn normalized(t: Tensor) -> Result<Tensor> {
    let m = t.max_abs();
    if !m.is_finite() {
        return Err(Error::NonFinite("environment tensor".into()));
    }
    Ok(if m > 0.0 { t.scale_real(1.0 / m) } else { t })
}

/// Absorb column `x` into the left environment of column `x + 1`.
fn left_move(fr: &mut Frame, x: i64, p: &CtmParams, stats: &mut (f64, usize)) -> Result<()> {
    let ly = fr.ly as i64;
    let mut proj = Vec::with_capacity(fr.ly);
    for y in 0..ly {
        let pr = projectors(fr.view(), x, y, p)?;
        stats.0 = stats.0.max(pr.discarded);
        stats.1 += pr.split as usize;
        proj.push(pr);
    }
    let mut updates = Vec::with_capacity(fr.ly);
    for y in 0..ly {
        let i = fr.index(x, y);
        let above = &proj[wrap(y - 1, fr.ly)];
        let here = &proj[y as usize];
        // C_tl[in, j] T_top[j, k, o] -> [in, k, o]
        let ct = contract(&fr.corners[i][TL], &fr.edges[i][TOP], &[(1, 0)])?;
        let c_tl = contract(&above.up, &ct, &[(0, 0), (1, 1)])?; // [c, o]
                                                                 // T_bottom[ti, k, to] C_bl[to, u] -> [ti, k, u]
        let bc = contract(&fr.edges[i][BOTTOM], &fr.corners[i][BL], &[(2, 0)])?;
        let c_bl = contract(&bc, &here.down, &[(2, 0), (1, 1)])?; // [ti, c]
                                                                  // T_left[ti, k, to] a[k, u, r, d] -> [ti, to, u, r, d]
        let ta = contract(&fr.edges[i][LEFT], &fr.sites[i], &[(1, 0)])?;
        let t = contract(&here.up, &ta, &[(0, 0), (1, 4)])?; // [c_in, to, u, r]
        let t_left = contract(&t, &above.down, &[(1, 0), (2, 1)])?; // [c_in, r, c_out]
        updates.push((normalized(c_tl)?, normalized(c_bl)?, normalized(t_left)?));
    }
    for (y, (c_tl, c_bl, t_left)) in updates.into_iter().enumerate() {
        let j = fr.index(x + 1, y as i64);
        fr.corners[j][TL] = c_tl;
        fr.corners[j][BL] = c_bl;
        fr.edges[j][LEFT] = t_left;
    }
    Ok(())
}

fn trace_legs(a: &Tensor, legs: &[(usize, &Tensor)], keep: &[usize]) -> Result<Tensor> {
    // Contract each listed leg with its boundary vector, then order the rest as `keep`.
    let mut t = a.clone();
    let mut remaining: Vec<usize> = (0..a.rank()).collect();
    for &(leg, b) in legs {
        let pos = remaining
            .iter()
            .position(|&r| r == leg)
            .expect("leg present");
        t = contract(&t, b, &[(pos, 0)])?;
        remaining.remove(pos);
    }
    let perm: Vec<usize> = keep
        .iter()
        .map(|k| remaining.iter().position(|r| r == k).expect("kept leg"))
        .collect();
    t.permute(&perm)
}

/// Environment seeded from neighbor tensors with their outward legs traced against the boundary vectors.
pub fn initial_environment(net: &Network, chi: usize) -> Result<CtmEnvironment> {
    let mut corners = Vec::with_capacity(net.lx * net.ly);
    let mut edges = Vec::with_capacity(net.lx * net.ly);
    for y in 0..net.ly as i64 {
        for x in 0..net.lx as i64 {
            let at = |dx: i64, dy: i64| {
                let i = net.index(x + dx, y + dy);
                (&net.tensors[i], &net.boundary[i])
            };
            let (a, b) = at(-1, -1);
            let c_tl = trace_legs(a, &[(0, &b[0]), (1, &b[1])], &[3, 2])?;
            let (a, b) = at(1, -1);
            let c_tr = trace_legs(a, &[(1, &b[1]), (2, &b[2])], &[0, 3])?;
            let (a, b) = at(1, 1);
            let c_br = trace_legs(a, &[(2, &b[2]), (3, &b[3])], &[1, 0])?;
            let (a, b) = at(-1, 1);
            let c_bl = trace_legs(a, &[(0, &b[0]), (3, &b[3])], &[2, 1])?;
            let (a, b) = at(0, -1);
            let t_top = trace_legs(a, &[(1, &b[1])], &[0, 3, 2])?;
            let (a, b) = at(1, 0);
            let t_right = trace_legs(a, &[(2, &b[2])], &[1, 0, 3])?;
            let (a, b) = at(0, 1);
            let t_bottom = trace_legs(a, &[(3, &b[3])], &[2, 1, 0])?;
            let (a, b) = at(-1, 0);
            let t_left = trace_legs(a, &[(0, &b[0])], &[3, 2, 1])?;
            corners.push([c_tl, c_tr, c_br, c_bl].map(|t| normalized(t).expect("finite network")));
            edges.push(
                [t_top, t_right, t_bottom, t_left].map(|t| normalized(t).expect("finite network")),
            );
        }
    }
    Ok(CtmEnvironment {
        lx: net.lx,
        ly: net.ly,
        chi,
        corners,
        edges,
        report: ConvergenceReport::default(),
    })
}

fn spectrum_drift(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    // Compared as corner density-matrix spectra s²/Σs²; entries near the projector
    // cutoff carry roundoff-level noise, which this weighting suppresses.
    let density = |v: &[f64]| {
        let n: f64 = v.iter().map(|x| x * x).sum();
        v.iter()
            .map(|x| if n > 0.0 { x * x / n } else { 0.0 })
            .collect::<Vec<_>>()
    };
    let mut d: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        // Entries can appear and vanish at the cutoff between sweeps; only the common part is compared.
        for (p, q) in density(x).iter().zip(&density(y)) {
            d = d.max((p - q).abs());
        }
    }
    d
}

/// Iterate directional moves until the corner spectra settle.
///
/// Starts from `warm` when given (it must belong to a network of the same cell
/// shape), else from [`initial_environment`]. Reaching `max_iter` is reported
/// in the result, not treated as an error.
pub fn converge_environment(
    net: &Network,
    p: &CtmParams,
    warm: Option<&CtmEnvironment>,
) -> Result<CtmEnvironment> {
    if p.chi == 0 || p.tol.is_nan() || p.tol <= 0.0 {
        return Err(Error::InvalidArgument(
            "chi and tol must be positive".into(),
        ));
    }
    let start = match warm {
        Some(e) if e.lx == net.lx && e.ly == net.ly => e.clone(),
        Some(_) => {
            return Err(Error::ExtentMismatch(
                "warm start from a different cell".into(),
            ))
        }
        None => initial_environment(net, p.chi)?,
    };
    let mut fr = Frame {
        lx: net.lx,
        ly: net.ly,
        sites: net.tensors.clone(),
        corners: start.corners,
        edges: start.edges,
    };
    let mut prev = CtmEnvironment {
        lx: fr.lx,
        ly: fr.ly,
        chi: p.chi,
        corners: fr.corners.clone(),
        edges: Vec::new(),
        report: ConvergenceReport::default(),
    }
    .corner_spectra()?;
    let mut report = ConvergenceReport::default();
    let mut splits = 0usize;
    for sweep in 1..=p.max_iter {
        let mut stats = (0.0f64, 0usize);
        for _ in 0..4 {
            for x in 0..fr.lx as i64 {
                left_move(&mut fr, x, p, &mut stats).map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("sweep {sweep}: {m}")),
                    other => other,
                })?;
            }
            fr = fr.rotate()?;
        }
        splits += stats.1;
        let snapshot = CtmEnvironment {
            lx: fr.lx,
            ly: fr.ly,
            chi: p.chi,
            corners: fr.corners.clone(),
            edges: Vec::new(),
            report: ConvergenceReport::default(),
        };
        let spectra = snapshot.corner_spectra()?;
        let drift = spectrum_drift(&spectra, &prev);
        prev = spectra;
        report.iterations = sweep;
        report.drift = drift;
        report.discarded_weight = stats.0;
        report.recent_drift.push(drift);
        if report.recent_drift.len() > 10 {
            report.recent_drift.remove(0);
        }
        if drift < p.tol {
            report.converged = true;
            break;
        }
    }
    report.degeneracy_splits = splits;
    Ok(CtmEnvironment {
        lx: fr.lx,
        ly: fr.ly,
        chi: p.chi,
        corners: fr.corners,
        edges: fr.edges,
        report,
    })
}

/// `conj(u) ⊗ 𝟙 ⊗ u` acting on a bundled leg of dimension `n`.
fn bundled_symmetry(u: &Tensor, n: usize) -> Result<Tensor> {
    let dv = u.shape()[0];
    if u.rank() != 2 || u.shape()[1] != dv || !n.is_multiple_of(dv * dv) {
        return Err(Error::ExtentMismatch(format!(
            "symmetry {:?} on a leg of dimension {n}",
            u.shape()
        )));
    }
    let dop = n / (dv * dv);
    let uc = u.conj();
    let mut m = Tensor::from_fn_complex(vec![n, n], |ix| {
        let (b1, o1, k1) = (ix[0] / (dop * dv), (ix[0] / dv) % dop, ix[0] % dv);
        let (b2, o2, k2) = (ix[1] / (dop * dv), (ix[1] / dv) % dop, ix[1] % dv);
        if o1 != o2 {
            return C64::new(0.0, 0.0);
        }
        uc.get(&[b1, b2]) * u.get(&[k1, k2])
    });
    if u.is_real() {
        m = m.compact();
    }
    Ok(m)
}

/// Reduced matrix `ρ` of a `w × h` patch with top-left site `(x0, y0)`:
/// `Tr(ρ · o) = ⟨o⟩` for operators `o` on the patch sites in row-major order.
///
/// For a network of `⟨Ψ|G|Ψ⟩` this is the matrix `M` with
/// `Tr(M · o) = ⟨Ψ|G o|Ψ⟩ / ⟨Ψ|G|Ψ⟩`. With `symmetrize = Some(u)`, the
/// environment is averaged with its image under the involutive virtual
/// symmetry `u` (numerators and norms summed separately).
pub fn patch_matrix(
    env: &CtmEnvironment,
    net: &Network,
    x0: i64,
    y0: i64,
    w: usize,
    h: usize,
    symmetrize: Option<&Tensor>,
) -> Result<Mat<C64>> {
    if env.lx != net.lx || env.ly != net.ly {
        return Err(Error::ExtentMismatch(
            "environment and network cells differ".into(),
        ));
    }
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("empty patch".into()));
    }
    let v = View {
        lx: env.lx,
        ly: env.ly,
        sites: &net.tensors,
        corners: &env.corners,
        edges: &env.edges,
    };
    let site = |i: usize, j: usize| {
        Ok((
            net.open[net.index(x0 + i as i64, y0 + j as i64)].clone(),
            true,
        ))
    };
    let mut b_order = Vec::new();
    let mut c_order = Vec::new();
    let mut dims = Vec::new();
    for j in 0..h {
        for i in 0..w {
            b_order.push(format!("b{i}_{j}"));
            c_order.push(format!("c{i}_{j}"));
            dims.push(net.open[net.index(x0 + i as i64, y0 + j as i64)].shape()[0]);
        }
    }
    let n: usize = dims.iter().product();
    let order: Vec<String> = b_order.iter().chain(&c_order).cloned().collect();
    let eval = |kmap: &dyn Fn(&Tensor, usize) -> Result<Tensor>| -> Result<Vec<C64>> {
        let pt = patch(v, x0, y0, w, h, &site, kmap)?;
        Ok(pt.contract()?.ordered(&order)?.to_complex_vec())
    };
    let mut r = eval(&identity_kmap)?;
    if let Some(u) = symmetrize {
        let sym = |t: &Tensor, leg: usize| -> Result<Tensor> {
            let ub = bundled_symmetry(u, t.shape()[leg])?;
            contract(t, &ub, &[(leg, 1)])?.permute(&[0, 2, 1])
        };
        let r2 = eval(&sym)?;
        for (a, b) in r.iter_mut().zip(r2) {
            *a += b;
        }
    }
    let norm: C64 = (0..n).map(|i| r[i * n + i]).sum();
    if !(norm.norm().is_finite() && norm.norm() > 0.0) {
        return Err(Error::Decomposition(format!("patch norm {norm}")));
    }
    // r is indexed [b, c]; ρ[c, b] = r[b, c] / norm.
    Ok(Mat::from_fn(n, n, |c, b| r[b * n + c] / norm))
}

/// `⟨o⟩` at a single cell position.
pub fn local_expectation(
    env: &CtmEnvironment,
    net: &Network,
    x: i64,
    y: i64,
    op: &Mat<C64>,
    symmetrize: Option<&Tensor>,
) -> Result<C64> {
    let rho = patch_matrix(env, net, x, y, 1, 1, symmetrize)?;
    if op.nrows() != rho.nrows() || op.ncols() != rho.ncols() {
        return Err(Error::ExtentMismatch("operator dimension".into()));
    }
    Ok(trace_product(&rho, op))
}

/// `Tr(a · b)`.
pub fn trace_product(a: &Mat<C64>, b: &Mat<C64>) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}
