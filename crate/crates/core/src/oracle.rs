//! Exact finite-torus backend: statevectors, reduced density matrices,
//! structure factors, sparse global operators and their spectra.

use crate::basis::{product_coefficients, site_operators, EdgeOperator, Momentum, OperatorBasis};
use crate::error::{Error, Result};
use crate::extraction::{Provenance, StructureFactorMatrix};
use crate::models::{EdgeLattice, FiniteTorus, PepsUnitCell};
use crate::tensor::{contract, eigh_complex_mat, eigh_real_mat, outer, Labeled, Tensor};
use faer::Mat;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest statevector dimension handled by the oracle.
pub const MAX_STATE_DIM: usize = 1 << 22;
/// Largest intermediate tensor (in elements) allowed during contraction.
const MAX_INTERMEDIATE: usize = 1 << 26;

fn check_budget(len: usize, what: &str) -> Result<()> {
    if len > MAX_INTERMEDIATE {
        Err(Error::Budget(format!("{what} needs {len} elements")))
    } else {
        Ok(())
    }
}

/// Row tensor `R[p, up, down]` of row `y` with the horizontal ring closed.
fn row_tensor(peps: &PepsUnitCell, torus: &FiniteTorus, y: i64) -> Result<Tensor> {
    let lx = torus.lx;
    let mut acc: Option<Labeled> = None;
    for x in 0..lx as i64 {
        let left = if lx == 1 {
            "hl".to_string()
        } else {
            format!("h{}", (x - 1).rem_euclid(lx as i64))
        };
        let right = if lx == 1 {
            "hr".to_string()
        } else {
            format!("h{x}")
        };
        let t = Labeled::new(
            peps.site(x, y).clone(),
            &[
                format!("p{x}"),
                left,
                format!("u{x}"),
                right,
                format!("d{x}"),
            ],
        );
        acc = Some(match acc {
            None => t,
            Some(a) => a.contract(&t)?,
        });
        check_budget(acc.as_ref().map_or(0, |a| a.t.len()), "row tensor")?;
    }
    let mut acc = acc.expect("lx > 0");
    if lx == 1 {
        acc = acc.trace_labels(&[("hl", "hr")])?;
    }
    let order: Vec<String> = ["p", "u", "d"]
        .iter()
        .flat_map(|k| (0..lx).map(move |x| format!("{k}{x}")))
        .collect();
    let t = acc.ordered(&order)?;
    let p: usize = t.shape()[..lx].iter().product();
    let u: usize = t.shape()[lx..2 * lx].iter().product();
    let d: usize = t.shape()[2 * lx..].iter().product();
    t.reshape(vec![p, u, d])
}

/// Product of row tensors `ys` as `[p, top, bottom]`.
fn row_chain(peps: &PepsUnitCell, torus: &FiniteTorus, ys: std::ops::Range<i64>) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for y in ys {
        let r = row_tensor(peps, torus, y)?;
        acc = Some(match acc {
            None => r,
            Some(a) => {
                check_budget(
                    a.shape()[0] * r.shape()[0] * a.shape()[1] * r.shape()[2],
                    "row chain",
                )?;
                let c = contract(&a, &r, &[(2, 1)])?; // pA, top, p, bottom
                let c = c.permute(&[0, 2, 1, 3])?;
                let s = c.shape().to_vec();
                c.reshape(vec![s[0] * s[1], s[2], s[3]])?
            }
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("empty row range".into()))
}

/// Amplitudes of the PEPS on a periodic torus, site 0 most significant.
pub fn contract_torus_statevector(peps: &PepsUnitCell, torus: &FiniteTorus) -> Result<Vec<C64>> {
    if torus.d != peps.d {
        return Err(Error::ExtentMismatch(format!(
            "torus d = {}, PEPS d = {}",
            torus.d, peps.d
        )));
    }
    let dim = torus.dim()?;
    if dim > MAX_STATE_DIM {
        return Err(Error::Budget(format!(
            "statevector dimension {dim} exceeds {MAX_STATE_DIM}"
        )));
    }
    let ly = torus.ly as i64;
    let psi = if ly == 1 {
        row_chain(peps, torus, 0..1)?.trace(&[(1, 2)])?
    } else {
        let half = ly / 2;
        let a = row_chain(peps, torus, 0..half)?;
        let b = row_chain(peps, torus, half..ly)?;
        contract(&a, &b, &[(1, 2), (2, 1)])?
    };
    let v = psi.to_complex_vec();
    debug_assert_eq!(v.len(), dim);
    Ok(v)
}

/// Reduced density matrix of `sites` (in the given order) from a statevector.
pub fn rdm_from_statevector(psi: &[C64], torus: &FiniteTorus, sites: &[usize]) -> Result<Mat<C64>> {
    let n = torus.n_sites();
    let d = torus.d;
    if psi.len() != torus.dim()? {
        return Err(Error::ExtentMismatch("statevector length".into()));
    }
    for (i, &s) in sites.iter().enumerate() {
        if s >= n || sites[..i].contains(&s) {
            return Err(Error::InvalidArgument(format!("bad site list {sites:?}")));
        }
    }
    let m = sites.len();
    let dm = d.pow(m as u32);
    let rest: Vec<usize> = (0..n).filter(|s| !sites.contains(s)).collect();
    let dr = d.pow(rest.len() as u32);
    let weight = |s: usize| d.pow((n - 1 - s) as u32);
    let sw: Vec<usize> = sites.iter().map(|&s| weight(s)).collect();
    let rw: Vec<usize> = rest.iter().map(|&s| weight(s)).collect();
    let offsets = |ws: &[usize], count: usize| -> Vec<usize> {
        (0..count)
            .map(|mut i| {
                let mut off = 0;
                for w in ws.iter().rev() {
                    off += (i % d) * w;
                    i /= d;
                }
                off
            })
            .collect()
    };
    let so = offsets(&sw, dm);
    let ro = offsets(&rw, dr);
    let a = Mat::<C64>::from_fn(dm, dr, |i, j| psi[so[i] + ro[j]]);
    let rho = &a * a.adjoint();
    normalize_rdm(rho)
}

fn normalize_rdm(rho: Mat<C64>) -> Result<Mat<C64>> {
    let n = rho.nrows();
    let tr: C64 = (0..n).map(|i| rho[(i, i)]).sum();
    if tr.norm() == 0.0 || !tr.re.is_finite() {
        return Err(Error::NonFinite("zero-norm state".into()));
    }
    Ok(Mat::from_fn(n, n, |i, j| {
        (rho[(i, j)] + rho[(j, i)].conj()) / (2.0 * tr.re)
    }))
}

fn double_tensor(t: &Tensor, open: bool) -> Result<Tensor> {
    let s = t.shape().to_vec();
    let (l, u, r, d) = (s[1], s[2], s[3], s[4]);
    if open {
        // k, l, u, r, d, b, l', u', r', d'
        let o = outer(t, &t.conj());
        let o = o.permute(&[0, 5, 1, 6, 2, 7, 3, 8, 4, 9])?;
        o.reshape(vec![s[0], s[0], l * l, u * u, r * r, d * d])
    } else {
        let c = contract(t, &t.conj(), &[(0, 0)])?;
        let c = c.permute(&[0, 4, 1, 5, 2, 6, 3, 7])?;
        c.reshape(vec![l * l, u * u, r * r, d * d])
    }
}

/// Order `0..len` cyclically so that marked positions come last.
fn marked_last(len: usize, marked: &[usize]) -> Vec<usize> {
    if marked.is_empty() {
        return (0..len).collect();
    }
    // Start right after the marked position followed by the longest unmarked run.
    let mut best = (0, marked[0]);
    for &m in marked {
        let run = (1..=len)
            .take_while(|k| !marked.contains(&((m + k) % len)))
            .count();
        if run > best.0 {
            best = (run, m);
        }
    }
    (1..=len).map(|k| (best.1 + k) % len).collect()
}

/// Ket row `y` as a `(k, pc) × (u, dn)` matrix, with the physical legs of
/// `open` columns (in that order) forming `k` and the rest forming `pc`.
fn split_row(
    peps: &PepsUnitCell,
    torus: &FiniteTorus,
    y: i64,
    open: &[usize],
) -> Result<(Mat<C64>, usize, usize, usize)> {
    let t = row_tensor(peps, torus, y)?;
    let (p, u, dn) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let (d, lx) = (torus.d, torus.lx);
    let closed: Vec<usize> = (0..lx).filter(|x| !open.contains(x)).collect();
    let k = d.pow(open.len() as u32);
    let pc = d.pow(closed.len() as u32);
    let v = t.to_complex_vec();
    let digit_weight = |x: usize| d.pow((lx - 1 - x) as u32);
    let offset = |cols: &[usize], mut i: usize| {
        let mut off = 0;
        for &x in cols.iter().rev() {
            off += (i % d) * digit_weight(x);
            i /= d;
        }
        off
    };
    let ko: Vec<usize> = (0..k).map(|i| offset(open, i)).collect();
    let co: Vec<usize> = (0..pc).map(|i| offset(&closed, i)).collect();
    debug_assert_eq!(k * pc, p);
    let m = Mat::<C64>::from_fn(k * pc, u * dn, |r, c| {
        v[(ko[r / pc] + co[r % pc]) * u * dn + c]
    });
    Ok((m, k, pc, u))
}

/// `Σ_p R[p, u, dn] conj R[p, u', dn']` as a `(u u') × (dn dn')` matrix from a `p × (u dn)` block.
fn pair_transfer(a: faer::MatRef<'_, C64>, u: usize) -> Mat<C64> {
    let dn = a.ncols() / u;
    let g = a.transpose() * a.conjugate();
    Mat::from_fn(u * u, dn * dn, |r, c| {
        g[((r / u) * dn + c / dn, (r % u) * dn + c % dn)]
    })
}

/// Closed double-layer transfer matrices of rows `ys`, multiplied in order.
fn closed_rows(
    peps: &PepsUnitCell,
    torus: &FiniteTorus,
    ys: &[i64],
    dim: usize,
) -> Result<Mat<C64>> {
    let mut acc = Mat::<C64>::identity(dim, dim);
    for &y in ys {
        let (r, _, _, u) = split_row(peps, torus, y, &[])?;
        acc = &acc * pair_transfer(r.as_ref(), u);
        let mx = acc.norm_max();
        if mx > 0.0 {
            acc *= faer::Scale(C64::new(1.0 / mx, 0.0));
        }
    }
    Ok(acc)
}

/// `Σ_pc R[k, pc, ·] ⊗ conj R[b, pc, ·]` for every `(k, b)`, each multiplied by `env` on the right.
fn open_row_blocks(r: &Mat<C64>, k: usize, pc: usize, u: usize, env: &Mat<C64>) -> Vec<Mat<C64>> {
    let mut out = Vec::with_capacity(k * k);
    for a in 0..k {
        for b in 0..k {
            let ra = r.subrows(a * pc, pc);
            let rb = r.subrows(b * pc, pc);
            let dn = r.ncols() / u;
            let g = ra.transpose() * rb.conjugate();
            let f = Mat::<C64>::from_fn(u * u, dn * dn, |i, j| {
                g[((i / u) * dn + j / dn, (i % u) * dn + j % dn)]
            });
            out.push(&f * env);
        }
    }
    out
}

/// RDM of sites lying in at most two rows, by products of row transfer matrices.
fn rdm_by_rows(
    peps: &PepsUnitCell,
    torus: &FiniteTorus,
    sites: &[usize],
) -> Result<Option<Mat<C64>>> {
    let coords: Vec<(i64, i64)> = sites.iter().map(|&s| torus.coords(s)).collect();
    let mut rows: Vec<i64> = coords.iter().map(|c| c.1).collect();
    rows.sort();
    rows.dedup();
    if rows.len() > 2 {
        return Ok(None);
    }
    let ly = torus.ly as i64;
    let open_in = |y: i64| -> Vec<usize> {
        coords
            .iter()
            .filter(|c| c.1 == y)
            .map(|c| c.0 as usize)
            .collect()
    };
    let between = |from: i64, to: i64| -> Vec<i64> {
        let mut v = Vec::new();
        let mut y = (from + 1).rem_euclid(ly);
        while y != to {
            v.push(y);
            y = (y + 1).rem_euclid(ly);
        }
        v
    };
    let d = torus.d;
    // Site order produced below: open sites of the first row, then of the second.
    let produced: Vec<(i64, i64)> = rows
        .iter()
        .flat_map(|&y| open_in(y).into_iter().map(move |x| (x as i64, y)))
        .collect();
    let m = sites.len();
    let dm = d.pow(m as u32);
    let rho = if rows.len() == 1 {
        let y = rows[0];
        let (r, k, pc, u) = split_row(peps, torus, y, &open_in(y))?;
        let dn = r.ncols() / u;
        check_budget(r.nrows() * r.ncols(), "open row")?;
        // env: (dn dn') × (u u') from the other rows.
        let env = closed_rows(peps, torus, &between(y, y), dn * dn)?;
        let w = Mat::<C64>::from_fn(u * dn, u * dn, |i, j| {
            env[((i % dn) * dn + j % dn, (i / dn) * u + j / dn)]
        });
        let z = &r * &w;
        let zr = Mat::<C64>::from_fn(k, pc * u * dn, |a, c| {
            z[(a * pc + c / (u * dn), c % (u * dn))]
        });
        let rr = Mat::<C64>::from_fn(k, pc * u * dn, |a, c| {
            r[(a * pc + c / (u * dn), c % (u * dn))]
        });
        zr * rr.adjoint()
    } else {
        let (y1, y2) = (rows[0], rows[1]);
        let (r1, k1, pc1, u1) = split_row(peps, torus, y1, &open_in(y1))?;
        let (r2, k2, pc2, u2) = split_row(peps, torus, y2, &open_in(y2))?;
        let (big1, big2) = (u1 * u1, u2 * u2);
        if check_budget(k1.max(k2).pow(2) * big1 * big2, "open row blocks").is_err() {
            return Ok(None);
        }
        let env_a = closed_rows(peps, torus, &between(y1, y2), big2)?;
        let env_b = closed_rows(peps, torus, &between(y2, y1), big1)?;
        let g_blocks = open_row_blocks(&r1, k1, pc1, u1, &env_a);
        let g = Mat::<C64>::from_fn(k1 * k1, big1 * big2, |kb, c| {
            g_blocks[kb][(c / big2, c % big2)]
        });
        drop(g_blocks);
        let h_blocks = open_row_blocks(&r2, k2, pc2, u2, &env_b);
        let h = Mat::<C64>::from_fn(big1 * big2, k2 * k2, |c, kb| {
            h_blocks[kb][(c % big2, c / big2)]
        });
        drop(h_blocks);
        let big = &g * &h;
        // big[(k1 b1), (k2 b2)] → rho[(k1 k2), (b1 b2)].
        Mat::<C64>::from_fn(k1 * k2, k1 * k2, |i, j| {
            let (a1, a2) = (i / k2, i % k2);
            let (b1, b2) = (j / k2, j % k2);
            big[(a1 * k1 + b1, a2 * k2 + b2)]
        })
    };
    // Reorder produced digits into the requested site order.
    let pos: Vec<usize> = coords
        .iter()
        .map(|c| produced.iter().position(|p| p == c).expect("open site"))
        .collect();
    let src = |mut i: usize| {
        let mut digits = vec![0usize; m];
        for s in (0..m).rev() {
            digits[pos[s]] = i % d;
            i /= d;
        }
        digits.iter().fold(0, |acc, &x| acc * d + x)
    };
    let map: Vec<usize> = (0..dm).map(src).collect();
    Ok(Some(normalize_rdm(Mat::from_fn(dm, dm, |i, j| {
        rho[(map[i], map[j])]
    }))?))
}

/// Reduced density matrix of up to four sites by double-layer contraction of the torus.
///
/// Sites in one or two rows go through row transfer matrices; others through
/// a site-by-site sweep.
pub fn rdm_on_support(
    peps: &PepsUnitCell,
    torus: &FiniteTorus,
    sites: &[usize],
) -> Result<Mat<C64>> {
    if sites.len() > 4 {
        return Err(Error::Budget(format!(
            "{} open sites exceed the limit of 4",
            sites.len()
        )));
    }
    if torus.lx < 2 || torus.ly < 2 || torus.lx > 6 || torus.ly > 6 {
        return Err(Error::InvalidArgument(
            "double-layer contraction needs a torus between 2x2 and 6x6".into(),
        ));
    }
    if torus.d != peps.d {
        return Err(Error::ExtentMismatch("physical dimension".into()));
    }
    for (i, &s) in sites.iter().enumerate() {
        if s >= torus.n_sites() || sites[..i].contains(&s) {
            return Err(Error::InvalidArgument(format!("bad site list {sites:?}")));
        }
    }
    if let Some(rho) = rdm_by_rows(peps, torus, sites)? {
        return Ok(rho);
    }
    let (lx, ly) = (torus.lx, torus.ly);
    let coords: Vec<(i64, i64)> = sites.iter().map(|&s| torus.coords(s)).collect();
    let open_rows: Vec<usize> = {
        let mut r: Vec<usize> = coords.iter().map(|c| c.1 as usize).collect();
        r.sort();
        r.dedup();
        r
    };
    let mut state: Option<Labeled> = None;
    for y in marked_last(ly, &open_rows) {
        let open_cols: Vec<usize> = coords
            .iter()
            .filter(|c| c.1 as usize == y)
            .map(|c| c.0 as usize)
            .collect();
        for x in marked_last(lx, &open_cols) {
            let (xi, yi) = (x as i64, y as i64);
            let bonds = [
                format!("h{}_{y}", (xi - 1).rem_euclid(lx as i64)),
                format!("v{x}_{}", (yi - 1).rem_euclid(ly as i64)),
                format!("h{x}_{y}"),
                format!("v{x}_{y}"),
            ];
            let t = peps.site(xi, yi);
            let lab = match coords.iter().position(|&c| c == (xi, yi)) {
                Some(k) => {
                    let mut l = vec![format!("k{k}"), format!("b{k}")];
                    l.extend(bonds.iter().cloned());
                    Labeled::new(double_tensor(t, true)?, &l)
                }
                None => Labeled::new(double_tensor(t, false)?, &bonds),
            };
            let next = match state {
                None => lab,
                Some(s) => s.contract(&lab)?,
            };
            check_budget(next.t.len(), "double-layer contraction")?;
            // Keep the scale bounded.
            let mx = next.t.max_abs();
            state = Some(if mx > 0.0 {
                Labeled {
                    t: next.t.scale_real(1.0 / mx),
                    labels: next.labels,
                }
            } else {
                next
            });
        }
    }
    let state = state.expect("non-empty torus");
    let m = sites.len();
    let order: Vec<String> = (0..m)
        .map(|k| format!("k{k}"))
        .chain((0..m).map(|k| format!("b{k}")))
        .collect();
    let t = state.ordered(&order)?;
    let dm = torus.d.pow(m as u32);
    let v = t.to_complex_vec();
    normalize_rdm(Mat::from_fn(dm, dm, |i, j| v[i * dm + j]))
}

/// Where reduced density matrices come from.
#[derive(Clone, Copy)]
pub enum StateSource<'a> {
    Statevector {
        psi: &'a [C64],
        torus: FiniteTorus,
    },
    DoubleLayer {
        peps: &'a PepsUnitCell,
        torus: FiniteTorus,
    },
}

impl StateSource<'_> {
    pub fn torus(&self) -> FiniteTorus {
        match self {
            StateSource::Statevector { torus, .. } | StateSource::DoubleLayer { torus, .. } => {
                *torus
            }
        }
    }

    pub fn rdm(&self, sites: &[usize]) -> Result<Mat<C64>> {
        match self {
            StateSource::Statevector { psi, torus } => rdm_from_statevector(psi, torus, sites),
            StateSource::DoubleLayer { peps, torus } => rdm_on_support(peps, torus, sites),
        }
    }
}

/// Structure constants `f[a, b, c] = Tr(o_c o_a o_b)` of the site basis.
fn structure_constants(d: usize) -> Result<Tensor> {
    let ops = site_operators(d)?;
    let n = d * d;
    let prods: Vec<Mat<C64>> = (0..n * n)
        .map(|ab| &ops[ab / n].1 * &ops[ab % n].1)
        .collect();
    Ok(Tensor::from_fn_complex(vec![n, n, n], |ix| {
        let p = &prods[ix[0] * n + ix[1]];
        let c = &ops[ix[2]].1;
        let mut s = C64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                s += c[(i, j)] * p[(j, i)];
            }
        }
        s
    }))
}

/// `S_{αβ}(q) = Σ_x e^{-iq·x} (⟨o^α_x o^β_0⟩ − ⟨o^α_x⟩⟨o^β_0⟩)` on a finite torus.
///
/// For each displacement the reduced density matrix of the merged support is
/// expanded in the product basis, and overlapping sites are resolved with the
/// site-basis structure constants.
pub fn exact_structure_factor(
    source: &StateSource<'_>,
    basis: &OperatorBasis,
    q: &Momentum,
) -> Result<StructureFactorMatrix> {
    let torus = source.torus();
    let g = &basis.geometry;
    let d = g.d;
    if torus.d != d {
        return Err(Error::ExtentMismatch(
            "basis and torus dimensions differ".into(),
        ));
    }
    if !q.fits_torus(torus.lx, torus.ly) {
        return Err(Error::InvalidArgument(format!(
            "momentum {} incommensurate with {}x{} torus",
            q.label(),
            torus.lx,
            torus.ly
        )));
    }
    let k = g.k();
    let nb = g.product_len();
    let place = |t: (i64, i64)| -> Vec<usize> {
        g.offsets
            .iter()
            .map(|&(ox, oy)| torus.site(ox + t.0, oy + t.1))
            .collect()
    };
    let origin = place((0, 0));
    {
        let mut u = origin.clone();
        u.sort();
        u.dedup();
        if u.len() != k {
            return Err(Error::InvalidArgument(
                "support wraps onto itself on this torus".into(),
            ));
        }
    }
    let fabc = structure_constants(d)?;
    let mut s = Mat::<C64>::zeros(nb, nb);
    for y in 0..torus.ly as i64 {
        for x in 0..torus.lx as i64 {
            let shifted = place((x, y));
            let mut merged = shifted.clone();
            for &o in &origin {
                if !merged.contains(&o) {
                    merged.push(o);
                }
            }
            let m = merged.len();
            check_budget((d * d).pow(m as u32), "merged-support coefficients")?;
            let rho = source.rdm(&merged)?;
            let coef = product_coefficients(&rho, d, m)?;
            let mut lab = Labeled::new(
                Tensor::from_complex_raw(vec![d * d; m], coef)?,
                &(0..m).map(|s| format!("l{s}")).collect::<Vec<_>>(),
            );
            // One-point values ⟨o^α_x⟩: identity on the other merged sites.
            let id_scale = (d as f64).sqrt().powi((m - k) as i32);
            for (pos, site) in merged.iter().enumerate() {
                let in_x = shifted.contains(site);
                let in_0 = origin.contains(site);
                match (in_x, in_0) {
                    (true, true) => {
                        let f = Labeled::new(
                            fabc.clone(),
                            &[format!("a{pos}"), format!("b{pos}"), format!("l{pos}")],
                        );
                        lab = lab.contract(&f)?;
                    }
                    (true, false) => lab = lab.relabel(&format!("l{pos}"), &format!("a{pos}")),
                    (false, true) => lab = lab.relabel(&format!("l{pos}"), &format!("b{pos}")),
                    (false, false) => unreachable!("merged support"),
                }
            }
            let a_order: Vec<String> = shifted
                .iter()
                .map(|s| format!("a{}", merged.iter().position(|t| t == s).unwrap()))
                .collect();
            let b_order: Vec<String> = origin
                .iter()
                .map(|s| format!("b{}", merged.iter().position(|t| t == s).unwrap()))
                .collect();
            let joint = lab.ordered(&[a_order, b_order].concat())?.to_complex_vec();
            // ⟨o^α_x⟩ and ⟨o^β_0⟩ from the same merged RDM.
            let one_point = |sites: &[usize]| -> Result<Vec<C64>> {
                let mut c = Labeled::new(
                    Tensor::from_complex_raw(vec![d * d; m], product_coefficients(&rho, d, m)?)?,
                    &(0..m).map(|s| format!("l{s}")).collect::<Vec<_>>(),
                );
                let e0 = Tensor::from_fn_real(vec![d * d], |ix| if ix[0] == 0 { 1.0 } else { 0.0 });
                for (pos, site) in merged.iter().enumerate() {
                    if !sites.contains(site) {
                        c = c.contract(&Labeled::new(e0.clone(), &[format!("l{pos}")]))?;
                    }
                }
                let order: Vec<String> = sites
                    .iter()
                    .map(|s| format!("l{}", merged.iter().position(|t| t == s).unwrap()))
                    .collect();
                Ok(c.ordered(&order)?
                    .to_complex_vec()
                    .into_iter()
                    .map(|z| z * id_scale)
                    .collect())
            };
            let ex = one_point(&shifted)?;
            let e0 = one_point(&origin)?;
            let phase = q.phase(x, y).conj();
            for a in 0..nb {
                for b in 0..nb {
                    s[(a, b)] += phase * (joint[a * nb + b] - ex[a] * e0[b]);
                }
            }
        }
    }
    let s = match basis.combination_rows() {
        None => s,
        Some(rows) => {
            let r = Mat::<C64>::from_fn(rows.len(), nb, |i, j| C64::new(rows[i][j], 0.0));
            &r * &s * r.transpose()
        }
    };
    StructureFactorMatrix::new(
        s,
        basis.labels(),
        g.clone(),
        *q,
        Provenance::ExactOracle {
            lx: torus.lx,
            ly: torus.ly,
        },
    )
}

/// Hermitian (for real-phase momenta) operator on a finite tensor-product space, CSR storage.
#[derive(Clone, Debug)]
pub struct GlobalOperator {
    pub dim: usize,
    /// Number of lattice sites used for per-site normalization.
    pub n_sites: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<C64>,
    pub q: Option<Momentum>,
}

/// Local term acting on `sites` of a register of `n` qudits of dimension `d`.
pub struct LocalTerm {
    pub sites: Vec<usize>,
    pub matrix: Mat<C64>,
    pub coeff: C64,
}

impl GlobalOperator {
    /// Sum of local terms on `n` qudits of dimension `d`, site 0 most significant.
    pub fn from_local_terms(
        n: usize,
        d: usize,
        terms: &[LocalTerm],
        n_sites: usize,
    ) -> Result<Self> {
        let dim = (0..n)
            .try_fold(1usize, |acc, _| acc.checked_mul(d))
            .filter(|&x| x <= MAX_STATE_DIM)
            .ok_or_else(|| Error::Budget(format!("{d}^{n} exceeds {MAX_STATE_DIM}")))?;
        let weight = |s: usize| d.pow((n - 1 - s) as u32);
        struct Prepared {
            weights: Vec<usize>,
            rows: Vec<Vec<(usize, C64)>>,
            offsets: Vec<usize>,
        }
        let mut prepared = Vec::with_capacity(terms.len());
        for t in terms {
            let k = t.sites.len();
            let dl = d.pow(k as u32);
            if t.matrix.nrows() != dl || t.matrix.ncols() != dl {
                return Err(Error::ExtentMismatch("local term matrix".into()));
            }
            if t.sites.iter().any(|&s| s >= n) {
                return Err(Error::IndexOutOfRange("local term site".into()));
            }
            let weights: Vec<usize> = t.sites.iter().map(|&s| weight(s)).collect();
            let rows = (0..dl)
                .map(|b| {
                    (0..dl)
                        .filter(|&a| t.matrix[(b, a)] != C64::new(0.0, 0.0))
                        .map(|a| (a, t.matrix[(b, a)] * t.coeff))
                        .collect()
                })
                .collect();
            let offsets = (0..dl)
                .map(|mut a| {
                    let mut off = 0;
                    for w in weights.iter().rev() {
                        off += (a % d) * w;
                        a /= d;
                    }
                    off
                })
                .collect();
            prepared.push(Prepared {
                weights,
                rows,
                offsets,
            });
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        let mut buf: Vec<(usize, C64)> = Vec::new();
        for j in 0..dim {
            buf.clear();
            for p in &prepared {
                let mut b = 0;
                for w in &p.weights {
                    b = b * d + (j / w) % d;
                }
                let base = j - p.offsets[b];
                for &(a, v) in &p.rows[b] {
                    buf.push((base + p.offsets[a], v));
                }
            }
            buf.sort_by_key(|e| e.0);
            let mut i = 0;
            while i < buf.len() {
                let c = buf[i].0;
                let mut v = C64::new(0.0, 0.0);
                while i < buf.len() && buf[i].0 == c {
                    v += buf[i].1;
                    i += 1;
                }
                if v != C64::new(0.0, 0.0) {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            dim,
            n_sites,
            row_ptr,
            cols,
            vals,
            q: None,
        })
    }

    /// Sum of Pauli strings `c · Π P` on `n` qubits; strings are (coefficient, [(qubit, letter)]).
    pub fn from_pauli_strings(
        n: usize,
        strings: &[(C64, Vec<(usize, u8)>)],
        n_sites: usize,
    ) -> Result<Self> {
        if n > 22 {
            return Err(Error::Budget(format!("{n} qubits exceed 22")));
        }
        let dim = 1usize << n;
        let mut prepared = Vec::new();
        for (c, ops) in strings {
            let (mut xm, mut zm, mut ny) = (0usize, 0usize, 0u32);
            for &(q, p) in ops {
                if q >= n {
                    return Err(Error::IndexOutOfRange(format!("qubit {q}")));
                }
                let bit = 1usize << (n - 1 - q);
                match p {
                    0 => {}
                    1 => xm ^= bit,
                    2 => {
                        xm ^= bit;
                        zm ^= bit;
                        ny += 1;
                    }
                    3 => zm ^= bit,
                    _ => return Err(Error::InvalidArgument(format!("Pauli letter {p}"))),
                }
            }
            // Y = i X Z acting on |b⟩ gives i (−1)^b |1−b⟩.
            let iy = [
                C64::new(1.0, 0.0),
                C64::new(0.0, 1.0),
                C64::new(-1.0, 0.0),
                C64::new(0.0, -1.0),
            ][ny as usize % 4];
            prepared.push((xm, zm, *c * iy));
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut buf: Vec<(usize, C64)> = Vec::new();
        for j in 0..dim {
            buf.clear();
            // ⟨j|P|i⟩ ≠ 0 for i = j ^ x, with sign from the Z part acting on i.
            for &(xm, zm, c) in &prepared {
                let i = j ^ xm;
                let sign = if (i & zm).count_ones() % 2 == 0 {
                    1.0
                } else {
                    -1.0
                };
                buf.push((i, c * sign));
            }
            buf.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < buf.len() {
                let col = buf[k].0;
                let mut v = C64::new(0.0, 0.0);
                while k < buf.len() && buf[k].0 == col {
                    v += buf[k].1;
                    k += 1;
                }
                if v != C64::new(0.0, 0.0) {
                    cols.push(col);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            dim,
            n_sites,
            row_ptr,
            cols,
            vals,
            q: None,
        })
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_real(&self) -> bool {
        self.vals.iter().all(|v| v.im == 0.0)
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        (0..self.dim)
            .map(|j| {
                (self.row_ptr[j]..self.row_ptr[j + 1])
                    .map(|k| self.vals[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.dim, self.dim);
        for j in 0..self.dim {
            for k in self.row_ptr[j]..self.row_ptr[j + 1] {
                m[(j, self.cols[k])] = self.vals[k];
            }
        }
        m
    }

    fn row(&self, j: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        (self.row_ptr[j]..self.row_ptr[j + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    fn get(&self, j: usize, i: usize) -> C64 {
        let r = &self.cols[self.row_ptr[j]..self.row_ptr[j + 1]];
        match r.binary_search(&i) {
            Ok(k) => self.vals[self.row_ptr[j] + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest `|H_ij − conj(H_ji)|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.dim {
            for (i, v) in self.row(j) {
                worst = worst.max((v - self.get(i, j).conj()).norm());
            }
        }
        worst
    }

    /// `(c, max |H − c 𝟙|)` with `c` the mean diagonal entry.
    pub fn identity_residual(&self) -> (C64, f64) {
        let c = (0..self.dim).map(|j| self.get(j, j)).sum::<C64>() / self.dim as f64;
        let mut worst = 0.0f64;
        for j in 0..self.dim {
            for (i, v) in self.row(j) {
                let t = if i == j { v - c } else { v };
                worst = worst.max(t.norm());
            }
        }
        (c, worst)
    }

    /// `self + alpha · other`.
    pub fn add_scaled(&self, alpha: C64, other: &GlobalOperator) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::ExtentMismatch("operator dimensions".into()));
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for j in 0..self.dim {
            let mut buf: Vec<(usize, C64)> = self.row(j).collect();
            buf.extend(other.row(j).map(|(i, v)| (i, v * alpha)));
            buf.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < buf.len() {
                let c = buf[k].0;
                let mut v = C64::new(0.0, 0.0);
                while k < buf.len() && buf[k].0 == c {
                    v += buf[k].1;
                    k += 1;
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            dim: self.dim,
            n_sites: self.n_sites,
            row_ptr,
            cols,
            vals,
            q: self.q,
        })
    }

    /// Least-squares `λ` with `self ≈ λ · other`, and the max-norm residual.
    pub fn proportionality(&self, other: &GlobalOperator) -> Result<(C64, f64)> {
        let mut num = C64::new(0.0, 0.0);
        let mut den = 0.0;
        for j in 0..self.dim {
            for (i, v) in other.row(j) {
                num += v.conj() * self.get(j, i);
                den += v.norm_sqr();
            }
        }
        let lambda = if den > 0.0 {
            num / den
        } else {
            C64::new(0.0, 0.0)
        };
        let diff = self.add_scaled(-lambda, other)?;
        Ok((lambda, diff.max_abs()))
    }

    /// Sparse product `self · other`.
    pub fn mul(&self, other: &GlobalOperator) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::ExtentMismatch("operator dimensions".into()));
        }
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut acc: std::collections::BTreeMap<usize, C64> = std::collections::BTreeMap::new();
        for j in 0..self.dim {
            acc.clear();
            for (k, a) in self.row(j) {
                for (i, b) in other.row(k) {
                    *acc.entry(i).or_default() += a * b;
                }
            }
            for (&i, &v) in &acc {
                cols.push(i);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            dim: self.dim,
            n_sites: self.n_sites,
            row_ptr,
            cols,
            vals,
            q: None,
        })
    }

    /// Max-norm of `[self, other]`.
    pub fn commutator_max(&self, other: &GlobalOperator) -> Result<f64> {
        let ab = self.mul(other)?;
        let ba = other.mul(self)?;
        Ok(ab.add_scaled(C64::new(-1.0, 0.0), &ba)?.max_abs())
    }
}

/// `Σ_x e^{iq·x} ĥ_x` for coefficients `h` in `basis`.
pub fn build_global_operator(
    h: &[f64],
    basis: &OperatorBasis,
    torus: &FiniteTorus,
    q: &Momentum,
) -> Result<GlobalOperator> {
    if h.len() != basis.len() {
        return Err(Error::ExtentMismatch(format!(
            "{} coefficients for {} basis elements",
            h.len(),
            basis.len()
        )));
    }
    if torus.d != basis.d() {
        return Err(Error::ExtentMismatch(
            "basis and torus dimensions differ".into(),
        ));
    }
    let local = basis.local_matrix(h);
    let g = &basis.geometry;
    let mut terms = Vec::new();
    for y in 0..torus.ly as i64 {
        for x in 0..torus.lx as i64 {
            let sites: Vec<usize> = g
                .offsets
                .iter()
                .map(|&(ox, oy)| torus.site(x + ox, y + oy))
                .collect();
            let mut u = sites.clone();
            u.sort();
            u.dedup();
            if u.len() != sites.len() {
                return Err(Error::InvalidArgument(
                    "support wraps onto itself on this torus".into(),
                ));
            }
            terms.push(LocalTerm {
                sites,
                matrix: local.clone(),
                coeff: q.phase(x, y),
            });
        }
    }
    let mut op =
        GlobalOperator::from_local_terms(torus.n_sites(), torus.d, &terms, torus.n_sites())?;
    op.q = Some(*q);
    Ok(op)
}

/// A single local matrix placed on `sites` of the torus.
pub fn local_operator(
    matrix: &Mat<C64>,
    sites: &[usize],
    torus: &FiniteTorus,
) -> Result<GlobalOperator> {
    let t = LocalTerm {
        sites: sites.to_vec(),
        matrix: matrix.clone(),
        coeff: C64::new(1.0, 0.0),
    };
    GlobalOperator::from_local_terms(torus.n_sites(), torus.d, &[t], torus.n_sites())
}

/// `Σ_⟨ij⟩ Z_i Z_j` over nearest-neighbor bonds of a spin-1/2 torus.
pub fn zz_bond_sum(torus: &FiniteTorus) -> Result<GlobalOperator> {
    let strings: Vec<(C64, Vec<(usize, u8)>)> = torus
        .bonds()
        .into_iter()
        .map(|(i, j)| (C64::new(1.0, 0.0), vec![(i, 3), (j, 3)]))
        .collect();
    GlobalOperator::from_pauli_strings(torus.n_sites(), &strings, torus.n_sites())
}

/// Edge operator translated over every vertex of the edge lattice.
pub fn build_edge_global_operator(op: &EdgeOperator, lat: &EdgeLattice) -> Result<GlobalOperator> {
    let mut strings = Vec::new();
    for y in 0..lat.ly as i64 {
        for x in 0..lat.lx as i64 {
            for (c, ops) in &op.terms {
                let s: Vec<(usize, u8)> = ops
                    .iter()
                    .map(|(e, &p)| {
                        let idx = if e.vertical {
                            lat.vert(e.x + x, e.y + y)
                        } else {
                            lat.h(e.x + x, e.y + y)
                        };
                        (idx, p)
                    })
                    .collect();
                strings.push((*c, merge_paulis(&s)?));
            }
        }
    }
    let (phases, strings): (Vec<C64>, Vec<Vec<(usize, u8)>>) =
        strings.into_iter().map(|(c, (ph, s))| (c * ph, s)).unzip();
    let strings: Vec<(C64, Vec<(usize, u8)>)> = phases.into_iter().zip(strings).collect();
    GlobalOperator::from_pauli_strings(lat.n_edges(), &strings, lat.lx * lat.ly)
}

/// Multiply Pauli factors that land on the same qubit after wrapping.
fn merge_paulis(ops: &[(usize, u8)]) -> Result<(C64, Vec<(usize, u8)>)> {
    let mut phase = C64::new(1.0, 0.0);
    let mut out: std::collections::BTreeMap<usize, u8> = std::collections::BTreeMap::new();
    for &(q, p) in ops {
        let cur = out.get(&q).copied().unwrap_or(0);
        let (ph, r) = crate::basis::pauli_mul(cur, p);
        phase *= ph;
        out.insert(q, r);
    }
    Ok((phase, out.into_iter().filter(|&(_, p)| p != 0).collect()))
}

/// `(⟨H⟩/N, (⟨H²⟩ − ⟨H⟩²)/N)` in the normalized state.
pub fn expectation_and_variance(h: &GlobalOperator, state: &[C64]) -> Result<(f64, f64)> {
    if state.len() != h.dim {
        return Err(Error::ExtentMismatch("state dimension".into()));
    }
    let norm2: f64 = state.iter().map(|z| z.norm_sqr()).sum();
    if norm2 == 0.0 {
        return Err(Error::InvalidArgument("zero-norm state".into()));
    }
    let hv = h.matvec(state);
    let e: C64 = state
        .iter()
        .zip(&hv)
        .map(|(a, b)| a.conj() * b)
        .sum::<C64>()
        / norm2;
    let h2: f64 = hv.iter().map(|z| z.norm_sqr()).sum::<f64>() / norm2;
    let n = h.n_sites as f64;
    Ok((e.re / n, (h2 - e.norm_sqr()) / n))
}

/// Which part of the spectrum to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumMode {
    /// Dense diagonalization, dimension ≤ 4096.
    Full,
    /// Lowest `k` eigenpairs by restarted Lanczos.
    Lowest(usize),
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Eigenvectors as columns of a `dim × n` matrix, if requested.
    pub vectors: Option<Mat<C64>>,
    /// Residual norms `‖Hv − λv‖` of the returned pairs (iterative mode).
    pub residuals: Vec<f64>,
}

impl Spectrum {
    pub fn zero_mode_count(&self, threshold: f64) -> usize {
        self.values.iter().filter(|v| v.abs() < threshold).count()
    }
}

pub const FULL_SPECTRUM_LIMIT: usize = 4096;

/// Eigenvalues (ascending) of a Hermitian global operator.
pub fn spectrum(h: &GlobalOperator, mode: SpectrumMode, want_vectors: bool) -> Result<Spectrum> {
    let defect = h.hermiticity_defect();
    if defect > 1e-10 * h.max_abs().max(1.0) {
        return Err(Error::NotSymmetric(defect));
    }
    match mode {
        SpectrumMode::Full => {
            if h.dim > FULL_SPECTRUM_LIMIT {
                return Err(Error::Budget(format!(
                    "dense spectrum of dimension {}",
                    h.dim
                )));
            }
            let dense = h.to_dense();
            let (values, vectors) = if h.is_real() {
                let r = Mat::<f64>::from_fn(h.dim, h.dim, |i, j| {
                    0.5 * (dense[(i, j)].re + dense[(j, i)].re)
                });
                let (v, u) = eigh_real_mat(r.as_ref())?;
                (
                    v,
                    Mat::from_fn(h.dim, h.dim, |i, j| C64::new(u[(i, j)], 0.0)),
                )
            } else {
                let c = Mat::<C64>::from_fn(h.dim, h.dim, |i, j| {
                    (dense[(i, j)] + dense[(j, i)].conj()) * 0.5
                });
                eigh_complex_mat(c.as_ref())?
            };
            Ok(Spectrum {
                values,
                vectors: want_vectors.then_some(vectors),
                residuals: vec![],
            })
        }
        SpectrumMode::Lowest(k) => lanczos_lowest(h, k, 1e-9, want_vectors),
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn normalize(v: &mut [C64]) -> f64 {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|z| *z /= n);
    }
    n
}

/// Restarted Lanczos with full reorthogonalization, seeded by a fixed pseudorandom vector.
fn lanczos_lowest(h: &GlobalOperator, k: usize, tol: f64, want_vectors: bool) -> Result<Spectrum> {
    let dim = h.dim;
    if k == 0 || k > dim {
        return Err(Error::InvalidArgument(format!(
            "requested {k} eigenpairs of dimension {dim}"
        )));
    }
    let m = dim.min(k + 100);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v0: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.random::<f64>() - 0.5, 0.0))
        .collect();
    normalize(&mut v0);
    let scale = h.max_abs().max(1.0);
    let max_restarts = 500;
    for restart in 0..max_restarts {
        let mut basis: Vec<Vec<C64>> = vec![v0.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut last_beta = 0.0;
        for j in 0..m {
            let mut w = h.matvec(&basis[j]);
            let a = dot(&basis[j], &w).re;
            alpha.push(a);
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(b, &w);
                    w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nb = normalize(&mut w);
            last_beta = nb;
            if j + 1 == m || nb < 1e-13 * scale {
                break;
            }
            beta.push(nb);
            basis.push(w);
        }
        let n = alpha.len();
        let t = Mat::<f64>::from_fn(n, n, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (theta, s) = eigh_real_mat(t.as_ref())?;
        let kk = k.min(n);
        let residuals: Vec<f64> = (0..kk).map(|i| (last_beta * s[(n - 1, i)]).abs()).collect();
        let ritz = |i: usize| -> Vec<C64> {
            let mut y = vec![C64::new(0.0, 0.0); dim];
            for (jj, b) in basis.iter().enumerate() {
                let c = s[(jj, i)];
                y.iter_mut().zip(b).for_each(|(x, z)| *x += z * c);
            }
            y
        };
        let converged = n == dim
            || residuals
                .iter()
                .zip(&theta)
                .all(|(r, th)| *r < tol * th.abs().max(1.0));
        if converged || restart + 1 == max_restarts {
            if !converged {
                return Err(Error::Convergence(format!(
                    "Lanczos residuals {residuals:?}"
                )));
            }
            let vectors = want_vectors.then(|| {
                let cols: Vec<Vec<C64>> = (0..kk).map(ritz).collect();
                Mat::from_fn(dim, kk, |i, j| cols[j][i])
            });
            return Ok(Spectrum {
                values: theta[..kk].to_vec(),
                vectors,
                residuals,
            });
        }
        let mut next = vec![C64::new(0.0, 0.0); dim];
        for i in 0..kk {
            next.iter_mut().zip(ritz(i)).for_each(|(x, y)| *x += y);
        }
        normalize(&mut next);
        v0 = next;
    }
    unreachable!("loop returns on the last restart")
}
