//! Reference local terms used to check extracted solutions.
//!
//! Plaquette Pauli strings list one letter per site in plaquette geometry
//! order: top-left, top-right, bottom-left, bottom-right.

use crate::basis::{
    pauli_coefficients, su2_reduced_plaquette_basis, EdgeId, EdgeOperator, Momentum, OperatorBasis,
    Su2Class, SupportGeometry,
};
use crate::error::{Error, Result};
use crate::models::FiniteTorus;
use crate::oracle::{GlobalOperator, LocalTerm};
use crate::spin::pauli;
use faer::Mat;
use num_complex::Complex64 as C64;

/// Plaquette term of the deformed-Ising solution at `q = (0, 0)`.
pub const ISING_PLAQUETTE_ZERO: [(f64, &str); 6] = [
    (2.0, "ZIIZ"),
    (-2.0, "IZZI"),
    (-1.0, "ZIXZ"),
    (-1.0, "ZXIZ"),
    (1.0, "XZZI"),
    (1.0, "IZZX"),
];

/// Plaquette term of the deformed-Ising solution at `q = (π, π)`.
pub const ISING_PLAQUETTE_PI_PI: [(f64, &str); 6] = [
    (2.0, "ZIIZ"),
    (2.0, "IZZI"),
    (-1.0, "ZIXZ"),
    (-1.0, "ZXIZ"),
    (-1.0, "XZZI"),
    (-1.0, "IZZX"),
];

/// Plaquette term of the deformed-Ising solution at `q = (π, 0)`.
pub const ISING_PLAQUETTE_PI_ZERO: [(f64, &str); 4] =
    [(1.0, "ZIXZ"), (-1.0, "ZXIZ"), (-1.0, "XZZI"), (1.0, "IZZX")];

/// Pauli strings of the deformed-Ising plaquette solution at `q`, if one is tabulated.
pub fn ising_plaquette_strings(q: &Momentum) -> Option<&'static [(f64, &'static str)]> {
    match q.q() {
        (x, y) if x == 0.0 && y == 0.0 => Some(&ISING_PLAQUETTE_ZERO),
        (x, y) if x == std::f64::consts::PI && y == std::f64::consts::PI => {
            Some(&ISING_PLAQUETTE_PI_PI)
        }
        (x, y) if x == std::f64::consts::PI && y == 0.0 => Some(&ISING_PLAQUETTE_PI_ZERO),
        _ => None,
    }
}

/// Product-basis coefficients of the deformed-Ising plaquette solution at `q`.
pub fn ising_plaquette_coefficients(q: &Momentum) -> Result<Vec<f64>> {
    let strings = ising_plaquette_strings(q).ok_or_else(|| {
        Error::Unsupported(format!("no tabulated Ising solution at {}", q.label()))
    })?;
    pauli_coefficients(&SupportGeometry::plaquette(2), strings)
}

/// Five-site cross: center, left, up, right, down.
pub fn vertex_geometry() -> SupportGeometry {
    SupportGeometry::new(vec![(0, 0), (-1, 0), (0, -1), (1, 0), (0, 1)], 2)
        .expect("distinct offsets")
}

/// Pauli strings of `(𝟙 − X_c)(Z_u − Z_d)(Z_r − Z_l)` in cross order.
pub fn ising_vertex_strings() -> Vec<(f64, String)> {
    let mut out = Vec::new();
    for (sc, c) in [(1.0, 'I'), (-1.0, 'X')] {
        for (su, up) in [(1.0, 2), (-1.0, 4)] {
            for (sr, rl) in [(1.0, 3), (-1.0, 1)] {
                let mut s = ['I'; 5];
                s[0] = c;
                s[up] = 'Z';
                s[rl] = 'Z';
                out.push((sc * su * sr, s.iter().collect()));
            }
        }
    }
    out
}

fn pauli_string_matrix(s: &str) -> Mat<C64> {
    let [x, y, z] = pauli();
    let id = Mat::<C64>::identity(2, 2);
    s.chars().fold(Mat::<C64>::identity(1, 1), |acc, ch| {
        let m = match ch {
            'X' => &x,
            'Y' => &y,
            'Z' => &z,
            _ => &id,
        };
        crate::basis::kron(&acc, m)
    })
}

/// `Σ_v e^{iq·v} ĥ_v` for the vertex term on a spin-1/2 torus.
pub fn ising_vertex_global(torus: &FiniteTorus, q: &Momentum) -> Result<GlobalOperator> {
    if torus.d != 2 || torus.lx < 3 || torus.ly < 3 {
        return Err(Error::InvalidArgument(
            "vertex term needs a spin-1/2 torus of at least 3x3".into(),
        ));
    }
    let g = vertex_geometry();
    let local = ising_vertex_strings()
        .iter()
        .fold(Mat::<C64>::zeros(32, 32), |acc, (c, s)| {
            let m = pauli_string_matrix(s);
            acc + Mat::from_fn(32, 32, |i, j| m[(i, j)] * *c)
        });
    let mut terms = Vec::new();
    for y in 0..torus.ly as i64 {
        for x in 0..torus.lx as i64 {
            let sites = g
                .offsets
                .iter()
                .map(|&(ox, oy)| torus.site(x + ox, y + oy))
                .collect();
            terms.push(LocalTerm {
                sites,
                matrix: local.clone(),
                coeff: q.phase(x, y),
            });
        }
    }
    let mut op = GlobalOperator::from_local_terms(torus.n_sites(), 2, &terms, torus.n_sites())?;
    op.q = Some(*q);
    Ok(op)
}

/// Dual-model vertex term on the four edges around the origin (left, up, right, down).
pub fn dual_vertex_term() -> EdgeOperator {
    let [l, u, r, d] = EdgeId::star(0, 0);
    EdgeOperator::from_terms(&[
        (2.0, &[(u, 'Z'), (r, 'Z')]),
        (-2.0, &[(r, 'Z'), (d, 'Z')]),
        (1.0, &[(l, 'X'), (u, 'Y'), (r, 'Y'), (d, 'X')]),
        (1.0, &[(l, 'Y'), (u, 'X'), (r, 'X'), (d, 'Y')]),
        (-1.0, &[(l, 'X'), (u, 'X'), (r, 'Y'), (d, 'Y')]),
        (-1.0, &[(l, 'Y'), (u, 'Y'), (r, 'X'), (d, 'X')]),
    ])
}

/// Coefficients in the 39-element SU(2) plaquette basis of the per-plaquette term of
/// `J1 Σ_⟨ij⟩ S·S + J2 Σ_⟨⟨ij⟩⟩ S·S + Q1 Σ (S·S)(S·S) + Q2 Σ (S·S)(S·S)`.
///
/// Nearest-neighbor bonds are shared by two plaquettes and carry `J1/2`.
pub fn jjqq_coefficients(j1: f64, j2: f64, q1: f64, q2: f64) -> (OperatorBasis, Vec<f64>) {
    let (basis, classes) = su2_reduced_plaquette_basis();
    // Pair elements are S^α S^α; four-site elements are 4 S^α S^α S^β S^β.
    let h = classes
        .iter()
        .map(|c| match c {
            Su2Class::NearestPair => j1 / 2.0,
            Su2Class::DiagonalPair => j2,
            Su2Class::NearestPairing => q1 / 4.0,
            Su2Class::DiagonalPairing => q2 / 4.0,
            Su2Class::AllEqual => (2.0 * q1 + q2) / 4.0,
        })
        .collect();
    (basis, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{product_basis, wegner_dual};
    use crate::models::{build_deformed_tc_state, EdgeLattice};
    use crate::oracle::{build_edge_global_operator, build_global_operator, zz_bond_sum};

    #[test]
    fn plaquette_terms_regroup_into_vertex_terms() {
        let torus = FiniteTorus::new(4, 4, 2);
        let b = product_basis(&SupportGeometry::plaquette(2));
        for q in [Momentum::zero(), Momentum::pi_pi(), Momentum::pi_zero()] {
            let h = ising_plaquette_coefficients(&q).unwrap();
            let a = build_global_operator(&h, &b, &torus, &q).unwrap();
            let v = ising_vertex_global(&torus, &q).unwrap();
            let (lambda, res) = a.proportionality(&v).unwrap();
            assert!(res < 1e-12, "{}: {res}", q.label());
            assert!((lambda.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_term_commutes_with_bond_sum() {
        let torus = FiniteTorus::new(3, 3, 2);
        let zz = zz_bond_sum(&torus).unwrap();
        let v = ising_vertex_global(&torus, &Momentum::zero()).unwrap();
        assert!(v.commutator_max(&zz).unwrap() < 1e-12);
    }

    #[test]
    fn dual_of_plaquette_term_is_dual_vertex_term() {
        let lat = EdgeLattice::new(2, 2);
        let dual = wegner_dual(&ising_plaquette_coefficients(&Momentum::zero()).unwrap()).unwrap();
        let a = build_edge_global_operator(&dual, &lat).unwrap();
        let b = build_edge_global_operator(&dual_vertex_term(), &lat).unwrap();
        assert!(a.add_scaled(C64::new(-1.0, 0.0), &b).unwrap().max_abs() < 1e-12);
        let psi: Vec<C64> = build_deformed_tc_state(0.4, lat)
            .unwrap()
            .into_iter()
            .map(|x| C64::new(x, 0.0))
            .collect();
        let r: f64 = b.matvec(&psi).iter().map(|z| z.norm_sqr()).sum();
        assert!(r.sqrt() < 1e-12);
    }

    #[test]
    fn jjqq_reproduces_heisenberg() {
        let torus = FiniteTorus::new(3, 3, 2);
        let (basis, h) = jjqq_coefficients(1.0, 0.0, 0.0, 0.0);
        let a = build_global_operator(&h, &basis, &torus, &Momentum::zero()).unwrap();
        let mut strings = Vec::new();
        for (i, j) in torus.bonds() {
            for p in 1..=3u8 {
                strings.push((C64::new(0.25, 0.0), vec![(i, p), (j, p)]));
            }
        }
        let b = GlobalOperator::from_pauli_strings(9, &strings, 9).unwrap();
        assert!(a.add_scaled(C64::new(-1.0, 0.0), &b).unwrap().max_abs() < 1e-12);
    }
}
