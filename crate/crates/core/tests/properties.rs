//! Invariants of the extraction pipeline on random small states.

use faer::Mat;
use peps_kernel::basis::{product_basis, trivial_subspace, Momentum, SupportGeometry};
use peps_kernel::ctmrg::trace_product;
use peps_kernel::extraction::{deflate, solve, StructureFactorMatrix, SENTINEL};
use peps_kernel::models::{FiniteTorus, Injectivity, PepsUnitCell};
use peps_kernel::oracle::{contract_torus_statevector, exact_structure_factor, StateSource};
use peps_kernel::Tensor;
use proptest::prelude::*;

fn geometry(kind: usize, d: usize) -> SupportGeometry {
    match kind {
        0 => SupportGeometry::site(d),
        1 => SupportGeometry::pair(d),
        2 => SupportGeometry::vertical_pair(d),
        _ => SupportGeometry::plaquette(d),
    }
}

fn momentum(k: usize) -> Momentum {
    [
        Momentum::zero(),
        Momentum::pi_zero(),
        Momentum::pi_pi(),
        Momentum::zero_pi(),
    ][k]
}

/// Real spin-1/2 PEPS with D = 2 from 32 entries.
fn random_peps(data: Vec<f64>) -> PepsUnitCell {
    let t = Tensor::from_real(vec![2, 2, 2, 2, 2], data).unwrap();
    PepsUnitCell::uniform(t, Injectivity::Injective, None).unwrap()
}

fn structure_factor(data: Vec<f64>, kind: usize, q: &Momentum) -> StructureFactorMatrix {
    let torus = FiniteTorus::new(4, 2, 2);
    let psi = contract_torus_statevector(&random_peps(data), &torus).unwrap();
    let basis = product_basis(&geometry(kind.min(2), 2));
    exact_structure_factor(&StateSource::Statevector { psi: &psi, torus }, &basis, q).unwrap()
}

fn tensor_data() -> impl Strategy<Value = Vec<f64>> {
    // Keep away from the zero state.
    prop::collection::vec(-1.0f64..1.0, 32).prop_map(|mut v| {
        v[0] += 2.0;
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn product_basis_is_orthonormal(kind in 0usize..4, d in 2usize..4, i in 0usize..6561, j in 0usize..6561) {
        let b = product_basis(&geometry(kind, d));
        let (i, j) = (i % b.len(), j % b.len());
        let g = trace_product(&b.matrix(i), &b.matrix(j));
        let want = if i == j { 1.0 } else { 0.0 };
        prop_assert!((g.re - want).abs() < 1e-12 && g.im.abs() < 1e-12, "{i} {j}: {g}");
        let m = b.matrix(i);
        let n = m.nrows();
        prop_assert!((0..n).all(|r| (0..n).all(|c| (m[(r, c)] - m[(c, r)].conj()).norm() < 1e-15)));
    }

    #[test]
    fn trivial_vectors_are_orthonormal(kind in 0usize..4, d in 2usize..4, qk in 0usize..4) {
        let g = geometry(kind, d);
        let v = trivial_subspace(&g, &momentum(qk)).unwrap();
        for (a, x) in v.iter().enumerate() {
            for (b, y) in v.iter().enumerate() {
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn structure_factor_is_symmetric_psd_and_kills_trivial_vectors(
        data in tensor_data(), kind in 0usize..3, qk in 0usize..2,
    ) {
        let q = momentum(qk);
        let s = structure_factor(data, kind, &q);
        let n = s.dim();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s.sym[(i, j)], s.sym[(j, i)]);
            }
        }
        let scale = s.eigenvalues().unwrap()[n - 1].max(1e-300);
        prop_assert!(s.eigenvalues().unwrap()[0] > -1e-12 * scale);
        for v in trivial_subspace(&s.geometry, &q).unwrap() {
            prop_assert!(s.quadratic_form(&v).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn deflation_is_idempotent_and_rayleigh_consistent(data in tensor_data(), kind in 0usize..3) {
        let q = Momentum::zero();
        let s = structure_factor(data, kind, &q);
        let basis = product_basis(&s.geometry);
        let v = trivial_subspace(&s.geometry, &q).unwrap();
        let once = deflate(&s, &[("trivial", v.clone())]).unwrap();
        let twice = deflate(&s, &[("trivial", v.clone()), ("again", v.clone())]).unwrap();
        prop_assert_eq!(once.record.rank, twice.record.rank);
        prop_assert_eq!(once.record.rank, v.len());
        for (a, b) in once.eigenvalues.iter().zip(&twice.eigenvalues) {
            prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
        // Deflated directions sit at the sentinel.
        let n = s.dim();
        let vm = Mat::<f64>::from_fn(n, v.len(), |i, k| v[k][i]);
        let mv = &once.matrix * &vm;
        for i in 0..n {
            for k in 0..v.len() {
                prop_assert!((mv[(i, k)] - SENTINEL * vm[(i, k)]).abs() < 1e-9);
            }
        }
        let sols = solve(&once, &basis, n - v.len()).unwrap();
        let scale = once.eigenvalues[n - v.len() - 1].abs().max(1e-300);
        for sol in &sols {
            prop_assert!((s.quadratic_form(&sol.coefficients) - sol.eigenvalue).abs() < 1e-12 * scale.max(1.0));
            let proj: f64 = v.iter().map(|w| w.iter().zip(&sol.coefficients).map(|(a, b)| a * b).sum::<f64>().abs()).fold(0.0, f64::max);
            prop_assert!(proj < 1e-10);
        }
    }

    #[test]
    fn structure_factor_is_deterministic(data in tensor_data(), kind in 0usize..3) {
        let q = Momentum::zero();
        let a = structure_factor(data.clone(), kind, &q);
        let b = structure_factor(data, kind, &q);
        let n = a.dim();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(a.raw[(i, j)], b.raw[(i, j)]);
            }
        }
        let sa = solve(&deflate(&a, &[]).unwrap(), &product_basis(&a.geometry), n).unwrap();
        let sb = solve(&deflate(&b, &[]).unwrap(), &product_basis(&b.geometry), n).unwrap();
        for (x, y) in sa.iter().zip(&sb) {
            prop_assert_eq!(&x.coefficients, &y.coefficients);
        }
    }
}
