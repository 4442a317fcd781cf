//! Spin operators and Clebsch–Gordan coefficients.
//!
//! Spins are passed doubled (`two_s = 2s`) so half-integers stay integral.
//! Basis states are ordered by descending magnetization: index `p` holds
//! `m = s - p`.

use faer::Mat;
use num_complex::Complex64 as C64;

fn factorial(n: i64) -> f64 {
    assert!(n >= 0, "factorial of negative number");
    (1..=n).map(|k| k as f64).product()
}

/// ⟨j1 m1; j2 m2 | j m⟩ with all arguments doubled.
pub fn clebsch_gordan(tj1: i64, tm1: i64, tj2: i64, tm2: i64, tj: i64, tm: i64) -> f64 {
    if tm1 + tm2 != tm {
        return 0.0;
    }
    if tj < (tj1 - tj2).abs() || tj > tj1 + tj2 || (tj1 + tj2 + tj) % 2 != 0 {
        return 0.0;
    }
    if tm1.abs() > tj1 || tm2.abs() > tj2 || tm.abs() > tj {
        return 0.0;
    }
    if (tj1 + tm1) % 2 != 0 || (tj2 + tm2) % 2 != 0 || (tj + tm) % 2 != 0 {
        return 0.0;
    }
    let h = |x: i64| x / 2;
    let pre = ((tj + 1) as f64
        * factorial(h(tj + tj1 - tj2))
        * factorial(h(tj - tj1 + tj2))
        * factorial(h(tj1 + tj2 - tj))
        / factorial(h(tj1 + tj2 + tj) + 1))
    .sqrt();
    let norm = (factorial(h(tj + tm))
        * factorial(h(tj - tm))
        * factorial(h(tj1 - tm1))
        * factorial(h(tj1 + tm1))
        * factorial(h(tj2 - tm2))
        * factorial(h(tj2 + tm2)))
    .sqrt();
    let mut sum = 0.0;
    for k in 0..=h(tj1 + tj2 + tj) {
        let args = [
            k,
            h(tj1 + tj2 - tj) - k,
            h(tj1 - tm1) - k,
            h(tj2 + tm2) - k,
            h(tj - tj2 + tm1) + k,
            h(tj - tj1 - tm2) + k,
        ];
        if args.iter().any(|&a| a < 0) {
            continue;
        }
        let den: f64 = args.iter().map(|&a| factorial(a)).product();
        sum += if k % 2 == 0 { 1.0 } else { -1.0 } / den;
    }
    pre * norm * sum
}

/// Magnetic quantum number (doubled) of basis index `p`.
pub fn two_m(two_s: i64, p: usize) -> i64 {
    two_s - 2 * p as i64
}

/// (S^x, S^y, S^z) for spin `two_s / 2`.
pub fn spin_matrices(two_s: usize) -> [Mat<C64>; 3] {
    let d = two_s + 1;
    let s = two_s as f64 / 2.0;
    let m = |p: usize| s - p as f64;
    // S^+ |m> = sqrt(s(s+1) - m(m+1)) |m+1>, and |m+1> sits at index p-1.
    let splus = |r: usize, c: usize| {
        if c >= 1 && r == c - 1 {
            (s * (s + 1.0) - m(c) * (m(c) + 1.0)).sqrt()
        } else {
            0.0
        }
    };
    let sx = Mat::from_fn(d, d, |r, c| {
        C64::new(0.5 * (splus(r, c) + splus(c, r)), 0.0)
    });
    let sy = Mat::from_fn(d, d, |r, c| {
        C64::new(0.0, -0.5 * (splus(r, c) - splus(c, r)))
    });
    let sz = Mat::from_fn(d, d, |r, c| C64::new(if r == c { m(r) } else { 0.0 }, 0.0));
    [sx, sy, sz]
}

/// Pauli matrices (X, Y, Z).
pub fn pauli() -> [Mat<C64>; 3] {
    spin_matrices(1).map(|m| Mat::from_fn(2, 2, |r, c| m[(r, c)] * 2.0))
}
