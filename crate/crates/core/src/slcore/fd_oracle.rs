//! Finite-difference eigenvalues, independent of the shooting solver.
//!
//! −(p u')' + q u = λ w u is discretized with central differences and p taken
//! at cell midpoints. The generalized problem A u = λ W u is symmetrized to
//! W^{-1/2} A W^{-1/2}, a symmetric tridiagonal matrix whose eigenvalues are
//! located by Sturm-sequence bisection.

use crate::fieldline::CoefficientTrace;

/// The `d` smallest eigenvalues on a mesh of `mesh_size` intervals.
pub fn fd_oracle(trace: &CoefficientTrace, d: usize, mesh_size: usize) -> Vec<f64> {
    let n = mesh_size.max(3) - 1;
    let h = trace.length() / mesh_size as f64;
    let t = |i: f64| trace.t_minus + h * i;
    let p_half: Vec<f64> = (0..=n).map(|i| trace.p_at(t(i as f64 + 0.5))).collect();
    let w: Vec<f64> = (1..=n).map(|i| trace.w_at(t(i as f64))).collect();
    let diag: Vec<f64> = (0..n)
        .map(|i| ((p_half[i] + p_half[i + 1]) / (h * h) + trace.q_at(t((i + 1) as f64))) / w[i])
        .collect();
    let off: Vec<f64> = (0..n - 1)
        .map(|i| -p_half[i + 1] / (h * h) / (w[i] * w[i + 1]).sqrt())
        .collect();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r =
            if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < n { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - r);
        hi = hi.max(diag[i] + r);
    }
    (0..d.min(n))
        .map(|k| kth_eigenvalue(&diag, &off, k, lo, hi))
        .collect()
}

/// Eigenvalues strictly below `x` (Sturm count via the LDLᵀ pivots).
fn count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut pivot = 1.0;
    for i in 0..diag.len() {
        let e2 = if i > 0 { off[i - 1] * off[i - 1] } else { 0.0 };
        pivot = diag[i] - x - if i > 0 { e2 / pivot } else { 0.0 };
        if pivot == 0.0 {
            pivot = -f64::EPSILON * (diag[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if pivot < 0.0 {
            count += 1;
        }
    }
    count
}

fn kth_eigenvalue(diag: &[f64], off: &[f64], k: usize, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        if count_below(diag, off, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_first_mode() {
        let tr = CoefficientTrace::constant(0.0, 1.0, 10, 1.0, 0.0, 1.0, 1).unwrap();
        let l = fd_oracle(&tr, 3, 2000);
        assert!((l[0] - PI * PI).abs() < 1e-5 * PI * PI);
        // discrete eigenvalues of the constant problem are 4/h² sin²(nπh/2)
        let h = 1.0 / 2000.0;
        for (i, v) in l.iter().enumerate() {
            let exact = 4.0 / (h * h) * ((i + 1) as f64 * PI * h / 2.0).sin().powi(2);
            assert!((v - exact).abs() < 1e-9 * exact);
        }
    }

    #[test]
    fn second_order_convergence() {
        let tr = CoefficientTrace::constant(0.0, 1.0, 10, 1.0, 0.0, 1.0, 1).unwrap();
        let e1 = (fd_oracle(&tr, 1, 200)[0] - PI * PI).abs();
        let e2 = (fd_oracle(&tr, 1, 400)[0] - PI * PI).abs();
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn sturm_count_matches_dense() {
        let diag = [2.0, 3.0, 1.0, 4.0];
        let off = [0.5, -1.0, 0.25];
        let m = nalgebra::DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                diag[i]
            } else if i + 1 == j {
                off[i]
            } else if j + 1 == i {
                off[j]
            } else {
                0.0
            }
        });
        let mut ev: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for k in 0..4 {
            let v = kth_eigenvalue(&diag, &off, k, -10.0, 10.0);
            assert!((v - ev[k]).abs() < 1e-12);
        }
    }
}
