//! Numerical self-checks run by `dsl selfcheck`.

use std::f64::consts::PI;

use dsl_core::fieldline::CoefficientTrace;
use dsl_core::gradflow::fd_check;
use dsl_core::learner::{DslModel, LossKind, ModelConfig, SolverOptions};
use dsl_core::slcore::{
    count_sign_changes, eigen_bounds, eval_basis_with, fd_oracle, orthogonality_gram, solve_nth,
    spectrum, ShootingOptions,
};
use dsl_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub passed: bool,
    pub detail: String,
}

const TIGHT: ShootingOptions = ShootingOptions {
    tol_lambda: 1e-11,
    substeps: 4,
};

/// Smooth coefficients from three random sinusoids each; p, w in [0.5, 2],
/// q in [-5, 5].
pub fn random_trace(seed: u64, knots: usize, d: usize) -> Result<CoefficientTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut smooth = |lo: f64, hi: f64| {
        let terms: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(0.0..6.3),
                )
            })
            .collect();
        move |t: f64| {
            let s: f64 = terms
                .iter()
                .map(|(a, f, ph)| a * (f * t + ph).sin())
                .sum::<f64>()
                / 3.0;
            lo + (hi - lo) * 0.5 * (1.0 + s)
        }
    };
    let p = smooth(0.5, 2.0);
    let q = smooth(-5.0, 5.0);
    let w = smooth(0.5, 2.0);
    let t_minus = rng.gen_range(-0.5..0.0);
    let t_plus = t_minus + rng.gen_range(0.6..1.4);
    CoefficientTrace::from_fn(t_minus, t_plus, knots, d, |t| (p(t), q(t), w(t)))
}

fn report(suite: &'static str, r: Result<(bool, String)>) -> SuiteReport {
    match r {
        Ok((passed, detail)) => SuiteReport {
            suite,
            passed,
            detail,
        },
        Err(e) => SuiteReport {
            suite,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn analytic() -> Result<(bool, String)> {
    let tr = CoefficientTrace::constant(0.0, 1.0, 200, 1.0, 0.0, 1.0, 6)?;
    let mut worst_l = 0.0f64;
    let mut worst_u = 0.0f64;
    let s = spectrum(&tr, 6, &TIGHT)?;
    let b = eval_basis_with(&tr, &s, 401, TIGHT.substeps)?;
    for n in 1..=6 {
        let exact = (n as f64 * PI).powi(2);
        worst_l = worst_l.max((s.lambdas[n - 1] - exact).abs() / exact);
        for (j, &t) in b.times.iter().enumerate() {
            let e = (n as f64 * PI * t).sin() / (n as f64 * PI);
            worst_u = worst_u.max((b.u[(n - 1, j)] - e).abs());
        }
    }
    let shifted = CoefficientTrace::constant(0.0, 1.0, 200, 1.0, 5.0, 1.0, 1)?;
    let l1 = solve_nth(&shifted, 1, &TIGHT)?;
    let shift_err = (l1 - (PI * PI + 5.0)).abs() / (PI * PI + 5.0);
    let passed = worst_l < 1e-6 && worst_u < 1e-4 && shift_err < 1e-6;
    Ok((
        passed,
        format!("eigenvalue rel err {worst_l:.2e}, eigenfunction sup err {worst_u:.2e}, shift rel err {shift_err:.2e}"),
    ))
}

fn bounds() -> Result<(bool, String)> {
    let mut contained = 0;
    let mut total = 0;
    let mut worst_fd = 0.0f64;
    for seed in 0..10 {
        let tr = random_trace(seed, 200, 6)?;
        let s = spectrum(&tr, 6, &TIGHT)?;
        let fd = fd_oracle(&tr, 6, 2000);
        for n in 1..=6 {
            let (lo, hi) = eigen_bounds(&tr, n);
            let l = s.lambdas[n - 1];
            total += 1;
            if lo <= l && l <= hi {
                contained += 1;
            }
            worst_fd = worst_fd.max((l - fd[n - 1]).abs() / fd[n - 1].abs().max(1.0));
        }
    }
    Ok((
        contained == total && worst_fd < 1e-3,
        format!("{contained}/{total} inside bounds, finite-difference rel err {worst_fd:.2e}"),
    ))
}

fn orthogonality() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut nodal_ok = true;
    for seed in 0..5 {
        let tr = random_trace(50 + seed, 200, 6)?;
        let s = spectrum(&tr, 6, &TIGHT)?;
        let b = eval_basis_with(&tr, &s, 2001, TIGHT.substeps)?;
        let g = orthogonality_gram(&tr, &b);
        for i in 0..6 {
            let row: Vec<f64> = b.u.row(i).iter().copied().collect();
            nodal_ok &= count_sign_changes(&row[1..row.len() - 1]) == i;
            for j in 0..6 {
                if i != j {
                    worst = worst.max(g[(i, j)].abs() / (g[(i, i)] * g[(j, j)]).sqrt());
                }
            }
        }
    }
    Ok((
        worst < 1e-3 && nodal_ok,
        format!(
            "max normalized off-diagonal {worst:.2e}, nodal counts {}",
            if nodal_ok { "ok" } else { "wrong" }
        ),
    ))
}

fn gradients() -> Result<(bool, String)> {
    let cfg = ModelConfig {
        d: 2,
        a_hidden: vec![4],
        coef_hidden: vec![4],
        ..ModelConfig::default()
    };
    let model = DslModel::new(2, 2, &cfg, 1)?;
    let r = fd_check(
        &model,
        &[0.4, 0.6],
        1,
        LossKind::CrossEntropy,
        1e-4,
        1e-5,
        &SolverOptions::finite_difference(50),
    )?;
    let frac = r.fraction_within(1e-3);
    Ok((
        frac >= 0.99 && r.max_rel <= 1e-2,
        format!(
            "{:.1}% of {} parameters within 1e-3, max rel err {:.2e}",
            100.0 * frac,
            r.rel_errors.len(),
            r.max_rel
        ),
    ))
}

pub fn run_all(with_gradients: bool) -> Vec<SuiteReport> {
    let mut out = vec![
        report("analytic eigenpairs", analytic()),
        report("eigenvalue bounds", bounds()),
        report("orthogonality", orthogonality()),
    ];
    if with_gradients {
        out.push(report("implicit gradients", gradients()));
    }
    out
}
