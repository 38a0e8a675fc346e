//! Sturm-Liouville eigenproblem −(p u')' + q u = λ w u with Dirichlet ends on
//! a piecewise-linear [`CoefficientTrace`].

pub mod fd_oracle;
pub(crate) mod shoot;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{DslError, Result};
use crate::fieldline::CoefficientTrace;
use shoot::{CoefView, Step};

pub use fd_oracle::fd_oracle;

/// Number of bracket doublings attempted on each side before giving up.
pub const MAX_BRACKET_EXPANSIONS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShootingOptions {
    /// Bisection stops when the bracket is below `tol_lambda * max(1, |λ|)`,
    /// with |λ| the smaller endpoint magnitude of the current bracket.
    pub tol_lambda: f64,
    /// Multiplier on the number of RK4 steps per knot interval.
    pub substeps: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            tol_lambda: 1e-6,
            substeps: 1,
        }
    }
}

impl ShootingOptions {
    pub fn with_tol(tol_lambda: f64) -> Self {
        Self {
            tol_lambda,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub d: usize,
    pub lambdas: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    /// |θ(t_plus) − nπ| at each returned eigenvalue.
    pub residuals: Vec<f64>,
    pub tol_lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisEval {
    pub times: Vec<f64>,
    /// Row n − 1 holds u_n on `times`.
    pub u: DMatrix<f64>,
    pub du: DMatrix<f64>,
    /// u_n at the readout time of the trace.
    pub u_at_zero: Vec<f64>,
}

pub(crate) fn view(trace: &CoefficientTrace) -> CoefView<'_, f64> {
    CoefView {
        ip: &trace.inv_p,
        q: &trace.q,
        w: &trace.w,
    }
}

/// Integration steps over the whole trace at eigenvalue parameter `lambda`.
pub(crate) fn full_plan(trace: &CoefficientTrace, lambda: f64, substeps: usize) -> Vec<Step<f64>> {
    let per = shoot::resolution(&view(trace), lambda, trace.spacing(), substeps);
    shoot::plan(0.0, trace.knots() as f64, &per)
}

/// Initial state (u, p u') for basis function `n` (1-based).
pub(crate) fn initial_state(trace: &CoefficientTrace, n: usize) -> [f64; 2] {
    [0.0, trace.v0[n - 1] / trace.inv_p[0]]
}

/// Bounds on λ_n from the extreme knot values of the coefficients.
pub fn eigen_bounds(trace: &CoefficientTrace, n: usize) -> (f64, f64) {
    let h = trace.spacing();
    let ip = &trace.inv_p;
    let integral: f64 = ip.windows(2).map(|s| 0.5 * h * (s[0] + s[1])).sum();
    let wp: Vec<f64> = trace.w.iter().zip(ip).map(|(w, i)| w / i).collect();
    let qw: Vec<f64> = trace.q.iter().zip(&trace.w).map(|(q, w)| q / w).collect();
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = (n as f64 * PI).powi(2) / (integral * integral);
    (base / max(&wp) + min(&qw), base / min(&wp) + max(&qw))
}

/// g(λ) = θ(t_plus) − nπ for the Prüfer angle started at θ(t_minus) = 0.
pub fn pruefer_residual(trace: &CoefficientTrace, lambda: f64, n: usize) -> f64 {
    pruefer_residual_with(trace, lambda, n, 1)
}

pub fn pruefer_residual_with(
    trace: &CoefficientTrace,
    lambda: f64,
    n: usize,
    substeps: usize,
) -> f64 {
    let steps = full_plan(trace, lambda, substeps);
    shoot::pruefer_angle(&view(trace), lambda, trace.spacing(), &steps) - n as f64 * PI
}

/// λ_n by bisection on the Prüfer residual, finished with a secant step
/// inside the final bracket.
pub fn solve_nth(trace: &CoefficientTrace, n: usize, opts: &ShootingOptions) -> Result<f64> {
    solve_nth_detailed(trace, n, opts).map(|(l, _, _)| l)
}

fn solve_nth_detailed(
    trace: &CoefficientTrace,
    n: usize,
    opts: &ShootingOptions,
) -> Result<(f64, (f64, f64), f64)> {
    if n == 0 {
        return Err(DslError::InvalidInput("eigen-index starts at 1".into()));
    }
    let g = |l: f64| pruefer_residual_with(trace, l, n, opts.substeps);
    let bounds = eigen_bounds(trace, n);
    let (mut lo, mut hi) = bounds;
    let scale = hi.abs().max(1.0);
    let mut g_lo = g(lo);
    let mut g_hi = g(hi);

    let mut step = (hi - lo).max(1e-6 * scale);
    let mut tries = 0;
    while g_lo > 0.0 && tries < MAX_BRACKET_EXPANSIONS {
        lo -= step;
        step *= 2.0;
        g_lo = g(lo);
        tries += 1;
    }
    let mut step = (hi - lo).max(1e-6 * scale);
    let mut tries = 0;
    while g_hi < 0.0 && tries < MAX_BRACKET_EXPANSIONS {
        hi += step;
        step *= 2.0;
        g_hi = g(hi);
        tries += 1;
    }
    if !(g_lo <= 0.0 && g_hi >= 0.0) {
        return Err(DslError::BracketFailure {
            n,
            lo,
            hi,
            g_lo,
            g_hi,
        });
    }

    while hi - lo > opts.tol_lambda * lo.abs().min(hi.abs()).max(1.0) {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if gm < 0.0 {
            lo = mid;
            g_lo = gm;
        } else {
            hi = mid;
            g_hi = gm;
        }
    }
    let lambda = polish(&g, lo, hi, g_lo, g_hi);
    Ok((lambda, bounds, g(lambda).abs()))
}

/// Illinois regula falsi inside a sign-change bracket, run to near machine
/// precision. Readouts far from the bulk of an eigenfunction grow like
/// exp(c/Δλ) in the λ error, so the binary search tolerance alone is not
/// enough for accurate values or gradients.
fn polish(g: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut g_lo: f64, mut g_hi: f64) -> f64 {
    if !(hi > lo) {
        return 0.5 * (lo + hi);
    }
    let mut side = 0i8;
    for _ in 0..POLISH_ITERS {
        if hi - lo <= POLISH_REL * lo.abs().max(hi.abs()).max(1.0) || !(g_hi > g_lo) {
            break;
        }
        let x = lo - g_lo * (hi - lo) / (g_hi - g_lo);
        let x = if x > lo && x < hi { x } else { 0.5 * (lo + hi) };
        if !(x > lo && x < hi) {
            break;
        }
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx < 0.0 {
            lo = x;
            g_lo = gx;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = x;
            g_hi = gx;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    if g_hi > g_lo {
        (lo - g_lo * (hi - lo) / (g_hi - g_lo)).clamp(lo, hi)
    } else {
        0.5 * (lo + hi)
    }
}

const POLISH_ITERS: usize = 60;
const POLISH_REL: f64 = 4.0 * f64::EPSILON;

/// The `d` smallest eigenvalues.
pub fn spectrum(trace: &CoefficientTrace, d: usize, opts: &ShootingOptions) -> Result<Spectrum> {
    if d == 0 {
        return Err(DslError::InvalidInput(
            "spectrum size must be at least 1".into(),
        ));
    }
    let mut lambdas = Vec::with_capacity(d);
    let mut bounds = Vec::with_capacity(d);
    let mut residuals = Vec::with_capacity(d);
    for n in 1..=d {
        let (l, b, r) = solve_nth_detailed(trace, n, opts)?;
        if let Some(&prev) = lambdas.last() {
            if !(l > prev) {
                return Err(DslError::InvalidInput(format!(
                    "eigenvalues not strictly increasing at n = {n}: {prev} then {l}"
                )));
            }
        }
        lambdas.push(l);
        bounds.push(b);
        residuals.push(r);
    }
    Ok(Spectrum {
        d,
        lambdas,
        bounds,
        residuals,
        tol_lambda: opts.tol_lambda,
    })
}

/// (u, p u') of basis function `n` at knot coordinate `s`, on the same step
/// sequence as the full-trace integration at `lambda`.
pub(crate) fn state_at(
    trace: &CoefficientTrace,
    lambda: f64,
    n: usize,
    s: f64,
    substeps: usize,
) -> [f64; 2] {
    let steps = full_plan(trace, lambda, substeps);
    shoot::march_to(
        &view(trace),
        lambda,
        trace.spacing(),
        initial_state(trace, n),
        &steps,
        s,
    )
}

/// u_n(t_eval) and u_n(t_plus) for each eigenvalue.
pub fn readout(trace: &CoefficientTrace, spec: &Spectrum, substeps: usize) -> (Vec<f64>, Vec<f64>) {
    let s_eval = trace.knot_coord(trace.t_eval);
    let c = view(trace);
    spec.lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let steps = full_plan(trace, l, substeps);
            let y0 = initial_state(trace, i + 1);
            let (a, b) = shoot::march_readout(&c, l, trace.spacing(), y0, &steps, s_eval);
            (a[0], b[0])
        })
        .unzip()
}

/// Eigenfunctions and derivatives on a uniform grid of `grid_size` points.
pub fn eval_basis(
    trace: &CoefficientTrace,
    spec: &Spectrum,
    grid_size: usize,
) -> Result<BasisEval> {
    eval_basis_with(trace, spec, grid_size, 1)
}

pub fn eval_basis_with(
    trace: &CoefficientTrace,
    spec: &Spectrum,
    grid_size: usize,
    substeps: usize,
) -> Result<BasisEval> {
    if grid_size < 2 {
        return Err(DslError::InvalidInput(
            "basis grid needs at least 2 points".into(),
        ));
    }
    if spec.lambdas.len() > trace.v0.len() {
        return Err(DslError::ShapeMismatch {
            context: "initial slopes",
            expected: spec.lambdas.len(),
            got: trace.v0.len(),
        });
    }
    let d = spec.lambdas.len();
    let c = view(trace);
    let delta = trace.spacing();
    let k = trace.knots() as f64;
    let coords: Vec<f64> = (0..grid_size)
        .map(|i| k * i as f64 / (grid_size - 1) as f64)
        .collect();
    let times: Vec<f64> = coords
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if i + 1 == grid_size {
                trace.t_plus
            } else {
                trace.t_minus + s * delta
            }
        })
        .collect();
    let mut u = DMatrix::zeros(d, grid_size);
    let mut du = DMatrix::zeros(d, grid_size);
    let mut u_at_zero = Vec::with_capacity(d);
    for (i, &lambda) in spec.lambdas.iter().enumerate() {
        let steps = full_plan(trace, lambda, substeps);
        let mut y = initial_state(trace, i + 1);
        let mut next = 0;
        for j in 0..grid_size {
            while next < steps.len()
                && steps[next].k as f64 + steps[next].sigma0 + steps[next].h <= coords[j]
            {
                let st = &steps[next];
                y = shoot::sl_step(
                    c.at(st.k),
                    c.at(st.k + 1),
                    st.sigma0,
                    st.h,
                    lambda,
                    delta,
                    y,
                );
                next += 1;
            }
            let yj = if j + 1 == grid_size {
                shoot::march(&c, lambda, delta, y, &steps[next..])
            } else {
                shoot::march_to(&c, lambda, delta, y, &steps[next..], coords[j])
            };
            u[(i, j)] = yj[0];
            du[(i, j)] = trace.inv_p_at(times[j]) * yj[1];
        }
        u_at_zero.push(
            state_at(
                trace,
                lambda,
                i + 1,
                trace.knot_coord(trace.t_eval),
                substeps,
            )[0],
        );
    }
    Ok(BasisEval {
        times,
        u,
        du,
        u_at_zero,
    })
}

/// Strict sign alternations, ignoring entries below 1e-8 · max |value|.
pub fn count_sign_changes(values: &[f64]) -> usize {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let band = 1e-8 * scale;
    let mut last = 0.0f64;
    let mut count = 0;
    for &v in values {
        if v.abs() <= band || v.is_nan() {
            continue;
        }
        if last != 0.0 && (v > 0.0) != (last > 0.0) {
            count += 1;
        }
        last = v;
    }
    count
}

/// G_ij = ∫ w u_i u_j dt by the trapezoid rule on the basis grid.
pub fn orthogonality_gram(trace: &CoefficientTrace, basis: &BasisEval) -> DMatrix<f64> {
    let d = basis.u.nrows();
    let n = basis.times.len();
    let w: Vec<f64> = basis.times.iter().map(|&t| trace.w_at(t)).collect();
    let mut weights = vec![0.0; n];
    for j in 0..n.saturating_sub(1) {
        let h = basis.times[j + 1] - basis.times[j];
        weights[j] += 0.5 * h;
        weights[j + 1] += 0.5 * h;
    }
    DMatrix::from_fn(d, d, |a, b| {
        (0..n)
            .map(|j| weights[j] * w[j] * basis.u[(a, j)] * basis.u[(b, j)])
            .sum()
    })
}
