//! Training gradients through the eigenvalue solve and the exit times.
//!
//! With ψ = (λ_1..λ_d, t_minus, t_plus) and the mapping
//! H = (u_1(t_plus), .., u_d(t_plus), min_j γ_j(t_minus), max_j γ_j(t_plus) − 1),
//! the converged forward pass satisfies H(θ, ψ) = 0, so
//! dψ/dθ = −J_ψ⁻¹ ∂H/∂θ. The loss gradient is assembled as one reverse pass
//! with cotangent c on u(0) and −μ on H, where J_ψᵀ μ = ∂loss/∂ψ.
//!
//! All partial derivatives are taken of the discretized computation: fixed
//! knot grid and fixed RK4 step sequence.

mod adjoint;

use nalgebra::{DMatrix, DVector};

use crate::dual::Dual;
use crate::error::{DslError, Result};
use crate::fieldline::{argmax_coord, argmin_coord, max_coord, min_coord, CoefficientTrace};
use crate::learner::model::{Block, DslModel, Formulation, ForwardCache, SolverOptions};
use crate::learner::{self, LossKind};
use crate::odeint::{self, DenseSolution};
use crate::slcore::{self, shoot};

/// Above this condition number of the equilibrated J_ψ the Jacobian is
/// treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct ImplicitState {
    pub psi: Vec<f64>,
    pub h: Vec<f64>,
    pub j_psi: DMatrix<f64>,
    pub condition_estimate: f64,
}

/// Ratio of extreme singular values.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 && max.is_finite() {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Rows, then columns, scaled to unit max-norm. Unnormalized eigenfunctions
/// make the rows of J_ψ differ by many orders of magnitude on long field
/// lines; the diagonal scaling does not change the solve but does change the
/// plain condition number.
pub fn equilibrate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let s = row.amax();
        if s > 0.0 {
            row /= s;
        }
    }
    for mut col in out.column_iter_mut() {
        let s = col.amax();
        if s > 0.0 {
            col /= s;
        }
    }
    out
}

/// μ with J_ψᵀ μ = cotangent, i.e. cotangentᵀ J_ψ⁻¹.
pub fn solve_adjoint(state: &ImplicitState, cotangent: &[f64]) -> Result<Vec<f64>> {
    let n = state.j_psi.nrows();
    if cotangent.len() != n {
        return Err(DslError::ShapeMismatch {
            context: "adjoint cotangent",
            expected: n,
            got: cotangent.len(),
        });
    }
    if !(state.condition_estimate <= MAX_CONDITION) {
        return Err(DslError::SingularJacobian {
            condition: state.condition_estimate,
        });
    }
    let rhs = DVector::from_column_slice(cotangent);
    state
        .j_psi
        .transpose()
        .lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .ok_or(DslError::SingularJacobian {
            condition: state.condition_estimate,
        })
}

fn psi_len(model: &DslModel) -> usize {
    match model.formulation {
        Formulation::FieldLine => model.d + 2,
        Formulation::FixedInterval => model.d,
    }
}

/// u_k(t_plus) at the given λ_k, plus the exit residuals at the given times.
/// γ is re-integrated from x to the supplied t_minus and t_plus; nothing is
/// re-solved.
pub fn mapping_residual(
    model: &DslModel,
    x: &[f64],
    psi: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<f64>> {
    let d = model.d;
    if psi.len() != psi_len(model) {
        return Err(DslError::ShapeMismatch {
            context: "psi",
            expected: psi_len(model),
            got: psi.len(),
        });
    }
    let (trace, exits) = match model.formulation {
        Formulation::FieldLine => {
            let (tm, tp) = (psi[d], psi[d + 1]);
            if !(tm < 0.0 && 0.0 < tp) {
                return Err(DslError::InvalidInput(format!(
                    "psi times must bracket 0, got ({tm}, {tp})"
                )));
            }
            let a = model
                .a_net
                .as_ref()
                .expect("field-line model has a vector field");
            let rhs = |_: f64, z: &[f64], dz: &mut [f64]| {
                dz.copy_from_slice(&a.forward(z).expect("shape checked"))
            };
            let fwd = odeint::integrate(rhs, x, 0.0, tp, &opts.trace.ode)?;
            let bwd = odeint::integrate(rhs, x, 0.0, tm, &opts.trace.ode)?;
            let at = |t: f64| -> Vec<f64> {
                let sol: &DenseSolution = if t >= 0.0 { &fwd } else { &bwd };
                sol.eval(t)
            };
            let kn = opts.knots;
            let dt = (tp - tm) / kn as f64;
            let inputs: Vec<Vec<f64>> = (0..=kn)
                .map(|k| match k {
                    0 => bwd.y_end().to_vec(),
                    k if k == kn => fwd.y_end().to_vec(),
                    k => at(tm + dt * k as f64),
                })
                .collect();
            let exits = [min_coord(&inputs[0]), max_coord(&inputs[kn]) - 1.0];
            let nets = crate::fieldline::CoefficientNets {
                inv_p: &model.inv_p_net,
                q: &model.q_net,
                w: &model.w_net,
                v: model.slope_source(),
            };
            let tr = crate::fieldline::coefficients_at(&inputs, &nets, tm, tp, 0.0, d)?;
            (tr, Some(exits))
        }
        Formulation::FixedInterval => {
            let (_, _, tr) = model.coefficient_trace(x, opts)?;
            (tr, None)
        }
    };
    let mut h: Vec<f64> = (0..d)
        .map(|i| {
            let s = trace.knots() as f64;
            slcore::state_at(&trace, psi[i], i + 1, s, opts.shooting.substeps)[0]
        })
        .collect();
    if let Some(e) = exits {
        h.extend_from_slice(&e);
    }
    Ok(h)
}

/// J_ψ plus the ψ-sensitivity of u(0), rows per eigen-index.
struct PsiJacobian {
    state: ImplicitState,
    du0: DMatrix<f64>,
    jmin: usize,
    jmax: usize,
}

/// Directional derivatives of the knot values (1/p, q, w) and of v0 along
/// t_minus and t_plus, from γ'(τ_k) = a(γ(τ_k)).
struct KnotTangents {
    coef: Vec<[[f64; 2]; 3]>,
    v0: Vec<[f64; 2]>,
    a_first: Vec<f64>,
    a_last: Vec<f64>,
}

fn knot_tangents(
    model: &DslModel,
    cache: &ForwardCache,
    opts: &SolverOptions,
) -> Result<KnotTangents> {
    let kn = cache.inputs.len() - 1;
    let d = model.d;
    let a = model
        .a_net
        .as_ref()
        .expect("field-line model has a vector field");
    let a_first = a.forward(&cache.inputs[0])?;
    let a_last = a.forward(&cache.inputs[kn])?;
    let mut coef = vec![[[0.0; 2]; 3]; kn + 1];
    let mut v0 = vec![[0.0; 2]; d];
    if !opts.freeze_knot_positions {
        for (k, z) in cache.inputs.iter().enumerate() {
            let vel = a.forward(z)?;
            let frac = k as f64 / kn as f64;
            for (j, net) in [&model.inv_p_net, &model.q_net, &model.w_net]
                .iter()
                .enumerate()
            {
                let g = net.jvp(z, &vel)?.1[0];
                coef[k][j] = [g * (1.0 - frac), g * frac];
            }
        }
        if let Some(v) = &model.v_net {
            let g = v.jvp(&cache.inputs[0], &a_first)?.1;
            for i in 0..d {
                v0[i] = [g[i], 0.0];
            }
        }
    }
    Ok(KnotTangents {
        coef,
        v0,
        a_first,
        a_last,
    })
}

fn psi_jacobian(
    model: &DslModel,
    cache: &ForwardCache,
    opts: &SolverOptions,
) -> Result<PsiJacobian> {
    type D = Dual<3>;
    let d = model.d;
    let tr = &cache.trace;
    let kn = tr.knots();
    let field = model.formulation == Formulation::FieldLine;
    let np = psi_len(model);

    let tangents = if field {
        Some(knot_tangents(model, cache, opts)?)
    } else {
        None
    };
    let lift = |vals: &[f64], j: usize| -> Vec<D> {
        vals.iter()
            .enumerate()
            .map(|(k, &v)| match &tangents {
                Some(t) => D::with_tangent(v, [0.0, t.coef[k][j][0], t.coef[k][j][1]]),
                None => D::constant(v),
            })
            .collect()
    };
    let ip = lift(&tr.inv_p, 0);
    let q = lift(&tr.q, 1);
    let w = lift(&tr.w, 2);
    let view = shoot::CoefView {
        ip: &ip,
        q: &q,
        w: &w,
    };
    let k_f = kn as f64;
    let (delta, s_eval) = if field {
        let delta = D::with_tangent(tr.spacing(), [0.0, -1.0 / k_f, 1.0 / k_f]);
        let tm = D::with_tangent(tr.t_minus, [0.0, 1.0, 0.0]);
        (delta, (D::constant(tr.t_eval) - tm) / delta)
    } else {
        (
            D::constant(tr.spacing()),
            D::constant(tr.knot_coord(tr.t_eval)),
        )
    };

    let mut j = DMatrix::zeros(np, np);
    let mut du0 = DMatrix::zeros(d, np);
    let mut h = Vec::with_capacity(np);
    for i in 0..d {
        let lambda = cache.spectrum.lambdas[i];
        let steps = slcore::full_plan(tr, lambda, opts.shooting.substeps);
        let v0 = match &tangents {
            Some(t) => D::with_tangent(tr.v0[i], [0.0, t.v0[i][0], t.v0[i][1]]),
            None => D::constant(tr.v0[i]),
        };
        let y0 = [D::constant(0.0), v0 / ip[0]];
        let (at_s, end) =
            shoot::march_readout(&view, D::variable(lambda, 0), delta, y0, &steps, s_eval);
        h.push(end[0].re);
        j[(i, i)] = end[0].eps[0];
        du0[(i, i)] = at_s[0].eps[0];
        if field {
            for c in 0..2 {
                j[(i, d + c)] = end[0].eps[1 + c];
                du0[(i, d + c)] = at_s[0].eps[1 + c];
            }
        }
    }
    let mut psi = cache.spectrum.lambdas.clone();
    let (mut jmin, mut jmax) = (0, 0);
    if let Some(t) = &tangents {
        let first = &cache.inputs[0];
        let last = &cache.inputs[kn];
        jmin = argmin_coord(first);
        jmax = argmax_coord(last);
        j[(d, d)] = t.a_first[jmin];
        j[(d + 1, d + 1)] = t.a_last[jmax];
        h.push(first[jmin]);
        h.push(last[jmax] - 1.0);
        psi.push(tr.t_minus);
        psi.push(tr.t_plus);
    }
    let condition_estimate = condition_number(&equilibrate(&j));
    Ok(PsiJacobian {
        state: ImplicitState {
            psi,
            h,
            j_psi: j,
            condition_estimate,
        },
        du0,
        jmin,
        jmax,
    })
}

/// J_ψ and H at a converged forward pass.
pub fn implicit_state(
    model: &DslModel,
    cache: &ForwardCache,
    opts: &SolverOptions,
) -> Result<ImplicitState> {
    Ok(psi_jacobian(model, cache, opts)?.state)
}

/// Loss sensitivities handed to [`implicit_grad`].
#[derive(Clone, Debug, PartialEq)]
pub struct Upstream {
    /// ∂loss/∂logits.
    pub logits: Vec<f64>,
    /// Direct ∂loss/∂λ_i (spectral penalty).
    pub lambdas: Vec<f64>,
}

/// Gradient of the loss w.r.t. every model parameter for one sample.
pub fn implicit_grad(
    model: &DslModel,
    cache: &ForwardCache,
    upstream: &Upstream,
    opts: &SolverOptions,
) -> Result<DslModel> {
    let d = model.d;
    let mut grad = model.zeros_like();
    if upstream.logits.len() != model.k || upstream.lambdas.len() != d {
        return Err(DslError::ShapeMismatch {
            context: "upstream gradient",
            expected: model.k + d,
            got: upstream.logits.len() + upstream.lambdas.len(),
        });
    }
    // linear head
    let mut c = vec![0.0; d];
    for (r, &g) in upstream.logits.iter().enumerate() {
        for i in 0..d {
            grad.head_l[r * d + i] = g * cache.u_at_zero[i];
            c[i] += g * model.head_l[r * d + i];
        }
    }
    if let Some(b) = &mut grad.head_bias {
        b.copy_from_slice(&upstream.logits);
    }
    if c.iter().chain(&upstream.lambdas).all(|&v| v == 0.0) {
        return Ok(grad);
    }

    let pj = psi_jacobian(model, cache, opts)?;
    let np = psi_len(model);
    let mut r = vec![0.0; np];
    for (col, rv) in r.iter_mut().enumerate() {
        *rv = (0..d).map(|i| c[i] * pj.du0[(i, col)]).sum();
    }
    for i in 0..d {
        r[i] += upstream.lambdas[i];
    }
    let mu = solve_adjoint(&pj.state, &r)?;

    // reverse pass through the shooting marches
    let tr = &cache.trace;
    let kn = tr.knots();
    let view = slcore::view(tr);
    let mut kb = vec![[0.0; 3]; kn + 1];
    let mut vb = vec![0.0; d];
    let s_eval = tr.knot_coord(tr.t_eval);
    for i in 0..d {
        let lambda = cache.spectrum.lambdas[i];
        let steps = slcore::full_plan(tr, lambda, opts.shooting.substeps);
        let y0 = slcore::initial_state(tr, i + 1);
        let yb = adjoint::sl_vjp(
            &view,
            lambda,
            tr.spacing(),
            y0,
            &steps,
            s_eval,
            c[i],
            -mu[i],
            &mut kb,
        );
        // y0 = (0, v0 / ip_0)
        vb[i] += yb[1] / tr.inv_p[0];
        kb[0][0] -= yb[1] * tr.v0[i] / (tr.inv_p[0] * tr.inv_p[0]);
    }

    // knot values -> coefficient networks (and knot positions)
    let field = model.formulation == Formulation::FieldLine;
    let mut zbar: Vec<Vec<f64>> = vec![vec![0.0; model.n]; if field { kn + 1 } else { 0 }];
    for (k, z) in cache.inputs.iter().enumerate() {
        let nets = [
            (&model.inv_p_net, &mut grad.inv_p_net),
            (&model.q_net, &mut grad.q_net),
            (&model.w_net, &mut grad.w_net),
        ];
        for (j, (net, g)) in nets.into_iter().enumerate() {
            let gz = net.backprop_into(z, &[kb[k][j]], g)?;
            if field && !opts.freeze_knot_positions {
                for (zb, v) in zbar[k].iter_mut().zip(&gz) {
                    *zb += v;
                }
            }
        }
    }
    if let (Some(v), Some(g)) = (&model.v_net, &mut grad.v_net) {
        let gz = v.backprop_into(&cache.inputs[0], &vb, g)?;
        if !opts.freeze_knot_positions {
            for (zb, v) in zbar[0].iter_mut().zip(&gz) {
                *zb += v;
            }
        }
    }

    if field {
        zbar[0][pj.jmin] -= mu[d];
        zbar[kn][pj.jmax] -= mu[d + 1];
        let a = model
            .a_net
            .as_ref()
            .expect("field-line model has a vector field");
        let ga = grad.a_net.as_mut().expect("same structure");
        adjoint::field_vjp(a, &cache.x, tr.t_minus, tr.t_plus, &zbar, ga)?;
    }
    Ok(grad)
}

/// Analytic and central-difference gradients of the per-sample objective.
#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    /// Largest relative error per parameter block.
    pub blocks: Vec<(Block, f64)>,
    pub max_rel: f64,
}

impl FdReport {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        let n = self.rel_errors.len().max(1);
        self.rel_errors.iter().filter(|&&e| e <= tol).count() as f64 / n as f64
    }
}

/// Relative error with a floor at 1e-6 of the largest reference entry, so
/// that entries which are zero up to round-off compare on an absolute scale.
pub fn relative_errors(analytic: &[f64], numeric: &[f64]) -> Vec<f64> {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-6 * scale).max(f64::MIN_POSITIVE);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect()
}

/// Compare [`implicit_grad`] with central differences of the loss over every
/// parameter of `model`.
pub fn fd_check(
    model: &DslModel,
    x: &[f64],
    label: usize,
    kind: LossKind,
    alpha: f64,
    step: f64,
    opts: &SolverOptions,
) -> Result<FdReport> {
    let (_, analytic) = learner::sample_gradient(model, x, label, kind, alpha, opts)?;
    let analytic = analytic.to_flat();
    let flat = model.to_flat();
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(flat.len());
    let mut eval = |p: &[f64]| -> Result<f64> {
        probe.set_flat(p)?;
        Ok(learner::sample_objective(&probe, x, label, kind, alpha, opts)?.0)
    };
    let mut p = flat.clone();
    for i in 0..flat.len() {
        p[i] = flat[i] + step;
        let up = eval(&p)?;
        p[i] = flat[i] - step;
        let dn = eval(&p)?;
        p[i] = flat[i];
        numeric.push((up - dn) / (2.0 * step));
    }
    let rel_errors = relative_errors(&analytic, &numeric);
    let mut blocks = Vec::new();
    let mut off = 0;
    for (b, n) in model.blocks() {
        let m = rel_errors[off..off + n].iter().copied().fold(0.0, f64::max);
        blocks.push((b, m));
        off += n;
    }
    let max_rel = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(FdReport {
        analytic,
        numeric,
        rel_errors,
        blocks,
        max_rel,
    })
}

/// u_n at an arbitrary time of the trace, on the step sequence of the solve.
pub fn basis_value_at(
    trace: &CoefficientTrace,
    lambda: f64,
    n: usize,
    t: f64,
    substeps: usize,
) -> f64 {
    slcore::state_at(trace, lambda, n, trace.knot_coord(t), substeps)[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(j: DMatrix<f64>) -> ImplicitState {
        let c = condition_number(&j);
        ImplicitState {
            psi: vec![0.0; j.nrows()],
            h: vec![0.0; j.nrows()],
            j_psi: j,
            condition_estimate: c,
        }
    }

    #[test]
    fn identity_and_diagonal_adjoints() {
        let s = state(DMatrix::identity(4, 4));
        assert_eq!(
            solve_adjoint(&s, &[1.0, -2.0, 3.0, 0.5]).unwrap(),
            vec![1.0, -2.0, 3.0, 0.5]
        );
        let s = state(DMatrix::from_diagonal(&DVector::from_vec(vec![
            2.0, 4.0, -0.5,
        ])));
        let mu = solve_adjoint(&s, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(mu, vec![0.5, 0.25, -2.0]);
    }

    #[test]
    fn random_system_residual() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let j = DMatrix::from_fn(
            6,
            6,
            |i, k| if i == k { 3.0 } else { 0.0 } + rng.gen_range(-1.0..1.0),
        );
        let b: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = state(j.clone());
        let mu = DVector::from_vec(solve_adjoint(&s, &b).unwrap());
        let res = j.transpose() * mu - DVector::from_vec(b);
        assert!(res.amax() < 1e-10);
    }

    #[test]
    fn singular_jacobian_reported() {
        let s = state(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert!(matches!(
            solve_adjoint(&s, &[1.0, 1.0]),
            Err(DslError::SingularJacobian { .. })
        ));
    }

    #[test]
    fn scaled_rows_are_not_singular() {
        // row scales like those of long field lines
        let j = DMatrix::from_row_slice(
            3,
            3,
            &[-7.8e13, 0.0, 5.9e12, 0.0, 3.5e2, -11.0, 0.0, 0.0, 0.21],
        );
        assert!(condition_number(&j) > MAX_CONDITION);
        let c = condition_number(&equilibrate(&j));
        assert!(c < 10.0, "{c}");
        let s = ImplicitState {
            condition_estimate: c,
            ..state(j.clone())
        };
        let b = [1.0, -2.0, 0.5];
        let mu = DVector::from_vec(solve_adjoint(&s, &b).unwrap());
        let res = j.transpose() * mu - DVector::from_vec(b.to_vec());
        assert!(res.amax() < 1e-12);
        let zero_row = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(condition_number(&equilibrate(&zero_row)).is_infinite());
    }
}
