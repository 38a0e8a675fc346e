//! Reverse passes through the discretized shooting march and through a
//! fixed-step RK4 integration of the field line.

use crate::dual::Dual;
use crate::error::Result;
use crate::netfuncs::MlpParams;
use crate::slcore::shoot::{self, Coef, CoefView, Step};

/// Largest RK4 step used when differentiating knot positions w.r.t. the
/// vector field network.
pub(crate) const FIELD_STEP: f64 = 0.05;

/// Cotangent of one RK4 step of the (u, p u') system w.r.t. its input state,
/// accumulating coefficient cotangents into `kb[k]`, `kb[k + 1]`.
#[allow(clippy::too_many_arguments)]
fn sl_step_vjp(
    c: &CoefView<'_, f64>,
    k: usize,
    sigma0: f64,
    h: f64,
    lambda: f64,
    delta: f64,
    y: [f64; 2],
    ybar: [f64; 2],
    kb: &mut [[f64; 3]],
) -> [f64; 2] {
    type D = Dual<8>;
    let var = |v: f64, i: usize| D::variable(v, i);
    let c0 = c.at(k);
    let c1 = c.at(k + 1);
    let out = shoot::sl_step(
        Coef {
            ip: var(c0.ip, 2),
            q: var(c0.q, 3),
            w: var(c0.w, 4),
        },
        Coef {
            ip: var(c1.ip, 5),
            q: var(c1.q, 6),
            w: var(c1.w, 7),
        },
        D::constant(sigma0),
        D::constant(h),
        D::constant(lambda),
        D::constant(delta),
        [var(y[0], 0), var(y[1], 1)],
    );
    let g = |a: usize| ybar[0] * out[0].eps[a] + ybar[1] * out[1].eps[a];
    for j in 0..3 {
        kb[k][j] += g(2 + j);
        kb[k + 1][j] += g(5 + j);
    }
    [g(0), g(1)]
}

/// Reverse pass of [`shoot::march_readout`] with cotangents `cot_s` on u(s)
/// and `cot_end` on u(end). Returns the cotangent of the initial state.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sl_vjp(
    c: &CoefView<'_, f64>,
    lambda: f64,
    delta: f64,
    y0: [f64; 2],
    steps: &[Step<f64>],
    s: f64,
    cot_s: f64,
    cot_end: f64,
    kb: &mut [[f64; 3]],
) -> [f64; 2] {
    let mut ys = Vec::with_capacity(steps.len());
    let mut y = y0;
    for st in steps {
        ys.push(y);
        y = shoot::sl_step(
            c.at(st.k),
            c.at(st.k + 1),
            st.sigma0,
            st.h,
            lambda,
            delta,
            y,
        );
    }
    let branch = shoot::readout_step(steps, s);
    let mut ybar = [cot_end, 0.0];
    if branch.is_none() {
        ybar[0] += cot_s;
    }
    for (j, st) in steps.iter().enumerate().rev() {
        ybar = sl_step_vjp(c, st.k, st.sigma0, st.h, lambda, delta, ys[j], ybar, kb);
        if Some(j) == branch {
            let start = st.k as f64 + st.sigma0;
            if s > start {
                let b = sl_step_vjp(
                    c,
                    st.k,
                    st.sigma0,
                    s - start,
                    lambda,
                    delta,
                    ys[j],
                    [cot_s, 0.0],
                    kb,
                );
                ybar[0] += b[0];
                ybar[1] += b[1];
            } else {
                ybar[0] += cot_s;
            }
        }
    }
    ybar
}

fn axpy(a: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yv, xv)| yv + a * xv).collect()
}

/// Reverse pass of one RK4 step z' = z + h/6 (k1 + 2k2 + 2k3 + k4) of
/// dz/dt = a(z); parameter cotangents accumulate into `grad`.
fn rk4_vjp(
    a: &MlpParams,
    z: &[f64],
    h: f64,
    zbar_out: &[f64],
    grad: &mut MlpParams,
) -> Result<Vec<f64>> {
    let k1 = a.forward(z)?;
    let z2 = axpy(0.5 * h, &k1, z);
    let k2 = a.forward(&z2)?;
    let z3 = axpy(0.5 * h, &k2, z);
    let k3 = a.forward(&z3)?;
    let z4 = axpy(h, &k3, z);

    let mut zbar = zbar_out.to_vec();
    let scaled = |f: f64| zbar_out.iter().map(|v| f * v).collect::<Vec<f64>>();
    let mut k1b = scaled(h / 6.0);
    let mut k2b = scaled(h / 3.0);
    let mut k3b = scaled(h / 3.0);
    let k4b = scaled(h / 6.0);

    let g4 = a.backprop_into(&z4, &k4b, grad)?;
    for i in 0..z.len() {
        zbar[i] += g4[i];
        k3b[i] += h * g4[i];
    }
    let g3 = a.backprop_into(&z3, &k3b, grad)?;
    for i in 0..z.len() {
        zbar[i] += g3[i];
        k2b[i] += 0.5 * h * g3[i];
    }
    let g2 = a.backprop_into(&z2, &k2b, grad)?;
    for i in 0..z.len() {
        zbar[i] += g2[i];
        k1b[i] += 0.5 * h * g2[i];
    }
    let g1 = a.backprop_into(z, &k1b, grad)?;
    for i in 0..z.len() {
        zbar[i] += g1[i];
    }
    Ok(zbar)
}

fn rk4_step(a: &MlpParams, z: &[f64], h: f64) -> Result<Vec<f64>> {
    let k1 = a.forward(z)?;
    let k2 = a.forward(&axpy(0.5 * h, &k1, z))?;
    let k3 = a.forward(&axpy(0.5 * h, &k2, z))?;
    let k4 = a.forward(&axpy(h, &k3, z))?;
    Ok((0..z.len())
        .map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Accumulate into `grad` the vector field parameter gradient of
/// Σ_k ⟨zbar_k, γ(τ_k)⟩ where γ starts at `x` at t = 0 and τ_k is the uniform
/// knot grid of `[t_minus, t_plus]`.
pub(crate) fn field_vjp(
    a: &MlpParams,
    x: &[f64],
    t_minus: f64,
    t_plus: f64,
    zbar: &[Vec<f64>],
    grad: &mut MlpParams,
) -> Result<()> {
    let knots = zbar.len() - 1;
    let delta = (t_plus - t_minus) / knots as f64;
    let tau = |k: usize| {
        if k == knots {
            t_plus
        } else {
            t_minus + delta * k as f64
        }
    };
    let first_pos = (0..=knots).find(|&k| tau(k) > 0.0).unwrap_or(knots);
    let forward: Vec<usize> = (first_pos..=knots).collect();
    let backward: Vec<usize> = (0..first_pos).rev().collect();
    for chain in [forward, backward] {
        // forward sweep, remembering every substep input
        let mut z = x.to_vec();
        let mut t = 0.0;
        let mut segments: Vec<(usize, Vec<(Vec<f64>, f64)>)> = Vec::with_capacity(chain.len());
        for &k in &chain {
            let span = tau(k) - t;
            let n = ((span.abs() / FIELD_STEP).ceil() as usize).max(1);
            let h = span / n as f64;
            let mut sub = Vec::with_capacity(n);
            if span != 0.0 {
                for _ in 0..n {
                    let next = rk4_step(a, &z, h)?;
                    sub.push((std::mem::replace(&mut z, next), h));
                }
            }
            t = tau(k);
            segments.push((k, sub));
        }
        let mut w = vec![0.0; x.len()];
        for (k, sub) in segments.iter().rev() {
            for (wi, zi) in w.iter_mut().zip(&zbar[*k]) {
                *wi += zi;
            }
            for (zin, h) in sub.iter().rev() {
                w = rk4_vjp(a, zin, *h, &w, grad)?;
            }
        }
    }
    Ok(())
}
