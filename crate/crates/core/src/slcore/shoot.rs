//! Fixed-step RK4 marching of the Sturm-Liouville system over a piecewise
//! linear coefficient trace, written over [`Real`] so the same code yields
//! values and exact derivatives of the discretized problem.
//!
//! Time is measured in knot coordinates s, t = t_minus + s * delta, so every
//! right-hand side carries the factor `delta`.

use crate::dual::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Coef<T> {
    pub ip: T,
    pub q: T,
    pub w: T,
}

impl<T: Real> Coef<T> {
    #[inline]
    fn lerp(self, other: Self, f: T) -> Self {
        Coef {
            ip: self.ip + f * (other.ip - self.ip),
            q: self.q + f * (other.q - self.q),
            w: self.w + f * (other.w - self.w),
        }
    }
}

/// Coefficient arrays indexed by knot.
#[derive(Clone, Copy)]
pub(crate) struct CoefView<'a, T> {
    pub ip: &'a [T],
    pub q: &'a [T],
    pub w: &'a [T],
}

impl<'a, T: Real> CoefView<'a, T> {
    #[inline]
    pub fn at(&self, k: usize) -> Coef<T> {
        Coef {
            ip: self.ip[k],
            q: self.q[k],
            w: self.w[k],
        }
    }

    pub fn knots(&self) -> usize {
        self.ip.len() - 1
    }
}

/// One RK4 step for (u, p u') inside a knot interval whose end values are
/// `c0`, `c1`; `sigma0` is the local position in [0, 1] and `h` the step.
#[inline]
pub(crate) fn sl_step<T: Real>(
    c0: Coef<T>,
    c1: Coef<T>,
    sigma0: T,
    h: T,
    lambda: T,
    delta: T,
    y: [T; 2],
) -> [T; 2] {
    let half = T::cst(0.5);
    let f = |c: Coef<T>, y: [T; 2]| -> [T; 2] {
        [delta * c.ip * y[1], delta * (c.q - lambda * c.w) * y[0]]
    };
    let ca = c0.lerp(c1, sigma0);
    let cm = c0.lerp(c1, sigma0 + half * h);
    let cb = c0.lerp(c1, sigma0 + h);
    let k1 = f(ca, y);
    let k2 = f(cm, [y[0] + half * h * k1[0], y[1] + half * h * k1[1]]);
    let k3 = f(cm, [y[0] + half * h * k2[0], y[1] + half * h * k2[1]]);
    let k4 = f(cb, [y[0] + h * k3[0], y[1] + h * k3[1]]);
    let sixth = h / T::cst(6.0);
    let two = T::cst(2.0);
    [
        y[0] + sixth * (k1[0] + two * k2[0] + two * k3[0] + k4[0]),
        y[1] + sixth * (k1[1] + two * k2[1] + two * k3[1] + k4[1]),
    ]
}

/// A single integration step: knot interval, local start and length.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Step<T> {
    pub k: usize,
    pub sigma0: T,
    pub h: T,
}

/// Steps per full knot interval so that every RK4 step spans a small part
/// of a local oscillation period: `m * max(1, ceil(ω Δ / RESOLUTION))` with
/// ω² = max 1/p · max |λ w − q| over the interval ends.
pub(crate) fn resolution<T: Real>(
    c: &CoefView<'_, T>,
    lambda: f64,
    delta: f64,
    m: usize,
) -> Vec<usize> {
    const RESOLUTION: f64 = 0.25;
    let m = m.max(1);
    (0..c.knots())
        .map(|k| {
            let ip = c.ip[k].re().max(c.ip[k + 1].re());
            let r0 = (lambda * c.w[k].re() - c.q[k].re()).abs();
            let r1 = (lambda * c.w[k + 1].re() - c.q[k + 1].re()).abs();
            let omega = (ip * r0.max(r1)).sqrt() * delta.abs();
            m * ((omega / RESOLUTION).ceil() as usize).max(1)
        })
        .collect()
}

/// Steps covering `[s_from, s_to]` (s_from <= s_to) with `per_interval[k]`
/// steps per full knot interval k. Partial intervals use proportionally
/// fewer steps.
pub(crate) fn plan<T: Real>(s_from: T, s_to: T, per_interval: &[usize]) -> Vec<Step<T>> {
    let knots = per_interval.len();
    let (a, b) = (s_from.re(), s_to.re());
    let mut out = Vec::new();
    if !(b > a) {
        return out;
    }
    let mut k = (a.floor().max(0.0) as usize).min(knots - 1);
    let mut start = s_from;
    loop {
        let end_is_target = b <= (k + 1) as f64 || k + 1 >= knots;
        let end = if end_is_target {
            s_to
        } else {
            T::cst((k + 1) as f64)
        };
        let len = end - start;
        if len.re() > 0.0 {
            let m = per_interval[k] as f64;
            let nsub = ((len.re() * m - 1e-9).ceil() as usize).max(1);
            let h = len / T::cst(nsub as f64);
            let local0 = start - T::cst(k as f64);
            for j in 0..nsub {
                out.push(Step {
                    k,
                    sigma0: local0 + h * T::cst(j as f64),
                    h,
                });
            }
        }
        if end_is_target {
            break;
        }
        k += 1;
        start = T::cst(k as f64);
    }
    out
}

/// March (u, p u') along `steps`.
pub(crate) fn march<T: Real>(
    c: &CoefView<'_, T>,
    lambda: T,
    delta: T,
    mut y: [T; 2],
    steps: &[Step<T>],
) -> [T; 2] {
    for st in steps {
        y = sl_step(
            c.at(st.k),
            c.at(st.k + 1),
            st.sigma0,
            st.h,
            lambda,
            delta,
            y,
        );
    }
    y
}

/// March along `steps` (a plan over the full trace) up to knot coordinate
/// `s`; the step containing `s` is replaced by a shortened step so the
/// trajectory before `s` is exactly the full-trace trajectory.
pub(crate) fn march_to<T: Real>(
    c: &CoefView<'_, T>,
    lambda: T,
    delta: T,
    mut y: [T; 2],
    steps: &[Step<f64>],
    s: T,
) -> [T; 2] {
    let target = s.re();
    for st in steps {
        let start = st.k as f64 + st.sigma0;
        if start + st.h <= target {
            y = sl_step(
                c.at(st.k),
                c.at(st.k + 1),
                T::cst(st.sigma0),
                T::cst(st.h),
                lambda,
                delta,
                y,
            );
        } else {
            if target > start {
                let h = s - T::cst(start);
                y = sl_step(
                    c.at(st.k),
                    c.at(st.k + 1),
                    T::cst(st.sigma0),
                    h,
                    lambda,
                    delta,
                    y,
                );
            }
            break;
        }
    }
    y
}

/// Index of the step in which a readout at `target` branches off, following
/// the rule of [`march_to`]; `None` if the readout is the end state.
pub(crate) fn readout_step(steps: &[Step<f64>], target: f64) -> Option<usize> {
    steps
        .iter()
        .position(|st| st.k as f64 + st.sigma0 + st.h > target)
}

/// Full march plus the readout at `s` branched off the same trajectory.
/// Returns `(y(s), y(end))`.
pub(crate) fn march_readout<T: Real>(
    c: &CoefView<'_, T>,
    lambda: T,
    delta: T,
    y0: [T; 2],
    steps: &[Step<f64>],
    s: T,
) -> ([T; 2], [T; 2]) {
    let branch = readout_step(steps, s.re());
    let mut y = y0;
    let mut at_s = None;
    for (j, st) in steps.iter().enumerate() {
        if Some(j) == branch {
            let start = st.k as f64 + st.sigma0;
            at_s = Some(if s.re() > start {
                sl_step(
                    c.at(st.k),
                    c.at(st.k + 1),
                    T::cst(st.sigma0),
                    s - T::cst(start),
                    lambda,
                    delta,
                    y,
                )
            } else {
                y
            });
        }
        y = sl_step(
            c.at(st.k),
            c.at(st.k + 1),
            T::cst(st.sigma0),
            T::cst(st.h),
            lambda,
            delta,
            y,
        );
    }
    (at_s.unwrap_or(y), y)
}

/// Unwrapped angle of (p u', u) along the march, i.e. the Prüfer angle θ
/// with θ = 0 at the start. Each step must turn the vector by less than π,
/// which [`resolution`] guarantees for oscillatory stretches.
pub(crate) fn pruefer_angle(
    c: &CoefView<'_, f64>,
    lambda: f64,
    delta: f64,
    steps: &[Step<f64>],
) -> f64 {
    let mut y = [0.0, 1.0];
    let mut theta = 0.0;
    for st in steps {
        let next = sl_step(
            c.at(st.k),
            c.at(st.k + 1),
            st.sigma0,
            st.h,
            lambda,
            delta,
            y,
        );
        let cross = y[1] * next[0] - y[0] * next[1];
        let dot = y[1] * next[1] + y[0] * next[0];
        theta += cross.atan2(dot);
        let norm = next[0].hypot(next[1]);
        y = [next[0] / norm, next[1] / norm];
    }
    theta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::Dual;

    #[test]
    fn plan_covers_full_intervals_with_substeps() {
        let steps = plan(0.0f64, 4.0, &[3; 4]);
        assert_eq!(steps.len(), 12);
        let total: f64 = steps.iter().map(|s| s.h).sum();
        assert!((total - 4.0).abs() < 1e-14);
        assert!(steps.iter().all(|s| s.k < 4));
    }

    #[test]
    fn plan_partial_interval() {
        let steps = plan(0.0f64, 2.5, &[2; 4]);
        // two full intervals with 2 steps each, then one step of 0.5
        assert_eq!(steps.len(), 5);
        assert_eq!(steps[4].k, 2);
        assert!((steps[4].h - 0.5).abs() < 1e-15);
        assert!(plan(1.0f64, 1.0, &[2; 4]).is_empty());
    }

    #[test]
    fn dual_plan_tracks_endpoint() {
        let s_to = Dual::<1>::variable(2.5, 0);
        let steps = plan(Dual::constant(0.0), s_to, &[1; 4]);
        let last = steps.last().unwrap();
        assert_eq!(last.h.eps[0], 1.0);
    }
}
