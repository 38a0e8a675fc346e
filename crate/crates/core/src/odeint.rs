//! Adaptive explicit Runge-Kutta integration with dense output and event
//! localization.
//!
//! Two embedded pairs are available: Dormand-Prince 5(4) (the default) and
//! Hairer's DOP853. Both keep a per-step interpolant so a [`DenseSolution`]
//! can be evaluated anywhere in the integrated span without re-stepping.

use serde::{Deserialize, Serialize};

use crate::error::{DslError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Dopri5,
    Dop853,
}

impl Method {
    fn order(self) -> f64 {
        match self {
            Method::Dopri5 => 5.0,
            Method::Dop853 => 8.0,
        }
    }

    fn n_coeffs(self) -> usize {
        match self {
            Method::Dopri5 => 5,
            Method::Dop853 => 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            rtol: 1e-6,
            atol: 1e-6,
            max_steps: 100_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    t0: f64,
    h: f64,
    // n_coeffs blocks of length dim
    coeffs: Vec<f64>,
}

/// Piecewise interpolant of an integrated trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSolution {
    t_start: f64,
    t_end: f64,
    dim: usize,
    method: Method,
    segments: Vec<Segment>,
    y_start: Vec<f64>,
    y_end: Vec<f64>,
    pub rtol: f64,
    pub atol: f64,
}

impl DenseSolution {
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    /// Step boundaries in integration order, starting with `t_start`.
    pub fn mesh(&self) -> Vec<f64> {
        let mut m: Vec<f64> = self.segments.iter().map(|s| s.t0).collect();
        m.push(self.t_end);
        m
    }

    pub fn y_start(&self) -> &[f64] {
        &self.y_start
    }

    pub fn y_end(&self) -> &[f64] {
        &self.y_end
    }

    /// Evaluate the interpolant at `t`. Times outside the span are clamped
    /// to it.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let sign = if self.t_end >= self.t_start {
            1.0
        } else {
            -1.0
        };
        let u = (t - self.t_start) * sign;
        if u <= 0.0 || self.segments.is_empty() {
            out.copy_from_slice(&self.y_start);
            return;
        }
        if u >= (self.t_end - self.t_start) * sign {
            out.copy_from_slice(&self.y_end);
            return;
        }
        let idx = self
            .segments
            .partition_point(|s| (s.t0 - self.t_start) * sign <= u)
            .saturating_sub(1);
        let seg = &self.segments[idx];
        let s = (t - seg.t0) / seg.h;
        let n = self.dim;
        let c = |j: usize, i: usize| seg.coeffs[j * n + i];
        let s1 = 1.0 - s;
        match self.method {
            Method::Dopri5 => {
                for i in 0..n {
                    out[i] =
                        c(0, i) + s * (c(1, i) + s1 * (c(2, i) + s * (c(3, i) + s1 * c(4, i))));
                }
            }
            Method::Dop853 => {
                for i in 0..n {
                    let conpar = c(4, i) + s * (c(5, i) + s1 * (c(6, i) + s * c(7, i)));
                    out[i] = c(0, i) + s * (c(1, i) + s1 * (c(2, i) + s * (c(3, i) + s1 * conpar)));
                }
            }
        }
    }

    /// Cut the solution at `t`, which must lie inside the current span.
    fn truncate_at(&mut self, t: f64) {
        let y = self.eval(t);
        let sign = if self.t_end >= self.t_start {
            1.0
        } else {
            -1.0
        };
        let u = (t - self.t_start) * sign;
        let keep = self
            .segments
            .partition_point(|s| (s.t0 - self.t_start) * sign < u)
            .max(1);
        self.segments.truncate(keep);
        self.t_end = t;
        self.y_end = y;
    }
}

/// Event hit returned by [`integrate_until_event`].
#[derive(Clone, Debug)]
pub struct EventHit {
    pub t: f64,
    pub y: Vec<f64>,
    pub solution: DenseSolution,
}

fn weighted_rms(v: &[f64], y: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = v.len() as f64;
    (v.iter()
        .zip(y)
        .map(|(vi, yi)| {
            let sk = atol + rtol * yi.abs();
            (vi / sk).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt()
}

/// y + h * sum(coef_j * k_j)
fn combine(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..y.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

struct Stepper<F> {
    rhs: F,
    opts: OdeOptions,
    dim: usize,
    t: f64,
    y: Vec<f64>,
    f: Vec<f64>,
    h: f64,
    accepted: usize,
    // stage storage, 16 slots is enough for DOP853 including dense stages
    k: Vec<Vec<f64>>,
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    fnew: Vec<f64>,
    last_rejected: bool,
}

impl<F> Stepper<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    fn new(mut rhs: F, y0: &[f64], t0: f64, dir: f64, span: Option<f64>, opts: OdeOptions) -> Self {
        let dim = y0.len();
        let mut f = vec![0.0; dim];
        rhs(t0, y0, &mut f);
        let mut st = Self {
            rhs,
            opts,
            dim,
            t: t0,
            y: y0.to_vec(),
            f,
            h: 0.0,
            accepted: 0,
            k: vec![vec![0.0; dim]; 16],
            ytmp: vec![0.0; dim],
            ynew: vec![0.0; dim],
            fnew: vec![0.0; dim],
            last_rejected: false,
        };
        st.h = dir * st.initial_step(span);
        st
    }

    fn initial_step(&mut self, span: Option<f64>) -> f64 {
        let (rtol, atol) = (self.opts.rtol, self.opts.atol);
        let d0 = weighted_rms(&self.y, &self.y, rtol, atol);
        let d1 = weighted_rms(&self.f, &self.y, rtol, atol);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        if let Some(s) = span {
            h0 = h0.min(s);
        }
        combine(&mut self.ytmp, &self.y, h0, &[(1.0, &self.f)]);
        let mut f1 = vec![0.0; self.dim];
        (self.rhs)(self.t + h0, &self.ytmp, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(&self.f).map(|(a, b)| a - b).collect();
        let d2 = weighted_rms(&diff, &self.y, rtol, atol) / h0;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(1.0 / self.opts.method.order())
        };
        let mut h = (100.0 * h0).min(h1);
        if let Some(s) = span {
            h = h.min(s);
        }
        h
    }

    /// Take one accepted step, never passing `bound` when given. Returns the
    /// dense segment covering the step.
    fn step(&mut self, bound: Option<f64>) -> Result<Segment> {
        loop {
            if self.accepted >= self.opts.max_steps {
                return Err(DslError::MaxStepsExceeded {
                    steps: self.opts.max_steps,
                });
            }
            let mut h = self.h;
            let mut hits_bound = false;
            if let Some(b) = bound {
                let remaining = b - self.t;
                if h.abs() >= remaining.abs() {
                    h = remaining;
                    hits_bound = true;
                }
            }
            if h.abs() < 10.0 * f64::EPSILON * self.t.abs().max(1.0) {
                return Err(DslError::StepSizeUnderflow { t: self.t, h });
            }
            let err = match self.opts.method {
                Method::Dopri5 => self.attempt_dopri5(h),
                Method::Dop853 => self.attempt_dop853(h),
            };
            let expo = 1.0 / self.opts.method.order();
            if err <= 1.0 {
                let mut fac = if err == 0.0 {
                    10.0
                } else {
                    0.9 * err.powf(-expo)
                };
                fac = fac.clamp(0.2, 10.0);
                if self.last_rejected {
                    fac = fac.min(1.0);
                }
                let seg = self.dense_segment(h);
                let t_new = if hits_bound {
                    bound.unwrap()
                } else {
                    self.t + h
                };
                self.t = t_new;
                std::mem::swap(&mut self.y, &mut self.ynew);
                std::mem::swap(&mut self.f, &mut self.fnew);
                self.accepted += 1;
                self.last_rejected = false;
                // keep the unclipped proposal when the step was shortened to hit a bound
                let base = if hits_bound {
                    self.h.abs().max(h.abs()) * h.signum()
                } else {
                    h
                };
                self.h = base * fac;
                return Ok(seg);
            }
            let fac = (0.9 * err.powf(-expo)).clamp(0.2, 1.0);
            self.h = h * fac;
            self.last_rejected = true;
        }
    }

    fn attempt_dopri5(&mut self, h: f64) -> f64 {
        use dopri5::*;
        let t = self.t;
        let (k, y) = (&mut self.k, &self.y);
        k[0].copy_from_slice(&self.f);
        combine(&mut self.ytmp, y, h, &[(A21, &k[0])]);
        (self.rhs)(t + C2 * h, &self.ytmp, &mut k[1]);
        combine(&mut self.ytmp, y, h, &[(A31, &k[0]), (A32, &k[1])]);
        (self.rhs)(t + C3 * h, &self.ytmp, &mut k[2]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[(A41, &k[0]), (A42, &k[1]), (A43, &k[2])],
        );
        (self.rhs)(t + C4 * h, &self.ytmp, &mut k[3]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[(A51, &k[0]), (A52, &k[1]), (A53, &k[2]), (A54, &k[3])],
        );
        (self.rhs)(t + C5 * h, &self.ytmp, &mut k[4]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[
                (A61, &k[0]),
                (A62, &k[1]),
                (A63, &k[2]),
                (A64, &k[3]),
                (A65, &k[4]),
            ],
        );
        (self.rhs)(t + h, &self.ytmp, &mut k[5]);
        combine(
            &mut self.ynew,
            y,
            h,
            &[
                (A71, &k[0]),
                (A73, &k[2]),
                (A74, &k[3]),
                (A75, &k[4]),
                (A76, &k[5]),
            ],
        );
        (self.rhs)(t + h, &self.ynew, &mut self.fnew);
        let (rtol, atol) = (self.opts.rtol, self.opts.atol);
        let mut err = 0.0;
        for i in 0..self.dim {
            let e = h
                * (E1 * k[0][i]
                    + E3 * k[2][i]
                    + E4 * k[3][i]
                    + E5 * k[4][i]
                    + E6 * k[5][i]
                    + E7 * self.fnew[i]);
            let sk = atol + rtol * y[i].abs().max(self.ynew[i].abs());
            err += (e / sk).powi(2);
        }
        (err / self.dim as f64).sqrt()
    }

    fn attempt_dop853(&mut self, h: f64) -> f64 {
        use dop853::*;
        let t = self.t;
        let (k, y) = (&mut self.k, &self.y);
        k[0].copy_from_slice(&self.f);
        combine(&mut self.ytmp, y, h, &[(A21, &k[0])]);
        (self.rhs)(t + C2 * h, &self.ytmp, &mut k[1]);
        combine(&mut self.ytmp, y, h, &[(A31, &k[0]), (A32, &k[1])]);
        (self.rhs)(t + C3 * h, &self.ytmp, &mut k[2]);
        combine(&mut self.ytmp, y, h, &[(A41, &k[0]), (A43, &k[2])]);
        (self.rhs)(t + C4 * h, &self.ytmp, &mut k[3]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[(A51, &k[0]), (A53, &k[2]), (A54, &k[3])],
        );
        (self.rhs)(t + C5 * h, &self.ytmp, &mut k[4]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[(A61, &k[0]), (A64, &k[3]), (A65, &k[4])],
        );
        (self.rhs)(t + C6 * h, &self.ytmp, &mut k[5]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[(A71, &k[0]), (A74, &k[3]), (A75, &k[4]), (A76, &k[5])],
        );
        (self.rhs)(t + C7 * h, &self.ytmp, &mut k[6]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[
                (A81, &k[0]),
                (A84, &k[3]),
                (A85, &k[4]),
                (A86, &k[5]),
                (A87, &k[6]),
            ],
        );
        (self.rhs)(t + C8 * h, &self.ytmp, &mut k[7]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[
                (A91, &k[0]),
                (A94, &k[3]),
                (A95, &k[4]),
                (A96, &k[5]),
                (A97, &k[6]),
                (A98, &k[7]),
            ],
        );
        (self.rhs)(t + C9 * h, &self.ytmp, &mut k[8]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[
                (A101, &k[0]),
                (A104, &k[3]),
                (A105, &k[4]),
                (A106, &k[5]),
                (A107, &k[6]),
                (A108, &k[7]),
                (A109, &k[8]),
            ],
        );
        (self.rhs)(t + C10 * h, &self.ytmp, &mut k[9]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[
                (A111, &k[0]),
                (A114, &k[3]),
                (A115, &k[4]),
                (A116, &k[5]),
                (A117, &k[6]),
                (A118, &k[7]),
                (A119, &k[8]),
                (A1110, &k[9]),
            ],
        );
        (self.rhs)(t + C11 * h, &self.ytmp, &mut k[10]);
        combine(
            &mut self.ytmp,
            y,
            h,
            &[
                (A121, &k[0]),
                (A124, &k[3]),
                (A125, &k[4]),
                (A126, &k[5]),
                (A127, &k[6]),
                (A128, &k[7]),
                (A129, &k[8]),
                (A1210, &k[9]),
                (A1211, &k[10]),
            ],
        );
        (self.rhs)(t + h, &self.ytmp, &mut k[11]);
        let (rtol, atol) = (self.opts.rtol, self.opts.atol);
        let mut err = 0.0;
        let mut err2 = 0.0;
        for i in 0..self.dim {
            let sum = B1 * k[0][i]
                + B6 * k[5][i]
                + B7 * k[6][i]
                + B8 * k[7][i]
                + B9 * k[8][i]
                + B10 * k[9][i]
                + B11 * k[10][i]
                + B12 * k[11][i];
            self.ynew[i] = y[i] + h * sum;
            let sk = atol + rtol * y[i].abs().max(self.ynew[i].abs());
            let e2 = sum - BHH1 * k[0][i] - BHH2 * k[8][i] - BHH3 * k[11][i];
            err2 += (e2 / sk).powi(2);
            let e = ER1 * k[0][i]
                + ER6 * k[5][i]
                + ER7 * k[6][i]
                + ER8 * k[7][i]
                + ER9 * k[8][i]
                + ER10 * k[9][i]
                + ER11 * k[10][i]
                + ER12 * k[11][i];
            err += (e / sk).powi(2);
        }
        let mut deno = err + 0.01 * err2;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h.abs() * err * (1.0 / (deno * self.dim as f64)).sqrt();
        if err <= 1.0 {
            (self.rhs)(t + h, &self.ynew, &mut self.fnew);
        }
        err
    }

    /// Interpolation coefficients for the step just accepted (state still
    /// holds the pre-step values).
    fn dense_segment(&mut self, h: f64) -> Segment {
        let n = self.dim;
        let nc = self.opts.method.n_coeffs();
        let mut coeffs = vec![0.0; nc * n];
        match self.opts.method {
            Method::Dopri5 => {
                use dopri5::*;
                let k = &self.k;
                for i in 0..n {
                    let ydiff = self.ynew[i] - self.y[i];
                    let bspl = h * k[0][i] - ydiff;
                    coeffs[i] = self.y[i];
                    coeffs[n + i] = ydiff;
                    coeffs[2 * n + i] = bspl;
                    coeffs[3 * n + i] = ydiff - h * self.fnew[i] - bspl;
                    coeffs[4 * n + i] = h
                        * (D1 * k[0][i]
                            + D3 * k[2][i]
                            + D4 * k[3][i]
                            + D5 * k[4][i]
                            + D6 * k[5][i]
                            + D7 * self.fnew[i]);
                }
            }
            Method::Dop853 => {
                use dop853::*;
                let t = self.t;
                // three extra stages for the dense output
                {
                    let k = &mut self.k;
                    let (lo, hi) = k.split_at_mut(12);
                    let y = &self.y;
                    combine(
                        &mut self.ytmp,
                        y,
                        h,
                        &[
                            (A141, &lo[0]),
                            (A147, &lo[6]),
                            (A148, &lo[7]),
                            (A149, &lo[8]),
                            (A1410, &lo[9]),
                            (A1411, &lo[10]),
                            (A1412, &lo[11]),
                            (A1413, &self.fnew),
                        ],
                    );
                    (self.rhs)(t + C14 * h, &self.ytmp, &mut hi[1]);
                    combine(
                        &mut self.ytmp,
                        y,
                        h,
                        &[
                            (A151, &lo[0]),
                            (A156, &lo[5]),
                            (A157, &lo[6]),
                            (A158, &lo[7]),
                            (A1511, &lo[10]),
                            (A1512, &lo[11]),
                            (A1513, &self.fnew),
                            (A1514, &hi[1]),
                        ],
                    );
                    (self.rhs)(t + C15 * h, &self.ytmp, &mut hi[2]);
                    combine(
                        &mut self.ytmp,
                        y,
                        h,
                        &[
                            (A161, &lo[0]),
                            (A166, &lo[5]),
                            (A167, &lo[6]),
                            (A168, &lo[7]),
                            (A169, &lo[8]),
                            (A1613, &self.fnew),
                            (A1614, &hi[1]),
                            (A1615, &hi[2]),
                        ],
                    );
                    (self.rhs)(t + C16 * h, &self.ytmp, &mut hi[3]);
                }
                let k = &self.k;
                for i in 0..n {
                    let ydiff = self.ynew[i] - self.y[i];
                    let bspl = h * k[0][i] - ydiff;
                    coeffs[i] = self.y[i];
                    coeffs[n + i] = ydiff;
                    coeffs[2 * n + i] = bspl;
                    coeffs[3 * n + i] = ydiff - h * self.fnew[i] - bspl;
                    let stages = [
                        k[0][i],
                        k[5][i],
                        k[6][i],
                        k[7][i],
                        k[8][i],
                        k[9][i],
                        k[10][i],
                        k[11][i],
                        self.fnew[i],
                        k[13][i],
                        k[14][i],
                        k[15][i],
                    ];
                    for (row, dcoef) in DENSE.iter().enumerate() {
                        let acc: f64 = dcoef.iter().zip(stages.iter()).map(|(d, s)| d * s).sum();
                        coeffs[(4 + row) * n + i] = h * acc;
                    }
                }
            }
        }
        Segment {
            t0: self.t,
            h,
            coeffs,
        }
    }
}

/// Integrate `y' = rhs(t, y)` from `t0` to `t1` (either order) and return
/// the dense solution over the whole span.
pub fn integrate<F>(
    rhs: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &OdeOptions,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if t0 == t1 {
        return Err(DslError::InvalidInput(
            "integration span has zero length".into(),
        ));
    }
    let dir = (t1 - t0).signum();
    let mut st = Stepper::new(rhs, y0, t0, dir, Some((t1 - t0).abs()), *opts);
    let mut segments = Vec::new();
    while st.t != t1 {
        segments.push(st.step(Some(t1))?);
    }
    Ok(DenseSolution {
        t_start: t0,
        t_end: t1,
        dim: y0.len(),
        method: opts.method,
        segments,
        y_start: y0.to_vec(),
        y_end: st.y.clone(),
        rtol: opts.rtol,
        atol: opts.atol,
    })
}

/// Default event-time tolerance for a search starting at `t0`.
pub fn default_event_tol(t0: f64) -> f64 {
    1e-10 * t0.abs().max(1.0)
}

/// Integrate from `t0` in `direction` until `event(y)` changes sign, then
/// bisect on the step interpolant until the time bracket is at most `tol_t`
/// wide. The returned solution is truncated at the event time.
pub fn integrate_until_event<F, E>(
    rhs: F,
    y0: &[f64],
    t0: f64,
    direction: Direction,
    mut event: E,
    tol_t: f64,
    opts: &OdeOptions,
) -> Result<EventHit>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    E: FnMut(&[f64]) -> f64,
{
    let g0 = event(y0);
    if g0 == 0.0 || !g0.is_finite() {
        return Err(DslError::InvalidInput(
            "event function must have a strict sign at the initial state".into(),
        ));
    }
    let mut st = Stepper::new(rhs, y0, t0, direction.sign(), None, *opts);
    let mut sol = DenseSolution {
        t_start: t0,
        t_end: t0,
        dim: y0.len(),
        method: opts.method,
        segments: Vec::new(),
        y_start: y0.to_vec(),
        y_end: y0.to_vec(),
        rtol: opts.rtol,
        atol: opts.atol,
    };
    let mut g_prev = g0;
    loop {
        let seg = match st.step(None) {
            Ok(s) => s,
            Err(DslError::MaxStepsExceeded { steps }) => {
                return Err(DslError::NoEventDetected { steps, t: st.t })
            }
            Err(e) => return Err(e),
        };
        let t_old = seg.t0;
        sol.segments.push(seg);
        sol.t_end = st.t;
        sol.y_end.copy_from_slice(&st.y);
        let g_new = event(&st.y);
        if g_new == 0.0 || g_new.signum() != g_prev.signum() {
            // bisection on the interpolant of the last step
            let (mut lo, mut hi) = (t_old, st.t);
            let mut ybuf = vec![0.0; y0.len()];
            while (hi - lo).abs() > tol_t {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                sol.eval_into(mid, &mut ybuf);
                let g = event(&ybuf);
                if g != 0.0 && g.signum() == g_prev.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let t_event = 0.5 * (lo + hi);
            sol.truncate_at(t_event);
            return Ok(EventHit {
                t: t_event,
                y: sol.y_end.clone(),
                solution: sol,
            });
        }
        g_prev = g_new;
    }
}

/// Event time and state only.
pub fn locate_event<F, E>(
    rhs: F,
    y0: &[f64],
    t0: f64,
    direction: Direction,
    event: E,
    tol_t: f64,
    opts: &OdeOptions,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    E: FnMut(&[f64]) -> f64,
{
    let hit = integrate_until_event(rhs, y0, t0, direction, event, tol_t, opts)?;
    Ok((hit.t, hit.y))
}

mod dopri5 {
    pub const C2: f64 = 1.0 / 5.0;
    pub const C3: f64 = 3.0 / 10.0;
    pub const C4: f64 = 4.0 / 5.0;
    pub const C5: f64 = 8.0 / 9.0;
    pub const A21: f64 = 1.0 / 5.0;
    pub const A31: f64 = 3.0 / 40.0;
    pub const A32: f64 = 9.0 / 40.0;
    pub const A41: f64 = 44.0 / 45.0;
    pub const A42: f64 = -56.0 / 15.0;
    pub const A43: f64 = 32.0 / 9.0;
    pub const A51: f64 = 19372.0 / 6561.0;
    pub const A52: f64 = -25360.0 / 2187.0;
    pub const A53: f64 = 64448.0 / 6561.0;
    pub const A54: f64 = -212.0 / 729.0;
    pub const A61: f64 = 9017.0 / 3168.0;
    pub const A62: f64 = -355.0 / 33.0;
    pub const A63: f64 = 46732.0 / 5247.0;
    pub const A64: f64 = 49.0 / 176.0;
    pub const A65: f64 = -5103.0 / 18656.0;
    pub const A71: f64 = 35.0 / 384.0;
    pub const A73: f64 = 500.0 / 1113.0;
    pub const A74: f64 = 125.0 / 192.0;
    pub const A75: f64 = -2187.0 / 6784.0;
    pub const A76: f64 = 11.0 / 84.0;
    pub const E1: f64 = 71.0 / 57600.0;
    pub const E3: f64 = -71.0 / 16695.0;
    pub const E4: f64 = 71.0 / 1920.0;
    pub const E5: f64 = -17253.0 / 339200.0;
    pub const E6: f64 = 22.0 / 525.0;
    pub const E7: f64 = -1.0 / 40.0;
    pub const D1: f64 = -12715105075.0 / 11282082432.0;
    pub const D3: f64 = 87487479700.0 / 32700410799.0;
    pub const D4: f64 = -10690763975.0 / 1880347072.0;
    pub const D5: f64 = 701980252875.0 / 199316789632.0;
    pub const D6: f64 = -1453857185.0 / 822651844.0;
    pub const D7: f64 = 69997945.0 / 29380423.0;
}

#[allow(clippy::excessive_precision)]
mod dop853 {
    pub const C2: f64 = 0.526001519587677318785587544488E-01;
    pub const C3: f64 = 0.789002279381515978178381316732E-01;
    pub const C4: f64 = 0.118350341907227396726757197510E+00;
    pub const C5: f64 = 0.281649658092772603273242802490E+00;
    pub const C6: f64 = 0.333333333333333333333333333333E+00;
    pub const C7: f64 = 0.25E+00;
    pub const C8: f64 = 0.307692307692307692307692307692E+00;
    pub const C9: f64 = 0.651282051282051282051282051282E+00;
    pub const C10: f64 = 0.6E+00;
    pub const C11: f64 = 0.857142857142857142857142857142E+00;
    pub const C14: f64 = 0.1E+00;
    pub const C15: f64 = 0.2E+00;
    pub const C16: f64 = 0.777777777777777777777777777778E+00;

    pub const A21: f64 = 5.26001519587677318785587544488E-2;
    pub const A31: f64 = 1.97250569845378994544595329183E-2;
    pub const A32: f64 = 5.91751709536136983633785987549E-2;
    pub const A41: f64 = 2.95875854768068491816892993775E-2;
    pub const A43: f64 = 8.87627564304205475450678981324E-2;
    pub const A51: f64 = 2.41365134159266685502369798665E-1;
    pub const A53: f64 = -8.84549479328286085344864962717E-1;
    pub const A54: f64 = 9.24834003261792003115737966543E-1;
    pub const A61: f64 = 3.7037037037037037037037037037E-2;
    pub const A64: f64 = 1.70828608729473871279604482173E-1;
    pub const A65: f64 = 1.25467687566822425016691814123E-1;
    pub const A71: f64 = 3.7109375E-2;
    pub const A74: f64 = 1.70252211019544039314978060272E-1;
    pub const A75: f64 = 6.02165389804559606850219397283E-2;
    pub const A76: f64 = -1.7578125E-2;
    pub const A81: f64 = 3.70920001185047927108779319836E-2;
    pub const A84: f64 = 1.70383925712239993810214054705E-1;
    pub const A85: f64 = 1.07262030446373284651809199168E-1;
    pub const A86: f64 = -1.53194377486244017527936158236E-2;
    pub const A87: f64 = 8.27378916381402288758473766002E-3;
    pub const A91: f64 = 6.24110958716075717114429577812E-1;
    pub const A94: f64 = -3.36089262944694129406857109825E0;
    pub const A95: f64 = -8.68219346841726006818189891453E-1;
    pub const A96: f64 = 2.75920996994467083049415600797E1;
    pub const A97: f64 = 2.01540675504778934086186788979E1;
    pub const A98: f64 = -4.34898841810699588477366255144E1;
    pub const A101: f64 = 4.77662536438264365890433908527E-1;
    pub const A104: f64 = -2.48811461997166764192642586468E0;
    pub const A105: f64 = -5.90290826836842996371446475743E-1;
    pub const A106: f64 = 2.12300514481811942347288949897E1;
    pub const A107: f64 = 1.52792336328824235832596922938E1;
    pub const A108: f64 = -3.32882109689848629194453265587E1;
    pub const A109: f64 = -2.03312017085086261358222928593E-2;
    pub const A111: f64 = -9.3714243008598732571704021658E-1;
    pub const A114: f64 = 5.18637242884406370830023853209E0;
    pub const A115: f64 = 1.09143734899672957818500254654E0;
    pub const A116: f64 = -8.14978701074692612513997267357E0;
    pub const A117: f64 = -1.85200656599969598641566180701E1;
    pub const A118: f64 = 2.27394870993505042818970056734E1;
    pub const A119: f64 = 2.49360555267965238987089396762E0;
    pub const A1110: f64 = -3.0467644718982195003823669022E0;
    pub const A121: f64 = 2.27331014751653820792359768449E0;
    pub const A124: f64 = -1.05344954667372501984066689879E1;
    pub const A125: f64 = -2.00087205822486249909675718444E0;
    pub const A126: f64 = -1.79589318631187989172765950534E1;
    pub const A127: f64 = 2.79488845294199600508499808837E1;
    pub const A128: f64 = -2.85899827713502369474065508674E0;
    pub const A129: f64 = -8.87285693353062954433549289258E0;
    pub const A1210: f64 = 1.23605671757943030647266201528E1;
    pub const A1211: f64 = 6.43392746015763530355970484046E-1;
    pub const A141: f64 = 5.61675022830479523392909219681E-2;
    pub const A147: f64 = 2.53500210216624811088794765333E-1;
    pub const A148: f64 = -2.46239037470802489917441475441E-1;
    pub const A149: f64 = -1.24191423263816360469010140626E-1;
    pub const A1410: f64 = 1.5329179827876569731206322685E-1;
    pub const A1411: f64 = 8.20105229563468988491666602057E-3;
    pub const A1412: f64 = 7.56789766054569976138603589584E-3;
    pub const A1413: f64 = -8.298E-3;
    pub const A151: f64 = 3.18346481635021405060768473261E-2;
    pub const A156: f64 = 2.83009096723667755288322961402E-2;
    pub const A157: f64 = 5.35419883074385676223797384372E-2;
    pub const A158: f64 = -5.49237485713909884646569340306E-2;
    pub const A1511: f64 = -1.08347328697249322858509316994E-4;
    pub const A1512: f64 = 3.82571090835658412954920192323E-4;
    pub const A1513: f64 = -3.40465008687404560802977114492E-4;
    pub const A1514: f64 = 1.41312443674632500278074618366E-1;
    pub const A161: f64 = -4.28896301583791923408573538692E-1;
    pub const A166: f64 = -4.69762141536116384314449447206E0;
    pub const A167: f64 = 7.68342119606259904184240953878E0;
    pub const A168: f64 = 4.06898981839711007970213554331E0;
    pub const A169: f64 = 3.56727187455281109270669543021E-1;
    pub const A1613: f64 = -1.39902416515901462129418009734E-3;
    pub const A1614: f64 = 2.9475147891527723389556272149E0;
    pub const A1615: f64 = -9.15095847217987001081870187138E0;

    pub const B1: f64 = 5.42937341165687622380535766363E-2;
    pub const B6: f64 = 4.45031289275240888144113950566E0;
    pub const B7: f64 = 1.89151789931450038304281599044E0;
    pub const B8: f64 = -5.8012039600105847814672114227E0;
    pub const B9: f64 = 3.1116436695781989440891606237E-1;
    pub const B10: f64 = -1.52160949662516078556178806805E-1;
    pub const B11: f64 = 2.01365400804030348374776537501E-1;
    pub const B12: f64 = 4.47106157277725905176885569043E-2;

    pub const BHH1: f64 = 0.244094488188976377952755905512E+00;
    pub const BHH2: f64 = 0.733846688281611857341361741547E+00;
    pub const BHH3: f64 = 0.220588235294117647058823529412E-01;

    pub const ER1: f64 = 0.1312004499419488073250102996E-01;
    pub const ER6: f64 = -0.1225156446376204440720569753E+01;
    pub const ER7: f64 = -0.4957589496572501915214079952E+00;
    pub const ER8: f64 = 0.1664377182454986536961530415E+01;
    pub const ER9: f64 = -0.3503288487499736816886487290E+00;
    pub const ER10: f64 = 0.3341791187130174790297318841E+00;
    pub const ER11: f64 = 0.8192320648511571246570742613E-01;
    pub const ER12: f64 = -0.2235530786388629525884427845E-01;

    /// Dense-output rows 5..8, applied to stages
    /// [k1, k6, k7, k8, k9, k10, k11, k12, f(t+h), k14, k15, k16].
    pub const DENSE: [[f64; 12]; 4] = [
        [
            -0.84289382761090128651353491142E+01,
            0.56671495351937776962531783590E+00,
            -0.30689499459498916912797304727E+01,
            0.23846676565120698287728149680E+01,
            0.21170345824450282767155149946E+01,
            -0.87139158377797299206789907490E+00,
            0.22404374302607882758541771650E+01,
            0.63157877876946881815570249290E+00,
            -0.88990336451333310820698117400E-01,
            0.18148505520854727256656404962E+02,
            -0.91946323924783554000451984436E+01,
            -0.44360363875948939664310572000E+01,
        ],
        [
            0.10427508642579134603413151009E+02,
            0.24228349177525818288430175319E+03,
            0.16520045171727028198505394887E+03,
            -0.37454675472269020279518312152E+03,
            -0.22113666853125306036270938578E+02,
            0.77334326684722638389603898808E+01,
            -0.30674084731089398182061213626E+02,
            -0.93321305264302278729567221706E+01,
            0.15697238121770843886131091075E+02,
            -0.31139403219565177677282850411E+02,
            -0.93529243588444783865713862664E+01,
            0.35816841486394083752465898540E+02,
        ],
        [
            0.19985053242002433820987653617E+02,
            -0.38703730874935176555105901742E+03,
            -0.18917813819516756882830838328E+03,
            0.52780815920542364900561016686E+03,
            -0.11573902539959630126141871134E+02,
            0.68812326946963000169666922661E+01,
            -0.10006050966910838403183860980E+01,
            0.77771377980534432092869265740E+00,
            -0.27782057523535084065932004339E+01,
            -0.60196695231264120758267380846E+02,
            0.84320405506677161018159903784E+02,
            0.11992291136182789328035130030E+02,
        ],
        [
            -0.25693933462703749003312586129E+02,
            -0.15418974869023643374053993627E+03,
            -0.23152937917604549567536039109E+03,
            0.35763911791061412378285349910E+03,
            0.93405324183624310003907691704E+02,
            -0.37458323136451633156875139351E+02,
            0.10409964950896230045147246184E+03,
            0.29840293426660503123344363579E+02,
            -0.43533456590011143754432175058E+02,
            0.96324553959188282948394950600E+02,
            -0.39177261675615439165231486172E+02,
            -0.14972683625798562581422125276E+03,
        ],
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{E, PI};

    fn both_methods() -> [OdeOptions; 2] {
        let mut a = OdeOptions::with_tolerances(1e-10, 1e-10);
        let mut b = a;
        a.method = Method::Dopri5;
        b.method = Method::Dop853;
        [a, b]
    }

    #[test]
    fn exponential_growth() {
        for opts in both_methods() {
            let sol = integrate(|_, y, d| d[0] = y[0], &[1.0], 0.0, 1.0, &opts).unwrap();
            assert!((sol.y_end()[0] - E).abs() < 1e-8, "{:?}", opts.method);
            // interior dense evaluation
            let mid = sol.eval(0.37)[0];
            assert!(
                (mid - 0.37f64.exp()).abs() < 1e-8,
                "{:?} {mid}",
                opts.method
            );
        }
    }

    #[test]
    fn constant_field_is_exact() {
        for opts in both_methods() {
            let sol = integrate(|_, _, d| d[0] = 0.0, &[3.25], 2.0, -5.0, &opts).unwrap();
            for t in [2.0, 1.0, -0.3, -4.99, -5.0] {
                assert_eq!(sol.eval(t)[0], 3.25);
            }
        }
    }

    #[test]
    fn rotation_returns_after_one_period() {
        for opts in both_methods() {
            let sol = integrate(
                |_, y, d| {
                    d[0] = -y[1];
                    d[1] = y[0];
                },
                &[1.0, 0.0],
                0.0,
                2.0 * PI,
                &opts,
            )
            .unwrap();
            let y = sol.y_end();
            assert!((y[0] - 1.0).abs() < 1e-6 && y[1].abs() < 1e-6);
            for t in [0.3, 1.7, 4.4] {
                let v = sol.eval(t);
                assert!((v[0] - t.cos()).abs() < 1e-7, "{:?} t={t}", opts.method);
                assert!((v[1] - t.sin()).abs() < 1e-7, "{:?} t={t}", opts.method);
            }
        }
    }

    #[test]
    fn dense_matches_mesh_values() {
        let opts = OdeOptions::default();
        let sol = integrate(|t, y, d| d[0] = -y[0] + t.sin(), &[0.5], 0.0, 3.0, &opts).unwrap();
        // at each step start the interpolant reproduces the stored state
        for seg in &sol.segments {
            assert_eq!(sol.eval(seg.t0)[0], seg.coeffs[0]);
        }
        assert_eq!(sol.eval(3.0)[0], sol.y_end()[0]);
    }

    #[test]
    fn backward_integration() {
        let opts = OdeOptions::with_tolerances(1e-10, 1e-10);
        let sol = integrate(|_, y, d| d[0] = y[0], &[1.0], 0.0, -1.0, &opts).unwrap();
        assert!((sol.y_end()[0] - (-1.0f64).exp()).abs() < 1e-9);
        assert!((sol.eval(-0.5)[0] - (-0.5f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn linear_event() {
        let opts = OdeOptions::default();
        let (t, y) = locate_event(
            |_, _, d| d[0] = 1.0,
            &[0.5],
            0.0,
            Direction::Forward,
            |y| y[0] - 1.0,
            1e-10,
            &opts,
        )
        .unwrap();
        assert!((t - 0.5).abs() < 1e-10);
        assert!((y[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fastest_coordinate_event() {
        let opts = OdeOptions::default();
        let (t, y) = locate_event(
            |_, _, d| {
                d[0] = 1.0;
                d[1] = 2.0;
            },
            &[0.5, 0.5],
            0.0,
            Direction::Forward,
            |y| y.iter().cloned().fold(f64::MIN, f64::max) - 1.0,
            1e-10,
            &opts,
        )
        .unwrap();
        assert!((t - 0.25).abs() < 1e-10);
        assert!((y[0] - 0.75).abs() < 1e-9 && (y[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_event() {
        let opts = OdeOptions::default();
        let hit = integrate_until_event(
            |_, _, d| d[0] = 1.0,
            &[0.5],
            0.0,
            Direction::Backward,
            |y| y.iter().cloned().fold(f64::MAX, f64::min),
            1e-10,
            &opts,
        )
        .unwrap();
        assert!((hit.t + 0.5).abs() < 1e-10);
        assert_eq!(hit.solution.t_end(), hit.t);
        assert!((hit.solution.eval(-0.25)[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn missing_event_is_reported() {
        let opts = OdeOptions {
            max_steps: 50,
            ..OdeOptions::default()
        };
        let err = locate_event(
            |_, _, d| d[0] = 0.0,
            &[0.5],
            0.0,
            Direction::Forward,
            |y| y[0] - 1.0,
            1e-10,
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, DslError::NoEventDetected { .. }));
    }

    #[test]
    fn step_cap_is_an_error() {
        let opts = OdeOptions {
            max_steps: 3,
            rtol: 1e-12,
            atol: 1e-12,
            ..OdeOptions::default()
        };
        let err = integrate(|_, y, d| d[0] = y[0], &[1.0], 0.0, 10.0, &opts).unwrap_err();
        assert_eq!(err, DslError::MaxStepsExceeded { steps: 3 });
    }
}
