//! Field lines of the learned vector field through the unit hypercube and
//! the coefficient traces sampled along them.

use crate::error::{DslError, Result};
use crate::netfuncs::MlpParams;
use crate::odeint::{self, DenseSolution, Direction, OdeOptions};

/// Distance to the boundary under which an exit is considered reached.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Start points closer than this to the boundary are rejected.
pub const START_MARGIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceOptions {
    pub tol_t: f64,
    pub ode: OdeOptions,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            tol_t: 1e-4,
            ode: OdeOptions::default(),
        }
    }
}

/// Trajectory of `dz/dt = a(z)` through `x0`, clipped to the two times at
/// which it leaves `(0, 1)^n`.
#[derive(Clone, Debug)]
pub struct FieldLine {
    pub x0: Vec<f64>,
    pub t_minus: f64,
    pub t_plus: f64,
    pub forward: DenseSolution,
    pub backward: DenseSolution,
}

impl FieldLine {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn length(&self) -> f64 {
        self.t_plus - self.t_minus
    }

    /// γ(t) for t in [t_minus, t_plus]; values outside are clamped.
    pub fn position(&self, t: f64) -> Vec<f64> {
        if t >= 0.0 {
            self.forward.eval(t)
        } else {
            self.backward.eval(t)
        }
    }

    pub fn position_into(&self, t: f64, out: &mut [f64]) {
        if t >= 0.0 {
            self.forward.eval_into(t, out)
        } else {
            self.backward.eval_into(t, out)
        }
    }

    /// `(min_j γ_j(t_minus), max_j γ_j(t_plus) - 1)`, both zero at exact exits.
    pub fn exit_residuals(&self) -> (f64, f64) {
        (
            min_coord(self.backward.y_end()),
            max_coord(self.forward.y_end()) - 1.0,
        )
    }
}

pub(crate) fn min_coord(z: &[f64]) -> f64 {
    z.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub(crate) fn max_coord(z: &[f64]) -> f64 {
    z.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn argmin_coord(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v < z[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmax_coord(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

fn check_start(x: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(DslError::InvalidInput("empty start point".into()));
    }
    if x.iter()
        .any(|&v| !v.is_finite() || v <= START_MARGIN || v >= 1.0 - START_MARGIN)
    {
        return Err(DslError::StartOnBoundary {
            tolerance: START_MARGIN,
        });
    }
    Ok(())
}

/// Trace a field line of an arbitrary vector field `field(z, out)`.
pub fn trace_field<F>(mut field: F, x: &[f64], opts: &TraceOptions) -> Result<FieldLine>
where
    F: FnMut(&[f64], &mut [f64]),
{
    check_start(x)?;
    let fwd = odeint::integrate_until_event(
        |_, z, dz| field(z, dz),
        x,
        0.0,
        Direction::Forward,
        |z| max_coord(z) - 1.0,
        opts.tol_t,
        &opts.ode,
    )?;
    let bwd = odeint::integrate_until_event(
        |_, z, dz| field(z, dz),
        x,
        0.0,
        Direction::Backward,
        min_coord,
        opts.tol_t,
        &opts.ode,
    )?;
    Ok(FieldLine {
        x0: x.to_vec(),
        t_minus: bwd.t,
        t_plus: fwd.t,
        forward: fwd.solution,
        backward: bwd.solution,
    })
}

/// Trace the field line of the `a` network through `x`.
pub fn trace(a_net: &MlpParams, x: &[f64], opts: &TraceOptions) -> Result<FieldLine> {
    if a_net.input_dim() != x.len() || a_net.output_dim() != x.len() {
        return Err(DslError::ShapeMismatch {
            context: "vector field network",
            expected: x.len(),
            got: if a_net.input_dim() != x.len() {
                a_net.input_dim()
            } else {
                a_net.output_dim()
            },
        });
    }
    trace_field(
        |z, dz| {
            let v = a_net.forward(z).expect("dimension checked above");
            dz.copy_from_slice(&v);
        },
        x,
        opts,
    )
}

/// Piecewise-linear samples of the Sturm-Liouville coefficients on a uniform
/// grid of `knots()` intervals over `[t_minus, t_plus]`.
///
/// `inv_p` holds 1/p; all interpolation is on 1/p, q and w directly.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTrace {
    pub t_minus: f64,
    pub t_plus: f64,
    pub inv_p: Vec<f64>,
    pub q: Vec<f64>,
    pub w: Vec<f64>,
    /// Initial slopes u_i'(t_minus), one per basis function.
    pub v0: Vec<f64>,
    /// Time at which the basis is read out as a prediction.
    pub t_eval: f64,
}

impl CoefficientTrace {
    pub fn new(
        t_minus: f64,
        t_plus: f64,
        inv_p: Vec<f64>,
        q: Vec<f64>,
        w: Vec<f64>,
        v0: Vec<f64>,
        t_eval: f64,
    ) -> Result<Self> {
        let tr = Self {
            t_minus,
            t_plus,
            inv_p,
            q,
            w,
            v0,
            t_eval,
        };
        tr.validate()?;
        Ok(tr)
    }

    /// Constant coefficients on `[t_minus, t_plus]`, unit slopes.
    pub fn constant(
        t_minus: f64,
        t_plus: f64,
        knots: usize,
        p: f64,
        q: f64,
        w: f64,
        d: usize,
    ) -> Result<Self> {
        Self::new(
            t_minus,
            t_plus,
            vec![1.0 / p; knots + 1],
            vec![q; knots + 1],
            vec![w; knots + 1],
            vec![1.0; d],
            0.5 * (t_minus + t_plus),
        )
    }

    /// Sample `coef(t) -> (p, q, w)` at the knots.
    pub fn from_fn<F>(
        t_minus: f64,
        t_plus: f64,
        knots: usize,
        d: usize,
        mut coef: F,
    ) -> Result<Self>
    where
        F: FnMut(f64) -> (f64, f64, f64),
    {
        let mut inv_p = Vec::with_capacity(knots + 1);
        let mut q = Vec::with_capacity(knots + 1);
        let mut w = Vec::with_capacity(knots + 1);
        for k in 0..=knots {
            let t = t_minus + (t_plus - t_minus) * k as f64 / knots as f64;
            let (pk, qk, wk) = coef(t);
            inv_p.push(1.0 / pk);
            q.push(qk);
            w.push(wk);
        }
        Self::new(
            t_minus,
            t_plus,
            inv_p,
            q,
            w,
            vec![1.0; d],
            0.5 * (t_minus + t_plus),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.inv_p.len();
        if n < 3 {
            return Err(DslError::InvalidInput(
                "a coefficient trace needs at least 2 knot intervals".into(),
            ));
        }
        if self.q.len() != n || self.w.len() != n {
            return Err(DslError::ShapeMismatch {
                context: "coefficient trace",
                expected: n,
                got: self.q.len().min(self.w.len()),
            });
        }
        if !(self.t_minus < self.t_plus) || !self.t_minus.is_finite() || !self.t_plus.is_finite() {
            return Err(DslError::InvalidInput(format!(
                "trace interval [{}, {}] is empty",
                self.t_minus, self.t_plus
            )));
        }
        if self
            .inv_p
            .iter()
            .chain(&self.w)
            .any(|&v| !(v > 0.0) || !v.is_finite())
        {
            return Err(DslError::InvalidInput(
                "1/p and w must be positive at every knot".into(),
            ));
        }
        if self.q.iter().any(|v| !v.is_finite()) {
            return Err(DslError::InvalidInput("q must be finite".into()));
        }
        if !(self.t_minus..=self.t_plus).contains(&self.t_eval) {
            return Err(DslError::InvalidInput(
                "readout time outside the trace".into(),
            ));
        }
        Ok(())
    }

    /// Number of knot intervals K (there are K + 1 knots).
    pub fn knots(&self) -> usize {
        self.inv_p.len() - 1
    }

    pub fn length(&self) -> f64 {
        self.t_plus - self.t_minus
    }

    pub fn spacing(&self) -> f64 {
        self.length() / self.knots() as f64
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        self.t_minus + self.spacing() * k as f64
    }

    /// Knot coordinate s with t = t_minus + s * spacing.
    pub fn knot_coord(&self, t: f64) -> f64 {
        (t - self.t_minus) / self.spacing()
    }

    fn interp(&self, vals: &[f64], t: f64) -> f64 {
        let s = self.knot_coord(t).clamp(0.0, self.knots() as f64);
        let k = (s.floor() as usize).min(self.knots() - 1);
        let f = s - k as f64;
        vals[k] + f * (vals[k + 1] - vals[k])
    }

    pub fn inv_p_at(&self, t: f64) -> f64 {
        self.interp(&self.inv_p, t)
    }

    pub fn p_at(&self, t: f64) -> f64 {
        1.0 / self.inv_p_at(t)
    }

    pub fn q_at(&self, t: f64) -> f64 {
        self.interp(&self.q, t)
    }

    pub fn w_at(&self, t: f64) -> f64 {
        self.interp(&self.w, t)
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.inv_p.iter().map(|v| 1.0 / v).collect()
    }
}

/// Slope condition at the entry point of a field line.
#[derive(Clone, Copy, Debug)]
pub enum SlopeSource<'a> {
    /// v ≡ 1
    Constant,
    /// Learned v with `d` outputs.
    Net(&'a MlpParams),
}

/// Networks evaluated along a field line.
#[derive(Clone, Copy, Debug)]
pub struct CoefficientNets<'a> {
    pub inv_p: &'a MlpParams,
    pub q: &'a MlpParams,
    pub w: &'a MlpParams,
    pub v: SlopeSource<'a>,
}

/// Positions γ(τ_k) at the uniform knots of `[t_minus, t_plus]`.
pub fn knot_positions(fl: &FieldLine, knots: usize) -> Vec<Vec<f64>> {
    let dt = fl.length() / knots as f64;
    (0..=knots)
        .map(|k| {
            if k == 0 {
                fl.backward.y_end().to_vec()
            } else if k == knots {
                fl.forward.y_end().to_vec()
            } else {
                fl.position(fl.t_minus + dt * k as f64)
            }
        })
        .collect()
}

/// Evaluate the coefficient networks at precomputed knot positions.
pub fn coefficients_at(
    positions: &[Vec<f64>],
    nets: &CoefficientNets<'_>,
    t_minus: f64,
    t_plus: f64,
    t_eval: f64,
    d: usize,
) -> Result<CoefficientTrace> {
    let mut inv_p = Vec::with_capacity(positions.len());
    let mut q = Vec::with_capacity(positions.len());
    let mut w = Vec::with_capacity(positions.len());
    for z in positions {
        inv_p.push(nets.inv_p.forward_scalar(z)?);
        q.push(nets.q.forward_scalar(z)?);
        w.push(nets.w.forward_scalar(z)?);
    }
    let v0 = match nets.v {
        SlopeSource::Constant => vec![1.0; d],
        SlopeSource::Net(v) => {
            let out = v.forward(&positions[0])?;
            if out.len() != d {
                return Err(DslError::ShapeMismatch {
                    context: "slope network output",
                    expected: d,
                    got: out.len(),
                });
            }
            out
        }
    };
    CoefficientTrace::new(t_minus, t_plus, inv_p, q, w, v0, t_eval)
}

/// One network call per knot per coefficient; v0 from the entry point.
pub fn sample_coefficients(
    fl: &FieldLine,
    nets: &CoefficientNets<'_>,
    knots: usize,
    d: usize,
) -> Result<CoefficientTrace> {
    if knots < 2 {
        return Err(DslError::InvalidInput(
            "knot count must be at least 2".into(),
        ));
    }
    let positions = knot_positions(fl, knots);
    coefficients_at(&positions, nets, fl.t_minus, fl.t_plus, 0.0, d)
}
