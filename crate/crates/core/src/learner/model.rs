use serde::{Deserialize, Serialize};

use crate::error::{DslError, Result};
use crate::fieldline::{
    self, CoefficientNets, CoefficientTrace, FieldLine, SlopeSource, TraceOptions,
};
use crate::netfuncs::{Activation, InitScheme, MlpParams, RangeSpec, Role};
use crate::odeint::{Method, OdeOptions};
use crate::slcore::{self, ShootingOptions, Spectrum};

/// Where the Sturm-Liouville problem of a sample lives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    /// Along the field line of the learned vector field through x.
    #[default]
    FieldLine,
    /// On the fixed interval [0, 1] with coefficients of (x, t) and readout
    /// at t = 0.5; no vector field.
    FixedInterval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of eigenfunctions.
    pub d: usize,
    pub a_hidden: Vec<usize>,
    pub coef_hidden: Vec<usize>,
    /// Learn v instead of v ≡ 1.
    pub learned_v: bool,
    pub head_bias: bool,
    pub init: InitScheme,
    pub formulation: Formulation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 10,
            a_hidden: vec![128, 64, 32],
            coef_hidden: vec![128, 64, 32],
            learned_v: false,
            head_bias: true,
            init: InitScheme::GlorotUniform,
            formulation: Formulation::FieldLine,
        }
    }
}

/// Numerical settings of the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub trace: TraceOptions,
    pub shooting: ShootingOptions,
    /// Knot intervals of the piecewise-linear coefficient trace.
    pub knots: usize,
    /// Treat knot coefficient values as independent of the field line when
    /// differentiating.
    pub freeze_knot_positions: bool,
}

impl SolverOptions {
    /// Shooting, event and ODE tolerances all set from one value.
    pub fn with_tolerance(tol: f64, knots: usize) -> Self {
        Self {
            trace: TraceOptions {
                tol_t: tol,
                ode: OdeOptions {
                    method: Method::Dop853,
                    ..OdeOptions::with_tolerances(1e-6f64.min(tol), 1e-6f64.min(tol))
                },
            },
            shooting: ShootingOptions {
                tol_lambda: tol,
                substeps: 1,
            },
            knots,
            freeze_knot_positions: false,
        }
    }

    pub fn standard(knots: usize) -> Self {
        Self::with_tolerance(1e-4, knots)
    }

    pub fn high(knots: usize) -> Self {
        Self::with_tolerance(1e-8, knots)
    }

    /// Tolerances at which finite differences of the loss are meaningful.
    pub fn finite_difference(knots: usize) -> Self {
        let mut s = Self::with_tolerance(1e-12, knots);
        s.shooting.tol_lambda = 1e-14;
        s
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self::standard(2000)
    }
}

/// Parameters θ = (a, 1/p, q, w, v) and the linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DslModel {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub formulation: Formulation,
    pub a_net: Option<MlpParams>,
    pub inv_p_net: MlpParams,
    pub q_net: MlpParams,
    pub w_net: MlpParams,
    pub v_net: Option<MlpParams>,
    /// k x d, row-major.
    pub head_l: Vec<f64>,
    pub head_bias: Option<Vec<f64>>,
}

/// Parameter blocks in flattening order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Block {
    A,
    InvP,
    Q,
    W,
    V,
    L,
}

impl Block {
    pub fn name(self) -> &'static str {
        match self {
            Block::A => "a",
            Block::InvP => "p",
            Block::Q => "q",
            Block::W => "w",
            Block::V => "v",
            Block::L => "L",
        }
    }
}

/// Intermediate results of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub x: Vec<f64>,
    pub field_line: Option<FieldLine>,
    /// Network inputs at the knots: γ(τ_k), or (x, τ_k) for the fixed interval.
    pub inputs: Vec<Vec<f64>>,
    pub trace: CoefficientTrace,
    pub spectrum: Spectrum,
    pub u_at_zero: Vec<f64>,
    pub u_end: Vec<f64>,
    pub logits: Vec<f64>,
}

fn with_hidden(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input);
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

impl DslModel {
    pub fn new(n: usize, k: usize, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if n == 0 || k == 0 || cfg.d == 0 {
            return Err(DslError::InvalidInput(format!(
                "model needs positive input dim, class count and d (got {n}, {k}, {})",
                cfg.d
            )));
        }
        let coef_in = match cfg.formulation {
            Formulation::FieldLine => n,
            Formulation::FixedInterval => n + 1,
        };
        let range = |r: Role| RangeSpec::default_for(r).output_range().map(Some);
        let net =
            |role: Role, input: usize, hidden: &[usize], out: usize, act: Activation, salt: u64| {
                MlpParams::init(
                    &with_hidden(input, hidden, out),
                    act,
                    range(role)?,
                    cfg.init,
                    seed.wrapping_add(salt),
                )
            };
        let a_net = match cfg.formulation {
            Formulation::FieldLine => Some(net(Role::A, n, &cfg.a_hidden, n, Activation::Tanh, 1)?),
            Formulation::FixedInterval => None,
        };
        let v_net = if cfg.learned_v {
            if cfg.formulation == Formulation::FixedInterval {
                return Err(DslError::InvalidInput(
                    "the fixed-interval formulation uses u'(0) = 1; a learned v is not available"
                        .into(),
                ));
            }
            Some(net(
                Role::V,
                n,
                &cfg.coef_hidden,
                cfg.d,
                Activation::LeakyRelu,
                5,
            )?)
        } else {
            None
        };
        let head = MlpParams::init(
            &[cfg.d, k],
            Activation::Tanh,
            None,
            InitScheme::GlorotUniform,
            seed.wrapping_add(6),
        )?;
        Ok(Self {
            n,
            k,
            d: cfg.d,
            formulation: cfg.formulation,
            a_net,
            inv_p_net: net(
                Role::InvP,
                coef_in,
                &cfg.coef_hidden,
                1,
                Activation::LeakyRelu,
                2,
            )?,
            q_net: net(
                Role::Q,
                coef_in,
                &cfg.coef_hidden,
                1,
                Activation::LeakyRelu,
                3,
            )?,
            w_net: net(
                Role::W,
                coef_in,
                &cfg.coef_hidden,
                1,
                Activation::LeakyRelu,
                4,
            )?,
            v_net,
            head_l: head.weights[0].clone(),
            head_bias: if cfg.head_bias {
                Some(vec![0.0; k])
            } else {
                None
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        let coef_in = match self.formulation {
            Formulation::FieldLine => self.n,
            Formulation::FixedInterval => self.n + 1,
        };
        let check =
            |net: &MlpParams, input: usize, output: usize, what: &'static str| -> Result<()> {
                net.validate()?;
                if net.input_dim() != input {
                    return Err(DslError::ShapeMismatch {
                        context: what,
                        expected: input,
                        got: net.input_dim(),
                    });
                }
                if net.output_dim() != output {
                    return Err(DslError::ShapeMismatch {
                        context: what,
                        expected: output,
                        got: net.output_dim(),
                    });
                }
                Ok(())
            };
        match (&self.a_net, self.formulation) {
            (Some(a), Formulation::FieldLine) => check(a, self.n, self.n, "vector field network")?,
            (None, Formulation::FixedInterval) => {}
            _ => {
                return Err(DslError::InvalidInput(
                    "vector field network does not match formulation".into(),
                ))
            }
        }
        check(&self.inv_p_net, coef_in, 1, "1/p network")?;
        check(&self.q_net, coef_in, 1, "q network")?;
        check(&self.w_net, coef_in, 1, "w network")?;
        if let Some(v) = &self.v_net {
            if self.formulation == Formulation::FixedInterval {
                return Err(DslError::InvalidInput(
                    "learned v requires the field-line formulation".into(),
                ));
            }
            check(v, self.n, self.d, "slope network")?;
        }
        if self.d == 0 || self.head_l.len() != self.k * self.d {
            return Err(DslError::ShapeMismatch {
                context: "head matrix",
                expected: self.k * self.d,
                got: self.head_l.len(),
            });
        }
        if let Some(b) = &self.head_bias {
            if b.len() != self.k {
                return Err(DslError::ShapeMismatch {
                    context: "head bias",
                    expected: self.k,
                    got: b.len(),
                });
            }
        }
        if self.params().any(|v| !v.is_finite()) {
            return Err(DslError::InvalidInput("non-finite model parameter".into()));
        }
        Ok(())
    }

    /// Network parameter blocks in flattening order.
    fn nets(&self) -> Vec<(Block, &MlpParams)> {
        let mut out = Vec::with_capacity(5);
        if let Some(a) = &self.a_net {
            out.push((Block::A, a));
        }
        out.push((Block::InvP, &self.inv_p_net));
        out.push((Block::Q, &self.q_net));
        out.push((Block::W, &self.w_net));
        if let Some(v) = &self.v_net {
            out.push((Block::V, v));
        }
        out
    }

    fn nets_mut(&mut self) -> Vec<&mut MlpParams> {
        let mut out = Vec::with_capacity(5);
        if let Some(a) = &mut self.a_net {
            out.push(a);
        }
        out.push(&mut self.inv_p_net);
        out.push(&mut self.q_net);
        out.push(&mut self.w_net);
        if let Some(v) = &mut self.v_net {
            out.push(v);
        }
        out
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.a_net
            .iter()
            .chain(std::iter::once(&self.inv_p_net))
            .chain(std::iter::once(&self.q_net))
            .chain(std::iter::once(&self.w_net))
            .chain(self.v_net.iter())
            .flat_map(|n| n.params())
            .chain(self.head_l.iter())
            .chain(self.head_bias.iter().flatten())
    }

    pub fn n_params(&self) -> usize {
        self.nets().iter().map(|(_, n)| n.n_params()).sum::<usize>()
            + self.head_l.len()
            + self.head_bias.as_ref().map_or(0, Vec::len)
    }

    /// Block of every flat parameter index, in `to_flat` order.
    pub fn blocks(&self) -> Vec<(Block, usize)> {
        let mut out: Vec<(Block, usize)> = self
            .nets()
            .iter()
            .map(|(b, n)| (*b, n.n_params()))
            .collect();
        out.push((
            Block::L,
            self.head_l.len() + self.head_bias.as_ref().map_or(0, Vec::len),
        ));
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(DslError::ShapeMismatch {
                context: "flat model parameters",
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for net in self.nets_mut() {
            let m = net.n_params();
            net.set_flat(&flat[off..off + m])?;
            off += m;
        }
        let nl = self.head_l.len();
        self.head_l.copy_from_slice(&flat[off..off + nl]);
        off += nl;
        if let Some(b) = &mut self.head_bias {
            let nb = b.len();
            b.copy_from_slice(&flat[off..off + nb]);
        }
        Ok(())
    }

    /// Same structure with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        let n = z.n_params();
        z.set_flat(&vec![0.0; n]).expect("same shape");
        z
    }

    /// `self += scale * other` for models of identical structure.
    pub fn add_scaled(&mut self, other: &DslModel, scale: f64) {
        let mut flat = self.to_flat();
        for (a, b) in flat.iter_mut().zip(other.params()) {
            *a += scale * b;
        }
        self.set_flat(&flat).expect("same shape");
    }

    pub fn slope_source(&self) -> SlopeSource<'_> {
        match &self.v_net {
            Some(v) => SlopeSource::Net(v),
            None => SlopeSource::Constant,
        }
    }

    fn coefficient_nets(&self) -> CoefficientNets<'_> {
        CoefficientNets {
            inv_p: &self.inv_p_net,
            q: &self.q_net,
            w: &self.w_net,
            v: self.slope_source(),
        }
    }

    /// logits = L u + b.
    pub fn head(&self, u: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let row = &self.head_l[c * self.d..(c + 1) * self.d];
                let b = self.head_bias.as_ref().map_or(0.0, |b| b[c]);
                row.iter().zip(u).map(|(l, u)| l * u).sum::<f64>() + b
            })
            .collect()
    }

    pub fn trace_field_line(&self, x: &[f64], opts: &SolverOptions) -> Result<FieldLine> {
        let a = self.a_net.as_ref().ok_or_else(|| {
            DslError::InvalidInput("the fixed-interval formulation has no field lines".into())
        })?;
        fieldline::trace(a, x, &opts.trace)
    }

    /// Coefficient trace for sample `x`, with the network inputs at the knots.
    pub fn coefficient_trace(
        &self,
        x: &[f64],
        opts: &SolverOptions,
    ) -> Result<(Option<FieldLine>, Vec<Vec<f64>>, CoefficientTrace)> {
        if x.len() != self.n {
            return Err(DslError::ShapeMismatch {
                context: "sample dimension",
                expected: self.n,
                got: x.len(),
            });
        }
        if opts.knots < 2 {
            return Err(DslError::InvalidInput(
                "knot count must be at least 2".into(),
            ));
        }
        let nets = self.coefficient_nets();
        match self.formulation {
            Formulation::FieldLine => {
                let fl = self.trace_field_line(x, opts)?;
                let inputs = fieldline::knot_positions(&fl, opts.knots);
                let tr =
                    fieldline::coefficients_at(&inputs, &nets, fl.t_minus, fl.t_plus, 0.0, self.d)?;
                Ok((Some(fl), inputs, tr))
            }
            Formulation::FixedInterval => {
                let inputs: Vec<Vec<f64>> = (0..=opts.knots)
                    .map(|k| {
                        let mut v = x.to_vec();
                        v.push(k as f64 / opts.knots as f64);
                        v
                    })
                    .collect();
                let tr = fieldline::coefficients_at(&inputs, &nets, 0.0, 1.0, 0.5, self.d)?;
                Ok((None, inputs, tr))
            }
        }
    }

    /// Full forward pass for one sample.
    pub fn forward(&self, x: &[f64], opts: &SolverOptions) -> Result<ForwardCache> {
        let (field_line, inputs, trace) = self.coefficient_trace(x, opts)?;
        let spectrum = slcore::spectrum(&trace, self.d, &opts.shooting)?;
        let (u_at_zero, u_end) = slcore::readout(&trace, &spectrum, opts.shooting.substeps);
        let logits = self.head(&u_at_zero);
        Ok(ForwardCache {
            x: x.to_vec(),
            field_line,
            inputs,
            trace,
            spectrum,
            u_at_zero,
            u_end,
            logits,
        })
    }

    pub fn predict(&self, x: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
        Ok(self.forward(x, opts)?.logits)
    }
}
