//! Multilayer perceptrons for the coefficient functions, with output range
//! squashing and hand-written reverse- and forward-mode derivatives.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DslError, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

// Pre-squash clamp keeping squashed outputs strictly inside their range.
const SIGMOID_CLAMP: f64 = 30.0;
const TANH_CLAMP: f64 = 17.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    LeakyRelu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Squash {
    Sigmoid,
    Tanh,
}

/// Output interval enforced by a final squashing map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRange {
    pub lo: f64,
    pub hi: f64,
    pub squash: Squash,
}

impl OutputRange {
    pub fn new(lo: f64, hi: f64, squash: Squash) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(DslError::InvalidInput(format!(
                "output range must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi, squash })
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        match self.squash {
            Squash::Sigmoid => {
                let z = z.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
                self.lo + (self.hi - self.lo) / (1.0 + (-z).exp())
            }
            Squash::Tanh => {
                let z = z.clamp(-TANH_CLAMP, TANH_CLAMP);
                0.5 * (self.lo + self.hi) + 0.5 * (self.hi - self.lo) * z.tanh()
            }
        }
    }

    #[inline]
    pub fn deriv(&self, z: f64) -> f64 {
        match self.squash {
            Squash::Sigmoid => {
                if z.abs() > SIGMOID_CLAMP {
                    return 0.0;
                }
                let s = 1.0 / (1.0 + (-z).exp());
                (self.hi - self.lo) * s * (1.0 - s)
            }
            Squash::Tanh => {
                if z.abs() > TANH_CLAMP {
                    return 0.0;
                }
                let t = z.tanh();
                0.5 * (self.hi - self.lo) * (1.0 - t * t)
            }
        }
    }
}

/// Which coefficient function a network represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    A,
    Q,
    InvP,
    W,
    V,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    pub role: Role,
    pub lo: f64,
    pub hi: f64,
}

impl RangeSpec {
    pub fn default_for(role: Role) -> Self {
        let (lo, hi) = match role {
            Role::A => (0.01, 1.0),
            Role::Q => (-10.0, 10.0),
            Role::InvP => (1.0, 10.0),
            Role::W => (0.1, 10.0),
            // learned slope vectors share the weight range
            Role::V => (0.1, 10.0),
        };
        Self { role, lo, hi }
    }

    /// q is sign-symmetric and uses tanh; everything else a sigmoid.
    pub fn output_range(&self) -> Result<OutputRange> {
        let squash = match self.role {
            Role::Q => Squash::Tanh,
            _ => Squash::Sigmoid,
        };
        OutputRange::new(self.lo, self.hi, squash)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    GlorotUniform,
    Orthogonal,
}

/// Weights of a fully connected network. `weights[l]` is row-major with
/// shape `layer_dims[l + 1] x layer_dims[l]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub output_range: Option<OutputRange>,
}

impl MlpParams {
    pub fn init(
        layer_dims: &[usize],
        activation: Activation,
        output_range: Option<OutputRange>,
        scheme: InitScheme,
        seed: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(DslError::InvalidInput(format!(
                "layer_dims needs at least two positive entries, got {layer_dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let w = match scheme {
                InitScheme::GlorotUniform => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect()
                }
                InitScheme::Orthogonal => orthogonal(fan_out, fan_in, &mut rng),
            };
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
            output_range,
        })
    }

    /// Same shape, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            activation: self.activation,
            output_range: self.output_range,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(DslError::ShapeMismatch {
                context: "MlpParams::set_flat",
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mutable views over every parameter in flat order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(self.biases.iter())
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    /// `self += scale * other`, shapes assumed equal.
    pub fn add_scaled(&mut self, other: &MlpParams, scale: f64) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += scale * b;
        }
    }

    /// Check internal shape consistency, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.iter().any(|&d| d == 0) {
            return Err(DslError::InvalidInput("bad layer_dims".into()));
        }
        let nl = self.layer_dims.len() - 1;
        if self.weights.len() != nl || self.biases.len() != nl {
            return Err(DslError::ShapeMismatch {
                context: "MlpParams layer count",
                expected: nl,
                got: self.weights.len().min(self.biases.len()),
            });
        }
        for l in 0..nl {
            let (fi, fo) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if self.weights[l].len() != fi * fo {
                return Err(DslError::ShapeMismatch {
                    context: "MlpParams weight matrix",
                    expected: fi * fo,
                    got: self.weights[l].len(),
                });
            }
            if self.biases[l].len() != fo {
                return Err(DslError::ShapeMismatch {
                    context: "MlpParams bias vector",
                    expected: fo,
                    got: self.biases[l].len(),
                });
            }
        }
        if let Some(r) = self.output_range {
            OutputRange::new(r.lo, r.hi, r.squash)?;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(DslError::ShapeMismatch {
                context: "MLP input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer (the last one before squashing).
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let nl = self.weights.len();
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(nl);
        let mut act: Vec<f64> = x.to_vec();
        for l in 0..nl {
            let (fi, fo) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * fi..(o + 1) * fi];
                *zo += row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
            }
            debug_assert_eq!(z.len(), fo);
            if l + 1 < nl {
                act = z.iter().map(|&v| self.activation.apply(v)).collect();
            }
            zs.push(z);
        }
        zs
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut zs = self.pre_activations(x);
        let mut out = zs.pop().unwrap();
        if let Some(r) = &self.output_range {
            for v in out.iter_mut() {
                *v = r.apply(*v);
            }
        }
        Ok(out)
    }

    /// Scalar output of a single-output network.
    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?[0])
    }

    /// Reverse-mode gradient for a given output cotangent. Returns the input
    /// gradient and a parameter gradient with the same layout as `self`.
    pub fn backprop(&self, x: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, MlpParams)> {
        let mut grad = self.zeros_like();
        let gx = self.backprop_into(x, cotangent, &mut grad)?;
        Ok((gx, grad))
    }

    /// Like [`backprop`](Self::backprop) but accumulates into `grad`.
    pub fn backprop_into(
        &self,
        x: &[f64],
        cotangent: &[f64],
        grad: &mut MlpParams,
    ) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if cotangent.len() != self.output_dim() {
            return Err(DslError::ShapeMismatch {
                context: "MLP cotangent",
                expected: self.output_dim(),
                got: cotangent.len(),
            });
        }
        let zs = self.pre_activations(x);
        let nl = self.weights.len();
        let mut delta: Vec<f64> = match &self.output_range {
            Some(r) => cotangent
                .iter()
                .zip(&zs[nl - 1])
                .map(|(c, &z)| c * r.deriv(z))
                .collect(),
            None => cotangent.to_vec(),
        };
        for l in (0..nl).rev() {
            let fi = self.layer_dims[l];
            let input: Vec<f64> = if l == 0 {
                x.to_vec()
            } else {
                zs[l - 1]
                    .iter()
                    .map(|&v| self.activation.apply(v))
                    .collect()
            };
            let gw = &mut grad.weights[l];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * fi..(o + 1) * fi];
                for (g, a) in row.iter_mut().zip(&input) {
                    *g += d * a;
                }
            }
            for (g, d) in grad.biases[l].iter_mut().zip(&delta) {
                *g += d;
            }
            let w = &self.weights[l];
            let mut back = vec![0.0; fi];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &w[o * fi..(o + 1) * fi];
                for (b, wv) in back.iter_mut().zip(row) {
                    *b += d * wv;
                }
            }
            if l > 0 {
                for (b, &z) in back.iter_mut().zip(&zs[l - 1]) {
                    *b *= self.activation.deriv(z);
                }
            }
            delta = back;
        }
        Ok(delta)
    }

    /// Forward-mode directional derivative in input space:
    /// returns `(f(x), J(x) dx)`.
    pub fn jvp(&self, x: &[f64], dx: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        self.check_input(dx)?;
        let nl = self.weights.len();
        let mut act = x.to_vec();
        let mut dact = dx.to_vec();
        for l in 0..nl {
            let fi = self.layer_dims[l];
            let w = &self.weights[l];
            let fo = self.layer_dims[l + 1];
            let mut z = self.biases[l].clone();
            let mut dz = vec![0.0; fo];
            for o in 0..fo {
                let row = &w[o * fi..(o + 1) * fi];
                for i in 0..fi {
                    z[o] += row[i] * act[i];
                    dz[o] += row[i] * dact[i];
                }
            }
            if l + 1 < nl {
                for o in 0..fo {
                    let g = self.activation.deriv(z[o]);
                    dz[o] *= g;
                    z[o] = self.activation.apply(z[o]);
                }
            } else if let Some(r) = &self.output_range {
                for o in 0..fo {
                    dz[o] *= r.deriv(z[o]);
                    z[o] = r.apply(z[o]);
                }
            }
            act = z;
            dact = dz;
        }
        Ok((act, dact))
    }
}

/// Row-major `rows x cols` matrix with orthonormal rows or columns.
fn orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (big, small) = (rows.max(cols), rows.min(cols));
    let g = DMatrix::<f64>::from_fn(big, small, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..small {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn zero_net(dims: &[usize], range: Option<OutputRange>) -> MlpParams {
        let mut p =
            MlpParams::init(dims, Activation::Tanh, range, InitScheme::GlorotUniform, 0).unwrap();
        for v in p.params_mut() {
            *v = 0.0;
        }
        p
    }

    #[test]
    fn zero_net_hits_range_midpoint() {
        let r = OutputRange::new(1.0, 10.0, Squash::Sigmoid).unwrap();
        let p = zero_net(&[3, 5, 1], Some(r));
        assert_eq!(p.forward(&[0.1, 0.2, 0.3]).unwrap(), vec![5.5]);
    }

    #[test]
    fn identity_layer_under_tanh_is_linear() {
        // single layer, no range: the output layer is linear
        let mut p = zero_net(&[3, 3], None);
        for i in 0..3 {
            p.weights[0][i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.2, 2.0];
        assert_eq!(p.forward(&x).unwrap(), x.to_vec());
        // a tanh squash over (-1, 1) gives tanh componentwise
        p.output_range = Some(OutputRange::new(-1.0, 1.0, Squash::Tanh).unwrap());
        let y = p.forward(&x).unwrap();
        for (yi, xi) in y.iter().zip(x) {
            assert!((yi - xi.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn role_a_range_is_strict() {
        let r = RangeSpec::default_for(Role::A).output_range().unwrap();
        let mut p = MlpParams::init(
            &[2, 8, 2],
            Activation::Tanh,
            Some(r),
            InitScheme::GlorotUniform,
            7,
        )
        .unwrap();
        for v in p.params_mut() {
            *v *= 1e4;
        }
        for x in [[0.1, 0.9], [0.5, 0.5], [-50.0, 50.0]] {
            for y in p.forward(&x).unwrap() {
                assert!(y > 0.01 && y < 1.0, "{y}");
            }
        }
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let p = MlpParams::init(
            &[3, 2],
            Activation::Tanh,
            None,
            InitScheme::GlorotUniform,
            1,
        )
        .unwrap();
        let x = [0.5, -1.0, 2.0];
        let c = [1.5, -0.25];
        let (gx, g) = p.backprop(&x, &c).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(g.weights[0][o * 3 + i], c[o] * x[i]);
            }
            assert_eq!(g.biases[0][o], c[o]);
        }
        for i in 0..3 {
            let expect = c[0] * p.weights[0][i] + c[1] * p.weights[0][3 + i];
            assert!((gx[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let p = MlpParams::init(
            &[2, 4, 3],
            Activation::LeakyRelu,
            None,
            InitScheme::GlorotUniform,
            3,
        )
        .unwrap();
        let (gx, g) = p.backprop(&[0.2, 0.7], &[0.0; 3]).unwrap();
        assert!(gx.iter().all(|&v| v == 0.0));
        assert!(g.params().all(|&v| v == 0.0));
    }

    #[test]
    fn glorot_bound() {
        let p = MlpParams::init(
            &[4, 4],
            Activation::Tanh,
            None,
            InitScheme::GlorotUniform,
            11,
        )
        .unwrap();
        let lim = (6.0f64 / 8.0).sqrt();
        assert!(p.weights[0].iter().all(|w| w.abs() <= lim));
        assert!(p.biases[0].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn orthogonal_square_layer() {
        let p =
            MlpParams::init(&[6, 6], Activation::Tanh, None, InitScheme::Orthogonal, 5).unwrap();
        let w = DMatrix::from_row_slice(6, 6, &p.weights[0]);
        let wtw = w.transpose() * &w;
        assert!((wtw - DMatrix::<f64>::identity(6, 6)).abs().max() < 1e-10);
        // rectangular layers get orthonormal rows
        let p =
            MlpParams::init(&[8, 3], Activation::Tanh, None, InitScheme::Orthogonal, 5).unwrap();
        let w = DMatrix::from_row_slice(3, 8, &p.weights[0]);
        assert!(
            (&w * w.transpose() - DMatrix::<f64>::identity(3, 3))
                .abs()
                .max()
                < 1e-10
        );
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(
            &[2, 16, 1],
            Activation::LeakyRelu,
            None,
            InitScheme::GlorotUniform,
            42,
        )
        .unwrap();
        let b = MlpParams::init(
            &[2, 16, 1],
            Activation::LeakyRelu,
            None,
            InitScheme::GlorotUniform,
            42,
        )
        .unwrap();
        assert_eq!(a, b);
        let c = MlpParams::init(
            &[2, 16, 1],
            Activation::LeakyRelu,
            None,
            InitScheme::GlorotUniform,
            43,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shape_errors() {
        let p = MlpParams::init(
            &[2, 3],
            Activation::Tanh,
            None,
            InitScheme::GlorotUniform,
            0,
        )
        .unwrap();
        assert!(matches!(
            p.forward(&[1.0]),
            Err(DslError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            p.backprop(&[1.0, 2.0], &[1.0]),
            Err(DslError::ShapeMismatch { .. })
        ));
    }

    fn arb_net() -> impl Strategy<Value = (MlpParams, Vec<f64>, Vec<f64>)> {
        (
            1usize..4,
            1usize..6,
            1usize..4,
            any::<bool>(),
            0u8..3,
            any::<u64>(),
        )
            .prop_flat_map(|(ni, nh, no, tanh, range, seed)| {
                let act = if tanh {
                    Activation::Tanh
                } else {
                    Activation::LeakyRelu
                };
                let r = match range {
                    0 => None,
                    1 => Some(OutputRange::new(0.1, 10.0, Squash::Sigmoid).unwrap()),
                    _ => Some(OutputRange::new(-10.0, 10.0, Squash::Tanh).unwrap()),
                };
                let p = MlpParams::init(&[ni, nh, nh, no], act, r, InitScheme::GlorotUniform, seed)
                    .unwrap();
                (
                    Just(p),
                    prop::collection::vec(-1.0f64..1.0, ni),
                    prop::collection::vec(-1.0f64..1.0, no),
                )
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn backprop_matches_finite_differences((p, x, c) in arb_net()) {
            let (gx, g) = p.backprop(&x, &c).unwrap();
            let loss = |q: &MlpParams, xx: &[f64]| -> f64 {
                q.forward(xx).unwrap().iter().zip(&c).map(|(a, b)| a * b).sum()
            };
            let h = 1e-6;
            let flat = p.to_flat();
            let gflat = g.to_flat();
            let mut q = p.clone();
            for i in 0..flat.len() {
                let mut f = flat.clone();
                f[i] += h;
                q.set_flat(&f).unwrap();
                let lp = loss(&q, &x);
                f[i] -= 2.0 * h;
                q.set_flat(&f).unwrap();
                let lm = loss(&q, &x);
                let fd = (lp - lm) / (2.0 * h);
                // leaky-relu kinks make single entries noisy only when a
                // pre-activation sits within h of zero, which has measure ~0
                prop_assert!((fd - gflat[i]).abs() <= 1e-6 * fd.abs().max(1.0), "param {i}: fd {fd} vs {}", gflat[i]);
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (loss(&p, &xp) - loss(&p, &xm)) / (2.0 * h);
                prop_assert!((fd - gx[i]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }

        #[test]
        fn jvp_agrees_with_backprop((p, x, c) in arb_net(), dir in prop::collection::vec(-1.0f64..1.0, 3)) {
            let dx: Vec<f64> = (0..x.len()).map(|i| dir[i % dir.len()]).collect();
            let (y, dy) = p.jvp(&x, &dx).unwrap();
            prop_assert_eq!(y.len(), p.output_dim());
            let (gx, _) = p.backprop(&x, &c).unwrap();
            let lhs: f64 = dy.iter().zip(&c).map(|(a, b)| a * b).sum();
            let rhs: f64 = gx.iter().zip(&dx).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        }

        #[test]
        fn squash_is_monotone(z1 in -40.0f64..40.0, dz in 1e-3f64..5.0) {
            for r in [
                OutputRange::new(0.01, 1.0, Squash::Sigmoid).unwrap(),
                OutputRange::new(-10.0, 10.0, Squash::Tanh).unwrap(),
            ] {
                let (a, b) = (r.apply(z1), r.apply(z1 + dz));
                prop_assert!(b >= a);
                prop_assert!(a > r.lo && a < r.hi && b > r.lo && b < r.hi);
            }
        }
    }
}
