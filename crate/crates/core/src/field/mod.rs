//! The sine-activated log-density field
//! `v(x) = W_L h_{L-1}`, `h_l = sin(W_l h_{l-1} + b_l)`, `h_0 = eta(x)`,
//! with exact parameter gradients and two routes to its Laplace-Beltrami
//! operator: forward-mode jets on tori, and projected finite-difference
//! ambient Hessians on any product.

mod extrinsic;
mod tape;

pub use extrinsic::{laplacian_extrinsic, laplacian_extrinsic_batch, DEFAULT_STEP};
pub use tape::Tape;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::Encoding;
use crate::error::{config, Error, Result};
use crate::manifold::Point;
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sine,
    /// Only for ablations: second-derivative penalties are rejected.
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// `H_0 = K, H_1, ..., H_L = 1`.
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub init_seed: u64,
    /// Multiplier on the first-layer initialisation range.
    #[serde(default = "unit_gain")]
    pub first_layer_gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

impl FieldConfig {
    /// `depth` weight layers, `depth - 1` hidden layers of `width` units.
    pub fn new(k: usize, width: usize, depth: usize) -> Self {
        let mut widths = vec![k];
        widths.extend(std::iter::repeat_n(width, depth.saturating_sub(1)));
        widths.push(1);
        Self { widths, activation: Activation::Sine, init_seed: 0, first_layer_gain: 1.0 }
    }

    pub fn depth(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth() < 1 {
            return config("a field needs at least one layer");
        }
        if *self.widths.last().unwrap() != 1 {
            return config("the final layer must have a single output");
        }
        if self.widths.contains(&0) {
            return config("layer widths must be positive");
        }
        if !(self.first_layer_gain.is_finite() && self.first_layer_gain > 0.0) {
            return config("first-layer gain must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `H_l x H_{l-1}`.
    pub weight: Array2<T>,
    /// Absent on the final layer.
    pub bias: Option<Array1<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
}

impl<T: Scalar> FieldParams<T> {
    pub fn from_layers(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return config("a field needs at least one layer");
        }
        for (l, w) in layers.windows(2).enumerate() {
            if w[1].weight.ncols() != w[0].weight.nrows() {
                return config(format!("layer {} input width does not match layer {l}", l + 1));
            }
        }
        let n = layers.len();
        for (l, layer) in layers.iter().enumerate() {
            let last = l + 1 == n;
            if last != layer.bias.is_none() {
                return config("hidden layers carry biases, the final layer does not");
            }
            if let Some(b) = &layer.bias {
                if b.len() != layer.weight.nrows() {
                    return config(format!("layer {l} bias length mismatch"));
                }
            }
        }
        if layers[n - 1].weight.nrows() != 1 {
            return config("the final layer must have a single output");
        }
        Ok(Self { layers, activation })
    }

    /// All-zero parameters of the given architecture.
    pub fn zeros(cfg: &FieldConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.depth();
        let layers = (0..n)
            .map(|l| Layer {
                weight: Array2::zeros((cfg.widths[l + 1], cfg.widths[l])),
                bias: (l + 1 < n).then(|| Array1::zeros(cfg.widths[l + 1])),
            })
            .collect();
        Self::from_layers(layers, cfg.activation)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn config(&self, init_seed: u64) -> FieldConfig {
        let mut widths = vec![self.input_dim()];
        widths.extend(self.layers.iter().map(|l| l.weight.nrows()));
        FieldConfig { widths, activation: self.activation, init_seed, first_layer_gain: 1.0 }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.as_ref().map_or(0, |b| b.len())).sum()
    }

    /// Start of each layer's block in the flat vector: `vec(W_l)` row-major,
    /// then `b_l`.
    pub fn offsets(&self) -> Vec<usize> {
        let mut at = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = at;
                at += l.weight.len() + l.bias.as_ref().map_or(0, |b| b.len());
                o
            })
            .collect()
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            if let Some(b) = &l.bias {
                out.extend(b.iter().copied());
            }
        }
        out
    }

    /// Overwrites the parameters from a flat vector in [`flatten`](Self::flatten) order.
    pub fn assign(&mut self, theta: &[T]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::Input(format!(
                "parameter vector has {} entries, architecture needs {}",
                theta.len(),
                self.num_params()
            )));
        }
        let mut it = theta.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            if let Some(b) = &mut l.bias {
                b.iter_mut().for_each(|w| *w = it.next().unwrap());
            }
        }
        Ok(())
    }

    pub fn unflatten(cfg: &FieldConfig, theta: &[T]) -> Result<Self> {
        let mut p = Self::zeros(cfg)?;
        p.assign(theta)?;
        Ok(p)
    }

    /// `theta <- theta + step * direction`.
    pub fn step(&mut self, step: T, direction: &[T]) {
        debug_assert_eq!(direction.len(), self.num_params());
        let mut it = direction.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w += step * *it.next().unwrap());
            if let Some(b) = &mut l.bias {
                b.iter_mut().for_each(|w| *w += step * *it.next().unwrap());
            }
        }
    }
}

/// Sine-network initialization with zero biases.
///
/// The first layer draws `U(-a, a)` with `a = sqrt(3 Vol / H_0)`: encoding
/// entries are orthonormal, so `E[psi_k^2] = 1/Vol` under the uniform law and
/// each first pre-activation has unit variance; `first_layer_gain` scales
/// `a`. Later layers draw
/// `U(-sqrt(6/H_{l-1}), sqrt(6/H_{l-1}))`, which keeps pre-activations close
/// to standard normal through the depth.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(cfg: &FieldConfig, volume: f64, rng: &mut R) -> Result<FieldParams<T>> {
    let mut p = FieldParams::zeros(cfg)?;
    for (l, layer) in p.layers.iter_mut().enumerate() {
        let fan_in = cfg.widths[l] as f64;
        let bound = if l == 0 { cfg.first_layer_gain * (3.0 * volume / fan_in).sqrt() } else { (6.0 / fan_in).sqrt() };
        layer.weight.iter_mut().for_each(|w| *w = T::lit(rng.random_range(-bound..bound)));
    }
    Ok(p)
}

/// [`init_params`] seeded from `cfg.init_seed`.
pub fn init_params_seeded<T: Scalar>(cfg: &FieldConfig, volume: f64) -> Result<FieldParams<T>> {
    init_params(cfg, volume, &mut ChaCha8Rng::seed_from_u64(cfg.init_seed))
}

pub(crate) fn check_dims<T: Scalar>(params: &FieldParams<T>, enc: &Encoding) -> Result<()> {
    if params.input_dim() != enc.len() {
        return config(format!("field expects {} inputs, encoding has {} entries", params.input_dim(), enc.len()));
    }
    Ok(())
}

/// `v` on a batch of already-encoded points.
pub fn forward_encoded<T: Scalar>(params: &FieldParams<T>, encoded: &Array2<T>) -> Array1<T> {
    Tape::forward(params, vec![encoded.clone()]).output(0).clone()
}

pub fn forward_batch<T: Scalar>(params: &FieldParams<T>, enc: &Encoding, points: &[Point<T>]) -> Result<Array1<T>> {
    check_dims(params, enc)?;
    Ok(forward_encoded(params, &enc.encode_batch(points)))
}

pub fn forward<T: Scalar>(params: &FieldParams<T>, enc: &Encoding, x: &Point<T>) -> Result<T> {
    Ok(forward_batch(params, enc, std::slice::from_ref(x))?[0])
}

/// `exp(v(x))`.
pub fn density<T: Scalar>(params: &FieldParams<T>, enc: &Encoding, x: &Point<T>) -> Result<T> {
    Ok(forward(params, enc, x)?.exp())
}

/// Exact `dv/dtheta` at one point, in flat parameter order.
pub fn param_gradient<T: Scalar>(params: &FieldParams<T>, enc: &Encoding, x: &Point<T>) -> Result<Vec<T>> {
    check_dims(params, enc)?;
    let tape = Tape::forward(params, vec![enc.encode_batch(std::slice::from_ref(x))]);
    Ok(tape.backward(params, &[Some(Array1::ones(1))]))
}

/// `d exp(v)/dtheta = exp(v) dv/dtheta`.
pub fn density_param_gradient<T: Scalar>(params: &FieldParams<T>, enc: &Encoding, x: &Point<T>) -> Result<Vec<T>> {
    check_dims(params, enc)?;
    let tape = Tape::forward(params, vec![enc.encode_batch(std::slice::from_ref(x))]);
    let ev = tape.output(0).mapv(T::exp);
    Ok(tape.backward(params, &[Some(ev)]))
}

/// Values and `sum_i weight(v_i) dv_i/dtheta` over encoded points, where the
/// weights may depend on the forward values.
pub fn weighted_gradient<T: Scalar>(
    params: &FieldParams<T>,
    encoded: Array2<T>,
    weight: impl Fn(&Array1<T>) -> Array1<T>,
) -> (Array1<T>, Vec<T>) {
    let tape = Tape::forward(params, vec![encoded]);
    let v = tape.output(0).clone();
    let w = weight(&v);
    let g = tape.backward(params, &[Some(w)]);
    (v, g)
}

/// Laplacians on a torus through forward-mode jets; exact up to rounding.
pub fn laplacian_intrinsic_batch<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    points: &[Point<T>],
) -> Result<Array1<T>> {
    check_dims(params, enc)?;
    let jets = enc.encode_jets(points)?;
    let d = enc.spec().len();
    let tape = Tape::forward(params, jets);
    Ok(intrinsic_sum(&tape, d))
}

pub fn laplacian_intrinsic<T: Scalar>(params: &FieldParams<T>, enc: &Encoding, x: &Point<T>) -> Result<T> {
    Ok(laplacian_intrinsic_batch(params, enc, std::slice::from_ref(x))?[0])
}

fn intrinsic_sum<T: Scalar>(tape: &Tape<T>, d: usize) -> Array1<T> {
    let mut lap = tape.output(1 + d).clone();
    for k in 1..d {
        lap += tape.output(1 + d + k);
    }
    lap
}

/// How the roughness penalty differentiates the field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[derive(Default)]
pub enum PenaltyMethod {
    /// Forward-mode jets in the torus angles.
    #[default]
    Intrinsic,
    /// Centered-difference ambient Hessian with step `h`, contracted with
    /// block tangent projectors.
    Extrinsic { h: f64 },
}

/// Laplacian values and `sum_i weight_i dL_i/dtheta` where `L_i` is the
/// Laplacian at `points[i]` and the weights may depend on the `L_i`.
pub fn laplacian_weighted_gradient<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    points: &[Point<T>],
    method: PenaltyMethod,
    weight: impl Fn(&Array1<T>) -> Array1<T>,
) -> Result<(Array1<T>, Vec<T>)> {
    check_dims(params, enc)?;
    if params.activation() == Activation::Relu {
        return config("roughness penalties need a twice-differentiable (sine) field");
    }
    match method {
        PenaltyMethod::Intrinsic => {
            let jets = enc.encode_jets(points)?;
            let d = enc.spec().len();
            let tape = Tape::forward(params, jets);
            let lap = intrinsic_sum(&tape, d);
            let w = weight(&lap);
            let mut adj: Vec<Option<Array1<T>>> = vec![None; 1 + d];
            adj.extend(std::iter::repeat_n(Some(w), d));
            Ok((lap, tape.backward(params, &adj)))
        }
        PenaltyMethod::Extrinsic { h } => extrinsic::weighted_gradient(params, enc, points, h, weight),
    }
}

/// Gradient of the Monte-Carlo roughness penalty
/// `tau Vol / q sum_i (Laplacian v(x_i))^2` over uniform points.
pub fn penalty_param_gradient<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    points: &[Point<T>],
    tau: f64,
    method: PenaltyMethod,
) -> Result<Vec<T>> {
    if tau == 0.0 {
        return Ok(vec![T::zero(); params.num_params()]);
    }
    let scale = T::lit(tau * enc.spec().volume() / points.len() as f64);
    let two = T::lit(2.0);
    let (_, g) = laplacian_weighted_gradient(params, enc, points, method, |lap| lap.mapv(|l| two * scale * l))?;
    Ok(g)
}

/// Laplacian values by the chosen route.
pub fn laplacian_batch<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    points: &[Point<T>],
    method: PenaltyMethod,
) -> Result<Array1<T>> {
    match method {
        PenaltyMethod::Intrinsic => laplacian_intrinsic_batch(params, enc, points),
        PenaltyMethod::Extrinsic { h } => laplacian_extrinsic_batch(params, enc, points, h),
    }
}

/// A trained field with its encoding, evaluated as `exp(v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDensity<T> {
    pub encoding: Encoding,
    pub params: FieldParams<T>,
}

impl<T: Scalar> FieldDensity<T> {
    pub fn new(encoding: Encoding, params: FieldParams<T>) -> Result<Self> {
        check_dims(&params, &encoding)?;
        Ok(Self { encoding, params })
    }

    pub fn log_density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        let pts: Vec<Point<T>> =
            points.iter().map(|p| Point::new(p.coords.iter().map(|&c| T::lit(c)).collect())).collect();
        Ok(forward_batch(&self.params, &self.encoding, &pts)?.iter().map(|v| v.f64()).collect())
    }
}

impl<T: Scalar> crate::metrics::Density for FieldDensity<T> {
    fn spec(&self) -> crate::manifold::ProductManifoldSpec {
        self.encoding.spec().clone()
    }

    fn density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        Ok(self.log_density_batch(points)?.into_iter().map(f64::exp).collect())
    }
}

#[cfg(test)]
mod tests;
