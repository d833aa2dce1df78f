//! Competing estimators: a product von Mises kernel density estimate with a
//! common cross-validated concentration, and the tensor-product-basis
//! log-density model with a diagonal roughness penalty.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{tensor_set_size, Encoding};
use crate::error::{config, Error, Result};
use crate::field::{forward_batch, Activation, FieldDensity, FieldParams, Layer};
use crate::manifold::{Point, ProductManifoldSpec};
use crate::metrics::{ise_criterion, Density, Integrator};
use crate::objective::{train_with_term, EpochRecord, PenaltyTerm, TrainConfig, TrainState};
use crate::Scalar;

/// Offset added to the seed for the cross-validation fold shuffle.
pub const FOLD_STREAM: u64 = 5;
/// Offset added to the seed for random TPB initialisation.
pub const TPB_INIT_STREAM: u64 = 2;
/// Largest full tensor basis a TPB fit will allocate.
pub const MAX_TPB_COEFFS: usize = 1_000_000;

const SERIES_LIMIT: f64 = 20.0;

/// `exp(-x) I_0(x)` for `x >= 0`: power series up to 20, the large-argument
/// expansion above.
pub fn bessel_i0e(x: f64) -> f64 {
    let x = x.abs();
    if x <= SERIES_LIMIT {
        let q = 0.25 * x * x;
        let (mut term, mut sum, mut k) = (1.0, 1.0, 0.0);
        loop {
            k += 1.0;
            term *= q / (k * k);
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
        }
        return sum * (-x).exp();
    }
    let (mut term, mut sum, mut k) = (1.0f64, 1.0, 0.0f64);
    loop {
        k += 1.0;
        let next = term * (2.0 * k - 1.0).powi(2) / (8.0 * k * x);
        if next >= term || next < sum * 1e-17 {
            break;
        }
        term = next;
        sum += term;
    }
    sum / (TAU * x).sqrt()
}

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> f64 {
    bessel_i0e(x) * x.abs().exp()
}

/// Product von Mises kernel density estimate on `T^D`.
#[derive(Clone, Debug, PartialEq)]
pub struct KdeModel {
    kappa: f64,
    data: Vec<Point<f64>>,
    /// `(cos, sin)` of every coordinate, point-major.
    trig: Vec<(f64, f64)>,
    dim: usize,
}

impl KdeModel {
    pub fn new(data: Vec<Point<f64>>, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa >= 0.0) {
            return config(format!("concentration must be finite and >= 0, got {kappa}"));
        }
        let dim = match data.first() {
            Some(p) if !p.coords.is_empty() => p.coords.len(),
            Some(_) => return Err(Error::Input("data points have no coordinates".into())),
            None => return Err(Error::Input("KDE needs at least one data point".into())),
        };
        let mut trig = Vec::with_capacity(data.len() * dim);
        for (i, p) in data.iter().enumerate() {
            if p.coords.len() != dim || p.coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::Input(format!("data point {i} is not a finite point of T^{dim}")));
            }
            trig.extend(p.coords.iter().map(|c| (c.cos(), c.sin())));
        }
        Ok(Self { kappa, data, trig, dim })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn data(&self) -> &[Point<f64>] {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        let xt: Vec<(f64, f64)> = x.iter().map(|c| (c.cos(), c.sin())).collect();
        let k = self.kappa;
        let sum: f64 = self
            .trig
            .chunks_exact(self.dim)
            .map(|pt| {
                let s: f64 = pt.iter().zip(&xt).map(|(&(c, s), &(cx, sx))| c * cx + s * sx - 1.0).sum();
                (k * s).exp()
            })
            .sum();
        sum / self.data.len() as f64 * (TAU * bessel_i0e(k)).powi(-(self.dim as i32))
    }
}

impl Density for KdeModel {
    fn spec(&self) -> ProductManifoldSpec {
        ProductManifoldSpec::torus(self.dim).expect("dimension is at least one")
    }

    fn density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        points
            .iter()
            .map(|p| match p.coords.len() == self.dim {
                true => Ok(self.density(&p.coords)),
                false => Err(Error::Input(format!("expected {} coordinates, got {}", self.dim, p.coords.len()))),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaSelection {
    pub kappa: f64,
    /// `(kappa, fold-averaged criterion)` for every grid value.
    pub scores: Vec<(f64, f64)>,
}

/// Seeded assignment of `n` points to `folds` near-equal folds.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(FOLD_STREAM)));
    let mut fold = vec![0; n];
    for (rank, &i) in idx.iter().enumerate() {
        fold[i] = rank % folds;
    }
    fold
}

/// K-fold cross-validation of the concentration against the held-out
/// integrated-squared-error criterion. Ties go to the smaller `kappa`.
pub fn kde_select_kappa(
    data: &[Point<f64>],
    grid: &[f64],
    folds: usize,
    seed: u64,
    integ: &Integrator,
) -> Result<KappaSelection> {
    if grid.is_empty() {
        return config("concentration grid is empty");
    }
    if folds < 2 || folds > data.len() {
        return config(format!("need 2 <= folds <= n, got {folds} folds for {} points", data.len()));
    }
    let fold = fold_assignment(data.len(), folds, seed);
    let mut scores = Vec::with_capacity(grid.len());
    for &kappa in grid {
        let mut total = 0.0;
        for f in 0..folds {
            let (mut fit, mut held) = (Vec::new(), Vec::new());
            for (p, &g) in data.iter().zip(&fold) {
                match g == f {
                    true => held.push(p.clone()),
                    false => fit.push(p.clone()),
                }
            }
            total += ise_criterion(&KdeModel::new(fit, kappa)?, &held, integ)?;
        }
        let score = total / folds as f64;
        if !score.is_finite() {
            return Err(Error::Numerical(format!("criterion for kappa = {kappa} is {score}")));
        }
        scores.push((kappa, score));
    }
    let best = scores
        .iter()
        .copied()
        .reduce(|a, b| match b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
            true => b,
            false => a,
        })
        .expect("grid is nonempty");
    Ok(KappaSelection { kappa: best.0, scores })
}

fn default_exponent() -> u32 {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpbConfig {
    /// Highest frequency or degree per factor.
    pub max_freq: Vec<u32>,
    /// Penalty weights are `(sum of eigenvalues)^penalty_exponent`.
    #[serde(default = "default_exponent")]
    pub penalty_exponent: u32,
    /// Coefficients start at the uniform density plus noise uniform in
    /// `[-init_scale, init_scale]`.
    #[serde(default)]
    pub init_scale: f64,
    #[serde(default)]
    pub init_seed: u64,
}

impl TpbConfig {
    pub fn new(max_freq: Vec<u32>) -> Self {
        Self { max_freq, penalty_exponent: 2, init_scale: 0.0, init_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.penalty_exponent, 1 | 2) {
            return config(format!("penalty_exponent must be 1 or 2, got {}", self.penalty_exponent));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return config("init_scale must be finite and >= 0");
        }
        Ok(())
    }
}

/// Per-coefficient penalty weights for a full tensor basis.
pub fn penalty_weights(encoding: &Encoding, exponent: u32) -> Vec<f64> {
    encoding.eigenvalues().iter().map(|&l| (l as f64).powi(exponent as i32)).collect()
}

/// Log-density `theta^T eta(x)` over the full tensor-product basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TpbModel<T> {
    encoding: Encoding,
    params: FieldParams<T>,
    f_diag: Vec<f64>,
    penalty_exponent: u32,
}

impl<T: Scalar> TpbModel<T> {
    pub fn new(spec: &ProductManifoldSpec, max_freq: &[u32], penalty_exponent: u32, coeffs: &[T]) -> Result<Self> {
        let mut cfg = TpbConfig::new(max_freq.to_vec());
        cfg.penalty_exponent = penalty_exponent;
        cfg.validate()?;
        let encoding = tpb_encoding(spec, max_freq)?;
        if coeffs.len() != encoding.len() {
            return config(format!("expected {} coefficients, got {}", encoding.len(), coeffs.len()));
        }
        Self::from_parts(encoding, coeffs.to_vec(), penalty_exponent)
    }

    fn from_parts(encoding: Encoding, coeffs: Vec<T>, penalty_exponent: u32) -> Result<Self> {
        let k = coeffs.len();
        let weight = ndarray::Array2::from_shape_vec((1, k), coeffs).map_err(|e| Error::Input(e.to_string()))?;
        let params = FieldParams::from_layers(vec![Layer { weight, bias: None }], Activation::Sine)?;
        let f_diag = penalty_weights(&encoding, penalty_exponent);
        Ok(Self { encoding, params, f_diag, penalty_exponent })
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    pub fn coeffs(&self) -> Vec<T> {
        self.params.flatten()
    }

    pub fn f_diag(&self) -> &[f64] {
        &self.f_diag
    }

    pub fn penalty_exponent(&self) -> u32 {
        self.penalty_exponent
    }

    /// `tau theta^T diag(F) theta`.
    pub fn penalty(&self, tau: f64) -> f64 {
        tau * self.coeffs().iter().zip(&self.f_diag).map(|(w, f)| f * w.f64() * w.f64()).sum::<f64>()
    }

    /// `2 tau F * theta`.
    pub fn penalty_gradient(&self, tau: f64) -> Vec<f64> {
        self.coeffs().iter().zip(&self.f_diag).map(|(w, f)| 2.0 * tau * f * w.f64()).collect()
    }

    pub fn log_density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        let pts: Vec<Point<T>> =
            points.iter().map(|p| Point::new(p.coords.iter().map(|&c| T::lit(c)).collect())).collect();
        Ok(forward_batch(&self.params, &self.encoding, &pts)?.iter().map(|v| v.f64()).collect())
    }

    /// The same model as a one-layer field.
    pub fn to_field(&self) -> FieldDensity<T> {
        FieldDensity { encoding: self.encoding.clone(), params: self.params.clone() }
    }
}

impl<T: Scalar> Density for TpbModel<T> {
    fn spec(&self) -> ProductManifoldSpec {
        self.encoding.spec().clone()
    }

    fn density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        Ok(self.log_density_batch(points)?.into_iter().map(f64::exp).collect())
    }
}

fn tpb_encoding(spec: &ProductManifoldSpec, max_freq: &[u32]) -> Result<Encoding> {
    if max_freq.len() != spec.len() {
        return config(format!("need {} maximum frequencies, got {}", spec.len(), max_freq.len()));
    }
    let size = tensor_set_size(spec, max_freq);
    if size > MAX_TPB_COEFFS {
        return config(format!("full tensor basis has {size} coefficients, above the limit of {MAX_TPB_COEFFS}"));
    }
    Encoding::full_tensor(spec, max_freq)
}

#[derive(Clone, Debug)]
pub struct TpbFit<T> {
    pub model: TpbModel<T>,
    pub history: Vec<EpochRecord>,
    pub validation_criterion: Option<f64>,
    pub stopped_early: bool,
}

/// Stochastic gradient ascent on the penalized likelihood of the linear
/// model, with `tau` taken from `train_cfg`. Continues from `init` when given.
pub fn tpb_fit<T: Scalar>(
    data: &[Point<T>],
    spec: &ProductManifoldSpec,
    tpb_cfg: &TpbConfig,
    train_cfg: &TrainConfig,
    init: Option<(&TpbModel<T>, usize)>,
) -> Result<TpbFit<T>> {
    tpb_cfg.validate()?;
    let (model, epoch) = match init {
        Some((m, epoch)) => {
            if m.encoding.spec() != spec || m.penalty_exponent != tpb_cfg.penalty_exponent {
                return config("initial TPB model does not match the configuration");
            }
            (m.clone(), epoch)
        }
        None => {
            let encoding = tpb_encoding(spec, &tpb_cfg.max_freq)?;
            let mut rng = ChaCha8Rng::seed_from_u64(tpb_cfg.init_seed.wrapping_add(TPB_INIT_STREAM));
            let s = tpb_cfg.init_scale;
            // the constant eigenfunction is 1/sqrt(Vol); start at the uniform density
            let vol = spec.volume();
            let coeffs = encoding
                .eigenvalues()
                .iter()
                .map(|&l| {
                    let base = if l == 0 { -vol.sqrt() * vol.ln() } else { 0.0 };
                    T::lit(base + if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 })
                })
                .collect();
            (TpbModel::from_parts(encoding, coeffs, tpb_cfg.penalty_exponent)?, 0)
        }
    };
    let term = PenaltyTerm::Diagonal(model.f_diag.iter().map(|&f| T::lit(f)).collect());
    let state = TrainState { encoding: model.encoding.clone(), params: model.params.clone(), epoch };
    let out = train_with_term(state, data, train_cfg, &term)?;
    Ok(TpbFit {
        model: TpbModel { params: out.state.params, ..model },
        history: out.history,
        validation_criterion: out.validation_criterion,
        stopped_early: out.stopped_early,
    })
}
