//! The penalized log-likelihood
//! `L = mean_i v(x_i) - int exp(v) - tau int (Laplacian v)^2`,
//! its unbiased three-term stochastic gradient, the mini-batch ascent loop,
//! penalty selection and gradient signal-to-noise diagnostics.

use ndarray::{Array1, Array2, Axis};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::{Encoding, EncodingConfig};
use crate::error::{config, Error, Result};
use crate::field::{
    check_dims, init_params_seeded, laplacian_batch, laplacian_weighted_gradient, weighted_gradient, FieldConfig,
    FieldDensity, FieldParams, PenaltyMethod, Tape,
};
use crate::manifold::{uniform_sample, Point, ProductManifoldSpec, SamplingMode};
use crate::metrics::{ise_criterion, Integrator};
use crate::Scalar;

/// Offsets added to the run seed for each random stream.
pub const BATCH_STREAM: u64 = 3;
pub const MC_STREAM: u64 = 4;
pub const SPLIT_STREAM: u64 = 6;
pub const CRITERION_STREAM: u64 = 7;
pub const SNR_STREAM: u64 = 8;

const VARIANCE_FLOOR: f64 = 1e-12;

/// The three gradient terms; the ascent direction is `a - b - c`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradEstimate<T> {
    /// Batch mean of `dv/dtheta`.
    pub a: Vec<T>,
    /// `Vol` times the Monte-Carlo mean of `d exp(v)/dtheta`.
    pub b: Vec<T>,
    /// `tau Vol` times the Monte-Carlo mean of `d (Laplacian v)^2/dtheta`.
    pub c: Vec<T>,
}

impl<T: Scalar> GradEstimate<T> {
    pub fn total(&self) -> Vec<T> {
        self.a.iter().zip(&self.b).zip(&self.c).map(|((&a, &b), &c)| a - b - c).collect()
    }
}

/// A gradient estimate with the matching objective terms.
#[derive(Clone, Debug)]
pub struct StepEstimate<T> {
    pub grad: GradEstimate<T>,
    pub data_term: f64,
    pub normalizer: f64,
    pub penalty: f64,
}

impl<T> StepEstimate<T> {
    pub fn objective(&self) -> f64 {
        self.data_term - self.normalizer - self.penalty
    }
}

fn mean<T: Scalar>(v: &Array1<T>) -> f64 {
    v.iter().map(|x| x.f64()).sum::<f64>() / v.len() as f64
}

/// How the roughness term and its gradient are formed.
#[derive(Clone, Debug, PartialEq)]
pub(crate) enum PenaltyTerm<T> {
    /// Monte-Carlo mean of the squared Laplacian at uniform points.
    Laplacian(PenaltyMethod),
    /// `theta^T diag(F) theta` for a linear model, gradient `2 F theta`.
    Diagonal(Vec<T>),
}

fn estimate_encoded<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    batch: Array2<T>,
    mc1: Array2<T>,
    mc2: &[Point<T>],
    tau: f64,
    term: &PenaltyTerm<T>,
) -> Result<StepEstimate<T>> {
    let (nb, q1) = (batch.nrows(), mc1.nrows());
    if nb == 0 {
        return Err(Error::Input("data batch is empty".into()));
    }
    if q1 == 0 {
        return config("Monte-Carlo point sets must be nonempty");
    }
    let vol = enc.spec().volume();
    let inv_b = T::lit(1.0 / nb as f64);
    let (v, a) = weighted_gradient(params, batch, |v| Array1::from_elem(v.len(), inv_b));
    let s1 = T::lit(vol / q1 as f64);
    let (u, b) = weighted_gradient(params, mc1, |u| u.mapv(|x| s1 * x.exp()));
    let normalizer = vol * mean(&u.mapv(T::exp));
    let (c, penalty) = match term {
        _ if tau == 0.0 => (vec![T::zero(); params.num_params()], 0.0),
        PenaltyTerm::Laplacian(method) => {
            if mc2.is_empty() {
                return config("Monte-Carlo point sets must be nonempty");
            }
            let s2 = T::lit(2.0 * tau * vol / mc2.len() as f64);
            let (lap, c) = laplacian_weighted_gradient(params, enc, mc2, *method, |l| l.mapv(|x| s2 * x))?;
            (c, tau * vol * mean(&lap.mapv(|x| x * x)))
        }
        PenaltyTerm::Diagonal(f) => {
            let theta = params.flatten();
            let t = T::lit(tau);
            let two = T::lit(2.0);
            let c = theta.iter().zip(f).map(|(&w, &f)| two * t * f * w).collect();
            (c, tau * theta.iter().zip(f).map(|(&w, &f)| (f * w * w).f64()).sum::<f64>())
        }
    };
    Ok(StepEstimate { grad: GradEstimate { a, b, c }, data_term: mean(&v), normalizer, penalty })
}

/// Unbiased estimate of `dL/dtheta` from a data batch and two uniform
/// Monte-Carlo point sets.
pub fn gradient_estimate<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    batch: &[Point<T>],
    mc1: &[Point<T>],
    mc2: &[Point<T>],
    tau: f64,
    method: PenaltyMethod,
) -> Result<GradEstimate<T>> {
    Ok(step_estimate(params, enc, batch, mc1, mc2, tau, method)?.grad)
}

pub fn step_estimate<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    batch: &[Point<T>],
    mc1: &[Point<T>],
    mc2: &[Point<T>],
    tau: f64,
    method: PenaltyMethod,
) -> Result<StepEstimate<T>> {
    check_dims(params, enc)?;
    estimate_encoded(
        params,
        enc,
        enc.encode_batch(batch),
        enc.encode_batch(mc1),
        mc2,
        tau,
        &PenaltyTerm::Laplacian(method),
    )
}

/// Monte-Carlo estimate of the penalized log-likelihood.
pub fn objective_estimate<T: Scalar>(
    params: &FieldParams<T>,
    enc: &Encoding,
    data: &[Point<T>],
    mc1: &[Point<T>],
    mc2: &[Point<T>],
    tau: f64,
    method: PenaltyMethod,
) -> Result<f64> {
    check_dims(params, enc)?;
    if data.is_empty() {
        return Err(Error::Input("data set is empty".into()));
    }
    if mc1.is_empty() || (tau != 0.0 && mc2.is_empty()) {
        return config("Monte-Carlo point sets must be nonempty");
    }
    let vol = enc.spec().volume();
    let v = crate::field::forward_batch(params, enc, data)?;
    let u = crate::field::forward_batch(params, enc, mc1)?;
    let mut obj = mean(&v) - vol * mean(&u.mapv(T::exp));
    if tau != 0.0 {
        let lap = laplacian_batch(params, enc, mc2, method)?;
        obj -= tau * vol * mean(&lap.mapv(|x| x * x));
    }
    Ok(obj)
}

/// Learning rate as a function of the epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Fixed {
        w: f64,
    },
    /// Linear ramp `w_min -> w_max -> w_min` over each `period` epochs.
    CyclicTriangular {
        w_min: f64,
        w_max: f64,
        period: f64,
    },
}

impl Schedule {
    pub fn rate(&self, t: f64) -> f64 {
        match *self {
            Self::Fixed { w } => w,
            Self::CyclicTriangular { w_min, w_max, period } => {
                let phase = (t / period).fract();
                w_min + (w_max - w_min) * (1.0 - (2.0 * phase - 1.0).abs())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Fixed { w } if w >= 0.0 && w.is_finite() => Ok(()),
            Self::CyclicTriangular { w_min, w_max, period }
                if w_min >= 0.0 && w_min <= w_max && w_max.is_finite() && period > 0.0 =>
            {
                Ok(())
            }
            s => config(format!("invalid learning-rate schedule {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub q1: usize,
    pub q2: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    #[serde(default)]
    pub penalty_method: PenaltyMethod,
    #[serde(default)]
    pub seed: u64,
    /// Held-out share of the data for the validation criterion.
    #[serde(default)]
    pub validation_fraction: Option<f64>,
    /// Record the validation criterion every this many epochs.
    #[serde(default)]
    pub validation_every: Option<usize>,
    /// Stop after this many validation checks without a new minimum and
    /// return the best parameters seen.
    #[serde(default)]
    pub early_stopping_patience: Option<usize>,
    /// Record gradient signal-to-noise ratios every this many epochs.
    #[serde(default)]
    pub snr_every: Option<usize>,
    /// Rescale steps whose gradient norm exceeds this.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Rule for the `||f||^2` term of the validation criterion.
    #[serde(default)]
    pub criterion_integrator: Option<Integrator>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 1e-2,
            batch_size: 256,
            q1: 1024,
            q2: 1024,
            epochs: 100,
            schedule: Schedule::Fixed { w: 1e-3 },
            penalty_method: PenaltyMethod::Intrinsic,
            seed: 0,
            validation_fraction: None,
            validation_every: None,
            early_stopping_patience: None,
            snr_every: None,
            clip_norm: None,
            criterion_integrator: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return config(format!("tau must be finite and >= 0, got {}", self.tau));
        }
        if self.batch_size == 0 || self.q1 == 0 || self.q2 == 0 {
            return config("batch size and Monte-Carlo sizes must be >= 1");
        }
        if let Some(f) = self.validation_fraction {
            if !(f > 0.0 && f < 1.0) {
                return config(format!("validation fraction must lie in (0, 1), got {f}"));
            }
        }
        if self.validation_every == Some(0) || self.snr_every == Some(0) {
            return config("reporting intervals must be >= 1");
        }
        if self.early_stopping_patience.is_some() && self.validation_fraction.is_none() {
            return config("early stopping needs a validation fraction");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return config("clip norm must be positive");
            }
        }
        self.schedule.validate()
    }

    /// The configured criterion rule, or 2^14 quasi-random (tori) or
    /// pseudo-random points.
    pub fn criterion_rule(&self, spec: &ProductManifoldSpec) -> Integrator {
        self.criterion_integrator.clone().unwrap_or_else(|| {
            let seed = self.seed.wrapping_add(CRITERION_STREAM);
            if spec.is_torus() {
                Integrator::Qmc { q: 1 << 14, seed }
            } else {
                Integrator::Mc { q: 1 << 14, seed }
            }
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub snr_a: f64,
    pub snr_b: f64,
    pub snr_c: f64,
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Number of completed epochs, counted across resumes.
    pub epoch: usize,
    /// Mean of the per-step objective estimates.
    pub objective: f64,
    pub lr: f64,
    pub validation_criterion: Option<f64>,
    pub snr: Option<SnrReport>,
}

/// Everything needed to continue or evaluate a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub encoding: Encoding,
    pub params: FieldParams<T>,
    pub epoch: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub state: TrainState<T>,
    pub history: Vec<EpochRecord>,
    /// Criterion of the returned parameters, when a validation set was used.
    pub validation_criterion: Option<f64>,
    pub stopped_early: bool,
}

fn stream_rng(seed: u64, offset: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(offset));
    r.set_stream(stream);
    r
}

/// Seeded shuffle into `(train, validation)`; the validation part holds
/// `round(fraction n)` points, at least one.
#[allow(clippy::type_complexity)]
pub fn split_validation<T: Clone>(
    data: &[Point<T>],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Point<T>>, Vec<Point<T>>)> {
    let n = data.len();
    let nv = ((fraction * n as f64).round() as usize).max(1);
    if nv >= n {
        return config(format!("cannot hold out {nv} of {n} points"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, SPLIT_STREAM, 0));
    let val = idx[..nv].iter().map(|&i| data[i].clone()).collect();
    let train = idx[nv..].iter().map(|&i| data[i].clone()).collect();
    Ok((train, val))
}

fn to_f64<T: Scalar>(pts: &[Point<T>]) -> Vec<Point<f64>> {
    pts.iter().map(|p| Point::new(p.coords.iter().map(|c| c.f64()).collect())).collect()
}

fn check_data<T: Scalar>(spec: &ProductManifoldSpec, data: &[Point<T>]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Input("data set is empty".into()));
    }
    for (i, p) in data.iter().enumerate() {
        spec.validate(p).map_err(|e| Error::Input(format!("data point {i}: {e}")))?;
    }
    Ok(())
}

/// Draws the encoding and initial parameters, then runs [`train_from`].
pub fn train<T: Scalar>(
    data: &[Point<T>],
    spec: &ProductManifoldSpec,
    enc_cfg: &EncodingConfig,
    field_cfg: &FieldConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_from(initial_state(spec, enc_cfg, field_cfg)?, data, cfg)
}

/// Continues training for `cfg.epochs` epochs. Random streams are keyed by
/// the absolute epoch, so a resumed run retraces an uninterrupted one.
pub fn train_from<T: Scalar>(state: TrainState<T>, data: &[Point<T>], cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with_term(state, data, cfg, &PenaltyTerm::Laplacian(cfg.penalty_method))
}

pub(crate) fn train_with_term<T: Scalar>(
    state: TrainState<T>,
    data: &[Point<T>],
    cfg: &TrainConfig,
    term: &PenaltyTerm<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    check_dims(&state.params, &state.encoding)?;
    check_data(state.encoding.spec(), data)?;
    match cfg.validation_fraction {
        Some(f) => {
            let (train, val) = split_validation(data, f, cfg.seed)?;
            run(state, &train, Some(&val), cfg, term)
        }
        None => run(state, data, None, cfg, term),
    }
}

fn criterion<T: Scalar>(state: &TrainState<T>, val: &[Point<f64>], rule: &Integrator) -> Result<f64> {
    let f = FieldDensity::new(state.encoding.clone(), state.params.clone())?;
    ise_criterion(&f, val, rule)
}

fn run<T: Scalar>(
    mut state: TrainState<T>,
    train: &[Point<T>],
    val: Option<&[Point<T>]>,
    cfg: &TrainConfig,
    term: &PenaltyTerm<T>,
) -> Result<TrainOutcome<T>> {
    let n = train.len();
    if cfg.batch_size > n {
        return config(format!("batch size {} exceeds {n} training points", cfg.batch_size));
    }
    let spec = state.encoding.spec().clone();
    let mode = if spec.is_torus() { SamplingMode::Qmc } else { SamplingMode::Pseudo };
    let steps = n / cfg.batch_size;
    let encoded = state.encoding.encode_batch(train);
    let val64 = val.map(to_f64);
    let rule = cfg.criterion_rule(&spec);
    let every = cfg.validation_every.unwrap_or(usize::MAX);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, TrainState<T>)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let start = state.epoch;
    let needs_mc2 = cfg.tau != 0.0 && matches!(term, PenaltyTerm::Laplacian(_));
    for e in start..start + cfg.epochs {
        let lr = cfg.schedule.rate(e as f64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(cfg.seed, BATCH_STREAM, e as u64));
        let mut mc_rng = stream_rng(cfg.seed, MC_STREAM, e as u64);
        let mut total = 0.0;
        for s in 0..steps {
            let batch = encoded.select(Axis(0), &order[s * cfg.batch_size..(s + 1) * cfg.batch_size]);
            let mc1 = uniform_sample::<T, _>(&spec, cfg.q1, &mut mc_rng, mode)?;
            let mc2 = if needs_mc2 { uniform_sample::<T, _>(&spec, cfg.q2, &mut mc_rng, mode)? } else { Vec::new() };
            let est = estimate_encoded(
                &state.params,
                &state.encoding,
                batch,
                state.encoding.encode_batch(&mc1),
                &mc2,
                cfg.tau,
                term,
            )?;
            let obj = est.objective();
            let mut g = est.grad.total();
            let norm = g.iter().map(|x| x.f64() * x.f64()).sum::<f64>().sqrt();
            if !obj.is_finite() || !norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "training diverged at epoch {} step {s} (objective {obj}, gradient norm {norm}); \
                     try a larger tau or a smaller learning rate",
                    e + 1
                )));
            }
            if let Some(c) = cfg.clip_norm {
                if norm > c {
                    let k = T::lit(c / norm);
                    g.iter_mut().for_each(|x| *x *= k);
                }
            }
            state.params.step(T::lit(lr), &g);
            total += obj;
        }
        state.epoch = e + 1;
        let mut rec =
            EpochRecord { epoch: e + 1, objective: total / steps as f64, lr, validation_criterion: None, snr: None };
        if let Some(k) = cfg.snr_every {
            if (e + 1) % k == 0 {
                let mut rng = stream_rng(cfg.seed, SNR_STREAM, e as u64);
                rec.snr = Some(grad_snr(&state.params, &state.encoding, train, cfg, &mut rng)?);
            }
        }
        let last = e + 1 == start + cfg.epochs;
        if let Some(v) = &val64 {
            if (e + 1) % every == 0 || last {
                let c = criterion(&state, v, &rule)?;
                rec.validation_criterion = Some(c);
                if best.as_ref().is_none_or(|(b, _)| c < *b) {
                    best = Some((c, state.clone()));
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
        }
        history.push(rec);
        if let Some(p) = cfg.early_stopping_patience {
            if since_best > p {
                stopped_early = true;
                break;
            }
        }
    }
    let mut criterion_value = history.last().and_then(|r| r.validation_criterion);
    if cfg.early_stopping_patience.is_some() {
        if let Some((c, s)) = best {
            let epoch = state.epoch;
            state = TrainState { epoch, ..s };
            criterion_value = Some(c);
        }
    }
    Ok(TrainOutcome { state, history, validation_criterion: criterion_value, stopped_early })
}

/// Result of one grid entry in [`select_tau`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauTrial {
    pub tau: f64,
    pub criterion: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TauSelection<T> {
    pub tau: f64,
    pub trials: Vec<TauTrial>,
    /// The fit at the selected `tau`.
    pub outcome: TrainOutcome<T>,
}

/// Draws the encoding and initial parameters, as [`train`] does.
pub fn initial_state<T: Scalar>(
    spec: &ProductManifoldSpec,
    enc_cfg: &EncodingConfig,
    field_cfg: &FieldConfig,
) -> Result<TrainState<T>> {
    let encoding = Encoding::from_config(spec, enc_cfg)?;
    let mut fc = field_cfg.clone();
    fc.widths[0] = encoding.len();
    let params = init_params_seeded(&fc, spec.volume())?;
    Ok(TrainState { encoding, params, epoch: 0 })
}

/// Trains once per `tau` on a shared training split and keeps the fit with
/// the smallest validation criterion; ties go to the larger `tau`.
pub fn select_tau<T: Scalar>(
    data: &[Point<T>],
    spec: &ProductManifoldSpec,
    enc_cfg: &EncodingConfig,
    field_cfg: &FieldConfig,
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<TauSelection<T>> {
    select_tau_from(data, &initial_state(spec, enc_cfg, field_cfg)?, cfg, grid)
}

/// [`select_tau`] with every candidate starting from `init`.
pub fn select_tau_from<T: Scalar>(
    data: &[Point<T>],
    init: &TrainState<T>,
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<TauSelection<T>> {
    if grid.is_empty() {
        return config("tau grid is empty");
    }
    cfg.validate()?;
    let spec = init.encoding.spec();
    check_data(spec, data)?;
    let (train_pts, val) = split_validation(data, cfg.validation_fraction.unwrap_or(0.05), cfg.seed)?;
    let val64 = to_f64(&val);
    let rule = cfg.criterion_rule(spec);
    let mut trials = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, TrainOutcome<T>)> = None;
    for &tau in grid {
        let run_cfg = TrainConfig { tau, validation_fraction: None, early_stopping_patience: None, ..cfg.clone() };
        let fitted = train_from(init.clone(), &train_pts, &run_cfg)
            .and_then(|o| criterion(&o.state, &val64, &rule).map(|c| (c, o)));
        match fitted {
            Ok((c, mut o)) if c.is_finite() => {
                trials.push(TauTrial { tau, criterion: Some(c), error: None });
                o.validation_criterion = Some(c);
                let better = best.as_ref().is_none_or(|(bc, bt, _)| c < *bc || (c == *bc && tau > *bt));
                if better {
                    best = Some((c, tau, o));
                }
            }
            Ok((c, _)) => trials.push(TauTrial { tau, criterion: None, error: Some(format!("criterion {c}")) }),
            Err(e) => trials.push(TauTrial { tau, criterion: None, error: Some(e.to_string()) }),
        }
    }
    match best {
        Some((_, tau, outcome)) => Ok(TauSelection { tau, trials, outcome }),
        None => Err(Error::Numerical(format!(
            "every tau failed: {}",
            trials
                .iter()
                .map(|t| format!("{}: {}", t.tau, t.error.as_deref().unwrap_or("?")))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}

/// Per-point gradients of `weight(v) v` for each row, one reverse sweep each.
fn per_point<T: Scalar>(params: &FieldParams<T>, rows: &Array2<T>, weight: impl Fn(T) -> T) -> Vec<Vec<T>> {
    rows.outer_iter()
        .map(|r| {
            let tape = Tape::forward(params, vec![r.insert_axis(Axis(0)).to_owned()]);
            let w = tape.output(0).mapv(&weight);
            tape.backward(params, &[Some(w)])
        })
        .collect()
}

/// Mean over components of `mean_p^2 / max(var_p, floor)`, with
/// `var_p = scale / (m - 1) sum_i (g_ip - mean_p)^2` and `mean_p` the plain
/// sample mean times `mean_scale`.
fn snr_of<T: Scalar>(samples: &[Vec<T>], mean_scale: f64, var_scale: f64) -> f64 {
    let m = samples.len() as f64;
    let p = samples[0].len();
    let mut acc = 0.0;
    for k in 0..p {
        let mu = samples.iter().map(|s| s[k].f64()).sum::<f64>() / m;
        let var = var_scale * samples.iter().map(|s| (s[k].f64() - mu).powi(2)).sum::<f64>() / (m - 1.0);
        acc += (mean_scale * mu).powi(2) / var.max(VARIANCE_FLOOR);
    }
    acc / p as f64
}

/// Average per-component signal-to-noise ratio of each gradient term from
/// a fresh batch and fresh Monte-Carlo sets of the configured sizes.
pub fn grad_snr<T: Scalar, R: Rng + ?Sized>(
    params: &FieldParams<T>,
    enc: &Encoding,
    data: &[Point<T>],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<SnrReport> {
    check_dims(params, enc)?;
    let b = cfg.batch_size.min(data.len());
    if b < 2 || cfg.q1 < 2 || cfg.q2 < 2 {
        return config("gradient SNR needs batch and Monte-Carlo sizes >= 2");
    }
    let spec = enc.spec();
    let vol = spec.volume();
    let mode = if spec.is_torus() { SamplingMode::Qmc } else { SamplingMode::Pseudo };
    let batch: Vec<Point<T>> = index::sample(rng, data.len(), b).iter().map(|i| data[i].clone()).collect();
    let a = per_point(params, &enc.encode_batch(&batch), |_| T::one());
    let mc1 = uniform_sample::<T, _>(spec, cfg.q1, rng, mode)?;
    let bs = per_point(params, &enc.encode_batch(&mc1), T::exp);
    let snr_a = snr_of(&a, 1.0, 1.0);
    let snr_b = snr_of(&bs, vol, vol * vol);
    let snr_c = if cfg.tau == 0.0 {
        0.0
    } else {
        let mc2 = uniform_sample::<T, _>(spec, cfg.q2, rng, mode)?;
        let two = T::lit(2.0);
        let cs = mc2
            .iter()
            .map(|x| {
                laplacian_weighted_gradient(params, enc, std::slice::from_ref(x), cfg.penalty_method, |l| {
                    l.mapv(|v| two * v)
                })
                .map(|(_, g)| g)
            })
            .collect::<Result<Vec<_>>>()?;
        snr_of(&cs, cfg.tau * vol, (cfg.tau * vol).powi(2))
    };
    Ok(SnrReport { snr_a, snr_b, snr_c })
}
