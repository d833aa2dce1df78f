//! Subcommand implementations. Each is a pure function of its arguments,
//! seeds and input files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use neuropmd::baselines::{kde_select_kappa, tpb_fit, TpbFit};
use neuropmd::checkpoint::Checkpoint;
use neuropmd::manifold::{MarginalManifold, Point, ProductManifoldSpec};
use neuropmd::metrics::{
    centered_frequency, fisher_rao, grid_spectrum, ise_criterion, marginal_density, nise, torus_grid_values,
    FrConvention, Integrator,
};
use neuropmd::objective::{grad_snr, initial_state, select_tau_from, train_from, TrainConfig, SNR_STREAM};
use neuropmd::synthetic::{preset, sample_mixture, MixtureSpec};
use neuropmd::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Resolved, RunConfig};
use crate::io::{
    read_points, read_rows, read_torus_points, write_history, write_json, write_points, write_rows, MetricRow,
};
use crate::models::{KdeFile, Model, KDE_KIND};

#[derive(Parser, Debug)]
#[command(name = "neuropmd", version, about = "Neural-field density estimation on products of circles and spheres")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a dataset from a wrapped-normal mixture.
    Simulate(SimulateArgs),
    /// Fit a neural field; selects tau when the config has a grid.
    Train(TrainArgs),
    /// Fit a neural field for every tau in a grid and keep the best.
    SelectTau(SelectTauArgs),
    /// Fit a von Mises product KDE with a cross-validated concentration.
    FitKde(FitKdeArgs),
    /// Fit the tensor-product-basis baseline.
    FitTpb(TrainArgs),
    /// Error metrics of one or more models against a reference density.
    Evaluate(EvaluateArgs),
    /// DFT magnitudes of a model on a T^2 grid.
    Spectrum(SpectrumArgs),
    /// Densities of the second factor restricted to a region of the first.
    Marginal(MarginalArgs),
    /// Gradient signal-to-noise ratios at a checkpoint or at initialisation.
    SnrReport(SnrArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct IntegratorArgs {
    /// Tensor grid with this many nodes per circle (tori only).
    #[arg(long, conflicts_with_all = ["qmc", "mc"])]
    pub grid: Option<usize>,
    /// This many scrambled Sobol' points (tori only).
    #[arg(long, conflicts_with = "mc")]
    pub qmc: Option<usize>,
    /// This many pseudo-random uniform points.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub int_seed: u64,
}

impl IntegratorArgs {
    /// The requested rule, or a default: a 256-node grid per circle on
    /// tori of dimension <= 2, 2^16 QMC points on larger tori and 2^16
    /// pseudo-random points otherwise.
    pub fn resolve(&self, spec: &ProductManifoldSpec) -> Integrator {
        let seed = self.int_seed;
        match (self.grid, self.qmc, self.mc) {
            (Some(r), _, _) => Integrator::grid(spec.len(), r),
            (_, Some(q), _) => Integrator::Qmc { q, seed },
            (_, _, Some(q)) => Integrator::Mc { q, seed },
            _ if spec.is_torus() && spec.len() <= 2 => Integrator::grid(spec.len(), 256),
            _ if spec.is_torus() => Integrator::Qmc { q: 1 << 16, seed },
            _ => Integrator::Mc { q: 1 << 16, seed },
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Named mixture: t2_paper or t4_paper.
    #[arg(long, conflicts_with = "mixture", required_unless_present = "mixture")]
    pub preset: Option<String>,
    /// Mixture specification JSON.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    /// Seed of the sample draw.
    #[arg(long)]
    pub seed: u64,
    /// Seed of a preset's covariance draw.
    #[arg(long, default_value_t = 0)]
    pub truth_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the resolved mixture; printed to stdout otherwise.
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunOverrides {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
    #[arg(long)]
    pub history_out: Option<PathBuf>,
    #[arg(long)]
    pub criteria_out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Global seed; every stochastic stage derives from it.
    #[arg(long)]
    pub seed: u64,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: RunOverrides,
}

#[derive(Args, Debug)]
pub struct SelectTauArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Candidate penalties, replacing the config's grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[command(flatten)]
    pub overrides: RunOverrides,
}

#[derive(Args, Debug)]
pub struct FitKdeArgs {
    /// CSV of torus angles.
    #[arg(long)]
    pub data: PathBuf,
    /// Candidate concentrations.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0])]
    pub kappas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub integrator: IntegratorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Checkpoint, KDE file, mixture JSON or `uniform:<manifold>`; repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Method label per model, in order; defaults to the model kind.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// Reference density, in any model form.
    #[arg(long)]
    pub truth: Option<String>,
    /// Validation CSV for the criterion metric.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// nise, fr or criterion.
    #[arg(long = "metric", value_delimiter = ',', default_values_t = vec!["nise".to_string(), "fr".to_string()])]
    pub metrics: Vec<String>,
    /// Fisher-Rao convention: as_written, inner, geodesic or all.
    #[arg(long, default_value = "as_written")]
    pub convention: String,
    #[command(flatten)]
    pub integrator: IntegratorArgs,
    /// Metrics CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub append: bool,
    /// Rank models within each metric, best first.
    #[arg(long)]
    pub ranked: bool,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 256)]
    pub res: usize,
    /// Transform the log-density instead of the density.
    #[arg(long)]
    pub log: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MarginalArgs {
    #[arg(long)]
    pub model: String,
    /// Region JSON on the first factor: `{"kind":"cap","center":[x,y,z],"angle":a}`
    /// or `{"kind":"arc","from":a,"to":b}`.
    #[arg(long)]
    pub region: PathBuf,
    /// CSV of second-factor points.
    #[arg(long)]
    pub at: PathBuf,
    #[command(flatten)]
    pub integrator: IntegratorArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SnrArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate at this checkpoint instead of the initialisation.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Independent repetitions.
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train(&a),
        Command::SelectTau(a) => select_tau(&a),
        Command::FitKde(a) => fit_kde(&a),
        Command::FitTpb(a) => fit_tpb(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Spectrum(a) => spectrum(&a),
        Command::Marginal(a) => marginal(&a),
        Command::SnrReport(a) => snr_report(&a),
    }
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let spec = match (&a.preset, &a.mixture) {
        (Some(name), _) => preset(name, a.truth_seed)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read mixture {}: {e}", path.display())))?;
            serde_json::from_str::<MixtureSpec>(&text)?
        }
        (None, None) => return Err(Error::Config("pass --preset or --mixture".into())),
    };
    let points = sample_mixture(&spec, a.n, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    write_points(&a.out, &ProductManifoldSpec::torus(spec.dim())?, &points)?;
    match &a.truth_out {
        Some(p) => write_json(p, &spec),
        None => {
            println!("{}", serde_json::to_string_pretty(&spec)?);
            Ok(())
        }
    }
}

fn load_run(config: &Path, seed: Option<u64>, o: &RunOverrides) -> Result<Resolved> {
    let (cfg, base) = RunConfig::load(config)?;
    let mut r = cfg.resolve(&base, seed)?;
    if let Some(p) = &o.data {
        r.data = p.clone();
    }
    if let Some(p) = &o.checkpoint_out {
        r.checkpoint_out = p.clone();
    }
    if let Some(p) = &o.history_out {
        r.history_out = Some(p.clone());
    }
    if let Some(p) = &o.criteria_out {
        r.criteria_out = Some(p.clone());
    }
    if let Some(e) = o.epochs {
        r.train.epochs = e;
    }
    if let Some(t) = o.tau {
        r.train.tau = t;
    }
    r.train.validate()?;
    Ok(r)
}

#[derive(Serialize)]
struct CriterionRow {
    tau: f64,
    criterion: Option<f64>,
    error: Option<String>,
}

fn train(a: &TrainArgs) -> Result<()> {
    let r = load_run(&a.config, Some(a.seed), &a.overrides)?;
    if r.tau_grid.is_some() && a.overrides.tau.is_none() {
        if a.resume.is_some() {
            return Err(Error::Config("--resume cannot be combined with a tau grid".into()));
        }
        return run_selection(&r);
    }
    let data = read_points(&r.data, &r.spec)?;
    let (state, init_cfg) = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.encoding.spec() != &r.spec {
                return Err(Error::Config("checkpoint manifold differs from the config".into()));
            }
            let cfg = ck.field_config().cloned().ok_or_else(|| Error::Config("checkpoint holds a TPB model".into()))?;
            (ck.field_state::<f64>()?, cfg)
        }
        None => {
            let (enc_cfg, field_cfg) = r.field_parts()?;
            (initial_state(&r.spec, enc_cfg, field_cfg)?, field_cfg.clone())
        }
    };
    let out = train_from(state, &data, &r.train)?;
    Checkpoint::from_field(&out.state, &init_cfg, Some(&r.train), r.seed).save(&r.checkpoint_out)?;
    if let Some(h) = &r.history_out {
        write_history(h, &out.history)?;
    }
    eprintln!(
        "trained to epoch {}; final objective {:.6}",
        out.state.epoch,
        out.history.last().map_or(f64::NAN, |h| h.objective)
    );
    Ok(())
}

fn select_tau(a: &SelectTauArgs) -> Result<()> {
    let mut r = load_run(&a.config, a.seed, &a.overrides)?;
    if let Some(g) = &a.grid {
        r.tau_grid = Some(g.clone());
    }
    if r.tau_grid.is_none() {
        return Err(Error::Config("no tau grid; pass --grid or set \"tau_grid\" in the config".into()));
    }
    run_selection(&r)
}

fn run_selection(r: &Resolved) -> Result<()> {
    let grid = r.tau_grid.as_deref().unwrap_or_default();
    let (enc_cfg, field_cfg) = r.field_parts()?;
    let data = read_points(&r.data, &r.spec)?;
    let init = initial_state(&r.spec, enc_cfg, field_cfg)?;
    let sel = select_tau_from(&data, &init, &r.train, grid)?;
    let train = TrainConfig { tau: sel.tau, ..r.train.clone() };
    Checkpoint::from_field(&sel.outcome.state, field_cfg, Some(&train), r.seed).save(&r.checkpoint_out)?;
    if let Some(h) = &r.history_out {
        write_history(h, &sel.outcome.history)?;
    }
    if let Some(c) = &r.criteria_out {
        let rows: Vec<CriterionRow> = sel
            .trials
            .iter()
            .map(|t| CriterionRow { tau: t.tau, criterion: t.criterion, error: t.error.clone() })
            .collect();
        write_rows(Some(c), &rows, false)?;
    }
    eprintln!("selected tau = {}", sel.tau);
    Ok(())
}

fn fit_kde(a: &FitKdeArgs) -> Result<()> {
    let (spec, data) = read_torus_points(&a.data)?;
    let sel = kde_select_kappa(&data, &a.kappas, a.folds, a.seed, &a.integrator.resolve(&spec))?;
    let file = KdeFile {
        kind: KDE_KIND.into(),
        kappa: sel.kappa,
        data: std::path::absolute(&a.data)?,
        seed: a.seed,
        folds: a.folds,
        scores: sel.scores,
    };
    write_json(&a.out, &file)?;
    eprintln!("selected kappa = {}", sel.kappa);
    Ok(())
}

fn fit_tpb(a: &TrainArgs) -> Result<()> {
    let r = load_run(&a.config, Some(a.seed), &a.overrides)?;
    let tpb_cfg = r.tpb.as_ref().ok_or_else(|| Error::Config("fit-tpb needs a \"tpb\" section".into()))?;
    let data = read_points(&r.data, &r.spec)?;
    let resumed = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            Some((ck.tpb_model::<f64>()?, ck.epoch))
        }
        None => None,
    };
    let init = resumed.as_ref().map(|(m, e)| (m, *e));
    let grid = match (&r.tau_grid, a.overrides.tau) {
        (Some(g), None) => {
            if init.is_some() {
                return Err(Error::Config("--resume cannot be combined with a tau grid".into()));
            }
            if r.train.validation_fraction.is_none() {
                return Err(Error::Config("tau selection needs a validation fraction".into()));
            }
            g.clone()
        }
        _ => vec![r.train.tau],
    };
    let mut best: Option<(f64, TpbFit<f64>)> = None;
    let mut rows = Vec::new();
    for &tau in &grid {
        let cfg = TrainConfig { tau, ..r.train.clone() };
        match tpb_fit(&data, &r.spec, tpb_cfg, &cfg, init) {
            Ok(fit) => {
                rows.push(CriterionRow { tau, criterion: fit.validation_criterion, error: None });
                let better = match (&best, fit.validation_criterion) {
                    (None, _) => true,
                    (Some((_, b)), Some(c)) => b.validation_criterion.is_none_or(|bc| c <= bc),
                    _ => false,
                };
                if better {
                    best = Some((tau, fit));
                }
            }
            Err(e) if grid.len() > 1 => rows.push(CriterionRow { tau, criterion: None, error: Some(e.to_string()) }),
            Err(e) => return Err(e),
        }
    }
    let (tau, fit) = best.ok_or_else(|| Error::Numerical("every tau in the grid failed".into()))?;
    let train = TrainConfig { tau, ..r.train.clone() };
    let epoch = init.map_or(0, |(_, e)| e) + fit.history.len();
    Checkpoint::from_tpb(&fit.model, &tpb_cfg.max_freq, Some(&train), r.seed, epoch).save(&r.checkpoint_out)?;
    if let Some(h) = &r.history_out {
        write_history(h, &fit.history)?;
    }
    if let Some(c) = &r.criteria_out {
        write_rows(Some(c), &rows, false)?;
    }
    eprintln!("fitted TPB at tau = {tau}");
    Ok(())
}

/// A metric row with its rank among models, best first.
#[derive(Serialize)]
struct RankedRow {
    rank: usize,
    method: String,
    metric: String,
    convention: String,
    value: f64,
    integrator: String,
    seed: String,
}

fn conventions(s: &str) -> Result<Vec<FrConvention>> {
    if s == "all" {
        Ok(FrConvention::ALL.to_vec())
    } else {
        Ok(vec![FrConvention::parse(s)?])
    }
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    if !a.labels.is_empty() && a.labels.len() != a.models.len() {
        return Err(Error::Config("give one --label per --model or none".into()));
    }
    let convs = conventions(&a.convention)?;
    let truth = a.truth.as_deref().map(Model::load).transpose()?;
    let validation = a.data.as_deref().map(read_rows).transpose()?;
    let mut rows = Vec::new();
    for (i, src) in a.models.iter().enumerate() {
        let model = Model::load(src)?;
        let label = a.labels.get(i).cloned().unwrap_or_else(|| model.method().to_string());
        let f_hat = model.density()?;
        let spec = f_hat.spec();
        let integ = a.integrator.resolve(&spec);
        let seed = model.seed().map(|s| s.to_string()).unwrap_or_default();
        let mut push = |metric: &str, convention: &str, value: f64| {
            rows.push(MetricRow {
                method: label.clone(),
                metric: metric.into(),
                convention: convention.into(),
                value,
                integrator: integ.label(),
                seed: seed.clone(),
            })
        };
        for m in &a.metrics {
            match m.as_str() {
                "nise" | "fr" => {
                    let t = truth.as_ref().ok_or_else(|| Error::Config(format!("metric {m} needs --truth")))?;
                    let t = t.density()?;
                    if m == "nise" {
                        push("nise", "", nise(t.as_ref(), f_hat.as_ref(), &integ)?);
                    } else {
                        for &c in &convs {
                            push("fr", c.name(), fisher_rao(t.as_ref(), f_hat.as_ref(), &integ, c)?);
                        }
                    }
                }
                "criterion" => {
                    let v = validation.as_ref().ok_or_else(|| Error::Config("metric criterion needs --data".into()))?;
                    for (j, p) in v.iter().enumerate() {
                        spec.validate(p).map_err(|e| Error::Input(format!("validation row {}: {e}", j + 1)))?;
                    }
                    push("criterion", "", ise_criterion(f_hat.as_ref(), v, &integ)?);
                }
                other => return Err(Error::Config(format!("unknown metric '{other}' (nise, fr or criterion)"))),
            }
        }
    }
    if a.ranked {
        let key = |r: &MetricRow| (r.metric.clone(), r.convention.clone());
        rows.sort_by(|x, y| key(x).cmp(&key(y)).then(x.value.total_cmp(&y.value)));
        let mut ranked: Vec<RankedRow> = Vec::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            let rank = match ranked.last() {
                Some(prev) if key(&rows[i - 1]) == key(r) => prev.rank + 1,
                _ => 1,
            };
            let MetricRow { method, metric, convention, value, integrator, seed } = r.clone();
            ranked.push(RankedRow { rank, method, metric, convention, value, integrator, seed });
        }
        write_rows(a.out.as_deref(), &ranked, a.append)
    } else {
        write_rows(a.out.as_deref(), &rows, a.append)
    }
}

#[derive(Serialize)]
struct SpectrumRow {
    k1: i64,
    k2: i64,
    energy: f64,
}

fn spectrum(a: &SpectrumArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    if model.spec()? != ProductManifoldSpec::torus(2)? {
        return Err(Error::Config("spectra are only available on the two-torus".into()));
    }
    let values = if a.log {
        torus_grid_values(a.res, |p| model.log_density(p))?
    } else {
        let d = model.density()?;
        torus_grid_values(a.res, |p| d.density_batch(p))?
    };
    let s = grid_spectrum(&values);
    let rows: Vec<SpectrumRow> = s
        .indexed_iter()
        .map(|((i, j), m)| SpectrumRow {
            k1: centered_frequency(i, a.res),
            k2: centered_frequency(j, a.res),
            energy: m * m,
        })
        .collect();
    write_rows(a.out.as_deref(), &rows, false)
}

/// A subset of one circle or sphere.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Region {
    /// Points within `angle` radians of the unit vector `center`.
    Cap { center: [f64; 3], angle: f64 },
    /// Angles swept counter-clockwise from `from` to `to`.
    Arc { from: f64, to: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Self::Cap { center, angle } => {
                let n = center.iter().map(|c| c * c).sum::<f64>().sqrt();
                let dot: f64 = center.iter().zip(x).map(|(c, v)| c * v).sum::<f64>() / n;
                dot >= angle.cos()
            }
            Self::Arc { from, to } => {
                let tau = std::f64::consts::TAU;
                let span = (to - from).rem_euclid(tau);
                (x[0] - from).rem_euclid(tau) <= span
            }
        }
    }

    fn check(&self, m: MarginalManifold) -> Result<()> {
        match (self, m) {
            (Self::Cap { center, angle }, MarginalManifold::Sphere2) => {
                if center.iter().all(|c| *c == 0.0) || !center.iter().all(|c| c.is_finite()) || !angle.is_finite() {
                    return Err(Error::Config("cap needs a nonzero center and a finite angle".into()));
                }
                Ok(())
            }
            (Self::Arc { from, to }, MarginalManifold::Circle) if from.is_finite() && to.is_finite() => Ok(()),
            _ => Err(Error::Config(format!("region does not fit the first factor {m:?}"))),
        }
    }
}

fn marginal(a: &MarginalArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let density = model.density()?;
    let spec = density.spec();
    if spec.len() != 2 {
        return Err(Error::Config("marginals need a product of exactly two factors".into()));
    }
    let text = std::fs::read_to_string(&a.region)
        .map_err(|e| Error::Input(format!("cannot read region {}: {e}", a.region.display())))?;
    let region: Region = serde_json::from_str(&text).map_err(|e| Error::Config(format!("region: {e}")))?;
    region.check(spec.marginals()[0])?;
    let second = ProductManifoldSpec::new(vec![spec.marginals()[1]])?;
    let at = read_points(&a.at, &second)?;
    let first = ProductManifoldSpec::new(vec![spec.marginals()[0]])?;
    let integ = match (&a.integrator, spec.marginals()[0]) {
        (IntegratorArgs { grid: None, qmc: None, mc: None, .. }, MarginalManifold::Circle) => Integrator::grid(1, 1024),
        (i, _) => i.resolve(&first),
    };
    let mut header = crate::io::point_header(&second);
    header.push("density".into());
    let mut w = match &a.out {
        Some(p) => csv::Writer::from_writer(Box::new(std::fs::File::create(p)?) as Box<dyn std::io::Write>),
        None => csv::Writer::from_writer(Box::new(std::io::stdout().lock()) as Box<dyn std::io::Write>),
    };
    let csv_err = |e: csv::Error| Error::Io(e.into());
    w.write_record(&header).map_err(csv_err)?;
    for p in &at {
        let v = marginal_density(density.as_ref(), &|x| region.contains(x), &integ, &p.coords)?;
        let mut rec: Vec<String> = p.coords.iter().map(|c| c.to_string()).collect();
        rec.push(v.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SnrRow {
    rep: usize,
    epoch: usize,
    snr_a: f64,
    snr_b: f64,
    snr_c: f64,
}

fn snr_report(a: &SnrArgs) -> Result<()> {
    let (cfg, base) = RunConfig::load(&a.config)?;
    let r = cfg.resolve(&base, a.seed)?;
    let data: Vec<Point<f64>> = read_points(&r.data, &r.spec)?;
    let state = match &a.checkpoint {
        Some(p) => Checkpoint::load(p)?.field_state::<f64>()?,
        None => {
            let (enc_cfg, field_cfg) = r.field_parts()?;
            initial_state(&r.spec, enc_cfg, field_cfg)?
        }
    };
    let mut rows = Vec::with_capacity(a.reps);
    for rep in 0..a.reps {
        let mut rng = ChaCha8Rng::seed_from_u64(r.seed.wrapping_add(SNR_STREAM));
        rng.set_stream(rep as u64);
        let s = grad_snr(&state.params, &state.encoding, &data, &r.train, &mut rng)?;
        rows.push(SnrRow { rep, epoch: state.epoch, snr_a: s.snr_a, snr_b: s.snr_b, snr_c: s.snr_c });
    }
    write_rows(a.out.as_deref(), &rows, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn arcs_wrap_across_the_seam() {
        let arc = Region::Arc { from: 3.0, to: -3.0 };
        assert!(arc.contains(&[3.1]));
        assert!(arc.contains(&[-3.1]));
        assert!(!arc.contains(&[0.0]));
        let half = Region::Arc { from: -PI / 2.0, to: PI / 2.0 };
        assert!(half.contains(&[0.0]) && !half.contains(&[PI - 0.1]));
    }

    #[test]
    fn caps_measure_angle_from_an_unnormalized_center() {
        let cap = Region::Cap { center: [0.0, 0.0, 2.0], angle: PI / 2.0 };
        assert!(cap.contains(&[0.0, 0.6, 0.8]));
        assert!(!cap.contains(&[0.0, 0.6, -0.8]));
        assert!(cap.check(MarginalManifold::Sphere2).is_ok());
        assert!(cap.check(MarginalManifold::Circle).is_err());
        assert!(Region::Cap { center: [0.0; 3], angle: 1.0 }.check(MarginalManifold::Sphere2).is_err());
        assert!(Region::Arc { from: 0.0, to: 1.0 }.check(MarginalManifold::Sphere2).is_err());
    }

    #[test]
    fn default_integrators_follow_the_manifold() {
        let d = IntegratorArgs::default();
        let t = |n: usize| ProductManifoldSpec::torus(n).unwrap();
        assert_eq!(d.resolve(&t(2)), Integrator::grid(2, 256));
        assert_eq!(d.resolve(&t(4)), Integrator::Qmc { q: 1 << 16, seed: 0 });
        assert_eq!(d.resolve(&"S2".parse().unwrap()), Integrator::Mc { q: 1 << 16, seed: 0 });
        let explicit = IntegratorArgs { mc: Some(10), int_seed: 5, ..Default::default() };
        assert_eq!(explicit.resolve(&t(1)), Integrator::Mc { q: 10, seed: 5 });
    }

    #[test]
    fn conventions_expand_all() {
        assert_eq!(conventions("all").unwrap(), FrConvention::ALL.to_vec());
        assert_eq!(conventions("inner").unwrap(), vec![FrConvention::Inner]);
        assert!(conventions("bogus").is_err());
    }

    #[test]
    fn seeds_are_mandatory_where_documented() {
        assert!(Cli::try_parse_from(["neuropmd", "simulate", "--preset", "t2_paper", "--n", "5"]).is_err());
        assert!(Cli::try_parse_from(["neuropmd", "train", "--config", "c.json"]).is_err());
        assert!(Cli::try_parse_from(["neuropmd", "select-tau", "--config", "c.json"]).is_ok());
        assert!(Cli::try_parse_from(["neuropmd", "evaluate", "--model", "a", "--grid", "8", "--mc", "9"]).is_err());
    }
}
