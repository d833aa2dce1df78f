//! Estimator evaluation: integrated squared and Fisher-Rao errors, the
//! validation criterion used for model selection, region-restricted
//! marginals and torus spectra.

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::manifold::{uniform_sample, Point, ProductManifoldSpec, SamplingMode};
use crate::quadrature::circle_grid;
use crate::synthetic::MixtureSpec;

/// Anything that evaluates a (nonnegative) density on a product manifold.
pub trait Density {
    fn spec(&self) -> ProductManifoldSpec;
    fn density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>>;
}

impl<D: Density + ?Sized> Density for &D {
    fn spec(&self) -> ProductManifoldSpec {
        (**self).spec()
    }

    fn density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        (**self).density_batch(points)
    }
}

impl Density for MixtureSpec {
    fn spec(&self) -> ProductManifoldSpec {
        ProductManifoldSpec::torus(self.dim()).expect("mixtures have dimension >= 1")
    }

    fn density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        Ok(points.iter().map(|p| self.density(&p.coords)).collect())
    }
}

/// The uniform density `1 / Vol`.
#[derive(Clone, Debug)]
pub struct Uniform(pub ProductManifoldSpec);

impl Density for Uniform {
    fn spec(&self) -> ProductManifoldSpec {
        self.0.clone()
    }

    fn density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        Ok(vec![1.0 / self.0.volume(); points.len()])
    }
}

/// A density given by a closure.
pub struct FnDensity<F> {
    pub spec: ProductManifoldSpec,
    pub f: F,
}

impl<F: Fn(&Point<f64>) -> f64> Density for FnDensity<F> {
    fn spec(&self) -> ProductManifoldSpec {
        self.spec.clone()
    }

    fn density_batch(&self, points: &[Point<f64>]) -> Result<Vec<f64>> {
        Ok(points.iter().map(&self.f).collect())
    }
}

/// Integration rule over the whole product manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Integrator {
    /// Tensor trapezoid rule with the given resolution per circle.
    Grid { res: Vec<usize> },
    /// Pseudo-random uniform points.
    Mc { q: usize, seed: u64 },
    /// Shifted Sobol' points; tori only.
    Qmc { q: usize, seed: u64 },
}

impl Integrator {
    pub fn grid(d: usize, res: usize) -> Self {
        Self::Grid { res: vec![res; d] }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Grid { res } => {
                format!("grid:{}", res.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("x"))
            }
            Self::Mc { q, .. } => format!("mc:{q}"),
            Self::Qmc { q, .. } => format!("qmc:{q}"),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Self::Grid { .. } => None,
            Self::Mc { seed, .. } | Self::Qmc { seed, .. } => Some(*seed),
        }
    }

    /// Nodes and weights; weights sum to `Vol`.
    pub fn nodes(&self, spec: &ProductManifoldSpec) -> Result<(Vec<Point<f64>>, Vec<f64>)> {
        match self {
            Self::Grid { res } => {
                if !spec.is_torus() {
                    return config("grid integration is only available on tori");
                }
                if res.len() != spec.len() || res.iter().any(|&r| r < 2) {
                    return config(format!("grid needs {} resolutions, each >= 2", spec.len()));
                }
                let axes: Vec<Vec<f64>> = res.iter().map(|&r| circle_grid(r)).collect();
                let weight: f64 = res.iter().map(|&r| TAU / r as f64).product();
                let total: usize = res.iter().product();
                let mut pts = Vec::with_capacity(total);
                let mut idx = vec![0usize; res.len()];
                for _ in 0..total {
                    pts.push(Point::new(idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect()));
                    // last axis fastest
                    for d in (0..res.len()).rev() {
                        idx[d] += 1;
                        if idx[d] < res[d] {
                            break;
                        }
                        idx[d] = 0;
                    }
                }
                Ok((pts, vec![weight; total]))
            }
            Self::Mc { q, seed } | Self::Qmc { q, seed } => {
                let mode = if matches!(self, Self::Qmc { .. }) { SamplingMode::Qmc } else { SamplingMode::Pseudo };
                let pts = uniform_sample(spec, *q, &mut ChaCha8Rng::seed_from_u64(*seed), mode)?;
                Ok((pts, vec![spec.volume() / *q as f64; *q]))
            }
        }
    }
}

fn same_spec(a: &dyn Density, b: &dyn Density) -> Result<ProductManifoldSpec> {
    let s = a.spec();
    if s != b.spec() {
        return config("densities live on different manifolds");
    }
    Ok(s)
}

fn dot(w: &[f64], a: impl Iterator<Item = f64>) -> f64 {
    w.iter().zip(a).map(|(w, v)| w * v).sum()
}

/// `||f - f_hat||^2 / ||f||^2`.
pub fn nise(f: &dyn Density, f_hat: &dyn Density, integ: &Integrator) -> Result<f64> {
    let spec = same_spec(f, f_hat)?;
    let (pts, w) = integ.nodes(&spec)?;
    let a = f.density_batch(&pts)?;
    let b = f_hat.density_batch(&pts)?;
    nise_values(&a, &b, &w)
}

pub fn nise_values(f: &[f64], f_hat: &[f64], w: &[f64]) -> Result<f64> {
    let norm = dot(w, f.iter().map(|v| v * v));
    if !(norm > 0.0) {
        return Err(Error::Numerical("reference density has zero L2 norm".into()));
    }
    Ok(dot(w, f.iter().zip(f_hat).map(|(a, b)| (a - b) * (a - b))) / norm)
}

/// How the affinity `s = int sqrt(f f_hat)` becomes a distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrConvention {
    /// `arccos(s^2)`.
    #[default]
    AsWritten,
    /// `arccos(s)`.
    Inner,
    /// `2 arccos(s)`.
    Geodesic,
}

impl FrConvention {
    pub const ALL: [FrConvention; 3] = [Self::AsWritten, Self::Inner, Self::Geodesic];

    pub fn name(self) -> &'static str {
        match self {
            Self::AsWritten => "as_written",
            Self::Inner => "inner",
            Self::Geodesic => "geodesic",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown Fisher-Rao convention '{s}'")))
    }

    pub fn apply(self, s: f64) -> f64 {
        let c = |v: f64| v.clamp(-1.0, 1.0).acos();
        match self {
            Self::AsWritten => c(s * s),
            Self::Inner => c(s),
            Self::Geodesic => 2.0 * c(s),
        }
    }
}

pub fn fisher_rao(f: &dyn Density, f_hat: &dyn Density, integ: &Integrator, conv: FrConvention) -> Result<f64> {
    let spec = same_spec(f, f_hat)?;
    let (pts, w) = integ.nodes(&spec)?;
    Ok(fisher_rao_values(&f.density_batch(&pts)?, &f_hat.density_batch(&pts)?, &w, conv))
}

pub fn fisher_rao_values(f: &[f64], f_hat: &[f64], w: &[f64], conv: FrConvention) -> f64 {
    conv.apply(dot(w, f.iter().zip(f_hat).map(|(a, b)| (a.max(0.0) * b.max(0.0)).sqrt())))
}

/// `||f_hat||^2 - 2 mean_i f_hat(x_i)` over validation points: the
/// integrated squared error up to the unknown constant `||f||^2`.
pub fn ise_criterion(f_hat: &dyn Density, validation: &[Point<f64>], integ: &Integrator) -> Result<f64> {
    if validation.is_empty() {
        return config("validation set is empty");
    }
    let (pts, w) = integ.nodes(&f_hat.spec())?;
    let norm = dot(&w, f_hat.density_batch(&pts)?.iter().map(|v| v * v));
    let mean = f_hat.density_batch(validation)?.iter().sum::<f64>() / validation.len() as f64;
    Ok(norm - 2.0 * mean)
}

/// `int_E f(x1, x2) dx1` for a two-factor product, with `E` given by an
/// indicator on the first factor's coordinate block and the integral taken
/// by `integ` over the first factor.
pub fn marginal_density(
    f: &dyn Density,
    region: &dyn Fn(&[f64]) -> bool,
    integ: &Integrator,
    x2: &[f64],
) -> Result<f64> {
    let spec = f.spec();
    if spec.len() != 2 {
        return config("marginal densities need a product of exactly two factors");
    }
    let first = ProductManifoldSpec::new(vec![spec.marginals()[0]])?;
    if x2.len() != spec.marginals()[1].coord_len() {
        return config("second-factor point has the wrong coordinate length");
    }
    let (nodes, w) = integ.nodes(&first)?;
    let mut pts = Vec::new();
    let mut weights = Vec::new();
    for (n, wi) in nodes.into_iter().zip(w) {
        if region(&n.coords) {
            let mut c = n.coords;
            c.extend_from_slice(x2);
            pts.push(Point::new(c));
            weights.push(wi);
        }
    }
    if weights.is_empty() {
        return config("region has zero measure under the integrator");
    }
    Ok(dot(&weights, f.density_batch(&pts)?.into_iter()))
}

/// Values of `g` on the regular `res x res` grid of `T^2`, row index on the
/// first angle.
pub fn torus_grid_values(res: usize, g: impl Fn(&[Point<f64>]) -> Result<Vec<f64>>) -> Result<Array2<f64>> {
    if res < 2 {
        return config("grid resolution must be at least 2");
    }
    let (pts, _) = Integrator::grid(2, res).nodes(&ProductManifoldSpec::torus(2)?)?;
    let v = g(&pts)?;
    Ok(Array2::from_shape_vec((res, res), v).expect("grid has res^2 nodes"))
}

/// Centered DFT magnitudes of a square grid, unitary scaling so that the
/// squared magnitudes sum to the squared values. Entry `(i, j)` holds
/// frequency `(i - res/2, j - res/2)`.
pub fn grid_spectrum(values: &Array2<f64>) -> Array2<f64> {
    let (r, c) = values.dim();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(c);
    for row in buf.chunks_mut(c) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(r);
    let mut col = vec![Complex::new(0.0, 0.0); r];
    for j in 0..c {
        for i in 0..r {
            col[i] = buf[i * c + j];
        }
        col_fft.process(&mut col);
        for i in 0..r {
            buf[i * c + j] = col[i];
        }
    }
    let scale = 1.0 / ((r * c) as f64).sqrt();
    Array2::from_shape_fn((r, c), |(i, j)| buf[((i + r - r / 2) % r) * c + (j + c - c / 2) % c].norm() * scale)
}

/// Spectrum of a torus density sampled on a `res x res` grid.
pub fn spectral_content(f: &dyn Density, res: usize) -> Result<Array2<f64>> {
    let spec = f.spec();
    if spec != ProductManifoldSpec::torus(2)? {
        return config("spectral content is only defined on the two-torus");
    }
    Ok(grid_spectrum(&torus_grid_values(res, |p| f.density_batch(p))?))
}

/// Integer frequency at a centered spectrum index.
pub fn centered_frequency(index: usize, res: usize) -> i64 {
    index as i64 - (res / 2) as i64
}

/// Share of non-DC squared magnitude at frequencies selected by `keep`.
pub fn energy_fraction(spectrum: &Array2<f64>, keep: impl Fn(i64, i64) -> bool) -> f64 {
    let (r, c) = spectrum.dim();
    let (mut total, mut kept) = (0.0, 0.0);
    for ((i, j), m) in spectrum.indexed_iter() {
        let (a, b) = (centered_frequency(i, r), centered_frequency(j, c));
        if a == 0 && b == 0 {
            continue;
        }
        total += m * m;
        if keep(a, b) {
            kept += m * m;
        }
    }
    if total > 0.0 {
        kept / total
    } else {
        0.0
    }
}
