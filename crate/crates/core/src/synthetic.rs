//! Anisotropic wrapped-normal mixtures on the torus, used as ground truth.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::manifold::{wrap_angle, Point};

pub const DEFAULT_WRAP_WINDOW: u32 = 3;

/// Shifts whose squared Euclidean length exceeds this many times the largest
/// covariance eigenvalue contribute below `exp(-40)` of the component peak.
const PRUNE_FACTOR: f64 = 80.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub weight: f64,
}

#[derive(Clone, Debug)]
struct Prepared {
    mean: Vec<f64>,
    chol: DMatrix<f64>,
    log_scale: f64,
    prune_radius2: f64,
}

/// A wrapped-normal mixture on `T^D`. The density is the wrap sum over
/// lattice shifts in `{-W..W}^D`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "MixtureFile", into = "MixtureFile")]
pub struct MixtureSpec {
    components: Vec<MixtureComponent>,
    wrap_window: u32,
    prepared: Vec<Prepared>,
}

#[derive(Serialize, Deserialize)]
struct MixtureFile {
    components: Vec<MixtureComponent>,
    #[serde(default = "default_wrap")]
    wrap_window: u32,
}

fn default_wrap() -> u32 {
    DEFAULT_WRAP_WINDOW
}

impl TryFrom<MixtureFile> for MixtureSpec {
    type Error = Error;
    fn try_from(f: MixtureFile) -> Result<Self> {
        Self::new(f.components, f.wrap_window)
    }
}

impl From<MixtureSpec> for MixtureFile {
    fn from(s: MixtureSpec) -> Self {
        Self { components: s.components, wrap_window: s.wrap_window }
    }
}

impl PartialEq for MixtureSpec {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components && self.wrap_window == other.wrap_window
    }
}

impl MixtureSpec {
    /// Validates the components and wraps their means into `[-pi, pi)`.
    pub fn new(mut components: Vec<MixtureComponent>, wrap_window: u32) -> Result<Self> {
        if components.is_empty() {
            return config("mixture needs at least one component");
        }
        if wrap_window < 1 {
            return config("wrap window must be at least 1");
        }
        let d = components[0].mean.len();
        if d == 0 {
            return config("mixture dimension must be at least 1");
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if components.iter().any(|c| !(c.weight > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return config(format!("mixture weights must be positive and sum to 1 (sum {total})"));
        }
        let mut prepared = Vec::with_capacity(components.len());
        for (i, c) in components.iter_mut().enumerate() {
            if c.mean.len() != d || c.covariance.len() != d || c.covariance.iter().any(|r| r.len() != d) {
                return config(format!("component {i} does not have dimension {d}"));
            }
            for m in &mut c.mean {
                *m = wrap_angle(*m);
            }
            let cov = to_matrix(&c.covariance);
            if (&cov - cov.transpose()).amax() > 1e-12 * cov.amax() {
                return config(format!("covariance of component {i} is not symmetric"));
            }
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Config(format!("covariance of component {i} is not positive definite")))?
                .l();
            let log_det: f64 = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let lambda_max = cov.symmetric_eigenvalues().max();
            prepared.push(Prepared {
                mean: c.mean.clone(),
                chol,
                log_scale: c.weight.ln() - 0.5 * (d as f64 * TAU.ln() + log_det),
                prune_radius2: PRUNE_FACTOR * lambda_max,
            });
        }
        Ok(Self { components, wrap_window, prepared })
    }

    /// Equally weighted components built from means, anisotropy factors and
    /// covariances drawn by [`make_covariance`].
    pub fn equal_weights<R: Rng + ?Sized>(means: &[Vec<f64>], factors: &[f64], rng: &mut R) -> Result<Self> {
        if means.len() != factors.len() {
            return config("one anisotropy factor per mean is required");
        }
        let w = 1.0 / means.len() as f64;
        let components = means
            .iter()
            .zip(factors)
            .map(|(m, &f)| {
                Ok(MixtureComponent { mean: m.clone(), covariance: make_covariance(m.len(), f, rng)?, weight: w })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components, DEFAULT_WRAP_WINDOW)
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn wrap_window(&self) -> u32 {
        self.wrap_window
    }

    pub fn with_wrap_window(&self, w: u32) -> Result<Self> {
        Self::new(self.components.clone(), w)
    }

    /// Truncated wrap-sum density at an angle vector.
    pub fn density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let w = self.wrap_window as i64;
        let mut total = 0.0;
        let mut delta = vec![0.0; d];
        for p in &self.prepared {
            let base: Vec<f64> = x.iter().zip(&p.mean).map(|(&a, &m)| wrap_angle(a - m)).collect();
            total += shifts(&base, &mut delta, 0, 0.0, w, p);
        }
        total
    }

    pub fn density_at(&self, p: &Point<f64>) -> f64 {
        self.density(&p.coords)
    }
}

/// Depth-first sum over lattice shifts, pruning branches whose partial
/// squared length already exceeds the component's radius.
fn shifts(base: &[f64], delta: &mut [f64], axis: usize, r2: f64, w: i64, p: &Prepared) -> f64 {
    if axis == base.len() {
        let y =
            p.chol.solve_lower_triangular(&DVector::from_column_slice(delta)).expect("Cholesky factor is nonsingular");
        return (p.log_scale - 0.5 * y.norm_squared()).exp();
    }
    let mut acc = 0.0;
    for k in -w..=w {
        let v = base[axis] + TAU * k as f64;
        let r = r2 + v * v;
        if r > p.prune_radius2 {
            continue;
        }
        delta[axis] = v;
        acc += shifts(base, delta, axis + 1, r, w, p);
    }
    acc
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.len();
    DMatrix::from_fn(d, d, |i, j| rows[i][j])
}

/// Random SPD covariance: Haar-orthogonal eigenvectors, eigenvalues
/// log-spaced on `[1, factor]`, scaled so the largest entry is 1.
pub fn make_covariance<R: Rng + ?Sized>(d: usize, factor: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if !(factor >= 1.0) || !factor.is_finite() {
        return config(format!("anisotropy factor must be >= 1, got {factor}"));
    }
    if d == 0 {
        return config("covariance dimension must be at least 1");
    }
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let eig = DVector::from_fn(d, |i, _| if d == 1 { 1.0 } else { factor.powf(i as f64 / (d - 1) as f64) });
    let c = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    // symmetrize away rounding before normalizing
    let c = (&c + c.transpose()) * 0.5;
    let top = c.max();
    Ok((0..d).map(|i| (0..d).map(|j| c[(i, j)] / top).collect()).collect())
}

/// Draws `n` points with the generating component of each.
pub fn sample_labeled<R: Rng + ?Sized>(
    spec: &MixtureSpec,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<Point<f64>>, Vec<usize>)> {
    if n == 0 {
        return config("sample size must be at least 1");
    }
    let pick = WeightedIndex::new(spec.components.iter().map(|c| c.weight))
        .map_err(|e| Error::Config(format!("mixture weights: {e}")))?;
    let d = spec.dim();
    let mut pts = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = pick.sample(rng);
        let p = &spec.prepared[c];
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &p.chol * z;
        pts.push(Point::new((0..d).map(|i| wrap_angle(p.mean[i] + y[i])).collect()));
        labels.push(c);
    }
    Ok((pts, labels))
}

pub fn sample_mixture<R: Rng + ?Sized>(spec: &MixtureSpec, n: usize, rng: &mut R) -> Result<Vec<Point<f64>>> {
    Ok(sample_labeled(spec, n, rng)?.0)
}

/// Three-component `T^2` benchmark; covariances drawn from `seed`.
pub fn t2_paper(seed: u64) -> MixtureSpec {
    let means = vec![vec![PI, PI / 2.0], vec![PI, 5.0 * PI / 3.0], vec![PI / 4.0, PI]];
    MixtureSpec::equal_weights(&means, &[100.0, 100.0, 20.0], &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("preset is valid")
}

/// Five-component `T^4` benchmark; covariances drawn from `seed`.
pub fn t4_paper(seed: u64) -> MixtureSpec {
    let means = vec![
        vec![0.5; 4],
        vec![PI; 4],
        vec![PI / 2.0, 3.0 * PI / 2.0, 3.0 * PI / 2.0, PI / 2.0],
        vec![3.0 * PI / 2.0, PI / 2.0, PI / 2.0, 3.0 * PI / 2.0],
        vec![PI / 4.0, PI / 4.0, 7.0 * PI / 4.0, 7.0 * PI / 4.0],
    ];
    MixtureSpec::equal_weights(&means, &[100.0, 100.0, 20.0, 50.0, 75.0], &mut ChaCha8Rng::seed_from_u64(seed))
        .expect("preset is valid")
}

/// Named preset lookup.
pub fn preset(name: &str, seed: u64) -> Result<MixtureSpec> {
    match name {
        "t2_paper" => Ok(t2_paper(seed)),
        "t4_paper" => Ok(t4_paper(seed)),
        _ => config(format!("unknown mixture preset '{name}' (expected t2_paper or t4_paper)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::circle_grid;
    use proptest::prelude::*;
    use rand::Rng;

    fn single(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> MixtureSpec {
        MixtureSpec::new(vec![MixtureComponent { mean, covariance: cov, weight: 1.0 }], 3).unwrap()
    }

    #[test]
    fn unit_factor_gives_identity() {
        let c = make_covariance(4, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (i, row) in c.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_scaling_and_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(d, f) in &[(2, 100.0), (2, 20.0), (3, 7.5), (4, 75.0)] {
            let c = make_covariance(d, f, &mut rng).unwrap();
            let top = c.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            assert_eq!(top, 1.0);
            let ev = to_matrix(&c).symmetric_eigenvalues();
            assert!((ev.max() / ev.min() - f).abs() < 1e-9 * f);
        }
        assert!(make_covariance(2, 0.5, &mut rng).is_err());
    }

    #[test]
    fn narrow_gaussian_peak() {
        let s = single(vec![0.0], vec![vec![0.01]]);
        let exact = 1.0 / (TAU * 0.01).sqrt();
        assert!((s.density(&[0.0]) - exact).abs() < 1e-12 * exact);
        assert!((exact - 3.98942).abs() < 1e-5);
    }

    #[test]
    fn circle_density_integrates_to_one() {
        for var in [0.01, 0.1, 1.0] {
            let s = single(vec![0.7], vec![vec![var]]);
            let h = TAU / 4096.0;
            let total: f64 = circle_grid(4096).iter().map(|&x| s.density(&[x]) * h).sum();
            assert!((total - 1.0).abs() < 1e-8, "{var}: {total}");
        }
    }

    #[test]
    fn centered_diagonal_component_is_even() {
        let s = single(vec![0.0, 0.0], vec![vec![0.4, 0.0], vec![0.0, 1.0]]);
        for x in [[0.3, -1.2], [2.0, 3.0], [-0.5, 0.1]] {
            let a = s.density(&x);
            let b = s.density(&[-x[0], -x[1]]);
            assert!((a - b).abs() < 1e-15 * a.max(1.0));
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let c = MixtureComponent { mean: vec![0.0], covariance: vec![vec![1.0]], weight: 0.5 };
        assert!(MixtureSpec::new(vec![c.clone()], 3).is_err());
        let neg = MixtureComponent { covariance: vec![vec![-1.0]], weight: 1.0, ..c.clone() };
        assert!(MixtureSpec::new(vec![neg], 3).is_err());
        assert!(MixtureSpec::new(vec![MixtureComponent { weight: 1.0, ..c }], 0).is_err());
        assert!(preset("t3", 0).is_err());
    }

    #[test]
    fn samples_wrap_and_repeat() {
        let spec = t2_paper(1);
        let a = sample_mixture(&spec, 2000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_mixture(&spec, 2000, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|p| &p.coords).all(|&v| (-PI..PI).contains(&v)));
        assert!(sample_mixture(&spec, 0, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    #[test]
    fn point_mass_limit() {
        let eps = 1e-6;
        let s = single(vec![1.0, -2.0], vec![vec![eps, 0.0], vec![0.0, eps]]);
        let pts = sample_mixture(&s, 1000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for p in pts {
            assert!((p.coords[0] - 1.0).abs() < 5.0 * eps.sqrt());
            assert!((p.coords[1] + 2.0).abs() < 5.0 * eps.sqrt());
        }
    }

    /// The circular mean of a wrapped normal is its mean, so per-component
    /// circular means of labeled draws must land on the preset means.
    #[test]
    fn t2_preset_modes() {
        let spec = t2_paper(4);
        let (pts, labels) = sample_labeled(&spec, 100_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for (c, comp) in spec.components().iter().enumerate() {
            for axis in 0..2 {
                let angles: Vec<f64> =
                    pts.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p.coords[axis]).collect();
                let n = angles.len() as f64;
                let (s, co) = angles.iter().fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
                let r = (s * s + co * co).sqrt() / n;
                let mean = s.atan2(co);
                // delta-method standard error of the circular mean
                let se = ((1.0 - r * r).max(1e-12) / n).sqrt() / r;
                assert!(wrap_angle(mean - comp.mean[axis]).abs() < 5.0 * se, "{c} {axis}");
            }
        }
    }

    #[test]
    fn histogram_matches_density() {
        let spec = t2_paper(7);
        let n = 1_000_000;
        let pts = sample_mixture(&spec, n, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let bins = 64;
        let w = TAU / bins as f64;
        let mut counts = vec![0usize; bins * bins];
        for p in &pts {
            let i = (((p.coords[0] + PI) / w) as usize).min(bins - 1);
            let j = (((p.coords[1] + PI) / w) as usize).min(bins - 1);
            counts[i * bins + j] += 1;
        }
        // bin masses by a 4x4 midpoint rule
        let sub = 4;
        let mut tv = 0.0;
        for i in 0..bins {
            for j in 0..bins {
                let mut mass = 0.0;
                for a in 0..sub {
                    for b in 0..sub {
                        let x = -PI + (i as f64 + (a as f64 + 0.5) / sub as f64) * w;
                        let y = -PI + (j as f64 + (b as f64 + 0.5) / sub as f64) * w;
                        mass += spec.density(&[x, y]);
                    }
                }
                mass *= w * w / (sub * sub) as f64;
                tv += (counts[i * bins + j] as f64 / n as f64 - mass).abs();
            }
        }
        assert!(0.5 * tv < 0.02, "total variation {}", 0.5 * tv);
    }

    #[test]
    fn json_round_trip() {
        let s = t4_paper(2);
        let back: MixtureSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, back);
        let x = [0.1, 0.2, -3.0, 2.0];
        assert_eq!(s.density(&x), back.density(&x));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn wider_window_changes_nothing(seed in 0u64..10_000, d in 1usize..=3, f in 1.0f64..200.0,
                                       a in -PI..PI, b in -PI..PI, c in -PI..PI) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cov = make_covariance(d, f, &mut rng).unwrap();
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-PI..PI)).collect();
            let s3 = single(mean, cov);
            let s5 = s3.with_wrap_window(5).unwrap();
            let x = &[a, b, c][..d];
            prop_assert!((s3.density(x) - s5.density(x)).abs() < 1e-12);
        }
    }
}
