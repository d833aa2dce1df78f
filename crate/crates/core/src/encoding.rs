//! Random Laplace-Beltrami eigenfunction encodings of product manifolds.
//!
//! The first layer of a density field sees `eta(x) = (psi_1(x), ..., psi_K(x))`
//! where the `psi_k` are drawn uniformly without replacement from a truncated
//! tensor-product eigenbasis. On tori an alternative family of non-separable
//! eigenfunctions `h(sum_d s_d i_d x_d)` spans the same eigenspaces.

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::manifold::{
    circle_basis, circle_jet, sphere_basis, EigenIndex, MarginalManifold, Point, ProductManifoldSpec,
};
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingVariant {
    #[default]
    Separable,
    NonseparableTorus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Number of sampled basis functions.
    pub k: usize,
    /// Per-marginal maximum frequency (circles) or degree (spheres).
    pub max_freq: Vec<u32>,
    #[serde(default)]
    pub variant: EncodingVariant,
    #[serde(default)]
    pub seed: u64,
}

impl EncodingConfig {
    pub fn separable(k: usize, max_freq: Vec<u32>, seed: u64) -> Self {
        Self { k, max_freq, variant: EncodingVariant::Separable, seed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    Cos,
    Sin,
}

/// One encoding entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BasisFunction {
    /// `prod_d phi_d(x_d)`.
    Separable { factors: Vec<EigenIndex> },
    /// `sqrt(2) (2 pi)^{-D/2} h(sum_d s_d i_d x_d)` with `i_d >= 1` and
    /// `s_1 = +1` (`signs` holds all `D` signs).
    Rotated { freqs: Vec<u32>, signs: Vec<i8>, trig: Trig },
}

impl BasisFunction {
    pub fn eigenvalue(&self) -> u64 {
        match self {
            Self::Separable { factors } => factors.iter().map(|f| f.eigenvalue()).sum(),
            Self::Rotated { freqs, .. } => freqs.iter().map(|&i| u64::from(i) * u64::from(i)).sum(),
        }
    }

    /// Signed torus frequency vectors carrying this entry's Fourier energy;
    /// `None` when a factor is a sphere.
    pub fn torus_frequencies(&self) -> Option<Vec<Vec<i64>>> {
        match self {
            Self::Separable { factors } => {
                let mut out = vec![vec![]];
                for f in factors {
                    let EigenIndex::Circle { freq, .. } = *f else { return None };
                    let i = i64::from(freq);
                    let options: Vec<i64> = if i == 0 { vec![0] } else { vec![i, -i] };
                    out = out
                        .into_iter()
                        .flat_map(|v| {
                            options.iter().map(move |&o| {
                                let mut w = v.clone();
                                w.push(o);
                                w
                            })
                        })
                        .collect();
                }
                Some(out)
            }
            Self::Rotated { freqs, signs, .. } => {
                let w: Vec<i64> = freqs.iter().zip(signs).map(|(&i, &s)| i64::from(s) * i64::from(i)).collect();
                Some(vec![w.iter().map(|x| -x).collect(), w])
            }
        }
    }

    /// Signed frequency vector of the phase `sum_d s_d i_d x_d`, for rotated entries.
    fn phase_weights<'a>(freqs: &'a [u32], signs: &'a [i8]) -> impl Iterator<Item = f64> + 'a {
        freqs.iter().zip(signs).map(|(&i, &s)| f64::from(s) * f64::from(i))
    }

    /// Value at a stored point.
    pub fn eval<T: Scalar>(&self, spec: &ProductManifoldSpec, p: &Point<T>) -> T {
        match self {
            Self::Separable { factors } => {
                let mut v = T::one();
                let mut at = 0;
                for (f, m) in factors.iter().zip(spec.marginals()) {
                    v *= f.eval(&p.coords[at..at + m.coord_len()]);
                    at += m.coord_len();
                }
                v
            }
            Self::Rotated { freqs, signs, trig } => {
                let c = rotated_norm::<T>(freqs.len());
                let theta: T = Self::phase_weights(freqs, signs).zip(&p.coords).map(|(w, &x)| T::lit(w) * x).sum();
                c * match trig {
                    Trig::Cos => theta.cos(),
                    Trig::Sin => theta.sin(),
                }
            }
        }
    }

    /// Value, gradient and pure second derivatives in the torus angles.
    fn jet<T: Scalar>(&self, angles: &[T], grad: &mut [T], second: &mut [T]) -> T {
        let d = angles.len();
        match self {
            Self::Separable { factors } => {
                let mut jets = Vec::with_capacity(d);
                for (f, &x) in factors.iter().zip(angles) {
                    let EigenIndex::Circle { freq, phase } = *f else { unreachable!("torus jets need circle factors") };
                    jets.push(circle_jet(freq, phase, x));
                }
                for k in 0..d {
                    let rest: T = (0..d).filter(|&e| e != k).map(|e| jets[e][0]).fold(T::one(), |a, b| a * b);
                    grad[k] = jets[k][1] * rest;
                    second[k] = jets[k][2] * rest;
                }
                jets.iter().map(|j| j[0]).fold(T::one(), |a, b| a * b)
            }
            Self::Rotated { freqs, signs, trig } => {
                let c = rotated_norm::<T>(d);
                let w: Vec<T> = Self::phase_weights(freqs, signs).map(T::lit).collect();
                let theta: T = w.iter().zip(angles).map(|(&w, &x)| w * x).sum();
                let (s, co) = theta.sin_cos();
                let (v, dv) = match trig {
                    Trig::Cos => (co, -s),
                    Trig::Sin => (s, co),
                };
                for k in 0..d {
                    grad[k] = c * w[k] * dv;
                    second[k] = -c * w[k] * w[k] * v;
                }
                c * v
            }
        }
    }
}

fn rotated_norm<T: Scalar>(d: usize) -> T {
    T::SQRT_2() * T::TAU().powi(-(d as i32)).sqrt()
}

fn marginal_basis(m: MarginalManifold, max: u32) -> Vec<EigenIndex> {
    match m {
        MarginalManifold::Circle => circle_basis(max),
        MarginalManifold::Sphere2 => sphere_basis(max),
    }
}

/// Size of the truncated separable tensor set.
pub fn tensor_set_size(spec: &ProductManifoldSpec, max_freq: &[u32]) -> usize {
    spec.marginals().iter().zip(max_freq).map(|(&m, &k)| marginal_basis(m, k).len()).product()
}

/// Size of the rotated torus family `{1..m_1} x ... x {1..m_D} x signs x {sin, cos}`.
pub fn rotated_set_size(max_freq: &[u32]) -> usize {
    let d = max_freq.len();
    max_freq.iter().map(|&m| m as usize).product::<usize>() << d
}

/// Ordered list of sampled eigenfunctions with their eigenvalues.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    spec: ProductManifoldSpec,
    basis: Vec<BasisFunction>,
    eigenvalues: Vec<u64>,
}

impl Encoding {
    /// Wraps an explicit basis, checking that entries are distinct and
    /// match the manifold.
    pub fn from_basis(spec: ProductManifoldSpec, basis: Vec<BasisFunction>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for b in &basis {
            match b {
                BasisFunction::Separable { factors } => {
                    if factors.len() != spec.len()
                        || factors.iter().zip(spec.marginals()).any(|(f, m)| f.manifold() != *m)
                    {
                        return config(format!("basis entry {b:?} does not match the manifold"));
                    }
                }
                BasisFunction::Rotated { freqs, signs, .. } => {
                    if !spec.is_torus() || freqs.len() != spec.len() || signs.len() != spec.len() {
                        return config("rotated entries need a torus and one frequency per circle");
                    }
                    if freqs.contains(&0) || signs[0] != 1 || signs.iter().any(|s| s.abs() != 1) {
                        return config(format!("rotated entry {b:?} violates i_d >= 1, s_1 = +1"));
                    }
                }
            }
            if !seen.insert(b.clone()) {
                return config(format!("duplicate basis entry {b:?}"));
            }
        }
        let eigenvalues = basis.iter().map(BasisFunction::eigenvalue).collect();
        Ok(Self { spec, basis, eigenvalues })
    }

    /// Every separable tensor-product function up to `max_freq`, in
    /// mixed-radix order (first marginal slowest).
    pub fn full_tensor(spec: &ProductManifoldSpec, max_freq: &[u32]) -> Result<Self> {
        check_max_freq(spec, max_freq)?;
        let n = tensor_set_size(spec, max_freq);
        let margs = marginal_sets(spec, max_freq);
        let basis = (0..n).map(|r| decode_separable(&margs, r)).collect();
        Self::from_basis(spec.clone(), basis)
    }

    /// Seeds the generator from `cfg.seed` and calls [`sample_encoding`].
    pub fn from_config(spec: &ProductManifoldSpec, cfg: &EncodingConfig) -> Result<Self> {
        sample_encoding(spec, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
    }

    pub fn spec(&self) -> &ProductManifoldSpec {
        &self.spec
    }

    pub fn basis(&self) -> &[BasisFunction] {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[u64] {
        &self.eigenvalues
    }

    /// Number of entries `K`.
    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    pub fn encode<T: Scalar>(&self, p: &Point<T>) -> Vec<T> {
        self.basis.iter().map(|b| b.eval(&self.spec, p)).collect()
    }

    /// Row `i` is `eta(points[i])`.
    pub fn encode_batch<T: Scalar>(&self, points: &[Point<T>]) -> Array2<T> {
        let k = self.len();
        let mut out = Array2::zeros((points.len(), k));
        for (mut row, p) in out.rows_mut().into_iter().zip(points) {
            for (o, b) in row.iter_mut().zip(&self.basis) {
                *o = b.eval(&self.spec, p);
            }
        }
        out
    }

    /// Encodes ambient vectors after radial projection onto the manifold.
    pub fn encode_ambient_batch<T: Scalar>(&self, ambient: &[Vec<T>]) -> Array2<T> {
        let pts: Vec<Point<T>> = ambient.iter().map(|a| self.spec.project_ambient(a)).collect();
        self.encode_batch(&pts)
    }

    /// Forward-mode jets of every entry on a torus: component 0 holds the
    /// values, components `1..=D` the partials in each angle, components
    /// `D+1..=2D` the pure second partials. Each component is `N x K`.
    pub fn encode_jets<T: Scalar>(&self, points: &[Point<T>]) -> Result<Vec<Array2<T>>> {
        if !self.spec.is_torus() {
            return config("intrinsic jets are only defined on tori");
        }
        let d = self.spec.len();
        let (n, k) = (points.len(), self.len());
        let mut comps = vec![Array2::zeros((n, k)); 1 + 2 * d];
        let mut g = vec![T::zero(); d];
        let mut s = vec![T::zero(); d];
        for (i, p) in points.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                comps[0][[i, j]] = b.jet(&p.coords, &mut g, &mut s);
                for c in 0..d {
                    comps[1 + c][[i, j]] = g[c];
                    comps[1 + d + c][[i, j]] = s[c];
                }
            }
        }
        Ok(comps)
    }
}

fn check_max_freq(spec: &ProductManifoldSpec, max_freq: &[u32]) -> Result<()> {
    if max_freq.len() != spec.len() {
        return config(format!("{} maximum frequencies given for {} marginals", max_freq.len(), spec.len()));
    }
    Ok(())
}

fn marginal_sets(spec: &ProductManifoldSpec, max_freq: &[u32]) -> Vec<Vec<EigenIndex>> {
    spec.marginals().iter().zip(max_freq).map(|(&m, &k)| marginal_basis(m, k)).collect()
}

fn decode_separable(margs: &[Vec<EigenIndex>], mut r: usize) -> BasisFunction {
    let mut factors = vec![EigenIndex::Circle { freq: 0, phase: 0 }; margs.len()];
    for d in (0..margs.len()).rev() {
        let n = margs[d].len();
        factors[d] = margs[d][r % n];
        r /= n;
    }
    BasisFunction::Separable { factors }
}

fn decode_rotated(max_freq: &[u32], mut r: usize) -> BasisFunction {
    let d = max_freq.len();
    let trig = if r.is_multiple_of(2) { Trig::Cos } else { Trig::Sin };
    r /= 2;
    let mut signs = vec![1i8; d];
    for s in signs.iter_mut().skip(1) {
        *s = if r.is_multiple_of(2) { 1 } else { -1 };
        r /= 2;
    }
    let mut freqs = vec![0u32; d];
    for k in (0..d).rev() {
        let m = max_freq[k] as usize;
        freqs[k] = (r % m) as u32 + 1;
        r /= m;
    }
    BasisFunction::Rotated { freqs, signs, trig }
}

/// Draws `cfg.k` distinct entries uniformly without replacement from the
/// flattened truncated family. The result is listed in ascending
/// flat-index order.
pub fn sample_encoding<R: Rng + ?Sized>(
    spec: &ProductManifoldSpec,
    cfg: &EncodingConfig,
    rng: &mut R,
) -> Result<Encoding> {
    check_max_freq(spec, &cfg.max_freq)?;
    let total = match cfg.variant {
        EncodingVariant::Separable => tensor_set_size(spec, &cfg.max_freq),
        EncodingVariant::NonseparableTorus => {
            if !spec.is_torus() {
                return config("non-separable encodings are only available on tori");
            }
            if cfg.max_freq.contains(&0) {
                return config("non-separable encodings need every maximum frequency >= 1");
            }
            rotated_set_size(&cfg.max_freq)
        }
    };
    if cfg.k == 0 || cfg.k > total {
        return Err(Error::Config(format!("cannot draw K = {} entries from a set of {total}", cfg.k)));
    }
    let mut picks = index::sample(rng, total, cfg.k).into_vec();
    picks.sort_unstable();
    let basis = match cfg.variant {
        EncodingVariant::Separable => {
            let margs = marginal_sets(spec, &cfg.max_freq);
            picks.into_iter().map(|r| decode_separable(&margs, r)).collect()
        }
        EncodingVariant::NonseparableTorus => picks.into_iter().map(|r| decode_rotated(&cfg.max_freq, r)).collect(),
    };
    Encoding::from_basis(spec.clone(), basis)
}
