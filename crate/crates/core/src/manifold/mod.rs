//! Marginal manifolds (circle, 2-sphere), their products, Laplace-Beltrami
//! eigenfunctions, tangent projectors and uniform sampling.
//!
//! Circle coordinates are intrinsic angles in `[-pi, pi)`. Sphere coordinates
//! are extrinsic unit 3-vectors. A [`Point`] stores the per-marginal blocks
//! back to back, so a point on `S¹ × S²` has four coordinates.

mod circle;
mod sampling;
mod sphere;

pub use circle::{circle_basis, circle_eigenfunction, circle_jet};
pub use sampling::{uniform_sample, SamplingMode};
pub use sphere::{sphere_basis, sphere_eigenfunction, sphere_eigenfunction_unchecked};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::Scalar;

/// Tolerance on `|x| = 1` for sphere blocks handed in by callers.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarginalManifold {
    Circle,
    Sphere2,
}

impl MarginalManifold {
    pub fn intrinsic_dim(self) -> usize {
        match self {
            Self::Circle => 1,
            Self::Sphere2 => 2,
        }
    }

    pub fn ambient_dim(self) -> usize {
        match self {
            Self::Circle => 2,
            Self::Sphere2 => 3,
        }
    }

    /// Number of stored coordinates per point block.
    pub fn coord_len(self) -> usize {
        match self {
            Self::Circle => 1,
            Self::Sphere2 => 3,
        }
    }

    pub fn volume(self) -> f64 {
        match self {
            Self::Circle => 2.0 * std::f64::consts::PI,
            Self::Sphere2 => 4.0 * std::f64::consts::PI,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Circle => "circle",
            Self::Sphere2 => "sphere2",
        }
    }
}

/// Ordered product `M_1 × ... × M_D`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<MarginalManifold>", into = "Vec<MarginalManifold>")]
pub struct ProductManifoldSpec {
    marginals: Vec<MarginalManifold>,
}

impl TryFrom<Vec<MarginalManifold>> for ProductManifoldSpec {
    type Error = Error;

    fn try_from(marginals: Vec<MarginalManifold>) -> Result<Self> {
        Self::new(marginals)
    }
}

impl From<ProductManifoldSpec> for Vec<MarginalManifold> {
    fn from(s: ProductManifoldSpec) -> Self {
        s.marginals
    }
}

/// Parses `S1xS2`, `S2xS2`, `T2` (two circles) and mixtures such as `T2xS2`.
impl std::str::FromStr for ProductManifoldSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut marginals = Vec::new();
        for tok in s.split(['x', 'X', '×']).map(str::trim) {
            match tok {
                "S1" => marginals.push(MarginalManifold::Circle),
                "S2" => marginals.push(MarginalManifold::Sphere2),
                t if t.starts_with('T') => match t[1..].trim_start_matches('^').parse::<usize>() {
                    Ok(d) if d > 0 => marginals.extend(std::iter::repeat_n(MarginalManifold::Circle, d)),
                    _ => return config(format!("bad torus factor {t:?} in manifold {s:?}")),
                },
                t => return config(format!("unknown factor {t:?} in manifold {s:?}")),
            }
        }
        Self::new(marginals)
    }
}

impl std::fmt::Display for ProductManifoldSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self
            .marginals
            .iter()
            .map(|m| match m {
                MarginalManifold::Circle => "S1",
                MarginalManifold::Sphere2 => "S2",
            })
            .collect();
        f.write_str(&names.join("x"))
    }
}

impl ProductManifoldSpec {
    pub fn new(marginals: Vec<MarginalManifold>) -> Result<Self> {
        if marginals.is_empty() {
            return config("a product manifold needs at least one marginal");
        }
        Ok(Self { marginals })
    }

    /// The flat torus `T^d`.
    pub fn torus(d: usize) -> Result<Self> {
        Self::new(vec![MarginalManifold::Circle; d])
    }

    pub fn marginals(&self) -> &[MarginalManifold] {
        &self.marginals
    }

    /// Number of marginals `D`.
    pub fn len(&self) -> usize {
        self.marginals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marginals.is_empty()
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.marginals.iter().map(|m| m.intrinsic_dim()).sum()
    }

    pub fn ambient_dim(&self) -> usize {
        self.marginals.iter().map(|m| m.ambient_dim()).sum()
    }

    pub fn coord_len(&self) -> usize {
        self.marginals.iter().map(|m| m.coord_len()).sum()
    }

    pub fn volume(&self) -> f64 {
        self.marginals.iter().map(|m| m.volume()).product()
    }

    pub fn is_torus(&self) -> bool {
        self.marginals.iter().all(|m| *m == MarginalManifold::Circle)
    }

    /// Start of each marginal's block in a stored point.
    pub fn offsets(&self) -> Vec<usize> {
        self.offsets_by(MarginalManifold::coord_len)
    }

    /// Start of each marginal's block in an ambient vector.
    pub fn ambient_offsets(&self) -> Vec<usize> {
        self.offsets_by(MarginalManifold::ambient_dim)
    }

    fn offsets_by(&self, f: impl Fn(MarginalManifold) -> usize) -> Vec<usize> {
        let mut at = 0;
        self.marginals
            .iter()
            .map(|&m| {
                let o = at;
                at += f(m);
                o
            })
            .collect()
    }

    /// Ambient coordinates of a stored point: circles become `(cos, sin)`.
    pub fn to_ambient<T: Scalar>(&self, p: &Point<T>) -> Vec<T> {
        let mut out = Vec::with_capacity(self.ambient_dim());
        let mut at = 0;
        for m in &self.marginals {
            match m {
                MarginalManifold::Circle => {
                    let a = p.coords[at];
                    out.push(a.cos());
                    out.push(a.sin());
                }
                MarginalManifold::Sphere2 => out.extend_from_slice(&p.coords[at..at + 3]),
            }
            at += m.coord_len();
        }
        out
    }

    /// Radial projection of an ambient vector back onto the product: angles
    /// via `atan2` on circles, normalization on spheres. This is the
    /// extension used to evaluate fields off the manifold; it is constant
    /// along normal rays.
    pub fn project_ambient<T: Scalar>(&self, a: &[T]) -> Point<T> {
        let mut coords = Vec::with_capacity(self.coord_len());
        let mut at = 0;
        for m in &self.marginals {
            match m {
                MarginalManifold::Circle => coords.push(wrap_angle(a[at + 1].atan2(a[at]))),
                MarginalManifold::Sphere2 => {
                    let b = &a[at..at + 3];
                    let r = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
                    coords.extend(b.iter().map(|&c| c / r));
                }
            }
            at += m.ambient_dim();
        }
        Point { coords }
    }

    /// Checks coordinate count, angle range and unit norms.
    pub fn validate<T: Scalar>(&self, p: &Point<T>) -> Result<()> {
        if p.coords.len() != self.coord_len() {
            return Err(Error::Input(format!(
                "point has {} coordinates, manifold expects {}",
                p.coords.len(),
                self.coord_len()
            )));
        }
        let pi = T::PI();
        let mut at = 0;
        for m in &self.marginals {
            match m {
                MarginalManifold::Circle => {
                    let a = p.coords[at];
                    if !(a >= -pi && a < pi) {
                        return Err(Error::Input(format!("angle {a} outside [-pi, pi)")));
                    }
                }
                MarginalManifold::Sphere2 => {
                    let b = &p.coords[at..at + 3];
                    let r = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt().f64();
                    if (r - 1.0).abs() > UNIT_TOLERANCE {
                        return Err(Error::Input(format!("sphere block has norm {r}")));
                    }
                }
            }
            at += m.coord_len();
        }
        Ok(())
    }
}

/// A point of the product manifold, blocks concatenated in marginal order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Point<T> {
    pub coords: Vec<T>,
}

impl<T: Scalar> Point<T> {
    pub fn new(coords: Vec<T>) -> Self {
        Self { coords }
    }

    /// Torus point from angles, wrapped into `[-pi, pi)`.
    pub fn angles(a: &[T]) -> Self {
        Self { coords: a.iter().map(|&x| wrap_angle(x)).collect() }
    }
}

/// Maps an angle into `[-pi, pi)`.
pub fn wrap_angle<T: Scalar>(a: T) -> T {
    let two_pi = T::TAU();
    let mut r = (a + T::PI()) % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    // rounding can land exactly on 2 pi
    if r >= two_pi {
        r -= two_pi;
    }
    r - T::PI()
}

/// Laplace-Beltrami eigenfunction index on one marginal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EigenIndex {
    /// `cos(freq x - phase pi/2) / sqrt(pi)`, or the constant when `freq = 0`.
    Circle { freq: u32, phase: u8 },
    /// Real spherical harmonic of degree `l`; `order < 0` selects the cosine
    /// (real part) family, `order > 0` the sine (imaginary part) family.
    Sphere2 { degree: u32, order: i32 },
}

impl EigenIndex {
    pub fn circle(freq: u32, phase: u8) -> Result<Self> {
        if phase > 1 || (freq == 0 && phase != 0) {
            return config(format!("invalid circle eigen index ({freq}, {phase})"));
        }
        Ok(Self::Circle { freq, phase })
    }

    pub fn sphere(degree: u32, order: i32) -> Result<Self> {
        if order.unsigned_abs() > degree {
            return config(format!("invalid spherical harmonic index ({degree}, {order})"));
        }
        Ok(Self::Sphere2 { degree, order })
    }

    /// Laplace-Beltrami eigenvalue (`i²` or `l(l+1)`).
    pub fn eigenvalue(&self) -> u64 {
        match *self {
            Self::Circle { freq, .. } => u64::from(freq) * u64::from(freq),
            Self::Sphere2 { degree, .. } => u64::from(degree) * (u64::from(degree) + 1),
        }
    }

    pub fn manifold(&self) -> MarginalManifold {
        match self {
            Self::Circle { .. } => MarginalManifold::Circle,
            Self::Sphere2 { .. } => MarginalManifold::Sphere2,
        }
    }

    /// Value at a stored coordinate block (angle or unit vector).
    pub fn eval<T: Scalar>(&self, block: &[T]) -> T {
        match *self {
            Self::Circle { freq, phase } => circle_eigenfunction(freq, phase, block[0]),
            Self::Sphere2 { degree, order } => sphere_eigenfunction_unchecked(degree, order, block),
        }
    }
}

/// Orthogonal projector onto the tangent space at a stored block, in ambient
/// coordinates: `I - x xᵀ` for both the circle (on `R²`) and the sphere.
pub fn tangent_projection<T: Scalar>(m: MarginalManifold, block: &[T]) -> Array2<T> {
    let x: Vec<T> = match m {
        MarginalManifold::Circle => vec![block[0].cos(), block[0].sin()],
        MarginalManifold::Sphere2 => block[..3].to_vec(),
    };
    let n = x.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let id = if i == j { T::one() } else { T::zero() };
        id - x[i] * x[j]
    })
}
