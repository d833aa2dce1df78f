use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::manifold::{MarginalManifold, Point, ProductManifoldSpec};
use crate::qmc::Sobol;
use crate::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Pseudo,
    /// Digitally shifted Sobol' points; tori only.
    Qmc,
}

/// `n` points uniform with respect to the product volume form.
///
/// Pseudo-random circles draw angles in `[-pi, pi)`; spheres normalize
/// standard Gaussian 3-vectors. QMC mode maps a freshly shifted Sobol' set
/// onto `[-pi, pi)^D`, so each call is an independent randomized point set.
pub fn uniform_sample<T: Scalar, R: Rng + ?Sized>(
    spec: &ProductManifoldSpec,
    n: usize,
    rng: &mut R,
    mode: SamplingMode,
) -> Result<Vec<Point<T>>> {
    if n == 0 {
        return config("uniform_sample needs n >= 1");
    }
    let pi = std::f64::consts::PI;
    match mode {
        SamplingMode::Qmc => {
            if !spec.is_torus() {
                return config("quasi-Monte Carlo sampling is only available on tori");
            }
            let d = spec.len();
            let u = Sobol::scrambled(d, rng)?.points(n);
            Ok(u.chunks(d).map(|c| Point::new(c.iter().map(|&v| T::lit(-pi + 2.0 * pi * v)).collect())).collect())
        }
        SamplingMode::Pseudo => Ok((0..n)
            .map(|_| {
                let mut coords = Vec::with_capacity(spec.coord_len());
                for m in spec.marginals() {
                    match m {
                        MarginalManifold::Circle => {
                            let u: f64 = rng.random();
                            coords.push(T::lit(-pi + 2.0 * pi * u));
                        }
                        MarginalManifold::Sphere2 => {
                            let g: [f64; 3] =
                                [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                            let r = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                            coords.extend(g.iter().map(|v| T::lit(v / r)));
                        }
                    }
                }
                Point::new(coords)
            })
            .collect()),
    }
}
