use crate::error::{Error, Result};
use crate::manifold::{EigenIndex, UNIT_TOLERANCE};
use crate::Scalar;

/// Real orthonormal spherical harmonic at a unit vector, rejecting inputs
/// whose norm is off by more than `1e-9`.
pub fn sphere_eigenfunction<T: Scalar>(degree: u32, order: i32, x: &[T]) -> Result<T> {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().f64();
    if (r - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Input(format!("spherical harmonic needs a unit vector, |x| = {r}")));
    }
    Ok(sphere_eigenfunction_unchecked(degree, order, x))
}

/// Real spherical harmonic without the norm check.
///
/// Evaluated in Cartesian form, `N Q_l^m(z) Re/Im((x + i y)^|m|)` with
/// `Q_l^m = P_l^m / sin^m`, so it is regular at the poles. No Condon-Shortley
/// phase; `m < 0` takes the cosine family, `m > 0` the sine family, both
/// scaled by `sqrt(2)`.
pub fn sphere_eigenfunction_unchecked<T: Scalar>(degree: u32, order: i32, x: &[T]) -> T {
    let l = degree as usize;
    let m = order.unsigned_abs() as usize;
    debug_assert!(m <= l);
    let (px, py, pz) = (x[0], x[1], x[2]);

    // Q_m^m = (2m - 1)!!, then the upward three-term recurrence in l.
    let mut q_prev = T::zero();
    let mut q = T::one();
    for k in 1..=m {
        q *= T::of(2 * k - 1);
    }
    for ll in (m + 1)..=l {
        let next = if ll == m + 1 {
            T::of(2 * m + 1) * pz * q
        } else {
            (T::of(2 * ll - 1) * pz * q - T::of(ll + m - 1) * q_prev) / T::of(ll - m)
        };
        q_prev = q;
        q = next;
    }

    // (x + i y)^m
    let (mut re, mut im) = (T::one(), T::zero());
    for _ in 0..m {
        let r = re * px - im * py;
        im = re * py + im * px;
        re = r;
    }

    let mut ratio = 1.0f64; // (l - m)! / (l + m)!
    for j in (l - m + 1)..=(l + m) {
        ratio /= j as f64;
    }
    let norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt();
    let sqrt2 = std::f64::consts::SQRT_2;
    match order.signum() {
        0 => T::lit(norm) * q,
        -1 => T::lit(sqrt2 * norm) * q * re,
        _ => T::lit(sqrt2 * norm) * q * im,
    }
}

/// Real harmonics of degree `<= max_degree`, ordered by the flat index
/// `j = k² + k + m + 1`; `(max_degree + 1)²` entries.
pub fn sphere_basis(max_degree: u32) -> Vec<EigenIndex> {
    let mut out = Vec::with_capacity(((max_degree + 1) * (max_degree + 1)) as usize);
    for degree in 0..=max_degree {
        let l = degree as i32;
        for order in -l..=l {
            out.push(EigenIndex::Sphere2 { degree, order });
        }
    }
    out
}
