use crate::manifold::EigenIndex;
use crate::Scalar;

/// Orthonormal Fourier function on the circle.
///
/// `freq = 0` is the constant `1/sqrt(2 pi)`; otherwise
/// `cos(freq x - phase pi/2) / sqrt(pi)`, i.e. a cosine for `phase = 0` and a
/// sine for `phase = 1`.
pub fn circle_eigenfunction<T: Scalar>(freq: u32, phase: u8, x: T) -> T {
    circle_jet(freq, phase, x)[0]
}

/// Value, first and second derivative of [`circle_eigenfunction`].
pub fn circle_jet<T: Scalar>(freq: u32, phase: u8, x: T) -> [T; 3] {
    if freq == 0 {
        return [T::one() / T::TAU().sqrt(), T::zero(), T::zero()];
    }
    let k = T::from_u32(freq).unwrap();
    let c = T::one() / T::PI().sqrt();
    let (s, co) = (k * x).sin_cos();
    // phase 1 shifts the cosine by a quarter period
    let (v, d) = if phase == 0 { (co, -s) } else { (s, co) };
    [c * v, c * k * d, -c * k * k * v]
}

/// Marginal basis up to `max_freq`: the constant then cos/sin pairs, `2 max_freq + 1` entries.
pub fn circle_basis(max_freq: u32) -> Vec<EigenIndex> {
    let mut out = vec![EigenIndex::Circle { freq: 0, phase: 0 }];
    for freq in 1..=max_freq {
        out.push(EigenIndex::Circle { freq, phase: 0 });
        out.push(EigenIndex::Circle { freq, phase: 1 });
    }
    out
}
