//! Digitally shifted Sobol' points on the unit cube.

use rand::Rng;

use crate::error::{config, Result};

const BITS: usize = 32;

/// Joe-Kuo direction numbers (new-joe-kuo-6.21201): (a, m_1..m_s).
/// Dimension 0 is the van der Corput sequence.
const DIRECTIONS: [(u32, &[u32]); 8] = [
    (0, &[1; BITS]),
    (0, &[1]),
    (1, &[1, 3]),
    (1, &[1, 3, 1]),
    (2, &[1, 1, 1]),
    (1, &[1, 1, 3, 3]),
    (4, &[1, 3, 5, 13]),
    (2, &[1, 1, 5, 5, 17]),
];

/// Largest dimension with shipped direction numbers.
pub const MAX_DIM: usize = DIRECTIONS.len();

fn direction_vector(a: u32, m: &[u32]) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    let s = m.len().min(BITS);
    for i in 0..s {
        v[i] = m[i] << (31 - i);
    }
    for i in s..BITS {
        let j = i - s;
        v[i] = v[j] ^ (v[j] >> s);
        for k in 0..(s - 1) {
            if (a >> k) & 1 != 0 {
                v[i] ^= v[j + 1 + k];
            }
        }
    }
    v
}

/// A `dim`-dimensional Sobol' sequence in Gray-code order, randomized by a
/// digital shift (XOR with one uniform 32-bit word per coordinate).
///
/// Each randomized point set is uniformly distributed on the cube, so
/// averages over it are unbiased. Prefer power-of-two point counts.
#[derive(Clone, Debug)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl Sobol {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return config(format!("Sobol' sequence supports 1..={MAX_DIM} dimensions, got {dim}"));
        }
        let directions = DIRECTIONS[..dim].iter().map(|(a, m)| direction_vector(*a, m)).collect();
        Ok(Self { directions, shift: vec![0; dim] })
    }

    /// Same sequence with a fresh random digital shift.
    pub fn scrambled<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<Self> {
        let mut s = Self::new(dim)?;
        for w in s.shift.iter_mut() {
            *w = rng.random();
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// First `n` points, row-major (`n * dim` values in `[0, 1)`).
    pub fn points(&self, n: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        let mut x = vec![0u32; d];
        let scale = 1.0 / (1u64 << 32) as f64;
        for i in 0..n {
            if i > 0 {
                let c = (i as u32).trailing_zeros() as usize;
                for (xk, v) in x.iter_mut().zip(&self.directions) {
                    *xk ^= v[c];
                }
            }
            for (xk, sh) in x.iter().zip(&self.shift) {
                out.push((xk ^ sh) as f64 * scale);
            }
        }
        out
    }
}
