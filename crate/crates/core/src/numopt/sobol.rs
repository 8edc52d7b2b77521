use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sobol_table::DIRECTIONS;
use crate::error::{invalid, Result};
use crate::scalar::Real;

const BITS: usize = 32;

/// Highest supported dimension.
pub const MAX_SOBOL_DIM: usize = DIRECTIONS.len() + 1;

/// Gray-code Sobol generator over 32-bit integers, optionally scrambled by a
/// seed-keyed random linear matrix scramble followed by a digital shift.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    state: Vec<u32>,
    shift: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dim: usize, seed: Option<u64>) -> Result<Self> {
        if dim == 0 || dim > MAX_SOBOL_DIM {
            return Err(invalid(format!("Sobol dimension must lie in 1..={MAX_SOBOL_DIM}, got {dim}")));
        }
        let mut directions = Vec::with_capacity(dim);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        directions.push(first);
        for &(degree, coeffs, m) in &DIRECTIONS[..dim - 1] {
            let s = degree as usize;
            let mut v = [0u32; BITS];
            for k in 0..s.min(BITS) {
                v[k] = m[k] << (BITS - 1 - k);
            }
            for k in s..BITS {
                let mut value = v[k - s] ^ (v[k - s] >> s);
                for j in 1..s {
                    if (coeffs >> (s - 1 - j)) & 1 == 1 {
                        value ^= v[k - j];
                    }
                }
                v[k] = value;
            }
            directions.push(v);
        }
        let shift = match seed {
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for v in directions.iter_mut() {
                    scramble(v, &mut rng);
                }
                (0..dim).map(|_| rng.random::<u32>()).collect()
            }
            None => vec![0; dim],
        };
        Ok(Self { directions, state: vec![0; dim], shift, index: 0 })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Next point in `[0, 1)^dim`. The unscrambled sequence starts at the
    /// origin.
    pub fn next_point<T: Real>(&mut self) -> Vec<T> {
        let scale = T::from_f64(1.0 / 4294967296.0).unwrap();
        let point = self.state.iter().zip(&self.shift).map(|(s, sh)| T::from_u32(s ^ sh).unwrap() * scale).collect();
        let c = (!self.index).trailing_zeros() as usize;
        if c < BITS {
            for (s, v) in self.state.iter_mut().zip(&self.directions) {
                *s ^= v[c];
            }
        }
        self.index += 1;
        point
    }
}

// Multiplies every direction number by a random lower-triangular bit matrix
// with unit diagonal: output bit i (from the most significant) is bit i xor a
// random subset of the more significant bits.
fn scramble(v: &mut [u32; BITS], rng: &mut ChaCha8Rng) {
    let rows: Vec<u32> = (0..BITS)
        .map(|i| {
            let pos = BITS - 1 - i;
            let above = if i == 0 { 0 } else { u32::MAX << (pos + 1) };
            (rng.random::<u32>() & above) | (1 << pos)
        })
        .collect();
    for d in v.iter_mut() {
        let mut out = 0u32;
        for (i, row) in rows.iter().enumerate() {
            out |= ((row & *d).count_ones() & 1) << (BITS - 1 - i);
        }
        *d = out;
    }
}

/// `n` points of the `d`-dimensional Sobol sequence; `Some(seed)` scrambles
/// them.
pub fn sobol_sample<T: Real>(n: usize, d: usize, seed: Option<u64>) -> Result<Vec<Vec<T>>> {
    let mut gen = Sobol::new(d, seed)?;
    Ok((0..n).map(|_| gen.next_point()).collect())
}
