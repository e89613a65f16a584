//! Deterministic sample generators used by the hypothesis checks and the
//! region construction. Every generator is seeded, so reports are
//! reproducible bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vecops::norm;

const PRIMES: [u32; 6] = [2, 3, 5, 7, 11, 13];

/// Radical inverse of `index` in `base` (van der Corput).
pub fn halton(mut index: usize, base: u32) -> f64 {
    let b = base as usize;
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % b) as f64;
        index /= b;
    }
    r
}

/// Point of the Halton sequence in `[0,1)^dim`.
pub fn halton_point(index: usize, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len());
    (0..dim).map(|k| halton(index + 1, PRIMES[k])).collect()
}

/// Quasi-uniform unit vectors, obtained by rejection from the Halton cube.
pub fn halton_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    if dim == 1 {
        return (0..count)
            .map(|i| vec![if i % 2 == 0 { 1.0 } else { -1.0 }])
            .collect();
    }
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while out.len() < count {
        let p: Vec<f64> = halton_point(i, dim).iter().map(|x| 2.0 * x - 1.0).collect();
        i += 1;
        let r = norm(&p);
        if r > 1.0 || r < 0.1 {
            continue;
        }
        out.push(p.iter().map(|x| x / r).collect());
    }
    out
}

/// Seeded pseudo-random sampler.
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Standard normal deviate (Box–Muller).
    pub fn normal(&mut self) -> f64 {
        let u1: f64 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn unit_vector(&mut self, dim: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| self.normal()).collect();
            let r = norm(&v);
            if r > 1e-8 {
                return v.iter().map(|x| x / r).collect();
            }
        }
    }

    /// Uniform point in the ball `B(center, radius)`.
    pub fn in_ball(&mut self, center: &[f64], radius: f64) -> Vec<f64> {
        let dim = center.len();
        let dir = self.unit_vector(dim);
        let r = radius * self.uniform(0.0, 1.0).powf(1.0 / dim as f64);
        center.iter().zip(&dir).map(|(c, d)| c + r * d).collect()
    }

    /// Uniform point in the cube `[-half, half]^dim`.
    pub fn in_cube(&mut self, dim: usize, half: f64) -> Vec<f64> {
        (0..dim).map(|_| self.uniform(-half, half)).collect()
    }

    /// Unit vector orthogonal to `nu`; `None` in dimension 1.
    pub fn orthogonal_unit(&mut self, nu: &[f64]) -> Option<Vec<f64>> {
        if nu.len() < 2 {
            return None;
        }
        loop {
            let v = self.unit_vector(nu.len());
            let p = crate::vecops::dot(&v, nu);
            let w: Vec<f64> = v.iter().zip(nu).map(|(a, b)| a - p * b).collect();
            let r = norm(&w);
            if r > 1e-6 {
                return Some(w.iter().map(|x| x / r).collect());
            }
        }
    }
}
