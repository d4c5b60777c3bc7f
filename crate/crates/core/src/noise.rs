//! Brownian driver paths.
//!
//! Normals come from a counter-based ChaCha12 stream: driver `l` of seed `s`
//! is stream `l` of the generator keyed by `s`, and step `n` consumes words
//! `4n..4n+4`, so any `(l, n)` is addressable without replaying the stream.
//! Paths store cumulative values `W_n`; increments are differences of
//! consecutive rows and coarsening subsamples rows, which keeps `B_T` and
//! repeated coarsening bit-exact.

use std::io::{Read, Write};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GENERATOR_ID: &str = "chacha12-boxmuller";
const MAGIC: &[u8; 4] = b"BPTH";
const HEADER_LEN: usize = 24;

/// Sequential standard normals from one ChaCha stream.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha12Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Positions the stream at draw `index`.
    pub fn at(seed: u64, stream: u64, index: u64) -> Self {
        let mut s = Self::new(seed, stream);
        s.rng.set_word_pos(4 * index as u128);
        s
    }

    /// One Box-Muller normal per call; every call consumes exactly four
    /// 32-bit words.
    pub fn next_normal(&mut self) -> f64 {
        let x = self.rng.next_u64();
        let y = self.rng.next_u64();
        let u1 = ((x >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (y >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform in `[0, 1)`, also consuming four words.
    pub fn next_uniform(&mut self) -> f64 {
        let x = self.rng.next_u64();
        let _ = self.rng.next_u64();
        (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianPath {
    drivers: usize,
    n_steps: usize,
    dt: f64,
    seed: u64,
    generator_id: String,
    /// `(n_steps + 1) × drivers`, row-major, first row zero.
    cumulative: Vec<f64>,
}

fn checked_len(drivers: usize, n_steps: usize) -> Result<usize> {
    n_steps
        .checked_add(1)
        .and_then(|r| r.checked_mul(drivers))
        .filter(|len| len.checked_mul(8).is_some_and(|b| b <= isize::MAX as usize))
        .ok_or_else(|| Error::Size(format!("{n_steps} steps x {drivers} drivers overflows")))
}

/// Draws `n_steps` Gaussian increments of variance `dt` for each of
/// `drivers` independent Brownian motions.
pub fn generate(seed: u64, drivers: usize, n_steps: usize, dt: f64) -> Result<BrownianPath> {
    if drivers == 0 || n_steps == 0 || !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Argument(
            "drivers, n_steps and dt must all be positive".into(),
        ));
    }
    let len = checked_len(drivers, n_steps)?;
    let mut cumulative = vec![0.0; len];
    let sd = dt.sqrt();
    for l in 0..drivers {
        let mut s = NormalStream::new(seed, l as u64);
        let mut w = 0.0;
        for n in 0..n_steps {
            w += sd * s.next_normal();
            cumulative[(n + 1) * drivers + l] = w;
        }
    }
    Ok(BrownianPath {
        drivers,
        n_steps,
        dt,
        seed,
        generator_id: GENERATOR_ID.to_string(),
        cumulative,
    })
}

impl BrownianPath {
    /// Builds a path from explicit increments (`n_steps × drivers`,
    /// row-major).
    pub fn from_increments(
        drivers: usize,
        dt: f64,
        increments: &[f64],
        seed: u64,
        generator_id: &str,
    ) -> Result<Self> {
        if drivers == 0 || increments.len() % drivers != 0 || increments.is_empty() {
            return Err(Error::Argument("increment array does not match driver count".into()));
        }
        let n_steps = increments.len() / drivers;
        let mut cumulative = vec![0.0; checked_len(drivers, n_steps)?];
        for n in 0..n_steps {
            for l in 0..drivers {
                cumulative[(n + 1) * drivers + l] =
                    cumulative[n * drivers + l] + increments[n * drivers + l];
            }
        }
        Ok(Self {
            drivers,
            n_steps,
            dt,
            seed,
            generator_id: generator_id.to_string(),
            cumulative,
        })
    }

    /// A path with no drivers, for deterministic runs.
    pub fn empty(n_steps: usize, dt: f64) -> Self {
        Self {
            drivers: 0,
            n_steps,
            dt,
            seed: 0,
            generator_id: "none".into(),
            cumulative: Vec::new(),
        }
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generator_id(&self) -> &str {
        &self.generator_id
    }

    pub fn value(&self, n: usize, l: usize) -> f64 {
        self.cumulative[n * self.drivers + l]
    }

    /// `B^l` at the final time.
    pub fn endpoint(&self, l: usize) -> f64 {
        self.value(self.n_steps, l)
    }

    pub fn increment(&self, n: usize, l: usize) -> f64 {
        self.value(n + 1, l) - self.value(n, l)
    }

    /// Increments of step `n` for all drivers.
    pub fn increments_at(&self, n: usize) -> Vec<f64> {
        (0..self.drivers).map(|l| self.increment(n, l)).collect()
    }

    /// `n_steps × drivers` increments, row-major.
    pub fn increments(&self) -> Vec<f64> {
        (0..self.n_steps).flat_map(|n| self.increments_at(n)).collect()
    }

    /// Path on the grid of every `k`-th step.
    pub fn coarsen(&self, k: usize) -> Result<Self> {
        if k == 0 || self.n_steps % k != 0 {
            return Err(Error::Argument(format!(
                "coarsening factor {k} does not divide {} steps",
                self.n_steps
            )));
        }
        let n_steps = self.n_steps / k;
        let mut cumulative = Vec::with_capacity((n_steps + 1) * self.drivers);
        for m in 0..=n_steps {
            let row = m * k * self.drivers;
            cumulative.extend_from_slice(&self.cumulative[row..row + self.drivers]);
        }
        Ok(Self {
            drivers: self.drivers,
            n_steps,
            dt: self.dt * k as f64,
            seed: self.seed,
            generator_id: self.generator_id.clone(),
            cumulative,
        })
    }

    /// First `n_steps` steps of the path.
    pub fn truncate(&self, n_steps: usize) -> Result<Self> {
        if n_steps == 0 || n_steps > self.n_steps {
            return Err(Error::Argument(format!("cannot truncate to {n_steps} steps")));
        }
        let mut p = self.clone();
        p.n_steps = n_steps;
        p.cumulative.truncate((n_steps + 1) * self.drivers);
        Ok(p)
    }

    /// Little-endian dump: a 24-byte header (`BPTH`, drivers as u32,
    /// n_steps as u64, dt as f64) followed by the cumulative values
    /// row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let drivers = u32::try_from(self.drivers)
            .map_err(|_| Error::Size("driver count exceeds u32".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&drivers.to_le_bytes())?;
        w.write_all(&(self.n_steps as u64).to_le_bytes())?;
        w.write_all(&self.dt.to_le_bytes())?;
        for v in &self.cumulative {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, seed: u64) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(Error::Parse("not a BPTH path dump".into()));
        }
        let drivers = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let n_steps = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let n_steps = usize::try_from(n_steps).map_err(|_| Error::Size("n_steps exceeds usize".into()))?;
        let dt = f64::from_le_bytes(header[16..24].try_into().unwrap());
        let len = checked_len(drivers, n_steps)?;
        let mut cumulative = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            cumulative.push(f64::from_le_bytes(buf));
        }
        Ok(Self {
            drivers,
            n_steps,
            dt,
            seed,
            generator_id: GENERATOR_ID.to_string(),
            cumulative,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate(7, 1, 10, 0.01).unwrap();
        let b = generate(7, 1, 10, 0.01).unwrap();
        let c = generate(8, 1, 10, 0.01).unwrap();
        assert_eq!(a.increments(), b.increments());
        assert_ne!(a.increments(), c.increments());
        assert_eq!(a.generator_id(), GENERATOR_ID);
    }

    #[test]
    fn draws_are_addressable() {
        let mut seq = NormalStream::new(11, 3);
        let drawn: Vec<f64> = (0..20).map(|_| seq.next_normal()).collect();
        for n in [0u64, 5, 19] {
            assert_eq!(NormalStream::at(11, 3, n).next_normal(), drawn[n as usize]);
        }
    }

    #[test]
    fn pooled_variance() {
        // 10⁶ increments at dt = 0.01: the sample variance has relative
        // standard deviation √(2/10⁶) ≈ 1.4e-3, and ±3% is about 21σ.
        let p = generate(7, 4, 250_000, 0.01).unwrap();
        let inc = p.increments();
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!((0.0097..=0.0103).contains(&var), "variance {var}");
        for l in 0..4 {
            let m = p.endpoint(l) / p.n_steps() as f64;
            // soft check: 4·dt^{1/2}/√n · 1.5
            assert!(m.abs() < 1.5 * 4.0 * 0.1 / (p.n_steps() as f64).sqrt(), "driver {l}");
        }
    }

    #[test]
    fn coarsen_examples() {
        let p = generate(3, 2, 12, 0.1).unwrap();
        assert_eq!(p.coarsen(1).unwrap(), p);
        let one = p.coarsen(12).unwrap();
        assert_eq!(one.n_steps(), 1);
        for l in 0..2 {
            assert_eq!(one.increment(0, l), p.endpoint(l));
            let fine_sum: f64 = (0..12).map(|n| p.increment(n, l)).sum();
            assert!((one.increment(0, l) - fine_sum).abs() < 1e-15);
        }
        assert!(matches!(p.coarsen(5), Err(Error::Argument(_))));
    }

    #[test]
    fn size_guard() {
        assert!(matches!(generate(1, usize::MAX / 2, 4, 0.1), Err(Error::Size(_))));
        assert!(generate(1, 0, 4, 0.1).is_err());
    }

    #[test]
    fn binary_dump_round_trip() {
        let p = generate(5, 3, 40, 0.025).unwrap();
        let mut buf = Vec::new();
        p.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"BPTH");
        assert_eq!(buf.len(), 24 + 8 * 41 * 3);
        let q = BrownianPath::read_binary(buf.as_slice(), 5).unwrap();
        assert_eq!(p, q);
    }

    proptest! {
        #[test]
        fn coarsening_composes_exactly(k1 in 1usize..5, k2 in 1usize..5, seed in any::<u64>()) {
            let p = generate(seed, 2, k1 * k2 * 6, 0.01).unwrap();
            let a = p.coarsen(k1).unwrap().coarsen(k2).unwrap();
            let b = p.coarsen(k1 * k2).unwrap();
            prop_assert_eq!(a.increments(), b.increments());
            prop_assert_eq!(a.endpoint(1), p.endpoint(1));
        }
    }
}
