//! Seeded pseudorandom nonlinear feature projection.
//!
//! The embedded vector of length `L` forms the initial pool. Feature `k`
//! (1-based) is built from two pool entries `p_i`, `p_j` drawn from the
//! first `L + k - 1` entries as `(1 - p_i)^p_j` and is appended to the pool.
//! Only the `m` generated features are returned. Inputs strictly inside
//! `(0, 1)` map to features inside `(0, 1)`.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::trajectory::fmt_f64;

/// 64-bit linear congruential generator. The output is the top 31 bits of
/// the advanced state.
#[derive(Clone, Debug)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn next_u31(&mut self) -> u32 {
        self.state = self.state.wrapping_mul(Self::MULTIPLIER).wrapping_add(Self::INCREMENT);
        (self.state >> 33) as u32
    }

    /// Index in `0..n` by modulo reduction.
    pub fn index(&mut self, n: usize) -> usize {
        self.next_u31() as usize % n
    }
}

const MAX_REDRAWS: usize = 1 << 20;

/// Ordered index pairs defining the projection. Pairs are stored as pool
/// positions: `0..input_len` are the embedded components, `input_len + k - 1`
/// is feature `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionPlan {
    input_len: usize,
    seed: u64,
    pairs: Vec<(u32, u32)>,
}

/// Serialized form, with pairs in signed indexing: originals occupy
/// `-(input_len - 1) ..= 0`, features `1 ..= m`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRecord {
    pub seed: u64,
    pub input_len: usize,
    pub m: usize,
    pub pairs: Vec<[i64; 2]>,
}

impl ProjectionPlan {
    /// Draws `m` fresh pairs from the growing pool.
    pub fn build(input_len: usize, m: usize, seed: u64) -> Result<Self> {
        if input_len < 2 {
            return Err(Error::InvalidParameter(format!("projection input length must be >= 2, got {input_len}")));
        }
        if m == 0 {
            return Err(Error::InvalidParameter("projection dimension must be >= 1".into()));
        }
        let mut rng = Lcg::new(seed);
        let mut seen = HashSet::with_capacity(m);
        let mut pairs = Vec::with_capacity(m);
        for k in 1..=m {
            let pool = input_len + k - 1;
            let mut fresh = None;
            for _ in 0..MAX_REDRAWS {
                let i = rng.index(pool) as u32;
                let j = rng.index(pool) as u32;
                if seen.insert((i, j)) {
                    fresh = Some((i, j));
                    break;
                }
            }
            pairs.push(fresh.ok_or(Error::PlanExhausted { feature: k })?);
        }
        Ok(Self { input_len, seed, pairs })
    }

    /// Rebuilds a plan from stored pairs, checking the growth structure.
    pub fn from_pairs(input_len: usize, seed: u64, pairs: Vec<(u32, u32)>) -> Result<Self> {
        if input_len < 2 || pairs.is_empty() {
            return Err(Error::InvalidParameter("plan needs input_len >= 2 and at least one pair".into()));
        }
        let mut seen = HashSet::with_capacity(pairs.len());
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let pool = (input_len + k) as u32;
            if i >= pool || j >= pool {
                return Err(Error::Malformed(format!("pair {} references an unavailable pool entry", k + 1)));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Malformed(format!("pair {} duplicates an earlier pair", k + 1)));
            }
        }
        Ok(Self { input_len, seed, pairs })
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn m(&self) -> usize {
        self.pairs.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    /// The first `m` features of this plan.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.m() {
            return Err(Error::InvalidParameter(format!("cannot truncate a plan of {} features to {m}", self.m())));
        }
        Ok(Self { input_len: self.input_len, seed: self.seed, pairs: self.pairs[..m].to_vec() })
    }

    /// Pool position to signed index.
    pub fn signed_index(&self, pos: u32) -> i64 {
        pos as i64 - (self.input_len as i64 - 1)
    }

    pub fn to_record(&self) -> PlanRecord {
        PlanRecord {
            seed: self.seed,
            input_len: self.input_len,
            m: self.m(),
            pairs: self.pairs.iter().map(|&(i, j)| [self.signed_index(i), self.signed_index(j)]).collect(),
        }
    }

    pub fn from_record(rec: &PlanRecord) -> Result<Self> {
        if rec.pairs.len() != rec.m {
            return Err(Error::Malformed(format!("plan declares m = {} but stores {} pairs", rec.m, rec.pairs.len())));
        }
        let offset = rec.input_len as i64 - 1;
        let pairs = rec
            .pairs
            .iter()
            .map(|&[i, j]| {
                let (pi, pj) = (i + offset, j + offset);
                if pi < 0 || pj < 0 || pi > u32::MAX as i64 || pj > u32::MAX as i64 {
                    Err(Error::Malformed(format!("pair index ({i}, {j}) out of range")))
                } else {
                    Ok((pi as u32, pj as u32))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(rec.input_len, rec.seed, pairs)
    }

    /// Length of the scratch pool used by [`apply_into`](Self::apply_into).
    pub fn pool_len(&self) -> usize {
        self.input_len + self.m()
    }

    /// Evaluates the projection, leaving the features in `pool[input_len..]`.
    pub fn apply_into<T: Real>(&self, embedded: &[T], pool: &mut [T]) -> Result<()> {
        if embedded.len() != self.input_len {
            return Err(Error::DimensionMismatch {
                context: "projection input",
                expected: self.input_len,
                found: embedded.len(),
            });
        }
        if pool.len() != self.pool_len() {
            return Err(Error::DimensionMismatch { context: "projection pool", expected: self.pool_len(), found: pool.len() });
        }
        for (index, &v) in embedded.iter().enumerate() {
            if !(v > T::zero() && v < T::one()) {
                return Err(Error::OutsideUnitInterval { index, value: v.as_f64() });
            }
        }
        pool[..self.input_len].copy_from_slice(embedded);
        for (k, &(i, j)) in self.pairs.iter().enumerate() {
            let (pi, pj) = (pool[i as usize], pool[j as usize]);
            pool[self.input_len + k] = (T::one() - pi).powf(pj);
        }
        Ok(())
    }

    pub fn apply<T: Real>(&self, embedded: &[T]) -> Result<Vec<T>> {
        let mut pool = vec![T::zero(); self.pool_len()];
        self.apply_into(embedded, &mut pool)?;
        Ok(pool.split_off(self.input_len))
    }
}

/// Pooled histogram of feature values over `[0, 1)` with half-open bins.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn edges(&self, b: usize) -> (f64, f64) {
        let n = self.bins() as f64;
        (b as f64 / n, (b + 1) as f64 / n)
    }

    /// Largest bin's share of the total mass.
    pub fn max_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        *self.counts.iter().max().unwrap_or(&0) as f64 / total as f64
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_lo", "bin_hi", "count"])?;
        for (b, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.edges(b);
            w.write_record([fmt_f64(lo), fmt_f64(hi), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Histogram of every value in every feature vector.
pub fn feature_histogram<'a, T: Real, I>(features: I, bins: usize) -> Result<Histogram>
where
    I: IntoIterator<Item = &'a [T]>,
{
    if bins < 2 {
        return Err(Error::InvalidParameter("histogram needs at least 2 bins".into()));
    }
    let mut counts = vec![0u64; bins];
    let mut any = false;
    let nb = T::from_usize_lossy(bins);
    for row in features {
        for &v in row {
            any = true;
            let b = (v * nb).floor().to_usize().unwrap_or(0).min(bins - 1);
            counts[b] += 1;
        }
    }
    if !any {
        return Err(Error::InvalidParameter("histogram of empty feature set".into()));
    }
    Ok(Histogram { counts })
}
