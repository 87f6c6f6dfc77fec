//! Seeded hash family, bucket-entropy analytics and the fairness ratio.
//!
//! Every member of the family is identified by a 64-bit seed. A domain
//! index `v` is mapped to a bucket in `[0, g)` by
//! `mix(seed ^ mix(v + 1)) mod g`, where `mix` is the SplitMix64 finalizer.
//! The construction is fixed bit-for-bit so that buckets are reproducible
//! across platforms and across implementations in other languages.

use serde::{Deserialize, Serialize};
use strength_reduce::StrengthReducedU64;

use crate::error::{Error, Result};

const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;

/// Slack applied to every `ratio <= rho` comparison.
pub const RHO_TOLERANCE: f64 = 1e-12;

/// SplitMix64 finalizer (all arithmetic modulo 2^64).
#[inline(always)]
pub const fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

/// Pre-mixed key of a domain index; the `+1` keeps index 0 away from a zero input.
#[inline(always)]
const fn domain_key(v: u32) -> u64 {
    mix(v as u64 + 1)
}

/// Identifies one member of the hash family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HashSeed(pub u64);

impl From<u64> for HashSeed {
    fn from(v: u64) -> Self {
        HashSeed(v)
    }
}

impl std::fmt::Display for HashSeed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A hash function from domain indices to `[0, g)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HashFn {
    pub seed: HashSeed,
    pub g: u32,
}

impl HashFn {
    /// # Panics
    /// If `g == 0`. Protocol code additionally requires `g >= 2`.
    pub fn new(seed: impl Into<HashSeed>, g: u32) -> Self {
        assert!(g >= 1, "hash output space must be non-empty");
        HashFn {
            seed: seed.into(),
            g,
        }
    }

    #[inline]
    pub fn bucket(&self, v: u32) -> u32 {
        (mix(self.seed.0 ^ domain_key(v)) % self.g as u64) as u32
    }
}

/// `hash_bucket(fn, v)`.
#[inline]
pub fn hash_bucket(hash: HashFn, v: u32) -> u32 {
    hash.bucket(v)
}

/// Bucket counts of a hash function over a domain, plus their entropy in nats.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyReport {
    pub e_comp: f64,
    pub counts: Vec<usize>,
}

/// Shannon entropy (nats) of the distribution `counts / total`, with `0 ln 0 = 0`.
pub fn entropy_of_counts<I>(counts: I, total: usize) -> f64
where
    I: IntoIterator,
    I::Item: Into<f64>,
{
    let n = total as f64;
    let mut h = 0.0;
    for c in counts {
        let c: f64 = c.into();
        if c > 0.0 {
            let p = c / n;
            h -= p * p.ln();
        }
    }
    // -0.0 for a single-bucket distribution
    h.max(0.0)
}

pub fn entropy(hash: HashFn, domain_size: usize) -> EntropyReport {
    let mut counts = vec![0usize; hash.g as usize];
    for v in 0..domain_size as u32 {
        counts[hash.bucket(v) as usize] += 1;
    }
    let e_comp = entropy_of_counts(counts.iter().map(|&c| c as f64), domain_size);
    EntropyReport { e_comp, counts }
}

/// Entropy of a perfectly uniform hash: `ln g`.
pub fn optimal_entropy(g: u32) -> f64 {
    (g as f64).ln()
}

/// Entropy of the most balanced split of `domain_size` items into `g` buckets.
pub fn max_attainable_entropy(domain_size: usize, g: u32) -> f64 {
    let g = g as usize;
    let q = domain_size / g;
    let r = domain_size % g;
    let sizes = std::iter::repeat(q + 1)
        .take(r)
        .chain(std::iter::repeat(q).take(g - r))
        .map(|c| c as f64);
    entropy_of_counts(sizes, domain_size)
}

/// The `v` in `[0, domain_size)` that hash to `bucket`, ascending.
pub fn preimage_set(hash: HashFn, domain_size: usize, bucket: u32) -> Vec<u32> {
    (0..domain_size as u32)
        .filter(|&v| hash.bucket(v) == bucket)
        .collect()
}

/// `E_opt / E_comp`, or `Infeasible` when the hash sends the whole domain to one bucket.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FairnessRatio {
    Finite(f64),
    Infeasible,
}

impl FairnessRatio {
    /// Whether the ratio is within `rho` (with [`RHO_TOLERANCE`] slack).
    /// `Infeasible` only passes an infinite `rho`.
    pub fn satisfies(self, rho: f64) -> bool {
        match self {
            FairnessRatio::Finite(r) => r <= rho + RHO_TOLERANCE,
            FairnessRatio::Infeasible => rho == f64::INFINITY,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            FairnessRatio::Finite(r) => r,
            FairnessRatio::Infeasible => f64::INFINITY,
        }
    }
}

pub fn fairness_ratio(e_opt: f64, e_comp: f64) -> FairnessRatio {
    if e_comp <= 0.0 {
        FairnessRatio::Infeasible
    } else {
        FairnessRatio::Finite(e_opt / e_comp)
    }
}

/// Hashes a fixed domain under many seeds.
///
/// Caches the pre-mixed domain keys and a strength-reduced modulus so that
/// each bucket costs one `mix` and one multiply-based remainder. Buckets are
/// identical to [`HashFn::bucket`].
#[derive(Clone, Debug)]
pub struct DomainHasher {
    keys: Vec<u64>,
    g: u32,
    modulus: StrengthReducedU64,
}

impl DomainHasher {
    /// # Panics
    /// If `g == 0`.
    pub fn new(domain_size: usize, g: u32) -> Self {
        assert!(g >= 1, "hash output space must be non-empty");
        DomainHasher {
            keys: (0..domain_size as u32).map(domain_key).collect(),
            g,
            modulus: StrengthReducedU64::new(g as u64),
        }
    }

    /// Hashes an explicit list of domain values; position `i` stands for
    /// `values[i]` in every index-based method.
    pub fn over_values(values: &[u32], g: u32) -> Self {
        assert!(g >= 1, "hash output space must be non-empty");
        DomainHasher {
            keys: values.iter().map(|&v| domain_key(v)).collect(),
            g,
            modulus: StrengthReducedU64::new(g as u64),
        }
    }

    pub fn domain_size(&self) -> usize {
        self.keys.len()
    }

    pub fn g(&self) -> u32 {
        self.g
    }

    #[inline(always)]
    fn reduce(&self, seed: HashSeed, key: u64) -> u32 {
        (mix(seed.0 ^ key) % self.modulus) as u32
    }

    #[inline]
    pub fn bucket(&self, seed: HashSeed, v: u32) -> u32 {
        self.reduce(seed, self.keys[v as usize])
    }

    /// Every domain index's bucket, in index order.
    pub fn buckets(&self, seed: HashSeed) -> impl Iterator<Item = u32> + '_ {
        self.keys.iter().map(move |&k| self.reduce(seed, k))
    }

    /// Fills `counts` (length `g`) with bucket occupancies.
    pub fn counts_into(&self, seed: HashSeed, counts: &mut [u32]) {
        debug_assert_eq!(counts.len(), self.g as usize);
        counts.fill(0);
        for &k in &self.keys {
            counts[self.reduce(seed, k) as usize] += 1;
        }
    }

    pub fn entropy(&self, seed: HashSeed) -> EntropyReport {
        let mut counts = vec![0u32; self.g as usize];
        self.counts_into(seed, &mut counts);
        let e_comp = entropy_of_counts(counts.iter().copied(), self.keys.len());
        EntropyReport {
            e_comp,
            counts: counts.into_iter().map(|c| c as usize).collect(),
        }
    }

    /// `|P|` for a user holding `v`: how many domain values share `v`'s bucket.
    pub fn preimage_size(&self, seed: HashSeed, v: u32) -> usize {
        let b = self.bucket(seed, v);
        self.buckets(seed).filter(|&x| x == b).count()
    }
}

/// Accept/reject test `E_opt / E_comp <= rho` for one `(domain, g, rho)`.
///
/// The final decision always goes through [`fairness_ratio`]. Before that,
/// counting stops as soon as one bucket reaches `cap` items: a bucket holding
/// a share `q >= 1/g` of the domain bounds the entropy above by
/// `-q ln q - (1-q) ln((1-q)/(g-1))`, so such hashes cannot pass.
#[derive(Clone, Debug)]
pub struct FairnessGate {
    hasher: DomainHasher,
    rho: f64,
    e_opt: f64,
    cap: u32,
}

impl FairnessGate {
    /// Fails with [`Error::InfeasibleRho`] when even the most balanced split
    /// of the domain violates `rho`.
    pub fn new(domain_size: usize, g: u32, rho: f64) -> Result<Self> {
        if g < 2 {
            return Err(Error::invalid(format!("g must be at least 2, got {g}")));
        }
        if domain_size == 0 {
            return Err(Error::invalid("domain must be non-empty"));
        }
        if rho.is_nan() || rho < 1.0 {
            return Err(Error::invalid(format!("rho must be >= 1, got {rho}")));
        }
        let e_opt = optimal_entropy(g);
        let best = fairness_ratio(e_opt, max_attainable_entropy(domain_size, g));
        if !best.satisfies(rho) {
            return Err(Error::InfeasibleRho {
                rho,
                best_ratio: best.value(),
            });
        }
        Ok(FairnessGate {
            hasher: DomainHasher::new(domain_size, g),
            rho,
            e_opt,
            cap: early_reject_cap(domain_size, g, e_opt, rho),
        })
    }

    pub fn hasher(&self) -> &DomainHasher {
        &self.hasher
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn e_opt(&self) -> f64 {
        self.e_opt
    }

    /// Smallest bucket occupancy that alone proves rejection.
    pub fn cap(&self) -> u32 {
        self.cap
    }

    /// `scratch` must have length `g`.
    pub fn accepts(&self, seed: HashSeed, scratch: &mut [u32]) -> bool {
        scratch.fill(0);
        let cap = self.cap;
        for &k in &self.hasher.keys {
            let b = self.hasher.reduce(seed, k) as usize;
            scratch[b] += 1;
            if scratch[b] >= cap {
                return false;
            }
        }
        let e_comp = entropy_of_counts(scratch.iter().copied(), self.hasher.domain_size());
        fairness_ratio(self.e_opt, e_comp).satisfies(self.rho)
    }

    pub fn scratch(&self) -> Vec<u32> {
        vec![0; self.hasher.g as usize]
    }
}

fn early_reject_cap(domain_size: usize, g: u32, e_opt: f64, rho: f64) -> u32 {
    let never = domain_size as u32 + 1;
    if rho.is_infinite() {
        return never;
    }
    // Entropy a passing hash must reach, less a margin far above rounding error.
    let needed = e_opt / (rho + RHO_TOLERANCE) - 1e-9;
    let d = domain_size as f64;
    let rest = (g - 1) as f64;
    let first = domain_size.div_ceil(g as usize).max(1);
    (first..=domain_size)
        .find(|&m| {
            let q = m as f64 / d;
            let tail = 1.0 - q;
            let mut bound = -q * q.ln();
            if tail > 0.0 {
                bound -= tail * (tail / rest).ln();
            }
            bound < needed
        })
        .map_or(never, |m| m as u32)
}
