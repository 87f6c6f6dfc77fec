//! Bayesian inference (BIA) and maximal-gain poisoning (MGA) attacks on OLH.

use std::io::Write;

use rand::{Rng, RngCore};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hashing::{DomainHasher, HashFn, HashSeed};
use crate::protocols::{FrequencyTable, Report};

/// The `<hash, perturbed bucket>` pairs an adversary has seen from one user.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationSet {
    g: u32,
    observations: Vec<(HashSeed, u32)>,
}

impl ObservationSet {
    pub fn new(g: u32, observations: Vec<(HashSeed, u32)>) -> Result<Self> {
        if g < 2 {
            return Err(Error::invalid(format!("g must be at least 2, got {g}")));
        }
        if observations.is_empty() {
            return Err(Error::invalid("an observation set needs at least one report"));
        }
        if let Some((_, b)) = observations.iter().find(|(_, b)| *b >= g) {
            return Err(Error::invalid(format!("bucket {b} outside [0, {g})")));
        }
        Ok(ObservationSet { g, observations })
    }

    pub fn from_reports<'a>(g: u32, reports: impl IntoIterator<Item = &'a Report>) -> Result<Self> {
        Self::new(g, reports.into_iter().map(|r| (r.seed, r.perturbed)).collect())
    }

    pub fn g(&self) -> u32 {
        self.g
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn observations(&self) -> &[(HashSeed, u32)] {
        &self.observations
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttackOutcome {
    pub prediction: u32,
    /// Highest score, i.e. the number of observations the prediction explains.
    pub top_score: u32,
    /// Number of values sharing `top_score`.
    pub tie_size: usize,
}

/// Runs the Bayesian inference attack against many users of one domain.
#[derive(Clone, Debug)]
pub struct BiaAttacker {
    hasher: DomainHasher,
}

impl BiaAttacker {
    pub fn new(domain_size: usize, g: u32) -> Self {
        BiaAttacker {
            hasher: DomainHasher::new(domain_size, g),
        }
    }

    /// `score(v)`: observations whose bucket `v` hashes into.
    pub fn scores(&self, obs: &ObservationSet) -> Vec<u32> {
        assert_eq!(obs.g, self.hasher.g(), "observation g differs from attacker g");
        let mut scores = vec![0u32; self.hasher.domain_size()];
        for &(seed, x) in &obs.observations {
            for (s, b) in scores.iter_mut().zip(self.hasher.buckets(seed)) {
                *s += (b == x) as u32;
            }
        }
        scores
    }

    /// Uniformly random member of the argmax set.
    pub fn predict<R: Rng + ?Sized>(&self, obs: &ObservationSet, rng: &mut R) -> AttackOutcome {
        let scores = self.scores(obs);
        let top = scores.iter().copied().max().unwrap_or(0);
        let tie_size = scores.iter().filter(|&&s| s == top).count();
        let pick = rng.random_range(0..tie_size);
        let prediction = scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == top)
            .nth(pick)
            .map(|(v, _)| v as u32)
            .expect("pick is below tie_size");
        AttackOutcome {
            prediction,
            top_score: top,
            tie_size,
        }
    }
}

pub fn bia_predict<R: Rng + ?Sized>(
    obs: &ObservationSet,
    domain_size: usize,
    rng: &mut R,
) -> AttackOutcome {
    BiaAttacker::new(domain_size, obs.g).predict(obs, rng)
}

/// A poisoned report and how many targets its bucket covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CraftedReport {
    pub report: Report,
    pub target_hits: usize,
}

fn check_targets(targets: &[u32], domain_size: Option<usize>) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::invalid("target set must be non-empty"));
    }
    if let Some(d) = domain_size {
        if let Some(t) = targets.iter().find(|&&t| t as usize >= d) {
            return Err(Error::invalid(format!("target {t} outside domain of size {d}")));
        }
    }
    Ok(())
}

/// Largest bucket of `counts` (lowest index on ties).
fn max_bucket(counts: &[u32]) -> (u32, u32) {
    let mut best = (0u32, 0u32);
    for (b, &c) in counts.iter().enumerate() {
        if c > best.1 {
            best = (b as u32, c);
        }
    }
    best
}

/// Maximal gain attack with a caller-supplied hash source.
///
/// Over `kappa` drawn hashes, keeps the first one whose fullest bucket holds
/// strictly more targets than any earlier one, and reports that bucket.
pub fn mga_craft_with<F>(targets: &[u32], kappa: u64, g: u32, mut draw: F) -> Result<CraftedReport>
where
    F: FnMut() -> Result<HashSeed>,
{
    check_targets(targets, None)?;
    if kappa == 0 {
        return Err(Error::invalid("kappa must be at least 1"));
    }
    if g < 2 {
        return Err(Error::invalid(format!("g must be at least 2, got {g}")));
    }
    let hasher = DomainHasher::over_values(targets, g);
    let mut counts = vec![0u32; g as usize];
    let mut best: Option<(HashSeed, u32, u32)> = None;
    for _ in 0..kappa {
        let seed = draw()?;
        hasher.counts_into(seed, &mut counts);
        let (bucket, size) = max_bucket(&counts);
        if best.is_none_or(|(_, _, s)| size > s) {
            best = Some((seed, bucket, size));
        }
    }
    let (seed, perturbed, hits) = best.expect("kappa >= 1");
    Ok(CraftedReport {
        report: Report {
            seed,
            perturbed,
            draws_used: kappa,
        },
        target_hits: hits as usize,
    })
}

/// Maximal gain attack drawing full-family seeds from `rng`.
pub fn mga_craft<R: RngCore + ?Sized>(
    domain_size: usize,
    targets: &[u32],
    kappa: u64,
    g: u32,
    rng: &mut R,
) -> Result<CraftedReport> {
    check_targets(targets, Some(domain_size))?;
    mga_craft_with(targets, kappa, g, || Ok(HashSeed(rng.next_u64())))
}

/// Keeps the attacker's own hash and reports its target-heaviest bucket.
pub fn mga_craft_fixed_hash(hash: HashFn, targets: &[u32]) -> Result<CraftedReport> {
    mga_craft_with(targets, 1, hash.g, || Ok(hash.seed)).map(|mut c| {
        c.report.draws_used = 1;
        c
    })
}

/// `sum over targets of (after - before)`.
pub fn gain(before: &FrequencyTable, after: &FrequencyTable, targets: &[u32]) -> Result<f64> {
    if before.len() != after.len() {
        return Err(Error::LengthMismatch {
            left: before.len(),
            right: after.len(),
        });
    }
    Ok(targets
        .iter()
        .map(|&t| after[t as usize] - before[t as usize])
        .sum())
}

#[derive(Debug, Serialize)]
pub struct BiaUserRow {
    pub user_id: usize,
    pub true_value: u32,
    pub predicted_value: u32,
    pub top_score: u32,
    pub tie_size: usize,
}

#[derive(Debug, Serialize)]
pub struct MgaUserRow {
    pub user_id: usize,
    pub seed: u64,
    pub perturbed: u32,
    pub target_hits: usize,
}

pub fn write_bia_rows<W: Write>(out: W, rows: &[BiaUserRow]) -> Result<()> {
    write_rows(out, rows)
}

pub fn write_mga_rows<W: Write>(out: W, rows: &[MgaUserRow]) -> Result<()> {
    write_rows(out, rows)
}

fn write_rows<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
