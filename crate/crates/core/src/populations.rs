//! High-ENT / Low-PIS / High-PIS subpopulations.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hashing::{entropy_of_counts, DomainHasher, HashFn};

pub const DEFAULT_FRACTION: f64 = 0.10;

/// A user's hash together with the statistics used to rank it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserRecord {
    pub user_id: usize,
    pub true_value: u32,
    pub hash: HashFn,
    pub e_comp: f64,
    /// Size of the preimage set of the user's own bucket (always >= 1).
    pub preimage_size: usize,
}

impl UserRecord {
    /// `hasher` must cover the domain with the same `g` as `hash`.
    pub fn new(user_id: usize, true_value: u32, hash: HashFn, hasher: &DomainHasher) -> Self {
        let mut counts = vec![0u32; hasher.g() as usize];
        Self::with_scratch(user_id, true_value, hash, hasher, &mut counts)
    }

    pub(crate) fn with_scratch(
        user_id: usize,
        true_value: u32,
        hash: HashFn,
        hasher: &DomainHasher,
        counts: &mut [u32],
    ) -> Self {
        debug_assert_eq!(hash.g, hasher.g());
        hasher.counts_into(hash.seed, counts);
        let own = hasher.bucket(hash.seed, true_value) as usize;
        UserRecord {
            user_id,
            true_value,
            hash,
            e_comp: entropy_of_counts(counts.iter().copied(), hasher.domain_size()),
            preimage_size: counts[own] as usize,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Group {
    HighEnt,
    LowPis,
    HighPis,
    None,
}

impl Group {
    pub const SUBPOPULATIONS: [Group; 3] = [Group::HighEnt, Group::LowPis, Group::HighPis];

    pub fn name(self) -> &'static str {
        match self {
            Group::HighEnt => "HIGH_ENT",
            Group::LowPis => "LOW_PIS",
            Group::HighPis => "HIGH_PIS",
            Group::None => "NONE",
        }
    }
}

impl std::fmt::Display for Group {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Member user ids of each subpopulation, each list ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SubpopulationAssignment {
    pub high_ent: Vec<usize>,
    pub low_pis: Vec<usize>,
    pub high_pis: Vec<usize>,
    pub fraction: f64,
}

impl SubpopulationAssignment {
    pub fn members(&self, group: Group) -> &[usize] {
        match group {
            Group::HighEnt => &self.high_ent,
            Group::LowPis => &self.low_pis,
            Group::HighPis => &self.high_pis,
            Group::None => &[],
        }
    }

    /// Groups containing `user_id`, in `SUBPOPULATIONS` order.
    pub fn groups_of(&self, user_id: usize) -> Vec<Group> {
        Group::SUBPOPULATIONS
            .into_iter()
            .filter(|&g| self.members(g).binary_search(&user_id).is_ok())
            .collect()
    }
}

/// Ranks users into the three subpopulations of size `floor(fraction * |U|)`.
///
/// High-ENT takes the largest entropies (ties: lower user id first).
/// Low-PIS and High-PIS are the two ends of a single order by
/// `(preimage_size, user_id)`, so they stay disjoint whenever
/// `2 * size <= |U|`.
pub fn assign_subpopulations(users: &[UserRecord], fraction: f64) -> Result<SubpopulationAssignment> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let k = (fraction * users.len() as f64).floor() as usize;
    if k == 0 {
        return Err(Error::EmptyPopulation);
    }

    let mut by_entropy: Vec<&UserRecord> = users.iter().collect();
    by_entropy.sort_by(|a, b| b.e_comp.total_cmp(&a.e_comp).then(a.user_id.cmp(&b.user_id)));
    let mut by_preimage: Vec<&UserRecord> = users.iter().collect();
    by_preimage.sort_by_key(|u| (u.preimage_size, u.user_id));

    let ids = |it: &mut dyn Iterator<Item = &&UserRecord>| {
        let mut v: Vec<usize> = it.map(|u| u.user_id).collect();
        v.sort_unstable();
        v
    };
    Ok(SubpopulationAssignment {
        high_ent: ids(&mut by_entropy.iter().take(k)),
        low_pis: ids(&mut by_preimage.iter().take(k)),
        high_pis: ids(&mut by_preimage.iter().rev().take(k)),
        fraction,
    })
}

#[derive(Serialize)]
struct AssignmentRow {
    user_id: usize,
    e_comp: f64,
    preimage_size: usize,
    group: Group,
}

/// `user_id,e_comp,preimage_size,group`; one row per membership, `NONE` for
/// users outside every subpopulation.
pub fn write_assignment_csv<W: Write>(
    out: W,
    users: &[UserRecord],
    assignment: &SubpopulationAssignment,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for u in users {
        let mut groups = assignment.groups_of(u.user_id);
        if groups.is_empty() {
            groups.push(Group::None);
        }
        for group in groups {
            w.serialize(AssignmentRow {
                user_id: u.user_id,
                e_comp: u.e_comp,
                preimage_size: u.preimage_size,
                group,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
