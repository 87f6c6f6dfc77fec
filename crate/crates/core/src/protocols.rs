//! User-side OLH / Fair-OLH encoding and server-side frequency estimation.

use std::io::{Read, Write};

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{DomainHasher, FairnessGate, HashFn, HashSeed};

pub const DEFAULT_MAX_DRAWS: u64 = 1_000_000;

/// `g = max(2, round(e^epsilon) + 1)`, rounding half up.
pub fn derive_g(epsilon: f64) -> u32 {
    let e = epsilon.exp();
    if !e.is_finite() || e >= u32::MAX as f64 {
        return u32::MAX;
    }
    ((e + 0.5).floor() as u32 + 1).max(2)
}

/// The set of seeds a user may draw from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum HashFamily {
    /// Every 64-bit seed.
    #[default]
    Full,
    /// Seeds `0..size`, drawn uniformly.
    Finite { size: u64 },
}

impl HashFamily {
    #[inline]
    pub fn draw<R: RngCore + ?Sized>(&self, rng: &mut R) -> HashSeed {
        match *self {
            HashFamily::Full => HashSeed(rng.next_u64()),
            HashFamily::Finite { size } => HashSeed(rng.random_range(0..size)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub epsilon: f64,
    pub g: u32,
    /// Fairness threshold; `None` means plain OLH.
    pub rho: Option<f64>,
    /// Cap on F-OLH hash draws per user.
    pub max_draws: u64,
    pub family: HashFamily,
}

impl ProtocolParams {
    pub fn olh(epsilon: f64) -> Result<Self> {
        let p = ProtocolParams {
            epsilon,
            g: derive_g(epsilon),
            rho: None,
            max_draws: DEFAULT_MAX_DRAWS,
            family: HashFamily::Full,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn folh(epsilon: f64, rho: f64) -> Result<Self> {
        let p = ProtocolParams {
            rho: Some(rho),
            ..Self::olh(epsilon)?
        };
        p.validate()?;
        Ok(p)
    }

    /// Overrides the derived output-space size.
    pub fn with_g(mut self, g: u32) -> Result<Self> {
        self.g = g;
        self.validate()?;
        Ok(self)
    }

    pub fn with_max_draws(mut self, max_draws: u64) -> Result<Self> {
        self.max_draws = max_draws;
        self.validate()?;
        Ok(self)
    }

    pub fn with_family(mut self, family: HashFamily) -> Result<Self> {
        self.family = family;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.g < 2 {
            return Err(Error::invalid(format!("g must be at least 2, got {}", self.g)));
        }
        if let Some(rho) = self.rho {
            if rho.is_nan() || rho < 1.0 {
                return Err(Error::invalid(format!("rho must be >= 1, got {rho}")));
            }
        }
        if self.max_draws == 0 {
            return Err(Error::invalid("max_draws must be positive"));
        }
        if self.family == (HashFamily::Finite { size: 0 }) {
            return Err(Error::invalid("finite hash family must be non-empty"));
        }
        Ok(())
    }

    /// Probability of reporting the true bucket: `e^eps / (e^eps + g - 1)`.
    pub fn keep_probability(&self) -> f64 {
        let x = (-self.epsilon).exp();
        1.0 / (1.0 + (self.g - 1) as f64 * x)
    }

    /// Probability of reporting one particular other bucket: `1 / (e^eps + g - 1)`.
    pub fn other_probability(&self) -> f64 {
        let x = (-self.epsilon).exp();
        x / (1.0 + (self.g - 1) as f64 * x)
    }
}

/// One user's `<hash seed, perturbed bucket>` report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub seed: HashSeed,
    pub perturbed: u32,
    /// Hash draws spent selecting `seed`; always 1 for OLH.
    pub draws_used: u64,
}

impl Report {
    pub fn hash_fn(&self, g: u32) -> HashFn {
        HashFn::new(self.seed, g)
    }
}

/// Per-item frequencies over the domain. Estimates are kept raw: they may be
/// negative or exceed 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencyTable(pub Vec<f64>);

impl FrequencyTable {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl std::ops::Index<usize> for FrequencyTable {
    type Output = f64;

    fn index(&self, v: usize) -> &f64 {
        &self.0[v]
    }
}

/// Randomized response over `[0, g)` around the true bucket `x`.
#[inline]
pub fn perturb<R: Rng + ?Sized>(x: u32, params: &ProtocolParams, rng: &mut R) -> u32 {
    if rng.random::<f64>() < params.keep_probability() {
        x
    } else {
        let other = rng.random_range(0..params.g - 1);
        if other >= x {
            other + 1
        } else {
            other
        }
    }
}

/// How an F-OLH encoder obtains a compliant hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRoute {
    /// One draw, no fairness check (plain OLH).
    Single,
    /// Draw, test, repeat.
    Rejection,
    /// Uniform pick from the precomputed compliant members of a finite
    /// family, with a geometric draw count. Same joint law as `Rejection`.
    Indexed,
}

/// Seeds probed before deciding whether a finite family is worth indexing.
const INDEX_PROBE: u64 = 4096;
/// Build the index when fewer than this many probe seeds pass.
const INDEX_PROBE_MIN_HITS: usize = 4;

#[derive(Clone, Debug)]
enum Selection {
    Olh,
    Rejection(FairnessGate),
    Indexed {
        compliant: Vec<HashSeed>,
        family_size: u64,
    },
}

/// Per-protocol user-side encoder, built once and shared across users.
#[derive(Clone, Debug)]
pub struct Encoder {
    params: ProtocolParams,
    domain_size: usize,
    selection: Selection,
}

impl Encoder {
    /// OLH when `params.rho` is `None`, otherwise F-OLH. For a finite family
    /// with a low acceptance rate the compliant members are indexed up front.
    pub fn new(params: ProtocolParams, domain_size: usize) -> Result<Self> {
        let route = match (params.rho, params.family) {
            (None, _) => SelectionRoute::Single,
            (Some(rho), HashFamily::Finite { size }) => {
                let gate = FairnessGate::new(domain_size, params.g, rho)?;
                let mut scratch = gate.scratch();
                let probe = size.min(INDEX_PROBE);
                let hits = (0..probe)
                    .filter(|&s| gate.accepts(HashSeed(s), &mut scratch))
                    .count();
                if size <= INDEX_PROBE || hits < INDEX_PROBE_MIN_HITS {
                    SelectionRoute::Indexed
                } else {
                    SelectionRoute::Rejection
                }
            }
            (Some(_), HashFamily::Full) => SelectionRoute::Rejection,
        };
        Self::with_route(params, domain_size, route)
    }

    pub fn with_route(
        params: ProtocolParams,
        domain_size: usize,
        route: SelectionRoute,
    ) -> Result<Self> {
        params.validate()?;
        if domain_size == 0 {
            return Err(Error::invalid("domain must be non-empty"));
        }
        let selection = match (route, params.rho) {
            (SelectionRoute::Single, None) => Selection::Olh,
            (SelectionRoute::Rejection, Some(rho)) => {
                Selection::Rejection(FairnessGate::new(domain_size, params.g, rho)?)
            }
            (SelectionRoute::Indexed, Some(rho)) => {
                let HashFamily::Finite { size } = params.family else {
                    return Err(Error::invalid("indexed selection needs a finite hash family"));
                };
                let gate = FairnessGate::new(domain_size, params.g, rho)?;
                Selection::Indexed {
                    compliant: compliant_seeds(&gate, size),
                    family_size: size,
                }
            }
            (route, rho) => {
                return Err(Error::invalid(format!(
                    "route {route:?} does not apply to rho = {rho:?}"
                )))
            }
        };
        Ok(Encoder {
            params,
            domain_size,
            selection,
        })
    }

    pub fn params(&self) -> &ProtocolParams {
        &self.params
    }

    pub fn domain_size(&self) -> usize {
        self.domain_size
    }

    pub fn route(&self) -> SelectionRoute {
        match self.selection {
            Selection::Olh => SelectionRoute::Single,
            Selection::Rejection(_) => SelectionRoute::Rejection,
            Selection::Indexed { .. } => SelectionRoute::Indexed,
        }
    }

    /// Number of compliant seeds when the family is indexed.
    pub fn indexed_members(&self) -> Option<usize> {
        match &self.selection {
            Selection::Indexed { compliant, .. } => Some(compliant.len()),
            _ => None,
        }
    }

    /// Selects this user's hash; returns the seed and the number of draws spent.
    pub fn draw_hash<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(HashSeed, u64)> {
        let max_draws = self.params.max_draws;
        match &self.selection {
            Selection::Olh => Ok((self.params.family.draw(rng), 1)),
            Selection::Rejection(gate) => {
                let mut scratch = gate.scratch();
                for draw in 1..=max_draws {
                    let seed = self.params.family.draw(rng);
                    if gate.accepts(seed, &mut scratch) {
                        return Ok((seed, draw));
                    }
                }
                Err(Error::DrawBudgetExceeded { max_draws })
            }
            Selection::Indexed {
                compliant,
                family_size,
            } => {
                if compliant.is_empty() {
                    return Err(Error::DrawBudgetExceeded { max_draws });
                }
                let seed = compliant[rng.random_range(0..compliant.len())];
                let accept = compliant.len() as f64 / *family_size as f64;
                let draws = geometric_draws(accept, rng);
                if draws > max_draws {
                    return Err(Error::DrawBudgetExceeded { max_draws });
                }
                Ok((seed, draws))
            }
        }
    }

    pub fn report<R: Rng + ?Sized>(&self, v: u32, rng: &mut R) -> Result<Report> {
        debug_assert!((v as usize) < self.domain_size);
        let (seed, draws_used) = self.draw_hash(rng)?;
        let x = HashFn::new(seed, self.params.g).bucket(v);
        Ok(Report {
            seed,
            perturbed: perturb(x, &self.params, rng),
            draws_used,
        })
    }
}

/// Trials up to and including the first success, `P(success) = accept`.
fn geometric_draws<R: Rng + ?Sized>(accept: f64, rng: &mut R) -> u64 {
    if accept >= 1.0 {
        return 1;
    }
    let u = 1.0 - rng.random::<f64>(); // (0, 1]
    let extra = (u.ln() / (1.0 - accept).ln()).floor();
    if extra >= u64::MAX as f64 - 1.0 {
        u64::MAX
    } else {
        1 + extra as u64
    }
}

/// Every seed in `0..family_size` that passes the gate, ascending.
fn compliant_seeds(gate: &FairnessGate, family_size: u64) -> Vec<HashSeed> {
    const CHUNK: u64 = 1 << 16;
    let chunks = family_size.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut scratch = gate.scratch();
            let end = ((c + 1) * CHUNK).min(family_size);
            (c * CHUNK..end)
                .filter(move |&s| gate.accepts(HashSeed(s), &mut scratch))
                .map(HashSeed)
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Plain OLH report for a user holding `v`.
pub fn olh_report<R: Rng + ?Sized>(params: &ProtocolParams, v: u32, rng: &mut R) -> Report {
    let seed = params.family.draw(rng);
    let x = HashFn::new(seed, params.g).bucket(v);
    Report {
        seed,
        perturbed: perturb(x, params, rng),
        draws_used: 1,
    }
}

/// Fair-OLH report: redraw the hash until its fairness ratio is within `rho`.
///
/// Builds a one-off [`Encoder`]; reuse an encoder when reporting for many users.
pub fn folh_report<R: Rng + ?Sized>(
    params: &ProtocolParams,
    v: u32,
    domain_size: usize,
    rng: &mut R,
) -> Result<Report> {
    if params.rho.is_none() {
        return Err(Error::invalid("F-OLH requires rho"));
    }
    Encoder::with_route(*params, domain_size, SelectionRoute::Rejection)?.report(v, rng)
}

/// `Sup(v)`: reports whose perturbed bucket equals the reporter's hash of `v`.
pub fn support_count(reports: &[Report], v: u32, g: u32) -> usize {
    reports
        .iter()
        .filter(|r| r.hash_fn(g).bucket(v) == r.perturbed)
        .count()
}

/// Adds the supports one report contributes to every item.
#[inline]
pub fn add_support(hasher: &DomainHasher, report: &Report, support: &mut [i64], sign: i64) {
    for (v, b) in hasher.buckets(report.seed).enumerate() {
        if b == report.perturbed {
            support[v] += sign;
        }
    }
}

/// `Sup(v)` for every item in one pass over the reports.
pub fn support_counts(reports: &[Report], domain_size: usize, g: u32) -> Vec<i64> {
    let hasher = DomainHasher::new(domain_size, g);
    reports
        .par_chunks(4096)
        .fold(
            || vec![0i64; domain_size],
            |mut acc, chunk| {
                for r in chunk {
                    add_support(&hasher, r, &mut acc, 1);
                }
                acc
            },
        )
        .reduce(
            || vec![0i64; domain_size],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Unbiased OLH estimate from a support count:
/// `(e^eps + g - 1)(g Sup - n) / ((e^eps - 1)(g - 1) n)`.
pub fn estimate_from_support(support: f64, n_users: usize, params: &ProtocolParams) -> f64 {
    let g = params.g as f64;
    let n = n_users as f64;
    // (e + g - 1)/(e - 1) written in e^-eps so that eps = inf stays finite
    let x = (-params.epsilon).exp();
    let scale = (1.0 + (g - 1.0) * x) / (1.0 - x);
    scale * (g * support - n) / ((g - 1.0) * n)
}

/// Estimated frequency of `v`. `reports` must be non-empty.
pub fn estimate_frequency(reports: &[Report], v: u32, params: &ProtocolParams) -> f64 {
    let sup = support_count(reports, v, params.g);
    estimate_from_support(sup as f64, reports.len(), params)
}

pub fn estimate_all(
    reports: &[Report],
    domain_size: usize,
    params: &ProtocolParams,
) -> FrequencyTable {
    let sup = support_counts(reports, domain_size, params.g);
    estimates_from_supports(&sup, reports.len(), params)
}

pub fn estimates_from_supports(
    support: &[i64],
    n_users: usize,
    params: &ProtocolParams,
) -> FrequencyTable {
    FrequencyTable(
        support
            .iter()
            .map(|&s| estimate_from_support(s as f64, n_users, params))
            .collect(),
    )
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow {
    user_id: usize,
    seed: u64,
    perturbed: u32,
    draws_used: u64,
}

/// `user_id,seed,perturbed,draws_used`; `user_id` is the position in `reports`.
pub fn write_reports_csv<W: Write>(out: W, reports: &[Report]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (user_id, r) in reports.iter().enumerate() {
        w.serialize(ReportRow {
            user_id,
            seed: r.seed.0,
            perturbed: r.perturbed,
            draws_used: r.draws_used,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads reports back, ordered by `user_id`.
pub fn read_reports_csv<R: Read>(input: R) -> Result<Vec<Report>> {
    let mut rows: Vec<ReportRow> = csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<_, _>>()?;
    rows.sort_by_key(|r| r.user_id);
    Ok(rows
        .into_iter()
        .map(|r| Report {
            seed: HashSeed(r.seed),
            perturbed: r.perturbed,
            draws_used: r.draws_used,
        })
        .collect())
}
