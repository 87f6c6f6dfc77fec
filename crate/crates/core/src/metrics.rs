//! Attack success, utility loss and preimage-size statistics.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::hashing::DomainHasher;
use crate::populations::UserRecord;
use crate::protocols::{Encoder, FrequencyTable, HashFamily, ProtocolParams, DEFAULT_MAX_DRAWS};
use crate::seeding::{purpose, user_rng};

pub const DEFAULT_ADVISOR_USERS: usize = 10_000;
pub const DEFAULT_RHO_CANDIDATES: [f64; 6] = [1.0, 1.01, 1.02, 1.03, 1.04, 1.05];

/// Fraction of users whose value was predicted exactly.
pub fn asr(predictions: &[u32], truths: &[u32]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: truths.len() });
    }
    if truths.is_empty() {
        return Err(Error::invalid("asr of an empty population"));
    }
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truths.len() as f64)
}

/// l1 distance between two frequency tables; negative estimates are kept as is.
pub fn uloss(f_est: &FrequencyTable, f_true: &FrequencyTable) -> Result<f64> {
    l1(f_est.values(), f_true.values())
}

pub fn l1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PreimageStats {
    pub p_min: usize,
    pub p_max: usize,
    pub p_avg: f64,
    pub theoretical_min: usize,
    pub theoretical_max: usize,
    pub theoretical_avg: f64,
}

impl PreimageStats {
    pub fn from_sizes(sizes: impl IntoIterator<Item = usize>, domain_size: usize, g: u32) -> Result<Self> {
        let (mut lo, mut hi, mut sum, mut n) = (usize::MAX, 0usize, 0u64, 0u64);
        for s in sizes {
            lo = lo.min(s);
            hi = hi.max(s);
            sum += s as u64;
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyPopulation);
        }
        Ok(PreimageStats {
            p_min: lo,
            p_max: hi,
            p_avg: sum as f64 / n as f64,
            theoretical_min: 1,
            theoretical_max: domain_size,
            theoretical_avg: domain_size as f64 / g as f64,
        })
    }
}

pub fn preimage_stats(users: &[UserRecord], domain_size: usize, g: u32) -> Result<PreimageStats> {
    PreimageStats::from_sizes(users.iter().map(|u| u.preimage_size), domain_size, g)
}

/// Where the advisor's simulated users take their true values from.
#[derive(Clone, Copy, Debug)]
pub enum AdvisorValues<'a> {
    Uniform,
    /// Values resampled uniformly from a dataset's users.
    Dataset(&'a Dataset),
}

#[derive(Clone, Copy, Debug)]
pub struct AdvisorOptions<'a> {
    pub sample_users: usize,
    pub values: AdvisorValues<'a>,
    pub family: HashFamily,
    pub max_draws: u64,
    pub g: Option<u32>,
    pub master_seed: u64,
}

impl Default for AdvisorOptions<'_> {
    fn default() -> Self {
        AdvisorOptions {
            sample_users: DEFAULT_ADVISOR_USERS,
            values: AdvisorValues::Uniform,
            family: HashFamily::Full,
            max_draws: DEFAULT_MAX_DRAWS,
            g: None,
            master_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdvisorRow {
    /// `None` is the plain OLH baseline.
    pub rho: Option<f64>,
    pub stats: Option<PreimageStats>,
    pub mean_draws: Option<f64>,
    pub infeasible: bool,
    /// Why the row has no statistics.
    pub failure: Option<String>,
}

/// Simulates hash selection for each candidate and the OLH baseline (first
/// row). Each simulated user keeps its true value and random stream across
/// rows. A candidate that cannot be met yields an `infeasible` row.
pub fn rho_advisor(
    domain_size: usize,
    epsilon: f64,
    rho_candidates: &[f64],
    opts: &AdvisorOptions<'_>,
) -> Result<Vec<AdvisorRow>> {
    if opts.sample_users < 100 {
        return Err(Error::invalid(format!("sample_users must be >= 100, got {}", opts.sample_users)));
    }
    if let Some(r) = rho_candidates.iter().find(|r| !(**r >= 1.0)) {
        return Err(Error::invalid(format!("rho candidates must be >= 1, got {r}")));
    }
    if let AdvisorValues::Dataset(ds) = opts.values {
        if ds.domain_size() != domain_size {
            return Err(Error::LengthMismatch { left: ds.domain_size(), right: domain_size });
        }
    }
    let mut base = ProtocolParams::olh(epsilon)?.with_max_draws(opts.max_draws)?.with_family(opts.family)?;
    if let Some(g) = opts.g {
        base = base.with_g(g)?;
    }
    let hasher = DomainHasher::new(domain_size, base.g);

    std::iter::once(None)
        .chain(rho_candidates.iter().map(|&r| Some(r)))
        .map(|rho| {
            let params = ProtocolParams { rho, ..base };
            let encoder = match Encoder::new(params, domain_size) {
                Ok(e) => e,
                Err(e) if e.is_sweep_point_failure() => return Ok(failed_row(rho, &e)),
                Err(e) => return Err(e),
            };
            let draws: Result<Vec<(usize, u64)>> = (0..opts.sample_users)
                .into_par_iter()
                .map(|u| {
                    let mut rng = user_rng(opts.master_seed, 0, u as u64, purpose::ADVISOR);
                    let v = match opts.values {
                        AdvisorValues::Uniform => rng.random_range(0..domain_size as u32),
                        AdvisorValues::Dataset(ds) => ds.values()[rng.random_range(0..ds.n_users())],
                    };
                    let (seed, used) = encoder.draw_hash(&mut rng)?;
                    Ok((hasher.preimage_size(seed, v), used))
                })
                .collect();
            let draws = match draws {
                Ok(d) => d,
                Err(e) if e.is_sweep_point_failure() => return Ok(failed_row(rho, &e)),
                Err(e) => return Err(e),
            };
            let stats = PreimageStats::from_sizes(draws.iter().map(|d| d.0), domain_size, base.g)?;
            let mean_draws = draws.iter().map(|d| d.1 as f64).sum::<f64>() / draws.len() as f64;
            Ok(AdvisorRow { rho, stats: Some(stats), mean_draws: Some(mean_draws), infeasible: false, failure: None })
        })
        .collect()
}

fn failed_row(rho: Option<f64>, err: &Error) -> AdvisorRow {
    AdvisorRow { rho, stats: None, mean_draws: None, infeasible: true, failure: Some(err.to_string()) }
}

#[derive(Serialize)]
struct AdvisorCsvRow {
    rho: String,
    p_min: Option<usize>,
    p_max: Option<usize>,
    p_avg: Option<f64>,
    theoretical_avg: f64,
    mean_draws: Option<f64>,
    infeasible: bool,
}

/// `rho,p_min,p_max,p_avg,theoretical_avg,mean_draws,infeasible`; the
/// baseline's `rho` is `OLH`.
pub fn write_advisor_csv<W: Write>(out: W, rows: &[AdvisorRow], domain_size: usize, g: u32) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(AdvisorCsvRow {
            rho: r.rho.map_or_else(|| "OLH".to_string(), |x| x.to_string()),
            p_min: r.stats.map(|s| s.p_min),
            p_max: r.stats.map(|s| s.p_max),
            p_avg: r.stats.map(|s| s.p_avg),
            theoretical_avg: domain_size as f64 / g as f64,
            mean_draws: r.mean_draws,
            infeasible: r.infeasible,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hashing::{HashFn, HashSeed};
    use crate::seeding::UserRng;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn asr_examples() {
        let truths: Vec<u32> = (0..10).collect();
        let mut preds = vec![99; 10];
        preds[..3].copy_from_slice(&[0, 1, 2]);
        assert!((asr(&preds, &truths).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(asr(&truths, &truths).unwrap(), 1.0);
        assert!(matches!(asr(&preds[..4], &truths), Err(Error::LengthMismatch { left: 4, right: 10 })));
    }

    #[test]
    fn asr_random_guessing() {
        let mut rng = UserRng::seed_from_u64(11);
        let n = 100_000;
        let truths: Vec<u32> = (0..n).map(|_| rng.random_range(0..100)).collect();
        let preds: Vec<u32> = (0..n).map(|_| rng.random_range(0..100)).collect();
        let a = asr(&preds, &truths).unwrap();
        assert!((a - 0.01).abs() < 0.002, "{a}");
    }

    #[test]
    fn uloss_examples() {
        let a = FrequencyTable(vec![0.5, 0.5]);
        assert_eq!(uloss(&a, &a).unwrap(), 0.0);
        let b = FrequencyTable(vec![0.7, 0.3]);
        assert!((uloss(&a, &b).unwrap() - 0.4).abs() < 1e-15);
        let neg = FrequencyTable(vec![-0.1, 1.1]);
        assert!((uloss(&neg, &FrequencyTable(vec![0.0, 1.0])).unwrap() - 0.2).abs() < 1e-15);
        assert!(uloss(&a, &FrequencyTable(vec![1.0])).is_err());
    }

    #[test]
    fn theoretical_triples() {
        let s = PreimageStats::from_sizes([3, 20], 100, 8).unwrap();
        assert_eq!(s.theoretical_avg, 12.5);
        assert_eq!((s.theoretical_min, s.theoretical_max), (1, 100));
        let s = PreimageStats::from_sizes([16], 128, 8).unwrap();
        assert_eq!(s.theoretical_avg, 16.0);
        assert!(PreimageStats::from_sizes([], 10, 2).is_err());
    }

    #[test]
    fn bijective_hash_single_user() {
        // Find a seed that maps {0..4} onto 4 distinct buckets.
        let hasher = DomainHasher::new(4, 4);
        let seed = (0..).map(HashSeed).find(|&s| hasher.entropy(s).counts.iter().all(|&c| c == 1)).unwrap();
        let user = UserRecord::new(0, 2, HashFn::new(seed, 4), &hasher);
        let s = preimage_stats(&[user], 4, 4).unwrap();
        assert_eq!((s.p_min, s.p_max, s.p_avg), (1, 1, 1.0));
    }

    #[test]
    fn advisor_rejects_bad_input() {
        let small = AdvisorOptions { sample_users: 50, ..Default::default() };
        assert!(rho_advisor(100, 2.0, &[1.01], &small).is_err());
        assert!(rho_advisor(100, 2.0, &[0.9], &AdvisorOptions::default()).is_err());
    }

    #[test]
    fn advisor_marks_infeasible_rows() {
        let opts = AdvisorOptions { sample_users: 200, ..Default::default() };
        let rows = rho_advisor(100, 2.0, &[1.0, 1.05], &opts).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].rho, None);
        assert!(rows[1].infeasible && rows[1].stats.is_none());
        assert!(!rows[2].infeasible);
        let mut buf = Vec::new();
        write_advisor_csv(&mut buf, &rows, 100, 8).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "rho,p_min,p_max,p_avg,theoretical_avg,mean_draws,infeasible");
        assert!(lines[1].starts_with("OLH,"));
        assert_eq!(lines[2], "1,,,,12.5,,true");
    }

    #[test]
    fn advisor_infinite_rho_matches_olh() {
        let opts = AdvisorOptions { sample_users: 2000, master_seed: 5, ..Default::default() };
        let rows = rho_advisor(100, 2.0, &[f64::INFINITY], &opts).unwrap();
        assert_eq!(rows[0].stats, rows[1].stats);
        assert_eq!(rows[1].mean_draws, Some(1.0));
    }

    #[test]
    fn advisor_spread_shrinks() {
        let opts = AdvisorOptions { master_seed: 17, ..Default::default() };
        let rows = rho_advisor(100, 2.0, &[1.01, 1.05], &opts).unwrap();
        let spread = |r: &AdvisorRow| r.stats.map(|s| s.p_max - s.p_min).unwrap();
        assert!(spread(&rows[1]) < spread(&rows[0]));
        assert!(spread(&rows[1]) <= spread(&rows[2]));
        assert!(rows[1].mean_draws.unwrap() > rows[2].mean_draws.unwrap());
    }

    #[test]
    fn advisor_exact_uniform_row() {
        let opts = AdvisorOptions {
            sample_users: 500,
            family: HashFamily::Finite { size: 1 << 24 },
            max_draws: 1 << 40,
            master_seed: 3,
            ..Default::default()
        };
        let rows = rho_advisor(128, 2.0, &[1.0], &opts).unwrap();
        let s = rows[1].stats.unwrap();
        assert_eq!((s.p_min, s.p_max), (16, 16));
        assert_eq!(s.p_avg, 16.0);
    }

    #[test]
    fn advisor_dataset_mode() {
        let ds = Dataset::new(100, vec![7; 10]).unwrap();
        let opts = AdvisorOptions { sample_users: 100, values: AdvisorValues::Dataset(&ds), ..Default::default() };
        let rows = rho_advisor(100, 2.0, &[1.05], &opts).unwrap();
        assert!(rows.iter().all(|r| !r.infeasible));
        assert!(rho_advisor(50, 2.0, &[1.05], &opts).is_err());
    }

    fn table() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, 5)
    }

    proptest! {
        #[test]
        fn uloss_is_a_metric(a in table(), b in table(), c in table()) {
            let (ta, tb, tc) = (FrequencyTable(a.clone()), FrequencyTable(b), FrequencyTable(c));
            let ab = uloss(&ta, &tb).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, uloss(&tb, &ta).unwrap());
            prop_assert_eq!(uloss(&ta, &ta).unwrap(), 0.0);
            prop_assert!(uloss(&ta, &tc).unwrap() <= ab + uloss(&tb, &tc).unwrap() + 1e-12);
        }

        #[test]
        fn stats_within_theoretical_bounds(seeds in prop::collection::vec(any::<u64>(), 1..40), d in 2usize..200, g in 2u32..12) {
            let hasher = DomainHasher::new(d, g);
            let users: Vec<UserRecord> = seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| UserRecord::new(i, (s % d as u64) as u32, HashFn::new(s, g), &hasher))
                .collect();
            let st = preimage_stats(&users, d, g).unwrap();
            prop_assert!(st.theoretical_min <= st.p_min);
            prop_assert!(st.p_min as f64 <= st.p_avg && st.p_avg <= st.p_max as f64);
            prop_assert!(st.p_max <= st.theoretical_max);
        }
    }
}
