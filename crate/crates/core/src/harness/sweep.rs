//! Shared pieces of every sweep: datasets per repetition, protocol
//! parameters per point, and one simulated collection round.

use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::{gen_gaussian, gen_uniform, ingest_csv, read_canonical, Dataset};
use crate::error::{Error, Result};
use crate::hashing::{DomainHasher, HashFn};
use crate::populations::{assign_subpopulations, SubpopulationAssignment, UserRecord};
use crate::protocols::{Encoder, ProtocolParams, Report};
use crate::seeding::{global_rng, purpose, stream_seed, user_rng};

use super::config::{DatasetKind, ExperimentConfig, Protocol};

/// Datasets indexed by repetition: one per repetition when generated, a
/// single shared one when read from disk.
pub(crate) struct DataSource {
    datasets: Vec<Dataset>,
    pub(crate) seeds: Vec<Option<u64>>,
}

impl DataSource {
    pub(crate) fn load(cfg: &ExperimentConfig, domain_size: Option<usize>) -> Result<Self> {
        let d = domain_size.unwrap_or(cfg.domain_size);
        match cfg.dataset {
            DatasetKind::Gaussian | DatasetKind::Uniform => {
                let mut datasets = Vec::with_capacity(cfg.repetitions);
                let mut seeds = Vec::with_capacity(cfg.repetitions);
                for rep in 0..cfg.repetitions as u64 {
                    seeds.push(Some(stream_seed(cfg.master_seed, rep, u64::MAX, purpose::DATASET)));
                    let mut rng = global_rng(cfg.master_seed, rep, purpose::DATASET);
                    datasets.push(match cfg.dataset {
                        DatasetKind::Gaussian => gen_gaussian(cfg.mu, cfg.sigma, cfg.n_users, d, &mut rng)?,
                        _ => gen_uniform(cfg.n_users, d, &mut rng)?,
                    });
                }
                Ok(DataSource { datasets, seeds })
            }
            DatasetKind::File => {
                let path = cfg.dataset_path.as_ref().expect("validated");
                Ok(DataSource { datasets: vec![read_canonical(path)?], seeds: vec![None] })
            }
            DatasetKind::Ingest => {
                let path = cfg.dataset_path.as_ref().expect("validated");
                let opts = cfg.ingest.as_ref().expect("validated");
                Ok(DataSource { datasets: vec![ingest_csv(path, opts)?], seeds: vec![None] })
            }
        }
    }

    pub(crate) fn get(&self, rep: usize) -> &Dataset {
        &self.datasets[rep % self.datasets.len()]
    }

    pub(crate) fn domain_size(&self) -> usize {
        self.datasets[0].domain_size()
    }

    pub(crate) fn all(&self) -> &[Dataset] {
        &self.datasets
    }
}

/// One `(epsilon, rho)` cell of a sweep; `rho = None` is plain OLH.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub rho: Option<f64>,
}

impl SweepPoint {
    pub fn protocol(&self) -> Protocol {
        if self.rho.is_some() {
            Protocol::Folh
        } else {
            Protocol::Olh
        }
    }
}

/// The sweep's points in emission order: epsilon outermost, the OLH
/// baseline (if any) before the rho list.
pub(crate) fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for &epsilon in &cfg.epsilons {
        if cfg.protocol() == Protocol::Olh {
            out.push(SweepPoint { epsilon, rho: None });
            continue;
        }
        if cfg.olh_baseline() {
            out.push(SweepPoint { epsilon, rho: None });
        }
        out.extend(cfg.rhos.iter().map(|&r| SweepPoint { epsilon, rho: Some(r) }));
    }
    out
}

pub(crate) fn params_for(cfg: &ExperimentConfig, epsilon: f64, rho: Option<f64>) -> Result<ProtocolParams> {
    let mut p = ProtocolParams::olh(epsilon)?.with_max_draws(cfg.max_draws)?.with_family(cfg.family())?;
    if let Some(g) = cfg.g {
        p = p.with_g(g)?;
    }
    p.rho = rho;
    p.validate()?;
    Ok(p)
}

/// Short machine-readable status for a failed sweep point.
pub(crate) fn status_of(e: &Error) -> &'static str {
    match e {
        Error::InfeasibleRho { .. } => "infeasible_rho",
        Error::DrawBudgetExceeded { .. } => "draw_budget_exceeded",
        _ => "error",
    }
}

pub(crate) const OK: &str = "ok";

/// One collection round: every user's report and hash statistics, plus the
/// subpopulations they induce.
pub(crate) struct Population {
    pub reports: Vec<Report>,
    pub records: Vec<UserRecord>,
    pub assignment: SubpopulationAssignment,
}

pub(crate) fn simulate(
    encoder: &Encoder,
    hasher: &DomainHasher,
    dataset: &Dataset,
    master_seed: u64,
    rep: usize,
    fraction: f64,
) -> Result<Population> {
    let g = encoder.params().g;
    let reports: Vec<Report> = dataset
        .values()
        .par_iter()
        .enumerate()
        .map(|(u, &v)| {
            let mut rng = user_rng(master_seed, rep as u64, u as u64, purpose::REPORT);
            encoder.report(v, &mut rng)
        })
        .collect::<Result<_>>()?;
    let records: Vec<UserRecord> = reports
        .par_iter()
        .zip(dataset.values().par_iter())
        .enumerate()
        .map_init(
            || vec![0u32; g as usize],
            |scratch, (u, (r, &v))| UserRecord::with_scratch(u, v, HashFn::new(r.seed, g), hasher, scratch),
        )
        .collect();
    let assignment = assign_subpopulations(&records, fraction)?;
    Ok(Population { reports, records, assignment })
}

pub(crate) fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for x in xs {
        sum += x;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}
