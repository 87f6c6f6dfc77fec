//! User-side encoding cost and the preimage-size advisor sweep.

use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::metrics::{rho_advisor, AdvisorOptions, AdvisorValues};
use crate::protocols::{estimates_from_supports, support_counts, Report};
use crate::seeding::{purpose, user_rng};

use super::config::{AdvisorSource, ExperimentConfig, Protocol};
use super::experiments::MEAN;
use super::manifest::PointRecord;
use super::sweep::{mean, params_for, status_of, DataSource, SweepPoint, OK};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TimingRow {
    pub epsilon: f64,
    pub domain_size: usize,
    pub protocol: Protocol,
    pub rho: Option<f64>,
    pub repetition: String,
    pub n_reps: usize,
    pub n_users: usize,
    /// Sequential wall-clock time for every user to select a hash and report.
    pub total_user_seconds: Option<f64>,
    pub per_user_ms: Option<f64>,
    /// Support counting and estimation over all reports.
    pub server_seconds: Option<f64>,
    pub mean_draws: Option<f64>,
    pub status: String,
}

fn domain_sizes(cfg: &ExperimentConfig, data: &DataSource) -> Vec<usize> {
    cfg.domain_sizes.clone().unwrap_or_else(|| vec![data.domain_size()])
}

/// Runs on a single worker so that the protocols are timed under equal conditions.
pub(crate) fn run_timing(cfg: &ExperimentConfig, base: &DataSource, records: &mut Vec<PointRecord>) -> Result<Vec<TimingRow>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| crate::error::Error::Config(e.to_string()))?;
    pool.install(|| timing_sweep(cfg, base, records))
}

fn timing_sweep(cfg: &ExperimentConfig, base: &DataSource, records: &mut Vec<PointRecord>) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for d in domain_sizes(cfg, base) {
        let loaded;
        let data = if cfg.domain_sizes.is_some() {
            loaded = DataSource::load(cfg, Some(d))?;
            &loaded
        } else {
            base
        };
        for &epsilon in &cfg.epsilons {
            let points = std::iter::once(None)
                .chain(cfg.rhos.iter().map(|&r| Some(r)))
                .map(|rho| SweepPoint { epsilon, rho });
            for point in points {
                let started = Instant::now();
                let params = params_for(cfg, epsilon, point.rho)?;
                let mut rec = PointRecord::new(point, params.g);
                rec.domain_size = Some(d);
                let template = TimingRow {
                    epsilon,
                    domain_size: d,
                    protocol: point.protocol(),
                    rho: point.rho,
                    repetition: String::new(),
                    n_reps: 0,
                    n_users: 0,
                    total_user_seconds: None,
                    per_user_ms: None,
                    server_seconds: None,
                    mean_draws: None,
                    status: OK.into(),
                };
                let encoder = match crate::protocols::Encoder::new(params, d) {
                    Ok(e) => e,
                    Err(e) if e.is_sweep_point_failure() => {
                        rec.fail(None, &e);
                        rows.push(TimingRow {
                            repetition: super::experiments::ALL_REPS.into(),
                            status: status_of(&e).into(),
                            ..template
                        });
                        records.push(rec.finish(started));
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                rec.route = Some(encoder.route());
                rec.indexed_members = encoder.indexed_members();
                let mut point_rows = Vec::new();
                for rep in 0..cfg.repetitions {
                    let ds = data.get(rep);
                    let n = ds.n_users();
                    let mut reports: Vec<Report> = Vec::with_capacity(n);
                    let t0 = Instant::now();
                    let mut failure = None;
                    for (u, &v) in ds.values().iter().enumerate() {
                        let mut rng = user_rng(cfg.master_seed, rep as u64, u as u64, purpose::REPORT);
                        match encoder.report(v, &mut rng) {
                            Ok(r) => reports.push(r),
                            Err(e) => {
                                failure = Some(e);
                                break;
                            }
                        }
                    }
                    let user_seconds = t0.elapsed().as_secs_f64();
                    if let Some(e) = failure {
                        if !e.is_sweep_point_failure() {
                            return Err(e);
                        }
                        rec.fail(Some(rep), &e);
                        rows.push(TimingRow {
                            repetition: rep.to_string(),
                            status: status_of(&e).into(),
                            ..template.clone()
                        });
                        continue;
                    }
                    let t1 = Instant::now();
                    let support = support_counts(&reports, d, params.g);
                    std::hint::black_box(estimates_from_supports(&support, n, &params));
                    let server_seconds = t1.elapsed().as_secs_f64();
                    let draws = reports.iter().map(|r| r.draws_used as f64).sum::<f64>() / n as f64;
                    point_rows.push(TimingRow {
                        repetition: rep.to_string(),
                        n_reps: 1,
                        n_users: n,
                        total_user_seconds: Some(user_seconds),
                        per_user_ms: Some(user_seconds * 1e3 / n as f64),
                        server_seconds: Some(server_seconds),
                        mean_draws: Some(draws),
                        ..template.clone()
                    });
                }
                if !point_rows.is_empty() {
                    let mean_row = TimingRow {
                        repetition: MEAN.into(),
                        n_reps: point_rows.len(),
                        n_users: point_rows[0].n_users,
                        total_user_seconds: mean(point_rows.iter().filter_map(|r| r.total_user_seconds)),
                        per_user_ms: mean(point_rows.iter().filter_map(|r| r.per_user_ms)),
                        server_seconds: mean(point_rows.iter().filter_map(|r| r.server_seconds)),
                        mean_draws: mean(point_rows.iter().filter_map(|r| r.mean_draws)),
                        ..template
                    };
                    rows.extend(point_rows);
                    rows.push(mean_row);
                }
                records.push(rec.finish(started));
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdvisorRunRow {
    pub epsilon: f64,
    pub domain_size: usize,
    pub g: u32,
    /// `OLH` for the baseline row.
    pub rho: String,
    pub p_min: Option<usize>,
    pub p_max: Option<usize>,
    pub p_avg: Option<f64>,
    pub theoretical_avg: f64,
    pub mean_draws: Option<f64>,
    pub infeasible: bool,
}

pub(crate) fn run_advisor(cfg: &ExperimentConfig, base: &DataSource, records: &mut Vec<PointRecord>) -> Result<Vec<AdvisorRunRow>> {
    let mut rows = Vec::new();
    for d in domain_sizes(cfg, base) {
        let loaded;
        let data = if cfg.domain_sizes.is_some() {
            loaded = DataSource::load(cfg, Some(d))?;
            &loaded
        } else {
            base
        };
        for &epsilon in &cfg.epsilons {
            let started = Instant::now();
            let g = params_for(cfg, epsilon, None)?.g;
            let opts = AdvisorOptions {
                sample_users: cfg.sample_users,
                values: match cfg.advisor_source {
                    AdvisorSource::Uniform => AdvisorValues::Uniform,
                    AdvisorSource::Dataset => AdvisorValues::Dataset(data.get(0)),
                },
                family: cfg.family(),
                max_draws: cfg.max_draws,
                g: cfg.g,
                master_seed: cfg.master_seed,
            };
            for r in rho_advisor(d, epsilon, &cfg.rhos, &opts)? {
                let mut rec = PointRecord::new(SweepPoint { epsilon, rho: r.rho }, g);
                rec.domain_size = Some(d);
                if let Some(msg) = &r.failure {
                    rec.failures.push(super::manifest::FailureRecord {
                        repetition: None,
                        status: "infeasible".into(),
                        message: msg.clone(),
                    });
                }
                records.push(rec.finish(started));
                rows.push(AdvisorRunRow {
                    epsilon,
                    domain_size: d,
                    g,
                    rho: r.rho.map_or_else(|| "OLH".into(), |x| x.to_string()),
                    p_min: r.stats.map(|s| s.p_min),
                    p_max: r.stats.map(|s| s.p_max),
                    p_avg: r.stats.map(|s| s.p_avg),
                    theoretical_avg: d as f64 / g as f64,
                    mean_draws: r.mean_draws,
                    infeasible: r.infeasible,
                });
            }
        }
    }
    Ok(rows)
}
