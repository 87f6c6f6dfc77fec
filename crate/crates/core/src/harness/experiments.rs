//! BIA, MGA and distortion sweeps.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{
    gain, mga_craft_fixed_hash, mga_craft_with, write_bia_rows, write_mga_rows, AttackOutcome,
    BiaAttacker, BiaUserRow, CraftedReport, MgaUserRow, ObservationSet,
};
use crate::datasets::{true_frequencies, Dataset};
use crate::error::{Error, Result};
use crate::hashing::DomainHasher;
use crate::metrics::{l1, uloss};
use crate::populations::{write_assignment_csv, Group};
use crate::protocols::{add_support, estimates_from_supports, support_counts, Encoder, FrequencyTable};
use crate::seeding::{purpose, user_rng};

use super::config::{AttackerPool, ExperimentConfig, MgaMode, Protocol};
use super::manifest::PointRecord;
use super::sweep::{mean, params_for, simulate, status_of, sweep_points, DataSource, Population, SweepPoint, OK};

pub const MEAN: &str = "mean";
pub const ALL_REPS: &str = "all";
pub const ALL_USERS: &str = "ALL";

/// Optional per-user CSVs for one sweep.
pub(crate) struct UserRows {
    pub dir: Option<PathBuf>,
    pub stem: &'static str,
}

impl UserRows {
    fn write(
        &self,
        point: SweepPoint,
        rep: usize,
        what: &str,
        f: impl FnOnce(std::fs::File) -> Result<()>,
    ) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let rho = point.rho.map_or_else(|| "olh".to_string(), |r| format!("rho{r}"));
        let path = dir.join(format!("{}_eps{}_{rho}_rep{rep}_{what}.csv", self.stem, point.epsilon));
        let file = std::fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
        f(file)?;
        Ok(Some(path))
    }
}

fn rep_label(rep: usize) -> String {
    rep.to_string()
}

/// Builds a point's encoder, or returns the failure the sweep records.
fn encoder_for(cfg: &ExperimentConfig, point: SweepPoint, d: usize, rec: &mut PointRecord) -> Result<Option<Encoder>> {
    let params = params_for(cfg, point.epsilon, point.rho)?;
    match Encoder::new(params, d) {
        Ok(e) => {
            rec.route = Some(e.route());
            rec.indexed_members = e.indexed_members();
            Ok(Some(e))
        }
        Err(e) if e.is_sweep_point_failure() => {
            rec.fail(None, &e);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiaRow {
    pub epsilon: f64,
    pub rho: Option<f64>,
    pub protocol: Protocol,
    pub g: u32,
    pub repetition: String,
    pub n_reps: usize,
    pub group: String,
    pub group_size: usize,
    pub asr: Option<f64>,
    pub status: String,
}

impl BiaRow {
    fn failed(point: SweepPoint, g: u32, repetition: String, status: &str) -> Self {
        BiaRow {
            epsilon: point.epsilon,
            rho: point.rho,
            protocol: point.protocol(),
            g,
            repetition,
            n_reps: 0,
            group: ALL_USERS.into(),
            group_size: 0,
            asr: None,
            status: status.into(),
        }
    }
}

fn bia_outcomes(
    cfg: &ExperimentConfig,
    encoder: &Encoder,
    attacker: &BiaAttacker,
    dataset: &Dataset,
    pop: &Population,
    rep: usize,
) -> Result<Vec<AttackOutcome>> {
    let g = encoder.params().g;
    pop.reports
        .par_iter()
        .zip(dataset.values().par_iter())
        .enumerate()
        .map(|(u, (r, &v))| {
            let mut obs = Vec::with_capacity(cfg.n_observations);
            obs.push((r.seed, r.perturbed));
            if cfg.n_observations > 1 {
                let mut rng = user_rng(cfg.master_seed, rep as u64, u as u64, purpose::EXTRA_ROUNDS);
                for _ in 1..cfg.n_observations {
                    let extra = encoder.report(v, &mut rng)?;
                    obs.push((extra.seed, extra.perturbed));
                }
            }
            let obs = ObservationSet::new(g, obs)?;
            let mut rng = user_rng(cfg.master_seed, rep as u64, u as u64, purpose::BIA);
            Ok(attacker.predict(&obs, &mut rng))
        })
        .collect()
}

pub(crate) fn run_bia(
    cfg: &ExperimentConfig,
    data: &DataSource,
    users: &UserRows,
    records: &mut Vec<PointRecord>,
) -> Result<Vec<BiaRow>> {
    let d = data.domain_size();
    let mut rows = Vec::new();
    for point in sweep_points(cfg) {
        let started = Instant::now();
        let g = params_for(cfg, point.epsilon, point.rho)?.g;
        let mut rec = PointRecord::new(point, g);
        let Some(encoder) = encoder_for(cfg, point, d, &mut rec)? else {
            rows.push(BiaRow::failed(point, g, ALL_REPS.into(), rec.last_status().expect("failed")));
            records.push(rec.finish(started));
            continue;
        };
        let hasher = DomainHasher::new(d, g);
        let attacker = BiaAttacker::new(d, g);
        let mut point_rows: Vec<BiaRow> = Vec::new();
        for rep in 0..cfg.repetitions {
            let ds = data.get(rep);
            let attempt = simulate(&encoder, &hasher, ds, cfg.master_seed, rep, cfg.subpopulation_fraction)
                .and_then(|pop| bia_outcomes(cfg, &encoder, &attacker, ds, &pop, rep).map(|o| (pop, o)));
            let (pop, outcomes) = match attempt {
                Ok(x) => x,
                Err(e) if e.is_sweep_point_failure() => {
                    rows.push(BiaRow::failed(point, g, rep_label(rep), status_of(&e)));
                    rec.fail(Some(rep), &e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let truths = ds.values();
            let hits = |ids: &mut dyn Iterator<Item = usize>| {
                let (mut n, mut h) = (0usize, 0usize);
                for u in ids {
                    n += 1;
                    h += (outcomes[u].prediction == truths[u]) as usize;
                }
                (n, h as f64 / n as f64)
            };
            let mut groups = vec![(ALL_USERS.to_string(), hits(&mut (0..truths.len())))];
            for grp in Group::SUBPOPULATIONS {
                groups.push((grp.name().into(), hits(&mut pop.assignment.members(grp).iter().copied())));
            }
            for (group, (size, asr)) in groups {
                point_rows.push(BiaRow {
                    epsilon: point.epsilon,
                    rho: point.rho,
                    protocol: point.protocol(),
                    g,
                    repetition: rep_label(rep),
                    n_reps: 1,
                    group,
                    group_size: size,
                    asr: Some(asr),
                    status: OK.into(),
                });
            }
            users.write(point, rep, "assignment", |f| write_assignment_csv(f, &pop.records, &pop.assignment))?;
            users.write(point, rep, "bia", |f| {
                let rows: Vec<BiaUserRow> = outcomes
                    .iter()
                    .enumerate()
                    .map(|(u, o)| BiaUserRow {
                        user_id: u,
                        true_value: truths[u],
                        predicted_value: o.prediction,
                        top_score: o.top_score,
                        tie_size: o.tie_size,
                    })
                    .collect();
                write_bia_rows(f, &rows)
            })?;
        }
        let mut means = Vec::new();
        for group in std::iter::once(ALL_USERS).chain(Group::SUBPOPULATIONS.map(Group::name)) {
            let of_group: Vec<&BiaRow> = point_rows.iter().filter(|r| r.group == group).collect();
            let Some(asr) = mean(of_group.iter().filter_map(|r| r.asr)) else { continue };
            means.push(BiaRow {
                repetition: MEAN.into(),
                n_reps: of_group.len(),
                asr: Some(asr),
                ..of_group[0].clone()
            });
        }
        rows.extend(point_rows);
        rows.extend(means);
        records.push(rec.finish(started));
    }
    Ok(rows)
}

/// One MGA attack on one collected population.
pub(crate) struct PoolAttack {
    pub pool: AttackerPool,
    pub attackers: Vec<usize>,
    pub crafted: Vec<CraftedReport>,
    pub estimate: FrequencyTable,
}

pub(crate) struct MgaOutcome {
    pub clean: FrequencyTable,
    pub attacks: Vec<PoolAttack>,
}

fn pool_members(pop: &Population, pool: AttackerPool) -> Vec<usize> {
    match pool {
        AttackerPool::HighEnt => pop.assignment.high_ent.clone(),
        AttackerPool::LowPis => pop.assignment.low_pis.clone(),
        AttackerPool::HighPis => pop.assignment.high_pis.clone(),
        AttackerPool::All => (0..pop.reports.len()).collect(),
    }
}

/// Replaces sampled users of each pool with crafted reports and re-estimates.
/// Attackers are picked by a stream that depends only on the repetition and
/// the pool, so OLH and F-OLH runs with the same pool poison the same users
/// when the pool is `ALL`.
pub(crate) fn mga_attacks(
    cfg: &ExperimentConfig,
    encoder: &Encoder,
    hasher: &DomainHasher,
    pop: &Population,
    rep: usize,
    targets: &[u32],
) -> Result<MgaOutcome> {
    let params = encoder.params();
    let g = params.g;
    let n = pop.reports.len();
    let clean_support = support_counts(&pop.reports, hasher.domain_size(), g);
    let clean = estimates_from_supports(&clean_support, n, params);
    let mut attacks = Vec::new();
    for pool in cfg.attacker_groups() {
        let members = pool_members(pop, pool);
        let m = cfg.attackers_for(n).min(members.len());
        let mut rng = user_rng(cfg.master_seed, rep as u64, pool.tag(), purpose::ATTACKERS);
        let mut attackers: Vec<usize> = sample(&mut rng, members.len(), m).into_iter().map(|i| members[i]).collect();
        attackers.sort_unstable();
        let crafted: Vec<CraftedReport> = attackers
            .par_iter()
            .map(|&u| match cfg.mga_mode() {
                MgaMode::FixedHash => mga_craft_fixed_hash(pop.reports[u].hash_fn(g), targets),
                MgaMode::FreeSearch => {
                    let mut rng = user_rng(cfg.master_seed, rep as u64, u as u64, purpose::MGA);
                    mga_craft_with(targets, cfg.kappa, g, || encoder.draw_hash(&mut rng).map(|(s, _)| s))
                }
            })
            .collect::<Result<_>>()?;
        let mut support = clean_support.clone();
        for (&u, c) in attackers.iter().zip(&crafted) {
            add_support(hasher, &pop.reports[u], &mut support, -1);
            add_support(hasher, &c.report, &mut support, 1);
        }
        attacks.push(PoolAttack {
            pool,
            attackers,
            crafted,
            estimate: estimates_from_supports(&support, n, params),
        });
    }
    Ok(MgaOutcome { clean, attacks })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MgaRow {
    pub epsilon: f64,
    pub rho: Option<f64>,
    pub protocol: Protocol,
    pub g: u32,
    pub repetition: String,
    pub n_reps: usize,
    pub attacker_group: String,
    pub n_attackers: usize,
    pub mga_mode: MgaMode,
    /// l1 distance from the true frequencies after the attack.
    pub uloss: Option<f64>,
    pub uloss_no_attack: Option<f64>,
    /// l1 distance between the attacked and unattacked estimates.
    pub attack_l1: Option<f64>,
    pub gain: Option<f64>,
    pub status: String,
}

pub(crate) fn run_mga(
    cfg: &ExperimentConfig,
    data: &DataSource,
    users: &UserRows,
    records: &mut Vec<PointRecord>,
) -> Result<Vec<MgaRow>> {
    let d = data.domain_size();
    let targets = cfg.targets.resolve(d)?;
    let mode = cfg.mga_mode();
    let mut rows = Vec::new();
    for point in sweep_points(cfg) {
        let started = Instant::now();
        let g = params_for(cfg, point.epsilon, point.rho)?.g;
        let failed = |repetition: String, status: &str| MgaRow {
            epsilon: point.epsilon,
            rho: point.rho,
            protocol: point.protocol(),
            g,
            repetition,
            n_reps: 0,
            attacker_group: ALL_USERS.into(),
            n_attackers: 0,
            mga_mode: mode,
            uloss: None,
            uloss_no_attack: None,
            attack_l1: None,
            gain: None,
            status: status.into(),
        };
        let mut rec = PointRecord::new(point, g);
        let Some(encoder) = encoder_for(cfg, point, d, &mut rec)? else {
            rows.push(failed(ALL_REPS.into(), rec.last_status().expect("failed")));
            records.push(rec.finish(started));
            continue;
        };
        let hasher = DomainHasher::new(d, g);
        let mut point_rows: Vec<MgaRow> = Vec::new();
        for rep in 0..cfg.repetitions {
            let ds = data.get(rep);
            let attempt = simulate(&encoder, &hasher, ds, cfg.master_seed, rep, cfg.subpopulation_fraction)
                .and_then(|pop| mga_attacks(cfg, &encoder, &hasher, &pop, rep, &targets).map(|o| (pop, o)));
            let (pop, outcome) = match attempt {
                Ok(x) => x,
                Err(e) if e.is_sweep_point_failure() => {
                    rows.push(failed(rep_label(rep), status_of(&e)));
                    rec.fail(Some(rep), &e);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let f_true = true_frequencies(ds);
            let clean_loss = uloss(&outcome.clean, &f_true)?;
            for a in &outcome.attacks {
                point_rows.push(MgaRow {
                    epsilon: point.epsilon,
                    rho: point.rho,
                    protocol: point.protocol(),
                    g,
                    repetition: rep_label(rep),
                    n_reps: 1,
                    attacker_group: a.pool.name().into(),
                    n_attackers: a.attackers.len(),
                    mga_mode: mode,
                    uloss: Some(uloss(&a.estimate, &f_true)?),
                    uloss_no_attack: Some(clean_loss),
                    attack_l1: Some(l1(a.estimate.values(), outcome.clean.values())?),
                    gain: Some(gain(&outcome.clean, &a.estimate, &targets)?),
                    status: OK.into(),
                });
                users.write(point, rep, &format!("mga_{}", a.pool.name().to_lowercase()), |f| {
                    let rows: Vec<MgaUserRow> = a
                        .attackers
                        .iter()
                        .zip(&a.crafted)
                        .map(|(&u, c)| MgaUserRow {
                            user_id: u,
                            seed: c.report.seed.0,
                            perturbed: c.report.perturbed,
                            target_hits: c.target_hits,
                        })
                        .collect();
                    write_mga_rows(f, &rows)
                })?;
            }
            users.write(point, rep, "assignment", |f| write_assignment_csv(f, &pop.records, &pop.assignment))?;
        }
        let mut means = Vec::new();
        for pool in cfg.attacker_groups() {
            let of_pool: Vec<&MgaRow> = point_rows.iter().filter(|r| r.attacker_group == pool.name()).collect();
            if of_pool.is_empty() {
                continue;
            }
            means.push(MgaRow {
                repetition: MEAN.into(),
                n_reps: of_pool.len(),
                uloss: mean(of_pool.iter().filter_map(|r| r.uloss)),
                uloss_no_attack: mean(of_pool.iter().filter_map(|r| r.uloss_no_attack)),
                attack_l1: mean(of_pool.iter().filter_map(|r| r.attack_l1)),
                gain: mean(of_pool.iter().filter_map(|r| r.gain)),
                ..of_pool[0].clone()
            });
        }
        rows.extend(point_rows);
        rows.extend(means);
        records.push(rec.finish(started));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistortionRow {
    pub epsilon: f64,
    pub rho: f64,
    pub attacker_group: String,
    pub n_attackers: usize,
    pub repetition: String,
    pub n_reps: usize,
    pub v: u32,
    pub f_true: f64,
    pub f_olh_attacked: f64,
    pub f_folh_attacked: Option<f64>,
    pub status: String,
}

/// Per-item true, OLH-attacked and F-OLH-attacked frequencies. Both protocols
/// see the same users, true values and attacker ids.
pub(crate) fn run_distortion(
    cfg: &ExperimentConfig,
    data: &DataSource,
    records: &mut Vec<PointRecord>,
) -> Result<Vec<DistortionRow>> {
    let d = data.domain_size();
    let targets = cfg.targets.resolve(d)?;
    let pools = cfg.attacker_groups();
    let mut rows = Vec::new();
    for &epsilon in &cfg.epsilons {
        // OLH side, shared by every rho at this epsilon: per rep, per pool.
        let started = Instant::now();
        let olh_point = SweepPoint { epsilon, rho: None };
        let g = params_for(cfg, epsilon, None)?.g;
        let hasher = DomainHasher::new(d, g);
        let mut olh_rec = PointRecord::new(olh_point, g);
        let olh = encoder_for(cfg, olh_point, d, &mut olh_rec)?.expect("OLH has no fairness constraint");
        let mut olh_runs = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions {
            let pop = simulate(&olh, &hasher, data.get(rep), cfg.master_seed, rep, cfg.subpopulation_fraction)?;
            olh_runs.push(mga_attacks(cfg, &olh, &hasher, &pop, rep, &targets)?.attacks);
        }
        records.push(olh_rec.finish(started));

        for &rho in &cfg.rhos {
            let started = Instant::now();
            let point = SweepPoint { epsilon, rho: Some(rho) };
            let mut rec = PointRecord::new(point, g);
            let folh = encoder_for(cfg, point, d, &mut rec)?;
            let mut point_rows = Vec::new();
            for rep in 0..cfg.repetitions {
                let ds = data.get(rep);
                let f_true = true_frequencies(ds);
                let (folh_attacks, status) = match &folh {
                    None => (None, rec.last_status().expect("failed").to_string()),
                    Some(enc) => match simulate(enc, &hasher, ds, cfg.master_seed, rep, cfg.subpopulation_fraction)
                        .and_then(|pop| mga_attacks(cfg, enc, &hasher, &pop, rep, &targets))
                    {
                        Ok(o) => (Some(o.attacks), OK.to_string()),
                        Err(e) if e.is_sweep_point_failure() => {
                            rec.fail(Some(rep), &e);
                            (None, status_of(&e).to_string())
                        }
                        Err(e) => return Err(e),
                    },
                };
                for (i, pool) in pools.iter().enumerate() {
                    let o = &olh_runs[rep][i];
                    for v in 0..d {
                        point_rows.push(DistortionRow {
                            epsilon,
                            rho,
                            attacker_group: pool.name().into(),
                            n_attackers: o.attackers.len(),
                            repetition: rep_label(rep),
                            n_reps: 1,
                            v: v as u32,
                            f_true: f_true[v],
                            f_olh_attacked: o.estimate[v],
                            f_folh_attacked: folh_attacks.as_ref().map(|a| a[i].estimate[v]),
                            status: status.clone(),
                        });
                    }
                }
            }
            let mut means = Vec::new();
            for pool in &pools {
                for v in 0..d as u32 {
                    let cell: Vec<&DistortionRow> = point_rows
                        .iter()
                        .filter(|r| r.v == v && r.attacker_group == pool.name() && r.status == OK)
                        .collect();
                    if cell.is_empty() {
                        continue;
                    }
                    means.push(DistortionRow {
                        repetition: MEAN.into(),
                        n_reps: cell.len(),
                        f_true: mean(cell.iter().map(|r| r.f_true)).expect("non-empty"),
                        f_olh_attacked: mean(cell.iter().map(|r| r.f_olh_attacked)).expect("non-empty"),
                        f_folh_attacked: mean(cell.iter().filter_map(|r| r.f_folh_attacked)),
                        ..cell[0].clone()
                    });
                }
            }
            rows.extend(point_rows);
            rows.extend(means);
            records.push(rec.finish(started));
        }
    }
    Ok(rows)
}
