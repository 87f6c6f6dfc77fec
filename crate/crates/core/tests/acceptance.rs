//! End-to-end acceptance checks. Runs every check at its pinned tolerance,
//! prints one PASS/FAIL line each, and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use fairhash::attacks::{bia_predict, mga_craft_with, ObservationSet};
use fairhash::hashing::{HashFn, HashSeed};
use fairhash::harness::{
    run_experiment, BiaRow, DatasetKind, ExperimentConfig, ExperimentKind, MgaRow, RunOutput, MEAN,
};
use fairhash::metrics::{preimage_stats, rho_advisor, AdvisorOptions};
use fairhash::populations::UserRecord;
use fairhash::hashing::DomainHasher;
use fairhash::protocols::{derive_g, estimate_from_support, olh_report, ProtocolParams};
use fairhash::seeding::UserRng;

/// Fixed once for the whole suite.
const MASTER_SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(cfg: ExperimentConfig) -> RunOutput {
    run_experiment(&cfg).unwrap_or_else(|e| panic!("{:?} failed: {e}", cfg.kind))
}

fn bia_mean(rows: &[BiaRow], rho: Option<f64>, group: &str) -> f64 {
    rows.iter()
        .find(|r| r.repetition == MEAN && r.rho == rho && r.group == group)
        .and_then(|r| r.asr)
        .unwrap_or_else(|| panic!("no mean ASR for rho={rho:?} group={group}"))
}

fn mga_mean<'a>(rows: &'a [MgaRow], rho: Option<f64>, group: &str) -> &'a MgaRow {
    rows.iter()
        .find(|r| r.repetition == MEAN && r.rho == rho && r.attacker_group == group)
        .unwrap_or_else(|| panic!("no mean MGA row for rho={rho:?} group={group}"))
}

fn estimator_forms() -> Outcome {
    let mut rng = UserRng::seed_from_u64(MASTER_SEED);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..1_000_000usize);
        let sup = rng.random_range(0..=n) as f64;
        let eps = rng.random_range(0.05..8.0);
        let g = rng.random_range(2..64u32);
        let params = ProtocolParams::olh(eps).unwrap().with_g(g).unwrap();
        let direct = estimate_from_support(sup, n, &params);
        let e = eps.exp();
        let p = e / (e + g as f64 - 1.0);
        let normalized = (sup / n as f64 - 1.0 / g as f64) / (p - 1.0 / g as f64);
        worst = worst.max((direct - normalized).abs());
    }
    outcome(worst <= 1e-10, format!("max |difference| = {worst:.3e} (tolerance 1e-10)"))
}

fn perturbation_law() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for (eps, g) in [(1.0, 4u32), (2.0, 8), (3.0, 21)] {
        let params = ProtocolParams::olh(eps).unwrap();
        assert_eq!(params.g, g);
        let mut rng = UserRng::seed_from_u64(MASTER_SEED ^ g as u64);
        let mut cells = vec![0u64; g as usize];
        let draws = 1_000_000u64;
        for i in 0..draws {
            let v = (i % 97) as u32;
            let r = olh_report(&params, v, &mut rng);
            let x = HashFn::new(r.seed, g).bucket(v);
            cells[((r.perturbed + g - x) % g) as usize] += 1;
        }
        let (p, q) = (params.keep_probability(), params.other_probability());
        let stat: f64 = cells
            .iter()
            .enumerate()
            .map(|(i, &o)| {
                let e = draws as f64 * if i == 0 { p } else { q };
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let pval = 1.0 - ChiSquared::new((g - 1) as f64).unwrap().cdf(stat);
        pass &= pval > 0.001;
        details.push(format!("(eps={eps}, g={g}) p={pval:.3}"));
    }
    outcome(pass, details.join(", "))
}

fn gaussian(kind: ExperimentKind, epsilon: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind);
    cfg.epsilons = vec![epsilon];
    cfg.master_seed = MASTER_SEED;
    cfg
}

fn no_attack_utility() -> Outcome {
    let mut cfg = gaussian(ExperimentKind::MgaDisparity, 2.0);
    cfg.malicious_count = Some(0);
    cfg.attacker_groups = Some(vec![fairhash::harness::AttackerPool::All]);
    let out = run(cfg);
    let u = mga_mean(out.mga(), None, "ALL").uloss_no_attack.unwrap();
    outcome((0.12..=0.35).contains(&u), format!("mean ULoss = {u:.4} (want [0.12, 0.35])"))
}

fn bia_disparity() -> Outcome {
    let out = run(gaussian(ExperimentKind::BiaDisparity, 3.0));
    let rows = out.bia();
    let (lo, hi, he) = (
        bia_mean(rows, None, "LOW_PIS"),
        bia_mean(rows, None, "HIGH_PIS"),
        bia_mean(rows, None, "HIGH_ENT"),
    );
    outcome(
        lo >= 1.3 * hi && lo >= 1.2 * he,
        format!(
            "ASR Low-PIS {lo:.4}, High-PIS {hi:.4}, High-ENT {he:.4}; Low/High-PIS = {:.2} (want >= 1.3), Low-PIS/High-ENT = {:.2} (want >= 1.2)",
            lo / hi,
            lo / he
        ),
    )
}

fn mga_disparity() -> Outcome {
    let out = run(gaussian(ExperimentKind::MgaDisparity, 1.0));
    let rows = out.mga();
    let (lo, hi) = (mga_mean(rows, None, "LOW_PIS"), mga_mean(rows, None, "HIGH_PIS"));
    let (ul, uh) = (lo.uloss.unwrap(), hi.uloss.unwrap());
    outcome(
        uh >= 2.0 * ul,
        format!(
            "ULoss High-PIS {uh:.4} vs Low-PIS {ul:.4}: ratio {:.3} (want >= 2); no-attack ULoss {:.4}; attack-only l1 High-PIS {:.4}, Low-PIS {:.4}",
            uh / ul,
            lo.uloss_no_attack.unwrap(),
            hi.attack_l1.unwrap(),
            lo.attack_l1.unwrap()
        ),
    )
}

fn max_gap(rows: &[BiaRow], rho: Option<f64>) -> f64 {
    let asrs = ["HIGH_ENT", "LOW_PIS", "HIGH_PIS"].map(|g| bia_mean(rows, rho, g));
    let hi = asrs.iter().copied().fold(f64::MIN, f64::max);
    let lo = asrs.iter().copied().fold(f64::MAX, f64::min);
    hi - lo
}

fn fairness_convergence() -> Outcome {
    let mut cfg = ExperimentConfig::new(ExperimentKind::FolhBia);
    cfg.dataset = DatasetKind::Uniform;
    cfg.domain_size = 128;
    cfg.n_users = 50_000;
    cfg.epsilons = vec![2.0];
    cfg.rhos = vec![1.0, 1.05];
    cfg.olh_baseline = Some(false);
    // Exact uniformity over 128 items is rare (about 1 seed in 3.8 million),
    // so the users draw from a finite family whose compliant members are
    // indexed once, with the draw budget sized for the expected count.
    cfg.hash_family_size = Some(1 << 28);
    cfg.max_draws = 1 << 40;
    cfg.master_seed = MASTER_SEED;
    let out = run(cfg);
    let (g0, g5) = (max_gap(out.bia(), Some(1.0)), max_gap(out.bia(), Some(1.05)));
    let members = out.manifest.points[0].indexed_members.unwrap_or(0);
    outcome(
        g0 <= 0.02 && g5 > g0,
        format!("max ASR gap rho=1.0: {g0:.4} (want <= 0.02); rho=1.05: {g5:.4} (want > rho=1.0 gap); {members} compliant seeds"),
    )
}

fn poisoning_mitigation() -> Outcome {
    let mut cfg = gaussian(ExperimentKind::FolhMga, 1.0);
    cfg.rhos = vec![1.01];
    let out = run(cfg);
    let rows = out.mga();
    let mut pass = true;
    let mut details = Vec::new();
    for g in ["HIGH_ENT", "LOW_PIS", "HIGH_PIS"] {
        let (olh, folh) = (mga_mean(rows, None, g), mga_mean(rows, Some(1.01), g));
        let ratio = folh.uloss.unwrap() / olh.uloss.unwrap();
        pass &= ratio <= 0.7;
        details.push(format!(
            "{g}: F-OLH/OLH ULoss {ratio:.3} (attack-only l1 ratio {:.3})",
            folh.attack_l1.unwrap() / olh.attack_l1.unwrap()
        ));
    }
    outcome(pass, format!("{} (want <= 0.7)", details.join("; ")))
}

fn table_theory() -> Outcome {
    let mut pass = true;
    let mut details = Vec::new();
    for (d, want) in [(100usize, 12.5), (128, 16.0)] {
        let g = derive_g(2.0);
        let hasher = DomainHasher::new(d, g);
        let user = UserRecord::new(0, 0, HashFn::new(1, g), &hasher);
        let s = preimage_stats(&[user], d, g).unwrap();
        pass &= s.theoretical_avg == want && s.theoretical_min == 1 && s.theoretical_max == d;
        details.push(format!("|D|={d}: avg {:.2}, (min, max) = ({}, {})", s.theoretical_avg, s.theoretical_min, s.theoretical_max));
    }
    outcome(pass, details.join("; "))
}

fn table_trend() -> Outcome {
    let opts = AdvisorOptions { sample_users: 10_000, master_seed: MASTER_SEED, ..Default::default() };
    let rows = rho_advisor(128, 2.0, &[1.01, 1.03, 1.05], &opts).unwrap();
    let spread = |i: usize| rows[i].stats.map(|s| s.p_max - s.p_min).expect("feasible");
    // Row 0 is the OLH baseline.
    let seq = [spread(1), spread(2), spread(3), spread(0)];
    let pass = seq.windows(2).all(|w| w[0] < w[1]);
    outcome(pass, format!("spread rho 1.01/1.03/1.05/OLH = {seq:?} (want strictly increasing)"))
}

fn timing_shape() -> Outcome {
    let mut cfg = gaussian(ExperimentKind::Timing, 2.0);
    cfg.rhos = vec![1.01, 1.03, 1.05];
    let out = run(cfg);
    let mean_of = |rho: Option<f64>| {
        out.timing()
            .iter()
            .find(|r| r.repetition == MEAN && r.rho == rho)
            .expect("mean timing row")
            .clone()
    };
    let olh = mean_of(None).total_user_seconds.unwrap();
    let folh: Vec<f64> = [1.01, 1.03, 1.05].map(|r| mean_of(Some(r)).total_user_seconds.unwrap()).to_vec();
    let per_user = mean_of(Some(1.01)).per_user_ms.unwrap();
    let above = folh.iter().all(|&t| t >= olh);
    let monotone = folh.windows(2).all(|w| w[1] <= w[0] * 1.10);
    outcome(
        above && monotone && per_user < 50.0,
        format!("OLH {olh:.4}s, F-OLH {folh:.4?}s; per-user at 1.01 = {per_user:.5} ms"),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut rng = UserRng::seed_from_u64(MASTER_SEED);
    let mut mismatches = 0;
    for _ in 0..200 {
        let d = rng.random_range(1..=8usize);
        let g = rng.random_range(2..=4u32);
        let n = rng.random_range(1..=4usize);
        let obs: Vec<(HashSeed, u32)> = (0..n).map(|_| (HashSeed(rng.next_u64()), rng.random_range(0..g))).collect();
        let set = ObservationSet::new(g, obs.clone()).unwrap();
        let top = bia_predict(&set, d, &mut rng).top_score;
        let brute = (0..d as u32)
            .map(|v| obs.iter().filter(|(s, x)| HashFn::new(*s, g).bucket(v) == *x).count() as u32)
            .max()
            .unwrap();
        mismatches += (top != brute) as usize;

        let kappa = rng.random_range(1..=20u64);
        let targets: Vec<u32> = {
            let mut t: BTreeSet<u32> = (0..d as u32).filter(|_| rng.random_bool(0.5)).collect();
            if t.is_empty() {
                t.insert(rng.random_range(0..d as u32));
            }
            t.into_iter().collect()
        };
        let seeds: Vec<u64> = (0..kappa).map(|_| rng.next_u64()).collect();
        let mut it = seeds.iter();
        let crafted = mga_craft_with(&targets, kappa, g, || Ok(HashSeed(*it.next().unwrap()))).unwrap();
        let brute = seeds
            .iter()
            .flat_map(|&s| (0..g).map(move |b| (s, b)))
            .map(|(s, b)| targets.iter().filter(|&&t| HashFn::new(s, g).bucket(t) == b).count())
            .max()
            .unwrap();
        let recount = targets.iter().filter(|&&t| crafted.report.hash_fn(g).bucket(t) == crafted.report.perturbed).count();
        mismatches += (crafted.target_hits != brute || recount != brute) as usize;
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over 200 instances"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut configs = Vec::new();
    let mut bia = ExperimentConfig::new(ExperimentKind::FolhBia);
    bia.n_users = 20_000;
    bia.epsilons = vec![1.0, 2.0];
    bia.rhos = vec![1.01, 1.05];
    bia.n_observations = 2;
    bia.repetitions = 2;
    configs.push(bia);
    let mut mga = ExperimentConfig::new(ExperimentKind::FolhMga);
    mga.n_users = 20_000;
    mga.epsilons = vec![1.0];
    mga.rhos = vec![1.01];
    mga.mga_mode = Some(fairhash::harness::MgaMode::FreeSearch);
    mga.kappa = 50;
    mga.repetitions = 2;
    configs.push(mga);
    let mut dist = ExperimentConfig::new(ExperimentKind::Distortion);
    dist.n_users = 20_000;
    dist.epsilons = vec![0.5];
    dist.rhos = vec![1.01];
    dist.kappa = 50;
    dist.repetitions = 2;
    configs.push(dist);

    let mut identical = true;
    for (i, base) in configs.into_iter().enumerate() {
        let mut outputs = Vec::new();
        for (j, threads) in [None, None, Some(8)].into_iter().enumerate() {
            let mut cfg = base.clone();
            cfg.master_seed = MASTER_SEED;
            cfg.threads = threads;
            cfg.output_dir = Some(dir.path().join(format!("{i}_{j}")));
            let out = run(cfg.clone());
            let file = cfg.output_dir.unwrap().join(&out.manifest.result_files[0]);
            outputs.push(std::fs::read(file).unwrap());
        }
        identical &= outputs.windows(2).all(|w| w[0] == w[1]);
    }
    outcome(identical, format!("3 configs x (2 default runs + 1 run on 8 threads): byte-identical = {identical}"))
}

fn main() {
    let checks: [(&str, Duration, fn() -> Outcome); 12] = [
        ("estimator closed form vs normalized support", Duration::from_secs(1), estimator_forms),
        ("perturbation law chi-square", Duration::from_secs(10), perturbation_law),
        ("no-attack utility", Duration::from_secs(60), no_attack_utility),
        ("BIA disparity across subpopulations", Duration::from_secs(300), bia_disparity),
        ("MGA disparity across attacker subpopulations", Duration::from_secs(300), mga_disparity),
        ("F-OLH fairness convergence at rho = 1", Duration::from_secs(600), fairness_convergence),
        ("F-OLH poisoning mitigation", Duration::from_secs(300), poisoning_mitigation),
        ("theoretical preimage statistics", Duration::from_secs(1), table_theory),
        ("preimage spread trend over rho", Duration::from_secs(120), table_trend),
        ("user-side timing shape", Duration::from_secs(300), timing_shape),
        ("attack oracles vs brute force", Duration::from_secs(10), oracle_equivalence),
        ("deterministic result files", Duration::from_secs(600), determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, check)) in checks.iter().enumerate() {
        let started = Instant::now();
        let o = check();
        let took = started.elapsed();
        let in_budget = took <= *budget;
        let pass = o.pass && in_budget;
        println!(
            "acceptance {:>2} {} {name}: {} [{:.1}s{}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            if in_budget { String::new() } else { format!(", over the {}s budget", budget.as_secs()) },
        );
        if !pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} checks passed", checks.len());
    } else {
        println!("acceptance: {} of {} checks failed: {failed:?}", failed.len(), checks.len());
        std::process::exit(1);
    }
}
