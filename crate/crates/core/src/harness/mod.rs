//! Declarative experiment sweeps with deterministic seeding and CSV output.

mod config;
mod experiments;
mod manifest;
mod sweep;
mod timing;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};

pub use config::{
    AdvisorSource, AttackerPool, DatasetKind, ExperimentConfig, ExperimentKind, MgaMode, Protocol, Targets,
    DEFAULT_EPSILONS, DEFAULT_KAPPA, DEFAULT_MALICIOUS_FRACTION, DEFAULT_REPETITIONS,
};
pub use experiments::{BiaRow, DistortionRow, MgaRow, ALL_REPS, ALL_USERS, MEAN};
pub use manifest::{EpsilonG, FailureRecord, PointRecord, RepetitionRecord, RunManifest, SOFTWARE_VERSION};
pub use sweep::SweepPoint;
pub use timing::{AdvisorRunRow, TimingRow};

use experiments::UserRows;
use sweep::{params_for, DataSource};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub enum Results {
    Bia(Vec<BiaRow>),
    Mga(Vec<MgaRow>),
    Distortion(Vec<DistortionRow>),
    Timing(Vec<TimingRow>),
    Advisor(Vec<AdvisorRunRow>),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub results: Results,
    pub manifest: RunManifest,
}

impl RunOutput {
    pub fn bia(&self) -> &[BiaRow] {
        match &self.results {
            Results::Bia(r) => r,
            _ => &[],
        }
    }

    pub fn mga(&self) -> &[MgaRow] {
        match &self.results {
            Results::Mga(r) => r,
            _ => &[],
        }
    }

    pub fn distortion(&self) -> &[DistortionRow] {
        match &self.results {
            Results::Distortion(r) => r,
            _ => &[],
        }
    }

    pub fn timing(&self) -> &[TimingRow] {
        match &self.results {
            Results::Timing(r) => r,
            _ => &[],
        }
    }

    pub fn advisor(&self) -> &[AdvisorRunRow] {
        match &self.results {
            Results::Advisor(r) => r,
            _ => &[],
        }
    }
}

/// Runs a sweep. With `output_dir` set, writes `<kind>.csv` and
/// `manifest.json` there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| run_inner(cfg)),
        None => run_inner(cfg),
    }
}

fn run_inner(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let started = Instant::now();
    let data = DataSource::load(cfg, None)?;
    let stem = cfg.kind.file_stem();
    let users = UserRows {
        dir: cfg.output_dir.as_ref().filter(|_| cfg.emit_user_rows).map(|d| d.join("users")),
        stem,
    };
    let mut points = Vec::new();
    let results = match cfg.kind {
        ExperimentKind::BiaDisparity | ExperimentKind::FolhBia => {
            Results::Bia(experiments::run_bia(cfg, &data, &users, &mut points)?)
        }
        ExperimentKind::MgaDisparity | ExperimentKind::FolhMga => {
            Results::Mga(experiments::run_mga(cfg, &data, &users, &mut points)?)
        }
        ExperimentKind::Distortion => Results::Distortion(experiments::run_distortion(cfg, &data, &mut points)?),
        ExperimentKind::Timing => Results::Timing(timing::run_timing(cfg, &data, &mut points)?),
        ExperimentKind::RhoAdvisor => Results::Advisor(timing::run_advisor(cfg, &data, &mut points)?),
    };

    let g_per_epsilon = cfg
        .epsilons
        .iter()
        .map(|&epsilon| params_for(cfg, epsilon, None).map(|p| EpsilonG { epsilon, g: p.g }))
        .collect::<Result<_>>()?;
    let repetitions = (0..cfg.repetitions)
        .map(|rep| RepetitionRecord {
            repetition: rep,
            dataset_seed: data.seeds[rep % data.seeds.len()],
            dataset: data.get(rep).summary(),
        })
        .collect();
    let mut manifest = RunManifest {
        software_version: SOFTWARE_VERSION.into(),
        config: cfg.clone(),
        g_per_epsilon,
        repetitions,
        points,
        result_files: Vec::new(),
        threads: if cfg.kind == ExperimentKind::Timing { 1 } else { rayon::current_num_threads() },
        total_wall_seconds: 0.0,
    };
    debug_assert_eq!(data.all().len(), data.seeds.len());

    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = dir.join(format!("{stem}.csv"));
        match &results {
            Results::Bia(r) => write_csv(&path, r)?,
            Results::Mga(r) => write_csv(&path, r)?,
            Results::Distortion(r) => write_csv(&path, r)?,
            Results::Timing(r) => write_csv(&path, r)?,
            Results::Advisor(r) => write_csv(&path, r)?,
        }
        manifest.result_files.push(file_name(&path));
        manifest.total_wall_seconds = started.elapsed().as_secs_f64();
        manifest.write(&dir.join(MANIFEST_FILE))?;
    } else {
        manifest.total_wall_seconds = started.elapsed().as_secs_f64();
    }
    Ok(RunOutput { results, manifest })
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Writes serializable rows as CSV with a header row.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::file(path, e))?;
    Ok(())
}

/// Output directory of a run, if any.
pub fn output_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.output_dir.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{estimate_all, Encoder};
    use crate::seeding::{purpose, user_rng};

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(kind);
        cfg.n_users = 5000;
        cfg.repetitions = 3;
        cfg.epsilons = vec![1.0, 3.0];
        cfg.rhos = vec![1.05];
        cfg.kappa = 20;
        cfg
    }

    #[test]
    fn mean_rows_average_repetitions() {
        let out = run_experiment(&small(ExperimentKind::BiaDisparity)).unwrap();
        let rows = out.bia();
        let means: Vec<&BiaRow> = rows.iter().filter(|r| r.repetition == MEAN).collect();
        assert_eq!(means.len(), 2 * 4);
        for m in means {
            let reps: Vec<f64> = rows
                .iter()
                .filter(|r| r.repetition != MEAN && r.epsilon == m.epsilon && r.group == m.group)
                .map(|r| r.asr.unwrap())
                .collect();
            assert_eq!(reps.len(), 3);
            assert_eq!(m.n_reps, 3);
            let want = reps.iter().sum::<f64>() / 3.0;
            assert!((m.asr.unwrap() - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn population_asr_grows_with_epsilon() {
        let mut cfg = small(ExperimentKind::BiaDisparity);
        cfg.epsilons = vec![0.5, 1.0, 2.0, 3.0];
        let out = run_experiment(&cfg).unwrap();
        let asr: Vec<f64> = out
            .bia()
            .iter()
            .filter(|r| r.repetition == MEAN && r.group == ALL_USERS)
            .map(|r| r.asr.unwrap())
            .collect();
        assert_eq!(asr.len(), 4);
        assert!(asr.windows(2).all(|w| w[0] <= w[1]), "{asr:?}");
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let mut cfg = small(ExperimentKind::FolhMga);
        cfg.repetitions = 2;
        let one = run_experiment(&ExperimentConfig { threads: Some(1), ..cfg.clone() }).unwrap();
        let four = run_experiment(&ExperimentConfig { threads: Some(4), ..cfg.clone() }).unwrap();
        assert_eq!(one.results, four.results);
        assert_eq!(one.manifest.threads, 1);
        assert_eq!(four.manifest.threads, 4);

        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for (i, t) in [1, 4].into_iter().enumerate() {
            let c = ExperimentConfig {
                threads: Some(t),
                output_dir: Some(dir.path().join(i.to_string())),
                ..cfg.clone()
            };
            run_experiment(&c).unwrap();
            bytes.push(std::fs::read(c.output_dir.unwrap().join("folh_mga.csv")).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
    }

    #[test]
    fn infeasible_rho_yields_failure_rows() {
        let mut cfg = small(ExperimentKind::FolhBia);
        cfg.epsilons = vec![2.0];
        cfg.rhos = vec![1.0, 1.05];
        cfg.repetitions = 2;
        let out = run_experiment(&cfg).unwrap();
        let failed: Vec<&BiaRow> = out.bia().iter().filter(|r| r.rho == Some(1.0)).collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|r| r.status == "infeasible_rho" && r.asr.is_none()));
        assert!(out.bia().iter().any(|r| r.rho == Some(1.05) && r.status == "ok"));
        let rec = out.manifest.points.iter().find(|p| p.rho == Some(1.0)).unwrap();
        assert!(rec.fully_failed(2));
        assert!(!out.manifest.all_points_failed());

        cfg.rhos = vec![1.0];
        cfg.olh_baseline = Some(false);
        assert!(run_experiment(&cfg).unwrap().manifest.all_points_failed());
    }

    #[test]
    fn distortion_without_attackers_is_plain_estimation() {
        let mut cfg = small(ExperimentKind::Distortion);
        cfg.epsilons = vec![1.0];
        cfg.rhos = vec![1.05];
        cfg.repetitions = 1;
        cfg.malicious_count = Some(0);
        let out = run_experiment(&cfg).unwrap();

        let data = DataSource::load(&cfg, None).unwrap();
        let ds = data.get(0);
        let d = ds.domain_size();
        let plain = |rho: Option<f64>| {
            let params = params_for(&cfg, 1.0, rho).unwrap();
            let enc = Encoder::new(params, d).unwrap();
            let reports: Vec<_> = ds
                .values()
                .iter()
                .enumerate()
                .map(|(u, &v)| enc.report(v, &mut user_rng(cfg.master_seed, 0, u as u64, purpose::REPORT)).unwrap())
                .collect();
            estimate_all(&reports, d, &params)
        };
        let (olh, folh) = (plain(None), plain(Some(1.05)));
        let rows: Vec<&DistortionRow> = out.distortion().iter().filter(|r| r.repetition != MEAN).collect();
        assert_eq!(rows.len(), d);
        for r in rows {
            assert_eq!(r.n_attackers, 0);
            assert!((r.f_olh_attacked - olh.values()[r.v as usize]).abs() < 1e-12);
            assert!((r.f_folh_attacked.unwrap() - folh.values()[r.v as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn writes_results_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(ExperimentKind::RhoAdvisor);
        cfg.sample_users = 500;
        cfg.output_dir = Some(dir.path().to_path_buf());
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.manifest.result_files, ["rho_advisor.csv"]);
        let text = std::fs::read_to_string(dir.path().join("rho_advisor.csv")).unwrap();
        assert!(text.starts_with("epsilon,domain_size,g,rho,p_min,p_max,p_avg,theoretical_avg,mean_draws,infeasible\n"));
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest["config"]["master_seed"], 0);
        assert_eq!(manifest["g_per_epsilon"][1]["g"], 21);
        assert_eq!(manifest["repetitions"].as_array().unwrap().len(), 3);
    }
}
