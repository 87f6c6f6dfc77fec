use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::datasets::DatasetSummary;
use crate::error::{Error, Result};
use crate::protocols::SelectionRoute;

use super::config::{ExperimentConfig, Protocol};
use super::sweep::{status_of, SweepPoint};

pub const SOFTWARE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailureRecord {
    /// `None` when the whole point failed before any repetition ran.
    pub repetition: Option<usize>,
    pub status: String,
    pub message: String,
}

/// What happened at one sweep point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PointRecord {
    pub epsilon: f64,
    pub rho: Option<f64>,
    pub protocol: Protocol,
    pub g: u32,
    pub domain_size: Option<usize>,
    pub route: Option<SelectionRoute>,
    /// Compliant seeds found when the hash family was indexed.
    pub indexed_members: Option<usize>,
    pub failures: Vec<FailureRecord>,
    pub wall_seconds: f64,
}

impl PointRecord {
    pub(crate) fn new(point: SweepPoint, g: u32) -> Self {
        PointRecord {
            epsilon: point.epsilon,
            rho: point.rho,
            protocol: point.protocol(),
            g,
            domain_size: None,
            route: None,
            indexed_members: None,
            failures: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub(crate) fn fail(&mut self, repetition: Option<usize>, e: &Error) {
        self.failures.push(FailureRecord {
            repetition,
            status: status_of(e).into(),
            message: e.to_string(),
        });
    }

    /// Status of the most recent failure.
    pub(crate) fn last_status(&self) -> Option<&str> {
        self.failures.last().map(|f| f.status.as_str())
    }

    /// True when the point produced no results at all.
    pub fn fully_failed(&self, repetitions: usize) -> bool {
        self.failures.iter().any(|f| f.repetition.is_none()) || self.failures.len() >= repetitions
    }

    pub(crate) fn finish(mut self, started: Instant) -> Self {
        self.wall_seconds = started.elapsed().as_secs_f64();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonG {
    pub epsilon: f64,
    pub g: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepetitionRecord {
    pub repetition: usize,
    /// Seed of the dataset generator stream; `None` for datasets read from disk.
    pub dataset_seed: Option<u64>,
    pub dataset: DatasetSummary,
}

/// Everything needed to rerun a sweep: the resolved config (which carries the
/// master seed), derived parameters and where the time went.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub software_version: String,
    pub config: ExperimentConfig,
    pub g_per_epsilon: Vec<EpsilonG>,
    pub repetitions: Vec<RepetitionRecord>,
    pub points: Vec<PointRecord>,
    pub result_files: Vec<String>,
    pub threads: usize,
    pub total_wall_seconds: f64,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
    }

    /// True when at least one point ran and every point failed.
    pub fn all_points_failed(&self) -> bool {
        let reps = self.config.repetitions;
        !self.points.is_empty() && self.points.iter().all(|p| p.fully_failed(reps))
    }
}
