use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{IngestOptions, DEFAULT_DOMAIN, DEFAULT_USERS, GAUSSIAN_MU, GAUSSIAN_SIGMA};
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_ADVISOR_USERS, DEFAULT_RHO_CANDIDATES};
use crate::populations::DEFAULT_FRACTION;
use crate::protocols::{HashFamily, DEFAULT_MAX_DRAWS};

pub const DEFAULT_EPSILONS: [f64; 4] = [0.5, 1.0, 2.0, 3.0];
pub const DEFAULT_KAPPA: u64 = 1000;
pub const DEFAULT_REPETITIONS: usize = 10;
pub const DEFAULT_MALICIOUS_FRACTION: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentKind {
    BiaDisparity,
    MgaDisparity,
    FolhBia,
    FolhMga,
    Timing,
    Distortion,
    RhoAdvisor,
}

impl ExperimentKind {
    /// Base name of the result CSV.
    pub fn file_stem(self) -> &'static str {
        match self {
            ExperimentKind::BiaDisparity => "bia_disparity",
            ExperimentKind::MgaDisparity => "mga_disparity",
            ExperimentKind::FolhBia => "folh_bia",
            ExperimentKind::FolhMga => "folh_mga",
            ExperimentKind::Timing => "timing",
            ExperimentKind::Distortion => "distortion",
            ExperimentKind::RhoAdvisor => "rho_advisor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Protocol {
    Olh,
    Folh,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DatasetKind {
    #[default]
    Gaussian,
    Uniform,
    /// A canonical dataset file.
    File,
    /// A raw file read with `ingest` options.
    Ingest,
}

/// Users an MGA run draws its attackers from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackerPool {
    HighEnt,
    LowPis,
    HighPis,
    All,
}

impl AttackerPool {
    pub fn name(self) -> &'static str {
        match self {
            AttackerPool::HighEnt => "HIGH_ENT",
            AttackerPool::LowPis => "LOW_PIS",
            AttackerPool::HighPis => "HIGH_PIS",
            AttackerPool::All => "ALL",
        }
    }

    pub(crate) fn tag(self) -> u64 {
        match self {
            AttackerPool::HighEnt => 0,
            AttackerPool::LowPis => 1,
            AttackerPool::HighPis => 2,
            AttackerPool::All => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MgaMode {
    /// Attackers keep the hash they were assigned and report its best bucket.
    FixedHash,
    /// Attackers search `kappa` hashes (compliant ones under F-OLH).
    FreeSearch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvisorSource {
    #[default]
    Uniform,
    Dataset,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TargetsRepr", into = "TargetsRepr")]
pub enum Targets {
    #[default]
    All,
    List(Vec<u32>),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetsRepr {
    Keyword(String),
    List(Vec<u32>),
}

impl TryFrom<TargetsRepr> for Targets {
    type Error = String;

    fn try_from(r: TargetsRepr) -> std::result::Result<Self, String> {
        match r {
            TargetsRepr::Keyword(k) if k.eq_ignore_ascii_case("all") => Ok(Targets::All),
            TargetsRepr::Keyword(k) => Err(format!("targets must be \"ALL\" or a list of items, got {k:?}")),
            TargetsRepr::List(v) if v.is_empty() => Err("target list is empty".into()),
            TargetsRepr::List(v) => Ok(Targets::List(v)),
        }
    }
}

impl From<Targets> for TargetsRepr {
    fn from(t: Targets) -> Self {
        match t {
            Targets::All => TargetsRepr::Keyword("ALL".into()),
            Targets::List(v) => TargetsRepr::List(v),
        }
    }
}

impl Targets {
    pub fn resolve(&self, domain_size: usize) -> Result<Vec<u32>> {
        match self {
            Targets::All => Ok((0..domain_size as u32).collect()),
            Targets::List(v) => {
                if let Some(t) = v.iter().find(|&&t| t as usize >= domain_size) {
                    return Err(Error::Config(format!("target {t} outside domain of size {domain_size}")));
                }
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                Ok(v)
            }
        }
    }
}

/// A declarative experiment sweep. Every field can be given by name in a
/// JSON object; omitted fields take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,

    #[serde(default)]
    pub dataset: DatasetKind,
    #[serde(default = "d_mu")]
    pub mu: f64,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_users")]
    pub n_users: usize,
    #[serde(default = "d_domain")]
    pub domain_size: usize,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub ingest: Option<IngestOptions>,

    #[serde(default = "d_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "d_rhos")]
    pub rhos: Vec<f64>,
    /// Defaults to OLH for the disparity kinds and F-OLH otherwise.
    #[serde(default)]
    pub protocol: Option<Protocol>,
    /// Adds an OLH row next to the F-OLH sweep (default on for FOLH_* kinds).
    #[serde(default)]
    pub olh_baseline: Option<bool>,

    #[serde(default = "d_one")]
    pub n_observations: usize,
    #[serde(default)]
    pub malicious_count: Option<usize>,
    #[serde(default = "d_malicious_fraction")]
    pub malicious_fraction: f64,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default = "d_kappa")]
    pub kappa: u64,
    /// Defaults to fixed_hash, except free_search for DISTORTION.
    #[serde(default)]
    pub mga_mode: Option<MgaMode>,
    /// Defaults to ALL for DISTORTION and the three subpopulations otherwise.
    #[serde(default)]
    pub attacker_groups: Option<Vec<AttackerPool>>,

    #[serde(default = "d_repetitions")]
    pub repetitions: usize,
    #[serde(default = "d_fraction")]
    pub subpopulation_fraction: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,

    /// Overrides the output-space size derived from epsilon.
    #[serde(default)]
    pub g: Option<u32>,
    #[serde(default = "d_max_draws")]
    pub max_draws: u64,
    /// Restricts hash seeds to `0..size`.
    #[serde(default)]
    pub hash_family_size: Option<u64>,

    /// Domain sizes swept by TIMING and RHO_ADVISOR (generated data only).
    #[serde(default)]
    pub domain_sizes: Option<Vec<usize>>,
    #[serde(default = "d_sample_users")]
    pub sample_users: usize,
    #[serde(default)]
    pub advisor_source: AdvisorSource,

    /// Writes per-user attack and assignment CSVs under `users/`.
    #[serde(default)]
    pub emit_user_rows: bool,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn d_mu() -> f64 {
    GAUSSIAN_MU
}
fn d_sigma() -> f64 {
    GAUSSIAN_SIGMA
}
fn d_users() -> usize {
    DEFAULT_USERS
}
fn d_domain() -> usize {
    DEFAULT_DOMAIN
}
fn d_epsilons() -> Vec<f64> {
    DEFAULT_EPSILONS.to_vec()
}
fn d_rhos() -> Vec<f64> {
    DEFAULT_RHO_CANDIDATES.to_vec()
}
fn d_one() -> usize {
    1
}
fn d_malicious_fraction() -> f64 {
    DEFAULT_MALICIOUS_FRACTION
}
fn d_kappa() -> u64 {
    DEFAULT_KAPPA
}
fn d_repetitions() -> usize {
    DEFAULT_REPETITIONS
}
fn d_fraction() -> f64 {
    DEFAULT_FRACTION
}
fn d_max_draws() -> u64 {
    DEFAULT_MAX_DRAWS
}
fn d_sample_users() -> usize {
    DEFAULT_ADVISOR_USERS
}

impl ExperimentConfig {
    /// A config of the given kind with every other field at its default.
    pub fn new(kind: ExperimentKind) -> Self {
        let json = serde_json::json!({ "kind": kind });
        serde_json::from_value(json).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol.unwrap_or(match self.kind {
            ExperimentKind::BiaDisparity | ExperimentKind::MgaDisparity => Protocol::Olh,
            _ => Protocol::Folh,
        })
    }

    pub fn olh_baseline(&self) -> bool {
        self.olh_baseline
            .unwrap_or(matches!(self.kind, ExperimentKind::FolhBia | ExperimentKind::FolhMga))
    }

    pub fn mga_mode(&self) -> MgaMode {
        self.mga_mode.unwrap_or(match self.kind {
            ExperimentKind::Distortion => MgaMode::FreeSearch,
            _ => MgaMode::FixedHash,
        })
    }

    pub fn attacker_groups(&self) -> Vec<AttackerPool> {
        self.attacker_groups.clone().unwrap_or_else(|| match self.kind {
            ExperimentKind::Distortion => vec![AttackerPool::All],
            _ => vec![AttackerPool::HighEnt, AttackerPool::LowPis, AttackerPool::HighPis],
        })
    }

    pub fn family(&self) -> HashFamily {
        self.hash_family_size
            .map_or(HashFamily::Full, |size| HashFamily::Finite { size })
    }

    /// Attackers per run out of `n_users` honest users.
    pub fn attackers_for(&self, n_users: usize) -> usize {
        self.malicious_count
            .unwrap_or_else(|| (self.malicious_fraction * n_users as f64).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1".into());
        }
        if self.epsilons.is_empty() {
            return bad("epsilons must not be empty".into());
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0)) {
            return bad(format!("epsilon entries must be > 0, got {e}"));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(**r >= 1.0)) {
            return bad(format!("rho entries must be >= 1, got {r}"));
        }
        let needs_rhos = self.protocol() == Protocol::Folh
            && !matches!(self.kind, ExperimentKind::RhoAdvisor);
        if needs_rhos && self.rhos.is_empty() {
            return bad("F-OLH sweeps need a non-empty rho list".into());
        }
        if !(self.subpopulation_fraction > 0.0 && self.subpopulation_fraction <= 1.0) {
            return bad(format!("subpopulation_fraction must be in (0, 1], got {}", self.subpopulation_fraction));
        }
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return bad(format!("malicious_fraction must be in [0, 1], got {}", self.malicious_fraction));
        }
        if self.n_observations == 0 {
            return bad("n_observations must be >= 1".into());
        }
        if self.kappa == 0 {
            return bad("kappa must be >= 1".into());
        }
        if self.max_draws == 0 {
            return bad("max_draws must be >= 1".into());
        }
        if self.hash_family_size == Some(0) {
            return bad("hash_family_size must be >= 1".into());
        }
        if matches!(self.g, Some(g) if g < 2) {
            return bad("g must be >= 2".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        match self.dataset {
            DatasetKind::Gaussian | DatasetKind::Uniform => {
                if self.n_users == 0 || self.domain_size == 0 {
                    return bad("n_users and domain_size must be >= 1".into());
                }
                if !(self.sigma >= 0.0) {
                    return bad(format!("sigma must be >= 0, got {}", self.sigma));
                }
            }
            DatasetKind::File => {
                if self.dataset_path.is_none() {
                    return bad("dataset FILE needs dataset_path".into());
                }
            }
            DatasetKind::Ingest => {
                if self.dataset_path.is_none() || self.ingest.is_none() {
                    return bad("dataset INGEST needs dataset_path and ingest".into());
                }
            }
        }
        if let Some(ds) = &self.domain_sizes {
            if ds.is_empty() || ds.contains(&0) {
                return bad("domain_sizes entries must be >= 1".into());
            }
            if !matches!(self.dataset, DatasetKind::Gaussian | DatasetKind::Uniform) {
                return bad("domain_sizes needs a generated dataset".into());
            }
        }
        if self.kind == ExperimentKind::RhoAdvisor && self.sample_users < 100 {
            return bad("sample_users must be >= 100".into());
        }
        if let Some(groups) = &self.attacker_groups {
            if groups.is_empty() {
                return bad("attacker_groups must not be empty".into());
            }
        }
        Ok(())
    }
}
