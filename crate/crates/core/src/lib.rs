pub mod error;
pub mod hashing;
pub mod attacks;
pub mod protocols;
pub mod populations;
pub mod datasets;
pub mod seeding;
pub mod metrics;
pub mod harness;

pub use attacks::{bia_predict, gain, mga_craft, AttackOutcome, BiaAttacker, CraftedReport, ObservationSet};
pub use datasets::{gen_gaussian, gen_uniform, ingest_csv, read_canonical, write_canonical, Dataset, IngestOptions};
pub use error::{Error, Result};
pub use hashing::{entropy, fairness_ratio, hash_bucket, DomainHasher, FairnessGate, HashFn, HashSeed};
pub use harness::{run_experiment, ExperimentConfig, ExperimentKind, RunManifest, RunOutput};
pub use metrics::{asr, l1, preimage_stats, rho_advisor, uloss, PreimageStats};
pub use populations::{assign_subpopulations, Group, SubpopulationAssignment, UserRecord};
pub use protocols::{
    derive_g, estimate_all, estimate_frequency, folh_report, olh_report, Encoder, FrequencyTable, HashFamily,
    ProtocolParams, Report, SelectionRoute,
};
