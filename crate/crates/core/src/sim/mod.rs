//! Simulation harness: data generators for the CRISPR-screen and GWAS
//! scenarios, multiple-testing procedures, and a seeded replication driver.

mod generate;
mod multiple;
mod replicate;

pub use generate::{
    sample_negbin, signal_pattern, simulate_crispr, simulate_gwas, CrisprParams, GwasData,
    GwasParams,
};
pub use multiple::{
    bh_adjust, bonferroni_adjust, effective_sample_size, false_discovery_proportion,
    true_positive_proportion, BhResult,
};
pub use replicate::{
    replicate_seed, run_replications, FdrSummary, MethodRecord, MethodSummary, RejectionSummary,
    ReplicateRecord, ReplicationConfig, ReplicationReport, Scenario,
};
