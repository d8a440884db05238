//! Deterministic experiments over a simulated overlay.

mod metrics;
mod scenarios;
mod world;

pub use metrics::{export_report, Aggregates, Format, MetricsReport, Summary, TrialRecord, CSV_HEADER};
pub use scenarios::{
    check_invariants, measure_connection, measure_session_survival, run_experiment, setup_pair, synthetic_blob, Churn,
    ConnectionOutcome, ExperimentConfig, HarnessError, Peer, Scenario, SurvivalOutcome, BLOB_LEN, CONNECT_TIMEOUT_MS,
    KEEPALIVE_MS,
};
pub use world::{ClientRef, SimWorld, WorldError};
