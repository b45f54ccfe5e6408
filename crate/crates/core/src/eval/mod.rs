//! Anytime-prediction analyses over rollout traces.

pub mod anytime;
pub mod episodes;
pub mod knowledge;
pub mod noise;

pub use anytime::{
    deadline_accuracy, latency_csv, latency_rows, selection_latency, speed_accuracy_curve,
    stop_time, theta_grid, CurvePoint, LatencyRow, SpeedAccuracyCurve, StoppingPolicy,
    CURVE_HEADER, LATENCY_HEADER,
};
pub use episodes::{
    dip, noise_csv, noisy_frames, noisy_traces, persistent_accuracy, transient_dip,
    transient_episode, Episode, NoiseRow, NoiseRun, Protocol, CLEAN_STEPS, NOISE_HEADER,
};
pub use knowledge::{
    average_ranks, centrality, compliance_csv, spearman_rho, taxonomic_compliance,
    COMPLIANCE_HEADER,
};
pub use noise::{apply_noise, NoiseKind, NoiseSpec};
