//! Post-hoc uncertainty layer for pretrained classifiers.
//!
//! Fits one diagonal Gaussian per class over activation vectors ("KAVs") in
//! a single pass, then labels test activations *certain*, *uncertain* or
//! *outlier* from their Mahalanobis distances to the two candidate classes.
//!
//! Modules:
//! - [`kav_store`]: dataset model and the binary / CSV / score file formats
//! - [`stats`]: streaming moment accumulation and the fitted model
//! - [`members`]: per-class nearest training records
//! - [`geometry`]: Mahalanobis, joint-Gaussian and Bhattacharyya distances
//! - [`decision`]: the three-way verdict
//! - [`eval`]: AUROC, rates, accuracy and noise sweeps

pub mod decision;
pub mod error;
pub mod eval;
pub mod fmt;
pub mod geometry;
pub mod kav_store;
pub mod members;
pub mod stats;

pub use decision::{
    decide, decide_batch, select_top2, Category, DecisionConfig, Orientation, Top2Source, Verdict,
};
pub use error::{Error, Result};
pub use eval::{accuracy, auroc, outlier_rate, sweep_report, RocCurve, SweepLevel, SweepReport};
pub use geometry::{
    bhattacharyya_diag, joint_distance, joint_stats, mahalanobis_diag, outlier_threshold,
    overlap_matrix, JointStats, OverlapMatrix,
};
pub use kav_store::{read_kav, read_kav_csv, write_kav, ClassId, KavDataset, KavRecord, ScoreRow};
pub use members::{build_member_store, MemberStore};
pub use stats::{
    fit, fit_dataset, fit_sharded, ClassAccumulators, ClassStats, FittedModel, MomentAccumulator,
};
