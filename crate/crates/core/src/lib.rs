//! Cluster-average regression inference.
//!
//! Fit OLS separately within each cluster and average the coefficient
//! vectors. The resulting estimator, its sandwich variance `V̂_G` and the
//! Wald test built on it stay valid under arbitrary within-cluster
//! dependence, including clusters whose size dominates the sample, where
//! pooled OLS with a cluster-robust variance over-rejects badly.
//!
//! The crate also provides the superblock parameter-constancy test, a
//! pooled OLS baseline with its cluster-robust variance, CSV ingestion with
//! Engel-curve transforms, and the simulation engine used to study size and
//! power.
//!
//! ```
//! use cluster_infer::{cluster_average, vhat_cluster_average, wald_cluster_average};
//! use cluster_infer::{Cluster, ClusteredDataset, LinearHypothesis};
//! use nalgebra::{DMatrix, DVector};
//!
//! let make = |id: &str, slope: f64| {
//!     let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
//!     let y = DVector::from_vec(vec![1.0, 1.0 + slope, 1.0 + 2.0 * slope]);
//!     Cluster::new(id, x, y).unwrap()
//! };
//! let ds = ClusteredDataset::new(vec![make("a", 0.4), make("b", 0.6)], None).unwrap();
//! let avg = cluster_average(&ds).unwrap();
//! assert!((avg.beta_bar_hat[1] - 0.5).abs() < 1e-12);
//!
//! let vhat = vhat_cluster_average(&avg, &ds).unwrap();
//! let hyp = LinearHypothesis::parse("0 1; 0.5", 2).unwrap();
//! let test = wald_cluster_average(&avg, &vhat, &hyp).unwrap();
//! assert!(test.statistic.abs() < 1e-12);
//! ```

pub mod covariance;
pub mod dataset;
pub mod dgp;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod hypothesis;
pub mod linalg;
pub mod montecarlo;
pub mod rng;

pub use covariance::{
    crve_pols, vhat_cluster_average, vhat_superblock, CovarianceEstimate, CovarianceKind,
    CrveCorrection,
};
pub use dataset::{
    apply_model_spec, engel_dataset, load_csv, load_csv_reader, read_engel_table, read_table,
    Cluster, ClusteredDataset, CsvSchema, EngelColumns, EngelModel, EngelSchema, ModelSpec,
    RawTable, SuperblockGroup,
};
pub use dgp::{
    build_design, gen_dataset, CoefficientDistribution, DependenceKind, DgpConfig, FrozenDesign,
    Heterogeneity, RegressorScheme,
};
pub use error::{Error, ErrorCategory, Result};
pub use estimators::{
    cluster_average, fit_cluster, pols_fit, superblock_averages, AverageEstimate, ClusterFit,
    PolsEstimate, PreparedDesign, SuperblockEstimate,
};
pub use hypothesis::{
    constancy_test, constancy_test_from, superblock_constancy, wald_cluster_average, wald_pols,
    ConstancyOutcome, LinearHypothesis, Reference, Tail, TestResult,
};
pub use montecarlo::{
    run_constancy, run_size_power, summarize, Cell, McConfig, McReport, MethodRates, Protocol,
    Rate, SummaryTable,
};
