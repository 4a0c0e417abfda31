//! Post hoc false discovery proportion bounds for mass-univariate testing.
//!
//! The crate covers the full pipeline used on brain maps:
//!
//! * [`stats`] computes one- and two-sample t statistics and Student-t p-values.
//! * [`randomization`] builds sorted null p-value matrices by sign-flipping or
//!   label permutation.
//! * [`templates`] holds threshold families: the linear Simes family and
//!   learned templates made of quantile curves of training null p-values.
//! * [`calibration`] estimates the empirical joint error rate (JER) and picks
//!   the least conservative family that controls it.
//! * [`bounds`] turns a calibrated family into false-positive, FDP and TDP
//!   bounds on arbitrary voxel subsets, including the ARI baseline.
//! * [`clusters`] extracts supra-threshold clusters and reports TDP per cluster.
//! * [`simulator`] generates smooth random fields with known signal and runs
//!   FDP/TPR comparison experiments.

pub mod bounds;
pub mod calibration;
pub mod clusters;
pub mod error;
pub mod io;
pub mod randomization;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod templates;

pub use bounds::{
    ari_bound, benjamini_hochberg, false_positive_bound, hommel_value, largest_controlled_region,
    tdp_on_subset, AriContext, BoundReport, Region, VoxelSubset,
};
pub use calibration::{
    calibrate_learned, calibrate_simes, default_k_max, estimate_jer, notip_single_dataset,
    CalibratedFamily, Calibration, InferenceConfig, Method,
};
pub use clusters::{
    cluster_tdp_table, extract_clusters, Cluster, ClusterRow, ClusterTable, Connectivity, StatMap,
};
pub use error::{Error, Result};
pub use randomization::{randomized_pvalue_matrix, Design, NullPValueMatrix};
pub use simulator::{
    evaluate_run, experiment_driver, generate_ground_truth, simulate_dataset, simulate_run,
    ExperimentReport, GroundTruth, RunMetrics, SimulationConfig,
};
pub use stats::{
    one_sample_t, pvalue_to_z, t_to_pvalue, two_sample_t, Alternative, DataMatrix, TwoSampleDesign,
};
pub use templates::{learn_template, simes_family, LearnedTemplate, ThresholdFamily};
