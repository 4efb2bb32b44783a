//! Outlier-robust rejection ABC built on k-nearest-neighbour estimates of
//! the γ-divergence.
//!
//! * [`neighbors`]: point sets and exact KD-tree k-NN distances.
//! * [`divergence`]: γ-divergence, KL and MMD estimators and Monte-Carlo truth.
//! * [`simulators`]: the benchmark models and outlier injection.
//! * [`abc`]: the rejection sampler and tolerance calibration.
//! * [`evaluation`]: KDE-MAP, energy distance, MSE and the benchmark driver.

pub mod abc;
pub mod divergence;
pub mod error;
pub mod evaluation;
pub mod neighbors;
pub mod simulators;
pub mod stream;

pub use abc::{
    calibrate_epsilon, rejection_abc, run_grid, AbcConfig, AbcPosterior, Budget, Discrepancy,
    DiscrepancySpec, Tolerance,
};
pub use divergence::{
    gamma_divergence_density_path, gamma_divergence_knn, kl_divergence_knn,
    median_heuristic_bandwidth, mmd_u_squared, DensityModel, DivergenceParams, Gaussian,
    TrueDivergence,
};
pub use error::{Error, Result};
pub use evaluation::{energy_distance, kde_map, mse, run_benchmark, BenchmarkConfig, ExperimentReport, KdeConfig};
pub use neighbors::{build_index, knn_cross, knn_within, PointSet, SpatialIndex};
pub use simulators::{contaminate, ContaminationSpec, ModelId, ModelSpec, Simulator, Theta};
pub use stream::{RngStream, StreamRng};
