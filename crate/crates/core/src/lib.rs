//! Coarse-grained leading forests and the training machinery built on them.
//!
//! * [`forest`] clusters the samples of each class into a forest of coarse
//!   nodes linked by density-peak leader relations.
//! * [`sampler`] turns forests into attribute-balanced sampling weights and
//!   environments.
//! * [`loss`] provides the multi-center and multi-center triplet losses with
//!   analytic gradients.
//! * [`noise`] flags likely label noise from forest structure and density.
//! * [`train`] runs the iterative environment-construction training loop on
//!   a toy linear model.

pub mod data;
pub mod density;
pub mod distance;
pub mod error;
pub mod fixtures;
pub mod forest;
pub mod loss;
pub mod noise;
pub mod params;
pub mod sampler;
pub mod train;

pub use data::FeatureMatrix;
pub use density::{compute_density, DensityVector};
pub use distance::{base_distance, pairwise_distances, DistanceMatrix, Metric};
pub use error::{Error, Result};
pub use forest::{build_class_forests, build_clf, forest_stats, BuiltForest, CLForest, CoarseNode, ForestStats};
pub use params::{ClfParams, EnvParams, LeaderRadius, NoiseParams, Radii, Radius};
pub use sampler::{
    attribute_weights, build_environment, draw_batch, generate_paths, resample_probs, Environment, PathSet,
    SampleWeights,
};
pub use loss::{extract_centers, mcl, mctl, Batch, CenterRef, CenterSet, ClassLoss, LossOutput};
pub use noise::{select_noise, NoiseEntry, NoiseReason, NoiseReport};
pub use train::{run_cognisance, run_cognisance_plus, toy_models, LossKind, TrainConfig, TrainHistory};
