//! Synthetic views, evaluation metrics, outlier rejection and an ICP baseline.

pub mod classify;
pub mod icp;
pub mod metrics;
pub mod shapes;
pub mod synth;

pub use classify::{classify_components, export_scene_model, Classification};
pub use icp::{one_vs_all_icp, pairwise_icp, sequential_icp, IcpConfig, IcpResult};
pub use metrics::{mean_composition_angle, rotation_rmse, RotationErrors};
pub use shapes::blob_surface;
pub use synth::{synthesize_views, GroundTruth, SynthConfig};
