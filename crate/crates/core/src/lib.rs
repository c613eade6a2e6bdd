//! Joint rigid registration of multiple 3-D point sets.
//!
//! All points of all sets are treated as draws from one Gaussian mixture with
//! isotropic components plus a uniform outlier component. EM recovers one
//! rigid transform per set together with the mixture, whose means form a
//! registered, outlier-free model of the scene.
//!
//! - [`batch`]: the batch solver over all sets at once.
//! - [`incremental`]: integration of one new set against a frozen model, and a
//!   windowed pipeline for long sequences.
//! - [`init`]: starting transforms, means, variances and component counts.
//! - [`scene`]: synthetic views, metrics, component classification, and an
//!   ICP baseline.
//! - [`io`]: point files, configuration and run records.

pub mod batch;
pub mod error;
pub mod incremental;
pub mod init;
pub mod io;
pub mod model;
pub mod rigid;
pub mod scene;

pub use batch::{e_step, m_gmm_step, run_batch, BatchConfig, BatchResult, GmmUpdate};
pub use error::{Error, Result};
pub use model::{
    evaluate_objective, uniform_density, ComponentStats, MixtureModel, Point, PointSet,
    ResponsibilityMatrix, RigidTransform,
};
pub use rigid::{m_rigid_step, virtual_points, RigidStepStatistics};
