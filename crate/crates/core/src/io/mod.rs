//! Point files, configuration and run records.

mod config;
mod formats;
mod normalize;
mod record;

pub use config::{load_config, Config, SEED_ENV};
pub use formats::{
    parse_ply, parse_point_file, parse_points, parse_xyz, read_points, write_ply, write_point_file, write_xyz,
    PointFormat,
};
pub use normalize::Normalization;
pub use record::{Metrics, MixtureSummary, RunRecord, SigmaHistogram, TransformRecord, TruthRecord};
