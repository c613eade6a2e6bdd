use nalgebra::{Rotation3, Vector3};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bounding_box_diameter, centroid, Point, PointSet, RigidTransform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// View angles in degrees, rotations about the y axis.
    pub angles: Vec<f64>,
    /// Inclusive range the inlier count of each view is drawn from.
    pub cardinality_range: [usize; 2],
    /// `None` disables noise.
    pub snr_db: Option<f64>,
    /// Outliers per view as a fraction of its inlier count.
    pub outlier_fraction: f64,
    pub outlier_cluster_count: usize,
    /// Outlier ball radius relative to the view's bounding-box diameter.
    pub outlier_radius_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            angles: vec![0.0, 10.0, 20.0, 30.0],
            cardinality_range: [1000, 2000],
            snr_db: Some(10.0),
            outlier_fraction: 0.3,
            outlier_cluster_count: 5,
            outlier_radius_scale: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.cardinality_range;
        if lo < 1 || hi < lo {
            return Err(Error::InvalidConfig(format!("cardinality range [{lo}, {hi}]")));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::InvalidConfig(format!(
                "outlier fraction must be in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        if self.outlier_fraction > 0.0 && self.outlier_cluster_count == 0 {
            return Err(Error::InvalidConfig("outliers need at least one cluster".into()));
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("view angles must be finite".into()));
        }
        if matches!(self.snr_db, Some(s) if s.is_nan()) {
            return Err(Error::InvalidConfig("snr_db is NaN".into()));
        }
        Ok(())
    }
}

/// True view-to-model transforms and per-point outlier labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub angles: Vec<f64>,
    pub transforms: Vec<RigidTransform>,
    pub outlier_labels: Vec<Vec<bool>>,
}

/// Rotation about the y axis by `degrees`.
pub fn rotation_y(degrees: f64) -> RigidTransform {
    RigidTransform {
        rotation: Rotation3::from_axis_angle(&Vector3::y_axis(), degrees.to_radians()).into_inner(),
        translation: Vector3::zeros(),
    }
}

/// Renders one view per angle: rotate about y, keep `z >= 0`, downsample to a
/// random cardinality, add Gaussian noise, then append clustered outliers.
pub fn synthesize_views(model_points: &[Point], cfg: &SynthConfig) -> Result<(Vec<PointSet>, GroundTruth)> {
    cfg.validate()?;
    if model_points.is_empty() {
        return Err(Error::InvalidPointSet("model has no points".into()));
    }
    if cfg.angles.is_empty() {
        return Err(Error::InvalidConfig("no view angles".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut views = Vec::with_capacity(cfg.angles.len());
    let mut truth = GroundTruth {
        angles: cfg.angles.clone(),
        transforms: Vec::new(),
        outlier_labels: Vec::new(),
    };
    for (j, &angle) in cfg.angles.iter().enumerate() {
        let pose = rotation_y(angle);
        let visible: Vec<Point> = model_points
            .iter()
            .map(|p| pose.apply(p))
            .filter(|p| p.z >= 0.0)
            .collect();
        if visible.is_empty() {
            return Err(Error::EmptyView(angle));
        }
        let [lo, hi] = cfg.cardinality_range;
        let n = rng.random_range(lo..=hi);
        let mut pts: Vec<Point> = if visible.len() > n {
            visible.choose_multiple(&mut rng, n).copied().collect()
        } else {
            if visible.len() < lo {
                log::warn!("view at {angle} deg has only {} visible points", visible.len());
            }
            visible
        };
        if let Some(snr) = cfg.snr_db {
            add_noise(&mut pts, snr, &mut rng)?;
        }
        let inliers = pts.len();
        let n_out = (cfg.outlier_fraction * inliers as f64).round() as usize;
        if n_out > 0 {
            let radius = cfg.outlier_radius_scale * bounding_box_diameter(&pts);
            let centers: Vec<Point> = pts
                .choose_multiple(&mut rng, cfg.outlier_cluster_count)
                .copied()
                .collect();
            for _ in 0..n_out {
                let c = centers.choose(&mut rng).expect("at least one center");
                pts.push(c + radius * uniform_in_ball(&mut rng));
            }
        }
        let mut labels = vec![false; inliers];
        labels.resize(pts.len(), true);
        views.push(PointSet::new(j, pts)?);
        truth.transforms.push(pose.inverse());
        truth.outlier_labels.push(labels);
    }
    Ok((views, truth))
}

/// Noise variance per coordinate for a signal of the given per-coordinate
/// power.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    signal_power / 10f64.powf(snr_db / 10.0)
}

/// Mean per-coordinate power of the centered points.
pub fn signal_power(points: &[Point]) -> f64 {
    let c = centroid(points);
    points.iter().map(|p| (p - c).norm_squared()).sum::<f64>() / (3.0 * points.len() as f64)
}

fn add_noise(points: &mut [Point], snr_db: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    if snr_db == f64::INFINITY {
        return Ok(());
    }
    let sd = noise_variance(signal_power(points), snr_db).sqrt();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Domain(format!("noise level: {e}")))?;
    for p in points.iter_mut() {
        *p += Point::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    }
    Ok(())
}

fn uniform_in_ball(rng: &mut ChaCha8Rng) -> Point {
    loop {
        let p = Point::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if p.norm_squared() <= 1.0 {
            return p;
        }
    }
}
