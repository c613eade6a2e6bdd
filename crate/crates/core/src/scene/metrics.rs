use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rotation_angle, RigidTransform};

/// Frobenius rotation errors relative to the first set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationErrors {
    /// Mean of `per_set`.
    pub mean: f64,
    /// `|R1^T Rj (estimated) - R1^T Rj (true)|_F` for `j = 2..M`.
    pub per_set: Vec<f64>,
    /// Same error for the consecutive pairs `(j, j+1)`, `j >= 2`, whose
    /// relative rotation never involves the first set.
    pub indirect: Vec<f64>,
    pub indirect_mean: Option<f64>,
    /// Population standard deviation of `indirect`.
    pub indirect_std: Option<f64>,
}

fn check(estimated: &[RigidTransform], truth: &[RigidTransform]) -> Result<()> {
    if estimated.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated and {} true transforms",
            estimated.len(),
            truth.len()
        )));
    }
    Ok(())
}

fn relative(a: &RigidTransform, b: &RigidTransform) -> Matrix3<f64> {
    a.rotation.transpose() * b.rotation
}

/// Error of the estimated rotation from set `i` to set `j`.
pub fn pair_error(estimated: &[RigidTransform], truth: &[RigidTransform], i: usize, j: usize) -> f64 {
    (relative(&estimated[i], &estimated[j]) - relative(&truth[i], &truth[j])).norm()
}

pub fn mean_and_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn rotation_rmse(estimated: &[RigidTransform], truth: &[RigidTransform]) -> Result<RotationErrors> {
    check(estimated, truth)?;
    let m = estimated.len();
    if m < 2 {
        return Err(Error::DimensionMismatch(format!("rotation error needs >= 2 views, got {m}")));
    }
    let per_set: Vec<f64> = (1..m).map(|j| pair_error(estimated, truth, 0, j)).collect();
    let indirect: Vec<f64> = (1..m.saturating_sub(1))
        .map(|j| pair_error(estimated, truth, j, j + 1))
        .collect();
    let stats = mean_and_std(&indirect);
    Ok(RotationErrors {
        mean: per_set.iter().sum::<f64>() / per_set.len() as f64,
        per_set,
        indirect,
        indirect_mean: stats.map(|s| s.0),
        indirect_std: stats.map(|s| s.1),
    })
}

/// Mean over all sets of the angle (degrees) between the estimated and the
/// true rotation, both taken relative to the first set.
pub fn mean_composition_angle(estimated: &[RigidTransform], truth: &[RigidTransform]) -> Result<f64> {
    check(estimated, truth)?;
    if estimated.is_empty() {
        return Err(Error::DimensionMismatch("no transforms".into()));
    }
    let total: f64 = (0..estimated.len())
        .map(|j| {
            let e = relative(&estimated[0], &estimated[j]);
            let t = relative(&truth[0], &truth[j]);
            rotation_angle(&(e.transpose() * t)).to_degrees()
        })
        .sum();
    Ok(total / estimated.len() as f64)
}

/// Angle (degrees) of the estimated relative pose from set `i` to set `j`
/// against the true one.
pub fn relative_angle_error(estimated: &[RigidTransform], truth: &[RigidTransform], i: usize, j: usize) -> f64 {
    let e = relative(&estimated[i], &estimated[j]);
    let t = relative(&truth[i], &truth[j]);
    rotation_angle(&(e.transpose() * t)).to_degrees()
}
