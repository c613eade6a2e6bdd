//! Plain point-to-point ICP, used as a baseline.

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{centroid, Point, PointSet, RigidTransform};
use crate::rigid::proper_rotation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the mean squared distance changes by less than this
    /// fraction.
    pub tolerance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    /// Best transform found, mapping data onto the model.
    pub transform: RigidTransform,
    /// Mean squared nearest-neighbor distance before each update.
    pub errors: Vec<f64>,
    /// The error rose three iterations in a row.
    pub diverged: bool,
}

struct NearestIndex {
    tree: ImmutableKdTree<f64, 3>,
    points: Vec<Point>,
}

impl NearestIndex {
    fn new(points: &[Point]) -> Self {
        let entries: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        Self {
            tree: ImmutableKdTree::new_from_slice(&entries).expect("nonempty point set"),
            points: points.to_vec(),
        }
    }

    fn nearest(&self, q: &Point) -> (Point, f64) {
        let hit = self
            .tree
            .query(&[q.x, q.y, q.z])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute();
        (self.points[hit.item as usize], hit.distance)
    }
}

/// Aligns centroids without rotating.
pub fn centroid_alignment(data: &PointSet, model: &PointSet) -> RigidTransform {
    RigidTransform::from_translation(model.centroid() - data.centroid())
}

/// Registers `data` onto `model`, starting from `init` (centroid alignment
/// when `None`).
pub fn pairwise_icp(
    data: &PointSet,
    model: &PointSet,
    init: Option<&RigidTransform>,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    let index = NearestIndex::new(model.points());
    let mut transform = init.copied().unwrap_or_else(|| centroid_alignment(data, model));
    let mut best = (f64::INFINITY, transform);
    let mut errors = Vec::new();
    let mut rising = 0;
    let mut diverged = false;
    let v_bar = data.centroid();
    let n = data.len() as f64;

    for _ in 0..cfg.max_iterations {
        let matches: Vec<Point> = data
            .points()
            .iter()
            .map(|v| index.nearest(&transform.apply(v)))
            .map(|(m, _)| m)
            .collect();
        let error = data
            .points()
            .iter()
            .zip(&matches)
            .map(|(v, m)| (transform.apply(v) - m).norm_squared())
            .sum::<f64>()
            / n;
        if !error.is_finite() {
            return Err(Error::Diverged {
                iteration: errors.len(),
                reason: "non-finite ICP error".into(),
            });
        }
        let previous = errors.last().copied();
        errors.push(error);
        if error < best.0 {
            best = (error, transform);
        }
        if let Some(prev) = previous {
            rising = if error > prev { rising + 1 } else { 0 };
            if rising >= 3 {
                diverged = true;
                break;
            }
            if (prev - error).abs() <= cfg.tolerance * prev {
                break;
            }
        }
        if error == 0.0 {
            break;
        }

        let m_bar = centroid(&matches);
        let mut cross = Matrix3::zeros();
        for (v, m) in data.points().iter().zip(&matches) {
            cross += (m - m_bar) * (v - v_bar).transpose();
        }
        let rotation = proper_rotation(&cross)?;
        transform = RigidTransform {
            rotation,
            translation: m_bar - rotation * v_bar,
        };
    }
    Ok(IcpResult {
        transform: best.1,
        errors,
        diverged,
    })
}

/// Chains pairwise registrations of each set onto its predecessor. `init`
/// holds rough absolute poses whose relative motion seeds each pair.
pub fn sequential_icp(
    sets: &[PointSet],
    init: Option<&[RigidTransform]>,
    cfg: &IcpConfig,
) -> Result<Vec<RigidTransform>> {
    if let Some(init) = init {
        if init.len() != sets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} initial transforms for {} sets",
                init.len(),
                sets.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(sets.len());
    if sets.is_empty() {
        return Ok(out);
    }
    out.push(init.map_or_else(RigidTransform::identity, |t| t[0]));
    for j in 1..sets.len() {
        let rel_init = init.map(|t| t[j - 1].inverse().compose(&t[j]));
        let r = pairwise_icp(&sets[j], &sets[j - 1], rel_init.as_ref(), cfg)?;
        if r.diverged {
            log::warn!("ICP of set {j} onto set {} diverged", j - 1);
        }
        out.push(out[j - 1].compose(&r.transform));
    }
    Ok(out)
}

/// Registers every set directly onto the first one.
pub fn one_vs_all_icp(sets: &[PointSet], cfg: &IcpConfig) -> Result<Vec<RigidTransform>> {
    let Some(first) = sets.first() else {
        return Ok(Vec::new());
    };
    let mut out = vec![RigidTransform::identity()];
    for s in &sets[1..] {
        out.push(pairwise_icp(s, first, None, cfg)?.transform);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rotation_angle;
    use crate::scene::shapes::blob_surface;
    use nalgebra::Vector3;

    fn blob(n: usize) -> PointSet {
        PointSet::new(0, blob_surface(n, 7)).unwrap()
    }

    #[test]
    fn identical_sets_give_identity() {
        let s = blob(800);
        let r = pairwise_icp(&s, &s, None, &IcpConfig::default()).unwrap();
        assert!(rotation_angle(&r.transform.rotation) < 1e-9);
        assert!(r.transform.translation.norm() < 1e-9);
        assert!(!r.diverged);
    }

    #[test]
    fn small_translation_is_recovered() {
        let model = blob(1500);
        let shift = Vector3::new(0.02, -0.01, 0.015);
        let data = PointSet::new(1, model.points().iter().map(|p| p + shift).collect()).unwrap();
        let init = RigidTransform::identity();
        let r = pairwise_icp(&data, &model, Some(&init), &IcpConfig::default()).unwrap();
        assert!((r.transform.translation + shift).norm() < 1e-6);
        assert!(rotation_angle(&r.transform.rotation) < 1e-6);
    }

    #[test]
    fn small_rotation_is_recovered() {
        let model = blob(1500);
        let t = RigidTransform::from_axis_angle(Vector3::new(0.2, 1.0, 0.1), 0.1, Vector3::new(0.01, 0.0, 0.0));
        let data = PointSet::new(1, model.transformed(&t)).unwrap();
        let r = pairwise_icp(&data, &model, Some(&RigidTransform::identity()), &IcpConfig::default()).unwrap();
        let residual = r.transform.compose(&t);
        assert!(rotation_angle(&residual.rotation) < 1e-6);
        assert!(residual.translation.norm() < 1e-6);
    }

    #[test]
    fn chained_registration_composes_relative_poses() {
        let model = blob(1200);
        let poses: Vec<RigidTransform> = (0..3)
            .map(|j| RigidTransform::from_axis_angle(Vector3::y(), 0.05 * j as f64, Vector3::zeros()))
            .collect();
        let sets: Vec<PointSet> = poses
            .iter()
            .enumerate()
            .map(|(j, p)| PointSet::new(j, model.transformed(&p.inverse())).unwrap())
            .collect();
        let est = sequential_icp(&sets, None, &IcpConfig::default()).unwrap();
        for (e, p) in est.iter().zip(&poses) {
            assert!(rotation_angle(&(e.rotation.transpose() * p.rotation)) < 1e-6);
        }
    }
}
