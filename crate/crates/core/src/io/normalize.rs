use serde::{Deserialize, Serialize};

use crate::model::{bounding_box_diameter, centroid, MixtureModel, Point, PointSet, RigidTransform};

/// Maps original coordinates to `(v - center) / scale`, with `scale` the
/// bounding-box diameter of all sets together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: Point,
    pub scale: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            center: Point::zeros(),
            scale: 1.0,
        }
    }

    pub fn from_sets(sets: &[PointSet]) -> Self {
        let all: Vec<Point> = sets.iter().flat_map(|s| s.points().iter().copied()).collect();
        if all.is_empty() {
            return Self::identity();
        }
        let scale = bounding_box_diameter(&all);
        Self {
            center: centroid(&all),
            scale: if scale > 0.0 { scale } else { 1.0 },
        }
    }

    pub fn normalize_point(&self, p: &Point) -> Point {
        (p - self.center) / self.scale
    }

    pub fn denormalize_point(&self, p: &Point) -> Point {
        self.scale * p + self.center
    }

    pub fn normalize_set(&self, set: &PointSet) -> PointSet {
        PointSet::new(set.id(), set.points().iter().map(|p| self.normalize_point(p)).collect())
            .expect("normalization keeps points finite")
    }

    /// A transform between normalized frames expressed in original units.
    pub fn denormalize_transform(&self, t: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: t.rotation,
            translation: self.scale * t.translation + self.center - t.rotation * self.center,
        }
    }

    pub fn normalize_transform(&self, t: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: t.rotation,
            translation: (t.translation - self.center + t.rotation * self.center) / self.scale,
        }
    }

    /// Means and variances in original units.
    pub fn denormalize_model(&self, model: &MixtureModel) -> MixtureModel {
        let mut out = model.clone();
        for m in &mut out.means {
            *m = self.denormalize_point(m);
        }
        let s2 = self.scale * self.scale;
        for v in &mut out.variances {
            *v *= s2;
        }
        out.volume *= s2 * self.scale;
        out.epsilon *= self.scale;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn denormalized_transform_acts_on_original_points() {
        let a = PointSet::new(0, vec![Point::new(10.0, 0.0, 0.0), Point::new(12.0, 3.0, 1.0), Point::new(9.0, -1.0, 4.0)]).unwrap();
        let n = Normalization::from_sets(std::slice::from_ref(&a));
        let t_n = RigidTransform::from_axis_angle(Vector3::new(1.0, 2.0, 3.0), 0.7, Vector3::new(0.1, -0.2, 0.05));
        let t = n.denormalize_transform(&t_n);
        for v in a.points() {
            let expected = n.denormalize_point(&t_n.apply(&n.normalize_point(v)));
            assert!((t.apply(v) - expected).norm() < 1e-12);
        }
        let back = n.normalize_transform(&t);
        assert!((back.translation - t_n.translation).norm() < 1e-12);
    }

    #[test]
    fn normalized_union_has_unit_diameter() {
        let a = PointSet::new(0, vec![Point::new(100.0, 0.0, 0.0), Point::new(103.0, 4.0, 0.0)]).unwrap();
        let n = Normalization::from_sets(std::slice::from_ref(&a));
        assert_eq!(n.scale, 5.0);
        let pts = n.normalize_set(&a);
        assert!((bounding_box_diameter(pts.points()) - 1.0).abs() < 1e-12);
    }
}
