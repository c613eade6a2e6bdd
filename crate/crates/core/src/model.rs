//! Domain types shared by the batch and incremental EM solvers.
//!
//! Every point set lives in its own set-centered frame; a [`RigidTransform`]
//! maps it into the frame of the shared [`MixtureModel`]. Responsibilities are
//! stored per set as dense `N_j x (K+1)` row-major matrices whose last column
//! is the uniform outlier component.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// One view's samples, expressed in its own frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    id: usize,
    points: Vec<Point>,
}

impl PointSet {
    pub fn new(id: usize, points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidPointSet(format!("set {id} is empty")));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidPointSet(format!(
                "set {id} has a non-finite coordinate at point {i}"
            )));
        }
        Ok(Self { id, points })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn centroid(&self) -> Point {
        centroid(&self.points)
    }

    /// Points mapped through `transform`.
    pub fn transformed(&self, transform: &RigidTransform) -> Vec<Point> {
        self.points.iter().map(|p| transform.apply(p)).collect()
    }
}

/// Total number of points across all sets.
pub fn total_points(sets: &[PointSet]) -> usize {
    sets.iter().map(PointSet::len).sum()
}

pub fn centroid(points: &[Point]) -> Point {
    if points.is_empty() {
        return Point::zeros();
    }
    points.iter().fold(Point::zeros(), |acc, p| acc + p) / points.len() as f64
}

/// Axis-aligned bounding box `(min, max)`; `None` for an empty slice.
pub fn bounding_box(points: &[Point]) -> Option<(Point, Point)> {
    let first = points.first()?;
    Some(points.iter().fold((*first, *first), |(lo, hi), p| {
        (lo.inf(p), hi.sup(p))
    }))
}

/// Diagonal length of the axis-aligned bounding box.
pub fn bounding_box_diameter(points: &[Point]) -> f64 {
    bounding_box(points).map_or(0.0, |(lo, hi)| (hi - lo).norm())
}

/// Median with the mean of the two middle values for even lengths.
/// Reorders `values`. Returns NaN for an empty slice.
pub fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

/// Rotation followed by translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validating constructor: `R` must be orthonormal with `det(R) = +1`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Domain("non-finite translation".into()));
        }
        if !t.is_valid(ROTATION_TOLERANCE) {
            return Err(Error::Domain(format!(
                "matrix is not a proper rotation: {rotation}"
            )));
        }
        Ok(t)
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).matrix()
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Row-major rotation entries followed by the translation.
    pub fn to_row_major(&self) -> ([f64; 9], [f64; 3]) {
        let r = &self.rotation;
        (
            [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            [self.translation.x, self.translation.y, self.translation.z],
        )
    }

    pub fn from_row_major(rotation: &[f64; 9], translation: &[f64; 3]) -> Result<Self> {
        Self::new(
            Matrix3::from_row_slice(rotation),
            Vector3::from_column_slice(translation),
        )
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let r = &self.rotation;
        if !r.iter().all(|c| c.is_finite()) {
            return false;
        }
        let gram = r.transpose() * r - Matrix3::identity();
        gram.iter().all(|e| e.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
    }

    /// Geodesic angle of the rotation part, radians in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

/// Geodesic angle of a rotation matrix, radians in `[0, pi]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    // acos is ill-conditioned near 0, so use atan2 of the skew part.
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin2 = skew.norm();
    let cos2 = r.trace() - 1.0;
    sin2.atan2(cos2)
}

/// Gaussian components with isotropic variances plus a uniform outlier term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub means: Vec<Point>,
    /// Isotropic variances; `Sigma_k = variances[k] * I`.
    pub variances: Vec<f64>,
    /// `K + 1` priors, last entry belongs to the uniform component.
    pub priors: Vec<f64>,
    /// Outlier-to-inlier ratio.
    pub gamma: f64,
    /// Volume of the region the uniform component spans.
    pub volume: f64,
    /// Variances never drop below `epsilon^2`.
    pub epsilon: f64,
    /// Components that received no mass in the last M-step.
    #[serde(default)]
    pub degenerate: Vec<bool>,
}

/// Volume of a sphere of radius 0.5, the default uniform-component support
/// for data normalized to unit diameter.
pub const DEFAULT_VOLUME: f64 = std::f64::consts::PI / 6.0;
pub const DEFAULT_EPSILON: f64 = 1e-3;

impl MixtureModel {
    /// Model with priors initialized to `1/(K+1)`.
    pub fn new(
        means: Vec<Point>,
        variances: Vec<f64>,
        gamma: f64,
        volume: f64,
        epsilon: f64,
    ) -> Result<Self> {
        let k = means.len();
        let model = Self {
            priors: vec![1.0 / (k as f64 + 1.0); k + 1],
            degenerate: vec![false; k],
            means,
            variances,
            gamma,
            volume,
            epsilon,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn num_components(&self) -> usize {
        self.means.len()
    }

    pub fn variance_floor(&self) -> f64 {
        self.epsilon * self.epsilon
    }

    pub fn outlier_prior(&self) -> f64 {
        self.priors[self.means.len()]
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 {
            return Err(Error::DimensionMismatch("mixture has no components".into()));
        }
        if self.variances.len() != k || self.priors.len() != k + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{k} means, {} variances, {} priors",
                self.variances.len(),
                self.priors.len()
            )));
        }
        if self.degenerate.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{k} means but {} degenerate flags",
                self.degenerate.len()
            )));
        }
        if let Some(s) = self.variances.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!("variance must be positive, got {s}")));
        }
        if self.priors.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain("priors must be nonnegative".into()));
        }
        let sum: f64 = self.priors.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("priors sum to {sum}, expected 1")));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Domain(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.volume > 0.0 && self.volume.is_finite()) {
            return Err(Error::Domain(format!("volume must be > 0, got {}", self.volume)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain("epsilon must be > 0".into()));
        }
        if self.means.iter().any(|m| !m.iter().all(|c| c.is_finite())) {
            return Err(Error::Domain("non-finite mean".into()));
        }
        Ok(())
    }

    /// Left-applies `g` to every mean.
    pub fn transformed(&self, g: &RigidTransform) -> Self {
        let mut out = self.clone();
        for m in &mut out.means {
            *m = g.apply(m);
        }
        out
    }
}

/// Constant density contributed by the uniform component in the E-step
/// denominator: `gamma / (h (gamma + 1))`.
pub fn uniform_density(model: &MixtureModel) -> Result<f64> {
    uniform_term(model.gamma, model.volume)
}

pub(crate) fn uniform_term(gamma: f64, volume: f64) -> Result<f64> {
    if !(volume > 0.0) {
        return Err(Error::Domain(format!("volume must be > 0, got {volume}")));
    }
    if !(gamma >= 0.0) {
        return Err(Error::Domain(format!("gamma must be >= 0, got {gamma}")));
    }
    Ok(gamma / (volume * (gamma + 1.0)))
}

/// Posteriors of one set: `N_j` rows of `K + 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix {
    set_id: usize,
    components: usize,
    data: Vec<f64>,
    /// Rows where every Gaussian term underflowed and no outlier term existed.
    pub underflow_rows: usize,
}

impl ResponsibilityMatrix {
    /// Builds from row-major data with `K + 1` columns.
    pub fn from_rows(set_id: usize, components: usize, data: Vec<f64>) -> Result<Self> {
        let width = components + 1;
        if data.len() % width != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} entries is not a multiple of {width}",
                data.len()
            )));
        }
        Ok(Self {
            set_id,
            components,
            data,
            underflow_rows: 0,
        })
    }

    pub fn set_id(&self) -> usize {
        self.set_id
    }

    /// Number of Gaussian components `K`.
    pub fn components(&self) -> usize {
        self.components
    }

    pub fn rows(&self) -> usize {
        self.data.len() / (self.components + 1)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.components + 1;
        &self.data[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.components + 1;
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.components + 1)
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * (self.components + 1) + k]
    }

    pub fn outlier(&self, i: usize) -> f64 {
        self.get(i, self.components)
    }

    /// Per-component masses `sum_i alpha_ik` for the K Gaussians.
    pub fn masses(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.components];
        for row in self.row_iter() {
            for (acc, a) in m.iter_mut().zip(row) {
                *acc += a;
            }
        }
        m
    }

    pub fn outlier_mass(&self) -> f64 {
        self.row_iter().map(|r| r[self.components]).sum()
    }
}

/// Sufficient statistics of the transformed data per component.
///
/// Posterior moments of one set about its centroid, in the set's own frame:
/// `first[k] = sum alpha_ik (v_i - origin)`, `second[k] = sum alpha_ik |v_i - origin|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetMoments {
    pub origin: Point,
    pub mass: Vec<f64>,
    pub first: Vec<Point>,
    pub second: Vec<f64>,
    pub outlier_mass: f64,
    pub points: usize,
}

impl SetMoments {
    pub fn zeros(origin: Point, components: usize) -> Self {
        Self {
            origin,
            mass: vec![0.0; components],
            first: vec![Point::zeros(); components],
            second: vec![0.0; components],
            outlier_mass: 0.0,
            points: 0,
        }
    }

    pub fn components(&self) -> usize {
        self.mass.len()
    }

    /// Adds one point with its posterior row (`K + 1` entries).
    #[inline]
    pub(crate) fn add_row(&mut self, v: &Point, row: &[f64]) {
        let k = self.components();
        let d = v - self.origin;
        let dd = d.norm_squared();
        for c in 0..k {
            let a = row[c];
            if a != 0.0 {
                self.mass[c] += a;
                self.first[c] += a * d;
                self.second[c] += a * dd;
            }
        }
        self.outlier_mass += row[k];
        self.points += 1;
    }

    pub fn from_responsibilities(set: &PointSet, resp: &ResponsibilityMatrix) -> Result<Self> {
        if resp.rows() != set.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} responsibility rows for set {} of {} points",
                resp.rows(),
                set.id(),
                set.len()
            )));
        }
        let mut m = Self::zeros(set.centroid(), resp.components());
        for (v, row) in set.points().iter().zip(resp.row_iter()) {
            m.add_row(v, row);
        }
        Ok(m)
    }

    /// Posterior-weighted average of the set for component `k`.
    pub fn virtual_point(&self, k: usize) -> Option<Point> {
        has_mass(self.mass[k]).then(|| self.origin + self.first[k] / self.mass[k])
    }

    /// `(sum alpha, sum alpha x, sum alpha |x|^2)` of component `k` with
    /// `x = R v + t`.
    pub fn transformed(&self, k: usize, transform: &RigidTransform) -> (f64, Point, f64) {
        let m = self.mass[k];
        let shift = transform.apply(&self.origin);
        let rotated = transform.rotation * self.first[k];
        (
            m,
            rotated + m * shift,
            self.second[k] + 2.0 * shift.dot(&rotated) + m * shift.norm_squared(),
        )
    }
}

/// `first[k] = sum alpha x` and `second[k] = sum alpha |x|^2` with
/// `x = R v + t`; `eta = (gamma + 1)(points - outlier_mass)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub mass: Vec<f64>,
    pub first: Vec<Point>,
    pub second: Vec<f64>,
    pub outlier_mass: f64,
    pub points: usize,
    pub eta: f64,
}

impl ComponentStats {
    pub fn zeros(components: usize) -> Self {
        Self {
            mass: vec![0.0; components],
            first: vec![Point::zeros(); components],
            second: vec![0.0; components],
            outlier_mass: 0.0,
            points: 0,
            eta: 0.0,
        }
    }

    pub fn components(&self) -> usize {
        self.mass.len()
    }

    /// Adds one set's contribution.
    pub fn accumulate(
        &mut self,
        set: &PointSet,
        transform: &RigidTransform,
        resp: &ResponsibilityMatrix,
        gamma: f64,
    ) -> Result<()> {
        self.accumulate_moments(&SetMoments::from_responsibilities(set, resp)?, transform, gamma)
    }

    /// Adds a set's contribution from its moments, mapped by `transform`.
    pub fn accumulate_moments(&mut self, m: &SetMoments, transform: &RigidTransform, gamma: f64) -> Result<()> {
        let k = self.components();
        if m.components() != k {
            return Err(Error::DimensionMismatch(format!(
                "moments of {} components added to statistics of {k}",
                m.components()
            )));
        }
        for c in 0..k {
            if m.mass[c] == 0.0 {
                continue;
            }
            let (mass, first, second) = m.transformed(c, transform);
            self.mass[c] += mass;
            self.first[c] += first;
            self.second[c] += second;
        }
        self.outlier_mass += m.outlier_mass;
        self.points += m.points;
        self.eta += (gamma + 1.0) * (m.points as f64 - m.outlier_mass);
        Ok(())
    }

    pub fn from_moments(moments: &[SetMoments], transforms: &[RigidTransform], components: usize, gamma: f64) -> Result<Self> {
        if moments.len() != transforms.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} moment sets and {} transforms",
                moments.len(),
                transforms.len()
            )));
        }
        let mut stats = Self::zeros(components);
        for (m, t) in moments.iter().zip(transforms) {
            stats.accumulate_moments(m, t, gamma)?;
        }
        Ok(stats)
    }

    /// `sum alpha |x - mu|^2` of component `k` about an arbitrary `mu`.
    pub fn spread_about(&self, k: usize, mu: &Point) -> f64 {
        let m = self.mass[k];
        let centered = self.second[k] - self.first[k].norm_squared() / m;
        centered + m * (self.first[k] / m - mu).norm_squared()
    }

    pub fn from_sets(
        sets: &[PointSet],
        transforms: &[RigidTransform],
        resp: &[ResponsibilityMatrix],
        components: usize,
        gamma: f64,
    ) -> Result<Self> {
        check_lengths(sets, transforms, resp)?;
        let mut stats = Self::zeros(components);
        for ((s, t), r) in sets.iter().zip(transforms).zip(resp) {
            stats.accumulate(s, t, r, gamma)?;
        }
        Ok(stats)
    }

    /// Weighted mean of component `k`; `None` without mass.
    pub fn mean(&self, k: usize) -> Option<Point> {
        has_mass(self.mass[k]).then(|| self.first[k] / self.mass[k])
    }

    /// Raw isotropic variance `(E|x|^2 - |E x|^2) / 3`, before the floor.
    pub fn raw_variance(&self, k: usize) -> Option<f64> {
        let m = self.mass[k];
        has_mass(m).then(|| {
            let mu = self.first[k] / m;
            (self.second[k] / m - mu.norm_squared()) / 3.0
        })
    }
}

/// A component participates in an update only when its mass is a positive
/// normal float; subnormal masses lose too much precision to divide by.
#[inline]
pub(crate) fn has_mass(m: f64) -> bool {
    m > 0.0 && m.is_normal()
}

pub(crate) fn check_lengths(
    sets: &[PointSet],
    transforms: &[RigidTransform],
    resp: &[ResponsibilityMatrix],
) -> Result<()> {
    if sets.len() != transforms.len() || sets.len() != resp.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sets, {} transforms, {} responsibility matrices",
            sets.len(),
            transforms.len(),
            resp.len()
        )));
    }
    Ok(())
}

/// Expected complete-data log-likelihood (up to constants):
///
/// `f = -1/2 sum alpha_jik (|R_j v_ji + t_j - mu_k|^2 / s_k + 3 log s_k - 2 log p_k)
///      + log p_{K+1} sum alpha_ji(K+1)`
pub fn evaluate_objective(
    sets: &[PointSet],
    transforms: &[RigidTransform],
    model: &MixtureModel,
    resp: &[ResponsibilityMatrix],
) -> Result<f64> {
    check_lengths(sets, transforms, resp)?;
    let k = model.num_components();
    if model.variances.len() != k || model.priors.len() != k + 1 {
        return Err(Error::DimensionMismatch("mixture parameter lengths".into()));
    }
    if let Some(s) = model.variances.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Domain(format!("variance must be positive, got {s}")));
    }
    let inv_var: Vec<f64> = model.variances.iter().map(|s| 1.0 / s).collect();
    let log_terms: Vec<f64> = model
        .variances
        .iter()
        .zip(&model.priors)
        .map(|(s, p)| 3.0 * s.ln() - 2.0 * p.ln())
        .collect();

    let mut inlier = 0.0;
    let mut outlier_mass = 0.0;
    for ((set, t), r) in sets.iter().zip(transforms).zip(resp) {
        if r.components() != k || r.rows() != set.len() {
            return Err(Error::DimensionMismatch(format!(
                "responsibilities of set {} are {}x{}, expected {}x{}",
                set.id(),
                r.rows(),
                r.components() + 1,
                set.len(),
                k + 1
            )));
        }
        for (v, row) in set.points().iter().zip(r.row_iter()) {
            let x = t.apply(v);
            for c in 0..k {
                let a = row[c];
                if a == 0.0 {
                    continue;
                }
                let d2 = (x - model.means[c]).norm_squared();
                inlier += a * (d2 * inv_var[c] + log_terms[c]);
            }
            outlier_mass += row[k];
        }
    }
    let mut f = -0.5 * inlier;
    if outlier_mass > 0.0 {
        f += model.outlier_prior().ln() * outlier_mass;
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn one_component(mean: Point, gamma: f64) -> MixtureModel {
        let mut m = MixtureModel::new(vec![mean], vec![1.0], gamma, 1.0, 1e-3).unwrap();
        m.priors = vec![1.0, 0.0];
        m
    }

    #[test]
    fn objective_is_zero_at_the_mean_with_unit_variance() {
        let set = PointSet::new(0, vec![Point::new(1.0, 2.0, 3.0)]).unwrap();
        let model = one_component(Point::new(1.0, 2.0, 3.0), 0.0);
        let resp = ResponsibilityMatrix::from_rows(0, 1, vec![1.0, 0.0]).unwrap();
        let f = evaluate_objective(&[set], &[RigidTransform::identity()], &model, &[resp]).unwrap();
        assert_eq!(f, 0.0);
    }

    #[test]
    fn objective_at_distance_d_is_minus_half_d_squared() {
        let d = 2.5;
        let set = PointSet::new(0, vec![Point::new(d, 0.0, 0.0)]).unwrap();
        let model = one_component(Point::zeros(), 0.0);
        let resp = ResponsibilityMatrix::from_rows(0, 1, vec![1.0, 0.0]).unwrap();
        let f = evaluate_objective(&[set], &[RigidTransform::identity()], &model, &[resp]).unwrap();
        assert_relative_eq!(f, -d * d / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn objective_rejects_nonpositive_variance_and_bad_shapes() {
        let set = PointSet::new(0, vec![Point::zeros()]).unwrap();
        let mut model = one_component(Point::zeros(), 0.0);
        let resp = ResponsibilityMatrix::from_rows(0, 1, vec![1.0, 0.0]).unwrap();
        model.variances[0] = 0.0;
        let err = evaluate_objective(
            &[set.clone()],
            &[RigidTransform::identity()],
            &model,
            &[resp.clone()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        let model = one_component(Point::zeros(), 0.0);
        let err = evaluate_objective(&[set], &[], &model, &[resp]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn apply_identity_and_quarter_turn() {
        let p = Point::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::identity().apply(&p), p);
        let t = RigidTransform::from_axis_angle(Vector3::z(), FRAC_PI_2, Vector3::zeros());
        let q = t.apply(&Point::new(1.0, 0.0, 0.0));
        assert_relative_eq!(q, Point::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn uniform_density_values() {
        assert_eq!(uniform_term(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(uniform_term(1.0, 2.0).unwrap(), 0.25);
        let v = uniform_term(0.1, PI / 6.0).unwrap();
        assert_relative_eq!(v, 0.1 / (PI / 6.0 * 1.1), epsilon = 1e-15);
        assert!((v - 0.1736).abs() < 1e-4);
        assert!(matches!(uniform_term(0.1, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn rotation_angle_matches_axis_angle() {
        for &a in &[0.0, 1e-7, 0.3, 1.5, 3.0, PI] {
            let t = RigidTransform::from_axis_angle(Vector3::new(1.0, -2.0, 0.5), a, Vector3::zeros());
            assert_relative_eq!(t.rotation_angle(), a, epsilon = 1e-12);
        }
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn point_set_invariants() {
        assert!(PointSet::new(0, vec![]).is_err());
        assert!(PointSet::new(0, vec![Point::new(f64::NAN, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn model_validation() {
        let m = MixtureModel::new(vec![Point::zeros(); 3], vec![0.1; 3], 0.1, 1.0, 1e-3).unwrap();
        let sum: f64 = m.priors.iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
        assert!(MixtureModel::new(vec![Point::zeros()], vec![-1.0], 0.1, 1.0, 1e-3).is_err());
        assert!(MixtureModel::new(vec![Point::zeros()], vec![1.0], -0.1, 1.0, 1e-3).is_err());
        assert!(MixtureModel::new(vec![Point::zeros()], vec![1.0], 0.1, 0.0, 1e-3).is_err());
    }

    #[test]
    fn stats_cauchy_schwarz() {
        let set = PointSet::new(
            0,
            vec![Point::new(1.0, 0.0, 0.0), Point::new(0.0, 2.0, 1.0), Point::new(-1.0, 0.5, 0.0)],
        )
        .unwrap();
        let resp = ResponsibilityMatrix::from_rows(
            0,
            2,
            vec![0.5, 0.3, 0.2, 0.1, 0.9, 0.0, 0.7, 0.1, 0.2],
        )
        .unwrap();
        let stats = ComponentStats::from_sets(
            &[set],
            &[RigidTransform::identity()],
            &[resp],
            2,
            0.5,
        )
        .unwrap();
        for k in 0..2 {
            let m = stats.mass[k];
            assert!(stats.second[k] >= stats.first[k].norm_squared() / m - 1e-9);
        }
        assert_relative_eq!(stats.eta, 1.5 * (3.0 - 0.4), epsilon = 1e-12);
    }
}
