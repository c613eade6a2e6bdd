//! Weighted Procrustes step shared by the batch and incremental solvers.
//!
//! For a fixed set `j`, the transform maximizing the objective aligns the
//! component means with the set's virtual points `w_jk` (posterior-weighted
//! averages), each pair weighted by `lambda_k^2 = sum_i alpha_jik / s_k`.

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::model::{has_mass, MixtureModel, Point, PointSet, ResponsibilityMatrix, RigidTransform, SetMoments};

/// Relative singular-value threshold below which the cross matrix is treated
/// as rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

/// Posterior-weighted averages of one set, one per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualPoints {
    /// `None` for components that received no mass from this set.
    pub points: Vec<Option<Point>>,
    pub masses: Vec<f64>,
}

impl VirtualPoints {
    pub fn from_moments(m: &SetMoments) -> Self {
        Self {
            points: (0..m.components()).map(|k| m.virtual_point(k)).collect(),
            masses: m.mass.clone(),
        }
    }

    pub fn zero_mass(&self) -> impl Iterator<Item = usize> + '_ {
        self.points.iter().enumerate().filter(|(_, p)| p.is_none()).map(|(k, _)| k)
    }
}

/// `w_jk = sum_i alpha_jik v_ji / sum_i alpha_jik`.
pub fn virtual_points(set: &PointSet, resp: &ResponsibilityMatrix) -> Result<VirtualPoints> {
    let k = resp.components();
    if resp.rows() != set.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} responsibility rows for {} points",
            resp.rows(),
            set.len()
        )));
    }
    let mut sums = vec![Point::zeros(); k];
    let mut masses = vec![0.0; k];
    for (v, row) in set.points().iter().zip(resp.row_iter()) {
        for c in 0..k {
            let a = row[c];
            if a != 0.0 {
                sums[c] += a * v;
                masses[c] += a;
            }
        }
    }
    let points = sums
        .into_iter()
        .zip(&masses)
        .map(|(s, &m)| has_mass(m).then(|| s / m))
        .collect();
    Ok(VirtualPoints { points, masses })
}

/// Inputs of the closed-form rigid update, restricted to active components.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidStepStatistics {
    /// Indices (into the mixture) of the components kept.
    pub active: Vec<usize>,
    /// Virtual points `w_jk`, the columns of `W_j`.
    pub virtual_points: Vec<Point>,
    /// Squared weights `lambda_k^2`, the diagonal of `Lambda_j^2`.
    pub weights: Vec<f64>,
    /// Component means, the columns of `M`.
    pub means: Vec<Point>,
}

impl RigidStepStatistics {
    /// Zero-mass components are dropped rather than zero-weighted.
    pub fn new(set: &PointSet, resp: &ResponsibilityMatrix, model: &MixtureModel) -> Result<Self> {
        if resp.components() != model.num_components() {
            return Err(Error::DimensionMismatch(format!(
                "{} responsibility columns for {} components",
                resp.components(),
                model.num_components()
            )));
        }
        let vp = virtual_points(set, resp)?;
        Self::from_virtual_points(&vp, &model.means, &model.variances)
    }

    pub fn from_virtual_points(vp: &VirtualPoints, means: &[Point], variances: &[f64]) -> Result<Self> {
        if vp.points.len() != means.len() || means.len() != variances.len() {
            return Err(Error::DimensionMismatch("virtual points vs mixture".into()));
        }
        let mut out = Self {
            active: Vec::new(),
            virtual_points: Vec::new(),
            weights: Vec::new(),
            means: Vec::new(),
        };
        for (k, w) in vp.points.iter().enumerate() {
            let Some(w) = w else { continue };
            if !(variances[k] > 0.0) {
                return Err(Error::Domain(format!(
                    "variance of component {k} must be positive, got {}",
                    variances[k]
                )));
            }
            out.active.push(k);
            out.virtual_points.push(*w);
            out.weights.push(vp.masses[k] / variances[k]);
            out.means.push(means[k]);
        }
        Ok(out)
    }

    /// Builds statistics directly from explicit columns, all weights given
    /// as `lambda_k^2`.
    pub fn from_columns(virtual_points: Vec<Point>, means: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if virtual_points.len() != means.len() || means.len() != weights.len() {
            return Err(Error::DimensionMismatch("column counts differ".into()));
        }
        Ok(Self {
            active: (0..means.len()).collect(),
            virtual_points,
            weights,
            means,
        })
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    fn weighted_centroids(&self) -> (Point, Point, f64) {
        let total: f64 = self.weights.iter().sum();
        let mut w_bar = Point::zeros();
        let mut m_bar = Point::zeros();
        for ((w, m), l) in self.virtual_points.iter().zip(&self.means).zip(&self.weights) {
            w_bar += *l * w;
            m_bar += *l * m;
        }
        (w_bar / total, m_bar / total, total)
    }

    /// `M Lambda P Lambda W^T`, evaluated in centered form.
    pub fn cross_matrix(&self) -> Matrix3<f64> {
        let (w_bar, m_bar, _) = self.weighted_centroids();
        let mut c = Matrix3::zeros();
        for ((w, m), l) in self.virtual_points.iter().zip(&self.means).zip(&self.weights) {
            c += *l * (m - m_bar) * (w - w_bar).transpose();
        }
        c
    }

    /// The `K x K` projection `I - Lambda e e^T Lambda / (e^T Lambda^2 e)`.
    pub fn projection_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let total: f64 = self.weights.iter().sum();
        let lambda: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        DMatrix::from_fn(n, n, |r, c| {
            let id = if r == c { 1.0 } else { 0.0 };
            id - lambda[r] * lambda[c] / total
        })
    }

    /// `M Lambda P Lambda W^T` formed with explicit `K x K` matrices.
    pub fn cross_matrix_explicit(&self) -> Matrix3<f64> {
        let n = self.len();
        let m = DMatrix::from_fn(3, n, |r, c| self.means[c][r]);
        let w = DMatrix::from_fn(3, n, |r, c| self.virtual_points[c][r]);
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            self.weights.iter().map(|w| w.sqrt()),
        ));
        let prod = &m * &lambda * self.projection_matrix() * &lambda * w.transpose();
        Matrix3::from_fn(|r, c| prod[(r, c)])
    }
}

/// Closed-form weighted Procrustes with a determinant guard.
pub fn m_rigid_step(stats: &RigidStepStatistics) -> Result<RigidTransform> {
    if stats.len() < 3 {
        return Err(Error::InsufficientComponents(stats.len()));
    }
    let (w_bar, m_bar, total) = stats.weighted_centroids();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Domain(format!("total rigid weight is {total}")));
    }
    let rotation = proper_rotation(&stats.cross_matrix())?;
    let translation = m_bar - rotation * w_bar;
    Ok(RigidTransform {
        rotation,
        translation,
    })
}

/// Rotation `R` maximizing `trace(R^T C)`: `U S V^T` with
/// `S = diag(1, 1, det(U) det(V))` on the ordered singular values.
pub fn proper_rotation(cross: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if !cross.iter().all(|c| c.is_finite()) {
        return Err(Error::Domain("non-finite cross-covariance".into()));
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Domain("SVD did not converge".into())),
    };
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sorted = [s[order[0]], s[order[1]], s[order[2]]];
    if !(sorted[0] > 0.0) || sorted[1] <= RANK_TOLERANCE * sorted[0] {
        return Err(Error::DegenerateGeometry(sorted));
    }
    let sign = (u.determinant() * v_t.determinant()).signum();
    let mut d = Matrix3::identity();
    d[(order[2], order[2])] = sign;
    Ok(u * d * v_t)
}
