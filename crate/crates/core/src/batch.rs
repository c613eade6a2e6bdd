//! Batch joint registration: E-step, rigid M-step, mixture M-step.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    check_lengths, has_mass, rotation_angle, uniform_term, ComponentStats, MixtureModel, Point,
    PointSet, ResponsibilityMatrix, RigidTransform, SetMoments,
};
use crate::rigid::{m_rigid_step, RigidStepStatistics, VirtualPoints};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    /// Maximum number of EM iterations.
    pub max_iterations: usize,
    /// Outlier-to-inlier ratio.
    pub gamma: f64,
    pub update_priors: bool,
    /// Variances stay frozen for this many initial iterations.
    pub fix_variance_iters: usize,
    /// Stop once rotation/translation and mean changes fall below this.
    pub convergence_tol: f64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gamma: 0.1,
            update_priors: false,
            fix_variance_iters: 10,
            convergence_tol: 1e-6,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidConfig("convergence_tol must be > 0".into()));
        }
        Ok(())
    }
}

const NEGLIGIBLE_LOG: f64 = -50.0;

/// `exp(x)` for `x` in `[-50, 0]`, branch-free so the posterior loop
/// vectorizes. Range reduction `x = n ln 2 + r`, `|r| <= ln 2 / 2`, then a
/// degree-13 Taylor polynomial; relative error stays within a few ulp.
#[inline(always)]
fn exp_bounded(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // Adding and subtracting 1.5 * 2^52 rounds to the nearest integer.
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let n = (x * std::f64::consts::LOG2_E + ROUND) - ROUND;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits(((n as i64 + 1023) as u64) << 52);
    p * scale
}

/// Log-space evaluation of `beta_k = p_k s_k^{-3/2} exp(-d^2 / 2 s_k)` and
/// the constant uniform term.
pub(crate) struct PosteriorKernel {
    // Means split by coordinate so the distance loop vectorizes.
    mx: Vec<f64>,
    my: Vec<f64>,
    mz: Vec<f64>,
    log_scale: Vec<f64>,
    inv_two_var: Vec<f64>,
    log_outlier: f64,
}

impl PosteriorKernel {
    pub(crate) fn new(model: &MixtureModel) -> Result<Self> {
        let k = model.num_components();
        if model.variances.len() != k || model.priors.len() != k + 1 {
            return Err(Error::DimensionMismatch("mixture parameter lengths".into()));
        }
        if let Some(s) = model.variances.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Domain(format!("variance must be positive, got {s}")));
        }
        let outlier = uniform_term(model.gamma, model.volume)?;
        Ok(Self {
            mx: model.means.iter().map(|m| m.x).collect(),
            my: model.means.iter().map(|m| m.y).collect(),
            mz: model.means.iter().map(|m| m.z).collect(),
            log_scale: model
                .variances
                .iter()
                .zip(&model.priors)
                .map(|(s, p)| p.ln() - 1.5 * s.ln())
                .collect(),
            inv_two_var: model.variances.iter().map(|s| 0.5 / s).collect(),
            log_outlier: outlier.ln(),
        })
    }

    /// Fills `row` with the unnormalized posterior of `x`, shifted so the
    /// largest term is 1, and returns the reciprocal of the row sum together
    /// with `ln(sum_k beta_k + uniform)`. Returns `None` when every term
    /// underflowed; the row then holds `1/K`.
    #[inline]
    fn posterior_row(&self, x: &Point, row: &mut [f64]) -> Option<(f64, f64)> {
        let k = self.mx.len();
        let (gauss, outlier) = row.split_at_mut(k);
        let (px, py, pz) = (x.x, x.y, x.z);
        for ((((e, mx), my), mz), (ls, itv)) in gauss
            .iter_mut()
            .zip(&self.mx)
            .zip(&self.my)
            .zip(&self.mz)
            .zip(self.log_scale.iter().zip(&self.inv_two_var))
        {
            let (dx, dy, dz) = (px - mx, py - my, pz - mz);
            *e = ls - (dx * dx + dy * dy + dz * dz) * itv;
        }
        let max = gauss.iter().fold(self.log_outlier, |m, &e| m.max(e));
        if max == f64::NEG_INFINITY {
            gauss.fill(1.0 / k as f64);
            outlier[0] = 0.0;
            return None;
        }
        outlier[0] = self.log_outlier;
        for e in row.iter_mut() {
            let shifted = *e - max;
            // Terms below e^-50 cannot change a sum that contains 1.
            let v = exp_bounded(shifted.max(NEGLIGIBLE_LOG));
            *e = if shifted < NEGLIGIBLE_LOG { 0.0 } else { v };
        }
        let sum = row.iter().sum::<f64>();
        Some((1.0 / sum, max + sum.ln()))
    }

    pub(crate) fn responsibilities(
        &self,
        set: &PointSet,
        transform: &RigidTransform,
    ) -> ResponsibilityMatrix {
        let k = self.mx.len();
        let width = k + 1;
        let mut data = vec![0.0; set.len() * width];
        let mut underflow = 0;
        for (v, row) in set.points().iter().zip(data.chunks_exact_mut(width)) {
            match self.posterior_row(&transform.apply(v), row) {
                Some((inv, _)) => row.iter_mut().for_each(|e| *e *= inv),
                None => underflow += 1,
            }
        }
        let mut out = ResponsibilityMatrix::from_rows(set.id(), k, data)
            .expect("row width matches by construction");
        out.underflow_rows = underflow;
        out
    }

    /// Posterior moments of a set without storing its responsibilities, and
    /// the set's log-likelihood.
    ///
    /// Points are processed in blocks: the posterior columns of a block are
    /// multiplied with the per-point features `[d, |d|^2, 1] / row_sum`, where
    /// `d` is the offset from the set centroid.
    pub(crate) fn moments(&self, set: &PointSet, transform: &RigidTransform) -> (SetMoments, f64) {
        const BLOCK: usize = 32;
        let k = self.mx.len();
        let origin = set.centroid();
        let mut rows = DMatrix::<f64>::zeros(k + 1, BLOCK);
        let mut features = DMatrix::<f64>::zeros(BLOCK, 5);
        let mut acc = DMatrix::<f64>::zeros(k + 1, 5);
        let mut underflow = 0;
        let mut log_likelihood = 0.0;
        for chunk in set.points().chunks(BLOCK) {
            features.fill(0.0);
            for (j, v) in chunk.iter().enumerate() {
                let mut col = rows.column_mut(j);
                let scale = match self.posterior_row(&transform.apply(v), col.as_mut_slice()) {
                    Some((inv, log_sum)) => {
                        log_likelihood += log_sum;
                        inv
                    }
                    None => {
                        underflow += 1;
                        log_likelihood = f64::NEG_INFINITY;
                        1.0
                    }
                };
                let d = v - origin;
                features[(j, 0)] = scale * d.x;
                features[(j, 1)] = scale * d.y;
                features[(j, 2)] = scale * d.z;
                features[(j, 3)] = scale * d.norm_squared();
                features[(j, 4)] = scale;
            }
            acc.gemm(1.0, &rows, &features, 1.0);
        }
        if underflow > 0 {
            log::debug!("set {}: {underflow} posterior rows underflowed", set.id());
        }
        let mut m = SetMoments::zeros(origin, k);
        for c in 0..k {
            m.mass[c] = acc[(c, 4)];
            m.first[c] = Point::new(acc[(c, 0)], acc[(c, 1)], acc[(c, 2)]);
            m.second[c] = acc[(c, 3)];
        }
        m.outlier_mass = acc[(k, 4)];
        m.points = set.len();
        (m, log_likelihood)
    }
}

/// Posteriors of every point of every set under the current parameters.
///
/// Rows whose Gaussian terms all vanish with no uniform component fall back to
/// `1/K` and are counted in [`ResponsibilityMatrix::underflow_rows`].
pub fn e_step(
    sets: &[PointSet],
    transforms: &[RigidTransform],
    model: &MixtureModel,
) -> Result<Vec<ResponsibilityMatrix>> {
    if sets.len() != transforms.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sets but {} transforms",
            sets.len(),
            transforms.len()
        )));
    }
    let kernel = PosteriorKernel::new(model)?;
    Ok(sets
        .iter()
        .zip(transforms)
        .map(|(s, t)| kernel.responsibilities(s, t))
        .collect())
}

/// Which mixture parameters the M-GMM step re-estimates. Means always are.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GmmUpdate {
    pub variances: bool,
    pub priors: bool,
}

impl Default for GmmUpdate {
    fn default() -> Self {
        Self {
            variances: true,
            priors: false,
        }
    }
}

/// Closed-form means, isotropic variances and (optionally) priors.
///
/// A component without mass keeps its previous mean, has its variance set to
/// the floor and is flagged degenerate.
pub fn m_gmm_step(
    sets: &[PointSet],
    transforms: &[RigidTransform],
    resp: &[ResponsibilityMatrix],
    previous: &MixtureModel,
    update: GmmUpdate,
) -> Result<MixtureModel> {
    check_lengths(sets, transforms, resp)?;
    let k = previous.num_components();
    let mut stats = ComponentStats::zeros(k);
    for ((s, t), r) in sets.iter().zip(transforms).zip(resp) {
        if r.components() != k {
            return Err(Error::DimensionMismatch(format!(
                "responsibilities of set {} have {} components, expected {k}",
                r.set_id(),
                r.components()
            )));
        }
        stats.accumulate(s, t, r, previous.gamma)?;
    }
    m_gmm_from_stats(&stats, previous, update)
}

/// M-GMM step from accumulated component statistics.
pub fn m_gmm_from_stats(stats: &ComponentStats, previous: &MixtureModel, update: GmmUpdate) -> Result<MixtureModel> {
    let k = previous.num_components();
    if stats.components() != k {
        return Err(Error::DimensionMismatch(format!(
            "statistics of {} components for a mixture of {k}",
            stats.components()
        )));
    }
    let floor = previous.variance_floor();
    let mut model = previous.clone();
    for c in 0..k {
        let m = stats.mass[c];
        model.degenerate[c] = !has_mass(m);
        if model.degenerate[c] {
            model.variances[c] = floor;
            continue;
        }
        let mean = stats.first[c] / m;
        model.means[c] = mean;
        if update.variances {
            model.variances[c] = (stats.spread_about(c, &mean) / (3.0 * m)).max(0.0) + floor;
        }
    }

    if update.priors {
        let eta = (previous.gamma + 1.0) * (stats.points as f64 - stats.outlier_mass);
        if !(eta > 0.0) {
            return Err(Error::Domain(format!("prior normalizer eta = {eta}")));
        }
        for c in 0..k {
            model.priors[c] = stats.mass[c] / eta;
        }
        let inlier: f64 = model.priors[..k].iter().sum();
        model.priors[k] = (1.0 - inlier).max(0.0);
    }
    Ok(model)
}

/// The objective evaluated from component statistics; agrees with
/// [`crate::model::evaluate_objective`] up to rounding.
pub fn objective_from_stats(stats: &ComponentStats, model: &MixtureModel) -> f64 {
    let mut inlier = 0.0;
    for c in 0..model.num_components() {
        let m = stats.mass[c];
        if m == 0.0 {
            continue;
        }
        let s = model.variances[c];
        inlier += stats.spread_about(c, &model.means[c]) / s + m * (3.0 * s.ln() - 2.0 * model.priors[c].ln());
    }
    let mut f = -0.5 * inlier;
    if stats.outlier_mass > 0.0 {
        f += model.outlier_prior().ln() * stats.outlier_mass;
    }
    f
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Expected complete-data log-likelihood after the M-steps, with the
    /// posteriors of this iteration's E-step.
    pub objective: f64,
    /// `sum_i ln(sum_k beta_ik + uniform)` of the parameters entering this
    /// iteration; EM never decreases it.
    pub log_likelihood: f64,
    /// Largest geodesic rotation change across sets, radians.
    pub rotation_change: f64,
    pub translation_change: f64,
    pub mean_change: f64,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub transforms: Vec<RigidTransform>,
    pub model: MixtureModel,
    pub responsibilities: Vec<ResponsibilityMatrix>,
    pub trace: Vec<IterationRecord>,
    pub converged: bool,
}

impl BatchResult {
    pub fn objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }

    pub fn log_likelihood_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.log_likelihood).collect()
    }
}

/// Alternates E, M-rigid and M-GMM steps until `max_iterations` or until the
/// parameter changes drop below `convergence_tol`.
pub fn run_batch(
    sets: &[PointSet],
    init_transforms: &[RigidTransform],
    init_model: &MixtureModel,
    config: &BatchConfig,
) -> Result<BatchResult> {
    config.validate()?;
    if sets.is_empty() || sets.len() != init_transforms.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sets and {} initial transforms",
            sets.len(),
            init_transforms.len()
        )));
    }
    let mut model = init_model.clone();
    model.gamma = config.gamma;
    model.validate()?;

    let mut transforms = init_transforms.to_vec();
    let mut trace = Vec::with_capacity(config.max_iterations);
    let mut converged = false;
    // Parameters the last E-step ran with, for the returned responsibilities.
    let mut last_e = (transforms.clone(), model.clone());

    for q in 1..=config.max_iterations {
        let kernel = PosteriorKernel::new(&model)?;
        let (moments, log_likelihoods): (Vec<SetMoments>, Vec<f64>) = sets
            .iter()
            .zip(&transforms)
            .map(|(s, t)| kernel.moments(s, t))
            .unzip();
        let log_likelihood = log_likelihoods.iter().sum();

        let mut next = Vec::with_capacity(sets.len());
        for (set, m) in sets.iter().zip(&moments) {
            let vp = VirtualPoints::from_moments(m);
            let stats = RigidStepStatistics::from_virtual_points(&vp, &model.means, &model.variances)?;
            let t = m_rigid_step(&stats)?;
            if !t.is_valid(1e-6) || !t.translation.iter().all(|c| c.is_finite()) {
                return Err(Error::Diverged {
                    iteration: q,
                    reason: format!("invalid transform for set {}", set.id()),
                });
            }
            next.push(t);
        }

        let update = GmmUpdate {
            variances: q > config.fix_variance_iters,
            priors: config.update_priors,
        };
        let stats = ComponentStats::from_moments(&moments, &next, model.num_components(), model.gamma)?;
        let next_model = m_gmm_from_stats(&stats, &model, update)?;

        let objective = objective_from_stats(&stats, &next_model);
        if !objective.is_finite() {
            return Err(Error::Diverged {
                iteration: q,
                reason: format!("objective is {objective}"),
            });
        }

        let (rotation_change, translation_change) = transforms
            .iter()
            .zip(&next)
            .map(|(a, b)| {
                (
                    rotation_angle(&(a.rotation.transpose() * b.rotation)),
                    (a.translation - b.translation).norm(),
                )
            })
            .fold((0.0f64, 0.0f64), |(r, t), (dr, dt)| (r.max(dr), t.max(dt)));
        let mean_change = model
            .means
            .iter()
            .zip(&next_model.means)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);

        trace.push(IterationRecord {
            iteration: q,
            objective,
            log_likelihood,
            rotation_change,
            translation_change,
            mean_change,
        });
        log::debug!("iteration {q}: f = {objective:.6e}, dR = {rotation_change:.3e}, dmu = {mean_change:.3e}");

        last_e = (std::mem::replace(&mut transforms, next), std::mem::replace(&mut model, next_model));

        if q > config.fix_variance_iters
            && rotation_change + translation_change < config.convergence_tol
            && mean_change < config.convergence_tol
        {
            converged = true;
            break;
        }
    }

    let responsibilities = e_step(sets, &last_e.0, &last_e.1)?;
    Ok(BatchResult {
        transforms,
        model,
        responsibilities,
        trace,
        converged,
    })
}
