//! Incremental integration of new sets into a registered mixture, and a
//! two-level windowed pipeline for long sequences.
//!
//! Integrating set `m` keeps the previous `m - 1` transforms frozen. The E- and
//! rigid steps run against the mixture estimated from sets `1..m-1`; the
//! mixture is then updated from [`ComponentStats`] by recombining moments,
//! which reproduces a batch M-step over all `m` sets exactly.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{run_batch, BatchConfig, PosteriorKernel};
use crate::error::{Error, Result};
use crate::init::{initialize, InitConfig, KPolicy, MeanStrategy, SigmaInit, TranslationStrategy};
use crate::model::{
    has_mass, median, rotation_angle, ComponentStats, MixtureModel, Point, PointSet,
    ResponsibilityMatrix, RigidTransform, DEFAULT_EPSILON, DEFAULT_VOLUME,
};
use crate::rigid::{m_rigid_step, virtual_points, RigidStepStatistics};
use crate::scene::classify::classify_components;

/// How the mixture is updated after a new set's responsibilities are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateForm {
    /// Exact recombination of accumulated moments.
    Moments,
    /// Closed-form recurrences in `zeta_k = eta p_k / alpha_mk`, kept for
    /// comparison; they do not conserve mass.
    Recurrence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IncrementalConfig {
    /// EM iterations per integrated set.
    pub iterations: usize,
    /// Recycle components before integrating a set.
    pub recycle: bool,
    /// Fraction of `K` recycled per new set; `None` means `1/m`.
    pub rejection_fraction: Option<f64>,
    pub update_priors: bool,
    pub update_form: UpdateForm,
    pub seed: u64,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        Self {
            iterations: 1,
            recycle: true,
            rejection_fraction: None,
            update_priors: false,
            update_form: UpdateForm::Moments,
            seed: 0,
        }
    }
}

/// Mixture estimated from the sets integrated so far, with the statistics
/// that let it absorb one more set.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalState {
    pub model: MixtureModel,
    pub stats: ComponentStats,
    /// Number of sets absorbed.
    pub sets_seen: usize,
    pub update_priors: bool,
}

impl IncrementalState {
    /// Builds the state from registered sets and their responsibilities,
    /// typically the output of a batch run.
    pub fn new(
        sets: &[PointSet],
        transforms: &[RigidTransform],
        resp: &[ResponsibilityMatrix],
        model: MixtureModel,
        update_priors: bool,
    ) -> Result<Self> {
        let stats = ComponentStats::from_sets(sets, transforms, resp, model.num_components(), model.gamma)?;
        Ok(Self {
            model,
            stats,
            sets_seen: sets.len(),
            update_priors,
        })
    }

    pub fn from_batch(sets: &[PointSet], result: &crate::batch::BatchResult, update_priors: bool) -> Result<Self> {
        Self::new(
            sets,
            &result.transforms,
            &result.responsibilities,
            result.model.clone(),
            update_priors,
        )
    }

    pub fn num_components(&self) -> usize {
        self.model.num_components()
    }
}

/// Posteriors of the new set under the mixture of the previous sets.
pub fn e_step_new_set(
    state: &IncrementalState,
    new_set: &PointSet,
    transform: &RigidTransform,
) -> Result<ResponsibilityMatrix> {
    Ok(PosteriorKernel::new(&state.model)?.responsibilities(new_set, transform))
}

/// Rigid alignment of the new set onto the frozen means.
pub fn m_rigid_new_set(
    state: &IncrementalState,
    new_set: &PointSet,
    resp: &ResponsibilityMatrix,
) -> Result<RigidTransform> {
    m_rigid_step(&RigidStepStatistics::new(new_set, resp, &state.model)?)
}

/// What changed in one mixture update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UpdateReport {
    /// Components the new set gave no mass to.
    pub skipped: Vec<usize>,
    /// Components whose recombined variance went negative.
    pub clamped: Vec<usize>,
}

/// Absorbs the new set into the mixture.
pub fn m_gmm_update(
    state: &IncrementalState,
    new_set: &PointSet,
    transform: &RigidTransform,
    resp: &ResponsibilityMatrix,
    form: UpdateForm,
) -> Result<(IncrementalState, UpdateReport)> {
    match form {
        UpdateForm::Moments => moment_update(state, new_set, transform, resp),
        UpdateForm::Recurrence => recurrence_update(state, new_set, transform, resp),
    }
}

fn moment_update(
    state: &IncrementalState,
    new_set: &PointSet,
    transform: &RigidTransform,
    resp: &ResponsibilityMatrix,
) -> Result<(IncrementalState, UpdateReport)> {
    let k = state.num_components();
    let gamma = state.model.gamma;
    let mut delta = ComponentStats::zeros(k);
    delta.accumulate(new_set, transform, resp, gamma)?;

    let mut next = state.clone();
    let mut report = UpdateReport::default();
    let floor = state.model.variance_floor();
    let stats = &mut next.stats;
    stats.outlier_mass += delta.outlier_mass;
    stats.points += delta.points;
    stats.eta += delta.eta;
    for c in 0..k {
        if !has_mass(delta.mass[c]) {
            report.skipped.push(c);
            continue;
        }
        stats.mass[c] += delta.mass[c];
        stats.first[c] += delta.first[c];
        stats.second[c] += delta.second[c];
        let mean = stats.first[c] / stats.mass[c];
        let raw = (stats.second[c] / stats.mass[c] - mean.norm_squared()) / 3.0;
        next.model.means[c] = mean;
        next.model.degenerate[c] = false;
        next.model.variances[c] = if raw < 0.0 {
            report.clamped.push(c);
            floor
        } else {
            raw + floor
        };
    }
    if state.update_priors {
        if !(stats.eta > 0.0) {
            return Err(Error::Domain(format!("prior normalizer eta = {}", stats.eta)));
        }
        for c in 0..k {
            next.model.priors[c] = stats.mass[c] / stats.eta;
        }
        let inlier: f64 = next.model.priors[..k].iter().sum();
        next.model.priors[k] = (1.0 - inlier).max(0.0);
    }
    next.sets_seen += 1;
    Ok((next, report))
}

/// Literal `zeta`-recurrences. `eta` grows by `(gamma + 1)(N_m + 1 - alpha_mk)`
/// per component, so priors are renormalized only through the outlier entry.
fn recurrence_update(
    state: &IncrementalState,
    new_set: &PointSet,
    transform: &RigidTransform,
    resp: &ResponsibilityMatrix,
) -> Result<(IncrementalState, UpdateReport)> {
    let k = state.num_components();
    let gamma = state.model.gamma;
    let vp = virtual_points(new_set, resp)?;
    let mut next = state.clone();
    let mut report = UpdateReport::default();
    let floor = state.model.variance_floor();
    let eta_prev = state.stats.eta;
    let n_m = new_set.len() as f64;
    for c in 0..k {
        let a = vp.masses[c];
        let Some(w) = vp.points[c] else {
            report.skipped.push(c);
            continue;
        };
        let zeta = eta_prev * state.model.priors[c] / a;
        if !zeta.is_finite() {
            report.skipped.push(c);
            continue;
        }
        let u = transform.apply(&w);
        let old_mean = state.model.means[c];
        let mean = (zeta * old_mean + u) / (zeta + 1.0);
        let dmu = mean - old_mean;
        let var = (zeta * state.model.variances[c] + dmu.norm_squared() - dmu.dot(&(u - old_mean / a))) / (zeta + 1.0);
        next.model.means[c] = mean;
        next.model.variances[c] = if var < floor {
            report.clamped.push(c);
            floor
        } else {
            var
        };
        if state.update_priors {
            let eta_k = eta_prev + (gamma + 1.0) * (n_m + 1.0 - a);
            next.model.priors[c] = (a * zeta + 1.0) / eta_k;
        }
    }
    if state.update_priors {
        let inlier: f64 = next.model.priors[..k].iter().sum();
        next.model.priors[k] = (1.0 - inlier).max(0.0);
    }
    next.stats.accumulate(new_set, transform, resp, gamma)?;
    next.sets_seen += 1;
    Ok((next, report))
}

/// Result of integrating one set.
#[derive(Debug, Clone)]
pub struct Integration {
    pub transform: RigidTransform,
    pub state: IncrementalState,
    pub responsibilities: ResponsibilityMatrix,
    /// Components re-initialized from the new set before integration.
    pub recycled: Vec<usize>,
    /// Rotation change (radians) of each iteration.
    pub rotation_changes: Vec<f64>,
    pub report: UpdateReport,
}

/// Replaces a share of the components with points of the new set, taken
/// under `transform`. Degenerate components go first, then random ones.
pub fn recycle_components(
    state: &IncrementalState,
    new_set: &PointSet,
    transform: &RigidTransform,
    count: usize,
    seed: u64,
) -> (IncrementalState, Vec<usize>) {
    let k = state.num_components();
    let count = count.min(k);
    if count == 0 {
        return (state.clone(), Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let floor = state.model.variance_floor();
    let is_degenerate = |c: usize| state.model.degenerate[c] || state.model.variances[c] <= floor * (1.0 + 1e-9);
    let mut chosen: Vec<usize> = (0..k).filter(|&c| is_degenerate(c)).collect();
    chosen.shuffle(&mut rng);
    chosen.truncate(count);
    if chosen.len() < count {
        let mut rest: Vec<usize> = (0..k).filter(|&c| !is_degenerate(c)).collect();
        rest.shuffle(&mut rng);
        chosen.extend(rest.into_iter().take(count - chosen.len()));
    }
    chosen.sort_unstable();

    let mut variances = state.model.variances.clone();
    let sigma = median(&mut variances);
    let spread = (sigma - floor).max(0.0);
    let mut next = state.clone();
    for &c in &chosen {
        let p = transform.apply(new_set.points().choose(&mut rng).expect("point sets are nonempty"));
        let m = next.stats.mass[c];
        next.model.means[c] = p;
        next.model.variances[c] = sigma;
        next.model.degenerate[c] = false;
        next.stats.first[c] = m * p;
        next.stats.second[c] = m * (p.norm_squared() + 3.0 * spread);
    }
    (next, chosen)
}

/// Registers one new set against the current mixture and absorbs it.
pub fn integrate_set(
    state: &IncrementalState,
    new_set: &PointSet,
    init_transform: &RigidTransform,
    cfg: &IncrementalConfig,
) -> Result<Integration> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("integration needs at least one iteration".into()));
    }
    let mut transform = *init_transform;
    let mut rotation_changes = Vec::with_capacity(cfg.iterations);
    for q in 1..=cfg.iterations {
        let r = e_step_new_set(state, new_set, &transform)?;
        let next = m_rigid_new_set(state, new_set, &r)?;
        if !next.is_valid(1e-6) || !next.translation.iter().all(|c| c.is_finite()) {
            return Err(Error::Diverged {
                iteration: q,
                reason: format!("invalid transform for set {}", new_set.id()),
            });
        }
        rotation_changes.push(rotation_angle(&(transform.rotation.transpose() * next.rotation)));
        transform = next;
    }

    // Recycled components are placed under the estimated pose; placing them
    // earlier would pull the new set back toward its initial pose.
    let (base, recycled) = if cfg.recycle {
        let k = state.num_components();
        let fraction = cfg
            .rejection_fraction
            .unwrap_or(1.0 / (state.sets_seen + 1) as f64);
        let count = (fraction * k as f64).round() as usize;
        recycle_components(state, new_set, &transform, count, cfg.seed.wrapping_add(state.sets_seen as u64))
    } else {
        (state.clone(), Vec::new())
    };
    let resp = e_step_new_set(&base, new_set, &transform)?;
    let (next_state, report) = m_gmm_update(&base, new_set, &transform, &resp, cfg.update_form)?;
    if next_state.model.validate().is_err() {
        return Err(Error::Diverged {
            iteration: cfg.iterations,
            reason: "mixture parameters became invalid".into(),
        });
    }
    Ok(Integration {
        transform,
        state: next_state,
        responsibilities: resp,
        recycled,
        rotation_changes,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    /// Frames per front-end group; successive groups share one frame.
    pub front_size: usize,
    /// Mean sets kept in the back-end window.
    pub back_size: usize,
    pub front_batch: BatchConfig,
    pub front_init: InitConfig,
    /// Batch iterations registering the first two mean sets.
    pub back_initial_iterations: usize,
    /// Batch refinement of the window after integrations.
    pub back_refine: BatchConfig,
    pub back_init: InitConfig,
    /// Refine the window every this many integrations; 0 disables.
    pub refine_every: usize,
    pub incremental: IncrementalConfig,
    pub volume: f64,
    pub epsilon: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        let aligned = InitConfig {
            mean_strategy: MeanStrategy::SampleAligned,
            translation_strategy: TranslationStrategy::Provided,
            k_policy: KPolicy::Fraction(0.6),
            sphere_radius_scale: 0.6,
            sigma_init: SigmaInit::Fixed(1e-3),
            seed: 0,
        };
        Self {
            front_size: 3,
            back_size: 10,
            front_batch: BatchConfig {
                max_iterations: 50,
                ..Default::default()
            },
            front_init: aligned.clone(),
            back_initial_iterations: 50,
            back_refine: BatchConfig {
                max_iterations: 30,
                fix_variance_iters: 0,
                ..Default::default()
            },
            back_init: aligned,
            refine_every: 1,
            incremental: IncrementalConfig::default(),
            volume: DEFAULT_VOLUME,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.front_size < 2 {
            return Err(Error::InvalidConfig("front_size must be >= 2".into()));
        }
        if self.back_size < 2 {
            return Err(Error::InvalidConfig("back_size must be >= 2".into()));
        }
        self.front_batch.validate()?;
        self.back_refine.validate()?;
        self.front_init.validate()?;
        self.back_init.validate()
    }
}

/// Frame ranges of the front-end groups, each overlapping the previous by one.
pub fn front_groups(len: usize, front_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    if len == 0 {
        return groups;
    }
    let mut start = 0;
    loop {
        let end = (start + front_size).min(len);
        groups.push(start..end);
        if end == len {
            break;
        }
        start = end - 1;
    }
    groups
}

#[derive(Debug, Clone)]
pub struct WindowedResult {
    /// Per-frame transforms into the global frame.
    pub transforms: Vec<RigidTransform>,
    /// Mixture of the last back-end window.
    pub model: MixtureModel,
    /// Inlier means of each front-end group, in that group's frame.
    pub mean_sets: Vec<PointSet>,
    /// Pose of each group's frame in the global frame.
    pub group_poses: Vec<RigidTransform>,
    pub groups: Vec<std::ops::Range<usize>>,
    /// Groups whose registration failed; their frames keep the initial pose.
    pub flagged_groups: Vec<usize>,
}

/// Front-end batch registration of short groups followed by incremental
/// back-end integration of their mean sets over a sliding window.
pub fn run_windowed(
    sequence: &[PointSet],
    init: Option<&[RigidTransform]>,
    cfg: &WindowConfig,
) -> Result<WindowedResult> {
    cfg.validate()?;
    if sequence.len() < cfg.front_size {
        return Err(Error::InvalidConfig(format!(
            "sequence of {} sets is shorter than the front-end group ({})",
            sequence.len(),
            cfg.front_size
        )));
    }
    if let Some(init) = init {
        if init.len() != sequence.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} initial transforms for {} sets",
                init.len(),
                sequence.len()
            )));
        }
    }
    let initial: Vec<RigidTransform> = match init {
        Some(t) => t.to_vec(),
        None => sequence.iter().map(|_| RigidTransform::identity()).collect(),
    };

    let groups = front_groups(sequence.len(), cfg.front_size);
    let mut local = vec![None; sequence.len()];
    let mut mean_sets = Vec::new();
    let mut mean_set_group = Vec::new();
    let mut flagged = Vec::new();
    let mut last_model = None;

    for (g, range) in groups.iter().enumerate() {
        let sets = &sequence[range.clone()];
        match register_group(sets, &initial[range.clone()], cfg) {
            Ok((transforms, model)) => {
                let labels = classify_components(&model);
                let means: Vec<Point> = model
                    .means
                    .iter()
                    .enumerate()
                    .filter(|(c, _)| labels.is_inlier(*c) && !model.degenerate[*c])
                    .map(|(_, m)| *m)
                    .collect();
                match PointSet::new(g, means) {
                    Ok(ms) if ms.len() >= 3 => {
                        for (f, t) in range.clone().zip(transforms) {
                            local[f].get_or_insert((g, t));
                        }
                        mean_sets.push(ms);
                        mean_set_group.push(g);
                        last_model = Some(model);
                    }
                    _ => {
                        log::warn!("group {g} produced no usable mean set");
                        flagged.push(g);
                    }
                }
            }
            Err(e) => {
                log::warn!("group {g} registration failed: {e}");
                flagged.push(g);
            }
        }
    }

    let mut group_poses = vec![RigidTransform::identity(); groups.len()];
    let model = if mean_sets.len() >= 2 {
        let (poses, model) = back_end(&mean_sets, cfg)?;
        for (g, p) in mean_set_group.iter().zip(poses) {
            group_poses[*g] = p;
        }
        model
    } else {
        last_model.ok_or(Error::Diverged {
            iteration: 0,
            reason: "every front-end group failed".into(),
        })?
    };

    let transforms = local
        .iter()
        .zip(&initial)
        .map(|(l, init)| match l {
            Some((g, t)) => group_poses[*g].compose(t),
            None => *init,
        })
        .collect();

    Ok(WindowedResult {
        transforms,
        model,
        mean_sets,
        group_poses,
        groups,
        flagged_groups: flagged,
    })
}

fn register_group(
    sets: &[PointSet],
    init: &[RigidTransform],
    cfg: &WindowConfig,
) -> Result<(Vec<RigidTransform>, MixtureModel)> {
    let (transforms, model) = initialize(
        sets,
        &cfg.front_init,
        cfg.front_batch.gamma,
        cfg.volume,
        cfg.epsilon,
        Some(init),
    )?;
    let result = run_batch(sets, &transforms, &model, &cfg.front_batch)?;
    Ok((result.transforms, result.model))
}

fn back_end(mean_sets: &[PointSet], cfg: &WindowConfig) -> Result<(Vec<RigidTransform>, MixtureModel)> {
    let identity = vec![RigidTransform::identity(); 2];
    let first = &mean_sets[..2];
    let (t0, m0) = initialize(first, &cfg.back_init, cfg.back_refine.gamma, cfg.volume, cfg.epsilon, Some(&identity))?;
    let initial_cfg = BatchConfig {
        max_iterations: cfg.back_initial_iterations.max(1),
        ..cfg.back_refine.clone()
    };
    let result = run_batch(first, &t0, &m0, &initial_cfg)?;
    let mut poses = result.transforms.clone();
    let mut state = IncrementalState::from_batch(first, &result, cfg.incremental.update_priors)?;
    let mut window: std::collections::VecDeque<usize> = (0..2).collect();
    let mut since_refine = 0;

    for (g, set) in mean_sets.iter().enumerate().skip(2) {
        let init = poses[g - 1];
        let integ = integrate_set(&state, set, &init, &cfg.incremental)?;
        poses.push(integ.transform);
        state = integ.state;
        window.push_back(g);
        while window.len() > cfg.back_size {
            window.pop_front();
        }
        since_refine += 1;
        if cfg.refine_every > 0 && since_refine >= cfg.refine_every {
            since_refine = 0;
            state = refine_window(mean_sets, &window, &mut poses, &state, cfg)?;
        }
    }
    Ok((poses, state.model))
}

/// Batch refinement of the window, re-anchored so the oldest member keeps
/// its pose.
fn refine_window(
    mean_sets: &[PointSet],
    window: &std::collections::VecDeque<usize>,
    poses: &mut [RigidTransform],
    state: &IncrementalState,
    cfg: &WindowConfig,
) -> Result<IncrementalState> {
    let sets: Vec<PointSet> = window.iter().map(|&g| mean_sets[g].clone()).collect();
    let init: Vec<RigidTransform> = window.iter().map(|&g| poses[g]).collect();
    let result = run_batch(&sets, &init, &state.model, &cfg.back_refine)?;
    let anchor = init[0].compose(&result.transforms[0].inverse());
    let corrected: Vec<RigidTransform> = result.transforms.iter().map(|t| anchor.compose(t)).collect();
    for (&g, t) in window.iter().zip(&corrected) {
        poses[g] = *t;
    }
    let model = result.model.transformed(&anchor);
    let mut next = IncrementalState::new(&sets, &corrected, &result.responsibilities, model, state.update_priors)?;
    next.sets_seen = state.sets_seen;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_overlap_by_one() {
        assert_eq!(front_groups(7, 3), vec![0..3, 2..5, 4..7]);
        assert_eq!(front_groups(6, 3), vec![0..3, 2..5, 4..6]);
        assert_eq!(front_groups(3, 3), vec![0..3]);
        assert_eq!(front_groups(15, 3).len(), 7);
    }

    #[test]
    fn default_window_matches_front_and_back_sizes() {
        let cfg = WindowConfig::default();
        assert_eq!((cfg.front_size, cfg.back_size), (3, 10));
        assert!(cfg.validate().is_ok());
    }
}
