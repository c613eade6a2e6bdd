mod common;

use common::{random_instance, random_transform};
use jointreg::batch::{run_batch, BatchConfig};
use jointreg::incremental::{
    e_step_new_set, integrate_set, m_gmm_update, run_windowed, IncrementalConfig, IncrementalState, UpdateForm,
    WindowConfig,
};
use jointreg::init::{initialize, InitConfig, MeanStrategy, TranslationStrategy};
use jointreg::model::rotation_angle;
use jointreg::scene::blob_surface;
use jointreg::{e_step, m_gmm_step, GmmUpdate, PointSet, RigidTransform};
use nalgebra::Vector3;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// State for the first `m - 1` sets whose mixture is exactly the batch
/// M-step over them.
fn frozen_state(
    sets: &[PointSet],
    transforms: &[RigidTransform],
    model: &jointreg::MixtureModel,
    update_priors: bool,
) -> (IncrementalState, Vec<jointreg::ResponsibilityMatrix>) {
    let resp = e_step(sets, transforms, model).unwrap();
    let update = GmmUpdate {
        variances: true,
        priors: update_priors,
    };
    let fitted = m_gmm_step(sets, transforms, &resp, model, update).unwrap();
    (IncrementalState::new(sets, transforms, &resp, fitted, update_priors).unwrap(), resp)
}

#[test]
fn moment_update_equals_batch_over_all_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..100 {
        let m = 2 + trial % 4;
        let gamma = [0.0, 0.1, 1.0][trial % 3];
        let (sets, transforms, model) = random_instance(&mut rng, m, 60, 5 + trial % 6, gamma);
        let (state, mut resp) = frozen_state(&sets[..m - 1], &transforms[..m - 1], &model, true);

        let new_resp = e_step_new_set(&state, &sets[m - 1], &transforms[m - 1]).unwrap();
        let (next, report) = m_gmm_update(&state, &sets[m - 1], &transforms[m - 1], &new_resp, UpdateForm::Moments).unwrap();

        resp.push(new_resp);
        let update = GmmUpdate {
            variances: true,
            priors: true,
        };
        let batch = m_gmm_step(&sets, &transforms, &resp, &state.model, update).unwrap();
        for c in 0..model.num_components() {
            if report.skipped.contains(&c) {
                continue;
            }
            assert!((next.model.means[c] - batch.means[c]).norm() < 1e-9, "trial {trial} mean {c}");
            assert!((next.model.variances[c] - batch.variances[c]).abs() < 1e-9, "trial {trial} var {c}");
            assert!((next.model.priors[c] - batch.priors[c]).abs() < 1e-9, "trial {trial} prior {c}");
        }
        let n: usize = sets.iter().map(PointSet::len).sum();
        let outlier: f64 = resp.iter().map(|r| r.outlier_mass()).sum();
        let eta = (gamma + 1.0) * (n as f64 - outlier);
        assert!((next.stats.eta - eta).abs() < 1e-9 * eta.max(1.0), "trial {trial} eta");
        assert_eq!(next.sets_seen, m);
    }
}

#[test]
fn recurrence_means_agree_with_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let (sets, transforms, model) = random_instance(&mut rng, 3, 50, 6, 0.1);
        let (state, _) = frozen_state(&sets[..2], &transforms[..2], &model, true);
        let r = e_step_new_set(&state, &sets[2], &transforms[2]).unwrap();
        let (a, _) = m_gmm_update(&state, &sets[2], &transforms[2], &r, UpdateForm::Moments).unwrap();
        let (b, rep) = m_gmm_update(&state, &sets[2], &transforms[2], &r, UpdateForm::Recurrence).unwrap();
        for c in 0..6 {
            if rep.skipped.contains(&c) {
                continue;
            }
            assert!((a.model.means[c] - b.model.means[c]).norm() < 1e-9);
            assert!(b.model.variances[c] >= b.model.variance_floor());
        }
        assert_eq!(a.stats, b.stats);
    }
}

fn view(model: &[nalgebra::Vector3<f64>], pose: &RigidTransform, n: usize, rng: &mut ChaCha8Rng, id: usize) -> PointSet {
    let pts = model.choose_multiple(rng, n).map(|p| pose.inverse().apply(p)).collect();
    PointSet::new(id, pts).unwrap()
}

fn sample_init() -> InitConfig {
    InitConfig {
        mean_strategy: MeanStrategy::SampleOneSet,
        translation_strategy: TranslationStrategy::Provided,
        ..Default::default()
    }
}

#[test]
fn new_view_is_registered_against_frozen_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let surface = blob_surface(4000, 5);
    let poses: Vec<RigidTransform> = (0..4)
        .map(|j| RigidTransform::from_axis_angle(Vector3::y(), (8.0 * j as f64).to_radians(), Vector3::zeros()))
        .collect();
    let sets: Vec<PointSet> = poses.iter().enumerate().map(|(j, p)| view(&surface, p, 800, &mut rng, j)).collect();

    let ident = vec![RigidTransform::identity(); 3];
    let (t0, m0) = initialize(&sets[..3], &sample_init(), 0.1, std::f64::consts::PI / 6.0, 1e-3, Some(&ident)).unwrap();
    let cfg = BatchConfig {
        max_iterations: 300,
        fix_variance_iters: 0,
        ..Default::default()
    };
    let result = run_batch(&sets[..3], &t0, &m0, &cfg).unwrap();
    let state = IncrementalState::from_batch(&sets[..3], &result, false).unwrap();

    let init = result.transforms[2];
    let inc = IncrementalConfig {
        iterations: 30,
        ..Default::default()
    };
    let out = integrate_set(&state, &sets[3], &init, &inc).unwrap();
    // Relative pose of the new view against the first one.
    let est = result.transforms[0].inverse().compose(&out.transform);
    let truth = poses[0].inverse().compose(&poses[3]);
    let err = rotation_angle(&(est.rotation.transpose() * truth.rotation)).to_degrees();
    assert!(err < 1.0, "rotation error {err} deg");
    assert_eq!(out.state.sets_seen, 4);
    assert_eq!(out.recycled.len(), (state.num_components() as f64 / 4.0).round() as usize);
}

#[test]
fn windowed_pipeline_follows_smooth_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let surface = blob_surface(4000, 8);
    let poses: Vec<RigidTransform> = (0..9)
        .map(|j| RigidTransform::from_axis_angle(Vector3::y(), (6.0 * j as f64).to_radians(), Vector3::zeros()))
        .collect();
    let sets: Vec<PointSet> = poses.iter().enumerate().map(|(j, p)| view(&surface, p, 600, &mut rng, j)).collect();
    let init: Vec<RigidTransform> = poses
        .iter()
        .map(|p| random_transform(&mut rng, 2f64.to_radians(), 0.0).compose(p))
        .collect();
    let cfg = WindowConfig {
        back_size: 3,
        ..Default::default()
    };
    let out = run_windowed(&sets, Some(&init), &cfg).unwrap();
    assert!(out.flagged_groups.is_empty());
    assert_eq!(out.groups.len(), 4);
    assert_eq!(out.transforms.len(), 9);
    let angle = |t: &[RigidTransform], j: usize| {
        let est = t[0].inverse().compose(&t[j]);
        let truth = poses[0].inverse().compose(&poses[j]);
        rotation_angle(&(est.rotation.transpose() * truth.rotation)).to_degrees()
    };
    let est: Vec<f64> = (1..9).map(|j| angle(&out.transforms, j)).collect();
    let start: Vec<f64> = (1..9).map(|j| angle(&init, j)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&est) < mean(&start), "{est:?} vs initial {start:?}");
    assert!(est.iter().all(|e| *e < 3.0), "{est:?}");
}

#[test]
fn windowed_pipeline_rejects_short_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let surface = blob_surface(500, 1);
    let sets: Vec<PointSet> = (0..2).map(|j| view(&surface, &RigidTransform::identity(), 100, &mut rng, j)).collect();
    assert!(run_windowed(&sets, None, &WindowConfig::default()).is_err());
}
