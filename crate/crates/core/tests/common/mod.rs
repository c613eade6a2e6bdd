#![allow(dead_code)]

use jointreg::{MixtureModel, Point, PointSet, RigidTransform};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> Point {
    Point::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn random_transform(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> RigidTransform {
    let axis = loop {
        let a = random_point(rng, 1.0);
        if a.norm() > 0.1 {
            break a;
        }
    };
    let angle = if max_angle > 0.0 { rng.random_range(0.0..max_angle) } else { 0.0 };
    let shift = if max_shift > 0.0 { random_point(rng, max_shift) } else { Vector3::zeros() };
    RigidTransform::from_axis_angle(axis, angle, shift)
}

/// Sets drawn around `k` random centers, each seen through a random pose,
/// plus a mixture whose means are perturbed centers.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    m: usize,
    max_points: usize,
    k: usize,
    gamma: f64,
) -> (Vec<PointSet>, Vec<RigidTransform>, MixtureModel) {
    let centers: Vec<Point> = (0..k).map(|_| random_point(rng, 0.5)).collect();
    let mut sets = Vec::with_capacity(m);
    let mut transforms = Vec::with_capacity(m);
    for j in 0..m {
        let pose = random_transform(rng, 0.3, 0.05);
        let n = rng.random_range(max_points / 2..=max_points);
        let pts: Vec<Point> = (0..n)
            .map(|_| {
                let c = centers[rng.random_range(0..k)];
                pose.inverse().apply(&(c + random_point(rng, 0.05)))
            })
            .collect();
        sets.push(PointSet::new(j, pts).unwrap());
        transforms.push(random_transform(rng, 0.05, 0.01).compose(&pose));
    }
    let means: Vec<Point> = centers.iter().map(|c| c + random_point(rng, 0.03)).collect();
    let variances: Vec<f64> = (0..k).map(|_| rng.random_range(0.002..0.02)).collect();
    let model = MixtureModel::new(means, variances, gamma, std::f64::consts::PI / 6.0, 1e-3).unwrap();
    (sets, transforms, model)
}
