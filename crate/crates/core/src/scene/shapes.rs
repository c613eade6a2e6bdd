use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::init::fibonacci_sphere;
use crate::model::{bounding_box_diameter, centroid, Point};

/// Star-shaped surface with random bumps on a flattened ellipsoid, centered
/// at the origin and scaled to unit bounding-box diameter. The bumps break
/// every symmetry, so each view has a unique registration.
pub fn blob_surface(n_points: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(Point, f64, f64)> = (0..14)
        .map(|_| {
            let dir = Point::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            (dir, rng.random_range(0.3..0.8), rng.random_range(0.12..0.3))
        })
        .collect();
    let axes = Point::new(1.0, 0.5, 0.4);
    let pts: Vec<Point> = fibonacci_sphere(n_points)
        .into_iter()
        .map(|u| {
            let r = 1.0
                + bumps
                    .iter()
                    .map(|(c, a, w)| a * (-(u - c).norm_squared() / (2.0 * w * w)).exp())
                    .sum::<f64>();
            r * u.component_mul(&axes)
        })
        .collect();
    let c = centroid(&pts);
    let scale = bounding_box_diameter(&pts);
    pts.into_iter().map(|p| (p - c) / scale).collect()
}
