//! Starting values for transforms and mixture parameters.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{bounding_box_diameter, centroid, median, MixtureModel, Point, PointSet, RigidTransform};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeanStrategy {
    /// Fibonacci lattice on a sphere enclosing the centered union.
    Sphere,
    /// Random points of the first (transformed) set.
    SampleOneSet,
    /// Random points of the union under caller-provided rough alignment.
    SampleAligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TranslationStrategy {
    Centroid,
    /// Per-coordinate median, robust to flying pixels.
    Median,
    Provided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KPolicy {
    /// `round(f * mean cardinality)`.
    Fraction(f64),
    Absolute(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaInit {
    /// Median squared distance between each mean and all points.
    MedianDistance,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub mean_strategy: MeanStrategy,
    pub translation_strategy: TranslationStrategy,
    pub k_policy: KPolicy,
    /// Sphere radius as a multiple of the union's bounding-box diameter.
    pub sphere_radius_scale: f64,
    pub sigma_init: SigmaInit,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mean_strategy: MeanStrategy::Sphere,
            translation_strategy: TranslationStrategy::Centroid,
            k_policy: KPolicy::Fraction(0.6),
            sphere_radius_scale: 0.6,
            sigma_init: SigmaInit::MedianDistance,
            seed: 0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        match self.k_policy {
            KPolicy::Fraction(f) if !(f > 0.0 && f <= 4.0) => {
                return Err(Error::InvalidConfig(format!("K fraction must be in (0, 4], got {f}")))
            }
            KPolicy::Absolute(0) => return Err(Error::InvalidConfig("K must be >= 1".into())),
            _ => {}
        }
        if !(self.sphere_radius_scale > 0.0) {
            return Err(Error::InvalidConfig("sphere_radius_scale must be > 0".into()));
        }
        if let SigmaInit::Fixed(v) = self.sigma_init {
            if !(v > 0.0) {
                return Err(Error::InvalidConfig(format!("fixed sigma must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Identity rotations; translations send each set's centroid (or median)
/// to the origin. `Provided` returns `provided` unchanged.
pub fn init_transforms(
    sets: &[PointSet],
    cfg: &InitConfig,
    provided: Option<&[RigidTransform]>,
) -> Result<Vec<RigidTransform>> {
    if sets.is_empty() {
        return Err(Error::InvalidPointSet("no point sets".into()));
    }
    if let Some(s) = sets.iter().find(|s| s.is_empty()) {
        return Err(Error::InvalidPointSet(format!("set {} is empty", s.id())));
    }
    match cfg.translation_strategy {
        TranslationStrategy::Centroid => Ok(sets
            .iter()
            .map(|s| RigidTransform::from_translation(-s.centroid()))
            .collect()),
        TranslationStrategy::Median => Ok(sets
            .iter()
            .map(|s| RigidTransform::from_translation(-coordinate_median(s.points())))
            .collect()),
        TranslationStrategy::Provided => match provided {
            Some(p) if p.len() == sets.len() => Ok(p.to_vec()),
            Some(p) => Err(Error::DimensionMismatch(format!(
                "{} provided transforms for {} sets",
                p.len(),
                sets.len()
            ))),
            None => Err(Error::InvalidConfig(
                "translation strategy 'provided' needs caller transforms".into(),
            )),
        },
    }
}

fn coordinate_median(points: &[Point]) -> Point {
    let mut out = Point::zeros();
    for d in 0..3 {
        let mut c: Vec<f64> = points.iter().map(|p| p[d]).collect();
        out[d] = median(&mut c);
    }
    out
}

fn transformed_union(sets: &[PointSet], transforms: &[RigidTransform]) -> Vec<Point> {
    sets.iter()
        .zip(transforms)
        .flat_map(|(s, t)| s.points().iter().map(move |p| t.apply(p)))
        .collect()
}

/// `K` points of a Fibonacci lattice on a sphere around the union's centroid.
pub fn init_means_sphere(
    sets: &[PointSet],
    transforms: &[RigidTransform],
    k: usize,
    cfg: &InitConfig,
) -> Vec<Point> {
    let union = transformed_union(sets, transforms);
    let center = centroid(&union);
    let radius = cfg.sphere_radius_scale * bounding_box_diameter(&union);
    fibonacci_sphere(k)
        .into_iter()
        .map(|u| center + radius * u)
        .collect()
}

/// Unit vectors of the golden-angle spiral lattice.
pub fn fibonacci_sphere(k: usize) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
            let r = (1.0 - y * y).max(0.0).sqrt();
            let phi = golden * i as f64;
            Point::new(r * phi.cos(), y, r * phi.sin())
        })
        .collect()
}

/// Random points drawn from the transformed sets. `first_only` restricts the
/// draw to the first set. Sampling is without replacement while possible.
pub fn init_means_sampled(
    sets: &[PointSet],
    transforms: &[RigidTransform],
    k: usize,
    first_only: bool,
    seed: u64,
) -> Vec<Point> {
    let pool = if first_only {
        sets[0].transformed(&transforms[0])
    } else {
        transformed_union(sets, transforms)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let take = (k - out.len()).min(pool.len());
        out.extend(pool.choose_multiple(&mut rng, take).copied());
    }
    out
}

pub fn init_variances(
    sets: &[PointSet],
    transforms: &[RigidTransform],
    means: &[Point],
    cfg: &InitConfig,
) -> Vec<f64> {
    match cfg.sigma_init {
        SigmaInit::Fixed(v) => vec![v; means.len()],
        SigmaInit::MedianDistance => {
            let union = transformed_union(sets, transforms);
            let mut buf = vec![0.0; union.len()];
            means
                .iter()
                .map(|m| {
                    for (b, x) in buf.iter_mut().zip(&union) {
                        *b = (x - m).norm_squared();
                    }
                    median(&mut buf)
                })
                .collect()
        }
    }
}

/// Number of components under `policy`, never below 3.
pub fn choose_k(sets: &[PointSet], policy: KPolicy) -> Result<usize> {
    if sets.is_empty() {
        return Err(Error::InvalidPointSet("no point sets".into()));
    }
    let k = match policy {
        KPolicy::Absolute(k) => k,
        KPolicy::Fraction(f) => {
            let mean = sets.iter().map(PointSet::len).sum::<usize>() as f64 / sets.len() as f64;
            (f * mean).round() as usize
        }
    };
    if k < 3 {
        log::warn!("K = {k} is too small for the rigid step, using 3");
        return Ok(3);
    }
    Ok(k)
}

/// Everything needed to start EM.
pub fn initialize(
    sets: &[PointSet],
    cfg: &InitConfig,
    gamma: f64,
    volume: f64,
    epsilon: f64,
    provided: Option<&[RigidTransform]>,
) -> Result<(Vec<RigidTransform>, MixtureModel)> {
    cfg.validate()?;
    let transforms = init_transforms(sets, cfg, provided)?;
    let k = choose_k(sets, cfg.k_policy)?;
    let means = match cfg.mean_strategy {
        MeanStrategy::Sphere => init_means_sphere(sets, &transforms, k, cfg),
        MeanStrategy::SampleOneSet => init_means_sampled(sets, &transforms, k, true, cfg.seed),
        MeanStrategy::SampleAligned => {
            if provided.is_none() {
                return Err(Error::InvalidConfig(
                    "sample-aligned means need caller-provided transforms".into(),
                ));
            }
            init_means_sampled(sets, &transforms, k, false, cfg.seed)
        }
    };
    let mut variances = init_variances(sets, &transforms, &means, cfg);
    let floor = epsilon * epsilon;
    for v in &mut variances {
        *v = v.max(floor);
    }
    let model = MixtureModel::new(means, variances, gamma, volume, epsilon)?;
    Ok((transforms, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn cloud(seed: u64, n: usize, offset: Point) -> PointSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| offset + Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        PointSet::new(0, pts).unwrap()
    }

    #[test]
    fn translated_sets_share_a_centroid_after_init() {
        let a = cloud(1, 50, Point::zeros());
        let shift = Point::new(3.0, -1.0, 2.0);
        let b = PointSet::new(1, a.points().iter().map(|p| p + shift).collect()).unwrap();
        let t = init_transforms(&[a.clone(), b.clone()], &InitConfig::default(), None).unwrap();
        let ca = centroid(&a.transformed(&t[0]));
        let cb = centroid(&b.transformed(&t[1]));
        assert!((ca - cb).norm() < 1e-12);
    }

    #[test]
    fn single_set_translation_is_minus_centroid() {
        let a = cloud(2, 30, Point::new(1.0, 2.0, 3.0));
        let t = init_transforms(std::slice::from_ref(&a), &InitConfig::default(), None).unwrap();
        assert_eq!(t[0].rotation, nalgebra::Matrix3::identity());
        assert_relative_eq!(t[0].translation, -a.centroid(), epsilon = 1e-15);
    }

    #[test]
    fn median_translation_resists_planted_outliers() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut blob = |n: usize, c: Point| -> Vec<Point> {
            (0..n)
                .map(|_| c + Point::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect()
        };
        let clean_a = blob(2000, Point::zeros());
        let clean_b = blob(2000, Point::new(0.5, 0.5, 0.5));
        let truth = centroid(&clean_b) - centroid(&clean_a);
        let mut dirty_b = clean_b.clone();
        dirty_b.extend(std::iter::repeat_n(Point::new(30.0, 30.0, 30.0), 200));
        let sets = [PointSet::new(0, clean_a).unwrap(), PointSet::new(1, dirty_b).unwrap()];
        let med = InitConfig {
            translation_strategy: TranslationStrategy::Median,
            ..Default::default()
        };
        let tm = init_transforms(&sets, &med, None).unwrap();
        let tc = init_transforms(&sets, &InitConfig::default(), None).unwrap();
        let diff_m = tm[0].translation - tm[1].translation;
        let diff_c = tc[0].translation - tc[1].translation;
        assert!((diff_m - truth).norm() < 0.05, "{}", (diff_m - truth).norm());
        assert!((diff_c - truth).norm() > 0.05);
    }

    #[test]
    fn sphere_means_lie_on_the_sphere() {
        let a = cloud(5, 100, Point::zeros());
        let t = init_transforms(std::slice::from_ref(&a), &InitConfig::default(), None).unwrap();
        let cfg = InitConfig::default();
        let union = a.transformed(&t[0]);
        let center = centroid(&union);
        let radius = 0.6 * bounding_box_diameter(&union);
        for k in [1, 7, 64] {
            let means = init_means_sphere(std::slice::from_ref(&a), &t, k, &cfg);
            assert_eq!(means.len(), k);
            for m in means {
                assert!(((m - center).norm() - radius).abs() < 1e-12);
            }
        }
        assert!(radius >= 0.5 * bounding_box_diameter(&union));
    }

    #[test]
    fn variance_one_point() {
        let a = PointSet::new(0, vec![Point::new(3.0, 4.0, 0.0)]).unwrap();
        let t = [RigidTransform::identity()];
        let v = init_variances(std::slice::from_ref(&a), &t, &[Point::zeros()], &InitConfig::default());
        assert_relative_eq!(v[0], 25.0, epsilon = 1e-12);
        let cfg = InitConfig { sigma_init: SigmaInit::Fixed(0.1), ..Default::default() };
        assert_eq!(init_variances(&[a], &t, &[Point::zeros(); 4], &cfg), vec![0.1; 4]);
    }

    #[test]
    fn variance_matches_sort_based_median() {
        let a = cloud(6, 41, Point::zeros());
        let b = cloud(7, 22, Point::x());
        let sets = [a, b];
        let t = [RigidTransform::identity(); 2];
        let means = vec![Point::zeros(), Point::new(0.3, -0.2, 1.0), Point::new(2.0, 0.0, 0.0)];
        let v = init_variances(&sets, &t, &means, &InitConfig::default());
        for (m, got) in means.iter().zip(v) {
            let mut d: Vec<f64> = sets.iter().flat_map(|s| s.points().iter().map(|p| (p - m).norm_squared())).collect();
            d.sort_by(f64::total_cmp);
            let n = d.len();
            let want = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn k_selection() {
        let mk = |n: usize, id| PointSet::new(id, vec![Point::zeros(); n]).unwrap();
        let sets = [mk(1000, 0), mk(2000, 1)];
        assert_eq!(choose_k(&sets, KPolicy::Fraction(0.6)).unwrap(), 900);
        assert_eq!(choose_k(&[mk(700, 0), mk(700, 1)], KPolicy::Fraction(1.0)).unwrap(), 700);
        assert_eq!(choose_k(&sets, KPolicy::Absolute(450)).unwrap(), 450);
        assert_eq!(choose_k(&[mk(2, 0)], KPolicy::Fraction(0.5)).unwrap(), 3);
        assert!(choose_k(&[], KPolicy::Absolute(4)).is_err());
    }

    #[test]
    fn priors_start_uniform() {
        let a = cloud(8, 60, Point::zeros());
        let (_, model) = initialize(&[a], &InitConfig::default(), 0.1, 1.0, 1e-3, None).unwrap();
        let k = model.num_components();
        for p in &model.priors {
            assert!((p - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn union_centroid_at_origin_after_centering() {
        let sets = [cloud(9, 40, Point::new(5.0, 0.0, 0.0)), cloud(10, 70, Point::new(0.0, -2.0, 1.0))];
        let t = init_transforms(&sets, &InitConfig::default(), None).unwrap();
        assert!(centroid(&transformed_union(&sets, &t)).norm() < 1e-9);
    }

    #[test]
    fn config_bounds() {
        let bad = InitConfig { k_policy: KPolicy::Fraction(5.0), ..Default::default() };
        assert!(bad.validate().is_err());
        let a = cloud(11, 10, Point::zeros());
        let cfg = InitConfig { mean_strategy: MeanStrategy::SampleAligned, ..Default::default() };
        assert!(initialize(&[a], &cfg, 0.1, 1.0, 1e-3, None).is_err());
    }
}
