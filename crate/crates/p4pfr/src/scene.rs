//! Synthetic scene generation, exact forward projection under the division
//! model, and the numerical-stability / timing benchmark.
//!
//! The random-instance distribution is this crate's own (documented here):
//! world points uniform in a square on the plane `Z = 0`, a camera placed on
//! a cone around the plane normal looking near the point centroid, and focal
//! length / distortion drawn uniformly from their ranges. Instances where a
//! point projects behind the camera or outside the invertible range of the
//! distortion are rejected and redrawn.

use crate::solver::{self, ImagePoint, SolverConfig};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SceneError {
    #[error("instance generation exhausted its rejection budget")]
    GenerationExhausted,
}

/// Parameters of the synthetic generator. `f` is in normalized image units
/// and `k` in units of inverse squared normalized image radius.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_points: usize,
    /// Half-width of the square the world points are drawn from.
    pub world_extent: f64,
    pub f_range: [f64; 2],
    pub k_range: [f64; 2],
    /// Distance of the camera from the point centroid, scene units.
    pub depth_range: [f64; 2],
    /// Max angle between the camera direction and the plane normal, degrees.
    pub max_view_angle: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_points: 4,
            world_extent: 1.0,
            f_range: [0.5, 5.0],
            // Skewed negative: barrel distortion dominates real lenses, the
            // small positive tail exercises the pincushion branch.
            k_range: [-0.6, 0.1],
            depth_range: [2.0, 10.0],
            max_view_angle: 60.0,
        }
    }
}

/// A generated instance together with everything needed to verify a solve.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub f: f64,
    pub k: f64,
    pub world3d: Vec<Vector3<f64>>,
    pub image: Vec<ImagePoint>,
    pub depths: Vec<f64>,
}

/// Forward division-model distortion: map an undistorted point to the
/// distorted one, solving `r_u = r_d / (1 + k r_d²)` on the branch that is
/// continuous with the identity at `k = 0`.
///
/// Returns `None` when `1 - 4 k r_u² < 0` (outside the invertible range).
pub fn distort_forward(xu: f64, yu: f64, k: f64) -> Option<(f64, f64)> {
    let z = k * (xu * xu + yu * yu);
    if z == 0.0 {
        return Some((xu, yu));
    }
    let disc = 1.0 - 4.0 * z;
    if disc < 0.0 {
        return None;
    }
    // r_d/r_u = (1 - sqrt(1-4z)) / (2z) in the cancellation-free form.
    let s = 2.0 / (1.0 + disc.sqrt());
    let (xd, yd) = (xu * s, yu * s);
    debug_assert!({
        // Post-verify the round trip. Undistorting divides by 1 + k r_d² = s,
        // so the achievable relative accuracy degrades like 1/s under extreme
        // compression (|z| ≫ 1, only reachable with hypothesis-stage k).
        let rd2 = xd * xd + yd * yd;
        let back = 1.0 + k * rd2;
        let tol = 1e-12 / s.min(1.0);
        (xd / back - xu).abs() <= tol * (1.0 + xu.abs())
            && (yd / back - yu).abs() <= tol * (1.0 + yu.abs())
    });
    Some((xd, yd))
}

/// Derivative `ds/dz` of the forward-distortion scale `s(z) = 2/(1+sqrt(1-4z))`
/// with `z = k r_u²`. Used by the Gauss-Newton refinement Jacobian.
pub(crate) fn distort_scale_and_deriv(z: f64) -> Option<(f64, f64)> {
    let disc = 1.0 - 4.0 * z;
    if disc <= 0.0 {
        return None;
    }
    let d = disc.sqrt();
    let s = 2.0 / (1.0 + d);
    let ds = 4.0 / (d * (1.0 + d) * (1.0 + d));
    Some((s, ds))
}

/// Project a world point through `(R, t, f)` and apply forward distortion.
/// `None` if the point is behind the camera or outside the invertible
/// distortion range.
pub fn project(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    f: f64,
    k: f64,
    world: &Vector3<f64>,
) -> Option<ImagePoint> {
    let cam = r * world + t;
    if cam.z <= 0.0 {
        return None;
    }
    let xu = f * cam.x / cam.z;
    let yu = f * cam.y / cam.z;
    let (xd, yd) = distort_forward(xu, yu, k)?;
    Some(ImagePoint::new(xd, yd))
}

const MAX_GENERATION_ATTEMPTS: usize = 1000;
/// Smallest acceptable max-triangle area, relative to `world_extent²`.
const MIN_TRIANGLE_AREA_FRAC: f64 = 0.1;

/// Deterministically generate one ground-truth instance from `config.seed`.
pub fn random_instance(config: &SceneConfig) -> Result<GroundTruth, SceneError> {
    assert!(config.n_points >= 3);
    assert!(config.f_range[0] > 0.0 && config.f_range[1] >= config.f_range[0]);
    assert!(config.depth_range[0] > 0.0 && config.depth_range[1] >= config.depth_range[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let e = config.world_extent;

    'attempt: for _ in 0..MAX_GENERATION_ATTEMPTS {
        let pts: Vec<(f64, f64)> = (0..config.n_points)
            .map(|_| (rng.random_range(-e..e), rng.random_range(-e..e)))
            .collect();
        if max_triangle_area(&pts) < MIN_TRIANGLE_AREA_FRAC * e * e {
            continue;
        }
        let world3d: Vec<Vector3<f64>> =
            pts.iter().map(|&(x, y)| Vector3::new(x, y, 0.0)).collect();
        let n = config.n_points as f64;
        let centroid = world3d.iter().sum::<Vector3<f64>>() / n;

        let f = sample_range(&mut rng, config.f_range[0], config.f_range[1]);
        let k = sample_range(&mut rng, config.k_range[0], config.k_range[1]);
        let depth = sample_range(&mut rng, config.depth_range[0], config.depth_range[1]);

        // Camera center on a cone around the plane normal.
        let max_ang = config.max_view_angle.to_radians();
        let cos_t = sample_range(&mut rng, max_ang.cos(), 1.0);
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t);
        let center = centroid + depth * dir;

        // Look near (not exactly at) the centroid so it lands near the image
        // center, with a uniformly random roll about the optical axis.
        let target = centroid
            + Vector3::new(
                rng.random_range(-0.1..0.1) * e,
                rng.random_range(-0.1..0.1) * e,
                0.0,
            );
        let zc = (target - center).normalize();
        let seed_axis = if zc.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let x0 = (seed_axis - zc * seed_axis.dot(&zc)).normalize();
        let y0 = zc.cross(&x0);
        let roll = rng.random_range(0.0..std::f64::consts::TAU);
        let xc = x0 * roll.cos() + y0 * roll.sin();
        let yc = y0 * roll.cos() - x0 * roll.sin();
        let r = Matrix3::from_rows(&[xc.transpose(), yc.transpose(), zc.transpose()]);
        let t = -r * center;

        let mut image = Vec::with_capacity(config.n_points);
        let mut depths = Vec::with_capacity(config.n_points);
        for wp in &world3d {
            let cam = r * wp + t;
            if cam.z <= 0.0 {
                continue 'attempt;
            }
            match project(&r, &t, f, k, wp) {
                Some(ip) => {
                    image.push(ip);
                    depths.push(cam.z);
                }
                None => continue 'attempt,
            }
        }
        return Ok(GroundTruth {
            r,
            t,
            f,
            k,
            world3d,
            image,
            depths,
        });
    }
    Err(SceneError::GenerationExhausted)
}

fn sample_range(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn max_triangle_area(pts: &[(f64, f64)]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for l in j + 1..pts.len() {
                let (a, b, c) = (pts[i], pts[j], pts[l]);
                let area =
                    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs();
                best = best.max(area);
            }
        }
    }
    best
}

/// Histogram of `log10` max-reprojection errors plus run statistics.
#[derive(Debug, Clone)]
pub struct HistogramReport {
    pub bin_width: f64,
    pub range: [f64; 2],
    /// `(bin_left, fraction-of-instances)` per bin. Fractions are of all `n`
    /// instances, so they sum to `1 - fail_rate`.
    pub bins: Vec<(f64, f64)>,
    pub n: usize,
    pub failures: usize,
    pub median_log10_err: f64,
    pub p99_log10_err: f64,
    pub mean_solve_us: f64,
    pub median_solve_us: f64,
}

impl HistogramReport {
    pub fn fail_rate(&self) -> f64 {
        self.failures as f64 / self.n as f64
    }

    /// Left edge of the most populated bin.
    pub fn mode_bin_left(&self) -> f64 {
        self.bins
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|b| b.0)
            .unwrap_or(self.range[0])
    }

    /// Fraction of all instances with `log10` error above the threshold
    /// (failures not included).
    pub fn fraction_above(&self, log10_threshold: f64) -> f64 {
        self.bins
            .iter()
            .filter(|(left, _)| *left >= log10_threshold)
            .map(|(_, frac)| frac)
            .sum()
    }
}

/// Run the stability benchmark: `n` seeded instances, solve each, histogram
/// the best solution's max reprojection error (normalized image units, log10,
/// clamped into `range`). Per-instance seeds are `config.seed + index`, so
/// results do not depend on evaluation order. Instances with no solution
/// count as failures rather than entering the histogram.
pub fn benchmark_histogram(
    n: usize,
    config: &SceneConfig,
    solver_cfg: &SolverConfig,
    bin_width: f64,
    range: [f64; 2],
) -> Result<HistogramReport, SceneError> {
    assert!(n >= 1);
    assert!(bin_width > 0.0 && range[1] > range[0]);
    assert_eq!(config.n_points, 4, "the minimal solver takes exactly 4 points");
    let nbins = ((range[1] - range[0]) / bin_width).round().max(1.0) as usize;
    let mut counts = vec![0usize; nbins];
    let mut logs = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    let mut failures = 0usize;

    for i in 0..n {
        let inst = SceneConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        let gt = random_instance(&inst)?;
        let world: [Vector3<f64>; 4] = std::array::from_fn(|j| gt.world3d[j]);
        let image: [ImagePoint; 4] = std::array::from_fn(|j| gt.image[j]);

        let t0 = Instant::now();
        let outcome = solver::solve(&world, &image, solver_cfg);
        times.push(t0.elapsed().as_secs_f64() * 1e6);

        let best_err = match &outcome {
            Ok(out) if !out.solutions.is_empty() => Some(out.solutions[0].max_reproj_err),
            _ => None,
        };
        match best_err {
            Some(err) => {
                let log = normalized_log10_error(err, &image);
                let clamped = log.clamp(range[0], range[1]);
                let idx = (((clamped - range[0]) / bin_width) as usize).min(nbins - 1);
                counts[idx] += 1;
                logs.push(clamped);
            }
            None => failures += 1,
        }
    }

    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (range[0] + i as f64 * bin_width, c as f64 / n as f64))
        .collect();
    logs.sort_by(f64::total_cmp);
    times.sort_by(f64::total_cmp);
    let median_log = percentile(&logs, 0.5, range[1]);
    let p99_log = percentile(&logs, 0.99, range[1]);
    let median_time = percentile(&times, 0.5, 0.0);
    let mean_time = if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    Ok(HistogramReport {
        bin_width,
        range,
        bins,
        n,
        failures,
        median_log10_err: median_log,
        p99_log10_err: p99_log,
        mean_solve_us: mean_time,
        median_solve_us: median_time,
    })
}

/// Max reprojection error in normalized image units (RMS radius √2), making
/// log-error histograms comparable across focal lengths.
pub fn normalized_log10_error(err: f64, image: &[ImagePoint; 4]) -> f64 {
    let rms = (image.iter().map(|p| p.r2()).sum::<f64>() / 4.0).sqrt();
    let scale = if rms > 0.0 {
        std::f64::consts::SQRT_2 / rms
    } else {
        1.0
    };
    (err * scale).log10()
}

fn percentile(sorted: &[f64], q: f64, empty: f64) -> f64 {
    if sorted.is_empty() {
        return empty;
    }
    let idx = ((sorted.len() as f64 * q) as usize).min(sorted.len() - 1);
    sorted[idx]
}

/// Verify the projection equation `λ u = P U` for every generated point.
/// Used by tests and the generator invariants.
pub fn projection_residual(gt: &GroundTruth) -> f64 {
    let mut worst = 0.0f64;
    let w = 1.0 / gt.f;
    for (i, wp) in gt.world3d.iter().enumerate() {
        let cam = gt.r * wp + gt.t;
        let pu = Vector3::new(cam.x, cam.y, w * cam.z);
        let ip = &gt.image[i];
        let u = Vector3::new(ip.x, ip.y, 1.0 + gt.k * ip.r2());
        let resid = u.cross(&pu).norm() / (u.norm() * pu.norm());
        worst = worst.max(resid);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distort_identity_when_k_zero() {
        assert_eq!(distort_forward(0.3, -0.7, 0.0), Some((0.3, -0.7)));
    }

    #[test]
    fn distort_center_is_fixed_point() {
        assert_eq!(distort_forward(0.0, 0.0, -0.4), Some((0.0, 0.0)));
        assert_eq!(distort_forward(0.0, 0.0, 0.2), Some((0.0, 0.0)));
    }

    #[test]
    fn distort_quarter_barrel_matches_quadratic() {
        // k = -0.25 at r_u = 1 along x: the quadratic branch gives
        // r_d = 2(√2 - 1) ≈ 0.8284, and undistorting returns r_u = 1.
        let (xd, yd) = distort_forward(1.0, 0.0, -0.25).unwrap();
        assert!((xd - 2.0 * (std::f64::consts::SQRT_2 - 1.0)).abs() < 1e-15);
        assert_eq!(yd, 0.0);
        let back = xd / (1.0 + (-0.25) * xd * xd);
        assert!((back - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distort_out_of_range_is_none() {
        // k r_u² = 0.5 > 1/4.
        assert_eq!(distort_forward(1.0, 1.0, 0.25), None);
    }

    #[test]
    fn distort_round_trip_bulk() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0usize;
        while checked < 100_000 {
            let xu = rng.random_range(-2.0..2.0);
            let yu = rng.random_range(-2.0..2.0);
            let k = rng.random_range(-0.6..0.1);
            if let Some((xd, yd)) = distort_forward(xu, yu, k) {
                let d = 1.0 + k * (xd * xd + yd * yd);
                assert!((xd / d - xu).abs() <= 1e-12 * (1.0 + xu.abs()));
                assert!((yd / d - yu).abs() <= 1e-12 * (1.0 + yu.abs()));
                checked += 1;
            }
        }
    }

    #[test]
    fn project_on_axis() {
        let p = project(
            &Matrix3::identity(),
            &Vector3::new(0.0, 0.0, 5.0),
            1.0,
            0.0,
            &Vector3::zeros(),
        )
        .unwrap();
        assert_eq!((p.x, p.y), (0.0, 0.0));
    }

    #[test]
    fn project_pinhole_arithmetic() {
        let p = project(
            &Matrix3::identity(),
            &Vector3::new(0.0, 0.0, 2.0),
            2.0,
            0.0,
            &Vector3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert!((p.x - 1.0).abs() < 1e-15 && p.y.abs() < 1e-15);
    }

    #[test]
    fn project_behind_camera_is_none() {
        assert_eq!(
            project(
                &Matrix3::identity(),
                &Vector3::new(0.0, 0.0, -1.0),
                1.0,
                0.0,
                &Vector3::zeros()
            ),
            None
        );
    }

    #[test]
    fn project_scene_scale_homogeneous() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let gt = random_instance(&SceneConfig {
                seed: rng.random(),
                ..SceneConfig::default()
            })
            .unwrap();
            let c = rng.random_range(0.1..10.0);
            let p0 = project(&gt.r, &gt.t, gt.f, gt.k, &gt.world3d[0]).unwrap();
            let p1 = project(&gt.r, &(gt.t * c), gt.f, gt.k, &(gt.world3d[0] * c)).unwrap();
            assert!((p0.x - p1.x).abs() <= 1e-12 * (1.0 + p0.x.abs()));
            assert!((p0.y - p1.y).abs() <= 1e-12 * (1.0 + p0.y.abs()));
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SceneConfig {
            seed: 1234,
            ..SceneConfig::default()
        };
        let a = random_instance(&cfg).unwrap();
        let b = random_instance(&cfg).unwrap();
        assert_eq!(a.r, b.r);
        assert_eq!(a.t, b.t);
        assert_eq!(a.f, b.f);
        assert_eq!(a.k, b.k);
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn zero_k_range_gives_pinhole_images() {
        let cfg = SceneConfig {
            seed: 99,
            k_range: [0.0, 0.0],
            ..SceneConfig::default()
        };
        let gt = random_instance(&cfg).unwrap();
        assert_eq!(gt.k, 0.0);
        for (wp, ip) in gt.world3d.iter().zip(&gt.image) {
            let cam = gt.r * wp + gt.t;
            assert!((ip.x - gt.f * cam.x / cam.z).abs() < 1e-15);
            assert!((ip.y - gt.f * cam.y / cam.z).abs() < 1e-15);
        }
    }

    #[test]
    fn generator_invariants_hold() {
        for seed in 0..10_000u64 {
            let gt = random_instance(&SceneConfig {
                seed,
                ..SceneConfig::default()
            })
            .unwrap();
            assert!(projection_residual(&gt) <= 1e-12, "seed {seed}");
            for (d, ip) in gt.depths.iter().zip(&gt.image) {
                assert!(*d > 0.0);
                assert!(1.0 + gt.k * ip.r2() > 0.0);
            }
            assert!(gt.r.determinant() > 0.999999);
            assert!((gt.r * gt.r.transpose() - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn infeasible_config_exhausts_generation() {
        // k = 10 puts every projected point outside the invertible
        // distortion range, so no instance can be generated.
        let cfg = SceneConfig {
            seed: 5,
            k_range: [10.0, 10.0],
            f_range: [5.0, 5.0],
            ..SceneConfig::default()
        };
        assert!(matches!(
            random_instance(&cfg),
            Err(SceneError::GenerationExhausted)
        ));
    }

    #[test]
    fn histogram_single_instance() {
        let report = benchmark_histogram(
            1,
            &SceneConfig::default(),
            &SolverConfig::default(),
            0.2,
            [-20.0, -3.0],
        )
        .unwrap();
        assert_eq!(report.n, 1);
        let total: f64 = report.bins.iter().map(|(_, f)| f).sum();
        assert!((total - (1.0 - report.fail_rate())).abs() < 1e-12);
        if report.failures == 0 {
            assert_eq!(report.bins.iter().filter(|(_, f)| *f > 0.0).count(), 1);
        }
    }
}
