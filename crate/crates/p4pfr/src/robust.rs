//! Robust pose estimation over `n >= 4` coplanar correspondences: MSAC-style
//! hypothesize-and-verify around the minimal solver, with optional
//! Gauss–Newton refinement of the winning model on its inliers.

use crate::scene::{distort_scale_and_deriv, project};
use crate::solver::{
    fit_plane, solve_in_plane, ImagePoint, PoseSolution, SolveError, SolverConfig, WorldPoint,
};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RansacConfig {
    pub max_iters: usize,
    /// Inlier threshold on the reprojection error, original image units.
    pub inlier_threshold: f64,
    /// Target probability of having sampled one all-inlier subset.
    pub confidence: f64,
    pub seed: u64,
    /// Refine the best model on its inliers before returning.
    pub refine: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            inlier_threshold: 2.0,
            confidence: 0.999,
            seed: 0,
            refine: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobustResult {
    pub solution: PoseSolution,
    pub inlier_mask: Vec<bool>,
    pub iterations_run: usize,
    /// MSAC score after each improvement of the best model.
    pub score_history: Option<Vec<f64>>,
}

/// Reprojection error of every correspondence under `(R, t, f, k)`; points
/// behind the camera or outside the distortion range score infinite.
fn point_errors(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    f: f64,
    k: f64,
    world3d: &[Vector3<f64>],
    image: &[ImagePoint],
) -> Vec<f64> {
    world3d
        .iter()
        .zip(image)
        .map(|(wp, obs)| match project(r, t, f, k, wp) {
            Some(p) => ((p.x - obs.x).powi(2) + (p.y - obs.y).powi(2)).sqrt(),
            None => f64::INFINITY,
        })
        .collect()
}

fn msac_score(errors: &[f64], threshold: f64) -> (usize, f64) {
    let t2 = threshold * threshold;
    let mut inliers = 0usize;
    let mut score = 0.0;
    for &e in errors {
        let e2 = e * e;
        if e2 <= t2 {
            inliers += 1;
            score += e2;
        } else {
            score += t2;
        }
    }
    (inliers, score)
}

/// RANSAC over 4-point subsets of a single-plane scene.
///
/// Deterministic in `(inputs, config.seed)`. `Ok(None)` means no hypothesis
/// reached four inliers; errors indicate the input itself is unusable (not
/// coplanar, fewer than four points, and so on).
pub fn ransac_pose(
    world3d: &[Vector3<f64>],
    image: &[ImagePoint],
    config: &RansacConfig,
    solver_cfg: &SolverConfig,
) -> Result<Option<RobustResult>, SolveError> {
    assert_eq!(world3d.len(), image.len());
    if world3d.len() < 4 {
        return Err(SolveError::DegenerateScene("need at least 4 correspondences"));
    }
    assert!(config.max_iters >= 1 && config.inlier_threshold > 0.0);
    let n = world3d.len();
    let (coords2d, frame, _residual) = fit_plane(world3d, solver_cfg)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(usize, f64, PoseSolution)> = None;
    let mut history = Vec::new();
    let mut bound = config.max_iters;
    let mut iterations = 0usize;

    while iterations < bound {
        iterations += 1;
        let pick = index_sample(&mut rng, n, 4).into_vec();
        let sub_w2: [WorldPoint; 4] = std::array::from_fn(|j| coords2d[pick[j]]);
        let sub_w3: [Vector3<f64>; 4] = std::array::from_fn(|j| world3d[pick[j]]);
        let sub_im: [ImagePoint; 4] = std::array::from_fn(|j| image[pick[j]]);

        // Degenerate subsets (near-collinear, rank-deficient, ...) surface
        // as stage errors; they consume an iteration and are skipped.
        let Ok(out) = solve_in_plane(&sub_w2, &frame, &sub_w3, &sub_im, solver_cfg) else {
            continue;
        };
        for sol in out.solutions {
            let errors = point_errors(&sol.r, &sol.t, sol.f, sol.k, world3d, image);
            let (inliers, score) = msac_score(&errors, config.inlier_threshold);
            let better = match &best {
                None => inliers >= 4,
                Some((bi, bs, _)) => inliers > *bi || (inliers == *bi && score < *bs),
            };
            if better {
                history.push(score);
                best = Some((inliers, score, sol));
            }
        }
        if let Some((inliers, _, _)) = &best {
            bound = bound.min(adaptive_iteration_bound(
                *inliers,
                n,
                config.confidence,
                config.max_iters,
            ))
            .max(iterations);
        }
    }

    let Some((_, _, mut solution)) = best else {
        return Ok(None);
    };
    let classify = |sol: &PoseSolution, threshold: f64| -> Vec<bool> {
        point_errors(&sol.r, &sol.t, sol.f, sol.k, world3d, image)
            .iter()
            .map(|e| *e <= threshold)
            .collect()
    };

    if config.refine {
        // Refit until the point set stabilizes. The refit is driven by a
        // widened capture band: a model fitted through a minimal sample
        // displaces borderline true inliers slightly past the threshold, and
        // a hard-threshold refit loop would lock them out forever.
        let capture = 1.5 * config.inlier_threshold;
        let mut capture_mask = classify(&solution, capture);
        for _ in 0..3 {
            solution = refine(&solution, world3d, image, &capture_mask);
            let new_mask = classify(&solution, capture);
            let stable = new_mask == capture_mask;
            capture_mask = new_mask;
            if stable {
                break;
            }
        }
    }
    let mask = classify(&solution, config.inlier_threshold);
    if mask.iter().filter(|m| **m).count() < 4 {
        return Ok(None);
    }
    Ok(Some(RobustResult {
        solution,
        inlier_mask: mask,
        iterations_run: iterations,
        score_history: Some(history),
    }))
}

/// Standard adaptive bound: iterations needed to sample one all-inlier
/// 4-subset with the given confidence, assuming the current inlier ratio.
fn adaptive_iteration_bound(inliers: usize, n: usize, confidence: f64, cap: usize) -> usize {
    let w = inliers as f64 / n as f64;
    let p_good = w.powi(4);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return cap;
    }
    let needed = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if !needed.is_finite() {
        return cap;
    }
    (needed.ceil() as usize).clamp(1, cap)
}

const REFINE_MAX_ITERS: usize = 10;
const REFINE_MAX_HALVINGS: usize = 10;

/// Gauss–Newton refinement of `(R, t, f, k)` over the inlier set, minimizing
/// the summed squared reprojection error. Rotation updates are tangent-space
/// increments applied multiplicatively, so `R` stays on the manifold. The
/// returned solution never has a higher inlier-set cost than the input; if
/// the normal equations are singular the input is returned unchanged.
pub fn refine(
    initial: &PoseSolution,
    world3d: &[Vector3<f64>],
    image: &[ImagePoint],
    inlier_mask: &[bool],
) -> PoseSolution {
    let idx: Vec<usize> = inlier_mask
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i))
        .collect();
    if idx.len() < 4 {
        return initial.clone();
    }
    let w3: Vec<Vector3<f64>> = idx.iter().map(|&i| world3d[i]).collect();
    let im: Vec<ImagePoint> = idx.iter().map(|&i| image[i]).collect();

    let mut r = initial.r;
    let mut t = initial.t;
    let mut f = initial.f;
    let mut k = initial.k;
    let mut cost = match inlier_cost(&r, &t, f, k, &w3, &im) {
        Some(c) => c,
        None => return initial.clone(),
    };

    for _ in 0..REFINE_MAX_ITERS {
        let Some((residuals, jacobian)) = residual_jacobian(&r, &t, f, k, &w3, &im) else {
            break;
        };
        let jtj: DMatrix<f64> = jacobian.transpose() * &jacobian;
        let jtr: DVector<f64> = jacobian.transpose() * &residuals;
        let Some(chol) = jtj.cholesky() else {
            break;
        };
        let full_step = -chol.solve(&jtr);

        let mut accepted = false;
        let mut alpha = 1.0;
        for _ in 0..=REFINE_MAX_HALVINGS {
            let step = &full_step * alpha;
            let r_new =
                Rotation3::from_scaled_axis(Vector3::new(step[0], step[1], step[2])).into_inner()
                    * r;
            let t_new = t + Vector3::new(step[3], step[4], step[5]);
            let f_new = f + step[6];
            let k_new = k + step[7];
            if f_new > 0.0 {
                if let Some(c) = inlier_cost(&r_new, &t_new, f_new, k_new, &w3, &im) {
                    if c < cost {
                        r = r_new;
                        t = t_new;
                        f = f_new;
                        k = k_new;
                        cost = c;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if cost <= 1e-30 {
            break;
        }
    }

    let errors = point_errors(&r, &t, f, k, &w3, &im);
    let depths: Vec<f64> = w3.iter().map(|wp| (r * wp + t).z).collect();
    PoseSolution {
        r,
        t,
        f,
        k,
        beta: initial.beta,
        w: initial.w,
        depths,
        max_reproj_err: errors.iter().fold(0.0f64, |m, e| m.max(*e)),
    }
}

fn inlier_cost(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    f: f64,
    k: f64,
    world3d: &[Vector3<f64>],
    image: &[ImagePoint],
) -> Option<f64> {
    let mut cost = 0.0;
    for (wp, obs) in world3d.iter().zip(image) {
        let p = project(r, t, f, k, wp)?;
        cost += (p.x - obs.x).powi(2) + (p.y - obs.y).powi(2);
    }
    Some(cost)
}

/// Residual vector and analytic Jacobian of the reprojection residuals with
/// respect to the state `[ω, t, f, k]` (rotation tangent, translation, focal,
/// distortion), two rows per point. `None` if any point reprojects invalidly.
///
/// Public so the analytic derivatives can be cross-checked against finite
/// differences in tests.
pub fn residual_jacobian(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    f: f64,
    k: f64,
    world3d: &[Vector3<f64>],
    image: &[ImagePoint],
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let m = world3d.len();
    let mut residuals = DVector::zeros(2 * m);
    let mut jac = DMatrix::zeros(2 * m, 8);
    for (i, (wp, obs)) in world3d.iter().zip(image).enumerate() {
        let rw = r * wp;
        let cam = rw + t;
        if cam.z <= 0.0 {
            return None;
        }
        let inv_z = 1.0 / cam.z;
        let xu = f * cam.x * inv_z;
        let yu = f * cam.y * inv_z;
        let q = xu * xu + yu * yu;
        let (s, ds) = distort_scale_and_deriv(k * q)?;
        let xd = s * xu;
        let yd = s * yu;
        residuals[2 * i] = xd - obs.x;
        residuals[2 * i + 1] = yd - obs.y;

        // d(xd, yd)/d(xu, yu)
        let dxd_dxu = s + 2.0 * k * xu * xu * ds;
        let dxd_dyu = 2.0 * k * xu * yu * ds;
        let dyd_dyu = s + 2.0 * k * yu * yu * ds;
        let dyd_dxu = dxd_dyu;
        // d(xu, yu)/d(cam)
        let dxu_dc = Vector3::new(f * inv_z, 0.0, -f * cam.x * inv_z * inv_z);
        let dyu_dc = Vector3::new(0.0, f * inv_z, -f * cam.y * inv_z * inv_z);
        // d(cam)/dω = -[R wp]×, d(cam)/dt = I
        let neg_skew = Matrix3::new(
            0.0, rw.z, -rw.y, //
            -rw.z, 0.0, rw.x, //
            rw.y, -rw.x, 0.0,
        );
        for col in 0..3 {
            let dc_axis = neg_skew.column(col);
            let dxu = dxu_dc.dot(&dc_axis);
            let dyu = dyu_dc.dot(&dc_axis);
            jac[(2 * i, col)] = dxd_dxu * dxu + dxd_dyu * dyu;
            jac[(2 * i + 1, col)] = dyd_dxu * dxu + dyd_dyu * dyu;
            jac[(2 * i, 3 + col)] = dxd_dxu * dxu_dc[col] + dxd_dyu * dyu_dc[col];
            jac[(2 * i + 1, 3 + col)] = dyd_dxu * dxu_dc[col] + dyd_dyu * dyu_dc[col];
        }
        // d/df through (xu, yu) = f (X/Z, Y/Z)
        let dxu_df = cam.x * inv_z;
        let dyu_df = cam.y * inv_z;
        jac[(2 * i, 6)] = dxd_dxu * dxu_df + dxd_dyu * dyu_df;
        jac[(2 * i + 1, 6)] = dyd_dxu * dxu_df + dyd_dyu * dyu_df;
        // d/dk directly through the distortion scale
        jac[(2 * i, 7)] = xu * ds * q;
        jac[(2 * i + 1, 7)] = yu * ds * q;
    }
    Some((residuals, jac))
}
