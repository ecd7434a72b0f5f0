//! Back-substitution from a real root β to a camera pose, with the physical
//! validity checks (positive focal, cheirality, distortion validity).

use super::normalize::Normalization;
use super::plane::PlaneFrame;
use super::stages::{BetaPolyMatrix, KRational, NullspaceBasis, Row2System};
use super::{ImagePoint, SolverConfig, WorldPoint};
use crate::scene::distort_forward;
use nalgebra::{Matrix3, Matrix3x2, Vector3, Vector4};

/// Why a candidate root was discarded. Rejections are diagnostics, not
/// errors: an instance where every root is rejected simply has no solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// `w² = −q_i2/q_i1` came out non-positive (or non-finite).
    NegativeFocalSquared,
    /// β coincides with the root of the deflated denominator of `k(β)`.
    DenominatorVanishes,
    /// The two independent `w²` estimates disagree beyond tolerance.
    RowsInconsistent,
    /// Point depths have mixed signs: not a physical camera.
    CheiralityFailed,
    /// Some `1 + k r²` is non-positive, or forward distortion has no real
    /// solution for a reprojected point.
    DistortionSingular,
    /// A constraint residual of the recovered triple (β, w, k) exceeds the
    /// configured tolerance.
    ResidualTooLarge,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Rejection::NegativeFocalSquared => "NegativeFocalSquared",
            Rejection::DenominatorVanishes => "DenominatorVanishes",
            Rejection::RowsInconsistent => "RowsInconsistent",
            Rejection::CheiralityFailed => "CheiralityFailed",
            Rejection::DistortionSingular => "DistortionSingular",
            Rejection::ResidualTooLarge => "ResidualTooLarge",
        };
        f.write_str(s)
    }
}

/// A root of the β polynomial back-substituted to the internal parameters
/// and the (scaled) 3×3 camera matrix, before pose extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub beta: f64,
    pub w: f64,
    pub k: f64,
    pub p: Matrix3<f64>,
}

/// One admissible camera: pose in the original world frame, intrinsics in
/// the original image scale, plus the internal normalized-frame parameters
/// kept as diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSolution {
    /// Rotation, world → camera.
    pub r: Matrix3<f64>,
    /// Translation, world → camera (scene units).
    pub t: Vector3<f64>,
    /// Focal length (original image units).
    pub f: f64,
    /// Division-model distortion coefficient (per squared original image unit).
    pub k: f64,
    /// Internal nullspace parameter of the generating minimal solve.
    pub beta: f64,
    /// Internal inverse focal (normalized scale) of the generating solve.
    pub w: f64,
    /// Camera-frame point depths, scene units, all positive.
    pub depths: Vec<f64>,
    /// Largest reprojection error over the solved points (original units).
    pub max_reproj_err: f64,
}

/// Evaluate `B(β)` at a root and recover `(w, k)` plus the full camera
/// matrix. `w²` is taken from the row with the larger `|q_i1(β)|`; the other
/// row must agree within `w2_consistency_tol` unless it is vacuous at β.
pub fn recover_candidate(
    beta: f64,
    bm: &BetaPolyMatrix,
    kr: &KRational,
    basis: &NullspaceBasis,
    sys: &Row2System,
    cfg: &SolverConfig,
) -> Result<Candidate, Rejection> {
    let den = kr.q31 * beta + kr.q32;
    let den_scale = (kr.q31 * beta).abs() + kr.q32.abs();
    if den.abs() <= cfg.den_tol * den_scale.max(f64::MIN_POSITIVE) {
        return Err(Rejection::DenominatorVanishes);
    }
    let k = -(kr.q33 * beta + kr.q34) / den;

    let q11 = bm.q11.eval(beta);
    let q12 = bm.q12.eval(beta);
    let q21 = bm.q21.eval(beta);
    let q22 = bm.q22.eval(beta);
    let (qp1, qp2, qo1, qo2) = if q11.abs() >= q21.abs() {
        (q11, q12, q21, q22)
    } else {
        (q21, q22, q11, q12)
    };
    let w2 = -qp2 / qp1;
    if !w2.is_finite() || w2 <= cfg.w2_min {
        return Err(Rejection::NegativeFocalSquared);
    }

    // det B(β) = 0 makes the rows proportional, so at a genuine root both
    // estimates agree; disagreement means deflation noise produced a
    // spurious root. A row whose terms vanish at β constrains nothing.
    let other_scale = (qo1 * w2).abs() + qo2.abs();
    let entry_scale = [&bm.q11, &bm.q12, &bm.q21, &bm.q22]
        .iter()
        .map(|q| q.max_abs_coeff())
        .fold(0.0f64, f64::max)
        * (1.0 + beta.abs()).powi(4);
    if other_scale > 1e-9 * entry_scale {
        let resid = qo1 * w2 + qo2;
        if resid.abs() > cfg.w2_consistency_tol * other_scale {
            return Err(Rejection::RowsInconsistent);
        }
    }

    let rows = basis.n1 + basis.n2 * beta;
    let row3 = sys.m * Vector4::new(beta, k * beta, k, 1.0);
    let p = Matrix3::new(
        rows[0], rows[1], rows[2], rows[3], rows[4], rows[5], row3[0], row3[1], row3[2],
    );
    Ok(Candidate {
        beta,
        w: w2.sqrt(),
        k,
        p,
    })
}

/// Relative residuals of the two orthogonality constraints and the fourth
/// row-2 constraint at the candidate's `(β, w, k)`, each scaled by the sum
/// of its term magnitudes.
pub fn constraint_residuals(
    cand: &Candidate,
    basis: &NullspaceBasis,
    sys: &Row2System,
    kr: &KRational,
) -> (f64, f64, f64) {
    let beta = cand.beta;
    let k = cand.k;
    let w2 = cand.w * cand.w;
    let rows = basis.n1 + basis.n2 * beta;
    let row3 = sys.m * Vector4::new(beta, k * beta, k, 1.0);
    let (p11, p12, p21, p22) = (rows[0], rows[1], rows[3], rows[4]);
    let (p31, p32) = (row3[0], row3[1]);

    let rel = |terms: &[f64]| -> f64 {
        let sum: f64 = terms.iter().sum();
        let scale: f64 = terms.iter().map(|t| t.abs()).sum();
        sum.abs() / scale.max(f64::MIN_POSITIVE)
    };
    let f1 = rel(&[w2 * p11 * p12, w2 * p21 * p22, p31 * p32]);
    let f2 = rel(&[
        w2 * p11 * p11,
        w2 * p21 * p21,
        -w2 * p12 * p12,
        -w2 * p22 * p22,
        p31 * p31,
        -p32 * p32,
    ]);
    let f3 = rel(&[kr.q31 * k * beta, kr.q32 * k, kr.q33 * beta, kr.q34]);
    (f1, f2, f3)
}

/// Turn an algebraic candidate into a metric pose: scale off the first two
/// columns, orthonormalize them symmetrically, fix the cheirality sign and
/// de-normalize back to the original world frame and image scale.
pub fn extract_pose(
    cand: &Candidate,
    image_n: &[ImagePoint; 4],
    norm: &Normalization,
    frame: &PlaneFrame,
    world3d: &[Vector3<f64>; 4],
) -> Result<PoseSolution, Rejection> {
    extract_pose_from_matrix(
        &cand.p, cand.w, cand.k, cand.beta, image_n, norm, frame, world3d,
    )
}

/// As [`extract_pose`] but taking the camera matrix directly; the matrix may
/// carry an arbitrary non-zero global scale of either sign.
#[allow(clippy::too_many_arguments)]
pub fn extract_pose_from_matrix(
    p: &Matrix3<f64>,
    w: f64,
    k: f64,
    beta: f64,
    image_n: &[ImagePoint; 4],
    norm: &Normalization,
    frame: &PlaneFrame,
    world3d: &[Vector3<f64>; 4],
) -> Result<PoseSolution, Rejection> {
    // Distortion must stay valid at the observed radii.
    let mut dfactor = [0.0f64; 4];
    for i in 0..4 {
        dfactor[i] = 1.0 + k * image_n[i].r2();
        if dfactor[i] <= 0.0 {
            return Err(Rejection::DistortionSingular);
        }
    }

    // Depth signs from λ_i = (row3(P) · U_i) / (1 + k r_i²); the world points
    // of the solve are recovered from the image constraints, so use the
    // normalized plane coordinates implied by P's own parametrization.
    // (row3 of P is w·s·(r31, r32, tz) for an unknown scale s of either sign.)
    let world_n: [WorldPoint; 4] = std::array::from_fn(|i| {
        let local = frame.from_world(&world3d[i]);
        WorldPoint::new(
            norm.world_scale * (local.x + norm.world_shift.x),
            norm.world_scale * (local.y + norm.world_shift.y),
        )
    });
    let mut pos = 0usize;
    let mut neg = 0usize;
    for i in 0..4 {
        let lam = (p[(2, 0)] * world_n[i].x + p[(2, 1)] * world_n[i].y + p[(2, 2)]) / dfactor[i];
        if lam > 0.0 {
            pos += 1;
        } else if lam < 0.0 {
            neg += 1;
        }
    }
    let flip = match (pos, neg) {
        (4, 0) => false,
        (0, 4) => true,
        _ => return Err(Rejection::CheiralityFailed),
    };

    // P = diag(1,1,w) · s · [r1 r2 t]: undo w, read off the scale s.
    let mut pn = *p;
    for j in 0..3 {
        pn[(2, j)] /= w;
    }
    let c1 = pn.column(0).into_owned();
    let c2 = pn.column(1).into_owned();
    let c3 = pn.column(2).into_owned();
    let mut s = 0.5 * (c1.norm() + c2.norm());
    if !s.is_finite() || s <= 0.0 {
        return Err(Rejection::CheiralityFailed);
    }
    if flip {
        s = -s;
    }

    // Nearest orthonormal pair of columns (symmetric: no bias toward either).
    let m32 = Matrix3x2::from_columns(&[c1 / s, c2 / s]);
    let svd = m32.svd(true, true);
    let r12 = svd.u.expect("svd u") * svd.v_t.expect("svd v");
    let r1 = r12.column(0).into_owned();
    let r2 = r12.column(1).into_owned();
    let r3 = r1.cross(&r2);
    let r_n = Matrix3::from_columns(&[r1, r2, r3]);
    let t_n = c3 / s;

    // De-normalize: image scale into (f, k), world similarity into (R, t),
    // then compose with the canonical plane frame.
    let f = (1.0 / w) / norm.image_scale;
    let k_orig = k * norm.image_scale * norm.image_scale;
    let t_plane = r_n * Vector3::new(norm.world_shift.x, norm.world_shift.y, 0.0)
        + t_n / norm.world_scale;
    let r_final = r_n * frame.rotation.transpose();
    let t_final = t_plane - r_final * frame.translation;

    let depths: Vec<f64> = world3d
        .iter()
        .map(|wp| (r_final.row(2) * wp)[(0, 0)] + t_final.z)
        .collect();

    Ok(PoseSolution {
        r: r_final,
        t: t_final,
        f,
        k: k_orig,
        beta,
        w,
        depths,
        max_reproj_err: 0.0,
    })
}

/// Per-point Euclidean distances between the observed distorted points and
/// the reprojections of the world points through `(R, t, f, k)`, in original
/// image units.
pub fn reprojection_error(
    sol: &PoseSolution,
    world3d: &[Vector3<f64>],
    image: &[ImagePoint],
) -> Result<Vec<f64>, Rejection> {
    assert_eq!(world3d.len(), image.len());
    let mut errs = Vec::with_capacity(world3d.len());
    for (wp, obs) in world3d.iter().zip(image) {
        let cam = sol.r * wp + sol.t;
        if cam.z <= 0.0 {
            return Err(Rejection::CheiralityFailed);
        }
        let xu = sol.f * cam.x / cam.z;
        let yu = sol.f * cam.y / cam.z;
        let (xd, yd) = distort_forward(xu, yu, sol.k).ok_or(Rejection::DistortionSingular)?;
        errs.push(((xd - obs.x).powi(2) + (yd - obs.y).powi(2)).sqrt());
    }
    Ok(errs)
}
