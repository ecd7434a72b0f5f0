//! Minimal solver for absolute pose from four coplanar points with unknown
//! focal length and one-parameter division-model radial distortion.
//!
//! Pipeline: put the world points into a canonical `Z = 0` frame, normalize
//! for conditioning, parametrize the first two camera rows by the nullspace
//! of the distortion-free cross-product constraints (one parameter `β`),
//! express the third row through three of the remaining constraints, solve
//! the fourth for the distortion `k(β)` as a rational function, and reduce
//! the two orthogonality constraints to a degree-6 polynomial in `β`. Each
//! real root back-substitutes into one pose candidate, which is kept only if
//! it passes focal-positivity, cheirality and residual checks.

mod normalize;
mod plane;
mod recover;
mod stages;

pub use normalize::{normalize_points, Normalization};
pub(crate) use plane::fit_plane;
pub use plane::{canonicalize_plane, PlaneFrame};
pub use recover::{
    constraint_residuals, extract_pose, recover_candidate, reprojection_error, Candidate,
    PoseSolution, Rejection,
};
pub use stages::{
    beta_polynomial, beta_polynomial_with_remainders, build_beta_matrix, build_row2_system,
    k_rational, row3_nullspace, select_triple, BetaPolyMatrix, KRational, NullspaceBasis,
    Row2System,
};

use crate::poly::{self, PolyError, RootOptions};
use nalgebra::Vector3;
use thiserror::Error;

/// World point in the canonical plane `Z = 0` (scene units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
}

impl WorldPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Distorted image observation with its squared radius cached.
///
/// The distortion center is the coordinate origin, so `r2` is always exactly
/// `x*x + y*y` of the stored coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
    r2: f64,
}

impl ImagePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y, r2: x * x + y * y }
    }

    #[inline]
    pub fn r2(&self) -> f64 {
        self.r2
    }
}

/// Typed failures of the solve pipeline. An empty solution list is *not* an
/// error; these indicate the instance could not be processed at all.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("world points are not coplanar (out-of-plane residual {residual:.3e})")]
    NotCoplanar { residual: f64 },
    #[error("degenerate scene geometry: {0}")]
    DegenerateScene(&'static str),
    #[error("row-3 constraint matrix has rank < 4")]
    RankDeficient,
    #[error("row-2 system matrix is numerically singular")]
    SingularC,
    #[error("fourth-point constraint has vanishing coefficients")]
    DegenerateInstance,
    #[error("determinant deflation left remainder {remainder:.3e}")]
    DeflationFailed { remainder: f64 },
    #[error("polynomial root finding failed: {0}")]
    Roots(#[from] PolyError),
}

/// Tolerance registry for the solve pipeline. Defaults pass the
/// machine-precision benchmark while rejecting genuinely degenerate data.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Max out-of-plane residual, relative to the scene diameter.
    pub coplanarity_tol: f64,
    /// Min triangle area of the selected triple, relative to diameter².
    pub area_tol: f64,
    /// Rank test on the row-3 constraint matrix: `σ4 > rank_tol · σ1`.
    pub rank_tol: f64,
    /// Determinant test on the row-2 system, relative to its row norms.
    pub det_tol: f64,
    /// Max synthetic-division remainder, relative to `‖det8‖∞`.
    pub deflate_tol: f64,
    /// Smallest admissible `w²` (anything below is a non-positive focal).
    pub w2_min: f64,
    /// Vanishing-denominator test for `k(β)`, relative to its term scale.
    pub den_tol: f64,
    /// Allowed relative disagreement of the two `w²` estimates.
    pub w2_consistency_tol: f64,
    /// Max relative residual of the f1/f2/f3 constraints per solution.
    pub residual_tol: f64,
    /// Real-eigenvalue acceptance: `|Im| ≤ im_tol (1 + |Re|)`.
    pub im_tol: f64,
    /// Newton polish steps per root.
    pub polish_iters: u32,
    /// Trailing-coefficient trim tolerance for the β polynomial.
    pub trim_tol: f64,
    /// Duplicate-root merge tolerance.
    pub root_merge_tol: f64,
    /// Root residual acceptance tolerance (see [`poly::RootOptions`]).
    pub poly_residual_tol: f64,
    /// QR iteration budget per eigenvalue.
    pub max_qr_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            coplanarity_tol: 1e-6,
            area_tol: 1e-10,
            rank_tol: 1e-12,
            det_tol: 1e-12,
            deflate_tol: 1e-8,
            w2_min: 1e-14,
            den_tol: 1e-12,
            w2_consistency_tol: 1e-3,
            residual_tol: 1e-6,
            im_tol: poly::DEFAULT_IM_TOL,
            polish_iters: poly::DEFAULT_POLISH_ITERS,
            trim_tol: poly::DEFAULT_TRIM_TOL,
            root_merge_tol: poly::DEFAULT_MERGE_TOL,
            poly_residual_tol: poly::DEFAULT_RESIDUAL_TOL,
            max_qr_iters: poly::DEFAULT_MAX_QR_ITERS,
        }
    }
}

impl SolverConfig {
    fn root_options(&self) -> RootOptions {
        RootOptions {
            im_tol: self.im_tol,
            polish_iters: self.polish_iters,
            trim_tol: self.trim_tol,
            merge_tol: self.root_merge_tol,
            residual_tol: self.poly_residual_tol,
            max_qr_iters: self.max_qr_iters,
        }
    }
}

/// Why a particular real root of the β polynomial produced no solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootRejection {
    pub beta: f64,
    pub reason: Rejection,
}

/// Result of a solve: up to six solutions sorted by max reprojection error,
/// plus a diagnostic record for every rejected root.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub solutions: Vec<PoseSolution>,
    pub rejections: Vec<RootRejection>,
}

/// Solve the four-point pose problem for 3D world points.
///
/// The points must be coplanar within `coplanarity_tol`; the returned poses
/// refer to the original 3D frame and original image scale.
pub fn solve(
    world3d: &[Vector3<f64>; 4],
    image: &[ImagePoint; 4],
    cfg: &SolverConfig,
) -> Result<SolveOutput, SolveError> {
    let (world2d, frame, _residual) = canonicalize_plane(world3d, cfg)?;
    solve_in_plane(&world2d, &frame, world3d, image, cfg)
}

/// Same pipeline, but with the plane canonicalization already done. Used by
/// the robust layer, which fits one plane to the full point set and then
/// solves many 4-point subsets in that frame.
pub(crate) fn solve_in_plane(
    world2d: &[WorldPoint; 4],
    frame: &PlaneFrame,
    world3d: &[Vector3<f64>; 4],
    image: &[ImagePoint; 4],
    cfg: &SolverConfig,
) -> Result<SolveOutput, SolveError> {
    let (world_n, image_n, norm) = normalize_points(world2d, image)?;
    let basis = row3_nullspace(&world_n, &image_n, cfg)?;
    let (triple, fourth) = select_triple(&world_n, cfg)?;
    let sys = build_row2_system(&world_n, &image_n, &triple, &basis, cfg)?;
    let kr = k_rational(world_n[fourth], image_n[fourth], &basis, &sys, cfg)?;
    let bm = build_beta_matrix(&basis, &sys, &kr);
    let p6 = beta_polynomial(&bm, &kr, cfg)?;
    let roots = poly::real_roots_with(&p6, &cfg.root_options())?;

    let mut solutions = Vec::new();
    let mut rejections = Vec::new();
    for &beta in &roots.real_roots {
        let cand = match recover_candidate(beta, &bm, &kr, &basis, &sys, cfg) {
            Ok(c) => c,
            Err(reason) => {
                rejections.push(RootRejection { beta, reason });
                continue;
            }
        };
        let (f1, f2, f3) = constraint_residuals(&cand, &basis, &sys, &kr);
        if f1 > cfg.residual_tol || f2 > cfg.residual_tol || f3 > cfg.residual_tol {
            rejections.push(RootRejection {
                beta,
                reason: Rejection::ResidualTooLarge,
            });
            continue;
        }
        let mut sol = match extract_pose(&cand, &image_n, &norm, frame, world3d) {
            Ok(s) => s,
            Err(reason) => {
                rejections.push(RootRejection { beta, reason });
                continue;
            }
        };
        match reprojection_error(&sol, world3d, image) {
            Ok(errs) => {
                sol.max_reproj_err = errs.iter().fold(0.0, |m: f64, e| m.max(*e));
                solutions.push(sol);
            }
            Err(reason) => rejections.push(RootRejection { beta, reason }),
        }
    }
    solutions.sort_by(|a, b| a.max_reproj_err.total_cmp(&b.max_reproj_err));
    Ok(SolveOutput {
        solutions,
        rejections,
    })
}
