//! Absolute camera pose from four coplanar points, with unknown focal length
//! and one-parameter division-model radial distortion.
//!
//! The solver reduces the problem to a univariate degree-6 polynomial in the
//! nullspace parameter of the distortion-free projection constraints, then
//! recovers up to six `(R, t, f, k)` candidates and filters them by focal
//! positivity, cheirality and constraint residuals. On top of the minimal
//! solver sit a synthetic scene generator with a stability/timing benchmark
//! and a RANSAC layer for `n >= 4` correspondences.

pub mod poly;
pub mod robust;
pub mod scene;
pub mod solver;

pub use poly::{Poly, PolyError, RootSet};
pub use robust::{ransac_pose, refine, RansacConfig, RobustResult};
pub use scene::{
    benchmark_histogram, distort_forward, project, random_instance, GroundTruth, HistogramReport,
    SceneConfig, SceneError,
};
pub use solver::{
    solve, ImagePoint, PoseSolution, Rejection, SolveError, SolveOutput, SolverConfig, WorldPoint,
};
