//! End-to-end pipeline tests against the synthetic generator: ground-truth
//! round trips, per-stage consistency with the generating camera, and the
//! physical invariants of every returned solution.

use nalgebra::{Matrix3, Vector2, Vector3, Vector4};
use p4pfr::scene::{random_instance, GroundTruth, SceneConfig};
use p4pfr::solver::{
    beta_polynomial, build_beta_matrix, build_row2_system, canonicalize_plane, k_rational,
    normalize_points, row3_nullspace, select_triple, solve, BetaPolyMatrix, ImagePoint,
    KRational, Normalization, NullspaceBasis, PlaneFrame, PoseSolution, Row2System, SolverConfig,
    WorldPoint,
};

fn arrays(gt: &GroundTruth) -> ([Vector3<f64>; 4], [ImagePoint; 4]) {
    (
        std::array::from_fn(|i| gt.world3d[i]),
        std::array::from_fn(|i| gt.image[i]),
    )
}

/// Max relative parameter error between a solution and the ground truth.
fn pose_param_error(sol: &PoseSolution, gt: &GroundTruth) -> f64 {
    let dr = (sol.r - gt.r).norm();
    let dt = (sol.t - gt.t).norm() / gt.t.norm();
    let df = (sol.f - gt.f).abs() / gt.f;
    let dk = (sol.k - gt.k).abs() / (1.0 + gt.k.abs());
    dr.max(dt).max(df).max(dk)
}

/// The ground-truth camera expressed in the solver's normalized frame:
/// `(β, w, k)` plus the scaled camera matrix `P_true / α`, where `α` is the
/// ground truth's coefficient on `n1`.
struct NormalizedTruth {
    beta: f64,
    w: f64,
    k: f64,
    p_scaled: Matrix3<f64>,
    span_residual: f64,
}

fn normalized_truth(
    gt: &GroundTruth,
    frame: &PlaneFrame,
    norm: &Normalization,
    basis: &NullspaceBasis,
) -> NormalizedTruth {
    // Camera with respect to the canonical plane coordinates.
    let r_p = gt.r * frame.rotation;
    let t_p = gt.r * frame.translation + gt.t;
    // World normalization: scale the camera frame along with the scene.
    let h = Vector3::new(norm.world_shift.x, norm.world_shift.y, 0.0);
    let t_n = (t_p - r_p * h) * norm.world_scale;
    // Image normalization.
    let f_n = gt.f * norm.image_scale;
    let k_n = gt.k / (norm.image_scale * norm.image_scale);
    let w_n = 1.0 / f_n;

    let rows = nalgebra::Vector6::new(
        r_p[(0, 0)],
        r_p[(0, 1)],
        t_n[0],
        r_p[(1, 0)],
        r_p[(1, 1)],
        t_n[1],
    );
    let alpha = rows.dot(&basis.n1);
    let gamma = rows.dot(&basis.n2);
    let span_residual = (rows - basis.n1 * alpha - basis.n2 * gamma).norm() / rows.norm();
    let p_true = Matrix3::new(
        r_p[(0, 0)],
        r_p[(0, 1)],
        t_n[0],
        r_p[(1, 0)],
        r_p[(1, 1)],
        t_n[1],
        w_n * r_p[(2, 0)],
        w_n * r_p[(2, 1)],
        w_n * t_n[2],
    );
    NormalizedTruth {
        beta: gamma / alpha,
        w: w_n,
        k: k_n,
        p_scaled: p_true / alpha,
        span_residual,
    }
}

struct Stages {
    frame: PlaneFrame,
    norm: Normalization,
    basis: NullspaceBasis,
    sys: Row2System,
    kr: KRational,
    bm: BetaPolyMatrix,
    world_n: [WorldPoint; 4],
}

fn run_stages(gt: &GroundTruth, cfg: &SolverConfig) -> Stages {
    let (world3d, image) = arrays(gt);
    let (world2d, frame, _) = canonicalize_plane(&world3d, cfg).unwrap();
    let (world_n, image_n, norm) = normalize_points(&world2d, &image).unwrap();
    let basis = row3_nullspace(&world_n, &image_n, cfg).unwrap();
    let (triple, fourth) = select_triple(&world_n, cfg).unwrap();
    let sys = build_row2_system(&world_n, &image_n, &triple, &basis, cfg).unwrap();
    let kr = k_rational(world_n[fourth], image_n[fourth], &basis, &sys, cfg).unwrap();
    let bm = build_beta_matrix(&basis, &sys, &kr);
    Stages {
        frame,
        norm,
        basis,
        sys,
        kr,
        bm,
        world_n,
    }
}

#[test]
fn noiseless_round_trip_recovers_ground_truth() {
    let cfg = SolverConfig::default();
    let mut above_band = 0usize;
    for seed in 0..500u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let (world3d, image) = arrays(&gt);
        let out = solve(&world3d, &image, &cfg).unwrap();
        assert!(!out.solutions.is_empty(), "seed {seed}: no solutions");
        let best_match = out
            .solutions
            .iter()
            .map(|s| pose_param_error(s, &gt))
            .fold(f64::INFINITY, f64::min);
        assert!(
            best_match <= 1e-6,
            "seed {seed}: best parameter error {best_match:.3e}"
        );
        // Normalized-units reprojection error of the best solution. Zero in
        // theory; the occasional ill-conditioned instance may exceed the
        // machine-precision band, so this is a population bound.
        let rms = (image.iter().map(|p| p.r2()).sum::<f64>() / 4.0).sqrt();
        let err_n = out.solutions[0].max_reproj_err * std::f64::consts::SQRT_2 / rms;
        if err_n > 1e-9 {
            above_band += 1;
        }
    }
    assert!(above_band <= 5, "{above_band}/500 instances above 1e-9");
}

#[test]
fn returned_solutions_satisfy_physical_invariants() {
    let cfg = SolverConfig::default();
    for seed in 1000..1500u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let (world3d, image) = arrays(&gt);
        let out = solve(&world3d, &image, &cfg).unwrap();
        assert!(out.solutions.len() <= 6, "seed {seed}: degree bound violated");
        for sol in &out.solutions {
            let rtr = sol.r.transpose() * sol.r;
            assert!((rtr - Matrix3::identity()).norm() <= 1e-8, "seed {seed}");
            assert!((sol.r.determinant() - 1.0).abs() <= 1e-8, "seed {seed}");
            assert!(sol.f > 0.0);
            assert!(sol.depths.iter().all(|d| *d > 0.0), "seed {seed}");
            for p in &image {
                assert!(1.0 + sol.k * p.r2() > 0.0, "seed {seed}");
            }
        }
    }
}

#[test]
fn ground_truth_rows_lie_in_nullspace_span() {
    let cfg = SolverConfig::default();
    for seed in 2000..2200u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let st = run_stages(&gt, &cfg);
        let truth = normalized_truth(&gt, &st.frame, &st.norm, &st.basis);
        assert!(
            truth.span_residual <= 1e-10,
            "seed {seed}: span residual {:.3e}",
            truth.span_residual
        );
    }
}

#[test]
fn row2_system_reproduces_true_third_row() {
    // With k = 0 the monomial vector collapses to (β, 0, 0, 1); M must map it
    // onto the true (p31, p32, p34) at the true β and camera scale.
    let cfg = SolverConfig::default();
    for seed in 3000..3100u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            k_range: [0.0, 0.0],
            ..SceneConfig::default()
        })
        .unwrap();
        let st = run_stages(&gt, &cfg);
        let truth = normalized_truth(&gt, &st.frame, &st.norm, &st.basis);
        let got = st.sys.m * Vector4::new(truth.beta, 0.0, 0.0, 1.0);
        let want = truth.p_scaled.row(2).transpose();
        assert!(
            (got - want).norm() <= 1e-10 * (1.0 + want.norm()),
            "seed {seed}: {got:?} vs {want:?}"
        );
    }
}

#[test]
fn k_rational_recovers_generating_distortion() {
    let cfg = SolverConfig::default();
    for seed in 4000..4200u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let st = run_stages(&gt, &cfg);
        let truth = normalized_truth(&gt, &st.frame, &st.norm, &st.basis);
        let k_est = st.kr.k_at(truth.beta);
        assert!(
            (k_est - truth.k).abs() <= 1e-9 * (1.0 + truth.k.abs()),
            "seed {seed}: k {k_est} vs {}",
            truth.k
        );
    }
}

#[test]
fn k_rational_numerator_vanishes_for_pinhole_data() {
    let cfg = SolverConfig::default();
    for seed in 4500..4600u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            k_range: [0.0, 0.0],
            ..SceneConfig::default()
        })
        .unwrap();
        let st = run_stages(&gt, &cfg);
        let truth = normalized_truth(&gt, &st.frame, &st.norm, &st.basis);
        let num = st.kr.q33 * truth.beta + st.kr.q34;
        let scale = (st.kr.q33 * truth.beta).abs() + st.kr.q34.abs();
        assert!(
            num.abs() <= 1e-9 * scale.max(1e-300),
            "seed {seed}: numerator {num:.3e} at true beta"
        );
    }
}

#[test]
fn beta_matrix_annihilates_ground_truth() {
    let cfg = SolverConfig::default();
    for seed in 5000..5200u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let st = run_stages(&gt, &cfg);
        let truth = normalized_truth(&gt, &st.frame, &st.norm, &st.basis);
        let w2 = truth.w * truth.w;
        for (q1, q2) in [(&st.bm.q11, &st.bm.q12), (&st.bm.q21, &st.bm.q22)] {
            let lhs = q1.eval(truth.beta) * w2 + q2.eval(truth.beta);
            let scale = (q1.eval(truth.beta) * w2).abs() + q2.eval(truth.beta).abs();
            assert!(
                lhs.abs() <= 1e-8 * scale.max(1e-300),
                "seed {seed}: constraint residual {lhs:.3e} / scale {scale:.3e}"
            );
        }
    }
}

#[test]
fn beta_matrix_matches_direct_constraint_evaluation() {
    // Evaluate f1·den² directly from the parametrized camera entries at
    // sampled β values and compare with the assembled polynomials.
    let cfg = SolverConfig::default();
    for seed in 5500..5600u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let st = run_stages(&gt, &cfg);
        let w_test = 0.7;
        for i in 0..5 {
            let beta = -2.0 + 1.1 * i as f64;
            let den = st.kr.q31 * beta + st.kr.q32;
            if den.abs() < 1e-6 {
                continue;
            }
            let k = st.kr.k_at(beta);
            let rows = st.basis.n1 + st.basis.n2 * beta;
            let p3 = st.sys.m * Vector4::new(beta, k * beta, k, 1.0);
            let w2 = w_test * w_test;
            let f1_direct = (w2 * (rows[0] * rows[1] + rows[3] * rows[4])
                + p3[0] * p3[1])
                * den
                * den;
            let f1_poly = st.bm.q11.eval(beta) * w2 + st.bm.q12.eval(beta);
            let scale = f1_direct.abs().max(f1_poly.abs()).max(1e-300);
            assert!(
                (f1_direct - f1_poly).abs() <= 1e-10 * scale,
                "seed {seed} beta {beta}: {f1_direct:.6e} vs {f1_poly:.6e}"
            );
            let f2_direct = (w2
                * (rows[0] * rows[0] + rows[3] * rows[3]
                    - rows[1] * rows[1]
                    - rows[4] * rows[4])
                + p3[0] * p3[0]
                - p3[1] * p3[1])
                * den
                * den;
            let f2_poly = st.bm.q21.eval(beta) * w2 + st.bm.q22.eval(beta);
            let scale = f2_direct.abs().max(f2_poly.abs()).max(1e-300);
            assert!(
                (f2_direct - f2_poly).abs() <= 1e-10 * scale,
                "seed {seed} beta {beta}: f2 {f2_direct:.6e} vs {f2_poly:.6e}"
            );
        }
    }
}

#[test]
fn beta_polynomial_degree_and_factorization() {
    let cfg = SolverConfig::default();
    // Σ|c_i| |x|^i: the magnitude against which an evaluation of p at x is
    // well-conditioned.
    let eval_abs = |p: &p4pfr::Poly, x: f64| -> f64 {
        p.coeffs()
            .iter()
            .enumerate()
            .map(|(i, c)| c.abs() * x.abs().powi(i as i32))
            .sum()
    };
    let mut degree_drops = 0usize;
    for seed in 6000..6200u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let st = run_stages(&gt, &cfg);
        let p6 = beta_polynomial(&st.bm, &st.kr, &cfg).unwrap();
        assert_eq!(p6.degree(), 6, "seed {seed}: structural degree");
        if p6.trimmed(cfg.trim_tol).degree() < 6 {
            degree_drops += 1;
        }

        // det8(β) = p6(β) · den(β)² at sampled β, relative to the magnitude
        // at which either side can be evaluated.
        let det8 = st
            .bm
            .q11
            .mul(&st.bm.q22)
            .sub(&st.bm.q12.mul(&st.bm.q21));
        for i in 0..10 {
            let beta = -3.0 + 0.7 * i as f64;
            let den = st.kr.q31 * beta + st.kr.q32;
            let lhs = det8.eval(beta);
            let rhs = p6.eval(beta) * den * den;
            let scale = eval_abs(&det8, beta) + eval_abs(&p6, beta) * den * den;
            assert!(
                (lhs - rhs).abs() <= 1e-9 * scale.max(1e-300),
                "seed {seed} beta {beta}: det8 {lhs:.6e} vs product {rhs:.6e} (scale {scale:.3e})"
            );
        }

        // The generating β is a root.
        let truth = normalized_truth(&gt, &st.frame, &st.norm, &st.basis);
        let bound = 1e-8
            * p6.max_abs_coeff()
            * (1.0 + truth.beta.abs()).powi(6);
        assert!(
            p6.eval(truth.beta).abs() <= bound,
            "seed {seed}: |p6(beta_true)| = {:.3e} > {bound:.3e}",
            p6.eval(truth.beta).abs()
        );
    }
    // Degree genuinely 6 on generic instances; a rare near-zero leading
    // coefficient (true β near infinity) may trim lower.
    assert!(degree_drops <= 1, "{degree_drops}/200 instances dropped degree");
}

#[test]
fn collinear_triple_within_quad_still_solves() {
    // Three of the four points collinear: the triple selector must pick the
    // configuration containing the off-line point.
    let cfg = SolverConfig::default();
    let world3d = [
        Vector3::new(-0.9, -0.9, 0.0),
        Vector3::new(0.0, 0.0, 0.0),
        Vector3::new(0.9, 0.9, 0.0),
        Vector3::new(0.6, -0.7, 0.0),
    ];
    let gt_cfg = SceneConfig {
        seed: 77,
        ..SceneConfig::default()
    };
    // Borrow a generated camera and reproject the constructed scene with it.
    let gt = random_instance(&gt_cfg).unwrap();
    let image: [ImagePoint; 4] = std::array::from_fn(|i| {
        p4pfr::scene::project(&gt.r, &gt.t, gt.f, gt.k, &world3d[i]).unwrap()
    });
    let out = solve(&world3d, &image, &cfg).unwrap();
    assert!(!out.solutions.is_empty());
    let synthetic = GroundTruth {
        world3d: world3d.to_vec(),
        image: image.to_vec(),
        depths: world3d.iter().map(|w| (gt.r * w + gt.t).z).collect(),
        ..gt
    };
    let best = out
        .solutions
        .iter()
        .map(|s| pose_param_error(s, &synthetic))
        .fold(f64::INFINITY, f64::min);
    assert!(best <= 1e-7, "parameter error {best:.3e}");
}

#[test]
fn solutions_are_sorted_by_reprojection_error() {
    let cfg = SolverConfig::default();
    for seed in 7000..7100u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let (world3d, image) = arrays(&gt);
        let out = solve(&world3d, &image, &cfg).unwrap();
        for pair in out.solutions.windows(2) {
            assert!(pair[0].max_reproj_err <= pair[1].max_reproj_err);
        }
    }
}

#[test]
fn constraint_residual_filter_holds_for_returned_solutions() {
    // Spot-check: recompute the f3 residual from the returned (β, w, k)
    // diagnostics in the normalized frame.
    let cfg = SolverConfig::default();
    for seed in 8000..8100u64 {
        let gt = random_instance(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let st = run_stages(&gt, &cfg);
        let (world3d, image) = arrays(&gt);
        let out = solve(&world3d, &image, &cfg).unwrap();
        for sol in &out.solutions {
            let beta = sol.beta;
            let k_n = sol.k / (st.norm.image_scale * st.norm.image_scale);
            let terms = [
                st.kr.q31 * k_n * beta,
                st.kr.q32 * k_n,
                st.kr.q33 * beta,
                st.kr.q34,
            ];
            let resid = terms.iter().sum::<f64>().abs();
            let scale: f64 = terms.iter().map(|t| t.abs()).sum();
            assert!(
                resid <= 1e-6 * scale.max(1e-300),
                "seed {seed}: f3 residual {resid:.3e} vs scale {scale:.3e}"
            );
        }
    }
}

#[test]
fn solve_is_pure_across_threads() {
    // All inputs and outputs are plain data; concurrent solves of the same
    // instance must agree bit for bit.
    let gt = random_instance(&SceneConfig {
        seed: 12345,
        ..SceneConfig::default()
    })
    .unwrap();
    let (world3d, image) = arrays(&gt);
    let handles: Vec<_> = (0..4)
        .map(|_| {
            std::thread::spawn(move || {
                solve(&world3d, &image, &SolverConfig::default())
                    .unwrap()
                    .solutions
            })
        })
        .collect();
    let results: Vec<Vec<PoseSolution>> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    for other in &results[1..] {
        assert_eq!(results[0].len(), other.len());
        for (a, b) in results[0].iter().zip(other) {
            assert_eq!(a.r, b.r);
            assert_eq!(a.t, b.t);
            assert_eq!(a.f, b.f);
            assert_eq!(a.k, b.k);
        }
    }
}

#[test]
fn world_shift_recovered_in_normalization() {
    // Plumbing check on the full chain: a scene built away from the origin
    // must still come back in the original frame.
    let cfg = SolverConfig::default();
    let gt = random_instance(&SceneConfig {
        seed: 31,
        ..SceneConfig::default()
    })
    .unwrap();
    let offset = Vector2::new(13.0, -8.5);
    let world3d: [Vector3<f64>; 4] =
        std::array::from_fn(|i| gt.world3d[i] + Vector3::new(offset.x, offset.y, 0.0));
    let image: [ImagePoint; 4] = std::array::from_fn(|i| gt.image[i]);
    let out = solve(&world3d, &image, &cfg).unwrap();
    assert!(!out.solutions.is_empty());
    // The same camera observes the shifted world with shifted translation.
    let t_want = gt.t - gt.r * Vector3::new(offset.x, offset.y, 0.0);
    let best = out
        .solutions
        .iter()
        .map(|s| ((s.r - gt.r).norm(), (s.t - t_want).norm()))
        .fold((f64::INFINITY, f64::INFINITY), |acc, e| {
            if e.0 + e.1 < acc.0 + acc.1 {
                e
            } else {
                acc
            }
        });
    assert!(best.0 <= 1e-7 && best.1 <= 1e-6 * t_want.norm(), "{best:?}");
}
