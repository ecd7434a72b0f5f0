//! Elimination stages between the normalized correspondences and the
//! univariate polynomial in the nullspace parameter β.

use super::{ImagePoint, SolveError, SolverConfig, WorldPoint};
use crate::poly::{Poly, PolyError};
use nalgebra::{Matrix3, Matrix3x4, Matrix6, Vector6};

/// Orthonormal basis of the nullspace of the four row-3 constraints. The
/// first two camera rows are `(p11, p12, p14, p21, p22, p24) = n1 + β·n2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullspaceBasis {
    pub n1: Vector6<f64>,
    pub n2: Vector6<f64>,
}

/// Build the 4×6 matrix of the constraints
/// `y_i (p11 X_i + p12 Y_i + p14) − x_i (p21 X_i + p22 Y_i + p24) = 0`
/// (the cross-product row free of both `k` and `w`) and return an orthonormal
/// basis of its nullspace.
pub fn row3_nullspace(
    world: &[WorldPoint; 4],
    image: &[ImagePoint; 4],
    cfg: &SolverConfig,
) -> Result<NullspaceBasis, SolveError> {
    // Two zero rows pad the matrix square so the SVD exposes the full
    // right-singular basis; they do not change singular values or vectors.
    let mut m = Matrix6::<f64>::zeros();
    for i in 0..4 {
        let (xw, yw) = (world[i].x, world[i].y);
        let (xi, yi) = (image[i].x, image[i].y);
        m[(i, 0)] = yi * xw;
        m[(i, 1)] = yi * yw;
        m[(i, 2)] = yi;
        m[(i, 3)] = -xi * xw;
        m[(i, 4)] = -xi * yw;
        m[(i, 5)] = -xi;
    }
    let svd = m.svd(false, true);
    let sv = svd.singular_values; // descending
    if sv[3] <= cfg.rank_tol * sv[0] {
        return Err(SolveError::RankDeficient);
    }
    let v_t = svd.v_t.expect("v requested");
    let n1 = canonical_sign6(v_t.row(4).transpose());
    let n2 = canonical_sign6(v_t.row(5).transpose());
    Ok(NullspaceBasis { n1, n2 })
}

fn canonical_sign6(v: Vector6<f64>) -> Vector6<f64> {
    let mut imax = 0;
    for i in 1..6 {
        if v[i].abs() > v[imax].abs() {
            imax = i;
        }
    }
    if v[imax] < 0.0 {
        -v
    } else {
        v
    }
}

/// Pick the 3-subset of the world points with the largest triangle area (the
/// system matrix of [`build_row2_system`] is best conditioned on it) and
/// return it with the remaining index. Ties break to the lexicographically
/// first subset.
pub fn select_triple(
    world: &[WorldPoint; 4],
    cfg: &SolverConfig,
) -> Result<([usize; 3], usize), SolveError> {
    const TRIPLES: [([usize; 3], usize); 4] = [
        ([0, 1, 2], 3),
        ([0, 1, 3], 2),
        ([0, 2, 3], 1),
        ([1, 2, 3], 0),
    ];
    let area = |t: &[usize; 3]| -> f64 {
        let (a, b, c) = (world[t[0]], world[t[1]], world[t[2]]);
        0.5 * ((b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)).abs()
    };
    let mut best = 0usize;
    let mut best_area = area(&TRIPLES[0].0);
    for (i, (t, _)) in TRIPLES.iter().enumerate().skip(1) {
        let a = area(t);
        if a > best_area {
            best_area = a;
            best = i;
        }
    }
    let mut diam: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            let (dx, dy) = (world[i].x - world[j].x, world[i].y - world[j].y);
            diam = diam.max((dx * dx + dy * dy).sqrt());
        }
    }
    if best_area <= cfg.area_tol * diam * diam {
        return Err(SolveError::DegenerateScene("all point triples collinear"));
    }
    Ok(TRIPLES[best])
}

/// The three row-2 constraints of the selected triple, written as
/// `C (p31, p32, p34)ᵀ = D (β, kβ, k, 1)ᵀ`, together with `M = C⁻¹ D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Row2System {
    pub c: Matrix3<f64>,
    pub d: Matrix3x4<f64>,
    pub m: Matrix3x4<f64>,
}

/// Assemble and solve the row-2 system on the selected triple.
///
/// For point `i` the constraint `(1 + k r²)(p11 X + p12 Y + p14) =
/// x (p31 X + p32 Y + p34)` becomes, with the first row pair affine in β,
/// row `C_i = x_i [X_i, Y_i, 1]` and `D_i = [b_i, b_i r², a_i r², a_i]`
/// where `a_i, b_i` are the `n1`/`n2` parts of `p11 X + p12 Y + p14`.
pub fn build_row2_system(
    world: &[WorldPoint; 4],
    image: &[ImagePoint; 4],
    triple: &[usize; 3],
    basis: &NullspaceBasis,
    cfg: &SolverConfig,
) -> Result<Row2System, SolveError> {
    let mut c = Matrix3::<f64>::zeros();
    let mut d = Matrix3x4::<f64>::zeros();
    for (row, &i) in triple.iter().enumerate() {
        let w = world[i];
        let p = image[i];
        let a = basis.n1[0] * w.x + basis.n1[1] * w.y + basis.n1[2];
        let b = basis.n2[0] * w.x + basis.n2[1] * w.y + basis.n2[2];
        c[(row, 0)] = p.x * w.x;
        c[(row, 1)] = p.x * w.y;
        c[(row, 2)] = p.x;
        d[(row, 0)] = b;
        d[(row, 1)] = b * p.r2();
        d[(row, 2)] = a * p.r2();
        d[(row, 3)] = a;
    }

    // Row equilibration: same solution M, better-behaved pivots.
    let mut ce = c;
    let mut de = d;
    for row in 0..3 {
        let s = ce
            .row(row)
            .iter()
            .chain(de.row(row).iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if s == 0.0 {
            return Err(SolveError::SingularC);
        }
        for j in 0..3 {
            ce[(row, j)] /= s;
        }
        for j in 0..4 {
            de[(row, j)] /= s;
        }
    }
    let hadamard = ce.row(0).norm() * ce.row(1).norm() * ce.row(2).norm();
    if ce.determinant().abs() <= cfg.det_tol * hadamard {
        return Err(SolveError::SingularC);
    }
    let m = ce.lu().solve(&de).ok_or(SolveError::SingularC)?;
    Ok(Row2System { c, d, m })
}

/// Coefficients of the fourth point's row-2 constraint after substituting the
/// parametrized camera rows: `q31 kβ + q32 k + q33 β + q34 = 0`, so that
/// `k(β) = −(q33 β + q34) / (q31 β + q32)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KRational {
    pub q31: f64,
    pub q32: f64,
    pub q33: f64,
    pub q34: f64,
}

impl KRational {
    pub fn k_at(&self, beta: f64) -> f64 {
        -(self.q33 * beta + self.q34) / (self.q31 * beta + self.q32)
    }
}

/// Collect the fourth-point constraint over the monomials `{β, kβ, k, 1}`.
/// The substituted expressions are affine in exactly these monomials, so no
/// higher-order terms arise.
pub fn k_rational(
    world4: WorldPoint,
    image4: ImagePoint,
    basis: &NullspaceBasis,
    sys: &Row2System,
    cfg: &SolverConfig,
) -> Result<KRational, SolveError> {
    let _ = cfg;
    let a = basis.n1[0] * world4.x + basis.n1[1] * world4.y + basis.n1[2];
    let b = basis.n2[0] * world4.x + basis.n2[1] * world4.y + basis.n2[2];
    let r2 = image4.r2();
    // g · (β, kβ, k, 1) = x4 · (p31 X4 + p32 Y4 + p34)
    let g = (sys.m.row(0) * world4.x + sys.m.row(1) * world4.y + sys.m.row(2)) * image4.x;
    let kr = KRational {
        q31: r2 * b - g[1],
        q32: r2 * a - g[2],
        q33: b - g[0],
        q34: a - g[3],
    };
    let scale = [a.abs(), b.abs(), r2 * a.abs(), r2 * b.abs()]
        .into_iter()
        .chain(g.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max);
    let qmax = [kr.q31, kr.q32, kr.q33, kr.q34]
        .into_iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if qmax <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(SolveError::DegenerateInstance);
    }
    Ok(kr)
}

/// The 2×2 matrix `B(β)` of the two orthogonality constraints written as
/// `q_i1(β) w² + q_i2(β) = 0` after substituting `k(β)` and clearing the
/// squared denominator. Every entry has degree ≤ 4.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPolyMatrix {
    pub q11: Poly,
    pub q12: Poly,
    pub q21: Poly,
    pub q22: Poly,
}

/// Substitute `k(β)` into the orthogonality constraints
/// `f1 = v1ᵀ v2` and `f2 = v1ᵀ v1 − v2ᵀ v2` with
/// `v1 = (w p11, w p21, p31)`, `v2 = (w p12, w p22, p32)` and multiply by
/// `den(β)²`, splitting each constraint into its `w²` and constant parts.
pub fn build_beta_matrix(
    basis: &NullspaceBasis,
    sys: &Row2System,
    kr: &KRational,
) -> BetaPolyMatrix {
    let p11 = Poly::new(vec![basis.n1[0], basis.n2[0]]);
    let p12 = Poly::new(vec![basis.n1[1], basis.n2[1]]);
    let p21 = Poly::new(vec![basis.n1[3], basis.n2[3]]);
    let p22 = Poly::new(vec![basis.n1[4], basis.n2[4]]);
    let den = Poly::new(vec![kr.q32, kr.q31]);
    let num = Poly::new(vec![kr.q34, kr.q33]);
    let den2 = den.mul(&den);

    // p3j(β) · den(β) for j = 1, 2: substituting k = −num/den into
    // p3j = (Mj0 β + Mj3) + k (Mj1 β + Mj2) clears to a degree-2 polynomial.
    let m = &sys.m;
    let p31_den = Poly::new(vec![m[(0, 3)], m[(0, 0)]])
        .mul(&den)
        .sub(&Poly::new(vec![m[(0, 2)], m[(0, 1)]]).mul(&num));
    let p32_den = Poly::new(vec![m[(1, 3)], m[(1, 0)]])
        .mul(&den)
        .sub(&Poly::new(vec![m[(1, 2)], m[(1, 1)]]).mul(&num));

    BetaPolyMatrix {
        q11: p11.mul(&p12).add(&p21.mul(&p22)).mul(&den2),
        q12: p31_den.mul(&p32_den),
        q21: p11
            .mul(&p11)
            .add(&p21.mul(&p21))
            .sub(&p12.mul(&p12))
            .sub(&p22.mul(&p22))
            .mul(&den2),
        q22: p31_den.mul(&p31_den).sub(&p32_den.mul(&p32_den)),
    }
}

/// Form `det B = q11 q22 − q12 q21` (degree ≤ 8) and deflate the squared
/// linear denominator `(q31 β + q32)²`, which divides it exactly by
/// construction. Returns the degree-≤6 cofactor.
///
/// The synthetic division runs on reversed coefficients when `|q32| > |q31|`
/// (dividing by the larger coefficient keeps the deflation backward stable
/// whatever the magnitude of the deflated root); both remainders are checked
/// against `deflate_tol · ‖det B‖∞`.
pub fn beta_polynomial(
    bm: &BetaPolyMatrix,
    kr: &KRational,
    cfg: &SolverConfig,
) -> Result<Poly, SolveError> {
    let (q6, r1, r2) = beta_polynomial_with_remainders(bm, kr)?;
    let worst = r1.abs().max(r2.abs());
    let scale8 = bm
        .q11
        .mul(&bm.q22)
        .sub(&bm.q12.mul(&bm.q21))
        .max_abs_coeff();
    if worst > cfg.deflate_tol * scale8 {
        return Err(SolveError::DeflationFailed { remainder: worst });
    }
    Ok(q6)
}

/// As [`beta_polynomial`] but returning both raw synthetic-division
/// remainders instead of checking them, for diagnostics and verification.
pub fn beta_polynomial_with_remainders(
    bm: &BetaPolyMatrix,
    kr: &KRational,
) -> Result<(Poly, f64, f64), SolveError> {
    let det8 = bm.q11.mul(&bm.q22).sub(&bm.q12.mul(&bm.q21));
    let (d0, d1) = (kr.q32, kr.q31);

    let map_err = |e: PolyError| match e {
        PolyError::DegenerateDivisor => SolveError::DegenerateInstance,
        other => SolveError::Roots(other),
    };
    if d1.abs() >= d0.abs() {
        let (q7, r1) = det8.deflate_linear(d0, d1).map_err(map_err)?;
        let (q6, r2) = q7.deflate_linear(d0, d1).map_err(map_err)?;
        Ok((q6, r1, r2))
    } else {
        let (q7r, r1) = det8.reversed().deflate_linear(d1, d0).map_err(map_err)?;
        let (q6r, r2) = q7r.deflate_linear(d1, d0).map_err(map_err)?;
        Ok((q6r.reversed(), r1, r2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::SolverConfig;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    fn image(points: &[(f64, f64); 4]) -> [ImagePoint; 4] {
        std::array::from_fn(|i| ImagePoint::new(points[i].0, points[i].1))
    }

    fn world(points: &[(f64, f64); 4]) -> [WorldPoint; 4] {
        std::array::from_fn(|i| WorldPoint::new(points[i].0, points[i].1))
    }

    #[test]
    fn select_triple_max_area() {
        let w = world(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (10.0, 10.0)]);
        let (triple, fourth) = select_triple(&w, &cfg()).unwrap();
        // Areas by shoelace: {0,1,2} = 0.5, {0,1,3} = 5, {0,2,3} = 5,
        // {1,2,3} = 9.5 — the largest wins.
        assert_eq!(triple, [1, 2, 3]);
        assert_eq!(fourth, 0);
    }

    #[test]
    fn select_triple_avoids_collinear() {
        // Three collinear points: every triple containing all three of them
        // has zero area, so the off-line point is always selected.
        let w = world(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.5, 1.0)]);
        let (triple, _) = select_triple(&w, &cfg()).unwrap();
        assert!(triple.contains(&3));
    }

    #[test]
    fn select_triple_tie_breaks_low_indices() {
        let w = world(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let (triple, fourth) = select_triple(&w, &cfg()).unwrap();
        assert_eq!(triple, [0, 1, 2]);
        assert_eq!(fourth, 3);
    }

    #[test]
    fn select_triple_fully_collinear_rejected() {
        let w = world(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);
        assert!(matches!(
            select_triple(&w, &cfg()),
            Err(SolveError::DegenerateScene(_))
        ));
    }

    #[test]
    fn nullspace_duplicated_correspondence_rank_deficient() {
        let w = world(&[(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        let im = image(&[(0.1, 0.2), (0.4, 0.3), (0.4, 0.3), (-0.2, 0.5)]);
        assert!(matches!(
            row3_nullspace(&w, &im, &cfg()),
            Err(SolveError::RankDeficient)
        ));
    }

    #[test]
    fn nullspace_zero_image_point_rank_deficient() {
        // x = y = 0 for one point makes that constraint row identically zero.
        let w = world(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let im = image(&[(0.0, 0.0), (0.4, 0.3), (0.2, 0.6), (-0.2, 0.5)]);
        assert!(matches!(
            row3_nullspace(&w, &im, &cfg()),
            Err(SolveError::RankDeficient)
        ));
    }

    #[test]
    fn nullspace_annihilates_constraints() {
        let w = world(&[(-0.8, -0.6), (0.9, -0.7), (0.7, 0.8), (-0.6, 0.9)]);
        let im = image(&[(-0.5, -0.4), (0.6, -0.55), (0.45, 0.5), (-0.35, 0.6)]);
        let basis = row3_nullspace(&w, &im, &cfg()).unwrap();
        for i in 0..4 {
            for n in [&basis.n1, &basis.n2] {
                let a = n[0] * w[i].x + n[1] * w[i].y + n[2];
                let b = n[3] * w[i].x + n[4] * w[i].y + n[5];
                let resid = im[i].y * a - im[i].x * b;
                assert!(resid.abs() < 1e-12, "constraint {i} residual {resid}");
            }
        }
        assert!((basis.n1.norm() - 1.0).abs() < 1e-12);
        assert!((basis.n2.norm() - 1.0).abs() < 1e-12);
        assert!(basis.n1.dot(&basis.n2).abs() < 1e-12);
    }

    #[test]
    fn row2_collinear_triple_singular() {
        let w = world(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.5, 1.0)]);
        let im = image(&[(0.1, 0.2), (0.4, 0.3), (0.7, 0.45), (-0.2, 0.5)]);
        let basis = NullspaceBasis {
            n1: Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            n2: Vector6::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0),
        };
        assert!(matches!(
            build_row2_system(&w, &im, &[0, 1, 2], &basis, &cfg()),
            Err(SolveError::SingularC)
        ));
    }

    #[test]
    fn row2_solution_satisfies_system() {
        let w = world(&[(-0.8, -0.6), (0.9, -0.7), (0.7, 0.8), (-0.6, 0.9)]);
        let im = image(&[(-0.5, -0.4), (0.6, -0.55), (0.45, 0.5), (-0.35, 0.6)]);
        let basis = row3_nullspace(&w, &im, &cfg()).unwrap();
        let (triple, _) = select_triple(&w, &cfg()).unwrap();
        let sys = build_row2_system(&w, &im, &triple, &basis, &cfg()).unwrap();
        let resid = (sys.c * sys.m - sys.d).norm() / sys.d.norm();
        assert!(resid <= 1e-12, "relative residual {resid}");
    }

    #[test]
    fn beta_matrix_entries_degree_at_most_four() {
        let w = world(&[(-0.8, -0.6), (0.9, -0.7), (0.7, 0.8), (-0.6, 0.9)]);
        let im = image(&[(-0.5, -0.4), (0.6, -0.55), (0.45, 0.5), (-0.35, 0.6)]);
        let basis = row3_nullspace(&w, &im, &cfg()).unwrap();
        let (triple, fourth) = select_triple(&w, &cfg()).unwrap();
        let sys = build_row2_system(&w, &im, &triple, &basis, &cfg()).unwrap();
        let kr = k_rational(w[fourth], im[fourth], &basis, &sys, &cfg()).unwrap();
        let bm = build_beta_matrix(&basis, &sys, &kr);
        for q in [&bm.q11, &bm.q12, &bm.q21, &bm.q22] {
            assert!(q.degree() <= 4);
        }
    }

    #[test]
    fn beta_matrix_constant_when_n2_zero() {
        // An all-zero n2 removes every β dependence from the entries.
        let w = world(&[(-0.8, -0.6), (0.9, -0.7), (0.7, 0.8), (-0.6, 0.9)]);
        let im = image(&[(-0.5, -0.4), (0.6, -0.55), (0.45, 0.5), (-0.35, 0.6)]);
        let mut basis = row3_nullspace(&w, &im, &cfg()).unwrap();
        basis.n2 = Vector6::zeros();
        let (triple, fourth) = select_triple(&w, &cfg()).unwrap();
        let sys = build_row2_system(&w, &im, &triple, &basis, &cfg()).unwrap();
        let kr = k_rational(w[fourth], im[fourth], &basis, &sys, &cfg()).unwrap();
        // With n2 = 0 the q31/q33 coefficients may vanish; if the instance
        // degenerates entirely k_rational reports it, otherwise the matrix
        // entries must be constants after trimming.
        let bm = build_beta_matrix(&basis, &sys, &kr);
        if kr.q31.abs() < 1e-12 && kr.q33.abs() < 1e-12 {
            for q in [&bm.q11, &bm.q12, &bm.q21, &bm.q22] {
                assert_eq!(q.trimmed(1e-12).degree(), 0, "{q:?}");
            }
        }
    }
}
