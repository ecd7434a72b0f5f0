//! Dense univariate real polynomials and real-root extraction.
//!
//! Coefficients are stored ascending (`coeffs[i]` multiplies `x^i`). Root
//! finding builds the balanced companion matrix and takes its eigenvalues,
//! then polishes the real ones with a couple of Newton steps. Degrees in this
//! crate never exceed eight, so the eigenvalue route is both cheap and free of
//! bracketing heuristics.

use nalgebra::DMatrix;
use num_complex::Complex;
use thiserror::Error;

/// Trailing (highest-degree) coefficients at or below this fraction of the
/// largest coefficient are treated as exact zeros when trimming.
pub const DEFAULT_TRIM_TOL: f64 = 1e-12;
/// Eigenvalues with `|Im| <= IM_TOL * (1 + |Re|)` are accepted as real roots.
pub const DEFAULT_IM_TOL: f64 = 1e-6;
/// Roots closer than `MERGE_TOL * (1 + |root|)` are reported once.
pub const DEFAULT_MERGE_TOL: f64 = 1e-8;
/// Accepted roots must satisfy `|p(r)| <= RESIDUAL_TOL * max|c| * (1+|r|)^deg`.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-9;
/// Newton steps applied to each accepted real eigenvalue.
pub const DEFAULT_POLISH_ITERS: u32 = 2;
/// QR iteration budget per deflated eigenvalue.
pub const DEFAULT_MAX_QR_ITERS: usize = 40;

const EPS_DIVISOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolyError {
    /// Both divisor coefficients of a linear deflation are (near) zero.
    #[error("degenerate linear divisor: both coefficients vanish")]
    DegenerateDivisor,
    /// The QR iteration did not converge within its budget.
    #[error("companion eigensolver failed to converge")]
    EigenFailure,
}

/// Dense real polynomial, ascending-degree coefficients. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    coeffs: Vec<f64>,
}

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "polynomial needs at least one coefficient");
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    /// Monic product of `(x - r)` over the given roots.
    pub fn from_roots(roots: &[f64]) -> Self {
        let mut p = Poly::constant(1.0);
        for &r in roots {
            p = p.mul(&Poly::new(vec![-r, 1.0]));
        }
        p
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree of the stored coefficient vector (no trimming applied).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        let mut v = 0.0;
        for &c in self.coeffs.iter().rev() {
            v = v * x + c;
        }
        v
    }

    /// Value and first derivative in one Horner pass.
    pub fn eval_with_deriv(&self, x: f64) -> (f64, f64) {
        let n = self.coeffs.len();
        let mut v = self.coeffs[n - 1];
        let mut d = 0.0;
        for &c in self.coeffs[..n - 1].iter().rev() {
            d = d * x + v;
            v = v * x + c;
        }
        (v, d)
    }

    /// Coefficient convolution.
    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (i, &a) in self.coeffs.iter().enumerate() {
            out[i] += a;
        }
        for (i, &b) in other.coeffs.iter().enumerate() {
            out[i] += b;
        }
        Poly::new(out)
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scaled(-1.0))
    }

    pub fn scaled(&self, c: f64) -> Poly {
        Poly::new(self.coeffs.iter().map(|a| a * c).collect())
    }

    /// Drop trailing coefficients with magnitude `<= trim_tol * max|coeff|`.
    /// The zero polynomial trims to `[0]`.
    pub fn trimmed(&self, trim_tol: f64) -> Poly {
        let cut = trim_tol * self.max_abs_coeff();
        let last = self.coeffs.iter().rposition(|c| c.abs() > cut);
        match last {
            Some(i) => Poly::new(self.coeffs[..=i].to_vec()),
            None => Poly::zero(),
        }
    }

    /// Coefficient reversal: `x^n * p(1/x)` over the stored length.
    pub fn reversed(&self) -> Poly {
        let mut c = self.coeffs.clone();
        c.reverse();
        Poly::new(c)
    }

    /// Synthetic (Euclidean) division by `d1*x + d0`: returns `(quotient, r)`
    /// with `p = quotient * (d1*x + d0) + r` and scalar `r`.
    ///
    /// With `d1 = 0` the division is by the constant `d0` and `r = 0`.
    /// Callers that deflate a known factor should check `|r|` against their
    /// own tolerance; a large remainder means the divisor was not a factor.
    pub fn deflate_linear(&self, d0: f64, d1: f64) -> Result<(Poly, f64), PolyError> {
        if d0.abs() <= EPS_DIVISOR && d1.abs() <= EPS_DIVISOR {
            return Err(PolyError::DegenerateDivisor);
        }
        let n = self.coeffs.len() - 1;
        if d1 == 0.0 {
            return Ok((self.scaled(1.0 / d0), 0.0));
        }
        if n == 0 {
            return Ok((Poly::zero(), self.coeffs[0]));
        }
        let mut q = vec![0.0; n];
        q[n - 1] = self.coeffs[n] / d1;
        for i in (1..n).rev() {
            q[i - 1] = (self.coeffs[i] - d0 * q[i]) / d1;
        }
        let r = self.coeffs[0] - d0 * q[0];
        Ok((Poly::new(q), r))
    }
}

/// Real roots plus a tally of the eigenvalues that were discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct RootSet {
    /// Accepted real roots, ascending, duplicates within the merge tolerance
    /// collapsed to a single entry.
    pub real_roots: Vec<f64>,
    /// Eigenvalues discarded as non-real (or failing the residual bound).
    /// Before deduplication, `real + complex_count` equals the degree.
    pub complex_count: usize,
}

/// Knobs for [`real_roots_with`]. The defaults match the module constants.
#[derive(Debug, Clone)]
pub struct RootOptions {
    pub im_tol: f64,
    pub polish_iters: u32,
    pub trim_tol: f64,
    pub merge_tol: f64,
    pub residual_tol: f64,
    pub max_qr_iters: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            im_tol: DEFAULT_IM_TOL,
            polish_iters: DEFAULT_POLISH_ITERS,
            trim_tol: DEFAULT_TRIM_TOL,
            merge_tol: DEFAULT_MERGE_TOL,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            max_qr_iters: DEFAULT_MAX_QR_ITERS,
        }
    }
}

/// Eigenvalues of the balanced monic companion matrix of `p`.
///
/// `p` must already be trimmed: the leading coefficient is divided out, so a
/// near-zero leading coefficient would manufacture a spurious huge root.
/// Returns exactly `degree(p)` values.
pub fn companion_eigenvalues(p: &Poly) -> Result<Vec<Complex<f64>>, PolyError> {
    companion_eigenvalues_with(p, DEFAULT_MAX_QR_ITERS)
}

pub fn companion_eigenvalues_with(
    p: &Poly,
    max_qr_iters: usize,
) -> Result<Vec<Complex<f64>>, PolyError> {
    let n = p.degree();
    assert!(n >= 1, "companion matrix needs degree >= 1");
    let lead = p.coeffs[n];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        m[(i, n - 1)] = -p.coeffs[i] / lead;
    }
    balance(&mut m);
    hqr_eigenvalues(m, max_qr_iters)
}

/// Eigenvalues of an upper Hessenberg matrix by the Francis double-shift QR
/// iteration with exceptional shifts (the EISPACK `hqr` scheme). Eigenvalues
/// only, no Schur vectors. The exceptional shifts matter: a plain shifted QR
/// cycles forever on e.g. the companion matrix of `x^6 - 1`.
fn hqr_eigenvalues(mut a: DMatrix<f64>, max_its: usize) -> Result<Vec<Complex<f64>>, PolyError> {
    let n = a.nrows();
    let eps = f64::EPSILON;
    let mut eig = vec![Complex::new(0.0, 0.0); n];

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[(i, j)].abs();
        }
    }

    let mut hi = n as isize - 1;
    let mut t = 0.0;
    while hi >= 0 {
        let nn = hi as usize;
        let mut its = 0usize;
        loop {
            // Look for a negligible subdiagonal element to split at.
            let mut l = 0usize;
            for ll in (1..=nn).rev() {
                let mut s = a[(ll - 1, ll - 1)].abs() + a[(ll, ll)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[(ll, ll - 1)].abs() <= eps * s {
                    a[(ll, ll - 1)] = 0.0;
                    l = ll;
                    break;
                }
            }
            let mut x = a[(nn, nn)];
            if l == nn {
                eig[nn] = Complex::new(x + t, 0.0);
                hi -= 1;
                break;
            }
            let mut y = a[(nn - 1, nn - 1)];
            let mut w = a[(nn, nn - 1)] * a[(nn - 1, nn)];
            if l + 1 == nn {
                // Trailing 2x2 block: closed-form eigenvalues.
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + z.copysign(if p == 0.0 { 1.0 } else { p });
                    let r1 = x + z;
                    let r2 = if z != 0.0 { x - w / z } else { r1 };
                    eig[nn - 1] = Complex::new(r1, 0.0);
                    eig[nn] = Complex::new(r2, 0.0);
                } else {
                    eig[nn - 1] = Complex::new(x + p, z);
                    eig[nn] = Complex::new(x + p, -z);
                }
                hi -= 2;
                break;
            }

            if its == max_its {
                return Err(PolyError::EigenFailure);
            }
            if its > 0 && its % 10 == 0 {
                // Exceptional shift to break convergence stalls.
                t += x;
                for i in 0..=nn {
                    a[(i, i)] -= x;
                }
                let s = a[(nn, nn - 1)].abs() + a[(nn - 1, nn - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            // Find two consecutive small subdiagonals (start of the bulge).
            let mut m = nn - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
                q = a[(m + 1, m + 1)] - z - rr - ss;
                r = a[(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a[(i, i - 2)] = 0.0;
                if i != m + 2 {
                    a[(i, i - 3)] = 0.0;
                }
            }

            // Double QR sweep: chase the 3x1 bulge down rows m..nn.
            for k in m..nn {
                if k != m {
                    p = a[(k, k - 1)];
                    q = a[(k + 1, k - 1)];
                    r = if k != nn - 1 { a[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r)
                    .sqrt()
                    .copysign(if p == 0.0 { 1.0 } else { p });
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        a[(k, k - 1)] = -a[(k, k - 1)];
                    }
                } else {
                    a[(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nn {
                    let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                    if k != nn - 1 {
                        pp += r * a[(k + 2, j)];
                        a[(k + 2, j)] -= pp * z;
                    }
                    a[(k + 1, j)] -= pp * y;
                    a[(k, j)] -= pp * x;
                }
                let mmin = nn.min(k + 3);
                for i in l..=mmin {
                    let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                    if k != nn - 1 {
                        pp += z * a[(i, k + 2)];
                        a[(i, k + 2)] -= pp * r;
                    }
                    a[(i, k + 1)] -= pp * q;
                    a[(i, k)] -= pp;
                }
            }
        }
    }
    Ok(eig)
}

/// Parlett–Reinsch balancing with powers of two (similarity transform, so
/// eigenvalues are preserved exactly).
fn balance(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    let radix = 2.0f64;
    let sq = radix * radix;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / radix;
            while c < g {
                f *= radix;
                c *= sq;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= sq;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let ginv = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= ginv;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
        if done {
            break;
        }
    }
}

/// Real roots of `p` via companion eigenvalues, Newton polish and merging.
///
/// See [`RootOptions`] for the remaining tolerances. A polynomial that trims
/// to a constant has no roots and yields an empty set.
pub fn real_roots(p: &Poly, im_tol: f64, polish_iters: u32) -> Result<RootSet, PolyError> {
    real_roots_with(
        p,
        &RootOptions {
            im_tol,
            polish_iters,
            ..RootOptions::default()
        },
    )
}

pub fn real_roots_with(p: &Poly, opts: &RootOptions) -> Result<RootSet, PolyError> {
    let t = p.trimmed(opts.trim_tol);
    let deg = t.degree();
    if deg == 0 {
        return Ok(RootSet {
            real_roots: Vec::new(),
            complex_count: 0,
        });
    }
    let eigs = companion_eigenvalues_with(&t, opts.max_qr_iters)?;

    let mut complex_count = 0usize;
    let mut candidates = Vec::with_capacity(deg);
    for z in &eigs {
        if z.im.abs() <= opts.im_tol * (1.0 + z.re.abs()) {
            candidates.push(newton_polish(&t, z.re, opts.polish_iters));
        } else {
            complex_count += 1;
        }
    }

    // Residual acceptance: anything the polish could not bring down is a
    // misclassified near-real pair (or a genuinely ill-conditioned value).
    let scale = t.max_abs_coeff();
    candidates.retain(|&r| {
        let bound = opts.residual_tol * scale * (1.0 + r.abs()).powi(deg as i32);
        let keep = t.eval(r).abs() <= bound;
        if !keep {
            complex_count += 1;
        }
        keep
    });

    candidates.sort_by(f64::total_cmp);
    let mut merged: Vec<f64> = Vec::with_capacity(candidates.len());
    for r in candidates {
        match merged.last() {
            Some(&prev) if (r - prev).abs() <= opts.merge_tol * (1.0 + r.abs()) => {
                // Keep the representative with the smaller residual.
                if t.eval(r).abs() < t.eval(prev).abs() {
                    *merged.last_mut().unwrap() = r;
                }
            }
            _ => merged.push(r),
        }
    }

    Ok(RootSet {
        real_roots: merged,
        complex_count,
    })
}

fn newton_polish(p: &Poly, mut x: f64, iters: u32) -> f64 {
    for _ in 0..iters {
        let (v, d) = p.eval_with_deriv(x);
        if v == 0.0 || d == 0.0 {
            break;
        }
        let xn = x - v / d;
        if !xn.is_finite() || p.eval(xn).abs() > v.abs() {
            break;
        }
        x = xn;
    }
    x
}
