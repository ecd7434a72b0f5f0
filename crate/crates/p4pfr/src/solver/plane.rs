//! Canonical plane frame: total-least-squares plane fit and the rigid
//! transform between in-plane 2D coordinates and the original 3D frame.

use super::{SolveError, SolverConfig, WorldPoint};
use nalgebra::{Matrix3, Vector3};

/// Rigid transform mapping plane coordinates `(X, Y, 0)` to the original 3D
/// points: `world = rotation * (X, Y, 0) + translation`. The rotation columns
/// are the in-plane axes and the plane normal (right-handed).
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneFrame {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl PlaneFrame {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn to_world(&self, p: &WorldPoint) -> Vector3<f64> {
        self.rotation * Vector3::new(p.x, p.y, 0.0) + self.translation
    }

    pub fn from_world(&self, w: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (w - self.translation)
    }
}

/// Fit the best plane to four 3D points and return their in-plane
/// coordinates, the plane frame and the max out-of-plane residual.
pub fn canonicalize_plane(
    world3d: &[Vector3<f64>; 4],
    cfg: &SolverConfig,
) -> Result<([WorldPoint; 4], PlaneFrame, f64), SolveError> {
    let (coords, frame, residual) = fit_plane(world3d, cfg)?;
    Ok(([coords[0], coords[1], coords[2], coords[3]], frame, residual))
}

/// Plane fit for any number of points (the robust layer fits one plane to
/// the whole correspondence set).
pub(crate) fn fit_plane(
    points: &[Vector3<f64>],
    cfg: &SolverConfig,
) -> Result<(Vec<WorldPoint>, PlaneFrame, f64), SolveError> {
    assert!(points.len() >= 3);
    if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(SolveError::DegenerateScene("non-finite world point"));
    }
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;

    let mut scatter = Matrix3::<f64>::zeros();
    for p in points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }

    let eig = nalgebra::SymmetricEigen::new(scatter);
    // Indices of eigenvalues sorted ascending.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lam_min = eig.eigenvalues[order[0]].max(0.0);
    let lam_mid = eig.eigenvalues[order[1]].max(0.0);
    let lam_max = eig.eigenvalues[order[2]].max(0.0);

    if lam_max <= 0.0 || lam_mid <= 1e-14 * lam_max {
        return Err(SolveError::DegenerateScene("collinear world points"));
    }
    let _ = lam_min;

    let normal = canonical_sign(eig.eigenvectors.column(order[0]).into_owned());
    let e1 = canonical_sign(eig.eigenvectors.column(order[2]).into_owned());
    let e2 = normal.cross(&e1);
    let rotation = Matrix3::from_columns(&[e1, e2, normal]);
    let frame = PlaneFrame {
        rotation,
        translation: centroid,
    };

    let diameter = scene_diameter(points);
    let mut coords = Vec::with_capacity(points.len());
    let mut residual = 0.0f64;
    for p in points {
        let local = frame.from_world(p);
        residual = residual.max(local.z.abs());
        coords.push(WorldPoint::new(local.x, local.y));
    }
    if residual > cfg.coplanarity_tol * diameter {
        return Err(SolveError::NotCoplanar { residual });
    }
    Ok((coords, frame, residual))
}

fn scene_diameter(points: &[Vector3<f64>]) -> f64 {
    let mut d = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d = d.max((points[i] - points[j]).norm());
        }
    }
    d
}

/// Flip the vector so its largest-magnitude component is positive. Makes the
/// eigenvector-derived frame deterministic.
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let mut imax = 0;
    for i in 1..3 {
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
