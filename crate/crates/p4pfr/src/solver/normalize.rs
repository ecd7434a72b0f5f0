//! Conditioning normalization of the correspondences.
//!
//! World points are shifted to zero centroid and scaled to RMS norm `√2`.
//! Image points are only *scaled* to RMS radius `√2` — never shifted: the
//! division model anchors the distortion at the coordinate origin, and a
//! shift would silently move the distortion center.

use super::{ImagePoint, SolveError, WorldPoint};
use nalgebra::Vector2;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Parameters of the applied normalization, kept for de-normalizing the
/// solved pose: `x_n = world_scale * (x + world_shift)` for world points and
/// `x_n = image_scale * x` for image points. Solved parameters map back via
/// `f = f_n / image_scale`, `k = k_n * image_scale²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub world_shift: Vector2<f64>,
    pub world_scale: f64,
    pub image_scale: f64,
}

pub fn normalize_points(
    world: &[WorldPoint; 4],
    image: &[ImagePoint; 4],
) -> Result<([WorldPoint; 4], [ImagePoint; 4], Normalization), SolveError> {
    let cx = world.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = world.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let world_shift = Vector2::new(-cx, -cy);

    let world_rms = (world
        .iter()
        .map(|p| (p.x - cx).powi(2) + (p.y - cy).powi(2))
        .sum::<f64>()
        / 4.0)
        .sqrt();
    if world_rms < 1e-14 {
        return Err(SolveError::DegenerateScene("world points coincide"));
    }
    let world_scale = SQRT2 / world_rms;

    let image_rms = (image.iter().map(|p| p.r2()).sum::<f64>() / 4.0).sqrt();
    if image_rms < 1e-14 {
        return Err(SolveError::DegenerateScene("image points at the origin"));
    }
    let image_scale = SQRT2 / image_rms;

    let world_n =
        std::array::from_fn(|i| WorldPoint::new(world_scale * (world[i].x - cx), world_scale * (world[i].y - cy)));
    let image_n =
        std::array::from_fn(|i| ImagePoint::new(image_scale * image[i].x, image_scale * image[i].y));

    Ok((
        world_n,
        image_n,
        Normalization {
            world_shift,
            world_scale,
            image_scale,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn already_normalized_is_fixpoint() {
        // Centered square at RMS norm √2 and image at RMS radius √2.
        let world = [
            WorldPoint::new(1.0, 1.0),
            WorldPoint::new(-1.0, 1.0),
            WorldPoint::new(-1.0, -1.0),
            WorldPoint::new(1.0, -1.0),
        ];
        let image = [
            ImagePoint::new(1.0, 1.0),
            ImagePoint::new(-1.0, 1.0),
            ImagePoint::new(-1.0, -1.0),
            ImagePoint::new(1.0, -1.0),
        ];
        let (world_n, image_n, norm) = normalize_points(&world, &image).unwrap();
        assert!(norm.world_shift.norm() < 1e-15);
        assert!((norm.world_scale - 1.0).abs() < 1e-15);
        assert!((norm.image_scale - 1.0).abs() < 1e-15);
        assert_eq!(world_n, world);
        assert_eq!(image_n, image);
    }

    #[test]
    fn world_square_shift_and_scale() {
        let world = [
            WorldPoint::new(0.0, 0.0),
            WorldPoint::new(2.0, 0.0),
            WorldPoint::new(2.0, 2.0),
            WorldPoint::new(0.0, 2.0),
        ];
        let image = [
            ImagePoint::new(0.1, 0.0),
            ImagePoint::new(0.0, 0.1),
            ImagePoint::new(-0.1, 0.0),
            ImagePoint::new(0.0, -0.1),
        ];
        let (_, _, norm) = normalize_points(&world, &image).unwrap();
        // Centroid (1,1): shift is its negation; centered RMS is already √2.
        assert!((norm.world_shift - Vector2::new(-1.0, -1.0)).norm() < 1e-15);
        assert!((norm.world_scale - 1.0).abs() < 1e-15);
    }

    #[test]
    fn image_scaling_inverse_relationship() {
        let world = [
            WorldPoint::new(0.0, 0.0),
            WorldPoint::new(1.0, 0.0),
            WorldPoint::new(1.0, 1.0),
            WorldPoint::new(0.0, 1.0),
        ];
        let image = [
            ImagePoint::new(0.3, 0.1),
            ImagePoint::new(-0.2, 0.4),
            ImagePoint::new(0.1, -0.5),
            ImagePoint::new(-0.3, -0.2),
        ];
        let scaled: [ImagePoint; 4] =
            std::array::from_fn(|i| ImagePoint::new(100.0 * image[i].x, 100.0 * image[i].y));
        let (_, norm_a) = {
            let (_, i, n) = normalize_points(&world, &image).unwrap();
            (i, n)
        };
        let (image_b, norm_b) = {
            let (_, i, n) = normalize_points(&world, &scaled).unwrap();
            (i, n)
        };
        assert!((norm_b.image_scale - norm_a.image_scale / 100.0).abs() < 1e-15 * norm_a.image_scale);
        // Normalized image points agree regardless of the input scale.
        for (a, b) in image_b.iter().zip({
            let (_, i, _) = normalize_points(&world, &image).unwrap();
            i
        }) {
            assert!((a.x - b.x).abs() < 1e-14 && (a.y - b.y).abs() < 1e-14);
        }
    }

    #[test]
    fn coincident_world_points_rejected() {
        let world = [WorldPoint::new(1.0, 1.0); 4];
        let image = [
            ImagePoint::new(0.3, 0.1),
            ImagePoint::new(-0.2, 0.4),
            ImagePoint::new(0.1, -0.5),
            ImagePoint::new(-0.3, -0.2),
        ];
        assert!(matches!(
            normalize_points(&world, &image),
            Err(SolveError::DegenerateScene(_))
        ));
    }
}
