//! Shared fixtures for the criterion benchmarks: pre-generated instances so
//! the timed region covers only the code under test.

use nalgebra::Vector3;
use p4pfr::scene::{random_instance, SceneConfig};
use p4pfr::solver::ImagePoint;

pub struct Instance {
    pub world: [Vector3<f64>; 4],
    pub image: [ImagePoint; 4],
}

pub fn instances(n: usize, base_seed: u64) -> Vec<Instance> {
    (0..n)
        .map(|i| {
            let gt = random_instance(&SceneConfig {
                seed: base_seed + i as u64,
                ..SceneConfig::default()
            })
            .expect("default config generates");
            Instance {
                world: std::array::from_fn(|j| gt.world3d[j]),
                image: std::array::from_fn(|j| gt.image[j]),
            }
        })
        .collect()
}
