//! Seeded synthetic clouds: labeled cereal-like plants and uniform cubes.
//!
//! A plant is a vertical stem cylinder, a phyllotactic spiral of arched
//! strap leaves and an ellipsoidal panicle on top. Every point carries a
//! unit normal from the analytic surface, an organ-tinted color and a
//! laser-like intensity, so both built-in feature schemas apply.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{ClassId, ClassMap, PointCloud};

pub const STEM: ClassId = 0;
pub const LEAF: ClassId = 1;
pub const PANICLE: ClassId = 2;

pub fn plant_class_map() -> ClassMap {
    ClassMap::new(["stem", "leaf", "panicle"]).expect("fixed names")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlantSpec {
    pub stem_height: f64,
    pub stem_radius: f64,
    pub leaf_count: usize,
    pub leaf_length: f64,
    pub leaf_width: f64,
    pub panicle_length: f64,
    pub panicle_radius: f64,
    pub stem_points: usize,
    /// Points per leaf.
    pub leaf_points: usize,
    pub panicle_points: usize,
    /// Standard deviation of positional noise, in scene units.
    pub noise_sigma: f64,
    /// Standard deviation of per-channel color noise, in 0..255 units.
    pub color_noise: f64,
}

impl Default for SyntheticPlantSpec {
    /// About 50 000 points on a 1.6 m plant.
    fn default() -> Self {
        Self {
            stem_height: 1.6,
            stem_radius: 0.015,
            leaf_count: 8,
            leaf_length: 0.6,
            leaf_width: 0.07,
            panicle_length: 0.25,
            panicle_radius: 0.05,
            stem_points: 8000,
            leaf_points: 4000,
            panicle_points: 10000,
            noise_sigma: 0.002,
            color_noise: 12.0,
        }
    }
}

impl SyntheticPlantSpec {
    pub fn total_points(&self) -> usize {
        self.stem_points + self.leaf_count * self.leaf_points + self.panicle_points
    }
}

struct Builder {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    color_noise: Normal<f64>,
    cloud: PointCloud,
}

impl Builder {
    fn push(&mut self, p: [f64; 3], n: [f64; 3], class: ClassId, base: [f64; 3], intensity: f64) {
        let mut jitter = || self.noise.sample(&mut self.rng);
        let pos = [p[0] + jitter(), p[1] + jitter(), p[2] + jitter()];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let normal = n.map(|c| (c / len) as f32);
        let color = base.map(|c| (c + self.color_noise.sample(&mut self.rng)).round().clamp(0.0, 255.0) as u8);
        let intensity = (intensity + 0.05 * self.rng.random::<f64>()) as f32;
        self.cloud.positions.push(pos);
        self.cloud.normals.get_or_insert_with(Vec::new).push(normal);
        self.cloud.colors.get_or_insert_with(Vec::new).push(color);
        self.cloud.intensity.get_or_insert_with(Vec::new).push(intensity);
        self.cloud.labels.get_or_insert_with(Vec::new).push(class);
    }
}

const BROWN: [f64; 3] = [115.0, 80.0, 45.0];
const GREEN: [f64; 3] = [55.0, 145.0, 50.0];
const YELLOW: [f64; 3] = [215.0, 190.0, 75.0];

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// A labeled plant with positions, colors, normals, intensity and labels.
pub fn synthetic_plant(spec: &SyntheticPlantSpec, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Per-plant morphology jitter.
    let height = spec.stem_height * rng.random_range(0.9..1.1);
    let leaf_length = spec.leaf_length * rng.random_range(0.85..1.15);
    let phase = rng.random_range(0.0..TAU);
    let mut b = Builder {
        noise: Normal::new(0.0, spec.noise_sigma).expect("finite sigma"),
        color_noise: Normal::new(0.0, spec.color_noise).expect("finite sigma"),
        cloud: PointCloud::new(Vec::with_capacity(spec.total_points())),
        rng,
    };

    let r = spec.stem_radius;
    for _ in 0..spec.stem_points {
        let theta = b.rng.random_range(0.0..TAU);
        let z = b.rng.random_range(0.0..height);
        let (s, c) = theta.sin_cos();
        b.push([r * c, r * s, z], [c, s, 0.0], STEM, BROWN, 0.3);
    }

    let golden = PI * (3.0 - 5f64.sqrt());
    for i in 0..spec.leaf_count {
        let base_z = height * (0.12 + 0.7 * (i as f64 + 0.5) / spec.leaf_count.max(1) as f64);
        let phi = phase + golden * i as f64 + b.rng.random_range(-0.2..0.2);
        let rise = b.rng.random_range(0.45..0.75);
        let droop = b.rng.random_range(0.7..1.1);
        let (sp, cp) = phi.sin_cos();
        let d = [cp, sp, 0.0];
        let e = [-sp, cp, 0.0];
        for _ in 0..spec.leaf_points {
            let s: f64 = b.rng.random();
            let t = b.rng.random_range(-1.0..1.0);
            let half_width = 0.5 * spec.leaf_width * (0.15 + 0.85 * (PI * s).sin());
            let radial = r + leaf_length * s;
            let z = base_z + leaf_length * (rise * s - droop * s * s);
            let p = [radial * cp + t * half_width * e[0], radial * sp + t * half_width * e[1], z];
            let tangent = [d[0], d[1], rise - 2.0 * droop * s];
            b.push(p, cross(tangent, e), LEAF, GREEN, 0.6);
        }
    }

    let (a, c) = (spec.panicle_radius, spec.panicle_length / 2.0);
    let center = [0.0, 0.0, height + c];
    for _ in 0..spec.panicle_points {
        let z: f64 = b.rng.random_range(-1.0..1.0);
        let theta = b.rng.random_range(0.0..TAU);
        let ring = (1.0 - z * z).sqrt();
        let u = [ring * theta.cos(), ring * theta.sin(), z];
        let p = [center[0] + a * u[0], center[1] + a * u[1], center[2] + c * u[2]];
        b.push(p, [u[0] / a, u[1] / a, u[2] / c], PANICLE, YELLOW, 0.8);
    }

    b.cloud.class_map = Some(plant_class_map());
    b.cloud
}

/// `n` positions drawn uniformly from `[0, side)^3`, no other channels.
pub fn uniform_cube(n: usize, side: f64, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointCloud::new((0..n).map(|_| [0; 3].map(|_: i32| rng.random::<f64>() * side)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::validate_cloud;

    #[test]
    fn default_plant_is_valid_and_sized() {
        let spec = SyntheticPlantSpec::default();
        let cloud = synthetic_plant(&spec, 7);
        assert_eq!(cloud.len(), 50_000);
        assert_eq!(cloud.len(), spec.total_points());
        assert!(validate_cloud(&cloud).is_empty(), "{:?}", validate_cloud(&cloud).first());
        let labels = cloud.labels.as_ref().unwrap();
        for class in [STEM, LEAF, PANICLE] {
            assert!(labels.contains(&class));
        }
    }

    #[test]
    fn seeds_are_reproducible_and_distinct() {
        let spec = SyntheticPlantSpec { stem_points: 100, leaf_points: 50, panicle_points: 100, ..Default::default() };
        assert_eq!(synthetic_plant(&spec, 1), synthetic_plant(&spec, 1));
        assert_ne!(synthetic_plant(&spec, 1).positions, synthetic_plant(&spec, 2).positions);
    }

    #[test]
    fn uniform_cube_bounds() {
        let c = uniform_cube(1000, 2.0, 3);
        assert_eq!(c.len(), 1000);
        assert!(c.positions.iter().flatten().all(|&v| (0.0..2.0).contains(&v)));
    }
}
