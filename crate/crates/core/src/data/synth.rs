//! Synthetic ultrasound-like data: noisy backgrounds with one or two bright
//! ellipses whose interiors form the mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape, Tensor};

use super::manifest::DatasetManifest;
use super::sample::Sample;

/// A rotated ellipse in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axis along the rotated x direction.
    pub a: f64,
    pub b: f64,
    /// Rotation in radians.
    pub theta: f64,
}

impl Ellipse {
    /// Whether the pixel centre `(x + 0.5, y + 0.5)` lies inside.
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// A synthetic sample together with the shapes that define its mask.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub sample: Sample,
    pub ellipses: Vec<Ellipse>,
}

fn random_ellipse(rng: &mut impl Rng, size: usize) -> Ellipse {
    let s = size as f64;
    let a = rng.random_range(0.08 * s..0.22 * s);
    let b = rng.random_range(0.08 * s..0.22 * s);
    let margin = a.max(b);
    Ellipse {
        cx: rng.random_range(margin..s - margin),
        cy: rng.random_range(margin..s - margin),
        a,
        b,
        theta: rng.random_range(0.0..std::f64::consts::PI),
    }
}

/// Generates one `size×size` sample.
pub fn synth_sample(rng: &mut impl Rng, id: String, size: usize) -> SynthSample {
    let count = rng.random_range(1..=2);
    let ellipses: Vec<Ellipse> = (0..count).map(|_| random_ellipse(rng, size)).collect();
    let mut gray = vec![0f32; size * size];
    let mut mask = vec![0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let inside = ellipses.iter().any(|e| e.contains_pixel(x, y));
            let v: f32 = if inside {
                rng.random_range(0.55..1.0)
            } else {
                rng.random_range(0.0..0.45)
            };
            gray[y * size + x] = v.clamp(0.0, 1.0);
            mask[y * size + x] = if inside { 1.0 } else { 0.0 };
        }
    }
    let plane = size * size;
    let image = Tensor::from_fn(Shape::new(1, 3, size, size), |_, _, h, w| gray[h * size + w]);
    debug_assert_eq!(image.len(), 3 * plane);
    let mask = Tensor::from_vec(Shape::new(1, 1, size, size), mask).expect("mask length");
    SynthSample {
        sample: Sample::new(id, image, mask).expect("synthetic sample is well-formed"),
        ellipses,
    }
}

/// `n` reproducible synthetic samples with ids `synth_000`, `synth_001`, ….
pub fn synth_samples(n: usize, size: usize, seed: u64) -> Vec<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| synth_sample(&mut rng, format!("synth_{i:03}"), size))
        .collect()
}

/// A manifest of `n` synthetic originals (no splits assigned).
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> DatasetManifest {
    DatasetManifest::from_samples(synth_samples(n, size, seed).into_iter().map(|s| s.sample).collect())
}
