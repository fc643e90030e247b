//! Seeded synthetic texture patches for end-to-end sanity runs: each class
//! renders an oriented sinusoidal grating at a class-specific spatial
//! frequency, with random orientation, phase, and pixel noise. Values are
//! quantized to 8 bits so in-memory samples match what a PNG round trip
//! would produce.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;
use crate::train::Dataset;

/// Cycles across the image per class.
pub const CLASS_FREQUENCIES: [f64; 4] = [2.0, 4.0, 8.0, 16.0];

const AMPLITUDE: f64 = 0.35;
const NOISE_SIGMA: f64 = 0.03;

/// One rendered patch: interleaved RGB bytes plus its class index.
#[derive(Clone, Debug)]
pub struct TextureSample {
    pub pixels: Vec<u8>,
    pub size: usize,
    pub label: usize,
}

impl TextureSample {
    /// Channels-first float tensor in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let s = self.size;
        Tensor::from_fn(&[3, s, s], |i| {
            let ch = i / (s * s);
            let pix = i % (s * s);
            self.pixels[pix * 3 + ch] as f64 / 255.0
        })
    }
}

/// Renders one grating patch of the given class.
pub fn render(size: usize, label: usize, rng: &mut ChaCha8Rng) -> TextureSample {
    let freq = CLASS_FREQUENCIES[label];
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ct, st) = (theta.cos(), theta.sin());
    let mut pixels = vec![0u8; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 * ct + y as f64 * st) / size as f64;
            let base = 0.5 + AMPLITUDE * (std::f64::consts::TAU * freq * u + phase).sin();
            for ch in 0..3 {
                let noise: f64 = StandardNormal.sample(rng);
                let v = (base + NOISE_SIGMA * noise).clamp(0.0, 1.0);
                pixels[(y * size + x) * 3 + ch] = (v * 255.0).round() as u8;
            }
        }
    }
    TextureSample {
        pixels,
        size,
        label,
    }
}

/// `per_class` samples of each of the four classes, deterministic in `seed`.
/// Samples are emitted class-interleaved: labels cycle 0,1,2,3,0,1,...
pub fn texture_samples(per_class: usize, size: usize, seed: u64) -> Vec<TextureSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * 4);
    for _ in 0..per_class {
        for label in 0..4 {
            out.push(render(size, label, &mut rng));
        }
    }
    out
}

/// Same samples converted into a training-ready dataset.
pub fn texture_dataset(per_class: usize, size: usize, seed: u64) -> Dataset {
    let mut data = Dataset::default();
    for sample in texture_samples(per_class, size, seed) {
        data.push(sample.to_tensor(), sample.label);
    }
    data
}
