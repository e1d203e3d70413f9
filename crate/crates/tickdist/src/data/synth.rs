//! Synthetic two-class tick-like image generator.
//!
//! Stands in for the private tick dataset. Both classes are a dark
//! elliptical body with radial legs on a white ground, photographed with
//! random pose, scale, illumination and pixel noise. The classes differ by
//! shape only: the positive class has eight thin legs, the negative class
//! six thicker legs plus a lighter dorsal blotch. Leg widths are balanced
//! so total ink is similar across classes and a mean-intensity classifier
//! stays near chance.
//!
//! Images are quantized to the 8-bit grid at generation time, so the
//! in-memory tensors are bit-identical to a PNG round trip.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DatasetManifest, ManifestRow, SampleSource};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dataset-level generation: exact positive count `round(n * fraction)`,
/// shuffled label order, one derived seed per sample.
pub fn generate_synthetic_dataset(
    n: usize,
    positive_fraction: f64,
    image_size: usize,
    seed: u64,
) -> Result<(DatasetManifest, Vec<(u32, Tensor<f32>)>)> {
    if n < 2 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 2 samples, got {n}"
        )));
    }
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(Error::Config(format!(
            "positive fraction must be in [0, 1], got {positive_fraction}"
        )));
    }
    if image_size < 32 {
        return Err(Error::Config(format!(
            "image size must be at least 32, got {image_size}"
        )));
    }
    let n_pos = (n as f64 * positive_fraction).round() as usize;
    let mut labels: Vec<u8> = std::iter::repeat(1u8)
        .take(n_pos)
        .chain(std::iter::repeat(0u8).take(n - n_pos))
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    labels.shuffle(&mut rng);

    let mut rows = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for (i, &label) in labels.iter().enumerate() {
        let sample_seed = splitmix64(seed ^ 0x9e37_79b9_7f4a_7c15, i as u64);
        let img = synthesize_image(sample_seed, label, image_size, image_size);
        rows.push(ManifestRow {
            id: i as u32,
            source: SampleSource::Synthetic {
                seed: sample_seed,
                height: image_size as u32,
                width: image_size as u32,
            },
            label,
            split: None,
        });
        images.push((i as u32, img));
    }
    Ok((DatasetManifest::new(rows)?, images))
}

fn splitmix64(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Signed distance proxy: < 0 inside, measured roughly in pixels near
    /// the boundary.
    fn dist(&self, y: f64, x: f64) -> f64 {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let r = ((u / self.a) * (u / self.a) + (v / self.b) * (v / self.b)).sqrt();
        (r - 1.0) * self.a.min(self.b)
    }

    /// Radius along direction `angle` (in world frame).
    fn radius_at(&self, angle: f64) -> f64 {
        let rel = angle - self.sin.atan2(self.cos);
        let (s, c) = rel.sin_cos();
        1.0 / ((c / self.a) * (c / self.a) + (s / self.b) * (s / self.b)).sqrt()
    }
}

struct Segment {
    y0: f64,
    x0: f64,
    y1: f64,
    x1: f64,
    half_width: f64,
}

impl Segment {
    fn dist(&self, y: f64, x: f64) -> f64 {
        let vy = self.y1 - self.y0;
        let vx = self.x1 - self.x0;
        let wy = y - self.y0;
        let wx = x - self.x0;
        let len2 = vy * vy + vx * vx;
        let t = if len2 > 0.0 {
            ((wy * vy + wx * vx) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dy = wy - t * vy;
        let dx = wx - t * vx;
        (dy * dy + dx * dx).sqrt() - self.half_width
    }
}

/// 0 at distance >= 0.5 px outside, 1 at <= -0.5 px inside, linear between.
fn coverage(dist: f64) -> f64 {
    (0.5 - dist).clamp(0.0, 1.0)
}

/// Render one sample deterministically from its seed and label.
pub fn synthesize_image(sample_seed: u64, label: u8, height: usize, width: usize) -> Tensor<f32> {
    let mut rng = ChaCha20Rng::seed_from_u64(sample_seed);
    let s = height.min(width) as f64 / 96.0;
    let cy = height as f64 / 2.0 + rng.random_range(-8.0..8.0) * s;
    let cx = width as f64 / 2.0 + rng.random_range(-8.0..8.0) * s;
    let phi = rng.random_range(0.0..std::f64::consts::PI);
    let a = rng.random_range(14.0..20.0) * s;
    let b = a * rng.random_range(0.55..0.8);
    let body = Ellipse {
        cy,
        cx,
        a,
        b,
        cos: phi.cos(),
        sin: phi.sin(),
    };
    let body_shade = rng.random_range(0.15..0.35);
    // brownish ink; same distribution for both classes
    let tint = [
        1.0,
        rng.random_range(0.78..0.9),
        rng.random_range(0.55..0.7),
    ];

    // legs radiate from the body edge; widths balance total ink across
    // classes (8 thin vs 6 thick)
    let leg_count = if label == 1 { 8 } else { 6 };
    let leg_half_width = if label == 1 { 1.15 } else { 1.55 } * s;
    let mut legs = Vec::with_capacity(leg_count);
    for k in 0..leg_count {
        let angle = phi
            + k as f64 * std::f64::consts::TAU / leg_count as f64
            + rng.random_range(-0.15..0.15);
        let start = body.radius_at(angle) * 0.75;
        let len = a * rng.random_range(1.15..1.5);
        let (sin, cos) = angle.sin_cos();
        legs.push(Segment {
            y0: cy + sin * start,
            x0: cx + cos * start,
            y1: cy + sin * (start + len),
            x1: cx + cos * (start + len),
            half_width: leg_half_width,
        });
    }
    let leg_shade = body_shade * 0.9;

    // dorsal blotch marks the negative class
    let blotch = (label == 0).then(|| {
        let shade = body_shade + rng.random_range(0.30..0.45);
        (
            Ellipse {
                cy,
                cx,
                a: a * 0.45,
                b: b * 0.45,
                cos: phi.cos(),
                sin: phi.sin(),
            },
            shade,
        )
    });

    let illumination = rng.random_range(0.92..1.0);
    let noise_sigma = 0.015;

    let plane = height * width;
    let mut out = Tensor::zeros(&[3, height, width]);
    let data = out.data_mut();
    for i in 0..height {
        for j in 0..width {
            let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
            // white ground, painter's order: legs, body, blotch
            let mut value = [1.0f64, 1.0, 1.0];
            let mut leg_alpha: f64 = 0.0;
            for leg in &legs {
                leg_alpha = leg_alpha.max(coverage(leg.dist(y, x)));
            }
            paint(&mut value, leg_alpha, leg_shade, &tint);
            paint(&mut value, coverage(body.dist(y, x)), body_shade, &tint);
            if let Some((blotch, shade)) = &blotch {
                paint(&mut value, coverage(blotch.dist(y, x)), *shade, &tint);
            }
            for (c, v) in value.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                let noisy = (v * illumination + z * noise_sigma).clamp(0.0, 1.0);
                // quantize to the 8-bit grid so PNG round trips are exact
                data[c * plane + i * width + j] = (noisy * 255.0).round() as f32 / 255.0;
            }
        }
    }
    out
}

fn paint(value: &mut [f64; 3], alpha: f64, shade: f64, tint: &[f64; 3]) {
    if alpha <= 0.0 {
        return;
    }
    for (v, t) in value.iter_mut().zip(tint) {
        let ink = (shade * t).min(1.0);
        *v = *v * (1.0 - alpha) + ink * alpha;
    }
}
