//! Training-time image augmentation: random rotation over the full circle,
//! horizontal/vertical flips, and 0.5-2x zoom about the image center, with
//! bilinear resampling and white fill for out-of-frame regions (the source
//! photographs place ticks on white paper).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which transforms are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub rotate: bool,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub zoom: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            flip_horizontal: true,
            flip_vertical: true,
            zoom: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            rotate: false,
            flip_horizontal: false,
            flip_vertical: false,
            zoom: false,
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.rotate || self.flip_horizontal || self.flip_vertical || self.zoom
    }
}

/// Concrete transform parameters for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Rotation angle in radians.
    pub angle: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Zoom factor about the image center.
    pub zoom: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            angle: 0.0,
            flip_horizontal: false,
            flip_vertical: false,
            zoom: 1.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle == 0.0 && !self.flip_horizontal && !self.flip_vertical && self.zoom == 1.0
    }
}

/// Draw transform parameters: angle uniform over [0, 360) degrees, each
/// flip with probability one half, zoom uniform over [0.5, 2.0].
pub fn sample_params<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> AugmentParams {
    let mut p = AugmentParams::identity();
    if cfg.rotate {
        p.angle = rng.random_range(0.0..std::f64::consts::TAU);
    }
    if cfg.flip_horizontal {
        p.flip_horizontal = rng.random::<f64>() < 0.5;
    }
    if cfg.flip_vertical {
        p.flip_vertical = rng.random::<f64>() < 0.5;
    }
    if cfg.zoom {
        p.zoom = rng.random_range(0.5..2.0);
    }
    p
}

/// Sample parameters from `rng` and apply them.
pub fn augment<R: Rng>(image: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor<f32>> {
    let params = sample_params(cfg, rng);
    augment_with(image, &params)
}

/// Apply a fixed transform. The output has the input's shape and stays in
/// [0, 1]; exact identity parameters return the input unchanged.
pub fn augment_with(image: &Tensor<f32>, params: &AugmentParams) -> Result<Tensor<f32>> {
    let [c, h, w] = match image.shape() {
        [c, h, w] => [*c, *h, *w],
        other => {
            return Err(Error::Shape {
                op: "augment",
                detail: format!("expected C x H x W image, got {other:?}"),
            })
        }
    };
    if params.zoom <= 0.0 || !params.zoom.is_finite() || !params.angle.is_finite() {
        return Err(Error::Config(format!("invalid augment params {params:?}")));
    }
    if params.is_identity() {
        return Ok(image.clone());
    }
    let cy = h as f64 / 2.0;
    let cx = w as f64 / 2.0;
    // Inverse mapping: undo zoom, undo rotation, undo flips, all about the
    // center. Out-of-frame taps read as white.
    let (sin, cos) = params.angle.sin_cos();
    let inv_zoom = 1.0 / params.zoom;
    let plane = h * w;
    let mut out = Tensor::zeros(image.shape());
    {
        let od = out.data_mut();
        for i in 0..h {
            let dy = (i as f64 + 0.5 - cy) * inv_zoom;
            for j in 0..w {
                let dx = (j as f64 + 0.5 - cx) * inv_zoom;
                // rotate by -angle
                let mut sy = dy * cos - dx * sin;
                let mut sx = dx * cos + dy * sin;
                if params.flip_vertical {
                    sy = -sy;
                }
                if params.flip_horizontal {
                    sx = -sx;
                }
                let fy = sy + cy - 0.5;
                let fx = sx + cx - 0.5;
                for ch in 0..c {
                    let src = &image.data()[ch * plane..(ch + 1) * plane];
                    od[ch * plane + i * w + j] = bilinear_white(src, h, w, fy, fx);
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear sample with white (1.0) outside the frame.
fn bilinear_white(src: &[f32], h: usize, w: usize, fy: f64, fx: f64) -> f32 {
    let y0 = fy.floor();
    let x0 = fx.floor();
    let wy = (fy - y0) as f32;
    let wx = (fx - x0) as f32;
    let tap = |y: f64, x: f64| -> f32 {
        if y < 0.0 || x < 0.0 || y >= h as f64 || x >= w as f64 {
            1.0
        } else {
            src[y as usize * w + x as usize]
        }
    };
    let v00 = tap(y0, x0);
    let v01 = tap(y0, x0 + 1.0);
    let v10 = tap(y0 + 1.0, x0);
    let v11 = tap(y0 + 1.0, x0 + 1.0);
    let top = v00 * (1.0 - wx) + v01 * wx;
    let bot = v10 * (1.0 - wx) + v11 * wx;
    (top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0)
}
