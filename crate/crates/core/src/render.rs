//! Heatmap rendering: the image plus one Gaussian channel per landmark.

use serde::{Deserialize, Serialize};

use crate::error::{KeplerError, Result};
use crate::image::Raster;
use crate::model::{Shape, VisibilityVector, NUM_LANDMARKS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub sigma: f64,
    pub amplitude: f64,
    /// Landmarks whose clamped visibility falls below this get an empty
    /// channel.
    pub tau: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 224,
            height: 224,
            sigma: 5.0,
            amplitude: 1.0,
            tau: 0.03,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(KeplerError::InvalidConfig("render size must be positive".into()));
        }
        if !(self.sigma > 0.0) || !(self.amplitude > 0.0) {
            return Err(KeplerError::InvalidConfig(
                "render sigma and amplitude must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(KeplerError::InvalidConfig("tau must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Stacked network input: `channels` rasters of `height` x `width`,
/// channel-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedInput {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RenderedInput {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        RenderedInput {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Write `amplitude * exp(-d^2 / (2 sigma^2))` centred at `(cx, cy)` into
/// `out` (row-major, `width` x `height`). The kernel is evaluated as the
/// product of its two separable factors.
pub(crate) fn splat_gaussian(
    out: &mut [f32],
    width: usize,
    height: usize,
    cx: f64,
    cy: f64,
    sigma: f64,
    amplitude: f64,
) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let gx: Vec<f64> = (0..width)
        .map(|u| (-(u as f64 - cx).powi(2) * inv).exp())
        .collect();
    for v in 0..height {
        let gy = amplitude * (-(v as f64 - cy).powi(2) * inv).exp();
        let row = &mut out[v * width..(v + 1) * width];
        for (o, g) in row.iter_mut().zip(&gx) {
            *o = (gy * g) as f32;
        }
    }
}

/// Build the `3 + N` channel input from an image already at the configured
/// resolution and a shape in the same pixel frame.
pub fn render(
    image: &Raster,
    shape: &Shape,
    visibility: &VisibilityVector,
    cfg: &RenderConfig,
) -> Result<RenderedInput> {
    if image.width != cfg.width || image.height != cfg.height {
        return Err(KeplerError::DimensionMismatch {
            expected_w: cfg.width,
            expected_h: cfg.height,
            actual_w: image.width,
            actual_h: image.height,
        });
    }
    let mut out = RenderedInput::zeros(3 + NUM_LANDMARKS, cfg.height, cfg.width);
    let plane = cfg.width * cfg.height;
    for c in 0..3 {
        out.data[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(image.channel(c))
            .for_each(|(o, &v)| *o = v.clamp(0.0, 1.0));
    }
    for i in 0..NUM_LANDMARKS {
        if !visibility.passes(i, cfg.tau) {
            continue;
        }
        let p = shape.point(i);
        if !p.is_finite() {
            return Err(KeplerError::NonFinite("rendered landmark coordinate"));
        }
        splat_gaussian(
            out.channel_mut(3 + i),
            cfg.width,
            cfg.height,
            p.x,
            p.y,
            cfg.sigma,
            cfg.amplitude,
        );
    }
    Ok(out)
}
