//! RGB rasters in [0, 1], stored channel-major.

use std::path::Path;

use crate::error::{KeplerError, Result};
use crate::model::{rotate_point, Point};

/// Three-channel image. Pixel `(x, y)` of channel `c` lives at
/// `data[(c * height + y) * width + x]`; pixel centres sit on integer
/// coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[self.index(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        let i = self.index(c, x, y);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    /// Bilinear sample with zeros outside the raster.
    pub fn sample(&self, c: usize, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = (x - x0) as f32;
        let fy = (y - y0) as f32;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let px = |xi: i64, yi: i64| -> f32 {
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                0.0
            } else {
                self.get(c, xi as usize, yi as usize)
            }
        };
        let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1, y0) * fx;
        let bottom = px(x0, y0 + 1) * (1.0 - fx) + px(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize; pixel centres are aligned, so image coordinate `x`
    /// maps to `(x + 0.5) * width / self.width - 0.5`.
    pub fn resize(&self, width: usize, height: usize) -> Raster {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut out = Raster::new(width, height);
        for c in 0..3 {
            for y in 0..height {
                let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
                for x in 0..width {
                    let src_x =
                        ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                    out.set(c, x, y, self.sample(c, src_x, src_y));
                }
            }
        }
        out
    }

    /// Square crop of side `side` centred at `center`, resampled to
    /// `res` x `res`; regions outside the raster read as zero.
    pub fn crop_resampled(&self, center: Point, side: f64, res: usize) -> Raster {
        let step = side / res as f64;
        let x0 = center.x - side / 2.0;
        let y0 = center.y - side / 2.0;
        let mut out = Raster::new(res, res);
        for c in 0..3 {
            for j in 0..res {
                let y = y0 + (j as f64 + 0.5) * step;
                for i in 0..res {
                    let x = x0 + (i as f64 + 0.5) * step;
                    out.set(c, i, j, self.sample(c, x, y));
                }
            }
        }
        out
    }

    /// Integer-offset crop with zero padding.
    pub fn crop(&self, x0: i64, y0: i64, width: usize, height: usize) -> Raster {
        let mut out = Raster::new(width, height);
        for c in 0..3 {
            for y in 0..height {
                let sy = y0 + y as i64;
                if sy < 0 || sy >= self.height as i64 {
                    continue;
                }
                for x in 0..width {
                    let sx = x0 + x as i64;
                    if sx >= 0 && sx < self.width as i64 {
                        out.set(c, x, y, self.get(c, sx as usize, sy as usize));
                    }
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Raster {
        let mut out = Raster::new(self.width, self.height);
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, self.width - 1 - x, y, self.get(c, x, y));
                }
            }
        }
        out
    }

    /// Rotate content about the image centre by `angle_deg`
    /// (counter-clockwise as displayed), bilinear, zero fill.
    pub fn rotate(&self, angle_deg: f64) -> Raster {
        let center = Point::new(
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        );
        let mut out = Raster::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                // Destination pixel pulls from the inverse-rotated source.
                let src = rotate_point(Point::new(x as f64, y as f64), center, -angle_deg);
                for c in 0..3 {
                    out.set(c, x, y, self.sample(c, src.x, src.y));
                }
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let q = |c| (self.get(c, x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([q(0), q(1), q(2)])
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Raster {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Raster::new(w, h);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                out.set(c, x as usize, y as usize, px.0[c] as f32 / 255.0);
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Raster> {
        let img = image::open(path).map_err(|e| KeplerError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(Raster::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| KeplerError::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

/// Map a pixel coordinate between rasters of different sizes with aligned
/// pixel centres.
pub fn rescale_coord(v: f64, from: usize, to: usize) -> f64 {
    (v + 0.5) * to as f64 / from as f64 - 0.5
}
