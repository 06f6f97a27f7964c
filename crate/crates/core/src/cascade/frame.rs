//! Coordinate frames between image pixels and the fixed-size rasters the
//! networks consume.

use crate::image::Raster;
use crate::learning::CorrectionVector;
use crate::model::{FaceBox, Point, Shape};

/// A square image window resampled to `res` x `res` pixels. Output pixel
/// `i` samples image coordinate `origin + (i + 0.5) * step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub origin: Point,
    pub step: f64,
    pub res: usize,
}

impl Frame {
    /// Window of side `side` centred on `center`.
    pub fn centered(center: Point, side: f64, res: usize) -> Self {
        Frame {
            origin: Point::new(center.x - side / 2.0, center.y - side / 2.0),
            step: side / res as f64,
            res,
        }
    }

    /// Window around a face box, `context` times its longer side.
    pub fn for_box(face_box: &FaceBox, context: f64, res: usize) -> Self {
        Frame::centered(face_box.center(), context * face_box.w.max(face_box.h), res)
    }

    pub fn side(&self) -> f64 {
        self.step * self.res as f64
    }

    pub fn center(&self) -> Point {
        let half = self.side() / 2.0;
        Point::new(self.origin.x + half, self.origin.y + half)
    }

    pub fn to_frame(&self, p: Point) -> Point {
        if p.is_absent() {
            return p;
        }
        Point::new(
            (p.x - self.origin.x) / self.step - 0.5,
            (p.y - self.origin.y) / self.step - 0.5,
        )
    }

    pub fn to_image(&self, q: Point) -> Point {
        if q.is_absent() {
            return q;
        }
        Point::new(
            self.origin.x + (q.x + 0.5) * self.step,
            self.origin.y + (q.y + 0.5) * self.step,
        )
    }

    pub fn shape_to_frame(&self, s: &Shape) -> Shape {
        s.map(|&p| self.to_frame(p))
    }

    /// Frame-pixel corrections to image pixels.
    pub fn corrections_to_image(&self, c: &CorrectionVector) -> CorrectionVector {
        c.scaled(self.step, self.step)
    }

    pub fn corrections_to_frame(&self, c: &CorrectionVector) -> CorrectionVector {
        c.scaled(1.0 / self.step, 1.0 / self.step)
    }

    pub fn extract(&self, image: &Raster) -> Raster {
        image.crop_resampled(self.center(), self.side(), self.res)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_sampling_agree() {
        let f = Frame::for_box(&FaceBox::new(10.0, 20.0, 40.0, 30.0).unwrap(), 1.5, 64);
        let p = Point::new(31.7, 28.2);
        let q = f.to_image(f.to_frame(p));
        assert!((q - p).norm() < 1e-12);
        // A bright pixel in the image appears at its mapped frame position.
        let mut img = Raster::new(80, 80);
        img.set(0, 30, 35, 1.0);
        let crop = f.extract(&img);
        let m = f.to_frame(Point::new(30.0, 35.0));
        let (mx, my) = (m.x.round() as usize, m.y.round() as usize);
        assert!(crop.get(0, mx, my) > 0.0);
        assert!((f.side() - 60.0).abs() < 1e-12);
    }
}
