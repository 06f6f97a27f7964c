//! Synthetic faces: a 3D landmark template posed, projected and painted as
//! coloured blobs on a shaded head, with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FaceSample;
use crate::image::Raster;
use crate::model::{
    rotate_point, AnnotatedFace, FaceBox, Point, Pose3D, Shape, VisibilityVector, NUM_LANDMARKS,
};

/// Template landmarks in head coordinates (x right, y down, z towards the
/// camera), with outward surface normals. Index order: brows (0-5), eyes
/// (6-11), left ear, nose (13-15), right ear, mouth (17-19), chin.
pub const TEMPLATE: [([f64; 3], [f64; 3]); NUM_LANDMARKS] = [
    ([-0.75, -0.55, 0.45], [-0.6, -0.2, 0.77]),
    ([-0.45, -0.62, 0.62], [-0.35, -0.25, 0.9]),
    ([-0.15, -0.58, 0.72], [-0.1, -0.25, 0.96]),
    ([0.15, -0.58, 0.72], [0.1, -0.25, 0.96]),
    ([0.45, -0.62, 0.62], [0.35, -0.25, 0.9]),
    ([0.75, -0.55, 0.45], [0.6, -0.2, 0.77]),
    ([-0.62, -0.3, 0.5], [-0.5, -0.1, 0.86]),
    ([-0.44, -0.3, 0.58], [-0.3, -0.1, 0.95]),
    ([-0.26, -0.3, 0.6], [-0.15, -0.1, 0.98]),
    ([0.26, -0.3, 0.6], [0.15, -0.1, 0.98]),
    ([0.44, -0.3, 0.58], [0.3, -0.1, 0.95]),
    ([0.62, -0.3, 0.5], [0.5, -0.1, 0.86]),
    ([-0.98, -0.05, -0.05], [-0.95, 0.0, 0.3]),
    ([-0.17, 0.22, 0.82], [-0.5, 0.2, 0.84]),
    ([0.0, 0.16, 1.02], [0.0, 0.1, 0.99]),
    ([0.17, 0.22, 0.82], [0.5, 0.2, 0.84]),
    ([0.98, -0.05, -0.05], [0.95, 0.0, 0.3]),
    ([-0.38, 0.55, 0.6], [-0.45, 0.1, 0.89]),
    ([0.0, 0.55, 0.74], [0.0, 0.15, 0.99]),
    ([0.38, 0.55, 0.6], [0.45, 0.1, 0.89]),
    ([0.0, 0.95, 0.55], [0.0, 0.5, 0.87]),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticFaceSpec {
    pub image_size: usize,
    /// Symmetric ranges in degrees.
    pub yaw_range: f64,
    pub pitch_range: f64,
    pub roll_range: f64,
    /// Head half-width as a fraction of the image side.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Head centre offset from the image centre, as a fraction of the side.
    pub center_jitter: f64,
    /// Relative perturbation of the face box position and size.
    pub box_jitter: f64,
    /// Blob radius as a fraction of the head half-width.
    pub blob_sigma: f64,
    pub texture_seed: u64,
}

impl Default for SyntheticFaceSpec {
    fn default() -> Self {
        SyntheticFaceSpec {
            image_size: 96,
            yaw_range: 60.0,
            pitch_range: 25.0,
            roll_range: 30.0,
            scale_min: 0.27,
            scale_max: 0.33,
            center_jitter: 0.04,
            box_jitter: 0.06,
            blob_sigma: 0.055,
            texture_seed: 0,
        }
    }
}

/// Landmark colours, spread around the hue circle.
fn palette(i: usize) -> [f32; 3] {
    let h = (i as f32 * 8.0 % NUM_LANDMARKS as f32) / NUM_LANDMARKS as f32 * 6.0;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b]
}

fn rotate3(p: [f64; 3], pose: &Pose3D) -> [f64; 3] {
    let (sy, cy) = pose.yaw.to_radians().sin_cos();
    let (sp, cp) = pose.pitch.to_radians().sin_cos();
    // Yaw about the vertical axis, then pitch about the horizontal axis.
    let x1 = cy * p[0] + sy * p[2];
    let z1 = -sy * p[0] + cy * p[2];
    let y2 = cp * p[1] - sp * z1;
    let z2 = sp * p[1] + cp * z1;
    [x1, y2, z2]
}

/// Projected template points and their visibility for `pose`, with the head
/// centred at `center` and half-width `scale` pixels. Roll is an in-plane
/// rotation, counter-clockwise as displayed for positive angles.
pub fn project(pose: &Pose3D, center: Point, scale: f64) -> (Shape, VisibilityVector, Vec<f64>) {
    let mut depth = Vec::with_capacity(NUM_LANDMARKS);
    let mut flags = [false; NUM_LANDMARKS];
    let shape = Shape::from_fn(|i| {
        let (p, n) = TEMPLATE[i];
        let q = rotate3(p, pose);
        // Facing away from the camera hides the point.
        flags[i] = rotate3(n, pose)[2] >= 0.0;
        depth.push(q[2]);
        let flat = Point::new(center.x + scale * q[0], center.y + scale * q[1]);
        rotate_point(flat, center, pose.roll)
    });
    (shape, VisibilityVector::from_flags(&flags).expect("21 flags"), depth)
}

/// Face `index` of the synthetic set; independent of every other index.
pub fn generate_face(index: usize, spec: &SyntheticFaceSpec, seed: u64) -> FaceSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
    let side = spec.image_size as f64;
    let pose = Pose3D::new(
        rng.gen_range(-spec.yaw_range..=spec.yaw_range),
        rng.gen_range(-spec.pitch_range..=spec.pitch_range),
        rng.gen_range(-spec.roll_range..=spec.roll_range),
    );
    let scale = side * rng.gen_range(spec.scale_min..=spec.scale_max);
    let mid = (side - 1.0) / 2.0;
    let center = Point::new(
        mid + side * rng.gen_range(-spec.center_jitter..=spec.center_jitter),
        mid + side * rng.gen_range(-spec.center_jitter..=spec.center_jitter),
    );
    let (shape, visibility, depth) = project(&pose, center, scale);

    let j = spec.box_jitter;
    let box_side = 2.1 * scale * (1.0 + rng.gen_range(-j..=j));
    let box_center = Point::new(
        center.x + box_side * rng.gen_range(-j..=j),
        center.y + 0.15 * scale + box_side * rng.gen_range(-j..=j),
    );
    let face_box = FaceBox::new(
        box_center.x - box_side / 2.0,
        box_center.y - box_side / 2.0,
        box_side,
        box_side,
    )
    .expect("positive box");

    let image = paint(spec, &mut rng, &pose, center, scale, &shape, &visibility, &depth);
    let shape = Shape::from_fn(|i| if visibility.is_visible(i) { shape.point(i) } else { Point::ABSENT });
    FaceSample {
        face: AnnotatedFace {
            image_path: format!("images/{index:06}.png"),
            face_box,
            shape,
            visibility,
            pose,
            split_tag: String::new(),
        },
        image,
    }
}

#[allow(clippy::too_many_arguments)]
fn paint(
    spec: &SyntheticFaceSpec,
    rng: &mut ChaCha8Rng,
    pose: &Pose3D,
    center: Point,
    scale: f64,
    shape: &Shape,
    visibility: &VisibilityVector,
    depth: &[f64],
) -> Raster {
    let n = spec.image_size;
    let mut tex = ChaCha8Rng::seed_from_u64(spec.texture_seed ^ rng.gen::<u64>());
    let bg0: [f32; 3] = [tex.gen_range(0.05..0.35), tex.gen_range(0.05..0.35), tex.gen_range(0.05..0.35)];
    let bg1: [f32; 3] = [tex.gen_range(0.05..0.35), tex.gen_range(0.05..0.35), tex.gen_range(0.05..0.35)];
    let skin: [f32; 3] = [tex.gen_range(0.55..0.8), tex.gen_range(0.4..0.6), tex.gen_range(0.3..0.5)];
    let mut img = Raster::new(n, n);
    // The head outline turns with yaw and roll.
    let (sy, cy) = pose.yaw.to_radians().sin_cos();
    let head_center = Point::new(center.x + 0.25 * scale * sy, center.y + 0.1 * scale);
    let (rx, ry) = (scale * (0.8 + 0.15 * cy.abs()), scale * 1.25);
    let (sr, cr) = pose.roll.to_radians().sin_cos();
    for y in 0..n {
        for x in 0..n {
            let t = (x + y) as f32 / (2 * n) as f32;
            let d = Point::new(x as f64, y as f64) - head_center;
            // Undo the in-plane roll to test against the upright ellipse.
            let u = d.x * cr - d.y * sr;
            let v = d.x * sr + d.y * cr;
            let r2 = (u / rx).powi(2) + (v / ry).powi(2);
            for c in 0..3 {
                let mut val = bg0[c] * (1.0 - t) + bg1[c] * t;
                if r2 <= 1.0 {
                    let shade = 1.0 - 0.35 * r2 as f32;
                    val = skin[c] * shade;
                }
                img.set(c, x, y, val);
            }
        }
    }
    let sigma = (spec.blob_sigma * scale).max(1.0);
    let reach = (3.0 * sigma).ceil() as i64;
    let mut order: Vec<usize> = (0..NUM_LANDMARKS).filter(|&i| visibility.is_visible(i)).collect();
    // Farther points first so nearer blobs paint over them.
    order.sort_by(|&a, &b| depth[a].total_cmp(&depth[b]));
    for i in order {
        let p = shape.point(i);
        let col = palette(i);
        let (px, py) = (p.x.round() as i64, p.y.round() as i64);
        for y in (py - reach).max(0)..=(py + reach).min(n as i64 - 1) {
            for x in (px - reach).max(0)..=(px + reach).min(n as i64 - 1) {
                let d2 = (x as f64 - p.x).powi(2) + (y as f64 - p.y).powi(2);
                let a = (-d2 / (2.0 * sigma * sigma)).exp() as f32;
                for c in 0..3 {
                    let old = img.get(c, x as usize, y as usize);
                    img.set(c, x as usize, y as usize, old * (1.0 - a) + col[c] * a);
                }
            }
        }
    }
    img
}

/// `count` faces generated in parallel; the result depends only on the
/// arguments.
pub fn generate_synthetic(count: usize, spec: &SyntheticFaceSpec, seed: u64) -> Vec<FaceSample> {
    (0..count).into_par_iter().map(|i| generate_face(i, spec, seed)).collect()
}
