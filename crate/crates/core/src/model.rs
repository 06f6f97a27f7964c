//! Shapes, visibility, pose and face boxes, plus the geometric helpers shared
//! by every stage of the cascade.

use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{KeplerError, Result};

/// Number of landmarks in the 21-point face layout.
pub const NUM_LANDMARKS: usize = 21;

/// Left/right landmark correspondence for horizontal flips.
///
/// Index layout: brows 0..=5 (outer-left to outer-right), eyes 6..=11
/// (outer-left, centre, inner-left, inner-right, centre, outer-right),
/// 12 left ear, 13..=15 nose left/tip/right, 16 right ear, 17..=19 mouth
/// left/centre/right, 20 chin.
pub const FLIP_SYMMETRY: [usize; NUM_LANDMARKS] = [
    5, 4, 3, 2, 1, 0, 11, 10, 9, 8, 7, 6, 16, 15, 14, 13, 12, 19, 18, 17, 20,
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    /// Marker for a ground-truth landmark whose coordinate was not annotated.
    pub const ABSENT: Point = Point {
        x: f64::NAN,
        y: f64::NAN,
    };

    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_absent(self) -> bool {
        self.x.is_nan() && self.y.is_nan()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Point {
    fn add_assign(&mut self, o: Point) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// Ordered set of the 21 landmark coordinates, in image pixels.
///
/// Coordinates are finite, except that ground-truth shapes may carry
/// [`Point::ABSENT`] for landmarks the annotator left out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Shape {
    points: Vec<Point>,
}

impl Shape {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(KeplerError::LandmarkCount {
                expected: NUM_LANDMARKS,
                actual: points.len(),
            });
        }
        if points.iter().any(|p| !(p.is_finite() || p.is_absent())) {
            return Err(KeplerError::NonFinite("shape"));
        }
        Ok(Shape { points })
    }

    pub fn from_fn(f: impl FnMut(usize) -> Point) -> Self {
        let points: Vec<Point> = (0..NUM_LANDMARKS).map(f).collect();
        Shape { points }
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn set(&mut self, i: usize, p: Point) {
        self.points[i] = p;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Point> {
        self.points.iter()
    }

    pub fn map(&self, f: impl FnMut(&Point) -> Point) -> Shape {
        Shape {
            points: self.points.iter().map(f).collect(),
        }
    }

    /// True when every coordinate is finite (no absent markers).
    pub fn is_complete(&self) -> bool {
        self.points.iter().all(|p| p.is_finite())
    }

    /// Shape translated by per-landmark offsets.
    pub fn shifted(&self, deltas: &[Point]) -> Shape {
        debug_assert_eq!(deltas.len(), NUM_LANDMARKS);
        Shape {
            points: self
                .points
                .iter()
                .zip(deltas)
                .map(|(&p, &d)| p + d)
                .collect(),
        }
    }
}

impl TryFrom<Vec<Point>> for Shape {
    type Error = KeplerError;
    fn try_from(points: Vec<Point>) -> Result<Self> {
        Shape::new(points)
    }
}

impl From<Shape> for Vec<Point> {
    fn from(s: Shape) -> Vec<Point> {
        s.points
    }
}

/// Per-landmark visibility. Ground truth is binary; predictions are
/// confidences and are clamped to [0, 1] before any gating decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct VisibilityVector {
    values: Vec<f64>,
}

impl VisibilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != NUM_LANDMARKS {
            return Err(KeplerError::LandmarkCount {
                expected: NUM_LANDMARKS,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KeplerError::NonFinite("visibility"));
        }
        Ok(VisibilityVector { values })
    }

    pub fn all_visible() -> Self {
        VisibilityVector {
            values: vec![1.0; NUM_LANDMARKS],
        }
    }

    pub fn none_visible() -> Self {
        VisibilityVector {
            values: vec![0.0; NUM_LANDMARKS],
        }
    }

    pub fn from_flags(flags: &[bool]) -> Result<Self> {
        Self::new(flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Ground-truth reading of entry `i`.
    pub fn is_visible(&self, i: usize) -> bool {
        self.values[i] >= 0.5
    }

    pub fn visible_count(&self) -> usize {
        (0..NUM_LANDMARKS).filter(|&i| self.is_visible(i)).count()
    }

    /// Prediction reading of entry `i`: the clamped confidence reaches `tau`.
    pub fn passes(&self, i: usize, tau: f64) -> bool {
        self.values[i].clamp(0.0, 1.0) >= tau
    }

    pub fn clamped(&self) -> VisibilityVector {
        VisibilityVector {
            values: self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for VisibilityVector {
    type Error = KeplerError;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        VisibilityVector::new(values)
    }
}

impl From<VisibilityVector> for Vec<f64> {
    fn from(v: VisibilityVector) -> Vec<f64> {
        v.values
    }
}

/// Head pose in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl Pose3D {
    pub const fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Pose3D { yaw, pitch, roll }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }
}

/// Axis-aligned face box: top-left corner plus extent, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl FaceBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(KeplerError::InvalidBox("non-finite coordinate".into()));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(KeplerError::InvalidBox(format!(
                "extent must be positive, got {w}x{h}"
            )));
        }
        Ok(FaceBox { x, y, w, h })
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.x, self.y),
            Point::new(self.x + self.w, self.y),
            Point::new(self.x + self.w, self.y + self.h),
            Point::new(self.x, self.y + self.h),
        ]
    }

    /// Smallest box enclosing `points`.
    pub fn enclosing(points: &[Point]) -> Result<Self> {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        FaceBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

impl TryFrom<[f64; 4]> for FaceBox {
    type Error = KeplerError;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        FaceBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<FaceBox> for [f64; 4] {
    fn from(b: FaceBox) -> [f64; 4] {
        [b.x, b.y, b.w, b.h]
    }
}

/// One annotated face: box, ground-truth landmarks with visibility, and pose.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedFace {
    pub image_path: String,
    pub face_box: FaceBox,
    pub shape: Shape,
    pub visibility: VisibilityVector,
    pub pose: Pose3D,
    pub split_tag: String,
}

/// Per-landmark average shape in the unit-box frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanShape {
    points: Vec<Point>,
}

impl MeanShape {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != NUM_LANDMARKS {
            return Err(KeplerError::LandmarkCount {
                expected: NUM_LANDMARKS,
                actual: points.len(),
            });
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(KeplerError::NonFinite("mean shape"));
        }
        Ok(MeanShape { points })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }
}

/// Average of box-normalised visible landmark positions over `train`.
pub fn compute_mean_shape(train: &[AnnotatedFace]) -> Result<MeanShape> {
    if train.is_empty() {
        return Err(KeplerError::EmptyTrainingSet);
    }
    let mut sums = [Point::ZERO; NUM_LANDMARKS];
    let mut counts = [0usize; NUM_LANDMARKS];
    for face in train {
        let unit = normalize(&face.shape, &face.face_box);
        for i in 0..NUM_LANDMARKS {
            if face.visibility.is_visible(i) {
                let p = unit.point(i);
                if p.is_absent() {
                    return Err(KeplerError::AbsentGroundTruth(i));
                }
                sums[i] += p;
                counts[i] += 1;
            }
        }
    }
    let points = (0..NUM_LANDMARKS)
        .map(|i| {
            if counts[i] == 0 {
                Err(KeplerError::LandmarkNeverVisible(i))
            } else {
                Ok(sums[i] * (1.0 / counts[i] as f64))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    MeanShape::new(points)
}

/// Map unit-box coordinates into pixel coordinates of `face_box`.
pub fn place_in_box(mean: &MeanShape, face_box: &FaceBox) -> Shape {
    Shape::from_fn(|i| {
        let p = mean.points[i];
        Point::new(p.x * face_box.w + face_box.x, p.y * face_box.h + face_box.y)
    })
}

/// Inverse of [`place_in_box`]: pixel coordinates to the unit-box frame.
pub fn normalize(shape: &Shape, face_box: &FaceBox) -> Shape {
    shape.map(|p| {
        if p.is_absent() {
            *p
        } else {
            Point::new((p.x - face_box.x) / face_box.w, (p.y - face_box.y) / face_box.h)
        }
    })
}

/// Face size used to normalise landmark errors: the geometric mean of the
/// box sides.
pub fn face_size(face_box: &FaceBox) -> f64 {
    (face_box.w * face_box.h).sqrt()
}

/// Rotate `p` about `center` by `angle_deg`, counter-clockwise as displayed
/// (y axis pointing down).
pub fn rotate_point(p: Point, center: Point, angle_deg: f64) -> Point {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let d = p - center;
    Point::new(center.x + d.x * c + d.y * s, center.y - d.x * s + d.y * c)
}

/// Rotate and optionally mirror an annotation inside a `width` x `height`
/// image.
///
/// The flip is applied first (x -> width - 1 - x, landmark indices swapped
/// through [`FLIP_SYMMETRY`], yaw and roll negated), then every coordinate is
/// rotated about the image centre. The new box is the axis-aligned hull of the
/// rotated box corners; roll grows by `angle_deg`.
pub fn transform_annotation(
    face: &AnnotatedFace,
    width: usize,
    height: usize,
    angle_deg: f64,
    flip: bool,
) -> Result<AnnotatedFace> {
    let (w, h) = (width as f64, height as f64);
    let mut shape = face.shape.clone();
    let mut vis = face.visibility.clone();
    let mut face_box = face.face_box;
    let mut pose = face.pose;

    if flip {
        let mirror = |p: Point| {
            if p.is_absent() {
                p
            } else {
                Point::new(w - 1.0 - p.x, p.y)
            }
        };
        shape = Shape::from_fn(|i| mirror(face.shape.point(FLIP_SYMMETRY[i])));
        vis = VisibilityVector::new(
            (0..NUM_LANDMARKS)
                .map(|i| face.visibility.get(FLIP_SYMMETRY[i]))
                .collect(),
        )?;
        face_box = FaceBox::new(w - 1.0 - face_box.x - face_box.w, face_box.y, face_box.w, face_box.h)?;
        pose.yaw = -pose.yaw;
        pose.roll = -pose.roll;
    }

    if angle_deg != 0.0 {
        let center = Point::new((w - 1.0) / 2.0, (h - 1.0) / 2.0);
        shape = shape.map(|&p| {
            if p.is_absent() {
                p
            } else {
                rotate_point(p, center, angle_deg)
            }
        });
        let corners = face_box.corners().map(|c| rotate_point(c, center, angle_deg));
        face_box = FaceBox::enclosing(&corners)?;
        pose.roll += angle_deg;
    }

    let outside = face_box.x + face_box.w < -0.5
        || face_box.y + face_box.h < -0.5
        || face_box.x > w - 0.5
        || face_box.y > h - 0.5;
    if outside {
        return Err(KeplerError::OutsideImage);
    }

    Ok(AnnotatedFace {
        image_path: face.image_path.clone(),
        face_box,
        shape,
        visibility: vis,
        pose,
        split_tag: face.split_tag.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn face_with(points: Vec<Point>, face_box: FaceBox) -> AnnotatedFace {
        AnnotatedFace {
            image_path: String::new(),
            face_box,
            shape: Shape::new(points).unwrap(),
            visibility: VisibilityVector::all_visible(),
            pose: Pose3D::new(10.0, -5.0, 3.0),
            split_tag: String::new(),
        }
    }

    fn random_face(rng: &mut ChaCha8Rng) -> AnnotatedFace {
        let b = FaceBox::new(
            rng.gen_range(0.0..50.0),
            rng.gen_range(0.0..50.0),
            rng.gen_range(20.0..80.0),
            rng.gen_range(20.0..80.0),
        )
        .unwrap();
        let pts = (0..NUM_LANDMARKS)
            .map(|_| {
                Point::new(
                    b.x + rng.gen_range(0.0..1.0) * b.w,
                    b.y + rng.gen_range(0.0..1.0) * b.h,
                )
            })
            .collect();
        let mut f = face_with(pts, b);
        let flags: Vec<bool> = (0..NUM_LANDMARKS).map(|_| rng.gen_bool(0.8)).collect();
        f.visibility = VisibilityVector::from_flags(&flags).unwrap();
        for i in 0..NUM_LANDMARKS {
            if !flags[i] {
                f.shape.set(i, Point::ABSENT);
            }
        }
        f
    }

    #[test]
    fn shape_rejects_wrong_length() {
        let err = Shape::new(vec![Point::ZERO; 20]).unwrap_err();
        assert!(matches!(err, KeplerError::LandmarkCount { actual: 20, .. }));
        assert!(Shape::new(vec![Point::new(f64::INFINITY, 0.0); 21]).is_err());
    }

    #[test]
    fn mean_of_single_face_is_its_normalised_shape() {
        let b = FaceBox::new(10.0, 20.0, 100.0, 50.0).unwrap();
        let corners = b.corners();
        let pts = (0..NUM_LANDMARKS).map(|i| corners[i % 4]).collect();
        let mean = compute_mean_shape(&[face_with(pts, b)]).unwrap();
        for (i, p) in mean.points().iter().enumerate() {
            let expect = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)][i % 4];
            assert_eq!((p.x, p.y), expect);
        }
    }

    #[test]
    fn mean_of_two_faces() {
        let b = FaceBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let a = face_with(vec![Point::new(2.0, 4.0); 21], b);
        let c = face_with(vec![Point::new(4.0, 6.0); 21], b);
        let mean = compute_mean_shape(&[a, c]).unwrap();
        assert!((mean.points()[3].x - 0.3).abs() < 1e-15);
        assert!((mean.points()[3].y - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mean_shape_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let faces: Vec<_> = (0..100).map(|_| random_face(&mut rng)).collect();
        let mean = compute_mean_shape(&faces).unwrap();
        for i in 0..NUM_LANDMARKS {
            let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
            for f in &faces {
                if f.visibility.get(i) == 1.0 {
                    let p = f.shape.point(i);
                    sx += (p.x - f.face_box.x) / f.face_box.w;
                    sy += (p.y - f.face_box.y) / f.face_box.h;
                    n += 1.0;
                }
            }
            let m = mean.points()[i];
            assert!((m.x - sx / n).abs() < 1e-12 && (m.y - sy / n).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&m.x) && (0.0..=1.0).contains(&m.y));
        }
    }

    #[test]
    fn mean_shape_errors() {
        assert!(matches!(compute_mean_shape(&[]), Err(KeplerError::EmptyTrainingSet)));
        let b = FaceBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let mut f = face_with(vec![Point::new(1.0, 1.0); 21], b);
        let mut flags = [true; 21];
        flags[7] = false;
        f.visibility = VisibilityVector::from_flags(&flags).unwrap();
        assert!(matches!(
            compute_mean_shape(&[f]),
            Err(KeplerError::LandmarkNeverVisible(7))
        ));
    }

    #[test]
    fn place_in_box_examples() {
        let mean = MeanShape::new(vec![Point::new(0.5, 0.5); 21]).unwrap();
        let unit = FaceBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(place_in_box(&mean, &unit).point(0), Point::new(0.5, 0.5));
        let b = FaceBox::new(10.0, 20.0, 100.0, 200.0).unwrap();
        assert_eq!(place_in_box(&mean, &b).point(0), Point::new(60.0, 120.0));
    }

    #[test]
    fn place_then_normalize_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let pts = (0..21)
                .map(|_| Point::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))
                .collect();
            let mean = MeanShape::new(pts).unwrap();
            let b = FaceBox::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(1.0..300.0),
                rng.gen_range(1.0..300.0),
            )
            .unwrap();
            let back = normalize(&place_in_box(&mean, &b), &b);
            for (p, q) in back.iter().zip(mean.points()) {
                assert!((p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn face_size_examples() {
        let fs = |w, h| face_size(&FaceBox::new(0.0, 0.0, w, h).unwrap());
        assert_eq!(fs(100.0, 100.0), 100.0);
        assert_eq!(fs(50.0, 200.0), 100.0);
        assert!((fs(3.0, 4.0) - 12f64.sqrt()).abs() < 1e-15);
        assert!((fs(3.0, 4.0) - 3.4641).abs() < 1e-4);
    }

    #[test]
    fn identity_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = random_face(&mut rng);
        let t = transform_annotation(&f, 200, 150, 0.0, false).unwrap();
        // NaN != NaN, so compare the absent markers separately.
        assert_eq!(t.face_box, f.face_box);
        assert_eq!(t.visibility, f.visibility);
        assert_eq!(t.pose, f.pose);
        for (a, b) in t.shape.iter().zip(f.shape.iter()) {
            assert!(a == b || (a.is_absent() && b.is_absent()));
        }
    }

    #[test]
    fn image_centre_is_a_rotation_fixed_point() {
        let b = FaceBox::new(40.0, 40.0, 20.0, 20.0).unwrap();
        let f = face_with(vec![Point::new(49.5, 29.5); 21], b);
        for angle in [15.0, -45.0, 60.0, 133.0] {
            let t = transform_annotation(&f, 100, 60, angle, false).unwrap();
            let p = t.shape.point(0);
            assert!((p.x - 49.5).abs() < 1e-12 && (p.y - 29.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_quarter_turns_equal_a_half_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut f = random_face(&mut rng);
        f.visibility = VisibilityVector::all_visible();
        f.shape = Shape::from_fn(|i| Point::new(30.0 + i as f64, 40.0 + 0.5 * i as f64));
        let twice = transform_annotation(
            &transform_annotation(&f, 120, 120, 90.0, false).unwrap(),
            120,
            120,
            90.0,
            false,
        )
        .unwrap();
        let once = transform_annotation(&f, 120, 120, 180.0, false).unwrap();
        // Direct oracle: a half turn maps (x, y) to (w-1-x, h-1-y).
        for i in 0..NUM_LANDMARKS {
            let (a, b, p) = (twice.shape.point(i), once.shape.point(i), f.shape.point(i));
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            assert!((b.x - (119.0 - p.x)).abs() < 1e-9 && (b.y - (119.0 - p.y)).abs() < 1e-9);
        }
    }

    #[test]
    fn double_flip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let f = random_face(&mut rng);
        let ff = transform_annotation(
            &transform_annotation(&f, 160, 160, 0.0, true).unwrap(),
            160,
            160,
            0.0,
            true,
        )
        .unwrap();
        assert_eq!(ff.visibility, f.visibility);
        for (a, b) in ff.shape.iter().zip(f.shape.iter()) {
            assert!((a.is_absent() && b.is_absent()) || (*a - *b).norm() < 1e-12);
        }
        assert!((ff.face_box.x - f.face_box.x).abs() < 1e-12);
    }

    #[test]
    fn flip_swaps_eyes_and_pose_signs() {
        let b = FaceBox::new(10.0, 10.0, 50.0, 50.0).unwrap();
        let f = face_with(
            (0..21).map(|i| Point::new(10.0 + i as f64, 20.0)).collect(),
            b,
        );
        let t = transform_annotation(&f, 100, 100, 0.0, true).unwrap();
        // Landmark 7 (one eye centre) now holds the mirror of landmark 10.
        assert_eq!(t.shape.point(7), Point::new(99.0 - 20.0, 20.0));
        assert_eq!(t.pose, Pose3D::new(-10.0, -5.0, -3.0));
        assert_eq!(t.face_box.x, 99.0 - 10.0 - 50.0);
    }

    #[test]
    fn face_rotated_off_canvas_is_rejected() {
        let b = FaceBox::new(0.0, 0.0, 4.0, 4.0).unwrap();
        let f = face_with(vec![Point::new(1.0, 1.0); 21], b);
        // A 200 px wide strip: a quarter turn pushes the corner box off-canvas.
        let err = transform_annotation(&f, 200, 10, 90.0, false).unwrap_err();
        assert!(matches!(err, KeplerError::OutsideImage));
    }
}
