//! Line-delimited JSON annotation files.
//!
//! One record per line:
//!
//! ```text
//! {"image_path": "img/0001.png", "box": [x, y, w, h],
//!  "landmarks": [{"index": 0, "x": 12.5, "y": 40.0, "visible": true}, ...],
//!  "pose": {"yaw": 0.0, "pitch": 0.0, "roll": 0.0}, "split": "train"}
//! ```
//!
//! Exactly 21 landmark entries, each index once. Invisible entries may omit
//! `x` and `y`; visible ones must carry both. `split` is optional.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KeplerError, Result};
use crate::model::{AnnotatedFace, FaceBox, Point, Pose3D, Shape, VisibilityVector, NUM_LANDMARKS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkEntry {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    pub visible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_path: String,
    #[serde(rename = "box")]
    pub face_box: [f64; 4],
    pub landmarks: Vec<LandmarkEntry>,
    pub pose: Pose3D,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub split: String,
}

impl AnnotationRecord {
    pub fn from_face(face: &AnnotatedFace) -> Self {
        let b = face.face_box;
        AnnotationRecord {
            image_path: face.image_path.clone(),
            face_box: [b.x, b.y, b.w, b.h],
            landmarks: (0..NUM_LANDMARKS)
                .map(|i| {
                    let p = face.shape.point(i);
                    let (x, y) = if p.is_absent() { (None, None) } else { (Some(p.x), Some(p.y)) };
                    LandmarkEntry {
                        index: i,
                        x,
                        y,
                        visible: face.visibility.is_visible(i),
                    }
                })
                .collect(),
            pose: face.pose,
            split: face.split_tag.clone(),
        }
    }

    pub fn into_face(self) -> std::result::Result<AnnotatedFace, String> {
        if self.landmarks.len() != NUM_LANDMARKS {
            return Err(format!(
                "expected {NUM_LANDMARKS} landmarks, found {}",
                self.landmarks.len()
            ));
        }
        let mut points = vec![None; NUM_LANDMARKS];
        let mut flags = [false; NUM_LANDMARKS];
        for e in &self.landmarks {
            if e.index >= NUM_LANDMARKS {
                return Err(format!("landmark index {} out of range", e.index));
            }
            if points[e.index].is_some() {
                return Err(format!("landmark index {} appears twice", e.index));
            }
            let p = match (e.x, e.y) {
                (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Point::new(x, y),
                (None, None) if !e.visible => Point::ABSENT,
                (None, None) => return Err(format!("visible landmark {} has no coordinates", e.index)),
                _ => return Err(format!("landmark {} has an incomplete or non-finite coordinate", e.index)),
            };
            points[e.index] = Some(p);
            flags[e.index] = e.visible;
        }
        let [x, y, w, h] = self.face_box;
        let face_box = FaceBox::new(x, y, w, h).map_err(|e| e.to_string())?;
        let p = self.pose;
        if !(p.yaw.is_finite() && p.pitch.is_finite() && p.roll.is_finite()) {
            return Err("pose must be finite".into());
        }
        Ok(AnnotatedFace {
            image_path: self.image_path,
            face_box,
            shape: Shape::new(points.into_iter().map(Option::unwrap).collect()).map_err(|e| e.to_string())?,
            visibility: VisibilityVector::from_flags(&flags).map_err(|e| e.to_string())?,
            pose: self.pose,
            split_tag: self.split,
        })
    }
}

/// Parse annotation text; `origin` names the source in diagnostics.
pub fn parse_annotations(text: &str, origin: &str) -> Result<Vec<AnnotatedFace>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| KeplerError::Parse {
            path: origin.into(),
            line: k + 1,
            message,
        };
        let record: AnnotationRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        out.push(record.into_face().map_err(err)?);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotatedFace>> {
    let text = fs::read_to_string(path).map_err(|e| KeplerError::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

pub fn write_annotations(path: &Path, faces: &[AnnotatedFace]) -> Result<()> {
    let mut buf = Vec::new();
    for f in faces {
        serde_json::to_writer(&mut buf, &AnnotationRecord::from_face(f))
            .map_err(|e| KeplerError::Format(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| KeplerError::io(path, e))?;
    file.write_all(&buf).map_err(|e| KeplerError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_face(rng: &mut ChaCha8Rng, i: usize) -> AnnotatedFace {
        let flags: Vec<bool> = (0..NUM_LANDMARKS).map(|_| rng.gen_bool(0.8)).collect();
        AnnotatedFace {
            image_path: format!("img/{i:04}.png"),
            face_box: FaceBox::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0), rng.gen_range(10.0..90.0), 40.0).unwrap(),
            shape: Shape::from_fn(|k| {
                if flags[k] {
                    Point::new(rng.gen_range(-5.0..200.0), rng.gen::<f64>() * 1e3)
                } else {
                    Point::ABSENT
                }
            }),
            visibility: VisibilityVector::from_flags(&flags).unwrap(),
            pose: crate::model::Pose3D::new(rng.gen_range(-90.0..90.0), rng.gen_range(-30.0..30.0), 1.0 / 3.0),
            split_tag: if i % 2 == 0 { "train".into() } else { String::new() },
        }
    }

    #[test]
    fn empty_file_gives_no_records() {
        assert!(parse_annotations("", "x").unwrap().is_empty());
        assert!(parse_annotations("\n  \n", "x").unwrap().is_empty());
    }

    #[test]
    fn round_trip_of_random_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let faces: Vec<_> = (0..100).map(|i| random_face(&mut rng, i)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        write_annotations(&path, &faces).unwrap();
        let back = load_annotations(&path).unwrap();
        assert_eq!(back.len(), faces.len());
        for (a, b) in faces.iter().zip(&back) {
            assert_eq!(a.image_path, b.image_path);
            assert_eq!(a.face_box, b.face_box);
            assert_eq!(a.visibility, b.visibility);
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.split_tag, b.split_tag);
            for (p, q) in a.shape.iter().zip(b.shape.iter()) {
                assert!((p.is_absent() && q.is_absent()) || p == q);
            }
        }
    }

    #[test]
    fn short_record_names_its_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rec = AnnotationRecord::from_face(&random_face(&mut rng, 0));
        let good = serde_json::to_string(&rec).unwrap();
        rec.landmarks.pop();
        let bad = serde_json::to_string(&rec).unwrap();
        let text = format!("{good}\n{bad}\n");
        match parse_annotations(&text, "f.jsonl") {
            Err(KeplerError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("20"), "{message}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn visible_point_needs_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut rec = AnnotationRecord::from_face(&random_face(&mut rng, 0));
        rec.landmarks[4] = LandmarkEntry {
            index: 4,
            x: None,
            y: None,
            visible: true,
        };
        let text = serde_json::to_string(&rec).unwrap();
        assert!(matches!(parse_annotations(&text, "f"), Err(KeplerError::Parse { line: 1, .. })));
    }
}
