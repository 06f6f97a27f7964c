//! Train/test protocols and rotation/flip augmentation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FaceSample;
use crate::error::{KeplerError, Result};
use crate::model::{transform_annotation, AnnotatedFace, FaceBox, Point};

/// Rotation angles of the all-variants protocol, in degrees.
pub const VARIANT_ANGLES: [f64; 4] = [15.0, 30.0, 45.0, 60.0];

/// Absolute-yaw groups of the test set: [0, 30), [30, 60), [60, 90].
const YAW_EDGES: [f64; 2] = [30.0, 60.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSplit {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Yaw group (0, 1, 2) of each test index, or `None` for test records
    /// outside the equal-size groups.
    pub test_groups: Vec<Option<u8>>,
}

impl ProtocolSplit {
    /// Write `train.txt`, `test.txt` and `test_groups.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| KeplerError::io(dir, e))?;
        write_index_list(&dir.join("train.txt"), &self.train)?;
        write_index_list(&dir.join("test.txt"), &self.test)?;
        let mut s = String::from("index,group\n");
        for (i, g) in self.test.iter().zip(&self.test_groups) {
            match g {
                Some(g) => writeln!(s, "{i},{g}"),
                None => writeln!(s, "{i},"),
            }
            .expect("writing to a string");
        }
        let path = dir.join("test_groups.csv");
        fs::write(&path, s).map_err(|e| KeplerError::io(&path, e))
    }
}

fn yaw_group(yaw: f64) -> u8 {
    let a = yaw.abs();
    if a < YAW_EDGES[0] {
        0
    } else if a < YAW_EDGES[1] {
        1
    } else {
        2
    }
}

/// Seeded random split with `test_size` test records, three equally sized
/// absolute-yaw groups among them.
///
/// Each group takes `test_size / 3` records (fewer if a group has fewer
/// candidates, in which case all groups shrink to match). Remaining test
/// slots are filled from the rest of the shuffled records and carry no group.
pub fn split_pifa(records: &[AnnotatedFace], seed: u64, test_size: usize) -> Result<ProtocolSplit> {
    if test_size == 0 || records.len() <= test_size {
        return Err(KeplerError::TooFewRecords {
            needed: test_size + 1,
            got: records.len(),
        });
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut by_group: [Vec<usize>; 3] = Default::default();
    for &i in &order {
        by_group[yaw_group(records[i].pose.yaw) as usize].push(i);
    }
    let per_group = (test_size / 3).min(by_group.iter().map(Vec::len).min().unwrap());
    let mut in_test = vec![false; records.len()];
    let mut test = Vec::with_capacity(test_size);
    let mut test_groups = Vec::with_capacity(test_size);
    for (g, members) in by_group.iter().enumerate() {
        for &i in &members[..per_group] {
            in_test[i] = true;
            test.push(i);
            test_groups.push(Some(g as u8));
        }
    }
    for &i in &order {
        if test.len() == test_size {
            break;
        }
        if !in_test[i] {
            in_test[i] = true;
            test.push(i);
            test_groups.push(None);
        }
    }
    let train = order.iter().copied().filter(|&i| !in_test[i]).collect();
    Ok(ProtocolSplit {
        name: "pifa".into(),
        train,
        test,
        test_groups,
    })
}

/// Keep records whose box is taller than 150 pixels.
pub fn filter_afw(records: &[AnnotatedFace]) -> Vec<AnnotatedFace> {
    records.iter().filter(|r| r.face_box.h > 150.0).cloned().collect()
}

/// One augmented copy: optional mirror, rotation about the image centre,
/// then a crop around the new box enlarged by `margin` of its size on each
/// side. Coordinates are shifted into the crop.
pub fn make_variant(sample: &FaceSample, angle_deg: f64, flip: bool, margin: f64) -> Result<FaceSample> {
    let (w, h) = (sample.image.width, sample.image.height);
    let mut image = if flip { sample.image.flip_horizontal() } else { sample.image.clone() };
    if angle_deg != 0.0 {
        image = image.rotate(angle_deg);
    }
    let mut face = transform_annotation(&sample.face, w, h, angle_deg, flip)?;
    let b = face.face_box;
    let x0 = (b.x - margin * b.w).floor();
    let y0 = (b.y - margin * b.h).floor();
    let x1 = (b.x + b.w * (1.0 + margin)).ceil();
    let y1 = (b.y + b.h * (1.0 + margin)).ceil();
    let cw = (x1 - x0).max(1.0) as usize;
    let ch = (y1 - y0).max(1.0) as usize;
    let crop = image.crop(x0 as i64, y0 as i64, cw, ch);
    let shift = Point::new(x0, y0);
    face.shape = face.shape.map(|&p| if p.is_absent() { p } else { p - shift });
    face.face_box = FaceBox::new(b.x - x0, b.y - y0, b.w, b.h)?;
    let tag = format!("{}{}", if flip { "f" } else { "o" }, angle_deg);
    face.image_path = match face.image_path.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_{tag}.{ext}"),
        None => format!("{}_{tag}", face.image_path),
    };
    Ok(FaceSample { face, image: crop })
}

/// The all-variants protocol: every record rotated by each of
/// [`VARIANT_ANGLES`], unflipped and flipped (eight per record), plus the
/// unrotated pair when `include_originals` is set.
pub fn make_all_variants(samples: &[FaceSample], include_originals: bool, margin: f64) -> Result<Vec<FaceSample>> {
    let mut angles = Vec::new();
    if include_originals {
        angles.push(0.0);
    }
    angles.extend(VARIANT_ANGLES);
    let mut out = Vec::with_capacity(samples.len() * angles.len() * 2);
    for s in samples {
        for flip in [false, true] {
            for &a in &angles {
                out.push(make_variant(s, a, flip, margin)?);
            }
        }
    }
    Ok(out)
}

pub fn write_index_list(path: &Path, indices: &[usize]) -> Result<()> {
    let mut s = String::new();
    for i in indices {
        writeln!(s, "{i}").expect("writing to a string");
    }
    fs::write(path, s).map_err(|e| KeplerError::io(path, e))
}

pub fn read_index_list(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| KeplerError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            l.trim().parse().map_err(|e: std::num::ParseIntError| KeplerError::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
