//! Annotation files, evaluation protocols and the synthetic face generator.

mod annotations;
mod protocols;
mod synthetic;

pub use annotations::{load_annotations, parse_annotations, write_annotations, AnnotationRecord, LandmarkEntry};
pub use protocols::{
    filter_afw, make_all_variants, make_variant, read_index_list, split_pifa, write_index_list,
    ProtocolSplit, VARIANT_ANGLES,
};
pub use synthetic::{generate_face, generate_synthetic, SyntheticFaceSpec, TEMPLATE};

use std::path::Path;

use crate::error::Result;
use crate::image::Raster;
use crate::model::AnnotatedFace;

/// An annotation together with its decoded image.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceSample {
    pub face: AnnotatedFace,
    pub image: Raster,
}

/// Load an annotation file and the image of every record. Relative image
/// paths resolve against the annotation file's directory.
pub fn load_samples(annotations: &Path) -> Result<Vec<FaceSample>> {
    let faces = load_annotations(annotations)?;
    let base = annotations.parent().unwrap_or(Path::new("."));
    faces
        .into_iter()
        .map(|face| {
            let image = Raster::load(&base.join(&face.image_path))?;
            Ok(FaceSample { face, image })
        })
        .collect()
}
