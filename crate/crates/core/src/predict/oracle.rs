use std::collections::HashMap;

use super::{check_patch, CountPredictor, Prediction};
use crate::error::{Error, Result};
use crate::geometry::Patch;
use crate::labeling::{patch_count, AnnotatedImage, DatasetProfile, HeadAnnotation};

/// Answers from ground truth: the count is the number of heads inside the
/// patch's source rectangle and the class follows from the profile.
///
/// Only patches whose image id was registered can be scored.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    profile: DatasetProfile,
    heads: HashMap<String, Vec<HeadAnnotation>>,
}

impl OraclePredictor {
    pub fn new(profile: DatasetProfile) -> Self {
        Self {
            profile,
            heads: HashMap::new(),
        }
    }

    pub fn with_images<'a>(
        profile: DatasetProfile,
        images: impl IntoIterator<Item = &'a AnnotatedImage>,
    ) -> Self {
        let mut o = Self::new(profile);
        for img in images {
            o.register(&img.id, img.heads.clone());
        }
        o
    }

    pub fn register(&mut self, image_id: &str, heads: Vec<HeadAnnotation>) {
        self.heads.insert(image_id.to_owned(), heads);
    }

    pub fn profile(&self) -> &DatasetProfile {
        &self.profile
    }
}

impl CountPredictor for OraclePredictor {
    fn predict(&self, patch: &Patch) -> Result<Prediction> {
        check_patch(patch)?;
        let heads = self.heads.get(patch.image_id()).ok_or_else(|| {
            Error::Predictor(format!(
                "oracle has no ground truth for image `{}`",
                patch.image_id()
            ))
        })?;
        let count = patch_count(heads, patch.source());
        Ok(Prediction::one_hot(
            self.profile.class_of(count),
            count as f64,
        ))
    }

    fn describe(&self) -> String {
        format!("oracle(c_max={})", self.profile.c_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{tile_with_id, upscale_split, PixelGrid};
    use crate::prm::DensityClass;

    #[test]
    fn counts_follow_provenance() {
        let img = PixelGrid::filled(224, 448, 1, 0.5);
        let heads = vec![
            HeadAnnotation::new(10.0, 10.0),
            HeadAnnotation::new(150.0, 150.0),
            HeadAnnotation::new(300.0, 20.0),
        ];
        let mut o = OraclePredictor::new(DatasetProfile::new(40, "train").unwrap());
        o.register("a", heads);
        let tiles = tile_with_id("a", &img).unwrap();
        let p0 = o.predict(&tiles[0]).unwrap();
        assert_eq!(p0.count, 2.0);
        assert_eq!(p0.class(), DensityClass::LowCrowd);
        let quads = upscale_split(&tiles[0]);
        let sum: f64 = quads.iter().map(|q| o.predict(q).unwrap().count).sum();
        assert_eq!(sum, 2.0);
        assert_eq!(o.predict(&tiles[1]).unwrap().count, 1.0);

        let stranger = tiles[0].clone().with_image_id("b");
        assert!(matches!(o.predict(&stranger), Err(Error::Predictor(_))));
    }
}
