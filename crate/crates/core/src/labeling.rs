//! Ground truth from head annotations: per-region counts, the four-way density
//! label, the dataset-wide `c_max`, and balanced training-set sampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    area_content_extent, bilinear_content_extent, resize, PadMask, Patch, PixelGrid, Rect, Scale,
    PATCH_SIZE,
};
use crate::prm::DensityClass;

/// Stride of the sliding window used to search for `c_max`.
pub const CMAX_STRIDE: usize = 16;

/// Crop sizes drawn when building a training set.
pub const TRAINING_CROP_SIZES: [usize; 3] = [112, 224, 448];

/// Patches per class in a full-size training set (4 x 22,500 = 90,000).
pub const PAPER_PATCHES_PER_CLASS: usize = 22_500;

/// Head centre in image pixels, origin top-left, x rightward, y downward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadAnnotation {
    pub x: f64,
    pub y: f64,
}

impl HeadAnnotation {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub image: PixelGrid,
    pub heads: Vec<HeadAnnotation>,
}

impl AnnotatedImage {
    /// Builds an annotated image, clamping out-of-bounds heads onto the image.
    /// Returns the image and the number of heads that had to be clamped.
    pub fn new(
        id: impl Into<String>,
        image: PixelGrid,
        heads: Vec<HeadAnnotation>,
    ) -> Result<(Self, usize)> {
        let id = id.into();
        if image.is_empty() {
            return Err(Error::InvalidInput(format!("image `{id}` is empty")));
        }
        let (w, h) = (image.width() as f64, image.height() as f64);
        let mut clamped = 0;
        let heads = heads
            .into_iter()
            .map(|hd| {
                if !hd.x.is_finite() || !hd.y.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "image `{id}`: non-finite head coordinate ({}, {})",
                        hd.x, hd.y
                    )));
                }
                // Anything past the far edge lands on the centre of the last pixel.
                let x = if hd.x >= w { w - 0.5 } else { hd.x.max(0.0) };
                let y = if hd.y >= h { h - 0.5 } else { hd.y.max(0.0) };
                if x != hd.x || y != hd.y {
                    clamped += 1;
                }
                Ok(HeadAnnotation { x, y })
            })
            .collect::<Result<Vec<_>>>()?;
        if clamped > 0 {
            log::warn!("image `{id}`: clamped {clamped} out-of-bounds head(s)");
        }
        Ok((Self { id, image, heads }, clamped))
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn count_in(&self, rect: Rect) -> u32 {
        patch_count(&self.heads, rect)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub c_max: u32,
    pub source_split: String,
}

impl DatasetProfile {
    pub fn new(c_max: u32, source_split: impl Into<String>) -> Result<Self> {
        if c_max < 1 {
            return Err(Error::InvalidProfile("c_max must be at least 1".into()));
        }
        Ok(Self {
            c_max,
            source_split: source_split.into(),
        })
    }

    pub fn class_of(&self, c_gt: u32) -> DensityClass {
        class_of(c_gt, self.c_max).expect("profile c_max validated at construction")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    pub patch: Patch,
    pub gt_count: u32,
    pub gt_class: DensityClass,
}

/// Number of heads inside `rect` under half-open membership.
pub fn patch_count(heads: &[HeadAnnotation], rect: Rect) -> u32 {
    heads.iter().filter(|h| rect.contains(h.x, h.y)).count() as u32
}

/// Four-way density label of a patch holding `c_gt` heads.
///
/// LC covers `0 < c_gt <= c_max / 20`, MC covers `c_max / 20 < c_gt <= c_max / 5`.
/// Thresholds are compared as `20 * c_gt <= c_max` and `5 * c_gt <= c_max` so
/// no boundary depends on floating-point rounding.
pub fn class_of(c_gt: u32, c_max: u32) -> Result<DensityClass> {
    if c_max < 1 {
        return Err(Error::InvalidProfile(format!(
            "c_max must be at least 1, got {c_max}"
        )));
    }
    let c = c_gt as u64;
    let m = c_max as u64;
    Ok(if c == 0 {
        DensityClass::NoCrowd
    } else if 20 * c <= m {
        DensityClass::LowCrowd
    } else if 5 * c <= m {
        DensityClass::MediumCrowd
    } else {
        DensityClass::HighCrowd
    })
}

fn window_origins(extent: usize, window: usize, stride: usize) -> Vec<usize> {
    if extent <= window {
        return vec![0];
    }
    let last = extent - window;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Largest head count over `window x window` rectangles placed at multiples of
/// `stride` (plus the far-edge-aligned position) across a `width x height` image.
pub fn max_window_count(
    heads: &[HeadAnnotation],
    width: usize,
    height: usize,
    window: usize,
    stride: usize,
) -> u32 {
    assert!(stride > 0 && window > 0);
    let mut by_x: Vec<HeadAnnotation> = heads.to_vec();
    by_x.sort_by(|a, b| a.x.total_cmp(&b.x));
    let xs: Vec<f64> = by_x.iter().map(|h| h.x).collect();
    let y_origins = window_origins(height, window, stride);
    let mut best = 0u32;
    let mut ys = Vec::new();
    for x0 in window_origins(width, window, stride) {
        let lo = xs.partition_point(|&x| x < x0 as f64);
        let hi = xs.partition_point(|&x| x < (x0 + window) as f64);
        if ((hi - lo) as u32) <= best {
            continue;
        }
        ys.clear();
        ys.extend(by_x[lo..hi].iter().map(|h| h.y));
        ys.sort_by(f64::total_cmp);
        for &y0 in &y_origins {
            let a = ys.partition_point(|&y| y < y0 as f64);
            let b = ys.partition_point(|&y| y < (y0 + window) as f64);
            best = best.max((b - a) as u32);
        }
    }
    best
}

/// Maximum 224x224-window head count over a training split, searched at a
/// 16-pixel stride.
pub fn compute_cmax(training: &[AnnotatedImage], split: &str) -> Result<DatasetProfile> {
    if training.is_empty() {
        return Err(Error::InvalidInput(
            "cannot compute c_max from an empty training set".into(),
        ));
    }
    let c_max = training
        .par_iter()
        .map(|img| {
            max_window_count(
                &img.heads,
                img.width(),
                img.height(),
                PATCH_SIZE,
                CMAX_STRIDE,
            )
        })
        .max()
        .unwrap_or(0);
    if c_max == 0 {
        return Err(Error::InvalidProfile(
            "no annotated heads in the training set; c_max would be 0".into(),
        ));
    }
    DatasetProfile::new(c_max, split)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetConfig {
    pub per_class: usize,
    pub sizes: Vec<usize>,
    pub seed: u64,
    /// Mirror each accepted crop with probability 1/2.
    pub flip: bool,
    /// Rejection budget per class; `None` scales with `per_class`.
    pub max_attempts_per_class: Option<usize>,
}

impl Default for TrainingSetConfig {
    fn default() -> Self {
        Self {
            per_class: PAPER_PATCHES_PER_CLASS,
            sizes: TRAINING_CROP_SIZES.to_vec(),
            seed: 0,
            flip: true,
            max_attempts_per_class: None,
        }
    }
}

impl TrainingSetConfig {
    fn attempts_budget(&self) -> usize {
        self.max_attempts_per_class
            .unwrap_or_else(|| 20_000usize.max(self.per_class.saturating_mul(400)))
    }
}

/// A sampled crop before any pixels are touched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropPlan {
    pub image_index: usize,
    pub rect: Rect,
    pub flip: bool,
    pub gt_count: u32,
    pub gt_class: DensityClass,
}

fn scale_for(size: usize) -> Result<Scale> {
    match size {
        112 => Ok(Scale::Two),
        224 => Ok(Scale::One),
        448 => Ok(Scale::Half),
        other => Err(Error::InvalidInput(format!(
            "training crop size must be 112, 224 or 448, got {other}"
        ))),
    }
}

/// Rejection-samples `per_class` crops for every class. Each class draws from
/// its own seeded stream, so the plan does not depend on scheduling.
pub fn plan_training_set(
    images: &[AnnotatedImage],
    profile: &DatasetProfile,
    cfg: &TrainingSetConfig,
) -> Result<Vec<CropPlan>> {
    if cfg.per_class < 1 {
        return Err(Error::InvalidInput("per_class must be at least 1".into()));
    }
    if cfg.sizes.is_empty() {
        return Err(Error::InvalidInput("no crop sizes given".into()));
    }
    for &s in &cfg.sizes {
        scale_for(s)?;
    }
    if images.is_empty() {
        return Err(Error::InvalidInput("empty image corpus".into()));
    }
    let budget = cfg.attempts_budget();
    let per_class: Vec<Result<Vec<CropPlan>>> = DensityClass::ALL
        .par_iter()
        .map(|&class| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(class.index() as u64 + 1);
            let mut out = Vec::with_capacity(cfg.per_class);
            let mut attempts = 0usize;
            while out.len() < cfg.per_class {
                if attempts >= budget {
                    return Err(Error::InsufficientData { class, attempts });
                }
                attempts += 1;
                let image_index = rng.gen_range(0..images.len());
                let img = &images[image_index];
                let size = *cfg.sizes.choose(&mut rng).unwrap();
                let x0 = if img.width() > size {
                    rng.gen_range(0..=img.width() - size)
                } else {
                    0
                };
                let y0 = if img.height() > size {
                    rng.gen_range(0..=img.height() - size)
                } else {
                    0
                };
                let flip = cfg.flip && rng.gen_bool(0.5);
                let rect = Rect::new(x0 as u32, y0 as u32, size as u32, size as u32);
                let gt_count = img.count_in(rect);
                if profile.class_of(gt_count) != class {
                    continue;
                }
                // Padded crops are never mirrored so padding stays bottom-right.
                let fits = x0 + size <= img.width() && y0 + size <= img.height();
                out.push(CropPlan {
                    image_index,
                    rect,
                    flip: flip && fits,
                    gt_count,
                    gt_class: class,
                });
            }
            Ok(out)
        })
        .collect();
    let mut plans = Vec::with_capacity(cfg.per_class * 4);
    for r in per_class {
        plans.extend(r?);
    }
    Ok(plans)
}

/// Renders one planned crop as a 224x224 labeled patch. The count is the
/// count of the original crop region regardless of rescaling.
pub fn render_crop(images: &[AnnotatedImage], plan: &CropPlan) -> Result<LabeledPatch> {
    let img = images
        .get(plan.image_index)
        .ok_or_else(|| Error::InvalidInput(format!("no image at index {}", plan.image_index)))?;
    let size = plan.rect.w as usize;
    let scale = scale_for(size)?;
    let (x0, y0) = (plan.rect.x0 as usize, plan.rect.y0 as usize);
    let crop = img.image.crop_padded(x0, y0, size, size);
    let pixels = resize(&crop, PATCH_SIZE, PATCH_SIZE);
    let valid_w = img.width().saturating_sub(x0).min(size);
    let valid_h = img.height().saturating_sub(y0).min(size);
    let extent = |valid: usize| match scale {
        Scale::One => valid,
        Scale::Half => area_content_extent(valid, size, PATCH_SIZE),
        Scale::Two => bilinear_content_extent(valid, size, PATCH_SIZE),
    };
    let pad = PadMask {
        content_width: extent(valid_w) as u32,
        content_height: extent(valid_h) as u32,
    };
    let mut patch = Patch::new(pixels, img.id.clone(), plan.rect, scale, pad)?;
    if plan.flip {
        patch = patch.flipped_horizontally();
    }
    Ok(LabeledPatch {
        patch,
        gt_count: plan.gt_count,
        gt_class: plan.gt_class,
    })
}

pub fn build_training_set(
    images: &[AnnotatedImage],
    profile: &DatasetProfile,
    cfg: &TrainingSetConfig,
) -> Result<Vec<LabeledPatch>> {
    let plans = plan_training_set(images, profile, cfg)?;
    plans.par_iter().map(|p| render_crop(images, p)).collect()
}

/// Labels every tile of every image, in image then row-major tile order.
pub fn label_tiles(
    images: &[AnnotatedImage],
    profile: &DatasetProfile,
) -> Result<Vec<LabeledPatch>> {
    let mut out = Vec::new();
    for img in images {
        for patch in crate::geometry::tile_with_id(&img.id, &img.image)? {
            let gt_count = img.count_in(patch.source());
            out.push(LabeledPatch {
                patch,
                gt_count,
                gt_class: profile.class_of(gt_count),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heads(points: &[(f64, f64)]) -> Vec<HeadAnnotation> {
        points
            .iter()
            .map(|&(x, y)| HeadAnnotation::new(x, y))
            .collect()
    }

    fn annotated(id: &str, w: usize, h: usize, points: &[(f64, f64)]) -> AnnotatedImage {
        AnnotatedImage::new(id, PixelGrid::filled(h, w, 1, 0.5), heads(points))
            .unwrap()
            .0
    }

    #[test]
    fn counts_are_half_open() {
        let hs = heads(&[(10.0, 10.0), (300.0, 10.0)]);
        assert_eq!(patch_count(&hs, Rect::new(0, 0, 224, 224)), 1);
        assert_eq!(patch_count(&[], Rect::new(0, 0, 224, 224)), 0);

        let edge = heads(&[(224.0, 50.0)]);
        assert_eq!(patch_count(&edge, Rect::new(0, 0, 224, 224)), 0);
        assert_eq!(patch_count(&edge, Rect::new(224, 0, 224, 224)), 1);
    }

    #[test]
    fn class_boundaries() {
        use DensityClass::*;
        assert_eq!(class_of(0, 100).unwrap(), NoCrowd);
        assert_eq!(class_of(5, 100).unwrap(), LowCrowd);
        assert_eq!(class_of(6, 100).unwrap(), MediumCrowd);
        assert_eq!(class_of(20, 100).unwrap(), MediumCrowd);
        assert_eq!(class_of(21, 100).unwrap(), HighCrowd);
        assert!(matches!(class_of(3, 0), Err(Error::InvalidProfile(_))));
    }

    #[test]
    fn cmax_single_cluster() {
        let img = annotated(
            "a",
            600,
            400,
            &[(100.0, 100.0), (110.0, 120.0), (130.0, 90.0)],
        );
        assert_eq!(compute_cmax(&[img], "train").unwrap().c_max, 3);
    }

    #[test]
    fn cmax_rejects_empty_and_headless() {
        assert!(matches!(
            compute_cmax(&[], "train"),
            Err(Error::InvalidInput(_))
        ));
        let img = annotated("a", 300, 300, &[]);
        assert!(matches!(
            compute_cmax(&[img], "train"),
            Err(Error::InvalidProfile(_))
        ));
    }

    #[test]
    fn small_images_use_a_single_padded_window() {
        let hs = heads(&[(5.0, 5.0), (90.0, 60.0)]);
        assert_eq!(max_window_count(&hs, 100, 80, 224, 16), 2);
    }

    #[test]
    fn ingestion_clamps_out_of_bounds_heads() {
        let (img, clamped) = AnnotatedImage::new(
            "x",
            PixelGrid::zeros(224, 224, 1),
            heads(&[(-3.0, 50.0), (10.0, 10.0), (224.0, 300.0)]),
        )
        .unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(img.heads[0], HeadAnnotation::new(0.0, 50.0));
        assert_eq!(img.heads[2], HeadAnnotation::new(223.5, 223.5));
    }

    #[test]
    fn tiles_labeled_in_order() {
        let img = annotated("t", 448, 224, &[(10.0, 10.0), (300.0, 20.0), (310.0, 30.0)]);
        let profile = DatasetProfile::new(2, "train").unwrap();
        let tiles = label_tiles(&[img], &profile).unwrap();
        assert_eq!(tiles.len(), 2);
        assert_eq!(tiles[0].gt_count, 1);
        assert_eq!(tiles[1].gt_count, 2);
        assert_eq!(tiles[1].gt_class, DensityClass::HighCrowd);
    }

    #[test]
    fn invalid_crop_size_rejected() {
        let img = annotated("a", 500, 500, &[(1.0, 1.0)]);
        let profile = DatasetProfile::new(1, "train").unwrap();
        let cfg = TrainingSetConfig {
            per_class: 1,
            sizes: vec![100],
            ..Default::default()
        };
        assert!(plan_training_set(&[img], &profile, &cfg).is_err());
    }
}
