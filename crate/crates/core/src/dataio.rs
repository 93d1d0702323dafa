//! On-disk formats: PNG images with JSON point sidecars listed in a checksummed
//! manifest, a binary archive for labeled patches, and a synthetic dot-crowd
//! generator that produces self-contained datasets.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{tile_grid, PadMask, Patch, PixelGrid, Rect, Scale, PATCH_SIZE};
use crate::labeling::{AnnotatedImage, HeadAnnotation, LabeledPatch};
use crate::prm::DensityClass;

// ---------------------------------------------------------------------------
// Sidecars and manifests

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub points: Vec<[f64; 2]>,
}

impl Sidecar {
    pub fn from_heads(heads: &[HeadAnnotation]) -> Self {
        Self {
            points: heads.iter().map(|h| [h.x, h.y]).collect(),
        }
    }

    pub fn heads(&self) -> Vec<HeadAnnotation> {
        self.points
            .iter()
            .map(|p| HeadAnnotation::new(p[0], p[1]))
            .collect()
    }
}

pub fn parse_sidecar(bytes: &[u8]) -> Result<Sidecar> {
    serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("annotation sidecar: {e}")))
}

pub fn sidecar_bytes(heads: &[HeadAnnotation]) -> Result<Vec<u8>> {
    Ok(serde_json::to_vec(&Sidecar::from_heads(heads))?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Image path relative to the manifest's directory.
    pub image: String,
    /// Sidecar path relative to the manifest's directory.
    pub annotation: String,
    /// SHA-256 over the image bytes followed by the sidecar bytes.
    pub sha256: String,
}

impl ManifestEntry {
    /// Image identifier: the image file name without extension.
    pub fn id(&self) -> String {
        Path::new(&self.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn entry_checksum(image_bytes: &[u8], annotation_bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(image_bytes);
    h.update(annotation_bytes);
    hex::encode(h.finalize())
}

/// Decodes PNG bytes: grayscale stays single-channel, anything with colour
/// becomes RGB; alpha is dropped. Values land in `[0, 1]`.
pub fn decode_png(bytes: &[u8]) -> Result<PixelGrid> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(pixels_from_dynamic(&img))
}

fn pixels_from_dynamic(img: &DynamicImage) -> PixelGrid {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        PixelGrid::new(h, w, 3, img.to_rgb32f().into_raw()).expect("decoder dimensions")
    } else {
        PixelGrid::new(h, w, 1, img.to_luma32f().into_raw()).expect("decoder dimensions")
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// PNG encoding at 8 bits per channel.
pub fn encode_png(grid: &PixelGrid) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = grid.data().iter().map(|&v| to_u8(v)).collect();
    let (w, h) = (grid.width() as u32, grid.height() as u32);
    let img = match grid.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("sized buffer")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("sized buffer")),
        c => {
            return Err(Error::InvalidInput(format!(
                "cannot encode {c}-channel image"
            )))
        }
    };
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// What [`decode_png`] would return after an [`encode_png`] round trip.
pub fn quantize(grid: &PixelGrid) -> PixelGrid {
    let bytes: Vec<u8> = grid.data().iter().map(|&v| to_u8(v)).collect();
    let (w, h) = (grid.width() as u32, grid.height() as u32);
    let img = match grid.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("sized buffer")),
        _ => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("sized buffer")),
    };
    pixels_from_dynamic(&img)
}

#[derive(Clone, Debug)]
pub struct LoadedImage {
    pub image: AnnotatedImage,
    /// Heads that fell outside the image and were clamped onto it.
    pub clamped: usize,
}

/// Loads one manifest entry, resolving paths against `base`. With `verify`,
/// the checksum must match.
pub fn load_annotated(base: &Path, entry: &ManifestEntry, verify: bool) -> Result<LoadedImage> {
    let image_path = base.join(&entry.image);
    let ann_path = base.join(&entry.annotation);
    let image_bytes = fs::read(&image_path).map_err(|e| Error::io(&image_path, e))?;
    let ann_bytes = fs::read(&ann_path).map_err(|e| Error::io(&ann_path, e))?;
    if verify {
        let found = entry_checksum(&image_bytes, &ann_bytes);
        if !found.eq_ignore_ascii_case(&entry.sha256) {
            return Err(Error::ChecksumMismatch {
                path: image_path,
                expected: entry.sha256.clone(),
                found,
            });
        }
    }
    let pixels = decode_png(&image_bytes)?;
    let sidecar = parse_sidecar(&ann_bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", ann_path.display())))?;
    let (image, clamped) = AnnotatedImage::new(entry.id(), pixels, sidecar.heads())?;
    Ok(LoadedImage { image, clamped })
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub images: Vec<AnnotatedImage>,
    /// One line per image whose heads needed clamping.
    pub warnings: Vec<String>,
    /// Entries that could not be loaded (tolerant loading only).
    pub failures: Vec<String>,
}

/// Loads every entry of a manifest (in manifest order, decoded in parallel)
/// and verifies the checksums. The first bad entry fails the whole load.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    load_entries(manifest_path, false)
}

/// Like [`load_dataset`], but entries that fail to load are listed in
/// `failures` instead of aborting.
pub fn load_dataset_tolerant(manifest_path: &Path) -> Result<Dataset> {
    load_entries(manifest_path, true)
}

fn load_entries(manifest_path: &Path, tolerant: bool) -> Result<Dataset> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let loaded: Vec<(String, Result<LoadedImage>)> = manifest
        .entries
        .par_iter()
        .map(|e| (e.id(), load_annotated(base, e, true)))
        .collect();
    let mut ds = Dataset {
        name: manifest.name,
        split: manifest.split,
        images: Vec::with_capacity(loaded.len()),
        warnings: Vec::new(),
        failures: Vec::new(),
    };
    for (id, l) in loaded {
        match l {
            Ok(l) => {
                if l.clamped > 0 {
                    ds.warnings
                        .push(format!("{}: clamped {} head(s)", l.image.id, l.clamped));
                }
                ds.images.push(l.image);
            }
            Err(e) if tolerant => {
                log::warn!("skipping `{id}`: {e}");
                ds.failures.push(format!("{id}: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ds)
}

/// Writes `images/<id>.png`, `annotations/<id>.json` and `manifest.json`
/// under `dir`, returning the manifest path.
pub fn write_dataset(
    dir: &Path,
    name: &str,
    split: Split,
    images: &[AnnotatedImage],
) -> Result<PathBuf> {
    for sub in ["images", "annotations"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let entries = images
        .par_iter()
        .map(|img| {
            let image = format!("images/{}.png", img.id);
            let annotation = format!("annotations/{}.json", img.id);
            let png = encode_png(&img.image)?;
            let ann = sidecar_bytes(&img.heads)?;
            let ip = dir.join(&image);
            fs::write(&ip, &png).map_err(|e| Error::io(&ip, e))?;
            let ap = dir.join(&annotation);
            fs::write(&ap, &ann).map_err(|e| Error::io(&ap, e))?;
            Ok(ManifestEntry {
                image,
                annotation,
                sha256: entry_checksum(&png, &ann),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        name: name.to_owned(),
        split,
        entries,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Synthetic dot crowds

/// Number of heads drawn per image (or per tile in tiled placement).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CountLaw {
    Fixed {
        count: u32,
    },
    Uniform {
        min: u32,
        max: u32,
    },
    /// Deterministic cycle: draw `i` takes `counts[i % len]`.
    Cycle {
        counts: Vec<u32>,
    },
    /// Weighted choice among `counts`.
    Choice {
        counts: Vec<u32>,
        weights: Vec<f64>,
    },
}

impl CountLaw {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("count law: {m}")));
        match self {
            CountLaw::Fixed { .. } => Ok(()),
            CountLaw::Uniform { min, max } if min > max => bad("min exceeds max"),
            CountLaw::Uniform { .. } => Ok(()),
            CountLaw::Cycle { counts } if counts.is_empty() => bad("empty cycle"),
            CountLaw::Cycle { .. } => Ok(()),
            CountLaw::Choice { counts, weights } => {
                if counts.is_empty() || counts.len() != weights.len() {
                    return bad("choice needs one weight per count");
                }
                if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
                    return bad("weights must be non-negative with a positive sum");
                }
                Ok(())
            }
        }
    }

    fn draw(&self, draw_index: usize, rng: &mut ChaCha8Rng) -> u32 {
        match self {
            CountLaw::Fixed { count } => *count,
            CountLaw::Uniform { min, max } => rng.gen_range(*min..=*max),
            CountLaw::Cycle { counts } => counts[draw_index % counts.len()],
            CountLaw::Choice { counts, weights } => {
                let dist = rand::distributions::WeightedIndex::new(weights).expect("validated");
                counts[dist.sample(rng)]
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Flat,
    Noise,
    /// Noise plus bright, unannotated blobs and streaks.
    Clutter,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Placement {
    /// Heads gather around `clusters` centres with Gaussian spread.
    Clustered { clusters: usize },
    /// The law is drawn once per 224x224 tile and heads fall inside that tile.
    PerTile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub count: CountLaw,
    pub placement: Placement,
    /// Standard deviation of head positions around a cluster centre.
    pub cluster_spread: f64,
    pub dot_radius: f64,
    pub background: Background,
    /// Keep heads at least `2 * dot_radius` away from every tile boundary so
    /// a dot never straddles two tiles.
    pub boundary_safe: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 672,
            height: 448,
            count: CountLaw::Uniform { min: 0, max: 200 },
            placement: Placement::Clustered { clusters: 3 },
            cluster_spread: 60.0,
            dot_radius: 3.0,
            background: Background::Noise,
            boundary_safe: true,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(
                "synthetic image size must be positive".into(),
            ));
        }
        if !(self.dot_radius > 0.0) || !(self.cluster_spread > 0.0) {
            return Err(Error::InvalidInput(
                "dot radius and cluster spread must be positive".into(),
            ));
        }
        if let Placement::Clustered { clusters: 0 } = self.placement {
            return Err(Error::InvalidInput(
                "at least one cluster is required".into(),
            ));
        }
        if self.boundary_safe && 4.0 * self.dot_radius >= PATCH_SIZE as f64 {
            return Err(Error::InvalidInput(
                "dot radius too large for boundary-safe mode".into(),
            ));
        }
        self.count.validate()
    }
}

const BACKGROUND_LEVEL: f64 = 0.75;
const NOISE_STD: f64 = 0.03;
const DOT_DEPTH: f64 = 0.8;
const MAX_PLACEMENT_TRIES: usize = 10_000;

fn near_tile_edge(v: f64, margin: f64) -> bool {
    let r = v.rem_euclid(PATCH_SIZE as f64);
    r < margin || r > PATCH_SIZE as f64 - margin
}

struct Canvas {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Canvas {
    /// Multiplies (darken) or lerps toward white (lighten) with a Gaussian
    /// footprint of standard deviation `sigma`.
    fn blob(&mut self, cx: f64, cy: f64, sigma: f64, strength: f64, darken: bool) {
        let reach = 3.0 * sigma;
        if cx + reach < 0.0 || cy + reach < 0.0 {
            return;
        }
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(self.w.saturating_sub(1));
        let y1 = ((cy + reach).ceil() as usize).min(self.h.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let g = strength * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                let p = &mut self.v[y * self.w + x];
                if darken {
                    *p *= 1.0 - g;
                } else {
                    *p += (1.0 - *p) * g;
                }
            }
        }
    }
}

fn place_heads(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Result<Vec<HeadAnnotation>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let margin = if spec.boundary_safe {
        2.0 * spec.dot_radius
    } else {
        0.0
    };
    let ok = |x: f64, y: f64| {
        x >= 0.0
            && y >= 0.0
            && x < w
            && y < h
            && !(spec.boundary_safe && (near_tile_edge(x, margin) || near_tile_edge(y, margin)))
    };
    let fail =
        || Error::InvalidInput("could not place heads under the boundary-safe constraint".into());
    let mut heads = Vec::new();
    match spec.placement {
        Placement::PerTile => {
            let (rows, cols) = tile_grid(spec.height, spec.width);
            for t in 0..rows * cols {
                let n = spec.count.draw(t, rng);
                let x0 = (t % cols * PATCH_SIZE) as f64;
                let y0 = (t / cols * PATCH_SIZE) as f64;
                let cw = (w - x0).min(PATCH_SIZE as f64);
                let ch = (h - y0).min(PATCH_SIZE as f64);
                for _ in 0..n {
                    let mut placed = false;
                    for _ in 0..MAX_PLACEMENT_TRIES {
                        let x = x0 + rng.gen::<f64>() * cw;
                        let y = y0 + rng.gen::<f64>() * ch;
                        if ok(x, y) {
                            heads.push(HeadAnnotation::new(x, y));
                            placed = true;
                            break;
                        }
                    }
                    if !placed {
                        return Err(fail());
                    }
                }
            }
        }
        Placement::Clustered { clusters } => {
            let n = spec.count.draw(0, rng) as usize;
            let centres: Vec<(f64, f64)> = (0..clusters)
                .map(|_| (rng.gen::<f64>() * w, rng.gen::<f64>() * h))
                .collect();
            let spread = Normal::new(0.0, spec.cluster_spread).expect("validated spread");
            for i in 0..n {
                let (cx, cy) = centres[i % clusters];
                let mut placed = false;
                for _ in 0..MAX_PLACEMENT_TRIES {
                    let x = cx + spread.sample(rng);
                    let y = cy + spread.sample(rng);
                    if ok(x, y) {
                        heads.push(HeadAnnotation::new(x, y));
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(fail());
                }
            }
        }
    }
    Ok(heads)
}

/// Renders image `index` of the synthetic set. Each image draws from its own
/// RNG stream keyed by `(seed, index)`, so images are independent of each
/// other and of generation order. Pixels are already PNG-quantized.
pub fn render_synthetic_image(
    spec: &SyntheticSpec,
    index: usize,
    id_prefix: &str,
) -> Result<AnnotatedImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let heads = place_heads(spec, &mut rng)?;

    let (w, h) = (spec.width, spec.height);
    let mut canvas = Canvas {
        w,
        h,
        v: vec![BACKGROUND_LEVEL; w * h],
    };
    if spec.background != Background::Flat {
        let noise = Normal::new(0.0, NOISE_STD).unwrap();
        for p in canvas.v.iter_mut() {
            *p += noise.sample(&mut rng);
        }
    }
    if spec.background == Background::Clutter {
        let blobs = (w * h).div_ceil(3000);
        for _ in 0..blobs {
            let cx = rng.gen::<f64>() * w as f64;
            let cy = rng.gen::<f64>() * h as f64;
            let sigma = rng.gen_range(1.0..3.0) * spec.dot_radius / 2.0;
            canvas.blob(cx, cy, sigma, rng.gen_range(0.4..0.8), false);
        }
        let streaks = (w * h).div_ceil(40_000);
        for _ in 0..streaks {
            let (mut x, mut y) = (rng.gen::<f64>() * w as f64, rng.gen::<f64>() * h as f64);
            let angle: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
            for _ in 0..40 {
                canvas.blob(x, y, 1.0, 0.3, true);
                x += 2.0 * angle.cos();
                y += 2.0 * angle.sin();
            }
        }
    }
    let sigma = spec.dot_radius / 2.0;
    for hd in &heads {
        canvas.blob(hd.x, hd.y, sigma, DOT_DEPTH, true);
    }
    let grid = PixelGrid::from_fn(h, w, 1, |y, x, _| canvas.v[y * w + x] as f32);
    let (img, clamped) =
        AnnotatedImage::new(format!("{id_prefix}{index:05}"), quantize(&grid), heads)?;
    debug_assert_eq!(clamped, 0);
    Ok(img)
}

pub fn render_synthetic(
    spec: &SyntheticSpec,
    n_images: usize,
    id_prefix: &str,
) -> Result<Vec<AnnotatedImage>> {
    spec.validate()?;
    (0..n_images)
        .into_par_iter()
        .map(|i| render_synthetic_image(spec, i, id_prefix))
        .collect()
}

/// Renders `n_images` and writes them as a dataset under `dir`; returns the
/// manifest path.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    n_images: usize,
    dir: &Path,
    name: &str,
    split: Split,
) -> Result<PathBuf> {
    let images = render_synthetic(spec, n_images, &format!("{name}-"))?;
    write_dataset(dir, name, split, &images)
}

// ---------------------------------------------------------------------------
// Patch archive
//
// header:  b"PRMPATCH" | version u32 | flags u32
// record:  len u32 | payload (len bytes)
// trailer: 0xFFFF_FFFF u32 | record count u64
// All integers little-endian.

pub const ARCHIVE_MAGIC: &[u8; 8] = b"PRMPATCH";
pub const ARCHIVE_VERSION: u32 = 1;
const TRAILER_SENTINEL: u32 = u32::MAX;

fn encode_record(lp: &LabeledPatch) -> Result<Vec<u8>> {
    let p = &lp.patch;
    let id = p.image_id().as_bytes();
    if id.len() > u16::MAX as usize {
        return Err(Error::InvalidInput("image id too long for archive".into()));
    }
    let g = p.pixels();
    let mut out = Vec::with_capacity(48 + id.len() + g.data().len() * 4);
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    let r = p.source();
    for v in [r.x0, r.y0, r.w, r.h] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(p.scale().code());
    out.push(p.flipped() as u8);
    let m = p.pad_mask();
    out.extend_from_slice(&m.content_width.to_le_bytes());
    out.extend_from_slice(&m.content_height.to_le_bytes());
    out.extend_from_slice(&lp.gt_count.to_le_bytes());
    out.push(lp.gt_class.index() as u8);
    out.extend_from_slice(&(g.height() as u32).to_le_bytes());
    out.extend_from_slice(&(g.width() as u32).to_le_bytes());
    out.push(g.channels() as u8);
    for v in g.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("record shorter than its contents".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn decode_record(buf: &[u8]) -> Result<LabeledPatch> {
    let mut c = Cursor { buf, pos: 0 };
    let id_len = c.u16()? as usize;
    let id = std::str::from_utf8(c.take(id_len)?)
        .map_err(|_| Error::Format("image id is not UTF-8".into()))?
        .to_owned();
    let rect = Rect::new(c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let scale = Scale::from_code(c.u8()?).ok_or_else(|| Error::Format("bad scale code".into()))?;
    let flipped = match c.u8()? {
        0 => false,
        1 => true,
        _ => return Err(Error::Format("bad flip flag".into())),
    };
    let pad = PadMask {
        content_width: c.u32()?,
        content_height: c.u32()?,
    };
    let gt_count = c.u32()?;
    let gt_class = DensityClass::from_index(c.u8()? as usize)
        .ok_or_else(|| Error::Format("bad class code".into()))?;
    let h = c.u32()? as usize;
    let w = c.u32()? as usize;
    let ch = c.u8()? as usize;
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(ch))
        .ok_or_else(|| Error::Format("pixel dimensions overflow".into()))?;
    let raw = c.take(n * 4)?;
    if c.pos != buf.len() {
        return Err(Error::Format("trailing bytes in record".into()));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut patch = Patch::new(PixelGrid::new(h, w, ch, data)?, id, rect, scale, pad)?;
    patch.set_flipped(flipped);
    Ok(LabeledPatch {
        patch,
        gt_count,
        gt_class,
    })
}

pub struct ArchiveWriter<W: Write> {
    out: W,
    records: u64,
}

impl ArchiveWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufWriter::new(f)).map_err(|e| relabel_io(e, path))
    }
}

fn relabel_io(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

impl<W: Write> ArchiveWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        let mut header = Vec::with_capacity(16);
        header.extend_from_slice(ARCHIVE_MAGIC);
        header.extend_from_slice(&ARCHIVE_VERSION.to_le_bytes());
        header.extend_from_slice(&0u32.to_le_bytes());
        out.write_all(&header)
            .map_err(|e| Error::io("<archive>", e))?;
        Ok(Self { out, records: 0 })
    }

    pub fn push(&mut self, lp: &LabeledPatch) -> Result<()> {
        let rec = encode_record(lp)?;
        if rec.len() >= TRAILER_SENTINEL as usize {
            return Err(Error::InvalidInput("patch record too large".into()));
        }
        self.out
            .write_all(&(rec.len() as u32).to_le_bytes())
            .and_then(|_| self.out.write_all(&rec))
            .map_err(|e| Error::io("<archive>", e))?;
        self.records += 1;
        Ok(())
    }

    /// Writes the trailer and returns the inner writer.
    pub fn finish(mut self) -> Result<W> {
        self.out
            .write_all(&TRAILER_SENTINEL.to_le_bytes())
            .and_then(|_| self.out.write_all(&self.records.to_le_bytes()))
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io("<archive>", e))?;
        Ok(self.out)
    }
}

/// Streams records back; the final item is an error if the archive is
/// truncated or its trailer disagrees with the records read.
pub struct ArchiveReader<R: Read> {
    input: R,
    read: u64,
    done: bool,
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::Truncated(format!("ended inside {what}"))
        } else {
            Error::io("<archive>", e)
        }
    })
}

impl ArchiveReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(BufReader::new(f))
    }
}

impl<R: Read> ArchiveReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut header = [0u8; 16];
        read_exact_or_truncated(&mut input, &mut header, "the header")?;
        if &header[..8] != ARCHIVE_MAGIC {
            return Err(Error::Format("not a patch archive (bad magic)".into()));
        }
        let version = u32::from_le_bytes(header[8..12].try_into().unwrap());
        if version != ARCHIVE_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: ARCHIVE_VERSION,
            });
        }
        Ok(Self {
            input,
            read: 0,
            done: false,
        })
    }

    fn next_record(&mut self) -> Result<Option<LabeledPatch>> {
        let mut len = [0u8; 4];
        read_exact_or_truncated(&mut self.input, &mut len, "a record length")?;
        let len = u32::from_le_bytes(len);
        if len == TRAILER_SENTINEL {
            let mut n = [0u8; 8];
            read_exact_or_truncated(&mut self.input, &mut n, "the trailer")?;
            let n = u64::from_le_bytes(n);
            if n != self.read {
                return Err(Error::Format(format!(
                    "trailer lists {n} records, archive holds {}",
                    self.read
                )));
            }
            let mut extra = [0u8; 1];
            if self
                .input
                .read(&mut extra)
                .map_err(|e| Error::io("<archive>", e))?
                != 0
            {
                return Err(Error::Format("data after archive trailer".into()));
            }
            return Ok(None);
        }
        let mut buf = vec![0u8; len as usize];
        read_exact_or_truncated(&mut self.input, &mut buf, &format!("record {}", self.read))?;
        let rec = decode_record(&buf)?;
        self.read += 1;
        Ok(Some(rec))
    }
}

impl<R: Read> Iterator for ArchiveReader<R> {
    type Item = Result<LabeledPatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn export_patch_archive(patches: &[LabeledPatch], path: &Path) -> Result<()> {
    let mut w = ArchiveWriter::create(path)?;
    for p in patches {
        w.push(p).map_err(|e| relabel_io(e, path))?;
    }
    w.finish().map_err(|e| relabel_io(e, path))?;
    Ok(())
}

/// Reads a whole archive; any truncation or corruption fails the call.
pub fn import_patch_archive(path: &Path) -> Result<Vec<LabeledPatch>> {
    ArchiveReader::open(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::tile_with_id;
    use crate::labeling::{compute_cmax, label_tiles, patch_count};

    fn write_entry(dir: &Path, id: &str, grid: &PixelGrid, sidecar: &str) -> ManifestEntry {
        fs::create_dir_all(dir.join("images")).unwrap();
        fs::create_dir_all(dir.join("annotations")).unwrap();
        let png = encode_png(grid).unwrap();
        let image = format!("images/{id}.png");
        let annotation = format!("annotations/{id}.json");
        fs::write(dir.join(&image), &png).unwrap();
        fs::write(dir.join(&annotation), sidecar).unwrap();
        ManifestEntry {
            image,
            annotation,
            sha256: entry_checksum(&png, sidecar.as_bytes()),
        }
    }

    #[test]
    fn sidecar_examples() {
        let dir = tempfile::tempdir().unwrap();
        let g = PixelGrid::filled(224, 224, 1, 0.5);
        let e = write_entry(dir.path(), "a", &g, r#"{"points": []}"#);
        let l = load_annotated(dir.path(), &e, true).unwrap();
        assert!(l.image.heads.is_empty());
        assert_eq!(l.image.id, "a");

        let e = write_entry(dir.path(), "b", &g, r#"{"points": [[10.5, 20.0]]}"#);
        let l = load_annotated(dir.path(), &e, true).unwrap();
        assert_eq!(l.image.heads, vec![HeadAnnotation::new(10.5, 20.0)]);
        assert_eq!(l.clamped, 0);

        let e = write_entry(dir.path(), "c", &g, r#"{"points": [[-3, 50]]}"#);
        let l = load_annotated(dir.path(), &e, true).unwrap();
        assert_eq!(l.image.heads, vec![HeadAnnotation::new(0.0, 50.0)]);
        assert_eq!(l.clamped, 1);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let g = PixelGrid::filled(10, 10, 3, 0.5);
        let mut e = write_entry(dir.path(), "a", &g, r#"{"points": []}"#);
        let good = e.sha256.clone();
        e.sha256 = "00".repeat(32);
        assert!(matches!(
            load_annotated(dir.path(), &e, true),
            Err(Error::ChecksumMismatch { .. })
        ));
        e.sha256 = good;
        let l = load_annotated(dir.path(), &e, true).unwrap();
        assert_eq!(l.image.image.channels(), 3);

        let bad = write_entry(dir.path(), "b", &g, r#"{"pts": []}"#);
        assert!(matches!(
            load_annotated(dir.path(), &bad, true),
            Err(Error::Format(_))
        ));

        let mut missing = e.clone();
        missing.image = "images/nope.png".into();
        assert!(matches!(
            load_annotated(dir.path(), &missing, false),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn png_roundtrip_matches_quantize() {
        let g = PixelGrid::from_fn(17, 23, 1, |y, x, _| ((x * 31 + y * 7) % 100) as f32 / 99.0);
        let back = decode_png(&encode_png(&g).unwrap()).unwrap();
        assert_eq!(back, quantize(&g));
        assert_eq!(quantize(&back), back);
        let rgb = PixelGrid::from_fn(5, 4, 3, |y, x, c| ((x + y + c) % 3) as f32 / 2.0);
        assert_eq!(
            decode_png(&encode_png(&rgb).unwrap()).unwrap(),
            quantize(&rgb)
        );
    }

    fn spec_fixed(count: u32) -> SyntheticSpec {
        SyntheticSpec {
            width: 448,
            height: 300,
            count: CountLaw::Fixed { count },
            cluster_spread: 40.0,
            seed: 7,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn headless_spec_gives_only_nc_tiles() {
        let imgs = render_synthetic(&spec_fixed(0), 3, "z").unwrap();
        let profile = crate::labeling::DatasetProfile::new(1, "train").unwrap();
        for lp in label_tiles(&imgs, &profile).unwrap() {
            assert_eq!(lp.gt_class, DensityClass::NoCrowd);
        }
    }

    #[test]
    fn dense_single_tile_is_high_crowd() {
        let spec = SyntheticSpec {
            width: 224,
            height: 224,
            count: CountLaw::Fixed { count: 300 },
            placement: Placement::Clustered { clusters: 1 },
            cluster_spread: 50.0,
            boundary_safe: false,
            ..SyntheticSpec::default()
        };
        let imgs = render_synthetic(&spec, 1, "d").unwrap();
        let profile = compute_cmax(&imgs, "train").unwrap();
        assert_eq!(profile.c_max, 300);
        let tiles = label_tiles(&imgs, &profile).unwrap();
        assert_eq!(tiles[0].gt_class, DensityClass::HighCrowd);
    }

    #[test]
    fn boundary_safe_counts_are_exact_per_tile() {
        let spec = SyntheticSpec {
            width: 500,
            height: 460,
            count: CountLaw::Cycle {
                counts: vec![0, 3, 11, 40],
            },
            placement: Placement::PerTile,
            ..SyntheticSpec::default()
        };
        let img = &render_synthetic(&spec, 1, "t").unwrap()[0];
        let tiles = tile_with_id(&img.id, &img.image).unwrap();
        let expected = [0, 3, 11, 40, 0, 3, 11, 40, 0];
        for (t, e) in tiles.iter().zip(expected) {
            assert_eq!(patch_count(&img.heads, t.source()), e);
        }
        let m = 2.0 * spec.dot_radius;
        for h in &img.heads {
            assert!(!near_tile_edge(h.x, m) && !near_tile_edge(h.y, m));
        }
        // headless tiles show no dots: they stay near the background level
        let t0 = tiles[0].pixels();
        assert!(t0.data().iter().all(|&v| v > 0.5));
    }

    #[test]
    fn generation_is_deterministic_and_order_free() {
        let spec = SyntheticSpec {
            background: Background::Clutter,
            ..spec_fixed(25)
        };
        let a = render_synthetic(&spec, 4, "s").unwrap();
        let b = render_synthetic_image(&spec, 2, "s").unwrap();
        assert_eq!(a[2], b);
        assert_ne!(a[0].image, a[1].image);

        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = generate_synthetic(&spec, 3, d1.path(), "syn", Split::Train).unwrap();
        let m2 = generate_synthetic(&spec, 3, d2.path(), "syn", Split::Train).unwrap();
        assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
        let loaded = load_dataset(&m1).unwrap();
        let direct = render_synthetic(&spec, 3, "syn-").unwrap();
        for (l, d) in loaded.images.iter().zip(&direct) {
            assert_eq!(l.id, d.id);
            assert_eq!(l.heads, d.heads);
            assert_eq!(l.image, d.image);
        }
        assert_eq!(loaded.split, Split::Train);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec_fixed(1);
        s.dot_radius = 0.0;
        assert!(s.validate().is_err());
        let mut s = spec_fixed(1);
        s.count = CountLaw::Uniform { min: 5, max: 1 };
        assert!(s.validate().is_err());
        let mut s = spec_fixed(1);
        s.count = CountLaw::Choice {
            counts: vec![1, 2],
            weights: vec![1.0],
        };
        assert!(s.validate().is_err());
    }

    fn sample_patches() -> Vec<LabeledPatch> {
        let img = PixelGrid::from_fn(300, 500, 1, |y, x, _| ((x * y) % 255) as f32 / 255.0);
        tile_with_id("img-1", &img)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, p)| LabeledPatch {
                patch: if i % 2 == 1 {
                    p.flipped_horizontally()
                } else {
                    p
                },
                gt_count: i as u32 * 3,
                gt_class: DensityClass::ALL[i % 4],
            })
            .collect()
    }

    #[test]
    fn archive_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.prm");
        export_patch_archive(&[], &path).unwrap();
        assert!(import_patch_archive(&path).unwrap().is_empty());

        let patches = sample_patches();
        export_patch_archive(&patches, &path).unwrap();
        let back = import_patch_archive(&path).unwrap();
        assert_eq!(back, patches);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            import_patch_archive(&path),
            Err(Error::Truncated(_))
        ));
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            import_patch_archive(&path),
            Err(Error::Truncated(_))
        ));

        let mut v2 = bytes.clone();
        v2[8] = 2;
        fs::write(&path, &v2).unwrap();
        assert!(matches!(
            import_patch_archive(&path),
            Err(Error::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));
    }
}
