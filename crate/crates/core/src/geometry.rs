//! Pixel rasters, tiling into fixed-size patches, and the three pixel-level
//! rescaling primitives composed by the PRM router.
//!
//! Pixels are `f32` intensities in `[0, 1]`, stored channels-last in row-major
//! order. Upscaling uses bilinear interpolation with half-pixel centers and
//! edge clamping; downscaling uses area averaging. Both kernels are convex
//! combinations of source pixels, so the value range is preserved without
//! clamping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of every patch produced by tiling or by the PRM.
pub const PATCH_SIZE: usize = 224;
/// Side length of an Up-scaler quadrant and of the Down-scaler content block.
pub const HALF_PATCH: usize = PATCH_SIZE / 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl PixelGrid {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidInput(format!(
                "pixel buffer has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "pixel intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert!((0.0..=1.0).contains(&value), "value outside [0, 1]");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a grid by evaluating `f(y, x, c)` for every sample. Values are
    /// clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c).clamp(0.0, 1.0));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.height == 0 || self.width == 0
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f32) {
        debug_assert!((0.0..=1.0).contains(&value));
        self.data[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Copies the `width x height` window at `(x0, y0)`. Samples outside the
    /// grid read as zero.
    pub fn crop_padded(&self, x0: usize, y0: usize, width: usize, height: usize) -> PixelGrid {
        let c = self.channels;
        let mut out = PixelGrid::zeros(height, width, c);
        let y_end = (y0 + height).min(self.height);
        let x_end = (x0 + width).min(self.width);
        if x0 >= x_end {
            return out;
        }
        let run = (x_end - x0) * c;
        for y in y0..y_end {
            let src = (y * self.width + x0) * c;
            let dst = ((y - y0) * width) * c;
            out.data[dst..dst + run].copy_from_slice(&self.data[src..src + run]);
        }
        out
    }

    /// Writes `src` into this grid with its top-left corner at `(x0, y0)`,
    /// clipping anything that falls outside.
    pub fn paste(&mut self, src: &PixelGrid, x0: usize, y0: usize) {
        assert_eq!(src.channels, self.channels, "channel mismatch");
        let c = self.channels;
        let y_end = (y0 + src.height).min(self.height);
        let x_end = (x0 + src.width).min(self.width);
        if x0 >= x_end {
            return;
        }
        let run = (x_end - x0) * c;
        for y in y0..y_end {
            let dst = (y * self.width + x0) * c;
            let s = ((y - y0) * src.width) * c;
            self.data[dst..dst + run].copy_from_slice(&src.data[s..s + run]);
        }
    }

    pub fn flip_horizontal(&self) -> PixelGrid {
        let c = self.channels;
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let s = (y * self.width + x) * c;
                let d = (y * self.width + (self.width - 1 - x)) * c;
                out.data[d..d + c].copy_from_slice(&self.data[s..s + c]);
            }
        }
        out
    }

    /// Luma conversion (BT.601 weights); single-channel grids are returned as is.
    pub fn to_grayscale(&self) -> PixelGrid {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]).clamp(0.0, 1.0))
            .collect();
        PixelGrid {
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}

/// Axis-aligned rectangle in original-image pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x0: u32, y0: u32, w: u32, h: u32) -> Self {
        Self { x0, y0, w, h }
    }

    /// Half-open membership: `x0 <= x < x0 + w` and `y0 <= y < y0 + h`.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 as f64
            && x < (self.x0 + self.w) as f64
            && y >= self.y0 as f64
            && y < (self.y0 + self.h) as f64
    }

    /// The four quadrants in TL, TR, BL, BR order.
    pub fn quadrants(&self) -> [Rect; 4] {
        let hw = self.w / 2;
        let hh = self.h / 2;
        [
            Rect::new(self.x0, self.y0, hw, hh),
            Rect::new(self.x0 + hw, self.y0, self.w - hw, hh),
            Rect::new(self.x0, self.y0 + hh, hw, self.h - hh),
            Rect::new(self.x0 + hw, self.y0 + hh, self.w - hw, self.h - hh),
        ]
    }
}

/// Rescaling factor applied to a patch's source region to obtain its pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scale {
    Half,
    One,
    Two,
}

impl Scale {
    pub fn factor(self) -> f64 {
        match self {
            Scale::Half => 0.5,
            Scale::One => 1.0,
            Scale::Two => 2.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Scale::Half => 0,
            Scale::One => 1,
            Scale::Two => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Scale::Half),
            1 => Some(Scale::One),
            2 => Some(Scale::Two),
            _ => None,
        }
    }
}

/// Zero-padding region of a patch. Content occupies the top-left
/// `content_width x content_height` block; everything to the right or below
/// is padding and holds exact zeros.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PadMask {
    pub content_width: u32,
    pub content_height: u32,
}

impl PadMask {
    pub fn none() -> Self {
        Self {
            content_width: PATCH_SIZE as u32,
            content_height: PATCH_SIZE as u32,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.content_width as usize == PATCH_SIZE && self.content_height as usize == PATCH_SIZE
    }

    #[inline]
    pub fn is_padding(&self, x: usize, y: usize) -> bool {
        x >= self.content_width as usize || y >= self.content_height as usize
    }

    pub fn padded_pixels(&self) -> usize {
        PATCH_SIZE * PATCH_SIZE - (self.content_width as usize * self.content_height as usize)
    }
}

/// A 224x224 raster together with where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pixels: PixelGrid,
    image_id: String,
    source: Rect,
    scale: Scale,
    pad: PadMask,
    flipped: bool,
}

impl Patch {
    pub fn new(
        pixels: PixelGrid,
        image_id: impl Into<String>,
        source: Rect,
        scale: Scale,
        pad: PadMask,
    ) -> Result<Self> {
        if pixels.height() != PATCH_SIZE || pixels.width() != PATCH_SIZE {
            return Err(Error::PatchSize {
                height: pixels.height(),
                width: pixels.width(),
            });
        }
        if pad.content_width as usize > PATCH_SIZE || pad.content_height as usize > PATCH_SIZE {
            return Err(Error::InvalidInput("pad mask exceeds patch bounds".into()));
        }
        Ok(Self {
            pixels,
            image_id: image_id.into(),
            source,
            scale,
            pad,
            flipped: false,
        })
    }

    /// A patch with no provenance beyond its own extent.
    pub fn from_pixels(pixels: PixelGrid) -> Result<Self> {
        Self::new(
            pixels,
            "",
            Rect::new(0, 0, PATCH_SIZE as u32, PATCH_SIZE as u32),
            Scale::One,
            PadMask::none(),
        )
    }

    pub fn pixels(&self) -> &PixelGrid {
        &self.pixels
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn source(&self) -> Rect {
        self.source
    }

    pub fn scale(&self) -> Scale {
        self.scale
    }

    pub fn pad_mask(&self) -> PadMask {
        self.pad
    }

    pub fn flipped(&self) -> bool {
        self.flipped
    }

    pub fn with_image_id(mut self, id: impl Into<String>) -> Self {
        self.image_id = id.into();
        self
    }

    pub(crate) fn set_flipped(&mut self, flipped: bool) {
        self.flipped = flipped;
    }

    /// Horizontal mirror of the pixels; provenance is kept and marked flipped.
    pub fn flipped_horizontally(&self) -> Patch {
        let mut out = self.clone();
        out.pixels = self.pixels.flip_horizontal();
        out.flipped = !self.flipped;
        out
    }
}

/// Splits `image` into `ceil(H/224) x ceil(W/224)` non-overlapping patches in
/// row-major order, zero-padding the right and bottom edges.
pub fn tile(image: &PixelGrid) -> Result<Vec<Patch>> {
    tile_with_id("", image)
}

pub fn tile_with_id(image_id: &str, image: &PixelGrid) -> Result<Vec<Patch>> {
    if image.is_empty() {
        return Err(Error::InvalidInput("cannot tile an empty image".into()));
    }
    let (rows, cols) = tile_grid(image.height(), image.width());
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x0 = c * PATCH_SIZE;
            let y0 = r * PATCH_SIZE;
            let pixels = image.crop_padded(x0, y0, PATCH_SIZE, PATCH_SIZE);
            let pad = PadMask {
                content_width: (image.width() - x0).min(PATCH_SIZE) as u32,
                content_height: (image.height() - y0).min(PATCH_SIZE) as u32,
            };
            let rect = Rect::new(x0 as u32, y0 as u32, PATCH_SIZE as u32, PATCH_SIZE as u32);
            patches.push(Patch {
                pixels,
                image_id: image_id.to_owned(),
                source: rect,
                scale: Scale::One,
                pad,
                flipped: false,
            });
        }
    }
    Ok(patches)
}

/// Tile rows and columns for an image of the given size.
pub fn tile_grid(height: usize, width: usize) -> (usize, usize) {
    (height.div_ceil(PATCH_SIZE), width.div_ceil(PATCH_SIZE))
}

/// Up-scaler: the four 112x112 quadrants (TL, TR, BL, BR), each enlarged to
/// 224x224 by bilinear interpolation.
pub fn upscale_split(p: &Patch) -> [Patch; 4] {
    let rects = p.source.quadrants();
    let offsets = [
        (0, 0),
        (HALF_PATCH, 0),
        (0, HALF_PATCH),
        (HALF_PATCH, HALF_PATCH),
    ];
    std::array::from_fn(|i| {
        let (qx, qy) = offsets[i];
        let quad = p.pixels.crop_padded(qx, qy, HALF_PATCH, HALF_PATCH);
        let pixels = resize_bilinear(&quad, PATCH_SIZE, PATCH_SIZE);
        let src_cw = (p.pad.content_width as usize)
            .saturating_sub(qx)
            .min(HALF_PATCH);
        let src_ch = (p.pad.content_height as usize)
            .saturating_sub(qy)
            .min(HALF_PATCH);
        let pad = PadMask {
            content_width: bilinear_content_extent(src_cw, HALF_PATCH, PATCH_SIZE) as u32,
            content_height: bilinear_content_extent(src_ch, HALF_PATCH, PATCH_SIZE) as u32,
        };
        Patch {
            pixels,
            image_id: p.image_id.clone(),
            source: rects[i],
            scale: Scale::Two,
            pad,
            flipped: p.flipped,
        }
    })
}

/// Down-scaler: area-average to 112x112 and place the result in the top-left
/// corner of a zero 224x224 canvas.
pub fn downscale_pad(p: &Patch) -> Patch {
    let small = resize_area(&p.pixels, HALF_PATCH, HALF_PATCH);
    let mut canvas = PixelGrid::zeros(PATCH_SIZE, PATCH_SIZE, p.pixels.channels());
    canvas.paste(&small, 0, 0);
    let pad = PadMask {
        content_width: area_content_extent(p.pad.content_width as usize, PATCH_SIZE, HALF_PATCH)
            as u32,
        content_height: area_content_extent(p.pad.content_height as usize, PATCH_SIZE, HALF_PATCH)
            as u32,
    };
    Patch {
        pixels: canvas,
        image_id: p.image_id.clone(),
        source: p.source,
        scale: Scale::Half,
        pad,
        flipped: p.flipped,
    }
}

/// Iso-scaler: the identity.
pub fn iso(p: &Patch) -> Patch {
    p.clone()
}

/// One output sample of a 1-D bilinear resampling: `(1 - frac) * src[i0] + frac * src[i1]`.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn bilinear_taps(dst_len: usize, src_len: usize) -> Vec<Tap> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|x| {
            let s = ((x as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src_len - 1);
            let i1 = (i0 + 1).min(src_len - 1);
            Tap {
                i0,
                i1,
                frac: s - i0 as f64,
            }
        })
        .collect()
}

/// Number of leading output samples that read any source sample below `src_extent`.
pub(crate) fn bilinear_content_extent(src_extent: usize, src_len: usize, dst_len: usize) -> usize {
    if src_extent >= src_len {
        return dst_len;
    }
    bilinear_taps(dst_len, src_len)
        .iter()
        .rposition(|t| t.i0 < src_extent || (t.frac > 0.0 && t.i1 < src_extent))
        .map_or(0, |x| x + 1)
}

pub(crate) fn area_content_extent(src_extent: usize, src_len: usize, dst_len: usize) -> usize {
    (src_extent * dst_len).div_ceil(src_len)
}

/// Bilinear resampling with half-pixel centers and clamped edges.
pub fn resize_bilinear(src: &PixelGrid, height: usize, width: usize) -> PixelGrid {
    assert!(!src.is_empty(), "cannot resample an empty grid");
    let c = src.channels();
    let xt = bilinear_taps(width, src.width());
    let yt = bilinear_taps(height, src.height());
    // Horizontal pass per source row; every output then lerps two of them.
    let row_len = src.width() * c;
    let out_row = width * c;
    let mut horiz = vec![0.0f64; src.height() * out_row];
    for (row, dst) in src
        .data
        .chunks_exact(row_len)
        .zip(horiz.chunks_exact_mut(out_row))
    {
        if c == 1 {
            for (tx, o) in xt.iter().zip(dst.iter_mut()) {
                let a = row[tx.i0] as f64;
                *o = a + (row[tx.i1] as f64 - a) * tx.frac;
            }
            continue;
        }
        for (tx, out) in xt.iter().zip(dst.chunks_exact_mut(c)) {
            let a = &row[tx.i0 * c..tx.i0 * c + c];
            let b = &row[tx.i1 * c..tx.i1 * c + c];
            for ((o, &a), &b) in out.iter_mut().zip(a).zip(b) {
                let a = a as f64;
                *o = a + (b as f64 - a) * tx.frac;
            }
        }
    }
    let mut data = vec![0.0f32; height * out_row];
    for (ty, out) in yt.iter().zip(data.chunks_exact_mut(out_row)) {
        let top = &horiz[ty.i0 * out_row..(ty.i0 + 1) * out_row];
        let bottom = &horiz[ty.i1 * out_row..(ty.i1 + 1) * out_row];
        for ((o, &t), &b) in out.iter_mut().zip(top).zip(bottom) {
            *o = ((t + (b - t) * ty.frac) as f32).clamp(0.0, 1.0);
        }
    }
    PixelGrid {
        height,
        width,
        channels: c,
        data,
    }
}

/// Source-overlap weights for one output sample of an area resampling.
fn area_weights(dst_len: usize, src_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|x| {
            let lo = x as f64 * scale;
            let hi = (x + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src_len);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)) / scale;
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging (box) resampling; exact block means for integer factors.
pub fn resize_area(src: &PixelGrid, height: usize, width: usize) -> PixelGrid {
    assert!(!src.is_empty(), "cannot resample an empty grid");
    let c = src.channels();
    let xw = area_weights(width, src.width());
    let yw = area_weights(height, src.height());
    // Horizontal pass into an f64 buffer, then vertical. Each output is a
    // running sum over its taps in order.
    let (row_in, row_out) = (src.width() * c, width * c);
    let mut rows = vec![0.0f64; src.height() * row_out];
    for (srow, dst) in src
        .data
        .chunks_exact(row_in)
        .zip(rows.chunks_exact_mut(row_out))
    {
        for (taps, out) in xw.iter().zip(dst.chunks_exact_mut(c)) {
            for (ch, o) in out.iter_mut().enumerate() {
                let mut v = 0.0;
                for &(i, w) in taps {
                    v += srow[i * c + ch] as f64 * w;
                }
                *o = v;
            }
        }
    }
    let mut data = Vec::with_capacity(height * row_out);
    let mut acc = vec![0.0f64; row_out];
    for taps in &yw {
        acc.fill(0.0);
        for &(i, w) in taps {
            for (a, &v) in acc.iter_mut().zip(&rows[i * row_out..(i + 1) * row_out]) {
                *a += v * w;
            }
        }
        data.extend(acc.iter().map(|&v| (v as f32).clamp(0.0, 1.0)));
    }
    PixelGrid {
        height,
        width,
        channels: c,
        data,
    }
}

/// Bilinear when enlarging, area averaging when shrinking (per axis).
pub fn resize(src: &PixelGrid, height: usize, width: usize) -> PixelGrid {
    if height == src.height() && width == src.width() {
        return src.clone();
    }
    if height >= src.height() && width >= src.width() {
        resize_bilinear(src, height, width)
    } else if height <= src.height() && width <= src.width() {
        resize_area(src, height, width)
    } else {
        let tmp = resize_area(src, height.min(src.height()), width.min(src.width()));
        resize_bilinear(&tmp, height, width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> PixelGrid {
        PixelGrid::from_fn(h, w, 1, |y, x, _| ((y * 7 + x * 13) % 101) as f32 / 100.0)
    }

    fn quadrant_patch(values: [f32; 4]) -> Patch {
        let g = PixelGrid::from_fn(PATCH_SIZE, PATCH_SIZE, 1, |y, x, _| {
            let q = (y >= HALF_PATCH) as usize * 2 + (x >= HALF_PATCH) as usize;
            values[q]
        });
        Patch::from_pixels(g).unwrap()
    }

    #[test]
    fn tile_exact_multiple() {
        let img = ramp(448, 672);
        let tiles = tile(&img).unwrap();
        assert_eq!(tiles.len(), 6);
        assert!(tiles.iter().all(|t| t.pad_mask().is_empty()));
        assert_eq!(tiles[2].source(), Rect::new(448, 0, 224, 224));
        assert_eq!(tiles[3].source(), Rect::new(0, 224, 224, 224));
    }

    #[test]
    fn tile_identity_case() {
        let img = ramp(224, 224);
        let tiles = tile(&img).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].pixels(), &img);
    }

    #[test]
    fn tile_pads_right_and_bottom() {
        let img = PixelGrid::filled(500, 500, 1, 0.5);
        let tiles = tile(&img).unwrap();
        assert_eq!(tiles.len(), 9);
        let last = &tiles[8];
        assert_eq!(last.pad_mask().content_width, 500 - 448);
        assert_eq!(last.pad_mask().content_height, 500 - 448);
        // 224 - 52 = 172 padded columns and rows.
        assert_eq!(PATCH_SIZE - last.pad_mask().content_width as usize, 172);
        assert_eq!(last.pixels().get(51, 51, 0), 0.5);
        assert_eq!(last.pixels().get(52, 10, 0), 0.0);
        assert_eq!(last.pixels().get(10, 52, 0), 0.0);
    }

    #[test]
    fn tile_rejects_empty() {
        let img = PixelGrid::zeros(0, 10, 1);
        assert!(matches!(tile(&img), Err(Error::InvalidInput(_))));
    }

    /// Per-sample bilinear with half-pixel centers: lerp along x in rows
    /// `y0` and `y1`, then along y.
    fn bilinear_reference(src: &PixelGrid, height: usize, width: usize) -> PixelGrid {
        let tap = |o: usize, dst: usize, len: usize| {
            let s = ((o as f64 + 0.5) * (len as f64 / dst as f64) - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(len - 1);
            (i0, (i0 + 1).min(len - 1), s - i0 as f64)
        };
        PixelGrid::from_fn(height, width, src.channels(), |y, x, c| {
            let (y0, y1, fy) = tap(y, height, src.height());
            let (x0, x1, fx) = tap(x, width, src.width());
            let row = |yy| {
                let a = src.get(yy, x0, c) as f64;
                a + (src.get(yy, x1, c) as f64 - a) * fx
            };
            let (t, b) = (row(y0), row(y1));
            (t + (b - t) * fy) as f32
        })
    }

    #[test]
    fn bilinear_matches_per_sample_reference() {
        for (channels, h, w, oh, ow) in [
            (1, 112, 112, 224, 224),
            (3, 37, 53, 224, 224),
            (1, 224, 224, 101, 67),
        ] {
            let src = PixelGrid::from_fn(h, w, channels, |y, x, c| {
                ((y * 31 + x * 17 + c * 7) % 97) as f32 / 96.0
            });
            let got = resize_bilinear(&src, oh, ow);
            let want = bilinear_reference(&src, oh, ow);
            let same = got
                .data()
                .iter()
                .zip(want.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{channels}ch {h}x{w} -> {oh}x{ow}");
        }
    }

    /// Per-sample area average: weighted row sums, then a weighted sum of those.
    fn area_reference(src: &PixelGrid, height: usize, width: usize) -> PixelGrid {
        let xw = area_weights(width, src.width());
        let yw = area_weights(height, src.height());
        PixelGrid::from_fn(height, width, src.channels(), |y, x, c| {
            let row = |yy: usize| -> f64 {
                xw[x]
                    .iter()
                    .map(|&(i, w)| src.get(yy, i, c) as f64 * w)
                    .sum()
            };
            yw[y].iter().map(|&(j, w)| row(j) * w).sum::<f64>() as f32
        })
    }

    #[test]
    fn area_matches_per_sample_reference() {
        for (channels, h, w, oh, ow) in [
            (1, 224, 224, 112, 112),
            (3, 224, 224, 112, 112),
            (1, 97, 131, 40, 29),
        ] {
            let src = PixelGrid::from_fn(h, w, channels, |y, x, c| {
                ((y * 29 + x * 11 + c * 5) % 89) as f32 / 88.0
            });
            let got = resize_area(&src, oh, ow);
            let want = area_reference(&src, oh, ow);
            let same = got
                .data()
                .iter()
                .zip(want.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "{channels}ch {h}x{w} -> {oh}x{ow}");
        }
    }

    #[test]
    fn constant_patch_upscales_to_constant() {
        let p = Patch::from_pixels(PixelGrid::filled(224, 224, 3, 0.37)).unwrap();
        for q in upscale_split(&p) {
            assert!(q.pixels().data().iter().all(|&v| v == 0.37));
            assert_eq!(q.scale(), Scale::Two);
        }
    }

    #[test]
    fn quadrant_means_survive_upscaling() {
        let p = quadrant_patch([0.1, 0.2, 0.3, 0.4]);
        let out = upscale_split(&p);
        for (q, want) in out.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((q.pixels().mean() - want).abs() < 1e-6);
        }
        assert_eq!(out[1].source(), Rect::new(112, 0, 112, 112));
        assert_eq!(out[2].source(), Rect::new(0, 112, 112, 112));
    }

    #[test]
    fn downscale_constant_and_zero() {
        let z = Patch::from_pixels(PixelGrid::zeros(224, 224, 1)).unwrap();
        assert!(downscale_pad(&z).pixels().data().iter().all(|&v| v == 0.0));

        let p = Patch::from_pixels(PixelGrid::filled(224, 224, 1, 0.8)).unwrap();
        let d = downscale_pad(&p);
        assert_eq!(d.scale(), Scale::Half);
        assert_eq!(d.pad_mask().content_width, 112);
        for y in 0..224 {
            for x in 0..224 {
                let v = d.pixels().get(y, x, 0);
                if x < 112 && y < 112 {
                    assert!((v - 0.8).abs() < 1e-6);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn downscale_of_padded_tile_keeps_zero_region() {
        let img = PixelGrid::filled(300, 300, 1, 0.9);
        let tiles = tile(&img).unwrap();
        let d = downscale_pad(&tiles[1]);
        let pad = d.pad_mask();
        assert_eq!(pad.content_width, 38);
        assert_eq!(pad.content_height, 112);
        for y in 0..224 {
            for x in 0..224 {
                if pad.is_padding(x, y) {
                    assert_eq!(d.pixels().get(y, x, 0), 0.0);
                }
            }
        }
    }

    #[test]
    fn upscale_of_padded_tile_marks_padding() {
        let img = PixelGrid::filled(300, 300, 1, 0.9);
        let tiles = tile(&img).unwrap();
        // Tile (0,1) has 76 content columns, all inside the left quadrants.
        let q = upscale_split(&tiles[1]);
        assert_eq!(q[1].pad_mask().content_width, 0);
        assert!(q[1].pixels().data().iter().all(|&v| v == 0.0));
        let pad = q[0].pad_mask();
        assert!(pad.content_width > 150 && pad.content_width < 160);
        for y in 0..224 {
            for x in 0..224 {
                if pad.is_padding(x, y) {
                    assert_eq!(q[0].pixels().get(y, x, 0), 0.0);
                }
            }
        }
    }

    #[test]
    fn iso_is_identity() {
        let p = Patch::from_pixels(ramp(224, 224)).unwrap();
        assert_eq!(iso(&p), p);
        assert_eq!(iso(&iso(&p)), iso(&p));
    }

    #[test]
    fn patch_rejects_wrong_size() {
        let r = Patch::from_pixels(PixelGrid::zeros(223, 224, 1));
        assert!(matches!(r, Err(Error::PatchSize { .. })));
    }

    #[test]
    fn pixel_grid_validates_range() {
        assert!(PixelGrid::new(1, 1, 1, vec![1.5]).is_err());
        assert!(PixelGrid::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(PixelGrid::new(1, 2, 1, vec![0.5]).is_err());
        assert!(PixelGrid::new(1, 1, 2, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn area_resize_non_integer_ratio_preserves_mean() {
        let g = ramp(90, 70);
        let r = resize_area(&g, 40, 30);
        assert!((r.mean() - g.mean()).abs() < 1e-5);
    }
}
