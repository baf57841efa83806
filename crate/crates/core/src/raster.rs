//! Pixel-level work: resize, tile split, thumbnail and JPEG-compression
//! augmentation over plain RGB8 buffers.

use crate::geometry::{GeometryError, ImageDims, TileLayout};
use crate::seed;
use image::imageops::{self, FilterType};
use image::{ImageBuffer, RgbImage};
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHANNELS: usize = 3;

/// Resize kernel name, recorded in manifests.
pub const RESIZE_KERNEL: &str = "bilinear";
/// Chroma subsampling used when re-encoding for augmentation.
pub const JPEG_CHROMA_SUBSAMPLING: &str = "4:2:0";

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("pixel buffer has {actual} bytes, expected {expected} for {width}x{height} RGB")]
    BufferSize {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("image is {actual_w}x{actual_h} but layout expects {expected_w}x{expected_h}")]
    LayoutMismatch {
        actual_w: u32,
        actual_h: u32,
        expected_w: u32,
        expected_h: u32,
    },
    #[error("invalid augmentation policy: quality range [{min}, {max}]")]
    InvalidPolicy { min: u8, max: u8 },
    #[error("jpeg round trip failed: {0}")]
    Augment(String),
    #[error("image too large for jpeg: {0}x{1}")]
    TooLarge(u32, u32),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

impl RasterError {
    pub fn code(&self) -> &'static str {
        match self {
            RasterError::BufferSize { .. } => "raster.decode",
            RasterError::Geometry(e) => e.code(),
            RasterError::LayoutMismatch { .. } => "raster.layout_mismatch",
            RasterError::InvalidPolicy { .. } => "raster.invalid_policy",
            RasterError::Augment(_) | RasterError::TooLarge(..) => "raster.augment",
            RasterError::Io { .. } => "raster.io",
        }
    }
}

/// Row-major RGB8 image.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    dims: ImageDims,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width())
            .field("height", &self.height())
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        let dims = ImageDims::new(width, height)?;
        let expected = width as usize * height as usize * CHANNELS;
        if pixels.len() != expected {
            return Err(RasterError::BufferSize {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self { dims, pixels })
    }

    pub fn filled(dims: ImageDims, rgb: [u8; 3]) -> Self {
        let n = dims.width() as usize * dims.height() as usize;
        let pixels = rgb.iter().copied().cycle().take(n * CHANNELS).collect();
        Self { dims, pixels }
    }

    pub fn from_fn(dims: ImageDims, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut pixels =
            Vec::with_capacity(dims.width() as usize * dims.height() as usize * CHANNELS);
        for y in 0..dims.height() {
            for x in 0..dims.width() {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self { dims, pixels }
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn width(&self) -> u32 {
        self.dims.width()
    }

    pub fn height(&self) -> u32 {
        self.dims.height()
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width() as usize + x as usize) * CHANNELS;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn row(&self, y: u32) -> &[u8] {
        let stride = self.width() as usize * CHANNELS;
        let start = y as usize * stride;
        &self.pixels[start..start + stride]
    }

    /// Copies a `width x height` window starting at `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, width: u32, height: u32) -> Result<Self, RasterError> {
        let dims = ImageDims::new(width, height)?;
        assert!(x0 + width <= self.width() && y0 + height <= self.height());
        let mut pixels = Vec::with_capacity(width as usize * height as usize * CHANNELS);
        let (a, b) = (x0 as usize * CHANNELS, (x0 + width) as usize * CHANNELS);
        for y in y0..y0 + height {
            pixels.extend_from_slice(&self.row(y)[a..b]);
        }
        Ok(Self { dims, pixels })
    }

    fn to_buffer(&self) -> RgbImage {
        ImageBuffer::from_raw(self.width(), self.height(), self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    fn from_buffer(buf: RgbImage) -> Result<Self, RasterError> {
        let (w, h) = buf.dimensions();
        Self::new(w, h, buf.into_raw())
    }
}

pub fn resize_image(img: &RasterImage, target: ImageDims) -> Result<RasterImage, RasterError> {
    if img.dims == target {
        return Ok(img.clone());
    }
    let out = imageops::resize(
        &img.to_buffer(),
        target.width(),
        target.height(),
        FilterType::Triangle,
    );
    RasterImage::from_buffer(out)
}

/// Crops the resized image into `layout.tile_count` square tiles, row-major.
pub fn split_tiles(
    img: &RasterImage,
    layout: &TileLayout,
) -> Result<Vec<RasterImage>, RasterError> {
    if img.dims != layout.resized {
        return Err(RasterError::LayoutMismatch {
            actual_w: img.width(),
            actual_h: img.height(),
            expected_w: layout.resized.width(),
            expected_h: layout.resized.height(),
        });
    }
    let side = layout.tile_side();
    let mut tiles = Vec::with_capacity(layout.tile_count as usize);
    for row in 0..layout.grid.rows {
        for col in 0..layout.grid.cols {
            tiles.push(img.crop(col * side, row * side, side, side)?);
        }
    }
    Ok(tiles)
}

/// Inverse of [`split_tiles`]: pastes row-major tiles back into one image.
pub fn assemble_tiles(
    tiles: &[RasterImage],
    layout: &TileLayout,
) -> Result<RasterImage, RasterError> {
    let side = layout.tile_side();
    let (cols, rows) = (layout.grid.cols, layout.grid.rows);
    if tiles.len() != (cols * rows) as usize {
        return Err(RasterError::LayoutMismatch {
            actual_w: tiles.len() as u32,
            actual_h: 1,
            expected_w: cols * rows,
            expected_h: 1,
        });
    }
    if let Some(t) = tiles
        .iter()
        .find(|t| t.width() != side || t.height() != side)
    {
        return Err(RasterError::LayoutMismatch {
            actual_w: t.width(),
            actual_h: t.height(),
            expected_w: side,
            expected_h: side,
        });
    }
    let dims = layout.resized;
    let mut pixels = Vec::with_capacity(dims.width() as usize * dims.height() as usize * CHANNELS);
    for row in 0..rows {
        for y in 0..side {
            for col in 0..cols {
                pixels.extend_from_slice(tiles[(row * cols + col) as usize].row(y));
            }
        }
    }
    RasterImage::new(dims.width(), dims.height(), pixels)
}

/// Square `tile_side` resize of the original (not the aspect-fitted) image.
pub fn make_thumbnail(original: &RasterImage, tile_side: u32) -> Result<RasterImage, RasterError> {
    resize_image(original, ImageDims::square(tile_side)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub quality_min: u8,
    pub quality_max: u8,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            quality_min: 75,
            quality_max: 100,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        if self.quality_min < 1 || self.quality_min > self.quality_max || self.quality_max > 100 {
            return Err(RasterError::InvalidPolicy {
                min: self.quality_min,
                max: self.quality_max,
            });
        }
        Ok(())
    }

    /// JPEG quality for one sample, uniform over `[quality_min, quality_max]`.
    pub fn draw_quality(&self, sample_key: u64) -> u8 {
        let mut rng = seed::rng(seed::derive_keys(self.seed, &[sample_key]));
        rng.random_range(self.quality_min..=self.quality_max)
    }
}

/// Encodes to JPEG at `quality` and decodes back.
pub fn jpeg_round_trip(img: &RasterImage, quality: u8) -> Result<RasterImage, RasterError> {
    let (w, h) = (img.width(), img.height());
    let (Ok(w16), Ok(h16)) = (u16::try_from(w), u16::try_from(h)) else {
        return Err(RasterError::TooLarge(w, h));
    };
    let mut encoded = Vec::new();
    let mut encoder = Encoder::new(&mut encoded, quality);
    encoder.set_sampling_factor(SamplingFactor::R_4_2_0);
    encoder
        .encode(img.pixels(), w16, h16, ColorType::Rgb)
        .map_err(|e| RasterError::Augment(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&encoded, image::ImageFormat::Jpeg)
        .map_err(|e| RasterError::Augment(e.to_string()))?
        .to_rgb8();
    let out = RasterImage::from_buffer(decoded)?;
    if out.dims != img.dims {
        return Err(RasterError::Augment("decoded dimensions differ".into()));
    }
    Ok(out)
}

/// Random JPEG compression. A disabled policy returns the input untouched;
/// an encode or decode failure logs a warning and passes the input through.
pub fn jpeg_compress_augment(
    img: &RasterImage,
    policy: &AugmentPolicy,
    sample_key: u64,
) -> RasterImage {
    if !policy.enabled {
        return img.clone();
    }
    let quality = policy.draw_quality(sample_key);
    match jpeg_round_trip(img, quality) {
        Ok(out) => out,
        Err(e) => {
            log::warn!("augmentation skipped for sample {sample_key}: {e}");
            img.clone()
        }
    }
}

pub fn load_image(path: &Path) -> Result<RasterImage, RasterError> {
    let img = image::open(path).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RasterImage::from_buffer(img.to_rgb8())
}

pub fn save_png(img: &RasterImage, path: &Path) -> Result<(), RasterError> {
    img.to_buffer()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })
}

/// Writes a baseline JPEG at exactly `quality` (1..=100).
pub fn save_jpeg(img: &RasterImage, path: &Path, quality: u8) -> Result<(), RasterError> {
    let io_err = |e: std::io::Error| RasterError::Io {
        path: path.display().to_string(),
        source: image::ImageError::IoError(e),
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut writer = std::io::BufWriter::new(file);
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut writer, quality);
    img.to_buffer()
        .write_with_encoder(encoder)
        .map_err(|source| RasterError::Io {
            path: path.display().to_string(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{plan_layout, TileBudget};

    fn dims(w: u32, h: u32) -> ImageDims {
        ImageDims::new(w, h).unwrap()
    }

    fn gradient(w: u32, h: u32) -> RasterImage {
        RasterImage::from_fn(dims(w, h), |x, y| {
            [
                (x % 256) as u8,
                (y % 256) as u8,
                ((x * 7 + y * 13) % 256) as u8,
            ]
        })
    }

    #[test]
    fn rejects_bad_buffers() {
        let err = RasterImage::new(2, 2, vec![0; 11]).unwrap_err();
        assert_eq!(err.code(), "raster.decode");
    }

    #[test]
    fn resize_to_layout_dims() {
        let img = gradient(800, 600);
        let out = resize_image(&img, dims(1792, 1344)).unwrap();
        assert_eq!(out.dims(), dims(1792, 1344));
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = gradient(37, 21);
        assert_eq!(resize_image(&img, img.dims()).unwrap(), img);
    }

    #[test]
    fn constant_field_stays_constant() {
        let img = RasterImage::filled(dims(10, 10), [12, 200, 77]);
        let out = resize_image(&img, dims(448, 448)).unwrap();
        assert!(out.pixels().chunks(3).all(|p| p == [12, 200, 77]));
        let thumb = make_thumbnail(&RasterImage::filled(dims(800, 600), [3, 4, 5]), 448).unwrap();
        assert_eq!(thumb.dims(), dims(448, 448));
        assert!(thumb.pixels().chunks(3).all(|p| p == [3, 4, 5]));
    }

    #[test]
    fn split_and_reassemble() {
        let layout = plan_layout(dims(800, 600), &TileBudget::up_to(12).unwrap(), true);
        let resized = resize_image(&gradient(800, 600), layout.resized).unwrap();
        let tiles = split_tiles(&resized, &layout).unwrap();
        assert_eq!(tiles.len(), 12);
        assert!(tiles.iter().all(|t| t.dims() == dims(448, 448)));
        // second tile starts one tile to the right
        assert_eq!(tiles[1].pixel(0, 0), resized.pixel(448, 0));
        assert_eq!(tiles[4].pixel(0, 0), resized.pixel(0, 448));
        assert_eq!(assemble_tiles(&tiles, &layout).unwrap(), resized);
    }

    #[test]
    fn single_tile_split_is_identity() {
        let layout = TileLayout::single(448).unwrap();
        let img = gradient(448, 448);
        assert_eq!(split_tiles(&img, &layout).unwrap(), vec![img]);
    }

    #[test]
    fn split_rejects_wrong_dims() {
        let layout = TileLayout::single(448).unwrap();
        let err = split_tiles(&gradient(10, 10), &layout).unwrap_err();
        assert_eq!(err.code(), "raster.layout_mismatch");
    }

    #[test]
    fn augmentation_preserves_shape_and_is_deterministic() {
        let img = gradient(64, 40);
        let policy = AugmentPolicy {
            seed: 9,
            ..AugmentPolicy::default()
        };
        let a = jpeg_compress_augment(&img, &policy, 17);
        let b = jpeg_compress_augment(&img, &policy, 17);
        assert_eq!(a.dims(), img.dims());
        assert_eq!(a.channels(), 3);
        assert_eq!(a, b);
        assert_eq!(
            jpeg_compress_augment(&img, &AugmentPolicy::disabled(), 17),
            img
        );
    }

    #[test]
    fn odd_sizes_survive_round_trip() {
        let img = gradient(17, 9);
        assert_eq!(jpeg_round_trip(&img, 75).unwrap().dims(), img.dims());
    }

    #[test]
    fn quality_draws_are_bounded_and_uniform() {
        let policy = AugmentPolicy {
            seed: 1234,
            ..AugmentPolicy::default()
        };
        let mut counts = [0u32; 26];
        let n = 10_000u32;
        for key in 0..u64::from(n) {
            let q = policy.draw_quality(key);
            assert!((75..=100).contains(&q));
            counts[(q - 75) as usize] += 1;
        }
        let expected = f64::from(n) / 26.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (f64::from(c) - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, 25 degrees of freedom, p = 0.01
        assert!(chi2 < 44.314, "chi2 = {chi2}");
    }

    #[test]
    fn policy_validation() {
        assert!(AugmentPolicy::default().validate().is_ok());
        let bad = AugmentPolicy {
            quality_min: 90,
            quality_max: 80,
            ..AugmentPolicy::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentPolicy {
            quality_min: 0,
            ..AugmentPolicy::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn png_and_jpeg_io() {
        let dir = tempfile::tempdir().unwrap();
        let img = gradient(20, 12);
        let png = dir.path().join("a.png");
        save_png(&img, &png).unwrap();
        assert_eq!(load_image(&png).unwrap(), img);
        let jpg = dir.path().join("a.jpg");
        save_jpeg(&img, &jpg, 90).unwrap();
        assert_eq!(load_image(&jpg).unwrap().dims(), img.dims());
        assert_eq!(
            load_image(&dir.path().join("missing.png"))
                .unwrap_err()
                .code(),
            "raster.io"
        );
    }
}
