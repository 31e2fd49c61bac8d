//! Image representation and the geometric/photometric preprocessing steps:
//! grayscale conversion, day/night routing, fountain-centered cropping,
//! resizing, flip augmentation and mean-image accumulation.
//!
//! Intensities are `f32` in `[0, 1]`, row-major, channel-interleaved.

mod color;
pub mod io;
mod mean;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::record::{AnnotationRecord, BoundingBox};
use crate::{Error, Result};

pub use color::{classify_day_night, rgb_to_hsl, DayNight, DayNightParams};
pub use mean::MeanImage;

/// Default side of the square fountain crop.
pub const DEFAULT_CROP_SIZE: usize = 1500;
/// Input side expected by the classifiers.
pub const MODEL_INPUT_SIDE: usize = 299;
/// Bin size of the box-center histogram used to locate the fountain.
pub const FOUNTAIN_BIN_PX: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptureKind {
    /// Triggered by the motion sensor.
    Motion,
    /// Taken on the periodic timer.
    Diagnostic,
}

impl CaptureKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CaptureKind::Motion => "motion",
            CaptureKind::Diagnostic => "diagnostic",
        }
    }
}

impl fmt::Display for CaptureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaptureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "motion" => Ok(CaptureKind::Motion),
            "diagnostic" | "interval" | "timer" => Ok(CaptureKind::Diagnostic),
            other => Err(Error::invalid(format!("unknown capture kind `{other}`"))),
        }
    }
}

/// A captured frame plus the metadata the pipeline carries along with it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrailImage {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub site_id: String,
    pub capture_kind: CaptureKind,
}

/// Borrowed single-channel view used by the similarity code.
#[derive(Debug, Clone, Copy)]
pub struct Plane<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [f32],
}

impl<'a> Plane<'a> {
    pub fn new(width: usize, height: usize, data: &'a [f32]) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values for {width}x{height}", width * height),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Plane {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl TrailImage {
    /// Builds an image with placeholder metadata (timestamp 1, empty ids).
    pub fn from_pixels(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        let img = TrailImage {
            image_id: String::new(),
            width,
            height,
            channels,
            pixels,
            timestamp: 1,
            site_id: String::new(),
            capture_kind: CaptureKind::Motion,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::from_pixels(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn with_meta(
        mut self,
        image_id: impl Into<String>,
        site_id: impl Into<String>,
        timestamp: i64,
        capture_kind: CaptureKind,
    ) -> Self {
        self.image_id = image_id.into();
        self.site_id = site_id.into();
        self.timestamp = timestamp;
        self.capture_kind = capture_kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::invalid(format!(
                "channels must be 1 or 3, got {}",
                self.channels
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image has zero size"));
        }
        if self.pixels.len() != self.width * self.height * self.channels {
            return Err(Error::DimensionMismatch {
                expected: format!(
                    "{} values for {}x{}x{}",
                    self.width * self.height * self.channels,
                    self.width,
                    self.height,
                    self.channels
                ),
                actual: format!("{} values", self.pixels.len()),
            });
        }
        if let Some(v) = self.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        if self.timestamp <= 0 {
            return Err(Error::invalid(format!(
                "timestamp must be positive, got {}",
                self.timestamp
            )));
        }
        Ok(())
    }

    /// Copies metadata from `other` onto a new pixel buffer.
    fn derive(&self, width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Self {
        TrailImage {
            image_id: self.image_id.clone(),
            width,
            height,
            channels,
            pixels,
            timestamp: self.timestamp,
            site_id: self.site_id.clone(),
            capture_kind: self.capture_kind,
        }
    }

    pub fn plane(&self) -> Result<Plane<'_>> {
        if self.channels != 1 {
            return Err(Error::invalid(format!(
                "expected a single-channel image, got {} channels",
                self.channels
            )));
        }
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: &self.pixels,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// BT.601 luma. Single-channel input is returned unchanged.
pub fn to_grayscale(img: &TrailImage) -> TrailImage {
    if img.channels == 1 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
        .collect();
    img.derive(img.width, img.height, 1, pixels)
}

/// Replicates a single-channel image into three identical channels.
pub fn to_rgb(img: &TrailImage) -> TrailImage {
    if img.channels == 3 {
        return img.clone();
    }
    let pixels = img.pixels.iter().flat_map(|&v| [v, v, v]).collect();
    img.derive(img.width, img.height, 3, pixels)
}

/// Square crop placement in source-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropWindow {
    pub origin_x: usize,
    pub origin_y: usize,
    pub size: usize,
}

impl CropWindow {
    /// Places a `size`-sided window centered on `center`, clamping the origin
    /// so the window stays inside a `width`×`height` frame.
    pub fn centered(center: (f64, f64), size: usize, width: usize, height: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("crop size must be positive"));
        }
        if size > width.min(height) {
            return Err(Error::invalid(format!(
                "crop size {size} exceeds image dimension {width}x{height}"
            )));
        }
        let place = |c: f64, extent: usize| -> usize {
            let max = (extent - size) as f64;
            (c - size as f64 / 2.0).round().clamp(0.0, max) as usize
        };
        Ok(CropWindow {
            origin_x: place(center.0, width),
            origin_y: place(center.1, height),
            size,
        })
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let (x0, y0) = (self.origin_x as f64, self.origin_y as f64);
        let s = self.size as f64;
        x > x0 && x < x0 + s && y > y0 && y < y0 + s
    }

    pub fn contains_box(&self, b: &BoundingBox) -> bool {
        let (x0, y0) = (self.origin_x as f64, self.origin_y as f64);
        let s = self.size as f64;
        b.x >= x0 && b.y >= y0 && b.x + b.w <= x0 + s && b.y + b.h <= y0 + s
    }
}

pub fn crop(img: &TrailImage, window: &CropWindow) -> Result<TrailImage> {
    let CropWindow {
        origin_x,
        origin_y,
        size,
    } = *window;
    if origin_x + size > img.width || origin_y + size > img.height {
        return Err(Error::invalid(format!(
            "crop window {size}@({origin_x},{origin_y}) exceeds image {}x{}",
            img.width, img.height
        )));
    }
    let ch = img.channels;
    let mut pixels = Vec::with_capacity(size * size * ch);
    for y in origin_y..origin_y + size {
        let start = (y * img.width + origin_x) * ch;
        pixels.extend_from_slice(&img.pixels[start..start + size * ch]);
    }
    Ok(img.derive(size, size, ch, pixels))
}

/// Crops a `size`×`size` window centered on `center` (clamped, never padded).
pub fn crop_window(img: &TrailImage, center: (f64, f64), size: usize) -> Result<TrailImage> {
    let window = CropWindow::centered(center, size, img.width, img.height)?;
    crop(img, &window)
}

/// Locates the activity hot spot: the centroid of box centers falling in the
/// densest 50-pixel bin. Ties go to the smallest bin row, then column.
pub fn estimate_fountain_center(records: &[AnnotationRecord]) -> Result<(f64, f64)> {
    use std::collections::BTreeMap;

    let mut bins: BTreeMap<(i64, i64), (usize, f64, f64)> = BTreeMap::new();
    for b in records.iter().flat_map(|r| &r.boxes) {
        let (cx, cy) = b.center();
        let key = (
            (cy / FOUNTAIN_BIN_PX).floor() as i64,
            (cx / FOUNTAIN_BIN_PX).floor() as i64,
        );
        let e = bins.entry(key).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += cx;
        e.2 += cy;
    }
    let mut best: Option<(usize, f64, f64)> = None;
    for &(n, sx, sy) in bins.values() {
        if best.is_none_or(|(bn, _, _)| n > bn) {
            best = Some((n, sx, sy));
        }
    }
    let (n, sx, sy) = best.ok_or(Error::NoActivityEvidence)?;
    Ok((sx / n as f64, sy / n as f64))
}

/// Bilinear resize to `side`×`side` using pixel-center alignment.
pub fn resize(img: &TrailImage, side: usize) -> Result<TrailImage> {
    resize_to(img, side, side)
}

pub fn resize_to(img: &TrailImage, new_w: usize, new_h: usize) -> Result<TrailImage> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    if (new_w, new_h) == (img.width, img.height) {
        return Ok(img.clone());
    }
    let ch = img.channels;
    let sx = img.width as f64 / new_w as f64;
    let sy = img.height as f64 / new_h as f64;
    let axis = |dst: usize, scale: f64, extent: usize| -> (usize, usize, f32) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(extent - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let cols: Vec<_> = (0..new_w).map(|x| axis(x, sx, img.width)).collect();
    let mut pixels = Vec::with_capacity(new_w * new_h * ch);
    for y in 0..new_h {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for &(x0, x1, fx) in &cols {
            for c in 0..ch {
                let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
                let bot = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
                pixels.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(img.derive(new_w, new_h, ch, pixels))
}

/// Mirrors the image about its vertical center line, carrying boxes along.
pub fn flip_horizontal(img: &TrailImage, boxes: &[BoundingBox]) -> (TrailImage, Vec<BoundingBox>) {
    let ch = img.channels;
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for row in img.pixels.chunks_exact(img.width * ch) {
        for px in row.chunks_exact(ch).rev() {
            pixels.extend_from_slice(px);
        }
    }
    let flipped = boxes.iter().map(|b| flip_box(b, img.width)).collect();
    (img.derive(img.width, img.height, ch, pixels), flipped)
}

pub fn flip_box(b: &BoundingBox, width: usize) -> BoundingBox {
    BoundingBox {
        x: width as f64 - b.x - b.w,
        ..b.clone()
    }
}
