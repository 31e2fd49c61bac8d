//! PNG/JPEG decoding and encoding. 8-bit samples map to `[0, 1]` by `/255`.

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};

use super::TrailImage;
use crate::record::AnnotationRecord;
use crate::{Error, Result};

const EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "PNG"];

/// Decodes an image file. Gray inputs stay single-channel, alpha is dropped.
pub fn load(path: &Path) -> Result<TrailImage> {
    let dynimg = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    let (width, height) = (dynimg.width() as usize, dynimg.height() as usize);
    let img = match dynimg {
        DynamicImage::ImageLuma8(g) => TrailImage::from_pixels(
            width,
            height,
            1,
            g.into_raw().into_iter().map(unit).collect(),
        )?,
        DynamicImage::ImageLuma16(g) => TrailImage::from_pixels(
            width,
            height,
            1,
            g.into_raw()
                .into_iter()
                .map(|v| v as f32 / 65535.0)
                .collect(),
        )?,
        other => {
            let rgb = other.to_rgb8();
            TrailImage::from_pixels(
                width,
                height,
                3,
                rgb.into_raw().into_iter().map(unit).collect(),
            )?
        }
    };
    Ok(img)
}

#[inline]
fn unit(v: u8) -> f32 {
    v as f32 / 255.0
}

#[inline]
fn byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads the file for a manifest record and stamps the record's metadata on it.
pub fn load_record(dir: &Path, record: &AnnotationRecord) -> Result<TrailImage> {
    let path = resolve_image_path(dir, &record.image_id)?;
    Ok(load(&path)?.with_meta(
        &record.image_id,
        &record.site_id,
        record.timestamp,
        record.capture_kind,
    ))
}

/// `<dir>/<image_id>` if it exists, else the first of `<image_id>.{png,jpg,jpeg}`.
pub fn resolve_image_path(dir: &Path, image_id: &str) -> Result<PathBuf> {
    let direct = dir.join(image_id);
    if direct.is_file() {
        return Ok(direct);
    }
    for ext in EXTENSIONS {
        let p = dir.join(format!("{image_id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::io(
        direct,
        std::io::Error::new(std::io::ErrorKind::NotFound, "no image file for id"),
    ))
}

pub fn save_png(img: &TrailImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes: Vec<u8> = img.pixels.iter().map(|&v| byte(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let res = if img.channels == 1 {
        GrayImage::from_raw(w, h, bytes).map(|g| g.save(path))
    } else {
        RgbImage::from_raw(w, h, bytes).map(|g| g.save(path))
    };
    match res {
        Some(Ok(())) => Ok(()),
        Some(Err(image::ImageError::IoError(e))) => Err(Error::io(path, e)),
        Some(Err(e)) => Err(Error::Image(e)),
        None => Err(Error::invalid("pixel buffer does not match image size")),
    }
}

/// Quantizes to 8 bits and back, i.e. what a PNG round trip produces.
pub fn quantize_8bit(img: &TrailImage) -> TrailImage {
    let mut out = img.clone();
    for v in &mut out.pixels {
        *v = unit(byte(*v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let px: Vec<f32> = (0..30).map(|i| (i * 8) as f32 / 255.0).collect();
        let img = TrailImage::from_pixels(5, 2, 3, px).unwrap();
        let path = dir.path().join("a.png");
        save_png(&img, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.channels, 3);
        assert_eq!(back.pixels, img.pixels);

        let g = TrailImage::from_pixels(2, 2, 1, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let p = dir.path().join("g.png");
        save_png(&g, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.channels, 1);
        assert_eq!(back, quantize_8bit(&g));
    }

    #[test]
    fn resolves_by_extension() {
        let dir = tempfile::tempdir().unwrap();
        let g = TrailImage::filled(2, 2, 1, 0.5).unwrap();
        save_png(&g, &dir.path().join("img7.png")).unwrap();
        assert!(resolve_image_path(dir.path(), "img7").is_ok());
        assert!(resolve_image_path(dir.path(), "img7.png").is_ok());
        let err = resolve_image_path(dir.path(), "nope").unwrap_err();
        assert!(err.is_io());
    }
}
