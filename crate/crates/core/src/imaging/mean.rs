use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Plane, TrailImage};
use crate::{Error, Result};

/// Streaming per-pixel mean of single-channel frames.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanImage {
    width: usize,
    height: usize,
    sum: Vec<f64>,
    count: u64,
    mean: Vec<f32>,
}

/// Sidecar describing a persisted mean image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeanSidecar {
    pub width: usize,
    pub height: usize,
    pub count: u64,
    pub site_id: String,
    pub date: String,
}

impl MeanImage {
    pub fn new(width: usize, height: usize) -> Self {
        MeanImage {
            width,
            height,
            sum: vec![0.0; width * height],
            count: 0,
            mean: Vec::new(),
        }
    }

    /// Rebuilds an accumulator from already-averaged values.
    pub fn from_mean(width: usize, height: usize, mean: Vec<f32>, count: u64) -> Result<Self> {
        if mean.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", width * height),
                actual: format!("{} values", mean.len()),
            });
        }
        if count == 0 {
            return Err(Error::invalid("mean image with zero count"));
        }
        if let Some(v) = mean.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("mean intensity {v} outside [0, 1]")));
        }
        let sum = mean.iter().map(|&m| m as f64 * count as f64).collect();
        Ok(MeanImage {
            width,
            height,
            sum,
            count,
            mean,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn accumulate(&mut self, img: &TrailImage) -> Result<()> {
        if img.channels != 1 {
            return Err(Error::invalid(
                "mean accumulation needs single-channel frames",
            ));
        }
        if (img.width, img.height) != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", img.width, img.height),
            });
        }
        for (s, &p) in self.sum.iter_mut().zip(&img.pixels) {
            *s += p as f64;
        }
        self.count += 1;
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        let n = self.count as f64;
        self.mean = self
            .sum
            .iter()
            .map(|&s| ((s / n) as f32).clamp(0.0, 1.0))
            .collect();
    }

    /// Mean intensities; empty until at least one frame has been accumulated.
    pub fn values(&self) -> &[f32] {
        &self.mean
    }

    pub fn plane(&self) -> Result<Plane<'_>> {
        if self.count == 0 {
            return Err(Error::invalid("mean image has no accumulated frames"));
        }
        Plane::new(self.width, self.height, &self.mean)
    }

    pub fn to_image(&self) -> Result<TrailImage> {
        self.plane()?;
        TrailImage::from_pixels(self.width, self.height, 1, self.mean.clone())
    }

    /// Writes `<stem>.f32` (little-endian row-major floats) and `<stem>.json`.
    pub fn save(&self, stem: &Path, site_id: &str, date: &str) -> Result<()> {
        self.plane()?;
        let (raw, json) = sidecar_paths(stem);
        if let Some(dir) = raw.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes: Vec<u8> = self.mean.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
        let meta = MeanSidecar {
            width: self.width,
            height: self.height,
            count: self.count,
            site_id: site_id.to_string(),
            date: date.to_string(),
        };
        fs::write(&json, serde_json::to_vec(&meta)?).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<(Self, MeanSidecar)> {
        let (raw, json) = sidecar_paths(stem);
        let meta: MeanSidecar =
            serde_json::from_slice(&fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
        let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
        if bytes.len() != meta.width * meta.height * 4 {
            return Err(Error::DimensionMismatch {
                expected: format!("{} bytes", meta.width * meta.height * 4),
                actual: format!("{} bytes in {}", bytes.len(), raw.display()),
            });
        }
        let mean = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((
            Self::from_mean(meta.width, meta.height, mean, meta.count)?,
            meta,
        ))
    }
}

fn sidecar_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f32"), stem.with_extension("json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn gray(w: usize, h: usize, px: Vec<f32>) -> TrailImage {
        TrailImage::from_pixels(w, h, 1, px).unwrap()
    }

    #[test]
    fn two_constants_average() {
        let mut m = MeanImage::new(3, 2);
        m.accumulate(&gray(3, 2, vec![0.0; 6])).unwrap();
        m.accumulate(&gray(3, 2, vec![10.0 / 255.0; 6])).unwrap();
        assert!(m.values().iter().all(|&v| (v - 5.0 / 255.0).abs() < 1e-7));
        assert_eq!(m.count(), 2);
    }

    #[test]
    fn single_image_mean_is_identity() {
        let px = vec![0.1, 0.9, 0.33, 0.5];
        let mut m = MeanImage::new(2, 2);
        m.accumulate(&gray(2, 2, px.clone())).unwrap();
        assert_eq!(m.values(), &px[..]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut m = MeanImage::new(2, 2);
        assert!(m.accumulate(&gray(3, 2, vec![0.0; 6])).is_err());
        assert!(MeanImage::new(2, 2).plane().is_err());
    }

    #[test]
    fn streaming_matches_batch_and_order() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let frames: Vec<Vec<f32>> = (0..100)
            .map(|_| (0..35).map(|_| rng.gen::<f32>()).collect())
            .collect();
        let mut fwd = MeanImage::new(7, 5);
        let mut rev = MeanImage::new(7, 5);
        for f in &frames {
            fwd.accumulate(&gray(7, 5, f.clone())).unwrap();
        }
        for f in frames.iter().rev() {
            rev.accumulate(&gray(7, 5, f.clone())).unwrap();
        }
        for i in 0..35 {
            let batch = frames.iter().map(|f| f[i] as f64).sum::<f64>() / 100.0;
            assert!((fwd.values()[i] as f64 - batch).abs() < 1e-6);
            assert!((fwd.values()[i] - rev.values()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = MeanImage::new(4, 3);
        m.accumulate(&gray(4, 3, (0..12).map(|i| i as f32 / 13.0).collect()))
            .unwrap();
        m.accumulate(&gray(4, 3, vec![0.2; 12])).unwrap();
        let stem = dir.path().join("site/2019-07-01");
        m.save(&stem, "site", "2019-07-01").unwrap();
        let (back, meta) = MeanImage::load(&stem).unwrap();
        assert_eq!(back.values(), m.values());
        assert_eq!(back.count(), 2);
        assert_eq!(meta.site_id, "site");
        assert_eq!(meta.date, "2019-07-01");
        let raw = std::fs::read(stem.with_extension("f32")).unwrap();
        assert_eq!(raw.len(), 48);
        assert_eq!(&raw[4..8], &m.values()[1].to_le_bytes());
    }
}
