//! Synthetic trail-camera scenes.
//!
//! Scenes are gray value-noise textures with a bright fountain disc and a few
//! rocks. Every rendered value is a multiple of 1/256, so additive shifts by
//! such multiples are exact in `f32`. Day frames are green-tinted RGB, night
//! frames single-channel. Birds are dark ellipses pasted near the fountain.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::write_manifest;
use crate::imaging::io::save_png;
use crate::imaging::CaptureKind;
use crate::record::{AnnotationRecord, BoundingBox, Label};
use crate::{Error, Result, TrailImage};

pub const LEVELS: f32 = 256.0;

/// Rounds to the nearest multiple of 1/256 inside `[0, 255/256]`.
pub fn dyadic(v: f32) -> f32 {
    (v * LEVELS).round().clamp(0.0, LEVELS - 1.0) / LEVELS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rock {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    pub level: f32,
}

impl Rock {
    fn covers(&self, x: usize, y: usize) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

/// Static background of one site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub base: f32,
    pub texture_amp: f32,
    pub texture_cell: usize,
    pub fountain: Rock,
    pub rocks: Vec<Rock>,
}

impl SceneSpec {
    /// Fountain at the frame center and three seeded rocks around it.
    pub fn new(width: usize, height: usize, seed: u64) -> Self {
        let side = width.min(height) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ee_d0f5_ce7e);
        let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
        let rocks = (0..3)
            .map(|k| {
                let angle = (k as f64 + rng.gen_range(0.0..0.5)) * std::f64::consts::TAU / 3.0;
                let dist = side * rng.gen_range(0.22..0.3);
                Rock {
                    cx: cx + dist * angle.cos(),
                    cy: cy + dist * angle.sin(),
                    radius: side * rng.gen_range(0.08..0.1),
                    level: dyadic(rng.gen_range(0.22..0.32)),
                }
            })
            .collect();
        SceneSpec {
            width,
            height,
            seed,
            base: 0.5,
            texture_amp: 0.1,
            texture_cell: 8,
            fountain: Rock {
                cx,
                cy,
                radius: side / 12.0,
                level: dyadic(0.8),
            },
            rocks,
        }
    }

    pub fn fountain_center(&self) -> (f64, f64) {
        (self.fountain.cx, self.fountain.cy)
    }

    /// Same scene with one rock moved by `(dx, dy)`.
    pub fn displaced(&self, rock: usize, dx: f64, dy: f64) -> Result<SceneSpec> {
        let mut out = self.clone();
        let r = out
            .rocks
            .get_mut(rock)
            .ok_or_else(|| Error::invalid(format!("scene has no rock {rock}")))?;
        r.cx += dx;
        r.cy += dy;
        Ok(out)
    }

    /// Grayscale background, row-major.
    pub fn render(&self) -> Vec<f32> {
        let texture = value_noise(self.width, self.height, self.texture_cell, self.seed);
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let t = texture[y * self.width + x] * self.texture_amp;
                let shapes = std::iter::once(&self.fountain).chain(&self.rocks);
                let v = match shapes.filter(|r| r.covers(x, y)).next_back() {
                    Some(r) => r.level + 0.5 * t,
                    None => self.base + t,
                };
                out.push(dyadic(v));
            }
        }
        out
    }
}

/// Bilinear value noise in `[-1, 1]` on a lattice of `cell` pixels.
pub fn value_noise(width: usize, height: usize, cell: usize, seed: u64) -> Vec<f32> {
    let cell = cell.max(1);
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let gy = y / cell;
        let fy = (y % cell) as f32 / cell as f32;
        for x in 0..width {
            let gx = x / cell;
            let fx = (x % cell) as f32 / cell as f32;
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(gx, gy) * (1.0 - fx) + at(gx + 1, gy) * fx;
            let bot = at(gx, gy + 1) * (1.0 - fx) + at(gx + 1, gy + 1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Adds a constant to every pixel. Exact for multiples of 1/256 as long as
/// nothing leaves `[0, 1]`.
pub fn shifted(plane: &[f32], c: f32) -> Result<Vec<f32>> {
    let out: Vec<f32> = plane.iter().map(|v| v + c).collect();
    if out.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("shift would clip intensities"));
    }
    Ok(out)
}

/// Per-pixel uniform grain of at most `amp_levels`/256, re-quantized.
pub fn add_grain(plane: &[f32], amp_levels: i32, rng: &mut impl Rng) -> Vec<f32> {
    plane
        .iter()
        .map(|&v| dyadic(v + rng.gen_range(-amp_levels..=amp_levels) as f32 / LEVELS))
        .collect()
}

/// Green-tinted RGB frame whose channels are `(7g/8, g, g/2)`.
pub fn day_frame(gray: &[f32], width: usize, height: usize) -> Result<TrailImage> {
    let px = gray.iter().flat_map(|&g| [g * 0.875, g, g * 0.5]).collect();
    TrailImage::from_pixels(width, height, 3, px)
}

pub fn night_frame(gray: &[f32], width: usize, height: usize) -> Result<TrailImage> {
    TrailImage::from_pixels(width, height, 1, gray.iter().map(|&g| g * 0.5).collect())
}

/// Elliptic bird mask of a `w × h` patch.
fn in_ellipse(x: usize, y: usize, w: usize, h: usize) -> bool {
    let dx = (x as f64 + 0.5) / w as f64 - 0.5;
    let dy = (y as f64 + 0.5) / h as f64 - 0.5;
    dx * dx + dy * dy <= 0.25
}

/// Pastes a dark ellipse of `w × h` at top-left `(x0, y0)` into a gray plane,
/// clipped to the frame. Returns the box, or `None` if nothing landed.
pub fn paste_bird(
    plane: &mut [f32],
    width: usize,
    height: usize,
    (x0, y0): (i64, i64),
    (w, h): (usize, usize),
    level: f32,
) -> Option<BoundingBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for dy in 0..h {
        for dx in 0..w {
            let (x, y) = (x0 + dx as i64, y0 + dy as i64);
            if x < 0
                || y < 0
                || x >= width as i64
                || y >= height as i64
                || !in_ellipse(dx, dy, w, h)
            {
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            // a lighter band across the back breaks up the silhouette
            let v = if dy * 3 < h { level + 0.25 } else { level };
            plane[y * width + x] = dyadic(v);
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
    }
    bounds.map(|(a, b, c, d)| {
        BoundingBox::new(a as f64, b as f64, (c - a + 1) as f64, (d - b + 1) as f64)
            .with_class("bird")
    })
}

/// Rectangular gray bird patch on a flat light surround.
pub fn bird_template(side: usize, seed: u64) -> Result<TrailImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = (side as f64 * rng.gen_range(0.6..0.8)).round().max(2.0) as usize;
    let mut px = vec![dyadic(0.85); side * h];
    let level = dyadic(rng.gen_range(0.05..0.15));
    paste_bird(&mut px, side, h, (0, 0), (side, h), level);
    TrailImage::from_pixels(side, h, 1, px)
}

// ---------------------------------------------------------------------------
// Whole datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub sites: usize,
    pub days: Vec<NaiveDate>,
    pub frames_per_day: usize,
    pub width: usize,
    pub height: usize,
    pub crop_size: usize,
    pub seed: u64,
    /// Site index whose later days show a displaced rock.
    pub drift_site: Option<usize>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            sites: 3,
            days: vec![
                NaiveDate::from_ymd_opt(2019, 7, 1).expect("valid date"),
                NaiveDate::from_ymd_opt(2019, 7, 2).expect("valid date"),
            ],
            frames_per_day: 40,
            width: 320,
            height: 240,
            crop_size: 200,
            seed: 0,
            drift_site: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub records: Vec<AnnotationRecord>,
    pub fountain_centers: BTreeMap<String, (f64, f64)>,
    pub manifest: PathBuf,
    pub image_dir: PathBuf,
    pub templates: Vec<PathBuf>,
}

pub const TEMPLATE_COUNT: usize = 3;

/// Kind of frame in a day's schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    DayAnimal,
    DayEmpty(CaptureKind),
    NightAnimal,
    NightEmpty,
}

/// 40% day animals, 30% day empties (two thirds diagnostic), the rest night.
fn schedule(n: usize) -> Vec<Slot> {
    let day_animal = n * 2 / 5;
    let day_empty = n * 3 / 10;
    let night = n - day_animal - day_empty;
    let night_animal = night / 2;
    let mut out = Vec::with_capacity(n);
    out.extend(std::iter::repeat_n(Slot::DayAnimal, day_animal));
    for k in 0..day_empty {
        let kind = if k % 3 == 2 {
            CaptureKind::Motion
        } else {
            CaptureKind::Diagnostic
        };
        out.push(Slot::DayEmpty(kind));
    }
    out.extend(std::iter::repeat_n(Slot::NightAnimal, night_animal));
    out.extend(std::iter::repeat_n(Slot::NightEmpty, night - night_animal));
    out
}

pub fn site_id(index: usize) -> String {
    format!("site{}", index + 1)
}

/// Renders frames, templates and a manifest under `out_dir`:
/// `images/<id>.png`, `templates/template<k>.png`, `manifest.csv`.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<GeneratedDataset> {
    if spec.crop_size > spec.width.min(spec.height) {
        return Err(Error::invalid("crop size exceeds frame size"));
    }
    if spec.frames_per_day < 10 {
        return Err(Error::invalid("need at least 10 frames per day"));
    }
    let image_dir = out_dir.join("images");
    let template_dir = out_dir.join("templates");
    for d in [&image_dir, &template_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let (w, h) = (spec.width, spec.height);
    let bird_side = (spec.crop_size / 10).max(4);
    let mut records = Vec::new();
    let mut centers = BTreeMap::new();

    for s in 0..spec.sites {
        let site = site_id(s);
        let scene = SceneSpec::new(
            w,
            h,
            spec.seed.wrapping_mul(1000).wrapping_add(s as u64 + 1),
        );
        centers.insert(site.clone(), scene.fountain_center());
        for (d, date) in spec.days.iter().enumerate() {
            let today = match spec.drift_site {
                Some(ds) if ds == s && d > 0 => {
                    let side = w.min(h) as f64;
                    scene.displaced(0, -0.25 * side, 0.2 * side)?
                }
                _ => scene.clone(),
            };
            let background = today.render();
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed ^ ((s as u64 + 1) << 32) ^ (d as u64 + 1).wrapping_mul(0x9e37_79b9),
            );
            let slots = schedule(spec.frames_per_day);
            let (n_day, n_night) = (
                slots
                    .iter()
                    .filter(|s| matches!(s, Slot::DayAnimal | Slot::DayEmpty(_)))
                    .count(),
                slots
                    .iter()
                    .filter(|s| matches!(s, Slot::NightAnimal | Slot::NightEmpty))
                    .count(),
            );
            let (mut day_k, mut night_k) = (0usize, 0usize);
            for (k, slot) in slots.into_iter().enumerate() {
                let is_day = matches!(slot, Slot::DayAnimal | Slot::DayEmpty(_));
                // day frames spread over 07:00-17:00, night frames over 00:30-04:30
                let secs = if is_day {
                    day_k += 1;
                    7 * 3600 + (day_k - 1) * (10 * 3600) / n_day
                } else {
                    night_k += 1;
                    1800 + (night_k - 1) * (4 * 3600) / n_night
                } + rng.gen_range(0..60);
                let ts = date.and_time(NaiveTime::MIN).and_utc().timestamp() + secs as i64;
                let mut gray = add_grain(&background, 2, &mut rng);
                let mut boxes = Vec::new();
                if matches!(slot, Slot::DayAnimal | Slot::NightAnimal) {
                    let (fx, fy) = today.fountain_center();
                    let reach = spec.crop_size as f64 / 4.0;
                    let bw = bird_side + rng.gen_range(0..=bird_side / 2);
                    let bh = (bw * 2 / 3).max(2);
                    let cx = fx + rng.gen_range(-reach..reach);
                    let cy = fy + rng.gen_range(-reach..reach);
                    let origin = (
                        (cx - bw as f64 / 2.0).round() as i64,
                        (cy - bh as f64 / 2.0).round() as i64,
                    );
                    let level = if is_day { 0.08 } else { 0.95 };
                    if let Some(b) = paste_bird(&mut gray, w, h, origin, (bw, bh), level) {
                        boxes.push(b);
                    }
                }
                let img = if is_day {
                    day_frame(&gray, w, h)?
                } else {
                    night_frame(&gray, w, h)?
                };
                let id = format!("{site}_{}_{k:03}", date.format("%Y%m%d"));
                save_png(&img, &image_dir.join(format!("{id}.png")))?;
                let capture_kind = match slot {
                    Slot::DayEmpty(kind) => kind,
                    _ => CaptureKind::Motion,
                };
                records.push(AnnotationRecord {
                    image_id: id,
                    site_id: site.clone(),
                    timestamp: ts,
                    capture_kind,
                    label: if boxes.is_empty() {
                        Label::NoAnimal
                    } else {
                        Label::Animal
                    },
                    boxes,
                });
            }
        }
    }

    let mut templates = Vec::new();
    for k in 0..TEMPLATE_COUNT {
        let t = bird_template(bird_side + 2 * k, spec.seed.wrapping_add(101 + k as u64))?;
        let p = template_dir.join(format!("template{}.png", k + 1));
        save_png(&t, &p)?;
        templates.push(p);
    }

    let manifest = out_dir.join("manifest.csv");
    let file = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    write_manifest(&records, file)?;
    Ok(GeneratedDataset {
        records,
        fountain_centers: centers,
        manifest,
        image_dir,
        templates,
    })
}
