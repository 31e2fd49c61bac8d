use serde::{Deserialize, Serialize};

use super::TrailImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayNight {
    Day,
    Night,
}

impl DayNight {
    pub fn as_str(&self) -> &'static str {
        match self {
            DayNight::Day => "day",
            DayNight::Night => "night",
        }
    }
}

/// Thresholds on frame-averaged HSL saturation and hue (degrees).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DayNightParams {
    pub min_saturation: f64,
    pub min_hue_deg: f64,
}

impl Default for DayNightParams {
    fn default() -> Self {
        DayNightParams {
            min_saturation: 0.05,
            min_hue_deg: 10.0,
        }
    }
}

/// RGB in `[0,1]` to (hue in degrees `[0, 360)`, saturation, lightness).
/// Achromatic pixels get hue 0.
pub fn rgb_to_hsl(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let l = (max + min) / 2.0;
    let chroma = max - min;
    if chroma <= 0.0 {
        return (0.0, 0.0, l);
    }
    let s = chroma / (1.0 - (2.0 * l - 1.0).abs());
    let h = if max == r {
        60.0 * ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / chroma + 2.0)
    } else {
        60.0 * ((r - g) / chroma + 4.0)
    };
    (h % 360.0, s.min(1.0), l)
}

/// IR frames are monochrome, so single-channel input is always `Night`.
pub fn classify_day_night(img: &TrailImage, params: &DayNightParams) -> DayNight {
    if img.channels != 3 {
        return DayNight::Night;
    }
    let (mut sum_h, mut sum_s) = (0.0f64, 0.0f64);
    for px in img.pixels.chunks_exact(3) {
        let (h, s, _) = rgb_to_hsl(px[0] as f64, px[1] as f64, px[2] as f64);
        sum_h += h;
        sum_s += s;
    }
    let n = (img.width * img.height) as f64;
    if sum_s / n < params.min_saturation || sum_h / n < params.min_hue_deg {
        DayNight::Night
    } else {
        DayNight::Day
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Independent HSL oracle following the piecewise "hue sextant" form with
    /// explicit lightness branches for saturation.
    fn oracle_hsl(r: f64, g: f64, b: f64) -> (f64, f64) {
        let mut v = [(r, 0usize), (g, 1), (b, 2)];
        v.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));
        let (lo, hi) = (v[0].0, v[2].0);
        let l = (hi + lo) / 2.0;
        if hi == lo {
            return (0.0, 0.0);
        }
        let d = hi - lo;
        let s = if l <= 0.5 {
            d / (hi + lo)
        } else {
            d / (2.0 - hi - lo)
        };
        let h = if r == hi {
            let x = (g - b) / d;
            if x < 0.0 {
                x + 6.0
            } else {
                x
            }
        } else if g == hi {
            2.0 + (b - r) / d
        } else {
            4.0 + (r - g) / d
        };
        ((h * 60.0) % 360.0, s)
    }

    fn image(w: usize, h: usize, px: [f32; 3]) -> TrailImage {
        TrailImage::from_pixels(w, h, 3, (0..w * h).flat_map(|_| px).collect()).unwrap()
    }

    #[test]
    fn gray_frames_are_night() {
        let p = DayNightParams::default();
        assert_eq!(
            classify_day_night(&image(5, 5, [0.4, 0.4, 0.4]), &p),
            DayNight::Night
        );
        let mono = TrailImage::filled(4, 4, 1, 0.7).unwrap();
        assert_eq!(classify_day_night(&mono, &p), DayNight::Night);
    }

    #[test]
    fn sky_blue_is_day() {
        // HSL(210°, 0.8, 0.5) -> RGB(0.1, 0.5, 0.9)
        let (h, s, l) = rgb_to_hsl(0.1, 0.5, 0.9);
        assert!((h - 210.0).abs() < 1e-9 && (s - 0.8).abs() < 1e-9 && (l - 0.5).abs() < 1e-12);
        let p = DayNightParams::default();
        assert_eq!(
            classify_day_night(&image(6, 4, [0.1, 0.5, 0.9]), &p),
            DayNight::Day
        );
    }

    #[test]
    fn matches_brute_force_oracle_on_random_images() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let params = DayNightParams::default();
        let mut labels = [0usize; 2];
        for _ in 0..1000 {
            let (w, h) = (rng.gen_range(1..6), rng.gen_range(1..6));
            // mix of saturated, weakly tinted and reddish frames
            let mode = rng.gen_range(0..3);
            let px: Vec<f32> = (0..w * h)
                .flat_map(|_| {
                    let base: f32 = rng.gen();
                    match mode {
                        0 => [rng.gen(), rng.gen(), rng.gen()],
                        1 => [
                            base,
                            (base + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0),
                            base,
                        ],
                        _ => [
                            base,
                            base * rng.gen_range(0.0..0.2),
                            base * rng.gen_range(0.0..0.2),
                        ],
                    }
                })
                .collect();
            let img = TrailImage::from_pixels(w, h, 3, px).unwrap();
            let (mut hs, mut ss) = (0.0, 0.0);
            for p in img.pixels.chunks_exact(3) {
                let (hh, s) = oracle_hsl(p[0] as f64, p[1] as f64, p[2] as f64);
                hs += hh;
                ss += s;
            }
            let n = (w * h) as f64;
            let want = if ss / n < params.min_saturation || hs / n < params.min_hue_deg {
                DayNight::Night
            } else {
                DayNight::Day
            };
            let got = classify_day_night(&img, &params);
            assert_eq!(got, want);
            labels[(got == DayNight::Day) as usize] += 1;
        }
        assert!(labels[0] > 50 && labels[1] > 50, "{labels:?}");
    }
}
