//! Statistical probes of what a classifier keys on.
//!
//! The TP experiment pairs each correctly classified animal frame with its
//! "twin", the most similar empty frame by DISI, and checks the twin is
//! called empty. The TN experiment pastes animal templates into correctly
//! classified empty frames and checks they are called animal. Both end in
//! a one-sided t-test of the success rate.

pub mod ttest;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gateway::{PredictInput, Prediction, Predictor, TEMPLATE_MARKER};
use crate::imaging::{resize, to_grayscale, DayNight, TrailImage, MODEL_INPUT_SIDE};
use crate::record::{AnnotationRecord, Label};
use crate::similarity::{similarity_index, SimilarityMode, SimilarityParams};
use crate::{Error, Result};

pub use ttest::{
    normal_approx_check, one_sided_t_test, ExperimentStats, VarianceCheck, DEFAULT_MU0,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisiRecord {
    pub tp_image_id: String,
    pub candidate_id: String,
    pub time_term: f64,
    pub dissim_term: f64,
    pub disi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DisiConfig {
    pub mode: SimilarityMode,
    pub params: SimilarityParams,
}

/// `|Δt| / 60 + (1 − SIM)` between two crops of the same site.
pub fn disi(tp: &TrailImage, cand: &TrailImage, cfg: &DisiConfig) -> Result<DisiRecord> {
    if tp.site_id != cand.site_id {
        return Err(Error::invalid(format!(
            "{} and {} come from different sites",
            tp.image_id, cand.image_id
        )));
    }
    let (a, b) = (to_grayscale(tp), to_grayscale(cand));
    let sim = similarity_index(&a.plane()?, &b.plane()?, cfg.mode, &cfg.params)?;
    let time_term = (tp.timestamp - cand.timestamp).unsigned_abs() as f64 / 60.0;
    let dissim_term = 1.0 - sim;
    Ok(DisiRecord {
        tp_image_id: tp.image_id.clone(),
        candidate_id: cand.image_id.clone(),
        time_term,
        dissim_term,
        disi: time_term + dissim_term,
    })
}

/// Lowest-DISI candidate; ties go to the earlier capture, then the smaller id.
pub fn find_twin<'a, I>(tp: &TrailImage, candidates: I, cfg: &DisiConfig) -> Result<DisiRecord>
where
    I: IntoIterator<Item = &'a TrailImage>,
{
    let mut best: Option<(DisiRecord, i64)> = None;
    for cand in candidates {
        let rec = disi(tp, cand, cfg)?;
        let better = match &best {
            None => true,
            Some((b, ts)) => {
                (rec.disi, cand.timestamp, rec.candidate_id.as_str())
                    < (b.disi, *ts, b.candidate_id.as_str())
            }
        };
        if better {
            best = Some((rec, cand.timestamp));
        }
    }
    best.map(|(r, _)| r)
        .ok_or_else(|| Error::invalid(format!("no twin candidates for {}", tp.image_id)))
}

// ---------------------------------------------------------------------------
// Template insertion

pub const DEFAULT_JITTER: f64 = 25.0;

/// Empirical distribution of animal locations at a site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationDistribution {
    pub site_id: String,
    pub points: Vec<(f64, f64)>,
    pub jitter_radius: f64,
    pub width: usize,
    pub height: usize,
}

impl LocationDistribution {
    pub fn new(
        site_id: impl Into<String>,
        points: Vec<(f64, f64)>,
        width: usize,
        height: usize,
        jitter_radius: f64,
    ) -> Result<Self> {
        let site_id = site_id.into();
        if points.is_empty() {
            return Err(Error::invalid(format!(
                "no animal locations for site {site_id}"
            )));
        }
        if jitter_radius < 0.0 {
            return Err(Error::invalid("jitter radius must be non-negative"));
        }
        if let Some(p) = points
            .iter()
            .find(|(x, y)| !(0.0..=width as f64).contains(x) || !(0.0..=height as f64).contains(y))
        {
            return Err(Error::invalid(format!(
                "location {p:?} outside {width}x{height}"
            )));
        }
        Ok(LocationDistribution {
            site_id,
            points,
            jitter_radius,
            width,
            height,
        })
    }

    /// Box centers of the site's records, shifted by `-origin` and kept if
    /// they land inside a `width × height` frame at that origin.
    pub fn from_records(
        site_id: &str,
        records: &[AnnotationRecord],
        origin: (f64, f64),
        width: usize,
        height: usize,
        jitter_radius: f64,
    ) -> Result<Self> {
        let points = records
            .iter()
            .filter(|r| r.site_id == site_id)
            .flat_map(|r| r.boxes.iter().map(|b| b.center()))
            .map(|(x, y)| (x - origin.0, y - origin.1))
            .filter(|(x, y)| (0.0..width as f64).contains(x) && (0.0..height as f64).contains(y))
            .collect();
        Self::new(site_id, points, width, height, jitter_radius)
    }

    /// A stored point chosen uniformly, plus uniform jitter per axis,
    /// clamped to the frame.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let (x, y) = self.points[rng.gen_range(0..self.points.len())];
        let r = self.jitter_radius;
        let (dx, dy) = if r > 0.0 {
            (rng.gen_range(-r..=r), rng.gen_range(-r..=r))
        } else {
            (0.0, 0.0)
        };
        (
            (x + dx).clamp(0.0, self.width as f64),
            (y + dy).clamp(0.0, self.height as f64),
        )
    }
}

/// Top-left corner of a `tw × th` template centered at `center`.
pub fn template_origin(center: (f64, f64), tw: usize, th: usize) -> (i64, i64) {
    (
        (center.0 - tw as f64 / 2.0).round() as i64,
        (center.1 - th as f64 / 2.0).round() as i64,
    )
}

/// Pastes `template` centered at `center`, clipped to the frame. An optional
/// mask (one weight in `[0, 1]` per template pixel) blends instead of
/// replacing. Gray templates go into color frames on all channels.
pub fn insert_template(
    tn: &TrailImage,
    template: &TrailImage,
    center: (f64, f64),
    mask: Option<&[f32]>,
) -> Result<TrailImage> {
    if template.width > tn.width || template.height > tn.height {
        return Err(Error::invalid(format!(
            "template {}x{} larger than frame {}x{}",
            template.width, template.height, tn.width, tn.height
        )));
    }
    if let Some(m) = mask {
        if m.len() != template.width * template.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} mask weights", template.width * template.height),
                actual: format!("{}", m.len()),
            });
        }
    }
    let tpl = match (tn.channels, template.channels) {
        (a, b) if a == b => template.clone(),
        (1, _) => to_grayscale(template),
        _ => crate::imaging::to_rgb(template),
    };
    let (ox, oy) = template_origin(center, tpl.width, tpl.height);
    let mut out = tn.clone();
    let c = tn.channels;
    for ty in 0..tpl.height {
        let y = oy + ty as i64;
        if y < 0 || y >= tn.height as i64 {
            continue;
        }
        for tx in 0..tpl.width {
            let x = ox + tx as i64;
            if x < 0 || x >= tn.width as i64 {
                continue;
            }
            let a = mask.map_or(1.0, |m| m[ty * tpl.width + tx].clamp(0.0, 1.0));
            let dst = (y as usize * tn.width + x as usize) * c;
            let src = (ty * tpl.width + tx) * c;
            for k in 0..c {
                let v = if a == 1.0 {
                    tpl.pixels[src + k]
                } else {
                    a * tpl.pixels[src + k] + (1.0 - a) * out.pixels[dst + k]
                };
                out.pixels[dst + k] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Experiments

/// Runs a predictor on an already-cropped day frame.
pub fn predict_crop(
    predictor: &dyn Predictor,
    img: &TrailImage,
    image_id: &str,
) -> Result<Prediction> {
    let model_input = resize(img, MODEL_INPUT_SIDE)?;
    let input = PredictInput {
        image_id,
        site_id: &img.site_id,
        route: DayNight::Day,
        prepared: img,
        model_input: &model_input,
    };
    predictor.predict(&input).map_err(|e| match e {
        e @ Error::Predictor { .. } => e,
        other => Error::Predictor {
            predictor_id: predictor.id().to_string(),
            cause: other.to_string(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub total: u64,
    pub successes: u64,
}

impl Tally {
    pub fn add(&mut self, success: bool) {
        self.total += 1;
        self.successes += success as u64;
    }

    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.successes as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub image_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinOutcome {
    #[serde(flatten)]
    pub disi: DisiRecord,
    pub twin_label: Label,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpReport {
    pub experiment: String,
    pub mu0: f64,
    pub n: u64,
    pub successes: f64,
    pub t: Option<f64>,
    pub p_value: f64,
    pub upper_bound: f64,
    pub degenerate: bool,
    pub variance_check: VarianceCheck,
    pub per_site: BTreeMap<String, Tally>,
    pub twins: Vec<TwinOutcome>,
    pub skipped: Vec<Skipped>,
}

fn tp_report(
    per_site: BTreeMap<String, Tally>,
    twins: Vec<TwinOutcome>,
    skipped: Vec<Skipped>,
    mu0: f64,
) -> Result<TpReport> {
    let n: u64 = per_site.values().map(|t| t.total).sum();
    let successes: u64 = per_site.values().map(|t| t.successes).sum();
    let stats = one_sided_t_test(n, successes as f64, mu0)?;
    Ok(TpReport {
        experiment: "tp".into(),
        mu0,
        n,
        successes: stats.successes,
        t: stats.t,
        p_value: stats.p_value,
        upper_bound: stats.upper_bound,
        degenerate: stats.degenerate,
        variance_check: stats.variance_check,
        per_site,
        twins,
        skipped,
    })
}

/// For each TP crop, finds its twin among the same site's empty crops and
/// asks the predictor about the twin. Sites without candidates are skipped.
pub fn tp_experiment(
    tp_images: &[TrailImage],
    pools: &BTreeMap<String, Vec<TrailImage>>,
    predictor: &dyn Predictor,
    disi_cfg: &DisiConfig,
    mu0: f64,
) -> Result<TpReport> {
    let mut per_site: BTreeMap<String, Tally> = BTreeMap::new();
    let mut twins = Vec::new();
    let mut skipped = Vec::new();
    for tp in tp_images {
        let pool = match pools.get(&tp.site_id) {
            Some(p) if !p.is_empty() => p,
            _ => {
                log::warn!("{}: no empty frames at site {}", tp.image_id, tp.site_id);
                skipped.push(Skipped {
                    image_id: tp.image_id.clone(),
                    reason: format!("no No-Animal candidates at site {}", tp.site_id),
                });
                continue;
            }
        };
        let rec = find_twin(tp, pool, disi_cfg)?;
        let twin = pool
            .iter()
            .find(|c| c.image_id == rec.candidate_id)
            .expect("twin comes from the pool");
        let pred = predict_crop(predictor, twin, &twin.image_id)?;
        let success = pred.label == Label::NoAnimal;
        per_site.entry(tp.site_id.clone()).or_default().add(success);
        twins.push(TwinOutcome {
            disi: rec,
            twin_label: pred.label,
            success,
        });
    }
    tp_report(per_site, twins, skipped, mu0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpReplaySite {
    pub site_id: String,
    pub total: u64,
    pub successes: u64,
}

/// Statistics from per-site counts alone.
pub fn tp_replay(sites: &[TpReplaySite], mu0: f64) -> Result<TpReport> {
    let mut per_site = BTreeMap::new();
    for s in sites {
        if s.successes > s.total {
            return Err(Error::invalid(format!(
                "site {}: {} of {}",
                s.site_id, s.successes, s.total
            )));
        }
        per_site.insert(
            s.site_id.clone(),
            Tally {
                total: s.total,
                successes: s.successes,
            },
        );
    }
    tp_report(per_site, Vec::new(), Vec::new(), mu0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateTrial {
    pub tn_image_id: String,
    pub template: usize,
    pub x: f64,
    pub y: f64,
    pub label: Label,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnReport {
    pub experiment: String,
    pub mu0: f64,
    /// Number of TN images.
    pub n: u64,
    /// Mean over templates of the per-template success count.
    pub successes: f64,
    pub t: Option<f64>,
    pub p_value: f64,
    pub upper_bound: f64,
    pub degenerate: bool,
    pub variance_check: VarianceCheck,
    pub per_template: Vec<Tally>,
    pub per_site: BTreeMap<String, Vec<Tally>>,
    /// Every disturbed frame counted as its own sample.
    pub pooled: ExperimentStats,
    pub trials: Vec<TemplateTrial>,
    pub skipped: Vec<Skipped>,
}

fn tn_report(
    per_site: BTreeMap<String, Vec<Tally>>,
    templates: usize,
    trials: Vec<TemplateTrial>,
    skipped: Vec<Skipped>,
    mu0: f64,
) -> Result<TnReport> {
    let mut per_template = vec![Tally::default(); templates];
    for tallies in per_site.values() {
        for (k, t) in tallies.iter().enumerate() {
            per_template[k].total += t.total;
            per_template[k].successes += t.successes;
        }
    }
    let n = per_template.iter().map(|t| t.total).max().unwrap_or(0);
    let rates: Vec<f64> = per_template.iter().filter_map(Tally::rate).collect();
    if rates.is_empty() {
        return Err(Error::invalid("no template trials were run"));
    }
    let mean_rate = rates.iter().sum::<f64>() / rates.len() as f64;
    let successes = mean_rate * n as f64;
    let stats = one_sided_t_test(n, successes, mu0)?;
    let pooled_n: u64 = per_template.iter().map(|t| t.total).sum();
    let pooled_s: u64 = per_template.iter().map(|t| t.successes).sum();
    Ok(TnReport {
        experiment: "tn".into(),
        mu0,
        n,
        successes,
        t: stats.t,
        p_value: stats.p_value,
        upper_bound: stats.upper_bound,
        degenerate: stats.degenerate,
        variance_check: stats.variance_check,
        per_template,
        per_site,
        pooled: one_sided_t_test(pooled_n, pooled_s as f64, mu0)?,
        trials,
        skipped,
    })
}

pub fn disturbed_id(image_id: &str, template: usize) -> String {
    format!("{image_id}{TEMPLATE_MARKER}{template}")
}

/// Pastes each template once into every TN crop at a location drawn from the
/// site's distribution, and asks the predictor. Template numbers are
/// 1-based in ids and reports.
pub fn tn_experiment(
    tn_images: &[TrailImage],
    templates: &[TrailImage],
    dists: &BTreeMap<String, LocationDistribution>,
    predictor: &dyn Predictor,
    mu0: f64,
    seed: u64,
) -> Result<TnReport> {
    if templates.is_empty() {
        return Err(Error::invalid("no templates"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_site: BTreeMap<String, Vec<Tally>> = BTreeMap::new();
    let mut trials = Vec::new();
    let mut skipped = Vec::new();
    for tn in tn_images {
        let Some(dist) = dists.get(&tn.site_id) else {
            skipped.push(Skipped {
                image_id: tn.image_id.clone(),
                reason: format!("no location distribution for site {}", tn.site_id),
            });
            continue;
        };
        for (k, tpl) in templates.iter().enumerate() {
            let (x, y) = dist.sample(&mut rng);
            let id = disturbed_id(&tn.image_id, k + 1);
            let disturbed = match insert_template(tn, tpl, (x, y), None) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("{id}: {e}");
                    skipped.push(Skipped {
                        image_id: id,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let pred = predict_crop(predictor, &disturbed, &id)?;
            let success = pred.label == Label::Animal;
            per_site
                .entry(tn.site_id.clone())
                .or_insert_with(|| vec![Tally::default(); templates.len()])[k]
                .add(success);
            trials.push(TemplateTrial {
                tn_image_id: tn.image_id.clone(),
                template: k + 1,
                x,
                y,
                label: pred.label,
                success,
            });
        }
    }
    tn_report(per_site, templates.len(), trials, skipped, mu0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TnReplaySite {
    pub site_id: String,
    pub images: u64,
    /// One count per template.
    pub successes: Vec<u64>,
}

pub fn tn_replay(sites: &[TnReplaySite], mu0: f64) -> Result<TnReport> {
    let templates = sites.first().map_or(0, |s| s.successes.len());
    let mut per_site = BTreeMap::new();
    for s in sites {
        if s.successes.len() != templates {
            return Err(Error::invalid(format!(
                "site {} lists a different template count",
                s.site_id
            )));
        }
        if let Some(c) = s.successes.iter().find(|&&c| c > s.images) {
            return Err(Error::invalid(format!(
                "site {}: {c} of {}",
                s.site_id, s.images
            )));
        }
        per_site.insert(
            s.site_id.clone(),
            s.successes
                .iter()
                .map(|&c| Tally {
                    total: s.images,
                    successes: c,
                })
                .collect(),
        );
    }
    tn_report(per_site, templates, Vec::new(), Vec::new(), mu0)
}
