use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use clap::Args;
use serde::Serialize;
use trailcam_core::curation::{build_training_set, write_manifest, TrainingSetConfig};
use trailcam_core::imaging::io::save_png;
use trailcam_core::imaging::{classify_day_night, DayNight};
use trailcam_core::similarity::WindowGeometry;
use trailcam_core::synth::{generate_dataset, DatasetSpec};
use trailcam_core::{AnnotationRecord, BoundingBox, Label};

use super::site_seed;
use crate::config::{PipelineConfig, SiteEntry};
use crate::context::{emit, Context};
use crate::{CliError, CliResult, ManifestArgs};

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub sites: usize,
    #[arg(long, default_value_t = 2)]
    pub days: usize,
    #[arg(long, default_value_t = 40)]
    pub frames: usize,
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 240)]
    pub height: usize,
    #[arg(long, default_value_t = 200)]
    pub crop: usize,
    /// 1-based site whose later days show a displaced rock
    #[arg(long)]
    pub drift_site: Option<usize>,
}

#[derive(Serialize)]
struct SynthReport {
    records: usize,
    animal: usize,
    no_animal: usize,
    days: Vec<NaiveDate>,
    seed: u64,
    fountain_centers: BTreeMap<String, (f64, f64)>,
}

/// Writes a dataset plus `trailcam.toml` describing it, with drift and
/// baseline windows scaled to the crop the way 500/250 relates to 1500.
pub fn synth(ctx: &Context, a: &SynthArgs) -> CliResult<()> {
    if a.sites == 0 || a.days == 0 {
        return Err(CliError::Usage(
            "--sites and --days must be positive".into(),
        ));
    }
    if a.drift_site.is_some_and(|s| s == 0 || s > a.sites) {
        return Err(CliError::Usage(format!(
            "--drift-site must be within 1..={}",
            a.sites
        )));
    }
    let start = ctx
        .date
        .unwrap_or(NaiveDate::from_ymd_opt(2019, 7, 1).expect("valid date"));
    let days = (0..a.days as u64)
        .map(|d| {
            start
                .checked_add_days(Days::new(d))
                .ok_or_else(|| CliError::Usage("date out of range".into()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let spec = DatasetSpec {
        sites: a.sites,
        days: days.clone(),
        frames_per_day: a.frames,
        width: a.width,
        height: a.height,
        crop_size: a.crop,
        seed: ctx.cfg.seed,
        drift_site: a.drift_site.map(|s| s - 1),
    };
    let ds = generate_dataset(&spec, &ctx.out)?;

    let mut cfg = PipelineConfig {
        seed: ctx.cfg.seed,
        crop_size: a.crop,
        state_dir: Some("states".into()),
        images: Some("images".into()),
        templates: Some("templates".into()),
        ..PipelineConfig::default()
    };
    cfg.predictors.day = Some("oracle".into());
    cfg.predictors.night = Some("oracle".into());
    cfg.drift.geometry = WindowGeometry {
        window: (a.crop / 3).max(1),
        stride: (a.crop / 6).max(1),
    };
    cfg.baseline.region = (a.crop * 7 / 15).max(1);
    cfg.baseline.window = (a.crop / 15).max(1);
    cfg.baseline.stride = (a.crop / 30).max(1);
    for (site, c) in &ds.fountain_centers {
        cfg.sites.insert(
            site.clone(),
            SiteEntry {
                fountain_center: Some([c.0, c.1]),
                ..SiteEntry::default()
            },
        );
    }
    ctx.write_bytes("trailcam.toml", cfg.to_toml()?.as_bytes())?;

    let report = SynthReport {
        records: ds.records.len(),
        animal: ds
            .records
            .iter()
            .filter(|r| r.label == Label::Animal)
            .count(),
        no_animal: ds
            .records
            .iter()
            .filter(|r| r.label == Label::NoAnimal)
            .count(),
        days,
        seed: ctx.cfg.seed,
        fountain_centers: ds.fountain_centers,
    };
    ctx.write_json("synth.json", &report)?;
    emit(&report)
}

#[derive(Default, Serialize)]
struct SiteSummary {
    records: usize,
    animal: usize,
    no_animal: usize,
    boxes: usize,
    first_date: Option<NaiveDate>,
    last_date: Option<NaiveDate>,
}

#[derive(Serialize)]
struct IngestReport {
    records: usize,
    animal: usize,
    no_animal: usize,
    sites: BTreeMap<String, SiteSummary>,
}

pub fn ingest(ctx: &Context, manifest: &Path) -> CliResult<()> {
    let m = ctx.load_manifest(&ManifestArgs {
        manifest: manifest.to_path_buf(),
        images: None,
    })?;
    let mut sites: BTreeMap<String, SiteSummary> = BTreeMap::new();
    for r in &m.records {
        let d = ctx.record_date(r);
        let s = sites.entry(r.site_id.clone()).or_default();
        s.records += 1;
        match r.label {
            Label::Animal => s.animal += 1,
            Label::NoAnimal => s.no_animal += 1,
        }
        s.boxes += r.boxes.len();
        s.first_date = Some(s.first_date.map_or(d, |f| f.min(d)));
        s.last_date = Some(s.last_date.map_or(d, |l| l.max(d)));
    }
    let report = IngestReport {
        records: m.records.len(),
        animal: sites.values().map(|s| s.animal).sum(),
        no_animal: sites.values().map(|s| s.no_animal).sum(),
        sites,
    };
    ctx.write_json("ingest.json", &report)?;
    emit(&report)
}

#[derive(Default, Serialize)]
struct RetentionSummary {
    day_frames: usize,
    night_frames: usize,
    boxes: usize,
    kept: usize,
    retention: Option<f64>,
    passes: Option<bool>,
}

/// Boxes whose center falls in the window, shifted into crop coordinates
/// and clipped to it.
fn boxes_in_crop(
    boxes: &[BoundingBox],
    w: &trailcam_core::imaging::CropWindow,
) -> Vec<BoundingBox> {
    let (x0, y0, s) = (w.origin_x as f64, w.origin_y as f64, w.size as f64);
    boxes
        .iter()
        .filter(|b| {
            let (cx, cy) = b.center();
            w.contains_point(cx, cy)
        })
        .map(|b| {
            let (left, top) = ((b.x - x0).max(0.0), (b.y - y0).max(0.0));
            let (right, bottom) = ((b.x + b.w - x0).min(s), (b.y + b.h - y0).min(s));
            BoundingBox {
                x: left,
                y: top,
                w: right - left,
                h: bottom - top,
                class_name: b.class_name.clone(),
            }
        })
        .collect()
}

/// Writes day crops under `crops/` with a manifest in crop coordinates, and
/// the share of boxes each site's window keeps.
pub fn crop(ctx: &Context, a: &ManifestArgs) -> CliResult<()> {
    let m = ctx.load_manifest(a)?;
    let profiles = ctx.profiles(&m)?;
    let crops = ctx.day_crops(&m, &m.records, &profiles)?;
    let mut summary: BTreeMap<String, RetentionSummary> = profiles
        .keys()
        .map(|s| (s.clone(), RetentionSummary::default()))
        .collect();
    for r in &m.records {
        summary.get_mut(&r.site_id).expect("profiled").night_frames += 1;
    }
    let mut rows = Vec::new();
    let mut cropped_records = Vec::new();
    for c in &crops {
        let s = summary.get_mut(&c.record.site_id).expect("profiled");
        s.night_frames -= 1;
        s.day_frames += 1;
        let kept = boxes_in_crop(&c.record.boxes, &c.window);
        s.boxes += c.record.boxes.len();
        s.kept += kept.len();
        save_png(
            &c.image,
            &ctx.out
                .join("crops")
                .join(format!("{}.png", c.record.image_id)),
        )?;
        rows.push([
            c.record.image_id.clone(),
            c.record.site_id.clone(),
            c.window.origin_x.to_string(),
            c.window.origin_y.to_string(),
            c.window.size.to_string(),
            c.record.boxes.len().to_string(),
            kept.len().to_string(),
        ]);
        cropped_records.push(AnnotationRecord {
            label: if kept.is_empty() {
                Label::NoAnimal
            } else {
                Label::Animal
            },
            boxes: kept,
            ..c.record.clone()
        });
    }
    for s in summary.values_mut() {
        if s.boxes > 0 {
            let rate = s.kept as f64 / s.boxes as f64;
            s.retention = Some(rate);
            s.passes = Some(trailcam_core::curation::passes_retention(rate));
        }
    }
    ctx.write_csv("crops/manifest.csv", |buf| {
        Ok(write_manifest(&cropped_records, buf)?)
    })?;
    ctx.write_csv("crop_report.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record([
            "image_id", "site_id", "origin_x", "origin_y", "size", "boxes", "kept",
        ])
        .map_err(trailcam_core::Error::from)?;
        for r in &rows {
            w.write_record(r).map_err(trailcam_core::Error::from)?;
        }
        w.flush()
            .map_err(|e| trailcam_core::Error::io("crop_report.csv", e))?;
        Ok(())
    })?;
    ctx.write_json("crop.json", &summary)?;
    emit(&summary)
}

#[derive(Serialize)]
struct SetSummary {
    animal: usize,
    no_animal: usize,
    entries: usize,
    test: usize,
}

/// Routes every frame by hue and builds one training manifest per site and route.
pub fn sample(ctx: &Context, a: &ManifestArgs) -> CliResult<()> {
    let m = ctx.load_manifest(a)?;
    let profiles = ctx.profiles(&m)?;
    let frames = ctx.load_frames(&m, &m.records)?;
    let mut report: BTreeMap<String, BTreeMap<&'static str, SetSummary>> = BTreeMap::new();
    for (site, profile) in &profiles {
        let mut by_route: BTreeMap<DayNight, Vec<AnnotationRecord>> = BTreeMap::new();
        for (r, img) in m
            .records
            .iter()
            .zip(&frames)
            .filter(|(r, _)| &r.site_id == site)
        {
            by_route
                .entry(classify_day_night(img, &profile.day_night))
                .or_default()
                .push(r.clone());
        }
        for (route, records) in by_route {
            let base = match route {
                DayNight::Day => TrainingSetConfig::default(),
                DayNight::Night => TrainingSetConfig::night(),
            };
            let cfg = TrainingSetConfig {
                utc_offset_minutes: profile.utc_offset_minutes,
                seed: site_seed(ctx.cfg.seed, site) ^ route as u64,
                ..base
            };
            let set = build_training_set(&records, &cfg)?;
            let name = format!("training/{site}_{}.csv", route.as_str());
            ctx.write_csv(&name, |buf| Ok(set.write_csv(buf)?))?;
            report.entry(site.clone()).or_default().insert(
                route.as_str(),
                SetSummary {
                    animal: set.count(Label::Animal),
                    no_animal: set.count(Label::NoAnimal),
                    entries: set.entries.len(),
                    test: set
                        .entries
                        .iter()
                        .filter(|e| e.split == trailcam_core::curation::Split::Test)
                        .count(),
                },
            );
        }
    }
    ctx.write_json("sample.json", &report)?;
    emit(&report)
}
