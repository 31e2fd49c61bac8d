use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trailcam_core::explain::{
    find_twin, predict_crop, tn_experiment, tn_replay, tp_experiment, tp_replay,
    LocationDistribution, TnReplaySite, TpReplaySite, VarianceCheck,
};
use trailcam_core::imaging::io::load;
use trailcam_core::{Error, Label, TrailImage};

use crate::context::{emit, read_json, Context, Cropped, Manifest};
use crate::{CliError, CliResult, ManifestArgs};

/// What experiment commands print; the full report goes to a file.
#[derive(Debug, Serialize)]
struct Summary {
    experiment: String,
    mu0: f64,
    n: u64,
    successes: f64,
    success_rate: f64,
    t: Option<f64>,
    p_value: f64,
    upper_bound: f64,
    variance_check: VarianceCheck,
    skipped: usize,
}

fn manifest_for(
    ctx: &Context,
    manifest: Option<PathBuf>,
    images: Option<PathBuf>,
    cmd: &str,
) -> CliResult<Manifest> {
    let manifest =
        manifest.ok_or_else(|| CliError::Usage(format!("{cmd} needs a MANIFEST or --replay")))?;
    ctx.load_manifest(&ManifestArgs { manifest, images })
}

/// Day crops whose ground truth is `truth` and which the day binding also calls `truth`.
fn agreed(
    ctx: &Context,
    m: &Manifest,
    crops: Vec<Cropped>,
    truth: Label,
) -> CliResult<Vec<Cropped>> {
    let predictor = ctx.predictor(trailcam_core::imaging::DayNight::Day, m)?;
    let mut out = Vec::new();
    for c in crops.into_iter().filter(|c| c.record.label == truth) {
        if predict_crop(predictor.as_ref(), &c.image, &c.record.image_id)?.label == truth {
            out.push(c);
        }
    }
    Ok(out)
}

fn empty_pools(crops: &[Cropped]) -> BTreeMap<String, Vec<TrailImage>> {
    let mut pools: BTreeMap<String, Vec<TrailImage>> = BTreeMap::new();
    for c in crops.iter().filter(|c| c.record.label == Label::NoAnimal) {
        pools
            .entry(c.record.site_id.clone())
            .or_default()
            .push(c.image.clone());
    }
    pools
}

/// Prints the lowest-DISI empty frame for `image`.
pub fn twin(ctx: &Context, a: &ManifestArgs, image: &str) -> CliResult<()> {
    let m = ctx.load_manifest(a)?;
    let profiles = ctx.profiles(&m)?;
    let crops = ctx.day_crops(&m, &m.records, &profiles)?;
    let tp = crops
        .iter()
        .find(|c| c.record.image_id == image)
        .ok_or_else(|| {
            Error::UnknownImage(format!("{image} (not a day frame in the selection)"))
        })?;
    let pool: Vec<&TrailImage> = crops
        .iter()
        .filter(|c| {
            c.record.label == Label::NoAnimal
                && c.record.site_id == tp.record.site_id
                && c.record.image_id != image
        })
        .map(|c| &c.image)
        .collect();
    let rec = find_twin(&tp.image, pool, &ctx.cfg.disi)?;
    ctx.write_json(&format!("twin_{image}.json"), &rec)?;
    emit(&rec)
}

#[derive(Deserialize)]
struct TpReplayFile {
    sites: Vec<TpReplaySite>,
}

pub fn tp_exp(ctx: &Context, manifest: Option<PathBuf>, images: Option<PathBuf>) -> CliResult<()> {
    let report = if let Some(replay) = &ctx.replay {
        let f: TpReplayFile = read_json(replay)?;
        tp_replay(&f.sites, ctx.mu0)?
    } else {
        let m = manifest_for(ctx, manifest, images, "tp-exp")?;
        let profiles = ctx.profiles(&m)?;
        let crops = ctx.day_crops(&m, &m.records, &profiles)?;
        let pools = empty_pools(&crops);
        let predictor = ctx.predictor(trailcam_core::imaging::DayNight::Day, &m)?;
        let tps: Vec<TrailImage> = agreed(ctx, &m, crops, Label::Animal)?
            .into_iter()
            .map(|c| c.image)
            .collect();
        let report = tp_experiment(&tps, &pools, predictor.as_ref(), &ctx.cfg.disi, ctx.mu0)?;
        ctx.write_csv("tp_twins.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record([
                "tp_image_id",
                "twin_id",
                "disi",
                "time_term",
                "dissim_term",
                "twin_label",
                "success",
            ])
            .map_err(Error::from)?;
            for t in &report.twins {
                w.write_record([
                    t.disi.tp_image_id.clone(),
                    t.disi.candidate_id.clone(),
                    t.disi.disi.to_string(),
                    t.disi.time_term.to_string(),
                    t.disi.dissim_term.to_string(),
                    t.twin_label.to_string(),
                    t.success.to_string(),
                ])
                .map_err(Error::from)?;
            }
            w.flush().map_err(|e| Error::io("tp_twins.csv", e))?;
            Ok(())
        })?;
        report
    };
    ctx.write_json("tp_report.json", &report)?;
    emit(&Summary {
        experiment: report.experiment.clone(),
        mu0: report.mu0,
        n: report.n,
        successes: report.successes,
        success_rate: report.successes / report.n as f64,
        t: report.t,
        p_value: report.p_value,
        upper_bound: report.upper_bound,
        variance_check: report.variance_check,
        skipped: report.skipped.len(),
    })
}

#[derive(Deserialize)]
struct TnReplayFile {
    sites: Vec<TnReplaySite>,
}

fn load_templates(dir: &Path) -> CliResult<Vec<TrailImage>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Usage(format!(
            "no PNG templates in {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| load(p).map_err(CliError::from))
        .collect()
}

pub fn tn_exp(
    ctx: &Context,
    manifest: Option<PathBuf>,
    images: Option<PathBuf>,
    templates: Option<PathBuf>,
) -> CliResult<()> {
    let report = if let Some(replay) = &ctx.replay {
        let f: TnReplayFile = read_json(replay)?;
        tn_replay(&f.sites, ctx.mu0)?
    } else {
        let m = manifest_for(ctx, manifest, images, "tn-exp")?;
        let template_dir = templates
            .or_else(|| ctx.cfg.templates.clone())
            .unwrap_or_else(|| m.dir.join("templates"));
        let templates = load_templates(&template_dir)?;
        let profiles = ctx.profiles(&m)?;
        let crops = ctx.day_crops(&m, &m.records, &profiles)?;
        // animal locations in crop coordinates, one window per site
        let mut dists = BTreeMap::new();
        for (site, p) in &profiles {
            let Some(c) = crops.iter().find(|c| &c.record.site_id == site) else {
                continue;
            };
            let origin = (c.window.origin_x as f64, c.window.origin_y as f64);
            match LocationDistribution::from_records(
                site,
                &m.all,
                origin,
                p.crop_size,
                p.crop_size,
                ctx.cfg.jitter_radius,
            ) {
                Ok(d) => {
                    dists.insert(site.clone(), d);
                }
                Err(e) => log::warn!("site {site}: {e}"),
            }
        }
        let predictor = ctx.predictor(trailcam_core::imaging::DayNight::Day, &m)?;
        let tns: Vec<TrailImage> = agreed(ctx, &m, crops, Label::NoAnimal)?
            .into_iter()
            .map(|c| c.image)
            .collect();
        let report = tn_experiment(
            &tns,
            &templates,
            &dists,
            predictor.as_ref(),
            ctx.mu0,
            ctx.cfg.seed,
        )?;
        ctx.write_csv("tn_trials.csv", |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for t in &report.trials {
                w.serialize(t).map_err(Error::from)?;
            }
            w.flush().map_err(|e| Error::io("tn_trials.csv", e))?;
            Ok(())
        })?;
        report
    };
    ctx.write_json("tn_report.json", &report)?;
    emit(&Summary {
        experiment: report.experiment.clone(),
        mu0: report.mu0,
        n: report.n,
        successes: report.successes,
        success_rate: report.successes / report.n as f64,
        t: report.t,
        p_value: report.p_value,
        upper_bound: report.upper_bound,
        variance_check: report.variance_check,
        skipped: report.skipped.len(),
    })
}
