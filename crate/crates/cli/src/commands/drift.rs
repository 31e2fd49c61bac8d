use std::collections::BTreeMap;
use std::process::Command;

use chrono::NaiveDate;
use serde::Serialize;
use trailcam_core::drift::{
    build_daily_mean, check_drift, rti_heatmap, select_retraining_subset, BackgroundState,
    DriftDecision, RetrainCandidate, SubsetConfig,
};
use trailcam_core::imaging::io::save_png;
use trailcam_core::{AnnotationRecord, Error};

use super::site_seed;
use crate::context::{emit, Context, Manifest};
use crate::{CliError, CliResult, ManifestArgs, EXIT_OK, EXIT_RETRAIN};

/// Records grouped by site, then local date, both sorted.
fn by_site_day(
    ctx: &Context,
    m: &Manifest,
) -> BTreeMap<String, BTreeMap<NaiveDate, Vec<AnnotationRecord>>> {
    let mut out: BTreeMap<String, BTreeMap<NaiveDate, Vec<AnnotationRecord>>> = BTreeMap::new();
    for r in &m.records {
        out.entry(r.site_id.clone())
            .or_default()
            .entry(ctx.record_date(r))
            .or_default()
            .push(r.clone());
    }
    out
}

fn day_mean(
    ctx: &Context,
    m: &Manifest,
    site: &str,
    date: NaiveDate,
    records: &[AnnotationRecord],
) -> CliResult<BackgroundState> {
    let profile = ctx.profile(site, &m.all)?;
    let frames = ctx.load_frames(m, records)?;
    Ok(build_daily_mean(&profile, date, frames)?)
}

#[derive(Serialize)]
struct MeanReport {
    site_id: String,
    date: NaiveDate,
    source_count: u64,
    width: usize,
    registered: bool,
}

/// Builds the mean of each (site, day) in the manifest and registers it.
pub fn mean(ctx: &Context, a: &ManifestArgs, no_register: bool) -> CliResult<()> {
    let m = ctx.load_manifest(a)?;
    let store = ctx.store()?;
    let mut out = Vec::new();
    for (site, days) in by_site_day(ctx, &m) {
        for (date, records) in days {
            let state = day_mean(ctx, &m, &site, date, &records)?;
            save_png(
                &state.mean.to_image()?,
                &ctx.out.join("means").join(format!("{site}_{date}.png")),
            )?;
            if !no_register {
                store.register(&state)?;
            }
            out.push(MeanReport {
                site_id: site.clone(),
                date,
                source_count: state.source_count(),
                width: state.mean.width(),
                registered: !no_register,
            });
        }
    }
    ctx.write_json("means.json", &out)?;
    emit(&out)
}

fn run_trainer(cmd: &str, site: &str, date: NaiveDate, subset: &std::path::Path) -> CliResult<()> {
    let status = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .env("TRAILCAM_SITE", site)
        .env("TRAILCAM_DATE", date.to_string())
        .env("TRAILCAM_SUBSET", subset)
        .status()
        .map_err(|e| CliError::Trainer {
            command: cmd.to_string(),
            message: e.to_string(),
        })?;
    if !status.success() {
        return Err(CliError::Trainer {
            command: cmd.to_string(),
            message: status.to_string(),
        });
    }
    Ok(())
}

/// Checks each day in date order against the site's states. A triggering
/// day gets a retraining subset and, unless disabled, becomes a state
/// itself, so later days in the same run see it.
pub fn drift_check(
    ctx: &Context,
    a: &ManifestArgs,
    no_register: bool,
    quota: Option<usize>,
) -> CliResult<i32> {
    let m = ctx.load_manifest(a)?;
    let store = ctx.store()?;
    let mut decisions: Vec<DriftDecision> = Vec::new();
    for (site, days) in by_site_day(ctx, &m) {
        for (date, records) in days {
            let state = day_mean(ctx, &m, &site, date, &records)?;
            let states = store.load_site(&site)?;
            let decision = match check_drift(&state, &states, &ctx.cfg.drift) {
                Err(Error::UnprimedSite) => {
                    return Err(CliError::Usage(format!(
                        "site {site} has no background states; build some with `trailcam mean`"
                    )))
                }
                other => other?,
            };
            let stem = format!("drift/{site}_{date}");
            ctx.write_json(&format!("{stem}.json"), &decision)?;
            log::info!(
                "{site} {date}: min RTI {:.4}, retrain {}",
                decision.min_rti(),
                decision.retrain
            );
            if decision.retrain {
                let candidates: Vec<RetrainCandidate> = records
                    .iter()
                    .map(|r| RetrainCandidate {
                        image_id: r.image_id.clone(),
                        timestamp: r.timestamp,
                        label: Some(r.label),
                    })
                    .collect();
                let subset = select_retraining_subset(
                    &candidates,
                    &SubsetConfig {
                        quota,
                        seed: site_seed(ctx.cfg.seed, &format!("{site}/{date}")),
                        utc_offset_minutes: ctx.offset(&site),
                        ..SubsetConfig::default()
                    },
                )?;
                let path = ctx.write_csv(&format!("{stem}_subset.csv"), |buf| {
                    let mut w = csv::Writer::from_writer(buf);
                    w.write_record(["image_id"]).map_err(Error::from)?;
                    for id in &subset {
                        w.write_record([id]).map_err(Error::from)?;
                    }
                    w.flush().map_err(|e| Error::io("subset", e))?;
                    Ok(())
                })?;
                if !no_register && !store.contains(&site, date) {
                    store.register(&state)?;
                }
                if let Some(cmd) = &ctx.cfg.trainer {
                    run_trainer(cmd, &site, date, &path)?;
                }
            }
            decisions.push(decision);
        }
    }
    emit(&decisions)?;
    Ok(if decisions.iter().any(|d| d.retrain) {
        EXIT_RETRAIN
    } else {
        EXIT_OK
    })
}

#[derive(Serialize)]
struct MatrixSummary {
    dates: Vec<NaiveDate>,
    max_rti: f64,
}

/// One CSV per site: rows and columns are state dates, cells are RTI.
pub fn rti_matrix(ctx: &Context) -> CliResult<()> {
    let store = ctx.store()?;
    let sites = match &ctx.site {
        Some(s) => vec![s.clone()],
        None => store.sites()?,
    };
    let mut out = BTreeMap::new();
    for site in sites {
        let states = store.load_site(&site)?;
        if states.is_empty() {
            return Err(CliError::Usage(format!(
                "no background states for site {site}"
            )));
        }
        let map = rti_heatmap(&states, &ctx.cfg.drift)?;
        ctx.write_csv(&format!("rti/{site}.csv"), |buf| Ok(map.write_csv(buf)?))?;
        let max_rti = map.values.iter().flatten().copied().fold(0.0, f64::max);
        out.insert(
            site,
            MatrixSummary {
                dates: map.dates,
                max_rti,
            },
        );
    }
    ctx.write_json("rti_matrix.json", &out)?;
    emit(&out)
}
