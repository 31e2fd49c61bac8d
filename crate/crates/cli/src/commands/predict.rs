use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use trailcam_core::evaluation::{
    detection_metrics, match_detections, published_discrepancies, ClassificationSummary,
    ConfusionCounts, DetectionMetrics, Discrepancy, ScoredBox, SiteTable,
};
use trailcam_core::gateway::{predict_prepared, prepare, Predictor};
use trailcam_core::imaging::io::load_record;
use trailcam_core::imaging::{DayNight, MODEL_INPUT_SIDE};
use trailcam_core::{Error, Label};

use crate::context::{emit, read_json, Context};
use crate::{CliError, CliResult, ManifestArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub site_id: String,
    pub route: DayNight,
    pub p_animal: f64,
    pub p_no_animal: f64,
    pub label: Label,
    pub predictor_id: String,
}

#[derive(Serialize)]
struct PredictSummary {
    images: usize,
    day: usize,
    night: usize,
    animal: usize,
    no_animal: usize,
}

struct Unbound(DayNight);

impl Predictor for Unbound {
    fn id(&self) -> &str {
        "unbound"
    }

    fn predict(
        &self,
        _: &trailcam_core::gateway::PredictInput<'_>,
    ) -> trailcam_core::Result<trailcam_core::gateway::Prediction> {
        Err(Error::invalid(format!(
            "no {} predictor bound; pass --predictor {}=<binding>",
            self.0.as_str(),
            self.0.as_str()
        )))
    }
}

fn binding(
    ctx: &Context,
    route: DayNight,
    m: &crate::context::Manifest,
) -> CliResult<Box<dyn Predictor>> {
    let bound = match route {
        DayNight::Day => ctx.cfg.predictors.day.is_some(),
        DayNight::Night => ctx.cfg.predictors.night.is_some(),
    };
    if bound {
        ctx.predictor(route, m)
    } else {
        Ok(Box::new(Unbound(route)))
    }
}

/// Classifies each frame as day or night and sends it to that route's binding.
pub fn predict(ctx: &Context, a: &ManifestArgs) -> CliResult<()> {
    let m = ctx.load_manifest(a)?;
    let profiles = ctx.profiles(&m)?;
    let day = binding(ctx, DayNight::Day, &m)?;
    let night = binding(ctx, DayNight::Night, &m)?;
    let rows: Vec<PredictionRow> = m
        .records
        .par_iter()
        .map(|r| {
            let img = load_record(&m.image_dir, r)?;
            let prep = prepare(&img, &profiles[&r.site_id], MODEL_INPUT_SIDE)?;
            let p = predict_prepared(&img, &prep, day.as_ref(), night.as_ref())?;
            Ok(PredictionRow {
                image_id: r.image_id.clone(),
                site_id: r.site_id.clone(),
                route: prep.route,
                p_animal: p.p_animal,
                p_no_animal: p.p_no_animal,
                label: p.label,
                predictor_id: p.predictor_id,
            })
        })
        .collect::<CliResult<_>>()?;
    ctx.write_csv("predictions.csv", |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in &rows {
            w.serialize(r).map_err(Error::from)?;
        }
        w.flush().map_err(|e| Error::io("predictions.csv", e))?;
        Ok(())
    })?;
    let summary = PredictSummary {
        images: rows.len(),
        day: rows.iter().filter(|r| r.route == DayNight::Day).count(),
        night: rows.iter().filter(|r| r.route == DayNight::Night).count(),
        animal: rows.iter().filter(|r| r.label == Label::Animal).count(),
        no_animal: rows.iter().filter(|r| r.label == Label::NoAnimal).count(),
    };
    ctx.write_json("predict.json", &summary)?;
    emit(&summary)
}

pub fn read_predictions(path: &Path) -> CliResult<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(Error::from)?;
    r.deserialize()
        .map(|row| row.map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Deserialize)]
struct CountsSite {
    site_id: String,
    tp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    tn: u64,
    fp: u64,
}

#[derive(Debug, Deserialize)]
struct ClassifyReplay {
    sites: Vec<CountsSite>,
}

#[derive(Serialize)]
struct ClassifyReport {
    sites: BTreeMap<String, ClassificationSummary>,
    total: ClassificationSummary,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    discrepancies: Vec<Discrepancy>,
}

/// Per-site confusion counts, from a predictions CSV joined with the
/// manifest, or from a counts file with `--replay`.
pub fn eval_classify(
    ctx: &Context,
    manifest: Option<&Path>,
    predictions: Option<&Path>,
) -> CliResult<()> {
    let mut table = SiteTable::default();
    let mut discrepancies = Vec::new();
    if let Some(replay) = &ctx.replay {
        let rp: ClassifyReplay = read_json(replay)?;
        for s in rp.sites {
            table
                .sites
                .insert(s.site_id, ConfusionCounts::new(s.tp, s.tn, s.fp, s.fn_));
        }
        discrepancies = published_discrepancies();
    } else {
        let (Some(manifest), Some(predictions)) = (manifest, predictions) else {
            return Err(CliError::Usage(
                "eval-classify needs MANIFEST and PREDICTIONS, or --replay".into(),
            ));
        };
        let m = ctx.load_manifest(&ManifestArgs {
            manifest: manifest.to_path_buf(),
            images: None,
        })?;
        let preds: HashMap<String, PredictionRow> = read_predictions(predictions)?
            .into_iter()
            .map(|p| (p.image_id.clone(), p))
            .collect();
        let mut missing = 0;
        for r in &m.records {
            match preds.get(&r.image_id) {
                Some(p) => table.add(&r.site_id, p.label, r.label),
                None => missing += 1,
            }
        }
        if missing > 0 {
            log::warn!("{missing} manifest images have no prediction");
        }
        if table.sites.is_empty() {
            return Err(CliError::Usage("no predictions match the manifest".into()));
        }
    }
    ctx.write_csv("eval_classify.csv", |buf| Ok(table.write_csv(buf)?))?;
    let report = ClassifyReport {
        sites: table
            .sites
            .iter()
            .map(|(k, v)| (k.clone(), (*v).into()))
            .collect(),
        total: table.total().into(),
        discrepancies,
    };
    ctx.write_json("eval_classify.json", &report)?;
    emit(&report)
}

#[derive(Debug, Deserialize)]
struct DetectReplay {
    tp: u64,
    tn: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    avg_iou: Option<f64>,
}

#[derive(Serialize)]
struct DetectReport {
    iou_threshold: f64,
    images: usize,
    #[serde(flatten)]
    metrics: DetectionMetrics,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    discrepancies: Vec<Discrepancy>,
}

/// Detection metrics from `{image_id: [{x, y, w, h, score}]}` against the
/// manifest's boxes, or from counts with `--replay`.
pub fn eval_detect(
    ctx: &Context,
    manifest: Option<&Path>,
    detections: Option<&Path>,
    iou: f64,
) -> CliResult<()> {
    if !(0.0..1.0).contains(&iou) {
        return Err(CliError::Usage(format!(
            "--iou must lie in [0, 1), got {iou}"
        )));
    }
    let report = if let Some(replay) = &ctx.replay {
        let rp: DetectReplay = read_json(replay)?;
        let counts = ConfusionCounts::new(rp.tp, rp.tn, rp.fp, rp.fn_);
        DetectReport {
            iou_threshold: iou,
            images: (rp.tp + rp.tn + rp.fp + rp.fn_) as usize,
            metrics: DetectionMetrics::from_counts(counts, rp.avg_iou),
            discrepancies: published_discrepancies()
                .into_iter()
                .filter(|d| d.table == "bird detector")
                .collect(),
        }
    } else {
        let (Some(manifest), Some(detections)) = (manifest, detections) else {
            return Err(CliError::Usage(
                "eval-detect needs MANIFEST and DETECTIONS, or --replay".into(),
            ));
        };
        let m = ctx.load_manifest(&ManifestArgs {
            manifest: manifest.to_path_buf(),
            images: None,
        })?;
        let dets: BTreeMap<String, Vec<ScoredBox>> = read_json(detections)?;
        if let Some(id) = dets
            .keys()
            .find(|id| !m.all.iter().any(|r| &r.image_id == *id))
        {
            return Err(Error::UnknownImage(id.clone()).into());
        }
        let empty = Vec::new();
        let outcomes = m
            .records
            .iter()
            .map(|r| match_detections(dets.get(&r.image_id).unwrap_or(&empty), &r.boxes, iou))
            .collect::<trailcam_core::Result<Vec<_>>>()?;
        DetectReport {
            iou_threshold: iou,
            images: outcomes.len(),
            metrics: detection_metrics(&outcomes)?,
            discrepancies: Vec::new(),
        }
    };
    ctx.write_json("eval_detect.json", &report)?;
    emit(&report)
}
