//! Automatic retraining trigger.
//!
//! Each site keeps a set of background states, one per training day: the
//! mean of that day's fountain-cropped, grayscale day-time frames. A new
//! day's mean is compared against every state with the RTI; if none is
//! below the threshold the site has drifted and retraining is recommended,
//! along with a time-stratified subset of the day's images to add to the
//! training set.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curation::{
    local_date, stratified_sample_with, temporal_histogram, NO_ANIMAL_BIN_MINUTES,
};
use crate::imaging::{
    classify_day_night, crop_window, to_grayscale, DayNight, DayNightParams, MeanImage, TrailImage,
    DEFAULT_CROP_SIZE,
};
use crate::record::Label;
use crate::similarity::{rti_between, SimilarityParams, WindowGeometry};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.1;
pub const DEFAULT_SUBSET_QUOTA: usize = 200;

/// Per-site geometry and clock needed to turn raw frames into a daily mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteProfile {
    pub site_id: String,
    pub crop_center: (f64, f64),
    pub crop_size: usize,
    pub utc_offset_minutes: i32,
    pub day_night: DayNightParams,
}

impl SiteProfile {
    pub fn new(site_id: impl Into<String>, crop_center: (f64, f64)) -> Self {
        SiteProfile {
            site_id: site_id.into(),
            crop_center,
            crop_size: DEFAULT_CROP_SIZE,
            utc_offset_minutes: 0,
            day_night: DayNightParams::default(),
        }
    }

    pub fn with_crop_size(mut self, size: usize) -> Self {
        self.crop_size = size;
        self
    }

    pub fn local_date(&self, timestamp: i64) -> NaiveDate {
        local_date(timestamp, self.utc_offset_minutes)
    }
}

/// Mean of one day's day-time frames at one site.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundState {
    pub site_id: String,
    pub date: NaiveDate,
    pub mean: MeanImage,
}

impl BackgroundState {
    pub fn source_count(&self) -> u64 {
        self.mean.count()
    }
}

/// Averages the day-time frames of `date` at the profile's site. Night
/// frames are skipped; frames from another site or day are an error.
pub fn build_daily_mean<I>(
    profile: &SiteProfile,
    date: NaiveDate,
    images: I,
) -> Result<BackgroundState>
where
    I: IntoIterator<Item = TrailImage>,
{
    let mut mean: Option<MeanImage> = None;
    for img in images {
        accumulate_day_frame(profile, date, &mut mean, &img)?;
    }
    finish_daily_mean(profile, date, mean)
}

/// One step of [`build_daily_mean`], for callers that stream frames.
pub fn accumulate_day_frame(
    profile: &SiteProfile,
    date: NaiveDate,
    acc: &mut Option<MeanImage>,
    img: &TrailImage,
) -> Result<bool> {
    if img.site_id != profile.site_id {
        return Err(Error::invalid(format!(
            "image {} is from site {}, expected {}",
            img.image_id, img.site_id, profile.site_id
        )));
    }
    let day = profile.local_date(img.timestamp);
    if day != date {
        return Err(Error::invalid(format!(
            "image {} was captured on {day}, expected {date}",
            img.image_id
        )));
    }
    if classify_day_night(img, &profile.day_night) == DayNight::Night {
        return Ok(false);
    }
    let gray = to_grayscale(&crop_window(img, profile.crop_center, profile.crop_size)?);
    acc.get_or_insert_with(|| MeanImage::new(gray.width, gray.height))
        .accumulate(&gray)?;
    Ok(true)
}

pub fn finish_daily_mean(
    profile: &SiteProfile,
    date: NaiveDate,
    acc: Option<MeanImage>,
) -> Result<BackgroundState> {
    let mean = acc.ok_or_else(|| Error::EmptyDay {
        site_id: profile.site_id.clone(),
        date: date.to_string(),
    })?;
    Ok(BackgroundState {
        site_id: profile.site_id.clone(),
        date,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub threshold: f64,
    pub geometry: WindowGeometry,
    pub similarity: SimilarityParams,
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig {
            threshold: DEFAULT_THRESHOLD,
            geometry: WindowGeometry::default(),
            similarity: SimilarityParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRti {
    pub state_date: NaiveDate,
    pub rti: f64,
}

/// Outcome of comparing one day's mean against a site's background states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftDecision {
    pub site_id: String,
    pub date: NaiveDate,
    pub threshold: f64,
    pub rtis: Vec<StateRti>,
    pub retrain: bool,
    pub matched_state_date: Option<NaiveDate>,
}

impl DriftDecision {
    pub fn min_rti(&self) -> f64 {
        self.rtis
            .iter()
            .map(|r| r.rti)
            .fold(f64::INFINITY, f64::min)
    }
}

/// RTI against every state; retraining is needed when none is below the
/// threshold. The match is the lowest-RTI state, earliest date on ties.
pub fn check_drift(
    day: &BackgroundState,
    states: &[BackgroundState],
    cfg: &DriftConfig,
) -> Result<DriftDecision> {
    if states.is_empty() {
        return Err(Error::UnprimedSite);
    }
    if let Some(s) = states.iter().find(|s| s.site_id != day.site_id) {
        return Err(Error::invalid(format!(
            "background state {} belongs to site {}, not {}",
            s.date, s.site_id, day.site_id
        )));
    }
    let mut ordered: Vec<&BackgroundState> = states.iter().collect();
    ordered.sort_by_key(|s| s.date);
    let rtis = ordered
        .iter()
        .map(|s| {
            Ok(StateRti {
                state_date: s.date,
                rti: rti_between(&day.mean, &s.mean, &cfg.geometry, &cfg.similarity)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // `ordered` is date-sorted, so the first minimum is the earliest date
    let best = rtis
        .iter()
        .fold(None::<&StateRti>, |best, r| match best {
            Some(b) if b.rti <= r.rti => Some(b),
            _ => Some(r),
        })
        .expect("non-empty");
    let retrain = best.rti >= cfg.threshold;
    Ok(DriftDecision {
        site_id: day.site_id.clone(),
        date: day.date,
        threshold: cfg.threshold,
        matched_state_date: (!retrain).then_some(best.state_date),
        retrain,
        rtis,
    })
}

// ---------------------------------------------------------------------------
// Retraining subset

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainCandidate {
    pub image_id: String,
    pub timestamp: i64,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetConfig {
    pub bin_minutes: u32,
    /// `None` means `min(200, available)`.
    pub quota: Option<usize>,
    pub seed: u64,
    pub utc_offset_minutes: i32,
}

impl Default for SubsetConfig {
    fn default() -> Self {
        SubsetConfig {
            bin_minutes: NO_ANIMAL_BIN_MINUTES,
            quota: None,
            seed: 0,
            utc_offset_minutes: 0,
        }
    }
}

/// Time-stratified subset of a triggering day's images. When every image is
/// labeled the quota is split evenly between classes, a shortfall in one
/// class going to the other.
pub fn select_retraining_subset(
    images: &[RetrainCandidate],
    cfg: &SubsetConfig,
) -> Result<Vec<String>> {
    let quota = match cfg.quota {
        Some(0) => return Err(Error::invalid("retraining quota must be at least 1")),
        Some(q) => q,
        None => DEFAULT_SUBSET_QUOTA.min(images.len()),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |pool: &[&RetrainCandidate], n: usize| -> Result<Vec<String>> {
        let hist = temporal_histogram(
            pool.iter().map(|c| (c.image_id.as_str(), c.timestamp)),
            cfg.bin_minutes,
            cfg.utc_offset_minutes,
        )?;
        Ok(stratified_sample_with(&hist, n, &mut rng))
    };

    let labeled = !images.is_empty() && images.iter().all(|c| c.label.is_some());
    if !labeled {
        let all: Vec<&RetrainCandidate> = images.iter().collect();
        return draw(&all, quota);
    }
    let (animals, empties): (Vec<&RetrainCandidate>, Vec<&RetrainCandidate>) =
        images.iter().partition(|c| c.label == Some(Label::Animal));
    let mut qa = quota / 2;
    let mut qe = quota - qa;
    if animals.len() < qa {
        qe += qa - animals.len();
        qa = animals.len();
    }
    if empties.len() < qe {
        qa = (qa + qe - empties.len()).min(animals.len());
        qe = empties.len();
    }
    let mut out = draw(&animals, qa)?;
    out.extend(draw(&empties, qe)?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// State store

/// Filesystem store: `<root>/<site_id>/<YYYY-MM-DD>.f32` plus `.json` sidecar.
#[derive(Debug, Clone)]
pub struct StateStore {
    root: PathBuf,
}

fn check_site_id(site_id: &str) -> Result<()> {
    if site_id.is_empty() || site_id.contains(['/', '\\']) || site_id == "." || site_id == ".." {
        return Err(Error::invalid(format!(
            "site id `{site_id}` is not usable as a directory"
        )));
    }
    Ok(())
}

impl StateStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(StateStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn stem(&self, site_id: &str, date: NaiveDate) -> PathBuf {
        self.root
            .join(site_id)
            .join(date.format("%Y-%m-%d").to_string())
    }

    pub fn contains(&self, site_id: &str, date: NaiveDate) -> bool {
        self.stem(site_id, date).with_extension("json").is_file()
    }

    pub fn register(&self, state: &BackgroundState) -> Result<()> {
        check_site_id(&state.site_id)?;
        if self.contains(&state.site_id, state.date) {
            return Err(Error::DuplicateState {
                site_id: state.site_id.clone(),
                date: state.date.to_string(),
            });
        }
        state.mean.save(
            &self.stem(&state.site_id, state.date),
            &state.site_id,
            &state.date.to_string(),
        )
    }

    /// Sites with a directory in the store, sorted.
    pub fn sites(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let path = entry.map_err(|e| Error::io(&self.root, e))?.path();
            if path.is_dir() {
                if let Some(name) = path.file_name().and_then(|s| s.to_str()) {
                    out.push(name.to_string());
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// All states of one site, oldest first.
    pub fn load_site(&self, site_id: &str) -> Result<Vec<BackgroundState>> {
        check_site_id(site_id)?;
        let dir = self.root.join(site_id);
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut dates = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(date) = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
                {
                    dates.push(date);
                }
            }
        }
        dates.sort();
        dates
            .into_iter()
            .map(|date| {
                let (mean, meta) = MeanImage::load(&self.stem(site_id, date))?;
                if meta.site_id != site_id {
                    return Err(Error::invalid(format!(
                        "state {date} under {site_id} claims site {}",
                        meta.site_id
                    )));
                }
                Ok(BackgroundState {
                    site_id: site_id.to_string(),
                    date,
                    mean,
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// RTI heat map

/// Pairwise RTI between background states, rows and columns in date order.
#[derive(Debug, Clone, PartialEq)]
pub struct RtiHeatmap {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Vec<f64>>,
}

pub fn rti_heatmap(states: &[BackgroundState], cfg: &DriftConfig) -> Result<RtiHeatmap> {
    let mut ordered: Vec<&BackgroundState> = states.iter().collect();
    ordered.sort_by_key(|s| s.date);
    let n = ordered.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let r = rti_between(
                &ordered[i].mean,
                &ordered[j].mean,
                &cfg.geometry,
                &cfg.similarity,
            )?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(RtiHeatmap {
        dates: ordered.iter().map(|s| s.date).collect(),
        values,
    })
}

impl RtiHeatmap {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["state_date".to_string()];
        header.extend(self.dates.iter().map(|d| d.to_string()));
        w.write_record(&header)?;
        for (d, row) in self.dates.iter().zip(&self.values) {
            let mut rec = vec![d.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<heatmap>", e))?;
        Ok(())
    }
}

/// Groups per-site states, convenient for multi-site reports.
pub fn states_by_site(states: Vec<BackgroundState>) -> BTreeMap<String, Vec<BackgroundState>> {
    let mut map: BTreeMap<String, Vec<BackgroundState>> = BTreeMap::new();
    for s in states {
        map.entry(s.site_id.clone()).or_default().push(s);
    }
    map
}
