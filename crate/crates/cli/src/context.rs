use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;
use trailcam_core::curation::{ingest_manifest, local_date};
use trailcam_core::drift::{SiteProfile, StateStore};
use trailcam_core::gateway::{BaselinePredictor, ExternalPredictor, OraclePredictor, Predictor};
use trailcam_core::imaging::io::load_record;
use trailcam_core::imaging::{
    classify_day_night, crop, estimate_fountain_center, CropWindow, DayNight,
};
use trailcam_core::{AnnotationRecord, TrailImage};

use crate::config::PipelineConfig;
use crate::{CliError, CliResult, GlobalArgs, ManifestArgs};

/// Resolved configuration plus the per-invocation flags.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub site: Option<String>,
    pub date: Option<NaiveDate>,
    pub mu0: f64,
    pub replay: Option<PathBuf>,
}

pub struct Manifest {
    /// Records after `--site`/`--date` filtering, in manifest order.
    pub records: Vec<AnnotationRecord>,
    /// Every record; fountain estimates and oracles use these.
    pub all: Vec<AnnotationRecord>,
    pub dir: PathBuf,
    pub image_dir: PathBuf,
}

impl Manifest {
    pub fn sites(&self) -> Vec<String> {
        let mut s: Vec<String> = self.records.iter().map(|r| r.site_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

/// A fountain crop of one frame.
pub struct Cropped {
    pub record: AnnotationRecord,
    pub route: DayNight,
    pub window: CropWindow,
    pub image: TrailImage,
}

impl Context {
    pub fn from_args(g: &GlobalArgs) -> CliResult<Self> {
        let mut cfg = match &g.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(t) = g.threshold {
            cfg.drift.threshold = t;
        }
        if let Some(s) = g.seed {
            cfg.seed = s;
        }
        for b in &g.predictor {
            match b.split_once('=') {
                Some(("day", v)) if !v.is_empty() => cfg.predictors.day = Some(v.to_string()),
                Some(("night", v)) if !v.is_empty() => cfg.predictors.night = Some(v.to_string()),
                _ => {
                    return Err(CliError::Usage(format!(
                        "--predictor expects day=<binding> or night=<binding>, got `{b}`"
                    )))
                }
            }
        }
        cfg.validate()?;
        let mu0 = g.mu0.unwrap_or(trailcam_core::explain::DEFAULT_MU0);
        if !(mu0 > 0.0 && mu0 < 1.0) {
            return Err(CliError::Usage(format!(
                "--mu0 must lie in (0, 1), got {mu0}"
            )));
        }
        if let (Some(site), false) = (&g.site, cfg.sites.is_empty()) {
            if !cfg.sites.contains_key(site) {
                return Err(CliError::Usage(format!(
                    "site `{site}` is not in the configured registry"
                )));
            }
        }
        Ok(Context {
            cfg,
            out: g.out.clone().unwrap_or_else(|| PathBuf::from(".")),
            site: g.site.clone(),
            date: g.date,
            mu0,
            replay: g.replay.clone(),
        })
    }

    pub fn offset(&self, site: &str) -> i32 {
        self.cfg.sites.get(site).map_or(0, |s| s.utc_offset_minutes)
    }

    pub fn record_date(&self, r: &AnnotationRecord) -> NaiveDate {
        local_date(r.timestamp, self.offset(&r.site_id))
    }

    pub fn load_manifest(&self, args: &ManifestArgs) -> CliResult<Manifest> {
        let all = ingest_manifest(&args.manifest)?;
        if !self.cfg.sites.is_empty() {
            if let Some(r) = all
                .iter()
                .find(|r| !self.cfg.sites.contains_key(&r.site_id))
            {
                log::warn!("site {} is not in the configured registry", r.site_id);
            }
        }
        let dir = args
            .manifest
            .parent()
            .unwrap_or(Path::new("."))
            .to_path_buf();
        let image_dir = match (&args.images, &self.cfg.images) {
            (Some(p), _) | (None, Some(p)) => p.clone(),
            (None, None) if dir.join("images").is_dir() => dir.join("images"),
            _ => dir.clone(),
        };
        let records = all
            .iter()
            .filter(|r| self.site.as_deref().is_none_or(|s| s == r.site_id))
            .filter(|r| self.date.is_none_or(|d| d == self.record_date(r)))
            .cloned()
            .collect::<Vec<_>>();
        if records.is_empty() {
            return Err(CliError::Usage(format!(
                "no manifest records match{}{}",
                self.site
                    .as_deref()
                    .map(|s| format!(" site {s}"))
                    .unwrap_or_default(),
                self.date.map(|d| format!(" date {d}")).unwrap_or_default()
            )));
        }
        Ok(Manifest {
            records,
            all,
            dir,
            image_dir,
        })
    }

    /// Registry entry for `site`, falling back to an activity estimate from
    /// the site's boxes when no fountain center is configured.
    pub fn profile(&self, site: &str, records: &[AnnotationRecord]) -> CliResult<SiteProfile> {
        let entry = self.cfg.sites.get(site).cloned().unwrap_or_default();
        let center = match entry.fountain_center {
            Some([x, y]) => (x, y),
            None => {
                let own: Vec<AnnotationRecord> = records
                    .iter()
                    .filter(|r| r.site_id == site)
                    .cloned()
                    .collect();
                let c = estimate_fountain_center(&own)?;
                log::warn!("site {site}: no fountain center configured, using activity estimate ({:.1}, {:.1})", c.0, c.1);
                c
            }
        };
        let mut p = SiteProfile::new(site, center)
            .with_crop_size(entry.crop_size.unwrap_or(self.cfg.crop_size));
        p.utc_offset_minutes = entry.utc_offset_minutes;
        if let Some(dn) = entry.day_night {
            p.day_night = dn;
        }
        Ok(p)
    }

    pub fn profiles(&self, m: &Manifest) -> CliResult<BTreeMap<String, SiteProfile>> {
        m.sites()
            .into_iter()
            .map(|s| Ok((s.clone(), self.profile(&s, &m.all)?)))
            .collect()
    }

    pub fn store(&self) -> CliResult<StateStore> {
        let root = self
            .cfg
            .state_dir
            .clone()
            .unwrap_or_else(|| self.out.join("states"));
        Ok(StateStore::open(root)?)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.cfg.timeout_secs)
    }

    /// Loads every record's frame in parallel, keeping manifest order.
    pub fn load_frames(
        &self,
        m: &Manifest,
        records: &[AnnotationRecord],
    ) -> CliResult<Vec<TrailImage>> {
        records
            .par_iter()
            .map(|r| load_record(&m.image_dir, r).map_err(CliError::from))
            .collect()
    }

    /// Fountain crops of the day frames among `records`; night frames are dropped.
    pub fn day_crops(
        &self,
        m: &Manifest,
        records: &[AnnotationRecord],
        profiles: &BTreeMap<String, SiteProfile>,
    ) -> CliResult<Vec<Cropped>> {
        let all: Vec<Option<Cropped>> = records
            .par_iter()
            .map(|r| {
                let profile = &profiles[&r.site_id];
                let img = load_record(&m.image_dir, r)?;
                let route = classify_day_night(&img, &profile.day_night);
                if route == DayNight::Night {
                    return Ok(None);
                }
                let window = CropWindow::centered(
                    profile.crop_center,
                    profile.crop_size,
                    img.width,
                    img.height,
                )?;
                Ok(Some(Cropped {
                    record: r.clone(),
                    route,
                    window,
                    image: crop(&img, &window)?,
                }))
            })
            .collect::<CliResult<_>>()?;
        Ok(all.into_iter().flatten().collect())
    }

    /// Builds a binding: `oracle`, `baseline`, or an external command.
    pub fn predictor(&self, route: DayNight, m: &Manifest) -> CliResult<Box<dyn Predictor>> {
        let spec = match route {
            DayNight::Day => &self.cfg.predictors.day,
            DayNight::Night => &self.cfg.predictors.night,
        };
        let spec = spec.as_deref().ok_or_else(|| {
            CliError::Usage(format!(
                "no {} predictor bound; pass --predictor {}=<binding>",
                route.as_str(),
                route.as_str()
            ))
        })?;
        Ok(match spec {
            "oracle" => Box::new(OraclePredictor::from_records(&m.all)),
            "baseline" => {
                let store = self.store()?;
                let mut b = BaselinePredictor::new(self.cfg.baseline)?;
                for site in m.sites() {
                    // most recent state stands in for the current background
                    if let Some(s) = store.load_site(&site)?.pop() {
                        b = b.with_state(site, s.mean);
                    }
                }
                Box::new(b)
            }
            cmd => Box::new(ExternalPredictor::spawn(cmd, self.timeout())?),
        })
    }

    fn ensure_out(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| trailcam_core::Error::io(&self.out, e))?;
        Ok(())
    }

    pub fn write_bytes(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        self.ensure_out()?;
        let path = self.out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| trailcam_core::Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| trailcam_core::Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        self.write_bytes(name, to_json(value)?.as_bytes())
    }

    /// Writes a CSV produced by `f` into a buffer first so a failure leaves no partial file.
    pub fn write_csv<F>(&self, name: &str, f: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> CliResult<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(trailcam_core::Error::from)?;
    s.push('\n');
    Ok(s)
}

/// Prints the command's report on stdout.
pub fn emit<T: Serialize>(value: &T) -> CliResult<()> {
    print!("{}", to_json(value)?);
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| trailcam_core::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}
