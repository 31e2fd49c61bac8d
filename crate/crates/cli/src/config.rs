//! Pipeline configuration file (TOML). Flags override whatever it sets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trailcam_core::drift::DriftConfig;
use trailcam_core::explain::DisiConfig;
use trailcam_core::gateway::BaselineParams;
use trailcam_core::imaging::{DayNightParams, DEFAULT_CROP_SIZE};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub crop_size: usize,
    /// Background-state store. Defaults to `<out>/states`.
    pub state_dir: Option<PathBuf>,
    /// Where manifest image ids resolve. Defaults to `images/` beside the manifest.
    pub images: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    /// Run through `sh -c` after a retraining trigger.
    pub trainer: Option<String>,
    pub timeout_secs: u64,
    pub jitter_radius: f64,
    pub predictors: Bindings,
    pub drift: DriftConfig,
    pub baseline: BaselineParams,
    pub disi: DisiConfig,
    pub sites: BTreeMap<String, SiteEntry>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            crop_size: DEFAULT_CROP_SIZE,
            state_dir: None,
            images: None,
            templates: None,
            trainer: None,
            timeout_secs: 10,
            jitter_radius: trailcam_core::explain::DEFAULT_JITTER,
            predictors: Bindings::default(),
            drift: DriftConfig::default(),
            baseline: BaselineParams::default(),
            disi: DisiConfig::default(),
            sites: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bindings {
    pub day: Option<String>,
    pub night: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiteEntry {
    pub fountain_center: Option<[f64; 2]>,
    pub utc_offset_minutes: i32,
    pub crop_size: Option<usize>,
    pub day_night: Option<DayNightParams>,
}

impl PipelineConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| trailcam_core::Error::io(path, e))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.state_dir, &mut cfg.images, &mut cfg.templates]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.crop_size == 0 {
            return bad("crop_size must be positive".into());
        }
        if !(self.drift.threshold > 0.0) {
            return bad(format!(
                "drift threshold must be positive, got {}",
                self.drift.threshold
            ));
        }
        if self.drift.geometry.window == 0 || self.drift.geometry.stride == 0 {
            return bad("drift window and stride must be positive".into());
        }
        if self.timeout_secs == 0 {
            return bad("timeout_secs must be positive".into());
        }
        if !(self.jitter_radius >= 0.0) {
            return bad("jitter_radius must be non-negative".into());
        }
        for (id, s) in &self.sites {
            if s.crop_size == Some(0) {
                return bad(format!("site {id}: crop_size must be positive"));
            }
        }
        self.drift.similarity.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("cannot encode config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            seed = 4
            [drift]
            threshold = 0.2
            [sites.north]
            fountain_center = [10.0, 20.0]
            utc_offset_minutes = -300
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.drift.threshold, 0.2);
        assert_eq!(cfg.drift.geometry.window, 500);
        assert_eq!(cfg.crop_size, 1500);
        assert_eq!(cfg.sites["north"].fountain_center, Some([10.0, 20.0]));
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_and_rejects() {
        let mut cfg = PipelineConfig::default();
        cfg.sites.insert(
            "a".into(),
            SiteEntry {
                fountain_center: Some([1.0, 2.0]),
                ..Default::default()
            },
        );
        cfg.predictors.day = Some("oracle".into());
        let back: PipelineConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(toml::from_str::<PipelineConfig>("sedd = 1").is_err());
        cfg.drift.threshold = 0.0;
        assert!(cfg.validate().is_err());
    }
}
