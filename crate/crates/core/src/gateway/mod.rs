//! Prediction behind a pluggable interface: day/night routing, the
//! built-in oracle and background-disturbance predictors, and external
//! models over a line protocol.

pub mod conformance;
pub mod external;
pub mod protocol;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::drift::SiteProfile;
use crate::imaging::{
    classify_day_night, crop_window, resize, to_grayscale, DayNight, MeanImage, Plane, TrailImage,
    MODEL_INPUT_SIDE,
};
use crate::record::{AnnotationRecord, Label};
use crate::similarity::{structure_matrix, SimilarityParams, WindowGeometry};
use crate::{Error, Result};

pub use external::{ExternalPredictor, ProcessChannel, ProtocolClient, DEFAULT_TIMEOUT};

/// Tolerance on `p_animal + p_no_animal` for replies from outside.
pub const SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub p_animal: f64,
    pub p_no_animal: f64,
    pub label: Label,
    pub predictor_id: String,
}

impl Prediction {
    /// Validates and renormalizes a probability pair. `p_animal == 0.5`
    /// counts as Animal.
    pub fn new(p_animal: f64, p_no_animal: f64, predictor_id: &str) -> Result<Self> {
        let fail = |msg: String| Error::Predictor {
            predictor_id: predictor_id.to_string(),
            cause: msg,
        };
        for (name, p) in [("p_animal", p_animal), ("p_no_animal", p_no_animal)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(fail(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        let sum = p_animal + p_no_animal;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(fail(format!("probabilities sum to {sum}")));
        }
        let pa = p_animal / sum;
        let pn = 1.0 - pa;
        Ok(Prediction {
            p_animal: pa,
            p_no_animal: pn,
            label: if pa >= 0.5 {
                Label::Animal
            } else {
                Label::NoAnimal
            },
            predictor_id: predictor_id.to_string(),
        })
    }

    pub fn certain(label: Label, predictor_id: &str) -> Self {
        let pa = if label == Label::Animal { 1.0 } else { 0.0 };
        Prediction {
            p_animal: pa,
            p_no_animal: 1.0 - pa,
            label,
            predictor_id: predictor_id.to_string(),
        }
    }
}

/// What a predictor sees for one frame.
#[derive(Debug, Clone, Copy)]
pub struct PredictInput<'a> {
    pub image_id: &'a str,
    pub site_id: &'a str,
    pub route: DayNight,
    /// Fountain crop for day frames, the full frame at night.
    pub prepared: &'a TrailImage,
    /// `prepared` resized to the model side.
    pub model_input: &'a TrailImage,
}

pub trait Predictor: Send + Sync {
    fn id(&self) -> &str;
    fn predict(&self, input: &PredictInput<'_>) -> Result<Prediction>;
}

/// Frames after routing and preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub route: DayNight,
    pub prepared: TrailImage,
    pub model_input: TrailImage,
}

/// Day frames are fountain-cropped then resized; night frames are resized
/// from the full frame.
pub fn prepare(img: &TrailImage, profile: &SiteProfile, model_side: usize) -> Result<Prepared> {
    let route = classify_day_night(img, &profile.day_night);
    let prepared = match route {
        DayNight::Day => crop_window(img, profile.crop_center, profile.crop_size)?,
        DayNight::Night => img.clone(),
    };
    let model_input = resize(&prepared, model_side)?;
    Ok(Prepared {
        route,
        prepared,
        model_input,
    })
}

pub fn predict_prepared(
    img: &TrailImage,
    prep: &Prepared,
    day: &dyn Predictor,
    night: &dyn Predictor,
) -> Result<Prediction> {
    let predictor = match prep.route {
        DayNight::Day => day,
        DayNight::Night => night,
    };
    let input = PredictInput {
        image_id: &img.image_id,
        site_id: &img.site_id,
        route: prep.route,
        prepared: &prep.prepared,
        model_input: &prep.model_input,
    };
    predictor.predict(&input).map_err(|e| match e {
        e @ Error::Predictor { .. } => e,
        other => Error::Predictor {
            predictor_id: predictor.id().to_string(),
            cause: other.to_string(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routed {
    pub image_id: String,
    pub route: DayNight,
    #[serde(flatten)]
    pub prediction: Prediction,
}

/// Classifies the frame as day or night and asks the matching predictor.
pub fn route(
    img: &TrailImage,
    profile: &SiteProfile,
    day: &dyn Predictor,
    night: &dyn Predictor,
) -> Result<Routed> {
    let prep = prepare(img, profile, MODEL_INPUT_SIDE)?;
    Ok(Routed {
        image_id: img.image_id.clone(),
        route: prep.route,
        prediction: predict_prepared(img, &prep, day, night)?,
    })
}

// ---------------------------------------------------------------------------
// Oracle

pub const HFLIP_SUFFIX: &str = "@hflip";
pub const TEMPLATE_MARKER: &str = "@template";

/// Answers from the manifest. Derived ids resolve through their source:
/// `<id>@hflip` keeps the label and `<id>@template<k>` (a frame with a
/// pasted animal) is Animal.
#[derive(Debug, Clone, Default)]
pub struct OraclePredictor {
    labels: HashMap<String, Label>,
}

impl OraclePredictor {
    pub const ID: &'static str = "oracle";

    pub fn from_records(records: &[AnnotationRecord]) -> Self {
        OraclePredictor {
            labels: records
                .iter()
                .map(|r| (r.image_id.clone(), r.label))
                .collect(),
        }
    }

    pub fn label_of(&self, image_id: &str) -> Result<Label> {
        if let Some(l) = self.labels.get(image_id) {
            return Ok(*l);
        }
        if let Some((src, tail)) = image_id.rsplit_once('@') {
            let tag = format!("@{tail}");
            if tag == HFLIP_SUFFIX {
                return self.label_of(src);
            }
            if tag.starts_with(TEMPLATE_MARKER)
                && tag[TEMPLATE_MARKER.len()..].parse::<u32>().is_ok()
            {
                self.label_of(src)?;
                return Ok(Label::Animal);
            }
        }
        Err(Error::UnknownImage(image_id.to_string()))
    }

    pub fn predict_id(&self, image_id: &str) -> Result<Prediction> {
        Ok(Prediction::certain(self.label_of(image_id)?, Self::ID))
    }
}

impl Predictor for OraclePredictor {
    fn id(&self) -> &str {
        Self::ID
    }

    fn predict(&self, input: &PredictInput<'_>) -> Result<Prediction> {
        self.predict_id(input.image_id)
    }
}

// ---------------------------------------------------------------------------
// Background-disturbance baseline

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    pub window: usize,
    pub stride: usize,
    pub region: usize,
    pub tau: f64,
    pub similarity: SimilarityParams,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            window: 100,
            stride: 50,
            region: 700,
            tau: 0.5,
            similarity: SimilarityParams::default(),
        }
    }
}

/// Flags frames whose central region departs structurally from the site's
/// background mean.
#[derive(Debug, Clone)]
pub struct BaselinePredictor {
    states: BTreeMap<String, MeanImage>,
    params: BaselineParams,
}

/// Central `region × region` block (clamped to the frame) of a plane.
fn central(data: &[f32], w: usize, h: usize, region: usize) -> (Vec<f32>, usize, usize) {
    let rw = region.min(w);
    let rh = region.min(h);
    let (x0, y0) = ((w - rw) / 2, (h - rh) / 2);
    let mut out = Vec::with_capacity(rw * rh);
    for y in y0..y0 + rh {
        out.extend_from_slice(&data[y * w + x0..y * w + x0 + rw]);
    }
    (out, rw, rh)
}

impl BaselinePredictor {
    pub const ID: &'static str = "baseline";

    pub fn new(params: BaselineParams) -> Result<Self> {
        if params.window == 0 || params.stride == 0 || params.region == 0 {
            return Err(Error::invalid(
                "baseline window, stride and region must be positive",
            ));
        }
        if !(params.tau > 0.0 && params.tau <= 1.0) {
            return Err(Error::invalid("baseline tau must lie in (0, 1]"));
        }
        params.similarity.validate()?;
        Ok(BaselinePredictor {
            states: BTreeMap::new(),
            params,
        })
    }

    pub fn with_state(mut self, site_id: impl Into<String>, mean: MeanImage) -> Self {
        self.states.insert(site_id.into(), mean);
        self
    }

    pub fn params(&self) -> &BaselineParams {
        &self.params
    }

    /// Smallest window structure value between the frame and the state.
    pub fn min_window_structure(&self, site_id: &str, frame: &TrailImage) -> Result<f64> {
        let state = self
            .states
            .get(site_id)
            .ok_or_else(|| Error::invalid(format!("no background state for site {site_id}")))?;
        let gray = to_grayscale(frame);
        if (gray.width, gray.height) != (state.width(), state.height()) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", state.width(), state.height()),
                actual: format!("{}x{}", gray.width, gray.height),
            });
        }
        let p = &self.params;
        let (a, rw, rh) = central(&gray.pixels, gray.width, gray.height, p.region);
        let (b, _, _) = central(state.values(), gray.width, gray.height, p.region);
        let geometry = WindowGeometry {
            window: p.window.min(rw).min(rh),
            stride: p.stride,
        };
        let m = structure_matrix(
            &Plane::new(rw, rh, &a)?,
            &Plane::new(rw, rh, &b)?,
            &geometry,
            &p.similarity,
        )?;
        Ok(m.values.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// `p_animal = clamp((τ − m) / τ, 0, 1)` for minimum window value `m`.
    pub fn p_animal(&self, min_structure: f64) -> f64 {
        ((self.params.tau - min_structure) / self.params.tau).clamp(0.0, 1.0)
    }
}

impl Predictor for BaselinePredictor {
    fn id(&self) -> &str {
        Self::ID
    }

    fn predict(&self, input: &PredictInput<'_>) -> Result<Prediction> {
        let m = self.min_window_structure(input.site_id, input.prepared)?;
        let pa = self.p_animal(m);
        Prediction::new(pa, 1.0 - pa, Self::ID)
    }
}
