//! Ground-truth annotation types shared by curation, prediction and evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::imaging::CaptureKind;
use crate::{Error, Result};

/// Binary image class. Images without animals are the "empty" class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Animal,
    NoAnimal,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Animal => "Animal",
            Label::NoAnimal => "NoAnimal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "animal" => Ok(Label::Animal),
            "noanimal" | "no_animal" | "no-animal" | "empty" => Ok(Label::NoAnimal),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

/// Axis-aligned box in source-frame pixels, half-open: `[x, x+w) × [y, y+h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub class_name: String,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BoundingBox {
            x,
            y,
            w,
            h,
            class_name: String::new(),
        }
    }

    pub fn with_class(mut self, class_name: impl Into<String>) -> Self {
        self.class_name = class_name.into();
        self
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::invalid(format!(
                "box must have positive size, got {}x{}",
                self.w, self.h
            )));
        }
        if !(self.x >= 0.0 && self.y >= 0.0) {
            return Err(Error::invalid(format!(
                "box origin must be non-negative, got ({}, {})",
                self.x, self.y
            )));
        }
        Ok(())
    }
}

/// Per-image ground truth. `label == Animal` exactly when `boxes` is non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub site_id: String,
    pub timestamp: i64,
    pub capture_kind: CaptureKind,
    pub label: Label,
    pub boxes: Vec<BoundingBox>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::invalid("empty image_id"));
        }
        if self.timestamp <= 0 {
            return Err(Error::invalid(format!(
                "timestamp must be positive, got {}",
                self.timestamp
            )));
        }
        match (self.label, self.boxes.is_empty()) {
            (Label::Animal, true) => {
                return Err(Error::invalid("Animal label requires at least one box"))
            }
            (Label::NoAnimal, false) => {
                return Err(Error::invalid("NoAnimal label must not carry boxes"))
            }
            _ => {}
        }
        self.boxes.iter().try_for_each(BoundingBox::validate)
    }
}
