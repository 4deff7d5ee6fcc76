use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::keyvalue::{self, KeyValues};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Rectangle,
    Ellipse,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Rectangle, Shape::Ellipse, Shape::Triangle];

    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Rectangle => "rectangle",
            Shape::Ellipse => "ellipse",
            Shape::Triangle => "triangle",
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown shape {s:?}")))
    }
}

/// Parameters of the synthetic video generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Side of the square canvas, in pixels.
    pub canvas_size: usize,
    pub shapes: Vec<Shape>,
    /// Range of the initial object extent (both sides), in pixels.
    pub object_min_size: f64,
    pub object_max_size: f64,
    /// Per-frame velocity noise, in pixels.
    pub translation_sigma: f64,
    /// Per-frame log-scale noise.
    pub scale_sigma: f64,
    /// Per-frame color noise.
    pub appearance_sigma: f64,
    pub distractors: usize,
    pub sequence_length: usize,
    /// Number of sequences in a generated dataset.
    pub sequences: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            canvas_size: 128,
            shapes: Shape::ALL.to_vec(),
            object_min_size: 14.0,
            object_max_size: 22.0,
            translation_sigma: 1.0,
            scale_sigma: 0.01,
            appearance_sigma: 0.01,
            distractors: 2,
            sequence_length: 100,
            sequences: 50,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub const KEYS: &'static [&'static str] = &[
        "canvas-size",
        "shapes",
        "object-min-size",
        "object-max-size",
        "translation-sigma",
        "scale-sigma",
        "appearance-sigma",
        "distractors",
        "sequence-length",
        "sequences",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.translation_sigma,
            self.scale_sigma,
            self.appearance_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config(format!(
                "motion and appearance sigmas must be non-negative, got {sigmas:?}"
            )));
        }
        if self.sequence_length < 2 {
            return Err(Error::Config(format!(
                "sequence-length {} must be at least 2",
                self.sequence_length
            )));
        }
        if self.shapes.is_empty() {
            return Err(Error::Config("shapes must not be empty".into()));
        }
        if !(self.object_min_size >= 4.0) || self.object_max_size < self.object_min_size {
            return Err(Error::Config(format!(
                "object sizes [{}, {}] must satisfy 4 <= min <= max",
                self.object_min_size, self.object_max_size
            )));
        }
        // room for every object with margins, at the largest drifted size
        let side = self.object_max_size * 1.6 + 4.0;
        let needed = (self.distractors + 1) as f64 * side * side * 2.0;
        if (self.canvas_size as f64) < 2.0 * side
            || needed > (self.canvas_size * self.canvas_size) as f64
        {
            return Err(Error::Config(format!(
                "canvas-size {} is too small for {} objects of size up to {}",
                self.canvas_size,
                self.distractors + 1,
                self.object_max_size
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("canvas-size", self.canvas_size);
        kv.set("shapes", keyvalue::join(&self.shapes));
        kv.set("object-min-size", self.object_min_size);
        kv.set("object-max-size", self.object_max_size);
        kv.set("translation-sigma", self.translation_sigma);
        kv.set("scale-sigma", self.scale_sigma);
        kv.set("appearance-sigma", self.appearance_sigma);
        kv.set("distractors", self.distractors);
        kv.set("sequence-length", self.sequence_length);
        kv.set("sequences", self.sequences);
        kv.set("seed", self.seed);
        kv
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("canvas-size", &mut self.canvas_size)?;
        if let Some(raw) = kv.get("shapes") {
            self.shapes = keyvalue::split("shapes", raw)?;
        }
        kv.read_into("object-min-size", &mut self.object_min_size)?;
        kv.read_into("object-max-size", &mut self.object_max_size)?;
        kv.read_into("translation-sigma", &mut self.translation_sigma)?;
        kv.read_into("scale-sigma", &mut self.scale_sigma)?;
        kv.read_into("appearance-sigma", &mut self.appearance_sigma)?;
        kv.read_into("distractors", &mut self.distractors)?;
        kv.read_into("sequence-length", &mut self.sequence_length)?;
        kv.read_into("sequences", &mut self.sequences)?;
        kv.read_into("seed", &mut self.seed)?;
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = SynthConfig::default();
        cfg.apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
