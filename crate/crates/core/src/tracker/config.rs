use crate::error::{Error, Result};
use crate::keyvalue::KeyValues;

/// Online tracking settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerConfig {
    /// Inner steps on the first frame.
    pub adapt_steps: usize,
    /// Inner steps per online update; 0 disables updating.
    pub online_steps: usize,
    pub update_interval: usize,
    /// Below this raw score on every cell the previous box is kept.
    pub score_threshold: f64,
    pub psr_threshold: f64,
    /// Buffer entries, the pinned initial one included.
    pub buffer_capacity: usize,
    pub add_to_buffer_score: f64,
    pub penalty_k: f64,
    pub window_influence: f64,
    pub shape_lerp: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            adapt_steps: 5,
            online_steps: 1,
            update_interval: 10,
            score_threshold: 0.1,
            psr_threshold: 0.7,
            buffer_capacity: 30,
            add_to_buffer_score: 0.8,
            penalty_k: 0.04,
            window_influence: 0.42,
            shape_lerp: 0.3,
        }
    }
}

impl TrackerConfig {
    pub const KEYS: &'static [&'static str] = &[
        "adapt-steps",
        "online-steps",
        "update-interval",
        "score-threshold",
        "psr-threshold",
        "buffer-capacity",
        "add-to-buffer-score",
        "penalty-k",
        "window-influence",
        "shape-lerp",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.window_influence) {
            return Err(Error::Config(format!(
                "window-influence {} outside [0, 1]",
                self.window_influence
            )));
        }
        if !(self.shape_lerp > 0.0 && self.shape_lerp <= 1.0) {
            return Err(Error::Config(format!(
                "shape-lerp {} outside (0, 1]",
                self.shape_lerp
            )));
        }
        if self.update_interval == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config(
                "update-interval and buffer-capacity must be positive".into(),
            ));
        }
        if !(self.penalty_k >= 0.0) {
            return Err(Error::Config(format!(
                "penalty-k {} must be non-negative",
                self.penalty_k
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("adapt-steps", self.adapt_steps);
        kv.set("online-steps", self.online_steps);
        kv.set("update-interval", self.update_interval);
        kv.set("score-threshold", self.score_threshold);
        kv.set("psr-threshold", self.psr_threshold);
        kv.set("buffer-capacity", self.buffer_capacity);
        kv.set("add-to-buffer-score", self.add_to_buffer_score);
        kv.set("penalty-k", self.penalty_k);
        kv.set("window-influence", self.window_influence);
        kv.set("shape-lerp", self.shape_lerp);
        kv
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("adapt-steps", &mut self.adapt_steps)?;
        kv.read_into("online-steps", &mut self.online_steps)?;
        kv.read_into("update-interval", &mut self.update_interval)?;
        kv.read_into("score-threshold", &mut self.score_threshold)?;
        kv.read_into("psr-threshold", &mut self.psr_threshold)?;
        kv.read_into("buffer-capacity", &mut self.buffer_capacity)?;
        kv.read_into("add-to-buffer-score", &mut self.add_to_buffer_score)?;
        kv.read_into("penalty-k", &mut self.penalty_k)?;
        kv.read_into("window-influence", &mut self.window_influence)?;
        kv.read_into("shape-lerp", &mut self.shape_lerp)?;
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = TrackerConfig::default();
        cfg.apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
