use std::path::{Path, PathBuf};

use metatrack::detector::DetectorConfig;
use metatrack::keyvalue::KeyValues;
use metatrack::meta::{BaselineConfig, MetaConfig};
use metatrack::synth::{SynthConfig, JITTER_SCALE, JITTER_SHIFT};
use metatrack::tracker::TrackerConfig;
use metatrack::{Error, Result};

/// Keys owned by the run itself rather than one of the component configs.
/// `seed` is shared with the generator settings.
const RUN_KEYS: &[&str] = &["out", "jitter-shift", "jitter-scale"];

/// Every setting a command may read, merged from defaults, an optional
/// config file and command-line overrides (in increasing precedence).
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub detector: DetectorConfig,
    pub meta: MetaConfig,
    pub baseline: BaselineConfig,
    pub synth: SynthConfig,
    pub tracker: TrackerConfig,
    /// Root seed of every random stream; also the generator seed.
    pub seed: u64,
    pub out: PathBuf,
    /// Largest target-crop offset during task sampling, in crop sides.
    pub jitter_shift: f64,
    /// Largest target-crop zoom factor during task sampling.
    pub jitter_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            detector: DetectorConfig::default(),
            meta: MetaConfig::default(),
            baseline: BaselineConfig::default(),
            synth: SynthConfig::default(),
            tracker: TrackerConfig::default(),
            seed: 0,
            out: PathBuf::from("out"),
            jitter_shift: JITTER_SHIFT,
            jitter_scale: JITTER_SCALE,
        }
    }
}

impl RunConfig {
    /// All recognised keys, sorted.
    pub fn keys() -> Vec<&'static str> {
        let mut keys: Vec<&'static str> = [
            DetectorConfig::KEYS,
            MetaConfig::KEYS,
            BaselineConfig::KEYS,
            SynthConfig::KEYS,
            TrackerConfig::KEYS,
            RUN_KEYS,
        ]
        .concat();
        keys.sort_unstable();
        keys.dedup();
        keys
    }

    /// Layers `kv` over the defaults. Unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let known = Self::keys();
        if let Some(k) = kv.keys().find(|k| !known.contains(k)) {
            return Err(Error::Config(format!("unknown key {k:?}")));
        }
        let mut cfg = RunConfig::default();
        cfg.detector.apply(kv)?;
        cfg.meta.apply(kv)?;
        cfg.baseline.apply(kv)?;
        cfg.synth.apply(kv)?;
        cfg.tracker.apply(kv)?;
        cfg.seed = cfg.synth.seed;
        if let Some(out) = kv.get("out") {
            cfg.out = PathBuf::from(out);
        }
        kv.read_into("jitter-shift", &mut cfg.jitter_shift)?;
        kv.read_into("jitter-scale", &mut cfg.jitter_scale)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.meta.validate()?;
        self.synth.validate()?;
        self.tracker.validate()?;
        if !(self.jitter_shift >= 0.0 && self.jitter_scale >= 1.0) {
            return Err(Error::Config(format!(
                "jitter-shift {} must be >= 0 and jitter-scale {} >= 1",
                self.jitter_shift, self.jitter_scale
            )));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.detector.to_kv();
        kv.merge(&self.meta.to_kv());
        kv.merge(&self.baseline.to_kv());
        kv.merge(&self.synth.to_kv());
        kv.merge(&self.tracker.to_kv());
        kv.set("seed", self.seed);
        kv.set("out", self.out.display());
        kv.set("jitter-shift", self.jitter_shift);
        kv.set("jitter-scale", self.jitter_scale);
        kv
    }

    /// Defaults, then the file at `path` (if any), then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &KeyValues) -> Result<Self> {
        let mut kv = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                KeyValues::parse(&text)?
            }
            None => KeyValues::new(),
        };
        kv.merge(overrides);
        Self::from_kv(&kv)
    }
}
