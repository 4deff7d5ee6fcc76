use crate::error::{Error, Result};
use crate::keyvalue::{self, KeyValues};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadStyle {
    /// One square anchor per cell; focal + smooth-L1 losses.
    AnchorBased,
    /// Centerness classification and (l, t, r, b) offsets; L2 + L1 losses.
    AnchorFree,
}

impl HeadStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadStyle::AnchorBased => "anchor-based",
            HeadStyle::AnchorFree => "anchor-free",
        }
    }
}

impl std::str::FromStr for HeadStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anchor-based" | "retina" => Ok(HeadStyle::AnchorBased),
            "anchor-free" | "fcos" => Ok(HeadStyle::AnchorFree),
            other => Err(Error::Config(format!("unknown head style {other:?}"))),
        }
    }
}

impl std::fmt::Display for HeadStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture and label geometry of the detector.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub head_style: HeadStyle,
    /// Side of the square input patch, in pixels.
    pub input_size: usize,
    /// Total downsampling from input to the output grid.
    pub stride: usize,
    /// Side of the single square anchor (anchor-based heads only).
    pub anchor_size: f64,
    /// Output channels of each trunk stage; the first `log2(stride)` stages downsample by 2.
    pub trunk_channels: Vec<usize>,
    /// When false, the last trunk stage is duplicated into each branch.
    pub shared_trunk: bool,
    /// Leading trunk stages that never receive gradient updates.
    pub frozen_prefix_layers: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            head_style: HeadStyle::AnchorFree,
            input_size: 96,
            stride: 8,
            anchor_size: 24.0,
            trunk_channels: vec![16, 32, 32, 64],
            shared_trunk: false,
            frozen_prefix_layers: 1,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || !self.stride.is_power_of_two() {
            return Err(Error::Config(format!(
                "stride {} must be a power of two",
                self.stride
            )));
        }
        if self.input_size == 0 || self.input_size % self.stride != 0 {
            return Err(Error::Config(format!(
                "input-size {} must be a positive multiple of stride {}",
                self.input_size, self.stride
            )));
        }
        let downsamples = self.stride.trailing_zeros() as usize;
        if self.trunk_channels.len() < downsamples.max(1) {
            return Err(Error::Config(format!(
                "{} trunk stages cannot reach stride {}",
                self.trunk_channels.len(),
                self.stride
            )));
        }
        if self.trunk_channels.contains(&0) {
            return Err(Error::Config("trunk-channels must be positive".into()));
        }
        if self.head_style == HeadStyle::AnchorBased && !(self.anchor_size > 0.0) {
            return Err(Error::Config(format!(
                "anchor-size must be positive, got {}",
                self.anchor_size
            )));
        }
        if self.frozen_prefix_layers >= self.trunk_channels.len() {
            return Err(Error::Config(format!(
                "frozen-prefix-layers {} must leave at least one trainable trunk stage out of {}",
                self.frozen_prefix_layers,
                self.trunk_channels.len()
            )));
        }
        Ok(())
    }

    /// Side of the output grid.
    pub fn grid_size(&self) -> usize {
        self.input_size / self.stride
    }

    /// Center of grid cell `i` along one axis, in input pixels.
    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.stride as f64
    }

    pub fn stage_stride(&self, stage: usize) -> usize {
        if stage < self.stride.trailing_zeros() as usize {
            2
        } else {
            1
        }
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("head-style", self.head_style);
        kv.set("input-size", self.input_size);
        kv.set("stride", self.stride);
        kv.set("anchor-size", self.anchor_size);
        kv.set("trunk-channels", keyvalue::join(&self.trunk_channels));
        kv.set("shared-trunk", self.shared_trunk);
        kv.set("frozen-prefix-layers", self.frozen_prefix_layers);
        kv
    }

    pub const KEYS: &'static [&'static str] = &[
        "head-style",
        "input-size",
        "stride",
        "anchor-size",
        "trunk-channels",
        "shared-trunk",
        "frozen-prefix-layers",
    ];

    /// Applies any recognised keys of `kv` on top of `self`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("head-style", &mut self.head_style)?;
        kv.read_into("input-size", &mut self.input_size)?;
        kv.read_into("stride", &mut self.stride)?;
        kv.read_into("anchor-size", &mut self.anchor_size)?;
        if let Some(raw) = kv.get("trunk-channels") {
            self.trunk_channels = keyvalue::split("trunk-channels", raw)?;
        }
        kv.read_into("shared-trunk", &mut self.shared_trunk)?;
        kv.read_into("frozen-prefix-layers", &mut self.frozen_prefix_layers)?;
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = DetectorConfig::default();
        cfg.apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
