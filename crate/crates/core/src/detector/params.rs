use std::io::{Read, Write};

use rand_distr::{Distribution, Normal};

use super::config::{DetectorConfig, HeadStyle};
use crate::error::{Error, Result};
use crate::keyvalue::KeyValues;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One named tensor of the detector together with its inner-loop rates.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub weight: Tensor<T>,
    pub trainable: bool,
    /// Per-kernel rates for convolution weights (`[C_out]`), elementwise
    /// rates otherwise. `None` exactly when the entry is frozen.
    pub lr: Option<Tensor<T>>,
}

/// Shape of the learning-rate tensor attached to a weight of `shape`.
pub fn lr_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() == 4 {
        vec![shape[0]]
    } else {
        shape.to_vec()
    }
}

/// Ordered collection of detector parameters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: ParamEntry<T>) -> Result<()> {
        if self.entries.iter().any(|e| e.name == entry.name) {
            return Err(Error::Param {
                name: entry.name,
                detail: "duplicate entry".into(),
            });
        }
        match (&entry.lr, entry.trainable) {
            (Some(lr), true) if lr.shape() == lr_shape(entry.weight.shape()).as_slice() => {}
            (Some(lr), true) => {
                return Err(Error::Param {
                    name: entry.name,
                    detail: format!(
                        "lr shape {:?} does not fit weight {:?}",
                        lr.shape(),
                        entry.weight.shape()
                    ),
                })
            }
            (None, false) => {}
            (None, true) => {
                return Err(Error::Param {
                    name: entry.name,
                    detail: "trainable entry without lr".into(),
                })
            }
            (Some(_), false) => {
                return Err(Error::Param {
                    name: entry.name,
                    detail: "frozen entry with lr".into(),
                })
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn weights(&self) -> Vec<Tensor<T>> {
        self.entries.iter().map(|e| e.weight.clone()).collect()
    }

    /// Indices of trainable entries, in order.
    pub fn trainable(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].trainable)
            .collect()
    }

    /// Total number of scalar weights (trainable or not).
    pub fn num_weights(&self) -> usize {
        self.entries.iter().map(|e| e.weight.numel()).sum()
    }

    /// Same structure with replaced weights.
    pub fn with_weights(&self, weights: Vec<Tensor<T>>) -> Result<Self> {
        if weights.len() != self.entries.len() {
            return Err(Error::Invalid(format!(
                "{} weights for {} entries",
                weights.len(),
                self.entries.len()
            )));
        }
        let mut out = self.clone();
        for (e, w) in out.entries.iter_mut().zip(weights) {
            if e.weight.shape() != w.shape() {
                return Err(Error::Param {
                    name: e.name.clone(),
                    detail: format!("shape {:?} replaced by {:?}", e.weight.shape(), w.shape()),
                });
            }
            e.weight = w;
        }
        Ok(out)
    }

    /// Same structure with replaced learning rates (one per trainable entry).
    pub fn with_lrs(&self, lrs: Vec<Tensor<T>>) -> Result<Self> {
        let idx = self.trainable();
        if lrs.len() != idx.len() {
            return Err(Error::Invalid(format!(
                "{} rate tensors for {} trainable entries",
                lrs.len(),
                idx.len()
            )));
        }
        let mut out = self.clone();
        for (i, lr) in idx.into_iter().zip(lrs) {
            let e = &mut out.entries[i];
            if Some(lr.shape()) != e.lr.as_ref().map(|l| l.shape()) {
                return Err(Error::Param {
                    name: e.name.clone(),
                    detail: format!("lr shape {:?}", lr.shape()),
                });
            }
            e.lr = Some(lr);
        }
        Ok(out)
    }

    /// Learning rates of trainable entries, in order.
    pub fn lrs(&self) -> Vec<Tensor<T>> {
        self.entries.iter().filter_map(|e| e.lr.clone()).collect()
    }

    /// Sets every learning rate to `value`.
    pub fn fill_lrs(&self, value: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            if let Some(lr) = &e.lr {
                e.lr = Some(Tensor::full(lr.shape().to_vec(), T::lit(value)));
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    weight: e.weight.cast(),
                    trainable: e.trainable,
                    lr: e.lr.as_ref().map(Tensor::cast),
                })
                .collect(),
        }
    }
}

/// One convolution of the network and where its parameters live.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub frozen: bool,
}

/// The network's convolutions grouped by role.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Architecture {
    pub shared: Vec<LayerSpec>,
    pub cls_tail: Vec<LayerSpec>,
    pub reg_tail: Vec<LayerSpec>,
}

impl Architecture {
    pub fn from_config(cfg: &DetectorConfig) -> Self {
        let chans = &cfg.trunk_channels;
        let last = chans.len() - 1;
        let stage = |i: usize, prefix: &str| LayerSpec {
            name: format!("{prefix}trunk.{i}"),
            in_channels: if i == 0 { 3 } else { chans[i - 1] },
            out_channels: chans[i],
            stride: cfg.stage_stride(i),
            frozen: i < cfg.frozen_prefix_layers,
        };
        let mut shared: Vec<LayerSpec> = (0..last).map(|i| stage(i, "")).collect();
        let (mut cls_tail, mut reg_tail) = (Vec::new(), Vec::new());
        if cfg.shared_trunk {
            shared.push(stage(last, ""));
        } else {
            cls_tail.push(stage(last, "cls."));
            reg_tail.push(stage(last, "reg."));
        }
        let width = chans[last];
        let head = |branch: &str, out: usize| {
            vec![
                LayerSpec {
                    name: format!("{branch}.head.0"),
                    in_channels: width,
                    out_channels: width,
                    stride: 1,
                    frozen: false,
                },
                LayerSpec {
                    name: format!("{branch}.head.1"),
                    in_channels: width,
                    out_channels: out,
                    stride: 1,
                    frozen: false,
                },
            ]
        };
        cls_tail.extend(head("cls", 1));
        reg_tail.extend(head("reg", 4));
        Architecture {
            shared,
            cls_tail,
            reg_tail,
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.shared
            .iter()
            .chain(&self.cls_tail)
            .chain(&self.reg_tail)
    }
}

/// Freshly initialised parameters: He-normal convolutions, zero biases,
/// small output layers with prior-shaped biases, and every rate at `alpha_init`.
pub fn init_params<T: Scalar>(
    cfg: &DetectorConfig,
    seed: u64,
    alpha_init: f64,
) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let arch = Architecture::from_config(cfg);
    let mut rng = rng::stream(seed, &[0x1417]);
    let mut params = ParamSet::new();
    for layer in arch.layers() {
        let fan_in = layer.in_channels * 9;
        let is_output = layer.name.ends_with("head.1");
        let std = if is_output {
            0.01
        } else {
            (2.0 / fan_in as f64).sqrt()
        };
        let normal = Normal::new(0.0, std).expect("positive std");
        let shape = vec![layer.out_channels, layer.in_channels, 3, 3];
        let n: usize = shape.iter().product();
        let w: Vec<T> = (0..n).map(|_| T::lit(normal.sample(&mut rng))).collect();
        let bias_value = match (is_output, layer.name.as_str()) {
            // a 1% foreground prior, close to the best constant prediction
            (true, "cls.head.1") => -(99.0f64).ln(),
            // typical half-extent of a tracked object, in stride units
            (true, "reg.head.1") if cfg.head_style == HeadStyle::AnchorFree => {
                cfg.input_size as f64 / (8.0 * cfg.stride as f64)
            }
            _ => 0.0,
        };
        let trainable = !layer.frozen;
        let lr =
            |shape: &[usize]| trainable.then(|| Tensor::full(lr_shape(shape), T::lit(alpha_init)));
        params.push(ParamEntry {
            name: format!("{}.weight", layer.name),
            lr: lr(&shape),
            weight: Tensor::new(shape, w)?,
            trainable,
        })?;
        let bshape = vec![layer.out_channels];
        params.push(ParamEntry {
            name: format!("{}.bias", layer.name),
            lr: lr(&bshape),
            weight: Tensor::full(bshape, T::lit(bias_value)),
            trainable,
        })?;
    }
    Ok(params)
}

/// A parameter set together with the configuration it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: DetectorConfig,
    pub params: ParamSet<T>,
    /// Free-form metadata stored alongside the configuration (e.g. iteration).
    pub meta: KeyValues,
}

const META_PREFIX: &str = "meta.";

impl<T: Scalar> Checkpoint<T> {
    pub fn new(config: DetectorConfig, params: ParamSet<T>) -> Self {
        Checkpoint {
            config,
            params,
            meta: KeyValues::new(),
        }
    }

    /// Config block (`key=value` lines, blank-line terminated) followed by
    /// one record per entry: `u32` name length, name, `u8` trainable flag,
    /// weight tensor, and the rate tensor when trainable.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let mut kv = self.config.to_kv();
        for (k, v) in self.meta.iter() {
            kv.set(format!("{META_PREFIX}{k}"), v);
        }
        let mut buf = kv.to_text().into_bytes();
        buf.push(b'\n');
        for e in self.params.entries() {
            let name = e.name.as_bytes();
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(u8::from(e.trainable));
            e.weight.write_to(&mut buf)?;
            if let Some(lr) = &e.lr {
                lr.write_to(&mut buf)?;
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::format("checkpoint", "missing end of config block"))?;
        let text = std::str::from_utf8(&bytes[..split + 1])
            .map_err(|_| Error::format("checkpoint", "config block is not UTF-8"))?;
        let mut kv = KeyValues::parse(text)?;
        let mut meta = KeyValues::new();
        let meta_keys: Vec<String> = kv
            .keys()
            .filter(|k| k.starts_with(META_PREFIX))
            .map(str::to_owned)
            .collect();
        for k in meta_keys {
            let v = kv.remove(&k).expect("key listed");
            meta.set(&k[META_PREFIX.len()..], v);
        }
        let config = DetectorConfig::from_kv(&kv)?;
        let mut rest = &bytes[split + 2..];
        let mut params = ParamSet::new();
        while !rest.is_empty() {
            let mut len = [0u8; 4];
            rest.read_exact(&mut len)?;
            let len = u32::from_le_bytes(len) as usize;
            if rest.len() < len + 1 {
                return Err(Error::format("checkpoint", "truncated record"));
            }
            let name = std::str::from_utf8(&rest[..len])
                .map_err(|_| Error::format("checkpoint", "entry name is not UTF-8"))?
                .to_owned();
            let trainable = match rest[len] {
                0 => false,
                1 => true,
                b => {
                    return Err(Error::format(
                        "checkpoint",
                        format!("bad trainable flag {b} for {name}"),
                    ))
                }
            };
            rest = &rest[len + 1..];
            let weight = Tensor::read_from(&mut rest)?;
            let lr = if trainable {
                Some(Tensor::read_from(&mut rest)?)
            } else {
                None
            };
            params.push(ParamEntry {
                name,
                weight,
                trainable,
                lr,
            })?;
        }
        Ok(Checkpoint {
            config,
            params,
            meta,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io_at(path))?;
        Self::read_from(&mut bytes.as_slice())
    }
}
