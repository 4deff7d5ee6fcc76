use super::config::DetectorConfig;
use super::params::{lr_shape, Architecture, LayerSpec, ParamSet};
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Raw head outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorOutput<T> {
    /// `[1, G, G]` classification logits (anchor-based) or pre-sigmoid centerness (anchor-free).
    pub cls: Tensor<T>,
    /// `[4, G, G]` box regression map.
    pub reg: Tensor<T>,
}

/// Head outputs as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct OutputVars<'g, T: Scalar> {
    pub cls: Var<'g, T>,
    pub reg: Var<'g, T>,
}

impl<T: Scalar> OutputVars<'_, T> {
    pub fn values(&self) -> DetectorOutput<T> {
        DetectorOutput {
            cls: self.cls.value(),
            reg: self.reg.value(),
        }
    }
}

/// Where the forward pass starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    /// A `[3, S, S]` image.
    Image,
    /// The output of the frozen trunk prefix (see [`Detector::prefix_features`]).
    Features,
}

/// The convolutional detector: a trunk feeding a classification and a
/// regression branch, each ending in two 3x3 convolutions.
#[derive(Clone, Debug)]
pub struct Detector {
    config: DetectorConfig,
    arch: Architecture,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let arch = Architecture::from_config(&config);
        Ok(Detector { config, arch })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Number of leading frozen convolutions whose output is independent of
    /// every trainable parameter.
    pub fn prefix_layers(&self) -> usize {
        self.arch.shared.iter().take_while(|l| l.frozen).count()
    }

    /// Verifies that `params` has exactly the entries this architecture expects.
    pub fn check<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let expected: Vec<&LayerSpec> = self.arch.layers().collect();
        if params.len() != 2 * expected.len() {
            return Err(Error::Param {
                name: "<set>".into(),
                detail: format!(
                    "expected {} entries, found {}",
                    2 * expected.len(),
                    params.len()
                ),
            });
        }
        for (i, layer) in expected.iter().enumerate() {
            let shapes = [
                (
                    format!("{}.weight", layer.name),
                    vec![layer.out_channels, layer.in_channels, 3, 3],
                ),
                (format!("{}.bias", layer.name), vec![layer.out_channels]),
            ];
            for (j, (name, shape)) in shapes.into_iter().enumerate() {
                let e = &params.entries()[2 * i + j];
                if e.name != name {
                    return Err(Error::Param {
                        name,
                        detail: format!("found {} in its place", e.name),
                    });
                }
                if e.weight.shape() != shape.as_slice() {
                    return Err(Error::Param {
                        name,
                        detail: format!("shape {:?}, expected {:?}", e.weight.shape(), shape),
                    });
                }
                if e.trainable == layer.frozen {
                    return Err(Error::Param {
                        name,
                        detail: format!(
                            "trainable={} disagrees with frozen-prefix-layers",
                            e.trainable
                        ),
                    });
                }
                if let Some(lr) = &e.lr {
                    if lr.shape() != lr_shape(&shape).as_slice() {
                        return Err(Error::Param {
                            name,
                            detail: format!("lr shape {:?}", lr.shape()),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        let s = self.config.input_size;
        if shape != [3, s, s] {
            return Err(Error::shape(
                "forward",
                format!("image {shape:?}, expected [3, {s}, {s}]"),
            ));
        }
        Ok(())
    }

    fn layer<'g, T: Scalar>(
        x: Var<'g, T>,
        spec: &LayerSpec,
        index: usize,
        weights: &[Var<'g, T>],
        relu: bool,
    ) -> Result<Var<'g, T>> {
        let y = x.conv2d(weights[2 * index], weights[2 * index + 1], spec.stride, 1)?;
        if relu {
            y.relu()
        } else {
            Ok(y)
        }
    }

    /// Output of the frozen prefix, computed without recording.
    pub fn prefix_features<T: Scalar>(
        &self,
        image: &Tensor<T>,
        params: &ParamSet<T>,
    ) -> Result<Tensor<T>> {
        self.check_image(image.shape())?;
        let g = Graph::new();
        let weights: Vec<Var<'_, T>> = params
            .entries()
            .iter()
            .map(|e| g.constant(e.weight.clone()))
            .collect();
        let mut x = g.constant(image.clone());
        for (i, spec) in self
            .arch
            .shared
            .iter()
            .take(self.prefix_layers())
            .enumerate()
        {
            x = Self::layer(x, spec, i, &weights, true)?;
        }
        Ok(x.value())
    }

    /// Forward pass on graph nodes. `weights` is aligned with the entries of
    /// the parameter set this detector was checked against.
    pub fn forward_vars<'g, T: Scalar>(
        &self,
        input: Var<'g, T>,
        kind: Input,
        weights: &[Var<'g, T>],
    ) -> Result<OutputVars<'g, T>> {
        if weights.len() != 2 * self.arch.layers().count() {
            return Err(Error::Invalid(format!(
                "{} weight nodes for this architecture",
                weights.len()
            )));
        }
        let start = match kind {
            Input::Image => {
                self.check_image(&input.shape())?;
                0
            }
            Input::Features => self.prefix_layers(),
        };
        let mut x = input;
        for (i, spec) in self.arch.shared.iter().enumerate().skip(start) {
            x = Self::layer(x, spec, i, weights, true)?;
        }
        let mut index = self.arch.shared.len();
        let mut branch = |tail: &[LayerSpec]| -> Result<Var<'g, T>> {
            let mut h = x;
            for (j, spec) in tail.iter().enumerate() {
                h = Self::layer(h, spec, index, weights, j + 1 < tail.len())?;
                index += 1;
            }
            Ok(h)
        };
        let cls = branch(&self.arch.cls_tail)?;
        let reg = branch(&self.arch.reg_tail)?;
        Ok(OutputVars { cls, reg })
    }

    /// Inference on tensors.
    pub fn forward<T: Scalar>(
        &self,
        image: &Tensor<T>,
        params: &ParamSet<T>,
    ) -> Result<DetectorOutput<T>> {
        self.check(params)?;
        let g = Graph::new();
        let weights: Vec<Var<'_, T>> = params
            .entries()
            .iter()
            .map(|e| g.constant(e.weight.clone()))
            .collect();
        let out = self.forward_vars(g.constant(image.clone()), Input::Image, &weights)?;
        Ok(out.values())
    }
}

/// Runs the detector described by `config` on one image.
pub fn forward<T: Scalar>(
    image: &Tensor<T>,
    params: &ParamSet<T>,
    config: &DetectorConfig,
) -> Result<DetectorOutput<T>> {
    Detector::new(config.clone())?.forward(image, params)
}
