use crate::autodiff::{Graph, Var};
use crate::detector::{
    assign_labels, detection_loss, Detector, DetectorOutput, Input, LabelTargets, ParamSet,
};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An input patch and the box of the target object inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub bbox: BoundingBox,
}

/// Support and target samples of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Task<T> {
    pub support: Vec<Sample<T>>,
    pub target: Vec<Sample<T>>,
}

impl<T> Task<T> {
    pub fn new(support: Vec<Sample<T>>, target: Vec<Sample<T>>) -> Result<Self> {
        if support.is_empty() || target.is_empty() {
            return Err(Error::Invalid(format!(
                "task needs support and target samples, got {} and {}",
                support.len(),
                target.len()
            )));
        }
        Ok(Task { support, target })
    }
}

/// A sample with its frozen-prefix features and label targets precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared<T> {
    pub input: Tensor<T>,
    pub targets: LabelTargets<T>,
}

/// Runs the frozen prefix and label assignment once per sample.
pub fn prepare<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    samples: &[Sample<T>],
) -> Result<Vec<Prepared<T>>> {
    det.check(params)?;
    samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                input: det.prefix_features(&s.image, params)?,
                targets: assign_labels(&s.bbox, det.config())?,
            })
        })
        .collect()
}

/// Weight nodes for every entry (trainable ones differentiable) plus rate
/// nodes for the trainable entries.
#[derive(Clone, Debug)]
pub struct MetaVars<'g, T: Scalar> {
    pub theta: Vec<Var<'g, T>>,
    pub lrs: Vec<Var<'g, T>>,
}

impl<'g, T: Scalar> MetaVars<'g, T> {
    pub fn new(g: &'g Graph<T>, params: &ParamSet<T>, learn_lr: bool) -> Self {
        let theta = params
            .entries()
            .iter()
            .map(|e| {
                if e.trainable {
                    g.param(e.weight.clone())
                } else {
                    g.constant(e.weight.clone())
                }
            })
            .collect();
        let lrs = params
            .lrs()
            .into_iter()
            .map(|lr| {
                if learn_lr {
                    g.param(lr)
                } else {
                    g.constant(lr)
                }
            })
            .collect();
        MetaVars { theta, lrs }
    }
}

/// Mean detection loss of `weights` over `set`.
pub fn set_loss<'g, T: Scalar>(
    det: &Detector,
    weights: &[Var<'g, T>],
    set: &[Prepared<T>],
) -> Result<Var<'g, T>> {
    let g = weights
        .first()
        .ok_or_else(|| Error::Invalid("empty weight list".into()))?
        .graph();
    if set.is_empty() {
        return Err(Error::Invalid("loss over an empty sample set".into()));
    }
    let mut total: Option<Var<'g, T>> = None;
    for p in set {
        let out = det.forward_vars(g.constant(p.input.clone()), Input::Features, weights)?;
        let l = detection_loss(&out, &p.targets, det.config())?;
        total = Some(match total {
            None => l,
            Some(t) => t.add(l)?,
        });
    }
    total.expect("non-empty set").scale(1.0 / set.len() as f64)
}

/// `lr * grad` with per-kernel rates broadcast over a convolution weight.
fn scaled_step<'g, T: Scalar>(lr: Var<'g, T>, grad: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = grad.shape();
    let lr = if shape.len() == 4 {
        lr.expand(&[1, 2, 3], &shape)?
    } else {
        lr
    };
    lr.mul(grad)
}

/// Inner gradient descent on graph nodes, returning `[theta_0, ..., theta_steps]`.
///
/// With `track_graph` the support gradients stay differentiable, so every
/// `theta_j` depends on `theta_0` and on the rates through the full
/// second-order path; without it the gradients enter as constants.
pub fn inner_gd_vars<'g, T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    vars: &MetaVars<'g, T>,
    support: &[Prepared<T>],
    steps: usize,
    track_graph: bool,
) -> Result<Vec<Vec<Var<'g, T>>>> {
    let trainable = params.trainable();
    if vars.theta.len() != params.len() || vars.lrs.len() != trainable.len() {
        return Err(Error::Invalid(
            "meta variables do not match the parameter set".into(),
        ));
    }
    let g = vars.theta[0].graph();
    let mut trajectory = vec![vars.theta.clone()];
    for step in 0..steps {
        let cur = trajectory.last().expect("non-empty trajectory");
        let next = (|| -> Result<Vec<Var<'g, T>>> {
            let loss = set_loss(det, cur, support)?;
            let wrt: Vec<Var<'g, T>> = trainable.iter().map(|&i| cur[i]).collect();
            let grads = g.grad(loss, &wrt, track_graph)?;
            let mut next = cur.clone();
            for ((&i, grad), &lr) in trainable.iter().zip(grads).zip(&vars.lrs) {
                next[i] = cur[i].sub(scaled_step(lr, grad)?)?;
            }
            Ok(next)
        })()
        .map_err(|e| Error::InnerStep {
            step: step + 1,
            source: Box::new(e),
        })?;
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// `sum_k gamma_k * mean target loss at theta_k`. Zero weights are skipped.
pub fn outer_loss<'g, T: Scalar>(
    det: &Detector,
    trajectory: &[Vec<Var<'g, T>>],
    target: &[Prepared<T>],
    gamma: &[f64],
) -> Result<Var<'g, T>> {
    if gamma.len() != trajectory.len() {
        return Err(Error::Invalid(format!(
            "{} outer weights for a trajectory of {} parameter sets",
            gamma.len(),
            trajectory.len()
        )));
    }
    let mut total: Option<Var<'g, T>> = None;
    for (theta, &w) in trajectory.iter().zip(gamma) {
        if w == 0.0 {
            continue;
        }
        let term = set_loss(det, theta, target)?.scale(w)?;
        total = Some(match total {
            None => term,
            Some(t) => t.add(term)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => trajectory[0][0]
            .graph()
            .constant(Tensor::scalar(T::zero()))
            .reshape(&[1]),
    }
}

/// Tensor-level `w - lr * g` with per-kernel broadcasting.
fn apply_step<T: Scalar>(w: &Tensor<T>, lr: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let per = w.numel() / lr.numel();
    let (wd, ld, gd) = (w.data(), lr.data(), g.data());
    Tensor::from_fn(w.shape().to_vec(), |i| wd[i] - ld[i / per] * gd[i])
}

/// Outcome of tensor-level inner descent.
#[derive(Clone, Debug)]
pub struct Adaptation<T> {
    /// `[theta_0, ..., theta_steps]`.
    pub trajectory: Vec<ParamSet<T>>,
    /// Support loss at each `theta_j`, `steps + 1` values.
    pub support_losses: Vec<f64>,
}

impl<T> Adaptation<T> {
    pub fn adapted(&self) -> &ParamSet<T> {
        self.trajectory.last().expect("non-empty trajectory")
    }
}

/// Inner descent on tensors with each parameter set's own rates. One small
/// graph is built per step.
pub fn adapt<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    support: &[Prepared<T>],
    steps: usize,
) -> Result<Adaptation<T>> {
    det.check(params)?;
    let trainable = params.trainable();
    let lrs = params.lrs();
    let mut trajectory = vec![params.clone()];
    let mut support_losses = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let cur = trajectory.last().expect("non-empty trajectory");
        let (loss, next) = (|| -> Result<(f64, ParamSet<T>)> {
            let g = Graph::new();
            let vars = MetaVars::new(&g, cur, false);
            let loss = set_loss(det, &vars.theta, support)?;
            let wrt: Vec<Var<'_, T>> = trainable.iter().map(|&i| vars.theta[i]).collect();
            let grads = g.grad(loss, &wrt, false)?;
            let mut weights = cur.weights();
            for ((&i, grad), lr) in trainable.iter().zip(grads).zip(&lrs) {
                let w = apply_step(&weights[i], lr, &grad.value());
                if !w.all_finite() {
                    return Err(Error::NonFinite { op: "inner update" });
                }
                weights[i] = w;
            }
            Ok((loss.item().as_f64(), cur.with_weights(weights)?))
        })()
        .map_err(|e| Error::InnerStep {
            step: step + 1,
            source: Box::new(e),
        })?;
        support_losses.push(loss);
        trajectory.push(next);
    }
    support_losses.push(loss_value(
        det,
        trajectory.last().expect("non-empty"),
        support,
    )?);
    Ok(Adaptation {
        trajectory,
        support_losses,
    })
}

/// Tensor-level inner descent from raw samples: `[theta_0, ..., theta_steps]`.
pub fn inner_gd<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    support: &[Sample<T>],
    steps: usize,
) -> Result<Vec<ParamSet<T>>> {
    if support.is_empty() {
        return Err(Error::Invalid(
            "inner descent needs a non-empty support set".into(),
        ));
    }
    let prepared = prepare(det, params, support)?;
    Ok(adapt(det, params, &prepared, steps)?.trajectory)
}

/// Mean detection loss of `params` over `set`, without recording gradients.
pub fn loss_value<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    set: &[Prepared<T>],
) -> Result<f64> {
    let g = Graph::new();
    let weights: Vec<Var<'_, T>> = params
        .entries()
        .iter()
        .map(|e| g.constant(e.weight.clone()))
        .collect();
    Ok(set_loss(det, &weights, set)?.item().as_f64())
}

/// Head outputs for a prepared input.
pub fn forward_prepared<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    input: &Tensor<T>,
) -> Result<DetectorOutput<T>> {
    let g = Graph::new();
    let weights: Vec<Var<'_, T>> = params
        .entries()
        .iter()
        .map(|e| g.constant(e.weight.clone()))
        .collect();
    Ok(det
        .forward_vars(g.constant(input.clone()), Input::Features, &weights)?
        .values())
}
