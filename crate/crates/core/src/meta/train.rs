use std::fmt;
use std::time::Instant;

use super::adam::{clip_global_norm, AdamState};
use super::config::{gamma_schedule, MetaConfig};
use super::inner::{inner_gd_vars, outer_loss, prepare, set_loss, MetaVars, Sample, Task};
use crate::autodiff::{Graph, Var};
use crate::detector::{init_params, Detector, DetectorConfig, ParamSet};
use crate::error::{Error, Result};
use crate::keyvalue::KeyValues;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smallest inner learning rate kept after an outer update.
pub const MIN_LR: f64 = 1e-6;

/// Outer loss of one task and its gradients.
#[derive(Clone, Debug)]
pub struct MetaGradient<T> {
    pub loss: f64,
    /// One tensor per trainable entry, in entry order.
    pub theta: Vec<Tensor<T>>,
    /// One tensor per trainable entry; zeros when rates are not learned.
    pub lrs: Vec<Tensor<T>>,
}

/// Differentiates the multi-step outer loss of `task` with respect to the
/// initial weights and the inner rates.
pub fn meta_gradient<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    task: &Task<T>,
    cfg: &MetaConfig,
    gamma: &[f64],
    first_order: bool,
) -> Result<MetaGradient<T>> {
    let support = prepare(det, params, &task.support)?;
    let target = prepare(det, params, &task.target)?;
    let g = Graph::new();
    let vars = MetaVars::new(&g, params, cfg.learn_lr);
    let trajectory = inner_gd_vars(det, params, &vars, &support, cfg.inner_steps, !first_order)?;
    let loss = outer_loss(det, &trajectory, &target, gamma)?;
    let trainable = params.trainable();
    let mut wrt: Vec<Var<'_, T>> = trainable.iter().map(|&i| vars.theta[i]).collect();
    if cfg.learn_lr {
        wrt.extend(vars.lrs.iter().copied());
    }
    let grads: Vec<Tensor<T>> = g.grad(loss, &wrt, false)?.iter().map(Var::value).collect();
    let (theta, rest) = grads.split_at(trainable.len());
    let lrs = if cfg.learn_lr {
        rest.to_vec()
    } else {
        params
            .lrs()
            .iter()
            .map(|l| Tensor::zeros(l.shape().to_vec()))
            .collect()
    };
    Ok(MetaGradient {
        loss: loss.item().as_f64(),
        theta: theta.to_vec(),
        lrs,
    })
}

/// Result of one outer update.
#[derive(Clone, Debug)]
pub struct MetaStep<T> {
    pub params: ParamSet<T>,
    /// Mean outer loss over the tasks, before the update.
    pub loss: f64,
    pub second_order: bool,
}

/// The tensors the outer optimiser updates: trainable weights, then rates
/// when they are learned.
pub fn outer_variables<T: Scalar>(params: &ParamSet<T>, learn_lr: bool) -> Vec<Tensor<T>> {
    let mut v: Vec<Tensor<T>> = params
        .trainable()
        .into_iter()
        .map(|i| params.entries()[i].weight.clone())
        .collect();
    if learn_lr {
        v.extend(params.lrs());
    }
    v
}

/// One outer Adam update from the mean meta-gradient over `tasks`, with
/// tasks accumulated in order.
pub fn meta_step<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    tasks: &[Task<T>],
    cfg: &MetaConfig,
    adam: &mut AdamState<T>,
    epoch: usize,
) -> Result<MetaStep<T>> {
    if tasks.is_empty() {
        return Err(Error::Invalid("meta step without tasks".into()));
    }
    let gamma = gamma_schedule(epoch, cfg);
    let first_order = cfg.first_order(epoch);
    let mut sum: Option<MetaGradient<T>> = None;
    for (t, task) in tasks.iter().enumerate() {
        let mg = meta_gradient(det, params, task, cfg, &gamma, first_order)
            .and_then(|mg| {
                if mg.loss.is_finite() {
                    Ok(mg)
                } else {
                    Err(Error::NonFinite { op: "outer loss" })
                }
            })
            .map_err(|e| Error::Task {
                task: t,
                source: Box::new(e),
            })?;
        sum = Some(match sum {
            None => mg,
            Some(acc) => {
                let add = |a: &[Tensor<T>], b: &[Tensor<T>]| -> Result<Vec<Tensor<T>>> {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| x.zip_map(y, |p, q| p + q))
                        .collect()
                };
                MetaGradient {
                    loss: acc.loss + mg.loss,
                    theta: add(&acc.theta, &mg.theta)?,
                    lrs: add(&acc.lrs, &mg.lrs)?,
                }
            }
        });
    }
    let sum = sum.expect("non-empty tasks");
    let n = tasks.len() as f64;
    let scale = T::lit(1.0 / n);
    let mut grads: Vec<Tensor<T>> = sum.theta.iter().map(|g| g.map(|v| v * scale)).collect();
    if cfg.learn_lr {
        grads.extend(sum.lrs.iter().map(|g| g.map(|v| v * scale)));
    }
    clip_global_norm(&mut grads, cfg.grad_clip);
    let updated = adam.update(&outer_variables(params, cfg.learn_lr), &grads, cfg.outer_lr)?;
    let trainable = params.trainable();
    let mut weights = params.weights();
    for (&i, w) in trainable.iter().zip(&updated) {
        weights[i] = w.clone();
    }
    let mut next = params.with_weights(weights)?;
    if cfg.learn_lr {
        let floor = T::lit(MIN_LR);
        let lrs = updated[trainable.len()..]
            .iter()
            .map(|l| l.map(|v| v.max(floor)))
            .collect();
        next = next.with_lrs(lrs)?;
    }
    Ok(MetaStep {
        params: next,
        loss: sum.loss / n,
        second_order: !first_order,
    })
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub outer_loss: f64,
    pub wall_ms: u128,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {}, {}, {}",
            self.iteration, self.epoch, self.outer_loss, self.wall_ms
        )
    }
}

impl LogRecord {
    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::format("training log", format!("line {line:?}"));
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        Ok(LogRecord {
            iteration: parts[0].parse().map_err(|_| bad())?,
            epoch: parts[1].parse().map_err(|_| bad())?,
            outer_loss: parts[2].parse().map_err(|_| bad())?,
            wall_ms: parts[3].parse().map_err(|_| bad())?,
        })
    }
}

/// Outer-loop driver holding parameters, optimiser state and counters.
#[derive(Clone, Debug)]
pub struct MetaTrainer<T> {
    detector: Detector,
    config: MetaConfig,
    params: ParamSet<T>,
    adam: AdamState<T>,
    iteration: usize,
    /// Outer updates that differentiated through the inner gradients,
    /// counting the updates a resumed run inherited.
    pub second_order_steps: usize,
    pub first_order_steps: usize,
}

impl<T: Scalar> MetaTrainer<T> {
    pub fn new(detector: Detector, config: MetaConfig, params: ParamSet<T>) -> Result<Self> {
        let adam = AdamState::new(&outer_variables(&params, config.learn_lr));
        Self::resume(detector, config, params, adam, 0)
    }

    /// Continues a run whose first `iteration` updates are already applied.
    pub fn resume(
        detector: Detector,
        config: MetaConfig,
        params: ParamSet<T>,
        adam: AdamState<T>,
        iteration: usize,
    ) -> Result<Self> {
        config.validate()?;
        detector.check(&params)?;
        let expected = outer_variables(&params, config.learn_lr);
        if adam.m.len() != expected.len()
            || adam
                .m
                .iter()
                .zip(&expected)
                .any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Invalid(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        let first_order_steps =
            iteration.min(config.first_order_epochs * config.iterations_per_epoch);
        let second_order_steps = iteration - first_order_steps;
        Ok(MetaTrainer {
            detector,
            config,
            params,
            adam,
            iteration,
            second_order_steps,
            first_order_steps,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn adam(&self) -> &AdamState<T> {
        &self.adam
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    pub fn config(&self) -> &MetaConfig {
        &self.config
    }

    pub fn epoch(&self) -> usize {
        self.iteration / self.config.iterations_per_epoch
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.total_iterations()
    }

    /// Applies one outer update on `tasks`.
    pub fn step(&mut self, tasks: &[Task<T>]) -> Result<LogRecord> {
        let start = Instant::now();
        let epoch = self.epoch();
        let out = meta_step(
            &self.detector,
            &self.params,
            tasks,
            &self.config,
            &mut self.adam,
            epoch,
        )
        .map_err(|e| Error::Iteration {
            iteration: self.iteration,
            source: Box::new(e),
        })?;
        if out.second_order {
            self.second_order_steps += 1;
        } else {
            self.first_order_steps += 1;
        }
        self.params = out.params;
        let record = LogRecord {
            iteration: self.iteration,
            epoch,
            outer_loss: out.loss,
            wall_ms: start.elapsed().as_millis(),
        };
        self.iteration += 1;
        Ok(record)
    }

    /// Runs the remaining iterations. `tasks(i)` supplies the batch of
    /// iteration `i`; `on_record` sees each log line and `on_epoch` fires
    /// after the last iteration of every epoch.
    pub fn run(
        &mut self,
        mut tasks: impl FnMut(usize) -> Result<Vec<Task<T>>>,
        mut on_record: impl FnMut(&LogRecord) -> Result<()>,
        mut on_epoch: impl FnMut(&Self, usize) -> Result<()>,
    ) -> Result<Vec<LogRecord>> {
        let mut log = Vec::new();
        while !self.is_done() {
            let batch = tasks(self.iteration).map_err(|e| Error::Iteration {
                iteration: self.iteration,
                source: Box::new(e),
            })?;
            let record = self.step(&batch)?;
            on_record(&record)?;
            log.push(record);
            if self.iteration % self.config.iterations_per_epoch == 0 {
                on_epoch(self, self.iteration / self.config.iterations_per_epoch - 1)?;
            }
        }
        Ok(log)
    }
}

/// Meta-trains a freshly initialised detector. `tasks(i)` supplies the batch
/// of iteration `i` and must be deterministic.
pub fn meta_train<T: Scalar>(
    det_cfg: &DetectorConfig,
    meta_cfg: &MetaConfig,
    tasks: impl FnMut(usize) -> Result<Vec<Task<T>>>,
    seed: u64,
) -> Result<(ParamSet<T>, Vec<LogRecord>)> {
    let detector = Detector::new(det_cfg.clone())?;
    let params = init_params(det_cfg, seed, meta_cfg.alpha_init)?;
    let mut trainer = MetaTrainer::new(detector, meta_cfg.clone(), params)?;
    let log = trainer.run(tasks, |_| Ok(()), |_, _| Ok(()))?;
    Ok((trainer.params, log))
}

/// Plain supervised training of the detector, used as the comparison baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub lr: f64,
    pub iterations: usize,
    /// Patches per Adam step.
    pub batch: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            lr: 1e-3,
            iterations: 300,
            batch: 8,
        }
    }
}

impl BaselineConfig {
    pub const KEYS: &'static [&'static str] =
        &["baseline-lr", "baseline-iterations", "baseline-batch"];

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("baseline-lr", self.lr);
        kv.set("baseline-iterations", self.iterations);
        kv.set("baseline-batch", self.batch);
        kv
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("baseline-lr", &mut self.lr)?;
        kv.read_into("baseline-iterations", &mut self.iterations)?;
        kv.read_into("baseline-batch", &mut self.batch)?;
        if self.batch == 0 || !(self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "baseline-batch {} / baseline-lr {}",
                self.batch, self.lr
            )));
        }
        Ok(())
    }
}

/// Adam on the mean detection loss of labelled patches. Inner rates are
/// carried along untouched.
#[derive(Clone, Debug)]
pub struct BaselineTrainer<T> {
    detector: Detector,
    params: ParamSet<T>,
    adam: AdamState<T>,
    lr: f64,
    grad_clip: f64,
}

impl<T: Scalar> BaselineTrainer<T> {
    pub fn new(detector: Detector, params: ParamSet<T>, lr: f64, grad_clip: f64) -> Result<Self> {
        detector.check(&params)?;
        let adam = AdamState::new(&outer_variables(&params, false));
        Ok(BaselineTrainer {
            detector,
            params,
            adam,
            lr,
            grad_clip,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    /// One update; returns the batch loss before it.
    pub fn step(&mut self, samples: &[Sample<T>]) -> Result<f64> {
        let prepared = prepare(&self.detector, &self.params, samples)?;
        let g = Graph::new();
        let vars = MetaVars::new(&g, &self.params, false);
        let loss = set_loss(&self.detector, &vars.theta, &prepared)?;
        let trainable = self.params.trainable();
        let wrt: Vec<Var<'_, T>> = trainable.iter().map(|&i| vars.theta[i]).collect();
        let mut grads: Vec<Tensor<T>> = g.grad(loss, &wrt, false)?.iter().map(Var::value).collect();
        clip_global_norm(&mut grads, self.grad_clip);
        let updated = self
            .adam
            .update(&outer_variables(&self.params, false), &grads, self.lr)?;
        let mut weights = self.params.weights();
        for (&i, w) in trainable.iter().zip(updated) {
            weights[i] = w;
        }
        self.params = self.params.with_weights(weights)?;
        Ok(loss.item().as_f64())
    }
}
