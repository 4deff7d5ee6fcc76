use crate::error::{Error, Result};
use crate::keyvalue::KeyValues;

/// Final per-step outer-loss weights for four inner steps.
pub const FINAL_GAMMA: [f64; 5] = [0.05, 0.10, 0.2, 0.30, 0.35];

/// Hyperparameters of the inner and outer optimisation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaConfig {
    /// Inner gradient steps K.
    pub inner_steps: usize,
    /// Initial value of every inner learning rate.
    pub alpha_init: f64,
    /// Adam step size of the outer loop.
    pub outer_lr: f64,
    pub tasks_per_iteration: usize,
    /// Epochs run with detached inner gradients.
    pub first_order_epochs: usize,
    pub epochs: usize,
    pub iterations_per_epoch: usize,
    /// When false the inner rates stay at `alpha_init`.
    pub learn_lr: bool,
    /// Global-norm bound applied to outer gradients before Adam.
    pub grad_clip: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_steps: 4,
            alpha_init: 0.001,
            outer_lr: 1e-4,
            tasks_per_iteration: 8,
            first_order_epochs: 2,
            epochs: 3,
            iterations_per_epoch: 100,
            learn_lr: true,
            grad_clip: 10.0,
        }
    }
}

impl MetaConfig {
    pub const KEYS: &'static [&'static str] = &[
        "inner-steps",
        "alpha-init",
        "outer-lr",
        "tasks-per-iteration",
        "first-order-epochs",
        "epochs",
        "iterations-per-epoch",
        "learn-lr",
        "grad-clip",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inner-steps", self.inner_steps),
            ("tasks-per-iteration", self.tasks_per_iteration),
            ("epochs", self.epochs),
            ("iterations-per-epoch", self.iterations_per_epoch),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        if !(self.alpha_init > 0.0) || !(self.outer_lr >= 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Config(format!(
                "alpha-init ({}) and grad-clip ({}) must be positive, outer-lr ({}) non-negative",
                self.alpha_init, self.grad_clip, self.outer_lr
            )));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.epochs * self.iterations_per_epoch
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("inner-steps", self.inner_steps);
        kv.set("alpha-init", self.alpha_init);
        kv.set("outer-lr", self.outer_lr);
        kv.set("tasks-per-iteration", self.tasks_per_iteration);
        kv.set("first-order-epochs", self.first_order_epochs);
        kv.set("epochs", self.epochs);
        kv.set("iterations-per-epoch", self.iterations_per_epoch);
        kv.set("learn-lr", self.learn_lr);
        kv.set("grad-clip", self.grad_clip);
        kv
    }

    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        kv.read_into("inner-steps", &mut self.inner_steps)?;
        kv.read_into("alpha-init", &mut self.alpha_init)?;
        kv.read_into("outer-lr", &mut self.outer_lr)?;
        kv.read_into("tasks-per-iteration", &mut self.tasks_per_iteration)?;
        kv.read_into("first-order-epochs", &mut self.first_order_epochs)?;
        kv.read_into("epochs", &mut self.epochs)?;
        kv.read_into("iterations-per-epoch", &mut self.iterations_per_epoch)?;
        kv.read_into("learn-lr", &mut self.learn_lr)?;
        kv.read_into("grad-clip", &mut self.grad_clip)?;
        Ok(())
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut cfg = MetaConfig::default();
        cfg.apply(kv)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Whether `epoch` runs with detached inner gradients.
    pub fn first_order(&self, epoch: usize) -> bool {
        epoch < self.first_order_epochs
    }
}

/// Final weights for `steps` inner steps: [`FINAL_GAMMA`] itself for four
/// steps, otherwise that profile resampled linearly onto `steps + 1` points.
pub fn final_gamma(steps: usize) -> Vec<f64> {
    let last = (FINAL_GAMMA.len() - 1) as f64;
    let raw: Vec<f64> = (0..=steps)
        .map(|i| {
            let u = if steps == 0 {
                last
            } else {
                i as f64 * last / steps as f64
            };
            let lo = (u.floor() as usize).min(FINAL_GAMMA.len() - 2);
            let f = u - lo as f64;
            (1.0 - f) * FINAL_GAMMA[lo] + f * FINAL_GAMMA[lo + 1]
        })
        .collect();
    normalize(raw)
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

/// Outer-loss weights for `epoch`: uniform at epoch 0, moving linearly to
/// [`final_gamma`] at the last epoch. A single-epoch run uses the final weights.
pub fn gamma_schedule(epoch: usize, cfg: &MetaConfig) -> Vec<f64> {
    let k = cfg.inner_steps;
    let target = final_gamma(k);
    let uniform = 1.0 / (k + 1) as f64;
    let s = if cfg.epochs <= 1 {
        1.0
    } else {
        (epoch.min(cfg.epochs - 1)) as f64 / (cfg.epochs - 1) as f64
    };
    normalize(
        target
            .iter()
            .map(|&t| (1.0 - s) * uniform + s * t)
            .collect(),
    )
}
