//! One-pass evaluation metrics and paired adaptation experiments.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::detector::{decode, Detector, ParamSet};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::meta::{adapt, forward_prepared, loss_value, prepare, Prepared, Task};
use crate::scalar::Scalar;

/// Points on the success-plot threshold grid `0.00, 0.01, ..., 1.00`.
pub const SUCCESS_POINTS: usize = 101;
/// Center-distance threshold for precision, in pixels.
pub const PRECISION_PX: f64 = 20.0;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

pub fn thresholds() -> Vec<f64> {
    (0..SUCCESS_POINTS)
        .map(|i| i as f64 / (SUCCESS_POINTS - 1) as f64)
        .collect()
}

/// Fraction of `ious` strictly above each grid threshold.
pub fn success_curve(ious: &[f64]) -> Vec<f64> {
    let n = ious.len().max(1) as f64;
    thresholds()
        .iter()
        .map(|&t| ious.iter().filter(|&&v| v > t).count() as f64 / n)
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRecord {
    pub iou: f64,
    pub center_error: f64,
}

/// Metrics of one predicted track against ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// In input order.
    pub frames: Vec<FrameRecord>,
    pub mean_iou: f64,
    pub success: Vec<f64>,
    /// Mean of `success`.
    pub auc: f64,
    pub precision: f64,
}

impl EvalReport {
    fn from_frames(frames: Vec<FrameRecord>) -> Self {
        let ious: Vec<f64> = frames.iter().map(|f| f.iou).collect();
        let success = success_curve(&ious);
        let precision = if frames.is_empty() {
            0.0
        } else {
            frames
                .iter()
                .filter(|f| f.center_error <= PRECISION_PX)
                .count() as f64
                / frames.len() as f64
        };
        EvalReport {
            mean_iou: mean(&ious),
            auc: mean(&success),
            success,
            precision,
            frames,
        }
    }
}

/// Scores `predictions` against `gt` frame by frame.
pub fn evaluate(predictions: &[BoundingBox], gt: &[BoundingBox]) -> Result<EvalReport> {
    if predictions.len() != gt.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} ground-truth boxes",
            predictions.len(),
            gt.len()
        )));
    }
    let frames = predictions
        .iter()
        .zip(gt)
        .map(|(p, g)| FrameRecord {
            iou: iou(p, g),
            center_error: p.center_distance(g),
        })
        .collect();
    Ok(EvalReport::from_frames(frames))
}

/// Per-sequence reports plus their averages; the summary curve is the mean
/// of the per-sequence curves.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetReport {
    pub sequences: Vec<(String, EvalReport)>,
    pub mean_iou: f64,
    pub success: Vec<f64>,
    pub auc: f64,
    pub precision: f64,
}

pub fn summarize(sequences: Vec<(String, EvalReport)>) -> Result<DatasetReport> {
    if sequences.is_empty() {
        return Err(Error::Invalid("no sequences to summarize".into()));
    }
    let n = sequences.len() as f64;
    let success: Vec<f64> = (0..SUCCESS_POINTS)
        .map(|i| sequences.iter().map(|(_, r)| r.success[i]).sum::<f64>() / n)
        .collect();
    let mean_iou = sequences.iter().map(|(_, r)| r.mean_iou).sum::<f64>() / n;
    let precision = sequences.iter().map(|(_, r)| r.precision).sum::<f64>() / n;
    Ok(DatasetReport {
        auc: mean(&success),
        success,
        mean_iou,
        precision,
        sequences,
    })
}

impl DatasetReport {
    /// Plain-text table followed by a `metric=value` block.
    pub fn to_text(&self) -> String {
        let mut s = String::from("sequence            frames  mean_iou       auc  precision\n");
        for (name, r) in &self.sequences {
            let _ = writeln!(
                s,
                "{name:<18} {:>7} {:>9.4} {:>9.4} {:>10.4}",
                r.frames.len(),
                r.mean_iou,
                r.auc,
                r.precision
            );
        }
        let _ = writeln!(
            s,
            "{:<18} {:>7} {:>9.4} {:>9.4} {:>10.4}",
            "overall", "", self.mean_iou, self.auc, self.precision
        );
        s.push('\n');
        s.push_str(&self.metrics());
        s
    }

    pub fn metrics(&self) -> String {
        format!(
            "sequences={}\nmean_iou={}\nauc={}\nprecision_20px={}\n",
            self.sequences.len(),
            self.mean_iou,
            self.auc,
            self.precision
        )
    }

    /// Two columns: threshold and success fraction.
    pub fn success_text(&self) -> String {
        success_text(&self.success)
    }
}

pub fn success_text(curve: &[f64]) -> String {
    let mut s = String::from("# threshold success\n");
    for (t, v) in thresholds().iter().zip(curve) {
        let _ = writeln!(s, "{t:.2} {v}");
    }
    s
}

/// Reads back the `metric=value` block of a report.
pub fn parse_metrics(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .filter_map(|(k, v)| v.trim().parse().ok().map(|v| (k.trim().to_string(), v)))
        .collect()
}

/// Writes `report.txt` and `success.txt` into `dir`.
pub fn write_report(report: &DatasetReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.txt"), report.to_text())?;
    fs::write(dir.join("success.txt"), report.success_text())?;
    Ok(())
}

/// Best-scoring decoded box for a prepared input.
pub fn detect_best<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    p: &Prepared<T>,
) -> Result<BoundingBox> {
    let cands = decode(&forward_prepared(det, params, &p.input)?, det.config())?;
    let mut best = cands[0];
    for c in &cands[1..] {
        if c.score > best.score {
            best = *c;
        }
    }
    Ok(best.bbox)
}

/// One task adapted by one parameter set. Curves have `steps + 1` points.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord {
    pub support_losses: Vec<f64>,
    pub target_losses: Vec<f64>,
    pub target_ious: Vec<f64>,
}

impl TaskRecord {
    pub fn iou_before(&self) -> f64 {
        self.target_ious[0]
    }

    pub fn iou_after(&self) -> f64 {
        *self.target_ious.last().expect("non-empty curve")
    }
}

/// Averages over tasks for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct SideReport {
    pub tasks: Vec<TaskRecord>,
    pub iou_before: f64,
    pub iou_after: f64,
    pub target_loss_before: f64,
    pub target_loss_after: f64,
}

impl SideReport {
    fn from_tasks(tasks: Vec<TaskRecord>) -> Self {
        let avg = |f: &dyn Fn(&TaskRecord) -> f64| mean(&tasks.iter().map(f).collect::<Vec<_>>());
        SideReport {
            iou_before: avg(&|t| t.iou_before()),
            iou_after: avg(&|t| t.iou_after()),
            target_loss_before: avg(&|t| t.target_losses[0]),
            target_loss_after: avg(&|t| *t.target_losses.last().expect("non-empty")),
            tasks,
        }
    }

    pub fn improvement(&self) -> f64 {
        self.iou_after - self.iou_before
    }

    /// Mean curve over tasks of a per-task curve.
    pub fn mean_curve(&self, curve: impl Fn(&TaskRecord) -> &[f64]) -> Vec<f64> {
        let len = self.tasks.first().map_or(0, |t| curve(t).len());
        (0..len)
            .map(|j| mean(&self.tasks.iter().map(|t| curve(t)[j]).collect::<Vec<_>>()))
            .collect()
    }

    /// Columns: step, mean support loss, mean target loss, mean target IoU.
    pub fn curves_text(&self) -> String {
        let s = self.mean_curve(|t| &t.support_losses);
        let l = self.mean_curve(|t| &t.target_losses);
        let i = self.mean_curve(|t| &t.target_ious);
        let mut out = String::from("# step support_loss target_loss target_iou\n");
        for j in 0..s.len() {
            let _ = writeln!(out, "{j} {} {} {}", s[j], l[j], i[j]);
        }
        out
    }

    /// Per-task curves, one row per (task, step).
    pub fn tasks_text(&self) -> String {
        let mut out = String::from("# task step support_loss target_loss target_iou\n");
        for (k, t) in self.tasks.iter().enumerate() {
            for j in 0..t.support_losses.len() {
                let _ = writeln!(
                    out,
                    "{k} {j} {} {} {}",
                    t.support_losses[j], t.target_losses[j], t.target_ious[j]
                );
            }
        }
        out
    }
}

/// Adapts `params` on every task's support set and scores each step on the
/// target set.
pub fn adaptation_curves<T: Scalar>(
    det: &Detector,
    params: &ParamSet<T>,
    tasks: &[Task<T>],
    steps: usize,
) -> Result<SideReport> {
    let records = tasks
        .iter()
        .enumerate()
        .map(|(k, task)| {
            (|| -> Result<TaskRecord> {
                let support = prepare(det, params, &task.support)?;
                let target = prepare(det, params, &task.target)?;
                let a = adapt(det, params, &support, steps)?;
                let mut target_losses = Vec::with_capacity(steps + 1);
                let mut target_ious = Vec::with_capacity(steps + 1);
                for theta in &a.trajectory {
                    target_losses.push(loss_value(det, theta, &target)?);
                    let ious = target
                        .iter()
                        .zip(&task.target)
                        .map(|(p, s)| Ok(iou(&detect_best(det, theta, p)?, &s.bbox)))
                        .collect::<Result<Vec<_>>>()?;
                    target_ious.push(mean(&ious));
                }
                Ok(TaskRecord {
                    support_losses: a.support_losses,
                    target_losses,
                    target_ious,
                })
            })()
            .map_err(|e| Error::Task {
                task: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SideReport::from_tasks(records))
}

/// The same adaptation run with meta-trained and baseline parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub meta: SideReport,
    pub baseline: SideReport,
}

impl GapReport {
    pub fn metrics(&self) -> String {
        format!(
            "meta_iou_before={}\nmeta_iou_after={}\nbaseline_iou_before={}\nbaseline_iou_after={}\nmeta_target_loss_before={}\nmeta_target_loss_after={}\nbaseline_target_loss_before={}\nbaseline_target_loss_after={}\n",
            self.meta.iou_before,
            self.meta.iou_after,
            self.baseline.iou_before,
            self.baseline.iou_after,
            self.meta.target_loss_before,
            self.meta.target_loss_after,
            self.baseline.target_loss_before,
            self.baseline.target_loss_after
        )
    }
}

pub fn adaptation_gap<T: Scalar>(
    det: &Detector,
    meta_params: &ParamSet<T>,
    baseline_params: &ParamSet<T>,
    tasks: &[Task<T>],
    steps: usize,
) -> Result<GapReport> {
    Ok(GapReport {
        meta: adaptation_curves(det, meta_params, tasks, steps)?,
        baseline: adaptation_curves(det, baseline_params, tasks, steps)?,
    })
}
