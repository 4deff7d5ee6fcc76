use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use metatrack::detector::{init_params, Checkpoint, Detector, DetectorConfig};
use metatrack::eval::{
    adaptation_gap, evaluate, summarize, write_report, DatasetReport, EvalReport, GapReport,
};
use metatrack::keyvalue::KeyValues;
use metatrack::meta::{AdamState, BaselineTrainer, MetaTrainer, Sample, Task};
use metatrack::rng::stream;
use metatrack::synth::{
    dataset_dirs, generate_dataset, read_dataset, read_sequence, write_dataset, TaskSampler,
};
use metatrack::tracker::{run_tracker, write_results, TrackResult};
use metatrack::{Error, ParamSet32, Result, Sequence32};

use crate::config::RunConfig;

/// Stream ids under the run seed.
const META_STREAM: u64 = 0x3e7a;
const BASELINE_STREAM: u64 = 0xba5e;
const GAP_STREAM: u64 = 0x6a9;

pub const TRAIN_LOG: &str = "train_log.txt";
pub const BASELINE_LOG: &str = "baseline_log.txt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BASELINE_CHECKPOINT: &str = "baseline.ckpt";
pub const SUMMARY: &str = "summary.txt";

/// Receives human-oriented progress lines.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Invalid(format!("cannot create {}: {e}", dir.display())))
}

pub fn epoch_checkpoint(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:03}.ckpt"))
}

/// Optimiser state stored next to a checkpoint.
pub fn adam_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("adam")
}

/// Task sampler over `pool` with the run's crop jitter.
pub fn task_sampler(cfg: &RunConfig, pool: Vec<Sequence32>) -> Result<TaskSampler<f32>> {
    TaskSampler::new(pool, cfg.detector.input_size)?.with_jitter(cfg.jitter_shift, cfg.jitter_scale)
}

/// The meta batch of `iteration`, a pure function of the seed and the index.
pub fn meta_batch(
    sampler: &TaskSampler<f32>,
    seed: u64,
    iteration: usize,
    tasks: usize,
) -> Result<Vec<Task<f32>>> {
    let mut rng = stream(seed, &[META_STREAM, iteration as u64]);
    (0..tasks)
        .map(|_| Ok(sampler.sample(&mut rng)?.task))
        .collect()
}

/// Labelled patches for baseline step `iteration`: the support and target
/// patches of freshly drawn tasks, in order, cut to `batch`.
pub fn baseline_batch(
    sampler: &TaskSampler<f32>,
    seed: u64,
    iteration: usize,
    batch: usize,
) -> Result<Vec<Sample<f32>>> {
    let mut rng = stream(seed, &[BASELINE_STREAM, iteration as u64]);
    let mut out = Vec::with_capacity(batch);
    while out.len() < batch {
        let task = sampler.sample(&mut rng)?.task;
        out.extend(task.support.into_iter().chain(task.target));
    }
    out.truncate(batch);
    Ok(out)
}

/// Held-out adaptation tasks for [`cmd_gap`].
pub fn gap_tasks(sampler: &TaskSampler<f32>, seed: u64, count: usize) -> Result<Vec<Task<f32>>> {
    let mut rng = stream(seed, &[GAP_STREAM]);
    (0..count)
        .map(|_| Ok(sampler.sample(&mut rng)?.task))
        .collect()
}

/// Writes `cfg.synth.sequences` sequences; returns how many.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<usize> {
    create_dir(out)?;
    let seqs: Vec<Sequence32> = generate_dataset(&cfg.synth, 0)?;
    write_dataset(&seqs, out)?;
    Ok(seqs.len())
}

/// What a meta-training invocation did.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iterations: usize,
    pub second_order_steps: usize,
    pub first_order_steps: usize,
    pub final_loss: f64,
}

impl TrainSummary {
    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("iterations", self.iterations);
        kv.set("second_order_steps", self.second_order_steps);
        kv.set("first_order_steps", self.first_order_steps);
        kv.set("final_loss", self.final_loss);
        kv
    }
}

fn log_line(iteration: usize, epoch: usize, loss: f64) -> String {
    format!("{iteration}, {epoch}, {loss}\n")
}

fn save_with_meta(
    params: &ParamSet32,
    det: &DetectorConfig,
    meta: &[(&str, String)],
    path: &Path,
) -> Result<()> {
    let mut ckpt = Checkpoint::new(det.clone(), params.clone());
    for (k, v) in meta {
        ckpt.meta.set(*k, v);
    }
    ckpt.save(path)
}

/// Meta-trains on the dataset in `dataset`, writing one checkpoint (plus
/// optimiser state) per epoch, `final.ckpt`, the loss log and a summary.
/// With `resume`, continues from an epoch checkpoint of an earlier run.
pub fn cmd_metatrain(
    cfg: &RunConfig,
    dataset: &Path,
    out: &Path,
    resume: Option<&Path>,
    progress: Progress,
) -> Result<TrainSummary> {
    let sampler = task_sampler(cfg, read_dataset(dataset)?)?;
    let detector = Detector::new(cfg.detector.clone())?;
    create_dir(out)?;
    let mut log_text = String::new();
    let mut trainer = match resume {
        None => MetaTrainer::new(
            detector,
            cfg.meta.clone(),
            init_params(&cfg.detector, cfg.seed, cfg.meta.alpha_init)?,
        )?,
        Some(path) => {
            let ckpt = Checkpoint::<f32>::load(path)?;
            if ckpt.config != cfg.detector {
                return Err(Error::Config(format!(
                    "{} was trained with a different detector configuration",
                    path.display()
                )));
            }
            let iteration: usize = ckpt.meta.parse_opt("iteration")?.ok_or_else(|| {
                Error::Invalid(format!("{} has no iteration record", path.display()))
            })?;
            let adam = AdamState::load(&adam_path(path))?;
            let old_log = path.parent().unwrap_or(Path::new(".")).join(TRAIN_LOG);
            let old = fs::read_to_string(&old_log).map_err(Error::io_at(&old_log))?;
            let kept: Vec<&str> = old.lines().take(iteration).collect();
            if kept.len() != iteration {
                return Err(Error::Invalid(format!(
                    "{} has fewer than {iteration} records",
                    old_log.display()
                )));
            }
            for l in kept {
                log_text.push_str(l);
                log_text.push('\n');
            }
            MetaTrainer::resume(detector, cfg.meta.clone(), ckpt.params, adam, iteration)?
        }
    };
    let mut log = fs::File::create(out.join(TRAIN_LOG))?;
    log.write_all(log_text.as_bytes())?;
    let total = cfg.meta.total_iterations();
    let mut last_loss = f64::NAN;
    trainer.run(
        |i| meta_batch(&sampler, cfg.seed, i, cfg.meta.tasks_per_iteration),
        |r| {
            last_loss = r.outer_loss;
            log.write_all(log_line(r.iteration, r.epoch, r.outer_loss).as_bytes())?;
            if (r.iteration + 1) % 10 == 0 || r.iteration + 1 == total {
                progress(&format!(
                    "iteration {}/{total} epoch {} loss {:.5} ({} ms)",
                    r.iteration + 1,
                    r.epoch,
                    r.outer_loss,
                    r.wall_ms
                ));
            }
            Ok(())
        },
        |t, epoch| {
            let path = epoch_checkpoint(out, epoch);
            let meta = [
                ("iteration", t.iteration().to_string()),
                ("epoch", epoch.to_string()),
                ("final", "false".into()),
            ];
            save_with_meta(t.params(), &cfg.detector, &meta, &path)?;
            t.adam().save(&adam_path(&path))
        },
    )?;
    let meta = [
        ("iteration", trainer.iteration().to_string()),
        ("epoch", (cfg.meta.epochs - 1).to_string()),
        ("final", "true".into()),
    ];
    save_with_meta(
        trainer.params(),
        &cfg.detector,
        &meta,
        &out.join(FINAL_CHECKPOINT),
    )?;
    let summary = TrainSummary {
        iterations: trainer.iteration(),
        second_order_steps: trainer.second_order_steps,
        first_order_steps: trainer.first_order_steps,
        final_loss: last_loss,
    };
    fs::write(out.join(SUMMARY), summary.to_kv().to_text())?;
    Ok(summary)
}

/// Plain supervised Adam training on individual labelled patches; writes
/// `baseline.ckpt` and a per-iteration loss log. Returns the losses.
pub fn cmd_baselinetrain(
    cfg: &RunConfig,
    dataset: &Path,
    out: &Path,
    progress: Progress,
) -> Result<Vec<f64>> {
    let sampler = task_sampler(cfg, read_dataset(dataset)?)?;
    let detector = Detector::new(cfg.detector.clone())?;
    create_dir(out)?;
    let params = init_params(&cfg.detector, cfg.seed, cfg.meta.alpha_init)?;
    let mut trainer = BaselineTrainer::new(detector, params, cfg.baseline.lr, cfg.meta.grad_clip)?;
    let mut losses = Vec::with_capacity(cfg.baseline.iterations);
    let mut log = String::new();
    for i in 0..cfg.baseline.iterations {
        let batch = baseline_batch(&sampler, cfg.seed, i, cfg.baseline.batch)?;
        let loss = trainer.step(&batch).map_err(|e| Error::Iteration {
            iteration: i,
            source: Box::new(e),
        })?;
        let _ = writeln!(log, "{i}, {loss}");
        losses.push(loss);
        if (i + 1) % 50 == 0 {
            progress(&format!(
                "baseline iteration {}/{} loss {loss:.5}",
                i + 1,
                cfg.baseline.iterations
            ));
        }
    }
    fs::write(out.join(BASELINE_LOG), log)?;
    save_with_meta(
        trainer.params(),
        &cfg.detector,
        &[("iteration", losses.len().to_string())],
        &out.join(BASELINE_CHECKPOINT),
    )?;
    Ok(losses)
}

/// Sequence directories under `data`, which is either one sequence or a dataset.
fn sequence_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    if data.join("meta.txt").is_file() {
        Ok(vec![data.to_path_buf()])
    } else {
        dataset_dirs(data)
    }
}

fn dir_name(dir: &Path) -> String {
    dir.file_name()
        .map_or_else(|| "sequence".into(), |n| n.to_string_lossy().into_owned())
}

/// Tracks every sequence under `data` and writes `<sequence>.txt` result
/// files plus `track_summary.txt`. The detector comes from the checkpoint,
/// the tracker settings from `cfg`.
pub fn cmd_track(
    cfg: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    progress: Progress,
) -> Result<Vec<(String, TrackResult)>> {
    let ckpt = Checkpoint::<f32>::load(checkpoint)?;
    let detector = Detector::new(ckpt.config.clone())?;
    detector.check(&ckpt.params)?;
    create_dir(out)?;
    let mut results = Vec::new();
    let mut summary = String::from("# sequence frames updates psr_triggers fallbacks\n");
    for dir in sequence_dirs(data)? {
        let name = dir_name(&dir);
        let seq: Sequence32 = read_sequence(&dir)?;
        let r = run_tracker(&detector, &seq, &ckpt.params, &cfg.tracker)
            .map_err(|e| Error::Invalid(format!("sequence {name}: {e}")))?;
        write_results(&out.join(format!("{name}.txt")), &r.boxes, &r.scores)?;
        let _ = writeln!(
            summary,
            "{name} {} {} {} {}",
            r.boxes.len(),
            r.update_count,
            r.psr_trigger_count,
            r.fallback_count
        );
        progress(&format!(
            "tracked {name}: {} frames, {} updates",
            r.boxes.len(),
            r.update_count
        ));
        results.push((name, r));
    }
    fs::write(out.join("track_summary.txt"), summary)?;
    Ok(results)
}

/// Scores result files in `results` against the ground truth of `dataset`
/// and writes `report.txt` and `success.txt`.
pub fn cmd_eval(results: &Path, dataset: &Path, out: &Path) -> Result<DatasetReport> {
    let mut per_seq: Vec<(String, EvalReport)> = Vec::new();
    for dir in sequence_dirs(dataset)? {
        let name = dir_name(&dir);
        let (_, gt) = metatrack::synth::read_meta(&dir.join("meta.txt"))?;
        let path = results.join(format!("{name}.txt"));
        if !path.is_file() {
            return Err(Error::Invalid(format!(
                "missing result file {}",
                path.display()
            )));
        }
        let (boxes, _) = metatrack::tracker::read_results(&path)?;
        let report =
            evaluate(&boxes, &gt).map_err(|e| Error::Invalid(format!("sequence {name}: {e}")))?;
        per_seq.push((name, report));
    }
    let report = summarize(per_seq)?;
    write_report(&report, out)?;
    Ok(report)
}

/// Adapts meta-trained and baseline checkpoints on the same held-out tasks
/// and writes the metric block and per-step loss curves.
pub fn cmd_gap(
    cfg: &RunConfig,
    meta_ckpt: &Path,
    baseline_ckpt: &Path,
    dataset: &Path,
    out: &Path,
    tasks: usize,
    steps: usize,
) -> Result<GapReport> {
    let meta = Checkpoint::<f32>::load(meta_ckpt)?;
    let base = Checkpoint::<f32>::load(baseline_ckpt)?;
    if meta.config != base.config {
        return Err(Error::Config(
            "meta and baseline checkpoints use different detector configurations".into(),
        ));
    }
    let detector = Detector::new(meta.config.clone())?;
    let mut run = cfg.clone();
    run.detector = meta.config.clone();
    let sampler = task_sampler(&run, read_dataset(dataset)?)?;
    let set = gap_tasks(&sampler, cfg.seed, tasks)?;
    let report = adaptation_gap(&detector, &meta.params, &base.params, &set, steps)?;
    write_gap(&report, out)?;
    Ok(report)
}

/// `gap.txt` plus mean and per-task curves for both sides.
pub fn write_gap(report: &GapReport, out: &Path) -> Result<()> {
    create_dir(out)?;
    fs::write(out.join("gap.txt"), report.metrics())?;
    fs::write(out.join("meta_curves.txt"), report.meta.curves_text())?;
    fs::write(
        out.join("baseline_curves.txt"),
        report.baseline.curves_text(),
    )?;
    fs::write(out.join("meta_task_curves.txt"), report.meta.tasks_text())?;
    fs::write(
        out.join("baseline_task_curves.txt"),
        report.baseline.tasks_text(),
    )?;
    Ok(())
}
