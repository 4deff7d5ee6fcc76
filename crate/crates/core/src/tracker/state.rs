use std::fs;
use std::path::Path;

use super::config::TrackerConfig;
use super::post::{cosine_window, peak_to_sidelobe, shape_penalty};
use crate::detector::{assign_labels, decode, Detector, ParamSet};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::meta::{adapt, forward_prepared, prepare, Prepared, Sample};
use crate::scalar::Scalar;
use crate::synth::{crop_search_region, make_support_set, Sequence};
use crate::tensor::Tensor;

/// One buffer entry: the initial zoom triple or a single tracked patch.
#[derive(Clone, Debug)]
pub struct BufferEntry<T> {
    pub samples: Vec<Sample<T>>,
    prepared: Vec<Prepared<T>>,
}

/// Per-sequence tracker state. Owned by one tracker and mutated in order.
#[derive(Clone, Debug)]
pub struct TrackerState<T> {
    pub params: ParamSet<T>,
    pub prev_box: BoundingBox,
    /// Entry 0 is the pinned initial support set.
    pub buffer: Vec<BufferEntry<T>>,
    /// Frames tracked since `init`; the first tracked frame is 1.
    pub frame_index: usize,
    pub frames_since_update: usize,
    /// Row-major cosine window over the output grid.
    pub window: Vec<f64>,
    /// One-step online updates performed so far.
    pub update_count: usize,
    /// Updates caused by the PSR trigger on frames off the interval.
    pub psr_trigger_count: usize,
    pub fallback_count: usize,
    /// Support losses of the first-frame adaptation, `adapt_steps + 1` values.
    pub init_losses: Vec<f64>,
    frame_size: (f64, f64),
}

/// What one call to [`track_frame`] saw and chose.
#[derive(Clone, Debug)]
pub struct FrameResult<T> {
    pub bbox: BoundingBox,
    /// Raw score of the selected cell, or the best raw score on fallback.
    pub score: f64,
    pub psr: f64,
    /// True when every raw score was below the threshold.
    pub fallback: bool,
    /// Search patch and the selected box in its coordinates.
    pub patch: Sample<T>,
    features: Tensor<T>,
}

fn frame_size<T: Scalar>(frame: &Tensor<T>) -> Result<(f64, f64)> {
    match *frame.shape() {
        [3, h, w] => Ok((w as f64, h as f64)),
        ref s => Err(Error::shape(
            "tracker",
            format!("frame {s:?}, expected [3, H, W]"),
        )),
    }
}

impl<T: Scalar> TrackerState<T> {
    pub fn buffer_samples(&self) -> usize {
        self.buffer.iter().map(|e| e.samples.len()).sum()
    }

    fn push_entry(&mut self, entry: BufferEntry<T>, capacity: usize) {
        self.buffer.push(entry);
        while self.buffer.len() > capacity.max(1) {
            // never evict the pinned entry
            self.buffer.remove(1);
        }
    }
}

/// Adapts `base` to the first frame and returns a fresh state.
pub fn init<T: Scalar>(
    det: &Detector,
    frame: &Tensor<T>,
    gt: &BoundingBox,
    base: &ParamSet<T>,
    cfg: &TrackerConfig,
) -> Result<TrackerState<T>> {
    cfg.validate()?;
    let size = frame_size(frame)?;
    let input = det.config().input_size;
    let samples = make_support_set(frame, gt, input)?;
    let prepared = prepare(det, base, &samples)?;
    let adaptation = adapt(det, base, &prepared, cfg.adapt_steps)?;
    let params = adaptation.adapted().clone();
    Ok(TrackerState {
        params,
        prev_box: *gt,
        buffer: vec![BufferEntry { samples, prepared }],
        frame_index: 0,
        frames_since_update: 0,
        window: cosine_window(det.config().grid_size()),
        update_count: 0,
        psr_trigger_count: 0,
        fallback_count: 0,
        init_losses: adaptation.support_losses,
        frame_size: size,
    })
}

/// Detects the target in `frame` around the previous box and updates `prev_box`.
pub fn track_frame<T: Scalar>(
    det: &Detector,
    state: &mut TrackerState<T>,
    frame: &Tensor<T>,
    cfg: &TrackerConfig,
) -> Result<FrameResult<T>> {
    let (fw, fh) = frame_size(frame)?;
    if (fw, fh) != state.frame_size {
        return Err(Error::shape(
            "tracker",
            format!("frame {fw}x{fh}, expected {:?}", state.frame_size),
        ));
    }
    state.frame_index += 1;
    state.frames_since_update += 1;
    let dcfg = det.config();
    let (image, t) = crop_search_region(frame, &state.prev_box, dcfg.input_size)?;
    let features = det.prefix_features(&image, &state.params)?;
    let cands = decode(&forward_prepared(det, &state.params, &features)?, dcfg)?;
    let scores: Vec<f64> = cands.iter().map(|c| c.score).collect();
    let best_raw = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let psr = peak_to_sidelobe(&scores, dcfg.grid_size());

    if scores.iter().all(|&s| s < cfg.score_threshold) {
        state.fallback_count += 1;
        let bbox = t.apply(&state.prev_box);
        return Ok(FrameResult {
            bbox: state.prev_box,
            score: best_raw,
            psr,
            fallback: true,
            patch: Sample { image, bbox },
            features,
        });
    }

    let prev_in_patch = t.apply(&state.prev_box);
    let wi = cfg.window_influence;
    let mut best = (0, f64::NEG_INFINITY);
    for (j, c) in cands.iter().enumerate() {
        let p = shape_penalty(&c.bbox, &prev_in_patch, cfg.penalty_k);
        let v = (1.0 - wi) * p * c.score + wi * state.window[j];
        if v > best.1 {
            best = (j, v);
        }
    }
    let chosen = cands[best.0];
    let selected = t.invert(&chosen.bbox);
    let lerp = cfg.shape_lerp;
    let prev = state.prev_box;
    let mut next = BoundingBox {
        cx: selected.cx,
        cy: selected.cy,
        w: (1.0 - lerp) * prev.w + lerp * selected.w,
        h: (1.0 - lerp) * prev.h + lerp * selected.h,
    };
    // keep the box overlapping the frame so the next crop stays meaningful
    next.cx = next.cx.clamp(0.0, fw);
    next.cy = next.cy.clamp(0.0, fh);
    state.prev_box = next;
    Ok(FrameResult {
        bbox: next,
        score: chosen.score,
        psr,
        fallback: false,
        patch: Sample {
            image,
            bbox: chosen.bbox,
        },
        features,
    })
}

/// Buffer maintenance and the interval / PSR-triggered one-step update.
/// Fallback frames change nothing here.
pub fn end_of_frame<T: Scalar>(
    det: &Detector,
    state: &mut TrackerState<T>,
    result: &FrameResult<T>,
    cfg: &TrackerConfig,
) -> Result<()> {
    if result.fallback {
        return Ok(());
    }
    if result.score >= cfg.add_to_buffer_score {
        let prepared = Prepared {
            input: result.features.clone(),
            targets: assign_labels(&result.patch.bbox, det.config())?,
        };
        state.push_entry(
            BufferEntry {
                samples: vec![result.patch.clone()],
                prepared: vec![prepared],
            },
            cfg.buffer_capacity,
        );
    }
    let on_interval = state.frame_index % cfg.update_interval == 0;
    let psr_fired = result.psr > cfg.psr_threshold;
    if cfg.online_steps > 0 && (on_interval || psr_fired) {
        let set: Vec<Prepared<T>> = state
            .buffer
            .iter()
            .flat_map(|e| e.prepared.iter().cloned())
            .collect();
        state.params = adapt(det, &state.params, &set, cfg.online_steps)?
            .adapted()
            .clone();
        state.update_count += 1;
        if !on_interval {
            state.psr_trigger_count += 1;
        }
        state.frames_since_update = 0;
    }
    Ok(())
}

/// Boxes and scores for every frame of a sequence; frame 0 is the given box.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub boxes: Vec<BoundingBox>,
    pub scores: Vec<f64>,
    pub update_count: usize,
    pub psr_trigger_count: usize,
    pub fallback_count: usize,
}

/// Tracks `seq` from its first ground-truth box.
pub fn run_tracker<T: Scalar>(
    det: &Detector,
    seq: &Sequence<T>,
    base: &ParamSet<T>,
    cfg: &TrackerConfig,
) -> Result<TrackResult> {
    if seq.len() < 2 {
        return Err(Error::Invalid(format!(
            "tracking needs at least 2 frames, got {}",
            seq.len()
        )));
    }
    let mut state = init(det, &seq.frames[0], &seq.gt[0], base, cfg)?;
    let mut boxes = vec![seq.gt[0]];
    let mut scores = vec![1.0];
    for frame in &seq.frames[1..] {
        let r = track_frame(det, &mut state, frame, cfg)?;
        end_of_frame(det, &mut state, &r, cfg)?;
        boxes.push(r.bbox);
        scores.push(r.score);
    }
    Ok(TrackResult {
        boxes,
        scores,
        update_count: state.update_count,
        psr_trigger_count: state.psr_trigger_count,
        fallback_count: state.fallback_count,
    })
}

/// Writes `frame_idx cx cy w h score` lines.
pub fn write_results(path: &Path, boxes: &[BoundingBox], scores: &[f64]) -> Result<()> {
    if boxes.len() != scores.len() {
        return Err(Error::Invalid(format!(
            "{} boxes but {} scores",
            boxes.len(),
            scores.len()
        )));
    }
    let mut text = String::from("# frame_idx cx cy w h score\n");
    for (i, (b, s)) in boxes.iter().zip(scores).enumerate() {
        text.push_str(&format!("{i} {} {} {} {} {s}\n", b.cx, b.cy, b.w, b.h));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a file written by [`write_results`].
pub fn read_results(path: &Path) -> Result<(Vec<BoundingBox>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for line in text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
    {
        let bad = || {
            Error::format(
                "tracking result",
                format!("{}: line {line:?}", path.display()),
            )
        };
        let f: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if f.len() != 6 || f[0] != boxes.len() as f64 {
            return Err(bad());
        }
        boxes.push(BoundingBox::new(f[1], f[2], f[3], f[4])?);
        scores.push(f[5]);
    }
    Ok((boxes, scores))
}
