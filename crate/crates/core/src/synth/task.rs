use rand::Rng as _;

use super::crop::{crop_square, make_support_set, search_side};
use super::scene::{render, ObjectState, Scene};
use super::sequence::Sequence;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::meta::{Sample, Task};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probability that a task's target frame comes from the support sequence.
pub const SAME_SEQUENCE_PROB: f64 = 0.8;
/// Default largest target-crop offset, as a fraction of the crop side.
pub const JITTER_SHIFT: f64 = 0.2;
/// Default largest target-crop zoom factor.
pub const JITTER_SCALE: f64 = 1.15;

/// A task and where its target frame came from.
#[derive(Clone, Debug)]
pub struct SampledTask<T> {
    pub task: Task<T>,
    pub same_sequence: bool,
}

/// Draws tasks from a pool of sequences.
#[derive(Clone, Debug)]
pub struct TaskSampler<T> {
    pool: Vec<Sequence<T>>,
    scenes: Vec<Scene>,
    input_size: usize,
    jitter_shift: f64,
    jitter_scale: f64,
}

impl<T: Scalar> TaskSampler<T> {
    pub fn new(pool: Vec<Sequence<T>>, input_size: usize) -> Result<Self> {
        if pool.len() < 2 {
            return Err(Error::Invalid(format!(
                "task sampling needs at least 2 sequences, got {}",
                pool.len()
            )));
        }
        if pool.iter().any(|s| s.len() < 2) {
            return Err(Error::Invalid(
                "every pooled sequence needs at least 2 frames".into(),
            ));
        }
        let scenes = pool
            .iter()
            .map(Sequence::scene)
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskSampler {
            pool,
            scenes,
            input_size,
            jitter_shift: JITTER_SHIFT,
            jitter_scale: JITTER_SCALE,
        })
    }

    /// Replaces the target-crop jitter: offsets up to `shift` crop sides and
    /// zoom factors in `[1/scale, scale]`.
    pub fn with_jitter(mut self, shift: f64, scale: f64) -> Result<Self> {
        if !(shift >= 0.0 && scale >= 1.0) {
            return Err(Error::Invalid(format!(
                "jitter shift {shift} / scale {scale}"
            )));
        }
        self.jitter_shift = shift;
        self.jitter_scale = scale;
        Ok(self)
    }

    pub fn pool(&self) -> &[Sequence<T>] {
        &self.pool
    }

    /// Target sample: the frame cropped around a jittered window containing `bbox`.
    fn target_sample(
        &self,
        frame: &Tensor<T>,
        bbox: &BoundingBox,
        rng: &mut Rng,
    ) -> Result<Sample<T>> {
        let c = search_side(bbox) * self.jitter_scale.powf(rng.random_range(-1.0..=1.0));
        let dx = rng.random_range(-self.jitter_shift..=self.jitter_shift) * c;
        let dy = rng.random_range(-self.jitter_shift..=self.jitter_shift) * c;
        let (image, t) = crop_square(frame, bbox.cx + dx, bbox.cy + dy, c, self.input_size)?;
        Ok(Sample {
            image,
            bbox: t.apply(bbox),
        })
    }

    pub fn sample(&self, rng: &mut Rng) -> Result<SampledTask<T>> {
        let a = rng.random_range(0..self.pool.len());
        let seq = &self.pool[a];
        let i = rng.random_range(0..seq.len());
        let support = make_support_set(&seq.frames[i], &seq.gt[i], self.input_size)?;
        let same_sequence = rng.random_bool(SAME_SEQUENCE_PROB);
        let target = if same_sequence {
            let j = (i + rng.random_range(1..seq.len())) % seq.len();
            self.target_sample(&seq.frames[j], &seq.gt[j], rng)?
        } else {
            // the same instance re-rendered into another sequence's scene
            let b = (a + rng.random_range(1..self.pool.len())) % self.pool.len();
            let scene = &self.scenes[b];
            let j = rng.random_range(0..scene.len());
            let mut objects = scene.objects[j].clone();
            let appearance = self.scenes[a]
                .target(j.min(self.scenes[a].len() - 1))
                .appearance
                .clone();
            objects[0] = ObjectState {
                bbox: objects[0].bbox,
                appearance,
            };
            let (frame, _) = render::<T>(scene.canvas_size, &scene.background, &objects);
            self.target_sample(&frame, &objects[0].bbox, rng)?
        };
        Ok(SampledTask {
            task: Task::new(support, vec![target])?,
            same_sequence,
        })
    }
}

/// One task from `pool`; see [`TaskSampler`] for repeated draws.
pub fn sample_task<T: Scalar>(
    pool: &[Sequence<T>],
    input_size: usize,
    rng: &mut Rng,
) -> Result<SampledTask<T>> {
    TaskSampler::new(pool.to_vec(), input_size)?.sample(rng)
}
