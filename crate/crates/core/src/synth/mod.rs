//! Deterministic synthetic tracking videos, search-region cropping and task
//! sampling.

mod config;
mod crop;
mod scene;
mod sequence;
mod task;

pub use config::{Shape, SynthConfig};
pub use crop::{
    crop_search_region, crop_square, make_support_set, search_side, CropTransform, ZOOM,
};
pub use scene::{
    covers, render, render_frame, simulate, Appearance, Background, ObjectState, Scene,
};
pub use sequence::{
    dataset_dirs, generate_dataset, generate_sequence, read_dataset, read_meta, read_sequence,
    sequence_dir_name, write_dataset, write_sequence, Sequence,
};
pub use task::{
    sample_task, SampledTask, TaskSampler, JITTER_SCALE, JITTER_SHIFT, SAME_SEQUENCE_PROB,
};
