//! Online tracking: first-frame adaptation, per-frame detection with shape
//! penalty and cosine window, a pinned support buffer and periodic one-step
//! updates.

mod config;
mod post;
mod state;

pub use config::TrackerConfig;
pub use post::{
    cosine_window, hann, padded_scale, peak_to_sidelobe, shape_penalty, PSR_EPSILON, PSR_EXCLUSION,
    PSR_SQUASH,
};
pub use state::{
    end_of_frame, init, read_results, run_tracker, track_frame, write_results, BufferEntry,
    FrameResult, TrackResult, TrackerState,
};
