//! The single-stage detector: configuration, parameters, forward pass,
//! label assignment, losses and box decoding.

mod config;
mod decode;
mod labels;
mod loss;
mod network;
mod params;

pub use config::{DetectorConfig, HeadStyle};
pub use decode::{decode, decode_cell, Candidate, MIN_EXTENT};
pub use labels::{
    anchor_box, assign_labels, centerness, edge_offsets, encode_anchor, in_central_region,
    LabelTargets, IGNORE, NEGATIVE, NEGATIVE_IOU, POSITIVE, POSITIVE_IOU,
};
pub use loss::{
    detection_loss, detection_loss_parts, smooth_l1, LossParts, FOCAL_ALPHA, FOCAL_GAMMA,
    LOGIT_CAP, REG_WEIGHT, SMOOTH_L1_BETA,
};
pub use network::{forward, Detector, DetectorOutput, Input, OutputVars};
pub use params::{init_params, lr_shape, Checkpoint, ParamEntry, ParamSet};
