use super::config::{DetectorConfig, HeadStyle};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Value of `cls_mask` at positive cells.
pub const POSITIVE: f64 = 1.0;
/// Value of `cls_mask` at negative cells.
pub const NEGATIVE: f64 = 0.0;
/// Value of `cls_mask` at cells excluded from the classification loss.
pub const IGNORE: f64 = -1.0;

pub const POSITIVE_IOU: f64 = 0.5;
pub const NEGATIVE_IOU: f64 = 0.3;

/// Per-cell training targets for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTargets<T> {
    /// `[1, G, G]`: 1 at anchor positives, centerness at anchor-free positives, else 0.
    pub cls_target: Tensor<T>,
    /// `[1, G, G]` with values [`POSITIVE`], [`NEGATIVE`] or [`IGNORE`].
    pub cls_mask: Tensor<T>,
    /// `[4, G, G]` regression targets, zero away from positives.
    pub reg_target: Tensor<T>,
    /// `[1, G, G]`, 1 where the regression loss applies.
    pub reg_mask: Tensor<T>,
}

impl<T: Scalar> LabelTargets<T> {
    pub fn num_positive(&self) -> usize {
        self.cls_mask
            .data()
            .iter()
            .filter(|&&v| v == T::lit(POSITIVE))
            .count()
    }
}

/// The square anchor hosted by cell `(row, col)`.
pub fn anchor_box(cfg: &DetectorConfig, row: usize, col: usize) -> BoundingBox {
    BoundingBox {
        cx: cfg.cell_center(col),
        cy: cfg.cell_center(row),
        w: cfg.anchor_size,
        h: cfg.anchor_size,
    }
}

/// Regression encoding of `gt` relative to `anchor`.
pub fn encode_anchor(anchor: &BoundingBox, gt: &BoundingBox) -> [f64; 4] {
    [
        (gt.cx - anchor.cx) / anchor.w,
        (gt.cy - anchor.cy) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.h / anchor.h).ln(),
    ]
}

/// Whether point `(px, py)` lies in the central half of `gt`.
pub fn in_central_region(gt: &BoundingBox, px: f64, py: f64) -> bool {
    (px - gt.cx).abs() < 0.25 * gt.w && (py - gt.cy).abs() < 0.25 * gt.h
}

/// Distances from `(px, py)` to the left, top, right and bottom edges of `gt`.
pub fn edge_offsets(gt: &BoundingBox, px: f64, py: f64) -> [f64; 4] {
    [px - gt.x1(), py - gt.y1(), gt.x2() - px, gt.y2() - py]
}

pub fn centerness(offsets: &[f64; 4]) -> f64 {
    let [l, t, r, b] = *offsets;
    ((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).sqrt()
}

/// Assigns per-cell targets for the ground-truth box `gt` (input-patch pixels).
pub fn assign_labels<T: Scalar>(gt: &BoundingBox, cfg: &DetectorConfig) -> Result<LabelTargets<T>> {
    let size = cfg.input_size as f64;
    if !gt.intersects_image(size, size) {
        return Err(Error::Invalid(format!(
            "ground truth {gt:?} lies outside the {size}x{size} input"
        )));
    }
    let n = cfg.grid_size();
    let cells = n * n;
    let mut cls_target = vec![0.0; cells];
    let mut cls_mask = vec![NEGATIVE; cells];
    let mut reg_target = vec![0.0; 4 * cells];
    let mut reg_mask = vec![0.0; cells];
    for row in 0..n {
        for col in 0..n {
            let k = row * n + col;
            let encoded = match cfg.head_style {
                HeadStyle::AnchorBased => {
                    let anchor = anchor_box(cfg, row, col);
                    let iou = anchor.iou(gt);
                    if iou > POSITIVE_IOU {
                        cls_target[k] = 1.0;
                        Some(encode_anchor(&anchor, gt))
                    } else {
                        if iou >= NEGATIVE_IOU {
                            cls_mask[k] = IGNORE;
                        }
                        None
                    }
                }
                HeadStyle::AnchorFree => {
                    let (px, py) = (cfg.cell_center(col), cfg.cell_center(row));
                    if in_central_region(gt, px, py) {
                        let off = edge_offsets(gt, px, py);
                        cls_target[k] = centerness(&off);
                        let s = cfg.stride as f64;
                        Some(off.map(|d| d / s))
                    } else {
                        None
                    }
                }
            };
            if let Some(enc) = encoded {
                cls_mask[k] = POSITIVE;
                reg_mask[k] = 1.0;
                for (c, v) in enc.into_iter().enumerate() {
                    reg_target[c * cells + k] = v;
                }
            }
        }
    }
    let to = |shape: Vec<usize>, v: Vec<f64>| Tensor::from_f64(shape, &v);
    Ok(LabelTargets {
        cls_target: to(vec![1, n, n], cls_target)?,
        cls_mask: to(vec![1, n, n], cls_mask)?,
        reg_target: to(vec![4, n, n], reg_target)?,
        reg_mask: to(vec![1, n, n], reg_mask)?,
    })
}
