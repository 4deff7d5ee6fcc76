use super::config::{DetectorConfig, HeadStyle};
use super::labels::anchor_box;
use super::network::DetectorOutput;
use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scalar::Scalar;

/// Smallest side of a decoded box, in pixels.
pub const MIN_EXTENT: f64 = 2.0;
/// Log-size offsets are capped here so `exp` stays finite.
const MAX_LOG_RATIO: f64 = 8.0;

/// One decoded detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub bbox: BoundingBox,
    pub score: f64,
}

/// Box encoded at cell `(row, col)` by the four regression values `reg`,
/// before clipping.
pub fn decode_cell(cfg: &DetectorConfig, row: usize, col: usize, reg: [f64; 4]) -> BoundingBox {
    match cfg.head_style {
        HeadStyle::AnchorBased => {
            let a = anchor_box(cfg, row, col);
            BoundingBox {
                cx: a.cx + reg[0] * a.w,
                cy: a.cy + reg[1] * a.h,
                w: a.w * reg[2].min(MAX_LOG_RATIO).exp(),
                h: a.h * reg[3].min(MAX_LOG_RATIO).exp(),
            }
        }
        HeadStyle::AnchorFree => {
            let s = cfg.stride as f64;
            let (px, py) = (cfg.cell_center(col), cfg.cell_center(row));
            // negative distances collapse onto the cell center
            let [l, t, r, b] = reg.map(|d| d.max(0.0) * s);
            BoundingBox {
                cx: px + 0.5 * (r - l),
                cy: py + 0.5 * (b - t),
                w: l + r,
                h: t + b,
            }
        }
    }
}

/// Every cell's box and score in row-major order, clipped to the input.
pub fn decode<T: Scalar>(out: &DetectorOutput<T>, cfg: &DetectorConfig) -> Result<Vec<Candidate>> {
    let n = cfg.grid_size();
    if out.cls.shape() != [1, n, n] || out.reg.shape() != [4, n, n] {
        return Err(Error::shape(
            "decode",
            format!(
                "maps {:?} / {:?} for grid {n}",
                out.cls.shape(),
                out.reg.shape()
            ),
        ));
    }
    let size = cfg.input_size as f64;
    let cells = n * n;
    let cls = out.cls.data();
    let reg = out.reg.data();
    let mut result = Vec::with_capacity(cells);
    for row in 0..n {
        for col in 0..n {
            let k = row * n + col;
            let r = [0, 1, 2, 3].map(|c| reg[c * cells + k].as_f64());
            let bbox = decode_cell(cfg, row, col, r).clip_to(size, size, MIN_EXTENT);
            result.push(Candidate {
                bbox,
                score: sigmoid(cls[k]).as_f64(),
            });
        }
    }
    Ok(result)
}
