//! Axis-aligned boxes in pixel coordinates.

use crate::error::{Error, Result};

/// Box given by its center and extent, in pixels.
///
/// Pixel `i` covers `[i, i + 1)`, so an image of width `W` spans `[0, W)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Invalid(format!(
                "non-finite box ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Invalid(format!(
                "box extent must be positive, got {w}x{h}"
            )));
        }
        Ok(BoundingBox { cx, cy, w, h })
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1)
    }

    pub fn x1(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn y1(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn x2(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn y2(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection(&self, other: &BoundingBox) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x1().max(other.x1())).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y1().max(other.y1())).max(0.0);
        iw * ih
    }

    /// Intersection over union, in `[0, 1]`. Symmetric in its arguments.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        // the sum is commutative, so iou(a, b) == iou(b, a) bit for bit
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    pub fn center_distance(&self, other: &BoundingBox) -> f64 {
        ((self.cx - other.cx).powi(2) + (self.cy - other.cy).powi(2)).sqrt()
    }

    /// True when the box overlaps the image `[0, width) x [0, height)` with positive area.
    pub fn intersects_image(&self, width: f64, height: f64) -> bool {
        self.x2() > 0.0 && self.y2() > 0.0 && self.x1() < width && self.y1() < height
    }

    /// Clips to the image, keeping at least `min_extent` pixels per side.
    pub fn clip_to(&self, width: f64, height: f64, min_extent: f64) -> BoundingBox {
        let x1 = self.x1().clamp(0.0, width);
        let x2 = self.x2().clamp(0.0, width);
        let y1 = self.y1().clamp(0.0, height);
        let y2 = self.y2().clamp(0.0, height);
        let (cx, w) = fit_extent(x1, x2, width, min_extent);
        let (cy, h) = fit_extent(y1, y2, height, min_extent);
        BoundingBox { cx, cy, w, h }
    }
}

fn fit_extent(lo: f64, hi: f64, limit: f64, min_extent: f64) -> (f64, f64) {
    let ext = hi - lo;
    if ext >= min_extent {
        return (0.5 * (lo + hi), ext);
    }
    let half = 0.5 * min_extent;
    let c = (0.5 * (lo + hi)).clamp(half.min(0.5 * limit), (limit - half).max(0.5 * limit));
    (c, min_extent)
}
