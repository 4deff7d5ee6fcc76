use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::meta::Sample;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Zoom factor between neighbouring support crops.
pub const ZOOM: f64 = 1.08;

/// Affine map from frame to patch coordinates: `patch = (frame - origin) * scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropTransform {
    pub x0: f64,
    pub y0: f64,
    pub scale: f64,
}

impl CropTransform {
    pub fn apply(&self, b: &BoundingBox) -> BoundingBox {
        BoundingBox {
            cx: (b.cx - self.x0) * self.scale,
            cy: (b.cy - self.y0) * self.scale,
            w: b.w * self.scale,
            h: b.h * self.scale,
        }
    }

    pub fn invert(&self, b: &BoundingBox) -> BoundingBox {
        BoundingBox {
            cx: b.cx / self.scale + self.x0,
            cy: b.cy / self.scale + self.y0,
            w: b.w / self.scale,
            h: b.h / self.scale,
        }
    }
}

/// Side of the context square around `b`: `2 sqrt((w + p)(h + p))` with `p = (w + h) / 2`.
pub fn search_side(b: &BoundingBox) -> f64 {
    let p = (b.w + b.h) / 2.0;
    2.0 * ((b.w + p) * (b.h + p)).sqrt()
}

fn check_frame<T: Scalar>(frame: &Tensor<T>) -> Result<(usize, usize)> {
    match *frame.shape() {
        [3, h, w] => Ok((h, w)),
        ref s => Err(Error::shape(
            "crop",
            format!("frame {s:?}, expected [3, H, W]"),
        )),
    }
}

/// Square crop of side `side` centered at `(cx, cy)`, bilinearly resized to
/// `out` pixels; area outside the frame takes the frame's mean color.
pub fn crop_square<T: Scalar>(
    frame: &Tensor<T>,
    cx: f64,
    cy: f64,
    side: f64,
    out: usize,
) -> Result<(Tensor<T>, CropTransform)> {
    let (h, w) = check_frame(frame)?;
    if !(side > 0.0) || out == 0 {
        return Err(Error::Invalid(format!("crop side {side} / output {out}")));
    }
    let t = CropTransform {
        x0: cx - side / 2.0,
        y0: cy - side / 2.0,
        scale: out as f64 / side,
    };
    let d = frame.data();
    let plane = h * w;
    let mut result = vec![T::zero(); 3 * out * out];
    for c in 0..3 {
        let ch = &d[c * plane..(c + 1) * plane];
        let mean = ch.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64;
        let px = |x: isize, y: isize| -> f64 {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                mean
            } else {
                ch[y as usize * w + x as usize].as_f64()
            }
        };
        for v in 0..out {
            // sample position in pixel-center index space
            let fy = t.y0 + (v as f64 + 0.5) / t.scale - 0.5;
            let y0 = fy.floor();
            let ay = fy - y0;
            for u in 0..out {
                let fx = t.x0 + (u as f64 + 0.5) / t.scale - 0.5;
                let x0 = fx.floor();
                let ax = fx - x0;
                let (xi, yi) = (x0 as isize, y0 as isize);
                let top = (1.0 - ax) * px(xi, yi) + ax * px(xi + 1, yi);
                let bottom = (1.0 - ax) * px(xi, yi + 1) + ax * px(xi + 1, yi + 1);
                result[c * out * out + v * out + u] = T::lit((1.0 - ay) * top + ay * bottom);
            }
        }
    }
    Ok((Tensor::new(vec![3, out, out], result)?, t))
}

/// The context crop around `b` resized to `out` pixels.
pub fn crop_search_region<T: Scalar>(
    frame: &Tensor<T>,
    b: &BoundingBox,
    out: usize,
) -> Result<(Tensor<T>, CropTransform)> {
    let (h, w) = check_frame(frame)?;
    if !b.intersects_image(w as f64, h as f64) {
        return Err(Error::Invalid(format!(
            "box {b:?} does not intersect the {w}x{h} frame"
        )));
    }
    crop_square(frame, b.cx, b.cy, search_side(b), out)
}

/// Three crops at sides `c / 1.08`, `c` and `1.08 c`, each with its box.
pub fn make_support_set<T: Scalar>(
    frame: &Tensor<T>,
    b: &BoundingBox,
    out: usize,
) -> Result<Vec<Sample<T>>> {
    let (h, w) = check_frame(frame)?;
    if !b.intersects_image(w as f64, h as f64) {
        return Err(Error::Invalid(format!(
            "box {b:?} does not intersect the {w}x{h} frame"
        )));
    }
    let c = search_side(b);
    [c / ZOOM, c, c * ZOOM]
        .into_iter()
        .map(|side| {
            let (image, t) = crop_square(frame, b.cx, b.cy, side, out)?;
            Ok(Sample {
                image,
                bbox: t.apply(b),
            })
        })
        .collect()
}
