use super::config::{DetectorConfig, HeadStyle};
use super::labels::{LabelTargets, NEGATIVE, POSITIVE};
use super::network::OutputVars;
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;
pub const REG_WEIGHT: f64 = 1.0;
/// Logits are clamped to this magnitude before entering any loss.
pub const LOGIT_CAP: f64 = 20.0;

/// Classification and regression parts of the detection loss.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<'g, T: Scalar> {
    pub cls: Var<'g, T>,
    pub reg: Var<'g, T>,
    pub total: Var<'g, T>,
}

fn mask_where<T: Scalar>(mask: &Tensor<T>, value: f64) -> Tensor<T> {
    let v = T::lit(value);
    mask.map(|m| if m == v { T::one() } else { T::zero() })
}

/// Repeats a `[1, G, G]` mask over the four regression channels.
fn repeat4<T: Scalar>(mask: &Tensor<T>) -> Tensor<T> {
    let n = mask.numel();
    let shape = [4, mask.shape()[1], mask.shape()[2]];
    Tensor::from_fn(shape.to_vec(), |i| mask.data()[i % n])
}

/// `x^gamma` for the fixed focal exponent.
fn focal_power<'g, T: Scalar>(x: Var<'g, T>) -> Result<Var<'g, T>> {
    debug_assert_eq!(FOCAL_GAMMA, 2.0);
    x.square()
}

/// Elementwise smooth-L1 of `diff` with transition at [`SMOOTH_L1_BETA`].
pub fn smooth_l1<'g, T: Scalar>(diff: Var<'g, T>) -> Result<Var<'g, T>> {
    // m = min(|d|, beta); m * (|d| - m / 2) / beta
    let s = diff.abs()?;
    let m = s.clamp(-1.0, SMOOTH_L1_BETA)?;
    m.mul(s.sub(m.scale(0.5)?)?)?.scale(1.0 / SMOOTH_L1_BETA)
}

/// Detection loss of one image against its targets.
pub fn detection_loss_parts<'g, T: Scalar>(
    out: &OutputVars<'g, T>,
    targets: &LabelTargets<T>,
    cfg: &DetectorConfig,
) -> Result<LossParts<'g, T>> {
    let n = cfg.grid_size();
    if out.cls.shape() != [1, n, n] || targets.cls_target.shape() != [1, n, n] {
        return Err(Error::shape(
            "detection_loss",
            format!(
                "cls map {:?} / target {:?} for grid {n}",
                out.cls.shape(),
                targets.cls_target.shape()
            ),
        ));
    }
    if out.reg.shape() != [4, n, n] || targets.reg_target.shape() != [4, n, n] {
        return Err(Error::shape(
            "detection_loss",
            format!(
                "reg map {:?} / target {:?} for grid {n}",
                out.reg.shape(),
                targets.reg_target.shape()
            ),
        ));
    }
    let g = out.cls.graph();
    let num_pos = targets.num_positive().max(1) as f64;
    let logits = out.cls.clamp(-LOGIT_CAP, LOGIT_CAP)?;
    let reg_mask = g.constant(repeat4(&targets.reg_mask));
    let diff = out
        .reg
        .sub(g.constant(targets.reg_target.clone()))?
        .mul(reg_mask)?;
    let (cls, reg) = match cfg.head_style {
        HeadStyle::AnchorBased => {
            let pos = g.constant(mask_where(&targets.cls_mask, POSITIVE));
            let neg = g.constant(mask_where(&targets.cls_mask, NEGATIVE));
            // -a (1-p)^2 log p  on positives, -(1-a) p^2 log(1-p) on negatives
            let pos_term = focal_power(logits.neg()?.sigmoid()?)?
                .mul(logits.log_sigmoid()?)?
                .scale(-FOCAL_ALPHA)?
                .mul(pos)?;
            let neg_term = focal_power(logits.sigmoid()?)?
                .mul(logits.neg()?.log_sigmoid()?)?
                .scale(-(1.0 - FOCAL_ALPHA))?
                .mul(neg)?;
            let cls = pos_term.add(neg_term)?.sum()?.scale(1.0 / num_pos)?;
            let reg = smooth_l1(diff)?.sum()?.scale(1.0 / num_pos)?;
            (cls, reg)
        }
        HeadStyle::AnchorFree => {
            let target = g.constant(targets.cls_target.clone());
            let cls = logits.sigmoid()?.sub(target)?.square()?.mean()?;
            let reg = diff.abs()?.sum()?.scale(1.0 / (4.0 * num_pos))?;
            (cls, reg)
        }
    };
    let total = cls.add(reg.scale(REG_WEIGHT)?)?;
    Ok(LossParts { cls, reg, total })
}

/// Total detection loss: classification plus weighted regression.
pub fn detection_loss<'g, T: Scalar>(
    out: &OutputVars<'g, T>,
    targets: &LabelTargets<T>,
    cfg: &DetectorConfig,
) -> Result<Var<'g, T>> {
    Ok(detection_loss_parts(out, targets, cfg)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;
    use crate::detector::labels::{assign_labels, IGNORE};
    use crate::geometry::BoundingBox;

    fn cfg(style: HeadStyle) -> DetectorConfig {
        DetectorConfig {
            head_style: style,
            ..Default::default()
        }
    }

    #[test]
    fn anchor_free_half_scores_against_zero_targets() {
        let cfg = cfg(HeadStyle::AnchorFree);
        let n = cfg.grid_size();
        let g = Graph::<f64>::new();
        let out = OutputVars {
            cls: g.constant(Tensor::zeros(vec![1, n, n])),
            reg: g.constant(Tensor::zeros(vec![4, n, n])),
        };
        let targets = LabelTargets {
            cls_target: Tensor::zeros(vec![1, n, n]),
            cls_mask: Tensor::zeros(vec![1, n, n]),
            reg_target: Tensor::zeros(vec![4, n, n]),
            reg_mask: Tensor::zeros(vec![1, n, n]),
        };
        let parts = detection_loss_parts(&out, &targets, &cfg).unwrap();
        assert!((parts.cls.item() - 0.25).abs() < 1e-15);
        assert_eq!(parts.reg.item(), 0.0);
    }

    #[test]
    fn focal_single_positive_at_half_probability() {
        let cfg = cfg(HeadStyle::AnchorBased);
        let n = cfg.grid_size();
        let g = Graph::<f64>::new();
        let mut mask = vec![IGNORE; n * n];
        mask[0] = POSITIVE;
        let mut target = vec![0.0; n * n];
        target[0] = 1.0;
        let targets = LabelTargets {
            cls_target: Tensor::from_f64(vec![1, n, n], &target).unwrap(),
            cls_mask: Tensor::from_f64(vec![1, n, n], &mask).unwrap(),
            reg_target: Tensor::zeros(vec![4, n, n]),
            reg_mask: Tensor::zeros(vec![1, n, n]),
        };
        let out = OutputVars {
            cls: g.constant(Tensor::zeros(vec![1, n, n])),
            reg: g.constant(Tensor::zeros(vec![4, n, n])),
        };
        let loss = detection_loss(&out, &targets, &cfg).unwrap().item();
        let expected = -0.25 * 0.5f64.powi(2) * 0.5f64.ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.0433).abs() < 1e-4);
    }

    #[test]
    fn perfect_predictions_have_negligible_loss() {
        for style in [HeadStyle::AnchorBased, HeadStyle::AnchorFree] {
            let cfg = cfg(style);
            let gt = BoundingBox::new(45.0, 50.0, 26.0, 22.0).unwrap();
            let t = assign_labels::<f64>(&gt, &cfg).unwrap();
            let logits = match style {
                HeadStyle::AnchorBased => t.cls_target.map(|v| if v > 0.5 { 1e9 } else { -1e9 }),
                // inverse sigmoid of the centerness target, capped
                HeadStyle::AnchorFree => t.cls_target.map(|v| {
                    let v = v.clamp(1e-12, 1.0 - 1e-12);
                    (v / (1.0 - v)).ln()
                }),
            };
            let g = Graph::<f64>::new();
            let out = OutputVars {
                cls: g.constant(logits),
                reg: g.constant(t.reg_target.clone()),
            };
            let loss = detection_loss(&out, &t, &cfg).unwrap().item();
            assert!(loss < 1e-6, "{style}: {loss}");
        }
    }

    #[test]
    fn smooth_l1_piecewise() {
        let g = Graph::<f64>::new();
        let d = g.constant(Tensor::from_f64(vec![3], &[0.05, -0.5, 0.0]).unwrap());
        let v = smooth_l1(d).unwrap().value().to_vec();
        assert!((v[0] - 0.5 * 0.05 * 0.05 / SMOOTH_L1_BETA).abs() < 1e-15);
        assert!((v[1] - (0.5 - 0.5 * SMOOTH_L1_BETA)).abs() < 1e-15);
        assert_eq!(v[2], 0.0);
    }
}
