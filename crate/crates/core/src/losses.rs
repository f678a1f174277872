//! Training losses with analytic gradients.
//!
//! There is no network here. These functions score externally produced prediction
//! maps against [`TargetMaps`] and return gradients with respect to those maps and
//! the two uncertainty weights, so any trainer can use them as a loss oracle.
//!
//! The box and identity losses are sums over objects, not means.

use crate::encoding::TargetMaps;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor2D, Tensor3D};

/// Predictions are clipped to `[CLIP_EPS, 1 - CLIP_EPS]` before the logs.
pub const CLIP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams<T> {
    pub alpha: T,
    pub beta: T,
}

impl<T: Scalar> Default for FocalParams<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(2.0),
            beta: T::lit(4.0),
        }
    }
}

/// Learnable log-variance weights of the detection and identity tasks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UncertaintyParams<T> {
    pub w1: T,
    pub w2: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalLoss<T> {
    pub loss: T,
    pub grad: Tensor2D<T>,
}

/// Pixel-wise focal loss over the heatmap, normalized by the object count.
///
/// Pixels whose target is exactly `1` use the positive branch. `num_objects` may be zero
/// only when the target has no such pixel, in which case the sum is left unnormalized.
/// The gradient is taken through the clipping, so it vanishes where a prediction was
/// clipped.
pub fn focal_loss<T: Scalar>(
    pred: &Tensor2D<T>,
    target: &Tensor2D<T>,
    params: &FocalParams<T>,
    num_objects: usize,
) -> Result<FocalLoss<T>> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if !(params.alpha >= T::zero() && params.beta >= T::zero()) {
        return Err(Error::invalid("focal alpha and beta must be non-negative"));
    }
    let has_peak = target.data().iter().any(|&t| t == T::one());
    if num_objects == 0 && has_peak {
        return Err(Error::invalid("num_objects is 0 but the target has peaks"));
    }
    let norm = T::from_usize_lossy(num_objects.max(1));
    let eps = T::lit(CLIP_EPS);
    let one = T::one();
    let (alpha, beta) = (params.alpha, params.beta);

    let mut sum = T::zero();
    let mut grad = Tensor2D::zeros(pred.height(), pred.width())?;
    for (i, (&p_raw, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let p = p_raw.max(eps).min(one - eps);
        let inside = p_raw > eps && p_raw < one - eps;
        let (term, d_term) = if t == one {
            let q = one - p;
            let term = q.powf(alpha) * p.ln();
            let d = -alpha * pow_minus_one(q, alpha) * p.ln() + q.powf(alpha) / p;
            (term, d)
        } else {
            let neg_w = (one - t).powf(beta);
            let log_q = (one - p).ln();
            let term = neg_w * p.powf(alpha) * log_q;
            let d = neg_w * (alpha * pow_minus_one(p, alpha) * log_q - p.powf(alpha) / (one - p));
            (term, d)
        };
        sum += term;
        if inside {
            grad.data_mut()[i] = -d_term / norm;
        }
    }
    Ok(FocalLoss {
        loss: -sum / norm,
        grad,
    })
}

// x^(a-1), with the a = 0 case returning 0 so that a·x^(a-1) vanishes.
fn pow_minus_one<T: Scalar>(x: T, a: T) -> T {
    if a == T::zero() {
        T::zero()
    } else {
        x.powf(a - T::one())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxLoss<T> {
    pub loss: T,
    pub grad_offsets: Tensor3D<T>,
    pub grad_sizes: Tensor3D<T>,
}

/// L1 loss on offsets and sizes at masked centers, summed over objects.
pub fn box_loss<T: Scalar>(
    pred_offsets: &Tensor3D<T>,
    pred_sizes: &Tensor3D<T>,
    targets: &TargetMaps<T>,
) -> Result<BoxLoss<T>> {
    let want = (2, targets.grid.feat_h(), targets.grid.feat_w());
    for (name, t) in [("offset", pred_offsets), ("size", pred_sizes)] {
        if t.shape() != want {
            return Err(Error::shape(format!(
                "{name} map {:?}, expected {want:?}",
                t.shape()
            )));
        }
    }
    let mut grad_offsets = Tensor3D::zeros(want.0, want.1, want.2)?;
    let mut grad_sizes = Tensor3D::zeros(want.0, want.1, want.2)?;
    let mut loss = T::zero();
    for c in targets.centers() {
        let target_off = [c.offset.0, c.offset.1];
        let target_size = [c.size.0, c.size.1];
        for ch in 0..2 {
            let d = pred_offsets.get(ch, c.y, c.x) - target_off[ch];
            loss += d.abs();
            grad_offsets.set(ch, c.y, c.x, l1_subgradient(d));

            let d = pred_sizes.get(ch, c.y, c.x) - target_size[ch];
            loss += d.abs();
            grad_sizes.set(ch, c.y, c.x, l1_subgradient(d));
        }
    }
    Ok(BoxLoss {
        loss,
        grad_offsets,
        grad_sizes,
    })
}

fn l1_subgradient<T: Scalar>(d: T) -> T {
    if d > T::zero() {
        T::one()
    } else if d < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReidLoss<T> {
    pub loss: T,
    pub grad_logits: Vec<Vec<T>>,
}

/// Softmax cross-entropy over identity classes, summed over objects.
///
/// Every logit vector must have the same length `K`; labels must be below `K`.
pub fn reid_loss<T: Scalar>(logits: &[Vec<T>], labels: &[usize]) -> Result<ReidLoss<T>> {
    if logits.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} logit vectors for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let k = logits.first().map_or(0, Vec::len);
    let mut loss = T::zero();
    let mut grad_logits = Vec::with_capacity(logits.len());
    for (i, (z, &label)) in logits.iter().zip(labels).enumerate() {
        if z.len() != k || k == 0 {
            return Err(Error::shape(format!(
                "logit vector {i} has {} classes, expected {k}",
                z.len()
            )));
        }
        if label >= k {
            return Err(Error::invalid(format!(
                "label {label} >= K = {k} for object {i}"
            )));
        }
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let log_norm = total.ln() + max;
        loss += log_norm - z[label];
        let mut g: Vec<T> = exps.iter().map(|&e| e / total).collect();
        g[label] -= T::one();
        grad_logits.push(g);
    }
    Ok(ReidLoss { loss, grad_logits })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLoss<T> {
    pub total: T,
    pub grad_w1: T,
    pub grad_w2: T,
    /// `∂total/∂L_detection = ½·e^{-w1}`.
    pub weight_detection: T,
    /// `∂total/∂L_identity = ½·e^{-w2}`.
    pub weight_identity: T,
}

/// Uncertainty-weighted sum of the detection (`heat + box`) and identity losses.
pub fn total_loss<T: Scalar>(
    heat: T,
    bbox: T,
    identity: T,
    u: &UncertaintyParams<T>,
) -> TotalLoss<T> {
    let half = T::lit(0.5);
    let detection = heat + bbox;
    let e1 = (-u.w1).exp();
    let e2 = (-u.w2).exp();
    TotalLoss {
        total: half * (e1 * detection + e2 * identity + u.w1 + u.w2),
        grad_w1: half * (T::one() - e1 * detection),
        grad_w2: half * (T::one() - e2 * identity),
        weight_detection: half * e1,
        weight_identity: half * e2,
    }
}

/// Embedding vectors at masked centers (row-major order) with their identity labels.
pub fn center_embeddings<T: Scalar>(
    embeddings: &Tensor3D<T>,
    targets: &TargetMaps<T>,
) -> Result<(Vec<Vec<T>>, Vec<usize>)> {
    let (_, h, w) = embeddings.shape();
    if (h, w) != (targets.grid.feat_h(), targets.grid.feat_w()) {
        return Err(Error::shape(format!(
            "embedding map {:?} does not match grid {}x{}",
            embeddings.shape(),
            targets.grid.feat_h(),
            targets.grid.feat_w()
        )));
    }
    Ok(targets
        .centers()
        .into_iter()
        .map(|c| (embeddings.column(c.y, c.x), c.identity))
        .unzip())
}

/// Predicted head outputs for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMaps<T> {
    pub heatmap: Tensor2D<T>,
    pub offsets: Tensor3D<T>,
    pub sizes: Tensor3D<T>,
}

/// All loss terms of one frame and the gradients of the total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub heat: T,
    pub bbox: T,
    pub identity: T,
    pub total: T,
    pub grad_heatmap: Tensor2D<T>,
    pub grad_offsets: Tensor3D<T>,
    pub grad_sizes: Tensor3D<T>,
    pub grad_logits: Vec<Vec<T>>,
    pub grad_w1: T,
    pub grad_w2: T,
}

/// Evaluates every term. `logits` holds one class-score vector per masked center, in the
/// order of [`TargetMaps::centers`].
pub fn compute_losses<T: Scalar>(
    pred: &PredictedMaps<T>,
    logits: &[Vec<T>],
    targets: &TargetMaps<T>,
    focal: &FocalParams<T>,
    u: &UncertaintyParams<T>,
) -> Result<LossReport<T>> {
    let heat = focal_loss(&pred.heatmap, &targets.heatmap, focal, targets.num_objects)?;
    let bbox = box_loss(&pred.offsets, &pred.sizes, targets)?;
    let labels: Vec<usize> = targets.centers().iter().map(|c| c.identity).collect();
    let ident = if labels.is_empty() && logits.is_empty() {
        ReidLoss {
            loss: T::zero(),
            grad_logits: Vec::new(),
        }
    } else {
        reid_loss(logits, &labels)?
    };
    let tot = total_loss(heat.loss, bbox.loss, ident.loss, u);

    let scale3 = |t: Tensor3D<T>, s: T| {
        let mut t = t;
        t.data_mut().iter_mut().for_each(|v| *v *= s);
        t
    };
    let mut grad_heatmap = heat.grad;
    grad_heatmap
        .data_mut()
        .iter_mut()
        .for_each(|v| *v *= tot.weight_detection);
    Ok(LossReport {
        heat: heat.loss,
        bbox: bbox.loss,
        identity: ident.loss,
        total: tot.total,
        grad_heatmap,
        grad_offsets: scale3(bbox.grad_offsets, tot.weight_detection),
        grad_sizes: scale3(bbox.grad_sizes, tot.weight_detection),
        grad_logits: ident
            .grad_logits
            .into_iter()
            .map(|g| g.into_iter().map(|v| v * tot.weight_identity).collect())
            .collect(),
        grad_w1: tot.grad_w1,
        grad_w2: tot.grad_w2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{encode_targets, GtObject, SigmaParams};
    use crate::tensor::{BBox, GridSpec};

    fn px(v: f64) -> Tensor2D<f64> {
        Tensor2D::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn focal_single_pixel_values() {
        let p = FocalParams::default();
        let l = focal_loss(&px(1.0 - 1e-7), &px(1.0), &p, 1).unwrap().loss;
        assert!(l.abs() < 1e-12);
        let l = focal_loss(&px(0.5), &px(1.0), &p, 1).unwrap().loss;
        assert!((l - 0.173_286_795_139_986_32).abs() < 1e-12, "{l}");
        let l = focal_loss(&px(0.5), &px(0.5), &p, 1).unwrap().loss;
        assert!((l - 0.010_830_424_696_249_145).abs() < 1e-12, "{l}");
    }

    #[test]
    fn focal_errors() {
        let p = FocalParams::default();
        assert!(focal_loss(&px(0.5), &px(1.0), &p, 0).is_err());
        assert!(focal_loss(&px(0.5), &px(0.2), &p, 0).is_ok());
        let two = Tensor2D::zeros(1, 2).unwrap();
        assert!(focal_loss(&px(0.5), &two, &p, 1).is_err());
        let bad = FocalParams {
            alpha: -1.0,
            beta: 4.0,
        };
        assert!(focal_loss(&px(0.5), &px(0.5), &bad, 1).is_err());
    }

    #[test]
    fn focal_zero_at_perfect_binary_prediction() {
        let target = Tensor2D::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let pred = Tensor2D::<f64>::from_vec(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let l = focal_loss(&pred, &target, &FocalParams::default(), 1).unwrap();
        assert!(l.loss.abs() < 1e-12);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));
    }

    fn one_object_targets() -> TargetMaps<f64> {
        let g = GridSpec::new(64, 64, 4).unwrap();
        let obj = GtObject {
            bbox: BBox::new(20.0, 20.0, 30.0, 40.0).unwrap(),
            identity: 0,
        };
        encode_targets(&[obj], &g, 1, &SigmaParams::default())
            .unwrap()
            .0
    }

    #[test]
    fn box_loss_values_and_signs() {
        let t = one_object_targets();
        let c = t.centers()[0];
        let mut off = t.offsets.clone();
        let mut size = t.sizes.clone();
        assert_eq!(box_loss(&off, &size, &t).unwrap().loss, 0.0);

        off.set(0, c.y, c.x, c.offset.0 + 0.1);
        off.set(1, c.y, c.x, c.offset.1 - 0.2);
        size.set(0, c.y, c.x, c.size.0 + 1.0);
        size.set(1, c.y, c.x, c.size.1 - 3.0);
        // junk away from the center is ignored
        off.set(0, 0, 0, 9.0);
        let r = box_loss(&off, &size, &t).unwrap();
        assert!((r.loss - 4.3).abs() < 1e-12);
        assert_eq!(r.grad_offsets.get(0, c.y, c.x), 1.0);
        assert_eq!(r.grad_offsets.get(1, c.y, c.x), -1.0);
        assert_eq!(r.grad_sizes.get(0, c.y, c.x), 1.0);
        assert_eq!(r.grad_offsets.get(0, 0, 0), 0.0);
    }

    #[test]
    fn box_loss_empty_mask_is_zero() {
        let g = GridSpec::new(16, 16, 4).unwrap();
        let t = encode_targets::<f64>(&[], &g, 1, &SigmaParams::default())
            .unwrap()
            .0;
        let off = Tensor3D::zeros(2, 4, 4).unwrap();
        assert_eq!(box_loss(&off, &off, &t).unwrap().loss, 0.0);
        let wrong = Tensor3D::zeros(2, 3, 4).unwrap();
        assert!(box_loss(&wrong, &off, &t).is_err());
    }

    #[test]
    fn reid_values() {
        let r = reid_loss(&[vec![0.3; 4]], &[2]).unwrap();
        assert!((r.loss - 4f64.ln()).abs() < 1e-12);
        let r = reid_loss::<f64>(&[vec![0.0, 800.0, 0.0]], &[1]).unwrap();
        assert!(r.loss.abs() < 1e-12);
        // softmax giving 0.7 to the labelled class
        let z = vec![0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()];
        let r = reid_loss(&[z], &[0]).unwrap();
        assert!((r.loss - 0.356_674_943_938_732_45).abs() < 1e-12);
        assert!((r.grad_logits[0][0] + 0.3).abs() < 1e-12);
        assert!((r.grad_logits[0][1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn reid_errors() {
        assert!(reid_loss(&[vec![0.0; 3]], &[3]).is_err());
        assert!(reid_loss(&[vec![0.0; 3], vec![0.0; 2]], &[0, 0]).is_err());
        assert!(reid_loss::<f64>(&[vec![0.0; 3]], &[]).is_err());
    }

    #[test]
    fn total_values() {
        let u = UncertaintyParams { w1: 0.0, w2: 0.0 };
        assert_eq!(total_loss(1.5, 0.5, 4.0, &u).total, 3.0);
        let u = UncertaintyParams {
            w1: 2f64.ln(),
            w2: 0.0,
        };
        let t = total_loss(2.0, 0.0, 1.0, &u);
        assert!((t.total - 1.346_573_590_279_972_7).abs() < 1e-12);
        let t = total_loss(0.25, 0.75, 3.0, &UncertaintyParams { w1: 0.0, w2: 0.5 });
        assert_eq!(t.grad_w1, 0.0);
    }

    #[test]
    fn detection_grouping_is_exact() {
        let u = UncertaintyParams::<f64> { w1: 0.37, w2: -0.2 };
        let (h, b, i) = (1.25f64, 3.5, 0.75);
        let a = total_loss(h, b, i, &u).total;
        let grouped = 0.5 * ((-u.w1).exp() * (h + b) + (-u.w2).exp() * i + u.w1 + u.w2);
        assert_eq!(a, grouped);
    }

    #[test]
    fn report_chains_weights() {
        let t = one_object_targets();
        let pred = PredictedMaps {
            heatmap: Tensor2D::filled(16, 16, 0.3).unwrap(),
            offsets: t.offsets.clone(),
            sizes: t.sizes.clone(),
        };
        let u = UncertaintyParams { w1: 0.4, w2: 0.1 };
        let r = compute_losses(&pred, &[vec![0.1, 0.2]], &t, &FocalParams::default(), &u).unwrap();
        let f = focal_loss(&pred.heatmap, &t.heatmap, &FocalParams::default(), 1).unwrap();
        assert_eq!(r.heat, f.loss);
        let w = 0.5 * (-0.4f64).exp();
        assert!((r.grad_heatmap.get(3, 3) - w * f.grad.get(3, 3)).abs() < 1e-15);
        assert!(compute_losses(&pred, &[], &t, &FocalParams::default(), &u).is_err());
    }
}
