//! Central finite-difference checks of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::encoding::{encode_targets, GtObject, SigmaParams, TargetMaps};
use crate::error::Result;
use crate::losses::{
    box_loss, compute_losses, focal_loss, reid_loss, total_loss, FocalParams, PredictedMaps,
    UncertaintyParams,
};
use crate::tensor::{BBox, GridSpec, Tensor2D, Tensor3D};

/// Finite-difference step.
pub const STEP: f64 = 1e-6;
/// Denominator floor of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-3;
/// Default pass mark.
pub const TOLERANCE: f64 = 1e-4;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn numeric_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + STEP;
            let up = f(&probe);
            probe[i] = x[i] - STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// Largest relative error over all coordinates.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub entries: usize,
}

/// Random inputs for every loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct GradFixture {
    pub targets: TargetMaps<f64>,
    pub pred: PredictedMaps<f64>,
    /// One row per center, `num_identities` columns.
    pub logits: Vec<Vec<f64>>,
    pub focal: FocalParams<f64>,
    pub uncertainty: UncertaintyParams<f64>,
}

/// A fixture with maps at most `max_side` cells per side and at most `max_identities`
/// classes. Predictions stay away from the clipping bounds and from the L1 kink.
pub fn random_fixture(seed: u64, max_side: usize, max_identities: usize) -> Result<GradFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stride = 4;
    let (fw, fh) = (
        rng.random_range(2..=max_side.max(2)),
        rng.random_range(2..=max_side.max(2)),
    );
    let grid = GridSpec::new(fw * stride, fh * stride, stride)?;
    let k = rng.random_range(2..=max_identities.max(2));
    let (iw, ih) = (grid.image_w as f64, grid.image_h as f64);
    let objects: Vec<GtObject<f64>> = (0..rng.random_range(1..=3))
        .map(|_| {
            let (cx, cy) = (rng.random_range(0.0..iw), rng.random_range(0.0..ih));
            let (w, h) = (rng.random_range(2.0..iw), rng.random_range(2.0..ih));
            Ok(GtObject {
                bbox: BBox::from_center(cx, cy, w, h),
                identity: rng.random_range(0..k),
            })
        })
        .collect::<Result<_>>()?;
    let (targets, _) = encode_targets(&objects, &grid, k, &SigmaParams::default())?;

    let heatmap = Tensor2D::from_fn(fh, fw, |_, _| rng.random_range(0.02..0.98))?;
    let away = |rng: &mut ChaCha8Rng, t: f64, scale: f64| {
        let d = rng.random_range(0.05..1.0) * scale;
        if rng.random::<bool>() {
            t + d
        } else {
            t - d
        }
    };
    let mut offsets = Tensor3D::zeros(2, fh, fw)?;
    let mut sizes = Tensor3D::zeros(2, fh, fw)?;
    for y in 0..fh {
        for x in 0..fw {
            for c in 0..2 {
                offsets.set(c, y, x, away(&mut rng, targets.offsets.get(c, y, x), 0.5));
                sizes.set(c, y, x, away(&mut rng, targets.sizes.get(c, y, x), 4.0));
            }
        }
    }
    let normal = Normal::new(0.0, 2.0).expect("valid normal");
    let logits = (0..targets.centers().len())
        .map(|_| (0..k).map(|_| normal.sample(&mut rng)).collect())
        .collect();
    Ok(GradFixture {
        targets,
        pred: PredictedMaps {
            heatmap,
            offsets,
            sizes,
        },
        logits,
        focal: FocalParams::default(),
        uncertainty: UncertaintyParams {
            w1: rng.random_range(-1.0..1.0),
            w2: rng.random_range(-1.0..1.0),
        },
    })
}

fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], width: usize) -> Vec<Vec<f64>> {
    flat.chunks(width.max(1)).map(<[f64]>::to_vec).collect()
}

/// Checks the heatmap, box, identity and total losses plus the chained gradients of the
/// total with respect to every prediction.
pub fn check_fixture(fx: &GradFixture) -> Result<Vec<GradReport>> {
    let t = &fx.targets;
    let (fh, fw) = (t.grid.feat_h(), t.grid.feat_w());
    let n = t.num_objects;
    let mut out = Vec::new();
    let mut push = |name, a: &[f64], num: &[f64]| {
        out.push(GradReport {
            name,
            max_rel_error: max_relative_error(a, num),
            entries: a.len(),
        })
    };

    let heat_x = fx.pred.heatmap.data().to_vec();
    let heat_f = |x: &[f64]| {
        let p = Tensor2D::from_vec(fh, fw, x.to_vec()).expect("shape");
        focal_loss(&p, &t.heatmap, &fx.focal, n)
            .expect("focal")
            .loss
    };
    let a = focal_loss(&fx.pred.heatmap, &t.heatmap, &fx.focal, n)?.grad;
    push("focal", a.data(), &numeric_gradient(&heat_x, heat_f));

    let split = 2 * fh * fw;
    let box_x: Vec<f64> = fx
        .pred
        .offsets
        .data()
        .iter()
        .chain(fx.pred.sizes.data())
        .copied()
        .collect();
    let box_f = |x: &[f64]| {
        let o = Tensor3D::from_vec(2, fh, fw, x[..split].to_vec()).expect("shape");
        let s = Tensor3D::from_vec(2, fh, fw, x[split..].to_vec()).expect("shape");
        box_loss(&o, &s, t).expect("box").loss
    };
    let b = box_loss(&fx.pred.offsets, &fx.pred.sizes, t)?;
    let box_a: Vec<f64> = b
        .grad_offsets
        .data()
        .iter()
        .chain(b.grad_sizes.data())
        .copied()
        .collect();
    push("box", &box_a, &numeric_gradient(&box_x, box_f));

    let labels: Vec<usize> = t.centers().iter().map(|c| c.identity).collect();
    let k = fx.logits.first().map_or(0, Vec::len);
    let logit_x = flatten(&fx.logits);
    let reid_f = |x: &[f64]| reid_loss(&unflatten(x, k), &labels).expect("reid").loss;
    let r = reid_loss(&fx.logits, &labels)?;
    push(
        "reid",
        &flatten(&r.grad_logits),
        &numeric_gradient(&logit_x, reid_f),
    );

    let report = compute_losses(&fx.pred, &fx.logits, t, &fx.focal, &fx.uncertainty)?;
    let (hl, bl, il) = (report.heat, report.bbox, report.identity);
    let w_f = |x: &[f64]| total_loss(hl, bl, il, &UncertaintyParams { w1: x[0], w2: x[1] }).total;
    let w = [fx.uncertainty.w1, fx.uncertainty.w2];
    push(
        "uncertainty",
        &[report.grad_w1, report.grad_w2],
        &numeric_gradient(&w, w_f),
    );

    // every prediction through the weighted total
    let all_x: Vec<f64> = heat_x
        .iter()
        .chain(&box_x)
        .chain(&logit_x)
        .copied()
        .collect();
    let (h_end, b_end) = (heat_x.len(), heat_x.len() + box_x.len());
    let all_f = |x: &[f64]| {
        let pred = PredictedMaps {
            heatmap: Tensor2D::from_vec(fh, fw, x[..h_end].to_vec()).expect("shape"),
            offsets: Tensor3D::from_vec(2, fh, fw, x[h_end..h_end + split].to_vec())
                .expect("shape"),
            sizes: Tensor3D::from_vec(2, fh, fw, x[h_end + split..b_end].to_vec()).expect("shape"),
        };
        compute_losses(
            &pred,
            &unflatten(&x[b_end..], k),
            t,
            &fx.focal,
            &fx.uncertainty,
        )
        .expect("losses")
        .total
    };
    let all_a: Vec<f64> = report
        .grad_heatmap
        .data()
        .iter()
        .chain(report.grad_offsets.data())
        .chain(report.grad_sizes.data())
        .chain(&flatten(&report.grad_logits))
        .copied()
        .collect();
    push("total", &all_a, &numeric_gradient(&all_x, all_f));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(2.0, 1.0), 0.5);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn numeric_gradient_of_polynomial() {
        let g = numeric_gradient(&[1.0, -2.0], |x| x[0] * x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn fixtures_pass() {
        for seed in 0..10 {
            let fx = random_fixture(seed, 8, 8).unwrap();
            for r in check_fixture(&fx).unwrap() {
                assert!(
                    r.max_rel_error <= TOLERANCE,
                    "seed {seed} {}: {}",
                    r.name,
                    r.max_rel_error
                );
            }
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let a = [1.0, 2.0];
        let n = numeric_gradient(&[0.5, 0.5], |x| x[0] + x[1]);
        assert!(max_relative_error(&a, &n) > 0.4);
    }
}
