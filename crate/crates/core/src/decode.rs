//! Heatmap peak extraction and box/embedding decoding.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BBox, GridSpec, Tensor2D, Tensor3D};

/// A heatmap cell that survived peak suppression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak<T> {
    pub x: usize,
    pub y: usize,
    pub score: T,
}

/// Where the identity embedding is read for each peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// The integer peak cell.
    #[default]
    Center,
    /// Bilinear sample at the sub-cell center `(x + ôx, y + ôy)`.
    CenterBilinear,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Sampling::Center),
            "center-bi" | "center_bi" | "centerbi" => Ok(Sampling::CenterBilinear),
            other => Err(Error::invalid(format!(
                "unknown sampling `{other}` (center|center-bi)"
            ))),
        }
    }
}

impl std::fmt::Display for Sampling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sampling::Center => "center",
            Sampling::CenterBilinear => "center-bi",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig<T> {
    pub threshold: T,
    pub top_k: usize,
    pub sampling: Sampling,
}

impl<T: Scalar> Default for DecodeConfig<T> {
    fn default() -> Self {
        Self {
            threshold: T::lit(0.4),
            top_k: 128,
            sampling: Sampling::Center,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    pub score: T,
    /// Unit-norm identity embedding, when an embedding map was supplied.
    pub embedding: Option<Vec<T>>,
    /// Sub-cell center on the feature grid.
    pub center_feat: (T, T),
}

/// Keeps cells equal to the maximum of their 3×3 neighbourhood (plateaus survive) with
/// score strictly above `threshold`, sorted by descending score then row-major position,
/// truncated to `top_k`.
pub fn peak_nms<T: Scalar>(heatmap: &Tensor2D<T>, threshold: T, top_k: usize) -> Vec<Peak<T>> {
    let (h, w) = heatmap.shape();
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = heatmap.get(y, x);
            if !(v > threshold) {
                continue;
            }
            let mut is_max = true;
            'nb: for yy in y.saturating_sub(1)..(y + 2).min(h) {
                for xx in x.saturating_sub(1)..(x + 2).min(w) {
                    if heatmap.get(yy, xx) > v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                peaks.push(Peak { x, y, score: v });
            }
        }
    }
    // stable: equal scores stay in row-major order
    peaks.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    peaks.truncate(top_k);
    peaks
}

/// Bilinear blend of the four neighbouring cells of every channel.
pub fn bilinear_sample<T: Scalar>(map: &Tensor3D<T>, x: T, y: T) -> Result<Vec<T>> {
    let (c, h, w) = map.shape();
    let max_x = T::from_usize_lossy(w - 1);
    let max_y = T::from_usize_lossy(h - 1);
    if !(x >= T::zero() && x <= max_x && y >= T::zero() && y <= max_y) {
        return Err(Error::invalid(format!(
            "sample ({x}, {y}) outside [0, {max_x}] x [0, {max_y}]"
        )));
    }
    let x0 = x.floor().to_usize().unwrap();
    let y0 = y.floor().to_usize().unwrap();
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - T::from_usize_lossy(x0);
    let fy = y - T::from_usize_lossy(y0);
    let one = T::one();
    Ok((0..c)
        .map(|ch| {
            let top = map.get(ch, y0, x0) * (one - fx) + map.get(ch, y0, x1) * fx;
            let bottom = map.get(ch, y1, x0) * (one - fx) + map.get(ch, y1, x1) * fx;
            top * (one - fy) + bottom * fy
        })
        .collect())
}

/// L2-normalizes in place; `None` for a zero vector.
pub fn normalize<T: Scalar>(mut v: Vec<T>) -> Option<Vec<T>> {
    let norm = v.iter().map(|&a| a * a).sum::<T>().sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|a| *a /= norm);
    Some(v)
}

/// Turns predicted maps into detections.
///
/// Offsets are in feature cells, sizes in image pixels. Boxes are clipped to the image.
/// Center-BI coordinates past the last row/column are clamped onto the grid.
pub fn decode<T: Scalar>(
    heatmap: &Tensor2D<T>,
    offsets: &Tensor3D<T>,
    sizes: &Tensor3D<T>,
    embeddings: Option<&Tensor3D<T>>,
    grid: &GridSpec,
    cfg: &DecodeConfig<T>,
) -> Result<Vec<Detection<T>>> {
    let (fh, fw) = (grid.feat_h(), grid.feat_w());
    if heatmap.shape() != (fh, fw) {
        return Err(Error::shape(format!(
            "heatmap {:?}, grid is {fh}x{fw}",
            heatmap.shape()
        )));
    }
    for (name, t) in [("offset", offsets), ("size", sizes)] {
        if t.shape() != (2, fh, fw) {
            return Err(Error::shape(format!(
                "{name} map {:?}, expected (2, {fh}, {fw})",
                t.shape()
            )));
        }
    }
    if let Some(e) = embeddings {
        if (e.height(), e.width()) != (fh, fw) {
            return Err(Error::shape(format!(
                "embedding map {:?}, grid is {fh}x{fw}",
                e.shape()
            )));
        }
    }
    if cfg.top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }

    let stride = T::from_usize_lossy(grid.stride);
    let (iw, ih) = (
        T::from_usize_lossy(grid.image_w),
        T::from_usize_lossy(grid.image_h),
    );
    let (max_x, max_y) = (T::from_usize_lossy(fw - 1), T::from_usize_lossy(fh - 1));

    peak_nms(heatmap, cfg.threshold, cfg.top_k)
        .into_iter()
        .map(|p| {
            let ox = offsets.get(0, p.y, p.x);
            let oy = offsets.get(1, p.y, p.x);
            let fx = T::from_usize_lossy(p.x) + ox;
            let fy = T::from_usize_lossy(p.y) + oy;
            let (sw, sh) = (
                sizes.get(0, p.y, p.x).max(T::zero()),
                sizes.get(1, p.y, p.x).max(T::zero()),
            );
            let bbox = BBox::from_center(fx * stride, fy * stride, sw, sh).clip(iw, ih);
            let embedding = match embeddings {
                None => None,
                Some(e) => {
                    let raw = match cfg.sampling {
                        Sampling::Center => e.column(p.y, p.x),
                        Sampling::CenterBilinear => bilinear_sample(
                            e,
                            fx.max(T::zero()).min(max_x),
                            fy.max(T::zero()).min(max_y),
                        )?,
                    };
                    normalize(raw)
                }
            };
            Ok(Detection {
                bbox,
                score: p.score,
                embedding,
                center_feat: (fx, fy),
            })
        })
        .collect()
}
