//! Supervision targets for the heatmap, offset, size and identity heads.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BBox, GridSpec, Tensor2D, Tensor3D};

/// Ground-truth box with its identity class index in `[0, K)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject<T> {
    pub bbox: BBox<T>,
    pub identity: usize,
}

/// Feature-grid cell of an object center plus the sub-cell remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizedCenter<T> {
    pub cell_x: usize,
    pub cell_y: usize,
    pub offset: (T, T),
}

/// Parameters of the size-adaptive Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaParams<T> {
    pub min_overlap: T,
    pub min_sigma: T,
}

impl<T: Scalar> Default for SigmaParams<T> {
    fn default() -> Self {
        Self {
            min_overlap: T::lit(0.7),
            min_sigma: T::lit(2.0 / 3.0),
        }
    }
}

/// Maps the model heads are trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMaps<T> {
    pub grid: GridSpec,
    pub heatmap: Tensor2D<T>,
    /// Channel 0 is x, channel 1 is y; feature-grid units in `[0, 1)`.
    pub offsets: Tensor3D<T>,
    /// Channel 0 is width, channel 1 is height; image pixels.
    pub sizes: Tensor3D<T>,
    /// Row-major `feat_h × feat_w`.
    pub center_mask: Vec<bool>,
    /// Row-major; `Some` exactly where `center_mask` is set.
    pub identity_index: Vec<Option<usize>>,
    pub num_objects: usize,
}

/// One retained object as seen by the heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedCenter<T> {
    pub x: usize,
    pub y: usize,
    pub identity: usize,
    pub offset: (T, T),
    pub size: (T, T),
}

impl<T: Scalar> TargetMaps<T> {
    /// Masked centers in row-major order.
    pub fn centers(&self) -> Vec<EncodedCenter<T>> {
        let w = self.grid.feat_w();
        self.center_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| {
                let (y, x) = (i / w, i % w);
                EncodedCenter {
                    x,
                    y,
                    identity: self.identity_index[i].expect("identity set at masked center"),
                    offset: (self.offsets.get(0, y, x), self.offsets.get(1, y, x)),
                    size: (self.sizes.get(0, y, x), self.sizes.get(1, y, x)),
                }
            })
            .collect()
    }

    pub fn is_center(&self, y: usize, x: usize) -> bool {
        self.center_mask[y * self.grid.feat_w() + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DropReason {
    CenterOutsideImage,
    CenterOutsideGrid,
    Collision { kept: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedObject {
    pub index: usize,
    pub reason: DropReason,
}

/// Diagnostics from [`encode_targets`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncodeReport {
    pub dropped: Vec<DroppedObject>,
    pub collisions: usize,
}

pub fn quantize_center<T: Scalar>(bbox: &BBox<T>, grid: &GridSpec) -> Result<QuantizedCenter<T>> {
    let (cx, cy) = bbox.center();
    let (iw, ih) = (
        T::from_usize_lossy(grid.image_w),
        T::from_usize_lossy(grid.image_h),
    );
    if !(cx >= T::zero() && cy >= T::zero() && cx < iw && cy < ih) {
        return Err(Error::invalid(format!(
            "center ({cx}, {cy}) outside {}x{} image",
            grid.image_w, grid.image_h
        )));
    }
    let stride = T::from_usize_lossy(grid.stride);
    let (fx, fy) = (cx / stride, cy / stride);
    let (qx, qy) = (fx.floor(), fy.floor());
    let cell_x = qx.to_usize().expect("non-negative cell");
    let cell_y = qy.to_usize().expect("non-negative cell");
    if cell_x >= grid.feat_w() || cell_y >= grid.feat_h() {
        return Err(Error::invalid(format!(
            "center cell ({cell_x}, {cell_y}) outside {}x{} grid",
            grid.feat_w(),
            grid.feat_h()
        )));
    }
    Ok(QuantizedCenter {
        cell_x,
        cell_y,
        offset: (fx - qx, fy - qy),
    })
}

/// Radius (feature cells) within which a shifted box keeps `min_overlap` IoU with the
/// original, taken as the minimum over the three corner-displacement cases.
///
/// The roots are halved rather than divided by `2a`, reproducing the reference
/// CenterNet implementation.
pub fn gaussian_radius<T: Scalar>(w: T, h: T, min_overlap: T) -> T {
    let one = T::one();
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let m = min_overlap;
    let half_root = |a: T, b: T, c: T| (b + (b * b - four * a * c).max(T::zero()).sqrt()) / two;

    let r1 = half_root(one, h + w, w * h * (one - m) / (one + m));
    let r2 = half_root(four, two * (h + w), (one - m) * w * h);
    let r3 = half_root(four * m, -two * m * (h + w), (m - one) * w * h);
    r1.min(r2).min(r3).max(T::zero())
}

/// Standard deviation of the center Gaussian for a box of `(w, h)` image pixels.
pub fn gaussian_radius_sigma<T: Scalar>(
    size: (T, T),
    grid: &GridSpec,
    params: &SigmaParams<T>,
) -> T {
    let stride = T::from_usize_lossy(grid.stride);
    let r = gaussian_radius(size.0 / stride, size.1 / stride, params.min_overlap);
    (r / T::lit(3.0)).max(params.min_sigma)
}

struct Retained<T> {
    index: usize,
    center: QuantizedCenter<T>,
    area: T,
}

/// Encodes ground truth into target maps.
///
/// Overlapping Gaussians combine by element-wise maximum so the heatmap stays in `[0, 1]`
/// with exactly `1` at every center. When two objects share a center cell the larger box
/// wins. Objects whose center leaves the image or grid are dropped and reported.
pub fn encode_targets<T: Scalar>(
    objects: &[GtObject<T>],
    grid: &GridSpec,
    num_identities: usize,
    params: &SigmaParams<T>,
) -> Result<(TargetMaps<T>, EncodeReport)> {
    let (fw, fh) = (grid.feat_w(), grid.feat_h());
    let mut report = EncodeReport::default();
    let mut owner: Vec<Option<usize>> = vec![None; fw * fh];
    let mut retained: Vec<Option<Retained<T>>> = Vec::with_capacity(objects.len());

    for (index, obj) in objects.iter().enumerate() {
        if obj.identity >= num_identities {
            return Err(Error::invalid(format!(
                "object {index}: identity {} >= K = {num_identities}",
                obj.identity
            )));
        }
        let center = match quantize_center(&obj.bbox, grid) {
            Ok(c) => c,
            Err(_) => {
                let (cx, cy) = obj.bbox.center();
                let inside = cx >= T::zero()
                    && cy >= T::zero()
                    && cx < T::from_usize_lossy(grid.image_w)
                    && cy < T::from_usize_lossy(grid.image_h);
                report.dropped.push(DroppedObject {
                    index,
                    reason: if inside {
                        DropReason::CenterOutsideGrid
                    } else {
                        DropReason::CenterOutsideImage
                    },
                });
                retained.push(None);
                continue;
            }
        };
        let cell = center.cell_y * fw + center.cell_x;
        let area = obj.bbox.area();
        match owner[cell] {
            Some(prev) => {
                report.collisions += 1;
                let prev_area = retained[prev].as_ref().expect("owner is retained").area;
                if area > prev_area {
                    retained[prev] = None;
                    report.dropped.push(DroppedObject {
                        index: prev,
                        reason: DropReason::Collision { kept: index },
                    });
                    owner[cell] = Some(index);
                    retained.push(Some(Retained {
                        index,
                        center,
                        area,
                    }));
                } else {
                    report.dropped.push(DroppedObject {
                        index,
                        reason: DropReason::Collision { kept: prev },
                    });
                    retained.push(None);
                }
            }
            None => {
                owner[cell] = Some(index);
                retained.push(Some(Retained {
                    index,
                    center,
                    area,
                }));
            }
        }
    }

    let mut heatmap = Tensor2D::zeros(fh, fw)?;
    let mut offsets = Tensor3D::zeros(2, fh, fw)?;
    let mut sizes = Tensor3D::zeros(2, fh, fw)?;
    let mut center_mask = vec![false; fw * fh];
    let mut identity_index = vec![None; fw * fh];
    let mut num_objects = 0;

    for r in retained.iter().flatten() {
        let obj = &objects[r.index];
        let (w, h) = (obj.bbox.width(), obj.bbox.height());
        let sigma = gaussian_radius_sigma((w, h), grid, params);
        draw_gaussian(&mut heatmap, r.center.cell_x, r.center.cell_y, sigma);

        let (x, y) = (r.center.cell_x, r.center.cell_y);
        offsets.set(0, y, x, r.center.offset.0);
        offsets.set(1, y, x, r.center.offset.1);
        sizes.set(0, y, x, w);
        sizes.set(1, y, x, h);
        center_mask[y * fw + x] = true;
        identity_index[y * fw + x] = Some(obj.identity);
        num_objects += 1;
    }
    report.dropped.sort_by_key(|d| d.index);

    Ok((
        TargetMaps {
            grid: *grid,
            heatmap,
            offsets,
            sizes,
            center_mask,
            identity_index,
            num_objects,
        },
        report,
    ))
}

fn draw_gaussian<T: Scalar>(heatmap: &mut Tensor2D<T>, cx: usize, cy: usize, sigma: T) {
    let denom = T::lit(2.0) * sigma * sigma;
    let (_, w) = heatmap.shape();
    let (cx, cy) = (T::from_usize_lossy(cx), T::from_usize_lossy(cy));
    let dx2: Vec<T> = (0..w)
        .map(|x| {
            let dx = T::from_usize_lossy(x) - cx;
            dx * dx
        })
        .collect();
    for (y, row) in heatmap.data_mut().chunks_mut(w).enumerate() {
        let dy = T::from_usize_lossy(y) - cy;
        let dy2 = dy * dy;
        // every value in the row is at most this one; zero means nothing to raise
        if (-dy2 / denom).exp() == T::zero() {
            continue;
        }
        for (cell, &d) in row.iter_mut().zip(&dx2) {
            let v = (-(d + dy2) / denom).exp();
            if v > *cell {
                *cell = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn grid() -> GridSpec {
        GridSpec::new(1088, 608, 4).unwrap()
    }

    #[test]
    fn quantize_examples() {
        let q = quantize_center(&b(100.0, 40.0, 140.0, 120.0), &grid()).unwrap();
        assert_eq!((q.cell_x, q.cell_y, q.offset), (30, 20, (0.0, 0.0)));
        let q = quantize_center(&b(101.0, 41.0, 141.0, 121.0), &grid()).unwrap();
        assert_eq!((q.cell_x, q.cell_y, q.offset), (30, 20, (0.25, 0.25)));
        let q = quantize_center(&b(0.0, 0.0, 2.0, 2.0), &grid()).unwrap();
        assert_eq!((q.cell_x, q.cell_y, q.offset), (0, 0, (0.25, 0.25)));
    }

    #[test]
    fn quantize_rejects_outside() {
        assert!(quantize_center(&b(-30.0, 0.0, -10.0, 10.0), &grid()).is_err());
        assert!(quantize_center(&b(1080.0, 600.0, 1100.0, 620.0), &grid()).is_err());
        // 1090 px wide image keeps a 272-cell grid; a center at x=1089 has no cell.
        let g = GridSpec::new(1090, 608, 4).unwrap();
        assert!(quantize_center(&b(1088.0, 10.0, 1090.0, 12.0), &g).is_err());
    }

    // Literal transcription of the reference three-case radius routine.
    fn reference_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
        let a1 = 1.0;
        let b1 = height + width;
        let c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
        let sq1 = (b1 * b1 - 4.0 * a1 * c1).sqrt();
        let r1 = (b1 + sq1) / 2.0;

        let a2 = 4.0;
        let b2 = 2.0 * (height + width);
        let c2 = (1.0 - min_overlap) * width * height;
        let sq2 = (b2 * b2 - 4.0 * a2 * c2).sqrt();
        let r2 = (b2 + sq2) / 2.0;

        let a3 = 4.0 * min_overlap;
        let b3 = -2.0 * min_overlap * (height + width);
        let c3 = (min_overlap - 1.0) * width * height;
        let sq3 = (b3 * b3 - 4.0 * a3 * c3).sqrt();
        let r3 = (b3 + sq3) / 2.0;
        r1.min(r2).min(r3)
    }

    #[test]
    fn sigma_for_40x80_box() {
        let r = reference_radius(80.0 / 4.0, 40.0 / 4.0, 0.7);
        // frozen from the reference routine: r = 3.67793...
        assert!((r - 3.677_925_358_506_133).abs() < 1e-9, "{r}");
        let s = gaussian_radius_sigma((40.0, 80.0), &grid(), &SigmaParams::default());
        assert!((s - r / 3.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_small_object_clamped() {
        let s = gaussian_radius_sigma((2.0, 3.0), &grid(), &SigmaParams::default());
        assert_eq!(s, 2.0 / 3.0);
    }

    proptest! {
        #[test]
        fn radius_matches_reference(w in 0.5f64..200.0, h in 0.5f64..400.0, m in 0.3f64..0.95) {
            let got = gaussian_radius(w, h, m);
            let want = reference_radius(h, w, m).max(0.0);
            prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        }

        #[test]
        fn sigma_monotone_under_doubling(w in 1.0f64..300.0, h in 1.0f64..600.0) {
            let p = SigmaParams::default();
            let g = grid();
            prop_assert!(gaussian_radius_sigma((2.0 * w, 2.0 * h), &g, &p) >= gaussian_radius_sigma((w, h), &g, &p));
            prop_assert!(gaussian_radius_sigma((w + 1.0, h), &g, &p) >= gaussian_radius_sigma((w, h), &g, &p));
        }
    }

    #[test]
    fn empty_objects_give_zero_maps() {
        let (maps, report) =
            encode_targets::<f64>(&[], &grid(), 1, &SigmaParams::default()).unwrap();
        assert!(maps.heatmap.data().iter().all(|&v| v == 0.0));
        assert!(maps.center_mask.iter().all(|&m| !m));
        assert_eq!(maps.num_objects, 0);
        assert_eq!(report, EncodeReport::default());
    }

    #[test]
    fn single_object_peak_and_targets() {
        let obj = GtObject {
            bbox: b(101.0, 41.0, 141.0, 121.0),
            identity: 3,
        };
        let (maps, _) = encode_targets(&[obj], &grid(), 5, &SigmaParams::default()).unwrap();
        assert_eq!(maps.heatmap.get(20, 30), 1.0);
        assert!(maps.is_center(20, 30));
        let c = maps.centers();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].offset, (0.25, 0.25));
        assert_eq!(c[0].size, (40.0, 80.0));
        assert_eq!(c[0].identity, 3);
        assert!(maps
            .heatmap
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn unit_sigma_neighbor_value() {
        let mut heat = Tensor2D::<f64>::zeros(5, 5).unwrap();
        draw_gaussian(&mut heat, 2, 2, 1.0);
        assert!((heat.get(2, 3) - 0.606_530_659_712_633_4).abs() < 1e-12);
        assert!((heat.get(1, 2) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn collision_keeps_larger_box() {
        let small = GtObject {
            bbox: b(100.0, 40.0, 140.0, 120.0),
            identity: 0,
        };
        let large = GtObject {
            bbox: b(90.0, 20.0, 150.0, 140.0),
            identity: 1,
        };
        let (maps, report) =
            encode_targets(&[small, large], &grid(), 2, &SigmaParams::default()).unwrap();
        assert_eq!(report.collisions, 1);
        assert_eq!(maps.num_objects, 1);
        assert_eq!(maps.centers()[0].identity, 1);
        assert_eq!(
            report.dropped,
            vec![DroppedObject {
                index: 0,
                reason: DropReason::Collision { kept: 1 }
            }]
        );
    }

    #[test]
    fn identity_out_of_range_is_error() {
        let obj = GtObject {
            bbox: b(100.0, 40.0, 140.0, 120.0),
            identity: 2,
        };
        assert!(encode_targets(&[obj], &grid(), 2, &SigmaParams::default()).is_err());
    }

    #[test]
    fn outside_objects_dropped() {
        let obj = GtObject {
            bbox: b(-50.0, 40.0, -10.0, 120.0),
            identity: 0,
        };
        let (maps, report) = encode_targets(&[obj], &grid(), 1, &SigmaParams::default()).unwrap();
        assert_eq!(maps.num_objects, 0);
        assert_eq!(report.dropped[0].reason, DropReason::CenterOutsideImage);
    }

    #[test]
    fn peaks_are_centers_when_separated() {
        let objs = [
            GtObject {
                bbox: b(10.0, 10.0, 50.0, 90.0),
                identity: 0,
            },
            GtObject {
                bbox: b(40.0, 20.0, 70.0, 80.0),
                identity: 1,
            },
            GtObject {
                bbox: b(200.0, 100.0, 260.0, 230.0),
                identity: 2,
            },
        ];
        let g = GridSpec::new(320, 256, 4).unwrap();
        let (maps, _) = encode_targets(&objs, &g, 3, &SigmaParams::default()).unwrap();
        let (h, w) = maps.heatmap.shape();
        for y in 0..h {
            for x in 0..w {
                let v = maps.heatmap.get(y, x);
                let strict_max = (y.saturating_sub(1)..(y + 2).min(h))
                    .flat_map(|yy| (x.saturating_sub(1)..(x + 2).min(w)).map(move |xx| (yy, xx)))
                    .filter(|&(yy, xx)| (yy, xx) != (y, x))
                    .all(|(yy, xx)| maps.heatmap.get(yy, xx) < v);
                assert_eq!(
                    strict_max && v >= 1.0 - 1e-9,
                    maps.is_center(y, x),
                    "cell ({x},{y})"
                );
            }
        }
    }
}
