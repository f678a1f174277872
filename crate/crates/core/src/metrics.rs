//! CLEAR MOT, identity F1, detection AP and verification TPR at a fixed FAR.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::assignment::solve_assignment;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{iou, BBox};

/// Per-frame `(id, box)` lists.
pub type FrameBoxes<T> = BTreeMap<u64, Vec<(i64, BBox<T>)>>;

/// Counts from the CLEAR protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearMot {
    pub total_gt: u64,
    pub matches: u64,
    pub fp: u64,
    pub fn_: u64,
    pub id_switches: u64,
    /// `1 − (fp + fn + idsw) / total_gt`.
    pub mota: f64,
    /// Mean IoU of matched pairs.
    pub motp: f64,
    pub num_gt_tracks: u64,
    pub mostly_tracked: u64,
    pub mostly_lost: u64,
}

impl ClearMot {
    pub fn mt_ratio(&self) -> f64 {
        ratio(self.mostly_tracked, self.num_gt_tracks)
    }

    pub fn ml_ratio(&self) -> f64 {
        ratio(self.mostly_lost, self.num_gt_tracks)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Coverage at or above this fraction makes a trajectory mostly tracked.
pub const MOSTLY_TRACKED: f64 = 0.8;
/// Coverage at or below this fraction makes a trajectory mostly lost.
pub const MOSTLY_LOST: f64 = 0.2;

fn check_unique<T>(frame: u64, items: &[(i64, BBox<T>)], what: &str) -> Result<()> {
    let mut seen = HashSet::new();
    for (id, _) in items {
        if !seen.insert(*id) {
            return Err(Error::invalid(format!(
                "duplicate {what} id {id} in frame {frame}"
            )));
        }
    }
    Ok(())
}

/// CLEAR MOT with correspondence persistence.
///
/// Each frame first keeps the previous ground-truth → prediction correspondences that
/// still overlap by at least `iou_thresh`, then matches the rest by Hungarian assignment
/// on `1 − IoU`. A ground-truth trajectory counts an identity switch when it is matched
/// to a different prediction id than at its last matched frame.
pub fn clear_mot<T: Scalar>(
    gt: &FrameBoxes<T>,
    pred: &FrameBoxes<T>,
    iou_thresh: T,
) -> Result<ClearMot> {
    let frames: BTreeSet<u64> = gt.keys().chain(pred.keys()).copied().collect();
    let empty = Vec::new();
    let mut last_match: HashMap<i64, i64> = HashMap::new();
    let mut presence: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
    let (mut total_gt, mut matches, mut fp, mut fn_, mut idsw) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut iou_sum = 0.0;

    for f in frames {
        let g = gt.get(&f).unwrap_or(&empty);
        let p = pred.get(&f).unwrap_or(&empty);
        check_unique(f, g, "ground-truth")?;
        check_unique(f, p, "predicted")?;
        total_gt += g.len() as u64;

        let overlap: Vec<Vec<T>> = g
            .iter()
            .map(|(_, a)| p.iter().map(|(_, b)| iou(a, b)).collect())
            .collect();
        let mut gt_to_pred: Vec<Option<usize>> = vec![None; g.len()];
        let mut pred_taken = vec![false; p.len()];

        for (gi, (gid, _)) in g.iter().enumerate() {
            if let Some(prev) = last_match.get(gid) {
                if let Some(pj) = p.iter().position(|(pid, _)| pid == prev) {
                    if !pred_taken[pj] && overlap[gi][pj] >= iou_thresh {
                        gt_to_pred[gi] = Some(pj);
                        pred_taken[pj] = true;
                    }
                }
            }
        }

        let free_g: Vec<usize> = (0..g.len()).filter(|&i| gt_to_pred[i].is_none()).collect();
        let free_p: Vec<usize> = (0..p.len()).filter(|&j| !pred_taken[j]).collect();
        if !free_g.is_empty() && !free_p.is_empty() {
            let cost: Vec<Vec<T>> = free_g
                .iter()
                .map(|&gi| {
                    free_p
                        .iter()
                        .map(|&pj| {
                            let o = overlap[gi][pj];
                            if o >= iou_thresh {
                                T::one() - o
                            } else {
                                T::infinity()
                            }
                        })
                        .collect()
                })
                .collect();
            for (r, c) in solve_assignment(&cost)?.into_iter().enumerate() {
                if let Some(c) = c {
                    let (gi, pj) = (free_g[r], free_p[c]);
                    gt_to_pred[gi] = Some(pj);
                    pred_taken[pj] = true;
                    if let Some(prev) = last_match.get(&g[gi].0) {
                        if *prev != p[pj].0 {
                            idsw += 1;
                        }
                    }
                }
            }
        }

        for (gi, (gid, _)) in g.iter().enumerate() {
            let entry = presence.entry(*gid).or_insert((0, 0));
            entry.0 += 1;
            match gt_to_pred[gi] {
                Some(pj) => {
                    entry.1 += 1;
                    matches += 1;
                    iou_sum += overlap[gi][pj].as_f64();
                    last_match.insert(*gid, p[pj].0);
                }
                None => fn_ += 1,
            }
        }
        fp += pred_taken.iter().filter(|&&t| !t).count() as u64;
    }

    let mota = if total_gt > 0 {
        1.0 - (fp + fn_ + idsw) as f64 / total_gt as f64
    } else if fp == 0 {
        1.0
    } else {
        f64::NEG_INFINITY
    };
    let (mut mostly_tracked, mut mostly_lost) = (0, 0);
    for &(present, tracked) in presence.values() {
        let cov = tracked as f64 / present as f64;
        if cov >= MOSTLY_TRACKED {
            mostly_tracked += 1;
        }
        if cov <= MOSTLY_LOST {
            mostly_lost += 1;
        }
    }
    Ok(ClearMot {
        total_gt,
        matches,
        fp,
        fn_,
        id_switches: idsw,
        mota,
        motp: if matches > 0 {
            iou_sum / matches as f64
        } else {
            0.0
        },
        num_gt_tracks: presence.len() as u64,
        mostly_tracked,
        mostly_lost,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdMetrics {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
}

/// Identity F1 from a global one-to-one matching of whole trajectories that maximizes the
/// number of frames where the matched pair overlaps by at least `iou_thresh`.
pub fn idf1<T: Scalar>(
    gt: &FrameBoxes<T>,
    pred: &FrameBoxes<T>,
    iou_thresh: T,
) -> Result<IdMetrics> {
    let mut gt_ids: BTreeMap<i64, u64> = BTreeMap::new();
    let mut pred_ids: BTreeMap<i64, u64> = BTreeMap::new();
    for (f, items) in gt {
        check_unique(*f, items, "ground-truth")?;
        for (id, _) in items {
            *gt_ids.entry(*id).or_default() += 1;
        }
    }
    for (f, items) in pred {
        check_unique(*f, items, "predicted")?;
        for (id, _) in items {
            *pred_ids.entry(*id).or_default() += 1;
        }
    }
    let g_index: HashMap<i64, usize> = gt_ids.keys().enumerate().map(|(i, id)| (*id, i)).collect();
    let p_index: HashMap<i64, usize> = pred_ids
        .keys()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let mut co = vec![vec![0u64; pred_ids.len()]; gt_ids.len()];
    for (f, g) in gt {
        if let Some(p) = pred.get(f) {
            for (gid, gb) in g {
                for (pid, pb) in p {
                    if iou(gb, pb) >= iou_thresh {
                        co[g_index[gid]][p_index[pid]] += 1;
                    }
                }
            }
        }
    }
    let cost: Vec<Vec<f64>> = co
        .iter()
        .map(|r| r.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let idtp: u64 = solve_assignment(&cost)?
        .into_iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| co[i][j]))
        .sum();
    let total_gt: u64 = gt_ids.values().sum();
    let total_pred: u64 = pred_ids.values().sum();
    let idfn = total_gt - idtp;
    let idfp = total_pred - idtp;
    let f1 = if total_gt + total_pred == 0 {
        1.0
    } else {
        2.0 * idtp as f64 / (total_gt + total_pred) as f64
    };
    Ok(IdMetrics {
        idtp,
        idfp,
        idfn,
        idf1: f1,
        idp: ratio(idtp, total_pred),
        idr: ratio(idtp, total_gt),
    })
}

/// All-point interpolated average precision.
///
/// Predictions are visited by descending score (stable for ties); each is a true
/// positive when its best-overlapping ground truth in the same frame reaches
/// `iou_thresh` and has not been claimed yet.
pub fn detection_ap<T: Scalar>(
    gt: &BTreeMap<u64, Vec<BBox<T>>>,
    preds: &BTreeMap<u64, Vec<(BBox<T>, T)>>,
    iou_thresh: T,
) -> f64 {
    let total_gt: usize = gt.values().map(Vec::len).sum();
    if total_gt == 0 {
        return 0.0;
    }
    let mut flat: Vec<(u64, BBox<T>, T)> = preds
        .iter()
        .flat_map(|(f, v)| v.iter().map(move |(b, s)| (*f, *b, *s)))
        .collect();
    flat.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));

    let mut claimed: HashMap<u64, Vec<bool>> =
        gt.iter().map(|(f, v)| (*f, vec![false; v.len()])).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(flat.len());
    for (k, (f, b, _)) in flat.iter().enumerate() {
        if let Some(boxes) = gt.get(f) {
            let best = boxes.iter().enumerate().map(|(i, g)| (i, iou(b, g))).fold(
                None::<(usize, T)>,
                |acc, x| match acc {
                    Some(a) if a.1 >= x.1 => Some(a),
                    _ => Some(x),
                },
            );
            if let Some((i, o)) = best {
                let c = claimed.get_mut(f).unwrap();
                if o >= iou_thresh && !c[i] {
                    c[i] = true;
                    tp += 1;
                }
            }
        }
        curve.push((tp as f64 / total_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope from the right, then sum over recall steps
    let mut ap = 0.0;
    let mut best_p = 0.0f64;
    let mut envelope = vec![0.0; curve.len()];
    for i in (0..curve.len()).rev() {
        best_p = best_p.max(curve[i].1);
        envelope[i] = best_p;
    }
    let mut prev_r = 0.0;
    for (i, &(r, _)) in curve.iter().enumerate() {
        if r > prev_r {
            ap += (r - prev_r) * envelope[i];
            prev_r = r;
        }
    }
    ap
}

/// True positive rate at a false accept rate.
///
/// The threshold is the smallest similarity at which at most `far` of the impostor
/// scores are accepted (score ≥ threshold); with `k = ⌊far·n⌋` that is any value just
/// above the `(k+1)`-th largest impostor score, so a genuine pair is accepted when it
/// scores strictly above it.
pub fn tpr_at_far<T: Scalar>(genuine: &[T], impostor: &[T], far: f64) -> Result<f64> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::invalid(
            "genuine and impostor score lists must be non-empty",
        ));
    }
    if !(far > 0.0 && far < 1.0) {
        return Err(Error::invalid(format!("far must be in (0, 1), got {far}")));
    }
    if genuine.iter().chain(impostor).any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN similarity score"));
    }
    let mut imp: Vec<T> = impostor.to_vec();
    imp.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let allowed = (far * imp.len() as f64 + 1e-9).floor() as usize;
    if allowed >= imp.len() {
        return Ok(1.0);
    }
    let cut = imp[allowed];
    let accepted = genuine.iter().filter(|&&g| g > cut).count();
    Ok(accepted as f64 / genuine.len() as f64)
}

/// A labelled embedding observed in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySample<T> {
    pub frame: u64,
    pub identity: i64,
    pub embedding: Vec<T>,
}

/// Cosine similarities of genuine pairs (same identity, different frames) and impostor
/// pairs (different identities, same frame).
pub fn verification_pairs<T: Scalar>(samples: &[IdentitySample<T>]) -> (Vec<T>, Vec<T>) {
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    let cos = |a: &[T], b: &[T]| -> T {
        let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
        let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
        let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
        if na > T::zero() && nb > T::zero() {
            dot / (na * nb)
        } else {
            T::zero()
        }
    };
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            if a.identity == b.identity && a.frame != b.frame {
                genuine.push(cos(&a.embedding, &b.embedding));
            } else if a.identity != b.identity && a.frame == b.frame {
                impostor.push(cos(&a.embedding, &b.embedding));
            }
        }
    }
    (genuine, impostor)
}

/// Headline numbers for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub mota: f64,
    pub motp: f64,
    pub idf1: f64,
    pub idp: f64,
    pub idr: f64,
    pub id_switches: u64,
    pub fp: u64,
    pub fn_: u64,
    pub total_gt: u64,
    pub num_gt_tracks: u64,
    pub mt_ratio: f64,
    pub ml_ratio: f64,
    pub ap: Option<f64>,
    pub tpr_at_far: Option<f64>,
}

/// CLEAR and identity metrics together.
pub fn evaluate<T: Scalar>(
    gt: &FrameBoxes<T>,
    pred: &FrameBoxes<T>,
    iou_thresh: T,
) -> Result<MetricsReport> {
    let c = clear_mot(gt, pred, iou_thresh)?;
    let id = idf1(gt, pred, iou_thresh)?;
    Ok(MetricsReport {
        mota: c.mota,
        motp: c.motp,
        idf1: id.idf1,
        idp: id.idp,
        idr: id.idr,
        id_switches: c.id_switches,
        fp: c.fp,
        fn_: c.fn_,
        total_gt: c.total_gt,
        num_gt_tracks: c.num_gt_tracks,
        mt_ratio: c.mt_ratio(),
        ml_ratio: c.ml_ratio(),
        ap: None,
        tpr_at_far: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64) -> BBox<f64> {
        BBox::new(x, 0.0, x + 10.0, 20.0).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let mut gt = FrameBoxes::new();
        for f in 1..=5 {
            gt.insert(f, vec![(1, bx(f as f64)), (2, bx(100.0 + f as f64))]);
        }
        let c = clear_mot(&gt, &gt, 0.5).unwrap();
        assert_eq!((c.fp, c.fn_, c.id_switches, c.mota), (0, 0, 0, 1.0));
        assert_eq!(c.mt_ratio(), 1.0);
        assert_eq!(idf1(&gt, &gt, 0.5).unwrap().idf1, 1.0);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut gt = FrameBoxes::new();
        gt.insert(1, vec![(1, bx(0.0)), (1, bx(50.0))]);
        assert!(clear_mot(&gt, &FrameBoxes::new(), 0.5).is_err());
        assert!(idf1(&FrameBoxes::new(), &gt, 0.5).is_err());
    }

    #[test]
    fn persistence_beats_better_overlap() {
        // frame 2: pred 20 overlaps gt 1 better, but the frame-1 pair (1, 10) still holds
        let mut gt = FrameBoxes::new();
        let mut pr = FrameBoxes::new();
        gt.insert(1, vec![(1, bx(0.0))]);
        pr.insert(1, vec![(10, bx(0.0))]);
        gt.insert(2, vec![(1, bx(0.0))]);
        pr.insert(2, vec![(10, bx(2.0)), (20, bx(0.0))]);
        let c = clear_mot(&gt, &pr, 0.5).unwrap();
        assert_eq!((c.id_switches, c.fp, c.matches), (0, 1, 2));
    }

    #[test]
    fn ap_cases() {
        let mut gt = BTreeMap::new();
        gt.insert(1u64, vec![bx(0.0)]);
        let mut pr = BTreeMap::new();
        assert_eq!(detection_ap(&gt, &pr, 0.5), 0.0);
        pr.insert(1u64, vec![(bx(0.0), 0.9), (bx(300.0), 0.3)]);
        assert_eq!(detection_ap(&gt, &pr, 0.5), 1.0);
        // wrong box scored higher: precision 1/2 at full recall
        pr.insert(1u64, vec![(bx(0.0), 0.3), (bx(300.0), 0.9)]);
        assert_eq!(detection_ap(&gt, &pr, 0.5), 0.5);
    }

    #[test]
    fn tpr_constructed_lists() {
        let genuine = [0.9, 0.8, 0.7, 0.2];
        let impostor = [0.6, 0.5, 0.4, 0.75, 0.1, 0.05, 0.3, 0.2, 0.15, 0.0];
        assert_eq!(tpr_at_far(&genuine, &impostor, 0.1).unwrap(), 0.75);
        assert!(tpr_at_far::<f64>(&[], &impostor, 0.1).is_err());
        assert!(tpr_at_far(&genuine, &impostor, 0.0).is_err());
    }

    #[test]
    fn tpr_identical_distributions() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let t = tpr_at_far(&v, &v, 0.1).unwrap();
        assert!((t - 0.1).abs() < 1e-3, "{t}");
    }

    #[test]
    fn pairs_split_by_frame_and_identity() {
        let s = |frame, identity, e: Vec<f64>| IdentitySample {
            frame,
            identity,
            embedding: e,
        };
        let samples = vec![
            s(1, 1, vec![1.0, 0.0]),
            s(1, 2, vec![0.0, 1.0]),
            s(2, 1, vec![1.0, 0.0]),
            s(2, 2, vec![0.0, 2.0]),
        ];
        let (g, i) = verification_pairs(&samples);
        assert_eq!(g, vec![1.0, 1.0]);
        assert_eq!(i, vec![0.0, 0.0]);
    }
}
