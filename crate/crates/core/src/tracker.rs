//! Online association: appearance cascade, IoU fallback, track lifecycle.

use crate::assignment::hungarian;
use crate::decode::{normalize, Detection};
use crate::error::{Error, Result};
use crate::motion::{KalmanFilter, KalmanState, CHI2_INV_95};
use crate::scalar::Scalar;
use crate::tensor::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Active,
    Lost,
    Removed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub track_id: u64,
    /// `None` when the tracker runs without motion prediction.
    pub kf: Option<KalmanState<T>>,
    /// Exponentially smoothed unit embedding.
    pub smooth_emb: Option<Vec<T>>,
    pub status: TrackStatus,
    pub last_box: BBox<T>,
    pub score: T,
    pub frames_since_update: u32,
    pub start_frame: u64,
}

impl<T: Scalar> Track<T> {
    /// Box used for overlap matching: the motion prediction when available.
    pub fn predicted_box(&self) -> BBox<T> {
        self.kf.as_ref().map_or(self.last_box, KalmanState::bbox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig<T> {
    /// Minimum score for an unmatched detection to start a track.
    pub det_threshold: T,
    /// Maximum cosine distance accepted in the appearance stage.
    pub emb_match_threshold: T,
    /// Maximum `1 − IoU` accepted in the overlap stage.
    pub iou_match_threshold: T,
    /// Frames a track may go unmatched before it is removed.
    pub track_buffer: u32,
    pub ema_momentum: T,
    pub gate_chi2: T,
    pub use_reid: bool,
    pub use_iou: bool,
    pub use_kalman: bool,
}

impl<T: Scalar> Default for TrackerConfig<T> {
    fn default() -> Self {
        Self {
            det_threshold: T::lit(0.4),
            emb_match_threshold: T::lit(0.4),
            iou_match_threshold: T::lit(0.5),
            track_buffer: 30,
            ema_momentum: T::lit(0.9),
            gate_chi2: T::lit(CHI2_INV_95[3]),
            use_reid: true,
            use_iou: true,
            use_kalman: true,
        }
    }
}

impl<T: Scalar> TrackerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: T, lo: f64, hi: f64| v >= T::lit(lo) && v <= T::lit(hi);
        let checks = [
            (
                "det_threshold",
                in_range(self.det_threshold, 0.0, 1.0),
                "[0, 1]",
            ),
            (
                "emb_match_threshold",
                in_range(self.emb_match_threshold, 0.0, 2.0),
                "[0, 2]",
            ),
            (
                "iou_match_threshold",
                in_range(self.iou_match_threshold, 0.0, 1.0),
                "[0, 1]",
            ),
            (
                "ema_momentum",
                in_range(self.ema_momentum, 0.0, 1.0),
                "[0, 1]",
            ),
            ("gate_chi2", self.gate_chi2 > T::zero(), "> 0"),
        ];
        for (key, ok, range) in checks {
            if !ok {
                return Err(Error::Config {
                    key: key.into(),
                    message: format!("must be in {range}"),
                });
            }
        }
        if !self.use_reid && !self.use_iou {
            return Err(Error::Config {
                key: "use_reid".into(),
                message: "at least one of use_reid / use_iou must be enabled".into(),
            });
        }
        Ok(())
    }
}

/// One active track reported for a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput<T> {
    pub track_id: u64,
    pub bbox: BBox<T>,
    pub score: T,
}

/// `1 − ⟨e_track, e_det⟩` for unit embeddings.
pub fn cosine_distance_matrix<T: Scalar>(
    tracks: &[&Track<T>],
    dets: &[Detection<T>],
) -> Result<Vec<Vec<T>>> {
    let det_embs = dets
        .iter()
        .enumerate()
        .map(|(j, d)| {
            d.embedding
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("detection {j} has no embedding")))
        })
        .collect::<Result<Vec<_>>>()?;
    tracks
        .iter()
        .map(|t| {
            let e = t
                .smooth_emb
                .as_deref()
                .ok_or_else(|| Error::invalid(format!("track {} has no embedding", t.track_id)))?;
            det_embs
                .iter()
                .map(|d| {
                    if d.len() != e.len() {
                        return Err(Error::shape(format!(
                            "embedding dim {} vs track dim {}",
                            d.len(),
                            e.len()
                        )));
                    }
                    let dot: T = e.iter().zip(d.iter()).map(|(&a, &b)| a * b).sum();
                    Ok((T::one() - dot).max(T::zero()).min(T::lit(2.0)))
                })
                .collect()
        })
        .collect()
}

/// `1 − IoU` between every pair.
pub fn iou_distance_matrix<T: Scalar>(a: &[BBox<T>], b: &[BBox<T>]) -> Vec<Vec<T>> {
    a.iter()
        .map(|x| b.iter().map(|y| T::one() - iou(x, y)).collect())
        .collect()
}

/// Online tracker state for one sequence.
#[derive(Debug, Clone)]
pub struct Tracker<T> {
    cfg: TrackerConfig<T>,
    kf: KalmanFilter<T>,
    tracks: Vec<Track<T>>,
    next_id: u64,
    last_frame: Option<u64>,
    removed: u64,
}

impl<T: Scalar> Tracker<T> {
    pub fn new(cfg: TrackerConfig<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            kf: KalmanFilter::default(),
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
            removed: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig<T> {
        &self.cfg
    }

    /// Active and lost tracks.
    pub fn tracks(&self) -> &[Track<T>] {
        &self.tracks
    }

    pub fn removed_count(&self) -> u64 {
        self.removed
    }

    /// Consumes one frame of detections and returns the active tracks, ordered by id.
    pub fn step(&mut self, frame: u64, dets: &[Detection<T>]) -> Result<Vec<TrackOutput<T>>> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::invalid(format!(
                    "frame {frame} does not follow frame {last}"
                )));
            }
        }
        if self.cfg.use_reid {
            if let Some(j) = dets.iter().position(|d| d.embedding.is_none()) {
                return Err(Error::invalid(format!("detection {j} has no embedding")));
            }
        }
        self.last_frame = Some(frame);

        if self.cfg.use_kalman {
            for t in &mut self.tracks {
                t.kf = t.kf.as_ref().map(|s| self.kf.predict(s));
            }
        }

        let mut track_left: Vec<usize> = (0..self.tracks.len()).collect();
        let mut det_left: Vec<usize> = (0..dets.len()).collect();
        let mut matches: Vec<(usize, usize)> = Vec::new();

        if self.cfg.use_reid && !track_left.is_empty() && !det_left.is_empty() {
            let pool: Vec<&Track<T>> = track_left.iter().map(|&i| &self.tracks[i]).collect();
            let mut cost = cosine_distance_matrix(&pool, dets)?;
            if self.cfg.use_kalman {
                let boxes: Vec<BBox<T>> = dets.iter().map(|d| d.bbox).collect();
                for (row, t) in cost.iter_mut().zip(&pool) {
                    if let Some(s) = &t.kf {
                        let gate = self.kf.gating_distance(s, &boxes)?;
                        for (c, g) in row.iter_mut().zip(gate) {
                            if g > self.cfg.gate_chi2 {
                                *c = T::infinity();
                            }
                        }
                    }
                }
            }
            let a = hungarian(&cost, self.cfg.emb_match_threshold)?;
            matches.extend(a.matches.iter().map(|&(r, c)| (track_left[r], det_left[c])));
            track_left = a.unmatched_rows.iter().map(|&r| track_left[r]).collect();
            det_left = a.unmatched_cols.iter().map(|&c| det_left[c]).collect();
        }

        if self.cfg.use_iou {
            // Lost tracks only get an overlap chance when there was no appearance stage.
            let (candidates, held): (Vec<usize>, Vec<usize>) = track_left.iter().partition(|&&i| {
                !self.cfg.use_reid || self.tracks[i].status == TrackStatus::Active
            });
            if !candidates.is_empty() && !det_left.is_empty() {
                let tb: Vec<BBox<T>> = candidates
                    .iter()
                    .map(|&i| self.tracks[i].predicted_box())
                    .collect();
                let db: Vec<BBox<T>> = det_left.iter().map(|&j| dets[j].bbox).collect();
                let cost = iou_distance_matrix(&tb, &db);
                let a = hungarian(&cost, self.cfg.iou_match_threshold)?;
                matches.extend(a.matches.iter().map(|&(r, c)| (candidates[r], det_left[c])));
                track_left = held
                    .into_iter()
                    .chain(a.unmatched_rows.iter().map(|&r| candidates[r]))
                    .collect();
                det_left = a.unmatched_cols.iter().map(|&c| det_left[c]).collect();
            }
        }

        for &(ti, dj) in &matches {
            self.apply_match(ti, &dets[dj])?;
        }

        for &ti in &track_left {
            let t = &mut self.tracks[ti];
            t.frames_since_update += 1;
            t.status = if t.frames_since_update > self.cfg.track_buffer {
                TrackStatus::Removed
            } else {
                TrackStatus::Lost
            };
        }
        let before = self.tracks.len();
        self.tracks.retain(|t| t.status != TrackStatus::Removed);
        self.removed += (before - self.tracks.len()) as u64;

        det_left.sort_unstable();
        for dj in det_left {
            let d = &dets[dj];
            if d.score > self.cfg.det_threshold {
                self.start_track(frame, d)?;
            }
        }

        let mut out: Vec<TrackOutput<T>> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
            .map(|t| TrackOutput {
                track_id: t.track_id,
                bbox: t.last_box,
                score: t.score,
            })
            .collect();
        out.sort_by_key(|o| o.track_id);
        Ok(out)
    }

    fn apply_match(&mut self, ti: usize, det: &Detection<T>) -> Result<()> {
        let m = self.cfg.ema_momentum;
        let use_kalman = self.cfg.use_kalman;
        let kf = self.kf;
        let t = &mut self.tracks[ti];
        if use_kalman {
            t.kf = Some(match &t.kf {
                Some(s) => kf.update(s, &det.bbox)?,
                None => kf.initiate(&det.bbox)?,
            });
        }
        if let Some(f) = &det.embedding {
            t.smooth_emb = match t.smooth_emb.take() {
                Some(e) if e.len() == f.len() => {
                    let mixed: Vec<T> = e
                        .iter()
                        .zip(f)
                        .map(|(&a, &b)| m * a + (T::one() - m) * b)
                        .collect();
                    // m·e + (1−m)·f can only vanish for antipodal inputs at m = ½
                    Some(normalize(mixed).unwrap_or_else(|| f.clone()))
                }
                _ => Some(f.clone()),
            };
        }
        t.last_box = det.bbox;
        t.score = det.score;
        t.frames_since_update = 0;
        t.status = TrackStatus::Active;
        Ok(())
    }

    fn start_track(&mut self, frame: u64, det: &Detection<T>) -> Result<()> {
        let kf = if self.cfg.use_kalman {
            Some(self.kf.initiate(&det.bbox)?)
        } else {
            None
        };
        self.tracks.push(Track {
            track_id: self.next_id,
            kf,
            smooth_emb: det.embedding.clone(),
            status: TrackStatus::Active,
            last_box: det.bbox,
            score: det.score,
            frames_since_update: 0,
            start_frame: frame,
        });
        self.next_id += 1;
        Ok(())
    }
}
