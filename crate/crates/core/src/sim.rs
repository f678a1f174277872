//! Deterministic synthetic sequences: ground truth, noisy detections and
//! identity-conditioned embeddings.
//!
//! All randomness comes from ChaCha8 seeded with [`SimConfig::seed`]; each purpose
//! (anchors, trajectories, detections) draws from its own stream so changing one knob
//! leaves the other draws untouched.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::decode::normalize;
use crate::encoding::{encode_targets, EncodeReport, GtObject, SigmaParams};
use crate::error::{Error, Result};
use crate::tensor::{BBox, GridSpec, Tensor2D, Tensor3D};

const STREAM_ANCHORS: u64 = 1;
const STREAM_MOTION: u64 = 2;
const STREAM_DETECTIONS: u64 = 3;

/// Maximum pairwise cosine between identity anchors.
pub const MAX_ANCHOR_COSINE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    /// Random constant velocities, reflecting at the image border.
    ConstantVelocity,
    /// Targets in pairs on shared horizontal lanes that swap sides mid-sequence. Heights
    /// are capped so the lanes fit the image.
    Crossing,
}

impl std::str::FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cv" | "constant-velocity" => Ok(Motion::ConstantVelocity),
            "crossing" => Ok(Motion::Crossing),
            _ => Err(Error::invalid(format!(
                "unknown motion '{s}' (expected cv or crossing)"
            ))),
        }
    }
}

impl std::fmt::Display for Motion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Motion::ConstantVelocity => "cv",
            Motion::Crossing => "crossing",
        })
    }
}

/// Frames `start..=end` (1-based) in which a target produces no detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occlusion {
    pub target: usize,
    pub start: u64,
    pub end: u64,
}

impl std::str::FromStr for Occlusion {
    type Err = Error;

    /// `target:start-end`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("occlusion '{s}' is not target:start-end"));
        let (t, range) = s.trim().split_once(':').ok_or_else(bad)?;
        let (a, b) = range.split_once('-').ok_or_else(bad)?;
        let occ = Occlusion {
            target: t.trim().parse().map_err(|_| bad())?,
            start: a.trim().parse().map_err(|_| bad())?,
            end: b.trim().parse().map_err(|_| bad())?,
        };
        if occ.start == 0 || occ.end < occ.start {
            return Err(bad());
        }
        Ok(occ)
    }
}

impl std::fmt::Display for Occlusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}-{}", self.target, self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    pub frames: u64,
    pub num_targets: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub frame_rate: u32,
    pub motion: Motion,
    pub min_height: f64,
    pub max_height: f64,
    /// Width / height of every target.
    pub aspect: f64,
    /// Largest speed component in pixels per frame.
    pub max_speed: f64,
    pub det_dropout_prob: f64,
    /// Mean false positives per frame.
    pub fp_rate: f64,
    /// Standard deviation of per-corner box noise in pixels.
    pub box_noise_std: f64,
    pub emb_dim: usize,
    /// Expected norm of the noise added to an anchor; each component gets
    /// `emb_noise_std / sqrt(emb_dim)`.
    pub emb_noise_std: f64,
    pub occlusions: Vec<Occlusion>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 100,
            num_targets: 10,
            image_w: 1088,
            image_h: 608,
            frame_rate: 30,
            motion: Motion::ConstantVelocity,
            min_height: 60.0,
            max_height: 140.0,
            aspect: 0.41,
            max_speed: 4.0,
            det_dropout_prob: 0.0,
            fp_rate: 0.0,
            box_noise_std: 0.0,
            emb_dim: 64,
            emb_noise_std: 0.0,
            occlusions: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, message: String| Error::Config {
            key: key.into(),
            message,
        };
        if self.emb_dim < 2 {
            return Err(cfg(
                "emb_dim",
                format!("must be at least 2, got {}", self.emb_dim),
            ));
        }
        if self.frames == 0 {
            return Err(cfg("frames", "must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.det_dropout_prob) {
            return Err(cfg(
                "det_dropout_prob",
                format!("must be in [0, 1), got {}", self.det_dropout_prob),
            ));
        }
        for (key, v) in [
            ("fp_rate", self.fp_rate),
            ("box_noise_std", self.box_noise_std),
            ("emb_noise_std", self.emb_noise_std),
            ("max_speed", self.max_speed),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(cfg(
                    key,
                    format!("must be finite and non-negative, got {v}"),
                ));
            }
        }
        if !(self.aspect > 0.0 && self.min_height > 0.0 && self.min_height <= self.max_height) {
            return Err(cfg(
                "min_height",
                "need 0 < min_height <= max_height and aspect > 0".into(),
            ));
        }
        if self.max_height > self.image_h as f64
            || self.max_height * self.aspect > self.image_w as f64
        {
            return Err(cfg(
                "max_height",
                format!(
                    "targets do not fit a {}x{} image",
                    self.image_w, self.image_h
                ),
            ));
        }
        if self.motion == Motion::Crossing {
            let lanes = self.num_targets.div_ceil(2).max(1);
            if self.min_height * 1.1 > self.image_h as f64 / lanes as f64 {
                return Err(cfg(
                    "max_height",
                    format!("{lanes} crossing lanes do not fit the image height"),
                ));
            }
        }
        if let Some(o) = self
            .occlusions
            .iter()
            .find(|o| o.target >= self.num_targets)
        {
            return Err(cfg(
                "occlusions",
                format!("target {} out of range", o.target),
            ));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn occluded(&self, target: usize, frame: u64) -> bool {
        self.occlusions
            .iter()
            .any(|o| o.target == target && (o.start..=o.end).contains(&frame))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDetection {
    pub bbox: BBox<f64>,
    pub score: f64,
    pub embedding: Vec<f64>,
    /// Target index for true detections, `None` for false positives.
    pub target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    /// 1-based.
    pub frame: u64,
    /// `(id, box)` with ids `target + 1`.
    pub gt: Vec<(i64, BBox<f64>)>,
    pub detections: Vec<SimDetection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub config: SimConfig,
    pub anchors: Vec<Vec<f64>>,
    pub frames: Vec<SimFrame>,
}

impl Sequence {
    pub fn frame(&self, frame: u64) -> Option<&SimFrame> {
        frame
            .checked_sub(1)
            .and_then(|i| self.frames.get(i as usize))
    }
}

/// Unit vectors with pairwise cosine at most [`MAX_ANCHOR_COSINE`].
///
/// Up to `dim` anchors are orthonormalized by Gram-Schmidt; beyond that, random
/// directions are redrawn until they clear the bound.
pub fn identity_anchors(count: usize, dim: usize, rng: &mut impl Rng) -> Result<Vec<Vec<f64>>> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(count);
    const MAX_ATTEMPTS: usize = 10_000;
    while anchors.len() < count {
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            let mut v: Vec<f64> = (0..dim).map(|_| normal.sample(rng)).collect();
            if anchors.len() < dim {
                for a in &anchors {
                    let d: f64 = v.iter().zip(a).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(a).for_each(|(x, y)| *x -= d * y);
                }
            }
            let Some(v) = normalize(v) else { continue };
            let ok = anchors
                .iter()
                .all(|a| a.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() <= MAX_ANCHOR_COSINE);
            if ok {
                found = Some(v);
                break;
            }
        }
        match found {
            Some(v) => anchors.push(v),
            None => {
                return Err(Error::Config {
                    key: "emb_dim".into(),
                    message: format!("cannot separate {count} anchors in {dim} dimensions"),
                })
            }
        }
    }
    Ok(anchors)
}

struct Trajectory {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
}

fn reflect(pos: &mut f64, vel: &mut f64, hi: f64) {
    if *pos < 0.0 {
        *pos = -*pos;
        *vel = -*vel;
    }
    if *pos > hi {
        *pos = 2.0 * hi - *pos;
        *vel = -*vel;
    }
    *pos = pos.clamp(0.0, hi);
}

fn init_trajectories(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Trajectory> {
    let (iw, ih) = (cfg.image_w as f64, cfg.image_h as f64);
    let random_cv = |rng: &mut ChaCha8Rng| {
        let h = rng.random_range(cfg.min_height..=cfg.max_height);
        let w = h * cfg.aspect;
        Trajectory {
            x: rng.random_range(0.0..=iw - w),
            y: rng.random_range(0.0..=ih - h),
            w,
            h,
            vx: rng.random_range(-cfg.max_speed..=cfg.max_speed),
            vy: rng.random_range(-cfg.max_speed..=cfg.max_speed),
        }
    };
    match cfg.motion {
        Motion::ConstantVelocity => (0..cfg.num_targets).map(|_| random_cv(rng)).collect(),
        Motion::Crossing => {
            let lanes = cfg.num_targets.div_ceil(2).max(1);
            let lane_h = ih / lanes as f64;
            let steps = (cfg.frames.max(2) - 1) as f64;
            let mut out = Vec::with_capacity(cfg.num_targets);
            let max_h = cfg.max_height.min(lane_h / 1.1);
            for lane in 0..cfg.num_targets / 2 {
                let h = rng.random_range(cfg.min_height..=max_h);
                let w = h * cfg.aspect;
                let dy = 0.05 * h;
                let y = lane as f64 * lane_h + (lane_h - h - dy) / 2.0;
                let margin = rng.random_range(0.0..=0.1 * (iw - w));
                let (left, right) = (margin, iw - w - margin);
                let v = (right - left) / steps;
                out.push(Trajectory {
                    x: left,
                    y,
                    w,
                    h,
                    vx: v,
                    vy: 0.0,
                });
                out.push(Trajectory {
                    x: right,
                    y: y + dy,
                    w,
                    h,
                    vx: -v,
                    vy: 0.0,
                });
            }
            if cfg.num_targets % 2 == 1 {
                out.push(random_cv(rng));
            }
            out
        }
    }
}

/// Generates a full sequence.
pub fn generate(cfg: &SimConfig) -> Result<Sequence> {
    cfg.validate()?;
    let anchors = identity_anchors(cfg.num_targets, cfg.emb_dim, &mut cfg.rng(STREAM_ANCHORS))?;
    let mut motion_rng = cfg.rng(STREAM_MOTION);
    let mut det_rng = cfg.rng(STREAM_DETECTIONS);
    let mut traj = init_trajectories(cfg, &mut motion_rng);

    let (iw, ih) = (cfg.image_w as f64, cfg.image_h as f64);
    let box_noise =
        Normal::new(0.0, cfg.box_noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let emb_noise = Normal::new(0.0, cfg.emb_noise_std / (cfg.emb_dim as f64).sqrt())
        .map_err(|e| Error::invalid(e.to_string()))?;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let fp_count = if cfg.fp_rate > 0.0 {
        Some(Poisson::new(cfg.fp_rate).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    let mut frames = Vec::with_capacity(cfg.frames as usize);
    for frame in 1..=cfg.frames {
        if frame > 1 {
            for t in &mut traj {
                t.x += t.vx;
                t.y += t.vy;
                reflect(&mut t.x, &mut t.vx, iw - t.w);
                reflect(&mut t.y, &mut t.vy, ih - t.h);
            }
        }
        let gt: Vec<(i64, BBox<f64>)> = traj
            .iter()
            .enumerate()
            .map(|(k, t)| Ok((k as i64 + 1, BBox::from_tlwh(t.x, t.y, t.w, t.h)?)))
            .collect::<Result<_>>()?;

        let mut detections = Vec::new();
        for (k, (_, b)) in gt.iter().enumerate() {
            // draws happen for every target so occlusions do not shift later samples
            let dropped = det_rng.random::<f64>() < cfg.det_dropout_prob;
            let score = det_rng.random_range(0.5..1.0);
            let mut c = [b.x1, b.y1, b.x2, b.y2];
            if cfg.box_noise_std > 0.0 {
                c.iter_mut()
                    .for_each(|v| *v += box_noise.sample(&mut det_rng));
            }
            let emb = if cfg.emb_noise_std > 0.0 {
                let noisy = anchors[k]
                    .iter()
                    .map(|v| v + emb_noise.sample(&mut det_rng))
                    .collect();
                normalize(noisy).unwrap_or_else(|| anchors[k].clone())
            } else {
                anchors[k].clone()
            };
            if dropped || cfg.occluded(k, frame) {
                continue;
            }
            let x1 = c[0].clamp(0.0, iw - 1.0);
            let y1 = c[1].clamp(0.0, ih - 1.0);
            let bbox = BBox::new(x1, y1, c[2].clamp(x1 + 1.0, iw), c[3].clamp(y1 + 1.0, ih))?;
            detections.push(SimDetection {
                bbox,
                score,
                embedding: emb,
                target: Some(k),
            });
        }
        let n_fp = fp_count
            .as_ref()
            .map_or(0, |p| p.sample(&mut det_rng) as usize);
        for _ in 0..n_fp {
            let h = det_rng.random_range(cfg.min_height..=cfg.max_height);
            let w = h * cfg.aspect;
            let x = det_rng.random_range(0.0..=iw - w);
            let y = det_rng.random_range(0.0..=ih - h);
            let score = det_rng.random_range(0.3..0.8);
            let emb: Vec<f64> = (0..cfg.emb_dim)
                .map(|_| unit.sample(&mut det_rng))
                .collect();
            detections.push(SimDetection {
                bbox: BBox::from_tlwh(x, y, w, h)?,
                score,
                embedding: normalize(emb).unwrap_or_else(|| anchors[0].clone()),
                target: None,
            });
        }
        detections.shuffle(&mut det_rng);
        frames.push(SimFrame {
            frame,
            gt,
            detections,
        });
    }
    Ok(Sequence {
        config: cfg.clone(),
        anchors,
        frames,
    })
}

/// Maps that decode back to one frame's detections.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMaps {
    pub heatmap: Tensor2D<f64>,
    pub offsets: Tensor3D<f64>,
    pub sizes: Tensor3D<f64>,
    pub embeddings: Tensor3D<f64>,
    pub report: EncodeReport,
}

/// Encodes the frame's detections as targets and plants each detection's embedding in
/// the 3×3 cells around its center (center cells written last).
pub fn generate_maps(seq: &Sequence, frame: u64, grid: &GridSpec) -> Result<SimMaps> {
    let f = seq
        .frame(frame)
        .ok_or_else(|| Error::invalid(format!("frame {frame} outside 1..={}", seq.frames.len())))?;
    let objects: Vec<GtObject<f64>> = f
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| GtObject {
            bbox: d.bbox,
            identity: i,
        })
        .collect();
    let (maps, report) = encode_targets(
        &objects,
        grid,
        objects.len().max(1),
        &SigmaParams::default(),
    )?;
    let (fh, fw) = (grid.feat_h(), grid.feat_w());
    let dim = seq.config.emb_dim;
    let mut emb = Tensor3D::zeros(dim, fh, fw)?;
    let centers = maps.centers();
    let mut plant = |x: usize, y: usize, v: &[f64]| {
        for (c, &val) in v.iter().enumerate() {
            emb.set(c, y, x, val);
        }
    };
    for c in &centers {
        let v = &f.detections[c.identity].embedding;
        for y in c.y.saturating_sub(1)..=(c.y + 1).min(fh - 1) {
            for x in c.x.saturating_sub(1)..=(c.x + 1).min(fw - 1) {
                plant(x, y, v);
            }
        }
    }
    for c in &centers {
        plant(c.x, c.y, &f.detections[c.identity].embedding);
    }
    Ok(SimMaps {
        heatmap: maps.heatmap,
        offsets: maps.offsets,
        sizes: maps.sizes,
        embeddings: emb,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_detections_equal_gt() {
        let seq = generate(&SimConfig::default()).unwrap();
        assert_eq!(seq.frames.len(), 100);
        for f in &seq.frames {
            assert_eq!(f.detections.len(), 10);
            for d in &f.detections {
                let k = d.target.unwrap();
                assert_eq!(d.bbox, f.gt[k].1);
                assert_eq!(d.embedding, seq.anchors[k]);
            }
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = SimConfig {
            seed: 11,
            box_noise_std: 2.0,
            emb_noise_std: 0.2,
            fp_rate: 0.5,
            det_dropout_prob: 0.1,
            ..SimConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = SimConfig {
            seed: 12,
            ..cfg.clone()
        };
        assert_ne!(generate(&cfg).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn anchors_are_separated() {
        for (n, d) in [(10, 64), (40, 16), (3, 2)] {
            let a = identity_anchors(n, d, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            for i in 0..n {
                assert!((a[i].iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
                for j in 0..i {
                    let c: f64 = a[i].iter().zip(&a[j]).map(|(x, y)| x * y).sum();
                    assert!(c <= MAX_ANCHOR_COSINE + 1e-12, "{n} {d}: {c}");
                }
            }
        }
        assert!(identity_anchors(10, 2, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }

    #[test]
    fn emb_dim_below_two_rejected() {
        let cfg = SimConfig {
            emb_dim: 1,
            ..SimConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Config { key, .. }) if key == "emb_dim"));
    }

    #[test]
    fn targets_stay_inside() {
        let cfg = SimConfig {
            frames: 500,
            max_speed: 20.0,
            ..SimConfig::default()
        };
        for f in generate(&cfg).unwrap().frames {
            for (_, b) in f.gt {
                assert!(b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= 1088.0 && b.y2 <= 608.0);
            }
        }
    }

    #[test]
    fn occlusion_and_dropout_remove_detections() {
        let cfg = SimConfig {
            occlusions: vec![Occlusion {
                target: 2,
                start: 5,
                end: 9,
            }],
            ..SimConfig::default()
        };
        let seq = generate(&cfg).unwrap();
        for f in &seq.frames {
            let has = f.detections.iter().any(|d| d.target == Some(2));
            assert_eq!(has, !(5..=9).contains(&f.frame));
        }
        let cfg = SimConfig {
            det_dropout_prob: 0.5,
            ..SimConfig::default()
        };
        let n: usize = generate(&cfg)
            .unwrap()
            .frames
            .iter()
            .map(|f| f.detections.len())
            .sum();
        assert!(n > 400 && n < 600, "{n}");
    }

    #[test]
    fn occlusion_parses() {
        let o: Occlusion = "3:10-20".parse().unwrap();
        assert_eq!(
            o,
            Occlusion {
                target: 3,
                start: 10,
                end: 20
            }
        );
        assert_eq!(o.to_string(), "3:10-20");
        assert!("3:20-10".parse::<Occlusion>().is_err());
        assert!("x".parse::<Occlusion>().is_err());
    }

    #[test]
    fn crossing_pairs_overlap_at_midpoint() {
        let cfg = SimConfig {
            motion: Motion::Crossing,
            frames: 101,
            ..SimConfig::default()
        };
        let seq = generate(&cfg).unwrap();
        let mid = seq.frame(51).unwrap();
        let first = seq.frame(1).unwrap();
        let last = seq.frame(101).unwrap();
        for p in 0..5 {
            let (a, b) = (mid.gt[2 * p].1, mid.gt[2 * p + 1].1);
            assert!(crate::tensor::iou(&a, &b) > 0.5);
            // sides swap
            assert!(first.gt[2 * p].1.x1 < first.gt[2 * p + 1].1.x1);
            assert!(last.gt[2 * p].1.x1 > last.gt[2 * p + 1].1.x1 - 1e-9);
        }
    }

    #[test]
    fn empty_frame_maps_are_zero() {
        let cfg = SimConfig {
            num_targets: 0,
            frames: 2,
            ..SimConfig::default()
        };
        let seq = generate(&cfg).unwrap();
        let m = generate_maps(&seq, 1, &GridSpec::default()).unwrap();
        assert!(m.heatmap.data().iter().all(|&v| v == 0.0));
        assert!(generate_maps(&seq, 3, &GridSpec::default()).is_err());
    }
}
