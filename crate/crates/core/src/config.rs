//! Flat `key = value` configuration files.
//!
//! `#` starts a comment. Every key overrides one field of the tracker, simulator or
//! decoder defaults; unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::decode::{DecodeConfig, Sampling};
use crate::error::{Error, Result};
use crate::sim::{Motion, Occlusion, SimConfig};
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub tracker: TrackerConfig<f64>,
    pub sim: SimConfig,
    pub decode: DecodeConfig<f64>,
}

/// Every recognized key.
pub const KEYS: &[&str] = &[
    "det_threshold",
    "emb_match_threshold",
    "iou_match_threshold",
    "track_buffer",
    "ema_momentum",
    "gate_chi2",
    "use_reid",
    "use_iou",
    "use_kalman",
    "seed",
    "frames",
    "num_targets",
    "image_w",
    "image_h",
    "frame_rate",
    "motion",
    "min_height",
    "max_height",
    "aspect",
    "max_speed",
    "det_dropout_prob",
    "fp_rate",
    "box_noise_std",
    "emb_dim",
    "emb_noise_std",
    "occlusions",
    "decode_threshold",
    "top_k",
    "sampling",
];

fn typed<V: FromStr>(key: &str, value: &str, what: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Config {
        key: key.into(),
        message: format!("expected {what}, got '{value}'"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            message: format!("expected a boolean, got '{value}'"),
        }),
    }
}

fn parse_occlusions(key: &str, value: &str) -> Result<Vec<Occlusion>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| Error::Config {
                key: key.into(),
                message: format!("expected target:start-end, got '{s}'"),
            })
        })
        .collect()
}

impl Config {
    /// Overrides one field.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (t, s, d) = (&mut self.tracker, &mut self.sim, &mut self.decode);
        let real = "a real number";
        let int = "a non-negative integer";
        match key {
            "det_threshold" => t.det_threshold = typed(key, value, real)?,
            "emb_match_threshold" => t.emb_match_threshold = typed(key, value, real)?,
            "iou_match_threshold" => t.iou_match_threshold = typed(key, value, real)?,
            "track_buffer" => t.track_buffer = typed(key, value, int)?,
            "ema_momentum" => t.ema_momentum = typed(key, value, real)?,
            "gate_chi2" => t.gate_chi2 = typed(key, value, real)?,
            "use_reid" => t.use_reid = parse_bool(key, value)?,
            "use_iou" => t.use_iou = parse_bool(key, value)?,
            "use_kalman" => t.use_kalman = parse_bool(key, value)?,
            "seed" => s.seed = typed(key, value, int)?,
            "frames" => s.frames = typed(key, value, int)?,
            "num_targets" => s.num_targets = typed(key, value, int)?,
            "image_w" => s.image_w = typed(key, value, int)?,
            "image_h" => s.image_h = typed(key, value, int)?,
            "frame_rate" => s.frame_rate = typed(key, value, int)?,
            "motion" => s.motion = typed::<Motion>(key, value, "cv or crossing")?,
            "min_height" => s.min_height = typed(key, value, real)?,
            "max_height" => s.max_height = typed(key, value, real)?,
            "aspect" => s.aspect = typed(key, value, real)?,
            "max_speed" => s.max_speed = typed(key, value, real)?,
            "det_dropout_prob" => s.det_dropout_prob = typed(key, value, real)?,
            "fp_rate" => s.fp_rate = typed(key, value, real)?,
            "box_noise_std" => s.box_noise_std = typed(key, value, real)?,
            "emb_dim" => s.emb_dim = typed(key, value, int)?,
            "emb_noise_std" => s.emb_noise_std = typed(key, value, real)?,
            "occlusions" => s.occlusions = parse_occlusions(key, value)?,
            "decode_threshold" => d.threshold = typed(key, value, real)?,
            "top_k" => d.top_k = typed(key, value, int)?,
            "sampling" => d.sampling = typed::<Sampling>(key, value, "center or center-bi")?,
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    /// Current value of every key, in the same text form [`Config::set`] accepts.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let (t, s, d) = (&self.tracker, &self.sim, &self.decode);
        let occ: Vec<String> = s.occlusions.iter().map(ToString::to_string).collect();
        let pairs: Vec<(&str, String)> = vec![
            ("det_threshold", t.det_threshold.to_string()),
            ("emb_match_threshold", t.emb_match_threshold.to_string()),
            ("iou_match_threshold", t.iou_match_threshold.to_string()),
            ("track_buffer", t.track_buffer.to_string()),
            ("ema_momentum", t.ema_momentum.to_string()),
            ("gate_chi2", t.gate_chi2.to_string()),
            ("use_reid", t.use_reid.to_string()),
            ("use_iou", t.use_iou.to_string()),
            ("use_kalman", t.use_kalman.to_string()),
            ("seed", s.seed.to_string()),
            ("frames", s.frames.to_string()),
            ("num_targets", s.num_targets.to_string()),
            ("image_w", s.image_w.to_string()),
            ("image_h", s.image_h.to_string()),
            ("frame_rate", s.frame_rate.to_string()),
            ("motion", s.motion.to_string()),
            ("min_height", s.min_height.to_string()),
            ("max_height", s.max_height.to_string()),
            ("aspect", s.aspect.to_string()),
            ("max_speed", s.max_speed.to_string()),
            ("det_dropout_prob", s.det_dropout_prob.to_string()),
            ("fp_rate", s.fp_rate.to_string()),
            ("box_noise_std", s.box_noise_std.to_string()),
            ("emb_dim", s.emb_dim.to_string()),
            ("emb_noise_std", s.emb_noise_std.to_string()),
            ("occlusions", occ.join(",")),
            ("decode_threshold", d.threshold.to_string()),
            ("top_k", d.top_k.to_string()),
            ("sampling", d.sampling.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Renders a file that [`parse_config`] reads back to the same values.
    pub fn render(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Applies the file's keys over the defaults; `path` is only used in error messages.
pub fn parse_config(text: &str, path: &Path) -> Result<Config> {
    let mut cfg = Config::default();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, got '{line}'"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        if let Some(prev) = seen.insert(key.to_string(), i + 1) {
            return Err(Error::Config {
                key: key.into(),
                message: format!("repeated on line {} (first on line {prev})", i + 1),
            });
        }
        cfg.set(key, value)?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config> {
    parse_config(&std::fs::read_to_string(path)?, path)
}
