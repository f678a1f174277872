//! Anchor-free tracking-by-detection toolkit.

pub mod assignment;
pub mod config;
pub mod decode;
pub mod encoding;
pub mod error;
pub mod ften;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod mot_io;
pub mod motion;
pub mod scalar;
pub mod sim;
pub mod tensor;
pub mod tracker;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{iou, BBox, GridSpec, Tensor2D, Tensor3D};

pub use assignment::{hungarian, solve_assignment, Assignment};
pub use decode::{decode, DecodeConfig, Detection, Sampling};
pub use encoding::{encode_targets, GtObject, SigmaParams, TargetMaps};
pub use metrics::{clear_mot, detection_ap, evaluate, idf1, tpr_at_far, FrameBoxes, MetricsReport};
pub use motion::{KalmanFilter, KalmanState};
pub use tracker::{Track, TrackOutput, Tracker, TrackerConfig};

pub type BBoxF32 = BBox<f32>;
pub type BBoxF64 = BBox<f64>;
pub type Tensor2F32 = Tensor2D<f32>;
pub type Tensor2F64 = Tensor2D<f64>;
pub type Tensor3F32 = Tensor3D<f32>;
pub type Tensor3F64 = Tensor3D<f64>;
pub type DetectionF32 = Detection<f32>;
pub type DetectionF64 = Detection<f64>;
pub type TargetMapsF32 = TargetMaps<f32>;
pub type TargetMapsF64 = TargetMaps<f64>;
pub type KalmanFilterF32 = KalmanFilter<f32>;
pub type KalmanFilterF64 = KalmanFilter<f64>;
pub type TrackerF32 = Tracker<f32>;
pub type TrackerF64 = Tracker<f64>;
pub type TrackerConfigF32 = TrackerConfig<f32>;
pub type TrackerConfigF64 = TrackerConfig<f64>;
