//! Toy single-object detector over synthetic scenes.

pub mod data;
pub mod metrics;
pub mod model;

pub use data::{generate_dataset, read_dataset, write_dataset, SceneConfig, SceneSample};
pub use metrics::{
    apply_nms, evaluate_metrics, evaluate_model, ground_truths, predict_detections, raw_detections,
    Detection, Metrics,
};
pub use model::{Layer, LayerGrads, ModelConfig, ModelOutput, ModelParams, TapeParams};
