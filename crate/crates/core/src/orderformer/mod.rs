//! Column reading-order model and its page pipeline.

mod model;
mod pipeline;
mod train;

pub use model::{decode_order, OrderCache, OrderModel, OrderModelConfig, MODEL_TYPE};
pub use pipeline::{evaluate_order, predict_reading_order, rule_baseline, LayoutScore, OrderEvalReport, PageOrder};
pub use train::{
    checkpoint_final_loss, load_order_model, order_sample, save_order_model, train, EpochStats, OrderSample,
    OrderTrainConfig, TrainOutcome,
};
