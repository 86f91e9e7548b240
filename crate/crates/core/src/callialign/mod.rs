//! Resampler that turns a character's visual tokens into three pseudo text
//! embeddings, trained against normalized rows of an embedding table.

pub mod features;
pub mod loss;
pub mod model;
pub mod table;
pub mod train;

pub use features::{synth_char_features, FeatureBank, FeatureConfig};
pub use loss::{crd_loss, l2_loss, ratio_loss, AlignLoss, RatioParams};
pub use model::{load_align_model, AlignModel, AlignModelConfig, ResamplerBlock, MODEL_TYPE};
pub use table::{
    assemble_eit_sample, compression_ratio, nn_decode, normalize_target, EmbedTable, TableConfig, NORM_EPS, PAD,
    QUERIES, TABLE_TYPE,
};
pub use train::{
    evaluate_align, save_align_model, train_align, AlignEval, AlignOutcome, AlignSetup, AlignTrainConfig, EvalPoint,
};
