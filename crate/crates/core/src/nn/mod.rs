//! Small deterministic neural-network kernel shared by both models.

pub mod attention;
pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod param;
pub mod tensor;

pub use attention::{scaled_dot_attention, softmax_rows, AttentionCache, MultiHeadAttention};
pub use checkpoint::{
    decode_tensor, load_into, parse_manifest, read_manifest, save_checkpoint, CheckpointManifest, ParamEntry,
};
pub use encoder::{EncoderCache, EncoderLayer};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{layer_norm, sinusoidal_positions, Activation, Block, Dense, FeedForward, LayerNorm};
pub use loss::mse_loss;
pub use optim::{adamw_update, cosine_warm_restarts, AdamW, AdamWConfig, LrSchedule, MomentState};
pub use param::{Module, Param};
pub use tensor::{gemm, matmul, matmul_nt, matmul_tn, Matrix, Scalar, Tensor3};
