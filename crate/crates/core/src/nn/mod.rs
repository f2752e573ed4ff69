//! Numeric building blocks: parameter storage, layers with hand-written
//! backward passes, the optimizer, checkpoint I/O and gradient verification.

pub mod activation;
pub mod adamw;
pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod norm;
pub mod posenc;
pub mod real;
pub mod store;

pub use activation::{gelu, gelu_backward, sigmoid, softmax_rows, softmax_rows_backward};
pub use adamw::{AdamW, AdamWConfig};
pub use attention::{MhaCache, MultiHeadAttention};
pub use checkpoint::{load_into_store, read_checkpoint, save_checkpoint, CheckpointHeader};
pub use conv::Conv1d;
pub use linear::Linear;
pub use norm::{LayerNorm, LayerNormCache};
pub use posenc::{position_encoding, timestep_sinusoid};
pub use real::Real;
pub use store::{Grads, Mat, ParamId, ParamStore};
