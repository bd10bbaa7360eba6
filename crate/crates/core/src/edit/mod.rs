//! Editing numerics at toy scale: low-rank adapter forward pass, Jacobian
//! edit directions, and key/value-shared attention.

pub mod attention;
pub mod jacobian;
pub mod lora;
pub mod svd;
pub mod toy;

pub use attention::{attention_weights, kv_shared_attention, AttentionTensors};
pub use jacobian::{jacobian_fd, jacobian_fd_parallel, DEFAULT_FD_EPS};
pub use lora::{lora_forward, LoraLayer, DEFAULT_GAMMA, DEFAULT_RANK};
pub use svd::{
    apply_h_edit, jacobi_svd, randomized_svd, top_directions_svd, top_directions_svd_with, EditDirectionSet, Svd, SvdOptions,
    DEFAULT_SVD_BUDGET,
};
pub use toy::{run_probe, ProbeResult, ProbeSpec, ToyNetwork};
