//! Vertical-slash sparse attention, a simulated sparse ring attention with
//! flat and hierarchical rings, sequence partition layouts, load-balance
//! metrics, a closed-form latency model and RoPE score checks.

pub mod attention;
pub mod balance;
pub mod error;
pub mod layout;
pub mod pattern;
pub mod perf;
pub mod ring;
pub mod rope;
pub mod rope_verify;
pub mod sparse;
pub mod synth;

pub use attention::{
    dense_attention_backward, dense_attention_forward, merge_out_and_lse, AttnGrads, AttnInputs, AttnOutput, Mask,
};
pub use error::{Error, Result};
pub use layout::{convert_index, Layout, LayoutKind, LocalIndexPlan};
pub use pattern::{estimate_pattern, sparseformat, PatternConfig, SparseIndex};
pub use ring::{hierarchical_ring_attention, ring_attention, ring_backward, RingConfig, RingSchedule, StepLog};
pub use sparse::{sparse_backward, sparse_forward, SparseExecStats};
