//! Block-wise diffusion language model decoding.
//!
//! The generation buffer is split into fixed-size blocks that are decoded
//! left to right. Within a block, each step queries a [`Denoiser`] on a view
//! of the sequence and commits every masked position whose confidence
//! clears a threshold (or the single most confident one). The streaming
//! scheduler adds three things on top of that loop:
//!
//! * the suffix is pruned to a window of nearby blocks plus the final
//!   position, with original position ids kept ([`pruner`]);
//! * the acceptance threshold loosens as the block fills in
//!   ([`scheduler::adaptive_threshold`]);
//! * decoding stops after a block confidently commits `EOS`.
//!
//! Every forward call is charged to a [`CostLedger`], which gives
//! machine-independent throughput proxies for comparing schedulers.

pub mod denoiser;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod presets;
pub mod pruner;
pub mod scheduler;
pub mod sequence;

pub use denoiser::{
    Denoiser, LocalMarkovOracle, OracleScript, Prediction, Predictions, ScriptedOracle,
    ToyTransformer,
};
pub use error::{Error, Result};
pub use metrics::{CostLedger, ThroughputReport};
pub use pruner::{PrefixCache, PrunedIndexSet, SequenceView};
pub use scheduler::{DecodeConfig, DecodeResult, SchedulerKind, StepRecord};
pub use sequence::{BlockPartition, Region, SequenceState, Slot, TokenId};

/// Engine version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
