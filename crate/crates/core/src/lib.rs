//! Graph contrastive learning with dual-view hard-negative mining and
//! partial-dimension mixing (DropMix).
//!
//! The pipeline: a [`graph::Graph`] gives the normalized adjacency `Â`;
//! [`diffusion`] builds the personalized-PageRank operator `S`; a shared GCN
//! [`encoder`] embeds nodes under both operators; [`miner`] ranks each
//! anchor's negatives by hardness in both views and keeps a percentile
//! window; [`synth`] mixes pairs from that window into extra negatives; and
//! [`loss`] scores everything with cross-view InfoNCE. [`train`] runs the
//! loop with Adam and early stopping on a [`probe`] of frozen embeddings, and
//! [`experiment`] wires runs, sweeps and aggregation together.
//!
//! All randomness flows from one seed through the named streams in [`rng`].

// Validation uses `!(x > 0.0)` style checks on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dense;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod graph;
pub mod loss;
pub mod miner;
pub mod probe;
pub mod rng;
pub mod sparse;
pub mod synth;
pub mod train;

pub use dense::DenseMatrix;
pub use diffusion::{compute_ppr, DiffusionConfig, DiffusionMatrix};
pub use encoder::{encode, init_params, EncoderConfig, EncoderParams, ViewEmbeddings};
pub use error::{Error, Result};
pub use experiment::{aggregate, run_experiment, ExperimentConfig, ResultRow, Sweep};
pub use graph::{generate_sbm, load_graph, make_split, Graph, SplitSpec};
pub use loss::{info_nce, LossConfig};
pub use miner::{score_hardness, select_hard_set, HardnessTable, MinerConfig, ViewMode};
pub use probe::{accuracy, fit_probe, ProbeModel};
pub use sparse::CsrMatrix;
pub use synth::{synthesize_bank, MixConfig, MixMode, NegativeBank};
pub use train::{adam_step, train, MixLevel, TrainConfig, TrainLog, TrainerConfigs};
