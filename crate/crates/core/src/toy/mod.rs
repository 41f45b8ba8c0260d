//! Desk-scale scale-adaptation experiment: classify the size of a synthetic
//! square with a two-layer DRPN network, then watch how the generated branch
//! weights move as the square grows.

pub mod dataset;
pub mod net;
pub mod probe;
pub mod train;

pub use dataset::{generate_dataset, size_sweep, DatasetConfig, SyntheticScene};
pub use net::{NetInit, ProbeLayer, ToyNet};
pub use probe::{
    format_significant, probe_branch_weights, scale_trend, spearman, write_probe_csv, ProbeRow, ScaleTrend,
    PROBE_CSV_HEADER,
};
pub use train::{accuracy, train, train_with_progress, TrainConfig, TrainReport};
