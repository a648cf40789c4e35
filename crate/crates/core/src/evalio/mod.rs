//! Evaluation metrics, PGM image I/O and the synthetic SAR pair generator.

mod metrics;
mod pgm;
mod synth;

pub use metrics::{confusion, metrics, BinaryGrid, Confusion, MetricsReport};
pub use pgm::{parse_pgm, read_pgm, write_binary_pgm, write_pgm, encode_pgm};
pub use synth::{synth_pair, Ellipse, SynthConfig, SynthPair};
