//! Lattice-based false-trigger mitigation: complementary n-gram language
//! models, a paired-lattice decoder simulator, bidirectional lattice RNN
//! classifiers and their ensembles, and DET-curve evaluation.

pub mod decodesim;
pub mod ensemble;
pub mod fsutil;
pub mod lattice;
pub mod lm;
pub mod lrnn;
pub mod metrics;
pub mod pipeline;
pub mod testkit;
pub mod util;

pub use decodesim::{Dataset, Label, SamplePair, Split, Utterance};
pub use ensemble::{EnsembleKind, EnsembleParams, ParallelModel, PairInput};
pub use lattice::{Arc, ArcFeatures, Lattice, LatticeError, LmTag, NodeId, FEATURE_DIM};
pub use lm::{DomainPrior, NGramModel};
pub use lrnn::{Encoder, Head, LrnnParams, PreparedLattice, TrainConfig};
pub use metrics::{DetCurve, ErrorMatrix, ScoredSample};
pub use pipeline::{Run, RunConfig, Variant};
