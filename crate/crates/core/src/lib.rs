//! Outlier-environment detection and invariant-feature selection for
//! multi-environment affect corpora.
//!
//! Each environment (a participant who both plays and annotates) is summarised
//! by the signs of its feature/label correlations over pairwise preference
//! data. A one-class SVM over those sign vectors separates consistent
//! environments from outliers, and a counting rule over the same signs picks
//! the features whose relation to the labels holds across environments. Linear
//! preference models trained on those features are evaluated with
//! leave-one-participant-out cross validation.

pub mod cli;
pub mod correlation;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod invariance;
pub mod io;
pub mod manifest;
pub mod ocsvm;
pub mod preflearn;
pub mod seed;
pub mod synth;

pub use correlation::{
    pearson, point_biserial, representation_matrix, sign_vector, RepresentationMatrix, SignConfig,
    SignVector,
};
pub use corpus::{
    build_pairs, environment_pairs, normalize_trace, window_trace, Corpus, Environment,
    NormalizedTrace, PairSet, Session, Window,
};
pub use error::{Error, Result};
pub use eval::{ci95, lopo_cv, Ci95, FoldResult, MaskScope, ModelConfig, Report};
pub use invariance::{count_signs, select_invariant, InvariantMask, SignCounts};
pub use manifest::{load_corpus, load_manifest, write_corpus, Manifest, ManifestConfig};
pub use ocsvm::{detect_outliers, kernel_eval, DetectConfig, Kernel, OcsvmModel, Partition};
pub use preflearn::{accuracy, predict, PrefModel, TrainConfig};
pub use synth::{generate, score_detection, DetectionScore, GroundTruth, SynthSpec};
