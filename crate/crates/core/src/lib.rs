//! Greedy feature-map filtering for CNN-based visual place recognition.
//!
//! A convolutional layer's `W x H x C` activations are reduced to a `C x 5`
//! descriptor by max pyramid pooling ([`pooling`]). A small set of calibration
//! triplets (query, true reference, random negative) then drives a greedy
//! search that drops the channels whose removal most increases the margin
//! between the negative distance and the positive distance ([`calib`]). The
//! surviving channels are used by a cosine-distance single-frame matcher
//! ([`matcher`]) and scored with precision/recall sweeps ([`eval`]).
//!
//! [`tensor`] and [`manifest`] define the on-disk formats, and [`synth`]
//! generates datasets with planted condition-invariant channels along with
//! brute-force oracles.

pub mod calib;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod matcher;
pub mod pipeline;
pub mod pooling;
pub mod synth;
pub mod tensor;

pub use calib::{
    aggregate, build_triplets, greedy_filter, l2_distance, removal_scores, CalibConfig,
    CalibrationTriplet, FilterResult, GreedyTrace, TripletState,
};
pub use error::{Error, Result};
pub use eval::{
    is_correct, pr_sweep, timing_report, EvalConfig, GroundTruth, PrCurve, PrPoint, TimingReport,
};
pub use manifest::{DatasetManifest, GtMode, ManifestEntry, Position};
pub use matcher::{
    cosine_distance, match_query, normalize_scores, MatchOutcome, MatcherConfig, TemplateDb,
};
pub use pooling::{flatten, pyramid_pool, KeptSet, PooledMatrix, PYRAMID_SLOTS};
pub use synth::SynthParams;
pub use tensor::{read_tensor, write_tensor, FeatureTensor};
