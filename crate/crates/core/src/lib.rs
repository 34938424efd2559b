//! Fine-grained rib fracture analysis downstream of pretrained encoders.
//!
//! The crate covers the post-detection half of the pipeline:
//!
//! - [`annotation`]: the six-dimension fracture annotation schema, worksheet
//!   parsing/validation and templated clinical descriptions.
//! - [`detect`]: per-slice detection filtering, cross-slice track linking,
//!   3D boxes, HU windowing and fixed-size patch extraction.
//! - [`anatomy`]: rib side and rib number assignment.
//! - [`manifold`]: Lorentz-model hyperbolic geometry with analytic gradients.
//! - [`model`]: projection and classification heads, the multi-objective loss
//!   and a deterministic Adam training loop over precomputed features.
//! - [`eval`]: consensus inference, track matching and per-head metrics.
//! - [`ribscore`]: the six-criterion RibScore.
//! - [`synth`]: seeded generators for detections, volumes, worksheets and
//!   feature pairs.
//! - [`formats`]: binary and line-delimited file formats.

pub mod anatomy;
pub mod annotation;
pub mod detect;
pub mod eval;
pub mod formats;
pub mod manifold;
pub mod model;
pub mod ribscore;
pub mod rng;
pub mod synth;

pub use anatomy::{Orientation, RibAssignment, RibMethod};
pub use annotation::{
    AnnotationWorksheet, Displacement, FractureAnnotation, LabelVocabulary, Location, Multiplicity,
    Side, Vocabularies,
};
pub use detect::{Box3d, Detection, FractureTrack, LinkParams, Patch, Volume};
pub use eval::{HeadPrediction, HeadPredictions, MetricsReport};
pub use manifold::{Curvature, HyperbolicPoint};
pub use model::{FeaturePair, HyperbolicModel, TrainConfig};
pub use ribscore::RibScoreReport;
