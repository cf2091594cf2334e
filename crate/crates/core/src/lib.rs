//! Semantic-segmentation driven driving scene understanding: label maps,
//! segmentation metrics, per-class features, gradient boosted scenario
//! classification, conflict tracking with time to collision, scene
//! complexity and templated textual explanations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod error;
pub mod explain;
pub mod features;
pub mod gbdt;
pub mod labelmap;
pub mod metrics;
pub mod motion;
pub mod scenario;
pub mod synth;

pub use complexity::{scenario_complexity, ComplexityReport};
pub use error::{Error, Result};
pub use explain::{AdvisoryRuleSet, ElementState, ExplainConfig, ExplanationReport, Explainer, FrameInput, LightColor};
pub use features::{extract_features, FeatureVector, LabeledDataset};
pub use gbdt::{BoostedEnsemble, TrainConfig};
pub use labelmap::{ClassId, ClassMigrationMap, ClassTaxonomy, GrayImage, GrayMode, LabelMap, RgbImage};
pub use metrics::{AbsentPolicy, ConfusionMatrix};
pub use motion::{DbscanParams, KinematicState, PixelPoint, Track, TrackParams, Trajectory};
pub use scenario::{RoadRuleSet, RoadType, ScenarioDistribution, ScenarioLabel};
pub use synth::{SceneSpec, SynthFrame};
