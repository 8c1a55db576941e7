//! Texture descriptors of knee radiograph regions, feature screening and
//! subset selection with cross-validated linear SVMs, and synthetic cohorts
//! with planted effects for validating the whole chain.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod landmarks;
pub mod matrix;
pub mod pipeline;
pub mod raster;
pub mod search;
pub mod stats;
pub mod svm;
pub mod synth;
pub mod texture;

pub use error::{Error, Result};
pub use eval::{auc, cv_auc, project_2d, roc_curve, stratified_kfold, AucPooling, CvScore, CvSpec, Projection, RocCurve};
pub use geometry::{
    extract_patch, AxisInterval, Label, LandmarkSet, Laterality, OrientedRect, Point, RoiLayout, RoiName,
};
pub use landmarks::{parse_landmarks, read_landmark_file, LandmarkRecord};
pub use matrix::FeatureMatrix;
pub use pipeline::{extract_cohort, extract_subject, CohortExtraction, SubjectFeatures, CANONICAL_SIDE};
pub use raster::{Image16, Patch, MAX_INTENSITY};
pub use search::{best_per_cardinality, search_all, BestRow, FeatureMask, SubsetResult, MASK_COUNT};
pub use stats::{normality_check, screen_features, t_test, welch_t_test, ScreenTable, TTestKind, TTestResult};
pub use svm::{svm_train, LinearModel, Standardizer, SvmParams, SvmSolution};
pub use synth::{entropy_shaped_patch, fbm_patch, planted_cohort, CohortSpec, GroundTruth, SpectralFbm, SynthMode};
pub use texture::{entropy, hurst, FeatureVector, HurstEstimate, HurstEstimator, IncrementVariance, FEATURE_COUNT, FEATURE_NAMES};
