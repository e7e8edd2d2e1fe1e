//! One-shot anomaly synthesis for medical images.
//!
//! Lesions are cut out of a single annotated image ([`lesion_bank`]),
//! augmented ([`augment`]) and MixUp-blended onto normal images
//! ([`synth`], [`dataset`]). [`eval`] provides the ROC/AUC and DeLong
//! statistics used to compare detectors trained on the result.

pub mod augment;
pub mod components;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod imgcore;
pub mod lesion_bank;
pub mod montage;
pub mod preprocess;
pub mod synth;

pub use augment::{AugOp, AugmentRecord, AugmentSpec, Axis};
pub use components::{label_components, Connectivity, Labeling};
pub use config::{validate_config, Placement, RunConfig};
pub use error::{Error, Result};
pub use eval::{auc, delong_test, roc_curve, DeLongResult, ScoredSet};
pub use imgcore::{
    mask_inverse, quantize, BinaryMask, Depth, Image, PixelDomain, Raster, RngStream,
};
pub use lesion_bank::{extract_patches, LesionBank, LesionPatch, LesionType};
pub use preprocess::{detect_fov, resize_canonical, window_ct, PreprocessOptions, WindowSpec};
pub use synth::{
    choose_position, mixup_paste, synthesize_one, CompositionStrategy, MixUpMode, PasteRecord,
    SynthesisParams, SyntheticSample,
};
