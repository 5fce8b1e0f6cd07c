//! Dataset manifest, file codecs and persistence for model outputs and
//! stage artifacts.

pub mod features;
pub mod files;
pub mod manifest;
pub mod records;
pub mod rle;
pub mod vocab;

pub use features::{FeatureTable, FloatMatrix, SegmentKey};
pub use files::{
    load_depth, load_label_image, load_rgb_png, load_u16_png, read_json, save_depth, save_label_image, save_rgb_png,
    save_u16_png, write_atomic, write_json, DEFAULT_DEPTH_SCALE,
};
pub use manifest::{load_intrinsics, load_manifest, load_pose, FrameRecord, Manifest, ManifestFile, SceneRecord};
pub use records::{BoxF, Detection, DetectionSet, Segment, SegmentSet};
pub use rle::{decode_rle, encode_rle};
pub use vocab::{Vocabulary, VOID};
