//! Dataset manifest: scenes, per-frame file records and model provenance.
//!
//! ```json
//! {
//!   "dataset": "box-world",
//!   "vocabulary": "vocabulary.json",
//!   "multiview": true,
//!   "depth_scale": 0.001,
//!   "text_embeddings": "text_embeddings.json",
//!   "provenance": { "segmenter": "dense grid 64x64" },
//!   "scenes": [
//!     { "id": "s0", "features": "s0/features.json",
//!       "frames": [ { "id": "s0_f000", "depth": "s0/f000_depth.png", "pose": "s0/f000_pose.json",
//!                     "intrinsics": "s0/intrinsics.json", "semantic": "s0/f000_semantic.png",
//!                     "segments": "s0/f000_segments.json", "detections": "s0/f000_detections.json" } ] }
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest's directory. Every referenced file must
//! exist at load time.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::ingest::files::{read_json, write_json, DEFAULT_DEPTH_SCALE};

fn default_depth_scale() -> f64 {
    DEFAULT_DEPTH_SCALE
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameFile {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<String>,
    /// Semantic segmentation model output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_boxes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    /// Per-pixel embeddings, FSEG with one row per pixel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    pub frames: Vec<FrameFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub dataset: String,
    pub vocabulary: String,
    #[serde(default)]
    pub multiview: bool,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_embeddings: Option<String>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
    pub scenes: Vec<SceneFile>,
}

impl ManifestFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameRecord {
    pub id: String,
    pub rgb: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub pose: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub semantic: Option<PathBuf>,
    pub segments: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub manual_boxes: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

impl FrameRecord {
    pub fn require<'a>(&self, field: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        field.as_deref().ok_or_else(|| Error::MissingFrameData {
            frame: self.id.clone(),
            what: what.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneRecord {
    pub id: String,
    pub features: Option<PathBuf>,
    pub frames: Vec<FrameRecord>,
}

impl SceneRecord {
    pub fn frame(&self, id: &str) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.id == id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub path: PathBuf,
    pub dataset: String,
    pub vocabulary: PathBuf,
    pub multiview: bool,
    pub depth_scale: f64,
    pub text_embeddings: Option<PathBuf>,
    pub provenance: BTreeMap<String, String>,
    pub scenes: Vec<SceneRecord>,
}

impl Manifest {
    pub fn scene(&self, id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn frames(&self) -> impl Iterator<Item = (&SceneRecord, &FrameRecord)> {
        self.scenes.iter().flat_map(|s| s.frames.iter().map(move |f| (s, f)))
    }
}

/// Loads and validates a manifest, resolving and existence-checking every path.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let doc: ManifestFile = read_json(path)?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let malformed = |field: String, reason: String| Error::Malformed {
        file: path.to_path_buf(),
        field,
        reason,
    };
    let resolve = |field: String, rel: &str| -> Result<PathBuf> {
        let p = root.join(rel);
        if !p.is_file() {
            return Err(Error::MissingFile {
                file: path.to_path_buf(),
                field,
                missing: p,
            });
        }
        Ok(p)
    };
    let resolve_opt = |field: String, rel: &Option<String>| -> Result<Option<PathBuf>> {
        rel.as_deref().map(|r| resolve(field, r)).transpose()
    };

    if !(doc.depth_scale.is_finite() && doc.depth_scale > 0.0) {
        return Err(malformed(
            "depth_scale".into(),
            format!("{} is not positive", doc.depth_scale),
        ));
    }
    let vocabulary = resolve("vocabulary".into(), &doc.vocabulary)?;
    let text_embeddings = resolve_opt("text_embeddings".into(), &doc.text_embeddings)?;

    let mut scene_ids = BTreeSet::new();
    let mut scenes = Vec::with_capacity(doc.scenes.len());
    for (si, scene) in doc.scenes.iter().enumerate() {
        if !scene_ids.insert(scene.id.clone()) {
            return Err(malformed(
                format!("scenes[{si}].id"),
                format!("duplicate scene id `{}`", scene.id),
            ));
        }
        let mut frame_ids = BTreeSet::new();
        let mut frames = Vec::with_capacity(scene.frames.len());
        for (fi, f) in scene.frames.iter().enumerate() {
            if !frame_ids.insert(f.id.clone()) {
                return Err(Error::DuplicateFrame {
                    file: path.to_path_buf(),
                    scene: scene.id.clone(),
                    frame: f.id.clone(),
                });
            }
            let field = |name: &str| format!("scenes[{si}].frames[{fi}].{name}");
            if doc.multiview {
                for (name, value) in [("depth", &f.depth), ("pose", &f.pose), ("intrinsics", &f.intrinsics)] {
                    if value.is_none() {
                        return Err(malformed(
                            field(name),
                            format!("frame `{}` has no {name} but multiview is enabled", f.id),
                        ));
                    }
                }
            }
            frames.push(FrameRecord {
                id: f.id.clone(),
                rgb: resolve_opt(field("rgb"), &f.rgb)?,
                depth: resolve_opt(field("depth"), &f.depth)?,
                pose: resolve_opt(field("pose"), &f.pose)?,
                intrinsics: resolve_opt(field("intrinsics"), &f.intrinsics)?,
                semantic: resolve_opt(field("semantic"), &f.semantic)?,
                segments: resolve_opt(field("segments"), &f.segments)?,
                detections: resolve_opt(field("detections"), &f.detections)?,
                manual_boxes: resolve_opt(field("manual_boxes"), &f.manual_boxes)?,
                ground_truth: resolve_opt(field("ground_truth"), &f.ground_truth)?,
                embeddings: resolve_opt(field("embeddings"), &f.embeddings)?,
            });
        }
        scenes.push(SceneRecord {
            id: scene.id.clone(),
            features: resolve_opt(format!("scenes[{si}].features"), &scene.features)?,
            frames,
        });
    }

    Ok(Manifest {
        path: path.to_path_buf(),
        dataset: doc.dataset,
        vocabulary,
        multiview: doc.multiview,
        depth_scale: doc.depth_scale,
        text_embeddings,
        provenance: doc.provenance,
        scenes,
    })
}

pub fn load_pose(path: &Path) -> Result<Pose> {
    let m: [[f64; 4]; 4] = read_json(path)?;
    Pose::from_row_major(&m).map_err(|e| Error::Malformed {
        file: path.to_path_buf(),
        field: "pose".into(),
        reason: e.to_string(),
    })
}

pub fn save_pose(pose: &Pose, path: &Path) -> Result<()> {
    write_json(path, &pose.to_row_major())
}

pub fn load_intrinsics(path: &Path) -> Result<Intrinsics> {
    let intr: Intrinsics = read_json(path)?;
    intr.validate().map_err(|e| Error::Malformed {
        file: path.to_path_buf(),
        field: "intrinsics".into(),
        reason: e.to_string(),
    })?;
    Ok(intr)
}

pub fn save_intrinsics(intr: &Intrinsics, path: &Path) -> Result<()> {
    write_json(path, intr)
}
