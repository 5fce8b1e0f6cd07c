//! Single-view fusion: segment voting over the semantic raster, prompt-style
//! instance masks from detections, background filtering and score-ordered
//! instance overlay.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::files::{load_u16_png, read_json, save_u16_png, write_json};
use crate::ingest::records::{BoxF, DetectionSet, SegmentSet};
use crate::ingest::rle::rle_pixels;
use crate::ingest::vocab::{Vocabulary, VOID};
use crate::raster::{check_dims, LabelImage, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuseConfig {
    /// Minimum inside-box area fraction for a segment to join a prompted mask.
    pub prompt_threshold: f64,
    /// Detector outputs scoring below this are skipped. Manual boxes are exempt.
    pub min_detection_score: f64,
    /// Use a detection's coarse mask as the instance mask instead of composing
    /// one from segments.
    pub use_coarse_masks: bool,
}

impl Default for FuseConfig {
    fn default() -> Self {
        Self {
            prompt_threshold: 0.8,
            min_detection_score: 0.3,
            use_coarse_masks: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Detector,
    ManualBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceMask {
    pub id: u16,
    pub class_id: u16,
    pub score: f64,
    /// Ascending linear pixel indices; never empty.
    pub pixels: Vec<u32>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub id: u16,
    pub class_id: u16,
    pub score: f64,
    pub provenance: Provenance,
    /// Visible pixels after overlay.
    pub area: u32,
}

/// Semantic raster plus instance-id raster (0 = none) and instance metadata
/// sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedAnnotation {
    pub semantic: LabelImage,
    pub instances: Raster<u16>,
    pub meta: Vec<InstanceMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedDetection {
    pub index: usize,
    pub provenance: Provenance,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceBuild {
    pub instances: Vec<InstanceMask>,
    pub skipped: Vec<SkippedDetection>,
}

/// Paints every segment with the class holding the most pixels of it in
/// `semantic`. Void votes like any class; ties go to the lowest class id.
/// Pixels outside all segments keep their label.
pub fn vote_segment_labels(segments: &SegmentSet, semantic: &LabelImage) -> Result<LabelImage> {
    check_dims("semantic", segments.dims(), semantic.dims())?;
    let mut out = semantic.clone();
    let src = semantic.as_slice();
    let mut votes: BTreeMap<u16, usize> = BTreeMap::new();
    for seg in segments.segments() {
        votes.clear();
        for &p in seg.pixels() {
            *votes.entry(src[p as usize]).or_default() += 1;
        }
        let winner = argmax_lowest(&votes).unwrap_or(VOID);
        let dst = out.as_mut_slice();
        for &p in seg.pixels() {
            dst[p as usize] = winner;
        }
    }
    Ok(out)
}

fn argmax_lowest(votes: &BTreeMap<u16, usize>) -> Option<u16> {
    let mut best: Option<(u16, usize)> = None;
    for (&class, &n) in votes {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((class, n));
        }
    }
    best.map(|(c, _)| c)
}

/// Emulates a box + point prompt over the segment set: the union of segments
/// with at least `threshold` of their area inside `bbox`, plus the segment
/// under `centroid`.
pub fn compose_mask_from_prompt(
    segments: &SegmentSet,
    bbox: &BoxF,
    centroid: [f64; 2],
    threshold: f64,
) -> Result<Vec<u32>> {
    compose_with_owner(segments, &segments.owner_raster(), bbox, centroid, threshold)
}

fn compose_with_owner(
    segments: &SegmentSet,
    owner: &Raster<u32>,
    bbox: &BoxF,
    centroid: [f64; 2],
    threshold: f64,
) -> Result<Vec<u32>> {
    let width = segments.width();
    let mut selected = vec![false; segments.segments().len()];
    let (cx, cy) = (centroid[0].floor(), centroid[1].floor());
    if cx >= 0.0 && cy >= 0.0 && (cx as usize) < width && (cy as usize) < segments.height() {
        let o = *owner.get(cx as usize, cy as usize);
        if o > 0 {
            selected[o as usize - 1] = true;
        }
    }
    if !bbox.is_empty() {
        for (i, seg) in segments.segments().iter().enumerate() {
            if !selected[i] && seg.area_inside(bbox, width) as f64 >= threshold * seg.area() as f64 {
                selected[i] = true;
            }
        }
    }
    let mut pixels: Vec<u32> = segments
        .segments()
        .iter()
        .zip(&selected)
        .filter(|(_, &s)| s)
        .flat_map(|(seg, _)| seg.pixels().iter().copied())
        .collect();
    if pixels.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    pixels.sort_unstable();
    Ok(pixels)
}

/// One instance per usable detection, then one per manual box (score 1.0).
/// Instance ids count from 1 in that order; failed detections are skipped
/// with a logged warning.
pub fn instance_masks_from_detections(
    segments: &SegmentSet,
    detections: Option<&DetectionSet>,
    manual_boxes: Option<&DetectionSet>,
    vocab: &Vocabulary,
    config: &FuseConfig,
) -> Result<InstanceBuild> {
    let owner = segments.owner_raster();
    let (width, height) = segments.dims();
    let mut build = InstanceBuild::default();
    let mut next_id: u16 = 1;
    let sources = [
        (detections, Provenance::Detector),
        (manual_boxes, Provenance::ManualBox),
    ];
    for (set, provenance) in sources {
        let Some(set) = set else { continue };
        check_dims("detections", segments.dims(), (set.width, set.height))?;
        for (index, det) in set.detections.iter().enumerate() {
            let skip = |reason: String| {
                log::warn!("skipping {provenance:?} {index}: {reason}");
                SkippedDetection {
                    index,
                    provenance,
                    reason,
                }
            };
            if det.class_id == VOID || !vocab.is_valid(det.class_id) {
                build
                    .skipped
                    .push(skip(format!("class {} not in vocabulary", det.class_id)));
                continue;
            }
            let score = match provenance {
                Provenance::ManualBox => 1.0,
                Provenance::Detector => det.score,
            };
            if provenance == Provenance::Detector && score < config.min_detection_score {
                build
                    .skipped
                    .push(skip(format!("score {score} below {}", config.min_detection_score)));
                continue;
            }
            let pixels = match (&det.mask, config.use_coarse_masks) {
                (Some(counts), true) => rle_pixels(counts, width, height)?,
                _ => match compose_with_owner(
                    segments,
                    &owner,
                    &det.bbox,
                    det.centroid(width, height),
                    config.prompt_threshold,
                ) {
                    Ok(p) => p,
                    Err(Error::EmptyPrompt) => {
                        build.skipped.push(skip("prompt selects no segment".into()));
                        continue;
                    }
                    Err(e) => return Err(e),
                },
            };
            if pixels.is_empty() {
                build.skipped.push(skip("empty mask".into()));
                continue;
            }
            build.instances.push(InstanceMask {
                id: next_id,
                class_id: det.class_id,
                score,
                pixels,
                provenance,
            });
            next_id = next_id
                .checked_add(1)
                .ok_or_else(|| Error::invalid("instances", "more than 65535 instances"))?;
        }
    }
    Ok(build)
}

/// Keeps background classes; everything else becomes void.
pub fn filter_background(labels: &LabelImage, vocab: &Vocabulary) -> LabelImage {
    labels.map(|&c| if vocab.is_background(c) { c } else { VOID })
}

/// Paints instances in ascending score order so the highest score owns
/// contested pixels; among equal scores the lower id wins. Instances left
/// with no visible pixel are dropped from the metadata.
pub fn overlay_instances(background: &LabelImage, instances: &[InstanceMask]) -> Result<FusedAnnotation> {
    let mut semantic = background.clone();
    let mut ids = Raster::filled(background.width(), background.height(), 0u16);
    let mut order: Vec<&InstanceMask> = instances.iter().collect();
    order.sort_by(|a, b| a.score.total_cmp(&b.score).then(b.id.cmp(&a.id)));
    let n = background.len();
    for inst in order {
        if inst.pixels.last().is_some_and(|&p| p as usize >= n) {
            return Err(Error::invalid(
                "instance",
                format!("instance {} exceeds the image", inst.id),
            ));
        }
        for &p in &inst.pixels {
            semantic.as_mut_slice()[p as usize] = inst.class_id;
            ids.as_mut_slice()[p as usize] = inst.id;
        }
    }
    let mut area: BTreeMap<u16, u32> = BTreeMap::new();
    for &id in ids.as_slice() {
        if id != 0 {
            *area.entry(id).or_default() += 1;
        }
    }
    let mut meta: Vec<InstanceMeta> = instances
        .iter()
        .filter_map(|inst| {
            area.get(&inst.id).map(|&a| InstanceMeta {
                id: inst.id,
                class_id: inst.class_id,
                score: inst.score,
                provenance: inst.provenance,
                area: a,
            })
        })
        .collect();
    meta.sort_by_key(|m| m.id);
    Ok(FusedAnnotation {
        semantic,
        instances: ids,
        meta,
    })
}

/// All model outputs for one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameInputs<'a> {
    pub segments: &'a SegmentSet,
    pub semantic: &'a LabelImage,
    pub detections: Option<&'a DetectionSet>,
    pub manual_boxes: Option<&'a DetectionSet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFrame {
    pub annotation: FusedAnnotation,
    pub skipped: Vec<SkippedDetection>,
}

pub fn fuse_frame(inputs: FrameInputs<'_>, vocab: &Vocabulary, config: &FuseConfig) -> Result<FusedFrame> {
    let voted = vote_segment_labels(inputs.segments, inputs.semantic)?;
    let background = filter_background(&voted, vocab);
    let build = instance_masks_from_detections(inputs.segments, inputs.detections, inputs.manual_boxes, vocab, config)?;
    Ok(FusedFrame {
        annotation: overlay_instances(&background, &build.instances)?,
        skipped: build.skipped,
    })
}

/// Writes `<frame>_semantic.png`, `<frame>_instance.png` and
/// `<frame>_instances.json` into `dir`.
pub fn save_annotation(ann: &FusedAnnotation, dir: &Path, frame: &str) -> Result<()> {
    save_u16_png(&ann.semantic, &dir.join(format!("{frame}_semantic.png")))?;
    save_u16_png(&ann.instances, &dir.join(format!("{frame}_instance.png")))?;
    write_json(&dir.join(format!("{frame}_instances.json")), &ann.meta)
}

pub fn load_annotation(dir: &Path, frame: &str) -> Result<FusedAnnotation> {
    let semantic = load_u16_png(&dir.join(format!("{frame}_semantic.png")))?;
    let instances = load_u16_png(&dir.join(format!("{frame}_instance.png")))?;
    check_dims("instance", semantic.dims(), instances.dims())?;
    let meta = read_json(&dir.join(format!("{frame}_instances.json")))?;
    Ok(FusedAnnotation {
        semantic,
        instances,
        meta,
    })
}

pub fn annotation_paths(dir: &Path, frame: &str) -> [std::path::PathBuf; 3] {
    [
        dir.join(format!("{frame}_semantic.png")),
        dir.join(format!("{frame}_instance.png")),
        dir.join(format!("{frame}_instances.json")),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::records::{Detection, Segment};
    use crate::ingest::vocab::{ClassEntry, VocabularyFile};

    const WALL: u16 = 1;
    const FLOOR: u16 = 2;
    const CHAIR: u16 = 5;
    const SOFA: u16 = 6;

    fn vocab() -> Vocabulary {
        Vocabulary::from_file(VocabularyFile {
            classes: vec![
                ClassEntry {
                    id: WALL,
                    name: "wall".into(),
                },
                ClassEntry {
                    id: FLOOR,
                    name: "floor".into(),
                },
                ClassEntry {
                    id: CHAIR,
                    name: "chair".into(),
                },
                ClassEntry {
                    id: SOFA,
                    name: "sofa".into(),
                },
            ],
            background: vec!["wall".into(), "floor".into()],
            ..Default::default()
        })
        .unwrap()
    }

    fn one_segment(width: usize, height: usize) -> SegmentSet {
        let px = (0..(width * height) as u32).collect();
        SegmentSet::new(width, height, vec![Segment::from_pixels(1, px, width).unwrap()]).unwrap()
    }

    fn raster_with(counts: &[(u16, usize)], width: usize) -> LabelImage {
        let data: Vec<u16> = counts.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect();
        let height = data.len() / width;
        LabelImage::from_vec(width, height, data).unwrap()
    }

    #[test]
    fn vote_takes_majority() {
        let sem = raster_with(&[(WALL, 40), (CHAIR, 60)], 10);
        let out = vote_segment_labels(&one_segment(10, 10), &sem).unwrap();
        assert!(out.as_slice().iter().all(|&c| c == CHAIR));
    }

    #[test]
    fn vote_void_and_ties() {
        let sem = LabelImage::filled(4, 4, VOID);
        let out = vote_segment_labels(&one_segment(4, 4), &sem).unwrap();
        assert!(out.as_slice().iter().all(|&c| c == VOID));

        let sem = raster_with(&[(CHAIR, 50), (WALL, 50)], 10);
        let out = vote_segment_labels(&one_segment(10, 10), &sem).unwrap();
        assert!(out.as_slice().iter().all(|&c| c == WALL));
    }

    #[test]
    fn vote_leaves_unsegmented_pixels() {
        let sem = raster_with(&[(WALL, 2), (CHAIR, 2)], 4);
        let segs = SegmentSet::new(4, 1, vec![Segment::from_pixels(1, vec![1, 2, 3], 4).unwrap()]).unwrap();
        let out = vote_segment_labels(&segs, &sem).unwrap();
        assert_eq!(out.as_slice(), &[WALL, CHAIR, CHAIR, CHAIR]);
        assert!(vote_segment_labels(&segs, &LabelImage::filled(3, 1, 0)).is_err());
    }

    /// 10x1 strip: s1 = pixels 0..4, s2 = pixels 4..10. Box covers 0..6.
    fn prompt_fixture() -> (SegmentSet, BoxF) {
        let s1 = Segment::from_pixels(1, (0..4).collect(), 10).unwrap();
        let s2 = Segment::from_pixels(2, (4..10).collect(), 10).unwrap();
        // s2 has 2 of 6 pixels inside; ~33%.
        (
            SegmentSet::new(10, 1, vec![s1, s2]).unwrap(),
            BoxF::new(0.0, 0.0, 6.0, 1.0),
        )
    }

    #[test]
    fn prompt_threshold_and_centroid_override() {
        let (segs, b) = prompt_fixture();
        let m = compose_mask_from_prompt(&segs, &b, [1.5, 0.5], 0.8).unwrap();
        assert_eq!(m, (0..4).collect::<Vec<_>>());
        let m = compose_mask_from_prompt(&segs, &b, [5.5, 0.5], 0.8).unwrap();
        assert_eq!(m, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn prompt_over_unsegmented_region_fails() {
        let s1 = Segment::from_pixels(1, (6..10).collect(), 10).unwrap();
        let segs = SegmentSet::new(10, 1, vec![s1]).unwrap();
        let r = compose_mask_from_prompt(&segs, &BoxF::new(0.0, 0.0, 4.0, 1.0), [2.0, 0.5], 0.8);
        assert!(matches!(r, Err(Error::EmptyPrompt)));
    }

    fn det(class_id: u16, score: f64, bbox: BoxF) -> Detection {
        Detection {
            class_id,
            score,
            bbox,
            mask_centroid: None,
            mask: None,
        }
    }

    #[test]
    fn instances_from_detections_and_manual_boxes() {
        let (segs, _) = prompt_fixture();
        let dets = DetectionSet {
            width: 10,
            height: 1,
            detections: vec![
                det(CHAIR, 0.9, BoxF::new(0.0, 0.0, 4.0, 1.0)),
                det(SOFA, 0.5, BoxF::new(4.0, 0.0, 6.0, 1.0)),
            ],
        };
        let manual = DetectionSet {
            width: 10,
            height: 1,
            detections: vec![det(SOFA, 0.2, BoxF::new(4.0, 0.0, 6.0, 1.0))],
        };
        let b = instance_masks_from_detections(&segs, Some(&dets), Some(&manual), &vocab(), &FuseConfig::default())
            .unwrap();
        assert_eq!(b.instances.len(), 3);
        assert_eq!(b.instances[0].pixels, segs.segments()[0].pixels());
        assert_eq!(b.instances[2].score, 1.0);
        assert_eq!(b.instances[2].provenance, Provenance::ManualBox);
        assert_eq!(b.instances.iter().map(|i| i.id).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn detection_over_unsegmented_region_dropped() {
        let s1 = Segment::from_pixels(1, (6..10).collect(), 10).unwrap();
        let segs = SegmentSet::new(10, 1, vec![s1]).unwrap();
        let dets = DetectionSet {
            width: 10,
            height: 1,
            detections: vec![
                det(CHAIR, 0.9, BoxF::new(0.0, 0.0, 4.0, 1.0)),
                det(CHAIR, 0.1, BoxF::new(6.0, 0.0, 4.0, 1.0)),
            ],
        };
        let b = instance_masks_from_detections(&segs, Some(&dets), None, &vocab(), &FuseConfig::default()).unwrap();
        assert!(b.instances.is_empty());
        assert_eq!(b.skipped.len(), 2);
    }

    #[test]
    fn background_filter() {
        let r = raster_with(&[(WALL, 2), (FLOOR, 2), (SOFA, 2)], 6);
        assert_eq!(
            filter_background(&r, &vocab()).as_slice(),
            &[WALL, WALL, FLOOR, FLOOR, 0, 0]
        );
        let bg = raster_with(&[(WALL, 3), (FLOOR, 3)], 6);
        assert_eq!(filter_background(&bg, &vocab()), bg);
        let fg = raster_with(&[(SOFA, 3), (CHAIR, 3)], 6);
        assert!(filter_background(&fg, &vocab()).as_slice().iter().all(|&c| c == 0));
    }

    fn inst(id: u16, class_id: u16, score: f64, pixels: Vec<u32>) -> InstanceMask {
        InstanceMask {
            id,
            class_id,
            score,
            pixels,
            provenance: Provenance::Detector,
        }
    }

    #[test]
    fn overlay_paints_by_score() {
        let bg = LabelImage::filled(6, 1, WALL);
        let a = inst(1, CHAIR, 0.9, vec![0, 1, 2, 3]);
        let b = inst(2, SOFA, 0.6, vec![2, 3, 4]);
        let f = overlay_instances(&bg, &[b.clone(), a.clone()]).unwrap();
        assert_eq!(f.semantic.as_slice(), &[CHAIR, CHAIR, CHAIR, CHAIR, SOFA, WALL]);
        assert_eq!(f.instances.as_slice(), &[1, 1, 1, 1, 2, 0]);
        assert_eq!(
            f.meta.iter().map(|m| (m.id, m.area)).collect::<Vec<_>>(),
            vec![(1, 4), (2, 1)]
        );

        // Fully occluded instance disappears from the metadata.
        let c = inst(3, SOFA, 0.1, vec![0, 1]);
        let f = overlay_instances(&bg, &[a, c]).unwrap();
        assert_eq!(f.meta.len(), 1);
    }

    #[test]
    fn overlay_without_instances_is_identity() {
        let bg = raster_with(&[(WALL, 3), (FLOOR, 3)], 3);
        let f = overlay_instances(&bg, &[]).unwrap();
        assert_eq!(f.semantic, bg);
        assert!(f.instances.as_slice().iter().all(|&i| i == 0));
        assert!(f.meta.is_empty());
    }

    #[test]
    fn fuse_without_detections_is_filtered_vote() {
        let sem = raster_with(&[(WALL, 6), (SOFA, 4)], 10);
        let segs = one_segment(10, 1);
        let fused = fuse_frame(
            FrameInputs {
                segments: &segs,
                semantic: &sem,
                detections: None,
                manual_boxes: None,
            },
            &vocab(),
            &FuseConfig::default(),
        )
        .unwrap();
        let expect = filter_background(&vote_segment_labels(&segs, &sem).unwrap(), &vocab());
        assert_eq!(fused.annotation.semantic, expect);
    }

    #[test]
    fn annotation_persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let bg = LabelImage::filled(6, 1, WALL);
        let f = overlay_instances(&bg, &[inst(1, CHAIR, 0.9, vec![0, 1])]).unwrap();
        save_annotation(&f, dir.path(), "f0").unwrap();
        assert_eq!(load_annotation(dir.path(), "f0").unwrap(), f);
    }
}
