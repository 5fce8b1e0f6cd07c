//! Multi-view verification.
//!
//! Each 4-connected same-label region of a target annotation is re-voted
//! using labeled points reprojected from nearby reference views. For a
//! reference `r` and class `c`, `f_r(c)` is the number of distinct region
//! pixels hit by class-`c` projections divided by the region size; the
//! target's own term is 1 for its class and 0 otherwise. A class's vote is
//! the mean of these `references + 1` terms.
//!
//! All counts share the region size as denominator, so votes are kept as
//! integer numerators and compared exactly.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuse::FusedAnnotation;
use crate::geometry::{
    pose_distance, project_point, unproject, Intrinsics, LabeledPointCloud, Pose, DEFAULT_ROTATION_WEIGHT,
};
use crate::ingest::vocab::VOID;
use crate::raster::{check_dims, DepthImage, LabelImage, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub class_id: u16,
    /// Ascending linear pixel indices.
    pub pixels: Vec<u32>,
}

impl Region {
    pub fn size(&self) -> usize {
        self.pixels.len()
    }
}

/// A partition of the image into maximal 4-connected same-label regions,
/// numbered in raster-scan order of their first pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet {
    region_of: Raster<u32>,
    regions: Vec<Region>,
}

impl RegionSet {
    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    /// Region index of every pixel.
    pub fn region_of(&self) -> &Raster<u32> {
        &self.region_of
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

pub fn connected_components_4(labels: &LabelImage) -> RegionSet {
    let (w, h) = labels.dims();
    let src = labels.as_slice();
    let mut region_of = Raster::filled(w, h, u32::MAX);
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..src.len() {
        if region_of.as_slice()[start] != u32::MAX {
            continue;
        }
        let id = regions.len() as u32;
        let class_id = src[start];
        let mut pixels = Vec::new();
        region_of.as_mut_slice()[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            pixels.push(p as u32);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                let slot = &mut region_of.as_mut_slice()[q];
                if *slot == u32::MAX && src[q] == class_id {
                    *slot = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        pixels.sort_unstable();
        regions.push(Region { class_id, pixels });
    }
    RegionSet { region_of, regions }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvConfig {
    /// Number of reference views per target.
    pub references: usize,
    /// Depth cross-check tolerance in meters.
    pub depth_tolerance: f64,
    /// Meters per radian when ranking references by pose distance.
    pub rotation_weight: f64,
}

impl Default for MvConfig {
    fn default() -> Self {
        Self {
            references: 2,
            depth_tolerance: 0.1,
            rotation_weight: DEFAULT_ROTATION_WEIGHT,
        }
    }
}

/// One posed, labeled view. Depth and pose are optional so that missing
/// inputs surface as errors naming the frame.
#[derive(Debug, Clone, Copy)]
pub struct View<'a> {
    pub id: &'a str,
    pub labels: &'a LabelImage,
    pub depth: Option<&'a DepthImage>,
    pub intrinsics: Option<&'a Intrinsics>,
    pub pose: Option<&'a Pose>,
}

struct Posed<'a> {
    labels: &'a LabelImage,
    depth: &'a DepthImage,
    intrinsics: &'a Intrinsics,
    pose: &'a Pose,
}

impl<'a> View<'a> {
    fn posed(&self) -> Result<Posed<'a>> {
        let missing = |what: &str| Error::MissingFrameData {
            frame: self.id.to_string(),
            what: what.to_string(),
        };
        let p = Posed {
            labels: self.labels,
            depth: self.depth.ok_or_else(|| missing("depth"))?,
            intrinsics: self.intrinsics.ok_or_else(|| missing("intrinsics"))?,
            pose: self.pose.ok_or_else(|| missing("pose"))?,
        };
        check_dims("depth", p.intrinsics.dims(), p.depth.dims())?;
        check_dims("labels", p.intrinsics.dims(), p.labels.dims())?;
        Ok(p)
    }

    fn cloud(&self) -> Result<LabeledPointCloud> {
        let p = self.posed()?;
        unproject(self.id, p.depth, p.intrinsics, p.pose, Some(p.labels))
    }
}

/// The `count` candidates closest to `target` by [`pose_distance`], ties by
/// frame id. The target itself is never returned.
pub fn select_reference_frames(
    target_id: &str,
    target_pose: &Pose,
    candidates: &[(&str, &Pose)],
    count: usize,
    rotation_weight: f64,
) -> Vec<String> {
    let mut ranked: Vec<(f64, &str)> = candidates
        .iter()
        .filter(|(id, _)| *id != target_id)
        .map(|&(id, pose)| (pose_distance(target_pose, pose, rotation_weight), id))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    ranked.into_iter().take(count).map(|(_, id)| id.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProjectedLabel {
    pub x: usize,
    pub y: usize,
    pub class_id: u16,
}

/// Projects a reference cloud into the target view, keeping points that land
/// in the image on a valid depth pixel with `|z - depth| <= depth_tolerance`.
pub fn project_reference(
    cloud: &LabeledPointCloud,
    intr: &Intrinsics,
    pose: &Pose,
    depth: &DepthImage,
    depth_tolerance: f64,
) -> Result<Vec<ProjectedLabel>> {
    if !(depth_tolerance > 0.0) {
        return Err(Error::invalid(
            "depth tolerance",
            format!("{depth_tolerance} must be positive"),
        ));
    }
    check_dims("depth", intr.dims(), depth.dims())?;
    Ok(cloud
        .points
        .iter()
        .filter_map(|pt| {
            let proj = project_point(&pt.position, intr, pose)?;
            let (x, y) = proj.pixel();
            let d = *depth.get(x, y);
            (d > 0.0 && (proj.z - d).abs() <= depth_tolerance).then_some(ProjectedLabel {
                x,
                y,
                class_id: pt.class_id,
            })
        })
        .collect())
}

/// Distinct region pixels hit per class by one reference's projections.
/// Void projections are ignored.
pub type ClassCounts = BTreeMap<u16, u32>;

pub fn count_region_hits(region: &Region, width: usize, projections: &[ProjectedLabel]) -> ClassCounts {
    let mut hits: Vec<(u16, u32)> = projections
        .iter()
        .filter(|p| p.class_id != VOID)
        .map(|p| (p.class_id, (p.y * width + p.x) as u32))
        .filter(|(_, i)| region.pixels.binary_search(i).is_ok())
        .collect();
    hits.sort_unstable();
    hits.dedup();
    let mut counts = ClassCounts::new();
    for (c, _) in hits {
        *counts.entry(c).or_default() += 1;
    }
    counts
}

/// Per-class vote for one region. `score(c) = numerator(c) / denominator`
/// with `denominator = size * (references + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteTable {
    pub own_class: u16,
    pub references: usize,
    pub region_size: usize,
    numerators: BTreeMap<u16, u64>,
}

impl VoteTable {
    pub fn denominator(&self) -> u64 {
        self.region_size as u64 * (self.references as u64 + 1)
    }

    pub fn numerator(&self, class_id: u16) -> u64 {
        self.numerators.get(&class_id).copied().unwrap_or(0)
    }

    pub fn score(&self, class_id: u16) -> f64 {
        self.numerator(class_id) as f64 / self.denominator() as f64
    }

    pub fn scores(&self) -> BTreeMap<u16, f64> {
        self.numerators.keys().map(|&c| (c, self.score(c))).collect()
    }

    /// Highest vote; a tie involving the own class keeps it, other ties go
    /// to the lowest class id.
    pub fn winner(&self) -> u16 {
        let own = self.numerator(self.own_class);
        let mut best = (self.own_class, own);
        for (&c, &n) in &self.numerators {
            if n > best.1 || (n == best.1 && best.0 != self.own_class && c < best.0) {
                best = (c, n);
            }
        }
        best.0
    }
}

pub fn region_votes(own_class: u16, region_size: usize, per_reference: &[ClassCounts]) -> VoteTable {
    assert!(region_size > 0, "region must be nonempty");
    let size = region_size as u64;
    let mut numerators: BTreeMap<u16, u64> = BTreeMap::new();
    numerators.insert(own_class, size);
    for counts in per_reference {
        for (&c, &n) in counts {
            *numerators.entry(c).or_default() += (n as u64).min(size);
        }
    }
    VoteTable {
        own_class,
        references: per_reference.len(),
        region_size,
        numerators,
    }
}

/// Caches unprojected reference clouds by frame id. Each key is computed
/// at most once even under concurrent lookups.
#[derive(Default)]
pub struct CloudCache {
    slots: Mutex<HashMap<String, Arc<OnceLock<Arc<LabeledPointCloud>>>>>,
}

impl CloudCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_try_insert(
        &self,
        id: &str,
        make: impl FnOnce() -> Result<LabeledPointCloud>,
    ) -> Result<Arc<LabeledPointCloud>> {
        let slot = {
            let mut slots = self.slots.lock().expect("cloud cache poisoned");
            slots.entry(id.to_string()).or_default().clone()
        };
        if let Some(c) = slot.get() {
            return Ok(c.clone());
        }
        // OnceLock::get_or_try_init is unstable; racing builders may both
        // compute, but only the first value is stored.
        let cloud = Arc::new(make()?);
        Ok(slot.get_or_init(|| cloud).clone())
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("cloud cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Re-votes every region of `target` against the given reference views.
pub fn verify_with_references(
    target: &View<'_>,
    references: &[View<'_>],
    depth_tolerance: f64,
    cache: Option<&CloudCache>,
) -> Result<LabelImage> {
    let t = target.posed()?;
    let width = t.labels.width();
    let regions = connected_components_4(t.labels);
    let region_of = regions.region_of().as_slice();
    let mut per_region: Vec<Vec<ClassCounts>> = vec![vec![ClassCounts::new(); references.len()]; regions.len()];

    for (ri, reference) in references.iter().enumerate() {
        let cloud = match cache {
            Some(c) => c.get_or_try_insert(reference.id, || reference.cloud())?,
            None => Arc::new(reference.cloud()?),
        };
        let projections = project_reference(&cloud, t.intrinsics, t.pose, t.depth, depth_tolerance)?;
        let mut hits: Vec<(u32, u16)> = projections
            .iter()
            .filter(|p| p.class_id != VOID)
            .map(|p| ((p.y * width + p.x) as u32, p.class_id))
            .collect();
        hits.sort_unstable();
        hits.dedup();
        for (pixel, class) in hits {
            let region = region_of[pixel as usize] as usize;
            *per_region[region][ri].entry(class).or_default() += 1;
        }
    }

    let mut out = t.labels.clone();
    for (region, counts) in regions.regions().iter().zip(&per_region) {
        let winner = region_votes(region.class_id, region.size(), counts).winner();
        if winner != region.class_id {
            for &p in &region.pixels {
                out.as_mut_slice()[p as usize] = winner;
            }
        }
    }
    Ok(out)
}

/// Selects the `config.references` nearest views from `scene` (excluding the
/// target) and verifies the target against them in a single pass.
pub fn verify_frame(
    target: &View<'_>,
    scene: &[View<'_>],
    config: &MvConfig,
    cache: Option<&CloudCache>,
) -> Result<LabelImage> {
    let target_pose = target.posed()?.pose;
    let mut candidates = Vec::with_capacity(scene.len());
    for v in scene.iter().filter(|v| v.id != target.id) {
        let pose = v.pose.ok_or_else(|| Error::MissingFrameData {
            frame: v.id.to_string(),
            what: "pose".into(),
        })?;
        candidates.push((v.id, pose));
    }
    let chosen = select_reference_frames(
        target.id,
        target_pose,
        &candidates,
        config.references,
        config.rotation_weight,
    );
    let refs: Vec<View<'_>> = chosen
        .iter()
        .map(|id| *scene.iter().find(|v| v.id == id).expect("selected from scene"))
        .collect();
    verify_with_references(target, &refs, config.depth_tolerance, cache)
}

/// Applies a verified semantic raster to a fused annotation, clearing
/// instance ids wherever the class changed.
pub fn apply_verified(ann: &FusedAnnotation, verified: &LabelImage) -> Result<FusedAnnotation> {
    ann.semantic.check_same_dims(verified, "verified")?;
    let mut instances = ann.instances.clone();
    for (i, (old, new)) in ann.semantic.as_slice().iter().zip(verified.as_slice()).enumerate() {
        if old != new {
            instances.as_mut_slice()[i] = 0;
        }
    }
    let mut area: BTreeMap<u16, u32> = BTreeMap::new();
    for &id in instances.as_slice() {
        if id != 0 {
            *area.entry(id).or_default() += 1;
        }
    }
    let meta = ann
        .meta
        .iter()
        .filter_map(|m| {
            area.get(&m.id).map(|&a| {
                let mut m = m.clone();
                m.area = a;
                m
            })
        })
        .collect();
    Ok(FusedAnnotation {
        semantic: verified.clone(),
        instances,
        meta,
    })
}
