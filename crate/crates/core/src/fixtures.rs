//! Synthetic box-world scenes with exact ground truth.
//!
//! A room is an axis-aligned box with the floor at z = 0; objects are
//! axis-aligned boxes inside it. Every pixel ray is intersected analytically,
//! so depth, labels, instances, segments and detections are exact. The
//! expected top-down grid is computed from the object footprints alone and
//! serves as the oracle for map building.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::ingest::features::{FeatureTable, FloatMatrix, SegmentKey};
use crate::ingest::files::{save_depth, save_label_image, save_rgb_png, write_json};
use crate::ingest::manifest::{save_intrinsics, save_pose, FrameFile, ManifestFile, SceneFile};
use crate::ingest::records::{BoxF, Detection, DetectionSet, SegmentSet};
use crate::ingest::vocab::{ClassEntry, Vocabulary, VocabularyFile, VOID};
use crate::raster::{DepthImage, LabelImage, Raster};
use crate::semmap::{GridGeoref, MapConfig, MapFrame, SemanticGrid};

/// The class table every fixture uses.
pub fn fixture_vocabulary() -> Vocabulary {
    let names = [
        "floor", "wall", "ceiling", "cabinet", "handle", "chair", "table", "sofa", "bed", "tv", "bottle", "plant",
    ];
    Vocabulary::from_file(VocabularyFile {
        classes: names
            .iter()
            .enumerate()
            .map(|(i, n)| ClassEntry {
                id: i as u16 + 1,
                name: n.to_string(),
            })
            .collect(),
        background: ["floor", "wall", "ceiling"].map(String::from).to_vec(),
        small_objects: ["handle", "bottle", "plant"].map(String::from).to_vec(),
        synonyms: [("couch".to_string(), 8)].into(),
    })
    .expect("fixture vocabulary is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub class: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
    /// Index of the object this one is a part of; detections of the parent
    /// cover the part.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub id: String,
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
}

impl CameraSpec {
    pub fn pose(&self) -> Result<Pose> {
        Pose::look_at(
            Vector3::from(self.eye),
            Vector3::from(self.target),
            Vector3::from(self.up),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorruptRegion {
    /// Every pixel of object `object` (index into the object list).
    Object {
        object: usize,
    },
    Rect {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
    },
}

/// Relabels `region` of frame `frame` to `class` in the predicted streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub frame: String,
    pub region: CorruptRegion,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub room: RoomSpec,
    pub objects: Vec<ObjectSpec>,
    pub cameras: Vec<CameraSpec>,
    pub intrinsics: Intrinsics,
    pub seed: u64,
    #[serde(default)]
    pub corruption: Vec<Corruption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Predicted semantics void out pixels within this 4-neighbourhood radius
    /// of an instance boundary; 0 keeps them exact.
    pub erode: usize,
    pub feature_dim: usize,
    /// Standard deviation of the planted per-segment features.
    pub feature_sigma: f64,
    /// Emit per-pixel embeddings.
    pub embeddings: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            erode: 0,
            feature_dim: 16,
            feature_sigma: 1.0,
            embeddings: false,
        }
    }
}

pub fn default_intrinsics() -> Intrinsics {
    Intrinsics::new(120.0, 120.0, 63.5, 47.5, 128, 96).expect("valid")
}

/// Downward-looking cameras on a regular grid over the room at `height`.
pub fn nadir_cameras(room: &RoomSpec, height: f64, spacing: f64, prefix: &str) -> Vec<CameraSpec> {
    let steps = |a: usize| (((room.max[a] - room.min[a]) / spacing).round() as usize).max(1);
    let mut out = Vec::new();
    for j in 0..steps(1) {
        for i in 0..steps(0) {
            let x = room.min[0] + (i as f64 + 0.5) * spacing;
            let y = room.min[1] + (j as f64 + 0.5) * spacing;
            out.push(CameraSpec {
                id: format!("{prefix}{:03}", out.len()),
                eye: [x, y, height],
                target: [x, y, 0.0],
                up: [0.0, 1.0, 0.0],
            });
        }
    }
    out
}

/// Center of the planted feature cluster for `class`: `10·e_(class mod dim)`.
pub fn class_center(class: u16, dim: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    if dim > 0 {
        v[class as usize % dim] = 10.0;
    }
    v
}

/// Text embedding for every class: its feature center.
pub fn text_embeddings(vocab: &Vocabulary, dim: usize) -> BTreeMap<String, Vec<f32>> {
    vocab
        .ids()
        .map(|id| (vocab.name(id).expect("id").to_string(), class_center(id, dim)))
        .collect()
}

/// `k` isotropic Gaussian clusters of `per` points each with centers at
/// `10σ·e_i`; returns the rows and their planted labels.
pub fn planted_gaussians(k: usize, per: usize, dim: usize, sigma: f64, seed: u64) -> (FloatMatrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma ≥ 0");
    let mut data = Vec::with_capacity(k * per * dim);
    let mut labels = Vec::with_capacity(k * per);
    for c in 0..k {
        for _ in 0..per {
            for d in 0..dim {
                let center = if d == c % dim { 10.0 * sigma } else { 0.0 };
                data.push((center + noise.sample(&mut rng)) as f32);
            }
            labels.push(c);
        }
    }
    (FloatMatrix::new(k * per, dim, data).expect("finite"), labels)
}

/// Instance ids: objects are `1..=n`; the room surfaces follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Surface {
    Floor,
    Ceiling,
    Wall(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub id: String,
    pub pose: Pose,
    pub depth: DepthImage,
    /// Instance id per pixel; see [`RenderedScene::instance_classes`].
    pub instances: Raster<u16>,
    pub ground_truth: LabelImage,
    /// The predicted semantic stream, with the requested erosion and corruption.
    pub semantic: LabelImage,
    pub segments: SegmentSet,
    pub detections: DetectionSet,
    pub rgb: Raster<[u8; 3]>,
    pub embeddings: Option<FloatMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub spec: SceneSpec,
    pub intrinsics: Intrinsics,
    /// Class of every instance id; index 0 is void.
    pub instance_classes: Vec<u16>,
    pub frames: Vec<RenderedFrame>,
    pub features: FeatureTable,
    /// Class of each segment, keyed like the feature table.
    pub segment_classes: BTreeMap<SegmentKey, u16>,
}

impl RenderedScene {
    pub fn frame(&self, id: &str) -> Option<&RenderedFrame> {
        self.frames.iter().find(|f| f.id == id)
    }

    /// Instance id of object `index`.
    pub fn object_instance(index: usize) -> u16 {
        index as u16 + 1
    }
}

fn class_of(vocab: &Vocabulary, name: &str) -> Result<u16> {
    vocab
        .id(name)
        .ok_or_else(|| Error::invalid("scene spec", format!("class `{name}` not in vocabulary")))
}

impl SceneSpec {
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let r = &self.room;
        if (0..3).any(|a| !(r.max[a] > r.min[a])) {
            return Err(Error::invalid("scene spec", "room has empty extent"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            class_of(vocab, &o.class)?;
            let inside = (0..3).all(|a| o.min[a] < o.max[a] && o.min[a] >= r.min[a] && o.max[a] <= r.max[a]);
            if !inside {
                return Err(Error::invalid(
                    "scene spec",
                    format!("object {i} is empty or outside the room"),
                ));
            }
            if o.parent.is_some_and(|p| p >= self.objects.len() || p == i) {
                return Err(Error::invalid(
                    "scene spec",
                    format!("object {i} has an invalid parent"),
                ));
            }
        }
        if self.cameras.is_empty() {
            return Err(Error::invalid("scene spec", "no cameras"));
        }
        for c in &self.cameras {
            c.pose()?;
        }
        self.intrinsics.validate()
    }

    fn instance_classes(&self, vocab: &Vocabulary) -> Result<Vec<u16>> {
        let mut out = vec![VOID];
        for o in &self.objects {
            out.push(class_of(vocab, &o.class)?);
        }
        let floor = class_of(vocab, "floor")?;
        let ceiling = class_of(vocab, "ceiling")?;
        let wall = class_of(vocab, "wall")?;
        out.extend([floor, ceiling, wall, wall, wall, wall]);
        Ok(out)
    }

    fn surface_instance(&self, s: Surface) -> u16 {
        let n = self.objects.len() as u16;
        match s {
            Surface::Floor => n + 1,
            Surface::Ceiling => n + 2,
            Surface::Wall(w) => n + 3 + w as u16,
        }
    }

    /// First hit along `origin + t·dir`: `(t, instance id)`.
    fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> (f64, u16) {
        let mut best = (f64::INFINITY, 0u16);
        for (i, o) in self.objects.iter().enumerate() {
            if let Some(t) = ray_box(origin, dir, &o.min, &o.max) {
                if t < best.0 {
                    best = (t, i as u16 + 1);
                }
            }
        }
        let r = &self.room;
        let mut exit = (f64::INFINITY, Surface::Floor);
        for a in 0..3 {
            if dir[a] == 0.0 {
                continue;
            }
            let (plane, surface) = if dir[a] > 0.0 {
                (r.max[a], [Surface::Wall(1), Surface::Wall(3), Surface::Ceiling][a])
            } else {
                (r.min[a], [Surface::Wall(0), Surface::Wall(2), Surface::Floor][a])
            };
            let t = (plane - origin[a]) / dir[a];
            if t < exit.0 {
                exit = (t, surface);
            }
        }
        if exit.0 <= best.0 {
            (exit.0, self.surface_instance(exit.1))
        } else {
            best
        }
    }
}

/// Entry distance of a ray into a closed box, for origins outside it.
fn ray_box(o: &Vector3<f64>, d: &Vector3<f64>, min: &[f64; 3], max: &[f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] < min[a] || o[a] > max[a] {
                return None;
            }
            continue;
        }
        let (mut near, mut far) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

fn color(id: u16) -> [u8; 3] {
    let h = (id as u32).wrapping_mul(2_654_435_761);
    [(h >> 24) as u8 | 0x40, (h >> 16) as u8 | 0x40, (h >> 8) as u8 | 0x40]
}

/// Tight box of a pixel set, a score of 1 and the centroid pulled onto the
/// nearest mask pixel when it falls outside.
fn detection_for(pixels: &[u32], cover: &[u32], class_id: u16, width: usize) -> Detection {
    let xy = |p: u32| ((p as usize % width) as f64, (p as usize / width) as f64);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &p in pixels.iter().chain(cover) {
        let (x, y) = xy(p);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let n = pixels.len() as f64;
    let (sx, sy) = pixels.iter().fold((0.0, 0.0), |(a, b), &p| {
        let (x, y) = xy(p);
        (a + x + 0.5, b + y + 0.5)
    });
    let (cx, cy) = (sx / n, sy / n);
    let under = (cy.floor() as usize) * width + cx.floor() as usize;
    let centroid = if pixels.binary_search(&(under as u32)).is_ok() {
        [cx, cy]
    } else {
        let &p = pixels
            .iter()
            .min_by(|&&a, &&b| {
                let d = |p: u32| {
                    let (x, y) = xy(p);
                    (x + 0.5 - cx).powi(2) + (y + 0.5 - cy).powi(2)
                };
                d(a).total_cmp(&d(b))
            })
            .expect("nonempty");
        let (x, y) = xy(p);
        [x + 0.5, y + 0.5]
    };
    Detection {
        class_id,
        score: 1.0,
        bbox: BoxF::new(x0, y0, x1 - x0 + 1.0, y1 - y0 + 1.0),
        mask_centroid: Some(centroid),
        mask: None,
    }
}

/// Voids every pixel within `radius` 4-steps of a different instance.
fn erode(labels: &LabelImage, instances: &Raster<u16>, radius: usize) -> LabelImage {
    let mut out = labels.clone();
    let (w, h) = labels.dims();
    let mut boundary = Raster::from_fn(w, h, |x, y| {
        let id = *instances.get(x, y);
        (x > 0 && *instances.get(x - 1, y) != id)
            || (y > 0 && *instances.get(x, y - 1) != id)
            || (x + 1 < w && *instances.get(x + 1, y) != id)
            || (y + 1 < h && *instances.get(x, y + 1) != id)
    });
    for _ in 1..radius {
        boundary = Raster::from_fn(w, h, |x, y| {
            *boundary.get(x, y)
                || (x > 0 && *boundary.get(x - 1, y))
                || (y > 0 && *boundary.get(x, y - 1))
                || (x + 1 < w && *boundary.get(x + 1, y))
                || (y + 1 < h && *boundary.get(x, y + 1))
        });
    }
    if radius > 0 {
        for (o, &b) in out.as_mut_slice().iter_mut().zip(boundary.as_slice()) {
            if b {
                *o = VOID;
            }
        }
    }
    out
}

/// Renders every camera of `spec`.
pub fn render_scene(spec: &SceneSpec, vocab: &Vocabulary, options: &RenderOptions) -> Result<RenderedScene> {
    spec.validate(vocab)?;
    let classes = spec.instance_classes(vocab)?;
    let intr = spec.intrinsics;
    let (w, h) = intr.dims();
    let mut frames: Vec<RenderedFrame> = spec
        .cameras
        .par_iter()
        .map(|cam| render_frame(spec, cam, &classes, vocab, options))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, options.feature_sigma).map_err(|e| Error::invalid("feature sigma", e.to_string()))?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut segment_classes = BTreeMap::new();
    for f in &frames {
        for s in f.segments.segments() {
            let inst = f.instances.as_slice()[s.pixels()[0] as usize];
            let class = classes[inst as usize];
            let key = SegmentKey {
                frame: f.id.clone(),
                segment: s.id,
            };
            for v in class_center(class, options.feature_dim) {
                data.push(v + (noise.sample(&mut rng) * 1.0) as f32);
            }
            segment_classes.insert(key.clone(), class);
            ids.push(key);
        }
    }
    let rows = ids.len();
    let features = FeatureTable::new(ids, FloatMatrix::new(rows, options.feature_dim, data)?)?;

    if options.embeddings {
        for f in &mut frames {
            let mut data = Vec::with_capacity(w * h * options.feature_dim);
            for &inst in f.instances.as_slice() {
                data.extend(class_center(classes[inst as usize], options.feature_dim));
            }
            f.embeddings = Some(FloatMatrix::new(w * h, options.feature_dim, data)?);
        }
    }
    Ok(RenderedScene {
        spec: spec.clone(),
        intrinsics: intr,
        instance_classes: classes,
        frames,
        features,
        segment_classes,
    })
}

fn render_frame(
    spec: &SceneSpec,
    cam: &CameraSpec,
    classes: &[u16],
    vocab: &Vocabulary,
    options: &RenderOptions,
) -> Result<RenderedFrame> {
    let intr = spec.intrinsics;
    let (w, h) = intr.dims();
    let pose = cam.pose()?;
    let origin = *pose.translation();
    let mut depth = DepthImage::filled(w, h, 0.0);
    let mut instances = Raster::filled(w, h, 0u16);
    for v in 0..h {
        for u in 0..w {
            let d_cam = Vector3::new((u as f64 - intr.cx) / intr.fx, (v as f64 - intr.cy) / intr.fy, 1.0);
            let dir = pose.rotation() * d_cam;
            let (t, id) = spec.cast(&origin, &dir);
            // The camera-frame direction has unit z, so t is the z-depth.
            depth.set(u, v, t);
            instances.set(u, v, id);
        }
    }
    let ground_truth = instances.map(|&i| classes[i as usize]);
    let mut semantic = erode(&ground_truth, &instances, options.erode);
    let segments = SegmentSet::from_components(&instances, Some(0));

    let mut per_instance: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
    for (p, &i) in instances.as_slice().iter().enumerate() {
        per_instance.entry(i).or_default().push(p as u32);
    }
    let mut det_classes: BTreeMap<u16, u16> = (1..=spec.objects.len() as u16)
        .map(|i| (i, classes[i as usize]))
        .collect();
    for c in spec.corruption.iter().filter(|c| c.frame == cam.id) {
        let wrong = class_of(vocab, &c.class)?;
        match c.region {
            CorruptRegion::Object { object } => {
                let inst = RenderedScene::object_instance(object);
                for &p in per_instance.get(&inst).map(Vec::as_slice).unwrap_or(&[]) {
                    semantic.as_mut_slice()[p as usize] = wrong;
                }
                det_classes.insert(inst, wrong);
            }
            CorruptRegion::Rect { x, y, w: rw, h: rh } => {
                for yy in y..(y + rh).min(h) {
                    for xx in x..(x + rw).min(w) {
                        semantic.set(xx, yy, wrong);
                    }
                }
            }
        }
    }

    let mut dets: Vec<(usize, u16, Detection)> = Vec::new();
    for (i, o) in spec.objects.iter().enumerate() {
        let inst = RenderedScene::object_instance(i);
        let Some(pixels) = per_instance.get(&inst) else {
            continue;
        };
        if vocab.is_background(classes[inst as usize]) {
            continue;
        }
        let _ = o;
        let cover: Vec<u32> = spec
            .objects
            .iter()
            .enumerate()
            .filter(|(_, c)| c.parent == Some(i))
            .flat_map(|(j, _)| {
                per_instance
                    .get(&RenderedScene::object_instance(j))
                    .cloned()
                    .unwrap_or_default()
            })
            .collect();
        dets.push((pixels.len(), inst, detection_for(pixels, &cover, det_classes[&inst], w)));
    }
    // Smaller objects first: they win contested pixels at equal scores.
    dets.sort_by_key(|&(area, inst, _)| (area, inst));
    let detections = DetectionSet {
        width: w,
        height: h,
        detections: dets.into_iter().map(|(_, _, d)| d).collect(),
    };
    Ok(RenderedFrame {
        id: cam.id.clone(),
        pose,
        depth,
        rgb: instances.map(|&i| color(i)),
        instances,
        ground_truth,
        semantic,
        segments,
        detections,
        embeddings: None,
    })
}

impl RenderedScene {
    /// Map-building inputs for every frame, labelled with the predicted
    /// stream or with ground truth.
    pub fn map_frames(&self, ground_truth: bool) -> Vec<MapFrame<'_>> {
        self.frames
            .iter()
            .map(|f| MapFrame {
                id: &f.id,
                depth: &f.depth,
                intrinsics: &self.intrinsics,
                pose: &f.pose,
                labels: Some(if ground_truth { &f.ground_truth } else { &f.semantic }),
                embeddings: f.embeddings.as_ref(),
            })
            .collect()
    }
}

/// The analytic top-down grid: cells whose center lies on a wall plane are
/// wall; otherwise the highest object footprint (closed) containing the
/// center decides; otherwise floor. Cells outside the room are void.
pub fn expected_grid(spec: &SceneSpec, vocab: &Vocabulary, config: &MapConfig) -> Result<SemanticGrid> {
    spec.validate(vocab)?;
    let r = &spec.room;
    let georef = match config.extent {
        Some(e) => GridGeoref {
            origin: e.origin,
            resolution: config.resolution,
            width: e.width,
            height: e.height,
        },
        None => GridGeoref::snapped(
            [r.min[0], r.min[1]],
            [r.max[0], r.max[1]],
            config.resolution,
            config.padding,
        ),
    };
    let floor = class_of(vocab, "floor")?;
    let wall = class_of(vocab, "wall")?;
    let eps = 1e-9;
    let voxel = |z: f64| (z.min(config.z_max) / config.resolution).floor().max(0.0) as u16 + 1;
    let mut cells = Raster::filled(georef.width, georef.height, VOID);
    let mut top = Raster::filled(georef.width, georef.height, 0u16);
    for y in 0..georef.height {
        for x in 0..georef.width {
            let [cx, cy] = georef.cell_center(crate::semmap::Cell::new(x, y));
            let inside = |lo: f64, hi: f64, v: f64| v >= lo - eps && v <= hi + eps;
            if !(inside(r.min[0], r.max[0], cx) && inside(r.min[1], r.max[1], cy)) {
                continue;
            }
            let on_wall = [(r.min[0], cx), (r.max[0], cx), (r.min[1], cy), (r.max[1], cy)]
                .iter()
                .any(|&(p, v)| (p - v).abs() <= eps);
            let (class, height) = if on_wall {
                (wall, config.z_max)
            } else {
                spec.objects
                    .iter()
                    .filter(|o| inside(o.min[0], o.max[0], cx) && inside(o.min[1], o.max[1], cy))
                    .max_by(|a, b| a.max[2].total_cmp(&b.max[2]))
                    .map_or((floor, 0.0), |o| {
                        (class_of(vocab, &o.class).expect("validated"), o.max[2])
                    })
            };
            cells.set(x, y, class);
            top.set(x, y, voxel(height));
        }
    }
    Ok(SemanticGrid {
        georef,
        classes: vocab.max_id(),
        cells,
        top_voxel: top,
    })
}

/// A room of `w × d` meters with `n` separated objects of assorted classes,
/// footprints on the 5 cm lattice and tops at distinct voxel centers.
pub fn random_room(id: &str, seed: u64, n: usize, room: [f64; 2]) -> SceneSpec {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = ["cabinet", "chair", "table", "sofa", "bed", "tv", "bottle", "plant"];
    let tops = [0.425, 0.575, 0.725, 0.875, 1.025, 1.175, 1.325, 1.475, 1.625];
    let lattice = |v: f64| (v / 0.05).round() * 0.05;
    let margin = 0.3;
    let mut objects: Vec<ObjectSpec> = Vec::new();
    let mut attempts = 0;
    while objects.len() < n && attempts < 10_000 {
        attempts += 1;
        let sx = lattice(rng.random_range(0.2..0.7));
        let sy = lattice(rng.random_range(0.2..0.7));
        let x0 = lattice(rng.random_range(margin..(room[0] - margin - sx).max(margin + 0.05)));
        let y0 = lattice(rng.random_range(margin..(room[1] - margin - sy).max(margin + 0.05)));
        let (x1, y1) = (x0 + sx, y0 + sy);
        if x1 > room[0] - margin + 1e-9 || y1 > room[1] - margin + 1e-9 {
            continue;
        }
        let clear = objects.iter().all(|o| {
            x0 >= o.max[0] + margin - 1e-9
                || x1 <= o.min[0] - margin + 1e-9
                || y0 >= o.max[1] + margin - 1e-9
                || y1 <= o.min[1] - margin + 1e-9
        });
        if !clear {
            continue;
        }
        objects.push(ObjectSpec {
            class: classes[(seed as usize + objects.len()) % classes.len()].to_string(),
            min: [x0, y0, 0.0],
            max: [x1, y1, tops[objects.len() % tops.len()]],
            parent: None,
        });
    }
    let room = RoomSpec {
        min: [0.0, 0.0, 0.0],
        max: [room[0], room[1], 2.5],
    };
    SceneSpec {
        id: id.to_string(),
        cameras: nadir_cameras(&room, 2.3, 0.5, &format!("{id}_f")),
        room,
        objects,
        intrinsics: default_intrinsics(),
        seed,
        corruption: Vec::new(),
    }
}

/// A room with cabinets against the far wall, each with small handles on
/// its front face, seen by cameras looking straight at them.
pub fn cabinet_wall(id: &str, seed: u64) -> SceneSpec {
    let room = RoomSpec {
        min: [0.0, 0.0, 0.0],
        max: [3.0, 3.0, 2.5],
    };
    let mut objects = Vec::new();
    for (i, x0) in [0.4, 1.2, 2.0].into_iter().enumerate() {
        let cab = objects.len();
        objects.push(ObjectSpec {
            class: "cabinet".into(),
            min: [x0, 2.5, 0.0],
            max: [x0 + 0.6, 3.0, 0.9],
            parent: None,
        });
        let handles: &[f64] = if i == 1 { &[0.15, 0.4] } else { &[0.25] };
        for &hx in handles {
            objects.push(ObjectSpec {
                class: "handle".into(),
                min: [x0 + hx, 2.47, 0.6],
                max: [x0 + hx + 0.06, 2.5, 0.66],
                parent: Some(cab),
            });
        }
    }
    let cameras = [0.9, 1.5, 2.1]
        .iter()
        .enumerate()
        .map(|(i, &x)| CameraSpec {
            id: format!("{id}_f{i:03}"),
            eye: [x, 0.9, 0.8],
            target: [x, 3.0, 0.55],
            up: [0.0, 0.0, 1.0],
        })
        .collect();
    SceneSpec {
        id: id.to_string(),
        room,
        objects,
        cameras,
        intrinsics: default_intrinsics(),
        seed,
        corruption: Vec::new(),
    }
}

/// A 4 × 3.5 m room with six pieces of furniture seen by a grid of
/// downward-looking cameras.
pub fn living_room(id: &str, seed: u64) -> SceneSpec {
    let object = |class: &str, min: [f64; 2], max: [f64; 2], top: f64| ObjectSpec {
        class: class.into(),
        min: [min[0], min[1], 0.0],
        max: [max[0], max[1], top],
        parent: None,
    };
    let room = RoomSpec {
        min: [0.0, 0.0, 0.0],
        max: [4.0, 3.5, 2.5],
    };
    SceneSpec {
        id: id.to_string(),
        cameras: nadir_cameras(&room, 2.3, 0.5, &format!("{id}_f")),
        objects: vec![
            object("sofa", [0.5, 0.5], [1.6, 1.2], 0.575),
            object("table", [2.0, 0.6], [2.8, 1.3], 0.725),
            object("bed", [0.5, 2.0], [1.8, 3.0], 0.475),
            object("cabinet", [2.4, 2.6], [3.2, 3.1], 1.225),
            object("tv", [3.3, 1.7], [3.6, 2.2], 1.025),
            object("plant", [2.2, 1.8], [2.5, 2.1], 0.975),
        ],
        room,
        intrinsics: default_intrinsics(),
        seed,
        corruption: Vec::new(),
    }
}

/// Renders [`living_room`] and [`cabinet_wall`] and writes them under `dir`.
pub fn standard_dataset(dir: &Path, options: &RenderOptions) -> Result<PathBuf> {
    let vocab = fixture_vocabulary();
    let scenes = [living_room("living", 11), cabinet_wall("kitchen", 12)]
        .iter()
        .map(|s| render_scene(s, &vocab, options))
        .collect::<Result<Vec<_>>>()?;
    write_dataset(&scenes, &vocab, dir)
}

/// Writes rendered scenes in the ingest formats plus a manifest, and
/// returns the manifest path.
pub fn write_dataset(scenes: &[RenderedScene], vocab: &Vocabulary, dir: &Path) -> Result<PathBuf> {
    vocab.save(&dir.join("vocabulary.json"))?;
    let dim = scenes.first().map_or(16, |s| s.features.dim());
    write_json(&dir.join("text_embeddings.json"), &text_embeddings(vocab, dim))?;
    let mut scene_files = Vec::new();
    for s in scenes {
        let sid = &s.spec.id;
        let sdir = dir.join(sid);
        write_json(&sdir.join("spec.json"), &s.spec)?;
        save_intrinsics(&s.intrinsics, &sdir.join("intrinsics.json"))?;
        s.features.save(&sdir.join("features.json"))?;
        let grid = expected_grid(&s.spec, vocab, &MapConfig::for_vocabulary(vocab))?;
        grid.save(&sdir, "gt_map")?;
        let mut frames = Vec::new();
        for f in &s.frames {
            let rel = |suffix: &str| format!("{sid}/{}_{suffix}", f.id);
            save_rgb_png(&f.rgb, &dir.join(rel("rgb.png")))?;
            save_depth(
                &f.depth,
                &dir.join(rel("depth.png")),
                crate::ingest::DEFAULT_DEPTH_SCALE,
            )?;
            save_pose(&f.pose, &dir.join(rel("pose.json")))?;
            save_label_image(&f.semantic, &dir.join(rel("semantic.png")))?;
            save_label_image(&f.ground_truth, &dir.join(rel("gt.png")))?;
            f.segments.save(&dir.join(rel("segments.json")))?;
            f.detections.save(&dir.join(rel("detections.json")))?;
            if let Some(e) = &f.embeddings {
                e.save(&dir.join(rel("embeddings.fseg")))?;
            }
            frames.push(FrameFile {
                id: f.id.clone(),
                rgb: Some(rel("rgb.png")),
                depth: Some(rel("depth.png")),
                pose: Some(rel("pose.json")),
                intrinsics: Some(format!("{sid}/intrinsics.json")),
                semantic: Some(rel("semantic.png")),
                segments: Some(rel("segments.json")),
                detections: Some(rel("detections.json")),
                manual_boxes: None,
                ground_truth: Some(rel("gt.png")),
                embeddings: f.embeddings.as_ref().map(|_| rel("embeddings.fseg")),
            });
        }
        scene_files.push(SceneFile {
            id: sid.clone(),
            features: Some(format!("{sid}/features.json")),
            frames,
        });
    }
    let manifest = ManifestFile {
        dataset: "box-world".into(),
        vocabulary: "vocabulary.json".into(),
        multiview: true,
        depth_scale: crate::ingest::DEFAULT_DEPTH_SCALE,
        text_embeddings: Some("text_embeddings.json".into()),
        provenance: [
            ("segmenter".to_string(), "instance connected components".to_string()),
            ("detector".to_string(), "tight instance boxes, score 1.0".to_string()),
            ("semantic".to_string(), "ground truth with boundary erosion".to_string()),
        ]
        .into(),
        scenes: scene_files,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}
