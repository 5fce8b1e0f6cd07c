//! Object-part discovery: segments inside container detections are
//! clustered on their features, and a chosen cluster is projected back to
//! the images as part masks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::features::{FeatureTable, FloatMatrix, SegmentKey};
use crate::ingest::files::{read_json, save_rgb_png, save_u16_png, write_json};
use crate::ingest::records::{DetectionSet, Segment, SegmentSet};
use crate::raster::Raster;

/// Minimum fraction of a segment's area inside a container box.
pub const CANDIDATE_FRACTION: f64 = 0.5;

/// A segment selected for clustering and the container detection holding it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub segment: u32,
    pub detection: usize,
}

/// Segments with at least half their area inside a `container`-class box, in
/// segment-id order. The first qualifying detection is recorded.
pub fn candidate_segments(segments: &SegmentSet, detections: Option<&DetectionSet>, container: u16) -> Vec<Candidate> {
    let Some(dets) = detections else {
        return Vec::new();
    };
    let boxes: Vec<(usize, _)> = dets
        .detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.class_id == container)
        .map(|(i, d)| (i, d.bbox.clamp_to(segments.width(), segments.height())))
        .collect();
    let mut out: Vec<Candidate> = segments
        .segments()
        .iter()
        .filter_map(|s| {
            boxes
                .iter()
                .find(|(_, b)| s.area_inside(b, segments.width()) as f64 >= CANDIDATE_FRACTION * s.area() as f64)
                .map(|&(detection, _)| Candidate {
                    segment: s.id,
                    detection,
                })
        })
        .collect();
    out.sort_by_key(|c| c.segment);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iters: usize,
    /// Converged once no centroid moves farther than this.
    pub tol: f64,
    /// Scale every row to unit L2 norm first.
    pub normalize: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            tol: 1e-6,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub seed: u64,
    pub dim: usize,
    /// `k` rows of `dim` values.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, ending with the final one.
    pub inertia_history: Vec<f64>,
}

impl Clustering {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn prepare(features: &FloatMatrix, normalize: bool) -> Vec<Vec<f64>> {
    (0..features.rows)
        .map(|i| {
            let row: Vec<f64> = features.row(i).iter().map(|&v| v as f64).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if normalize && norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect()
}

/// Samples an index with probability proportional to `weights`, uniformly
/// when they are all zero.
fn sample_weighted(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return rng.random_range(0..weights.len());
    }
    let r = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if r < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).expect("positive total")
}

/// Greedy k-means++ seeding: each new center is the best of `2 + ln k`
/// D²-weighted draws by resulting potential.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let c = sample_weighted(&closest, rng);
            let updated: Vec<f64> = points
                .iter()
                .zip(&closest)
                .map(|(p, &d)| d.min(sq_dist(p, &points[c])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, c, updated));
            }
        }
        let (_, c, updated) = best.expect("at least two trials");
        centroids.push(points[c].clone());
        closest = updated;
    }
    centroids
}

/// Lloyd's algorithm from a k-means++ start; deterministic per seed.
pub fn kmeans(features: &FloatMatrix, k: usize, seed: u64, config: &KMeansConfig) -> Result<Clustering> {
    let n = features.rows;
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    if k > n {
        return Err(Error::TooManyClusters { k, rows: n });
    }
    let dim = features.dim;
    let points = prepare(features, config.normalize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let mut dist = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            (assignments[i], dist[i]) = nearest(p, &centroids);
        }
        let inertia: f64 = dist.iter().sum();
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev + 1e-9 * prev.max(1.0),
                "inertia rose from {prev} to {inertia}"
            );
        }
        history.push(inertia);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            let next = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                // Re-seed at the point currently farthest from its centroid.
                let far = (0..n).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                dist[far] = 0.0;
                points[far].clone()
            };
            shift = shift.max(sq_dist(&next, &centroids[j]).sqrt());
            centroids[j] = next;
        }
        if shift < config.tol {
            break;
        }
    }

    let mut inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (a, d) = nearest(p, &centroids);
        assignments[i] = a;
        inertia += d;
    }
    history.push(inertia);
    Ok(Clustering {
        k,
        seed,
        dim,
        centroids,
        assignments,
        inertia,
        iterations,
        inertia_history: history,
    })
}

/// The human choice of which cluster holds the part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSelection {
    pub cluster: usize,
    pub part: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMask {
    pub frame: String,
    pub segment: u32,
    /// Index of the containing detection in the frame's detection file.
    pub detection: Option<usize>,
    /// Ascending linear pixel indices; a copy of the source segment's pixels.
    #[serde(skip)]
    pub pixels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartAnnotationSet {
    pub part: String,
    pub cluster: usize,
    pub parts: Vec<PartMask>,
}

/// Turns every member of `selection.cluster` into a part mask in its source
/// image. `ids` labels the clustered rows; `containers` maps them to their
/// container detection.
pub fn backproject_cluster(
    clustering: &Clustering,
    ids: &[SegmentKey],
    selection: &ClusterSelection,
    segments: &BTreeMap<String, SegmentSet>,
    containers: &BTreeMap<SegmentKey, usize>,
) -> Result<PartAnnotationSet> {
    if selection.cluster >= clustering.k {
        return Err(Error::InvalidCluster {
            index: selection.cluster,
            k: clustering.k,
        });
    }
    if ids.len() != clustering.assignments.len() {
        return Err(Error::invalid(
            "clustering",
            format!("{} ids for {} assignments", ids.len(), clustering.assignments.len()),
        ));
    }
    let mut parts = Vec::new();
    for i in clustering.members(selection.cluster) {
        let key = &ids[i];
        let seg = segments
            .get(&key.frame)
            .and_then(|s| s.get(key.segment))
            .ok_or_else(|| Error::invalid("clustering", format!("unknown segment {}/{}", key.frame, key.segment)))?;
        parts.push(PartMask {
            frame: key.frame.clone(),
            segment: key.segment,
            detection: containers.get(key).copied(),
            pixels: seg.pixels().to_vec(),
        });
    }
    parts.sort_by(|a, b| (&a.frame, a.segment).cmp(&(&b.frame, b.segment)));
    Ok(PartAnnotationSet {
        part: selection.part.clone(),
        cluster: selection.cluster,
        parts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartIndexEntry {
    /// Value of this part in the frame's mask PNG.
    pub id: u16,
    pub segment: u32,
    pub detection: Option<usize>,
    pub area: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartFrameIndex {
    pub mask: String,
    pub parts: Vec<PartIndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartIndexFile {
    pub part: String,
    pub cluster: usize,
    pub frames: BTreeMap<String, PartFrameIndex>,
}

impl PartAnnotationSet {
    pub fn frames(&self) -> BTreeMap<&str, Vec<&PartMask>> {
        let mut out: BTreeMap<&str, Vec<&PartMask>> = BTreeMap::new();
        for p in &self.parts {
            out.entry(p.frame.as_str()).or_default().push(p);
        }
        out
    }

    /// Writes `<frame>_parts.png` per image (part `i` stored as `i + 1`) and
    /// `parts.json` into `dir`.
    pub fn save(&self, dir: &Path, dims: &BTreeMap<String, (usize, usize)>) -> Result<PathBuf> {
        let mut frames = BTreeMap::new();
        for (frame, parts) in self.frames() {
            let &(w, h) = dims
                .get(frame)
                .ok_or_else(|| Error::invalid("part set", format!("no dimensions for frame `{frame}`")))?;
            let mut raster = Raster::filled(w, h, 0u16);
            let mut entries = Vec::new();
            for (i, p) in parts.iter().enumerate() {
                let id = i as u16 + 1;
                for &px in &p.pixels {
                    raster.as_mut_slice()[px as usize] = id;
                }
                entries.push(PartIndexEntry {
                    id,
                    segment: p.segment,
                    detection: p.detection,
                    area: p.pixels.len(),
                });
            }
            let mask = format!("{frame}_parts.png");
            save_u16_png(&raster, &dir.join(&mask))?;
            frames.insert(frame.to_string(), PartFrameIndex { mask, parts: entries });
        }
        let index = dir.join("parts.json");
        write_json(
            &index,
            &PartIndexFile {
                part: self.part.clone(),
                cluster: self.cluster,
                frames,
            },
        )?;
        Ok(index)
    }

    /// Reads `parts.json` and the masks it names.
    pub fn load(dir: &Path) -> Result<Self> {
        let doc: PartIndexFile = read_json(&dir.join("parts.json"))?;
        let mut parts = Vec::new();
        for (frame, entry) in &doc.frames {
            let raster = crate::ingest::files::load_u16_png(&dir.join(&entry.mask))?;
            for e in &entry.parts {
                let pixels = raster
                    .as_slice()
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v == e.id)
                    .map(|(i, _)| i as u32)
                    .collect();
                parts.push(PartMask {
                    frame: frame.clone(),
                    segment: e.segment,
                    detection: e.detection,
                    pixels,
                });
            }
        }
        Ok(Self {
            part: doc.part,
            cluster: doc.cluster,
            parts,
        })
    }
}

/// One montage thumbnail: optional source RGB, the segment, and the image
/// width its pixel indices refer to.
pub type MontageItem<'a> = (Option<&'a Raster<[u8; 3]>>, &'a Segment, usize);

/// A grid of `tile`×`tile` thumbnails, `columns` per row. Each thumbnail is
/// the segment's bounding box cropped from `rgb` (or a white silhouette
/// without it), resampled by nearest neighbour; pixels outside the segment
/// are dimmed.
pub fn cluster_montage(items: &[MontageItem<'_>], tile: usize, columns: usize) -> Raster<[u8; 3]> {
    let columns = columns.max(1);
    let rows = items.len().div_ceil(columns).max(1);
    let mut out = Raster::filled(columns * tile, rows * tile, [32u8, 32, 32]);
    for (n, &(rgb, seg, width)) in items.iter().enumerate() {
        let [bx, by, bw, bh] = seg.bbox().map(|v| v as usize);
        let side = bw.max(bh);
        let (ox, oy) = ((n % columns) * tile, (n / columns) * tile);
        for ty in 0..tile {
            for tx in 0..tile {
                let sx = bx + tx * side / tile;
                let sy = by + ty * side / tile;
                if sx >= bx + bw || sy >= by + bh {
                    continue;
                }
                let inside = seg.contains((sy * width + sx) as u32);
                let base = rgb.map_or(if inside { [255; 3] } else { [0; 3] }, |r| *r.get(sx, sy));
                let px = if inside { base } else { base.map(|c| c / 4) };
                out.set(ox + tx, oy + ty, px);
            }
        }
    }
    out
}

pub fn save_montage(montage: &Raster<[u8; 3]>, path: &Path) -> Result<()> {
    save_rgb_png(montage, path)
}

/// Convenience: k-means over a feature table's rows.
pub fn cluster_table(table: &FeatureTable, k: usize, seed: u64, config: &KMeansConfig) -> Result<Clustering> {
    kmeans(&table.features, k, seed, config)
}
