//! Top-down semantic and embedding maps.
//!
//! World z is up with the scene floor at z = 0. Cell `(x, y)` of a grid with
//! origin `(ox, oy)` and resolution `res` covers
//! `[ox + x·res, ox + (x+1)·res) × [oy + y·res, oy + (y+1)·res)`; rasters store
//! it at column `x`, row `y`. Heights are binned into voxels of the same size,
//! voxel `k` covering `[k·res, (k+1)·res)`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{unproject, Intrinsics, Pose};
use crate::ingest::features::FloatMatrix;
use crate::ingest::files::{load_u16_png, read_json, save_u16_png, write_json};
use crate::ingest::vocab::{Vocabulary, VOID};
use crate::raster::{check_dims, DepthImage, LabelImage, Raster};

pub const DEFAULT_RESOLUTION: f64 = 0.05;

/// A map cell: column `x`, row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Raster-scan key: row first.
    pub fn raster_key(&self) -> (usize, usize) {
        (self.y, self.x)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{};{}", self.x, self.y)
    }
}

/// Placement and size of a grid in the world plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridExtent {
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub resolution: f64,
    pub z_min: f64,
    pub z_max: f64,
    /// Floor-class points ignore `z_min` so that floor cells exist.
    pub floor_class: Option<u16>,
    /// Ceiling-class points are dropped entirely.
    pub ceiling_class: Option<u16>,
    /// Fixed placement; when absent the grid is fitted to the points' bounding
    /// box plus `padding` (see [`GridGeoref::snapped`]).
    pub extent: Option<GridExtent>,
    pub padding: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            z_min: 0.05,
            z_max: 1.8,
            floor_class: None,
            ceiling_class: None,
            extent: None,
            padding: 0.5,
        }
    }
}

impl MapConfig {
    pub fn for_vocabulary(vocab: &Vocabulary) -> Self {
        Self {
            floor_class: vocab.floor(),
            ceiling_class: vocab.ceiling(),
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::invalid("map config", "resolution must be positive"));
        }
        if !(self.z_min <= self.z_max) {
            return Err(Error::invalid("map config", "z_min exceeds z_max"));
        }
        Ok(())
    }

    fn keeps(&self, z: f64, class: u16) -> bool {
        if Some(class) == self.ceiling_class && class != VOID {
            return false;
        }
        let exempt = class != VOID && Some(class) == self.floor_class;
        z <= self.z_max && (exempt || z >= self.z_min)
    }

    fn voxel(&self, z: f64) -> u16 {
        (z / self.resolution).floor().clamp(0.0, (u16::MAX - 1) as f64) as u16
    }
}

/// Georeference shared by both grid kinds; persisted as the JSON sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeoref {
    pub origin: [f64; 2],
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
}

impl GridGeoref {
    pub fn extent(&self) -> GridExtent {
        GridExtent {
            origin: self.origin,
            width: self.width,
            height: self.height,
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        let cx = ((x - self.origin[0]) / self.resolution).floor();
        let cy = ((y - self.origin[1]) / self.resolution).floor();
        (cx >= 0.0 && cy >= 0.0 && cx < self.width as f64 && cy < self.height as f64)
            .then(|| Cell::new(cx as usize, cy as usize))
    }

    pub fn cell_center(&self, c: Cell) -> [f64; 2] {
        [
            self.origin[0] + (c.x as f64 + 0.5) * self.resolution,
            self.origin[1] + (c.y as f64 + 0.5) * self.resolution,
        ]
    }

    /// Grid covering `[lo, hi]` plus `padding`, snapped so that cell centers
    /// sit on multiples of the resolution. Surfaces aligned to that lattice
    /// then fall mid-cell, far from any cell boundary.
    pub fn snapped(lo: [f64; 2], hi: [f64; 2], resolution: f64, padding: f64) -> Self {
        let pad = (padding / resolution).round() as i64;
        let first = |a: usize| (lo[a] / resolution).round() as i64 - pad;
        let last = |a: usize| (hi[a] / resolution).round() as i64 + pad;
        Self {
            origin: [
                (first(0) as f64 - 0.5) * resolution,
                (first(1) as f64 - 0.5) * resolution,
            ],
            resolution,
            width: (last(0) - first(0) + 1).max(1) as usize,
            height: (last(1) - first(1) + 1).max(1) as usize,
        }
    }

    fn fit(points: impl Iterator<Item = [f64; 2]>, config: &MapConfig) -> Self {
        let res = config.resolution;
        if let Some(e) = config.extent {
            return Self {
                origin: e.origin,
                resolution: res,
                width: e.width,
                height: e.height,
            };
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if lo[0] > hi[0] {
            return Self {
                origin: [0.0; 2],
                resolution: res,
                width: 1,
                height: 1,
            };
        }
        Self::snapped(lo, hi, res, config.padding)
    }
}

/// One posed RGB-D frame contributing to a map.
#[derive(Debug, Clone, Copy)]
pub struct MapFrame<'a> {
    pub id: &'a str,
    pub depth: &'a DepthImage,
    pub intrinsics: &'a Intrinsics,
    pub pose: &'a Pose,
    pub labels: Option<&'a LabelImage>,
    /// One row per pixel, row-major.
    pub embeddings: Option<&'a FloatMatrix>,
}

/// Ordered by frame id so that reductions do not depend on input order.
fn sorted<'a, 'b>(frames: &'b [MapFrame<'a>]) -> Vec<&'b MapFrame<'a>> {
    let mut v: Vec<_> = frames.iter().collect();
    v.sort_by(|a, b| a.id.cmp(b.id));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    pub georef: GridGeoref,
    /// Number of vocabulary classes; every nonzero cell is ≤ this.
    pub classes: u16,
    pub cells: LabelImage,
    /// Top occupied voxel per cell plus one; 0 for empty cells.
    pub top_voxel: Raster<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct WorldPoint {
    x: f64,
    y: f64,
    z: f64,
    class_id: u16,
}

fn labeled_points(frame: &MapFrame<'_>) -> Result<Vec<WorldPoint>> {
    if frame.labels.is_none() {
        return Err(Error::MissingFrameData {
            frame: frame.id.to_string(),
            what: "semantic labels".into(),
        });
    }
    let cloud = unproject(frame.id, frame.depth, frame.intrinsics, frame.pose, frame.labels)?;
    Ok(cloud
        .points
        .iter()
        .map(|p| WorldPoint {
            x: p.position.x,
            y: p.position.y,
            z: p.position.z,
            class_id: p.class_id,
        })
        .collect())
}

/// Top-voxel majority map of the labeled frames.
pub fn build_semantic_grid(frames: &[MapFrame<'_>], config: &MapConfig, classes: u16) -> Result<SemanticGrid> {
    config.validate()?;
    let frames = sorted(frames);
    let per_frame: Vec<Vec<WorldPoint>> = frames
        .par_iter()
        .map(|f| {
            labeled_points(f).map(|pts| {
                pts.into_iter()
                    .filter(|p| p.class_id != VOID && config.keeps(p.z, p.class_id))
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    let georef = GridGeoref::fit(per_frame.iter().flatten().map(|p| [p.x, p.y]), config);
    let (w, h) = (georef.width, georef.height);
    let mut top = Raster::filled(w, h, 0u16);
    let mut votes: Vec<BTreeMap<u16, u32>> = vec![BTreeMap::new(); w * h];
    for p in per_frame.iter().flatten() {
        let Some(c) = georef.cell_of(p.x, p.y) else {
            continue;
        };
        let k = config.voxel(p.z) + 1;
        let i = top.index(c.x, c.y);
        let current = top.as_slice()[i];
        if k > current {
            top.as_mut_slice()[i] = k;
            votes[i].clear();
        }
        if k >= current {
            *votes[i].entry(p.class_id).or_insert(0) += 1;
        }
    }
    let cells = Raster::from_vec(
        w,
        h,
        votes
            .iter()
            .map(|v| {
                // First maximum in ascending class order: ties go to the lowest id.
                v.iter()
                    .fold((VOID, 0), |best, (&c, &n)| if n > best.1 { (c, n) } else { best })
                    .0
            })
            .collect(),
    )?;
    Ok(SemanticGrid {
        georef,
        classes,
        cells,
        top_voxel: top,
    })
}

/// Cells equal to `class_id`, in raster-scan order.
pub fn localize_class(grid: &SemanticGrid, class_id: u16) -> Vec<Cell> {
    let w = grid.cells.width();
    grid.cells
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == class_id)
        .map(|(i, _)| Cell::new(i % w, i / w))
        .collect()
}

impl SemanticGrid {
    pub fn get(&self, c: Cell) -> u16 {
        *self.cells.get(c.x, c.y)
    }

    /// Height of the top of the highest occupied voxel, if any.
    pub fn top_height(&self, c: Cell) -> Option<f64> {
        match *self.top_voxel.get(c.x, c.y) {
            0 => None,
            k => Some(k as f64 * self.georef.resolution),
        }
    }

    pub fn detected_classes(&self) -> Vec<u16> {
        let mut seen: Vec<u16> = self.cells.as_slice().iter().copied().filter(|&c| c != VOID).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn paths(dir: &Path, stem: &str) -> [PathBuf; 3] {
        [
            dir.join(format!("{stem}.png")),
            dir.join(format!("{stem}_height.png")),
            dir.join(format!("{stem}.json")),
        ]
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let [labels, height, meta] = Self::paths(dir, stem);
        save_u16_png(&self.cells, &labels)?;
        save_u16_png(&self.top_voxel, &height)?;
        write_json(
            &meta,
            &SemanticGridFile {
                georef: self.georef,
                classes: self.classes,
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let [labels, height, meta] = Self::paths(dir, stem);
        let doc: SemanticGridFile = read_json(&meta)?;
        let cells = load_u16_png(&labels)?;
        let top_voxel = load_u16_png(&height)?;
        let dims = (doc.georef.width, doc.georef.height);
        check_dims("semantic grid", dims, cells.dims())?;
        check_dims("top voxel record", dims, top_voxel.dims())?;
        if let Some(&bad) = cells.as_slice().iter().find(|&&c| c > doc.classes) {
            return Err(Error::Malformed {
                file: labels,
                field: "cells".into(),
                reason: format!("class {bad} exceeds N = {}", doc.classes),
            });
        }
        Ok(Self {
            georef: doc.georef,
            classes: doc.classes,
            cells,
            top_voxel,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticGridFile {
    #[serde(flatten)]
    pub georef: GridGeoref,
    pub classes: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid {
    pub georef: GridGeoref,
    pub dim: usize,
    pub counts: Raster<u32>,
    /// `width * height * dim` values; zero where the count is zero.
    pub values: Vec<f32>,
}

/// Per-cell mean of every in-band pixel embedding.
pub fn build_embedding_grid(frames: &[MapFrame<'_>], config: &MapConfig) -> Result<EmbeddingGrid> {
    config.validate()?;
    let frames = sorted(frames);
    let mut dim = None;
    for f in &frames {
        let e = f.embeddings.ok_or_else(|| Error::MissingFrameData {
            frame: f.id.to_string(),
            what: "pixel embeddings".into(),
        })?;
        if e.rows != f.depth.len() {
            return Err(Error::invalid(
                "embeddings",
                format!("frame `{}` has {} rows for {} pixels", f.id, e.rows, f.depth.len()),
            ));
        }
        match dim {
            None => dim = Some(e.dim),
            Some(d) if d != e.dim => {
                return Err(Error::invalid(
                    "embeddings",
                    format!("frame `{}` has dimension {}, expected {d}", f.id, e.dim),
                ))
            }
            _ => {}
        }
    }
    let dim = dim.unwrap_or(0);

    // (x, y, pixel row) per kept pixel, in pixel order.
    let per_frame: Vec<Vec<(f64, f64, usize)>> = frames
        .par_iter()
        .map(|f| -> Result<Vec<(f64, f64, usize)>> {
            check_dims("depth", f.intrinsics.dims(), f.depth.dims())?;
            let mut out = Vec::new();
            let w = f.intrinsics.width;
            for (i, &d) in f.depth.as_slice().iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                let (u, v) = ((i % w) as f64, (i / w) as f64);
                let cam = nalgebra::Vector3::new(
                    d * (u - f.intrinsics.cx) / f.intrinsics.fx,
                    d * (v - f.intrinsics.cy) / f.intrinsics.fy,
                    d,
                );
                let p = f.pose.camera_to_world(&cam);
                let class = f.labels.map_or(VOID, |l| l.as_slice()[i]);
                if config.keeps(p.z, class) {
                    out.push((p.x, p.y, i));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let georef = GridGeoref::fit(per_frame.iter().flatten().map(|&(x, y, _)| [x, y]), config);
    let cells = georef.width * georef.height;
    let mut counts = Raster::filled(georef.width, georef.height, 0u32);
    let mut sums = vec![0f64; cells * dim];
    for (f, pts) in frames.iter().zip(&per_frame) {
        let e = f.embeddings.expect("checked above");
        for &(x, y, row) in pts {
            let Some(c) = georef.cell_of(x, y) else {
                continue;
            };
            let i = counts.index(c.x, c.y);
            counts.as_mut_slice()[i] += 1;
            for (s, &v) in sums[i * dim..(i + 1) * dim].iter_mut().zip(e.row(row)) {
                *s += v as f64;
            }
        }
    }
    let values = sums
        .chunks(dim.max(1))
        .zip(counts.as_slice())
        .flat_map(|(s, &n)| s.iter().map(move |&v| if n == 0 { 0.0 } else { (v / n as f64) as f32 }))
        .collect();
    Ok(EmbeddingGrid {
        georef,
        dim,
        counts,
        values,
    })
}

/// Cell with the largest inner product against `query` among populated
/// cells; ties go to the raster-scan-first cell.
pub fn query_embedding_grid(grid: &EmbeddingGrid, query: &[f32]) -> Result<Cell> {
    if query.len() != grid.dim {
        return Err(Error::invalid(
            "query",
            format!("dimension {} does not match grid dimension {}", query.len(), grid.dim),
        ));
    }
    let w = grid.georef.width;
    let mut best: Option<(usize, f64)> = None;
    for (i, &n) in grid.counts.as_slice().iter().enumerate() {
        if n == 0 {
            continue;
        }
        let dot: f64 = grid.cell(i).iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum();
        if best.is_none_or(|(_, s)| dot > s) {
            best = Some((i, dot));
        }
    }
    best.map(|(i, _)| Cell::new(i % w, i / w)).ok_or(Error::EmptyGrid)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingGridFile {
    #[serde(flatten)]
    pub georef: GridGeoref,
    pub dim: usize,
    pub payload: String,
    /// `[x, y, count]` per populated cell, in payload row order.
    pub cells: Vec<[usize; 3]>,
}

impl EmbeddingGrid {
    fn cell(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, c: Cell) -> &[f32] {
        self.cell(self.counts.index(c.x, c.y))
    }

    pub fn count(&self, c: Cell) -> u32 {
        *self.counts.get(c.x, c.y)
    }

    pub fn paths(dir: &Path, stem: &str) -> [PathBuf; 2] {
        [dir.join(format!("{stem}.fseg")), dir.join(format!("{stem}.json"))]
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let [payload, index] = Self::paths(dir, stem);
        let w = self.georef.width;
        let mut cells = Vec::new();
        let mut data = Vec::new();
        for (i, &n) in self.counts.as_slice().iter().enumerate() {
            if n > 0 {
                cells.push([i % w, i / w, n as usize]);
                data.extend_from_slice(self.cell(i));
            }
        }
        FloatMatrix::new(cells.len(), self.dim, data)?.save(&payload)?;
        write_json(
            &index,
            &EmbeddingGridFile {
                georef: self.georef,
                dim: self.dim,
                payload: format!("{stem}.fseg"),
                cells,
            },
        )
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let [_, index] = Self::paths(dir, stem);
        let doc: EmbeddingGridFile = read_json(&index)?;
        let m = FloatMatrix::load(&dir.join(&doc.payload))?;
        let malformed = |reason: String| Error::Malformed {
            file: index.clone(),
            field: "cells".into(),
            reason,
        };
        if m.rows != doc.cells.len() || (m.rows > 0 && m.dim != doc.dim) {
            return Err(malformed(format!(
                "{} cells but payload is {}x{}",
                doc.cells.len(),
                m.rows,
                m.dim
            )));
        }
        let (w, h) = (doc.georef.width, doc.georef.height);
        let mut counts = Raster::filled(w, h, 0u32);
        let mut values = vec![0f32; w * h * doc.dim];
        for (row, &[x, y, n]) in doc.cells.iter().enumerate() {
            if x >= w || y >= h || n == 0 {
                return Err(malformed(format!("bad cell entry [{x}, {y}, {n}]")));
            }
            let i = counts.index(x, y);
            counts.as_mut_slice()[i] = n as u32;
            values[i * doc.dim..(i + 1) * doc.dim].copy_from_slice(m.row(row));
        }
        Ok(Self {
            georef: doc.georef,
            dim: doc.dim,
            counts,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel(depth: f64, eye: [f64; 3]) -> (DepthImage, Intrinsics, Pose) {
        let intr = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
        let pose = Pose::look_at(
            nalgebra::Vector3::from(eye),
            nalgebra::Vector3::new(eye[0], eye[1], 0.0),
            nalgebra::Vector3::new(0.0, 1.0, 0.0),
        )
        .unwrap();
        (DepthImage::filled(1, 1, depth), intr, pose)
    }

    fn fixed(w: usize, h: usize) -> MapConfig {
        MapConfig {
            extent: Some(GridExtent {
                origin: [0.0, 0.0],
                width: w,
                height: h,
            }),
            ..MapConfig::default()
        }
    }

    #[test]
    fn single_point_lands_in_floor_division_cell() {
        let (d, intr, pose) = one_pixel(1.48, [0.07, 0.12, 2.0]);
        let labels = LabelImage::filled(1, 1, 4);
        let f = MapFrame {
            id: "a",
            depth: &d,
            intrinsics: &intr,
            pose: &pose,
            labels: Some(&labels),
            embeddings: None,
        };
        let g = build_semantic_grid(&[f], &fixed(4, 4), 5).unwrap();
        assert_eq!(localize_class(&g, 4), vec![Cell::new(1, 2)]);
        assert!((g.top_height(Cell::new(1, 2)).unwrap() - 0.55).abs() < 1e-12);
        assert!(localize_class(&g, 3).is_empty());
    }

    #[test]
    fn top_voxel_majority_and_ties() {
        // Four frames at the same spot: chair ×3 and table ×1 in the top voxel,
        // plus a lower sofa point that must not count.
        let mk = |z: f64| one_pixel(2.0 - z, [0.01, 0.01, 2.0]);
        let data = [
            (0.51, 3u16),
            (0.52, 3),
            (0.53, 3),
            (0.54, 7),
            (0.2, 9),
            (0.21, 9),
            (0.22, 9),
            (0.23, 9),
        ];
        let owned: Vec<_> = data
            .iter()
            .map(|&(z, c)| (mk(z), LabelImage::filled(1, 1, c)))
            .collect();
        let ids: Vec<String> = (0..owned.len()).map(|i| format!("f{i}")).collect();
        let frames: Vec<_> = owned
            .iter()
            .zip(&ids)
            .map(|(((d, i, p), l), id)| MapFrame {
                id,
                depth: d,
                intrinsics: i,
                pose: p,
                labels: Some(l),
                embeddings: None,
            })
            .collect();
        let g = build_semantic_grid(&frames, &fixed(1, 1), 10).unwrap();
        assert_eq!(g.get(Cell::new(0, 0)), 3);

        let tie = [&frames[0], &frames[3]].map(|f| *f);
        let g = build_semantic_grid(&tie, &fixed(1, 1), 10).unwrap();
        assert_eq!(g.get(Cell::new(0, 0)), 3);

        let mut rev = frames.clone();
        rev.reverse();
        assert_eq!(
            build_semantic_grid(&rev, &fixed(1, 1), 10)
                .unwrap()
                .get(Cell::new(0, 0)),
            3
        );
    }

    #[test]
    fn snapped_extent() {
        let g = GridGeoref::snapped([1e-12, -1e-12], [4.0, 3.0 - 1e-12], 0.05, 0.5);
        assert!((g.origin[0] + 0.525).abs() < 1e-12 && (g.origin[1] + 0.525).abs() < 1e-12);
        assert_eq!((g.width, g.height), (101, 81));
        assert_eq!(g.cell_of(0.0, 0.0), Some(Cell::new(10, 10)));
        assert_eq!(g.cell_of(0.3, 0.024), Some(Cell::new(16, 10)));
    }

    #[test]
    fn band_and_special_classes() {
        let floor_cfg = MapConfig {
            floor_class: Some(1),
            ceiling_class: Some(2),
            ..fixed(1, 1)
        };
        for (z, class, kept) in [
            (0.0, 1, true),
            (0.0, 5, false),
            (2.5, 2, false),
            (1.0, 2, false),
            (1.0, 5, true),
            (1.9, 5, false),
        ] {
            assert_eq!(floor_cfg.keeps(z, class), kept, "z={z} class={class}");
        }
    }

    fn emb_frame<'a>(
        id: &'a str,
        d: &'a DepthImage,
        i: &'a Intrinsics,
        p: &'a Pose,
        e: &'a FloatMatrix,
    ) -> MapFrame<'a> {
        MapFrame {
            id,
            depth: d,
            intrinsics: i,
            pose: p,
            labels: None,
            embeddings: Some(e),
        }
    }

    #[test]
    fn embedding_means_and_query() {
        let (d, i, p) = one_pixel(1.5, [0.07, 0.02, 2.0]);
        let e1 = FloatMatrix::new(1, 2, vec![1.0, 3.0]).unwrap();
        let e2 = FloatMatrix::new(1, 2, vec![3.0, 5.0]).unwrap();
        let g = build_embedding_grid(&[emb_frame("a", &d, &i, &p, &e1)], &fixed(2, 1)).unwrap();
        assert_eq!((g.get(Cell::new(1, 0)), g.count(Cell::new(1, 0))), (&[1.0, 3.0][..], 1));
        assert_eq!((g.get(Cell::new(0, 0)), g.count(Cell::new(0, 0))), (&[0.0, 0.0][..], 0));

        let g = build_embedding_grid(
            &[emb_frame("a", &d, &i, &p, &e1), emb_frame("b", &d, &i, &p, &e2)],
            &fixed(2, 1),
        )
        .unwrap();
        assert_eq!(g.get(Cell::new(1, 0)), &[2.0, 4.0]);
        assert_eq!(query_embedding_grid(&g, &[1.0, 0.0]).unwrap(), Cell::new(1, 0));

        let bad = FloatMatrix::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(build_embedding_grid(
            &[emb_frame("a", &d, &i, &p, &e1), emb_frame("b", &d, &i, &p, &bad)],
            &fixed(2, 1)
        )
        .is_err());
    }

    fn grid_of(cells: &[[f32; 2]], counts: &[u32]) -> EmbeddingGrid {
        EmbeddingGrid {
            georef: GridGeoref {
                origin: [0.0; 2],
                resolution: 0.05,
                width: cells.len(),
                height: 1,
            },
            dim: 2,
            counts: Raster::from_vec(cells.len(), 1, counts.to_vec()).unwrap(),
            values: cells.iter().flatten().copied().collect(),
        }
    }

    #[test]
    fn query_argmax_rules() {
        let g = grid_of(&[[0.0, 1.0], [1.0, 0.0], [0.0, 1.0]], &[1, 1, 1]);
        assert_eq!(query_embedding_grid(&g, &[1.0, 0.0]).unwrap(), Cell::new(1, 0));
        assert_eq!(query_embedding_grid(&g, &[5.0, 0.0]).unwrap(), Cell::new(1, 0));
        assert_eq!(query_embedding_grid(&g, &[0.0, 1.0]).unwrap(), Cell::new(0, 0));
        let empty = grid_of(&[[0.0, 0.0], [0.0, 0.0]], &[0, 0]);
        assert!(matches!(
            query_embedding_grid(&empty, &[1.0, 0.0]),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn persistence_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid_of(&[[0.25, 1.0], [1.0, 0.0], [0.0, 0.0]], &[3, 1, 0]);
        g.save(dir.path(), "emb").unwrap();
        assert_eq!(EmbeddingGrid::load(dir.path(), "emb").unwrap(), g);

        let s = SemanticGrid {
            georef: g.georef,
            classes: 9,
            cells: LabelImage::from_vec(3, 1, vec![0, 9, 4]).unwrap(),
            top_voxel: Raster::from_vec(3, 1, vec![0, 12, 3]).unwrap(),
        };
        s.save(dir.path(), "sem").unwrap();
        assert_eq!(SemanticGrid::load(dir.path(), "sem").unwrap(), s);
    }
}
