//! Class-agnostic segment sets and detection sets.
//!
//! Image-plane coordinates for boxes and centroids treat pixel `(x, y)` as
//! the unit square `[x, x+1) x [y, y+1)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::files::{read_json, write_json};
use crate::ingest::rle::{encode_pixels, rle_pixels};
use crate::ingest::vocab::Vocabulary;
use crate::raster::{Mask, Raster};

/// One class-agnostic segment, stored as ascending linear pixel indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u32,
    pixels: Vec<u32>,
    bbox: [u32; 4],
}

impl Segment {
    pub fn from_pixels(id: u32, mut pixels: Vec<u32>, width: usize) -> Result<Self> {
        pixels.sort_unstable();
        pixels.dedup();
        if pixels.is_empty() {
            return Err(Error::invalid("segment", format!("segment {id} is empty")));
        }
        let bbox = pixel_bbox(&pixels, width);
        Ok(Self { id, pixels, bbox })
    }

    pub fn from_mask(id: u32, mask: &Mask) -> Result<Self> {
        let pixels = (0..mask.len() as u32)
            .filter(|&i| mask.as_slice()[i as usize])
            .collect();
        Self::from_pixels(id, pixels, mask.width())
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Tight `[x, y, w, h]`.
    pub fn bbox(&self) -> [u32; 4] {
        self.bbox
    }

    pub fn contains(&self, index: u32) -> bool {
        self.pixels.binary_search(&index).is_ok()
    }

    pub fn to_mask(&self, width: usize, height: usize) -> Mask {
        let mut m = Mask::filled(width, height, false);
        for &p in &self.pixels {
            m.as_mut_slice()[p as usize] = true;
        }
        m
    }

    /// Number of pixels whose centers fall inside `b`.
    pub fn area_inside(&self, b: &BoxF, width: usize) -> usize {
        self.pixels
            .iter()
            .filter(|&&p| b.contains_pixel(p as usize % width, p as usize / width))
            .count()
    }
}

fn pixel_bbox(pixels: &[u32], width: usize) -> [u32; 4] {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for &p in pixels {
        let (x, y) = (p % width as u32, p / width as u32);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    [x0, y0, x1 - x0 + 1, y1 - y0 + 1]
}

/// Pairwise-disjoint segments over one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    width: usize,
    height: usize,
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub id: u32,
    pub counts: Vec<u32>,
    pub area: u32,
    pub bbox: [u32; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentSetFile {
    pub width: usize,
    pub height: usize,
    pub segments: Vec<SegmentRecord>,
}

impl SegmentSet {
    /// Validates bounds, unique ids and disjointness.
    pub fn new(width: usize, height: usize, segments: Vec<Segment>) -> Result<Self> {
        let mut owner = vec![false; width * height];
        let mut ids = std::collections::BTreeSet::new();
        for s in &segments {
            if !ids.insert(s.id) {
                return Err(Error::invalid("segment set", format!("duplicate segment id {}", s.id)));
            }
            for &p in &s.pixels {
                let slot = owner
                    .get_mut(p as usize)
                    .ok_or_else(|| Error::invalid("segment set", format!("segment {} exceeds the image", s.id)))?;
                if *slot {
                    return Err(Error::invalid(
                        "segment set",
                        format!("segment {} overlaps another segment at pixel {p}", s.id),
                    ));
                }
                *slot = true;
            }
        }
        Ok(Self {
            width,
            height,
            segments,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, id: u32) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// Per-pixel owner: 0 for none, otherwise position in [`Self::segments`] plus one.
    pub fn owner_raster(&self) -> Raster<u32> {
        let mut r = Raster::filled(self.width, self.height, 0u32);
        for (i, s) in self.segments.iter().enumerate() {
            for &p in &s.pixels {
                r.as_mut_slice()[p as usize] = i as u32 + 1;
            }
        }
        r
    }

    /// Segments as the connected components of a per-pixel id raster; pixels
    /// equal to `background` belong to no segment. Ids are assigned from 1 in
    /// raster-scan order of first pixel.
    pub fn from_components(raster: &Raster<u16>, background: Option<u16>) -> Self {
        let regions = crate::mv::connected_components_4(raster);
        let segments = regions
            .regions()
            .iter()
            .filter(|r| Some(r.class_id) != background)
            .enumerate()
            .map(|(i, r)| Segment {
                id: i as u32 + 1,
                bbox: pixel_bbox(&r.pixels, raster.width()),
                pixels: r.pixels.clone(),
            })
            .collect();
        Self {
            width: raster.width(),
            height: raster.height(),
            segments,
        }
    }

    pub fn to_file(&self) -> SegmentSetFile {
        SegmentSetFile {
            width: self.width,
            height: self.height,
            segments: self
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    id: s.id,
                    counts: encode_pixels(&s.pixels, self.width * self.height),
                    area: s.area() as u32,
                    bbox: s.bbox,
                })
                .collect(),
        }
    }

    pub fn from_file(doc: SegmentSetFile) -> Result<Self> {
        let mut segments = Vec::with_capacity(doc.segments.len());
        for rec in doc.segments {
            let pixels = rle_pixels(&rec.counts, doc.width, doc.height)?;
            if pixels.len() != rec.area as usize {
                return Err(Error::invalid(
                    "segment",
                    format!("segment {} area {} != mask popcount {}", rec.id, rec.area, pixels.len()),
                ));
            }
            let seg = Segment::from_pixels(rec.id, pixels, doc.width)?;
            if seg.bbox != rec.bbox {
                return Err(Error::invalid(
                    "segment",
                    format!("segment {} bbox {:?} is not tight ({:?})", rec.id, rec.bbox, seg.bbox),
                ));
            }
            segments.push(seg);
        }
        Self::new(doc.width, doc.height, segments)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(read_json(path)?).map_err(|e| with_file(e, path, "segments"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file())
    }
}

fn with_file(e: Error, path: &Path, field: &str) -> Error {
    match e {
        Error::Invalid { reason, .. } => Error::Malformed {
            file: path.to_path_buf(),
            field: field.into(),
            reason,
        },
        Error::RleSumMismatch { sum, expected } => Error::Malformed {
            file: path.to_path_buf(),
            field: format!("{field}.counts"),
            reason: format!("RLE counts sum to {sum}, expected {expected}"),
        },
        other => other,
    }
}

/// Axis-aligned box `(x, y, w, h)` in image-plane pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxF {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_pixel_bbox(b: [u32; 4]) -> Self {
        Self::new(b[0] as f64, b[1] as f64, b[2] as f64, b[3] as f64)
    }

    /// Pixel centers inside the closed box.
    #[inline]
    pub fn contains_pixel(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        px >= self.x && px <= self.x + self.w && py >= self.y && py <= self.y + self.h
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0]
    }

    pub fn clamp_to(&self, width: usize, height: usize) -> Self {
        let x0 = self.x.clamp(0.0, width as f64);
        let y0 = self.y.clamp(0.0, height as f64);
        let x1 = (self.x + self.w).clamp(0.0, width as f64);
        let y1 = (self.y + self.h).clamp(0.0, height as f64);
        Self::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }

    pub fn is_empty(&self) -> bool {
        self.w <= 0.0 || self.h <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u16,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoxF,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_centroid: Option<[f64; 2]>,
    /// Optional coarse mask as RLE counts over the image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<u32>>,
}

impl Detection {
    /// The prompt point: the given centroid, else the coarse-mask centroid,
    /// else the box center.
    pub fn centroid(&self, width: usize, height: usize) -> [f64; 2] {
        if let Some(c) = self.mask_centroid {
            return c;
        }
        if let Some(counts) = &self.mask {
            if let Ok(px) = rle_pixels(counts, width, height) {
                if !px.is_empty() {
                    let n = px.len() as f64;
                    let (sx, sy) = px.iter().fold((0.0, 0.0), |(sx, sy), &p| {
                        (
                            sx + (p as usize % width) as f64 + 0.5,
                            sy + (p as usize / width) as f64 + 0.5,
                        )
                    });
                    return [sx / n, sy / n];
                }
            }
        }
        self.bbox.center()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub width: usize,
    pub height: usize,
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    /// Clamps boxes into the image and checks scores and mask sizes.
    pub fn validate(mut self) -> Result<Self> {
        for (i, d) in self.detections.iter_mut().enumerate() {
            if !d.score.is_finite() || !(0.0..=1.0).contains(&d.score) {
                return Err(Error::invalid(
                    "detection",
                    format!("detection {i} score {} outside [0, 1]", d.score),
                ));
            }
            if ![d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h].iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(
                    "detection",
                    format!("detection {i} has a non-finite box"),
                ));
            }
            d.bbox = d.bbox.clamp_to(self.width, self.height);
            if let Some(counts) = &d.mask {
                let sum: u64 = counts.iter().map(|&c| c as u64).sum();
                if sum != (self.width * self.height) as u64 {
                    return Err(Error::invalid(
                        "detection",
                        format!("detection {i} mask counts sum to {sum}"),
                    ));
                }
            }
        }
        Ok(self)
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        for (i, d) in self.detections.iter().enumerate() {
            if d.class_id == 0 || !vocab.is_valid(d.class_id) {
                return Err(Error::invalid(
                    "detection",
                    format!("detection {i} class {} is not in the vocabulary", d.class_id),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json::<Self>(path)?
            .validate()
            .map_err(|e| with_file(e, path, "detections"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: u32, px: &[u32]) -> Segment {
        Segment::from_pixels(id, px.to_vec(), 4).unwrap()
    }

    #[test]
    fn overlap_rejected() {
        let err = SegmentSet::new(4, 2, vec![seg(1, &[0, 1]), seg(2, &[1, 2])]).unwrap_err();
        assert!(err.to_string().contains("overlaps"));
        assert!(SegmentSet::new(4, 2, vec![seg(1, &[0]), seg(1, &[2])]).is_err());
    }

    #[test]
    fn file_roundtrip_and_validation() {
        let set = SegmentSet::new(4, 2, vec![seg(1, &[0, 1, 4, 5]), seg(2, &[7])]).unwrap();
        let file = set.to_file();
        assert_eq!(file.segments[0].counts, vec![0, 2, 2, 2, 2]);
        assert_eq!(file.segments[0].bbox, [0, 0, 2, 2]);
        assert_eq!(SegmentSet::from_file(file.clone()).unwrap(), set);

        let mut bad = file.clone();
        bad.segments[0].area = 3;
        assert!(SegmentSet::from_file(bad).is_err());
        let mut bad = file;
        bad.segments[1].bbox = [0, 0, 4, 2];
        assert!(SegmentSet::from_file(bad).is_err());
    }

    #[test]
    fn components_of_raster() {
        let r = Raster::from_vec(3, 2, vec![5u16, 5, 0, 6, 0, 5]).unwrap();
        let set = SegmentSet::from_components(&r, Some(0));
        let areas: Vec<_> = set.segments().iter().map(|s| (s.id, s.area())).collect();
        assert_eq!(areas, vec![(1, 2), (2, 1), (3, 1)]);
    }

    #[test]
    fn box_membership_uses_pixel_centers() {
        let b = BoxF::new(1.0, 0.0, 2.0, 1.0);
        assert!(!b.contains_pixel(0, 0));
        assert!(b.contains_pixel(1, 0) && b.contains_pixel(2, 0));
        assert!(!b.contains_pixel(3, 0));
    }

    #[test]
    fn detection_centroid_fallbacks() {
        let mut d = Detection {
            class_id: 1,
            score: 0.5,
            bbox: BoxF::new(0.0, 0.0, 4.0, 2.0),
            mask_centroid: None,
            mask: None,
        };
        assert_eq!(d.centroid(4, 2), [2.0, 1.0]);
        d.mask = Some(vec![5, 1, 2]);
        assert_eq!(d.centroid(4, 2), [1.5, 1.5]);
        d.mask_centroid = Some([3.0, 0.5]);
        assert_eq!(d.centroid(4, 2), [3.0, 0.5]);
    }

    #[test]
    fn detection_validation_clamps() {
        let set = DetectionSet {
            width: 10,
            height: 10,
            detections: vec![Detection {
                class_id: 1,
                score: 0.9,
                bbox: BoxF::new(-2.0, 5.0, 6.0, 20.0),
                mask_centroid: None,
                mask: None,
            }],
        }
        .validate()
        .unwrap();
        assert_eq!(set.detections[0].bbox, BoxF::new(0.0, 5.0, 4.0, 5.0));
    }
}
