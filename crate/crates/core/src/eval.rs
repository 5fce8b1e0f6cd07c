//! Segmentation evaluation: vocabulary remapping, confusion accumulation,
//! mIoU and the small-object mIoU.
//!
//! Ground-truth void pixels are not scored. A void prediction on a labeled
//! pixel counts as a miss for the ground-truth class.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::vocab::{Vocabulary, VOID};
use crate::raster::LabelImage;

/// Source class id to target class id; anything unmapped becomes void.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassMapping {
    map: BTreeMap<u16, u16>,
}

impl ClassMapping {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u16, u16)>) -> Self {
        Self {
            map: pairs.into_iter().collect(),
        }
    }

    /// Maps each source class through the target vocabulary's synonym table;
    /// classes without a synonym entry map to the same-named target class,
    /// or to void when there is none.
    pub fn from_vocabularies(source: &Vocabulary, target: &Vocabulary) -> Self {
        let map = source
            .ids()
            .map(|id| {
                let name = source.name(id).expect("id from source");
                let to = match target.synonyms().get(name) {
                    Some(&t) => t,
                    None => target.id(name).unwrap_or(VOID),
                };
                (id, to)
            })
            .collect();
        Self { map }
    }

    pub fn get(&self, source: u16) -> u16 {
        if source == VOID {
            return VOID;
        }
        self.map.get(&source).copied().unwrap_or(VOID)
    }
}

pub fn map_vocabulary(labels: &LabelImage, mapping: &ClassMapping) -> LabelImage {
    labels.map(|&c| mapping.get(c))
}

/// Dense confusion counts `cm[gt][pred]`, grown on demand to the largest id seen.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_classes(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    fn grow(&mut self, classes: usize) {
        if classes <= self.classes {
            return;
        }
        let mut counts = vec![0; classes * classes];
        for g in 0..self.classes {
            for p in 0..self.classes {
                counts[g * classes + p] = self.counts[g * self.classes + p];
            }
        }
        self.classes = classes;
        self.counts = counts;
    }

    pub fn get(&self, gt: u16, pred: u16) -> u64 {
        let (g, p) = (gt as usize, pred as usize);
        if g < self.classes && p < self.classes {
            self.counts[g * self.classes + p]
        } else {
            0
        }
    }

    pub fn add(&mut self, gt: u16, pred: u16, n: u64) {
        self.grow(gt.max(pred) as usize + 1);
        let c = self.classes;
        self.counts[gt as usize * c + pred as usize] += n;
    }

    /// Commutative, associative merge of partial matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.grow(other.classes);
        for g in 0..other.classes {
            for p in 0..other.classes {
                let n = other.counts[g * other.classes + p];
                if n > 0 {
                    self.counts[g * self.classes + p] += n;
                }
            }
        }
    }

    pub fn true_positives(&self, c: u16) -> u64 {
        self.get(c, c)
    }

    /// Pixels predicted `c` whose (non-void) ground truth differs.
    pub fn false_positives(&self, c: u16) -> u64 {
        (1..self.classes as u16)
            .filter(|&g| g != c)
            .map(|g| self.get(g, c))
            .sum()
    }

    /// Pixels of ground truth `c` predicted as anything else, void included.
    pub fn false_negatives(&self, c: u16) -> u64 {
        (0..self.classes as u16)
            .filter(|&p| p != c)
            .map(|p| self.get(c, p))
            .sum()
    }

    pub fn union(&self, c: u16) -> u64 {
        self.true_positives(c) + self.false_positives(c) + self.false_negatives(c)
    }

    /// IoU of class `c`, `None` when its union is empty.
    pub fn iou(&self, c: u16) -> Option<f64> {
        let u = self.union(c);
        (u > 0).then(|| self.true_positives(c) as f64 / u as f64)
    }

    pub fn gt_pixels(&self, c: u16) -> u64 {
        (0..self.classes as u16).map(|p| self.get(c, p)).sum()
    }

    pub fn pred_pixels(&self, c: u16) -> u64 {
        (1..self.classes as u16).map(|g| self.get(g, c)).sum()
    }
}

/// Adds one prediction/ground-truth pair; ground-truth void pixels are skipped.
pub fn accumulate_confusion(pred: &LabelImage, gt: &LabelImage, cm: &mut ConfusionMatrix) -> Result<()> {
    gt.check_same_dims(pred, "prediction")?;
    let max = pred.as_slice().iter().chain(gt.as_slice()).copied().max().unwrap_or(0);
    cm.grow(max as usize + 1);
    let c = cm.classes;
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        if g != VOID {
            cm.counts[g as usize * c + p as usize] += 1;
        }
    }
    Ok(())
}

/// Mean IoU over non-void classes (restricted to `subset` when given) whose
/// union is nonzero.
pub fn miou(cm: &ConfusionMatrix, subset: Option<&BTreeSet<u16>>) -> Result<f64> {
    let classes: Vec<u16> = match subset {
        Some(s) => s.iter().copied().filter(|&c| c != VOID).collect(),
        None => (1..cm.classes as u16).collect(),
    };
    let ious: Vec<f64> = classes.into_iter().filter_map(|c| cm.iou(c)).collect();
    if ious.is_empty() {
        return Err(Error::UndefinedMiou);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub id: u16,
    pub name: String,
    pub iou: Option<f64>,
    pub gt_pixels: u64,
    pub pred_pixels: u64,
    pub intersection: u64,
    pub union: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub scored_pixels: u64,
    pub miou: Option<f64>,
    pub miou_small: Option<f64>,
    pub classes: Vec<ClassReport>,
}

impl EvalReport {
    pub fn build(cm: &ConfusionMatrix, vocab: &Vocabulary, frames: usize) -> Self {
        let classes = (1..cm.classes() as u16)
            .filter(|&c| cm.union(c) > 0)
            .map(|c| ClassReport {
                id: c,
                name: vocab.name(c).unwrap_or("?").to_string(),
                iou: cm.iou(c),
                gt_pixels: cm.gt_pixels(c),
                pred_pixels: cm.pred_pixels(c),
                intersection: cm.true_positives(c),
                union: cm.union(c),
            })
            .collect();
        let scored = (1..cm.classes() as u16).map(|c| cm.gt_pixels(c)).sum();
        Self {
            frames,
            scored_pixels: scored,
            miou: miou(cm, None).ok(),
            miou_small: miou(cm, Some(vocab.small_objects())).ok(),
            classes,
        }
    }

    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", 100.0 * v));
        let mut s = String::new();
        let _ = writeln!(s, "{:<24} {:>8} {:>12} {:>12}", "class", "IoU(%)", "gt px", "pred px");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:<24} {:>8} {:>12} {:>12}",
                c.name,
                pct(c.iou),
                c.gt_pixels,
                c.pred_pixels
            );
        }
        let _ = writeln!(s, "{:<24} {:>8}", "mIoU", pct(self.miou));
        let _ = writeln!(s, "{:<24} {:>8}", "mIoU-small", pct(self.miou_small));
        let _ = writeln!(s, "frames: {}  scored pixels: {}", self.frames, self.scored_pixels);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::vocab::{ClassEntry, VocabularyFile};

    fn r(data: &[u16]) -> LabelImage {
        LabelImage::from_vec(2, data.len() / 2, data.to_vec()).unwrap()
    }

    #[test]
    fn worked_two_by_two() {
        let mut cm = ConfusionMatrix::new();
        accumulate_confusion(&r(&[1, 1, 2, 2]), &r(&[1, 2, 2, 2]), &mut cm).unwrap();
        assert_eq!((cm.get(1, 1), cm.get(2, 1), cm.get(2, 2)), (1, 1, 2));
        assert_eq!(miou(&cm, None).unwrap(), (0.5 + 2.0 / 3.0) / 2.0);
        assert!((miou(&cm, None).unwrap() - 7.0 / 12.0).abs() < 1e-15);
        assert_eq!(miou(&cm, Some(&[2].into())).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn perfect_and_void_gt() {
        let mut cm = ConfusionMatrix::new();
        accumulate_confusion(&r(&[1, 3, 3, 2]), &r(&[1, 3, 3, 2]), &mut cm).unwrap();
        assert_eq!(miou(&cm, None).unwrap(), 1.0);
        assert_eq!(cm.false_positives(3) + cm.false_negatives(3), 0);

        let mut cm = ConfusionMatrix::new();
        accumulate_confusion(&r(&[1, 3, 3, 2]), &r(&[0, 0, 0, 0]), &mut cm).unwrap();
        assert_eq!(cm.counts.iter().sum::<u64>(), 0);
        assert!(matches!(miou(&cm, None), Err(Error::UndefinedMiou)));
    }

    #[test]
    fn void_prediction_is_a_miss() {
        let mut cm = ConfusionMatrix::new();
        accumulate_confusion(&r(&[0, 1]), &r(&[1, 1]), &mut cm).unwrap();
        assert_eq!(cm.iou(1), Some(0.5));
    }

    #[test]
    fn merge_is_additive() {
        let (a, b) = (r(&[1, 2, 2, 2]), r(&[1, 1, 3, 2]));
        let mut whole = ConfusionMatrix::new();
        accumulate_confusion(&a, &b, &mut whole).unwrap();
        accumulate_confusion(&b, &a, &mut whole).unwrap();
        let mut p1 = ConfusionMatrix::new();
        accumulate_confusion(&a, &b, &mut p1).unwrap();
        let mut p2 = ConfusionMatrix::new();
        accumulate_confusion(&b, &a, &mut p2).unwrap();
        let mut m12 = p1.clone();
        m12.merge(&p2);
        let mut m21 = p2;
        m21.merge(&p1);
        assert_eq!(m12, whole);
        assert_eq!(m21, whole);
    }

    fn vocab(classes: &[(u16, &str)], synonyms: &[(&str, u16)]) -> Vocabulary {
        Vocabulary::from_file(VocabularyFile {
            classes: classes
                .iter()
                .map(|&(id, n)| ClassEntry { id, name: n.into() })
                .collect(),
            synonyms: synonyms.iter().map(|&(n, id)| (n.to_string(), id)).collect(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn vocabulary_mapping() {
        let src = vocab(&[(1, "sofa"), (2, "knife"), (3, "couch")], &[]);
        let dst = vocab(&[(10, "sofa")], &[("couch", 10)]);
        let m = ClassMapping::from_vocabularies(&src, &dst);
        let labels = r(&[1, 2, 3, 0]);
        assert_eq!(map_vocabulary(&labels, &m).as_slice(), &[10, 0, 10, 0]);
        let identity = ClassMapping::from_pairs([(1, 1), (2, 2), (3, 3)]);
        assert_eq!(map_vocabulary(&labels, &identity), labels);
        assert_eq!(map_vocabulary(&r(&[0, 0]), &m), r(&[0, 0]));
    }

    #[test]
    fn report_and_table() {
        let v = vocab(&[(1, "wall"), (2, "bottle")], &[]);
        let mut cm = ConfusionMatrix::new();
        accumulate_confusion(&r(&[1, 1, 2, 2]), &r(&[1, 2, 2, 2]), &mut cm).unwrap();
        let rep = EvalReport::build(&cm, &v, 1);
        assert_eq!(rep.classes.len(), 2);
        assert_eq!(rep.scored_pixels, 4);
        assert!(rep.miou_small.is_none());
        assert!(rep.to_table().contains("mIoU"));
    }
}
