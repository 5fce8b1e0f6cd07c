use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::files::{read_json, write_json};

pub const VOID: u16 = 0;

/// Class registry. Id 0 is reserved for void.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    names: BTreeMap<u16, String>,
    by_name: BTreeMap<String, u16>,
    background: BTreeSet<u16>,
    small_objects: BTreeSet<u16>,
    synonyms: BTreeMap<String, u16>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u16,
    pub name: String,
}

/// On-disk vocabulary document. Background and small-object sets are listed
/// by class name; synonyms map a source-vocabulary name to a target id in
/// this vocabulary, 0 meaning void.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct VocabularyFile {
    pub classes: Vec<ClassEntry>,
    #[serde(default)]
    pub background: Vec<String>,
    #[serde(default)]
    pub small_objects: Vec<String>,
    #[serde(default)]
    pub synonyms: BTreeMap<String, u16>,
}

impl Vocabulary {
    pub fn from_file(doc: VocabularyFile) -> Result<Self> {
        let mut names = BTreeMap::new();
        let mut by_name = BTreeMap::new();
        for c in doc.classes {
            if c.id == VOID {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("id 0 is reserved for void (`{}`)", c.name),
                ));
            }
            if names.insert(c.id, c.name.clone()).is_some() {
                return Err(Error::invalid("vocabulary", format!("duplicate class id {}", c.id)));
            }
            if by_name.insert(c.name.clone(), c.id).is_some() {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("duplicate class name `{}`", c.name),
                ));
            }
        }
        let resolve = |set: &[String], what: &str| -> Result<BTreeSet<u16>> {
            set.iter()
                .map(|n| {
                    by_name.get(n).copied().ok_or_else(|| {
                        Error::invalid("vocabulary", format!("{what} class `{n}` is not in the class table"))
                    })
                })
                .collect()
        };
        let background = resolve(&doc.background, "background")?;
        let small_objects = resolve(&doc.small_objects, "small-object")?;
        for (src, &id) in &doc.synonyms {
            if id != VOID && !names.contains_key(&id) {
                return Err(Error::invalid(
                    "vocabulary",
                    format!("synonym `{src}` targets unknown id {id}"),
                ));
            }
        }
        Ok(Self {
            names,
            by_name,
            background,
            small_objects,
            synonyms: doc.synonyms,
        })
    }

    pub fn to_file(&self) -> VocabularyFile {
        let name_list = |set: &BTreeSet<u16>| set.iter().map(|id| self.names[id].clone()).collect();
        VocabularyFile {
            classes: self
                .names
                .iter()
                .map(|(&id, name)| ClassEntry { id, name: name.clone() })
                .collect(),
            background: name_list(&self.background),
            small_objects: name_list(&self.small_objects),
            synonyms: self.synonyms.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(read_json(path)?).map_err(|e| match e {
            Error::Invalid { reason, .. } => Error::Malformed {
                file: path.to_path_buf(),
                field: "classes".into(),
                reason,
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file())
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.names.get(&id).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<u16> {
        self.by_name.get(name).copied()
    }

    /// True for void and every registered id.
    pub fn is_valid(&self, id: u16) -> bool {
        id == VOID || self.names.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.names.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn max_id(&self) -> u16 {
        self.names.keys().next_back().copied().unwrap_or(VOID)
    }

    pub fn background(&self) -> &BTreeSet<u16> {
        &self.background
    }

    pub fn is_background(&self, id: u16) -> bool {
        self.background.contains(&id)
    }

    pub fn small_objects(&self) -> &BTreeSet<u16> {
        &self.small_objects
    }

    pub fn synonyms(&self) -> &BTreeMap<String, u16> {
        &self.synonyms
    }

    pub fn floor(&self) -> Option<u16> {
        self.id("floor")
    }

    pub fn ceiling(&self) -> Option<u16> {
        self.id("ceiling")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> VocabularyFile {
        VocabularyFile {
            classes: vec![
                ClassEntry {
                    id: 1,
                    name: "wall".into(),
                },
                ClassEntry {
                    id: 2,
                    name: "floor".into(),
                },
                ClassEntry {
                    id: 7,
                    name: "bottle".into(),
                },
            ],
            background: vec!["wall".into(), "floor".into()],
            small_objects: vec!["bottle".into()],
            synonyms: [("knife".to_string(), 0), ("flask".to_string(), 7)].into(),
        }
    }

    #[test]
    fn resolves_sets() {
        let v = Vocabulary::from_file(doc()).unwrap();
        assert!(v.is_background(1) && v.is_background(2) && !v.is_background(7));
        assert_eq!(v.small_objects().iter().copied().collect::<Vec<_>>(), vec![7]);
        assert_eq!(v.floor(), Some(2));
        assert_eq!(v.max_id(), 7);
        assert!(v.is_valid(0) && !v.is_valid(3));
        assert_eq!(Vocabulary::from_file(v.to_file()).unwrap(), v);
    }

    #[test]
    fn rejects_reserved_and_unknown() {
        let mut d = doc();
        d.classes.push(ClassEntry {
            id: 0,
            name: "nothing".into(),
        });
        assert!(Vocabulary::from_file(d).is_err());
        let mut d = doc();
        d.background.push("ceiling".into());
        assert!(Vocabulary::from_file(d).is_err());
        let mut d = doc();
        d.synonyms.insert("x".into(), 99);
        assert!(Vocabulary::from_file(d).is_err());
    }
}
