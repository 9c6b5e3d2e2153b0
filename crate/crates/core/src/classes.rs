//! Semantic class taxonomy and raw-label mapping.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous semantic class id in `1..=N`.
pub type ClassId = u16;

/// Voxel / prediction marker for free space.
pub const FREE: ClassId = 0;

/// Point label marker for raw ids absent from the class map.
pub const UNLABELED: ClassId = u16::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
    pub color: [u8; 3],
    /// Raw dataset label ids (lower 16 bits of the label record) mapped to `id`.
    #[serde(default)]
    pub raw: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassInfo>", into = "Vec<ClassInfo>")]
pub struct ClassMap {
    classes: Vec<ClassInfo>,
    lookup: HashMap<u16, ClassId>,
}

impl ClassMap {
    pub fn new(mut classes: Vec<ClassInfo>) -> Result<Self> {
        classes.sort_by_key(|c| c.id);
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i + 1 {
                return Err(Error::Config(format!(
                    "class ids must be contiguous 1..N; found id {} at position {}",
                    c.id,
                    i + 1
                )));
            }
        }
        if classes.is_empty() {
            return Err(Error::Config("class map is empty".into()));
        }
        let mut lookup = HashMap::new();
        for c in &classes {
            for &r in &c.raw {
                if let Some(prev) = lookup.insert(r, c.id) {
                    if prev != c.id {
                        return Err(Error::Config(format!(
                            "raw label {r} is mapped to both class {prev} and class {}",
                            c.id
                        )));
                    }
                }
            }
        }
        Ok(Self { classes, lookup })
    }

    /// Number of semantic classes N (the model outputs N + 1 logits).
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn map_raw(&self, raw: u16) -> ClassId {
        self.lookup.get(&raw).copied().unwrap_or(UNLABELED)
    }

    /// First raw id of a class, used when writing synthetic label files.
    pub fn raw_of(&self, id: ClassId) -> Option<u16> {
        self.info(id).and_then(|c| c.raw.first().copied())
    }

    pub fn info(&self, id: ClassId) -> Option<&ClassInfo> {
        if id == 0 {
            return None;
        }
        self.classes.get(id as usize - 1)
    }

    /// Display name; `free` and `unlabeled` for the two markers.
    pub fn name_of(&self, id: ClassId) -> String {
        match id {
            FREE => "free".into(),
            UNLABELED => "unlabeled".into(),
            _ => self.info(id).map_or_else(|| format!("class{id}"), |c| c.name.clone()),
        }
    }

    pub fn id_by_name(&self, name: &str) -> Option<ClassId> {
        self.classes.iter().find(|c| c.name == name).map(|c| c.id)
    }

    pub fn color(&self, id: ClassId) -> [u8; 3] {
        match id {
            FREE => [0, 0, 0],
            _ => self.info(id).map(|c| c.color).unwrap_or([255, 255, 255]),
        }
    }

    pub fn is_valid(&self, id: ClassId) -> bool {
        id >= 1 && (id as usize) <= self.classes.len()
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Wrap<'a> {
            classes: &'a [ClassInfo],
        }
        toml::to_string(&Wrap { classes: &self.classes }).expect("class map serializes")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Wrap {
            classes: Vec<ClassInfo>,
        }
        let w: Wrap = toml::from_str(s).map_err(|e| Error::Format(format!("class map: {e}")))?;
        Self::new(w.classes)
    }
}

impl TryFrom<Vec<ClassInfo>> for ClassMap {
    type Error = Error;
    fn try_from(v: Vec<ClassInfo>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassMap> for Vec<ClassInfo> {
    fn from(m: ClassMap) -> Self {
        m.classes
    }
}

impl Default for ClassMap {
    /// The 19 Semantic KITTI evaluation classes with their raw label ids.
    fn default() -> Self {
        let t: [(&str, [u8; 3], &[u16]); 19] = [
            ("road", [255, 0, 255], &[40, 60]),
            ("sidewalk", [75, 0, 75], &[48]),
            ("parking", [255, 150, 255], &[44]),
            ("other-ground", [175, 0, 75], &[49]),
            ("building", [255, 200, 0], &[50]),
            ("fence", [255, 120, 50], &[51]),
            ("car", [100, 150, 245], &[10, 252]),
            ("truck", [80, 30, 180], &[18, 258]),
            ("other-vehicle", [100, 80, 250], &[20, 13, 16, 256, 257, 259]),
            ("bicycle", [100, 230, 245], &[11]),
            ("motorcycle", [30, 60, 150], &[15]),
            ("person", [255, 30, 30], &[30, 254]),
            ("bicyclist", [255, 40, 200], &[31, 253]),
            ("motorcyclist", [150, 30, 90], &[32, 255]),
            ("vegetation", [0, 175, 0], &[70]),
            ("trunk", [135, 60, 0], &[71]),
            ("terrain", [150, 240, 80], &[72]),
            ("pole", [255, 240, 150], &[80]),
            ("traffic-sign", [255, 0, 0], &[81]),
        ];
        let classes = t
            .iter()
            .enumerate()
            .map(|(i, (name, color, raw))| ClassInfo {
                id: (i + 1) as ClassId,
                name: name.to_string(),
                color: *color,
                raw: raw.to_vec(),
            })
            .collect();
        Self::new(classes).expect("default class map is valid")
    }
}
