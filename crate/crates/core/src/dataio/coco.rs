use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::metrics::{Detection, GroundTruth};

/// Default per-image field carrying the patient identifier.
pub const DEFAULT_PATIENT_FIELD: &str = "patient_id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BBox,
}

impl Annotation {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            image_id: self.image_id,
            category_id: self.category_id,
            bbox: self.bbox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

/// In-memory COCO annotation file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetIndex {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

#[derive(Deserialize)]
struct RawFile {
    images: Vec<Map<String, Value>>,
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Serialize)]
struct OutFile<'a> {
    images: Vec<Map<String, Value>>,
    annotations: Vec<OutAnnotation<'a>>,
    categories: &'a [Category],
}

#[derive(Serialize)]
struct OutAnnotation<'a> {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: &'a BBox,
    area: f64,
    iscrowd: u8,
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, idx: usize) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::Schema(format!("images[{idx}] is missing required field `{key}`")))
}

fn as_u64(v: &Value, what: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::Schema(format!("{what} must be a non-negative integer, got {v}")))
}

fn parse_image(obj: &Map<String, Value>, idx: usize, patient_field: &str) -> Result<ImageInfo> {
    let id = as_u64(field(obj, "id", idx)?, &format!("images[{idx}].id"))?;
    let dim = |key: &str| -> Result<u32> {
        let v = as_u64(field(obj, key, idx)?, &format!("images[{idx}].{key}"))?;
        u32::try_from(v).map_err(|_| Error::Schema(format!("images[{idx}].{key} = {v} is too large")))
    };
    let patient_id = match obj.get(patient_field) {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Number(n)) => Some(n.to_string()),
        Some(other) => {
            return Err(Error::Schema(format!(
                "images[{idx}].{patient_field} must be a string or number, got {other}"
            )))
        }
    };
    Ok(ImageInfo {
        id,
        width: dim("width")?,
        height: dim("height")?,
        file_name: obj.get("file_name").and_then(Value::as_str).map(str::to_owned),
        patient_id,
    })
}

impl DatasetIndex {
    pub fn from_json_str(text: &str, patient_field: &str) -> Result<Self> {
        let raw: RawFile = serde_json::from_str(text)?;
        Self::from_raw(raw, patient_field)
    }

    fn from_raw(raw: RawFile, patient_field: &str) -> Result<Self> {
        let images = raw
            .images
            .iter()
            .enumerate()
            .map(|(i, obj)| parse_image(obj, i, patient_field))
            .collect::<Result<Vec<_>>>()?;
        let mut ids = HashSet::new();
        for im in &images {
            if !ids.insert(im.id) {
                return Err(Error::Schema(format!("duplicate image id {}", im.id)));
            }
        }
        let annotations = raw
            .annotations
            .into_iter()
            .map(|a| {
                if !ids.contains(&a.image_id) {
                    return Err(Error::Schema(format!(
                        "annotation {} references missing image id {}",
                        a.id, a.image_id
                    )));
                }
                let bbox = BBox::from(a.bbox);
                bbox.validate()
                    .map_err(|e| Error::Schema(format!("annotation {}: {e}", a.id)))?;
                Ok(Annotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetIndex {
            images,
            annotations,
            categories: raw.categories,
        })
    }

    pub fn to_json_string(&self, patient_field: &str) -> Result<String> {
        let images = self
            .images
            .iter()
            .map(|im| {
                let mut obj = Map::new();
                obj.insert("id".into(), im.id.into());
                obj.insert("width".into(), im.width.into());
                obj.insert("height".into(), im.height.into());
                if let Some(f) = &im.file_name {
                    obj.insert("file_name".into(), f.clone().into());
                }
                if let Some(p) = &im.patient_id {
                    obj.insert(patient_field.into(), p.clone().into());
                }
                obj
            })
            .collect();
        let annotations = self
            .annotations
            .iter()
            .map(|a| OutAnnotation {
                id: a.id,
                image_id: a.image_id,
                category_id: a.category_id,
                bbox: &a.bbox,
                area: a.bbox.area(),
                iscrowd: 0,
            })
            .collect();
        let out = OutFile {
            images,
            annotations,
            categories: &self.categories,
        };
        Ok(serde_json::to_string_pretty(&out)?)
    }

    pub fn ground_truths(&self) -> Vec<GroundTruth> {
        self.annotations.iter().map(Annotation::ground_truth).collect()
    }

    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Annotations whose box extends past the image border.
    pub fn bounds_violations(&self) -> Vec<String> {
        let dims: BTreeMap<u64, (u32, u32)> = self.images.iter().map(|im| (im.id, (im.width, im.height))).collect();
        self.annotations
            .iter()
            .filter_map(|a| {
                let (w, h) = dims.get(&a.image_id).copied()?;
                let b = &a.bbox;
                let outside = b.x < 0.0 || b.y < 0.0 || b.x2() > w as f64 || b.y2() > h as f64;
                outside.then(|| {
                    format!(
                        "annotation {} box [{}, {}, {}, {}] exceeds image {} ({}x{})",
                        a.id, b.x, b.y, b.w, b.h, a.image_id, w, h
                    )
                })
            })
            .collect()
    }

    /// Restricts the index to the given image ids, keeping their annotations
    /// and all categories.
    pub fn subset(&self, image_ids: &HashSet<u64>) -> DatasetIndex {
        DatasetIndex {
            images: self
                .images
                .iter()
                .filter(|im| image_ids.contains(&im.id))
                .cloned()
                .collect(),
            annotations: self
                .annotations
                .iter()
                .filter(|a| image_ids.contains(&a.image_id))
                .cloned()
                .collect(),
            categories: self.categories.clone(),
        }
    }
}

pub fn load_coco(path: impl AsRef<Path>) -> Result<DatasetIndex> {
    load_coco_with(path, DEFAULT_PATIENT_FIELD)
}

/// Loads a COCO annotation file, reading patient ids from `patient_field`.
pub fn load_coco_with(path: impl AsRef<Path>, patient_field: &str) -> Result<DatasetIndex> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_owned(),
        source,
    })?;
    DatasetIndex::from_raw(raw, patient_field)
}

pub fn save_coco(idx: &DatasetIndex, path: impl AsRef<Path>) -> Result<()> {
    save_coco_with(idx, path, DEFAULT_PATIENT_FIELD)
}

pub fn save_coco_with(idx: &DatasetIndex, path: impl AsRef<Path>, patient_field: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, idx.to_json_string(patient_field)? + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a COCO results file: an array of `{image_id, category_id, bbox, score}`.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_owned(),
        source,
    })
}
