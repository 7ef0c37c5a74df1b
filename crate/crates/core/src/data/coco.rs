use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub type ImageId = u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub id: u64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub file_name: String,
    /// Sorted by annotation id.
    pub captions: Vec<Caption>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: BTreeMap<ImageId, CocoImage>,
}

impl CocoDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.images.keys().copied()
    }
}

fn field<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::schema(format!("{path}.{key}"), "missing field"))
}

fn as_u64(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::schema(path, "expected a non-negative integer"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str> {
    v.as_str().ok_or_else(|| Error::schema(path, "expected a string"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::schema(path, "expected an array"))
}

/// Groups a COCO captions document by image.
pub fn load_coco(doc: &Value) -> Result<CocoDataset> {
    let images = as_array(field(doc, "images", "$")?, "$.images")?;
    let annotations = as_array(field(doc, "annotations", "$")?, "$.annotations")?;

    let mut out = BTreeMap::new();
    for (k, img) in images.iter().enumerate() {
        let path = format!("$.images[{k}]");
        let id = as_u64(field(img, "id", &path)?, &format!("{path}.id"))?;
        let file_name = as_str(field(img, "file_name", &path)?, &format!("{path}.file_name"))?;
        out.insert(
            id,
            CocoImage {
                file_name: file_name.to_owned(),
                captions: Vec::new(),
            },
        );
    }
    for (k, ann) in annotations.iter().enumerate() {
        let path = format!("$.annotations[{k}]");
        let id = as_u64(field(ann, "id", &path)?, &format!("{path}.id"))?;
        let image_id = as_u64(field(ann, "image_id", &path)?, &format!("{path}.image_id"))?;
        let text = as_str(field(ann, "caption", &path)?, &format!("{path}.caption"))?;
        let image = out
            .get_mut(&image_id)
            .ok_or_else(|| Error::Referential(format!("annotation {id} references unknown image_id {image_id}")))?;
        image.captions.push(Caption {
            id,
            text: text.to_owned(),
        });
    }
    for image in out.values_mut() {
        image.captions.sort_by_key(|c| c.id);
    }
    Ok(CocoDataset { images: out })
}

pub fn load_coco_str(text: &str) -> Result<CocoDataset> {
    load_coco(&serde_json::from_str(text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn groups_captions() {
        let doc = json!({
            "images": [{"id": 1, "file_name": "a.jpg"}],
            "annotations": [
                {"id": 11, "image_id": 1, "caption": "b"},
                {"id": 10, "image_id": 1, "caption": "a"}
            ]
        });
        let ds = load_coco(&doc).unwrap();
        assert_eq!(ds.len(), 1);
        let caps: Vec<_> = ds.images[&1].captions.iter().map(|c| c.id).collect();
        assert_eq!(caps, vec![10, 11]);
    }

    #[test]
    fn dangling_image_id() {
        let doc = json!({
            "images": [{"id": 1, "file_name": "a.jpg"}],
            "annotations": [{"id": 3, "image_id": 99, "caption": "x"}]
        });
        match load_coco(&doc) {
            Err(Error::Referential(msg)) => assert!(msg.contains("99")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_and_missing() {
        let ds = load_coco(&json!({"images": [], "annotations": []})).unwrap();
        assert!(ds.is_empty());
        match load_coco(&json!({"images": [{"id": 1}], "annotations": []})) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "$.images[0].file_name"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(load_coco(&json!({"images": []})), Err(Error::Schema { .. })));
    }

    #[test]
    fn keeps_images_without_captions() {
        let doc = json!({
            "images": [{"id": 1, "file_name": "a"}, {"id": 2, "file_name": "b"}],
            "annotations": [{"id": 1, "image_id": 2, "caption": "x"}]
        });
        let ds = load_coco(&doc).unwrap();
        assert!(ds.images[&1].captions.is_empty());
        assert_eq!(ds.images[&2].captions.len(), 1);
    }
}
