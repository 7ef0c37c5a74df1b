use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::coco::ImageId;
use crate::error::{Error, Result};

/// One generated caption as stored in a predictions file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: ImageId,
    pub caption: String,
}

/// Serializes predictions as a JSON array ordered by image id.
pub fn predictions_to_json(preds: &BTreeMap<ImageId, String>) -> Result<Vec<u8>> {
    let list: Vec<Prediction> = preds
        .iter()
        .map(|(&image_id, caption)| Prediction {
            image_id,
            caption: caption.clone(),
        })
        .collect();
    let mut out = serde_json::to_vec_pretty(&list)?;
    out.push(b'\n');
    Ok(out)
}

/// Parses a predictions array; an image listed twice is a validation error.
pub fn parse_predictions(text: &str) -> Result<BTreeMap<ImageId, String>> {
    let list: Vec<Prediction> = serde_json::from_str(text)?;
    let mut out = BTreeMap::new();
    for p in list {
        if out.insert(p.image_id, p.caption).is_some() {
            return Err(Error::validation(format!(
                "image {} has more than one prediction",
                p.image_id
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_sorted() {
        let preds = BTreeMap::from([(9, "a dog".to_string()), (2, "".to_string())]);
        let bytes = predictions_to_json(&preds).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.find("\"image_id\": 2").unwrap() < text.find("\"image_id\": 9").unwrap());
        assert_eq!(parse_predictions(&text).unwrap(), preds);
    }

    #[test]
    fn duplicates_rejected() {
        let text = r#"[{"image_id": 1, "caption": "a"}, {"image_id": 1, "caption": "b"}]"#;
        assert!(matches!(parse_predictions(text), Err(Error::Validation(_))));
        assert!(matches!(parse_predictions(r#"[{"image_id": 1}]"#), Err(Error::Json(_))));
    }
}
