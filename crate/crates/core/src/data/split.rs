use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::coco::ImageId;
use crate::error::{Error, Result};

/// Disjoint train/val/test image partitions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<ImageId>,
    pub val: Vec<ImageId>,
    pub test: Vec<ImageId>,
}

impl SplitSpec {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    fn validate_against(&self, dataset: &BTreeSet<ImageId>) -> Result<()> {
        let mut seen: HashMap<ImageId, &str> = HashMap::new();
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &id in ids {
                if let Some(prev) = seen.insert(id, name) {
                    return Err(Error::validation(format!(
                        "image {id} appears in both {prev} and {name}"
                    )));
                }
                if !dataset.contains(&id) {
                    return Err(Error::Referential(format!(
                        "split lists image {id} which is not in the dataset"
                    )));
                }
            }
        }
        if let Some(missing) = dataset.iter().find(|id| !seen.contains_key(id)) {
            return Err(Error::validation(format!(
                "image {missing} is not assigned to any split ({} of {} assigned)",
                seen.len(),
                dataset.len()
            )));
        }
        Ok(())
    }
}

/// Where a split comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitSource {
    /// An id-list document: either `{"train": [..], "val": [..], "test": [..]}`
    /// or the community `dataset_coco.json` layout with per-image `cocoid`
    /// and `split` (`restval` counts as train).
    Explicit(Value),
    /// Seeded shuffle at the given (train, val, test) ratios.
    Ratios { train: f64, val: f64, test: f64, seed: u64 },
}

fn ids_at(doc: &Value, key: &str) -> Result<Vec<ImageId>> {
    let arr = doc
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::schema(format!("$.{key}"), "expected an array of image ids"))?;
    arr.iter()
        .enumerate()
        .map(|(k, v)| {
            v.as_u64()
                .ok_or_else(|| Error::schema(format!("$.{key}[{k}]"), "expected an image id"))
        })
        .collect()
}

fn parse_explicit(doc: &Value) -> Result<SplitSpec> {
    if let Some(images) = doc.get("images").and_then(Value::as_array) {
        let mut spec = SplitSpec::default();
        for (k, img) in images.iter().enumerate() {
            let path = format!("$.images[{k}]");
            let id = img
                .get("cocoid")
                .and_then(Value::as_u64)
                .ok_or_else(|| Error::schema(format!("{path}.cocoid"), "missing image id"))?;
            match img.get("split").and_then(Value::as_str) {
                Some("train") | Some("restval") => spec.train.push(id),
                Some("val") => spec.val.push(id),
                Some("test") => spec.test.push(id),
                Some(other) => {
                    return Err(Error::schema(
                        format!("{path}.split"),
                        format!("unknown split {other:?}"),
                    ))
                }
                None => return Err(Error::schema(format!("{path}.split"), "missing field")),
            }
        }
        return Ok(spec);
    }
    Ok(SplitSpec {
        train: ids_at(doc, "train")?,
        val: ids_at(doc, "val")?,
        test: ids_at(doc, "test")?,
    })
}

pub fn split(dataset: impl IntoIterator<Item = ImageId>, source: &SplitSource) -> Result<SplitSpec> {
    let ids: BTreeSet<ImageId> = dataset.into_iter().collect();
    match source {
        SplitSource::Explicit(doc) => {
            let spec = parse_explicit(doc)?;
            spec.validate_against(&ids)?;
            Ok(spec)
        }
        &SplitSource::Ratios { train, val, test, seed } => {
            if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || ((train + val + test) - 1.0).abs() > 1e-9
            {
                return Err(Error::validation(format!(
                    "split ratios ({train}, {val}, {test}) must be in [0, 1] and sum to 1"
                )));
            }
            let mut order: Vec<ImageId> = ids.into_iter().collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n = order.len() as f64;
            let n_val = (n * val).round() as usize;
            let n_test = ((n * test).round() as usize).min(order.len() - n_val);
            let test_ids = order.split_off(order.len() - n_test);
            let val_ids = order.split_off(order.len() - n_val);
            let sorted = |mut v: Vec<ImageId>| {
                v.sort_unstable();
                v
            };
            Ok(SplitSpec {
                train: sorted(order),
                val: sorted(val_ids),
                test: sorted(test_ids),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn seeded_ratios() {
        let src = SplitSource::Ratios {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 7,
        };
        let a = split(0..10, &src).unwrap();
        assert_eq!(a.sizes(), (8, 1, 1));
        assert_eq!(split(0..10, &src).unwrap(), a);
        let mut all: Vec<_> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn explicit_lists() {
        let doc = json!({"train": [1, 2], "val": [3], "test": [4]});
        let s = split([1, 2, 3, 4], &SplitSource::Explicit(doc)).unwrap();
        assert_eq!(s.sizes(), (2, 1, 1));

        let overlap = json!({"train": [1, 2], "val": [2], "test": [3]});
        assert!(matches!(
            split([1, 2, 3], &SplitSource::Explicit(overlap)),
            Err(Error::Validation(_))
        ));
        let unknown = json!({"train": [1, 9], "val": [], "test": []});
        assert!(matches!(
            split([1], &SplitSource::Explicit(unknown)),
            Err(Error::Referential(_))
        ));
        let partial = json!({"train": [1], "val": [], "test": []});
        assert!(split([1, 2], &SplitSource::Explicit(partial)).is_err());
    }

    #[test]
    fn karpathy_layout() {
        let doc = json!({"images": [
            {"cocoid": 5, "split": "train"},
            {"cocoid": 6, "split": "restval"},
            {"cocoid": 7, "split": "val"},
            {"cocoid": 8, "split": "test"}
        ]});
        let s = split([5, 6, 7, 8], &SplitSource::Explicit(doc)).unwrap();
        assert_eq!(s.train, vec![5, 6]);
        assert_eq!(s.sizes(), (2, 1, 1));
    }
}
