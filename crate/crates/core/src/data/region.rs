use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixels, `(x, y)` is the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        let inter = ix.max(0.0) * iy.max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            // two degenerate boxes: identical points overlap fully
            return if self == other { 1.0 } else { 0.0 };
        }
        (inter / union).clamp(0.0, 1.0)
    }
}

/// One detected region as it appears in a regions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// Regions file: image id → regions.
pub type RegionsFile = BTreeMap<u64, Vec<Region>>;

pub fn parse_regions(text: &str) -> Result<RegionsFile> {
    let raw: BTreeMap<String, Vec<Region>> = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|(k, v)| {
            let id = k
                .parse::<u64>()
                .map_err(|_| Error::schema(format!("regions.{k}"), "image id is not an integer"))?;
            Ok((id, v))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEdge {
    pub i: usize,
    pub j: usize,
    pub iou: f64,
    /// Centroid distance divided by the image diagonal.
    pub distance: f64,
}

impl RegionEdge {
    pub fn features(&self) -> [f64; 2] {
        [self.iou, self.distance]
    }
}

pub const EDGE_FEATURE_DIM: usize = 2;

/// Complete graph over the regions of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionGraph {
    pub regions: Vec<Region>,
    pub edges: Vec<RegionEdge>,
}

impl RegionGraph {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.regions.first().map_or(0, |r| r.features.len())
    }
}

/// Builds the complete region graph.
///
/// Distances are normalized by the diagonal of `image_size` when given,
/// otherwise by the diagonal of the union bounding box of all regions.
pub fn build_region_graph(regions: Vec<Region>, image_size: Option<(f64, f64)>) -> Result<RegionGraph> {
    let Some(first) = regions.first() else {
        return Err(Error::validation("region graph needs at least one region"));
    };
    let dim = first.features.len();
    for (k, r) in regions.iter().enumerate() {
        if r.features.len() != dim {
            return Err(Error::validation(format!(
                "region {k} has {} features, region 0 has {dim}",
                r.features.len()
            )));
        }
        if r.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::validation(format!("region {k} has a non-finite feature")));
        }
        let b = r.bbox;
        if !(b.w >= 0.0 && b.h >= 0.0) || !b.x.is_finite() || !b.y.is_finite() {
            return Err(Error::validation(format!("region {k} has an invalid box {:?}", b)));
        }
    }

    let diagonal = match image_size {
        Some((w, h)) => w.hypot(h),
        None => {
            let x0 = regions.iter().map(|r| r.bbox.x).fold(f64::INFINITY, f64::min);
            let y0 = regions.iter().map(|r| r.bbox.y).fold(f64::INFINITY, f64::min);
            let x1 = regions
                .iter()
                .map(|r| r.bbox.x + r.bbox.w)
                .fold(f64::NEG_INFINITY, f64::max);
            let y1 = regions
                .iter()
                .map(|r| r.bbox.y + r.bbox.h)
                .fold(f64::NEG_INFINITY, f64::max);
            (x1 - x0).hypot(y1 - y0)
        }
    };

    let n = regions.len();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (regions[i].bbox, regions[j].bbox);
            let (ca, cb) = (a.center(), b.center());
            let dist = (ca.0 - cb.0).hypot(ca.1 - cb.1);
            edges.push(RegionEdge {
                i,
                j,
                iou: a.iou(&b),
                distance: if diagonal > 0.0 { dist / diagonal } else { 0.0 },
            });
        }
    }
    Ok(RegionGraph { regions, edges })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn region(b: [f64; 4]) -> Region {
        Region {
            bbox: b.into(),
            features: vec![1.0, 0.0],
            tag: None,
        }
    }

    #[test]
    fn complete_graph() {
        let g = build_region_graph(
            vec![
                region([0.0, 0.0, 1.0, 1.0]),
                region([2.0, 0.0, 1.0, 1.0]),
                region([0.0, 3.0, 1.0, 1.0]),
            ],
            None,
        )
        .unwrap();
        assert_eq!(g.edges.len(), 3);
    }

    #[test]
    fn iou_cases() {
        let a = BBox::from([0.0, 0.0, 2.0, 2.0]);
        assert_eq!(a.iou(&a), 1.0);
        let b = BBox::from([1.0, 1.0, 2.0, 2.0]);
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(a.iou(&BBox::from([5.0, 5.0, 1.0, 1.0])), 0.0);
    }

    #[test]
    fn distance_normalization() {
        let g = build_region_graph(
            vec![region([0.0, 0.0, 2.0, 2.0]), region([4.0, 0.0, 2.0, 2.0])],
            Some((6.0, 8.0)),
        )
        .unwrap();
        assert!((g.edges[0].distance - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_mixed_dims() {
        let mut r = region([0.0, 0.0, 1.0, 1.0]);
        r.features.push(3.0);
        assert!(build_region_graph(vec![region([0.0, 0.0, 1.0, 1.0]), r], None).is_err());
        assert!(build_region_graph(vec![], None).is_err());
    }

    #[test]
    fn regions_json() {
        let text = r#"{"7": [{"box": [0, 0, 2, 3], "features": [0.5], "tag": "dog"}, {"box": [1, 1, 1, 1], "features": [1.5]}]}"#;
        let file = parse_regions(text).unwrap();
        assert_eq!(file[&7].len(), 2);
        assert_eq!(file[&7][0].tag.as_deref(), Some("dog"));
        assert_eq!(file[&7][1].bbox.h, 1.0);
        assert!(parse_regions(r#"{"x": []}"#).is_err());
    }
}
