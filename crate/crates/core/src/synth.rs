//! Seeded synthetic captioning corpus.
//!
//! Every image holds two salient objects with overlapping central boxes
//! and one to three small peripheral distractors. Region features are a
//! one-hot object tag, a noisy saliency score, the box area and a bias,
//! so both the captioner and the cut model can tell which objects matter.
//! Captions are templated around the two salient objects only.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const OBJECTS: [&str; 8] = ["dog", "cat", "car", "tree", "person", "ball", "boat", "bird"];

const TEMPLATES: [&str; 5] = [
    "a {A} next to a {B}",
    "a photo of a {A} and a {B}",
    "there is a {A} near the {B}",
    "a {A} with a {B} in the picture",
    "this image shows a {A} and a {B}",
];

/// Region feature length: tag one-hot, saliency, area, bias.
pub const FEATURE_DIM: usize = OBJECTS.len() + 3;

pub const IMAGE_SIZE: f64 = 100.0;

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    /// COCO captions document.
    pub annotations: Value,
    /// Regions document keyed by image id.
    pub regions: Value,
}

fn features(tag: usize, saliency: f64, area: f64) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_DIM];
    f[tag] = 1.0;
    f[OBJECTS.len()] = saliency;
    f[OBJECTS.len() + 1] = area / (IMAGE_SIZE * IMAGE_SIZE);
    f[OBJECTS.len() + 2] = 1.0;
    f
}

fn region(tag: usize, bbox: [f64; 4], saliency: f64) -> Value {
    json!({
        "box": bbox,
        "features": features(tag, saliency, bbox[2] * bbox[3]),
        "tag": OBJECTS[tag],
    })
}

fn caption(rng: &mut ChaCha8Rng, a: &str, b: &str, large_a: bool) -> String {
    let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    // size words only appear when the box is clearly large or small
    let a = match (rng.gen_bool(0.5), large_a) {
        (true, true) => format!("large {a}"),
        (true, false) => format!("small {a}"),
        _ => a.to_owned(),
    };
    template.replace("{A}", &a).replace("{B}", b)
}

/// Builds `n_images` images with three captions each, ids starting at 1.
pub fn toy_corpus(n_images: usize, seed: u64) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n_images);
    let mut annotations = Vec::with_capacity(3 * n_images);
    let mut regions = serde_json::Map::new();
    let mut next_ann = 1u64;
    for k in 0..n_images {
        let id = k as u64 + 1;
        let mut tags: Vec<usize> = (0..OBJECTS.len()).collect();
        tags.shuffle(&mut rng);
        let (a, b) = (tags[0], tags[1]);

        let side_a = if rng.gen_bool(0.5) { 45.0 } else { 25.0 };
        let x = rng.gen_range(20.0..30.0);
        let y = rng.gen_range(20.0..30.0);
        let mut list = vec![
            region(a, [x, y, side_a, side_a], rng.gen_range(0.55..0.95)),
            // overlaps the first salient box
            region(b, [x + 12.0, y + 10.0, 30.0, 30.0], rng.gen_range(0.55..0.95)),
        ];
        for &d in &tags[2..2 + rng.gen_range(1..=3)] {
            let corner = [
                [0.0, 0.0],
                [IMAGE_SIZE - 12.0, 0.0],
                [0.0, IMAGE_SIZE - 12.0],
                [IMAGE_SIZE - 12.0, IMAGE_SIZE - 12.0],
            ][rng.gen_range(0..4)];
            let bbox = [
                corner[0] + rng.gen_range(0.0..2.0),
                corner[1] + rng.gen_range(0.0..2.0),
                10.0,
                10.0,
            ];
            list.push(region(d, bbox, rng.gen_range(0.05..0.45)));
        }
        list.shuffle(&mut rng);
        regions.insert(id.to_string(), Value::Array(list));

        images.push(json!({"id": id, "file_name": format!("toy_{id:06}.jpg")}));
        for _ in 0..3 {
            let text = caption(&mut rng, OBJECTS[a], OBJECTS[b], side_a > 30.0);
            annotations.push(json!({"id": next_ann, "image_id": id, "caption": text}));
            next_ann += 1;
        }
    }
    ToyCorpus {
        annotations: json!({"images": images, "annotations": annotations}),
        regions: Value::Object(regions),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_vocab, load_coco, parse_regions, tokenize, SPECIALS};

    #[test]
    fn vocabulary_has_thirty_entries() {
        let toy = toy_corpus(200, 3);
        let ds = load_coco(&toy.annotations).unwrap();
        let tokens: Vec<Vec<String>> = ds
            .images
            .values()
            .flat_map(|im| im.captions.iter().map(|c| tokenize(&c.text)))
            .collect();
        let vocab = build_vocab(tokens.iter().map(Vec::as_slice), 5).unwrap();
        assert_eq!(vocab.len(), 30, "{} specials plus words", SPECIALS.len());
    }

    #[test]
    fn regions_parse_and_are_seeded() {
        let a = toy_corpus(20, 9);
        assert_eq!(a.annotations, toy_corpus(20, 9).annotations);
        assert_ne!(a.regions, toy_corpus(20, 10).regions);
        let r = parse_regions(&a.regions.to_string()).unwrap();
        assert_eq!(r.len(), 20);
        assert!(r.values().all(|v| (3..=5).contains(&v.len())));
        assert!(r.values().flatten().all(|x| x.features.len() == FEATURE_DIM));
    }
}
