//! Ingestion and on-disk formats: COCO captions, region files, vocabulary,
//! dataset splits, region graphs, predictions and the `ARCC` tensor container.

mod coco;
mod container;
mod predictions;
mod region;
mod split;
mod vocab;

pub use coco::{load_coco, load_coco_str, Caption, CocoDataset, CocoImage, ImageId};
pub use container::{write_atomic, Container, Tensor, MAGIC, VERSION};
pub use predictions::{parse_predictions, predictions_to_json, Prediction};
pub use region::{
    build_region_graph, parse_regions, BBox, Region, RegionEdge, RegionGraph, RegionsFile, EDGE_FEATURE_DIM,
};
pub use split::{split, SplitSource, SplitSpec};
pub use vocab::{build_vocab, tokenize, Vocab, DEFAULT_MIN_COUNT, END, PAD, SPECIALS, START, UNK};
