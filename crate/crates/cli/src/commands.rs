use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use arccap_core::arcgame::{double_oracle, node_marginals, potentials, train_weights, ArcWeights};
use arccap_core::convcap::{batch_loss, train_step, ImageFeatures, ModelParams, TrainExample};
use arccap_core::data::{
    build_region_graph, build_vocab, load_coco, load_coco_str, parse_predictions, parse_regions, predictions_to_json,
    split, tokenize, write_atomic, CocoDataset, Container, ImageId, Region, RegionGraph, RegionsFile, SplitSource,
    SplitSpec, Vocab, END,
};
use arccap_core::decode::{attribute_marginals, decode_image, DecodeConfig};
use arccap_core::graphcut::Labeling;
use arccap_core::metrics::{evaluate_all, format_table, tokenize_candidates, MetricReport, RefCorpus};
use arccap_core::{selfcheck, Error};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const DATASET: &str = "dataset.json";
pub const REGIONS: &str = "regions.json";
pub const VOCAB: &str = "vocab.json";
pub const SPLIT: &str = "split.json";
pub const CAPTIONER: &str = "captioner.arcc";
pub const CAPTIONER_LOG: &str = "captioner_log.json";
pub const ARC: &str = "arc.arcc";
pub const ARC_LOG: &str = "arc_log.json";

fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("{flag} <path> is required")))
}

/// Artifacts written by `ingest` and read by every later command.
struct Prepared {
    dataset: CocoDataset,
    regions: RegionsFile,
    vocab: Vocab,
    split: SplitSpec,
    feature_dim: usize,
}

fn feature_dim(regions: &RegionsFile) -> Result<usize, Error> {
    let mut dim = None;
    for (id, list) in regions {
        for (k, r) in list.iter().enumerate() {
            match dim {
                None if r.features.is_empty() => {
                    return Err(Error::Validation(format!("image {id} region {k} has no features")))
                }
                None => dim = Some(r.features.len()),
                Some(d) if d != r.features.len() => {
                    return Err(Error::Validation(format!(
                        "image {id} region {k} has {} features, expected {d}",
                        r.features.len()
                    )))
                }
                Some(_) => {}
            }
        }
    }
    dim.ok_or_else(|| Error::Validation("regions file contains no regions".into()))
}

impl Prepared {
    fn load(dir: &Path) -> Result<Self, Error> {
        let dataset: CocoDataset = serde_json::from_str(&read_text(&dir.join(DATASET))?)?;
        let regions = parse_regions(&read_text(&dir.join(REGIONS))?)?;
        let vocab: Vocab = serde_json::from_str(&read_text(&dir.join(VOCAB))?)?;
        let split: SplitSpec = serde_json::from_str(&read_text(&dir.join(SPLIT))?)?;
        let feature_dim = feature_dim(&regions)?;
        Ok(Prepared {
            dataset,
            regions,
            vocab,
            split,
            feature_dim,
        })
    }

    fn regions(&self, id: ImageId) -> &[Region] {
        self.regions.get(&id).map_or(&[], Vec::as_slice)
    }

    /// Region features as attention cells; a single zero cell when the
    /// image has no regions.
    fn features(&self, id: ImageId) -> Result<ImageFeatures, Error> {
        let cells: Vec<Vec<f64>> = self.regions(id).iter().map(|r| r.features.clone()).collect();
        if cells.is_empty() {
            return ImageFeatures::from_cells(vec![vec![0.0; self.feature_dim]]);
        }
        ImageFeatures::from_cells(cells)
    }

    fn graph(&self, id: ImageId) -> Result<Option<RegionGraph>, Error> {
        let regions = self.regions(id);
        if regions.is_empty() {
            return Ok(None);
        }
        build_region_graph(regions.to_vec(), None).map(Some)
    }

    fn caption_tokens(&self, id: ImageId) -> Vec<Vec<String>> {
        self.dataset.images[&id]
            .captions
            .iter()
            .map(|c| tokenize(&c.text))
            .collect()
    }

    /// Vocabulary ids of every region tag in the corpus.
    fn attribute_tokens(&self) -> Vec<usize> {
        let ids: BTreeSet<usize> = self
            .regions
            .values()
            .flatten()
            .filter_map(|r| r.tag.as_deref().and_then(|t| self.vocab.get(t)))
            .collect();
        ids.into_iter().collect()
    }
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    let annotations = required(&cfg.paths.annotations, "--annotations")?;
    let regions_path = required(&cfg.paths.regions, "--regions")?;
    let out = cfg.out_dir()?;

    let dataset = load_coco_str(&read_text(annotations)?)?;
    let regions = parse_regions(&read_text(regions_path)?)?;
    if let Some(id) = regions.keys().find(|id| !dataset.images.contains_key(id)) {
        return Err(Error::Referential(format!("regions file names image {id} which has no annotations entry")).into());
    }
    feature_dim(&regions)?;
    let source = match &cfg.paths.split {
        Some(p) => SplitSource::Explicit(serde_json::from_str(&read_text(p)?).map_err(Error::from)?),
        None => SplitSource::Ratios {
            train: cfg.data.train_ratio,
            val: cfg.data.val_ratio,
            test: cfg.data.test_ratio,
            seed: cfg.seed,
        },
    };
    let spec = split(dataset.ids(), &source)?;

    // vocabulary comes from training captions only
    let train_tokens: Vec<Vec<String>> = spec
        .train
        .iter()
        .flat_map(|id| dataset.images[id].captions.iter().map(|c| tokenize(&c.text)))
        .collect();
    let vocab = build_vocab(train_tokens.iter().map(Vec::as_slice), cfg.data.min_count)?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join(DATASET), &dataset)?;
    write_json(&out.join(REGIONS), &regions)?;
    write_json(&out.join(VOCAB), &vocab)?;
    write_json(&out.join(SPLIT), &spec)?;
    let (tr, va, te) = spec.sizes();
    println!(
        "ingested {} images ({tr} train, {va} val, {te} test), vocabulary of {} tokens",
        dataset.len(),
        vocab.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct StepLog {
    step: u64,
    loss: f64,
    grad_norm: f64,
    clipped: bool,
}

#[derive(Serialize)]
struct CaptionerLog {
    vocab_size: usize,
    ln_vocab: f64,
    examples: usize,
    initial_loss: f64,
    final_loss: f64,
    steps: Vec<StepLog>,
}

pub fn train_captioner(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let prep = Prepared::load(out)?;
    let mut model = cfg.model.clone();
    model.vocab_size = prep.vocab.len();
    model.feature_dim = prep.feature_dim;
    model.seed = cfg.seed;

    let mut examples = Vec::new();
    for &id in &prep.split.train {
        let image = prep.features(id)?;
        for tokens in prep.caption_tokens(id) {
            examples.push(TrainExample {
                image: image.clone(),
                caption: prep.vocab.encode(&tokens),
            });
        }
    }
    if examples.is_empty() {
        return Err(Error::Validation("training split has no captions".into()).into());
    }

    let mut params = ModelParams::init(&model)?;
    let initial_loss = batch_loss(&params, &examples)?;
    log::info!("captioner: {} examples, initial loss {initial_loss:.4}", examples.len());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = order.len();
    let mut steps = Vec::with_capacity(cfg.train.steps as usize);
    let size = cfg.train.batch_size.min(examples.len());
    let mut batch = Vec::with_capacity(size);
    for step in 0..cfg.train.steps {
        batch.clear();
        while batch.len() < size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(examples[order[cursor]].clone());
            cursor += 1;
        }
        let r = train_step(&mut params, &batch, cfg.train.lr, step)?;
        if step % 50 == 0 {
            log::info!("step {step}: loss {:.4} grad norm {:.3}", r.loss, r.grad_norm);
        }
        steps.push(StepLog {
            step,
            loss: r.loss,
            grad_norm: r.grad_norm,
            clipped: r.clipped,
        });
    }
    let final_loss = batch_loss(&params, &examples)?;

    params.to_container()?.write(&out.join(CAPTIONER))?;
    let ln_vocab = (model.vocab_size as f64).ln();
    write_json(
        &out.join(CAPTIONER_LOG),
        &CaptionerLog {
            vocab_size: model.vocab_size,
            ln_vocab,
            examples: examples.len(),
            initial_loss,
            final_loss,
            steps,
        },
    )?;
    println!(
        "captioner: {} steps, per-token loss {initial_loss:.4} -> {final_loss:.4} (ln V = {ln_vocab:.4})",
        cfg.train.steps
    );
    Ok(())
}

#[derive(Serialize)]
struct ArcLog {
    examples: usize,
    gaps: Vec<f64>,
}

pub fn train_arc(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let prep = Prepared::load(out)?;
    let mut examples = Vec::new();
    for &id in &prep.split.train {
        let Some(graph) = prep.graph(id)? else { continue };
        // a region is positive when its tag is mentioned in any caption
        let mentioned: BTreeSet<String> = prep.caption_tokens(id).into_iter().flatten().collect();
        let gold = Labeling(
            graph
                .regions
                .iter()
                .map(|r| r.tag.as_ref().is_some_and(|t| mentioned.contains(t)))
                .collect(),
        );
        examples.push((graph, gold));
    }
    if examples.is_empty() {
        return Err(Error::Validation("no training image has regions".into()).into());
    }
    let trained = train_weights(&examples, &cfg.arc)?;
    trained.weights.to_container()?.write(&out.join(ARC))?;
    let first = trained.gaps.first().copied().unwrap_or(0.0);
    let last = trained.gaps.last().copied().unwrap_or(0.0);
    write_json(
        &out.join(ARC_LOG),
        &ArcLog {
            examples: examples.len(),
            gaps: trained.gaps,
        },
    )?;
    println!(
        "arc: {} graphs, {} epochs, feature-matching gap {first:.4} -> {last:.4}",
        examples.len(),
        cfg.arc.epochs
    );
    Ok(())
}

pub fn predictions_name(beam: usize, variant: &str) -> String {
    format!("predictions.beam{beam}.{variant}.json")
}

fn best_caption(vocab: &Vocab, hyps: &[arccap_core::decode::Hypothesis], id: ImageId) -> Result<String, Error> {
    let best = hyps
        .first()
        .ok_or_else(|| Error::Numeric(format!("decoding image {id} produced no finite hypothesis")))?;
    Ok(vocab.decode(best.words(END)))
}

pub fn decode(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir()?;
    let prep = Prepared::load(out)?;
    let params = ModelParams::from_container(&Container::read(&out.join(CAPTIONER))?)?;
    let weights = ArcWeights::from_container(&Container::read(&out.join(ARC))?)?;
    if params.config.vocab_size != prep.vocab.len() {
        return Err(Error::Validation(format!(
            "captioner has {} output tokens but the vocabulary has {}",
            params.config.vocab_size,
            prep.vocab.len()
        ))
        .into());
    }
    let images = if prep.split.test.is_empty() {
        &prep.split.val
    } else {
        &prep.split.test
    };
    if images.is_empty() {
        return Err(Error::Validation("neither test nor val split has images".into()).into());
    }
    let dcfg = DecodeConfig {
        max_len: cfg.decode.max_len.min(params.config.max_len + 1),
        ..cfg.decode
    };
    let attributes = prep.attribute_tokens();
    let absent: BTreeMap<usize, f64> = attributes.iter().map(|&w| (w, 0.0)).collect();

    let decoded: Vec<(ImageId, String, String)> = images
        .par_iter()
        .map(|&id| {
            let image = prep.features(id)?;
            let plain = decode_image(&params, &image, &BTreeMap::new(), &dcfg, END)?;
            let marginals = match prep.graph(id)? {
                Some(graph) => {
                    let game = double_oracle(&potentials(&graph, &weights)?, cfg.arc.tol, cfg.arc.max_iter)?;
                    attribute_marginals(&graph, &node_marginals(&game.predictor), &prep.vocab, &attributes)?
                }
                None => absent.clone(),
            };
            let fused = decode_image(&params, &image, &marginals, &dcfg, END)?;
            Ok((
                id,
                best_caption(&prep.vocab, &plain, id)?,
                best_caption(&prep.vocab, &fused, id)?,
            ))
        })
        .collect::<Result<_, Error>>()?;

    let cnn: BTreeMap<ImageId, String> = decoded.iter().map(|(id, c, _)| (*id, c.clone())).collect();
    let arc: BTreeMap<ImageId, String> = decoded.into_iter().map(|(id, _, a)| (id, a)).collect();
    let beam = dcfg.beam_size;
    for (variant, preds) in [("cnn", &cnn), ("cnn_arc", &arc)] {
        let path = out.join(predictions_name(beam, variant));
        write_atomic(&path, &predictions_to_json(preds)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn prediction_label(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = name.strip_suffix(".json").unwrap_or(&name);
    name.strip_prefix("predictions.").unwrap_or(name).to_owned()
}

fn find_predictions(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("predictions.") && name.ends_with(".json") {
            found.push(entry.path());
        }
    }
    found.sort();
    Ok(found)
}

fn references(dataset: &CocoDataset, ids: impl Iterator<Item = ImageId>) -> Result<RefCorpus, Error> {
    let mut refs = BTreeMap::new();
    for id in ids {
        let image = dataset
            .images
            .get(&id)
            .ok_or_else(|| Error::Referential(format!("prediction for unknown image {id}")))?;
        if image.captions.is_empty() {
            return Err(Error::Referential(format!("image {id} has no reference captions")));
        }
        refs.insert(id, image.captions.iter().map(|c| c.text.clone()).collect());
    }
    RefCorpus::from_text(&refs)
}

pub fn eval(cfg: &RunConfig, predictions: &[PathBuf]) -> Result<(), CliError> {
    let out = cfg.paths.out.as_deref();
    let dataset = match (&cfg.paths.annotations, out) {
        (Some(p), _) => load_coco(&serde_json::from_str(&read_text(p)?).map_err(Error::from)?)?,
        (None, Some(dir)) => serde_json::from_str(&read_text(&dir.join(DATASET))?).map_err(Error::from)?,
        (None, None) => return Err(CliError::Usage("eval needs --annotations or --out <work dir>".into())),
    };
    let files = match (predictions.is_empty(), out) {
        (false, _) => predictions.to_vec(),
        (true, Some(dir)) => find_predictions(dir)?,
        (true, None) => Vec::new(),
    };
    if files.is_empty() {
        return Err(CliError::Usage("no predictions given (--predictions <file>)".into()));
    }

    let mut reports: Vec<(String, MetricReport)> = Vec::new();
    for file in &files {
        let preds = parse_predictions(&read_text(file)?)?;
        let refs = references(&dataset, preds.keys().copied())?;
        let report = evaluate_all(&tokenize_candidates(&preds), &refs)?;
        let label = prediction_label(file);
        if let Some(dir) = out {
            write_json(&dir.join(format!("report.{label}.json")), &report)?;
        }
        reports.push((label, report));
    }

    let doc: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|(l, r)| Ok((l.clone(), serde_json::to_value(r)?)))
        .collect::<Result<_, Error>>()?;
    println!("{}", serde_json::to_string_pretty(&doc).map_err(Error::from)?);
    println!();
    let rows: Vec<(&str, &MetricReport)> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
    print!("{}", format_table(&rows));
    Ok(())
}

pub fn run_selfcheck(cfg: &RunConfig) -> Result<(), CliError> {
    let suites = selfcheck::run_all(cfg.seed)?;
    let mut failed = Vec::new();
    for s in &suites {
        let verdict = if s.passed() { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {:<36} {:>4} cases, {} failures, worst {:.3e}, {:.2} s",
            s.name, s.cases, s.failures, s.worst, s.seconds
        );
        if !s.passed() {
            failed.push(s.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("oracle suites failed: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        assert_eq!(prediction_label(Path::new("w/predictions.beam2.cnn.json")), "beam2.cnn");
        assert_eq!(prediction_label(Path::new("mine.json")), "mine");
        assert_eq!(predictions_name(4, "cnn_arc"), "predictions.beam4.cnn_arc.json");
    }
}
