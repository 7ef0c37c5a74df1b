//! Moment-matching learner for the cut potentials.
//!
//! Features of a labeling stack `Σ_i y_i f_i` (node part) and
//! `Σ_(i,j) [y_i = y_j] g_ij` (edge part). The energy handed to the game is
//! the negated linear score, `θ_i = −w_node·f_i` and
//! `w_ij = max(0, w_edge·g_ij)`, so descending on `E_adv[φ] − φ_gold`
//! lowers the energy of the gold labeling relative to the adversary's.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{double_oracle, GameResult, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::data::{Container, RegionGraph, Tensor, EDGE_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::graphcut::{BinaryEnergy, Labeling};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcWeights {
    pub node_weights: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

impl ArcWeights {
    pub fn zeros(node_dim: usize) -> Self {
        Self {
            node_weights: vec![0.0; node_dim],
            edge_weights: vec![0.0; EDGE_FEATURE_DIM],
        }
    }

    pub fn dim(&self) -> usize {
        self.node_weights.len() + self.edge_weights.len()
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::default();
        c.push(Tensor::new(
            "arc.node_weights",
            vec![self.node_weights.len()],
            self.node_weights.clone(),
        )?);
        c.push(Tensor::new(
            "arc.edge_weights",
            vec![self.edge_weights.len()],
            self.edge_weights.clone(),
        )?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let node = c.require("arc.node_weights")?;
        let edge = c.require("arc.edge_weights")?;
        if node.dims.len() != 1 || edge.dims != [EDGE_FEATURE_DIM] {
            return Err(Error::validation("arc weight tensors have unexpected shapes"));
        }
        Ok(Self {
            node_weights: node.data.clone(),
            edge_weights: edge.data.clone(),
        })
    }

    fn flat(&self) -> Vec<f64> {
        self.node_weights.iter().chain(&self.edge_weights).copied().collect()
    }

    fn from_flat(flat: &[f64], node_dim: usize) -> Self {
        Self {
            node_weights: flat[..node_dim].to_vec(),
            edge_weights: flat[node_dim..].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArcConfig {
    pub eta0: f64,
    pub epochs: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ArcConfig {
    fn default() -> Self {
        Self {
            eta0: 0.1,
            epochs: 50,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcTraining {
    /// Average of the per-epoch iterates.
    pub weights: ArcWeights,
    pub last_iterate: ArcWeights,
    /// `‖mean_k (E_adv[φ_k] − φ_k(gold))‖₂` at the start of each epoch.
    pub gaps: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cut energy induced by the weights on one graph.
pub fn potentials(graph: &RegionGraph, w: &ArcWeights) -> Result<BinaryEnergy> {
    if graph.feature_dim() != w.node_weights.len() || w.edge_weights.len() != EDGE_FEATURE_DIM {
        return Err(Error::validation(format!(
            "weights are {}+{} dimensional, graph features are {}+{}",
            w.node_weights.len(),
            w.edge_weights.len(),
            graph.feature_dim(),
            EDGE_FEATURE_DIM
        )));
    }
    let unary = graph
        .regions
        .iter()
        .map(|r| -dot(&w.node_weights, &r.features))
        .collect();
    let pairwise = graph
        .edges
        .iter()
        .map(|e| (e.i, e.j, dot(&w.edge_weights, &e.features()).max(0.0)))
        .collect();
    BinaryEnergy::new(unary, pairwise)
}

/// `φ(x, y)`: node features weighted by `y_i`, edge features weighted by
/// label agreement.
pub fn feature_map(graph: &RegionGraph, y: &Labeling) -> Result<Vec<f64>> {
    if y.len() != graph.len() {
        return Err(Error::validation(format!(
            "labeling has {} entries for {} regions",
            y.len(),
            graph.len()
        )));
    }
    let dim = graph.feature_dim();
    let mut phi = vec![0.0; dim + EDGE_FEATURE_DIM];
    for (r, on) in graph.regions.iter().zip(y.bits()) {
        if on {
            for (p, f) in phi[..dim].iter_mut().zip(&r.features) {
                *p += f;
            }
        }
    }
    for e in &graph.edges {
        if y.0[e.i] == y.0[e.j] {
            for (p, g) in phi[dim..].iter_mut().zip(e.features()) {
                *p += g;
            }
        }
    }
    Ok(phi)
}

pub fn train_weights(examples: &[(RegionGraph, Labeling)], cfg: &ArcConfig) -> Result<ArcTraining> {
    let dim = examples.first().map_or(0, |(g, _)| g.feature_dim());
    let (tol, max_iter) = (cfg.tol, cfg.max_iter);
    train_weights_with(examples, cfg, ArcWeights::zeros(dim), |e| {
        double_oracle(e, tol, max_iter)
    })
}

/// Subgradient descent with step `eta0/√t`; the game solver is pluggable
/// so that a reference solver can stand in for double oracle.
pub fn train_weights_with<S>(
    examples: &[(RegionGraph, Labeling)],
    cfg: &ArcConfig,
    init: ArcWeights,
    solver: S,
) -> Result<ArcTraining>
where
    S: Fn(&BinaryEnergy) -> Result<GameResult> + Sync,
{
    let node_dim = init.node_weights.len();
    if init.edge_weights.len() != EDGE_FEATURE_DIM {
        return Err(Error::validation("edge weights must match the edge feature dimension"));
    }
    for (k, (g, y)) in examples.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::validation(format!("example {k} has no regions")));
        }
        if g.feature_dim() != node_dim {
            return Err(Error::validation(format!(
                "example {k} has {}-dimensional node features, expected {node_dim}",
                g.feature_dim()
            )));
        }
        if y.len() != g.len() {
            return Err(Error::validation(format!(
                "example {k}: gold labeling has {} entries for {} regions",
                y.len(),
                g.len()
            )));
        }
    }
    if !(cfg.eta0 >= 0.0) || !cfg.eta0.is_finite() {
        return Err(Error::validation(format!("learning rate {} is invalid", cfg.eta0)));
    }

    let mut w = init.flat();
    let mut sum = vec![0.0; w.len()];
    let mut gaps = Vec::with_capacity(cfg.epochs);
    let scale = 1.0 / examples.len().max(1) as f64;

    for epoch in 1..=cfg.epochs {
        let current = ArcWeights::from_flat(&w, node_dim);
        let diffs: Vec<Vec<f64>> = examples
            .par_iter()
            .map(|(g, gold)| {
                let game = solver(&potentials(g, &current)?)?;
                let mut diff = feature_map(g, gold)?;
                diff.iter_mut().for_each(|d| *d = -*d);
                for (y, p) in game.adversary.iter() {
                    for (d, f) in diff.iter_mut().zip(feature_map(g, y)?) {
                        *d += p * f;
                    }
                }
                Ok(diff)
            })
            .collect::<Result<_>>()?;

        let mut grad = vec![0.0; w.len()];
        for diff in &diffs {
            for (g, d) in grad.iter_mut().zip(diff) {
                *g += scale * d;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::numeric(format!("non-finite subgradient in epoch {epoch}")));
        }
        let gap = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        gaps.push(gap);
        log::debug!("arc epoch {epoch}: feature-matching gap {gap:.6}");

        let eta = cfg.eta0 / (epoch as f64).sqrt();
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= eta * g;
        }
        for (s, wi) in sum.iter_mut().zip(&w) {
            *s += wi;
        }
    }

    let averaged = if cfg.epochs == 0 {
        w.clone()
    } else {
        sum.iter().map(|s| s / cfg.epochs as f64).collect()
    };
    Ok(ArcTraining {
        weights: ArcWeights::from_flat(&averaged, node_dim),
        last_iterate: ArcWeights::from_flat(&w, node_dim),
        gaps,
    })
}
