//! Exact s–t max-flow / min-cut and binary submodular energy minimization.
//!
//! Max-flow is Dinic's algorithm over real capacities. Energies are reduced
//! to a cut with the usual construction: node `i` on the source side means
//! label 0, on the sink side label 1.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub capacity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowNetwork {
    pub node_count: usize,
    pub source: usize,
    pub sink: usize,
    pub arcs: Vec<FlowArc>,
}

impl FlowNetwork {
    pub fn new(node_count: usize, source: usize, sink: usize) -> Self {
        Self {
            node_count,
            source,
            sink,
            arcs: Vec::new(),
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, capacity: f64) {
        self.arcs.push(FlowArc { from, to, capacity });
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 {
            return Err(Error::validation("flow network has no nodes"));
        }
        if self.source >= self.node_count || self.sink >= self.node_count {
            return Err(Error::validation(format!(
                "terminal out of range: source {}, sink {}, node_count {}",
                self.source, self.sink, self.node_count
            )));
        }
        if self.source == self.sink {
            return Err(Error::validation("source and sink coincide"));
        }
        for (k, arc) in self.arcs.iter().enumerate() {
            if arc.from >= self.node_count || arc.to >= self.node_count {
                return Err(Error::validation(format!(
                    "arc {k} ({} -> {}) references a node >= {}",
                    arc.from, arc.to, self.node_count
                )));
            }
            if !arc.capacity.is_finite() || arc.capacity < 0.0 {
                return Err(Error::validation(format!(
                    "arc {k} has invalid capacity {}",
                    arc.capacity
                )));
            }
        }
        Ok(())
    }

    /// Total capacity of arcs leaving `side`.
    pub fn cut_capacity(&self, side: &[bool]) -> f64 {
        self.arcs
            .iter()
            .filter(|a| side[a.from] && !side[a.to])
            .map(|a| a.capacity)
            .sum()
    }
}

/// Result of a max-flow computation.
#[derive(Clone, Debug, PartialEq)]
pub struct MinCut {
    pub flow_value: f64,
    /// `source_side[v]` is true when `v` lies on the source side of the cut.
    pub source_side: Vec<bool>,
}

impl MinCut {
    pub fn source_nodes(&self) -> Vec<usize> {
        self.source_side
            .iter()
            .enumerate()
            .filter_map(|(v, &s)| s.then_some(v))
            .collect()
    }
}

/// Residual graph in edge-list form; edge `e ^ 1` is the reverse of `e`.
struct Residual {
    head: Vec<usize>,
    residual: Vec<f64>,
    adjacency: Vec<Vec<usize>>,
    eps: f64,
}

impl Residual {
    fn build(net: &FlowNetwork) -> Self {
        let mut adjacency = vec![Vec::new(); net.node_count];
        let mut head = Vec::with_capacity(2 * net.arcs.len());
        let mut residual = Vec::with_capacity(2 * net.arcs.len());
        let mut scale = 0.0f64;
        for arc in &net.arcs {
            adjacency[arc.from].push(head.len());
            head.push(arc.to);
            residual.push(arc.capacity);
            adjacency[arc.to].push(head.len());
            head.push(arc.from);
            residual.push(0.0);
            scale = scale.max(arc.capacity);
        }
        Self {
            head,
            residual,
            adjacency,
            eps: scale * 1e-14,
        }
    }

    fn levels(&self, source: usize) -> Vec<usize> {
        let mut level = vec![usize::MAX; self.adjacency.len()];
        level[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adjacency[u] {
                let v = self.head[e];
                if self.residual[e] > self.eps && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level
    }

    fn augment(&mut self, u: usize, sink: usize, limit: f64, level: &[usize], next: &mut [usize]) -> f64 {
        if u == sink {
            return limit;
        }
        while next[u] < self.adjacency[u].len() {
            let e = self.adjacency[u][next[u]];
            let v = self.head[e];
            if self.residual[e] > self.eps && level[v] == level[u] + 1 {
                let pushed = self.augment(v, sink, limit.min(self.residual[e]), level, next);
                if pushed > 0.0 {
                    self.residual[e] -= pushed;
                    self.residual[e ^ 1] += pushed;
                    return pushed;
                }
            }
            next[u] += 1;
        }
        0.0
    }

    fn reachable_from(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adjacency.len()];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &e in &self.adjacency[u] {
                let v = self.head[e];
                if !seen[v] && self.residual[e] > self.eps {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Nodes that can still push flow into `end` through the residual graph.
    fn reaching(&self, end: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adjacency.len()];
        seen[end] = true;
        let mut stack = vec![end];
        while let Some(v) = stack.pop() {
            for &e in &self.adjacency[v] {
                // e goes v -> u; its twin u -> v carries the residual we need.
                let u = self.head[e];
                if !seen[u] && self.residual[e ^ 1] > self.eps {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen
    }
}

fn run_dinic(net: &FlowNetwork) -> (Residual, f64) {
    let mut graph = Residual::build(net);
    let mut total = 0.0;
    loop {
        let level = graph.levels(net.source);
        if level[net.sink] == usize::MAX {
            break;
        }
        let mut next = vec![0usize; net.node_count];
        loop {
            let pushed = graph.augment(net.source, net.sink, f64::INFINITY, &level, &mut next);
            if pushed <= 0.0 {
                break;
            }
            total += pushed;
        }
    }
    (graph, total)
}

/// Maximum flow and the minimum cut whose source side is the set of nodes
/// reachable from the source in the final residual graph.
pub fn max_flow_min_cut(net: &FlowNetwork) -> Result<MinCut> {
    net.validate()?;
    let (graph, flow_value) = run_dinic(net);
    let source_side = graph.reachable_from(net.source);
    Ok(MinCut {
        flow_value,
        source_side,
    })
}

/// Same flow, but the cut with the largest possible source side.
fn max_flow_largest_source_side(net: &FlowNetwork) -> Result<MinCut> {
    net.validate()?;
    let (graph, flow_value) = run_dinic(net);
    let source_side = graph.reaching(net.sink).into_iter().map(|r| !r).collect();
    Ok(MinCut {
        flow_value,
        source_side,
    })
}

/// Binary labeling; `true` is label 1.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Labeling(pub Vec<bool>);

impl Labeling {
    pub fn zeros(n: usize) -> Self {
        Labeling(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Labeling(vec![true; n])
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::validation(format!("label {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Labeling)
    }

    /// The labeling whose bits spell `index` in binary, most significant
    /// bit first, so that increasing indices enumerate lexicographically.
    pub fn from_index(index: usize, n: usize) -> Self {
        Labeling((0..n).map(|i| (index >> (n - 1 - i)) & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    pub fn as_reals(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pairwise {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// `E(y) = Σ unary_i·y_i + Σ weight_ij·[y_i ≠ y_j]` with non-negative weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryEnergy {
    n: usize,
    unary: Vec<f64>,
    pairwise: Vec<Pairwise>,
}

impl BinaryEnergy {
    pub fn new(unary: Vec<f64>, pairwise: Vec<(usize, usize, f64)>) -> Result<Self> {
        let n = unary.len();
        if let Some(k) = unary.iter().position(|u| !u.is_finite()) {
            return Err(Error::validation(format!("unary {k} is not finite")));
        }
        let mut seen = std::collections::HashSet::new();
        let mut edges = Vec::with_capacity(pairwise.len());
        for (i, j, weight) in pairwise {
            if i >= j || j >= n {
                return Err(Error::validation(format!(
                    "pairwise ({i}, {j}) must satisfy i < j < {n}"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::validation(format!("duplicate pairwise ({i}, {j})")));
            }
            if !weight.is_finite() {
                return Err(Error::validation(format!("pairwise ({i}, {j}) is not finite")));
            }
            if weight < 0.0 {
                return Err(Error::Submodularity { i, j, weight });
            }
            edges.push(Pairwise { i, j, weight });
        }
        Ok(Self {
            n,
            unary,
            pairwise: edges,
        })
    }

    /// Builds the canonical energy from explicit label-0 and label-1 costs.
    /// Returns the energy together with the constant `Σ cost0_i` that was
    /// subtracted out.
    pub fn from_two_sided(cost0: &[f64], cost1: &[f64], pairwise: Vec<(usize, usize, f64)>) -> Result<(Self, f64)> {
        if cost0.len() != cost1.len() {
            return Err(Error::validation("label-0 and label-1 cost vectors differ in length"));
        }
        let unary = cost0.iter().zip(cost1).map(|(c0, c1)| c1 - c0).collect();
        Ok((Self::new(unary, pairwise)?, cost0.iter().sum()))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn unary(&self) -> &[f64] {
        &self.unary
    }

    pub fn pairwise(&self) -> &[Pairwise] {
        &self.pairwise
    }

    /// Copy with `delta[i]` added to every unary.
    pub fn with_unary_offset(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.n {
            return Err(Error::validation(format!(
                "unary offset has length {}, energy has {} variables",
                delta.len(),
                self.n
            )));
        }
        let mut out = self.clone();
        for (u, d) in out.unary.iter_mut().zip(delta) {
            *u += d;
        }
        if out.unary.iter().any(|u| !u.is_finite()) {
            return Err(Error::numeric("augmented unary is not finite"));
        }
        Ok(out)
    }

    /// Applies a permutation: variable `i` of `self` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut unary = vec![0.0; self.n];
        for (i, &u) in self.unary.iter().enumerate() {
            unary[perm[i]] = u;
        }
        let pairwise = self
            .pairwise
            .iter()
            .map(|p| {
                let (a, b) = (perm[p.i], perm[p.j]);
                (a.min(b), a.max(b), p.weight)
            })
            .collect();
        Self::new(unary, pairwise)
    }
}

pub fn energy_value(e: &BinaryEnergy, y: &Labeling) -> Result<f64> {
    if y.len() != e.n {
        return Err(Error::validation(format!(
            "labeling has length {}, energy has {} variables",
            y.len(),
            e.n
        )));
    }
    let unary: f64 = e.unary.iter().zip(y.bits()).filter_map(|(u, b)| b.then_some(*u)).sum();
    let pairwise: f64 = e
        .pairwise
        .iter()
        .filter(|p| y.0[p.i] != y.0[p.j])
        .map(|p| p.weight)
        .sum();
    Ok(unary + pairwise)
}

/// Exact minimizer of a submodular binary energy via a single min-cut.
///
/// Among co-optimal labelings the componentwise-smallest one is returned:
/// it is the cut with the largest source side, and the componentwise
/// minimum of the optimal set is also its lexicographic minimum.
pub fn minimize_energy(e: &BinaryEnergy) -> Result<(Labeling, f64)> {
    if let Some(p) = e.pairwise.iter().find(|p| p.weight < 0.0) {
        return Err(Error::Submodularity {
            i: p.i,
            j: p.j,
            weight: p.weight,
        });
    }
    let n = e.n;
    let (source, sink) = (n, n + 1);
    let mut net = FlowNetwork::new(n + 2, source, sink);
    for (i, &u) in e.unary.iter().enumerate() {
        if u > 0.0 {
            // paid when i ends on the sink side (label 1)
            net.add_arc(source, i, u);
        } else if u < 0.0 {
            // paid when i stays on the source side (label 0)
            net.add_arc(i, sink, -u);
        }
    }
    for p in &e.pairwise {
        if p.weight > 0.0 {
            net.add_arc(p.i, p.j, p.weight);
            net.add_arc(p.j, p.i, p.weight);
        }
    }
    let cut = max_flow_largest_source_side(&net)?;
    let y = Labeling(cut.source_side[..n].iter().map(|&s| !s).collect());
    let value = energy_value(e, &y)?;
    Ok((y, value))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_min(e: &BinaryEnergy) -> (Labeling, f64) {
        let mut best = (Labeling::zeros(e.n()), f64::INFINITY);
        for idx in 0..1usize << e.n() {
            let y = Labeling::from_index(idx, e.n());
            let v = energy_value(e, &y).unwrap();
            if v < best.1 {
                best = (y, v);
            }
        }
        best
    }

    #[test]
    fn single_arc() {
        let mut net = FlowNetwork::new(2, 0, 1);
        net.add_arc(0, 1, 7.0);
        let cut = max_flow_min_cut(&net).unwrap();
        assert_eq!(cut.flow_value, 7.0);
        assert_eq!(cut.source_nodes(), vec![0]);
    }

    #[test]
    fn disconnected_terminals() {
        let mut net = FlowNetwork::new(4, 0, 3);
        net.add_arc(0, 1, 2.0);
        net.add_arc(2, 3, 5.0);
        let cut = max_flow_min_cut(&net).unwrap();
        assert_eq!(cut.flow_value, 0.0);
        assert_eq!(cut.source_nodes(), vec![0, 1]);
    }

    #[test]
    fn diamond() {
        // s=0, a=1, b=2, t=3; the four cuts cost 5, 5, 6, 5
        let mut net = FlowNetwork::new(4, 0, 3);
        for (u, v, c) in [(0, 1, 3.0), (0, 2, 2.0), (1, 3, 2.0), (2, 3, 3.0), (1, 2, 1.0)] {
            net.add_arc(u, v, c);
        }
        let cut = max_flow_min_cut(&net).unwrap();
        assert!((cut.flow_value - 5.0).abs() < 1e-12);
        assert!((net.cut_capacity(&cut.source_side) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_networks() {
        let mut net = FlowNetwork::new(2, 0, 0);
        assert!(matches!(max_flow_min_cut(&net), Err(Error::Validation(_))));
        net.sink = 1;
        net.add_arc(0, 5, 1.0);
        assert!(matches!(max_flow_min_cut(&net), Err(Error::Validation(_))));
        net.arcs[0] = FlowArc {
            from: 0,
            to: 1,
            capacity: -1.0,
        };
        assert!(matches!(max_flow_min_cut(&net), Err(Error::Validation(_))));
    }

    #[test]
    fn energy_values() {
        let e = BinaryEnergy::new(vec![0.0, 0.0], vec![(0, 1, 4.0)]).unwrap();
        assert_eq!(energy_value(&e, &Labeling::zeros(2)).unwrap(), 0.0);
        let e = BinaryEnergy::new(vec![1.0, 2.0], vec![]).unwrap();
        assert_eq!(energy_value(&e, &Labeling::ones(2)).unwrap(), 3.0);
        let e = BinaryEnergy::new(vec![1.0, -2.0], vec![(0, 1, 0.5)]).unwrap();
        let y = Labeling::from_bits(&[0, 1]).unwrap();
        assert_eq!(energy_value(&e, &y).unwrap(), -1.5);
        assert!(energy_value(&e, &Labeling::zeros(3)).is_err());
    }

    #[test]
    fn minimize_small_cases() {
        let e = BinaryEnergy::new(vec![1.0; 4], vec![(0, 1, 0.7), (2, 3, 0.1)]).unwrap();
        assert_eq!(minimize_energy(&e).unwrap(), (Labeling::zeros(4), 0.0));

        let e = BinaryEnergy::new(vec![-1.0, -1.0], vec![(0, 1, 0.3)]).unwrap();
        assert_eq!(minimize_energy(&e).unwrap(), (Labeling::ones(2), -2.0));
    }

    #[test]
    fn ties_resolve_to_lexicographic_minimum() {
        // (0,0,0), (0,0,1), (1,0,1) and the y1 = 1 variants all cost 0
        let e = BinaryEnergy::new(vec![1.0, 0.0, -1.0], vec![(0, 2, 1.0)]).unwrap();
        let (y, v) = minimize_energy(&e).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(y, Labeling::from_bits(&[0, 0, 0]).unwrap());
        assert_eq!(brute_min(&e).0, y);
    }

    #[test]
    fn rejects_negative_pairwise() {
        assert!(matches!(
            BinaryEnergy::new(vec![0.0, 0.0], vec![(0, 1, -0.5)]),
            Err(Error::Submodularity { i: 0, j: 1, .. })
        ));
        assert!(BinaryEnergy::new(vec![0.0, 0.0], vec![(1, 0, 0.5)]).is_err());
        assert!(BinaryEnergy::new(vec![0.0, 0.0], vec![(0, 1, 0.5), (0, 1, 0.2)]).is_err());
    }

    #[test]
    fn two_sided_conversion() {
        let (e, offset) = BinaryEnergy::from_two_sided(&[1.0, 2.0], &[3.0, 0.5], vec![(0, 1, 1.0)]).unwrap();
        assert_eq!(e.unary(), &[2.0, -1.5]);
        assert_eq!(offset, 3.0);
        // cost(y=(1,0)) = 3 + 2 + 1 = 6
        let y = Labeling::from_bits(&[1, 0]).unwrap();
        assert_eq!(energy_value(&e, &y).unwrap() + offset, 6.0);
    }
}
