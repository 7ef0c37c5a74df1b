//! The adversarial robust cut game.
//!
//! A predictor picks a distribution over labelings `ŷ`, an adversary picks a
//! distribution over labelings `y̌`, and the predictor pays
//!
//! ```text
//! E[hamming(ŷ, y̌)] − E_y̌[E_θ(y̌)]
//! ```
//!
//! so the adversary looks for labelings that are both cheap under the
//! learned energy and far from the prediction. Both best responses are
//! exact: the predictor's decomposes per node, the adversary's is a single
//! min-cut on an augmented energy. Equilibria are found by double oracle.

mod learn;
mod matrix_game;

pub use learn::{feature_map, potentials, train_weights, train_weights_with, ArcConfig, ArcTraining, ArcWeights};
pub use matrix_game::{equilibrium_regret, expected_payoff, solve_matrix_game, MatrixGameSolution};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphcut::{energy_value, minimize_energy, BinaryEnergy, Labeling};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Restricted games are solved far tighter than the outer tolerance.
const SUBGAME_TOL: f64 = 1e-9;

pub fn hamming(a: &Labeling, b: &Labeling) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "hamming: lengths {} and {} differ",
            a.len(),
            b.len()
        )));
    }
    Ok(a.bits().zip(b.bits()).filter(|(x, y)| x != y).count())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedStrategy {
    support: Vec<Labeling>,
    probs: Vec<f64>,
}

impl MixedStrategy {
    pub fn new(support: Vec<Labeling>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::validation(format!(
                "mixture needs matching non-empty support and probabilities ({} vs {})",
                support.len(),
                probs.len()
            )));
        }
        let n = support[0].len();
        if support.iter().any(|y| y.len() != n) {
            return Err(Error::validation("mixture support labelings differ in length"));
        }
        let mut sorted: Vec<&Labeling> = support.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("mixture support has duplicate labelings"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::validation(
                "mixture probabilities must be finite and non-negative",
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!("mixture probabilities sum to {total}")));
        }
        Ok(Self { support, probs })
    }

    pub fn pure(y: Labeling) -> Self {
        Self {
            support: vec![y],
            probs: vec![1.0],
        }
    }

    pub fn support(&self) -> &[Labeling] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n(&self) -> usize {
        self.support[0].len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Labeling, f64)> {
        self.support.iter().zip(self.probs.iter().copied())
    }

    /// Most probable labeling; ties go to the lexicographically smallest.
    pub fn mode(&self) -> &Labeling {
        let mut best = 0;
        for k in 1..self.support.len() {
            let (p, q) = (self.probs[k], self.probs[best]);
            if p > q || (p == q && self.support[k] < self.support[best]) {
                best = k;
            }
        }
        &self.support[best]
    }
}

pub fn node_marginals(s: &MixedStrategy) -> Vec<f64> {
    let mut m = vec![0.0; s.n()];
    for (y, p) in s.iter() {
        for (mi, b) in m.iter_mut().zip(y.bits()) {
            if b {
                *mi += p;
            }
        }
    }
    m.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    m
}

fn check_marginals(m: &[f64]) -> Result<()> {
    match m.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(i) => Err(Error::validation(format!("marginal {i} = {} is outside [0, 1]", m[i]))),
        None => Ok(()),
    }
}

/// `argmax_y̌ E_ŷ[hamming(ŷ, y̌)] − E_θ(y̌)` for a predictor with the given
/// node marginals.
///
/// Expected Hamming is `Σ m̂_i + Σ y̌_i (1 − 2 m̂_i)`, so the maximizer is the
/// minimizer of `E_θ` with `1 − 2 m̂_i` subtracted from each unary.
pub fn adversary_best_response(e: &BinaryEnergy, predictor_marginals: &[f64]) -> Result<Labeling> {
    check_marginals(predictor_marginals)?;
    let delta: Vec<f64> = predictor_marginals.iter().map(|m| -(1.0 - 2.0 * m)).collect();
    let augmented = e.with_unary_offset(&delta)?;
    Ok(minimize_energy(&augmented)?.0)
}

/// Labels node `i` with 1 iff the adversary puts more than half its mass on
/// `y̌_i = 1`; this minimizes expected Hamming node by node.
pub fn predictor_best_response(adversary_marginals: &[f64]) -> Result<Labeling> {
    check_marginals(adversary_marginals)?;
    Ok(Labeling(adversary_marginals.iter().map(|&m| m > 0.5).collect()))
}

/// Equilibrium of the prediction game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameResult {
    pub predictor: MixedStrategy,
    pub adversary: MixedStrategy,
    pub value: f64,
    pub regret: f64,
    pub iterations: usize,
}

/// Payoff to the adversary of a pure pair: `hamming(ŷ, y̌) − E_θ(y̌)`.
fn pure_payoff(e: &BinaryEnergy, pred: &Labeling, adv: &Labeling) -> Result<f64> {
    Ok(hamming(pred, adv)? as f64 - energy_value(e, adv)?)
}

/// Payoff matrix with adversary labelings as (maximizing) rows.
pub fn game_matrix(e: &BinaryEnergy, adversary: &[Labeling], predictor: &[Labeling]) -> Result<Vec<Vec<f64>>> {
    adversary
        .iter()
        .map(|a| predictor.iter().map(|p| pure_payoff(e, p, a)).collect())
        .collect()
}

fn mixture_from(support: &[Labeling], probs: &[f64]) -> Result<MixedStrategy> {
    let total: f64 = probs.iter().sum();
    let probs = probs.iter().map(|p| p / total).collect();
    MixedStrategy::new(support.to_vec(), probs)
}

/// Double-oracle equilibrium search.
///
/// Both supports start at the MAP labeling of `e`. Each round solves the
/// restricted game exactly, then adds each player's best response to the
/// other's restricted mixture until neither gains more than `tol`.
pub fn double_oracle(e: &BinaryEnergy, tol: f64, max_iter: usize) -> Result<GameResult> {
    if !(tol > 0.0) {
        return Err(Error::validation(format!("tolerance must be positive, got {tol}")));
    }
    let (map, _) = minimize_energy(e)?;
    let mut adv_support = vec![map.clone()];
    let mut pred_support = vec![map];
    let mut last_regret = f64::INFINITY;

    for iteration in 1..=max_iter {
        let payoff = game_matrix(e, &adv_support, &pred_support)?;
        let sub = solve_matrix_game(&payoff, SUBGAME_TOL)?;
        let adversary = mixture_from(&adv_support, &sub.row_mix)?;
        let predictor = mixture_from(&pred_support, &sub.col_mix)?;

        let adv_br = adversary_best_response(e, &node_marginals(&predictor))?;
        let adv_gain = predictor
            .iter()
            .map(|(p, w)| pure_payoff(e, p, &adv_br).map(|v| w * v))
            .sum::<Result<f64>>()?;
        let pred_br = predictor_best_response(&node_marginals(&adversary))?;
        let pred_loss = adversary
            .iter()
            .map(|(a, w)| pure_payoff(e, &pred_br, a).map(|v| w * v))
            .sum::<Result<f64>>()?;
        let regret = (adv_gain - sub.value).max(sub.value - pred_loss).max(0.0);
        last_regret = regret;

        if regret <= tol {
            return Ok(GameResult {
                predictor,
                adversary,
                value: sub.value,
                regret,
                iterations: iteration,
            });
        }
        let mut grew = false;
        if !adv_support.contains(&adv_br) {
            adv_support.push(adv_br);
            grew = true;
        }
        if !pred_support.contains(&pred_br) {
            pred_support.push(pred_br);
            grew = true;
        }
        if !grew {
            return Err(Error::Convergence {
                what: "double oracle (best responses already in support)",
                iterations: iteration,
                regret,
            });
        }
    }
    Err(Error::Convergence {
        what: "double oracle",
        iterations: max_iter,
        regret: last_regret,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(b: &[u8]) -> Labeling {
        Labeling::from_bits(b).unwrap()
    }

    #[test]
    fn hamming_cases() {
        assert_eq!(hamming(&bits(&[0, 1, 1]), &bits(&[1, 1, 0])).unwrap(), 2);
        let x = bits(&[1, 0, 1, 1]);
        assert_eq!(hamming(&x, &x).unwrap(), 0);
        assert_eq!(hamming(&Labeling::zeros(5), &Labeling::ones(5)).unwrap(), 5);
        assert!(hamming(&Labeling::zeros(2), &Labeling::zeros(3)).is_err());
    }

    #[test]
    fn marginals() {
        let s = MixedStrategy::new(vec![bits(&[1, 0]), bits(&[1, 1])], vec![0.25, 0.75]).unwrap();
        assert_eq!(node_marginals(&s), vec![1.0, 0.75]);
        assert_eq!(
            node_marginals(&MixedStrategy::pure(bits(&[0, 1, 1]))),
            vec![0.0, 1.0, 1.0]
        );
        let all: Vec<_> = (0..8).map(|k| Labeling::from_index(k, 3)).collect();
        let uniform = MixedStrategy::new(all, vec![0.125; 8]).unwrap();
        assert_eq!(node_marginals(&uniform), vec![0.5; 3]);
    }

    #[test]
    fn mixture_validation() {
        assert!(MixedStrategy::new(vec![bits(&[1])], vec![0.5]).is_err());
        assert!(MixedStrategy::new(vec![bits(&[1]), bits(&[1])], vec![0.5, 0.5]).is_err());
        assert!(MixedStrategy::new(vec![bits(&[1]), bits(&[0, 1])], vec![0.5, 0.5]).is_err());
        assert!(MixedStrategy::new(vec![], vec![]).is_err());
    }

    #[test]
    fn predictor_threshold() {
        assert_eq!(predictor_best_response(&[0.8, 0.2]).unwrap(), bits(&[1, 0]));
        assert_eq!(predictor_best_response(&[0.5, 0.5]).unwrap(), bits(&[0, 0]));
        assert!(predictor_best_response(&[1.2]).is_err());
    }

    #[test]
    fn adversary_half_marginals_is_map() {
        let e = BinaryEnergy::new(vec![0.3, -0.4, 0.1], vec![(0, 1, 0.2), (1, 2, 0.5)]).unwrap();
        let map = minimize_energy(&e).unwrap().0;
        assert_eq!(adversary_best_response(&e, &[0.5; 3]).unwrap(), map);
    }

    #[test]
    fn adversary_large_unaries_stay_zero() {
        // all-zeros scores 0; flipping node i scores 1 − 10 < 0
        let e = BinaryEnergy::new(vec![10.0; 3], vec![]).unwrap();
        assert_eq!(adversary_best_response(&e, &[0.0; 3]).unwrap(), Labeling::zeros(3));
        // with unary 0.5 the unit loss bonus wins
        let e = BinaryEnergy::new(vec![0.5; 3], vec![]).unwrap();
        assert_eq!(adversary_best_response(&e, &[0.0; 3]).unwrap(), Labeling::ones(3));
    }

    #[test]
    fn single_node_zero_unary() {
        let e = BinaryEnergy::new(vec![0.0], vec![]).unwrap();
        let r = double_oracle(&e, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((r.value - 0.5).abs() < 1e-9);
        assert!(r.regret <= DEFAULT_TOL);
    }

    #[test]
    fn dominant_labeling_is_pure() {
        let e = BinaryEnergy::new(vec![-5.0, 5.0], vec![(0, 1, 0.1)]).unwrap();
        let r = double_oracle(&e, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let target = bits(&[1, 0]);
        assert_eq!(r.predictor.support(), std::slice::from_ref(&target));
        assert_eq!(r.adversary.support(), &[target]);
        assert_eq!(r.regret, 0.0);
        // energy(1,0) = −5 + 0.1, hamming 0
        assert!((r.value - 4.9).abs() < 1e-12);
    }

    #[test]
    fn max_iter_exhaustion() {
        let e = BinaryEnergy::new(vec![0.0; 3], vec![]).unwrap();
        match double_oracle(&e, DEFAULT_TOL, 1) {
            Err(Error::Convergence { regret, .. }) => assert!(regret > DEFAULT_TOL),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }
}
