//! Logging policies: uniform, ε-greedy and LinUCB with a fixed exploration
//! bonus.
//!
//! A policy is a sequential state machine over the regularised Gram matrix
//! `Λ_t = ridge·I + Σ_{s≤t} φ_s φ_sᵀ` and `Σ_{s≤t} φ_s y_s`. The inverse of
//! `Λ_t` is cached and maintained by Sherman-Morrison updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::CandidateSet;
use crate::linalg::{dot, quadratic_form, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Uniform,
    EpsilonGreedy { epsilon: f64 },
    LinUcb { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// Ridge offset of the policy's internal Gram matrix.
    pub ridge_reg: f64,
}

impl PolicySpec {
    pub fn uniform() -> Self {
        Self {
            kind: PolicyKind::Uniform,
            ridge_reg: 1.0,
        }
    }

    pub fn epsilon_greedy(epsilon: f64) -> Self {
        Self {
            kind: PolicyKind::EpsilonGreedy { epsilon },
            ridge_reg: 1.0,
        }
    }

    pub fn linucb(gamma: f64) -> Self {
        Self {
            kind: PolicyKind::LinUcb { gamma },
            ridge_reg: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_reg > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "policy ridge must be positive, got {}",
                self.ridge_reg
            )));
        }
        match self.kind {
            PolicyKind::EpsilonGreedy { epsilon } if !(0.0..=1.0).contains(&epsilon) => {
                Err(Error::InvalidSpec(format!("epsilon must lie in [0, 1], got {epsilon}")))
            }
            PolicyKind::LinUcb { gamma } if !(gamma >= 0.0) || !gamma.is_finite() => Err(Error::InvalidSpec(format!(
                "exploration bonus must be finite and nonnegative, got {gamma}"
            ))),
            _ => Ok(()),
        }
    }

    /// Short label, safe for CSV cells.
    pub fn label(&self) -> &'static str {
        match self.kind {
            PolicyKind::Uniform => "uniform",
            PolicyKind::EpsilonGreedy { .. } => "eps_greedy",
            PolicyKind::LinUcb { .. } => "linucb",
        }
    }

    /// Exploration bonus, for LinUCB.
    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            PolicyKind::LinUcb { gamma } => Some(gamma),
            _ => None,
        }
    }

    /// Config-style descriptor, embedded in trajectory headers.
    pub fn descriptor(&self) -> String {
        match self.kind {
            PolicyKind::Uniform => format!("kind=uniform ridge={:?}", self.ridge_reg),
            PolicyKind::EpsilonGreedy { epsilon } => {
                format!("kind=eps_greedy epsilon={epsilon:?} ridge={:?}", self.ridge_reg)
            }
            PolicyKind::LinUcb { gamma } => format!("kind=linucb gamma={gamma:?} ridge={:?}", self.ridge_reg),
        }
    }
}

/// `c · d² (σ √(d + ln ln T) + 1)`: the large-exploration schedule for LinUCB.
///
/// # Panics
/// If `horizon < 3` (`ln ln T` must be positive).
pub fn exploration_schedule(horizon: usize, dim: usize, sigma: f64, scale: f64) -> f64 {
    assert!(horizon >= 3, "exploration schedule needs T >= 3");
    exploration_schedule_at(horizon as f64, dim, sigma, scale)
}

/// [`exploration_schedule`] at a real-valued horizon.
pub fn exploration_schedule_at(horizon: f64, dim: usize, sigma: f64, scale: f64) -> f64 {
    let d = dim as f64;
    let loglog = horizon.ln().ln();
    scale * d * d * (sigma * (d + loglog).sqrt() + 1.0)
}

/// Relative tolerance under which two UCB scores count as tied.
const TIE_TOL: f64 = 1e-12;

/// Rounds between consistency checks of the cached inverse (debug builds).
const INVERSE_CHECK_PERIOD: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    spec: PolicySpec,
    gram: SymMatrix,
    gram_inv: SymMatrix,
    xty: Vec<f64>,
    rounds_seen: usize,
}

impl PolicyState {
    pub fn new(spec: PolicySpec, dim: usize) -> Result<Self> {
        spec.validate()?;
        let mut gram = SymMatrix::zeros(dim);
        gram.add_diag(spec.ridge_reg);
        let mut gram_inv = SymMatrix::zeros(dim);
        gram_inv.add_diag(1.0 / spec.ridge_reg);
        Ok(Self {
            spec,
            gram,
            gram_inv,
            xty: vec![0.0; dim],
            rounds_seen: 0,
        })
    }

    /// Builds a state from explicit sufficient statistics.
    pub fn from_statistics(spec: PolicySpec, gram: SymMatrix, xty: Vec<f64>, rounds_seen: usize) -> Result<Self> {
        spec.validate()?;
        if xty.len() != gram.dim() {
            return Err(Error::DimensionMismatch {
                expected: gram.dim(),
                got: xty.len(),
            });
        }
        let gram_inv = crate::linalg::ridge_inverse(&gram, 0.0)?;
        Ok(Self {
            spec,
            gram,
            gram_inv,
            xty,
            rounds_seen,
        })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn gram(&self) -> &SymMatrix {
        &self.gram
    }

    pub fn gram_inverse(&self) -> &SymMatrix {
        &self.gram_inv
    }

    pub fn xty(&self) -> &[f64] {
        &self.xty
    }

    pub fn rounds_seen(&self) -> usize {
        self.rounds_seen
    }

    /// Ridge estimate `Λ⁻¹ Σ φ y`.
    pub fn coefficient_estimate(&self) -> Vec<f64> {
        self.gram_inv.mul_vec(&self.xty)
    }

    /// UCB score `φᵀβ̂ + γ √(φᵀ Λ⁻¹ φ)` of every candidate.
    pub fn ucb_scores(&self, candidates: &CandidateSet, gamma: f64) -> Vec<f64> {
        let beta = self.coefficient_estimate();
        candidates
            .iter()
            .map(|phi| dot(phi, &beta) + gamma * quadratic_form(&self.gram_inv, phi).max(0.0).sqrt())
            .collect()
    }

    fn greedy_index(&self, candidates: &CandidateSet) -> usize {
        let beta = self.coefficient_estimate();
        let scores: Vec<f64> = candidates.iter().map(|phi| dot(phi, &beta)).collect();
        first_max(&scores)
    }

    /// Probability the policy assigns to each candidate.
    pub fn action_probabilities(&self, candidates: &CandidateSet) -> Result<Vec<f64>> {
        let k = candidates.len();
        if k == 0 {
            return Err(Error::EmptyCandidates);
        }
        let mut probs = vec![0.0; k];
        match self.spec.kind {
            PolicyKind::Uniform => probs.iter_mut().for_each(|p| *p = 1.0 / k as f64),
            PolicyKind::EpsilonGreedy { epsilon } => {
                probs.iter_mut().for_each(|p| *p = epsilon / k as f64);
                probs[self.greedy_index(candidates)] += 1.0 - epsilon;
            }
            PolicyKind::LinUcb { gamma } => {
                probs[first_max(&self.ucb_scores(candidates, gamma))] = 1.0;
            }
        }
        Ok(probs)
    }

    /// Chooses a candidate; returns its index and the probability with which
    /// it was chosen (1 for LinUCB's deterministic argmax).
    pub fn select_action<R: Rng + ?Sized>(&self, candidates: &CandidateSet, rng: &mut R) -> Result<(usize, f64)> {
        let k = candidates.len();
        if k == 0 {
            return Err(Error::EmptyCandidates);
        }
        match self.spec.kind {
            PolicyKind::Uniform => Ok((rng.random_range(0..k), 1.0 / k as f64)),
            PolicyKind::EpsilonGreedy { epsilon } => {
                let greedy = self.greedy_index(candidates);
                let explore = rng.random::<f64>() < epsilon;
                let index = if explore { rng.random_range(0..k) } else { greedy };
                let mut propensity = epsilon / k as f64;
                if index == greedy {
                    propensity += 1.0 - epsilon;
                }
                Ok((index, propensity))
            }
            PolicyKind::LinUcb { gamma } => Ok((first_max(&self.ucb_scores(candidates, gamma)), 1.0)),
        }
    }

    /// Rank-one update with the realised `(φ, y)`.
    pub fn update(&mut self, feature: &[f64], outcome: f64) {
        assert_eq!(feature.len(), self.xty.len());
        self.gram.add_outer(feature, 1.0);
        let u = self.gram_inv.mul_vec(feature);
        let denom = 1.0 + dot(feature, &u);
        self.gram_inv.add_outer(&u, -1.0 / denom);
        for (acc, phi) in self.xty.iter_mut().zip(feature) {
            *acc += phi * outcome;
        }
        self.rounds_seen += 1;
        if cfg!(debug_assertions) && self.rounds_seen.is_multiple_of(INVERSE_CHECK_PERIOD) {
            let err = self.inverse_error();
            debug_assert!(err < 1e-6, "cached Gram inverse drifted: {err:e}");
        }
    }

    /// Max-norm distance of `Λ⁻¹_cached · Λ` from the identity.
    pub fn inverse_error(&self) -> f64 {
        let n = self.gram.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| self.gram_inv.get(i, k) * self.gram.get(k, j)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }
}

/// Lowest index whose score is within a relative `TIE_TOL` of the maximum.
fn first_max(scores: &[f64]) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * (1.0 + max.abs());
    scores.iter().position(|&s| s >= max - tol).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureKind, FeatureMap};
    use crate::linalg::ridge_solve;
    use crate::rng::rng_from_seed;

    fn unit_candidates(seed: u64, dim: usize, arms: usize) -> CandidateSet {
        FeatureMap::new(FeatureKind::UnitSphereArms { dim, arms })
            .unwrap()
            .sample_candidates(&mut rng_from_seed(seed))
    }

    #[test]
    fn uniform_propensity() {
        let state = PolicyState::new(PolicySpec::uniform(), 3).unwrap();
        let cands = unit_candidates(1, 3, 4);
        let mut rng = rng_from_seed(0);
        for _ in 0..50 {
            let (i, p) = state.select_action(&cands, &mut rng).unwrap();
            assert!(i < 4);
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn linucb_cold_start_ties_to_first() {
        let gamma = 2.0;
        let spec = PolicySpec {
            kind: PolicyKind::LinUcb { gamma },
            ridge_reg: 4.0,
        };
        let state = PolicyState::new(spec, 5).unwrap();
        let cands = unit_candidates(3, 5, 6);
        for s in state.ucb_scores(&cands, gamma) {
            assert!((s - gamma / 4.0_f64.sqrt()).abs() < 1e-12);
        }
        assert_eq!(state.select_action(&cands, &mut rng_from_seed(0)).unwrap(), (0, 1.0));
    }

    #[test]
    fn linucb_hand_scores() {
        let spec = PolicySpec::linucb(1.0);
        let gram = SymMatrix::from_diag(&[11.0, 2.0]);
        let state = PolicyState::from_statistics(spec, gram, vec![10.0, 0.0], 10).unwrap();
        let cands = CandidateSet::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let scores = state.ucb_scores(&cands, 1.0);
        assert!((scores[0] - (10.0 / 11.0 + 1.0 / 11.0_f64.sqrt())).abs() < 1e-12);
        assert!((scores[0] - 1.2106).abs() < 1e-4);
        assert!((scores[1] - 0.5_f64.sqrt()).abs() < 1e-12);
        assert_eq!(state.select_action(&cands, &mut rng_from_seed(0)).unwrap().0, 0);
    }

    #[test]
    fn empty_candidates_rejected() {
        let state = PolicyState::new(PolicySpec::uniform(), 2).unwrap();
        let empty = CandidateSet::new(2);
        assert_eq!(
            state.select_action(&empty, &mut rng_from_seed(0)),
            Err(Error::EmptyCandidates)
        );
    }

    #[test]
    fn update_from_fresh_state() {
        let mut state = PolicyState::new(PolicySpec::uniform(), 2).unwrap();
        state.update(&[1.0, 0.0], 2.0);
        assert_eq!(state.gram(), &SymMatrix::from_diag(&[2.0, 1.0]));
        assert_eq!(state.xty(), &[2.0, 0.0]);
        assert_eq!(state.rounds_seen(), 1);
    }

    #[test]
    fn updates_commute() {
        let a = [0.3, -0.4, 0.5];
        let b = [1.0, 0.25, -2.0];
        let mut s1 = PolicyState::new(PolicySpec::uniform(), 3).unwrap();
        s1.update(&a, 1.5);
        s1.update(&b, -0.5);
        let mut s2 = PolicyState::new(PolicySpec::uniform(), 3).unwrap();
        s2.update(&b, -0.5);
        s2.update(&a, 1.5);
        for i in 0..3 {
            for j in 0..3 {
                assert!((s1.gram().get(i, j) - s2.gram().get(i, j)).abs() < 1e-15);
            }
            assert!((s1.xty()[i] - s2.xty()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn cached_inverse_stays_consistent() {
        let mut state = PolicyState::new(PolicySpec::linucb(1.0), 6).unwrap();
        let fm = FeatureMap::new(FeatureKind::UnitSphereArms { dim: 6, arms: 2 }).unwrap();
        let mut rng = rng_from_seed(8);
        for _ in 0..1000 {
            let c = fm.sample_candidates(&mut rng);
            state.update(c.get(0), rng.random_range(-1.0..1.0));
        }
        assert!(state.inverse_error() < 1e-7);
        let beta = state.coefficient_estimate();
        let direct = ridge_solve(state.gram(), state.xty(), 0.0).unwrap();
        for (x, y) in beta.iter().zip(&direct) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn exploration_schedule_values() {
        assert_eq!(exploration_schedule(10, 1, 0.0, 1.0), 1.0);
        assert_eq!(exploration_schedule(1000, 1, 0.0, 2.5), 2.5);
        let t = std::f64::consts::E.powf(std::f64::consts::E);
        let g = exploration_schedule_at(t, 2, 1.0, 1.0);
        assert!((g - 4.0 * (3.0_f64.sqrt() + 1.0)).abs() < 1e-12);
        assert!((g - 10.928).abs() < 1e-3);
        assert!((exploration_schedule_at(t, 2, 1.0, 3.0) - 3.0 * g).abs() < 1e-12);
        let mut last = 0.0;
        for d in 1..6 {
            let g = exploration_schedule(100, d, 0.5, 1.0);
            assert!(g >= last);
            last = g;
        }
        assert!(exploration_schedule(100, 3, 1.0, 1.0) <= exploration_schedule(100, 3, 2.0, 1.0));
        assert!(exploration_schedule(100, 3, 1.0, 1.0) <= exploration_schedule(10_000, 3, 1.0, 1.0));
    }

    #[test]
    fn epsilon_greedy_probabilities_sum_to_one() {
        let mut state = PolicyState::new(PolicySpec::epsilon_greedy(0.2), 3).unwrap();
        state.update(&[1.0, 0.0, 0.0], 1.0);
        let cands = unit_candidates(4, 3, 5);
        let probs = state.action_probabilities(&cands).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let mut rng = rng_from_seed(6);
        for _ in 0..100 {
            let (i, p) = state.select_action(&cands, &mut rng).unwrap();
            assert!((p - probs[i]).abs() < 1e-15);
            assert!(p > 0.0 && p <= 1.0);
        }
    }
}
