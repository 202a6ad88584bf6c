//! Feature maps and the outcome model of the simulated environment.
//!
//! An [`Environment`] couples a [`FeatureMap`] (which also draws the fresh
//! per-round candidate set) with a linear conditional mean `φ(z)ᵀβ₀` and
//! homoskedastic noise of scale `σ`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Distribution of the i.i.d. per-round context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ContextLaw {
    /// Uniform on the unit sphere of the given dimension.
    UniformSphere(usize),
    /// Uniform over a finite list of context vectors.
    UniformFinite(Vec<Vec<f64>>),
}

impl ContextLaw {
    pub fn dim(&self) -> usize {
        match self {
            ContextLaw::UniformSphere(d) => *d,
            ContextLaw::UniformFinite(list) => list.first().map_or(0, Vec::len),
        }
    }

    /// Largest context norm.
    fn bound(&self) -> f64 {
        match self {
            ContextLaw::UniformSphere(_) => 1.0,
            ContextLaw::UniformFinite(list) => list.iter().map(|x| norm(x)).fold(0.0, f64::max),
        }
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            ContextLaw::UniformSphere(_) => sample_unit_sphere(rng, out),
            ContextLaw::UniformFinite(list) => {
                let idx = rng.random_range(0..list.len());
                out.copy_from_slice(&list[idx]);
            }
        }
    }

    fn descriptor(&self) -> String {
        match self {
            ContextLaw::UniformSphere(d) => format!("sphere({d})"),
            ContextLaw::UniformFinite(list) => {
                let items: Vec<String> = list
                    .iter()
                    .map(|x| x.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" "))
                    .collect();
                format!("finite({})", items.join("; "))
            }
        }
    }
}

/// Fills `out` with a uniform draw from the unit sphere.
pub fn sample_unit_sphere<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let n = norm(out);
        if n > 1e-12 {
            out.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    /// One-hot arms: `φ(a) = e_a`. A single arm gives the constant feature 1.
    TabularArms { arms: usize },
    /// Context `x` placed in the block of the chosen arm: `φ(x, a) = e_a ⊗ x`.
    ContextArmBasis { arms: usize, contexts: ContextLaw },
    /// `arms` fresh i.i.d. uniform unit vectors in `R^dim` every round.
    UnitSphereArms { dim: usize, arms: usize },
}

/// A validated feature map together with its dimension and norm bound `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    kind: FeatureKind,
    dim: usize,
    bound: f64,
}

/// Candidate features offered to the policy in one round, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    dim: usize,
    data: Vec<f64>,
}

impl CandidateSet {
    pub fn new(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

impl FeatureMap {
    /// Validates `kind` and computes the feature dimension.
    pub fn new(kind: FeatureKind) -> Result<Self> {
        let (dim, bound) = match &kind {
            FeatureKind::TabularArms { arms } => {
                if *arms == 0 {
                    return Err(Error::InvalidSpec("tabular arms need at least one arm".into()));
                }
                (*arms, 1.0)
            }
            FeatureKind::ContextArmBasis { arms, contexts } => {
                if *arms < 2 {
                    return Err(Error::InvalidSpec("context-arm basis needs at least two arms".into()));
                }
                let cdim = contexts.dim();
                if cdim == 0 {
                    return Err(Error::InvalidSpec("context dimension must be positive".into()));
                }
                if let ContextLaw::UniformFinite(list) = contexts {
                    if list.iter().any(|x| x.len() != cdim) {
                        return Err(Error::InvalidSpec("finite contexts have unequal lengths".into()));
                    }
                }
                (arms * cdim, contexts.bound())
            }
            FeatureKind::UnitSphereArms { dim, arms } => {
                if *dim == 0 {
                    return Err(Error::InvalidSpec("feature dimension must be positive".into()));
                }
                if *arms < 2 {
                    return Err(Error::InvalidSpec(
                        "unit-sphere arms need at least two arms per round".into(),
                    ));
                }
                (*dim, 1.0)
            }
        };
        Ok(Self { kind, dim, bound })
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Norm bound `L` with `‖φ(z)‖ ≤ L` for every `z`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn arms_per_round(&self) -> usize {
        match &self.kind {
            FeatureKind::TabularArms { arms }
            | FeatureKind::ContextArmBasis { arms, .. }
            | FeatureKind::UnitSphereArms { arms, .. } => *arms,
        }
    }

    /// True when every emitted feature has unit Euclidean norm.
    pub fn unit_norm(&self) -> bool {
        match &self.kind {
            FeatureKind::TabularArms { .. } | FeatureKind::UnitSphereArms { .. } => true,
            FeatureKind::ContextArmBasis { contexts, .. } => match contexts {
                ContextLaw::UniformSphere(_) => true,
                ContextLaw::UniformFinite(list) => list.iter().all(|x| (norm(x) - 1.0).abs() < 1e-12),
            },
        }
    }

    /// `φ(x, a)` for the context-arm basis.
    pub fn context_arm_feature(&self, context: &[f64], arm: usize) -> Vec<f64> {
        let mut phi = vec![0.0; self.dim];
        let c = context.len();
        phi[arm * c..(arm + 1) * c].copy_from_slice(context);
        phi
    }

    /// Draws the candidate set for one round.
    pub fn sample_candidates<R: Rng + ?Sized>(&self, rng: &mut R) -> CandidateSet {
        let mut set = CandidateSet::new(self.dim);
        self.fill_candidates(rng, &mut set);
        set
    }

    /// In-place variant of [`FeatureMap::sample_candidates`].
    pub fn fill_candidates<R: Rng + ?Sized>(&self, rng: &mut R, set: &mut CandidateSet) {
        let d = self.dim;
        let k = self.arms_per_round();
        set.dim = d;
        set.data.clear();
        set.data.resize(d * k, 0.0);
        match &self.kind {
            FeatureKind::TabularArms { arms } => {
                for a in 0..*arms {
                    set.data[a * d + a] = 1.0;
                }
            }
            FeatureKind::ContextArmBasis { arms, contexts } => {
                let c = contexts.dim();
                let mut x = vec![0.0; c];
                contexts.sample_into(rng, &mut x);
                for a in 0..*arms {
                    set.data[a * d + a * c..a * d + (a + 1) * c].copy_from_slice(&x);
                }
            }
            FeatureKind::UnitSphereArms { .. } => {
                for row in set.data.chunks_exact_mut(d) {
                    sample_unit_sphere(rng, row);
                }
            }
        }
    }

    pub fn descriptor(&self) -> String {
        match &self.kind {
            FeatureKind::TabularArms { arms } => format!("tabular(arms={arms})"),
            FeatureKind::ContextArmBasis { arms, contexts } => {
                format!("context_arm(arms={arms}, contexts={})", contexts.descriptor())
            }
            FeatureKind::UnitSphereArms { dim, arms } => format!("unit_sphere(dim={dim}, arms={arms})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    Gaussian,
    /// `±σ` with equal probability.
    BoundedRademacherScaled,
}

/// Data-generating process: `Y = φ(Z)ᵀβ₀ + ε` with `E[ε|Z] = 0`, `E[ε²|Z] = σ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub feature_map: FeatureMap,
    pub beta0: Vec<f64>,
    pub sigma: f64,
    pub noise: NoiseKind,
}

impl Environment {
    pub fn new(feature_map: FeatureMap, beta0: Vec<f64>, sigma: f64, noise: NoiseKind) -> Result<Self> {
        if beta0.len() != feature_map.dim() {
            return Err(Error::DimensionMismatch {
                expected: feature_map.dim(),
                got: beta0.len(),
            });
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "noise scale must be finite and nonnegative, got {sigma}"
            )));
        }
        Ok(Self {
            feature_map,
            beta0,
            sigma,
            noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.feature_map.dim()
    }

    pub fn context_law(&self) -> Option<&ContextLaw> {
        match self.feature_map.kind() {
            FeatureKind::ContextArmBasis { contexts, .. } => Some(contexts),
            _ => None,
        }
    }

    /// Conditional mean `φᵀβ₀`.
    pub fn mean_outcome(&self, feature: &[f64]) -> f64 {
        dot(feature, &self.beta0)
    }

    /// Draws one noise variable. A draw is always consumed, even for `σ = 0`,
    /// so streams stay aligned across noise scales.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.noise {
            NoiseKind::Gaussian => self.sigma * rng.sample::<f64, _>(StandardNormal),
            NoiseKind::BoundedRademacherScaled => {
                if rng.random::<bool>() {
                    self.sigma
                } else {
                    -self.sigma
                }
            }
        }
    }

    pub fn sample_outcome<R: Rng + ?Sized>(&self, feature: &[f64], rng: &mut R) -> f64 {
        debug_assert_eq!(feature.len(), self.dim());
        self.mean_outcome(feature) + self.sample_noise(rng)
    }

    pub fn descriptor(&self) -> String {
        let beta: Vec<String> = self.beta0.iter().map(|b| format!("{b:?}")).collect();
        let noise = match self.noise {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::BoundedRademacherScaled => "rademacher",
        };
        format!(
            "features={} sigma={:?} noise={} beta0=[{}]",
            self.feature_map.descriptor(),
            self.sigma,
            noise,
            beta.join(" ")
        )
    }
}
