//! Trajectory generation, empirical design moments and the line-oriented
//! trajectory file format.
//!
//! File layout (UTF-8, `\n` line endings):
//!
//! ```text
//! adaptive-lab-trajectory v1 T=<T> d=<d> env_hash=<16 hex> policy_hash=<16 hex> seed=<u64>
//! # env: <environment descriptor>
//! # policy: <policy descriptor>
//! <t>,<action_index>,<feature_0>,...,<feature_{d-1}>,<outcome>,<propensity>
//! ...
//! ```
//!
//! Rounds are 1-based. Reals are written in scientific notation with 17
//! significant digits, so a write/read cycle is lossless. The hashes are
//! FNV-1a 64 of the descriptor strings and are verified on read.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CandidateSet, Environment};
use crate::linalg::SymMatrix;
use crate::policy::{PolicySpec, PolicyState};
use crate::rng::{derive_seed, rng_from_seed};

const MAGIC: &str = "adaptive-lab-trajectory v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// 1-based round index.
    pub round: usize,
    pub action: usize,
    pub feature: Vec<f64>,
    pub outcome: f64,
    /// Probability the policy gave the chosen action (1 for deterministic choices).
    pub propensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env_descriptor: String,
    pub policy_descriptor: String,
    pub dim: usize,
    pub seed: u64,
    pub observations: Vec<Observation>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    pub fn features(&self) -> impl Iterator<Item = &[f64]> {
        self.observations.iter().map(|o| o.feature.as_slice())
    }

    pub fn outcomes(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.outcome)
    }

    /// Policy label taken from the `kind=` token of the descriptor.
    pub fn policy_label(&self) -> &str {
        self.policy_descriptor
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix("kind="))
            .unwrap_or("unknown")
    }

    /// Builds a trajectory from raw `(feature, outcome)` pairs; used for
    /// synthetic fixtures.
    pub fn from_pairs(features: Vec<Vec<f64>>, outcomes: Vec<f64>) -> Result<Self> {
        let dim = features.first().map_or(0, Vec::len);
        if features.len() != outcomes.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: outcomes.len(),
            });
        }
        if let Some(bad) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let observations = features
            .into_iter()
            .zip(outcomes)
            .enumerate()
            .map(|(i, (feature, outcome))| Observation {
                round: i + 1,
                action: 0,
                feature,
                outcome,
                propensity: 1.0,
            })
            .collect();
        Ok(Self {
            env_descriptor: "synthetic".into(),
            policy_descriptor: "synthetic".into(),
            dim,
            seed: 0,
            observations,
        })
    }

    /// Writes the trajectory in the line-oriented format described in the
    /// module docs.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(64 + self.horizon() * (self.dim + 3) * 26);
        let _ = writeln!(
            s,
            "{MAGIC} T={} d={} env_hash={:016x} policy_hash={:016x} seed={}",
            self.horizon(),
            self.dim,
            fnv1a64(&self.env_descriptor),
            fnv1a64(&self.policy_descriptor),
            self.seed
        );
        let _ = writeln!(s, "# env: {}", self.env_descriptor);
        let _ = writeln!(s, "# policy: {}", self.policy_descriptor);
        for obs in &self.observations {
            let _ = write!(s, "{},{}", obs.round, obs.action);
            for x in &obs.feature {
                let _ = write!(s, ",{}", fmt_real(*x));
            }
            let _ = writeln!(s, ",{},{}", fmt_real(obs.outcome), fmt_real(obs.propensity));
        }
        s
    }

    /// Parses the line-oriented format, checking the header counts and hashes.
    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            line: line + 1,
            message,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty trajectory file".into()))?;
        let header = header?;
        let rest = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| parse_err(0, "missing trajectory header".into()))?;
        let mut horizon = None;
        let mut dim = None;
        let mut env_hash = None;
        let mut policy_hash = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| parse_err(0, format!("malformed header field {field:?}")))?;
            let bad = |_| parse_err(0, format!("bad value in header field {field:?}"));
            match key {
                "T" => horizon = Some(value.parse::<usize>().map_err(bad)?),
                "d" => dim = Some(value.parse::<usize>().map_err(bad)?),
                "env_hash" => env_hash = Some(u64::from_str_radix(value, 16).map_err(bad)?),
                "policy_hash" => policy_hash = Some(u64::from_str_radix(value, 16).map_err(bad)?),
                "seed" => seed = Some(value.parse::<u64>().map_err(bad)?),
                _ => return Err(parse_err(0, format!("unknown header field {key:?}"))),
            }
        }
        let missing = |name: &str| parse_err(0, format!("header lacks {name}"));
        let horizon = horizon.ok_or_else(|| missing("T"))?;
        let dim = dim.ok_or_else(|| missing("d"))?;
        let env_hash = env_hash.ok_or_else(|| missing("env_hash"))?;
        let policy_hash = policy_hash.ok_or_else(|| missing("policy_hash"))?;
        let seed = seed.ok_or_else(|| missing("seed"))?;

        let mut env_descriptor = None;
        let mut policy_descriptor = None;
        let mut observations = Vec::with_capacity(horizon);
        for (idx, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim_start();
                if let Some(v) = comment.strip_prefix("env: ") {
                    env_descriptor = Some(v.to_string());
                } else if let Some(v) = comment.strip_prefix("policy: ") {
                    policy_descriptor = Some(v.to_string());
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 4 {
                return Err(parse_err(
                    idx,
                    format!("expected {} fields, found {}", dim + 4, fields.len()),
                ));
            }
            let real = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(idx, format!("bad number {s:?}: {e}")))
            };
            let round = fields[0]
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(idx, format!("bad round: {e}")))?;
            let action = fields[1]
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(idx, format!("bad action: {e}")))?;
            let feature = fields[2..2 + dim].iter().map(|s| real(s)).collect::<Result<Vec<_>>>()?;
            if let Some(prev) = observations.last().map(|o: &Observation| o.round) {
                if round <= prev {
                    return Err(parse_err(idx, "round indices must increase".into()));
                }
            }
            observations.push(Observation {
                round,
                action,
                feature,
                outcome: real(fields[dim + 2])?,
                propensity: real(fields[dim + 3])?,
            });
        }
        if observations.len() != horizon {
            return Err(parse_err(
                0,
                format!(
                    "header declares T={horizon} but {} records were read",
                    observations.len()
                ),
            ));
        }
        let env_descriptor = env_descriptor.unwrap_or_default();
        let policy_descriptor = policy_descriptor.unwrap_or_default();
        if fnv1a64(&env_descriptor) != env_hash || fnv1a64(&policy_descriptor) != policy_hash {
            return Err(parse_err(0, "descriptor hash mismatch".into()));
        }
        Ok(Self {
            env_descriptor,
            policy_descriptor,
            dim,
            seed,
            observations,
        })
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Simulates `horizon` rounds of `policy` in `env` from the stream `seed`.
///
/// Each round draws the candidate set, lets the policy choose, draws the
/// outcome and feeds `(φ, y)` back into the policy state.
pub fn generate_trajectory(env: &Environment, policy: &PolicySpec, horizon: usize, seed: u64) -> Result<Trajectory> {
    let (traj, _) = generate_with_state(env, policy, horizon, seed)?;
    Ok(traj)
}

/// [`generate_trajectory`], also returning the final policy state.
pub fn generate_with_state(
    env: &Environment,
    policy: &PolicySpec,
    horizon: usize,
    seed: u64,
) -> Result<(Trajectory, PolicyState)> {
    if horizon == 0 {
        return Err(Error::InvalidSpec("horizon must be at least 1".into()));
    }
    let dim = env.dim();
    let mut rng = rng_from_seed(seed);
    let mut state = PolicyState::new(*policy, dim)?;
    let mut candidates = CandidateSet::new(dim);
    let mut observations = Vec::with_capacity(horizon);
    for round in 1..=horizon {
        env.feature_map.fill_candidates(&mut rng, &mut candidates);
        let (action, propensity) = state.select_action(&candidates, &mut rng)?;
        let feature = candidates.get(action).to_vec();
        let outcome = env.sample_outcome(&feature, &mut rng);
        state.update(&feature, outcome);
        observations.push(Observation {
            round,
            action,
            feature,
            outcome,
            propensity,
        });
    }
    Ok((
        Trajectory {
            env_descriptor: env.descriptor(),
            policy_descriptor: policy.descriptor(),
            dim,
            seed,
            observations,
        },
        state,
    ))
}

/// `Σ̂ = (1/T) Σ_t φ(Z_t) φ(Z_t)ᵀ`.
pub fn empirical_gram(traj: &Trajectory) -> SymMatrix {
    gram_of_rounds(traj, 0..traj.horizon())
}

/// `(1/|R|) Σ_{t∈R} φ φᵀ` over a range of 0-based round positions.
pub fn gram_of_rounds(traj: &Trajectory, rounds: std::ops::Range<usize>) -> SymMatrix {
    let mut gram = SymMatrix::zeros(traj.dim);
    let count = rounds.len();
    for obs in &traj.observations[rounds] {
        gram.add_outer(&obs.feature, 1.0);
    }
    if count > 0 {
        gram.scaled(1.0 / count as f64)
    } else {
        gram
    }
}

/// `Σ̂_ZY = (1/T) Σ_t φ(Z_t) Y_t`.
pub fn empirical_cross(traj: &Trajectory) -> Vec<f64> {
    cross_of_rounds(traj, 0..traj.horizon())
}

pub fn cross_of_rounds(traj: &Trajectory, rounds: std::ops::Range<usize>) -> Vec<f64> {
    let mut cross = vec![0.0; traj.dim];
    let count = rounds.len();
    for obs in &traj.observations[rounds] {
        for (c, f) in cross.iter_mut().zip(&obs.feature) {
            *c += f * obs.outcome;
        }
    }
    if count > 0 {
        cross.iter_mut().for_each(|c| *c /= count as f64);
    }
    cross
}

/// Monte Carlo estimate of the pooled design `Σ̄_T = E[(1/T) Σ φφᵀ]`: the
/// average of [`empirical_gram`] over `n_mc` independent trajectories whose
/// seeds are derived from `seed`.
pub fn pooled_design_oracle(
    env: &Environment,
    policy: &PolicySpec,
    horizon: usize,
    n_mc: usize,
    seed: u64,
) -> Result<SymMatrix> {
    if n_mc == 0 {
        return Err(Error::InvalidSpec("n_mc must be at least 1".into()));
    }
    let mut acc = SymMatrix::zeros(env.dim());
    for rep in 0..n_mc {
        let traj = generate_trajectory(env, policy, horizon, oracle_seed(seed, rep))?;
        acc.axpy(1.0, &empirical_gram(&traj));
    }
    Ok(acc.scaled(1.0 / n_mc as f64))
}

/// Seed of the `rep`-th trajectory used by [`pooled_design_oracle`].
pub fn oracle_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, u64::MAX, rep as u64)
}
