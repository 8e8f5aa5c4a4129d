//! Sampling targets: anything the component-wise kernel and the tempering
//! engine can explore.

use std::fmt::Debug;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;
use crate::hmm::{ModelSpec, ObservationSet, ParamVector, PreparedData};
use crate::priors::{log_prior_unchecked, sample_prior_with, PriorConfig};

/// Random stream type used by every sampler in the crate.
pub type StreamRng = ChaCha8Rng;

/// A posterior `likelihood x prior` split into sub-blocks for
/// component-wise Metropolis updates.
pub trait Target: Sync {
    type State: Clone + Debug + Send + Sync + Serialize + DeserializeOwned;

    fn log_likelihood(&self, state: &Self::State) -> f64;

    fn log_prior(&self, state: &Self::State) -> f64;

    fn n_blocks(&self) -> usize;

    fn block_name(&self, block: usize) -> String;

    /// Initial random-walk step for `block`.
    fn initial_step(&self, _block: usize) -> f64 {
        0.1
    }

    /// Perturbs `block` of `state` in place with a random walk of scale
    /// `step` in the block's unconstrained coordinates. Returns the change
    /// in log-Jacobian of the map from those coordinates to the state.
    fn propose(&self, state: &mut Self::State, block: usize, step: f64, rng: &mut StreamRng)
        -> f64;

    fn coordinate_names(&self) -> Vec<String>;

    fn flatten(&self, state: &Self::State) -> Vec<f64>;

    /// Starting point for a replica.
    fn initial_state(&self, rng: &mut StreamRng) -> Self::State;
}

/// One component-wise update block of an HMM parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Baseline working parameters of row `i` together with `zeta_i`.
    TransitionRow(usize),
    /// Initial distribution, moved on the additive log-ratio scale.
    Delta,
    /// Covariate offsets of row `i`.
    CovariateRow(usize),
    /// All parameters of stream `p`, moved on the log scale.
    Emission(usize),
}

/// Ordered partition of a [`ParamVector`] into update blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    pub blocks: Vec<Block>,
}

impl BlockLayout {
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let n = spec.n_states();
        let mut blocks: Vec<Block> = (0..n).map(Block::TransitionRow).collect();
        if n > 1 {
            blocks.push(Block::Delta);
        }
        if n > 1 && spec.has_covariate() {
            blocks.extend((0..n).map(Block::CovariateRow));
        }
        blocks.extend((0..spec.n_streams()).map(Block::Emission));
        BlockLayout { blocks }
    }
}

/// Posterior of a Bayesian HMM.
#[derive(Debug, Clone)]
pub struct HmmTarget {
    spec: ModelSpec,
    prior: PriorConfig,
    data: PreparedData,
    layout: BlockLayout,
}

impl HmmTarget {
    pub fn new(spec: ModelSpec, prior: PriorConfig, data: &ObservationSet) -> Result<Self> {
        prior.validate(&spec)?;
        let data = PreparedData::new(&spec, data)?;
        let layout = BlockLayout::for_spec(&spec);
        Ok(HmmTarget {
            spec,
            prior,
            data,
            layout,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn prior(&self) -> &PriorConfig {
        &self.prior
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }
}

fn normal(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

impl Target for HmmTarget {
    type State = ParamVector;

    fn log_likelihood(&self, state: &ParamVector) -> f64 {
        self.data.log_likelihood(state)
    }

    fn log_prior(&self, state: &ParamVector) -> f64 {
        log_prior_unchecked(state, &self.prior)
    }

    fn n_blocks(&self) -> usize {
        self.layout.blocks.len()
    }

    fn block_name(&self, block: usize) -> String {
        match self.layout.blocks[block] {
            Block::TransitionRow(i) => format!("transition_row[{}]", i + 1),
            Block::Delta => "delta".into(),
            Block::CovariateRow(i) => format!("covariate_row[{}]", i + 1),
            Block::Emission(p) => format!("emission[{}]", self.spec.streams()[p].name),
        }
    }

    fn initial_step(&self, block: usize) -> f64 {
        match self.layout.blocks[block] {
            Block::TransitionRow(_) | Block::CovariateRow(_) => 0.3,
            Block::Delta => 0.3,
            Block::Emission(_) => 0.05,
        }
    }

    fn propose(&self, state: &mut ParamVector, block: usize, step: f64, rng: &mut StreamRng) -> f64 {
        match self.layout.blocks[block] {
            Block::TransitionRow(i) => {
                state.zeta[i] += step * normal(rng);
                for a in state.alpha0[i].iter_mut() {
                    *a += step * normal(rng);
                }
                0.0
            }
            Block::CovariateRow(i) => {
                for a in state.alpha1[i].iter_mut().flatten() {
                    *a += step * normal(rng);
                }
                0.0
            }
            Block::Delta => {
                let n = state.delta.len();
                let old_jac: f64 = state.delta.iter().map(|d| d.ln()).sum();
                let last = state.delta[n - 1].ln();
                let mut y: Vec<f64> = state.delta[..n - 1]
                    .iter()
                    .map(|d| d.ln() - last + step * normal(rng))
                    .collect();
                y.push(0.0);
                let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = y.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                state.delta = e.iter().map(|v| v / s).collect();
                let new_jac: f64 = state.delta.iter().map(|d| d.ln()).sum();
                new_jac - old_jac
            }
            Block::Emission(p) => {
                let mut jac = 0.0;
                for x in state.emission[p].values_mut() {
                    let z = step * normal(rng);
                    *x *= z.exp();
                    jac += z;
                }
                jac
            }
        }
    }

    fn coordinate_names(&self) -> Vec<String> {
        self.spec.coordinate_names()
    }

    fn flatten(&self, state: &ParamVector) -> Vec<f64> {
        state.flatten()
    }

    fn initial_state(&self, rng: &mut StreamRng) -> ParamVector {
        sample_prior_with(&self.spec, &self.prior, rng)
    }
}
