//! One-dimensional reference targets with known tempered behaviour, used by
//! the tuner, the engine tests and the benchmarks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::log_sum_exp;
use crate::target::{StreamRng, Target};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ToyLikelihood {
    /// `exp(-x^2 / 2)`.
    StandardNormal,
    /// Equal-weight mixture of unit-variance normals at `-center` and `+center`.
    SymmetricMixture { center: f64 },
}

/// A scalar parameter with a flat prior on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTarget {
    pub likelihood: ToyLikelihood,
    pub lower: f64,
    pub upper: f64,
    /// Fixed starting point; uniform over the box when `None`.
    pub start: Option<f64>,
}

impl ToyTarget {
    pub fn standard_normal() -> Self {
        ToyTarget {
            likelihood: ToyLikelihood::StandardNormal,
            lower: -50.0,
            upper: 50.0,
            start: None,
        }
    }

    pub fn bimodal(center: f64) -> Self {
        ToyTarget {
            likelihood: ToyLikelihood::SymmetricMixture { center },
            lower: -50.0,
            upper: 50.0,
            start: None,
        }
    }

    pub fn starting_at(mut self, x: f64) -> Self {
        self.start = Some(x);
        self
    }
}

impl Target for ToyTarget {
    type State = Vec<f64>;

    fn log_likelihood(&self, state: &Vec<f64>) -> f64 {
        let x = state[0];
        match self.likelihood {
            ToyLikelihood::StandardNormal => -0.5 * x * x,
            ToyLikelihood::SymmetricMixture { center } => {
                let a = -0.5 * (x - center).powi(2);
                let b = -0.5 * (x + center).powi(2);
                log_sum_exp(&[a, b]) - std::f64::consts::LN_2
            }
        }
    }

    fn log_prior(&self, state: &Vec<f64>) -> f64 {
        let x = state[0];
        if x >= self.lower && x <= self.upper {
            -(self.upper - self.lower).ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn n_blocks(&self) -> usize {
        1
    }

    fn block_name(&self, _block: usize) -> String {
        "x".into()
    }

    fn initial_step(&self, _block: usize) -> f64 {
        1.0
    }

    fn propose(&self, state: &mut Vec<f64>, _block: usize, step: f64, rng: &mut StreamRng) -> f64 {
        state[0] += step * rng.sample::<f64, _>(rand_distr::StandardNormal);
        0.0
    }

    fn coordinate_names(&self) -> Vec<String> {
        vec!["x".into()]
    }

    fn flatten(&self, state: &Vec<f64>) -> Vec<f64> {
        state.clone()
    }

    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64> {
        vec![self.start.unwrap_or_else(|| rng.gen_range(self.lower..self.upper))]
    }
}
