//! Component-wise Metropolis-Hastings at a fixed inverse temperature, with
//! windowed step-size adaptation during burn-in.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::target::{StreamRng, Target};
use crate::tempering::power_posterior;

/// A chain position together with its cached density terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState<S> {
    pub state: S,
    pub log_likelihood: f64,
    pub log_prior: f64,
}

impl<S> ChainState<S> {
    pub fn new<T: Target<State = S>>(target: &T, state: S) -> Self {
        let log_prior = target.log_prior(&state);
        let log_likelihood = if log_prior == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            target.log_likelihood(&state)
        };
        ChainState {
            state,
            log_likelihood,
            log_prior,
        }
    }

    pub fn log_power_posterior(&self, beta: f64) -> f64 {
        power_posterior(self.log_likelihood, self.log_prior, beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    /// Sweeps per adaptation window.
    pub window: u64,
    pub low: f64,
    pub high: f64,
    pub grow: f64,
    pub shrink: f64,
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            window: 250,
            low: 0.2,
            high: 0.4,
            grow: 1.3,
            shrink: 0.7,
            min_step: 1e-8,
            max_step: 1e4,
        }
    }
}

/// Per-block random-walk scales and acceptance counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub steps: Vec<f64>,
    pub accepts: Vec<u64>,
    pub attempts: Vec<u64>,
    window_accepts: Vec<u64>,
    window_attempts: Vec<u64>,
    window_sweeps: u64,
    pub frozen: bool,
    pub adapt: AdaptConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptOutcome {
    Adapted,
    /// Adaptation was already frozen; nothing changed.
    Frozen,
}

impl ProposalScales {
    pub fn new(steps: Vec<f64>, adapt: AdaptConfig) -> Self {
        let n = steps.len();
        ProposalScales {
            steps,
            accepts: vec![0; n],
            attempts: vec![0; n],
            window_accepts: vec![0; n],
            window_attempts: vec![0; n],
            window_sweeps: 0,
            frozen: false,
            adapt,
        }
    }

    pub fn for_target<T: Target>(target: &T, adapt: AdaptConfig) -> Self {
        Self::new(
            (0..target.n_blocks()).map(|b| target.initial_step(b)).collect(),
            adapt,
        )
    }

    fn record(&mut self, block: usize, accepted: bool) {
        self.attempts[block] += 1;
        self.window_attempts[block] += 1;
        if accepted {
            self.accepts[block] += 1;
            self.window_accepts[block] += 1;
        }
    }

    /// Acceptance rates over the current window.
    pub fn window_rates(&self) -> Vec<f64> {
        self.window_accepts
            .iter()
            .zip(&self.window_attempts)
            .map(|(&a, &n)| if n == 0 { f64::NAN } else { a as f64 / n as f64 })
            .collect()
    }

    /// Overall acceptance rate per block.
    pub fn rates(&self) -> Vec<f64> {
        self.accepts
            .iter()
            .zip(&self.attempts)
            .map(|(&a, &n)| if n == 0 { f64::NAN } else { a as f64 / n as f64 })
            .collect()
    }

    /// Counts one completed sweep and adapts when a window closes.
    pub fn end_sweep(&mut self) -> Option<AdaptOutcome> {
        if self.frozen {
            return None;
        }
        self.window_sweeps += 1;
        if self.window_sweeps < self.adapt.window {
            return None;
        }
        let rates = self.window_rates();
        Some(adapt_scales(self, &rates))
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

/// Scales each block's step by the window acceptance rate: multiply by
/// `grow` above the band, by `shrink` below it, then clamp. Resets the
/// window counters.
pub fn adapt_scales(scales: &mut ProposalScales, window_rates: &[f64]) -> AdaptOutcome {
    if scales.frozen {
        log::debug!("adapt_scales called after adaptation was frozen; ignored");
        return AdaptOutcome::Frozen;
    }
    let cfg = scales.adapt;
    for (step, &rate) in scales.steps.iter_mut().zip(window_rates) {
        if rate > cfg.high {
            *step *= cfg.grow;
        } else if rate < cfg.low {
            *step *= cfg.shrink;
        }
        *step = step.clamp(cfg.min_step, cfg.max_step);
    }
    scales.window_accepts.iter_mut().for_each(|c| *c = 0);
    scales.window_attempts.iter_mut().for_each(|c| *c = 0);
    scales.window_sweeps = 0;
    AdaptOutcome::Adapted
}

/// One pass over every block in layout order. Returns per-block accept
/// flags; cached density terms in `chain` are kept current.
pub fn cwmh_sweep<T: Target>(
    target: &T,
    chain: &mut ChainState<T::State>,
    beta: f64,
    scales: &mut ProposalScales,
    rng: &mut StreamRng,
) -> Vec<bool> {
    let mut flags = Vec::with_capacity(target.n_blocks());
    let current_lp = |c: &ChainState<T::State>| c.log_power_posterior(beta);
    for block in 0..target.n_blocks() {
        let mut proposal = chain.state.clone();
        let log_jac = target.propose(&mut proposal, block, scales.steps[block], rng);
        let prior = target.log_prior(&proposal);
        let lik = if prior == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            target.log_likelihood(&proposal)
        };
        let log_u = rng.gen::<f64>().ln();
        let delta = power_posterior(lik, prior, beta) - current_lp(chain) + log_jac;
        let accepted = log_u < delta;
        if accepted {
            chain.state = proposal;
            chain.log_likelihood = lik;
            chain.log_prior = prior;
        }
        scales.record(block, accepted);
        flags.push(accepted);
    }
    flags
}
