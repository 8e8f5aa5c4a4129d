//! Parallel tempering over power posteriors.
//!
//! Replicas keep their states and exchange inverse-temperature labels on
//! an accepted swap, which is observationally the same as exchanging
//! states. Each replica owns a random stream derived from the master seed
//! and its lineage index; swap selection and acceptance use stream 0. The
//! within-temperature sweeps of one iteration may run on several threads;
//! the swap step is sequential, so output does not depend on the thread
//! count.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cwmh_sweep, AdaptConfig, ChainState, ProposalScales};
use crate::store::{SampleStore, StoreMetadata};
use crate::target::{StreamRng, Target};
use crate::tempering::{swap_log_ratio, TemperatureLadder};

pub const CHECKPOINT_FORMAT: &str = "hmm-pt-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwapScheme {
    /// One uniformly chosen adjacent pair per iteration.
    Seo,
    /// All even pairs on even iterations, all odd pairs on odd ones.
    Deo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtConfig {
    pub betas: Vec<f64>,
    pub n_iters: u64,
    pub burn_in: u64,
    /// Within-temperature sweeps between swap attempts.
    pub sweeps_per_swap: u32,
    pub scheme: SwapScheme,
    pub thin: u64,
    pub seed: u64,
    pub adapt: AdaptConfig,
    /// Keep draws from every ladder position, not only the coldest.
    pub retain_all: bool,
    pub record_trajectory: bool,
    /// Log a progress line every this many iterations (0 disables).
    pub progress_every: u64,
}

impl PtConfig {
    pub fn new(betas: Vec<f64>, n_iters: u64, burn_in: u64, seed: u64) -> Self {
        PtConfig {
            betas,
            n_iters,
            burn_in,
            sweeps_per_swap: 1,
            scheme: SwapScheme::Seo,
            thin: 1,
            seed,
            adapt: AdaptConfig::default(),
            retain_all: false,
            record_trajectory: true,
            progress_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        TemperatureLadder::new(self.betas.clone())?;
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: format!("pt.{field}"),
                message: message.into(),
            })
        };
        if self.burn_in >= self.n_iters {
            return bad("burn_in", "must be smaller than n_iters");
        }
        if self.sweeps_per_swap == 0 {
            return bad("sweeps_per_swap", "must be at least 1");
        }
        if self.thin == 0 {
            return bad("thin", "must be at least 1");
        }
        if self.adapt.window == 0 {
            return bad("adapt.window", "must be at least 1");
        }
        Ok(())
    }
}

/// Swap pairs proposed at `iteration`; pair `k` exchanges positions `k`
/// and `k + 1`.
pub fn select_swap_pair(
    scheme: SwapScheme,
    m: usize,
    iteration: u64,
    rng: &mut StreamRng,
) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    match scheme {
        SwapScheme::Seo => vec![rng.gen_range(0..m)],
        SwapScheme::Deo => {
            let start = (iteration % 2) as usize;
            (start..m).step_by(2).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapRecord {
    pub iteration: u64,
    pub pair: u32,
    pub accepted: bool,
}

/// Ladder positions of every lineage over time plus the raw swap attempts.
///
/// Lineage `r` is the replica that started at ladder position `r`. Step 0
/// holds the initial positions; step `h + 1` the positions after the swap
/// phase of iteration `h`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplicaTrajectory {
    pub n_positions: usize,
    pub positions: Vec<u16>,
    pub attempts: Vec<SwapRecord>,
}

impl ReplicaTrajectory {
    pub fn new(n_positions: usize) -> Self {
        let mut t = ReplicaTrajectory {
            n_positions,
            positions: Vec::new(),
            attempts: Vec::new(),
        };
        t.positions.extend((0..n_positions).map(|p| p as u16));
        t
    }

    /// Builds a trajectory from explicit per-step positions of each lineage.
    pub fn from_steps(steps: &[Vec<usize>]) -> Self {
        let n = steps.first().map_or(0, Vec::len);
        ReplicaTrajectory {
            n_positions: n,
            positions: steps.iter().flatten().map(|&p| p as u16).collect(),
            attempts: Vec::new(),
        }
    }

    pub fn n_steps(&self) -> usize {
        if self.n_positions == 0 {
            0
        } else {
            self.positions.len() / self.n_positions
        }
    }

    pub fn step(&self, step: usize) -> &[u16] {
        &self.positions[step * self.n_positions..(step + 1) * self.n_positions]
    }

    pub fn lineage_path(&self, lineage: usize) -> Vec<usize> {
        (0..self.n_steps())
            .map(|s| self.positions[s * self.n_positions + lineage] as usize)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Leg {
    /// Has not been at the cold end yet.
    Unanchored,
    /// Left the cold end, hot end not reached yet.
    Outbound,
    /// Reached the hot end, heading back.
    Returning,
}

/// Online round-trip counter: a trip is cold end, then hot end, then cold
/// end again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripTracker {
    hottest: usize,
    legs: Vec<Leg>,
    pub per_lineage: Vec<u64>,
}

impl RoundTripTracker {
    pub fn new(n_positions: usize) -> Self {
        RoundTripTracker {
            hottest: n_positions.saturating_sub(1),
            legs: vec![Leg::Unanchored; n_positions],
            per_lineage: vec![0; n_positions],
        }
    }

    pub fn observe<P: Copy + Into<usize>>(&mut self, positions: &[P]) {
        if self.hottest == 0 {
            return;
        }
        for (lineage, &p) in positions.iter().enumerate() {
            let p: usize = p.into();
            let leg = &mut self.legs[lineage];
            if p == 0 {
                if *leg == Leg::Returning {
                    self.per_lineage[lineage] += 1;
                }
                *leg = Leg::Outbound;
            } else if p == self.hottest && *leg == Leg::Outbound {
                *leg = Leg::Returning;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.per_lineage.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrips {
    pub per_lineage: Vec<u64>,
    pub total: u64,
}

/// Counts completed round trips of every lineage in `trajectory`.
pub fn count_round_trips(trajectory: &ReplicaTrajectory) -> RoundTrips {
    let mut tracker = RoundTripTracker::new(trajectory.n_positions);
    for s in 0..trajectory.n_steps() {
        tracker.observe(trajectory.step(s));
    }
    RoundTrips {
        total: tracker.total(),
        per_lineage: tracker.per_lineage,
    }
}

/// Per-pair swap counters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SwapCounts {
    pub attempts: Vec<u64>,
    pub accepts: Vec<u64>,
}

impl SwapCounts {
    pub fn new(pairs: usize) -> Self {
        SwapCounts {
            attempts: vec![0; pairs],
            accepts: vec![0; pairs],
        }
    }

    pub fn rates(&self) -> Vec<f64> {
        self.accepts
            .iter()
            .zip(&self.attempts)
            .map(|(&a, &n)| if n == 0 { f64::NAN } else { a as f64 / n as f64 })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Replica<S> {
    chain: ChainState<S>,
    rng: StreamRng,
    position: usize,
    scales: ProposalScales,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicaSnapshot<S> {
    pub state: S,
    /// `None` when the cached value is not finite; re-derived on resume.
    pub log_likelihood: Option<f64>,
    pub log_prior: Option<f64>,
    pub rng: StreamRng,
    pub position: usize,
    pub scales: ProposalScales,
}

/// Complete engine state at a swap barrier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineSnapshot<S> {
    pub format: String,
    pub config: PtConfig,
    pub coordinate_names: Vec<String>,
    pub iteration: u64,
    pub replicas: Vec<ReplicaSnapshot<S>>,
    pub swap_rng: StreamRng,
    pub ladder: TemperatureLadder,
    pub post_burn_in: SwapCounts,
    pub trajectory: ReplicaTrajectory,
    pub round_trips: RoundTripTracker,
    pub store: SampleStore,
    pub ladder_stores: Option<Vec<SampleStore>>,
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct PtOutput {
    /// Retained draws of the coldest position.
    pub store: SampleStore,
    /// Retained draws of every position, when requested.
    pub ladder_stores: Option<Vec<SampleStore>>,
    pub trajectory: ReplicaTrajectory,
    /// Ladder with swap counters over the whole run.
    pub ladder: TemperatureLadder,
    /// Swap counters from the end of burn-in on.
    pub post_burn_in: SwapCounts,
    pub round_trips: RoundTrips,
    /// Final proposal scales, by ladder position.
    pub scales: Vec<ProposalScales>,
}

fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = StreamRng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub struct PtEngine<'a, T: Target> {
    target: &'a T,
    config: PtConfig,
    replicas: Vec<Replica<T::State>>,
    at_position: Vec<usize>,
    swap_rng: StreamRng,
    iteration: u64,
    ladder: TemperatureLadder,
    post_burn_in: SwapCounts,
    trajectory: ReplicaTrajectory,
    round_trips: RoundTripTracker,
    store: SampleStore,
    ladder_stores: Option<Vec<SampleStore>>,
}

impl<'a, T: Target> PtEngine<'a, T> {
    /// Starts every replica from [`Target::initial_state`] drawn on its own
    /// stream.
    pub fn new(target: &'a T, config: PtConfig) -> Result<Self> {
        config.validate()?;
        let states = (0..config.betas.len())
            .map(|k| target.initial_state(&mut stream(config.seed, k as u64 + 1)))
            .collect();
        Self::with_initial_states(target, config, states)
    }

    /// Starts replica `k` (initially at ladder position `k`) from `states[k]`.
    pub fn with_initial_states(
        target: &'a T,
        config: PtConfig,
        states: Vec<T::State>,
    ) -> Result<Self> {
        config.validate()?;
        let ladder = TemperatureLadder::new(config.betas.clone())?;
        let n = ladder.len();
        if states.len() != n {
            return Err(Error::Config {
                field: "initial_states".into(),
                message: format!("{} states for {n} replicas", states.len()),
            });
        }
        let mut replicas = Vec::with_capacity(n);
        for (k, state) in states.into_iter().enumerate() {
            let mut rng = stream(config.seed, k as u64 + 1);
            // keep stream positions independent of how the state was chosen
            let _ = target.initial_state(&mut rng);
            let chain = ChainState::new(target, state);
            let lp = chain.log_power_posterior(config.betas[k]);
            if lp == f64::NEG_INFINITY || lp.is_nan() {
                return Err(Error::Initialization {
                    replica: k,
                    beta: config.betas[k],
                });
            }
            replicas.push(Replica {
                chain,
                rng,
                position: k,
                scales: ProposalScales::for_target(target, config.adapt),
            });
        }
        let names = target.coordinate_names();
        let meta = StoreMetadata {
            seed: config.seed,
            betas: config.betas.clone(),
            burn_in: config.burn_in,
            thin: config.thin,
        };
        let ladder_stores = config
            .retain_all
            .then(|| vec![SampleStore::new(names.clone(), meta.clone()); n]);
        let mut round_trips = RoundTripTracker::new(n);
        let initial: Vec<usize> = (0..n).collect();
        round_trips.observe(&initial);
        Ok(PtEngine {
            target,
            swap_rng: stream(config.seed, 0),
            at_position: initial,
            replicas,
            iteration: 0,
            post_burn_in: SwapCounts::new(n - 1),
            trajectory: if config.record_trajectory {
                ReplicaTrajectory::new(n)
            } else {
                ReplicaTrajectory::default()
            },
            round_trips,
            store: SampleStore::new(names, meta),
            ladder_stores,
            ladder,
            config,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &PtConfig {
        &self.config
    }

    pub fn is_finished(&self) -> bool {
        self.iteration >= self.config.n_iters
    }

    pub fn store(&self) -> &SampleStore {
        &self.store
    }

    /// Current state of the replica at ladder position `position`.
    pub fn state_at(&self, position: usize) -> &ChainState<T::State> {
        &self.replicas[self.at_position[position]].chain
    }

    /// One iteration: sweeps at every temperature, then the swap phase.
    pub fn step(&mut self) {
        let h = self.iteration;
        let adapting = h < self.config.burn_in;
        if h == self.config.burn_in {
            self.replicas.iter_mut().for_each(|r| r.scales.freeze());
        }
        let target = self.target;
        let betas = &self.config.betas;
        let sweeps = self.config.sweeps_per_swap;
        let work = |r: &mut Replica<T::State>| {
            let beta = betas[r.position];
            for _ in 0..sweeps {
                cwmh_sweep(target, &mut r.chain, beta, &mut r.scales, &mut r.rng);
                if adapting {
                    r.scales.end_sweep();
                }
            }
        };
        if self.replicas.len() > 1 && rayon::current_num_threads() > 1 {
            self.replicas.par_iter_mut().for_each(work);
        } else {
            self.replicas.iter_mut().for_each(work);
        }

        let m = self.ladder.len() - 1;
        for k in select_swap_pair(self.config.scheme, m, h, &mut self.swap_rng) {
            let accepted = self.attempt_swap(k);
            self.ladder.swap_attempts[k] += 1;
            if !adapting {
                self.post_burn_in.attempts[k] += 1;
            }
            if accepted {
                self.ladder.swap_accepts[k] += 1;
                if !adapting {
                    self.post_burn_in.accepts[k] += 1;
                }
            }
            if self.config.record_trajectory {
                self.trajectory.attempts.push(SwapRecord {
                    iteration: h,
                    pair: k as u32,
                    accepted,
                });
            }
        }

        let positions: Vec<usize> = self.replicas.iter().map(|r| r.position).collect();
        self.round_trips.observe(&positions);
        if self.config.record_trajectory {
            self.trajectory
                .positions
                .extend(positions.iter().map(|&p| p as u16));
        }

        if h >= self.config.burn_in && (h - self.config.burn_in) % self.config.thin == 0 {
            let cold = &self.replicas[self.at_position[0]].chain.state;
            self.store.push(h, self.target.flatten(cold));
            if let Some(stores) = self.ladder_stores.as_mut() {
                for (pos, store) in stores.iter_mut().enumerate() {
                    let state = &self.replicas[self.at_position[pos]].chain.state;
                    store.push(h, self.target.flatten(state));
                }
            }
        }

        self.iteration += 1;
        let every = self.config.progress_every;
        if every > 0 && self.iteration % every == 0 {
            log::info!(
                "iteration {} / {}: swap rates {:?}, round trips {}",
                self.iteration,
                self.config.n_iters,
                self.ladder
                    .swap_rates()
                    .iter()
                    .map(|r| (r * 1000.0).round() / 1000.0)
                    .collect::<Vec<_>>(),
                self.round_trips.total()
            );
        }
    }

    fn attempt_swap(&mut self, k: usize) -> bool {
        let (a, b) = (self.at_position[k], self.at_position[k + 1]);
        let (beta_k, beta_k1) = (self.config.betas[k], self.config.betas[k + 1]);
        let (ca, cb) = (&self.replicas[a].chain, &self.replicas[b].chain);
        let ratio = swap_log_ratio(
            ca.log_power_posterior(beta_k),
            cb.log_power_posterior(beta_k1),
            cb.log_power_posterior(beta_k),
            ca.log_power_posterior(beta_k1),
        );
        let accepted = self.swap_rng.gen::<f64>().ln() < ratio;
        if accepted {
            self.replicas[a].position = k + 1;
            self.replicas[b].position = k;
            let (lo, hi) = (a.min(b), a.max(b));
            let (left, right) = self.replicas.split_at_mut(hi);
            std::mem::swap(&mut left[lo].scales, &mut right[0].scales);
            self.at_position.swap(k, k + 1);
        }
        accepted
    }

    /// Runs up to `iters` more iterations, stopping at `n_iters`.
    pub fn run(&mut self, iters: u64) {
        let end = (self.iteration + iters).min(self.config.n_iters);
        while self.iteration < end {
            self.step();
        }
    }

    pub fn run_to_end(&mut self) {
        self.run(self.config.n_iters - self.iteration.min(self.config.n_iters));
    }

    pub fn snapshot(&self) -> EngineSnapshot<T::State> {
        let finite = |v: f64| v.is_finite().then_some(v);
        EngineSnapshot {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            coordinate_names: self.target.coordinate_names(),
            iteration: self.iteration,
            replicas: self
                .replicas
                .iter()
                .map(|r| ReplicaSnapshot {
                    state: r.chain.state.clone(),
                    log_likelihood: finite(r.chain.log_likelihood),
                    log_prior: finite(r.chain.log_prior),
                    rng: r.rng.clone(),
                    position: r.position,
                    scales: r.scales.clone(),
                })
                .collect(),
            swap_rng: self.swap_rng.clone(),
            ladder: self.ladder.clone(),
            post_burn_in: self.post_burn_in.clone(),
            trajectory: self.trajectory.clone(),
            round_trips: self.round_trips.clone(),
            store: self.store.clone(),
            ladder_stores: self.ladder_stores.clone(),
        }
    }

    /// Rebuilds an engine from `snapshot`. `config` may extend `n_iters`
    /// and change `progress_every`; every other setting must match.
    pub fn resume(
        target: &'a T,
        snapshot: EngineSnapshot<T::State>,
        config: PtConfig,
    ) -> Result<Self> {
        if snapshot.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "format {:?} is not {CHECKPOINT_FORMAT:?}",
                snapshot.format
            )));
        }
        config.validate()?;
        let old = &snapshot.config;
        if old.betas.len() != config.betas.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} temperatures, config has {}",
                old.betas.len(),
                config.betas.len()
            )));
        }
        let comparable = |c: &PtConfig| {
            let mut c = c.clone();
            c.n_iters = 0;
            c.progress_every = 0;
            c
        };
        if comparable(old) != comparable(&config) {
            return Err(Error::Checkpoint(
                "sampler settings differ from the checkpointed run".into(),
            ));
        }
        if snapshot.coordinate_names != target.coordinate_names() {
            return Err(Error::Checkpoint("model layout differs from the checkpoint".into()));
        }
        if snapshot.iteration > config.n_iters {
            return Err(Error::Checkpoint(format!(
                "checkpoint is at iteration {}, beyond n_iters = {}",
                snapshot.iteration, config.n_iters
            )));
        }
        let n = config.betas.len();
        if snapshot.replicas.len() != n {
            return Err(Error::Checkpoint("replica count does not match the ladder".into()));
        }
        let mut at_position = vec![usize::MAX; n];
        for (r, rep) in snapshot.replicas.iter().enumerate() {
            if rep.position >= n || at_position[rep.position] != usize::MAX {
                return Err(Error::Checkpoint("replica positions are not a permutation".into()));
            }
            at_position[rep.position] = r;
        }
        let replicas = snapshot
            .replicas
            .into_iter()
            .map(|rep| {
                let log_prior = rep.log_prior.unwrap_or_else(|| target.log_prior(&rep.state));
                let log_likelihood = rep
                    .log_likelihood
                    .unwrap_or_else(|| target.log_likelihood(&rep.state));
                Replica {
                    chain: ChainState {
                        state: rep.state,
                        log_likelihood,
                        log_prior,
                    },
                    rng: rep.rng,
                    position: rep.position,
                    scales: rep.scales,
                }
            })
            .collect();
        Ok(PtEngine {
            target,
            config,
            replicas,
            at_position,
            swap_rng: snapshot.swap_rng,
            iteration: snapshot.iteration,
            ladder: snapshot.ladder,
            post_burn_in: snapshot.post_burn_in,
            trajectory: snapshot.trajectory,
            round_trips: snapshot.round_trips,
            store: snapshot.store,
            ladder_stores: snapshot.ladder_stores,
        })
    }

    pub fn finish(self) -> PtOutput {
        let mut scales: Vec<(usize, ProposalScales)> = self
            .replicas
            .into_iter()
            .map(|r| (r.position, r.scales))
            .collect();
        scales.sort_by_key(|(p, _)| *p);
        PtOutput {
            store: self.store,
            ladder_stores: self.ladder_stores,
            trajectory: self.trajectory,
            ladder: self.ladder,
            post_burn_in: self.post_burn_in,
            round_trips: RoundTrips {
                total: self.round_trips.total(),
                per_lineage: self.round_trips.per_lineage,
            },
            scales: scales.into_iter().map(|(_, s)| s).collect(),
        }
    }
}

/// Runs the full schedule from prior-drawn starting states.
pub fn pt_run<T: Target>(target: &T, config: PtConfig) -> Result<PtOutput> {
    let mut engine = PtEngine::new(target, config)?;
    engine.run_to_end();
    Ok(engine.finish())
}
