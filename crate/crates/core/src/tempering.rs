//! Power posteriors, inverse-temperature ladders and the ladder tuner.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{log_likelihood, ModelSpec, ObservationSet, ParamVector};
use crate::kernels::{cwmh_sweep, AdaptConfig, ChainState, ProposalScales};
use crate::priors::{log_prior, PriorConfig};
use crate::pt::{PtConfig, PtEngine, SwapScheme};
use crate::target::{StreamRng, Target};

/// `beta * ll + lp`. Only the likelihood is tempered; a `-inf` term stays
/// `-inf` at every temperature.
pub fn power_posterior(log_likelihood: f64, log_prior: f64, beta: f64) -> f64 {
    if log_prior == f64::NEG_INFINITY || log_likelihood == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    beta * log_likelihood + log_prior
}

pub fn log_power_posterior(
    spec: &ModelSpec,
    theta: &ParamVector,
    data: &ObservationSet,
    config: &PriorConfig,
    beta: f64,
) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Domain(format!("beta = {beta} is outside (0, 1]")));
    }
    let lp = log_prior(spec, theta, config)?;
    let ll = log_likelihood(spec, theta, data)?;
    Ok(power_posterior(ll, lp, beta))
}

/// Log acceptance probability of exchanging the states at positions `k`
/// and `k + 1`.
pub fn swap_log_ratio(
    l_k_at_xk: f64,
    l_k1_at_xk1: f64,
    l_k_at_xk1: f64,
    l_k1_at_xk: f64,
) -> f64 {
    let proposed = l_k_at_xk1 + l_k1_at_xk;
    if proposed == f64::NEG_INFINITY || proposed.is_nan() {
        return f64::NEG_INFINITY;
    }
    let current = l_k_at_xk + l_k1_at_xk1;
    if current == f64::NEG_INFINITY {
        // leaving an impossible configuration is always accepted
        return 0.0;
    }
    (proposed - current).min(0.0)
}

/// Strictly decreasing inverse temperatures starting at 1, with swap
/// counters for each adjacent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureLadder {
    pub betas: Vec<f64>,
    pub swap_attempts: Vec<u64>,
    pub swap_accepts: Vec<u64>,
}

impl TemperatureLadder {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        let bad = |message: String| {
            Err(Error::Config {
                field: "ladder".into(),
                message,
            })
        };
        if betas.is_empty() {
            return bad("ladder is empty".into());
        }
        if betas[0] != 1.0 {
            return bad(format!("coldest beta must be 1, got {}", betas[0]));
        }
        for w in betas.windows(2) {
            if !(w[1] < w[0]) {
                return bad(format!("betas must strictly decrease ({} then {})", w[0], w[1]));
            }
        }
        let hot = betas[betas.len() - 1];
        if !(hot > 0.0) {
            return bad(format!("hottest beta must be positive, got {hot}"));
        }
        let pairs = betas.len() - 1;
        Ok(TemperatureLadder {
            betas,
            swap_attempts: vec![0; pairs],
            swap_accepts: vec![0; pairs],
        })
    }

    /// `M + 1` levels with `beta_m = beta_hot^(m / M)`.
    pub fn geometric(beta_hot: f64, m: usize) -> Result<Self> {
        if !(beta_hot > 0.0 && beta_hot < 1.0) {
            return Err(Error::Domain(format!("beta_hot = {beta_hot} is outside (0, 1)")));
        }
        if m == 0 {
            return Err(Error::Domain("a geometric ladder needs M >= 1".into()));
        }
        let ratio = beta_hot.powf(1.0 / m as f64);
        let mut betas: Vec<f64> = (0..=m).map(|k| ratio.powi(k as i32)).collect();
        betas[m] = beta_hot;
        Self::new(betas)
    }

    /// Number of levels, `M + 1`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn hottest(&self) -> f64 {
        self.betas[self.betas.len() - 1]
    }

    pub fn swap_rates(&self) -> Vec<f64> {
        self.swap_accepts
            .iter()
            .zip(&self.swap_attempts)
            .map(|(&a, &n)| if n == 0 { f64::NAN } else { a as f64 / n as f64 })
            .collect()
    }
}

pub fn geometric_ladder(beta_hot: f64, m: usize) -> Result<TemperatureLadder> {
    TemperatureLadder::geometric(beta_hot, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub pilot_iters: u64,
    /// Leading fraction of each pilot discarded before measuring swap rates.
    pub pilot_burn_fraction: f64,
    pub target: f64,
    pub band: (f64, f64),
    /// Stop once the hottest beta is at or below this value.
    pub floor: f64,
    pub max_adjustments: usize,
    /// The search interval for a new candidate reaches this factor below
    /// `min(current, floor)`, and widens by it again if needed.
    pub far_factor: f64,
    pub sweeps_per_swap: u32,
    pub scheme: SwapScheme,
    pub adapt: AdaptConfig,
    pub seed: u64,
}

impl TuneConfig {
    pub fn new(floor: f64, seed: u64) -> Self {
        TuneConfig {
            pilot_iters: 50_000,
            pilot_burn_fraction: 0.2,
            target: 0.234,
            band: (0.22, 0.24),
            floor,
            max_adjustments: 20,
            far_factor: 0.1,
            sweeps_per_swap: 1,
            scheme: SwapScheme::Seo,
            adapt: AdaptConfig::default(),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| {
            Err(Error::Config {
                field: format!("tune.{field}"),
                message: message.into(),
            })
        };
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return bad("floor", "must lie in (0, 1)");
        }
        if !(self.band.0 > 0.0 && self.band.0 < self.band.1 && self.band.1 < 1.0) {
            return bad("band", "must satisfy 0 < low < high < 1");
        }
        if !(self.far_factor > 0.0 && self.far_factor < 1.0) {
            return bad("far_factor", "must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.pilot_burn_fraction) {
            return bad("pilot_burn_fraction", "must lie in [0, 1)");
        }
        if self.pilot_iters < 10 {
            return bad("pilot_iters", "must be at least 10");
        }
        if self.max_adjustments == 0 {
            return bad("max_adjustments", "must be at least 1");
        }
        Ok(())
    }
}

/// One pilot run of the tuner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotRecord {
    /// Index the candidate would take in the ladder.
    pub level: usize,
    pub candidate: f64,
    pub attempts: u64,
    pub accepts: u64,
    pub rate: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    /// Tuned ladder; pair counters come from the accepting pilot of each
    /// level.
    pub ladder: TemperatureLadder,
    pub pilots: Vec<PilotRecord>,
}

/// Grows a ladder from `{1}` one level at a time until the hottest beta
/// reaches `config.floor`.
pub fn tune_ladder<T: Target>(target: &T, config: &TuneConfig) -> Result<TuneOutcome> {
    let floor = config.floor;
    tune_ladder_until(target, config, |betas| betas[betas.len() - 1] <= floor)
}

/// Like [`tune_ladder`] with a custom stopping rule on the current betas.
pub fn tune_ladder_until<T: Target>(
    target: &T,
    config: &TuneConfig,
    stop: impl Fn(&[f64]) -> bool,
) -> Result<TuneOutcome> {
    config.validate()?;
    let (low, high) = config.band;
    let mut betas = vec![1.0];
    let mut attempts = Vec::new();
    let mut accepts = Vec::new();
    let mut pilots = Vec::new();
    let mut last_ratio: Option<f64> = None;
    let mut pilot_index = 0u64;

    while !stop(&betas) {
        let current = betas[betas.len() - 1];
        let level = betas.len();
        // log-scale bracket: rates fall as the candidate moves from near to far
        let mut near = current.ln();
        let mut far = (current.min(config.floor) * config.far_factor).ln();
        let mut far_confirmed = false;
        let mut candidate = match last_ratio {
            Some(r) => (current * r).max(far.exp()),
            None => (0.5 * (near + far)).exp(),
        };
        let mut found = None;
        for _ in 0..config.max_adjustments {
            let mut ladder = betas.clone();
            ladder.push(candidate);
            let burn = ((config.pilot_iters as f64) * config.pilot_burn_fraction) as u64;
            let mut pt = PtConfig::new(ladder, config.pilot_iters, burn, pilot_seed(config.seed, pilot_index));
            pilot_index += 1;
            pt.sweeps_per_swap = config.sweeps_per_swap;
            pt.scheme = config.scheme;
            pt.adapt = config.adapt;
            pt.record_trajectory = false;
            let mut engine = PtEngine::new(target, pt)?;
            engine.run_to_end();
            let out = engine.finish();
            let pair = level - 1;
            let n = out.post_burn_in.attempts[pair];
            let a = out.post_burn_in.accepts[pair];
            let rate = if n == 0 { f64::NAN } else { a as f64 / n as f64 };
            let ok = rate >= low && rate <= high;
            log::info!("tune: level {level} candidate {candidate:.6} swap rate {rate:.4}");
            pilots.push(PilotRecord {
                level,
                candidate,
                attempts: n,
                accepts: a,
                rate,
                accepted: ok,
            });
            if ok {
                found = Some((candidate, n, a));
                break;
            }
            let c = candidate.ln();
            if rate > high || rate.is_nan() {
                near = c;
                if !far_confirmed && c - far < 1e-9 {
                    far = c + config.far_factor.ln();
                }
            } else {
                far = c;
                far_confirmed = true;
            }
            candidate = (0.5 * (near + far)).exp();
        }
        let Some((beta, n, a)) = found else {
            return Err(Error::Tuning {
                adjustments: config.max_adjustments,
                partial: betas,
            });
        };
        last_ratio = Some(beta / current);
        betas.push(beta);
        attempts.push(n);
        accepts.push(a);
    }

    let mut ladder = TemperatureLadder::new(betas)?;
    ladder.swap_attempts = attempts;
    ladder.swap_accepts = accepts;
    Ok(TuneOutcome { ladder, pilots })
}

fn pilot_seed(seed: u64, index: u64) -> u64 {
    seed ^ (index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub beta: f64,
    pub coordinate: String,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Histogram of one coordinate from a single-chain run at `beta`, for
/// judging whether a candidate hottest temperature is unimodal.
pub fn marginal_histogram<T: Target>(
    target: &T,
    beta: f64,
    coordinate: &str,
    n_iters: u64,
    burn_in: u64,
    bins: usize,
    seed: u64,
) -> Result<Histogram> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Domain(format!("beta = {beta} is outside (0, 1]")));
    }
    if bins == 0 || burn_in >= n_iters {
        return Err(Error::Config {
            field: "histogram".into(),
            message: "needs bins >= 1 and burn_in < n_iters".into(),
        });
    }
    let index = target
        .coordinate_names()
        .iter()
        .position(|n| n == coordinate)
        .ok_or_else(|| Error::Config {
            field: "histogram.coordinate".into(),
            message: format!("unknown coordinate {coordinate:?}"),
        })?;
    let mut rng = StreamRng::seed_from_u64(seed);
    let start = target.initial_state(&mut rng);
    let mut chain = ChainState::new(target, start);
    let mut scales = ProposalScales::for_target(target, AdaptConfig::default());
    let mut values = Vec::with_capacity((n_iters - burn_in) as usize);
    for h in 0..n_iters {
        if h == burn_in {
            scales.freeze();
        }
        cwmh_sweep(target, &mut chain, beta, &mut scales, &mut rng);
        if h < burn_in {
            scales.end_sweep();
        } else {
            values.push(target.flatten(&chain.state)[index]);
        }
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0u64; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        beta,
        coordinate: coordinate.into(),
        edges,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{simulate, StreamFamily};
    use crate::priors::GammaHyper;
    use crate::toy::ToyTarget;

    #[test]
    fn swap_ratio_examples() {
        assert_eq!(swap_log_ratio(-10.0, -5.0, -8.0, -6.0), 0.0);
        assert!((swap_log_ratio(-10.0, -5.0, -12.0, -6.0) + 3.0).abs() < 1e-12);
        assert_eq!(swap_log_ratio(-3.0, -3.0, -3.0, -3.0), 0.0);
    }

    #[test]
    fn swap_ratio_infinities() {
        let ni = f64::NEG_INFINITY;
        assert_eq!(swap_log_ratio(-1.0, -1.0, ni, -1.0), ni);
        assert_eq!(swap_log_ratio(ni, -1.0, ni, -1.0), ni);
        assert_eq!(swap_log_ratio(ni, -1.0, -1.0, -1.0), 0.0);
        assert!(!swap_log_ratio(ni, ni, ni, ni).is_nan());
    }

    #[test]
    fn swap_ratio_antisymmetric() {
        let cases = [(-10.0, -5.0, -8.0, -6.0), (-1.0, -2.0, -3.0, -4.0), (-2.0, -2.0, -2.0, -2.0)];
        for (a, b, c, d) in cases {
            let fwd = swap_log_ratio(a, b, c, d);
            let back = swap_log_ratio(c, d, a, b);
            assert!(fwd + back <= 0.0);
            assert_eq!(fwd + back == 0.0, fwd == 0.0 && back == 0.0);
        }
    }

    #[test]
    fn geometric_examples() {
        let l = geometric_ladder(0.25, 2).unwrap();
        assert_eq!(l.len(), 3);
        assert!((l.betas[1] - 0.5).abs() < 1e-15);
        assert_eq!(l.betas[2], 0.25);
        let l = geometric_ladder(0.019, 11).unwrap();
        assert_eq!(l.len(), 12);
        assert!((l.betas[1] - 0.019f64.powf(1.0 / 11.0)).abs() < 1e-15);
        assert!((l.betas[1] - 0.6975).abs() < 5e-5);
        let r = l.betas[1] / l.betas[0];
        for w in l.betas.windows(2) {
            assert!((w[1] / w[0] - r).abs() < 1e-12);
            assert!(w[1] < w[0]);
        }
        assert!(geometric_ladder(1.0, 3).is_err());
        assert!(geometric_ladder(0.0, 3).is_err());
        assert!(geometric_ladder(0.5, 0).is_err());
    }

    #[test]
    fn ladder_validation() {
        assert!(TemperatureLadder::new(vec![1.0, 0.5, 0.5]).is_err());
        assert!(TemperatureLadder::new(vec![0.9, 0.5]).is_err());
        assert!(TemperatureLadder::new(vec![1.0, 0.0]).is_err());
        assert!(TemperatureLadder::new(vec![1.0]).is_ok());
    }

    #[test]
    fn power_posterior_affine_and_exact() {
        let spec = ModelSpec::with_families(2, &[StreamFamily::Poisson], 0).unwrap();
        let prior = PriorConfig::shared(
            &spec,
            GammaHyper::new(2.0, 0.5),
            GammaHyper::new(1.0, 1.0),
            GammaHyper::new(1.0, 1.0),
        );
        let theta = crate::priors::sample_prior(&spec, &prior, 4).unwrap();
        let sim = simulate(&spec, &theta, &[40], None, 5).unwrap();
        let ll = log_likelihood(&spec, &theta, &sim.data).unwrap();
        let lp = log_prior(&spec, &theta, &prior).unwrap();
        let at = |b| log_power_posterior(&spec, &theta, &sim.data, &prior, b).unwrap();
        assert_eq!(at(1.0), ll + lp);
        let slope = (at(1.0) - at(0.5)) / 0.5;
        assert!((slope - ll).abs() < 1e-9 * ll.abs().max(1.0));
        assert!((at(0.25) - (0.25 * ll + lp)).abs() < 1e-12 * lp.abs().max(1.0));
        assert!(log_power_posterior(&spec, &theta, &sim.data, &prior, 0.0).is_err());
    }

    #[test]
    fn absorbing_minus_infinity() {
        for b in [0.1, 0.5, 1.0] {
            assert_eq!(power_posterior(f64::NEG_INFINITY, -3.0, b), f64::NEG_INFINITY);
            assert_eq!(power_posterior(-3.0, f64::NEG_INFINITY, b), f64::NEG_INFINITY);
        }
    }

    #[test]
    fn tuner_two_levels_quick() {
        let target = ToyTarget::standard_normal();
        let mut cfg = TuneConfig::new(0.5, 11);
        cfg.pilot_iters = 20_000;
        cfg.band = (0.15, 0.35);
        let out = tune_ladder(&target, &cfg).unwrap();
        assert!(out.ladder.hottest() <= 0.5);
        for r in out.ladder.swap_rates() {
            assert!((0.15..=0.35).contains(&r));
        }
        assert!(out.pilots.iter().filter(|p| p.accepted).count() == out.ladder.len() - 1);
    }

    #[test]
    fn tuner_reports_partial_ladder() {
        let target = ToyTarget::standard_normal();
        let mut cfg = TuneConfig::new(0.01, 3);
        cfg.pilot_iters = 200;
        cfg.band = (0.5, 0.5000001);
        cfg.max_adjustments = 2;
        match tune_ladder(&target, &cfg) {
            Err(Error::Tuning { adjustments, partial }) => {
                assert_eq!(adjustments, 2);
                assert_eq!(partial, vec![1.0]);
            }
            other => panic!("expected tuning error, got {other:?}"),
        }
    }

    #[test]
    fn histogram_of_bimodal_hot_chain() {
        let target = ToyTarget::bimodal(5.0);
        let h = marginal_histogram(&target, 1.0, "x", 4000, 500, 20, 1).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 3500);
        assert_eq!(h.edges.len(), 21);
        assert!(marginal_histogram(&target, 1.0, "nope", 100, 10, 5, 1).is_err());
    }
}
