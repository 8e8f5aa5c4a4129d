//! Post-run analysis of retained draws: label-switch correction, mode
//! weights, convergence statistics and swap summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hmm::{ModelSpec, ParamVector};
use crate::pt::{count_round_trips, ReplicaTrajectory};
use crate::stats::quantile_sorted;
use crate::store::SampleStore;
use crate::tempering::TemperatureLadder;

/// Draws whose `coordinate` lies strictly inside `(lower, upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRegion {
    pub name: String,
    pub coordinate: String,
    pub lower: f64,
    pub upper: f64,
}

impl ModeRegion {
    pub fn new(name: impl Into<String>, coordinate: impl Into<String>, lower: f64, upper: f64) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::Config {
                field: "region".into(),
                message: format!("lower bound {lower} is not below upper bound {upper}"),
            });
        }
        Ok(ModeRegion {
            name: name.into(),
            coordinate: coordinate.into(),
            lower,
            upper,
        })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower < x && x < self.upper
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relabeled {
    pub store: SampleStore,
    /// Draws in which two constraint coordinates were equal.
    pub ties: usize,
    /// Draws that needed a non-identity permutation.
    pub permuted: usize,
}

/// Relabels every draw so the constraint coordinates (one per state, in
/// state order) are ascending. Ties keep the original state order.
pub fn relabel_by_ordering(store: &SampleStore, constraint: &[String]) -> Result<Relabeled> {
    let spec = ModelSpec::from_coordinate_names(&store.names)?;
    let n = spec.n_states();
    if constraint.len() != n {
        return Err(Error::Config {
            field: "constraint".into(),
            message: format!("{} coordinates given for {n} states", constraint.len()),
        });
    }
    let mut columns = Vec::with_capacity(n);
    for name in constraint {
        columns.push(store.index_of(name).ok_or_else(|| Error::Config {
            field: "constraint".into(),
            message: format!("unknown coordinate {name:?}"),
        })?);
    }
    let mut out = store.clone();
    let mut ties = 0;
    let mut permuted = 0;
    for row in out.draws.iter_mut() {
        let keys: Vec<f64> = columns.iter().map(|&c| row[c]).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        if perm.windows(2).any(|w| keys[w[0]] == keys[w[1]]) {
            ties += 1;
        }
        if perm.iter().enumerate().all(|(a, &p)| a == p) {
            continue;
        }
        permuted += 1;
        let theta = ParamVector::unflatten(&spec, row)?;
        *row = theta.permute_states(&perm).flatten();
    }
    if ties > 0 {
        log::warn!("relabel: {ties} draws had tied constraint values; original order kept");
    }
    Ok(Relabeled {
        store: out,
        ties,
        permuted,
    })
}

/// Running fraction of draws inside `region`, from draw `burn_in` on.
pub fn running_weight(store: &SampleStore, region: &ModeRegion, burn_in: usize) -> Result<Vec<f64>> {
    let column = store.column(&region.coordinate).ok_or_else(|| Error::Config {
        field: "region.coordinate".into(),
        message: format!("unknown coordinate {:?}", region.coordinate),
    })?;
    if burn_in >= column.len() {
        return Err(Error::Config {
            field: "burn_in".into(),
            message: format!("burn-in {burn_in} leaves no draws out of {}", column.len()),
        });
    }
    let mut inside = 0u64;
    Ok(column[burn_in..]
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            inside += region.contains(x) as u64;
            inside as f64 / (k + 1) as f64
        })
        .collect())
}

fn split_halves<'a>(chains: &[&'a [f64]]) -> Vec<&'a [f64]> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(&c[..half]);
        out.push(&c[c.len() - half..]);
    }
    out
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Split R-hat over equal-length chains; NaN when the within-chain
/// variance vanishes or chains are shorter than 4.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4 || c.len() != chains[0].len()) {
        return f64::NAN;
    }
    let halves = split_halves(chains);
    let n = halves[0].len() as f64;
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    if !(w > 0.0) {
        log::warn!("split_rhat: zero within-chain variance");
        return f64::NAN;
    }
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b = n * mean_var(&means).1;
    ((w * (n - 1.0) / n + b / n) / w).sqrt()
}

struct Autocov<'a> {
    chain: &'a [f64],
    mean: f64,
}

impl Autocov<'_> {
    fn at(&self, lag: usize) -> f64 {
        let n = self.chain.len();
        let c = &self.chain;
        let mut s = 0.0;
        for t in 0..n - lag {
            s += (c[t] - self.mean) * (c[t + lag] - self.mean);
        }
        s / n as f64
    }
}

/// Effective sample size from split chains, using Geyer's initial
/// monotone sequence; never above 1.25 times the draw count. NaN for
/// constant or too-short chains.
pub fn ess_basic(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 8 || c.len() != chains[0].len()) {
        return f64::NAN;
    }
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let halves = split_halves(chains);
    let m = halves.len();
    let n = halves[0].len();
    let nf = n as f64;
    let acovs: Vec<Autocov> = halves
        .iter()
        .map(|c| Autocov {
            chain: c,
            mean: c.iter().sum::<f64>() / nf,
        })
        .collect();
    let mean_acov = |lag: usize| acovs.iter().map(|a| a.at(lag)).sum::<f64>() / m as f64;
    let acov0: Vec<f64> = acovs.iter().map(|a| a.at(0)).collect();
    let mean_var = acov0.iter().sum::<f64>() / m as f64 * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let means: Vec<f64> = acovs.iter().map(|a| a.mean).collect();
        var_plus += self::mean_var(&means).1;
    }
    if !(var_plus > 0.0) {
        log::warn!("ess_basic: zero variance");
        return f64::NAN;
    }
    let rho = |lag: usize| 1.0 - (mean_var - mean_acov(lag)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 3 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let tau = -1.0 + 2.0 * rho_hat[..=max_t.min(n - 1)].iter().sum::<f64>();
    let ess = (m * n) as f64 / tau.max(1.0 / (m * n) as f64);
    ess.min(1.25 * total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub coordinate: String,
    pub rhat: f64,
    pub ess: f64,
}

/// R-hat and ESS of every coordinate across runs with identical schemas.
/// Chains are truncated to the shortest run.
pub fn convergence_table(stores: &[SampleStore]) -> Result<Vec<ConvergenceRow>> {
    let Some(first) = stores.first() else {
        return Ok(Vec::new());
    };
    if stores.iter().any(|s| s.names != first.names) {
        return Err(Error::Config {
            field: "samples".into(),
            message: "runs have different coordinates".into(),
        });
    }
    let len = stores.iter().map(SampleStore::len).min().unwrap_or(0);
    Ok(first
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let cols: Vec<Vec<f64>> = stores
                .iter()
                .map(|s| s.draws[..len].iter().map(|r| r[k]).collect())
                .collect();
            let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
            ConvergenceRow {
                coordinate: name.clone(),
                rhat: split_rhat(&refs),
                ess: ess_basic(&refs),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub lineage: usize,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapSummary {
    pub betas: Vec<f64>,
    pub attempts: Vec<u64>,
    pub accepts: Vec<u64>,
    pub rates: Vec<f64>,
    pub round_trips: u64,
    pub round_trips_per_lineage: Vec<u64>,
    pub trace: Vec<TracePoint>,
}

pub fn swap_summary(trajectory: &ReplicaTrajectory, ladder: &TemperatureLadder) -> SwapSummary {
    let trips = count_round_trips(trajectory);
    let mut trace = Vec::with_capacity(trajectory.positions.len());
    for step in 0..trajectory.n_steps() {
        for (lineage, &p) in trajectory.step(step).iter().enumerate() {
            trace.push(TracePoint {
                step,
                lineage,
                position: p as usize,
            });
        }
    }
    SwapSummary {
        betas: ladder.betas.clone(),
        attempts: ladder.swap_attempts.clone(),
        accepts: ladder.swap_accepts.clone(),
        rates: ladder.swap_rates(),
        round_trips: trips.total,
        round_trips_per_lineage: trips.per_lineage,
        trace,
    }
}

/// Per-pair (attempts, accepts) recounted from the raw attempt records.
pub fn recount_swaps(trajectory: &ReplicaTrajectory, pairs: usize) -> (Vec<u64>, Vec<u64>) {
    let mut attempts = vec![0; pairs];
    let mut accepts = vec![0; pairs];
    for a in &trajectory.attempts {
        attempts[a.pair as usize] += 1;
        accepts[a.pair as usize] += a.accepted as u64;
    }
    (attempts, accepts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    /// Region name, or `all`.
    pub mode: String,
    pub coordinate: String,
    pub draws: usize,
    pub median: f64,
    pub lower_66: f64,
    pub upper_66: f64,
    pub lower_95: f64,
    pub upper_95: f64,
}

fn summary_row(mode: &str, coordinate: &str, mut values: Vec<f64>) -> SummaryRow {
    values.sort_by(f64::total_cmp);
    let q = |p| {
        if values.is_empty() {
            f64::NAN
        } else {
            quantile_sorted(&values, p)
        }
    };
    SummaryRow {
        mode: mode.into(),
        coordinate: coordinate.into(),
        draws: values.len(),
        median: q(0.5),
        lower_66: q(0.17),
        upper_66: q(0.83),
        lower_95: q(0.025),
        upper_95: q(0.975),
    }
}

/// Medians with 66% and 95% central intervals for every coordinate, over
/// all draws and separately within each region.
pub fn summarize(store: &SampleStore, regions: &[ModeRegion]) -> Result<Vec<SummaryRow>> {
    let mut masks: Vec<(String, Vec<bool>)> = vec![("all".into(), vec![true; store.len()])];
    for region in regions {
        let col = store.column(&region.coordinate).ok_or_else(|| Error::Config {
            field: "region.coordinate".into(),
            message: format!("unknown coordinate {:?}", region.coordinate),
        })?;
        masks.push((region.name.clone(), col.iter().map(|&x| region.contains(x)).collect()));
    }
    let mut rows = Vec::new();
    for (mode, mask) in &masks {
        for (k, name) in store.names.iter().enumerate() {
            let values = store
                .draws
                .iter()
                .zip(mask)
                .filter(|(_, &keep)| keep)
                .map(|(r, _)| r[k])
                .collect();
            rows.push(summary_row(mode, name, values));
        }
    }
    Ok(rows)
}

/// Centre of the deepest histogram valley between the tallest bin and
/// another peak, as a threshold suggestion for a two-mode split.
pub fn suggest_valley(values: &[f64], bins: usize) -> Option<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 || bins < 3 {
        return None;
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for v in finite {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let top = (0..bins).max_by_key(|&k| (counts[k], std::cmp::Reverse(k)))?;
    let mut best: Option<(u64, usize)> = None;
    for other in 0..bins {
        if other.abs_diff(top) < 2 {
            continue;
        }
        let (a, b) = (top.min(other), top.max(other));
        let valley = (a + 1..b).min_by_key(|&k| counts[k])?;
        let prominence = counts[other].min(counts[top]).saturating_sub(counts[valley]);
        if prominence > 0 && best.map_or(true, |(p, _)| prominence > p) {
            best = Some((prominence, valley));
        }
    }
    best.map(|(_, k)| lo + width * (k as f64 + 0.5))
}
