use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use hmm_pt::data_io::{
    load_checkpoint, load_sequences, param_vector_from_map, param_vector_to_map, read_json, read_samples,
    save_checkpoint, write_json, write_records, write_samples, write_sequences, RunConfig,
};
use hmm_pt::diagnostics::{
    convergence_table, relabel_by_ordering, running_weight, suggest_valley, summarize, swap_summary,
};
use hmm_pt::hmm::{simulate, ModelSpec, ObservationSet, ParamVector};
use hmm_pt::priors::{sample_prior, tempered_prior_demo, PriorConfig};
use hmm_pt::pt::{EngineSnapshot, PtConfig, PtEngine, PtOutput, ReplicaTrajectory, RoundTrips, SwapCounts};
use hmm_pt::store::SampleStore;
use hmm_pt::target::HmmTarget;
use hmm_pt::tempering::{marginal_histogram, tune_ladder, TemperatureLadder};
use hmm_pt::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

type CliResult<T = ()> = Result<T, Failure>;

/// Bayesian multivariate HMMs sampled with parallel tempering.
#[derive(Debug, Parser)]
#[command(name = "hmm-pt", version)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic sequences from a known parameter vector.
    Simulate(SimulateArgs),
    /// Tune an inverse-temperature ladder with pilot runs.
    Tune(RunArgs),
    /// Run parallel tempering and write the retained draws.
    Sample(SampleArgs),
    /// Relabel, summarize and check convergence of sampled runs.
    Diagnose(DiagnoseArgs),
    /// Show how likelihood-free tempering reshapes the transition prior.
    DemoTemperedPrior(DemoArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `io.data`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed(s) with a single run.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Continue a run from its checkpoint file.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    /// Sample files, one per independent run.
    #[arg(long, num_args = 1.., required = true)]
    samples: Vec<PathBuf>,
    /// Trajectory files written by `sample`.
    #[arg(long, num_args = 1..)]
    trajectory: Vec<PathBuf>,
    /// Supplies the `[diagnose]` section (constraint, regions).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DemoArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25")]
    betas: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    n_states: usize,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Tune(a) => with_jobs(a.jobs, || cmd_tune(&a)),
        Command::Sample(a) => with_jobs(a.run.jobs, || cmd_sample(&a)),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::DemoTemperedPrior(a) => cmd_demo(a),
    }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    match jobs {
        None => f(),
        Some(0) => Err(Failure::config("--jobs", "must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::config("--jobs", e.to_string()))?
            .install(f),
    }
}

fn out_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| Failure::config("--out", format!("{}: {e}", path.display())))
}

fn load_model(config: &Path) -> CliResult<(RunConfig, ModelSpec, PriorConfig)> {
    let cfg = RunConfig::load(config)?;
    let spec = cfg.spec()?;
    let prior = cfg.prior(&spec)?;
    Ok((cfg, spec, prior))
}

fn load_data(cfg: &RunConfig, spec: &ModelSpec, override_path: Option<&Path>) -> CliResult<ObservationSet> {
    let path = cfg.data_path(override_path)?;
    if !path.is_file() {
        return Err(Failure::data(format!("data file {} does not exist", path.display())));
    }
    load_sequences(&path, spec).map_err(Failure::as_data)
}

fn cmd_simulate(a: SimulateArgs) -> CliResult {
    let (cfg, spec, prior) = load_model(&a.config)?;
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Failure::config("simulate", "missing [simulate] section"))?;
    let seed = cfg.run_seeds(a.seed)?[0];
    if sim.lengths.is_empty() || sim.lengths.contains(&0) {
        return Err(Failure::config("simulate.lengths", "need at least one positive length"));
    }
    let truth: ParamVector = match &sim.truth {
        Some(map) => param_vector_from_map(&spec, map).map_err(|e| Failure::config("simulate.truth", e.to_string()))?,
        None => sample_prior(&spec, &prior, seed)?,
    };
    let covariates: Option<Vec<Vec<u32>>> = match (&sim.covariates, sim.covariate_switch_every) {
        (Some(_), Some(_)) => {
            return Err(Failure::config(
                "simulate.covariates",
                "give either `covariates` or `covariate_switch_every`",
            ))
        }
        (Some(c), None) => Some(c.clone()),
        (None, Some(0)) => return Err(Failure::config("simulate.covariate_switch_every", "must be positive")),
        (None, Some(k)) => {
            let levels = spec.covariate_levels() + 1;
            Some(
                sim.lengths
                    .iter()
                    .map(|&t| (0..t).map(|s| ((s / k) % levels) as u32).collect())
                    .collect(),
            )
        }
        (None, None) if spec.has_covariate() => {
            return Err(Failure::config(
                "simulate.covariates",
                "the model has a covariate; give `covariates` or `covariate_switch_every`",
            ))
        }
        (None, None) => None,
    };
    let out = simulate(&spec, &truth, &sim.lengths, covariates.as_deref(), seed.wrapping_add(1))
        .map_err(|e| Failure::config("simulate", e.to_string()))?;

    out_dir(&a.out)?;
    write_sequences(&a.out.join("data.csv"), &spec, &out.data)?;
    let truth_map = param_vector_to_map(&spec, &truth);
    write_json(&truth_map, &a.out.join("truth.json"))?;
    let rows: Vec<StateRow> = out
        .states
        .iter()
        .enumerate()
        .flat_map(|(w, path)| {
            path.iter().enumerate().map(move |(t, &s)| StateRow {
                sequence_id: w + 1,
                t: t + 1,
                state: s + 1,
            })
        })
        .collect();
    write_records(&a.out.join("states.csv"), &rows)?;
    println!("{}", serde_json::to_string(&truth_map).map_err(Error::from)?);
    Ok(())
}

#[derive(Serialize)]
struct StateRow {
    sequence_id: usize,
    t: usize,
    state: usize,
}

#[derive(Serialize)]
struct LadderReport<'a> {
    betas: &'a [f64],
    swap_attempts: &'a [u64],
    swap_accepts: &'a [u64],
    swap_rates: Vec<f64>,
    pilots: &'a [hmm_pt::tempering::PilotRecord],
}

fn cmd_tune(a: &RunArgs) -> CliResult {
    let (cfg, spec, prior) = load_model(&a.config)?;
    let tune = cfg
        .tune
        .as_ref()
        .ok_or_else(|| Failure::config("tune", "missing [tune] section"))?;
    let seed = cfg.run_seeds(a.seed)?[0];
    let tcfg = cfg.tune_config(seed)?;
    let data = load_data(&cfg, &spec, a.data.as_deref())?;
    let target = HmmTarget::new(spec, prior, &data).map_err(Failure::as_data)?;
    out_dir(&a.out)?;

    if !tune.candidates.is_empty() {
        let coordinate = tune.histogram_coordinate.as_deref().ok_or_else(|| {
            Failure::config("tune.histogram_coordinate", "needed when `candidates` are given")
        })?;
        let hists = tune
            .candidates
            .iter()
            .enumerate()
            .map(|(k, &beta)| {
                marginal_histogram(
                    &target,
                    beta,
                    coordinate,
                    tune.histogram_iters,
                    tune.histogram_iters / 5,
                    40,
                    seed.wrapping_add(k as u64 + 1),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        write_json(&hists, &a.out.join("histograms.json"))?;
    }

    match tune_ladder(&target, &tcfg) {
        Ok(outcome) => {
            let l = &outcome.ladder;
            write_json(
                &LadderReport {
                    betas: &l.betas,
                    swap_attempts: &l.swap_attempts,
                    swap_accepts: &l.swap_accepts,
                    swap_rates: l.swap_rates(),
                    pilots: &outcome.pilots,
                },
                &a.out.join("ladder.json"),
            )?;
            println!("betas = {:?}", l.betas);
            Ok(())
        }
        Err(e) => {
            if let Error::Tuning { partial, .. } = &e {
                write_json(partial, &a.out.join("ladder_partial.json"))?;
            }
            Err(e.into())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub ladder: TemperatureLadder,
    pub post_burn_in: SwapCounts,
    pub round_trips: RoundTrips,
    pub trajectory: ReplicaTrajectory,
}

#[derive(Serialize)]
struct RunReport {
    seed: u64,
    n_iters: u64,
    burn_in: u64,
    thin: u64,
    betas: Vec<f64>,
    draws: usize,
    swap_rates: Vec<f64>,
    swap_rates_after_burn_in: Vec<f64>,
    round_trips: u64,
    step_sizes: Vec<Vec<f64>>,
    block_acceptance: Vec<Vec<f64>>,
}

fn cmd_sample(a: &SampleArgs) -> CliResult {
    let (cfg, spec, prior) = load_model(&a.run.config)?;
    let data = load_data(&cfg, &spec, a.run.data.as_deref())?;
    let target = HmmTarget::new(spec, prior, &data).map_err(Failure::as_data)?;
    let every = cfg.io.checkpoint_every;
    out_dir(&a.run.out)?;

    if let Some(ck) = &a.resume {
        let snapshot: EngineSnapshot<ParamVector> = load_checkpoint(ck)?;
        let pt = cfg.pt_config(snapshot.config.seed)?;
        let engine = PtEngine::resume(&target, snapshot, pt)?;
        return sample_one(engine, &a.run.out, every);
    }

    let seeds = cfg.run_seeds(a.run.seed)?;
    let configs = seeds
        .iter()
        .map(|&s| cfg.pt_config(s))
        .collect::<Result<Vec<PtConfig>, _>>()?;
    configs
        .into_par_iter()
        .map(|pt| {
            let engine = PtEngine::new(&target, pt)?;
            sample_one(engine, &a.run.out, every)
        })
        .collect::<CliResult<Vec<()>>>()?;
    Ok(())
}

fn sample_one(mut engine: PtEngine<'_, HmmTarget>, out: &Path, every: u64) -> CliResult {
    let seed = engine.config().seed;
    let dir = out.join(format!("seed_{seed}"));
    out_dir(&dir)?;
    let ck = dir.join("checkpoint.json");
    let chunk = if every == 0 { u64::MAX } else { every };
    while !engine.is_finished() {
        engine.run(chunk);
        save_checkpoint(&engine.snapshot(), &ck)?;
    }
    let cfg = engine.config().clone();
    let out: PtOutput = engine.finish();
    write_samples(&out.store, &dir.join("samples.csv"))?;
    if let Some(stores) = &out.ladder_stores {
        for (k, s) in stores.iter().enumerate() {
            write_samples(s, &dir.join(format!("samples_position_{k}.csv")))?;
        }
    }
    write_json(
        &TrajectoryFile {
            ladder: out.ladder.clone(),
            post_burn_in: out.post_burn_in.clone(),
            round_trips: out.round_trips.clone(),
            trajectory: out.trajectory,
        },
        &dir.join("trajectory.json"),
    )?;
    let report = RunReport {
        seed,
        n_iters: cfg.n_iters,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        betas: cfg.betas.clone(),
        draws: out.store.len(),
        swap_rates: out.ladder.swap_rates(),
        swap_rates_after_burn_in: out.post_burn_in.rates(),
        round_trips: out.round_trips.total,
        step_sizes: out.scales.iter().map(|s| s.steps.clone()).collect(),
        block_acceptance: out.scales.iter().map(|s| s.rates()).collect(),
    };
    write_json(&report, &dir.join("run.json"))?;
    println!(
        "seed {seed}: {} draws, round trips {}, swap rates {:?}",
        report.draws,
        report.round_trips,
        report
            .swap_rates
            .iter()
            .map(|r| (r * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
    Ok(())
}

#[derive(Serialize)]
struct WeightRow<'a> {
    run: usize,
    region: &'a str,
    draw: usize,
    weight: f64,
}

#[derive(Serialize)]
struct SwapRow {
    run: usize,
    pair: usize,
    beta_cold: f64,
    beta_hot: f64,
    attempts: u64,
    accepts: u64,
    rate: f64,
}

#[derive(Serialize)]
struct LineageRow {
    run: usize,
    step: usize,
    lineage: usize,
    position: usize,
}

#[derive(Serialize)]
struct RegionWeight {
    run: usize,
    region: String,
    weight: f64,
}

#[derive(Serialize)]
struct DiagnoseReport {
    runs: usize,
    draws_per_run: Vec<usize>,
    relabeling: String,
    relabel_ties: usize,
    relabel_permuted: usize,
    final_weights: Vec<RegionWeight>,
    round_trips: Vec<u64>,
    valley_suggestion: Option<(String, f64)>,
    max_rhat: Option<f64>,
    min_ess: Option<f64>,
}

fn cmd_diagnose(a: DiagnoseArgs) -> CliResult {
    let section = match &a.config {
        Some(p) => RunConfig::load(p)?.diagnose.unwrap_or_default(),
        None => Default::default(),
    };
    let mut stores: Vec<SampleStore> = Vec::with_capacity(a.samples.len());
    for path in &a.samples {
        let expected = stores.first().map(|s: &SampleStore| s.names.clone());
        stores.push(read_samples(path, expected.as_deref()).map_err(Failure::as_data)?);
    }
    out_dir(&a.out)?;

    let (relabeling, mut ties, mut permuted) = if section.constraint.is_empty() {
        ("none: no ordering constraint given, draws were not relabeled".to_string(), 0, 0)
    } else {
        (format!("ordered by {}", section.constraint.join(" < ")), 0, 0)
    };
    if !section.constraint.is_empty() {
        for (k, store) in stores.iter_mut().enumerate() {
            let r = relabel_by_ordering(store, &section.constraint)?;
            ties += r.ties;
            permuted += r.permuted;
            *store = r.store;
            write_samples(store, &a.out.join(format!("samples_relabeled_{k}.csv")))?;
        }
    }

    let mut weight_rows = Vec::new();
    let mut final_weights = Vec::new();
    for (run, store) in stores.iter().enumerate() {
        for region in &section.regions {
            let w = running_weight(store, region, section.burn_in)?;
            final_weights.push(RegionWeight {
                run,
                region: region.name.clone(),
                weight: *w.last().expect("non-empty"),
            });
            weight_rows.extend(w.into_iter().enumerate().map(|(k, weight)| WeightRow {
                run,
                region: &region.name,
                draw: section.burn_in + k,
                weight,
            }));
        }
    }
    if !section.regions.is_empty() {
        write_records(&a.out.join("running_weights.csv"), &weight_rows)?;
    }

    let mut pooled = stores[0].clone();
    for s in &stores[1..] {
        pooled.iterations.extend(&s.iterations);
        pooled.draws.extend(s.draws.iter().cloned());
    }
    write_records(&a.out.join("summary.csv"), &summarize(&pooled, &section.regions)?)?;
    let conv = convergence_table(&stores)?;
    write_records(&a.out.join("convergence.csv"), &conv)?;

    let valley_suggestion = match &section.valley_coordinate {
        Some(c) => {
            let col = pooled
                .column(c)
                .ok_or_else(|| Failure::config("diagnose.valley_coordinate", format!("unknown coordinate {c:?}")))?;
            suggest_valley(&col, 50).map(|v| (c.clone(), v))
        }
        None => None,
    };

    let mut swap_rows = Vec::new();
    let mut lineage_rows = Vec::new();
    let mut round_trips = Vec::new();
    for (run, path) in a.trajectory.iter().enumerate() {
        let file: TrajectoryFile = read_json(path).map_err(Failure::as_data)?;
        let s = swap_summary(&file.trajectory, &file.ladder);
        round_trips.push(s.round_trips);
        for pair in 0..s.rates.len() {
            swap_rows.push(SwapRow {
                run,
                pair,
                beta_cold: s.betas[pair],
                beta_hot: s.betas[pair + 1],
                attempts: s.attempts[pair],
                accepts: s.accepts[pair],
                rate: s.rates[pair],
            });
        }
        lineage_rows.extend(s.trace.into_iter().map(|p| LineageRow {
            run,
            step: p.step,
            lineage: p.lineage,
            position: p.position,
        }));
    }
    if !a.trajectory.is_empty() {
        write_records(&a.out.join("swaps.csv"), &swap_rows)?;
        write_records(&a.out.join("lineage.csv"), &lineage_rows)?;
    }

    let finite = |v: f64| v.is_finite().then_some(v);
    let report = DiagnoseReport {
        runs: stores.len(),
        draws_per_run: stores.iter().map(SampleStore::len).collect(),
        relabeling,
        relabel_ties: ties,
        relabel_permuted: permuted,
        final_weights,
        round_trips,
        valley_suggestion,
        max_rhat: conv.iter().filter_map(|r| finite(r.rhat)).reduce(f64::max),
        min_ess: conv.iter().filter_map(|r| finite(r.ess)).reduce(f64::min),
    };
    write_json(&report, &a.out.join("report.json"))?;
    println!("{}", report.relabeling);
    for w in &report.final_weights {
        println!("run {} region {}: weight {:.4}", w.run, w.region, w.weight);
    }
    Ok(())
}

fn cmd_demo(a: DemoArgs) -> CliResult {
    if a.betas.is_empty() {
        return Err(Failure::config("--betas", "give at least one beta"));
    }
    let rows = a
        .betas
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            tempered_prior_demo(b, a.n_states, a.draws, a.seed.wrapping_add(k as u64))
                .map_err(|e| Failure::config("--betas", e.to_string()))
        })
        .collect::<CliResult<Vec<_>>>()?;
    out_dir(&a.out)?;
    write_records(&a.out.join("tempered_prior.csv"), &rows)?;
    for r in &rows {
        println!(
            "beta {:<6} E[max gamma_ij] = {:.4} (se {:.4}), E[gamma_ii] = {:.4}",
            r.beta, r.mean_max, r.std_error, r.mean_diagonal
        );
    }
    Ok(())
}
