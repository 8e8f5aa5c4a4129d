//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use hmm_pt::data_io::{load_checkpoint, save_checkpoint, write_samples};
use hmm_pt::diagnostics::{
    ess_basic, relabel_by_ordering, running_weight, split_rhat, summarize, ModeRegion, SummaryRow,
};
use hmm_pt::hmm::{
    log_likelihood, log_likelihood_bruteforce, simulate, transition_matrix, ModelSpec, ObservationSet, ParamVector,
    Sequence, StreamFamily, StreamParams,
};
use hmm_pt::priors::{log_prior, sample_prior_with, tempered_prior_demo, GammaHyper, PriorConfig};
use hmm_pt::pt::{pt_run, EngineSnapshot, PtConfig, PtEngine};
use hmm_pt::stats::{ks_one_sample, mean};
use hmm_pt::store::{SampleStore, StoreMetadata};
use hmm_pt::target::HmmTarget;
use hmm_pt::tempering::{tune_ladder, TemperatureLadder, TuneConfig};
use hmm_pt::toy::ToyTarget;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_prior(spec: &ModelSpec) -> PriorConfig {
    PriorConfig::shared(
        spec,
        GammaHyper::new(2.0, 0.5),
        GammaHyper::new(2.0, 0.2),
        GammaHyper::new(2.0, 0.5),
    )
}

fn c1_forward_vs_bruteforce() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=3);
        let p = rng.gen_range(1..=3);
        let levels = rng.gen_range(0..=1);
        let families: Vec<StreamFamily> = (0..p)
            .map(|_| if rng.gen_bool(0.5) { StreamFamily::Poisson } else { StreamFamily::GammaMeanSd })
            .collect();
        let spec = ModelSpec::with_families(n, &families, levels).unwrap();
        let prior = random_prior(&spec);
        let theta = sample_prior_with(&spec, &prior, &mut rng);
        let lengths: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..=8)).collect();
        let covs: Vec<Vec<u32>> = lengths
            .iter()
            .map(|&t| (0..t).map(|_| rng.gen_range(0..=levels as u32)).collect())
            .collect();
        let mut data = simulate(&spec, &theta, &lengths, Some(&covs), rng.gen()).unwrap().data;
        for seq in &mut data.sequences {
            for row in &mut seq.values {
                for v in row.iter_mut() {
                    if rng.gen_bool(0.15) {
                        *v = None;
                    }
                }
            }
        }
        let fast = log_likelihood(&spec, &theta, &data).unwrap();
        let slow = log_likelihood_bruteforce(&spec, &theta, &data).unwrap();
        let rel = (fast - slow).abs() / slow.abs().max(1e-300);
        worst = worst.max(if fast == slow { 0.0 } else { rel });
    }
    check(worst <= 1e-10, format!("worst relative error {worst:.3e} over 200 instances"))
}

fn c2_table5_spot_check() -> Outcome {
    let spec = ModelSpec::with_families(3, &[StreamFamily::Poisson], 0).unwrap();
    let mut theta = ParamVector::neutral(&spec);
    theta.alpha0[0] = vec![-3.664, -2.685];
    let g = transition_matrix(&theta, 0);
    let reported = [0.913, 0.023, 0.062];
    let diffs: Vec<f64> = (0..3).map(|j| (g[j] - reported[j]).abs()).collect();
    check(
        diffs.iter().all(|&d| d <= 0.001),
        format!(
            "row 1 = ({:.5}, {:.5}, {:.5}) vs (0.913, 0.023, 0.062); |diff| = ({:.5}, {:.5}, {:.5})",
            g[0], g[1], g[2], diffs[0], diffs[1], diffs[2]
        ),
    )
}

fn c3_induced_dirichlet() -> Outcome {
    let spec = ModelSpec::with_families(3, &[StreamFamily::Poisson], 1).unwrap();
    let prior = random_prior(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let mut cols = vec![Vec::with_capacity(n); 6];
    for _ in 0..n {
        let theta = sample_prior_with(&spec, &prior, &mut rng);
        for z in 0..2u32 {
            let g = transition_matrix(&theta, z);
            for i in 0..3 {
                cols[z as usize * 3 + i].push(g[i * 3]);
            }
        }
    }
    let beta12 = |x: f64| 1.0 - (1.0 - x.clamp(0.0, 1.0)).powi(2);
    let ps: Vec<f64> = cols.iter().map(|c| ks_one_sample(c, beta12).p_value).collect();
    let min = ps.iter().cloned().fold(1.0, f64::min);
    check(min > 0.01, format!("gamma_i1 vs Beta(1,2) at z = 0, 1: min KS p = {min:.4}"))
}

fn c4_logistic_alpha0() -> Outcome {
    let spec = ModelSpec::with_families(3, &[StreamFamily::Poisson], 0).unwrap();
    let prior = random_prior(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let mut cols = vec![Vec::with_capacity(n); 6];
    for _ in 0..n {
        let theta = sample_prior_with(&spec, &prior, &mut rng);
        for i in 0..3 {
            for k in 0..2 {
                cols[i * 2 + k].push(theta.alpha0[i][k]);
            }
        }
    }
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let min = cols
        .iter()
        .map(|c| ks_one_sample(c, logistic).p_value)
        .fold(1.0, f64::min);
    check(min > 0.01, format!("alpha0 vs Logistic(0,1): min KS p = {min:.4}"))
}

fn c5_tempered_prior() -> Outcome {
    let cold = tempered_prior_demo(1.0, 3, 100_000, 5).unwrap();
    let hot = tempered_prior_demo(0.25, 3, 100_000, 6).unwrap();
    let gain = hot.mean_max - cold.mean_max;
    check(
        gain >= 0.05,
        format!(
            "E[max gamma] beta=1: {:.4} (+-{:.4}), beta=0.25: {:.4} (+-{:.4}), gain {gain:.4}",
            cold.mean_max, cold.std_error, hot.mean_max, hot.std_error
        ),
    )
}

fn batch_se(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&xs[b * size..(b + 1) * size])).collect();
    let m = mean(&means);
    let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (v / batches as f64).sqrt()
}

fn c6_conjugate_poisson() -> Outcome {
    let spec = ModelSpec::with_families(1, &[StreamFamily::Poisson], 0).unwrap();
    let (a, b) = (2.0, 0.5);
    let prior = PriorConfig::shared(&spec, GammaHyper::new(a, b), GammaHyper::new(1.0, 1.0), GammaHyper::new(1.0, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pois = Poisson::new(4.0).unwrap();
    let ys: Vec<f64> = (0..200).map(|_| pois.sample(&mut rng)).collect();
    let data = ObservationSet::new(vec![Sequence::new(ys.iter().map(|&y| vec![Some(y)]).collect())]);
    let exact = (a + ys.iter().sum::<f64>()) / (b + ys.len() as f64);
    let target = HmmTarget::new(spec, prior, &data).unwrap();
    let mut cfg = PtConfig::new(vec![1.0], 210_000, 10_000, 66);
    cfg.record_trajectory = false;
    let out = pt_run(&target, cfg).unwrap();
    let lambda = out.store.column("s1.rate[1]").unwrap();
    let est = mean(&lambda);
    let se = batch_se(&lambda, 200);
    check(
        (est - exact).abs() <= 3.0 * se,
        format!("posterior mean {est:.5} vs exact {exact:.5}, MC se {se:.5}, {} draws", lambda.len()),
    )
}

fn c7_bimodal() -> Outcome {
    let target = ToyTarget::bimodal(5.0);
    let ladder = TemperatureLadder::geometric(0.02, 5).unwrap();
    let mut cfg = PtConfig::new(ladder.betas.clone(), 500_000, 5_000, 77);
    cfg.record_trajectory = false;
    let out = pt_run(&target, cfg).unwrap();
    let x = out.store.column("x").unwrap();
    let right = x.iter().filter(|&&v| v > 0.0).count() as f64 / x.len() as f64;
    let trips = out.round_trips.total;

    // same sampler settings, ladder reduced to the cold level
    let control = ToyTarget::bimodal(5.0).starting_at(5.0);
    let mut cfg = PtConfig::new(vec![1.0], 500_000, 5_000, 78);
    cfg.record_trajectory = false;
    let ctl = pt_run(&control, cfg).unwrap();
    let cx = ctl.store.column("x").unwrap();
    let stay = cx.iter().filter(|&&v| v > 0.0).count() as f64 / cx.len() as f64;
    check(
        (right - 0.5).abs() <= 0.05 && trips >= 10 && stay >= 0.99,
        format!(
            "PT weight(x>0) = {right:.4}, round trips = {trips}, swap rates {:?}; control stays {stay:.4}",
            out.ladder.swap_rates().iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn c8_tuner() -> Outcome {
    let target = ToyTarget::standard_normal();
    let tuned = tune_ladder(&target, &TuneConfig::new(0.02, 8)).map_err(|e| e.to_string())?;
    let mut cfg = PtConfig::new(tuned.ladder.betas.clone(), 100_000, 10_000, 88);
    cfg.record_trajectory = false;
    let out = pt_run(&target, cfg).unwrap();
    let rates = out.post_burn_in.rates();
    check(
        rates.iter().all(|r| (0.20..=0.27).contains(r)),
        format!(
            "ladder {:?} ({} pilots); confirmation rates {:?}",
            tuned.ladder.betas.iter().map(|b| (b * 1e4).round() / 1e4).collect::<Vec<_>>(),
            tuned.pilots.len(),
            rates.iter().map(|r| (r * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        ),
    )
}

fn recovery_truth(spec: &ModelSpec) -> ParamVector {
    let mut theta = ParamVector::neutral(spec);
    theta.delta = vec![0.5, 0.3, 0.2];
    let stay = 0.9f64;
    for row in theta.alpha0.iter_mut() {
        for a in row.iter_mut() {
            *a = (0.05 / stay).ln();
        }
    }
    theta.emission = vec![
        StreamParams::GammaMeanSd {
            mean: vec![10.0, 50.0, 150.0],
            sd: vec![3.0, 10.0, 30.0],
        },
        StreamParams::Poisson {
            rate: vec![0.5, 3.0, 8.0],
        },
    ];
    theta
}

fn c9_recovery() -> Outcome {
    let spec = ModelSpec::with_families(3, &[StreamFamily::GammaMeanSd, StreamFamily::Poisson], 0).unwrap();
    let prior = PriorConfig::shared(
        &spec,
        GammaHyper::new(2.0, 0.5),
        GammaHyper::new(2.0, 0.02),
        GammaHyper::new(2.0, 0.1),
    );
    let truth = recovery_truth(&spec);
    let truth_flat = truth.flatten();
    let names = spec.coordinate_names();
    let checked: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.starts_with("zeta"))
        .map(|(k, _)| k)
        .collect();
    let constraint: Vec<String> = (1..=3).map(|i| format!("s1.mean[{i}]")).collect();
    let runs: Vec<(u64, Vec<SummaryRow>)> = (1..=5u64)
        .into_par_iter()
        .map(|seed| {
            let sim = simulate(&spec, &truth, &[500; 4], None, 900 + seed).unwrap();
            let target = HmmTarget::new(spec.clone(), prior.clone(), &sim.data).unwrap();
            let mut cfg = PtConfig::new(vec![1.0, 0.6, 0.35, 0.2], 12_000, 4_000, seed);
            cfg.record_trajectory = false;
            let out = pt_run(&target, cfg).unwrap();
            let relabeled = relabel_by_ordering(&out.store, &constraint).unwrap().store;
            (seed, summarize(&relabeled, &[]).unwrap())
        })
        .collect();
    let mut covered = 0;
    let mut total = 0;
    let mut misses = Vec::new();
    for (seed, rows) in runs {
        for &k in &checked {
            let row = &rows[k];
            total += 1;
            if row.lower_95 <= truth_flat[k] && truth_flat[k] <= row.upper_95 {
                covered += 1;
            } else {
                misses.push(format!("seed {seed} {}", names[k]));
            }
        }
    }
    let frac = covered as f64 / total as f64;
    check(
        frac >= 0.9,
        format!("{covered}/{total} true values inside 95% intervals ({:.1}%); misses: {misses:?}", 100.0 * frac),
    )
}

fn c10_diagnostics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let (a, b) = (draw(10_000), draw(10_000));
    let rhat = split_rhat(&[&a, &b]);
    let noise = draw(100_000);
    let phi = 0.9;
    let mut x = 0.0;
    let ar: Vec<f64> = noise
        .iter()
        .map(|z| {
            x = phi * x + z;
            x
        })
        .collect();
    let ess = ess_basic(&[&ar]);
    let analytic = 100_000.0 * (1.0 - phi) / (1.0 + phi);

    let mut store = SampleStore::new(vec!["x".into()], StoreMetadata::default());
    for (i, v) in [0.0, 1.0, 0.0, 1.0, 1.0].into_iter().enumerate() {
        store.push(i as u64, vec![v]);
    }
    let region = ModeRegion::new("on", "x", 0.5, f64::INFINITY).unwrap();
    let w = running_weight(&store, &region, 1).unwrap();
    let hand = [1.0, 1.0 / 2.0, 2.0 / 3.0, 3.0 / 4.0];
    let exact = w.len() == hand.len() && w.iter().zip(hand).all(|(a, b)| *a == b);
    check(
        (0.99..=1.01).contains(&rhat) && ess > analytic / 1.5 && ess < analytic * 1.5 && exact,
        format!("R-hat {rhat:.5}; AR(1) ESS {ess:.0} vs analytic {analytic:.0}; running weights {w:?}"),
    )
}

fn determinism_setup() -> (HmmTarget, PtConfig) {
    let spec = ModelSpec::with_families(2, &[StreamFamily::Poisson, StreamFamily::GammaMeanSd], 1).unwrap();
    let prior = random_prior(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth = sample_prior_with(&spec, &prior, &mut rng);
    let covs: Vec<Vec<u32>> = vec![(0..150).map(|t| (t / 10 % 2) as u32).collect(); 2];
    let sim = simulate(&spec, &truth, &[150, 150], Some(&covs), 12).unwrap();
    let target = HmmTarget::new(spec, prior, &sim.data).unwrap();
    let mut cfg = PtConfig::new(vec![1.0, 0.5, 0.25, 0.1], 1_000, 300, 1111);
    cfg.retain_all = true;
    (target, cfg)
}

fn c11_determinism() -> Outcome {
    let (target, cfg) = determinism_setup();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    let mut first: Option<hmm_pt::pt::PtOutput> = None;
    for threads in [1, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let out = pool.install(|| pt_run(&target, cfg.clone())).unwrap();
        let path = dir.path().join(format!("samples_{threads}.csv"));
        write_samples(&out.store, &path).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
        first.get_or_insert(out);
    }
    let full = first.unwrap();
    let same_bytes = bytes[0] == bytes[1];

    let mut engine = PtEngine::new(&target, cfg.clone()).unwrap();
    engine.run(500);
    let ck = dir.path().join("ck.json");
    save_checkpoint(&engine.snapshot(), &ck).unwrap();
    drop(engine);
    let snap: EngineSnapshot<ParamVector> = load_checkpoint(&ck).unwrap();
    let mut resumed = PtEngine::resume(&target, snap, cfg).unwrap();
    resumed.run_to_end();
    let split = resumed.finish();
    let same_split = split.store == full.store
        && split.ladder_stores == full.ladder_stores
        && split.trajectory == full.trajectory
        && split.ladder == full.ladder;
    check(
        same_bytes && same_split,
        format!(
            "1 vs 4 threads byte-identical: {same_bytes}; 500 + checkpoint + 500 equals 1000: {same_split} ({} draws)",
            full.store.len()
        ),
    )
}

fn c12_label_symmetry() -> Outcome {
    let spec = ModelSpec::with_families(3, &[StreamFamily::GammaMeanSd, StreamFamily::Poisson], 1).unwrap();
    let prior = random_prior(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let truth = sample_prior_with(&spec, &prior, &mut rng);
    let covs = vec![(0..200).map(|t| (t / 13 % 2) as u32).collect::<Vec<_>>()];
    let data = simulate(&spec, &truth, &[200], Some(&covs), 13).unwrap().data;
    let mut store = SampleStore::new(spec.coordinate_names(), StoreMetadata::default());
    for i in 0..1000 {
        store.push(i, sample_prior_with(&spec, &prior, &mut rng).flatten());
    }
    let constraint: Vec<String> = (1..=3).map(|i| format!("s1.mean[{i}]")).collect();
    let out = relabel_by_ordering(&store, &constraint).unwrap();
    let post = |row: &[f64]| {
        let t = ParamVector::unflatten(&spec, row).unwrap();
        log_prior(&spec, &t, &prior).unwrap() + log_likelihood(&spec, &t, &data).unwrap()
    };
    let mut worst: f64 = 0.0;
    for (a, b) in store.draws.iter().zip(&out.store.draws) {
        worst = worst.max((post(a) - post(b)).abs());
    }
    check(
        worst <= 1e-10,
        format!("{} of 1000 draws permuted; max |delta log posterior| = {worst:.3e}", out.permuted),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("forward vs brute force", c1_forward_vs_bruteforce),
        ("logit-link spot check", c2_table5_spot_check),
        ("induced Dirichlet prior", c3_induced_dirichlet),
        ("marginal Logistic(0,1)", c4_logistic_alpha0),
        ("tempered prior mass shift", c5_tempered_prior),
        ("conjugate Poisson oracle", c6_conjugate_poisson),
        ("symmetric bimodal end-to-end", c7_bimodal),
        ("ladder tuner", c8_tuner),
        ("synthetic recovery", c9_recovery),
        ("diagnostics oracles", c10_diagnostics),
        ("determinism", c11_determinism),
        ("label symmetry", c12_label_symmetry),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = format!("{}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS [{secs:7.1}s] {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL [{secs:7.1}s] {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
