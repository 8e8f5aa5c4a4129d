//! Prior densities and prior sampling.
//!
//! Transition rows use a Gumbel hierarchy on the logit working parameters:
//! `-zeta_i ~ Gumbel(0, 1)`, `-alpha0_ij | zeta_i ~ Gumbel(zeta_i, 1)` and,
//! for covariate levels, `-alpha1_ijl | alpha0_ij, zeta_i ~ Gumbel(alpha0_ij
//! + zeta_i, 1)`. Every row of the induced transition matrix is then
//! Dirichlet(1, ..., 1) at every covariate level.

use rand::distributions::Open01;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::hmm::{
    gamma_log_density, offdiag_col, tpm_row, ModelSpec, ParamVector, StreamFamily, StreamParams,
};

/// Shape-rate hyperparameters of a Gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaHyper {
    pub shape: f64,
    pub rate: f64,
}

impl GammaHyper {
    pub const fn new(shape: f64, rate: f64) -> Self {
        GammaHyper { shape, rate }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        gamma_log_density(self.shape, self.rate, x)
    }

    /// Mode `(shape - 1) / rate`, or zero when `shape <= 1`.
    pub fn mode(&self) -> f64 {
        ((self.shape - 1.0) / self.rate).max(0.0)
    }

    fn valid(&self) -> bool {
        self.shape > 0.0 && self.rate > 0.0 && self.shape.is_finite() && self.rate.is_finite()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("validated hyperparameters")
            .sample(rng)
            .max(f64::MIN_POSITIVE)
    }
}

/// Per-state priors for the parameters of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StreamPrior {
    Poisson {
        rate: Vec<GammaHyper>,
    },
    GammaMeanSd {
        mean: Vec<GammaHyper>,
        sd: Vec<GammaHyper>,
    },
}

impl StreamPrior {
    fn family(&self) -> StreamFamily {
        match self {
            StreamPrior::Poisson { .. } => StreamFamily::Poisson,
            StreamPrior::GammaMeanSd { .. } => StreamFamily::GammaMeanSd,
        }
    }

    fn hypers(&self) -> impl Iterator<Item = &GammaHyper> {
        let (a, b): (&[GammaHyper], &[GammaHyper]) = match self {
            StreamPrior::Poisson { rate } => (rate, &[]),
            StreamPrior::GammaMeanSd { mean, sd } => (mean, sd),
        };
        a.iter().chain(b.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub streams: Vec<StreamPrior>,
    /// Dirichlet concentration of the initial distribution.
    pub delta_concentration: Vec<f64>,
}

impl PriorConfig {
    /// The same hyperparameters for every state: `rate` for Poisson streams,
    /// `mean` and `sd` for Gamma streams; Dirichlet(1) on the initial
    /// distribution.
    pub fn shared(spec: &ModelSpec, rate: GammaHyper, mean: GammaHyper, sd: GammaHyper) -> Self {
        let n = spec.n_states();
        PriorConfig {
            streams: spec
                .streams()
                .iter()
                .map(|s| match s.family {
                    StreamFamily::Poisson => StreamPrior::Poisson {
                        rate: vec![rate; n],
                    },
                    StreamFamily::GammaMeanSd => StreamPrior::GammaMeanSd {
                        mean: vec![mean; n],
                        sd: vec![sd; n],
                    },
                })
                .collect(),
            delta_concentration: vec![1.0; n],
        }
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        let n = spec.n_states();
        let field = |f: &str, m: String| Error::Config {
            field: f.into(),
            message: m,
        };
        if self.delta_concentration.len() != n
            || self
                .delta_concentration
                .iter()
                .any(|&a| !(a > 0.0) || !a.is_finite())
        {
            return Err(field(
                "prior.delta_concentration",
                format!("need {n} positive concentrations"),
            ));
        }
        if self.streams.len() != spec.n_streams() {
            return Err(field(
                "prior.streams",
                format!("{} priors for {} streams", self.streams.len(), spec.n_streams()),
            ));
        }
        for (p, (prior, stream)) in self.streams.iter().zip(spec.streams()).enumerate() {
            if prior.family() != stream.family {
                return Err(field("prior.streams", format!("stream {p} family mismatch")));
            }
            let lens_ok = match prior {
                StreamPrior::Poisson { rate } => rate.len() == n,
                StreamPrior::GammaMeanSd { mean, sd } => mean.len() == n && sd.len() == n,
            };
            if !lens_ok || prior.hypers().any(|h| !h.valid()) {
                return Err(field(
                    "prior.streams",
                    format!("stream {p} needs {n} positive (shape, rate) pairs per parameter"),
                ));
            }
        }
        Ok(())
    }
}

/// Gumbel(location, 1) log-density.
pub fn gumbel_logpdf(x: f64, location: f64) -> f64 {
    let u = x - location;
    -u - (-u).exp()
}

/// Dirichlet log-density; `-inf` off the simplex.
pub fn dirichlet_log_density(concentration: &[f64], x: &[f64]) -> f64 {
    if x.iter().any(|&v| !(v >= 0.0)) || (x.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return f64::NEG_INFINITY;
    }
    let a0: f64 = concentration.iter().sum();
    let mut lp = ln_gamma(a0);
    for (&a, &v) in concentration.iter().zip(x) {
        lp -= ln_gamma(a);
        if a != 1.0 {
            lp += (a - 1.0) * v.ln();
        }
    }
    lp
}

/// Log-density of the Gumbel hierarchy for one transition row: latent
/// `zeta_i`, baseline row and (possibly empty) covariate offsets.
pub fn transition_row_log_prior(zeta: f64, alpha0_row: &[f64], alpha1_row: &[Vec<f64>]) -> f64 {
    let mut lp = gumbel_logpdf(-zeta, 0.0);
    for (k, &a0) in alpha0_row.iter().enumerate() {
        lp += gumbel_logpdf(-a0, zeta);
        if let Some(offsets) = alpha1_row.get(k) {
            for &a1 in offsets {
                lp += gumbel_logpdf(-a1, a0 + zeta);
            }
        }
    }
    lp
}

/// Emission and initial-distribution part of the log prior.
pub fn emission_log_prior(theta: &ParamVector, config: &PriorConfig) -> f64 {
    let mut lp = dirichlet_log_density(&config.delta_concentration, &theta.delta);
    for (params, prior) in theta.emission.iter().zip(&config.streams) {
        match (params, prior) {
            (StreamParams::Poisson { rate }, StreamPrior::Poisson { rate: h }) => {
                lp += rate.iter().zip(h).map(|(&x, h)| h.log_density(x)).sum::<f64>();
            }
            (
                StreamParams::GammaMeanSd { mean, sd },
                StreamPrior::GammaMeanSd { mean: hm, sd: hs },
            ) => {
                lp += mean.iter().zip(hm).map(|(&x, h)| h.log_density(x)).sum::<f64>();
                lp += sd.iter().zip(hs).map(|(&x, h)| h.log_density(x)).sum::<f64>();
            }
            _ => return f64::NEG_INFINITY,
        }
    }
    lp
}

/// Full log prior without shape checks.
pub fn log_prior_unchecked(theta: &ParamVector, config: &PriorConfig) -> f64 {
    let mut lp = emission_log_prior(theta, config);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    for i in 0..theta.zeta.len() {
        lp += transition_row_log_prior(theta.zeta[i], &theta.alpha0[i], &theta.alpha1[i]);
    }
    lp
}

/// Log prior density of `theta`; `-inf` outside the support.
pub fn log_prior(spec: &ModelSpec, theta: &ParamVector, config: &PriorConfig) -> Result<f64> {
    theta.validate_shape(spec)?;
    config.validate(spec)?;
    Ok(log_prior_unchecked(theta, config))
}

fn latent<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    (-u.ln()).ln()
}

/// Draws one parameter vector from the prior using `rng`.
pub fn sample_prior_with<R: Rng + ?Sized>(
    spec: &ModelSpec,
    config: &PriorConfig,
    rng: &mut R,
) -> ParamVector {
    let n = spec.n_states();
    let levels = spec.covariate_levels();
    let mut theta = ParamVector::neutral(spec);
    for i in 0..n {
        let zeta_ii = latent(rng);
        theta.zeta[i] = zeta_ii;
        for k in 0..n - 1 {
            let zeta_ij = latent(rng);
            theta.alpha0[i][k] = zeta_ij - zeta_ii;
            for l in 0..levels {
                theta.alpha1[i][k][l] = latent(rng) - zeta_ij;
            }
        }
    }
    let g: Vec<f64> = config
        .delta_concentration
        .iter()
        .map(|&a| GammaHyper::new(a, 1.0).sample(rng))
        .collect();
    let total: f64 = g.iter().sum();
    theta.delta = g.iter().map(|v| v / total).collect();
    for (params, prior) in theta.emission.iter_mut().zip(&config.streams) {
        match (params, prior) {
            (StreamParams::Poisson { rate }, StreamPrior::Poisson { rate: h }) => {
                for (x, h) in rate.iter_mut().zip(h) {
                    *x = h.sample(rng);
                }
            }
            (
                StreamParams::GammaMeanSd { mean, sd },
                StreamPrior::GammaMeanSd { mean: hm, sd: hs },
            ) => {
                for (x, h) in mean.iter_mut().zip(hm) {
                    *x = h.sample(rng);
                }
                for (x, h) in sd.iter_mut().zip(hs) {
                    *x = h.sample(rng);
                }
            }
            _ => unreachable!("prior validated against spec"),
        }
    }
    theta
}

/// Draws one parameter vector from the prior. Deterministic per seed.
pub fn sample_prior(spec: &ModelSpec, config: &PriorConfig, seed: u64) -> Result<ParamVector> {
    config.validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_prior_with(spec, config, &mut rng))
}

/// Summary of transition rows drawn under a tempered working-parameter prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperedPriorSummary {
    pub beta: f64,
    pub n_states: usize,
    pub n_draws: usize,
    /// Monte-Carlo mean of `max_j gamma_ij`.
    pub mean_max: f64,
    /// Batch-means standard error of `mean_max`.
    pub std_error: f64,
    /// Monte-Carlo mean of the diagonal entry `gamma_ii`.
    pub mean_diagonal: f64,
}

/// Samples transition rows under the prior of `(zeta_i, alpha0_i.)` raised
/// to the power `beta`, using a component-wise Metropolis sampler, and
/// summarises how the induced rows concentrate.
///
/// Diagnostic only: tempered replicas in the sampler never power the prior.
pub fn tempered_prior_demo(
    beta: f64,
    n_states: usize,
    n_draws: usize,
    seed: u64,
) -> Result<TemperedPriorSummary> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Domain(format!("beta must lie in (0, 1], got {beta}")));
    }
    if n_states < 2 {
        return Err(Error::Domain("need at least two states".into()));
    }
    if n_draws == 0 {
        return Err(Error::Domain("need at least one draw".into()));
    }
    const ROW: usize = 0;
    const WARMUP: usize = 20_000;
    const THIN: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Sampled in latent coordinates v_j = alpha0_j + zeta (v_ROW = zeta), a
    // unit-Jacobian reparameterisation of (zeta, alpha0 row).
    let to_params = |v: &[f64]| -> (f64, Vec<f64>) {
        let zeta = v[ROW];
        let alpha: Vec<f64> = (0..n_states - 1)
            .map(|k| v[offdiag_col(ROW, k)] - zeta)
            .collect();
        (zeta, alpha)
    };
    let log_target = |v: &[f64]| {
        let (zeta, alpha) = to_params(v);
        beta * transition_row_log_prior(zeta, &alpha, &[])
    };
    let mut v = vec![0.0; n_states];
    let mut current = log_target(&v);
    let mut steps = vec![2.0 / beta.sqrt(); n_states];
    let mut accepted = vec![0usize; n_states];
    let mut draws = Vec::with_capacity(n_draws);
    let mut diag_sum = 0.0;
    let total = WARMUP + n_draws * THIN;
    for it in 0..total {
        for c in 0..n_states {
            let old = v[c];
            v[c] += steps[c] * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let proposed = log_target(&v);
            if rng.gen::<f64>().ln() < proposed - current {
                current = proposed;
                accepted[c] += 1;
            } else {
                v[c] = old;
            }
        }
        if it < WARMUP && (it + 1) % 100 == 0 {
            for c in 0..n_states {
                let rate = accepted[c] as f64 / 100.0;
                if rate > 0.5 {
                    steps[c] *= 1.3;
                } else if rate < 0.3 {
                    steps[c] *= 0.7;
                }
                accepted[c] = 0;
            }
        }
        if it >= WARMUP && (it - WARMUP + 1) % THIN == 0 {
            let (_, alpha) = to_params(&v);
            let row = tpm_row(ROW, &alpha, None, 0).probs;
            diag_sum += row[ROW];
            draws.push(row.iter().copied().fold(0.0, f64::max));
        }
    }
    let mean_max = draws.iter().sum::<f64>() / n_draws as f64;
    Ok(TemperedPriorSummary {
        beta,
        n_states,
        n_draws,
        mean_max,
        std_error: batch_means_se(&draws),
        mean_diagonal: diag_sum / n_draws as f64,
    })
}

fn batch_means_se(xs: &[f64]) -> f64 {
    let batches = 50.min(xs.len());
    let size = xs.len() / batches;
    if size < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = xs
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}
