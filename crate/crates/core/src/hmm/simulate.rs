use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};

use super::emission::gamma_meansd_to_shaperate;
use super::model::{ModelSpec, ObservationSet, ParamVector, Sequence, StreamParams};
use super::tpm::transition_matrix;
use crate::error::{Error, Result};

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the cumulative total
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Simulated observations together with the hidden state paths (0-based).
#[derive(Debug, Clone)]
pub struct Simulation {
    pub data: ObservationSet,
    pub states: Vec<Vec<usize>>,
}

/// Draws sequences of the given lengths from the HMM defined by `theta`.
///
/// `covariates[w][t]` is the covariate level at time `t` of sequence `w`
/// (all zero when `None`). Deterministic for a fixed seed.
pub fn simulate(
    spec: &ModelSpec,
    theta: &ParamVector,
    lengths: &[usize],
    covariates: Option<&[Vec<u32>]>,
    seed: u64,
) -> Result<Simulation> {
    theta.validate(spec)?;
    if let Some(cov) = covariates {
        if cov.len() != lengths.len() || cov.iter().zip(lengths).any(|(c, &t)| c.len() != t) {
            return Err(Error::Data("covariate shape does not match sequence lengths".into()));
        }
        if cov.iter().flatten().any(|&z| z as usize > spec.covariate_levels()) {
            return Err(Error::Data("covariate level out of range".into()));
        }
    }
    let n = spec.n_states();
    let gammas: Vec<Vec<f64>> = (0..=spec.covariate_levels() as u32)
        .map(|z| transition_matrix(theta, z))
        .collect();
    let mut samplers: Vec<Vec<Emitter>> = Vec::with_capacity(theta.emission.len());
    for params in &theta.emission {
        let mut per_state = Vec::with_capacity(n);
        for j in 0..n {
            per_state.push(match params {
                StreamParams::Poisson { rate } => Emitter::Poisson(
                    Poisson::new(rate[j]).map_err(|e| Error::Params(format!("poisson: {e}")))?,
                ),
                StreamParams::GammaMeanSd { mean, sd } => {
                    let (shape, rate) = gamma_meansd_to_shaperate(mean[j], sd[j])?;
                    Emitter::Gamma(
                        Gamma::new(shape, 1.0 / rate)
                            .map_err(|e| Error::Params(format!("gamma: {e}")))?,
                    )
                }
            });
        }
        samplers.push(per_state);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sequences = Vec::with_capacity(lengths.len());
    let mut states = Vec::with_capacity(lengths.len());
    for (w, &t_len) in lengths.iter().enumerate() {
        let z: Vec<u32> = covariates.map_or_else(|| vec![0; t_len], |c| c[w].clone());
        let mut path = Vec::with_capacity(t_len);
        let mut values = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let s = if t == 0 {
                categorical(&theta.delta, &mut rng)
            } else {
                let prev = path[t - 1];
                categorical(&gammas[z[t] as usize][prev * n..(prev + 1) * n], &mut rng)
            };
            path.push(s);
            values.push(
                samplers
                    .iter()
                    .map(|per_state| Some(per_state[s].sample(&mut rng)))
                    .collect(),
            );
        }
        sequences.push(Sequence {
            values,
            covariates: z,
        });
        states.push(path);
    }
    Ok(Simulation {
        data: ObservationSet::new(sequences),
        states,
    })
}

enum Emitter {
    Poisson(Poisson<f64>),
    Gamma(Gamma<f64>),
}

impl Distribution<f64> for Emitter {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Emitter::Poisson(d) => d.sample(rng),
            // guard against a zero draw from very small shapes
            Emitter::Gamma(d) => d.sample(rng).max(f64::MIN_POSITIVE),
        }
    }
}
