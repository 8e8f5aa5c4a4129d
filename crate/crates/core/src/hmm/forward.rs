use statrs::function::gamma::ln_gamma;

use super::emission::emission_log_density;
use super::model::{ModelSpec, ObservationSet, ParamVector, StreamFamily, StreamParams};
use super::tpm::transition_matrix;
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, LogSumExp};

/// Largest number of state paths per sequence the enumeration oracle accepts.
pub const MAX_BRUTEFORCE_PATHS: usize = 1_000_000;

/// Per-stream observation column with the data-only terms of the
/// log-density precomputed. Missing values are NaN.
#[derive(Debug, Clone)]
struct Column {
    y: Vec<f64>,
    /// `ln y!` for Poisson streams, `ln y` for Gamma streams.
    aux: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PreparedSequence {
    len: usize,
    columns: Vec<Column>,
    covariates: Vec<u32>,
}

/// Observations laid out for repeated likelihood evaluation.
#[derive(Debug, Clone)]
pub struct PreparedData {
    n_states: usize,
    families: Vec<StreamFamily>,
    levels: usize,
    sequences: Vec<PreparedSequence>,
}

impl PreparedData {
    pub fn new(spec: &ModelSpec, data: &ObservationSet) -> Result<Self> {
        data.validate(spec)?;
        let families: Vec<StreamFamily> = spec.streams().iter().map(|s| s.family).collect();
        let sequences = data
            .sequences
            .iter()
            .map(|seq| {
                let columns = families
                    .iter()
                    .enumerate()
                    .map(|(p, family)| {
                        let y: Vec<f64> = seq
                            .values
                            .iter()
                            .map(|row| row[p].unwrap_or(f64::NAN))
                            .collect();
                        let aux = y
                            .iter()
                            .map(|&v| match family {
                                _ if v.is_nan() => f64::NAN,
                                StreamFamily::Poisson => ln_gamma(v + 1.0),
                                StreamFamily::GammaMeanSd => v.ln(),
                            })
                            .collect();
                        Column { y, aux }
                    })
                    .collect();
                PreparedSequence {
                    len: seq.len(),
                    columns,
                    covariates: seq.covariates.clone(),
                }
            })
            .collect();
        Ok(PreparedData {
            n_states: spec.n_states(),
            families,
            levels: spec.covariate_levels(),
            sequences,
        })
    }

    pub fn n_sequences(&self) -> usize {
        self.sequences.len()
    }

    /// Log-space forward algorithm summed over sequences. No validation of
    /// `theta` is performed.
    pub fn log_likelihood(&self, theta: &ParamVector) -> f64 {
        let n = self.n_states;
        let gammas: Vec<Vec<f64>> = (0..=self.levels as u32)
            .map(|z| transition_matrix(theta, z))
            .collect();
        let consts = EmissionConstants::new(theta);
        let mut logb = Vec::new();
        let mut psi = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut scaled = vec![0.0; n];
        let mut total = 0.0;
        for seq in &self.sequences {
            self.fill_log_emissions(seq, &consts, &mut logb);
            for j in 0..n {
                psi[j] = theta.delta[j].ln() + logb[j];
            }
            for t in 1..seq.len {
                let gamma = &gammas[seq.covariates[t] as usize];
                let m = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    break;
                }
                for (s, &p) in scaled.iter_mut().zip(&psi) {
                    *s = (p - m).exp();
                }
                let b = &logb[t * n..(t + 1) * n];
                for j in 0..n {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += scaled[i] * gamma[i * n + j];
                    }
                    next[j] = if acc > 1e-290 {
                        m + acc.ln() + b[j]
                    } else {
                        // underflow in the linear-space sum: take the log route
                        let terms: Vec<f64> =
                            (0..n).map(|i| psi[i] + gamma[i * n + j].ln()).collect();
                        log_sum_exp(&terms) + b[j]
                    };
                }
                std::mem::swap(&mut psi, &mut next);
            }
            let ll = log_sum_exp(&psi);
            if ll == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            total += ll;
        }
        total
    }

    fn fill_log_emissions(
        &self,
        seq: &PreparedSequence,
        consts: &EmissionConstants,
        out: &mut Vec<f64>,
    ) {
        let n = self.n_states;
        out.clear();
        out.resize(seq.len * n, 0.0);
        for (p, col) in seq.columns.iter().enumerate() {
            let c = &consts.streams[p];
            match self.families[p] {
                StreamFamily::Poisson => {
                    for t in 0..seq.len {
                        let y = col.y[t];
                        if y.is_nan() {
                            continue;
                        }
                        let row = &mut out[t * n..(t + 1) * n];
                        for j in 0..n {
                            let log_term = if y == 0.0 { 0.0 } else { y * c.a[j] };
                            row[j] += log_term - c.b[j] - col.aux[t];
                        }
                    }
                }
                StreamFamily::GammaMeanSd => {
                    for t in 0..seq.len {
                        let y = col.y[t];
                        if y.is_nan() {
                            continue;
                        }
                        let row = &mut out[t * n..(t + 1) * n];
                        for j in 0..n {
                            row[j] += c.c[j] + (c.a[j] - 1.0) * col.aux[t] - c.b[j] * y;
                        }
                    }
                }
            }
        }
    }
}

/// Parameter-only terms of each state's log-density.
struct StreamConstants {
    /// Poisson: `ln lambda`; Gamma: shape.
    a: Vec<f64>,
    /// Poisson: `lambda`; Gamma: rate.
    b: Vec<f64>,
    /// Gamma: `shape ln rate - ln Gamma(shape)`.
    c: Vec<f64>,
}

struct EmissionConstants {
    streams: Vec<StreamConstants>,
}

impl EmissionConstants {
    fn new(theta: &ParamVector) -> Self {
        let streams = theta
            .emission
            .iter()
            .map(|e| match e {
                StreamParams::Poisson { rate } => StreamConstants {
                    a: rate.iter().map(|r| r.ln()).collect(),
                    b: rate.clone(),
                    c: Vec::new(),
                },
                StreamParams::GammaMeanSd { mean, sd } => {
                    let (mut a, mut b, mut c) = (Vec::new(), Vec::new(), Vec::new());
                    for (&m, &s) in mean.iter().zip(sd) {
                        let var = s * s;
                        let (shape, rate) = (m * m / var, m / var);
                        a.push(shape);
                        b.push(rate);
                        c.push(shape * rate.ln() - ln_gamma(shape));
                    }
                    StreamConstants { a, b, c }
                }
            })
            .collect();
        EmissionConstants { streams }
    }
}

/// Log-likelihood of `data` under `theta`, summed over sequences.
///
/// Returns `-inf` (never NaN) when some observation has zero density under
/// every state path.
pub fn log_likelihood(spec: &ModelSpec, theta: &ParamVector, data: &ObservationSet) -> Result<f64> {
    theta.validate(spec)?;
    Ok(PreparedData::new(spec, data)?.log_likelihood(theta))
}

/// Exact likelihood by enumerating every hidden-state path.
pub fn log_likelihood_bruteforce(
    spec: &ModelSpec,
    theta: &ParamVector,
    data: &ObservationSet,
) -> Result<f64> {
    theta.validate(spec)?;
    data.validate(spec)?;
    let n = spec.n_states();
    for seq in &data.sequences {
        let paths = (n as f64).powi(seq.len() as i32);
        if paths > MAX_BRUTEFORCE_PATHS as f64 {
            return Err(Error::TooManyPaths {
                paths,
                limit: MAX_BRUTEFORCE_PATHS,
            });
        }
    }
    let log_gammas: Vec<Vec<f64>> = (0..=spec.covariate_levels() as u32)
        .map(|z| transition_matrix(theta, z).iter().map(|g| g.ln()).collect())
        .collect();
    let log_f = |row: &[Option<f64>], state: usize| -> f64 {
        row.iter()
            .zip(&theta.emission)
            .map(|(&y, e)| emission_log_density(e.state(state), y))
            .sum()
    };
    let mut total = 0.0;
    for seq in &data.sequences {
        let t_len = seq.len();
        let mut path = vec![0usize; t_len];
        let mut acc = LogSumExp::default();
        loop {
            let mut lp = theta.delta[path[0]].ln() + log_f(&seq.values[0], path[0]);
            for t in 1..t_len {
                let g = &log_gammas[seq.covariates[t] as usize];
                lp += g[path[t - 1] * n + path[t]] + log_f(&seq.values[t], path[t]);
            }
            acc.push(lp);
            // odometer increment
            let mut k = t_len;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                path[k] += 1;
                if path[k] < n {
                    break;
                }
                path[k] = 0;
                if k == 0 {
                    k = usize::MAX;
                    break;
                }
            }
            if k == usize::MAX {
                break;
            }
        }
        total += acc.value();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::model::{Sequence, StreamParams};

    fn poisson_spec(n: usize) -> ModelSpec {
        ModelSpec::with_families(n, &[StreamFamily::Poisson], 0).unwrap()
    }

    fn seq(ys: &[f64]) -> ObservationSet {
        ObservationSet::new(vec![Sequence::new(
            ys.iter().map(|&y| vec![Some(y)]).collect(),
        )])
    }

    #[test]
    fn single_state_is_sum_of_log_densities() {
        let spec = poisson_spec(1);
        let mut theta = ParamVector::neutral(&spec);
        theta.emission[0] = StreamParams::Poisson { rate: vec![2.5] };
        let data = seq(&[0.0, 3.0, 1.0, 7.0]);
        let expected: f64 = [0.0, 3.0, 1.0, 7.0]
            .iter()
            .map(|&y| emission_log_density(theta.emission[0].state(0), Some(y)))
            .sum();
        let ll = log_likelihood(&spec, &theta, &data).unwrap();
        assert!((ll - expected).abs() < 1e-12);
        let bf = log_likelihood_bruteforce(&spec, &theta, &data).unwrap();
        assert!((bf - expected).abs() < 1e-12);
    }

    #[test]
    fn single_step_is_mixture() {
        let spec = poisson_spec(3);
        let mut theta = ParamVector::neutral(&spec);
        theta.delta = vec![0.2, 0.3, 0.5];
        theta.emission[0] = StreamParams::Poisson {
            rate: vec![0.5, 2.0, 9.0],
        };
        let data = seq(&[4.0]);
        let expected = (0..3)
            .map(|i| theta.delta[i] * emission_log_density(theta.emission[0].state(i), Some(4.0)).exp())
            .sum::<f64>()
            .ln();
        let ll = log_likelihood(&spec, &theta, &data).unwrap();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn two_state_example_matches_enumeration() {
        let spec = poisson_spec(2);
        let mut theta = ParamVector::neutral(&spec);
        // symmetric matrix with 0.7 on the diagonal: alpha = ln(0.3/0.7)
        let a = (0.3f64 / 0.7).ln();
        theta.alpha0 = vec![vec![a], vec![a]];
        theta.emission[0] = StreamParams::Poisson {
            rate: vec![1.0, 5.0],
        };
        let data = seq(&[0.0, 1.0, 6.0]);
        // hand enumeration over the 8 paths
        let pois = |l: f64, y: f64| (-l as f64).exp() * l.powf(y) / (1..=y as u64).product::<u64>() as f64;
        let lam = [1.0, 5.0];
        let g = [[0.7, 0.3], [0.3, 0.7]];
        let ys = [0.0, 1.0, 6.0];
        let mut p = 0.0;
        for s0 in 0..2 {
            for s1 in 0..2 {
                for s2 in 0..2 {
                    p += 0.5
                        * pois(lam[s0], ys[0])
                        * g[s0][s1]
                        * pois(lam[s1], ys[1])
                        * g[s1][s2]
                        * pois(lam[s2], ys[2]);
                }
            }
        }
        let ll = log_likelihood(&spec, &theta, &data).unwrap();
        let bf = log_likelihood_bruteforce(&spec, &theta, &data).unwrap();
        assert!((ll - p.ln()).abs() <= 1e-10 * p.ln().abs());
        assert!((bf - p.ln()).abs() <= 1e-10 * p.ln().abs());
    }

    #[test]
    fn all_missing_gives_zero() {
        let spec = ModelSpec::with_families(
            3,
            &[StreamFamily::Poisson, StreamFamily::GammaMeanSd],
            0,
        )
        .unwrap();
        let mut theta = ParamVector::neutral(&spec);
        theta.alpha0 = vec![vec![-1.0, 0.5], vec![2.0, -0.3], vec![0.1, 0.2]];
        theta.delta = vec![0.1, 0.6, 0.3];
        let data = ObservationSet::new(vec![
            Sequence::new(vec![vec![None, None]; 6]),
            Sequence::new(vec![vec![None, None]; 2]),
        ]);
        let ll = log_likelihood(&spec, &theta, &data).unwrap();
        assert!(ll.abs() < 1e-14);
    }

    #[test]
    fn degenerate_rows_stay_finite() {
        let spec = ModelSpec::with_families(2, &[StreamFamily::Poisson], 0).unwrap();
        let mut theta = ParamVector::neutral(&spec);
        theta.delta = vec![1.0, 0.0];
        // exp(-800) underflows: state 2 is unreachable
        theta.alpha0 = vec![vec![-800.0], vec![0.0]];
        let data = seq(&[1.0, 2.0, 0.0]);
        let ll = log_likelihood(&spec, &theta, &data).unwrap();
        let expected: f64 = [1.0, 2.0, 0.0]
            .iter()
            .map(|&y| emission_log_density(theta.emission[0].state(0), Some(y)))
            .sum();
        assert!((ll - expected).abs() < 1e-12);
        let bf = log_likelihood_bruteforce(&spec, &theta, &data).unwrap();
        assert!((bf - expected).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_refuses_long_sequences() {
        let spec = poisson_spec(3);
        let theta = ParamVector::neutral(&spec);
        let data = seq(&[1.0; 13]);
        assert!(matches!(
            log_likelihood_bruteforce(&spec, &theta, &data),
            Err(Error::TooManyPaths { .. })
        ));
    }

    #[test]
    fn covariate_matrices_are_used_per_step() {
        let spec = ModelSpec::with_families(2, &[StreamFamily::Poisson], 1).unwrap();
        let mut theta = ParamVector::neutral(&spec);
        theta.alpha0 = vec![vec![-2.0], vec![-1.0]];
        theta.alpha1 = vec![vec![vec![3.0]], vec![vec![-2.5]]];
        theta.emission[0] = StreamParams::Poisson {
            rate: vec![0.7, 6.0],
        };
        let mut data = seq(&[0.0, 5.0, 7.0, 1.0, 0.0, 4.0]);
        data.sequences[0].covariates = vec![0, 1, 1, 0, 1, 0];
        let ll = log_likelihood(&spec, &theta, &data).unwrap();
        let bf = log_likelihood_bruteforce(&spec, &theta, &data).unwrap();
        assert!((ll - bf).abs() <= 1e-10 * bf.abs());
        data.sequences[0].covariates = vec![0; 6];
        let ll0 = log_likelihood(&spec, &theta, &data).unwrap();
        assert!((ll - ll0).abs() > 1e-3);
    }
}
