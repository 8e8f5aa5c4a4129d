use statrs::function::gamma::ln_gamma;

use super::model::StateEmission;
use crate::error::{Error, Result};

/// Moment-matched Gamma shape and rate for a given mean and sd.
pub fn gamma_meansd_to_shaperate(mean: f64, sd: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0 && mean.is_finite() && sd > 0.0 && sd.is_finite()) {
        return Err(Error::Domain(format!(
            "Gamma mean and sd must be positive and finite (got {mean}, {sd})"
        )));
    }
    let var = sd * sd;
    Ok((mean * mean / var, mean / var))
}

/// Log-density of a Gamma(shape, rate) distribution; `-inf` off the support.
pub fn gamma_log_density(shape: f64, rate: f64, y: f64) -> f64 {
    if !(y > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * y.ln() - rate * y
}

/// Poisson log-pmf in the `y ln(lambda) - lambda - ln(y!)` form.
pub fn poisson_log_pmf(rate: f64, y: f64) -> f64 {
    if y < 0.0 || y.fract() != 0.0 {
        return f64::NEG_INFINITY;
    }
    let log_term = if y == 0.0 { 0.0 } else { y * rate.ln() };
    log_term - rate - ln_gamma(y + 1.0)
}

/// `log f(y | state)`; a missing value contributes exactly zero.
pub fn emission_log_density(params: StateEmission, y: Option<f64>) -> f64 {
    let Some(y) = y else { return 0.0 };
    match params {
        StateEmission::Poisson { rate } => poisson_log_pmf(rate, y),
        StateEmission::GammaMeanSd { mean, sd } => {
            let var = sd * sd;
            gamma_log_density(mean * mean / var, mean / var, y)
        }
    }
}
