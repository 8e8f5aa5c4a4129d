//! Hidden Markov model structure, emission densities, the multinomial-logit
//! transition link and the forward-algorithm likelihood.

mod emission;
mod forward;
mod model;
mod simulate;
mod tpm;

pub use emission::{
    emission_log_density, gamma_log_density, gamma_meansd_to_shaperate, poisson_log_pmf,
};
pub use forward::{log_likelihood, log_likelihood_bruteforce, PreparedData, MAX_BRUTEFORCE_PATHS};
pub use model::{
    offdiag_col, offdiag_index, ModelSpec, ObservationSet, ParamVector, Sequence, StateEmission,
    Stream, StreamFamily, StreamParams,
};
pub use simulate::{simulate, Simulation};
pub use tpm::{tpm_row, transition_matrix, TransitionRow};
