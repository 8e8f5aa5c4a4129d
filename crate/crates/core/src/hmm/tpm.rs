use super::model::{offdiag_col, ParamVector};

/// One row of a transition probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRow {
    pub probs: Vec<f64>,
}

/// Multinomial-logit row `row` at covariate level `z`.
///
/// The diagonal logit is fixed at zero; off-diagonal logits are
/// `alpha0[k] + alpha1[k][z - 1]` (the offset only for `z >= 1`).
pub fn tpm_row(
    row: usize,
    alpha0_row: &[f64],
    alpha1_row: Option<&[Vec<f64>]>,
    z: u32,
) -> TransitionRow {
    let n = alpha0_row.len() + 1;
    let mut logits = vec![0.0; n];
    for (k, &a0) in alpha0_row.iter().enumerate() {
        let offset = match (alpha1_row, z) {
            (Some(a1), z) if z > 0 => a1[k][z as usize - 1],
            _ => 0.0,
        };
        logits[offdiag_col(row, k)] = a0 + offset;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    logits.iter_mut().for_each(|p| *p /= sum);
    TransitionRow { probs: logits }
}

/// Row-major `N x N` transition matrix at covariate level `z`.
pub fn transition_matrix(theta: &ParamVector, z: u32) -> Vec<f64> {
    let n = theta.delta.len();
    let mut gamma = Vec::with_capacity(n * n);
    for i in 0..n {
        let a1 = (!theta.alpha1[i].is_empty() && !theta.alpha1[i][0].is_empty())
            .then(|| theta.alpha1[i].as_slice());
        gamma.extend(tpm_row(i, &theta.alpha0[i], a1, z).probs);
    }
    gamma
}
