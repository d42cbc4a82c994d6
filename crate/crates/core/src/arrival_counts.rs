//! Probabilities of `k` Poisson arrivals during a service of bulk size `j`,
//! computed as a Poisson mixture over the completion-time atoms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rlnc_chain::{Policy, TransitionMatrix};
use crate::service_mgf::{mgf_eval, CompletionPmf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalPmf {
    #[serde(rename = "j")]
    pub service_type: usize,
    #[serde(rename = "lambda")]
    pub lambda_rate: f64,
    pub a: Vec<f64>,
    /// Mass missing from `a` because the completion-time PMF was truncated.
    pub tail_bound: f64,
}

impl ArrivalPmf {
    pub fn kmax(&self) -> usize {
        self.a.len() - 1
    }

    /// `1 - sum a_k`: Poisson tail beyond `kmax` plus `tail_bound`.
    pub fn unaccounted_mass(&self) -> f64 {
        (1.0 - self.a.iter().sum::<f64>()).max(0.0)
    }

    /// `sum_k a_k z^k` over the retained coefficients.
    pub fn polynomial(&self, z: f64) -> f64 {
        self.a.iter().rev().fold(0.0, |acc, &a| acc * z + a)
    }

    /// `R(k, .) = 1 - sum_{i<=k} a_i`.
    pub fn upper_tail(&self, k: usize) -> f64 {
        1.0 - self.a[..=k].iter().sum::<f64>()
    }
}

/// `a_k = sum_atoms p(t) e^{-lambda t} (lambda t)^k / k!` for `k = 0..=kmax`.
pub fn arrival_pmf(j: usize, lambda_rate: f64, kmax: usize, pmf: &CompletionPmf) -> Result<ArrivalPmf> {
    if pmf.batch_size_state != j {
        return Err(Error::InvalidParameter(format!("completion PMF is for state {}, not {j}", pmf.batch_size_state)));
    }
    if !(lambda_rate >= 0.0 && lambda_rate.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda = {lambda_rate} must be >= 0")));
    }
    let mut a = vec![0.0; kmax + 1];
    for atom in &pmf.atoms {
        let mean = lambda_rate * atom.t;
        let mut term = atom.p * (-mean).exp();
        for (k, slot) in a.iter_mut().enumerate() {
            *slot += term;
            term *= mean / (k + 1) as f64;
        }
    }
    Ok(ArrivalPmf { service_type: j, lambda_rate, a, tail_bound: pmf.truncated_mass })
}

/// `A^{(j)}(z) = M_{T,j}(lambda (z - 1))`.
pub fn arrival_gf_eval(j: usize, lambda_rate: f64, z: f64, policy: &Policy, matrix: &TransitionMatrix) -> Result<f64> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::InvalidParameter(format!("z = {z} outside [0, 1]")));
    }
    mgf_eval(j, lambda_rate * (z - 1.0), policy, matrix)
}
