//! Absorbing Markov chain over the receiver's missing degrees of freedom and
//! the per-state choice of how many coded packets to send back-to-back.
//!
//! Each coded packet is erased independently with probability `pe`, every
//! received packet is innovative, and the ACK is erased with probability
//! `pe_ack`. A lost ACK leaves the transmitter in the same state.

use serde::{Deserialize, Serialize};

use crate::channel_model::{round_duration, LinkParams};
use crate::error::{Error, Result};

/// Row-stochastic lower-triangular matrix over states `0..=M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    batch_size: usize,
    p: Vec<f64>,
}

impl TransitionMatrix {
    /// Builds the matrix for a fixed set of back-to-back counts `N_1..N_M`.
    pub fn from_counts(params: &LinkParams, n_per_state: &[u32]) -> Result<Self> {
        let m = n_per_state.len();
        let dim = m + 1;
        let mut p = vec![0.0; dim * dim];
        p[0] = 1.0;
        for (idx, &n) in n_per_state.iter().enumerate() {
            let i = idx + 1;
            let row = transition_row(i, n, params)?;
            p[i * dim..i * dim + i + 1].copy_from_slice(&row);
        }
        Ok(TransitionMatrix { batch_size: m, p })
    }

    pub fn for_policy(params: &LinkParams, policy: &Policy) -> Result<Self> {
        Self::from_counts(params, &policy.n_per_state)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// `P_{i->j}`.
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i * (self.batch_size + 1) + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let dim = self.batch_size + 1;
        &self.p[i * dim..(i + 1) * dim]
    }
}

/// Optimized back-to-back counts for one batch size, with cached round
/// durations and expected completion times. Index `i` of the accessors is
/// the chain state (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub batch_size: usize,
    pub n_per_state: Vec<u32>,
    pub t_round: Vec<f64>,
    pub expected_completion: Vec<f64>,
}

impl Policy {
    /// Policy with caller-chosen counts (no optimization).
    pub fn with_counts(params: &LinkParams, n_per_state: Vec<u32>) -> Result<Self> {
        let batch_size = n_per_state.len();
        if batch_size == 0 {
            return Err(Error::InvalidParameter("empty policy".into()));
        }
        let t_round = n_per_state
            .iter()
            .enumerate()
            .map(|(idx, &n)| round_duration(params, batch_size, idx + 1, n))
            .collect::<Result<Vec<_>>>()?;
        let expected_completion = expected_completion_times(&n_per_state, params)?;
        Ok(Policy { batch_size, n_per_state, t_round, expected_completion })
    }

    pub fn n(&self, state: usize) -> u32 {
        self.n_per_state[state - 1]
    }

    /// `T^i`.
    pub fn round_time(&self, state: usize) -> f64 {
        self.t_round[state - 1]
    }

    /// `E[T_i]`; zero for the absorbing state.
    pub fn expected_time(&self, state: usize) -> f64 {
        if state == 0 {
            0.0
        } else {
            self.expected_completion[state - 1]
        }
    }
}

/// Probabilities of `k = 0..=n` successes in `n` Bernoulli(`p`) trials.
fn binomial_pmf(n: u32, p: f64) -> Vec<f64> {
    let n_us = n as usize;
    if p <= 0.0 {
        let mut v = vec![0.0; n_us + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; n_us + 1];
        v[n_us] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut ln_choose = 0.0;
    let mut out = Vec::with_capacity(n_us + 1);
    for k in 0..=n {
        if k > 0 {
            ln_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        out.push((ln_choose + k as f64 * lp + (n - k) as f64 * lq).exp());
    }
    out
}

/// `P_{i->j}` for `j = 0..=i` when `n_packets` coded packets are sent from
/// state `i`.
pub fn transition_row(state: usize, n_packets: u32, params: &LinkParams) -> Result<Vec<f64>> {
    if state == 0 {
        return Ok(vec![1.0]);
    }
    if (n_packets as usize) < state {
        return Err(Error::InvalidParameter(format!("N_{state} = {n_packets} is below the state {state}")));
    }
    let received = binomial_pmf(n_packets, 1.0 - params.pe);
    let ack_ok = 1.0 - params.pe_ack;
    let mut row = vec![0.0; state + 1];
    // j = state - k for k received packets, 0 < k < state
    for (j, r) in row.iter_mut().enumerate().take(state).skip(1) {
        *r = ack_ok * received[state - j];
    }
    // sum whichever side of the binomial is smaller
    let head: f64 = received[..state].iter().sum();
    let decoded = if head < 0.5 { 1.0 - head } else { received[state..].iter().sum::<f64>() };
    row[0] = ack_ok * decoded.clamp(0.0, 1.0);
    let moved: f64 = row[..state].iter().sum();
    row[state] = (1.0 - moved).max(0.0);
    Ok(row)
}

/// Mean absorption times from every state given per-state round costs
/// (index `i - 1` for state `i`). Output index 0 is state 0.
pub(crate) fn absorption_means(costs: &[f64], matrix: &TransitionMatrix) -> Result<Vec<f64>> {
    let mut means = vec![0.0; costs.len() + 1];
    for i in 1..=costs.len() {
        let stay = matrix.p(i, i);
        if stay >= 1.0 {
            return Err(Error::Divergent { state: i, factor: stay });
        }
        let onward: f64 = (1..i).map(|j| matrix.p(i, j) * means[j]).sum();
        means[i] = (costs[i - 1] + onward) / (1.0 - stay);
    }
    Ok(means)
}

/// `E[T_1]..E[T_M]` for the counts `N_1..N_M`.
pub fn expected_completion_times(n_per_state: &[u32], params: &LinkParams) -> Result<Vec<f64>> {
    let m = n_per_state.len();
    let matrix = TransitionMatrix::from_counts(params, n_per_state)?;
    let costs = n_per_state
        .iter()
        .enumerate()
        .map(|(idx, &n)| round_duration(params, m, idx + 1, n))
        .collect::<Result<Vec<_>>>()?;
    let mut means = absorption_means(&costs, &matrix)?;
    means.remove(0);
    Ok(means)
}

/// Greedy per-state minimization of `E[T_i]`, states in increasing order.
/// The scan over `N_i` starts at `i` and stops once `search_window`
/// consecutive candidates fail to improve the best value.
pub fn optimize_policy(params: &LinkParams, batch_size: usize, search_window: u32) -> Result<Policy> {
    params.validate()?;
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be >= 1".into()));
    }
    if search_window == 0 {
        return Err(Error::InvalidParameter("search_window must be >= 1".into()));
    }
    let mut n_per_state = Vec::with_capacity(batch_size);
    let mut t_round = Vec::with_capacity(batch_size);
    let mut means = vec![0.0];
    for i in 1..=batch_size {
        let mut best: Option<(f64, u32, f64)> = None;
        let mut stale = 0;
        let mut n = i as u32;
        while stale < search_window {
            let (value, t) = state_objective(params, batch_size, i, n, &means)?;
            match best {
                Some((b, _, _)) if value >= b => stale += 1,
                _ => {
                    best = Some((value, n, t));
                    stale = 0;
                }
            }
            n += 1;
        }
        let (value, n_best, t) = best.expect("at least one candidate evaluated");
        n_per_state.push(n_best);
        t_round.push(t);
        means.push(value);
    }
    means.remove(0);
    Ok(Policy { batch_size, n_per_state, t_round, expected_completion: means })
}

/// `E[T_i]` when `N_i = n` and the lower states are already fixed.
pub(crate) fn state_objective(
    params: &LinkParams,
    batch_size: usize,
    state: usize,
    n: u32,
    lower_means: &[f64],
) -> Result<(f64, f64)> {
    let row = transition_row(state, n, params)?;
    let t = round_duration(params, batch_size, state, n)?;
    let stay = row[state];
    if stay >= 1.0 {
        return Ok((f64::INFINITY, t));
    }
    let onward: f64 = (1..state).map(|j| row[j] * lower_means[j]).sum();
    Ok(((t + onward) / (1.0 - stay), t))
}
