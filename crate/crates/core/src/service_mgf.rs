//! Moment generating function of the batch completion time (and energy),
//! the truncated completion-time PMF, and the direct path-sum oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel_model::{round_energy, LinkParams};
use crate::error::{Error, Result};
use crate::rlnc_chain::{absorption_means, optimize_policy, Policy, TransitionMatrix};

/// Default cap on live frontier nodes in [`completion_pmf`].
pub const DEFAULT_NODE_CAP: usize = 4_000_000;

/// One point mass of the completion-time distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub t: f64,
    pub p: f64,
}

/// Truncated PMF of the completion time starting from `batch_size_state`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionPmf {
    pub batch_size_state: usize,
    pub atoms: Vec<Atom>,
    pub truncated_mass: f64,
}

impl CompletionPmf {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.p).sum()
    }

    pub fn max_time(&self) -> f64 {
        self.atoms.last().map_or(0.0, |a| a.t)
    }

    /// `sum p * exp(s t)` over the retained atoms.
    pub fn transform(&self, s: f64) -> f64 {
        self.atoms.iter().map(|a| a.p * (s * a.t).exp()).sum()
    }
}

/// Recursion `M_n(s) = e^{s c_n} / (1 - P_nn e^{s c_n}) * sum_{i<n} P_ni M_i(s)`
/// for arbitrary per-state costs `c_i` (index `i - 1`).
pub fn mgf_with_costs(n: usize, s: f64, costs: &[f64], matrix: &TransitionMatrix) -> Result<f64> {
    if n > costs.len() || n > matrix.batch_size() {
        return Err(Error::InvalidParameter(format!("state {n} beyond the chain")));
    }
    let mut values = Vec::with_capacity(n + 1);
    values.push(1.0);
    for i in 1..=n {
        let step = (s * costs[i - 1]).exp();
        let factor = matrix.p(i, i) * step;
        if factor >= 1.0 {
            return Err(Error::Divergent { state: i, factor });
        }
        let onward: f64 = (0..i).map(|j| matrix.p(i, j) * values[j]).sum();
        values.push(step / (1.0 - factor) * onward);
    }
    Ok(values[n])
}

/// `M_{T,n}(s)`.
pub fn mgf_eval(n: usize, s: f64, policy: &Policy, matrix: &TransitionMatrix) -> Result<f64> {
    mgf_with_costs(n, s, &policy.t_round, matrix)
}

/// Per-state round energies `E^1..E^M` for a policy.
pub fn energy_costs(policy: &Policy, params: &LinkParams) -> Result<Vec<f64>> {
    (1..=policy.batch_size).map(|i| round_energy(params, policy.batch_size, i, policy.n(i))).collect()
}

/// `M_{E,n}(s)`: the same recursion with round energies in place of durations.
pub fn energy_mgf_eval(
    n: usize,
    s: f64,
    policy: &Policy,
    matrix: &TransitionMatrix,
    params: &LinkParams,
) -> Result<f64> {
    mgf_with_costs(n, s, &energy_costs(policy, params)?, matrix)
}

/// `1/mu_j`, the mean service time of a batch of `j`.
pub fn mean_service_time(j: usize, policy: &Policy, matrix: &TransitionMatrix) -> Result<f64> {
    if j == 0 || j > policy.batch_size {
        return Err(Error::InvalidParameter(format!("state {j} outside 1..={}", policy.batch_size)));
    }
    absorption_means(&policy.t_round[..j], matrix).map(|m| m[j])
}

/// Direct path-sum oracle over visit counts, time costs.
pub fn mgf_direct_enum(n: usize, s: f64, policy: &Policy, matrix: &TransitionMatrix, tol: f64) -> Result<f64> {
    direct_enum_with_costs(n, s, &policy.t_round, matrix, tol)
}

const MAX_ENUM_STATE: usize = 4;
const MAX_ENUM_TUPLES: u64 = 60_000_000;

/// Sums `exp(s * sum m_i c_i) * C_n * A_n` over visit-count tuples with
/// `m_n >= 1` and `m_i >= 0` below, each count capped at `L`. `L` doubles
/// until the probability mass reached at `s = 0` is within `tol` of one,
/// which bounds the truncation error for every `s <= 0`.
///
/// `C_n` carries `P_jj^{-1}` for every skipped state and `A_n` carries the
/// matching `P_jj`; the pair is evaluated with those factors cancelled so a
/// zero self-loop probability does not produce `0 * inf`.
pub fn direct_enum_with_costs(n: usize, s: f64, costs: &[f64], matrix: &TransitionMatrix, tol: f64) -> Result<f64> {
    if n == 0 {
        return Ok(1.0);
    }
    if n > MAX_ENUM_STATE || n > matrix.batch_size() {
        return Err(Error::InvalidParameter(format!(
            "direct enumeration supports states 1..={MAX_ENUM_STATE}, got {n}"
        )));
    }
    if s > 0.0 {
        return Err(Error::InvalidParameter("direct enumeration requires s <= 0".into()));
    }
    let mut cap: u32 = 8;
    loop {
        let tuples = (cap as u64 + 1).pow(n as u32 - 1) * cap as u64;
        if tuples > MAX_ENUM_TUPLES {
            return Err(Error::ToleranceNotReached {
                tol,
                detail: format!("path enumeration exceeded {MAX_ENUM_TUPLES} tuples"),
            });
        }
        let (value, mass) = enumerate_visits(n, s, costs, matrix, cap);
        if 1.0 - mass <= tol {
            return Ok(value);
        }
        cap *= 2;
    }
}

fn enumerate_visits(n: usize, s: f64, costs: &[f64], matrix: &TransitionMatrix, cap: u32) -> (f64, f64) {
    // visits[i] for states 1..=n, index 0 unused
    let mut visits = vec![0u32; n + 1];
    visits[n] = 1;
    let (mut value, mut mass) = (0.0, 0.0);
    loop {
        let weight = repeat_coefficient(&visits, matrix) * path_coefficient(n, &visits, matrix);
        if weight > 0.0 {
            let cost: f64 = (1..=n).map(|i| visits[i] as f64 * costs[i - 1]).sum();
            value += weight * (s * cost).exp();
            mass += weight;
        }
        // odometer over m_1..m_{n-1} in 0..=cap, then m_n in 1..=cap
        let mut pos = 1;
        loop {
            if pos == n {
                if visits[n] == cap {
                    return (value, mass);
                }
                visits[n] += 1;
                break;
            }
            if visits[pos] < cap {
                visits[pos] += 1;
                break;
            }
            visits[pos] = 0;
            pos += 1;
        }
        for v in visits.iter_mut().take(pos).skip(1) {
            *v = 0;
        }
    }
}

/// `C_n` restricted to visited states.
fn repeat_coefficient(visits: &[u32], matrix: &TransitionMatrix) -> f64 {
    visits.iter().enumerate().skip(1).filter(|(_, &m)| m > 0).map(|(j, &m)| matrix.p(j, j).powi(m as i32 - 1)).product()
}

/// `A_j` with the skipped-state self-loop factors removed.
fn path_coefficient(j: usize, visits: &[u32], matrix: &TransitionMatrix) -> f64 {
    if j == 0 {
        return 1.0;
    }
    if visits[j] == 0 {
        return 0.0;
    }
    if j == 1 {
        return matrix.p(1, 0);
    }
    let mut total = 0.0;
    for lower in (0..j).rev() {
        total += matrix.p(j, lower) * path_coefficient(lower, visits, matrix);
        // states strictly between `lower` and `j` must be unvisited
        if lower > 0 && visits[lower] > 0 {
            break;
        }
    }
    total
}

/// Breadth-first expansion of the chain from state `n`, recording each
/// absorption with its visit counts. Branches lighter than a threshold are
/// pruned and their mass reported in `truncated_mass`; the threshold is
/// tightened until the pruned total is at most `tol`.
pub fn completion_pmf(n: usize, policy: &Policy, matrix: &TransitionMatrix, tol: f64) -> Result<CompletionPmf> {
    completion_pmf_with_cap(n, policy, matrix, tol, DEFAULT_NODE_CAP)
}

pub fn completion_pmf_with_cap(
    n: usize,
    policy: &Policy,
    matrix: &TransitionMatrix,
    tol: f64,
    node_cap: usize,
) -> Result<CompletionPmf> {
    if n == 0 || n > policy.batch_size {
        return Err(Error::InvalidParameter(format!("state {n} outside 1..={}", policy.batch_size)));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidParameter(format!("pmf tolerance {tol} must lie in (0, 1)")));
    }
    for i in 1..=n {
        if matrix.p(i, i) >= 1.0 {
            return Err(Error::Divergent { state: i, factor: matrix.p(i, i) });
        }
    }
    let mut threshold = tol * 1e-2;
    loop {
        let (visits, pruned) = expand(n, matrix, threshold, node_cap, tol)?;
        if pruned <= tol {
            return Ok(merge_atoms(n, policy, visits, pruned));
        }
        threshold *= 1e-2;
        if threshold < f64::MIN_POSITIVE {
            return Err(Error::ToleranceNotReached { tol, detail: "pruning threshold underflow".into() });
        }
    }
}

type VisitMap = BTreeMap<Vec<u32>, f64>;

fn expand(n: usize, matrix: &TransitionMatrix, threshold: f64, node_cap: usize, tol: f64) -> Result<(VisitMap, f64)> {
    let mut frontier: BTreeMap<(usize, Vec<u32>), f64> = BTreeMap::new();
    frontier.insert((n, vec![0; n]), 1.0);
    let mut absorbed = VisitMap::new();
    let mut pruned = 0.0;
    while !frontier.is_empty() {
        let mut next: BTreeMap<(usize, Vec<u32>), f64> = BTreeMap::new();
        for ((state, mut counts), p) in frontier {
            counts[state - 1] += 1;
            let row = matrix.row(state);
            *absorbed.entry(counts.clone()).or_insert(0.0) += p * row[0];
            for (j, &pj) in row.iter().enumerate().take(state + 1).skip(1) {
                if pj > 0.0 {
                    *next.entry((j, counts.clone())).or_insert(0.0) += p * pj;
                }
            }
        }
        next.retain(|_, p| {
            if *p < threshold {
                pruned += *p;
                false
            } else {
                true
            }
        });
        if next.len() + absorbed.len() > node_cap {
            return Err(Error::ToleranceNotReached {
                tol,
                detail: format!("completion-time expansion exceeded {node_cap} nodes"),
            });
        }
        frontier = next;
    }
    Ok((absorbed, pruned))
}

fn merge_atoms(n: usize, policy: &Policy, visits: VisitMap, pruned: f64) -> CompletionPmf {
    let mut raw: Vec<Atom> = visits
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(counts, p)| {
            let t = counts.iter().enumerate().map(|(i, &m)| m as f64 * policy.round_time(i + 1)).sum();
            Atom { t, p }
        })
        .collect();
    raw.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut atoms: Vec<Atom> = Vec::with_capacity(raw.len());
    for atom in raw {
        match atoms.last_mut() {
            Some(last) if (atom.t - last.t).abs() <= 1e-12 * atom.t.abs().max(last.t.abs()) => {
                last.p += atom.p;
            }
            _ => atoms.push(atom),
        }
    }
    CompletionPmf { batch_size_state: n, atoms, truncated_mass: pruned }
}

/// Optimized policy, its transition matrix and completion-time PMF for one
/// batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchService {
    pub policy: Policy,
    pub matrix: TransitionMatrix,
    pub pmf: CompletionPmf,
}

impl BatchService {
    pub fn optimized(params: &LinkParams, batch_size: usize, search_window: u32, pmf_tol: f64) -> Result<Self> {
        let policy = optimize_policy(params, batch_size, search_window)?;
        Self::from_policy(params, policy, pmf_tol)
    }

    pub fn from_policy(params: &LinkParams, policy: Policy, pmf_tol: f64) -> Result<Self> {
        let matrix = TransitionMatrix::for_policy(params, &policy)?;
        let pmf = completion_pmf(policy.batch_size, &policy, &matrix, pmf_tol)?;
        Ok(BatchService { policy, matrix, pmf })
    }

    pub fn batch_size(&self) -> usize {
        self.policy.batch_size
    }

    pub fn mean_service_time(&self) -> f64 {
        self.policy.expected_time(self.policy.batch_size)
    }

    pub fn mgf(&self, s: f64) -> Result<f64> {
        mgf_eval(self.batch_size(), s, &self.policy, &self.matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel_model::{packet_duration, wait_time};
    use approx::assert_relative_eq;

    fn setup(params: &LinkParams, m: usize) -> (Policy, TransitionMatrix) {
        let policy = optimize_policy(params, m, 50).unwrap();
        let matrix = TransitionMatrix::for_policy(params, &policy).unwrap();
        (policy, matrix)
    }

    fn reference(pe_ack: f64) -> LinkParams {
        LinkParams::high_latency_link().with_pe_ack(pe_ack)
    }

    #[test]
    fn normalized_at_zero() {
        let (policy, matrix) = setup(&reference(0.2), 5);
        for n in 0..=5 {
            assert_relative_eq!(mgf_eval(n, 0.0, &policy, &matrix).unwrap(), 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn lossless_is_deterministic() {
        let p = LinkParams { pe: 0.0, pe_ack: 0.0, ..LinkParams::high_latency_link() };
        let (policy, matrix) = setup(&p, 4);
        let t = 4.0 * packet_duration(&p, 4) + wait_time(&p);
        for s in [-20.0, -1.0, 0.5, 3.0] {
            assert_relative_eq!(mgf_eval(4, s, &policy, &matrix).unwrap(), (s * t).exp(), max_relative = 1e-12);
        }
        let pmf = completion_pmf(4, &policy, &matrix, 1e-10).unwrap();
        assert_eq!(pmf.atoms.len(), 1);
        assert_relative_eq!(pmf.atoms[0].t, t, max_relative = 1e-14);
        assert_eq!(pmf.atoms[0].p, 1.0);
    }

    #[test]
    fn single_state_geometric() {
        let p = reference(0.0);
        let policy = Policy::with_counts(&p, vec![1]).unwrap();
        let matrix = TransitionMatrix::for_policy(&p, &policy).unwrap();
        let t1 = policy.round_time(1);
        for s in [-30.0, -2.0, 0.0] {
            let closed = 0.8 * (s * t1).exp() / (1.0 - 0.2 * (s * t1).exp());
            assert_relative_eq!(mgf_eval(1, s, &policy, &matrix).unwrap(), closed, max_relative = 1e-13);
            let direct = mgf_direct_enum(1, s, &policy, &matrix, 1e-13).unwrap();
            assert!((direct - closed).abs() < 1e-12);
        }
        let pmf = completion_pmf(1, &policy, &matrix, 1e-12).unwrap();
        for (k, atom) in pmf.atoms.iter().enumerate() {
            assert_relative_eq!(atom.t, (k + 1) as f64 * t1, max_relative = 1e-13);
            assert_relative_eq!(atom.p, 0.8 * 0.2f64.powi(k as i32), max_relative = 1e-12);
        }
        assert_relative_eq!(mean_service_time(1, &policy, &matrix).unwrap(), t1 / 0.8, max_relative = 1e-14);
    }

    #[test]
    fn recursion_matches_enumeration() {
        for pe_ack in [0.0, 0.2] {
            let (policy, matrix) = setup(&reference(pe_ack), 4);
            for n in 1..=4 {
                for s in [-50.0, -10.0, -1.0, 0.0] {
                    let rec = mgf_eval(n, s, &policy, &matrix).unwrap();
                    let direct = mgf_direct_enum(n, s, &policy, &matrix, 1e-12).unwrap();
                    assert!((rec - direct).abs() < 1e-9, "n={n} s={s}: {rec} vs {direct}");
                }
            }
        }
    }

    #[test]
    fn divergence_detected() {
        let (policy, matrix) = setup(&reference(0.2), 3);
        // P_33 * exp(s T^3) >= 1 for large positive s
        match mgf_eval(3, 1e3, &policy, &matrix) {
            Err(Error::Divergent { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mean_matches_policy_cache() {
        let (policy, matrix) = setup(&reference(0.2), 5);
        for j in 1..=5 {
            assert_eq!(mean_service_time(j, &policy, &matrix).unwrap(), policy.expected_time(j));
        }
    }

    #[test]
    fn finite_difference_mean() {
        let (policy, matrix) = setup(&reference(0.2), 5);
        for n in 1..=5 {
            let mean = mean_service_time(n, &policy, &matrix).unwrap();
            let h = 1e-6 / mean;
            let d =
                (mgf_eval(n, h, &policy, &matrix).unwrap() - mgf_eval(n, -h, &policy, &matrix).unwrap()) / (2.0 * h);
            assert_relative_eq!(d, mean, max_relative = 1e-6);
        }
    }

    #[test]
    fn energy_mgf() {
        let p = reference(0.2);
        let (policy, matrix) = setup(&p, 3);
        for s in [-5.0, -0.5, 0.0] {
            assert_eq!(energy_mgf_eval(3, s, &policy, &matrix, &p).unwrap(), mgf_eval(3, s, &policy, &matrix).unwrap());
        }
        let hot = LinkParams { tx_power: 2.0, rx_power: 1e-300, ..p.clone() };
        let costs = energy_costs(&policy, &hot).unwrap();
        assert_relative_eq!(energy_mgf_eval(2, 0.0, &policy, &matrix, &hot).unwrap(), 1.0, max_relative = 1e-14);
        for s in [-40.0, -3.0] {
            let rec = energy_mgf_eval(2, s, &policy, &matrix, &hot).unwrap();
            let direct = direct_enum_with_costs(2, s, &costs, &matrix, 1e-12).unwrap();
            assert!((rec - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn pmf_mass_and_transform() {
        let (policy, matrix) = setup(&reference(0.2), 5);
        let tol = 1e-10;
        let pmf = completion_pmf(5, &policy, &matrix, tol).unwrap();
        assert!(pmf.truncated_mass <= tol);
        assert!((pmf.total_mass() + pmf.truncated_mass - 1.0).abs() < 1e-12);
        assert!(pmf.atoms.windows(2).all(|w| w[0].t < w[1].t));
        for s in [-50.0, -5.0, -0.1, 0.0] {
            let exact = mgf_eval(5, s, &policy, &matrix).unwrap();
            let approx = pmf.transform(s);
            assert!(approx <= exact + 1e-12);
            assert!(exact - approx <= tol + 1e-12);
        }
    }

    #[test]
    fn pmf_node_cap() {
        let (policy, matrix) = setup(&reference(0.2), 5);
        assert!(matches!(
            completion_pmf_with_cap(5, &policy, &matrix, 1e-10, 10),
            Err(Error::ToleranceNotReached { .. })
        ));
    }

    #[test]
    fn enumeration_state_limit() {
        let (policy, matrix) = setup(&reference(0.2), 5);
        assert!(mgf_direct_enum(5, -1.0, &policy, &matrix, 1e-12).is_err());
        assert!(mgf_direct_enum(2, 1.0, &policy, &matrix, 1e-12).is_err());
    }
}
