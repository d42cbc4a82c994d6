//! Finite-capacity embedded chain of the `M/G^(m,K)/1` bulk-service queue:
//! transition matrix, stationary distribution, mean queue and batch size,
//! the infinite-capacity stability test, and `(lambda, m, K)` sweeps.

use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arrival_counts::{arrival_pmf, ArrivalPmf};
use crate::channel_model::LinkParams;
use crate::error::{Error, Result};
use crate::service_mgf::BatchService;

/// Relative slack under which two sweep cells count as joint minimizers.
pub const ARGMIN_TIE_TOL: f64 = 1e-3;
/// Bound on `|pi P - pi|_inf` accepted from the linear solve.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    pub m: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    /// Waiting-room size `B`, excluding the batch in service.
    #[serde(rename = "B")]
    pub capacity: usize,
    #[serde(rename = "lambda")]
    pub lambda_rate: f64,
}

impl QueueConfig {
    pub fn new(m: usize, k_max: usize, capacity: usize, lambda_rate: f64) -> Result<Self> {
        let cfg = QueueConfig { m, k_max, capacity, lambda_rate };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.m && self.m <= self.k_max && self.k_max <= self.capacity) {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= m <= K <= B, got m={} K={} B={}",
                self.m, self.k_max, self.capacity
            )));
        }
        if !(self.lambda_rate >= 0.0 && self.lambda_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {} must be >= 0", self.lambda_rate)));
        }
        Ok(())
    }

    /// Batch taken when `waiting` packets are queued at a completion epoch.
    pub fn batch_for(&self, waiting: usize) -> usize {
        waiting.clamp(self.m, self.k_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueSolution {
    pub config: QueueConfig,
    pub pi: Vec<f64>,
    pub mean_queue: f64,
    pub mean_batch: f64,
    pub stable_infinite: bool,
    /// Mean service time of a full batch of `K`.
    pub mean_service_k: f64,
    pub residual: f64,
    pub input_error_bound: f64,
}

/// Services for batch sizes `1..=max_batch`, shared across queue solves.
#[derive(Debug, Clone)]
pub struct ServiceCatalog {
    services: Vec<BatchService>,
}

impl ServiceCatalog {
    pub fn build(params: &LinkParams, max_batch: usize, search_window: u32, pmf_tol: f64) -> Result<Self> {
        params.validate()?;
        let services = (1..=max_batch)
            .into_par_iter()
            .map(|m| BatchService::optimized(params, m, search_window, pmf_tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(ServiceCatalog { services })
    }

    pub fn max_batch(&self) -> usize {
        self.services.len()
    }

    pub fn get(&self, batch_size: usize) -> Option<&BatchService> {
        batch_size.checked_sub(1).and_then(|i| self.services.get(i))
    }

    fn require(&self, batch_size: usize) -> Result<&BatchService> {
        self.get(batch_size).ok_or_else(|| {
            Error::InvalidParameter(format!("no service for batch size {batch_size} (max {})", self.max_batch()))
        })
    }

    /// Arrival PMFs for service types `m..=K` with `kmax = B`.
    pub fn arrivals(&self, cfg: &QueueConfig) -> Result<Vec<ArrivalPmf>> {
        (cfg.m..=cfg.k_max).map(|j| arrival_pmf(j, cfg.lambda_rate, cfg.capacity, &self.require(j)?.pmf)).collect()
    }
}

/// `(B+1) x (B+1)` transition matrix of the queue length at completion
/// epochs. `arrivals[j - m]` must hold service type `j` for `j = m..=K`.
pub fn build_embedded_matrix(cfg: &QueueConfig, arrivals: &[ArrivalPmf]) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let b = cfg.capacity;
    if arrivals.len() != cfg.k_max - cfg.m + 1 {
        return Err(Error::InvalidParameter(format!(
            "expected {} arrival PMFs, got {}",
            cfg.k_max - cfg.m + 1,
            arrivals.len()
        )));
    }
    for (offset, arr) in arrivals.iter().enumerate() {
        if arr.service_type != cfg.m + offset {
            return Err(Error::InvalidParameter(format!(
                "arrival PMF {offset} is for type {}, expected {}",
                arr.service_type,
                cfg.m + offset
            )));
        }
        if arr.kmax() < b {
            return Err(Error::InvalidParameter(format!(
                "arrival PMF for type {} has kmax {} < B = {b}",
                arr.service_type,
                arr.kmax()
            )));
        }
    }
    let of_type = |j: usize| &arrivals[j - cfg.m].a;
    let mut p = DMatrix::zeros(b + 1, b + 1);
    for i in 0..=b {
        let (a, leftover) =
            if i <= cfg.k_max { (of_type(cfg.batch_for(i)), 0) } else { (of_type(cfg.k_max), i - cfg.k_max) };
        let mut row_sum = 0.0;
        for col in leftover..b {
            p[(i, col)] = a[col - leftover];
            row_sum += a[col - leftover];
        }
        // R(B - 1 - leftover, type)
        p[(i, b)] = (1.0 - row_sum).max(0.0);
    }
    Ok(p)
}

fn check_row_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() != p.ncols() || p.nrows() == 0 {
        return Err(Error::InvalidParameter(format!("matrix is {}x{}", p.nrows(), p.ncols())));
    }
    for (i, row) in p.row_iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || row.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidParameter(format!("row {i} is not a probability vector (sum {sum})")));
        }
    }
    Ok(())
}

/// `|pi P - pi|_inf`.
pub fn stationary_residual(p: &DMatrix<f64>, pi: &[f64]) -> f64 {
    let v = DVector::from_column_slice(pi);
    let moved = p.transpose() * &v;
    (moved - v).amax()
}

/// Left stationary vector `pi P = pi`, `sum pi = 1`.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    solve_stationary(p).map(|(pi, _)| pi)
}

/// Also returns the mass removed by clamping negative round-off.
fn solve_stationary(p: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    check_row_stochastic(p)?;
    let n = p.nrows();
    let mut system = p.transpose() - DMatrix::identity(n, n);
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let solution = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("stationary system has no unique solution (reducible chain?)".into()))?;
    let mut pi: Vec<f64> = solution.iter().copied().collect();
    if pi.iter().any(|x| !x.is_finite()) {
        return Err(Error::Singular("stationary solve produced non-finite values".into()));
    }
    let negative: f64 = pi.iter().filter(|&&x| x < 0.0).map(|x| -x).sum();
    pi.iter_mut().for_each(|x| *x = x.max(0.0));
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= total);
    let delta = negative + (total - 1.0).abs();
    let residual = stationary_residual(p, &pi);
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(Error::ToleranceNotReached {
            tol: STATIONARY_RESIDUAL_TOL,
            detail: format!("stationary residual {residual:e}"),
        });
    }
    Ok((pi, delta))
}

/// `E[Q] = sum i pi_i`.
pub fn mean_queue_size(pi: &[f64]) -> f64 {
    pi.iter().enumerate().map(|(i, p)| i as f64 * p).sum()
}

/// `E[Z_(m,K)] = m sum_{i<=m} pi_i + sum_{m<i<K} i pi_i + K (1 - sum_{i<K} pi_i)`;
/// exactly `m` when `m = K`.
pub fn mean_batch_size(pi: &[f64], cfg: &QueueConfig) -> f64 {
    let (m, k) = (cfg.m, cfg.k_max);
    if m == k {
        return m as f64;
    }
    let low: f64 = pi.iter().take(m + 1).sum();
    let mid: f64 = pi.iter().enumerate().take(k).skip(m + 1).map(|(i, p)| i as f64 * p).sum();
    let below_k: f64 = pi.iter().take(k).sum();
    m as f64 * low + mid + k as f64 * (1.0 - below_k)
}

/// `lambda < K mu_K`.
pub fn stability_check(cfg: &QueueConfig, mu_k: f64) -> bool {
    cfg.lambda_rate < cfg.k_max as f64 * mu_k
}

/// Full pipeline for one configuration.
pub fn solve_queue(cfg: &QueueConfig, catalog: &ServiceCatalog) -> Result<QueueSolution> {
    cfg.validate()?;
    let arrivals = catalog.arrivals(cfg)?;
    let p = build_embedded_matrix(cfg, &arrivals)?;
    let (pi, renorm) = solve_stationary(&p)?;
    let residual = stationary_residual(&p, &pi);
    let mean_service_k = catalog.require(cfg.k_max)?.mean_service_time();
    let input_bound = arrivals.iter().map(|a| a.tail_bound).fold(0.0, f64::max);
    Ok(QueueSolution {
        config: *cfg,
        mean_queue: mean_queue_size(&pi),
        mean_batch: mean_batch_size(&pi, cfg),
        stable_infinite: stability_check(cfg, 1.0 / mean_service_k),
        mean_service_k,
        residual,
        input_error_bound: input_bound + renorm,
        pi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub lambdas: Vec<f64>,
    pub m_range: RangeInclusive<usize>,
    pub k_range: RangeInclusive<usize>,
    pub capacity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub m: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    #[serde(rename = "B")]
    pub capacity: usize,
    pub outcome: std::result::Result<QueueSolution, String>,
}

/// Minimizers of `E[Q]` for one arrival rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argmin {
    pub lambda: f64,
    /// `(m, K, E[Q])` of the smallest cell.
    pub best: (usize, usize, f64),
    /// Every `(m, K)` within [`ARGMIN_TIE_TOL`] of the minimum.
    pub ties: Vec<(usize, usize)>,
    /// Same restricted to fixed batch sizes `m = K`, if any were swept.
    pub fixed_best: Option<(usize, usize, f64)>,
    pub fixed_ties: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    pub argmin: Vec<Argmin>,
}

impl SweepReport {
    pub fn cell(&self, lambda: f64, m: usize, k: usize) -> Option<&QueueSolution> {
        self.cells.iter().find(|c| c.lambda == lambda && c.m == m && c.k_max == k).and_then(|c| c.outcome.as_ref().ok())
    }
}

pub fn sweep(params: &LinkParams, spec: &SweepSpec, search_window: u32, pmf_tol: f64) -> Result<SweepReport> {
    let max_k = *spec.k_range.end();
    let catalog = ServiceCatalog::build(params, max_k, search_window, pmf_tol)?;
    sweep_with_catalog(spec, &catalog)
}

pub fn sweep_with_catalog(spec: &SweepSpec, catalog: &ServiceCatalog) -> Result<SweepReport> {
    if spec.lambdas.is_empty() || spec.m_range.is_empty() || spec.k_range.is_empty() {
        return Err(Error::InvalidParameter("sweep ranges must be non-empty".into()));
    }
    let mut grid = Vec::new();
    for &lambda in &spec.lambdas {
        for m in spec.m_range.clone() {
            for k in spec.k_range.clone() {
                if m <= k && k <= spec.capacity {
                    grid.push((lambda, m, k));
                }
            }
        }
    }
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep contains no cell with m <= K <= B".into()));
    }
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(lambda, m, k)| {
            let outcome = QueueConfig::new(m, k, spec.capacity, lambda)
                .and_then(|cfg| solve_queue(&cfg, catalog))
                .map_err(|e| e.to_string());
            SweepCell { lambda, m, k_max: k, capacity: spec.capacity, outcome }
        })
        .collect();
    let argmin = spec.lambdas.iter().filter_map(|&l| argmin_for(&cells, l)).collect();
    Ok(SweepReport { cells, argmin })
}

type Minimizers = ((usize, usize, f64), Vec<(usize, usize)>);

fn minimizers<'a>(cells: impl Iterator<Item = &'a SweepCell> + Clone) -> Option<Minimizers> {
    let solved = cells.filter_map(|c| c.outcome.as_ref().ok().map(|s| (c.m, c.k_max, s.mean_queue)));
    let best = solved.clone().min_by(|a, b| a.2.total_cmp(&b.2))?;
    let ties = solved.filter(|c| c.2 <= best.2 * (1.0 + ARGMIN_TIE_TOL)).map(|c| (c.0, c.1)).collect();
    Some((best, ties))
}

fn argmin_for(cells: &[SweepCell], lambda: f64) -> Option<Argmin> {
    let of_lambda = cells.iter().filter(move |c| c.lambda == lambda);
    let (best, ties) = minimizers(of_lambda.clone())?;
    let fixed = minimizers(of_lambda.filter(|c| c.m == c.k_max));
    let (fixed_best, fixed_ties) = match fixed {
        Some((b, t)) => (Some(b), t),
        None => (None, Vec::new()),
    };
    Some(Argmin { lambda, best, ties, fixed_best, fixed_ties })
}
