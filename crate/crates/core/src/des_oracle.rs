//! Monte Carlo discrete-event simulation of the buffered RLNC-TDD link:
//! Poisson arrivals into a FIFO buffer of `B` waiting slots, bulk service
//! with per-packet erasures and ACK erasures.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded from the
//! 64-bit run seed, one stream per run.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bulk_queue::{QueueConfig, ServiceCatalog};
use crate::channel_model::LinkParams;
use crate::error::{Error, Result};
use crate::rlnc_chain::Policy;

/// Number of batches used for batch-means standard errors.
pub const SE_BATCHES: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    Completions(u64),
    Seconds(f64),
}

/// What happens to receiver progress when an ACK is lost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AckMode {
    /// The round is discarded; the transmitter repeats from the same state.
    #[default]
    ResetOnLoss,
    /// Receiver keeps the packets it got; the transmitter learns the true
    /// state at the next delivered ACK.
    ReceiverPersists,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub queue: QueueConfig,
    pub link: LinkParams,
    /// One policy per batch size in `m..=K`.
    pub policies: Vec<Policy>,
    pub seed: u64,
    pub horizon: Horizon,
    pub warmup: f64,
    pub initial_queue: usize,
    pub ack_mode: AckMode,
}

impl SimConfig {
    pub fn from_catalog(
        queue: QueueConfig,
        link: LinkParams,
        catalog: &ServiceCatalog,
        seed: u64,
        horizon: Horizon,
    ) -> Result<Self> {
        let policies = (queue.m..=queue.k_max)
            .map(|j| {
                catalog
                    .get(j)
                    .map(|s| s.policy.clone())
                    .ok_or_else(|| Error::InvalidParameter(format!("catalog lacks batch size {j}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SimConfig {
            queue,
            link,
            policies,
            seed,
            horizon,
            warmup: 0.1,
            initial_queue: 0,
            ack_mode: AckMode::ResetOnLoss,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.queue.validate()?;
        self.link.validate()?;
        match self.horizon {
            Horizon::Completions(0) => return Err(Error::InvalidParameter("horizon must be positive".into())),
            Horizon::Seconds(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::InvalidParameter("horizon must be positive".into()))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::InvalidParameter(format!("warmup {} outside [0, 1)", self.warmup)));
        }
        if self.initial_queue > self.queue.capacity {
            return Err(Error::InvalidParameter("initial queue exceeds capacity".into()));
        }
        for j in self.queue.m..=self.queue.k_max {
            if self.policy(j).is_none() {
                return Err(Error::InvalidParameter(format!("no policy for batch size {j}")));
            }
        }
        Ok(())
    }

    fn policy(&self, batch: usize) -> Option<&Policy> {
        self.policies.iter().find(|p| p.batch_size == batch)
    }
}

/// Point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    /// Batch-means estimate over `SE_BATCHES` contiguous batches (fewer if
    /// there are fewer samples).
    pub fn batch_means(samples: &[f64]) -> Self {
        Self::ratio_batch_means(samples, None)
    }

    /// Ratio estimator `sum x / sum w` with batch-means error.
    fn ratio_batch_means(values: &[f64], weights: Option<&[f64]>) -> Self {
        let n = values.len();
        if n == 0 {
            return Estimate { mean: f64::NAN, std_err: f64::NAN };
        }
        let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
        let total_w: f64 = (0..n).map(weight).sum();
        let mean = values.iter().sum::<f64>() / total_w;
        let batches = SE_BATCHES.min(n);
        if batches < 2 {
            return Estimate { mean, std_err: f64::NAN };
        }
        let size = n / batches;
        let means: Vec<f64> = (0..batches)
            .map(|b| {
                let range = b * size..if b + 1 == batches { n } else { (b + 1) * size };
                let w: f64 = range.clone().map(weight).sum();
                values[range].iter().sum::<f64>() / w
            })
            .collect();
        let avg = means.iter().sum::<f64>() / batches as f64;
        let var = means.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (batches - 1) as f64;
        Estimate { mean, std_err: (var / batches as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub batch_size: usize,
    pub services: u64,
    pub mean_service_time: Estimate,
    /// `arrival_counts[k]` = services of this type that saw `k` arrivals.
    pub arrival_counts: Vec<u64>,
}

impl TypeStats {
    pub fn arrival_frequency(&self, k: usize) -> f64 {
        self.arrival_counts.get(k).copied().unwrap_or(0) as f64 / self.services as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub seed: u64,
    /// Queue length averaged over recorded completion epochs.
    pub embedded_mean_queue: Estimate,
    /// Queue length averaged over recorded simulated time.
    pub time_average_queue: Estimate,
    pub mean_batch: Estimate,
    /// Completion-epoch queue-length counts, index `0..=B`.
    pub embedded_histogram: Vec<u64>,
    pub per_type: Vec<TypeStats>,
    pub completions: u64,
    pub recorded_epochs: u64,
    pub sim_time: f64,
    pub initial_queue: u64,
    pub arrivals: u64,
    pub served: u64,
    pub dropped: u64,
    pub final_queue: u64,
}

struct ServiceDraw {
    duration: f64,
    visits: Vec<u32>,
}

fn serve_batch(policy: &Policy, link: &LinkParams, mode: AckMode, rng: &mut ChaCha8Rng) -> ServiceDraw {
    let batch = policy.batch_size;
    let mut visits = vec![0u32; batch];
    let mut duration = 0.0;
    let mut tx_state = batch;
    let mut need = batch;
    while tx_state > 0 {
        visits[tx_state - 1] += 1;
        duration += policy.round_time(tx_state);
        let sent = policy.n(tx_state);
        let received = (0..sent).filter(|_| !rng.random_bool(link.pe)).count();
        let ack_delivered = !rng.random_bool(link.pe_ack);
        match mode {
            AckMode::ResetOnLoss => {
                if ack_delivered {
                    tx_state -= received.min(tx_state);
                }
            }
            AckMode::ReceiverPersists => {
                need -= received.min(need);
                if ack_delivered {
                    tx_state = need;
                }
            }
        }
    }
    ServiceDraw { duration, visits }
}

struct Arrivals {
    next: f64,
    gap: Option<Exp<f64>>,
}

impl Arrivals {
    fn new(lambda: f64, rng: &mut ChaCha8Rng) -> Self {
        let gap = (lambda > 0.0).then(|| Exp::new(lambda).expect("positive rate"));
        let next = gap.as_ref().map_or(f64::INFINITY, |g| g.sample(rng));
        Arrivals { next, gap }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng) {
        if let Some(g) = &self.gap {
            self.next += g.sample(rng);
        }
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let q_cfg = cfg.queue;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut arrivals = Arrivals::new(q_cfg.lambda_rate, &mut rng);

    let (warm_completions, warm_time, end_time, max_completions) = match cfg.horizon {
        Horizon::Completions(n) => ((cfg.warmup * n as f64).floor() as u64, 0.0, f64::INFINITY, n),
        Horizon::Seconds(t) => (0, cfg.warmup * t, t, u64::MAX),
    };

    let types = q_cfg.k_max - q_cfg.m + 1;
    let mut service_samples: Vec<Vec<f64>> = vec![Vec::new(); types];
    let mut arrival_counts: Vec<Vec<u64>> = vec![Vec::new(); types];
    let mut epoch_queue = Vec::new();
    let mut epoch_batch = Vec::new();
    let mut interval_area = Vec::new();
    let mut interval_time = Vec::new();
    let mut histogram = vec![0u64; q_cfg.capacity + 1];

    let mut t = 0.0;
    let mut q = cfg.initial_queue;
    let (mut n_arrivals, mut served, mut dropped, mut completions) = (0u64, 0u64, 0u64, 0u64);
    let mut area = 0.0;
    let mut mark = 0.0;
    let recording = |t: f64, completions: u64| completions > warm_completions && t >= warm_time;

    'run: loop {
        while q < q_cfg.m {
            if arrivals.next > end_time || arrivals.next.is_infinite() {
                if end_time.is_finite() {
                    t = end_time;
                }
                break 'run;
            }
            area += q as f64 * (arrivals.next - t);
            t = arrivals.next;
            q += 1;
            n_arrivals += 1;
            arrivals.advance(&mut rng);
        }
        let batch = q.min(q_cfg.k_max);
        q -= batch;
        let policy = cfg.policy(batch).expect("validated policy coverage");
        let draw = serve_batch(policy, &cfg.link, cfg.ack_mode, &mut rng);
        let end = t + draw.duration;
        let mut seen = 0usize;
        while arrivals.next <= end {
            area += q as f64 * (arrivals.next - t);
            t = arrivals.next;
            n_arrivals += 1;
            seen += 1;
            if q < q_cfg.capacity {
                q += 1;
            } else {
                dropped += 1;
            }
            arrivals.advance(&mut rng);
        }
        area += q as f64 * (end - t);
        t = end;
        served += batch as u64;
        completions += 1;

        if recording(t, completions) {
            let ty = batch - q_cfg.m;
            service_samples[ty].push(draw.duration);
            let counts = &mut arrival_counts[ty];
            if counts.len() <= seen {
                counts.resize(seen + 1, 0);
            }
            counts[seen] += 1;
            if epoch_queue.is_empty() {
                area = 0.0;
                mark = t;
            } else {
                interval_area.push(area);
                interval_time.push(t - mark);
                area = 0.0;
                mark = t;
            }
            epoch_queue.push(q as f64);
            epoch_batch.push(q_cfg.batch_for(q) as f64);
            histogram[q] += 1;
        }
        if completions >= max_completions || t >= end_time {
            break;
        }
    }

    let per_type = (0..types)
        .map(|ty| TypeStats {
            batch_size: q_cfg.m + ty,
            services: service_samples[ty].len() as u64,
            mean_service_time: Estimate::batch_means(&service_samples[ty]),
            arrival_counts: std::mem::take(&mut arrival_counts[ty]),
        })
        .collect();

    Ok(SimReport {
        seed: cfg.seed,
        embedded_mean_queue: Estimate::batch_means(&epoch_queue),
        time_average_queue: Estimate::ratio_batch_means(&interval_area, Some(&interval_time)),
        mean_batch: Estimate::batch_means(&epoch_batch),
        embedded_histogram: histogram,
        per_type,
        completions,
        recorded_epochs: epoch_queue.len() as u64,
        sim_time: t,
        initial_queue: cfg.initial_queue as u64,
        arrivals: n_arrivals,
        served,
        dropped,
        final_queue: q as u64,
    })
}

/// Independent runs, one per seed, returned in seed order.
pub fn simulate_replications(cfg: &SimConfig, seeds: &[u64]) -> Result<Vec<SimReport>> {
    seeds.par_iter().map(|&seed| simulate(&SimConfig { seed, ..cfg.clone() })).collect()
}

/// Isolated services of one batch size with Poisson arrivals counted during
/// each: no buffer, no waiting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSample {
    pub batch_size: usize,
    pub services: u64,
    pub mean_time: Estimate,
    pub arrival_counts: Vec<u64>,
    /// `(completion time, count)` sorted by time; times are the canonical
    /// visit-count combinations.
    pub durations: Vec<(f64, u64)>,
}

impl ServiceSample {
    pub fn arrival_frequency(&self, k: usize) -> f64 {
        self.arrival_counts.get(k).copied().unwrap_or(0) as f64 / self.services as f64
    }
}

pub fn sample_services(
    policy: &Policy,
    link: &LinkParams,
    lambda_rate: f64,
    services: u64,
    seed: u64,
) -> Result<ServiceSample> {
    link.validate()?;
    if services == 0 {
        return Err(Error::InvalidParameter("need at least one service".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = (lambda_rate > 0.0).then(|| Exp::new(lambda_rate).expect("positive rate"));
    let mut times = Vec::with_capacity(services as usize);
    let mut counts: Vec<u64> = Vec::new();
    let mut by_visits: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
    for _ in 0..services {
        let draw = serve_batch(policy, link, AckMode::ResetOnLoss, &mut rng);
        let mut seen = 0usize;
        if let Some(g) = &gap {
            let mut clock = g.sample(&mut rng);
            while clock <= draw.duration {
                seen += 1;
                clock += g.sample(&mut rng);
            }
        }
        if counts.len() <= seen {
            counts.resize(seen + 1, 0);
        }
        counts[seen] += 1;
        times.push(draw.duration);
        *by_visits.entry(draw.visits).or_insert(0) += 1;
    }
    let mut durations: Vec<(f64, u64)> = by_visits
        .into_iter()
        .map(|(v, c)| {
            let t = v.iter().enumerate().map(|(i, &m)| m as f64 * policy.round_time(i + 1)).sum();
            (t, c)
        })
        .collect();
    durations.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ServiceSample {
        batch_size: policy.batch_size,
        services,
        mean_time: Estimate::batch_means(&times),
        arrival_counts: counts,
        durations,
    })
}
