//! Analytical queueing model of random linear network coding over a
//! time-division-duplex packet erasure link with Poisson arrivals.
//!
//! The service of a batch of `M` packets is an absorbing Markov chain over
//! the receiver's missing degrees of freedom ([`rlnc_chain`]). Its completion
//! time has a closed-form moment generating function ([`service_mgf`]), from
//! which the number of arrivals during a service follows
//! ([`arrival_counts`]). Those feed the embedded chain of an
//! `M/G^(m,K)/1` bulk-service queue with a finite waiting room
//! ([`bulk_queue`]). [`des_oracle`] simulates the whole system to validate
//! the analytic pipeline.

pub mod arrival_counts;
pub mod bulk_queue;
pub mod channel_model;
pub mod cli;
pub mod config;
pub mod des_oracle;
pub mod error;
pub mod rlnc_chain;
pub mod service_mgf;

pub use arrival_counts::{arrival_gf_eval, arrival_pmf, ArrivalPmf};
pub use bulk_queue::{
    build_embedded_matrix, mean_batch_size, mean_queue_size, solve_queue, stability_check, stationary_distribution,
    sweep, QueueConfig, QueueSolution, ServiceCatalog, SweepReport, SweepSpec,
};
pub use channel_model::{packet_duration, round_duration, round_energy, wait_time, LinkParams, TimingDerived};
pub use des_oracle::{simulate, AckMode, Horizon, SimConfig, SimReport};
pub use error::{Error, Result};
pub use rlnc_chain::{expected_completion_times, optimize_policy, transition_row, Policy, TransitionMatrix};
pub use service_mgf::{
    completion_pmf, energy_mgf_eval, mean_service_time, mgf_direct_enum, mgf_eval, BatchService, CompletionPmf,
};
