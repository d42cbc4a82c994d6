//! Physical and protocol constants of the TDD erasure link, plus the
//! deterministic per-round timing and energy formulas.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical/protocol constants of a time-division-duplex packet erasure link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Erasure probability of a coded data packet.
    pub pe: f64,
    /// Erasure probability of an ACK packet.
    pub pe_ack: f64,
    /// Link data rate in bits/second.
    pub rate_bps: f64,
    /// Data bits per packet.
    pub payload_bits: u64,
    pub header_bits: u64,
    /// Bits per coding coefficient (log2 of the field size).
    pub coeff_bits: u64,
    pub ack_bits: u64,
    /// One-way propagation time in seconds.
    pub prop_delay_s: f64,
    pub tx_power: f64,
    pub rx_power: f64,
    /// Replaces the default waiting-window formula when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_wait_s: Option<f64>,
}

impl LinkParams {
    /// A 1.5 Mbps link with 12.5 ms propagation delay, 20% data-packet
    /// erasures, 10 kbit payloads, 80-bit headers, 20-bit coefficients and
    /// 100-bit ACKs. ACK erasure defaults to the data erasure probability.
    pub fn high_latency_link() -> Self {
        LinkParams {
            pe: 0.2,
            pe_ack: 0.2,
            rate_bps: 1.5e6,
            payload_bits: 10_000,
            header_bits: 80,
            coeff_bits: 20,
            ack_bits: 100,
            prop_delay_s: 12.5e-3,
            tx_power: 1.0,
            rx_power: 1.0,
            t_wait_s: None,
        }
    }

    pub fn with_pe_ack(mut self, pe_ack: f64) -> Self {
        self.pe_ack = pe_ack;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must lie in [0, 1)")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be positive")))
            }
        };
        prob("pe", self.pe)?;
        prob("pe_ack", self.pe_ack)?;
        positive("rate_bps", self.rate_bps)?;
        positive("payload_bits", self.payload_bits as f64)?;
        positive("coeff_bits", self.coeff_bits as f64)?;
        positive("ack_bits", self.ack_bits as f64)?;
        positive("tx_power", self.tx_power)?;
        positive("rx_power", self.rx_power)?;
        if !(self.prop_delay_s >= 0.0 && self.prop_delay_s.is_finite()) {
            return Err(Error::InvalidParameter(format!("prop_delay_s = {} must be non-negative", self.prop_delay_s)));
        }
        if let Some(tw) = self.t_wait_s {
            positive("t_wait_s", tw)?;
        }
        Ok(())
    }

    pub fn timing(&self, batch_size: usize) -> Result<TimingDerived> {
        if batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        Ok(TimingDerived { batch_size, t_packet_s: packet_duration(self, batch_size), t_wait_s: wait_time(self) })
    }
}

/// Coded-packet and waiting-window durations for one batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingDerived {
    pub batch_size: usize,
    pub t_packet_s: f64,
    pub t_wait_s: f64,
}

/// Duration of one coded packet carrying `batch_size` coefficients:
/// `(h + n + g*M) / R`.
pub fn packet_duration(params: &LinkParams, batch_size: usize) -> f64 {
    let bits = params.header_bits + params.payload_bits + params.coeff_bits * batch_size as u64;
    bits as f64 / params.rate_bps
}

/// Waiting window after a burst: round-trip propagation plus the ACK
/// transmission time, unless overridden by `t_wait_s`.
pub fn wait_time(params: &LinkParams) -> f64 {
    params.t_wait_s.unwrap_or(2.0 * params.prop_delay_s + params.ack_bits as f64 / params.rate_bps)
}

fn check_round(batch_size: usize, state: usize, n_packets: u32) -> Result<()> {
    if state == 0 || state > batch_size {
        return Err(Error::InvalidParameter(format!("state {state} outside 1..={batch_size}")));
    }
    if n_packets == 0 {
        return Err(Error::InvalidParameter("N_i must be >= 1".into()));
    }
    Ok(())
}

/// `T^i = N_i * T_p(M) + T_w`.
pub fn round_duration(params: &LinkParams, batch_size: usize, state: usize, n_packets: u32) -> Result<f64> {
    check_round(batch_size, state, n_packets)?;
    Ok(n_packets as f64 * packet_duration(params, batch_size) + wait_time(params))
}

/// `E^i = tx_power * N_i * T_p(M) + rx_power * T_w`.
pub fn round_energy(params: &LinkParams, batch_size: usize, state: usize, n_packets: u32) -> Result<f64> {
    check_round(batch_size, state, n_packets)?;
    Ok(params.tx_power * n_packets as f64 * packet_duration(params, batch_size) + params.rx_power * wait_time(params))
}
