//! `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys are case-sensitive; any
//! key outside the known set is an error.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel_model::LinkParams;
use crate::error::{Error, Result};

pub const DEFAULT_PMF_TOL: f64 = 1e-10;
pub const DEFAULT_SEARCH_WINDOW: u32 = 50;

const LINK_KEYS: &[&str] = &[
    "pe",
    "pe_ack",
    "rate_bps",
    "payload_bits",
    "header_bits",
    "coeff_bits",
    "ack_bits",
    "prop_delay_s",
    "tx_power",
    "rx_power",
    "t_wait_s",
];
const RUN_KEYS: &[&str] = &["lambda", "m", "K", "B", "pmf_tol", "search_window"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub link: LinkParams,
    pub lambda: Option<f64>,
    pub m: Option<usize>,
    #[serde(rename = "K")]
    pub k_max: Option<usize>,
    #[serde(rename = "B")]
    pub capacity: Option<usize>,
    pub pmf_tol: f64,
    pub search_window: u32,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut values: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
            line: line_no,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !LINK_KEYS.contains(&key) && !RUN_KEYS.contains(&key) {
            return Err(Error::UnknownKey { line: line_no, key: key.to_string() });
        }
        if value.is_empty() {
            return Err(Error::ConfigSyntax { line: line_no, message: format!("empty value for `{key}`") });
        }
        if values.insert(key, (line_no, value)).is_some() {
            return Err(Error::ConfigSyntax { line: line_no, message: format!("duplicate key `{key}`") });
        }
    }
    let fields = Fields(values);
    let pe: f64 = fields.required("pe")?;
    let link = LinkParams {
        pe,
        pe_ack: fields.optional("pe_ack")?.unwrap_or(pe),
        rate_bps: fields.required("rate_bps")?,
        payload_bits: fields.required("payload_bits")?,
        header_bits: fields.required("header_bits")?,
        coeff_bits: fields.required("coeff_bits")?,
        ack_bits: fields.required("ack_bits")?,
        prop_delay_s: fields.required("prop_delay_s")?,
        tx_power: fields.optional("tx_power")?.unwrap_or(1.0),
        rx_power: fields.optional("rx_power")?.unwrap_or(1.0),
        t_wait_s: fields.optional("t_wait_s")?,
    };
    link.validate()?;
    Ok(RunConfig {
        link,
        lambda: fields.optional("lambda")?,
        m: fields.optional("m")?,
        k_max: fields.optional("K")?,
        capacity: fields.optional("B")?,
        pmf_tol: fields.optional("pmf_tol")?.unwrap_or(DEFAULT_PMF_TOL),
        search_window: fields.optional("search_window")?.unwrap_or(DEFAULT_SEARCH_WINDOW),
    })
}

struct Fields<'a>(BTreeMap<&'a str, (usize, &'a str)>);

impl Fields<'_> {
    fn optional<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(&(line, raw)) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::ConfigSyntax { line, message: format!("cannot parse `{raw}` for `{key}`") }),
        }
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.optional(key)?.ok_or_else(|| Error::MissingKey(key.to_string()))
    }
}

/// Serializes link parameters back into the file format.
pub fn render_link(link: &LinkParams) -> String {
    let mut out = format!(
        "pe = {}\npe_ack = {}\nrate_bps = {}\npayload_bits = {}\nheader_bits = {}\ncoeff_bits = {}\n\
         ack_bits = {}\nprop_delay_s = {}\ntx_power = {}\nrx_power = {}\n",
        link.pe,
        link.pe_ack,
        link.rate_bps,
        link.payload_bits,
        link.header_bits,
        link.coeff_bits,
        link.ack_bits,
        link.prop_delay_s,
        link.tx_power,
        link.rx_power
    );
    if let Some(tw) = link.t_wait_s {
        out.push_str(&format!("t_wait_s = {tw}\n"));
    }
    out
}
