//! Command-line front end: `policy`, `service-dist`, `arrivals`, `queue`,
//! `sweep` and `simulate`.

use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::arrival_counts::arrival_pmf;
use crate::bulk_queue::{
    solve_queue, sweep_with_catalog, QueueConfig, QueueSolution, ServiceCatalog, SweepReport, SweepSpec,
};
use crate::config::{load_config, RunConfig, DEFAULT_PMF_TOL, DEFAULT_SEARCH_WINDOW};
use crate::des_oracle::{simulate, AckMode, Horizon, SimConfig, SimReport};
use crate::error::{Error, Result};
use crate::rlnc_chain::{optimize_policy, TransitionMatrix};
use crate::service_mgf::completion_pmf;
use crate::LinkParams;

pub const CSV_SWEEP_HEADER: &str = "lambda,m,K,B,EQ,EZ,stable,err_bound";

#[derive(Debug, Parser)]
#[command(name = "rlnc-tdd", version, about = "Queueing analysis of RLNC over TDD erasure links")]
pub struct Cli {
    /// `key = value` parameter file; the built-in high-latency link is used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write output here (a `.manifest.json` is written beside it).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimized back-to-back counts N_1..N_M with round and completion times.
    Policy {
        #[arg(long = "M")]
        batch_size: usize,
    },
    /// Completion-time PMF for a batch of n packets.
    ServiceDist {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Probabilities of k arrivals during a type-j service.
    Arrivals {
        #[arg(long)]
        j: usize,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        kmax: Option<usize>,
    },
    /// Stationary distribution and metrics for one (lambda, m, K, B).
    Queue {
        #[command(flatten)]
        queue: QueueArgs,
        /// Exit with code 4 when lambda >= K mu_K.
        #[arg(long)]
        fail_unstable: bool,
    },
    /// Grid over lambda values and (m, K) ranges.
    Sweep {
        /// Comma-separated arrival rates.
        #[arg(long, value_delimiter = ',', required = true)]
        lambda: Vec<f64>,
        /// `a..b` or a single value.
        #[arg(long, value_parser = parse_range)]
        m: RangeInclusive<usize>,
        /// Maximum batch size, `a..b` or a single value.
        #[arg(long = "K", value_parser = parse_range)]
        k: RangeInclusive<usize>,
        /// Buffer size; defaults to `B` from the config.
        #[arg(long = "B")]
        capacity: Option<usize>,
    },
    /// Discrete-event simulation of the buffered link.
    Simulate {
        #[command(flatten)]
        queue: QueueArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Service completions to simulate, warm-up included.
        #[arg(long, default_value_t = 1_000_000)]
        completions: u64,
        /// Fraction of completions discarded before recording.
        #[arg(long, default_value_t = 0.1)]
        warmup: f64,
        /// Keep receiver progress across lost ACKs.
        #[arg(long)]
        strict_ack: bool,
        #[arg(long, default_value_t = 0)]
        initial_queue: usize,
    },
}

#[derive(Debug, Clone, Args)]
pub struct QueueArgs {
    /// Poisson arrival rate [packets/s].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Minimum batch size.
    #[arg(long)]
    pub m: Option<usize>,
    /// Maximum batch size.
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Buffer size.
    #[arg(long = "B")]
    pub capacity: Option<usize>,
}

pub fn parse_range(s: &str) -> std::result::Result<RangeInclusive<usize>, String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad range bound `{v}`: {e}"));
    let range = match s.split_once("..") {
        Some((a, b)) => parse(a)?..=parse(b.trim_start_matches('='))?,
        None => {
            let v = parse(s)?;
            v..=v
        }
    };
    if range.is_empty() {
        return Err(format!("empty range `{s}`"));
    }
    Ok(range)
}

/// Rounds to 12 significant digits.
pub fn sig12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                *v = json!(sig12(x));
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_json),
        Value::Object(map) => map.values_mut().for_each(round_json),
        _ => {}
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub version: String,
    pub outputs: Vec<String>,
}

struct Rendered {
    text: String,
    data: Value,
}

fn resolve_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig {
            link: LinkParams::high_latency_link(),
            lambda: None,
            m: None,
            k_max: None,
            capacity: None,
            pmf_tol: DEFAULT_PMF_TOL,
            search_window: DEFAULT_SEARCH_WINDOW,
        }),
    }
}

fn need<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file).ok_or_else(|| Error::InvalidParameter(format!("`{name}` must be given by flag or config")))
}

fn queue_config(args: &QueueArgs, cfg: &RunConfig) -> Result<QueueConfig> {
    QueueConfig::new(
        need(args.m, cfg.m, "m")?,
        need(args.k, cfg.k_max, "K")?,
        need(args.capacity, cfg.capacity, "B")?,
        need(args.lambda, cfg.lambda, "lambda")?,
    )
}

fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| sig12(*v).to_string()).collect::<Vec<_>>().join(",")
}

/// Runs one command, writing the primary output to `stdout` or `--out`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let cfg = resolve_config(cli.config.as_deref())?;
    let (name, rendered) = match &cli.command {
        Command::Policy { batch_size } => ("policy", cmd_policy(&cfg, *batch_size, cli.format)?),
        Command::ServiceDist { n, tol } => ("service-dist", cmd_service_dist(&cfg, *n, *tol, cli.format)?),
        Command::Arrivals { j, lambda, kmax } => ("arrivals", cmd_arrivals(&cfg, *j, *lambda, *kmax, cli.format)?),
        Command::Queue { queue, fail_unstable } => {
            let qc = queue_config(queue, &cfg)?;
            let catalog = ServiceCatalog::build(&cfg.link, qc.k_max, cfg.search_window, cfg.pmf_tol)?;
            let solution = solve_queue(&qc, &catalog)?;
            if *fail_unstable && !solution.stable_infinite {
                return Err(Error::Unstable {
                    lambda: qc.lambda_rate,
                    capacity: qc.k_max as f64 / solution.mean_service_k,
                });
            }
            ("queue", render_queue(&solution, cli.format))
        }
        Command::Sweep { lambda, m, k, capacity } => {
            let spec = SweepSpec {
                lambdas: lambda.clone(),
                m_range: m.clone(),
                k_range: k.clone(),
                capacity: need(*capacity, cfg.capacity, "B")?,
            };
            ("sweep", cmd_sweep(&cfg, &spec, cli.format)?)
        }
        Command::Simulate { queue, seed, completions, warmup, strict_ack, initial_queue } => {
            let qc = queue_config(queue, &cfg)?;
            let catalog = ServiceCatalog::build(&cfg.link, qc.k_max, cfg.search_window, cfg.pmf_tol)?;
            let mut sim =
                SimConfig::from_catalog(qc, cfg.link.clone(), &catalog, *seed, Horizon::Completions(*completions))?;
            sim.warmup = *warmup;
            sim.initial_queue = *initial_queue;
            if *strict_ack {
                sim.ack_mode = AckMode::ReceiverPersists;
            }
            ("simulate", render_simulation(&simulate(&sim)?, cli.format))
        }
    };

    let mut snapshot = serde_json::to_value(&cfg).map_err(|e| Error::Io(e.to_string()))?;
    snapshot["arguments"] = json!(format!("{:?}", cli.command));
    let manifest = RunManifest {
        command: name.to_string(),
        config: snapshot,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: cli.out.iter().map(|p| p.display().to_string()).collect(),
    };
    let manifest_value = serde_json::to_value(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    let text = if matches!(effective_format(name, cli.format), Format::Json) {
        let mut data = rendered.data;
        round_json(&mut data);
        let doc = json!({ "manifest": manifest_value, "result": data });
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))? + "\n"
    } else {
        rendered.text
    };
    match &cli.out {
        Some(path) => {
            std::fs::write(path, &text)?;
            let mut side = path.clone().into_os_string();
            side.push(".manifest.json");
            let pretty = serde_json::to_string_pretty(&manifest_value).map_err(|e| Error::Io(e.to_string()))?;
            std::fs::write(PathBuf::from(side), pretty + "\n")?;
        }
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn effective_format(command: &str, requested: Option<Format>) -> Format {
    requested.unwrap_or(match command {
        "service-dist" | "arrivals" | "simulate" => Format::Json,
        _ => Format::Table,
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable output")
}

fn cmd_policy(cfg: &RunConfig, batch_size: usize, format: Option<Format>) -> Result<Rendered> {
    let policy = optimize_policy(&cfg.link, batch_size, cfg.search_window)?;
    let text = match effective_format("policy", format) {
        Format::Csv => {
            let mut s = String::from("i,N,T_round,E_T\n");
            for i in 1..=batch_size {
                s += &format!("{i},{},{}\n", policy.n(i), csv_row(&[policy.round_time(i), policy.expected_time(i)]));
            }
            s
        }
        _ => {
            let mut s = format!("{:>4} {:>6} {:>12} {:>12}\n", "i", "N_i", "T^i [ms]", "E[T_i] [ms]");
            for i in 1..=batch_size {
                s += &format!(
                    "{i:>4} {:>6} {:>12.4} {:>12.4}\n",
                    policy.n(i),
                    policy.round_time(i) * 1e3,
                    policy.expected_time(i) * 1e3
                );
            }
            s
        }
    };
    Ok(Rendered { text, data: to_value(&policy) })
}

fn cmd_service_dist(cfg: &RunConfig, n: usize, tol: Option<f64>, format: Option<Format>) -> Result<Rendered> {
    let policy = optimize_policy(&cfg.link, n, cfg.search_window)?;
    let matrix = TransitionMatrix::for_policy(&cfg.link, &policy)?;
    let pmf = completion_pmf(n, &policy, &matrix, tol.unwrap_or(cfg.pmf_tol))?;
    let text = match effective_format("service-dist", format) {
        Format::Csv => {
            let mut s = String::from("t,p\n");
            for a in &pmf.atoms {
                s += &csv_row(&[a.t, a.p]);
                s.push('\n');
            }
            s
        }
        _ => {
            let mut s = format!("{:>12} {:>12}\n", "t [ms]", "p");
            for a in pmf.atoms.iter().take(40) {
                s += &format!("{:>12.4} {:>12.4e}\n", a.t * 1e3, a.p);
            }
            s += &format!("atoms: {}  truncated mass: {:.3e}\n", pmf.atoms.len(), pmf.truncated_mass);
            s
        }
    };
    Ok(Rendered { text, data: to_value(&pmf) })
}

fn cmd_arrivals(
    cfg: &RunConfig,
    j: usize,
    lambda: Option<f64>,
    kmax: Option<usize>,
    format: Option<Format>,
) -> Result<Rendered> {
    let lambda = need(lambda, cfg.lambda, "lambda")?;
    let kmax = need(kmax, cfg.capacity, "kmax (or B)")?;
    let policy = optimize_policy(&cfg.link, j, cfg.search_window)?;
    let matrix = TransitionMatrix::for_policy(&cfg.link, &policy)?;
    let pmf = completion_pmf(j, &policy, &matrix, cfg.pmf_tol)?;
    let arrivals = arrival_pmf(j, lambda, kmax, &pmf)?;
    let text = match effective_format("arrivals", format) {
        Format::Csv => {
            let mut s = String::from("k,a\n");
            for (k, a) in arrivals.a.iter().enumerate() {
                s += &format!("{k},{}\n", csv_row(&[*a]));
            }
            s
        }
        _ => {
            let mut s = format!("{:>4} {:>12}\n", "k", "a_k");
            for (k, a) in arrivals.a.iter().enumerate() {
                s += &format!("{k:>4} {a:>12.4e}\n");
            }
            s += &format!("tail bound: {:.3e}\n", arrivals.tail_bound);
            s
        }
    };
    Ok(Rendered { text, data: to_value(&arrivals) })
}

fn queue_csv_row(sol: &QueueSolution) -> String {
    let c = sol.config;
    format!(
        "{},{},{},{},{},{},{},{}\n",
        sig12(c.lambda_rate),
        c.m,
        c.k_max,
        c.capacity,
        sig12(sol.mean_queue),
        sig12(sol.mean_batch),
        sol.stable_infinite,
        sig12(sol.input_error_bound)
    )
}

fn render_queue(sol: &QueueSolution, format: Option<Format>) -> Rendered {
    let text = match effective_format("queue", format) {
        Format::Csv => format!("{CSV_SWEEP_HEADER}\n{}", queue_csv_row(sol)),
        _ => {
            let c = sol.config;
            let mut s = format!("lambda={} m={} K={} B={}\n", c.lambda_rate, c.m, c.k_max, c.capacity);
            s += &format!("E[Q] = {:.4}\nE[Z] = {:.4}\n", sol.mean_queue, sol.mean_batch);
            s += &format!(
                "stable (infinite buffer): {}  [K mu_K = {:.4}]\n",
                sol.stable_infinite,
                c.k_max as f64 / sol.mean_service_k
            );
            s += &format!("input error bound: {:.3e}\n", sol.input_error_bound);
            s += "   i      pi_i\n";
            for (i, p) in sol.pi.iter().enumerate() {
                s += &format!("{i:>4} {p:>10.4e}\n");
            }
            s
        }
    };
    Rendered { text, data: to_value(sol) }
}

fn cmd_sweep(cfg: &RunConfig, spec: &SweepSpec, format: Option<Format>) -> Result<Rendered> {
    let catalog = ServiceCatalog::build(&cfg.link, *spec.k_range.end(), cfg.search_window, cfg.pmf_tol)?;
    let report = sweep_with_catalog(spec, &catalog)?;
    let text = match effective_format("sweep", format) {
        Format::Csv => {
            let mut s = format!("{CSV_SWEEP_HEADER}\n");
            for cell in &report.cells {
                match &cell.outcome {
                    Ok(sol) => s += &queue_csv_row(sol),
                    Err(_) => {
                        s += &format!(
                            "{},{},{},{},NaN,NaN,,NaN\n",
                            sig12(cell.lambda),
                            cell.m,
                            cell.k_max,
                            cell.capacity
                        )
                    }
                }
            }
            s
        }
        _ => sweep_table(spec, &report),
    };
    Ok(Rendered { text, data: sweep_json(&report) })
}

fn sweep_json(report: &SweepReport) -> Value {
    let cells: Vec<Value> = report
        .cells
        .iter()
        .map(|c| match &c.outcome {
            Ok(sol) => json!({
                "lambda": c.lambda, "m": c.m, "K": c.k_max, "B": c.capacity,
                "EQ": sol.mean_queue, "EZ": sol.mean_batch, "stable": sol.stable_infinite,
                "err_bound": sol.input_error_bound, "pi": sol.pi,
            }),
            Err(e) => json!({ "lambda": c.lambda, "m": c.m, "K": c.k_max, "B": c.capacity, "error": e }),
        })
        .collect();
    json!({ "cells": cells, "argmin": report.argmin })
}

fn sweep_table(spec: &SweepSpec, report: &SweepReport) -> String {
    let mut s = String::new();
    for &lambda in &spec.lambdas {
        for (title, pick) in [("E[Q]", 0), ("E[Z]", 1)] {
            s += &format!("lambda = {lambda}  {title}\n{:>6}", "");
            for k in spec.k_range.clone() {
                s += &format!(" {:>9}", format!("K={k}"));
            }
            s.push('\n');
            for m in spec.m_range.clone() {
                s += &format!("{:>6}", format!("m={m}"));
                for k in spec.k_range.clone() {
                    let cell =
                        report.cell(lambda, m, k).map(|sol| if pick == 0 { sol.mean_queue } else { sol.mean_batch });
                    match cell {
                        Some(v) => s += &format!(" {v:>9.4}"),
                        None => s += &format!(" {:>9}", "-"),
                    }
                }
                s.push('\n');
            }
        }
        if let Some(arg) = report.argmin.iter().find(|a| a.lambda == lambda) {
            s += &format!(
                "argmin (m,K) = ({},{}) E[Q] = {:.4}; ties {:?}\n",
                arg.best.0, arg.best.1, arg.best.2, arg.ties
            );
            if let Some(f) = arg.fixed_best {
                s += &format!("fixed-batch argmin m=K={} E[Q] = {:.4}; ties {:?}\n", f.0, f.2, arg.fixed_ties);
            }
        }
        s.push('\n');
    }
    s
}

fn render_simulation(report: &SimReport, format: Option<Format>) -> Rendered {
    let text = match effective_format("simulate", format) {
        Format::Csv => format!(
            "seed,completions,EQ_embedded,EQ_embedded_se,EQ_time,EQ_time_se,EZ,EZ_se,dropped\n{},{},{},{}\n",
            report.seed,
            report.completions,
            csv_row(&[
                report.embedded_mean_queue.mean,
                report.embedded_mean_queue.std_err,
                report.time_average_queue.mean,
                report.time_average_queue.std_err,
                report.mean_batch.mean,
                report.mean_batch.std_err,
            ]),
            report.dropped
        ),
        _ => format!(
            "completions: {}\nE[Q] embedded: {:.4} +- {:.4}\nE[Q] time-average: {:.4} +- {:.4}\nE[Z]: {:.4} +- {:.4}\ndropped: {}\n",
            report.completions,
            report.embedded_mean_queue.mean,
            report.embedded_mean_queue.std_err,
            report.time_average_queue.mean,
            report.time_average_queue.std_err,
            report.mean_batch.mean,
            report.mean_batch.std_err,
            report.dropped
        ),
    };
    Rendered { text, data: to_value(report) }
}
