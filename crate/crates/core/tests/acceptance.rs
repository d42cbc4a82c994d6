//! Exit-gate suite. Prints one PASS/FAIL line per criterion and fails the
//! test target if any criterion fails.

use std::time::Instant;

use rayon::prelude::*;
use rlnc_tdd::bulk_queue::{solve_queue, stationary_residual, sweep_with_catalog, ServiceCatalog, SweepSpec};
use rlnc_tdd::des_oracle::{sample_services, simulate, Horizon, SimConfig};
use rlnc_tdd::service_mgf::{completion_pmf, mgf_direct_enum};
use rlnc_tdd::{
    arrival_pmf, build_embedded_matrix, mean_service_time, mgf_eval, optimize_policy, transition_row, LinkParams,
    QueueConfig, TransitionMatrix,
};

const B: usize = 30;
const PMF_TOL: f64 = 1e-10;
const WINDOW: u32 = 50;

/// Reference mean queue sizes at lambda = 1, indexed [m-1][K-1].
const REF_EQ_LOW: [[Option<f64>; 5]; 5] = [
    [Some(0.0408), Some(0.0398), Some(0.0397), Some(0.0397), Some(0.0397)],
    [None, Some(0.0495), Some(0.0495), Some(0.0495), Some(0.0495)],
    [None, None, Some(0.0595), Some(0.0595), Some(0.0595)],
    [None, None, None, Some(0.0696), Some(0.0696)],
    [None, None, None, None, Some(0.07844)],
];

/// Reference values at lambda = 30, indexed [m-1][K-2].
const REF_EQ_HIGH: [[Option<f64>; 4]; 5] = [
    [Some(2.2972), Some(1.5904), Some(1.4499), Some(1.4085)],
    [Some(2.5720), Some(1.8114), Some(1.6542), Some(1.6092)],
    [None, Some(2.1548), Some(1.9433), Some(1.8766)],
    [None, None, Some(2.2397), Some(2.1575)],
    [None, None, None, Some(2.4345)],
];
const REF_EZ_HIGH: [[Option<f64>; 4]; 5] = [
    [Some(1.5504), Some(1.6442), Some(1.6664), Some(1.6710)],
    [Some(2.0000), Some(2.2645), Some(2.3301), Some(2.3468)],
    [None, Some(3.0000), Some(3.1455), Some(3.1893)],
    [None, None, Some(4.0000), Some(4.0769)],
    [None, None, None, Some(5.0000)],
];

struct Gate {
    results: Vec<(String, bool)>,
}

impl Gate {
    fn record(&mut self, name: &str, pass: bool, detail: String, started: Instant) {
        let secs = started.elapsed().as_secs_f64();
        println!("{} {name} ({secs:.1} s): {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((name.to_string(), pass));
    }
}

fn link(pe_ack: f64) -> LinkParams {
    LinkParams::high_latency_link().with_pe_ack(pe_ack)
}

fn close(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn low_rate_setting(pe_ack: f64) -> (bool, String) {
    let catalog = ServiceCatalog::build(&link(pe_ack), 5, WINDOW, PMF_TOL).unwrap();
    let spec = SweepSpec { lambdas: vec![1.0], m_range: 1..=5, k_range: 1..=5, capacity: B };
    let report = sweep_with_catalog(&spec, &catalog).unwrap();
    let mut worst: f64 = 0.0;
    let mut cells_ok = true;
    let mut grid = [[f64::NAN; 5]; 5];
    for m in 1..=5 {
        for k in m..=5 {
            let target = REF_EQ_LOW[m - 1][k - 1].unwrap();
            let eq = report.cell(1.0, m, k).expect("cell solved").mean_queue;
            grid[m - 1][k - 1] = eq;
            worst = worst.max((eq - target).abs() / target);
            if !(close(eq, target, 0.05) || (eq - target).abs() <= 0.002) {
                cells_ok = false;
            }
        }
    }
    let nondecreasing_m = (1..=5).all(|k| (2..=k).all(|m| grid[m - 1][k - 1] >= grid[m - 2][k - 1]));
    let row: Vec<f64> = grid[0].to_vec();
    let (lo, hi) = row.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let spread = (hi - lo) / lo;
    let pass = cells_ok && nondecreasing_m && spread < 0.03;
    (
        pass,
        format!(
            "pe_ack={pe_ack}: 15 cells within tol={cells_ok} (worst rel {:.2}%), E[Q] nondecreasing in m={nondecreasing_m}, m=1 spread {:.2}%",
            worst * 100.0,
            spread * 100.0
        ),
    )
}

fn criterion_1(gate: &mut Gate) {
    let t = Instant::now();
    let settings = [0.2, 0.0].map(low_rate_setting);
    let pass = settings.iter().any(|s| s.0) && t.elapsed().as_secs_f64() < 10.0;
    let detail = settings.iter().map(|s| s.1.clone()).collect::<Vec<_>>().join(" | ");
    gate.record("criterion 1 (reference E[Q] grid, lambda=1)", pass, detail, t);
}

fn criterion_2(gate: &mut Gate) {
    let t = Instant::now();
    let catalog = ServiceCatalog::build(&link(0.0), 5, WINDOW, PMF_TOL).unwrap();
    let spec = SweepSpec { lambdas: vec![30.0], m_range: 1..=5, k_range: 1..=5, capacity: B };
    let report = sweep_with_catalog(&spec, &catalog).unwrap();
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for m in 1..=5 {
        for k in m.max(2)..=5 {
            let sol = report.cell(30.0, m, k).expect("cell solved");
            let (eq, ez) = (REF_EQ_HIGH[m - 1][k - 2].unwrap(), REF_EZ_HIGH[m - 1][k - 2].unwrap());
            worst = worst.max((sol.mean_queue - eq).abs() / eq).max((sol.mean_batch - ez).abs() / ez);
            ok &= close(sol.mean_queue, eq, 0.05) && close(sol.mean_batch, ez, 0.05);
        }
    }
    let c15 = report.cell(30.0, 1, 5).unwrap();
    let c33 = report.cell(30.0, 3, 3).unwrap();
    let fixed = report.argmin[0].fixed_best.unwrap();
    let ratio = c33.mean_queue / c15.mean_queue;
    let pass = ok
        && close(c15.mean_queue, 1.4085, 0.05)
        && close(c15.mean_batch, 1.6710, 0.05)
        && (fixed.0, fixed.1) == (3, 3)
        && (ratio - 1.53).abs() <= 0.08
        && t.elapsed().as_secs_f64() < 30.0;
    gate.record(
        "criterion 2 (reference E[Q]/E[Z] grid, lambda=30)",
        pass,
        format!(
            "14 cells within 5%={ok} (worst rel {:.2}%), (1,5) E[Q]={:.4} E[Z]={:.4}, fixed argmin m=K={}, E[Q](3,3)/E[Q](1,5)={ratio:.3}",
            worst * 100.0,
            c15.mean_queue,
            c15.mean_batch,
            fixed.0
        ),
        t,
    );
}

fn criterion_3(gate: &mut Gate) {
    let t = Instant::now();
    let catalog = ServiceCatalog::build(&link(0.0), 5, WINDOW, PMF_TOL).unwrap();
    let mut picks = Vec::new();
    for lambda in [1.0, 10.0, 30.0] {
        let spec = SweepSpec { lambdas: vec![lambda], m_range: 1..=5, k_range: 1..=5, capacity: B };
        let report = sweep_with_catalog(&spec, &catalog).unwrap();
        picks.push(report.argmin[0].fixed_best.unwrap().0);
    }
    let pass = picks == vec![1, 2, 3] && t.elapsed().as_secs_f64() < 60.0;
    gate.record("criterion 3 (fixed-batch argmin)", pass, format!("lambda 1,10,30 -> m=K {picks:?}"), t);
}

fn criterion_4(gate: &mut Gate) {
    let t = Instant::now();
    let catalog = ServiceCatalog::build(&link(0.0), 5, WINDOW, PMF_TOL).unwrap();
    let mut low_mass = Vec::new();
    let mut mode_m1 = usize::MAX;
    for m in 1..=5 {
        let sol = solve_queue(&QueueConfig::new(m, 5, B, 30.0).unwrap(), &catalog).unwrap();
        low_mass.push(sol.pi[..5].iter().sum::<f64>());
        if m == 1 {
            mode_m1 = (0..=B).max_by(|&a, &b| sol.pi[a].total_cmp(&sol.pi[b])).unwrap();
        }
    }
    let decreasing = low_mass.windows(2).all(|w| w[1] < w[0]);
    let pass = decreasing && mode_m1 <= 2;
    gate.record(
        "criterion 4 (stationary shape, lambda=30 K=5)",
        pass,
        format!(
            "P(i<5) for m=1..5 = {:?}, mode at i={mode_m1} for m=1",
            low_mass.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
        ),
        t,
    );
}

fn criterion_5(gate: &mut Gate) {
    // (a) recursion vs path enumeration
    let t = Instant::now();
    let mut worst_a: f64 = 0.0;
    for pe in [0.0, 0.1, 0.2, 0.5] {
        for pe_ack in [0.0, 0.2] {
            let p = LinkParams { pe, pe_ack, ..LinkParams::high_latency_link() };
            let policy = optimize_policy(&p, 4, WINDOW).unwrap();
            let matrix = TransitionMatrix::for_policy(&p, &policy).unwrap();
            for n in 1..=4 {
                for s in [-50.0, -10.0, -1.0, 0.0] {
                    let rec = mgf_eval(n, s, &policy, &matrix).unwrap();
                    let direct = mgf_direct_enum(n, s, &policy, &matrix, 1e-12).unwrap();
                    worst_a = worst_a.max((rec - direct).abs());
                }
            }
        }
    }
    gate.record(
        "criterion 5a (MGF recursion vs enumeration)",
        worst_a <= 1e-9,
        format!("max |diff| = {worst_a:.2e}"),
        t,
    );

    // (b) mean service time vs central difference of the MGF
    let t = Instant::now();
    let mut worst_b: f64 = 0.0;
    for pe in [0.0, 0.1, 0.2, 0.5] {
        for pe_ack in [0.0, 0.2] {
            let p = LinkParams { pe, pe_ack, ..LinkParams::high_latency_link() };
            let policy = optimize_policy(&p, 5, WINDOW).unwrap();
            let matrix = TransitionMatrix::for_policy(&p, &policy).unwrap();
            for n in 1..=5 {
                let mean = mean_service_time(n, &policy, &matrix).unwrap();
                let h = 1e-6 / mean;
                let d = (mgf_eval(n, h, &policy, &matrix).unwrap() - mgf_eval(n, -h, &policy, &matrix).unwrap())
                    / (2.0 * h);
                worst_b = worst_b.max((d - mean).abs() / mean);
            }
        }
    }
    gate.record("criterion 5b (mean vs MGF derivative)", worst_b <= 1e-6, format!("max rel diff = {worst_b:.2e}"), t);

    // (c) arrival PMF vs Monte Carlo over isolated services
    let t = Instant::now();
    let lambda = 30.0;
    let p = link(0.2);
    let checks: Vec<(usize, f64, usize)> = [1usize, 3, 5]
        .par_iter()
        .map(|&j| {
            let policy = optimize_policy(&p, j, WINDOW).unwrap();
            let matrix = TransitionMatrix::for_policy(&p, &policy).unwrap();
            let pmf = completion_pmf(j, &policy, &matrix, PMF_TOL).unwrap();
            let arr = arrival_pmf(j, lambda, 10, &pmf).unwrap();
            let sample = sample_services(&policy, &p, lambda, 1_000_000, 0xA5 + j as u64).unwrap();
            let mut worst = 0.0f64;
            let mut failures = 0;
            for k in 0..=10 {
                let expected = arr.a[k];
                let se = (expected * (1.0 - expected) / sample.services as f64).sqrt();
                let z = (sample.arrival_frequency(k) - expected).abs() / se;
                worst = worst.max(z);
                if z > 3.0 {
                    failures += 1;
                }
            }
            (j, worst, failures)
        })
        .collect();
    let pass = checks.iter().all(|c| c.2 == 0);
    gate.record(
        "criterion 5c (arrival PMF vs Monte Carlo, 10^6 services)",
        pass,
        checks
            .iter()
            .map(|(j, z, f)| format!("j={j}: max |z|={z:.2} ({f} beyond 3 SE)"))
            .collect::<Vec<_>>()
            .join(", "),
        t,
    );

    // (d) analytic queue metrics vs embedded-epoch simulation
    let t = Instant::now();
    let configs: [(f64, usize, usize, f64); 6] =
        [(1.0, 1, 1, 0.0), (1.0, 1, 5, 0.2), (1.0, 3, 3, 0.2), (30.0, 1, 5, 0.0), (30.0, 2, 3, 0.2), (30.0, 3, 3, 0.0)];
    let rows: Vec<(String, bool)> = configs
        .par_iter()
        .enumerate()
        .map(|(idx, &(lambda, m, k, pe_ack))| {
            let p = link(pe_ack);
            let catalog = ServiceCatalog::build(&p, k, WINDOW, PMF_TOL).unwrap();
            let cfg = QueueConfig::new(m, k, B, lambda).unwrap();
            let sol = solve_queue(&cfg, &catalog).unwrap();
            let mut sim = SimConfig::from_catalog(cfg, p, &catalog, 1000 + idx as u64, Horizon::Completions(1_100_000)).unwrap();
            sim.warmup = 1.0 / 11.0;
            let report = simulate(&sim).unwrap();
            let within = |analytic: f64, est: rlnc_tdd::des_oracle::Estimate| {
                let diff = (analytic - est.mean).abs();
                diff <= 1e-12 || diff <= 3.0 * est.std_err
            };
            let ok = report.recorded_epochs >= 1_000_000
                && within(sol.mean_queue, report.embedded_mean_queue)
                && within(sol.mean_batch, report.mean_batch);
            (
                format!(
                    "[lambda={lambda} ({m},{k}) pe_ack={pe_ack}: E[Q] {:.4} vs {:.4}+-{:.4}, E[Z] {:.4} vs {:.4}+-{:.4}]",
                    sol.mean_queue,
                    report.embedded_mean_queue.mean,
                    report.embedded_mean_queue.std_err,
                    sol.mean_batch,
                    report.mean_batch.mean,
                    report.mean_batch.std_err
                ),
                ok,
            )
        })
        .collect();
    let pass = rows.iter().all(|r| r.1);
    gate.record(
        "criterion 5d (queue metrics vs simulation, 10^6 epochs)",
        pass,
        rows.iter().map(|r| r.0.clone()).collect::<Vec<_>>().join(" "),
        t,
    );
}

fn criterion_6(gate: &mut Gate) {
    let t = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;

    let mut row_err: f64 = 0.0;
    for pe in [0.0, 0.1, 0.2, 0.5, 0.9] {
        for pe_ack in [0.0, 0.2, 0.6] {
            let p = LinkParams { pe, pe_ack, ..LinkParams::high_latency_link() };
            for i in 1..=8 {
                for n in i as u32..i as u32 + 30 {
                    let row = transition_row(i, n, &p).unwrap();
                    row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
                    ok &= row.iter().all(|&x| (0.0..=1.0).contains(&x));
                }
            }
        }
    }
    ok &= row_err <= 1e-12;
    notes.push(format!("row sum err {row_err:.1e}"));

    let mut resid: f64 = 0.0;
    let mut mass_err: f64 = 0.0;
    let mut mgf0: f64 = 0.0;
    for pe_ack in [0.0, 0.2] {
        let catalog = ServiceCatalog::build(&link(pe_ack), 5, WINDOW, PMF_TOL).unwrap();
        for j in 1..=5 {
            let svc = catalog.get(j).unwrap();
            mgf0 = mgf0.max((svc.mgf(0.0).unwrap() - 1.0).abs());
        }
        for lambda in [1.0, 10.0, 30.0, 60.0] {
            for (m, k) in [(1, 1), (1, 5), (2, 4), (5, 5)] {
                let cfg = QueueConfig::new(m, k, B, lambda).unwrap();
                let arrivals = catalog.arrivals(&cfg).unwrap();
                let mat = build_embedded_matrix(&cfg, &arrivals).unwrap();
                let sol = solve_queue(&cfg, &catalog).unwrap();
                resid = resid.max(stationary_residual(&mat, &sol.pi));
                mass_err = mass_err.max((sol.pi.iter().sum::<f64>() - 1.0).abs());
                ok &= sol.pi.iter().all(|&x| x >= 0.0);
            }
        }
    }
    ok &= resid <= 1e-10 && mass_err <= 1e-10 && mgf0 <= 1e-14;
    notes.push(format!("stationary residual {resid:.1e}, |sum pi - 1| {mass_err:.1e}, |M(0) - 1| {mgf0:.1e}"));

    let lossless = LinkParams { pe: 0.0, pe_ack: 0.0, ..LinkParams::high_latency_link() };
    let mut closed_err: f64 = 0.0;
    for m in 1..=6 {
        let policy = optimize_policy(&lossless, m, WINDOW).unwrap();
        let matrix = TransitionMatrix::for_policy(&lossless, &policy).unwrap();
        let det = m as f64 * rlnc_tdd::packet_duration(&lossless, m) + rlnc_tdd::wait_time(&lossless);
        ok &= policy.n_per_state == (1..=m as u32).collect::<Vec<_>>();
        closed_err = closed_err.max((policy.expected_time(m) - det).abs() / det);
        for s in [-10.0, -1.0] {
            closed_err = closed_err.max((mgf_eval(m, s, &policy, &matrix).unwrap() - (s * det).exp()).abs());
        }
    }
    ok &= closed_err <= 1e-14;
    notes.push(format!("pe=0 closed-form err {closed_err:.1e}"));

    let p = link(0.2);
    let catalog = ServiceCatalog::build(&p, 3, WINDOW, PMF_TOL).unwrap();
    let cfg = QueueConfig::new(1, 3, B, 30.0).unwrap();
    let sim = SimConfig::from_catalog(cfg, p, &catalog, 42, Horizon::Completions(50_000)).unwrap();
    let same = simulate(&sim).unwrap() == simulate(&sim).unwrap();
    ok &= same;
    notes.push(format!("seed-reproducible simulation {same}"));

    gate.record("criterion 6 (structural invariants)", ok, notes.join(", "), t);
}

fn main() {
    let mut gate = Gate { results: Vec::new() };
    criterion_1(&mut gate);
    criterion_2(&mut gate);
    criterion_3(&mut gate);
    criterion_4(&mut gate);
    criterion_5(&mut gate);
    criterion_6(&mut gate);
    let failed: Vec<&str> = gate.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("acceptance: {}/{} passed", gate.results.len() - failed.len(), gate.results.len());
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
