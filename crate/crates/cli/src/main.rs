//! `appf-kit`: probabilistic power flow from the command line.

mod config;
mod failure;
mod output;

use std::path::{Path, PathBuf};

use anyhow::Context;
use appf_core::appf::{compare, load_result, save_result, write_records_jsonl, write_solutions_csv};
use appf_core::netmodel::{load_network, write_network, BusId, NetworkFormat, NetworkModel, Phase};
use appf_core::npfs::{convergence_margin, npfs_solve, prepare, MarginReport, MARGIN_WARNING};
use appf_core::sampling::write_samples_csv;
use appf_core::synthetic::{generate_feeder, FeederSpec};
use appf_core::uq::{self, DEFAULT_BINS};
use appf_core::{appf_run, generate_samples, traditional_ppf_run, LoadProfile, PpfResult, VoltageState};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{apply_net, apply_solver, read_config, Mode, NetArgs, RunArgs, RunConfig, SolverArgs};
use failure::{config_error, exit_code, io_error, kind_of, numerical_error, CoreResult};
use output::{ensure_dir, summarize_run, write_json};

#[derive(Parser, Debug)]
#[command(name = "appf-kit", version, about = "Probabilistic power flow for distribution networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log filter, as in RUST_LOG.
    #[arg(long, global = true, env = "APPF_LOG", default_value = "warn")]
    log: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One NPFS solve at nominal load from flat start.
    Solve(SolveArgs),
    /// Baseline: every sample by full Newton.
    Ppf(RunArgs),
    /// Reduced-order probabilistic power flow.
    Appf(RunArgs),
    /// Both pipelines over the same samples, with an equivalence and timing report.
    Compare(RunArgs),
    /// Convergence margin at flat start and at the nominal solution.
    Check(CheckArgs),
    /// Voltage statistics from a stored result.
    Stats(StatsArgs),
    /// Writes a synthetic radial feeder.
    GenerateFeeder(FeederArgs),
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long, env = "APPF_CONFIG")]
    config: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, env = "APPF_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct StatsArgs {
    /// Stored run (`result.json` from ppf or appf).
    #[arg(long, env = "APPF_RESULT")]
    result: PathBuf,
    /// Network of the run; needed for bus labels and branch currents.
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, env = "APPF_BINS", default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Branch as FROM:TO full slot indices, each with an optional phase letter (e.g. 3a:6a). Repeatable.
    #[arg(long = "branch")]
    branches: Vec<String>,
    /// How many singular values of the solution matrix to report.
    #[arg(long, default_value_t = 20)]
    singular_values: usize,
    #[arg(long, env = "APPF_OUT", default_value = "appf-out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeederArgs {
    /// Output network file; the extension picks JSON or CSV.
    #[arg(long)]
    out: PathBuf,
    /// JSON feeder spec; the flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trunk_buses: Option<usize>,
    #[arg(long)]
    laterals_per_bus: Option<usize>,
    /// Attach lateral loads directly, without service transformers.
    #[arg(long)]
    no_service_transformer: bool,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::new().parse_filters(&std::env::var("RUST_LOG").unwrap_or(cli.log.clone())).init();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(kind_of(&e)));
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Solve(a) => solve(a),
        Command::Ppf(a) => pipeline(&a.resolve(Mode::Ppf)?),
        Command::Appf(a) => pipeline(&a.resolve(Mode::Appf)?),
        Command::Compare(a) => compare_cmd(&a.resolve(Mode::Compare)?),
        Command::Check(a) => check(a),
        Command::Stats(a) => stats(a),
        Command::GenerateFeeder(a) => generate(a),
    }
}

fn load_net(c: &RunConfig) -> anyhow::Result<NetworkModel> {
    let fmt = c.network_format()?;
    load_network(&c.network, fmt).core().with_context(|| format!("loading {}", c.network.display()))
}

fn samples_for(c: &mut RunConfig, net: &NetworkModel) -> anyhow::Result<Vec<LoadProfile>> {
    if let Some(b) = &c.uncertain_buses {
        c.sampling.uncertain_set = config::reduced_uncertain_set(net, b)?;
    }
    generate_samples(&c.sampling, net.nominal_loads()).core()
}

fn solve(a: SolveArgs) -> anyhow::Result<()> {
    let mut c = match &a.config {
        Some(p) => read_config(p)?,
        None => RunConfig::default(),
    };
    c.mode = Mode::Solve;
    apply_net(&mut c, &a.net);
    apply_solver(&mut c.npfs, &a.solver);
    if let Some(o) = a.out {
        c.out_dir = o;
    }
    c.validate()?;
    let net = load_net(&c)?;
    let f = prepare(&net).core()?;
    let (x, st) = npfs_solve(&f, &net, net.nominal_loads(), &VoltageState::flat(&net), &c.npfs).core()?;
    ensure_dir(&c.out_dir)?;
    c.write(&c.out_dir)?;
    write_full_solution(&c.out_dir.join("solution.csv"), &net, &x)?;
    #[derive(Serialize)]
    struct SolveReport<'a> {
        config: &'a RunConfig,
        stats: &'a appf_core::SolveStats,
    }
    write_json(&c.out_dir.join("solve.json"), &SolveReport { config: &c, stats: &st })?;
    println!(
        "{} after {} iterations, residual {:.3e}, {:.3} ms; solution in {}",
        if st.converged { "converged" } else { "NOT converged" },
        st.newton_iters,
        st.final_residual_inf,
        st.wall_time.as_secs_f64() * 1e3,
        c.out_dir.join("solution.csv").display()
    );
    if !st.converged {
        return Err(numerical_error(format!(
            "NPFS did not converge in {} iterations (residual {:e})",
            st.newton_iters, st.final_residual_inf
        )));
    }
    Ok(())
}

/// Every slot, substation included: `bus,phase,v_mag,v_ang` with angles in radians.
fn write_full_solution(path: &Path, net: &NetworkModel, x: &VoltageState) -> anyhow::Result<()> {
    let mut out = String::from("bus,phase,v_mag,v_ang\n");
    for slot in 0..net.n_total() {
        let v = match net.full_to_reduced()[slot] {
            Some(i) => num_complex::Complex64::from_polar(x.v_mag()[i], x.v_ang()[i]),
            None => {
                let k = net.substation_slots().iter().position(|&s| s == slot).expect("substation slot");
                net.substation_voltage()[k]
            }
        };
        let phase = net.phases()[slot].map_or("", Phase::label);
        out.push_str(&format!("{slot},{phase},{},{}\n", v.norm(), v.arg()));
    }
    std::fs::write(path, out).map_err(|e| io_error(format!("{}: {e}", path.display())))
}

fn write_bundle(dir: &Path, net: &NetworkModel, r: &PpfResult) -> anyhow::Result<()> {
    save_result(&dir.join("result.json"), r).core()?;
    write_solutions_csv(&dir.join("solutions.csv"), net, r).core()?;
    write_records_jsonl(&dir.join("records.jsonl"), &r.records).core()
}

fn pipeline(c: &RunConfig) -> anyhow::Result<()> {
    let mut c = c.clone();
    let net = load_net(&c)?;
    let samples = samples_for(&mut c, &net)?;
    let result = match c.mode {
        Mode::Ppf => traditional_ppf_run(&net, &samples, &c.ppf()).core()?,
        _ => appf_run(&net, &samples, &c.ppf()).core()?,
    };
    ensure_dir(&c.out_dir)?;
    c.write(&c.out_dir)?;
    write_samples_csv(&c.out_dir.join("samples.csv"), &net, &samples).core()?;
    write_bundle(&c.out_dir, &net, &result)?;
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a RunConfig,
        summary: output::RunSummary,
    }
    let report = Report { config: &c, summary: summarize_run(&result) };
    write_json(&c.out_dir.join("summary.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(())
}

fn compare_cmd(c: &RunConfig) -> anyhow::Result<()> {
    let mut c = c.clone();
    let net = load_net(&c)?;
    let samples = samples_for(&mut c, &net)?;
    let a = appf_run(&net, &samples, &c.ppf()).core()?;
    let b = traditional_ppf_run(&net, &samples, &c.ppf()).core()?;
    let rep = compare(&a, &b).core()?;
    ensure_dir(&c.out_dir)?;
    c.write(&c.out_dir)?;
    write_samples_csv(&c.out_dir.join("samples.csv"), &net, &samples).core()?;
    for (name, r) in [("appf", &a), ("ppf", &b)] {
        let dir = c.out_dir.join(name);
        ensure_dir(&dir)?;
        write_bundle(&dir, &net, r)?;
    }
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a RunConfig,
        equivalent: bool,
        comparison: &'a appf_core::ComparisonReport,
        appf: output::RunSummary,
        ppf: output::RunSummary,
    }
    let tol = c.npfs.eps_newton;
    let report = Report {
        config: &c,
        equivalent: rep.max_residual_a < tol && rep.max_residual_b < tol,
        comparison: &rep,
        appf: summarize_run(&a),
        ppf: summarize_run(&b),
    };
    write_json(&c.out_dir.join("report.json"), &report)?;
    #[derive(Serialize)]
    struct Brief<'a> {
        equivalent: bool,
        max_dv: f64,
        max_residual_appf: f64,
        max_residual_ppf: f64,
        rom_final_q: usize,
        rms_only_samples: usize,
        speedup_total: f64,
        speedup_steady_state: f64,
        speedup_rms_only: Option<f64>,
        report: &'a Path,
    }
    let brief = Brief {
        equivalent: report.equivalent,
        max_dv: rep.max_dv,
        max_residual_appf: rep.max_residual_a,
        max_residual_ppf: rep.max_residual_b,
        rom_final_q: a.rom_final_q,
        rms_only_samples: rep.rms_only_samples_a,
        speedup_total: rep.total_time_ratio,
        speedup_steady_state: rep.steady_state_ratio,
        speedup_rms_only: rep.rms_only_ratio,
        report: &c.out_dir.join("report.json"),
    };
    println!("{}", serde_json::to_string_pretty(&brief)?);
    Ok(())
}

fn check(a: CheckArgs) -> anyhow::Result<()> {
    let mut c = RunConfig { mode: Mode::Check, ..Default::default() };
    apply_net(&mut c, &a.net);
    apply_solver(&mut c.npfs, &a.solver);
    c.validate()?;
    let net = load_net(&c)?;
    let f = prepare(&net).core()?;
    let flat = VoltageState::flat(&net);
    let at_flat = convergence_margin(&net, &flat, Some(&f));
    let (x, st) = npfs_solve(&f, &net, net.nominal_loads(), &flat, &c.npfs).core()?;
    let at_nominal = convergence_margin(&net, &x, Some(&f));
    if a.json {
        #[derive(Serialize)]
        struct Report<'a> {
            flat_start: &'a MarginReport,
            nominal: &'a MarginReport,
            nominal_converged: bool,
        }
        let r = Report { flat_start: &at_flat, nominal: &at_nominal, nominal_converged: st.converged };
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else {
        println!("network: {} slots, {} unknown buses", net.n_total(), net.n());
        print_margin("flat start", &at_flat);
        print_margin("nominal solution", &at_nominal);
        if at_nominal.margin < MARGIN_WARNING {
            println!("warning: margin below {MARGIN_WARNING}; the Neumann series may converge slowly or not at all");
        }
    }
    if !st.converged {
        return Err(numerical_error(format!("nominal solve did not converge (residual {:e})", st.final_residual_inf)));
    }
    Ok(())
}

fn print_margin(label: &str, m: &MarginReport) {
    println!(
        "{label}: margin {:.4e}{} (spectral radius {:.4e}, min |V| {:.4}, max |I| {:.4e})",
        m.margin,
        if m.approximate { " [approximate]" } else { "" },
        m.spectral_radius,
        m.min_voltage,
        m.max_current
    );
    if let Some(rho) = m.neumann_radius {
        println!("{label}: series contraction estimate {rho:.4e}");
    }
}

fn parse_bus(s: &str) -> anyhow::Result<BusId> {
    let s = s.trim();
    let split = s.find(|ch: char| !ch.is_ascii_digit()).unwrap_or(s.len());
    let index: usize = s[..split].parse().map_err(|_| config_error(format!("bad bus {s:?}")))?;
    match &s[split..] {
        "" => Ok(BusId::new(index)),
        p => Ok(BusId::phased(index, Phase::parse(p).core()?)),
    }
}

fn stats(a: StatsArgs) -> anyhow::Result<()> {
    let result = load_result(&a.result).core()?;
    let net = match &a.net.network {
        Some(p) => {
            let fmt = match a.net.format {
                Some(f) => f.into(),
                None => NetworkFormat::from_path(p).core()?,
            };
            Some(load_network(p, fmt).core()?)
        }
        None => None,
    };
    if !a.branches.is_empty() && net.is_none() {
        return Err(config_error("--branch needs --network"));
    }
    let mut summary = uq::summarize(&result, net.as_ref(), a.bins).core()?;
    ensure_dir(&a.out)?;
    for spec in &a.branches {
        let (f, t) = spec.split_once(':').ok_or_else(|| config_error(format!("branch {spec:?} is not FROM:TO")))?;
        let net = net.as_ref().expect("checked above");
        let b = uq::branch_current_stats(net, &result, parse_bus(f)?, parse_bus(t)?, a.bins).core()?;
        uq::write_histogram_csv(&a.out.join(format!("branch_{}_{}.csv", b.from, b.to)), &b.histogram).core()?;
        summary.branch_histograms.push(b);
    }
    summary.singular_values = uq::singular_values(&result, a.singular_values);
    uq::write_summary_json(&a.out.join("uq_summary.json"), &summary).core()?;
    uq::write_histogram_csv(&a.out.join("histogram.csv"), &summary.histogram).core()?;
    uq::write_node_stats_csv(&a.out.join("node_stats.csv"), &summary).core()?;
    let order = summary.sorted_by_mean();
    let lo = &summary.per_node[order[0]];
    let hi = &summary.per_node[order[order.len() - 1]];
    println!(
        "{} samples, {} nodes: lowest mean |V| {:.5} at bus {} (min {:.5}), highest {:.5} at bus {}",
        result.num_samples(),
        result.n(),
        lo.mean,
        summary.buses[order[0]],
        lo.min,
        hi.mean,
        summary.buses[order[order.len() - 1]]
    );
    println!(
        "numerical rank of the solution matrix at 1e-6: {} of {} singular values; output in {}",
        uq::numerical_rank(&summary.singular_values, 1e-6),
        summary.singular_values.len(),
        a.out.display()
    );
    Ok(())
}

fn generate(a: FeederArgs) -> anyhow::Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?
        }
        None => FeederSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(t) = a.trunk_buses {
        spec.trunk_buses = t;
    }
    if let Some(l) = a.laterals_per_bus {
        spec.laterals_per_bus = l;
    }
    if a.no_service_transformer {
        spec.service_transformer = None;
    }
    let net = generate_feeder(&spec).core()?;
    let fmt = NetworkFormat::from_path(&a.out).core()?;
    write_network(&net, &a.out, fmt).core()?;
    println!("wrote {} ({} slots, {} loads)", a.out.display(), net.n_total(), net.nominal_loads().p.iter().filter(|p| **p != 0.0).count());
    Ok(())
}
