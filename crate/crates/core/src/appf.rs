//! Sampling-based probabilistic power flow: the reduced-order APPF loop and
//! the full-Newton baseline it is measured against.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::netmodel::{LoadProfile, NetworkModel};
use crate::npfs::{npfs_solve_with, prepare, NpfsConfig, NpfsError, NpfsWorkspace, SolveStats};
use crate::pfcore::{inf_norm, injected_currents_complex, JacobianBuilder, JacobianKind, VoltageState};
use crate::rom::{ProjectionCache, ReducedModel, RomConfig, RomError};
use crate::sparla::{minimum_degree, LinalgError, SymbolicLu};

#[derive(Debug, thiserror::Error)]
pub enum AppfError {
    #[error(transparent)]
    Npfs(#[from] NpfsError),
    #[error(transparent)]
    Rom(#[from] RomError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("nominal power flow did not converge (residual {residual:e} after {iters} iterations)")]
    NominalNonConvergence { iters: usize, residual: f64 },
    #[error("sample {index} did not converge (residual {residual:e} after {iters} Newton iterations)")]
    SampleNonConvergence { index: usize, iters: usize, residual: f64 },
    #[error("sample {index} has {got} loads, expected {expected}")]
    SampleLength { index: usize, expected: usize, got: usize },
    #[error("cannot compare runs with {a} and {b} samples")]
    SampleCountMismatch { a: usize, b: usize },
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolvePath {
    RmsOnly,
    RmsThenNpfs,
    NpfsOnly,
    /// Baseline samples: full Newton with direct solves.
    Newton,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Appf,
    Traditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sample_index: usize,
    pub path: SolvePath,
    pub rms_iters: usize,
    pub newton_iters: usize,
    pub expanded_basis: bool,
    pub q_after: usize,
    #[serde(with = "crate::duration_secs")]
    pub wall_time: Duration,
    /// Time inside the full-space Newton solve, zero on the rms_only path.
    #[serde(with = "crate::duration_secs")]
    pub newton_time: Duration,
    #[serde(with = "crate::nan_as_null")]
    pub final_residual_inf: f64,
    /// Full-space mismatch of the reduced solution; NaN on the npfs_only path.
    #[serde(with = "crate::nan_as_null")]
    pub rms_residual_inf: f64,
    /// Out-of-span norm of the final state; zero on the rms_only path.
    #[serde(with = "crate::nan_as_null")]
    pub subspace_residual: f64,
}

impl RunRecord {
    /// Equality on everything except timings.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        self.sample_index == other.sample_index
            && self.path == other.path
            && self.rms_iters == other.rms_iters
            && self.newton_iters == other.newton_iters
            && self.expanded_basis == other.expanded_basis
            && self.q_after == other.q_after
            && self.final_residual_inf.to_bits() == other.final_residual_inf.to_bits()
            && self.rms_residual_inf.to_bits() == other.rms_residual_inf.to_bits()
            && self.subspace_residual.to_bits() == other.subspace_residual.to_bits()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpfConfig {
    pub npfs: NpfsConfig,
    pub rom: RomConfig,
    /// Baseline only. Samples are split into contiguous chunks, one per worker.
    pub workers: usize,
}

impl Default for PpfConfig {
    fn default() -> Self {
        Self { npfs: NpfsConfig::default(), rom: RomConfig::default(), workers: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpfResult {
    pub method: Method,
    /// One polar-stacked state `(|V|; θ)` per sample.
    pub solutions: Vec<Vec<f64>>,
    pub records: Vec<RunRecord>,
    pub config: PpfConfig,
    pub rom_final_q: usize,
    pub nominal: Vec<f64>,
    /// Factorization, symbolic analysis and nominal solve.
    #[serde(with = "crate::duration_secs")]
    pub setup_time: Duration,
    #[serde(with = "crate::duration_secs")]
    pub total_time: Duration,
}

impl PpfResult {
    pub fn num_samples(&self) -> usize {
        self.solutions.len()
    }

    /// Number of reduced buses.
    pub fn n(&self) -> usize {
        self.nominal.len() / 2
    }

    pub fn state(&self, m: usize) -> VoltageState {
        VoltageState::from_polar_stacked(&self.solutions[m])
    }

    /// Index of the first sample after the last basis expansion.
    pub fn steady_state_start(&self) -> usize {
        self.records.iter().rposition(|r| r.expanded_basis).map_or(0, |i| i + 1)
    }
}

fn check_samples(net: &NetworkModel, samples: &[LoadProfile]) -> Result<(), AppfError> {
    for (index, s) in samples.iter().enumerate() {
        if s.len() != net.n() {
            return Err(AppfError::SampleLength { index, expected: net.n(), got: s.len() });
        }
    }
    Ok(())
}

/// Reduced-order loop: project, solve the reduced system, fall back to NPFS
/// and expand the basis when the reduced answer misses the tolerance.
pub fn appf_run(net: &NetworkModel, samples: &[LoadProfile], cfg: &PpfConfig) -> Result<PpfResult, AppfError> {
    cfg.npfs.validate()?;
    check_samples(net, samples)?;
    let start = Instant::now();
    let f = prepare(net)?;
    let mut ws = NpfsWorkspace::new(net.n());
    let flat = VoltageState::flat(net);
    let (x_nom, st) = npfs_solve_with(&f, net, net.nominal_loads(), &flat, &cfg.npfs, &mut ws)?;
    if !st.converged {
        return Err(AppfError::NominalNonConvergence { iters: st.newton_iters, residual: st.final_residual_inf });
    }
    let s0 = crate::pfcore::power_injections(net, &x_nom);
    let mut rom = ReducedModel::init(net, &x_nom, &s0, cfg.rom.clone())?;
    let setup_time = start.elapsed();
    log::info!("appf setup {:.3?}, nominal solve {} iterations", setup_time, st.newton_iters);

    let mut prev = x_nom.clone();
    let mut proj = ProjectionCache::new();
    let mut solutions = Vec::with_capacity(samples.len());
    let mut records = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        let t0 = Instant::now();
        let s_hat = proj.project(&rom, &s.stacked());
        let out = rom.rms_solve(&s_hat, net, s);
        let rms_residual = out.full_residual_inf;
        let (x, path, newton_iters, newton_time, residual, expanded, span_res) = if out.full_residual_inf < cfg.npfs.eps_newton {
            rom.set_delta_x_hat(out.delta);
            (out.state, SolvePath::RmsOnly, 0, Duration::ZERO, out.full_residual_inf, false, 0.0)
        } else {
            let (path, x0) =
                if out.state.is_finite() { (SolvePath::RmsThenNpfs, &out.state) } else { (SolvePath::NpfsOnly, &prev) };
            let (mut x, mut st) = npfs_solve_with(&f, net, s, x0, &cfg.npfs, &mut ws)?;
            let mut iters = st.newton_iters;
            let mut time = st.wall_time;
            if !st.converged && path == SolvePath::RmsThenNpfs {
                log::debug!("sample {index}: NPFS from the reduced state failed, retrying from the previous solution");
                (x, st) = npfs_solve_with(&f, net, s, &prev, &cfg.npfs, &mut ws)?;
                iters += st.newton_iters;
                time += st.wall_time;
            }
            if !st.converged {
                return Err(non_convergence(index, &st));
            }
            let rep = rom.dse_update(&x, net);
            (x, path, iters, time, st.final_residual_inf, rep.expanded, rep.residual_norm)
        };
        records.push(RunRecord {
            sample_index: index,
            path,
            rms_iters: out.iters,
            newton_iters,
            expanded_basis: expanded,
            q_after: rom.q(),
            wall_time: t0.elapsed(),
            newton_time,
            final_residual_inf: residual,
            rms_residual_inf: rms_residual,
            subspace_residual: span_res,
        });
        solutions.push(x.polar_stacked());
        prev = x;
    }
    Ok(PpfResult {
        method: Method::Appf,
        solutions,
        records,
        config: cfg.clone(),
        rom_final_q: rom.q(),
        nominal: x_nom.polar_stacked(),
        setup_time,
        total_time: start.elapsed(),
    })
}

fn non_convergence(index: usize, st: &SolveStats) -> AppfError {
    AppfError::SampleNonConvergence { index, iters: st.newton_iters, residual: st.final_residual_inf }
}

/// Polar Newton with a direct sparse solve per iteration. The symbolic
/// analysis is shared; the numeric factorization is redone every iteration.
pub struct NewtonSolver<'a> {
    net: &'a NetworkModel,
    jac: JacobianBuilder,
    symbolic: &'a SymbolicLu,
    rhs: Vec<f64>,
    dx: Vec<f64>,
    work: Vec<f64>,
    /// Numeric factorizations performed so far.
    pub factorizations: usize,
}

/// Symbolic LU analysis of the polar Jacobian pattern.
pub fn analyze_jacobian(net: &NetworkModel) -> Result<SymbolicLu, AppfError> {
    let jac = JacobianBuilder::new(net, JacobianKind::Polar);
    let perm = minimum_degree(net.ybus_reduced()).interleave_halves();
    Ok(SymbolicLu::new(jac.matrix(), perm)?)
}

impl<'a> NewtonSolver<'a> {
    pub fn new(net: &'a NetworkModel, symbolic: &'a SymbolicLu) -> Self {
        let n2 = 2 * net.n();
        Self {
            net,
            jac: JacobianBuilder::new(net, JacobianKind::Polar),
            symbolic,
            rhs: vec![0.0; n2],
            dx: vec![0.0; n2],
            work: vec![0.0; n2],
            factorizations: 0,
        }
    }

    pub fn solve(&mut self, s_spec: &LoadProfile, x0: &VoltageState, cfg: &NpfsConfig) -> Result<(VoltageState, SolveStats), AppfError> {
        let start = Instant::now();
        let n = self.net.n();
        let spec = s_spec.to_complex();
        let mut x = x0.clone();
        let mut iters = 0;
        let (res, converged) = loop {
            let v = x.complex();
            let cur = injected_currents_complex(self.net, &v);
            for i in 0..n {
                let g = spec[i] - v[i] * cur[i].conj();
                self.rhs[i] = g.re;
                self.rhs[n + i] = g.im;
            }
            let res = inf_norm(&self.rhs);
            if !res.is_finite() {
                break (res, false);
            }
            if res < cfg.eps_newton {
                break (res, true);
            }
            if iters >= cfg.max_newton_iters {
                break (res, false);
            }
            let j = self.jac.fill(self.net, &v, &cur);
            let lu = match self.symbolic.factor(j) {
                Ok(lu) => lu,
                Err(LinalgError::SingularPivot { .. }) => break (res, false),
                Err(e) => return Err(e.into()),
            };
            self.factorizations += 1;
            lu.solve_into(&self.rhs, &mut self.dx, &mut self.work)?;
            x = x.step_polar(&self.dx);
            iters += 1;
        };
        let stats = SolveStats {
            newton_iters: iters,
            neumann_terms_per_iter: 0,
            guard_trips: 0,
            final_residual_inf: res,
            wall_time: start.elapsed(),
            converged,
        };
        Ok((x, stats))
    }
}

fn newton_chunk(
    net: &NetworkModel,
    symbolic: &SymbolicLu,
    samples: &[LoadProfile],
    offset: usize,
    x_nom: &VoltageState,
    cfg: &NpfsConfig,
) -> Result<Vec<(Vec<f64>, RunRecord)>, AppfError> {
    let mut solver = NewtonSolver::new(net, symbolic);
    let mut prev = x_nom.clone();
    let mut out = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let index = offset + k;
        let t0 = Instant::now();
        let (x, st) = solver.solve(s, &prev, cfg)?;
        if !st.converged {
            return Err(non_convergence(index, &st));
        }
        let rec = RunRecord {
            sample_index: index,
            path: SolvePath::Newton,
            rms_iters: 0,
            newton_iters: st.newton_iters,
            expanded_basis: false,
            q_after: 0,
            wall_time: t0.elapsed(),
            newton_time: st.wall_time,
            final_residual_inf: st.final_residual_inf,
            rms_residual_inf: f64::NAN,
            subspace_residual: 0.0,
        };
        out.push((x.polar_stacked(), rec));
        prev = x;
    }
    Ok(out)
}

/// Baseline: every sample solved by full Newton, warm-started from the
/// previous solution of the same worker.
pub fn traditional_ppf_run(net: &NetworkModel, samples: &[LoadProfile], cfg: &PpfConfig) -> Result<PpfResult, AppfError> {
    cfg.npfs.validate()?;
    check_samples(net, samples)?;
    let start = Instant::now();
    let symbolic = analyze_jacobian(net)?;
    let (x_nom, st) = NewtonSolver::new(net, &symbolic).solve(net.nominal_loads(), &VoltageState::flat(net), &cfg.npfs)?;
    if !st.converged {
        return Err(AppfError::NominalNonConvergence { iters: st.newton_iters, residual: st.final_residual_inf });
    }
    let setup_time = start.elapsed();
    let workers = cfg.workers.clamp(1, samples.len().max(1));
    let chunk = samples.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<_>, AppfError>> = if workers == 1 {
        vec![newton_chunk(net, &symbolic, samples, 0, &x_nom, &cfg.npfs)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .enumerate()
                .map(|(w, part)| {
                    let (symbolic, x_nom) = (&symbolic, &x_nom);
                    scope.spawn(move || newton_chunk(net, symbolic, part, w * chunk, x_nom, &cfg.npfs))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("baseline worker panicked")).collect()
        })
    };
    let mut solutions = Vec::with_capacity(samples.len());
    let mut records = Vec::with_capacity(samples.len());
    for part in parts {
        for (x, r) in part? {
            solutions.push(x);
            records.push(r);
        }
    }
    Ok(PpfResult {
        method: Method::Traditional,
        solutions,
        records,
        config: cfg.clone(),
        rom_final_q: 0,
        nominal: x_nom.polar_stacked(),
        setup_time,
        total_time: start.elapsed(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub samples: usize,
    /// Per sample, the largest `||V_a| − |V_b||` over nodes.
    pub max_dv_per_sample: Vec<f64>,
    pub max_dv: f64,
    /// Per sample, the largest `|Ṽ_a − Ṽ_b|` over nodes.
    pub max_dv_complex: f64,
    pub max_residual_a: f64,
    pub max_residual_b: f64,
    pub mean_time_a: f64,
    pub mean_time_b: f64,
    /// Total wall time of `b` over that of `a`, setup included.
    pub total_time_ratio: f64,
    /// Mean per-sample time of `b` over that of `a`, each taken after its last expansion.
    pub steady_state_ratio: f64,
    /// Mean per-sample time of `b` over `a`'s mean on rms_only samples.
    pub rms_only_ratio: Option<f64>,
    pub rms_only_samples_a: usize,
    pub mean_step_time_a: Option<f64>,
    pub mean_step_time_b: Option<f64>,
}

fn mean_secs<'a>(it: impl Iterator<Item = &'a Duration>) -> Option<f64> {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), d| (s + d.as_secs_f64(), n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_step(r: &PpfResult) -> Option<f64> {
    let (t, k) = r.records.iter().fold((0.0, 0usize), |(t, k), rec| (t + rec.newton_time.as_secs_f64(), k + rec.newton_iters));
    (k > 0).then(|| t / k as f64)
}

/// Compares two runs over the same samples.
pub fn compare(a: &PpfResult, b: &PpfResult) -> Result<ComparisonReport, AppfError> {
    if a.num_samples() != b.num_samples() || a.n() != b.n() {
        return Err(AppfError::SampleCountMismatch { a: a.num_samples(), b: b.num_samples() });
    }
    let n = a.n();
    let mut per = Vec::with_capacity(a.num_samples());
    let mut max_c = 0.0f64;
    for (xa, xb) in a.solutions.iter().zip(&b.solutions) {
        let mut m = 0.0f64;
        for i in 0..n {
            m = m.max((xa[i] - xb[i]).abs());
            let va = num_complex::Complex64::from_polar(xa[i], xa[n + i]);
            let vb = num_complex::Complex64::from_polar(xb[i], xb[n + i]);
            max_c = max_c.max((va - vb).norm());
        }
        per.push(m);
    }
    let max_res = |r: &PpfResult| r.records.iter().fold(0.0f64, |m, x| m.max(x.final_residual_inf));
    let mean_all = |r: &PpfResult| mean_secs(r.records.iter().map(|x| &x.wall_time)).unwrap_or(0.0);
    let steady = |r: &PpfResult| {
        let s = r.steady_state_start();
        mean_secs(r.records[s..].iter().map(|x| &x.wall_time)).unwrap_or_else(|| mean_all(r))
    };
    let rms_a = mean_secs(a.records.iter().filter(|r| r.path == SolvePath::RmsOnly).map(|r| &r.wall_time));
    let (ta, tb) = (mean_all(a), mean_all(b));
    Ok(ComparisonReport {
        samples: a.num_samples(),
        max_dv: per.iter().cloned().fold(0.0, f64::max),
        max_dv_per_sample: per,
        max_dv_complex: max_c,
        max_residual_a: max_res(a),
        max_residual_b: max_res(b),
        mean_time_a: ta,
        mean_time_b: tb,
        total_time_ratio: b.total_time.as_secs_f64() / a.total_time.as_secs_f64(),
        steady_state_ratio: steady(b) / steady(a),
        rms_only_ratio: rms_a.map(|t| tb / t),
        rms_only_samples_a: a.records.iter().filter(|r| r.path == SolvePath::RmsOnly).count(),
        mean_step_time_a: mean_step(a),
        mean_step_time_b: mean_step(b),
    })
}

fn io_err(path: &Path, e: impl ToString) -> AppfError {
    AppfError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Long-format solutions `sample,bus,v_mag,v_ang` with 0-based full slot indices.
pub fn write_solutions_csv(path: &Path, net: &NetworkModel, result: &PpfResult) -> Result<(), AppfError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["sample", "bus", "v_mag", "v_ang"]).map_err(|e| io_err(path, e))?;
    let n = result.n();
    for (m, x) in result.solutions.iter().enumerate() {
        for i in 0..n {
            let bus = net.reduced_to_full()[i];
            w.write_record([m.to_string(), bus.to_string(), x[i].to_string(), x[n + i].to_string()])
                .map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_records_jsonl(path: &Path, records: &[RunRecord]) -> Result<(), AppfError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| io_err(path, e))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn save_result(path: &Path, result: &PpfResult) -> Result<(), AppfError> {
    let w = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| io_err(path, e))?);
    serde_json::to_writer(w, result).map_err(|e| io_err(path, e))
}

pub fn load_result(path: &Path) -> Result<PpfResult, AppfError> {
    let r = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| io_err(path, e))?);
    serde_json::from_reader(r).map_err(|e| io_err(path, e))
}

/// Residual `‖s(x) − S‖_∞` of a stored polar solution.
pub fn solution_residual(net: &NetworkModel, x: &[f64], s: &LoadProfile) -> f64 {
    inf_norm(&crate::pfcore::mismatch(net, &VoltageState::from_polar_stacked(x), s))
}
