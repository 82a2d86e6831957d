//! Fully resolved run configuration, echoed into every output bundle.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use appf_core::netmodel::NetworkFormat;
use appf_core::npfs::{DUpdatePolicy, NpfsConfig};
use appf_core::rom::RomConfig;
use appf_core::sampling::{Correlation, PqDraws, SamplingSpec, UncertainSet, RNG_ALGORITHM};
use appf_core::PpfConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::failure::{config_error, io_error};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Solve,
    Ppf,
    Appf,
    Compare,
    Check,
    Stats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub network: PathBuf,
    pub format: Option<NetworkFormat>,
    pub sampling: SamplingSpec,
    /// Full slot indices of the uncertain loads; overrides `sampling.uncertain_set`.
    pub uncertain_buses: Option<Vec<usize>>,
    pub npfs: NpfsConfig,
    pub rom: RomConfig,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub rng_algorithm: String,
    pub version: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Appf,
            network: PathBuf::new(),
            format: None,
            sampling: SamplingSpec::default(),
            uncertain_buses: None,
            npfs: NpfsConfig::default(),
            rom: RomConfig::default(),
            workers: 1,
            out_dir: PathBuf::from("appf-out"),
            rng_algorithm: RNG_ALGORITHM.into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

impl RunConfig {
    pub fn ppf(&self) -> PpfConfig {
        PpfConfig { npfs: self.npfs.clone(), rom: self.rom.clone(), workers: self.workers }
    }

    pub fn network_format(&self) -> anyhow::Result<NetworkFormat> {
        match self.format {
            Some(f) => Ok(f),
            None => NetworkFormat::from_path(&self.network).map_err(|e| config_error(e.to_string())),
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.network.as_os_str().is_empty() {
            return Err(config_error("no network given (--network or APPF_NETWORK)"));
        }
        if !self.network.exists() {
            return Err(io_error(format!("network file {} does not exist", self.network.display())));
        }
        self.npfs.validate().map_err(|e| config_error(e.to_string()))?;
        let positive = [("eps_rms", self.rom.eps_rms), ("eps_basis", self.rom.eps_basis)];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(config_error(format!("{name} must be positive, got {v}")));
            }
        }
        if self.workers == 0 {
            return Err(config_error("workers must be at least 1"));
        }
        appf_core::sampling::validate(&self.sampling).map_err(|e| config_error(e.to_string()))?;
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        crate::output::write_json(&dir.join("config.json"), self)
    }
}

pub fn read_config(path: &Path) -> anyhow::Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn parse_policy(s: &str) -> Result<DUpdatePolicy, String> {
    match s {
        "full" => Ok(DUpdatePolicy::Full),
        "frozen" => Ok(DUpdatePolicy::Frozen),
        _ => match s.strip_prefix("every-").map(str::parse::<usize>) {
            Some(Ok(m)) if m > 0 => Ok(DUpdatePolicy::EveryM(m)),
            _ => Err(format!("expected full, frozen or every-M, got {s:?}")),
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CorrelationArg {
    None,
    Full,
    Matrix(PathBuf),
}

fn parse_correlation(s: &str) -> Result<CorrelationArg, String> {
    match s {
        "none" => Ok(CorrelationArg::None),
        "full" => Ok(CorrelationArg::Full),
        _ => match s.strip_prefix("matrix:") {
            Some(p) if !p.is_empty() => Ok(CorrelationArg::Matrix(PathBuf::from(p))),
            _ => Err(format!("expected none, full or matrix:PATH, got {s:?}")),
        },
    }
}

#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// Network file: a JSON document or the Y-bus CSV of a bundle.
    #[arg(long, env = "APPF_NETWORK")]
    pub network: Option<PathBuf>,
    /// Overrides the format guessed from the extension.
    #[arg(long, env = "APPF_FORMAT", value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for NetworkFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => NetworkFormat::Json,
            FormatArg::Csv => NetworkFormat::YbusCsv,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    /// Newton stopping tolerance on the mismatch, per unit.
    #[arg(long, env = "APPF_EPS_NEWTON")]
    pub eps_newton: Option<f64>,
    /// Neumann terms per step.
    #[arg(long, env = "APPF_K_NEUMANN")]
    pub k_neumann: Option<usize>,
    #[arg(long, env = "APPF_MAX_NEWTON_ITERS")]
    pub max_newton_iters: Option<usize>,
    /// full, frozen or every-M.
    #[arg(long, env = "APPF_D_UPDATE", value_parser = parse_policy)]
    pub d_update: Option<DUpdatePolicy>,
    /// Log a warning when the convergence margin is below 10.
    #[arg(long, env = "APPF_CHECK_MARGIN")]
    pub check_margin: Option<bool>,
}

#[derive(Args, Debug, Clone)]
pub struct RomArgs {
    /// Reduced residual tolerance.
    #[arg(long, env = "APPF_EPS_RMS")]
    pub eps_rms: Option<f64>,
    /// Basis expansion threshold.
    #[arg(long, env = "APPF_EPS_BASIS")]
    pub eps_basis: Option<f64>,
    /// Directions that keep their quadratic terms.
    #[arg(long, env = "APPF_N_Q")]
    pub n_q: Option<usize>,
    #[arg(long, env = "APPF_MAX_RMS_ITERS")]
    pub max_rms_iters: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SamplingArgs {
    #[arg(long, env = "APPF_SAMPLES")]
    pub samples: Option<usize>,
    #[arg(long, env = "APPF_SIGMA")]
    pub sigma: Option<f64>,
    #[arg(long, env = "APPF_SEED")]
    pub seed: Option<u64>,
    /// none, full or matrix:PATH (JSON array of rows).
    #[arg(long, env = "APPF_CORRELATION", value_parser = parse_correlation)]
    pub correlation: Option<CorrelationArg>,
    /// Perturb the k largest loads.
    #[arg(long, env = "APPF_TOP_K", conflicts_with = "uncertain")]
    pub top_k: Option<usize>,
    /// Comma-separated full slot indices of the uncertain loads.
    #[arg(long, env = "APPF_UNCERTAIN", value_delimiter = ',')]
    pub uncertain: Option<Vec<usize>>,
    /// Scale applied to the loads outside the uncertain set.
    #[arg(long, env = "APPF_FIXED_SCALE")]
    pub fixed_scale: Option<f64>,
    /// Draw P and Q of one load independently or share one draw.
    #[arg(long, env = "APPF_PQ_DRAWS", value_enum)]
    pub pq_draws: Option<PqArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum PqArg {
    Independent,
    Shared,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// JSON run configuration; flags and APPF_* variables override it.
    #[arg(long, env = "APPF_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub rom: RomArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Baseline worker threads.
    #[arg(long, env = "APPF_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, env = "APPF_OUT")]
    pub out: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunArgs {
    pub fn resolve(&self, mode: Mode) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => read_config(p)?,
            None => RunConfig::default(),
        };
        c.mode = mode;
        c.rng_algorithm = RNG_ALGORITHM.into();
        c.version = env!("CARGO_PKG_VERSION").into();
        apply_net(&mut c, &self.net);
        apply_solver(&mut c.npfs, &self.solver);
        let r = &self.rom;
        set(&mut c.rom.eps_rms, r.eps_rms);
        set(&mut c.rom.eps_basis, r.eps_basis);
        set(&mut c.rom.n_q, r.n_q);
        set(&mut c.rom.max_rms_iters, r.max_rms_iters);
        let s = &self.sampling;
        set(&mut c.sampling.num_samples, s.samples);
        set(&mut c.sampling.sigma, s.sigma);
        set(&mut c.sampling.seed, s.seed);
        set(&mut c.sampling.fixed_scale, s.fixed_scale);
        if let Some(p) = s.pq_draws {
            c.sampling.pq_draws = match p {
                PqArg::Independent => PqDraws::Independent,
                PqArg::Shared => PqDraws::Shared,
            };
        }
        if let Some(k) = s.top_k {
            c.sampling.uncertain_set = UncertainSet::TopK(k);
            c.uncertain_buses = None;
        }
        if let Some(u) = &s.uncertain {
            c.uncertain_buses = Some(u.clone());
        }
        match &s.correlation {
            Some(CorrelationArg::None) => c.sampling.correlation = Correlation::None,
            Some(CorrelationArg::Full) => c.sampling.correlation = Correlation::Full,
            Some(CorrelationArg::Matrix(p)) => {
                let text = std::fs::read_to_string(p).map_err(|e| io_error(format!("{}: {e}", p.display())))?;
                let m: Vec<Vec<f64>> =
                    serde_json::from_str(&text).with_context(|| format!("correlation matrix {}", p.display())).map_err(|e| config_error(format!("{e:#}")))?;
                c.sampling.correlation = Correlation::Matrix(m);
            }
            None => {}
        }
        set(&mut c.workers, self.workers);
        set(&mut c.out_dir, self.out.clone());
        c.validate()?;
        Ok(c)
    }
}

pub fn apply_net(c: &mut RunConfig, net: &NetArgs) {
    set(&mut c.network, net.network.clone());
    if let Some(f) = net.format {
        c.format = Some(f.into());
    }
}

pub fn apply_solver(n: &mut NpfsConfig, s: &SolverArgs) {
    set(&mut n.eps_newton, s.eps_newton);
    set(&mut n.k_neumann, s.k_neumann);
    set(&mut n.max_newton_iters, s.max_newton_iters);
    set(&mut n.d_update_policy, s.d_update);
    set(&mut n.check_margin, s.check_margin);
}

/// Maps full slot indices to the reduced positions used by the sampler.
pub fn reduced_uncertain_set(net: &appf_core::NetworkModel, buses: &[usize]) -> anyhow::Result<UncertainSet> {
    let mut out = Vec::with_capacity(buses.len());
    for &b in buses {
        match net.full_to_reduced().get(b) {
            Some(Some(i)) => out.push(*i),
            Some(None) => bail!(config_error(format!("bus {b} is a substation slot and cannot carry an uncertain load"))),
            None => bail!(config_error(format!("bus {b} out of range ({} slots)", net.n_total()))),
        }
    }
    Ok(UncertainSet::Explicit(out))
}
