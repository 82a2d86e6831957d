//! Output bundle helpers and the per-phase timing report.

use std::path::Path;

use appf_core::appf::SolvePath;
use appf_core::PpfResult;
use serde::Serialize;

use crate::failure::io_error;

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(format!("{}: {e}", dir.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| io_error(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| io_error(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct PathCounts {
    pub rms_only: usize,
    pub rms_then_npfs: usize,
    pub npfs_only: usize,
    pub newton: usize,
}

/// Wall-clock split of a run, in seconds.
#[derive(Debug, Serialize)]
pub struct Timing {
    /// Factorization or symbolic analysis plus the nominal solve.
    pub setup: f64,
    pub total: f64,
    pub mean_per_sample: f64,
    /// Inside full-space Newton or NPFS solves.
    pub newton: f64,
    /// Samples that grew the basis, end to end.
    pub expansion_samples: f64,
    pub rms_only_samples: f64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub method: appf_core::Method,
    pub samples: usize,
    pub nodes: usize,
    pub rom_final_q: usize,
    pub expansions: usize,
    pub steady_state_start: usize,
    pub max_residual: f64,
    pub paths: PathCounts,
    pub timing: Timing,
}

pub fn summarize_run(r: &PpfResult) -> RunSummary {
    let count = |p: SolvePath| r.records.iter().filter(|x| x.path == p).count();
    let secs = |f: &dyn Fn(&appf_core::RunRecord) -> bool| {
        r.records.iter().filter(|x| f(x)).map(|x| x.wall_time.as_secs_f64()).sum::<f64>()
    };
    let all = secs(&|_| true);
    RunSummary {
        method: r.method,
        samples: r.num_samples(),
        nodes: r.n(),
        rom_final_q: r.rom_final_q,
        expansions: r.records.iter().filter(|x| x.expanded_basis).count(),
        steady_state_start: r.steady_state_start(),
        max_residual: r.records.iter().map(|x| x.final_residual_inf).fold(0.0, f64::max),
        paths: PathCounts {
            rms_only: count(SolvePath::RmsOnly),
            rms_then_npfs: count(SolvePath::RmsThenNpfs),
            npfs_only: count(SolvePath::NpfsOnly),
            newton: count(SolvePath::Newton),
        },
        timing: Timing {
            setup: r.setup_time.as_secs_f64(),
            total: r.total_time.as_secs_f64(),
            mean_per_sample: if r.records.is_empty() { 0.0 } else { all / r.records.len() as f64 },
            newton: r.records.iter().map(|x| x.newton_time.as_secs_f64()).sum(),
            expansion_samples: secs(&|x| x.expanded_basis),
            rms_only_samples: secs(&|x| x.path == SolvePath::RmsOnly),
        },
    }
}
