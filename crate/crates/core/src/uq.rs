//! Statistics over a finished probabilistic run: voltage envelopes,
//! histograms, branch currents and the singular values of the solution matrix.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::appf::PpfResult;
use crate::netmodel::{BusId, NetworkModel};

pub const DEFAULT_BINS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum UqError {
    #[error("no series element between slots {from} and {to} in the Y-bus")]
    NoEdge { from: usize, to: usize },
    #[error("slot {slot} is labeled {expected} but the network has {found}")]
    PhaseMismatch { slot: usize, expected: String, found: String },
    #[error("slot {slot} out of range (network has {size} slots)")]
    SlotOutOfRange { slot: usize, size: usize },
    #[error("result has {got} buses per solution, network has {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Invalid(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Equal-width bins: `edges.len() == counts.len() + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Bins over the observed range. A degenerate range is widened by ±0.5
    /// so every value lands in a bin of positive width.
    pub fn from_values(values: impl IntoIterator<Item = f64> + Clone, bins: usize) -> Result<Self, UqError> {
        if bins == 0 {
            return Err(UqError::Invalid("histogram needs at least one bin".into()));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.clone() {
            if !v.is_finite() {
                return Err(UqError::Invalid(format!("non-finite value {v} in histogram input")));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return Err(UqError::Invalid("histogram of an empty set".into()));
        }
        if hi == lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let width = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|b| lo + width * b as f64).collect();
        edges[bins] = hi;
        let mut counts = vec![0u64; bins];
        for v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Self { edges, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchHistogram {
    /// Full slot indices.
    pub from: usize,
    pub to: usize,
    /// Series admittance recovered as `−Y[from, to]`.
    pub admittance: Complex64,
    /// `|I|` per sample, per unit.
    pub currents: Vec<f64>,
    pub stats: NodeStats,
    pub histogram: Histogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UqSummary {
    /// Indexed like the reduced buses.
    pub per_node: Vec<NodeStats>,
    /// Full slot index of each entry in `per_node`.
    pub buses: Vec<usize>,
    /// All `n·M` voltage magnitudes.
    pub histogram: Histogram,
    pub branch_histograms: Vec<BranchHistogram>,
    /// Descending; empty until filled by [`singular_values`].
    pub singular_values: Vec<f64>,
}

impl UqSummary {
    /// Node positions ordered by mean magnitude, ascending.
    pub fn sorted_by_mean(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.per_node.len()).collect();
        order.sort_by(|&a, &b| self.per_node[a].mean.total_cmp(&self.per_node[b].mean).then(a.cmp(&b)));
        order
    }
}

fn stats(values: impl Iterator<Item = f64>) -> NodeStats {
    let (mut min, mut max, mut sum, mut count) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    let v: Vec<f64> = values.collect();
    for &x in &v {
        min = min.min(x);
        max = max.max(x);
        sum += x;
        count += 1;
    }
    let mean = sum / count as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64;
    NodeStats { min, max, mean, std: var.sqrt() }
}

/// Per-node envelopes and the pooled magnitude histogram. Bus labels come
/// from `net` when given, otherwise reduced indices are used.
pub fn summarize(result: &PpfResult, net: Option<&NetworkModel>, bins: usize) -> Result<UqSummary, UqError> {
    let n = result.n();
    let m = result.num_samples();
    if m == 0 {
        return Err(UqError::Invalid("result has no samples".into()));
    }
    if let Some(net) = net {
        if net.n() != n {
            return Err(UqError::SizeMismatch { expected: net.n(), got: n });
        }
    }
    let per_node = (0..n).map(|i| stats(result.solutions.iter().map(|x| x[i]))).collect();
    let histogram = Histogram::from_values(result.solutions.iter().flat_map(|x| x[..n].iter().copied()), bins)?;
    let buses = match net {
        Some(net) => net.reduced_to_full().to_vec(),
        None => (0..n).collect(),
    };
    Ok(UqSummary { per_node, buses, histogram, branch_histograms: Vec::new(), singular_values: Vec::new() })
}

fn check_slot(net: &NetworkModel, b: BusId) -> Result<(), UqError> {
    if b.index >= net.n_total() {
        return Err(UqError::SlotOutOfRange { slot: b.index, size: net.n_total() });
    }
    if let (Some(want), Some(have)) = (b.phase, net.phases()[b.index]) {
        if want != have {
            return Err(UqError::PhaseMismatch {
                slot: b.index,
                expected: want.label().into(),
                found: have.label().into(),
            });
        }
    }
    Ok(())
}

/// Full-slot voltage of `slot` in sample `m`.
fn slot_voltage(net: &NetworkModel, result: &PpfResult, m: usize, slot: usize) -> Complex64 {
    match net.full_to_reduced()[slot] {
        Some(i) => {
            let n = result.n();
            Complex64::from_polar(result.solutions[m][i], result.solutions[m][n + i])
        }
        None => {
            let k = net.substation_slots().iter().position(|&s| s == slot).expect("unreduced slot is a substation slot");
            net.substation_voltage()[k]
        }
    }
}

/// `|y·(V_from − V_to)|` per sample with `y = −Y[from, to]`.
pub fn branch_current_stats(
    net: &NetworkModel,
    result: &PpfResult,
    from: BusId,
    to: BusId,
    bins: usize,
) -> Result<BranchHistogram, UqError> {
    check_slot(net, from)?;
    check_slot(net, to)?;
    if result.n() != net.n() {
        return Err(UqError::SizeMismatch { expected: net.n(), got: result.n() });
    }
    let y = -net.ybus_full().get(from.index, to.index);
    if from.index == to.index || y == Complex64::new(0.0, 0.0) {
        return Err(UqError::NoEdge { from: from.index, to: to.index });
    }
    let currents: Vec<f64> = (0..result.num_samples())
        .map(|m| (y * (slot_voltage(net, result, m, from.index) - slot_voltage(net, result, m, to.index))).norm())
        .collect();
    if currents.is_empty() {
        return Err(UqError::Invalid("result has no samples".into()));
    }
    let histogram = Histogram::from_values(currents.iter().copied(), bins)?;
    Ok(BranchHistogram {
        from: from.index,
        to: to.index,
        admittance: y,
        stats: stats(currents.iter().copied()),
        currents,
        histogram,
    })
}

/// The `2n×M` matrix of Cartesian-stacked solutions `(Re V; Im V)`.
pub fn solution_matrix(result: &PpfResult) -> DMatrix<f64> {
    let n = result.n();
    let mut w = DMatrix::zeros(2 * n, result.num_samples());
    for (m, x) in result.solutions.iter().enumerate() {
        for i in 0..n {
            let (s, c) = x[n + i].sin_cos();
            w[(i, m)] = x[i] * c;
            w[(n + i, m)] = x[i] * s;
        }
    }
    w
}

/// Largest `count` singular values of `w`, descending.
pub fn singular_values_of(w: &DMatrix<f64>, count: usize) -> Vec<f64> {
    if w.ncols() == 0 || w.nrows() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = w.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(count);
    sv
}

pub fn singular_values(result: &PpfResult, count: usize) -> Vec<f64> {
    singular_values_of(&solution_matrix(result), count)
}

/// Number of singular values above `rel · σ₁`.
pub fn numerical_rank(sv: &[f64], rel: f64) -> usize {
    match sv.first() {
        Some(&s1) if s1 > 0.0 => sv.iter().take_while(|&&s| s > rel * s1).count(),
        _ => 0,
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> UqError {
    UqError::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn write_summary_json(path: &Path, summary: &UqSummary) -> Result<(), UqError> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), summary).map_err(|e| io_err(path, e))
}

/// `bin_lo,bin_hi,count` per bin.
pub fn write_histogram_csv(path: &Path, h: &Histogram) -> Result<(), UqError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["bin_lo", "bin_hi", "count"]).map_err(|e| io_err(path, e))?;
    for (b, c) in h.counts.iter().enumerate() {
        w.write_record([h.edges[b].to_string(), h.edges[b + 1].to_string(), c.to_string()])
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// `bus,min,max,mean,std` per node.
pub fn write_node_stats_csv(path: &Path, summary: &UqSummary) -> Result<(), UqError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(["bus", "min", "max", "mean", "std"]).map_err(|e| io_err(path, e))?;
    for (s, bus) in summary.per_node.iter().zip(&summary.buses) {
        w.write_record([bus.to_string(), s.min.to_string(), s.max.to_string(), s.mean.to_string(), s.std.to_string()])
            .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}
