//! Network definition: Y-bus assembly, substation reduction and node-phase indexing.

mod io;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::sparla::CsrMatrix;

pub use io::{load_network, write_network, NetworkFormat};

/// Relative tolerance for accepting an ingested Y-bus as symmetric.
pub const YBUS_SYMMETRY_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("line {line}: endpoint slot {slot} appears on both ends")]
    SelfLoop { line: usize, slot: usize },
    #[error("line {line}: admittance is not finite")]
    NonFiniteAdmittance { line: usize },
    #[error("line {line}: admittance is zero")]
    ZeroAdmittance { line: usize },
    #[error("line {line}: phase block is {got} entries, expected {expected}")]
    BlockShape { line: usize, expected: usize, got: usize },
    #[error("{what} index {index} out of range (size {size})")]
    IndexOutOfRange { what: &'static str, index: usize, size: usize },
    #[error("shunt vector has length {got}, expected {expected}")]
    ShuntLength { expected: usize, got: usize },
    #[error("shunt at slot {slot} is not finite")]
    NonFiniteShunt { slot: usize },
    #[error("no substation slots given")]
    NoSubstation,
    #[error("substation slot {slot} has no voltage phasor")]
    MissingSubstationVoltage { slot: usize },
    #[error("substation slot {slot} listed twice")]
    DuplicateSubstationSlot { slot: usize },
    #[error("substation voltage at slot {slot} is not finite")]
    NonFiniteSubstationVoltage { slot: usize },
    #[error("Y-bus is asymmetric at ({row}, {col}): |difference| {diff:e} exceeds tolerance {tol:e}")]
    AsymmetricYbus { row: usize, col: usize, diff: f64, tol: f64 },
    #[error("Y-bus entry ({row}, {col}) is not finite")]
    NonFiniteYbus { row: usize, col: usize },
    #[error("node-phase slot {slot} has an empty row in the reduced Y-bus")]
    EmptyRow { slot: usize },
    #[error("load at slot {slot} sits on a substation slot")]
    LoadAtSubstation { slot: usize },
    #[error("load at slot {slot} is not finite")]
    NonFiniteLoad { slot: usize },
    #[error("{field} has length {got}, expected {expected}")]
    LengthMismatch { field: &'static str, expected: usize, got: usize },
    #[error("unknown phase label {0:?} (expected a, b or c)")]
    BadPhase(String),
    #[error("schema error in {path}: {message}")]
    Schema { path: String, message: String },
    #[error("cannot infer network format from {0:?}; use json or ybus-csv")]
    UnknownFormat(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Phase tag of a node-phase slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    /// Nominal angle of a balanced positive-sequence set, radians.
    pub fn nominal_angle(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * std::f64::consts::FRAC_PI_3,
            Phase::C => 2.0 * std::f64::consts::FRAC_PI_3,
        }
    }

    pub fn parse(s: &str) -> Result<Self, NetworkError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a" => Ok(Phase::A),
            "b" => Ok(Phase::B),
            "c" => Ok(Phase::C),
            _ => Err(NetworkError::BadPhase(s.to_string())),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        }
    }
}

/// A node-phase slot in the full (unreduced) indexing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BusId {
    pub index: usize,
    pub phase: Option<Phase>,
}

impl BusId {
    pub fn new(index: usize) -> Self {
        Self { index, phase: None }
    }

    pub fn phased(index: usize, phase: Phase) -> Self {
        Self { index, phase: Some(phase) }
    }
}

/// Series element between two sets of node-phase slots.
///
/// A single-phase line has one slot per end and a 1×1 block; a k-phase
/// line carries a dense k×k row-major admittance block coupling its phases.
#[derive(Clone, Debug, PartialEq)]
pub struct LineRecord {
    pub from: Vec<BusId>,
    pub to: Vec<BusId>,
    pub admittance: Vec<Complex64>,
}

impl LineRecord {
    pub fn single(from: BusId, to: BusId, y: Complex64) -> Self {
        Self { from: vec![from], to: vec![to], admittance: vec![y] }
    }

    pub fn phased(from: Vec<BusId>, to: Vec<BusId>, block: Vec<Complex64>) -> Self {
        Self { from, to, admittance: block }
    }

    pub fn phases(&self) -> usize {
        self.from.len()
    }
}

/// Per-unit complex power injections over the non-substation slots.
///
/// Consumption is a negative injection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl LoadProfile {
    pub fn zeros(n: usize) -> Self {
        Self { p: vec![0.0; n], q: vec![0.0; n] }
    }

    pub fn from_complex(s: &[Complex64]) -> Self {
        Self { p: s.iter().map(|v| v.re).collect(), q: s.iter().map(|v| v.im).collect() }
    }

    /// Splits a stacked `(P; Q)` vector.
    pub fn from_stacked(s: &[f64]) -> Self {
        let n = s.len() / 2;
        Self { p: s[..n].to_vec(), q: s[n..].to_vec() }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.p.iter().zip(&self.q).map(|(&p, &q)| Complex64::new(p, q)).collect()
    }

    /// `(P; Q)` stacked, length `2n`.
    pub fn stacked(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.len());
        out.extend_from_slice(&self.p);
        out.extend_from_slice(&self.q);
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { p: self.p.iter().map(|v| v * factor).collect(), q: self.q.iter().map(|v| v * factor).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(&self.q).all(|v| v.is_finite())
    }
}

/// Assembles `Ȳ_b = ĒᵀY_lĒ + Ȳ_s` by stamping each line.
pub fn build_ybus(
    lines: &[LineRecord],
    shunts: Option<&[Complex64]>,
    n_total: usize,
) -> Result<CsrMatrix<Complex64>, NetworkError> {
    let mut trip = Vec::new();
    for (l, line) in lines.iter().enumerate() {
        let k = line.from.len();
        if line.to.len() != k || k == 0 {
            return Err(NetworkError::BlockShape { line: l, expected: k * k, got: line.admittance.len() });
        }
        if line.admittance.len() != k * k {
            return Err(NetworkError::BlockShape { line: l, expected: k * k, got: line.admittance.len() });
        }
        for b in line.from.iter().chain(&line.to) {
            if b.index >= n_total {
                return Err(NetworkError::IndexOutOfRange { what: "line endpoint", index: b.index, size: n_total });
            }
        }
        if let Some(b) = line.from.iter().find(|f| line.to.iter().any(|t| t.index == f.index)) {
            return Err(NetworkError::SelfLoop { line: l, slot: b.index });
        }
        if line.admittance.iter().any(|y| !y.re.is_finite() || !y.im.is_finite()) {
            return Err(NetworkError::NonFiniteAdmittance { line: l });
        }
        if line.admittance.iter().all(|y| *y == Complex64::new(0.0, 0.0)) {
            return Err(NetworkError::ZeroAdmittance { line: l });
        }
        for a in 0..k {
            for b in 0..k {
                let y = line.admittance[a * k + b];
                let (fa, fb) = (line.from[a].index, line.from[b].index);
                let (ta, tb) = (line.to[a].index, line.to[b].index);
                trip.push((fa, fb, y));
                trip.push((ta, tb, y));
                trip.push((fa, tb, -y));
                trip.push((ta, fb, -y));
            }
        }
    }
    if let Some(sh) = shunts {
        if sh.len() != n_total {
            return Err(NetworkError::ShuntLength { expected: n_total, got: sh.len() });
        }
        for (i, &y) in sh.iter().enumerate() {
            if !y.re.is_finite() || !y.im.is_finite() {
                return Err(NetworkError::NonFiniteShunt { slot: i });
            }
            if y != Complex64::new(0.0, 0.0) {
                trip.push((i, i, y));
            }
        }
    }
    Ok(CsrMatrix::from_triplets(n_total, n_total, &trip))
}

/// Full-network data before the substation slots are eliminated.
#[derive(Clone, Debug)]
pub struct NetworkBuilder {
    pub ybus_full: CsrMatrix<Complex64>,
    /// Shunt diagonal over all slots, if known separately from the lines.
    pub shunts: Option<Vec<Complex64>>,
    pub base_power_kw: f64,
    /// Base voltage per slot, kV; `0` when unspecified.
    pub base_kv: Vec<f64>,
    pub phases: Vec<Option<Phase>>,
    /// Loads as `(full slot, injection)`; repeated slots accumulate.
    pub loads: Vec<(usize, Complex64)>,
}

impl NetworkBuilder {
    pub fn new(ybus_full: CsrMatrix<Complex64>) -> Self {
        let n = ybus_full.nrows();
        Self { ybus_full, shunts: None, base_power_kw: 100.0, base_kv: vec![0.0; n], phases: vec![None; n], loads: Vec::new() }
    }

    pub fn from_lines(lines: &[LineRecord], shunts: Option<Vec<Complex64>>, n_total: usize) -> Result<Self, NetworkError> {
        let y = build_ybus(lines, shunts.as_deref(), n_total)?;
        let mut b = Self::new(y);
        b.shunts = shunts;
        for line in lines {
            for id in line.from.iter().chain(&line.to) {
                if id.phase.is_some() {
                    b.phases[id.index] = id.phase;
                }
            }
        }
        Ok(b)
    }

    pub fn n_total(&self) -> usize {
        self.ybus_full.nrows()
    }
}

/// Immutable per-unit network with the substation slots eliminated.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    n_total: usize,
    ybus_full: CsrMatrix<Complex64>,
    ybus_reduced: CsrMatrix<Complex64>,
    sub_coupling: CsrMatrix<Complex64>,
    shunt_diag: Option<Vec<Complex64>>,
    substation_slots: Vec<usize>,
    substation_voltage: Vec<Complex64>,
    /// `sub_coupling · V_sub`, constant for the network.
    sub_current: Vec<Complex64>,
    base_power_kw: f64,
    base_kv: Vec<f64>,
    phases: Vec<Option<Phase>>,
    reduced_to_full: Vec<usize>,
    full_to_reduced: Vec<Option<usize>>,
    nominal_loads: LoadProfile,
}

/// Eliminates the substation slots, fixing their voltages.
pub fn reduce_network(
    builder: NetworkBuilder,
    substation_slots: &[usize],
    substation_voltage: &[Complex64],
) -> Result<NetworkModel, NetworkError> {
    let n_total = builder.n_total();
    if substation_slots.is_empty() {
        return Err(NetworkError::NoSubstation);
    }
    let mut full_to_reduced = vec![Some(0); n_total];
    let mut sub_map = vec![None; n_total];
    for (k, &s) in substation_slots.iter().enumerate() {
        if s >= n_total {
            return Err(NetworkError::IndexOutOfRange { what: "substation slot", index: s, size: n_total });
        }
        if sub_map[s].is_some() {
            return Err(NetworkError::DuplicateSubstationSlot { slot: s });
        }
        let v = substation_voltage.get(k).ok_or(NetworkError::MissingSubstationVoltage { slot: s })?;
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(NetworkError::NonFiniteSubstationVoltage { slot: s });
        }
        if !(0.8..=1.2).contains(&v.norm()) {
            log::warn!("substation slot {s} voltage magnitude {:.4} is far from 1 pu; check per-unitization", v.norm());
        }
        sub_map[s] = Some(k);
        full_to_reduced[s] = None;
    }
    if substation_voltage.len() > substation_slots.len() {
        return Err(NetworkError::LengthMismatch {
            field: "substation voltages",
            expected: substation_slots.len(),
            got: substation_voltage.len(),
        });
    }
    let mut reduced_to_full = Vec::with_capacity(n_total - substation_slots.len());
    for (i, m) in full_to_reduced.iter_mut().enumerate() {
        if m.is_some() {
            *m = Some(reduced_to_full.len());
            reduced_to_full.push(i);
        }
    }
    let n = reduced_to_full.len();
    let n_sub = substation_slots.len();
    for (i, j, v) in builder.ybus_full.triplets() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(NetworkError::NonFiniteYbus { row: i, col: j });
        }
    }
    let ybus_reduced = builder.ybus_full.select(&full_to_reduced, n, &full_to_reduced, n);
    let sub_coupling = builder.ybus_full.select(&full_to_reduced, n, &sub_map, n_sub);
    for r in 0..n {
        if ybus_reduced.row(r).all(|(_, v)| v == Complex64::new(0.0, 0.0)) {
            return Err(NetworkError::EmptyRow { slot: reduced_to_full[r] });
        }
    }
    if builder.base_kv.len() != n_total {
        return Err(NetworkError::LengthMismatch { field: "bus_base_kv", expected: n_total, got: builder.base_kv.len() });
    }
    if builder.phases.len() != n_total {
        return Err(NetworkError::LengthMismatch { field: "phases", expected: n_total, got: builder.phases.len() });
    }
    if let Some(sh) = &builder.shunts {
        if sh.len() != n_total {
            return Err(NetworkError::ShuntLength { expected: n_total, got: sh.len() });
        }
    }
    let mut loads = vec![Complex64::new(0.0, 0.0); n];
    for &(slot, s) in &builder.loads {
        if slot >= n_total {
            return Err(NetworkError::IndexOutOfRange { what: "load bus", index: slot, size: n_total });
        }
        if !s.re.is_finite() || !s.im.is_finite() {
            return Err(NetworkError::NonFiniteLoad { slot });
        }
        match full_to_reduced[slot] {
            Some(r) => loads[r] += s,
            None => return Err(NetworkError::LoadAtSubstation { slot }),
        }
    }
    let substation_voltage = substation_voltage.to_vec();
    let sub_current = sub_coupling.mul_vec(&substation_voltage);
    Ok(NetworkModel {
        n_total,
        ybus_full: builder.ybus_full,
        ybus_reduced,
        sub_coupling,
        shunt_diag: builder.shunts,
        substation_slots: substation_slots.to_vec(),
        substation_voltage,
        sub_current,
        base_power_kw: builder.base_power_kw,
        base_kv: builder.base_kv,
        phases: builder.phases,
        reduced_to_full,
        full_to_reduced,
        nominal_loads: LoadProfile::from_complex(&loads),
    })
}

impl NetworkModel {
    /// Number of unknown node-phases.
    pub fn n(&self) -> usize {
        self.reduced_to_full.len()
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn ybus_full(&self) -> &CsrMatrix<Complex64> {
        &self.ybus_full
    }

    pub fn ybus_reduced(&self) -> &CsrMatrix<Complex64> {
        &self.ybus_reduced
    }

    pub fn sub_coupling(&self) -> &CsrMatrix<Complex64> {
        &self.sub_coupling
    }

    /// Shunt diagonal over all slots, when it was supplied separately.
    pub fn shunt_diag(&self) -> Option<&[Complex64]> {
        self.shunt_diag.as_deref()
    }

    /// Shunt diagonal restricted to the non-substation slots.
    pub fn shunt_reduced(&self) -> Option<Vec<Complex64>> {
        self.shunt_diag.as_ref().map(|sh| self.reduced_to_full.iter().map(|&f| sh[f]).collect())
    }

    pub fn substation_slots(&self) -> &[usize] {
        &self.substation_slots
    }

    pub fn substation_voltage(&self) -> &[Complex64] {
        &self.substation_voltage
    }

    /// Current drawn into each non-substation slot from the fixed substation voltages.
    pub fn substation_current(&self) -> &[Complex64] {
        &self.sub_current
    }

    pub fn base_power_kw(&self) -> f64 {
        self.base_power_kw
    }

    pub fn base_kv(&self) -> &[f64] {
        &self.base_kv
    }

    pub fn phases(&self) -> &[Option<Phase>] {
        &self.phases
    }

    /// Full-index bus for reduced index `i`.
    pub fn bus_id(&self, i: usize) -> BusId {
        let f = self.reduced_to_full[i];
        BusId { index: f, phase: self.phases[f] }
    }

    pub fn reduced_to_full(&self) -> &[usize] {
        &self.reduced_to_full
    }

    pub fn full_to_reduced(&self) -> &[Option<usize>] {
        &self.full_to_reduced
    }

    pub fn nominal_loads(&self) -> &LoadProfile {
        &self.nominal_loads
    }

    /// Same network with a different nominal load profile.
    pub fn with_nominal_loads(&self, loads: LoadProfile) -> Result<Self, NetworkError> {
        if loads.len() != self.n() {
            return Err(NetworkError::LengthMismatch { field: "loads", expected: self.n(), got: loads.len() });
        }
        if !loads.is_finite() {
            return Err(NetworkError::NonFiniteLoad { slot: usize::MAX });
        }
        Ok(Self { nominal_loads: loads, ..self.clone() })
    }

    /// Flat-start angle of reduced slot `i`: its phase's angle relative to the
    /// substation's phase-A reference, or the first substation angle if unlabeled.
    pub fn flat_angle(&self, i: usize) -> f64 {
        let reference = self.substation_voltage[0].arg()
            - self.phases[self.substation_slots[0]].map_or(0.0, Phase::nominal_angle);
        match self.phases[self.reduced_to_full[i]] {
            Some(p) => {
                let a = reference + p.nominal_angle();
                a.sin().atan2(a.cos())
            }
            None => self.substation_voltage[0].arg(),
        }
    }
}
