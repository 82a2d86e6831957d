//! Network interchange: a single JSON document, or a CSV triplet file with siblings.
//!
//! CSV layout (1-based indices throughout), all files in one directory:
//! - the Y-bus file itself: `row,col,G,B`, both triangles present;
//! - `loads.csv`: `bus,P_pu,Q_pu`;
//! - `substation.csv`: `slot,V_re,V_im`;
//! - optional `shunts.csv`: `bus,G,B`;
//! - optional `buses.csv`: `bus,phase,base_kv` (phase may be empty).
//!
//! CSV bundles carry no base power; 100 kW is assumed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{reduce_network, NetworkBuilder, NetworkError, NetworkModel, Phase, YBUS_SYMMETRY_TOL};
use crate::sparla::CsrMatrix;

const CSV_BASE_POWER_KW: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NetworkFormat {
    Json,
    YbusCsv,
}

impl NetworkFormat {
    /// Guesses from the file extension.
    pub fn from_path(path: &Path) -> Result<Self, NetworkError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("json") => Ok(Self::Json),
            Some("csv") => Ok(Self::YbusCsv),
            _ => Err(NetworkError::UnknownFormat(path.display().to_string())),
        }
    }
}

impl FromStr for NetworkFormat {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "ybus-csv" | "csv" => Ok(Self::YbusCsv),
            other => Err(NetworkError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    n_total: usize,
    base_power_kw: f64,
    substation: SubstationFile,
    ybus: YbusFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shunts: Option<ShuntFile>,
    loads: Vec<(usize, f64, f64)>,
    #[serde(default)]
    bus_base_kv: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phases: Option<Vec<Option<String>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubstationFile {
    slots: Vec<usize>,
    voltages: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct YbusFile {
    triplets: Vec<(usize, usize, f64, f64)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ShuntFile {
    triplets: Vec<(usize, f64, f64)>,
}

fn io_err(path: &Path, source: std::io::Error) -> NetworkError {
    NetworkError::Io { path: path.display().to_string(), source }
}

fn schema(path: &Path, message: impl ToString) -> NetworkError {
    NetworkError::Schema { path: path.display().to_string(), message: message.to_string() }
}

/// Reads and validates a network. Values must already be per-unit.
pub fn load_network(path: &Path, format: NetworkFormat) -> Result<NetworkModel, NetworkError> {
    match format {
        NetworkFormat::Json => load_json(path),
        NetworkFormat::YbusCsv => load_csv(path),
    }
}

/// Writes `net` so that [`load_network`] reproduces it exactly.
pub fn write_network(net: &NetworkModel, path: &Path, format: NetworkFormat) -> Result<(), NetworkError> {
    match format {
        NetworkFormat::Json => write_json(net, path),
        NetworkFormat::YbusCsv => write_csv(net, path),
    }
}

fn ybus_from_triplets(n: usize, trip: &[(usize, usize, f64, f64)]) -> Result<CsrMatrix<Complex64>, NetworkError> {
    let mut t = Vec::with_capacity(trip.len());
    for &(r, c, g, b) in trip {
        if r >= n || c >= n {
            return Err(NetworkError::IndexOutOfRange { what: "ybus triplet", index: r.max(c), size: n });
        }
        if !g.is_finite() || !b.is_finite() {
            return Err(NetworkError::NonFiniteYbus { row: r, col: c });
        }
        t.push((r, c, Complex64::new(g, b)));
    }
    let y = CsrMatrix::from_triplets(n, n, &t);
    let tol = YBUS_SYMMETRY_TOL * y.max_abs();
    for (r, c, v) in y.triplets() {
        let diff = (v - y.get(c, r)).norm();
        if diff > tol {
            return Err(NetworkError::AsymmetricYbus { row: r, col: c, diff, tol });
        }
    }
    Ok(y)
}

fn load_json(path: &Path) -> Result<NetworkModel, NetworkError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let doc: NetworkFile = serde_json::from_reader(BufReader::new(f)).map_err(|e| {
        if e.is_io() {
            io_err(path, std::io::Error::other(e.to_string()))
        } else {
            schema(path, e)
        }
    })?;
    let n = doc.n_total;
    let ybus = ybus_from_triplets(n, &doc.ybus.triplets)?;
    let mut b = NetworkBuilder::new(ybus);
    if !doc.base_power_kw.is_finite() || doc.base_power_kw <= 0.0 {
        return Err(schema(path, "base_power_kw must be positive"));
    }
    b.base_power_kw = doc.base_power_kw;
    if let Some(sh) = doc.shunts {
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        for (i, g, bb) in sh.triplets {
            if i >= n {
                return Err(NetworkError::IndexOutOfRange { what: "shunt", index: i, size: n });
            }
            d[i] += Complex64::new(g, bb);
        }
        b.shunts = Some(d);
    }
    if !doc.bus_base_kv.is_empty() {
        if doc.bus_base_kv.len() != n {
            return Err(NetworkError::LengthMismatch { field: "bus_base_kv", expected: n, got: doc.bus_base_kv.len() });
        }
        b.base_kv = doc.bus_base_kv;
    }
    if let Some(ph) = doc.phases {
        if ph.len() != n {
            return Err(NetworkError::LengthMismatch { field: "phases", expected: n, got: ph.len() });
        }
        b.phases = ph.iter().map(|p| p.as_deref().map(Phase::parse).transpose()).collect::<Result<_, _>>()?;
    }
    b.loads = doc.loads.iter().map(|&(i, p, q)| (i, Complex64::new(p, q))).collect();
    let voltages: Vec<Complex64> = doc.substation.voltages.iter().map(|v| Complex64::new(v[0], v[1])).collect();
    reduce_network(b, &doc.substation.slots, &voltages)
}

fn nominal_loads_full(net: &NetworkModel) -> Vec<(usize, f64, f64)> {
    let l = net.nominal_loads();
    (0..net.n())
        .filter(|&i| l.p[i] != 0.0 || l.q[i] != 0.0)
        .map(|i| (net.reduced_to_full()[i], l.p[i], l.q[i]))
        .collect()
}

fn write_json(net: &NetworkModel, path: &Path) -> Result<(), NetworkError> {
    let doc = NetworkFile {
        n_total: net.n_total(),
        base_power_kw: net.base_power_kw(),
        substation: SubstationFile {
            slots: net.substation_slots().to_vec(),
            voltages: net.substation_voltage().iter().map(|v| [v.re, v.im]).collect(),
        },
        ybus: YbusFile { triplets: net.ybus_full().triplets().into_iter().map(|(r, c, v)| (r, c, v.re, v.im)).collect() },
        shunts: net.shunt_diag().map(|d| ShuntFile {
            triplets: d.iter().enumerate().filter(|(_, v)| v.norm() != 0.0).map(|(i, v)| (i, v.re, v.im)).collect(),
        }),
        loads: nominal_loads_full(net),
        bus_base_kv: net.base_kv().to_vec(),
        phases: net
            .phases()
            .iter()
            .any(Option::is_some)
            .then(|| net.phases().iter().map(|p| p.map(|p| p.label().to_string())).collect()),
    };
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer(&mut w, &doc).map_err(|e| io_err(path, std::io::Error::other(e)))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, NetworkError> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(f));
    rdr.deserialize().map(|r| r.map_err(|e| schema(path, e))).collect()
}

fn one_based(path: &Path, i: usize) -> Result<usize, NetworkError> {
    i.checked_sub(1).ok_or_else(|| schema(path, "indices are 1-based; found 0"))
}

#[derive(Serialize, Deserialize)]
struct YbusRow {
    row: usize,
    col: usize,
    #[serde(rename = "G")]
    g: f64,
    #[serde(rename = "B")]
    b: f64,
}

#[derive(Serialize, Deserialize)]
struct LoadRow {
    bus: usize,
    #[serde(rename = "P_pu")]
    p: f64,
    #[serde(rename = "Q_pu")]
    q: f64,
}

#[derive(Serialize, Deserialize)]
struct SubRow {
    slot: usize,
    #[serde(rename = "V_re")]
    re: f64,
    #[serde(rename = "V_im")]
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct ShuntRow {
    bus: usize,
    #[serde(rename = "G")]
    g: f64,
    #[serde(rename = "B")]
    b: f64,
}

#[derive(Serialize, Deserialize)]
struct BusRow {
    bus: usize,
    phase: Option<String>,
    base_kv: f64,
}

fn load_csv(path: &Path) -> Result<NetworkModel, NetworkError> {
    let rows: Vec<YbusRow> = read_rows(path)?;
    let loads_path = sibling(path, "loads.csv");
    let loads: Vec<LoadRow> = read_rows(&loads_path)?;
    let sub_path = sibling(path, "substation.csv");
    let subs: Vec<SubRow> = read_rows(&sub_path)?;

    let mut trip = Vec::with_capacity(rows.len());
    for r in &rows {
        trip.push((one_based(path, r.row)?, one_based(path, r.col)?, r.g, r.b));
    }
    let mut n = trip.iter().map(|t| t.0.max(t.1) + 1).max().unwrap_or(0);
    let buses_path = sibling(path, "buses.csv");
    let buses: Vec<BusRow> = if buses_path.exists() { read_rows(&buses_path)? } else { Vec::new() };
    n = n.max(buses.len());
    let ybus = ybus_from_triplets(n, &trip)?;
    let mut b = NetworkBuilder::new(ybus);
    b.base_power_kw = CSV_BASE_POWER_KW;
    for r in &buses {
        let i = one_based(&buses_path, r.bus)?;
        if i >= n {
            return Err(NetworkError::IndexOutOfRange { what: "bus", index: i, size: n });
        }
        b.base_kv[i] = r.base_kv;
        b.phases[i] = match r.phase.as_deref() {
            None | Some("") => None,
            Some(s) => Some(Phase::parse(s)?),
        };
    }
    let shunt_path = sibling(path, "shunts.csv");
    if shunt_path.exists() {
        let mut d = vec![Complex64::new(0.0, 0.0); n];
        for r in read_rows::<ShuntRow>(&shunt_path)? {
            let i = one_based(&shunt_path, r.bus)?;
            if i >= n {
                return Err(NetworkError::IndexOutOfRange { what: "shunt", index: i, size: n });
            }
            d[i] += Complex64::new(r.g, r.b);
        }
        b.shunts = Some(d);
    }
    for r in &loads {
        b.loads.push((one_based(&loads_path, r.bus)?, Complex64::new(r.p, r.q)));
    }
    let mut slots = Vec::with_capacity(subs.len());
    let mut volts = Vec::with_capacity(subs.len());
    for r in &subs {
        slots.push(one_based(&sub_path, r.slot)?);
        volts.push(Complex64::new(r.re, r.im));
    }
    reduce_network(b, &slots, &volts)
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), NetworkError> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_csv(net: &NetworkModel, path: &Path) -> Result<(), NetworkError> {
    if (net.base_power_kw() - CSV_BASE_POWER_KW).abs() > 0.0 {
        log::warn!(
            "ybus-csv has no base power field; {} kW will be read back as {CSV_BASE_POWER_KW} kW",
            net.base_power_kw()
        );
    }
    write_rows(path, net.ybus_full().triplets().into_iter().map(|(r, c, v)| YbusRow { row: r + 1, col: c + 1, g: v.re, b: v.im }))?;
    write_rows(
        &sibling(path, "loads.csv"),
        nominal_loads_full(net).into_iter().map(|(i, p, q)| LoadRow { bus: i + 1, p, q }),
    )?;
    write_rows(
        &sibling(path, "substation.csv"),
        net.substation_slots().iter().zip(net.substation_voltage()).map(|(&s, v)| SubRow { slot: s + 1, re: v.re, im: v.im }),
    )?;
    write_rows(
        &sibling(path, "buses.csv"),
        (0..net.n_total()).map(|i| BusRow {
            bus: i + 1,
            phase: net.phases()[i].map(|p| p.label().to_string()),
            base_kv: net.base_kv()[i],
        }),
    )?;
    if let Some(d) = net.shunt_diag() {
        write_rows(
            &sibling(path, "shunts.csv"),
            d.iter().enumerate().filter(|(_, v)| v.norm() != 0.0).map(|(i, v)| ShuntRow { bus: i + 1, g: v.re, b: v.im }),
        )?;
    }
    Ok(())
}
