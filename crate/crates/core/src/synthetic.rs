//! Seeded generator for unbalanced radial test feeders.
//!
//! A three-phase trunk with mutually coupled phases feeds single-phase
//! laterals. Per-unit base: 100 kW, 7.2 kV line-to-neutral.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netmodel::{reduce_network, BusId, LineRecord, NetworkBuilder, NetworkError, NetworkModel, Phase};

pub const BASE_KW: f64 = 100.0;
pub const BASE_KV: f64 = 7.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeederSpec {
    pub seed: u64,
    /// Three-phase buses after the substation.
    pub trunk_buses: usize,
    pub laterals_per_bus: usize,
    /// Inclusive range of nodes per lateral.
    pub lateral_nodes: (usize, usize),
    pub trunk_km: (f64, f64),
    pub lateral_km: (f64, f64),
    /// Self and mutual series impedance of the trunk, ohm/km.
    pub trunk_z_self: (f64, f64),
    pub trunk_z_mutual: (f64, f64),
    pub lateral_z: (f64, f64),
    pub load_kw: (f64, f64),
    pub power_factor: (f64, f64),
    /// Fraction of trunk buses with a balanced three-phase load.
    pub trunk_load_fraction: f64,
    /// Lateral loads sit on a secondary node behind this transformer.
    pub service_transformer: Option<ServiceTransformer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceTransformer {
    pub kva: f64,
    /// Series impedance in percent on the transformer rating.
    pub r_pct: f64,
    pub x_pct: f64,
    pub secondary_kv: f64,
}

impl Default for ServiceTransformer {
    fn default() -> Self {
        Self { kva: 25.0, r_pct: 1.2, x_pct: 2.0, secondary_kv: 0.24 }
    }
}

impl ServiceTransformer {
    fn admittance_pu(&self) -> Complex64 {
        let scale = BASE_KW / self.kva / 100.0;
        Complex64::new(self.r_pct * scale, self.x_pct * scale).inv()
    }
}

impl Default for FeederSpec {
    fn default() -> Self {
        Self {
            seed: 2024,
            trunk_buses: 120,
            laterals_per_bus: 2,
            lateral_nodes: (1, 5),
            trunk_km: (0.03, 0.07),
            lateral_km: (0.05, 0.20),
            trunk_z_self: (0.25, 0.55),
            trunk_z_mutual: (0.08, 0.25),
            lateral_z: (0.50, 0.45),
            load_kw: (1.0, 15.0),
            power_factor: (0.90, 0.95),
            trunk_load_fraction: 0.3,
            service_transformer: Some(ServiceTransformer::default()),
        }
    }
}

fn z_base() -> f64 {
    BASE_KV * BASE_KV * 1e3 / BASE_KW
}

fn load(rng: &mut ChaCha8Rng, spec: &FeederSpec) -> Complex64 {
    let p = rng.random_range(spec.load_kw.0..=spec.load_kw.1) / BASE_KW;
    let pf: f64 = rng.random_range(spec.power_factor.0..=spec.power_factor.1);
    let q = p * pf.acos().tan();
    -Complex64::new(p, q)
}

/// Builds the feeder. Slots 0..3 are the substation phases a, b, c.
pub fn generate_feeder(spec: &FeederSpec) -> Result<NetworkModel, NetworkError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zb = z_base();
    let phases = [Phase::A, Phase::B, Phase::C];
    let mut lines = Vec::new();
    let mut loads = Vec::new();
    let mut n_total = 3;

    let trunk_slot = |bus: usize, ph: usize| 3 * bus + ph;
    n_total += 3 * spec.trunk_buses;
    for t in 1..=spec.trunk_buses {
        let km = rng.random_range(spec.trunk_km.0..=spec.trunk_km.1);
        let zs = Complex64::new(spec.trunk_z_self.0, spec.trunk_z_self.1) * km / zb;
        let zm = Complex64::new(spec.trunk_z_mutual.0, spec.trunk_z_mutual.1) * km / zb;
        // (zs − zm) I + zm 11ᵀ inverts to p I + r 11ᵀ.
        let p = (zs - zm).inv();
        let r = ((zs + 2.0 * zm).inv() - p) / 3.0;
        let block: Vec<Complex64> = (0..9).map(|k| if k % 4 == 0 { p + r } else { r }).collect();
        lines.push(LineRecord::phased(
            (0..3).map(|ph| BusId::phased(trunk_slot(t - 1, ph), phases[ph])).collect(),
            (0..3).map(|ph| BusId::phased(trunk_slot(t, ph), phases[ph])).collect(),
            block,
        ));
        if rng.random::<f64>() < spec.trunk_load_fraction {
            let s = load(&mut rng, spec);
            for ph in 0..3 {
                loads.push((trunk_slot(t, ph), s));
            }
        }
    }
    let mut lateral_phase = Vec::new();
    let mut secondary = Vec::new();
    for t in 1..=spec.trunk_buses {
        for _ in 0..spec.laterals_per_bus {
            let ph = rng.random_range(0..3);
            let count = rng.random_range(spec.lateral_nodes.0..=spec.lateral_nodes.1);
            let mut prev = trunk_slot(t, ph);
            for _ in 0..count {
                let node = n_total;
                n_total += 1;
                lateral_phase.push((node, phases[ph]));
                let km = rng.random_range(spec.lateral_km.0..=spec.lateral_km.1);
                let y = (Complex64::new(spec.lateral_z.0, spec.lateral_z.1) * km / zb).inv();
                lines.push(LineRecord::single(BusId::phased(prev, phases[ph]), BusId::phased(node, phases[ph]), y));
                let s = load(&mut rng, spec);
                match &spec.service_transformer {
                    Some(t) => {
                        let sec = n_total;
                        n_total += 1;
                        lateral_phase.push((sec, phases[ph]));
                        secondary.push((sec, t.secondary_kv));
                        lines.push(LineRecord::single(
                            BusId::phased(node, phases[ph]),
                            BusId::phased(sec, phases[ph]),
                            t.admittance_pu(),
                        ));
                        loads.push((sec, s));
                    }
                    None => loads.push((node, s)),
                }
                prev = node;
            }
        }
    }
    let mut b = NetworkBuilder::from_lines(&lines, Some(vec![Complex64::new(0.0, 0.0); n_total]), n_total)?;
    b.base_power_kw = BASE_KW;
    b.base_kv = vec![BASE_KV; n_total];
    for (node, ph) in lateral_phase {
        b.phases[node] = Some(ph);
    }
    for (node, kv) in secondary {
        b.base_kv[node] = kv;
    }
    b.loads = loads;
    let v_sub: Vec<Complex64> = phases.iter().map(|p| Complex64::from_polar(1.0, p.nominal_angle())).collect();
    reduce_network(b, &[0, 1, 2], &v_sub)
}
