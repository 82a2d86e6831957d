//! Shared setup for the kernel benchmarks.

use appf_core::appf::{appf_run, PpfConfig};
use appf_core::netmodel::{LoadProfile, NetworkModel};
use appf_core::npfs::{npfs_solve, prepare, NpfsConfig};
use appf_core::pfcore::{power_injections, VoltageState};
use appf_core::rom::{ReducedModel, RomConfig};
use appf_core::sampling::{generate_samples, SamplingSpec};
use appf_core::sparla::LdlFactors;
use appf_core::synthetic::{generate_feeder, FeederSpec};

pub struct Workload {
    pub net: NetworkModel,
    pub factors: LdlFactors,
    pub nominal: VoltageState,
    pub samples: Vec<LoadProfile>,
    /// Reduced model grown over `samples` until its basis stops expanding.
    pub rom: ReducedModel,
}

/// Synthetic feeder with `trunk_buses` trunk buses and a warmed reduced model.
pub fn workload(trunk_buses: usize) -> Workload {
    let net = generate_feeder(&FeederSpec { trunk_buses, ..Default::default() }).expect("feeder");
    let factors = prepare(&net).expect("factorization");
    let (nominal, _) = npfs_solve(&factors, &net, net.nominal_loads(), &VoltageState::flat(&net), &NpfsConfig::default())
        .expect("nominal solve");
    let spec = SamplingSpec { num_samples: 100, seed: 7, ..Default::default() };
    let samples = generate_samples(&spec, net.nominal_loads()).expect("samples");
    let cfg = PpfConfig { rom: RomConfig { n_q: 64, eps_basis: 1e-5, ..Default::default() }, ..Default::default() };
    let s0 = power_injections(&net, &nominal);
    let mut rom = ReducedModel::init(&net, &nominal, &s0, cfg.rom.clone()).expect("rom");
    let run = appf_run(&net, &samples, &cfg).expect("appf run");
    for m in 0..run.num_samples() {
        if run.records[m].expanded_basis {
            rom.dse_update(&run.state(m), &net);
        }
    }
    Workload { net, factors, nominal, samples, rom }
}
