mod common;

use appf_core::appf::{
    analyze_jacobian, appf_run, compare, load_result, save_result, solution_residual, traditional_ppf_run,
    write_records_jsonl, write_solutions_csv, AppfError, NewtonSolver, PpfConfig, SolvePath,
};
use appf_core::netmodel::{LoadProfile, NetworkModel};
use appf_core::npfs::NpfsConfig;
use appf_core::pfcore::VoltageState;
use appf_core::sampling::{generate_samples, Correlation, SamplingSpec, UncertainSet};
use appf_core::synthetic::{generate_feeder, FeederSpec};
use common::{load, DenseFlow};

fn small_feeder() -> NetworkModel {
    generate_feeder(&FeederSpec { trunk_buses: 10, seed: 5, ..Default::default() }).unwrap()
}

fn samples(net: &NetworkModel, m: usize, k: usize, seed: u64, sigma: f64) -> Vec<LoadProfile> {
    let spec = SamplingSpec {
        num_samples: m,
        sigma,
        seed,
        uncertain_set: UncertainSet::TopK(k.min(net.n())),
        ..Default::default()
    };
    generate_samples(&spec, net.nominal_loads()).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn nominal_sample_takes_the_reduced_path() {
    for name in common::FIXTURES {
        let net = load(name);
        let r = appf_run(&net, &[net.nominal_loads().clone()], &PpfConfig::default()).unwrap();
        assert_eq!(r.records[0].path, SolvePath::RmsOnly, "{name}");
        assert_eq!(r.records[0].newton_iters, 0);
        assert!(!r.records[0].expanded_basis);
        assert_eq!(r.rom_final_q, 1);
    }
}

#[test]
fn appf_and_baseline_agree() {
    let mut nets: Vec<(String, NetworkModel)> = common::FIXTURES.iter().map(|n| (n.to_string(), load(n))).collect();
    nets.push(("synthetic".into(), small_feeder()));
    for (name, net) in &nets {
        let s = samples(net, 40, 25, 3, 0.5);
        let cfg = PpfConfig::default();
        let a = appf_run(net, &s, &cfg).unwrap();
        let b = traditional_ppf_run(net, &s, &cfg).unwrap();
        for (m, sm) in s.iter().enumerate() {
            assert!(solution_residual(net, &a.solutions[m], sm) < 1e-4, "{name} sample {m}");
            assert!(solution_residual(net, &b.solutions[m], sm) < 1e-4, "{name} sample {m}");
        }
        let rep = compare(&a, &b).unwrap();
        assert!(rep.max_dv <= 1e-4, "{name}: {:e}", rep.max_dv);
        assert_eq!(rep.samples, 40);
    }
}

#[test]
fn baseline_matches_dense_oracle() {
    let net = load("threephase7.json");
    let s = samples(&net, 5, 4, 11, 0.3);
    let tight = PpfConfig { npfs: NpfsConfig { eps_newton: 1e-11, ..Default::default() }, ..Default::default() };
    let b = traditional_ppf_run(&net, &s, &tight).unwrap();
    let d = DenseFlow::new(&net);
    for (m, sm) in s.iter().enumerate() {
        let want = d.newton(&sm.to_complex(), &VoltageState::flat(&net).polar_stacked(), 1e-12);
        assert!(max_abs_diff(&b.solutions[m], &want) < 1e-8);
    }
}

#[test]
fn records_are_consistent_with_their_path() {
    let net = small_feeder();
    let s = samples(&net, 60, 25, 8, 1.0);
    let r = appf_run(&net, &s, &PpfConfig::default()).unwrap();
    let mut q = 1;
    for rec in &r.records {
        match rec.path {
            SolvePath::RmsOnly => {
                assert!(!rec.expanded_basis && rec.newton_iters == 0);
                assert!(rec.rms_residual_inf < 1e-4 && rec.subspace_residual == 0.0);
                assert_eq!(rec.newton_time, std::time::Duration::ZERO);
            }
            SolvePath::RmsThenNpfs | SolvePath::NpfsOnly => assert!(rec.newton_iters > 0 || rec.final_residual_inf < 1e-4),
            SolvePath::Newton => panic!("baseline path in an APPF run"),
        }
        q += rec.expanded_basis as usize;
        assert_eq!(rec.q_after, q);
        assert!(rec.final_residual_inf < 1e-4);
    }
    assert_eq!(r.rom_final_q, q);
    assert!(r.records.iter().any(|x| x.expanded_basis));
    let start = r.steady_state_start();
    assert!(r.records[start..].iter().all(|x| !x.expanded_basis));
}

#[test]
fn runs_are_deterministic() {
    let net = small_feeder();
    let s = samples(&net, 30, 25, 4, 1.0);
    let cfg = PpfConfig::default();
    let a = appf_run(&net, &s, &cfg).unwrap();
    let b = appf_run(&net, &s, &cfg).unwrap();
    assert_eq!(a.solutions, b.solutions);
    assert!(a.records.iter().zip(&b.records).all(|(x, y)| x.same_outcome(y)));
    let c = traditional_ppf_run(&net, &s, &cfg).unwrap();
    let d = traditional_ppf_run(&net, &s, &cfg).unwrap();
    assert_eq!(c.solutions, d.solutions);
}

#[test]
fn baseline_workers_only_change_warm_starts() {
    let net = small_feeder();
    let s = samples(&net, 24, 25, 6, 0.5);
    let one = traditional_ppf_run(&net, &s, &PpfConfig::default()).unwrap();
    let four = traditional_ppf_run(&net, &s, &PpfConfig { workers: 4, ..Default::default() }).unwrap();
    assert_eq!(four.records.iter().map(|r| r.sample_index).collect::<Vec<_>>(), (0..24).collect::<Vec<_>>());
    assert!(compare(&one, &four).unwrap().max_dv < 1e-4);
}

#[test]
fn newton_factors_once_per_iteration() {
    let net = small_feeder();
    let symbolic = analyze_jacobian(&net).unwrap();
    let mut solver = NewtonSolver::new(&net, &symbolic);
    let mut total = 0;
    for s in samples(&net, 5, 25, 9, 0.5) {
        let (_, st) = solver.solve(&s, &VoltageState::flat(&net), &NpfsConfig::default()).unwrap();
        assert!(st.converged);
        total += st.newton_iters;
        assert_eq!(solver.factorizations, total);
    }
}

#[test]
fn zero_variance_samples_are_cheap() {
    let net = load("feeder10.json");
    let s = samples(&net, 10, 5, 1, 0.0);
    let r = appf_run(&net, &s, &PpfConfig::default()).unwrap();
    for rec in &r.records[1..] {
        assert_eq!(rec.path, SolvePath::RmsOnly);
        assert!(rec.rms_iters <= 1);
    }
    assert!(r.records[1..].iter().all(|x| !x.expanded_basis));
}

#[test]
fn correlated_loads_need_a_smaller_basis() {
    let net = small_feeder();
    let spec = |c| SamplingSpec { num_samples: 60, seed: 2, correlation: c, ..Default::default() };
    let cfg = PpfConfig::default();
    let full = appf_run(&net, &generate_samples(&spec(Correlation::Full), net.nominal_loads()).unwrap(), &cfg).unwrap();
    let none = appf_run(&net, &generate_samples(&spec(Correlation::None), net.nominal_loads()).unwrap(), &cfg).unwrap();
    assert!(full.rom_final_q < none.rom_final_q, "{} vs {}", full.rom_final_q, none.rom_final_q);
}

#[test]
fn self_comparison_is_neutral() {
    let net = load("feeder10.json");
    let r = appf_run(&net, &samples(&net, 10, 5, 3, 0.5), &PpfConfig::default()).unwrap();
    let rep = compare(&r, &r).unwrap();
    assert_eq!(rep.max_dv, 0.0);
    assert_eq!(rep.max_dv_complex, 0.0);
    assert_eq!(rep.total_time_ratio, 1.0);
    let other = appf_run(&net, &samples(&net, 9, 5, 3, 0.5), &PpfConfig::default()).unwrap();
    assert!(matches!(compare(&r, &other), Err(AppfError::SampleCountMismatch { .. })));
}

#[test]
fn bad_inputs_are_reported() {
    let net = load("feeder3.json");
    let r = appf_run(&net, &[LoadProfile::zeros(5)], &PpfConfig::default());
    assert!(matches!(r, Err(AppfError::SampleLength { index: 0, expected: 2, got: 5 })));
    let bad = PpfConfig { npfs: NpfsConfig { eps_newton: -1.0, ..Default::default() }, ..Default::default() };
    assert!(traditional_ppf_run(&net, &[], &bad).is_err());
    // Far beyond the nose of the PV curve.
    let huge = net.nominal_loads().scaled(1e4);
    assert!(matches!(traditional_ppf_run(&net, &[huge], &PpfConfig::default()), Err(AppfError::SampleNonConvergence { .. })));
}

#[test]
fn results_round_trip_through_files() {
    let net = load("feeder10.json");
    let r = appf_run(&net, &samples(&net, 6, 5, 1, 0.5), &PpfConfig::default()).unwrap();
    let b = traditional_ppf_run(&net, &samples(&net, 6, 5, 1, 0.5), &PpfConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for res in [&r, &b] {
        let p = dir.path().join("r.json");
        save_result(&p, res).unwrap();
        let back = load_result(&p).unwrap();
        assert_eq!(back.solutions, res.solutions);
        assert!(back.records.iter().zip(&res.records).all(|(x, y)| x.same_outcome(y)));
    }
    let csv = dir.path().join("sol.csv");
    write_solutions_csv(&csv, &net, &r).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 6 * net.n());
    let jl = dir.path().join("rec.jsonl");
    write_records_jsonl(&jl, &b.records).unwrap();
    let text = std::fs::read_to_string(&jl).unwrap();
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().next().unwrap().contains("\"rms_residual_inf\":null"));
}
