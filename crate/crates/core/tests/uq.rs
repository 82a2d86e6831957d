mod common;

use appf_core::appf::{appf_run, traditional_ppf_run, PpfConfig, PpfResult};
use appf_core::netmodel::{BusId, NetworkModel, Phase};
use appf_core::sampling::{generate_samples, Correlation, SamplingSpec, UncertainSet};
use appf_core::uq::{
    branch_current_stats, numerical_rank, singular_values, singular_values_of, solution_matrix, summarize,
    write_histogram_csv, write_node_stats_csv, write_summary_json, Histogram, UqError,
};
use common::{jacobi_svd, load, rng};
use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::Rng;

fn run(net: &NetworkModel, m: usize, seed: u64) -> PpfResult {
    let spec = SamplingSpec { num_samples: m, sigma: 0.5, seed, uncertain_set: UncertainSet::TopK(net.n().min(5)), ..Default::default() };
    let s = generate_samples(&spec, net.nominal_loads()).unwrap();
    traditional_ppf_run(net, &s, &PpfConfig::default()).unwrap()
}

#[test]
fn summary_matches_brute_force() {
    let net = load("feeder10.json");
    let r = run(&net, 50, 1);
    let s = summarize(&r, Some(&net), 10).unwrap();
    assert_eq!(s.buses, net.reduced_to_full());
    for i in 0..net.n() {
        let v: Vec<f64> = r.solutions.iter().map(|x| x[i]).collect();
        let mean = v.iter().sum::<f64>() / 50.0;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
        let st = &s.per_node[i];
        assert!((st.mean - mean).abs() < 1e-15);
        assert!((st.std - var.sqrt()).abs() < 1e-15);
        assert_eq!(st.min, v.iter().cloned().fold(f64::INFINITY, f64::min));
        assert_eq!(st.max, v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }
    assert_eq!(s.histogram.total(), (50 * net.n()) as u64);
    let order = s.sorted_by_mean();
    assert!(order.windows(2).all(|w| s.per_node[w[0]].mean <= s.per_node[w[1]].mean));
}

#[test]
fn single_sample_has_zero_spread() {
    let net = load("feeder3.json");
    let r = run(&net, 1, 2);
    let s = summarize(&r, None, 5).unwrap();
    assert_eq!(s.buses, vec![0, 1]);
    for st in &s.per_node {
        assert_eq!(st.std, 0.0);
        assert_eq!(st.min, st.max);
    }
}

#[test]
fn histogram_bins() {
    let h = Histogram::from_values([0.0, 0.25, 0.5, 1.0], 2).unwrap();
    assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
    assert_eq!(h.counts, vec![2, 2]);
    let flat = Histogram::from_values([3.0, 3.0], 4).unwrap();
    assert_eq!(flat.total(), 2);
    assert_eq!((flat.edges[0], flat.edges[4]), (2.5, 3.5));
    assert!(Histogram::from_values([1.0, f64::NAN], 2).is_err());
    assert!(Histogram::from_values(std::iter::empty::<f64>(), 2).is_err());
    assert!(Histogram::from_values([1.0], 0).is_err());
}

#[test]
fn two_bus_branch_current_by_hand() {
    let net = load("2bus.json");
    let r = run(&net, 20, 3);
    let b = branch_current_stats(&net, &r, BusId::new(0), BusId::new(1), 5).unwrap();
    assert_eq!(b.admittance, C::new(1.0, -10.0));
    for (m, x) in r.solutions.iter().enumerate() {
        let v1 = C::from_polar(x[0], x[1]);
        let want = (C::new(1.0, -10.0) * (C::new(1.0, 0.0) - v1)).norm();
        assert!((b.currents[m] - want).abs() < 1e-14);
    }
    assert_eq!(b.histogram.total(), 20);
}

#[test]
fn leaf_branch_carries_the_load_current() {
    let net = load("feeder3.json");
    let spec = SamplingSpec { num_samples: 10, sigma: 0.3, uncertain_set: UncertainSet::TopK(2), ..Default::default() };
    let samples = generate_samples(&spec, net.nominal_loads()).unwrap();
    let cfg = PpfConfig { npfs: appf_core::NpfsConfig { eps_newton: 1e-11, ..Default::default() }, ..Default::default() };
    let r = traditional_ppf_run(&net, &samples, &cfg).unwrap();
    let b = branch_current_stats(&net, &r, BusId::new(2), BusId::new(1), 4).unwrap();
    let leaf = net.full_to_reduced()[2].unwrap();
    for (m, s) in samples.iter().enumerate() {
        let x = &r.solutions[m];
        let v = C::from_polar(x[leaf], x[2 + leaf]);
        let load_current = (C::new(s.p[leaf], s.q[leaf]) / v).norm();
        assert!((b.currents[m] - load_current).abs() < 1e-9);
    }
}

#[test]
fn branch_lookup_errors() {
    let net = load("threephase7.json");
    let r = run(&net, 3, 4);
    assert!(branch_current_stats(&net, &r, BusId::phased(3, Phase::A), BusId::phased(6, Phase::A), 3).is_ok());
    assert!(matches!(
        branch_current_stats(&net, &r, BusId::phased(3, Phase::B), BusId::new(6), 3),
        Err(UqError::PhaseMismatch { .. })
    ));
    assert!(matches!(branch_current_stats(&net, &r, BusId::new(0), BusId::new(6), 3), Err(UqError::NoEdge { .. })));
    assert!(matches!(branch_current_stats(&net, &r, BusId::new(0), BusId::new(9), 3), Err(UqError::SlotOutOfRange { .. })));
    let other = load("feeder10.json");
    assert!(matches!(summarize(&r, Some(&other), 3), Err(UqError::SizeMismatch { .. })));
}

#[test]
fn singular_values_match_jacobi_svd() {
    let mut r = rng(12);
    for _ in 0..100 {
        let rows = r.random_range(1..12);
        let cols = r.random_range(1..12);
        let w = DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));
        let dense: Vec<Vec<f64>> = (0..rows).map(|i| (0..cols).map(|j| w[(i, j)]).collect()).collect();
        let want = jacobi_svd(&dense);
        let got = singular_values_of(&w, usize::MAX);
        assert_eq!(got.len(), rows.min(cols));
        for (g, e) in got.iter().zip(&want) {
            assert!((g - e).abs() <= 1e-9, "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn singular_values_carry_the_frobenius_energy() {
    let net = load("feeder10.json");
    let r = run(&net, 30, 5);
    let w = solution_matrix(&r);
    assert_eq!(w.shape(), (2 * net.n(), 30));
    let sv = singular_values(&r, usize::MAX);
    let energy: f64 = sv.iter().map(|s| s * s).sum();
    assert!((energy - w.norm_squared()).abs() <= 1e-10 * energy);
    assert_eq!(singular_values(&r, 3).len(), 3);
    assert_eq!(numerical_rank(&[], 1e-3), 0);
    assert_eq!(numerical_rank(&[2.0, 1.0, 1e-6], 1e-3), 2);
}

#[test]
fn solution_rank_tracks_the_reduced_basis() {
    let net = appf_core::synthetic::generate_feeder(&appf_core::synthetic::FeederSpec {
        trunk_buses: 10,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let spec = SamplingSpec { num_samples: 60, seed: 3, correlation: Correlation::Full, ..Default::default() };
    let s = generate_samples(&spec, net.nominal_loads()).unwrap();
    let a = appf_run(&net, &s, &PpfConfig::default()).unwrap();
    let sv = singular_values(&a, 60);
    // Every solution lies within ε_N of a q-dimensional span.
    let rank = numerical_rank(&sv, 1e-4);
    assert!(rank <= a.rom_final_q, "rank {rank}, q {}", a.rom_final_q);
}

#[test]
fn summary_files() {
    let net = load("feeder3.json");
    let r = run(&net, 5, 6);
    let mut s = summarize(&r, Some(&net), 3).unwrap();
    s.branch_histograms.push(branch_current_stats(&net, &r, BusId::new(0), BusId::new(1), 3).unwrap());
    s.singular_values = singular_values(&r, 2);
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("s.json");
    write_summary_json(&j, &s).unwrap();
    let back: appf_core::UqSummary = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
    assert_eq!(back, s);
    let h = dir.path().join("h.csv");
    write_histogram_csv(&h, &s.histogram).unwrap();
    let text = std::fs::read_to_string(&h).unwrap();
    assert_eq!(text.lines().next().unwrap(), "bin_lo,bin_hi,count");
    assert_eq!(text.lines().count(), 4);
    let n = dir.path().join("n.csv");
    write_node_stats_csv(&n, &s).unwrap();
    let text = std::fs::read_to_string(&n).unwrap();
    assert_eq!(text.lines().next().unwrap(), "bus,min,max,mean,std");
    assert!(text.lines().nth(1).unwrap().starts_with("1,"));
}
