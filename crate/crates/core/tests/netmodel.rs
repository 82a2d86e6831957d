mod common;

use appf_core::netmodel::{
    build_ybus, load_network, reduce_network, write_network, BusId, LineRecord, NetworkBuilder, NetworkError,
    NetworkFormat, Phase,
};
use appf_core::sparla::CsrMatrix;
use common::{fixture, load};
use num_complex::Complex64 as C;
use proptest::prelude::*;

fn c(re: f64, im: f64) -> C {
    C::new(re, im)
}

fn dense(m: &CsrMatrix<C>) -> Vec<Vec<C>> {
    m.to_dense()
}

#[test]
fn single_line_stamp() {
    let y = build_ybus(&[LineRecord::single(BusId::new(0), BusId::new(1), c(1.0, -10.0))], None, 2).unwrap();
    assert_eq!(dense(&y), vec![vec![c(1.0, -10.0), c(-1.0, 10.0)], vec![c(-1.0, 10.0), c(1.0, -10.0)]]);
}

#[test]
fn shunts_only() {
    let y = build_ybus(&[], Some(&[c(0.0, 0.1), c(0.0, 0.2)]), 2).unwrap();
    assert_eq!(dense(&y), vec![vec![c(0.0, 0.1), c(0.0, 0.0)], vec![c(0.0, 0.0), c(0.0, 0.2)]]);
}

#[test]
fn path_matches_incidence_product() {
    let yl = [c(2.0, -20.0), c(1.0, -10.0)];
    let lines = [
        LineRecord::single(BusId::new(0), BusId::new(1), yl[0]),
        LineRecord::single(BusId::new(1), BusId::new(2), yl[1]),
    ];
    let y = dense(&build_ybus(&lines, None, 3).unwrap());
    let e = [[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]];
    for i in 0..3 {
        for j in 0..3 {
            let want: C = (0..2).map(|l| yl[l] * e[l][i] * e[l][j]).sum();
            assert_eq!(y[i][j], want);
        }
        let row: C = y[i].iter().sum();
        assert_eq!(row, c(0.0, 0.0));
    }
    assert_eq!(y[1][1], c(3.0, -30.0));
}

#[test]
fn reduction_of_small_networks() {
    let net = load("2bus.json");
    assert_eq!(net.n(), 1);
    assert_eq!(dense(net.ybus_reduced()), vec![vec![c(1.0, -10.0)]]);
    assert_eq!(dense(net.sub_coupling()), vec![vec![c(-1.0, 10.0)]]);

    let net = load("feeder3.json");
    assert_eq!(dense(net.ybus_reduced()), vec![vec![c(3.0, -30.0), c(-1.0, 10.0)], vec![c(-1.0, 10.0), c(1.0, -10.0)]]);
}

#[test]
fn three_phase_substation_reduction() {
    let ph = [Phase::A, Phase::B, Phase::C];
    let block: Vec<C> = (0..9).map(|k| if k % 4 == 0 { c(3.0, -9.0) } else { c(-0.5, 1.5) }).collect();
    let line = LineRecord::phased(
        (0..3).map(|p| BusId::phased(p, ph[p])).collect(),
        (0..3).map(|p| BusId::phased(3 + p, ph[p])).collect(),
        block,
    );
    let b = NetworkBuilder::from_lines(&[line], None, 6).unwrap();
    let full = dense(&b.ybus_full);
    let v: Vec<C> = ph.iter().map(|p| C::from_polar(1.0, p.nominal_angle())).collect();
    let net = reduce_network(b, &[0, 1, 2], &v).unwrap();
    assert_eq!(net.n(), 3);
    let yr = dense(net.ybus_reduced());
    let sc = dense(net.sub_coupling());
    assert_eq!(sc.len(), 3);
    for i in 0..3 {
        assert_eq!(sc[i].len(), 3);
        for j in 0..3 {
            assert_eq!(yr[i][j], full[3 + i][3 + j]);
            assert_eq!(sc[i][j], full[3 + i][j]);
        }
    }
    assert_eq!(net.phases()[4], Some(Phase::B));
    assert!((net.flat_angle(1) + 2.0 * std::f64::consts::PI / 3.0).abs() < 1e-15);
}

#[test]
fn csv_bundle_matches_json() {
    let a = load("feeder3.json");
    let b = load_network(&fixture("feeder3_csv/ybus.csv"), NetworkFormat::YbusCsv).unwrap();
    assert_eq!(a.ybus_full().triplets(), b.ybus_full().triplets());
    assert_eq!(a.nominal_loads(), b.nominal_loads());
    assert_eq!(a.substation_voltage(), b.substation_voltage());
}

#[test]
fn loads_are_negative_injections() {
    for name in common::FIXTURES {
        let net = load(name);
        assert!(net.nominal_loads().p.iter().all(|&p| p <= 0.0), "{name}");
        assert!(net.nominal_loads().p.iter().any(|&p| p < 0.0), "{name}");
    }
}

#[test]
fn asymmetric_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture("2bus.json")).unwrap().replacen("[0, 1, -1.0, 10.0]", "[0, 1, -1.001, 10.0]", 1);
    std::fs::write(&p, text).unwrap();
    match load_network(&p, NetworkFormat::Json) {
        Err(NetworkError::AsymmetricYbus { .. }) => {}
        other => panic!("expected asymmetry error, got {other:?}"),
    }
}

#[test]
fn malformed_inputs_name_the_problem() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.json");
    std::fs::write(&p, "{\"n_total\": 2}").unwrap();
    assert!(matches!(load_network(&p, NetworkFormat::Json), Err(NetworkError::Schema { .. })));
    assert!(matches!(
        load_network(&dir.path().join("missing.json"), NetworkFormat::Json),
        Err(NetworkError::Io { .. })
    ));
    assert!(NetworkFormat::from_path(std::path::Path::new("net.txt")).is_err());
    let b = NetworkBuilder::from_lines(&[LineRecord::single(BusId::new(0), BusId::new(1), c(1.0, -1.0))], None, 2).unwrap();
    assert!(matches!(reduce_network(b.clone(), &[], &[]), Err(NetworkError::NoSubstation)));
    let mut bl = b.clone();
    bl.loads.push((0, c(-1.0, 0.0)));
    assert!(matches!(reduce_network(bl, &[0], &[c(1.0, 0.0)]), Err(NetworkError::LoadAtSubstation { slot: 0 })));
    let iso = NetworkBuilder::from_lines(&[LineRecord::single(BusId::new(0), BusId::new(1), c(1.0, -1.0))], None, 3).unwrap();
    assert!(matches!(reduce_network(iso, &[0], &[c(1.0, 0.0)]), Err(NetworkError::EmptyRow { slot: 2 })));
}

#[test]
fn round_trip_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    for name in common::FIXTURES {
        let net = load(name);
        for (fmt, file) in [(NetworkFormat::Json, "net.json"), (NetworkFormat::YbusCsv, "ybus.csv")] {
            let sub = dir.path().join(format!("{name}-{file}"));
            std::fs::create_dir_all(&sub).unwrap();
            let p = sub.join(file);
            write_network(&net, &p, fmt).unwrap();
            let back = load_network(&p, fmt).unwrap();
            assert_eq!(net.ybus_full().triplets(), back.ybus_full().triplets(), "{name} {file}");
            assert_eq!(net.nominal_loads(), back.nominal_loads());
            assert_eq!(net.substation_slots(), back.substation_slots());
            assert_eq!(net.substation_voltage(), back.substation_voltage());
            assert_eq!(net.phases(), back.phases());
        }
    }
}

fn random_lines() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64, f64)>)> {
    (3usize..12).prop_flat_map(|n| {
        let edges = proptest::collection::vec((0..n, 0..n, 0.1f64..5.0, -30.0f64..-0.5), 1..3 * n);
        (Just(n), edges)
    })
}

fn lines_of(edges: &[(usize, usize, f64, f64)]) -> Vec<LineRecord> {
    edges
        .iter()
        .filter(|e| e.0 != e.1)
        .map(|&(a, b, g, bb)| LineRecord::single(BusId::new(a), BusId::new(b), c(g, bb)))
        .collect()
}

proptest! {
    #[test]
    fn row_sums_vanish_without_shunts((n, edges) in random_lines()) {
        let y = build_ybus(&lines_of(&edges), None, n).unwrap();
        let scale = y.max_abs();
        for i in 0..n {
            let s: C = y.row(i).map(|(_, v)| v).sum();
            prop_assert!(s.norm() <= 1e-12 * scale.max(1.0));
        }
        prop_assert!(y.asymmetry() == 0.0);
    }

    #[test]
    fn reduction_re_embeds_exactly((n, edges) in random_lines(), shunt in 0.0f64..0.5) {
        // A chain guarantees every slot has a nonzero row.
        let mut lines = lines_of(&edges);
        for i in 1..n {
            lines.push(LineRecord::single(BusId::new(i - 1), BusId::new(i), c(1.0, -3.0)));
        }
        let mut sh = vec![c(0.0, 0.0); n];
        sh[n - 1] = c(0.0, shunt);
        let b = NetworkBuilder::from_lines(&lines, Some(sh), n).unwrap();
        let full = dense(&b.ybus_full);
        let net = reduce_network(b, &[0], &[c(1.0, 0.0)]).unwrap();
        let yr = dense(net.ybus_reduced());
        let sc = dense(net.sub_coupling());
        let r2f = net.reduced_to_full();
        let mut rebuilt = vec![vec![c(0.0, 0.0); n]; n];
        rebuilt[0][0] = full[0][0];
        for (i, &fi) in r2f.iter().enumerate() {
            rebuilt[fi][0] = sc[i][0];
            rebuilt[0][fi] = sc[i][0];
            for (j, &fj) in r2f.iter().enumerate() {
                rebuilt[fi][fj] = yr[i][j];
            }
        }
        prop_assert_eq!(rebuilt, full);
    }
}
