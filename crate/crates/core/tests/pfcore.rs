mod common;

use appf_core::netmodel::{LoadProfile, NetworkModel};
use appf_core::pfcore::{
    apply_r_block, build_n_ybus, cartesian_to_polar, hessian_apply, injected_currents, jacobian_cartesian,
    jacobian_polar, mismatch, polar_to_cartesian, power_injections, solve_r_block, VoltageState,
};
use common::{inf, load, rng, DenseFlow};
use num_complex::Complex64 as C;
use proptest::prelude::*;
use rand::Rng;

fn random_state(net: &NetworkModel, r: &mut impl Rng) -> VoltageState {
    let n = net.n();
    let mag = (0..n).map(|_| r.random_range(0.85..1.1)).collect();
    let ang = (0..n).map(|i| net.flat_angle(i) + r.random_range(-0.1..0.1)).collect();
    VoltageState::from_polar(mag, ang)
}

fn stacked(s: &LoadProfile) -> Vec<f64> {
    s.stacked()
}

#[test]
fn flat_two_bus_carries_no_current() {
    let net = load("2bus.json");
    let i = injected_currents(&net, &VoltageState::flat(&net));
    assert_eq!(i, vec![C::new(0.0, 0.0)]);
    // Flat start with load S₀: mismatch is −S₀.
    let g = mismatch(&net, &VoltageState::flat(&net), net.nominal_loads());
    assert_eq!(g, vec![0.1, 0.05]);
}

#[test]
fn currents_match_dense_product() {
    let net = load("2bus.json");
    let v = C::from_polar(0.98, -0.01);
    let i = injected_currents(&net, &VoltageState::from_complex(&[v]));
    let want = C::new(-1.0, 10.0) * C::new(1.0, 0.0) + C::new(1.0, -10.0) * v;
    assert!((i[0] - want).norm() < 1e-15);
}

/// Injections as the trigonometric double sum over every slot.
fn trig_injections(net: &NetworkModel, vs: &VoltageState) -> Vec<(f64, f64)> {
    let nt = net.n_total();
    let mut mag = vec![0.0; nt];
    let mut ang = vec![0.0; nt];
    for (k, &s) in net.substation_slots().iter().enumerate() {
        mag[s] = net.substation_voltage()[k].norm();
        ang[s] = net.substation_voltage()[k].arg();
    }
    for (i, &f) in net.reduced_to_full().iter().enumerate() {
        mag[f] = vs.v_mag()[i];
        ang[f] = vs.v_ang()[i];
    }
    net.reduced_to_full()
        .iter()
        .map(|&i| {
            let (mut p, mut q) = (0.0, 0.0);
            for (_, j, y) in net.ybus_full().triplets().into_iter().filter(|t| t.0 == i) {
                let th = ang[i] - ang[j];
                p += mag[i] * mag[j] * (y.re * th.cos() + y.im * th.sin());
                q += mag[i] * mag[j] * (y.re * th.sin() - y.im * th.cos());
            }
            (p, q)
        })
        .collect()
}

#[test]
fn complex_form_matches_trigonometric_sum() {
    let mut r = rng(1);
    for name in common::FIXTURES {
        let net = load(name);
        for _ in 0..20 {
            let vs = random_state(&net, &mut r);
            let s = power_injections(&net, &vs);
            for (i, (p, q)) in trig_injections(&net, &vs).into_iter().enumerate() {
                assert!((s.p[i] - p).abs() < 1e-12 && (s.q[i] - q).abs() < 1e-12, "{name} slot {i}");
            }
        }
    }
}

#[test]
fn injections_match_dense_flow() {
    let mut r = rng(9);
    for name in common::FIXTURES {
        let net = load(name);
        let d = DenseFlow::new(&net);
        let vs = random_state(&net, &mut r);
        let s = power_injections(&net, &vs);
        for (i, z) in d.injections(&vs.complex()).into_iter().enumerate() {
            assert!((C::new(s.p[i], s.q[i]) - z).norm() < 1e-12);
        }
        let exact = power_injections(&net, &vs);
        assert_eq!(inf(&mismatch(&net, &vs, &exact)), 0.0);
    }
}

#[test]
fn expanded_single_entry() {
    let net = load("2bus.json");
    assert_eq!(build_n_ybus(&net).matrix().to_dense(), vec![vec![1.0, 10.0], vec![10.0, -1.0]]);
    for name in common::FIXTURES {
        assert_eq!(build_n_ybus(&load(name)).matrix().asymmetry(), 0.0);
    }
}

fn fd_check(net: &NetworkModel, vs: &VoltageState, polar: bool) {
    let n = net.n();
    let j = if polar { jacobian_polar(net, vs) } else { jacobian_cartesian(net, vs) }.to_dense();
    let x0 = if polar { vs.polar_stacked() } else { vs.cartesian_stacked() };
    let eval = |x: &[f64]| {
        let st = if polar { VoltageState::from_polar_stacked(x) } else { VoltageState::from_cartesian_stacked(x) };
        stacked(&power_injections(net, &st))
    };
    let h = 1e-6;
    let scale = j.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..2 * n {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[k] += h;
        xm[k] -= h;
        let (sp, sm) = (eval(&xp), eval(&xm));
        for i in 0..2 * n {
            let fd = (sp[i] - sm[i]) / (2.0 * h);
            assert!((fd - j[i][k]).abs() <= 1e-5 * scale, "col {k} row {i}: fd {fd} vs {}", j[i][k]);
        }
    }
}

#[test]
fn jacobians_match_finite_differences() {
    let mut r = rng(5);
    for name in common::FIXTURES {
        let net = load(name);
        for _ in 0..5 {
            let vs = random_state(&net, &mut r);
            fd_check(&net, &vs, true);
            fd_check(&net, &vs, false);
        }
    }
    let net = appf_core::synthetic::generate_feeder(&appf_core::synthetic::FeederSpec {
        trunk_buses: 4,
        laterals_per_bus: 1,
        lateral_nodes: (1, 2),
        ..Default::default()
    })
    .unwrap();
    assert!(2 * net.n() <= 100);
    fd_check(&net, &random_state(&net, &mut r), true);
    fd_check(&net, &random_state(&net, &mut r), false);
}

#[test]
fn flat_start_polar_jacobian_is_expanded_admittance() {
    let net = load("feeder3.json");
    let j = jacobian_polar(&net, &VoltageState::flat(&net)).to_dense();
    assert_eq!(j, build_n_ybus(&net).matrix().to_dense());
}

#[test]
fn cartesian_jacobian_at_zero_voltage() {
    let net = load("feeder3.json");
    let n = net.n();
    let z = VoltageState::from_cartesian(vec![0.0; n], vec![0.0; n]);
    let j = jacobian_cartesian(&net, &z).to_dense();
    let cur = injected_currents(&net, &z);
    for i in 0..2 * n {
        for k in 0..2 * n {
            let (b, kb) = (i % n, k % n);
            let want = if b != kb {
                0.0
            } else {
                let c = cur[b].conj();
                match (i < n, k < n) {
                    (true, true) | (false, false) => c.re,
                    (true, false) => -c.im,
                    (false, true) => c.im,
                }
            };
            assert!((j[i][k] - want).abs() < 1e-14, "({i},{k})");
        }
    }
}

#[test]
fn hessian_is_symmetric_and_bilinear() {
    let net = load("feeder10.json");
    let mut r = rng(2);
    let n2 = 2 * net.n();
    let u: Vec<f64> = (0..n2).map(|_| r.random_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..n2).map(|_| r.random_range(-1.0..1.0)).collect();
    assert_eq!(hessian_apply(&net, &u, &vec![0.0; n2]), vec![0.0; n2]);
    let a = hessian_apply(&net, &u, &w);
    let b = hessian_apply(&net, &w, &u);
    assert_eq!(a, b);
}

#[test]
fn r_block_cases() {
    let unit = VoltageState::from_polar(vec![1.0; 2], vec![0.0; 2]);
    assert_eq!(solve_r_block(&unit, &[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    let two = VoltageState::from_polar(vec![2.0], vec![0.0]);
    assert_eq!(solve_r_block(&two, &[0.0, 2.0]).unwrap(), vec![0.0, 1.0]);
    let mut r = rng(4);
    let vs = random_state(&load("threephase7.json"), &mut r);
    let y: Vec<f64> = (0..2 * vs.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let back = apply_r_block(&vs, &solve_r_block(&vs, &y).unwrap());
    assert!(back.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn coordinate_views() {
    let vs = polar_to_cartesian(&VoltageState::from_polar(vec![1.0], vec![std::f64::consts::FRAC_PI_2]));
    assert!(vs.v_re()[0].abs() < 1e-16 && (vs.v_im()[0] - 1.0).abs() < 1e-16);
    let z = cartesian_to_polar(&VoltageState::from_cartesian(vec![0.0], vec![0.0]));
    assert_eq!((z.v_mag()[0], z.v_ang()[0]), (0.0, 0.0));
}

proptest! {
    #[test]
    fn polar_cartesian_round_trip(m in 0.1f64..2.0, a in -3.1f64..3.1) {
        let p = VoltageState::from_polar(vec![m], vec![a]);
        let back = cartesian_to_polar(&polar_to_cartesian(&p));
        prop_assert!((back.v_mag()[0] - m).abs() < 1e-14);
        prop_assert!((back.v_ang()[0] - a).abs() < 1e-14);
    }

    #[test]
    fn exact_quadratic_taylor(seed in any::<u64>(), fx in 0usize..4, size in 0.0f64..0.5) {
        let net = load(common::FIXTURES[fx]);
        let mut r = rng(seed);
        let x0 = random_state(&net, &mut r);
        let n2 = 2 * net.n();
        let d: Vec<f64> = (0..n2).map(|_| r.random_range(-1.0..1.0)).collect();
        let nd = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d: Vec<f64> = d.iter().map(|v| v * size / nd).collect();
        let xc = x0.cartesian_stacked();
        let x1: Vec<f64> = xc.iter().zip(&d).map(|(a, b)| a + b).collect();
        let s1 = stacked(&power_injections(&net, &VoltageState::from_cartesian_stacked(&x1)));
        let s0 = stacked(&power_injections(&net, &x0));
        let jd = jacobian_cartesian(&net, &x0).mul_vec(&d);
        let h = hessian_apply(&net, &d, &d);
        let err = (0..n2).map(|i| (s1[i] - s0[i] - jd[i] - 0.5 * h[i]).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12, "err {err:e}");
    }
}
