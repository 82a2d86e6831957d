//! Dense reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use appf_core::netmodel::{load_network, NetworkFormat, NetworkModel};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

pub fn load(name: &str) -> NetworkModel {
    let p = fixture(name);
    let fmt = NetworkFormat::from_path(&p).unwrap();
    load_network(&p, fmt).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub const FIXTURES: [&str; 4] = ["2bus.json", "feeder3.json", "feeder10.json", "threephase7.json"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &bi)| r.iter().copied().chain([bi]).collect()).collect();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs())).unwrap();
        m.swap(k, p);
        let piv = m[k][k];
        assert!(piv.abs() > 1e-300, "singular matrix in oracle");
        for i in k + 1..n {
            let f = m[i][k] / piv;
            if f != 0.0 {
                for j in k..=n {
                    m[i][j] -= f * m[k][j];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k][j] * x[j]).sum();
        x[k] = (m[k][n] - s) / m[k][k];
    }
    x
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
pub fn jacobi_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[k][p], m[k][q]);
                    m[k][p] = c * akp - s * akq;
                    m[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * apk - s * aqk;
                    m[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// One-sided Jacobi singular values of a `rows × cols` matrix, descending.
pub fn jacobi_svd(w: &[Vec<f64>]) -> Vec<f64> {
    let rows = w.len();
    let cols = w[0].len();
    let mut u: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| w[i][j]).collect()).collect();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                let beta: f64 = u[q].iter().map(|x| x * x).sum();
                let gamma: f64 = u[p].iter().zip(&u[q]).map(|(a, b)| a * b).sum();
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..rows {
                    let (a, b) = (u[p][k], u[q][k]);
                    u[p][k] = c * a - s * b;
                    u[q][k] = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = u.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Random symmetric, strictly diagonally dominant matrix with a random sparsity pattern.
pub fn random_sdd(r: &mut impl Rng, n: usize, density: f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..i {
            if r.random::<f64>() < density {
                let v = r.random_range(-1.0..1.0);
                a[i][j] = v;
                a[j][i] = v;
            }
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[i][j].abs()).sum();
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        a[i][i] = sign * (off + r.random_range(0.5..2.0));
    }
    a
}

/// Power flow evaluated directly on the dense full Y-bus.
pub struct DenseFlow {
    pub y: Vec<Vec<C>>,
    pub free: Vec<usize>,
    pub sub: Vec<usize>,
    pub vsub: Vec<C>,
}

impl DenseFlow {
    pub fn new(net: &NetworkModel) -> Self {
        let nt = net.n_total();
        let mut y = vec![vec![C::new(0.0, 0.0); nt]; nt];
        for (i, j, v) in net.ybus_full().triplets() {
            y[i][j] += v;
        }
        let sub = net.substation_slots().to_vec();
        let free = (0..nt).filter(|i| !sub.contains(i)).collect();
        Self { y, free, sub, vsub: net.substation_voltage().to_vec() }
    }

    pub fn n(&self) -> usize {
        self.free.len()
    }

    fn full_v(&self, v: &[C]) -> Vec<C> {
        let mut full = vec![C::new(0.0, 0.0); self.y.len()];
        for (k, &s) in self.sub.iter().enumerate() {
            full[s] = self.vsub[k];
        }
        for (k, &f) in self.free.iter().enumerate() {
            full[f] = v[k];
        }
        full
    }

    /// `V_i conj(Σ_j Y_ij V_j)` at the free slots.
    pub fn injections(&self, v: &[C]) -> Vec<C> {
        let full = self.full_v(v);
        self.free
            .iter()
            .map(|&i| {
                let cur: C = (0..full.len()).map(|j| self.y[i][j] * full[j]).sum();
                full[i] * cur.conj()
            })
            .collect()
    }

    /// Stacked polar mismatch `(ΔP; ΔQ)`.
    pub fn mismatch_polar(&self, x: &[f64], s: &[C]) -> Vec<f64> {
        let n = self.n();
        let v: Vec<C> = (0..n).map(|i| C::from_polar(x[i], x[n + i])).collect();
        let inj = self.injections(&v);
        let mut g = vec![0.0; 2 * n];
        for i in 0..n {
            g[i] = inj[i].re - s[i].re;
            g[n + i] = inj[i].im - s[i].im;
        }
        g
    }

    /// Newton on the polar mismatch with a central-difference Jacobian.
    pub fn newton(&self, s: &[C], x0: &[f64], tol: f64) -> Vec<f64> {
        let n2 = 2 * self.n();
        let mut x = x0.to_vec();
        for _ in 0..50 {
            let g = self.mismatch_polar(&x, s);
            if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < tol {
                return x;
            }
            let h = 1e-7;
            let mut jac = vec![vec![0.0; n2]; n2];
            for k in 0..n2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let gp = self.mismatch_polar(&xp, s);
                let gm = self.mismatch_polar(&xm, s);
                for i in 0..n2 {
                    jac[i][k] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            let neg: Vec<f64> = g.iter().map(|v| -v).collect();
            let dx = dense_solve(&jac, &neg);
            for k in 0..n2 {
                x[k] += dx[k];
            }
        }
        panic!("dense Newton oracle did not converge");
    }
}

pub fn inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// From-scratch reduced operators `(Ĝ, Ĥ packed, ŝ₀)` for `rom`'s basis.
///
/// Uses only injection evaluations: `s` is quadratic in Cartesian
/// coordinates, so a unit central difference gives `J v` exactly and the
/// mixed second difference gives `H_c(a ⊗ b)` exactly.
pub fn rom_from_scratch(
    net: &NetworkModel,
    rom: &appf_core::rom::ReducedModel,
) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>, nalgebra::DVector<f64>) {
    use appf_core::pfcore::{power_injections, VoltageState};
    use appf_core::rom::{pair_count, pair_index};
    use nalgebra::{DMatrix, DVector};
    let x0 = rom.nominal_state().cartesian_stacked();
    let s = |x: &[f64]| DVector::from_vec(power_injections(net, &VoltageState::from_cartesian_stacked(x)).stacked());
    let shift = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * q).collect() };
    let v = rom.basis();
    let q = v.ncols();
    let n2 = v.nrows();
    let s0 = s(&x0);
    let mut j = DMatrix::zeros(n2, q);
    for k in 0..q {
        let col: Vec<f64> = v.column(k).iter().copied().collect();
        let d = (s(&shift(&x0, &col, 1.0)) - s(&shift(&x0, &col, -1.0))) / 2.0;
        j.set_column(k, &d);
    }
    let qh = rom.q_h();
    let mut h = DMatrix::zeros(n2, pair_count(qh));
    for b in 0..qh {
        for a in 0..=b {
            let va: Vec<f64> = v.column(a).iter().copied().collect();
            let vb: Vec<f64> = v.column(b).iter().copied().collect();
            let xab = shift(&shift(&x0, &va, 1.0), &vb, 1.0);
            let col = s(&xab) - s(&shift(&x0, &va, 1.0)) - s(&shift(&x0, &vb, 1.0)) + &s0;
            h.set_column(pair_index(a, b), &col);
        }
    }
    (j.tr_mul(&j), j.tr_mul(&h), j.tr_mul(&s0))
}
