//! Power flow functions and their derivatives.
//!
//! Real vectors of length `2n` are stacked by quantity: `(P; Q)` for
//! injections, `(|V|; θ)` for polar states and `(V_r; V_i)` for Cartesian
//! states and perturbations.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::netmodel::{LoadProfile, NetworkModel};
use crate::sparla::CsrMatrix;

/// Voltage magnitudes below this make the polar coordinate change singular.
pub const MIN_BLOCK_VOLTAGE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PfError {
    #[error("voltage magnitude {magnitude:e} at reduced slot {bus} makes the polar block singular")]
    SingularBlock { bus: usize, magnitude: f64 },
    #[error("vector has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// Which coordinate view a state was last set through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    Polar,
    Cartesian,
}

/// Voltage profile over the non-substation slots, kept in both polar and
/// Cartesian form. Constructors synchronize the two views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoltageState {
    v_mag: Vec<f64>,
    v_ang: Vec<f64>,
    v_re: Vec<f64>,
    v_im: Vec<f64>,
    source: Coordinates,
}

impl VoltageState {
    pub fn from_polar(v_mag: Vec<f64>, v_ang: Vec<f64>) -> Self {
        assert_eq!(v_mag.len(), v_ang.len());
        let (v_re, v_im) = v_mag.iter().zip(&v_ang).map(|(&m, &a)| (m * a.cos(), m * a.sin())).unzip();
        Self { v_mag, v_ang, v_re, v_im, source: Coordinates::Polar }
    }

    /// Zero magnitude maps to angle zero.
    pub fn from_cartesian(v_re: Vec<f64>, v_im: Vec<f64>) -> Self {
        assert_eq!(v_re.len(), v_im.len());
        let (v_mag, v_ang) = v_re.iter().zip(&v_im).map(|(&r, &i)| ((r * r + i * i).sqrt(), i.atan2(r))).unzip();
        Self { v_mag, v_ang, v_re, v_im, source: Coordinates::Cartesian }
    }

    pub fn from_complex(v: &[Complex64]) -> Self {
        Self::from_cartesian(v.iter().map(|c| c.re).collect(), v.iter().map(|c| c.im).collect())
    }

    /// `(|V|; θ)`.
    pub fn from_polar_stacked(x: &[f64]) -> Self {
        let n = x.len() / 2;
        Self::from_polar(x[..n].to_vec(), x[n..].to_vec())
    }

    /// `(V_r; V_i)`.
    pub fn from_cartesian_stacked(x: &[f64]) -> Self {
        let n = x.len() / 2;
        Self::from_cartesian(x[..n].to_vec(), x[n..].to_vec())
    }

    /// 1 pu magnitude at each slot's phase angle.
    pub fn flat(net: &NetworkModel) -> Self {
        let n = net.n();
        Self::from_polar(vec![1.0; n], (0..n).map(|i| net.flat_angle(i)).collect())
    }

    pub fn len(&self) -> usize {
        self.v_mag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_mag.is_empty()
    }

    pub fn v_mag(&self) -> &[f64] {
        &self.v_mag
    }

    pub fn v_ang(&self) -> &[f64] {
        &self.v_ang
    }

    pub fn v_re(&self) -> &[f64] {
        &self.v_re
    }

    pub fn v_im(&self) -> &[f64] {
        &self.v_im
    }

    pub fn source(&self) -> Coordinates {
        self.source
    }

    pub fn complex(&self) -> Vec<Complex64> {
        self.v_re.iter().zip(&self.v_im).map(|(&r, &i)| Complex64::new(r, i)).collect()
    }

    pub fn polar_stacked(&self) -> Vec<f64> {
        [self.v_mag.as_slice(), self.v_ang.as_slice()].concat()
    }

    pub fn cartesian_stacked(&self) -> Vec<f64> {
        [self.v_re.as_slice(), self.v_im.as_slice()].concat()
    }

    pub fn is_finite(&self) -> bool {
        self.v_re.iter().chain(&self.v_im).chain(&self.v_mag).chain(&self.v_ang).all(|v| v.is_finite())
    }

    /// `x ← x + Δx` in polar coordinates.
    pub fn step_polar(&self, dx: &[f64]) -> Self {
        let n = self.len();
        Self::from_polar(
            self.v_mag.iter().zip(&dx[..n]).map(|(a, b)| a + b).collect(),
            self.v_ang.iter().zip(&dx[n..]).map(|(a, b)| a + b).collect(),
        )
    }
}

/// Re-derives the Cartesian view from the polar one.
pub fn polar_to_cartesian(vs: &VoltageState) -> VoltageState {
    VoltageState::from_polar(vs.v_mag.clone(), vs.v_ang.clone())
}

/// Re-derives the polar view from the Cartesian one.
pub fn cartesian_to_polar(vs: &VoltageState) -> VoltageState {
    VoltageState::from_cartesian(vs.v_re.clone(), vs.v_im.clone())
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn to_complex(x: &[f64]) -> Vec<Complex64> {
    let n = x.len() / 2;
    (0..n).map(|i| Complex64::new(x[i], x[n + i])).collect()
}

pub(crate) fn to_stacked(z: &[Complex64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * z.len()];
    let n = z.len();
    for (i, v) in z.iter().enumerate() {
        out[i] = v.re;
        out[n + i] = v.im;
    }
    out
}

/// Nodal currents `Ĩ = Y_b Ṽ + C Ṽ_sub`.
pub fn injected_currents(net: &NetworkModel, vs: &VoltageState) -> Vec<Complex64> {
    injected_currents_complex(net, &vs.complex())
}

pub(crate) fn injected_currents_complex(net: &NetworkModel, v: &[Complex64]) -> Vec<Complex64> {
    let mut i = net.ybus_reduced().mul_vec(v);
    for (a, b) in i.iter_mut().zip(net.substation_current()) {
        *a += b;
    }
    i
}

pub(crate) fn injections_complex(v: &[Complex64], i: &[Complex64]) -> Vec<Complex64> {
    v.iter().zip(i).map(|(v, i)| v * i.conj()).collect()
}

/// `S = Ṽ ⊙ conj(Ĩ)`.
pub fn power_injections(net: &NetworkModel, vs: &VoltageState) -> LoadProfile {
    let v = vs.complex();
    let i = injected_currents_complex(net, &v);
    LoadProfile::from_complex(&injections_complex(&v, &i))
}

/// `g(x) = s(x) − S`, stacked.
pub fn mismatch(net: &NetworkModel, vs: &VoltageState, s_spec: &LoadProfile) -> Vec<f64> {
    let s = power_injections(net, vs);
    let n = s.len();
    let mut g = vec![0.0; 2 * n];
    for k in 0..n {
        g[k] = s.p[k] - s_spec.p[k];
        g[n + k] = s.q[k] - s_spec.q[k];
    }
    g
}

/// A real `2n×2n` matrix in the 2×2 block layout produced from complex operators.
#[derive(Clone, Debug, PartialEq)]
pub struct RealBlockMatrix {
    n: usize,
    matrix: CsrMatrix<f64>,
}

impl RealBlockMatrix {
    /// `N⟨Y⟩ = [[G, −B], [−B, −G]]`: maps `y` to the stacking of `conj(Y y)`.
    pub fn n_of(y: &CsrMatrix<Complex64>) -> Self {
        let n = y.nrows();
        let mut t = Vec::with_capacity(4 * y.nnz());
        for (i, j, v) in y.triplets() {
            t.push((i, j, v.re));
            t.push((i, n + j, -v.im));
            t.push((n + i, j, -v.im));
            t.push((n + i, n + j, -v.re));
        }
        Self { n, matrix: CsrMatrix::from_triplets(2 * n, 2 * n, &t) }
    }

    /// `⟨d(z)⟩ = [[d(Re z), −d(Im z)], [d(Im z), d(Re z)]]`: complex multiplication by `z`.
    pub fn diag(z: &[Complex64]) -> Self {
        let n = z.len();
        let mut t = Vec::with_capacity(4 * n);
        for (i, v) in z.iter().enumerate() {
            t.push((i, i, v.re));
            t.push((i, n + i, -v.im));
            t.push((n + i, i, v.im));
            t.push((n + i, n + i, v.re));
        }
        Self { n, matrix: CsrMatrix::from_triplets(2 * n, 2 * n, &t) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix<f64> {
        self.matrix
    }
}

/// `N⟨Y_b⟩` of the reduced admittance.
pub fn build_n_ybus(net: &NetworkModel) -> RealBlockMatrix {
    RealBlockMatrix::n_of(net.ybus_reduced())
}

/// Which variables a [`JacobianBuilder`] differentiates against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianKind {
    Polar,
    Cartesian,
}

/// Fixed sparsity pattern for the power flow Jacobian, refilled per state.
///
/// The pattern has a full 2×2 block for every structural entry of `Y_b`
/// and for every diagonal, so it is structurally symmetric and constant
/// across states.
#[derive(Clone, Debug)]
pub struct JacobianBuilder {
    kind: JacobianKind,
    n: usize,
    matrix: CsrMatrix<f64>,
    /// Slots `[P-x, P-y, Q-x, Q-y]` for each stored entry of `Y_b`.
    entry_slots: Vec<[usize; 4]>,
    diag_slots: Vec<[usize; 4]>,
    /// `Ṽ/|Ṽ|` scratch for the polar fill.
    unit: Vec<Complex64>,
}

impl JacobianBuilder {
    pub fn new(net: &NetworkModel, kind: JacobianKind) -> Self {
        let y = net.ybus_reduced();
        let n = y.nrows();
        let mut t = Vec::with_capacity(4 * (y.nnz() + n));
        for i in 0..n {
            for j in y.row(i).map(|(j, _)| j).chain(std::iter::once(i)) {
                t.push((i, j, 0.0));
                t.push((i, n + j, 0.0));
                t.push((n + i, j, 0.0));
                t.push((n + i, n + j, 0.0));
            }
        }
        let matrix = CsrMatrix::from_triplets(2 * n, 2 * n, &t);
        let slots = |i: usize, j: usize| {
            [
                matrix.position(i, j).unwrap(),
                matrix.position(i, n + j).unwrap(),
                matrix.position(n + i, j).unwrap(),
                matrix.position(n + i, n + j).unwrap(),
            ]
        };
        let entry_slots = y.triplets().into_iter().map(|(i, j, _)| slots(i, j)).collect();
        let diag_slots = (0..n).map(|i| slots(i, i)).collect();
        Self { kind, n, matrix, entry_slots, diag_slots, unit: Vec::with_capacity(n) }
    }

    pub fn kind(&self) -> JacobianKind {
        self.kind
    }

    /// Pattern with values from the last fill.
    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    /// Evaluates the Jacobian at `v` given the nodal currents `cur` there.
    pub fn fill(&mut self, net: &NetworkModel, v: &[Complex64], cur: &[Complex64]) -> &CsrMatrix<f64> {
        let y = net.ybus_reduced();
        let data = self.matrix.data_mut();
        data.iter_mut().for_each(|x| *x = 0.0);
        let j_unit = Complex64::new(0.0, 1.0);
        if self.kind == JacobianKind::Polar {
            self.unit.clear();
            self.unit.extend(v.iter().map(|z| {
                let m = z.norm();
                if m > 0.0 {
                    z / m
                } else {
                    Complex64::new(1.0, 0.0)
                }
            }));
        }
        let unit = &self.unit;
        let mut put = |s: &[usize; 4], dx: Complex64, dy: Complex64| {
            data[s[0]] += dx.re;
            data[s[1]] += dy.re;
            data[s[2]] += dx.im;
            data[s[3]] += dy.im;
        };
        let mut e = 0;
        for i in 0..self.n {
            let vi = v[i];
            for (j, yij) in y.row(i) {
                let (dx, dy) = match self.kind {
                    JacobianKind::Polar => {
                        (vi * (yij * unit[j]).conj(), -j_unit * vi * (yij * v[j]).conj())
                    }
                    JacobianKind::Cartesian => (vi * yij.conj(), -j_unit * vi * yij.conj()),
                };
                put(&self.entry_slots[e], dx, dy);
                e += 1;
            }
            let ci = cur[i].conj();
            let (dx, dy) = match self.kind {
                JacobianKind::Polar => (unit[i] * ci, j_unit * vi * ci),
                JacobianKind::Cartesian => (ci, j_unit * ci),
            };
            put(&self.diag_slots[i], dx, dy);
        }
        &self.matrix
    }
}

fn jacobian(net: &NetworkModel, vs: &VoltageState, kind: JacobianKind) -> CsrMatrix<f64> {
    let v = vs.complex();
    let cur = injected_currents_complex(net, &v);
    let mut b = JacobianBuilder::new(net, kind);
    b.fill(net, &v, &cur);
    b.matrix
}

/// `∂s/∂(|V|, θ)`, equal to `(⟨d(Ĩ*)⟩ + ⟨d(Ṽ)⟩N⟨Y_b⟩) R(Ṽ)`.
pub fn jacobian_polar(net: &NetworkModel, vs: &VoltageState) -> CsrMatrix<f64> {
    jacobian(net, vs, JacobianKind::Polar)
}

/// `∂s/∂(V_r, V_i)`, equal to `⟨d(Ĩ*)⟩ + ⟨d(Ṽ)⟩N⟨Y_b⟩`.
pub fn jacobian_cartesian(net: &NetworkModel, vs: &VoltageState) -> CsrMatrix<f64> {
    jacobian(net, vs, JacobianKind::Cartesian)
}

/// Second derivative of `s` in Cartesian coordinates applied to `(u, w)`:
/// the stacking of `ũ ⊙ conj(Y_b w̃) + w̃ ⊙ conj(Y_b ũ)`.
pub fn hessian_apply(net: &NetworkModel, u: &[f64], w: &[f64]) -> Vec<f64> {
    let uc = to_complex(u);
    let wc = to_complex(w);
    let y = net.ybus_reduced();
    let yu = y.mul_vec(&uc);
    let yw = y.mul_vec(&wc);
    let out: Vec<Complex64> = (0..uc.len()).map(|i| uc[i] * yw[i].conj() + wc[i] * yu[i].conj()).collect();
    to_stacked(&out)
}

/// Solves `R(Ṽ) Δx = y` bus by bus, where each 2×2 block is
/// `[[cos θ, −V sin θ], [sin θ, V cos θ]]`.
pub fn solve_r_block(vs: &VoltageState, y: &[f64]) -> Result<Vec<f64>, PfError> {
    let mut dx = vec![0.0; y.len()];
    solve_r_block_into(vs, y, &mut dx)?;
    Ok(dx)
}

pub fn solve_r_block_into(vs: &VoltageState, y: &[f64], dx: &mut [f64]) -> Result<(), PfError> {
    let n = vs.len();
    if y.len() != 2 * n || dx.len() != 2 * n {
        return Err(PfError::LengthMismatch { expected: 2 * n, got: y.len() });
    }
    for i in 0..n {
        let m = vs.v_mag[i];
        if !(m >= MIN_BLOCK_VOLTAGE) {
            return Err(PfError::SingularBlock { bus: i, magnitude: m });
        }
        let (s, c) = vs.v_ang[i].sin_cos();
        let (a, b) = (y[i], y[n + i]);
        dx[i] = c * a + s * b;
        dx[n + i] = (c * b - s * a) / m;
    }
    Ok(())
}

/// `R(Ṽ) Δx`.
pub fn apply_r_block(vs: &VoltageState, dx: &[f64]) -> Vec<f64> {
    let n = vs.len();
    let mut y = vec![0.0; 2 * n];
    for i in 0..n {
        let m = vs.v_mag[i];
        let (s, c) = vs.v_ang[i].sin_cos();
        y[i] = c * dx[i] - m * s * dx[n + i];
        y[n + i] = s * dx[i] + m * c * dx[n + i];
    }
    y
}
