//! Reduced-order power flow model built from an orthonormal basis of
//! Cartesian voltage directions, with greedy basis growth.
//!
//! In Cartesian coordinates the injections are exactly quadratic, so with
//! `x_c = V(x̂_c0 + δ)` the projected residual is
//! `ĝ(δ) = ŝ₀ + Ĝδ + ½Ĥ(δ⊗δ) − Ŝ`, with `Ĵ = J_c0 V`, `Ĝ = ĴᵀĴ`,
//! `Ĥ = Ĵᵀ H_c(V⊗V)` and `ŝ₀ = Ĵᵀ s(x_c0)`.
//!
//! Quadratic storage is packed over unordered pairs `i ≤ j` at column
//! `j(j+1)/2 + i`, each column holding `H_c(v_i ⊗ v_j)`. A pair with
//! `i ≠ j` stands for both `(i, j)` and `(j, i)` of the Kronecker product,
//! so its coefficient is `2 δ_i δ_j`. [`ReducedModel::h_hat_kron`] expands
//! to the full row-major `q × q_h²` layout.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::netmodel::{LoadProfile, NetworkModel};
use crate::pfcore::{hessian_apply, inf_norm, jacobian_cartesian, mismatch, VoltageState};
use crate::sparla::CsrMatrix;

/// Allowed departure of `VᵀV` from the identity before another
/// orthogonalization pass is forced.
pub const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum RomError {
    #[error("nominal state is zero; cannot seed the basis")]
    ZeroState,
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    #[error("checkpoint is inconsistent: {0}")]
    BadCheckpoint(String),
    #[error("checkpoint I/O on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RomConfig {
    /// Projected residual tolerance `ε̂_N`.
    pub eps_rms: f64,
    /// Basis expansion threshold `ε_B`.
    pub eps_basis: f64,
    /// Curtailment bound: quadratic terms kept for the first `n_q` directions.
    pub n_q: usize,
    pub max_rms_iters: usize,
}

impl Default for RomConfig {
    fn default() -> Self {
        Self { eps_rms: 1e-5, eps_basis: 1e-4, n_q: 37, max_rms_iters: 50 }
    }
}

/// Packed column of pair `(i, j)`, `i ≤ j`.
pub fn pair_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    b * (b + 1) / 2 + a
}

pub fn pair_count(q_h: usize) -> usize {
    q_h * (q_h + 1) / 2
}

/// Row-major Kronecker column of ordered pair `(i, j)` for `q_h` directions.
pub fn kron_index(i: usize, j: usize, q_h: usize) -> usize {
    i * q_h + j
}

#[derive(Clone, Debug)]
enum GramFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl GramFactor {
    fn new(g: &DMatrix<f64>) -> Self {
        match g.clone().cholesky() {
            Some(c) => GramFactor::Cholesky(c),
            None => {
                log::warn!("reduced Gram matrix is not numerically positive definite; using LU");
                GramFactor::Lu(g.clone().lu())
            }
        }
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            GramFactor::Cholesky(c) => c.solve(b),
            GramFactor::Lu(l) => l.solve(b).unwrap_or_else(|| DVector::from_element(b.len(), f64::NAN)),
        }
    }
}

/// Mutable reduced model; single owner.
#[derive(Clone, Debug)]
pub struct ReducedModel {
    basis: DMatrix<f64>,
    j_hat: DMatrix<f64>,
    g_hat: DMatrix<f64>,
    g_factor: GramFactor,
    /// `2n × pair_count(q_h)`.
    h_v: DMatrix<f64>,
    /// `q × pair_count(q_h)`.
    h_hat: DMatrix<f64>,
    /// `Ĥᵀ`, so the quadratic term is a run of contiguous dot products.
    h_hat_t: DMatrix<f64>,
    s0_hat: DVector<f64>,
    x_c0_hat: DVector<f64>,
    delta_x_hat: DVector<f64>,
    cfg: RomConfig,
    jc0: CsrMatrix<f64>,
    s0: Vec<f64>,
    x0: VoltageState,
}

/// `Ŝ = ĴᵀS` updated from the previous sample when only a few injections
/// changed, as in sampling runs where most loads stay fixed.
#[derive(Clone, Debug, Default)]
pub struct ProjectionCache {
    s: Vec<f64>,
    s_hat: DVector<f64>,
    q: usize,
    updates: usize,
    changed: Vec<usize>,
}

impl ProjectionCache {
    /// Incremental updates between full recomputations, to bound rounding drift.
    const REFRESH: usize = 32;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn project(&mut self, rom: &ReducedModel, s: &[f64]) -> DVector<f64> {
        let q = rom.q();
        let limit = s.len() / 16;
        let mut incremental = self.q == q && self.s.len() == s.len() && self.updates < Self::REFRESH;
        if incremental {
            self.changed.clear();
            for (k, (a, b)) in s.iter().zip(&self.s).enumerate() {
                if a != b {
                    self.changed.push(k);
                    if self.changed.len() > limit {
                        incremental = false;
                        break;
                    }
                }
            }
        }
        if incremental {
            let j = rom.j_hat();
            for &k in &self.changed {
                let d = s[k] - self.s[k];
                for c in 0..q {
                    self.s_hat[c] += j[(k, c)] * d;
                }
                self.s[k] = s[k];
            }
            self.updates += 1;
        } else {
            self.s_hat = rom.project(s);
            self.s.clear();
            self.s.extend_from_slice(s);
            self.q = q;
            self.updates = 0;
        }
        self.s_hat.clone()
    }
}

/// Outcome of [`ReducedModel::rms_solve`].
#[derive(Clone, Debug)]
pub struct RmsOutcome {
    pub delta: DVector<f64>,
    pub state: VoltageState,
    pub full_residual_inf: f64,
    pub iters: usize,
    /// `‖ĝ‖_∞ < ε̂_N` was reached within the iteration cap.
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub expanded: bool,
    pub q: usize,
    /// `‖x_c − VVᵀx_c‖₂` before any expansion; NaN for a non-finite state.
    pub residual_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ReducedModel {
    /// One-dimensional model around the converged nominal state `x0`.
    ///
    /// `s0` must be the injections at `x0` (see [`crate::pfcore::power_injections`]);
    /// the expansion is exact only around a point and its own injections.
    pub fn init(net: &NetworkModel, x0: &VoltageState, s0: &LoadProfile, cfg: RomConfig) -> Result<Self, RomError> {
        let n2 = 2 * net.n();
        if x0.len() != net.n() {
            return Err(RomError::LengthMismatch { what: "nominal state", expected: net.n(), got: x0.len() });
        }
        if s0.len() != net.n() {
            return Err(RomError::LengthMismatch { what: "nominal injections", expected: net.n(), got: s0.len() });
        }
        let xc = x0.cartesian_stacked();
        let norm = dot(&xc, &xc).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(RomError::ZeroState);
        }
        let v0: Vec<f64> = xc.iter().map(|x| x / norm).collect();
        let jc0 = jacobian_cartesian(net, x0);
        let s0 = s0.stacked();
        let jv = jc0.mul_vec(&v0);
        let g = DMatrix::from_element(1, 1, dot(&jv, &jv));
        let (h_v, h_hat) = if cfg.n_q >= 1 {
            let h = hessian_apply(net, &v0, &v0);
            let hh = dot(&jv, &h);
            (DMatrix::from_column_slice(n2, 1, &h), DMatrix::from_element(1, 1, hh))
        } else {
            (DMatrix::zeros(n2, 0), DMatrix::zeros(1, 0))
        };
        Ok(Self {
            basis: DMatrix::from_column_slice(n2, 1, &v0),
            g_factor: GramFactor::new(&g),
            s0_hat: DVector::from_element(1, dot(&jv, &s0)),
            j_hat: DMatrix::from_column_slice(n2, 1, &jv),
            g_hat: g,
            h_v,
            h_hat_t: h_hat.transpose(),
            h_hat,
            x_c0_hat: DVector::from_element(1, norm),
            delta_x_hat: DVector::zeros(1),
            cfg,
            jc0,
            s0,
            x0: x0.clone(),
        })
    }

    pub fn q(&self) -> usize {
        self.basis.ncols()
    }

    /// Number of directions carrying quadratic terms.
    pub fn q_h(&self) -> usize {
        self.q().min(self.cfg.n_q)
    }

    pub fn config(&self) -> &RomConfig {
        &self.cfg
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn j_hat(&self) -> &DMatrix<f64> {
        &self.j_hat
    }

    pub fn g_hat(&self) -> &DMatrix<f64> {
        &self.g_hat
    }

    pub fn h_v(&self) -> &DMatrix<f64> {
        &self.h_v
    }

    /// Packed `Ĥ`.
    pub fn h_hat(&self) -> &DMatrix<f64> {
        &self.h_hat
    }

    pub fn s0_hat(&self) -> &DVector<f64> {
        &self.s0_hat
    }

    pub fn x_c0_hat(&self) -> &DVector<f64> {
        &self.x_c0_hat
    }

    pub fn delta_x_hat(&self) -> &DVector<f64> {
        &self.delta_x_hat
    }

    pub fn set_delta_x_hat(&mut self, delta: DVector<f64>) {
        assert_eq!(delta.len(), self.q());
        self.delta_x_hat = delta;
    }

    pub fn jc0(&self) -> &CsrMatrix<f64> {
        &self.jc0
    }

    /// Injections at the expansion point, stacked.
    pub fn s0(&self) -> &[f64] {
        &self.s0
    }

    pub fn nominal_state(&self) -> &VoltageState {
        &self.x0
    }

    /// `Ĥ` as `q × q_h²` with Kronecker columns in row-major pair order.
    pub fn h_hat_kron(&self) -> DMatrix<f64> {
        let qh = self.q_h();
        let mut out = DMatrix::zeros(self.q(), qh * qh);
        for i in 0..qh {
            for j in 0..qh {
                out.set_column(kron_index(i, j, qh), &self.h_hat.column(pair_index(i, j)));
            }
        }
        out
    }

    /// `Ŝ = ĴᵀS` for a stacked injection vector.
    pub fn project(&self, s: &[f64]) -> DVector<f64> {
        self.j_hat.tr_mul(&DVector::from_column_slice(s))
    }

    fn quad_coeffs(&self, delta: &DVector<f64>) -> DVector<f64> {
        let qh = self.q_h();
        let mut z = DVector::zeros(pair_count(qh));
        for j in 0..qh {
            for i in 0..=j {
                let c = if i == j { 1.0 } else { 2.0 };
                z[pair_index(i, j)] = c * delta[i] * delta[j];
            }
        }
        z
    }

    /// `ĝ(δ) = ŝ₀ + Ĝδ + ½Ĥ(δ⊗δ) − Ŝ`, quadratic part over the first `q_h` coordinates.
    pub fn reduced_residual(&self, delta: &DVector<f64>, s_hat: &DVector<f64>) -> DVector<f64> {
        let z = self.quad_coeffs(delta);
        let mut g = &self.s0_hat + &self.g_hat * delta - s_hat;
        g.gemv_tr(0.5, &self.h_hat_t, &z, 1.0);
        g
    }

    /// Full-space state `V(x̂_c0 + δ)`.
    pub fn reconstruct(&self, delta: &DVector<f64>) -> VoltageState {
        let coords = &self.x_c0_hat + delta;
        let xc = &self.basis * coords;
        VoltageState::from_cartesian_stacked(xc.as_slice())
    }

    /// Reduced Newton-like iteration `δ ← δ − Ĝ⁻¹ĝ(δ)` from the stored warm start.
    pub fn rms_solve(&self, s_hat: &DVector<f64>, net: &NetworkModel, s_spec: &LoadProfile) -> RmsOutcome {
        let mut delta = self.delta_x_hat.clone();
        let mut iters = 0;
        let mut converged = false;
        loop {
            let g = self.reduced_residual(&delta, s_hat);
            let r = g.amax();
            if !r.is_finite() {
                break;
            }
            if r < self.cfg.eps_rms {
                converged = true;
                break;
            }
            if iters >= self.cfg.max_rms_iters {
                break;
            }
            delta -= self.g_factor.solve(&g);
            iters += 1;
        }
        let state = self.reconstruct(&delta);
        let full_residual_inf = if state.is_finite() { inf_norm(&mismatch(net, &state, s_spec)) } else { f64::NAN };
        RmsOutcome { delta, state, full_residual_inf, iters, converged }
    }

    /// Coordinates of `x_c` in the basis, relative to the expansion point.
    pub fn project_state(&self, x: &VoltageState) -> DVector<f64> {
        let xc = DVector::from_vec(x.cartesian_stacked());
        self.basis.tr_mul(&xc) - &self.x_c0_hat
    }

    /// Grows the basis by the part of `x_full` outside its span, if that
    /// part exceeds `ε_B`. The warm start becomes the coordinates of `x_full`.
    pub fn dse_update(&mut self, x_full: &VoltageState, net: &NetworkModel) -> ExpansionReport {
        let n2 = self.basis.nrows();
        let xc = DVector::from_vec(x_full.cartesian_stacked());
        if !xc.iter().all(|v| v.is_finite()) {
            return ExpansionReport { expanded: false, q: self.q(), residual_norm: f64::NAN };
        }
        // Classical Gram–Schmidt, applied twice.
        let c1 = self.basis.tr_mul(&xc);
        let mut r = &xc - &self.basis * &c1;
        let c2 = self.basis.tr_mul(&r);
        r -= &self.basis * &c2;
        let coords = c1 + c2 - &self.x_c0_hat;
        let rn = r.norm();
        if rn <= self.cfg.eps_basis {
            self.delta_x_hat = coords;
            return ExpansionReport { expanded: false, q: self.q(), residual_norm: rn };
        }
        let mut v = r / rn;
        // Extra pass if the new column still leaks into the span.
        for _ in 0..2 {
            let leak = self.basis.tr_mul(&v);
            if leak.amax() <= ORTHO_TOL {
                break;
            }
            v -= &self.basis * leak;
            let nv = v.norm();
            v /= nv;
        }
        let m = self.q();
        let xj = DVector::from_vec(self.jc0.mul_vec(v.as_slice()));

        // Ĝ border.
        let border = self.j_hat.tr_mul(&xj);
        let mut g = DMatrix::zeros(m + 1, m + 1);
        g.view_mut((0, 0), (m, m)).copy_from(&self.g_hat);
        for i in 0..m {
            g[(i, m)] = border[i];
            g[(m, i)] = border[i];
        }
        g[(m, m)] = xj.dot(&xj);

        // New quadratic columns H_c(v_i ⊗ v) for i ≤ m while within the curtailment bound.
        let old_pairs = self.h_v.ncols();
        let mut h_v = std::mem::replace(&mut self.h_v, DMatrix::zeros(0, 0));
        if m < self.cfg.n_q {
            h_v = h_v.resize_horizontally(old_pairs + m + 1, 0.0);
            for i in 0..m {
                let col = hessian_apply(net, self.basis.column(i).as_slice(), v.as_slice());
                h_v.set_column(pair_index(i, m), &DVector::from_vec(col));
            }
            let col = hessian_apply(net, v.as_slice(), v.as_slice());
            h_v.set_column(pair_index(m, m), &DVector::from_vec(col));
        }
        let pairs = h_v.ncols();
        let mut h_hat = DMatrix::zeros(m + 1, pairs);
        h_hat.view_mut((0, 0), (m, old_pairs)).copy_from(&self.h_hat);
        if pairs > old_pairs {
            let new_cols = h_v.columns(old_pairs, pairs - old_pairs);
            let block = self.j_hat.tr_mul(&new_cols);
            h_hat.view_mut((0, old_pairs), (m, pairs - old_pairs)).copy_from(&block);
        }
        let row = h_v.tr_mul(&xj);
        for p in 0..pairs {
            h_hat[(m, p)] = row[p];
        }
        self.h_v = h_v;
        self.h_hat_t = h_hat.transpose();
        self.h_hat = h_hat;

        let s0_new = dot(xj.as_slice(), &self.s0);
        self.s0_hat = self.s0_hat.push(s0_new);
        self.x_c0_hat = self.x_c0_hat.push(0.0);
        self.delta_x_hat = coords.push(rn);
        self.j_hat = self.j_hat.clone().resize_horizontally(m + 1, 0.0);
        self.j_hat.set_column(m, &xj);
        self.basis = std::mem::replace(&mut self.basis, DMatrix::zeros(0, 0)).resize_horizontally(m + 1, 0.0);
        self.basis.set_column(m, &v);
        debug_assert_eq!(self.basis.nrows(), n2);
        self.g_factor = GramFactor::new(&g);
        self.g_hat = g;
        ExpansionReport { expanded: true, q: m + 1, residual_norm: rn }
    }

    /// `‖VᵀV − I‖_∞` (largest entry).
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.basis.tr_mul(&self.basis);
        let q = self.q();
        (gram - DMatrix::<f64>::identity(q, q)).amax()
    }

    pub fn checkpoint(&self) -> RomCheckpoint {
        let rows = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        RomCheckpoint {
            rows: self.basis.nrows(),
            q: self.q(),
            pairs: self.h_v.ncols(),
            config: self.cfg.clone(),
            basis: rows(&self.basis),
            j_hat: rows(&self.j_hat),
            g_hat: rows(&self.g_hat),
            h_v: rows(&self.h_v),
            h_hat: rows(&self.h_hat),
            s0_hat: self.s0_hat.as_slice().to_vec(),
            x_c0_hat: self.x_c0_hat.as_slice().to_vec(),
            delta_x_hat: self.delta_x_hat.as_slice().to_vec(),
            s0: self.s0.clone(),
            x0: self.x0.clone(),
        }
    }

    /// Rebuilds a model from a checkpoint; `J_c0` is recomputed from `net`.
    pub fn from_checkpoint(cp: RomCheckpoint, net: &NetworkModel) -> Result<Self, RomError> {
        let bad = |m: &str| RomError::BadCheckpoint(m.to_string());
        let (r, q, p) = (cp.rows, cp.q, cp.pairs);
        if r != 2 * net.n() {
            return Err(bad("row count does not match the network"));
        }
        let mat = |v: &[f64], nr: usize, nc: usize, what: &str| {
            if v.len() != nr * nc {
                return Err(bad(what));
            }
            Ok(DMatrix::from_row_slice(nr, nc, v))
        };
        let basis = mat(&cp.basis, r, q, "basis")?;
        let j_hat = mat(&cp.j_hat, r, q, "j_hat")?;
        let g_hat = mat(&cp.g_hat, q, q, "g_hat")?;
        let h_v = mat(&cp.h_v, r, p, "h_v")?;
        let h_hat = mat(&cp.h_hat, q, p, "h_hat")?;
        if p != pair_count(q.min(cp.config.n_q)) {
            return Err(bad("pair count does not match q and n_q"));
        }
        for (v, what) in [(&cp.s0_hat, "s0_hat"), (&cp.x_c0_hat, "x_c0_hat"), (&cp.delta_x_hat, "delta_x_hat")] {
            if v.len() != q {
                return Err(bad(what));
            }
        }
        if cp.s0.len() != r || 2 * cp.x0.len() != r {
            return Err(bad("nominal vectors"));
        }
        let x0 = cp.x0;
        Ok(Self {
            g_factor: GramFactor::new(&g_hat),
            basis,
            j_hat,
            g_hat,
            h_v,
            h_hat_t: h_hat.transpose(),
            h_hat,
            s0_hat: DVector::from_vec(cp.s0_hat),
            x_c0_hat: DVector::from_vec(cp.x_c0_hat),
            delta_x_hat: DVector::from_vec(cp.delta_x_hat),
            cfg: cp.config,
            jc0: jacobian_cartesian(net, &x0),
            s0: cp.s0,
            x0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RomError> {
        let io = |e: String| RomError::Io { path: path.display().to_string(), message: e };
        let f = std::fs::File::create(path).map_err(|e| io(e.to_string()))?;
        serde_json::to_writer(std::io::BufWriter::new(f), &self.checkpoint()).map_err(|e| io(e.to_string()))
    }

    pub fn load(path: &Path, net: &NetworkModel) -> Result<Self, RomError> {
        let io = |e: String| RomError::Io { path: path.display().to_string(), message: e };
        let f = std::fs::File::open(path).map_err(|e| io(e.to_string()))?;
        let cp: RomCheckpoint = serde_json::from_reader(std::io::BufReader::new(f)).map_err(|e| io(e.to_string()))?;
        Self::from_checkpoint(cp, net)
    }
}

/// Flat serialization of a [`ReducedModel`]: dimensions plus row-major arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RomCheckpoint {
    pub rows: usize,
    pub q: usize,
    pub pairs: usize,
    pub config: RomConfig,
    pub basis: Vec<f64>,
    pub j_hat: Vec<f64>,
    pub g_hat: Vec<f64>,
    pub h_v: Vec<f64>,
    pub h_hat: Vec<f64>,
    pub s0_hat: Vec<f64>,
    pub x_c0_hat: Vec<f64>,
    pub delta_x_hat: Vec<f64>,
    pub s0: Vec<f64>,
    /// Expansion point, both coordinate views.
    pub x0: VoltageState,
}
