//! Newton power flow with each linear step approximated by a truncated
//! Neumann series around the constant factorization of `N⟨Y_b⟩`.
//!
//! Dividing the Cartesian Newton system by `Ṽ` bus by bus gives
//! `(N⟨Y_b⟩ + 𝒟) y = 𝒃` with `𝒟 = d(Ĩ*/Ṽ)` and `𝒃 = (S − s(x))/Ṽ`, after
//! which the polar step is `Δx = R(Ṽ)⁻¹ y` and `x ← x + Δx`.

use std::time::{Duration, Instant};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::netmodel::{LoadProfile, NetworkModel};
use crate::pfcore::{build_n_ybus, injected_currents_complex, solve_r_block_into, RealBlockMatrix, VoltageState};
use crate::sparla::{ldl_factorize_with, minimum_degree, spectral_radius_estimate, LdlFactors, LinalgError};

/// Margins below this are reported as a warning.
pub const MARGIN_WARNING: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum NpfsError {
    #[error("N<Y_b> factorization failed (network disconnected or degenerate): {0}")]
    Factorization(#[from] LinalgError),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch { what: &'static str, expected: usize, got: usize },
}

/// When the perturbation `𝒟` is recomputed during a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DUpdatePolicy {
    /// Every Newton iteration.
    Full,
    /// Once, from the starting state.
    Frozen,
    /// Every `m`-th iteration, starting with the first.
    EveryM(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NpfsConfig {
    pub eps_newton: f64,
    pub k_neumann: usize,
    pub max_newton_iters: usize,
    pub d_update_policy: DUpdatePolicy,
    pub check_margin: bool,
}

impl Default for NpfsConfig {
    fn default() -> Self {
        Self { eps_newton: 1e-4, k_neumann: 3, max_newton_iters: 20, d_update_policy: DUpdatePolicy::Full, check_margin: false }
    }
}

impl NpfsConfig {
    pub fn validate(&self) -> Result<(), NpfsError> {
        if !(self.eps_newton > 0.0) {
            return Err(NpfsError::InvalidConfig(format!("eps_newton must be positive, got {}", self.eps_newton)));
        }
        if self.d_update_policy == DUpdatePolicy::EveryM(0) {
            return Err(NpfsError::InvalidConfig("every_m needs m >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub newton_iters: usize,
    pub neumann_terms_per_iter: usize,
    /// Newton steps whose series was cut back to the leading term.
    pub guard_trips: usize,
    pub final_residual_inf: f64,
    #[serde(with = "crate::duration_secs")]
    pub wall_time: Duration,
    pub converged: bool,
}

/// Factors `N⟨Y_b⟩` with a bus-level minimum-degree ordering that keeps the
/// real and imaginary coordinates of each bus adjacent.
pub fn prepare(net: &NetworkModel) -> Result<LdlFactors, NpfsError> {
    let n_mat = build_n_ybus(net);
    let perm = minimum_degree(net.ybus_reduced()).interleave_halves();
    Ok(ldl_factorize_with(n_mat.matrix(), perm)?)
}

/// Output of [`neumann_apply`].
#[derive(Clone, Debug, PartialEq)]
pub struct NeumannResult {
    pub y: Vec<f64>,
    /// Correction terms summed after the leading one.
    pub terms: usize,
    /// A term grew in norm and the series was truncated there.
    pub diverged: bool,
    /// Euclidean norm of every term computed, leading term first.
    pub term_norms: Vec<f64>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `z ← 𝒟 z` for `𝒟 = d(d)` acting on stacked complex vectors.
fn apply_d(d: &[Complex64], z: &[f64], out: &mut [f64]) {
    let n = d.len();
    for i in 0..n {
        let (a, b) = (z[i], z[n + i]);
        out[i] = d[i].re * a - d[i].im * b;
        out[n + i] = d[i].im * a + d[i].re * b;
    }
}

/// Reusable buffers for [`neumann_apply_with`].
#[derive(Clone, Debug)]
pub struct NeumannWorkspace {
    term: Vec<f64>,
    scratch: Vec<f64>,
    work: Vec<f64>,
}

impl NeumannWorkspace {
    pub fn new(dim: usize) -> Self {
        Self { term: vec![0.0; dim], scratch: vec![0.0; dim], work: vec![0.0; dim] }
    }
}

/// `y ≈ Σ_{i=0}^{k} (−1)^i ((ℒ𝒰)⁻¹𝒟)^i (ℒ𝒰)⁻¹𝒃`, stopping early if a term grows.
pub fn neumann_apply(f: &LdlFactors, d: &[Complex64], rhs: &[f64], k: usize) -> Result<NeumannResult, NpfsError> {
    let mut ws = NeumannWorkspace::new(f.dim());
    let mut y = vec![0.0; f.dim()];
    let (terms, diverged, term_norms) = neumann_apply_with(f, d, rhs, k, &mut y, &mut ws)?;
    Ok(NeumannResult { y, terms, diverged, term_norms })
}

/// Allocation-light variant writing into `y`; returns `(terms, diverged, term_norms)`.
pub fn neumann_apply_with(
    f: &LdlFactors,
    d: &[Complex64],
    rhs: &[f64],
    k: usize,
    y: &mut [f64],
    ws: &mut NeumannWorkspace,
) -> Result<(usize, bool, Vec<f64>), NpfsError> {
    let dim = f.dim();
    if rhs.len() != dim {
        return Err(NpfsError::LengthMismatch { what: "rhs", expected: dim, got: rhs.len() });
    }
    if 2 * d.len() != dim {
        return Err(NpfsError::LengthMismatch { what: "perturbation", expected: dim / 2, got: d.len() });
    }
    f.febs_into(rhs, &mut ws.term, &mut ws.work)?;
    y.copy_from_slice(&ws.term);
    let mut norms = vec![norm2(&ws.term)];
    let mut terms = 0;
    let mut diverged = false;
    for _ in 0..k {
        apply_d(d, &ws.term, &mut ws.scratch);
        f.febs_into(&ws.scratch, &mut ws.term, &mut ws.work)?;
        ws.term.iter_mut().for_each(|v| *v = -*v);
        let nrm = norm2(&ws.term);
        let prev = *norms.last().unwrap();
        norms.push(nrm);
        if !(nrm <= prev) {
            diverged = true;
            break;
        }
        for (a, b) in y.iter_mut().zip(&ws.term) {
            *a += b;
        }
        terms += 1;
    }
    Ok((terms, diverged, norms))
}

/// Per-solve scratch so repeated solves avoid reallocating.
#[derive(Clone, Debug)]
pub struct NpfsWorkspace {
    neumann: NeumannWorkspace,
    rhs: Vec<f64>,
    y: Vec<f64>,
    dx: Vec<f64>,
    d: Vec<Complex64>,
}

impl NpfsWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            neumann: NeumannWorkspace::new(2 * n),
            rhs: vec![0.0; 2 * n],
            y: vec![0.0; 2 * n],
            dx: vec![0.0; 2 * n],
            d: vec![Complex64::new(0.0, 0.0); n],
        }
    }
}

/// Solves `s(x) = S` from `x0`. Non-convergence is reported in the stats, not as an error.
pub fn npfs_solve(
    f: &LdlFactors,
    net: &NetworkModel,
    s_spec: &LoadProfile,
    x0: &VoltageState,
    cfg: &NpfsConfig,
) -> Result<(VoltageState, SolveStats), NpfsError> {
    let mut ws = NpfsWorkspace::new(net.n());
    npfs_solve_with(f, net, s_spec, x0, cfg, &mut ws)
}

pub fn npfs_solve_with(
    f: &LdlFactors,
    net: &NetworkModel,
    s_spec: &LoadProfile,
    x0: &VoltageState,
    cfg: &NpfsConfig,
    ws: &mut NpfsWorkspace,
) -> Result<(VoltageState, SolveStats), NpfsError> {
    let start = Instant::now();
    let n = net.n();
    if s_spec.len() != n {
        return Err(NpfsError::LengthMismatch { what: "load profile", expected: n, got: s_spec.len() });
    }
    if x0.len() != n {
        return Err(NpfsError::LengthMismatch { what: "initial state", expected: n, got: x0.len() });
    }
    if f.dim() != 2 * n {
        return Err(NpfsError::LengthMismatch { what: "factors", expected: 2 * n, got: f.dim() });
    }
    let spec = s_spec.to_complex();
    let mut x = x0.clone();
    let mut iters = 0;
    let mut guard_trips = 0;
    let mut have_d = false;
    let mut res;
    let converged;
    loop {
        let v = x.complex();
        let cur = injected_currents_complex(net, &v);
        res = 0.0f64;
        for i in 0..n {
            let b = spec[i] - v[i] * cur[i].conj();
            res = res.max(b.re.abs()).max(b.im.abs());
            let r = b / v[i];
            ws.rhs[i] = r.re;
            ws.rhs[n + i] = r.im;
        }
        if !res.is_finite() {
            converged = false;
            break;
        }
        if res < cfg.eps_newton {
            converged = true;
            break;
        }
        if iters >= cfg.max_newton_iters {
            converged = false;
            break;
        }
        let refresh = match cfg.d_update_policy {
            DUpdatePolicy::Full => true,
            DUpdatePolicy::Frozen => !have_d,
            DUpdatePolicy::EveryM(m) => !have_d || iters % m == 0,
        };
        if refresh {
            for i in 0..n {
                ws.d[i] = cur[i].conj() / v[i];
            }
            have_d = true;
        }
        let (_, diverged, _) = neumann_apply_with(f, &ws.d, &ws.rhs, cfg.k_neumann, &mut ws.y, &mut ws.neumann)?;
        if diverged {
            guard_trips += 1;
            f.febs_into(&ws.rhs, &mut ws.y, &mut ws.neumann.work)?;
        }
        if solve_r_block_into(&x, &ws.y, &mut ws.dx).is_err() {
            converged = false;
            break;
        }
        x = x.step_polar(&ws.dx);
        iters += 1;
    }
    if cfg.check_margin {
        let m = convergence_margin(net, &x, None);
        log::debug!("convergence margin {:.3e}", m.margin);
    }
    let stats = SolveStats {
        newton_iters: iters,
        neumann_terms_per_iter: cfg.k_neumann,
        guard_trips,
        final_residual_inf: res,
        wall_time: start.elapsed(),
        converged,
    };
    Ok((x, stats))
}

/// Advisory check of how far the Neumann expansion is from divergence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// `ρ̂(EᵀY_lE) · min|V| / max|Ĩ|`; `+∞` with no current flowing.
    pub margin: f64,
    pub spectral_radius: f64,
    pub min_voltage: f64,
    pub max_current: f64,
    /// No separate shunt data: `Y_b` stood in for `EᵀY_lE`.
    pub approximate: bool,
    /// Direct power-iteration estimate of `ρ((ℒ𝒰)⁻¹𝒟)` when factors were supplied.
    /// The series converges when this is below 1.
    pub neumann_radius: Option<f64>,
}

const MARGIN_POWER_ITERS: usize = 200;

/// Compares the network's admittance scale against the nodal currents at `vs`.
pub fn convergence_margin(net: &NetworkModel, vs: &VoltageState, factors: Option<&LdlFactors>) -> MarginReport {
    let n = net.n();
    let (lap, approximate) = match net.shunt_reduced() {
        Some(sh) => {
            let t: Vec<_> = (0..n).map(|i| (i, i, -sh[i])).collect();
            let mut all = net.ybus_reduced().triplets();
            all.extend(t);
            (crate::sparla::CsrMatrix::from_triplets(n, n, &all), false)
        }
        None => (net.ybus_reduced().clone(), true),
    };
    // N⟨·⟩ is symmetric with eigenvalues ±σ(EᵀY_lE), so its radius is the
    // dominant singular value, which is the dominant |eigenvalue| here.
    let nl = RealBlockMatrix::n_of(&lap).into_matrix();
    let spectral_radius = spectral_radius_estimate(|x, y| nl.mul_vec_into(x, y), 2 * n, MARGIN_POWER_ITERS, 0x5eed);
    let v = vs.complex();
    let cur = injected_currents_complex(net, &v);
    let max_current = cur.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let min_voltage = vs.v_mag().iter().copied().fold(f64::INFINITY, f64::min);
    let margin = if max_current == 0.0 { f64::INFINITY } else { spectral_radius * min_voltage / max_current };
    let neumann_radius = factors.map(|f| {
        let d: Vec<Complex64> = (0..n).map(|i| cur[i].conj() / v[i]).collect();
        let mut scratch = vec![0.0; 2 * n];
        let mut work = vec![0.0; 2 * n];
        spectral_radius_estimate(
            |x, y| {
                apply_d(&d, x, &mut scratch);
                f.febs_into(&scratch, y, &mut work).expect("dimensions checked");
            },
            2 * n,
            MARGIN_POWER_ITERS,
            0x5eed,
        )
    });
    if margin < MARGIN_WARNING {
        log::warn!("Neumann convergence margin {margin:.3} is below {MARGIN_WARNING}");
    }
    MarginReport { margin, spectral_radius, min_voltage, max_current, approximate, neumann_radius }
}
