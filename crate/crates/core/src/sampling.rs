//! Monte Carlo load profiles around a nominal profile.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::netmodel::{LoadProfile, NetworkModel};

/// Name of the generator behind every draw, echoed into run configs.
pub const RNG_ALGORITHM: &str = "chacha20";

#[derive(Debug, thiserror::Error)]
pub enum SamplingError {
    #[error("invalid sampling spec: {0}")]
    Invalid(String),
    #[error("correlation matrix is not positive semi-definite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    /// Independent draws.
    None,
    /// One common factor per sample for every uncertain load.
    Full,
    /// Joint Gaussian with this correlation matrix: `k×k` over the uncertain
    /// loads (one factor per load), or `2k×2k` over their P factors then Q factors.
    Matrix(Vec<Vec<f64>>),
}

/// How P and Q of one load are perturbed under [`Correlation::None`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PqDraws {
    Independent,
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainSet {
    /// Reduced slot indices.
    Explicit(Vec<usize>),
    /// The `k` largest loads by `|S|`, or every slot when `k` exceeds their number.
    TopK(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingSpec {
    pub num_samples: usize,
    pub sigma: f64,
    pub correlation: Correlation,
    pub pq_draws: PqDraws,
    pub uncertain_set: UncertainSet,
    pub fixed_scale: f64,
    pub seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            num_samples: 100,
            sigma: 1.0,
            correlation: Correlation::None,
            pq_draws: PqDraws::Independent,
            uncertain_set: UncertainSet::TopK(25),
            fixed_scale: 0.5,
            seed: 0,
        }
    }
}

/// Reduced indices of the uncertain loads, ascending.
pub fn resolve_uncertain_set(set: &UncertainSet, base: &LoadProfile) -> Result<Vec<usize>, SamplingError> {
    let n = base.len();
    let mut idx = match set {
        UncertainSet::Explicit(v) => {
            if let Some(&bad) = v.iter().find(|&&i| i >= n) {
                return Err(SamplingError::Invalid(format!("uncertain load index {bad} out of range {n}")));
            }
            v.clone()
        }
        UncertainSet::TopK(k) => {
            if *k > n {
                log::warn!("top_k {k} exceeds {n} slots; every load is uncertain");
            }
            let mag: Vec<f64> = (0..n).map(|i| base.p[i].hypot(base.q[i])).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));
            order.truncate(*k);
            order
        }
    };
    idx.sort_unstable();
    let len = idx.len();
    idx.dedup();
    if idx.len() != len {
        return Err(SamplingError::Invalid("uncertain set lists a load twice".into()));
    }
    Ok(idx)
}

/// `L` with `L Lᵀ = C`, via the eigendecomposition so semi-definite inputs work.
fn correlation_factor(c: &[Vec<f64>]) -> Result<DMatrix<f64>, SamplingError> {
    let m = c.len();
    if c.iter().any(|r| r.len() != m) {
        return Err(SamplingError::Invalid("correlation matrix is not square".into()));
    }
    let a = DMatrix::from_fn(m, m, |i, j| c[i][j]);
    if !a.iter().all(|v| v.is_finite()) {
        return Err(SamplingError::Invalid("correlation matrix has non-finite entries".into()));
    }
    let scale = a.amax().max(1.0);
    if (&a - a.transpose()).amax() > 1e-12 * scale {
        return Err(SamplingError::Invalid("correlation matrix is not symmetric".into()));
    }
    let eig = SymmetricEigen::new(a);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(SamplingError::NotPsd(min));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

pub fn validate(spec: &SamplingSpec) -> Result<(), SamplingError> {
    if spec.num_samples < 1 {
        return Err(SamplingError::Invalid("num_samples must be at least 1".into()));
    }
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(SamplingError::Invalid(format!("sigma must be finite and non-negative, got {}", spec.sigma)));
    }
    if !spec.fixed_scale.is_finite() {
        return Err(SamplingError::Invalid("fixed_scale must be finite".into()));
    }
    Ok(())
}

/// Draws `num_samples` profiles. Uncertain loads are scaled by `1 + σξ`;
/// the rest by `fixed_scale`. Deterministic in `(spec, base)`.
pub fn generate_samples(spec: &SamplingSpec, base: &LoadProfile) -> Result<Vec<LoadProfile>, SamplingError> {
    validate(spec)?;
    let set = resolve_uncertain_set(&spec.uncertain_set, base)?;
    let k = set.len();
    let factor = match &spec.correlation {
        Correlation::Matrix(c) => {
            if c.len() != k && c.len() != 2 * k {
                return Err(SamplingError::Invalid(format!(
                    "correlation matrix is {}x{0}, expected {k} or {}",
                    c.len(),
                    2 * k
                )));
            }
            Some(correlation_factor(c)?)
        }
        _ => None,
    };
    let mut fixed = base.scaled(spec.fixed_scale);
    for &i in &set {
        fixed.p[i] = 0.0;
        fixed.q[i] = 0.0;
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut out = Vec::with_capacity(spec.num_samples);
    let mut xp = vec![0.0; k];
    let mut xq = vec![0.0; k];
    for _ in 0..spec.num_samples {
        match (&spec.correlation, &factor) {
            (Correlation::None, _) => {
                for j in 0..k {
                    xp[j] = draw();
                    xq[j] = match spec.pq_draws {
                        PqDraws::Independent => draw(),
                        PqDraws::Shared => xp[j],
                    };
                }
            }
            (Correlation::Full, _) => {
                let a = draw();
                xp.iter_mut().for_each(|v| *v = a);
                xq.iter_mut().for_each(|v| *v = a);
            }
            (Correlation::Matrix(_), Some(l)) => {
                let z = nalgebra::DVector::from_fn(l.ncols(), |_, _| draw());
                let xi = l * z;
                for j in 0..k {
                    xp[j] = xi[j];
                    xq[j] = if xi.len() == 2 * k { xi[k + j] } else { xi[j] };
                }
            }
            (Correlation::Matrix(_), None) => unreachable!("factor built above"),
        }
        let mut s = fixed.clone();
        for (j, &i) in set.iter().enumerate() {
            s.p[i] = base.p[i] * (1.0 + spec.sigma * xp[j]);
            s.q[i] = base.q[i] * (1.0 + spec.sigma * xq[j]);
        }
        out.push(s);
    }
    Ok(out)
}

/// Long-format dump `sample,bus,P_pu,Q_pu` with 0-based full slot indices.
pub fn write_samples_csv(path: &Path, net: &NetworkModel, samples: &[LoadProfile]) -> Result<(), SamplingError> {
    let io = |e: String| SamplingError::Io { path: path.display().to_string(), message: e };
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.to_string()))?;
    w.write_record(["sample", "bus", "P_pu", "Q_pu"]).map_err(|e| io(e.to_string()))?;
    for (m, s) in samples.iter().enumerate() {
        for i in 0..s.len() {
            let bus = net.reduced_to_full()[i];
            w.write_record([m.to_string(), bus.to_string(), s.p[i].to_string(), s.q[i].to_string()])
                .map_err(|e| io(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| io(e.to_string()))
}
