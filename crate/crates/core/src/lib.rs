//! Neumann-series Newton power flow and an adaptive reduced-order model for
//! probabilistic power flow on unbalanced distribution networks.
//!
//! The usual entry points: load a network with [`netmodel::load_network`],
//! draw profiles with [`sampling::generate_samples`], then run
//! [`appf::appf_run`] or [`appf::traditional_ppf_run`] and summarize with
//! [`uq::summarize`].

pub mod appf;
mod error;
pub mod netmodel;
pub mod npfs;
pub mod pfcore;
pub mod rom;
pub mod sampling;
pub mod sparla;
pub mod synthetic;
pub mod uq;

pub use appf::{appf_run, traditional_ppf_run, ComparisonReport, Method, PpfConfig, PpfResult, RunRecord, SolvePath};
pub use error::{Error, ErrorKind, Result};
pub use netmodel::{BusId, LoadProfile, NetworkModel, Phase};
pub use npfs::{npfs_solve, NpfsConfig, SolveStats};
pub use pfcore::VoltageState;
pub use rom::{ReducedModel, RomConfig};
pub use sampling::{generate_samples, Correlation, SamplingSpec, UncertainSet};
pub use uq::{summarize, UqSummary};

pub(crate) mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// JSON has no NaN; write it as `null` and read `null` back as NaN.
pub(crate) mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}
