//! Cramér-Rao-bound-driven beamforming design for a multibeam LEO satellite
//! that serves rate-split downlink users while illuminating a radar target,
//! plus the bistatic receive chain used to validate the design.

use openblas_src as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod array;
pub mod channel;
pub mod commrates;
pub mod conic;
pub mod config;
pub mod crb;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod signalsim;

pub use commrates::{BeamformerSet, RateReport, Strategy};
pub use config::ScenarioConfig;
pub use error::{Error, Result};

/// The crate-wide deterministic generator.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
