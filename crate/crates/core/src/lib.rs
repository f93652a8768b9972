//! Learning continuous-time linear systems `ẋ = Ax (+ Bu)` from snapshot
//! data with stability guaranteed by construction.
//!
//! The drift matrix is parameterized as `A = (J̄ − J̄ᵀ − R̄R̄ᵀ) Q̄Q̄ᵀ`, which
//! has its spectrum in the closed left half-plane for every value of the
//! factors, and is fitted by unrolling a fourth-order Runge-Kutta step inside
//! the loss so that no derivative estimates are needed.
//!
//! Modules:
//! - [`linalg`]: dense matrices, SVD, eigenvalues, pseudo-inverse
//! - [`stableparam`]: the stable parameterization and its Lyapunov function
//! - [`integrator`]: RK4 maps and trajectory simulation
//! - [`compression`]: POD bases
//! - [`inference`]: unrolled losses, gradients, Adam training, baselines
//! - [`datagen`]: reproducible experiment data
//! - [`io`]: text and binary file formats

pub mod compression;
pub mod datagen;
pub mod inference;
pub mod integrator;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod random;
pub mod snapshots;
pub mod stableparam;

pub use compression::{fit_pod, PodBasis, RankCriterion};
pub use inference::{train_lsi, train_slsi, LossReport, TrainConfig};
pub use integrator::{simulate, InputSignal, MidpointRule, TimeGrid};
pub use linalg::{Complex, Matrix, Spectrum};
pub use snapshots::{SnapshotSet, Trajectory};
pub use stableparam::{LinearModel, Provenance, StableParams};
