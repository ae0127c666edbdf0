//! Detection of many-body Bell nonlocality through inverse Ising problems.
//!
//! Measured moments of an `(N, k, 2)` scenario are matched against the
//! equilibrium moments of a generalized Ising model `H(σ; K) = -Σ_r K_r f_r(σ)`.
//! When the convex descent on `K` converges, the data admit a local-variable
//! model. When the gradient saturates at a finite value, its asymptotic
//! direction is a Bell inequality violated by the data; its classical bound is
//! the ground-state energy of the effective Hamiltonian built from it.
//!
//! Module map:
//!
//! - [`scenario`] and [`dataset`]: measurement layout, feature monomials, data ingestion.
//! - [`lv`]: the Ising local-variable model and exact enumeration thermodynamics.
//! - [`mc`]: single-spin-flip Metropolis estimates with inter-chain error bars.
//! - [`solver`]: accelerated gradient descent with saturation detection.
//! - [`distill`]: inequality distillation, classical bounds and verdicts.
//! - [`quantum`]: exact-diagonalization data sources.
//! - [`pbc`]: closed forms for the symmetric many-body PBC inequality.
//! - [`pipeline`]: config-driven end-to-end runs and report files.

pub mod dataset;
pub mod distill;
pub mod error;
pub mod format;
pub mod lv;
pub mod mc;
pub mod pbc;
pub mod pipeline;
pub mod quantum;
pub mod scenario;
pub mod solver;

pub use dataset::{DatasetEntry, QuantumDataset, ValidatedDataset};
pub use distill::{BellInequality, BoundMethod, ClassicalBound, SymmetricInequality};
pub use error::{Error, Result};
pub use lv::{LvModel, MomentVector};
pub use mc::{MomentEstimate, SamplerConfig};
pub use scenario::{Feature, MeasurementScenario, Slot, SpinConfiguration};
pub use pipeline::{run_pipeline, PipelineConfig, RunReport};
pub use solver::{Engine, GradientTrace, SolverConfig, SolverOutcome};
