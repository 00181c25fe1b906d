//! Exact-posterior Gibbs sampling for two-level hierarchical linear models
//! whose cluster-level continuous covariates, their interactions, and the
//! outcome may be missing at random.
//!
//! The model is
//!
//! ```text
//! Y_ij = β0 + β_Cᵀ C_j + β_Xᵀ X_ij + Σ_s β_XCsᵀ X_ij C_sj + Σ_{s<t} β_CCst C_sj C_tj + u_j + e_ij
//! C_j | x2_j ~ N((I_p ⊗ [1 x2_jᵀ]) α, T)
//! ```
//!
//! with `u_j ~ N(0, τ)` and `e_ij ~ N(0, σ²)`. Every full conditional,
//! including the one for a missing element of `C_j`, is sampled from its
//! exact Gaussian / inverse-gamma / inverse-Wishart form, so the imputation
//! model is compatible with the analysis model by construction.
//!
//! Modules:
//! - [`model`]: model shape, data container, design vectors.
//! - [`dist`]: seeded random streams and the distributions the sampler draws from.
//! - [`gibbs`]: the eight Gibbs steps, chain initialization and chain runners.
//! - [`diagnostics`]: Geweke z, PSRF, posterior summaries.
//! - [`sim`]: simulation scenarios, missingness mechanisms and replication studies.
//! - [`io`]: CSV ingestion, key-value configuration and report writers.

pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod gibbs;
pub mod io;
mod linalg;
pub mod model;
pub mod sim;

pub use diagnostics::{
    convergence_report, geweke_z, posterior_summary, psrf, ConvergenceReport, PosteriorSummary,
};
pub use dist::RngStream;
pub use error::{Error, Result};
pub use gibbs::{
    run_chain, run_chains, ChainRecord, ChainState, ConditionalMoments, GibbsConfig, GibbsModel,
    PriorConfig,
};
pub use model::{Dataset, HlmSpec, Parameters};
pub use sim::{ReplicationReport, Scenario, SimulationDesign};
