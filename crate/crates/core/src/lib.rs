//! Multitype branching processes in an i.i.d. random environment.
//!
//! A population of `p` particle types evolves in discrete generations. Each
//! generation first draws an environment state (i.i.d. across generations),
//! then every particle independently produces offspring according to the
//! offspring law its type has in that state. This crate covers the strongly
//! subcritical regime, where the expected population decays geometrically and
//! the interesting objects are conditional: the decay rate, the survival
//! constants, the conditional (quasi-stationary) population limit, and the
//! chain obtained by conditioning on survival into the distant future.
//!
//! Module map:
//!
//! * [`spectral`]: dense nonnegative matrices, Perron eigendata by power
//!   iteration, projections onto the simplex, the induced operator norm.
//! * [`envmodel`]: offspring laws, environment states, model validation,
//!   moment extraction, and the model-file loader.
//! * [`lyapunov`]: the growth rate of expected matrix-product norms as a
//!   function of a tilting exponent, its derivative, criticality
//!   classification, and the tilted environment sampler for rare-event
//!   estimation.
//! * [`simulate`]: forward simulation, generating-function iteration, and
//!   Monte Carlo survival / conditional-law estimators.
//! * [`oracle`]: exact finite-state reference answers on a truncated state
//!   space: annealed transition kernel, survival brackets, conditional limit
//!   law, decay-rate extraction, and functional-equation residuals.
//! * [`qprocess`]: the size-biased transform of the truncated kernel, its
//!   invariant law, and the product-form checks for joint conditional limits.
//! * [`rng`]: deterministic splittable random streams so that parallel runs
//!   reproduce byte-identical results for a given seed.
//!
//! All randomness is seeded; all estimators report uncertainty; exact
//! computations report truncation leak so every number carries an error bar
//! or bracket.

pub mod envmodel;
pub mod error;
pub mod fixtures;
mod grid;
pub mod lyapunov;
pub mod oracle;
pub mod qprocess;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod stats;

pub use envmodel::{CheckConfig, ConditionReport, EnvModel, EnvState, OffspringLaw};
pub use error::{Error, Result};
pub use lyapunov::{
    Classification, Criticality, McEstimate, RTheta, SamplingMethod, SlopeEstimate,
    SpectrumConfig, ThetaSpectrum, TiltedSampler,
};
pub use oracle::{
    FunctionalEqReport, LimitRatioReport, PhiReport, TruncatedChain, YaglomData,
};
pub use qprocess::{LimitCheckConfig, LimitReport, QInvariant, QKernel, QStatReport};
pub use simulate::{SurvivalEstimator, Trajectory, YaglomMc};
pub use spectral::{Matrix, SimplexPoint, SpectralData};
