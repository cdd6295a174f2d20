//! Numerical experiments for quasilinear wave equations `−□w + P∂w∂∂w = 0`
//! in two space dimensions with a null cubic tensor `P`.
//!
//! The crate evolves compactly supported small data with a leapfrog scheme,
//! applies the commuting vector fields to the stored history, samples the
//! solution on hyperboloids `t² − |x|² = s²` and evaluates the energies and
//! estimates of the hyperboloidal vector-field method on those samples.

// `!(x > 0.0)` rejects NaN on purpose; tensor loops index several arrays at once.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

pub mod diagnostics;
pub mod error;
pub mod frames;
pub mod harness;
pub mod hyperboloid;
pub mod nulltensor;
pub mod solver;
pub mod summation;
pub mod vectorfields;

pub use diagnostics::{DecayFit, DiagnosticSeries, GhostWeightAccumulator, RunMonitor};
pub use error::{Error, Result};
pub use frames::{FramePoint, TransitionMatrix};
pub use harness::{CsvRow, Kind, Report, RunConfig};
pub use hyperboloid::{HyperboloidSlice, NaturalEnergy, SliceGeometry};
pub use nulltensor::{CubicTensor, NullVerdict, SpacetimeVector};
pub use solver::{GridSpec, InitialData, Profile, Simulation, SolutionHistory};
pub use vectorfields::{FieldId, MultiIndex};
