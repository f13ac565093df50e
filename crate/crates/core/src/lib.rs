//! Stability certificates for linear plants driven by a linear gain wrapped
//! in odd functions.
//!
//! A plant `ẋ = Ax + Bu + Df` with a stabilizing gain `K` is controlled by one
//! of three laws:
//!
//! - linear, `u = Kx`;
//! - componentwise, `u = Σ kᵢ φᵢ(xᵢ)`;
//! - scalar-wrapped, `u = φ(Kx)`.
//!
//! Writing each odd function as `φ(s) = ρ(s)·s` turns the closed loop into a
//! linear system with a state-dependent slope matrix. Whenever the slopes stay
//! inside a certified interval, a family of block LMIs (one per polytope
//! vertex) yields a quadratic Lyapunov function, from which the crate derives
//! a stability region, an admissible initial ball, a settling-time bound and an
//! ultimate bound. The [`sim`] module integrates the closed loops so that every
//! certificate can be checked against trajectories.

pub mod certify;
pub mod error;
pub mod ext;
pub mod lmi;
pub mod model;
pub mod rng;
pub mod sector;
pub mod sim;

pub use certify::{
    certify_componentwise, certify_scalar, compare_report, multistep_search, settling_time,
    single_interval_search, ultimate_bound, Aggregates, Certificate, CertifyOptions,
    CertifyWarning, Comparison, IntervalCertificate, SearchOptions, TauSchedule, Theta,
    SearchStats, UltimateBound,
};
pub use error::{Error, Result};
pub use ext::ExtReal;
pub use lmi::{
    assemble, solve_feasibility, verify, vertex_set, LmiSolution, SlopeAssignment, SolveOptions,
    VertexLmi, VertexMode,
};
pub use model::{closed_loop_matrix, validate_plant, ControlLaw, Gain, LawVariant, Plant};
pub use sector::{
    eval_phi, sector_region, sector_region_scalar, slope, slope_at_origin, OddFunction,
    SectorRegion, SlopeProfile,
};
pub use sim::{
    dissipation_residuals, empirical_ultimate_bound, lyapunov_trace, simulate, time_to_ball,
    Disturbance, SimOptions,
    Trajectory,
};
