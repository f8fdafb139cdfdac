//! Melnikov analysis of periodically perturbed reversible Filippov systems
//! with a two-fold annulus of crossing periodic orbits.
//!
//! The crate is organised bottom-up:
//!
//! * [`fields`]: the switched model, region types and the sliding field.
//! * [`flow`]: adaptive integration, switching-line events and Filippov
//!   trajectories with sliding.
//! * [`annulus`]: fold detection, the half-return time `σ̄(x)` and its inverse.
//! * [`melnikov`]: the Melnikov function `M(θ, x)` and the fold quantity `g_θ`.
//! * [`predictor`]: zeros of `M`, the visible–invisible two-fold criterion and
//!   the slow–fast prediction for sliding cycles.
//! * [`verify`]: direct numerical checks of every prediction.
//! * [`hamiltonian`]: a closed-form reference model.

// `!(a > b)` is used on purpose so NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod annulus;
pub mod fields;
pub mod flow;
pub mod hamiltonian;
pub mod melnikov;
pub mod predictor;
pub mod quadrature;
pub mod roots;
pub mod verify;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;

/// Wedge product `a ∧ b = a1 b2 - a2 b1`.
#[inline]
pub fn wedge(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

pub use annulus::{AnnulusData, AnnulusError, Fold, FoldPair};
pub use fields::{FieldError, FilippovModel, RegionKind, Side, SmoothField, Visibility};
pub use flow::{FlowError, FlowOptions, Mode, Trajectory};
pub use melnikov::{MelnikovError, MelnikovEvaluator};
pub use predictor::{PredictionReport, PredictorError, TwoFoldOutcome};
pub use verify::VerifyError;
