//! Robust linear precoding for the multi-user MISO downlink under imperfect
//! channel state information at the transmitter.
//!
//! The average MMSE of each user is replaced by a second-order Taylor
//! approximation whose constraints are linear in the precoder Gram matrices.
//! Power minimization and min-max AMMSE designs are then obtained from
//! semidefinite relaxations solved by an interior-point backend.
// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod ammse;
pub mod channel;
pub mod conic;
pub mod design;
pub mod error;
pub mod experiment;
pub mod linalg;

pub use ammse::{AmmseBreakdown, GramSet, McEstimate, Precoder};
pub use channel::{ChannelConfig, ChannelInstance, ChannelSample};
pub use conic::{ClarabelBackend, ConicBackend, ConstraintModel, PlrSpec, SolveStatus, SolverSettings};
pub use design::{AlgoConfig, AlphaSource, McConfig, Problem, SolveReport, Termination};
pub use error::{Error, Result};
pub use experiment::{reference_scenario, ExperimentSpec, Mode};
pub use linalg::{CMatrix, CVector};
