//! Standard-form real semidefinite programs and the solver backend interface.
//!
//! A [`ConicProblem`] has free scalar variables and real symmetric matrix
//! blocks constrained to the PSD cone. The objective and every constraint are
//! linear: `Σ c_j x_j + Σ_b ⟨C_b, X_b⟩ {≤,≥,=} rhs`, with
//! `⟨C, X⟩ = tr(C X)` and every `C_b` symmetric.

mod clarabel_backend;
mod plr;
mod sparse;

pub use clarabel_backend::ClarabelBackend;
pub use plr::{build_plr, extract_precoder, solve_plr, ConstraintModel, ExtractionReport, PlrOutcome, PlrSpec};
pub use sparse::{read_sparse, write_sparse};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// Linear functional over the scalar variables and matrix blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearForm {
    pub scalars: Vec<(usize, f64)>,
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl LinearForm {
    pub fn scalar(mut self, index: usize, coeff: f64) -> Self {
        self.scalars.push((index, coeff));
        self
    }

    pub fn block(mut self, index: usize, coeff: DMatrix<f64>) -> Self {
        self.blocks.push((index, coeff));
        self
    }

    pub fn evaluate(&self, scalars: &[f64], blocks: &[DMatrix<f64>]) -> f64 {
        let s: f64 = self.scalars.iter().map(|&(i, c)| c * scalars[i]).sum();
        let b: f64 = self.blocks.iter().map(|(i, c)| c.dot(&blocks[*i])).sum();
        s + b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub form: LinearForm,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub num_scalars: usize,
    pub block_dims: Vec<usize>,
    /// Minimized.
    pub objective: LinearForm,
    pub constraints: Vec<LinearConstraint>,
}

/// Relative asymmetry tolerated in coefficient matrices.
const SYMMETRY_TOL: f64 = 1e-12;

impl ConicProblem {
    pub fn validate(&self) -> Result<()> {
        let forms = std::iter::once(&self.objective).chain(self.constraints.iter().map(|c| &c.form));
        for form in forms {
            for &(i, c) in &form.scalars {
                if i >= self.num_scalars {
                    return Err(Error::InvalidArgument(format!("scalar index {i} out of range")));
                }
                if !c.is_finite() {
                    return Err(Error::InvalidArgument("non-finite coefficient".into()));
                }
            }
            for (b, coeff) in &form.blocks {
                let dim = *self
                    .block_dims
                    .get(*b)
                    .ok_or_else(|| Error::InvalidArgument(format!("block index {b} out of range")))?;
                if coeff.nrows() != dim || coeff.ncols() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        actual: coeff.nrows(),
                    });
                }
                let defect = (coeff - coeff.transpose()).amax();
                if defect > SYMMETRY_TOL * (1.0 + coeff.amax()) {
                    return Err(Error::InvalidArgument(format!(
                        "coefficient of block {b} is not symmetric ({defect:.2e})"
                    )));
                }
                if coeff.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("non-finite coefficient".into()));
                }
            }
        }
        if self.constraints.iter().any(|c| !c.rhs.is_finite()) {
            return Err(Error::InvalidArgument("non-finite right-hand side".into()));
        }
        Ok(())
    }

    /// Largest violation of the linear constraints at a candidate point.
    pub fn max_violation(&self, scalars: &[f64], blocks: &[DMatrix<f64>]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let lhs = c.form.evaluate(scalars, blocks);
                match c.sense {
                    Sense::Le => (lhs - c.rhs).max(0.0),
                    Sense::Ge => (c.rhs - lhs).max(0.0),
                    Sense::Eq => (lhs - c.rhs).abs(),
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: u32,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
    pub solve_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub objective_value: f64,
    pub scalars: Vec<f64>,
    pub blocks: Vec<DMatrix<f64>>,
    pub stats: SolverStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Primal/dual feasibility tolerance.
    pub tol_feas: f64,
    /// Absolute and relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Eigenvalues above `-tol_psd · max(1, ‖Q‖)` count as nonnegative. The
    /// returned iterate only satisfies the cones up to the feasibility
    /// residual, so this must not be much tighter than `tol_feas`.
    pub tol_psd: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_feas: 1e-8,
            tol_gap: 1e-8,
            tol_psd: 1e-6,
            max_iter: 200,
            verbose: false,
        }
    }
}

/// A solver able to handle [`ConicProblem`]s.
///
/// Implementations must be pure: the same problem and settings give the same
/// solution, and concurrent calls do not interact.
pub trait ConicBackend: Sync {
    fn name(&self) -> &str;

    fn solve(&self, problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution>;
}
