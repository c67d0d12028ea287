//! Interior-point backend built on Clarabel.
//!
//! Clarabel solves `min qᵀx  s.t.  Ax + s = b, s ∈ K`. Variables are laid out
//! as `[scalars | vech(X_0) | vech(X_1) | …]` where `vech` lists the upper
//! triangle column by column with unscaled entries. PSD cones use Clarabel's
//! scaled triangle, so each block contributes rows `s = D vech(X)` with
//! `D = diag(1 on the diagonal, √2 off it)`.

use std::f64::consts::SQRT_2;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PSDTriangleConeT, SolverStatus,
    SupportedConeT, ZeroConeT,
};
use nalgebra::DMatrix;

use super::{ConicBackend, ConicProblem, ConicSolution, LinearForm, Sense, SolveStatus, SolverSettings, SolverStats};
use crate::error::{Error, Result};

// The system OpenBLAS supplies the LAPACK routines used by the PSD cones.
use openblas_src as _;

#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

struct Layout {
    offsets: Vec<usize>,
    num_vars: usize,
}

impl Layout {
    fn new(problem: &ConicProblem) -> Self {
        let mut offsets = Vec::with_capacity(problem.block_dims.len());
        let mut next = problem.num_scalars;
        for &d in &problem.block_dims {
            offsets.push(next);
            next += tri(d);
        }
        Self {
            offsets,
            num_vars: next,
        }
    }

    /// Column index of entry `(row, col)` with `row <= col` in block `b`.
    fn entry(&self, b: usize, row: usize, col: usize) -> usize {
        self.offsets[b] + tri(col) + row
    }
}

/// Dense coefficient vector of a linear form in the variable layout.
fn form_coefficients(form: &LinearForm, layout: &Layout, dims: &[usize]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for &(i, c) in &form.scalars {
        out.push((i, c));
    }
    for (b, coeff) in &form.blocks {
        for col in 0..dims[*b] {
            for row in 0..=col {
                let v = if row == col {
                    coeff[(row, col)]
                } else {
                    coeff[(row, col)] + coeff[(col, row)]
                };
                if v != 0.0 {
                    out.push((layout.entry(*b, row, col), v));
                }
            }
        }
    }
    out
}

type Tweak = fn(&mut DefaultSettings<f64>);

/// Settings variants tried in order while the solver ends without a
/// definitive answer. Near the feasibility floor the default equilibration
/// often yields only a reduced-accuracy infeasibility certificate.
const RETRY_LADDER: [Tweak; 4] = [
    |_| {},
    |s| s.equilibrate_enable = false,
    |s| s.max_step_fraction = 0.9,
    |s| {
        s.equilibrate_enable = false;
        s.static_regularization_constant = 1e-7;
    },
];

fn is_definitive(status: SolverStatus) -> bool {
    matches!(status, SolverStatus::Solved | SolverStatus::PrimalInfeasible)
}

fn map_status(status: SolverStatus) -> SolveStatus {
    match status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::MaxIterations | SolverStatus::MaxTime => SolveStatus::IterationLimit,
        // Reduced-accuracy outcomes, including "almost infeasible", are not
        // trusted as certificates.
        _ => SolveStatus::NumericalFailure,
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution> {
        problem.validate()?;
        let layout = Layout::new(problem);
        let n = layout.num_vars;

        let mut q = vec![0.0; n];
        for (j, v) in form_coefficients(&problem.objective, &layout, &problem.block_dims) {
            q[j] += v;
        }

        let mut rows = Vec::new();
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut push_row = |coeffs: Vec<(usize, f64)>, sign: f64, rhs: f64, b: &mut Vec<f64>| {
            let r = b.len();
            for (j, v) in coeffs {
                rows.push(r);
                cols.push(j);
                vals.push(sign * v);
            }
            b.push(sign * rhs);
        };

        let equalities: Vec<_> = problem.constraints.iter().filter(|c| c.sense == Sense::Eq).collect();
        for c in &equalities {
            push_row(
                form_coefficients(&c.form, &layout, &problem.block_dims),
                1.0,
                c.rhs,
                &mut b,
            );
        }
        if !equalities.is_empty() {
            cones.push(ZeroConeT(equalities.len()));
        }
        let mut inequalities = 0;
        for c in problem.constraints.iter().filter(|c| c.sense != Sense::Eq) {
            let sign = if c.sense == Sense::Le { 1.0 } else { -1.0 };
            push_row(
                form_coefficients(&c.form, &layout, &problem.block_dims),
                sign,
                c.rhs,
                &mut b,
            );
            inequalities += 1;
        }
        if inequalities > 0 {
            cones.push(NonnegativeConeT(inequalities));
        }
        for (blk, &d) in problem.block_dims.iter().enumerate() {
            for col in 0..d {
                for row in 0..=col {
                    let scale = if row == col { 1.0 } else { SQRT_2 };
                    push_row(vec![(layout.entry(blk, row, col), -scale)], 1.0, 0.0, &mut b);
                }
            }
            cones.push(PSDTriangleConeT(d));
        }

        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
        let p = CscMatrix::zeros((n, n));
        let mut attempt = 0;
        let solver = loop {
            let mut solver_settings = DefaultSettingsBuilder::default()
                .verbose(settings.verbose)
                .max_iter(settings.max_iter)
                .tol_feas(settings.tol_feas)
                .tol_gap_abs(settings.tol_gap)
                .tol_gap_rel(settings.tol_gap)
                .build()
                .map_err(|e| Error::Numerical(format!("invalid solver settings: {e:?}")))?;
            RETRY_LADDER[attempt](&mut solver_settings);
            let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, solver_settings)
                .map_err(|e| Error::Numerical(format!("solver setup failed: {e:?}")))?;
            solver.solve();
            let status = solver.solution.status;
            attempt += 1;
            if is_definitive(status) || attempt == RETRY_LADDER.len() {
                break solver;
            }
            log::info!("clarabel returned {status:?}; retrying with fallback settings #{attempt}");
        };
        let x = &solver.solution.x;
        let scalars = x[..problem.num_scalars].to_vec();
        let blocks: Vec<DMatrix<f64>> = problem
            .block_dims
            .iter()
            .enumerate()
            .map(|(blk, &d)| {
                let mut mat = DMatrix::zeros(d, d);
                for col in 0..d {
                    for row in 0..=col {
                        let v = x[layout.entry(blk, row, col)];
                        mat[(row, col)] = v;
                        mat[(col, row)] = v;
                    }
                }
                mat
            })
            .collect();
        let status = map_status(solver.solution.status);
        let objective_value = problem.objective.evaluate(&scalars, &blocks);
        let info = &solver.info;
        Ok(ConicSolution {
            status,
            objective_value,
            scalars,
            blocks,
            stats: SolverStats {
                iterations: info.iterations,
                primal_residual: info.res_primal,
                dual_residual: info.res_dual,
                gap: info.gap_abs,
                solve_time: info.solve_time,
            },
        })
    }
}
