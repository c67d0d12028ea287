//! The linearized, rank-relaxed power-minimization SDP and precoder
//! extraction from its solution.
//!
//! With `α_k` frozen and the rank-one constraints dropped, power minimization
//! under per-user AMMSE targets `ε̄₀` becomes
//!
//! ```text
//! min P₀  s.t.  Σ_i tr(Q_i) ≤ P₀
//!               Σ_i tr(Q_i M_k) + σ²_n ≤ α_k/(1 − ε̄₀) · tr(Q_k L_k)   ∀k
//!               Q_k ⪰ 0
//! ```
//!
//! where `M_k = ĥ_kĥ_kᴴ + σ²_ek I`. The CSIR-aware model uses `L_k = M_k`;
//! the ignorant model uses `L_k = ĥ_kĥ_kᴴ` with `α_k = 1`.
//!
//! Each complex `Q_k` is carried as a real `2N_t × 2N_t` block through
//! [`embed_hermitian`]. Since `tr(emb(A) emb(Q)) = 2 tr(A Q)`, every complex
//! coefficient `A` enters as `emb(A)/2`; the real objective therefore equals
//! the complex power `Σ tr(Q_k)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    ConicBackend, ConicProblem, ConicSolution, LinearConstraint, LinearForm, Sense, SolveStatus, SolverSettings,
};
use crate::ammse::{channel_second_moment, GramSet, Precoder};
use crate::channel::ChannelInstance;
use crate::error::{Error, Result};
use crate::linalg::{embed_hermitian, hermitian_eigen, outer, quad_form, unembed_hermitian, CMatrix};

/// Which per-user AMMSE model constrains the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintModel {
    /// `1 − α_k R̄_k / T̄_k ≤ ε̄₀`, accounting for perfect CSIR.
    #[default]
    Aware,
    /// `ε̂_k ≤ ε̄₀`, the transmitter-side (ignorant) AMMSE.
    Ignorant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlrSpec {
    pub instance: ChannelInstance,
    pub epsilon_target: f64,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub model: ConstraintModel,
}

impl PlrSpec {
    pub fn new(instance: ChannelInstance, epsilon_target: f64, alphas: Vec<f64>) -> Result<Self> {
        Self::with_model(instance, epsilon_target, alphas, ConstraintModel::Aware)
    }

    pub fn ignorant(instance: ChannelInstance, epsilon_target: f64) -> Result<Self> {
        let k = instance.num_users();
        Self::with_model(instance, epsilon_target, vec![1.0; k], ConstraintModel::Ignorant)
    }

    pub fn with_model(
        instance: ChannelInstance,
        epsilon_target: f64,
        alphas: Vec<f64>,
        model: ConstraintModel,
    ) -> Result<Self> {
        let spec = Self {
            instance,
            epsilon_target,
            alphas,
            model,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.instance.validate()?;
        if !(self.epsilon_target > 0.0 && self.epsilon_target < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "AMMSE target must lie in (0, 1), got {}",
                self.epsilon_target
            )));
        }
        if self.alphas.len() != self.instance.num_users() {
            return Err(Error::Dimension {
                expected: self.instance.num_users(),
                actual: self.alphas.len(),
            });
        }
        if self.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument("alphas must be positive".into()));
        }
        Ok(())
    }

    /// `α_k / (1 − ε̄₀)`.
    fn gain(&self, k: usize) -> f64 {
        self.alphas[k] / (1.0 - self.epsilon_target)
    }

    /// `L_k`, the matrix on the useful-signal side of user `k`'s constraint.
    fn signal_matrix(&self, k: usize) -> CMatrix {
        match self.model {
            ConstraintModel::Aware => channel_second_moment(&self.instance, k),
            ConstraintModel::Ignorant => outer(&self.instance.estimates[k]),
        }
    }
}

fn half_embedding(a: &CMatrix) -> DMatrix<f64> {
    embed_hermitian(a) * 0.5
}

/// Standard-form program: scalar 0 is `P₀`, block `k` is `emb(Q_k)`.
pub fn build_plr(spec: &PlrSpec) -> Result<ConicProblem> {
    spec.validate()?;
    let inst = &spec.instance;
    let k_users = inst.num_users();
    let n = inst.num_antennas();
    let half_identity = DMatrix::<f64>::identity(2 * n, 2 * n) * 0.5;

    let mut power = LinearForm::default().scalar(0, -1.0);
    for k in 0..k_users {
        power = power.block(k, half_identity.clone());
    }
    let mut constraints = vec![LinearConstraint {
        form: power,
        sense: Sense::Le,
        rhs: 0.0,
    }];

    for k in 0..k_users {
        let interference = half_embedding(&channel_second_moment(inst, k));
        let signal = half_embedding(&spec.signal_matrix(k));
        let mut form = LinearForm::default();
        for i in 0..k_users {
            if i == k {
                form = form.block(i, &interference - &signal * spec.gain(k));
            } else {
                form = form.block(i, interference.clone());
            }
        }
        constraints.push(LinearConstraint {
            form,
            sense: Sense::Le,
            rhs: -inst.noise_var,
        });
    }

    Ok(ConicProblem {
        num_scalars: 1,
        block_dims: vec![2 * n; k_users],
        objective: LinearForm::default().scalar(0, 1.0),
        constraints,
    })
}

/// Precoder recovered from a relaxed solution, with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub precoder: Precoder,
    /// The relaxed Gram matrices as returned by the solver.
    pub gram: GramSet,
    /// `λ₂/λ₁` of each complex `Q_k`; zero for a vanishing `Q_k`.
    pub eigen_ratios: Vec<f64>,
    /// Per-user AMMSE model value of the extracted precoder (the quantity the
    /// program constrains to `ε̄₀`).
    pub ammse_recheck: Vec<f64>,
    pub feasible_after_extraction: bool,
}

impl ExtractionReport {
    pub fn worst_eigen_ratio(&self) -> f64 {
        self.eigen_ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// Principal-eigenvector extraction `p_k = √λ₁ u₁` from each relaxed `Q_k`.
pub fn extract_precoder(
    solution: &ConicSolution,
    spec: &PlrSpec,
    settings: &SolverSettings,
) -> Result<ExtractionReport> {
    if solution.status != SolveStatus::Optimal {
        return Err(Error::InvalidArgument(format!(
            "cannot extract a precoder from a {:?} solution",
            solution.status
        )));
    }
    let inst = &spec.instance;
    if solution.blocks.len() != inst.num_users() {
        return Err(Error::Dimension {
            expected: inst.num_users(),
            actual: solution.blocks.len(),
        });
    }
    let matrices = solution
        .blocks
        .iter()
        .map(unembed_hermitian)
        .collect::<Result<Vec<_>>>()?;
    let gram = GramSet::from_matrices(matrices, settings.tol_psd)?;

    let mut vectors = Vec::with_capacity(inst.num_users());
    let mut eigen_ratios = Vec::with_capacity(inst.num_users());
    for q in &gram.per_user {
        let (values, vecs) = hermitian_eigen(q);
        let lead = values[0];
        let scale = q.norm().max(1.0);
        if lead < -settings.tol_psd * scale {
            return Err(Error::Numerical(format!("negative leading eigenvalue {lead:.3e}")));
        }
        let lead = lead.max(0.0);
        let second = values.get(1).copied().unwrap_or(0.0).max(0.0);
        eigen_ratios.push(if lead > 0.0 { (second / lead).min(1.0) } else { 0.0 });
        vectors.push(vecs.column(0).scale(lead.sqrt()));
    }
    let precoder = Precoder::new(vectors)?;

    let tol = 10.0 * settings.tol_gap;
    let mut feasible = true;
    let mut ammse_recheck = Vec::with_capacity(inst.num_users());
    for k in 0..inst.num_users() {
        let m = channel_second_moment(inst, k);
        let t_bar: f64 = precoder.vectors.iter().map(|p| quad_form(p, &m)).sum::<f64>() + inst.noise_var;
        let useful = quad_form(&precoder.vectors[k], &spec.signal_matrix(k));
        ammse_recheck.push(1.0 - spec.alphas[k] * useful / t_bar);
        let lhs = t_bar;
        let rhs = spec.gain(k) * useful;
        if lhs > rhs + tol * lhs.abs().max(1.0) {
            feasible = false;
        }
    }

    Ok(ExtractionReport {
        precoder,
        gram,
        eigen_ratios,
        ammse_recheck,
        feasible_after_extraction: feasible,
    })
}

/// Result of one `P_lr` solve.
#[derive(Debug, Clone)]
pub enum PlrOutcome {
    Optimal { power: f64, extraction: ExtractionReport },
    Infeasible,
}

/// Builds, solves and extracts in one step. Numerical trouble in the backend
/// is an error, never an infeasibility verdict.
pub fn solve_plr(spec: &PlrSpec, backend: &dyn ConicBackend, settings: &SolverSettings) -> Result<PlrOutcome> {
    let problem = build_plr(spec)?;
    let solution = backend.solve(&problem, settings)?;
    match solution.status {
        SolveStatus::Optimal => {
            let extraction = extract_precoder(&solution, spec, settings)?;
            Ok(PlrOutcome::Optimal {
                power: solution.objective_value,
                extraction,
            })
        }
        SolveStatus::Infeasible => Ok(PlrOutcome::Infeasible),
        SolveStatus::NumericalFailure | SolveStatus::IterationLimit => Err(Error::Numerical(format!(
            "{} returned {:?} at target {} (iterations {}, primal residual {:.2e})",
            backend.name(),
            solution.status,
            spec.epsilon_target,
            solution.stats.iterations,
            solution.stats.primal_residual
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ClarabelBackend;
    use crate::linalg::{c, trace_product, CVector};

    fn scalar_instance() -> ChannelInstance {
        ChannelInstance::new(vec![CVector::from_vec(vec![c(1.0, 0.0)])], vec![0.0], 1.0).unwrap()
    }

    #[test]
    fn scalar_program_has_unit_power() {
        // Q + 1 ≤ 2Q ⇒ Q ≥ 1.
        let spec = PlrSpec::new(scalar_instance(), 0.5, vec![1.0]).unwrap();
        let settings = SolverSettings::default();
        let problem = build_plr(&spec).unwrap();
        let sol = ClarabelBackend.solve(&problem, &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective_value - 1.0).abs() < 1e-6);
        let rep = extract_precoder(&sol, &spec, &settings).unwrap();
        assert!((rep.precoder.total_power() - 1.0).abs() < 1e-6);
        assert!(rep.feasible_after_extraction);
    }

    #[test]
    fn single_user_power_matches_mmse_inversion() {
        let h = CVector::from_vec(vec![c(0.8, 0.1), c(-0.3, 0.5), c(0.2, -0.9)]);
        let norm2: f64 = h.iter().map(|z| z.norm_sqr()).sum();
        let inst = ChannelInstance::new(vec![h], vec![0.0], 0.7).unwrap();
        for eps in [0.1, 0.3, 0.6, 0.95] {
            let spec = PlrSpec::new(inst.clone(), eps, vec![1.0]).unwrap();
            let out = solve_plr(&spec, &ClarabelBackend, &SolverSettings::default()).unwrap();
            let PlrOutcome::Optimal { power, .. } = out else {
                panic!("infeasible")
            };
            let want = 0.7 * (1.0 - eps) / (eps * norm2);
            assert!((power - want).abs() < 1e-6 * want.max(1e-3), "{power} vs {want}");
        }
    }

    #[test]
    fn recovered_objective_equals_complex_power() {
        let inst = ChannelInstance::new(
            vec![
                CVector::from_vec(vec![c(1.0, 0.0), c(0.3, 0.4)]),
                CVector::from_vec(vec![c(0.2, -0.1), c(1.0, 0.2)]),
            ],
            vec![0.05, 0.1],
            1.0,
        )
        .unwrap();
        let spec = PlrSpec::new(inst, 0.4, vec![1.0, 0.9]).unwrap();
        let settings = SolverSettings::default();
        let sol = ClarabelBackend.solve(&build_plr(&spec).unwrap(), &settings).unwrap();
        let rep = extract_precoder(&sol, &spec, &settings).unwrap();
        assert!((sol.objective_value - rep.gram.total_power()).abs() < 1e-6 * sol.objective_value);
        // constraints re-evaluated in the complex domain
        for k in 0..2 {
            let m = channel_second_moment(&spec.instance, k);
            let lhs = trace_product(&rep.gram.sum, &m).re + 1.0;
            let rhs = spec.gain(k) * trace_product(&rep.gram.per_user[k], &m).re;
            assert!(lhs <= rhs + 10.0 * settings.tol_gap * lhs);
        }
    }

    #[test]
    fn rank_one_gram_recovers_precoder_up_to_phase() {
        let inst = scalar_instance();
        let spec = PlrSpec::new(inst, 0.5, vec![1.0]).unwrap();
        let p = CVector::from_vec(vec![c(0.6, -0.8)]);
        let sol = ConicSolution {
            status: SolveStatus::Optimal,
            objective_value: 1.0,
            scalars: vec![1.0],
            blocks: vec![embed_hermitian(&outer(&p))],
            stats: Default::default(),
        };
        let rep = extract_precoder(&sol, &spec, &SolverSettings::default()).unwrap();
        let q = &rep.precoder.vectors[0];
        assert!((q[0].norm() - 1.0).abs() < 1e-12);
        assert_eq!(rep.eigen_ratios, vec![0.0]);
    }

    #[test]
    fn rank_two_gram_is_flagged() {
        // Two users, each Q_k = I/2: interference-heavy and rank 2.
        let inst = ChannelInstance::new(
            vec![
                CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]),
                CVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0)]),
            ],
            vec![0.0, 0.0],
            1.0,
        )
        .unwrap();
        let spec = PlrSpec::new(inst, 0.2, vec![1.0, 1.0]).unwrap();
        let half = CMatrix::identity(2, 2).scale(0.5);
        let sol = ConicSolution {
            status: SolveStatus::Optimal,
            objective_value: 2.0,
            scalars: vec![2.0],
            blocks: vec![embed_hermitian(&half), embed_hermitian(&half)],
            stats: Default::default(),
        };
        let rep = extract_precoder(&sol, &spec, &SolverSettings::default()).unwrap();
        assert!((rep.worst_eigen_ratio() - 1.0).abs() < 1e-12);
        assert!(!rep.feasible_after_extraction);
    }

    #[test]
    fn extraction_rejects_negative_blocks() {
        let spec = PlrSpec::new(scalar_instance(), 0.5, vec![1.0]).unwrap();
        let sol = ConicSolution {
            status: SolveStatus::Optimal,
            objective_value: -1.0,
            scalars: vec![-1.0],
            blocks: vec![DMatrix::identity(2, 2) * -1.0],
            stats: Default::default(),
        };
        assert!(matches!(
            extract_precoder(&sol, &spec, &SolverSettings::default()),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn spec_rejects_out_of_range_inputs() {
        assert!(PlrSpec::new(scalar_instance(), 0.0, vec![1.0]).is_err());
        assert!(PlrSpec::new(scalar_instance(), 1.0, vec![1.0]).is_err());
        assert!(PlrSpec::new(scalar_instance(), 0.5, vec![0.0]).is_err());
        assert!(PlrSpec::new(scalar_instance(), 0.5, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn loose_target_needs_little_power() {
        let spec = PlrSpec::new(scalar_instance(), 0.999, vec![1.0]).unwrap();
        let PlrOutcome::Optimal { power, .. } = solve_plr(&spec, &ClarabelBackend, &SolverSettings::default()).unwrap()
        else {
            panic!()
        };
        assert!(power < 2e-3);
    }

    #[test]
    fn target_below_error_floor_is_infeasible() {
        // Identical channels: summing both constraints gives
        // 2(x₁ + x₂) + 2 ≤ 1.25(x₁ + x₂), impossible for x ≥ 0.
        let h = CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let inst = ChannelInstance::new(vec![h.clone(), h], vec![0.0, 0.0], 1.0).unwrap();
        let spec = PlrSpec::new(inst, 0.2, vec![1.0, 1.0]).unwrap();
        let out = solve_plr(&spec, &ClarabelBackend, &SolverSettings::default()).unwrap();
        assert!(matches!(out, PlrOutcome::Infeasible));
    }
}
