//! Iterative robust designs built on repeated `P_lr` solves.
//!
//! * [`minimize_power`]: power minimization under a common AMMSE target, with
//!   the `α_k` correction re-estimated from each solution.
//! * [`minimize_maxammse_fixed_alpha`]: bisection over the AMMSE target until
//!   the required power fits the budget, for frozen `α_k`.
//! * [`minimize_maxammse`]: the bisection wrapped in the same `α_k` recursion.
//! * [`minimize_maxammse_ignorant`]: the bisection with the transmitter-side
//!   (ignorant) AMMSE model, as a baseline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ammse::{
    ammse_breakdown, breakdown_from_gram, ignorant_ammse, ignorant_receiver_gain, mc_ammse_all, mc_mse_fixed_receivers,
    GramSet, McEstimate, Precoder,
};
use crate::channel::ChannelInstance;
use crate::conic::{solve_plr, ConicBackend, ConstraintModel, ExtractionReport, PlrOutcome, PlrSpec, SolverSettings};
use crate::error::{Error, Result};

/// Which Gram matrices feed the `α_k` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    /// The relaxed `Q_k` exactly as returned by the solver.
    #[default]
    RelaxedGram,
    /// `p_k p_kᴴ` of the extracted principal-eigenvector precoder.
    RankOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub count: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { count: 4000, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoConfig {
    /// Stop when consecutive powers differ by less than this.
    pub eps_power: f64,
    /// Stop when consecutive max-AMMSE values differ by less than this.
    pub eps_t: f64,
    /// Width of the final bisection bracket.
    pub eps_bisect: f64,
    pub n_max: usize,
    /// `[α_lo, α_hi]` applied to every updated `α_k`.
    pub alpha_clamp: (f64, f64),
    pub alpha_source: AlphaSource,
    pub solver: SolverSettings,
    /// Monte-Carlo verification of the final precoder; skipped when `None`.
    pub verify: Option<McConfig>,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            eps_power: 1e-4,
            eps_t: 1e-4,
            eps_bisect: 1e-4,
            n_max: 50,
            alpha_clamp: (0.05, 1.0),
            alpha_source: AlphaSource::RelaxedGram,
            solver: SolverSettings::default(),
            verify: Some(McConfig::default()),
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_power", self.eps_power),
            ("eps_t", self.eps_t),
            ("eps_bisect", self.eps_bisect),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        let (lo, hi) = self.alpha_clamp;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            return Err(Error::Config(format!(
                "alpha_clamp must satisfy 0 < lo <= 1 <= hi, got [{lo}, {hi}]"
            )));
        }
        if let Some(mc) = &self.verify {
            if mc.count < 2 {
                return Err(Error::Config("verification needs at least 2 samples".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    PowerMin,
    AmmseMin,
    AmmseMinIgnorant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The delta criterion was met.
    Converged,
    /// `n_max` iterations without meeting the delta criterion.
    IterationLimit,
    /// A later iteration became infeasible after an `α_k` update; the last
    /// feasible iterate is reported.
    InfeasibleAfterUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub n: usize,
    /// Power (`P₀⁽ⁿ⁾`) or max-AMMSE bound (`t₀⁽ⁿ⁾`) of this iteration.
    pub objective: f64,
    /// `ᾱ_k⁽ⁿ⁻¹⁾` fed to this iteration's solve.
    pub alphas: Vec<f64>,
    /// `ᾱ_k⁽ⁿ⁾` after clamping.
    pub updated_alphas: Vec<f64>,
    /// Unclamped update; `None` for users with `R̄_k = 0`.
    pub raw_alphas: Vec<Option<f64>>,
    pub alpha_clamped: bool,
    pub eigen_ratios: Vec<f64>,
    pub feasible_after_extraction: bool,
    /// Conic solves issued by this iteration.
    pub solves: usize,
    pub wall_time: f64,
}

impl IterationRecord {
    pub fn max_alpha_change(&self) -> f64 {
        self.alphas
            .iter()
            .zip(&self.updated_alphas)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn worst_eigen_ratio(&self) -> f64 {
        self.eigen_ratios.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserVerification {
    /// The AMMSE model the design optimized: `ε̄_k^(2)` for aware designs,
    /// `ε̂_k` for the ignorant baseline.
    pub taylor_ammse: f64,
    pub ignorant_ammse: f64,
    /// Monte-Carlo AMMSE with MMSE receivers (perfect CSIR).
    pub mc_ammse: f64,
    pub mc_std_error: f64,
    /// Monte-Carlo MSE with the receivers the transmitter would forward,
    /// reported for the ignorant baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_forwarded: Option<McEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub problem: Problem,
    /// `ε̄₀` for power minimization, the budget `P₀` otherwise.
    pub target: f64,
    pub iterations: Vec<IterationRecord>,
    pub final_precoder: Precoder,
    pub final_objective: f64,
    /// `ᾱ_k` used by the solve that produced the final precoder.
    pub final_alphas: Vec<f64>,
    pub converged: bool,
    pub termination: Termination,
    pub verification: Vec<UserVerification>,
}

impl SolveReport {
    pub fn worst_user_mc(&self) -> Option<(usize, &UserVerification)> {
        self.verification
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.mc_ammse.total_cmp(&b.1.mc_ammse))
    }

    pub fn worst_eigen_ratio(&self) -> f64 {
        self.iterations
            .iter()
            .map(IterationRecord::worst_eigen_ratio)
            .fold(0.0, f64::max)
    }

    /// Total conic solves across all iterations.
    pub fn total_solves(&self) -> usize {
        self.iterations.iter().map(|r| r.solves).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per iteration: `n, objective, max|Δα|, worst eigen ratio`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["n", "objective", "max_alpha_change", "worst_eigen_ratio"])?;
        for it in &self.iterations {
            w.write_record([
                it.n.to_string(),
                it.objective.to_string(),
                it.max_alpha_change().to_string(),
                it.worst_eigen_ratio().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for it in &mut out.iterations {
            it.wall_time = 0.0;
        }
        out
    }
}

struct AlphaUpdate {
    raw: Vec<Option<f64>>,
    clamped: Vec<f64>,
    any_clamped: bool,
}

fn update_alphas(
    instance: &ChannelInstance,
    extraction: &ExtractionReport,
    previous: &[f64],
    config: &AlgoConfig,
) -> Result<AlphaUpdate> {
    let rank_one;
    let gram: &GramSet = match config.alpha_source {
        AlphaSource::RelaxedGram => &extraction.gram,
        AlphaSource::RankOne => {
            rank_one = extraction.precoder.gram();
            &rank_one
        }
    };
    let (lo, hi) = config.alpha_clamp;
    let mut raw = Vec::with_capacity(instance.num_users());
    let mut clamped = Vec::with_capacity(instance.num_users());
    let mut any_clamped = false;
    for (k, &prev) in previous.iter().enumerate().take(instance.num_users()) {
        let alpha = breakdown_from_gram(instance, gram, k)?.alpha;
        raw.push(alpha);
        let value = match alpha {
            Some(a) if a.is_finite() => {
                let c = a.clamp(lo, hi);
                if c != a {
                    any_clamped = true;
                    log::info!("user {k}: alpha {a:.6} clamped to {c}");
                }
                c
            }
            // R̄_k = 0: no information, keep the previous value.
            _ => {
                log::warn!("user {k}: alpha undefined (zero mean signal), keeping {}", prev);
                prev
            }
        };
        clamped.push(value);
    }
    Ok(AlphaUpdate {
        raw,
        clamped,
        any_clamped,
    })
}

fn verify(
    instance: &ChannelInstance,
    precoder: &Precoder,
    model: ConstraintModel,
    mc: Option<McConfig>,
) -> Result<Vec<UserVerification>> {
    let Some(mc) = mc else {
        return Ok(Vec::new());
    };
    let k_users = instance.num_users();
    let estimates = mc_ammse_all(instance, precoder, mc.count, mc.seed)?;
    let forwarded = match model {
        ConstraintModel::Aware => None,
        ConstraintModel::Ignorant => {
            let g = (0..k_users)
                .map(|k| ignorant_receiver_gain(instance, precoder, k))
                .collect::<Result<Vec<_>>>()?;
            Some(mc_mse_fixed_receivers(instance, precoder, &g, mc.count, mc.seed)?)
        }
    };
    (0..k_users)
        .map(|k| {
            let ignorant = ignorant_ammse(instance, precoder, k)?;
            let taylor = match model {
                ConstraintModel::Aware => ammse_breakdown(instance, precoder, k)?.value_order2,
                ConstraintModel::Ignorant => ignorant,
            };
            Ok(UserVerification {
                taylor_ammse: taylor,
                ignorant_ammse: ignorant,
                mc_ammse: estimates[k].mean,
                mc_std_error: estimates[k].std_error,
                mc_forwarded: forwarded.as_ref().map(|f| f[k]),
            })
        })
        .collect()
}

/// Minimum-power precoder meeting `ε̄_k^(2) ≤ ε̄₀` for every user.
pub fn minimize_power(
    instance: &ChannelInstance,
    epsilon_target: f64,
    config: &AlgoConfig,
    backend: &dyn ConicBackend,
) -> Result<SolveReport> {
    config.validate()?;
    let k_users = instance.num_users();
    let mut alphas = vec![1.0; k_users];
    let mut previous = 0.0;
    let mut iterations = Vec::new();
    let mut last: Option<(f64, ExtractionReport, Vec<f64>)> = None;
    let mut termination = Termination::IterationLimit;

    for n in 1..=config.n_max {
        let started = Instant::now();
        let spec = PlrSpec::new(instance.clone(), epsilon_target, alphas.clone())?;
        let (power, extraction) = match solve_plr(&spec, backend, &config.solver)? {
            PlrOutcome::Optimal { power, extraction } => (power, extraction),
            PlrOutcome::Infeasible if n == 1 => {
                return Err(Error::Infeasible(format!(
                    "AMMSE target {epsilon_target} is below the feasibility floor"
                )))
            }
            PlrOutcome::Infeasible => {
                log::warn!(
                    "iteration {n} infeasible after alpha update; keeping iteration {}",
                    n - 1
                );
                termination = Termination::InfeasibleAfterUpdate;
                break;
            }
        };
        let update = update_alphas(instance, &extraction, &alphas, config)?;
        iterations.push(IterationRecord {
            n,
            objective: power,
            alphas: alphas.clone(),
            updated_alphas: update.clamped.clone(),
            raw_alphas: update.raw,
            alpha_clamped: update.any_clamped,
            eigen_ratios: extraction.eigen_ratios.clone(),
            feasible_after_extraction: extraction.feasible_after_extraction,
            solves: 1,
            wall_time: started.elapsed().as_secs_f64(),
        });
        log::debug!("power-min iteration {n}: P0 = {power:.8}");
        last = Some((power, extraction, alphas.clone()));
        let done = (power - previous).abs() < config.eps_power;
        previous = power;
        alphas = update.clamped;
        if done {
            termination = Termination::Converged;
            break;
        }
    }

    let (power, extraction, used_alphas) = last.expect("first iteration either succeeds or returns");
    let verification = verify(instance, &extraction.precoder, ConstraintModel::Aware, config.verify)?;
    Ok(SolveReport {
        problem: Problem::PowerMin,
        target: epsilon_target,
        iterations,
        final_precoder: extraction.precoder,
        final_objective: power,
        final_alphas: used_alphas,
        converged: termination == Termination::Converged,
        termination,
        verification,
    })
}

/// Outcome of the bisection for fixed `α_k`.
#[derive(Debug, Clone)]
pub struct BisectionResult {
    /// `ε̄_max` at exit.
    pub t0: f64,
    /// Power required at `t0`.
    pub power: f64,
    pub extraction: ExtractionReport,
    pub solves: usize,
}

impl BisectionResult {
    pub fn gram(&self) -> &GramSet {
        &self.extraction.gram
    }
}

fn bisect(
    instance: &ChannelInstance,
    budget: f64,
    alphas: &[f64],
    model: ConstraintModel,
    config: &AlgoConfig,
    backend: &dyn ConicBackend,
) -> Result<BisectionResult> {
    config.validate()?;
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "power budget must be positive, got {budget}"
        )));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut best: Option<(f64, ExtractionReport)> = None;
    let mut solves = 0;
    while hi - lo > config.eps_bisect {
        let mid = 0.5 * (lo + hi);
        let spec = PlrSpec::with_model(instance.clone(), mid, alphas.to_vec(), model)?;
        solves += 1;
        match solve_plr(&spec, backend, &config.solver)? {
            PlrOutcome::Optimal { power, extraction } if power <= budget => {
                hi = mid;
                best = Some((power, extraction));
            }
            _ => lo = mid,
        }
    }
    let (power, extraction) =
        best.ok_or_else(|| Error::Infeasible(format!("no AMMSE target below {hi} is reachable with budget {budget}")))?;
    Ok(BisectionResult {
        t0: hi,
        power,
        extraction,
        solves,
    })
}

/// Smallest common AMMSE bound reachable within `budget` for frozen `α_k`.
pub fn minimize_maxammse_fixed_alpha(
    instance: &ChannelInstance,
    budget: f64,
    alphas: &[f64],
    config: &AlgoConfig,
    backend: &dyn ConicBackend,
) -> Result<BisectionResult> {
    bisect(instance, budget, alphas, ConstraintModel::Aware, config, backend)
}

/// Min-max AMMSE design under a total power budget.
pub fn minimize_maxammse(
    instance: &ChannelInstance,
    budget: f64,
    config: &AlgoConfig,
    backend: &dyn ConicBackend,
) -> Result<SolveReport> {
    config.validate()?;
    let k_users = instance.num_users();
    let mut alphas = vec![1.0; k_users];
    let mut previous = 0.0;
    let mut iterations = Vec::new();
    let mut last: Option<(BisectionResult, Vec<f64>)> = None;
    let mut termination = Termination::IterationLimit;

    for n in 1..=config.n_max {
        let started = Instant::now();
        let result = match bisect(instance, budget, &alphas, ConstraintModel::Aware, config, backend) {
            Ok(r) => r,
            Err(Error::Infeasible(msg)) if n > 1 => {
                log::warn!(
                    "iteration {n} infeasible after alpha update ({msg}); keeping iteration {}",
                    n - 1
                );
                termination = Termination::InfeasibleAfterUpdate;
                break;
            }
            Err(e) => return Err(e),
        };
        let update = update_alphas(instance, &result.extraction, &alphas, config)?;
        let t0 = result.t0;
        iterations.push(IterationRecord {
            n,
            objective: t0,
            alphas: alphas.clone(),
            updated_alphas: update.clamped.clone(),
            raw_alphas: update.raw,
            alpha_clamped: update.any_clamped,
            eigen_ratios: result.extraction.eigen_ratios.clone(),
            feasible_after_extraction: result.extraction.feasible_after_extraction,
            solves: result.solves,
            wall_time: started.elapsed().as_secs_f64(),
        });
        log::debug!("max-AMMSE iteration {n}: t0 = {t0:.6}");
        // Identical α would reproduce this bisection exactly.
        let fixed_point = update.clamped == alphas;
        let done = (t0 - previous).abs() < config.eps_t || fixed_point;
        last = Some((result, alphas.clone()));
        previous = t0;
        alphas = update.clamped;
        if done {
            termination = Termination::Converged;
            break;
        }
    }

    let (result, used_alphas) = last.expect("first iteration either succeeds or returns");
    let verification = verify(
        instance,
        &result.extraction.precoder,
        ConstraintModel::Aware,
        config.verify,
    )?;
    Ok(SolveReport {
        problem: Problem::AmmseMin,
        target: budget,
        iterations,
        final_precoder: result.extraction.precoder,
        final_objective: result.t0,
        final_alphas: used_alphas,
        converged: termination == Termination::Converged,
        termination,
        verification,
    })
}

/// Min-max design of the ignorant baseline: the same bisection with
/// `ε̂_k ≤ ε̄₀` constraints and no `α_k` recursion.
pub fn minimize_maxammse_ignorant(
    instance: &ChannelInstance,
    budget: f64,
    config: &AlgoConfig,
    backend: &dyn ConicBackend,
) -> Result<SolveReport> {
    let started = Instant::now();
    let alphas = vec![1.0; instance.num_users()];
    let result = bisect(instance, budget, &alphas, ConstraintModel::Ignorant, config, backend)?;
    let verification = verify(
        instance,
        &result.extraction.precoder,
        ConstraintModel::Ignorant,
        config.verify,
    )?;
    let record = IterationRecord {
        n: 1,
        objective: result.t0,
        alphas: alphas.clone(),
        updated_alphas: alphas.clone(),
        raw_alphas: vec![Some(1.0); alphas.len()],
        alpha_clamped: false,
        eigen_ratios: result.extraction.eigen_ratios.clone(),
        feasible_after_extraction: result.extraction.feasible_after_extraction,
        solves: result.solves,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok(SolveReport {
        problem: Problem::AmmseMinIgnorant,
        target: budget,
        iterations: vec![record],
        final_precoder: result.extraction.precoder,
        final_objective: result.t0,
        final_alphas: alphas,
        converged: true,
        termination: Termination::Converged,
        verification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ClarabelBackend;
    use crate::linalg::{c, CVector};

    fn single_user(n: usize, noise: f64) -> ChannelInstance {
        ChannelInstance::new(vec![CVector::from_element(n, c(1.0, 0.0))], vec![0.0], noise).unwrap()
    }

    fn quick() -> AlgoConfig {
        AlgoConfig {
            verify: None,
            ..AlgoConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = AlgoConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.alpha_clamp = (0.0, 1.0);
        assert!(cfg.validate().is_err());
        cfg.alpha_clamp = (0.5, 0.9);
        assert!(cfg.validate().is_err());
        let cfg = AlgoConfig {
            n_max: 0,
            ..AlgoConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = AlgoConfig {
            eps_bisect: 0.0,
            ..AlgoConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn perfect_csi_power_min_stops_after_second_iteration() {
        let inst = single_user(3, 1.0);
        let rep = minimize_power(&inst, 0.3, &quick(), &ClarabelBackend).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations.len(), 2);
        assert!(rep.iterations.iter().all(|r| r.updated_alphas == vec![1.0]));
        let want = 1.0 * 0.7 / (0.3 * 3.0);
        assert!((rep.final_objective - want).abs() < 1e-6 * want);
    }

    #[test]
    fn one_midpoint_when_tolerance_is_half() {
        let inst = single_user(2, 1.0);
        let cfg = AlgoConfig {
            eps_bisect: 0.5,
            ..quick()
        };
        let r = minimize_maxammse_fixed_alpha(&inst, 10.0, &[1.0], &cfg, &ClarabelBackend).unwrap();
        assert_eq!(r.solves, 1);
        assert_eq!(r.t0, 0.5);
    }

    #[test]
    fn single_user_bisection_matches_closed_form() {
        let n = 4;
        let inst = single_user(n, 1.0);
        for budget in [0.5, 2.0, 10.0] {
            let r = minimize_maxammse_fixed_alpha(&inst, budget, &[1.0], &quick(), &ClarabelBackend).unwrap();
            let want = 1.0 / (n as f64 * budget + 1.0);
            assert!((r.t0 - want).abs() <= 1e-4, "{} vs {want}", r.t0);
            assert!(r.power <= budget);
            assert!(r.solves <= 14);
        }
    }

    #[test]
    fn unreachable_budget_is_reported() {
        // Two users on the same channel cannot both drive their AMMSE below
        // 1/2 (the SINR of each is at most one), and a tiny budget fails
        // every midpoint.
        let h = CVector::from_element(2, c(1.0, 0.0));
        let inst = ChannelInstance::new(vec![h.clone(), h], vec![0.0, 0.0], 1.0).unwrap();
        let cfg = AlgoConfig {
            eps_bisect: 1e-2,
            ..quick()
        };
        let r = minimize_maxammse_fixed_alpha(&inst, 1e-9, &[1.0, 1.0], &cfg, &ClarabelBackend);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn perfect_csi_max_ammse_needs_one_outer_iteration() {
        let inst = ChannelInstance::new(
            vec![
                CVector::from_vec(vec![c(1.0, 0.0), c(0.2, 0.1)]),
                CVector::from_vec(vec![c(0.1, 0.0), c(1.0, -0.3)]),
            ],
            vec![0.0, 0.0],
            1.0,
        )
        .unwrap();
        let cfg = AlgoConfig {
            eps_bisect: 1e-3,
            ..quick()
        };
        let aware = minimize_maxammse(&inst, 3.0, &cfg, &ClarabelBackend).unwrap();
        assert_eq!(aware.iterations.len(), 1);
        assert!(aware.converged);
        let ignorant = minimize_maxammse_ignorant(&inst, 3.0, &cfg, &ClarabelBackend).unwrap();
        assert_eq!(aware.final_objective, ignorant.final_objective);
    }

    #[test]
    fn csv_has_one_row_per_iteration() {
        let inst = single_user(2, 1.0);
        let rep = minimize_power(&inst, 0.5, &quick(), &ClarabelBackend).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), rep.iterations.len() + 1);
        assert!(text.starts_with("n,objective,max_alpha_change,worst_eigen_ratio"));
    }
}
