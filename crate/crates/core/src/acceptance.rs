//! The acceptance suite: every end-to-end criterion the library is held to,
//! with its tolerances pinned below. Shared by the `acceptance` test target
//! and the command-line `accept` subcommand.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ammse::{ignorant_ammse, mc_ammse_all, mc_quartic_moment, quartic_moment, MomentInputs, Precoder};
use crate::channel::{build_instance, ChannelInstance};
use crate::conic::ConicBackend;
use crate::design::{
    minimize_maxammse, minimize_maxammse_fixed_alpha, minimize_maxammse_ignorant, minimize_power, AlgoConfig, McConfig,
    SolveReport,
};
use crate::error::Result;
use crate::experiment::{
    least_fortunate_user, reference_scenario, ExperimentSpec, PointStatus, RunSummary, SummaryRow,
};
use crate::linalg::{c, norm_sqr, CMatrix, CVector};

/// Statistical slack in Monte-Carlo standard errors.
pub const Z_SLACK: f64 = 3.0;

pub const MOMENT_CASES: usize = 50;
pub const MOMENT_MIN_PASS: usize = 48;
pub const MOMENT_SAMPLES: usize = 1_000_000;
pub const MOMENT_DIMS: [usize; 3] = [2, 4, 8];
pub const MOMENT_VARIANCES: [f64; 3] = [0.05, 0.3, 1.0];

pub const SINGLE_USER_TARGETS: [f64; 4] = [0.1, 0.25, 0.5, 0.9];
pub const SINGLE_USER_RTOL: f64 = 1e-6;

pub const CONVERGENCE_TARGETS: [f64; 2] = [0.4, 0.25];
pub const CONVERGENCE_MAX_ITERATIONS: usize = 10;
pub const CONVERGENCE_EPS_POWER: f64 = 1e-4;
/// Relative accuracy of the approximation against Monte Carlo.
pub const MC_RELATIVE_TOL: f64 = 0.005;
pub const MC_COUNT: usize = 4000;

pub const RANK_ONE_TOL: f64 = 1e-5;

pub const BISECTION_TOL: f64 = 1e-4;
pub const DUALITY_SLACK: f64 = 2.0 * BISECTION_TOL;

pub const MONOTONE_TARGETS: [f64; 4] = [0.2, 0.3, 0.4, 0.5];
pub const MONOTONE_SNR_DB: [f64; 7] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0];

pub const BOUND_PRECODERS: usize = 20;
pub const SCALING_FACTORS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

pub const GAP_SNR_DB: [f64; 4] = [0.0, 10.0, 20.0, 30.0];

/// Seed of every Monte-Carlo draw in the suite.
pub const SUITE_SEED: u64 = 2024;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub name: &'static str,
    pub passed: bool,
    /// Soft criteria are reported but never fail the suite.
    pub soft: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        let verdict = match (self.passed, self.soft) {
            (true, _) => "PASS",
            (false, true) => "SOFT-FAIL",
            (false, false) => "FAIL",
        };
        format!("[{verdict}] {} ({:.1}s): {}", self.name, self.seconds, self.detail)
    }

    pub fn is_hard_failure(&self) -> bool {
        !self.passed && !self.soft
    }
}

fn timed(name: &'static str, soft: bool, f: impl FnOnce() -> Result<(bool, String)>) -> CriterionResult {
    let started = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult {
        name,
        passed,
        soft,
        detail,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn reference_instance() -> Result<ChannelInstance> {
    build_instance(&reference_scenario())
}

fn suite_algo() -> AlgoConfig {
    AlgoConfig {
        eps_power: CONVERGENCE_EPS_POWER,
        eps_bisect: BISECTION_TOL,
        verify: Some(McConfig {
            count: MC_COUNT,
            seed: SUITE_SEED,
        }),
        ..AlgoConfig::default()
    }
}

fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> CVector {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CVector::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(s * re, s * im)
    })
}

fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let g = CMatrix::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im) / (2.0 * n as f64).sqrt()
    });
    &g * g.adjoint()
}

/// Random quartic-moment case `i`: dimension and variance cycle through the
/// pinned grids.
pub fn moment_case(seed: u64, i: usize) -> MomentInputs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let n = MOMENT_DIMS[i % MOMENT_DIMS.len()];
    let var = MOMENT_VARIANCES[(i / MOMENT_DIMS.len()) % MOMENT_VARIANCES.len()];
    MomentInputs {
        mean: gaussian_vec(n, &mut rng),
        cov_scale: var,
        a: random_psd(n, &mut rng),
        b: random_psd(n, &mut rng),
    }
}

#[derive(Debug, Clone)]
pub struct MomentCase {
    pub index: usize,
    pub dim: usize,
    pub cov_scale: f64,
    pub closed_form: f64,
    pub mc_mean: f64,
    pub mc_std_error: f64,
}

impl MomentCase {
    pub fn z_score(&self) -> f64 {
        if self.mc_std_error > 0.0 {
            (self.closed_form - self.mc_mean).abs() / self.mc_std_error
        } else if self.closed_form == self.mc_mean {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn passed(&self) -> bool {
        self.z_score() < Z_SLACK
    }
}

pub fn moment_cases(cases: usize, samples: usize, seed: u64) -> Result<Vec<MomentCase>> {
    (0..cases)
        .map(|i| {
            let inputs = moment_case(seed, i);
            let mc = mc_quartic_moment(&inputs, samples, seed.wrapping_add(1 + i as u64))?;
            Ok(MomentCase {
                index: i,
                dim: inputs.mean.len(),
                cov_scale: inputs.cov_scale,
                closed_form: quartic_moment(&inputs)?,
                mc_mean: mc.mean,
                mc_std_error: mc.std_error,
            })
        })
        .collect()
}

/// Closed-form quartic moments against brute-force Monte Carlo.
pub fn check_moments(samples: usize, seed: u64) -> CriterionResult {
    timed("quartic moment vs Monte Carlo", false, || {
        let cases = moment_cases(MOMENT_CASES, samples, seed)?;
        let ok = cases.iter().filter(|c| c.passed()).count();
        let worst = cases.iter().map(MomentCase::z_score).fold(0.0, f64::max);
        Ok((
            ok >= MOMENT_MIN_PASS,
            format!("{ok}/{MOMENT_CASES} within {Z_SLACK} SE (need {MOMENT_MIN_PASS}), max z = {worst:.2}, {samples} samples each"),
        ))
    })
}

pub(crate) fn write_moment_check(spec: &ExperimentSpec, dir: &Path) -> Result<RunSummary> {
    let cases = moment_cases(MOMENT_CASES, spec.mc_count, spec.mc_seed)?;
    let path = dir.join("moment_check.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "case",
        "dim",
        "cov_scale",
        "closed_form",
        "mc_mean",
        "mc_std_error",
        "z",
        "pass",
    ])?;
    for case in &cases {
        w.write_record([
            case.index.to_string(),
            case.dim.to_string(),
            case.cov_scale.to_string(),
            case.closed_form.to_string(),
            case.mc_mean.to_string(),
            case.mc_std_error.to_string(),
            case.z_score().to_string(),
            case.passed().to_string(),
        ])?;
    }
    w.flush()?;
    let ok = cases.iter().filter(|c| c.passed()).count();
    let status = if ok >= MOMENT_MIN_PASS {
        PointStatus::Ok
    } else {
        PointStatus::CheckFailed
    };
    let row = SummaryRow {
        message: format!("{ok}/{MOMENT_CASES} cases within {Z_SLACK} standard errors"),
        ..SummaryRow::failed(MOMENT_CASES as f64, status, String::new())
    };
    let mut files = vec![path];
    files.push(crate::experiment::write_manifest(spec, "none", &files)?);
    Ok(RunSummary { rows: vec![row], files })
}

/// Single-user, perfect-CSI power minimization against the MMSE inversion
/// `σ²_n (1 − ε̄₀) / (ε̄₀ ‖ĥ‖²)`.
pub fn check_single_user(backend: &dyn ConicBackend) -> CriterionResult {
    timed("single-user analytic power", false, || {
        let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED);
        let h = gaussian_vec(4, &mut rng);
        let noise = 0.7;
        let inst = ChannelInstance::new(vec![h.clone()], vec![0.0], noise)?;
        let algo = AlgoConfig {
            verify: None,
            ..suite_algo()
        };
        let mut worst = 0.0_f64;
        for eps in SINGLE_USER_TARGETS {
            let rep = minimize_power(&inst, eps, &algo, backend)?;
            let want = noise * (1.0 - eps) / (eps * norm_sqr(&h));
            worst = worst.max((rep.final_objective - want).abs() / want);
        }
        Ok((
            worst <= SINGLE_USER_RTOL,
            format!("max relative error {worst:.2e} (tol {SINGLE_USER_RTOL:.0e})"),
        ))
    })
}

/// Tracks the largest complex-domain eigenvalue ratio over all solves.
#[derive(Debug, Default)]
pub struct RankLog {
    entries: Vec<(String, f64)>,
}

impl RankLog {
    pub fn record(&mut self, label: impl Into<String>, report: &SolveReport) {
        self.entries.push((label.into(), report.worst_eigen_ratio()));
    }

    pub fn record_ratio(&mut self, label: impl Into<String>, ratio: f64) {
        self.entries.push((label.into(), ratio));
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.entries.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Design runs of the power-minimization criterion, reused by the duality
/// check.
pub struct ConvergenceRuns {
    pub reports: Vec<(f64, SolveReport)>,
}

pub fn check_convergence(
    backend: &dyn ConicBackend,
    ranks: &mut RankLog,
) -> (CriterionResult, Option<ConvergenceRuns>) {
    let mut runs = None;
    let result = timed("reference scenario power minimization", false, || {
        let inst = reference_instance()?;
        let mut ok = true;
        let mut parts = Vec::new();
        let mut reports = Vec::new();
        for eps in CONVERGENCE_TARGETS {
            let rep = minimize_power(&inst, eps, &suite_algo(), backend)?;
            ranks.record(format!("power-min {eps}"), &rep);
            let (k, w) = rep.worst_user_mc().expect("verified report");
            let tol = MC_RELATIVE_TOL * eps + Z_SLACK * w.mc_std_error;
            let dev = (w.mc_ammse - eps).abs();
            let iters = rep.iterations.len();
            ok &= rep.converged && iters <= CONVERGENCE_MAX_ITERATIONS && dev <= tol;
            parts.push(format!(
                "eps {eps}: {iters} iterations ({:?}), power {:.4}, worst user {} MC {:.5} ± {:.5} (|dev| {dev:.5} vs {tol:.5})",
                rep.termination,
                rep.final_objective,
                k + 1,
                w.mc_ammse,
                w.mc_std_error
            ));
            reports.push((eps, rep));
        }
        runs = Some(ConvergenceRuns { reports });
        Ok((ok, parts.join("; ")))
    });
    (result, runs)
}

pub fn check_duality(backend: &dyn ConicBackend, runs: Option<&ConvergenceRuns>) -> CriterionResult {
    timed("power/AMMSE duality at frozen alpha", false, || {
        let Some(runs) = runs else {
            return Ok((false, "no converged power-minimization runs".into()));
        };
        let inst = reference_instance()?;
        let algo = AlgoConfig {
            verify: None,
            ..suite_algo()
        };
        let mut ok = true;
        let mut parts = Vec::new();
        for (eps, rep) in &runs.reports {
            let back = minimize_maxammse_fixed_alpha(&inst, rep.final_objective, &rep.final_alphas, &algo, backend)?;
            let dev = (back.t0 - eps).abs();
            ok &= dev <= DUALITY_SLACK;
            parts.push(format!(
                "eps {eps} -> P {:.6} -> t0 {:.6} (|dev| {dev:.1e})",
                rep.final_objective, back.t0
            ));
        }
        Ok((ok, format!("{} (slack {DUALITY_SLACK:.0e})", parts.join("; "))))
    })
}

pub fn check_monotonicity(backend: &dyn ConicBackend, ranks: &mut RankLog) -> CriterionResult {
    timed("monotonicity in target and budget", false, || {
        let inst = reference_instance()?;
        let algo = AlgoConfig {
            verify: None,
            ..suite_algo()
        };
        let mut powers = Vec::new();
        let mut alphas = None;
        for eps in MONOTONE_TARGETS {
            let rep = minimize_power(&inst, eps, &algo, backend)?;
            ranks.record(format!("power-min {eps}"), &rep);
            if eps == 0.4 {
                alphas = Some(rep.final_alphas.clone());
            }
            powers.push(rep.final_objective);
        }
        let strictly_decreasing = powers.windows(2).all(|w| w[1] < w[0]);

        let alphas = alphas.unwrap_or_else(|| vec![1.0; inst.num_users()]);
        let cfg = reference_scenario();
        let mut t0s = Vec::new();
        for db in MONOTONE_SNR_DB {
            let r = minimize_maxammse_fixed_alpha(&inst, cfg.power_for_snr_db(db), &alphas, &algo, backend)?;
            ranks.record_ratio(
                format!("fixed-alpha bisection {db} dB"),
                r.extraction.worst_eigen_ratio(),
            );
            t0s.push(r.t0);
        }
        let non_increasing = t0s.windows(2).all(|w| w[1] <= w[0] + DUALITY_SLACK);
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(", ");
        Ok((
            strictly_decreasing && non_increasing,
            format!(
                "powers at {MONOTONE_TARGETS:?}: [{}]; t0 at {MONOTONE_SNR_DB:?} dB: [{}]",
                fmt(&powers),
                fmt(&t0s)
            ),
        ))
    })
}

/// Ignorant AMMSE upper-bounds the Monte-Carlo AMMSE for random precoders.
pub fn check_ignorant_bound() -> CriterionResult {
    timed("ignorant AMMSE upper bound", false, || {
        let inst = reference_instance()?;
        let cfg = reference_scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(SUITE_SEED);
        let mut violations = 0;
        let mut min_margin = f64::INFINITY;
        for i in 0..BOUND_PRECODERS {
            let raw = Precoder::new(
                (0..inst.num_users())
                    .map(|_| gaussian_vec(inst.num_antennas(), &mut rng))
                    .collect(),
            )?;
            let snr_db = rng.gen_range(0.0..30.0);
            let p = raw.scaled((cfg.power_for_snr_db(snr_db) / raw.total_power()).sqrt());
            let mc = mc_ammse_all(&inst, &p, MC_COUNT, SUITE_SEED + i as u64)?;
            for (k, est) in mc.iter().enumerate() {
                let bound = ignorant_ammse(&inst, &p, k)?;
                let margin = (bound - est.mean + Z_SLACK * est.std_error) / est.std_error.max(f64::MIN_POSITIVE);
                min_margin = min_margin.min(margin);
                if bound < est.mean - Z_SLACK * est.std_error {
                    violations += 1;
                }
            }
        }
        Ok((
            violations == 0,
            format!(
                "{violations} violations over {BOUND_PRECODERS} precoders x {} users, min margin {min_margin:.1} SE",
                inst.num_users()
            ),
        ))
    })
}

/// Monte-Carlo AMMSE does not increase when a precoder is scaled up.
pub fn check_scaling_monotonicity(backend: &dyn ConicBackend) -> CriterionResult {
    timed("AMMSE monotone under precoder scaling", false, || {
        let inst = reference_instance()?;
        let algo = AlgoConfig {
            verify: None,
            ..suite_algo()
        };
        let base = minimize_power(&inst, 0.4, &algo, backend)?.final_precoder;
        let estimates = SCALING_FACTORS
            .iter()
            .map(|&s| mc_ammse_all(&inst, &base.scaled(s), MC_COUNT, SUITE_SEED))
            .collect::<Result<Vec<_>>>()?;
        let mut ok = true;
        for pair in estimates.windows(2) {
            for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                ok &= hi.mean <= lo.mean + Z_SLACK * lo.std_error.max(hi.std_error);
            }
        }
        let worst: Vec<String> = estimates
            .iter()
            .map(|e| format!("{:.4}", e.iter().map(|x| x.mean).fold(0.0, f64::max)))
            .collect();
        Ok((
            ok,
            format!("worst-user MC AMMSE at c = {SCALING_FACTORS:?}: [{}]", worst.join(", ")),
        ))
    })
}

/// Aware max-AMMSE design against the ignorant baseline for the least
/// fortunate user. The ignorant design is evaluated with the receivers the
/// transmitter computes and forwards to the users.
pub fn check_aware_vs_ignorant(backend: &dyn ConicBackend, ranks: &mut RankLog) -> CriterionResult {
    timed("aware vs ignorant design", false, || {
        let cfg = reference_scenario();
        let inst = reference_instance()?;
        let focus = least_fortunate_user(&cfg);
        let algo = suite_algo();
        let mut ok = true;
        let mut gaps = Vec::new();
        let mut parts = Vec::new();
        for db in GAP_SNR_DB {
            let budget = cfg.power_for_snr_db(db);
            let aware = minimize_maxammse(&inst, budget, &algo, backend)?;
            let ignorant = minimize_maxammse_ignorant(&inst, budget, &algo, backend)?;
            ranks.record(format!("aware {db} dB"), &aware);
            ranks.record(format!("ignorant {db} dB"), &ignorant);
            let a = aware.verification[focus].mc_ammse;
            let iv = &ignorant.verification[focus];
            let i = iv.mc_forwarded.map_or(iv.mc_ammse, |f| f.mean);
            ok &= a <= i;
            gaps.push(i - a);
            parts.push(format!(
                "{db} dB: aware {a:.4}, ignorant {i:.4} (own MMSE receivers {:.4})",
                iv.mc_ammse
            ));
        }
        let growing = gaps.last() > gaps.first();
        Ok((
            ok && growing,
            format!(
                "user {} {}; gap {:.4} -> {:.4}",
                focus + 1,
                parts.join("; "),
                gaps.first().copied().unwrap_or(f64::NAN),
                gaps.last().copied().unwrap_or(f64::NAN)
            ),
        ))
    })
}

pub fn check_rank_one(ranks: &RankLog) -> CriterionResult {
    timed("rank-one relaxed solutions", true, || {
        Ok(match ranks.worst() {
            Some((label, ratio)) => (
                *ratio < RANK_ONE_TOL,
                format!(
                    "worst lambda2/lambda1 = {ratio:.2e} ({label}) over {} design runs (tol {RANK_ONE_TOL:.0e})",
                    ranks.entries.len()
                ),
            ),
            None => (false, "no solves recorded".into()),
        })
    })
}

/// Runs every criterion in order. `progress` is called after each one.
pub fn run_all(backend: &dyn ConicBackend, mut progress: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    let mut out = Vec::new();
    let mut ranks = RankLog::default();
    let mut push = |r: CriterionResult, out: &mut Vec<CriterionResult>| {
        progress(&r);
        out.push(r);
    };
    push(check_moments(MOMENT_SAMPLES, SUITE_SEED), &mut out);
    push(check_single_user(backend), &mut out);
    let (conv, runs) = check_convergence(backend, &mut ranks);
    push(conv, &mut out);
    push(check_duality(backend, runs.as_ref()), &mut out);
    push(check_monotonicity(backend, &mut ranks), &mut out);
    push(check_ignorant_bound(), &mut out);
    push(check_scaling_monotonicity(backend), &mut out);
    push(check_aware_vs_ignorant(backend, &mut ranks), &mut out);
    push(check_rank_one(&ranks), &mut out);
    out
}
