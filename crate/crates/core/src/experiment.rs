//! Scenario configuration, parameter sweeps and file output.
//!
//! [`run`] evaluates every target of an [`ExperimentSpec`] (in parallel) and
//! writes, in target order:
//!
//! * `summary.csv`: one row per target,
//! * `<stem>.json` / `<stem>_trace.csv`: full report and per-iteration trace,
//! * `manifest.json`: seeds, phases, tool version and a timestamp,
//! * `plot.gp`: a gnuplot script over the CSV files.
//!
//! Timestamps and wall-clock times appear only in the manifest and the JSON
//! reports, so the CSV files of two identical runs are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ammse::rate_lower_bound;
use crate::channel::{build_instance, ChannelConfig, ChannelInstance};
use crate::conic::ConicBackend;
use crate::design::{
    minimize_maxammse, minimize_maxammse_fixed_alpha, minimize_maxammse_ignorant, minimize_power, AlgoConfig, McConfig,
    SolveReport,
};
use crate::error::{Error, Result};

/// Smallest Monte-Carlo count accepted for verified modes.
pub const MIN_MC_COUNT: usize = 100;

/// Seed of the fixed estimate phases of [`reference_scenario`].
pub const REFERENCE_PHASE_SEED: u64 = 1;

/// The four-antenna, four-user scenario: unit path gains and error variance
/// 0.05 for users 1 to 3, path gain 0.5 and error variance 0.1 for user 4,
/// unit noise variance.
pub fn reference_scenario() -> ChannelConfig {
    ChannelConfig {
        num_tx_antennas: 4,
        num_users: 4,
        path_gains: vec![1.0, 1.0, 1.0, 0.5],
        csit_error_vars: vec![0.05, 0.05, 0.05, 0.1],
        noise_var: 1.0,
        phases: None,
        seed: REFERENCE_PHASE_SEED,
    }
}

/// User with the weakest estimate (smallest `σ²_k − σ²_ek`, ties broken by
/// the larger error variance).
pub fn least_fortunate_user(config: &ChannelConfig) -> usize {
    (0..config.num_users)
        .min_by(|&i, &j| {
            let ci = config.path_gains[i] - config.csit_error_vars[i];
            let cj = config.path_gains[j] - config.csit_error_vars[j];
            ci.total_cmp(&cj)
                .then(config.csit_error_vars[j].total_cmp(&config.csit_error_vars[i]))
        })
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Targets are AMMSE levels `ε̄₀`.
    PowerMin,
    /// Targets are power budgets (or SNRs in dB).
    AmmseMin,
    /// As `AmmseMin`, with the ignorant AMMSE model.
    AmmseMinIgnorant,
    /// Targets are AMMSE levels; each is round-tripped through the power
    /// and max-AMMSE problems.
    DualityCheck,
    /// Random quartic-moment cases against Monte Carlo; takes no targets.
    MomentCheck,
}

impl Mode {
    fn needs_targets(self) -> bool {
        self != Mode::MomentCheck
    }

    fn epsilon_targets(self) -> bool {
        matches!(self, Mode::PowerMin | Mode::DualityCheck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default = "reference_scenario")]
    pub channel: ChannelConfig,
    pub mode: Mode,
    #[serde(default)]
    pub targets: Vec<f64>,
    /// Power targets are SNRs in dB, converted with `P_t = K σ²_av 10^(SNR/10)`.
    #[serde(default)]
    pub targets_in_db: bool,
    #[serde(default = "default_mc_count")]
    pub mc_count: usize,
    /// Seed of all Monte-Carlo draws.
    #[serde(default = "default_mc_seed")]
    pub mc_seed: u64,
    #[serde(default)]
    pub algo: AlgoConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_mc_count() -> usize {
    4000
}

fn default_mc_seed() -> u64 {
    McConfig::default().seed
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentSpec {
    pub fn new(mode: Mode, targets: Vec<f64>) -> Self {
        Self {
            channel: reference_scenario(),
            mode,
            targets,
            targets_in_db: false,
            mc_count: default_mc_count(),
            mc_seed: default_mc_seed(),
            algo: AlgoConfig::default(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid experiment spec: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.algo.validate()?;
        if self.mode.needs_targets() && self.targets.is_empty() {
            return Err(Error::Config("targets must not be empty".into()));
        }
        if self.mc_count < MIN_MC_COUNT {
            return Err(Error::Config(format!("mc_count must be at least {MIN_MC_COUNT}")));
        }
        for &t in &self.targets {
            if !t.is_finite() {
                return Err(Error::Config(format!("target {t} is not finite")));
            }
            if self.mode.epsilon_targets() && !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("AMMSE target {t} must lie in (0, 1)")));
            }
            if !self.mode.epsilon_targets() && !self.targets_in_db && !(t > 0.0) {
                return Err(Error::Config(format!("power target {t} must be positive")));
            }
        }
        if self.targets_in_db && self.mode.epsilon_targets() {
            return Err(Error::Config("targets_in_db only applies to power targets".into()));
        }
        Ok(())
    }

    fn algo_with_mc(&self) -> AlgoConfig {
        AlgoConfig {
            verify: Some(McConfig {
                count: self.mc_count,
                seed: self.mc_seed,
            }),
            ..self.algo.clone()
        }
    }

    /// Target converted to the problem's native unit (`ε̄₀` or watts).
    fn native_target(&self, t: f64) -> f64 {
        if self.targets_in_db {
            self.channel.power_for_snr_db(t)
        } else {
            t
        }
    }
}

/// Outcome class of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    Infeasible,
    NumericalFailure,
    CheckFailed,
}

impl PointStatus {
    fn as_str(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Infeasible => "infeasible",
            PointStatus::NumericalFailure => "numerical_failure",
            PointStatus::CheckFailed => "check_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub target: f64,
    pub status: PointStatus,
    pub iterations: usize,
    pub final_objective: f64,
    /// Power of the final precoder.
    pub power: f64,
    pub snr_db: f64,
    pub worst_user: usize,
    pub worst_taylor_ammse: f64,
    pub worst_mc_ammse: f64,
    pub worst_mc_std_error: f64,
    pub rate_lower_bound: f64,
    /// MC AMMSE of the least fortunate user (forwarded receivers for the
    /// ignorant design).
    pub focus_mc_ammse: f64,
    pub focus_rate_lower_bound: f64,
    pub converged: bool,
    pub message: String,
}

impl SummaryRow {
    pub(crate) fn failed(target: f64, status: PointStatus, message: String) -> Self {
        Self {
            target,
            status,
            iterations: 0,
            final_objective: f64::NAN,
            power: f64::NAN,
            snr_db: f64::NAN,
            worst_user: 0,
            worst_taylor_ammse: f64::NAN,
            worst_mc_ammse: f64::NAN,
            worst_mc_std_error: f64::NAN,
            rate_lower_bound: f64::NAN,
            focus_mc_ammse: f64::NAN,
            focus_rate_lower_bound: f64::NAN,
            converged: false,
            message,
        }
    }

    fn from_report(target: f64, report: &SolveReport, channel: &ChannelConfig, focus: usize) -> Result<Self> {
        let power = report.final_precoder.total_power();
        let (worst_user, worst) = report
            .worst_user_mc()
            .ok_or_else(|| Error::InvalidArgument("report carries no verification".into()))?;
        let focus_v = &report.verification[focus];
        let focus_mc = focus_v.mc_forwarded.map_or(focus_v.mc_ammse, |f| f.mean);
        Ok(Self {
            target,
            status: PointStatus::Ok,
            iterations: report.iterations.len(),
            final_objective: report.final_objective,
            power,
            snr_db: channel.snr_db_for_power(power),
            worst_user,
            worst_taylor_ammse: worst.taylor_ammse,
            worst_mc_ammse: worst.mc_ammse,
            worst_mc_std_error: worst.mc_std_error,
            rate_lower_bound: rate_lower_bound(worst.mc_ammse)?,
            focus_mc_ammse: focus_mc,
            focus_rate_lower_bound: rate_lower_bound(focus_mc)?,
            converged: report.converged,
            message: format!("{:?}", report.termination).to_lowercase(),
        })
    }
}

const SUMMARY_HEADER: [&str; 15] = [
    "target",
    "status",
    "iterations",
    "final_objective",
    "power",
    "snr_db",
    "worst_user",
    "worst_taylor_ammse",
    "worst_mc_ammse",
    "worst_mc_std_error",
    "rate_lower_bound",
    "focus_mc_ammse",
    "focus_rate_lower_bound",
    "converged",
    "message",
];

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.target.to_string(),
            r.status.as_str().to_string(),
            r.iterations.to_string(),
            r.final_objective.to_string(),
            r.power.to_string(),
            r.snr_db.to_string(),
            (r.worst_user + 1).to_string(),
            r.worst_taylor_ammse.to_string(),
            r.worst_mc_ammse.to_string(),
            r.worst_mc_std_error.to_string(),
            r.rate_lower_bound.to_string(),
            r.focus_mc_ammse.to_string(),
            r.focus_rate_lower_bound.to_string(),
            r.converged.to_string(),
            r.message.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One evaluated sweep point before anything is written.
struct PointResult {
    row: SummaryRow,
    report: Option<SolveReport>,
}

fn classify(target: f64, err: Error) -> Result<PointResult> {
    let status = match &err {
        Error::Infeasible(_) => PointStatus::Infeasible,
        Error::Numerical(_) => PointStatus::NumericalFailure,
        _ => return Err(err),
    };
    log::warn!("target {target}: {err}");
    Ok(PointResult {
        row: SummaryRow::failed(target, status, err.to_string()),
        report: None,
    })
}

fn evaluate_point(
    spec: &ExperimentSpec,
    instance: &ChannelInstance,
    target: f64,
    backend: &dyn ConicBackend,
) -> Result<PointResult> {
    let algo = spec.algo_with_mc();
    let native = spec.native_target(target);
    let focus = least_fortunate_user(&spec.channel);
    let outcome = match spec.mode {
        Mode::PowerMin => minimize_power(instance, native, &algo, backend),
        Mode::AmmseMin => minimize_maxammse(instance, native, &algo, backend),
        Mode::AmmseMinIgnorant => minimize_maxammse_ignorant(instance, native, &algo, backend),
        Mode::DualityCheck => return duality_point(spec, instance, native, backend),
        Mode::MomentCheck => unreachable!("moment check has no sweep points"),
    };
    match outcome {
        Ok(report) => Ok(PointResult {
            row: SummaryRow::from_report(target, &report, &spec.channel, focus)?,
            report: Some(report),
        }),
        Err(e) => classify(target, e),
    }
}

/// Power-minimizes at `ε̄₀`, then bisects at the achieved power with the
/// same frozen `α_k`; the returned bound must reproduce `ε̄₀` within `2ε₀`.
fn duality_point(
    spec: &ExperimentSpec,
    instance: &ChannelInstance,
    epsilon: f64,
    backend: &dyn ConicBackend,
) -> Result<PointResult> {
    let algo = spec.algo_with_mc();
    let report = match minimize_power(instance, epsilon, &algo, backend) {
        Ok(r) => r,
        Err(e) => return classify(epsilon, e),
    };
    let quiet = AlgoConfig {
        verify: None,
        ..algo.clone()
    };
    let back =
        match minimize_maxammse_fixed_alpha(instance, report.final_objective, &report.final_alphas, &quiet, backend) {
            Ok(b) => b,
            Err(e) => return classify(epsilon, e),
        };
    let focus = least_fortunate_user(&spec.channel);
    let mut row = SummaryRow::from_report(epsilon, &report, &spec.channel, focus)?;
    let deviation = (back.t0 - epsilon).abs();
    let slack = 2.0 * algo.eps_bisect;
    if deviation > slack {
        row.status = PointStatus::CheckFailed;
    }
    row.message = format!("t0={} deviation={deviation:.3e} slack={slack:.1e}", back.t0);
    Ok(PointResult {
        row,
        report: Some(report),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub timestamp_unix: u64,
    pub backend: String,
    pub mode: Mode,
    pub targets: Vec<f64>,
    pub targets_in_db: bool,
    pub channel: ChannelConfig,
    pub phases: Vec<f64>,
    pub mc_count: usize,
    pub mc_seed: u64,
    /// 1-based index of the least fortunate user.
    pub least_fortunate_user: usize,
    pub average_noise_var: f64,
    pub files: Vec<String>,
}

/// Result of [`run`]: the summary rows and the files written.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: Vec<SummaryRow>,
    pub files: Vec<PathBuf>,
}

impl RunSummary {
    /// The most severe point status, ranked numerical failure, infeasible,
    /// failed check, ok.
    pub fn worst_status(&self) -> PointStatus {
        let rank = |s: PointStatus| match s {
            PointStatus::Ok => 0,
            PointStatus::CheckFailed => 1,
            PointStatus::Infeasible => 2,
            PointStatus::NumericalFailure => 3,
        };
        self.rows
            .iter()
            .map(|r| r.status)
            .max_by_key(|&s| rank(s))
            .unwrap_or(PointStatus::Ok)
    }
}

fn file_stem(mode: Mode, index: usize, target: f64) -> String {
    let prefix = match mode {
        Mode::PowerMin => "power_min",
        Mode::AmmseMin => "ammse_min",
        Mode::AmmseMinIgnorant => "ammse_min_ignorant",
        Mode::DualityCheck => "duality_check",
        Mode::MomentCheck => "moment_check",
    };
    format!("{prefix}_{index:02}_{target}")
}

fn plot_script(mode: Mode, stems: &[String], targets_in_db: bool) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\nset grid\n");
    match mode {
        Mode::PowerMin | Mode::DualityCheck => {
            s.push_str("set terminal pngcairo size 800,500\nset output 'objective_vs_iteration.png'\n");
            s.push_str("set xlabel 'iteration'\nset ylabel 'required power'\n");
            let parts: Vec<String> = stems
                .iter()
                .map(|st| format!("'{st}_trace.csv' using 1:2 with linespoints title '{st}'"))
                .collect();
            s.push_str(&format!("plot {}\n", parts.join(", \\\n     ")));
            s.push_str("set output 'summary.png'\nset xlabel 'AMMSE target'\nset ylabel 'AMMSE'\n");
            s.push_str("plot 'summary.csv' using 1:9 with linespoints title 'worst-user MC AMMSE', \\\n");
            s.push_str("     'summary.csv' using 1:1 with lines title 'target'\n");
        }
        _ => {
            let x = if targets_in_db { "1" } else { "6" };
            s.push_str("set terminal pngcairo size 800,500\nset output 'focus_ammse.png'\n");
            s.push_str("set xlabel 'SNR [dB]'\nset ylabel 'AMMSE of least fortunate user'\n");
            s.push_str(&format!(
                "plot 'summary.csv' using {x}:12 with linespoints title 'MC AMMSE'\n"
            ));
            s.push_str("set output 'focus_rate.png'\nset ylabel 'rate lower bound [bit/channel use]'\n");
            s.push_str(&format!(
                "plot 'summary.csv' using {x}:13 with linespoints title 'rate'\n"
            ));
        }
    }
    s
}

/// Runs the experiment and writes its artifacts to `spec.output_dir`.
pub fn run(spec: &ExperimentSpec, backend: &dyn ConicBackend) -> Result<RunSummary> {
    spec.validate()?;
    let dir = &spec.output_dir;
    fs::create_dir_all(dir)?;
    if spec.mode == Mode::MomentCheck {
        return crate::acceptance::write_moment_check(spec, dir);
    }
    let instance = build_instance(&spec.channel)?;

    let results = spec
        .targets
        .par_iter()
        .map(|&t| evaluate_point(spec, &instance, t, backend))
        .collect::<Result<Vec<_>>>()?;

    let mut files = Vec::new();
    let mut stems = Vec::new();
    let mut rows = Vec::with_capacity(results.len());
    for (i, res) in results.into_iter().enumerate() {
        if let Some(report) = &res.report {
            let stem = file_stem(spec.mode, i, res.row.target);
            let json = dir.join(format!("{stem}.json"));
            fs::write(&json, report.to_json()?)?;
            let trace = dir.join(format!("{stem}_trace.csv"));
            report.write_csv(fs::File::create(&trace)?)?;
            files.push(json);
            files.push(trace);
            stems.push(stem);
        }
        rows.push(res.row);
    }
    let summary = dir.join("summary.csv");
    write_summary(&summary, &rows)?;
    files.push(summary);
    let plot = dir.join("plot.gp");
    fs::write(&plot, plot_script(spec.mode, &stems, spec.targets_in_db))?;
    files.push(plot);
    files.push(write_manifest(spec, backend.name(), &files)?);
    Ok(RunSummary { rows, files })
}

pub(crate) fn write_manifest(spec: &ExperimentSpec, backend: &str, files: &[PathBuf]) -> Result<PathBuf> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        backend: backend.into(),
        mode: spec.mode,
        targets: spec.targets.clone(),
        targets_in_db: spec.targets_in_db,
        channel: spec.channel.clone(),
        phases: spec.channel.resolved_phases(),
        mc_count: spec.mc_count,
        mc_seed: spec.mc_seed,
        least_fortunate_user: least_fortunate_user(&spec.channel) + 1,
        average_noise_var: spec.channel.average_noise_var(),
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let path = spec.output_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scenario_constants() {
        let cfg = reference_scenario();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.csit_error_vars[3], 0.1);
        assert_eq!(cfg.path_gains[3], 0.5);
        assert!((cfg.average_noise_var() - 1.25).abs() < 1e-15);
        assert_eq!(least_fortunate_user(&cfg), 3);
    }

    #[test]
    fn empty_targets_are_a_config_error() {
        let spec = ExperimentSpec::new(Mode::PowerMin, vec![]);
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        let spec = ExperimentSpec::new(Mode::MomentCheck, vec![]);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn target_ranges_are_checked() {
        assert!(ExperimentSpec::new(Mode::PowerMin, vec![1.2]).validate().is_err());
        assert!(ExperimentSpec::new(Mode::AmmseMin, vec![-1.0]).validate().is_err());
        let mut spec = ExperimentSpec::new(Mode::AmmseMin, vec![-10.0, 0.0]);
        spec.targets_in_db = true;
        assert!(spec.validate().is_ok());
        let mut spec = ExperimentSpec::new(Mode::PowerMin, vec![0.3]);
        spec.mc_count = 10;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_json_uses_defaults() {
        let spec =
            ExperimentSpec::from_json(r#"{"mode": "ammse_min", "targets": [0, 10], "targets_in_db": true}"#).unwrap();
        assert_eq!(spec.channel, reference_scenario());
        assert_eq!(spec.mc_count, 4000);
        assert!((spec.native_target(0.0) - 5.0).abs() < 1e-12);
        assert!(ExperimentSpec::from_json(r#"{"mode": "nonsense"}"#).is_err());
    }

    #[test]
    fn worst_status_ranking() {
        let row = |s| SummaryRow::failed(0.1, s, String::new());
        let summary = RunSummary {
            rows: vec![
                row(PointStatus::Ok),
                row(PointStatus::Infeasible),
                row(PointStatus::CheckFailed),
            ],
            files: vec![],
        };
        assert_eq!(summary.worst_status(), PointStatus::Infeasible);
    }
}
