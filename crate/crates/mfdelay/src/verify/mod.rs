//! Independent verification of a synthesized policy.
//!
//! * [`closed_loop`] — affine closed-loop maps and the exact expected cost.
//! * [`residuals`] — closed-form costate and equilibrium residuals.
//! * [`oracle`] — brute-force optimum under two-point noise.
//! * [`reductions`] — noiseless, mean-field-free and single-controller cases.
//!
//! [`run_suite`] bundles them into a JSON-serializable [`VerificationReport`].

pub mod closed_loop;
pub mod oracle;
pub mod reductions;
pub mod residuals;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ProblemSpec;
use crate::predictor::{simulate, NoiseKind, TrajectoryRecord};
use crate::riccati::{optimal_cost, LinearPolicy, RiccatiSolution};

pub use closed_loop::{build_closed_loop, exact_cost, exact_cost_detail, ClosedLoopStage, MomentState};
pub use oracle::{brute_force_oracle, OracleResult};
pub use residuals::{costate_path, costate_residual, equilibrium_residual, Location, ResidualReport};

/// Relative tolerance of the costate and equilibrium residuals.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Relative tolerance between exact_cost and the Riccati cost.
pub const COST_TOL: f64 = 1e-8;
/// Finite-difference step of the stationarity check.
pub const STATIONARITY_EPS: f64 = 1e-4;
/// Bound on the finite-difference derivative at the optimum.
pub const STATIONARITY_TOL: f64 = 1e-6;
/// Relative tolerance of the oracle cost and action gaps.
pub const ORACLE_TOL: f64 = 1e-6;
/// Tolerance of the noiseless dynamic-programming comparison.
pub const REDUCTION_TOL: f64 = 1e-8;

/// Monte Carlo cost estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// Standard error of the mean; `None` for a single run.
    pub std_error: Option<f64>,
    pub runs: usize,
}

/// Sample mean and standard error of the per-path costs.
pub fn mc_cost(batch: &[TrajectoryRecord]) -> Result<McEstimate> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let estimate = batch.iter().map(|t| t.total_cost).sum::<f64>() / n;
    let std_error = (batch.len() > 1).then(|| {
        let var = batch.iter().map(|t| (t.total_cost - estimate).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(McEstimate {
        estimate,
        std_error,
        runs: batch.len(),
    })
}

/// Finite-difference stationarity of the exact cost.
#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub eps: f64,
    /// Largest |∂J/∂θ| over gain, mean-gain and offset entries of active stages.
    pub max_derivative: f64,
    /// Index (in [`LinearPolicy::for_each_entry_mut`] order) attaining it.
    pub argmax: Option<usize>,
    pub entries: usize,
    /// Largest |∂J/∂u| over warm-up entries (given data, reported only).
    pub warmup_sensitivity: f64,
}

fn perturbed(policy: &LinearPolicy, index: usize, delta: f64) -> LinearPolicy {
    let mut p = policy.clone();
    let mut k = 0;
    p.for_each_entry_mut(|v| {
        if k == index {
            *v += delta;
        }
        k += 1;
    });
    p
}

/// Central finite differences of [`exact_cost`] in every policy entry.
pub fn stationarity_check(spec: &ProblemSpec, policy: &LinearPolicy, eps: f64) -> StationarityReport {
    let mut entries = 0;
    policy.clone().for_each_entry_mut(|_| entries += 1);
    let mut max_derivative: f64 = 0.0;
    let mut argmax = None;
    for idx in 0..entries {
        let d = (exact_cost(spec, &perturbed(policy, idx, eps)) - exact_cost(spec, &perturbed(policy, idx, -eps)))
            / (2.0 * eps);
        if d.abs() > max_derivative || argmax.is_none() {
            max_derivative = max_derivative.max(d.abs());
            argmax = Some(idx);
        }
    }
    let mut warmup_sensitivity: f64 = 0.0;
    for i in 0..=spec.h() {
        for t in 0..i.min(spec.gamma() + 1) {
            for e in 0..spec.dims.m[i] {
                let mut plus = policy.clone();
                let mut minus = policy.clone();
                plus.warmup[i][t][e] += eps;
                minus.warmup[i][t][e] -= eps;
                let d = (exact_cost(spec, &plus) - exact_cost(spec, &minus)) / (2.0 * eps);
                warmup_sensitivity = warmup_sensitivity.max(d.abs());
            }
        }
    }
    StationarityReport {
        eps,
        max_derivative,
        argmax,
        entries,
        warmup_sensitivity,
    }
}

/// Verification suites selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Equilibrium,
    Costate,
    Stationarity,
    Oracle,
    Reductions,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = ["equilibrium", "costate", "stationarity", "oracle", "reductions", "all"];

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "equilibrium" => Suite::Equilibrium,
            "costate" => Suite::Costate,
            "stationarity" => Suite::Stationarity,
            "oracle" => Suite::Oracle,
            "reductions" => Suite::Reductions,
            "all" => Suite::All,
            other => {
                return Err(Error::Invalid(format!(
                    "unknown suite `{other}` (expected one of {})",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = *self as usize;
        f.write_str(Suite::NAMES[i])
    }
}

/// One pass/fail line of a verification report.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: String,
    pub residual: f64,
    pub threshold: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<Location>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    fn new(suite: Suite, name: impl Into<String>, residual: f64, threshold: f64) -> Self {
        CheckResult {
            suite,
            name: name.into(),
            residual,
            threshold,
            passed: residual <= threshold,
            location: None,
            detail: None,
        }
    }

    fn with_location(mut self, loc: Option<Location>) -> Self {
        self.location = loc;
        self
    }

    fn with_detail(mut self, d: impl Into<String>) -> Self {
        self.detail = Some(d.into());
        self
    }
}

/// Options of [`run_suite`].
#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Trajectories for the residual suites.
    pub runs: usize,
    pub noise: NoiseKind,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            runs: 10,
            noise: NoiseKind::Gaussian,
        }
    }
}

/// Result of [`run_suite`].
#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationarity: Option<StationarityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reductions: Option<reductions::ReductionReport>,
    /// Smallest reciprocal condition number over all stage solves.
    pub min_rcond: f64,
    /// Smallest eigenvalue of the symmetric part over all stage matrices.
    pub min_stage_eig: f64,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }
}

/// Run the selected suite(s) for `policy` against the Riccati solution `sol` of `spec`.
pub fn run_suite(
    spec: &ProblemSpec,
    sol: &RiccatiSolution,
    policy: &LinearPolicy,
    suite: Suite,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let mut checks = Vec::new();
    let mut oracle_result = None;
    let mut stationarity = None;
    let mut reduction = None;

    let needs_paths = suite.includes(Suite::Equilibrium) || suite.includes(Suite::Costate);
    let batch = if needs_paths {
        simulate(spec, policy, opts.seed, opts.runs, opts.noise)
    } else {
        Vec::new()
    };

    if suite.includes(Suite::Equilibrium) {
        let mut eq = residuals::EquilibriumReports::new();
        for t in &batch {
            eq.merge(&equilibrium_residual(spec, t, sol)?);
        }
        for r in eq.all() {
            checks
                .push(CheckResult::new(Suite::Equilibrium, &r.name, r.max_rel, RESIDUAL_TOL).with_location(r.location));
        }
    }
    if suite.includes(Suite::Costate) {
        let mut rep = ResidualReport::new("costate");
        for t in &batch {
            rep.merge(&costate_residual(spec, t, sol)?);
        }
        checks.push(CheckResult::new(Suite::Costate, "costate", rep.max_rel, RESIDUAL_TOL).with_location(rep.location));
        let j = optimal_cost(spec, sol);
        let e = exact_cost(spec, policy);
        checks.push(
            CheckResult::new(
                Suite::Costate,
                "exact cost vs Riccati cost",
                (j - e).abs() / j.abs().max(1.0),
                COST_TOL,
            )
            .with_detail(format!("riccati {j:.12e}, exact {e:.12e}")),
        );
    }
    if suite.includes(Suite::Stationarity) {
        let st = stationarity_check(spec, policy, STATIONARITY_EPS);
        checks.push(
            CheckResult::new(Suite::Stationarity, "stationarity", st.max_derivative, STATIONARITY_TOL).with_detail(
                format!(
                    "{} entries, eps {:e}, warm-up sensitivity {:.3e} (not a decision variable)",
                    st.entries, st.eps, st.warmup_sensitivity
                ),
            ),
        );
        stationarity = Some(st);
    }
    if suite.includes(Suite::Oracle) {
        let g = reductions::oracle_horizon(spec);
        let inst = spec.with_gamma(g);
        let res = brute_force_oracle(&inst)?;
        let note = if g < spec.gamma() {
            format!("horizon truncated from {} to {g}; ", spec.gamma())
        } else {
            String::new()
        };
        let detail = format!(
            "{note}{} parameters over {} noise paths; oracle {:.12e}, riccati {:.12e}",
            res.params, res.paths, res.oracle_cost, res.riccati_cost
        );
        checks.push(CheckResult::new(Suite::Oracle, "oracle cost", res.rel_cost_gap, ORACLE_TOL).with_detail(detail));
        checks.push(CheckResult::new(
            Suite::Oracle,
            "oracle actions",
            res.max_action_gap,
            ORACLE_TOL,
        ));
        oracle_result = Some(res);
    }
    if suite.includes(Suite::Reductions) {
        let r = reductions::reductions(spec)?;
        checks.push(CheckResult::new(
            Suite::Reductions,
            "noiseless vs dynamic programming",
            r.noiseless_rel_gap,
            REDUCTION_TOL,
        ));
        checks.push(CheckResult::new(
            Suite::Reductions,
            "no mean field: Phibar and mean gains",
            r.zero_bar_phibar_max.max(r.zero_bar_kmean_max),
            0.0,
        ));
        checks.push(CheckResult::new(
            Suite::Reductions,
            "single controller vs oracle",
            r.single_controller.rel_cost_gap.max(r.single_controller.max_action_gap),
            ORACLE_TOL,
        ));
        reduction = Some(r);
    }

    let mut min_rcond = f64::INFINITY;
    let mut min_stage_eig = f64::INFINITY;
    for st in &sol.stages {
        for l in st.innovation.iter().chain([&st.mean]) {
            min_rcond = min_rcond.min(l.rcond);
            min_stage_eig = min_stage_eig.min(l.min_sym_eig);
        }
    }
    Ok(VerificationReport {
        suite,
        passed: checks.iter().all(|c| c.passed),
        checks,
        oracle: oracle_result,
        stationarity,
        reductions: reduction,
        min_rcond,
        min_stage_eig,
    })
}
