//! The commands behind the `mfdelay` binary.
//!
//! ```text
//! mfdelay synthesize (--config PATH | --example NAME) [--out DIR] [--folded] [--recursion exact|printed]
//! mfdelay simulate   (--config PATH | --example NAME) --seed U64 --runs N [--out DIR] [--noise gaussian|two-point]
//! mfdelay verify     (--config PATH | --example NAME) --suite NAME [--seed U64] [--runs N] [--gains PATH] [--out DIR]
//! mfdelay example    NAME
//! ```
//!
//! Exit statuses: 0 success, 1 verification failure, 2 invalid problem or
//! unreadable input, 3 unsolvable stage (singular coefficient matrix).

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{builtin_example, emit_problem, load_problem, validate, ProblemSpec, ValidationReport};
use crate::predictor::{plot_data, simulate, trajectories_to_csv, NoiseKind};
use crate::riccati::reference::{compare_with_reference, GainComparison, DISPLAY_TOL};
use crate::riccati::{
    backward_pass, fold_gains_for_display, gains_from_json, gains_to_json, optimal_cost, printed, synthesize_gains,
    LinearPolicy, RiccatiSolution, StageCoefficients,
};
use crate::verify::{exact_cost, mc_cost, run_suite, Suite, VerifyOptions};

/// Exit status: success.
pub const EXIT_OK: i32 = 0;
/// Exit status: at least one verification check failed.
pub const EXIT_VERIFY_FAILED: i32 = 1;
/// Exit status: invalid problem, bad flags or unreadable input.
pub const EXIT_INVALID: i32 = 2;
/// Exit status: a stage coefficient matrix is singular.
pub const EXIT_UNSOLVABLE: i32 = 3;

/// Decentralized LQ control of mean-field systems with delayed information.
#[derive(Debug, Parser)]
#[command(name = "mfdelay", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Where the problem instance comes from.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Problem configuration (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Built-in instance (`sec5` or `sec5-long`).
    #[arg(long, value_name = "NAME")]
    pub example: Option<String>,
}

/// Which backward recursion produces the gains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Recursion {
    /// The optimal recursion.
    #[default]
    Exact,
    /// The literal recursion, for comparison (not optimal for h ≥ 1).
    Printed,
}

/// Noise distribution used by simulations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Noise {
    #[default]
    Gaussian,
    TwoPoint,
}

impl From<Noise> for NoiseKind {
    fn from(n: Noise) -> Self {
        match n {
            Noise::Gaussian => NoiseKind::Gaussian,
            Noise::TwoPoint => NoiseKind::TwoPoint,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the optimal gains and cost; write gains.json,
    /// gains_folded.json and summary.json.
    Synthesize {
        #[command(flatten)]
        source: Source,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Print gain tables with predictors that equal E x folded into the mean gain.
        #[arg(long)]
        folded: bool,
        #[arg(long, value_enum, default_value_t)]
        recursion: Recursion,
    },
    /// Simulate the closed loop; write trajectories.csv and plot.dat.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        runs: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        noise: Noise,
        #[arg(long, value_enum, default_value_t)]
        recursion: Recursion,
    },
    /// Run verification suites; write verification.json.
    Verify {
        #[command(flatten)]
        source: Source,
        /// equilibrium, costate, stationarity, oracle, reductions or all.
        #[arg(long)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectories for the residual suites.
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Verify the gains in this file (gains.json format) instead of synthesized ones.
        #[arg(long, value_name = "PATH")]
        gains: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        noise: Noise,
        #[arg(long, value_enum, default_value_t)]
        recursion: Recursion,
    },
    /// Print the configuration of a built-in instance.
    Example {
        /// `sec5` or `sec5-long`.
        name: String,
    },
}

/// Map an error to its exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Solvability { .. } => EXIT_UNSOLVABLE,
        _ => EXIT_INVALID,
    }
}

/// Parse `args` (including the program name), run the command and return
/// its exit status. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Run a parsed command; `Ok` carries the exit status of a completed run.
pub fn execute(command: &Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Synthesize {
            source,
            out: dir,
            folded,
            recursion,
        } => cmd_synthesize(source, dir, *folded, *recursion, out),
        Command::Simulate {
            source,
            seed,
            runs,
            out: dir,
            noise,
            recursion,
        } => cmd_simulate(source, *seed, *runs, dir, *noise, *recursion, out),
        Command::Verify {
            source,
            suite,
            seed,
            runs,
            gains,
            out: dir,
            noise,
            recursion,
        } => {
            let opts = VerifyOptions {
                seed: *seed,
                runs: *runs,
                noise: (*noise).into(),
            };
            cmd_verify(source, *suite, &opts, gains.as_deref(), *recursion, dir, out)
        }
        Command::Example { name } => {
            let spec = builtin_example(name)?;
            writeln!(out, "{}", emit_problem(&spec)?)?;
            Ok(EXIT_OK)
        }
    }
}

/// Load the instance named by `source` and reject it if validation fails.
pub fn load_source(source: &Source) -> Result<(ProblemSpec, ValidationReport)> {
    let spec = match (&source.config, &source.example) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
            load_problem(&text)?
        }
        (None, Some(name)) => builtin_example(name)?,
        (None, None) => return Err(Error::Invalid("one of --config or --example is required".into())),
    };
    let report = validate(&spec);
    if report.has_errors() {
        return Err(Error::Invalid(format!(
            "the problem violates the weight/shape requirements:\n{}",
            report.summary()
        )));
    }
    Ok((spec, report))
}

/// The exact Riccati solution and the policy/cost of the selected recursion.
fn solve(spec: &ProblemSpec, recursion: Recursion) -> Result<(RiccatiSolution, LinearPolicy, f64)> {
    let sol = backward_pass(spec)?;
    match recursion {
        Recursion::Exact => {
            let policy = synthesize_gains(spec, &sol);
            let cost = optimal_cost(spec, &sol);
            Ok((sol, policy, cost))
        }
        Recursion::Printed => {
            let p = printed::backward_pass(spec)?;
            let policy = printed::synthesize_gains(spec, &p)?;
            let cost = printed::optimal_cost(spec, &p);
            Ok((sol, policy, cost))
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}

#[derive(Serialize)]
struct Summary<'a> {
    recursion: &'static str,
    optimal_cost: f64,
    exact_cost: f64,
    validation: &'a ValidationReport,
    stages: &'a [StageCoefficients],
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_comparison: Option<&'a [GainComparison]>,
}

fn format_mat(m: &crate::linalg::Mat, indent: &str) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        s.push_str(indent);
        s.push('[');
        for c in 0..m.ncols() {
            let _ = write!(s, "{:>9.4}", m[(r, c)]);
        }
        s.push_str(" ]\n");
    }
    s
}

/// Gain tables, one block per controller and time.
pub fn gain_tables(policy: &LinearPolicy, folded: bool) -> String {
    let g = policy.kmean[0].len() - 1;
    let h = policy.kmean.len() - 1;
    let mut s = String::new();
    for tau in 0..=g {
        for d in fold_gains_for_display(policy, tau) {
            let _ = writeln!(s, "v_{}({}) =", d.i, tau);
            if folded {
                for (j, m) in &d.pred {
                    let _ = writeln!(s, "  * {}", d.label(*j));
                    s.push_str(&format_mat(m, "    "));
                }
                let _ = writeln!(s, "  * E x({tau})");
                s.push_str(&format_mat(&d.mean, "    "));
            } else {
                for j in d.i..=h {
                    let _ = writeln!(s, "  * xhat({tau}|{tau}-{j})");
                    s.push_str(&format_mat(&policy.kpred[d.i][j][tau], "    "));
                }
                let _ = writeln!(s, "  * E x({tau})");
                s.push_str(&format_mat(&policy.kmean[d.i][tau], "    "));
            }
            if d.offset.amax() > 0.0 {
                let _ = writeln!(s, "  + offset {:?}", d.offset.as_slice());
            }
        }
    }
    s
}

fn is_sec5(source: &Source) -> bool {
    source.example.as_deref() == Some("sec5")
}

fn cmd_synthesize(source: &Source, dir: &Path, folded: bool, recursion: Recursion, out: &mut dyn Write) -> Result<i32> {
    let (spec, report) = load_source(source)?;
    for w in report.warnings() {
        writeln!(out, "warning: {} ({})", w.name, w.detail)?;
    }
    let (sol, policy, cost) = solve(&spec, recursion)?;
    let exact = exact_cost(&spec, &policy);
    write_file(dir, "gains.json", &gains_to_json(&policy, false))?;
    write_file(dir, "gains_folded.json", &gains_to_json(&policy, true))?;

    let comparison = is_sec5(source).then(|| compare_with_reference(&policy));
    let summary = Summary {
        recursion: match recursion {
            Recursion::Exact => "exact",
            Recursion::Printed => "printed",
        },
        optimal_cost: cost,
        exact_cost: exact,
        validation: &report,
        stages: &sol.stages,
        reference_comparison: comparison.as_deref(),
    };
    write_file(dir, "summary.json", &serde_json::to_string_pretty(&summary)?)?;

    writeln!(out, "J* = {cost:.12}")?;
    writeln!(out, "exact cost of the policy = {exact:.12}")?;
    if folded {
        out.write_all(gain_tables(&policy, true).as_bytes())?;
    }
    if let Some(cmp) = comparison {
        let worst = cmp.iter().map(|c| c.max_abs_err).fold(0.0, f64::max);
        let failed = cmp.iter().filter(|c| !c.passed).count();
        writeln!(
            out,
            "reference sec5 gains: {}/{} matrices within {DISPLAY_TOL:e} (largest deviation {worst:.4})",
            cmp.len() - failed,
            cmp.len()
        )?;
        for c in cmp.iter().filter(|c| !c.passed) {
            writeln!(
                out,
                "  v_{}({}) term {}: max |diff| = {:.4}",
                c.i, c.tau, c.term, c.max_abs_err
            )?;
        }
    }
    writeln!(
        out,
        "wrote gains.json, gains_folded.json, summary.json to {}",
        dir.display()
    )?;
    Ok(EXIT_OK)
}

fn cmd_simulate(
    source: &Source,
    seed: u64,
    runs: usize,
    dir: &Path,
    noise: Noise,
    recursion: Recursion,
    out: &mut dyn Write,
) -> Result<i32> {
    let (spec, _) = load_source(source)?;
    let (_, policy, _) = solve(&spec, recursion)?;
    let batch = simulate(&spec, &policy, seed, runs, noise.into());
    write_file(dir, "trajectories.csv", &trajectories_to_csv(&spec, &batch))?;
    write_file(dir, "plot.dat", &plot_data(&spec, &batch))?;
    let exact = exact_cost(&spec, &policy);
    match mc_cost(&batch) {
        Ok(mc) => match mc.std_error {
            Some(se) => writeln!(out, "mc cost = {:.6} ± {:.6} ({} runs)", mc.estimate, se, mc.runs)?,
            None => writeln!(out, "mc cost = {:.6} (1 run)", mc.estimate)?,
        },
        Err(Error::EmptyBatch) => writeln!(out, "mc cost: no runs")?,
        Err(e) => return Err(e),
    }
    writeln!(out, "exact cost = {exact:.12}")?;
    writeln!(out, "wrote trajectories.csv, plot.dat to {}", dir.display())?;
    Ok(EXIT_OK)
}

fn cmd_verify(
    source: &Source,
    suite: Suite,
    opts: &VerifyOptions,
    gains: Option<&Path>,
    recursion: Recursion,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<i32> {
    let (spec, _) = load_source(source)?;
    let (sol, mut policy, _) = solve(&spec, recursion)?;
    if let Some(path) = gains {
        let text =
            fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))?;
        policy = gains_from_json(&spec, &text)?;
    }
    let report = run_suite(&spec, &sol, &policy, suite, opts)?;
    write_file(dir, "verification.json", &report.to_json())?;
    for c in &report.checks {
        let loc = c.location.as_ref().map(|l| format!(" at {l:?}")).unwrap_or_default();
        writeln!(
            out,
            "{} [{}] {}: {:.3e} (threshold {:.0e}){}",
            if c.passed { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.residual,
            c.threshold,
            loc
        )?;
        if let Some(d) = &c.detail {
            writeln!(out, "    {d}")?;
        }
    }
    writeln!(out, "wrote verification.json to {}", dir.display())?;
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut o = Vec::new();
        let mut e = Vec::new();
        let code = run(args.iter().copied(), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn simulate_requires_seed_and_runs() {
        let (code, _, err) = run_str(&["mfdelay", "simulate", "--example", "sec5", "--runs", "1"]);
        assert_eq!(code, EXIT_INVALID);
        assert!(err.contains("--seed"));
    }

    #[test]
    fn verify_requires_suite() {
        let (code, _, err) = run_str(&["mfdelay", "verify", "--example", "sec5"]);
        assert_eq!(code, EXIT_INVALID);
        assert!(err.contains("--suite"));
    }

    #[test]
    fn config_and_example_are_exclusive() {
        let (code, _, _) = run_str(&["mfdelay", "synthesize", "--example", "sec5", "--config", "x.json"]);
        assert_eq!(code, EXIT_INVALID);
        let (code, _, _) = run_str(&["mfdelay", "synthesize"]);
        assert_eq!(code, EXIT_INVALID);
    }

    #[test]
    fn unknown_suite_is_rejected() {
        let (code, _, err) = run_str(&["mfdelay", "verify", "--example", "sec5", "--suite", "bogus"]);
        assert_eq!(code, EXIT_INVALID);
        assert!(err.contains("unknown suite"));
    }

    #[test]
    fn example_prints_loadable_config() {
        let (code, out, _) = run_str(&["mfdelay", "example", "sec5"]);
        assert_eq!(code, EXIT_OK);
        let spec = load_problem(&out).unwrap();
        assert_eq!(spec, builtin_example("sec5").unwrap());
    }

    #[test]
    fn solvability_maps_to_exit_3() {
        let e = Error::Solvability {
            tau: 1,
            level: 0,
            which: crate::error::Coefficient::Upsilon,
            rcond: 0.0,
        };
        assert_eq!(exit_code(&e), EXIT_UNSOLVABLE);
        assert_eq!(exit_code(&Error::Invalid("x".into())), EXIT_INVALID);
    }

    #[test]
    fn folded_tables_label_predictors() {
        let s = builtin_example("sec5").unwrap();
        let p = synthesize_gains(&s, &backward_pass(&s).unwrap());
        let t = gain_tables(&p, true);
        assert!(t.contains("v_0(0) ="));
        assert!(t.contains("xhat(4|2)"));
        assert!(t.contains("E x(4)"));
    }
}
