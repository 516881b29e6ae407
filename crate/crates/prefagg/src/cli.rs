//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage (bad flags, unreadable or unwritable
//! files), 2 validation (a document or argument violates an invariant),
//! 3 non-convergence.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use prefagg_core::binary::{
    binary_g2, binary_g2_direct_kl, binary_limit, binary_limit_direct_kl, BinaryQuestion,
};
use prefagg_core::oracle::{OracleConfig, OracleMethod};
use prefagg_core::preference::{
    expected_group_preference, GroupPreferenceQuery, PreferenceMethod,
};
use prefagg_core::solver::{
    nlhf_aggregate, rlhf_aggregate, solve_multistart, solve_stationary, SolverConfig,
};
use prefagg_core::trainer::train;
use prefagg_core::{GroupSize, PolicyTable, Scenario};

use crate::document::{read_scenario, read_sweep_spec, read_trainer_config, DocumentError};
use crate::sweep::{run_sweep, sweep_table};
use crate::table::{num, Table};
use crate::verify::{random_cases, report_table, scenario_cases, Summary};

/// A failed command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or file access problem (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Invalid document or argument (exit 2).
    #[error("{0}")]
    Invalid(String),
    /// An iteration did not converge (exit 3).
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    /// Process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Invalid(_) => 2,
            CliError::NotConverged(_) => 3,
        }
    }
}

impl From<DocumentError> for CliError {
    fn from(e: DocumentError) -> Self {
        match e {
            DocumentError::Io { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<prefagg_core::Error> for CliError {
    fn from(e: prefagg_core::Error) -> Self {
        match e {
            prefagg_core::Error::Diverged(_) => CliError::NotConverged(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "prefagg", version, about = "Stationary policies of group-relative preference optimisation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary policy of every context of a scenario.
    Solve(SolveArgs),
    /// Closed-form stationary probability of the preferred answer.
    ClosedForm(ClosedFormArgs),
    /// Parameter sweep over binary questions.
    Sweep(SweepArgs),
    /// Compare the solver with best-response iteration.
    OracleVerify(OracleArgs),
    /// Run the sampled tabular trainer.
    Train(TrainArgs),
    /// Monte Carlo estimate of a group preference at the reference policy.
    Estimate(EstimateArgs),
    /// Reward-pooling and pairwise-game aggregates next to the stationary policy.
    Baselines(BaselineArgs),
}

#[derive(Debug, Args)]
struct SolverFlags {
    /// Tolerance on the step and the stationarity residual.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Damping of the fixed-point map, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    damping: f64,
    /// Iteration cap.
    #[arg(long = "max-iter", default_value_t = 100_000)]
    max_iter: usize,
    /// Evaluate group preferences with this many Monte Carlo samples.
    #[arg(long = "mc-samples")]
    mc_samples: Option<u64>,
    /// Seed for Monte Carlo preferences.
    #[arg(long = "mc-seed", default_value_t = 0)]
    mc_seed: u64,
}

impl SolverFlags {
    fn config(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            damping: self.damping,
            max_iterations: self.max_iter,
            tolerance: self.tol,
            preference_method: match self.mc_samples {
                Some(samples) => PreferenceMethod::MonteCarlo {
                    samples,
                    seed: self.mc_seed,
                },
                None => PreferenceMethod::Exact,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct SolveArgs {
    /// Scenario file.
    scenario: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// List every distinct stationary point found from several starts.
    #[arg(long)]
    multistart: bool,
    /// Write the CSV here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Case {
    G2,
    Limit,
    G2DirectKl,
    LimitDirectKl,
}

#[derive(Debug, Args)]
struct ClosedFormArgs {
    /// Reference probability of answer a.
    #[arg(long = "pi-ref", allow_negative_numbers = true)]
    pi_ref: f64,
    /// Penalty strength.
    #[arg(long, allow_negative_numbers = true)]
    beta: f64,
    /// Confidence margin P(a ≻ b) − P(b ≻ a); negative values swap the answers.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    gamma: f64,
    /// Which closed form.
    #[arg(long = "case", value_enum)]
    case: Case,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Sweep spec file.
    spec: PathBuf,
    /// Output CSV.
    #[arg(short, long)]
    output: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleKind {
    Ascent,
    Grid,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Scenario file; each of its contexts is one case.
    scenario: PathBuf,
    /// Additional random cases.
    #[arg(long, default_value_t = 0)]
    cases: usize,
    /// Seed of the first random case.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight of each best response, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    relaxation: f64,
    /// Best-response method.
    #[arg(long, value_enum, default_value_t = OracleKind::Ascent)]
    method: OracleKind,
    /// Lattice resolution of the grid method.
    #[arg(long, default_value_t = 200)]
    resolution: usize,
    /// Tolerance of the best-response iteration.
    #[arg(long = "oracle-tol", default_value_t = 1e-9)]
    oracle_tol: f64,
    #[command(flatten)]
    solver: SolverFlags,
    /// Write the report here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Scenario file.
    scenario: PathBuf,
    /// Trainer configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Write the trace here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Scenario file.
    scenario: PathBuf,
    /// Output id.
    #[arg(long = "output")]
    output_id: String,
    /// Context id.
    #[arg(long)]
    context: String,
    /// Number of sampled companion sets.
    #[arg(long)]
    samples: u64,
    /// RNG seed.
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// Scenario file.
    scenario: PathBuf,
    /// Penalty strength shared by all three methods.
    #[arg(long, allow_negative_numbers = true)]
    beta: f64,
    #[command(flatten)]
    solver: SolverFlags,
    /// Write the CSV here instead of standard output.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

/// Parses `argv` (program name first), runs the command against the
/// process's standard streams and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`run_command`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
                return 1;
            }
            let _ = write!(out, "{text}");
            return 0;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Solve(a) => solve(a, out),
        Command::ClosedForm(a) => closed_form(a, out),
        Command::Sweep(a) => sweep(a),
        Command::OracleVerify(a) => oracle_verify(a, out, err),
        Command::Train(a) => train_cmd(a, out, err),
        Command::Estimate(a) => estimate(a, out),
        Command::Baselines(a) => baselines(a, out),
    }
}

fn emit(t: &Table, preamble: &[String], dest: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    match dest {
        Some(p) => t
            .write_path(preamble, p)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => t
            .write(preamble, out)
            .map_err(|e| CliError::Usage(format!("cannot write output: {e}"))),
    }
}

fn solve(a: SolveArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let s = read_scenario(&a.scenario)?;
    let cfg = a.solver.config()?;
    let hyper = s.hyper();
    let mut failures = Vec::new();
    let t = if a.multistart {
        let mut t = Table::new(&[
            "context_id", "stationary", "objective", "output_id", "pi_ref", "pi", "kkt_residual",
        ]);
        for c in s.contexts() {
            let found = solve_multistart(c, hyper, &cfg)?;
            if found.is_empty() {
                failures.push(c.id().to_string());
            }
            for (k, st) in found.iter().enumerate() {
                for (o, p) in c.outputs().iter().zip(&st.result.pi) {
                    t.push(vec![
                        c.id().to_string(),
                        k.to_string(),
                        num(st.objective),
                        o.id.clone(),
                        num(o.ref_prob),
                        num(*p),
                        num(st.result.kkt_residual),
                    ]);
                }
            }
        }
        t
    } else {
        let mut t = Table::new(&[
            "context_id", "output_id", "pi_ref", "pi", "converged", "iterations", "kkt_residual",
        ]);
        for c in s.contexts() {
            let r = solve_stationary(c, hyper, &cfg)?;
            if !r.converged {
                failures.push(c.id().to_string());
            }
            for (o, p) in c.outputs().iter().zip(&r.pi) {
                t.push(vec![
                    c.id().to_string(),
                    o.id.clone(),
                    num(o.ref_prob),
                    num(*p),
                    r.converged.to_string(),
                    r.iterations.to_string(),
                    num(r.kkt_residual),
                ]);
            }
        }
        t
    };
    emit(&t, &[], a.output.as_deref(), out)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "solver did not converge for context(s) {}",
            failures.join(", ")
        )))
    }
}

fn closed_form(a: ClosedFormArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if !(-1.0..=1.0).contains(&a.gamma) {
        return Err(CliError::Invalid(format!("gamma {} outside [-1, 1]", a.gamma)));
    }
    if !(0.0..=1.0).contains(&a.pi_ref) {
        return Err(CliError::Invalid(format!("pi_ref {} outside [0, 1]", a.pi_ref)));
    }
    // label the preferred answer as a
    let flip = a.gamma < 0.0;
    let p = if flip { 1.0 - a.pi_ref } else { a.pi_ref };
    let q = BinaryQuestion {
        pi_ref_a: p,
        gamma: a.gamma.abs(),
        beta: a.beta,
    };
    let back = |x: f64| if flip { 1.0 - x } else { x };
    let io = |e: std::io::Error| CliError::Usage(format!("cannot write output: {e}"));
    let scalar = match a.case {
        Case::G2 => Some(binary_g2(&q)?),
        Case::G2DirectKl => Some(binary_g2_direct_kl(&q)?),
        Case::Limit if q.gamma == 0.0 => {
            binary_limit(p, a.beta)?;
            Some(p)
        }
        Case::Limit => Some(binary_limit(p, a.beta)?),
        Case::LimitDirectKl => None,
    };
    if let Some(x) = scalar {
        return writeln!(out, "{}", back(x)).map_err(io);
    }
    let mut t = Table::new(&["kind", "pi_a", "objective", "selected"]);
    if q.gamma == 0.0 {
        binary_limit_direct_kl(p, a.beta)?;
        t.push(vec!["tie".into(), num(back(p)), num(0.0), "true".into()]);
    } else {
        let c = binary_limit_direct_kl(p, a.beta)?;
        for (i, cand) in c.candidates.iter().enumerate() {
            t.push(vec![
                cand.kind.as_str().to_string(),
                num(back(cand.pi_a)),
                num(cand.objective),
                (i == c.selected).to_string(),
            ]);
        }
    }
    emit(&t, &[], None, out)
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let spec = read_sweep_spec(&a.spec)?;
    let cfg = a.solver.config()?;
    let rows = run_sweep(&spec, &cfg)?;
    emit(&sweep_table(&rows, &spec.variant), &[], Some(&a.output), &mut std::io::sink())?;
    let stuck = rows.iter().filter(|r| !r.value.converged).count();
    if stuck > 0 {
        return Err(CliError::NotConverged(format!(
            "solver did not converge at {stuck} sweep point(s)"
        )));
    }
    Ok(())
}

fn oracle_verify(a: OracleArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let s = read_scenario(&a.scenario)?;
    let solver = a.solver.config()?;
    let oracle = OracleConfig {
        method: match a.method {
            OracleKind::Ascent => OracleConfig::default().method,
            OracleKind::Grid => OracleMethod::Grid {
                resolution: a.resolution,
            },
        },
        tolerance: a.oracle_tol,
        relaxation: a.relaxation,
        ..OracleConfig::default()
    };
    let mut reports = scenario_cases(&s, &solver, &oracle)?;
    reports.extend(random_cases(a.cases, a.seed, &solver, &oracle)?);
    emit(&report_table(&reports), &[], a.output.as_deref(), out)?;
    let sum = Summary::of(&reports);
    let _ = writeln!(
        err,
        "cases {}, non-converged {}, failed {}, max discrepancy {:e}, max solver residual {:e}",
        sum.cases, sum.non_converged, sum.failed, sum.max_discrepancy, sum.max_kkt
    );
    if sum.passed() {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "verification failed: {} disagreeing and {} non-converged of {} cases",
            sum.failed, sum.non_converged, sum.cases
        )))
    }
}

/// Per-context solver fixed points, when every context has one.
fn solver_target(s: &Scenario) -> Option<PolicyTable> {
    let cfg = SolverConfig::default();
    let rows = s
        .contexts()
        .iter()
        .map(|c| solve_stationary(c, s.hyper(), &cfg).ok().filter(|r| r.converged).map(|r| r.pi))
        .collect::<Option<Vec<_>>>()?;
    Some(PolicyTable::from_rows(rows))
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let s = read_scenario(&a.scenario)?;
    let cfg = read_trainer_config(&a.config)?;
    if s.hyper().group_size == GroupSize::Limit {
        return Err(CliError::Invalid("training needs a finite group size".into()));
    }
    let target = solver_target(&s);
    let trace = train(&s, &cfg, target.as_ref())?;
    let h = s.hyper();
    let meta = format!(
        "# seed={} steps={} learning_rate={} epsilon={} groups_per_step={} inner_updates_per_old_policy={} beta={} group_size={} penalty={} normalisation={}",
        cfg.seed,
        cfg.steps,
        cfg.learning_rate,
        cfg.epsilon,
        cfg.groups_per_step,
        cfg.inner_updates_per_old_policy,
        h.beta,
        h.group_size,
        h.penalty.as_str(),
        h.normalisation.as_str()
    );
    let mut t = Table::new(&["step", "context_id", "output_id", "probability"]);
    for cp in &trace.checkpoints {
        for (c, row) in s.contexts().iter().zip(cp.policy.rows()) {
            for (o, p) in c.outputs().iter().zip(row) {
                t.push(vec![cp.step.to_string(), c.id().to_string(), o.id.clone(), num(*p)]);
            }
        }
    }
    emit(&t, &[meta], a.output.as_deref(), out)?;
    let last = trace.last();
    let _ = writeln!(
        err,
        "step {}: objective estimate {:e}, clipped fraction {:e}, distance to solver fixed point {}",
        last.step,
        last.objective_estimate,
        last.clipped_fraction,
        last.target_distance.map_or("n/a".to_string(), |d| format!("{d:e}"))
    );
    Ok(())
}

fn estimate(a: EstimateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let s = read_scenario(&a.scenario)?;
    let ctx = s
        .context(&a.context)
        .ok_or_else(|| CliError::Invalid(format!("no context '{}'", a.context)))?;
    let o = ctx
        .index_of(&a.output_id)
        .ok_or_else(|| CliError::Invalid(format!("context '{}' has no output '{}'", a.context, a.output_id)))?;
    let GroupSize::Finite(g) = s.hyper().group_size else {
        return Err(CliError::Invalid("sampling needs a finite group size".into()));
    };
    let pi = ctx.reference();
    let query = |method| GroupPreferenceQuery {
        output: o,
        policy: &pi,
        group_size: g,
        method,
    };
    let mode = s.hyper().normalisation;
    let mc = expected_group_preference(
        &query(PreferenceMethod::MonteCarlo {
            samples: a.samples,
            seed: a.seed,
        }),
        ctx,
        mode,
    )?;
    let mut t = Table::new(&["context_id", "output_id", "group_size", "method", "value", "standard_error"]);
    let row = |method: &str, v: f64, se: f64| {
        vec![
            a.context.clone(),
            a.output_id.clone(),
            g.to_string(),
            method.to_string(),
            num(v),
            num(se),
        ]
    };
    t.push(row("monte_carlo", mc.value, mc.standard_error));
    match expected_group_preference(&query(PreferenceMethod::Exact), ctx, mode) {
        Ok(e) => t.push(row("exact", e.value, e.standard_error)),
        Err(prefagg_core::Error::Enumeration { .. }) => {}
        Err(e) => return Err(e.into()),
    }
    emit(&t, &[], None, out)
}

fn baselines(a: BaselineArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let s = read_scenario(&a.scenario)?;
    let cfg = a.solver.config()?;
    let hyper = s.hyper().with_beta(a.beta);
    hyper.validate()?;
    let mut t = Table::new(&["context_id", "output_id", "pi_ref", "grpo", "rlhf", "nlhf"]);
    let mut failures = Vec::new();
    for c in s.contexts() {
        let grpo = solve_stationary(c, &hyper, &cfg)?;
        let rlhf = rlhf_aggregate(c, a.beta)?;
        let nlhf = nlhf_aggregate(c, a.beta, &cfg)?;
        if !(grpo.converged && nlhf.converged) {
            failures.push(c.id().to_string());
        }
        for (k, o) in c.outputs().iter().enumerate() {
            t.push(vec![
                c.id().to_string(),
                o.id.clone(),
                num(o.ref_prob),
                num(grpo.pi[k]),
                num(rlhf[k]),
                num(nlhf.pi[k]),
            ]);
        }
    }
    emit(&t, &[], a.output.as_deref(), out)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "iteration did not converge for context(s) {}",
            failures.join(", ")
        )))
    }
}
