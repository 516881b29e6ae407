//! Oracle campaigns: the fixed-point solver against best-response iteration.

use prefagg_core::oracle::{oracle_stationary, random_case, OracleConfig};
use prefagg_core::simplex::sup_norm;
use prefagg_core::solver::{solve_stationary, SolverConfig};
use prefagg_core::{ContextSpec, GroupSize, Hyperparams, Scenario};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::table::{num, Table};

/// Largest tolerated solver/oracle disagreement on a converged case.
pub const MAX_DISCREPANCY: f64 = 1e-4;
/// Largest tolerated solver residual on a converged case.
pub const MAX_KKT: f64 = 1e-6;
/// Largest tolerated fraction of non-converged cases.
pub const MAX_NON_CONVERGED_FRACTION: f64 = 0.1;

/// Comparison of both methods on one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    /// Case label (`<context id>` or `random-<seed>`).
    pub label: String,
    /// Number of outputs.
    pub outputs: usize,
    /// Group size.
    pub group_size: GroupSize,
    /// Penalty strength.
    pub beta: f64,
    /// Whether the fixed-point solver converged.
    pub solver_converged: bool,
    /// Solver residual.
    pub solver_kkt: f64,
    /// Whether best-response iteration converged.
    pub oracle_converged: bool,
    /// Oracle residual.
    pub oracle_kkt: f64,
    /// Period of a best-response cycle, if one was found.
    pub cycle_period: Option<usize>,
    /// Sup-norm distance between the two policies.
    pub discrepancy: f64,
}

impl CaseReport {
    /// Both methods converged.
    pub fn converged(&self) -> bool {
        self.solver_converged && self.oracle_converged
    }

    /// A converged case that violates the agreement or residual bound.
    pub fn failed(&self) -> bool {
        self.converged() && !(self.discrepancy <= MAX_DISCREPANCY && self.solver_kkt <= MAX_KKT)
    }
}

/// Runs both methods on one case.
pub fn verify_case(
    label: String,
    ctx: &ContextSpec,
    hyper: &Hyperparams,
    solver: &SolverConfig,
    oracle: &OracleConfig,
) -> prefagg_core::Result<CaseReport> {
    let s = solve_stationary(ctx, hyper, solver)?;
    let o = oracle_stationary(ctx, hyper, oracle)?;
    Ok(CaseReport {
        label,
        outputs: ctx.len(),
        group_size: hyper.group_size,
        beta: hyper.beta,
        solver_converged: s.converged,
        solver_kkt: s.kkt_residual,
        oracle_converged: o.converged,
        oracle_kkt: o.kkt_residual,
        cycle_period: o.cycle_period,
        discrepancy: sup_norm(&s.pi, &o.pi),
    })
}

/// Every context of a scenario under the scenario's hyperparameters.
pub fn scenario_cases(
    s: &Scenario,
    solver: &SolverConfig,
    oracle: &OracleConfig,
) -> prefagg_core::Result<Vec<CaseReport>> {
    s.contexts()
        .par_iter()
        .map(|c| verify_case(c.id().to_string(), c, s.hyper(), solver, oracle))
        .collect()
}

/// `count` random cases; case `i` is drawn from a generator seeded with
/// `seed + i`, so any single case can be replayed on its own.
pub fn random_cases(
    count: usize,
    seed: u64,
    solver: &SolverConfig,
    oracle: &OracleConfig,
) -> prefagg_core::Result<Vec<CaseReport>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let case_seed = seed.wrapping_add(i);
            let mut rng = ChaCha8Rng::seed_from_u64(case_seed);
            let (ctx, hyper) = random_case(&mut rng)?;
            verify_case(format!("random-{case_seed}"), &ctx, &hyper, solver, oracle)
        })
        .collect()
}

/// Aggregate view of a campaign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    /// Number of cases.
    pub cases: usize,
    /// Cases where either method failed to converge.
    pub non_converged: usize,
    /// Converged cases outside the bounds.
    pub failed: usize,
    /// Largest discrepancy over converged cases.
    pub max_discrepancy: f64,
    /// Largest solver residual over converged cases.
    pub max_kkt: f64,
}

impl Summary {
    /// Summarises a list of reports.
    pub fn of(reports: &[CaseReport]) -> Self {
        let mut s = Summary {
            cases: reports.len(),
            non_converged: 0,
            failed: 0,
            max_discrepancy: 0.0,
            max_kkt: 0.0,
        };
        for r in reports {
            if !r.converged() {
                s.non_converged += 1;
                continue;
            }
            s.failed += usize::from(r.failed());
            s.max_discrepancy = s.max_discrepancy.max(r.discrepancy);
            s.max_kkt = s.max_kkt.max(r.solver_kkt);
        }
        s
    }

    /// No converged case failed and few enough cases did not converge.
    pub fn passed(&self) -> bool {
        self.failed == 0
            && (self.non_converged as f64) <= MAX_NON_CONVERGED_FRACTION * self.cases as f64
    }
}

/// CSV layout of a campaign.
pub fn report_table(reports: &[CaseReport]) -> Table {
    let mut t = Table::new(&[
        "case",
        "outputs",
        "group_size",
        "beta",
        "solver_converged",
        "solver_kkt",
        "oracle_converged",
        "oracle_kkt",
        "cycle_period",
        "discrepancy",
    ]);
    for r in reports {
        t.push(vec![
            r.label.clone(),
            r.outputs.to_string(),
            r.group_size.to_string(),
            num(r.beta),
            r.solver_converged.to_string(),
            num(r.solver_kkt),
            r.oracle_converged.to_string(),
            num(r.oracle_kkt),
            r.cycle_period.map(|p| p.to_string()).unwrap_or_default(),
            num(r.discrepancy),
        ]);
    }
    t
}
