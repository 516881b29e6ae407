//! Binary-question sweeps: stationary `π(a)` along one parameter axis.
//!
//! Closed forms are used where they exist (groups of two and the
//! shift-and-scale large-group limit). Every other variant is solved by the
//! fixed-point iteration on a context whose answers carry Bernoulli rewards
//! with means `1` and `1 − γ`, which realises the margin `γ`.

use prefagg_core::binary::{
    binary_g2, binary_g2_direct_kl, binary_limit, binary_limit_direct_kl, BinaryQuestion,
};
use prefagg_core::solver::{solve_stationary, SolverConfig};
use prefagg_core::{ContextSpec, GroupSize, Normalisation, OutputSpec, Penalty, RewardSpec};
use rayon::prelude::*;

use crate::document::{Axis, SweepSpec, VariantDoc};
use crate::table::{num, Table};

/// How a sweep value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Closed-form expression.
    ClosedForm,
    /// Fixed-point solver.
    Solver,
}

impl Method {
    /// Name used in CSV output.
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::ClosedForm => "closed_form",
            Method::Solver => "solver",
        }
    }
}

/// Stationary `π(a)` for one parameter combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointValue {
    /// Stationary mass of answer `a`.
    pub pi_a: f64,
    /// How it was computed.
    pub method: Method,
    /// False only when the solver hit its iteration cap.
    pub converged: bool,
}

/// Stationary `π(a)` for reference mass `pi_ref_a`, strength `beta` and
/// margin `gamma ∈ [−1, 1]`. A negative margin is handled by swapping the
/// labels of the two answers.
pub fn stationary_pi_a(
    pi_ref_a: f64,
    beta: f64,
    gamma: f64,
    variant: &VariantDoc,
    cfg: &SolverConfig,
) -> prefagg_core::Result<PointValue> {
    if gamma < 0.0 {
        let v = stationary_pi_a(1.0 - pi_ref_a, beta, -gamma, variant, cfg)?;
        return Ok(PointValue {
            pi_a: 1.0 - v.pi_a,
            ..v
        });
    }
    let hyper = variant.hyper(beta);
    hyper.validate()?;
    let q = BinaryQuestion {
        pi_ref_a,
        gamma,
        beta,
    };
    let closed = |pi_a: f64| {
        Ok(PointValue {
            pi_a,
            method: Method::ClosedForm,
            converged: true,
        })
    };
    match (hyper.normalisation, hyper.group_size, hyper.penalty) {
        (Normalisation::ShiftScale, GroupSize::Finite(2), Penalty::Kl0) => closed(binary_g2(&q)?),
        (Normalisation::ShiftScale, GroupSize::Finite(2), Penalty::DirectKl) => {
            closed(binary_g2_direct_kl(&q)?)
        }
        (Normalisation::ShiftScale, GroupSize::Limit, _) if gamma == 0.0 => closed(pi_ref_a),
        (Normalisation::ShiftScale, GroupSize::Limit, Penalty::Kl0) => closed(binary_limit(pi_ref_a, beta)?),
        (Normalisation::ShiftScale, GroupSize::Limit, Penalty::DirectKl) => {
            closed(binary_limit_direct_kl(pi_ref_a, beta)?.best().pi_a)
        }
        _ => {
            let ctx = bernoulli_pair(pi_ref_a, gamma)?;
            let r = solve_stationary(&ctx, &hyper, cfg)?;
            Ok(PointValue {
                pi_a: r.pi[0],
                method: Method::Solver,
                converged: r.converged,
            })
        }
    }
}

/// Context `{a, b}` with Bernoulli rewards of means `1` and `1 − γ`.
pub fn bernoulli_pair(pi_ref_a: f64, gamma: f64) -> prefagg_core::Result<ContextSpec> {
    ContextSpec::new(
        "q",
        1.0,
        vec![
            OutputSpec::new("a", pi_ref_a, RewardSpec::Bernoulli(1.0)),
            OutputSpec::new("b", 1.0 - pi_ref_a, RewardSpec::Bernoulli(1.0 - gamma)),
        ],
    )
}

/// One row of sweep output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    /// Curve index in the spec.
    pub curve: usize,
    /// Reference mass of `a`.
    pub pi_ref_a: f64,
    /// Penalty strength.
    pub beta: f64,
    /// Confidence margin.
    pub gamma: f64,
    /// Result at this point.
    pub value: PointValue,
}

/// Evaluates every (curve, grid point) pair in parallel. Rows come back
/// ordered by curve, then by grid index.
pub fn run_sweep(spec: &SweepSpec, cfg: &SolverConfig) -> prefagg_core::Result<Vec<SweepRow>> {
    let points: Vec<(usize, f64, f64, f64)> = spec
        .curves
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            spec.grid.iter().map(move |&x| match spec.axis {
                Axis::PiRefA => (ci, x, c.beta.unwrap_or(f64::NAN), c.gamma),
                Axis::Beta => (ci, c.pi_ref_a.unwrap_or(f64::NAN), x, c.gamma),
            })
        })
        .collect();
    points
        .par_iter()
        .map(|&(curve, pi_ref_a, beta, gamma)| {
            Ok(SweepRow {
                curve,
                pi_ref_a,
                beta,
                gamma,
                value: stationary_pi_a(pi_ref_a, beta, gamma, &spec.variant, cfg)?,
            })
        })
        .collect()
}

/// CSV layout of a sweep.
pub fn sweep_table(rows: &[SweepRow], variant: &VariantDoc) -> Table {
    let mut t = Table::new(&[
        "curve", "pi_ref_a", "beta", "gamma", "variant", "pi_a", "method", "converged",
    ]);
    let label = variant.label();
    for r in rows {
        t.push(vec![
            r.curve.to_string(),
            num(r.pi_ref_a),
            num(r.beta),
            num(r.gamma),
            label.clone(),
            num(r.value.pi_a),
            r.value.method.as_str().to_string(),
            r.value.converged.to_string(),
        ]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variant(penalty: Penalty, group_size: GroupSize) -> VariantDoc {
        VariantDoc::new(penalty, Normalisation::ShiftScale, group_size)
    }

    #[test]
    fn bernoulli_margin_matches_closed_form_for_pairs() {
        // The solver path on the Bernoulli pair must agree with the
        // quadratic root, which is what makes γ meaningful for it.
        let cfg = SolverConfig::default();
        let v = variant(Penalty::Kl0, GroupSize::Finite(2));
        for &(p, b, g) in &[(0.3, 0.5, 0.5), (0.1, 0.2, 0.8), (0.7, 1.0, 0.25)] {
            let closed = stationary_pi_a(p, b, g, &v, &cfg).unwrap();
            let ctx = bernoulli_pair(p, g).unwrap();
            let solved = solve_stationary(&ctx, &v.hyper(b), &cfg).unwrap();
            assert!(solved.converged);
            assert!((closed.pi_a - solved.pi[0]).abs() < 1e-8, "{p} {b} {g}");
        }
    }

    #[test]
    fn negative_margin_swaps_labels() {
        let cfg = SolverConfig::default();
        let v = variant(Penalty::Kl0, GroupSize::Finite(2));
        let up = stationary_pi_a(0.7, 0.5, 1.0, &v, &cfg).unwrap().pi_a;
        let down = stationary_pi_a(0.3, 0.5, -1.0, &v, &cfg).unwrap().pi_a;
        assert!((up - (1.0 - down)).abs() < 1e-15);
    }

    #[test]
    fn solver_path_for_larger_groups() {
        let cfg = SolverConfig::default();
        let v = variant(Penalty::Kl0, GroupSize::Finite(3));
        let r = stationary_pi_a(0.3, 0.5, 1.0, &v, &cfg).unwrap();
        assert_eq!(r.method, Method::Solver);
        assert!(r.converged);
        assert!(r.pi_a > 0.3 && r.pi_a < 1.0);
    }
}
