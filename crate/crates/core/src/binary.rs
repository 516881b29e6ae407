//! Closed forms for questions with two answers `a` and `b`.
//!
//! Answer `a` is always the (weakly) preferred one, so the confidence margin
//! `γ = P(a ≻ b) − P(b ≻ a)` is nonnegative.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math on toolchains where core lacks it
use num_traits::Float;

use crate::roots::bisect;
use crate::{Error, Result};

/// A two-answer question: reference mass of `a`, margin `γ` and strength `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryQuestion {
    /// `π_ref(a)`.
    pub pi_ref_a: f64,
    /// `γ = P(a ≻ b) − P(b ≻ a)`, in `[0, 1]` by the labelling convention.
    pub gamma: f64,
    /// Penalty strength `β > 0`.
    pub beta: f64,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!("{name} {p} outside [0, 1]")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Argument(format!("beta {beta} must be positive")));
    }
    Ok(())
}

impl BinaryQuestion {
    fn validate(&self) -> Result<()> {
        check_prob("pi_ref_a", self.pi_ref_a)?;
        check_beta(self.beta)?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Argument(format!(
                "gamma {} outside [0, 1]; label the preferred answer as a",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Stationary `π(a)` for groups of two with the GRPO penalty: the
/// nonnegative root of `π² − (1 − β/γ)π − (β/γ)π_ref(a) = 0`.
pub fn binary_g2(q: &BinaryQuestion) -> Result<f64> {
    q.validate()?;
    if q.gamma == 0.0 {
        return Ok(q.pi_ref_a);
    }
    let r = q.beta / q.gamma;
    let b = 1.0 - r;
    let root = (b * b + 4.0 * r * q.pi_ref_a).sqrt();
    // avoid cancellation when b < 0
    let pi = if b >= 0.0 {
        (b + root) / 2.0
    } else if root == -b {
        0.0
    } else {
        2.0 * r * q.pi_ref_a / (root - b)
    };
    Ok(pi.clamp(0.0, 1.0))
}

/// Stationary `π(a)` in the large-group limit with the GRPO penalty and
/// deterministic rewards `r(a) > r(b)`. `β = 0` gives 1.
pub fn binary_limit(pi_ref_a: f64, beta: f64) -> Result<f64> {
    check_prob("pi_ref_a", pi_ref_a)?;
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Argument(format!("beta {beta} must be nonnegative")));
    }
    let b2 = beta * beta;
    let p = pi_ref_a;
    let pi = (2.0 * b2 * p + 1.0 + (1.0 + 4.0 * b2 * p * (1.0 - p)).sqrt()) / (2.0 * (1.0 + b2));
    Ok(pi.clamp(0.0, 1.0))
}

/// Stationary `π(a)` for groups of two with a direct KL penalty:
/// `π_ref(a) / (π_ref(a) + e^{−γ/β}(1 − π_ref(a)))`.
pub fn binary_g2_direct_kl(q: &BinaryQuestion) -> Result<f64> {
    q.validate()?;
    if q.pi_ref_a == 0.0 {
        return Ok(0.0);
    }
    let p = q.pi_ref_a;
    Ok(p / (p + (-q.gamma / q.beta).exp() * (1.0 - p)))
}

/// Kind of a stationary candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateKind {
    /// A root of `h` in `(0, 1)`.
    InteriorRoot,
    /// The boundary point `π(a) = 1`.
    Boundary,
}

impl CandidateKind {
    /// Lower-case name.
    pub fn as_str(&self) -> &'static str {
        match self {
            CandidateKind::InteriorRoot => "interior_root",
            CandidateKind::Boundary => "boundary",
        }
    }
}

/// One stationary candidate and its objective value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// `π(a)`.
    pub pi_a: f64,
    /// Objective `J(π | π)` at the candidate.
    pub objective: f64,
    /// Where it came from.
    pub kind: CandidateKind,
}

/// All stationary candidates, with the index of the best one.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryCandidates {
    /// Candidates in increasing `π(a)`.
    pub candidates: Vec<Candidate>,
    /// Index of the objective-maximising candidate (ties go to larger `π(a)`).
    pub selected: usize,
}

impl StationaryCandidates {
    /// The selected candidate.
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.selected]
    }
}

/// Root function for the large-group limit with a direct KL penalty:
/// `h(x) = 1/(β√(x(1−x))) − ln(x/(1−x)) + ln(p/(1−p))`.
///
/// Stationary interior points are the roots of `h`; it tends to `+∞` at both
/// ends of `(0, 1)`.
pub fn direct_kl_root_function(x: f64, pi_ref_a: f64, beta: f64) -> f64 {
    1.0 / (beta * (x * (1.0 - x)).sqrt()) - (x / (1.0 - x)).ln() + (pi_ref_a / (1.0 - pi_ref_a)).ln()
}

/// Minimiser of `h`: `x* = (1 + √(1 − 1/(1+β²)))/2`.
pub fn direct_kl_turning_point(beta: f64) -> f64 {
    (1.0 + (1.0 - 1.0 / (1.0 + beta * beta)).sqrt()) / 2.0
}

/// `KL(Bern(x) ‖ Bern(p))` with `0·ln 0 = 0`.
fn bernoulli_kl(x: f64, p: f64) -> f64 {
    let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
    term(x, p) + term(1.0 - x, 1.0 - p)
}

/// Lower end of the bracket for the small root.
pub const ROOT_BRACKET_LOW: f64 = 1e-15;

/// Stationary candidates in the large-group limit with a direct KL penalty.
///
/// Roots of `h` are found by bisection to full double precision on each
/// monotone branch `(0, x*]` and `[x*, 1)`. The objective at a candidate
/// is `−β·KL(π ‖ π_ref)`, since the reward part vanishes at a self-consistent
/// point. The boundary `π(a) = 1` is always a candidate.
pub fn binary_limit_direct_kl(pi_ref_a: f64, beta: f64) -> Result<StationaryCandidates> {
    check_beta(beta)?;
    if !(pi_ref_a > 0.0 && pi_ref_a < 1.0) {
        return Err(Error::Argument(format!("pi_ref_a {pi_ref_a} must lie in (0, 1)")));
    }
    let h = |x: f64| direct_kl_root_function(x, pi_ref_a, beta);
    let star = direct_kl_turning_point(beta);
    let objective = |x: f64| -beta * bernoulli_kl(x, pi_ref_a);
    let mut candidates = vec![];
    if h(star) <= 0.0 {
        let low = bisect(h, ROOT_BRACKET_LOW, star, 0.0)?;
        let high = bisect(h, star, 1.0 - ROOT_BRACKET_LOW, 0.0)?;
        for x in [low, high] {
            if candidates.iter().all(|c: &Candidate| c.pi_a != x) {
                candidates.push(Candidate {
                    pi_a: x,
                    objective: objective(x),
                    kind: CandidateKind::InteriorRoot,
                });
            }
        }
    }
    candidates.push(Candidate {
        pi_a: 1.0,
        objective: objective(1.0),
        kind: CandidateKind::Boundary,
    });
    let mut selected = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.objective >= candidates[selected].objective {
            selected = i;
        }
    }
    Ok(StationaryCandidates {
        candidates,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(p: f64, gamma: f64, beta: f64) -> BinaryQuestion {
        BinaryQuestion {
            pi_ref_a: p,
            gamma,
            beta,
        }
    }

    #[test]
    fn pair_examples() {
        assert!((binary_g2(&q(0.25, 0.6, 0.6)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(binary_g2(&q(0.37, 0.0, 3.0)).unwrap(), 0.37);
        let v = binary_g2(&q(0.2, 1.0, 0.5)).unwrap();
        assert!((v - (0.5 + 0.65f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((v - 0.65312).abs() < 1e-5);
        assert!(binary_g2(&q(0.2, -0.5, 1.0)).is_err());
    }

    #[test]
    fn limit_examples() {
        assert_eq!(binary_limit(0.3, 0.0).unwrap(), 1.0);
        assert!((binary_limit(0.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let v = binary_limit(0.5, 1.0).unwrap();
        assert!((v - (2.0 + 2f64.sqrt()) / 4.0).abs() < 1e-15 && (v - 0.85355).abs() < 1e-5);
    }

    #[test]
    fn direct_kl_pair_examples() {
        assert_eq!(binary_g2_direct_kl(&q(0.4, 0.0, 0.3)).unwrap(), 0.4);
        let e = 1f64.exp();
        let v = binary_g2_direct_kl(&q(0.5, 1.0, 0.5)).unwrap();
        assert!((v - e / (e + 1.0 / e)).abs() < 1e-15 && (v - 0.88080).abs() < 1e-5);
        assert_eq!(binary_g2_direct_kl(&q(0.0, 1.0, 0.01)).unwrap(), 0.0);
    }

    #[test]
    fn small_beta_has_only_the_boundary() {
        let c = binary_limit_direct_kl(0.5, 0.1).unwrap();
        assert_eq!(c.candidates.len(), 1);
        assert_eq!(c.best().kind, CandidateKind::Boundary);
        assert_eq!(c.best().pi_a, 1.0);
    }

    #[test]
    fn large_beta_has_two_roots_around_the_turning_point() {
        let star = direct_kl_turning_point(10.0);
        assert!((star - 0.99752).abs() < 1e-5);
        let c = binary_limit_direct_kl(0.5, 10.0).unwrap();
        let roots: Vec<f64> = c
            .candidates
            .iter()
            .filter(|c| c.kind == CandidateKind::InteriorRoot)
            .map(|c| c.pi_a)
            .collect();
        assert_eq!(roots.len(), 2);
        assert!(roots[0] < star && star < roots[1]);
        for r in roots {
            assert!(direct_kl_root_function(r, 0.5, 10.0).abs() < 1e-6);
        }
        assert!(c.candidates.iter().all(|x| x.objective <= c.best().objective));
        assert_eq!(c.best().kind, CandidateKind::InteriorRoot);
    }

    #[test]
    fn root_count_follows_sign_at_turning_point() {
        for &beta in &[0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0] {
            for &p in &[0.05, 0.3, 0.5, 0.8, 0.95] {
                let star = direct_kl_turning_point(beta);
                let roots = binary_limit_direct_kl(p, beta)
                    .unwrap()
                    .candidates
                    .iter()
                    .filter(|c| c.kind == CandidateKind::InteriorRoot)
                    .count();
                let hs = direct_kl_root_function(star, p, beta);
                assert_eq!(roots == 0, hs > 0.0, "beta={beta} p={p}");
                // x* really is the minimiser
                for d in [1e-4, 1e-3] {
                    assert!(direct_kl_root_function(star - d, p, beta) >= hs);
                    assert!(direct_kl_root_function((star + d).min(1.0 - 1e-12), p, beta) >= hs);
                }
            }
        }
    }

    #[test]
    fn pair_satisfies_quadratic_and_bounds() {
        for i in 0..=20 {
            let p = i as f64 / 20.0;
            for &beta in &[0.01, 0.1, 0.5, 1.0, 2.0, 10.0] {
                for &gamma in &[0.2, 0.7, 1.0] {
                    let pi = binary_g2(&q(p, gamma, beta)).unwrap();
                    let r = beta / gamma;
                    assert!((pi * pi - (1.0 - r) * pi - r * p).abs() < 1e-12);
                    assert!(pi + 1e-15 >= (1.0 - r).max(p));
                }
                let l = binary_limit(p, beta).unwrap();
                assert!(l + 1e-15 >= (1.0 / (1.0 + beta * beta)).max(p));
                assert!(l + 1e-15 >= binary_g2(&q(p, 1.0, beta)).unwrap());
            }
        }
        assert!((binary_g2(&q(0.0, 1.0, 0.3)).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(binary_g2(&q(0.0, 1.0, 3.0)).unwrap(), 0.0);
    }

    #[test]
    fn extreme_beta_limits() {
        assert!(binary_g2(&q(0.3, 1.0, 1e-9)).unwrap() > 1.0 - 1e-8);
        assert!((binary_g2(&q(0.3, 1.0, 1e6)).unwrap() - 0.3).abs() < 1e-5);
        assert!((binary_limit(0.3, 1e6).unwrap() - 0.3).abs() < 1e-5);
    }
}
