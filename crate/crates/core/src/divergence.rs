//! Reference-policy divergence penalties and their gradients with respect to
//! raw probabilities.
//!
//! `kl0(π, π_ref; π_old) = E_{π_old}[ρ − ln ρ − 1]` with `ρ = π_ref / π` is
//! the expectation of the per-sample GRPO penalty; at `π_old = π` it equals
//! `KL(π ‖ π_ref)`.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // float math on toolchains where core lacks it
use num_traits::Float;

use crate::{Error, Result};

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "distribution lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn support(index: usize, detail: &'static str) -> Error {
    Error::Support { index, detail }
}

/// `E_{x∼π_old}[π_ref/π − ln(π_ref/π) − 1]`.
pub fn kl0(pi: &[f64], pi_ref: &[f64], pi_old: &[f64]) -> Result<f64> {
    check_lengths(pi, pi_ref)?;
    check_lengths(pi, pi_old)?;
    let mut total = 0.0;
    for i in 0..pi.len() {
        if pi[i] > 0.0 && pi_ref[i] == 0.0 {
            return Err(support(i, "policy mass outside the reference support"));
        }
        if pi_old[i] == 0.0 {
            continue;
        }
        if pi[i] == 0.0 {
            return Err(support(i, "old-policy mass where the policy is zero"));
        }
        let rho = pi_ref[i] / pi[i];
        total += pi_old[i] * (rho - rho.ln() - 1.0);
    }
    Ok(total.max(0.0))
}

/// `KL(π ‖ π_ref)`.
pub fn kl(pi: &[f64], pi_ref: &[f64]) -> Result<f64> {
    check_lengths(pi, pi_ref)?;
    let mut total = 0.0;
    for i in 0..pi.len() {
        if pi[i] == 0.0 {
            continue;
        }
        if pi_ref[i] == 0.0 {
            return Err(support(i, "policy mass outside the reference support"));
        }
        total += pi[i] * (pi[i] / pi_ref[i]).ln();
    }
    Ok(total.max(0.0))
}

/// `KL(π_ref ‖ π)`. Infinite when `π` drops an output the reference keeps.
pub fn reverse_kl(pi: &[f64], pi_ref: &[f64]) -> Result<f64> {
    check_lengths(pi, pi_ref)?;
    let mut total = 0.0;
    for i in 0..pi.len() {
        if pi_ref[i] == 0.0 {
            continue;
        }
        if pi[i] == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += pi_ref[i] * (pi_ref[i] / pi[i]).ln();
    }
    Ok(total.max(0.0))
}

/// `∂ kl0 / ∂π = −π_old·π_ref/π² + π_old/π`, zero where `π_old = 0`.
pub fn kl0_grad(pi: &[f64], pi_ref: &[f64], pi_old: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pi, pi_ref)?;
    check_lengths(pi, pi_old)?;
    (0..pi.len())
        .map(|i| {
            if pi[i] > 0.0 && pi_ref[i] == 0.0 {
                return Err(support(i, "policy mass outside the reference support"));
            }
            if pi_old[i] == 0.0 {
                return Ok(0.0);
            }
            if pi[i] == 0.0 {
                return Err(support(i, "gradient undefined at zero probability"));
            }
            Ok(pi_old[i] / pi[i] * (1.0 - pi_ref[i] / pi[i]))
        })
        .collect()
}

/// `∂ KL(π ‖ π_ref) / ∂π = ln(π/π_ref) + 1`.
pub fn kl_grad(pi: &[f64], pi_ref: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pi, pi_ref)?;
    (0..pi.len())
        .map(|i| {
            if pi[i] == 0.0 || pi_ref[i] == 0.0 {
                return Err(support(i, "gradient undefined at zero probability"));
            }
            Ok((pi[i] / pi_ref[i]).ln() + 1.0)
        })
        .collect()
}

/// `∂ KL(π_ref ‖ π) / ∂π = −π_ref/π`.
pub fn reverse_kl_grad(pi: &[f64], pi_ref: &[f64]) -> Result<Vec<f64>> {
    check_lengths(pi, pi_ref)?;
    (0..pi.len())
        .map(|i| {
            if pi_ref[i] == 0.0 {
                Ok(0.0)
            } else if pi[i] == 0.0 {
                Err(support(i, "gradient undefined at zero probability"))
            } else {
                Ok(-pi_ref[i] / pi[i])
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn kl0_examples() {
        let r = [0.8, 0.2];
        assert_eq!(kl0(&r, &r, &[0.3, 0.7]).unwrap(), 0.0);
        let want = 0.5 * (0.5f64 / 0.8).ln() + 0.5 * (0.5f64 / 0.2).ln();
        assert!(close(kl0(&[0.5, 0.5], &r, &[0.5, 0.5]).unwrap(), want, 1e-15));
        assert!(close(want, 0.22314, 1e-5));
        let v = kl0(&[0.5, 0.5], &r, &[0.9, 0.1]).unwrap();
        let want = 0.9 * (1.6 - 1.6f64.ln() - 1.0) + 0.1 * (0.4 - 0.4f64.ln() - 1.0);
        assert!(close(v, want, 1e-15) && close(v, 0.14863, 1e-5));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(close(kl(&[0.5, 0.5], &[0.8, 0.2]).unwrap(), 0.22314, 1e-5));
        assert!(close(kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 2f64.ln(), 1e-15));
        assert!(kl(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn reverse_kl_examples() {
        assert_eq!(reverse_kl(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let want = 0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln();
        let v = reverse_kl(&[0.5, 0.5], &[0.8, 0.2]).unwrap();
        assert!(close(v, want, 1e-15) && close(v, 0.19274, 1e-5));
        assert!(close(reverse_kl(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), (1.0f64 / 0.9).ln(), 1e-15));
        assert!(close(reverse_kl(&[0.9, 0.1], &[1.0, 0.0]).unwrap(), 0.10536, 1e-5));
        assert_eq!(reverse_kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), f64::INFINITY);
    }

    #[test]
    fn support_violations() {
        assert!(matches!(kl0(&[0.5, 0.5], &[1.0, 0.0], &[0.5, 0.5]), Err(Error::Support { index: 1, .. })));
        assert!(matches!(kl0(&[1.0, 0.0], &[0.5, 0.5], &[0.5, 0.5]), Err(Error::Support { index: 1, .. })));
        assert!(kl0_grad(&[1.0, 0.0], &[0.5, 0.5], &[0.5, 0.5]).is_err());
        assert!(kl_grad(&[1.0, 0.0], &[0.5, 0.5]).is_err());
        assert!(kl(&[0.5], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let r = [0.3, 0.7];
        assert_eq!(kl0_grad(&r, &r, &r).unwrap(), vec![0.0, 0.0]);
        let g = kl0_grad(&[0.5, 0.5], &[0.8, 0.2], &[0.5, 0.5]).unwrap();
        assert!(close(g[0], -0.6, 1e-15) && close(g[1], 0.6, 1e-15));
        assert_eq!(kl_grad(&r, &r).unwrap(), vec![1.0, 1.0]);
        let g = kl_grad(&[0.5, 0.5], &[0.8, 0.2]).unwrap();
        assert!(close(g[0], 1.0 - 1.6f64.ln(), 1e-15) && close(g[1], 1.0 - 0.4f64.ln(), 1e-15));
        assert!(close(g[0], 0.53000, 1e-5) && close(g[1], 1.91629, 1e-5));
    }

    fn interior(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.05f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (2usize..6).prop_flat_map(|n| (interior(n), interior(n), interior(n)))
    }

    /// Central difference of `f` along the simplex tangent `e_i − e_j`.
    fn tangent<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize, j: usize) -> f64 {
        let h = 1e-6;
        let (mut a, mut b) = (x.to_vec(), x.to_vec());
        a[i] += h;
        a[j] -= h;
        b[i] -= h;
        b[j] += h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn divergences_are_nonnegative((p, r, o) in triple()) {
            prop_assert!(kl0(&p, &r, &o).unwrap() >= 0.0);
            prop_assert!(kl(&p, &r).unwrap() >= 0.0);
            prop_assert!(reverse_kl(&p, &r).unwrap() >= 0.0);
        }

        #[test]
        fn kl0_at_current_policy_is_kl((p, r, _o) in triple()) {
            prop_assert!((kl0(&p, &r, &p).unwrap() - kl(&p, &r).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn kl0_gradient_is_reverse_gradient_plus_one((p, r, _o) in triple()) {
            let a = kl0_grad(&p, &r, &p).unwrap();
            let b = reverse_kl_grad(&p, &r).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - (y + 1.0)).abs() < 1e-12);
            }
        }

        #[test]
        fn gradients_match_finite_differences((p, r, o) in triple()) {
            let g0 = kl0_grad(&p, &r, &o).unwrap();
            let g1 = kl_grad(&p, &r).unwrap();
            let g2 = reverse_kl_grad(&p, &r).unwrap();
            for i in 0..p.len() {
                let j = (i + 1) % p.len();
                let fd0 = tangent(|x| kl0(x, &r, &o).unwrap(), &p, i, j);
                let fd1 = tangent(|x| kl(x, &r).unwrap(), &p, i, j);
                let fd2 = tangent(|x| reverse_kl(x, &r).unwrap(), &p, i, j);
                for (fd, g) in [(fd0, &g0), (fd1, &g1), (fd2, &g2)] {
                    let want = g[i] - g[j];
                    prop_assert!((fd - want).abs() <= 1e-6 * want.abs().max(1.0), "{fd} vs {want}");
                }
            }
        }
    }
}
