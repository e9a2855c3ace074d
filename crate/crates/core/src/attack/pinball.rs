use crate::error::{Error, Result};

/// Pinball loss `(q − ℓ)(1[ℓ ≤ q] − α)` of a quantile prediction `q` for an
/// observed score `ℓ` at level `α ∈ (0, 1)`.
pub fn pinball(ell: f64, q: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(pinball_unchecked(ell, q, alpha))
}

pub(crate) fn pinball_unchecked(ell: f64, q: f64, alpha: f64) -> f64 {
    let ind = if ell <= q { 1.0 } else { 0.0 };
    (q - ell) * (ind - alpha)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("quantile level must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn worked_values() {
        assert!((pinball(2.0, 1.0, 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert!((pinball(1.0, 3.0, 0.9).unwrap() - 0.2).abs() < 1e-15);
        for a in [0.01, 0.5, 0.99] {
            assert_eq!(pinball(4.2, 4.2, a).unwrap(), 0.0);
        }
    }

    #[test]
    fn alpha_range() {
        assert!(pinball(0.0, 0.0, 0.0).is_err());
        assert!(pinball(0.0, 0.0, 1.0).is_err());
        assert!(pinball(0.0, 0.0, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_only_at_target(ell in -1e3f64..1e3, q in -1e3f64..1e3, a in 0.001f64..0.999) {
            let l = pinball(ell, q, a).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, q == ell);
        }

        #[test]
        fn convex_in_q(ell in -10f64..10.0, q1 in -10f64..10.0, q2 in -10f64..10.0, lam in 0f64..1.0, a in 0.01f64..0.99) {
            let mid = lam * q1 + (1.0 - lam) * q2;
            let lhs = pinball(ell, mid, a).unwrap();
            let rhs = lam * pinball(ell, q1, a).unwrap() + (1.0 - lam) * pinball(ell, q2, a).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }
    }
}
