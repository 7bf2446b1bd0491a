use crate::error::{ensure, Result};

pub const MU: f64 = 255.0;

/// Logarithmic companding applied only outside `[-1, 1]`.
///
/// `u(x) = x` for `|x| <= 1`, otherwise `sgn(x) ln(1 + μ|x|) / ln(1 + μ)`.
/// Both branches give exactly 1 at `x = 1`.
pub fn mu_law_compand(x: f64) -> Result<f64> {
    ensure!(!x.is_nan(), Numeric, "cannot compand NaN");
    if x.abs() <= 1.0 {
        return Ok(x);
    }
    Ok(x.signum() * (MU * x.abs()).ln_1p() / MU.ln_1p())
}

/// Inverse of [`mu_law_compand`].
pub fn mu_law_expand(y: f64) -> f64 {
    if y.abs() <= 1.0 {
        return y;
    }
    y.signum() * ((y.abs() * MU.ln_1p()).exp_m1() / MU)
}

pub fn compand_in_place(xs: &mut [f32]) -> Result<()> {
    for x in xs {
        *x = mu_law_compand(*x as f64)? as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_branch() {
        assert_eq!(mu_law_compand(0.0).unwrap(), 0.0);
        assert_eq!(mu_law_compand(0.5).unwrap(), 0.5);
        assert_eq!(mu_law_compand(1.0).unwrap(), 1.0);
    }

    #[test]
    fn compressed_branch_at_two() {
        // ln(511)/ln(256)
        let want = 6.236369590203704 / 5.545177444479562;
        assert!((mu_law_compand(2.0).unwrap() - want).abs() < 1e-12);
        assert!((mu_law_compand(2.0).unwrap() - 1.12465).abs() < 1e-5);
    }

    #[test]
    fn continuous_at_one() {
        assert_eq!(MU.ln_1p() / MU.ln_1p(), 1.0);
        let just_above = mu_law_compand(1.0 + 1e-12).unwrap();
        assert!((just_above - 1.0).abs() < 1e-9);
    }

    #[test]
    fn nan_is_rejected() {
        assert!(mu_law_compand(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn odd(x in -1e4f64..1e4) {
            prop_assert_eq!(mu_law_compand(-x).unwrap(), -mu_law_compand(x).unwrap());
        }

        #[test]
        fn monotone(a in -1e3f64..1e3, d in 1e-6f64..10.0) {
            prop_assert!(mu_law_compand(a + d).unwrap() > mu_law_compand(a).unwrap());
        }

        #[test]
        fn expand_inverts(x in -1e3f64..1e3) {
            let y = mu_law_compand(x).unwrap();
            prop_assert!((mu_law_expand(y) - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}
