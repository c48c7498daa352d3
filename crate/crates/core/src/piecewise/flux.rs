//! Flux matching across a face: `γ ∂u_down/∂ν = σ_up ∂u_up/∂ν`.

use thiserror::Error;

use crate::scalar::{to_f64, Real, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FluxError {
    #[error("tangential face has no flux constraint")]
    Tangential,
    #[error("normal derivatives have opposite signs (product {product:e})")]
    OppositeSigns { product: f64 },
    #[error("upstream conductivity is not positive")]
    NonPositive,
}

/// `γ = σ_up · dn_up / dn_down`, where both normal derivatives use the same
/// normal. Exact for exact scalars.
pub fn flux_match_value<S: Scalar>(sigma_up: S, dn_up: S, dn_down: S) -> Result<S, FluxError> {
    if sigma_up <= S::zero() {
        return Err(FluxError::NonPositive);
    }
    if dn_up.is_zero() || dn_down.is_zero() {
        return Err(FluxError::Tangential);
    }
    let product = dn_up.clone() * dn_down.clone();
    if product < S::zero() {
        return Err(FluxError::OppositeSigns {
            product: product.to_f64_lossy(),
        });
    }
    Ok(sigma_up * dn_up / dn_down)
}

/// Floating-point version of [`flux_match_value`].
pub fn flux_match_real<T: Real>(sigma_up: T, dn_up: T, dn_down: T) -> Result<T, FluxError> {
    if !(sigma_up > T::zero()) {
        return Err(FluxError::NonPositive);
    }
    if dn_up == T::zero() || dn_down == T::zero() {
        return Err(FluxError::Tangential);
    }
    let product = dn_up * dn_down;
    if product < T::zero() {
        return Err(FluxError::OppositeSigns {
            product: to_f64(product),
        });
    }
    Ok(sigma_up * dn_up / dn_down)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    #[test]
    fn equal_derivatives_pass_sigma_through() {
        assert_eq!(flux_match_value(3.5, 0.7, 0.7).unwrap(), 3.5);
    }

    #[test]
    fn worked_face() {
        // λ_up = (2,-2), λ_down = (2,-1), ν = (0,1)
        let r = |n| Rational64::from_integer(n);
        assert_eq!(flux_match_value(r(1), r(-2), r(-1)).unwrap(), r(2));
    }

    #[test]
    fn rejects_tangential_and_opposite() {
        assert_eq!(flux_match_value(1.0, 0.0, 1.0), Err(FluxError::Tangential));
        assert!(matches!(
            flux_match_value(1.0, 1.0, -2.0),
            Err(FluxError::OppositeSigns { product }) if product == -2.0
        ));
        assert_eq!(flux_match_value(0.0, 1.0, 1.0), Err(FluxError::NonPositive));
    }
}
