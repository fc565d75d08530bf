//! Relative entropy of discrete distributions.

use crate::error::{Error, Result};
use crate::real::{lit, Real};

fn check_probability<T: Real>(v: &[T], name: &str) -> Result<()> {
    if v.iter().any(|&x| !(x >= T::zero()) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{name} has a negative or non-finite entry")));
    }
    let s: T = v.iter().copied().sum();
    if (s - T::one()).abs() > lit::<T>(1e-12).max(T::epsilon() * lit(4.0 * v.len() as f64)) {
        return Err(Error::InvalidInput(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// H(p | q) = Σ pᵢ ln(pᵢ / qᵢ), with 0 ln 0 = 0 and +∞ when p ≪ q fails.
pub fn relative_entropy_discrete<T: Real>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::SizeMismatch(format!(
            "probability vectors of lengths {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_probability(p, "p")?;
    check_probability(q, "q")?;
    let mut h = T::zero();
    for (&a, &b) in p.iter().zip(q) {
        if a == T::zero() {
            continue;
        }
        if b == T::zero() {
            return Ok(T::infinity());
        }
        h += a * (a / b).ln();
    }
    Ok(h.max(T::zero()))
}
