//! Global enumeration budget.
//!
//! Exhaustive operations (trajectory sums, planning, dynamics-matrix builds)
//! count how many leaves they are about to visit and fail fast with
//! [`Error::BudgetExceeded`] instead of silently truncating.

use crate::error::{Error, Result};

/// Default cap on enumerated trajectories / matrix cells.
pub const DEFAULT_BUDGET: usize = 1_000_000;

/// Current cap; `PSRLAB_BUDGET` overrides the default.
pub fn cap() -> usize {
    match std::env::var("PSRLAB_BUDGET") {
        Ok(v) => v.parse().unwrap_or(DEFAULT_BUDGET),
        Err(_) => DEFAULT_BUDGET,
    }
}

/// Check that an enumeration of `needed` items fits under the cap.
pub fn check(needed: usize) -> Result<()> {
    let cap = cap();
    if needed > cap {
        return Err(Error::BudgetExceeded { needed, cap });
    }
    Ok(())
}

/// `base^exp` with saturation, for sizing enumerations before running them.
pub fn pow_sat(base: usize, exp: usize) -> usize {
    let mut acc: usize = 1;
    for _ in 0..exp {
        acc = acc.saturating_mul(base);
    }
    acc
}
