//! Precision budgets and the global series-length guard.

use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Working precision for a whole computation.
///
/// `n_digits` is the number of retained p-adic digits, `window_half` the
/// Laurent window half-width (a product window is truncated to `2*window_half`
/// monomials), `t_order` the truncation order of power series in t, and
/// `slack` the number of digits an individual composite operation is allowed
/// to lose before it must report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionBudget {
    pub n_digits: u32,
    pub window_half: i64,
    pub t_order: usize,
    pub slack: u32,
}

impl Default for PrecisionBudget {
    fn default() -> Self {
        PrecisionBudget {
            n_digits: 40,
            window_half: 48,
            t_order: 16,
            slack: 8,
        }
    }
}

impl PrecisionBudget {
    pub fn new(n_digits: u32, window_half: i64, t_order: usize, slack: u32) -> Self {
        assert!(n_digits > slack, "budget requires N > slack");
        PrecisionBudget { n_digits, window_half, t_order, slack }
    }

    /// Floor below which an operation must report precision loss.
    pub fn floor(&self) -> i64 {
        (self.n_digits - self.slack) as i64
    }

    /// Iteration cap for valuation-threshold summation of log-type series.
    /// Overridable (downwards only) through `ROBBA_LAB_MAX_TERMS`.
    pub fn series_cap(&self) -> usize {
        let cap = 8 * self.n_digits as usize;
        cap.min(global_max_terms())
    }
}

static MAX_TERMS: OnceLock<usize> = OnceLock::new();

/// Global cap on summed series lengths, from `ROBBA_LAB_MAX_TERMS`.
pub fn global_max_terms() -> usize {
    *MAX_TERMS.get_or_init(|| {
        std::env::var("ROBBA_LAB_MAX_TERMS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(usize::MAX)
    })
}
