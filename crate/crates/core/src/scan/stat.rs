use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which alternative a window is tested against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Inside rate above the outside rate (hot spot).
    High,
    /// Inside rate below the outside rate (cold spot).
    Low,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::High => "high",
            Direction::Low => "low",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "high" | "h" => Ok(Direction::High),
            "low" | "l" => Ok(Direction::Low),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

/// `x ln(x / y)` with `0 ln 0 = 0`.
#[inline]
fn xlogx_over(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Log Poisson likelihood ratio of a window against the rest of the study region.
///
/// Returns `None` when the inside/outside rate ordering does not match `direction`.
pub fn log_lrt(obs_in: u64, exp_in: f64, total_obs: u64, total_exp: f64, direction: Direction) -> Result<Option<f64>> {
    if exp_in >= total_exp {
        return Err(Error::WindowCoversAll);
    }
    Ok(log_lrt_unchecked(obs_in as f64, exp_in, total_obs as f64, total_exp, direction))
}

/// [`log_lrt`] without the proper-subset check; callers guarantee `exp_in < total_exp`.
#[inline]
pub(crate) fn log_lrt_unchecked(obs_in: f64, exp_in: f64, total_obs: f64, total_exp: f64, direction: Direction) -> Option<f64> {
    let obs_out = total_obs - obs_in;
    let exp_out = total_exp - exp_in;
    // Compare rates without dividing: o_in/e_in vs o_out/e_out.
    let lhs = obs_in * exp_out;
    let rhs = obs_out * exp_in;
    let ok = match direction {
        Direction::High => lhs > rhs,
        Direction::Low => lhs < rhs,
    };
    if !ok {
        return None;
    }
    Some(xlogx_over(obs_in, exp_in) + xlogx_over(obs_out, exp_out))
}

/// Log-likelihood of the single-rate null model in the same units as [`log_lrt`].
///
/// Subtracting it turns `log_lrt` into a proper (non-negative) likelihood ratio
/// when the expected counts do not sum to the observed total.
pub fn null_log_likelihood(total_obs: u64, total_exp: f64) -> f64 {
    xlogx_over(total_obs as f64, total_exp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        let h = log_lrt(20, 10.0, 100, 100.0, Direction::High).unwrap().unwrap();
        assert!((h - (20.0 * 2f64.ln() + 80.0 * (80.0f64 / 90.0).ln())).abs() < 1e-12);
        assert!((h - 4.44030).abs() < 5e-6);
        assert_eq!(log_lrt(10, 10.0, 100, 100.0, Direction::High).unwrap(), None);
        assert_eq!(log_lrt(10, 10.0, 100, 100.0, Direction::Low).unwrap(), None);
        let l = log_lrt(2, 10.0, 100, 100.0, Direction::Low).unwrap().unwrap();
        assert!((l - (2.0 * 0.2f64.ln() + 98.0 * (98.0f64 / 90.0).ln())).abs() < 1e-12);
        assert!((l - 5.12659).abs() < 5e-6);
    }

    #[test]
    fn covering_window_rejected() {
        assert!(matches!(
            log_lrt(5, 100.0, 100, 100.0, Direction::High),
            Err(Error::WindowCoversAll)
        ));
    }

    #[test]
    fn zero_counts_use_zero_log_zero() {
        // Nothing inside: 0·ln0 + 100·ln(100/90).
        let v = log_lrt(0, 10.0, 100, 100.0, Direction::Low).unwrap().unwrap();
        assert!((v - 100.0 * (100.0f64 / 90.0).ln()).abs() < 1e-12);
        // Everything inside.
        let v = log_lrt(100, 10.0, 100, 100.0, Direction::High).unwrap().unwrap();
        assert!((v - 100.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shifted_statistic_is_non_negative() {
        let base = null_log_likelihood(37, 50.0);
        for o in 0..=37u64 {
            for e in [0.5, 3.0, 11.0, 25.0, 49.0] {
                for d in [Direction::High, Direction::Low] {
                    if let Some(v) = log_lrt(o, e, 37, 50.0, d).unwrap() {
                        assert!(v - base >= -1e-9, "o={o} e={e} {d:?}");
                    }
                }
            }
        }
    }
}
