//! Exploration floors and step sizes.
//!
//! The sampler's floor `eps_t` shrinks over time so early rounds stay close
//! to uniform (cheap exploration while the norm table is stale) and later
//! rounds approach pure proportional sampling. Three modes:
//!
//! * single draw:    `eps_t = 1 / (C^(1 - delta/3) * (C + t - 1)^(delta/3))`
//! * minibatch:      same with `C + m (t - 1)` — a batch of `m` refreshes
//!   `m` table entries per round, so time is counted in component touches;
//! * constant step:  the minibatch value plus a positive floor `p_min`, for
//!   runs whose step size never decays.
//!
//! Decreasing modes require `C >= N` so that `eps_1 = 1/C <= 1/N` keeps the
//! restricted simplex nonempty; the constant-step mode requires
//! `C <= 1 / (1/N - p_min)` for the same reason. `t0` marks the round after
//! which `eps_t <= 1/(2N)`, the regime where restriction costs at most a
//! constant factor; with `C >= N` it arrives within `(2^(3/delta) - 1) N + 1`
//! rounds.
//!
//! Step sizes are deliberately plain: a power decay `E / (F + t - 1)^beta`,
//! the strongly-convex benchmark schedule `m / (2 N L + m mu t)`, and a
//! constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("C = {c} must be at least n = {n} so that eps_1 <= 1/n")]
    FloorTooHigh { c: f64, n: usize },
    #[error("C = {c} must be positive and at most {max} so that eps_1 <= 1/n")]
    ConstantModeFloorTooHigh { c: f64, max: f64 },
    #[error("delta = {0} must lie in (0, 1]")]
    InvalidDelta(f64),
    #[error("p_min = {p_min} must lie in [0, 1/n) for n = {n}")]
    InvalidPMin { p_min: f64, n: usize },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("n must be positive")]
    ZeroN,
    #[error("parameter {name} = {value} must be positive")]
    NonPositive { name: &'static str, value: f64 },
    #[error("beta = {0} must lie in (0, 1]")]
    InvalidBeta(f64),
    #[error("t = {0} must be at least 1 (rounds are 1-based)")]
    ZeroRound(u64),
}

/// Exploration-floor schedule. Construct through the mode constructors,
/// which validate the feasibility constraints once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EpsilonSchedule {
    /// One component touch per round.
    Single { c: f64, delta: f64 },
    /// `m` component touches per round.
    Minibatch { c: f64, delta: f64, m: usize },
    /// Minibatch decay toward a positive floor `p_min` instead of zero.
    ConstantStep {
        c: f64,
        delta: f64,
        m: usize,
        p_min: f64,
    },
}

impl EpsilonSchedule {
    pub fn single(c: f64, delta: f64, n: usize) -> Result<Self, ScheduleError> {
        Self::minibatch(c, delta, 1, n).map(|s| match s {
            EpsilonSchedule::Minibatch { c, delta, .. } => EpsilonSchedule::Single { c, delta },
            other => other,
        })
    }

    pub fn minibatch(c: f64, delta: f64, m: usize, n: usize) -> Result<Self, ScheduleError> {
        if n == 0 {
            return Err(ScheduleError::ZeroN);
        }
        if m == 0 {
            return Err(ScheduleError::ZeroBatch);
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(ScheduleError::InvalidDelta(delta));
        }
        if !c.is_finite() || c < n as f64 {
            return Err(ScheduleError::FloorTooHigh { c, n });
        }
        Ok(EpsilonSchedule::Minibatch { c, delta, m })
    }

    /// Constant-step mode with explicit parameters. Requires
    /// `p_min in [0, 1/n)` and `0 < C <= 1 / (1/n - p_min)`.
    pub fn constant_step(
        c: f64,
        delta: f64,
        m: usize,
        p_min: f64,
        n: usize,
    ) -> Result<Self, ScheduleError> {
        if n == 0 {
            return Err(ScheduleError::ZeroN);
        }
        if m == 0 {
            return Err(ScheduleError::ZeroBatch);
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(ScheduleError::InvalidDelta(delta));
        }
        if !p_min.is_finite() || p_min < 0.0 || p_min >= 1.0 / n as f64 {
            return Err(ScheduleError::InvalidPMin { p_min, n });
        }
        let max_c = 1.0 / (1.0 / n as f64 - p_min);
        if !c.is_finite() || c <= 0.0 || c > max_c {
            return Err(ScheduleError::ConstantModeFloorTooHigh { c, max: max_c });
        }
        Ok(EpsilonSchedule::ConstantStep { c, delta, m, p_min })
    }

    /// Constant-step mode with the default floor `p_min = 1/(5n)` and the
    /// largest admissible `C = 1 / (1/n - p_min)`.
    pub fn constant_step_defaults(delta: f64, m: usize, n: usize) -> Result<Self, ScheduleError> {
        if n == 0 {
            return Err(ScheduleError::ZeroN);
        }
        let p_min = 1.0 / (5.0 * n as f64);
        let c = 1.0 / (1.0 / n as f64 - p_min);
        Self::constant_step(c, delta, m, p_min, n)
    }

    /// Floor value at round `t` (1-based). Strictly decreasing in `t`, with
    /// `eps_1 = 1/C` (plus `p_min` in constant-step mode).
    pub fn epsilon_at(&self, t: u64) -> Result<f64, ScheduleError> {
        if t == 0 {
            return Err(ScheduleError::ZeroRound(t));
        }
        Ok(match *self {
            EpsilonSchedule::Single { c, delta } => decay(c, delta, (t - 1) as f64),
            EpsilonSchedule::Minibatch { c, delta, m } => {
                decay(c, delta, m as f64 * (t - 1) as f64)
            }
            EpsilonSchedule::ConstantStep { c, delta, m, p_min } => {
                decay(c, delta, m as f64 * (t - 1) as f64) + p_min
            }
        })
    }

    /// First round whose floor reaches `1/(2n)`, or `None` if the schedule
    /// never gets there (a constant-step floor `p_min >= 1/(2n)`).
    pub fn t0_of(&self, n: usize) -> Option<u64> {
        let target = 1.0 / (2.0 * n as f64);
        if let EpsilonSchedule::ConstantStep { p_min, .. } = *self {
            if p_min >= target {
                return None;
            }
        }
        // eps_t is strictly decreasing and tends to p_min (or zero), so a
        // forward scan terminates; jump ahead geometrically then bisect to
        // keep this cheap for distant t0.
        let mut lo = 1u64;
        if self.epsilon_at(lo).unwrap() <= target {
            return Some(1);
        }
        let mut hi = 2u64;
        while self.epsilon_at(hi).unwrap() > target {
            lo = hi;
            hi = hi.saturating_mul(2);
            if hi == u64::MAX {
                return None;
            }
        }
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if self.epsilon_at(mid).unwrap() > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(hi)
    }
}

fn decay(c: f64, delta: f64, touches: f64) -> f64 {
    1.0 / (c.powf(1.0 - delta / 3.0) * (c + touches).powf(delta / 3.0))
}

/// Step-size schedule for the optimization loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    /// `alpha_t = E / (F + t - 1)^beta`.
    PowerDecay { e: f64, f: f64, beta: f64 },
    /// `alpha_t = m / (2 N L + m mu t)`, the strongly-convex benchmark
    /// schedule with `L` the largest per-component smoothness constant.
    Benchmark { m: usize, n: usize, l: f64, mu: f64 },
    /// `alpha_t = alpha`.
    Constant { alpha: f64 },
}

impl StepSchedule {
    pub fn power_decay(e: f64, f: f64, beta: f64) -> Result<Self, ScheduleError> {
        if !e.is_finite() || e <= 0.0 {
            return Err(ScheduleError::NonPositive { name: "E", value: e });
        }
        if !f.is_finite() || f < 1.0 {
            return Err(ScheduleError::NonPositive { name: "F", value: f });
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(ScheduleError::InvalidBeta(beta));
        }
        Ok(StepSchedule::PowerDecay { e, f, beta })
    }

    pub fn benchmark(m: usize, n: usize, l: f64, mu: f64) -> Result<Self, ScheduleError> {
        if m == 0 {
            return Err(ScheduleError::ZeroBatch);
        }
        if n == 0 {
            return Err(ScheduleError::ZeroN);
        }
        if !l.is_finite() || l <= 0.0 {
            return Err(ScheduleError::NonPositive { name: "L", value: l });
        }
        if !mu.is_finite() || mu <= 0.0 {
            return Err(ScheduleError::NonPositive {
                name: "mu",
                value: mu,
            });
        }
        Ok(StepSchedule::Benchmark { m, n, l, mu })
    }

    pub fn constant(alpha: f64) -> Result<Self, ScheduleError> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(ScheduleError::NonPositive {
                name: "alpha",
                value: alpha,
            });
        }
        Ok(StepSchedule::Constant { alpha })
    }

    /// Step size at round `t` (1-based). Positive; non-increasing in `t`.
    pub fn alpha_at(&self, t: u64) -> Result<f64, ScheduleError> {
        if t == 0 {
            return Err(ScheduleError::ZeroRound(t));
        }
        Ok(match *self {
            StepSchedule::PowerDecay { e, f, beta } => e / (f + (t - 1) as f64).powf(beta),
            StepSchedule::Benchmark { m, n, l, mu } => {
                m as f64 / (2.0 * n as f64 * l + m as f64 * mu * t as f64)
            }
            StepSchedule::Constant { alpha } => alpha,
        })
    }
}
