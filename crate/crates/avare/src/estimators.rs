//! Unbiased gradient estimators over sampled component indices.
//!
//! For a finite sum `g = sum_i g_i` and a sampling distribution `p`:
//!
//! * single draw: `ghat = g_I / p_I`;
//! * minibatch with replacement: the mean of `m` independent single-draw
//!   estimates;
//! * minibatch without replacement: draws are sequential with conditional
//!   weights `q_j = p_{I_j} / (1 - sum_{k<j} p_{I_k})`, and the batch
//!   estimate averages the per-stage estimates
//!   `ghat_j = g_{I_j} / q_j + sum_{k<j} g_{I_k}`,
//!   which telescopes the already-seen components back in so every stage is
//!   unbiased on its own and stage errors are uncorrelated.
//!
//! [`enumerate_moments`] is the oracle for all of this: it walks every
//! ordered tuple of distinct indices, accumulates the exact distribution of
//! the batch estimator, and cross-checks unbiasedness, the variance
//! decomposition `Var(ghat_b) = (1/m^2) sum_j Var(ghat_j)`, and the
//! per-stage conditional variance recursion. Tests freeze against it.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("no draws supplied")]
    EmptyBatch,
    #[error("probability {value} at draw {draw} is outside (0, 1]")]
    InvalidProbability { draw: usize, value: f64 },
    #[error("gradient at draw {draw} has dimension {got}, expected {expected}")]
    DimensionMismatch {
        draw: usize,
        got: usize,
        expected: usize,
    },
    #[error("index {index} appears twice in a without-replacement batch")]
    DuplicateIndex { index: usize },
    #[error("draw count {got} disagrees with weight count {weights}")]
    LengthMismatch { got: usize, weights: usize },
    #[error("distribution has {got} entries for {expected} gradients")]
    DistributionMismatch { got: usize, expected: usize },
    #[error("distribution entries must be positive and sum to 1 (sum = {sum})")]
    NotADistribution { sum: f64 },
    #[error("batch of {m} exceeds {n} components")]
    BatchTooLarge { m: usize, n: usize },
    #[error("enumeration over n = {n} components exceeds cap {cap}")]
    EnumerationTooLarge { n: usize, cap: usize },
    #[error("estimator identity `{name}` violated by {residual} (tol {tol})")]
    PropertyViolated {
        name: &'static str,
        residual: f64,
        tol: f64,
    },
}

/// One sampled component: its index, the probability (or conditional
/// weight) it was drawn with, and its gradient.
#[derive(Debug, Clone)]
pub struct GradientDraw {
    pub index: usize,
    pub weight: f64,
    pub gradient: Vec<f64>,
}

/// A batch estimate, with the per-stage estimates kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub ghat: Vec<f64>,
    pub per_stage: Vec<Vec<f64>>,
}

fn check_draws(draws: &[GradientDraw]) -> Result<usize, EstimatorError> {
    if draws.is_empty() {
        return Err(EstimatorError::EmptyBatch);
    }
    let dim = draws[0].gradient.len();
    for (j, draw) in draws.iter().enumerate() {
        // Renormalized conditional weights are mathematically <= 1 but may
        // carry division noise at the top end; allow that much and no more.
        if !(draw.weight > 0.0 && draw.weight <= 1.0 + 1e-9) || !draw.weight.is_finite() {
            return Err(EstimatorError::InvalidProbability {
                draw: j,
                value: draw.weight,
            });
        }
        if draw.gradient.len() != dim {
            return Err(EstimatorError::DimensionMismatch {
                draw: j,
                got: draw.gradient.len(),
                expected: dim,
            });
        }
    }
    Ok(dim)
}

/// Single-draw estimate `g_I / p_I`.
pub fn single_estimate(gradient: &[f64], p: f64) -> Result<Vec<f64>, EstimatorError> {
    if !(p > 0.0 && p <= 1.0) || !p.is_finite() {
        return Err(EstimatorError::InvalidProbability { draw: 0, value: p });
    }
    Ok(gradient.iter().map(|&g| g / p).collect())
}

/// Mean of independent single-draw estimates; draws carry their marginal
/// probabilities and may repeat indices.
pub fn minibatch_wr_estimate(draws: &[GradientDraw]) -> Result<Vec<f64>, EstimatorError> {
    let dim = check_draws(draws)?;
    let m = draws.len() as f64;
    let mut acc = vec![0.0; dim];
    for draw in draws {
        for (a, &g) in acc.iter_mut().zip(&draw.gradient) {
            *a += g / draw.weight;
        }
    }
    for a in &mut acc {
        *a /= m;
    }
    Ok(acc)
}

/// Without-replacement batch estimate. Draws must be in sampling order and
/// carry their realized conditional weights
/// `q_j = p_{I_j} / (1 - sum_{k<j} p_{I_k})`; indices must be distinct.
pub fn minibatch_wor_estimate(draws: &[GradientDraw]) -> Result<EstimateResult, EstimatorError> {
    let dim = check_draws(draws)?;
    let mut seen = std::collections::HashSet::new();
    for draw in draws {
        if !seen.insert(draw.index) {
            return Err(EstimatorError::DuplicateIndex { index: draw.index });
        }
    }

    let m = draws.len();
    let mut prefix = vec![0.0; dim]; // sum of gradients drawn before stage j
    let mut acc = vec![0.0; dim];
    let mut per_stage = Vec::with_capacity(m);
    for draw in draws {
        let mut stage = prefix.clone();
        for (s, &g) in stage.iter_mut().zip(&draw.gradient) {
            *s += g / draw.weight;
        }
        for (a, &s) in acc.iter_mut().zip(&stage) {
            *a += s;
        }
        for (pf, &g) in prefix.iter_mut().zip(&draw.gradient) {
            *pf += g;
        }
        per_stage.push(stage);
    }
    for a in &mut acc {
        *a /= m as f64;
    }
    Ok(EstimateResult {
        ghat: acc,
        per_stage,
    })
}

/// Exact moments of the without-replacement batch estimator, computed by
/// exhaustive enumeration of ordered index tuples.
#[derive(Debug, Clone)]
pub struct EnumeratedMoments {
    /// `E[ghat_b]`, which must equal the full gradient.
    pub mean: Vec<f64>,
    /// `E ||ghat_b - g||^2`.
    pub trace_var: f64,
    /// `E ||ghat_j - g||^2` for each stage `j`.
    pub per_stage_var: Vec<f64>,
}

const ENUMERATION_CAP: usize = 10;

/// Enumerate every ordered batch of `m` distinct indices under the
/// sequential law induced by `p`, and return the exact mean and variance of
/// the batch estimator along with per-stage variances.
///
/// The function also verifies, to tolerance `tol`, that the estimator is
/// unbiased, that the batch variance decomposes as
/// `(1/m^2) sum_j Var(ghat_j)`, and that each stage obeys the conditional
/// recursion
/// `E||ghat_{j+1} - g||^2 = (1 - E q_j) E||ghat_j - g||^2 - E[q_j ||ghat_j - g||^2]`
/// (all conditional on the stage-`j` prefix). A violation is an error: it
/// means either the estimator or the enumeration is wrong.
pub fn enumerate_moments(
    gradients: &[Vec<f64>],
    p: &[f64],
    m: usize,
    tol: f64,
) -> Result<EnumeratedMoments, EstimatorError> {
    let n = gradients.len();
    if n == 0 || m == 0 {
        return Err(EstimatorError::EmptyBatch);
    }
    if n > ENUMERATION_CAP {
        return Err(EstimatorError::EnumerationTooLarge {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    if m > n {
        return Err(EstimatorError::BatchTooLarge { m, n });
    }
    if p.len() != n {
        return Err(EstimatorError::DistributionMismatch {
            got: p.len(),
            expected: n,
        });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || p.iter().any(|&pi| pi <= 0.0 || pi.is_nan()) {
        return Err(EstimatorError::NotADistribution { sum });
    }
    let dim = gradients[0].len();
    for (j, g) in gradients.iter().enumerate() {
        if g.len() != dim {
            return Err(EstimatorError::DimensionMismatch {
                draw: j,
                got: g.len(),
                expected: dim,
            });
        }
    }

    let full: Vec<f64> = (0..dim)
        .map(|k| gradients.iter().map(|g| g[k]).sum())
        .collect();

    let mut mean = vec![0.0; dim];
    let mut trace_var = 0.0;
    let mut per_stage_var = vec![0.0; m];
    // Conditional recursion bookkeeping: for each prefix of length j-1 we
    // need E over I_j of q_j, of ||ghat_j - g||^2, and of q_j * ||ghat_j - g||^2,
    // plus E over (I_j, I_{j+1}) of ||ghat_{j+1} - g||^2.
    struct PrefixCheck {
        prob: f64,
        e_q: f64,
        e_err: f64,
        e_q_err: f64,
        e_err_next: f64,
    }
    let mut prefix_checks: Vec<PrefixCheck> = Vec::new();

    // Depth-first walk over ordered tuples. State per level: chosen mask,
    // prefix gradient sum, probability so far, taken mass.
    #[allow(clippy::too_many_arguments)]
    fn walk(
        gradients: &[Vec<f64>],
        p: &[f64],
        m: usize,
        full: &[f64],
        chosen: &mut Vec<usize>,
        prob: f64,
        taken: f64,
        stage_errs: &mut Vec<f64>,
        batch_acc: &mut Vec<f64>,
        mean: &mut [f64],
        trace_var: &mut f64,
        per_stage_var: &mut [f64],
        prefix_checks: &mut Vec<PrefixCheck>,
    ) {
        let n = gradients.len();
        let dim = full.len();
        let j = chosen.len();
        if j == m {
            let mut err = 0.0;
            for k in 0..dim {
                let b = batch_acc[k] / m as f64;
                mean[k] += prob * b;
                let d = b - full[k];
                err += d * d;
            }
            *trace_var += prob * err;
            return;
        }
        // Conditional-recursion accounting for the prefix ending at depth j:
        // only for stages with a successor (j + 1 < m handled via e_err_next).
        let check_slot = if j + 1 < m {
            prefix_checks.push(PrefixCheck {
                prob,
                e_q: 0.0,
                e_err: 0.0,
                e_q_err: 0.0,
                e_err_next: 0.0,
            });
            Some(prefix_checks.len() - 1)
        } else {
            None
        };

        let prefix_sum: Vec<f64> = (0..dim)
            .map(|k| chosen.iter().map(|&i| gradients[i][k]).sum())
            .collect();
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let q = p[i] / (1.0 - taken);
            // Stage estimate ghat_{j+1} = g_i / q + prefix_sum.
            let mut stage_err = 0.0;
            for k in 0..dim {
                let s = gradients[i][k] / q + prefix_sum[k];
                batch_acc[k] += s;
                let d = s - full[k];
                stage_err += d * d;
            }
            per_stage_var[j] += prob * q * stage_err;
            stage_errs.push(stage_err);

            if let Some(slot) = check_slot {
                let c = &mut prefix_checks[slot];
                c.e_q += q * q; // E[q_{I_j}] = sum_i q_i * q_i
                c.e_err += q * stage_err;
                c.e_q_err += q * q * stage_err;
            }

            chosen.push(i);
            walk(
                gradients,
                p,
                m,
                full,
                chosen,
                prob * q,
                taken + p[i],
                stage_errs,
                batch_acc,
                mean,
                trace_var,
                per_stage_var,
                prefix_checks,
            );
            chosen.pop();
            stage_errs.pop();

            // Roll back the batch accumulator for this stage.
            for k in 0..dim {
                let s = gradients[i][k] / q + prefix_sum[k];
                batch_acc[k] -= s;
            }
        }

        if let Some(slot) = check_slot {
            // E over (I_{j+1}, I_{j+2}) of the next stage error, conditional
            // on this prefix, is per_stage accounting one level deeper; we
            // recover it by enumerating again cheaply below.
            let mut e_next = 0.0;
            for i in 0..n {
                if chosen.contains(&i) {
                    continue;
                }
                let q = p[i] / (1.0 - taken);
                let mut prefix2: Vec<f64> = prefix_sum.clone();
                for (pk, &g) in prefix2.iter_mut().zip(&gradients[i]) {
                    *pk += g;
                }
                for i2 in 0..n {
                    if i2 == i || chosen.contains(&i2) {
                        continue;
                    }
                    let q2 = p[i2] / (1.0 - taken - p[i]);
                    let mut err2 = 0.0;
                    for k in 0..dim {
                        let s = gradients[i2][k] / q2 + prefix2[k];
                        let d = s - full[k];
                        err2 += d * d;
                    }
                    e_next += q * q2 * err2;
                }
            }
            prefix_checks[slot].e_err_next = e_next;
        }
    }

    let mut chosen = Vec::with_capacity(m);
    let mut stage_errs = Vec::with_capacity(m);
    let mut batch_acc = vec![0.0; dim];
    walk(
        gradients,
        p,
        m,
        &full,
        &mut chosen,
        1.0,
        0.0,
        &mut stage_errs,
        &mut batch_acc,
        &mut mean,
        &mut trace_var,
        &mut per_stage_var,
        &mut prefix_checks,
    );

    let scale = trace_var.abs().max(1.0);

    // (a) unbiasedness.
    let bias = mean
        .iter()
        .zip(&full)
        .map(|(&m, &f)| (m - f).abs())
        .fold(0.0f64, f64::max);
    if bias > tol * full.iter().map(|f| f.abs()).fold(1.0, f64::max) {
        return Err(EstimatorError::PropertyViolated {
            name: "unbiasedness",
            residual: bias,
            tol,
        });
    }

    // (b) variance decomposition across stages.
    let stage_sum: f64 = per_stage_var.iter().sum();
    let residual = (trace_var - stage_sum / (m * m) as f64).abs();
    if residual > tol * scale {
        return Err(EstimatorError::PropertyViolated {
            name: "variance decomposition",
            residual,
            tol,
        });
    }

    // (d) conditional variance recursion, prefix by prefix.
    for c in &prefix_checks {
        if c.prob <= 0.0 {
            continue;
        }
        let lhs = c.e_err_next;
        let rhs = (1.0 - c.e_q) * c.e_err - c.e_q_err;
        let residual = (lhs - rhs).abs();
        if residual > tol * lhs.abs().max(1.0) {
            return Err(EstimatorError::PropertyViolated {
                name: "conditional variance recursion",
                residual,
                tol,
            });
        }
    }

    Ok(EnumeratedMoments {
        mean,
        trace_var,
        per_stage_var,
    })
}

/// Exact trace variance of the with-replacement batch estimator:
/// `(1/m) (sum_i ||g_i||^2 / p_i - ||g||^2)`.
pub fn wr_trace_variance(gradients: &[Vec<f64>], p: &[f64], m: usize) -> f64 {
    let dim = gradients.first().map_or(0, |g| g.len());
    let full: Vec<f64> = (0..dim)
        .map(|k| gradients.iter().map(|g| g[k]).sum())
        .collect();
    let full_sq: f64 = full.iter().map(|f| f * f).sum();
    let second: f64 = gradients
        .iter()
        .zip(p)
        .map(|(g, &pi)| g.iter().map(|x| x * x).sum::<f64>() / pi)
        .sum();
    (second - full_sq) / m as f64
}
