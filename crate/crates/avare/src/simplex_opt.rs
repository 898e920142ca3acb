//! Exact minimization of `sum_i a_i^2 / p_i` over the restricted simplex.
//!
//! The feasible set is `Delta(eps) = { p : p_i >= eps, sum_i p_i = 1 }` for
//! `0 <= eps <= 1/N`. The minimizer has a closed form: sort the weights in
//! decreasing order, find the largest rank `rho` whose weight clears a
//! running threshold, and split the coordinates into a "head" that gets
//! mass proportional to its weight and a "tail" pinned at the floor `eps`:
//!
//! * `rho = max { r : a_(r) * (1 - (N - r) eps) >= eps * sum_{j<=r} a_(j) }`
//! * `lambda = (sum_{j<=rho} a_(j)) / (1 - (N - rho) eps)`
//! * `p_i = a_i / lambda` for the `rho` largest weights, `p_i = eps` otherwise.
//!
//! The threshold predicate is monotone (true exactly on a prefix of ranks),
//! which is what lets the incremental sampler locate `rho` by tree descent.
//!
//! When every weight is zero the objective is identically zero and any
//! feasible point is optimal; this module deterministically returns the
//! uniform distribution in that case, with `lambda = 0` as the degenerate
//! marker.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimplexError {
    #[error("weight vector is empty")]
    EmptyInput,
    #[error("weight {value} at index {index} is negative or not finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("eps = {eps} is outside [0, {max}] for n = {n}")]
    InvalidEpsilon { eps: f64, max: f64, n: usize },
    #[error("solution has {got} probabilities but the weight vector has {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

/// Minimizer of the surrogate cost over `Delta(eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    /// Number of coordinates receiving proportional mass (head size), `1..=n`.
    /// Equals `n` in the all-zero degenerate case.
    pub rho: usize,
    /// Normalizer for the head: `p_i = a_i / lambda`. Positive except in the
    /// all-zero degenerate case, where it is `0.0`.
    pub lambda: f64,
    /// The optimal distribution, indexed like the input weights.
    pub p: Vec<f64>,
}

fn validate_weights(a: &[f64]) -> Result<(), SimplexError> {
    if a.is_empty() {
        return Err(SimplexError::EmptyInput);
    }
    for (index, &value) in a.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(SimplexError::InvalidWeight { index, value });
        }
    }
    Ok(())
}

fn validate_eps(eps: f64, n: usize, max: f64) -> Result<(), SimplexError> {
    if !eps.is_finite() || eps < 0.0 || eps > max {
        return Err(SimplexError::InvalidEpsilon { eps, max, n });
    }
    Ok(())
}

/// Indices of `a` sorted by decreasing weight, ties broken by ascending index.
///
/// This is the canonical ordering used everywhere a rank is mentioned; the
/// incremental sampler keys its tree the same way.
pub fn decreasing_order(a: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&i, &j| a[j].partial_cmp(&a[i]).unwrap().then(i.cmp(&j)));
    order
}

/// Evaluate `sum_i a_i^2 / p_i` with the convention `0^2 / 0 = 0`.
///
/// Returns `+inf` when some `p_i <= 0` carries positive weight, so callers
/// can compare candidate distributions without special-casing.
pub fn objective_value(a: &[f64], p: &[f64]) -> f64 {
    assert_eq!(a.len(), p.len(), "weights and probabilities differ in length");
    let mut total = 0.0;
    for (&ai, &pi) in a.iter().zip(p) {
        if ai == 0.0 {
            continue;
        }
        if pi <= 0.0 {
            return f64::INFINITY;
        }
        total += ai * ai / pi;
    }
    total
}

/// Closed-form minimizer of `sum a_i^2 / p_i` over `Delta(eps)`.
///
/// `eps` must lie in `[0, 1/n]`; `eps` strictly above `1/n` makes the
/// feasible set empty and is rejected rather than clamped.
pub fn solve_restricted(a: &[f64], eps: f64) -> Result<SimplexSolution, SimplexError> {
    validate_weights(a)?;
    let n = a.len();
    validate_eps(eps, n, 1.0 / n as f64)?;

    let total: f64 = a.iter().sum();
    if total <= 0.0 {
        return Ok(degenerate_uniform(n));
    }

    let order = decreasing_order(a);
    // Threshold in multiplied form to avoid a division per rank; the
    // denominator 1 - (n - r) eps is nonnegative for eps <= 1/n.
    let mut rho = 0usize;
    let mut cs = 0.0;
    let mut cs_rho = 0.0;
    for r in 1..=n {
        let v = a[order[r - 1]];
        cs += v;
        if v * (1.0 - (n - r) as f64 * eps) >= eps * cs {
            rho = r;
            cs_rho = cs;
        }
    }
    debug_assert!(rho >= 1, "positive total weight guarantees rho >= 1");

    let lambda = cs_rho / (1.0 - (n - rho) as f64 * eps);
    let mut p = vec![eps; n];
    for &i in order.iter().take(rho) {
        p[i] = a[i] / lambda;
    }
    Ok(SimplexSolution { rho, lambda, p })
}

/// Reference solver: identical contract to [`solve_restricted`], kept as an
/// independent arithmetic path for differential testing of the incremental
/// sampler. Sorts, evaluates the per-rank normalizer `lambda_r` explicitly,
/// and scans for the largest rank passing the threshold.
pub fn solve_restricted_reference(a: &[f64], eps: f64) -> Result<SimplexSolution, SimplexError> {
    validate_weights(a)?;
    let n = a.len();
    validate_eps(eps, n, 1.0 / n as f64)?;

    let total: f64 = a.iter().sum();
    if total <= 0.0 {
        return Ok(degenerate_uniform(n));
    }

    let order = decreasing_order(a);
    let mut prefix = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &i in &order {
        acc += a[i];
        prefix.push(acc);
    }

    let mut rho = 0usize;
    let mut lambda = 0.0;
    for r in 1..=n {
        let lambda_r = prefix[r - 1] / (1.0 - (n - r) as f64 * eps);
        if a[order[r - 1]] >= eps * lambda_r {
            rho = r;
            lambda = lambda_r;
        }
    }
    debug_assert!(rho >= 1);

    let mut p = vec![eps; n];
    for &i in order.iter().take(rho) {
        p[i] = a[i] / lambda;
    }
    Ok(SimplexSolution { rho, lambda, p })
}

fn degenerate_uniform(n: usize) -> SimplexSolution {
    SimplexSolution {
        rho: n,
        lambda: 0.0,
        p: vec![1.0 / n as f64; n],
    }
}

/// Outcome of checking the optimality certificate for a candidate solution.
///
/// For each coordinate the certificate uses the multipliers
/// `nu = lambda^2` and `mu_i = 0` on the head, `mu_i = nu - a_i^2 / eps^2`
/// on the tail; the residuals below must all vanish at an optimum.
#[derive(Debug, Clone)]
pub struct KktReport {
    /// Max over coordinates of `|nu - mu_i - (a_i / p_i)^2|`, scaled.
    pub stationarity: f64,
    /// Max over coordinates of `|mu_i * (p_i - eps)|`, scaled.
    pub complementarity: f64,
    /// `|sum_i p_i - 1|`.
    pub primal_sum: f64,
    /// `min_i (p_i - eps)`, negative when a floor is violated.
    pub primal_floor: f64,
    /// `min_i mu_i`, negative when dual feasibility is violated.
    pub dual_floor: f64,
    /// Tolerance the report was evaluated at.
    pub tol: f64,
    pub pass: bool,
}

/// Check the first-order optimality certificate of `sol` for weights `a`
/// and floor `eps`, at absolute/scaled tolerance `tol`.
///
/// All-zero weight vectors make the objective constant, so there the
/// certificate degenerates to primal feasibility alone.
pub fn verify_kkt(
    a: &[f64],
    eps: f64,
    sol: &SimplexSolution,
    tol: f64,
) -> Result<KktReport, SimplexError> {
    validate_weights(a)?;
    let n = a.len();
    validate_eps(eps, n, 1.0 / n as f64)?;
    if sol.p.len() != n {
        return Err(SimplexError::LengthMismatch {
            got: sol.p.len(),
            expected: n,
        });
    }

    let sum: f64 = sol.p.iter().sum();
    let primal_sum = (sum - 1.0).abs();
    let primal_floor = sol
        .p
        .iter()
        .map(|&pi| pi - eps)
        .fold(f64::INFINITY, f64::min);

    let total: f64 = a.iter().sum();
    if total <= 0.0 {
        // Constant objective: feasibility is the whole certificate.
        let pass = primal_sum <= tol && primal_floor >= -tol;
        return Ok(KktReport {
            stationarity: 0.0,
            complementarity: 0.0,
            primal_sum,
            primal_floor,
            dual_floor: 0.0,
            tol,
            pass,
        });
    }

    let nu = sol.lambda * sol.lambda;
    let scale = nu.max(1.0);
    let order = decreasing_order(a);
    let mut in_head = vec![false; n];
    for &i in order.iter().take(sol.rho.min(n)) {
        in_head[i] = true;
    }

    let mut stationarity = 0.0f64;
    let mut complementarity = 0.0f64;
    let mut dual_floor = f64::INFINITY;
    for i in 0..n {
        let mu = if in_head[i] {
            0.0
        } else {
            // Tail multipliers need eps > 0; a tail with eps = 0 can only
            // come from a foreign (non-optimal) solution and the infinite
            // residual below fails the report, as it should.
            nu - (a[i] / eps) * (a[i] / eps)
        };
        dual_floor = dual_floor.min(mu);
        complementarity = complementarity.max((mu * (sol.p[i] - eps)).abs());

        if a[i] == 0.0 && sol.p[i].abs() <= tol {
            // Zero-weight coordinate pinned at zero (only reachable when
            // eps = 0): the objective does not depend on it and a valid
            // multiplier (mu_i = nu) always exists, so skip stationarity.
            continue;
        }
        let grad_sq = if sol.p[i] > 0.0 {
            let r = a[i] / sol.p[i];
            r * r
        } else {
            f64::INFINITY
        };
        let residual = (nu - mu - grad_sq).abs();
        stationarity = stationarity.max(residual);
    }

    let pass = stationarity <= tol * scale
        && complementarity <= tol * scale
        && primal_sum <= tol
        && primal_floor >= -tol
        && dual_floor >= -tol * scale;

    Ok(KktReport {
        stationarity,
        complementarity,
        primal_sum,
        primal_floor,
        dual_floor,
        tol,
        pass,
    })
}

/// Unrestricted baseline: `min over the full simplex of sum a_i^2 / p_i`,
/// attained at `p_i = a_i / sum_j a_j` with value `(sum_i a_i)^2`.
pub fn optimal_cost_full_simplex(a: &[f64]) -> Result<f64, SimplexError> {
    validate_weights(a)?;
    let total: f64 = a.iter().sum();
    Ok(total * total)
}

/// Upper bound `6 eps n (sum a)^2` on the gap between the restricted and
/// unrestricted optima, valid for `eps <= 1/(2n)`.
pub fn restriction_gap_bound(a: &[f64], eps: f64) -> Result<f64, SimplexError> {
    validate_weights(a)?;
    let n = a.len();
    validate_eps(eps, n, 1.0 / (2.0 * n as f64))?;
    let total: f64 = a.iter().sum();
    Ok(6.0 * eps * n as f64 * total * total)
}
