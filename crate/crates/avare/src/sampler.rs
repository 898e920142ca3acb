//! Incremental sampler over per-component gradient norms.
//!
//! [`WeightTable`] maintains three views of the same multiset of norms:
//!
//! * `H` — the raw norms, addressed by original component index;
//! * `T` — an order-statistic tree (a treap with subtree sizes) keyed by
//!   `(norm, index)` in decreasing-norm order with ascending-index ties,
//!   supporting rank and select in `O(log N)` expected tree work;
//! * `CS` — cumulative sums of the norms in decreasing order, kept as a
//!   plain array so one update costs a contiguous `O(N)` pass (vectorizable)
//!   while rank-indexed prefix reads stay `O(1)`.
//!
//! Against this state the table answers the per-round optimal restricted
//! simplex distribution: the head size `rho` and normalizer `lambda` come
//! from a tree descent driven by the same threshold predicate the exact
//! solver uses, and drawing an index costs one Bernoulli split between the
//! proportional head and the floor tail plus a binary search over `CS` or a
//! uniform tail rank, each `O(log N)`.
//!
//! Floating-point drift in `CS` is bounded by re-anchoring: every
//! `reanchor_interval` updates the sums are rebuilt from scratch.
//!
//! Concurrency: read-only operations (`find_rho`, `probabilities`,
//! `sample`, `validate_full`) take `&self` and may run concurrently with
//! each other; `update` takes `&mut self` and therefore excludes them.
//! Instrumentation counters are relaxed atomics so reads stay `&self`.

use std::sync::atomic::{AtomicU64, Ordering::Relaxed};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("norm table is empty")]
    EmptyTable,
    #[error("norm {value} at index {index} is negative or not finite")]
    InvalidNorm { index: usize, value: f64 },
    #[error("index {index} out of range for table of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("eps = {eps} is outside [0, {max}]")]
    InvalidEpsilon { eps: f64, max: f64 },
    #[error("all norms are zero and eps = 0: sampling distribution undefined")]
    DegenerateAllZero,
    #[error("batch of {m} exceeds table of {n}")]
    BatchTooLarge { m: usize, n: usize },
    #[error("remaining probability mass exhausted after {drawn} draws")]
    ExhaustedMass { drawn: usize },
    #[error("table invariant violated: {0}")]
    Corrupt(String),
}

// ---------------------------------------------------------------------------
// Order-statistic treap keyed (norm desc, index asc).

type Link = Option<Box<Node>>;

#[derive(Debug)]
struct Node {
    norm: f64,
    index: usize,
    priority: u64,
    size: usize,
    left: Link,
    right: Link,
}

fn subtree_size(link: &Link) -> usize {
    link.as_ref().map_or(0, |n| n.size)
}

impl Node {
    fn refresh(&mut self) {
        self.size = 1 + subtree_size(&self.left) + subtree_size(&self.right);
    }
}

/// `(a, i)` comes before `(b, j)` in decreasing-norm, ascending-index order.
fn precedes(a: f64, i: usize, b: f64, j: usize) -> bool {
    a > b || (a == b && i < j)
}

fn rotate_right(link: &mut Link) {
    let mut node = link.take().expect("rotate_right on empty link");
    let mut pivot = node.left.take().expect("rotate_right without left child");
    node.left = pivot.right.take();
    node.refresh();
    pivot.right = Some(node);
    pivot.refresh();
    *link = Some(pivot);
}

fn rotate_left(link: &mut Link) {
    let mut node = link.take().expect("rotate_left on empty link");
    let mut pivot = node.right.take().expect("rotate_left without right child");
    node.right = pivot.left.take();
    node.refresh();
    pivot.left = Some(node);
    pivot.refresh();
    *link = Some(pivot);
}

fn insert(link: &mut Link, norm: f64, index: usize, priority: u64, visits: &mut u64) {
    *visits += 1;
    match link {
        None => {
            *link = Some(Box::new(Node {
                norm,
                index,
                priority,
                size: 1,
                left: None,
                right: None,
            }));
        }
        Some(node) => {
            if precedes(norm, index, node.norm, node.index) {
                insert(&mut node.left, norm, index, priority, visits);
                node.refresh();
                if node.left.as_ref().unwrap().priority > node.priority {
                    rotate_right(link);
                }
            } else {
                insert(&mut node.right, norm, index, priority, visits);
                node.refresh();
                if node.right.as_ref().unwrap().priority > node.priority {
                    rotate_left(link);
                }
            }
        }
    }
}

fn merge(a: Link, b: Link, visits: &mut u64) -> Link {
    match (a, b) {
        (None, b) => b,
        (a, None) => a,
        (Some(mut x), Some(mut y)) => {
            *visits += 1;
            if x.priority > y.priority {
                x.right = merge(x.right.take(), Some(y), visits);
                x.refresh();
                Some(x)
            } else {
                y.left = merge(Some(x), y.left.take(), visits);
                y.refresh();
                Some(y)
            }
        }
    }
}

fn remove(link: &mut Link, norm: f64, index: usize, visits: &mut u64) -> bool {
    *visits += 1;
    let Some(node) = link else {
        return false;
    };
    if norm == node.norm && index == node.index {
        let l = node.left.take();
        let r = node.right.take();
        *link = merge(l, r, visits);
        return true;
    }
    let removed = if precedes(norm, index, node.norm, node.index) {
        remove(&mut node.left, norm, index, visits)
    } else {
        remove(&mut node.right, norm, index, visits)
    };
    node.refresh();
    removed
}

/// 1-based rank of `(norm, index)` in the decreasing order (entries that
/// precede it, plus one). The entry is assumed present.
fn rank_of(mut link: &Link, norm: f64, index: usize, visits: &mut u64) -> usize {
    let mut preceding = 0;
    while let Some(node) = link {
        *visits += 1;
        if precedes(norm, index, node.norm, node.index) {
            link = &node.left;
        } else if norm == node.norm && index == node.index {
            return preceding + subtree_size(&node.left) + 1;
        } else {
            preceding += subtree_size(&node.left) + 1;
            link = &node.right;
        }
    }
    preceding + 1
}

/// Entry at 1-based rank `r` in decreasing order.
fn select(mut link: &Link, mut r: usize, visits: &mut u64) -> Option<(f64, usize)> {
    while let Some(node) = link {
        *visits += 1;
        let ls = subtree_size(&node.left);
        if r == ls + 1 {
            return Some((node.norm, node.index));
        }
        if r <= ls {
            link = &node.left;
        } else {
            r -= ls + 1;
            link = &node.right;
        }
    }
    None
}

fn inorder_indices(link: &Link, out: &mut Vec<usize>) {
    if let Some(node) = link {
        inorder_indices(&node.left, out);
        out.push(node.index);
        inorder_indices(&node.right, out);
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Instrumentation.

#[derive(Debug, Default)]
struct Counters {
    search_visits: AtomicU64,
    search_ops: AtomicU64,
    sample_visits: AtomicU64,
    sample_ops: AtomicU64,
    update_tree_visits: AtomicU64,
    update_ops: AtomicU64,
    cs_writes: AtomicU64,
}

/// Snapshot of cumulative instrumentation counters.
///
/// "Visits" count tree nodes touched (plus `CS` binary-search probes for
/// samples); `cs_writes` counts array slots written by the bulk prefix-sum
/// maintenance, which is the `O(N)` part of an update and is deliberately
/// tracked apart from the logarithmic tree work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableStats {
    pub search_visits: u64,
    pub search_ops: u64,
    pub sample_visits: u64,
    pub sample_ops: u64,
    pub update_tree_visits: u64,
    pub update_ops: u64,
    pub cs_writes: u64,
}

// ---------------------------------------------------------------------------
// The table.

/// Number of rejection attempts per without-replacement draw before falling
/// back to an exact linear walk over the remaining mass.
const WOR_REJECTION_CAP: usize = 32;

/// Default number of updates between from-scratch `CS` rebuilds.
pub const DEFAULT_REANCHOR_INTERVAL: usize = 1 << 16;

/// A batch drawn without replacement, with the realized conditional weights
/// `q_j = p_{I_j} / (1 - sum_{k<j} p_{I_k})` needed by the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct WorBatch {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug)]
pub struct WeightTable {
    norms: Vec<f64>,
    root: Link,
    cs: Vec<f64>,
    nonzero: usize,
    priority_state: u64,
    updates_since_anchor: usize,
    reanchor_interval: usize,
    counters: Counters,
}

impl WeightTable {
    /// Build a table from initial norms (all finite and nonnegative).
    pub fn new(norms: &[f64]) -> Result<Self, SamplerError> {
        if norms.is_empty() {
            return Err(SamplerError::EmptyTable);
        }
        for (index, &value) in norms.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(SamplerError::InvalidNorm { index, value });
            }
        }
        let mut table = WeightTable {
            norms: norms.to_vec(),
            root: None,
            cs: vec![0.0; norms.len()],
            nonzero: norms.iter().filter(|&&v| v > 0.0).count(),
            priority_state: 0x5851_f42d_4c95_7f2d,
            updates_since_anchor: 0,
            reanchor_interval: DEFAULT_REANCHOR_INTERVAL,
            counters: Counters::default(),
        };
        let mut sink = 0u64;
        for (index, &norm) in norms.iter().enumerate() {
            let priority = splitmix64(&mut table.priority_state);
            insert(&mut table.root, norm, index, priority, &mut sink);
        }
        table.rebuild_cs();
        Ok(table)
    }

    /// Change how many updates may elapse between `CS` re-anchors.
    pub fn set_reanchor_interval(&mut self, interval: usize) {
        self.reanchor_interval = interval.max(1);
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// The raw norms, addressed by original component index.
    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Cumulative sums over the decreasing order; entry `r-1` is the sum of
    /// the `r` largest norms.
    pub fn cumulative_sums(&self) -> &[f64] {
        &self.cs
    }

    /// Original component indices in decreasing-norm order.
    pub fn decreasing_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        inorder_indices(&self.root, &mut out);
        out
    }

    pub fn stats(&self) -> TableStats {
        TableStats {
            search_visits: self.counters.search_visits.load(Relaxed),
            search_ops: self.counters.search_ops.load(Relaxed),
            sample_visits: self.counters.sample_visits.load(Relaxed),
            sample_ops: self.counters.sample_ops.load(Relaxed),
            update_tree_visits: self.counters.update_tree_visits.load(Relaxed),
            update_ops: self.counters.update_ops.load(Relaxed),
            cs_writes: self.counters.cs_writes.load(Relaxed),
        }
    }

    pub fn reset_stats(&mut self) {
        self.counters = Counters::default();
    }

    fn validate_eps(&self, eps: f64) -> Result<(), SamplerError> {
        let max = 1.0 / self.len() as f64;
        if !eps.is_finite() || eps < 0.0 || eps > max {
            return Err(SamplerError::InvalidEpsilon { eps, max });
        }
        Ok(())
    }

    fn rebuild_cs(&mut self) {
        let order = self.decreasing_indices();
        let mut acc = 0.0;
        for (slot, &i) in order.iter().enumerate() {
            acc += self.norms[i];
            self.cs[slot] = acc;
        }
        self.counters.cs_writes.fetch_add(self.len() as u64, Relaxed);
        self.updates_since_anchor = 0;
    }

    /// Replace the norm of `index` with `new_norm`, maintaining the tree and
    /// the cumulative sums. Tree work is `O(log N)` expected; the prefix-sum
    /// maintenance is one contiguous `O(N)` pass.
    pub fn update(&mut self, index: usize, new_norm: f64) -> Result<(), SamplerError> {
        let n = self.len();
        if index >= n {
            return Err(SamplerError::IndexOutOfRange { index, len: n });
        }
        if !new_norm.is_finite() || new_norm < 0.0 {
            return Err(SamplerError::InvalidNorm {
                index,
                value: new_norm,
            });
        }
        let old = self.norms[index];
        self.counters.update_ops.fetch_add(1, Relaxed);
        if old == new_norm {
            return Ok(());
        }

        let mut visits = 0u64;
        let r_old = rank_of(&self.root, old, index, &mut visits);
        let removed = remove(&mut self.root, old, index, &mut visits);
        debug_assert!(removed, "entry for index {index} missing from tree");
        let priority = splitmix64(&mut self.priority_state);
        insert(&mut self.root, new_norm, index, priority, &mut visits);
        let r_new = rank_of(&self.root, new_norm, index, &mut visits);
        self.counters.update_tree_visits.fetch_add(visits, Relaxed);

        self.norms[index] = new_norm;
        if old > 0.0 && new_norm == 0.0 {
            self.nonzero -= 1;
        } else if old == 0.0 && new_norm > 0.0 {
            self.nonzero += 1;
        }

        // Shift-aware bulk maintenance of CS (0-based slots). Removing the
        // old entry at slot `ri` and inserting the new one at slot `rj`
        // changes a contiguous range of prefix sums; everything past
        // max(ri, rj) changes by the same delta.
        let (ri, rj) = (r_old - 1, r_new - 1);
        let delta = new_norm - old;
        let mut writes = 0u64;
        if rj <= ri {
            for k in (ri + 1)..n {
                self.cs[k] += delta;
            }
            writes += (n - ri - 1) as u64;
            let mut k = ri;
            loop {
                self.cs[k] = if k > 0 { self.cs[k - 1] } else { 0.0 } + new_norm;
                writes += 1;
                if k == rj {
                    break;
                }
                k -= 1;
            }
        } else {
            for k in ri..rj {
                self.cs[k] = self.cs[k + 1] - old;
            }
            for k in rj..n {
                self.cs[k] += delta;
            }
            writes += (rj - ri) as u64 + (n - rj) as u64;
        }
        self.counters.cs_writes.fetch_add(writes, Relaxed);

        self.updates_since_anchor += 1;
        if self.updates_since_anchor >= self.reanchor_interval {
            self.rebuild_cs();
        }
        Ok(())
    }

    /// Head size and normalizer for floor `eps`: the largest rank whose norm
    /// clears the running threshold, found by descending the tree, and
    /// `lambda = CS[rho] / (1 - (N - rho) eps)`.
    ///
    /// An all-zero table is degenerate only when `eps = 0`; with a positive
    /// floor it reports `(N, 0.0)` and the sampling operations fall back to
    /// the uniform distribution.
    pub fn find_rho(&self, eps: f64) -> Result<(usize, f64), SamplerError> {
        self.validate_eps(eps)?;
        self.counters.search_ops.fetch_add(1, Relaxed);
        let mut visits = 0u64;
        let out = self.find_rho_inner(eps, &mut visits);
        self.counters.search_visits.fetch_add(visits, Relaxed);
        out
    }

    fn find_rho_inner(&self, eps: f64, visits: &mut u64) -> Result<(usize, f64), SamplerError> {
        let n = self.len();
        if self.nonzero == 0 {
            if eps == 0.0 {
                return Err(SamplerError::DegenerateAllZero);
            }
            return Ok((n, 0.0));
        }
        let mut link = &self.root;
        let mut offset = 0usize;
        let mut rho = 0usize;
        while let Some(node) = link {
            *visits += 1;
            let r = offset + subtree_size(&node.left) + 1;
            if node.norm * (1.0 - (n - r) as f64 * eps) >= eps * self.cs[r - 1] {
                rho = r;
                offset = r;
                link = &node.right;
            } else {
                link = &node.left;
            }
        }
        // Rank 1's threshold reads a_max (1 - n eps) >= 0, so with a valid
        // floor it can only fail by rounding noise at the eps = 1/N
        // boundary; the rank-1 solution (top at 1 - (n-1) eps, rest at the
        // floor) is the correct limit there.
        if rho == 0 {
            rho = 1;
        }
        let lambda = self.cs[rho - 1] / (1.0 - (n - rho) as f64 * eps);
        Ok((rho, lambda))
    }

    /// The full sampling distribution for floor `eps` (an `O(N)` read used
    /// by metrics and tests; the sampling path never materializes it).
    pub fn probabilities(&self, eps: f64) -> Result<Vec<f64>, SamplerError> {
        let (rho, lambda) = self.find_rho(eps)?;
        let n = self.len();
        if self.nonzero == 0 {
            return Ok(vec![1.0 / n as f64; n]);
        }
        let order = self.decreasing_indices();
        let mut p = vec![eps; n];
        for &i in order.iter().take(rho) {
            p[i] = self.norms[i] / lambda;
        }
        Ok(p)
    }

    /// Probability that [`Self::sample`] would return `index` under `eps`.
    pub fn probability_of(&self, index: usize, eps: f64) -> Result<f64, SamplerError> {
        let n = self.len();
        if index >= n {
            return Err(SamplerError::IndexOutOfRange { index, len: n });
        }
        let (rho, lambda) = self.find_rho(eps)?;
        if self.nonzero == 0 {
            return Ok(1.0 / n as f64);
        }
        let mut sink = 0u64;
        let r = rank_of(&self.root, self.norms[index], index, &mut sink);
        Ok(if r <= rho { self.norms[index] / lambda } else { eps })
    }

    /// Draw one index from the optimal restricted distribution for `eps`.
    pub fn sample<R: Rng>(&self, eps: f64, rng: &mut R) -> Result<usize, SamplerError> {
        self.sample_with_prob(eps, rng).map(|(i, _)| i)
    }

    /// Draw one index and return its probability under the distribution it
    /// was drawn from.
    pub fn sample_with_prob<R: Rng>(
        &self,
        eps: f64,
        rng: &mut R,
    ) -> Result<(usize, f64), SamplerError> {
        self.validate_eps(eps)?;
        self.counters.sample_ops.fetch_add(1, Relaxed);
        let mut visits = 0u64;
        let out = self.sample_inner(eps, rng, &mut visits);
        self.counters.sample_visits.fetch_add(visits, Relaxed);
        out
    }

    fn sample_inner<R: Rng>(
        &self,
        eps: f64,
        rng: &mut R,
        visits: &mut u64,
    ) -> Result<(usize, f64), SamplerError> {
        let n = self.len();
        if self.nonzero == 0 {
            if eps == 0.0 {
                return Err(SamplerError::DegenerateAllZero);
            }
            return Ok((rng.gen_range(0..n), 1.0 / n as f64));
        }
        let (rho, lambda) = self.find_rho_inner(eps, visits)?;
        let tail_mass = (n - rho) as f64 * eps;
        if tail_mass > 0.0 && rng.gen_bool(tail_mass) {
            let r = rng.gen_range(rho + 1..=n);
            let (_, index) = select(&self.root, r, visits).expect("rank in range");
            return Ok((index, eps));
        }
        // Head draw: invert the conditional CDF CS[r] / CS[rho] by binary
        // search for the first rank whose prefix sum reaches the target.
        let target = rng.gen::<f64>() * self.cs[rho - 1];
        let mut lo = 0usize; // ranks (lo, hi]: first 0-based slot with cs >= target
        let mut hi = rho - 1;
        while lo < hi {
            *visits += 1;
            let mid = (lo + hi) / 2;
            if self.cs[mid] >= target {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let (_, index) = select(&self.root, hi + 1, visits).expect("rank in range");
        Ok((index, self.norms[index] / lambda))
    }

    /// Draw `m` distinct indices sequentially, each from the base
    /// distribution renormalized over the not-yet-chosen components, and
    /// return them with their realized conditional weights.
    ///
    /// Draws are by rejection against [`Self::sample`]; after
    /// `WOR_REJECTION_CAP` misses the draw falls back to an exact linear
    /// walk over the remaining mass, so the conditional law is exact either
    /// way.
    pub fn sample_without_replacement<R: Rng>(
        &self,
        eps: f64,
        m: usize,
        rng: &mut R,
    ) -> Result<WorBatch, SamplerError> {
        let n = self.len();
        if m > n {
            return Err(SamplerError::BatchTooLarge { m, n });
        }
        self.validate_eps(eps)?;
        // Freeze the base distribution once; the conditional law for later
        // draws renormalizes these fixed probabilities.
        let base = self.probabilities(eps)?;
        let mut chosen = vec![false; n];
        let mut indices = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        let mut remaining = 1.0f64;
        for j in 0..m {
            if remaining <= 0.0 {
                return Err(SamplerError::ExhaustedMass { drawn: j });
            }
            let mut pick = None;
            for _ in 0..WOR_REJECTION_CAP {
                let (i, _) = self.sample_with_prob(eps, rng)?;
                if !chosen[i] {
                    pick = Some(i);
                    break;
                }
            }
            let i = match pick {
                Some(i) => i,
                None => {
                    // Exact fallback: inverse-CDF walk over remaining mass.
                    let target = rng.gen::<f64>() * remaining;
                    let mut acc = 0.0;
                    let mut found = None;
                    for (i, &pi) in base.iter().enumerate() {
                        if chosen[i] {
                            continue;
                        }
                        acc += pi;
                        found = Some(i);
                        if acc >= target {
                            break;
                        }
                    }
                    found.ok_or(SamplerError::ExhaustedMass { drawn: j })?
                }
            };
            chosen[i] = true;
            indices.push(i);
            // The true conditional weight never exceeds 1; division noise can.
            weights.push((base[i] / remaining).min(1.0));
            remaining -= base[i];
        }
        Ok(WorBatch { indices, weights })
    }

    /// Rebuild every derived structure from the raw norms and compare.
    ///
    /// Checks subtree sizes, the heap property on priorities, the inorder
    /// key sequence against a from-scratch sort, and `CS` against
    /// from-scratch cumulative sums within `tol` (scaled by the total mass).
    pub fn validate_full(&self, tol: f64) -> Result<(), SamplerError> {
        let n = self.len();
        let size = subtree_size(&self.root);
        if size != n {
            return Err(SamplerError::Corrupt(format!(
                "tree holds {size} entries, norm table holds {n}"
            )));
        }
        check_structure(&self.root)?;

        let inorder = self.decreasing_indices();
        let mut expected: Vec<usize> = (0..n).collect();
        expected.sort_by(|&i, &j| {
            self.norms[j]
                .partial_cmp(&self.norms[i])
                .unwrap()
                .then(i.cmp(&j))
        });
        if inorder != expected {
            return Err(SamplerError::Corrupt(
                "inorder traversal disagrees with sorted norms".into(),
            ));
        }

        let scale = self.cs[n - 1].abs().max(1.0);
        let mut acc = 0.0;
        for (slot, &i) in inorder.iter().enumerate() {
            acc += self.norms[i];
            if (self.cs[slot] - acc).abs() > tol * scale {
                return Err(SamplerError::Corrupt(format!(
                    "cs[{slot}] = {} but from-scratch sum is {acc}",
                    self.cs[slot]
                )));
            }
        }

        let nonzero = self.norms.iter().filter(|&&v| v > 0.0).count();
        if nonzero != self.nonzero {
            return Err(SamplerError::Corrupt(format!(
                "nonzero cache {} but {} norms are positive",
                self.nonzero, nonzero
            )));
        }
        Ok(())
    }
}

fn check_structure(link: &Link) -> Result<(), SamplerError> {
    let Some(node) = link else { return Ok(()) };
    let expect = 1 + subtree_size(&node.left) + subtree_size(&node.right);
    if node.size != expect {
        return Err(SamplerError::Corrupt(format!(
            "size cache {} at index {} should be {expect}",
            node.size, node.index
        )));
    }
    for c in [&node.left, &node.right].into_iter().flatten() {
        if c.priority > node.priority {
            return Err(SamplerError::Corrupt(
                "treap heap property violated".into(),
            ));
        }
        if !precedes(c.norm, c.index, node.norm, node.index)
            && !precedes(node.norm, node.index, c.norm, c.index)
        {
            return Err(SamplerError::Corrupt("duplicate tree key".into()));
        }
    }
    if let Some(l) = &node.left {
        if !precedes(l.norm, l.index, node.norm, node.index) {
            // The rightmost entry of the left subtree must still precede the
            // node, but checking the child alone catches local corruption;
            // the inorder comparison in validate_full covers the rest.
            return Err(SamplerError::Corrupt("left child out of order".into()));
        }
    }
    check_structure(&node.left)?;
    check_structure(&node.right)
}
