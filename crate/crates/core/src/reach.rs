//! Exact star-set reachability through fully connected and ReLU layers,
//! with ReLU case splitting and discrepancy-metric extraction.
//!
//! A star set is `{c + V a : C a <= d, lb <= a <= ub}` — the affine image of
//! a polytope in coefficient space. Affine layers map the center and basis
//! and leave the predicate untouched, so the coefficient space is shared all
//! the way from the input set to every output set; that is what lets an LP
//! witness at the output be mapped back to a concrete input. A ReLU layer
//! splits a set in two wherever a neuron's range straddles zero. Splitting is
//! exact but can grow exponentially, so a set budget caps it, beyond which
//! remaining members fall back to a sound interval hull.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, LpOutcome};
use crate::merge::MergedNetwork;
use crate::network::{Layer, Network};

/// Bounds this close to zero are treated as a stable sign when deciding how a
/// ReLU acts on a neuron. LP optima carry ~1e-15 arithmetic noise; without a
/// snap, a merged self-pair would split on phantom crossings of width 1e-16.
const RELU_DECISION_TOL: f64 = 1e-12;

/// `{c + V a : C a <= d, lb <= a <= ub}` over a finite coefficient box.
#[derive(Clone, Debug)]
pub struct StarSet {
    pub center: Array1<f64>,
    /// One generator per column, `n x m`.
    pub basis: Array2<f64>,
    /// Predicate rows `C`, `p x m`.
    pub constraints: Array2<f64>,
    /// Predicate right-hand side `d`.
    pub rhs: Array1<f64>,
    pub alpha_lb: Array1<f64>,
    pub alpha_ub: Array1<f64>,
}

impl StarSet {
    pub fn new(
        center: Array1<f64>,
        basis: Array2<f64>,
        constraints: Array2<f64>,
        rhs: Array1<f64>,
        alpha_lb: Array1<f64>,
        alpha_ub: Array1<f64>,
    ) -> Result<Self> {
        let n = center.len();
        let m = basis.ncols();
        if basis.nrows() != n {
            return Err(Error::Validation(format!(
                "basis has {} rows for a {n}-dimensional center",
                basis.nrows()
            )));
        }
        if constraints.nrows() != rhs.len() {
            return Err(Error::Validation("constraint/rhs row count mismatch".into()));
        }
        if constraints.nrows() > 0 && constraints.ncols() != m {
            return Err(Error::Validation(format!(
                "constraints have {} columns for {m} generators",
                constraints.ncols()
            )));
        }
        if alpha_lb.len() != m || alpha_ub.len() != m {
            return Err(Error::Validation("alpha box length mismatch".into()));
        }
        for j in 0..m {
            if !alpha_lb[j].is_finite() || !alpha_ub[j].is_finite() || alpha_lb[j] > alpha_ub[j] {
                return Err(Error::Validation(format!(
                    "alpha {j} has invalid box [{}, {}]",
                    alpha_lb[j], alpha_ub[j]
                )));
            }
        }
        Ok(StarSet {
            center,
            basis,
            constraints,
            rhs,
            alpha_lb,
            alpha_ub,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.basis.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    /// Map a coefficient vector to the point it represents.
    pub fn alpha_to_point(&self, alpha: &Array1<f64>) -> Array1<f64> {
        &self.center + &self.basis.dot(alpha)
    }

    pub fn is_feasible(&self) -> Result<bool> {
        if self.num_constraints() == 0 {
            return Ok(true); // the alpha box is validated non-empty
        }
        lp::is_feasible(&self.constraints, &self.rhs, &self.alpha_lb, &self.alpha_ub)
    }

    /// Interval bounds of coordinate `i` ignoring the predicate rows; exact
    /// when there are none, otherwise a sound outer estimate.
    pub fn coordinate_box_bounds(&self, i: usize) -> (f64, f64) {
        let mut lo = self.center[i];
        let mut hi = self.center[i];
        for j in 0..self.num_generators() {
            let v = self.basis[(i, j)];
            let a = v * self.alpha_lb[j];
            let b = v * self.alpha_ub[j];
            lo += a.min(b);
            hi += a.max(b);
        }
        (lo, hi)
    }

    fn coord_lp(&self, i: usize) -> Result<LinearProgram> {
        LinearProgram::new(
            self.basis.row(i).to_owned(),
            self.constraints.clone(),
            self.rhs.clone(),
            self.alpha_lb.clone(),
            self.alpha_ub.clone(),
        )
    }

    /// Maximum of coordinate `i` over the set, with the attaining coefficients.
    pub fn coord_max(&self, i: usize) -> Result<(f64, Array1<f64>)> {
        match lp::maximize(&self.coord_lp(i)?)? {
            LpOutcome::Optimal { value, point } => Ok((self.center[i] + value, point)),
            LpOutcome::Infeasible => Err(Error::Lp("bound query on an empty star".into())),
        }
    }

    pub fn coord_min(&self, i: usize) -> Result<(f64, Array1<f64>)> {
        match lp::minimize(&self.coord_lp(i)?)? {
            LpOutcome::Optimal { value, point } => Ok((self.center[i] + value, point)),
            LpOutcome::Infeasible => Err(Error::Lp("bound query on an empty star".into())),
        }
    }

    /// `[min, max]` of coordinate `i`; exact for feasible stars.
    pub fn coordinate_bounds(&self, i: usize) -> Result<(f64, f64)> {
        if self.num_constraints() == 0 {
            return Ok(self.coordinate_box_bounds(i));
        }
        Ok((self.coord_min(i)?.0, self.coord_max(i)?.0))
    }

    /// Membership test: is there a coefficient vector mapping to `point`,
    /// within `tol` per coordinate?
    pub fn contains(&self, point: &Array1<f64>, tol: f64) -> Result<bool> {
        if point.len() != self.dim() {
            return Err(Error::Validation("membership point has wrong dimension".into()));
        }
        let n = self.dim();
        let m = self.num_generators();
        let p = self.num_constraints();
        // V a <= (point - c) + tol and -V a <= -(point - c) + tol, plus the
        // existing predicate rows.
        let mut c = Array2::zeros((p + 2 * n, m));
        let mut d = Array1::zeros(p + 2 * n);
        for r in 0..p {
            c.row_mut(r).assign(&self.constraints.row(r));
            d[r] = self.rhs[r];
        }
        for i in 0..n {
            let diff = point[i] - self.center[i];
            c.row_mut(p + i).assign(&self.basis.row(i));
            d[p + i] = diff + tol;
            c.row_mut(p + n + i).assign(&self.basis.row(i).mapv(|v| -v));
            d[p + n + i] = -diff + tol;
        }
        lp::is_feasible(&c, &d, &self.alpha_lb, &self.alpha_ub)
    }

    /// Uniform sample from the coefficient box; only valid for stars without
    /// predicate rows (such as l-inf input balls).
    pub fn sample_box(&self, rng: &mut impl Rng) -> Result<Array1<f64>> {
        if self.num_constraints() != 0 {
            return Err(Error::Validation(
                "box sampling requires a star without predicate rows".into(),
            ));
        }
        let alpha = Array1::from_iter((0..self.num_generators()).map(|j| {
            if self.alpha_lb[j] == self.alpha_ub[j] {
                self.alpha_lb[j]
            } else {
                rng.random_range(self.alpha_lb[j]..self.alpha_ub[j])
            }
        }));
        Ok(self.alpha_to_point(&alpha))
    }
}

/// Star set for the l-inf ball of radius `epsilon` around `x0`, restricted to
/// the listed dimensions (all of them when `dims` is `None`): one generator
/// per perturbed dimension, coefficients boxed to `[-1, 1]`.
pub fn star_from_linf_ball(
    x0: &Array1<f64>,
    epsilon: f64,
    dims: Option<&[usize]>,
) -> Result<StarSet> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(Error::Validation(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let n = x0.len();
    let all: Vec<usize>;
    let dims = match dims {
        Some(d) => d,
        None => {
            all = (0..n).collect();
            &all
        }
    };
    let mut seen = vec![false; n];
    for &d in dims {
        if d >= n {
            return Err(Error::Validation(format!("perturbed dim {d} out of range 0..{n}")));
        }
        if seen[d] {
            return Err(Error::Validation(format!("perturbed dim {d} listed twice")));
        }
        seen[d] = true;
    }
    let m = dims.len();
    let mut basis = Array2::zeros((n, m));
    for (j, &d) in dims.iter().enumerate() {
        basis[(d, j)] = epsilon;
    }
    StarSet::new(
        x0.clone(),
        basis,
        Array2::zeros((0, m)),
        Array1::zeros(0),
        Array1::from_elem(m, -1.0),
        Array1::from_elem(m, 1.0),
    )
}

/// Indices of the `k` largest entries of `x` (ties toward the lower index),
/// returned in ascending index order. Used to pick which pixels an input
/// star perturbs.
pub fn select_brightest_dims(x: &Array1<f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k.min(x.len()));
    idx.sort_unstable();
    idx
}

/// Sequential-order matrix product. Accumulating strictly in `k` order makes
/// the two halves of a merged self-pair bit-identical through block-diagonal
/// layers (zero blocks contribute exact no-ops), which is what lets the
/// comparison layer cancel to exactly zero.
fn mat_mul_seq(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, kk) = a.dim();
    let m = b.ncols();
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for t in 0..kk {
            let av = a[(i, t)];
            if av == 0.0 {
                // still perform the exact no-op ordering: adding +-0 never
                // changes a sum, so skipping is safe and faster
                continue;
            }
            for j in 0..m {
                out[(i, j)] += av * b[(t, j)];
            }
        }
    }
    out
}

fn mat_vec_seq(a: &Array2<f64>, x: &Array1<f64>, add: &Array1<f64>) -> Array1<f64> {
    let (n, k) = a.dim();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut acc = add[i];
        for t in 0..k {
            acc += a[(i, t)] * x[t];
        }
        out[i] = acc;
    }
    out
}

/// Image of a star under the affine map `x -> Wx + b`: the center moves, the
/// generators are transformed, the predicate is untouched.
pub fn affine_step(s: &StarSet, weight: &Array2<f64>, bias: &Array1<f64>) -> Result<StarSet> {
    if weight.ncols() != s.dim() {
        return Err(Error::Validation(format!(
            "affine map takes dimension {}, star has {}",
            weight.ncols(),
            s.dim()
        )));
    }
    if bias.len() != weight.nrows() {
        return Err(Error::Validation("bias length mismatch".into()));
    }
    Ok(StarSet {
        center: mat_vec_seq(weight, &s.center, bias),
        basis: mat_mul_seq(weight, &s.basis),
        constraints: s.constraints.clone(),
        rhs: s.rhs.clone(),
        alpha_lb: s.alpha_lb.clone(),
        alpha_ub: s.alpha_ub.clone(),
    })
}

/// Result of exact ReLU splitting on one star.
#[derive(Clone, Debug)]
pub enum ReluSplit {
    Sets(Vec<StarSet>),
    /// Splitting would have produced more than the allowed number of sets.
    OverBudget,
}

fn zero_row(star: &mut StarSet, i: usize) {
    star.center[i] = 0.0;
    star.basis.row_mut(i).fill(0.0);
}

fn push_constraint(star: &mut StarSet, row: &Array1<f64>, bound: f64) {
    let m = star.num_generators();
    let p = star.num_constraints();
    let mut c = Array2::zeros((p + 1, m));
    if p > 0 {
        c.slice_mut(ndarray::s![0..p, ..]).assign(&star.constraints);
    }
    c.row_mut(p).assign(row);
    let mut d = Array1::zeros(p + 1);
    if p > 0 {
        d.slice_mut(ndarray::s![0..p]).assign(&star.rhs);
    }
    d[p] = bound;
    star.constraints = c;
    star.rhs = d;
}

enum NeuronSign {
    NonNegative,
    NonPositive,
    Crossing,
}

fn neuron_sign(star: &StarSet, i: usize) -> Result<NeuronSign> {
    let (lo_box, hi_box) = star.coordinate_box_bounds(i);
    if lo_box >= -RELU_DECISION_TOL {
        return Ok(NeuronSign::NonNegative);
    }
    if hi_box <= RELU_DECISION_TOL {
        return Ok(NeuronSign::NonPositive);
    }
    if star.num_constraints() == 0 {
        // the box bound is exact here
        return Ok(NeuronSign::Crossing);
    }
    let (lo, _) = star.coord_min(i).map_err(|e| lp_context(e, i))?;
    if lo >= -RELU_DECISION_TOL {
        return Ok(NeuronSign::NonNegative);
    }
    let (hi, _) = star.coord_max(i).map_err(|e| lp_context(e, i))?;
    if hi <= RELU_DECISION_TOL {
        return Ok(NeuronSign::NonPositive);
    }
    Ok(NeuronSign::Crossing)
}

fn lp_context(e: Error, neuron: usize) -> Error {
    match e {
        Error::Lp(msg) => Error::Lp(format!("neuron {neuron}: {msg}")),
        other => other,
    }
}

/// Exact image of a star under ReLU. Neurons are processed in ascending
/// index order, depth-first over split children with the `y_i <= 0` branch
/// first. Returns `OverBudget` as soon as the number of live sets would
/// exceed `max_sets`.
pub fn relu_step_exact(s: &StarSet, max_sets: usize) -> Result<ReluSplit> {
    if max_sets == 0 {
        return Ok(ReluSplit::OverBudget);
    }
    let n = s.dim();
    let mut done: Vec<StarSet> = Vec::new();
    let mut stack: Vec<(StarSet, usize)> = vec![(s.clone(), 0)];
    while let Some((mut star, start)) = stack.pop() {
        let mut i = start;
        while i < n {
            match neuron_sign(&star, i)? {
                NeuronSign::NonNegative => {} // identity on this row
                NeuronSign::NonPositive => zero_row(&mut star, i),
                NeuronSign::Crossing => {
                    if done.len() + stack.len() + 2 > max_sets {
                        return Ok(ReluSplit::OverBudget);
                    }
                    // Both children are non-empty by construction: the LP just
                    // produced strictly negative and strictly positive values
                    // of y_i, so each branch has a witness.
                    let row = star.basis.row(i).to_owned();
                    let c_i = star.center[i];
                    // child B: y_i >= 0, row kept
                    let mut pos_child = star.clone();
                    push_constraint(&mut pos_child, &row.mapv(|v| -v), c_i);
                    stack.push((pos_child, i + 1));
                    // child A: y_i <= 0, row zeroed; continue in place
                    push_constraint(&mut star, &row, -c_i);
                    zero_row(&mut star, i);
                }
            }
            i += 1;
        }
        done.push(star);
    }
    Ok(ReluSplit::Sets(done))
}

/// Sound over-approximation of the ReLU image: interval hull of the star,
/// then ReLU applied to the interval endpoints, returned as a fresh box star.
pub fn relu_step_box(s: &StarSet) -> Result<StarSet> {
    let n = s.dim();
    let mut lo = Array1::zeros(n);
    let mut hi = Array1::zeros(n);
    for i in 0..n {
        let (l, h) = s.coordinate_bounds(i).map_err(|e| lp_context(e, i))?;
        lo[i] = l.max(0.0);
        hi[i] = h.max(0.0);
    }
    let center = (&lo + &hi) * 0.5;
    // Half-widths are rounded outward so the hull is never a hair short.
    let mut basis = Array2::zeros((n, n));
    for i in 0..n {
        basis[(i, i)] = (hi[i] - center[i]).max(center[i] - lo[i]);
    }
    StarSet::new(
        center,
        basis,
        Array2::zeros((0, n)),
        Array1::zeros(0),
        Array1::from_elem(n, -1.0),
        Array1::from_elem(n, 1.0),
    )
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ReachOptions {
    /// Cap on the union size during splitting.
    pub max_sets: usize,
    /// Replace members that would blow the budget with their interval hull
    /// instead of failing.
    pub box_fallback: bool,
}

impl Default for ReachOptions {
    fn default() -> Self {
        ReachOptions {
            max_sets: 4096,
            box_fallback: true,
        }
    }
}

/// Union of output stars with propagation statistics.
#[derive(Clone, Debug)]
pub struct ReachResult {
    pub sets: Vec<StarSet>,
    pub splits_performed: usize,
    pub overapprox_used: bool,
    pub per_layer_set_counts: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReachSummary {
    pub set_count: usize,
    pub splits_performed: usize,
    pub overapprox_used: bool,
    pub per_layer_set_counts: Vec<usize>,
}

impl ReachResult {
    pub fn summary(&self) -> ReachSummary {
        ReachSummary {
            set_count: self.sets.len(),
            splits_performed: self.splits_performed,
            overapprox_used: self.overapprox_used,
            per_layer_set_counts: self.per_layer_set_counts.clone(),
        }
    }

    /// Is `point` in any member of the union?
    pub fn contains(&self, point: &Array1<f64>, tol: f64) -> Result<bool> {
        for s in &self.sets {
            if s.contains(point, tol)? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Propagate an input star through the network layer by layer, splitting at
/// ReLU layers. When the union would exceed `max_sets`, remaining members of
/// that layer switch to the interval-hull fallback (or the call fails when
/// the fallback is disabled).
pub fn reach_network(net: &Network, input: &StarSet, opts: &ReachOptions) -> Result<ReachResult> {
    if input.dim() != net.input_dim() {
        return Err(Error::Dimension {
            layer: 0,
            expected: net.input_dim(),
            got: input.dim(),
        });
    }
    if !input.is_feasible()? {
        return Err(Error::Validation("input star is empty".into()));
    }
    let mut sets = vec![input.clone()];
    let mut splits_performed = 0usize;
    let mut overapprox_used = false;
    let mut per_layer_set_counts = Vec::with_capacity(net.depth());

    for (li, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::FullyConnected { weight, bias } => {
                sets = sets
                    .iter()
                    .map(|s| affine_step(s, weight, bias))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| layer_context(e, li))?;
            }
            Layer::Relu { .. } => {
                let members = std::mem::take(&mut sets);
                let total = members.len();
                for (idx, member) in members.into_iter().enumerate() {
                    // Reserve one slot for each still-unprocessed member so a
                    // greedy early split cannot starve the rest.
                    let reserved = total - idx - 1;
                    let budget = opts.max_sets.saturating_sub(sets.len() + reserved);
                    match relu_step_exact(&member, budget).map_err(|e| layer_context(e, li))? {
                        ReluSplit::Sets(children) => {
                            splits_performed += children.len() - 1;
                            sets.extend(children);
                        }
                        ReluSplit::OverBudget => {
                            if !opts.box_fallback {
                                return Err(Error::OverBudget {
                                    layer: li,
                                    live: sets.len() + reserved + 2,
                                    max_sets: opts.max_sets,
                                });
                            }
                            overapprox_used = true;
                            sets.push(relu_step_box(&member).map_err(|e| layer_context(e, li))?);
                        }
                    }
                }
            }
        }
        per_layer_set_counts.push(sets.len());
    }
    Ok(ReachResult {
        sets,
        splits_performed,
        overapprox_used,
        per_layer_set_counts,
    })
}

fn layer_context(e: Error, layer: usize) -> Error {
    match e {
        Error::Lp(msg) => Error::Lp(format!("layer {layer}: {msg}")),
        other => other,
    }
}

/// Per-coordinate bounds of the output discrepancy together with the two
/// summary metrics: `delta_max`, the largest magnitude any coordinate can
/// reach, and `delta_tilde_max`, the signed per-coordinate maxima.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `max_j max(upper_j, -lower_j)`: the infinity-norm radius of the hull.
    pub delta_max: f64,
    /// Signed per-coordinate maxima (equals `upper`).
    pub delta_tilde_max: Vec<f64>,
    /// Per-coordinate maximal magnitudes `max(|lower_j|, |upper_j|)`, the
    /// magnitude reading of the same statistic.
    pub delta_tilde_mag: Vec<f64>,
    pub set_count: usize,
    pub wall_time_s: f64,
}

/// Extract per-coordinate bounds from a reach result over a merged network's
/// output space. Bound queries across (set, coordinate) pairs run in
/// parallel; results are reduced in index order so reports are reproducible.
pub fn discrepancy_bounds(result: &ReachResult) -> Result<DiscrepancyReport> {
    let start = Instant::now();
    if result.sets.is_empty() {
        return Err(Error::Validation("empty reach result".into()));
    }
    let n = result.sets[0].dim();
    let per_set: Vec<Vec<(f64, f64)>> = result
        .sets
        .par_iter()
        .map(|s| (0..n).map(|j| s.coordinate_bounds(j)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut lower = vec![f64::INFINITY; n];
    let mut upper = vec![f64::NEG_INFINITY; n];
    for bounds in &per_set {
        for j in 0..n {
            lower[j] = lower[j].min(bounds[j].0);
            upper[j] = upper[j].max(bounds[j].1);
        }
    }
    let delta_tilde_mag: Vec<f64> = lower
        .iter()
        .zip(&upper)
        .map(|(&l, &u)| l.abs().max(u.abs()))
        .collect();
    let delta_max = lower
        .iter()
        .zip(&upper)
        .map(|(&l, &u)| u.max(-l))
        .fold(0.0f64, f64::max);
    Ok(DiscrepancyReport {
        delta_tilde_max: upper.clone(),
        delta_tilde_mag,
        delta_max,
        set_count: result.sets.len(),
        wall_time_s: start.elapsed().as_secs_f64(),
        lower,
        upper,
    })
}

/// Reach the merged network over `input` and extract the discrepancy report;
/// the report's wall time covers the whole computation.
pub fn merged_discrepancy(
    merged: &MergedNetwork,
    input: &StarSet,
    opts: &ReachOptions,
) -> Result<(ReachResult, DiscrepancyReport)> {
    let start = Instant::now();
    let result = reach_network(merged.net(), input, opts)?;
    let mut report = discrepancy_bounds(&result)?;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((result, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merge::merge;
    use crate::training::init_mlp;
    use ndarray::{arr1, arr2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn unit_interval_star() -> StarSet {
        // 1-D star covering y in [-1, 1]
        StarSet::new(
            arr1(&[0.0]),
            arr2(&[[1.0]]),
            Array2::zeros((0, 1)),
            Array1::zeros(0),
            arr1(&[-1.0]),
            arr1(&[1.0]),
        )
        .unwrap()
    }

    #[test]
    fn linf_ball_construction() {
        let s = star_from_linf_ball(&arr1(&[0.5, 0.25, 0.75]), 0.1, Some(&[0, 1])).unwrap();
        assert_eq!(s.num_generators(), 2);
        assert_eq!(s.basis[(0, 0)], 0.1);
        assert_eq!(s.basis[(1, 1)], 0.1);
        assert_eq!(s.basis[(2, 0)], 0.0);
        assert_eq!(s.coordinate_box_bounds(0), (0.4, 0.6));
        assert_eq!(s.coordinate_box_bounds(2), (0.75, 0.75));

        let degenerate = star_from_linf_ball(&arr1(&[1.0, -2.0]), 0.0, None).unwrap();
        assert_eq!(degenerate.coordinate_bounds(0).unwrap(), (1.0, 1.0));
        assert_eq!(degenerate.coordinate_bounds(1).unwrap(), (-2.0, -2.0));

        assert!(star_from_linf_ball(&arr1(&[0.0]), -0.1, None).is_err());
    }

    #[test]
    fn ball_samples_are_members() {
        let x0 = arr1(&[0.3, 0.7, 0.1, 0.9]);
        let s = star_from_linf_ball(&x0, 0.2, Some(&[1, 3])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let p = s.sample_box(&mut rng).unwrap();
            assert!(s.contains(&p, 1e-9).unwrap());
        }
        // a point outside is rejected
        let mut outside = x0.clone();
        outside[1] += 0.5;
        assert!(!s.contains(&outside, 1e-9).unwrap());
    }

    #[test]
    fn affine_step_identity_and_scaling() {
        let s = star_from_linf_ball(&arr1(&[1.0, 2.0]), 0.5, None).unwrap();
        let id = affine_step(&s, &Array2::eye(2), &Array1::zeros(2)).unwrap();
        assert_eq!(id.center, s.center);
        assert_eq!(id.basis, s.basis);

        let doubled = affine_step(&s, &(Array2::eye(2) * 2.0), &Array1::zeros(2)).unwrap();
        assert_eq!(doubled.coordinate_box_bounds(0), (1.0, 3.0));
        assert_eq!(doubled.coordinate_box_bounds(1), (3.0, 5.0));
    }

    #[test]
    fn affine_step_pointwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = star_from_linf_ball(&arr1(&[0.1, -0.4, 0.8]), 0.3, None).unwrap();
        let w = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let b = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
        let mapped = affine_step(&s, &w, &b).unwrap();
        for _ in 0..500 {
            let alpha = Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0));
            let before = s.alpha_to_point(&alpha);
            let after = mapped.alpha_to_point(&alpha);
            let expect = w.dot(&before) + &b;
            for (a, e) in after.iter().zip(expect.iter()) {
                assert!((a - e).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn relu_split_one_dimensional() {
        let s = unit_interval_star();
        let ReluSplit::Sets(children) = relu_step_exact(&s, 16).unwrap() else {
            panic!("unexpected budget exhaustion");
        };
        assert_eq!(children.len(), 2);
        // child A: the degenerate image {0} of y <= 0
        assert_eq!(children[0].coordinate_bounds(0).unwrap(), (0.0, 0.0));
        // child B: [0, 1]
        let (lo, hi) = children[1].coordinate_bounds(0).unwrap();
        assert!(lo.abs() <= 1e-9 && (hi - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn relu_stable_positive_passes_through() {
        let s = star_from_linf_ball(&arr1(&[2.0, 3.0]), 0.5, None).unwrap();
        let ReluSplit::Sets(children) = relu_step_exact(&s, 4).unwrap() else {
            panic!();
        };
        assert_eq!(children.len(), 1);
        assert_eq!(children[0].center, s.center);
        assert_eq!(children[0].basis, s.basis);
    }

    #[test]
    fn relu_two_independent_crossings_give_four_children() {
        let s = star_from_linf_ball(&arr1(&[0.0, 0.0]), 1.0, None).unwrap();
        let ReluSplit::Sets(children) = relu_step_exact(&s, 16).unwrap() else {
            panic!();
        };
        assert_eq!(children.len(), 4);
        for c in &children {
            assert!(c.is_feasible().unwrap());
        }
    }

    #[test]
    fn relu_budget_exhaustion_reported() {
        let s = star_from_linf_ball(&arr1(&[0.0, 0.0, 0.0]), 1.0, None).unwrap();
        assert!(matches!(relu_step_exact(&s, 4).unwrap(), ReluSplit::OverBudget));
        assert!(matches!(relu_step_exact(&s, 8).unwrap(), ReluSplit::Sets(v) if v.len() == 8));
    }

    #[test]
    fn relu_box_cases() {
        let positive = star_from_linf_ball(&arr1(&[2.0]), 0.5, None).unwrap();
        let hull = relu_step_box(&positive).unwrap();
        assert_eq!(hull.coordinate_bounds(0).unwrap(), (1.5, 2.5));

        let negative = star_from_linf_ball(&arr1(&[-1.5]), 0.5, None).unwrap();
        let hull = relu_step_box(&negative).unwrap();
        assert_eq!(hull.coordinate_bounds(0).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn relu_box_contains_exact_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = star_from_linf_ball(&arr1(&[0.2, -0.3, 0.1]), 0.8, None).unwrap();
        let hull = relu_step_box(&s).unwrap();
        for _ in 0..1000 {
            let p = s.sample_box(&mut rng).unwrap();
            let image = p.mapv(|v| v.max(0.0));
            assert!(hull.contains(&image, 1e-9).unwrap());
        }
    }

    #[test]
    fn reach_identity_network() {
        let net = Network::new(vec![Layer::identity(3)]).unwrap();
        let input = star_from_linf_ball(&arr1(&[0.1, 0.5, -0.2]), 0.25, None).unwrap();
        let result = reach_network(&net, &input, &ReachOptions::default()).unwrap();
        assert_eq!(result.sets.len(), 1);
        assert!(!result.overapprox_used);
        for i in 0..3 {
            assert_eq!(
                result.sets[0].coordinate_bounds(i).unwrap(),
                input.coordinate_bounds(i).unwrap()
            );
        }
    }

    #[test]
    fn merged_self_pair_reaches_exact_zero() {
        let net = init_mlp(&[3, 6, 2], 13).unwrap();
        let merged = merge(&net, &net).unwrap();
        let input = star_from_linf_ball(&arr1(&[0.4, 0.6, 0.2]), 0.3, None).unwrap();
        let (result, report) = merged_discrepancy(&merged, &input, &ReachOptions::default()).unwrap();
        assert!(!result.overapprox_used);
        assert_eq!(report.lower, vec![0.0, 0.0]);
        assert_eq!(report.upper, vec![0.0, 0.0]);
        assert_eq!(report.delta_max, 0.0);
    }

    #[test]
    fn reach_soundness_small_net() {
        let net = init_mlp(&[2, 4, 2], 17).unwrap();
        let input = star_from_linf_ball(&arr1(&[0.2, -0.1]), 0.5, None).unwrap();
        let result = reach_network(&net, &input, &ReachOptions::default()).unwrap();
        assert!(!result.overapprox_used);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let x = input.sample_box(&mut rng).unwrap();
            let y = net.forward(&x).unwrap();
            assert!(result.contains(&y, 1e-7).unwrap(), "output escaped the union");
        }
    }

    #[test]
    fn reach_exactness_witnesses() {
        let net = init_mlp(&[2, 4, 2], 23).unwrap();
        let input = star_from_linf_ball(&arr1(&[0.0, 0.0]), 0.6, None).unwrap();
        let result = reach_network(&net, &input, &ReachOptions::default()).unwrap();
        assert!(!result.overapprox_used);
        for j in 0..2 {
            let mut hi = f64::NEG_INFINITY;
            let mut hi_alpha = None;
            for s in &result.sets {
                let (v, alpha) = s.coord_max(j).unwrap();
                if v > hi {
                    hi = v;
                    hi_alpha = Some(alpha);
                }
            }
            let x = input.alpha_to_point(&hi_alpha.unwrap());
            let y = net.forward(&x).unwrap();
            assert!(
                (y[j] - hi).abs() <= 1e-6,
                "witness maps to {} but bound is {hi}",
                y[j]
            );
        }
    }

    #[test]
    fn interval_monotone_in_epsilon() {
        let net = init_mlp(&[2, 4, 2], 29).unwrap();
        let opts = ReachOptions::default();
        let mut prev: Option<Vec<(f64, f64)>> = None;
        for eps in [0.1, 0.2, 0.4] {
            let input = star_from_linf_ball(&arr1(&[0.1, 0.2]), eps, None).unwrap();
            let result = reach_network(&net, &input, &opts).unwrap();
            let report = discrepancy_bounds(&result).unwrap();
            let cur: Vec<(f64, f64)> = report.lower.iter().cloned().zip(report.upper.clone()).collect();
            if let Some(prev) = &prev {
                for (p, c) in prev.iter().zip(&cur) {
                    assert!(c.0 <= p.0 + 1e-9 && c.1 >= p.1 - 1e-9);
                }
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn dependent_crossings_prune_infeasible_patterns() {
        // y0 = a, y1 = -a over a in [-1,1]: the (+,+) and (-,-) sign
        // patterns are infeasible, so the split yields 2 sets, not 4.
        let s = StarSet::new(
            arr1(&[0.0, 0.0]),
            arr2(&[[1.0], [-1.0]]),
            Array2::zeros((0, 1)),
            Array1::zeros(0),
            arr1(&[-1.0]),
            arr1(&[1.0]),
        )
        .unwrap();
        let ReluSplit::Sets(children) = relu_step_exact(&s, 16).unwrap() else {
            panic!();
        };
        assert_eq!(children.len(), 2);
    }

    #[test]
    fn brightest_dims_selection() {
        let x = arr1(&[0.1, 0.9, 0.5, 0.9, 0.2]);
        assert_eq!(select_brightest_dims(&x, 3), vec![1, 2, 3]);
        assert_eq!(select_brightest_dims(&x, 2), vec![1, 3]);
        assert_eq!(select_brightest_dims(&x, 99), vec![0, 1, 2, 3, 4]);
    }
}
