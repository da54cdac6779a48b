//! Terminal-hitting reach-avoid backward recursion.
//!
//! The exact recursion (see [`exact`]) is
//!
//! ```text
//! V_N(x) = 1_T(x)
//! V_k(x) = 1_K(x) · E_{y ∼ Q(·|x, π_k(x))}[V_{k+1}(y)]
//! ```
//!
//! and `V_0(x₀)` is the probability of sitting in the target set at time `N`
//! while staying in the safe set at times `0..N`. [`value_recursion`] replaces
//! each expectation with the embedding estimate; [`value_recursion_max`]
//! takes the maximum over a finite control grid at every step.

use std::fmt;
use std::sync::Arc;

use crate::embedding::{EmbeddingEstimator, QueryBatch};
use crate::error::{ReachError, Result};
use crate::points::Points;

/// Membership predicate over the state space.
pub trait Region: Send + Sync + fmt::Debug {
    fn contains(&self, x: &[f64]) -> bool;

    /// The region as an axis-aligned box, when it is one.
    fn as_box(&self) -> Option<&BoxRegion> {
        None
    }
}

/// Closed axis-aligned box `{x : lower ≤ x ≤ upper}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(ReachError::dim(lower.len(), upper.len(), "box bounds"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(ReachError::Input(format!(
                "box lower bounds must not exceed upper bounds: {lower:?} / {upper:?}"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]ⁿ`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Strict interior membership.
    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l < *v && *v < *u)
    }

    /// Box scaled about its center by `factor`.
    pub fn inflated(&self, factor: f64) -> BoxRegion {
        let (lower, upper) = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                let c = 0.5 * (l + u);
                let h = 0.5 * (u - l) * factor;
                (c - h, c + h)
            })
            .unzip();
        BoxRegion { lower, upper }
    }
}

impl Region for BoxRegion {
    fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    fn as_box(&self) -> Option<&BoxRegion> {
        Some(self)
    }
}

/// Wraps an arbitrary closure as a [`Region`].
pub struct PredicateRegion<F> {
    name: String,
    predicate: F,
}

impl<F> PredicateRegion<F>
where
    F: Fn(&[f64]) -> bool + Send + Sync,
{
    pub fn new(name: impl Into<String>, predicate: F) -> Self {
        Self {
            name: name.into(),
            predicate,
        }
    }
}

impl<F> fmt::Debug for PredicateRegion<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PredicateRegion").field("name", &self.name).finish()
    }
}

impl<F> Region for PredicateRegion<F>
where
    F: Fn(&[f64]) -> bool + Send + Sync,
{
    fn contains(&self, x: &[f64]) -> bool {
        (self.predicate)(x)
    }
}

/// Markov control policy `u = π_k(x)`.
pub trait Policy: Send + Sync + fmt::Debug {
    fn control_dim(&self) -> usize;

    fn control(&self, k: usize, x: &[f64]) -> Vec<f64>;

    /// `π_k` does not depend on `k`.
    fn is_time_invariant(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!("{self:?}")
    }
}

/// `π_k(x) = u` for all `k` and `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn control_dim(&self) -> usize {
        self.0.len()
    }

    fn control(&self, _k: usize, _x: &[f64]) -> Vec<f64> {
        self.0.clone()
    }

    fn describe(&self) -> String {
        format!("constant {:?}", self.0)
    }
}

#[derive(Debug, Clone)]
pub enum PolicySpec {
    Fixed(Arc<dyn Policy>),
    /// Maximize over a finite grid of controls at every step.
    MaximalOverGrid {
        controls: Vec<Vec<f64>>,
        bounds: Option<BoxRegion>,
    },
}

impl PolicySpec {
    pub fn fixed(policy: impl Policy + 'static) -> Self {
        PolicySpec::Fixed(Arc::new(policy))
    }

    pub fn control_dim(&self) -> Option<usize> {
        match self {
            PolicySpec::Fixed(p) => Some(p.control_dim()),
            PolicySpec::MaximalOverGrid { controls, .. } => controls.first().map(Vec::len),
        }
    }
}

/// Safe set, target set, horizon and policy of a reach-avoid problem.
#[derive(Debug, Clone)]
pub struct ReachSpec {
    safe: Arc<dyn Region>,
    target: Arc<dyn Region>,
    horizon: usize,
    policy: PolicySpec,
}

impl ReachSpec {
    pub fn new(
        safe: Arc<dyn Region>,
        target: Arc<dyn Region>,
        horizon: usize,
        policy: PolicySpec,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(ReachError::Input("horizon must be at least 1".into()));
        }
        if let PolicySpec::MaximalOverGrid { controls, bounds } = &policy {
            let Some(first) = controls.first() else {
                return Err(ReachError::Input("control grid is empty".into()));
            };
            for u in controls {
                if u.len() != first.len() {
                    return Err(ReachError::dim(first.len(), u.len(), "control grid entries"));
                }
                if let Some(b) = bounds {
                    if !b.contains(u) {
                        return Err(ReachError::Input(format!(
                            "control {u:?} lies outside the declared input bounds"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            safe,
            target,
            horizon,
            policy,
        })
    }

    pub fn safe(&self) -> &dyn Region {
        self.safe.as_ref()
    }

    pub fn target(&self) -> &dyn Region {
        self.target.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn policy(&self) -> &PolicySpec {
        &self.policy
    }

    /// Same sets and horizon under a different policy.
    pub fn with_policy(&self, policy: PolicySpec) -> Result<Self> {
        Self::new(self.safe.clone(), self.target.clone(), self.horizon, policy)
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        Self::new(self.safe.clone(), self.target.clone(), horizon, self.policy.clone())
    }
}

/// Value estimates at a fixed set of evaluation points for every `k ∈ [0, N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub points: Points,
    /// `values[k][j]` is `V_k` at `points[j]`.
    pub values: Vec<Vec<f64>>,
    /// `policy_choices[k][j]`: control grid index chosen at step `k < N`.
    pub policy_choices: Option<Vec<Vec<usize>>>,
}

impl ValueField {
    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }
}

/// Exact recursion definitions shared by the oracles and the tests.
///
/// - `V_N = 1_T`;
/// - `V_k(x) = 1_K(x) E[V_{k+1}(y)]` under a fixed policy;
/// - `V*_k(x) = sup_u 1_K(x) E[V*_{k+1}(y) | x, u]` with the maximizing
///   control defining the maximal reach-avoid policy;
/// - the terminal-hitting safety probability of `x₀` is `V_0(x₀)`, i.e.
///   `Pr{x_N ∈ T ∧ x_i ∈ K, i = 0..N-1}`.
pub mod exact {
    use super::ReachSpec;

    pub fn indicator(b: bool) -> f64 {
        if b {
            1.0
        } else {
            0.0
        }
    }

    /// `V_N(x) = 1_T(x)`.
    pub fn terminal_value(spec: &ReachSpec, x: &[f64]) -> f64 {
        indicator(spec.target().contains(x))
    }

    /// `V_k(x) = 1_K(x) · E[V_{k+1}]` given the continuation expectation.
    pub fn stage_value(spec: &ReachSpec, x: &[f64], continuation: f64) -> f64 {
        indicator(spec.safe().contains(x)) * continuation
    }

    /// Maximal stage value over candidate continuations; ties resolve to the
    /// lowest index.
    pub fn stage_value_max(spec: &ReachSpec, x: &[f64], continuations: &[f64]) -> (f64, usize) {
        let safe = indicator(spec.safe().contains(x));
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &c) in continuations.iter().enumerate() {
            let v = safe * c;
            if v > best.0 {
                best = (v, i);
            }
        }
        best
    }

    /// Indicator of the terminal-hitting event along one trajectory `x_0..x_N`.
    pub fn trajectory_hits(spec: &ReachSpec, trajectory: &[Vec<f64>]) -> bool {
        let Some((last, prefix)) = trajectory.split_last() else {
            return false;
        };
        prefix.iter().all(|x| spec.safe().contains(x)) && spec.target().contains(last)
    }

    /// Safety probability for deterministic dynamics `x_{k+1} = f(k, x_k)`
    /// (a degenerate stochastic kernel): either 0 or 1.
    pub fn deterministic_probability(
        spec: &ReachSpec,
        x0: &[f64],
        mut dynamics: impl FnMut(usize, &[f64]) -> Vec<f64>,
    ) -> f64 {
        let mut traj = vec![x0.to_vec()];
        for k in 0..spec.horizon() {
            let next = dynamics(k, traj.last().unwrap());
            traj.push(next);
        }
        indicator(trajectory_hits(spec, &traj))
    }
}

fn mask(region: &dyn Region, points: &Points) -> Vec<bool> {
    points.rows().map(|x| region.contains(x)).collect()
}

fn controls_for(policy: &dyn Policy, k: usize, points: &Points) -> Result<Points> {
    let rows: Vec<Vec<f64>> = points.rows().map(|x| policy.control(k, x)).collect();
    if policy.control_dim() == 0 {
        return Ok(Points::zero_dim(points.len()));
    }
    Points::from_rows(&rows)
}

fn clamp_masked(raw: &[f64], safe: &[bool]) -> Vec<f64> {
    raw.iter()
        .zip(safe)
        .map(|(&v, &s)| if s { v.clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

fn check_points(est: &EmbeddingEstimator, points: &Points) -> Result<()> {
    let n = est.samples().state_dim();
    if points.is_empty() {
        return Err(ReachError::Input("evaluation point set is empty".into()));
    }
    if points.dim() != n {
        return Err(ReachError::dim(n, points.dim(), "evaluation points"));
    }
    if !points.is_finite() {
        return Err(ReachError::Input("evaluation points must be finite".into()));
    }
    Ok(())
}

fn batch_for(est: &EmbeddingEstimator, states: &Points, controls: &Points) -> Result<QueryBatch> {
    est.query_batch(&states.hconcat(controls)?)
}

/// Approximate value recursion under a fixed policy.
///
/// Starting from `V̄_N = 1_T`, each step evaluates the successor values
/// `𝒴 = [V̄_{k+1}(ȳ₁), …, V̄_{k+1}(ȳ_M)]` and sets
/// `V̄_k(x) = 1_K(x) · clamp(𝒴ᵀ β(x, π_k(x)), 0, 1)`.
pub fn value_recursion(est: &EmbeddingEstimator, spec: &ReachSpec, points: &Points) -> Result<ValueField> {
    let PolicySpec::Fixed(policy) = spec.policy() else {
        return Err(ReachError::Contract(
            "value_recursion requires a fixed policy; use value_recursion_max".into(),
        ));
    };
    check_points(est, points)?;
    if policy.control_dim() != est.samples().control_dim() {
        return Err(ReachError::dim(
            est.samples().control_dim(),
            policy.control_dim(),
            "policy control dimension",
        ));
    }
    let horizon = spec.horizon();
    let successors = est.samples().successors();
    let safe_points = mask(spec.safe(), points);
    let safe_successors = mask(spec.safe(), successors);

    let mut values = vec![Vec::new(); horizon + 1];
    values[horizon] = points.rows().map(|x| exact::terminal_value(spec, x)).collect();
    let mut at_successors: Vec<f64> = successors.rows().map(|y| exact::terminal_value(spec, y)).collect();

    let build = |k: usize| -> Result<(QueryBatch, QueryBatch)> {
        let p = batch_for(est, points, &controls_for(policy.as_ref(), k, points)?)?;
        let s = batch_for(est, successors, &controls_for(policy.as_ref(), k, successors)?)?;
        Ok((p, s))
    };
    let mut batches = if policy.is_time_invariant() {
        Some(build(0)?)
    } else {
        None
    };

    for k in (0..horizon).rev() {
        if !policy.is_time_invariant() {
            batches = Some(build(k)?);
        }
        let (at_points_batch, at_successors_batch) = batches.as_ref().expect("batches built");
        let alpha = est.weights_for(&at_successors)?;
        values[k] = clamp_masked(&at_points_batch.apply(&alpha), &safe_points);
        if k > 0 {
            at_successors = clamp_masked(&at_successors_batch.apply(&alpha), &safe_successors);
        }
    }
    Ok(ValueField {
        points: points.clone(),
        values,
        policy_choices: None,
    })
}

/// Approximate maximal recursion over a finite control grid.
///
/// At each step and point every grid control is scored with the clamped
/// embedding expectation; the maximum becomes `V̄*_k` and its index (lowest
/// on ties) is recorded in `policy_choices`. Successor values for the next
/// step use the same maximization, evaluated at the sampled successors.
pub fn value_recursion_max(est: &EmbeddingEstimator, spec: &ReachSpec, points: &Points) -> Result<ValueField> {
    let PolicySpec::MaximalOverGrid { controls, .. } = spec.policy() else {
        return Err(ReachError::Contract(
            "value_recursion_max requires a control grid".into(),
        ));
    };
    if controls.is_empty() {
        return Err(ReachError::Input("control grid is empty".into()));
    }
    check_points(est, points)?;
    let m_dim = est.samples().control_dim();
    if controls[0].len() != m_dim {
        return Err(ReachError::dim(m_dim, controls[0].len(), "control grid entries"));
    }
    let horizon = spec.horizon();
    let successors = est.samples().successors();
    let safe_points = mask(spec.safe(), points);
    let safe_successors = mask(spec.safe(), successors);

    let mut point_batches = Vec::with_capacity(controls.len());
    let mut successor_batches = Vec::with_capacity(controls.len());
    for u in controls {
        point_batches.push(batch_for(est, points, &Points::repeat(u, points.len()))?);
        successor_batches.push(batch_for(est, successors, &Points::repeat(u, successors.len()))?);
    }

    let mut values = vec![Vec::new(); horizon + 1];
    let mut choices = vec![Vec::new(); horizon];
    values[horizon] = points.rows().map(|x| exact::terminal_value(spec, x)).collect();
    let mut at_successors: Vec<f64> = successors.rows().map(|y| exact::terminal_value(spec, y)).collect();

    for k in (0..horizon).rev() {
        let alpha = est.weights_for(&at_successors)?;
        let (v, c) = maximize(&point_batches, &alpha, &safe_points);
        values[k] = v;
        choices[k] = c;
        if k > 0 {
            at_successors = maximize(&successor_batches, &alpha, &safe_successors).0;
        }
    }
    Ok(ValueField {
        points: points.clone(),
        values,
        policy_choices: Some(choices),
    })
}

fn maximize(batches: &[QueryBatch], alpha: &nalgebra::DVector<f64>, safe: &[bool]) -> (Vec<f64>, Vec<usize>) {
    let n = safe.len();
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut arg = vec![0usize; n];
    for (i, batch) in batches.iter().enumerate() {
        let scored = clamp_masked(&batch.apply(alpha), safe);
        for j in 0..n {
            if scored[j] > best[j] {
                best[j] = scored[j];
                arg[j] = i;
            }
        }
    }
    (best, arg)
}
