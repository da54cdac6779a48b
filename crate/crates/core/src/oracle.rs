//! Ground-truth value functions for validating the kernel estimates.
//!
//! - [`dp_value`]: grid dynamic programming for the 2-D integrator chain with
//!   Gaussian disturbance and box-shaped safe/target sets.
//! - [`mc_value`]: Monte Carlo frequency of the terminal-hitting event, for
//!   any [`System`] under a fixed policy.
//!
//! The DP stores continuation values `C_k(x) = E[V_{k+1}(y)]` on the grid,
//! which are smooth in `x`, and applies `V_k = 1_K · C_k` exactly at every
//! query. Interpolating `C` rather than the discontinuous `V` keeps the
//! quadrature accurate near the set boundaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ReachError, Result};
use crate::points::Points;
use crate::reach::{BoxRegion, Policy, PolicySpec, ReachSpec, Region, ValueField};
use crate::systems::{DisturbanceSpec, IntegratorChain, System};

/// Truncation of the Gaussian quadrature, in standard deviations.
pub const TRUNCATION: f64 = 4.0;

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Tensor-product-ready 1-D rule for the standard normal truncated to
/// `[−4, 4]`, renormalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    legendre_nodes: Vec<f64>,
    legendre_weights: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn gauss_normal(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(ReachError::Input("quadrature order must be at least 2".into()));
        }
        let (ln, lw) = gauss_legendre(order);
        let nodes: Vec<f64> = ln.iter().map(|t| TRUNCATION * t).collect();
        let raw: Vec<f64> = nodes
            .iter()
            .zip(&lw)
            .map(|(z, w)| w * TRUNCATION * std_normal_pdf(*z))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(Self {
            legendre_nodes: ln,
            legendre_weights: lw,
            nodes,
            weights,
        })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Standard-normal nodes.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and probability weights of `N(mean, sd²)` truncated to
    /// `mean ± 4 sd`, restricted to `[lo, hi]`. Empty when the two intervals
    /// do not overlap.
    fn clipped(&self, mean: f64, sd: f64, lo: f64, hi: f64, norm: f64) -> Vec<(f64, f64)> {
        let a = lo.max(mean - TRUNCATION * sd);
        let b = hi.min(mean + TRUNCATION * sd);
        if !(a < b) {
            return Vec::new();
        }
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        self.legendre_nodes
            .iter()
            .zip(&self.legendre_weights)
            .map(|(t, w)| {
                let y = c + h * t;
                (y, w * h * std_normal_pdf((y - mean) / sd) / (sd * norm))
            })
            .collect()
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Rectangular DP grid with its disturbance quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct DpGrid {
    bounds: BoxRegion,
    counts: Vec<usize>,
    quadrature: QuadratureRule,
}

impl DpGrid {
    pub fn new(bounds: BoxRegion, counts: Vec<usize>, quadrature: QuadratureRule) -> Result<Self> {
        if counts.len() != bounds.dim() {
            return Err(ReachError::dim(bounds.dim(), counts.len(), "grid counts"));
        }
        if counts.iter().any(|&c| c < 2) {
            return Err(ReachError::Input("DP grid needs at least 2 nodes per axis".into()));
        }
        if bounds.lower().iter().zip(bounds.upper()).any(|(l, u)| !(l < u)) {
            return Err(ReachError::Input("DP grid box must have positive extent".into()));
        }
        Ok(Self {
            bounds,
            counts,
            quadrature,
        })
    }

    /// 101 × 101 nodes over `[−1.1, 1.1]²` with a 40-node rule.
    pub fn validation_default() -> Self {
        Self::new(
            BoxRegion::cube(2, -1.1, 1.1).expect("valid box"),
            vec![101, 101],
            QuadratureRule::gauss_normal(40).expect("valid order"),
        )
        .expect("valid grid")
    }

    pub fn bounds(&self) -> &BoxRegion {
        &self.bounds
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    pub fn with_quadrature(&self, quadrature: QuadratureRule) -> Self {
        Self {
            quadrature,
            ..self.clone()
        }
    }

    /// Grid nodes, last axis fastest.
    pub fn points(&self) -> Points {
        Points::grid(self.bounds.lower(), self.bounds.upper(), &self.counts).expect("validated grid")
    }

    fn covers(&self, b: &BoxRegion) -> bool {
        b.lower().iter().zip(self.bounds.lower()).all(|(x, g)| x >= g)
            && b.upper().iter().zip(self.bounds.upper()).all(|(x, g)| x <= g)
    }
}

/// Multilinear interpolant of nodal values on a 2-D grid; zero outside.
#[derive(Debug, Clone)]
struct Bilinear {
    lo: [f64; 2],
    hi: [f64; 2],
    step: [f64; 2],
    counts: [usize; 2],
}

impl Bilinear {
    fn new(grid: &DpGrid) -> Self {
        let lo = [grid.bounds.lower()[0], grid.bounds.lower()[1]];
        let hi = [grid.bounds.upper()[0], grid.bounds.upper()[1]];
        let counts = [grid.counts[0], grid.counts[1]];
        let step = [
            (hi[0] - lo[0]) / (counts[0] - 1) as f64,
            (hi[1] - lo[1]) / (counts[1] - 1) as f64,
        ];
        Self { lo, hi, step, counts }
    }

    fn locate(&self, a: usize, v: f64) -> (usize, f64) {
        let s = ((v - self.lo[a]) / self.step[a]).max(0.0);
        let i = (s.floor() as usize).min(self.counts[a] - 2);
        (i, (s - i as f64).min(1.0))
    }

    fn eval(&self, values: &[f64], x: &[f64]) -> f64 {
        if x[0] < self.lo[0] || x[0] > self.hi[0] || x[1] < self.lo[1] || x[1] > self.hi[1] {
            return 0.0;
        }
        let (i, fx) = self.locate(0, x[0]);
        let (j, fy) = self.locate(1, x[1]);
        let c = self.counts[1];
        let v00 = values[i * c + j];
        let v01 = values[i * c + j + 1];
        let v10 = values[(i + 1) * c + j];
        let v11 = values[(i + 1) * c + j + 1];
        (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11)
    }
}

/// DP solution: continuation values on the grid for every `k < N`.
#[derive(Debug, Clone)]
pub struct DpSolution {
    grid: DpGrid,
    interp: Bilinear,
    safe: BoxRegion,
    target: BoxRegion,
    /// `continuation[k][j] = E[V_{k+1}(y) | x_j]`.
    continuation: Vec<Vec<f64>>,
}

impl DpSolution {
    pub fn horizon(&self) -> usize {
        self.continuation.len()
    }

    pub fn grid(&self) -> &DpGrid {
        &self.grid
    }

    /// `V_k(x)` at an arbitrary state; continuation values are interpolated.
    pub fn value(&self, k: usize, x: &[f64]) -> f64 {
        if k >= self.horizon() {
            return if self.target.contains(x) { 1.0 } else { 0.0 };
        }
        if !self.safe.contains(x) {
            return 0.0;
        }
        self.interp.eval(&self.continuation[k], x)
    }

    /// `V_k` at the grid nodes for all `k`.
    pub fn field(&self) -> ValueField {
        let points = self.grid.points();
        let mut values: Vec<Vec<f64>> = self
            .continuation
            .iter()
            .map(|c| {
                points
                    .rows()
                    .zip(c)
                    .map(|(x, &v)| if self.safe.contains(x) { v } else { 0.0 })
                    .collect()
            })
            .collect();
        values.push(
            points
                .rows()
                .map(|x| if self.target.contains(x) { 1.0 } else { 0.0 })
                .collect(),
        );
        ValueField {
            points,
            values,
            policy_choices: None,
        }
    }
}

/// Grid DP for the 2-D integrator chain; see [`dp_solve`].
pub fn dp_value(system: &IntegratorChain, spec: &ReachSpec, grid: &DpGrid) -> Result<ValueField> {
    Ok(dp_solve(system, spec, grid)?.field())
}

/// Backward recursion on the grid with Gaussian quadrature over the
/// transition density. The last step uses the exact (truncated) Gaussian
/// box probability of the target.
pub fn dp_solve(system: &IntegratorChain, spec: &ReachSpec, grid: &DpGrid) -> Result<DpSolution> {
    if system.state_dim() != 2 {
        return Err(ReachError::Unsupported(format!(
            "grid DP supports n = 2 only, got n = {}",
            system.state_dim()
        )));
    }
    let sd: Vec<f64> = match system.disturbance() {
        DisturbanceSpec::GaussianIid { variances } => variances.iter().map(|v| v.sqrt()).collect(),
        other => {
            return Err(ReachError::Unsupported(format!(
                "grid DP needs Gaussian disturbance, got {}; use the Monte Carlo oracle",
                other.describe()
            )))
        }
    };
    let PolicySpec::Fixed(policy) = spec.policy() else {
        return Err(ReachError::Contract("grid DP evaluates a fixed policy".into()));
    };
    if policy.control_dim() != 1 {
        return Err(ReachError::dim(1, policy.control_dim(), "policy control"));
    }
    let (Some(safe), Some(target)) = (spec.safe().as_box(), spec.target().as_box()) else {
        return Err(ReachError::Unsupported("grid DP needs box-shaped safe and target sets".into()));
    };
    if safe.dim() != 2 || target.dim() != 2 || grid.bounds.dim() != 2 {
        return Err(ReachError::Input("grid DP sets and grid must be 2-D".into()));
    }
    if !grid.covers(safe) || !grid.covers(target) {
        return Err(ReachError::Input("DP grid must cover the safe and target sets".into()));
    }

    let points = grid.points();
    let interp = Bilinear::new(grid);
    let std = Normal::standard();
    let norm = std.cdf(TRUNCATION) - std.cdf(-TRUNCATION);
    let horizon = spec.horizon();
    let mean_at = |k: usize, x: &[f64]| system.deterministic(x, &policy.control(k, x));

    let mut continuation = vec![Vec::new(); horizon];
    continuation[horizon - 1] = points
        .as_slice()
        .par_chunks(2)
        .map(|x| {
            let mu = mean_at(horizon - 1, x);
            (0..2)
                .map(|a| {
                    let zl = ((target.lower()[a] - mu[a]) / sd[a]).max(-TRUNCATION);
                    let zu = ((target.upper()[a] - mu[a]) / sd[a]).min(TRUNCATION);
                    if zl < zu {
                        ((std.cdf(zu) - std.cdf(zl)) / norm).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .product()
        })
        .collect();

    for k in (0..horizon - 1).rev() {
        let next = &continuation[k + 1];
        let current: Vec<f64> = points
            .as_slice()
            .par_chunks(2)
            .map(|x| {
                let mu = mean_at(k, x);
                let q = &grid.quadrature;
                let ax = q.clipped(mu[0], sd[0], safe.lower()[0], safe.upper()[0], norm);
                let ay = q.clipped(mu[1], sd[1], safe.lower()[1], safe.upper()[1], norm);
                let mut acc = 0.0;
                for &(y0, w0) in &ax {
                    let mut inner = 0.0;
                    for &(y1, w1) in &ay {
                        inner += w1 * interp.eval(next, &[y0, y1]);
                    }
                    acc += w0 * inner;
                }
                acc.clamp(0.0, 1.0)
            })
            .collect();
        continuation[k] = current;
    }

    Ok(DpSolution {
        grid: grid.clone(),
        interp,
        safe: safe.clone(),
        target: target.clone(),
        continuation,
    })
}

/// Monte Carlo estimate with its 95% binomial half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub probability: f64,
    pub half_width: f64,
    pub hits: u64,
    pub rollouts: u64,
}

impl McEstimate {
    fn new(hits: u64, rollouts: u64) -> Self {
        let p = hits as f64 / rollouts as f64;
        Self {
            probability: p,
            half_width: 1.96 * (p * (1.0 - p) / rollouts as f64).sqrt(),
            hits,
            rollouts,
        }
    }
}

const CHUNK: usize = 1 << 13;

/// Fraction of closed-loop rollouts from `x0` with `x_N ∈ T` and `x_i ∈ K`
/// for `i < N`. Each chunk of rollouts draws from its own ChaCha stream, so
/// the result depends only on `seed`, never on the thread count.
pub fn mc_value(
    system: &dyn System,
    spec: &ReachSpec,
    x0: &[f64],
    rollouts: usize,
    seed: u64,
) -> Result<McEstimate> {
    if rollouts == 0 {
        return Err(ReachError::Input("rollout count must be at least 1".into()));
    }
    if x0.len() != system.state_dim() {
        return Err(ReachError::dim(system.state_dim(), x0.len(), "initial state"));
    }
    let PolicySpec::Fixed(policy) = spec.policy() else {
        return Err(ReachError::Contract("Monte Carlo oracle evaluates a fixed policy".into()));
    };
    if policy.control_dim() != system.control_dim() {
        return Err(ReachError::dim(system.control_dim(), policy.control_dim(), "policy control"));
    }
    if !spec.safe().contains(x0) {
        return Ok(McEstimate::new(0, rollouts as u64));
    }
    let policy: &dyn Policy = policy.as_ref();
    let chunks = rollouts.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(rollouts - c * CHUNK);
            let mut hits = 0u64;
            for _ in 0..count {
                if rollout_hits(system, spec, policy, x0, &mut rng) {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    Ok(McEstimate::new(hits, rollouts as u64))
}

fn rollout_hits(
    system: &dyn System,
    spec: &ReachSpec,
    policy: &dyn Policy,
    x0: &[f64],
    rng: &mut ChaCha8Rng,
) -> bool {
    let n = system.state_dim();
    let mut x = x0.to_vec();
    for k in 0..spec.horizon() {
        if !spec.safe().contains(&x) {
            return false;
        }
        let u = policy.control(k, &x);
        let mut y = system.deterministic(&x, &u);
        for (yi, wi) in y.iter_mut().zip(system.disturbance().sample(n, rng)) {
            *yi += wi;
        }
        x = y;
    }
    spec.target().contains(&x)
}

/// [`mc_value`] at each row of `points`, all with the same seed.
pub fn mc_values(
    system: &dyn System,
    spec: &ReachSpec,
    points: &Points,
    rollouts: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    points
        .rows()
        .map(|x| mc_value(system, spec, x, rollouts, seed))
        .collect()
}

/// Absolute errors between an estimate and a reference on shared points.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub abs_error: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    /// Restricted to points strictly inside the safe set.
    pub interior_max: f64,
    pub interior_mean: f64,
    pub interior_count: usize,
}

/// Compares `estimate` with `truth` point by point. For a box safe set the
/// interior is the open box; for other regions it is the region itself.
pub fn error_report(points: &Points, estimate: &[f64], truth: &[f64], safe: &dyn Region) -> Result<ErrorReport> {
    if estimate.len() != points.len() {
        return Err(ReachError::dim(points.len(), estimate.len(), "estimate values"));
    }
    if truth.len() != points.len() {
        return Err(ReachError::dim(points.len(), truth.len(), "reference values"));
    }
    if points.is_empty() {
        return Err(ReachError::Input("no points to compare".into()));
    }
    let abs_error: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).collect();
    let interior: Vec<bool> = points
        .rows()
        .map(|x| match safe.as_box() {
            Some(b) => b.contains_strictly(x),
            None => safe.contains(x),
        })
        .collect();
    let (mut imax, mut isum, mut icount) = (0.0f64, 0.0, 0usize);
    for (e, inside) in abs_error.iter().zip(&interior) {
        if *inside {
            imax = imax.max(*e);
            isum += e;
            icount += 1;
        }
    }
    Ok(ErrorReport {
        max: abs_error.iter().copied().fold(0.0, f64::max),
        mean: abs_error.iter().sum::<f64>() / abs_error.len() as f64,
        interior_max: imax,
        interior_mean: if icount > 0 { isum / icount as f64 } else { 0.0 },
        interior_count: icount,
        abs_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reach::{exact, ConstantPolicy};
    use std::sync::Arc;

    fn chain(var: f64) -> IntegratorChain {
        IntegratorChain::new(2, 0.25, DisturbanceSpec::gaussian_isotropic(2, var)).unwrap()
    }

    fn spec(horizon: usize, target: BoxRegion) -> ReachSpec {
        ReachSpec::new(
            Arc::new(BoxRegion::cube(2, -1.0, 1.0).unwrap()),
            Arc::new(target),
            horizon,
            PolicySpec::fixed(ConstantPolicy(vec![0.0])),
        )
        .unwrap()
    }

    fn small_grid(order: usize) -> DpGrid {
        DpGrid::new(
            BoxRegion::cube(2, -1.1, 1.1).unwrap(),
            vec![45, 45],
            QuadratureRule::gauss_normal(order).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn error_report_identical_and_interior() {
        let pts = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).unwrap();
        let safe = BoxRegion::cube(2, -1.0, 1.0).unwrap();
        let r = error_report(&pts, &[0.5, 0.2, 0.0], &[0.5, 0.2, 0.0], &safe).unwrap();
        assert_eq!(r.max, 0.0);
        assert_eq!(r.abs_error, vec![0.0; 3]);
        let r = error_report(&pts, &[0.5, 0.9, 0.0], &[0.4, 0.2, 0.0], &safe).unwrap();
        assert_eq!(r.interior_count, 1);
        assert!((r.interior_max - 0.1).abs() < 1e-15);
        assert!((r.max - 0.7).abs() < 1e-15);
        assert!(error_report(&pts, &[0.0], &[0.0, 0.0, 0.0], &safe).is_err());
    }

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(7);
        for deg in 0..14 {
            let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((approx - exact).abs() < 1e-14, "degree {deg}");
        }
    }

    #[test]
    fn normal_rule_is_a_probability_measure() {
        for order in [8, 40, 81] {
            let q = QuadratureRule::gauss_normal(order).unwrap();
            let total: f64 = q.weights().iter().sum();
            assert!((total - 1.0).abs() < 1e-10);
            let var: f64 = q.nodes().iter().zip(q.weights()).map(|(z, w)| w * z * z).sum();
            if order >= 40 {
                assert!((var - 1.0).abs() < 2e-3, "order {order}: {var}");
            }
        }
    }

    #[test]
    fn dp_zero_outside_safe_set() {
        let s = spec(3, BoxRegion::cube(2, -1.0, 1.0).unwrap());
        let f = dp_value(&chain(0.01), &s, &small_grid(20)).unwrap();
        for k in 0..3 {
            for (x, v) in f.points.rows().zip(&f.values[k]) {
                if !s.safe().contains(x) {
                    assert_eq!(*v, 0.0);
                }
                assert!((0.0..=1.0).contains(v));
            }
        }
        for (x, v) in f.points.rows().zip(&f.values[3]) {
            assert_eq!(*v, exact::terminal_value(&s, x));
        }
    }

    #[test]
    fn dp_zero_variance_limit_is_deterministic() {
        let sys = chain(1e-12);
        let s = spec(1, BoxRegion::cube(2, -0.5, 0.5).unwrap());
        let f = dp_value(&sys, &s, &small_grid(20)).unwrap();
        let mut mismatches = 0;
        for (x, v) in f.points.rows().zip(&f.values[0]) {
            let y = sys.deterministic(x, &[0.0]);
            let truth = exact::indicator(s.safe().contains(x) && s.target().contains(&y));
            // nodes whose successor lands within a few σ of the target boundary
            let near = y.iter().any(|c| (c.abs() - 0.5).abs() < 1e-5);
            if !near && (v - truth).abs() > 1e-9 {
                mismatches += 1;
            }
        }
        assert_eq!(mismatches, 0);
    }

    #[test]
    fn dp_monotone_in_target() {
        let sys = chain(0.01);
        let grid = small_grid(20);
        let small = dp_value(&sys, &spec(3, BoxRegion::cube(2, -0.5, 0.5).unwrap()), &grid).unwrap();
        let large = dp_value(&sys, &spec(3, BoxRegion::cube(2, -0.8, 0.8).unwrap()), &grid).unwrap();
        for k in 0..=3 {
            for (a, b) in small.values[k].iter().zip(&large.values[k]) {
                assert!(b + 1e-12 >= *a);
            }
        }
    }

    #[test]
    fn dp_quadrature_refinement() {
        let sys = chain(0.01);
        let s = spec(3, BoxRegion::cube(2, -1.0, 1.0).unwrap());
        let coarse = DpGrid::validation_default();
        let fine = coarse.with_quadrature(QuadratureRule::gauss_normal(80).unwrap());
        let a = dp_value(&sys, &s, &coarse).unwrap();
        let b = dp_value(&sys, &s, &fine).unwrap();
        let diff = a.values[0]
            .iter()
            .zip(&b.values[0])
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff <= 0.005, "refinement changed values by {diff}");
    }

    #[test]
    fn dp_rejects_unsupported_inputs() {
        let beta = IntegratorChain::new(
            2,
            0.25,
            DisturbanceSpec::BetaIid {
                alpha: 0.5,
                beta: 0.5,
                centered: false,
            },
        )
        .unwrap();
        let s = spec(1, BoxRegion::cube(2, -1.0, 1.0).unwrap());
        assert!(matches!(
            dp_value(&beta, &s, &small_grid(10)),
            Err(ReachError::Unsupported(_))
        ));
        let three = IntegratorChain::new(3, 0.25, DisturbanceSpec::gaussian_isotropic(3, 0.01)).unwrap();
        assert!(matches!(dp_value(&three, &s, &small_grid(10)), Err(ReachError::Unsupported(_))));
    }

    #[test]
    fn mc_trivial_cases() {
        let s = spec(3, BoxRegion::cube(2, -1.0, 1.0).unwrap());
        let est = mc_value(&chain(0.01), &s, &[1.5, 0.0], 1000, 1).unwrap();
        assert_eq!(est.probability, 0.0);
        let det = IntegratorChain::new(2, 0.25, DisturbanceSpec::Zero).unwrap();
        for x in [[0.0, 0.0], [0.9, 0.5], [-0.2, 0.9]] {
            let p = mc_value(&det, &s, &x, 500, 3).unwrap().probability;
            let truth = exact::deterministic_probability(&s, &x, |_, z| det.deterministic(z, &[0.0]));
            assert_eq!(p, truth);
        }
        assert!(mc_value(&det, &s, &[0.0, 0.0], 0, 3).is_err());
    }

    #[test]
    fn mc_reproducible_and_thread_independent() {
        let sys = chain(0.01);
        let s = spec(3, BoxRegion::cube(2, -1.0, 1.0).unwrap());
        let a = mc_value(&sys, &s, &[0.0, 0.0], 100_000, 11).unwrap();
        let b = mc_value(&sys, &s, &[0.0, 0.0], 100_000, 12).unwrap();
        assert!((a.probability - b.probability).abs() <= 2.0 * a.half_width.max(b.half_width));
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| mc_value(&sys, &s, &[0.0, 0.0], 100_000, 11).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn dp_agrees_with_monte_carlo() {
        let sys = chain(0.01);
        let s = spec(3, BoxRegion::cube(2, -1.0, 1.0).unwrap());
        let dp = dp_solve(&sys, &s, &DpGrid::validation_default()).unwrap();
        let field = dp.field();
        for j in [0usize, 1030, 2575, 5100, 5150, 7777, 9000] {
            let x = field.points.row(j);
            let mc = mc_value(&sys, &s, x, 200_000, j as u64).unwrap();
            let tol = 0.01f64.max(3.0 * mc.half_width);
            assert!(
                (field.values[0][j] - mc.probability).abs() <= tol,
                "x = {x:?}: dp {} mc {}",
                field.values[0][j],
                mc.probability
            );
            assert!((dp.value(0, x) - field.values[0][j]).abs() < 1e-12);
        }
    }
}
