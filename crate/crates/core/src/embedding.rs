//! Empirical conditional distribution embedding fitted from transition samples.
//!
//! Given samples `(x̄ᵢ, ūᵢ, ȳᵢ)` with `ȳᵢ ∼ Q(· | x̄ᵢ, ūᵢ)`, the regularized
//! least-squares estimate of the embedding reduces to a weight vector
//!
//! ```text
//! β(x, u) = η (G + λMI)⁻¹ k(x, u),    k_i = K((x̄ᵢ, ūᵢ), (x, u))
//! ```
//!
//! and expectations become weighted sums over the successors:
//! `E[f(y) | x, u] ≈ Σᵢ f(ȳᵢ) βᵢ(x, u)`.
//!
//! `(G + λMI)` is Cholesky-factored once at fit time. Because
//! `fᵀ β = η kᵀ (G + λMI)⁻¹ f`, a batch of queries against one right-hand
//! side costs a single solve plus one matrix-vector product; see
//! [`QueryBatch`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ReachError, Result};
use crate::kernel::{self, GramMatrix, KernelSpec};
use crate::points::Points;

/// Provenance carried alongside a sample set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleMeta {
    pub system: String,
    pub seed: Option<u64>,
    pub policy: String,
}

/// `M` transition triples drawn from the (unknown) stochastic kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    states: Points,
    controls: Points,
    successors: Points,
    pub meta: SampleMeta,
}

impl SampleSet {
    pub fn new(states: Points, controls: Points, successors: Points, meta: SampleMeta) -> Result<Self> {
        let m = states.len();
        if m == 0 {
            return Err(ReachError::Input("sample set must hold at least one transition".into()));
        }
        if controls.len() != m {
            return Err(ReachError::dim(m, controls.len(), "control rows"));
        }
        if successors.len() != m {
            return Err(ReachError::dim(m, successors.len(), "successor rows"));
        }
        if successors.dim() != states.dim() {
            return Err(ReachError::dim(states.dim(), successors.dim(), "successor dimension"));
        }
        if !(states.is_finite() && controls.is_finite() && successors.is_finite()) {
            return Err(ReachError::Input("sample set contains non-finite entries".into()));
        }
        Ok(Self {
            states,
            controls,
            successors,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.dim()
    }

    pub fn control_dim(&self) -> usize {
        self.controls.dim()
    }

    pub fn states(&self) -> &Points {
        &self.states
    }

    pub fn controls(&self) -> &Points {
        &self.controls
    }

    pub fn successors(&self) -> &Points {
        &self.successors
    }

    /// Joint sample points `(x̄ᵢ, ūᵢ)`.
    pub fn joint(&self) -> Points {
        self.states
            .hconcat(&self.controls)
            .expect("row counts checked at construction")
    }
}

/// How the normalizing constant η is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Eta {
    /// A fixed scalar multiplying every weight vector.
    Constant(f64),
    /// Per-query scale making the weights sum to one.
    ///
    /// With a large ridge term `λM` the raw weights sum to roughly
    /// `Σk / λM`, far below one; rescaling recovers an expectation
    /// operator that maps constants to themselves. Queries whose raw
    /// weights do not have a positive sum get all-zero weights.
    #[default]
    UnitSum,
}

/// Weight vector `β(x, u)` for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaCoefficients {
    pub weights: Vec<f64>,
    pub query: Vec<f64>,
}

/// Fitted embedding estimator. Immutable after [`EmbeddingEstimator::fit`].
#[derive(Debug, Clone)]
pub struct EmbeddingEstimator {
    samples: SampleSet,
    joint: Points,
    kernel_state: KernelSpec,
    kernel_joint: KernelSpec,
    lambda: f64,
    eta: Eta,
    factor: Cholesky<f64, Dyn>,
    // (G + λMI)⁻¹ 1, used by the unit-sum normalization
    ones_solution: DVector<f64>,
}

impl EmbeddingEstimator {
    /// Builds the Gram matrix over the joint points and factors `G + λMI`.
    ///
    /// `kernel_state` only defines the RKHS that the successor functions
    /// live in; by the reproducing property it never enters the weights.
    pub fn fit(
        samples: SampleSet,
        kernel_state: KernelSpec,
        kernel_joint: KernelSpec,
        lambda: f64,
        eta: Eta,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ReachError::Input(format!(
                "regularization must be positive and finite, got {lambda}"
            )));
        }
        if let Eta::Constant(c) = eta {
            if !(c.is_finite() && c > 0.0) {
                return Err(ReachError::Input(format!("η must be positive and finite, got {c}")));
            }
        }
        let joint = samples.joint();
        if !joint.is_finite() {
            return Err(ReachError::Input("sample set contains non-finite entries".into()));
        }
        let m = joint.len();
        let mut system = kernel::gram(&kernel_joint, &joint)?.into_inner();
        let ridge = lambda * m as f64;
        for i in 0..m {
            system[(i, i)] += ridge;
        }
        let factor = Cholesky::new(system)
            .ok_or_else(|| ReachError::Numerical("G + λMI is not positive definite".into()))?;
        let ones_solution = factor.solve(&DVector::from_element(m, 1.0));
        log::debug!("fitted embedding: M = {m}, λ = {lambda}, η = {eta:?}");
        Ok(Self {
            samples,
            joint,
            kernel_state,
            kernel_joint,
            lambda,
            eta,
            factor,
            ones_solution,
        })
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn sample_count(&self) -> usize {
        self.joint.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eta(&self) -> Eta {
        self.eta
    }

    pub fn kernel_state(&self) -> &KernelSpec {
        &self.kernel_state
    }

    pub fn kernel_joint(&self) -> &KernelSpec {
        &self.kernel_joint
    }

    /// The regularized system matrix `G + λMI`, rebuilt on demand.
    pub fn system_matrix(&self) -> DMatrix<f64> {
        let l = self.factor.l();
        &l * l.transpose()
    }

    /// Gram matrix over the joint sample points.
    pub fn gram(&self) -> Result<GramMatrix> {
        kernel::gram(&self.kernel_joint, &self.joint)
    }

    /// `(G + λMI)⁻¹ v`.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.sample_count() {
            return Err(ReachError::dim(self.sample_count(), v.len(), "solve right-hand side"));
        }
        Ok(self.factor.solve(&DVector::from_column_slice(v)).data.into())
    }

    /// `‖(G + λMI)·solve(v) − v‖ / ‖v‖`, with the system rebuilt from the Gram matrix.
    pub fn solve_residual(&self, v: &[f64]) -> Result<f64> {
        let x = DVector::from_vec(self.solve(v)?);
        let mut a = self.gram()?.into_inner();
        let ridge = self.lambda * self.sample_count() as f64;
        for i in 0..a.nrows() {
            a[(i, i)] += ridge;
        }
        let rhs = DVector::from_column_slice(v);
        let norm = rhs.norm();
        if norm == 0.0 {
            return Ok((a * x).norm());
        }
        Ok((a * x - rhs).norm() / norm)
    }

    /// Concatenates `(x, u)` after checking both dimensions.
    pub fn joint_query(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.samples.state_dim() {
            return Err(ReachError::dim(self.samples.state_dim(), x.len(), "query state"));
        }
        if u.len() != self.samples.control_dim() {
            return Err(ReachError::dim(self.samples.control_dim(), u.len(), "query control"));
        }
        let mut q = Vec::with_capacity(x.len() + u.len());
        q.extend_from_slice(x);
        q.extend_from_slice(u);
        Ok(q)
    }

    fn eta_for(&self, raw_sum: f64) -> f64 {
        match self.eta {
            Eta::Constant(c) => c,
            Eta::UnitSum => {
                if raw_sum > 0.0 && raw_sum.is_finite() {
                    1.0 / raw_sum
                } else {
                    0.0
                }
            }
        }
    }

    /// `β(x, u)`. Weights may be negative and need not sum to one unless
    /// [`Eta::UnitSum`] is selected.
    pub fn beta(&self, x: &[f64], u: &[f64]) -> Result<BetaCoefficients> {
        let query = self.joint_query(x, u)?;
        let k = kernel::kernel_vector(&self.kernel_joint, &self.joint, &query)?;
        let mut weights = self.factor.solve(&DVector::from_vec(k));
        let scale = self.eta_for(weights.sum());
        weights *= scale;
        Ok(BetaCoefficients {
            weights: weights.data.into(),
            query,
        })
    }

    /// M×Q matrix whose columns are `β` for each joint query point.
    pub fn beta_matrix(&self, joint_queries: &Points) -> Result<DMatrix<f64>> {
        let k = kernel::cross_matrix(&self.kernel_joint, &self.joint, joint_queries)?;
        let mut b = self.factor.solve(&k);
        for mut col in b.column_iter_mut() {
            let scale = self.eta_for(col.sum());
            col *= scale;
        }
        Ok(b)
    }

    /// `fᵀ β(x, u)`, the estimate of `E[f(y) | x, u]` given `f` at the successors.
    pub fn expectation(&self, f_at_successors: &[f64], x: &[f64], u: &[f64]) -> Result<f64> {
        if f_at_successors.len() != self.sample_count() {
            return Err(ReachError::dim(
                self.sample_count(),
                f_at_successors.len(),
                "function values at successors",
            ));
        }
        let beta = self.beta(x, u)?;
        Ok(kernel::dot(f_at_successors, &beta.weights))
    }

    /// Precomputes kernel columns for a fixed set of joint queries.
    pub fn query_batch(&self, joint_queries: &Points) -> Result<QueryBatch> {
        let kernel = kernel::cross_matrix(&self.kernel_joint, &self.joint, joint_queries)?;
        let scale = match self.eta {
            Eta::Constant(c) => vec![c; kernel.ncols()],
            Eta::UnitSum => {
                let sums = kernel.tr_mul(&self.ones_solution);
                sums.iter().map(|&s| self.eta_for(s)).collect()
            }
        };
        Ok(QueryBatch { kernel, scale })
    }

    /// Expectation estimates at every query of `batch` for one function.
    ///
    /// Equal to `fᵀ β(q)` per query, computed as `η_q · k_qᵀ (G + λMI)⁻¹ f`.
    pub fn batch_expectations(&self, batch: &QueryBatch, f_at_successors: &[f64]) -> Result<Vec<f64>> {
        if batch.kernel.nrows() != self.sample_count() {
            return Err(ReachError::dim(
                self.sample_count(),
                batch.kernel.nrows(),
                "query batch sample count",
            ));
        }
        Ok(batch.apply(&self.weights_for(f_at_successors)?))
    }

    /// `(G + λMI)⁻¹ f` as a vector, ready for [`QueryBatch::apply`].
    pub fn weights_for(&self, f_at_successors: &[f64]) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.solve(f_at_successors)?))
    }
}

/// Kernel columns and η scales for a fixed query set.
#[derive(Debug, Clone)]
pub struct QueryBatch {
    kernel: DMatrix<f64>,
    scale: Vec<f64>,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    /// `η_q · k_qᵀ α` for every query, where `α = (G + λMI)⁻¹ f`.
    pub fn apply(&self, alpha: &DVector<f64>) -> Vec<f64> {
        let raw = self.kernel.tr_mul(alpha);
        raw.iter().zip(&self.scale).map(|(r, s)| r * s).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_samples(m: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = Vec::new();
        let mut u = Vec::new();
        let mut y = Vec::new();
        for _ in 0..m {
            let a: f64 = rng.random_range(-0.5..0.5);
            let b: f64 = rng.random_range(-0.5..0.5);
            let c: f64 = rng.random_range(-0.1..0.1);
            s.extend([a, b]);
            u.push(c);
            y.extend([a + 0.25 * b + rng.random_range(-0.05..0.05), b + c]);
        }
        SampleSet::new(
            Points::new(2, s).unwrap(),
            Points::new(1, u).unwrap(),
            Points::new(2, y).unwrap(),
            SampleMeta::default(),
        )
        .unwrap()
    }

    fn fit(samples: SampleSet, sigma: f64, lambda: f64, eta: Eta) -> EmbeddingEstimator {
        let k = KernelSpec::gaussian(sigma).unwrap();
        EmbeddingEstimator::fit(samples, k, k, lambda, eta).unwrap()
    }

    // independent route: explicit LU inverse of the rebuilt system
    fn dense_inverse_beta(samples: &SampleSet, sigma: f64, lambda: f64, query: &[f64]) -> Vec<f64> {
        let joint = samples.joint();
        let m = joint.len();
        let mut a = DMatrix::zeros(m, m);
        let mut k = DVector::zeros(m);
        for i in 0..m {
            for j in 0..m {
                let d2: f64 = joint.row(i).iter().zip(joint.row(j)).map(|(p, q)| (p - q).powi(2)).sum();
                a[(i, j)] = (-d2 / (2.0 * sigma * sigma)).exp();
            }
            a[(i, i)] += lambda * m as f64;
            let d2: f64 = joint.row(i).iter().zip(query).map(|(p, q)| (p - q).powi(2)).sum();
            k[i] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
        let inv = a.try_inverse().unwrap();
        (inv * k).data.into()
    }

    #[test]
    fn single_sample_closed_form() {
        let s = SampleSet::new(
            Points::from_rows(&[[0.2, -0.1]]).unwrap(),
            Points::from_rows(&[[0.05]]).unwrap(),
            Points::from_rows(&[[0.3, 0.0]]).unwrap(),
            SampleMeta::default(),
        )
        .unwrap();
        let lambda = 0.7;
        let est = fit(s, 0.1, lambda, Eta::Constant(1.0));
        let b = est.beta(&[0.2, -0.1], &[0.05]).unwrap();
        assert!((b.weights[0] - 1.0 / (1.0 + lambda)).abs() < 1e-15);
        assert!((est.system_matrix()[(0, 0)] - (1.0 + lambda)).abs() < 1e-14);
        // off-sample query: K / (1 + λ)
        let kq = (-(0.01f64) / 0.02).exp();
        let b = est.beta(&[0.3, -0.1], &[0.05]).unwrap();
        assert!((b.weights[0] - kq / (1.0 + lambda)).abs() < 1e-15);
        assert!((est.expectation(&[1.0], &[0.2, -0.1], &[0.05]).unwrap() - 1.0 / (1.0 + lambda)).abs() < 1e-15);
        assert_eq!(est.expectation(&[0.0], &[0.2, -0.1], &[0.05]).unwrap(), 0.0);
    }

    #[test]
    fn matches_dense_inverse_oracle() {
        for (m, seed) in [(3usize, 1u64), (16, 2)] {
            let s = toy_samples(m, seed);
            let est = fit(s.clone(), 0.3, 1.0, Eta::Constant(1.0));
            let x = [0.1, -0.2];
            let u = [0.03];
            let b = est.beta(&x, &u).unwrap();
            let oracle = dense_inverse_beta(&s, 0.3, 1.0, &[0.1, -0.2, 0.03]);
            for (a, o) in b.weights.iter().zip(&oracle) {
                assert!((a - o).abs() < 1e-10, "{a} vs {o}");
            }
        }
    }

    #[test]
    fn unit_sum_weights_sum_to_one() {
        let est = fit(toy_samples(32, 3), 0.2, 1.0, Eta::UnitSum);
        let b = est.beta(&[0.0, 0.1], &[0.0]).unwrap();
        let total: f64 = b.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // constants map to themselves
        let c = est.expectation(&vec![0.4; 32], &[0.0, 0.1], &[0.0]).unwrap();
        assert!((c - 0.4).abs() < 1e-12);
    }

    #[test]
    fn far_query_weights_bounded() {
        let est = fit(toy_samples(16, 4), 0.1, 1.0, Eta::Constant(1.0));
        let b = est.beta(&[5.0, 5.0], &[0.0]).unwrap();
        let inv = est.system_matrix().try_inverse().unwrap();
        let inf_norm = inv
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let bound = (-50.0f64).exp() * inf_norm;
        assert!(b.weights.iter().all(|w| w.abs() <= bound));
        // unit-sum weights underflow to zero rather than dividing by zero
        let est = fit(toy_samples(16, 4), 0.1, 1.0, Eta::UnitSum);
        let b = est.beta(&[50.0, 50.0], &[0.0]).unwrap();
        assert!(b.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn batch_matches_single_queries() {
        for eta in [Eta::Constant(1.0), Eta::UnitSum] {
            let est = fit(toy_samples(20, 5), 0.2, 0.5, eta);
            let queries = Points::from_rows(&[[0.0, 0.0, 0.0], [0.2, -0.3, 0.05], [0.4, 0.4, -0.1]]).unwrap();
            let f: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
            let batch = est.query_batch(&queries).unwrap();
            let vals = est.batch_expectations(&batch, &f).unwrap();
            let bm = est.beta_matrix(&queries).unwrap();
            for q in 0..3 {
                let row = queries.row(q);
                let single = est.expectation(&f, &row[..2], &row[2..]).unwrap();
                assert!((vals[q] - single).abs() < 1e-12);
                let via_matrix: f64 = (0..20).map(|i| bm[(i, q)] * f[i]).sum();
                assert!((via_matrix - single).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        assert!(EmbeddingEstimator::fit(toy_samples(4, 0), k, k, 0.0, Eta::UnitSum).is_err());
        let est = fit(toy_samples(4, 0), 0.1, 1.0, Eta::UnitSum);
        assert!(est.beta(&[0.0], &[0.0]).is_err());
        assert!(est.beta(&[0.0, 0.0], &[]).is_err());
        assert!(est.expectation(&[1.0; 3], &[0.0, 0.0], &[0.0]).is_err());
        let bad = SampleSet::new(
            Points::from_rows(&[[f64::NAN]]).unwrap(),
            Points::zero_dim(1),
            Points::from_rows(&[[0.0]]).unwrap(),
            SampleMeta::default(),
        );
        assert!(bad.is_err());
    }

    #[test]
    fn solve_residual_small() {
        let est = fit(toy_samples(64, 9), 0.1, 1e-3, Eta::UnitSum);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let v: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(est.solve_residual(&v).unwrap() <= 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn expectation_is_linear(
            seed in 0u64..500,
            alpha in -3.0f64..3.0,
            qx in -0.5f64..0.5,
            qy in -0.5f64..0.5,
        ) {
            let est = fit(toy_samples(12, seed), 0.25, 1.0, Eta::UnitSum);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let f: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = f.iter().zip(&g).map(|(a, b)| alpha * a + b).collect();
            let (x, u) = ([qx, qy], [0.0]);
            let lhs = est.expectation(&h, &x, &u).unwrap();
            let rhs = alpha * est.expectation(&f, &x, &u).unwrap() + est.expectation(&g, &x, &u).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12);
        }
    }
}
