//! Positive-definite kernels, Gram matrices and sample-vs-query kernel columns.
//!
//! Only the Gaussian radial basis function ships:
//!
//! ```text
//! K(a, b) = exp(-‖a - b‖² / (2σ²))
//! ```
//!
//! The state kernel and the joint state×control kernel are both instances of
//! [`KernelSpec`]; the joint kernel acts on the concatenated vector `(x, u)`.
//!
//! Block routines ([`gram`], [`kernel_vector`], [`cross_matrix`]) use the
//! expanded distance `‖a‖² + ‖b‖² − 2a·b` clamped at zero, which keeps the
//! inner loop a plain dot product for very high-dimensional states. Every
//! entry is computed independently, so the output does not depend on how
//! rayon schedules the rows.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{ReachError, Result};
use crate::points::Points;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    GaussianRbf,
}

/// Kernel choice plus bandwidth. Immutable once built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    sigma: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(ReachError::Input(format!(
                "kernel bandwidth must be positive and finite, got {sigma}"
            )));
        }
        Ok(Self { family, sigma })
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(KernelFamily::GaussianRbf, sigma)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    fn at_sq_dist(&self, d2: f64) -> f64 {
        match self.family {
            KernelFamily::GaussianRbf => (-d2 / (2.0 * self.sigma * self.sigma)).exp(),
        }
    }
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn expanded_sq_dist(a: &[f64], norm_a: f64, b: &[f64], norm_b: f64) -> f64 {
    (norm_a + norm_b - 2.0 * dot(a, b)).max(0.0)
}

fn squared_norms(points: &Points) -> Vec<f64> {
    points.rows().map(|r| dot(r, r)).collect()
}

/// `K(a, b)` evaluated from the direct difference `a − b`.
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ReachError::dim(a.len(), b.len(), "kernel arguments"));
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(spec.at_sq_dist(d2))
}

/// Symmetric M×M Gram matrix of a kernel over a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.size();
        (0..n).all(|i| (0..i).all(|j| self.entries[(i, j)] == self.entries[(j, i)]))
    }

    /// Smallest eigenvalue, for PSD checks.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// All eigenvalues ≥ −tol·‖G‖ (Frobenius norm).
    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol * self.entries.norm()
    }
}

/// Gram matrix `G[i][j] = K(p_i, p_j)`.
pub fn gram(spec: &KernelSpec, points: &Points) -> Result<GramMatrix> {
    let m = points.len();
    if m == 0 {
        return Err(ReachError::Input("gram of an empty point set".into()));
    }
    let norms = squared_norms(points);
    // upper triangle row by row, then mirrored so the result is exactly symmetric
    let upper: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let pi = points.row(i);
            (i..m)
                .map(|j| {
                    if i == j {
                        spec.at_sq_dist(0.0)
                    } else {
                        spec.at_sq_dist(expanded_sq_dist(
                            pi,
                            norms[i],
                            points.row(j),
                            norms[j],
                        ))
                    }
                })
                .collect()
        })
        .collect();
    let mut entries = DMatrix::zeros(m, m);
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix { entries })
}

/// Column of kernel values `K(p_i, query)` for every sample point.
pub fn kernel_vector(spec: &KernelSpec, points: &Points, query: &[f64]) -> Result<Vec<f64>> {
    if query.len() != points.dim() {
        return Err(ReachError::dim(points.dim(), query.len(), "kernel query"));
    }
    let qn = dot(query, query);
    Ok(points
        .rows()
        .map(|p| {
            let pn = dot(p, p);
            spec.at_sq_dist(expanded_sq_dist(p, pn, query, qn))
        })
        .collect())
}

/// M×Q matrix whose column `q` is `kernel_vector(points, queries[q])`.
pub fn cross_matrix(spec: &KernelSpec, points: &Points, queries: &Points) -> Result<DMatrix<f64>> {
    if queries.dim() != points.dim() {
        return Err(ReachError::dim(points.dim(), queries.dim(), "kernel queries"));
    }
    let m = points.len();
    let norms = squared_norms(points);
    let mut out = DMatrix::zeros(m, queries.len());
    if m == 0 {
        return Ok(out);
    }
    out.as_mut_slice()
        .par_chunks_mut(m)
        .enumerate()
        .for_each(|(q, col)| {
            let query = queries.row(q);
            let qn = dot(query, query);
            for (i, slot) in col.iter_mut().enumerate() {
                *slot = spec.at_sq_dist(expanded_sq_dist(points.row(i), norms[i], query, qn));
            }
        });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, dim: usize, seed: u64) -> Points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-0.3..0.3)).collect();
        Points::new(dim, data).unwrap()
    }

    // scalar reference used by the block routines' tests
    fn reference_kernel(sigma: f64, a: &[f64], b: &[f64]) -> f64 {
        let mut d2 = 0.0;
        for k in 0..a.len() {
            d2 += (a[k] - b[k]).powi(2);
        }
        (-d2 / (2.0 * sigma * sigma)).exp()
    }

    #[test]
    fn identity_is_one() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        assert_eq!(kernel_eval(&k, &[0.3, -0.7], &[0.3, -0.7]).unwrap(), 1.0);
        let ones = vec![1.0; 10_000];
        assert_eq!(kernel_eval(&k, &ones, &ones).unwrap(), 1.0);
    }

    #[test]
    fn closed_form_value() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        let v = kernel_eval(&k, &[0.0, 0.0], &[0.1, 0.0]).unwrap();
        // 0.01 / 0.02 = 0.5
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn invalid_inputs() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
        let k = KernelSpec::gaussian(0.1).unwrap();
        assert!(matches!(
            kernel_eval(&k, &[0.0], &[0.0, 1.0]),
            Err(ReachError::Dimension { .. })
        ));
        let p = random_points(3, 2, 0);
        assert!(kernel_vector(&k, &p, &[0.0]).is_err());
    }

    #[test]
    fn gram_small_cases() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        let one = Points::from_rows(&[[0.4, 0.2]]).unwrap();
        assert_eq!(gram(&k, &one).unwrap().entries()[(0, 0)], 1.0);

        let two = Points::from_rows(&[[0.4, 0.2], [0.4, 0.2]]).unwrap();
        let g = gram(&k, &two).unwrap();
        assert!(g.entries().iter().all(|&v| v == 1.0));
        let eig = SymmetricEigen::new(g.entries().clone()).eigenvalues;
        let mut e: Vec<f64> = eig.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert!(e[0].abs() < 1e-12 && (e[1] - 2.0).abs() < 1e-12);
        assert!(g.is_psd(1e-10));
    }

    #[test]
    fn gram_matches_double_loop() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        let p = random_points(5, 2, 11);
        let g = gram(&k, &p).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let r = reference_kernel(0.1, p.row(i), p.row(j));
                assert!((g.entries()[(i, j)] - r).abs() < 1e-12);
            }
        }
        assert!(g.is_symmetric());
    }

    #[test]
    fn kernel_vector_cases() {
        let k = KernelSpec::gaussian(0.1).unwrap();
        let p = random_points(8, 3, 5);
        let v = kernel_vector(&k, &p, p.row(4)).unwrap();
        assert_eq!(v[4], 1.0);
        for i in 0..8 {
            assert!((v[i] - reference_kernel(0.1, p.row(i), p.row(4))).abs() < 1e-12);
        }
        // ≥ 10σ from every point
        let far = kernel_vector(&k, &p, &[2.0, 2.0, 2.0]).unwrap();
        assert!(far.iter().all(|&x| x <= (-50.0f64).exp()));
    }

    #[test]
    fn cross_matrix_columns_are_kernel_vectors() {
        let k = KernelSpec::gaussian(0.2).unwrap();
        let p = random_points(6, 2, 1);
        let q = random_points(4, 2, 2);
        let c = cross_matrix(&k, &p, &q).unwrap();
        for j in 0..4 {
            let v = kernel_vector(&k, &p, q.row(j)).unwrap();
            for i in 0..6 {
                assert_eq!(c[(i, j)], v[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn gram_symmetric_psd(seed in 0u64..1000, n in 1usize..20, dim in 1usize..5) {
            let k = KernelSpec::gaussian(0.15).unwrap();
            let p = random_points(n, dim, seed);
            let g = gram(&k, &p).unwrap();
            prop_assert!(g.is_symmetric());
            prop_assert!(g.is_psd(1e-10));
            for i in 0..n {
                prop_assert_eq!(g.entries()[(i, i)], 1.0);
            }
            // G[i][j] = kernel_vector(points, points[j])[i]
            for j in 0..n {
                let v = kernel_vector(&k, &p, p.row(j)).unwrap();
                for i in 0..n {
                    prop_assert!((g.entries()[(i, j)] - v[i]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn shift_invariant_and_symmetric(
            a in prop::collection::vec(-1.0f64..1.0, 3),
            b in prop::collection::vec(-1.0f64..1.0, 3),
            c in prop::collection::vec(-1.0f64..1.0, 3),
            sigma in 0.3f64..2.0,
        ) {
            let k = KernelSpec::gaussian(sigma).unwrap();
            let ab = kernel_eval(&k, &a, &b).unwrap();
            prop_assert_eq!(ab, kernel_eval(&k, &b, &a).unwrap());
            let ac: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x + y).collect();
            let bc: Vec<f64> = b.iter().zip(&c).map(|(x, y)| x + y).collect();
            prop_assert!((kernel_eval(&k, &ac, &bc).unwrap() - ab).abs() <= 1e-12);
            prop_assert!(ab > 0.0 && ab <= 1.0);
        }

        #[test]
        fn monotone_in_distance(r1 in 0.0f64..2.0, r2 in 0.0f64..2.0) {
            let k = KernelSpec::gaussian(0.5).unwrap();
            let (near, far) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            let kn = kernel_eval(&k, &[0.0, 0.0], &[near, 0.0]).unwrap();
            let kf = kernel_eval(&k, &[0.0, 0.0], &[0.0, far]).unwrap();
            prop_assert!(kn >= kf);
        }
    }
}
