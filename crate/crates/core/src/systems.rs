//! Benchmark dynamics and transition samplers.
//!
//! Two linear systems with additive i.i.d. disturbance, `x' = A x + B u + w`:
//!
//! - [`IntegratorChain`]: the n-D stochastic chain of integrators, with
//!   Gaussian or Beta disturbance;
//! - [`CwhSystem`]: planar Clohessy–Wiltshire–Hill relative motion,
//!   discretized with an exact zero-order hold.
//!
//! The estimator never sees these models; they only generate samples and
//! power the oracles.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, Matrix4, Matrix4x2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::embedding::{SampleMeta, SampleSet};
use crate::error::{ReachError, Result};
use crate::points::Points;
use crate::reach::{BoxRegion, Policy, Region};

/// Additive disturbance law, i.i.d. across steps and (for Beta) components.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSpec {
    /// Zero-mean Gaussian with diagonal covariance.
    GaussianIid { variances: Vec<f64> },
    /// Beta(α, β) per component on `[0, 1]`, optionally shifted to zero mean.
    BetaIid { alpha: f64, beta: f64, centered: bool },
    /// No disturbance (deterministic dynamics, for tests).
    Zero,
}

impl DisturbanceSpec {
    pub fn gaussian_isotropic(dim: usize, variance: f64) -> Self {
        DisturbanceSpec::GaussianIid {
            variances: vec![variance; dim],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            DisturbanceSpec::GaussianIid { variances } => {
                if variances.len() != dim {
                    return Err(ReachError::dim(dim, variances.len(), "disturbance variances"));
                }
                if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(ReachError::Input("Gaussian variances must be positive".into()));
                }
            }
            DisturbanceSpec::BetaIid { alpha, beta, .. } => {
                if !(alpha.is_finite() && *alpha > 0.0 && beta.is_finite() && *beta > 0.0) {
                    return Err(ReachError::Input("Beta shape parameters must be positive".into()));
                }
            }
            DisturbanceSpec::Zero => {}
        }
        Ok(())
    }

    /// Draws one disturbance vector of length `dim`.
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match self {
            DisturbanceSpec::GaussianIid { variances } => variances
                .iter()
                .map(|v| {
                    let d = Normal::new(0.0, v.sqrt()).expect("validated variance");
                    d.sample(rng)
                })
                .collect(),
            DisturbanceSpec::BetaIid { alpha, beta, centered } => {
                let d = Beta::new(*alpha, *beta).expect("validated shape");
                let shift = if *centered { alpha / (alpha + beta) } else { 0.0 };
                (0..dim).map(|_| d.sample(rng) - shift).collect()
            }
            DisturbanceSpec::Zero => vec![0.0; dim],
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DisturbanceSpec::GaussianIid { variances } => {
                let same = variances.windows(2).all(|w| w[0] == w[1]);
                if same {
                    format!("gaussian(var={})", variances.first().copied().unwrap_or(0.0))
                } else {
                    format!("gaussian(var={variances:?})")
                }
            }
            DisturbanceSpec::BetaIid { alpha, beta, centered } => {
                format!("beta(alpha={alpha},beta={beta},centered={centered})")
            }
            DisturbanceSpec::Zero => "zero".into(),
        }
    }
}

/// Discrete-time stochastic system `x' = f(x, u) + w`.
pub trait System: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    fn disturbance(&self) -> &DisturbanceSpec;

    /// Input bounds, when declared.
    fn input_bounds(&self) -> Option<&BoxRegion> {
        None
    }

    /// Noise-free part `f(x, u)`.
    fn deterministic(&self, x: &[f64], u: &[f64]) -> Vec<f64>;

    /// One transition with a disturbance drawn from `rng`.
    fn step(&self, x: &[f64], u: &[f64], rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() {
            return Err(ReachError::dim(self.state_dim(), x.len(), "state"));
        }
        if u.len() != self.control_dim() {
            return Err(ReachError::dim(self.control_dim(), u.len(), "control"));
        }
        if let Some(b) = self.input_bounds() {
            if !b.contains(u) {
                log::warn!("control {u:?} outside declared input bounds");
            }
        }
        let mut y = self.deterministic(x, u);
        let w = self.disturbance().sample(self.state_dim(), rng);
        for (yi, wi) in y.iter_mut().zip(w) {
            *yi += wi;
        }
        Ok(y)
    }
}

/// n-D chain of integrators with the input entering at the last derivative.
///
/// `A[i][j] = T^(j−i)/(j−i)!` for `j ≥ i` and `B[i] = T^(n−i)/(n−i)!`
/// (0-indexed). Coefficients are generated by the recurrence
/// `c_d = c_{d−1} T / d`, which underflows to exactly zero for large `d`, so
/// transitions cost `O(n · d_max)` instead of `O(n²)`.
#[derive(Debug, Clone)]
pub struct IntegratorChain {
    n: usize,
    sampling_time: f64,
    disturbance: DisturbanceSpec,
    // c_d = T^d / d!, trimmed after the first exact zero
    coeffs: Vec<f64>,
}

impl IntegratorChain {
    pub fn new(n: usize, sampling_time: f64, disturbance: DisturbanceSpec) -> Result<Self> {
        if n == 0 {
            return Err(ReachError::Input("integrator chain needs n ≥ 1".into()));
        }
        if !(sampling_time.is_finite() && sampling_time > 0.0) {
            return Err(ReachError::Input(format!(
                "sampling time must be positive, got {sampling_time}"
            )));
        }
        disturbance.validate(n)?;
        let mut coeffs = vec![1.0];
        for d in 1..=n {
            let c = coeffs[d - 1] * sampling_time / d as f64;
            if !c.is_finite() {
                return Err(ReachError::Numerical(format!(
                    "integrator coefficient T^{d}/{d}! overflowed"
                )));
            }
            if c == 0.0 {
                break;
            }
            coeffs.push(c);
        }
        Ok(Self {
            n,
            sampling_time,
            disturbance,
            coeffs,
        })
    }

    pub fn sampling_time(&self) -> f64 {
        self.sampling_time
    }

    fn coeff(&self, d: usize) -> f64 {
        self.coeffs.get(d).copied().unwrap_or(0.0)
    }

    /// Entry `A[i][j]` (0-indexed).
    pub fn a(&self, i: usize, j: usize) -> f64 {
        if j < i {
            0.0
        } else {
            self.coeff(j - i)
        }
    }

    /// Entry `B[i]` (0-indexed).
    pub fn b(&self, i: usize) -> f64 {
        self.coeff(self.n - i)
    }

    /// Dense `A`; only sensible for small `n`.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.a(i, j))
    }

    pub fn b_vector(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.b(i)).collect()
    }
}

impl System for IntegratorChain {
    fn name(&self) -> String {
        format!("integrator{}", self.n)
    }

    fn state_dim(&self) -> usize {
        self.n
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn disturbance(&self) -> &DisturbanceSpec {
        &self.disturbance
    }

    fn deterministic(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.n;
        let dmax = self.coeffs.len();
        (0..n)
            .map(|i| {
                let upto = (n - i).min(dmax);
                let mut acc = 0.0;
                for d in 0..upto {
                    acc += self.coeffs[d] * x[i + d];
                }
                acc + self.b(i) * u[0]
            })
            .collect()
    }
}

/// Standard gravitational parameter of Earth, km³/s².
pub const EARTH_MU: f64 = 398_600.441_8;
/// Mean equatorial radius of Earth, km.
pub const EARTH_RADIUS: f64 = 6378.1;

/// CWH relative motion `z = [x, y, ẋ, ẏ]` (km, km/s) with thrust `u = [F_x, F_y]`.
///
/// Continuous dynamics `ẍ = 3ω²x + 2ωẏ + F_x/m`, `ÿ = −2ωẋ + F_y/m`,
/// discretized in closed form under a zero-order hold.
#[derive(Debug, Clone)]
pub struct CwhSystem {
    omega: f64,
    mass: f64,
    sampling_time: f64,
    a: Matrix4<f64>,
    b: Matrix4x2<f64>,
    disturbance: DisturbanceSpec,
    input_bounds: BoxRegion,
}

impl CwhSystem {
    pub fn new(omega: f64, mass: f64, sampling_time: f64, disturbance: DisturbanceSpec) -> Result<Self> {
        for (name, v) in [("omega", omega), ("mass", mass), ("sampling time", sampling_time)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ReachError::Input(format!("CWH {name} must be positive, got {v}")));
            }
        }
        disturbance.validate(4)?;
        let (a, b) = cwh_discrete(omega, mass, sampling_time);
        Ok(Self {
            omega,
            mass,
            sampling_time,
            a,
            b,
            disturbance,
            input_bounds: BoxRegion::cube(2, -0.1, 0.1)?,
        })
    }

    /// Circular orbit at `altitude_km`, 300 kg chaser, 20 s steps and the
    /// disturbance `diag(1e-4, 1e-4, 5e-8, 5e-8)`.
    pub fn with_defaults() -> Self {
        Self::new(
            orbital_rate(850.0),
            300.0,
            20.0,
            DisturbanceSpec::GaussianIid {
                variances: vec![1e-4, 1e-4, 5e-8, 5e-8],
            },
        )
        .expect("default CWH parameters are valid")
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn sampling_time(&self) -> f64 {
        self.sampling_time
    }

    pub fn a(&self) -> &Matrix4<f64> {
        &self.a
    }

    pub fn b(&self) -> &Matrix4x2<f64> {
        &self.b
    }

    pub fn with_disturbance(&self, disturbance: DisturbanceSpec) -> Result<Self> {
        Self::new(self.omega, self.mass, self.sampling_time, disturbance)
    }
}

/// Mean motion of a circular orbit at the given altitude, rad/s.
pub fn orbital_rate(altitude_km: f64) -> f64 {
    let r = EARTH_RADIUS + altitude_km;
    (EARTH_MU / (r * r * r)).sqrt()
}

fn cwh_discrete(w: f64, m: f64, t: f64) -> (Matrix4<f64>, Matrix4x2<f64>) {
    let (s, c) = (w * t).sin_cos();
    #[rustfmt::skip]
    let a = Matrix4::new(
        4.0 - 3.0 * c,            0.0, s / w,                    2.0 * (1.0 - c) / w,
        6.0 * (s - w * t),        1.0, -2.0 * (1.0 - c) / w,     (4.0 * s - 3.0 * w * t) / w,
        3.0 * w * s,              0.0, c,                        2.0 * s,
        -6.0 * w * (1.0 - c),     0.0, -2.0 * s,                 4.0 * c - 3.0,
    );
    // ∫₀ᵀ Φ(τ) dτ restricted to the velocity columns, divided by the mass
    #[rustfmt::skip]
    let b = Matrix4x2::new(
        (1.0 - c) / (w * w),               2.0 * (t - s / w) / w,
        -2.0 * (t - s / w) / w,            4.0 * (1.0 - c) / (w * w) - 1.5 * t * t,
        s / w,                             2.0 * (1.0 - c) / w,
        -2.0 * (1.0 - c) / w,              4.0 * s / w - 3.0 * t,
    ) / m;
    (a, b)
}

impl System for CwhSystem {
    fn name(&self) -> String {
        "cwh".into()
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn disturbance(&self) -> &DisturbanceSpec {
        &self.disturbance
    }

    fn input_bounds(&self) -> Option<&BoxRegion> {
        Some(&self.input_bounds)
    }

    fn deterministic(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; 4];
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..4 {
                acc += self.a[(i, j)] * x[j];
            }
            for j in 0..2 {
                acc += self.b[(i, j)] * u[j];
            }
            y[i] = acc;
        }
        y
    }
}

/// Docking target: `|z₁| ≤ 0.1`, `−0.1 < z₂ < 0`, `|z₃| ≤ 0.01`, `|z₄| ≤ 0.01`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CwhTarget;

impl Region for CwhTarget {
    fn contains(&self, z: &[f64]) -> bool {
        z.len() == 4
            && z[0].abs() <= 0.1
            && -0.1 < z[1]
            && z[1] < 0.0
            && z[2].abs() <= 0.01
            && z[3].abs() <= 0.01
    }
}

/// Line-of-sight cone: `|z₁| < |z₂|`, `|z₃| ≤ 0.05`, `|z₄| ≤ 0.05`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LineOfSightCone;

impl Region for LineOfSightCone {
    fn contains(&self, z: &[f64]) -> bool {
        z.len() == 4 && z[0].abs() < z[1].abs() && z[2].abs() <= 0.05 && z[3].abs() <= 0.05
    }
}

/// `(target, safe)` membership predicates of the rendezvous problem.
pub fn cwh_sets() -> (Arc<dyn Region>, Arc<dyn Region>) {
    (Arc::new(CwhTarget), Arc::new(LineOfSightCone))
}

/// Saturated affine state feedback `u = sat(offset − K (x − reference))`.
#[derive(Debug, Clone)]
pub struct AffineFeedback {
    gain: DMatrix<f64>,
    reference: Vec<f64>,
    offset: Vec<f64>,
    bounds: Option<BoxRegion>,
}

impl AffineFeedback {
    pub fn new(
        gain: DMatrix<f64>,
        reference: Vec<f64>,
        offset: Vec<f64>,
        bounds: Option<BoxRegion>,
    ) -> Result<Self> {
        if reference.len() != gain.ncols() {
            return Err(ReachError::dim(gain.ncols(), reference.len(), "feedback reference"));
        }
        if offset.len() != gain.nrows() {
            return Err(ReachError::dim(gain.nrows(), offset.len(), "feedback offset"));
        }
        if let Some(b) = &bounds {
            if b.dim() != gain.nrows() {
                return Err(ReachError::dim(gain.nrows(), b.dim(), "feedback bounds"));
            }
        }
        Ok(Self {
            gain,
            reference,
            offset,
            bounds,
        })
    }

    /// Infinite-horizon discrete LQR gain for `(A, B, Q, R)` by Riccati iteration.
    pub fn lqr(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        reference: Vec<f64>,
        bounds: Option<BoxRegion>,
    ) -> Result<Self> {
        let mut p = q.clone();
        let mut gain = DMatrix::zeros(b.ncols(), a.ncols());
        for _ in 0..10_000 {
            let btp = b.transpose() * &p;
            let s = r + &btp * b;
            let s_inv = s
                .try_inverse()
                .ok_or_else(|| ReachError::Numerical("singular LQR input weight".into()))?;
            gain = &s_inv * &btp * a;
            let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &gain;
            let delta = (&next - &p).abs().max();
            p = next;
            if delta <= 1e-12 * p.abs().max().max(1.0) {
                break;
            }
        }
        if !gain.iter().all(|g| g.is_finite()) {
            return Err(ReachError::Numerical("LQR iteration diverged".into()));
        }
        let m = gain.nrows();
        Self::new(gain, reference, vec![0.0; m], bounds)
    }

    /// Built-in docking controller for the rendezvous benchmark: LQR about
    /// the target center `(0, −0.05, 0, 0)`, saturated to the input bounds.
    pub fn cwh_docking(system: &CwhSystem) -> Result<Self> {
        let a = DMatrix::from_iterator(4, 4, system.a().iter().copied());
        let b = DMatrix::from_iterator(4, 2, system.b().iter().copied());
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0, 1e2, 1e2]));
        let r = DMatrix::from_diagonal_element(2, 2, 1.0);
        Self::lqr(
            &a,
            &b,
            &q,
            &r,
            vec![0.0, -0.05, 0.0, 0.0],
            system.input_bounds().cloned(),
        )
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }
}

impl Policy for AffineFeedback {
    fn control_dim(&self) -> usize {
        self.gain.nrows()
    }

    fn control(&self, _k: usize, x: &[f64]) -> Vec<f64> {
        (0..self.gain.nrows())
            .map(|i| {
                let mut u = self.offset[i];
                for j in 0..self.gain.ncols() {
                    u -= self.gain[(i, j)] * (x[j] - self.reference[j]);
                }
                match &self.bounds {
                    Some(b) => u.clamp(b.lower()[i], b.upper()[i]),
                    None => u,
                }
            })
            .collect()
    }

    fn describe(&self) -> String {
        "affine-feedback".into()
    }
}

/// Distribution of the sampled states `x̄ᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSampler {
    UniformBox(BoxRegion),
}

impl StateSampler {
    pub fn dim(&self) -> usize {
        match self {
            StateSampler::UniformBox(b) => b.dim(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            StateSampler::UniformBox(b) => b
                .lower()
                .iter()
                .zip(b.upper())
                .map(|(&l, &u)| if l == u { l } else { rng.random_range(l..u) })
                .collect(),
        }
    }
}

/// Draws `M` transitions: `x̄ᵢ` from `sampler`, `ūᵢ = π₀(x̄ᵢ)`,
/// `ȳᵢ = step(x̄ᵢ, ūᵢ)`. Bit-reproducible per `(seed, M, system)`.
pub fn generate_samples(
    system: &dyn System,
    policy: &dyn Policy,
    m: usize,
    sampler: &StateSampler,
    seed: u64,
) -> Result<SampleSet> {
    if m == 0 {
        return Err(ReachError::Input("sample count must be at least 1".into()));
    }
    let n = system.state_dim();
    if sampler.dim() != n {
        return Err(ReachError::dim(n, sampler.dim(), "state sampler"));
    }
    if policy.control_dim() != system.control_dim() {
        return Err(ReachError::dim(system.control_dim(), policy.control_dim(), "policy control"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(m * n);
    let mut us = Vec::with_capacity(m * system.control_dim());
    let mut ys = Vec::with_capacity(m * n);
    for _ in 0..m {
        let x = sampler.sample(&mut rng);
        let u = policy.control(0, &x);
        let y = system.step(&x, &u, &mut rng)?;
        xs.extend_from_slice(&x);
        us.extend_from_slice(&u);
        ys.extend_from_slice(&y);
    }
    let controls = if system.control_dim() == 0 {
        Points::zero_dim(m)
    } else {
        Points::new(system.control_dim(), us)?
    };
    SampleSet::new(
        Points::new(n, xs)?,
        controls,
        Points::new(n, ys)?,
        SampleMeta {
            system: system.name(),
            seed: Some(seed),
            policy: policy.describe(),
        },
    )
}

/// Draws `M` transitions along closed-loop rollouts: each rollout starts
/// from `initial`, follows `policy` for up to `rollout_length` steps and
/// contributes every visited `(x_k, π_k(x_k), x_{k+1})`.
///
/// States then carry the velocity/position correlations that the closed
/// loop produces, which matters when some state components are small
/// compared to the kernel bandwidth.
pub fn generate_rollout_samples(
    system: &dyn System,
    policy: &dyn Policy,
    m: usize,
    initial: &StateSampler,
    rollout_length: usize,
    seed: u64,
) -> Result<SampleSet> {
    if m == 0 {
        return Err(ReachError::Input("sample count must be at least 1".into()));
    }
    if rollout_length == 0 {
        return Err(ReachError::Input("rollout length must be at least 1".into()));
    }
    let n = system.state_dim();
    if initial.dim() != n {
        return Err(ReachError::dim(n, initial.dim(), "state sampler"));
    }
    if policy.control_dim() != system.control_dim() || policy.control_dim() == 0 {
        return Err(ReachError::dim(system.control_dim(), policy.control_dim(), "policy control"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(m * n);
    let mut us = Vec::with_capacity(m * system.control_dim());
    let mut ys = Vec::with_capacity(m * n);
    let mut drawn = 0;
    while drawn < m {
        let mut x = initial.sample(&mut rng);
        for k in 0..rollout_length.min(m - drawn) {
            let u = policy.control(k, &x);
            let y = system.step(&x, &u, &mut rng)?;
            xs.extend_from_slice(&x);
            us.extend_from_slice(&u);
            ys.extend_from_slice(&y);
            x = y;
            drawn += 1;
        }
    }
    SampleSet::new(
        Points::new(n, xs)?,
        Points::new(system.control_dim(), us)?,
        Points::new(n, ys)?,
        SampleMeta {
            system: system.name(),
            seed: Some(seed),
            policy: format!("{} (rollouts of {rollout_length})", policy.describe()),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reach::ConstantPolicy;
    use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

    fn factorial(k: usize) -> f64 {
        (1..=k).map(|v| v as f64).product()
    }

    #[test]
    fn integrator_matrices_closed_form() {
        for n in [2usize, 5, 100] {
            let t = 0.25;
            let sys = IntegratorChain::new(n, t, DisturbanceSpec::Zero).unwrap();
            for i in 0..n.min(12) {
                for j in 0..n.min(12) {
                    let expected = if j >= i { t.powi((j - i) as i32) / factorial(j - i) } else { 0.0 };
                    assert!((sys.a(i, j) - expected).abs() <= 1e-15 * expected.max(1e-300), "A[{i}][{j}]");
                }
                let d = n - i;
                let expected = t.powi(d as i32) / factorial(d);
                if expected.is_finite() && d < 150 {
                    assert!((sys.b(i) - expected).abs() <= 1e-13 * expected);
                }
            }
            assert_eq!(sys.b(n - 1), t);
        }
        let big = IntegratorChain::new(10_000, 0.25, DisturbanceSpec::Zero).unwrap();
        assert!(big.b_vector().iter().all(|v| v.is_finite()));
        assert_eq!(big.b(0), 0.0);
        assert_eq!(big.a(0, 9_999), 0.0);
    }

    #[test]
    fn sparse_step_matches_dense_product() {
        let sys = IntegratorChain::new(7, 0.4, DisturbanceSpec::Zero).unwrap();
        let x: Vec<f64> = (0..7).map(|i| (i as f64 * 0.7).cos()).collect();
        let dense = sys.a_matrix() * nalgebra::DVector::from_vec(x.clone())
            + nalgebra::DVector::from_vec(sys.b_vector()) * 0.3;
        let fast = sys.deterministic(&x, &[0.3]);
        for i in 0..7 {
            assert!((dense[i] - fast[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn double_integrator_step() {
        let sys = IntegratorChain::new(2, 0.25, DisturbanceSpec::Zero).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sys.step(&[0.0, 0.0], &[0.0], &mut rng).unwrap(), vec![0.0, 0.0]);
        assert_eq!(sys.step(&[1.0, 1.0], &[0.0], &mut rng).unwrap(), vec![1.25, 1.0]);
        assert!(sys.step(&[1.0], &[0.0], &mut rng).is_err());
        assert!(sys.step(&[1.0, 1.0], &[], &mut rng).is_err());
    }

    #[test]
    fn gaussian_disturbance_moments() {
        let d = DisturbanceSpec::gaussian_isotropic(2, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let w = d.sample(2, &mut rng);
            for i in 0..2 {
                sum[i] += w[i];
                sq[i] += w[i] * w[i];
            }
        }
        for i in 0..2 {
            let mean = sum[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!(mean.abs() <= 4.0 * 0.1 / (n as f64).sqrt());
            assert!((var - 0.01).abs() <= 0.1 * 0.01);
        }
    }

    #[test]
    fn beta_disturbance_distribution() {
        let d = DisturbanceSpec::BetaIid {
            alpha: 0.5,
            beta: 0.5,
            centered: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut draws: Vec<f64> = Vec::with_capacity(2 * n);
        let mut sums = [0.0; 2];
        for _ in 0..n {
            let w = d.sample(2, &mut rng);
            sums[0] += w[0];
            sums[1] += w[1];
            draws.push(w[0]);
        }
        for s in sums {
            assert!((s / n as f64 - 0.5).abs() <= 0.01);
        }
        draws.sort_by(f64::total_cmp);
        let cdf = BetaDist::new(0.5, 0.5).unwrap();
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf.cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 0.01, "KS statistic {ks}");

        let centered = DisturbanceSpec::BetaIid {
            alpha: 0.5,
            beta: 0.5,
            centered: true,
        };
        let m: f64 = (0..20_000).map(|_| centered.sample(1, &mut rng)[0]).sum::<f64>() / 20_000.0;
        assert!(m.abs() < 0.01);
    }

    #[test]
    fn generate_samples_reproducible() {
        let sys = IntegratorChain::new(2, 0.25, DisturbanceSpec::gaussian_isotropic(2, 0.01)).unwrap();
        let sampler = StateSampler::UniformBox(BoxRegion::cube(2, -1.1, 1.1).unwrap());
        let zero = ConstantPolicy(vec![0.0]);
        let a = generate_samples(&sys, &zero, 1024, &sampler, 7).unwrap();
        assert_eq!(a.len(), 1024);
        assert!(a.controls().as_slice().iter().all(|&u| u == 0.0));
        assert!(a.states().rows().all(|x| x.iter().all(|v| v.abs() <= 1.1)));
        let b = generate_samples(&sys, &zero, 1024, &sampler, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_samples(&sys, &zero, 1024, &sampler, 8).unwrap();
        assert_ne!(a, c);
        assert!(generate_samples(&sys, &zero, 0, &sampler, 7).is_err());
    }

    #[test]
    fn rollout_samples_chain_successors() {
        let sys = CwhSystem::with_defaults();
        let pi = AffineFeedback::cwh_docking(&sys).unwrap();
        let init = StateSampler::UniformBox(
            BoxRegion::new(vec![-0.5, -0.9, 0.0, 0.0], vec![0.5, 0.0, 0.0, 0.0]).unwrap(),
        );
        let s = generate_rollout_samples(&sys, &pi, 12, &init, 5, 3).unwrap();
        assert_eq!(s.len(), 12);
        for i in [0usize, 1, 2, 3, 5, 6, 7, 8] {
            assert_eq!(s.successors().row(i), s.states().row(i + 1));
        }
        assert_eq!(&s.states().row(5)[2..], &[0.0, 0.0]);
        assert_eq!(s, generate_rollout_samples(&sys, &pi, 12, &init, 5, 3).unwrap());
    }

    #[test]
    fn cwh_set_membership() {
        let (target, safe) = cwh_sets();
        let z = [0.0, -0.05, 0.0, 0.0];
        assert!(target.contains(&z) && safe.contains(&z));
        assert!(!safe.contains(&[0.2, -0.1, 0.0, 0.0]));
        assert!(!target.contains(&[0.0, -0.1, 0.0, 0.0]));
        assert!(!target.contains(&[0.0, -0.05, 0.02, 0.0]));
        assert!(!safe.contains(&[0.0, -0.5, 0.0, 0.06]));
    }

    // matrix exponential by scaling and squaring of a Taylor series
    fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
        let norm = m.abs().max();
        let squarings = (norm.log2().ceil().max(0.0) as i32 + 4).max(0) as u32;
        let scaled = m / 2f64.powi(squarings as i32);
        let n = m.nrows();
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn cwh_zoh_matches_matrix_exponential() {
        let sys = CwhSystem::with_defaults();
        let w = sys.omega();
        let m = sys.mass();
        // augmented [[Ac, Bc], [0, 0]] · T
        let mut aug = DMatrix::zeros(6, 6);
        aug[(0, 2)] = 1.0;
        aug[(1, 3)] = 1.0;
        aug[(2, 0)] = 3.0 * w * w;
        aug[(2, 3)] = 2.0 * w;
        aug[(3, 2)] = -2.0 * w;
        aug[(2, 4)] = 1.0 / m;
        aug[(3, 5)] = 1.0 / m;
        let e = expm(&(aug * sys.sampling_time()));
        for i in 0..4 {
            for j in 0..4 {
                assert!((e[(i, j)] - sys.a()[(i, j)]).abs() <= 1e-10, "A[{i}][{j}]");
            }
            for j in 0..2 {
                assert!((e[(i, 4 + j)] - sys.b()[(i, j)]).abs() <= 1e-10, "B[{i}][{j}]");
            }
        }
        assert!((w - 1.027_383_672e-3).abs() < 1e-12);
    }

    #[test]
    fn docking_controller_saturates_and_stabilizes() {
        let sys = CwhSystem::with_defaults();
        let pi = AffineFeedback::cwh_docking(&sys).unwrap();
        let u = pi.control(0, &[0.5, -0.8, 0.0, 0.0]);
        assert!(u.iter().all(|v| v.abs() <= 0.1));
        let u0 = pi.control(0, &[0.0, -0.05, 0.0, 0.0]);
        assert!(u0.iter().all(|v| v.abs() < 1e-15));
        // noise-free closed loop converges toward the reference
        let mut z = vec![0.2, -0.4, 0.0, 0.0];
        for k in 0..200 {
            let u = pi.control(k, &z);
            z = sys.deterministic(&z, &u);
        }
        assert!(z[0].abs() < 1e-3 && (z[1] + 0.05).abs() < 1e-3);
    }
}
