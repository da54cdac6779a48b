//! Run configuration: a flat TOML file plus command-line overrides.
//!
//! ```toml
//! system = "integrator"
//! dim = 2
//! sigma = 0.1
//! lambda = 1.0
//! horizon = 3
//! samples = 1024
//! seed = 7
//! grid = "-1.1:1.1:101"
//! ```
//!
//! Every key is optional; see [`RunConfig::default`] for the defaults, which
//! reproduce the double-integrator benchmark.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::Eta;
use crate::error::{ReachError, Result};
use crate::kernel::KernelSpec;
use crate::points::Points;
use crate::reach::{BoxRegion, ConstantPolicy, Policy, PolicySpec, ReachSpec, Region};
use crate::systems::{
    cwh_sets, orbital_rate, AffineFeedback, CwhSystem, DisturbanceSpec, IntegratorChain, StateSampler, System,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Integrator,
    Cwh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceKind {
    Gaussian,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// `u ≡ 0`.
    Zero,
    /// Saturated LQR docking controller (CWH only).
    Lqr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    /// Independent states, uniform over the sample box.
    Box,
    /// Closed-loop rollouts of `horizon` steps from the sample box.
    Rollout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Fixed,
    Max,
}

impl std::str::FromStr for Mode {
    type Err = ReachError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Mode::Fixed),
            "max" => Ok(Mode::Max),
            other => Err(ReachError::Config(format!("mode must be fixed or max, got {other:?}"))),
        }
    }
}

/// Axis-aligned tensor grid, written `lo:hi:count` per axis separated by
/// commas. A single axis spec applies to every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSpec {
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let axes: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        if axes.is_empty() {
            return Err(ReachError::Config("grid spec is empty".into()));
        }
        if axes.len() != 1 && axes.len() != dim {
            return Err(ReachError::Config(format!(
                "grid spec has {} axes but the state has {dim}",
                axes.len()
            )));
        }
        let mut parsed = Vec::with_capacity(axes.len());
        for a in &axes {
            let parts: Vec<&str> = a.split(':').collect();
            if parts.len() != 3 {
                return Err(ReachError::Config(format!("grid axis {a:?} is not lo:hi:count")));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| ReachError::Config(format!("bad number {s:?} in grid axis {a:?}")))
            };
            let (lo, hi) = (num(parts[0])?, num(parts[1])?);
            let count: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| ReachError::Config(format!("bad node count in grid axis {a:?}")))?;
            if count == 0 {
                return Err(ReachError::Config("evaluation grid is empty".into()));
            }
            if lo > hi {
                return Err(ReachError::Config(format!("grid axis {a:?} has lo > hi")));
            }
            parsed.push((lo, hi, count));
        }
        let pick = |i: usize| parsed[if parsed.len() == 1 { 0 } else { i }];
        let spec = Self {
            lower: (0..dim).map(|i| pick(i).0).collect(),
            upper: (0..dim).map(|i| pick(i).1).collect(),
            counts: (0..dim).map(|i| pick(i).2).collect(),
        };
        spec.counts
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .filter(|&t| t <= 20_000_000)
            .ok_or_else(|| ReachError::Config("evaluation grid exceeds 2e7 points".into()))?;
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> Result<Points> {
        Points::grid(&self.lower, &self.upper, &self.counts)
    }

    pub fn bounds(&self) -> Result<BoxRegion> {
        BoxRegion::new(self.lower.clone(), self.upper.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemKind,
    /// Integrator chain dimension.
    pub dim: usize,
    /// Defaults to 0.25 s (integrator) or 20 s (CWH).
    pub sampling_time: Option<f64>,
    pub disturbance: DisturbanceKind,
    /// Per-component Gaussian variance (integrator).
    pub variance: f64,
    pub beta_alpha: f64,
    pub beta_beta: f64,
    pub beta_centered: bool,
    pub cwh_altitude_km: f64,
    pub cwh_mass: f64,

    pub sigma: f64,
    /// Bandwidth of the state×control kernel; defaults to `sigma`.
    pub sigma_joint: Option<f64>,
    pub lambda: f64,
    /// Constant η; unit-sum normalization when absent.
    pub eta: Option<f64>,

    pub horizon: usize,
    pub samples: usize,
    pub seed: u64,
    pub policy: PolicyKind,
    pub sampler: SamplerKind,
    /// Sample box; defaults to the evaluation grid box inflated by 10%.
    pub sample_lower: Vec<f64>,
    pub sample_upper: Vec<f64>,

    /// Integrator safe/target boxes; one entry broadcasts to every axis.
    pub safe_lower: Vec<f64>,
    pub safe_upper: Vec<f64>,
    pub target_lower: Vec<f64>,
    pub target_upper: Vec<f64>,

    pub grid: String,
    pub mode: Mode,
    /// Control grid for max mode, same syntax as `grid`.
    pub controls: String,

    pub dp_nodes: usize,
    pub rollouts: usize,
    pub bench_dims: Vec<usize>,
    pub bench_repeats: usize,

    pub sample_file: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemKind::Integrator,
            dim: 2,
            sampling_time: None,
            disturbance: DisturbanceKind::Gaussian,
            variance: 0.01,
            beta_alpha: 0.5,
            beta_beta: 0.5,
            beta_centered: false,
            cwh_altitude_km: 850.0,
            cwh_mass: 300.0,
            sigma: 0.1,
            sigma_joint: None,
            lambda: 1.0,
            eta: None,
            horizon: 3,
            samples: 1024,
            seed: 7,
            policy: PolicyKind::Zero,
            sampler: SamplerKind::Box,
            sample_lower: Vec::new(),
            sample_upper: Vec::new(),
            safe_lower: vec![-1.0],
            safe_upper: vec![1.0],
            target_lower: vec![-1.0],
            target_upper: vec![1.0],
            grid: "-1.1:1.1:101".into(),
            mode: Mode::Fixed,
            controls: "-1:1:5".into(),
            dp_nodes: 40,
            rollouts: 100_000,
            bench_dims: vec![2, 100, 1000],
            bench_repeats: 3,
            sample_file: None,
            output: None,
        }
    }
}

fn broadcast(v: &[f64], dim: usize, name: &str) -> Result<Vec<f64>> {
    match v.len() {
        1 => Ok(vec![v[0]; dim]),
        n if n == dim => Ok(v.to_vec()),
        n => Err(ReachError::Config(format!("{name} has {n} entries, expected 1 or {dim}"))),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ReachError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReachError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::from_toml_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn state_dim(&self) -> usize {
        match self.system {
            SystemKind::Integrator => self.dim,
            SystemKind::Cwh => 4,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self.system {
            SystemKind::Integrator => 1,
            SystemKind::Cwh => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ReachError::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("sigma", self.sigma)?;
        if let Some(s) = self.sigma_joint {
            positive("sigma_joint", s)?;
        }
        positive("lambda", self.lambda)?;
        if let Some(e) = self.eta {
            positive("eta", e)?;
        }
        if let Some(t) = self.sampling_time {
            positive("sampling_time", t)?;
        }
        if self.horizon == 0 {
            return Err(ReachError::Config("horizon must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(ReachError::Config("samples must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(ReachError::Config("dim must be at least 1".into()));
        }
        if self.rollouts == 0 {
            return Err(ReachError::Config("rollouts must be at least 1".into()));
        }
        if self.dp_nodes < 2 {
            return Err(ReachError::Config("dp_nodes must be at least 2".into()));
        }
        if self.bench_repeats == 0 {
            return Err(ReachError::Config("bench_repeats must be at least 1".into()));
        }
        match self.disturbance {
            DisturbanceKind::Gaussian => positive("variance", self.variance)?,
            DisturbanceKind::Beta => {
                positive("beta_alpha", self.beta_alpha)?;
                positive("beta_beta", self.beta_beta)?;
            }
        }
        if self.system == SystemKind::Cwh {
            positive("cwh_mass", self.cwh_mass)?;
            positive("cwh_altitude_km", self.cwh_altitude_km)?;
            if self.disturbance != DisturbanceKind::Gaussian {
                return Err(ReachError::Config("CWH supports the Gaussian disturbance only".into()));
            }
        } else if self.policy == PolicyKind::Lqr {
            return Err(ReachError::Config("the lqr policy is defined for the CWH system only".into()));
        }
        GridSpec::parse(&self.grid, self.state_dim())?;
        if self.mode == Mode::Max {
            GridSpec::parse(&self.controls, self.control_dim())?;
        }
        self.state_sampler()?;
        if self.system == SystemKind::Integrator {
            self.integrator_sets()?;
        }
        Ok(())
    }

    /// Checks that an input file referenced by the config exists.
    pub fn require_file(path: Option<&Path>, what: &str) -> Result<PathBuf> {
        let p = path.ok_or_else(|| ReachError::Config(format!("no {what} given")))?;
        if !p.is_file() {
            return Err(ReachError::Config(format!("{what} {} does not exist", p.display())));
        }
        Ok(p.to_path_buf())
    }

    pub fn disturbance_spec(&self) -> DisturbanceSpec {
        match self.disturbance {
            DisturbanceKind::Gaussian => match self.system {
                SystemKind::Integrator => DisturbanceSpec::gaussian_isotropic(self.dim, self.variance),
                SystemKind::Cwh => DisturbanceSpec::GaussianIid {
                    variances: vec![1e-4, 1e-4, 5e-8, 5e-8],
                },
            },
            DisturbanceKind::Beta => DisturbanceSpec::BetaIid {
                alpha: self.beta_alpha,
                beta: self.beta_beta,
                centered: self.beta_centered,
            },
        }
    }

    pub fn integrator(&self) -> Result<IntegratorChain> {
        IntegratorChain::new(self.dim, self.sampling_time.unwrap_or(0.25), self.disturbance_spec())
    }

    pub fn cwh(&self) -> Result<CwhSystem> {
        CwhSystem::new(
            orbital_rate(self.cwh_altitude_km),
            self.cwh_mass,
            self.sampling_time.unwrap_or(20.0),
            self.disturbance_spec(),
        )
    }

    pub fn build_system(&self) -> Result<Arc<dyn System>> {
        Ok(match self.system {
            SystemKind::Integrator => Arc::new(self.integrator()?),
            SystemKind::Cwh => Arc::new(self.cwh()?),
        })
    }

    pub fn build_policy(&self) -> Result<Arc<dyn Policy>> {
        Ok(match (self.policy, self.system) {
            (PolicyKind::Zero, _) => Arc::new(ConstantPolicy(vec![0.0; self.control_dim()])),
            (PolicyKind::Lqr, SystemKind::Cwh) => Arc::new(AffineFeedback::cwh_docking(&self.cwh()?)?),
            (PolicyKind::Lqr, _) => {
                return Err(ReachError::Config("the lqr policy is defined for the CWH system only".into()))
            }
        })
    }

    fn integrator_sets(&self) -> Result<(BoxRegion, BoxRegion)> {
        let n = self.dim;
        let boxed = |lo: &[f64], hi: &[f64], name: &str| -> Result<BoxRegion> {
            BoxRegion::new(broadcast(lo, n, name)?, broadcast(hi, n, name)?)
                .map_err(|e| ReachError::Config(format!("{name}: {e}")))
        };
        Ok((
            boxed(&self.safe_lower, &self.safe_upper, "safe set")?,
            boxed(&self.target_lower, &self.target_upper, "target set")?,
        ))
    }

    /// `(safe, target)` for the configured system.
    pub fn sets(&self) -> Result<(Arc<dyn Region>, Arc<dyn Region>)> {
        match self.system {
            SystemKind::Integrator => {
                let (safe, target) = self.integrator_sets()?;
                Ok((Arc::new(safe), Arc::new(target)))
            }
            SystemKind::Cwh => {
                let (target, safe) = cwh_sets();
                Ok((safe, target))
            }
        }
    }

    pub fn control_grid(&self) -> Result<Vec<Vec<f64>>> {
        let g = GridSpec::parse(&self.controls, self.control_dim())?;
        Ok(g.points()?.rows().map(<[f64]>::to_vec).collect())
    }

    pub fn reach_spec(&self) -> Result<ReachSpec> {
        let (safe, target) = self.sets()?;
        let policy = match self.mode {
            Mode::Fixed => PolicySpec::Fixed(self.build_policy()?),
            Mode::Max => {
                let bounds = match self.system {
                    SystemKind::Cwh => Some(BoxRegion::cube(2, -0.1, 0.1)?),
                    SystemKind::Integrator => None,
                };
                PolicySpec::MaximalOverGrid {
                    controls: self.control_grid()?,
                    bounds,
                }
            }
        };
        ReachSpec::new(safe, target, self.horizon, policy)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::parse(&self.grid, self.state_dim())
    }

    pub fn evaluation_points(&self) -> Result<Points> {
        self.grid_spec()?.points()
    }

    pub fn state_sampler(&self) -> Result<StateSampler> {
        let n = self.state_dim();
        let b = if self.sample_lower.is_empty() && self.sample_upper.is_empty() {
            self.grid_spec()?.bounds()?.inflated(1.1)
        } else {
            BoxRegion::new(
                broadcast(&self.sample_lower, n, "sample_lower")?,
                broadcast(&self.sample_upper, n, "sample_upper")?,
            )
            .map_err(|e| ReachError::Config(format!("sample box: {e}")))?
        };
        Ok(StateSampler::UniformBox(b))
    }

    pub fn kernels(&self) -> Result<(KernelSpec, KernelSpec)> {
        Ok((
            KernelSpec::gaussian(self.sigma)?,
            KernelSpec::gaussian(self.sigma_joint.unwrap_or(self.sigma))?,
        ))
    }

    pub fn eta(&self) -> Eta {
        match self.eta {
            Some(c) => Eta::Constant(c),
            None => Eta::UnitSum,
        }
    }
}
