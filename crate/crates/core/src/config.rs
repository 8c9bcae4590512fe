//! Run configuration: JSON schema, validation, and builders for the
//! discrete space, loading program and initial state.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::discretization::{
    DirichletKind, DiscreteSpace, LoadingProgram, Mesh, Profile, ProfileKind, Side, State,
};
use crate::error::CoreError;
use crate::material::{
    ConstraintFamily, DamageDissipation, DamagePotential, ElasticLaw, MaterialModel,
    ViscosityTensor,
};
use crate::tensor::{Dev2, Sym2};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub material: MaterialConfig,
    pub grid: GridConfig,
    pub loading: LoadingConfig,
    pub initial: InitialConfig,
    pub solver: SolverConfig,
    pub params: ParamConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub gamma1: f64,
    pub gamma2: f64,
    pub c_w: f64,
    pub q_exp: f64,
    pub r_bar: f64,
    #[serde(rename = "R_bar")]
    pub big_r_bar: f64,
    pub kappa: f64,
    pub delta: f64,
    pub m_exp: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub dirichlet: DirichletKind,
    #[serde(default)]
    pub neumann: Vec<Side>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WPattern {
    /// `w = amplitude * (x / lx, 0)`.
    StretchX,
    /// `w = amplitude * (y / ly, 0)`.
    ShearX,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub kind: ProfileKind,
    pub p0: f64,
    pub p1: f64,
}

impl ProfileConfig {
    fn build(&self, t_end: f64) -> Profile {
        Profile { kind: self.kind, p0: self.p0, p1: self.p1, t_end }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingConfig {
    /// Shear amplitude of the uniform safe-load stress `[[0, tau], [tau, 0]]`.
    pub rho_shear: f64,
    pub rho_profile: ProfileConfig,
    pub w_pattern: WPattern,
    pub w_amplitude: f64,
    pub w_profile: ProfileConfig,
    /// Required uniform safe-load margin.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    /// Uniform initial damage, `0 < z0 <= 1`.
    pub z0: f64,
    pub p0: InitialPlastic,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialPlastic {
    Zero,
    /// Chooses `p0` cell-wise so that `|sigma_D(0)| = factor * r(z0)`
    /// with `u0 = 0`; factors above 1 start outside the constraint set.
    SigmaFactor { factor: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub t_end: f64,
    pub n_steps: usize,
    pub tol_alt: f64,
    pub max_alt: usize,
    pub z_min: f64,
    pub tol_unidir: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamConfig {
    pub eps: f64,
    pub mu: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SweepPath {
    EpsFirst,
    EpsnuFirst,
    Joint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub path: SweepPath,
    /// Decreasing parameter grid.
    pub grid: Vec<f64>,
    /// Extra decade applied to the parameter taken to its limit first.
    pub deep_factor: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Classification tolerance for equilibrium/stability quantities.
    pub tol_eq: f64,
    /// Classification tolerance for normalized rates.
    pub tol_rate: f64,
    /// Uniform resampling count as a multiple of the step count.
    pub resample_factor: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, CoreError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<RunConfig, CoreError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CoreError::Config(format!(
                "unsupported schema_version {} (expected {})",
                self.schema_version, SCHEMA_VERSION
            )));
        }
        self.material_model().validate()?;
        if self.grid.nx == 0 || self.grid.ny == 0 || self.grid.lx <= 0.0 || self.grid.ly <= 0.0 {
            return Err(CoreError::Config("grid dimensions must be positive".into()));
        }
        for (name, v) in [
            ("solver.tol_alt", self.solver.tol_alt),
            ("solver.z_min", self.solver.z_min),
            ("solver.tol_unidir", self.solver.tol_unidir),
            ("analysis.tol_eq", self.analysis.tol_eq),
            ("analysis.tol_rate", self.analysis.tol_rate),
        ] {
            if v <= 0.0 {
                return Err(CoreError::Config(format!("{name} must be positive")));
            }
        }
        if self.solver.t_end <= 0.0 || self.solver.n_steps == 0 {
            return Err(CoreError::Config("solver.t_end and n_steps must be positive".into()));
        }
        if self.analysis.resample_factor == 0 {
            return Err(CoreError::Config("analysis.resample_factor must be positive".into()));
        }
        let p = &self.params;
        if p.eps <= 0.0 || p.mu <= 0.0 || p.nu <= 0.0 {
            return Err(CoreError::Config("params must be positive".into()));
        }
        if p.nu > p.mu {
            return Err(CoreError::RateOrdering { nu: p.nu, mu: p.mu });
        }
        if let Some(sweep) = &self.sweep {
            if sweep.grid.is_empty() {
                return Err(CoreError::Config("sweep.grid must be nonempty".into()));
            }
            if sweep.grid.iter().any(|&g| g <= 0.0) {
                return Err(CoreError::Config("sweep.grid entries must be positive".into()));
            }
            if sweep.grid.windows(2).any(|w| w[1] >= w[0]) {
                return Err(CoreError::Config("sweep.grid must be strictly decreasing".into()));
            }
            if !(sweep.deep_factor > 0.0 && sweep.deep_factor <= 1.0) {
                return Err(CoreError::Config("sweep.deep_factor must lie in (0, 1]".into()));
            }
        }
        if !(self.initial.z0 > 0.0 && self.initial.z0 <= 1.0) {
            return Err(CoreError::Config("initial.z0 must lie in (0, 1]".into()));
        }
        if self.loading.alpha <= 0.0 {
            return Err(CoreError::Config("loading.alpha must be positive".into()));
        }
        Ok(())
    }

    pub fn material_model(&self) -> MaterialModel {
        let m = &self.material;
        MaterialModel {
            elastic: ElasticLaw { gamma1: m.gamma1, gamma2: m.gamma2 },
            damage: DamagePotential { c_w: m.c_w, q_exp: m.q_exp },
            constraint: ConstraintFamily { r_bar: m.r_bar, big_r_bar: m.big_r_bar },
            viscosity: ViscosityTensor { delta: m.delta },
            toughness: DamageDissipation { kappa: m.kappa },
            m_exp: m.m_exp,
        }
    }

    pub fn build_space(&self) -> Result<DiscreteSpace, CoreError> {
        let mesh = Mesh {
            nx: self.grid.nx,
            ny: self.grid.ny,
            lx: self.grid.lx,
            ly: self.grid.ly,
        };
        DiscreteSpace::build(mesh, self.grid.dirichlet, self.material_model())
    }

    pub fn build_loading(&self, space: &DiscreteSpace) -> Result<LoadingProgram, CoreError> {
        let t_end = self.solver.t_end;
        let tau = self.loading.rho_shear;
        let rho0 = vec![Sym2 { xx: 0.0, yy: 0.0, xy: tau }; space.n_cells()];
        let mut w0 = DVector::zeros(2 * space.n_nodes());
        for n in 0..space.n_nodes() {
            let (x, y) = space.mesh.node_coords(n);
            let val = match self.loading.w_pattern {
                WPattern::StretchX => self.loading.w_amplitude * x / space.mesh.lx,
                WPattern::ShearX => self.loading.w_amplitude * y / space.mesh.ly,
            };
            w0[2 * n] = val;
        }
        let loading = LoadingProgram {
            rho0,
            rho_profile: self.loading.rho_profile.build(t_end),
            w0,
            w_profile: self.loading.w_profile.build(t_end),
            body0: None,
            tractions: Vec::new(),
        };
        let margin = loading.safe_load_margin(space);
        if margin < self.loading.alpha {
            return Err(CoreError::Config(format!(
                "safe-load margin {margin:.4} below required alpha {}",
                self.loading.alpha
            )));
        }
        Ok(loading)
    }

    pub fn initial_state(
        &self,
        space: &DiscreteSpace,
        loading: &LoadingProgram,
    ) -> Result<State, CoreError> {
        let mut state = State::zeros(space, self.initial.z0);
        match self.initial.p0 {
            InitialPlastic::Zero => {}
            InitialPlastic::SigmaFactor { factor } => {
                let z0 = self.initial.z0;
                let c = space.material.elastic.factor(z0);
                let r = space.material.constraint.radius(z0);
                let e_w = state.elastic_strain(space, loading, 0.0);
                for (cell, p) in state.p.iter_mut().enumerate() {
                    let dev = e_w[cell].dev();
                    let dir = dev.unit().unwrap_or(Dev2 { d: 0.0, m: 1.0 / 2.0f64.sqrt() });
                    // sigma_D = c (dev - p) = factor * r * dir
                    *p = dev - (factor * r / c) * dir;
                }
            }
        }
        Ok(state)
    }

    /// FNV-1a digest of the canonical JSON encoding, used for manifests.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

/// Reference desk-scale instance: 4x4 cells sheared between two clamped
/// edges, with amplitudes that drive elastic loading, then damage growth,
/// then plastic flow over the loading window.
pub fn reference_config() -> RunConfig {
    RunConfig {
        schema_version: SCHEMA_VERSION,
        material: MaterialConfig {
            gamma1: 1.0,
            gamma2: 2.0,
            c_w: 0.03,
            q_exp: 5.0,
            r_bar: 1.0,
            big_r_bar: 2.0,
            kappa: 0.04,
            delta: 1.0,
            m_exp: 1.5,
        },
        grid: GridConfig {
            nx: 4,
            ny: 4,
            lx: 1.0,
            ly: 1.0,
            dirichlet: DirichletKind::LeftRight,
            neumann: vec![],
        },
        loading: LoadingConfig {
            rho_shear: 0.3,
            rho_profile: ProfileConfig { kind: ProfileKind::Linear, p0: 0.0, p1: 1.0 },
            w_pattern: WPattern::ShearX,
            w_amplitude: 1.6,
            w_profile: ProfileConfig { kind: ProfileKind::Linear, p0: 0.0, p1: 1.0 },
            alpha: 0.5,
        },
        initial: InitialConfig { z0: 0.9, p0: InitialPlastic::Zero },
        solver: SolverConfig {
            t_end: 1.0,
            n_steps: 200,
            tol_alt: 1e-10,
            max_alt: 10_000,
            z_min: 1e-3,
            tol_unidir: 1e-10,
        },
        params: ParamConfig { eps: 1e-2, mu: 1e-2, nu: 1e-2 },
        sweep: Some(SweepConfig {
            path: SweepPath::Joint,
            grid: vec![1e-1, 1e-2, 1e-3],
            deep_factor: 0.1,
        }),
        analysis: AnalysisConfig { tol_eq: 1e-6, tol_rate: 1e-6, resample_factor: 4 },
        output: OutputConfig::default(),
        seed: 0,
    }
}

/// Tiny instance for oracle-backed tests: two side-by-side cells sheared
/// between clamped edges, the smallest mesh on which the one-point
/// quadrature viscous stiffness is definite (4 + 6 + 4 = 14 dofs).
pub fn tiny_config() -> RunConfig {
    let mut cfg = reference_config();
    cfg.grid = GridConfig {
        nx: 2,
        ny: 1,
        lx: 2.0,
        ly: 1.0,
        dirichlet: DirichletKind::LeftRight,
        neumann: vec![],
    };
    cfg.loading.rho_shear = 0.2;
    cfg.loading.w_amplitude = 1.2;
    cfg.solver.n_steps = 20;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_roundtrip() {
        let cfg = reference_config();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut v: serde_json::Value =
            serde_json::to_value(reference_config()).unwrap();
        v["material"]["bogus"] = serde_json::json!(1.0);
        let text = serde_json::to_string(&v).unwrap();
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn rate_ordering_enforced() {
        let mut cfg = reference_config();
        cfg.params.nu = 1.0;
        cfg.params.mu = 0.1;
        assert!(matches!(cfg.validate(), Err(CoreError::RateOrdering { .. })));
    }

    #[test]
    fn nonpositive_tolerance_rejected() {
        let mut cfg = reference_config();
        cfg.analysis.tol_eq = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sigma_factor_initial_datum() {
        let mut cfg = tiny_config();
        cfg.loading.w_profile = ProfileConfig { kind: ProfileKind::Linear, p0: 1.0, p1: 0.5 };
        cfg.initial.p0 = InitialPlastic::SigmaFactor { factor: 1.5 };
        let space = cfg.build_space().unwrap();
        let loading = cfg.build_loading(&space).unwrap();
        let state = cfg.initial_state(&space, &loading).unwrap();
        let r = space.material.constraint.radius(cfg.initial.z0);
        for s in state.stress(&space, &loading, 0.0) {
            assert!((s.dev().norm() - 1.5 * r).abs() < 1e-12);
        }
    }
}
