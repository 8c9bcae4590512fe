use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("damage value z = {z} outside the domain of W (requires z > 0)")]
    DamageOutOfDomain { z: f64 },

    #[error("viscous stiffness is singular on the constrained subspace; check Dirichlet data and mesh (nx = {nx}, ny = {ny})")]
    SingularViscousStiffness { nx: usize, ny: usize },

    #[error("incremental step did not converge after {iterations} alternations (update {update:.3e}, tol {tol:.3e})")]
    StepNotConverged { iterations: usize, update: f64, tol: f64 },

    #[error("damage hit the numerical floor z_min = {z_min} at node {node}")]
    DamageFloor { z_min: f64, node: usize },

    #[error("degenerate trajectory: total arclength is zero")]
    DegenerateRun,

    #[error("rate parameters must satisfy nu <= mu (got nu = {nu}, mu = {mu})")]
    RateOrdering { nu: f64, mu: f64 },

    #[error("{0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
