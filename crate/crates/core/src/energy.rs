//! Driving energy, its partial gradients, and the explicit time
//! derivative. The zero-hardening functional is the `mu = 0` case.
//!
//! Gradients are exact derivatives of the discrete energy as implemented;
//! finite-difference agreement is the contract the tests enforce.

use nalgebra::DVector;

use crate::discretization::{DiscreteSpace, LoadingProgram, State};
use crate::error::CoreError;
use crate::tensor::Dev2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyValue {
    pub elastic: f64,
    pub damage_potential: f64,
    pub hardening: f64,
    pub nonlocal: f64,
    pub load: f64,
}

impl EnergyValue {
    pub fn total(&self) -> f64 {
        self.elastic + self.damage_potential + self.hardening + self.nonlocal + self.load
    }
}

fn check_damage_domain(state: &State) -> Result<(), CoreError> {
    for &z in state.z.iter() {
        if z <= 0.0 {
            return Err(CoreError::DamageOutOfDomain { z });
        }
    }
    Ok(())
}

/// Energy at time `t` with hardening weight `mu` (`mu = 0` gives the
/// perfectly plastic functional).
pub fn energy(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
    mu: f64,
) -> Result<EnergyValue, CoreError> {
    check_damage_domain(state)?;
    let area = space.cell_area();
    let e = state.elastic_strain(space, loading, t);

    let mut elastic = 0.0;
    for (c, ec) in e.iter().enumerate() {
        let zc = space.cell_average(&state.z, c);
        elastic += 0.5 * area * space.material.elastic.factor(zc) * ec.inner(ec);
    }

    let mut damage_potential = 0.0;
    for (i, &zi) in state.z.iter().enumerate() {
        damage_potential += space.mass_z[i] * space.material.damage.value(zi)?;
    }

    let hardening =
        0.5 * mu * state.p.iter().map(|pc| area * pc.inner(pc)).sum::<f64>();

    let nonlocal = 0.5 * (&space.a_m * &state.z).dot(&state.z);

    let f = loading.total_load(space, t);
    let total_disp = &state.u + loading.w(t);
    let load = -f.dot(&total_disp);

    Ok(EnergyValue { elastic, damage_potential, hardening, nonlocal, load })
}

/// Displacement gradient `D_u E` restricted to free dofs: the discrete
/// equilibrium residual `B^T(area sigma) - F(t)`. Independent of `mu`.
pub fn grad_u(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
) -> DVector<f64> {
    let sigma = state.stress(space, loading, t);
    let full = space.strain_adjoint(&sigma) - loading.total_load(space, t);
    space.restrict_free(&full)
}

/// Damage gradient `D_z E` as a Euclidean dual vector on the nodes:
/// nonlocal part plus mass-lumped local terms.
pub fn grad_z(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
) -> Result<DVector<f64>, CoreError> {
    check_damage_domain(state)?;
    let area = space.cell_area();
    let mut g = &space.a_m * &state.z;
    for (i, &zi) in state.z.iter().enumerate() {
        g[i] += space.mass_z[i] * space.material.damage.deriv(zi)?;
    }
    let e = state.elastic_strain(space, loading, t);
    for (c, ec) in e.iter().enumerate() {
        let zc = space.cell_average(&state.z, c);
        let w = 0.25 * 0.5 * area * space.material.elastic.factor_deriv(zc) * ec.inner(ec);
        for &n in &space.mesh.cell_nodes(c) {
            g[n] += w;
        }
    }
    Ok(g)
}

/// `D_z E` as an L2 density (Euclidean dual divided by the lumped mass).
pub fn grad_z_density(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
) -> Result<DVector<f64>, CoreError> {
    let mut g = grad_z(space, loading, t, state)?;
    for i in 0..g.len() {
        g[i] /= space.mass_z[i];
    }
    Ok(g)
}

/// Plastic gradient `D_p E` as a per-cell deviatoric density
/// `mu p - sigma_D`.
pub fn grad_p(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
    mu: f64,
) -> Vec<Dev2> {
    let sigma = state.stress(space, loading, t);
    state
        .p
        .iter()
        .zip(&sigma)
        .map(|(pc, sc)| mu * *pc - sc.dev())
        .collect()
}

/// Explicit partial time derivative of the energy at frozen state:
/// the stress power of the Dirichlet rate minus the load-rate terms.
pub fn partial_t_energy(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
) -> f64 {
    let area = space.cell_area();
    let sigma = state.stress(space, loading, t);
    let wdot = loading.w_rate(t);
    let strain_rate = space.strains(&wdot);
    let stress_power: f64 = sigma
        .iter()
        .zip(&strain_rate)
        .map(|(s, r)| area * s.inner(r))
        .sum();
    let f = loading.total_load(space, t);
    let fdot = loading.total_load_rate(space, t);
    let total_disp = &state.u + loading.w(t);
    stress_power - f.dot(&wdot) - fdot.dot(&total_disp)
}
