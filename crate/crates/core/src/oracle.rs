//! Independent brute-force references backing the solver and analysis
//! tests: finite-difference gradients, global minimization of the
//! incremental functional on tiny instances, and manufactured jump
//! transients with planted viscosity weights.
//!
//! The minimization route here (coordinate grid refinement plus proximal
//! gradient descent on the flat coordinates) shares no code with the
//! alternating scheme it certifies.

use nalgebra::DVector;

use crate::discretization::{DiscreteSpace, LoadingProgram, State};
use crate::energy;
use crate::error::CoreError;
use crate::reparam::{ParamTrajectory, RateSample};
use crate::solver::ParamTriple;
use crate::tensor::{Dev2, Sym2};

/// Fixed seed for Monte-Carlo oracles; keeps acceptance runs reproducible.
pub const ORACLE_SEED: u64 = 0xC0FFEE;

/// Central-difference gradient of a scalar functional.
pub fn fd_gradient(
    f: &dyn Fn(&DVector<f64>) -> f64,
    point: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>, CoreError> {
    if h <= 0.0 {
        return Err(CoreError::InvalidParameter("fd step must be positive".into()));
    }
    let mut g = DVector::zeros(point.len());
    let mut x = point.clone();
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let fp = f(&x);
        x[i] = point[i] - h;
        let fm = f(&x);
        x[i] = point[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Largest total dimension the brute-force step accepts. A two-cell
/// bilinear mesh with nodal damage carries 16 coefficients.
pub const BRUTE_FORCE_MAX_DIM: usize = 16;

struct FlatProblem<'a> {
    space: &'a DiscreteSpace,
    loading: &'a LoadingProgram,
    q_prev_flat: DVector<f64>,
    z_prev: DVector<f64>,
    p_prev: Vec<Dev2>,
    t: f64,
    dt: f64,
    params: ParamTriple,
    z_floor: f64,
}

impl FlatProblem<'_> {
    fn nf(&self) -> usize {
        self.space.n_free()
    }
    fn nn(&self) -> usize {
        self.space.n_nodes()
    }
    fn nc(&self) -> usize {
        self.space.n_cells()
    }

    /// Smooth part: energy plus the viscous quadratics.
    fn smooth(&self, x: &DVector<f64>) -> f64 {
        let st = State::from_flat(self.space, x);
        let e = energy::energy(self.space, self.loading, self.t, &st, self.params.mu)
            .map(|v| v.total())
            .unwrap_or(f64::INFINITY);
        if !e.is_finite() {
            return f64::INFINITY;
        }
        let a = self.params.eps * self.params.nu / self.dt;
        let az = self.params.eps / self.dt;
        let du = &st.u - &State::from_flat(self.space, &self.q_prev_flat).u;
        let nu_u = self.space.norm_h1d(&du);
        let mut quad = 0.5 * a * nu_u * nu_u;
        for i in 0..self.nn() {
            let d = st.z[i] - self.z_prev[i];
            quad += 0.5 * az * self.space.mass_z[i] * d * d;
        }
        let area = self.space.cell_area();
        for (c, pc) in st.p.iter().enumerate() {
            let d = *pc - self.p_prev[c];
            quad += 0.5 * a * area * d.inner(&d);
        }
        e + quad
    }

    /// Euclidean gradient of the smooth part in flat coordinates.
    fn smooth_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>, CoreError> {
        let st = State::from_flat(self.space, x);
        let gu = energy::grad_u(self.space, self.loading, self.t, &st);
        let gz = energy::grad_z(self.space, self.loading, self.t, &st)?;
        let gp = energy::grad_p(self.space, self.loading, self.t, &st, self.params.mu);
        let a = self.params.eps * self.params.nu / self.dt;
        let az = self.params.eps / self.dt;
        let area = self.space.cell_area();

        let mut g = DVector::zeros(x.len());
        let prev = State::from_flat(self.space, &self.q_prev_flat);
        let du_free = self.space.restrict_free(&(&st.u - &prev.u));
        let visc_u = a * (&self.space.k_visc * &du_free);
        for k in 0..self.nf() {
            g[k] = gu[k] + visc_u[k];
        }
        for i in 0..self.nn() {
            g[self.nf() + i] =
                gz[i] + az * self.space.mass_z[i] * (st.z[i] - self.z_prev[i]);
        }
        for c in 0..self.nc() {
            let d = st.p[c] - self.p_prev[c];
            let base = self.nf() + self.nn() + 2 * c;
            g[base] = 2.0 * area * (gp[c].d + a * d.d);
            g[base + 1] = 2.0 * area * (gp[c].m + a * d.m);
        }
        Ok(g)
    }

    /// Nonsmooth part: damage dissipation increment (with the
    /// unidirectional constraint as an exact indicator) and the plastic
    /// dissipation increment at frozen damage.
    fn nonsmooth(&self, x: &DVector<f64>) -> f64 {
        let kappa = self.space.material.toughness.kappa;
        let area = self.space.cell_area();
        let mut v = 0.0;
        for i in 0..self.nn() {
            let z = x[self.nf() + i];
            if z > self.z_prev[i] + 1e-14 || z < self.z_floor - 1e-14 {
                return f64::INFINITY;
            }
            v += kappa * self.space.mass_z[i] * (self.z_prev[i] - z);
        }
        for c in 0..self.nc() {
            let p = Dev2 { d: x[self.nf() + self.nn() + 2 * c], m: x[self.nf() + self.nn() + 2 * c + 1] };
            let r = self
                .space
                .material
                .constraint
                .radius(self.space.cell_average(&self.z_prev, c));
            v += area * r * (p - self.p_prev[c]).norm();
        }
        v
    }

    fn total(&self, x: &DVector<f64>) -> f64 {
        let s = self.smooth(x);
        if !s.is_finite() {
            return f64::INFINITY;
        }
        s + self.nonsmooth(x)
    }

    /// Proximal map of `tau * nonsmooth` in the flat Euclidean metric.
    fn prox(&self, x: &DVector<f64>, tau: f64) -> DVector<f64> {
        let kappa = self.space.material.toughness.kappa;
        let area = self.space.cell_area();
        let mut out = x.clone();
        for i in 0..self.nn() {
            let idx = self.nf() + i;
            // linear term -kappa m z plus box constraints
            let cand = x[idx] + tau * kappa * self.space.mass_z[i];
            out[idx] = cand.clamp(self.z_floor, self.z_prev[i]);
        }
        for c in 0..self.nc() {
            let base = self.nf() + self.nn() + 2 * c;
            let r = self
                .space
                .material
                .constraint
                .radius(self.space.cell_average(&self.z_prev, c));
            // flat Euclidean threshold: |pi|_dev = sqrt(2) |pi|_flat
            let thresh = tau * area * r * 2.0f64.sqrt();
            let vd = x[base] - self.p_prev[c].d;
            let vm = x[base + 1] - self.p_prev[c].m;
            let n = (vd * vd + vm * vm).sqrt();
            let scale = if n <= thresh { 0.0 } else { 1.0 - thresh / n };
            out[base] = self.p_prev[c].d + scale * vd;
            out[base + 1] = self.p_prev[c].m + scale * vm;
        }
        out
    }
}

/// Global minimizer of the incremental functional on a tiny instance:
/// cyclic 9-point coordinate grids with three refinement rounds seed a
/// proximal-gradient polish run to stationarity 1e-10.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_step(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    q_prev: &State,
    t: f64,
    dt: f64,
    params: ParamTriple,
    _tol_unidir: f64,
) -> Result<State, CoreError> {
    let dim = space.n_free() + space.n_nodes() + 2 * space.n_cells();
    if dim > BRUTE_FORCE_MAX_DIM {
        return Err(CoreError::InvalidParameter(format!(
            "brute-force oracle limited to {BRUTE_FORCE_MAX_DIM} dofs, instance has {dim}"
        )));
    }
    let prob = FlatProblem {
        space,
        loading,
        q_prev_flat: q_prev.to_flat(space),
        z_prev: q_prev.z.clone(),
        p_prev: q_prev.p.clone(),
        t,
        dt,
        params,
        z_floor: 1e-3,
    };

    let mut x = prob.q_prev_flat.clone();
    let mut fx = prob.total(&x);
    if !fx.is_finite() {
        return Err(CoreError::InvalidParameter(
            "incremental functional infinite at the previous state".into(),
        ));
    }

    // coordinate grid refinement
    let mut radius = 0.5;
    for _round in 0..3 {
        for _sweep in 0..4 {
            for i in 0..dim {
                let x0 = x[i];
                let mut best = (fx, x0);
                for k in 0..9 {
                    let cand = x0 + radius * (k as f64 - 4.0) / 4.0;
                    x[i] = cand;
                    let f = prob.total(&x);
                    if f < best.0 {
                        best = (f, cand);
                    }
                }
                x[i] = best.1;
                fx = best.0;
            }
        }
        radius *= 0.25;
    }

    // proximal-gradient polish with backtracking
    let mut tau = 1.0;
    let scale = 1.0 + x.amax();
    for _ in 0..200_000 {
        let g = prob.smooth_grad(&x)?;
        let fs = prob.smooth(&x);
        let mut accepted = false;
        for _ in 0..60 {
            let cand = prob.prox(&(&x - tau * &g), tau);
            let d = &cand - &x;
            let quad = fs + g.dot(&d) + d.dot(&d) / (2.0 * tau);
            let f_cand_smooth = prob.smooth(&cand);
            if f_cand_smooth <= quad + 1e-15 * quad.abs() {
                let step_norm = d.amax();
                x = cand;
                accepted = true;
                if step_norm <= 1e-10 * tau.min(1.0) * scale {
                    return Ok(State::from_flat(space, &x));
                }
                break;
            }
            tau *= 0.5;
        }
        if !accepted {
            break;
        }
        tau = (tau * 1.3).min(1e3);
    }
    Ok(State::from_flat(space, &x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JumpKind {
    ViscousZ,
    ViscousUp,
}

/// Synthetic parameterized curve at frozen loading time solving a
/// planted viscosity-weight system, used to certify the weight recovery.
///
/// For `ViscousZ` the damage flows by
/// `z' = -((1 - lambda)/lambda) max(chi - kappa, 0)` at frozen `(u, p)`;
/// for `ViscousUp` the pair `(u, p)` relaxes by
/// `u' = K_D^{-1}(-D_u E)/lt`, `p' = (sigma_D - proj_K sigma_D)/lt`
/// with `lt = lambda/(1 - lambda)`, which makes the planted weight
/// self-consistent for any positive value. Rates are filled from the
/// right-hand sides, not finite differences.
#[allow(clippy::too_many_arguments)]
pub fn manufactured_jump(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t0: f64,
    q0: &State,
    kind: JumpKind,
    lambda: f64,
    n_samples: usize,
    s_len: f64,
) -> Result<ParamTrajectory, CoreError> {
    assert!(lambda > 0.0 && lambda < 1.0);
    let kappa = space.material.toughness.kappa;
    let substeps = 200usize;

    let zdot_of = |st: &State| -> Result<DVector<f64>, CoreError> {
        let chi = energy::grad_z_density(space, loading, t0, st)?;
        let factor = -(1.0 - lambda) / lambda;
        Ok(DVector::from_iterator(
            chi.len(),
            chi.iter().map(|&c| factor * (c - kappa).max(0.0)),
        ))
    };
    let updot_of = |st: &State| -> (DVector<f64>, Vec<Dev2>) {
        let lt = lambda / (1.0 - lambda);
        let gu = energy::grad_u(space, loading, t0, st);
        let udot = space.scatter_free(&(-space.solve_k_visc(&gu) / lt));
        let sigma = st.stress(space, loading, t0);
        let pdot = sigma
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let zc = space.cell_average(&st.z, c);
                let dev = s.dev();
                let proj = space.material.constraint.project(zc, &dev);
                (1.0 / lt) * (dev - proj)
            })
            .collect();
        (udot, pdot)
    };

    let h = s_len / n_samples as f64;
    let mut s = vec![0.0];
    let mut t = vec![t0];
    let mut states = vec![q0.clone()];
    let mut rates: Vec<RateSample> = Vec::new();

    let zero_u = DVector::zeros(2 * space.n_nodes());
    let zero_z = DVector::zeros(space.n_nodes());
    let zero_p = vec![Dev2::ZERO; space.n_cells()];
    let zero_e = vec![Sym2::ZERO; space.n_cells()];

    let push_rates = |rates: &mut Vec<RateSample>, st: &State| -> Result<(), CoreError> {
        match kind {
            JumpKind::ViscousZ => {
                let zd = zdot_of(st)?;
                rates.push(RateSample {
                    tprime: 0.0,
                    udot: zero_u.clone(),
                    zdot: zd,
                    pdot: zero_p.clone(),
                    edot: zero_e.clone(),
                });
            }
            JumpKind::ViscousUp => {
                let (ud, pd) = updot_of(st);
                let total_rate = ud.clone();
                let mut ed = space.strains(&total_rate);
                for (c, e) in ed.iter_mut().enumerate() {
                    *e = *e - pd[c];
                }
                rates.push(RateSample {
                    tprime: 0.0,
                    udot: ud,
                    zdot: zero_z.clone(),
                    pdot: pd,
                    edot: ed,
                });
            }
        }
        Ok(())
    };

    push_rates(&mut rates, &states[0])?;
    for i in 1..=n_samples {
        let mut st = states.last().unwrap().clone();
        let hh = h / substeps as f64;
        for _ in 0..substeps {
            match kind {
                JumpKind::ViscousZ => {
                    // RK4 on the damage block
                    let k1 = zdot_of(&st)?;
                    let mut s2 = st.clone();
                    s2.z = &st.z + 0.5 * hh * &k1;
                    let k2 = zdot_of(&s2)?;
                    let mut s3 = st.clone();
                    s3.z = &st.z + 0.5 * hh * &k2;
                    let k3 = zdot_of(&s3)?;
                    let mut s4 = st.clone();
                    s4.z = &st.z + hh * &k3;
                    let k4 = zdot_of(&s4)?;
                    st.z += hh / 6.0 * (&k1 + 2.0 * &k2 + 2.0 * &k3 + &k4);
                }
                JumpKind::ViscousUp => {
                    let (ku1, kp1) = updot_of(&st);
                    let mut s2 = st.clone();
                    s2.u = &st.u + 0.5 * hh * &ku1;
                    for (c, p) in s2.p.iter_mut().enumerate() {
                        *p = st.p[c] + 0.5 * hh * kp1[c];
                    }
                    let (ku2, kp2) = updot_of(&s2);
                    let mut s3 = st.clone();
                    s3.u = &st.u + 0.5 * hh * &ku2;
                    for (c, p) in s3.p.iter_mut().enumerate() {
                        *p = st.p[c] + 0.5 * hh * kp2[c];
                    }
                    let (ku3, kp3) = updot_of(&s3);
                    let mut s4 = st.clone();
                    s4.u = &st.u + hh * &ku3;
                    for (c, p) in s4.p.iter_mut().enumerate() {
                        *p = st.p[c] + hh * kp3[c];
                    }
                    let (ku4, kp4) = updot_of(&s4);
                    st.u += hh / 6.0 * (&ku1 + 2.0 * &ku2 + 2.0 * &ku3 + &ku4);
                    for (c, p) in st.p.iter_mut().enumerate() {
                        *p += (hh / 6.0)
                            * (kp1[c] + 2.0 * kp2[c] + 2.0 * kp3[c] + kp4[c]);
                    }
                }
            }
        }
        s.push(i as f64 * h);
        t.push(t0);
        push_rates(&mut rates, &st)?;
        states.push(st);
    }

    Ok(ParamTrajectory {
        params: ParamTriple { eps: 1e-3, mu: 1e-3, nu: 1e-3 },
        s,
        t,
        states,
        rates,
    })
}
