//! Time-discrete solution of the viscously regularized system by
//! incremental minimization.
//!
//! Each step minimizes `dt * Psi_eps_nu(q_prev, (q - q_prev)/dt) +
//! E_mu(t_k, q)` with the damage field inside the plastic dissipation
//! frozen at the previous state, which makes the step jointly convex in
//! the parameter range of interest. The alternating scheme solves the
//! damage block by projected Newton under the unidirectional constraint
//! and the displacement/plastic block by a direct factorization
//! alternated with the exact cell-wise shrinkage map.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::config::SolverConfig;
use crate::discretization::{DiscreteSpace, LoadingProgram, State};
use crate::dissipation::{self, ExtValue};
use crate::energy::{self, EnergyValue};
use crate::error::CoreError;
use crate::tensor::{Dev2, Sym2};

/// Regularization parameters of one viscous run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParamTriple {
    pub eps: f64,
    pub mu: f64,
    pub nu: f64,
}

impl ParamTriple {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.eps <= 0.0 || self.mu <= 0.0 || self.nu <= 0.0 {
            return Err(CoreError::InvalidParameter(
                "eps, mu, nu must be positive".into(),
            ));
        }
        if self.nu > self.mu + 1e-15 {
            return Err(CoreError::RateOrdering { nu: self.nu, mu: self.mu });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepFailure {
    pub step_index: usize,
    pub message: String,
}

/// Full discrete trajectory with per-step balance residuals.
#[derive(Debug, Clone)]
pub struct ViscousRun {
    pub params: ParamTriple,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub energies: Vec<EnergyValue>,
    /// Per-step residual of the discrete energy-dissipation balance.
    pub balance_residuals: Vec<f64>,
    /// Set when a step failed; the trajectory is truncated there.
    pub aborted: Option<StepFailure>,
}

impl ViscousRun {
    pub fn total_balance_residual(&self) -> f64 {
        self.balance_residuals.iter().map(|r| r.abs()).sum()
    }

    pub fn energy_scale(&self) -> f64 {
        self.energies
            .iter()
            .map(|e| e.total().abs())
            .fold(1e-12, f64::max)
    }
}

/// Value of the incremental functional
/// `dt * Psi_eps_nu(q_prev, (q - q_prev)/dt) + E_mu(t, q)`; the plastic
/// dissipation carries the previous damage field.
#[allow(clippy::too_many_arguments)]
pub fn incremental_value(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    q_prev: &State,
    t: f64,
    dt: f64,
    params: ParamTriple,
    tol_unidir: f64,
    q: &State,
) -> Result<ExtValue, CoreError> {
    let udot = (&q.u - &q_prev.u) / dt;
    let zdot = (&q.z - &q_prev.z) / dt;
    let pdot: Vec<Dev2> = q
        .p
        .iter()
        .zip(&q_prev.p)
        .map(|(a, b)| (1.0 / dt) * (*a - *b))
        .collect();
    let psi = dissipation::psi_eps_nu(
        space,
        &q_prev.z,
        &udot,
        &zdot,
        &pdot,
        params.eps,
        params.nu,
        tol_unidir / dt,
    );
    let psi = match psi {
        ExtValue::Finite(v) => v,
        inf => return Ok(inf),
    };
    let e = energy::energy(space, loading, t, q, params.mu)?;
    Ok(ExtValue::Finite(dt * psi + e.total()))
}

/// One incremental step.
#[allow(clippy::too_many_arguments)]
pub fn step(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    q_prev: &State,
    t: f64,
    dt: f64,
    params: ParamTriple,
    solver: &SolverConfig,
) -> Result<State, CoreError> {
    params.validate()?;
    if dt <= 0.0 {
        return Err(CoreError::InvalidParameter("dt must be positive".into()));
    }
    let mut q = q_prev.clone();
    let scale = 1.0
        + space.norm_h1d(&q_prev.u)
        + space.norm_hm(&q_prev.z)
        + space.norm_l2_p(&q_prev.p);

    for _ in 0..solver.max_alt {
        let z_before = q.z.clone();
        z_step(space, loading, &mut q, q_prev, t, dt, params, solver)?;
        let u_before = q.u.clone();
        let p_before = q.p.clone();
        up_step(space, loading, &mut q, q_prev, t, dt, params, solver);

        let dz = &q.z - &z_before;
        let du = &q.u - &u_before;
        let dp: Vec<Dev2> = q
            .p
            .iter()
            .zip(&p_before)
            .map(|(a, b)| *a - *b)
            .collect();
        let update =
            space.norm_hm(&dz) + space.norm_h1d(&du) + space.norm_l2_p(&dp);
        if update <= solver.tol_alt * scale {
            // a floor-bound active at convergence means the damage
            // potential no longer controls the step
            for i in 0..space.n_nodes() {
                if q.z[i] <= solver.z_min + 1e-12 {
                    return Err(CoreError::DamageFloor { z_min: solver.z_min, node: i });
                }
            }
            return Ok(q);
        }
    }
    Err(CoreError::StepNotConverged {
        iterations: solver.max_alt,
        update: f64::NAN,
        tol: solver.tol_alt,
    })
}

/// Damage block: minimize the incremental functional in `z` under
/// `z_min <= z <= z_prev` by projected Newton with Armijo backtracking.
#[allow(clippy::too_many_arguments)]
fn z_step(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    q: &mut State,
    q_prev: &State,
    t: f64,
    dt: f64,
    params: ParamTriple,
    solver: &SolverConfig,
) -> Result<(), CoreError> {
    let n = space.n_nodes();
    let kappa = space.material.toughness.kappa;
    let lo = DVector::from_element(n, solver.z_min);
    let hi = &q_prev.z;
    let area = space.cell_area();

    let objective = |z: &DVector<f64>| -> Result<f64, CoreError> {
        let mut st = q.clone();
        st.z = z.clone();
        let e = energy::energy(space, loading, t, &st, params.mu)?.total();
        let mut diss = 0.0;
        for i in 0..n {
            let d = z[i] - q_prev.z[i];
            diss += space.mass_z[i] * (kappa * (-d) + 0.5 * params.eps / dt * d * d);
        }
        Ok(e + diss)
    };

    let gradient = |z: &DVector<f64>| -> Result<DVector<f64>, CoreError> {
        let mut st = q.clone();
        st.z = z.clone();
        let mut g = energy::grad_z(space, loading, t, &st)?;
        for i in 0..n {
            g[i] += space.mass_z[i] * (-kappa + params.eps / dt * (z[i] - q_prev.z[i]));
        }
        Ok(g)
    };

    let hessian = |z: &DVector<f64>| -> Result<DMatrix<f64>, CoreError> {
        let mut h = space.a_m.clone();
        for i in 0..n {
            h[(i, i)] += space.mass_z[i]
                * (space.material.damage.second_deriv(z[i])? + params.eps / dt);
        }
        // elastic curvature in z, assembled per cell over node pairs
        let mut st = q.clone();
        st.z = z.clone();
        let e = st.elastic_strain(space, loading, t);
        for (c, ec) in e.iter().enumerate() {
            let zc = space.cell_average(&st.z, c);
            let s = crate::material::hermite_step_second_deriv(zc);
            let w = 0.0625 * 0.5 * area
                * (space.material.elastic.gamma2 - space.material.elastic.gamma1)
                * s
                * ec.inner(ec);
            let nodes = space.mesh.cell_nodes(c);
            for &a in &nodes {
                for &b in &nodes {
                    h[(a, b)] += w;
                }
            }
        }
        Ok(h)
    };

    let mut z = q.z.clone();
    for i in 0..n {
        z[i] = z[i].clamp(lo[i], hi[i]);
    }
    let mut f_cur = objective(&z)?;
    let z_scale = space.norm_hm(hi).max(1.0);

    for _ in 0..200 {
        let g = gradient(&z)?;
        // projected-gradient optimality residual
        let mut proj = z.clone();
        for i in 0..n {
            proj[i] = (z[i] - g[i]).clamp(lo[i], hi[i]);
        }
        let residual = space.norm_hm(&(&proj - &z));
        if residual <= 1e-13 * z_scale.max(g.amax()) {
            break;
        }

        let mut h = hessian(&z)?;
        // Newton direction on the estimated inactive set, steepest
        // descent on the active one
        let mut active = vec![false; n];
        for i in 0..n {
            active[i] = (z[i] <= lo[i] + 1e-14 && g[i] > 0.0)
                || (z[i] >= hi[i] - 1e-14 && g[i] < 0.0);
        }
        for i in 0..n {
            if active[i] {
                for j in 0..n {
                    h[(i, j)] = 0.0;
                    h[(j, i)] = 0.0;
                }
                h[(i, i)] = 1.0;
            }
        }
        let mut shift = 0.0;
        let dir = loop {
            let mut hs = h.clone();
            if shift > 0.0 {
                for i in 0..n {
                    hs[(i, i)] += shift * space.mass_z[i];
                }
            }
            match Cholesky::new(hs) {
                Some(ch) => break ch.solve(&(-&g)),
                None => {
                    shift = if shift == 0.0 { 1e-8 } else { shift * 10.0 };
                    if shift > 1e12 {
                        break -g.clone();
                    }
                }
            }
        };

        // Armijo backtracking along the projected arc
        let mut alpha = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let mut cand = &z + alpha * &dir;
            for i in 0..n {
                cand[i] = cand[i].clamp(lo[i], hi[i]);
            }
            let f_new = objective(&cand)?;
            let decrease = g.dot(&(&cand - &z));
            if f_new <= f_cur + 1e-4 * decrease.min(0.0) && f_new <= f_cur + 1e-15 * f_cur.abs() {
                z = cand;
                f_cur = f_new;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            break;
        }
    }
    q.z = z;
    Ok(())
}

/// Displacement/plastic block at fixed damage: direct solve for `u`
/// alternated with the exact per-cell proximal (shrinkage) map for `p`.
#[allow(clippy::too_many_arguments)]
fn up_step(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    q: &mut State,
    q_prev: &State,
    t: f64,
    dt: f64,
    params: ParamTriple,
    solver: &SolverConfig,
) {
    let a_visc = params.eps * params.nu / dt;
    let k_elastic = space.elastic_stiffness(&q.z);
    let k_total = &k_elastic + a_visc * &space.k_visc;
    let chol = Cholesky::new(k_total).expect("step matrix is SPD");

    let w = loading.w(t);
    let strains_w = space.strains(&w);
    let f_free = space.restrict_free(&loading.total_load(space, t));
    let u_prev_free = space.restrict_free(&q_prev.u);
    let visc_term = a_visc * (&space.k_visc * &u_prev_free);

    let factors: Vec<f64> = (0..space.n_cells())
        .map(|c| space.material.elastic.factor(space.cell_average(&q.z, c)))
        .collect();
    let radii: Vec<f64> = (0..space.n_cells())
        .map(|c| {
            space
                .material
                .constraint
                .radius(space.cell_average(&q_prev.z, c))
        })
        .collect();

    let scale = 1.0 + space.norm_h1d(&q_prev.u) + space.norm_l2_p(&q_prev.p);
    for _ in 0..solver.max_alt {
        // u-solve at current p: sigma_w-part depends on p through C (B w - p)
        let sigma_rhs: Vec<Sym2> = strains_w
            .iter()
            .enumerate()
            .map(|(c, ew)| factors[c] * (*ew - q.p[c]))
            .collect();
        let rhs = &f_free + &visc_term - space.restrict_free(&space.strain_adjoint(&sigma_rhs));
        let u_free = chol.solve(&rhs);
        let u_new = space.scatter_free(&u_free);

        // exact proximal map per cell
        let total = &u_new + &w;
        let xi = space.strains(&total);
        let mut dp_norm_sq = 0.0;
        for c in 0..space.n_cells() {
            // objective in d = p - p_prev:
            //   r |d| + (beta/2)|d|^2 + g0 . d,
            //   beta = eps nu / dt + c + mu,  g0 = (c + mu) p_prev - c xi_D
            let beta = a_visc + factors[c] + params.mu;
            let g0 = (factors[c] + params.mu) * q_prev.p[c] - factors[c] * xi[c].dev();
            let v = (-1.0 / beta) * g0;
            let vn = v.norm();
            let d = if beta * vn <= radii[c] {
                Dev2::ZERO
            } else {
                (1.0 - radii[c] / (beta * vn)) * v
            };
            let p_new = q_prev.p[c] + d;
            let diff = p_new - q.p[c];
            dp_norm_sq += space.cell_area() * diff.inner(&diff);
            q.p[c] = p_new;
        }
        let du = &u_new - &q.u;
        let update = space.norm_h1d(&du) + dp_norm_sq.sqrt();
        q.u = u_new;
        if update <= 0.1 * solver.tol_alt * scale {
            break;
        }
    }
}

/// Runs the incremental scheme over a uniform time grid and records the
/// discrete energy-dissipation balance residual of every step.
pub fn solve(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    q0: State,
    params: ParamTriple,
    solver: &SolverConfig,
) -> Result<ViscousRun, CoreError> {
    params.validate()?;
    let n = solver.n_steps;
    let dt = solver.t_end / n as f64;
    let mut run = ViscousRun {
        params,
        times: vec![0.0],
        energies: vec![energy::energy(space, loading, 0.0, &q0, params.mu)?],
        states: vec![q0],
        balance_residuals: Vec::new(),
        aborted: None,
    };

    for k in 1..=n {
        let t = k as f64 * dt;
        let q_prev = run.states.last().unwrap().clone();
        let q = match step(space, loading, &q_prev, t, dt, params, solver) {
            Ok(q) => q,
            Err(e) => {
                run.aborted = Some(StepFailure { step_index: k, message: e.to_string() });
                return Ok(run);
            }
        };
        let e_new = energy::energy(space, loading, t, &q, params.mu)?;
        let res = step_balance_residual(
            space, loading, &q_prev, &q, t, dt, params, solver, e_new.total(),
            run.energies.last().unwrap().total(),
        )?;
        run.times.push(t);
        run.states.push(q);
        run.energies.push(e_new);
        run.balance_residuals.push(res);
    }
    Ok(run)
}

#[allow(clippy::too_many_arguments)]
fn step_balance_residual(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    q_prev: &State,
    q: &State,
    t: f64,
    dt: f64,
    params: ParamTriple,
    solver: &SolverConfig,
    e_new: f64,
    e_old: f64,
) -> Result<f64, CoreError> {
    let udot = (&q.u - &q_prev.u) / dt;
    let zdot = (&q.z - &q_prev.z) / dt;
    let pdot: Vec<Dev2> = q
        .p
        .iter()
        .zip(&q_prev.p)
        .map(|(a, b)| (1.0 / dt) * (*a - *b))
        .collect();
    let psi = dissipation::psi_eps_nu(
        space,
        &q_prev.z,
        &udot,
        &zdot,
        &pdot,
        params.eps,
        params.nu,
        solver.tol_unidir / dt,
    )
    .finite()
    .expect("unidirectionality holds by construction");

    let gu = energy::grad_u(space, loading, t, q);
    let gz = energy::grad_z_density(space, loading, t, q)?;
    let gp = energy::grad_p(space, loading, t, q, params.mu);
    let neg_gz: DVector<f64> = -&gz;
    let neg_gp: Vec<Dev2> = gp.iter().map(|g| -*g).collect();
    let conj = dissipation::psi_eps_nu_conjugate(
        space, &q_prev.z, &gu, &neg_gz, &neg_gp, params.eps, params.nu,
    );

    let pt = 0.5
        * dt
        * (energy::partial_t_energy(space, loading, t - dt, q_prev)
            + energy::partial_t_energy(space, loading, t, q_prev));
    Ok(e_new - e_old + dt * (psi + conj) - pt)
}
