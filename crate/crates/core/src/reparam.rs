//! Arclength reparameterization of viscous trajectories.
//!
//! The arclength increment combines the loading time with the state
//! increments measured in the norms that control the limit curves:
//! `ds = dt + |du|_{H1,D} + |dz|_{Hm} + |dp|_{L2}`. Curves are resampled
//! uniformly in `s`, so the normalized speed `t' + |u'| + |z'| + |p'|`
//! equals one up to interpolation error; jump regions expand into
//! intervals where `t'` is small.

use nalgebra::DVector;

use crate::discretization::{DiscreteSpace, LoadingProgram, State};
use crate::error::CoreError;
use crate::solver::{ParamTriple, ViscousRun};
use crate::tensor::{Dev2, Sym2};

/// Rates of one sample, by central differences in `s`.
#[derive(Debug, Clone)]
pub struct RateSample {
    pub tprime: f64,
    pub udot: DVector<f64>,
    pub zdot: DVector<f64>,
    pub pdot: Vec<Dev2>,
    pub edot: Vec<Sym2>,
}

/// Uniformly resampled parameterized curve `(s_i, t_i, q_i)`.
#[derive(Debug, Clone)]
pub struct ParamTrajectory {
    pub params: ParamTriple,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub states: Vec<State>,
    pub rates: Vec<RateSample>,
}

impl ParamTrajectory {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.s.last().unwrap()
    }

    /// Normalized speed `t' + |u'|_{H1,D} + |z'|_{Hm} + |p'|_{L2}`.
    pub fn speed(&self, space: &DiscreteSpace, i: usize) -> f64 {
        let r = &self.rates[i];
        r.tprime + space.norm_h1d(&r.udot) + space.norm_hm(&r.zdot) + space.norm_l2_p(&r.pdot)
    }
}

fn state_increment_norm(space: &DiscreteSpace, a: &State, b: &State) -> f64 {
    let du = &b.u - &a.u;
    let dz = &b.z - &a.z;
    let dp: Vec<Dev2> = b.p.iter().zip(&a.p).map(|(x, y)| *x - *y).collect();
    space.norm_h1d(&du) + space.norm_hm(&dz) + space.norm_l2_p(&dp)
}

fn lerp_state(a: &State, b: &State, w: f64) -> State {
    State {
        u: (1.0 - w) * &a.u + w * &b.u,
        z: (1.0 - w) * &a.z + w * &b.z,
        p: a
            .p
            .iter()
            .zip(&b.p)
            .map(|(x, y)| (1.0 - w) * *x + w * *y)
            .collect(),
    }
}

/// Reparameterizes a completed run by its arclength and resamples it
/// uniformly with `resample_factor` points per original step.
pub fn reparameterize(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    run: &ViscousRun,
    resample_factor: usize,
) -> Result<ParamTrajectory, CoreError> {
    let n = run.states.len();
    if n < 2 {
        return Err(CoreError::DegenerateRun);
    }
    let mut s_knots = Vec::with_capacity(n);
    s_knots.push(0.0);
    for k in 1..n {
        let ds = (run.times[k] - run.times[k - 1])
            + state_increment_norm(space, &run.states[k - 1], &run.states[k]);
        s_knots.push(s_knots[k - 1] + ds);
    }
    let total = *s_knots.last().unwrap();
    if total <= 0.0 {
        return Err(CoreError::DegenerateRun);
    }

    let m = resample_factor * (n - 1);
    let mut s = Vec::with_capacity(m + 1);
    let mut t = Vec::with_capacity(m + 1);
    let mut states = Vec::with_capacity(m + 1);
    let mut seg = 0usize;
    for j in 0..=m {
        let sj = total * j as f64 / m as f64;
        while seg + 2 < s_knots.len() && s_knots[seg + 1] < sj {
            seg += 1;
        }
        let (s0, s1) = (s_knots[seg], s_knots[seg + 1]);
        let w = if s1 > s0 { ((sj - s0) / (s1 - s0)).clamp(0.0, 1.0) } else { 0.0 };
        s.push(sj);
        t.push((1.0 - w) * run.times[seg] + w * run.times[seg + 1]);
        states.push(lerp_state(&run.states[seg], &run.states[seg + 1], w));
    }

    let rates = discrete_rates(space, loading, &s, &t, &states);
    Ok(ParamTrajectory { params: run.params, s, t, states, rates })
}

/// Arclength parameterization without resampling: samples are exactly
/// the solver states at the (nonuniform) arclength knots. Backward
/// differences at a knot are then exactly paired with the state the
/// implicit step produced, which matters for weight-recovery
/// diagnostics.
pub fn reparameterize_knots(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    run: &ViscousRun,
) -> Result<ParamTrajectory, CoreError> {
    let n = run.states.len();
    if n < 2 {
        return Err(CoreError::DegenerateRun);
    }
    let mut s = Vec::with_capacity(n);
    s.push(0.0);
    for k in 1..n {
        let ds = (run.times[k] - run.times[k - 1])
            + state_increment_norm(space, &run.states[k - 1], &run.states[k]);
        s.push(s[k - 1] + ds);
    }
    if *s.last().unwrap() <= 0.0 {
        return Err(CoreError::DegenerateRun);
    }
    let states = run.states.clone();
    let t = run.times.clone();
    let rates = discrete_rates(space, loading, &s, &t, &states);
    Ok(ParamTrajectory { params: run.params, s, t, states, rates })
}

/// Central differences in `s` (one-sided at the ends) for every field,
/// including the derived elastic strain.
pub fn discrete_rates(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    s: &[f64],
    t: &[f64],
    states: &[State],
) -> Vec<RateSample> {
    let n = s.len();
    let e: Vec<Vec<Sym2>> = states
        .iter()
        .zip(t)
        .map(|(q, &ti)| q.elastic_strain(space, loading, ti))
        .collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = if i == 0 {
            (0, 1)
        } else if i + 1 == n {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        let h = s[hi] - s[lo];
        let tprime = (t[hi] - t[lo]) / h;
        let udot = (&states[hi].u - &states[lo].u) / h;
        let zdot = (&states[hi].z - &states[lo].z) / h;
        let pdot: Vec<Dev2> = states[hi]
            .p
            .iter()
            .zip(&states[lo].p)
            .map(|(a, b)| (1.0 / h) * (*a - *b))
            .collect();
        let edot: Vec<Sym2> = e[hi]
            .iter()
            .zip(&e[lo])
            .map(|(a, b)| (1.0 / h) * (*a - *b))
            .collect();
        out.push(RateSample { tprime, udot, zdot, pdot, edot });
    }
    out
}

/// Max-norm residual of the kinematic consistency
/// `e' = B u' + B w_rate t' - p'` per sample.
pub fn kinematic_consistency(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    traj: &ParamTrajectory,
) -> Vec<f64> {
    traj.rates
        .iter()
        .zip(&traj.t)
        .map(|(r, &ti)| {
            let total = &r.udot + r.tprime * loading.w_rate(ti);
            let bu = space.strains(&total);
            let mut worst = 0.0f64;
            for (c, ec) in r.edot.iter().enumerate() {
                let expect = bu[c] - r.pdot[c];
                worst = worst.max((*ec - expect).norm());
            }
            worst
        })
        .collect()
}

/// Per-interval residual of the reparameterized energy-dissipation
/// balance with the viscous contact integrand. One-homogeneous parts use
/// exact increments, the quadratic dual part a trapezoidal rule.
pub fn reparam_balance_residual(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    traj: &ParamTrajectory,
) -> Result<Vec<f64>, CoreError> {
    let p = traj.params;
    let n = traj.len();
    let mut energies = Vec::with_capacity(n);
    let mut dstar_sq = Vec::with_capacity(n);
    let mut dt_energy = Vec::with_capacity(n);
    for i in 0..n {
        let q = &traj.states[i];
        let ti = traj.t[i];
        energies.push(crate::energy::energy(space, loading, ti, q, p.mu)?.total());
        let d = crate::dissipation::slope_dstar_mu_nu(space, loading, ti, q, p.mu, p.nu)?;
        dstar_sq.push(d * d);
        dt_energy.push(crate::energy::partial_t_energy(space, loading, ti, q));
    }
    let mut out = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        let a = &traj.states[i];
        let b = &traj.states[i + 1];
        let dt = traj.t[i + 1] - traj.t[i];
        let dz = &b.z - &a.z;
        let du = &b.u - &a.u;
        let dp: Vec<Dev2> = b.p.iter().zip(&a.p).map(|(x, y)| *x - *y).collect();

        let kappa = space.material.toughness.kappa;
        let r_inc = kappa
            * dz
                .iter()
                .zip(space.mass_z.iter())
                .map(|(d, m)| m * (-d).max(0.0))
                .sum::<f64>();
        let h_inc = crate::dissipation::cal_h(space, &a.z, &dp);

        let nu_u = space.norm_h1d(&du);
        let nz = space.norm_l2_z(&dz);
        let np = space.norm_l2_p(&dp);
        let d_inc_sq = p.nu * nu_u * nu_u + nz * nz + p.nu * np * np;
        // (eps / 2 t') D^2 integrated over the affine segment
        let viscous = if dt > 0.0 { 0.5 * p.eps * d_inc_sq / dt } else { f64::INFINITY };
        let dual = 0.5 * dt / p.eps * 0.5 * (dstar_sq[i] + dstar_sq[i + 1]);
        let power = 0.5 * dt * (dt_energy[i] + dt_energy[i + 1]);

        let m_int = r_inc + h_inc + viscous + dual;
        out.push(energies[i + 1] - energies[i] + m_int - power);
    }
    Ok(out)
}
