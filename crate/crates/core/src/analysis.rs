//! Post-processing of parameterized trajectories: viscosity-weight
//! recovery, switching conditions, chain-rule and Hill residuals,
//! transient-structure detection, and limit-path sweeps.

use nalgebra::DVector;
use serde::Serialize;

use crate::config::{RunConfig, SweepPath};
use crate::contact::{self, ContactInputs, ContactValue, Tolerances};
use crate::discretization::{DiscreteSpace, LoadingProgram, State};
use crate::dissipation;
use crate::energy;
use crate::error::CoreError;
use crate::reparam::{self, ParamTrajectory};
use crate::solver::{self, ParamTriple};
use crate::tensor::Dev2;

/// Everything derived at one trajectory sample.
#[derive(Debug, Clone)]
pub struct SampleAnalysis {
    /// Zero-hardening energy driving the limit balances.
    pub energy0: f64,
    /// Energy at the trajectory's own hardening weight.
    pub energy_mu: f64,
    pub dt_energy: f64,
    pub inputs: ContactInputs,
    pub m0_cl: ContactValue,
    pub m0_cr: ContactValue,
    pub m0_mu0: ContactValue,
    pub m0_munu: ContactValue,
    pub lambda_z: f64,
    pub lambda_up: f64,
    pub lambda_tilde: f64,
    pub lambda_fit_residual: f64,
    /// `|t' lz|, |t' lup|, |lup (1 - lz)|`.
    pub switching: [f64; 3],
    /// `-dE0/ds + dtE0 t'` by central differences of the energy samples.
    pub chain_energy_rate: f64,
    /// `-<DzE0, z'> + <sigma_D, p'> + <Div sigma + F, u'>`.
    pub chain_expansion: f64,
    pub hill_residual: f64,
}

#[derive(Debug, Clone)]
pub struct CurveAnalysis {
    pub samples: Vec<SampleAnalysis>,
    /// Largest variation of `t` over a connected component of
    /// `{dtilde > tol}`.
    pub t_variation_on_damage_set: f64,
    /// Same for `{D* > tol}`.
    pub t_variation_on_slope_set: f64,
    /// Largest deviation of the normalized speed from one (interior).
    pub normalization_drift: f64,
}

impl CurveAnalysis {
    pub fn max_violation(&self, pick: impl Fn(&SampleAnalysis) -> &ContactValue) -> f64 {
        self.samples
            .iter()
            .map(|s| pick(s).max_violation())
            .fold(0.0, f64::max)
    }

    /// Sup over samples of the balance-equality residual
    /// `|chain expansion - finite part|` for a chosen contact potential.
    pub fn balance_residual(&self, pick: impl Fn(&SampleAnalysis) -> &ContactValue) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.chain_expansion - pick(s).finite_part).abs())
            .fold(0.0, f64::max)
    }

    /// Largest positive excess of the chain-rule expansion over the
    /// contact potential (the inequality direction of the chain rule).
    pub fn fenchel_excess(&self, pick: impl Fn(&SampleAnalysis) -> &ContactValue) -> f64 {
        self.samples
            .iter()
            .map(|s| (s.chain_expansion - pick(s).finite_part).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn max_switching(&self) -> [f64; 3] {
        let mut out = [0.0f64; 3];
        for s in &self.samples {
            for k in 0..3 {
                out[k] = out[k].max(s.switching[k]);
            }
        }
        out
    }

    pub fn max_hill_on_rate_independent(&self, tol: &Tolerances) -> f64 {
        self.samples
            .iter()
            .filter(|s| s.inputs.tprime > tol.rate && s.m0_cr.is_clean())
            .map(|s| s.hill_residual)
            .fold(0.0, f64::max)
    }
}

/// Full per-sample analysis of a parameterized curve.
pub fn analyze_curve(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    traj: &ParamTrajectory,
    tol: &Tolerances,
    tol_unidir: f64,
) -> Result<CurveAnalysis, CoreError> {
    let n = traj.len();
    let p = traj.params;
    let kappa = space.material.toughness.kappa;
    let area = space.cell_area();

    // first pass: pointwise quantities
    let mut energy0 = Vec::with_capacity(n);
    let mut energy_mu = Vec::with_capacity(n);
    let mut dt_energy = Vec::with_capacity(n);
    let mut inputs_vec = Vec::with_capacity(n);
    let mut chain_expansion = Vec::with_capacity(n);
    let mut hill = Vec::with_capacity(n);
    let mut gz_density_all = Vec::with_capacity(n);

    for i in 0..n {
        let q = &traj.states[i];
        let ti = traj.t[i];
        let r = &traj.rates[i];

        energy0.push(energy::energy(space, loading, ti, q, 0.0)?.total());
        energy_mu.push(energy::energy(space, loading, ti, q, p.mu)?.total());
        dt_energy.push(energy::partial_t_energy(space, loading, ti, q));

        let gu = energy::grad_u(space, loading, ti, q);
        let su = space.norm_h1d_dual(&gu);
        let gz = energy::grad_z_density(space, loading, ti, q)?;
        let chi: DVector<f64> = -&gz;
        let dtilde = dissipation::dist_dr0(space, &chi);
        let sigma = q.stress(space, loading, ti);
        let sigma_dev: Vec<Dev2> = sigma.iter().map(|s| s.dev()).collect();
        let wp = dissipation::dist_dh0(space, &q.z, &sigma_dev);
        let shifted: Vec<Dev2> = sigma_dev
            .iter()
            .zip(&q.p)
            .map(|(s, pc)| *s - p.mu * *pc)
            .collect();
        let wp_mu = dissipation::dist_dh0(space, &q.z, &shifted);
        let dstar_nu_mu =
            dissipation::SlopeComponents { u: su, z: dtilde, p: wp_mu }.aggregate_nu(p.nu);

        let calr = dissipation::cal_r(space, &r.zdot, tol_unidir);
        let calh = dissipation::cal_h(space, &q.z, &r.pdot);
        let znorm = space.norm_l2_z(&r.zdot);
        let d_up = space.norm_h1d(&r.udot).hypot(space.norm_l2_p(&r.pdot));
        let d_nu = dissipation::slope_d_nu(space, &r.udot, &r.zdot, &r.pdot, p.nu)?;

        inputs_vec.push(ContactInputs {
            tprime: r.tprime,
            znorm,
            d_up,
            d_nu,
            calr,
            calh,
            su,
            wp,
            dtilde,
            wp_mu,
            dstar_nu_mu,
        });

        // chain-rule expansion with zero-hardening gradients
        let gz_euclid = energy::grad_z(space, loading, ti, q)?;
        let pair_z = gz_euclid.dot(&r.zdot);
        let pair_p: f64 = sigma_dev
            .iter()
            .zip(&r.pdot)
            .map(|(s, pd)| area * s.inner(pd))
            .sum();
        let pair_u = gu.dot(&space.restrict_free(&r.udot));
        chain_expansion.push(-pair_z + pair_p - pair_u);

        hill.push((calh - pair_p).abs());
        gz_density_all.push(gz);
    }

    // second pass: lambda recovery, switching, energy-rate chain term
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let inp = &inputs_vec[i];
        let r = &traj.rates[i];

        let dstar0 = inp.dstar0();
        let (lambda_tilde, lambda_up) = if dstar0 <= tol.eq {
            (0.0, 0.0)
        } else if inp.d_up <= tol.rate {
            (f64::INFINITY, 1.0)
        } else {
            let lt = dstar0 / inp.d_up;
            (lt, lt / (1.0 + lt))
        };

        // least-squares fit of the damage viscosity weight. Only nodes
        // that flow with a positive slope excess `g - kappa` constrain
        // the weight (for the others no weight solves the flow rule, so
        // they belong in the residual, not the estimate), and a weight is
        // only meaningful when the slope leaves its stable set at all.
        // The curve is piecewise linear and the weight system holds
        // segment-wise; central differences across a knot mix segments
        // and bias the weight, so the fit picks the stencil (backward,
        // central, forward) with the smallest normalized residual.
        let g = &gz_density_all[i];
        // returns (weight, absolute fit, rate-normalized fit)
        let fit_for = |zdot: &DVector<f64>| -> (f64, f64, f64) {
            let mut num = 0.0;
            let mut den = 0.0;
            let mut flowing = false;
            for j in 0..space.n_nodes() {
                let a = g[j] - kappa;
                if zdot[j] < -tol.rate && a > 0.0 {
                    flowing = true;
                    let b = zdot[j] - a;
                    num -= space.mass_z[j] * a * b;
                    den += space.mass_z[j] * b * b;
                }
            }
            let lambda = if flowing && den > 0.0 && inp.dtilde > tol.eq {
                (num / den).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut fit = 0.0;
            let mut rate_sq = 0.0;
            for j in 0..space.n_nodes() {
                let m = space.mass_z[j];
                rate_sq += m * zdot[j] * zdot[j];
                if zdot[j] < -tol.rate {
                    let a = g[j] - kappa;
                    let res = (1.0 - lambda) * a + lambda * zdot[j];
                    fit += m * res * res;
                } else {
                    let res = (1.0 - lambda) * (g[j] - kappa).max(0.0);
                    fit += m * res * res;
                }
            }
            let fit = fit.sqrt();
            (lambda, fit, fit / rate_sq.sqrt().max(tol.rate))
        };
        let (mut lambda_z, mut lambda_fit_residual, mut best_norm) = fit_for(&r.zdot);
        if i > 0 {
            let h = traj.s[i] - traj.s[i - 1];
            let bwd = (&traj.states[i].z - &traj.states[i - 1].z) / h;
            let (l, f, fnorm) = fit_for(&bwd);
            if fnorm < best_norm {
                (lambda_z, lambda_fit_residual, best_norm) = (l, f, fnorm);
            }
        }
        if i + 1 < n {
            let h = traj.s[i + 1] - traj.s[i];
            let fwd = (&traj.states[i + 1].z - &traj.states[i].z) / h;
            let (l, f, fnorm) = fit_for(&fwd);
            if fnorm < best_norm {
                (lambda_z, lambda_fit_residual, _) = (l, f, fnorm);
            }
        }

        let switching = [
            (inp.tprime * lambda_z).abs(),
            (inp.tprime * lambda_up).abs(),
            (lambda_up * (1.0 - lambda_z)).abs(),
        ];

        // central difference of the zero-hardening energy in s
        let (lo, hi) = if i == 0 {
            (0, 1)
        } else if i + 1 == n {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        let dde = (energy0[hi] - energy0[lo]) / (traj.s[hi] - traj.s[lo]);
        let chain_energy_rate = -dde + dt_energy[i] * inp.tprime;

        samples.push(SampleAnalysis {
            energy0: energy0[i],
            energy_mu: energy_mu[i],
            dt_energy: dt_energy[i],
            inputs: *inp,
            m0_cl: contact::m0_cl(inp, tol),
            m0_cr: contact::m0_cr(inp, tol),
            m0_mu0: contact::m0_mu0(inp, tol),
            m0_munu: contact::m0_munu(inp, tol),
            lambda_z,
            lambda_up,
            lambda_tilde,
            lambda_fit_residual,
            switching,
            chain_energy_rate,
            chain_expansion: chain_expansion[i],
            hill_residual: hill[i],
        });
    }

    // set-constancy of t on components of the positive-slope sets
    let t_var = |member: &dyn Fn(&SampleAnalysis) -> bool| -> f64 {
        let mut worst = 0.0f64;
        let mut i = 0;
        while i < samples.len() {
            if member(&samples[i]) {
                let start = i;
                while i < samples.len() && member(&samples[i]) {
                    i += 1;
                }
                worst = worst.max(traj.t[i - 1] - traj.t[start]);
            } else {
                i += 1;
            }
        }
        worst
    };
    let t_variation_on_damage_set = t_var(&|s| s.inputs.dtilde > tol.eq);
    let t_variation_on_slope_set = t_var(&|s| s.inputs.dstar0() > tol.eq);

    let mut normalization_drift = 0.0f64;
    for i in 1..n.saturating_sub(1) {
        normalization_drift = normalization_drift.max((traj.speed(space, i) - 1.0).abs());
    }

    Ok(CurveAnalysis {
        samples,
        t_variation_on_damage_set,
        t_variation_on_slope_set,
        normalization_drift,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StructureThresholds {
    /// Bound on `var(t)` and `var(z)` over the transient.
    pub var: f64,
    /// Bound on the transition-system residuals over the transient.
    pub transition: f64,
    /// Bound on violations and balance residuals past the transient.
    pub bv0: f64,
}

/// Detection of the transient structure: the stationarity set
/// `{s : D*(t(s), q(s)) <= tol}` must be a terminal interval; before it
/// only `(u, p)` evolve viscously at frozen `t` and `z`, after it the
/// curve must satisfy the damage-viscosity-only characterization.
#[derive(Debug, Clone, Serialize)]
pub struct StructureReport {
    pub s_star_index: usize,
    pub s_star: f64,
    pub frak_s_empty: bool,
    /// Samples in the stationarity set strictly before the persistent
    /// tail (nonzero values contradict the interval structure).
    pub interval_defect: usize,
    pub dstar_at_start: f64,
    pub var_t_before: f64,
    pub var_z_before: f64,
    pub transition_residual_u: f64,
    pub transition_residual_p: f64,
    pub max_cl_violation_after: f64,
    pub balance_cl_after: f64,
    pub normalization_drift: f64,
    pub verdict_a: Option<bool>,
    pub verdict_b: Option<bool>,
}

pub fn structure_detect(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    traj: &ParamTrajectory,
    analysis: &CurveAnalysis,
    tol: &Tolerances,
    thresholds: &StructureThresholds,
) -> StructureReport {
    let n = traj.len();
    let member: Vec<bool> = analysis
        .samples
        .iter()
        .map(|s| s.inputs.dstar0() <= tol.eq)
        .collect();
    // persistence: first index from which membership never drops
    let mut s_star_index = n;
    for i in (0..n).rev() {
        if member[i] {
            s_star_index = i;
        } else {
            break;
        }
    }
    let frak_s_empty = s_star_index == n;
    let interval_defect = member[..s_star_index.min(n)]
        .iter()
        .filter(|&&m| m)
        .count();
    let s_star = if frak_s_empty { traj.total_length() } else { traj.s[s_star_index] };

    // transient segment [0, s_star)
    let mut var_t_before = 0.0f64;
    let mut var_z_before = 0.0f64;
    let mut res_u = 0.0f64;
    let mut res_p = 0.0f64;
    for i in 0..s_star_index {
        var_t_before = var_t_before.max((traj.t[i] - traj.t[0]).abs());
        let dz = &traj.states[i].z - &traj.states[0].z;
        var_z_before = var_z_before.max(space.norm_hm(&dz));

        let s = &analysis.samples[i];
        let r = &traj.rates[i];
        let q = &traj.states[i];
        let lt = s.lambda_tilde;
        if lt.is_finite() && lt > 0.0 {
            let gu = energy::grad_u(space, loading, traj.t[i], q);
            let ku = &space.k_visc * &space.restrict_free(&r.udot);
            res_u = res_u.max(space.norm_h1d_dual(&(lt * ku + gu)));
            let sigma = q.stress(space, loading, traj.t[i]);
            let mut acc = 0.0;
            for (c, sc) in sigma.iter().enumerate() {
                let zc = space.cell_average(&q.z, c);
                let dev = sc.dev();
                let excess = dev - space.material.constraint.project(zc, &dev);
                let d = lt * r.pdot[c] - excess;
                acc += space.cell_area() * d.inner(&d);
            }
            res_p = res_p.max(acc.sqrt());
        } else {
            res_u = res_u.max(s.inputs.su);
            res_p = res_p.max(s.inputs.wp);
        }
    }

    // stable tail [s_star, S]
    let mut max_cl_violation_after = 0.0f64;
    let mut balance_cl_after = 0.0f64;
    for i in s_star_index..n {
        let s = &analysis.samples[i];
        max_cl_violation_after = max_cl_violation_after.max(s.m0_cl.max_violation());
        balance_cl_after =
            balance_cl_after.max((s.chain_expansion - s.m0_cl.finite_part).abs());
    }

    let verdict_a = (s_star_index > 0).then(|| {
        var_t_before <= thresholds.var
            && var_z_before <= thresholds.var
            && res_u.max(res_p) <= thresholds.transition
    });
    let verdict_b = (!frak_s_empty).then(|| {
        max_cl_violation_after <= thresholds.bv0 && balance_cl_after <= thresholds.bv0
    });

    StructureReport {
        s_star_index,
        s_star,
        frak_s_empty,
        interval_defect,
        dstar_at_start: analysis.samples[0].inputs.dstar0(),
        var_t_before,
        var_z_before,
        transition_residual_u: res_u,
        transition_residual_p: res_p,
        max_cl_violation_after,
        balance_cl_after,
        normalization_drift: analysis.normalization_drift,
        verdict_a,
        verdict_b,
    }
}

/// Parameter triples visited by one limit path. The first grid value
/// seeds the parameters held fixed in the first phase; the deep factor
/// pushes the first-vanishing parameter one decade further so the three
/// paths terminate at distinct points.
pub fn sweep_points(path: SweepPath, grid: &[f64], deep_factor: f64) -> Vec<ParamTriple> {
    let g0 = grid[0];
    let g_last = *grid.last().unwrap();
    let deep = g_last * deep_factor;
    match path {
        SweepPath::Joint => grid
            .iter()
            .map(|&g| ParamTriple { eps: g, mu: g, nu: g })
            .collect(),
        SweepPath::EpsFirst => {
            let mut pts: Vec<ParamTriple> = grid
                .iter()
                .map(|&g| ParamTriple { eps: g, mu: g0, nu: g0 })
                .collect();
            pts.push(ParamTriple { eps: deep, mu: g0, nu: g0 });
            for &g in &grid[1..] {
                pts.push(ParamTriple { eps: deep, mu: g, nu: g });
            }
            pts
        }
        SweepPath::EpsnuFirst => {
            let mut pts: Vec<ParamTriple> = grid
                .iter()
                .map(|&g| ParamTriple { eps: g, mu: g0, nu: g })
                .collect();
            pts.push(ParamTriple { eps: deep, mu: g0, nu: deep });
            for &g in &grid[1..] {
                pts.push(ParamTriple { eps: deep, mu: g, nu: deep });
            }
            pts
        }
    }
}

/// Per-point summary within a sweep report.
#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    pub params: ParamTriple,
    pub arclength: f64,
    pub max_violation_cl: f64,
    pub max_violation_cr: f64,
    pub balance_residual_cl: f64,
    pub balance_residual_cr: f64,
    pub max_switching: [f64; 3],
    /// Uniform-bound check mirroring the a-priori estimates:
    /// `sup_s (speed + |e'| + D(u',p') D*)`.
    pub rate_bound: f64,
    pub cauchy_to_previous: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub path: SweepPath,
    pub points: Vec<PointSummary>,
}

impl SweepReport {
    pub fn terminal(&self) -> &PointSummary {
        self.points.last().expect("sweep is nonempty")
    }
}

pub struct SweepCurve {
    pub params: ParamTriple,
    pub traj: ParamTrajectory,
    pub analysis: CurveAnalysis,
    /// Analysis at the exact solver knots; switching diagnostics use it
    /// because backward stencils there pair exactly with the implicit
    /// step's optimality.
    pub knots: ParamTrajectory,
    pub analysis_knots: CurveAnalysis,
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub curves: Vec<SweepCurve>,
}

/// State of a curve at a fraction of its arclength (uniform grid).
pub fn sample_at_fraction(traj: &ParamTrajectory, f: f64) -> (f64, State) {
    let m = traj.len() - 1;
    let x = (f.clamp(0.0, 1.0)) * m as f64;
    let j = (x.floor() as usize).min(m - 1);
    let w = x - j as f64;
    let a = &traj.states[j];
    let b = &traj.states[j + 1];
    let t = (1.0 - w) * traj.t[j] + w * traj.t[j + 1];
    let st = State {
        u: (1.0 - w) * &a.u + w * &b.u,
        z: (1.0 - w) * &a.z + w * &b.z,
        p: a
            .p
            .iter()
            .zip(&b.p)
            .map(|(x1, y1)| (1.0 - w) * *x1 + w * *y1)
            .collect(),
    };
    (t, st)
}

/// Sup distance between two curves compared at matched arclength
/// fractions after rescaling both to [0, 1].
pub fn curve_distance(
    space: &DiscreteSpace,
    a: &ParamTrajectory,
    b: &ParamTrajectory,
    n_probe: usize,
) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..=n_probe {
        let f = j as f64 / n_probe as f64;
        let (ta, qa) = sample_at_fraction(a, f);
        let (tb, qb) = sample_at_fraction(b, f);
        let du = &qa.u - &qb.u;
        let dz = &qa.z - &qb.z;
        let dp: Vec<Dev2> = qa.p.iter().zip(&qb.p).map(|(x, y)| *x - *y).collect();
        let d = (ta - tb).abs()
            + space.norm_h1d(&du)
            + space.norm_hm(&dz)
            + space.norm_l2_p(&dp);
        worst = worst.max(d);
    }
    worst
}

fn run_point(
    cfg: &RunConfig,
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    params: ParamTriple,
    tol: &Tolerances,
) -> Result<SweepCurve, CoreError> {
    let q0 = cfg.initial_state(space, loading)?;
    let run = solver::solve(space, loading, q0, params, &cfg.solver)?;
    if let Some(f) = &run.aborted {
        return Err(CoreError::Config(format!(
            "sweep point (eps {:.1e}, mu {:.1e}, nu {:.1e}) failed at step {}: {}",
            params.eps, params.mu, params.nu, f.step_index, f.message
        )));
    }
    let traj = reparam::reparameterize(space, loading, &run, cfg.analysis.resample_factor)?;
    let analysis = analyze_curve(space, loading, &traj, tol, cfg.solver.tol_unidir)?;
    let knots = reparam::reparameterize_knots(space, loading, &run)?;
    let analysis_knots = analyze_curve(space, loading, &knots, tol, cfg.solver.tol_unidir)?;
    Ok(SweepCurve { params, traj, analysis, knots, analysis_knots })
}

/// Runs one limit path over its parameter grid and reports convergence
/// data: Cauchy differences of successive rescaled curves, violation
/// magnitudes, balance residuals and the uniform rate bound.
pub fn limit_sweep(
    cfg: &RunConfig,
    path: SweepPath,
    workers: usize,
    tol: &Tolerances,
) -> Result<SweepOutcome, CoreError> {
    let sweep_cfg = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CoreError::Config("config has no sweep block".into()))?;
    let points = sweep_points(path, &sweep_cfg.grid, sweep_cfg.deep_factor);
    for p in &points {
        p.validate()?;
    }
    let space = cfg.build_space()?;
    let loading = cfg.build_loading(&space)?;

    let mut curves: Vec<Option<SweepCurve>> = Vec::with_capacity(points.len());
    for _ in 0..points.len() {
        curves.push(None);
    }
    if workers <= 1 {
        for (i, &params) in points.iter().enumerate() {
            curves[i] = Some(run_point(cfg, &space, &loading, params, tol)?);
        }
    } else {
        let results = std::sync::Mutex::new(Vec::new());
        let next = std::sync::atomic::AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers.min(points.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= points.len() {
                        break;
                    }
                    let res = run_point(cfg, &space, &loading, points[i], tol);
                    results.lock().unwrap().push((i, res));
                });
            }
        });
        for (i, res) in results.into_inner().unwrap() {
            curves[i] = Some(res?);
        }
    }
    let curves: Vec<SweepCurve> = curves.into_iter().map(|c| c.unwrap()).collect();

    let mut summaries = Vec::with_capacity(curves.len());
    for (i, c) in curves.iter().enumerate() {
        let a = &c.analysis;
        let rate_bound = a
            .samples
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let e_norm: f64 = c.traj.rates[j]
                    .edot
                    .iter()
                    .map(|e| space.cell_area() * e.inner(e))
                    .sum::<f64>()
                    .sqrt();
                c.traj.speed(&space, j) + e_norm + s.inputs.d_up * s.inputs.dstar0()
            })
            .fold(0.0, f64::max);
        summaries.push(PointSummary {
            params: c.params,
            arclength: c.traj.total_length(),
            max_violation_cl: a.max_violation(|s| &s.m0_cl),
            max_violation_cr: a.max_violation(|s| &s.m0_cr),
            balance_residual_cl: a.balance_residual(|s| &s.m0_cl),
            balance_residual_cr: a.balance_residual(|s| &s.m0_cr),
            max_switching: c.analysis_knots.max_switching(),
            rate_bound,
            cauchy_to_previous: (i > 0)
                .then(|| curve_distance(&space, &curves[i - 1].traj, &c.traj, 100)),
        });
    }

    Ok(SweepOutcome { report: SweepReport { path, points: summaries }, curves })
}

#[derive(Debug, Clone, Serialize)]
pub struct CommuteReport {
    pub eps_first: SweepReport,
    pub epsnu_first: SweepReport,
    pub joint: SweepReport,
    /// Terminal balance residuals of the full-limit potential, in path
    /// order (eps-first, epsnu-first, joint).
    pub terminal_balance_residuals: [f64; 3],
    pub terminal_max_violations: [f64; 3],
    /// Sup distances between the terminal curves of the three paths
    /// (eps-first vs epsnu-first, eps-first vs joint, epsnu-first vs joint).
    pub terminal_curve_distances: [f64; 3],
    pub notion_tolerance: f64,
    /// All three terminal curves satisfy the full-limit balance at the
    /// stated tolerance: same notion of solution, not the same curve.
    pub commutes: bool,
}

/// Runs all three limit paths and checks that their terminal curves pass
/// the full-limit energy-balance residual at the given tolerance.
pub fn commute(
    cfg: &RunConfig,
    workers: usize,
    tol: &Tolerances,
    notion_tolerance: f64,
) -> Result<(CommuteReport, [SweepOutcome; 3]), CoreError> {
    let eps_first = limit_sweep(cfg, SweepPath::EpsFirst, workers, tol)?;
    let epsnu_first = limit_sweep(cfg, SweepPath::EpsnuFirst, workers, tol)?;
    let joint = limit_sweep(cfg, SweepPath::Joint, workers, tol)?;

    let residuals = [
        eps_first.report.terminal().balance_residual_cr,
        epsnu_first.report.terminal().balance_residual_cr,
        joint.report.terminal().balance_residual_cr,
    ];
    let violations = [
        eps_first.report.terminal().max_violation_cr,
        epsnu_first.report.terminal().max_violation_cr,
        joint.report.terminal().max_violation_cr,
    ];
    let space = cfg.build_space()?;
    let t_ef = &eps_first.curves.last().unwrap().traj;
    let t_en = &epsnu_first.curves.last().unwrap().traj;
    let t_j = &joint.curves.last().unwrap().traj;
    let distances = [
        curve_distance(&space, t_ef, t_en, 100),
        curve_distance(&space, t_ef, t_j, 100),
        curve_distance(&space, t_en, t_j, 100),
    ];
    let commutes = residuals.iter().all(|r| *r <= notion_tolerance);

    let report = CommuteReport {
        eps_first: eps_first.report.clone(),
        epsnu_first: epsnu_first.report.clone(),
        joint: joint.report.clone(),
        terminal_balance_residuals: residuals,
        terminal_max_violations: violations,
        terminal_curve_distances: distances,
        notion_tolerance,
        commutes,
    };
    Ok((report, [eps_first, epsnu_first, joint]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{reference_config, tiny_config};
    use crate::contact::Regime;
    use crate::oracle::{manufactured_jump, JumpKind};

    fn default_tol() -> Tolerances {
        Tolerances { eq: 1e-6, rate: 1e-6 }
    }

    #[test]
    fn lambda_recovery_on_manufactured_z_jump() {
        let mut cfg = tiny_config();
        cfg.loading.w_profile.p0 = 3.0;
        let space = cfg.build_space().unwrap();
        let loading = cfg.build_loading(&space).unwrap();
        let q0 = cfg.initial_state(&space, &loading).unwrap();
        for &planted in &[0.3, 0.5, 0.8] {
            let traj = manufactured_jump(
                &space, &loading, 0.0, &q0, JumpKind::ViscousZ, planted, 15, 0.02,
            )
            .unwrap();
            let analysis =
                analyze_curve(&space, &loading, &traj, &default_tol(), 1e-10).unwrap();
            for s in &analysis.samples {
                assert!(
                    (s.lambda_z - planted).abs() < 1e-6,
                    "planted {planted}, recovered {}",
                    s.lambda_z
                );
            }
        }
    }

    #[test]
    fn lambda_recovery_on_manufactured_up_jump() {
        let mut cfg = tiny_config();
        cfg.loading.w_profile.p0 = 1.0;
        cfg.initial.p0 = crate::config::InitialPlastic::SigmaFactor { factor: 1.5 };
        let space = cfg.build_space().unwrap();
        let loading = cfg.build_loading(&space).unwrap();
        let q0 = cfg.initial_state(&space, &loading).unwrap();
        let traj = manufactured_jump(
            &space, &loading, 0.0, &q0, JumpKind::ViscousUp, 0.5, 15, 0.05,
        )
        .unwrap();
        let analysis = analyze_curve(&space, &loading, &traj, &default_tol(), 1e-10).unwrap();
        // skip the final samples where the transient has nearly relaxed
        for s in analysis.samples.iter().take(10) {
            assert!(
                (s.lambda_up - 0.5).abs() < 1e-6,
                "recovered lambda_up = {}",
                s.lambda_up
            );
            assert_eq!(s.inputs.regime(&default_tol()), Regime::ViscousUp);
            // t' = 0 on the synthetic jump
            assert_eq!(s.switching[0], 0.0);
            assert_eq!(s.switching[1], 0.0);
        }
    }

    #[test]
    fn dstar_zero_gives_zero_lambda_up() {
        let cfg = reference_config();
        let space = cfg.build_space().unwrap();
        let loading = crate::discretization::LoadingProgram::zero(&space, 1.0);
        let q0 = State::zeros(&space, 1.0);
        let params = ParamTriple { eps: 0.1, mu: 0.1, nu: 0.1 };
        let mut scfg = cfg.solver;
        scfg.n_steps = 5;
        let run = solver::solve(&space, &loading, q0, params, &scfg).unwrap();
        let traj = reparam::reparameterize(&space, &loading, &run, 2).unwrap();
        let analysis = analyze_curve(&space, &loading, &traj, &default_tol(), 1e-10).unwrap();
        for s in &analysis.samples {
            assert_eq!(s.lambda_up, 0.0);
            assert_eq!(s.lambda_z, 0.0);
            // the state is frozen but the loading time advances at unit
            // speed, so these are rate-independent samples
            assert_eq!(s.inputs.regime(&default_tol()), Regime::RateIndependent);
        }
    }

    #[test]
    fn chain_rule_identity_on_viscous_curve() {
        let mut cfg = tiny_config();
        cfg.solver.n_steps = 120;
        let space = cfg.build_space().unwrap();
        let loading = cfg.build_loading(&space).unwrap();
        let q0 = cfg.initial_state(&space, &loading).unwrap();
        let params = ParamTriple { eps: 0.05, mu: 0.05, nu: 0.05 };
        let run = solver::solve(&space, &loading, q0, params, &cfg.solver).unwrap();
        let traj = reparam::reparameterize(&space, &loading, &run, 4).unwrap();
        let analysis = analyze_curve(&space, &loading, &traj, &default_tol(), 1e-10).unwrap();
        // (i) = (ii) is the chain rule for the zero-hardening energy and
        // holds along any curve up to discretization error
        let scale = analysis
            .samples
            .iter()
            .map(|s| s.energy0.abs())
            .fold(1.0, f64::max);
        for (i, s) in analysis.samples.iter().enumerate().skip(1) {
            if i + 1 == analysis.samples.len() {
                break;
            }
            assert!(
                (s.chain_energy_rate - s.chain_expansion).abs() < 2e-2 * scale,
                "sample {i}: {} vs {}",
                s.chain_energy_rate,
                s.chain_expansion
            );
        }
    }

    #[test]
    fn perturbed_time_detected_by_set_constancy() {
        // plant a jump trajectory where t moves while the slope set is
        // active: the set-constancy check must catch it
        let mut cfg = tiny_config();
        cfg.loading.w_profile.p0 = 1.0;
        cfg.initial.p0 = crate::config::InitialPlastic::SigmaFactor { factor: 1.5 };
        let space = cfg.build_space().unwrap();
        let loading = cfg.build_loading(&space).unwrap();
        let q0 = cfg.initial_state(&space, &loading).unwrap();
        let mut traj = manufactured_jump(
            &space, &loading, 0.0, &q0, JumpKind::ViscousUp, 0.5, 15, 0.05,
        )
        .unwrap();
        let analysis = analyze_curve(&space, &loading, &traj, &default_tol(), 1e-10).unwrap();
        assert!(analysis.t_variation_on_slope_set < 1e-12);
        for (i, t) in traj.t.iter_mut().enumerate() {
            *t += 0.001 * i as f64;
        }
        let analysis = analyze_curve(&space, &loading, &traj, &default_tol(), 1e-10).unwrap();
        assert!(analysis.t_variation_on_slope_set > 1e-3);
    }

    #[test]
    fn hill_residual_zero_at_yield_flow() {
        // a cell flowing at the yield surface satisfies the duality
        // exactly by the ball geometry
        let cfg = tiny_config();
        let space = cfg.build_space().unwrap();
        let z = DVector::from_element(space.n_nodes(), 0.5);
        let r0 = space.material.constraint.radius(0.5);
        let dir = Dev2 { d: 1.0 / 2.0f64.sqrt(), m: 0.0 };
        let sigma_d = r0 * dir;
        let pdot = vec![0.3 * dir; space.n_cells()];
        let calh = dissipation::cal_h(&space, &z, &pdot);
        let pair: f64 = pdot
            .iter()
            .map(|pd| space.cell_area() * sigma_d.inner(pd))
            .sum();
        assert!((calh - pair).abs() < 1e-13);
    }

    #[test]
    fn structure_report_on_stable_curve() {
        // equilibrated start: s_* = 0 and the tail is checked everywhere
        let mut cfg = tiny_config();
        cfg.solver.n_steps = 60;
        let space = cfg.build_space().unwrap();
        let loading = cfg.build_loading(&space).unwrap();
        let q0 = cfg.initial_state(&space, &loading).unwrap();
        let params = ParamTriple { eps: 1e-3, mu: 1e-3, nu: 1e-3 };
        let run = solver::solve(&space, &loading, q0, params, &cfg.solver).unwrap();
        assert!(run.aborted.is_none());
        let traj = reparam::reparameterize(&space, &loading, &run, 4).unwrap();
        let tol = Tolerances { eq: 1e-2, rate: 1e-6 };
        let analysis = analyze_curve(&space, &loading, &traj, &tol, 1e-10).unwrap();
        let report = structure_detect(
            &space,
            &loading,
            &traj,
            &analysis,
            &tol,
            &StructureThresholds { var: 1e-6, transition: 1e-2, bv0: 0.1 },
        );
        assert_eq!(report.s_star_index, 0);
        assert_eq!(report.verdict_a, None);
    }

    #[test]
    fn sweep_points_respect_rate_ordering_and_are_distinct() {
        let grid = vec![1e-1, 1e-2, 1e-3];
        let mut terminals = Vec::new();
        for path in [SweepPath::EpsFirst, SweepPath::EpsnuFirst, SweepPath::Joint] {
            let pts = sweep_points(path, &grid, 0.1);
            for p in &pts {
                p.validate().unwrap();
            }
            terminals.push(*pts.last().unwrap());
        }
        assert_ne!(terminals[0], terminals[1]);
        assert_ne!(terminals[0], terminals[2]);
        assert_ne!(terminals[1], terminals[2]);
    }

    #[test]
    fn static_sweep_produces_identical_curves() {
        let mut cfg = tiny_config();
        cfg.solver.n_steps = 8;
        cfg.loading.rho_shear = 0.0;
        cfg.loading.w_amplitude = 0.0;
        cfg.sweep = Some(crate::config::SweepConfig {
            path: SweepPath::Joint,
            grid: vec![1e-1, 1e-2],
            deep_factor: 0.1,
        });
        let out = limit_sweep(&cfg, SweepPath::Joint, 1, &default_tol()).unwrap();
        for p in &out.report.points {
            if let Some(c) = p.cauchy_to_previous {
                assert!(c < 1e-12);
            }
        }
    }
}
