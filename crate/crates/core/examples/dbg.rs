use viscoflow_core::*;
fn main() {
    let mut cfg = config::tiny_config();
    cfg.loading.w_profile.p0 = 3.0;
    let space = cfg.build_space().unwrap();
    let loading = cfg.build_loading(&space).unwrap();
    let q0 = cfg.initial_state(&space, &loading).unwrap();
    let planted = 0.3;
    let traj = oracle::manufactured_jump(&space, &loading, 0.0, &q0, oracle::JumpKind::ViscousZ, planted, 15, 0.02).unwrap();
    let tol = contact::Tolerances { eq: 1e-6, rate: 1e-6 };
    let kappa = space.material.toughness.kappa;
    for i in [0usize, 7, 14] {
        let g = energy::grad_z_density(&space, &loading, traj.t[i], &traj.states[i]).unwrap();
        let r = &traj.rates[i];
        // analytic-rate residual at planted lambda
        let mut fit = 0.0; let mut nf = 0; let mut rate_sq = 0.0;
        for j in 0..space.n_nodes() {
            let a = g[j] - kappa;
            rate_sq += space.mass_z[j] * r.zdot[j] * r.zdot[j];
            if r.zdot[j] < -1e-6 && a > 0.0 { nf += 1;
                let res = (1.0-planted)*a + planted*r.zdot[j];
                fit += space.mass_z[j]*res*res;
            } else {
                let res = (1.0-planted)*(a).max(0.0);
                fit += space.mass_z[j]*res*res;
            }
        }
        println!("sample {i}: flowing {nf}, fit_abs {:.3e}, fit_norm {:.3e}, |z'| {:.3e}", fit.sqrt(), fit.sqrt()/rate_sq.sqrt().max(1e-6), rate_sq.sqrt());
    }
}
