//! Dissipation potentials, subdifferential distances, and slope
//! aggregates for the viscous and rate-independent functionals.
//!
//! Values that can be infinite carry an explicit flag with a violation
//! magnitude instead of a float sentinel; classification layers need the
//! graded information.

use nalgebra::DVector;

use crate::discretization::{DiscreteSpace, LoadingProgram, State};
use crate::energy;
use crate::error::CoreError;
use crate::tensor::Dev2;

/// Extended value: finite, or infinite with the magnitude of the
/// constraint violation that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtValue {
    Finite(f64),
    Infinite { violation: f64 },
}

impl ExtValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtValue::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            ExtValue::Finite(v) => Some(*v),
            ExtValue::Infinite { .. } => None,
        }
    }

    /// Finite part, ignoring an infinity flag.
    pub fn finite_part(&self) -> f64 {
        match self {
            ExtValue::Finite(v) => *v,
            ExtValue::Infinite { .. } => f64::INFINITY,
        }
    }
}

/// Unidirectional damage dissipation of a nodal rate field:
/// `kappa * integral(-zeta)` if `zeta <= 0` up to `tol_unidir`,
/// infinite otherwise with the mass-weighted positive part as magnitude.
pub fn cal_r(space: &DiscreteSpace, zdot: &DVector<f64>, tol_unidir: f64) -> ExtValue {
    let kappa = space.material.toughness.kappa;
    let mut violation_sq = 0.0;
    let mut value = 0.0;
    let mut violated = false;
    for (i, &zi) in zdot.iter().enumerate() {
        if zi > tol_unidir {
            violated = true;
            violation_sq += space.mass_z[i] * zi * zi;
        }
        value += space.mass_z[i] * (-zi);
    }
    if violated {
        ExtValue::Infinite { violation: violation_sq.sqrt() }
    } else {
        ExtValue::Finite(kappa * value.max(0.0))
    }
}

/// Plastic dissipation `integral r(z) |pdot|` with the cell-averaged
/// damage field.
pub fn cal_h(space: &DiscreteSpace, z: &DVector<f64>, pdot: &[Dev2]) -> f64 {
    let area = space.cell_area();
    pdot.iter()
        .enumerate()
        .map(|(c, pc)| {
            area * space.material.constraint.radius(space.cell_average(z, c)) * pc.norm()
        })
        .sum()
}

/// Mass-weighted L2 distance of a nodal density from the stable set of
/// the damage dissipation: `||(chi + kappa)^-||_{L2}`.
pub fn dist_dr0(space: &DiscreteSpace, chi: &DVector<f64>) -> f64 {
    let kappa = space.material.toughness.kappa;
    chi.iter()
        .zip(space.mass_z.iter())
        .map(|(&c, &m)| {
            let neg = (c + kappa).min(0.0);
            m * neg * neg
        })
        .sum::<f64>()
        .sqrt()
}

/// Area-weighted L2 distance of a per-cell deviatoric field from the
/// admissible stress set field `K(z)`.
pub fn dist_dh0(space: &DiscreteSpace, z: &DVector<f64>, varsigma: &[Dev2]) -> f64 {
    let area = space.cell_area();
    varsigma
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let d = space.material.constraint.dist(space.cell_average(z, c), s);
            area * d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Per-component slope data evaluated at a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeComponents {
    /// Dual norm of the equilibrium residual.
    pub u: f64,
    /// Distance of `-D_z E` from the stable set of the damage dissipation.
    pub z: f64,
    /// Distance of `-D_p E` from the stable set of the plastic dissipation.
    pub p: f64,
}

impl SlopeComponents {
    /// Weighted aggregate `sqrt(u^2 / nu + z^2 + p^2 / nu)`.
    pub fn aggregate_nu(&self, nu: f64) -> f64 {
        (self.u * self.u / nu + self.z * self.z + self.p * self.p / nu).sqrt()
    }

    /// Hardening-aware `(u, p)` aggregate.
    pub fn aggregate_up(&self) -> f64 {
        self.u.hypot(self.p)
    }
}

/// Slope components of the energy with hardening weight `mu`.
pub fn slope_components(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
    mu: f64,
) -> Result<SlopeComponents, CoreError> {
    let gu = energy::grad_u(space, loading, t, state);
    let u = space.norm_h1d_dual(&gu);
    let chi: DVector<f64> = -energy::grad_z_density(space, loading, t, state)?;
    let z = dist_dr0(space, &chi);
    let gp = energy::grad_p(space, loading, t, state, mu);
    let neg_gp: Vec<Dev2> = gp.iter().map(|g| -*g).collect();
    let p = dist_dh0(space, &state.z, &neg_gp);
    Ok(SlopeComponents { u, z, p })
}

/// Viscous dissipation rate norm
/// `sqrt(nu |u'|_{H1,D}^2 + |z'|_{L2}^2 + nu |p'|_{L2}^2)`.
pub fn slope_d_nu(
    space: &DiscreteSpace,
    udot: &DVector<f64>,
    zdot: &DVector<f64>,
    pdot: &[Dev2],
    nu: f64,
) -> Result<f64, CoreError> {
    if nu <= 0.0 {
        return Err(CoreError::InvalidParameter("nu must be positive".into()));
    }
    let nu_u = space.norm_h1d(udot);
    let nz = space.norm_l2_z(zdot);
    let np = space.norm_l2_p(pdot);
    Ok((nu * nu_u * nu_u + nz * nz + nu * np * np).sqrt())
}

/// Dual slope aggregate for the viscous system.
pub fn slope_dstar_mu_nu(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
    mu: f64,
    nu: f64,
) -> Result<f64, CoreError> {
    if nu <= 0.0 {
        return Err(CoreError::InvalidParameter("nu must be positive".into()));
    }
    Ok(slope_components(space, loading, t, state, mu)?.aggregate_nu(nu))
}

/// Equilibrium surrogate: dual norm of the discrete equilibrium residual
/// of the zero-hardening stress.
pub fn surrogate_su(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
) -> f64 {
    let gu = energy::grad_u(space, loading, t, state);
    space.norm_h1d_dual(&gu)
}

/// Stability surrogate: distance of the deviatoric stress from the
/// admissible set field.
pub fn surrogate_wp(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
) -> f64 {
    let sigma_dev: Vec<Dev2> = state
        .stress(space, loading, t)
        .iter()
        .map(|s| s.dev())
        .collect();
    dist_dh0(space, &state.z, &sigma_dev)
}

/// Zero-hardening dual slope `sqrt(S_u^2 + W_p^2)`.
pub fn slope_dstar0(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    state: &State,
) -> f64 {
    surrogate_su(space, loading, t, state).hypot(surrogate_wp(space, loading, t, state))
}

/// Rescaled viscous dissipation potential
/// `Psi_eps^nu(q, q') = (eps nu / 2)|u'|^2 + R(z') + (eps/2)|z'|^2
///  + H(z_diss, p') + (eps nu / 2)|p'|^2`.
///
/// `z_diss` is the damage field carried by the state-dependent plastic
/// dissipation; the incremental scheme freezes it at the previous state.
pub fn psi_eps_nu(
    space: &DiscreteSpace,
    z_diss: &DVector<f64>,
    udot: &DVector<f64>,
    zdot: &DVector<f64>,
    pdot: &[Dev2],
    eps: f64,
    nu: f64,
    tol_unidir: f64,
) -> ExtValue {
    let r = match cal_r(space, zdot, tol_unidir) {
        ExtValue::Finite(v) => v,
        inf => return inf,
    };
    let nu_u = space.norm_h1d(udot);
    let nz = space.norm_l2_z(zdot);
    let np = space.norm_l2_p(pdot);
    ExtValue::Finite(
        0.5 * eps * nu * nu_u * nu_u
            + r
            + 0.5 * eps * nz * nz
            + cal_h(space, z_diss, pdot)
            + 0.5 * eps * nu * np * np,
    )
}

/// Fenchel conjugate of `psi_eps_nu` in the rate, evaluated at the dual
/// triple `(xi_u, xi_z, xi_p)`; `xi_u` is a free-dof dual vector, `xi_z`
/// a nodal density, `xi_p` a per-cell deviatoric density.
pub fn psi_eps_nu_conjugate(
    space: &DiscreteSpace,
    z_diss: &DVector<f64>,
    xi_u: &DVector<f64>,
    xi_z: &DVector<f64>,
    xi_p: &[Dev2],
    eps: f64,
    nu: f64,
) -> f64 {
    let du = space.norm_h1d_dual(xi_u);
    let dz = dist_dr0(space, xi_z);
    let dp = dist_dh0(space, z_diss, xi_p);
    du * du / (2.0 * eps * nu) + dz * dz / (2.0 * eps) + dp * dp / (2.0 * eps * nu)
}

/// Fenchel-Young gap
/// `Psi(q, q') + Psi^*(q, -DE(t, q)) + <DE(t, q), q'>`,
/// nonnegative, zero exactly at rates realizing the subdifferential
/// inclusion. The plastic dissipation uses `z_diss`.
#[allow(clippy::too_many_arguments)]
pub fn fenchel_dual_gap(
    space: &DiscreteSpace,
    loading: &LoadingProgram,
    t: f64,
    z_diss: &DVector<f64>,
    state: &State,
    udot: &DVector<f64>,
    zdot: &DVector<f64>,
    pdot: &[Dev2],
    eps: f64,
    mu: f64,
    nu: f64,
    tol_unidir: f64,
) -> Result<ExtValue, CoreError> {
    let psi = match psi_eps_nu(space, z_diss, udot, zdot, pdot, eps, nu, tol_unidir) {
        ExtValue::Finite(v) => v,
        inf => return Ok(inf),
    };
    let gu = energy::grad_u(space, loading, t, state);
    let gz_density = energy::grad_z_density(space, loading, t, state)?;
    let gp = energy::grad_p(space, loading, t, state, mu);

    let neg_gz: DVector<f64> = -&gz_density;
    let neg_gp: Vec<Dev2> = gp.iter().map(|g| -*g).collect();
    let conj = psi_eps_nu_conjugate(space, z_diss, &gu, &neg_gz, &neg_gp, eps, nu);

    // <DE, q'> with mass-weighted pairings
    let pair_u = gu.dot(&space.restrict_free(udot));
    let pair_z = gz_density
        .iter()
        .zip(zdot.iter())
        .zip(space.mass_z.iter())
        .map(|((g, r), m)| m * g * r)
        .sum::<f64>();
    let pair_p = space.inner_l2_p(&gp, pdot);

    Ok(ExtValue::Finite(psi + conj + pair_u + pair_z + pair_p))
}

/// Rate triple realizing the subdifferential inclusion
/// `0 in d_rate Psi + xi` for the dual triple `xi = DE`; closed-form
/// resolvent used by optimality tests.
pub fn resolvent_rates(
    space: &DiscreteSpace,
    z_diss: &DVector<f64>,
    xi_u: &DVector<f64>,
    xi_z: &DVector<f64>,
    xi_p: &[Dev2],
    eps: f64,
    nu: f64,
) -> (DVector<f64>, DVector<f64>, Vec<Dev2>) {
    let kappa = space.material.toughness.kappa;
    // u' = -(1/(eps nu)) K_D^{-1} xi_u
    let udot_free = -space.solve_k_visc(xi_u) / (eps * nu);
    let udot = space.scatter_free(&udot_free);
    // z' = min((kappa - xi_z)/eps, 0) pointwise
    let zdot = DVector::from_iterator(
        xi_z.len(),
        xi_z.iter().map(|&x| ((kappa - x) / eps).min(0.0)),
    );
    // p' = shrinkage of -xi_p by r(z)
    let pdot = xi_p
        .iter()
        .enumerate()
        .map(|(c, x)| {
            let r = space.material.constraint.radius(space.cell_average(z_diss, c));
            let v = -*x;
            let n = v.norm();
            if n <= r {
                Dev2::ZERO
            } else {
                ((n - r) / (eps * nu * n)) * v
            }
        })
        .collect();
    (udot, zdot, pdot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::reference_config;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (DiscreteSpace, LoadingProgram) {
        let cfg = reference_config();
        let space = cfg.build_space().unwrap();
        let loading = cfg.build_loading(&space).unwrap();
        (space, loading)
    }

    fn random_state(space: &DiscreteSpace, rng: &mut ChaCha8Rng) -> State {
        let mut st = State::zeros(space, 0.9);
        for &d in &space.free_dofs {
            st.u[d] = rng.gen_range(-0.5..0.5);
        }
        for i in 0..space.n_nodes() {
            st.z[i] = rng.gen_range(0.4..1.0);
        }
        for p in st.p.iter_mut() {
            *p = Dev2 { d: rng.gen_range(-0.5..0.5), m: rng.gen_range(-0.5..0.5) };
        }
        st
    }

    #[test]
    fn cal_r_values() {
        let (space, _) = setup();
        // unit-area mesh, zeta = -1 everywhere: kappa * 1
        let zdot = DVector::from_element(space.n_nodes(), -1.0);
        let total_mass: f64 = space.mass_z.iter().sum();
        assert!((total_mass - 1.0).abs() < 1e-13);
        match cal_r(&space, &zdot, 1e-10) {
            ExtValue::Finite(v) => {
                assert!((v - space.material.toughness.kappa).abs() < 1e-13)
            }
            _ => panic!("expected finite"),
        }
        assert_eq!(cal_r(&space, &DVector::zeros(space.n_nodes()), 1e-10), ExtValue::Finite(0.0));
        let mut bad = zdot.clone();
        bad[7] = 1e-3;
        assert!(!cal_r(&space, &bad, 1e-10).is_finite());
    }

    #[test]
    fn cal_h_single_cell_and_homogeneity() {
        let (space, _) = setup();
        let z = DVector::from_element(space.n_nodes(), 0.5);
        // r(0.5) = 1.5; one cell flowing with |pi| = 2
        let mut pdot = vec![Dev2::ZERO; space.n_cells()];
        pdot[3] = Dev2 { d: 2.0f64.sqrt(), m: 0.0 };
        let v = cal_h(&space, &z, &pdot);
        assert!((v - space.cell_area() * 1.5 * 2.0).abs() < 1e-13);
        // 1-homogeneity on random data
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pdot: Vec<Dev2> = (0..space.n_cells())
            .map(|_| Dev2 { d: rng.gen_range(-1.0..1.0), m: rng.gen_range(-1.0..1.0) })
            .collect();
        let double: Vec<Dev2> = pdot.iter().map(|p| 2.0 * *p).collect();
        assert!((cal_h(&space, &z, &double) - 2.0 * cal_h(&space, &z, &pdot)).abs() < 1e-12);
    }

    #[test]
    fn dist_dr0_cases() {
        let (space, _) = setup();
        let kappa = space.material.toughness.kappa;
        // chi = -2 kappa on unit area -> distance kappa
        let chi = DVector::from_element(space.n_nodes(), -2.0 * kappa);
        assert!((dist_dr0(&space, &chi) - kappa).abs() < 1e-13);
        // anything above -kappa is in the stable set
        let chi = DVector::from_element(space.n_nodes(), -kappa + 0.3);
        assert_eq!(dist_dr0(&space, &chi), 0.0);
    }

    #[test]
    fn dist_dr0_matches_projected_gradient_oracle() {
        let (space, _) = setup();
        let kappa = space.material.toughness.kappa;
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let chi = DVector::from_iterator(
            space.n_nodes(),
            (0..space.n_nodes()).map(|_| rng.gen_range(-0.5..0.5)),
        );
        // minimize ||chi - gamma||_{L2,mass}^2 over gamma >= -kappa
        let mut gamma: DVector<f64> = DVector::zeros(space.n_nodes());
        for _ in 0..20_000 {
            for i in 0..gamma.len() {
                let g = 2.0 * space.mass_z[i] * (gamma[i] - chi[i]);
                gamma[i] = (gamma[i] - 0.5 * g / space.mass_z[i]).max(-kappa);
            }
        }
        let dist_opt = chi
            .iter()
            .zip(gamma.iter())
            .zip(space.mass_z.iter())
            .map(|((c, g), m)| m * (c - g) * (c - g))
            .sum::<f64>()
            .sqrt();
        assert!((dist_opt - dist_dr0(&space, &chi)).abs() < 1e-8);
    }

    #[test]
    fn dist_dh0_cases() {
        let (space, _) = setup();
        let z = DVector::from_element(space.n_nodes(), 0.0); // r = 1
        // inside everywhere
        let inside = vec![Dev2 { d: 0.3, m: 0.1 }; space.n_cells()];
        assert_eq!(dist_dh0(&space, &z, &inside), 0.0);
        // one cell at |s| = 3 against r = 1: area-weighted distance 2
        let mut s = vec![Dev2::ZERO; space.n_cells()];
        s[5] = Dev2 { d: 3.0 / 2.0f64.sqrt(), m: 0.0 };
        let expect = (space.cell_area() * 4.0).sqrt();
        assert!((dist_dh0(&space, &z, &s) - expect).abs() < 1e-13);
    }

    #[test]
    fn dist_dh0_matches_sup_formulation() {
        // sup over ||eta||_{L2} <= 1 of <s, eta> - H(z, eta), by projected
        // ascent over the per-cell direction structure
        let (space, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let z = DVector::from_iterator(
            space.n_nodes(),
            (0..space.n_nodes()).map(|_| rng.gen_range(0.2..1.0)),
        );
        let s: Vec<Dev2> = (0..space.n_cells())
            .map(|_| Dev2 { d: rng.gen_range(-2.0..2.0), m: rng.gen_range(-2.0..2.0) })
            .collect();
        // For fixed per-cell magnitudes the pairing is maximized by
        // aligning eta with s, so ascend over the aligned magnitudes
        // inside the L2 ball, trying geometrically growing steps along
        // the supergradient (exact in the limit for this objective).
        let area = space.cell_area();
        let radii: Vec<f64> = (0..space.n_cells())
            .map(|c| space.material.constraint.radius(space.cell_average(&z, c)))
            .collect();
        let value = |eta: &[Dev2]| -> f64 {
            eta.iter()
                .enumerate()
                .map(|(c, e)| area * (s[c].inner(e) - radii[c] * e.norm()))
                .sum()
        };
        let gains: Vec<f64> = (0..space.n_cells())
            .map(|c| s[c].norm() - radii[c])
            .collect();
        let project = |beta: &[f64]| -> Vec<f64> {
            let clipped: Vec<f64> = beta.iter().map(|b| b.max(0.0)).collect();
            let n = clipped.iter().map(|b| area * b * b).sum::<f64>().sqrt();
            if n > 1.0 {
                clipped.iter().map(|b| b / n).collect()
            } else {
                clipped
            }
        };
        let to_eta = |beta: &[f64]| -> Vec<Dev2> {
            beta.iter()
                .enumerate()
                .map(|(c, b)| s[c].unit().map(|u| *b * u).unwrap_or(Dev2::ZERO))
                .collect()
        };
        let mut best = 0.0f64;
        for k in 0..80 {
            let step = 2.0f64.powi(k - 20);
            let beta: Vec<f64> = gains.iter().map(|g| step * g).collect();
            best = best.max(value(&to_eta(&project(&beta))));
        }
        let exact = dist_dh0(&space, &z, &s);
        assert!(
            (best - exact).abs() < 1e-6 * (1.0 + best),
            "ascent {best:.12} vs closed form {exact:.12}"
        );
        // no random feasible direction may beat the closed form
        for _ in 0..2000 {
            let raw: Vec<Dev2> = (0..space.n_cells())
                .map(|_| Dev2 { d: rng.gen_range(-1.0..1.0), m: rng.gen_range(-1.0..1.0) })
                .collect();
            let n = raw.iter().map(|e| area * e.inner(e)).sum::<f64>().sqrt();
            let eta: Vec<Dev2> = raw.iter().map(|e| (1.0 / n.max(1.0)) * *e).collect();
            assert!(value(&eta) <= exact + 1e-9);
        }
    }

    #[test]
    fn dist_dh0_nonexpansive() {
        let (space, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let z = DVector::from_element(space.n_nodes(), 0.6);
        for _ in 0..200 {
            let a: Vec<Dev2> = (0..space.n_cells())
                .map(|_| Dev2 { d: rng.gen_range(-2.0..2.0), m: rng.gen_range(-2.0..2.0) })
                .collect();
            let b: Vec<Dev2> = (0..space.n_cells())
                .map(|_| Dev2 { d: rng.gen_range(-2.0..2.0), m: rng.gen_range(-2.0..2.0) })
                .collect();
            let diff: Vec<Dev2> = a.iter().zip(&b).map(|(x, y)| *x - *y).collect();
            let lhs = (dist_dh0(&space, &z, &a) - dist_dh0(&space, &z, &b)).abs();
            assert!(lhs <= space.norm_l2_p(&diff) + 1e-12);
        }
    }

    #[test]
    fn stable_set_elements_support_the_dissipation() {
        // gamma >= -kappa implies R(v) >= <gamma, v> for unidirectional v
        let (space, _) = setup();
        let kappa = space.material.toughness.kappa;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let gamma = DVector::from_iterator(
                space.n_nodes(),
                (0..space.n_nodes()).map(|_| rng.gen_range(-kappa..3.0 * kappa)),
            );
            let v = DVector::from_iterator(
                space.n_nodes(),
                (0..space.n_nodes()).map(|_| -rng.gen_range(0.0f64..1.0)),
            );
            let r = cal_r(&space, &v, 1e-10).finite().unwrap();
            let pairing: f64 = gamma
                .iter()
                .zip(v.iter())
                .zip(space.mass_z.iter())
                .map(|((g, vi), m)| m * g * vi)
                .sum();
            assert!(r >= pairing - 1e-12);
        }
    }

    #[test]
    fn slope_aggregates_recompose() {
        let (space, loading) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let st = random_state(&space, &mut rng);
        let t = 0.5;
        let mu = 0.05;
        let nu = 0.25;
        let c = slope_components(&space, &loading, t, &st, mu).unwrap();
        let agg = slope_dstar_mu_nu(&space, &loading, t, &st, mu, nu).unwrap();
        let by_hand = (c.u * c.u / nu + c.z * c.z + c.p * c.p / nu).sqrt();
        assert!((agg - by_hand).abs() < 1e-13);
        let d0 = slope_dstar0(&space, &loading, t, &st);
        let su = surrogate_su(&space, &loading, t, &st);
        let wp = surrogate_wp(&space, &loading, t, &st);
        assert!((d0 - su.hypot(wp)).abs() < 1e-13);
    }

    #[test]
    fn pure_u_residual_single_term() {
        // z = 1 everywhere makes the damage slope vanish (W'(1) = 0 and
        // the degradation derivative is zero there); with small strains
        // the stress stays inside K, so only the u term survives.
        let cfg = reference_config();
        let space = cfg.build_space().unwrap();
        let mut loading = cfg.build_loading(&space).unwrap();
        loading.w0 *= 0.05;
        let st = State::zeros(&space, 1.0);
        let t = 0.5;
        let nu = 0.3;
        let mu = 0.05;
        let c = slope_components(&space, &loading, t, &st, mu).unwrap();
        assert_eq!(c.z, 0.0);
        assert_eq!(c.p, 0.0);
        assert!(c.u > 0.0);
        let agg = slope_dstar_mu_nu(&space, &loading, t, &st, mu, nu).unwrap();
        assert!((agg - c.u / nu.sqrt()).abs() < 1e-13);

        // equilibrium + stability + z-stationarity gives zero slope
        let unloaded = LoadingProgram::zero(&space, 1.0);
        let agg0 = slope_dstar_mu_nu(&space, &unloaded, t, &st, mu, nu).unwrap();
        assert_eq!(agg0, 0.0);
    }

    #[test]
    fn fenchel_gap_nonnegative_on_random_data() {
        let (space, loading) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let t = 0.5;
        let (eps, mu, nu) = (0.1, 0.05, 0.05);
        for _ in 0..500 {
            let st = random_state(&space, &mut rng);
            let udot = space.scatter_free(&DVector::from_iterator(
                space.n_free(),
                (0..space.n_free()).map(|_| rng.gen_range(-1.0..1.0)),
            ));
            let zdot = DVector::from_iterator(
                space.n_nodes(),
                (0..space.n_nodes()).map(|_| -rng.gen_range(0.0f64..1.0)),
            );
            let pdot: Vec<Dev2> = (0..space.n_cells())
                .map(|_| Dev2 { d: rng.gen_range(-1.0..1.0), m: rng.gen_range(-1.0..1.0) })
                .collect();
            let gap = fenchel_dual_gap(
                &space, &loading, t, &st.z.clone(), &st, &udot, &zdot, &pdot, eps, mu, nu, 1e-10,
            )
            .unwrap();
            assert!(gap.finite().unwrap() >= -1e-10);
        }
    }

    #[test]
    fn fenchel_gap_zero_at_resolvent() {
        let (space, loading) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let t = 0.4;
        let (eps, mu, nu) = (0.2, 0.1, 0.1);
        for _ in 0..20 {
            let st = random_state(&space, &mut rng);
            let xi_u = energy::grad_u(&space, &loading, t, &st);
            let xi_z = energy::grad_z_density(&space, &loading, t, &st).unwrap();
            let xi_p = energy::grad_p(&space, &loading, t, &st, mu);
            let (udot, zdot, pdot) =
                resolvent_rates(&space, &st.z, &xi_u, &xi_z, &xi_p, eps, nu);
            let gap = fenchel_dual_gap(
                &space, &loading, t, &st.z.clone(), &st, &udot, &zdot, &pdot, eps, mu, nu, 1e-10,
            )
            .unwrap()
            .finite()
            .unwrap();
            assert!(gap.abs() < 1e-9, "gap = {gap}");
        }
    }

    #[test]
    fn psi_scaling_identity() {
        let (space, _) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let z = DVector::from_element(space.n_nodes(), 0.8);
        let eps = 0.37;
        let nu = 0.21;
        for _ in 0..50 {
            let udot = space.scatter_free(&DVector::from_iterator(
                space.n_free(),
                (0..space.n_free()).map(|_| rng.gen_range(-1.0..1.0)),
            ));
            let zdot = DVector::from_iterator(
                space.n_nodes(),
                (0..space.n_nodes()).map(|_| -rng.gen_range(0.0f64..1.0)),
            );
            let pdot: Vec<Dev2> = (0..space.n_cells())
                .map(|_| Dev2 { d: rng.gen_range(-1.0..1.0), m: rng.gen_range(-1.0..1.0) })
                .collect();
            // Psi_eps(q, q') = (1/eps) Psi_1(q, eps q')
            let lhs = psi_eps_nu(&space, &z, &udot, &zdot, &pdot, eps, nu, 1e-10)
                .finite()
                .unwrap();
            let scaled_u = eps * &udot;
            let scaled_z = eps * &zdot;
            let scaled_p: Vec<Dev2> = pdot.iter().map(|p| eps * *p).collect();
            let rhs = psi_eps_nu(&space, &z, &scaled_u, &scaled_z, &scaled_p, 1.0, nu, 1e-10)
                .finite()
                .unwrap()
                / eps;
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
