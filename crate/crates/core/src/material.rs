//! Constitutive laws: damage-dependent elasticity, damage potential,
//! constraint sets for the deviatoric stress, viscosity, and toughness.
//!
//! The concrete choices here are one admissible instantiation of the
//! abstract hypotheses the model is built on (degradation profile,
//! damage potential, constraint family); they are the simplest laws with
//! closed-form derivatives, support functions and projections.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::tensor::{Dev2, Sym2};

/// Cubic Hermite step clipped to [0, 1]: `s(z) = 3z^2 - 2z^3` on (0, 1),
/// constant outside. `C^{1,1}` with `s'(0) = s'(1) = 0`.
pub fn hermite_step(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else if z >= 1.0 {
        1.0
    } else {
        z * z * (3.0 - 2.0 * z)
    }
}

pub fn hermite_step_deriv(z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        0.0
    } else {
        6.0 * z * (1.0 - z)
    }
}

pub fn hermite_step_second_deriv(z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        0.0
    } else {
        6.0 - 12.0 * z
    }
}

/// Damage-dependent elastic tensor `C(z) = (gamma1 + (gamma2-gamma1) s(z)) * C_ref`
/// with `C_ref` the identity action on symmetric matrices.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ElasticLaw {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl ElasticLaw {
    /// Scalar stiffness factor `gamma1 + (gamma2 - gamma1) s(z)`.
    pub fn factor(&self, z: f64) -> f64 {
        self.gamma1 + (self.gamma2 - self.gamma1) * hermite_step(z)
    }

    /// `d/dz` of the stiffness factor.
    pub fn factor_deriv(&self, z: f64) -> f64 {
        (self.gamma2 - self.gamma1) * hermite_step_deriv(z)
    }

    /// `C(z) xi`.
    pub fn apply(&self, z: f64, xi: &Sym2) -> Sym2 {
        self.factor(z) * *xi
    }

    /// `C'(z) xi`.
    pub fn derivative(&self, z: f64, xi: &Sym2) -> Sym2 {
        self.factor_deriv(z) * *xi
    }
}

/// Damage potential `W(z) = c_w (z^{-q} - 1 + q (z - 1))`, convex with
/// minimum 0 at `z = 1` and blowing up as `z -> 0+`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DamagePotential {
    pub c_w: f64,
    pub q_exp: f64,
}

impl DamagePotential {
    pub fn value(&self, z: f64) -> Result<f64, CoreError> {
        if z <= 0.0 {
            return Err(CoreError::DamageOutOfDomain { z });
        }
        Ok(self.c_w * (z.powf(-self.q_exp) - 1.0 + self.q_exp * (z - 1.0)))
    }

    pub fn deriv(&self, z: f64) -> Result<f64, CoreError> {
        if z <= 0.0 {
            return Err(CoreError::DamageOutOfDomain { z });
        }
        Ok(self.c_w * self.q_exp * (1.0 - z.powf(-self.q_exp - 1.0)))
    }

    pub fn second_deriv(&self, z: f64) -> Result<f64, CoreError> {
        if z <= 0.0 {
            return Err(CoreError::DamageOutOfDomain { z });
        }
        Ok(self.c_w * self.q_exp * (self.q_exp + 1.0) * z.powf(-self.q_exp - 2.0))
    }
}

/// Family of admissible deviatoric stress sets: balls of radius
/// `r(z) = r_bar + (R_bar - r_bar) clip(z, 0, 1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstraintFamily {
    pub r_bar: f64,
    pub big_r_bar: f64,
}

impl ConstraintFamily {
    pub fn radius(&self, z: f64) -> f64 {
        self.r_bar + (self.big_r_bar - self.r_bar) * z.clamp(0.0, 1.0)
    }

    /// Hausdorff Lipschitz constant of the family.
    pub fn lipschitz(&self) -> f64 {
        self.big_r_bar - self.r_bar
    }

    /// Support function `H(z, pi) = sup_{sigma in K(z)} sigma : pi = r(z) |pi|`.
    pub fn support(&self, z: f64, pi: &Dev2) -> f64 {
        self.radius(z) * pi.norm()
    }

    /// Euclidean projection onto `K(z)`.
    pub fn project(&self, z: f64, sigma: &Dev2) -> Dev2 {
        let r = self.radius(z);
        let n = sigma.norm();
        if n <= r {
            *sigma
        } else {
            (r / n) * *sigma
        }
    }

    /// Distance to `K(z)`.
    pub fn dist(&self, z: f64, sigma: &Dev2) -> f64 {
        (sigma.norm() - self.radius(z)).max(0.0)
    }
}

/// Constant isotropic viscosity tensor `D = delta * Id`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ViscosityTensor {
    pub delta: f64,
}

impl ViscosityTensor {
    pub fn apply(&self, a: &Sym2) -> Sym2 {
        self.delta * *a
    }
}

/// Unidirectional damage dissipation density
/// `R(zeta) = -kappa zeta` for `zeta <= 0`, `+inf` otherwise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DamageDissipation {
    pub kappa: f64,
}

/// Aggregate of all constitutive data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MaterialModel {
    pub elastic: ElasticLaw,
    pub damage: DamagePotential,
    pub constraint: ConstraintFamily,
    pub viscosity: ViscosityTensor,
    pub toughness: DamageDissipation,
    /// Exponent of the nonlocal gradient form, `m > n/2 = 1`.
    pub m_exp: f64,
}

impl MaterialModel {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.elastic.gamma1 <= 0.0 || self.elastic.gamma2 < self.elastic.gamma1 {
            return Err(CoreError::InvalidParameter(
                "elastic bounds must satisfy 0 < gamma1 <= gamma2".into(),
            ));
        }
        if self.damage.c_w <= 0.0 {
            return Err(CoreError::InvalidParameter("c_w must be positive".into()));
        }
        if self.damage.q_exp <= 4.0 {
            return Err(CoreError::InvalidParameter(
                "q_exp must exceed 2n = 4 for the blow-up condition".into(),
            ));
        }
        if self.constraint.r_bar <= 0.0 || self.constraint.big_r_bar <= self.constraint.r_bar {
            return Err(CoreError::InvalidParameter(
                "constraint radii must satisfy 0 < r_bar < R_bar".into(),
            ));
        }
        if self.viscosity.delta <= 0.0 {
            return Err(CoreError::InvalidParameter("delta must be positive".into()));
        }
        if self.toughness.kappa <= 0.0 {
            return Err(CoreError::InvalidParameter("kappa must be positive".into()));
        }
        if self.m_exp <= 1.0 {
            return Err(CoreError::InvalidParameter(
                "m_exp must exceed n/2 = 1".into(),
            ));
        }
        Ok(())
    }
}

/// Assembles the nonlocal gradient matrix from cell-center data.
///
/// The bilinear form pairs gradient differences between cell centers with
/// the kernel `|x - y|^{-(n + 2(m-1))}`, discretized by a midpoint
/// double sum over distinct cell pairs (self-pairs excluded). `grad_op`
/// maps nodal values to per-cell gradients: row `2c` is `d/dx` at the
/// center of cell `c`, row `2c + 1` is `d/dy`.
pub fn assemble_am(
    centers: &[(f64, f64)],
    areas: &[f64],
    grad_op: &DMatrix<f64>,
    m_exp: f64,
) -> Result<DMatrix<f64>, CoreError> {
    if m_exp <= 1.0 {
        return Err(CoreError::InvalidParameter(
            "m_exp must exceed n/2 = 1".into(),
        ));
    }
    let n_cells = centers.len();
    let n_nodes = grad_op.ncols();
    assert_eq!(grad_op.nrows(), 2 * n_cells);
    assert_eq!(areas.len(), n_cells);

    let exponent = 2.0 + 2.0 * (m_exp - 1.0);
    let mut a = DMatrix::zeros(n_nodes, n_nodes);
    let mut diff = nalgebra::DVector::<f64>::zeros(n_nodes);
    for c1 in 0..n_cells {
        for c2 in (c1 + 1)..n_cells {
            let dx = centers[c1].0 - centers[c2].0;
            let dy = centers[c1].1 - centers[c2].1;
            let dist2 = dx * dx + dy * dy;
            // ordered pairs counted twice in the double integral
            let w = 2.0 * areas[c1] * areas[c2] / dist2.powf(exponent / 2.0);
            for comp in 0..2 {
                let r1 = grad_op.row(2 * c1 + comp);
                let r2 = grad_op.row(2 * c2 + comp);
                for j in 0..n_nodes {
                    diff[j] = r1[j] - r2[j];
                }
                for i in 0..n_nodes {
                    if diff[i] == 0.0 {
                        continue;
                    }
                    let wi = w * diff[i];
                    for j in 0..n_nodes {
                        a[(i, j)] += wi * diff[j];
                    }
                }
            }
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_elastic() -> ElasticLaw {
        ElasticLaw { gamma1: 1.0, gamma2: 2.0 }
    }

    #[test]
    fn elastic_endpoints() {
        let c = default_elastic();
        // s(0) = 0: lower bound, identity on xi
        let xi = Sym2::identity();
        let out = c.apply(0.0, &xi);
        assert_eq!(out, xi);
        // s(z >= 1) = 1: upper bound
        let xi = Sym2 { xx: 0.3, yy: -1.2, xy: 0.7 };
        let out = c.apply(1.7, &xi);
        assert_eq!(out, 2.0 * xi);
    }

    #[test]
    fn elastic_midpoint_hermite() {
        let c = default_elastic();
        // s(1/2) = 1/2 for the cubic Hermite profile
        let xi = Sym2::diag(1.0, -1.0);
        let out = c.apply(0.5, &xi);
        assert!((out.xx - 1.5).abs() < 1e-15);
        assert!((out.yy + 1.5).abs() < 1e-15);
        // s'(1/2) = 3/2
        let d = c.derivative(0.5, &Sym2::identity());
        assert!((d.xx - 1.5).abs() < 1e-15);
    }

    #[test]
    fn elastic_derivative_vanishes_outside_transition() {
        let c = default_elastic();
        let xi = Sym2 { xx: 1.0, yy: 2.0, xy: 3.0 };
        assert_eq!(c.derivative(-0.5, &xi), Sym2::ZERO);
        assert_eq!(c.derivative(3.0, &xi), Sym2::ZERO);
    }

    #[test]
    fn elastic_derivative_matches_finite_differences() {
        let c = default_elastic();
        let xi = Sym2 { xx: 0.4, yy: -0.9, xy: 0.25 };
        let h = 1e-5;
        for &z in &[0.1, 0.3, 0.5, 0.8, 0.95] {
            let fd = (1.0 / (2.0 * h)) * (c.apply(z + h, &xi) - c.apply(z - h, &xi));
            let an = c.derivative(z, &xi);
            assert!((fd - an).norm() <= 1e-6, "z = {z}");
        }
    }

    #[test]
    fn damage_potential_values() {
        let w = DamagePotential { c_w: 1.0, q_exp: 5.0 };
        assert_eq!(w.value(1.0).unwrap(), 0.0);
        assert_eq!(w.deriv(1.0).unwrap(), 0.0);
        // 2^5 - 1 + 5 (0.5 - 1) = 28.5
        assert!((w.value(0.5).unwrap() - 28.5).abs() < 1e-12);
        assert!(w.value(0.0).is_err());
        assert!(w.value(-1.0).is_err());
    }

    #[test]
    fn damage_potential_convex_and_blowing_up() {
        let w = DamagePotential { c_w: 1.0, q_exp: 5.0 };
        let mut z = 0.01;
        while z < 10.0 {
            assert!(w.second_deriv(z).unwrap() > 0.0);
            z *= 1.37;
        }
        // s^{2n} W(s) grows without bound as s -> 0+
        let mut prev = 0.0;
        for k in 1..14 {
            let s = 2.0f64.powi(-k);
            let v = s.powi(4) * w.value(s).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(prev > 1e3);
    }

    #[test]
    fn support_function_of_ball() {
        let k = ConstraintFamily { r_bar: 1.0, big_r_bar: 2.0 };
        assert_eq!(k.support(0.3, &Dev2::ZERO), 0.0);
        // r(0.5) = 1.5, |pi| = 2
        let pi = Dev2 { d: 2.0f64.sqrt(), m: 0.0 };
        assert!((pi.norm() - 2.0).abs() < 1e-15);
        assert!((k.support(0.5, &pi) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn support_dominates_random_feasible_stresses() {
        let k = ConstraintFamily { r_bar: 1.0, big_r_bar: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let z = 0.7;
        let r = k.radius(z);
        let pi = Dev2 { d: -0.4, m: 1.1 };
        let h = k.support(z, &pi);
        for _ in 0..10_000 {
            let raw = Dev2 { d: rng.gen_range(-1.0..1.0), m: rng.gen_range(-1.0..1.0) };
            let scale = rng.gen_range(0.0..1.0) * r / raw.norm().max(1e-12);
            let sigma = scale * raw;
            assert!(sigma.inner(&pi) <= h + 1e-12);
        }
        // equality attained at sigma = r(z) pi / |pi|
        let sigma_star = (r / pi.norm()) * pi;
        assert!((sigma_star.inner(&pi) - h).abs() < 1e-12);
    }

    #[test]
    fn projection_and_distance() {
        let k = ConstraintFamily { r_bar: 1.0, big_r_bar: 2.0 };
        // z = 0 has radius 1
        let inside = Dev2 { d: 0.3, m: 0.2 };
        assert_eq!(k.dist(0.0, &inside), 0.0);
        assert_eq!(k.project(0.0, &inside), inside);
        let sigma = Dev2 { d: 3.0 / 2.0f64.sqrt(), m: 0.0 };
        assert!((sigma.norm() - 3.0).abs() < 1e-14);
        assert!((k.dist(0.0, &sigma) - 2.0).abs() < 1e-14);
        let proj = k.project(0.0, &sigma);
        assert!((proj - (1.0 / 3.0) * sigma).norm() < 1e-14);
    }

    #[test]
    fn distance_matches_monte_carlo_oracle() {
        let k = ConstraintFamily { r_bar: 1.0, big_r_bar: 2.0 };
        let z = 0.4;
        let r = k.radius(z);
        let sigma = Dev2 { d: 1.9, m: -0.8 };
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
        let mut best = f64::INFINITY;
        for _ in 0..100_000 {
            let raw = Dev2 { d: rng.gen_range(-1.0..1.0), m: rng.gen_range(-1.0..1.0) };
            let n = raw.norm();
            if n > 1e-12 {
                let s = rng.gen_range(0.0f64..1.0).sqrt() * r / n;
                best = best.min((sigma - s * raw).norm());
            }
        }
        assert!((best - k.dist(z, &sigma)).abs() < 1e-2);
    }

    #[test]
    fn hausdorff_bound_exact_for_ball_family() {
        let k = ConstraintFamily { r_bar: 1.0, big_r_bar: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let z1: f64 = rng.gen_range(0.0..3.0);
            let z2: f64 = rng.gen_range(0.0..3.0);
            let dh = (k.radius(z1) - k.radius(z2)).abs();
            assert!(dh <= k.lipschitz() * (z1 - z2).abs() + 1e-14);
        }
    }

    proptest! {
        #[test]
        fn support_is_one_homogeneous_and_subadditive(
            z in 0.0f64..2.0,
            a in 0.0f64..5.0,
            d1 in -2.0f64..2.0, m1 in -2.0f64..2.0,
            d2 in -2.0f64..2.0, m2 in -2.0f64..2.0,
        ) {
            let k = ConstraintFamily { r_bar: 1.0, big_r_bar: 2.0 };
            let p1 = Dev2 { d: d1, m: m1 };
            let p2 = Dev2 { d: d2, m: m2 };
            prop_assert!((k.support(z, &(a * p1)) - a * k.support(z, &p1)).abs() < 1e-10);
            prop_assert!(k.support(z, &(p1 + p2)) <= k.support(z, &p1) + k.support(z, &p2) + 1e-12);
        }

        #[test]
        fn support_family_is_lipschitz_in_z(
            z1 in 0.0f64..2.0, z2 in 0.0f64..2.0,
            d in -2.0f64..2.0, m in -2.0f64..2.0,
        ) {
            let k = ConstraintFamily { r_bar: 1.0, big_r_bar: 2.0 };
            let pi = Dev2 { d, m };
            let lhs = (k.support(z1, &pi) - k.support(z2, &pi)).abs();
            prop_assert!(lhs <= k.lipschitz() * (z1 - z2).abs() * pi.norm() + 1e-12);
        }
    }
}
