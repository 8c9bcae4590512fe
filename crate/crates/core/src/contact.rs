//! Vanishing-viscosity contact potentials with graded indicator
//! handling.
//!
//! The limiting functionals contain exact indicator terms; discrete
//! trajectories never satisfy them exactly, so every indicator is
//! replaced by a named violation with a magnitude and the finite part is
//! reported separately. Classification uses two tolerances: `eq` for
//! equilibrium/stability quantities and `rate` for normalized rates.

use serde::{Deserialize, Serialize};

use crate::dissipation::ExtValue;
use crate::error::CoreError;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerances {
    pub eq: f64,
    pub rate: f64,
}

impl Tolerances {
    pub fn scaled(&self, factor: f64) -> Tolerances {
        Tolerances { eq: self.eq * factor, rate: self.rate * factor }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    RateIndependent,
    ViscousZ,
    ViscousUp,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// Positive damage rate against the unidirectional constraint.
    Unidirectionality,
    /// `D^*(t, q) > 0` where the functional demands exact stationarity.
    DstarPositive,
    /// Equilibrium residual positive while the loading time advances.
    EquilibriumAtFlow,
    /// Stress outside the admissible set while the loading time advances.
    StabilityAtFlow,
    /// Damage slope outside the stable set while the loading time advances.
    DamageStationarityAtFlow,
    /// Jump regime with both a damage rate and a positive `(u, p)` slope.
    MixedBranch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub magnitude: f64,
}

/// Finite part plus graded violations of one contact-potential
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactValue {
    pub finite_part: f64,
    pub violations: Vec<Violation>,
    pub regime: Regime,
}

impl ContactValue {
    pub fn max_violation(&self) -> f64 {
        self.violations
            .iter()
            .map(|v| v.magnitude)
            .fold(0.0, f64::max)
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Scalar data of one trajectory sample feeding the contact potentials.
#[derive(Debug, Clone, Copy)]
pub struct ContactInputs {
    pub tprime: f64,
    /// `|z'|_{L2}`.
    pub znorm: f64,
    /// `D(u', p') = sqrt(|u'|_{H1,D}^2 + |p'|_{L2}^2)`.
    pub d_up: f64,
    /// `D_nu(q')` for the single-rate functional.
    pub d_nu: f64,
    /// Damage dissipation of the rate (may be infinite).
    pub calr: ExtValue,
    /// Plastic dissipation of the rate.
    pub calh: f64,
    /// Equilibrium surrogate (independent of the hardening weight).
    pub su: f64,
    /// Stress distance from the admissible set at zero hardening.
    pub wp: f64,
    /// Distance of the damage slope from its stable set.
    pub dtilde: f64,
    /// Stress distance with the hardening term included.
    pub wp_mu: f64,
    /// Nu-weighted dual slope including the damage component.
    pub dstar_nu_mu: f64,
}

impl ContactInputs {
    pub fn dstar0(&self) -> f64 {
        self.su.hypot(self.wp)
    }

    pub fn dstar_mu(&self) -> f64 {
        self.su.hypot(self.wp_mu)
    }

    pub fn regime(&self, tol: &Tolerances) -> Regime {
        if self.tprime > tol.rate {
            Regime::RateIndependent
        } else if self.znorm <= tol.rate && self.d_up <= tol.rate {
            Regime::Static
        } else if self.znorm <= tol.rate {
            Regime::ViscousUp
        } else {
            Regime::ViscousZ
        }
    }

    fn base(&self, tol: &Tolerances) -> (f64, Vec<Violation>) {
        let mut violations = Vec::new();
        let finite = match self.calr {
            ExtValue::Finite(v) => v,
            ExtValue::Infinite { violation } => {
                violations.push(Violation {
                    kind: ViolationKind::Unidirectionality,
                    magnitude: violation,
                });
                0.0
            }
        };
        let _ = tol;
        (finite + self.calh, violations)
    }
}

/// Viscous contact integrand
/// `R + H + (eps / 2 t') D_nu^2 + (t' / 2 eps) (D*_nu,mu)^2`.
pub fn m_eps(inputs: &ContactInputs, eps: f64) -> Result<ExtValue, CoreError> {
    if inputs.tprime <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "viscous contact integrand requires t' > 0".into(),
        ));
    }
    let r = match inputs.calr {
        ExtValue::Finite(v) => v,
        inf => return Ok(inf),
    };
    Ok(ExtValue::Finite(
        r + inputs.calh
            + 0.5 * eps / inputs.tprime * inputs.d_nu * inputs.d_nu
            + 0.5 * inputs.tprime / eps * inputs.dstar_nu_mu * inputs.dstar_nu_mu,
    ))
}

/// Contact potential of the partial vanishing-viscosity limit: viscosity
/// only in the damage variable, `D^*` required to vanish throughout.
pub fn m0_cl(inputs: &ContactInputs, tol: &Tolerances) -> ContactValue {
    let (mut finite, mut violations) = inputs.base(tol);
    let dstar = inputs.dstar0();
    if dstar > tol.eq {
        violations.push(Violation { kind: ViolationKind::DstarPositive, magnitude: dstar });
    }
    if inputs.tprime > tol.rate {
        if inputs.dtilde > tol.eq {
            violations.push(Violation {
                kind: ViolationKind::DamageStationarityAtFlow,
                magnitude: inputs.dtilde,
            });
        }
    } else {
        finite += inputs.znorm * inputs.dtilde;
    }
    ContactValue { finite_part: finite, violations, regime: inputs.regime(tol) }
}

fn flow_checks(
    violations: &mut Vec<Violation>,
    su: f64,
    dtilde: f64,
    wp: f64,
    tol: &Tolerances,
) {
    if su > tol.eq {
        violations.push(Violation { kind: ViolationKind::EquilibriumAtFlow, magnitude: su });
    }
    if dtilde > tol.eq {
        violations.push(Violation {
            kind: ViolationKind::DamageStationarityAtFlow,
            magnitude: dtilde,
        });
    }
    if wp > tol.eq {
        violations.push(Violation { kind: ViolationKind::StabilityAtFlow, magnitude: wp });
    }
}

fn jump_branches(
    finite: &mut f64,
    violations: &mut Vec<Violation>,
    inputs: &ContactInputs,
    dstar: f64,
    tol: &Tolerances,
) {
    if inputs.znorm <= tol.rate {
        *finite += inputs.d_up * dstar;
    } else if dstar <= tol.eq {
        *finite += inputs.znorm * inputs.dtilde;
    } else {
        violations.push(Violation {
            kind: ViolationKind::MixedBranch,
            magnitude: inputs.znorm.min(dstar),
        });
        *finite += inputs.d_up * dstar + inputs.znorm * inputs.dtilde;
    }
}

/// Contact potential of the full vanishing-viscosity limit at zero
/// hardening: viscous behavior in `(u, p)` at jumps when the damage is
/// frozen, in `z` when the `(u, p)` slope vanishes.
pub fn m0_cr(inputs: &ContactInputs, tol: &Tolerances) -> ContactValue {
    let (mut finite, mut violations) = inputs.base(tol);
    if inputs.tprime > tol.rate {
        flow_checks(&mut violations, inputs.su, inputs.dtilde, inputs.wp, tol);
    } else {
        let dstar = inputs.dstar0();
        jump_branches(&mut finite, &mut violations, inputs, dstar, tol);
    }
    ContactValue { finite_part: finite, violations, regime: inputs.regime(tol) }
}

/// Multi-rate contact potential at fixed hardening.
pub fn m0_mu0(inputs: &ContactInputs, tol: &Tolerances) -> ContactValue {
    let (mut finite, mut violations) = inputs.base(tol);
    if inputs.tprime > tol.rate {
        flow_checks(&mut violations, inputs.su, inputs.dtilde, inputs.wp_mu, tol);
    } else {
        let dstar = inputs.dstar_mu();
        jump_branches(&mut finite, &mut violations, inputs, dstar, tol);
    }
    ContactValue { finite_part: finite, violations, regime: inputs.regime(tol) }
}

/// Single-rate contact potential at fixed hardening: at jumps, the
/// nu-weighted product couples all three components without branching.
pub fn m0_munu(inputs: &ContactInputs, tol: &Tolerances) -> ContactValue {
    let (mut finite, mut violations) = inputs.base(tol);
    if inputs.tprime > tol.rate {
        flow_checks(&mut violations, inputs.su, inputs.dtilde, inputs.wp_mu, tol);
    } else {
        finite += inputs.d_nu * inputs.dstar_nu_mu;
    }
    ContactValue { finite_part: finite, violations, regime: inputs.regime(tol) }
}
