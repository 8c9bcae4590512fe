//! Small tensor types for plane-strain kinematics.
//!
//! Symmetric 2x2 matrices are stored as `(xx, yy, xy)`; trace-free
//! (deviatoric) symmetric matrices as `(d, m)`, representing
//! `[[d, m], [m, -d]]`. All inner products are Frobenius products of the
//! full matrices, so the off-diagonal component carries a factor of two.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Symmetric 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

/// Deviatoric (trace-free symmetric) 2x2 matrix `[[d, m], [m, -d]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dev2 {
    pub d: f64,
    pub m: f64,
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, yy: 0.0, xy: 0.0 };

    pub fn identity() -> Sym2 {
        Sym2 { xx: 1.0, yy: 1.0, xy: 0.0 }
    }

    pub fn diag(a: f64, b: f64) -> Sym2 {
        Sym2 { xx: a, yy: b, xy: 0.0 }
    }

    /// Frobenius inner product `A : B`.
    pub fn inner(&self, other: &Sym2) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Orthogonal projection onto trace-free matrices.
    pub fn dev(&self) -> Dev2 {
        Dev2 { d: 0.5 * (self.xx - self.yy), m: self.xy }
    }
}

impl Dev2 {
    pub const ZERO: Dev2 = Dev2 { d: 0.0, m: 0.0 };

    /// Frobenius inner product of the embedded matrices.
    pub fn inner(&self, other: &Dev2) -> f64 {
        2.0 * (self.d * other.d + self.m * other.m)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Embed back into the symmetric representation.
    pub fn to_sym(&self) -> Sym2 {
        Sym2 { xx: self.d, yy: -self.d, xy: self.m }
    }

    /// Inner product with a full symmetric matrix; only its deviatoric
    /// part contributes.
    pub fn inner_sym(&self, other: &Sym2) -> f64 {
        self.inner(&other.dev())
    }

    /// Unit-norm direction, or `None` at the origin.
    pub fn unit(&self) -> Option<Dev2> {
        let n = self.norm();
        if n == 0.0 {
            None
        } else {
            Some(Dev2 { d: self.d / n, m: self.m / n })
        }
    }
}

macro_rules! impl_linear {
    ($t:ident, $($f:ident),+) => {
        impl Add for $t {
            type Output = $t;
            fn add(self, o: $t) -> $t {
                Self { $($f: self.$f + o.$f),+ }
            }
        }
        impl Sub for $t {
            type Output = $t;
            fn sub(self, o: $t) -> $t {
                Self { $($f: self.$f - o.$f),+ }
            }
        }
        impl Neg for $t {
            type Output = $t;
            fn neg(self) -> $t {
                Self { $($f: -self.$f),+ }
            }
        }
        impl Mul<$t> for f64 {
            type Output = $t;
            fn mul(self, o: $t) -> $t {
                $t { $($f: self * o.$f),+ }
            }
        }
        impl AddAssign for $t {
            fn add_assign(&mut self, o: $t) {
                $(self.$f += o.$f;)+
            }
        }
    };
}

impl_linear!(Sym2, xx, yy, xy);
impl_linear!(Dev2, d, m);

impl Add<Sym2> for Dev2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        self.to_sym() + o
    }
}

impl Sub<Dev2> for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Dev2) -> Sym2 {
        self - o.to_sym()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dev_is_orthogonal_projection() {
        let a = Sym2 { xx: 3.0, yy: -1.0, xy: 0.5 };
        let d = a.dev();
        // idempotent and trace-free
        assert_eq!(d.to_sym().dev(), d);
        assert_eq!(d.to_sym().trace(), 0.0);
        // orthogonality: A : dev(A) = |dev(A)|^2
        assert!((a.inner(&d.to_sym()) - d.inner(&d)).abs() < 1e-14);
    }

    #[test]
    fn inner_products_match_embedding() {
        let p = Dev2 { d: 0.7, m: -0.3 };
        let q = Dev2 { d: -0.2, m: 1.1 };
        assert!((p.inner(&q) - p.to_sym().inner(&q.to_sym())).abs() < 1e-14);
    }

    #[test]
    fn sym_norm_of_identity() {
        assert!((Sym2::identity().norm() - 2.0f64.sqrt()).abs() < 1e-15);
    }
}
