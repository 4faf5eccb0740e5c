//! Second-order forward-mode dual numbers.
//!
//! A [`Dual2`] carries a value, a gradient and a full Hessian over a fixed
//! 7-lane seed basis (three stator flux components, three rotor flux
//! components, rotor angle). Energy functions are written once, generically
//! over [`Scalar`], and evaluated either on plain `f64` or on `Dual2` to
//! obtain currents, torque and flux Hessians in a single sweep.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Number of independent differentiation lanes: φs (3), φr (3), θ (1).
pub const LANES: usize = 7;

/// Lane index of the rotor angle θ.
pub const THETA_LANE: usize = 6;

/// Lane index of stator flux component `k` (0..3).
pub fn stator_lane(k: usize) -> usize {
    debug_assert!(k < 3);
    k
}

/// Lane index of rotor flux component `k` (0..3).
pub fn rotor_lane(k: usize) -> usize {
    debug_assert!(k < 3);
    3 + k
}

/// Value, gradient and Hessian of an expression over the 7-lane basis.
///
/// The Hessian is stored densely and is symmetric bit-for-bit: every
/// arithmetic rule fills `hess[i][j]` and `hess[j][i]` with the same
/// floating-point operations in commuted order.
#[derive(Clone, Copy, Debug)]
pub struct Dual2 {
    pub val: f64,
    pub grad: [f64; LANES],
    pub hess: [[f64; LANES]; LANES],
}

impl Dual2 {
    /// A constant: zero gradient, zero Hessian.
    pub fn constant(x: f64) -> Self {
        Dual2 { val: x, grad: [0.0; LANES], hess: [[0.0; LANES]; LANES] }
    }

    /// An independent variable seeded on `lane`.
    pub fn variable(x: f64, lane: usize) -> Self {
        let mut d = Self::constant(x);
        d.grad[lane] = 1.0;
        d
    }

    /// A dependent quantity with prescribed first-order sensitivities and no
    /// second-order seed. Used when a coordinate is an implicit function of
    /// the seeded ones (constraint elimination).
    pub fn with_gradient(x: f64, grad: [f64; LANES]) -> Self {
        Dual2 { val: x, grad, hess: [[0.0; LANES]; LANES] }
    }

    /// Chain rule for a univariate map with value `v`, first derivative `d1`
    /// and second derivative `d2` at `self.val`.
    fn lift(&self, v: f64, d1: f64, d2: f64) -> Self {
        let mut out = Dual2::constant(v);
        for i in 0..LANES {
            out.grad[i] = d1 * self.grad[i];
        }
        for i in 0..LANES {
            for j in 0..LANES {
                out.hess[i][j] = d1 * self.hess[i][j] + d2 * self.grad[i] * self.grad[j];
            }
        }
        out
    }

    pub fn sin(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.lift(s, c, -s)
    }

    pub fn cos(self) -> Self {
        let (s, c) = self.val.sin_cos();
        self.lift(c, -s, -c)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.val;
        self.lift(r, -r * r, 2.0 * r * r * r)
    }

    /// Multiply by a plain scalar.
    pub fn scale(self, k: f64) -> Self {
        let mut out = self;
        out.val *= k;
        for i in 0..LANES {
            out.grad[i] *= k;
        }
        for i in 0..LANES {
            for j in 0..LANES {
                out.hess[i][j] *= k;
            }
        }
        out
    }
}

impl Add for Dual2 {
    type Output = Dual2;
    fn add(self, rhs: Dual2) -> Dual2 {
        let mut out = self;
        out.val += rhs.val;
        for i in 0..LANES {
            out.grad[i] += rhs.grad[i];
        }
        for i in 0..LANES {
            for j in 0..LANES {
                out.hess[i][j] += rhs.hess[i][j];
            }
        }
        out
    }
}

impl Sub for Dual2 {
    type Output = Dual2;
    fn sub(self, rhs: Dual2) -> Dual2 {
        let mut out = self;
        out.val -= rhs.val;
        for i in 0..LANES {
            out.grad[i] -= rhs.grad[i];
        }
        for i in 0..LANES {
            for j in 0..LANES {
                out.hess[i][j] -= rhs.hess[i][j];
            }
        }
        out
    }
}

impl Neg for Dual2 {
    type Output = Dual2;
    fn neg(self) -> Dual2 {
        self.scale(-1.0)
    }
}

impl Mul for Dual2 {
    type Output = Dual2;
    fn mul(self, rhs: Dual2) -> Dual2 {
        let mut out = Dual2::constant(self.val * rhs.val);
        for i in 0..LANES {
            out.grad[i] = self.grad[i] * rhs.val + self.val * rhs.grad[i];
        }
        for i in 0..LANES {
            for j in 0..LANES {
                out.hess[i][j] = self.hess[i][j] * rhs.val
                    + self.grad[i] * rhs.grad[j]
                    + self.grad[j] * rhs.grad[i]
                    + self.val * rhs.hess[i][j];
            }
        }
        out
    }
}

impl Div for Dual2 {
    type Output = Dual2;
    fn div(self, rhs: Dual2) -> Dual2 {
        self * rhs.recip()
    }
}

/// The numeric abstraction energy functions are written against.
///
/// Implemented by `f64` (plain evaluation) and [`Dual2`] (evaluation with
/// first and second derivatives).
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(x: f64) -> Self;
    fn value(&self) -> f64;
    fn scale(self, k: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    /// Integer power by repeated multiplication (exponents here are small).
    fn powi(self, n: u32) -> Self {
        let mut out = Self::constant(1.0);
        for _ in 0..n {
            out = out * self;
        }
        out
    }
}

impl Scalar for f64 {
    fn constant(x: f64) -> Self {
        x
    }
    fn value(&self) -> f64 {
        *self
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

impl Scalar for Dual2 {
    fn constant(x: f64) -> Self {
        Dual2::constant(x)
    }
    fn value(&self) -> f64 {
        self.val
    }
    fn scale(self, k: f64) -> Self {
        Dual2::scale(self, k)
    }
    fn sin(self) -> Self {
        Dual2::sin(self)
    }
    fn cos(self) -> Self {
        Dual2::cos(self)
    }
}
