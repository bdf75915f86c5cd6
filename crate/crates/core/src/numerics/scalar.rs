//! Scalar abstraction shared by the simulator.
//!
//! Everything downstream of the material parameters is generic over [`Scalar`]
//! so the same code path runs on plain `f64` and on [`Dual2`], which carries
//! two forward-mode tangents: one with respect to Young's modulus and one with
//! respect to Poisson's ratio.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Number of tangent directions carried by [`Dual2`].
pub const NUM_TANGENTS: usize = 2;

/// A real-like value the simulator can be instantiated with.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// How many tangent channels the type carries (0 for `f64`).
    const TANGENTS: usize;

    /// A constant (all tangents zero).
    fn cst(v: f64) -> Self;
    fn primal(self) -> f64;
    /// Tangent channel `k`; zero for channels the type does not carry.
    fn tangent(self, k: usize) -> f64;
    /// Rebuild a value from its primal and tangent channels.
    fn from_parts(v: f64, tangents: [f64; NUM_TANGENTS]) -> Self;

    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    #[inline]
    fn zero() -> Self {
        Self::cst(0.0)
    }

    #[inline]
    fn one() -> Self {
        Self::cst(1.0)
    }

    #[inline]
    fn abs(self) -> Self {
        if self.primal() < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Selects one operand; the tangent follows the selected branch.
    #[inline]
    fn min(self, other: Self) -> Self {
        if other.primal() < self.primal() {
            other
        } else {
            self
        }
    }

    #[inline]
    fn max(self, other: Self) -> Self {
        if other.primal() > self.primal() {
            other
        } else {
            self
        }
    }

    #[inline]
    fn clamp(self, lo: f64, hi: f64) -> Self {
        if self.primal() < lo {
            Self::cst(lo)
        } else if self.primal() > hi {
            Self::cst(hi)
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    const TANGENTS: usize = 0;

    #[inline]
    fn cst(v: f64) -> Self {
        v
    }

    #[inline]
    fn primal(self) -> f64 {
        self
    }

    #[inline]
    fn tangent(self, _k: usize) -> f64 {
        0.0
    }

    #[inline]
    fn from_parts(v: f64, _tangents: [f64; NUM_TANGENTS]) -> Self {
        v
    }

    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Forward-mode dual number with two tangents.
///
/// `d_e` is the derivative with respect to Young's modulus and `d_nu` with
/// respect to Poisson's ratio when the material is seeded with
/// [`Dual2::seed_e`] / [`Dual2::seed_nu`].
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Dual2 {
    pub val: f64,
    pub d_e: f64,
    pub d_nu: f64,
}

impl Dual2 {
    #[inline]
    pub const fn new(val: f64, d_e: f64, d_nu: f64) -> Self {
        Self { val, d_e, d_nu }
    }

    /// Independent variable along the Young's-modulus direction.
    pub const fn seed_e(val: f64) -> Self {
        Self::new(val, 1.0, 0.0)
    }

    /// Independent variable along the Poisson's-ratio direction.
    pub const fn seed_nu(val: f64) -> Self {
        Self::new(val, 0.0, 1.0)
    }

    #[inline]
    fn chain(self, val: f64, deriv: f64) -> Self {
        Self::new(val, self.d_e * deriv, self.d_nu * deriv)
    }
}

impl Scalar for Dual2 {
    const TANGENTS: usize = 2;

    #[inline]
    fn cst(v: f64) -> Self {
        Self::new(v, 0.0, 0.0)
    }

    #[inline]
    fn primal(self) -> f64 {
        self.val
    }

    #[inline]
    fn tangent(self, k: usize) -> f64 {
        match k {
            0 => self.d_e,
            1 => self.d_nu,
            _ => 0.0,
        }
    }

    #[inline]
    fn from_parts(v: f64, t: [f64; NUM_TANGENTS]) -> Self {
        Self::new(v, t[0], t[1])
    }

    #[inline]
    fn sqrt(self) -> Self {
        let r = self.val.sqrt();
        self.chain(r, 0.5 / r)
    }

    #[inline]
    fn is_finite(self) -> bool {
        self.val.is_finite() && self.d_e.is_finite() && self.d_nu.is_finite()
    }
}

impl Add for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.val + o.val, self.d_e + o.d_e, self.d_nu + o.d_nu)
    }
}

impl Sub for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.val - o.val, self.d_e - o.d_e, self.d_nu - o.d_nu)
    }
}

impl Mul for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.val * o.val,
            self.d_e * o.val + self.val * o.d_e,
            self.d_nu * o.val + self.val * o.d_nu,
        )
    }
}

impl Div for Dual2 {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let q = self.val / o.val;
        let inv = 1.0 / o.val;
        Self::new(q, (self.d_e - q * o.d_e) * inv, (self.d_nu - q * o.d_nu) * inv)
    }
}

impl Neg for Dual2 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.val, -self.d_e, -self.d_nu)
    }
}

impl Add<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Self::new(self.val + o, self.d_e, self.d_nu)
    }
}

impl Sub<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Self::new(self.val - o, self.d_e, self.d_nu)
    }
}

impl Mul<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        Self::new(self.val * o, self.d_e * o, self.d_nu * o)
    }
}

impl Div<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        Self::new(self.val / o, self.d_e / o, self.d_nu / o)
    }
}

macro_rules! assign_ops {
    ($($tr:ident $m:ident $op:tt),*) => {$(
        impl $tr for Dual2 {
            #[inline]
            fn $m(&mut self, o: Self) {
                *self = *self $op o;
            }
        }
    )*};
}

assign_ops!(AddAssign add_assign +, SubAssign sub_assign -, MulAssign mul_assign *, DivAssign div_assign /);
