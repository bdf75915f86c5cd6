use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Dual2, Scalar};

/// Elastic material of a simulated body.
///
/// Young's modulus is in simulator stress units (unit-cube world, unit
/// density), not pascals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialParams<T = f64> {
    pub youngs_modulus: T,
    pub poissons_ratio: T,
    pub density: f64,
}

impl MaterialParams<f64> {
    pub fn new(youngs_modulus: f64, poissons_ratio: f64) -> Result<Self> {
        let m = Self { youngs_modulus, poissons_ratio, density: 1.0 };
        m.validate()?;
        Ok(m)
    }

    pub fn with_density(mut self, density: f64) -> Result<Self> {
        self.density = density;
        self.validate()?;
        Ok(self)
    }

    /// Seeds both parameters as independent forward-mode variables.
    pub fn seeded(&self) -> MaterialParams<Dual2> {
        MaterialParams {
            youngs_modulus: Dual2::seed_e(self.youngs_modulus),
            poissons_ratio: Dual2::seed_nu(self.poissons_ratio),
            density: self.density,
        }
    }
}

impl<T: Scalar> MaterialParams<T> {
    pub fn lift(m: &MaterialParams<f64>) -> Self {
        Self {
            youngs_modulus: T::cst(m.youngs_modulus),
            poissons_ratio: T::cst(m.poissons_ratio),
            density: m.density,
        }
    }

    pub fn primal(&self) -> MaterialParams<f64> {
        MaterialParams {
            youngs_modulus: self.youngs_modulus.primal(),
            poissons_ratio: self.poissons_ratio.primal(),
            density: self.density,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.youngs_modulus.primal();
        let nu = self.poissons_ratio.primal();
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Domain(format!("Young's modulus must be positive, got {e}")));
        }
        if !(nu > 0.0 && nu < 0.5) {
            return Err(Error::Domain(format!("Poisson's ratio must lie in (0, 0.5), got {nu}")));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(Error::Domain(format!("density must be positive, got {}", self.density)));
        }
        Ok(())
    }

    pub fn lame(&self) -> Result<(T, T)> {
        lame_parameters(self.youngs_modulus, self.poissons_ratio)
    }
}

/// `(μ, λ)` from Young's modulus and Poisson's ratio.
pub fn lame_parameters<T: Scalar>(e: T, nu: T) -> Result<(T, T)> {
    let nu0 = nu.primal();
    if !(nu0 > 0.0 && nu0 < 0.5) {
        return Err(Error::Domain(format!("Poisson's ratio must lie in (0, 0.5), got {nu0}")));
    }
    if !(e.primal() > 0.0) {
        return Err(Error::Domain(format!("Young's modulus must be positive, got {}", e.primal())));
    }
    let one_plus = nu + 1.0;
    let mu = e / (one_plus * 2.0);
    let lambda = e * nu / (one_plus * (T::one() - nu * 2.0));
    Ok((mu, lambda))
}

/// Box of admissible `(E, ν)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBounds {
    pub e_min: f64,
    pub e_max: f64,
    pub nu_min: f64,
    pub nu_max: f64,
}

impl ParamBounds {
    pub fn new(e_min: f64, e_max: f64, nu_min: f64, nu_max: f64) -> Result<Self> {
        let b = Self { e_min, e_max, nu_min, nu_max };
        b.validate()?;
        Ok(b)
    }

    /// Simulation test range.
    pub fn sim_test() -> Self {
        Self { e_min: 1500.0, e_max: 8200.0, nu_min: 0.34, nu_max: 0.36 }
    }

    /// Wide range used for policy training and real captures.
    pub fn wide() -> Self {
        Self { e_min: 500.0, e_max: 10_500.0, nu_min: 0.2, nu_max: 0.4 }
    }

    /// Out-of-distribution probe range (softer ropes).
    pub fn ood() -> Self {
        Self { e_min: 500.0, e_max: 1500.0, nu_min: 0.3, nu_max: 0.33 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.e_min > 0.0
            && self.e_min < self.e_max
            && self.e_max.is_finite()
            && self.nu_min > 0.0
            && self.nu_min < self.nu_max
            && self.nu_max < 0.5;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid parameter bounds {self:?}")))
        }
    }

    pub fn contains(&self, e: f64, nu: f64) -> bool {
        (self.e_min..=self.e_max).contains(&e) && (self.nu_min..=self.nu_max).contains(&nu)
    }

    pub fn e_width(&self) -> f64 {
        self.e_max - self.e_min
    }

    pub fn nu_width(&self) -> f64 {
        self.nu_max - self.nu_min
    }

    pub fn midpoint(&self) -> (f64, f64) {
        (0.5 * (self.e_min + self.e_max), 0.5 * (self.nu_min + self.nu_max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lame_examples() {
        let (mu, la) = lame_parameters(1000.0, 0.25).unwrap();
        assert!((mu - 400.0).abs() < 1e-12 && (la - 400.0).abs() < 1e-12);
        let (mu, la) = lame_parameters(2600.0, 0.3).unwrap();
        assert!((mu - 1000.0).abs() < 1e-9 && (la - 1500.0).abs() < 1e-9);
        let (mu, la) = lame_parameters(1000.0, 1e-9).unwrap();
        assert!((mu - 500.0).abs() < 1e-5 && la.abs() < 1e-5);
    }

    #[test]
    fn lame_rejects_bad_ratio() {
        assert!(matches!(lame_parameters(1000.0, 0.5), Err(Error::Domain(_))));
        assert!(matches!(lame_parameters(1000.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(lame_parameters(1000.0, -0.1), Err(Error::Domain(_))));
        assert!(MaterialParams::new(-1.0, 0.3).is_err());
    }

    #[test]
    fn lame_tangents() {
        let m = MaterialParams::new(2600.0, 0.3).unwrap().seeded();
        let (mu, la) = m.lame().unwrap();
        // dμ/dE = 1/(2(1+ν)), dλ/dE = ν/((1+ν)(1−2ν))
        assert!((mu.d_e - 1.0 / 2.6).abs() < 1e-12);
        assert!((la.d_e - 0.3 / (1.3 * 0.4)).abs() < 1e-12);
        let h = 1e-6;
        let fd = |nu: f64| lame_parameters(2600.0, nu).unwrap();
        let (mp, lp) = fd(0.3 + h);
        let (mm, lm) = fd(0.3 - h);
        assert!((mu.d_nu - (mp - mm) / (2.0 * h)).abs() < 1e-4);
        assert!((la.d_nu - (lp - lm) / (2.0 * h)).abs() < 1e-3);
    }

    #[test]
    fn bounds_validation() {
        assert!(ParamBounds::new(1.0, 2.0, 0.1, 0.2).is_ok());
        assert!(ParamBounds::new(2.0, 1.0, 0.1, 0.2).is_err());
        assert!(ParamBounds::new(1.0, 2.0, 0.1, 0.5).is_err());
        assert!(ParamBounds::sim_test().contains(3000.0, 0.35));
    }
}
