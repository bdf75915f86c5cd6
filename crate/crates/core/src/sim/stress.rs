//! Fixed-corotated elasticity.

use crate::error::Result;
use crate::numerics::{polar_rotation, Mat3, Scalar};

/// First Piola–Kirchhoff stress `P = 2μ(F − R) + λ(J − 1)J F⁻ᵀ`.
pub fn corotated_stress<T: Scalar>(f: &Mat3<T>, mu: T, lambda: T) -> Result<Mat3<T>> {
    let r = polar_rotation(f)?;
    let j = f.det();
    // J F⁻ᵀ is the cofactor matrix, i.e. the transposed adjugate.
    let cof = f.adjugate().transpose();
    Ok((*f - r).scale(mu * 2.0) + cof.scale(lambda * (j - 1.0)))
}

/// Kirchhoff stress `P Fᵀ = 2μ(F − R)Fᵀ + λ(J − 1)J I`, the form consumed by
/// the MLS-MPM particle-to-grid transfer.
pub fn corotated_kirchhoff<T: Scalar>(f: &Mat3<T>, mu: T, lambda: T) -> Result<Mat3<T>> {
    let r = polar_rotation(f)?;
    let j = f.det();
    let mut tau = ((*f - r) * f.transpose()).scale(mu * 2.0);
    let vol = lambda * (j - 1.0) * j;
    for i in 0..3 {
        tau.m[i][i] += vol;
    }
    Ok(tau)
}

/// Strain energy density `Ψ = μ Σ(σᵢ − 1)² + ½λ(J − 1)²`.
pub fn corotated_energy(f: &Mat3, mu: f64, lambda: f64) -> f64 {
    let s = crate::numerics::svd3(f).sigma;
    let j = f.det();
    mu * ((s.x - 1.0).powi(2) + (s.y - 1.0).powi(2) + (s.z - 1.0).powi(2)) + 0.5 * lambda * (j - 1.0).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Vec3;
    use crate::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rest_and_rotation_are_stress_free() {
        let p = corotated_stress(&Mat3::<f64>::identity(), 3.0, 2.0).unwrap();
        assert!(p.max_abs() < 1e-14);
        let r = Mat3::rotation(Vec3::of(0.2, 1.0, -0.4), 1.1);
        let p = corotated_stress(&r, 3.0, 2.0).unwrap();
        assert!(p.max_abs() < 1e-12);
    }

    fn fd_energy_gradient(f: &Mat3, mu: f64, lambda: f64) -> Mat3 {
        let h = 1e-6;
        Mat3::from_fn(|i, j| {
            let mut fp = *f;
            let mut fm = *f;
            fp.m[i][j] += h;
            fm.m[i][j] -= h;
            (corotated_energy(&fp, mu, lambda) - corotated_energy(&fm, mu, lambda)) / (2.0 * h)
        })
    }

    #[test]
    fn stress_is_energy_gradient() {
        let f = Mat3::diag(Vec3::of(1.1, 1.0, 1.0));
        let p = corotated_stress(&f, 1.0, 1.0).unwrap();
        assert!((p - fd_energy_gradient(&f, 1.0, 1.0)).max_abs() < 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let f = Mat3::identity() + Mat3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
            let (mu, la) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
            let p = corotated_stress(&f, mu, la).unwrap();
            let g = fd_energy_gradient(&f, mu, la);
            assert!((p - g).max_abs() < 1e-5 * g.max_abs().max(1.0));
        }
    }

    #[test]
    fn kirchhoff_matches_p_ft() {
        let f = Mat3::from_rows([[1.1, 0.05, 0.0], [0.02, 0.95, 0.1], [0.0, -0.03, 1.02]]);
        let p = corotated_stress(&f, 2.0, 5.0).unwrap();
        let tau = corotated_kirchhoff(&f, 2.0, 5.0).unwrap();
        assert!((p * f.transpose() - tau).max_abs() < 1e-12);
    }

    #[test]
    fn inverted_element_is_an_error() {
        let f = Mat3::diag(Vec3::of(1.0, -1.0, 1.0));
        assert!(matches!(corotated_stress(&f, 1.0, 1.0), Err(Error::InvertedElement { .. })));
    }
}
