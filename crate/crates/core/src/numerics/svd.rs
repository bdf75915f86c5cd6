//! 3×3 singular value and polar decompositions.

use super::linalg::{Mat3, Vec3};
use super::scalar::{Scalar, NUM_TANGENTS};
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 30;
const TOL: f64 = 1e-12;

/// `a = u · diag(sigma) · vᵀ` with `det(u) = det(v) = +1`.
///
/// Singular values are sorted descending; a reflection in `a` shows up as a
/// negative last singular value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Svd3 {
    pub u: Mat3,
    pub sigma: Vec3,
    pub v: Mat3,
}

impl Svd3 {
    pub fn reconstruct(&self) -> Mat3 {
        self.u * Mat3::diag(self.sigma) * self.v.transpose()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd3(a: &Mat3) -> Svd3 {
    // Columns of `w` converge to u_j σ_j.
    let mut w = *a;
    let mut v = Mat3::<f64>::identity();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
            for i in 0..3 {
                alpha += w.m[i][p] * w.m[i][p];
                beta += w.m[i][q] * w.m[i][q];
                gamma += w.m[i][p] * w.m[i][q];
            }
            if gamma == 0.0 || gamma.abs() <= TOL * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for i in 0..3 {
                let (wp, wq) = (w.m[i][p], w.m[i][q]);
                w.m[i][p] = c * wp - s * wq;
                w.m[i][q] = s * wp + c * wq;
                let (vp, vq) = (v.m[i][p], v.m[i][q]);
                v.m[i][p] = c * vp - s * vq;
                v.m[i][q] = s * vp + c * vq;
            }
        }
        if !rotated {
            break;
        }
    }

    // Sort columns by norm, descending.
    let norms = [w.col(0).norm(), w.col(1).norm(), w.col(2).norm()];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut v = Mat3::from_cols(v.col(order[0]), v.col(order[1]), v.col(order[2]));
    if v.det() < 0.0 {
        for i in 0..3 {
            v.m[i][2] = -v.m[i][2];
        }
    }
    // Recompute a·v after the column sign fix; u2 = u0 × u1 below then carries
    // any remaining reflection into the sign of σ₂.
    let w = *a * v;

    let scale = norms.iter().fold(0.0f64, |m, &n| m.max(n));
    let tiny = scale * 1e-13 + f64::MIN_POSITIVE;

    let c0 = w.col(0);
    let u0 = if c0.norm() > tiny { c0.scale_f(1.0 / c0.norm()) } else { Vec3::of(1.0, 0.0, 0.0) };
    let c1 = w.col(1);
    let c1p = c1 - u0.scale_f(u0.dot(&c1));
    let u1 = if c1p.norm() > tiny { c1p.scale_f(1.0 / c1p.norm()) } else { any_perpendicular(u0) };
    let u2 = u0.cross(&u1);
    let u = Mat3::from_cols(u0, u1, u2);

    let snap = |x: f64| if x.abs() <= tiny { 0.0 } else { x };
    let s0 = snap(u0.dot(&c0));
    // Column norms are already sorted; only rounding can break the order here.
    let s1 = snap(u1.dot(&c1)).min(s0);
    let s2 = snap(u2.dot(&w.col(2)));
    let s2 = s2.signum() * s2.abs().min(s1);
    let sigma = Vec3::of(s0, s1, s2);
    Svd3 { u, sigma, v }
}

fn any_perpendicular(n: Vec3) -> Vec3 {
    let trial = if n.x.abs() < 0.9 { Vec3::of(1.0, 0.0, 0.0) } else { Vec3::of(0.0, 1.0, 0.0) };
    let p = trial - n.scale_f(n.dot(&trial));
    p.scale_f(1.0 / p.norm())
}

const MAX_POLAR_ITERS: usize = 60;

/// Rotation factor `R` of the polar decomposition `f = R S`.
///
/// The primal comes from the scaled Newton iteration `X ← ½(ζX + (ζX)⁻ᵀ)`.
/// Tangents use `Rᵀ dR = [ω]×` with `(tr(S) I − S) ω = axial(Rᵀ dF − dFᵀ R)`,
/// which follows from differentiating `f = R S` with `S` symmetric and holds
/// at repeated singular values, including `f = I`.
pub fn polar_rotation<T: Scalar>(f: &Mat3<T>) -> Result<Mat3<T>> {
    let f0 = f.primal();
    let det = f0.det();
    if !(det > 0.0) {
        return Err(Error::InvertedElement { particle: None, det });
    }
    let r0 = polar_newton(&f0, det);
    if T::TANGENTS == 0 {
        return Ok(Mat3::lift(&r0));
    }
    let rt = r0.transpose();
    let s = rt * f0;
    let s = (s + s.transpose()).scale_f(0.5);
    let g_inv = (Mat3::identity().scale_f(s.trace()) - s).inverse();
    let mut dr = [Mat3::<f64>::zero(); NUM_TANGENTS];
    for (k, drk) in dr.iter_mut().enumerate().take(T::TANGENTS) {
        let a = rt * f.map(|x| x.tangent(k));
        let w = Vec3::of(a.m[2][1] - a.m[1][2], a.m[0][2] - a.m[2][0], a.m[1][0] - a.m[0][1]);
        let o = g_inv.mul_vec(&w);
        let omega = Mat3::from_rows([[0.0, -o.z, o.y], [o.z, 0.0, -o.x], [-o.y, o.x, 0.0]]);
        *drk = r0 * omega;
    }
    Ok(Mat3::from_fn(|i, j| T::from_parts(r0.m[i][j], [dr[0].m[i][j], dr[1].m[i][j]])))
}

fn polar_newton(f: &Mat3, det: f64) -> Mat3 {
    let mut x = *f;
    let mut d = det;
    for _ in 0..MAX_POLAR_ITERS {
        // determinant scaling only pays off far from convergence
        let zeta = if (d - 1.0).abs() > 1e-2 { 1.0 / d.cbrt() } else { 1.0 };
        let inv_t = x.adjugate().transpose().scale_f(1.0 / (zeta * d));
        let next = (x.scale_f(zeta) + inv_t).scale_f(0.5);
        let delta = (next - x).max_abs();
        x = next;
        if delta < 1e-9 {
            break;
        }
        d = x.det();
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Dual2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn is_orthonormal(m: &Mat3) -> bool {
        (m.transpose() * *m - Mat3::identity()).max_abs() < 1e-6
    }

    fn random_mat(rng: &mut ChaCha8Rng) -> Mat3 {
        Mat3::from_fn(|_, _| rng.gen_range(-2.0..2.0))
    }

    /// Singular values from a cyclic Jacobi eigen-solve of aᵀa.
    fn jacobi_singular_values(a: &Mat3) -> [f64; 3] {
        let mut s = a.transpose() * *a;
        for _ in 0..100 {
            for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
                if s.m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = 0.5 * (2.0 * s.m[p][q]).atan2(s.m[q][q] - s.m[p][p]);
                let (sn, cs) = theta.sin_cos();
                let mut g = Mat3::<f64>::identity();
                g.m[p][p] = cs;
                g.m[q][q] = cs;
                g.m[p][q] = sn;
                g.m[q][p] = -sn;
                s = g.transpose() * s * g;
            }
        }
        let mut ev = [s.m[0][0], s.m[1][1], s.m[2][2]].map(|x| x.max(0.0).sqrt());
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    #[test]
    fn identity_and_diagonal() {
        let s = svd3(&Mat3::identity());
        assert_eq!(s.sigma, Vec3::of(1.0, 1.0, 1.0));
        assert!((s.u - Mat3::identity()).max_abs() < 1e-15);
        assert!((s.v - Mat3::identity()).max_abs() < 1e-15);

        let s = svd3(&Mat3::diag(Vec3::of(3.0, 2.0, 1.0)));
        assert_eq!(s.sigma, Vec3::of(3.0, 2.0, 1.0));
        assert!((s.u - Mat3::identity()).max_abs() < 1e-15);
        assert!((s.v - Mat3::identity()).max_abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_gives_valid_factors() {
        let s = svd3(&Mat3::zero());
        assert!(is_orthonormal(&s.u) && is_orthonormal(&s.v));
        assert_eq!(s.sigma.max_abs(), 0.0);
    }

    #[test]
    fn random_and_rank_deficient_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let mut a = random_mat(&mut rng);
            match trial % 4 {
                1 => {
                    // rank 2
                    for i in 0..3 {
                        a.m[i][2] = 0.3 * a.m[i][0] - 1.2 * a.m[i][1];
                    }
                }
                2 => {
                    // rank 1
                    let u = Vec3::of(rng.gen(), rng.gen(), rng.gen());
                    let v = Vec3::of(rng.gen(), rng.gen(), rng.gen());
                    a = u.outer(&v);
                }
                _ => {}
            }
            let s = svd3(&a);
            assert!((s.reconstruct() - a).max_abs() < 1e-6, "trial {trial}");
            assert!(is_orthonormal(&s.u) && is_orthonormal(&s.v), "trial {trial}");
            assert!((s.u.det() - 1.0).abs() < 1e-6 && (s.v.det() - 1.0).abs() < 1e-6);
            assert!(s.sigma.x >= s.sigma.y && s.sigma.y >= s.sigma.z);
            let oracle = jacobi_singular_values(&a);
            let mine = [s.sigma.x, s.sigma.y, s.sigma.z.abs()];
            for k in 0..3 {
                assert!((mine[k] - oracle[k]).abs() < 1e-6, "trial {trial}: {mine:?} vs {oracle:?}");
            }
        }
    }

    #[test]
    fn reflection_folds_into_last_singular_value() {
        let a = Mat3::diag(Vec3::of(2.0, 1.0, -0.5));
        let s = svd3(&a);
        assert!(s.sigma.z < 0.0);
        assert!((s.reconstruct() - a).max_abs() < 1e-12);
    }

    #[test]
    fn polar_examples() {
        let r = polar_rotation(&Mat3::<f64>::identity()).unwrap();
        assert!((r - Mat3::identity()).max_abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let axis = Vec3::of(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let r0 = Mat3::rotation(axis, rng.gen_range(-3.0..3.0));
            let r = polar_rotation(&r0).unwrap();
            assert!((r - r0).max_abs() < 1e-6);
            let f = r0 * Mat3::diag(Vec3::of(2.0, 1.0, 1.0));
            let r = polar_rotation(&f).unwrap();
            assert!((r - r0).max_abs() < 1e-6);
            assert!(is_orthonormal(&r) && (r.det() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn polar_agrees_with_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let mut a = Mat3::identity() + random_mat(&mut rng).scale_f(0.6);
            if a.det() < 0.0 {
                a = a.scale_f(-1.0);
            }
            let s = svd3(&a);
            let r = polar_rotation(&a).unwrap();
            assert!((r - s.u * s.v.transpose()).max_abs() < 1e-9 * (1.0 + 1.0 / s.sigma.z.abs()));
            assert!((r.transpose() * r - Mat3::identity()).max_abs() < 1e-13);
        }
    }

    #[test]
    fn polar_rejects_inverted() {
        let f = Mat3::diag(Vec3::of(1.0, 1.0, -1.0));
        assert!(matches!(polar_rotation(&f), Err(Error::InvertedElement { .. })));
    }

    #[test]
    fn polar_tangent_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // include the exact identity, where naive Jacobi differentiation fails
        let bases = [Mat3::identity(), Mat3::identity() + random_mat(&mut rng).scale_f(0.2)];
        for base in bases {
            let d1 = random_mat(&mut rng);
            let d2 = random_mat(&mut rng);
            let f = Mat3::from_fn(|i, j| Dual2::new(base.m[i][j], d1.m[i][j], d2.m[i][j]));
            let r = polar_rotation(&f).unwrap();
            let h = 1e-6;
            for (k, d) in [d1, d2].iter().enumerate() {
                let rp = polar_rotation(&(base + d.scale_f(h))).unwrap();
                let rm = polar_rotation(&(base - d.scale_f(h))).unwrap();
                let fd = (rp - rm).scale_f(0.5 / h);
                let an = r.map(|x| x.tangent(k));
                assert!((fd - an).max_abs() < 1e-6, "{:?} vs {:?}", fd, an);
            }
        }
    }
}
