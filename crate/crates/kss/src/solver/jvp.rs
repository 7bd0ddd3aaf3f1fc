//! Forward-mode directional derivatives (Jacobian-vector products) of the
//! reprojection objective along weight perturbations.
//!
//! Every step mirrors the primal evaluation exactly (same clamps, same
//! renormalizations), so the derivative agrees with central finite
//! differences of the primal to machine-precision truncation order. The
//! alignment rotation is differentiated through the SVD perturbation
//! equations: with `A = U D Vᵀ`, `C = Uᵀ dA V`, skew matrices
//! `Ω_U = Uᵀ dU`, `Ω_V = Vᵀ dV` solve, for `i < j`,
//!
//! ```text
//! d_j (Ω_U)_ij − d_i (Ω_V)_ij = C_ij
//! −d_i (Ω_U)_ij + d_j (Ω_V)_ij = C_ji
//! ```
//!
//! and `dR* = V (Ω_V S − S Ω_U) Uᵀ`, `d(Σλ) = Σ S_ii C_ii`.

use nalgebra::{DMatrix, DVector};

use crate::barycentric::BasisSet;
use crate::error::{Error, Result};
use crate::kendall::{det_sign, svd_sorted, PreShape};

/// `θ / sin θ` evaluated stably near θ = 0.
pub(crate) fn theta_over_sin(theta: f64) -> f64 {
    if theta < 1e-4 {
        1.0 + theta * theta / 6.0
    } else {
        theta / theta.sin()
    }
}

/// Alignment rotation and pseudo-singular sum with directional derivatives.
///
/// Input is the cross-covariance `A` (m×m) and its perturbation `dA`.
/// Returns `(R*, dR*, Σλ, dΣλ)`.
pub(crate) fn align_jvp(
    a: &DMatrix<f64>,
    da: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, f64, f64) {
    let m = a.nrows();
    let (u, d, v) = svd_sorted(a);
    let sign = det_sign(&u, &v);
    let mut s_diag = vec![1.0; m];
    s_diag[m - 1] = sign;

    let c = u.transpose() * da * &v;

    let mut sum: f64 = d[..m - 1].iter().sum();
    sum += sign * d[m - 1];
    let mut dsum = 0.0;
    for i in 0..m {
        dsum += s_diag[i] * c[(i, i)];
    }

    let mut omega_u = DMatrix::zeros(m, m);
    let mut omega_v = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let denom = d[j] * d[j] - d[i] * d[i];
            if denom.abs() < 1e-14 * (1.0 + d[i] * d[i]) {
                // Tied singular values: the rotation is not differentiable
                // here; leave the block untouched.
                continue;
            }
            let x = (d[j] * c[(i, j)] + d[i] * c[(j, i)]) / denom;
            let y = (d[i] * c[(i, j)] + d[j] * c[(j, i)]) / denom;
            omega_u[(i, j)] = x;
            omega_u[(j, i)] = -x;
            omega_v[(i, j)] = y;
            omega_v[(j, i)] = -y;
        }
    }

    let s_mat = DMatrix::from_diagonal(&DVector::from_vec(s_diag));
    let rotation = &v * &s_mat * u.transpose();
    let drotation = &v * (&omega_v * &s_mat - &s_mat * &omega_u) * u.transpose();
    (rotation, drotation, sum, dsum)
}

/// Reprojection objective along the weight path, optionally with the
/// directional derivative along `dw`.
///
/// Pipeline: inductive recursion → well-position to the reference →
/// project through `Qᵀ` → normalize → 2D alignment distance squared.
pub(crate) fn objective_weights_dir(
    basis: &BasisSet,
    weights: &[f64],
    dw: Option<&[f64]>,
    qmat: &DMatrix<f64>,
    observed: &PreShape,
    reference: &PreShape,
) -> Result<(f64, Option<f64>)> {
    let n = basis.len();
    assert_eq!(weights.len(), n);
    let k = basis.landmark_count();

    let mut mu = basis.get(0).rep().matrix().clone();
    let mut dmu = dw.map(|_| DMatrix::zeros(3, k));
    let mut prefix = weights[0];
    let mut dprefix = dw.map(|d| d[0]).unwrap_or(0.0);

    for j in 1..n {
        prefix += weights[j];
        let t = weights[j] / prefix;
        let b = basis.get(j).rep().matrix();

        let a = b * mu.transpose();
        if let Some(dmu_m) = &dmu {
            dprefix += dw.unwrap()[j];
            let dt = (dw.unwrap()[j] * prefix - weights[j] * dprefix) / (prefix * prefix);
            let da = b * dmu_m.transpose();
            let (r, dr, csum, dcsum) = align_jvp(&a, &da);
            let y = &r * b;
            let dy = &dr * b;

            let c = csum.clamp(-1.0, 1.0);
            let theta = c.acos();
            if theta >= std::f64::consts::PI - crate::kendall::ANTIPODAL_MARGIN {
                return Err(Error::AntipodalShapes { theta });
            }
            if theta < crate::kendall::DEGENERATE_NORM {
                // Primal keeps μ; so does the derivative path.
                continue;
            }
            let dtheta = if csum.abs() >= 1.0 {
                0.0
            } else {
                -dcsum / (1.0 - c * c).sqrt()
            };

            let sin_theta = theta.sin();
            let cos_theta = theta.cos();
            let sa = ((1.0 - t) * theta).sin();
            let sb = (t * theta).sin();
            let ca = ((1.0 - t) * theta).cos();
            let cb = (t * theta).cos();
            let a_coef = sa / sin_theta;
            let b_coef = sb / sin_theta;
            let da_coef = (ca * ((1.0 - t) * dtheta - theta * dt) * sin_theta
                - sa * cos_theta * dtheta)
                / (sin_theta * sin_theta);
            let db_coef = (cb * (t * dtheta + theta * dt) * sin_theta - sb * cos_theta * dtheta)
                / (sin_theta * sin_theta);

            let g = &mu * a_coef + &y * b_coef;
            let dg = &mu * da_coef + dmu.as_ref().unwrap() * a_coef + &y * db_coef + &dy * b_coef;
            let ng = g.norm();
            let mu_new = &g / ng;
            let inner = mu_new.dot(&dg);
            let dmu_new = (dg - &mu_new * inner) / ng;
            mu = mu_new;
            dmu = Some(dmu_new);
        } else {
            let (r, _, csum, _) = align_jvp(&a, &DMatrix::zeros(3, 3));
            let y = &r * b;
            let c = csum.clamp(-1.0, 1.0);
            let theta = c.acos();
            if theta >= std::f64::consts::PI - crate::kendall::ANTIPODAL_MARGIN {
                return Err(Error::AntipodalShapes { theta });
            }
            if theta < crate::kendall::DEGENERATE_NORM {
                continue;
            }
            let sin_theta = theta.sin();
            let g = &mu * (((1.0 - t) * theta).sin() / sin_theta)
                + &y * ((t * theta).sin() / sin_theta);
            let ng = g.norm();
            mu = g / ng;
        }
    }

    // Well-position to the fixed reference (π†).
    let a3 = &mu * reference.matrix().transpose();
    let (r3, p, dp) = if let Some(dmu_m) = &dmu {
        let da3 = dmu_m * reference.matrix().transpose();
        let (r3, dr3, _, _) = align_jvp(&a3, &da3);
        let p = &r3 * &mu;
        let dp = &dr3 * &mu + &r3 * dmu_m;
        (r3, p, Some(dp))
    } else {
        let (r3, _, _, _) = align_jvp(&a3, &DMatrix::zeros(3, 3));
        let p = &r3 * &mu;
        (r3, p, None)
    };
    let _ = r3;

    // Project and normalize.
    let m2 = qmat.transpose() * &p;
    let nm = m2.norm();
    if nm <= crate::camera::PROJECTION_TOL {
        return Err(Error::DegenerateProjection { norm: nm });
    }
    let z = &m2 / nm;

    let xw = observed.matrix();
    let a2 = &z * xw.transpose();
    if let Some(dp_m) = dp {
        let dm2 = qmat.transpose() * dp_m;
        let dnm = z.dot(&dm2);
        let dz = (dm2 - &z * dnm) / nm;
        let da2 = &dz * xw.transpose();
        let (_, _, s2, ds2) = align_jvp(&a2, &da2);
        let s2c = s2.clamp(-1.0, 1.0);
        let theta2 = s2c.acos();
        let obj = theta2 * theta2;
        let dobj = if s2.abs() >= 1.0 {
            -2.0 * ds2
        } else {
            -2.0 * theta_over_sin(theta2) * ds2
        };
        Ok((obj, Some(dobj)))
    } else {
        let (_, _, s2, _) = align_jvp(&a2, &DMatrix::zeros(2, 2));
        let theta2 = s2.clamp(-1.0, 1.0).acos();
        Ok((theta2 * theta2, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    #[test]
    fn align_jvp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for m in [2usize, 3] {
            for _ in 0..20 {
                let a = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
                let da = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
                let (_, dr, _, ds) = align_jvp(&a, &da);

                let h = 1e-6;
                let (rp, _, sp, _) = align_jvp(&(&a + &da * h), &DMatrix::zeros(m, m));
                let (rm, _, sm, _) = align_jvp(&(&a - &da * h), &DMatrix::zeros(m, m));
                let dr_fd = (rp - rm) / (2.0 * h);
                let ds_fd = (sp - sm) / (2.0 * h);

                assert!(
                    (dr.clone() - &dr_fd).norm() < 1e-6 * (1.0 + dr.norm()),
                    "rotation derivative mismatch: {:.3e}",
                    (dr - dr_fd).norm()
                );
                assert!((ds - ds_fd).abs() < 1e-6 * (1.0 + ds.abs()));
            }
        }
    }
}
