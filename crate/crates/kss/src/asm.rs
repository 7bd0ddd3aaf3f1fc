//! Active-shape-model baseline: alternate between a linear blend of basis
//! configurations (coefficients summing to 1) and a weak-perspective camera
//! fit, entirely in Euclidean space.
//!
//! The camera step fits `(α, R, t)` to `‖W − α (R X)_{[1,2]} − t 1ᵀ‖²` by
//! estimating the unconstrained affine map on centered data and projecting
//! it onto the scaled-Stiefel set, followed by a short Riemannian polish.
//! The coefficient step solves the sum-to-one-constrained least squares by
//! eliminating the last coefficient. Both steps weakly decrease the
//! residual (a camera refit that would increase it is rejected).

use nalgebra::{DMatrix, DVector};
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::{Deserialize, Serialize};

use crate::camera::CameraPose;
use crate::error::{Error, Result, Warning};
use crate::kendall::Configuration;
use crate::solver::{qr_orthonormalize, random_rotation3, tangent_project};

/// Options for the ASM alternation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AsmOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AsmOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-8,
            restarts: 6,
            seed: 0,
        }
    }
}

/// Result of an ASM reconstruction.
#[derive(Debug, Clone)]
pub struct AsmResult {
    /// Blend coefficients, summing to 1 exactly by construction.
    pub coefficients: Vec<f64>,
    pub camera: CameraPose,
    /// `Σ c_j B_j`.
    pub shape3d: Configuration,
    /// Frobenius norm of the projection mismatch.
    pub residual: f64,
    pub trace: Vec<f64>,
    pub restart_index: usize,
    pub warnings: Vec<Warning>,
}

fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let k = m.ncols() as f64;
    DVector::from_iterator(m.nrows(), (0..m.nrows()).map(|r| m.row(r).sum() / k))
}

fn center_columns(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let means = column_means(m);
    let mut out = m.clone();
    for c in 0..out.ncols() {
        for r in 0..out.nrows() {
            out[(r, c)] -= means[r];
        }
    }
    (out, means)
}

/// Residual of the full forward model for a given camera and 3D shape.
fn projection_residual(w: &DMatrix<f64>, x: &DMatrix<f64>, cam: &CameraPose) -> f64 {
    let rx = cam.rotation() * x;
    let mut diff = w - rx.rows(0, 2) * cam.alpha();
    for c in 0..diff.ncols() {
        diff[(0, c)] -= cam.translation()[0];
        diff[(1, c)] -= cam.translation()[1];
    }
    diff.norm()
}

/// Residual of the centered sub-problem for projection rows `g` (2×3).
fn centered_residual(wc: &DMatrix<f64>, xc: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let gx = g * xc;
    let denom = gx.norm_squared();
    if denom <= f64::MIN_POSITIVE {
        return wc.norm_squared();
    }
    let inner = wc.dot(&gx);
    (wc.norm_squared() - inner * inner / denom).max(0.0)
}

/// Gradient of [`centered_residual`] in the ambient 2×3 matrix `g`.
fn centered_residual_grad(wc: &DMatrix<f64>, xc: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let gx = g * xc;
    let denom = gx.norm_squared();
    let inner = wc.dot(&gx);
    // r(G) = ‖Wc‖² − u²/v with u = ⟨Wc, G Xc⟩, v = ‖G Xc‖².
    let du = wc * xc.transpose();
    let dv = (&gx * xc.transpose()) * 2.0;
    du * (-2.0 * inner / denom) + dv * (inner * inner / (denom * denom))
}

/// Local Riemannian polish of the projection rows on the Stiefel manifold.
fn polish_projection_rows(
    wc: &DMatrix<f64>,
    xc: &DMatrix<f64>,
    g0: DMatrix<f64>,
) -> DMatrix<f64> {
    let mut g = g0;
    let mut f = centered_residual(wc, xc, &g);
    let mut step = 1.0;
    for _ in 0..100 {
        let grad = centered_residual_grad(wc, xc, &g);
        // Work on the transposed 3×2 Stiefel representation.
        let xi_t = tangent_project(&g.transpose(), &grad.transpose());
        let xi_norm_sq = xi_t.norm_squared();
        if xi_norm_sq.sqrt() < 1e-13 {
            break;
        }
        let mut improved = false;
        let mut tau = step;
        for _ in 0..40 {
            let cand = qr_orthonormalize(&(g.transpose() - &xi_t * tau)).transpose();
            let f_try = centered_residual(wc, xc, &cand);
            if f_try <= f - 1e-4 * tau * xi_norm_sq {
                g = cand;
                f = f_try;
                step = (tau * 2.0).min(1.0);
                improved = true;
                break;
            }
            tau *= 0.5;
        }
        if !improved {
            break;
        }
    }
    g
}

/// Fits a weak-perspective camera to observed 2D landmarks.
///
/// Centering removes the translation; the affine estimate on centered data
/// is projected onto orthonormal rows and polished; scale and translation
/// follow in closed form. Fails with [`Error::DegenerateTarget`] when the
/// centered 3D configuration has rank below 2.
pub fn orthographic_camera_fit(w: &Configuration, x: &Configuration) -> Result<CameraPose> {
    assert_eq!(w.ambient_dim(), 2, "observation must be 2×k");
    assert_eq!(x.ambient_dim(), 3, "target must be 3×k");
    assert_eq!(
        w.landmark_count(),
        x.landmark_count(),
        "landmark counts must match"
    );

    let (wc, w_mean) = center_columns(w.matrix());
    let (xc, x_mean) = center_columns(x.matrix());

    let svd = xc.clone().svd(true, true);
    let sv = &svd.singular_values;
    let s_max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let rank = sv.iter().filter(|&&v| v > 1e-12 * s_max.max(1.0)).count();
    if rank < 2 {
        return Err(Error::DegenerateTarget);
    }

    // Affine estimate H ≈ Wc Xc⁺ via the pseudo-inverse, then projection of
    // Hᵀ onto orthonormal columns.
    let pinv = svd
        .pseudo_inverse(1e-12 * s_max.max(1.0))
        .map_err(|_| Error::DegenerateTarget)?;
    let h = &wc * pinv;
    let (u, _, v) = crate::kendall::svd_sorted(&h);
    let mut g = &u * v.transpose(); // 2×3, orthonormal rows

    if wc.dot(&(&g * &xc)) < 0.0 {
        // Resolve the reflection towards a positive scale.
        g = -g;
    }
    g = polish_projection_rows(&wc, &xc, g);
    let gx = &g * &xc;
    let inner = wc.dot(&gx);

    let denom = gx.norm_squared();
    if denom <= f64::MIN_POSITIVE || inner <= 0.0 {
        return Err(Error::DegenerateTarget);
    }
    let alpha = inner / denom;

    // Third row as the cross product of the first two keeps det = +1.
    let r1 = g.row(0);
    let r2 = g.row(1);
    let r3 = [
        r1[1] * r2[2] - r1[2] * r2[1],
        r1[2] * r2[0] - r1[0] * r2[2],
        r1[0] * r2[1] - r1[1] * r2[0],
    ];
    let rotation = DMatrix::from_row_slice(
        3,
        3,
        &[
            r1[0], r1[1], r1[2], //
            r2[0], r2[1], r2[2], //
            r3[0], r3[1], r3[2],
        ],
    );

    let projected_mean = &g * &x_mean * alpha;
    let t = DVector::from_vec(vec![
        w_mean[0] - projected_mean[0],
        w_mean[1] - projected_mean[1],
    ]);
    CameraPose::new(rotation, alpha, t)
}

/// Coefficient least squares with the sum-to-one constraint eliminated.
///
/// Returns the coefficients and whether the reduced system was rank
/// deficient (minimum-norm solution taken).
fn coefficient_step(
    w: &DMatrix<f64>,
    basis: &[&DMatrix<f64>],
    cam: &CameraPose,
) -> (Vec<f64>, bool) {
    let n = basis.len();
    let k = w.ncols();
    if n == 1 {
        return (vec![1.0], false);
    }

    let project = |b: &DMatrix<f64>| -> DMatrix<f64> {
        let rb = cam.rotation() * b;
        rb.rows(0, 2) * cam.alpha()
    };

    let p_n = project(basis[n - 1]);
    let mut target = w - &p_n;
    for c in 0..k {
        target[(0, c)] -= cam.translation()[0];
        target[(1, c)] -= cam.translation()[1];
    }

    let rows = 2 * k;
    let mut a = DMatrix::zeros(rows, n - 1);
    for j in 0..n - 1 {
        let d = project(basis[j]) - &p_n;
        for c in 0..k {
            a[(2 * c, j)] = d[(0, c)];
            a[(2 * c + 1, j)] = d[(1, c)];
        }
    }
    let mut rhs = DVector::zeros(rows);
    for c in 0..k {
        rhs[2 * c] = target[(0, c)];
        rhs[2 * c + 1] = target[(1, c)];
    }

    let svd = a.svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let eps = 1e-12 * s_max.max(1.0);
    let rank = svd.singular_values.iter().filter(|&&v| v > eps).count();
    let rank_deficient = rank < n - 1;
    let reduced = svd
        .solve(&rhs, eps)
        .expect("svd solve with both factors computed");

    let mut c = Vec::with_capacity(n);
    let mut sum = 0.0;
    for j in 0..n - 1 {
        c.push(reduced[j]);
        sum += reduced[j];
    }
    c.push(1.0 - sum);
    (c, rank_deficient)
}

fn blend(basis: &[&DMatrix<f64>], c: &[f64]) -> DMatrix<f64> {
    let mut x = basis[0] * c[0];
    for j in 1..basis.len() {
        x += basis[j] * c[j];
    }
    x
}

/// Centered residual vector for reduced coefficients `c'` and raw projection
/// rows `g` (2×3, orthonormalized here), with scale and translation
/// eliminated by their closed-form optima.
fn varpro_residual(
    wc: &DMatrix<f64>,
    basis: &[&DMatrix<f64>],
    reduced: &[f64],
    g_raw: &DMatrix<f64>,
) -> Option<Vec<f64>> {
    let n = basis.len();
    let mut c = Vec::with_capacity(n);
    let mut sum = 0.0;
    for &v in reduced {
        c.push(v);
        sum += v;
    }
    c.push(1.0 - sum);
    let x = blend(basis, &c);
    let (xc, _) = center_columns(&x);
    let g = qr_orthonormalize(&g_raw.transpose()).transpose();
    let gx = &g * &xc;
    let denom = gx.norm_squared();
    if denom <= f64::MIN_POSITIVE {
        return None;
    }
    let alpha = wc.dot(&gx) / denom;
    let diff = wc - gx * alpha;
    Some(diff.as_slice().to_vec())
}

/// Completes orthonormal projection rows to a camera pose with the
/// closed-form optimal scale and translation. Negative scales are resolved
/// by flipping the rows (the product `αG` is unchanged).
fn camera_from_rows(
    g: DMatrix<f64>,
    wc: &DMatrix<f64>,
    w_mean: &DVector<f64>,
    xc: &DMatrix<f64>,
    x_mean: &DVector<f64>,
) -> Option<CameraPose> {
    let mut g = g;
    let gx = &g * xc;
    let denom = gx.norm_squared();
    if denom <= f64::MIN_POSITIVE {
        return None;
    }
    let mut alpha = wc.dot(&gx) / denom;
    if alpha == 0.0 {
        return None;
    }
    if alpha < 0.0 {
        g = -g;
        alpha = -alpha;
    }
    let r1 = g.row(0);
    let r2 = g.row(1);
    let r3 = [
        r1[1] * r2[2] - r1[2] * r2[1],
        r1[2] * r2[0] - r1[0] * r2[2],
        r1[0] * r2[1] - r1[1] * r2[0],
    ];
    let rotation = DMatrix::from_row_slice(
        3,
        3,
        &[
            r1[0], r1[1], r1[2], //
            r2[0], r2[1], r2[2], //
            r3[0], r3[1], r3[2],
        ],
    );
    let projected_mean = &g * x_mean * alpha;
    let t = DVector::from_vec(vec![
        w_mean[0] - projected_mean[0],
        w_mean[1] - projected_mean[1],
    ]);
    CameraPose::new(rotation, alpha, t).ok()
}

/// Joint Gauss-Newton refinement over coefficients and projection rows.
///
/// The camera/coefficient alternation converges linearly and can stall just
/// above the target residual; a few joint least-squares steps finish the
/// job. The refined state is committed all-or-nothing, so the trace stays
/// consistent and non-increasing.
fn joint_refine_asm(
    w: &DMatrix<f64>,
    basis: &[&DMatrix<f64>],
    c: &mut Vec<f64>,
    cam: &mut CameraPose,
    residual: &mut f64,
    trace: &mut Vec<f64>,
    opts: &AsmOptions,
) {
    let n = basis.len();
    let (wc, w_mean) = center_columns(w);
    let dim = (n - 1) + 6;
    let h = 1e-6;

    let mut reduced: Vec<f64> = c[..n - 1].to_vec();
    let mut g_raw = cam.rotation().rows(0, 2).into_owned();
    let mut res = *residual;
    let mut local_trace = Vec::new();

    for _ in 0..opts.max_iters {
        let prev = res;
        let r0 = match varpro_residual(&wc, basis, &reduced, &g_raw) {
            Some(r) => r,
            None => break,
        };
        let rows = r0.len();
        let mut jac = DMatrix::zeros(rows, dim);
        let mut ok = true;
        for p_idx in 0..dim {
            let perturb = |sign: f64| -> Option<Vec<f64>> {
                let mut red = reduced.clone();
                let mut gr = g_raw.clone();
                if p_idx < n - 1 {
                    red[p_idx] += sign * h;
                } else {
                    let e = p_idx - (n - 1);
                    gr[(e / 3, e % 3)] += sign * h;
                }
                varpro_residual(&wc, basis, &red, &gr)
            };
            match (perturb(1.0), perturb(-1.0)) {
                (Some(rp), Some(rm)) => {
                    for i in 0..rows {
                        jac[(i, p_idx)] = (rp[i] - rm[i]) / (2.0 * h);
                    }
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }

        let rhs = DVector::from_vec(r0);
        let svd = jac.svd(true, true);
        let s_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let delta = match svd.solve(&rhs, 1e-10 * s_max.max(1.0)) {
            Ok(d) => -d,
            Err(_) => break,
        };

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut red = reduced.clone();
            let mut gr = g_raw.clone();
            for i in 0..n - 1 {
                red[i] += scale * delta[i];
            }
            for e in 0..6 {
                gr[(e / 3, e % 3)] += scale * delta[n - 1 + e];
            }
            if let Some(r_try) = varpro_residual(&wc, basis, &red, &gr) {
                let norm_try = r_try.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm_try < res {
                    reduced = red;
                    g_raw = gr;
                    res = norm_try;
                    accepted = true;
                    break;
                }
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
        local_trace.push(res);
        if prev - res <= opts.rel_tol * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    if local_trace.is_empty() {
        return;
    }

    // Commit the refined state only when it yields a valid camera.
    let mut c_new = reduced.clone();
    let sum: f64 = reduced.iter().sum();
    c_new.push(1.0 - sum);
    let x = blend(basis, &c_new);
    let (xc, x_mean) = center_columns(&x);
    let g = qr_orthonormalize(&g_raw.transpose()).transpose();
    if let Some(cam_new) = camera_from_rows(g, &wc, &w_mean, &xc, &x_mean) {
        *c = c_new;
        *cam = cam_new;
        *residual = res;
        trace.extend(local_trace);
    }
}

fn run_restart(
    w: &DMatrix<f64>,
    basis: &[&DMatrix<f64>],
    init_rotation: Option<DMatrix<f64>>,
    init_c: Option<Vec<f64>>,
    opts: &AsmOptions,
    restart_index: usize,
) -> Result<AsmResult> {
    let n = basis.len();
    let mut c = init_c.unwrap_or_else(|| vec![1.0 / n as f64; n]);
    let mut warnings = Vec::new();

    let mut cam = match init_rotation {
        None => orthographic_camera_fit(
            &Configuration::new(w.clone())?,
            &Configuration::new(blend(basis, &c))?,
        )?,
        Some(r) => {
            // Scale and translation fitted in closed form for the given rotation.
            let x = blend(basis, &c);
            let (wc, w_mean) = center_columns(w);
            let (xc, x_mean) = center_columns(&x);
            let g = r.rows(0, 2).into_owned();
            let gx = &g * &xc;
            let denom = gx.norm_squared();
            if denom <= f64::MIN_POSITIVE {
                return Err(Error::DegenerateTarget);
            }
            let alpha = (wc.dot(&gx) / denom).abs().max(1e-6);
            let projected_mean = &g * &x_mean * alpha;
            let t = DVector::from_vec(vec![
                w_mean[0] - projected_mean[0],
                w_mean[1] - projected_mean[1],
            ]);
            CameraPose::new(r, alpha, t)?
        }
    };

    let mut residual = projection_residual(w, &blend(basis, &c), &cam);
    let mut trace = vec![residual];

    for _ in 0..opts.max_iters {
        let prev = residual;

        // (b) coefficients given the camera: exact constrained least squares,
        // cannot increase the residual.
        let (c_new, rank_deficient) = coefficient_step(w, basis, &cam);
        if rank_deficient && !warnings.contains(&Warning::RankDeficientCoefficients) {
            warnings.push(Warning::RankDeficientCoefficients);
        }
        c = c_new;
        let x = blend(basis, &c);
        residual = projection_residual(w, &x, &cam);

        // (a) camera given the shape; reject a refit that would increase the
        // residual.
        match orthographic_camera_fit(
            &Configuration::new(w.clone())?,
            &Configuration::new(x.clone())?,
        ) {
            Ok(cam_new) => {
                let r_new = projection_residual(w, &x, &cam_new);
                if r_new <= residual {
                    cam = cam_new;
                    residual = r_new;
                } else if !warnings.contains(&Warning::StalledCameraStep) {
                    warnings.push(Warning::StalledCameraStep);
                }
            }
            Err(Error::DegenerateTarget) => {
                if !warnings.contains(&Warning::StalledCameraStep) {
                    warnings.push(Warning::StalledCameraStep);
                }
            }
            Err(e) => return Err(e),
        }

        trace.push(residual);
        if prev - residual <= opts.rel_tol * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    joint_refine_asm(w, basis, &mut c, &mut cam, &mut residual, &mut trace, opts);

    let shape3d = Configuration::new(blend(basis, &c))?;
    Ok(AsmResult {
        coefficients: c,
        camera: cam,
        shape3d,
        residual,
        trace,
        restart_index,
        warnings,
    })
}

/// ASM reconstruction by alternating camera and coefficient fits.
///
/// Basis configurations are expected to share landmark counts and to be
/// consistently aligned (pipeline responsibility). Multi-start over
/// rotations: the first restart initializes the camera from the mean shape,
/// later restarts from seeded random rotations.
pub fn asm_reconstruct(
    w: &Configuration,
    basis: &[Configuration],
    opts: &AsmOptions,
) -> Result<AsmResult> {
    if basis.is_empty() {
        return Err(Error::InvalidBasis("basis must be nonempty".into()));
    }
    let k = w.landmark_count();
    if k < 4 {
        return Err(Error::InvalidConfiguration(format!(
            "need at least 4 landmarks, got {k}"
        )));
    }
    for (i, b) in basis.iter().enumerate() {
        if b.ambient_dim() != 3 || b.landmark_count() != k {
            return Err(Error::DimensionMismatch(format!(
                "basis shape {i} is {}×{}, expected 3×{k}",
                b.ambient_dim(),
                b.landmark_count()
            )));
        }
    }
    assert_eq!(w.ambient_dim(), 2, "observation must be 2×k");

    let mats: Vec<&DMatrix<f64>> = basis.iter().map(|b| b.matrix()).collect();
    let restarts = opts.restarts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<AsmResult> = None;
    let mut last_err = String::new();
    for restart in 0..restarts {
        let init = if restart == 0 {
            None
        } else {
            Some(random_rotation3(&mut rng))
        };
        match run_restart(w.matrix(), &mats, init, None, opts, restart) {
            Ok(res) => {
                let better = match &best {
                    None => true,
                    Some(b) => res.residual < b.residual,
                };
                if better {
                    best = Some(res);
                }
            }
            Err(e) => last_err = e.to_string(),
        }
    }

    // Orthographic data cannot distinguish a shape from its depth mirror;
    // the mirrored basin has the third column of the projection rows
    // negated. Restart once from the flipped best camera.
    if let Some(current) = &best {
        if current.residual > 1e-12 {
            let r = current.camera.rotation();
            let rows = [
                [r[(0, 0)], r[(0, 1)], -r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], -r[(1, 2)]],
            ];
            let r3 = [
                rows[0][1] * rows[1][2] - rows[0][2] * rows[1][1],
                rows[0][2] * rows[1][0] - rows[0][0] * rows[1][2],
                rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0],
            ];
            let mirrored = DMatrix::from_row_slice(
                3,
                3,
                &[
                    rows[0][0], rows[0][1], rows[0][2], //
                    rows[1][0], rows[1][1], rows[1][2], //
                    r3[0], r3[1], r3[2],
                ],
            );
            if let Ok(res) = run_restart(
                w.matrix(),
                &mats,
                Some(mirrored),
                Some(current.coefficients.clone()),
                opts,
                restarts,
            ) {
                if res.residual < current.residual {
                    best = Some(res);
                }
            }
        }
    }
    best.ok_or(Error::AllRestartsFailed {
        restarts,
        last: last_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::weak_perspective_project;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn random_config3(rng: &mut impl Rng, k: usize) -> Configuration {
        Configuration::new(DMatrix::from_fn(3, k, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    fn random_camera(rng: &mut impl Rng) -> CameraPose {
        let r = random_rotation3(rng);
        let alpha = rng.gen_range(0.5..2.0);
        let t = DVector::from_vec(vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
        CameraPose::new(r, alpha, t).unwrap()
    }

    #[test]
    fn camera_fit_exact_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        for _ in 0..10 {
            let x = random_config3(&mut rng, 10);
            let cam = random_camera(&mut rng);
            let w = weak_perspective_project(&x, &cam);
            let fit = orthographic_camera_fit(&w, &x).unwrap();
            assert!((fit.alpha() - cam.alpha()).abs() < 1e-9, "alpha");
            let diff = (fit.rotation().rows(0, 2) - cam.rotation().rows(0, 2)).norm();
            assert!(diff < 1e-9, "rotation rows differ by {diff}");
            assert!((fit.translation() - cam.translation()).norm() < 1e-9);
        }
    }

    #[test]
    fn camera_fit_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let x = random_config3(&mut rng, 10);
        let cam = random_camera(&mut rng);
        let w = weak_perspective_project(&x, &cam);
        let fit1 = orthographic_camera_fit(&w, &x).unwrap();
        let w3 = Configuration::new(w.matrix() * 3.0).unwrap();
        let fit3 = orthographic_camera_fit(&w3, &x).unwrap();
        assert!((fit3.alpha() - 3.0 * fit1.alpha()).abs() < 1e-9);
        assert!((fit3.rotation() - fit1.rotation()).norm() < 1e-9);
    }

    #[test]
    fn camera_fit_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let x = random_config3(&mut rng, 8);
        let w = Configuration::new(DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0)))
            .unwrap();
        let fit = orthographic_camera_fit(&w, &x).unwrap();
        let fitted = projection_residual(w.matrix(), x.matrix(), &fit);

        let mut best = f64::INFINITY;
        for _ in 0..100_000 {
            let r = random_rotation3(&mut rng);
            let alpha: f64 = rng.gen_range(0.01..3.0);
            let t = DVector::from_vec(vec![
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ]);
            let cam = CameraPose::new(r, alpha, t).unwrap();
            best = best.min(projection_residual(w.matrix(), x.matrix(), &cam));
        }
        assert!(fitted <= best, "fit {fitted} vs sampled {best}");
    }

    #[test]
    fn camera_fit_rejects_rank_deficient_target() {
        let mut line = DMatrix::zeros(3, 5);
        for i in 0..5 {
            line[(0, i)] = i as f64;
            line[(1, i)] = i as f64;
            line[(2, i)] = i as f64;
        }
        let x = Configuration::new(line).unwrap();
        let w = Configuration::new(DMatrix::from_fn(2, 5, |r, c| (r + c) as f64)).unwrap();
        assert!(matches!(
            orthographic_camera_fit(&w, &x),
            Err(Error::DegenerateTarget)
        ));
    }

    #[test]
    fn asm_recovers_basis_member() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let basis: Vec<Configuration> = (0..4).map(|_| random_config3(&mut rng, 10)).collect();
        let cam = random_camera(&mut rng);
        let w = weak_perspective_project(&basis[1], &cam);
        let opts = AsmOptions {
            seed: 9,
            ..AsmOptions::default()
        };
        let res = asm_reconstruct(&w, &basis, &opts).unwrap();
        assert!(res.residual < 1e-8, "residual {}", res.residual);
        assert!((res.coefficients[1] - 1.0).abs() < 1e-4, "{:?}", res.coefficients);
        let sum: f64 = res.coefficients.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asm_single_basis_reduces_to_camera_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(84);
        let basis = vec![random_config3(&mut rng, 8)];
        let w = Configuration::new(DMatrix::from_fn(2, 8, |_, _| rng.gen_range(-1.0..1.0)))
            .unwrap();
        let res = asm_reconstruct(&w, &basis, &AsmOptions::default()).unwrap();
        assert_eq!(res.coefficients, vec![1.0]);
        let direct = orthographic_camera_fit(&w, &basis[0]).unwrap();
        let direct_residual = projection_residual(w.matrix(), basis[0].matrix(), &direct);
        assert!((res.residual - direct_residual).abs() < 1e-9);
    }

    #[test]
    fn asm_target_in_affine_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let basis: Vec<Configuration> = (0..4).map(|_| random_config3(&mut rng, 10)).collect();
        // Affine combination (sums to 1).
        let c = [0.5, 0.3, 0.4, -0.2];
        let mut x = basis[0].matrix() * c[0];
        for j in 1..4 {
            x += basis[j].matrix() * c[j];
        }
        let cam = random_camera(&mut rng);
        let w = weak_perspective_project(&Configuration::new(x).unwrap(), &cam);
        let res = asm_reconstruct(&w, &basis, &AsmOptions::default()).unwrap();
        assert!(res.residual < 1e-8, "residual {}", res.residual);
    }

    #[test]
    fn asm_trace_weakly_decreases_and_shape_is_blend() {
        let mut rng = ChaCha8Rng::seed_from_u64(86);
        let basis: Vec<Configuration> = (0..5).map(|_| random_config3(&mut rng, 9)).collect();
        let w = Configuration::new(DMatrix::from_fn(2, 9, |_, _| rng.gen_range(-1.0..1.0)))
            .unwrap();
        let res = asm_reconstruct(&w, &basis, &AsmOptions::default()).unwrap();
        for pair in res.trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12);
        }
        let mut x = basis[0].matrix() * res.coefficients[0];
        for j in 1..5 {
            x += basis[j].matrix() * res.coefficients[j];
        }
        assert!((res.shape3d.matrix() - &x).norm() < 1e-12);
    }
}
