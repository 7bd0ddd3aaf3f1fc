//! Alternating reconstruction solver: Riemannian descent over the Stiefel
//! rotation interleaved with gradient descent over barycentric weights.
//!
//! Each outer iteration first improves the rotation with the shape fixed,
//! then the weights with the rotation fixed. Both sub-steps only accept
//! Armijo-decreasing moves, so the objective trace is non-increasing by
//! construction. Multiple restarts (identity plus random Stiefel points)
//! guard against poor rotation basins; the best objective wins, ties broken
//! by restart index.

mod jvp;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::barycentric::{inductive_mean, normalize_weights, BarycentricCoords, BasisSet};
use crate::camera::{unique_representative, StiefelPoint, PROJECTION_TOL};
use crate::error::{Error, Result, Warning};
use crate::kendall::{PreShape, ShapePoint};

pub(crate) use jvp::theta_over_sin;

/// How sub-problem gradients are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Central finite differences of the objective (default).
    FiniteDifference,
    /// Closed-form / forward-mode derivatives; must pass `gradient_check`.
    Exact,
}

/// Backtracking line-search parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmijoOptions {
    pub initial_step: f64,
    pub backtrack: f64,
    pub slope: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoOptions {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            backtrack: 0.5,
            slope: 1e-4,
            max_backtracks: 30,
        }
    }
}

/// Solver configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_outer_iters: usize,
    pub inner_iters: usize,
    pub rel_tol: f64,
    pub armijo: ArmijoOptions,
    pub gradient_mode: GradientMode,
    pub fd_step: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_iters: 100,
            inner_iters: 20,
            rel_tol: 1e-6,
            armijo: ArmijoOptions::default(),
            gradient_mode: GradientMode::FiniteDifference,
            fd_step: 1e-6,
            restarts: 3,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.rel_tol <= 0.0 || self.fd_step <= 0.0 {
            return Err(Error::InvalidConfiguration(
                "tolerances must be positive".into(),
            ));
        }
        if !(self.armijo.backtrack > 0.0 && self.armijo.backtrack < 1.0) {
            return Err(Error::InvalidConfiguration(
                "backtrack factor must lie in (0, 1)".into(),
            ));
        }
        if self.armijo.initial_step <= 0.0 || self.armijo.slope <= 0.0 {
            return Err(Error::InvalidConfiguration(
                "line-search parameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a reconstruction run.
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub weights: BarycentricCoords,
    pub rotation: StiefelPoint,
    pub shape3d: ShapePoint,
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub restart_index: usize,
    pub warnings: Vec<Warning>,
}

/// Haar-distributed random Stiefel point from a seed.
pub fn random_stiefel(seed: u64) -> StiefelPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_stiefel_from(&mut rng)
}

pub(crate) fn random_stiefel_from(rng: &mut impl Rng) -> StiefelPoint {
    let g = DMatrix::from_fn(3, 2, |_, _| StandardNormal.sample(rng));
    StiefelPoint::from_computed(qr_orthonormalize(&g))
}

/// Uniform random rotation via unit quaternion.
pub(crate) fn random_rotation3(rng: &mut impl Rng) -> DMatrix<f64> {
    let mut v = [0.0f64; 4];
    let mut n = 0.0;
    while n < 1e-12 {
        for x in v.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
        n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let (w, x, y, z) = (v[0] / n, v[1] / n, v[2] / n, v[3] / n);
    DMatrix::from_row_slice(
        3,
        3,
        &[
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    )
}

/// Thin QR orthonormalization with the positive-diagonal sign convention,
/// so orthonormal inputs map to themselves (a retraction at zero step).
pub(crate) fn qr_orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            for i in 0..q.nrows() {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    q
}

/// Projection of an ambient gradient onto the Stiefel tangent space at `q`:
/// `Ξ = G − Q sym(Qᵀ G)`.
pub(crate) fn tangent_project(q: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let qtg = q.transpose() * g;
    let sym = (&qtg + qtg.transpose()) * 0.5;
    g - q * sym
}

/// Reprojection objective as a function of an arbitrary 3×2 matrix (the
/// ambient extension used for Euclidean gradients), with the unique 3D
/// representative `p3` held fixed.
pub(crate) fn eval_rotation_objective(
    p3: &DMatrix<f64>,
    qmat: &DMatrix<f64>,
    observed: &PreShape,
) -> Result<f64> {
    let m2 = qmat.transpose() * p3;
    let nm = m2.norm();
    if nm <= PROJECTION_TOL {
        return Err(Error::DegenerateProjection { norm: nm });
    }
    let z = m2 / nm;
    let a2 = &z * observed.matrix().transpose();
    let (_, _, s2, _) = jvp::align_jvp(&a2, &DMatrix::zeros(2, 2));
    let theta = s2.clamp(-1.0, 1.0).acos();
    Ok(theta * theta)
}

/// Closed-form Euclidean gradient of [`eval_rotation_objective`] in `qmat`.
///
/// With `M = Qᵀ P`, `Z = M/‖M‖` and `s = Σλ(Z Xᵀ_w)`, the envelope theorem
/// gives `∇_A s = U S Vᵀ`, and the chain back through the normalization
/// yields `∇_Q (θ²) = −2 (θ/sin θ) · P ∇_M sᵀ`.
pub(crate) fn exact_rotation_gradient(
    p3: &DMatrix<f64>,
    qmat: &DMatrix<f64>,
    observed: &PreShape,
) -> Result<(f64, DMatrix<f64>)> {
    let m2 = qmat.transpose() * p3;
    let nm = m2.norm();
    if nm <= PROJECTION_TOL {
        return Err(Error::DegenerateProjection { norm: nm });
    }
    let z = &m2 / nm;
    let xw = observed.matrix();
    let a2 = &z * xw.transpose();

    let (u, d, v) = crate::kendall::svd_sorted(&a2);
    let sign = crate::kendall::det_sign(&u, &v);
    let s = (d[0] + sign * d[1]).clamp(-1.0, 1.0);
    let theta = s.acos();
    let obj = theta * theta;

    let s_mat = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, sign]));
    let grad_a2 = &u * &s_mat * v.transpose();
    let grad_z = &grad_a2 * xw;
    let inner = grad_z.dot(&z);
    let grad_m = (grad_z - &z * inner) / nm;
    let grad_q = p3 * grad_m.transpose();
    let factor = -2.0 * theta_over_sin(theta);
    Ok((obj, grad_q * factor))
}

fn fd_rotation_gradient(
    p3: &DMatrix<f64>,
    qmat: &DMatrix<f64>,
    observed: &PreShape,
    h: f64,
) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(3, 2);
    for i in 0..3 {
        for j in 0..2 {
            let mut qp = qmat.clone();
            qp[(i, j)] += h;
            let fp = eval_rotation_objective(p3, &qp, observed)?;
            qp[(i, j)] -= 2.0 * h;
            let fm = eval_rotation_objective(p3, &qp, observed)?;
            g[(i, j)] = (fp - fm) / (2.0 * h);
        }
    }
    Ok(g)
}

/// Objective for the weight sub-problem at raw weights `w` (prefix validity
/// is the caller's concern).
pub(crate) fn eval_weights_objective(
    basis: &BasisSet,
    w: &[f64],
    qmat: &DMatrix<f64>,
    observed: &PreShape,
    reference: &PreShape,
) -> Result<f64> {
    jvp::objective_weights_dir(basis, w, None, qmat, observed, reference).map(|(f, _)| f)
}

fn exact_weight_gradient(
    basis: &BasisSet,
    w: &[f64],
    qmat: &DMatrix<f64>,
    observed: &PreShape,
    reference: &PreShape,
) -> Result<(f64, Vec<f64>)> {
    let n = w.len();
    let mut grad = vec![0.0; n];
    let mut value = 0.0;
    for i in 0..n {
        let mut dir = vec![0.0; n];
        dir[i] = 1.0;
        let (f, df) =
            jvp::objective_weights_dir(basis, w, Some(&dir), qmat, observed, reference)?;
        value = f;
        grad[i] = df.expect("derivative requested");
    }
    Ok((value, grad))
}

fn fd_weight_gradient(
    basis: &BasisSet,
    w: &[f64],
    qmat: &DMatrix<f64>,
    observed: &PreShape,
    reference: &PreShape,
    h: f64,
) -> Result<Vec<f64>> {
    let f0 = eval_weights_objective(basis, w, qmat, observed, reference)?;
    let n = w.len();
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let mut wp = w.to_vec();
        wp[i] += h;
        let fp = if BarycentricCoords::new(wp.clone()).is_ok() {
            Some(eval_weights_objective(basis, &wp, qmat, observed, reference)?)
        } else {
            None
        };
        wp[i] -= 2.0 * h;
        let fm = if BarycentricCoords::new(wp.clone()).is_ok() {
            Some(eval_weights_objective(basis, &wp, qmat, observed, reference)?)
        } else {
            None
        };
        grad[i] = match (fp, fm) {
            (Some(fp), Some(fm)) => (fp - fm) / (2.0 * h),
            (Some(fp), None) => (fp - f0) / h,
            (None, Some(fm)) => (f0 - fm) / h,
            (None, None) => 0.0,
        };
    }
    Ok(grad)
}

enum StepOutcome {
    Progress,
    ZeroGradient,
    Stalled,
}

/// Line-search state carried across descent steps: a warm-started fallback
/// step plus the previous iterate/gradient pair for Barzilai-Borwein trial
/// steps (kept monotone by the Armijo backtracking).
struct DescentState {
    warm: f64,
    prev_x: Option<Vec<f64>>,
    prev_g: Option<Vec<f64>>,
}

impl DescentState {
    fn new(initial_step: f64) -> Self {
        Self {
            warm: initial_step,
            prev_x: None,
            prev_g: None,
        }
    }

    /// Trial step: BB1 when the curvature estimate is positive, otherwise
    /// the warm-started fallback.
    fn trial_step(&self, x: &[f64], g: &[f64]) -> f64 {
        if let (Some(px), Some(pg)) = (&self.prev_x, &self.prev_g) {
            let mut ss = 0.0;
            let mut sy = 0.0;
            for i in 0..x.len() {
                let s = x[i] - px[i];
                let y = g[i] - pg[i];
                ss += s * s;
                sy += s * y;
            }
            if sy > 1e-300 && ss > 0.0 {
                return (ss / sy).clamp(1e-12, 1e8);
            }
        }
        self.warm
    }

    fn record(&mut self, x: &[f64], g: &[f64], accepted: f64) {
        self.prev_x = Some(x.to_vec());
        self.prev_g = Some(g.to_vec());
        self.warm = accepted * 2.0;
    }
}

/// One Armijo-backtracked Riemannian descent step for the rotation.
fn rotation_descent(
    p3: &DMatrix<f64>,
    q: &StiefelPoint,
    f0: f64,
    observed: &PreShape,
    opts: &SolverOptions,
    state: &mut DescentState,
) -> Result<(StiefelPoint, f64, StepOutcome)> {
    let qmat = q.matrix();
    let grad = match opts.gradient_mode {
        GradientMode::Exact => exact_rotation_gradient(p3, qmat, observed)?.1,
        GradientMode::FiniteDifference => fd_rotation_gradient(p3, qmat, observed, opts.fd_step)?,
    };
    let xi = tangent_project(qmat, &grad);
    let xi_norm_sq = xi.norm_squared();
    if xi_norm_sq.sqrt() < 1e-10 {
        return Ok((q.clone(), f0, StepOutcome::ZeroGradient));
    }
    let mut tau = state.trial_step(qmat.as_slice(), xi.as_slice());
    for _ in 0..=opts.armijo.max_backtracks {
        let candidate = qr_orthonormalize(&(qmat - &xi * tau));
        if let Ok(f_try) = eval_rotation_objective(p3, &candidate, observed) {
            if f_try <= f0 - opts.armijo.slope * tau * xi_norm_sq {
                state.record(qmat.as_slice(), xi.as_slice(), tau);
                return Ok((
                    StiefelPoint::from_computed(candidate),
                    f_try,
                    StepOutcome::Progress,
                ));
            }
        }
        tau *= opts.armijo.backtrack;
    }
    Ok((q.clone(), f0, StepOutcome::Stalled))
}

/// One Armijo-backtracked descent step for the weights, with prefix-sum
/// validity enforced by step-halving and a final gauge-fixing normalization.
fn weight_descent(
    basis: &BasisSet,
    w: &BarycentricCoords,
    f0: f64,
    qmat: &DMatrix<f64>,
    observed: &PreShape,
    reference: &PreShape,
    opts: &SolverOptions,
    state: &mut DescentState,
) -> Result<(BarycentricCoords, f64, StepOutcome)> {
    let grad = match opts.gradient_mode {
        GradientMode::Exact => {
            exact_weight_gradient(basis, w.weights(), qmat, observed, reference)?.1
        }
        GradientMode::FiniteDifference => {
            fd_weight_gradient(basis, w.weights(), qmat, observed, reference, opts.fd_step)?
        }
    };
    let grad_norm_sq: f64 = grad.iter().map(|g| g * g).sum();
    if grad_norm_sq.sqrt() < 1e-10 {
        return Ok((w.clone(), f0, StepOutcome::ZeroGradient));
    }
    let mut tau = state.trial_step(w.weights(), &grad);
    for _ in 0..=opts.armijo.max_backtracks {
        let raw: Vec<f64> = w
            .weights()
            .iter()
            .zip(&grad)
            .map(|(wi, gi)| wi - tau * gi)
            .collect();
        if let Ok(candidate) = BarycentricCoords::new(raw) {
            if let Ok(normalized) = normalize_weights(&candidate) {
                if let Ok(f_try) =
                    eval_weights_objective(basis, normalized.weights(), qmat, observed, reference)
                {
                    if f_try <= f0 - opts.armijo.slope * tau * grad_norm_sq {
                        state.record(w.weights(), &grad, tau);
                        return Ok((normalized, f_try, StepOutcome::Progress));
                    }
                }
            }
        }
        tau *= opts.armijo.backtrack;
    }
    Ok((w.clone(), f0, StepOutcome::Stalled))
}

/// One rotation sub-problem step with the shape estimate held fixed.
///
/// Returns the updated Stiefel point (objective weakly decreased) and a
/// stall warning when no backtracked step made progress.
pub fn rotation_step(
    p_fixed: &ShapePoint,
    q: &StiefelPoint,
    observed: &ShapePoint,
    reference: &PreShape,
    opts: &SolverOptions,
) -> Result<(StiefelPoint, Option<Warning>)> {
    let p3 = unique_representative(p_fixed, reference);
    let f0 = eval_rotation_objective(p3.matrix(), q.matrix(), observed.rep())?;
    let mut state = DescentState::new(opts.armijo.initial_step);
    let (q_new, _, outcome) =
        rotation_descent(p3.matrix(), q, f0, observed.rep(), opts, &mut state)?;
    let warning = match outcome {
        StepOutcome::Stalled => Some(Warning::StalledRotationStep),
        _ => None,
    };
    Ok((q_new, warning))
}

/// One weight sub-problem step with the rotation held fixed.
///
/// The result is re-normalized to sum 1; progress requires an Armijo
/// decrease, otherwise the input weights are returned with a stall warning.
pub fn weight_step(
    w: &BarycentricCoords,
    q_fixed: &StiefelPoint,
    basis: &BasisSet,
    observed: &ShapePoint,
    reference: &PreShape,
    opts: &SolverOptions,
) -> Result<(BarycentricCoords, Option<Warning>)> {
    let f0 = eval_weights_objective(
        basis,
        w.weights(),
        q_fixed.matrix(),
        observed.rep(),
        reference,
    )?;
    let mut state = DescentState::new(opts.armijo.initial_step);
    let (w_new, _, outcome) = weight_descent(
        basis,
        w,
        f0,
        q_fixed.matrix(),
        observed.rep(),
        reference,
        opts,
        &mut state,
    )?;
    let warning = match outcome {
        StepOutcome::Stalled => Some(Warning::StalledWeightStep),
        _ => None,
    };
    Ok((w_new, warning))
}

fn push_unique(warnings: &mut Vec<Warning>, w: Warning) {
    if !warnings.contains(&w) {
        warnings.push(w);
    }
}

/// Chordal residual of the reprojection: the 2D-aligned projected pre-shape
/// minus the observation, flattened. Its squared norm is `4 sin²(d/2)`,
/// monotone in the reprojection objective `d²`, with the same minimizers.
fn chordal_residual(
    basis: &BasisSet,
    w: &[f64],
    qmat: &DMatrix<f64>,
    observed: &PreShape,
    reference: &PreShape,
) -> Result<Vec<f64>> {
    let p = {
        let coords = BarycentricCoords::new(w.to_vec())?;
        inductive_mean(basis, &coords)?
    };
    let p3 = unique_representative(&p, reference);
    let m2 = qmat.transpose() * p3.matrix();
    let nm = m2.norm();
    if nm <= PROJECTION_TOL {
        return Err(Error::DegenerateProjection { norm: nm });
    }
    let z = PreShape::from_computed(m2 / nm);
    let aligned = crate::kendall::well_position(&z, observed);
    let diff = aligned.matrix() - observed.matrix();
    Ok(diff.as_slice().to_vec())
}

/// Joint Gauss-Newton refinement over (weights, rotation).
///
/// The alternating phase settles into a valley where weight and rotation
/// updates are strongly coupled and block descent crawls; a few joint
/// least-squares steps on the chordal residual traverse it. Every accepted
/// step strictly decreases the true objective, so all monotonicity
/// guarantees are preserved.
#[allow(clippy::too_many_arguments)]
fn joint_refine(
    basis: &BasisSet,
    w: &mut BarycentricCoords,
    q: &mut StiefelPoint,
    f: &mut f64,
    observed: &PreShape,
    reference: &PreShape,
    opts: &SolverOptions,
    trace: &mut Vec<f64>,
) -> Result<usize> {
    let n = basis.len();
    let dim = n + 6;
    let h = opts.fd_step;
    let mut iterations = 0;

    for _ in 0..opts.max_outer_iters {
        let f_before = *f;
        let r0 = match chordal_residual(basis, w.weights(), q.matrix(), observed, reference) {
            Ok(r) => r,
            Err(_) => break,
        };
        let rows = r0.len();

        // Central-difference Jacobian over the raw parameter vector.
        let mut jac = DMatrix::zeros(rows, dim);
        let mut param_ok = true;
        for p_idx in 0..dim {
            let mut plus = None;
            let mut minus = None;
            for (slot, sign) in [(0usize, 1.0f64), (1, -1.0)] {
                let mut wv = w.weights().to_vec();
                let mut qm = q.matrix().clone();
                if p_idx < n {
                    wv[p_idx] += sign * h;
                } else {
                    let e = p_idx - n;
                    qm[(e / 2, e % 2)] += sign * h;
                }
                let r = chordal_residual(basis, &wv, &qm, observed, reference).ok();
                if slot == 0 {
                    plus = r;
                } else {
                    minus = r;
                }
            }
            match (plus, minus) {
                (Some(rp), Some(rm)) => {
                    for i in 0..rows {
                        jac[(i, p_idx)] = (rp[i] - rm[i]) / (2.0 * h);
                    }
                }
                _ => {
                    param_ok = false;
                    break;
                }
            }
        }
        if !param_ok {
            break;
        }

        let rhs = nalgebra::DVector::from_vec(r0.clone());
        let svd = jac.svd(true, true);
        let s_max = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let delta = match svd.solve(&rhs, 1e-10 * s_max.max(1.0)) {
            Ok(d) => -d,
            Err(_) => break,
        };

        // Backtracked acceptance on the true objective.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.armijo.max_backtracks {
            let mut wv = w.weights().to_vec();
            let mut qm = q.matrix().clone();
            for i in 0..n {
                wv[i] += scale * delta[i];
            }
            for e in 0..6 {
                qm[(e / 2, e % 2)] += scale * delta[n + e];
            }
            let q_cand = qr_orthonormalize(&qm);
            if let Ok(coords) = BarycentricCoords::new(wv) {
                if let Ok(normalized) = normalize_weights(&coords) {
                    if let Ok(f_try) = eval_weights_objective(
                        basis,
                        normalized.weights(),
                        &q_cand,
                        observed,
                        reference,
                    ) {
                        if f_try < *f {
                            *w = normalized;
                            *q = StiefelPoint::from_computed(q_cand);
                            *f = f_try;
                            accepted = true;
                            break;
                        }
                    }
                }
            }
            scale *= opts.armijo.backtrack;
        }
        if !accepted {
            break;
        }
        iterations += 1;
        trace.push(*f);
        if f_before - *f <= opts.rel_tol * f_before.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(iterations)
}

fn run_restart(
    observed: &ShapePoint,
    basis: &BasisSet,
    reference: &PreShape,
    q0: StiefelPoint,
    w0: BarycentricCoords,
    opts: &SolverOptions,
    restart_index: usize,
) -> Result<ReconstructionResult> {
    let mut w = w0;
    let mut q = q0;
    let mut f = eval_weights_objective(
        basis,
        w.weights(),
        q.matrix(),
        observed.rep(),
        reference,
    )?;
    let mut trace = vec![f];
    let mut warnings = Vec::new();
    let mut iterations = 0;
    let mut rot_state = DescentState::new(opts.armijo.initial_step);
    let mut wt_state = DescentState::new(opts.armijo.initial_step);

    for outer in 0..opts.max_outer_iters {
        iterations = outer + 1;
        let f_before = f;

        // (a) Rotation sub-problem, shape fixed.
        let p = inductive_mean(basis, &w)?;
        let p3 = unique_representative(&p, reference);
        for _ in 0..opts.inner_iters {
            let (q_new, f_new, outcome) =
                rotation_descent(p3.matrix(), &q, f, observed.rep(), opts, &mut rot_state)?;
            q = q_new;
            f = f_new;
            match outcome {
                StepOutcome::Progress => {}
                StepOutcome::ZeroGradient => break,
                StepOutcome::Stalled => {
                    push_unique(&mut warnings, Warning::StalledRotationStep);
                    break;
                }
            }
        }

        // (b) Weight sub-problem, rotation fixed.
        for _ in 0..opts.inner_iters {
            let (w_new, f_new, outcome) = weight_descent(
                basis,
                &w,
                f,
                q.matrix(),
                observed.rep(),
                reference,
                opts,
                &mut wt_state,
            )?;
            w = w_new;
            f = f_new;
            match outcome {
                StepOutcome::Progress => {}
                StepOutcome::ZeroGradient => break,
                StepOutcome::Stalled => {
                    push_unique(&mut warnings, Warning::StalledWeightStep);
                    break;
                }
            }
        }

        trace.push(f);
        if f_before - f <= opts.rel_tol * f_before.max(f64::MIN_POSITIVE) {
            break;
        }
    }

    iterations += joint_refine(
        basis,
        &mut w,
        &mut q,
        &mut f,
        observed.rep(),
        reference,
        opts,
        &mut trace,
    )?;

    let shape3d = inductive_mean(basis, &w)?;
    Ok(ReconstructionResult {
        weights: w,
        rotation: q,
        shape3d,
        objective: f,
        objective_trace: trace,
        iterations,
        restart_index,
        warnings,
    })
}

/// Solves the reconstruction problem with the first basis shape's
/// representative as the fixed reference pre-shape.
pub fn reconstruct(
    observed: &ShapePoint,
    basis: &BasisSet,
    opts: &SolverOptions,
) -> Result<ReconstructionResult> {
    let reference = basis.get(0).rep().clone();
    reconstruct_with_reference(observed, basis, &reference, opts)
}

/// Solves the reconstruction problem with an explicit reference pre-shape.
///
/// Best-of-restarts: restart 0 starts at the identity Stiefel point, later
/// restarts at seeded random points. Fails only when every restart fails at
/// initialization.
pub fn reconstruct_with_reference(
    observed: &ShapePoint,
    basis: &BasisSet,
    reference: &PreShape,
    opts: &SolverOptions,
) -> Result<ReconstructionResult> {
    opts.validate()?;
    if observed.ambient_dim() != 2 {
        return Err(Error::DimensionMismatch(
            "observation must be a 2D shape".into(),
        ));
    }
    if observed.landmark_count() != basis.landmark_count() {
        return Err(Error::DimensionMismatch(format!(
            "observation has {} landmarks, basis has {}",
            observed.landmark_count(),
            basis.landmark_count()
        )));
    }

    let restarts = opts.restarts.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<ReconstructionResult> = None;
    let mut last_err = String::new();
    let n = basis.len();
    for restart in 0..restarts {
        let q0 = if restart == 0 {
            StiefelPoint::identity()
        } else {
            random_stiefel_from(&mut rng)
        };
        match run_restart(
            observed,
            basis,
            reference,
            q0,
            BarycentricCoords::uniform(n),
            opts,
            restart,
        ) {
            Ok(res) => {
                let better = match &best {
                    None => true,
                    Some(b) => res.objective < b.objective,
                };
                if better {
                    best = Some(res);
                }
            }
            Err(e) => last_err = e.to_string(),
        }
    }

    // Orthographic projections cannot tell a shape from its depth mirror:
    // negating the third row of Q projects the mirrored estimate instead.
    // When the alternation settles in the mirror basin, restarting from the
    // flipped camera lands in the true one.
    if let Some(current) = &best {
        if current.objective > 1e-12 {
            let mut flipped = current.rotation.matrix().clone();
            for j in 0..2 {
                flipped[(2, j)] = -flipped[(2, j)];
            }
            let q_mirror = StiefelPoint::from_computed(flipped);
            if let Ok(res) = run_restart(
                observed,
                basis,
                reference,
                q_mirror,
                current.weights.clone(),
                opts,
                restarts,
            ) {
                if res.objective < current.objective {
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

/// Outcome of a gradient verification at one point.
#[derive(Debug, Clone)]
pub struct GradientCheckReport {
    /// Norm of the exact-mode gradient.
    pub grad_norm: f64,
    /// Norm of the central finite-difference gradient at `fd_step`.
    pub fd_norm: f64,
    /// Relative error between exact and finite-difference gradients.
    pub exact_vs_fd: f64,
    /// Relative error between finite differences at `fd_step` and
    /// `10 × fd_step`.
    pub fd_consistency: f64,
    /// `exact_vs_fd < 1e-5` (or both gradients vanish).
    pub pass_exact: bool,
    /// `fd_consistency < 1e-3` (or both gradients vanish).
    pub pass_fd: bool,
}

const EXACT_CHECK_TOL: f64 = 1e-5;
const FD_CHECK_TOL: f64 = 1e-3;

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

fn report_from(exact: &[f64], fd: &[f64], fd_coarse: &[f64]) -> GradientCheckReport {
    let exact_vs_fd = relative_gap(exact, fd);
    let fd_consistency = relative_gap(fd, fd_coarse);
    let grad_norm = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
    let fd_norm = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
    GradientCheckReport {
        grad_norm,
        fd_norm,
        exact_vs_fd,
        fd_consistency,
        pass_exact: exact_vs_fd < EXACT_CHECK_TOL,
        pass_fd: fd_consistency < FD_CHECK_TOL,
    }
}

/// Verifies the rotation sub-problem gradient at `(p, q)`.
pub fn gradient_check_rotation(
    p: &ShapePoint,
    q: &StiefelPoint,
    observed: &ShapePoint,
    reference: &PreShape,
    fd_step: f64,
) -> Result<GradientCheckReport> {
    let p3 = unique_representative(p, reference);
    let (_, exact) = exact_rotation_gradient(p3.matrix(), q.matrix(), observed.rep())?;
    let fd = fd_rotation_gradient(p3.matrix(), q.matrix(), observed.rep(), fd_step)?;
    let fd_coarse = fd_rotation_gradient(p3.matrix(), q.matrix(), observed.rep(), fd_step * 10.0)?;
    Ok(report_from(
        exact.as_slice(),
        fd.as_slice(),
        fd_coarse.as_slice(),
    ))
}

/// Verifies the weight sub-problem gradient at `(w, q)`.
pub fn gradient_check_weights(
    w: &BarycentricCoords,
    q: &StiefelPoint,
    basis: &BasisSet,
    observed: &ShapePoint,
    reference: &PreShape,
    fd_step: f64,
) -> Result<GradientCheckReport> {
    let (_, exact) =
        exact_weight_gradient(basis, w.weights(), q.matrix(), observed.rep(), reference)?;
    let fd = fd_weight_gradient(
        basis,
        w.weights(),
        q.matrix(),
        observed.rep(),
        reference,
        fd_step,
    )?;
    let fd_coarse = fd_weight_gradient(
        basis,
        w.weights(),
        q.matrix(),
        observed.rep(),
        reference,
        fd_step * 10.0,
    )?;
    Ok(report_from(&exact, &fd, &fd_coarse))
}
