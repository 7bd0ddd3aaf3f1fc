//! Kendall shape-space primitives: pre-shapes, optimal rotational alignment,
//! the quotient distance, geodesics and weighted Fréchet means.
//!
//! A landmark configuration is an `m × k` matrix with landmarks as columns
//! (`m ∈ {2, 3}`). Removing translation (row-wise centering) and scale
//! (unit Frobenius norm) yields a pre-shape, a point on the unit sphere in
//! the space of centered matrices. A shape is the orbit of a pre-shape under
//! left multiplication with rotations, and the shape distance is the minimal
//! spherical distance over the orbit, `arccos Σ λ_i`, where the `λ_i` are the
//! pseudo-singular values of the cross-covariance `Y Xᵀ` (the smallest one
//! carries the determinant sign).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tolerance used when validating pre-shape invariants.
pub const PRESHAPE_TOL: f64 = 1e-10;
/// Centered configurations with Frobenius norm below this are degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Shape distances within this margin of π are treated as antipodal.
pub const ANTIPODAL_MARGIN: f64 = 1e-6;
/// Alignments whose two smallest singular values are closer than this are
/// flagged as non-unique.
pub const NON_UNIQUE_TOL: f64 = 1e-9;

/// A raw landmark matrix: `m` rows (ambient dimension) by `k` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    data: DMatrix<f64>,
}

impl Configuration {
    /// Validates ambient dimension (2 or 3), landmark count (`k ≥ m + 1`)
    /// and finiteness of all entries.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (m, k) = data.shape();
        if m != 2 && m != 3 {
            return Err(Error::InvalidConfiguration(format!(
                "ambient dimension must be 2 or 3, got {m}"
            )));
        }
        if k < m + 1 {
            return Err(Error::InvalidConfiguration(format!(
                "need at least {} landmarks for dimension {m}, got {k}",
                m + 1
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfiguration(
                "matrix contains non-finite entries".into(),
            ));
        }
        Ok(Self { data })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// Ambient dimension `m`.
    pub fn ambient_dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of landmarks `k`.
    pub fn landmark_count(&self) -> usize {
        self.data.ncols()
    }
}

/// A centered, unit-Frobenius-norm landmark matrix: a point on the pre-shape
/// sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct PreShape {
    data: DMatrix<f64>,
}

impl PreShape {
    /// Validates the centering and unit-norm invariants to [`PRESHAPE_TOL`].
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let (m, k) = data.shape();
        if (m != 2 && m != 3) || k < m + 1 {
            return Err(Error::InvalidPreShape(format!("invalid shape {m}×{k}")));
        }
        for r in 0..m {
            let s: f64 = data.row(r).iter().sum();
            if s.abs() > PRESHAPE_TOL {
                return Err(Error::InvalidPreShape(format!(
                    "row {r} sums to {s:.3e}, expected 0"
                )));
            }
        }
        let norm = data.norm();
        if (norm - 1.0).abs() > PRESHAPE_TOL {
            return Err(Error::InvalidPreShape(format!(
                "Frobenius norm is {norm}, expected 1"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPreShape("non-finite entries".into()));
        }
        Ok(Self { data })
    }

    /// Wraps a matrix produced by an operation that preserves the invariants.
    pub(crate) fn from_computed(data: DMatrix<f64>) -> Self {
        debug_assert!((data.norm() - 1.0).abs() < 1e-8, "norm drifted");
        Self { data }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn ambient_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn landmark_count(&self) -> usize {
        self.data.ncols()
    }
}

/// A shape: the rotation orbit of a pre-shape, stored via a representative.
///
/// The representative is the pre-shape as supplied at construction; it is
/// never silently re-aligned. All quotient operations act through explicit
/// well-positioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapePoint {
    rep: PreShape,
}

impl ShapePoint {
    pub fn new(rep: PreShape) -> Self {
        Self { rep }
    }

    pub fn rep(&self) -> &PreShape {
        &self.rep
    }

    pub fn ambient_dim(&self) -> usize {
        self.rep.ambient_dim()
    }

    pub fn landmark_count(&self) -> usize {
        self.rep.landmark_count()
    }

    /// Kendall distance to another shape.
    pub fn distance(&self, other: &ShapePoint) -> f64 {
        shape_distance(&self.rep, &other.rep)
    }
}

/// Outcome of the optimal rotational alignment of two pre-shapes.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    /// The rotation `R*` maximizing `⟨X, R·Y⟩` over `SO(m)`.
    pub rotation: DMatrix<f64>,
    /// `Σ λ_i = ⟨X, R*·Y⟩`, the cosine of the shape distance, in `[-1, 1]`.
    pub pseudo_singular_sum: f64,
    /// Singular values of `Y Xᵀ` in descending order (all non-negative; the
    /// sign convention only affects the sum).
    pub singular_values: Vec<f64>,
    /// True when the two smallest singular values coincide within
    /// [`NON_UNIQUE_TOL`], i.e. the optimal rotation is not unique.
    pub non_unique: bool,
}

/// SVD with singular values sorted in descending order.
///
/// Returns `(U, σ, V)` with `A = U diag(σ) Vᵀ`.
pub(crate) fn svd_sorted(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).expect("finite singular values"));

    let (m, r) = (u.nrows(), s.len());
    let n = vt.ncols();
    let mut u_s = DMatrix::zeros(m, r);
    let mut v_s = DMatrix::zeros(n, r);
    let mut sig = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        u_s.set_column(dst, &u.column(src));
        v_s.set_column(dst, &vt.row(src).transpose());
        sig.push(s[src]);
    }
    (u_s, sig, v_s)
}

/// Determinant sign (+1.0 or -1.0) of `V Uᵀ` for square orthogonal factors.
pub(crate) fn det_sign(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    if (v * u.transpose()).determinant() < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Centers and normalizes a configuration into a pre-shape.
///
/// Fails with [`Error::DegenerateConfiguration`] when all landmarks coincide.
pub fn to_preshape(c: &Configuration) -> Result<PreShape> {
    let mut x = c.matrix().clone();
    let k = x.ncols() as f64;
    for r in 0..x.nrows() {
        let mean: f64 = x.row(r).iter().sum::<f64>() / k;
        for v in x.row_mut(r).iter_mut() {
            *v -= mean;
        }
    }
    let norm = x.norm();
    if norm < DEGENERATE_NORM {
        return Err(Error::DegenerateConfiguration { norm });
    }
    x /= norm;
    Ok(PreShape { data: x })
}

/// Optimal rotational alignment of `Y` onto `X`.
///
/// Computes the SVD `Y Xᵀ = U D Vᵀ` and returns `R* = V S Uᵀ` with
/// `S = diag(1, …, 1, det(V Uᵀ))`, which maximizes `⟨X, R·Y⟩` over `SO(m)`.
pub fn align(x: &PreShape, y: &PreShape) -> AlignmentResult {
    assert_eq!(
        x.matrix().shape(),
        y.matrix().shape(),
        "pre-shapes must share dimensions"
    );
    let m = x.ambient_dim();
    let a = y.matrix() * x.matrix().transpose();
    let (u, d, v) = svd_sorted(&a);
    let sign = det_sign(&u, &v);

    let mut s_diag = vec![1.0; m];
    s_diag[m - 1] = sign;
    let rotation = &v * DMatrix::from_diagonal(&DVector::from_vec(s_diag)) * u.transpose();

    let mut sum: f64 = d[..m - 1].iter().sum();
    sum += sign * d[m - 1];
    let pseudo_singular_sum = sum.clamp(-1.0, 1.0);
    let non_unique = (d[m - 2] - d[m - 1]).abs() <= NON_UNIQUE_TOL;

    AlignmentResult {
        rotation,
        pseudo_singular_sum,
        singular_values: d,
        non_unique,
    }
}

/// Cosines above this switch the distance evaluation to the chordal form,
/// which stays accurate where `arccos` loses resolution.
const NEAR_ONE: f64 = 1.0 - 1e-6;

/// `arccos c`, with the near-coincident case evaluated as `2 asin(chord/2)`
/// from the chord length (identical on the sphere, well conditioned at 0).
fn sphere_angle(c: f64, chord: f64) -> f64 {
    if c < NEAR_ONE {
        c.acos()
    } else {
        2.0 * (chord * 0.5).clamp(-1.0, 1.0).asin()
    }
}

/// Kendall shape distance `arccos Σ λ_i` in radians.
pub fn shape_distance(x: &PreShape, y: &PreShape) -> f64 {
    let res = align(x, y);
    let chord = if res.pseudo_singular_sum < NEAR_ONE {
        0.0
    } else {
        (&res.rotation * y.matrix() - x.matrix()).norm()
    };
    sphere_angle(res.pseudo_singular_sum, chord)
}

/// Spherical (pre-shape) distance `arccos ⟨X, Y⟩`; always ≥ the shape distance.
pub fn spherical_distance(x: &PreShape, y: &PreShape) -> f64 {
    let c = x.matrix().dot(y.matrix()).clamp(-1.0, 1.0);
    let chord = if c < NEAR_ONE {
        0.0
    } else {
        (y.matrix() - x.matrix()).norm()
    };
    sphere_angle(c, chord)
}

/// Rotates `Y` into optimal position relative to `X`.
///
/// The result `Y' = R*·Y` satisfies `Y' Xᵀ` symmetric and
/// `d_S(X, Y') = d_Σ(X, Y)`.
pub fn well_position(y: &PreShape, x: &PreShape) -> PreShape {
    well_position_full(y, x).0
}

/// [`well_position`] plus the full alignment result (for non-uniqueness
/// inspection).
pub fn well_position_full(y: &PreShape, x: &PreShape) -> (PreShape, AlignmentResult) {
    let res = align(x, y);
    let rotated = &res.rotation * y.matrix();
    (PreShape::from_computed(rotated), res)
}

/// Point at parameter `t` on the horizontal geodesic from `X` towards the
/// shape of `Y`.
///
/// `Y` is first well-positioned to `X`; the geodesic is the great-circle arc
/// through the representatives, so `t = 0` gives `X`, `t = 1` the shape of
/// `Y`, and `t` outside `[0, 1]` extrapolates. Coincident endpoints yield `X`.
pub fn geodesic(x: &PreShape, y: &PreShape, t: f64) -> Result<PreShape> {
    assert!(t.is_finite(), "geodesic parameter must be finite");
    let yp = well_position(y, x);
    let c = x.matrix().dot(yp.matrix()).clamp(-1.0, 1.0);
    let theta = c.acos();
    if theta >= std::f64::consts::PI - ANTIPODAL_MARGIN {
        return Err(Error::AntipodalShapes { theta });
    }
    if theta < DEGENERATE_NORM {
        return Ok(x.clone());
    }
    let sin_theta = theta.sin();
    let a = (((1.0 - t) * theta).sin()) / sin_theta;
    let b = ((t * theta).sin()) / sin_theta;
    let mut g = x.matrix() * a + yp.matrix() * b;
    let norm = g.norm();
    if norm < DEGENERATE_NORM {
        // t landed on the antipode of the great circle.
        return Err(Error::AntipodalShapes { theta: t * theta });
    }
    g /= norm;
    Ok(PreShape::from_computed(g))
}

/// True iff the landmark matrix has rank ≥ m − 1 (singular values above
/// `tol` times the largest), i.e. the shape lies in the regular stratum.
pub fn is_regular(p: &PreShape, tol: f64) -> bool {
    let svd = p.matrix().clone().svd(false, false);
    let s = svd.singular_values;
    let largest = s.iter().cloned().fold(0.0_f64, f64::max);
    let rank = s.iter().filter(|&&v| v > tol * largest).count();
    rank + 1 >= p.ambient_dim()
}

/// Sphere logarithm of `y` at base point `p` (both unit norm).
pub(crate) fn sphere_log(p: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let c = p.dot(y).clamp(-1.0, 1.0);
    let theta = c.acos();
    if theta < 1e-15 {
        return DMatrix::zeros(p.nrows(), p.ncols());
    }
    let scale = theta / theta.sin();
    (y - p * c) * scale
}

/// Sphere exponential of tangent `v` at base point `p`.
pub(crate) fn sphere_exp(p: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.norm();
    if n < 1e-16 {
        return p.clone();
    }
    let mut out = p * n.cos() + v * (n.sin() / n);
    out /= out.norm();
    out
}

/// Weighted Fréchet mean by fixed-point (Karcher flow) iteration.
///
/// Weights must be positive and sum to 1; the shapes are assumed to lie in a
/// small geodesic ball. Convergence is declared when the weighted sum of
/// well-positioned log directions drops below `tol` in norm.
pub fn frechet_mean(
    shapes: &[ShapePoint],
    weights: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<ShapePoint> {
    if shapes.is_empty() {
        return Err(Error::InvalidWeights("no shapes given".into()));
    }
    if shapes.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} shapes vs {} weights",
            shapes.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::InvalidWeights("weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!(
            "weights must sum to 1, got {total}"
        )));
    }
    if shapes.len() == 1 {
        return Ok(shapes[0].clone());
    }

    let mut p = shapes[0].rep().matrix().clone();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut v = DMatrix::zeros(p.nrows(), p.ncols());
        let pre = PreShape::from_computed(p.clone());
        for (shape, &w) in shapes.iter().zip(weights) {
            let b = well_position(shape.rep(), &pre);
            v += sphere_log(&p, b.matrix()) * w;
        }
        residual = v.norm();
        if residual < tol {
            return Ok(ShapePoint::new(PreShape::from_computed(p)));
        }
        p = sphere_exp(&p, &v);
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    pub(crate) fn random_config(rng: &mut impl Rng, m: usize, k: usize) -> Configuration {
        let data = DMatrix::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0));
        Configuration::new(data).unwrap()
    }

    pub(crate) fn random_preshape(rng: &mut impl Rng, m: usize, k: usize) -> PreShape {
        to_preshape(&random_config(rng, m, k)).unwrap()
    }

    pub(crate) fn random_rotation3(rng: &mut impl Rng) -> DMatrix<f64> {
        // Uniform via unit quaternion.
        let q: [f64; 4] = {
            let mut v = [0.0; 4];
            let mut n = 0.0;
            while n < 1e-12 {
                for x in v.iter_mut() {
                    *x = rng.gen_range(-1.0..1.0f64);
                }
                n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            }
            [v[0] / n, v[1] / n, v[2] / n, v[3] / n]
        };
        let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
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

    fn rotate(p: &PreShape, r: &DMatrix<f64>) -> PreShape {
        PreShape::from_computed(r * p.matrix())
    }

    #[test]
    fn to_preshape_is_idempotent() {
        let c = Configuration::new(DMatrix::from_row_slice(
            3,
            4,
            &[
                1.0, 0.0, 0.0, 0.5, //
                0.0, 1.0, 0.0, -0.5, //
                0.0, 0.0, 1.0, 0.25,
            ],
        ))
        .unwrap();
        let p = to_preshape(&c).unwrap();
        let again = to_preshape(&Configuration::new(p.matrix().clone()).unwrap()).unwrap();
        assert!((p.matrix() - again.matrix()).norm() < 1e-14);
    }

    #[test]
    fn to_preshape_similarity_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_config(&mut rng, 3, 7);
        let mut moved = c.matrix() * 5.0;
        for col in 0..moved.ncols() {
            moved[(0, col)] += 3.0;
            moved[(1, col)] -= 1.5;
            moved[(2, col)] += 0.25;
        }
        let p1 = to_preshape(&c).unwrap();
        let p2 = to_preshape(&Configuration::new(moved).unwrap()).unwrap();
        assert!((p1.matrix() - p2.matrix()).norm() < 1e-12);
    }

    #[test]
    fn to_preshape_invariants_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_config(&mut rng, 3, 15);
        let p = to_preshape(&c).unwrap();
        for r in 0..3 {
            let s: f64 = p.matrix().row(r).iter().sum();
            assert!(s.abs() < 1e-12, "row {r} sum {s}");
        }
        assert!((p.matrix().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn to_preshape_rejects_coincident_landmarks() {
        let c = Configuration::new(DMatrix::from_element(3, 4, 2.5)).unwrap();
        assert!(matches!(
            to_preshape(&c),
            Err(Error::DegenerateConfiguration { .. })
        ));
    }

    #[test]
    fn align_self_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_preshape(&mut rng, 3, 8);
        let res = align(&x, &x);
        assert!((&res.rotation - DMatrix::<f64>::identity(3, 3)).norm() < 1e-9);
        assert!((res.pseudo_singular_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn align_recovers_orbit_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_preshape(&mut rng, 3, 8);
        let r0 = random_rotation3(&mut rng);
        let y = rotate(&x, &r0);
        let res = align(&x, &y);
        // R* · R0 · X = X, so R* = R0⁻¹.
        assert!((&res.rotation - r0.transpose()).norm() < 1e-9);
        assert!((res.pseudo_singular_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn align_maximality_over_sampled_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_preshape(&mut rng, 3, 10);
        let y = random_preshape(&mut rng, 3, 10);
        let best = align(&x, &y).pseudo_singular_sum;
        for _ in 0..10_000 {
            let r = random_rotation3(&mut rng);
            let val = x.matrix().dot(&(&r * y.matrix()));
            assert!(best >= val - 1e-12, "sampled {val} beats aligned {best}");
        }
    }

    #[test]
    fn align_rotation_is_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x = random_preshape(&mut rng, 3, 6);
            let y = random_preshape(&mut rng, 3, 6);
            let r = align(&x, &y).rotation;
            assert!((&r * r.transpose() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-10);
            assert!((r.determinant() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn shape_distance_zero_on_orbit() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_preshape(&mut rng, 3, 9);
        assert!(shape_distance(&x, &x) < 1e-7);
        let r0 = random_rotation3(&mut rng);
        assert!(shape_distance(&x, &rotate(&x, &r0)) < 1e-7);
    }

    #[test]
    fn shape_distance_rotation_invariance_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_preshape(&mut rng, 3, 9);
        let y = random_preshape(&mut rng, 3, 9);
        let d = shape_distance(&x, &y);
        let r = random_rotation3(&mut rng);
        assert!((shape_distance(&rotate(&x, &r), &y) - d).abs() < 1e-9);
        assert!((shape_distance(&x, &rotate(&y, &r)) - d).abs() < 1e-9);
        assert!((shape_distance(&y, &x) - d).abs() < 1e-9);
    }

    #[test]
    fn spherical_distance_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_preshape(&mut rng, 3, 9);
        assert!(spherical_distance(&x, &x) < 1e-7);
        let neg = PreShape::from_computed(-x.matrix().clone());
        assert!((spherical_distance(&x, &neg) - std::f64::consts::PI).abs() < 1e-12);
        for _ in 0..20 {
            let y = random_preshape(&mut rng, 3, 9);
            assert!(spherical_distance(&x, &y) >= shape_distance(&x, &y) - 1e-12);
        }
    }

    #[test]
    fn well_position_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_preshape(&mut rng, 3, 9);

        // Fixed point on itself.
        let same = well_position(&x, &x);
        assert!((same.matrix() - x.matrix()).norm() < 1e-9);

        // Recovers the reference from a rotated copy.
        let r0 = random_rotation3(&mut rng);
        let y = rotate(&x, &r0);
        let back = well_position(&y, &x);
        assert!((back.matrix() - x.matrix()).norm() < 1e-9);

        // Symmetry residual and distance agreement on random pairs.
        for _ in 0..20 {
            let y = random_preshape(&mut rng, 3, 9);
            let yp = well_position(&y, &x);
            let a = yp.matrix() * x.matrix().transpose();
            assert!((&a - a.transpose()).norm() < 1e-9);
            assert!((spherical_distance(&x, &yp) - shape_distance(&x, &y)).abs() < 1e-9);
        }
    }

    #[test]
    fn well_position_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_preshape(&mut rng, 3, 9);
        let y = random_preshape(&mut rng, 3, 9);
        let once = well_position(&y, &x);
        let twice = well_position(&once, &x);
        assert!((once.matrix() - twice.matrix()).norm() < 1e-9);
    }

    #[test]
    fn geodesic_endpoints_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_preshape(&mut rng, 3, 9);
        let y = random_preshape(&mut rng, 3, 9);

        let start = geodesic(&x, &y, 0.0).unwrap();
        assert!((start.matrix() - x.matrix()).norm() < 1e-12);

        let end = geodesic(&x, &y, 1.0).unwrap();
        assert!(shape_distance(&end, &y) < 1e-7);

        let mid = geodesic(&x, &y, 0.5).unwrap();
        let d = shape_distance(&x, &y);
        assert!((shape_distance(&x, &mid) - d / 2.0).abs() < 1e-9);
        assert!((shape_distance(&mid, &y) - d / 2.0).abs() < 1e-9);
    }

    #[test]
    fn geodesic_extrapolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // Pick a pair close enough that 2θ < π.
        let x = random_preshape(&mut rng, 3, 12);
        let y = geodesic(&x, &random_preshape(&mut rng, 3, 12), 0.3).unwrap();
        let theta = shape_distance(&x, &y);
        assert!(2.0 * theta < std::f64::consts::PI);
        let far = geodesic(&x, &y, 2.0).unwrap();
        assert!((spherical_distance(&x, &far) - 2.0 * theta).abs() < 1e-9);
    }

    #[test]
    fn geodesic_arc_length_proportionality() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x = random_preshape(&mut rng, 3, 9);
        let y = random_preshape(&mut rng, 3, 9);
        let d = shape_distance(&x, &y);
        for &(t1, t2) in &[(0.1, 0.4), (0.25, 0.75), (0.5, 0.9)] {
            let g1 = geodesic(&x, &y, t1).unwrap();
            let g2 = geodesic(&x, &y, t2).unwrap();
            assert!((shape_distance(&g1, &g2) - (t2 - t1) * d).abs() < 1e-8);
        }
    }

    #[test]
    fn geodesic_between_coincident_shapes_returns_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_preshape(&mut rng, 3, 9);
        let r0 = random_rotation3(&mut rng);
        let g = geodesic(&x, &rotate(&x, &r0), 0.7).unwrap();
        assert!((g.matrix() - x.matrix()).norm() < 1e-12);
    }

    #[test]
    fn is_regular_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let generic = random_preshape(&mut rng, 3, 15);
        assert!(is_regular(&generic, 1e-9));

        // Collinear landmarks: rank 1.
        let mut line = DMatrix::zeros(3, 5);
        for i in 0..5 {
            line[(0, i)] = i as f64;
            line[(1, i)] = 2.0 * i as f64;
            line[(2, i)] = -(i as f64);
        }
        let line = to_preshape(&Configuration::new(line).unwrap()).unwrap();
        assert!(!is_regular(&line, 1e-9));

        // Planar landmarks: rank 2, still regular for m = 3.
        let mut plane = DMatrix::zeros(3, 6);
        for i in 0..6 {
            let a = i as f64 * 1.1;
            plane[(0, i)] = a.cos();
            plane[(1, i)] = a.sin();
        }
        let plane = to_preshape(&Configuration::new(plane).unwrap()).unwrap();
        assert!(is_regular(&plane, 1e-9));
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let a = random_preshape(&mut rng, 3, 7);
            let b = random_preshape(&mut rng, 3, 7);
            let c = random_preshape(&mut rng, 3, 7);
            let ab = shape_distance(&a, &b);
            let bc = shape_distance(&b, &c);
            let ac = shape_distance(&a, &c);
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn frechet_mean_single_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let x = ShapePoint::new(random_preshape(&mut rng, 3, 9));
        let mean = frechet_mean(std::slice::from_ref(&x), &[1.0], 100, 1e-12).unwrap();
        assert_eq!(mean.rep().matrix(), x.rep().matrix());
    }

    #[test]
    fn frechet_mean_two_shapes_is_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = random_preshape(&mut rng, 3, 9);
        let y = geodesic(&x, &random_preshape(&mut rng, 3, 9), 0.2).unwrap();
        let mid = geodesic(&x, &y, 0.5).unwrap();
        let mean = frechet_mean(
            &[
                ShapePoint::new(x.clone()),
                ShapePoint::new(y.clone()),
            ],
            &[0.5, 0.5],
            500,
            1e-12,
        )
        .unwrap();
        assert!(shape_distance(mean.rep(), &mid) < 1e-7);
    }

    #[test]
    fn frechet_mean_stationarity_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let base = random_preshape(&mut rng, 3, 9);
        let shapes: Vec<ShapePoint> = (0..3)
            .map(|_| {
                let target = random_preshape(&mut rng, 3, 9);
                ShapePoint::new(geodesic(&base, &target, 0.05).unwrap())
            })
            .collect();
        let w = [1.0 / 3.0; 3];
        let mean = frechet_mean(&shapes, &w, 1000, 1e-10).unwrap();

        // Recompute the stationarity residual directly.
        let p = mean.rep().matrix().clone();
        let pre = PreShape::from_computed(p.clone());
        let mut v = DMatrix::zeros(3, 9);
        for (s, &wi) in shapes.iter().zip(&w) {
            let b = well_position(s.rep(), &pre);
            v += sphere_log(&p, b.matrix()) * wi;
        }
        assert!(v.norm() < 1e-8, "residual {}", v.norm());
    }

    #[test]
    fn frechet_mean_rejects_bad_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = ShapePoint::new(random_preshape(&mut rng, 3, 9));
        let y = ShapePoint::new(random_preshape(&mut rng, 3, 9));
        assert!(frechet_mean(&[x.clone(), y.clone()], &[0.5, -0.5], 10, 1e-8).is_err());
        assert!(frechet_mean(&[x, y], &[0.7, 0.7], 10, 1e-8).is_err());
    }
}
