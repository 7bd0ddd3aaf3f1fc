//! Parameterization of the barycentric subspace spanned by a list of basis
//! shapes, via the inductive weighted-mean recursion
//! `μ_1 = b_1`, `μ_j = γ(μ_{j-1}, b_j; w_j / Σ_{l≤j} w_l)`.
//!
//! The recursion depends on the order of the basis; the order of a
//! [`BasisSet`] is never permuted. Weight vectors are valid when every
//! prefix sum stays away from zero, and the parameterization is invariant to
//! rescaling all weights by a common nonzero factor.

use crate::error::{Error, Result};
use crate::kendall::{geodesic, is_regular, shape_distance, ShapePoint};

/// Prefix sums with absolute value at or below this make the recursion
/// ill-conditioned and are rejected.
pub const PREFIX_SUM_TOL: f64 = 1e-9;
/// Basis shapes closer than this are considered duplicates.
pub const DISTINCT_TOL: f64 = 1e-8;
/// Rank tolerance for the regularity check of basis shapes.
pub const REGULARITY_TOL: f64 = 1e-9;

/// An ordered list of distinct, regular 3D basis shapes.
#[derive(Debug, Clone)]
pub struct BasisSet {
    shapes: Vec<ShapePoint>,
    labels: Option<Vec<String>>,
}

impl BasisSet {
    pub fn new(shapes: Vec<ShapePoint>) -> Result<Self> {
        Self::with_labels(shapes, None)
    }

    pub fn with_labels(shapes: Vec<ShapePoint>, labels: Option<Vec<String>>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::InvalidBasis("basis must be nonempty".into()));
        }
        let m = shapes[0].ambient_dim();
        let k = shapes[0].landmark_count();
        if m != 3 {
            return Err(Error::InvalidBasis(format!(
                "basis shapes must be 3-dimensional, got m = {m}"
            )));
        }
        for (i, s) in shapes.iter().enumerate() {
            if s.ambient_dim() != m || s.landmark_count() != k {
                return Err(Error::InvalidBasis(format!(
                    "shape {i} has dimensions {}×{}, expected {m}×{k}",
                    s.ambient_dim(),
                    s.landmark_count()
                )));
            }
            if !is_regular(s.rep(), REGULARITY_TOL) {
                return Err(Error::InvalidBasis(format!(
                    "shape {i} is singular (rank < {})",
                    m - 1
                )));
            }
        }
        for i in 0..shapes.len() {
            for j in (i + 1)..shapes.len() {
                let d = shape_distance(shapes[i].rep(), shapes[j].rep());
                if d <= DISTINCT_TOL {
                    return Err(Error::InvalidBasis(format!(
                        "shapes {i} and {j} coincide (distance {d:.3e})"
                    )));
                }
            }
        }
        if let Some(l) = &labels {
            if l.len() != shapes.len() {
                return Err(Error::InvalidBasis(format!(
                    "{} labels for {} shapes",
                    l.len(),
                    shapes.len()
                )));
            }
        }
        Ok(Self { shapes, labels })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shapes(&self) -> &[ShapePoint] {
        &self.shapes
    }

    pub fn get(&self, i: usize) -> &ShapePoint {
        &self.shapes[i]
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn landmark_count(&self) -> usize {
        self.shapes[0].landmark_count()
    }
}

/// A weight vector parameterizing a point of the barycentric subspace.
///
/// Valid when every prefix sum `Σ_{l≤j} w_l` has absolute value above
/// [`PREFIX_SUM_TOL`] (in particular the total sum is nonzero).
#[derive(Debug, Clone, PartialEq)]
pub struct BarycentricCoords {
    weights: Vec<f64>,
}

impl BarycentricCoords {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("weight vector is empty".into()));
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidWeights("non-finite weight".into()));
        }
        let mut prefix = 0.0;
        for (j, w) in weights.iter().enumerate() {
            prefix += w;
            if prefix.abs() <= PREFIX_SUM_TOL {
                return Err(Error::PrefixSumDegenerate {
                    index: j,
                    value: prefix.abs(),
                });
            }
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Uniform weights `1/n`.
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }
}

/// Divides the weights by their sum so they add up to 1.
///
/// The parameterized point is unchanged (the recursion only sees ratios of
/// prefix sums). Fails with [`Error::ZeroSum`] when the sum vanishes, or
/// with a prefix-sum error when rescaling pushes a prefix below tolerance.
pub fn normalize_weights(w: &BarycentricCoords) -> Result<BarycentricCoords> {
    let total: f64 = w.weights.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroSum);
    }
    BarycentricCoords::new(w.weights.iter().map(|x| x / total).collect())
}

/// Evaluates the inductive weighted-mean recursion.
///
/// Returns `μ_n` where `μ_1 = b_1` and
/// `μ_j = γ(μ_{j-1}, b_j; w_j / Σ_{l≤j} w_l)`. The output is invariant to
/// rescaling all weights by a nonzero scalar.
pub fn inductive_mean(basis: &BasisSet, w: &BarycentricCoords) -> Result<ShapePoint> {
    if basis.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} basis shapes vs {} weights",
            basis.len(),
            w.len()
        )));
    }
    let weights = w.weights();
    let mut mu = basis.get(0).rep().clone();
    let mut prefix = weights[0];
    for j in 1..basis.len() {
        prefix += weights[j];
        let t = weights[j] / prefix;
        mu = geodesic(&mu, basis.get(j).rep(), t)?;
    }
    Ok(ShapePoint::new(mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kendall::{frechet_mean, geodesic, to_preshape, Configuration, PreShape};
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

    fn random_preshape(rng: &mut impl Rng, k: usize) -> PreShape {
        let data = DMatrix::from_fn(3, k, |_, _| rng.gen_range(-1.0..1.0));
        to_preshape(&Configuration::new(data).unwrap()).unwrap()
    }

    fn nearby_basis(rng: &mut impl Rng, n: usize, k: usize, radius: f64) -> BasisSet {
        let base = random_preshape(rng, k);
        let shapes = (0..n)
            .map(|_| {
                let target = random_preshape(rng, k);
                ShapePoint::new(geodesic(&base, &target, radius).unwrap())
            })
            .collect();
        BasisSet::new(shapes).unwrap()
    }

    #[test]
    fn single_shape_basis_returns_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let b = ShapePoint::new(random_preshape(&mut rng, 8));
        let basis = BasisSet::new(vec![b.clone()]).unwrap();
        for &w in &[1.0, -2.0, 0.3] {
            let out = inductive_mean(&basis, &BarycentricCoords::new(vec![w]).unwrap()).unwrap();
            assert!(out.distance(&b) < 1e-12);
        }
    }

    #[test]
    fn indicator_on_first_shape_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let basis = nearby_basis(&mut rng, 4, 8, 0.3);
        let w = BarycentricCoords::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let out = inductive_mean(&basis, &w).unwrap();
        assert!((out.rep().matrix() - basis.get(0).rep().matrix()).norm() < 1e-14);
    }

    #[test]
    fn indicator_on_later_shape_is_rejected() {
        // (0, 1, 0) has a vanishing first prefix sum.
        assert!(matches!(
            BarycentricCoords::new(vec![0.0, 1.0, 0.0]),
            Err(Error::PrefixSumDegenerate { index: 0, .. })
        ));
    }

    #[test]
    fn two_shape_equal_weights_give_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let basis = nearby_basis(&mut rng, 2, 8, 0.4);
        let w = BarycentricCoords::new(vec![0.5, 0.5]).unwrap();
        let out = inductive_mean(&basis, &w).unwrap();
        let d0 = out.distance(basis.get(0));
        let d1 = out.distance(basis.get(1));
        assert!((d0 - d1).abs() < 1e-9, "d0 {d0} d1 {d1}");
        let full = basis.get(0).distance(basis.get(1));
        assert!((d0 + d1 - full).abs() < 1e-9);
    }

    #[test]
    fn two_shape_weights_trace_geodesic() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let basis = nearby_basis(&mut rng, 2, 8, 0.4);
        for &t in &[0.25, 0.5, 0.75] {
            let w = BarycentricCoords::new(vec![1.0 - t, t]).unwrap();
            let out = inductive_mean(&basis, &w).unwrap();
            let on_geo = geodesic(basis.get(0).rep(), basis.get(1).rep(), t).unwrap();
            assert!((out.rep().matrix() - on_geo.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn equal_weights_match_frechet_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let basis = nearby_basis(&mut rng, 3, 9, 0.1);
        let w = BarycentricCoords::uniform(3);
        let inductive = inductive_mean(&basis, &w).unwrap();
        let oracle = frechet_mean(basis.shapes(), &[1.0 / 3.0; 3], 2000, 1e-12).unwrap();
        let gap = inductive.distance(&oracle);
        assert!(gap < 1e-3, "inductive vs Fréchet gap {gap}");
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let basis = nearby_basis(&mut rng, 4, 8, 0.3);
        let w = BarycentricCoords::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let base = inductive_mean(&basis, &w).unwrap();
        for &s in &[-1.0, 0.5, 3.0] {
            let scaled =
                BarycentricCoords::new(w.weights().iter().map(|x| x * s).collect()).unwrap();
            let out = inductive_mean(&basis, &scaled).unwrap();
            assert!(base.distance(&out) < 1e-10, "scale {s}");
        }
    }

    #[test]
    fn normalize_weights_cases() {
        let w = BarycentricCoords::new(vec![2.0, 2.0]).unwrap();
        let n = normalize_weights(&w).unwrap();
        assert_eq!(n.weights(), &[0.5, 0.5]);

        let w = BarycentricCoords::new(vec![1.0, 0.0, 0.0]).unwrap();
        let n = normalize_weights(&w).unwrap();
        assert_eq!(n.weights(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_preserves_inductive_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let basis = nearby_basis(&mut rng, 5, 8, 0.3);
        let w = BarycentricCoords::new(vec![0.9, -0.2, 0.5, 0.35, 0.8]).unwrap();
        let n = normalize_weights(&w).unwrap();
        let a = inductive_mean(&basis, &w).unwrap();
        let b = inductive_mean(&basis, &n).unwrap();
        assert!((a.rep().matrix() - b.rep().matrix()).norm() < 1e-12);
    }

    #[test]
    fn continuity_under_small_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let basis = nearby_basis(&mut rng, 4, 8, 0.5);
        let w = BarycentricCoords::new(vec![0.4, 0.25, 0.2, 0.15]).unwrap();
        let base = inductive_mean(&basis, &w).unwrap();
        for i in 0..4 {
            let mut v = w.weights().to_vec();
            v[i] += 1e-6;
            let out = inductive_mean(&basis, &BarycentricCoords::new(v).unwrap()).unwrap();
            assert!(base.distance(&out) < 1e-4, "coordinate {i}");
        }
    }

    #[test]
    fn basis_rejects_duplicates_and_singular_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let p = random_preshape(&mut rng, 8);
        let dup = BasisSet::new(vec![
            ShapePoint::new(p.clone()),
            ShapePoint::new(p.clone()),
        ]);
        assert!(matches!(dup, Err(Error::InvalidBasis(_))));

        let mut line = DMatrix::zeros(3, 8);
        for i in 0..8 {
            line[(0, i)] = i as f64;
        }
        let line = to_preshape(&Configuration::new(line).unwrap()).unwrap();
        let singular = BasisSet::new(vec![ShapePoint::new(line)]);
        assert!(matches!(singular, Err(Error::InvalidBasis(_))));
    }
}
