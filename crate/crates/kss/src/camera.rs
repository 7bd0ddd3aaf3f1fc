//! Weak-perspective forward model and the shape-space projection map.
//!
//! The ambient forward model is `W = α (R X)_{[1,2]} + t 1ᵀ`. Its quotient
//! counterpart maps a 3D shape to the 2D shape of `Qᵀ P`, where `Q` holds the
//! first two rows of the rotation and `P` is a unique representative picked
//! by well-positioning against a fixed reference pre-shape. Scale and
//! translation disappear in the quotient.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kendall::{shape_distance, well_position, Configuration, PreShape, ShapePoint};

/// Projected configurations with Frobenius norm at or below this collapse.
pub const PROJECTION_TOL: f64 = 1e-10;
/// Orthonormality tolerance for camera rotations and Stiefel points.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// A weak-perspective camera: rotation, positive scale and 2D translation.
#[derive(Debug, Clone)]
pub struct CameraPose {
    rotation: DMatrix<f64>,
    alpha: f64,
    translation: DVector<f64>,
}

impl CameraPose {
    pub fn new(rotation: DMatrix<f64>, alpha: f64, translation: DVector<f64>) -> Result<Self> {
        if rotation.shape() != (3, 3) {
            return Err(Error::DimensionMismatch("rotation must be 3×3".into()));
        }
        let orth = (&rotation * rotation.transpose() - DMatrix::<f64>::identity(3, 3)).norm();
        if orth > ORTHONORMAL_TOL {
            return Err(Error::InvalidConfiguration(format!(
                "rotation is not orthogonal (residual {orth:.3e})"
            )));
        }
        if (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidConfiguration(
                "rotation must have determinant +1".into(),
            ));
        }
        if !(alpha > 0.0) {
            return Err(Error::InvalidConfiguration(format!(
                "scale must be positive, got {alpha}"
            )));
        }
        if translation.len() != 2 {
            return Err(Error::DimensionMismatch("translation must be 2D".into()));
        }
        Ok(Self {
            rotation,
            alpha,
            translation,
        })
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    /// The Stiefel point formed by the first two rows of the rotation.
    pub fn stiefel(&self) -> StiefelPoint {
        StiefelPoint::from_rotation(&self.rotation)
    }
}

/// A 3×2 matrix with orthonormal columns; the transposed first two rows of
/// some rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    q: DMatrix<f64>,
}

impl StiefelPoint {
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if q.shape() != (3, 2) {
            return Err(Error::DimensionMismatch("Stiefel point must be 3×2".into()));
        }
        let residual = (q.transpose() * &q - DMatrix::<f64>::identity(2, 2)).norm();
        if residual > ORTHONORMAL_TOL {
            return Err(Error::InvalidConfiguration(format!(
                "columns are not orthonormal (residual {residual:.3e})"
            )));
        }
        Ok(Self { q })
    }

    pub(crate) fn from_computed(q: DMatrix<f64>) -> Self {
        debug_assert!(
            (q.transpose() * &q - DMatrix::<f64>::identity(2, 2)).norm() < 1e-8,
            "orthonormality drifted"
        );
        Self { q }
    }

    /// First two columns of the identity: the projection dropping the third
    /// coordinate.
    pub fn identity() -> Self {
        let mut q = DMatrix::zeros(3, 2);
        q[(0, 0)] = 1.0;
        q[(1, 1)] = 1.0;
        Self { q }
    }

    /// Transposed first two rows of a rotation matrix.
    pub fn from_rotation(r: &DMatrix<f64>) -> Self {
        assert_eq!(r.shape(), (3, 3));
        Self::from_computed(r.rows(0, 2).transpose())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Completes the transposed columns to a proper rotation: the third row
    /// is the cross product of the first two.
    pub fn to_rotation(&self) -> DMatrix<f64> {
        let r1 = self.q.column(0);
        let r2 = self.q.column(1);
        let r3 = [
            r1[1] * r2[2] - r1[2] * r2[1],
            r1[2] * r2[0] - r1[0] * r2[2],
            r1[0] * r2[1] - r1[1] * r2[0],
        ];
        DMatrix::from_row_slice(
            3,
            3,
            &[
                r1[0], r1[1], r1[2], //
                r2[0], r2[1], r2[2], //
                r3[0], r3[1], r3[2],
            ],
        )
    }
}

/// Ambient weak-perspective projection `W = α (R X)_{[1,2]} + t 1ᵀ`.
pub fn weak_perspective_project(x: &Configuration, cam: &CameraPose) -> Configuration {
    assert_eq!(x.ambient_dim(), 3, "projection expects a 3D configuration");
    let rotated = cam.rotation() * x.matrix();
    let mut w = rotated.rows(0, 2) * cam.alpha();
    for c in 0..w.ncols() {
        w[(0, c)] += cam.translation()[0];
        w[(1, c)] += cam.translation()[1];
    }
    Configuration::new(w).expect("projection of a valid configuration is valid")
}

/// The unique representative of `p` that is well-positioned to `reference`.
pub fn unique_representative(p: &ShapePoint, reference: &PreShape) -> PreShape {
    well_position(p.rep(), reference)
}

/// Projects a 3D shape to the 2D shape of `Qᵀ π†(p)`.
///
/// Centering survives the left multiplication; the result is renormalized to
/// the pre-shape sphere. Fails when the projected configuration collapses
/// (shape viewed edge-on).
pub fn kendall_project(
    p: &ShapePoint,
    q: &StiefelPoint,
    reference: &PreShape,
) -> Result<ShapePoint> {
    assert_eq!(p.ambient_dim(), 3, "kendall_project expects a 3D shape");
    let rep = unique_representative(p, reference);
    let projected = q.matrix().transpose() * rep.matrix();
    let norm = projected.norm();
    if norm <= PROJECTION_TOL {
        return Err(Error::DegenerateProjection { norm });
    }
    Ok(ShapePoint::new(PreShape::from_computed(projected / norm)))
}

/// Squared 2D Kendall distance between the observation `w` and the projection
/// of `p` through `q`.
pub fn reprojection_error(
    p: &ShapePoint,
    q: &StiefelPoint,
    w: &ShapePoint,
    reference: &PreShape,
) -> Result<f64> {
    assert_eq!(w.ambient_dim(), 2, "observation must be a 2D shape");
    let projected = kendall_project(p, q, reference)?;
    let d = shape_distance(w.rep(), projected.rep());
    Ok(d * d)
}
