//! 3D landmark shape estimation from single 2D projections.
//!
//! Landmark shapes live in Kendall's shape space: configurations modulo
//! translation, scale and rotation. Given a set of 3D basis shapes and a
//! single 2D landmark projection, the reconstruction solver searches a
//! barycentric subspace of shape space (parameterized by an inductive
//! weighted-mean recursion over the basis) jointly with a Stiefel-manifold
//! camera rotation, minimizing the squared 2D shape distance between the
//! observation and the projected estimate. The estimate therefore always
//! lies in the subspace spanned by the basis.
//!
//! The crate also ships the classical active-shape-model baseline (linear
//! blends with a weak-perspective camera, fitted by alternating least
//! squares) and an evaluation harness: generalized Procrustes alignment,
//! k-means basis selection, synthetic view projections and error statistics.

pub mod asm;
pub mod barycentric;
pub mod camera;
pub mod error;
pub mod io;
pub mod kendall;
pub mod pipeline;
pub mod solver;

pub use asm::{asm_reconstruct, orthographic_camera_fit, AsmOptions, AsmResult};
pub use barycentric::{
    inductive_mean, normalize_weights, BarycentricCoords, BasisSet,
};
pub use camera::{
    kendall_project, reprojection_error, unique_representative, weak_perspective_project,
    CameraPose, StiefelPoint,
};
pub use error::{Error, Result, Warning};
pub use kendall::{
    align, frechet_mean, geodesic, is_regular, shape_distance, spherical_distance, to_preshape,
    well_position, AlignmentResult, Configuration, PreShape, ShapePoint,
};
pub use pipeline::{
    evaluate, gpa, kmeans_basis, make_test_projection, summarize, ErrorReport, EvaluationOutput,
    ExperimentConfig, GpaResult, InstanceRecord, Method, SummaryStats, ViewSpec,
};
pub use solver::{
    gradient_check_rotation, gradient_check_weights, random_stiefel, reconstruct,
    reconstruct_with_reference, rotation_step, weight_step, ArmijoOptions, GradientCheckReport,
    GradientMode, ReconstructionResult, SolverOptions,
};
