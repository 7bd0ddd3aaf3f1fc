//! Experiment pipeline: generalized Procrustes alignment, k-means basis
//! selection, synthetic test projections, evaluation and statistics.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asm::{asm_reconstruct, AsmOptions};
use crate::barycentric::BasisSet;
use crate::camera::{StiefelPoint, PROJECTION_TOL};
use crate::error::{Error, Result, Warning};
use crate::kendall::{
    shape_distance, spherical_distance, to_preshape, well_position, Configuration, PreShape,
    ShapePoint,
};
use crate::solver::{reconstruct, SolverOptions};

/// Result of generalized Procrustes analysis.
#[derive(Debug, Clone)]
pub struct GpaResult {
    /// Input pre-shapes rotated into the common frame.
    pub aligned: Vec<PreShape>,
    /// Normalized arithmetic mean of the aligned pre-shapes.
    pub mean: PreShape,
    /// `Σᵢ d_S(Xᵢ, mean)²` after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<Warning>,
}

/// Generalized Procrustes analysis.
///
/// Converts configurations into pre-shapes, then iterates: rotate every
/// pre-shape into optimal position against the current mean, recompute the
/// normalized arithmetic mean, until the mean moves less than `tol` or
/// `max_iter` is exhausted (a warning, not an error).
pub fn gpa(configs: &[Configuration], tol: f64, max_iter: usize) -> Result<GpaResult> {
    if configs.len() < 2 {
        return Err(Error::InvalidConfiguration(
            "generalized Procrustes analysis needs at least 2 configurations".into(),
        ));
    }
    let mut aligned: Vec<PreShape> = configs.iter().map(to_preshape).collect::<Result<_>>()?;
    let (m, k) = (aligned[0].ambient_dim(), aligned[0].landmark_count());
    for (i, p) in aligned.iter().enumerate() {
        if p.ambient_dim() != m || p.landmark_count() != k {
            return Err(Error::DimensionMismatch(format!(
                "configuration {i} is {}×{}, expected {m}×{k}",
                p.ambient_dim(),
                p.landmark_count()
            )));
        }
    }

    let mut mean = aligned[0].clone();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iter {
        for p in aligned.iter_mut() {
            *p = well_position(p, &mean);
        }
        let mut sum = DMatrix::zeros(m, k);
        for p in &aligned {
            sum += p.matrix();
        }
        let norm = sum.norm();
        if norm < crate::kendall::DEGENERATE_NORM {
            return Err(Error::DegenerateConfiguration { norm });
        }
        let new_mean = PreShape::from_computed(sum / norm);
        let movement = (new_mean.matrix() - mean.matrix()).norm();
        mean = new_mean;
        trace.push(
            aligned
                .iter()
                .map(|p| spherical_distance(p, &mean).powi(2))
                .sum(),
        );
        if movement < tol {
            converged = true;
            break;
        }
    }
    let warnings = if converged {
        Vec::new()
    } else {
        vec![Warning::GpaNoConvergence]
    };
    Ok(GpaResult {
        aligned,
        mean,
        objective_trace: trace,
        converged,
        warnings,
    })
}

fn flatten(p: &PreShape) -> Vec<f64> {
    p.matrix().as_slice().to_vec()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding; returns centroids and the
/// within-cluster sum of squares.
fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> (Vec<Vec<f64>>, f64) {
    let n = points.len();
    let dim = points[0].len();

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            // All remaining distances vanish (duplicate points); fall back to
            // the first point not yet chosen.
            (0..n)
                .find(|i| !centroids.iter().any(|c| sq_dist(c, &points[*i]) == 0.0))
                .unwrap_or(0)
        } else {
            let target = rng.gen_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc >= target {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        centroids.push(points[idx].clone());
        for (i, p) in points.iter().enumerate() {
            let d = sq_dist(p, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        // Assign.
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }

        // Update; re-seed empty clusters at the point farthest from its
        // assigned centroid (deterministic).
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, v) in sums[assignment[i]].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(&points[a], &centroids[assignment[a]]);
                        let db = sq_dist(&points[b], &centroids[assignment[b]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids[c] = points[farthest].clone();
                assignment[farthest] = c;
                changed = true;
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let wcss: f64 = points
        .iter()
        .zip(&assignment)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    (centroids, wcss)
}

/// Raw k-means centroids, renormalized to pre-shapes (internal; no basis
/// validation).
pub(crate) fn kmeans_preshapes(aligned: &[PreShape], k: usize, seed: u64) -> Result<Vec<PreShape>> {
    if k == 0 || k > aligned.len() {
        return Err(Error::InvalidConfiguration(format!(
            "cluster count {k} must lie in 1..={}",
            aligned.len()
        )));
    }
    let (m, kl) = (aligned[0].ambient_dim(), aligned[0].landmark_count());
    let points: Vec<Vec<f64>> = aligned.iter().map(flatten).collect();

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<Vec<f64>>, f64)> = None;
    for _ in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let (centroids, wcss) = lloyd(&points, k, &mut rng);
        if best.as_ref().map_or(true, |(_, b)| wcss < *b) {
            best = Some((centroids, wcss));
        }
    }
    let (centroids, _) = best.expect("at least one restart ran");

    centroids
        .into_iter()
        .map(|c| {
            let mat = DMatrix::from_column_slice(m, kl, &c);
            to_preshape(&Configuration::new(mat)?)
        })
        .collect()
}

/// Selects `k` basis shapes as k-means centroids of the aligned training
/// pre-shapes (Euclidean metric on flattened coordinates, k-means++ seeding,
/// 20 restarts keeping the lowest within-cluster sum of squares).
pub fn kmeans_basis(aligned: &[PreShape], k: usize, seed: u64) -> Result<BasisSet> {
    let shapes = kmeans_preshapes(aligned, k, seed)?
        .into_iter()
        .map(ShapePoint::new)
        .collect();
    BasisSet::new(shapes)
}

/// View direction for a synthetic test projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSpec {
    /// Drop the third coordinate row.
    AxisZ,
    /// View along the anterior (y) axis; bilaterally symmetric regime.
    AnteriorSymmetric,
    /// View halfway between the anterior and lateral axes; asymmetric regime.
    LateralAsymmetric,
    /// Arbitrary unit view direction.
    Custom([f64; 3]),
}

impl ViewSpec {
    pub fn direction(&self) -> Result<[f64; 3]> {
        let dir = match self {
            ViewSpec::AxisZ => [0.0, 0.0, 1.0],
            ViewSpec::AnteriorSymmetric => [0.0, 1.0, 0.0],
            ViewSpec::LateralAsymmetric => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                [s, s, 0.0]
            }
            ViewSpec::Custom(v) => {
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if (n - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidConfiguration(format!(
                        "view vector must have unit norm, got {n}"
                    )));
                }
                *v
            }
        };
        Ok(dir)
    }

    /// Short identifier used in reports.
    pub fn id(&self) -> String {
        match self {
            ViewSpec::AxisZ => "axis_z".into(),
            ViewSpec::AnteriorSymmetric => "anterior_symmetric".into(),
            ViewSpec::LateralAsymmetric => "lateral_asymmetric".into(),
            ViewSpec::Custom(v) => format!("custom_{:.3}_{:.3}_{:.3}", v[0], v[1], v[2]),
        }
    }
}

/// Stiefel point whose column span is the orthogonal complement of `dir`.
///
/// The complement basis is deterministic: the coordinate axis least aligned
/// with `dir` seeds the first column; the second completes a right-handed
/// triple with the view direction. For `dir = e₃` this returns exactly the
/// identity Stiefel point (the projection dropping the third row).
pub fn stiefel_for_view(dir: [f64; 3]) -> StiefelPoint {
    let axes = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let dots: Vec<f64> = axes
        .iter()
        .map(|a| (a[0] * dir[0] + a[1] * dir[1] + a[2] * dir[2]).abs())
        .collect();
    let mut least = 0;
    for i in 1..3 {
        if dots[i] < dots[least] {
            least = i;
        }
    }
    let a = axes[least];
    let proj = a[0] * dir[0] + a[1] * dir[1] + a[2] * dir[2];
    let mut u1 = [
        a[0] - proj * dir[0],
        a[1] - proj * dir[1],
        a[2] - proj * dir[2],
    ];
    let n = (u1[0] * u1[0] + u1[1] * u1[1] + u1[2] * u1[2]).sqrt();
    for v in u1.iter_mut() {
        *v /= n;
    }
    let u2 = [
        dir[1] * u1[2] - dir[2] * u1[1],
        dir[2] * u1[0] - dir[0] * u1[2],
        dir[0] * u1[1] - dir[1] * u1[0],
    ];
    let q = DMatrix::from_column_slice(3, 2, &[u1[0], u1[1], u1[2], u2[0], u2[1], u2[2]]);
    StiefelPoint::new(q).expect("constructed columns are orthonormal")
}

/// Projects a shape's stored representative along a view direction, returning
/// the 2D projected configuration (centered, norm ≤ 1).
pub fn project_to_view(shape: &ShapePoint, view: &ViewSpec) -> Result<Configuration> {
    let dir = view.direction()?;
    let q = stiefel_for_view(dir);
    let projected = q.matrix().transpose() * shape.rep().matrix();
    let norm = projected.norm();
    if norm <= PROJECTION_TOL {
        return Err(Error::DegenerateProjection { norm });
    }
    Configuration::new(projected)
}

/// Synthetic 2D test shape: the Kendall projection of the shape's stored
/// representative along the view direction.
pub fn make_test_projection(shape: &ShapePoint, view: &ViewSpec) -> Result<ShapePoint> {
    let config = project_to_view(shape, view)?;
    Ok(ShapePoint::new(to_preshape(&config)?))
}

/// Reconstruction methods the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kss,
    AsmNonconvex,
}

impl Method {
    pub fn id(&self) -> &'static str {
        match self {
            Method::Kss => "kss",
            Method::AsmNonconvex => "asm_nonconvex",
        }
    }
}

/// Harness configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub basis_counts: Vec<usize>,
    pub test_count: usize,
    pub view: ViewSpec,
    pub seed: u64,
    pub solver: SolverOptions,
    pub asm: AsmOptions,
    pub methods: Vec<Method>,
    /// Optional Gaussian landmark noise on the 2D observations, as a
    /// fraction of the RMS landmark spread. Off by default.
    pub noise_std: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            basis_counts: vec![32, 64, 128],
            test_count: 200,
            view: ViewSpec::AxisZ,
            seed: 0,
            solver: SolverOptions::default(),
            asm: AsmOptions::default(),
            methods: vec![Method::Kss, Method::AsmNonconvex],
            noise_std: 0.0,
        }
    }
}

/// Summary statistics of a list of errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Lowest datum above `q1 − 1.5·IQR`.
    pub whisker_low: f64,
    /// Highest datum below `q3 + 1.5·IQR`.
    pub whisker_high: f64,
}

/// Quantile by linear interpolation of the sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Mean, population variance, median, quartiles and Tukey whiskers.
pub fn summarize(errors: &[f64]) -> SummaryStats {
    assert!(!errors.is_empty(), "summarize requires a nonempty sample");
    let n = errors.len();
    let mean = errors.iter().sum::<f64>() / n as f64;
    let variance = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = quantile(&sorted, 0.5);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let low_fence = q1 - 1.5 * iqr;
    let high_fence = q3 + 1.5 * iqr;
    let whisker_low = sorted
        .iter()
        .cloned()
        .find(|&v| v >= low_fence)
        .unwrap_or(sorted[0]);
    let whisker_high = sorted
        .iter()
        .rev()
        .cloned()
        .find(|&v| v <= high_fence)
        .unwrap_or(sorted[n - 1]);
    SummaryStats {
        count: n,
        mean,
        variance,
        median,
        q1,
        q3,
        whisker_low,
        whisker_high,
    }
}

/// Aggregated errors for one (method, basis count, view) cell.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub method: Method,
    pub basis_count: usize,
    pub view: String,
    /// Per-instance errors of the successful reconstructions, by instance id.
    pub errors: Vec<f64>,
    pub failures: usize,
    pub stats: SummaryStats,
}

/// One reconstruction attempt in the per-instance log.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceRecord {
    pub instance_id: usize,
    pub method: Method,
    pub basis_count: usize,
    pub view: String,
    /// Shape-space estimation error; `None` when the instance failed.
    pub error: Option<f64>,
    pub failure: Option<String>,
}

/// Full harness output.
#[derive(Debug, Clone)]
pub struct EvaluationOutput {
    pub reports: Vec<ErrorReport>,
    pub per_instance: Vec<InstanceRecord>,
}

fn mix_seed(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    // splitmix64 over a combined stream id.
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(c.wrapping_mul(0x94D0_49BB_1331_11EB));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct TestInstance {
    truth: ShapePoint,
    observed_shape: ShapePoint,
    observed_config: Configuration,
}

/// Runs the full evaluation protocol.
///
/// Training configurations are GPA-aligned; test configurations are rotated
/// into the training frame. When `test_count` is below the test-set size,
/// representative test shapes are picked by k-means on the test set (same
/// selection scheme as the basis). Each test shape is projected along the
/// configured view; every requested method reconstructs it and is scored by
/// the 3D shape distance to the ground truth. Failures are recorded and
/// excluded from the statistics.
pub fn evaluate(
    training: &[Configuration],
    testing: &[Configuration],
    config: &ExperimentConfig,
) -> Result<EvaluationOutput> {
    if testing.is_empty() {
        return Err(Error::InvalidConfiguration("empty test set".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::InvalidConfiguration("no methods requested".into()));
    }
    let gpa_result = gpa(training, 1e-9, 100)?;
    let train_aligned = &gpa_result.aligned;
    for &nb in &config.basis_counts {
        if nb > train_aligned.len() {
            return Err(Error::InvalidConfiguration(format!(
                "basis count {nb} exceeds training set size {}",
                train_aligned.len()
            )));
        }
    }

    // Test shapes in the training frame.
    let mut test_aligned: Vec<PreShape> = Vec::with_capacity(testing.len());
    for c in testing {
        test_aligned.push(well_position(&to_preshape(c)?, &gpa_result.mean));
    }
    let test_shapes: Vec<PreShape> = if config.test_count < test_aligned.len() {
        kmeans_preshapes(&test_aligned, config.test_count, config.seed)?
            .into_iter()
            .map(|p| well_position(&p, &gpa_result.mean))
            .collect()
    } else {
        test_aligned
    };

    // Observations are shared across methods and basis counts.
    let mut instances: Vec<TestInstance> = Vec::with_capacity(test_shapes.len());
    for (i, p) in test_shapes.iter().enumerate() {
        let truth = ShapePoint::new(p.clone());
        let mut observed_config = project_to_view(&truth, &config.view)?;
        if config.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0xA0, i as u64, 0));
            let mat = observed_config.matrix();
            let k = mat.ncols() as f64;
            let scale = mat.norm() / k.sqrt();
            let noisy = mat
                + DMatrix::from_fn(mat.nrows(), mat.ncols(), |_, _| {
                    let g: f64 = rand_distr::Distribution::sample(
                        &rand_distr::StandardNormal,
                        &mut rng,
                    );
                    g * config.noise_std * scale
                });
            observed_config = Configuration::new(noisy)?;
        }
        let observed_shape = ShapePoint::new(to_preshape(&observed_config)?);
        instances.push(TestInstance {
            truth,
            observed_shape,
            observed_config,
        });
    }

    let mut reports = Vec::new();
    let mut per_instance = Vec::new();
    for (nb_idx, &nb) in config.basis_counts.iter().enumerate() {
        let basis = kmeans_basis(train_aligned, nb, config.seed)?;
        let basis_configs: Vec<Configuration> = basis
            .shapes()
            .iter()
            .map(|s| Configuration::new(s.rep().matrix().clone()))
            .collect::<Result<_>>()?;

        for (m_idx, method) in config.methods.iter().enumerate() {
            let results: Vec<(Option<f64>, Option<String>)> = instances
                .par_iter()
                .enumerate()
                .map(|(i, inst)| {
                    let inst_seed =
                        mix_seed(config.seed, nb_idx as u64, m_idx as u64, i as u64);
                    match method {
                        Method::Kss => {
                            let opts = SolverOptions {
                                seed: inst_seed,
                                ..config.solver.clone()
                            };
                            match reconstruct(&inst.observed_shape, &basis, &opts) {
                                Ok(res) => {
                                    let err = shape_distance(
                                        inst.truth.rep(),
                                        res.shape3d.rep(),
                                    );
                                    (Some(err), None)
                                }
                                Err(e) => (None, Some(e.to_string())),
                            }
                        }
                        Method::AsmNonconvex => {
                            let opts = AsmOptions {
                                seed: inst_seed,
                                ..config.asm.clone()
                            };
                            match asm_reconstruct(&inst.observed_config, &basis_configs, &opts)
                            {
                                Ok(res) => match to_preshape(&res.shape3d) {
                                    Ok(p) => {
                                        let err = shape_distance(inst.truth.rep(), &p);
                                        (Some(err), None)
                                    }
                                    Err(e) => (None, Some(e.to_string())),
                                },
                                Err(e) => (None, Some(e.to_string())),
                            }
                        }
                    }
                })
                .collect();

            let mut errors = Vec::new();
            let mut failures = 0;
            for (i, (err, failure)) in results.into_iter().enumerate() {
                if err.is_none() {
                    failures += 1;
                }
                if let Some(e) = err {
                    errors.push(e);
                }
                per_instance.push(InstanceRecord {
                    instance_id: i,
                    method: *method,
                    basis_count: nb,
                    view: config.view.id(),
                    error: err,
                    failure,
                });
            }
            if errors.is_empty() {
                return Err(Error::AllRestartsFailed {
                    restarts: instances.len(),
                    last: format!("every instance failed for {} / {nb}", method.id()),
                });
            }
            let stats = summarize(&errors);
            reports.push(ErrorReport {
                method: *method,
                basis_count: nb,
                view: config.view.id(),
                errors,
                failures,
                stats,
            });
        }
    }
    Ok(EvaluationOutput {
        reports,
        per_instance,
    })
}

/// Renders the per-instance CSV (failures carry `NaN` in the error column).
pub fn per_instance_csv(records: &[InstanceRecord]) -> String {
    let mut out = String::from("instance_id,method,basis_count,view,error\n");
    for r in records {
        let err = match r.error {
            Some(e) => format!("{e}"),
            None => "NaN".into(),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.instance_id,
            r.method.id(),
            r.basis_count,
            r.view,
            err
        ));
    }
    out
}

/// Renders the summary CSV.
pub fn summary_csv(reports: &[ErrorReport]) -> String {
    let mut out = String::from("method,basis_count,view,mean,variance,median,q1,q3,failures\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method.id(),
            r.basis_count,
            r.view,
            r.stats.mean,
            r.stats.variance,
            r.stats.median,
            r.stats.q1,
            r.stats.q3,
            r.failures
        ));
    }
    out
}
