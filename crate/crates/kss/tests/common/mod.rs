//! Shared helpers for integration tests: seeded random shapes, rotations and
//! a brute-force alignment oracle kept independent of the library's SVD path.

use kss::{geodesic, to_preshape, Configuration, PreShape, ShapePoint};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_config(rng: &mut impl Rng, m: usize, k: usize) -> Configuration {
    Configuration::new(DMatrix::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
}

pub fn random_preshape(rng: &mut impl Rng, m: usize, k: usize) -> PreShape {
    to_preshape(&random_config(rng, m, k)).unwrap()
}

/// Rotation matrix from a uniform random unit quaternion.
pub fn random_rotation3(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut v = [0.0f64; 4];
    let mut n = 0.0;
    while n < 1e-12 {
        for x in v.iter_mut() {
            *x = rng.gen_range(-1.0..1.0);
        }
        n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let (w, x, y, z) = (v[0] / n, v[1] / n, v[2] / n, v[3] / n);
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// `⟨X, R·Y⟩` on raw column-major slices, written out without any linear
/// algebra library so the oracle stays independent of the implementation.
pub fn inner_after_rotation(x: &[f64], y: &[f64], r: &[[f64; 3]; 3], k: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..k {
        let (y0, y1, y2) = (y[3 * c], y[3 * c + 1], y[3 * c + 2]);
        let ry0 = r[0][0] * y0 + r[0][1] * y1 + r[0][2] * y2;
        let ry1 = r[1][0] * y0 + r[1][1] * y1 + r[1][2] * y2;
        let ry2 = r[2][0] * y0 + r[2][1] * y1 + r[2][2] * y2;
        acc += x[3 * c] * ry0 + x[3 * c + 1] * ry1 + x[3 * c + 2] * ry2;
    }
    acc
}

/// Brute-force shape distance: `arccos` of the maximum of `⟨X, R·Y⟩` over
/// the given rotation samples.
pub fn brute_force_distance(x: &PreShape, y: &PreShape, rotations: &[[[f64; 3]; 3]]) -> f64 {
    let k = x.landmark_count();
    let xs = x.matrix().as_slice();
    let ys = y.matrix().as_slice();
    let mut best = f64::NEG_INFINITY;
    for r in rotations {
        let v = inner_after_rotation(xs, ys, r, k);
        if v > best {
            best = v;
        }
    }
    best.clamp(-1.0, 1.0).acos()
}

/// Shapes inside a geodesic ball of the given radius around a random center.
pub fn clustered_shapes(
    rng: &mut impl Rng,
    count: usize,
    k: usize,
    radius: f64,
) -> Vec<ShapePoint> {
    let base = random_preshape(rng, 3, k);
    (0..count)
        .map(|_| {
            let target = random_preshape(rng, 3, k);
            ShapePoint::new(geodesic(&base, &target, radius).unwrap())
        })
        .collect()
}
