//! Built-in numerical self checks: gradient verification, a brute-force
//! alignment oracle and geodesic identities. Prints one row per check and
//! exits nonzero on any failure.
//!
//! The oracle code here is deliberately written against raw slices, not the
//! library's linear algebra path, so it stays an independent witness.

use std::process::ExitCode;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use kss::{
    geodesic, gradient_check_rotation, gradient_check_weights, inductive_mean, random_stiefel,
    shape_distance, to_preshape, BarycentricCoords, BasisSet, Configuration, PreShape, ShapePoint,
};

struct CheckRow {
    name: &'static str,
    residual: f64,
    threshold: f64,
}

impl CheckRow {
    fn passed(&self) -> bool {
        self.residual < self.threshold
    }
}

fn random_config(rng: &mut impl Rng, m: usize, k: usize) -> Configuration {
    Configuration::new(DMatrix::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
}

fn random_preshape(rng: &mut impl Rng, m: usize, k: usize) -> PreShape {
    to_preshape(&random_config(rng, m, k)).unwrap()
}

fn random_rotation_raw(rng: &mut impl Rng) -> [[f64; 3]; 3] {
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

/// Max of `⟨X, R·Y⟩` over rotation samples, on raw column-major slices.
fn sampled_max_inner(x: &[f64], y: &[f64], k: usize, rotations: &[[[f64; 3]; 3]]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for r in rotations {
        let mut acc = 0.0;
        for c in 0..k {
            let (y0, y1, y2) = (y[3 * c], y[3 * c + 1], y[3 * c + 2]);
            acc += x[3 * c] * (r[0][0] * y0 + r[0][1] * y1 + r[0][2] * y2)
                + x[3 * c + 1] * (r[1][0] * y0 + r[1][1] * y1 + r[1][2] * y2)
                + x[3 * c + 2] * (r[2][0] * y0 + r[2][1] * y1 + r[2][2] * y2);
        }
        if acc > best {
            best = acc;
        }
    }
    best
}

fn nearby_basis(rng: &mut impl Rng, n: usize, k: usize, radius: f64) -> BasisSet {
    let base = random_preshape(rng, 3, k);
    let shapes = (0..n)
        .map(|_| {
            let target = random_preshape(rng, 3, k);
            ShapePoint::new(geodesic(&base, &target, radius).unwrap())
        })
        .collect();
    BasisSet::new(shapes).unwrap()
}

fn gradient_checks(rows: &mut Vec<CheckRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_rot_exact = 0.0f64;
    let mut worst_rot_fd = 0.0f64;
    let mut worst_wt_exact = 0.0f64;
    let mut worst_wt_fd = 0.0f64;
    for _ in 0..20 {
        let basis = nearby_basis(&mut rng, 4, 9, 0.3);
        let reference = basis.get(0).rep().clone();
        let q = random_stiefel(rng.gen());
        let observed = ShapePoint::new(random_preshape(&mut rng, 2, 9));
        let raw: Vec<f64> = (0..4).map(|_| rng.gen_range(0.1..0.5)).collect();
        let w = BarycentricCoords::new(raw).unwrap();
        let p = inductive_mean(&basis, &w).unwrap();

        let rot = gradient_check_rotation(&p, &q, &observed, &reference, 1e-6).unwrap();
        worst_rot_exact = worst_rot_exact.max(rot.exact_vs_fd);
        worst_rot_fd = worst_rot_fd.max(rot.fd_consistency);
        let wt = gradient_check_weights(&w, &q, &basis, &observed, &reference, 1e-6).unwrap();
        worst_wt_exact = worst_wt_exact.max(wt.exact_vs_fd);
        worst_wt_fd = worst_wt_fd.max(wt.fd_consistency);
    }
    rows.push(CheckRow {
        name: "rotation gradient: exact vs finite differences",
        residual: worst_rot_exact,
        threshold: 1e-5,
    });
    rows.push(CheckRow {
        name: "rotation gradient: two-step finite differences",
        residual: worst_rot_fd,
        threshold: 1e-3,
    });
    rows.push(CheckRow {
        name: "weight gradient: exact vs finite differences",
        residual: worst_wt_exact,
        threshold: 1e-5,
    });
    rows.push(CheckRow {
        name: "weight gradient: two-step finite differences",
        residual: worst_wt_fd,
        threshold: 1e-3,
    });
}

fn distance_oracle(rows: &mut Vec<CheckRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Debug hook: deliberately corrupt the comparison to prove the harness
    // detects broken distances.
    let fault = std::env::var("KSS_SELFCHECK_FAULT").ok();
    let sign = if fault.as_deref() == Some("sign") {
        -1.0
    } else {
        1.0
    };

    let rotations: Vec<[[f64; 3]; 3]> = (0..1_000_000)
        .map(|_| random_rotation_raw(&mut rng))
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = random_preshape(&mut rng, 3, 10);
        let y = random_preshape(&mut rng, 3, 10);
        let exact = sign * shape_distance(&x, &y);
        let sampled = sampled_max_inner(
            x.matrix().as_slice(),
            y.matrix().as_slice(),
            10,
            &rotations,
        )
        .clamp(-1.0, 1.0)
        .acos();
        worst = worst.max((sampled - exact).abs());
    }
    rows.push(CheckRow {
        name: "shape distance vs brute-force rotation sampling",
        residual: worst,
        threshold: 2e-3,
    });
}

fn geodesic_identities(rows: &mut Vec<CheckRow>) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_endpoint = 0.0f64;
    let mut worst_midpoint = 0.0f64;
    let mut worst_arc = 0.0f64;
    for _ in 0..50 {
        let x = random_preshape(&mut rng, 3, 9);
        let y = random_preshape(&mut rng, 3, 9);
        let d = shape_distance(&x, &y);

        let start = geodesic(&x, &y, 0.0).unwrap();
        worst_endpoint = worst_endpoint.max((start.matrix() - x.matrix()).norm());
        let end = geodesic(&x, &y, 1.0).unwrap();
        worst_endpoint = worst_endpoint.max(shape_distance(&end, &y));

        let mid = geodesic(&x, &y, 0.5).unwrap();
        worst_midpoint = worst_midpoint.max((shape_distance(&x, &mid) - d / 2.0).abs());
        worst_midpoint = worst_midpoint.max((shape_distance(&mid, &y) - d / 2.0).abs());

        let g1 = geodesic(&x, &y, 0.25).unwrap();
        let g2 = geodesic(&x, &y, 0.85).unwrap();
        worst_arc = worst_arc.max((shape_distance(&g1, &g2) - 0.6 * d).abs());
    }
    rows.push(CheckRow {
        name: "geodesic endpoints",
        residual: worst_endpoint,
        threshold: 1e-8,
    });
    rows.push(CheckRow {
        name: "geodesic midpoint equidistance",
        residual: worst_midpoint,
        threshold: 1e-8,
    });
    rows.push(CheckRow {
        name: "geodesic arc-length proportionality",
        residual: worst_arc,
        threshold: 1e-8,
    });
}

pub fn run() -> ExitCode {
    let mut rows = Vec::new();
    gradient_checks(&mut rows);
    distance_oracle(&mut rows);
    geodesic_identities(&mut rows);

    println!(
        "{:<52} {:>6} {:>12} {:>12}",
        "CHECK", "RESULT", "RESIDUAL", "THRESHOLD"
    );
    let mut all_pass = true;
    for row in &rows {
        let ok = row.passed();
        all_pass &= ok;
        println!(
            "{:<52} {:>6} {:>12.3e} {:>12.1e}",
            row.name,
            if ok { "pass" } else { "FAIL" },
            row.residual,
            row.threshold
        );
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
