//! Independent reference computations for the test suites.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use radfuse::boxes::{Box3D, ObjectClass};

pub fn random_box(r: &mut ChaCha8Rng) -> Box3D {
    Box3D::new(
        [r.random_range(-10.0..10.0), r.random_range(-10.0..10.0), r.random_range(-1.0..1.0)],
        [r.random_range(0.3..8.0), r.random_range(0.3..4.0), r.random_range(0.5..3.0)],
        r.random_range(-3.14..3.14),
        ObjectClass::ALL[r.random_range(0..ObjectClass::COUNT)],
    )
}

/// Box footprint as a Gaussian with covariance R diag(l²/4, w²/4) Rᵀ.
pub fn covariance(b: &Box3D) -> (Vector2<f64>, Matrix2<f64>) {
    let (s, c) = b.yaw.sin_cos();
    let rot = Matrix2::new(c, -s, s, c);
    let d = Matrix2::new(b.dims[0].powi(2) / 4.0, 0.0, 0.0, b.dims[1].powi(2) / 4.0);
    (Vector2::new(b.center[0], b.center[1]), rot * d * rot.transpose())
}

fn sqrtm(m: &Matrix2<f64>) -> Matrix2<f64> {
    let e = SymmetricEigen::new(*m);
    let d = Matrix2::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Squared 2-Wasserstein distance through symmetric eigendecompositions.
pub fn gwd_eigen(a: &Box3D, b: &Box3D) -> f64 {
    let (m1, s1) = covariance(a);
    let (m2, s2) = covariance(b);
    let r1 = sqrtm(&s1);
    let cross = sqrtm(&(r1 * s2 * r1));
    (m1 - m2).norm_squared() + (s1 + s2 - cross * 2.0).trace()
}

/// Rotates a box about the origin by `theta`.
pub fn rotate_box(b: &Box3D, theta: f64) -> Box3D {
    let (s, c) = theta.sin_cos();
    let [x, y, z] = b.center;
    Box3D::new([c * x - s * y, s * x + c * y, z], b.dims, b.yaw + theta, b.class)
}

fn inside(b: &Box3D, x: f64, y: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (x - b.center[0], y - b.center[1]);
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= b.dims[0] / 2.0 && ly.abs() <= b.dims[1] / 2.0
}

/// BEV IoU from `n` uniform samples over the joint bounding rectangle.
pub fn monte_carlo_iou(a: &Box3D, b: &Box3D, n: usize, r: &mut ChaCha8Rng) -> f64 {
    let pts: Vec<[f64; 2]> = a.bev_corners().into_iter().chain(b.bev_corners()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for [x, y] in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..n {
        let x = r.random_range(x0..x1);
        let y = r.random_range(y0..y1);
        let (ia, ib) = (inside(a, x, y), inside(b, x, y));
        both += (ia && ib) as usize;
        either += (ia || ib) as usize;
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Σ_e of a (B, C, E, R, A) buffer, by loops.
pub fn sum_over_elevation(q: &[f64], dims: [usize; 5]) -> Vec<f64> {
    let [b, c, e, r, a] = dims;
    let mut out = vec![0.0; b * c * r * a];
    for bi in 0..b {
        for ci in 0..c {
            for ei in 0..e {
                for ri in 0..r {
                    for ai in 0..a {
                        out[((bi * c + ci) * r + ri) * a + ai] += q[(((bi * c + ci) * e + ei) * r + ri) * a + ai];
                    }
                }
            }
        }
    }
    out
}
