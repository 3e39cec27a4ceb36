//! Random box sets over the feature grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use radfuse::boxes::{Box3D, ObjectClass};
use radfuse::geometry::GridSpec;

/// Up to `n` boxes with centers inside the grid (and so inside the ROI),
/// at least `min_sep` bins apart in Chebyshev distance.
pub fn random_scene(r: &mut ChaCha8Rng, grid: &GridSpec, n: usize, min_sep: f64) -> Vec<Box3D> {
    let mut out: Vec<(f64, f64, Box3D)> = Vec::new();
    for _ in 0..n * 200 {
        if out.len() == n {
            break;
        }
        let fr = r.random_range(0.0..grid.n_range as f64 - 1.0);
        let fa = r.random_range(0.0..grid.n_azimuth as f64 - 1.0);
        // the rounded center bin sits at least `min_sep` from every other
        let clash = out
            .iter()
            .any(|&(or, oa, _)| (or - fr.round()).abs().max((oa - fa.round()).abs()) < min_sep);
        if clash {
            continue;
        }
        let (x, y) = grid.bins_to_bev(fr, fa);
        let b = Box3D::new(
            [x, y, r.random_range(-1.5..1.5)],
            [r.random_range(0.4..10.0), r.random_range(0.4..3.0), r.random_range(0.8..3.5)],
            r.random_range(-3.1..3.1),
            ObjectClass::ALL[r.random_range(0..ObjectClass::COUNT)],
        );
        out.push((fr.round(), fa.round(), b));
    }
    out.into_iter().map(|(_, _, b)| b).collect()
}
