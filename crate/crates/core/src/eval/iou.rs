//! Rotated-box overlap by convex polygon clipping.

use crate::boxes::Box3D;

pub type Point = [f64; 2];

/// Signed shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn intersect(p: Point, q: Point, a: Point, b: Point) -> Point {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman: `subject` clipped by the convex, counter-clockwise
/// polygon `clip`.
pub fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let p = input[j];
            let q = input[(j + 1) % input.len()];
            let p_in = cross(a, b, p) >= 0.0;
            let q_in = cross(a, b, q) >= 0.0;
            match (p_in, q_in) {
                (true, true) => out.push(q),
                (true, false) => out.push(intersect(p, q, a, b)),
                (false, true) => {
                    out.push(intersect(p, q, a, b));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Area shared by the two BEV footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let pa = a.bev_corners();
    let pb = b.bev_corners();
    polygon_area(&clip_polygon(&pa, &pb)).max(0.0)
}

fn ratio(inter: f64, area_a: f64, area_b: f64) -> f64 {
    let union = area_a + area_b - inter;
    if !(area_a > 0.0 && area_b > 0.0 && union > 0.0) {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection over union of the BEV rectangles.
pub fn rotated_iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    ratio(
        bev_intersection_area(a, b),
        a.dims[0] * a.dims[1],
        b.dims[0] * b.dims[1],
    )
}

/// Volume IoU: BEV intersection times vertical overlap.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    ratio(
        bev_intersection_area(a, b) * dz,
        a.dims[0] * a.dims[1] * a.dims[2],
        b.dims[0] * b.dims[1] * b.dims[2],
    )
}
