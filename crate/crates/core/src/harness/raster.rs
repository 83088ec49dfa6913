//! Polygon → binary mask rasterization.
//!
//! A pixel `(y, x)` is sampled at its center `(x + 0.5, y + 0.5)`. Interior
//! points follow the even-odd rule with half-open edge crossings; points lying
//! exactly on an edge (vertices included) also count as inside.

use crate::geometry::BinaryMask;

/// Crossing abscissa of edge `a → b` at height `yc`.
fn crossing(a: (f64, f64), b: (f64, f64), yc: f64) -> f64 {
    (b.0 - a.0) * (yc - a.1) / (b.1 - a.1) + a.0
}

/// True when `p` lies exactly on segment `a–b`.
pub fn point_on_segment(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    cross == 0.0 && p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
}

/// First pixel index whose center is `≥ lo`, clamped to `0..=len`.
fn first_center(lo: f64, len: usize) -> usize {
    let passes = |i: usize| i as f64 + 0.5 >= lo;
    let mut i = (lo - 0.5).ceil().clamp(0.0, len as f64) as usize;
    while i > 0 && passes(i - 1) {
        i -= 1;
    }
    while i < len && !passes(i) {
        i += 1;
    }
    i
}

/// Rasterizes a polygon given in pixel coordinates.
pub fn fill_polygon(points: &[(f64, f64)], height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(height, width);
    let n = points.len();
    if n == 0 {
        return mask;
    }
    let edges = || (0..n).map(move |k| (points[k], points[(k + 1) % n]));

    let mut xs = Vec::with_capacity(n);
    for y in 0..height {
        let yc = y as f64 + 0.5;
        xs.clear();
        xs.extend(
            edges()
                .filter(|(a, b)| (a.1 > yc) != (b.1 > yc))
                .map(|(a, b)| crossing(a, b, yc)),
        );
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let mut x = first_center(span[0], width);
            while x < width && (x as f64 + 0.5) < span[1] {
                mask.set(y, x, true);
                x += 1;
            }
        }
    }

    for (a, b) in edges() {
        let y_start = first_center(a.1.min(b.1), height);
        for y in y_start..height {
            let yc = y as f64 + 0.5;
            if yc > a.1.max(b.1) {
                break;
            }
            if a.1 == b.1 {
                let x_start = first_center(a.0.min(b.0), width);
                for x in x_start..width {
                    if x as f64 + 0.5 > a.0.max(b.0) {
                        break;
                    }
                    mask.set(y, x, true);
                }
                continue;
            }
            let near = (crossing(a, b, yc) - 0.5).floor();
            for cand in [near, near + 1.0] {
                if cand >= 0.0 && cand < width as f64 && point_on_segment(a, b, (cand + 0.5, yc)) {
                    mask.set(y, cand as usize, true);
                }
            }
        }
    }
    mask
}
