//! Planar convex hull and half-plane form of the flexibility polygon.

/// Twice the signed area of triangle `o, a, b`; positive for a left turn.
pub fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Indices of the hull of `points`, counterclockwise, collinear points dropped.
///
/// Monotone chain. Points closer than `tol` are merged; turns with
/// `|cross| <= tol * scale` count as collinear.
pub fn convex_hull(points: &[[f64; 2]], tol: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
            .then(a.cmp(&b))
    });
    idx.dedup_by(|a, b| {
        let (pa, pb) = (points[*a], points[*b]);
        (pa[0] - pb[0]).abs() <= tol && (pa[1] - pb[1]).abs() <= tol
    });
    if idx.len() <= 2 {
        return idx;
    }
    let scale = idx
        .iter()
        .map(|&i| points[i][0].abs().max(points[i][1].abs()))
        .fold(1.0, f64::max);
    let turn_tol = tol * scale;

    let mut hull: Vec<usize> = Vec::with_capacity(2 * idx.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &usize>> = if pass == 0 {
            Box::new(idx.iter())
        } else {
            Box::new(idx.iter().rev())
        };
        for &i in iter {
            while hull.len() >= start + 2
                && cross(points[hull[hull.len() - 2]], points[hull[hull.len() - 1]], points[i]) <= turn_tol
            {
                hull.pop();
            }
            hull.push(i);
        }
        hull.pop();
    }
    if hull.len() == 2 && hull[0] == hull[1] {
        hull.pop();
    }
    hull
}

/// Half-plane `a x + b y <= c` with `(a, b)` a unit outward normal.
pub type HalfPlane = [f64; 3];

/// Half-planes of a counterclockwise polygon, one per edge.
pub fn polygon_halfplanes(vertices: &[[f64; 2]]) -> Vec<HalfPlane> {
    let n = vertices.len();
    (0..n)
        .map(|k| {
            let (p, q) = (vertices[k], vertices[(k + 1) % n]);
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            let len = (dx * dx + dy * dy).sqrt();
            let (a, b) = (dy / len, -dx / len);
            [a, b, a * p[0] + b * p[1]]
        })
        .collect()
}

/// Shoelace area of a counterclockwise polygon.
pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    0.5 * (0..n)
        .map(|k| {
            let (p, q) = (vertices[k], vertices[(k + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
}

pub fn centroid(vertices: &[[f64; 2]]) -> [f64; 2] {
    let n = vertices.len() as f64;
    let (sx, sy) = vertices.iter().fold((0.0, 0.0), |(x, y), v| (x + v[0], y + v[1]));
    [sx / n, sy / n]
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Distance from `p` to a convex polygon (zero inside).
pub fn distance_to_convex(p: [f64; 2], polygon: &[[f64; 2]]) -> f64 {
    match polygon.len() {
        0 => f64::INFINITY,
        1 => ((p[0] - polygon[0][0]).powi(2) + (p[1] - polygon[0][1]).powi(2)).sqrt(),
        2 => point_segment_distance(p, polygon[0], polygon[1]),
        n => {
            let inside = (0..n).all(|k| cross(polygon[k], polygon[(k + 1) % n], p) >= 0.0);
            if inside {
                0.0
            } else {
                (0..n)
                    .map(|k| point_segment_distance(p, polygon[k], polygon[(k + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Hausdorff distance between two convex polygons given by their vertices.
/// For convex sets the extreme points realise the maximum.
pub fn hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let ab = a.iter().map(|&p| distance_to_convex(p, b)).fold(0.0, f64::max);
    let ba = b.iter().map(|&p| distance_to_convex(p, a)).fold(0.0, f64::max);
    ab.max(ba)
}
