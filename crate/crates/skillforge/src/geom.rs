//! 2D geometry primitives: poses, convex polygons, the socket free-space
//! model, penetration queries, and boundary point sampling.
//!
//! The world is a solid block of height `socket_depth` with a single open
//! channel of width `socket_width` centered at x = 0. Free space is the
//! closed set {y >= depth} union {|x| <= width/2 and y >= 0}; the channel
//! floor sits at y = 0.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Planar pose: position plus orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Pose {
            x: a[0],
            y: a[1],
            theta: a[2],
        }
    }

    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + p[0] * c - p[1] * s, self.y + p[0] * s + p[1] * c]
    }
}

/// Channel geometry of a socket, extracted from a task.
#[derive(Clone, Copy, Debug)]
pub struct Socket {
    pub width: f64,
    pub depth: f64,
}

impl Socket {
    /// Penetration depth of a point into the solid, and the minimal
    /// translation that returns it to free space. Zero depth on the boundary.
    pub fn point_penetration(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let (x, y) = (p[0], p[1]);
        if y >= self.depth {
            return (0.0, [0.0, 0.0]);
        }
        let half = self.width / 2.0;
        let dx = (x.abs() - half).max(0.0);
        let dy = (-y).max(0.0);
        if dx == 0.0 && dy == 0.0 {
            return (0.0, [0.0, 0.0]); // inside the channel
        }
        let to_channel = (dx * dx + dy * dy).sqrt();
        let to_top = self.depth - y;
        if to_top <= to_channel {
            (to_top, [0.0, to_top])
        } else {
            (to_channel, [-x.signum() * dx, dy])
        }
    }

    /// Boundary polyline of the socket for point-cloud sampling: block top
    /// left, down the channel, and back up to block top right.
    pub fn boundary_polyline(&self, block_half_extent: f64) -> Vec<[f64; 2]> {
        let half = self.width / 2.0;
        vec![
            [-block_half_extent, self.depth],
            [-half, self.depth],
            [-half, 0.0],
            [half, 0.0],
            [half, self.depth],
            [block_half_extent, self.depth],
        ]
    }
}

/// Returns true when the CCW-ordered vertex list is convex (left turns only,
/// allowing collinear points).
pub fn is_convex_ccw(vertices: &[[f64; 2]]) -> bool {
    let n = vertices.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let c = vertices[(i + 2) % n];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross < -1e-12 {
            return false;
        }
    }
    // Signed area must be positive for CCW ordering.
    polygon_area(vertices) > 0.0
}

pub fn polygon_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc / 2.0
}

pub fn polygon_perimeter(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        })
        .sum()
}

/// Fixed collision sample points on a polygon boundary: every vertex plus
/// evenly spaced arc-length fill points, `total` points overall. Corners are
/// always sampled so wall contacts resolve at the true extremes.
pub fn collision_boundary(vertices: &[[f64; 2]], total: usize) -> Vec<[f64; 2]> {
    let mut points: Vec<[f64; 2]> = vertices.to_vec();
    let fill = total.saturating_sub(vertices.len());
    if fill > 0 {
        let perimeter = polygon_perimeter(vertices);
        let step = perimeter / fill as f64;
        let mut walked = 0.0;
        let mut next_sample = step / 2.0;
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let seg = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            while next_sample < walked + seg && points.len() < total {
                let t = (next_sample - walked) / seg;
                points.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                next_sample += step;
            }
            walked += seg;
        }
    }
    points
}

/// Deepest penetration over a set of world-frame boundary points.
pub fn max_penetration(socket: &Socket, world_points: &[[f64; 2]]) -> (f64, [f64; 2]) {
    let mut depth = 0.0;
    let mut push = [0.0, 0.0];
    for p in world_points {
        let (d, v) = socket.point_penetration(*p);
        if d > depth {
            depth = d;
            push = v;
        }
    }
    (depth, push)
}

/// Arc-length point sampling over one or more open polylines, as one
/// combined curve. Points are evenly spaced with a single random phase, so
/// each segment receives points proportional to its length (within one).
pub fn sample_polylines(
    chains: &[&[[f64; 2]]],
    n_points: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<[f64; 2]> {
    let mut segments: Vec<([f64; 2], [f64; 2], f64)> = Vec::new();
    let mut total = 0.0;
    for chain in chains {
        for w in chain.windows(2) {
            let len = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            if len > 0.0 {
                segments.push((w[0], w[1], len));
                total += len;
            }
        }
    }
    assert!(total > 0.0, "degenerate sampling curve");
    let phase: f64 = rng.random::<f64>();
    let mut out = Vec::with_capacity(n_points);
    let mut seg_idx = 0;
    let mut seg_start = 0.0;
    for k in 0..n_points {
        let s = (k as f64 + phase) / n_points as f64 * total;
        while seg_idx + 1 < segments.len() && s >= seg_start + segments[seg_idx].2 {
            seg_start += segments[seg_idx].2;
            seg_idx += 1;
        }
        let (a, b, len) = segments[seg_idx];
        let t = ((s - seg_start) / len).clamp(0.0, 1.0);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    out
}

/// Closed polygon boundary as an open chain (first vertex repeated at the end).
pub fn closed_chain(vertices: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut chain = vertices.to_vec();
    if let Some(first) = vertices.first() {
        chain.push(*first);
    }
    chain
}

/// Minimum distance from a point to a polyline (chain of segments).
pub fn point_polyline_distance(p: [f64; 2], polyline: &[[f64; 2]]) -> f64 {
    if polyline.is_empty() {
        return 0.0;
    }
    if polyline.len() == 1 {
        return ((p[0] - polyline[0][0]).powi(2) + (p[1] - polyline[0][1]).powi(2)).sqrt();
    }
    let mut best = f64::INFINITY;
    for w in polyline.windows(2) {
        best = best.min(point_segment_distance(p, w[0], w[1]));
    }
    best
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let cx = a[0] + t * ab[0] - p[0];
    let cy = a[1] + t * ab[1] - p[1];
    (cx * cx + cy * cy).sqrt()
}
