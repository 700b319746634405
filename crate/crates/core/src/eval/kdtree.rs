//! A static 3-d tree for exact nearest-neighbor distance queries.

use crate::Vec3;

const LEAF: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

/// Balanced k-d tree over a point set, built by median splits.
#[derive(Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    root: Node,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut pts = points.to_vec();
        let n = pts.len();
        let root = build(&mut pts, 0, n);
        Self { points: pts, root }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Smallest squared distance from `q` to any stored point (∞ if empty).
    ///
    /// Candidate distances are computed as `(p − q)·(p − q)`, the same
    /// expression a brute-force scan would use, so the result is bit-identical.
    pub fn nearest_sq(&self, q: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.root, q, &mut best);
        best
    }

    fn search(&self, node: &Node, q: &Vec3, best: &mut f64) {
        match node {
            Node::Leaf { start, end } => {
                for p in &self.points[*start..*end] {
                    let d = (p - q).norm_squared();
                    if d < *best {
                        *best = d;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(pts: &mut [Vec3], start: usize, end: usize) -> Node {
    if end - start <= LEAF {
        return Node::Leaf { start, end };
    }
    let slice = &mut pts[start..end];
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in slice.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
    let value = slice[mid][axis];
    Node::Split {
        axis,
        value,
        left: Box::new(build(pts, start, start + mid)),
        right: Box::new(build(pts, start + mid, end)),
    }
}
