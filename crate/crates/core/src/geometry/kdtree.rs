//! Static kd-tree over 3D points for exact nearest-neighbour and radius queries.

use super::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vec3 {
        &self.points[index]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] <= lo[axis] {
            // all points coincide
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Index and squared distance of the closest point; ties resolve to the lowest index.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, query, &mut best);
        Some(best)
    }

    fn nearest_rec(&self, node: usize, q: &Vec3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.1 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// Indices of all points with distance strictly less than `radius`, ascending.
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.points.is_empty() && radius > 0.0 {
            self.radius_rec(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: usize, q: &Vec3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| (self.points[i] - q).norm_squared() < r2),
                );
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff < 0.0 || diff * diff < r2 {
                    self.radius_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.radius_rec(right, q, r2, out);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn nearest_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_points(&mut rng, 700);
        let tree = KdTree::new(&pts);
        for q in random_points(&mut rng, 300) {
            let (_, d2) = tree.nearest(&q).unwrap();
            let best = pts.iter().map(|p| (p - q).norm_squared()).fold(f64::INFINITY, f64::min);
            assert_eq!(d2, best);
        }
    }

    #[test]
    fn radius_matches_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_points(&mut rng, 500);
        let tree = KdTree::new(&pts);
        for q in random_points(&mut rng, 100) {
            let got = tree.within_radius(&q, 0.3);
            let want: Vec<usize> = (0..pts.len()).filter(|&i| (pts[i] - q).norm_squared() < 0.09).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn duplicate_and_grid_points() {
        let mut pts = vec![Vec3::repeat(0.5); 40];
        for i in 0..5 {
            for j in 0..5 {
                pts.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        let tree = KdTree::new(&pts);
        assert_eq!(tree.nearest(&Vec3::repeat(0.5)).unwrap(), (0, 0.0));
        assert_eq!(tree.nearest(&Vec3::new(3.1, 2.0, 0.0)).unwrap().0, 40 + 3 * 5 + 2);
        assert_eq!(tree.within_radius(&Vec3::repeat(0.5), 0.01).len(), 40);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(&[]);
        assert!(tree.nearest(&Vec3::zeros()).is_none());
        assert!(tree.within_radius(&Vec3::zeros(), 1.0).is_empty());
    }
}
