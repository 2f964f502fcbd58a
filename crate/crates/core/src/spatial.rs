//! KD-tree over 3-D points: k-nearest-neighbour and radius queries, and the
//! greedy redundancy thinning built on them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

pub type Point3 = [f64; 3];

pub const DEFAULT_LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpatialError {
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("d_threshold must be a finite value >= 0, got {0}")]
    Threshold(f64),
}

/// Squared Euclidean distance. Every distance in this crate goes through
/// this function so tree and brute-force results compare bit-exactly.
#[inline]
pub fn dist_sq(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist_sq.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

// Max-heap ordering on (dist_sq, index).
struct HeapItem(Neighbor);

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable balanced KD-tree. Queries report indices into the slice the
/// tree was built from.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

impl KdTree {
    pub fn build(points: &[Point3]) -> Result<Self, SpatialError> {
        Self::with_leaf_size(points, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(points: &[Point3], leaf_size: usize) -> Result<Self, SpatialError> {
        if let Some(index) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(SpatialError::NonFinite { index });
        }
        let mut tree = Self {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            leaf_size: leaf_size.max(1),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= self.leaf_size {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis]
                .total_cmp(&points[b][axis])
                .then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(self.points[i][k]);
                hi[k] = hi[k].max(self.points[i][k]);
            }
        }
        (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
            .unwrap_or(0)
    }

    /// Up to `k` nearest points to `query`, ascending by distance with ties
    /// broken by lower index. `exclude` drops one index (the query's own
    /// entry when it is a member of the tree).
    pub fn k_nearest(&self, query: &Point3, k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_node(0, query, k, exclude, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|h| h.0).collect();
        out.sort_by(Neighbor::key_cmp);
        out
    }

    fn knn_node(
        &self,
        node: usize,
        query: &Point3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<HeapItem>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        dist_sq: dist_sq(query, &self.points[i]),
                    };
                    if heap.len() < k {
                        heap.push(HeapItem(cand));
                    } else if let Some(worst) = heap.peek() {
                        if cand.key_cmp(&worst.0) == Ordering::Less {
                            heap.pop();
                            heap.push(HeapItem(cand));
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_node(near, query, k, exclude, heap);
                let bound = diff * diff;
                let visit_far = heap.len() < k || heap.peek().is_some_and(|w| bound <= w.0.dist_sq);
                if visit_far {
                    self.knn_node(far, query, k, exclude, heap);
                }
            }
        }
    }

    /// Indices of all points strictly closer than `radius` to `query`,
    /// ascending by index.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.nodes.is_empty() && radius > 0.0 {
            self.radius_node(0, query, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_node(&self, node: usize, query: &Point3, r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => out.extend(
                self.order[start..end]
                    .iter()
                    .copied()
                    .filter(|&i| dist_sq(query, &self.points[i]) < r2),
            ),
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_node(near, query, r2, out);
                if diff * diff < r2 {
                    self.radius_node(far, query, r2, out);
                }
            }
        }
    }
}

/// Greedy keep-first thinning in ascending index order: a point is kept iff
/// its distance to every previously kept point is at least `d_threshold`.
/// Returns kept indices in ascending order.
pub fn thin_redundant(points: &[Point3], d_threshold: f64) -> Result<Vec<usize>, SpatialError> {
    if !(d_threshold >= 0.0) || !d_threshold.is_finite() {
        return Err(SpatialError::Threshold(d_threshold));
    }
    let tree = KdTree::build(points)?;
    let mut suppressed = vec![false; points.len()];
    let mut kept = Vec::new();
    for i in 0..points.len() {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for j in tree.within_radius(&points[i], d_threshold) {
            if j > i {
                suppressed[j] = true;
            }
        }
    }
    Ok(kept)
}
