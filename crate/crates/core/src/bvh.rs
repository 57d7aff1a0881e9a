//! Binary bounding volume hierarchy over axis-aligned boxes.
//!
//! Built by median split along the longest axis of the centroid bounds.
//! Used for Gaussian ellipsoids and for mesh triangles.

use crate::intersect::{ellipsoid_aabb, intersect_prepared};
use crate::linalg::Vec3;
use crate::ray::{PreparedGaussian, Ray};

pub const MAX_LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn empty() -> Self {
        Self::new(Vec3::splat(f64::INFINITY), Vec3::splat(f64::NEG_INFINITY))
    }

    pub fn from_points(points: impl IntoIterator<Item = Vec3>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        Some(it.fold(Aabb::new(first, first), |b, p| b.grow(p)))
    }

    pub fn grow(self, p: Vec3) -> Self {
        Self::new(self.min.min_elem(p), self.max.max_elem(p))
    }

    pub fn union(self, o: &Aabb) -> Self {
        Self::new(self.min.min_elem(o.min), self.max.max_elem(o.max))
    }

    pub fn diagonal(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    pub fn contains_box(&self, o: &Aabb) -> bool {
        self.contains(o.min) && self.contains(o.max)
    }

    /// Grown by a relative margin so that rounding in the primitive tests
    /// never places a hit outside its box.
    fn padded(&self) -> Self {
        let pad = self.diagonal().map(|d| d.abs() * 1e-9 + 1e-12);
        Self::new(self.min - pad, self.max + pad)
    }

    /// Parametric interval `[t_near, t_far]` of the ray inside the box.
    #[inline]
    pub fn slab(&self, origin: Vec3, inv_dir: Vec3) -> Option<(f64, f64)> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            // NaN (origin on a slab plane of a parallel ray) leaves the
            // interval unchanged.
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t0 <= t1).then_some((t0, t1))
    }
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: first slot in `prims`. Interior: index of the left child; the
    /// right child follows its whole left subtree and is stored in `right`.
    start: u32,
    right: u32,
    count: u32,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.count > 0
    }
}

/// One ray/primitive hit, ordered by `(t_entry, gaussian_index)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub gaussian_index: usize,
    pub t_entry: f64,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    prims: Vec<u32>,
    leaf_boxes: Vec<Aabb>,
}

impl Bvh {
    /// Build over arbitrary primitive boxes; primitive `i` is `boxes[i]`.
    pub fn build(boxes: &[Aabb]) -> Self {
        let mut bvh = Bvh { nodes: Vec::new(), prims: (0..boxes.len() as u32).collect(), leaf_boxes: boxes.to_vec() };
        if !boxes.is_empty() {
            let centroids: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
            let n = boxes.len();
            bvh.build_node(boxes, &centroids, 0, n);
        }
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], centroids: &[Vec3], start: usize, end: usize) -> usize {
        let slice = &self.prims[start..end];
        let bounds = slice
            .iter()
            .fold(Aabb::empty(), |b, &p| b.union(&boxes[p as usize]))
            .padded();
        let node_index = self.nodes.len();
        self.nodes.push(Node { bounds, start: start as u32, right: 0, count: (end - start) as u32 });
        if end - start <= MAX_LEAF_SIZE {
            return node_index;
        }
        let cb = Aabb::from_points(slice.iter().map(|&p| centroids[p as usize])).expect("nonempty");
        let ext = cb.diagonal();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        // Sort by centroid, ties by primitive index for a deterministic build.
        self.prims[start..end].sort_by(|&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let left = self.build_node(boxes, centroids, start, mid);
        let right = self.build_node(boxes, centroids, mid, end);
        let node = &mut self.nodes[node_index];
        node.start = left as u32;
        node.right = right as u32;
        node.count = 0;
        node_index
    }

    /// BVH over the level-`q` ellipsoid boxes of a prepared scene.
    pub fn for_gaussians(gaussians: &[PreparedGaussian], q: f64) -> Self {
        let boxes: Vec<Aabb> = gaussians.iter().map(|g| ellipsoid_aabb(g, q)).collect();
        Self::build(&boxes)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root_bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| n.bounds)
    }

    /// Checks that every primitive appears in exactly one leaf and that leaf
    /// boxes contain their primitives' boxes.
    pub fn check_structure(&self) -> bool {
        let mut seen = vec![0u32; self.leaf_boxes.len()];
        for node in self.nodes.iter().filter(|n| n.is_leaf()) {
            let s = node.start as usize;
            for &p in &self.prims[s..s + node.count as usize] {
                seen[p as usize] += 1;
                if !node.bounds.contains_box(&self.leaf_boxes[p as usize]) {
                    return false;
                }
            }
        }
        seen.iter().all(|&c| c == 1)
    }

    /// Primitive with the smallest `t > t_min` reported by `test`; ties go to
    /// the lower primitive index. `test` returns the primitive's hit
    /// parameter or `None`.
    pub fn nearest_after<F>(&self, ray: &Ray, t_min: f64, mut test: F) -> Option<(usize, f64)>
    where
        F: FnMut(usize) -> Option<f64>,
    {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = ray.direction.map(|v| 1.0 / v);
        let mut best: Option<(usize, f64)> = None;
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        if let Some((t0, t1)) = self.nodes[0].bounds.slab(ray.origin, inv) {
            if t1 > t_min {
                stack.push((0, t0));
            }
        }
        while let Some((ni, t_near)) = stack.pop() {
            if let Some((_, bt)) = best {
                if t_near > bt {
                    continue;
                }
            }
            let node = &self.nodes[ni];
            if node.is_leaf() {
                let s = node.start as usize;
                for &p in &self.prims[s..s + node.count as usize] {
                    let p = p as usize;
                    if let Some(t) = test(p) {
                        if t > t_min {
                            let better = match best {
                                None => true,
                                Some((bi, bt)) => t < bt || (t == bt && p < bi),
                            };
                            if better {
                                best = Some((p, t));
                            }
                        }
                    }
                }
                continue;
            }
            let a = node.start as usize;
            let b = node.right as usize;
            let ha = self.nodes[a].bounds.slab(ray.origin, inv).filter(|&(_, t1)| t1 > t_min);
            let hb = self.nodes[b].bounds.slab(ray.origin, inv).filter(|&(_, t1)| t1 > t_min);
            match (ha, hb) {
                (Some((ta, _)), Some((tb, _))) => {
                    // Nearer child popped first.
                    if ta <= tb {
                        stack.push((b, tb));
                        stack.push((a, ta));
                    } else {
                        stack.push((a, ta));
                        stack.push((b, tb));
                    }
                }
                (Some((ta, _)), None) => stack.push((a, ta)),
                (None, Some((tb, _))) => stack.push((b, tb)),
                (None, None) => {}
            }
        }
        best
    }

    /// Calls `visit` for every primitive in a leaf whose box overlaps the
    /// ray segment `(t_lo, t_hi)`.
    pub fn for_each_candidate<F>(&self, ray: &Ray, t_lo: f64, t_hi: f64, mut visit: F)
    where
        F: FnMut(usize),
    {
        if self.nodes.is_empty() {
            return;
        }
        let inv = ray.direction.map(|v| 1.0 / v);
        let mut stack: Vec<usize> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            match node.bounds.slab(ray.origin, inv) {
                Some((t0, t1)) if t1 > t_lo && t0 < t_hi => {}
                _ => continue,
            }
            if node.is_leaf() {
                let s = node.start as usize;
                for &p in &self.prims[s..s + node.count as usize] {
                    visit(p as usize);
                }
            } else {
                stack.push(node.right as usize);
                stack.push(node.start as usize);
            }
        }
    }
}

/// First ellipsoid entry strictly after `t_min` along `ray`.
pub fn next_hit(bvh: &Bvh, gaussians: &[PreparedGaussian], ray: &Ray, t_min: f64, q: f64) -> Option<Hit> {
    bvh.nearest_after(ray, t_min, |i| intersect_prepared(ray, &gaussians[i], q))
        .map(|(gaussian_index, t_entry)| Hit { gaussian_index, t_entry })
}

/// Every ellipsoid entry at `t > 0` along `ray`, sorted by `(t, index)`.
pub fn collect_hits(bvh: &Bvh, gaussians: &[PreparedGaussian], ray: &Ray, q: f64, out: &mut Vec<Hit>) {
    out.clear();
    bvh.for_each_candidate(ray, 0.0, f64::INFINITY, |i| {
        if let Some(t) = intersect_prepared(ray, &gaussians[i], q) {
            out.push(Hit { gaussian_index: i, t_entry: t });
        }
    });
    out.sort_by(|a, b| a.t_entry.total_cmp(&b.t_entry).then(a.gaussian_index.cmp(&b.gaussian_index)));
}

/// Replays the `next_hit` enumeration (strictly increasing `t`, advancing by
/// `delta` after each hit) over a pre-sorted hit list.
#[derive(Debug)]
pub struct SortedHitCursor<'a> {
    hits: &'a [Hit],
    pos: usize,
}

impl<'a> SortedHitCursor<'a> {
    pub fn new(hits: &'a [Hit]) -> Self {
        Self { hits, pos: 0 }
    }

    pub fn next_after(&mut self, t_min: f64) -> Option<Hit> {
        while self.pos < self.hits.len() {
            let h = self.hits[self.pos];
            self.pos += 1;
            if h.t_entry > t_min {
                return Some(h);
            }
        }
        None
    }
}
