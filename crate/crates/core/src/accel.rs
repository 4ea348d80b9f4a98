//! Two-level bounding volume hierarchy.
//!
//! Each object owns a bottom-level BVH over its triangles; a top-level BVH is
//! built over the object boxes. Both levels use the same binned-SAH builder
//! and a stack-based, near-child-first traversal.

use crate::error::{Error, Result};
use crate::geometry::{ray_aabb_intersect_inv, ray_triangle_intersect, Aabb, Ray, Triangle, Vec3};

const SAH_BINS: usize = 16;
const MAX_LEAF_SIZE: usize = 4;
const TRAVERSAL_COST: f64 = 1.0;
const INTERSECTION_COST: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeKind {
    Internal { left: u32, right: u32 },
    Leaf { first_prim: u32, prim_count: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

/// A binary BVH over an indexed set of primitives. `prim_order` maps leaf
/// ranges back to the caller's primitive indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Bvh {
    pub nodes: Vec<BvhNode>,
    pub prim_order: Vec<u32>,
}

struct BuildItem {
    bounds: Aabb,
    centroid: Vec3,
}

#[derive(Clone, Copy)]
struct Bin {
    bounds: Aabb,
    count: usize,
}

impl Bvh {
    fn build(items: &[BuildItem]) -> Result<Bvh> {
        if items.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot build a BVH over zero primitives".into(),
            ));
        }
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * items.len()),
            prim_order: (0..items.len() as u32).collect(),
        };
        bvh.build_node(items, 0, items.len());
        Ok(bvh)
    }

    fn build_node(&mut self, items: &[BuildItem], start: usize, end: usize) -> u32 {
        let node_index = self.nodes.len() as u32;
        let mut bounds = Aabb::empty();
        let mut centroid_bounds = Aabb::empty();
        for &p in &self.prim_order[start..end] {
            bounds = bounds.union(&items[p as usize].bounds);
            centroid_bounds = centroid_bounds.grow(items[p as usize].centroid);
        }
        let count = end - start;
        let leaf = NodeKind::Leaf {
            first_prim: start as u32,
            prim_count: count as u32,
        };
        self.nodes.push(BvhNode { bounds, kind: leaf });
        if count == 1 {
            return node_index;
        }

        let split = self.find_split(items, start, end, &bounds, &centroid_bounds);
        let mid = match split {
            Some((axis, bin, cost)) => {
                let leaf_cost = INTERSECTION_COST * count as f64;
                if count <= MAX_LEAF_SIZE && cost >= leaf_cost {
                    return node_index;
                }
                self.partition(items, start, end, axis, bin, &centroid_bounds)
            }
            None if count <= MAX_LEAF_SIZE => return node_index,
            // All centroids coincide: split by index.
            None => start + count / 2,
        };

        let left = self.build_node(items, start, mid);
        let right = self.build_node(items, mid, end);
        self.nodes[node_index as usize].kind = NodeKind::Internal { left, right };
        node_index
    }

    /// Best `(axis, split bin, SAH cost)` over all bin boundaries.
    fn find_split(
        &self,
        items: &[BuildItem],
        start: usize,
        end: usize,
        bounds: &Aabb,
        centroid_bounds: &Aabb,
    ) -> Option<(usize, usize, f64)> {
        let parent_area = bounds.surface_area();
        let mut best: Option<(usize, usize, f64)> = None;
        for axis in 0..3 {
            let lo = centroid_bounds.min[axis];
            let extent = centroid_bounds.max[axis] - lo;
            if !(extent > 0.0) {
                continue;
            }
            let mut bins = [Bin {
                bounds: Aabb::empty(),
                count: 0,
            }; SAH_BINS];
            for &p in &self.prim_order[start..end] {
                let item = &items[p as usize];
                let b = bin_index(item.centroid[axis], lo, extent);
                bins[b].count += 1;
                bins[b].bounds = bins[b].bounds.union(&item.bounds);
            }
            // Sweep from the right to get suffix areas and counts.
            let mut right_area = [0.0; SAH_BINS];
            let mut right_count = [0usize; SAH_BINS];
            let mut acc = Aabb::empty();
            let mut n = 0;
            for i in (1..SAH_BINS).rev() {
                acc = acc.union(&bins[i].bounds);
                n += bins[i].count;
                right_area[i] = acc.surface_area();
                right_count[i] = n;
            }
            let mut acc = Aabb::empty();
            let mut n = 0;
            for i in 0..SAH_BINS - 1 {
                acc = acc.union(&bins[i].bounds);
                n += bins[i].count;
                let (nl, nr) = (n, right_count[i + 1]);
                if nl == 0 || nr == 0 {
                    continue;
                }
                let cost = if parent_area > 0.0 {
                    TRAVERSAL_COST
                        + INTERSECTION_COST
                            * (acc.surface_area() * nl as f64 + right_area[i + 1] * nr as f64)
                            / parent_area
                } else {
                    TRAVERSAL_COST + INTERSECTION_COST * nl.max(nr) as f64
                };
                if best.map_or(true, |(_, _, c)| cost < c) {
                    best = Some((axis, i, cost));
                }
            }
        }
        best
    }

    /// Stable partition of `prim_order[start..end]` into bins `<= bin` and `> bin`.
    fn partition(
        &mut self,
        items: &[BuildItem],
        start: usize,
        end: usize,
        axis: usize,
        bin: usize,
        centroid_bounds: &Aabb,
    ) -> usize {
        let lo = centroid_bounds.min[axis];
        let extent = centroid_bounds.max[axis] - lo;
        let slice = &mut self.prim_order[start..end];
        let (left, right): (Vec<u32>, Vec<u32>) = slice
            .iter()
            .partition(|&&p| bin_index(items[p as usize].centroid[axis], lo, extent) <= bin);
        let mid = left.len();
        slice[..mid].copy_from_slice(&left);
        slice[mid..].copy_from_slice(&right);
        start + mid
    }

    pub fn root_bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[BvhNode], i: usize) -> usize {
            match nodes[i].kind {
                NodeKind::Leaf { .. } => 1,
                NodeKind::Internal { left, right } => {
                    1 + walk(nodes, left as usize).max(walk(nodes, right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    /// Visits every leaf primitive whose ancestor boxes overlap the ray
    /// segment `[0, t_max]`, near child first. The visitor returns a new
    /// `t_max` (for closest-hit pruning) or `None` to stop traversal.
    #[inline]
    pub fn traverse<F>(&self, ray: &Ray, mut t_max: f64, mut visit: F)
    where
        F: FnMut(u32, f64) -> Option<f64>,
    {
        let inv = ray.inv_direction();
        let mut stack: [u32; 128] = [0; 128];
        let mut sp = 0usize;
        match ray_aabb_intersect_inv(ray.origin, inv, &self.nodes[0].bounds) {
            Some((t0, _)) if t0 <= t_max => {}
            _ => return,
        }
        let mut current = 0u32;
        loop {
            let node = &self.nodes[current as usize];
            match node.kind {
                NodeKind::Leaf {
                    first_prim,
                    prim_count,
                } => {
                    for &p in &self.prim_order[first_prim as usize..(first_prim + prim_count) as usize] {
                        match visit(p, t_max) {
                            Some(t) => t_max = t,
                            None => return,
                        }
                    }
                }
                NodeKind::Internal { left, right } => {
                    let hl = hit_within(ray.origin, inv, &self.nodes[left as usize].bounds, t_max);
                    let hr = hit_within(ray.origin, inv, &self.nodes[right as usize].bounds, t_max);
                    match (hl, hr) {
                        (Some(tl), Some(tr)) => {
                            let (near, far) = if tl <= tr { (left, right) } else { (right, left) };
                            stack[sp] = far;
                            sp += 1;
                            current = near;
                            continue;
                        }
                        (Some(_), None) => {
                            current = left;
                            continue;
                        }
                        (None, Some(_)) => {
                            current = right;
                            continue;
                        }
                        (None, None) => {}
                    }
                }
            }
            // Pop, skipping nodes that no longer overlap the shrunken segment.
            loop {
                if sp == 0 {
                    return;
                }
                sp -= 1;
                let n = stack[sp];
                if hit_within(ray.origin, inv, &self.nodes[n as usize].bounds, t_max).is_some() {
                    current = n;
                    break;
                }
            }
        }
    }
}

#[inline]
fn hit_within(origin: Vec3, inv: Vec3, b: &Aabb, t_max: f64) -> Option<f64> {
    match ray_aabb_intersect_inv(origin, inv, b) {
        Some((t0, _)) if t0 <= t_max => Some(t0),
        _ => None,
    }
}

#[inline]
fn bin_index(c: f64, lo: f64, extent: f64) -> usize {
    let b = ((c - lo) / extent * SAH_BINS as f64) as usize;
    b.min(SAH_BINS - 1)
}

/// A per-object triangle hierarchy.
#[derive(Clone, Debug, PartialEq)]
pub struct BottomLevelBvh {
    pub bvh: Bvh,
    pub object_bounds: Aabb,
}

impl BottomLevelBvh {
    pub fn build(triangles: &[Triangle]) -> Result<Self> {
        let items: Vec<BuildItem> = triangles
            .iter()
            .map(|t| BuildItem {
                bounds: t.bounds(),
                centroid: t.centroid(),
            })
            .collect();
        let bvh = Bvh::build(&items)?;
        let object_bounds = bvh.root_bounds();
        Ok(Self { bvh, object_bounds })
    }
}

/// Hierarchy over object boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct TopLevelBvh {
    pub bvh: Bvh,
}

impl TopLevelBvh {
    pub fn build(object_bounds: &[Aabb]) -> Result<Self> {
        let items: Vec<BuildItem> = object_bounds
            .iter()
            .map(|b| BuildItem {
                bounds: *b,
                centroid: b.center(),
            })
            .collect();
        Ok(Self {
            bvh: Bvh::build(&items)?,
        })
    }

    pub fn object_order(&self) -> &[u32] {
        &self.bvh.prim_order
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HitRecord {
    pub t: f64,
    pub object_id: usize,
    pub triangle_id: usize,
    /// Unit length, not face-forwarded.
    pub shading_normal: Vec3,
    pub geometric_normal: Vec3,
    pub hit_point: Vec3,
}

/// One object's triangles and hierarchy.
#[derive(Clone, Debug)]
pub struct MeshObject {
    pub triangles: Vec<Triangle>,
    pub blas: BottomLevelBvh,
    /// Box used for top-level traversal and network parameterization:
    /// the triangle bounds padded by a tiny margin so that it conservatively
    /// encloses every hit the bottom level can report.
    pub bounds: Aabb,
}

impl MeshObject {
    pub fn new(triangles: Vec<Triangle>) -> Result<Self> {
        let blas = BottomLevelBvh::build(&triangles)?;
        let tight = blas.object_bounds;
        let margin = 1e-6 * tight.diagonal_length().max(1e-9);
        Ok(Self {
            triangles,
            blas,
            bounds: tight.padded(margin),
        })
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Closest hit in `(t_min, t_max)`.
    pub fn trace_closest(&self, ray: &Ray, t_min: f64, t_max: f64) -> Option<(f64, usize, (f64, f64))> {
        let mut best: Option<(f64, usize, (f64, f64))> = None;
        self.blas.bvh.traverse(ray, t_max, |p, t_far| {
            if let Some((t, bary)) = ray_triangle_intersect(ray, &self.triangles[p as usize], t_min) {
                if t < t_far {
                    best = Some((t, p as usize, bary));
                    return Some(t);
                }
            }
            Some(t_far)
        });
        best
    }

    /// Any hit in `(t_min, t_max)`.
    pub fn occluded(&self, ray: &Ray, t_min: f64, t_max: f64) -> bool {
        let mut hit = false;
        self.blas.bvh.traverse(ray, t_max, |p, t_far| {
            match ray_triangle_intersect(ray, &self.triangles[p as usize], t_min) {
                Some((t, _)) if t < t_far => {
                    hit = true;
                    None
                }
                _ => Some(t_far),
            }
        });
        hit
    }
}

/// Scene geometry: objects plus the top-level hierarchy over their boxes.
#[derive(Clone, Debug)]
pub struct SceneGeometry {
    pub objects: Vec<MeshObject>,
    pub tlas: Option<TopLevelBvh>,
    /// Self-intersection offset applied to every traced ray.
    pub epsilon_t: f64,
    pub bounds: Aabb,
}

impl SceneGeometry {
    pub fn new(objects: Vec<MeshObject>) -> Result<Self> {
        let boxes: Vec<Aabb> = objects.iter().map(|o| o.bounds).collect();
        let tlas = if boxes.is_empty() {
            None
        } else {
            Some(TopLevelBvh::build(&boxes)?)
        };
        let bounds = boxes.iter().fold(Aabb::empty(), |acc, b| acc.union(b));
        let diagonal = if bounds.is_empty() {
            1.0
        } else {
            bounds.diagonal_length()
        };
        Ok(Self {
            objects,
            tlas,
            epsilon_t: 1e-4 * diagonal,
            bounds,
        })
    }

    pub fn empty() -> Self {
        Self {
            objects: Vec::new(),
            tlas: None,
            epsilon_t: 1e-4,
            bounds: Aabb::empty(),
        }
    }

    pub fn diagonal(&self) -> f64 {
        if self.bounds.is_empty() {
            1.0
        } else {
            self.bounds.diagonal_length()
        }
    }

    pub fn triangle_count(&self) -> usize {
        self.objects.iter().map(|o| o.triangle_count()).sum()
    }

    /// Visits objects whose box overlaps the segment `[0, t_max]`, passing
    /// the object index and the slab interval. The visitor may return
    /// `false` to stop.
    pub fn for_each_overlapping_object<F>(&self, ray: &Ray, t_max: f64, mut visit: F)
    where
        F: FnMut(usize, (f64, f64)) -> bool,
    {
        let Some(tlas) = &self.tlas else { return };
        let inv = ray.inv_direction();
        tlas.bvh.traverse(ray, t_max, |obj, t_far| {
            let o = obj as usize;
            match ray_aabb_intersect_inv(ray.origin, inv, &self.objects[o].bounds) {
                Some(interval) if interval.0 <= t_far => {
                    if visit(o, interval) {
                        Some(t_far)
                    } else {
                        None
                    }
                }
                _ => Some(t_far),
            }
        });
    }

    pub fn trace_closest(&self, ray: &Ray) -> Option<HitRecord> {
        let Some(tlas) = &self.tlas else { return None };
        let eps = self.epsilon_t;
        let mut best: Option<(f64, usize, usize, (f64, f64))> = None;
        tlas.bvh.traverse(ray, f64::INFINITY, |obj, t_far| {
            let o = obj as usize;
            if let Some((t, tri, bary)) = self.objects[o].trace_closest(ray, eps, t_far) {
                best = Some((t, o, tri, bary));
                return Some(t);
            }
            Some(t_far)
        });
        best.map(|(t, object_id, triangle_id, (b1, b2))| {
            let tri = &self.objects[object_id].triangles[triangle_id];
            HitRecord {
                t,
                object_id,
                triangle_id,
                shading_normal: tri.shading_normal(b1, b2),
                geometric_normal: tri.geometric_normal(),
                hit_point: ray.at(t),
            }
        })
    }

    /// True when any triangle lies on the ray within `(epsilon_t, t_max)`.
    pub fn trace_occluded(&self, ray: &Ray, t_max: f64) -> bool {
        let Some(tlas) = &self.tlas else { return false };
        let eps = self.epsilon_t;
        let mut hit = false;
        tlas.bvh.traverse(ray, t_max, |obj, t_far| {
            if self.objects[obj as usize].occluded(ray, eps, t_far) {
                hit = true;
                None
            } else {
                Some(t_far)
            }
        });
        hit
    }

    /// Occlusion restricted to one object's bottom-level hierarchy; this is
    /// the ground-truth label for network training.
    pub fn trace_occluded_by_object(&self, ray: &Ray, object_id: usize, t_max: f64) -> bool {
        self.objects[object_id].occluded(ray, self.epsilon_t, t_max)
    }
}
