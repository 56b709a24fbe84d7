//! Static 3-D KD-tree with exact k-nearest-neighbour queries.
//!
//! Distances are squared Euclidean throughout, always summed in x, y, z
//! order, so the tree and [`brute_force_knn`] agree bit for bit. Equal
//! distances are ordered by the smaller point index.
//!
//! The tree does not support deletion; callers that need to drop points
//! rebuild over the remaining subset.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::cloud::PointIndex;

pub const DEFAULT_LEAF_SIZE: usize = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KdTreeError {
    #[error("empty index set")]
    EmptyIndexSet,
    #[error("index {index} out of range for {len} positions")]
    IndexOutOfRange { index: PointIndex, len: usize },
    #[error("k exceeds population: k = {k}, indexed points = {population}")]
    KExceedsPopulation { k: usize, population: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("leaf size must be positive")]
    ZeroLeafSize,
}

/// A neighbour: point index and squared distance to the query.
pub type Neighbor = (PointIndex, f64);

#[inline]
pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    /// Indexed point ids, grouped by leaf.
    ids: Vec<PointIndex>,
    /// Coordinates parallel to `ids`.
    coords: Vec<[f64; 3]>,
    nodes: Vec<Node>,
    /// Smallest live point id under each node, for tie pruning.
    min_ids: Vec<PointIndex>,
    /// Live points under each node.
    live: Vec<u32>,
    /// Slot range covered by each node.
    ranges: Vec<(u32, u32)>,
    /// Whether each slot is still indexed.
    alive: Vec<bool>,
    /// Slot of every point id, `u32::MAX` when not indexed.
    slot_of: Vec<u32>,
    leaf_size: usize,
}

impl KdTree {
    /// Indexes every position with the default leaf size.
    pub fn new(positions: &[[f64; 3]]) -> Result<Self, KdTreeError> {
        Self::build(positions, None, DEFAULT_LEAF_SIZE)
    }

    /// Indexes `subset` (or all of `positions`). Deterministic for fixed input.
    pub fn build(
        positions: &[[f64; 3]],
        subset: Option<&[PointIndex]>,
        leaf_size: usize,
    ) -> Result<Self, KdTreeError> {
        if leaf_size == 0 {
            return Err(KdTreeError::ZeroLeafSize);
        }
        let ids: Vec<PointIndex> = match subset {
            Some(s) => {
                if let Some(&bad) = s.iter().find(|&&i| i as usize >= positions.len()) {
                    return Err(KdTreeError::IndexOutOfRange { index: bad, len: positions.len() });
                }
                s.to_vec()
            }
            None => (0..positions.len() as PointIndex).collect(),
        };
        if ids.is_empty() {
            return Err(KdTreeError::EmptyIndexSet);
        }
        let mut items: Vec<(PointIndex, [f64; 3])> =
            ids.iter().map(|&i| (i, positions[i as usize])).collect();
        let mut nodes = Vec::with_capacity(2 * items.len() / leaf_size + 1);
        build_node(&mut items, 0, leaf_size, &mut nodes);
        let (ids, coords): (Vec<PointIndex>, _) = items.into_iter().unzip();
        let mut ranges = vec![(0, 0); nodes.len()];
        fill_ranges(&nodes, 0, &mut ranges);
        let min_ids = (0..nodes.len())
            .map(|n| {
                let (a, b) = ranges[n];
                ids[a as usize..b as usize].iter().copied().min().unwrap_or(PointIndex::MAX)
            })
            .collect();
        let live = ranges.iter().map(|&(a, b)| b - a).collect();
        let mut slot_of = vec![u32::MAX; positions.len()];
        for (slot, &id) in ids.iter().enumerate() {
            slot_of[id as usize] = slot as u32;
        }
        let alive = vec![true; ids.len()];
        Ok(Self { ids, coords, nodes, min_ids, live, ranges, alive, slot_of, leaf_size })
    }

    /// Number of indexed (not removed) points.
    pub fn len(&self) -> usize {
        self.live[0] as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points removed since the build.
    pub fn removed(&self) -> usize {
        self.ids.len() - self.len()
    }

    /// Drops `index` from the tree. Queries afterwards answer exactly as a
    /// fresh build over the remaining points would. Returns false if the
    /// point was not indexed.
    pub fn remove(&mut self, index: PointIndex) -> bool {
        let Some(&slot) = self.slot_of.get(index as usize) else {
            return false;
        };
        if slot == u32::MAX || !self.alive[slot as usize] {
            return false;
        }
        self.alive[slot as usize] = false;
        self.remove_below(0, slot);
        true
    }

    fn remove_below(&mut self, node: usize, slot: u32) {
        self.live[node] -= 1;
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                self.min_ids[node] = (start as usize..end as usize)
                    .filter(|&s| self.alive[s])
                    .map(|s| self.ids[s])
                    .min()
                    .unwrap_or(PointIndex::MAX);
            }
            Node::Split { left, right, .. } => {
                let child = if slot < self.ranges[left as usize].1 { left } else { right };
                self.remove_below(child as usize, slot);
                self.min_ids[node] = self.min_ids[left as usize].min(self.min_ids[right as usize]);
            }
        }
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Point ids of every leaf, left to right, including removed ones.
    pub fn leaves(&self) -> Vec<&[PointIndex]> {
        self.nodes
            .iter()
            .filter_map(|n| match *n {
                Node::Leaf { start, end } => Some(&self.ids[start as usize..end as usize]),
                Node::Split { .. } => None,
            })
            .collect()
    }

    /// Checks the split-plane ordering of every internal node.
    pub fn splits_are_ordered(&self) -> bool {
        self.check_node(0).is_some()
    }

    // Returns the id range covered by `node` when its subtree is well ordered.
    fn check_node(&self, node: usize) -> Option<(usize, usize)> {
        match self.nodes[node] {
            Node::Leaf { start, end } => Some((start as usize, end as usize)),
            Node::Split { axis, value, left, right } => {
                let (ls, le) = self.check_node(left as usize)?;
                let (rs, re) = self.check_node(right as usize)?;
                let a = axis as usize;
                let ok = le == rs
                    && self.coords[ls..le].iter().all(|c| c[a] <= value)
                    && self.coords[rs..re].iter().all(|c| c[a] >= value);
                ok.then_some((ls, re))
            }
        }
    }

    /// The `k` nearest indexed points to `query`, ascending by
    /// `(squared distance, index)`.
    pub fn knn(&self, query: &[f64; 3], k: usize) -> Result<Vec<Neighbor>, KdTreeError> {
        check_k(k, self.len())?;
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        Ok(into_sorted(heap))
    }

    fn search(&self, node: usize, query: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    if !self.alive[slot] {
                        continue;
                    }
                    let cand = Candidate {
                        dist: squared_distance(query, &self.coords[slot]),
                        index: self.ids[slot],
                    };
                    offer(heap, k, cand);
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = query[axis as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                if self.live[near as usize] > 0 {
                    self.search(near as usize, query, k, heap);
                }
                if self.live[far as usize] == 0 {
                    return;
                }
                let plane = diff * diff;
                // At equal distance a far point can still win on index, but
                // only if the subtree holds an id below the current worst.
                let visit = match heap.peek() {
                    Some(w) if heap.len() == k => {
                        plane < w.dist || (plane == w.dist && self.min_ids[far as usize] < w.index)
                    }
                    _ => true,
                };
                if visit {
                    self.search(far as usize, query, k, heap);
                }
            }
        }
    }
}

fn build_node(
    items: &mut [(PointIndex, [f64; 3])],
    offset: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let id = nodes.len() as u32;
    if items.len() <= leaf_size {
        nodes.push(Node::Leaf { start: offset as u32, end: (offset + items.len()) as u32 });
        return id;
    }
    let axis = widest_axis(items);
    let mid = items.len() / 2;
    items.select_nth_unstable_by(mid, |a, b| {
        a.1[axis].total_cmp(&b.1[axis]).then(a.0.cmp(&b.0))
    });
    let value = items[mid].1[axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = items.split_at_mut(mid);
    let left = build_node(lo, offset, leaf_size, nodes);
    let right = build_node(hi, offset + mid, leaf_size, nodes);
    nodes[id as usize] = Node::Split { axis: axis as u8, value, left, right };
    id
}

fn fill_ranges(nodes: &[Node], node: usize, out: &mut [(u32, u32)]) -> (u32, u32) {
    let r = match nodes[node] {
        Node::Leaf { start, end } => (start, end),
        Node::Split { left, right, .. } => {
            (fill_ranges(nodes, left as usize, out).0, fill_ranges(nodes, right as usize, out).1)
        }
    };
    out[node] = r;
    r
}

fn widest_axis(items: &[(PointIndex, [f64; 3])]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for (_, p) in items {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let spread = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut axis = 0;
    for a in 1..3 {
        if spread[a] > spread[axis] {
            axis = a;
        }
    }
    axis
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist: f64,
    index: PointIndex,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

#[inline]
fn offer(heap: &mut BinaryHeap<Candidate>, k: usize, cand: Candidate) {
    if heap.len() < k {
        heap.push(cand);
    } else if let Some(mut worst) = heap.peek_mut() {
        if cand < *worst {
            *worst = cand;
        }
    }
}

fn into_sorted(heap: BinaryHeap<Candidate>) -> Vec<Neighbor> {
    heap.into_sorted_vec().into_iter().map(|c| (c.index, c.dist)).collect()
}

fn check_k(k: usize, population: usize) -> Result<(), KdTreeError> {
    if k == 0 {
        Err(KdTreeError::ZeroK)
    } else if k > population {
        Err(KdTreeError::KExceedsPopulation { k, population })
    } else {
        Ok(())
    }
}

/// Exact k-NN by linear scan, with the same distance arithmetic and tie
/// rule as [`KdTree::knn`]. Reference implementation for tests.
pub fn brute_force_knn(
    positions: &[[f64; 3]],
    subset: Option<&[PointIndex]>,
    query: &[f64; 3],
    k: usize,
) -> Result<Vec<Neighbor>, KdTreeError> {
    let ids: Vec<PointIndex> = match subset {
        Some(s) => {
            if let Some(&bad) = s.iter().find(|&&i| i as usize >= positions.len()) {
                return Err(KdTreeError::IndexOutOfRange { index: bad, len: positions.len() });
            }
            s.to_vec()
        }
        None => (0..positions.len() as PointIndex).collect(),
    };
    if ids.is_empty() {
        return Err(KdTreeError::EmptyIndexSet);
    }
    check_k(k, ids.len())?;
    let mut all: Vec<Neighbor> = ids
        .into_iter()
        .map(|i| (i, squared_distance(query, &positions[i as usize])))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    Ok(all)
}
