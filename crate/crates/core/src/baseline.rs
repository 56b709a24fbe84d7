//! k-NN label voting over feature rows: a minimal stand-in segmentation
//! backend that consumes exactly what a neural backend would.
//!
//! Neighbours are exact under Euclidean distance over the full feature
//! vector, ties broken by smaller training row. Rows are indexed by a
//! KD-tree over all feature columns. A subtree is skipped only when the
//! squared offset to its splitting plane already exceeds the current k-th
//! distance. That offset is one of the non-negative terms summed into
//! every full distance behind the plane, so pruning never drops a true
//! neighbour.
//!
//! Model file layout (little-endian):
//!
//! ```text
//! "KDSM" | version u16 | k_vote u32 | rows u32 | width u16 | schema_len u16
//! | schema (UTF-8, comma-separated channel names)
//! | rows·width f64 features | rows i32 labels
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{ClassId, FeatureSchema};
use crate::features::FeatureMatrix;
use crate::kdtree::DEFAULT_LEAF_SIZE;

pub const MODEL_MAGIC: &[u8; 4] = b"KDSM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no training data")]
    Empty,
    #[error("k_vote must be at least 1")]
    ZeroK,
    #[error("{rows} training rows cannot supply {k_vote} neighbours")]
    TooFewRows { rows: usize, k_vote: usize },
    #[error("schema mismatch: expected [{expected}], got [{found}]")]
    SchemaMismatch { expected: String, found: String },
    #[error("training input {index}: {rows} rows but {labels} labels")]
    LabelCount { index: usize, rows: usize, labels: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone)]
pub struct KnnModel {
    schema: FeatureSchema,
    width: usize,
    rows: Vec<f64>,
    labels: Vec<ClassId>,
    k_vote: usize,
    tree: RowTree,
}

impl PartialEq for KnnModel {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.k_vote == other.k_vote
            && self.labels == other.labels
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.rows.len() == other.rows.len()
    }
}

fn mismatch(expected: &FeatureSchema, found: &FeatureSchema) -> BaselineError {
    BaselineError::SchemaMismatch { expected: expected.to_string(), found: found.to_string() }
}

/// Stores the training rows and labels of every `(matrix, labels)` pair.
pub fn fit(train: &[(FeatureMatrix, Vec<ClassId>)], k_vote: usize) -> Result<KnnModel, BaselineError> {
    if k_vote == 0 {
        return Err(BaselineError::ZeroK);
    }
    let schema = train.first().ok_or(BaselineError::Empty)?.0.schema().clone();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (index, (m, l)) in train.iter().enumerate() {
        if m.schema() != &schema {
            return Err(mismatch(&schema, m.schema()));
        }
        if m.rows() != l.len() {
            return Err(BaselineError::LabelCount { index, rows: m.rows(), labels: l.len() });
        }
        rows.extend_from_slice(m.values());
        labels.extend_from_slice(l);
    }
    KnnModel::from_parts(schema, rows, labels, k_vote)
}

impl KnnModel {
    fn from_parts(schema: FeatureSchema, rows: Vec<f64>, labels: Vec<ClassId>, k_vote: usize) -> Result<Self, BaselineError> {
        let width = schema.total_width();
        if labels.is_empty() {
            return Err(BaselineError::Empty);
        }
        if labels.len() < k_vote {
            return Err(BaselineError::TooFewRows { rows: labels.len(), k_vote });
        }
        let tree = RowTree::build(&rows, width, DEFAULT_LEAF_SIZE);
        Ok(Self { schema, width, rows, labels, k_vote, tree })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k_vote(&self) -> usize {
        self.k_vote
    }

    #[cfg(test)]
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.width..(i + 1) * self.width]
    }

    #[cfg(test)]
    fn full_distance(&self, q: &[f64], i: usize) -> f64 {
        squared_distance(q, self.row(i))
    }

    /// The `k_vote` nearest training rows to `q` as `(distance², row)`,
    /// nearest first.
    pub fn neighbors(&self, q: &[f64]) -> Vec<(f64, u32)> {
        self.tree.knn(q, self.k_vote)
    }

    /// Majority label among the neighbours of `q`; ties go to the smallest class id.
    pub fn predict_row(&self, q: &[f64]) -> ClassId {
        let mut votes: Vec<(ClassId, usize)> = Vec::new();
        for (_, i) in self.neighbors(q) {
            let label = self.labels[i as usize];
            match votes.iter_mut().find(|(c, _)| *c == label) {
                Some(v) => v.1 += 1,
                None => votes.push((label, 1)),
            }
        }
        votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(c, _)| c)
            .expect("k_vote >= 1")
    }

    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Vec<ClassId>, BaselineError> {
        if matrix.schema() != &self.schema {
            return Err(mismatch(&self.schema, matrix.schema()));
        }
        Ok(matrix.values().par_chunks(self.width).map(|q| self.predict_row(q)).collect())
    }

    pub fn encode(&self) -> Vec<u8> {
        let schema = self.schema.to_string();
        let mut out = Vec::with_capacity(20 + schema.len() + self.rows.len() * 8 + self.labels.len() * 4);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.k_vote as u32).to_le_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.extend_from_slice(&(schema.len() as u16).to_le_bytes());
        out.extend_from_slice(schema.as_bytes());
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as i32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BaselineError> {
        let fmt = |m: &str| BaselineError::Format(m.to_string());
        let take = |at: &mut usize, n: usize| -> Result<&[u8], BaselineError> {
            let s = bytes.get(*at..*at + n).ok_or_else(|| fmt("file too short"))?;
            *at += n;
            Ok(s)
        };
        let mut at = 0;
        if take(&mut at, 4)? != MODEL_MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(BaselineError::Format(format!("unsupported version {version}")));
        }
        let k_vote = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let rows = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let width = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        let slen = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
        let schema: FeatureSchema = std::str::from_utf8(take(&mut at, slen)?)
            .map_err(|_| fmt("schema is not UTF-8"))?
            .parse()
            .map_err(|e: crate::cloud::SchemaError| BaselineError::Format(e.to_string()))?;
        if schema.total_width() != width {
            return Err(fmt("width disagrees with schema"));
        }
        let values = take(&mut at, rows * width * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = take(&mut at, rows * 4)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .map(|l| u32::try_from(l).map_err(|_| fmt("negative label")))
            .collect::<Result<Vec<_>, _>>()?;
        if at != bytes.len() {
            return Err(fmt("trailing bytes"));
        }
        Self::from_parts(schema, values, labels, k_vote)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BaselineError> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|source| BaselineError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BaselineError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| BaselineError::Io { path: path.display().to_string(), source })?;
        Self::decode(&bytes)
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// KD-tree over feature rows of any width. Rows are copied in leaf order.
#[derive(Debug, Clone)]
struct RowTree {
    width: usize,
    ids: Vec<u32>,
    data: Vec<f64>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate(f64, u32);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl RowTree {
    fn build(rows: &[f64], width: usize, leaf_size: usize) -> Self {
        let mut ids: Vec<u32> = (0..(rows.len() / width) as u32).collect();
        let mut nodes = Vec::new();
        Self::build_node(rows, width, leaf_size, &mut ids, 0, &mut nodes);
        let data = ids.iter().flat_map(|&i| &rows[i as usize * width..(i as usize + 1) * width]).copied().collect();
        Self { width, ids, data, nodes }
    }

    fn build_node(rows: &[f64], w: usize, leaf: usize, ids: &mut [u32], start: usize, nodes: &mut Vec<Node>) -> usize {
        let at = nodes.len();
        nodes.push(Node::Leaf { start, end: start + ids.len() });
        if ids.len() <= leaf {
            return at;
        }
        let coord = |i: u32, d: usize| rows[i as usize * w + d];
        let dim = (0..w)
            .map(|d| {
                let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    (lo.min(coord(i, d)), hi.max(coord(i, d)))
                });
                (hi - lo, d)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
            .map(|(_, d)| d)
            .unwrap_or(0);
        let mid = ids.len() / 2;
        ids.select_nth_unstable_by(mid, |&a, &b| coord(a, dim).total_cmp(&coord(b, dim)).then(a.cmp(&b)));
        let value = coord(ids[mid], dim);
        let (lo, hi) = ids.split_at_mut(mid);
        let left = Self::build_node(rows, w, leaf, lo, start, nodes);
        let right = Self::build_node(rows, w, leaf, hi, start + mid, nodes);
        nodes[at] = Node::Split { dim, value, left, right };
        at
    }

    fn knn(&self, q: &[f64], k: usize) -> Vec<(f64, u32)> {
        let mut heap = std::collections::BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        heap.into_sorted_vec().into_iter().map(|Candidate(d, i)| (d, i)).collect()
    }

    fn search(&self, node: usize, q: &[f64], k: usize, heap: &mut std::collections::BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for pos in start..end {
                    let row = &self.data[pos * self.width..(pos + 1) * self.width];
                    let c = Candidate(squared_distance(q, row), self.ids[pos]);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("k >= 1") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // `<=` keeps equal-distance rows with smaller ids reachable.
                if heap.len() < k || diff * diff <= heap.peek().expect("non-empty").0 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}
