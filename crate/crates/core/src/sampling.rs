//! KD-tree sub-sampling and the inverse merge.
//!
//! [`subsample`] splits a cloud into groups of `n_per_sample` points. Each
//! group is the exact k-nearest-neighbour ball, over the still un-sampled
//! points, around a randomly drawn center. Every point lands in exactly one
//! group. Nothing is dropped or duplicated, and the final group holds
//! whatever remains (1 to `n_per_sample` points).
//!
//! Control flow under [`RebuildPolicy::OnFirstOverlap`]: build a tree over
//! the remaining points, then keep drawing centers against that tree. A
//! draw is accepted only if none of its neighbours was taken since the
//! build. The first draw that overlaps is discarded, and the tree is
//! rebuilt over what is left. So at most one k-NN query is wasted per
//! rebuild, and the first draw after any rebuild always succeeds.
//!
//! [`merge`] scatters per-sub-sample predictions back onto the parent cloud
//! by index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{ClassId, FeatureSchema, PartitionError, PointCloud, PointIndex, SubSample, SubSampleSet};
use crate::kdtree::{KdTree, KdTreeError, DEFAULT_LEAF_SIZE};

/// Name of the generator used for center draws, recorded in manifests.
pub const RNG_NAME: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterStrategy {
    /// Uniform over the remaining points, drawn from ChaCha8 seeded with the config seed.
    #[default]
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RebuildPolicy {
    /// Reuse one tree until a draw overlaps already-taken points.
    #[default]
    OnFirstOverlap,
    /// Rebuild after every accepted draw.
    AlwaysRebuild,
}

impl CenterStrategy {
    pub fn name(self) -> &'static str {
        match self {
            CenterStrategy::UniformRandom => "uniform_random",
        }
    }
}

impl RebuildPolicy {
    pub fn name(self) -> &'static str {
        match self {
            RebuildPolicy::OnFirstOverlap => "on_first_overlap",
            RebuildPolicy::AlwaysRebuild => "always_rebuild",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KdssConfig {
    pub n_per_sample: usize,
    pub seed: u64,
    pub center_strategy: CenterStrategy,
    pub rebuild_policy: RebuildPolicy,
    pub leaf_size: usize,
}

impl KdssConfig {
    pub fn new(n_per_sample: usize, seed: u64) -> Self {
        Self {
            n_per_sample,
            seed,
            center_strategy: CenterStrategy::UniformRandom,
            rebuild_policy: RebuildPolicy::OnFirstOverlap,
            leaf_size: DEFAULT_LEAF_SIZE,
        }
    }

    pub fn with_rebuild_policy(mut self, policy: RebuildPolicy) -> Self {
        self.rebuild_policy = policy;
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("empty cloud")]
    EmptyCloud,
    #[error("points per sub-sample must be at least 1")]
    ZeroSampleSize,
    #[error("cloud has {0} points; at most u32::MAX are supported")]
    TooLarge(usize),
    #[error("cloud is unlabeled")]
    Unlabeled,
    #[error(transparent)]
    KdTree(#[from] KdTreeError),
    #[error(transparent)]
    Merge(#[from] MergeError),
}

/// Work counters from one [`subsample`] run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleStats {
    /// Rebuilds of the index over the remaining points, whether done from
    /// scratch or by dropping taken points from the previous tree.
    pub tree_builds: usize,
    pub discarded_draws: usize,
}

/// Partitions `cloud` into sub-samples of `config.n_per_sample` points.
///
/// The returned set carries [`FeatureSchema::for_cloud`]; swap it with
/// [`SubSampleSet::with_schema`] when a different feature layout is wanted.
pub fn subsample(cloud: &PointCloud, config: &KdssConfig) -> Result<SubSampleSet, SampleError> {
    subsample_with_stats(cloud, config).map(|(set, _)| set)
}

pub fn subsample_with_stats(
    cloud: &PointCloud,
    config: &KdssConfig,
) -> Result<(SubSampleSet, SampleStats), SampleError> {
    let n = cloud.len();
    if n == 0 {
        return Err(SampleError::EmptyCloud);
    }
    if n > PointIndex::MAX as usize {
        return Err(SampleError::TooLarge(n));
    }
    let size = config.n_per_sample;
    if size == 0 {
        return Err(SampleError::ZeroSampleSize);
    }

    let positions = &cloud.positions;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut remaining = Remaining::new(n);
    let mut taken = vec![false; n];
    let mut subsamples: Vec<SubSample> = Vec::with_capacity(n.div_ceil(size));
    let mut stats = SampleStats::default();

    let mut tree: Option<KdTree> = None;
    let mut since_build: Vec<PointIndex> = Vec::new();
    while remaining.len() > size {
        // A rebuild must index exactly the remaining points. While most of
        // the old tree is still live, dropping the points taken since the
        // last rebuild gives identical answers at a fraction of the cost.
        let tree = match tree.take() {
            Some(mut t) if 2 * (t.removed() + since_build.len()) <= t.removed() + t.len() => {
                for &i in &since_build {
                    t.remove(i);
                }
                tree.insert(t)
            }
            _ => tree.insert(KdTree::build(positions, Some(remaining.as_slice()), config.leaf_size)?),
        };
        since_build.clear();
        stats.tree_builds += 1;
        while remaining.len() > size {
            let center = match config.center_strategy {
                CenterStrategy::UniformRandom => remaining.as_slice()[rng.random_range(0..remaining.len())],
            };
            let mut indices: Vec<PointIndex> = tree
                .knn(&positions[center as usize], size)?
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            if !indices.contains(&center) {
                // Only reachable when `size` or more points sit exactly on the
                // center; the tie rule then prefers lower indices. The last slot
                // is also at distance zero, so swapping in the center keeps the
                // ball exact and the order sorted.
                *indices.last_mut().unwrap() = center;
            }
            if indices.iter().any(|&i| taken[i as usize]) {
                stats.discarded_draws += 1;
                break;
            }
            for &i in &indices {
                taken[i as usize] = true;
                remaining.remove(i);
            }
            since_build.extend_from_slice(&indices);
            subsamples.push(SubSample {
                parent_size: n,
                indices,
                center_index: center,
                ordinal: subsamples.len() as u32,
            });
            if config.rebuild_policy == RebuildPolicy::AlwaysRebuild {
                break;
            }
        }
    }

    let mut rest = remaining.into_vec();
    rest.sort_unstable();
    subsamples.push(SubSample {
        parent_size: n,
        center_index: rest[0],
        indices: rest,
        ordinal: subsamples.len() as u32,
    });

    let set = SubSampleSet {
        subsamples,
        n_per_sample: size,
        seed: config.seed,
        schema: FeatureSchema::for_cloud(cloud),
    };
    Ok((set, stats))
}

/// Un-sampled point ids with O(1) removal. Order is deterministic.
struct Remaining {
    ids: Vec<PointIndex>,
    slot: Vec<u32>,
}

impl Remaining {
    fn new(n: usize) -> Self {
        Self {
            ids: (0..n as PointIndex).collect(),
            slot: (0..n as u32).collect(),
        }
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn as_slice(&self) -> &[PointIndex] {
        &self.ids
    }

    fn remove(&mut self, id: PointIndex) {
        let pos = self.slot[id as usize] as usize;
        self.ids.swap_remove(pos);
        if let Some(&moved) = self.ids.get(pos) {
            self.slot[moved as usize] = pos as u32;
        }
    }

    fn into_vec(self) -> Vec<PointIndex> {
        self.ids
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeResult {
    pub predicted: Vec<ClassId>,
    /// How many sub-samples wrote each point; all ones after a valid merge.
    pub coverage_count: Vec<u32>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MergeError {
    #[error("got predictions for {found} sub-samples, set has {expected}")]
    Count { expected: usize, found: usize },
    #[error("sub-sample {ordinal}: {found} predictions for {expected} points")]
    Size { ordinal: u32, expected: usize, found: usize },
    #[error("not a partition: {0}")]
    NotAPartition(String),
}

impl From<PartitionError> for MergeError {
    fn from(e: PartitionError) -> Self {
        MergeError::NotAPartition(e.to_string())
    }
}

/// Writes each sub-sample's predictions back to its parent indices.
///
/// Fails without partial output if any length disagrees or the set does
/// not cover every parent point exactly once.
pub fn merge(set: &SubSampleSet, predictions: &[Vec<ClassId>]) -> Result<MergeResult, MergeError> {
    if predictions.len() != set.len() {
        return Err(MergeError::Count { expected: set.len(), found: predictions.len() });
    }
    for (sub, pred) in set.subsamples.iter().zip(predictions) {
        if pred.len() != sub.len() {
            return Err(MergeError::Size { ordinal: sub.ordinal, expected: sub.len(), found: pred.len() });
        }
    }
    let n = set.parent_size();
    let mut predicted = vec![0; n];
    let mut coverage_count = vec![0u32; n];
    for (sub, pred) in set.subsamples.iter().zip(predictions) {
        for (&idx, &class) in sub.indices.iter().zip(pred) {
            let i = idx as usize;
            if i >= n {
                return Err(MergeError::NotAPartition(format!(
                    "sub-sample {}: index {idx} out of range for {n} points",
                    sub.ordinal
                )));
            }
            predicted[i] = class;
            coverage_count[i] += 1;
        }
    }
    if let Some(i) = coverage_count.iter().position(|&c| c != 1) {
        return Err(MergeError::NotAPartition(format!(
            "point {i} covered {} times",
            coverage_count[i]
        )));
    }
    Ok(MergeResult { predicted, coverage_count })
}

/// Sub-samples a labeled cloud, merges the true labels back and reports
/// whether the result equals the original labeling.
pub fn roundtrip_check(cloud: &PointCloud, config: &KdssConfig) -> Result<bool, SampleError> {
    let labels = cloud.labels.as_ref().ok_or(SampleError::Unlabeled)?;
    let set = subsample(cloud, config)?;
    let per_sample: Vec<Vec<ClassId>> = set
        .subsamples
        .iter()
        .map(|s| s.indices.iter().map(|&i| labels[i as usize]).collect())
        .collect();
    let merged = merge(&set, &per_sample)?;
    Ok(merged.predicted == *labels)
}
