//! Per-sub-sample feature matrices and dataset-level statistics.
//!
//! Feature values by channel:
//! - `position`: dataset units, untouched
//! - `color`: rescaled from `[0, 255]` to `[0, 1]`
//! - `normal`: as stored
//! - `intensity`: raw
//! - `normalized_position`: per-axis min-max over the sub-sample, in `[0, 1]`;
//!   an axis with zero extent maps to 0

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{Channel, ClassId, FeatureSchema, PointCloud, SubSample};

/// Recorded in manifests so backends know what they were trained on.
pub const NORMALIZATION_RULE: &str = "per_axis_min_max_unit";
pub const COLOR_RULE: &str = "rgb_div_255";
pub const CLASS_WEIGHT_RULE: &str = "inverse_frequency_normalized";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("missing channel: {0}")]
    MissingChannel(Channel),
    #[error("labels are empty")]
    EmptyLabels,
    #[error("label {label} at position {position} is out of range for {num_classes} classes")]
    LabelOutOfRange { position: usize, label: ClassId, num_classes: usize },
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("{units} units cannot fill {partitions} non-empty partitions")]
    TooFewUnits { units: usize, partitions: usize },
    #[error("matrix has {found} values, expected {rows} x {width}")]
    Shape { rows: usize, width: usize, found: usize },
}

/// Row-major features for one sub-sample; row `j` is `sub.indices[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    schema: FeatureSchema,
    rows: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_values(schema: FeatureSchema, values: Vec<f64>) -> Result<Self, FeatureError> {
        let width = schema.total_width();
        if values.len() % width != 0 {
            return Err(FeatureError::Shape { rows: values.len() / width, width, found: values.len() });
        }
        Ok(Self { rows: values.len() / width, schema, values })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.schema.total_width()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let w = self.width();
        &self.values[j * w..(j + 1) * w]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width())
    }

    /// The same matrix rounded through `f32`, exactly as a batch file stores it.
    pub fn quantized(&self) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: self.rows,
            values: self.values.iter().map(|&v| v as f32 as f64).collect(),
        }
    }

    fn channel_columns(&self, channel: Channel) -> Option<std::ops::Range<usize>> {
        self.schema.offset_of(channel).map(|o| o..o + channel.arity())
    }
}

/// Per-axis min-max normalization of the sub-sample's positions.
pub fn normalize_coordinates(cloud: &PointCloud, sub: &SubSample) -> Vec<[f64; 3]> {
    let pts: Vec<[f64; 3]> = sub.indices.iter().map(|&i| cloud.positions[i as usize]).collect();
    normalize_points(&pts)
}

fn normalize_points(pts: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    pts.iter()
        .map(|p| {
            let mut out = [0.0; 3];
            for a in 0..3 {
                let extent = hi[a] - lo[a];
                if extent > 0.0 {
                    out[a] = ((p[a] - lo[a]) / extent).clamp(0.0, 1.0);
                }
            }
            out
        })
        .collect()
}

/// Builds the feature matrix of `sub` with channels in `schema` order.
pub fn assemble(cloud: &PointCloud, sub: &SubSample, schema: &FeatureSchema) -> Result<FeatureMatrix, FeatureError> {
    if let Some(&missing) = schema.channels().iter().find(|&&c| !cloud.has_channel(c)) {
        return Err(FeatureError::MissingChannel(missing));
    }
    let normalized = schema
        .contains(Channel::NormalizedPosition)
        .then(|| normalize_coordinates(cloud, sub));
    let mut values = Vec::with_capacity(sub.len() * schema.total_width());
    for (j, &idx) in sub.indices.iter().enumerate() {
        let i = idx as usize;
        for &channel in schema.channels() {
            match channel {
                Channel::Position => values.extend_from_slice(&cloud.positions[i]),
                Channel::Color => {
                    let c = cloud.colors.as_ref().unwrap()[i];
                    values.extend(c.iter().map(|&v| v as f64 / 255.0));
                }
                Channel::Normal => {
                    let n = cloud.normals.as_ref().unwrap()[i];
                    values.extend(n.iter().map(|&v| v as f64));
                }
                Channel::Intensity => values.push(cloud.intensity.as_ref().unwrap()[i] as f64),
                Channel::NormalizedPosition => values.extend_from_slice(&normalized.as_ref().unwrap()[j]),
            }
        }
    }
    Ok(FeatureMatrix { schema: schema.clone(), rows: sub.len(), values })
}

/// Rotates positions (and normals) about the vertical axis by `angle`
/// radians. Normalized positions are recomputed from the rotated positions.
///
/// A matrix without a position channel is returned unchanged.
pub fn augment_rotate_z(matrix: &FeatureMatrix, angle: f64) -> FeatureMatrix {
    let mut out = matrix.clone();
    let Some(pos) = matrix.channel_columns(Channel::Position) else {
        return out;
    };
    let (sin, cos) = angle.sin_cos();
    let normal = matrix.channel_columns(Channel::Normal);
    let w = matrix.width();
    for row in out.values.chunks_exact_mut(w) {
        for cols in std::iter::once(pos.clone()).chain(normal.clone()) {
            let (x, y) = (row[cols.start], row[cols.start + 1]);
            row[cols.start] = cos * x - sin * y;
            row[cols.start + 1] = sin * x + cos * y;
        }
    }
    if let Some(norm) = matrix.channel_columns(Channel::NormalizedPosition) {
        let pts: Vec<[f64; 3]> = out
            .values
            .chunks_exact(w)
            .map(|r| [r[pos.start], r[pos.start + 1], r[pos.start + 2]])
            .collect();
        for (row, p) in out.values.chunks_exact_mut(w).zip(normalize_points(&pts)) {
            row[norm.clone()].copy_from_slice(&p);
        }
    }
    out
}

/// Per-class loss weights; sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
}

/// Inverse-frequency weights, renormalized to sum to 1. Classes absent
/// from `labels` get weight 0.
pub fn class_weights(labels: &[ClassId], num_classes: usize) -> Result<ClassWeights, FeatureError> {
    if labels.is_empty() {
        return Err(FeatureError::EmptyLabels);
    }
    let mut counts = vec![0u64; num_classes];
    for (position, &label) in labels.iter().enumerate() {
        match counts.get_mut(label as usize) {
            Some(c) => *c += 1,
            None => return Err(FeatureError::LabelOutOfRange { position, label, num_classes }),
        }
    }
    let inverse: Vec<f64> = counts.iter().map(|&c| if c > 0 { 1.0 / c as f64 } else { 0.0 }).collect();
    let total: f64 = inverse.iter().sum();
    Ok(ClassWeights { weights: inverse.iter().map(|w| w / total).collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64) -> Self {
        Self { train, val }
    }

    pub fn test(&self) -> f64 {
        (1.0 - self.train - self.val).max(0.0)
    }
}

/// Tag per unit, in the order the units were given.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment<T> {
    pub assignments: Vec<(T, SplitTag)>,
    pub seed: u64,
}

impl<T> SplitAssignment<T> {
    pub fn count(&self, tag: SplitTag) -> usize {
        self.assignments.iter().filter(|(_, t)| *t == tag).count()
    }

    pub fn units(&self, tag: SplitTag) -> impl Iterator<Item = &T> {
        self.assignments.iter().filter(move |(_, t)| *t == tag).map(|(u, _)| u)
    }
}

const FRACTION_EPS: f64 = 1e-9;

/// Seeded shuffle of whole units followed by a contiguous cut into
/// train, val and the remainder as test.
///
/// Counts use largest-remainder rounding, so each lands within one unit of
/// its target. Every partition with a positive fraction gets at least one
/// unit, which takes precedence when a target is below one unit.
pub fn split<T: Clone>(units: &[T], fractions: SplitFractions, seed: u64) -> Result<SplitAssignment<T>, FeatureError> {
    let SplitFractions { train, val } = fractions;
    if !(train.is_finite() && val.is_finite()) || train < 0.0 || val < 0.0 || train + val <= 0.0 {
        return Err(FeatureError::Fractions(format!("train={train}, val={val}")));
    }
    if train + val > 1.0 + FRACTION_EPS {
        return Err(FeatureError::Fractions(format!("train + val = {} exceeds 1", train + val)));
    }
    let n = units.len();
    let targets = [train, val, fractions.test()];
    let wanted: Vec<bool> = targets.iter().map(|&f| f > FRACTION_EPS).collect();
    let partitions = wanted.iter().filter(|&&w| w).count();
    if n < partitions {
        return Err(FeatureError::TooFewUnits { units: n, partitions });
    }

    let exact: Vec<f64> = targets.iter().map(|&f| if f > FRACTION_EPS { f * n as f64 } else { 0.0 }).collect();
    let mut counts: Vec<usize> = exact.iter().map(|&e| (e + FRACTION_EPS).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).filter(|&p| wanted[p]).collect();
    order.sort_by(|&a, &b| (exact[b] - counts[b] as f64).total_cmp(&(exact[a] - counts[a] as f64)).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &p in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[p] += 1;
        left -= 1;
    }
    for p in 0..3 {
        if wanted[p] && counts[p] == 0 {
            let donor = (0..3).max_by_key(|&q| (counts[q], std::cmp::Reverse(q))).unwrap();
            counts[donor] -= 1;
            counts[p] = 1;
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tags = vec![SplitTag::Test; n];
    for (rank, &unit) in perm.iter().enumerate() {
        tags[unit] = if rank < counts[0] {
            SplitTag::Train
        } else if rank < counts[0] + counts[1] {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    Ok(SplitAssignment {
        assignments: units.iter().cloned().zip(tags).collect(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn sub_of(cloud: &PointCloud) -> SubSample {
        SubSample {
            parent_size: cloud.len(),
            indices: (0..cloud.len() as u32).collect(),
            center_index: 0,
            ordinal: 0,
        }
    }

    #[test]
    fn two_point_normalization() {
        let cloud = PointCloud::new(vec![[2.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
        assert_eq!(normalize_coordinates(&cloud, &sub_of(&cloud)), vec![[0.0; 3], [1.0, 0.0, 0.0]]);
        let one = PointCloud::new(vec![[5.0, -3.0, 2.0]]);
        assert_eq!(normalize_coordinates(&one, &sub_of(&one)), vec![[0.0; 3]]);
    }

    #[test]
    fn random_normalization_attains_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = PointCloud::new((0..200).map(|_| [rng.random_range(-5.0..5.0), rng.random(), rng.random::<f64>() * 100.0]).collect());
        let sub = SubSample { parent_size: 200, indices: (0..200).step_by(3).collect(), center_index: 0, ordinal: 0 };
        let norm = normalize_coordinates(&cloud, &sub);
        for a in 0..3 {
            let (lo, hi) = sub.indices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &i| {
                (l.min(cloud.positions[i as usize][a]), h.max(cloud.positions[i as usize][a]))
            });
            for (j, &i) in sub.indices.iter().enumerate() {
                let expect = (cloud.positions[i as usize][a] - lo) / (hi - lo);
                assert!((norm[j][a] - expect).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&norm[j][a]));
            }
            assert!(norm.iter().any(|p| p[a] == 0.0));
            assert!(norm.iter().any(|p| p[a] == 1.0));
        }
    }

    fn wheat_like(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f64, 0.5 * i as f64, 1.0]).collect()).with_intensity(vec![0.25; n])
    }

    fn cherry_like(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| [i as f64, 0.0, 2.0]).collect())
            .with_colors(vec![[255, 0, 51]; n])
            .with_normals(vec![[0.0, 0.0, 1.0]; n])
    }

    #[test]
    fn wheat_and_cherry_widths() {
        let w = wheat_like(5);
        let m = assemble(&w, &sub_of(&w), &FeatureSchema::laser_intensity()).unwrap();
        assert_eq!((m.rows(), m.width()), (5, 7));
        assert_eq!(m.row(4), &[4.0, 2.0, 1.0, 0.25, 1.0, 1.0, 0.0]);

        let c = cherry_like(4);
        let m = assemble(&c, &sub_of(&c), &FeatureSchema::color_normals()).unwrap();
        assert_eq!((m.rows(), m.width()), (4, 9));
        assert_eq!(m.row(0), &[0.0, 0.0, 2.0, 1.0, 0.0, 0.2, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn missing_channel_is_named() {
        let w = wheat_like(3);
        let err = assemble(&w, &sub_of(&w), &"position,color".parse().unwrap()).unwrap_err();
        assert_eq!(err, FeatureError::MissingChannel(Channel::Color));
        assert_eq!(err.to_string(), "missing channel: color");
    }

    #[test]
    fn rows_follow_extraction_order() {
        let w = wheat_like(6);
        let sub = SubSample { parent_size: 6, indices: vec![5, 0, 3], center_index: 5, ordinal: 0 };
        let m = assemble(&w, &sub, &"position".parse().unwrap()).unwrap();
        let xs: Vec<f64> = m.iter_rows().map(|r| r[0]).collect();
        assert_eq!(xs, vec![5.0, 0.0, 3.0]);
    }

    #[test]
    fn weights_examples() {
        let w = class_weights(&[vec![0; 50], vec![1; 50]].concat(), 2).unwrap().weights;
        assert_eq!(w, vec![0.5, 0.5]);
        // 1/90 : 1/10 normalizes to 0.1 : 0.9.
        let w = class_weights(&[vec![0; 90], vec![1; 10]].concat(), 2).unwrap().weights;
        assert!((w[0] - 0.1).abs() < 1e-12 && (w[1] - 0.9).abs() < 1e-12);
        let w = class_weights(&[vec![0; 10], vec![2; 10]].concat(), 3).unwrap().weights;
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert_eq!(class_weights(&[], 2), Err(FeatureError::EmptyLabels));
        assert!(matches!(class_weights(&[0, 3], 2), Err(FeatureError::LabelOutOfRange { position: 1, .. })));
    }

    #[test]
    fn split_examples() {
        let units: Vec<u32> = (0..10).collect();
        let s = split(&units, SplitFractions::new(0.9, 0.1), 1).unwrap();
        assert_eq!((s.count(SplitTag::Train), s.count(SplitTag::Val), s.count(SplitTag::Test)), (9, 1, 0));
        let s = split(&["only"], SplitFractions::new(1.0, 0.0), 1).unwrap();
        assert_eq!(s.assignments, vec![("only", SplitTag::Train)]);
        let hundred: Vec<u32> = (0..100).collect();
        assert_eq!(
            split(&hundred, SplitFractions::new(0.7, 0.2), 77).unwrap(),
            split(&hundred, SplitFractions::new(0.7, 0.2), 77).unwrap()
        );
        assert!(matches!(
            split(&["a"], SplitFractions::new(0.9, 0.1), 0),
            Err(FeatureError::TooFewUnits { units: 1, partitions: 2 })
        ));
        assert!(split(&units, SplitFractions::new(0.9, 0.5), 0).is_err());
    }

    #[test]
    fn rotation_examples() {
        let schema: FeatureSchema = "position,normal,normalized_position".parse().unwrap();
        let m = FeatureMatrix::from_values(
            schema,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, -1.0, 2.0, 3.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0],
        )
        .unwrap();
        assert_eq!(augment_rotate_z(&m, 0.0), m);
        let r = augment_rotate_z(&m, std::f64::consts::PI);
        let row = r.row(0);
        assert!((row[0] + 1.0).abs() < 1e-9 && row[1].abs() < 1e-9 && row[2] == 0.0);
        assert!(row[3].abs() < 1e-9 && (row[4] + 1.0).abs() < 1e-9);
        // A half turn reverses both x and y order; z is untouched.
        assert_eq!(&r.row(0)[6..], &[0.0, 1.0, 0.0]);
        assert_eq!(&r.row(1)[6..], &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn quantized_matches_f32_cast() {
        let m = FeatureMatrix::from_values("intensity".parse().unwrap(), vec![0.1, 1.0 / 3.0]).unwrap();
        assert_eq!(m.quantized().values(), &[0.1f32 as f64, (1.0f64 / 3.0) as f32 as f64]);
        assert!(FeatureMatrix::from_values("position".parse().unwrap(), vec![1.0; 4]).is_err());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_are_scale_free(counts in prop::collection::vec(0usize..50, 1..8), scale in 1usize..5) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let labels: Vec<u32> = counts.iter().enumerate().flat_map(|(c, &k)| std::iter::repeat_n(c as u32, k)).collect();
            let scaled: Vec<u32> = labels.iter().flat_map(|&l| std::iter::repeat_n(l, scale)).collect();
            let a = class_weights(&labels, counts.len()).unwrap().weights;
            let b = class_weights(&scaled, counts.len()).unwrap().weights;
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn normalization_is_translation_and_scale_invariant(
            seed in any::<u64>(), n in 1usize..60, shift in -1e3f64..1e3, scale in 0.01f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
            let moved: Vec<[f64; 3]> = pts.iter().map(|p| p.map(|c| c * scale + shift)).collect();
            let a = PointCloud::new(pts);
            let b = PointCloud::new(moved);
            let sub = sub_of(&a);
            for (x, y) in normalize_coordinates(&a, &sub).iter().zip(normalize_coordinates(&b, &sub)) {
                for ax in 0..3 {
                    prop_assert!((x[ax] - y[ax]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn rotation_preserves_distances(seed in any::<u64>(), angle in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = (0..30).map(|_| rng.random_range(-5.0..5.0)).collect();
            let m = FeatureMatrix::from_values("position".parse().unwrap(), values).unwrap();
            let r = augment_rotate_z(&m, angle);
            for i in 0..10 {
                for j in 0..10 {
                    let d = |mm: &FeatureMatrix| {
                        let (a, b) = (mm.row(i), mm.row(j));
                        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                    };
                    prop_assert!((d(&m) - d(&r)).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn split_sizes_track_fractions(n in 3usize..200, train in 0.05f64..0.9, seed in any::<u64>()) {
            let val = (1.0 - train) / 2.0;
            let units: Vec<usize> = (0..n).collect();
            let s = split(&units, SplitFractions::new(train, val), seed).unwrap();
            prop_assert_eq!(s.assignments.len(), n);
            for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
                prop_assert!(s.count(tag) >= 1);
            }
            if val * n as f64 >= 1.0 {
                prop_assert!((s.count(SplitTag::Train) as f64 - train * n as f64).abs() <= 1.0 + 1e-9);
                prop_assert!((s.count(SplitTag::Val) as f64 - val * n as f64).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
