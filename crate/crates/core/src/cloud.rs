//! Domain types shared across the pipeline.
//!
//! A [`PointCloud`] is columnar: positions plus optional per-point channels.
//! Point order is significant everywhere; a point's index is its identity.
//! Sub-samples refer back to their parent cloud by index only.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a point inside its parent cloud.
pub type PointIndex = u32;

/// Dense 0-based class id. Names live in [`ClassMap`].
pub type ClassId = u32;

/// Tolerance on `|n| - 1` for a normal to count as unit length.
pub const NORMAL_TOLERANCE: f32 = 1e-3;

/// Ordered class names; a class id is the position of its name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    names: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClassMapError {
    #[error("class map must contain at least one class")]
    Empty,
    #[error("class name at id {0} is empty")]
    EmptyName(usize),
    #[error("duplicate class name {0:?}")]
    Duplicate(String),
}

impl ClassMap {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, ClassMapError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(ClassMapError::Empty);
        }
        let mut seen = HashSet::new();
        for (id, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(ClassMapError::EmptyName(id));
            }
            if !seen.insert(name.as_str()) {
                return Err(ClassMapError::Duplicate(name.clone()));
            }
        }
        Ok(Self { names })
    }

    /// Anonymous map `class0 .. class{n-1}`.
    pub fn numbered(num_classes: usize) -> Result<Self, ClassMapError> {
        Self::new((0..num_classes).map(|c| format!("class{c}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<ClassId> {
        self.names.iter().position(|n| n == name).map(|p| p as ClassId)
    }
}

/// Columnar point cloud.
///
/// Optional channels, when present, must have exactly one entry per point;
/// [`validate_cloud`] reports every place where that and the other
/// structural rules are broken.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    /// RGB in `[0, 255]`.
    pub colors: Option<Vec<[u8; 3]>>,
    pub normals: Option<Vec<[f32; 3]>>,
    /// Raw sensor reflectance, unitless.
    pub intensity: Option<Vec<f32>>,
    pub labels: Option<Vec<ClassId>>,
    pub predicted: Option<Vec<ClassId>>,
    pub class_map: Option<ClassMap>,
    /// Set when the normals were loaded as-is without being unit length.
    pub unnormalized_normals: bool,
}

impl PointCloud {
    pub fn new(positions: Vec<[f64; 3]>) -> Self {
        Self {
            positions,
            ..Default::default()
        }
    }

    pub fn with_colors(mut self, colors: Vec<[u8; 3]>) -> Self {
        self.colors = Some(colors);
        self
    }

    pub fn with_normals(mut self, normals: Vec<[f32; 3]>) -> Self {
        self.normals = Some(normals);
        self
    }

    pub fn with_intensity(mut self, intensity: Vec<f32>) -> Self {
        self.intensity = Some(intensity);
        self
    }

    pub fn with_labels(mut self, labels: Vec<ClassId>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_predicted(mut self, predicted: Vec<ClassId>) -> Self {
        self.predicted = Some(predicted);
        self
    }

    pub fn with_class_map(mut self, class_map: ClassMap) -> Self {
        self.class_map = Some(class_map);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn has_channel(&self, channel: Channel) -> bool {
        match channel {
            Channel::Position | Channel::NormalizedPosition => true,
            Channel::Color => self.colors.is_some(),
            Channel::Normal => self.normals.is_some(),
            Channel::Intensity => self.intensity.is_some(),
        }
    }

    /// Copies the points at `indices`, in that order, into a new cloud.
    pub fn gather(&self, indices: &[PointIndex]) -> PointCloud {
        fn pick<T: Copy>(col: &Option<Vec<T>>, idx: &[PointIndex]) -> Option<Vec<T>> {
            col.as_ref().map(|v| idx.iter().map(|&i| v[i as usize]).collect())
        }
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i as usize]).collect(),
            colors: pick(&self.colors, indices),
            normals: pick(&self.normals, indices),
            intensity: pick(&self.intensity, indices),
            labels: pick(&self.labels, indices),
            predicted: pick(&self.predicted, indices),
            class_map: self.class_map.clone(),
            unnormalized_normals: self.unnormalized_normals,
        }
    }

    /// True when any normal deviates from unit length beyond [`NORMAL_TOLERANCE`].
    pub fn normals_off_unit(&self) -> bool {
        self.normals
            .as_ref()
            .is_some_and(|ns| ns.iter().any(|n| !is_unit(n)))
    }
}

fn is_unit(n: &[f32; 3]) -> bool {
    let norm = (n[0] as f64 * n[0] as f64 + n[1] as f64 * n[1] as f64 + n[2] as f64 * n[2] as f64).sqrt();
    (norm - 1.0).abs() <= NORMAL_TOLERANCE as f64
}

/// One broken structural rule of a [`PointCloud`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub channel: &'static str,
    /// Offending point, if the rule is per point.
    pub point: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.point {
            Some(p) => write!(f, "{} (point {}): {}", self.channel, p, self.message),
            None => write!(f, "{}: {}", self.channel, self.message),
        }
    }
}

/// Lists every invariant violation of `cloud`. An empty list means valid.
pub fn validate_cloud(cloud: &PointCloud) -> Vec<Violation> {
    let n = cloud.len();
    let mut out = Vec::new();

    let mut check_len = |channel: &'static str, len: Option<usize>| {
        if let Some(len) = len {
            if len != n {
                out.push(Violation {
                    channel,
                    point: None,
                    message: format!("{channel} length mismatch: {len} entries for {n} points"),
                });
            }
        }
    };
    check_len("colors", cloud.colors.as_ref().map(Vec::len));
    check_len("normals", cloud.normals.as_ref().map(Vec::len));
    check_len("intensity", cloud.intensity.as_ref().map(Vec::len));
    check_len("labels", cloud.labels.as_ref().map(Vec::len));
    check_len("predicted", cloud.predicted.as_ref().map(Vec::len));

    for (i, p) in cloud.positions.iter().enumerate() {
        if p.iter().any(|c| !c.is_finite()) {
            out.push(Violation {
                channel: "positions",
                point: Some(i),
                message: "non-finite coordinate".into(),
            });
        }
    }

    if let Some(normals) = &cloud.normals {
        if !cloud.unnormalized_normals {
            for (i, nrm) in normals.iter().enumerate() {
                if !is_unit(nrm) {
                    out.push(Violation {
                        channel: "normals",
                        point: Some(i),
                        message: "normal is not unit length".into(),
                    });
                }
            }
        }
    }

    if let Some(map) = &cloud.class_map {
        let c = map.len();
        for (channel, ids) in [("labels", &cloud.labels), ("predicted", &cloud.predicted)] {
            if let Some(ids) = ids {
                for (i, &id) in ids.iter().enumerate() {
                    if id as usize >= c {
                        out.push(Violation {
                            channel,
                            point: Some(i),
                            message: format!("class id {id} out of range for {c} classes"),
                        });
                    }
                }
            }
        }
    }
    out
}

/// One feature channel a segmentation backend can receive per point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Position,
    Color,
    Normal,
    Intensity,
    /// Position min-max normalized to `[0, 1]` within its sub-sample.
    NormalizedPosition,
}

impl Channel {
    pub const ALL: [Channel; 5] = [
        Channel::Position,
        Channel::Color,
        Channel::Normal,
        Channel::Intensity,
        Channel::NormalizedPosition,
    ];

    pub fn arity(self) -> usize {
        match self {
            Channel::Intensity => 1,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Position => "position",
            Channel::Color => "color",
            Channel::Normal => "normal",
            Channel::Intensity => "intensity",
            Channel::NormalizedPosition => "normalized_position",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| SchemaError::UnknownChannel(s.trim().to_string()))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("unknown channel {0:?}")]
    UnknownChannel(String),
    #[error("channel {0} listed twice")]
    Duplicate(Channel),
    #[error("schema has no channels")]
    Empty,
}

/// Ordered channel list defining the per-point feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Channel>", into = "Vec<Channel>")]
pub struct FeatureSchema {
    channels: Vec<Channel>,
}

impl FeatureSchema {
    pub fn new(channels: Vec<Channel>) -> Result<Self, SchemaError> {
        if channels.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut seen = HashSet::new();
        for &c in &channels {
            if !seen.insert(c) {
                return Err(SchemaError::Duplicate(c));
            }
        }
        Ok(Self { channels })
    }

    /// x, y, z, intensity and per-sub-sample normalized x, y, z.
    pub fn laser_intensity() -> Self {
        Self::new(vec![Channel::Position, Channel::Intensity, Channel::NormalizedPosition]).unwrap()
    }

    /// x, y, z, r, g, b and normals, as produced by photogrammetry.
    pub fn color_normals() -> Self {
        Self::new(vec![Channel::Position, Channel::Color, Channel::Normal]).unwrap()
    }

    /// Position followed by every optional channel the cloud carries.
    pub fn for_cloud(cloud: &PointCloud) -> Self {
        let channels = [Channel::Position, Channel::Color, Channel::Normal, Channel::Intensity]
            .into_iter()
            .filter(|&c| cloud.has_channel(c))
            .collect();
        Self { channels }
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn total_width(&self) -> usize {
        self.channels.iter().map(|c| c.arity()).sum()
    }

    pub fn contains(&self, channel: Channel) -> bool {
        self.channels.contains(&channel)
    }

    /// Column offset of `channel` within a feature row.
    pub fn offset_of(&self, channel: Channel) -> Option<usize> {
        let mut off = 0;
        for &c in &self.channels {
            if c == channel {
                return Some(off);
            }
            off += c.arity();
        }
        None
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.channels.iter().map(|c| c.name()).collect()
    }
}

impl fmt::Display for FeatureSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join(","))
    }
}

impl FromStr for FeatureSchema {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let channels = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(channels)
    }
}

impl TryFrom<Vec<Channel>> for FeatureSchema {
    type Error = SchemaError;

    fn try_from(value: Vec<Channel>) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<FeatureSchema> for Vec<Channel> {
    fn from(value: FeatureSchema) -> Self {
        value.channels
    }
}

/// One fixed-size batch: an ordered index set into the parent cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubSample {
    pub parent_size: usize,
    /// Extraction order; feature rows follow this order.
    pub indices: Vec<PointIndex>,
    pub center_index: PointIndex,
    pub ordinal: u32,
}

impl SubSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("sub-sample {ordinal}: index {index} out of range for {parent_size} points")]
    OutOfRange { ordinal: u32, index: PointIndex, parent_size: usize },
    #[error("point {index} appears more than once (second time in sub-sample {ordinal})")]
    Duplicate { ordinal: u32, index: PointIndex },
    #[error("point {index} is not covered by any sub-sample")]
    Uncovered { index: PointIndex },
    #[error("sub-sample {ordinal}: center {center} is not one of its indices")]
    CenterMissing { ordinal: u32, center: PointIndex },
    #[error("sub-sample {ordinal} has {size} points, expected {expected}")]
    Size { ordinal: u32, size: usize, expected: String },
    #[error("sub-sample at position {position} carries ordinal {ordinal}")]
    Ordinal { position: usize, ordinal: u32 },
    #[error("sub-sample {ordinal} has parent size {found}, set has {expected}")]
    ParentSize { ordinal: u32, found: usize, expected: usize },
    #[error("expected {expected} sub-samples, found {found}")]
    Count { expected: usize, found: usize },
}

/// Ordered sub-samples that exactly partition one parent cloud.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubSampleSet {
    pub subsamples: Vec<SubSample>,
    pub n_per_sample: usize,
    pub seed: u64,
    pub schema: FeatureSchema,
}

impl SubSampleSet {
    pub fn len(&self) -> usize {
        self.subsamples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsamples.is_empty()
    }

    pub fn parent_size(&self) -> usize {
        self.subsamples.first().map_or(0, |s| s.parent_size)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.subsamples.iter().map(SubSample::len).collect()
    }

    pub fn with_schema(mut self, schema: FeatureSchema) -> Self {
        self.schema = schema;
        self
    }

    /// Checks the partition, size law and per-sub-sample invariants in
    /// `O(parent_size)` using a coverage bitmap.
    pub fn check(&self) -> Result<(), PartitionError> {
        let parent_size = self.parent_size();
        let n = self.n_per_sample;
        let expected_count = parent_size.div_ceil(n.max(1));
        if self.subsamples.len() != expected_count || n == 0 {
            return Err(PartitionError::Count {
                expected: expected_count,
                found: self.subsamples.len(),
            });
        }
        let mut covered = vec![false; parent_size];
        let last = self.subsamples.len() - 1;
        for (pos, sub) in self.subsamples.iter().enumerate() {
            let ordinal = sub.ordinal;
            if ordinal as usize != pos {
                return Err(PartitionError::Ordinal { position: pos, ordinal });
            }
            if sub.parent_size != parent_size {
                return Err(PartitionError::ParentSize {
                    ordinal,
                    found: sub.parent_size,
                    expected: parent_size,
                });
            }
            let size_ok = if pos == last {
                (1..=n).contains(&sub.len())
            } else {
                sub.len() == n
            };
            if !size_ok {
                let expected = if pos == last { format!("1..={n}") } else { n.to_string() };
                return Err(PartitionError::Size { ordinal, size: sub.len(), expected });
            }
            for &idx in &sub.indices {
                let slot = covered
                    .get_mut(idx as usize)
                    .ok_or(PartitionError::OutOfRange { ordinal, index: idx, parent_size })?;
                if *slot {
                    return Err(PartitionError::Duplicate { ordinal, index: idx });
                }
                *slot = true;
            }
            if !sub.indices.contains(&sub.center_index) {
                return Err(PartitionError::CenterMissing { ordinal, center: sub.center_index });
            }
        }
        match covered.iter().position(|c| !c) {
            Some(i) => Err(PartitionError::Uncovered { index: i as PointIndex }),
            None => Ok(()),
        }
    }
}
