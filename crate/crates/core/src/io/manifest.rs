//! Run manifest: binds a parent cloud, sampling parameters and batch files.
//!
//! Stored as TOML. The parent file is pinned by a 64-bit FNV-1a digest of
//! its raw bytes, written as 16 lowercase hex digits. Seeds are written as
//! decimal strings because TOML integers are signed 64-bit.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::cloud::FeatureSchema;
use crate::sampling::{CenterStrategy, RebuildPolicy};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const INDICES_FILE: &str = "indices.bin";

pub fn batch_file_name(ordinal: u32) -> String {
    format!("batch_{ordinal:06}.bin")
}

/// 64-bit FNV-1a of `bytes`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn digest_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Concatenated u32 little-endian point indices of all sub-samples, in
    /// ordinal order; the sizes below slice it.
    pub indices_file: String,
    /// Class names, when the parent cloud carries them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<Vec<String>>,
    pub parent: ParentRef,
    pub sampling: SamplingParams,
    pub features: FeatureParams,
    pub subsamples: Vec<SubsampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParentRef {
    pub file: String,
    pub digest: String,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub n_per_sample: usize,
    #[serde(with = "u64_string")]
    pub seed: u64,
    pub rebuild_policy: RebuildPolicy,
    pub center_strategy: CenterStrategy,
    pub rng: String,
    pub leaf_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub schema: FeatureSchema,
    pub width: usize,
    pub normalization: String,
    pub color_scale: String,
    pub class_weights: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleEntry {
    pub ordinal: u32,
    pub size: usize,
    pub center_index: u32,
    pub batch_file: String,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.subsamples.iter().map(|s| s.size).collect()
    }

    /// Checks ordinals and the size law against `n_per_sample` and the parent size.
    pub fn check_size_law(&self) -> Result<(), String> {
        let n = self.sampling.n_per_sample;
        let parent = self.parent.points;
        if n == 0 {
            return Err("n_per_sample is 0".into());
        }
        let count = parent.div_ceil(n);
        if self.subsamples.len() != count {
            return Err(format!("{} sub-samples listed, size law needs {count}", self.subsamples.len()));
        }
        for (pos, e) in self.subsamples.iter().enumerate() {
            if e.ordinal as usize != pos {
                return Err(format!("entry {pos} has ordinal {}", e.ordinal));
            }
            let expected = if pos + 1 == count { parent - (count - 1) * n } else { n };
            if e.size != expected {
                return Err(format!("sub-sample {pos} has size {}, expected {expected}", e.size));
            }
        }
        Ok(())
    }
}

mod u64_string {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}
