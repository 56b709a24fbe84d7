//! On-disk artifacts: PLY clouds, batch files and the manifest binding them.
//!
//! A sub-sampling run writes, into one directory, a [`batch::BatchFile`]
//! per sub-sample, the concatenated point indices, and finally
//! `manifest.toml`. A backend reads the batches, and writes copies with
//! `has_predictions = 1` into a predictions directory using the same file
//! names. [`read_predictions`] then feeds them to [`crate::sampling::merge`].

pub mod batch;
pub mod manifest;
pub mod ply;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::cloud::{ClassId, PartitionError, PointCloud, SubSample, SubSampleSet};
use crate::features::{self, assemble, FeatureError, FeatureMatrix};
use crate::sampling::{KdssConfig, RNG_NAME};
use batch::{BatchError, BatchFile};
use manifest::{
    batch_file_name, digest_hex, FeatureParams, Manifest, ParentRef, SamplingParams, SubsampleEntry, FORMAT_VERSION,
    INDICES_FILE, MANIFEST_FILE,
};
pub use ply::{read_ply, write_ply, PlyEncoding, PlyError};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ply(#[from] PlyError),
    #[error("{path}: {source}")]
    Batch { path: PathBuf, source: BatchError },
    #[error("{path}: cannot parse manifest: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("stale manifest: {file} has digest {found}, manifest recorded {expected}")]
    StaleManifest { file: String, expected: String, found: String },
    #[error("missing batch file for ordinal {ordinal}: {path}")]
    MissingBatch { ordinal: u32, path: PathBuf },
    #[error("missing predictions for ordinal {ordinal}")]
    MissingPredictions { ordinal: u32 },
    #[error("ordinal {ordinal}: {message}")]
    Mismatch { ordinal: u32, message: String },
    #[error("ordinal {ordinal}, row {row}: predicted class {id} is not one of the {classes} manifest classes")]
    PredictionClass { ordinal: u32, row: usize, id: i64, classes: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArtifactError + '_ {
    move |source| ArtifactError::Io { path: path.to_path_buf(), source }
}

fn read_file(path: &Path) -> Result<Vec<u8>, ArtifactError> {
    fs::read(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn to_i32_labels(ids: impl Iterator<Item = ClassId>) -> Vec<i32> {
    ids.map(|id| id as i32).collect()
}

/// Encodes one sub-sample as a batch; labels are included when the cloud has them.
pub fn batch_for(cloud: &PointCloud, sub: &SubSample, matrix: &FeatureMatrix) -> Result<BatchFile, BatchError> {
    let features = matrix.values().iter().map(|&v| v as f32).collect();
    let mut b = BatchFile::new(sub.ordinal, matrix.width() as u16, features)?;
    if let Some(labels) = &cloud.labels {
        b = b.with_labels(to_i32_labels(sub.indices.iter().map(|&i| labels[i as usize])))?;
    }
    Ok(b)
}

/// Writes one batch per sub-sample, the index file and the manifest into `dir`.
///
/// `parent_path` must be the file `cloud` was read from; its bytes are
/// digested into the manifest.
pub fn write_batches(
    cloud: &PointCloud,
    parent_path: &Path,
    set: &SubSampleSet,
    config: &KdssConfig,
    dir: &Path,
) -> Result<Manifest, ArtifactError> {
    set.check()?;
    if set.parent_size() != cloud.len() {
        return Err(ArtifactError::Mismatch {
            ordinal: 0,
            message: format!("set covers {} points, cloud has {}", set.parent_size(), cloud.len()),
        });
    }
    let parent_bytes = read_file(parent_path)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    set.subsamples.par_iter().try_for_each(|sub| -> Result<(), ArtifactError> {
        let matrix = assemble(cloud, sub, &set.schema)?;
        let path = dir.join(batch_file_name(sub.ordinal));
        let b = batch_for(cloud, sub, &matrix).map_err(|source| ArtifactError::Batch { path: path.clone(), source })?;
        write_file(&path, &b.encode())
    })?;

    let mut index_bytes = Vec::with_capacity(4 * cloud.len());
    for sub in &set.subsamples {
        for &i in &sub.indices {
            index_bytes.extend_from_slice(&i.to_le_bytes());
        }
    }
    write_file(&dir.join(INDICES_FILE), &index_bytes)?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        indices_file: INDICES_FILE.into(),
        classes: cloud.class_map.as_ref().map(|m| m.names().to_vec()),
        parent: ParentRef {
            file: parent_path.display().to_string(),
            digest: digest_hex(&parent_bytes),
            points: cloud.len(),
        },
        sampling: SamplingParams {
            n_per_sample: set.n_per_sample,
            seed: set.seed,
            rebuild_policy: config.rebuild_policy,
            center_strategy: config.center_strategy,
            rng: RNG_NAME.into(),
            leaf_size: config.leaf_size,
        },
        features: FeatureParams {
            schema: set.schema.clone(),
            width: set.schema.total_width(),
            normalization: features::NORMALIZATION_RULE.into(),
            color_scale: features::COLOR_RULE.into(),
            class_weights: features::CLASS_WEIGHT_RULE.into(),
        },
        subsamples: set
            .subsamples
            .iter()
            .map(|s| SubsampleEntry {
                ordinal: s.ordinal,
                size: s.len(),
                center_index: s.center_index,
                batch_file: batch_file_name(s.ordinal),
            })
            .collect(),
    };
    write_file(&dir.join(MANIFEST_FILE), manifest.to_toml().as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest, ArtifactError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let m = Manifest::from_toml(&text)
        .map_err(|e| ArtifactError::ManifestParse { path: path.to_path_buf(), message: e.to_string() })?;
    m.check_size_law()
        .map_err(|message| ArtifactError::ManifestParse { path: path.to_path_buf(), message })?;
    Ok(m)
}

/// Where the manifest's parent cloud lives: as recorded, or relative to the
/// manifest's own directory.
pub fn parent_path(manifest: &Manifest, manifest_path: &Path) -> PathBuf {
    let recorded = PathBuf::from(&manifest.parent.file);
    if recorded.is_relative() && !recorded.exists() {
        if let Some(dir) = manifest_path.parent() {
            let alt = dir.join(&recorded);
            if alt.exists() {
                return alt;
            }
        }
    }
    recorded
}

/// Reads the parent cloud of a manifest and checks it against the digest.
pub fn load_parent(manifest: &Manifest, manifest_path: &Path) -> Result<PointCloud, ArtifactError> {
    let path = parent_path(manifest, manifest_path);
    let bytes = read_file(&path)?;
    let found = digest_hex(&bytes);
    if found != manifest.parent.digest {
        return Err(ArtifactError::StaleManifest {
            file: path.display().to_string(),
            expected: manifest.parent.digest.clone(),
            found,
        });
    }
    Ok(ply::parse_ply(&bytes)?.0)
}

/// Everything [`write_batches`] produced, read back.
#[derive(Debug, Clone)]
pub struct BatchSet {
    pub manifest: Manifest,
    pub set: SubSampleSet,
    /// Feature values as stored (`f32` precision).
    pub matrices: Vec<FeatureMatrix>,
    /// Per-sub-sample labels, when every batch carries them.
    pub labels: Option<Vec<Vec<ClassId>>>,
}

fn check_parent_digest(manifest: &Manifest, manifest_path: &Path) -> Result<(), ArtifactError> {
    let path = parent_path(manifest, manifest_path);
    let found = digest_hex(&read_file(&path)?);
    if found != manifest.parent.digest {
        return Err(ArtifactError::StaleManifest {
            file: path.display().to_string(),
            expected: manifest.parent.digest.clone(),
            found,
        });
    }
    Ok(())
}

fn load_batch(path: &Path, ordinal: u32, size: usize) -> Result<BatchFile, ArtifactError> {
    if !path.exists() {
        return Err(ArtifactError::MissingBatch { ordinal, path: path.to_path_buf() });
    }
    let b = BatchFile::decode(&read_file(path)?)
        .map_err(|source| ArtifactError::Batch { path: path.to_path_buf(), source })?;
    if b.ordinal != ordinal {
        return Err(ArtifactError::Mismatch { ordinal, message: format!("batch header says ordinal {}", b.ordinal) });
    }
    if b.rows as usize != size {
        return Err(ArtifactError::Mismatch { ordinal, message: format!("batch has {} rows, manifest says {size}", b.rows) });
    }
    Ok(b)
}

fn ids_from(ordinal: u32, ids: &[i32], classes: Option<usize>) -> Result<Vec<ClassId>, ArtifactError> {
    ids.iter()
        .enumerate()
        .map(|(row, &id)| {
            let bad = id < 0 || classes.is_some_and(|c| id as usize >= c);
            if bad {
                Err(ArtifactError::PredictionClass { ordinal, row, id: id as i64, classes: classes.unwrap_or(0) })
            } else {
                Ok(id as ClassId)
            }
        })
        .collect()
}

pub fn read_batches(manifest_path: &Path) -> Result<BatchSet, ArtifactError> {
    let manifest = load_manifest(manifest_path)?;
    check_parent_digest(&manifest, manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));

    let idx_path = dir.join(&manifest.indices_file);
    let raw = read_file(&idx_path)?;
    let total: usize = manifest.sizes().iter().sum();
    if raw.len() != 4 * total {
        return Err(ArtifactError::Mismatch {
            ordinal: 0,
            message: format!("{} holds {} bytes, expected {}", idx_path.display(), raw.len(), 4 * total),
        });
    }
    let mut all = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()));
    let schema = manifest.features.schema.clone();
    let subsamples: Vec<SubSample> = manifest
        .subsamples
        .iter()
        .map(|e| SubSample {
            parent_size: manifest.parent.points,
            indices: all.by_ref().take(e.size).collect(),
            center_index: e.center_index,
            ordinal: e.ordinal,
        })
        .collect();
    let set = SubSampleSet {
        subsamples,
        n_per_sample: manifest.sampling.n_per_sample,
        seed: manifest.sampling.seed,
        schema: schema.clone(),
    };
    set.check()?;

    let batches: Vec<BatchFile> = manifest
        .subsamples
        .par_iter()
        .map(|e| load_batch(&dir.join(&e.batch_file), e.ordinal, e.size))
        .collect::<Result<_, _>>()?;
    let width = schema.total_width();
    let classes = manifest.classes.as_ref().map(Vec::len);
    let mut matrices = Vec::with_capacity(batches.len());
    let mut labels = Some(Vec::with_capacity(batches.len()));
    for b in &batches {
        if b.width as usize != width {
            return Err(ArtifactError::Mismatch {
                ordinal: b.ordinal,
                message: format!("batch width {} but schema width {width}", b.width),
            });
        }
        matrices.push(FeatureMatrix::from_values(schema.clone(), b.features.iter().map(|&v| v as f64).collect())?);
        labels = match (labels, &b.labels) {
            (Some(mut acc), Some(l)) => {
                acc.push(ids_from(b.ordinal, l, classes)?);
                Some(acc)
            }
            _ => None,
        };
    }
    Ok(BatchSet { manifest, set, matrices, labels })
}

/// Reads prediction-bearing batches for every manifest entry from `dir`.
pub fn read_predictions(dir: &Path, manifest: &Manifest) -> Result<Vec<Vec<ClassId>>, ArtifactError> {
    let classes = manifest.classes.as_ref().map(Vec::len);
    manifest
        .subsamples
        .iter()
        .map(|e| {
            let path = dir.join(&e.batch_file);
            if !path.exists() {
                return Err(ArtifactError::MissingPredictions { ordinal: e.ordinal });
            }
            let b = load_batch(&path, e.ordinal, e.size)?;
            let preds = b.predictions.as_ref().ok_or_else(|| ArtifactError::Mismatch {
                ordinal: e.ordinal,
                message: "batch carries no predictions".into(),
            })?;
            ids_from(e.ordinal, preds, classes)
        })
        .collect()
}

/// Writes `predictions` as prediction-bearing copies of the input batches.
pub fn write_predictions(
    input_dir: &Path,
    manifest: &Manifest,
    predictions: &[Vec<ClassId>],
    out_dir: &Path,
) -> Result<(), ArtifactError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    if predictions.len() != manifest.subsamples.len() {
        return Err(ArtifactError::MissingPredictions { ordinal: predictions.len() as u32 });
    }
    manifest.subsamples.par_iter().zip(predictions).try_for_each(|(e, preds)| {
        let src = input_dir.join(&e.batch_file);
        let b = load_batch(&src, e.ordinal, e.size)?;
        let dst = out_dir.join(&e.batch_file);
        let b = b
            .with_predictions(to_i32_labels(preds.iter().copied()))
            .map_err(|source| ArtifactError::Batch { path: dst.clone(), source })?;
        write_file(&dst, &b.encode())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::ClassMap;
    use crate::sampling::subsample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labeled_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect())
            .with_intensity((0..n).map(|_| rng.random()).collect())
            .with_labels((0..n).map(|_| rng.random_range(0..3)).collect())
            .with_class_map(ClassMap::new(["stem", "leaf", "panicle"]).unwrap())
    }

    fn setup(n: usize, size: usize) -> (tempfile::TempDir, PointCloud, SubSampleSet, Manifest) {
        let tmp = tempfile::tempdir().unwrap();
        let cloud = labeled_cloud(n, 1);
        let ply_path = tmp.path().join("cloud.ply");
        write_ply(&cloud, &ply_path, PlyEncoding::BinaryLe).unwrap();
        let config = KdssConfig::new(size, 5);
        let set = subsample(&cloud, &config).unwrap().with_schema(crate::cloud::FeatureSchema::laser_intensity());
        let m = write_batches(&cloud, &ply_path, &set, &config, &tmp.path().join("out")).unwrap();
        (tmp, cloud, set, m)
    }

    #[test]
    fn ten_points_three_batches() {
        let (tmp, _, set, m) = setup(10, 4);
        assert_eq!(m.sizes(), vec![4, 4, 2]);
        assert_eq!(m.features.width, 7);
        let back = read_batches(&tmp.path().join("out").join(MANIFEST_FILE)).unwrap();
        assert_eq!(back.set, set);
        assert_eq!(back.labels.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn roundtrip_matrices_exact_at_f32() {
        let (tmp, cloud, set, _) = setup(500, 64);
        let back = read_batches(&tmp.path().join("out").join(MANIFEST_FILE)).unwrap();
        for (sub, m) in set.subsamples.iter().zip(&back.matrices) {
            let orig = assemble(&cloud, sub, &set.schema).unwrap().quantized();
            assert!(orig.values().iter().zip(m.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let labels = cloud.labels.as_ref().unwrap();
        for (sub, l) in set.subsamples.iter().zip(back.labels.unwrap()) {
            assert_eq!(l, sub.indices.iter().map(|&i| labels[i as usize]).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tampering_is_detected() {
        let (tmp, _, _, _) = setup(50, 8);
        let out = tmp.path().join("out");
        let mpath = out.join(MANIFEST_FILE);

        let b0 = out.join(batch_file_name(0));
        let mut bytes = fs::read(&b0).unwrap();
        bytes.pop();
        fs::write(&b0, &bytes).unwrap();
        assert!(matches!(read_batches(&mpath), Err(ArtifactError::Batch { .. })));

        fs::remove_file(&b0).unwrap();
        assert!(matches!(read_batches(&mpath), Err(ArtifactError::MissingBatch { ordinal: 0, .. })));

        let parent = tmp.path().join("cloud.ply");
        let mut p = fs::read(&parent).unwrap();
        let last = p.len() - 1;
        p[last] ^= 1;
        fs::write(&parent, &p).unwrap();
        let err = read_batches(&mpath).unwrap_err();
        assert!(err.to_string().starts_with("stale manifest"), "{err}");
    }

    #[test]
    fn predictions_flow() {
        let (tmp, _, _, m) = setup(10, 4);
        let out = tmp.path().join("out");
        let pred_dir = tmp.path().join("pred");
        let preds = vec![vec![0; 4], vec![1; 4], vec![2; 2]];
        write_predictions(&out, &m, &preds, &pred_dir).unwrap();
        let got = read_predictions(&pred_dir, &m).unwrap();
        assert_eq!(got.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(got, preds);

        fs::remove_file(pred_dir.join(batch_file_name(1))).unwrap();
        let err = read_predictions(&pred_dir, &m).unwrap_err();
        assert_eq!(err.to_string(), "missing predictions for ordinal 1");
    }

    #[test]
    fn out_of_range_prediction_is_rejected() {
        let (tmp, _, _, m) = setup(10, 4);
        let pred_dir = tmp.path().join("pred");
        write_predictions(&tmp.path().join("out"), &m, &[vec![0; 4], vec![3; 4], vec![0; 2]], &pred_dir).unwrap();
        assert!(matches!(
            read_predictions(&pred_dir, &m),
            Err(ArtifactError::PredictionClass { ordinal: 1, id: 3, classes: 3, .. })
        ));
    }
}
