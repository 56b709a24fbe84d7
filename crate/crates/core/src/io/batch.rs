//! Flat binary batch file handed to segmentation backends.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "KDSS"
//! 4       2     version (u16)
//! 6       4     ordinal (u32)
//! 10      4     row count (u32)
//! 14      2     feature width (u16)
//! 16      1     has_labels (0 | 1)
//! 17      1     has_predictions (0 | 1)
//! 18      4·R·W features, f32, row-major
//! ..      4·R   labels, i32          (if has_labels)
//! ..      4·R   predictions, i32     (if has_predictions)
//! ```
//!
//! All integers and floats are little-endian. The file length is fully
//! determined by the header; anything else is rejected.

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"KDSS";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 18;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("file is {0} bytes, shorter than the {HEADER_LEN}-byte header")]
    ShortHeader(usize),
    #[error("bad magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported batch version {0}")]
    Version(u16),
    #[error("flag byte at offset {offset} is {value}, expected 0 or 1")]
    Flag { offset: usize, value: u8 },
    #[error("feature width is zero")]
    ZeroWidth,
    #[error("header implies {expected} bytes, file has {found}")]
    Length { expected: usize, found: usize },
    #[error("{what} has {found} entries, expected {expected}")]
    Shape { what: &'static str, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchFile {
    pub ordinal: u32,
    pub rows: u32,
    pub width: u16,
    /// `rows * width` values, row-major.
    pub features: Vec<f32>,
    pub labels: Option<Vec<i32>>,
    pub predictions: Option<Vec<i32>>,
}

impl BatchFile {
    pub fn new(ordinal: u32, width: u16, features: Vec<f32>) -> Result<Self, BatchError> {
        if width == 0 {
            return Err(BatchError::ZeroWidth);
        }
        let w = width as usize;
        if features.len() % w != 0 {
            return Err(BatchError::Shape { what: "features", expected: features.len() / w * w, found: features.len() });
        }
        Ok(Self { ordinal, rows: (features.len() / w) as u32, width, features, labels: None, predictions: None })
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self, BatchError> {
        self.check_len("labels", labels.len())?;
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_predictions(mut self, predictions: Vec<i32>) -> Result<Self, BatchError> {
        self.check_len("predictions", predictions.len())?;
        self.predictions = Some(predictions);
        Ok(self)
    }

    fn check_len(&self, what: &'static str, found: usize) -> Result<(), BatchError> {
        if found == self.rows as usize {
            Ok(())
        } else {
            Err(BatchError::Shape { what, expected: self.rows as usize, found })
        }
    }

    pub fn row(&self, j: usize) -> &[f32] {
        let w = self.width as usize;
        &self.features[j * w..(j + 1) * w]
    }

    pub fn encoded_len(&self) -> usize {
        let r = self.rows as usize;
        HEADER_LEN
            + 4 * r * self.width as usize
            + if self.labels.is_some() { 4 * r } else { 0 }
            + if self.predictions.is_some() { 4 * r } else { 0 }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.ordinal.to_le_bytes());
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.push(self.labels.is_some() as u8);
        out.push(self.predictions.is_some() as u8);
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for ids in [&self.labels, &self.predictions].into_iter().flatten() {
            for v in ids {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BatchError> {
        if bytes.len() < HEADER_LEN {
            return Err(BatchError::ShortHeader(bytes.len()));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(BatchError::Magic(magic));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(BatchError::Version(version));
        }
        let ordinal = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let rows = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
        let width = u16::from_le_bytes([bytes[14], bytes[15]]);
        if width == 0 {
            return Err(BatchError::ZeroWidth);
        }
        let mut flags = [false; 2];
        for (k, flag) in flags.iter_mut().enumerate() {
            let offset = 16 + k;
            *flag = match bytes[offset] {
                0 => false,
                1 => true,
                value => return Err(BatchError::Flag { offset, value }),
            };
        }
        let r = rows as usize;
        let feat_len = r * width as usize;
        let expected = HEADER_LEN + 4 * feat_len + 4 * r * (flags[0] as usize + flags[1] as usize);
        if bytes.len() != expected {
            return Err(BatchError::Length { expected, found: bytes.len() });
        }
        let words = |start: usize, n: usize| bytes[start..start + 4 * n].chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap());
        let features = words(HEADER_LEN, feat_len).map(f32::from_le_bytes).collect();
        let mut at = HEADER_LEN + 4 * feat_len;
        let mut ints = |present: bool| {
            present.then(|| {
                let v: Vec<i32> = words(at, r).map(i32::from_le_bytes).collect();
                at += 4 * r;
                v
            })
        };
        let labels = ints(flags[0]);
        let predictions = ints(flags[1]);
        Ok(Self { ordinal, rows, width, features, labels, predictions })
    }
}
