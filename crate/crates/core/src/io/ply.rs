//! PLY point clouds, ASCII and binary little-endian.
//!
//! Recognized vertex properties:
//!
//! | property                          | channel      |
//! |-----------------------------------|--------------|
//! | `x`, `y`, `z`                     | positions    |
//! | `red`, `green`, `blue`            | colors       |
//! | `nx`, `ny`, `nz`                  | normals      |
//! | `intensity`, `scalar_intensity`   | intensity    |
//! | `label`, `class`, `scalar_label`  | labels       |
//! | `pred`                            | predictions  |
//!
//! Any scalar type is accepted for a recognized property as long as the
//! value fits the channel. Other properties, list properties and
//! non-vertex elements are skipped, with a warning naming them.
//!
//! The writer always emits `double` positions, `uchar` colors, `float`
//! normals and intensity, and `int` labels and predictions. Class names
//! travel in a `comment kdss_classes [...]` header line.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::cloud::{validate_cloud, ClassMap, PointCloud};

const CLASS_COMMENT: &str = "kdss_classes";

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed PLY header at byte {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("truncated PLY body at byte {offset}: {message}")]
    Truncated { offset: usize, message: String },
    #[error("big-endian binary PLY is not supported (format line at byte {offset})")]
    BigEndian { offset: usize },
    #[error("bad PLY value at byte {offset}: {message}")]
    Value { offset: usize, message: String },
    #[error("cannot write invalid cloud: {0}")]
    InvalidCloud(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLe,
}

/// What the reader skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReadReport {
    pub skipped_properties: Vec<String>,
    pub skipped_elements: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    // Every PLY scalar type is exactly representable as f64.
    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    class_map: Option<ClassMap>,
    body_offset: usize,
}

fn header_err(offset: usize, message: impl Into<String>) -> PlyError {
    PlyError::Header { offset, message: message.into() }
}

fn parse_header(data: &[u8]) -> Result<Header, PlyError> {
    let mut offset = 0;
    let next_line = |offset: &mut usize| -> Result<(usize, String), PlyError> {
        let start = *offset;
        let rel = data[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| header_err(data.len(), "header ends before end_header"))?;
        *offset = start + rel + 1;
        let raw = &data[start..start + rel];
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| header_err(start, "header line is not UTF-8"))?;
        Ok((start, line.to_string()))
    };

    let (_, magic) = next_line(&mut offset)?;
    if magic.trim() != "ply" {
        return Err(header_err(0, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut class_map = None;
    loop {
        let (at, line) = next_line(&mut offset)?;
        let mut words = line.split_whitespace();
        match words.next() {
            None => continue,
            Some("end_header") => break,
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some("binary_big_endian") => return Err(PlyError::BigEndian { offset: at }),
                    other => return Err(header_err(at, format!("unknown format {other:?}"))),
                });
            }
            Some("comment") => {
                if words.next() == Some(CLASS_COMMENT) {
                    let json = line.split_once(CLASS_COMMENT).map(|(_, j)| j.trim()).unwrap_or("");
                    let names: Vec<String> = serde_json::from_str(json)
                        .map_err(|e| header_err(at, format!("bad class comment: {e}")))?;
                    class_map = Some(ClassMap::new(names).map_err(|e| header_err(at, e.to_string()))?);
                }
            }
            Some("obj_info") => {}
            Some("element") => {
                let name = words.next().ok_or_else(|| header_err(at, "element without name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| header_err(at, "element without valid count"))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| header_err(at, "property before any element"))?;
                let ty = words.next().ok_or_else(|| header_err(at, "property without type"))?;
                let kind = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) if count.is_integer() => PropKind::List { count, item },
                        _ => return Err(header_err(at, "bad list property types")),
                    }
                } else {
                    PropKind::Scalar(Scalar::parse(ty).ok_or_else(|| header_err(at, format!("unknown type {ty:?}")))?)
                };
                let name = words.next().ok_or_else(|| header_err(at, "property without name"))?;
                elem.props.push(Property { name: name.to_string(), kind });
            }
            Some(other) => return Err(header_err(at, format!("unexpected keyword {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| header_err(offset, "missing format line"))?;
    Ok(Header { format, elements, class_map, body_offset: offset })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Pos(usize),
    Color(usize),
    Normal(usize),
    Intensity,
    Label,
    Pred,
    Skip,
}

fn role_of(name: &str) -> Role {
    match name {
        "x" => Role::Pos(0),
        "y" => Role::Pos(1),
        "z" => Role::Pos(2),
        "red" => Role::Color(0),
        "green" => Role::Color(1),
        "blue" => Role::Color(2),
        "nx" => Role::Normal(0),
        "ny" => Role::Normal(1),
        "nz" => Role::Normal(2),
        "pred" => Role::Pred,
        _ => match name.to_ascii_lowercase().as_str() {
            "intensity" | "scalar_intensity" => Role::Intensity,
            "label" | "class" | "scalar_label" | "scalar_class" => Role::Label,
            _ => Role::Skip,
        },
    }
}

/// Sequential reader over the body, either ASCII tokens or LE bytes.
struct Body<'a> {
    data: &'a [u8],
    pos: usize,
    format: Format,
}

impl<'a> Body<'a> {
    fn truncated(&self, what: &str) -> PlyError {
        PlyError::Truncated { offset: self.data.len(), message: format!("data ends inside {what}") }
    }

    /// Returns the value and the byte offset it started at.
    fn read(&mut self, ty: Scalar, what: &str) -> Result<(f64, usize), PlyError> {
        match self.format {
            Format::BinaryLe => {
                let start = self.pos;
                let end = start + ty.size();
                if end > self.data.len() {
                    return Err(self.truncated(what));
                }
                self.pos = end;
                Ok((ty.decode_le(&self.data[start..end]), start))
            }
            Format::Ascii => {
                while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                let start = self.pos;
                while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
                    self.pos += 1;
                }
                if start == self.pos {
                    return Err(self.truncated(what));
                }
                let tok = std::str::from_utf8(&self.data[start..self.pos]).unwrap_or("");
                let bad = || PlyError::Value { offset: start, message: format!("cannot parse {tok:?} in {what}") };
                let v = if ty.is_integer() {
                    tok.parse::<i64>().map_err(|_| bad())? as f64
                } else {
                    tok.parse::<f64>().map_err(|_| bad())?
                };
                Ok((v, start))
            }
        }
    }
}

fn to_u8(v: f64, offset: usize, what: &str) -> Result<u8, PlyError> {
    if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
        Ok(v as u8)
    } else {
        Err(PlyError::Value { offset, message: format!("{what} value {v} is not in 0..=255") })
    }
}

fn to_class(v: f64, offset: usize, what: &str) -> Result<u32, PlyError> {
    if v.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&v) {
        Ok(v as u32)
    } else {
        Err(PlyError::Value { offset, message: format!("{what} value {v} is not a class id") })
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud, PlyError> {
    read_ply_with_report(path).map(|(c, _)| c)
}

pub fn read_ply_with_report(path: impl AsRef<Path>) -> Result<(PointCloud, ReadReport), PlyError> {
    let path = path.as_ref();
    let data = fs::read(path).map_err(|source| PlyError::Io { path: path.display().to_string(), source })?;
    let (cloud, report) = parse_ply(&data)?;
    if !report.skipped_properties.is_empty() || !report.skipped_elements.is_empty() {
        log::warn!(
            "{}: skipped unknown properties [{}] and elements [{}]",
            path.display(),
            report.skipped_properties.join(", "),
            report.skipped_elements.join(", ")
        );
    }
    Ok((cloud, report))
}

/// Parses a complete PLY file held in memory.
pub fn parse_ply(data: &[u8]) -> Result<(PointCloud, ReadReport), PlyError> {
    let header = parse_header(data)?;
    let mut body = Body { data, pos: header.body_offset, format: header.format };
    let mut report = ReadReport::default();
    let mut cloud = None;

    for elem in &header.elements {
        if elem.name != "vertex" || cloud.is_some() {
            report.skipped_elements.push(elem.name.clone());
            skip_element(&mut body, elem)?;
            continue;
        }
        cloud = Some(read_vertices(&mut body, elem, &mut report)?);
    }
    let mut cloud = cloud.ok_or_else(|| header_err(0, "no vertex element"))?;
    cloud.class_map = header.class_map;
    cloud.unnormalized_normals = cloud.normals_off_unit();
    Ok((cloud, report))
}

fn skip_element(body: &mut Body<'_>, elem: &Element) -> Result<(), PlyError> {
    for _ in 0..elem.count {
        for p in &elem.props {
            skip_property(body, p, &elem.name)?;
        }
    }
    Ok(())
}

fn skip_property(body: &mut Body<'_>, p: &Property, elem: &str) -> Result<(), PlyError> {
    match p.kind {
        PropKind::Scalar(ty) => {
            body.read(ty, elem)?;
        }
        PropKind::List { count, item } => {
            let (n, at) = body.read(count, elem)?;
            if n < 0.0 {
                return Err(PlyError::Value { offset: at, message: format!("negative list length in {elem}") });
            }
            for _ in 0..n as usize {
                body.read(item, elem)?;
            }
        }
    }
    Ok(())
}

fn read_vertices(body: &mut Body<'_>, elem: &Element, report: &mut ReadReport) -> Result<PointCloud, PlyError> {
    let roles: Vec<Role> = elem
        .props
        .iter()
        .map(|p| match p.kind {
            PropKind::Scalar(_) => role_of(&p.name),
            PropKind::List { .. } => Role::Skip,
        })
        .collect();
    for (p, r) in elem.props.iter().zip(&roles) {
        if *r == Role::Skip {
            report.skipped_properties.push(p.name.clone());
        }
    }
    let has = |pred: &dyn Fn(Role) -> bool| -> usize { roles.iter().filter(|&&r| pred(r)).count() };
    let n_pos = has(&|r| matches!(r, Role::Pos(_)));
    let n_col = has(&|r| matches!(r, Role::Color(_)));
    let n_nrm = has(&|r| matches!(r, Role::Normal(_)));
    for (group, count) in [("x/y/z", n_pos), ("red/green/blue", n_col), ("nx/ny/nz", n_nrm)] {
        if count != 0 && count != 3 || (group == "x/y/z" && count != 3) {
            return Err(header_err(0, format!("vertex element needs all of {group}")));
        }
    }
    for single in [Role::Intensity, Role::Label, Role::Pred] {
        if has(&|r| r == single) > 1 {
            return Err(header_err(0, format!("vertex element has more than one {single:?} property")));
        }
    }

    let n = elem.count;
    let mut positions = Vec::with_capacity(n);
    let mut colors = (n_col == 3).then(|| Vec::with_capacity(n));
    let mut normals = (n_nrm == 3).then(|| Vec::with_capacity(n));
    let mut intensity = (has(&|r| r == Role::Intensity) == 1).then(|| Vec::with_capacity(n));
    let mut labels = (has(&|r| r == Role::Label) == 1).then(|| Vec::with_capacity(n));
    let mut preds = (has(&|r| r == Role::Pred) == 1).then(|| Vec::with_capacity(n));

    for v in 0..n {
        let what = format!("vertex {v} of {n}");
        let mut pos = [0.0f64; 3];
        let mut col = [0u8; 3];
        let mut nrm = [0.0f32; 3];
        for (p, &role) in elem.props.iter().zip(&roles) {
            let ty = match p.kind {
                PropKind::Scalar(ty) => ty,
                PropKind::List { .. } => {
                    skip_property(body, p, &what)?;
                    continue;
                }
            };
            let (val, at) = body.read(ty, &what)?;
            match role {
                Role::Pos(a) => pos[a] = val,
                Role::Color(a) => col[a] = to_u8(val, at, &p.name)?,
                Role::Normal(a) => nrm[a] = val as f32,
                Role::Intensity => intensity.as_mut().unwrap().push(val as f32),
                Role::Label => labels.as_mut().unwrap().push(to_class(val, at, &p.name)?),
                Role::Pred => preds.as_mut().unwrap().push(to_class(val, at, &p.name)?),
                Role::Skip => {}
            }
        }
        positions.push(pos);
        if let Some(c) = colors.as_mut() {
            c.push(col);
        }
        if let Some(nn) = normals.as_mut() {
            nn.push(nrm);
        }
    }
    Ok(PointCloud {
        positions,
        colors,
        normals,
        intensity,
        labels,
        predicted: preds,
        class_map: None,
        unnormalized_normals: false,
    })
}

/// `%.9g`-style formatting: 9 significant digits, trailing zeros trimmed.
fn fmt_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

fn header_text(cloud: &PointCloud, encoding: PlyEncoding) -> String {
    let mut h = String::from("ply\n");
    h.push_str(match encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLe => "format binary_little_endian 1.0\n",
    });
    if let Some(map) = &cloud.class_map {
        let _ = writeln!(h, "comment {CLASS_COMMENT} {}", serde_json::to_string(map.names()).unwrap());
    }
    let _ = writeln!(h, "element vertex {}", cloud.len());
    h.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.colors.is_some() {
        h.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if cloud.normals.is_some() {
        h.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if cloud.intensity.is_some() {
        h.push_str("property float intensity\n");
    }
    if cloud.labels.is_some() {
        h.push_str("property int label\n");
    }
    if cloud.predicted.is_some() {
        h.push_str("property int pred\n");
    }
    h.push_str("end_header\n");
    h
}

/// Serializes `cloud` to PLY bytes.
pub fn encode_ply(cloud: &PointCloud, encoding: PlyEncoding) -> Result<Vec<u8>, PlyError> {
    let violations = validate_cloud(cloud);
    if let Some(v) = violations.first() {
        return Err(PlyError::InvalidCloud(format!("{v} ({} violations)", violations.len())));
    }
    for ids in [&cloud.labels, &cloud.predicted].into_iter().flatten() {
        if let Some(&id) = ids.iter().find(|&&id| id > i32::MAX as u32) {
            return Err(PlyError::InvalidCloud(format!("class id {id} does not fit PLY int")));
        }
    }
    let mut out = header_text(cloud, encoding).into_bytes();
    let n = cloud.len();
    match encoding {
        PlyEncoding::BinaryLe => {
            out.reserve(n * 64);
            for i in 0..n {
                for c in cloud.positions[i] {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                if let Some(c) = &cloud.colors {
                    out.extend_from_slice(&c[i]);
                }
                if let Some(nn) = &cloud.normals {
                    for c in nn[i] {
                        out.extend_from_slice(&c.to_le_bytes());
                    }
                }
                if let Some(v) = &cloud.intensity {
                    out.extend_from_slice(&v[i].to_le_bytes());
                }
                for ids in [&cloud.labels, &cloud.predicted].into_iter().flatten() {
                    out.extend_from_slice(&(ids[i] as i32).to_le_bytes());
                }
            }
        }
        PlyEncoding::Ascii => {
            let mut line = String::new();
            for i in 0..n {
                line.clear();
                let p = cloud.positions[i];
                let _ = write!(line, "{} {} {}", fmt_sig9(p[0]), fmt_sig9(p[1]), fmt_sig9(p[2]));
                if let Some(c) = &cloud.colors {
                    let _ = write!(line, " {} {} {}", c[i][0], c[i][1], c[i][2]);
                }
                if let Some(nn) = &cloud.normals {
                    let _ = write!(line, " {} {} {}", nn[i][0], nn[i][1], nn[i][2]);
                }
                if let Some(v) = &cloud.intensity {
                    let _ = write!(line, " {}", v[i]);
                }
                for ids in [&cloud.labels, &cloud.predicted].into_iter().flatten() {
                    let _ = write!(line, " {}", ids[i]);
                }
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_ply(cloud: &PointCloud, path: impl AsRef<Path>, encoding: PlyEncoding) -> Result<(), PlyError> {
    let path = path.as_ref();
    let bytes = encode_ply(cloud, encoding)?;
    let io_err = |source| PlyError::Io { path: path.display().to_string(), source };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(&bytes).map_err(io_err)?;
    Ok(())
}
