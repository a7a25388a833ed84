//! The descriptor database: submap records indexed by an exact k-d tree
//! over their 64-d place vectors.
//!
//! Records are sorted by submap index at build time, so the k-d tree's
//! position tie-break coincides with the ascending-index tie-break and query
//! results are independent of insertion order. Queries are exact (identical
//! to a brute-force scan).

use crate::descriptor::{DescriptorPair, DESCRIPTOR_DIM};
use crate::geometry::{Point3, PointCloud, PoseSE3};
use crate::io::{read_pcd, IoError};
use crate::kdtree::KdTree;
use crate::model::ClassLabel;
use nalgebra::{Matrix3, Vector3};
use std::borrow::Cow;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"RLDB";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatabaseError {
    #[error("database must contain at least one record")]
    Empty,
    #[error("duplicate submap index {0}")]
    DuplicateIndex(u64),
    #[error("k must be at least 1")]
    BadK,
    #[error("query vector has dimension {0}, expected {DESCRIPTOR_DIM}")]
    BadQueryDim(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a descriptor database (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported database version {version}")]
    BadVersion { path: String, version: u32 },
    #[error("{path}: corrupt database: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Cloud(#[from] IoError),
    #[error("record {0} stores an invalid pose: {1}")]
    BadPose(u64, String),
}

/// Where a record's cropped submap cloud lives.
#[derive(Debug, Clone)]
pub enum CloudRef {
    Memory(PointCloud),
    File(PathBuf),
}

impl CloudRef {
    pub fn load(&self) -> Result<Cow<'_, PointCloud>, DatabaseError> {
        match self {
            CloudRef::Memory(c) => Ok(Cow::Borrowed(c)),
            CloudRef::File(p) => Ok(Cow::Owned(read_pcd(p)?)),
        }
    }
}

/// Everything the pipeline needs about one submap.
#[derive(Debug, Clone)]
pub struct SubmapRecord {
    pub index: u64,
    pub origin: PoseSE3,
    pub descriptor: DescriptorPair,
    pub class: Option<ClassLabel>,
    pub cloud: CloudRef,
}

#[derive(Debug, Clone)]
pub struct DescriptorDatabase {
    records: Vec<SubmapRecord>,
    tree: KdTree,
}

impl DescriptorDatabase {
    /// Build from records; indices must be unique. Records are reordered by
    /// ascending index, and the tree build is deterministic.
    pub fn build(mut records: Vec<SubmapRecord>) -> Result<Self, DatabaseError> {
        if records.is_empty() {
            return Err(DatabaseError::Empty);
        }
        records.sort_by_key(|r| r.index);
        for pair in records.windows(2) {
            if pair[0].index == pair[1].index {
                return Err(DatabaseError::DuplicateIndex(pair[0].index));
            }
        }
        let mut data = Vec::with_capacity(records.len() * DESCRIPTOR_DIM);
        for r in &records {
            data.extend_from_slice(&r.descriptor.q);
        }
        let tree = KdTree::build(DESCRIPTOR_DIM, data);
        Ok(Self { records, tree })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SubmapRecord] {
        &self.records
    }

    pub fn record_by_index(&self, index: u64) -> Option<&SubmapRecord> {
        self.records
            .binary_search_by_key(&index, |r| r.index)
            .ok()
            .map(|pos| &self.records[pos])
    }

    /// The `min(k, n)` nearest submaps by Euclidean distance over `q`,
    /// ascending, ties broken by ascending submap index.
    pub fn query_top_k(&self, q: &[f64], k: usize) -> Result<Vec<(u64, f64)>, DatabaseError> {
        if k == 0 {
            return Err(DatabaseError::BadK);
        }
        if q.len() != DESCRIPTOR_DIM {
            return Err(DatabaseError::BadQueryDim(q.len()));
        }
        Ok(self
            .tree
            .nearest_k(q, k)
            .into_iter()
            .map(|(pos, dist)| (self.records[pos as usize].index, dist))
            .collect())
    }

    /// Serialize records plus the tree layout. In-memory clouds are inlined;
    /// file-backed clouds are stored as their path strings.
    pub fn save(&self, path: &Path) -> Result<(), DatabaseError> {
        let io = |e: std::io::Error| DatabaseError::Io { path: path.display().to_string(), source: e };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for &o in self.tree.order() {
            out.extend_from_slice(&o.to_le_bytes());
        }
        for r in &self.records {
            out.extend_from_slice(&r.index.to_le_bytes());
            let rot = r.origin.rotation();
            for row in 0..3 {
                for col in 0..3 {
                    out.extend_from_slice(&rot[(row, col)].to_le_bytes());
                }
            }
            for v in r.origin.translation().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in r.descriptor.q.iter().chain(&r.descriptor.w) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(r.class.map_or(255, |c| c.index() as u8));
            match &r.cloud {
                CloudRef::File(p) => {
                    let s = p.to_string_lossy();
                    out.push(1);
                    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                    out.extend_from_slice(s.as_bytes());
                }
                CloudRef::Memory(c) => {
                    out.push(2);
                    out.extend_from_slice(&(c.len() as u32).to_le_bytes());
                    for p in &c.points {
                        out.extend_from_slice(&p.x.to_le_bytes());
                        out.extend_from_slice(&p.y.to_le_bytes());
                        out.extend_from_slice(&p.z.to_le_bytes());
                    }
                }
            }
        }
        let mut file = std::fs::File::create(path).map_err(io)?;
        file.write_all(&out).map_err(io)
    }

    /// Load a database; query results reproduce the saved tree exactly.
    /// Relative cloud paths are resolved against the database's directory.
    pub fn load(path: &Path) -> Result<Self, DatabaseError> {
        let display = path.display().to_string();
        let io = |e: std::io::Error| DatabaseError::Io { path: display.clone(), source: e };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        let corrupt = |message: String| DatabaseError::Corrupt { path: display.clone(), message };

        let mut at = 0usize;
        macro_rules! take {
            ($n:expr) => {{
                let n = $n;
                if at + n > bytes.len() {
                    return Err(corrupt(format!("need {n} bytes at offset {at}")));
                }
                let s = &bytes[at..at + n];
                at += n;
                s
            }};
        }
        macro_rules! take_u32 {
            () => {
                u32::from_le_bytes(take!(4).try_into().unwrap())
            };
        }
        macro_rules! take_f64 {
            () => {
                f64::from_le_bytes(take!(8).try_into().unwrap())
            };
        }

        if take!(4) != MAGIC {
            return Err(DatabaseError::BadMagic { path: display });
        }
        let version = take_u32!();
        if version != VERSION {
            return Err(DatabaseError::BadVersion { path: display, version });
        }
        let count = take_u32!() as usize;
        let mut order = Vec::with_capacity(count);
        for _ in 0..count {
            order.push(take_u32!());
        }

        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let index = u64::from_le_bytes(take!(8).try_into().unwrap());
            let mut rot = [0.0f64; 9];
            for v in &mut rot {
                *v = take_f64!();
            }
            let t = Vector3::new(take_f64!(), take_f64!(), take_f64!());
            let rotation = Matrix3::from_row_slice(&rot);
            let origin = PoseSE3::from_parts(rotation, t)
                .map_err(|e| DatabaseError::BadPose(index, e.to_string()))?;
            let mut q = Vec::with_capacity(DESCRIPTOR_DIM);
            let mut w = Vec::with_capacity(DESCRIPTOR_DIM);
            for _ in 0..DESCRIPTOR_DIM {
                q.push(take_f64!());
            }
            for _ in 0..DESCRIPTOR_DIM {
                w.push(take_f64!());
            }
            let class_byte = take!(1)[0];
            let class = match class_byte {
                255 => None,
                b => Some(
                    ClassLabel::from_index(b as usize)
                        .ok_or_else(|| corrupt(format!("bad class byte {b}")))?,
                ),
            };
            let cloud = match take!(1)[0] {
                1 => {
                    let len = take_u32!() as usize;
                    let s = std::str::from_utf8(take!(len))
                        .map_err(|_| corrupt("cloud path is not UTF-8".into()))?;
                    let p = PathBuf::from(s);
                    CloudRef::File(if p.is_relative() { base.join(p) } else { p })
                }
                2 => {
                    let n = take_u32!() as usize;
                    let mut points = Vec::with_capacity(n);
                    for _ in 0..n {
                        points.push(Point3::new(take_f64!(), take_f64!(), take_f64!()));
                    }
                    CloudRef::Memory(PointCloud::from_points(points))
                }
                tag => return Err(corrupt(format!("unknown cloud tag {tag}"))),
            };
            records.push(SubmapRecord {
                index,
                origin,
                descriptor: DescriptorPair::new(q, w),
                class,
                cloud,
            });
        }

        let mut data = Vec::with_capacity(records.len() * DESCRIPTOR_DIM);
        for r in &records {
            data.extend_from_slice(&r.descriptor.q);
        }
        let tree = KdTree::from_parts(DESCRIPTOR_DIM, data, order)
            .map_err(|m| corrupt(m))?;
        Ok(Self { records, tree })
    }
}
