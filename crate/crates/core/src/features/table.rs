//! Feature tables and their binary container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       4 bytes  "GSFT"
//! version     u32
//! dim         u32
//! rows        u64
//! checkpoint  u32 length + UTF-8
//! dataset     u32 length + UTF-8
//! fonts       u32 count, then u32 length + UTF-8 per name
//! classes     u32 length + UTF-8 (one char per class)
//! rows        font_id u32, class_id u32, style f32 x dim, content f32 x dim
//! ```
//!
//! A sidecar `<file>.idx` text file lists `row font_id font class_id class`
//! per line for humans and shell tools.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::glyphset::GlyphMatrix;
use crate::model::ModelParams;
use crate::trainer::encode_matrix;

pub const TABLE_MAGIC: &[u8; 4] = b"GSFT";
pub const TABLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub font_id: usize,
    pub class_id: usize,
    pub style: Vec<f32>,
    pub content: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TableProvenance {
    pub checkpoint: String,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub font_names: Vec<String>,
    pub class_labels: Vec<char>,
    pub rows: Vec<FeatureRow>,
    pub provenance: TableProvenance,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_fonts(&self) -> usize {
        self.font_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn find(&self, font_id: usize, class_id: usize) -> Option<&FeatureRow> {
        self.rows.iter().find(|r| r.font_id == font_id && r.class_id == class_id)
    }

    pub fn font_index(&self, name: &str) -> Option<usize> {
        self.font_names.iter().position(|n| n == name)
    }

    /// Ids in range, widths consistent, `(font, class)` pairs unique.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if r.style.len() != self.dim || r.content.len() != self.dim {
                return Err(Error::ShapeMismatch(format!(
                    "row ({}, {}) has the wrong feature width",
                    r.font_id, r.class_id
                )));
            }
            if r.font_id >= self.font_names.len() || r.class_id >= self.class_labels.len() {
                return Err(Error::ShapeMismatch(format!(
                    "row ({}, {}) is out of range",
                    r.font_id, r.class_id
                )));
            }
            if !seen.insert((r.font_id, r.class_id)) {
                return Err(Error::ShapeMismatch(format!(
                    "duplicate row ({}, {})",
                    r.font_id, r.class_id
                )));
            }
        }
        Ok(())
    }

    pub fn style_vectors(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.style.iter().map(|&v| v as f64).collect()).collect()
    }

    pub fn content_vectors(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.content.iter().map(|&v| v as f64).collect()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_table(self, &mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut cursor = bytes;
        let table = read_table(&mut cursor, path)?;
        if !cursor.is_empty() {
            return Err(Error::corrupt(path, format!("{} trailing bytes", cursor.len())));
        }
        table.validate().map_err(|e| Error::corrupt(path, e.to_string()))?;
        Ok(table)
    }

    /// Write the table and its `.idx` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let idx = index_path(path);
        let mut text = String::from("row\tfont_id\tfont\tclass_id\tclass\n");
        for (k, r) in self.rows.iter().enumerate() {
            text.push_str(&format!(
                "{k}\t{}\t{}\t{}\t{}\n",
                r.font_id, self.font_names[r.font_id], r.class_id, self.class_labels[r.class_id]
            ));
        }
        std::fs::write(&idx, text).map_err(|e| Error::io(&idx, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Sidecar index path: `features.bin` → `features.bin.idx`.
pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn write_table(t: &FeatureTable, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(TABLE_MAGIC)?;
    w.write_u32::<LittleEndian>(TABLE_FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(t.dim as u32)?;
    w.write_u64::<LittleEndian>(t.rows.len() as u64)?;
    write_str(w, &t.provenance.checkpoint)?;
    write_str(w, &t.provenance.dataset)?;
    w.write_u32::<LittleEndian>(t.font_names.len() as u32)?;
    for n in &t.font_names {
        write_str(w, n)?;
    }
    write_str(w, &t.class_labels.iter().collect::<String>())?;
    for r in &t.rows {
        w.write_u32::<LittleEndian>(r.font_id as u32)?;
        w.write_u32::<LittleEndian>(r.class_id as u32)?;
        for &v in r.style.iter().chain(&r.content) {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

/// Longest string field accepted, a guard against garbage lengths.
const MAX_STR: usize = 1 << 20;

fn read_table(r: &mut &[u8], path: &Path) -> Result<FeatureTable> {
    let truncated = |_: std::io::Error| Error::corrupt(path, "file is truncated");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != TABLE_MAGIC {
        return Err(Error::corrupt(path, "not a feature table"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != TABLE_FORMAT_VERSION {
        return Err(Error::corrupt(
            path,
            format!("feature table version {version}, expected {TABLE_FORMAT_VERSION}"),
        ));
    }
    let dim = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let n = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let read_str = |r: &mut &[u8]| -> Result<String> {
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if len > MAX_STR || len > r.len() {
            return Err(Error::corrupt(path, "file is truncated"));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(truncated)?;
        String::from_utf8(buf).map_err(|_| Error::corrupt(path, "string field is not UTF-8"))
    };
    let checkpoint = read_str(r)?;
    let dataset = read_str(r)?;
    let fonts = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut font_names = Vec::new();
    for _ in 0..fonts {
        font_names.push(read_str(r)?);
    }
    let class_labels: Vec<char> = read_str(r)?.chars().collect();
    let row_bytes = 8 + 8 * dim;
    if n.checked_mul(row_bytes).is_none_or(|total| total > r.len()) {
        return Err(Error::corrupt(path, "file is truncated"));
    }
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let font_id = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let class_id = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut style = vec![0f32; dim];
        let mut content = vec![0f32; dim];
        r.read_f32_into::<LittleEndian>(&mut style).map_err(truncated)?;
        r.read_f32_into::<LittleEndian>(&mut content).map_err(truncated)?;
        rows.push(FeatureRow {
            font_id,
            class_id,
            style,
            content,
        });
    }
    Ok(FeatureTable {
        dim,
        font_names,
        class_labels,
        rows,
        provenance: TableProvenance { checkpoint, dataset },
    })
}

/// One row per matrix cell, font-major, from the inference-mode encoder.
pub fn extract_features(params: &ModelParams, matrix: &GlyphMatrix) -> FeatureTable {
    let feats = encode_matrix(params, matrix);
    let rows = matrix
        .glyphs()
        .iter()
        .enumerate()
        .map(|(k, g)| FeatureRow {
            font_id: g.font_id,
            class_id: g.class_id,
            style: feats.style.row(k).to_vec(),
            content: feats.content.row(k).to_vec(),
        })
        .collect();
    FeatureTable {
        dim: feats.style.cols,
        font_names: matrix.font_names().to_vec(),
        class_labels: matrix.class_labels().to_vec(),
        rows,
        provenance: TableProvenance::default(),
    }
}
