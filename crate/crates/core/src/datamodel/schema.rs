use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;

pub const FORMAT_VERSION: u32 = 1;

/// First line of a dataset file.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub d_v: usize,
    pub num_object_classes: usize,
    /// Includes the reserved no-relation class 0.
    pub num_predicate_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub label: usize,
    /// `(x1, y1, x2, y2)` in normalized image coordinates.
    pub bbox: [f32; 4],
    pub visual: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub subj: usize,
    pub obj: usize,
    /// 0 marks a candidate pair with no relation.
    pub predicate: usize,
    pub union: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub objects: Vec<ObjectInstance>,
    pub relations: Vec<RelationInstance>,
}

impl ImageRecord {
    /// Relations with a positive predicate.
    pub fn positive_relations(&self) -> impl Iterator<Item = &RelationInstance> {
        self.relations.iter().filter(|r| r.predicate > 0)
    }

    pub fn validate(&self, header: &DatasetHeader) -> Result<(), String> {
        if !self.relations.is_empty() && self.objects.len() < 2 {
            return Err(format!(
                "image {}: relations need at least two objects",
                self.image_id
            ));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.label >= header.num_object_classes {
                return Err(format!(
                    "object {i}: label {} out of range ({} classes)",
                    o.label, header.num_object_classes
                ));
            }
            let [x1, y1, x2, y2] = o.bbox;
            let in_unit = o.bbox.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v));
            if !(in_unit && x1 < x2 && y1 < y2) {
                return Err(format!("object {i}: invalid bbox {:?}", o.bbox));
            }
            if o.visual.len() != header.d_v {
                return Err(format!(
                    "object {i}: visual feature has {} values, header says d_v = {}",
                    o.visual.len(),
                    header.d_v
                ));
            }
            if o.visual.iter().any(|v| !v.is_finite()) {
                return Err(format!("object {i}: non-finite visual feature"));
            }
        }
        let mut seen = HashSet::new();
        for (k, r) in self.relations.iter().enumerate() {
            let n = self.objects.len();
            if r.subj >= n || r.obj >= n {
                return Err(format!(
                    "relation {k}: object index out of range ({}, {}) with {n} objects",
                    r.subj, r.obj
                ));
            }
            if r.subj == r.obj {
                return Err(format!("relation {k}: subject equals object ({})", r.subj));
            }
            if r.predicate >= header.num_predicate_classes {
                return Err(format!(
                    "relation {k}: predicate {} out of range ({} classes)",
                    r.predicate, header.num_predicate_classes
                ));
            }
            if r.union.len() != header.d_v {
                return Err(format!(
                    "relation {k}: union feature has {} values, header says d_v = {}",
                    r.union.len(),
                    header.d_v
                ));
            }
            if r.union.iter().any(|v| !v.is_finite()) {
                return Err(format!("relation {k}: non-finite union feature"));
            }
            if !seen.insert((r.subj, r.obj)) {
                return Err(format!(
                    "relation {k}: duplicate pair ({}, {})",
                    r.subj, r.obj
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn new(header: DatasetHeader, images: Vec<ImageRecord>) -> Result<Self, DataError> {
        for (i, img) in images.iter().enumerate() {
            img.validate(&header).map_err(|msg| DataError::Invalid { line: i + 2, msg })?;
        }
        Ok(Self { header, images })
    }

    pub fn num_positive_relations(&self) -> usize {
        self.images.iter().map(|im| im.positive_relations().count()).sum()
    }

    pub fn find_image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.image_id == image_id)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DataError> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for img in &self.images {
            serde_json::to_writer(&mut w, img)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let f = File::create(path)?;
        self.write_to(BufWriter::new(f))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, DataError> {
        let mut lines = r.lines();
        let header_line = lines.next().ok_or(DataError::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        let header: DatasetHeader =
            serde_json::from_str(&header_line).map_err(|e| DataError::Parse {
                line: 1,
                msg: e.to_string(),
            })?;
        if header.version != FORMAT_VERSION {
            return Err(DataError::Parse {
                line: 1,
                msg: format!("unsupported version {}", header.version),
            });
        }
        if header.num_predicate_classes < 2 || header.num_object_classes < 1 || header.d_v < 1 {
            return Err(DataError::Parse {
                line: 1,
                msg: "header dimensions must be positive (and at least one positive predicate)".into(),
            });
        }
        let mut images = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let img: ImageRecord = serde_json::from_str(&line).map_err(|e| DataError::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            img.validate(&header)
                .map_err(|msg| DataError::Invalid { line: line_no, msg })?;
            images.push(img);
        }
        Ok(Self { header, images })
    }
}

/// Reads a JSON-lines dataset, validating every record.
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let f = File::open(path).map_err(|e| DataError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Dataset::read_from(BufReader::new(f))
}
