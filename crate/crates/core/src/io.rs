//! On-disk artifact formats.
//!
//! Binary layouts, all integers and floats little-endian:
//!
//! ```text
//! EMB1  magic "EMB1" | u32 rows | u32 cols | u32 float width (4|8)
//!       | rows*cols floats, row-major
//! AFH1  magic "AFH1" | u32 classes C | u32 subcenters K | u32 dim D
//!       | u32 float width (4|8) | C margins | C*K*D weights, row-major
//! ```
//!
//! The head checkpoint stores margins and sub-center weights; the scale is
//! a runtime parameter, not an artifact. Text formats are plain CSV with a
//! fixed header; parse errors carry the 1-based line number.

use std::path::Path;

use crate::arcface::ArcFaceHead;
use crate::data::EpochStats;
use crate::error::{Error, Result};
use crate::metrics::Prediction;
use crate::numerics::DenseMatrix;
use crate::scalar::Real;

const EMB_MAGIC: &[u8; 4] = b"EMB1";
const HEAD_MAGIC: &[u8; 4] = b"AFH1";

fn push_floats<T: Real>(buf: &mut Vec<u8>, values: &[T], width: u32) {
    match width {
        4 => {
            for &x in values {
                buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
        }
        8 => {
            for &x in values {
                buf.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        _ => unreachable!("validated width"),
    }
}

fn check_width(width: u32) -> Result<()> {
    if width != 4 && width != 8 {
        return Err(Error::Format(format!(
            "unsupported float width {width} (expected 4 or 8)"
        )));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated (needed {} bytes at offset {}, file has {})",
                self.path,
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "{}: bad magic {:?} (expected {:?})",
                self.path,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn floats<T: Real>(&mut self, count: usize, width: u32) -> Result<Vec<T>> {
        let raw = self.take(count * width as usize)?;
        let mut out = Vec::with_capacity(count);
        match width {
            4 => {
                for c in raw.chunks_exact(4) {
                    out.push(T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64));
                }
            }
            8 => {
                for c in raw.chunks_exact(8) {
                    out.push(T::of(f64::from_le_bytes([
                        c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7],
                    ])));
                }
            }
            _ => unreachable!("validated width"),
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.path,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<(Vec<u8>, String)> {
    let bytes = std::fs::read(path)?;
    Ok((bytes, path.display().to_string()))
}

/// Write a feature matrix. `width` selects the stored precision.
pub fn write_matrix<T: Real>(path: &Path, m: &DenseMatrix<T>, width: u32) -> Result<()> {
    check_width(width)?;
    let mut buf = Vec::with_capacity(16 + m.data().len() * width as usize);
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&width.to_le_bytes());
    push_floats(&mut buf, m.data(), width);
    std::fs::write(path, buf)?;
    Ok(())
}

/// [`write_matrix`] at the scalar's own width.
pub fn write_matrix_native<T: Real>(path: &Path, m: &DenseMatrix<T>) -> Result<()> {
    write_matrix(path, m, T::BYTE_WIDTH)
}

/// Read a feature matrix; also returns the stored width so callers can
/// round-trip files without changing precision.
pub fn read_matrix<T: Real>(path: &Path) -> Result<(DenseMatrix<T>, u32)> {
    let (bytes, name) = open(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: name,
    };
    r.magic(EMB_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let width = r.u32()?;
    check_width(width)?;
    let data = r.floats::<T>(rows * cols, width)?;
    r.finish()?;
    Ok((DenseMatrix::from_vec(rows, cols, data)?, width))
}

/// Write a head checkpoint (margins + sub-center weights).
pub fn write_head<T: Real>(path: &Path, head: &ArcFaceHead<T>, width: u32) -> Result<()> {
    check_width(width)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(HEAD_MAGIC);
    for v in [
        head.num_classes() as u32,
        head.num_subcenters() as u32,
        head.embed_dim() as u32,
        width,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    push_floats(&mut buf, head.margins(), width);
    push_floats(&mut buf, head.weights().data(), width);
    std::fs::write(path, buf)?;
    Ok(())
}

/// Read a head checkpoint. `scale` is supplied by the caller (it is a
/// training hyperparameter, not part of the artifact).
pub fn read_head<T: Real>(path: &Path, scale: T) -> Result<ArcFaceHead<T>> {
    let (bytes, name) = open(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: name,
    };
    r.magic(HEAD_MAGIC)?;
    let classes = r.u32()? as usize;
    let subcenters = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let width = r.u32()?;
    check_width(width)?;
    let margins = r.floats::<T>(classes, width)?;
    let weights = r.floats::<T>(classes * subcenters * dim, width)?;
    r.finish()?;
    ArcFaceHead::new(
        classes,
        subcenters,
        dim,
        DenseMatrix::from_vec(classes * subcenters, dim, weights)?,
        margins,
        scale,
    )
}

fn check_csv_field(field: &str, what: &str) -> Result<()> {
    if field.contains(',') || field.contains('\n') || field.contains('\r') {
        return Err(Error::InvalidParams(format!(
            "{what} {field:?} contains a CSV delimiter"
        )));
    }
    Ok(())
}

/// Write `id,class_id` rows; an empty class field marks a distractor.
pub fn write_labels_csv(path: &Path, rows: &[(String, Option<usize>)]) -> Result<()> {
    let mut out = String::from("id,class_id\n");
    for (id, class) in rows {
        check_csv_field(id, "id")?;
        match class {
            Some(c) => out.push_str(&format!("{id},{c}\n")),
            None => out.push_str(&format!("{id},\n")),
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read `id,class_id` rows. Accepts either `id` or `query_id` as the first
/// header column; an empty class field means distractor.
pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, Option<usize>)>> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut rows = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "id,class_id")) | Some((_, "query_id,class_id")) => {}
        Some((_, other)) => {
            return Err(Error::Parse {
                path: name,
                line: 1,
                msg: format!("bad header {other:?} (expected \"id,class_id\")"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: name,
                line: 1,
                msg: "empty file".into(),
            })
        }
    }
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let (id, class_field) = line.split_once(',').ok_or_else(|| Error::Parse {
            path: name.clone(),
            line: lineno,
            msg: "expected 2 comma-separated fields".into(),
        })?;
        if id.is_empty() {
            return Err(Error::Parse {
                path: name.clone(),
                line: lineno,
                msg: "empty id".into(),
            });
        }
        let class = if class_field.is_empty() {
            None
        } else {
            Some(class_field.parse::<usize>().map_err(|e| Error::Parse {
                path: name.clone(),
                line: lineno,
                msg: format!("bad class id {class_field:?}: {e}"),
            })?)
        };
        rows.push((id.to_string(), class));
    }
    Ok(rows)
}

/// Write `query_id,class_id,confidence` rows. Confidence uses the shortest
/// exact decimal representation, so files round-trip bit-for-bit.
pub fn write_predictions_csv<T: Real>(path: &Path, preds: &[Prediction<T>]) -> Result<()> {
    let mut out = String::from("query_id,class_id,confidence\n");
    for p in preds {
        check_csv_field(&p.query_id, "query id")?;
        out.push_str(&format!("{},{},{}\n", p.query_id, p.class_id, p.confidence));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_predictions_csv<T: Real>(path: &Path) -> Result<Vec<Prediction<T>>> {
    let text = std::fs::read_to_string(path)?;
    let name = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "query_id,class_id,confidence")) => {}
        Some((_, other)) => {
            return Err(Error::Parse {
                path: name,
                line: 1,
                msg: format!("bad header {other:?} (expected \"query_id,class_id,confidence\")"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: name,
                line: 1,
                msg: "empty file".into(),
            })
        }
    }
    let mut preds = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parse_err = |msg: String| Error::Parse {
            path: name.clone(),
            line: lineno,
            msg,
        };
        let mut fields = line.splitn(3, ',');
        let (id, class_field, conf_field) = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(parse_err("expected 3 comma-separated fields".into())),
        };
        if id.is_empty() {
            return Err(parse_err("empty query id".into()));
        }
        let class_id = class_field
            .parse::<usize>()
            .map_err(|e| parse_err(format!("bad class id {class_field:?}: {e}")))?;
        let conf = conf_field
            .parse::<f64>()
            .map_err(|e| parse_err(format!("bad confidence {conf_field:?}: {e}")))?;
        if !conf.is_finite() {
            return Err(parse_err(format!(
                "confidence {conf_field:?} is not finite"
            )));
        }
        preds.push(Prediction {
            query_id: id.to_string(),
            class_id,
            confidence: T::of(conf),
        });
    }
    Ok(preds)
}

/// Write the per-epoch training report: `epoch,loss,val_gap,val_acc`.
pub fn write_metrics_csv<T: Real>(path: &Path, history: &[EpochStats<T>]) -> Result<()> {
    let mut out = String::from("epoch,loss,val_gap,val_acc\n");
    for row in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            row.epoch, row.loss, row.val_gap, row.val_acc
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
