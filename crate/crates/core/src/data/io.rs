//! CSV and IDX readers, and a CSV writer.
//!
//! CSV schema: an optional header row starting with `label`, then one row
//! per example, `label,x0,x1,...`. Labels are non-negative integers and
//! features are read verbatim as `f64`. Blank lines are skipped.
//!
//! IDX is the MNIST byte format: two zero bytes, a type code (only `0x08`,
//! unsigned byte, is accepted), a dimension count, big-endian `u32` sizes,
//! then the payload. Image bytes are scaled to `[0, 1]` by dividing by 255.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, Split};
use crate::error::{Error, Location, Result};

fn parse_err<T>(location: Location, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        location,
        message: message.into(),
    })
}

fn classes_of(labels: &[usize]) -> usize {
    labels.iter().max().map_or(1, |m| m + 1)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("label")) {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let label_field = fields.next().unwrap_or_default();
        let label: usize = match label_field.parse() {
            Ok(v) => v,
            Err(_) => {
                return parse_err(
                    Location::Line(lineno),
                    format!("label `{label_field}` is not a non-negative integer"),
                )
            }
        };
        let start = features.len();
        for f in fields {
            match f.parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                _ => return parse_err(Location::Line(lineno), format!("bad feature value `{f}`")),
            }
        }
        let row_dim = features.len() - start;
        match dim {
            None => dim = Some(row_dim),
            Some(d) if d != row_dim => {
                return parse_err(
                    Location::Line(lineno),
                    format!("expected {d} features, found {row_dim}"),
                )
            }
            _ => {}
        }
        labels.push(label);
    }
    let classes = classes_of(&labels);
    Dataset::new(
        features,
        labels,
        dim.unwrap_or(0),
        classes,
        Split::Train,
        path.display().to_string(),
    )
}

/// Writes `ds` in the CSV schema above. Values use the shortest
/// representation that reads back to the same `f64`.
pub fn export_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("label");
    for j in 0..ds.dim() {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for i in 0..ds.len() {
        let (x, y) = ds.example(i);
        out.push_str(&y.to_string());
        for v in x {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

struct IdxArray {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return parse_err(
            Location::Byte(bytes.len() as u64),
            "truncated IDX header: need 4 magic bytes",
        );
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return parse_err(
            Location::Byte(0),
            "IDX magic must start with two zero bytes",
        );
    }
    if bytes[2] != 0x08 {
        return parse_err(
            Location::Byte(2),
            format!("unsupported IDX element type 0x{:02x}", bytes[2]),
        );
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return parse_err(Location::Byte(3), "IDX array has zero dimensions");
    }
    let header_end = 4 + 4 * ndims;
    if bytes.len() < header_end {
        return parse_err(
            Location::Byte(bytes.len() as u64),
            format!("truncated IDX header: {ndims} dimensions need {header_end} bytes"),
        );
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() < header_end + count {
        return parse_err(
            Location::Byte(bytes.len() as u64),
            format!("truncated IDX payload: expected {count} bytes after the header"),
        );
    }
    Ok(IdxArray {
        dims,
        data: bytes[header_end..header_end + count].to_vec(),
    })
}

/// Loads an IDX image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = parse_idx(&fs::read(images)?)?;
    let lab = parse_idx(&fs::read(labels)?)?;
    if lab.dims.len() != 1 {
        return parse_err(Location::Byte(3), "IDX label file must be one-dimensional");
    }
    let n = img.dims[0];
    if lab.dims[0] != n {
        return Err(Error::Shape(format!(
            "{n} images but {} labels",
            lab.dims[0]
        )));
    }
    let dim: usize = img.dims[1..].iter().product();
    let features = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let classes = classes_of(&labels);
    Dataset::new(
        features,
        labels,
        dim,
        classes,
        Split::Train,
        images.display().to_string(),
    )
}

/// `train-images-idx3-ubyte` → `train-labels-idx1-ubyte`; otherwise the
/// first `images` in the file name becomes `labels`.
fn sibling_labels(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_str()?;
    let replaced = if name.contains("images-idx3") {
        name.replacen("images-idx3", "labels-idx1", 1)
    } else if name.contains("images") {
        name.replacen("images", "labels", 1)
    } else {
        return None;
    };
    Some(images.with_file_name(replaced))
}

/// Sniffs the format: files starting with two zero bytes are IDX images
/// (the label file is found by name), anything else is CSV.
pub fn load_idx_or_csv(path: &Path) -> Result<Dataset> {
    let head = fs::read(path)?;
    if head.len() >= 2 && head[0] == 0 && head[1] == 0 {
        // Validate the image header before looking for labels.
        parse_idx(&head)?;
        let labels = sibling_labels(path).ok_or_else(|| {
            Error::Config(format!(
                "cannot derive a label file name from {}",
                path.display()
            ))
        })?;
        load_idx(path, &labels)
    } else {
        load_csv(path)
    }
}
