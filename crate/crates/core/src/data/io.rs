//! File ingestion: headered CSV and IDX (big-endian image/label pairs).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Csv,
    Idx,
}

/// Loads a dataset from disk. Duplicate groups come from exact-row hashing.
///
/// CSV files need a header naming the feature columns plus one `label` column.
/// The label column may declare the class count as `label:<c>`; otherwise it is
/// inferred as `max(label) + 1` (at least 2).
///
/// For IDX, `path` is the image file; the label file is found by replacing
/// `images` with `labels` (and `idx3` with `idx1`) in the file name, following
/// the MNIST naming convention.
pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Dataset> {
    let path = path.as_ref();
    match format {
        DatasetFormat::Csv => load_csv(path),
        DatasetFormat::Idx => {
            let labels = idx_label_path(path)?;
            load_idx(path, labels)
        }
    }
}

fn idx_label_path(images: &Path) -> Result<PathBuf> {
    let name = images
        .file_name()
        .and_then(|n| n.to_str())
        .filter(|n| n.contains("images"))
        .ok_or_else(|| Error::Parse {
            path: images.to_path_buf(),
            location: "file name".into(),
            message: "IDX image file name must contain `images`".into(),
        })?;
    Ok(images.with_file_name(name.replacen("images", "labels", 1).replacen("idx3", "idx1", 1)))
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location,
        message: message.into(),
    }
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, "line 1".into(), e.to_string()))?
        .clone();

    let mut label_col = None;
    let mut declared = None;
    for (j, h) in headers.iter().enumerate() {
        let (key, arg) = h.split_once(':').map_or((h, None), |(k, a)| (k, Some(a)));
        if key == "label" {
            if label_col.is_some() {
                return Err(parse_err(path, "line 1".into(), "more than one `label` column"));
            }
            label_col = Some(j);
            if let Some(a) = arg {
                let c: usize = a.trim().parse().map_err(|_| {
                    parse_err(path, format!("line 1, column {}", j + 1), format!("bad class count `{a}`"))
                })?;
                declared = Some(c);
            }
        }
    }
    let label_col = label_col.ok_or_else(|| parse_err(path, "line 1".into(), "no `label` column"))?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(parse_err(path, "line 1".into(), "no feature columns"));
    }

    let mut values = Vec::new();
    let mut raw_labels: Vec<(i64, usize)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(path, format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        for (j, field) in record.iter().enumerate() {
            if j == label_col {
                let y: i64 = field.parse().map_err(|_| {
                    parse_err(path, format!("line {line}, column {}", j + 1), format!("bad label `{field}`"))
                })?;
                raw_labels.push((y, line));
            } else {
                let x: f64 = field.parse().map_err(|_| {
                    parse_err(path, format!("line {line}, column {}", j + 1), format!("bad number `{field}`"))
                })?;
                values.push(x);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(parse_err(path, "line 2".into(), "no data rows"));
    }
    let inferred = raw_labels.iter().map(|&(y, _)| y.max(0) as usize + 1).max().unwrap_or(2);
    let num_classes = declared.unwrap_or(inferred.max(2));
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (y, line) in raw_labels {
        if y < 0 || y as usize >= num_classes {
            return Err(Error::LabelOutOfRange { label: y, num_classes, line });
        }
        labels.push(y as usize);
    }
    let features = Array2::from_shape_vec((labels.len(), dim), values)
        .map_err(|e| parse_err(path, "body".into(), e.to_string()))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("csv").to_string();
    Dataset::from_rows(name, features, labels, num_classes)
}

struct IdxArray {
    dims: Vec<usize>,
    data: Vec<u8>,
}

fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(path, "offset 0".into(), "bad IDX magic number"));
    }
    if bytes[2] != 0x08 {
        return Err(parse_err(
            path,
            "offset 2".into(),
            format!("unsupported IDX element type 0x{:02x} (only unsigned byte)", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(parse_err(path, "offset 4".into(), "truncated IDX header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return Err(parse_err(
            path,
            format!("offset {header}"),
            format!("expected {count} data bytes, found {}", bytes.len() - header),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Loads an IDX image/label file pair. Images are flattened and scaled to `[0, 1]`.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if lab.dims.len() != 1 {
        return Err(parse_err(labels, "offset 3".into(), "label file must be 1-dimensional"));
    }
    let n = img.dims.first().copied().unwrap_or(0);
    if n != lab.dims[0] {
        return Err(Error::ShapeMismatch(format!(
            "{n} images but {} labels",
            lab.dims[0]
        )));
    }
    let dim = if img.dims.len() > 1 { img.dims[1..].iter().product() } else { 1 };
    let features = Array2::from_shape_vec((n, dim), img.data.iter().map(|&b| f64::from(b) / 255.0).collect())
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let labels_vec: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let num_classes = labels_vec.iter().max().map_or(2, |&m| (m + 1).max(2));
    let name = images.file_stem().and_then(|s| s.to_str()).unwrap_or("idx").to_string();
    Dataset::from_rows(name, features, labels_vec, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body).unwrap();
        p
    }

    #[test]
    fn csv_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"f0,f1,label\n0.5,1.0,2\n");
        let ds = load_dataset(&p, DatasetFormat::Csv).unwrap();
        assert_eq!((ds.len(), ds.dim()), (1, 2));
        assert_eq!(ds.labels(), &[2]);
        assert_eq!(ds.row(0).to_vec(), vec![0.5, 1.0]);
    }

    #[test]
    fn csv_identical_rows_share_group() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"f0,f1,label\n1,2,0\n3,4,1\n1,2,0\n");
        let ds = load_dataset(&p, DatasetFormat::Csv).unwrap();
        assert_eq!(ds.dup_group()[0], ds.dup_group()[2]);
        assert_ne!(ds.dup_group()[0], ds.dup_group()[1]);
    }

    #[test]
    fn csv_label_out_of_declared_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"f0,label:3\n0.1,0\n0.2,3\n");
        match load_dataset(&p, DatasetFormat::Csv) {
            Err(Error::LabelOutOfRange { label: 3, num_classes: 3, line: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_parse_error_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", b"f0,label\n0.1,0\nabc,1\n");
        let err = load_dataset(&p, DatasetFormat::Csv).unwrap_err();
        match err {
            Error::Parse { location, .. } => assert_eq!(location, "line 3, column 1"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_dataset(dir.path().join("missing.csv"), DatasetFormat::Csv),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn idx_pair() {
        let dir = tempfile::tempdir().unwrap();
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend_from_slice(&[0, 255, 51, 0]);
        let lab = [0, 0, 8, 1, 0, 0, 0, 2, 1, 0];
        let p = write(dir.path(), "train-images-idx3-ubyte", &img);
        write(dir.path(), "train-labels-idx1-ubyte", &lab);
        let ds = load_dataset(&p, DatasetFormat::Idx).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.num_classes()), (2, 2, 2));
        assert_eq!(ds.row(0).to_vec(), vec![0.0, 1.0]);
        assert_eq!(ds.row(1).to_vec(), vec![0.2, 0.0]);
        assert_eq!(ds.labels(), &[1, 0]);

        let bad = write(dir.path(), "bad-images", &[1, 2, 3, 4]);
        write(dir.path(), "bad-labels", &lab);
        assert!(matches!(load_dataset(&bad, DatasetFormat::Idx), Err(Error::Parse { .. })));
    }
}
