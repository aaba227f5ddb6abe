//! CSV and binary (`CPMX` matrix + `CPLB` label) dataset files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, DomainTag};
use crate::error::{CpError, Result};

const MATRIX_MAGIC: &[u8; 4] = b"CPMX";
const LABEL_MAGIC: &[u8; 4] = b"CPLB";
const MATRIX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// Guesses the format from a file extension (`.csv` or `.cpmx`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(DataFormat::Csv),
            Some("cpmx") => Ok(DataFormat::Binary),
            _ => Err(CpError::Format {
                path: path.to_path_buf(),
                message: "cannot infer format; use a .csv or .cpmx extension".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MatrixDtype {
    F32 = 0,
    F64 = 1,
}

/// The companion label file of a binary matrix: same stem, `.cplb` extension.
pub fn labels_path(matrix_path: &Path) -> PathBuf {
    matrix_path.with_extension("cplb")
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a dataset. `n_classes` defaults to the column count for
/// probability/logit data and to `max(label) + 1` for feature data.
pub fn load_dataset(
    path: &Path,
    format: DataFormat,
    domain: DomainTag,
    n_classes: Option<usize>,
) -> Result<Dataset> {
    let (points, dim, labels) = match format {
        DataFormat::Csv => read_csv(path)?,
        DataFormat::Binary => {
            let (rows, cols, values) = read_matrix(path)?;
            let lpath = labels_path(path);
            let labels = read_labels(&lpath)?;
            if labels.len() != rows {
                return Err(CpError::Format {
                    path: lpath,
                    message: format!("{} labels for {rows} matrix rows", labels.len()),
                });
            }
            (values, cols, labels)
        }
    };
    let n_classes = match (n_classes, domain) {
        (Some(n), _) => n,
        (None, DomainTag::Feature) => labels.iter().max().map_or(1, |m| m + 1),
        (None, _) => dim,
    };
    Dataset::new(points, dim, labels, domain, n_classes).map_err(|e| match e {
        CpError::Invalid(message) => CpError::Format {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn save_dataset(dataset: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Csv => write_atomic(path, &csv_bytes(dataset)),
        DataFormat::Binary => {
            let matrix = matrix_bytes(
                dataset.len(),
                dataset.dim(),
                dataset.points(),
                MatrixDtype::F64,
            )?;
            write_atomic(path, &matrix)?;
            write_atomic(&labels_path(path), &label_bytes(dataset.labels())?)
        }
    }
}

fn csv_bytes(dataset: &Dataset) -> Vec<u8> {
    let mut out = String::new();
    for j in 0..dataset.dim() {
        out.push_str(&format!("x{j},"));
    }
    out.push_str("label\n");
    for (row, label) in dataset.rows().zip(dataset.labels()) {
        for v in row {
            // `Display` for f64 prints the shortest string that round-trips.
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{label}\n"));
    }
    out.into_bytes()
}

fn read_csv(path: &Path) -> Result<(Vec<f64>, usize, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let ncols = header.len();
    if ncols < 2 {
        return Err(CpError::Format {
            path: path.to_path_buf(),
            message: "header must be x0,...,x{d-1},label".into(),
        });
    }
    for (j, name) in header.iter().enumerate() {
        let expected = if j + 1 == ncols {
            "label".to_string()
        } else {
            format!("x{j}")
        };
        if name != expected {
            return Err(CpError::Parse {
                path: path.to_path_buf(),
                row: 1,
                column: j,
                message: format!("header field '{name}', expected '{expected}'"),
            });
        }
    }
    let dim = ncols - 1;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != ncols {
            return Err(CpError::Parse {
                path: path.to_path_buf(),
                row: line,
                column: record.len(),
                message: format!("{} fields, expected {ncols}", record.len()),
            });
        }
        for (j, field) in record.iter().take(dim).enumerate() {
            let v: f64 = field.parse().map_err(|_| CpError::Parse {
                path: path.to_path_buf(),
                row: line,
                column: j,
                message: format!("'{field}' is not a number"),
            })?;
            points.push(v);
        }
        let field = &record[dim];
        let label: usize = field.parse().map_err(|_| CpError::Parse {
            path: path.to_path_buf(),
            row: line,
            column: dim,
            message: format!("label '{field}' is not a non-negative integer"),
        })?;
        labels.push(label);
    }
    Ok((points, dim, labels))
}

fn csv_error(path: &Path, e: csv::Error) -> CpError {
    CpError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| CpError::invalid(format!("{what} {n} exceeds u32")))
}

fn matrix_bytes(rows: usize, cols: usize, values: &[f64], dtype: MatrixDtype) -> Result<Vec<u8>> {
    let width = if dtype == MatrixDtype::F32 { 4 } else { 8 };
    let mut out = Vec::with_capacity(17 + values.len() * width);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(rows, "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(cols, "column count")?.to_le_bytes());
    out.push(dtype as u8);
    for &v in values {
        match dtype {
            MatrixDtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            MatrixDtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    Ok(out)
}

fn label_bytes(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len() * 4);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&to_u32(labels.len(), "label count")?.to_le_bytes());
    for &y in labels {
        out.extend_from_slice(&to_u32(y, "label")?.to_le_bytes());
    }
    Ok(out)
}

/// Writes a raw `CPMX` matrix. `f32` output narrows every value.
pub fn write_matrix(
    path: &Path,
    rows: usize,
    cols: usize,
    values: &[f64],
    dtype: MatrixDtype,
) -> Result<()> {
    if values.len() != rows * cols {
        return Err(CpError::DimensionMismatch {
            expected: rows * cols,
            found: values.len(),
        });
    }
    write_atomic(path, &matrix_bytes(rows, cols, values, dtype)?)
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CpError::Format {
                path: self.path.to_path_buf(),
                message: format!("truncated file at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(CpError::Format {
                path: self.path.to_path_buf(),
                message: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Reads a `CPMX` matrix as `(rows, cols, row-major f64 values)`.
pub fn read_matrix(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    let bad = |message: String| CpError::Format {
        path: path.to_path_buf(),
        message,
    };
    if cur.take(4)? != MATRIX_MAGIC {
        return Err(bad("missing CPMX magic".into()));
    }
    let version = cur.u32()?;
    if version != MATRIX_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let dtype = cur.take(1)?[0];
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| bad("matrix size overflows".into()))?;
    let values = match dtype {
        0 => cur
            .take(count * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        1 => cur
            .take(count * 8)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        other => return Err(bad(format!("unknown dtype {other}"))),
    };
    cur.finish()?;
    Ok((rows, cols, values))
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4)? != LABEL_MAGIC {
        return Err(CpError::Format {
            path: path.to_path_buf(),
            message: "missing CPLB magic".into(),
        });
    }
    let count = cur.u32()? as usize;
    let labels = cur
        .take(count * 4)?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .collect();
    cur.finish()?;
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn smallest_csv() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x0,x1,label\n0.7,0.3,0\n").unwrap();
        let ds = load_dataset(&p, DataFormat::Csv, DomainTag::Probability, None).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.n_classes()), (1, 2, 2));
        assert_eq!(ds.row(0), &[0.7, 0.3]);
    }

    #[test]
    fn csv_errors_name_location() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x0,x1,label\n0.5,0.3,0\n").unwrap();
        let err = load_dataset(&p, DataFormat::Csv, DomainTag::Probability, None).unwrap_err();
        assert!(err.to_string().contains("row 0"), "{err}");

        fs::write(&p, "x0,y,label\n0.5,0.5,0\n").unwrap();
        let err = load_dataset(&p, DataFormat::Csv, DomainTag::Probability, None).unwrap_err();
        assert!(matches!(err, CpError::Parse { column: 1, .. }), "{err}");

        fs::write(&p, "x0,x1,label\n0.5,abc,0\n").unwrap();
        let err = load_dataset(&p, DataFormat::Csv, DomainTag::Logit, None).unwrap_err();
        assert!(
            matches!(
                err,
                CpError::Parse {
                    row: 2,
                    column: 1,
                    ..
                }
            ),
            "{err}"
        );

        fs::write(&p, "x0,x1,label\n0.5,0.5,-1\n").unwrap();
        assert!(load_dataset(&p, DataFormat::Csv, DomainTag::Logit, None).is_err());

        fs::write(&p, "x0,x1,label\n0.5,0.5,2\n").unwrap();
        assert!(load_dataset(&p, DataFormat::Csv, DomainTag::Logit, None).is_err());
    }

    #[test]
    fn binary_f64_and_f32() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.cpmx");
        let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.5];
        write_matrix(&p, 2, 3, &values, MatrixDtype::F64).unwrap();
        fs::write(labels_path(&p), label_bytes(&[0, 4]).unwrap()).unwrap();
        let ds = load_dataset(&p, DataFormat::Binary, DomainTag::Feature, None).unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.n_classes()), (2, 3, 5));
        assert_eq!(ds.points(), &values);

        write_matrix(&p, 2, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], MatrixDtype::F32).unwrap();
        let (_, _, v) = read_matrix(&p).unwrap();
        assert_eq!(v[0], 0.1f32 as f64);

        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(read_matrix(&p).is_err());
    }

    fn random_dataset(rows: Vec<Vec<f64>>, n_classes: usize) -> Dataset {
        let labels = (0..rows.len()).map(|i| i % n_classes).collect();
        Dataset::from_rows(&rows, labels, DomainTag::Feature, n_classes).unwrap()
    }

    proptest! {
        #[test]
        fn save_load_round_trip(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 4), 1..20)
        ) {
            let ds = random_dataset(rows, 3);
            let dir = tempdir().unwrap();
            let bin = dir.path().join("d.cpmx");
            save_dataset(&ds, &bin, DataFormat::Binary).unwrap();
            let back = load_dataset(&bin, DataFormat::Binary, DomainTag::Feature, Some(3)).unwrap();
            prop_assert_eq!(&back, &ds);

            let csv = dir.path().join("d.csv");
            save_dataset(&ds, &csv, DataFormat::Csv).unwrap();
            let back = load_dataset(&csv, DataFormat::Csv, DomainTag::Feature, Some(3)).unwrap();
            prop_assert_eq!(back.labels(), ds.labels());
            for (a, b) in back.points().iter().zip(ds.points()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
