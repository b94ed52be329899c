//! Datasets and MNIST-style file ingestion (IDX format plus a CSV fallback).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A supervised dataset: inputs paired with either class labels or target
/// vectors (exactly one of the two).
#[derive(Clone, Debug)]
pub struct Dataset {
    inputs: Vec<Array1<f64>>,
    labels: Option<Vec<usize>>,
    targets: Option<Vec<Array1<f64>>>,
}

impl Dataset {
    pub fn with_labels(inputs: Vec<Array1<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Validation("dataset must be non-empty".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Dataset {
            inputs,
            labels: Some(labels),
            targets: None,
        })
    }

    pub fn with_targets(inputs: Vec<Array1<f64>>, targets: Vec<Array1<f64>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Validation("dataset must be non-empty".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Validation(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Dataset {
            inputs,
            labels: None,
            targets: Some(targets),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Array1<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn targets(&self) -> Option<&[Array1<f64>]> {
        self.targets.as_deref()
    }

    /// Copy out the selected rows as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Validation("subset must be non-empty".into()));
        }
        let inputs = indices.iter().map(|&i| self.inputs[i].clone()).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        let targets = self
            .targets
            .as_ref()
            .map(|t| indices.iter().map(|&i| t[i].clone()).collect());
        Ok(Dataset {
            inputs,
            labels,
            targets,
        })
    }

    /// Stack the requested rows into a (len × dim) matrix.
    pub fn input_matrix(&self, indices: &[usize]) -> Array2<f64> {
        let dim = self.input_dim();
        let mut m = Array2::zeros((indices.len(), dim));
        for (row, &i) in indices.iter().enumerate() {
            m.row_mut(row).assign(&self.inputs[i]);
        }
        m
    }
}

fn read_u32_be(reader: &mut impl Read, path: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|e| Error::parse(path, format!("truncated header: {e}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an MNIST-style IDX image/label pair. Pixels are scaled to `[0, 1]`
/// and each image is flattened row-major.
pub fn load_mnist(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref().display().to_string();
    let labels_path = labels_path.as_ref().display().to_string();

    let mut r = BufReader::new(File::open(&images_path).map_err(|e| Error::io(&images_path, e))?);
    let magic = read_u32_be(&mut r, &images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(
            &images_path,
            format!("bad magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = read_u32_be(&mut r, &images_path)? as usize;
    let rows = read_u32_be(&mut r, &images_path)? as usize;
    let cols = read_u32_be(&mut r, &images_path)? as usize;
    let pixels = rows * cols;
    let mut raw = vec![0u8; count * pixels];
    r.read_exact(&mut raw)
        .map_err(|e| Error::parse(&images_path, format!("truncated pixel data: {e}")))?;
    let inputs: Vec<Array1<f64>> = raw
        .chunks_exact(pixels.max(1))
        .map(|chunk| Array1::from_iter(chunk.iter().map(|&p| f64::from(p) / 255.0)))
        .collect();

    let mut r = BufReader::new(File::open(&labels_path).map_err(|e| Error::io(&labels_path, e))?);
    let magic = read_u32_be(&mut r, &labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(
            &labels_path,
            format!("bad magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let label_count = read_u32_be(&mut r, &labels_path)? as usize;
    if label_count != count {
        return Err(Error::parse(
            &labels_path,
            format!("{label_count} labels for {count} images"),
        ));
    }
    let mut labels_raw = vec![0u8; label_count];
    r.read_exact(&mut labels_raw)
        .map_err(|e| Error::parse(&labels_path, format!("truncated label data: {e}")))?;

    Dataset::with_labels(inputs, labels_raw.into_iter().map(usize::from).collect())
}

/// CSV fallback: one sample per line, `label,pixel0,...,pixelN`, pixels in
/// `0..=255`. A header line is skipped if its first field is not numeric.
pub fn load_mnist_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref().display().to_string();
    let reader = BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?);
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let first = fields.next().unwrap_or("").trim();
        let label: usize = match first.parse() {
            Ok(l) => l,
            Err(_) if lineno == 0 => continue, // header
            Err(e) => {
                return Err(Error::parse(
                    &path,
                    format!("line {}: bad label {first:?}: {e}", lineno + 1),
                ))
            }
        };
        let pixels = fields
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    Error::parse(&path, format!("line {}: bad pixel {f:?}: {e}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(prev) = inputs.first().map(|v: &Array1<f64>| v.len()) {
            if pixels.len() != prev {
                return Err(Error::parse(
                    &path,
                    format!("line {}: {} pixels, expected {prev}", lineno + 1, pixels.len()),
                ));
            }
        }
        inputs.push(Array1::from_iter(pixels.into_iter().map(|p| p / 255.0)));
        labels.push(label);
    }
    Dataset::with_labels(inputs, labels)
}

/// Write images (values in `[0, 1]`, flattened `rows*cols`) as an IDX file.
/// Used to produce desk-scale fixtures compatible with [`load_mnist`].
pub fn write_idx_images(
    path: impl AsRef<Path>,
    images: &[Array1<f64>],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let path = path.as_ref().display().to_string();
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::Validation(format!(
                "image has {} pixels, expected {}",
                img.len(),
                rows * cols
            )));
        }
        out.extend(img.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    w.write_all(&out).map_err(|e| Error::io(&path, e))
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref().display().to_string();
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        if l > u8::MAX as usize {
            return Err(Error::Validation(format!("label {l} does not fit in a byte")));
        }
        out.push(l as u8);
    }
    w.write_all(&out).map_err(|e| Error::io(&path, e))
}
