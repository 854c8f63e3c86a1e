//! MNIST (IDX) and CIFAR binary loaders, resizing, splitting and batching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::Batch;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

/// Images with pixel values in `[0, 1]`, stored channel-major per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(rows.len() * self.dim());
        for &r in rows {
            images.extend_from_slice(self.row(r));
        }
        Dataset {
            images,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            images: Vec::new(),
            labels: Vec::new(),
            class_count: self.class_count,
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    pub fn to_batch(&self) -> Result<Batch> {
        Batch::new(self.images.clone(), self.labels.clone(), self.dim())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Length {
            path: path.to_path_buf(),
            msg: "file ends inside the header".into(),
        })
}

fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected image magic {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Length {
            path: path.to_path_buf(),
            msg: format!("header promises {expected} bytes, file has {}", bytes.len()),
        });
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("expected label magic {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        });
    }
    let n = be_u32(bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::Length {
            path: path.to_path_buf(),
            msg: format!("header promises {} bytes, file has {}", 8 + n, bytes.len()),
        });
    }
    Ok(bytes[8..].to_vec())
}

/// Loads an IDX image file (magic `0x00000803`) and its label file (magic
/// `0x00000801`). Pixels are divided by 255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (n, rows, cols, pixels) = parse_idx_images(&read_file(ip)?, ip)?;
    let labels = parse_idx_labels(&read_file(lp)?, lp)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{} has {n} images but {} has {} labels",
            ip.display(),
            lp.display(),
            labels.len()
        )));
    }
    let class_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Ok(Dataset {
        name: "mnist".into(),
        images: pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
        labels: labels.into_iter().map(usize::from).collect(),
        class_count,
        channels: 1,
        height: rows,
        width: cols,
    })
}

/// Writes byte images and labels as an IDX pair.
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    pixels: &[u8],
    labels: &[u8],
    rows: usize,
    cols: usize,
) -> Result<()> {
    let n = labels.len();
    if pixels.len() != n * rows * cols {
        return Err(Error::Shape {
            expected: n * rows * cols,
            actual: pixels.len(),
        });
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    let ip = images_path.as_ref();
    let lp = labels_path.as_ref();
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    /// One label byte per record.
    Cifar10,
    /// Coarse and fine label bytes; the fine label is kept.
    Cifar100,
}

impl CifarVariant {
    fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Concatenates CIFAR binary batch files. Each record is the label byte(s)
/// followed by 1024 red, 1024 green and 1024 blue bytes.
pub fn load_cifar_binary(paths: &[PathBuf], variant: CifarVariant) -> Result<Dataset> {
    let record = variant.label_bytes() + CIFAR_PIXELS;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_file(path)?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Format {
                path: path.clone(),
                msg: format!("length {} is not a positive multiple of the {record}-byte record", bytes.len()),
            });
        }
        for rec in bytes.chunks_exact(record) {
            let label = rec[variant.label_bytes() - 1] as usize;
            if label >= variant.classes() {
                return Err(Error::Format {
                    path: path.clone(),
                    msg: format!("label {label} out of range"),
                });
            }
            labels.push(label);
            images.extend(rec[variant.label_bytes()..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    Ok(Dataset {
        name: match variant {
            CifarVariant::Cifar10 => "cifar10".into(),
            CifarVariant::Cifar100 => "cifar100".into(),
        },
        images,
        labels,
        class_count: variant.classes(),
        channels: 3,
        height: 32,
        width: 32,
    })
}

/// Averages the channels of every pixel.
pub fn to_grayscale(ds: &Dataset) -> Dataset {
    if ds.channels == 1 {
        return ds.clone();
    }
    let plane = ds.height * ds.width;
    let mut images = Vec::with_capacity(ds.len() * plane);
    for i in 0..ds.len() {
        let row = ds.row(i);
        for k in 0..plane {
            let sum: f64 = (0..ds.channels).map(|c| row[c * plane + k]).sum();
            images.push(sum / ds.channels as f64);
        }
    }
    Dataset {
        images,
        labels: ds.labels.clone(),
        channels: 1,
        ..ds.empty_like()
    }
}

/// Row `i` holds the fraction of output cell `i` covered by each input cell,
/// so every row sums to one.
fn area_weights(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = from as f64 / to as f64;
    (0..to)
        .map(|i| {
            let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(from);
            (first..last)
                .filter_map(|k| {
                    let overlap = hi.min(k as f64 + 1.0) - lo.max(k as f64);
                    (overlap > 0.0).then_some((k, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-averaged resize of every channel to `side x side`.
pub fn downsample(ds: &Dataset, side: usize) -> Result<Dataset> {
    if ds.height != ds.width {
        return Err(Error::Shape {
            expected: ds.height,
            actual: ds.width,
        });
    }
    if side == 0 || side > ds.height {
        return Err(Error::InvalidParams(format!(
            "cannot downsample {0}x{0} images to {side}x{side}",
            ds.height
        )));
    }
    let n = ds.height;
    let weights = area_weights(n, side);
    let plane_in = n * n;
    let mut images = Vec::with_capacity(ds.len() * ds.channels * side * side);
    let mut tmp = vec![0.0; side * n];
    for i in 0..ds.len() {
        let row = ds.row(i);
        for c in 0..ds.channels {
            let img = &row[c * plane_in..(c + 1) * plane_in];
            // Resize columns first, then rows.
            for r in 0..n {
                for (j, ws) in weights.iter().enumerate() {
                    tmp[r * side + j] = ws.iter().map(|&(k, a)| a * img[r * n + k]).sum();
                }
            }
            for ws in &weights {
                for j in 0..side {
                    images.push(ws.iter().map(|&(k, a)| a * tmp[k * side + j]).sum());
                }
            }
        }
    }
    Ok(Dataset {
        images,
        labels: ds.labels.clone(),
        height: side,
        width: side,
        ..ds.empty_like()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_count: usize,
    pub validation_count: usize,
    pub seed: u64,
}

/// Disjoint train and validation parts drawn from one seeded shuffle.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
}

pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<Split> {
    let needed = spec.train_count + spec.validation_count;
    if needed > ds.len() {
        return Err(Error::Consistency(format!(
            "requested {} train + {} validation examples but only {} exist",
            spec.train_count,
            spec.validation_count,
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok(Split {
        train: ds.subset(&order[..spec.train_count]),
        validation: ds.subset(&order[spec.train_count..needed]),
    })
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mini-batch index lists for one epoch; a short final batch is kept.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Seeded mini-batch stream over a training set, reshuffled each epoch.
#[derive(Debug, Clone)]
pub struct BatchStream {
    data: Batch,
    batch_size: usize,
    seed: u64,
}

impl BatchStream {
    pub fn new(data: Batch, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidParams("batch size must be positive".into()));
        }
        Ok(Self { data, batch_size, seed })
    }

    pub fn data(&self) -> &Batch {
        &self.data
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Batch> + '_ {
        epoch_batches(self.data.len(), self.batch_size, self.seed, epoch)
            .into_iter()
            .map(move |rows| self.data.gather(&rows))
    }
}

/// Splits `ds` and wraps the training part in a [`BatchStream`].
pub fn split_and_batch(ds: &Dataset, spec: SplitSpec, batch_size: usize) -> Result<(BatchStream, Dataset)> {
    let parts = split(ds, spec)?;
    let stream = BatchStream::new(parts.train.to_batch()?, batch_size, spec.seed)?;
    Ok((stream, parts.validation))
}
