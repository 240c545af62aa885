//! IDX dataset loading and the two input encodings.
//!
//! Diffractive inputs: bilinear upscale (pixel-centre sampling) to half the grid, zero
//! padding to the full grid, amplitude encoding with zero phase. Mesh inputs: unnormalized
//! 2D DFT of the image, shifted so that DC sits at index `(14, 14)`, and the central
//! `g×g` block (DC at block index `(g/2, g/2)`) flattened row-major.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::cgraph::{fft, CTensor, C64};
use crate::error::{Error, Result};

/// Environment variable naming the directory that holds the IDX files.
pub const DATA_DIR_ENV: &str = "PNN_DATA_DIR";

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

/// Decoded images (row-major bytes) and labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawDataset {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pixel values of image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Vec<f64> {
        self.images[i].iter().map(|&b| b as f64 / 255.0).collect()
    }

    /// First `n` samples (or all, if fewer).
    pub fn truncate(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self.labels.truncate(n);
        self
    }
}

/// Network input with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSample {
    pub input: CTensor,
    pub label: usize,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            reason: format!("file ends inside the header ({} bytes)", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("magic number {magic}, expected {expected}"),
        });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, needed: usize, path: &Path) -> Result<()> {
    if bytes.len() < header + needed {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("truncated payload: {} bytes after the header, expected {needed}", bytes.len() - header),
        });
    }
    Ok(())
}

/// Reads an image/label IDX pair (gzip-compressed or raw).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    let ib = read_all(images_path)?;
    check_magic(&ib, IMAGES_MAGIC, images_path)?;
    let count = be_u32(&ib, 4, images_path)? as usize;
    let rows = be_u32(&ib, 8, images_path)? as usize;
    let cols = be_u32(&ib, 12, images_path)? as usize;
    let needed = count.checked_mul(rows).and_then(|v| v.checked_mul(cols)).ok_or_else(|| Error::Format {
        path: images_path.to_path_buf(),
        offset: 4,
        reason: format!("header dimensions {count}x{rows}x{cols} overflow"),
    })?;
    check_payload(&ib, 16, needed, images_path)?;

    let lb = read_all(labels_path)?;
    check_magic(&lb, LABELS_MAGIC, labels_path)?;
    let lcount = be_u32(&lb, 4, labels_path)? as usize;
    check_payload(&lb, 8, lcount, labels_path)?;
    if lcount != count {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            reason: format!("{lcount} labels for {count} images"),
        });
    }
    let labels = lb[8..8 + count].to_vec();
    if let Some(i) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: (8 + i) as u64,
            reason: format!("label {} outside 0..=9", labels[i]),
        });
    }
    let px = rows * cols;
    let images = (0..count).map(|i| ib[16 + i * px..16 + (i + 1) * px].to_vec()).collect();
    Ok(RawDataset { rows, cols, images, labels })
}

/// Directory from [`DATA_DIR_ENV`], if set.
pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

/// Standard MNIST file names inside `dir` for the train or test split.
pub fn split_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    let pick = |stem: &str| {
        let gz = dir.join(format!("{prefix}-{stem}.gz"));
        if gz.exists() {
            gz
        } else {
            dir.join(format!("{prefix}-{stem}"))
        }
    };
    (pick("images-idx3-ubyte"), pick("labels-idx1-ubyte"))
}

/// Bilinear resampling of an `h×w` image to `oh×ow` with pixel-centre alignment
/// (source coordinate `(i + 0.5)·h/oh − 0.5`, clamped to the image).
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |i: usize, n: usize, on: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * n as f64 / on as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n - 1);
        (x0, x1, x - x0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        let (r0, r1, fy) = coord(r, h, oh);
        for c in 0..ow {
            let (c0, c1, fx) = coord(c, w, ow);
            let top = src[r0 * w + c0] * (1.0 - fx) + src[r0 * w + c1] * fx;
            let bot = src[r1 * w + c0] * (1.0 - fx) + src[r1 * w + c1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Amplitude-encoded `grid×grid` field: image upscaled to `grid/2`, centred, zero elsewhere.
pub fn preprocess_dpnn(image: &[f64], rows: usize, cols: usize, grid: usize) -> Result<CTensor> {
    if grid < 2 || grid % 2 != 0 {
        return Err(Error::InvalidArgument(format!("target grid must be even, got {grid}")));
    }
    if image.len() != rows * cols {
        return Err(Error::shape("preprocess_dpnn", &[image.len()], &[rows, cols]));
    }
    let a = grid / 2;
    let small = resize_bilinear(image, rows, cols, a, a);
    let off = (grid - a) / 2;
    let mut field = vec![C64::new(0.0, 0.0); grid * grid];
    for r in 0..a {
        for c in 0..a {
            field[(r + off) * grid + c + off] = C64::new(small[r * a + c], 0.0);
        }
    }
    CTensor::new(vec![grid, grid], field)
}

/// Central `g×g` block of the shifted, unnormalized DFT, flattened row-major.
pub fn preprocess_mpnn(image: &[f64], rows: usize, cols: usize, g: usize, unit_power: bool) -> Result<CTensor> {
    if image.len() != rows * cols {
        return Err(Error::shape("preprocess_mpnn", &[image.len()], &[rows, cols]));
    }
    if g == 0 || g > rows || g > cols {
        return Err(Error::InvalidArgument(format!("coefficient grid {g} does not fit a {rows}x{cols} image")));
    }
    let mut spec: Vec<C64> = image.iter().map(|&v| C64::new(v, 0.0)).collect();
    fft::fft2_inplace(&mut spec, rows, cols);
    let shifted = fft::fftshift(&spec, rows, cols);
    let (r0, c0) = (rows / 2 - g / 2, cols / 2 - g / 2);
    let mut out = Vec::with_capacity(g * g);
    for r in 0..g {
        out.extend_from_slice(&shifted[(r0 + r) * cols + c0..(r0 + r) * cols + c0 + g]);
    }
    if unit_power {
        let p: f64 = out.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if p > 0.0 {
            out.iter_mut().for_each(|z| *z /= p);
        }
    }
    CTensor::new(vec![g * g], out)
}

/// Encodes every sample of `raw` for a diffractive network on a `grid×grid` field.
pub fn encode_dpnn(raw: &RawDataset, grid: usize) -> Result<Vec<EncodedSample>> {
    (0..raw.len())
        .map(|i| {
            Ok(EncodedSample {
                input: preprocess_dpnn(&raw.image(i), raw.rows, raw.cols, grid)?,
                label: raw.labels[i] as usize,
            })
        })
        .collect()
}

/// Encodes every sample of `raw` for a mesh network with `g×g` Fourier coefficients.
pub fn encode_mpnn(raw: &RawDataset, g: usize, unit_power: bool) -> Result<Vec<EncodedSample>> {
    (0..raw.len())
        .map(|i| {
            Ok(EncodedSample {
                input: preprocess_mpnn(&raw.image(i), raw.rows, raw.cols, g, unit_power)?,
                label: raw.labels[i] as usize,
            })
        })
        .collect()
}
