//! Dataset ingestion (IDX), deterministic splits and synthetic datasets.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{PncError, Result};
use crate::model::Model;
use crate::oracle::enumerate_joint;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub source: String,
    /// Hex SHA-256 of the (decompressed) image bytes.
    pub checksum: String,
}

/// Images `[num_samples, height, width]` of raw values, optional labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub num_samples: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Option<Vec<u8>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        images: Vec<u8>,
        height: usize,
        width: usize,
        labels: Option<Vec<u8>>,
        source: &str,
    ) -> Result<Self> {
        let dims = height * width;
        let num_samples = if dims == 0 { 0 } else { images.len() / dims };
        if num_samples * dims != images.len() {
            return Err(PncError::Input(format!(
                "{} bytes do not tile {height}x{width} images",
                images.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != num_samples {
                return Err(PncError::Input(format!(
                    "{} labels for {num_samples} images",
                    l.len()
                )));
            }
        }
        let checksum = hex(&Sha256::digest(&images));
        Ok(Dataset {
            images,
            num_samples,
            height,
            width,
            labels,
            provenance: Provenance {
                source: source.to_string(),
                checksum,
            },
        })
    }

    pub fn dims(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.num_samples == 0
    }

    pub fn sample(&self, i: usize) -> &[u8] {
        let d = self.dims();
        &self.images[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i] as usize)
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.dims());
        for &i in indices {
            images.extend_from_slice(self.sample(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        let source = format!("{}[subset of {}]", self.provenance.source, indices.len());
        Dataset::new(images, self.height, self.width, labels, &source)
            .expect("subset of a valid dataset is valid")
    }

    /// Keeps only samples whose label is in `classes`, relabelled to their
    /// position in `classes`.
    pub fn filter_classes(&self, classes: &[u8]) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| PncError::Input("dataset has no labels".into()))?;
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&labels[i]))
            .collect();
        let mut out = self.subset(&idx);
        if let Some(l) = out.labels.as_mut() {
            for y in l.iter_mut() {
                *y = classes.iter().position(|c| c == y).unwrap() as u8;
            }
        }
        Ok(out)
    }

    pub fn max_label(&self) -> Option<u8> {
        self.labels.as_ref().and_then(|l| l.iter().copied().max())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| PncError::format(offset, format!("truncated header: missing {what}")))
}

/// Parses an IDX image file (`0x00000803`, three dimensions).
/// Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = read_be_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(PncError::format(
            0,
            format!("bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let n = read_be_u32(bytes, 4, "item count")? as usize;
    let rows = read_be_u32(bytes, 8, "row count")? as usize;
    let cols = read_be_u32(bytes, 12, "column count")? as usize;
    let need = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| PncError::format(4, "declared dimensions overflow"))?;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(PncError::format(
            bytes.len(),
            format!("truncated payload: {need} pixel bytes declared, {} present", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(PncError::format(16 + need, "trailing bytes after payload"));
    }
    Ok((n, rows, cols, payload.to_vec()))
}

/// Parses an IDX label file (`0x00000801`, one dimension).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = read_be_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(PncError::format(
            0,
            format!("bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let n = read_be_u32(bytes, 4, "item count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(PncError::format(
            bytes.len(),
            format!("truncated payload: {n} labels declared, {} present", payload.len()),
        ));
    }
    if payload.len() > n {
        return Err(PncError::format(8 + n, "trailing bytes after payload"));
    }
    Ok(payload.to_vec())
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = if rows * cols == 0 { 0 } else { pixels.len() / (rows * cols) };
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file, transparently gunzipping paths ending in `.gz`.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| PncError::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| PncError::format(0, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Loads an IDX image file and optional label file.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(images_path)?)?;
    let labels = match labels_path {
        Some(p) => {
            let labels = parse_idx_labels(&read_maybe_gz(p)?)?;
            if labels.len() != n {
                return Err(PncError::format(
                    4,
                    format!("label count {} does not match image count {n}", labels.len()),
                ));
            }
            Some(labels)
        }
        None => None,
    };
    Dataset::new(pixels, rows, cols, labels, &images_path.display().to_string())
}

/// Training-set size `floor(n * (1 - val_fraction))`.
pub fn train_size(n: usize, val_fraction: f64) -> usize {
    // the epsilon absorbs representation error such as 10 * 0.9 < 9
    ((n as f64) * (1.0 - val_fraction) + 1e-9).floor() as usize
}

/// Seeded permutation split into `(train, val)` index lists.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(PncError::Input(format!(
            "val_fraction must lie in (0, 1), got {val_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = idx.split_off(train_size(n, val_fraction));
    Ok((idx, val))
}

pub fn split(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(dataset.len(), val_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&val)))
}

/// Exact sampling from a small model by enumerating its joint table.
pub fn synthesize(model: &Model, num_samples: usize, seed: u64) -> Result<Dataset> {
    let n = model.num_variables();
    if n > 16 {
        return Err(PncError::Unsupported(format!(
            "synthesize supports at most 16 variables, model has {n}"
        )));
    }
    let table = enumerate_joint(model, 0)?;
    let mut cdf = Vec::with_capacity(table.len());
    let mut acc = 0.0;
    for lp in &table.log_mass {
        acc += lp.exp();
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(num_samples * n);
    for _ in 0..num_samples {
        let u = rng.gen::<f64>() * acc;
        let i = cdf.partition_point(|&c| c <= u).min(table.len() - 1);
        images.extend_from_slice(&table.assignment(i));
    }
    let grid = model.structure.leaf_grid();
    Dataset::new(images, grid.rows, grid.cols, None, "synthesized")
}

/// Uniformly random assignments valid for `model` (labels drawn uniformly
/// when it has several classes). Used for gradient checks and smoke tests.
pub fn random_assignments(model: &Model, count: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.num_variables();
    let upper = match model.options.leaf_mode {
        crate::model::LeafMode::Categorical => model.options.num_categories,
        crate::model::LeafMode::TwoInput => 256,
    };
    let images = (0..count * n).map(|_| rng.gen_range(0..upper) as u8).collect();
    let k = model.num_classes();
    let labels = (k > 1).then(|| (0..count).map(|_| rng.gen_range(0..k) as u8).collect());
    let grid = model.structure.leaf_grid();
    Dataset::new(images, grid.rows, grid.cols, labels, "random")
        .expect("generated dataset is well-formed")
}

/// Stroke templates for digit-like glyphs in the unit square (x right, y down).
fn digit_strokes(digit: u8) -> Vec<Vec<(f64, f64)>> {
    let ring = |cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64| {
        (0..=24)
            .map(|i| {
                let t = from + (to - from) * i as f64 / 24.0;
                (cx + rx * t.cos(), cy + ry * t.sin())
            })
            .collect::<Vec<_>>()
    };
    use std::f64::consts::PI;
    match digit % 10 {
        0 => vec![ring(0.5, 0.5, 0.22, 0.34, 0.0, 2.0 * PI)],
        1 => vec![vec![(0.42, 0.25), (0.52, 0.15), (0.52, 0.85)]],
        2 => vec![
            ring(0.5, 0.35, 0.2, 0.18, PI, 2.2 * PI),
            vec![(0.68, 0.45), (0.3, 0.85), (0.72, 0.85)],
        ],
        3 => vec![
            ring(0.48, 0.33, 0.2, 0.17, -0.8 * PI, 0.5 * PI),
            ring(0.48, 0.67, 0.22, 0.18, -0.5 * PI, 0.8 * PI),
        ],
        4 => vec![
            vec![(0.6, 0.15), (0.28, 0.6), (0.75, 0.6)],
            vec![(0.6, 0.3), (0.6, 0.85)],
        ],
        5 => vec![
            vec![(0.7, 0.15), (0.35, 0.15), (0.32, 0.45)],
            ring(0.48, 0.63, 0.21, 0.2, -0.7 * PI, 0.8 * PI),
        ],
        6 => vec![
            vec![(0.62, 0.15), (0.36, 0.5)],
            ring(0.5, 0.65, 0.18, 0.18, 0.0, 2.0 * PI),
        ],
        7 => vec![vec![(0.28, 0.17), (0.72, 0.17), (0.42, 0.85)]],
        8 => vec![
            ring(0.5, 0.32, 0.17, 0.16, 0.0, 2.0 * PI),
            ring(0.5, 0.67, 0.2, 0.18, 0.0, 2.0 * PI),
        ],
        _ => vec![
            ring(0.5, 0.35, 0.18, 0.18, 0.0, 2.0 * PI),
            vec![(0.68, 0.38), (0.58, 0.85)],
        ],
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Labelled digit-like grayscale glyphs with random scale, shift, slant and
/// stroke width; a stand-in for handwritten-digit data when none is on disk.
/// `per_class` images are drawn for each label in `classes`, interleaved.
pub fn synthetic_digits(classes: &[u8], per_class: usize, size: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(classes.len() * per_class * size * size);
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    for _ in 0..per_class {
        for &digit in classes {
            let strokes = digit_strokes(digit);
            let scale = rng.gen_range(0.8..1.1);
            let slant = rng.gen_range(-0.25..0.25);
            let (sx, sy) = (rng.gen_range(-0.08..0.08), rng.gen_range(-0.06..0.06));
            let width = rng.gen_range(0.045..0.085);
            let transform = |(x, y): (f64, f64)| {
                let (x, y) = ((x - 0.5) * scale, (y - 0.5) * scale);
                (0.5 + x - slant * y + sx, 0.5 + y + sy)
            };
            let polys: Vec<Vec<(f64, f64)>> = strokes
                .iter()
                .map(|s| s.iter().copied().map(transform).collect())
                .collect();
            for r in 0..size {
                for c in 0..size {
                    let p = ((c as f64 + 0.5) / size as f64, (r as f64 + 0.5) / size as f64);
                    let d = polys
                        .iter()
                        .flat_map(|poly| poly.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                        .fold(f64::INFINITY, f64::min);
                    let soft = 1.0 / size as f64;
                    let ink = ((width - d) / soft + 0.5).clamp(0.0, 1.0);
                    images.push((ink * 255.0).round() as u8);
                }
            }
            labels.push(digit);
        }
    }
    Dataset::new(images, size, size, Some(labels), "synthetic-digits")
        .expect("generated dataset is well-formed")
}
