//! Dataset ingestion: MNIST IDX files, the CIFAR-10 binary format, and a
//! deterministic synthetic digit generator that writes real IDX files for
//! machines without the originals.

use crate::config::DatasetKind;
use crate::tensor::Tensor4;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Read;
use std::path::Path;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// A loaded split: normalized images plus labels in [0, 10).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Vec<f32>,
    pub labels: Vec<u8>,
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dataset {
    pub fn sample(&self, i: usize) -> &[f32] {
        let sz = self.c * self.h * self.w;
        &self.images[i * sz..(i + 1) * sz]
    }
}

fn read_be_u32(buf: &[u8], offset: usize) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Dataset(format!("truncated file at byte offset {offset}")))
}

/// Parse an IDX image file (big-endian magic 0x00000803).
pub fn parse_idx_images(buf: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_be_u32(buf, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Dataset(format!(
            "bad image magic 0x{magic:08x} at byte offset 0 (expected 0x{IDX_IMAGES_MAGIC:08x})"
        )));
    }
    let n = read_be_u32(buf, 4)? as usize;
    let h = read_be_u32(buf, 8)? as usize;
    let w = read_be_u32(buf, 12)? as usize;
    let expect = 16 + n * h * w;
    if buf.len() != expect {
        return Err(Error::Dataset(format!(
            "image payload is {} bytes, expected {} (truncation at byte offset {})",
            buf.len(),
            expect,
            buf.len().min(expect)
        )));
    }
    Ok((n, h, w, &buf[16..]))
}

/// Parse an IDX label file (big-endian magic 0x00000801).
pub fn parse_idx_labels(buf: &[u8]) -> Result<&[u8]> {
    let magic = read_be_u32(buf, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Dataset(format!(
            "bad label magic 0x{magic:08x} at byte offset 0 (expected 0x{IDX_LABELS_MAGIC:08x})"
        )));
    }
    let n = read_be_u32(buf, 4)? as usize;
    if buf.len() != 8 + n {
        return Err(Error::Dataset(format!(
            "label payload is {} bytes, expected {} (truncation at byte offset {})",
            buf.len(),
            8 + n,
            buf.len().min(8 + n)
        )));
    }
    Ok(&buf[8..])
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

fn load_idx_pair(
    images_path: &Path,
    labels_path: &Path,
    mean: f32,
    std: f32,
) -> Result<Dataset> {
    let img_buf = read_file(images_path)?;
    let (n, h, w, pixels) = parse_idx_images(&img_buf)?;
    let lab_buf = read_file(labels_path)?;
    let labels = parse_idx_labels(&lab_buf)?;
    if labels.len() != n {
        return Err(Error::Dataset(format!("{n} images but {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Dataset(format!("label {bad} outside [0, 9]")));
    }
    let images = pixels.iter().map(|&p| (p as f32 / 255.0 - mean) / std).collect();
    Ok(Dataset { images, labels: labels.to_vec(), n, c: 1, h, w })
}

/// MNIST-style loading from the standard four IDX files.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx_pair(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        0.1307,
        0.3081,
    )?;
    let test = load_idx_pair(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        0.1307,
        0.3081,
    )?;
    Ok((train, test))
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
const CIFAR_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

/// Parse one CIFAR-10 binary batch file of 3073-byte records.
pub fn parse_cifar_batch(buf: &[u8]) -> Result<Vec<(u8, &[u8])>> {
    if buf.len() % CIFAR_RECORD != 0 {
        return Err(Error::Dataset(format!(
            "file size {} is not a multiple of the {CIFAR_RECORD}-byte record (offset {})",
            buf.len(),
            buf.len() - buf.len() % CIFAR_RECORD
        )));
    }
    let mut records = Vec::with_capacity(buf.len() / CIFAR_RECORD);
    for (i, rec) in buf.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(Error::Dataset(format!(
                "label {label} outside [0, 9] at record {i} (byte offset {})",
                i * CIFAR_RECORD
            )));
        }
        records.push((label, &rec[1..]));
    }
    Ok(records)
}

fn cifar_records_to_dataset(records: &[(u8, &[u8])]) -> Dataset {
    let n = records.len();
    let mut images = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (label, pixels) in records {
        labels.push(*label);
        for ch in 0..3 {
            for px in &pixels[ch * 1024..(ch + 1) * 1024] {
                images.push((*px as f32 / 255.0 - CIFAR_MEAN[ch]) / CIFAR_STD[ch]);
            }
        }
    }
    Dataset { images, labels, n, c: 3, h: 32, w: 32 }
}

/// CIFAR-10 with a stratified `fraction` of the training split (first
/// occurrences per class, deterministic) and the full test split.
pub fn load_cifar10_subset(dir: &Path, fraction: f64) -> Result<(Dataset, Dataset)> {
    let mut train_records = Vec::new();
    let mut owned_bufs = Vec::new();
    for i in 1..=5 {
        owned_bufs.push(read_file(&dir.join(format!("data_batch_{i}.bin")))?);
    }
    for buf in &owned_bufs {
        train_records.extend(parse_cifar_batch(buf)?);
    }
    let per_class = ((train_records.len() as f64 * fraction) / 10.0).round() as usize;
    let mut counts = [0usize; 10];
    let subset: Vec<(u8, &[u8])> = train_records
        .into_iter()
        .filter(|(label, _)| {
            let c = &mut counts[*label as usize];
            if *c < per_class {
                *c += 1;
                true
            } else {
                false
            }
        })
        .collect();
    let train = cifar_records_to_dataset(&subset);
    let test_buf = read_file(&dir.join("test_batch.bin"))?;
    let test = cifar_records_to_dataset(&parse_cifar_batch(&test_buf)?);
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// synthetic digits

const GLYPHS: [[&str; 7]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11110", "00001", "00001", "01110", "00001", "00001", "11110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

fn render_digit(label: u8, rng: &mut ChaCha8Rng, out: &mut [u8]) {
    debug_assert_eq!(out.len(), 28 * 28);
    out.fill(0);
    let glyph = &GLYPHS[label as usize];
    // scale, slant, stroke dropout, occlusion, and noise keep the task from
    // being solvable by template matching
    let scale = if rng.gen_bool(0.5) { 2usize } else { 3 };
    let gw = 5 * scale;
    let gh = 7 * scale;
    let slant: f32 = rng.gen_range(-0.35..0.35);
    let ox = rng.gen_range(0..=(28 - gw)) as isize;
    let oy = rng.gen_range(0..=(28 - gh));
    let intensity = rng.gen_range(100..=255) as f32;
    let dropout = rng.gen_range(0.0..0.18);
    for (gy, row) in glyph.iter().enumerate() {
        for (gx, bit) in row.bytes().enumerate() {
            if bit != b'1' {
                continue;
            }
            for sy in 0..scale {
                for sx in 0..scale {
                    if rng.gen_bool(dropout as f64) {
                        continue;
                    }
                    let y = oy + gy * scale + sy;
                    let shear = ((y as f32 - oy as f32) * slant).round() as isize;
                    let x = ox + (gx * scale + sx) as isize + shear;
                    if !(0..28).contains(&x) {
                        continue;
                    }
                    let jitter = rng.gen_range(0.7..1.0);
                    out[y * 28 + x as usize] = (intensity * jitter) as u8;
                }
            }
        }
    }
    if rng.gen_bool(0.3) {
        // occluding patch
        let px = rng.gen_range(0..23usize);
        let py = rng.gen_range(0..23usize);
        for y in py..py + 5 {
            for x in px..px + 5 {
                out[y * 28 + x] = 0;
            }
        }
    }
    for px in out.iter_mut() {
        let noise = rng.gen_range(0..45) as u16;
        *px = (*px as u16 + noise).min(255) as u8;
    }
}

fn write_idx_images(path: &Path, n: usize, pixels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + pixels.len());
    buf.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(n as u32).to_be_bytes());
    buf.extend_from_slice(&28u32.to_be_bytes());
    buf.extend_from_slice(&28u32.to_be_bytes());
    buf.extend_from_slice(pixels);
    std::fs::write(path, buf)?;
    Ok(())
}

fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    std::fs::write(path, buf)?;
    Ok(())
}

/// Write a deterministic synthetic digit dataset in IDX format into `dir`
/// (train/test file names match MNIST). Existing files are left alone.
pub fn generate_synth_mnist(dir: &Path, train_n: usize, test_n: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let splits =
        [("train", train_n, seed), ("t10k", test_n, seed.wrapping_add(0x9E37_79B9_7F4A_7C15))];
    for (prefix, n, split_seed) in splits {
        let images_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
        let labels_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
        if images_path.exists() && labels_path.exists() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(split_seed);
        let mut pixels = vec![0u8; n * 784];
        let mut labels = vec![0u8; n];
        for i in 0..n {
            let label = rng.gen_range(0..10u8);
            labels[i] = label;
            render_digit(label, &mut rng, &mut pixels[i * 784..(i + 1) * 784]);
        }
        write_idx_images(&images_path, n, &pixels)?;
        write_idx_labels(&labels_path, &labels)?;
    }
    Ok(())
}

/// Load the configured dataset, generating the synthetic variant on demand.
pub fn load_dataset(kind: DatasetKind, data_dir: &Path) -> Result<(Dataset, Dataset)> {
    match kind {
        DatasetKind::Mnist => load_mnist(data_dir),
        DatasetKind::MnistSynth => {
            let dir = data_dir.join("mnist-synth");
            generate_synth_mnist(&dir, 60_000, 10_000, 0xD161_7)?;
            load_mnist(&dir)
        }
        DatasetKind::Cifar10Subset => load_cifar10_subset(data_dir, 0.1),
    }
}

// ---------------------------------------------------------------------------
// batching

/// Gather samples into an NCHW batch, optionally with train-time
/// augmentation (4-pixel pad random crop + horizontal flip, CIFAR only).
pub fn assemble_batch(
    data: &Dataset,
    indices: &[usize],
    augment: Option<&mut ChaCha8Rng>,
) -> (Tensor4<f32>, Vec<u8>) {
    let mut out = Tensor4::zeros(indices.len(), data.c, data.h, data.w);
    let mut labels = Vec::with_capacity(indices.len());
    match augment {
        None => {
            for (bi, &i) in indices.iter().enumerate() {
                out.sample_mut(bi).copy_from_slice(data.sample(i));
                labels.push(data.labels[i]);
            }
        }
        Some(rng) => {
            for (bi, &i) in indices.iter().enumerate() {
                let dy = rng.gen_range(-4i32..=4);
                let dx = rng.gen_range(-4i32..=4);
                let flip = rng.gen_bool(0.5);
                let src = data.sample(i);
                let dst = out.sample_mut(bi);
                let (h, w) = (data.h as i32, data.w as i32);
                for c in 0..data.c {
                    for y in 0..h {
                        for x in 0..w {
                            let sy = y + dy;
                            let sx = if flip { w - 1 - x + dx } else { x + dx };
                            let v = if sy < 0 || sy >= h || sx < 0 || sx >= w {
                                0.0
                            } else {
                                src[(c * h as usize + sy as usize) * w as usize + sx as usize]
                            };
                            dst[(c * h as usize + y as usize) * w as usize + x as usize] = v;
                        }
                    }
                }
                labels.push(data.labels[i]);
            }
        }
    }
    (out, labels)
}
