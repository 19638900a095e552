use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, DetRng};
use crate::tensor::Tensor;

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Images `[N, C, H, W]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Gathers samples `idx` into one batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let images = self.images.select0(idx).expect("indices come from 0..len");
        (images, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Per-channel mean and standard deviation of images scaled to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    fn of(pixels: &[u8]) -> Self {
        let plane = 32 * 32;
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for rec in pixels.chunks(3 * plane) {
            for c in 0..3 {
                for &p in &rec[c * plane..(c + 1) * plane] {
                    let v = f64::from(p) / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = (pixels.len() / 3) as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [0.0; 3];
        for c in 0..3 {
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            std[c] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    /// Standardized value of a raw byte in channel `c`.
    pub fn apply(&self, c: usize, byte: u8) -> f32 {
        ((f64::from(byte) / 255.0 - self.mean[c]) / self.std[c]) as f32
    }
}

/// Raw records of one CIFAR-10 binary batch: pixel bytes (R, G, B planes
/// per record) and labels.
pub fn read_cifar_batch(path: &Path) -> Result<(Vec<u8>, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::format(
            path,
            format!("size {} is not a positive multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(path, format!("record {i} has label byte {}", rec[0])));
        }
        labels.push(usize::from(rec[0]));
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((pixels, labels))
}

fn to_dataset(pixels: &[u8], labels: Vec<usize>, stats: &ChannelStats) -> Dataset {
    let plane = 32 * 32;
    let data = pixels
        .iter()
        .enumerate()
        .map(|(i, &b)| stats.apply((i / plane) % 3, b))
        .collect();
    Dataset {
        images: Tensor::from_vec(&[labels.len(), 3, 32, 32], data).expect("whole records"),
        labels,
        classes: 10,
    }
}

fn read_all(paths: &[PathBuf]) -> Result<(Vec<u8>, Vec<usize>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let (px, lb) = read_cifar_batch(p)?;
        pixels.extend(px);
        labels.extend(lb);
    }
    Ok((pixels, labels))
}

/// Loads `data_batch_*.bin` (train) and `test_batch.bin` from `dir`. Both
/// splits are standardized with the training split's channel statistics.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset, ChannelStats)> {
    let mut train_files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
        .collect();
    train_files.sort();
    if train_files.is_empty() {
        return Err(Error::format(dir, "no data_batch_*.bin files"));
    }
    let (train_px, train_lb) = read_all(&train_files)?;
    let (test_px, test_lb) = read_cifar_batch(&dir.join("test_batch.bin"))?;
    let stats = ChannelStats::of(&train_px);
    Ok((
        to_dataset(&train_px, train_lb, &stats),
        to_dataset(&test_px, test_lb, &stats),
        stats,
    ))
}

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

fn class_templates(rng: &mut DetRng, classes: usize, size: usize) -> Vec<Vec<f32>> {
    let plane = size * size;
    (0..classes)
        .map(|_| {
            let mut t = vec![0.0f32; 3 * plane];
            for c in 0..3 {
                let offset = rng.random_range(-0.5..0.5);
                let waves: Vec<Wave> = (0..2)
                    .map(|_| Wave {
                        fx: f64::from(rng.random_range(0..4u8)),
                        fy: f64::from(rng.random_range(0..4u8)),
                        phase: rng.random_range(0.0..2.0 * PI),
                        amp: rng.random_range(0.5..1.0),
                    })
                    .collect();
                for y in 0..size {
                    for x in 0..size {
                        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
                        let s: f64 = waves
                            .iter()
                            .map(|w| w.amp * (2.0 * PI * (w.fx * u + w.fy * v) + w.phase).sin())
                            .sum();
                        t[c * plane + y * size + x] = (offset + s) as f32;
                    }
                }
            }
            t
        })
        .collect()
}

fn noisy_samples(templates: &[Vec<f32>], n_per_class: usize, size: usize, noise: f64, rng: &mut DetRng) -> Dataset {
    let classes = templates.len();
    let mut data = Vec::with_capacity(classes * n_per_class * templates[0].len());
    let mut labels = Vec::with_capacity(classes * n_per_class);
    // interleave classes so any prefix is balanced
    for _ in 0..n_per_class {
        for (c, t) in templates.iter().enumerate() {
            let noise_t = rng::normal_tensor::<f32>(rng, &[t.len()], noise);
            data.extend(t.iter().zip(noise_t.data()).map(|(a, b)| a + b));
            labels.push(c);
        }
    }
    Dataset {
        images: Tensor::from_vec(&[labels.len(), 3, size, size], data).expect("sized above"),
        labels,
        classes,
    }
}

/// Noise level of the synthetic fixture.
pub const SYNTHETIC_NOISE: f64 = 2.5;

/// Class `c` is a fixed smooth 3-channel template (a colour offset plus two
/// plane waves per channel) with Gaussian pixel noise on top.
pub fn gen_synthetic(classes: usize, n_per_class: usize, image_size: usize, seed: u64) -> Result<Dataset> {
    check_synthetic(classes, n_per_class, image_size)?;
    let templates = class_templates(&mut rng::derived(seed, 0), classes, image_size);
    Ok(noisy_samples(&templates, n_per_class, image_size, SYNTHETIC_NOISE, &mut rng::derived(seed, 1)))
}

fn check_synthetic(classes: usize, n_per_class: usize, image_size: usize) -> Result<()> {
    if classes < 2 || n_per_class == 0 || image_size == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs classes >= 2, n >= 1, size >= 1 (got {classes}, {n_per_class}, {image_size})"
        )));
    }
    Ok(())
}

/// Training and held-out sets drawn around the same templates with
/// independent noise.
pub fn gen_synthetic_split(
    classes: usize,
    n_per_class: usize,
    test_per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    check_synthetic(classes, test_per_class, image_size)?;
    let train = gen_synthetic(classes, n_per_class, image_size, seed)?;
    let templates = class_templates(&mut rng::derived(seed, 0), classes, image_size);
    let test = noisy_samples(&templates, test_per_class, image_size, SYNTHETIC_NOISE, &mut rng::derived(seed, 2));
    Ok((train, test))
}
