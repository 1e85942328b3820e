//! Datasets: CIFAR binaries, labelled image folders and synthetic textures,
//! plus the crop/mirror augmentation used during training.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled images stored as one `[N, C, H, W]` tensor.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Split,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, class_names: Vec<String>, split: Split) -> Result<Self> {
        let [n, _, _, _] = images.dims4("dataset")?;
        if labels.len() != n {
            return Err(Error::Data(format!("{} labels for {n} images", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_names.len(),
            });
        }
        Ok(Dataset {
            images,
            labels,
            class_names,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Images and labels at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let images = self.images.gather_batch(indices)?;
        Ok((images, indices.iter().map(|&i| self.labels[i]).collect()))
    }

    /// First `n` items (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Ok(Dataset {
            images: self.images.slice_batch(0, n)?,
            labels: self.labels[..n].to_vec(),
            class_names: self.class_names.clone(),
            split: self.split,
        })
    }

    /// Number of items per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Per-channel mean and standard deviation over all images.
    pub fn channel_stats(&self) -> (Vec<f32>, Vec<f32>) {
        let [c, h, w] = self.image_shape();
        let plane = h * w;
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for (i, &v) in self.images.data().iter().enumerate() {
            let ch = (i / plane) % c;
            sum[ch] += v as f64;
            sq[ch] += (v as f64) * (v as f64);
        }
        let count = (self.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / count - m * m).max(0.0).sqrt()).max(1e-6) as f32)
            .collect();
        (mean.into_iter().map(|m| m as f32).collect(), std)
    }

    /// Subtract `mean` and divide by `std`, per channel.
    pub fn standardize(&mut self, mean: &[f32], std: &[f32]) -> Result<()> {
        let [c, h, w] = self.image_shape();
        if mean.len() != c || std.len() != c {
            return Err(Error::Data(format!("standardize: {c} channels, got {} means", mean.len())));
        }
        let plane = h * w;
        for (i, v) in self.images.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = (*v - mean[ch]) / std[ch];
        }
        Ok(())
    }

    /// Write the first `limit` images as 8-bit PGM files (`{index}_{class}.pgm`,
    /// channel mean as intensity).
    pub fn export_pgm(&self, dir: impl AsRef<Path>, limit: usize) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let [c, h, w] = self.image_shape();
        let mut written = Vec::new();
        for i in 0..self.len().min(limit) {
            let item = &self.images.data()[i * c * h * w..(i + 1) * c * h * w];
            let gray: Vec<u8> = (0..h * w)
                .map(|p| {
                    let v: f32 = (0..c).map(|ch| item[ch * h * w + p]).sum::<f32>() / c as f32;
                    to_u8(v)
                })
                .collect();
            let path = dir.join(format!("{i:05}_{}.pgm", self.class_names[self.labels[i]]));
            write_gray(&path, w, h, gray)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save an 8-bit grayscale image; the format follows the file extension.
pub fn write_gray(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::Data(format!("{}: pixel buffer does not match {width}x{height}", path.display())))?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

// -- CIFAR ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CifarVariant {
    #[serde(rename = "cifar10")]
    Cifar10,
    #[serde(rename = "cifar100")]
    Cifar100,
}

const CIFAR_PIXELS: usize = 3 * 32 * 32;

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + CIFAR_PIXELS,
            CifarVariant::Cifar100 => 2 + CIFAR_PIXELS,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    /// Batch files and their record counts as distributed.
    pub fn files(self, split: Split) -> Vec<(&'static str, usize)> {
        match (self, split) {
            (CifarVariant::Cifar10, Split::Train) => vec![
                ("data_batch_1.bin", 10_000),
                ("data_batch_2.bin", 10_000),
                ("data_batch_3.bin", 10_000),
                ("data_batch_4.bin", 10_000),
                ("data_batch_5.bin", 10_000),
            ],
            (CifarVariant::Cifar10, Split::Test) => vec![("test_batch.bin", 10_000)],
            (CifarVariant::Cifar100, Split::Train) => vec![("train.bin", 50_000)],
            (CifarVariant::Cifar100, Split::Test) => vec![("test.bin", 10_000)],
        }
    }

    pub fn subdir(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "cifar-10-batches-bin",
            CifarVariant::Cifar100 => "cifar-100-binary",
        }
    }

    fn names_file(self) -> &'static str {
        match self {
            CifarVariant::Cifar10 => "batches.meta.txt",
            CifarVariant::Cifar100 => "fine_label_names.txt",
        }
    }
}

/// Parse one CIFAR binary file into `[N, 3, 32, 32]` images in `[0, 1]` and
/// labels (fine labels for CIFAR-100).
pub fn read_cifar_file(path: &Path, variant: CifarVariant) -> Result<(Tensor<f32>, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let rec = variant.record_len();
    let n = bytes.len() / rec;
    if bytes.len() % rec != 0 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            offset: (n * rec) as u64,
        });
    }
    let mut images = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[rec - CIFAR_PIXELS - 1] as usize;
        if label >= variant.num_classes() {
            return Err(Error::Data(format!(
                "{}: record {i} has label {label}, expected < {}",
                path.display(),
                variant.num_classes()
            )));
        }
        labels.push(label);
        images.extend(record[rec - CIFAR_PIXELS..].iter().map(|&b| b as f32 / 255.0));
    }
    Ok((Tensor::new([n, 3, 32, 32], images)?, labels))
}

/// Load the train and test splits from `dir` (or its standard sub-directory).
///
/// With `strict`, every file must hold exactly the distributed number of
/// records.
pub fn load_cifar_with(dir: impl AsRef<Path>, variant: CifarVariant, strict: bool) -> Result<(Dataset, Dataset)> {
    let mut dir = dir.as_ref().to_path_buf();
    if !dir.join(variant.files(Split::Train)[0].0).exists() && dir.join(variant.subdir()).is_dir() {
        dir = dir.join(variant.subdir());
    }
    let names = match fs::read_to_string(dir.join(variant.names_file())) {
        Ok(text) => {
            let names: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            if names.len() == variant.num_classes() {
                names
            } else {
                default_names(variant.num_classes())
            }
        }
        Err(_) => default_names(variant.num_classes()),
    };
    let load = |split: Split| -> Result<Dataset> {
        let mut parts = Vec::new();
        let mut labels = Vec::new();
        for (file, expected) in variant.files(split) {
            let path = dir.join(file);
            let (images, l) = read_cifar_file(&path, variant)?;
            if strict && l.len() != expected {
                return Err(Error::Data(format!(
                    "{}: {} records, expected {expected}",
                    path.display(),
                    l.len()
                )));
            }
            parts.push(images.into_data());
            labels.extend(l);
        }
        let data: Vec<f32> = parts.concat();
        Dataset::new(Tensor::new([labels.len(), 3, 32, 32], data)?, labels, names.clone(), split)
    };
    Ok((load(Split::Train)?, load(Split::Test)?))
}

/// Strict loader for the distributed CIFAR-10/100 binaries.
pub fn load_cifar(dir: impl AsRef<Path>, variant: CifarVariant) -> Result<(Dataset, Dataset)> {
    load_cifar_with(dir, variant, true)
}

fn default_names(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

/// Write records in CIFAR binary layout (used to build small fixtures).
pub fn write_cifar_file(path: &Path, variant: CifarVariant, images: &Tensor<f32>, labels: &[usize]) -> Result<()> {
    let [n, c, h, w] = images.dims4("write_cifar_file")?;
    if [c, h, w] != [3, 32, 32] || labels.len() != n {
        return Err(Error::shape("write_cifar_file", format!("expected [N,3,32,32] with N labels, got {:?}", images.shape())));
    }
    let mut bytes = Vec::with_capacity(n * variant.record_len());
    for (i, &label) in labels.iter().enumerate() {
        if variant == CifarVariant::Cifar100 {
            bytes.push((label / 5) as u8);
        }
        bytes.push(label as u8);
        bytes.extend(images.data()[i * CIFAR_PIXELS..(i + 1) * CIFAR_PIXELS].iter().map(|&v| to_u8(v)));
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// -- image folders ----------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FolderOptions {
    /// Output side length after center-crop and resize.
    pub size: usize,
    /// 1 (luma) or 3 (RGB).
    pub channels: usize,
}

impl Default for FolderOptions {
    fn default() -> Self {
        FolderOptions { size: 32, channels: 3 }
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "pgm" | "ppm" | "pnm")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Decode one image into `[C, size, size]` values in `[0, 1]`.
pub fn load_image(path: &Path, opts: FolderOptions) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let side = img.width().min(img.height());
    let img = img.crop_imm((img.width() - side) / 2, (img.height() - side) / 2, side, side);
    let size = opts.size as u32;
    let img = if side == size { img } else { img.resize_exact(size, size, FilterType::Triangle) };
    let plane = opts.size * opts.size;
    match opts.channels {
        1 => Ok(img.to_luma8().into_raw().into_iter().map(|b| b as f32 / 255.0).collect()),
        3 => {
            let raw = img.to_rgb8().into_raw();
            let mut out = vec![0.0; 3 * plane];
            for (p, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    out[c * plane + p] = px[c] as f32 / 255.0;
                }
            }
            Ok(out)
        }
        n => Err(Error::Config(format!("image channels must be 1 or 3, got {n}"))),
    }
}

/// `dir/<class>/*.{png,pgm}`: classes sorted by name, files sorted by path.
pub fn load_image_folder(dir: impl AsRef<Path>, opts: FolderOptions, split: Split) -> Result<Dataset> {
    let dir = dir.as_ref();
    let classes: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(Error::Data(format!("{}: no class directories", dir.display())));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names = Vec::new();
    for (label, class_dir) in classes.iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(class_dir)?.into_iter().filter(|p| is_image(p)).collect();
        if files.is_empty() {
            return Err(Error::Data(format!("{}: class directory has no images", class_dir.display())));
        }
        for f in files {
            data.extend(load_image(&f, opts)?);
            labels.push(label);
        }
        names.push(class_dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
    }
    let images = Tensor::new([labels.len(), opts.channels, opts.size, opts.size], data)?;
    Dataset::new(images, labels, names, split)
}

// -- synthetic textures -----------------------------------------------------

/// Texture classes, in label order.
pub const TEXTURE_CLASSES: [&str; 4] = ["horizontal", "vertical", "checkerboard", "noise"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 4,
            train_per_class: 50,
            test_per_class: 20,
            size: 32,
            seed: 7,
        }
    }
}

fn texture<R: Rng>(class: usize, size: usize, rng: &mut R) -> Vec<f32> {
    let mut img = vec![0f32; size * size];
    match class {
        0 | 1 => {
            let period = rng.gen_range(4.0..16.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = rng.gen_range(0.25..0.5);
            for r in 0..size {
                for c in 0..size {
                    let t = if class == 0 { r } else { c } as f64;
                    img[r * size + c] = (0.5 + amp * (2.0 * PI * t / period + phase).sin()) as f32;
                }
            }
        }
        2 => {
            let cell = rng.gen_range(2..=8usize);
            let (oy, ox) = (rng.gen_range(0..cell), rng.gen_range(0..cell));
            let amp = rng.gen_range(0.25f32..0.5);
            for r in 0..size {
                for c in 0..size {
                    let on = ((r + oy) / cell + (c + ox) / cell) % 2 == 0;
                    img[r * size + c] = if on { 0.5 + amp } else { 0.5 - amp };
                }
            }
        }
        _ => {
            let normal = Normal::new(0.5f32, 0.25).expect("valid sigma");
            for v in &mut img {
                *v = normal.sample(rng).clamp(0.0, 1.0);
            }
        }
    }
    img
}

fn synth_split(spec: &SynthSpec, per_class: usize, stream: u64, split: Split) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let plane = spec.size * spec.size;
    let mut data = Vec::with_capacity(spec.classes * per_class * 3 * plane);
    let mut labels = Vec::new();
    for class in 0..spec.classes {
        for _ in 0..per_class {
            let img = texture(class, spec.size, &mut rng);
            for _ in 0..3 {
                data.extend_from_slice(&img);
            }
            labels.push(class);
        }
    }
    let names = TEXTURE_CLASSES[..spec.classes].iter().map(|s| s.to_string()).collect();
    Dataset::new(Tensor::new([labels.len(), 3, spec.size, spec.size], data)?, labels, names, split)
}

/// Seeded texture classification task: gratings of two orientations,
/// checkerboards and clamped Gaussian noise, replicated to 3 channels.
/// Train and test come from independent random streams.
pub fn synth_textures(spec: &SynthSpec) -> Result<(Dataset, Dataset)> {
    if spec.size < 8 || !spec.size.is_multiple_of(2) {
        return Err(Error::Config(format!("synthetic size must be even and >= 8, got {}", spec.size)));
    }
    if spec.classes == 0 || spec.classes > TEXTURE_CLASSES.len() {
        return Err(Error::Config(format!("synthetic classes must be 1..=4, got {}", spec.classes)));
    }
    Ok((
        synth_split(spec, spec.train_per_class, 0, Split::Train)?,
        synth_split(spec, spec.test_per_class, 1, Split::Test)?,
    ))
}

// -- augmentation -----------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    /// Zero padding added before cropping back to the original size.
    pub pad: usize,
    pub random_crop: bool,
    pub mirror: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy::NONE
    }
}

impl AugmentPolicy {
    pub const NONE: AugmentPolicy = AugmentPolicy {
        pad: 0,
        random_crop: false,
        mirror: false,
    };

    /// Pad 4, random crop, horizontal mirroring.
    pub fn cifar() -> Self {
        AugmentPolicy {
            pad: 4,
            random_crop: true,
            mirror: true,
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.mirror && (self.pad == 0 || !self.random_crop)
    }
}

/// Per-item crop offset (into the padded image) and flip decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

/// Crop each item of the zero-padded batch at its placement, then mirror it
/// if requested.
pub fn place(batch: &Tensor<f32>, pad: usize, placements: &[Placement]) -> Result<Tensor<f32>> {
    let [n, c, h, w] = batch.dims4("augment")?;
    if placements.len() != n {
        return Err(Error::shape("augment", format!("{} placements for batch {n}", placements.len())));
    }
    let src = batch.data();
    let mut out = vec![0f32; src.len()];
    for (i, p) in placements.iter().enumerate() {
        if p.dy > 2 * pad || p.dx > 2 * pad {
            return Err(Error::shape("augment", format!("offset ({}, {}) exceeds padding {pad}", p.dy, p.dx)));
        }
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for y in 0..h {
                let sy = (y + p.dy) as isize - pad as isize;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for x in 0..w {
                    let xc = if p.flip { w - 1 - x } else { x };
                    let sx = (xc + p.dx) as isize - pad as isize;
                    if sx >= 0 && sx < w as isize {
                        out[base + y * w + x] = src[base + sy as usize * w + sx as usize];
                    }
                }
            }
        }
    }
    Tensor::new(batch.shape().to_vec(), out)
}

/// Random crop after zero padding and random horizontal mirroring (p = 0.5).
/// Labels are unaffected; values stay within the input range and zero.
pub fn augment<R: Rng + ?Sized>(batch: &Tensor<f32>, policy: &AugmentPolicy, rng: &mut R) -> Result<Tensor<f32>> {
    let n = batch.dims4("augment")?[0];
    let placements: Vec<Placement> = (0..n)
        .map(|_| {
            let (dy, dx) = if policy.random_crop && policy.pad > 0 {
                (rng.gen_range(0..=2 * policy.pad), rng.gen_range(0..=2 * policy.pad))
            } else {
                (policy.pad, policy.pad)
            };
            Placement {
                dy,
                dx,
                flip: policy.mirror && rng.gen_bool(0.5),
            }
        })
        .collect();
    place(batch, policy.pad, &placements)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, c: usize, s: usize) -> Tensor<f32> {
        let len = n * c * s * s;
        Tensor::new([n, c, s, s], (0..len).map(|i| i as f32 / len as f32).collect()).unwrap()
    }

    #[test]
    fn synth_shape_and_determinism() {
        let spec = SynthSpec {
            classes: 4,
            train_per_class: 50,
            test_per_class: 5,
            size: 32,
            seed: 7,
        };
        let (train, test) = synth_textures(&spec).unwrap();
        assert_eq!(train.images.shape(), &[200, 3, 32, 32]);
        assert_eq!(train.class_histogram(), vec![50; 4]);
        assert_eq!(test.len(), 20);
        let (again, _) = synth_textures(&spec).unwrap();
        assert_eq!(train.images, again.images);
        assert!(train.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        // channels are replicas
        let d = train.images.data();
        assert_eq!(&d[..1024], &d[1024..2048]);
    }

    #[test]
    fn horizontal_gratings_are_constant_along_rows() {
        let (train, _) = synth_textures(&SynthSpec::default()).unwrap();
        let img = &train.images.data()[..32 * 32];
        for r in 0..32 {
            let row = &img[r * 32..(r + 1) * 32];
            let mean = row.iter().sum::<f32>() / 32.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 32.0;
            assert!(var < 1e-12);
        }
    }

    #[test]
    fn synth_rejects_bad_sizes() {
        for size in [6, 31] {
            let spec = SynthSpec { size, ..SynthSpec::default() };
            assert!(synth_textures(&spec).is_err());
        }
    }

    #[test]
    fn train_and_test_differ() {
        let (train, test) = synth_textures(&SynthSpec::default()).unwrap();
        let item = 3 * 32 * 32;
        for i in 0..test.len() {
            let t = &test.images.data()[i * item..(i + 1) * item];
            assert!((0..train.len()).all(|j| &train.images.data()[j * item..(j + 1) * item] != t));
        }
    }

    #[test]
    fn augment_identity_policies() {
        let x = ramp(2, 3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&x, &AugmentPolicy::NONE, &mut rng).unwrap(), x);
        let centred = AugmentPolicy {
            pad: 4,
            random_crop: false,
            mirror: false,
        };
        assert_eq!(augment(&x, &centred, &mut rng).unwrap(), x);
    }

    #[test]
    fn forced_mirror_is_an_involution() {
        let x = ramp(2, 3, 8);
        let flip = vec![Placement { dy: 0, dx: 0, flip: true }; 2];
        let once = place(&x, 0, &flip).unwrap();
        assert_ne!(once, x);
        assert_eq!(&once.data()[..8], &x.data()[..8].iter().rev().copied().collect::<Vec<_>>()[..]);
        assert_eq!(place(&once, 0, &flip).unwrap(), x);
    }

    #[test]
    fn crop_shifts_with_zero_fill() {
        let x = Tensor::full([1, 1, 4, 4], 1.0f32);
        let y = place(&x, 2, &[Placement { dy: 0, dx: 4, flip: false }]).unwrap();
        // shifted up-left by two rows and right by two columns
        let expect = [0., 0., 0., 0., 0., 0., 0., 0., 1., 1., 0., 0., 1., 1., 0., 0.];
        assert_eq!(y.data(), &expect);
    }

    #[test]
    fn augment_is_seeded_and_shape_preserving() {
        let x = ramp(4, 3, 8);
        let p = AugmentPolicy::cifar();
        let a = augment(&x, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = augment(&x, &p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), x.shape());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn cifar_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (train, _) = synth_textures(&SynthSpec {
            train_per_class: 2,
            ..SynthSpec::default()
        })
        .unwrap();
        let path = dir.path().join("data.bin");
        write_cifar_file(&path, CifarVariant::Cifar100, &train.images, &train.labels).unwrap();
        let (images, labels) = read_cifar_file(&path, CifarVariant::Cifar100).unwrap();
        assert_eq!(labels, train.labels);
        assert!(images.max_abs_diff(&train.images) <= 0.5 / 255.0 + 1e-6);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match read_cifar_file(&path, CifarVariant::Cifar100) {
            Err(Error::Truncated { path: p, offset }) => {
                assert_eq!(p, path);
                assert_eq!(offset, 7 * 3074);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        let images = Tensor::zeros([2, 1, 8, 8]);
        assert!(Dataset::new(images.clone(), vec![0, 2], vec!["a".into(), "b".into()], Split::Train).is_err());
        assert!(Dataset::new(images, vec![0], vec!["a".into()], Split::Train).is_err());
    }

    #[test]
    fn standardize_uses_channel_stats() {
        let (mut train, _) = synth_textures(&SynthSpec::default()).unwrap();
        let (mean, std) = train.channel_stats();
        train.standardize(&mean, &std).unwrap();
        let (m2, s2) = train.channel_stats();
        assert!(m2.iter().all(|m| m.abs() < 1e-4));
        assert!(s2.iter().all(|s| (s - 1.0).abs() < 1e-3));
    }
}
