//! The unlabeled probe set fed identically to every model.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::resize::bilinear;
use crate::tensor_core::Tensor;

/// Probe sizes mirrored by the CLI presets.
pub const PROBE_SIZE_PRESETS: [usize; 6] = [100, 400, 800, 1200, 1600, 2000];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        ImageShape {
            width,
            height,
            channels,
        }
    }

    /// Tensor layout `[height, width, channels]`.
    pub fn tensor_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

/// On-disk probe description: image paths relative to the manifest's
/// directory, and the common shape every image is resized to.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProbeManifest {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub images: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSet {
    pub name: String,
    pub shape: ImageShape,
    images: Vec<Tensor>,
    sources: Vec<PathBuf>,
}

impl ProbeSet {
    pub fn new(name: impl Into<String>, shape: ImageShape, images: Vec<Tensor>, sources: Vec<PathBuf>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyProbe);
        }
        if sources.len() != images.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} source entries",
                images.len(),
                sources.len()
            )));
        }
        if shape.channels != 1 && shape.channels != 3 {
            return Err(Error::UnsupportedChannels {
                from: shape.channels,
                to: shape.channels,
            });
        }
        for (i, img) in images.iter().enumerate() {
            if img.shape() != shape.tensor_shape() {
                return Err(Error::shape(format!("probe image {i}"), &shape.tensor_shape(), img.shape()));
            }
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidArgument(format!(
                    "probe image {i} has values outside [0, 1]"
                )));
            }
        }
        Ok(ProbeSet {
            name: name.into(),
            shape,
            images,
            sources,
        })
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn sources(&self) -> &[PathBuf] {
        &self.sources
    }

    /// N_p
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// SHA-256 over shape and pixel values, in probe order.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for e in [self.shape.width, self.shape.height, self.shape.channels, self.len()] {
            h.update((e as u64).to_le_bytes());
        }
        for img in &self.images {
            for v in img.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn checksum_hex(&self) -> String {
        hex::encode(self.checksum())
    }

    /// Reorder images: position `i` of the result holds image `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<ProbeSet> {
        let mut seen = vec![false; self.len()];
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
        }
        if order.len() != self.len() {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
        Ok(ProbeSet {
            name: self.name.clone(),
            shape: self.shape,
            images: order.iter().map(|&i| self.images[i].clone()).collect(),
            sources: order.iter().map(|&i| self.sources[i].clone()).collect(),
        })
    }
}

/// Decode one PPM (P6) or PGM (P5) file into `[height, width, channels]`
/// with values scaled to `[0, 1]`.
pub fn decode_netpbm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| Error::Decode {
        file: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        other => (3, other.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
    };
    Tensor::new(vec![h, w, channels], data)
}

/// Write an 8-bit P6 (3 channels) or P5 (1 channel) image from `[0, 1]` values.
pub fn write_netpbm(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    let (h, w, c) = (s[0] as u32, s[1] as u32, s[2]);
    let raw: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (subtype, color) = match c {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        _ => return Err(Error::UnsupportedChannels { from: c, to: c }),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(&raw, w, h, color)
        .map_err(|e| Error::Decode {
            file: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn match_channels(img: Tensor, channels: usize) -> Tensor {
    let s = img.shape().to_vec();
    if s[2] == channels {
        return img;
    }
    let data: Vec<f64> = if channels == 1 {
        img.data()
            .chunks_exact(s[2])
            .map(|px| px.iter().sum::<f64>() / s[2] as f64)
            .collect()
    } else {
        img.data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, channels))
            .collect()
    };
    Tensor::new(vec![s[0], s[1], channels], data).expect("channel conversion shape")
}

/// Load the probe described by a JSON manifest.
pub fn load_probe(manifest_path: &Path) -> Result<ProbeSet> {
    let text = fs::read(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: ProbeManifest =
        serde_json::from_slice(&text).map_err(|e| Error::parse(manifest_path.display().to_string(), e))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    load_probe_from(dir, &manifest)
}

pub fn load_probe_from(dir: &Path, manifest: &ProbeManifest) -> Result<ProbeSet> {
    if manifest.images.is_empty() {
        return Err(Error::EmptyProbe);
    }
    let shape = ImageShape::new(manifest.width, manifest.height, manifest.channels);
    if shape.is_empty() {
        return Err(Error::InvalidArgument(format!("bad probe shape {shape}")));
    }
    if shape.channels != 1 && shape.channels != 3 {
        return Err(Error::UnsupportedChannels {
            from: shape.channels,
            to: shape.channels,
        });
    }
    let images = manifest
        .images
        .iter()
        .map(|rel| {
            let img = decode_netpbm(&dir.join(rel))?;
            let img = match_channels(img, shape.channels);
            Ok(bilinear(&img, shape.height, shape.width))
        })
        .collect::<Result<Vec<_>>>()?;
    ProbeSet::new(manifest.name.clone(), shape, images, manifest.images.clone())
}

/// Seeded subset of `n` images without replacement, kept in original order.
pub fn sample_probe(set: &ProbeSet, n: usize, seed: u64) -> Result<ProbeSet> {
    if n == 0 || n > set.len() {
        return Err(Error::BadSampleSize {
            n,
            available: set.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, set.len(), n).into_vec();
    picked.sort_unstable();
    Ok(ProbeSet {
        name: format!("{}[n={n},seed={seed}]", set.name),
        shape: set.shape,
        images: picked.iter().map(|&i| set.images[i].clone()).collect(),
        sources: picked.iter().map(|&i| set.sources[i].clone()).collect(),
    })
}
