//! Model bundles on disk, preprocessing into a model's input space, and
//! mapping attribution maps back onto the probe canvas.
//!
//! A bundle is a directory holding `manifest.json` and `weights.bin`. The
//! blob is little-endian `f32`, row-major, with every parameter tensor located
//! by a byte offset and element count in the manifest. The manifest also
//! records the SHA-256 of the blob, checked on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::probe::ImageShape;
use crate::resize::bilinear;
use crate::tensor_core::{Graph, LayerSpec, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

/// Which channel conversion a model accepts when the probe's channel count
/// differs from its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPolicy {
    /// Gray probe images are copied into every model channel.
    ReplicateGray,
    /// Color probe images are averaged into one gray channel.
    AverageToGray,
}

/// Preprocessing descriptor of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocSpec {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub channel_policy: ChannelPolicy,
}

impl PreprocSpec {
    /// Plain resize with zero mean and unit std.
    pub fn identity(width: usize, height: usize, channels: usize) -> Self {
        PreprocSpec {
            width,
            height,
            channels,
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
            channel_policy: if channels == 1 {
                ChannelPolicy::AverageToGray
            } else {
                ChannelPolicy::ReplicateGray
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.channels == 0 {
            return Err(Error::InvalidArgument(
                "preprocessing extents must be at least 1".into(),
            ));
        }
        if self.mean.len() != self.channels || self.std.len() != self.channels {
            return Err(Error::InvalidArgument(format!(
                "mean/std must have {} entries",
                self.channels
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("std must be strictly positive".into()));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("mean must be finite".into()));
        }
        Ok(())
    }

    /// Model input tensor shape, `[height, width, channels]`.
    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.height, self.width, self.channels]
    }
}

/// A loaded, validated encoder with its preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub id: String,
    pub task: String,
    pub preproc: PreprocSpec,
    pub graph: Graph,
    /// Hex SHA-256 of the weights blob.
    pub weights_sha256: String,
    /// Hex SHA-256 over manifest and blob; identifies the model in caches.
    pub fingerprint: String,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
struct BlobRef {
    offset: usize,
    count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerRecord {
    Dense {
        in_features: usize,
        out_features: usize,
        weight: BlobRef,
        bias: BlobRef,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        weight: BlobRef,
        bias: BlobRef,
    },
    Relu,
    Sigmoid,
    Tanh,
    Avgpool {
        window: usize,
        stride: usize,
    },
    Maxpool {
        window: usize,
        stride: usize,
    },
    Flatten,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    id: String,
    task: String,
    preproc: PreprocSpec,
    layers: Vec<LayerRecord>,
    weights_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_blob(blob: &[u8], r: BlobRef, layer: usize, what: &str) -> Result<Vec<f64>> {
    let end = r
        .count
        .checked_mul(4)
        .and_then(|n| n.checked_add(r.offset))
        .filter(|&end| end <= blob.len())
        .ok_or_else(|| {
            Error::parse(
                format!("layer {layer} {what}"),
                format!(
                    "needs bytes {}..{} but weights blob has {}",
                    r.offset,
                    r.offset + r.count * 4,
                    blob.len()
                ),
            )
        })?;
    Ok(blob[r.offset..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn tensor_from_blob(
    blob: &[u8],
    r: BlobRef,
    shape: Vec<usize>,
    layer: usize,
    what: &str,
) -> Result<Tensor> {
    let expected: usize = shape.iter().product();
    if r.count != expected {
        return Err(Error::parse(
            format!("layer {layer} {what}"),
            format!("manifest count {} does not match shape {shape:?}", r.count),
        ));
    }
    Tensor::new(shape, read_blob(blob, r, layer, what)?)
}

fn decode_layers(records: &[LayerRecord], blob: &[u8]) -> Result<Vec<LayerSpec>> {
    records
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            Ok(match *rec {
                LayerRecord::Dense {
                    in_features,
                    out_features,
                    weight,
                    bias,
                } => LayerSpec::Dense {
                    weight: tensor_from_blob(blob, weight, vec![out_features, in_features], i, "weight")?,
                    bias: tensor_from_blob(blob, bias, vec![out_features], i, "bias")?,
                },
                LayerRecord::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    weight,
                    bias,
                } => LayerSpec::Conv2d {
                    weight: tensor_from_blob(
                        blob,
                        weight,
                        vec![out_channels, kernel[0], kernel[1], in_channels],
                        i,
                        "weight",
                    )?,
                    bias: tensor_from_blob(blob, bias, vec![out_channels], i, "bias")?,
                    stride,
                    padding,
                },
                LayerRecord::Relu => LayerSpec::Relu,
                LayerRecord::Sigmoid => LayerSpec::Sigmoid,
                LayerRecord::Tanh => LayerSpec::Tanh,
                LayerRecord::Avgpool { window, stride } => LayerSpec::AvgPool { window, stride },
                LayerRecord::Maxpool { window, stride } => LayerSpec::MaxPool { window, stride },
                LayerRecord::Flatten => LayerSpec::Flatten,
            })
        })
        .collect()
}

/// Serialize layers into manifest records plus a weights blob.
fn encode_layers(layers: &[LayerSpec]) -> (Vec<LayerRecord>, Vec<u8>) {
    let mut blob = Vec::new();
    let mut push = |t: &Tensor| {
        let r = BlobRef {
            offset: blob.len(),
            count: t.len(),
        };
        for &v in t.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        r
    };
    let records = layers
        .iter()
        .map(|layer| match layer {
            LayerSpec::Dense { weight, bias } => LayerRecord::Dense {
                in_features: weight.shape()[1],
                out_features: weight.shape()[0],
                weight: push(weight),
                bias: push(bias),
            },
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let s = weight.shape();
                LayerRecord::Conv2d {
                    in_channels: s[3],
                    out_channels: s[0],
                    kernel: [s[1], s[2]],
                    stride: *stride,
                    padding: *padding,
                    weight: push(weight),
                    bias: push(bias),
                }
            }
            LayerSpec::Relu => LayerRecord::Relu,
            LayerSpec::Sigmoid => LayerRecord::Sigmoid,
            LayerSpec::Tanh => LayerRecord::Tanh,
            LayerSpec::AvgPool { window, stride } => LayerRecord::Avgpool {
                window: *window,
                stride: *stride,
            },
            LayerSpec::MaxPool { window, stride } => LayerRecord::Maxpool {
                window: *window,
                stride: *stride,
            },
            LayerSpec::Flatten => LayerRecord::Flatten,
        })
        .collect();
    (records, blob)
}

fn fingerprint(manifest_bytes: &[u8], blob: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update((manifest_bytes.len() as u64).to_le_bytes());
    h.update(manifest_bytes);
    h.update(blob);
    hex::encode(h.finalize())
}

impl ModelSpec {
    /// Build an in-memory model. Weights are stored as `f32` on disk, so
    /// callers that want `save`/`load` to round-trip exactly should pass
    /// `f32`-representable values.
    pub fn new(id: impl Into<String>, task: impl Into<String>, preproc: PreprocSpec, graph: Graph) -> Result<Self> {
        preproc.validate()?;
        if graph.input_shape() != preproc.input_shape().as_slice() {
            return Err(Error::shape("model input vs preprocessing", &preproc.input_shape(), graph.input_shape()));
        }
        let id = id.into();
        validate_id(&id)?;
        let mut spec = ModelSpec {
            id,
            task: task.into(),
            preproc,
            graph,
            weights_sha256: String::new(),
            fingerprint: String::new(),
        };
        let (manifest, blob) = spec.to_bundle_bytes();
        spec.weights_sha256 = sha256_hex(&blob);
        spec.fingerprint = fingerprint(&manifest, &blob);
        Ok(spec)
    }

    /// Representation dimension D.
    pub fn representation_dim(&self) -> usize {
        self.graph.representation_dim()
    }

    /// Manifest JSON and weights blob exactly as [`ModelSpec::save`] writes them.
    pub fn to_bundle_bytes(&self) -> (Vec<u8>, Vec<u8>) {
        let (layers, blob) = encode_layers(self.graph.layers());
        let manifest = Manifest {
            id: self.id.clone(),
            task: self.task.clone(),
            preproc: self.preproc.clone(),
            layers,
            weights_sha256: sha256_hex(&blob),
        };
        let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        json.push(b'\n');
        (json, blob)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (manifest, blob) = self.to_bundle_bytes();
        let mp = dir.join(MANIFEST_FILE);
        fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
        let wp = dir.join(WEIGHTS_FILE);
        fs::write(&wp, blob).map_err(|e| Error::io(&wp, e))?;
        Ok(())
    }
}

fn validate_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_control()) {
        return Err(Error::InvalidArgument(format!("invalid model id {id:?}")));
    }
    Ok(())
}

/// Load and fully validate a model bundle directory.
pub fn load_model(dir: &Path) -> Result<ModelSpec> {
    let mp = dir.join(MANIFEST_FILE);
    let manifest_bytes = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
    let wp = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&wp).map_err(|e| Error::io(&wp, e))?;
    parse_bundle(&manifest_bytes, &blob, &mp.display().to_string())
}

/// Parse a bundle from its two byte streams.
pub fn parse_bundle(manifest_bytes: &[u8], blob: &[u8], context: &str) -> Result<ModelSpec> {
    let manifest: Manifest =
        serde_json::from_slice(manifest_bytes).map_err(|e| Error::parse(context, e))?;
    validate_id(&manifest.id)?;
    manifest.preproc.validate()?;
    let layers = decode_layers(&manifest.layers, blob)?;
    let got = sha256_hex(blob);
    if !got.eq_ignore_ascii_case(&manifest.weights_sha256) {
        return Err(Error::ChecksumMismatch {
            expected: manifest.weights_sha256,
            got,
        });
    }
    let graph = Graph::new(layers, manifest.preproc.input_shape())?;
    Ok(ModelSpec {
        id: manifest.id,
        task: manifest.task,
        preproc: manifest.preproc,
        graph,
        weights_sha256: got,
        fingerprint: fingerprint(manifest_bytes, blob),
    })
}

/// Map a probe image into a model's input space: bilinear resize, channel
/// conversion, then per-channel `(x - mean) / std`.
pub fn preprocess(spec: &PreprocSpec, image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::shape("probe image", &[spec.height, spec.width, 0], s));
    }
    let c = s[2];
    if c != 1 && c != 3 {
        return Err(Error::UnsupportedChannels {
            from: c,
            to: spec.channels,
        });
    }
    let resized = bilinear(image, spec.height, spec.width);
    let converted = convert_channels(&resized, spec.channels, spec.channel_policy)?;
    let ci = spec.channels;
    let mut data = converted.into_data();
    for (i, v) in data.iter_mut().enumerate() {
        let ch = i % ci;
        *v = (*v - spec.mean[ch]) / spec.std[ch];
    }
    Tensor::new(spec.input_shape(), data)
}

fn convert_channels(img: &Tensor, target: usize, policy: ChannelPolicy) -> Result<Tensor> {
    let s = img.shape();
    let c = s[2];
    if c == target {
        return Ok(img.clone());
    }
    match policy {
        ChannelPolicy::ReplicateGray if c == 1 => Ok(replicate(img, target)),
        ChannelPolicy::AverageToGray if target == 1 => Ok(average(img)),
        _ => Err(Error::UnsupportedChannels { from: c, to: target }),
    }
}

fn replicate(img: &Tensor, channels: usize) -> Tensor {
    let s = img.shape();
    let data = img
        .data()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, channels))
        .collect();
    Tensor::new(vec![s[0], s[1], channels], data).expect("replicated shape")
}

fn average(img: &Tensor) -> Tensor {
    let s = img.shape();
    let c = s[2];
    let data = img
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().sum::<f64>() / c as f64)
        .collect();
    Tensor::new(vec![s[0], s[1], 1], data).expect("averaged shape")
}

/// Bring a model-space attribution map back to the probe canvas.
///
/// Only the geometric part of preprocessing is inverted: the map is resized
/// to the probe resolution and channels are replicated (gray model) or
/// averaged (color model, gray probe). Normalization is not undone.
pub fn unpreprocess_attribution(spec: &PreprocSpec, attr: &Tensor, probe: ImageShape) -> Result<Tensor> {
    let expected = spec.input_shape();
    if attr.shape() != expected.as_slice() {
        return Err(Error::shape("attribution map", &expected, attr.shape()));
    }
    let resized = bilinear(attr, probe.height, probe.width);
    let (ci, c) = (spec.channels, probe.channels);
    if ci == c {
        Ok(resized)
    } else if ci == 1 {
        Ok(replicate(&resized, c))
    } else if c == 1 {
        Ok(average(&resized))
    } else {
        Err(Error::UnsupportedChannels { from: ci, to: c })
    }
}
