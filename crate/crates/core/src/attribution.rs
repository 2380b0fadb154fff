//! Attribution maps of a model's representation over the probe set.
//!
//! Three methods are supported: saliency (`|dR/dx|`), gradient*input
//! (`x * dR/dx`) and epsilon-LRP, which is gradient*input computed with the
//! modified backward pass. The per-image map averages the maps of all D
//! representation units. In single-pass mode this is done with one backward
//! pass seeded by `(1/D) * ones`; for saliency the absolute value is then
//! taken after averaging, so single-pass saliency is a lower bound of the
//! per-unit mean. Exact mode runs one backward pass per unit.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_io::{preprocess, unpreprocess_attribution, ModelSpec};
use crate::probe::{ImageShape, ProbeSet};
use crate::tensor_core::{DerivativeRule, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-4;
pub const DEFAULT_EXACT_CAP: usize = 512;

const CACHE_MAGIC: &[u8; 8] = b"TMSATTR1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AttributionMethod {
    Saliency,
    GradientTimesInput,
    EpsilonLrp { epsilon: f64 },
}

impl AttributionMethod {
    pub fn epsilon_lrp(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(AttributionMethod::EpsilonLrp { epsilon })
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            AttributionMethod::Saliency => "saliency",
            AttributionMethod::GradientTimesInput => "gradxinput",
            AttributionMethod::EpsilonLrp { .. } => "elrp",
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            AttributionMethod::EpsilonLrp { epsilon } => Some(*epsilon),
            _ => None,
        }
    }

    fn rule(&self) -> DerivativeRule {
        match self {
            AttributionMethod::EpsilonLrp { epsilon } => DerivativeRule::Epsilon(*epsilon),
            _ => DerivativeRule::Gradient,
        }
    }

    fn code(&self) -> u8 {
        match self {
            AttributionMethod::Saliency => 0,
            AttributionMethod::GradientTimesInput => 1,
            AttributionMethod::EpsilonLrp { .. } => 2,
        }
    }

    /// Combine a backward result with the model input per method.
    fn combine(&self, input: &Tensor, grad: &Tensor) -> Tensor {
        match self {
            AttributionMethod::Saliency => grad.map(f64::abs),
            _ => input.zip_map(grad, |x, g| x * g).expect("grad has input shape"),
        }
    }
}

impl fmt::Display for AttributionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttributionMethod::EpsilonLrp { epsilon } => write!(f, "elrp(eps={epsilon:e})"),
            other => f.write_str(other.short_name()),
        }
    }
}

impl FromStr for AttributionMethod {
    type Err = Error;

    /// Accepts `saliency`, `gradxinput` and `elrp` (default epsilon).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saliency" => Ok(AttributionMethod::Saliency),
            "gradxinput" | "gradient-times-input" => Ok(AttributionMethod::GradientTimesInput),
            "elrp" | "epsilon-lrp" => Ok(AttributionMethod::EpsilonLrp {
                epsilon: DEFAULT_EPSILON,
            }),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMode {
    SinglePass,
    Exact,
}

impl fmt::Display for AttributionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttributionMode::SinglePass => "single_pass",
            AttributionMode::Exact => "exact",
        })
    }
}

impl FromStr for AttributionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_pass" | "single-pass" => Ok(AttributionMode::SinglePass),
            "exact" => Ok(AttributionMode::Exact),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

/// One attribution map on the probe canvas.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionMap {
    pub map: Tensor,
    pub model_id: String,
    pub image_index: usize,
    pub method: AttributionMethod,
}

/// All maps of one model over a probe set: one point in model space.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributionSet {
    pub model_id: String,
    pub model_fingerprint: String,
    pub method: AttributionMethod,
    pub mode: AttributionMode,
    pub probe_checksum: [u8; 32],
    pub shape: ImageShape,
    pub maps: Vec<Tensor>,
    /// Forward-and-backward propagations spent producing `maps`.
    pub passes: u64,
}

impl AttributionSet {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn map(&self, j: usize) -> AttributionMap {
        AttributionMap {
            map: self.maps[j].clone(),
            model_id: self.model_id.clone(),
            image_index: j,
            method: self.method,
        }
    }

    /// Round every value through `f32`, the precision of the on-disk cache.
    pub fn quantized(&self) -> AttributionSet {
        let mut out = self.clone();
        for m in &mut out.maps {
            m.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        out
    }

    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(128 + self.len() * self.shape.len() * 4);
        buf.extend_from_slice(CACHE_MAGIC);
        for s in [&self.model_id, &self.model_fingerprint] {
            buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
            buf.extend_from_slice(s.as_bytes());
        }
        buf.push(self.method.code());
        buf.extend_from_slice(&self.method.epsilon().unwrap_or(0.0).to_le_bytes());
        buf.push(match self.mode {
            AttributionMode::SinglePass => 0,
            AttributionMode::Exact => 1,
        });
        buf.extend_from_slice(&self.probe_checksum);
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for e in [self.shape.width, self.shape.height, self.shape.channels] {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        buf.extend_from_slice(&self.passes.to_le_bytes());
        for m in &self.maps {
            for &v in m.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<AttributionSet> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let ctx = path.display().to_string();
        let mut r = ByteReader {
            bytes: &bytes,
            pos: 0,
            ctx: &ctx,
        };
        if r.take(8)? != CACHE_MAGIC {
            return Err(Error::parse(ctx, "not an attribution cache"));
        }
        let model_id = r.string()?;
        let model_fingerprint = r.string()?;
        let code = r.take(1)?[0];
        let eps = f64::from_le_bytes(r.array()?);
        let method = match code {
            0 => AttributionMethod::Saliency,
            1 => AttributionMethod::GradientTimesInput,
            2 => AttributionMethod::epsilon_lrp(eps)?,
            c => return Err(Error::parse(ctx, format!("unknown method code {c}"))),
        };
        let mode = match r.take(1)?[0] {
            0 => AttributionMode::SinglePass,
            1 => AttributionMode::Exact,
            c => return Err(Error::parse(ctx, format!("unknown mode code {c}"))),
        };
        let probe_checksum: [u8; 32] = r.array()?;
        let n = u64::from_le_bytes(r.array()?) as usize;
        let w = u32::from_le_bytes(r.array()?) as usize;
        let h = u32::from_le_bytes(r.array()?) as usize;
        let c = u32::from_le_bytes(r.array()?) as usize;
        let passes = u64::from_le_bytes(r.array()?);
        let shape = ImageShape::new(w, h, c);
        let per = shape.len();
        let body = r.take(n * per * 4)?;
        if r.pos != bytes.len() {
            return Err(Error::parse(ctx, "trailing bytes after maps"));
        }
        let maps = body
            .chunks_exact(per * 4)
            .map(|chunk| {
                let data = chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                    .collect();
                Tensor::new(shape.tensor_shape().to_vec(), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AttributionSet {
            model_id,
            model_fingerprint,
            method,
            mode,
            probe_checksum,
            shape,
            maps,
            passes,
        })
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    ctx: &'a str,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::parse(self.ctx, "truncated attribution cache"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn string(&mut self) -> Result<String> {
        let len = u32::from_le_bytes(self.array()?) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::parse(self.ctx, e))
    }
}

/// Attribution in the model's input space for an arbitrary backward seed.
fn attribute_with_seed(model: &ModelSpec, input: &Tensor, method: AttributionMethod, seed: &Tensor) -> Result<Tensor> {
    let (_, tape) = model.graph.forward(input)?;
    let grad = model.graph.backward_with(&tape, seed, method.rule())?;
    Ok(method.combine(input, &grad))
}

/// Map for representation unit `unit` of one probe image, in the model's
/// input space (after preprocessing, before mapping back).
pub fn attribute_per_unit(model: &ModelSpec, image: &Tensor, method: AttributionMethod, unit: usize) -> Result<Tensor> {
    let dim = model.representation_dim();
    if unit >= dim {
        return Err(Error::UnitOutOfRange { unit, dim });
    }
    let input = preprocess(&model.preproc, image)?;
    let seed = Tensor::basis(dim, unit).reshape(model.graph.output_shape())?;
    attribute_with_seed(model, &input, method, &seed)
}

fn image_shape_of(image: &Tensor) -> Result<ImageShape> {
    match image.shape() {
        &[h, w, c] => Ok(ImageShape::new(w, h, c)),
        other => Err(Error::shape("probe image", &[0, 0, 0], other)),
    }
}

/// Unit-averaged map from one forward-and-backward pass, on the probe canvas.
pub fn attribute_single_pass(model: &ModelSpec, image: &Tensor, method: AttributionMethod) -> Result<Tensor> {
    let probe_shape = image_shape_of(image)?;
    let input = preprocess(&model.preproc, image)?;
    let dim = model.representation_dim();
    let seed = Tensor::filled(model.graph.output_shape(), 1.0 / dim as f64);
    let attr = attribute_with_seed(model, &input, method, &seed)?;
    unpreprocess_attribution(&model.preproc, &attr, probe_shape)
}

/// Mean of the D per-unit maps, on the probe canvas. Costs D backward passes.
pub fn attribute_exact(model: &ModelSpec, image: &Tensor, method: AttributionMethod) -> Result<Tensor> {
    let probe_shape = image_shape_of(image)?;
    let input = preprocess(&model.preproc, image)?;
    let (_, tape) = model.graph.forward(&input)?;
    let dim = model.representation_dim();
    let out_shape = model.graph.output_shape();
    let mut acc = Tensor::zeros(input.shape());
    for k in 0..dim {
        let seed = Tensor::basis(dim, k).reshape(out_shape)?;
        let grad = model.graph.backward_with(&tape, &seed, method.rule())?;
        let unit = method.combine(&input, &grad);
        acc.data_mut().iter_mut().zip(unit.data()).for_each(|(a, u)| *a += u);
    }
    let mean = acc.scale(1.0 / dim as f64);
    unpreprocess_attribution(&model.preproc, &mean, probe_shape)
}

/// Attribution maps of `model` for every probe image, in probe order.
///
/// Images are processed in parallel on the current rayon pool; each result
/// goes to its own slot, so output does not depend on scheduling.
pub fn attribute_probe(
    model: &ModelSpec,
    probe: &ProbeSet,
    method: AttributionMethod,
    mode: AttributionMode,
    exact_cap: usize,
) -> Result<AttributionSet> {
    let dim = model.representation_dim();
    if mode == AttributionMode::Exact && dim > exact_cap {
        return Err(Error::ExactModeTooLarge { dim, cap: exact_cap });
    }
    let maps = probe
        .images()
        .par_iter()
        .map(|img| match mode {
            AttributionMode::SinglePass => attribute_single_pass(model, img, method),
            AttributionMode::Exact => attribute_exact(model, img, method),
        })
        .collect::<Result<Vec<_>>>()?;
    let per_image = match mode {
        AttributionMode::SinglePass => 1,
        AttributionMode::Exact => dim as u64,
    };
    Ok(AttributionSet {
        model_id: model.id.clone(),
        model_fingerprint: model.fingerprint.clone(),
        method,
        mode,
        probe_checksum: probe.checksum(),
        shape: probe.shape,
        passes: per_image * probe.len() as u64,
        maps,
    })
}

/// Channel-averaged, min-max normalized gray image of one map. A constant
/// map renders as all zeros.
pub fn heatmap(map: &Tensor) -> Tensor {
    let s = map.shape();
    let c = s[2];
    let gray: Vec<f64> = map
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().sum::<f64>() / c as f64)
        .collect();
    let lo = gray.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gray.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = gray
        .iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect();
    Tensor::new(vec![s[0], s[1], 1], data).expect("heatmap shape")
}
