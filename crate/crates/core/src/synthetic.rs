//! Deterministic model families with known relatedness, plus synthetic probe
//! images, for self-contained end-to-end runs.
//!
//! Every model in a family shares one architecture template. Within a group,
//! the first `shared_depth` parametric layers are identical and the rest are
//! the group's base weights plus Gaussian noise scaled by `sigma` times the
//! layer's init std. Groups draw all their weights independently.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::OracleRelevance;
use crate::model_io::{ModelSpec, PreprocSpec};
use crate::model_space::{RankedSource, RankingTable};
use crate::probe::{write_netpbm, ImageShape, ProbeManifest, ProbeSet};
use crate::tensor_core::{Graph, LayerSpec, Tensor};

/// Layer layout shared by a family:
/// `conv3x3 -> relu -> maxpool2 -> conv3x3 -> tanh -> avgpool2 -> flatten -> dense -> tanh`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchTemplate {
    pub input: ImageShape,
    pub conv_channels: usize,
    pub repr_dim: usize,
    /// Odd-numbered groups take inputs at 3/4 resolution, exercising the
    /// resize path of preprocessing.
    pub heterogeneous_inputs: bool,
}

impl Default for ArchTemplate {
    fn default() -> Self {
        ArchTemplate {
            input: ImageShape::new(16, 16, 3),
            conv_channels: 6,
            repr_dim: 16,
            heterogeneous_inputs: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub groups: usize,
    pub per_group: usize,
    /// Parametric layers (counted from the input) shared exactly in a group.
    pub shared_depth: usize,
    pub sigma: f64,
    pub template: ArchTemplate,
    pub seed: u64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            groups: 4,
            per_group: 3,
            shared_depth: 1,
            sigma: 0.1,
            template: ArchTemplate::default(),
            seed: 7,
        }
    }
}

impl FamilySpec {
    pub fn validate(&self) -> Result<()> {
        if self.groups < 2 {
            return Err(Error::InvalidArgument("a family needs at least 2 groups".into()));
        }
        if self.per_group == 0 {
            return Err(Error::InvalidArgument("groups need at least one model".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        let t = &self.template;
        if t.conv_channels == 0 || t.repr_dim == 0 || t.input.channels == 0 {
            return Err(Error::InvalidArgument("template extents must be positive".into()));
        }
        if t.input.width < 8 || t.input.height < 8 {
            return Err(Error::InvalidArgument("template input must be at least 8x8".into()));
        }
        Ok(())
    }

    pub fn model_id(&self, group: usize, member: usize) -> String {
        format!("g{group}m{member}")
    }

    pub fn group_of(&self, id: &str) -> Option<usize> {
        let rest = id.strip_prefix('g')?;
        let (g, _) = rest.split_once('m')?;
        g.parse().ok()
    }

    fn input_for_group(&self, group: usize) -> ImageShape {
        let t = &self.template;
        if t.heterogeneous_inputs && group % 2 == 1 {
            ImageShape::new((t.input.width * 3 / 4).max(8), (t.input.height * 3 / 4).max(8), t.input.channels)
        } else {
            t.input
        }
    }
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// Parametric tensor shapes plus init std, in layer order.
fn param_shapes(input: ImageShape, t: &ArchTemplate) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let ch = t.conv_channels;
    let c = input.channels;
    let h = (input.height / 2) / 2;
    let w = (input.width / 2) / 2;
    let flat = h * w * ch;
    vec![
        (vec![ch, 3, 3, c], vec![ch], (2.0 / (9 * c) as f64).sqrt()),
        (vec![ch, 3, 3, ch], vec![ch], (1.0 / (9 * ch) as f64).sqrt()),
        (vec![t.repr_dim, flat], vec![t.repr_dim], (1.0 / flat as f64).sqrt()),
    ]
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect()
}

fn assemble(params: &[(Tensor, Tensor)], input: ImageShape) -> Result<Graph> {
    let layers = vec![
        LayerSpec::Conv2d {
            weight: params[0].0.clone(),
            bias: params[0].1.clone(),
            stride: 1,
            padding: 1,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool { window: 2, stride: 2 },
        LayerSpec::Conv2d {
            weight: params[1].0.clone(),
            bias: params[1].1.clone(),
            stride: 1,
            padding: 1,
        },
        LayerSpec::Tanh,
        LayerSpec::AvgPool { window: 2, stride: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            weight: params[2].0.clone(),
            bias: params[2].1.clone(),
        },
        LayerSpec::Tanh,
    ];
    Graph::new(layers, input.tensor_shape().to_vec())
}

/// All models of the family, group by group, in member order.
pub fn generate_family(spec: &FamilySpec) -> Result<Vec<ModelSpec>> {
    spec.validate()?;
    let mut models = Vec::with_capacity(spec.groups * spec.per_group);
    for g in 0..spec.groups {
        let input = spec.input_for_group(g);
        let shapes = param_shapes(input, &spec.template);
        let mut base_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        base_rng.set_stream(2 * g as u64);
        let base: Vec<(Vec<f64>, Vec<f64>, f64)> = shapes
            .iter()
            .map(|(ws, bs, std)| {
                let w = gaussian(&mut base_rng, ws.iter().product(), *std);
                let b = gaussian(&mut base_rng, bs.iter().product(), 0.05);
                (w, b, *std)
            })
            .collect();
        for m in 0..spec.per_group {
            let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
            noise_rng.set_stream(2 * g as u64 + 1);
            noise_rng.set_word_pos(m as u128 * (1 << 40));
            let params = base
                .iter()
                .zip(&shapes)
                .enumerate()
                .map(|(layer, ((w, b, std), (ws, bs, _)))| {
                    let perturb = layer >= spec.shared_depth && spec.sigma > 0.0;
                    let (dw, db) = if perturb {
                        (gaussian(&mut noise_rng, w.len(), spec.sigma * std), gaussian(&mut noise_rng, b.len(), spec.sigma * 0.05))
                    } else {
                        (vec![0.0; w.len()], vec![0.0; b.len()])
                    };
                    let w: Vec<f64> = w.iter().zip(&dw).map(|(a, d)| f32_round(a + d)).collect();
                    let b: Vec<f64> = b.iter().zip(&db).map(|(a, d)| f32_round(a + d)).collect();
                    Ok((Tensor::new(ws.clone(), w)?, Tensor::new(bs.clone(), b)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let graph = assemble(&params, input)?;
            let mut preproc = PreprocSpec::identity(input.width, input.height, input.channels);
            preproc.mean = vec![0.5; input.channels];
            preproc.std = vec![0.25; input.channels];
            models.push(ModelSpec::new(spec.model_id(g, m), format!("group{g}"), preproc, graph)?);
        }
    }
    Ok(models)
}

/// Write each model as a bundle under `dir/<id>/`; returns bundle paths.
pub fn write_family(models: &[ModelSpec], dir: &Path) -> Result<Vec<PathBuf>> {
    models
        .iter()
        .map(|m| {
            let p = dir.join(&m.id);
            m.save(&p)?;
            Ok(p)
        })
        .collect()
}

/// Same-group members as relevant sources.
pub fn group_relevance(spec: &FamilySpec) -> Result<OracleRelevance> {
    let mut sets = BTreeMap::new();
    for g in 0..spec.groups {
        for m in 0..spec.per_group {
            let rel: HashSet<String> = (0..spec.per_group).filter(|&o| o != m).map(|o| spec.model_id(g, o)).collect();
            sets.insert(spec.model_id(g, m), rel);
        }
    }
    OracleRelevance::from_sets(sets)
}

/// Oracle rankings: same-group sources first, then the rest, each block by id.
pub fn group_oracle(spec: &FamilySpec) -> Result<RankingTable> {
    let mut ids: Vec<String> = (0..spec.groups)
        .flat_map(|g| (0..spec.per_group).map(move |m| (g, m)))
        .map(|(g, m)| spec.model_id(g, m))
        .collect();
    ids.sort();
    let rows = ids
        .iter()
        .map(|t| {
            let tg = spec.group_of(t);
            let mut others: Vec<&String> = ids.iter().filter(|s| *s != t).collect();
            others.sort_by_key(|s| (spec.group_of(s) != tg, (*s).clone()));
            others
                .into_iter()
                .enumerate()
                .map(|(r, s)| RankedSource {
                    id: s.clone(),
                    distance: None,
                    rank: r + 1,
                })
                .collect()
        })
        .collect();
    RankingTable::from_rows(ids, rows)
}

/// Smooth random images: a per-channel linear gradient plus a few Gaussian
/// blobs, rescaled to `[0, 1]` and quantized to 8-bit levels so that writing
/// and re-reading them is lossless.
pub fn generate_probe(n: usize, shape: ImageShape, seed: u64) -> Result<ProbeSet> {
    if n == 0 {
        return Err(Error::EmptyProbe);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let mut data = vec![0.0; h * w * c];
        for ch in 0..c {
            let gx: f64 = rng.random_range(-1.0..1.0);
            let gy: f64 = rng.random_range(-1.0..1.0);
            let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.0..h as f64),
                        rng.random_range(0.0..w as f64),
                        rng.random_range(1.0..(h.max(w) as f64 / 3.0).max(1.5)),
                        rng.random_range(-1.5..1.5),
                    )
                })
                .collect();
            for r in 0..h {
                for q in 0..w {
                    let (y, x) = (r as f64 / h as f64, q as f64 / w as f64);
                    let mut v = gx * x + gy * y;
                    for &(br, bq, rad, amp) in &blobs {
                        let d2 = (r as f64 - br).powi(2) + (q as f64 - bq).powi(2);
                        v += amp * (-d2 / (2.0 * rad * rad)).exp();
                    }
                    data[(r * w + q) * c + ch] = v;
                }
            }
        }
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        for v in &mut data {
            *v = ((*v - lo) / span * 255.0).round() / 255.0;
        }
        images.push(Tensor::new(shape.tensor_shape().to_vec(), data)?);
    }
    let ext = if c == 1 { "pgm" } else { "ppm" };
    let sources = (0..n).map(|i| PathBuf::from(format!("img{i:05}.{ext}"))).collect();
    ProbeSet::new(format!("synthetic-{seed}"), shape, images, sources)
}

/// Write the probe's images and a `probe.json` manifest into `dir`.
pub fn write_probe(probe: &ProbeSet, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (img, rel) in probe.images().iter().zip(probe.sources()) {
        write_netpbm(&dir.join(rel), img)?;
    }
    let manifest = ProbeManifest {
        name: probe.name.clone(),
        width: probe.shape.width,
        height: probe.shape.height,
        channels: probe.shape.channels,
        images: probe.sources().to_vec(),
    };
    let path = dir.join("probe.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::load_probe;

    #[test]
    fn same_seed_same_bytes() {
        let spec = FamilySpec::default();
        let a = generate_family(&spec).unwrap();
        let b = generate_family(&spec).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bundle_bytes(), y.to_bundle_bytes());
        }
        assert_eq!(a.len(), 12);
    }

    #[test]
    fn zero_sigma_members_identical_weights() {
        let spec = FamilySpec {
            sigma: 0.0,
            ..FamilySpec::default()
        };
        let models = generate_family(&spec).unwrap();
        assert_eq!(models[0].graph, models[1].graph);
        assert_ne!(models[0].graph, models[3].graph);
    }

    #[test]
    fn shared_layers_equal_and_later_layers_perturbed() {
        let models = generate_family(&FamilySpec::default()).unwrap();
        let (a, b) = (&models[0].graph.layers(), &models[1].graph.layers());
        assert_eq!(a[0], b[0]);
        assert_ne!(a[3], b[3]);
    }

    #[test]
    fn bundles_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let models = generate_family(&FamilySpec::default()).unwrap();
        let paths = write_family(&models[..2], dir.path()).unwrap();
        let loaded = crate::model_io::load_model(&paths[1]).unwrap();
        assert_eq!(loaded, models[1]);
    }

    #[test]
    fn probe_round_trip_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let probe = generate_probe(4, ImageShape::new(10, 8, 3), 3).unwrap();
        let path = write_probe(&probe, dir.path()).unwrap();
        let back = load_probe(&path).unwrap();
        assert_eq!(back.images(), probe.images());
        assert_eq!(back.checksum(), probe.checksum());
    }

    #[test]
    fn oracle_puts_group_first() {
        let spec = FamilySpec::default();
        let t = group_oracle(&spec).unwrap();
        assert_eq!(t.ordered_sources("g1m0").unwrap()[..2], ["g1m1".to_string(), "g1m2".to_string()]);
        let rel = group_relevance(&spec).unwrap();
        assert_eq!(rel.relevant["g2m1"].len(), 2);
    }

    #[test]
    fn invalid_specs() {
        let mut s = FamilySpec {
            groups: 1,
            ..FamilySpec::default()
        };
        assert!(generate_family(&s).is_err());
        s.groups = 2;
        s.sigma = -1.0;
        assert!(generate_family(&s).is_err());
    }
}
