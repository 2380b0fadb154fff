//! Helpers shared by the integration tests: random small graphs and
//! independent reference implementations.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tmspace::tensor_core::{Graph, LayerSpec, Tensor};

pub fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn activation(rng: &mut ChaCha8Rng) -> LayerSpec {
    match rng.random_range(0..3) {
        0 => LayerSpec::Relu,
        1 => LayerSpec::Sigmoid,
        _ => LayerSpec::Tanh,
    }
}

fn dense(rng: &mut ChaCha8Rng, out: usize, inp: usize, bias: bool) -> LayerSpec {
    LayerSpec::Dense {
        weight: gaussian(rng, &[out, inp], 0.6),
        bias: if bias { gaussian(rng, &[out], 0.3) } else { Tensor::zeros(&[out]) },
    }
}

fn conv(rng: &mut ChaCha8Rng, out_c: usize, k: usize, in_c: usize, stride: usize, padding: usize, bias: bool) -> LayerSpec {
    LayerSpec::Conv2d {
        weight: gaussian(rng, &[out_c, k, k, in_c], 0.5),
        bias: if bias { gaussian(rng, &[out_c], 0.3) } else { Tensor::zeros(&[out_c]) },
        stride,
        padding,
    }
}

/// Flattened size after the given layers, for sizing the next dense layer.
fn flat_len(layers: &[LayerSpec], input: &[usize]) -> usize {
    tmspace::tensor_core::infer_shapes(layers, input).unwrap().last().unwrap().iter().product()
}

/// Small random chain graph (at most ~200 parameters). `variant` selects one
/// of six layouts so that a run over consecutive variants touches every
/// layer kind.
pub fn random_graph(rng: &mut ChaCha8Rng, variant: usize, bias: bool) -> Graph {
    let h = rng.random_range(4..=6);
    let w = rng.random_range(4..=6);
    let c = rng.random_range(1..=2);
    let spatial = vec![h, w, c];
    let (mut layers, input) = match variant % 6 {
        0 => {
            let n = rng.random_range(3..=8);
            let m = rng.random_range(3..=6);
            (vec![dense(rng, m, n, bias), activation(rng), dense(rng, 3, m, bias), activation(rng)], vec![n])
        }
        1 => (
            vec![conv(rng, 2, 3, c, 1, 1, bias), activation(rng), LayerSpec::MaxPool { window: 2, stride: 2 }, LayerSpec::Flatten],
            spatial,
        ),
        2 => (
            vec![conv(rng, 2, 2, c, 1, 0, bias), activation(rng), LayerSpec::AvgPool { window: 2, stride: 1 }, LayerSpec::Flatten],
            spatial,
        ),
        3 => (
            vec![conv(rng, 2, 3, c, 2, 1, bias), activation(rng), conv(rng, 2, 2, 2, 1, 0, bias), activation(rng), LayerSpec::Flatten],
            spatial,
        ),
        4 => (
            vec![LayerSpec::AvgPool { window: 2, stride: 1 }, conv(rng, 2, 2, c, 1, 0, bias), LayerSpec::MaxPool { window: 2, stride: 1 }, LayerSpec::Flatten],
            spatial,
        ),
        _ => (vec![LayerSpec::Flatten], spatial),
    };
    let n = flat_len(&layers, &input);
    let m = rng.random_range(2..=4);
    layers.push(dense(rng, m, n, bias));
    layers.push(activation(rng));
    Graph::new(layers, input).unwrap()
}

/// True when some relu input or maxpool window sits within `margin` of a
/// point where the function is not differentiable.
pub fn near_kink(graph: &Graph, x: &Tensor, margin: f64) -> bool {
    let (_, tape) = graph.forward(x).unwrap();
    graph.layers().iter().enumerate().any(|(l, layer)| {
        let z = tape.pre(l);
        match layer {
            LayerSpec::Relu => z.data().iter().any(|v| v.abs() < margin),
            LayerSpec::MaxPool { window, stride } => {
                let s = z.shape();
                let (h, w, c) = (s[0], s[1], s[2]);
                let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
                (0..oh).any(|r| {
                    (0..ow).any(|q| {
                        (0..c).any(|ch| {
                            let mut vals: Vec<f64> = (0..*window)
                                .flat_map(|dy| (0..*window).map(move |dx| (dy, dx)))
                                .map(|(dy, dx)| z.data()[((r * stride + dy) * w + q * stride + dx) * c + ch])
                                .collect();
                            vals.sort_by(|a, b| b.total_cmp(a));
                            vals[0] - vals[1] < margin
                        })
                    })
                })
            }
            _ => false,
        }
    })
}

/// True when a sigmoid or tanh input is so large that the derivative drops
/// below what central differences can resolve.
pub fn saturated(graph: &Graph, x: &Tensor, limit: f64) -> bool {
    let (_, tape) = graph.forward(x).unwrap();
    graph.layers().iter().enumerate().any(|(l, layer)| {
        matches!(layer, LayerSpec::Sigmoid | LayerSpec::Tanh) && tape.pre(l).data().iter().any(|v| v.abs() > limit)
    })
}

/// Random input away from kinks and saturated regions.
pub fn smooth_input(rng: &mut ChaCha8Rng, graph: &Graph) -> Tensor {
    for _ in 0..200 {
        let x = gaussian(rng, graph.input_shape(), 1.0);
        if !near_kink(graph, &x, 1e-3) && !saturated(graph, &x, 6.0) {
            return x;
        }
    }
    panic!("no kink-free input found");
}

/// Plain nested-loop convolution, `[h, w, c]` input and
/// `[out_c, kh, kw, in_c]` kernel.
pub fn naive_conv(x: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Tensor {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (oc, kh, kw) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; oh * ow * oc];
    for o in 0..oc {
        for r in 0..oh {
            for q in 0..ow {
                let mut acc = bias.data()[o];
                for i in 0..kh {
                    for j in 0..kw {
                        let y = (r * stride + i) as isize - padding as isize;
                        let xx = (q * stride + j) as isize - padding as isize;
                        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                            continue;
                        }
                        for ch in 0..c {
                            let xv = x.data()[((y as usize) * w + xx as usize) * c + ch];
                            let wv = weight.data()[((o * kh + i) * kw + j) * c + ch];
                            acc += xv * wv;
                        }
                    }
                }
                out[(r * ow + q) * oc + o] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, oc], out).unwrap()
}

/// Central differences of output unit `k` with respect to every input element.
pub fn finite_difference(graph: &Graph, x: &Tensor, k: usize, h: f64) -> Tensor {
    let mut probe = x.clone();
    let g = (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let plus = graph.infer(&probe).unwrap().data()[k];
            probe.data_mut()[i] = orig - h;
            let minus = graph.infer(&probe).unwrap().data()[k];
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect();
    Tensor::new(x.shape().to_vec(), g).unwrap()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors (L2).
pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
