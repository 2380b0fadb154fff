use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One layer of a chain-structured encoder.
///
/// Spatial tensors are `[height, width, channels]`. Convolution kernels are
/// `[out_channels, kernel_h, kernel_w, in_channels]`; dense weights are
/// `[out, in]` and expect a rank-1 input (insert `Flatten` first).
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
        padding: usize,
    },
    Relu,
    Sigmoid,
    Tanh,
    AvgPool {
        window: usize,
        stride: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
}

/// How the backward pass treats element-wise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DerivativeRule {
    /// Ordinary local derivative f'(z).
    Gradient,
    /// f(z) / (z + eps * sign(z)), with sign(0) = +1.
    Epsilon(f64),
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind_name())
    }
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Tanh => "tanh",
            LayerSpec::AvgPool { .. } => "avgpool",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Flatten => "flatten",
        }
    }

    pub fn is_nonlinearity(&self) -> bool {
        matches!(self, LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Tanh)
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            LayerSpec::Dense { weight, bias } | LayerSpec::Conv2d { weight, bias, .. } => {
                weight.len() + bias.len()
            }
            _ => 0,
        }
    }

    /// Output shape for a given input shape; `index` is used for error context.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let ctx = || format!("layer {index} ({self})");
        match self {
            LayerSpec::Dense { weight, bias } => {
                let ws = weight.shape();
                if ws.len() != 2 {
                    return Err(Error::InvalidLayer {
                        layer: index,
                        message: format!("dense weight must be rank 2, got {ws:?}"),
                    });
                }
                if bias.shape() != [ws[0]] {
                    return Err(Error::shape(ctx(), &[ws[0]], bias.shape()));
                }
                if input != [ws[1]] {
                    return Err(Error::shape(ctx(), &[ws[1]], input));
                }
                Ok(vec![ws[0]])
            }
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let ws = weight.shape();
                if ws.len() != 4 {
                    return Err(Error::InvalidLayer {
                        layer: index,
                        message: format!("conv2d weight must be rank 4, got {ws:?}"),
                    });
                }
                if *stride == 0 {
                    return Err(Error::InvalidLayer {
                        layer: index,
                        message: "stride must be at least 1".into(),
                    });
                }
                if bias.shape() != [ws[0]] {
                    return Err(Error::shape(ctx(), &[ws[0]], bias.shape()));
                }
                if input.len() != 3 || input[2] != ws[3] {
                    let mut expected = input.to_vec();
                    expected.resize(3, 0);
                    expected[2] = ws[3];
                    return Err(Error::shape(ctx(), &expected, input));
                }
                let (kh, kw) = (ws[1], ws[2]);
                let ph = input[0] + 2 * padding;
                let pw = input[1] + 2 * padding;
                if ph < kh || pw < kw {
                    return Err(Error::shape(ctx(), &[kh, kw], &[ph, pw]));
                }
                Ok(vec![(ph - kh) / stride + 1, (pw - kw) / stride + 1, ws[0]])
            }
            LayerSpec::AvgPool { window, stride } | LayerSpec::MaxPool { window, stride } => {
                if *window == 0 || *stride == 0 {
                    return Err(Error::InvalidLayer {
                        layer: index,
                        message: "pool window and stride must be at least 1".into(),
                    });
                }
                if input.len() != 3 || input[0] < *window || input[1] < *window {
                    return Err(Error::shape(ctx(), &[*window, *window, 1], input));
                }
                Ok(vec![
                    (input[0] - window) / stride + 1,
                    (input[1] - window) / stride + 1,
                    input[2],
                ])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Forward through this layer. The caller guarantees `out_shape` came
    /// from [`LayerSpec::output_shape`] for `x.shape()`.
    pub(crate) fn forward(&self, x: &Tensor, out_shape: &[usize]) -> Tensor {
        match self {
            LayerSpec::Dense { weight, bias } => {
                let (rows, cols) = (weight.shape()[0], weight.shape()[1]);
                let w = weight.data();
                let xd = x.data();
                let out = (0..rows)
                    .map(|r| {
                        w[r * cols..(r + 1) * cols]
                            .iter()
                            .zip(xd)
                            .fold(bias.data()[r], |acc, (a, b)| acc + a * b)
                    })
                    .collect();
                Tensor::new(out_shape.to_vec(), out).expect("dense output shape")
            }
            LayerSpec::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => conv2d_forward(x, weight, bias, *stride, *padding, out_shape),
            LayerSpec::Relu => x.map(|z| z.max(0.0)),
            LayerSpec::Sigmoid => x.map(|z| 1.0 / (1.0 + (-z).exp())),
            LayerSpec::Tanh => x.map(f64::tanh),
            LayerSpec::AvgPool { window, stride } => {
                let norm = 1.0 / (window * window) as f64;
                pool_forward(x, *window, *stride, out_shape, |vals| {
                    vals.iter().sum::<f64>() * norm
                })
            }
            LayerSpec::MaxPool { window, stride } => {
                pool_forward(x, *window, *stride, out_shape, |vals| {
                    vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                })
            }
            LayerSpec::Flatten => x.clone().reshape(out_shape).expect("flatten shape"),
        }
    }

    /// Vector-Jacobian product through this layer.
    ///
    /// `x` and `y` are this layer's cached input and output, `grad` has the
    /// shape of `y`.
    pub(crate) fn backward(
        &self,
        x: &Tensor,
        y: &Tensor,
        grad: &Tensor,
        rule: DerivativeRule,
    ) -> Tensor {
        match self {
            LayerSpec::Dense { weight, .. } => {
                let (rows, cols) = (weight.shape()[0], weight.shape()[1]);
                let w = weight.data();
                let g = grad.data();
                let mut out = vec![0.0; cols];
                for r in 0..rows {
                    let gr = g[r];
                    for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                        *o += wv * gr;
                    }
                }
                Tensor::new(x.shape().to_vec(), out).expect("dense grad shape")
            }
            LayerSpec::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => conv2d_backward_input(x.shape(), weight, *stride, *padding, grad),
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::Tanh => {
                let local: Vec<f64> = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&z, &fz)| match rule {
                        DerivativeRule::Gradient => match self {
                            LayerSpec::Relu => {
                                if z > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            LayerSpec::Sigmoid => fz * (1.0 - fz),
                            _ => 1.0 - fz * fz,
                        },
                        DerivativeRule::Epsilon(eps) => {
                            let sign = if z >= 0.0 { 1.0 } else { -1.0 };
                            fz / (z + eps * sign)
                        }
                    })
                    .collect();
                let data = grad
                    .data()
                    .iter()
                    .zip(&local)
                    .map(|(g, l)| g * l)
                    .collect();
                Tensor::new(x.shape().to_vec(), data).expect("activation grad shape")
            }
            LayerSpec::AvgPool { window, stride } => {
                let norm = 1.0 / (window * window) as f64;
                pool_backward(x.shape(), *window, *stride, grad, |_, _| None, norm)
            }
            LayerSpec::MaxPool { window, stride } => {
                let xs = x.shape();
                let (w, c) = (xs[1], xs[2]);
                let xd = x.data();
                pool_backward(
                    xs,
                    *window,
                    *stride,
                    grad,
                    |(r0, c0), ch| {
                        // first maximum in row-major scan order wins
                        let mut best = (r0, c0);
                        let mut best_v = f64::NEG_INFINITY;
                        for r in r0..r0 + window {
                            for q in c0..c0 + window {
                                let v = xd[(r * w + q) * c + ch];
                                if v > best_v {
                                    best_v = v;
                                    best = (r, q);
                                }
                            }
                        }
                        Some(best)
                    },
                    1.0,
                )
            }
            LayerSpec::Flatten => grad.clone().reshape(x.shape()).expect("flatten grad shape"),
        }
    }
}

fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    out_shape: &[usize],
) -> Tensor {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ws = weight.shape();
    let (cout, kh, kw) = (ws[0], ws[1], ws[2]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0; oh * ow * cout];
    for orow in 0..oh {
        for ocol in 0..ow {
            for oc in 0..cout {
                let mut acc = bias.data()[oc];
                for i in 0..kh {
                    let r = (orow * stride + i) as isize - padding as isize;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    for j in 0..kw {
                        let q = (ocol * stride + j) as isize - padding as isize;
                        if q < 0 || q >= w as isize {
                            continue;
                        }
                        let xbase = (r as usize * w + q as usize) * cin;
                        let wbase = ((oc * kh + i) * kw + j) * cin;
                        for ic in 0..cin {
                            acc += wd[wbase + ic] * xd[xbase + ic];
                        }
                    }
                }
                out[(orow * ow + ocol) * cout + oc] = acc;
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out).expect("conv output shape")
}

fn conv2d_backward_input(
    in_shape: &[usize],
    weight: &Tensor,
    stride: usize,
    padding: usize,
    grad: &Tensor,
) -> Tensor {
    let (h, w, cin) = (in_shape[0], in_shape[1], in_shape[2]);
    let ws = weight.shape();
    let (cout, kh, kw) = (ws[0], ws[1], ws[2]);
    let (oh, ow) = (grad.shape()[0], grad.shape()[1]);
    let gd = grad.data();
    let wd = weight.data();
    let mut out = vec![0.0; h * w * cin];
    for orow in 0..oh {
        for ocol in 0..ow {
            for oc in 0..cout {
                let g = gd[(orow * ow + ocol) * cout + oc];
                if g == 0.0 {
                    continue;
                }
                for i in 0..kh {
                    let r = (orow * stride + i) as isize - padding as isize;
                    if r < 0 || r >= h as isize {
                        continue;
                    }
                    for j in 0..kw {
                        let q = (ocol * stride + j) as isize - padding as isize;
                        if q < 0 || q >= w as isize {
                            continue;
                        }
                        let xbase = (r as usize * w + q as usize) * cin;
                        let wbase = ((oc * kh + i) * kw + j) * cin;
                        for ic in 0..cin {
                            out[xbase + ic] += wd[wbase + ic] * g;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), out).expect("conv grad shape")
}

fn pool_forward(
    x: &Tensor,
    window: usize,
    stride: usize,
    out_shape: &[usize],
    reduce: impl Fn(&[f64]) -> f64,
) -> Tensor {
    let (w, c) = (x.shape()[1], x.shape()[2]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let xd = x.data();
    let mut out = vec![0.0; oh * ow * c];
    let mut buf = Vec::with_capacity(window * window);
    for orow in 0..oh {
        for ocol in 0..ow {
            for ch in 0..c {
                buf.clear();
                for r in orow * stride..orow * stride + window {
                    for q in ocol * stride..ocol * stride + window {
                        buf.push(xd[(r * w + q) * c + ch]);
                    }
                }
                out[(orow * ow + ocol) * c + ch] = reduce(&buf);
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out).expect("pool output shape")
}

/// `route` picks a single input cell per window (max pooling) or returns
/// `None` to spread the gradient over the whole window, scaled by `norm`.
fn pool_backward(
    in_shape: &[usize],
    window: usize,
    stride: usize,
    grad: &Tensor,
    route: impl Fn((usize, usize), usize) -> Option<(usize, usize)>,
    norm: f64,
) -> Tensor {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (grad.shape()[0], grad.shape()[1]);
    let gd = grad.data();
    let mut out = vec![0.0; h * w * c];
    for orow in 0..oh {
        for ocol in 0..ow {
            for ch in 0..c {
                let g = gd[(orow * ow + ocol) * c + ch];
                let origin = (orow * stride, ocol * stride);
                match route(origin, ch) {
                    Some((r, q)) => out[(r * w + q) * c + ch] += g * norm,
                    None => {
                        for r in origin.0..origin.0 + window {
                            for q in origin.1..origin.1 + window {
                                out[(r * w + q) * c + ch] += g * norm;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), out).expect("pool grad shape")
}
