use super::layers::{DerivativeRule, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A validated chain of layers with its inferred shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    /// Output shape of each layer, same length as `layers`.
    shapes: Vec<Vec<usize>>,
}

/// Activations recorded by one forward pass: `activations[0]` is the input,
/// `activations[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct TapeState {
    activations: Vec<Tensor>,
}

impl TapeState {
    /// Input to layer `l` (its pre-activation for element-wise layers).
    pub fn pre(&self, l: usize) -> &Tensor {
        &self.activations[l]
    }

    pub fn post(&self, l: usize) -> &Tensor {
        &self.activations[l + 1]
    }

    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("tape is never empty")
    }

    pub fn layer_count(&self) -> usize {
        self.activations.len() - 1
    }
}

/// Per-layer output shapes for `layers` applied to `input_shape`.
pub fn infer_shapes(layers: &[LayerSpec], input_shape: &[usize]) -> Result<Vec<Vec<usize>>> {
    if layers.is_empty() {
        return Err(Error::EmptyGraph);
    }
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "input shape must have positive extents, got {input_shape:?}"
        )));
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input_shape.to_vec();
    for (i, layer) in layers.iter().enumerate() {
        current = layer.output_shape(i, &current)?;
        shapes.push(current.clone());
    }
    Ok(shapes)
}

impl Graph {
    pub fn new(layers: Vec<LayerSpec>, input_shape: Vec<usize>) -> Result<Self> {
        let shapes = infer_shapes(&layers, &input_shape)?;
        Ok(Graph {
            layers,
            input_shape,
            shapes,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("graph is never empty")
    }

    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    /// Representation dimension D.
    pub fn representation_dim(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::parameter_count).sum()
    }

    pub fn has_nonlinearity(&self) -> bool {
        self.layers.iter().any(LayerSpec::is_nonlinearity)
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, TapeState)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::shape("graph input", &self.input_shape, input.shape()));
        }
        input.ensure_finite(|| "graph input".into())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for (i, (layer, shape)) in self.layers.iter().zip(&self.shapes).enumerate() {
            let y = layer.forward(activations.last().unwrap(), shape);
            y.ensure_finite(|| format!("forward of layer {i} ({layer})"))?;
            activations.push(y);
        }
        let representation = activations.last().unwrap().clone();
        Ok((representation, TapeState { activations }))
    }

    /// Forward pass that keeps only the representation.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::shape("graph input", &self.input_shape, input.shape()));
        }
        let mut x = input.clone();
        for (i, (layer, shape)) in self.layers.iter().zip(&self.shapes).enumerate() {
            x = layer.forward(&x, shape);
            x.ensure_finite(|| format!("forward of layer {i} ({layer})"))?;
        }
        Ok(x)
    }

    /// Vector-Jacobian product `seed^T dR/dx` at the taped input.
    pub fn backward(&self, tape: &TapeState, seed: &Tensor) -> Result<Tensor> {
        self.backward_with(tape, seed, DerivativeRule::Gradient)
    }

    /// Backward pass with every nonlinearity's derivative replaced by
    /// `f(z) / (z + eps * sign(z))`. Linear, conv and pool layers are
    /// propagated exactly as in [`Graph::backward`].
    pub fn backward_modified(&self, tape: &TapeState, seed: &Tensor, epsilon: f64) -> Result<Tensor> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        self.backward_with(tape, seed, DerivativeRule::Epsilon(epsilon))
    }

    pub fn backward_with(
        &self,
        tape: &TapeState,
        seed: &Tensor,
        rule: DerivativeRule,
    ) -> Result<Tensor> {
        if tape.layer_count() != self.layers.len() {
            return Err(Error::shape(
                "tape length",
                &[self.layers.len()],
                &[tape.layer_count()],
            ));
        }
        if seed.shape() != self.output_shape() {
            return Err(Error::shape("backward seed", self.output_shape(), seed.shape()));
        }
        let mut grad = seed.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.backward(tape.pre(l), tape.post(l), &grad, rule);
            grad.ensure_finite(|| format!("backward of layer {l} ({layer})"))?;
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(rows: usize, cols: usize, w: Vec<f64>, b: Vec<f64>) -> LayerSpec {
        LayerSpec::Dense {
            weight: Tensor::new(vec![rows, cols], w).unwrap(),
            bias: Tensor::new(vec![rows], b).unwrap(),
        }
    }

    fn conv(out_c: usize, k: usize, in_c: usize, stride: usize, padding: usize) -> LayerSpec {
        LayerSpec::Conv2d {
            weight: Tensor::zeros(&[out_c, k, k, in_c]),
            bias: Tensor::zeros(&[out_c]),
            stride,
            padding,
        }
    }

    #[test]
    fn dense_shape_rule() {
        let shapes = infer_shapes(&[dense(4, 3, vec![0.0; 12], vec![0.0; 4])], &[3]).unwrap();
        assert_eq!(shapes, vec![vec![4]]);
    }

    #[test]
    fn padded_conv_keeps_spatial_extent() {
        let shapes = infer_shapes(&[conv(8, 3, 3, 1, 1)], &[16, 16, 3]).unwrap();
        assert_eq!(shapes, vec![vec![16, 16, 8]]);
    }

    #[test]
    fn dense_rejects_wrong_inner_dim() {
        let err = infer_shapes(&[dense(4, 3, vec![0.0; 12], vec![0.0; 4])], &[5]).unwrap_err();
        match err {
            Error::ShapeMismatch { expected, got, .. } => {
                assert_eq!(expected, vec![3]);
                assert_eq!(got, vec![5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(matches!(infer_shapes(&[], &[3]), Err(Error::EmptyGraph)));
    }

    #[test]
    fn zero_stride_rejected() {
        assert!(matches!(
            infer_shapes(&[conv(2, 3, 1, 0, 0)], &[5, 5, 1]),
            Err(Error::InvalidLayer { .. })
        ));
        assert!(matches!(
            infer_shapes(&[LayerSpec::MaxPool { window: 0, stride: 1 }], &[4, 4, 1]),
            Err(Error::InvalidLayer { .. })
        ));
    }

    #[test]
    fn flatten_is_identity_on_values() {
        let g = Graph::new(vec![LayerSpec::Flatten], vec![2, 2, 1]).unwrap();
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, -2.0, 3.0, 4.5]).unwrap();
        let (r, _) = g.forward(&x).unwrap();
        assert_eq!(r.shape(), &[4]);
        assert_eq!(r.data(), x.data());
    }

    #[test]
    fn relu_clamps_negative() {
        let g = Graph::new(
            vec![dense(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]), LayerSpec::Relu],
            vec![2],
        )
        .unwrap();
        let (r, tape) = g.forward(&Tensor::from_vec(vec![-1.0, 2.0])).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert_eq!(tape.layer_count(), 2);
        assert_eq!(tape.pre(1).data(), &[-1.0, 2.0]);
    }

    #[test]
    fn linear_jacobian_rows() {
        let w = vec![1.0, 2.0, 3.0, -4.0, 5.0, -6.0];
        let g = Graph::new(vec![dense(2, 3, w.clone(), vec![0.5, -0.5])], vec![3]).unwrap();
        let (_, tape) = g.forward(&Tensor::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        for k in 0..2 {
            let grad = g.backward(&tape, &Tensor::basis(2, k)).unwrap();
            assert_eq!(grad.data(), &w[k * 3..k * 3 + 3]);
        }
        let zero = g.backward(&tape, &Tensor::zeros(&[2])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_and_seed_shapes_checked() {
        let g = Graph::new(vec![dense(2, 3, vec![0.0; 6], vec![0.0; 2])], vec![3]).unwrap();
        assert!(g.forward(&Tensor::zeros(&[4])).is_err());
        let (_, tape) = g.forward(&Tensor::zeros(&[3])).unwrap();
        assert!(g.backward(&tape, &Tensor::zeros(&[3])).is_err());
        assert!(g.backward_modified(&tape, &Tensor::zeros(&[2]), 0.0).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let g = Graph::new(
            vec![dense(1, 1, vec![1e308], vec![0.0]), dense(1, 1, vec![1e308], vec![0.0])],
            vec![1],
        )
        .unwrap();
        assert!(matches!(
            g.forward(&Tensor::from_vec(vec![10.0])),
            Err(Error::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn modified_relu_close_to_gradient_for_positive_inputs() {
        let g = Graph::new(vec![LayerSpec::Relu], vec![3]).unwrap();
        let x = Tensor::from_vec(vec![0.5, 1.0, 2.0]);
        let (_, tape) = g.forward(&x).unwrap();
        let seed = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        let eps = 1e-4;
        let plain = g.backward(&tape, &seed).unwrap();
        let modified = g.backward_modified(&tape, &seed, eps).unwrap();
        for ((p, m), z) in plain.data().iter().zip(modified.data()).zip(x.data()) {
            assert!((p - m).abs() <= eps / z * p.abs());
        }
    }

    #[test]
    fn maxpool_routes_to_first_max() {
        let g = Graph::new(vec![LayerSpec::MaxPool { window: 2, stride: 2 }], vec![2, 2, 1]).unwrap();
        let x = Tensor::new(vec![2, 2, 1], vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        let (r, tape) = g.forward(&x).unwrap();
        assert_eq!(r.data(), &[3.0]);
        let grad = g.backward(&tape, &Tensor::filled(&[1, 1, 1], 2.0)).unwrap();
        assert_eq!(grad.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
