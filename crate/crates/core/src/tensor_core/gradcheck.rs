use super::graph::Graph;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Backward pass compared against central differences of `<seed, f(x)>`.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Tensor,
    pub numeric: Tensor,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in the L2 norm;
    /// zero when both vanish.
    pub relative_error: f64,
}

pub fn relative_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    let diff = a.zip_map(b, |x, y| x - y)?.norm();
    let scale = a.norm().max(b.norm());
    Ok(if scale == 0.0 { 0.0 } else { diff / scale })
}

pub fn check_gradient(graph: &Graph, x: &Tensor, seed: &Tensor, h: f64) -> Result<GradCheck> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let (_, tape) = graph.forward(x)?;
    let analytic = graph.backward(&tape, seed)?;
    let mut probe = x.clone();
    let mut numeric = vec![0.0; x.len()];
    for (i, g) in numeric.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = graph.infer(&probe)?.dot(seed)?;
        probe.data_mut()[i] = orig - h;
        let minus = graph.infer(&probe)?.dot(seed)?;
        probe.data_mut()[i] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    let numeric = Tensor::new(x.shape().to_vec(), numeric)?;
    let relative_error = relative_error(&analytic, &numeric)?;
    Ok(GradCheck {
        analytic,
        numeric,
        relative_error,
    })
}
