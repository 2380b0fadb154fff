//! SVCCA between model representations over the probe set.
//!
//! Each model's activations form a `D x N_p` matrix. Rows are centered, the
//! matrix is truncated to its leading right-singular subspace explaining a
//! given share of the variance, and the canonical correlations between two
//! truncated subspaces are the singular values of `V_a^T V_b` (the
//! orthonormal bases are already whitened). The score is their mean.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model_io::{preprocess, ModelSpec};
use crate::model_space::{LabeledMatrix, MatrixKind};
use crate::probe::ProbeSet;

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.99;

/// Responses of every representation unit (rows) to every probe image
/// (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    pub model_id: String,
    pub probe_checksum: [u8; 32],
    values: DMatrix<f64>,
}

impl ActivationMatrix {
    /// `columns[j]` is the representation for probe image `j`.
    pub fn from_columns(model_id: impl Into<String>, probe_checksum: [u8; 32], columns: &[Vec<f64>]) -> Result<Self> {
        let model_id = model_id.into();
        let d = columns.first().map(Vec::len).unwrap_or(0);
        if d == 0 || columns.iter().any(|c| c.len() != d) {
            return Err(Error::InvalidArgument(format!(
                "activation columns for {model_id} must be non-empty and equal length"
            )));
        }
        let values = DMatrix::from_fn(d, columns.len(), |i, j| columns[j][i]);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                context: format!("activations of {model_id}"),
            });
        }
        Ok(ActivationMatrix {
            model_id,
            probe_checksum,
            values,
        })
    }

    pub fn from_matrix(model_id: impl Into<String>, probe_checksum: [u8; 32], values: DMatrix<f64>) -> Result<Self> {
        let model_id = model_id.into();
        if values.nrows() == 0 || values.ncols() == 0 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad activation matrix for {model_id}")));
        }
        Ok(ActivationMatrix {
            model_id,
            probe_checksum,
            values,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// D
    pub fn neurons(&self) -> usize {
        self.values.nrows()
    }

    /// N_p
    pub fn samples(&self) -> usize {
        self.values.ncols()
    }
}

/// Representation of every probe image, one column per image.
pub fn collect_activations(model: &ModelSpec, probe: &ProbeSet) -> Result<ActivationMatrix> {
    let columns = probe
        .images()
        .par_iter()
        .map(|img| {
            let x = preprocess(&model.preproc, img)?;
            Ok(model.graph.infer(&x)?.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    ActivationMatrix::from_columns(model.id.clone(), probe.checksum(), &columns)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "variance threshold must be in (0, 1], got {threshold}"
        )));
    }
    Ok(())
}

/// Orthonormal basis (`N_p x k`) of the leading centered row-space directions.
fn reduced_basis(a: &ActivationMatrix, threshold: f64) -> Result<DMatrix<f64>> {
    let mut m = a.values.clone();
    let scale = m.norm();
    for mut row in m.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let s_max = sv.first().copied().unwrap_or(0.0);
    let tol = s_max * (a.neurons().max(a.samples()) as f64) * f64::EPSILON;
    let rank = sv.iter().take_while(|&&s| s > tol).count();
    if rank == 0 || s_max <= 1e-10 * scale {
        return Err(Error::DegenerateSubspace(a.model_id.clone()));
    }
    let total: f64 = sv[..rank].iter().map(|s| s * s).sum();
    let target = threshold * total * (1.0 - 1e-12);
    let mut cum = 0.0;
    let mut k = 0;
    while k < rank {
        cum += sv[k] * sv[k];
        k += 1;
        if cum >= target {
            break;
        }
    }
    let n = a.samples();
    Ok(DMatrix::from_fn(n, k, |r, c| v_t[(order[c], r)]))
}

fn mean_canonical_correlation(va: &DMatrix<f64>, vb: &DMatrix<f64>) -> f64 {
    let cross = va.transpose() * vb;
    let sv = cross.singular_values();
    let k = va.ncols().min(vb.ncols());
    let mut corrs: Vec<f64> = sv.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    corrs.sort_by(|x, y| y.total_cmp(x));
    corrs.truncate(k);
    corrs.iter().sum::<f64>() / k as f64
}

fn check_pair(a: &ActivationMatrix, b: &ActivationMatrix) -> Result<()> {
    if a.probe_checksum != b.probe_checksum || a.samples() != b.samples() {
        return Err(Error::ProbeMismatch(format!("{} vs {}", a.model_id, b.model_id)));
    }
    if a.samples() < 2 {
        return Err(Error::InvalidArgument("SVCCA needs at least 2 probe images".into()));
    }
    Ok(())
}

/// Mean SVCCA correlation between two activation matrices.
pub fn svcca_correlation(a: &ActivationMatrix, b: &ActivationMatrix, variance_threshold: f64) -> Result<f64> {
    check_threshold(variance_threshold)?;
    check_pair(a, b)?;
    let va = reduced_basis(a, variance_threshold)?;
    let vb = reduced_basis(b, variance_threshold)?;
    Ok(mean_canonical_correlation(&va, &vb))
}

/// Pairwise SVCCA correlations.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub matrix: LabeledMatrix,
    pub variance_threshold: f64,
}

/// SVCCA over all unordered pairs; diagonal is 1. Each model is reduced once.
pub fn correlation_matrix(acts: &[ActivationMatrix], variance_threshold: f64) -> Result<CorrelationMatrix> {
    check_threshold(variance_threshold)?;
    if acts.len() < 2 {
        return Err(Error::TooFewModels(acts.len()));
    }
    for a in &acts[1..] {
        check_pair(&acts[0], a)?;
    }
    let bases = acts
        .par_iter()
        .map(|a| reduced_basis(a, variance_threshold))
        .collect::<Result<Vec<_>>>()?;
    let n = acts.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let corr: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| mean_canonical_correlation(&bases[i], &bases[j]))
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    for (&(i, j), c) in pairs.iter().zip(corr) {
        values[i * n + j] = c;
        values[j * n + i] = c;
    }
    let ids = acts.iter().map(|a| a.model_id.clone()).collect();
    Ok(CorrelationMatrix {
        matrix: LabeledMatrix::new(ids, MatrixKind::Svcca, values)?,
        variance_threshold,
    })
}

/// Collect activations of every model and compare them pairwise.
pub fn correlation_matrix_for_models(models: &[ModelSpec], probe: &ProbeSet, variance_threshold: f64) -> Result<CorrelationMatrix> {
    let acts = models
        .iter()
        .map(|m| collect_activations(m, probe))
        .collect::<Result<Vec<_>>>()?;
    correlation_matrix(&acts, variance_threshold)
}
