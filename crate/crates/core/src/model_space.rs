//! Models as points in attribution space, their pairwise distances, and the
//! source rankings read from them.
//!
//! The distance between two models is `N_p / sum_k cos(A_k^i, A_k^j)` over
//! the probe images. The matrix stores the mean cosine `s` and derives
//! `d = 1 / s`; a cosine sum at or below `1e-9` is undefined under the
//! formula and maps to `+inf`, which ranks last.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::attribution::{AttributionMethod, AttributionMode, AttributionSet};
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Norm below which a map counts as all-zero.
pub const ZERO_NORM: f64 = 1e-12;
/// Cosine sum at or below which the distance is reported as `+inf`.
pub const MIN_COSINE_SUM: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cosine {
    pub value: f64,
    /// One of the inputs had (near) zero norm; `value` is then 0.
    pub degenerate: bool,
}

pub fn cosine_similarity(a: &Tensor, b: &Tensor) -> Result<Cosine> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Cosine {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Cosine sum between two attribution sets, image by image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub cosine_sum: f64,
    pub n_probe: usize,
    pub degenerate_images: usize,
}

impl PairScore {
    pub fn mean_similarity(&self) -> f64 {
        self.cosine_sum / self.n_probe as f64
    }

    pub fn distance(&self) -> f64 {
        if self.cosine_sum <= MIN_COSINE_SUM {
            f64::INFINITY
        } else {
            self.n_probe as f64 / self.cosine_sum
        }
    }
}

pub fn check_compatible(a: &AttributionSet, b: &AttributionSet) -> Result<()> {
    if a.probe_checksum != b.probe_checksum || a.len() != b.len() || a.shape != b.shape {
        return Err(Error::ProbeMismatch(format!("{} vs {}", a.model_id, b.model_id)));
    }
    if a.method != b.method || a.mode != b.mode {
        return Err(Error::MethodMismatch(
            format!("{} ({})", a.method, a.mode),
            format!("{} ({})", b.method, b.mode),
        ));
    }
    Ok(())
}

/// Sum of per-image cosines, accumulated in ascending probe order.
pub fn pair_score(a: &AttributionSet, b: &AttributionSet) -> Result<PairScore> {
    check_compatible(a, b)?;
    let mut sum = 0.0;
    let mut degenerate = 0;
    for (x, y) in a.maps.iter().zip(&b.maps) {
        let c = cosine_similarity(x, y)?;
        sum += c.value;
        degenerate += c.degenerate as usize;
    }
    Ok(PairScore {
        cosine_sum: sum,
        n_probe: a.len(),
        degenerate_images: degenerate,
    })
}

/// Model distance `N_p / sum_k cos(A_k^i, A_k^j)`; `+inf` when the sum is
/// not positive.
pub fn distance(a: &AttributionSet, b: &AttributionSet) -> Result<f64> {
    Ok(pair_score(a, b)?.distance())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Similarity,
    Distance,
    Svcca,
}

impl MatrixKind {
    pub fn name(&self) -> &'static str {
        match self {
            MatrixKind::Similarity => "similarity",
            MatrixKind::Distance => "distance",
            MatrixKind::Svcca => "svcca",
        }
    }
}

/// Square matrix with model ids on both axes, as exported to CSV and JSON.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrix {
    pub ids: Vec<String>,
    pub kind: MatrixKind,
    values: Vec<f64>,
}

impl LabeledMatrix {
    pub fn new(ids: Vec<String>, kind: MatrixKind, values: Vec<f64>) -> Result<Self> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(Error::shape("labeled matrix", &[n, n], &[values.len()]));
        }
        ensure_unique(&ids)?;
        Ok(LabeledMatrix { ids, kind, values })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Upper-triangle entries `(i < j)` in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect()
    }

    /// CSV with `#`-prefixed metadata lines, a header row of ids, and one row
    /// per model. Numbers use Rust's shortest round-trip formatting.
    pub fn to_csv(&self, metadata: &[(&str, String)]) -> String {
        let mut out = String::new();
        let _ = write!(out, "# kind={}", self.kind.name());
        for (k, v) in metadata {
            let _ = write!(out, " {k}={v}");
        }
        out.push('\n');
        out.push_str("id");
        for id in &self.ids {
            out.push(',');
            out.push_str(&csv_field(id));
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(&csv_field(id));
            for j in 0..self.len() {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }

    /// JSON object with `kind`, `ids`, dense `values` (`null` for `inf`) and
    /// caller metadata.
    pub fn to_json(&self, metadata: Value) -> Value {
        let n = self.len();
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| Some(self.get(i, j)).filter(|v| v.is_finite()))
                    .collect()
            })
            .collect();
        json!({
            "kind": self.kind.name(),
            "ids": self.ids,
            "values": rows,
            "metadata": metadata,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let kind: MatrixKind = serde_json::from_value(v["kind"].clone()).map_err(|e| Error::parse("matrix kind", e))?;
        let ids: Vec<String> = serde_json::from_value(v["ids"].clone()).map_err(|e| Error::parse("matrix ids", e))?;
        let rows: Vec<Vec<Option<f64>>> =
            serde_json::from_value(v["values"].clone()).map_err(|e| Error::parse("matrix values", e))?;
        if rows.len() != ids.len() || rows.iter().any(|r| r.len() != ids.len()) {
            return Err(Error::parse("matrix values", "not square over ids"));
        }
        let values = rows.into_iter().flatten().map(|v| v.unwrap_or(f64::INFINITY)).collect();
        LabeledMatrix::new(ids, kind, values)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn ensure_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateModel(id.clone()));
        }
    }
    Ok(())
}

/// A pair whose similarity needed special handling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFlag {
    pub a: String,
    pub b: String,
    /// Images where one of the two maps had zero norm.
    pub degenerate_images: usize,
    /// Cosine sum was not positive, so the distance is `+inf`.
    pub infinite_distance: bool,
}

/// Pairwise mean attribution similarity between models.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    pub ids: Vec<String>,
    pub method: AttributionMethod,
    pub mode: AttributionMode,
    pub probe_checksum: [u8; 32],
    pub n_probe: usize,
    similarity: Vec<f64>,
    pub flags: Vec<PairFlag>,
}

impl AffinityMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|x| x == id)
            .ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    /// Mean cosine similarity `s_ij`; the diagonal is exactly 1.
    pub fn similarity(&self, i: usize, j: usize) -> f64 {
        self.similarity[i * self.len() + j]
    }

    /// `d_ij = 1 / s_ij`, or `+inf` when the cosine sum is not positive.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let s = self.similarity(i, j);
        if s * self.n_probe as f64 <= MIN_COSINE_SUM {
            f64::INFINITY
        } else {
            1.0 / s
        }
    }

    pub fn similarities(&self) -> LabeledMatrix {
        LabeledMatrix {
            ids: self.ids.clone(),
            kind: MatrixKind::Similarity,
            values: self.similarity.clone(),
        }
    }

    pub fn distances(&self) -> LabeledMatrix {
        let n = self.len();
        LabeledMatrix {
            ids: self.ids.clone(),
            kind: MatrixKind::Distance,
            values: (0..n * n).map(|k| self.distance(k / n, k % n)).collect(),
        }
    }

    /// Rebuild from exported similarity values.
    pub fn from_similarities(
        sim: &LabeledMatrix,
        method: AttributionMethod,
        mode: AttributionMode,
        probe_checksum: [u8; 32],
        n_probe: usize,
        flags: Vec<PairFlag>,
    ) -> Result<Self> {
        if sim.kind != MatrixKind::Similarity {
            return Err(Error::InvalidArgument(format!(
                "expected a similarity matrix, got {}",
                sim.kind.name()
            )));
        }
        Ok(AffinityMatrix {
            ids: sim.ids.clone(),
            method,
            mode,
            probe_checksum,
            n_probe,
            similarity: sim.values.clone(),
            flags,
        })
    }

    pub fn metadata(&self) -> Value {
        json!({
            "method": self.method,
            "mode": self.mode,
            "probe_checksum": hex::encode(self.probe_checksum),
            "n_probe": self.n_probe,
            "flags": self.flags,
        })
    }

    /// Add one model, computing only its distances to the existing models.
    /// `existing` must hold the sets of the current models in matrix order.
    pub fn insert(&mut self, existing: &[AttributionSet], new: &AttributionSet) -> Result<()> {
        if existing.len() != self.len() || existing.iter().zip(&self.ids).any(|(s, id)| &s.model_id != id) {
            return Err(Error::IdMismatch("cached sets do not match matrix ids".into()));
        }
        if self.ids.contains(&new.model_id) {
            return Err(Error::DuplicateModel(new.model_id.clone()));
        }
        if new.probe_checksum != self.probe_checksum || new.len() != self.n_probe {
            return Err(Error::ProbeMismatch(new.model_id.clone()));
        }
        let scores = existing
            .par_iter()
            .map(|s| pair_score(s, new))
            .collect::<Result<Vec<_>>>()?;
        let n = self.len();
        let mut sim = vec![0.0; (n + 1) * (n + 1)];
        for i in 0..n {
            sim[i * (n + 1)..i * (n + 1) + n].copy_from_slice(&self.similarity[i * n..(i + 1) * n]);
        }
        for (i, sc) in scores.iter().enumerate() {
            let s = sc.mean_similarity();
            sim[i * (n + 1) + n] = s;
            sim[n * (n + 1) + i] = s;
            push_flag(&mut self.flags, &self.ids[i], &new.model_id, sc);
        }
        sim[n * (n + 1) + n] = 1.0;
        self.similarity = sim;
        self.ids.push(new.model_id.clone());
        // Same flag order as a batch computation: by (row, column) index.
        let pos: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut flags = std::mem::take(&mut self.flags);
        flags.sort_by_key(|f| (pos[f.a.as_str()], pos[f.b.as_str()]));
        self.flags = flags;
        Ok(())
    }
}

fn push_flag(flags: &mut Vec<PairFlag>, a: &str, b: &str, sc: &PairScore) {
    let infinite = sc.cosine_sum <= MIN_COSINE_SUM;
    if sc.degenerate_images > 0 || infinite {
        flags.push(PairFlag {
            a: a.to_string(),
            b: b.to_string(),
            degenerate_images: sc.degenerate_images,
            infinite_distance: infinite,
        });
    }
}

/// All pairwise similarities. Each unordered pair is computed once, in
/// parallel, and written to both triangle slots.
pub fn affinity_matrix(sets: &[AttributionSet]) -> Result<AffinityMatrix> {
    if sets.len() < 2 {
        return Err(Error::TooFewModels(sets.len()));
    }
    let ids: Vec<String> = sets.iter().map(|s| s.model_id.clone()).collect();
    ensure_unique(&ids)?;
    let n = sets.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| pair_score(&sets[i], &sets[j]))
        .collect::<Result<Vec<_>>>()?;
    let mut similarity = vec![0.0; n * n];
    let mut flags = Vec::new();
    for i in 0..n {
        similarity[i * n + i] = 1.0;
    }
    for (&(i, j), sc) in pairs.iter().zip(&scores) {
        let s = sc.mean_similarity();
        similarity[i * n + j] = s;
        similarity[j * n + i] = s;
        push_flag(&mut flags, &ids[i], &ids[j], sc);
    }
    Ok(AffinityMatrix {
        ids,
        method: sets[0].method,
        mode: sets[0].mode,
        probe_checksum: sets[0].probe_checksum,
        n_probe: sets[0].len(),
        similarity,
        flags,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSource {
    pub id: String,
    /// Distance to the target, when the ranking came from a matrix.
    pub distance: Option<f64>,
    /// 1-based rank.
    pub rank: usize,
}

/// Sources ranked for `target`: ascending distance, ties by ascending id,
/// target excluded.
pub fn rank_sources(matrix: &LabeledMatrix, target: &str) -> Result<Vec<RankedSource>> {
    if matrix.kind == MatrixKind::Distance {
        rank_by(matrix, target, |d| d)
    } else {
        // larger similarity or correlation ranks first
        rank_by(matrix, target, |s| -s)
    }
}

fn rank_by(matrix: &LabeledMatrix, target: &str, key: impl Fn(f64) -> f64) -> Result<Vec<RankedSource>> {
    let t = matrix.index_of(target)?;
    let mut rows: Vec<(f64, &String, f64)> = matrix
        .ids
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != t)
        .map(|(j, id)| (key(matrix.get(t, j)), id, matrix.get(t, j)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(r, (_, id, v))| RankedSource {
            id: id.clone(),
            distance: Some(v),
            rank: r + 1,
        })
        .collect())
}

/// Per-target source rankings `r_j^i`.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingTable {
    ids: Vec<String>,
    rows: Vec<Vec<RankedSource>>,
    index: HashMap<String, usize>,
}

impl RankingTable {
    /// Validates that every target ranks every other id exactly once.
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<RankedSource>>) -> Result<Self> {
        ensure_unique(&ids)?;
        if rows.len() != ids.len() {
            return Err(Error::IncompleteTable(format!("{} ids but {} rows", ids.len(), rows.len())));
        }
        let index: HashMap<String, usize> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        for (t, row) in rows.iter().enumerate() {
            let mut seen: HashSet<&str> = HashSet::new();
            for (pos, s) in row.iter().enumerate() {
                if s.rank != pos + 1 {
                    return Err(Error::IncompleteTable(format!("target {} has non-sequential ranks", ids[t])));
                }
                if s.id == ids[t] {
                    return Err(Error::IncompleteTable(format!("target {} ranks itself", ids[t])));
                }
                if !index.contains_key(&s.id) {
                    return Err(Error::UnknownModel(s.id.clone()));
                }
                if !seen.insert(&s.id) {
                    return Err(Error::IncompleteTable(format!("target {} lists {} twice", ids[t], s.id)));
                }
            }
            if row.len() + 1 != ids.len() {
                return Err(Error::IncompleteTable(format!(
                    "target {} ranks {} of {} sources",
                    ids[t],
                    row.len(),
                    ids.len() - 1
                )));
            }
        }
        Ok(RankingTable { ids, rows, index })
    }

    pub fn from_matrix(matrix: &LabeledMatrix) -> Result<Self> {
        let rows = matrix
            .ids
            .iter()
            .map(|t| rank_sources(matrix, t))
            .collect::<Result<Vec<_>>>()?;
        RankingTable::from_rows(matrix.ids.clone(), rows)
    }

    /// From ordered source-id lists per target.
    pub fn from_orders(orders: &[(String, Vec<String>)]) -> Result<Self> {
        let ids: Vec<String> = orders.iter().map(|(t, _)| t.clone()).collect();
        let rows = orders
            .iter()
            .map(|(_, list)| {
                list.iter()
                    .enumerate()
                    .map(|(r, id)| RankedSource {
                        id: id.clone(),
                        distance: None,
                        rank: r + 1,
                    })
                    .collect()
            })
            .collect();
        RankingTable::from_rows(ids, rows)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, target: &str) -> Result<&[RankedSource]> {
        let t = self.index.get(target).ok_or_else(|| Error::UnknownModel(target.to_string()))?;
        Ok(&self.rows[*t])
    }

    pub fn ordered_sources(&self, target: &str) -> Result<Vec<String>> {
        Ok(self.row(target)?.iter().map(|s| s.id.clone()).collect())
    }

    /// `r_target^source`: rank of `source` when transferred to `target`.
    pub fn rank_of(&self, target: &str, source: &str) -> Result<usize> {
        self.row(target)?
            .iter()
            .find(|s| s.id == source)
            .map(|s| s.rank)
            .ok_or_else(|| Error::UnknownModel(source.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::ImageShape;

    fn set(id: &str, maps: Vec<Vec<f64>>) -> AttributionSet {
        let n = maps[0].len();
        AttributionSet {
            model_id: id.into(),
            model_fingerprint: String::new(),
            method: AttributionMethod::GradientTimesInput,
            mode: AttributionMode::SinglePass,
            probe_checksum: [7; 32],
            shape: ImageShape::new(n, 1, 1),
            maps: maps.into_iter().map(|m| Tensor::new(vec![1, n, 1], m).unwrap()).collect(),
            passes: 0,
        }
    }

    #[test]
    fn cosine_cases() {
        let v = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(cosine_similarity(&v, &v).unwrap().value, 1.0);
        let c = cosine_similarity(&Tensor::from_vec(vec![1.0, 0.0]), &Tensor::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(c.value, 0.0);
        let w = Tensor::from_vec(vec![4.0, 5.0, 6.0]);
        let expected = 32.0 / (14.0f64 * 77.0).sqrt();
        assert!((cosine_similarity(&v, &w).unwrap().value - expected).abs() < 1e-15);
        assert!((expected - 0.974631).abs() < 1e-6);
        let z = cosine_similarity(&v, &Tensor::zeros(&[3])).unwrap();
        assert!(z.degenerate && z.value == 0.0);
        assert!(cosine_similarity(&v, &Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn two_image_distance() {
        // cosines 1.0 and 0.5
        let a = set("a", vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
        let b = set("b", vec![vec![2.0, 0.0], vec![0.5, 0.75f64.sqrt()]]);
        let d = distance(&a, &b).unwrap();
        assert!((d - 4.0 / 3.0).abs() < 1e-12, "{d}");
        assert_eq!(distance(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn negative_sum_is_infinite_and_flagged() {
        let a = set("a", vec![vec![1.0, 0.0]]);
        let b = set("b", vec![vec![-1.0, 0.0]]);
        assert_eq!(distance(&a, &b).unwrap(), f64::INFINITY);
        let m = affinity_matrix(&[a, b]).unwrap();
        assert_eq!(m.distance(0, 1), f64::INFINITY);
        assert!(m.flags[0].infinite_distance);
    }

    #[test]
    fn mismatches() {
        let a = set("a", vec![vec![1.0, 0.0]]);
        let mut b = set("b", vec![vec![1.0, 0.0]]);
        b.probe_checksum = [0; 32];
        assert!(matches!(distance(&a, &b), Err(Error::ProbeMismatch(_))));
        let mut c = set("c", vec![vec![1.0, 0.0]]);
        c.method = AttributionMethod::Saliency;
        assert!(matches!(distance(&a, &c), Err(Error::MethodMismatch(..))));
        assert!(matches!(affinity_matrix(std::slice::from_ref(&a)), Err(Error::TooFewModels(1))));
        assert!(matches!(affinity_matrix(&[a.clone(), a]), Err(Error::DuplicateModel(_))));
    }

    #[test]
    fn ranking_ties_break_by_id() {
        let ids: Vec<String> = ["t", "b", "a", "c"].iter().map(|s| s.to_string()).collect();
        #[rustfmt::skip]
        let values = vec![
            1.0, 2.0, 2.0, 1.5,
            2.0, 1.0, 3.0, 3.0,
            2.0, 3.0, 1.0, 3.0,
            1.5, 3.0, 3.0, 1.0,
        ];
        let m = LabeledMatrix::new(ids, MatrixKind::Distance, values).unwrap();
        let r = rank_sources(&m, "t").unwrap();
        let order: Vec<&str> = r.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
        assert_eq!(r[0].rank, 1);
        assert!(matches!(rank_sources(&m, "zz"), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let ids = vec!["x".to_string(), "y".to_string()];
        let m = LabeledMatrix::new(ids, MatrixKind::Distance, vec![1.0, 1.25, 1.25, 1.0]).unwrap();
        let csv = m.to_csv(&[("probe_checksum", "ab".into())]);
        assert_eq!(csv, "# kind=distance probe_checksum=ab\nid,x,y\nx,1,1.25\ny,1.25,1\n");
        let v = m.to_json(json!({}));
        assert_eq!(LabeledMatrix::from_json(&v).unwrap(), m);
    }

    #[test]
    fn ranking_table_validation() {
        let ok = RankingTable::from_orders(&[
            ("a".into(), vec!["b".into(), "c".into()]),
            ("b".into(), vec!["a".into(), "c".into()]),
            ("c".into(), vec!["b".into(), "a".into()]),
        ])
        .unwrap();
        assert_eq!(ok.rank_of("c", "a").unwrap(), 2);
        let missing = RankingTable::from_orders(&[
            ("a".into(), vec!["b".into()]),
            ("b".into(), vec!["a".into(), "c".into()]),
            ("c".into(), vec!["b".into(), "a".into()]),
        ]);
        assert!(matches!(missing, Err(Error::IncompleteTable(_))));
        let selfref = RankingTable::from_orders(&[("a".into(), vec!["a".into()]), ("b".into(), vec!["a".into()])]);
        assert!(selfref.is_err());
    }
}
