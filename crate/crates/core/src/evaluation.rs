//! Comparing estimated transferability against an oracle: P@K and R@K,
//! matrix correlation, task priority and the correlation-priority curve.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model_space::{LabeledMatrix, RankingTable};

pub const DEFAULT_K_REL: usize = 5;

fn hits(ranking: &[String], relevant: &HashSet<String>, k: usize) -> Result<usize> {
    if k == 0 || k > ranking.len() {
        return Err(Error::BadK { k, len: ranking.len() });
    }
    Ok(ranking[..k].iter().filter(|s| relevant.contains(*s)).count())
}

/// Fraction of the top `k` that is relevant.
pub fn precision_at_k(ranking: &[String], relevant: &HashSet<String>, k: usize) -> Result<f64> {
    Ok(hits(ranking, relevant, k)? as f64 / k as f64)
}

/// Fraction of the relevant set found in the top `k`.
pub fn recall_at_k(ranking: &[String], relevant: &HashSet<String>, k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    Ok(hits(ranking, relevant, k)? as f64 / relevant.len() as f64)
}

fn check_vectors(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape("correlation inputs", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least 2 values".into()));
    }
    Ok(())
}

/// Product-moment correlation of two equal-length vectors.
pub fn pearson_vec(x: &[f64], y: &[f64]) -> Result<f64> {
    check_vectors(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ZeroVariance("first input"));
    }
    if syy == 0.0 {
        return Err(Error::ZeroVariance("second input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Rank correlation (Pearson on average ranks).
pub fn spearman_vec(x: &[f64], y: &[f64]) -> Result<f64> {
    check_vectors(x, y)?;
    pearson_vec(&average_ranks(x), &average_ranks(y))
}

/// Upper triangles of both matrices, the second reordered to the first's ids.
fn paired_upper(m1: &LabeledMatrix, m2: &LabeledMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let same: HashSet<&String> = m1.ids.iter().collect();
    if m1.len() != m2.len() || !m2.ids.iter().all(|id| same.contains(id)) {
        return Err(Error::IdMismatch("matrices cover different models".into()));
    }
    let map: Vec<usize> = m1.ids.iter().map(|id| m2.index_of(id)).collect::<Result<_>>()?;
    let n = m1.len();
    let mut a = Vec::with_capacity(n * (n - 1) / 2);
    let mut b = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            a.push(m1.get(i, j));
            b.push(m2.get(map[i], map[j]));
        }
    }
    Ok((a, b))
}

/// Pearson correlation of the off-diagonal upper triangles.
pub fn pearson(m1: &LabeledMatrix, m2: &LabeledMatrix) -> Result<f64> {
    let (a, b) = paired_upper(m1, m2)?;
    pearson_vec(&a, &b)
}

/// Spearman correlation of the off-diagonal upper triangles.
pub fn spearman(m1: &LabeledMatrix, m2: &LabeledMatrix) -> Result<f64> {
    let (a, b) = paired_upper(m1, m2)?;
    spearman_vec(&a, &b)
}

/// Average rank of each task when transferred to every other task; lower is
/// better. Returned in table id order.
pub fn priority(oracle: &RankingTable) -> Result<Vec<(String, f64)>> {
    let ids = oracle.ids();
    if ids.len() < 2 {
        return Err(Error::IncompleteTable("need at least 2 tasks".into()));
    }
    ids.iter()
        .map(|source| {
            let mut sum = 0usize;
            let mut terms = 0usize;
            for target in ids.iter().filter(|t| *t != source) {
                sum += oracle.rank_of(target, source)?;
                terms += 1;
            }
            Ok((source.clone(), sum as f64 / terms as f64))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoints {
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

impl CurvePoints {
    pub fn new(x_label: &str, y_label: &str, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::InvalidArgument("curve x values must be strictly increasing".into()));
        }
        Ok(CurvePoints {
            x_label: x_label.into(),
            y_label: y_label.into(),
            points,
        })
    }

    pub fn ys(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    /// Two-column CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.x_label, self.y_label);
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

/// Normalization of each correlation-priority bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CpcDivisor {
    /// Divide by the number of models N.
    #[default]
    ModelCount,
    /// Divide by the number of ordered pairs falling in the bucket.
    BucketCount,
}

/// Correlation-priority curve: for each rank `p`, the summed correlation of
/// ordered pairs `(i, j)` where source `i` ranks `p` for target `j`.
pub fn cpc(correlations: &LabeledMatrix, oracle: &RankingTable, divisor: CpcDivisor) -> Result<CurvePoints> {
    let ids = oracle.ids();
    let n = ids.len();
    let known: HashSet<&String> = correlations.ids.iter().collect();
    if correlations.len() != n || !ids.iter().all(|id| known.contains(id)) {
        return Err(Error::IdMismatch("correlation matrix and oracle cover different models".into()));
    }
    let idx: HashMap<&String, usize> = ids
        .iter()
        .map(|id| Ok((id, correlations.index_of(id)?)))
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for target in ids {
        for src in oracle.row(target)? {
            sums[src.rank] += correlations.get(idx[&src.id], idx[target]);
            counts[src.rank] += 1;
        }
    }
    let points = (1..n)
        .map(|p| {
            let denom = match divisor {
                CpcDivisor::ModelCount => n as f64,
                CpcDivisor::BucketCount => counts[p].max(1) as f64,
            };
            (p as f64, sums[p] / denom)
        })
        .collect();
    CurvePoints::new("priority", "correlation", points)
}

/// Relevant sources per target.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRelevance {
    pub k_rel: usize,
    pub relevant: BTreeMap<String, HashSet<String>>,
    /// True when some target had fewer than `k_rel` candidate sources and
    /// all of them were used.
    pub clamped: bool,
}

/// Top-`k_rel` oracle sources of each target.
pub fn build_relevance(oracle: &RankingTable, k_rel: usize) -> Result<OracleRelevance> {
    if k_rel == 0 {
        return Err(Error::InvalidArgument("k_rel must be at least 1".into()));
    }
    let mut clamped = false;
    let mut relevant = BTreeMap::new();
    for target in oracle.ids() {
        let row = oracle.ordered_sources(target)?;
        if row.len() < k_rel {
            clamped = true;
        }
        relevant.insert(target.clone(), row.into_iter().take(k_rel).collect());
    }
    Ok(OracleRelevance {
        k_rel,
        relevant,
        clamped,
    })
}

impl OracleRelevance {
    /// Explicit relevant sets, e.g. group membership of synthetic families.
    pub fn from_sets(relevant: BTreeMap<String, HashSet<String>>) -> Result<Self> {
        for (t, set) in &relevant {
            if set.contains(t) {
                return Err(Error::InvalidArgument(format!("target {t} listed as its own source")));
            }
        }
        let k_rel = relevant.values().map(HashSet::len).max().unwrap_or(0);
        Ok(OracleRelevance {
            k_rel,
            relevant,
            clamped: false,
        })
    }
}

/// Read an oracle ranking file: a JSON object mapping each target id to its
/// ordered list of source ids.
pub fn load_oracle_rankings(path: &Path) -> Result<RankingTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, Vec<String>> =
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))?;
    RankingTable::from_orders(&map.into_iter().collect::<Vec<_>>())
}

pub fn write_oracle_rankings(path: &Path, table: &RankingTable) -> Result<()> {
    let map: BTreeMap<&String, Vec<String>> = table
        .ids()
        .iter()
        .map(|t| Ok((t, table.ordered_sources(t)?)))
        .collect::<Result<_>>()?;
    let mut bytes = serde_json::to_vec_pretty(&map).expect("rankings serialize");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Macro-averaged P@K and R@K for K = 1..=N-1, with per-target values.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub ks: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// `per_target[target][k - 1] = (P@k, R@k)`
    pub per_target: BTreeMap<String, Vec<(f64, f64)>>,
}

impl RetrievalReport {
    pub fn precision_at(&self, k: usize) -> f64 {
        self.precision[k - 1]
    }

    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall[k - 1]
    }

    pub fn precision_curve(&self) -> CurvePoints {
        CurvePoints::new("k", "precision", self.ks.iter().map(|&k| k as f64).zip(self.precision.iter().copied()).collect())
            .expect("ks increase")
    }

    pub fn recall_curve(&self) -> CurvePoints {
        CurvePoints::new("k", "recall", self.ks.iter().map(|&k| k as f64).zip(self.recall.iter().copied()).collect())
            .expect("ks increase")
    }
}

pub fn retrieval_report(estimate: &RankingTable, relevance: &OracleRelevance) -> Result<RetrievalReport> {
    let targets: Vec<&String> = relevance.relevant.keys().collect();
    if targets.is_empty() {
        return Err(Error::EmptyRelevant);
    }
    let n_sources = estimate.ids().len() - 1;
    let ks: Vec<usize> = (1..=n_sources).collect();
    let mut per_target = BTreeMap::new();
    for t in &targets {
        let ranking = estimate.ordered_sources(t)?;
        let rel = &relevance.relevant[*t];
        let vals = ks
            .iter()
            .map(|&k| Ok((precision_at_k(&ranking, rel, k)?, recall_at_k(&ranking, rel, k)?)))
            .collect::<Result<Vec<_>>>()?;
        per_target.insert((*t).clone(), vals);
    }
    let m = targets.len() as f64;
    let precision = (0..ks.len()).map(|i| per_target.values().map(|v: &Vec<(f64, f64)>| v[i].0).sum::<f64>() / m).collect();
    let recall = (0..ks.len()).map(|i| per_target.values().map(|v: &Vec<(f64, f64)>| v[i].1).sum::<f64>() / m).collect();
    Ok(RetrievalReport {
        ks,
        precision,
        recall,
        per_target,
    })
}

/// Monte Carlo P@K of uniformly random rankings over `n_candidates` sources
/// of which the first `k_rel` are relevant. Returns per-trial values.
pub fn random_baseline_precision(n_candidates: usize, k_rel: usize, k: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    if k_rel > n_candidates {
        return Err(Error::InvalidArgument("more relevant items than candidates".into()));
    }
    let names: Vec<String> = (0..n_candidates).map(|i| format!("s{i:04}")).collect();
    let relevant: HashSet<String> = names[..k_rel].iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranking = names.clone();
    (0..trials)
        .map(|_| {
            ranking.shuffle(&mut rng);
            precision_at_k(&ranking, &relevant, k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    fn set(xs: &[&str]) -> HashSet<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hand_counted_precision_and_recall() {
        let rel = set(&["A", "B", "C", "D", "E"]);
        let ranking = s(&["A", "B", "X", "C", "Y", "D", "E"]);
        assert_eq!(precision_at_k(&ranking, &rel, 3).unwrap(), 2.0 / 3.0);
        assert_eq!(recall_at_k(&ranking, &rel, 3).unwrap(), 2.0 / 5.0);
        assert_eq!(recall_at_k(&ranking, &rel, 7).unwrap(), 1.0);
        assert!(matches!(precision_at_k(&ranking, &rel, 0), Err(Error::BadK { .. })));
        assert!(matches!(precision_at_k(&ranking, &rel, 8), Err(Error::BadK { .. })));
        assert!(matches!(recall_at_k(&ranking, &HashSet::new(), 1), Err(Error::EmptyRelevant)));
    }

    #[test]
    fn oracle_against_itself() {
        let rel = set(&["A", "B", "C"]);
        assert_eq!(precision_at_k(&s(&["A", "B", "C", "D"]), &rel, 3).unwrap(), 1.0);
    }

    #[test]
    fn correlation_basics() {
        let x = [1.0, 2.0, 3.0];
        let y = [3.0, 2.0, 1.0];
        assert!((spearman_vec(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson_vec(&x, &[2.0, 4.0, 6.5]).unwrap() - 4.5 / 2.0f64.sqrt() / (10.0f64 + 1.0 / 6.0).sqrt()).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_vec(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(pearson_vec(&x, &[1.0, 1.0, 1.0]), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn priority_cases() {
        // A is ranked 1 by B and 2 by C
        let t = RankingTable::from_orders(&[
            ("A".into(), s(&["B", "C"])),
            ("B".into(), s(&["A", "C"])),
            ("C".into(), s(&["B", "A"])),
        ])
        .unwrap();
        let p: BTreeMap<String, f64> = priority(&t).unwrap().into_iter().collect();
        assert_eq!(p["A"], 1.5);
        assert_eq!(p["B"], 1.0);
        assert_eq!(p["C"], 2.0);
    }

    #[test]
    fn relevance_clamps_when_too_few_sources() {
        let t = RankingTable::from_orders(&[
            ("A".into(), s(&["B", "C"])),
            ("B".into(), s(&["A", "C"])),
            ("C".into(), s(&["B", "A"])),
        ])
        .unwrap();
        let r = build_relevance(&t, 5).unwrap();
        assert!(r.clamped);
        assert!(r.relevant.values().all(|s| s.len() == 2));
        let r1 = build_relevance(&t, 1).unwrap();
        assert_eq!(r1.relevant["C"], set(&["B"]));
        assert!(!r1.clamped);
    }

    #[test]
    fn curve_requires_increasing_x() {
        assert!(CurvePoints::new("x", "y", vec![(1.0, 0.0), (1.0, 2.0)]).is_err());
        let c = CurvePoints::new("k", "precision", vec![(1.0, 0.5), (2.0, 0.25)]).unwrap();
        assert_eq!(c.to_csv(), "k,precision\n1,0.5\n2,0.25\n");
    }

    #[test]
    fn oracle_file_round_trip() {
        let t = RankingTable::from_orders(&[
            ("A".into(), s(&["C", "B"])),
            ("B".into(), s(&["A", "C"])),
            ("C".into(), s(&["B", "A"])),
        ])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("oracle.json");
        write_oracle_rankings(&p, &t).unwrap();
        let back = load_oracle_rankings(&p).unwrap();
        for id in ["A", "B", "C"] {
            assert_eq!(back.ordered_sources(id).unwrap(), t.ordered_sources(id).unwrap());
        }
    }
}
