//! Agglomerative clustering of models into a similarity tree.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_space::{AffinityMatrix, LabeledMatrix, MatrixKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

impl FromStr for Linkage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(Linkage::Average),
            "single" => Ok(Linkage::Single),
            "complete" => Ok(Linkage::Complete),
            other => Err(Error::InvalidArgument(format!("unknown linkage {other:?}"))),
        }
    }
}

/// Similarity-to-dissimilarity transform applied before clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissimilarity {
    /// `1 / s`, the model distance.
    #[default]
    Inverse,
    /// `1 - s`
    OneMinus,
}

impl FromStr for Dissimilarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inverse" => Ok(Dissimilarity::Inverse),
            "one-minus" | "one_minus" => Ok(Dissimilarity::OneMinus),
            other => Err(Error::InvalidArgument(format!("unknown dissimilarity {other:?}"))),
        }
    }
}

/// Dissimilarity matrix fed to clustering.
pub fn dissimilarity_matrix(affinity: &AffinityMatrix, kind: Dissimilarity) -> Result<LabeledMatrix> {
    match kind {
        Dissimilarity::Inverse => Ok(affinity.distances()),
        Dissimilarity::OneMinus => {
            let sim = affinity.similarities();
            let values = sim.values().iter().map(|s| 1.0 - s).collect();
            LabeledMatrix::new(sim.ids, MatrixKind::Distance, values)
        }
    }
}

/// Tree node. Leaves `0..n` come first, then one internal node per merge in
/// merge order.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Leaf { id: String },
    Merge { left: usize, right: usize, height: f64, size: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    nodes: Vec<Node>,
    n_leaves: usize,
    /// Infinite input distances were replaced before clustering.
    pub replaced_infinite: bool,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn height(&self, node: usize) -> f64 {
        match &self.nodes[node] {
            Node::Leaf { .. } => 0.0,
            Node::Merge { height, .. } => *height,
        }
    }

    /// `(left leaf set, right leaf set, height)` of each merge, in order.
    pub fn merges(&self) -> Vec<(Vec<String>, Vec<String>, f64)> {
        self.nodes[self.n_leaves..]
            .iter()
            .map(|n| match n {
                Node::Merge { left, right, height, .. } => (self.leaves_under(*left), self.leaves_under(*right), *height),
                Node::Leaf { .. } => unreachable!("internal nodes follow leaves"),
            })
            .collect()
    }

    /// Sorted leaf ids below `node`.
    pub fn leaves_under(&self, node: usize) -> Vec<String> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                Node::Leaf { id } => out.push(id.clone()),
                Node::Merge { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        out.sort();
        out
    }

    /// Groups obtained by undoing the last `k - 1` merges, each sorted, the
    /// list ordered by first member.
    pub fn cut(&self, k: usize) -> Result<Vec<Vec<String>>> {
        if k == 0 || k > self.n_leaves {
            return Err(Error::InvalidArgument(format!("cannot cut {} leaves into {k} groups", self.n_leaves)));
        }
        let keep = self.n_leaves - k;
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        for (m, node) in self.nodes[self.n_leaves..self.n_leaves + keep].iter().enumerate() {
            if let Node::Merge { left, right, .. } = node {
                parent[*left] = self.n_leaves + m;
                parent[*right] = self.n_leaves + m;
            }
        }
        let find = |mut x: usize| {
            while parent[x] != x {
                x = parent[x];
            }
            x
        };
        let mut groups: std::collections::BTreeMap<usize, Vec<String>> = Default::default();
        for leaf in 0..self.n_leaves {
            if let Node::Leaf { id } = &self.nodes[leaf] {
                groups.entry(find(leaf)).or_default().push(id.clone());
            }
        }
        let mut out: Vec<Vec<String>> = groups
            .into_values()
            .map(|mut g| {
                g.sort();
                g
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Children of a merge ordered by their smallest leaf id.
    fn ordered_children(&self, node: usize) -> Option<(usize, usize)> {
        match &self.nodes[node] {
            Node::Merge { left, right, .. } => {
                let (l, r) = (self.leaves_under(*left), self.leaves_under(*right));
                Some(if l[0] <= r[0] { (*left, *right) } else { (*right, *left) })
            }
            Node::Leaf { .. } => None,
        }
    }

    /// Indented rendering, one node per line.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        self.render_node(self.root(), 0, &mut out);
        out
    }

    fn render_node(&self, node: usize, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        match &self.nodes[node] {
            Node::Leaf { id } => {
                let _ = writeln!(out, "{pad}{id}");
            }
            Node::Merge { height, size, .. } => {
                let _ = writeln!(out, "{pad}+ height={height} size={size}");
                let (a, b) = self.ordered_children(node).expect("merge has children");
                self.render_node(a, depth + 1, out);
                self.render_node(b, depth + 1, out);
            }
        }
    }
}

/// Element of a cluster under construction.
#[derive(Clone)]
struct Active {
    node: usize,
    size: usize,
    /// Smallest leaf id, for tie-breaking.
    key: String,
}

/// Replace `+inf` with ten times the largest finite entry.
fn finite_distances(m: &LabeledMatrix) -> Result<(Vec<f64>, bool)> {
    let n = m.len();
    let mut max_finite: f64 = 0.0;
    for &v in m.values() {
        if v.is_nan() || v < 0.0 && v.is_finite() {
            return Err(Error::InvalidArgument(format!("distance {v} is not a valid dissimilarity")));
        }
        if v.is_finite() {
            max_finite = max_finite.max(v);
        }
    }
    let fill = if max_finite > 0.0 { 10.0 * max_finite } else { 10.0 };
    let mut replaced = false;
    let values = (0..n * n)
        .map(|k| {
            let v = m.values()[k];
            if v.is_finite() {
                v
            } else {
                replaced = true;
                fill
            }
        })
        .collect();
    Ok((values, replaced))
}

/// Bottom-up clustering of a distance matrix.
///
/// At each step the pair of clusters with the smallest linkage distance
/// merges; exact ties go to the lexicographically smallest pair of
/// (smallest leaf id) keys. Input order does not affect the result.
pub fn agglomerate(matrix: &LabeledMatrix, linkage: Linkage) -> Result<Dendrogram> {
    let n = matrix.len();
    if n < 2 {
        return Err(Error::TooFewModels(n));
    }
    let (raw, replaced) = finite_distances(matrix)?;
    // canonical order: ids sorted
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| matrix.ids[a].cmp(&matrix.ids[b]));
    let mut dist = vec![0.0; n * n];
    for (i, &oi) in order.iter().enumerate() {
        for (j, &oj) in order.iter().enumerate() {
            // symmetrize from the upper triangle of the original
            let (a, b) = if oi <= oj { (oi, oj) } else { (oj, oi) };
            dist[i * n + j] = if i == j { 0.0 } else { raw[a * n + b] };
        }
    }
    let mut nodes: Vec<Node> = order.iter().map(|&o| Node::Leaf { id: matrix.ids[o].clone() }).collect();
    let mut active: Vec<Option<Active>> = order
        .iter()
        .enumerate()
        .map(|(i, &o)| {
            Some(Active {
                node: i,
                size: 1,
                key: matrix.ids[o].clone(),
            })
        })
        .collect();

    for _ in 0..n - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            let Some(ca) = &active[a] else { continue };
            for b in a + 1..n {
                let Some(cb) = &active[b] else { continue };
                let d = dist[a * n + b];
                let better = match best {
                    None => true,
                    Some((bd, ba, bb)) => {
                        d < bd || (d == bd && tie_key(ca, cb) < tie_key(active[ba].as_ref().unwrap(), active[bb].as_ref().unwrap()))
                    }
                };
                if better {
                    best = Some((d, a, b));
                }
            }
        }
        let (height, a, b) = best.expect("at least two active clusters");
        let ca = active[a].take().unwrap();
        let cb = active[b].take().unwrap();
        for c in 0..n {
            if active[c].is_none() {
                continue;
            }
            let (dac, dbc) = (dist[a * n + c], dist[b * n + c]);
            let merged = match linkage {
                Linkage::Average => (ca.size as f64 * dac + cb.size as f64 * dbc) / (ca.size + cb.size) as f64,
                Linkage::Single => dac.min(dbc),
                Linkage::Complete => dac.max(dbc),
            };
            dist[a * n + c] = merged;
            dist[c * n + a] = merged;
        }
        nodes.push(Node::Merge {
            left: ca.node,
            right: cb.node,
            height,
            size: ca.size + cb.size,
        });
        active[a] = Some(Active {
            node: nodes.len() - 1,
            size: ca.size + cb.size,
            key: ca.key.min(cb.key),
        });
    }
    Ok(Dendrogram {
        nodes,
        n_leaves: n,
        replaced_infinite: replaced,
    })
}

fn tie_key<'a>(a: &'a Active, b: &'a Active) -> (&'a str, &'a str) {
    if a.key <= b.key {
        (&a.key, &b.key)
    } else {
        (&b.key, &a.key)
    }
}

fn newick_label(id: &str) -> String {
    if id.chars().any(|c| "()[]':;, \t\n".contains(c)) {
        format!("'{}'", id.replace('\'', "''"))
    } else {
        id.to_string()
    }
}

/// Newick string; branch length = parent height - child height, leaves at
/// height 0, children ordered by smallest leaf id.
pub fn to_newick(tree: &Dendrogram) -> String {
    fn emit(tree: &Dendrogram, node: usize, out: &mut String) {
        match &tree.nodes[node] {
            Node::Leaf { id } => out.push_str(&newick_label(id)),
            Node::Merge { height, .. } => {
                let (a, b) = tree.ordered_children(node).expect("merge has children");
                out.push('(');
                for (i, c) in [a, b].into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    emit(tree, c, out);
                    let _ = write!(out, ":{}", height - tree.height(c));
                }
                out.push(')');
            }
        }
    }
    let mut out = String::new();
    emit(tree, tree.root(), &mut out);
    out.push(';');
    out
}

/// Parsed Newick tree.
#[derive(Clone, Debug, PartialEq)]
pub struct NewickNode {
    pub name: Option<String>,
    pub length: Option<f64>,
    pub children: Vec<NewickNode>,
}

impl NewickNode {
    pub fn leaf_names(&self) -> Vec<String> {
        if self.children.is_empty() {
            return self.name.iter().cloned().collect();
        }
        self.children.iter().flat_map(NewickNode::leaf_names).collect()
    }

    /// Topology as nested sorted leaf sets, independent of child order.
    pub fn clades(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        self.collect_clades(&mut out);
        out.sort();
        out
    }

    fn collect_clades(&self, out: &mut Vec<Vec<String>>) {
        if !self.children.is_empty() {
            let mut l = self.leaf_names();
            l.sort();
            out.push(l);
            for c in &self.children {
                c.collect_clades(out);
            }
        }
    }
}

/// Minimal Newick parser (labels, quoted labels, branch lengths).
pub fn parse_newick(s: &str) -> Result<NewickNode> {
    let chars: Vec<char> = s.trim().chars().collect();
    let mut pos = 0;
    let node = parse_node(&chars, &mut pos)?;
    if chars.get(pos) != Some(&';') || pos + 1 != chars.len() {
        return Err(Error::parse("newick", format!("expected final ';' at {pos}")));
    }
    Ok(node)
}

fn parse_node(c: &[char], pos: &mut usize) -> Result<NewickNode> {
    let mut children = Vec::new();
    if c.get(*pos) == Some(&'(') {
        *pos += 1;
        loop {
            children.push(parse_node(c, pos)?);
            match c.get(*pos) {
                Some(',') => *pos += 1,
                Some(')') => {
                    *pos += 1;
                    break;
                }
                _ => return Err(Error::parse("newick", format!("unexpected token at {pos}"))),
            }
        }
    }
    let name = if c.get(*pos) == Some(&'\'') {
        *pos += 1;
        let mut s = String::new();
        loop {
            match c.get(*pos) {
                Some('\'') if c.get(*pos + 1) == Some(&'\'') => {
                    s.push('\'');
                    *pos += 2;
                }
                Some('\'') => {
                    *pos += 1;
                    break;
                }
                Some(&ch) => {
                    s.push(ch);
                    *pos += 1;
                }
                None => return Err(Error::parse("newick", "unterminated quoted label")),
            }
        }
        Some(s)
    } else {
        let start = *pos;
        while *pos < c.len() && !"(),:;".contains(c[*pos]) {
            *pos += 1;
        }
        let s: String = c[start..*pos].iter().collect();
        (!s.is_empty()).then_some(s)
    };
    let length = if c.get(*pos) == Some(&':') {
        *pos += 1;
        let start = *pos;
        while *pos < c.len() && !"(),:;".contains(c[*pos]) {
            *pos += 1;
        }
        let s: String = c[start..*pos].iter().collect();
        Some(s.trim().parse::<f64>().map_err(|e| Error::parse("newick branch length", e))?)
    } else {
        None
    };
    Ok(NewickNode { name, length, children })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_space::MatrixKind;

    fn matrix(ids: &[&str], values: Vec<f64>) -> LabeledMatrix {
        LabeledMatrix::new(ids.iter().map(|s| s.to_string()).collect(), MatrixKind::Distance, values).unwrap()
    }

    #[test]
    fn two_models_single_merge() {
        let t = agglomerate(&matrix(&["A", "B"], vec![0.0, 2.0, 2.0, 0.0]), Linkage::Average).unwrap();
        assert_eq!(t.merges(), vec![(vec!["A".to_string()], vec!["B".to_string()], 2.0)]);
        assert_eq!(to_newick(&t), "(A:2,B:2);");
    }

    #[test]
    fn three_point_hand_trace() {
        #[rustfmt::skip]
        let m = matrix(&["C", "A", "B"], vec![
            0.0, 5.0, 5.0,
            5.0, 0.0, 1.0,
            5.0, 1.0, 0.0,
        ]);
        let t = agglomerate(&m, Linkage::Average).unwrap();
        let merges = t.merges();
        assert_eq!(merges[0].2, 1.0);
        assert_eq!(merges[1].2, 5.0);
        assert_eq!(to_newick(&t), "((A:1,B:1):4,C:5);");
        let parsed = parse_newick(&to_newick(&t)).unwrap();
        assert_eq!(parsed.clades(), vec![vec!["A", "B"], vec!["A", "B", "C"]]);
    }

    #[test]
    fn infinite_distances_replaced() {
        let inf = f64::INFINITY;
        let m = matrix(&["A", "B", "C"], vec![0.0, 1.0, inf, 1.0, 0.0, 2.0, inf, 2.0, 0.0]);
        let t = agglomerate(&m, Linkage::Complete).unwrap();
        assert!(t.replaced_infinite);
        assert_eq!(t.merges()[1].2, 20.0);
    }

    #[test]
    fn ties_prefer_smallest_ids() {
        let m = matrix(&["D", "C", "B", "A"], vec![
            0.0, 1.0, 3.0, 3.0,
            1.0, 0.0, 3.0, 3.0,
            3.0, 3.0, 0.0, 1.0,
            3.0, 3.0, 1.0, 0.0,
        ]);
        let t = agglomerate(&m, Linkage::Single).unwrap();
        assert_eq!(t.merges()[0].0, vec!["A"]);
        assert_eq!(t.merges()[0].1, vec!["B"]);
        assert_eq!(t.cut(2).unwrap(), vec![vec!["A", "B"], vec!["C", "D"]]);
        assert!(t.cut(0).is_err());
    }

    #[test]
    fn quoted_labels_round_trip() {
        let m = matrix(&["a b", "c'd"], vec![0.0, 0.5, 0.5, 0.0]);
        let nw = to_newick(&agglomerate(&m, Linkage::Average).unwrap());
        let parsed = parse_newick(&nw).unwrap();
        let mut names = parsed.leaf_names();
        names.sort();
        assert_eq!(names, vec!["a b", "c'd"]);
    }

    #[test]
    fn render_contains_leaves() {
        let m = matrix(&["A", "B"], vec![0.0, 2.0, 2.0, 0.0]);
        let text = agglomerate(&m, Linkage::Average).unwrap().render_text();
        assert_eq!(text, "+ height=2 size=2\n  A\n  B\n");
    }

    #[test]
    fn too_few() {
        assert!(matches!(agglomerate(&matrix(&["A"], vec![0.0]), Linkage::Average), Err(Error::TooFewModels(1))));
    }
}
