//! tf-idf characterization of (period, horizon) groups and Jaccard
//! co-occurrence networks over their top words.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::{Error, Result};

pub const DEFAULT_TOP_WORDS: usize = 50;
pub const DEFAULT_TOP_EDGES: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Horizon {
    Near,
    Distant,
}

impl std::str::FromStr for Horizon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "near" => Ok(Horizon::Near),
            "distant" => Ok(Horizon::Distant),
            other => Err(Error::config(format!("unknown horizon {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupLabel {
    pub period: usize,
    pub horizon: Horizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub id: String,
    pub rank: u8,
    pub tokens: Vec<String>,
}

/// Documents of one period and one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: GroupLabel,
    pub members: Vec<Member>,
}

impl Group {
    pub fn new(label: GroupLabel, members: Vec<Member>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::period(
                label.period,
                format!("{:?} group has no documents", label.horizon),
            ));
        }
        Ok(Group { label, members })
    }

    /// Collects `ids` from `corpus`; every id must belong to `label.period`.
    pub fn from_corpus<S: AsRef<str>>(corpus: &Corpus, label: GroupLabel, ids: &[S]) -> Result<Self> {
        let members = ids
            .iter()
            .map(|id| {
                let doc = corpus
                    .get(id.as_ref())
                    .ok_or_else(|| Error::config(format!("unknown document id {:?}", id.as_ref())))?;
                if doc.period != label.period {
                    return Err(Error::period(
                        label.period,
                        format!("document {:?} belongs to period {}", doc.id, doc.period),
                    ));
                }
                Ok(Member {
                    id: doc.id.clone(),
                    rank: doc.rank,
                    tokens: doc.tokens.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Group::new(label, members)
    }

    fn vocabulary(&self) -> BTreeSet<&str> {
        self.members
            .iter()
            .flat_map(|m| m.tokens.iter().map(String::as_str))
            .collect()
    }

    /// `M_w`: ids of member documents containing `word`.
    pub fn containing(&self, word: &str) -> BTreeSet<&str> {
        self.members
            .iter()
            .filter(|m| m.tokens.iter().any(|t| t == word))
            .map(|m| m.id.as_str())
            .collect()
    }
}

/// Top-`k` words of `group` by `tf * ln(N / df)`, each group being one
/// pseudo-document. Words present in every group weigh 0 and are never
/// returned; ties break on the word.
pub fn tfidf_top_words(group: &Group, all_groups: &[Group], k: usize) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::config("k must be >= 1"));
    }
    if all_groups.len() < 2 {
        return Err(Error::config("tf-idf needs at least two groups"));
    }
    if !all_groups.iter().any(|g| g.label == group.label) {
        return Err(Error::config(format!(
            "group {:?} is not among the reference groups",
            group.label
        )));
    }
    let n_groups = all_groups.len() as f64;
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for g in all_groups {
        for w in g.vocabulary() {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &group.members {
        for t in &m.tokens {
            *tf.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut weighted: Vec<(String, f64)> = tf
        .into_iter()
        .map(|(w, count)| (w.to_owned(), count as f64 * (n_groups / df[w] as f64).ln()))
        .filter(|(_, weight)| *weight > 0.0)
        .collect();
    weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    weighted.truncate(k);
    Ok(weighted)
}

/// `|A ∩ B| / |A ∪ B|`.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64> {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Err(Error::EmptyInput("both sets"));
    }
    Ok(inter as f64 / union as f64)
}

/// Which word pairs become edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRule {
    /// Every pair with Jaccard at least this value.
    MinJaccard(f64),
    /// The strongest `n` pairs with non-zero Jaccard, ties by word pair.
    TopEdges(usize),
}

impl Default for EdgeRule {
    fn default() -> Self {
        EdgeRule::TopEdges(DEFAULT_TOP_EDGES)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub word: String,
    /// tf-idf weight.
    pub weight: f64,
    /// Mean rank over documents containing the word.
    pub assessment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    /// `a < b`.
    pub a: String,
    pub b: String,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub edge_rule: EdgeRule,
}

pub fn build_network(
    group: &Group,
    all_groups: &[Group],
    k: usize,
    rule: EdgeRule,
) -> Result<CooccurrenceNetwork> {
    if let EdgeRule::MinJaccard(t) = rule {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::config(format!("edge threshold {t} outside [0, 1]")));
        }
    }
    let top = tfidf_top_words(group, all_groups, k)?;
    let rank_of: BTreeMap<&str, u8> = group.members.iter().map(|m| (m.id.as_str(), m.rank)).collect();
    let sets: Vec<BTreeSet<&str>> = top.iter().map(|(w, _)| group.containing(w)).collect();

    let nodes = top
        .iter()
        .zip(&sets)
        .map(|((word, weight), docs)| Node {
            word: word.clone(),
            weight: *weight,
            assessment: docs.iter().map(|id| rank_of[id] as f64).sum::<f64>() / docs.len() as f64,
        })
        .collect();

    let mut pairs = Vec::new();
    for i in 0..top.len() {
        for j in i + 1..top.len() {
            let (a, b, sa, sb) = if top[i].0 < top[j].0 {
                (&top[i].0, &top[j].0, &sets[i], &sets[j])
            } else {
                (&top[j].0, &top[i].0, &sets[j], &sets[i])
            };
            pairs.push(Edge {
                a: a.clone(),
                b: b.clone(),
                jaccard: jaccard(sa, sb)?,
            });
        }
    }
    let mut edges: Vec<Edge> = match rule {
        EdgeRule::MinJaccard(t) => pairs.into_iter().filter(|e| e.jaccard >= t).collect(),
        EdgeRule::TopEdges(n) => {
            pairs.retain(|e| e.jaccard > 0.0);
            pairs.sort_by(|x, y| {
                y.jaccard
                    .total_cmp(&x.jaccard)
                    .then_with(|| (&x.a, &x.b).cmp(&(&y.a, &y.b)))
            });
            pairs.truncate(n);
            pairs
        }
    };
    edges.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
    Ok(CooccurrenceNetwork {
        nodes,
        edges,
        edge_rule: rule,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

/// Diverging color for a mean assessment on `[0, 4]`: blue at 0 (worse),
/// yellow-green at 2 (neutral), red at 4 (better).
pub fn assessment_color(assessment: f64) -> String {
    const STOPS: [(f64, [f64; 3]); 3] = [
        (0.0, [44.0, 123.0, 182.0]),
        (2.0, [166.0, 217.0, 106.0]),
        (4.0, [215.0, 25.0, 28.0]),
    ];
    let x = assessment.clamp(0.0, 4.0);
    let (lo, hi) = if x <= 2.0 { (STOPS[0], STOPS[1]) } else { (STOPS[1], STOPS[2]) };
    let f = (x - lo.0) / (hi.0 - lo.0);
    let c: Vec<u8> = (0..3)
        .map(|i| (lo.1[i] + f * (hi.1[i] - lo.1[i])).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn dot_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        if ch == '"' || ch == '\\' {
            out.push('\\');
        }
        out.push(ch);
    }
    out.push('"');
    out
}

impl CooccurrenceNetwork {
    /// Graphviz source. Edge `weight` is the Jaccard coefficient and
    /// `penwidth` grows with it; node color encodes the mean assessment.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        out.push_str("graph cooccurrence {\n");
        out.push_str("  node [shape=ellipse, style=filled];\n");
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "  {} [fillcolor=\"{}\", tfidf=\"{:.6}\", assessment=\"{:.3}\"];",
                dot_quote(&n.word),
                assessment_color(n.assessment),
                n.weight,
                n.assessment
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  {} -- {} [weight={:.6}, penwidth={:.3}];",
                dot_quote(&e.a),
                dot_quote(&e.b),
                e.jaccard,
                1.0 + 4.0 * e.jaccard
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn export(&self, format: ExportFormat) -> Result<Vec<u8>> {
        Ok(match format {
            ExportFormat::Dot => self.to_dot().into_bytes(),
            ExportFormat::Json => self.to_json()?.into_bytes(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(period: usize, horizon: Horizon, docs: &[(&str, u8, &str)]) -> Group {
        Group::new(
            GroupLabel { period, horizon },
            docs.iter()
                .map(|(id, rank, text)| Member {
                    id: id.to_string(),
                    rank: *rank,
                    tokens: text.split_whitespace().map(String::from).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn two_groups() -> Vec<Group> {
        vec![
            group(1, Horizon::Near, &[("a1", 2, "x x common"), ("a2", 2, "x y common")]),
            group(1, Horizon::Distant, &[("b1", 1, "common z")]),
        ]
    }

    #[test]
    fn tfidf_weights() {
        let gs = two_groups();
        let top = tfidf_top_words(&gs[0], &gs, 50).unwrap();
        assert_eq!(top[0].0, "x");
        assert!((top[0].1 - 3.0 * 2f64.ln()).abs() < 1e-12);
        assert!(top.iter().all(|(w, _)| w != "common"));
        assert_eq!(top.len(), 2);
    }

    #[test]
    fn tfidf_errors() {
        let gs = two_groups();
        assert!(tfidf_top_words(&gs[0], &gs, 0).is_err());
        assert!(tfidf_top_words(&gs[0], &gs[..1], 5).is_err());
        let stranger = group(3, Horizon::Near, &[("c", 1, "q")]);
        assert!(tfidf_top_words(&stranger, &gs, 5).is_err());
    }

    #[test]
    fn jaccard_examples() {
        let a: BTreeSet<i32> = [1, 2].into();
        let b: BTreeSet<i32> = [2, 3].into();
        assert!((jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let c: BTreeSet<i32> = [7].into();
        assert_eq!(jaccard(&a, &c).unwrap(), 0.0);
        assert!(jaccard(&BTreeSet::<i32>::new(), &BTreeSet::new()).is_err());
    }

    #[test]
    fn network_nodes_and_edges() {
        let gs = two_groups();
        let net = build_network(&gs[0], &gs, 50, EdgeRule::MinJaccard(0.0)).unwrap();
        assert_eq!(net.nodes.len(), 2);
        // "x" appears in a1 and a2, "y" only in a2.
        assert_eq!(net.edges.len(), 1);
        assert_eq!((net.edges[0].a.as_str(), net.edges[0].b.as_str()), ("x", "y"));
        assert_eq!(net.edges[0].jaccard, 0.5);
        assert!(net.nodes.iter().all(|n| n.assessment == 2.0));
        let none = build_network(&gs[0], &gs, 50, EdgeRule::MinJaccard(1.0)).unwrap();
        assert!(none.edges.is_empty());
        assert_eq!(none.nodes.len(), 2);
    }

    #[test]
    fn perfect_cooccurrence() {
        let gs = vec![
            group(1, Horizon::Near, &[("a", 3, "p q"), ("b", 1, "p q r")]),
            group(1, Horizon::Distant, &[("c", 1, "s")]),
        ];
        let net = build_network(&gs[0], &gs, 50, EdgeRule::TopEdges(60)).unwrap();
        let pq = net.edges.iter().find(|e| e.a == "p" && e.b == "q").unwrap();
        assert_eq!(pq.jaccard, 1.0);
    }

    #[test]
    fn color_scale() {
        assert_eq!(assessment_color(2.0), "#a6d96a");
        assert_eq!(assessment_color(0.0), "#2c7bb6");
        assert_eq!(assessment_color(4.0), "#d7191c");
    }

    #[test]
    fn exports_are_deterministic() {
        let gs = two_groups();
        let net = build_network(&gs[0], &gs, 50, EdgeRule::default()).unwrap();
        assert_eq!(net.to_dot(), net.to_dot());
        let json = net.to_json().unwrap();
        let back = CooccurrenceNetwork::from_json(&json).unwrap();
        assert_eq!(back.to_json().unwrap(), json);
        let empty = CooccurrenceNetwork {
            nodes: net.nodes.clone(),
            edges: vec![],
            edge_rule: EdgeRule::MinJaccard(1.0),
        };
        let dot = empty.to_dot();
        assert!(dot.starts_with("graph cooccurrence {") && dot.ends_with("}\n"));
        assert!(!dot.contains("--"));
        assert_eq!(dot_quote("a\"b"), "\"a\\\"b\"");
    }
}
