use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::policy::{AttackPattern, LinkStatus, RiskLinkFinding};

#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> UnionFind {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub skill_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub download_count: Option<u64>,
}

/// Undirected edge; `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: String,
    pub b: String,
    pub chain_types: BTreeSet<AttackPattern>,
}

/// Skills joined whenever they share a confirmed chain type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskChainGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub type_edge_counts: BTreeMap<AttackPattern, usize>,
    /// Largest first; members sorted.
    pub components: Vec<Vec<String>>,
}

/// Build the graph from Confirmed findings only. Two skills are adjacent
/// iff both take part (as source or sink) in Confirmed findings of one
/// attack type.
pub fn build_risk_graph(findings: &[RiskLinkFinding]) -> RiskChainGraph {
    let mut members: BTreeMap<AttackPattern, BTreeSet<&str>> = BTreeMap::new();
    for f in findings.iter().filter(|f| f.status == LinkStatus::Confirmed) {
        let set = members.entry(f.attack_pattern).or_default();
        set.insert(&f.source_skill);
        set.insert(&f.sink_skill);
    }
    let ids: Vec<&str> = members
        .values()
        .flatten()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (*s, i)).collect();

    let mut edge_types: BTreeMap<(usize, usize), BTreeSet<AttackPattern>> = BTreeMap::new();
    let mut type_edge_counts = BTreeMap::new();
    let mut uf = UnionFind::new(ids.len());
    for (t, set) in &members {
        let idx: Vec<usize> = set.iter().map(|s| index[s]).collect();
        let n = idx.len();
        type_edge_counts.insert(*t, n * n.saturating_sub(1) / 2);
        for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                edge_types.entry((i, j)).or_default().insert(*t);
            }
            if k > 0 {
                uf.union(idx[0], i);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().push(id.to_string());
    }
    let mut components: Vec<Vec<String>> = groups.into_values().collect();
    components.sort_by(|x, y| y.len().cmp(&x.len()).then_with(|| x.cmp(y)));

    RiskChainGraph {
        nodes: ids
            .iter()
            .map(|s| GraphNode {
                skill_id: s.to_string(),
                download_count: None,
            })
            .collect(),
        edges: edge_types
            .into_iter()
            .map(|((i, j), chain_types)| GraphEdge {
                a: ids[i].to_string(),
                b: ids[j].to_string(),
                chain_types,
            })
            .collect(),
        type_edge_counts,
        components,
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn join_types(types: &BTreeSet<AttackPattern>) -> String {
    types.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(",")
}

impl RiskChainGraph {
    pub fn with_download_counts(mut self, counts: &BTreeMap<String, Option<u64>>) -> RiskChainGraph {
        for n in &mut self.nodes {
            n.download_count = counts.get(&n.skill_id).copied().flatten();
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn largest_component(&self) -> usize {
        self.components.first().map_or(0, Vec::len)
    }

    pub fn to_graphml(&self) -> String {
        let mut s = String::new();
        s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        s.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
        s.push_str("  <key id=\"download_count\" for=\"node\" attr.name=\"download_count\" attr.type=\"long\"/>\n");
        s.push_str("  <key id=\"chain_types\" for=\"edge\" attr.name=\"chain_types\" attr.type=\"string\"/>\n");
        s.push_str("  <graph id=\"risk-chains\" edgedefault=\"undirected\">\n");
        for n in &self.nodes {
            let id = xml_escape(&n.skill_id);
            match n.download_count {
                Some(c) => {
                    let _ = writeln!(s, "    <node id=\"{id}\"><data key=\"download_count\">{c}</data></node>");
                }
                None => {
                    let _ = writeln!(s, "    <node id=\"{id}\"/>");
                }
            }
        }
        for (k, e) in self.edges.iter().enumerate() {
            let _ = writeln!(
                s,
                "    <edge id=\"e{k}\" source=\"{}\" target=\"{}\"><data key=\"chain_types\">{}</data></edge>",
                xml_escape(&e.a),
                xml_escape(&e.b),
                join_types(&e.chain_types)
            );
        }
        s.push_str("  </graph>\n</graphml>\n");
        s
    }

    /// Tab-separated `source target chain_types`, one edge per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::from("source\ttarget\tchain_types\n");
        for e in &self.edges {
            let _ = writeln!(s, "{}\t{}\t{}", e.a, e.b, join_types(&e.chain_types));
        }
        s
    }
}
