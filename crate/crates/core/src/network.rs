//! Spillover networks and the minimum spanning tree of net spillovers.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::connectedness::{summarize, FevdMatrix, SpilloverSummary};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("need at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("net spillovers vanish across a cut; no spanning tree with finite weights ({components} components)")]
    Disconnected { components: usize },
    #[error("threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("unknown graph format `{0}` (expected graphml, dot or json)")]
    UnknownFormat(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Transmitter,
    Receiver,
}

impl Role {
    pub fn from_net(net: f64) -> Self {
        if net > 0.0 {
            Role::Transmitter
        } else {
            Role::Receiver
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Transmitter => "transmitter",
            Role::Receiver => "receiver",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    pub strength: f64,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

/// Weighted spillover graph. Undirected graphs list each pair once with
/// `source` before `target` in node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpilloverGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub directed: bool,
}

impl SpilloverGraph {
    /// Dense weight matrix in node order; undirected edges fill both halves.
    pub fn weight_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        let index = |id: &str| self.nodes.iter().position(|v| v.id == id).expect("edge endpoint is a node");
        let mut w = vec![vec![0.0; n]; n];
        for e in &self.edges {
            let (i, j) = (index(&e.source), index(&e.target));
            w[i][j] = e.weight;
            if !self.directed {
                w[j][i] = e.weight;
            }
        }
        w
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Undirected graph on pairwise total spillover `100 (s_ij + s_ji)`. Node
/// strength is the average weight of its edges to the other N-1 nodes.
pub fn correlation_network(fevd: &FevdMatrix) -> SpilloverGraph {
    let s = &fevd.shares;
    let n = fevd.n();
    let summary = summarize(fevd);
    let weight = |i: usize, j: usize| 100.0 * (s[(i, j)] + s[(j, i)]);
    let nodes = (0..n)
        .map(|i| {
            let total: f64 = (0..n).filter(|&j| j != i).map(|j| weight(i, j)).sum();
            GraphNode {
                id: fevd.labels[i].clone(),
                strength: if n > 1 { total / (n - 1) as f64 } else { 0.0 },
                role: Role::from_net(summary.net[i]),
            }
        })
        .collect();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push(GraphEdge {
                source: fevd.labels[i].clone(),
                target: fevd.labels[j].clone(),
                weight: weight(i, j),
            });
        }
    }
    SpilloverGraph {
        nodes,
        edges,
        directed: false,
    }
}

/// Directed graph keeping `i -> j` when `npdc[i][j] > threshold` (percent).
/// Node strength is out-strength.
pub fn net_spillover_network(summary: &SpilloverSummary, threshold: f64) -> Result<SpilloverGraph> {
    if !(threshold >= 0.0) {
        return Err(NetworkError::NegativeThreshold(threshold));
    }
    let n = summary.labels.len();
    let mut edges = Vec::new();
    let mut out_strength = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let w = summary.npdc[(i, j)];
            if i != j && w > threshold {
                out_strength[i] += w;
                edges.push(GraphEdge {
                    source: summary.labels[i].clone(),
                    target: summary.labels[j].clone(),
                    weight: w,
                });
            }
        }
    }
    let nodes = (0..n)
        .map(|i| GraphNode {
            id: summary.labels[i].clone(),
            strength: out_strength[i],
            role: Role::from_net(summary.net[i]),
        })
        .collect();
    Ok(SpilloverGraph {
        nodes,
        edges,
        directed: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEdge {
    /// Net transmitter of the pair.
    pub source: String,
    pub target: String,
    /// |npdc|, percent.
    pub weight: f64,
    /// 1 / |npdc|, the length minimized by the tree.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanningTree {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<TreeEdge>,
}

impl SpanningTree {
    pub fn total_distance(&self) -> f64 {
        self.edges.iter().map(|e| e.distance).sum()
    }

    pub fn to_graph(&self) -> SpilloverGraph {
        SpilloverGraph {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| GraphEdge {
                    source: e.source.clone(),
                    target: e.target.clone(),
                    weight: e.weight,
                })
                .collect(),
            directed: true,
        }
    }
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Kruskal tree on distances `1 / |npdc[i][j]|`; pairs with zero net
/// spillover are unusable. Ties break on the (lower, higher) label pair.
pub fn minimum_spanning_tree(summary: &SpilloverSummary) -> Result<SpanningTree> {
    let n = summary.labels.len();
    if n < 2 {
        return Err(NetworkError::TooFewNodes(n));
    }
    let labels = &summary.labels;
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let w = summary.npdc[(i, j)].abs();
            if w > 0.0 {
                candidates.push((1.0 / w, i, j));
            }
        }
    }
    let key = |i: usize, j: usize| {
        if labels[i] <= labels[j] {
            (&labels[i], &labels[j])
        } else {
            (&labels[j], &labels[i])
        }
    };
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| key(a.1, a.2).cmp(&key(b.1, b.2))));

    let mut dsu = DisjointSet::new(n);
    let mut edges = Vec::with_capacity(n - 1);
    let mut out_strength = vec![0.0; n];
    for (distance, i, j) in candidates {
        if dsu.union(i, j) {
            let (src, dst) = if summary.npdc[(i, j)] > 0.0 { (i, j) } else { (j, i) };
            let weight = summary.npdc[(src, dst)];
            out_strength[src] += weight;
            edges.push(TreeEdge {
                source: labels[src].clone(),
                target: labels[dst].clone(),
                weight,
                distance,
            });
            if edges.len() == n - 1 {
                break;
            }
        }
    }
    if edges.len() != n - 1 {
        let components = n - edges.len();
        return Err(NetworkError::Disconnected { components });
    }
    let nodes = (0..n)
        .map(|i| GraphNode {
            id: labels[i].clone(),
            strength: out_strength[i],
            role: Role::from_net(summary.net[i]),
        })
        .collect();
    Ok(SpanningTree { nodes, edges })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFormat {
    Graphml,
    Dot,
    Json,
}

impl GraphFormat {
    pub fn extension(self) -> &'static str {
        match self {
            GraphFormat::Graphml => "graphml",
            GraphFormat::Dot => "dot",
            GraphFormat::Json => "json",
        }
    }
}

impl FromStr for GraphFormat {
    type Err = NetworkError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphml" => Ok(GraphFormat::Graphml),
            "dot" => Ok(GraphFormat::Dot),
            "json" => Ok(GraphFormat::Json),
            other => Err(NetworkError::UnknownFormat(other.to_string())),
        }
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

pub fn to_graphml(graph: &SpilloverGraph) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
    out.push_str("  <key id=\"strength\" for=\"node\" attr.name=\"strength\" attr.type=\"double\"/>\n");
    out.push_str("  <key id=\"role\" for=\"node\" attr.name=\"role\" attr.type=\"string\"/>\n");
    out.push_str("  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n");
    let kind = if graph.directed { "directed" } else { "undirected" };
    let _ = writeln!(out, "  <graph id=\"G\" edgedefault=\"{kind}\">");
    for n in &graph.nodes {
        let _ = writeln!(out, "    <node id=\"{}\">", xml_escape(&n.id));
        let _ = writeln!(out, "      <data key=\"strength\">{}</data>", n.strength);
        let _ = writeln!(out, "      <data key=\"role\">{}</data>", n.role.as_str());
        out.push_str("    </node>\n");
    }
    for (k, e) in graph.edges.iter().enumerate() {
        let _ = writeln!(
            out,
            "    <edge id=\"e{k}\" source=\"{}\" target=\"{}\">",
            xml_escape(&e.source),
            xml_escape(&e.target)
        );
        let _ = writeln!(out, "      <data key=\"weight\">{}</data>", e.weight);
        out.push_str("    </edge>\n");
    }
    out.push_str("  </graph>\n</graphml>\n");
    out
}

/// DOT with `penwidth` scaled linearly into [1, 5] by edge weight.
pub fn to_dot(graph: &SpilloverGraph) -> String {
    let (kw, arrow) = if graph.directed { ("digraph", "->") } else { ("graph", "--") };
    let max_w = graph.edges.iter().map(|e| e.weight.abs()).fold(0.0, f64::max);
    let mut out = format!("{kw} spillover {{\n");
    for n in &graph.nodes {
        let _ = writeln!(
            out,
            "  {} [strength={}, role={}];",
            dot_quote(&n.id),
            dot_quote(&n.strength.to_string()),
            n.role.as_str()
        );
    }
    for e in &graph.edges {
        let pen = if max_w > 0.0 { 1.0 + 4.0 * e.weight.abs() / max_w } else { 1.0 };
        let _ = writeln!(
            out,
            "  {} {arrow} {} [weight={}, penwidth={}];",
            dot_quote(&e.source),
            dot_quote(&e.target),
            dot_quote(&e.weight.to_string()),
            dot_quote(&pen.to_string())
        );
    }
    out.push_str("}\n");
    out
}

pub fn render_graph(graph: &SpilloverGraph, format: GraphFormat) -> Result<String> {
    Ok(match format {
        GraphFormat::Graphml => to_graphml(graph),
        GraphFormat::Dot => to_dot(graph),
        GraphFormat::Json => serde_json::to_string_pretty(graph)? + "\n",
    })
}

pub fn export_graph(graph: &SpilloverGraph, format: GraphFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_graph(graph, format)?).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })
}
