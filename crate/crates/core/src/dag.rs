//! Architecture cells as node-labelled DAGs.
//!
//! NAS-Bench-201 cells are edge-labelled: four feature-map nodes joined by six
//! operation edges. Here each labelled edge becomes an operation node, with
//! explicit `input` and `output` nodes, which gives every cell of the search
//! space the same 8-node topology:
//!
//! ```text
//! input ──> e0 (0→1) ──> e2 (1→2) ──> e5 (2→3) ──> output
//!   │         └────────> e4 (1→3) ────────────────> output
//!   ├─────> e1 (0→2) ─────────────> e5
//!   └─────> e3 (0→3) ─────────────────────────────> output
//! ```
//!
//! Zeroize edges stay in the graph as `none` nodes.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Upper bound on the node count of any stored or decoded cell.
pub const N_MAX: usize = 10;

/// Node operation vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Zeroize,
    Skip,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
    Input,
    Output,
    /// Decoder termination symbol; never stored in a graph.
    End,
}

impl OpKind {
    /// The five searchable operations, in enumeration order.
    pub const SEARCHABLE: [OpKind; 5] = [
        OpKind::Zeroize,
        OpKind::Skip,
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::AvgPool3x3,
    ];

    pub const ALL: [OpKind; 8] = [
        OpKind::Zeroize,
        OpKind::Skip,
        OpKind::Conv1x1,
        OpKind::Conv3x3,
        OpKind::AvgPool3x3,
        OpKind::Input,
        OpKind::Output,
        OpKind::End,
    ];

    /// Position in the one-hot vocabulary.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_searchable(self) -> bool {
        self.index() < 5
    }

    pub fn tag(self) -> &'static str {
        match self {
            OpKind::Zeroize => "none",
            OpKind::Skip => "skip_connect",
            OpKind::Conv1x1 => "nor_conv_1x1",
            OpKind::Conv3x3 => "nor_conv_3x3",
            OpKind::AvgPool3x3 => "avg_pool_3x3",
            OpKind::Input => "input",
            OpKind::Output => "output",
            OpKind::End => "end",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|op| op.tag() == s)
            .ok_or_else(|| Error::Parse(format!("unknown operation tag `{s}`")))
    }
}

/// Source/target cell-node pairs for the six NAS-Bench-201 edges, in spec order.
pub const NB201_EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

/// Edge-labelled NAS-Bench-201 cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeSpec {
    ops: [OpKind; 6],
}

impl EdgeSpec {
    pub fn new(ops: [OpKind; 6]) -> Result<Self> {
        if let Some(bad) = ops.iter().find(|op| !op.is_searchable()) {
            return Err(Error::InvalidArgument(format!(
                "edge operation `{bad}` is not searchable"
            )));
        }
        Ok(Self { ops })
    }

    pub fn ops(&self) -> &[OpKind; 6] {
        &self.ops
    }

    /// Lexicographic rank among all 5^6 specs.
    pub fn rank(&self) -> usize {
        self.ops.iter().fold(0, |acc, op| acc * 5 + op.index())
    }

    pub fn from_rank(mut rank: usize) -> Self {
        let mut ops = [OpKind::Zeroize; 6];
        for slot in ops.iter_mut().rev() {
            *slot = OpKind::SEARCHABLE[rank % 5];
            rank /= 5;
        }
        Self { ops }
    }

    /// Inverse of [`EdgeSpec::to_graph`]: `Some` only for graphs stored
    /// exactly in the eight-node cell layout.
    pub fn from_graph(g: &CellGraph) -> Option<Self> {
        if g.len() != 8 {
            return None;
        }
        let ops: [OpKind; 6] = g.nodes()[1..7].try_into().ok()?;
        let spec = Self::new(ops).ok()?;
        (spec.to_graph() == *g).then_some(spec)
    }

    /// `|op|..|op|` for cells in the eight-node layout, the general notation otherwise.
    pub fn notation(g: &CellGraph) -> String {
        match Self::from_graph(g) {
            Some(spec) => spec.to_string(),
            None => g.to_notation(),
        }
    }

    /// Converts to the node-labelled form: node 0 is `input`, nodes 1..=6 are
    /// the six edges in spec order, node 7 is `output`.
    pub fn to_graph(&self) -> CellGraph {
        let mut nodes = Vec::with_capacity(8);
        nodes.push(OpKind::Input);
        nodes.extend_from_slice(&self.ops);
        nodes.push(OpKind::Output);

        let mut edges = Vec::new();
        for (i, &(src, dst)) in NB201_EDGES.iter().enumerate() {
            let node = i + 1;
            if src == 0 {
                edges.push((0, node));
            }
            if dst == 3 {
                edges.push((node, 7));
            }
            for (j, &(next_src, _)) in NB201_EDGES.iter().enumerate() {
                if next_src == dst {
                    edges.push((node, j + 1));
                }
            }
        }
        CellGraph::new(nodes, edges).expect("NAS-Bench-201 conversion yields a valid cell")
    }
}

impl fmt::Display for EdgeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("|")?;
        for op in &self.ops {
            write!(f, "{}|", op.tag())?;
        }
        Ok(())
    }
}

impl FromStr for EdgeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let inner = s
            .strip_prefix('|')
            .and_then(|rest| rest.strip_suffix('|'))
            .ok_or_else(|| Error::Parse(format!("cell notation `{s}` must be wrapped in `|`")))?;
        let parts: Vec<&str> = inner.split('|').collect();
        if parts.len() != 6 {
            return Err(Error::Parse(format!(
                "cell notation `{s}` has {} operations, expected 6",
                parts.len()
            )));
        }
        let mut ops = [OpKind::Zeroize; 6];
        for (slot, part) in ops.iter_mut().zip(parts) {
            *slot = part.trim().parse()?;
        }
        EdgeSpec::new(ops).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Converts an edge spec to its node-labelled cell.
pub fn from_edge_spec(spec: &EdgeSpec) -> CellGraph {
    spec.to_graph()
}

/// All 15625 cells in lexicographic edge-spec order.
pub fn enumerate_search_space() -> Vec<CellGraph> {
    enumerate_edge_specs().iter().map(EdgeSpec::to_graph).collect()
}

pub fn enumerate_edge_specs() -> Vec<EdgeSpec> {
    (0..5usize.pow(6)).map(EdgeSpec::from_rank).collect()
}

/// Node-labelled architecture cell.
///
/// Graphs built with [`CellGraph::new`] are validated; [`CellGraph::from_parts_unchecked`]
/// skips validation so that corrupted structures can still be inspected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellGraph {
    nodes: Vec<OpKind>,
    edges: Vec<(usize, usize)>,
}

impl CellGraph {
    pub fn new(nodes: Vec<OpKind>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self::from_parts_unchecked(nodes, edges);
        g.validate()?;
        Ok(g)
    }

    /// Builds a graph without checking invariants. Edges are sorted and deduplicated.
    pub fn from_parts_unchecked(nodes: Vec<OpKind>, mut edges: Vec<(usize, usize)>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        Self { nodes, edges }
    }

    pub fn nodes(&self) -> &[OpKind] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn predecessors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.1 == v).map(|e| e.0)
    }

    pub fn successors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.0 == v).map(|e| e.1)
    }

    pub fn input_index(&self) -> Option<usize> {
        self.nodes.iter().position(|&op| op == OpKind::Input)
    }

    pub fn output_index(&self) -> Option<usize> {
        self.nodes.iter().position(|&op| op == OpKind::Output)
    }

    /// Checks every structural invariant of a stored cell.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let invalid = |msg: String| Err(Error::InvalidGraph(msg));
        if n < 2 {
            return invalid(format!("{n} nodes; need at least input and output"));
        }
        if n > N_MAX {
            return invalid(format!("{n} nodes exceeds the limit of {N_MAX}"));
        }
        if self.nodes.contains(&OpKind::End) {
            return invalid("`end` symbol stored as a node".into());
        }
        let count = |op| self.nodes.iter().filter(|&&x| x == op).count();
        if count(OpKind::Input) != 1 || count(OpKind::Output) != 1 {
            return invalid("need exactly one input and one output node".into());
        }
        for &(src, dst) in &self.edges {
            if src >= n || dst >= n {
                return invalid(format!("edge ({src},{dst}) out of range"));
            }
            if src == dst {
                return invalid(format!("self-loop on node {src}"));
            }
        }
        for v in 0..n {
            let has_pred = self.predecessors(v).next().is_some();
            let has_succ = self.successors(v).next().is_some();
            match self.nodes[v] {
                OpKind::Input if has_pred => return invalid("input node has predecessors".into()),
                OpKind::Output if has_succ => return invalid("output node has successors".into()),
                OpKind::Input => {}
                _ if !has_pred => return invalid(format!("node {v} has no predecessor")),
                _ => {}
            }
            if self.nodes[v] != OpKind::Output && !has_succ {
                return invalid(format!("node {v} has no successor"));
            }
        }
        topological_order(self)?;
        Ok(())
    }

    /// Returns the graph with nodes stored in the given order: `order[i]` is the
    /// old index of the node placed at position `i`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.nodes.len() {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        let mut new_index = vec![usize::MAX; order.len()];
        for (new, &old) in order.iter().enumerate() {
            if old >= order.len() || new_index[old] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            new_index[old] = new;
        }
        let nodes = order.iter().map(|&old| self.nodes[old]).collect();
        let edges = self
            .edges
            .iter()
            .map(|&(s, d)| (new_index[s], new_index[d]))
            .collect();
        Ok(Self::from_parts_unchecked(nodes, edges))
    }

    /// `nodes=[tags];edges=[(i,j),...]` in storage order.
    pub fn to_notation(&self) -> String {
        let nodes: Vec<&str> = self.nodes.iter().map(|op| op.tag()).collect();
        let edges: Vec<String> = self
            .edges
            .iter()
            .map(|(s, d)| format!("({s},{d})"))
            .collect();
        format!("nodes=[{}];edges=[{}]", nodes.join(","), edges.join(","))
    }

    /// Parses either the general `nodes=[..];edges=[..]` form or the six-edge
    /// `|op|..|op|` cell notation.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('|') {
            return Ok(s.parse::<EdgeSpec>()?.to_graph());
        }
        let err = || Error::Parse(format!("malformed graph notation `{s}`"));
        let (nodes_part, edges_part) = s.split_once(';').ok_or_else(err)?;
        let nodes_list = nodes_part
            .trim()
            .strip_prefix("nodes=[")
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(err)?;
        let edges_list = edges_part
            .trim()
            .strip_prefix("edges=[")
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(err)?;
        let nodes = nodes_list
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse())
            .collect::<Result<Vec<OpKind>>>()?;
        let mut edges = Vec::new();
        let mut rest = edges_list.trim();
        while !rest.is_empty() {
            let open = rest.strip_prefix('(').ok_or_else(err)?;
            let (pair, tail) = open.split_once(')').ok_or_else(err)?;
            let (a, b) = pair.split_once(',').ok_or_else(err)?;
            let a = a.trim().parse::<usize>().map_err(|_| err())?;
            let b = b.trim().parse::<usize>().map_err(|_| err())?;
            edges.push((a, b));
            rest = tail.trim_start_matches(',').trim();
        }
        Self::new(nodes, edges)
    }
}

impl fmt::Display for CellGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_notation())
    }
}

/// Kahn's algorithm; ready nodes are taken in `(op-tag, original index)` order.
pub fn topological_order(g: &CellGraph) -> Result<Vec<usize>> {
    kahn(g, |v| (g.nodes[v].index(), 0, 0, v))
}

fn kahn<F>(g: &CellGraph, priority: F) -> Result<Vec<usize>>
where
    F: Fn(usize) -> (usize, u64, u64, usize),
{
    let n = g.nodes.len();
    let mut indegree = vec![0usize; n];
    for &(s, d) in &g.edges {
        if s >= n || d >= n {
            return Err(Error::InvalidGraph(format!("edge ({s},{d}) out of range")));
        }
        indegree[d] += 1;
    }
    let mut heap: BinaryHeap<Reverse<(usize, u64, u64, usize)>> = (0..n)
        .filter(|&v| indegree[v] == 0)
        .map(|v| Reverse(priority(v)))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(key)) = heap.pop() {
        let v = key.3;
        order.push(v);
        for &(s, d) in &g.edges {
            if s == v {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    heap.push(Reverse(priority(d)));
                }
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).filter(|&v| indegree[v] > 0).collect();
        return Err(Error::Cycle(stuck));
    }
    Ok(order)
}

fn fnv1a(bytes: impl IntoIterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for word in bytes {
        for b in word.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Structural signatures of every node: a hash of the node's operation and
/// the sorted signatures of its ancestors (`up`) or descendants (`down`).
fn signatures(g: &CellGraph, order: &[usize], up: bool) -> Vec<u64> {
    let mut sig = vec![0u64; g.nodes.len()];
    let visit: Box<dyn Iterator<Item = &usize>> = if up {
        Box::new(order.iter())
    } else {
        Box::new(order.iter().rev())
    };
    for &v in visit {
        let mut neighbours: Vec<u64> = if up {
            g.predecessors(v).map(|u| sig[u]).collect()
        } else {
            g.successors(v).map(|u| sig[u]).collect()
        };
        neighbours.sort_unstable();
        sig[v] = fnv1a(std::iter::once(g.nodes[v].index() as u64).chain(neighbours));
    }
    sig
}

/// Node `v` as seen from its final position: op index and the sorted
/// positions of its predecessors.
type Entry = (usize, Vec<usize>);

struct OrderSearch<'a> {
    g: &'a CellGraph,
    priority: Vec<(usize, u64, u64)>,
    indegree: Vec<usize>,
    position: Vec<usize>,
    order: Vec<usize>,
    encoding: Vec<Entry>,
    best: Option<(Vec<Entry>, Vec<usize>)>,
}

impl OrderSearch<'_> {
    fn run(&mut self) {
        let n = self.g.len();
        if self.order.len() == n {
            if self.best.as_ref().is_none_or(|(best, _)| self.encoding < *best) {
                self.best = Some((self.encoding.clone(), self.order.clone()));
            }
            return;
        }
        let ready: Vec<usize> = (0..n)
            .filter(|&v| self.position[v] == usize::MAX && self.indegree[v] == 0)
            .collect();
        let Some(top) = ready.iter().map(|&v| self.priority[v]).min() else {
            return;
        };
        let tied: Vec<usize> = ready.into_iter().filter(|&v| self.priority[v] == top).collect();
        for v in tied {
            let mut preds: Vec<usize> = self.g.predecessors(v).map(|u| self.position[u]).collect();
            preds.sort_unstable();
            self.encoding.push((self.g.nodes[v].index(), preds));
            let depth = self.encoding.len();
            let worse = self
                .best
                .as_ref()
                .is_some_and(|(best, _)| self.encoding[..] > best[..depth]);
            if !worse {
                self.position[v] = self.order.len();
                self.order.push(v);
                for (_, d) in self.g.edges.iter().filter(|e| e.0 == v) {
                    self.indegree[*d] -= 1;
                }
                self.run();
                for (_, d) in self.g.edges.iter().filter(|e| e.0 == v) {
                    self.indegree[*d] += 1;
                }
                self.order.pop();
                self.position[v] = usize::MAX;
            }
            self.encoding.pop();
        }
    }
}

/// Deterministic relabelling order used for canonical keys. Kahn's algorithm
/// ready nodes are ranked by op tag, then ancestor and descendant
/// signatures; nodes that still tie are branched over and the order with the
/// smallest relabelled encoding wins, so the result does not depend on
/// storage order.
pub fn canonical_order(g: &CellGraph) -> Result<Vec<usize>> {
    let base = topological_order(g)?;
    let up = signatures(g, &base, true);
    let down = signatures(g, &base, false);
    let n = g.len();
    let mut indegree = vec![0usize; n];
    for &(_, d) in &g.edges {
        indegree[d] += 1;
    }
    let mut search = OrderSearch {
        g,
        priority: (0..n).map(|v| (g.nodes[v].index(), up[v], down[v])).collect(),
        indegree,
        position: vec![usize::MAX; n],
        order: Vec::with_capacity(n),
        encoding: Vec::with_capacity(n),
        best: None,
    };
    search.run();
    search
        .best
        .map(|(_, order)| order)
        .ok_or_else(|| Error::InvalidGraph("no topological order".into()))
}

/// The graph relabelled into canonical order.
pub fn canonicalize(g: &CellGraph) -> Result<CellGraph> {
    g.validate()?;
    g.permuted(&canonical_order(g)?)
}

/// Identity string used for deduplication during search.
pub fn canonical_key(g: &CellGraph) -> Result<String> {
    Ok(canonicalize(g)?.to_notation())
}
