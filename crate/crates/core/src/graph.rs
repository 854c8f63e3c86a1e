//! Network DAG representation.
//!
//! Nodes and edges are dense integer indices assigned at construction, so a
//! weight assignment is a flat array indexed by [`EdgeId`]. Every node keeps
//! its incoming and outgoing edge lists in CSR form. When the incoming edges of
//! a node have consecutive ids *and* consecutive source nodes (always the case
//! for [`NetworkGraph::layered`]) the node is tagged with a contiguous run so
//! the hot loops in [`crate::forward`] can use plain slices.

use std::collections::HashSet;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type EdgeId = usize;

/// Default upper bound on the number of paths the enumeration oracles accept.
pub const DEFAULT_PATH_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub source: NodeId,
    pub target: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Input,
    Hidden,
    Output,
}

/// Incoming edges `first_edge..first_edge+len` come from nodes
/// `first_source..first_source+len`, in the same order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContiguousRun {
    pub first_edge: EdgeId,
    pub first_source: NodeId,
    pub len: usize,
}

/// An input-to-output path, stored as its edge sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Path {
    edges: Vec<EdgeId>,
}

impl Path {
    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, e: EdgeId) -> bool {
        self.edges.contains(&e)
    }
}

/// Immutable, validated feedforward network graph.
#[derive(Debug, Clone)]
pub struct NetworkGraph {
    node_count: usize,
    inputs: Vec<NodeId>,
    outputs: Vec<NodeId>,
    edges: Vec<Edge>,
    roles: Vec<Role>,
    /// Position of a node within `inputs` / `outputs`.
    input_slot: Vec<Option<usize>>,
    output_slot: Vec<Option<usize>>,
    in_offsets: Vec<usize>,
    in_list: Vec<EdgeId>,
    out_offsets: Vec<usize>,
    out_list: Vec<EdgeId>,
    runs: Vec<Option<ContiguousRun>>,
    topo: Vec<NodeId>,
    level_in: Vec<usize>,
    level_out: Vec<usize>,
    level_sets_in: Vec<Vec<NodeId>>,
    level_sets_out: Vec<Vec<NodeId>>,
    depth: usize,
    layer_sizes: Option<Vec<usize>>,
}

impl NetworkGraph {
    /// Fully connected layered network. Nodes are numbered layer by layer and
    /// edges are grouped by target node, sources in increasing order.
    pub fn layered(layer_sizes: &[usize]) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArchitecture(format!("layer {pos} has size 0")));
        }
        let mut starts = Vec::with_capacity(layer_sizes.len());
        let mut next = 0;
        for &s in layer_sizes {
            starts.push(next);
            next += s;
        }
        let node_count = next;
        let edge_count: usize = layer_sizes.windows(2).map(|w| w[0] * w[1]).sum();
        let mut edges = Vec::with_capacity(edge_count);
        for l in 0..layer_sizes.len() - 1 {
            for t in 0..layer_sizes[l + 1] {
                for s in 0..layer_sizes[l] {
                    edges.push(Edge {
                        source: starts[l] + s,
                        target: starts[l + 1] + t,
                    });
                }
            }
        }
        let last = layer_sizes.len() - 1;
        let inputs: Vec<NodeId> = (0..layer_sizes[0]).collect();
        let outputs: Vec<NodeId> = (starts[last]..starts[last] + layer_sizes[last]).collect();
        let mut g = Self::assemble(node_count, inputs, outputs, edges)?;
        g.layer_sizes = Some(layer_sizes.to_vec());
        Ok(g)
    }

    /// General DAG from explicit node count, ordered input/output lists and
    /// an edge list. Edge ids follow the order of `edges`.
    pub fn dag(
        node_count: usize,
        inputs: Vec<NodeId>,
        outputs: Vec<NodeId>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        let mut g = Self::assemble(node_count, inputs, outputs, edges)?;
        g.layer_sizes = g.detect_layered();
        Ok(g)
    }

    fn assemble(
        node_count: usize,
        inputs: Vec<NodeId>,
        outputs: Vec<NodeId>,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        if inputs.is_empty() || outputs.is_empty() {
            return Err(Error::InvalidArchitecture(
                "need at least one input and one output node".into(),
            ));
        }
        let mut roles = vec![Role::Hidden; node_count];
        let mut input_slot = vec![None; node_count];
        let mut output_slot = vec![None; node_count];
        for (i, &v) in inputs.iter().enumerate() {
            if v >= node_count {
                return Err(Error::InvalidArchitecture(format!("input node {v} out of range")));
            }
            if input_slot[v].is_some() {
                return Err(Error::InvalidArchitecture(format!("input node {v} listed twice")));
            }
            input_slot[v] = Some(i);
            roles[v] = Role::Input;
        }
        for (i, &v) in outputs.iter().enumerate() {
            if v >= node_count {
                return Err(Error::InvalidArchitecture(format!("output node {v} out of range")));
            }
            if input_slot[v].is_some() {
                return Err(Error::RoleViolation(format!("node {v} is both input and output")));
            }
            if output_slot[v].is_some() {
                return Err(Error::InvalidArchitecture(format!("output node {v} listed twice")));
            }
            output_slot[v] = Some(i);
            roles[v] = Role::Output;
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for e in &edges {
            if e.source >= node_count || e.target >= node_count {
                return Err(Error::InvalidArchitecture(format!(
                    "edge {}->{} references a missing node",
                    e.source, e.target
                )));
            }
            if !seen.insert(*e) {
                return Err(Error::InvalidArchitecture(format!(
                    "duplicate edge {}->{}",
                    e.source, e.target
                )));
            }
        }

        let (in_offsets, in_list) = csr(node_count, &edges, |e| e.target);
        let (out_offsets, out_list) = csr(node_count, &edges, |e| e.source);

        for &v in &inputs {
            if in_offsets[v + 1] > in_offsets[v] {
                return Err(Error::RoleViolation(format!("input node {v} has incoming edges")));
            }
        }
        for &v in &outputs {
            if out_offsets[v + 1] > out_offsets[v] {
                return Err(Error::RoleViolation(format!("output node {v} has outgoing edges")));
            }
        }

        // Kahn's algorithm; smallest ready id first keeps the order deterministic.
        let mut indeg: Vec<usize> = (0..node_count)
            .map(|v| in_offsets[v + 1] - in_offsets[v])
            .collect();
        let mut ready = std::collections::BinaryHeap::new();
        for (v, &d) in indeg.iter().enumerate() {
            if d == 0 {
                ready.push(std::cmp::Reverse(v));
            }
        }
        let mut topo = Vec::with_capacity(node_count);
        while let Some(std::cmp::Reverse(v)) = ready.pop() {
            topo.push(v);
            for &e in &out_list[out_offsets[v]..out_offsets[v + 1]] {
                let t = edges[e].target;
                indeg[t] -= 1;
                if indeg[t] == 0 {
                    ready.push(std::cmp::Reverse(t));
                }
            }
        }
        if topo.len() != node_count {
            let stuck = (0..node_count).find(|&v| indeg[v] > 0).unwrap_or(0);
            return Err(Error::CyclicGraph(stuck));
        }

        // Reachability from inputs and to outputs.
        let mut from_input = vec![false; node_count];
        for &v in &inputs {
            from_input[v] = true;
        }
        for &v in &topo {
            if from_input[v] {
                for &e in &out_list[out_offsets[v]..out_offsets[v + 1]] {
                    from_input[edges[e].target] = true;
                }
            }
        }
        let mut to_output = vec![false; node_count];
        for &v in &outputs {
            to_output[v] = true;
        }
        for &v in topo.iter().rev() {
            if !to_output[v] {
                to_output[v] = out_list[out_offsets[v]..out_offsets[v + 1]]
                    .iter()
                    .any(|&e| to_output[edges[e].target]);
            }
        }
        if let Some(v) = (0..node_count).find(|&v| !from_input[v] || !to_output[v]) {
            return Err(Error::DeadUnit(v));
        }

        let mut level_in = vec![0usize; node_count];
        for &v in &topo {
            for &e in &in_list[in_offsets[v]..in_offsets[v + 1]] {
                level_in[v] = level_in[v].max(level_in[edges[e].source] + 1);
            }
        }
        let mut level_out = vec![0usize; node_count];
        for &v in topo.iter().rev() {
            for &e in &out_list[out_offsets[v]..out_offsets[v + 1]] {
                level_out[v] = level_out[v].max(level_out[edges[e].target] + 1);
            }
        }
        let depth = level_in.iter().copied().max().unwrap_or(0);
        let mut level_sets_in = vec![Vec::new(); depth + 1];
        let mut level_sets_out = vec![Vec::new(); depth + 1];
        for v in 0..node_count {
            level_sets_in[level_in[v]].push(v);
            level_sets_out[level_out[v]].push(v);
        }

        let runs = (0..node_count)
            .map(|v| {
                let list = &in_list[in_offsets[v]..in_offsets[v + 1]];
                let first = *list.first()?;
                let first_source = edges[first].source;
                let contiguous = list.iter().enumerate().all(|(k, &e)| {
                    e == first + k && edges[e].source == first_source + k
                });
                contiguous.then_some(ContiguousRun {
                    first_edge: first,
                    first_source,
                    len: list.len(),
                })
            })
            .collect();

        Ok(Self {
            node_count,
            inputs,
            outputs,
            edges,
            roles,
            input_slot,
            output_slot,
            in_offsets,
            in_list,
            out_offsets,
            out_list,
            runs,
            topo,
            level_in,
            level_out,
            level_sets_in,
            level_sets_out,
            depth,
            layer_sizes: None,
        })
    }

    /// Returns layer sizes when every edge joins consecutive levels and levels
    /// are fully connected.
    fn detect_layered(&self) -> Option<Vec<usize>> {
        let sizes: Vec<usize> = self.level_sets_in.iter().map(Vec::len).collect();
        let consecutive = self
            .edges
            .iter()
            .all(|e| self.level_in[e.target] == self.level_in[e.source] + 1);
        let full = self.edges.len() == sizes.windows(2).map(|w| w[0] * w[1]).sum::<usize>();
        let ends = sizes[0] == self.inputs.len() && sizes[self.depth] == self.outputs.len();
        (consecutive && full && ends).then_some(sizes)
    }

    pub fn num_nodes(&self) -> usize {
        self.node_count
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.len()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, e: EdgeId) -> Edge {
        self.edges[e]
    }

    /// Looks up the id of edge `source -> target`.
    pub fn find_edge(&self, source: NodeId, target: NodeId) -> Result<EdgeId> {
        if source < self.node_count {
            for &e in self.outgoing(source) {
                if self.edges[e].target == target {
                    return Ok(e);
                }
            }
        }
        Err(Error::MissingEdge(format!("{source}->{target}")))
    }

    pub fn role(&self, v: NodeId) -> Role {
        self.roles[v]
    }

    pub fn is_hidden(&self, v: NodeId) -> bool {
        self.roles[v] == Role::Hidden
    }

    pub fn input_slot(&self, v: NodeId) -> Option<usize> {
        self.input_slot[v]
    }

    pub fn output_slot(&self, v: NodeId) -> Option<usize> {
        self.output_slot[v]
    }

    pub fn hidden_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count).filter(move |&v| self.roles[v] == Role::Hidden)
    }

    pub fn num_hidden(&self) -> usize {
        self.roles.iter().filter(|&&r| r == Role::Hidden).count()
    }

    pub fn incoming(&self, v: NodeId) -> &[EdgeId] {
        &self.in_list[self.in_offsets[v]..self.in_offsets[v + 1]]
    }

    pub fn outgoing(&self, v: NodeId) -> &[EdgeId] {
        &self.out_list[self.out_offsets[v]..self.out_offsets[v + 1]]
    }

    pub fn fan_in(&self, v: NodeId) -> usize {
        self.in_offsets[v + 1] - self.in_offsets[v]
    }

    pub fn contiguous_run(&self, v: NodeId) -> Option<ContiguousRun> {
        self.runs[v]
    }

    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    /// Longest directed path length in the graph.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Longest path length from `v` back to an input unit.
    pub fn level_in(&self, v: NodeId) -> usize {
        self.level_in[v]
    }

    /// Longest path length from `v` forward to an output unit.
    pub fn level_out(&self, v: NodeId) -> usize {
        self.level_out[v]
    }

    pub fn level_sets_in(&self) -> &[Vec<NodeId>] {
        &self.level_sets_in
    }

    pub fn level_sets_out(&self) -> &[Vec<NodeId>] {
        &self.level_sets_out
    }

    /// Layer sizes if the graph is a fully connected layered network.
    pub fn layer_sizes(&self) -> Option<&[usize]> {
        self.layer_sizes.as_deref()
    }

    /// Number of input-to-output paths, saturating at `u128::MAX`.
    pub fn path_count(&self) -> u128 {
        let mut count = vec![0u128; self.node_count];
        for &v in &self.inputs {
            count[v] = 1;
        }
        for &v in &self.topo {
            for &e in self.outgoing(v) {
                let t = self.edges[e].target;
                count[t] = count[t].saturating_add(count[v]);
            }
        }
        self.outputs
            .iter()
            .fold(0u128, |acc, &v| acc.saturating_add(count[v]))
    }

    /// Every input-to-output path, lexicographically ordered by edge ids.
    pub fn enumerate_paths(&self) -> Result<Vec<Path>> {
        self.enumerate_paths_capped(DEFAULT_PATH_CAP)
    }

    pub fn enumerate_paths_capped(&self, cap: usize) -> Result<Vec<Path>> {
        let count = self.path_count();
        if count > cap as u128 {
            return Err(Error::OracleTooLarge { count, cap });
        }
        let mut paths = Vec::with_capacity(count as usize);
        let mut starts: Vec<EdgeId> = self
            .inputs
            .iter()
            .flat_map(|&v| self.outgoing(v).iter().copied())
            .collect();
        starts.sort_unstable();
        let mut stack = Vec::with_capacity(self.depth);
        for e in starts {
            self.extend_paths(e, &mut stack, &mut paths);
        }
        Ok(paths)
    }

    fn extend_paths(&self, e: EdgeId, stack: &mut Vec<EdgeId>, out: &mut Vec<Path>) {
        stack.push(e);
        let t = self.edges[e].target;
        if self.roles[t] == Role::Output {
            out.push(Path {
                edges: stack.clone(),
            });
        } else {
            let mut next: Vec<EdgeId> = self.outgoing(t).to_vec();
            next.sort_unstable();
            for n in next {
                self.extend_paths(n, stack, out);
            }
        }
        stack.pop();
    }

    /// The paths of [`Self::enumerate_paths`] that traverse edge `e`.
    pub fn paths_through_edge(&self, e: EdgeId) -> Result<Vec<Path>> {
        if e >= self.edges.len() {
            return Err(Error::MissingEdge(format!("id {e}")));
        }
        Ok(self
            .enumerate_paths()?
            .into_iter()
            .filter(|p| p.contains(e))
            .collect())
    }
}

fn csr(node_count: usize, edges: &[Edge], key: impl Fn(&Edge) -> NodeId) -> (Vec<usize>, Vec<EdgeId>) {
    let mut offsets = vec![0usize; node_count + 1];
    for e in edges {
        offsets[key(e) + 1] += 1;
    }
    for v in 0..node_count {
        offsets[v + 1] += offsets[v];
    }
    let mut fill = offsets.clone();
    let mut list = vec![0; edges.len()];
    for (id, e) in edges.iter().enumerate() {
        let k = key(e);
        list[fill[k]] = id;
        fill[k] += 1;
    }
    (offsets, list)
}

/// Architecture description accepted by `--arch`: either a layer-size list or
/// an explicit DAG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchSpec {
    Layers {
        layers: Vec<usize>,
    },
    Dag {
        nodes: usize,
        inputs: Vec<NodeId>,
        outputs: Vec<NodeId>,
        edges: Vec<(NodeId, NodeId)>,
    },
}

impl ArchSpec {
    /// Parses `"100,32,10"` inline, or reads a JSON file of either shape,
    /// e.g. `{"layers":[100,32,10]}` or
    /// `{"nodes":3,"inputs":[0],"outputs":[2],"edges":[[0,1],[1,2]]}`.
    pub fn parse(arg: &str) -> Result<Self> {
        let trimmed = arg.trim();
        if !trimmed.is_empty() && trimmed.chars().all(|c| c.is_ascii_digit() || c == ',' || c == 'x' || c == ' ') {
            let layers = trimmed
                .split([',', 'x'])
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::InvalidArchitecture(format!("bad layer size {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(ArchSpec::Layers { layers });
        }
        let text = std::fs::read_to_string(FsPath::new(trimmed)).map_err(|e| Error::io(trimmed, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<NetworkGraph> {
        match self {
            ArchSpec::Layers { layers } => NetworkGraph::layered(layers),
            ArchSpec::Dag {
                nodes,
                inputs,
                outputs,
                edges,
            } => NetworkGraph::dag(
                *nodes,
                inputs.clone(),
                outputs.clone(),
                edges
                    .iter()
                    .map(|&(source, target)| Edge { source, target })
                    .collect(),
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(source: usize, target: usize) -> Edge {
        Edge { source, target }
    }

    #[test]
    fn smallest_layered_net() {
        let g = NetworkGraph::layered(&[2, 1, 1]).unwrap();
        assert_eq!(g.num_nodes(), 4);
        assert_eq!(g.num_edges(), 3);
        assert_eq!(g.depth(), 2);
        assert_eq!(g.inputs(), &[0, 1]);
        assert_eq!(g.outputs(), &[3]);
        assert_eq!(g.edge(0), e(0, 2));
        assert_eq!(g.edge(1), e(1, 2));
        assert_eq!(g.edge(2), e(2, 3));
    }

    #[test]
    fn layered_edge_counts() {
        let g = NetworkGraph::layered(&[784, 32, 10]).unwrap();
        assert_eq!(g.num_edges(), 784 * 32 + 32 * 10);
        assert_eq!(g.num_edges(), 25_408);
        assert_eq!(g.depth(), 2);
        let g = NetworkGraph::layered(&[100, 4000, 4000, 10]).unwrap();
        assert_eq!(g.num_edges(), 100 * 4000 + 4000 * 4000 + 4000 * 10);
        assert_eq!(g.depth(), 3);
    }

    #[test]
    fn layered_level_sets_mirror() {
        let g = NetworkGraph::layered(&[3, 4, 2, 2]).unwrap();
        let d = g.depth();
        for i in 0..=d {
            let mut a = g.level_sets_in()[i].clone();
            let mut b = g.level_sets_out()[d - i].clone();
            a.sort();
            b.sort();
            assert_eq!(a, b);
        }
        assert_eq!(g.layer_sizes(), Some(&[3, 4, 2, 2][..]));
        for v in 0..g.num_nodes() {
            if g.role(v) != Role::Input {
                assert!(g.contiguous_run(v).is_some());
            }
        }
    }

    #[test]
    fn invalid_layer_specs() {
        assert!(matches!(NetworkGraph::layered(&[]), Err(Error::InvalidArchitecture(_))));
        assert!(matches!(NetworkGraph::layered(&[3]), Err(Error::InvalidArchitecture(_))));
        assert!(matches!(NetworkGraph::layered(&[3, 0, 2]), Err(Error::InvalidArchitecture(_))));
    }

    #[test]
    fn single_edge_dag() {
        let g = NetworkGraph::dag(2, vec![0], vec![1], vec![e(0, 1)]).unwrap();
        assert_eq!(g.depth(), 1);
        assert_eq!(g.level_sets_in()[0], vec![0]);
        assert_eq!(g.level_sets_in()[1], vec![1]);
        let paths = g.enumerate_paths().unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].edges(), &[0]);
        assert_eq!(g.paths_through_edge(0).unwrap().len(), 1);
    }

    #[test]
    fn diamond_depth() {
        // in=0, a=1, b=2, out=3
        let g = NetworkGraph::dag(4, vec![0], vec![3], vec![e(0, 1), e(0, 2), e(1, 3), e(2, 3)]).unwrap();
        assert_eq!(g.depth(), 2);
        assert_eq!(g.enumerate_paths().unwrap().len(), 2);
    }

    #[test]
    fn skip_connection_uses_longest_path() {
        // in=0, a=1, out=2
        let g = NetworkGraph::dag(3, vec![0], vec![2], vec![e(0, 1), e(1, 2), e(0, 2)]).unwrap();
        assert_eq!(g.depth(), 2);
        assert!(g.level_sets_in()[2].contains(&2));
        assert_eq!(g.level_in(2), 2);
        assert_eq!(g.layer_sizes(), None);
        let paths = g.enumerate_paths().unwrap();
        // Lexicographic by edge id: [0,1] then [2].
        assert_eq!(paths[0].edges(), &[0, 1]);
        assert_eq!(paths[1].edges(), &[2]);
    }

    #[test]
    fn cycle_rejected() {
        let r = NetworkGraph::dag(4, vec![0], vec![3], vec![e(0, 1), e(1, 2), e(2, 1), e(2, 3)]);
        assert!(matches!(r, Err(Error::CyclicGraph(_))));
    }

    #[test]
    fn role_violations() {
        // Output with an outgoing edge.
        let r = NetworkGraph::dag(3, vec![0], vec![1], vec![e(0, 1), e(1, 2)]);
        assert!(matches!(r, Err(Error::RoleViolation(_))));
        // Input with an incoming edge.
        let r = NetworkGraph::dag(3, vec![1], vec![2], vec![e(0, 1), e(1, 2)]);
        assert!(matches!(r, Err(Error::RoleViolation(_))));
    }

    #[test]
    fn dead_unit_rejected() {
        // Node 2 never reaches the output.
        let r = NetworkGraph::dag(4, vec![0], vec![3], vec![e(0, 1), e(1, 3), e(0, 2)]);
        assert!(matches!(r, Err(Error::DeadUnit(2))));
        // Node 2 is never reached from an input.
        let r = NetworkGraph::dag(4, vec![0], vec![3], vec![e(0, 1), e(1, 3), e(2, 3)]);
        assert!(matches!(r, Err(Error::DeadUnit(2))));
    }

    #[test]
    fn path_counts_small_nets() {
        let g = NetworkGraph::layered(&[2, 1, 1]).unwrap();
        assert_eq!(g.enumerate_paths().unwrap().len(), 2);
        assert_eq!(g.paths_through_edge(2).unwrap().len(), 2);
        assert_eq!(g.paths_through_edge(0).unwrap().len(), 1);
        let g = NetworkGraph::layered(&[2, 2, 2]).unwrap();
        assert_eq!(g.enumerate_paths().unwrap().len(), 8);
        assert_eq!(g.path_count(), 8);
    }

    #[test]
    fn unknown_edge_rejected() {
        let g = NetworkGraph::layered(&[2, 1, 1]).unwrap();
        assert!(matches!(g.paths_through_edge(3), Err(Error::MissingEdge(_))));
        assert!(matches!(g.find_edge(0, 3), Err(Error::MissingEdge(_))));
        assert_eq!(g.find_edge(2, 3).unwrap(), 2);
    }

    #[test]
    fn path_cap_enforced() {
        let g = NetworkGraph::layered(&[10, 10, 10, 10]).unwrap();
        assert_eq!(g.path_count(), 10_000);
        assert!(matches!(
            g.enumerate_paths_capped(9_999),
            Err(Error::OracleTooLarge { count: 10_000, .. })
        ));
        assert_eq!(g.enumerate_paths_capped(10_000).unwrap().len(), 10_000);
    }

    #[test]
    fn layered_path_count_is_product() {
        for sizes in [vec![3, 2, 4], vec![1, 5, 2, 3], vec![2, 2, 2, 2, 2]] {
            let g = NetworkGraph::layered(&sizes).unwrap();
            let expected: usize = sizes.iter().product();
            assert_eq!(g.enumerate_paths().unwrap().len(), expected);
        }
    }

    #[test]
    fn arch_spec_parsing() {
        let a = ArchSpec::parse("100,32,10").unwrap();
        assert_eq!(a, ArchSpec::Layers { layers: vec![100, 32, 10] });
        let g = a.build().unwrap();
        assert_eq!(g.num_edges(), 100 * 32 + 32 * 10);
        let d = ArchSpec::from_json(r#"{"nodes":3,"inputs":[0],"outputs":[2],"edges":[[0,1],[1,2],[0,2]]}"#)
            .unwrap();
        assert_eq!(d.build().unwrap().depth(), 2);
        let l = ArchSpec::from_json(r#"{"layers":[2,1,1]}"#).unwrap();
        assert_eq!(l.build().unwrap().num_edges(), 3);
    }
}
