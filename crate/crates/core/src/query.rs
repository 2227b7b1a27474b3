//! Conjunctive query graphs.
//!
//! A query is a connected DAG whose nodes are anchors (constant entities),
//! existential variables or target (free) variables, and whose edges are the
//! query's triple patterns.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId};

pub type NodeId = u32;
pub type VarId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Anchor(EntityId),
    Existential,
    Target(VarId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryNode {
    pub id: NodeId,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryEdge {
    pub src: NodeId,
    pub relation: RelationId,
    pub dst: NodeId,
}

/// Node ids are dense: `nodes[i].id == i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryDag {
    nodes: Vec<QueryNode>,
    edges: Vec<QueryEdge>,
}

/// A root-to-leaf walk through a query DAG.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct QueryPath {
    pub nodes: Vec<NodeId>,
    /// `relations[i]` labels the edge `nodes[i] -> nodes[i + 1]`.
    pub relations: Vec<RelationId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Empty,
    Cycle,
    Disconnected,
    NoAnchor,
    /// Both endpoints are constants; not one of the admissible conjunct forms.
    ConstantEdge(QueryEdge),
    DuplicateVariable(VarId),
    DepthCollision { first: NodeId, second: NodeId, depth: u32 },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateOptions {
    pub enforce_depth_uniqueness: bool,
    pub allow_anchor_free: bool,
}

pub const DEFAULT_PATH_CAP: usize = 64;

impl QueryDag {
    pub fn new(kinds: Vec<NodeKind>, edges: Vec<(NodeId, RelationId, NodeId)>) -> Result<Self> {
        let nodes: Vec<QueryNode> = kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| QueryNode { id: i as NodeId, kind })
            .collect();
        let n = nodes.len() as NodeId;
        let mut out = Vec::with_capacity(edges.len());
        for (src, relation, dst) in edges {
            if src >= n {
                return Err(Error::UnknownNode(src));
            }
            if dst >= n {
                return Err(Error::UnknownNode(dst));
            }
            out.push(QueryEdge { src, relation, dst });
        }
        Ok(Self { nodes, edges: out })
    }

    /// A chain `kinds[0] -r0-> kinds[1] -r1-> ...`.
    pub fn chain(kinds: Vec<NodeKind>, relations: &[RelationId]) -> Result<Self> {
        if kinds.len() != relations.len() + 1 {
            return Err(Error::InvalidQuery("chain needs one more node than relations".into()));
        }
        let edges = relations.iter().enumerate().map(|(i, &r)| (i as NodeId, r, i as NodeId + 1)).collect();
        Self::new(kinds, edges)
    }

    pub fn nodes(&self) -> &[QueryNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[QueryEdge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, v: NodeId) -> Result<NodeKind> {
        self.nodes.get(v as usize).map(|n| n.kind).ok_or(Error::UnknownNode(v))
    }

    /// `(variable, node)` for every target, sorted by variable id.
    pub fn targets(&self) -> Vec<(VarId, NodeId)> {
        let mut t: Vec<_> = self
            .nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Target(var) => Some((var, n.id)),
                _ => None,
            })
            .collect();
        t.sort_unstable();
        t
    }

    pub fn target_node(&self, var: VarId) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Target(var)).map(|n| n.id)
    }

    pub fn in_degree(&self, v: NodeId) -> usize {
        self.edges.iter().filter(|e| e.dst == v).count()
    }

    pub fn out_degree(&self, v: NodeId) -> usize {
        self.edges.iter().filter(|e| e.src == v).count()
    }

    /// Outgoing `(dst, relation)` per node, sorted.
    fn children(&self) -> Vec<Vec<(NodeId, RelationId)>> {
        let mut ch = alloc::vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            ch[e.src as usize].push((e.dst, e.relation));
        }
        for c in &mut ch {
            c.sort_unstable();
        }
        ch
    }

    fn parents(&self) -> Vec<Vec<(NodeId, RelationId)>> {
        let mut pa = alloc::vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            pa[e.dst as usize].push((e.src, e.relation));
        }
        for p in &mut pa {
            p.sort_unstable();
        }
        pa
    }

    /// Kahn's algorithm, smallest ready id first.
    pub fn topological_order(&self) -> Result<Vec<NodeId>> {
        let children = self.children();
        let mut indeg: Vec<usize> = alloc::vec![0; self.nodes.len()];
        for e in &self.edges {
            indeg[e.dst as usize] += 1;
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> =
            (0..self.nodes.len() as NodeId).filter(|&v| indeg[v as usize] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(v)) = ready.pop() {
            order.push(v);
            for &(c, _) in &children[v as usize] {
                indeg[c as usize] -= 1;
                if indeg[c as usize] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::Cycle);
        }
        Ok(order)
    }

    pub(crate) fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let mut adj = alloc::vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.src as usize].push(e.dst);
            adj[e.dst as usize].push(e.src);
        }
        let mut seen = alloc::vec![false; self.nodes.len()];
        let mut stack = alloc::vec![0 as NodeId];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v as usize] {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Every structural problem with the query; empty means valid.
    pub fn validate(&self, opts: ValidateOptions) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            out.push(Violation::Empty);
            return out;
        }
        let acyclic = self.topological_order().is_ok();
        if !acyclic {
            out.push(Violation::Cycle);
        }
        if !self.is_connected() {
            out.push(Violation::Disconnected);
        }
        if !opts.allow_anchor_free && !self.nodes.iter().any(|n| matches!(n.kind, NodeKind::Anchor(_))) {
            out.push(Violation::NoAnchor);
        }
        for e in &self.edges {
            let both_const = matches!(self.nodes[e.src as usize].kind, NodeKind::Anchor(_))
                && matches!(self.nodes[e.dst as usize].kind, NodeKind::Anchor(_));
            if both_const {
                out.push(Violation::ConstantEdge(*e));
            }
        }
        let mut vars = BTreeSet::new();
        for (var, _) in self.targets() {
            if !vars.insert(var) {
                out.push(Violation::DuplicateVariable(var));
            }
        }
        if opts.enforce_depth_uniqueness && acyclic {
            let depths = self.node_depths().expect("acyclic");
            let mut at_depth: BTreeMap<u32, NodeId> = BTreeMap::new();
            for (_, node) in self.targets() {
                let d = depths[node as usize];
                if let Some(&first) = at_depth.get(&d) {
                    out.push(Violation::DepthCollision { first, second: node, depth: d });
                } else {
                    at_depth.insert(d, node);
                }
            }
        }
        out
    }

    /// Longest distance from any root; roots have depth 0.
    pub fn node_depths(&self) -> Result<Vec<u32>> {
        let order = self.topological_order()?;
        let children = self.children();
        let mut depth = alloc::vec![0u32; self.nodes.len()];
        for v in order {
            for &(c, _) in &children[v as usize] {
                depth[c as usize] = depth[c as usize].max(depth[v as usize] + 1);
            }
        }
        Ok(depth)
    }

    pub fn roots(&self) -> Vec<NodeId> {
        let mut has_parent = alloc::vec![false; self.nodes.len()];
        for e in &self.edges {
            has_parent[e.dst as usize] = true;
        }
        (0..self.nodes.len() as NodeId).filter(|&v| !has_parent[v as usize]).collect()
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        let mut has_child = alloc::vec![false; self.nodes.len()];
        for e in &self.edges {
            has_child[e.src as usize] = true;
        }
        (0..self.nodes.len() as NodeId).filter(|&v| !has_child[v as usize]).collect()
    }

    /// Every root-to-leaf path, in lexicographic order of node ids (then
    /// relation ids). Fails once more than `cap` paths exist.
    pub fn decompose(&self, cap: usize) -> Result<Vec<QueryPath>> {
        self.topological_order()?;
        let children = self.children();
        let mut out = Vec::new();
        let mut nodes = Vec::new();
        let mut rels = Vec::new();
        for root in self.roots() {
            nodes.push(root);
            walk(&children, &mut nodes, &mut rels, &mut out, cap)?;
            nodes.pop();
        }
        Ok(out)
    }

    /// Transitive predecessors and successors of `v`, excluding `v`.
    pub fn relatives(&self, v: NodeId) -> Result<(BTreeSet<NodeId>, BTreeSet<NodeId>)> {
        if v as usize >= self.nodes.len() {
            return Err(Error::UnknownNode(v));
        }
        let reach = |adj: &[Vec<(NodeId, RelationId)>]| {
            let mut seen = BTreeSet::new();
            let mut stack = alloc::vec![v];
            while let Some(u) = stack.pop() {
                for &(w, _) in &adj[u as usize] {
                    if w != v && seen.insert(w) {
                        stack.push(w);
                    }
                }
            }
            seen
        };
        Ok((reach(&self.parents()), reach(&self.children())))
    }
}

fn walk(
    children: &[Vec<(NodeId, RelationId)>],
    nodes: &mut Vec<NodeId>,
    rels: &mut Vec<RelationId>,
    out: &mut Vec<QueryPath>,
    cap: usize,
) -> Result<()> {
    let v = *nodes.last().expect("non-empty");
    let next = &children[v as usize];
    if next.is_empty() {
        if out.len() == cap {
            return Err(Error::TooManyPaths { cap });
        }
        out.push(QueryPath { nodes: nodes.clone(), relations: rels.clone() });
        return Ok(());
    }
    for &(c, r) in next {
        nodes.push(c);
        rels.push(r);
        walk(children, nodes, rels, out, cap)?;
        nodes.pop();
        rels.pop();
    }
    Ok(())
}

/// Where a target sits in a generated star query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PositionClass {
    Tail,
    Intersection,
    Branch,
}

impl PositionClass {
    pub const ALL: [PositionClass; 3] = [PositionClass::Tail, PositionClass::Intersection, PositionClass::Branch];

    pub fn name(self) -> &'static str {
        match self {
            PositionClass::Tail => "tail",
            PositionClass::Intersection => "intersection",
            PositionClass::Branch => "branch",
        }
    }
}

/// A query together with the gold entity of every target variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledQuery {
    pub id: String,
    pub dag: QueryDag,
    pub answers: BTreeMap<VarId, EntityId>,
    /// The intersection node of a generated star, if any.
    pub center: Option<NodeId>,
}

impl LabeledQuery {
    /// Sink targets are tails; the center (or, without one, any target with
    /// in-degree above one) is the intersection; everything else is a branch.
    pub fn position_class(&self, var: VarId) -> Option<PositionClass> {
        let node = self.dag.target_node(var)?;
        Some(if self.dag.out_degree(node) == 0 {
            PositionClass::Tail
        } else if self.center == Some(node) || (self.center.is_none() && self.dag.in_degree(node) > 1) {
            PositionClass::Intersection
        } else {
            PositionClass::Branch
        })
    }

    /// True when the query graph is a single chain.
    pub fn is_path(&self) -> bool {
        self.dag.roots().len() == 1
            && self.dag.nodes().iter().all(|n| self.dag.in_degree(n.id) <= 1 && self.dag.out_degree(n.id) <= 1)
    }
}
