//! Exact answer sets of a conjunctive query over a (complete) graph.
//!
//! Candidate domains are first pruned to arc consistency. On queries whose
//! undirected shape is a tree that fixpoint is already exact; otherwise
//! every surviving candidate of a target is confirmed by a backtracking
//! search that assigns variables in topological-depth order and draws
//! candidates from the adjacency indexes of already-bound neighbours.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::kg::{EntityId, KnowledgeGraph};
use crate::query::{NodeId, NodeKind, QueryDag, QueryEdge, VarId};

/// For each target variable, the entities it takes in at least one complete
/// satisfying assignment. An unsatisfiable query maps every target to `{}`.
pub fn ground_answers(dag: &QueryDag, kg: &KnowledgeGraph) -> BTreeMap<VarId, BTreeSet<EntityId>> {
    let targets = dag.targets();
    let empty = || targets.iter().map(|&(v, _)| (v, BTreeSet::new())).collect();
    let Some(mut domains) = Domains::new(dag, kg) else {
        return empty();
    };
    if !domains.make_arc_consistent(dag, kg) {
        return empty();
    }
    if is_undirected_tree(dag) {
        return targets.iter().map(|&(v, node)| (v, domains.values(node).collect())).collect();
    }

    let order = depth_order(dag);
    let mut supported: BTreeMap<NodeId, BTreeSet<EntityId>> = BTreeMap::new();
    let mut assignment: Vec<Option<EntityId>> = vec![None; dag.len()];
    for &(_, node) in &targets {
        let candidates: Vec<EntityId> = domains.values(node).collect();
        for c in candidates {
            if supported.get(&node).is_some_and(|s| s.contains(&c)) {
                continue;
            }
            assignment.iter_mut().for_each(|a| *a = None);
            assignment[node as usize] = Some(c);
            if search(dag, kg, &domains, &order, 0, &mut assignment) {
                for &(_, t) in &targets {
                    supported.entry(t).or_default().insert(assignment[t as usize].expect("complete"));
                }
            }
        }
    }
    targets.iter().map(|&(v, node)| (v, supported.remove(&node).unwrap_or_default())).collect()
}

struct Domains {
    member: Vec<Vec<bool>>,
}

impl Domains {
    fn new(dag: &QueryDag, kg: &KnowledgeGraph) -> Option<Self> {
        let ne = kg.num_entities();
        let mut member = Vec::with_capacity(dag.len());
        for n in dag.nodes() {
            member.push(match n.kind {
                NodeKind::Anchor(e) => {
                    if e as usize >= ne {
                        return None;
                    }
                    let mut m = vec![false; ne];
                    m[e as usize] = true;
                    m
                }
                _ => vec![true; ne],
            });
        }
        Some(Self { member })
    }

    fn values(&self, node: NodeId) -> impl Iterator<Item = EntityId> + '_ {
        self.member[node as usize].iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i as EntityId)
    }

    /// AC-3 over the edge constraints. Returns false if a domain empties.
    fn make_arc_consistent(&mut self, dag: &QueryDag, kg: &KnowledgeGraph) -> bool {
        let edges = dag.edges();
        let mut queue: Vec<usize> = (0..edges.len()).collect();
        let mut queued = vec![true; edges.len()];
        while let Some(i) = queue.pop() {
            queued[i] = false;
            let e = edges[i];
            let changed_dst = self.revise_dst(&e, kg);
            let changed_src = self.revise_src(&e, kg);
            for (changed, node) in [(changed_dst, e.dst), (changed_src, e.src)] {
                if !changed {
                    continue;
                }
                if !self.member[node as usize].iter().any(|&m| m) {
                    return false;
                }
                for (j, f) in edges.iter().enumerate() {
                    if j != i && !queued[j] && (f.src == node || f.dst == node) {
                        queued[j] = true;
                        queue.push(j);
                    }
                }
            }
        }
        true
    }

    fn revise_dst(&mut self, e: &QueryEdge, kg: &KnowledgeGraph) -> bool {
        let (src, dst) = (e.src as usize, e.dst as usize);
        let mut changed = false;
        for t in 0..self.member[dst].len() {
            if self.member[dst][t] && !kg.heads(e.relation, t as EntityId).any(|h| self.member[src][h as usize]) {
                self.member[dst][t] = false;
                changed = true;
            }
        }
        changed
    }

    fn revise_src(&mut self, e: &QueryEdge, kg: &KnowledgeGraph) -> bool {
        let (src, dst) = (e.src as usize, e.dst as usize);
        let mut changed = false;
        for h in 0..self.member[src].len() {
            if self.member[src][h] && !kg.tails(h as EntityId, e.relation).any(|t| self.member[dst][t as usize]) {
                self.member[src][h] = false;
                changed = true;
            }
        }
        changed
    }
}

/// Connected with exactly `n - 1` edges (parallel edges count as a cycle).
fn is_undirected_tree(dag: &QueryDag) -> bool {
    dag.edges().len() + 1 == dag.len() && dag.is_connected()
}

fn depth_order(dag: &QueryDag) -> Vec<NodeId> {
    let depths = dag.node_depths().unwrap_or_else(|_| vec![0; dag.len()]);
    let mut order: Vec<NodeId> = (0..dag.len() as NodeId).collect();
    order.sort_by_key(|&v| (depths[v as usize], v));
    order
}

fn search(
    dag: &QueryDag,
    kg: &KnowledgeGraph,
    domains: &Domains,
    order: &[NodeId],
    idx: usize,
    assignment: &mut Vec<Option<EntityId>>,
) -> bool {
    let Some(&v) = order.get(idx) else {
        return true;
    };
    if let Some(value) = assignment[v as usize] {
        return consistent(dag, kg, v, value, assignment) && search(dag, kg, domains, order, idx + 1, assignment);
    }
    for c in candidates(dag, kg, domains, v, assignment) {
        if consistent(dag, kg, v, c, assignment) {
            assignment[v as usize] = Some(c);
            if search(dag, kg, domains, order, idx + 1, assignment) {
                return true;
            }
            assignment[v as usize] = None;
        }
    }
    false
}

/// Candidates for `v`, taken from the index of a bound neighbour when one
/// exists, otherwise from its pruned domain.
fn candidates(
    dag: &QueryDag,
    kg: &KnowledgeGraph,
    domains: &Domains,
    v: NodeId,
    assignment: &[Option<EntityId>],
) -> Vec<EntityId> {
    let in_domain = |e: &EntityId| domains.member[v as usize][*e as usize];
    for e in dag.edges() {
        if e.dst == v {
            if let Some(h) = assignment[e.src as usize] {
                return kg.tails(h, e.relation).filter(in_domain).collect();
            }
        }
        if e.src == v {
            if let Some(t) = assignment[e.dst as usize] {
                return kg.heads(e.relation, t).filter(in_domain).collect();
            }
        }
    }
    domains.values(v).collect()
}

fn consistent(dag: &QueryDag, kg: &KnowledgeGraph, v: NodeId, value: EntityId, assignment: &[Option<EntityId>]) -> bool {
    dag.edges().iter().all(|e| {
        let (h, t) = match (e.src == v, e.dst == v) {
            (true, true) => (Some(value), Some(value)),
            (true, false) => (Some(value), assignment[e.dst as usize]),
            (false, true) => (assignment[e.src as usize], Some(value)),
            (false, false) => return true,
        };
        match (h, t) {
            (Some(h), Some(t)) => kg.contains(&crate::kg::Triple::new(h, e.relation, t)),
            _ => true,
        }
    })
}
