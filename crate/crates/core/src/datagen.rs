//! Query datasets mined from a split knowledge graph: random-walk paths,
//! star-shaped DAGs built by intersecting those paths, and the filters of
//! all known answers used at evaluation time.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::answers::ground_answers;
use crate::eval::FilterTable;
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::query::{LabeledQuery, NodeId, NodeKind, QueryDag, VarId};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

/// A walk `entities[0] -relations[0]-> entities[1] -> ...`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MinedPath {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    pub split: Split,
}

impl MinedPath {
    pub fn source(&self) -> EntityId {
        self.entities[0]
    }

    pub fn depth(&self) -> usize {
        self.relations.len()
    }

    pub fn triples(&self) -> impl Iterator<Item = Triple> + '_ {
        self.relations.iter().enumerate().map(|(i, &relation)| Triple {
            head: self.entities[i],
            relation,
            tail: self.entities[i + 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    pub seed: u64,
    pub limit: Option<usize>,
    /// Walks started from every entity; one reproduces the plain procedure.
    pub walks_per_node: usize,
    pub min_depth: usize,
    pub max_depth: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self { seed: 0, limit: None, walks_per_node: 1, min_depth: 2, max_depth: 5 }
    }
}

/// Random walks over forward edges. Start nodes are visited in a seeded
/// shuffled order; each walk draws its depth uniformly and follows uniformly
/// chosen outgoing edges, and is dropped if it reaches a node without any.
pub fn mine_paths(kg: &KnowledgeGraph, split: Split, cfg: &MiningConfig) -> Vec<MinedPath> {
    let n = kg.num_entities();
    let mut starts: Vec<(usize, EntityId)> =
        (0..cfg.walks_per_node).flat_map(|round| (0..n as EntityId).map(move |e| (round, e))).collect();
    starts.shuffle(&mut rng::stream(cfg.seed, "mine-order", split.index()));
    let limit = cfg.limit.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    for (round, start) in starts {
        if out.len() >= limit {
            break;
        }
        let index = (split.index() << 56) | ((round as u64) << 32) | start as u64;
        let mut rng = rng::stream(cfg.seed, "mine", index);
        let depth = rng.gen_range(cfg.min_depth..=cfg.max_depth);
        let mut entities = alloc::vec![start];
        let mut relations = Vec::with_capacity(depth);
        for _ in 0..depth {
            let edges = kg.out_edges(*entities.last().expect("non-empty"));
            let Some(&(r, t)) = edges.choose(&mut rng) else { break };
            relations.push(r);
            entities.push(t);
        }
        if relations.len() == depth {
            out.push(MinedPath { entities, relations, split });
        }
    }
    out
}

/// One branch of a star: a mined path cut at the shared entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Branch {
    /// Index of the contributing path.
    pub path: usize,
    /// Source first, center last.
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
}

/// Branches converging on `center` plus one edge from the center to a tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedDag {
    pub branches: Vec<Branch>,
    pub center: EntityId,
    pub tail: Triple,
}

impl GeneratedDag {
    /// Branch sources become anchors; every other entity is a target.
    /// Nodes are laid out branch by branch, then the center, then the tail.
    pub fn to_query(&self, id: String) -> LabeledQuery {
        let mut kinds = Vec::new();
        let mut gold = Vec::new();
        let mut edges = Vec::new();
        let mut ends = Vec::new();
        let mut var: VarId = 0;
        let mut target = |kinds: &mut Vec<NodeKind>, gold: &mut Vec<(VarId, EntityId)>, e: EntityId| {
            kinds.push(NodeKind::Target(var));
            gold.push((var, e));
            var += 1;
        };
        for b in &self.branches {
            kinds.push(NodeKind::Anchor(b.entities[0]));
            for i in 1..b.entities.len() - 1 {
                target(&mut kinds, &mut gold, b.entities[i]);
                let dst = (kinds.len() - 1) as NodeId;
                edges.push((dst - 1, b.relations[i - 1], dst));
            }
            ends.push(((kinds.len() - 1) as NodeId, *b.relations.last().expect("branch has an edge")));
        }
        target(&mut kinds, &mut gold, self.center);
        let center = (kinds.len() - 1) as NodeId;
        for (src, r) in ends {
            edges.push((src, r, center));
        }
        target(&mut kinds, &mut gold, self.tail.tail);
        edges.push((center, self.tail.relation, center + 1));
        let dag = QueryDag::new(kinds, edges).expect("generated nodes are dense");
        LabeledQuery { id, dag, answers: gold.into_iter().collect(), center: Some(center) }
    }

    fn canonical(&self) -> (Vec<(Vec<EntityId>, Vec<RelationId>)>, Triple) {
        let mut b: Vec<_> = self.branches.iter().map(|b| (b.entities.clone(), b.relations.clone())).collect();
        b.sort();
        (b, self.tail)
    }
}

fn branch_triples(branches: &[Branch]) -> impl Iterator<Item = Triple> + '_ {
    branches.iter().flat_map(|b| {
        b.relations.iter().enumerate().map(|(i, &relation)| Triple { head: b.entities[i], relation, tail: b.entities[i + 1] })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    pub seed: u64,
    pub max_branches: usize,
    pub limit: Option<usize>,
    /// Only admit stars in which no two target variables share a position
    /// in the tail-first encoding, i.e. at most one branch with more than
    /// one edge. Such variables would otherwise be indistinguishable to the
    /// encoder.
    pub distinct_positions: bool,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { seed: 0, max_branches: 3, limit: None, distinct_positions: false }
    }
}

/// Intersects paths at intermediate entities. Every path in turn picks one
/// of its intermediate positions; the other paths holding the same entity
/// at an intermediate position join it, capped to `max_branches` branches
/// by a seeded subset. All are cut at the shared entity, and a tail edge is
/// drawn uniformly from the center's outgoing edges in `kg` that the
/// branches do not already use. Stars with fewer than two distinct branches
/// or without a free tail edge are skipped, as are repeats.
pub fn synthesize_dags(paths: &[MinedPath], kg: &KnowledgeGraph, cfg: &SynthesisConfig) -> Vec<GeneratedDag> {
    let mut through: BTreeMap<EntityId, Vec<(usize, usize)>> = BTreeMap::new();
    for (p, path) in paths.iter().enumerate() {
        for i in 1..path.depth() {
            let holders = through.entry(path.entities[i]).or_default();
            // the first occurrence stands for a path that revisits an entity
            if holders.last().is_none_or(|&(q, _)| q != p) {
                holders.push((p, i));
            }
        }
    }
    let cut = |p: usize, i: usize| Branch {
        path: p,
        entities: paths[p].entities[..=i].to_vec(),
        relations: paths[p].relations[..i].to_vec(),
    };
    let limit = cfg.limit.unwrap_or(usize::MAX);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (p, path) in paths.iter().enumerate() {
        if out.len() >= limit {
            break;
        }
        if path.depth() < 2 || cfg.max_branches < 2 {
            continue;
        }
        let mut rng = rng::stream(cfg.seed, "synthesize", p as u64);
        let i = rng.gen_range(1..path.depth());
        let center = path.entities[i];
        let mut partners: Vec<(usize, usize)> =
            through[&center].iter().copied().filter(|&(q, _)| q != p).collect();
        if partners.is_empty() {
            continue;
        }
        partners.shuffle(&mut rng::stream(cfg.seed, "branch-cap", p as u64));
        let mut branches = alloc::vec![cut(p, i)];
        for (q, j) in partners {
            if branches.len() == cfg.max_branches {
                break;
            }
            let b = cut(q, j);
            if cfg.distinct_positions && b.relations.len() > 1 && branches.iter().any(|x| x.relations.len() > 1) {
                continue;
            }
            if !branches.iter().any(|x| x.entities == b.entities && x.relations == b.relations) {
                branches.push(b);
            }
        }
        if branches.len() < 2 {
            continue;
        }
        let used: BTreeSet<Triple> = branch_triples(&branches).collect();
        let free: Vec<Triple> = kg
            .out_edges(center)
            .iter()
            .map(|&(relation, tail)| Triple { head: center, relation, tail })
            .filter(|t| !used.contains(t))
            .collect();
        let Some(&tail) = free.choose(&mut rng::stream(cfg.seed, "tail", p as u64)) else { continue };
        let dag = GeneratedDag { branches, center, tail };
        if seen.insert(dag.canonical()) {
            out.push(dag);
        }
    }
    out
}

/// `head -relation-> ?` with the tail as gold.
pub fn triple_query(t: &Triple, id: String) -> LabeledQuery {
    let dag = QueryDag::chain(alloc::vec![NodeKind::Anchor(t.head), NodeKind::Target(0)], &[t.relation])
        .expect("two nodes");
    LabeledQuery { id, dag, answers: BTreeMap::from([(0, t.tail)]), center: None }
}

/// Every entity after the source becomes a target.
pub fn path_query(p: &MinedPath, id: String) -> LabeledQuery {
    let mut kinds = alloc::vec![NodeKind::Anchor(p.source())];
    kinds.extend((0..p.depth() as VarId).map(NodeKind::Target));
    let dag = QueryDag::chain(kinds, &p.relations).expect("chain");
    let answers = p.entities[1..].iter().enumerate().map(|(v, &e)| (v as VarId, e)).collect();
    LabeledQuery { id, dag, answers, center: None }
}

/// Positive answers of every target of every query over the complete graph.
pub fn build_filters(queries: &[LabeledQuery], full: &KnowledgeGraph) -> FilterTable {
    let mut table = FilterTable::new();
    for q in queries {
        for (var, set) in ground_answers(&q.dag, full) {
            table.insert((q.id.clone(), var), set);
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub seed: u64,
    pub walks_per_node: usize,
    pub train_path_limit: Option<usize>,
    pub eval_path_limit: Option<usize>,
    pub max_branches: usize,
    pub dag_limit: Option<usize>,
    pub distinct_positions: bool,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            walks_per_node: 1,
            train_path_limit: None,
            eval_path_limit: None,
            max_branches: 3,
            dag_limit: None,
            distinct_positions: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub split: Split,
    pub triples: Vec<Triple>,
    pub paths: Vec<MinedPath>,
    pub dags: Vec<GeneratedDag>,
}

impl SplitData {
    fn id(&self, kind: &str, i: usize) -> String {
        format!("{}-{kind}-{i}", self.split.name())
    }

    pub fn triple_queries(&self) -> Vec<LabeledQuery> {
        self.triples.iter().enumerate().map(|(i, t)| triple_query(t, self.id("triple", i))).collect()
    }

    pub fn path_queries(&self) -> Vec<LabeledQuery> {
        self.paths.iter().enumerate().map(|(i, p)| path_query(p, self.id("path", i))).collect()
    }

    pub fn dag_queries(&self) -> Vec<LabeledQuery> {
        self.dags.iter().enumerate().map(|(i, d)| d.to_query(self.id("dag", i))).collect()
    }

    /// Triples, paths and DAGs together: the training mixture.
    pub fn all_queries(&self) -> Vec<LabeledQuery> {
        let mut q = self.triple_queries();
        q.extend(self.path_queries());
        q.extend(self.dag_queries());
        q
    }
}

/// Mines and synthesizes every split from its own graph.
pub fn generate(graphs: [&KnowledgeGraph; 3], cfg: &GenerateConfig) -> [SplitData; 3] {
    Split::ALL.map(|split| {
        let kg = graphs[split as usize];
        let limit = if split == Split::Train { cfg.train_path_limit } else { cfg.eval_path_limit };
        let mining = MiningConfig { seed: cfg.seed, limit, walks_per_node: cfg.walks_per_node, ..Default::default() };
        let paths = mine_paths(kg, split, &mining);
        let synthesis = SynthesisConfig {
            seed: rng::derive_seed(cfg.seed, "synthesis-split", split.index()),
            max_branches: cfg.max_branches,
            limit: cfg.dag_limit,
            distinct_positions: cfg.distinct_positions,
        };
        let dags = synthesize_dags(&paths, kg, &synthesis);
        SplitData { split, triples: kg.triples().to_vec(), paths, dags }
    })
}
