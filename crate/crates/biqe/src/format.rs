//! Line-oriented file formats: query JSONL, filters JSONL, the vocabulary
//! dump, triple TSV, encoded-batch debug lines and the loss curve.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use biqe_core::encoding::TokenSequence;
use biqe_core::eval::FilterTable;
use biqe_core::query::ValidateOptions;
use biqe_core::{KnowledgeGraph, LabeledQuery, NodeKind, QueryDag, Triple, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Anchor,
    Existential,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u32,
    pub kind: KindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity: Option<u32>,
}

/// One query per line. Entity and relation ids are vocabulary token ids.
/// The variable id of a target is its index in `targets`; `answers`, when
/// present, holds the gold entity of each target in the same order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(default)]
    pub id: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<[u32; 3]>,
    pub targets: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub answers: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<u32>,
}

impl QueryRecord {
    pub fn from_query(q: &LabeledQuery, vocab: &Vocabulary) -> CliResult<Self> {
        let nodes = q
            .dag
            .nodes()
            .iter()
            .map(|n| match n.kind {
                NodeKind::Anchor(e) => NodeRecord { id: n.id, kind: KindName::Anchor, entity: Some(vocab.entity_token(e)) },
                NodeKind::Existential => NodeRecord { id: n.id, kind: KindName::Existential, entity: None },
                NodeKind::Target(_) => NodeRecord { id: n.id, kind: KindName::Target, entity: None },
            })
            .collect();
        let edges = q.dag.edges().iter().map(|e| [e.src, vocab.relation_token(e.relation), e.dst]).collect();
        let mut targets = Vec::new();
        let mut answers = Vec::new();
        for (i, (var, node)) in q.dag.targets().into_iter().enumerate() {
            if var as usize != i {
                return Err(CliError::Internal(format!("query {}: variable ids are not dense", q.id)));
            }
            targets.push(node);
            if let Some(&gold) = q.answers.get(&var) {
                answers.push(gold);
            }
        }
        if !answers.is_empty() && answers.len() != targets.len() {
            return Err(CliError::Internal(format!("query {}: some targets have no answer", q.id)));
        }
        Ok(Self { id: q.id.clone(), nodes, edges, targets, answers, center: q.center })
    }

    pub fn to_query(&self, vocab: &Vocabulary) -> CliResult<LabeledQuery> {
        let bad = |m: String| CliError::user(format!("query {}: {m}", self.id));
        let mut nodes = self.nodes.clone();
        nodes.sort_by_key(|n| n.id);
        if nodes.iter().enumerate().any(|(i, n)| n.id as usize != i) {
            return Err(bad("node ids must be 0..n without gaps".into()));
        }
        let mut kinds = Vec::with_capacity(nodes.len());
        for n in &nodes {
            let kind = match (n.kind, n.entity) {
                (KindName::Anchor, Some(e)) if (e as usize) < vocab.num_entities() => NodeKind::Anchor(e),
                (KindName::Anchor, Some(e)) => return Err(bad(format!("token {e} is not an entity"))),
                (KindName::Anchor, None) => return Err(bad(format!("anchor {} has no entity", n.id))),
                (_, Some(_)) => return Err(bad(format!("only anchors carry an entity (node {})", n.id))),
                (KindName::Existential, None) => NodeKind::Existential,
                (KindName::Target, None) => {
                    let var = self.targets.iter().position(|&t| t == n.id);
                    let var = var.ok_or_else(|| bad(format!("target node {} missing from targets", n.id)))?;
                    NodeKind::Target(var as u32)
                }
            };
            kinds.push(kind);
        }
        if self.targets.iter().any(|&t| !matches!(kinds.get(t as usize), Some(NodeKind::Target(_)))) {
            return Err(bad("targets must list target nodes".into()));
        }
        let rel_range = vocab.num_entities() as u32..(vocab.num_entities() + vocab.num_relations()) as u32;
        let mut edges = Vec::with_capacity(self.edges.len());
        for &[src, r, dst] in &self.edges {
            if !rel_range.contains(&r) {
                return Err(bad(format!("token {r} is not a relation")));
            }
            edges.push((src, r - rel_range.start, dst));
        }
        let dag = QueryDag::new(kinds, edges)?;
        if let Some(v) = dag.validate(ValidateOptions::default()).first() {
            return Err(bad(format!("{v:?}")));
        }
        if !self.answers.is_empty() && self.answers.len() != self.targets.len() {
            return Err(bad("answers and targets differ in length".into()));
        }
        if let Some(&e) = self.answers.iter().find(|&&e| e as usize >= vocab.num_entities()) {
            return Err(bad(format!("answer {e} is not an entity")));
        }
        let answers: BTreeMap<u32, u32> = self.answers.iter().enumerate().map(|(v, &e)| (v as u32, e)).collect();
        Ok(LabeledQuery { id: self.id.clone(), dag, answers, center: self.center })
    }
}

pub fn write_queries(queries: &[LabeledQuery], vocab: &Vocabulary) -> CliResult<String> {
    let mut out = String::new();
    for q in queries {
        out.push_str(&serde_json::to_string(&QueryRecord::from_query(q, vocab)?)?);
        out.push('\n');
    }
    Ok(out)
}

/// Queries without an id are named after their line.
pub fn read_queries(text: &str, vocab: &Vocabulary) -> CliResult<Vec<LabeledQuery>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let mut rec: QueryRecord =
            serde_json::from_str(line).map_err(|e| CliError::user(format!("line {}: {e}", i + 1)))?;
        if rec.id.is_empty() {
            rec.id = format!("line-{}", i + 1);
        }
        out.push(rec.to_query(vocab)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub query: String,
    pub var: u32,
    pub positives: Vec<u32>,
}

pub fn write_filters(table: &FilterTable) -> CliResult<String> {
    let mut out = String::new();
    for ((query, var), set) in table {
        let rec = FilterRecord { query: query.clone(), var: *var, positives: set.iter().copied().collect() };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_filters(text: &str) -> CliResult<FilterTable> {
    let mut table = FilterTable::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: FilterRecord =
            serde_json::from_str(line).map_err(|e| CliError::user(format!("filters line {}: {e}", i + 1)))?;
        table.insert((rec.query, rec.var), rec.positives.into_iter().collect());
    }
    Ok(table)
}

/// `token<TAB>id`, one row per token in id order.
pub fn write_vocab(vocab: &Vocabulary, kg: &KnowledgeGraph) -> String {
    vocab.entries(kg).map(|(name, id)| format!("{name}\t{id}\n")).collect()
}

pub fn read_vocab(text: &str) -> CliResult<Vec<String>> {
    let mut names = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let (name, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| CliError::user(format!("vocab line {}: expected token<TAB>id", i + 1)))?;
        if id.parse::<usize>().ok() != Some(names.len()) {
            return Err(CliError::user(format!("vocab line {}: ids must count up from 0", i + 1)));
        }
        names.push(name.to_string());
    }
    Ok(names)
}

pub fn write_triples(triples: &[Triple], kg: &KnowledgeGraph) -> String {
    let mut out = String::new();
    for t in triples {
        let name = |e| kg.entity_name(e).unwrap_or("?");
        let rel = kg.relation_name(t.relation).unwrap_or("?");
        let _ = writeln!(out, "{}\t{rel}\t{}", name(t.head), name(t.tail));
    }
    out
}

/// Resolves named triples against an existing vocabulary.
pub fn read_triples(text: &str, kg_names: &KnowledgeGraph) -> CliResult<Vec<Triple>> {
    let ents: BTreeMap<&str, u32> = kg_names.entity_names().iter().enumerate().map(|(i, n)| (n.as_str(), i as u32)).collect();
    let rels: BTreeMap<&str, u32> =
        kg_names.relation_names().iter().enumerate().map(|(i, n)| (n.as_str(), i as u32)).collect();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let unknown = |what: &str, n: &str| CliError::user(format!("triples line {}: unknown {what} `{n}`", i + 1));
        if f.len() != 3 {
            return Err(CliError::user(format!("triples line {}: expected 3 fields", i + 1)));
        }
        let head = *ents.get(f[0]).ok_or_else(|| unknown("entity", f[0]))?;
        let relation = *rels.get(f[1]).ok_or_else(|| unknown("relation", f[1]))?;
        let tail = *ents.get(f[2]).ok_or_else(|| unknown("entity", f[2]))?;
        out.push(Triple { head, relation, tail });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedRecord {
    pub id: String,
    pub tokens: Vec<u32>,
    pub positions: Vec<u32>,
    pub path_boundaries: Vec<usize>,
    /// `[sequence index, variable id]`
    pub mask_slots: Vec<[u32; 2]>,
}

impl EncodedRecord {
    pub fn new(id: &str, seq: &TokenSequence) -> Self {
        Self {
            id: id.to_string(),
            tokens: seq.tokens.clone(),
            positions: seq.positions.clone(),
            path_boundaries: seq.path_boundaries.clone(),
            mask_slots: seq.mask_slots.iter().map(|s| [s.index as u32, s.var]).collect(),
        }
    }
}

pub const LOSS_HEADER: &str = "epoch,split,loss\n";

pub fn loss_row(epoch: usize, split: &str, loss: f64) -> String {
    format!("{epoch},{split},{loss:.6}\n")
}
