//! Knowledge graph storage: dense ids, adjacency indexes and the token
//! vocabulary shared by every model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;
pub type TokenId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self { head, relation, tail }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

/// An immutable, indexed knowledge graph.
///
/// Entity and relation ids are dense (`0..num_entities`, `0..num_relations`).
/// Graphs built for different splits of one dataset share the id space, so
/// an entity that only occurs in the test split still owns an id in the
/// train graph (with no incident edges).
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    triples: Vec<Triple>,
    out_index: Vec<Vec<(RelationId, EntityId)>>,
    in_index: Vec<Vec<(RelationId, EntityId)>>,
}

impl KnowledgeGraph {
    /// Builds a graph over a fixed vocabulary. Triples are kept in the given
    /// order; adjacency lists are sorted by `(relation, entity)`.
    pub fn from_parts(
        entity_names: Vec<String>,
        relation_names: Vec<String>,
        triples: Vec<Triple>,
    ) -> Result<Self> {
        let ne = entity_names.len();
        let nr = relation_names.len();
        let mut out_index = alloc::vec![Vec::new(); ne];
        let mut in_index = alloc::vec![Vec::new(); ne];
        let mut seen = BTreeSet::new();
        for (i, t) in triples.iter().enumerate() {
            if t.head as usize >= ne {
                return Err(Error::UnknownEntity(t.head));
            }
            if t.tail as usize >= ne {
                return Err(Error::UnknownEntity(t.tail));
            }
            if t.relation as usize >= nr {
                return Err(Error::UnknownRelation(t.relation));
            }
            if !seen.insert(*t) {
                return Err(Error::DuplicateTriple {
                    line: i + 1,
                    triple: format!("{} {} {}", t.head, t.relation, t.tail),
                });
            }
            out_index[t.head as usize].push((t.relation, t.tail));
            in_index[t.tail as usize].push((t.relation, t.head));
        }
        for list in out_index.iter_mut().chain(in_index.iter_mut()) {
            list.sort_unstable();
        }
        Ok(Self { entity_names, relation_names, triples, out_index, in_index })
    }

    /// Parses tab-separated `head<TAB>relation<TAB>tail` lines. Ids are
    /// assigned in first-appearance order.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut builder = KgBuilder::default();
        let triples = builder.add_tsv(text)?;
        if triples.is_empty() {
            return Err(Error::EmptyGraph);
        }
        builder.graph(triples)
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn entity_name(&self, e: EntityId) -> Option<&str> {
        self.entity_names.get(e as usize).map(String::as_str)
    }

    pub fn relation_name(&self, r: RelationId) -> Option<&str> {
        self.relation_names.get(r as usize).map(String::as_str)
    }

    /// Edges incident to `e`, sorted by `(relation, entity)`.
    pub fn neighbors(&self, e: EntityId, direction: Direction) -> Result<&[(RelationId, EntityId)]> {
        let index = match direction {
            Direction::Out => &self.out_index,
            Direction::In => &self.in_index,
        };
        index.get(e as usize).map(Vec::as_slice).ok_or(Error::UnknownEntity(e))
    }

    pub(crate) fn out_edges(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_index[e as usize]
    }

    /// Tails `t` with `(head, relation, t)` in the graph, ascending.
    pub fn tails(&self, head: EntityId, relation: RelationId) -> impl Iterator<Item = EntityId> + '_ {
        let edges = &self.out_index[head as usize];
        let start = edges.partition_point(|&(r, _)| r < relation);
        edges[start..].iter().take_while(move |&&(r, _)| r == relation).map(|&(_, t)| t)
    }

    /// Heads `h` with `(h, relation, tail)` in the graph, ascending.
    pub fn heads(&self, relation: RelationId, tail: EntityId) -> impl Iterator<Item = EntityId> + '_ {
        let edges = &self.in_index[tail as usize];
        let start = edges.partition_point(|&(r, _)| r < relation);
        edges[start..].iter().take_while(move |&&(r, _)| r == relation).map(|&(_, h)| h)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.out_index
            .get(t.head as usize)
            .is_some_and(|edges| edges.binary_search(&(t.relation, t.tail)).is_ok())
    }

    /// A graph with the same vocabulary holding the triples of `self` and `other`.
    pub fn union(&self, other: &KnowledgeGraph) -> Result<KnowledgeGraph> {
        if self.entity_names != other.entity_names || self.relation_names != other.relation_names {
            return Err(Error::InvalidQuery("graphs use different vocabularies".to_string()));
        }
        let mut triples = self.triples.clone();
        triples.extend(other.triples.iter().copied().filter(|t| !self.contains(t)));
        KnowledgeGraph::from_parts(self.entity_names.clone(), self.relation_names.clone(), triples)
    }
}

/// Assigns dense ids to entity and relation names across one or more files.
#[derive(Debug, Default, Clone)]
pub struct KgBuilder {
    entities: BTreeMap<String, EntityId>,
    entity_names: Vec<String>,
    relations: BTreeMap<String, RelationId>,
    relation_names: Vec<String>,
    seen: BTreeSet<Triple>,
}

impl KgBuilder {
    fn entity(&mut self, name: &str) -> EntityId {
        if let Some(&id) = self.entities.get(name) {
            return id;
        }
        let id = self.entity_names.len() as EntityId;
        self.entities.insert(name.to_string(), id);
        self.entity_names.push(name.to_string());
        id
    }

    fn relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.relations.get(name) {
            return id;
        }
        let id = self.relation_names.len() as RelationId;
        self.relations.insert(name.to_string(), id);
        self.relation_names.push(name.to_string());
        id
    }

    /// Parses one TSV document and returns its triples in file order.
    /// Duplicates are rejected across everything added to this builder.
    pub fn add_tsv(&mut self, text: &str) -> Result<Vec<Triple>> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::MalformedLine { line: i + 1, reason: "empty field".to_string() });
            }
            let h = self.entity(fields[0]);
            let r = self.relation(fields[1]);
            let t = self.entity(fields[2]);
            let triple = Triple::new(h, r, t);
            if !self.seen.insert(triple) {
                return Err(Error::DuplicateTriple { line: i + 1, triple: line.to_string() });
            }
            out.push(triple);
        }
        Ok(out)
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn graph(&self, triples: Vec<Triple>) -> Result<KnowledgeGraph> {
        KnowledgeGraph::from_parts(self.entity_names.clone(), self.relation_names.clone(), triples)
    }
}

/// Token ids: entities first (`0..|E|`), then relations, then `MASK` and `PAD`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    num_entities: u32,
    num_relations: u32,
}

impl Vocabulary {
    pub fn new(num_entities: usize, num_relations: usize) -> Self {
        Self { num_entities: num_entities as u32, num_relations: num_relations as u32 }
    }

    pub fn build(kg: &KnowledgeGraph) -> Self {
        Self::new(kg.num_entities(), kg.num_relations())
    }

    pub fn len(&self) -> usize {
        (self.num_entities + self.num_relations + 2) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities as usize
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations as usize
    }

    /// Half-open token interval covered by entity tokens.
    pub fn entity_range(&self) -> core::ops::Range<TokenId> {
        0..self.num_entities
    }

    pub fn entity_token(&self, e: EntityId) -> TokenId {
        debug_assert!(e < self.num_entities);
        e
    }

    pub fn relation_token(&self, r: RelationId) -> TokenId {
        debug_assert!(r < self.num_relations);
        self.num_entities + r
    }

    pub fn mask(&self) -> TokenId {
        self.num_entities + self.num_relations
    }

    pub fn pad(&self) -> TokenId {
        self.mask() + 1
    }

    /// `(token name, id)` rows in id order, for the audit dump.
    pub fn entries<'a>(&'a self, kg: &'a KnowledgeGraph) -> impl Iterator<Item = (&'a str, TokenId)> + 'a {
        let ents = kg.entity_names().iter().enumerate().map(|(i, n)| (n.as_str(), i as TokenId));
        let rels = kg
            .relation_names()
            .iter()
            .enumerate()
            .map(move |(i, n)| (n.as_str(), self.num_entities + i as TokenId));
        ents.chain(rels).chain([("[MASK]", self.mask()), ("[PAD]", self.pad())])
    }
}
