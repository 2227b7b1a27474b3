//! Small clustered knowledge graphs with learnable regularities, and seeded
//! train/dev/test splitting.
//!
//! Entities are divided into equal clusters. Every relation has a set of
//! domain clusters and maps each of them to one range cluster, so the
//! cluster of a missing entity is predictable from the query structure even
//! when the exact triple was held out.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub relations: usize,
    pub clusters: usize,
    /// Domain clusters per relation.
    pub domain: usize,
    pub triples: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { entities: 100, relations: 8, clusters: 10, domain: 4, triples: 600, seed: 0 }
    }
}

pub fn synthetic_kg(cfg: &SyntheticConfig) -> Result<KnowledgeGraph> {
    if cfg.clusters == 0 || cfg.entities < cfg.clusters || cfg.relations == 0 {
        return Err(Error::InvalidConfig("need at least one entity per cluster and one relation".into()));
    }
    if cfg.domain == 0 || cfg.domain > cfg.clusters {
        return Err(Error::InvalidConfig("domain clusters must lie in 1..=clusters".into()));
    }
    let size = cfg.entities / cfg.clusters;
    let capacity = cfg.relations * cfg.domain * size * size;
    if cfg.triples > capacity {
        return Err(Error::InvalidConfig(format!("at most {capacity} triples fit this layout")));
    }
    let mut rng = rng::stream(cfg.seed, "synthetic", 0);
    let cluster: Vec<usize> = (0..cfg.clusters).collect();
    // (relation, domain cluster, range cluster)
    let mut blocks = Vec::new();
    for r in 0..cfg.relations {
        for &c in cluster.choose_multiple(&mut rng, cfg.domain) {
            blocks.push((r as RelationId, c, rng.gen_range(0..cfg.clusters)));
        }
    }
    let member = |c: usize, rng: &mut rng::StreamRng| (c * size + rng.gen_range(0..size)) as EntityId;
    let mut seen = alloc::collections::BTreeSet::new();
    let mut triples = Vec::with_capacity(cfg.triples);
    while triples.len() < cfg.triples {
        let &(relation, from, to) = blocks.choose(&mut rng).expect("non-empty");
        let t = Triple { head: member(from, &mut rng), relation, tail: member(to, &mut rng) };
        if seen.insert(t) {
            triples.push(t);
        }
    }
    let entities = (0..cfg.entities).map(|e| format!("e{e}")).collect();
    let relations = (0..cfg.relations).map(|r| format!("r{r}")).collect();
    KnowledgeGraph::from_parts(entities, relations, triples)
}

/// Shuffles the triples and cuts them into train/dev/test graphs sharing
/// the vocabulary of `kg`; `dev` and `test` are the held-out shares.
pub fn split_graph(kg: &KnowledgeGraph, dev: f64, test: f64, seed: u64) -> Result<[KnowledgeGraph; 3]> {
    if !(0.0..1.0).contains(&dev) || !(0.0..1.0).contains(&test) || dev + test >= 1.0 {
        return Err(Error::InvalidConfig(format!("split fractions {dev} and {test} leave no training data")));
    }
    let mut triples = kg.triples().to_vec();
    triples.shuffle(&mut rng::stream(seed, "split", 0));
    let n = triples.len();
    let n_dev = (n as f64 * dev).round() as usize;
    let n_test = (n as f64 * test).round() as usize;
    let test_part = triples.split_off(n - n_test);
    let dev_part = triples.split_off(n - n_test - n_dev);
    let graph = |t: Vec<Triple>| {
        KnowledgeGraph::from_parts(kg.entity_names().to_vec(), kg.relation_names().to_vec(), t)
    };
    Ok([graph(triples)?, graph(dev_part)?, graph(test_part)?])
}

/// Cluster index of an entity.
pub fn cluster_of(e: EntityId, cfg: &SyntheticConfig) -> usize {
    e as usize / (cfg.entities / cfg.clusters)
}
