//! Dataset directory: `vocab.tsv`, one directory per split holding
//! `triples.tsv`, `paths.jsonl` and `dags.jsonl`, then `filters.jsonl` and
//! `manifest.json` at the top.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use biqe_core::datagen::{build_filters, generate, triple_query, GenerateConfig, Split, SplitData};
use biqe_core::eval::FilterTable;
use biqe_core::kg::KgBuilder;
use biqe_core::synthetic::split_graph;
use biqe_core::{KnowledgeGraph, LabeledQuery, Vocabulary};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::format;

pub const FORMAT_VERSION: u32 = 1;

fn three<T>(v: Vec<T>) -> [T; 3] {
    v.try_into().unwrap_or_else(|_| unreachable!("one entry per split"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub triples: usize,
    pub paths: usize,
    pub dags: usize,
    /// Mask slots the split's training or evaluation queries carry.
    pub path_masks: usize,
    pub dag_masks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub seed: u64,
    pub input_sha256: String,
    /// `[dev, test]` when one triples file was split; absent for given splits.
    pub split_fractions: Option<[f64; 2]>,
    pub walks_per_node: usize,
    pub train_path_limit: Option<usize>,
    pub eval_path_limit: Option<usize>,
    pub dag_limit: Option<usize>,
    pub max_branches: usize,
    pub distinct_positions: bool,
    pub neighbor_choice: String,
    pub tail_choice: String,
    pub num_entities: usize,
    pub num_relations: usize,
    pub counts: BTreeMap<String, SplitCounts>,
}

/// Train, dev and test graphs over one shared vocabulary.
pub struct SplitGraphs {
    pub graphs: [KnowledgeGraph; 3],
    pub input_sha256: String,
    pub split_fractions: Option<[f64; 2]>,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// A directory with `train.tsv`, `dev.tsv` and `test.tsv` is used as given;
/// a single file is split by the configured fractions.
pub fn load_input(path: &Path, cfg: &RunConfig) -> CliResult<SplitGraphs> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut builder = KgBuilder::default();
        let mut parts = Vec::new();
        for split in Split::ALL {
            let file = path.join(format!("{}.tsv", split.name()));
            let text = read(&file)?;
            hasher.update(text.as_bytes());
            parts.push(builder.add_tsv(&text).map_err(|e| CliError::user(format!("{}: {e}", file.display())))?);
        }
        let mut graphs = parts.into_iter().map(|t| builder.graph(t));
        let mut next = || graphs.next().expect("three splits");
        let graphs = [next()?, next()?, next()?];
        return Ok(SplitGraphs { graphs, input_sha256: hex::encode(hasher.finalize()), split_fractions: None });
    }
    let text = read(path)?;
    hasher.update(text.as_bytes());
    let kg = KnowledgeGraph::from_tsv(&text).map_err(|e| CliError::user(format!("{}: {e}", path.display())))?;
    let graphs = split_graph(&kg, cfg.dev_fraction, cfg.test_fraction, cfg.seed)?;
    Ok(SplitGraphs {
        graphs,
        input_sha256: hex::encode(hasher.finalize()),
        split_fractions: Some([cfg.dev_fraction, cfg.test_fraction]),
    })
}

pub fn generate_config(cfg: &RunConfig) -> GenerateConfig {
    GenerateConfig {
        seed: cfg.seed,
        walks_per_node: cfg.walks_per_node,
        train_path_limit: cfg.train_path_limit,
        eval_path_limit: cfg.eval_path_limit,
        max_branches: cfg.max_branches,
        dag_limit: cfg.dag_limit,
        distinct_positions: cfg.distinct_positions,
    }
}

fn masks(qs: &[LabeledQuery]) -> usize {
    qs.iter().map(|q| q.answers.len()).sum()
}

/// Everything a generated dataset directory holds, in memory.
pub struct Dataset {
    pub graphs: [KnowledgeGraph; 3],
    pub vocab: Vocabulary,
    pub paths: [Vec<LabeledQuery>; 3],
    pub dags: [Vec<LabeledQuery>; 3],
    pub filters: FilterTable,
    pub manifest: Manifest,
    pub manifest_hash: String,
}

impl Dataset {
    pub fn build(input: SplitGraphs, cfg: &RunConfig) -> CliResult<Self> {
        let gcfg = generate_config(cfg);
        let [tr, dv, te] = &input.graphs;
        let data: [SplitData; 3] = generate([tr, dv, te], &gcfg);
        let full = tr.union(dv)?.union(te)?;
        let paths = data.each_ref().map(SplitData::path_queries);
        let dags = data.each_ref().map(SplitData::dag_queries);
        let all: Vec<LabeledQuery> = paths.iter().chain(&dags).flatten().cloned().collect();
        let filters = build_filters(&all, &full);
        let counts = Split::ALL
            .iter()
            .map(|&s| {
                let i = s as usize;
                let c = SplitCounts {
                    triples: data[i].triples.len(),
                    paths: paths[i].len(),
                    dags: dags[i].len(),
                    path_masks: masks(&paths[i]),
                    dag_masks: masks(&dags[i]),
                };
                (s.name().to_string(), c)
            })
            .collect();
        let manifest = Manifest {
            format: FORMAT_VERSION,
            seed: cfg.seed,
            input_sha256: input.input_sha256,
            split_fractions: input.split_fractions,
            walks_per_node: gcfg.walks_per_node,
            train_path_limit: gcfg.train_path_limit,
            eval_path_limit: gcfg.eval_path_limit,
            dag_limit: gcfg.dag_limit,
            max_branches: gcfg.max_branches,
            distinct_positions: gcfg.distinct_positions,
            neighbor_choice: "uniform over outgoing edges, repeated entities allowed".into(),
            tail_choice: "uniform over the center's outgoing edges not in a branch".into(),
            num_entities: full.num_entities(),
            num_relations: full.num_relations(),
            counts,
        };
        let manifest_hash = hash_manifest(&manifest)?;
        let vocab = Vocabulary::build(&full);
        Ok(Self { graphs: input.graphs, vocab, paths, dags, filters, manifest, manifest_hash })
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let names = &self.graphs[0];
        write(&dir.join("vocab.tsv"), &format::write_vocab(&self.vocab, names))?;
        for split in Split::ALL {
            let i = split as usize;
            let sub = dir.join(split.name());
            fs::create_dir_all(&sub).map_err(|e| CliError::io(&sub, e))?;
            write(&sub.join("triples.tsv"), &format::write_triples(self.graphs[i].triples(), names))?;
            write(&sub.join("paths.jsonl"), &format::write_queries(&self.paths[i], &self.vocab)?)?;
            write(&sub.join("dags.jsonl"), &format::write_queries(&self.dags[i], &self.vocab)?)?;
        }
        write(&dir.join("filters.jsonl"), &format::write_filters(&self.filters)?)?;
        write(&dir.join("manifest.json"), &manifest_text(&self.manifest)?)
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        if !dir.is_dir() {
            return Err(CliError::user(format!("{}: not a dataset directory", dir.display())));
        }
        let manifest_raw = read(&dir.join("manifest.json"))?;
        let manifest: Manifest = serde_json::from_str(&manifest_raw)
            .map_err(|e| CliError::user(format!("{}: {e}", dir.join("manifest.json").display())))?;
        if manifest.format != FORMAT_VERSION {
            return Err(CliError::user(format!("dataset format {} is not supported", manifest.format)));
        }
        let tokens = format::read_vocab(&read(&dir.join("vocab.tsv"))?)?;
        let (ne, nr) = (manifest.num_entities, manifest.num_relations);
        if tokens.len() != ne + nr + 2 {
            return Err(CliError::user("vocab.tsv does not match the manifest".to_string()));
        }
        let names = KnowledgeGraph::from_parts(tokens[..ne].to_vec(), tokens[ne..ne + nr].to_vec(), Vec::new())?;
        let vocab = Vocabulary::build(&names);
        let mut graphs = Vec::new();
        let mut paths = Vec::new();
        let mut dags = Vec::new();
        for split in Split::ALL {
            let sub = dir.join(split.name());
            let triples = format::read_triples(&read(&sub.join("triples.tsv"))?, &names)?;
            graphs.push(KnowledgeGraph::from_parts(names.entity_names().to_vec(), names.relation_names().to_vec(), triples)?);
            paths.push(format::read_queries(&read(&sub.join("paths.jsonl"))?, &vocab)?);
            dags.push(format::read_queries(&read(&sub.join("dags.jsonl"))?, &vocab)?);
        }
        let filters = format::read_filters(&read(&dir.join("filters.jsonl"))?)?;
        Ok(Self {
            graphs: three(graphs),
            vocab,
            paths: three(paths),
            dags: three(dags),
            filters,
            manifest_hash: hex::encode(Sha256::digest(manifest_raw.as_bytes())),
            manifest,
        })
    }

    /// Triples, paths and DAGs of the training split.
    pub fn training_queries(&self) -> Vec<LabeledQuery> {
        let train = Split::Train as usize;
        let triples = self.graphs[train].triples().iter().enumerate();
        let mut q: Vec<_> = triples.map(|(i, t)| triple_query(t, format!("train-triple-{i}"))).collect();
        q.extend(self.paths[train].iter().cloned());
        q.extend(self.dags[train].iter().cloned());
        q
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }
}

fn manifest_text(m: &Manifest) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(m)? + "\n")
}

fn hash_manifest(m: &Manifest) -> CliResult<String> {
    Ok(hex::encode(Sha256::digest(manifest_text(m)?.as_bytes())))
}
