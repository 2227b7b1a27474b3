//! Query DAG to token sequence.
//!
//! Each root-to-leaf path is written leaf first: targets become `MASK`,
//! anchors become their entity token, existential nodes are dropped and
//! relation tokens are kept. Positional ids count from 0 at the leaf and
//! restart at every path boundary; there is no separator token.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kg::{TokenId, Vocabulary};
use crate::query::{NodeId, NodeKind, QueryDag, QueryPath, VarId, DEFAULT_PATH_CAP};
use crate::rng;

/// The query element a token stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenOrigin {
    Node(NodeId),
    Edge { src: NodeId, dst: NodeId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSlot {
    pub index: usize,
    pub var: VarId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PathTokens {
    pub tokens: Vec<TokenId>,
    pub positions: Vec<u32>,
    pub mask_slots: Vec<MaskSlot>,
    pub origins: Vec<TokenOrigin>,
}

pub fn encode_path(path: &QueryPath, dag: &QueryDag, vocab: &Vocabulary) -> Result<PathTokens> {
    let mut out = PathTokens::default();
    let push_node = |out: &mut PathTokens, v: NodeId| -> Result<()> {
        match dag.kind(v)? {
            NodeKind::Existential => {}
            NodeKind::Anchor(e) => {
                if e as usize >= vocab.num_entities() {
                    return Err(Error::UnknownEntity(e));
                }
                out.tokens.push(vocab.entity_token(e));
                out.origins.push(TokenOrigin::Node(v));
            }
            NodeKind::Target(var) => {
                out.mask_slots.push(MaskSlot { index: out.tokens.len(), var });
                out.tokens.push(vocab.mask());
                out.origins.push(TokenOrigin::Node(v));
            }
        }
        Ok(())
    };
    let last = *path.nodes.last().ok_or_else(|| Error::InvalidQuery("empty path".into()))?;
    push_node(&mut out, last)?;
    for i in (0..path.relations.len()).rev() {
        let r = path.relations[i];
        if r as usize >= vocab.num_relations() {
            return Err(Error::UnknownRelation(r));
        }
        out.tokens.push(vocab.relation_token(r));
        out.origins.push(TokenOrigin::Edge { src: path.nodes[i], dst: path.nodes[i + 1] });
        push_node(&mut out, path.nodes[i])?;
    }
    out.positions = (0..out.tokens.len() as u32).collect();
    Ok(out)
}

/// A flattened query, padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    pub positions: Vec<u32>,
    pub path_boundaries: Vec<usize>,
    pub mask_slots: Vec<MaskSlot>,
    /// `true` for real tokens, `false` for padding.
    pub pad_mask: Vec<bool>,
    /// One entry per real token.
    pub origins: Vec<TokenOrigin>,
}

impl TokenSequence {
    /// Number of real (non-PAD) tokens.
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Offset of each real token counted from the path source: the source is
    /// 0 and the leaf of a path of `n` tokens is `n - 1`.
    pub fn source_offsets(&self) -> Vec<u32> {
        let n = self.len();
        let mut out = alloc::vec![0; n];
        for (k, &start) in self.path_boundaries.iter().enumerate() {
            let end = self.path_boundaries.get(k + 1).copied().unwrap_or(n);
            let len = (end - start) as u32;
            for i in start..end {
                out[i] = len - 1 - self.positions[i];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathOrder {
    /// Lexicographic, as returned by decomposition.
    Fixed,
    /// Shuffled with a seed.
    Seeded(u64),
    /// Explicit permutation of the decomposed paths.
    Permutation(Vec<usize>),
}

pub fn encode_query(dag: &QueryDag, vocab: &Vocabulary, max_len: usize, order: &PathOrder) -> Result<TokenSequence> {
    let paths = dag.decompose(DEFAULT_PATH_CAP)?;
    let mut idx: Vec<usize> = (0..paths.len()).collect();
    match order {
        PathOrder::Fixed => {}
        PathOrder::Seeded(seed) => idx.shuffle(&mut rng::stream(*seed, "path-order", 0)),
        PathOrder::Permutation(p) => {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != idx {
                return Err(Error::InvalidQuery("path permutation does not match path count".into()));
            }
            idx = p.clone();
        }
    }
    let mut seq = TokenSequence {
        tokens: Vec::new(),
        positions: Vec::new(),
        path_boundaries: Vec::with_capacity(paths.len()),
        mask_slots: Vec::new(),
        pad_mask: Vec::new(),
        origins: Vec::new(),
    };
    for i in idx {
        let p = encode_path(&paths[i], dag, vocab)?;
        let offset = seq.tokens.len();
        seq.path_boundaries.push(offset);
        seq.mask_slots.extend(p.mask_slots.iter().map(|s| MaskSlot { index: s.index + offset, var: s.var }));
        seq.tokens.extend(p.tokens);
        seq.positions.extend(p.positions);
        seq.origins.extend(p.origins);
    }
    let len = seq.tokens.len();
    if len > max_len {
        return Err(Error::SequenceTooLong { len, max_len });
    }
    seq.pad_mask = alloc::vec![true; len];
    seq.pad_mask.resize(max_len, false);
    seq.tokens.resize(max_len, vocab.pad());
    seq.positions.resize(max_len, 0);
    Ok(seq)
}

/// Test-time averaging of the distributions of mask slots that share a
/// variable. Every variable in `vars` must own at least one slot.
pub fn aggregate_mask_distributions(
    slot_dists: &[(VarId, Vec<f64>)],
    vars: &[VarId],
) -> Result<BTreeMap<VarId, Vec<f64>>> {
    let width = slot_dists.first().map(|(_, d)| d.len()).unwrap_or(0);
    let mut sums: BTreeMap<VarId, (Vec<f64>, usize)> = BTreeMap::new();
    for (var, dist) in slot_dists {
        if dist.len() != width {
            return Err(Error::LengthMismatch);
        }
        let entry = sums.entry(*var).or_insert_with(|| (alloc::vec![0.0; width], 0));
        for (acc, p) in entry.0.iter_mut().zip(dist) {
            *acc += p;
        }
        entry.1 += 1;
    }
    if let Some(&missing) = vars.iter().find(|v| !sums.contains_key(v)) {
        return Err(Error::MissingVariable(missing));
    }
    Ok(sums
        .into_iter()
        .map(|(var, (mut acc, n))| {
            let inv = 1.0 / n as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
            (var, acc)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::NodeKind::*;

    // entities 0..3 (e=0), relations r1=0, r2=1, r3=2
    fn vocab() -> Vocabulary {
        Vocabulary::new(4, 3)
    }

    #[test]
    fn path_example_from_model_description() {
        // e -r1-> E1 -r2-> E?1 -r3-> E?2
        let v = vocab();
        let dag = QueryDag::chain(alloc::vec![Anchor(0), Existential, Target(0), Target(1)], &[0, 1, 2]).unwrap();
        let path = &dag.decompose(64).unwrap()[0];
        let p = encode_path(path, &dag, &v).unwrap();
        let (m, r1, r2, r3) = (v.mask(), v.relation_token(0), v.relation_token(1), v.relation_token(2));
        assert_eq!(p.tokens, [m, r3, m, r2, r1, v.entity_token(0)]);
        assert_eq!(p.positions, [0, 1, 2, 3, 4, 5]);
        assert_eq!(p.mask_slots, [MaskSlot { index: 0, var: 1 }, MaskSlot { index: 2, var: 0 }]);
    }

    #[test]
    fn triple_query_and_all_anchor_path() {
        let v = vocab();
        let dag = QueryDag::chain(alloc::vec![Anchor(2), Target(0)], &[1]).unwrap();
        let p = encode_path(&dag.decompose(64).unwrap()[0], &dag, &v).unwrap();
        assert_eq!(p.tokens, [v.mask(), v.relation_token(1), 2]);
        assert_eq!(p.positions, [0, 1, 2]);

        let dag = QueryDag::chain(alloc::vec![Anchor(2), Existential, Anchor(1)], &[1, 0]).unwrap();
        let p = encode_path(&dag.decompose(64).unwrap()[0], &dag, &v).unwrap();
        assert!(p.mask_slots.is_empty());
        assert!(!p.tokens.contains(&v.mask()));
    }

    fn star() -> QueryDag {
        QueryDag::new(
            alloc::vec![Anchor(0), Anchor(1), Target(0), Target(1)],
            alloc::vec![(0, 0, 2), (1, 1, 2), (2, 2, 3)],
        )
        .unwrap()
    }

    #[test]
    fn star_query_shares_variables() {
        let v = vocab();
        let seq = encode_query(&star(), &v, 16, &PathOrder::Fixed).unwrap();
        let (m, r0, r1, r2) = (v.mask(), v.relation_token(0), v.relation_token(1), v.relation_token(2));
        assert_eq!(&seq.tokens[..10], &[m, r2, m, r0, 0, m, r2, m, r1, 1]);
        assert!(seq.tokens[10..].iter().all(|&t| t == v.pad()));
        assert_eq!(&seq.positions[..10], &[0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
        assert_eq!(seq.path_boundaries, [0, 5]);
        let tail_slots: Vec<usize> = seq.mask_slots.iter().filter(|s| s.var == 1).map(|s| s.index).collect();
        assert_eq!(tail_slots, [0, 5]);
        assert_eq!(seq.pad_mask.iter().filter(|&&p| p).count(), 10);
        assert_eq!(seq.source_offsets(), [4, 3, 2, 1, 0, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn single_path_is_padded_path() {
        let v = vocab();
        let dag = QueryDag::chain(alloc::vec![Anchor(2), Target(0)], &[1]).unwrap();
        let p = encode_path(&dag.decompose(64).unwrap()[0], &dag, &v).unwrap();
        let seq = encode_query(&dag, &v, 5, &PathOrder::Fixed).unwrap();
        assert_eq!(&seq.tokens[..3], &p.tokens[..]);
        assert_eq!(seq.mask_slots, p.mask_slots);
        assert_eq!(seq.tokens.len(), 5);
        assert_eq!(
            encode_query(&dag, &v, 2, &PathOrder::Fixed).unwrap_err(),
            Error::SequenceTooLong { len: 3, max_len: 2 }
        );
    }

    #[test]
    fn swapping_paths_permutes_blocks() {
        let v = vocab();
        let a = encode_query(&star(), &v, 10, &PathOrder::Fixed).unwrap();
        let b = encode_query(&star(), &v, 10, &PathOrder::Permutation(alloc::vec![1, 0])).unwrap();
        assert_eq!(&a.tokens[..5], &b.tokens[5..]);
        assert_eq!(&a.tokens[5..], &b.tokens[..5]);
        assert_eq!(a.positions, b.positions);
        let vars = |s: &TokenSequence| {
            let mut v: Vec<VarId> = s.mask_slots.iter().map(|m| m.var).collect();
            v.sort();
            v
        };
        assert_eq!(vars(&a), vars(&b));
    }

    #[test]
    fn aggregation_examples() {
        let one = aggregate_mask_distributions(&[(0, alloc::vec![0.3, 0.7])], &[0]).unwrap();
        assert_eq!(one[&0], [0.3, 0.7]);
        let two = aggregate_mask_distributions(&[(0, alloc::vec![0.8, 0.2]), (0, alloc::vec![0.4, 0.6])], &[0]).unwrap();
        assert!((two[&0][0] - 0.6).abs() < 1e-12 && (two[&0][1] - 0.4).abs() < 1e-12);
        let mixed = aggregate_mask_distributions(
            &[
                (0, alloc::vec![1.0, 0.0, 0.0]),
                (1, alloc::vec![0.2, 0.3, 0.5]),
                (0, alloc::vec![0.0, 1.0, 0.0]),
                (0, alloc::vec![0.0, 0.5, 0.5]),
            ],
            &[0, 1],
        )
        .unwrap();
        let x = &mixed[&0];
        assert!((x[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((x[1] - 0.5).abs() < 1e-12);
        assert!((x[2] - 0.5 / 3.0).abs() < 1e-12);
        assert_eq!(mixed[&1], [0.2, 0.3, 0.5]);
        assert_eq!(
            aggregate_mask_distributions(&[(0, alloc::vec![1.0])], &[0, 3]).unwrap_err(),
            Error::MissingVariable(3)
        );
    }

    #[test]
    fn mask_count_matches_paths_through_targets() {
        let dag = star();
        let seq = encode_query(&dag, &vocab(), 16, &PathOrder::Seeded(3)).unwrap();
        let paths = dag.decompose(64).unwrap();
        let expected: usize =
            dag.targets().iter().map(|&(_, node)| paths.iter().filter(|p| p.nodes.contains(&node)).count()).sum();
        assert_eq!(seq.mask_slots.len(), expected);
        for s in &seq.mask_slots {
            assert_eq!(seq.tokens[s.index], vocab().mask());
            assert_eq!(seq.origins[s.index], TokenOrigin::Node(dag.target_node(s.var).unwrap()));
        }
    }
}
