//! Filtered ranking metrics and the attention analyses.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::encoder::{AttentionMode, AttentionRecord, Encoder};
use crate::encoding::{encode_query, PathOrder, TokenOrigin, TokenSequence};
use crate::error::{Error, Result};
use crate::gqe::Gqe;
use crate::kg::{EntityId, Vocabulary};
use crate::query::{LabeledQuery, NodeId, PositionClass, QueryDag, VarId};
use crate::real::Real;

/// Positive entities per `(query id, variable)`.
pub type FilterTable = BTreeMap<(String, VarId), BTreeSet<EntityId>>;

/// 1-based rank of `gold` among the entities outside `filter \ {gold}`;
/// entities scoring equal to the gold are ranked ahead of it.
pub fn filtered_rank(scores: &[f64], gold: EntityId, filter: &BTreeSet<EntityId>) -> Result<usize> {
    let g = *scores.get(gold as usize).ok_or(Error::GoldMissing(gold))?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(e, &s)| e != gold as usize && s >= g && !filter.contains(&(e as EntityId)))
        .count();
    Ok(1 + ahead)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    rr: f64,
    h: [usize; 3],
    n: usize,
}

impl Accumulator {
    fn push(&mut self, rank: usize) {
        self.rr += 1.0 / rank as f64;
        for (h, k) in self.h.iter_mut().zip([1, 3, 10]) {
            if rank <= k {
                *h += 1;
            }
        }
        self.n += 1;
    }

    fn finish(&self) -> Metrics {
        if self.n == 0 {
            return Metrics::default();
        }
        let n = self.n as f64;
        Metrics {
            mrr: self.rr / n,
            hits1: self.h[0] as f64 / n,
            hits3: self.h[1] as f64 / n,
            hits10: self.h[2] as f64 / n,
            count: self.n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub overall: Metrics,
    pub positions: BTreeMap<PositionClass, Metrics>,
    pub queries: usize,
    pub masks: usize,
}

/// Anything that can score every entity for every target of a query.
pub trait QueryScorer {
    fn score_query(&self, q: &LabeledQuery) -> Result<BTreeMap<VarId, Vec<f64>>>;

    /// Attention recorded while answering `dag`, for models that have any.
    fn attention(&self, dag: &QueryDag) -> Result<(TokenSequence, AttentionRecord)> {
        let _ = dag;
        Err(Error::NoAttention)
    }
}

pub struct EncoderScorer<'a, F> {
    pub encoder: &'a Encoder<F>,
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
    pub mode: AttentionMode,
}

impl<F: Real> QueryScorer for EncoderScorer<'_, F> {
    fn score_query(&self, q: &LabeledQuery) -> Result<BTreeMap<VarId, Vec<f64>>> {
        let pred = self.encoder.predict_query(&q.dag, self.vocab, self.max_len, self.mode)?;
        Ok(pred.per_var.into_iter().map(|(v, p)| (v, p.probabilities)).collect())
    }

    fn attention(&self, dag: &QueryDag) -> Result<(TokenSequence, AttentionRecord)> {
        let seq = encode_query(dag, self.vocab, self.max_len, &PathOrder::Fixed)?;
        let (_, att) = self.encoder.forward(&seq, self.mode, true)?;
        Ok((seq, att.expect("recorded")))
    }
}

impl<F: Real> QueryScorer for Gqe<F> {
    fn score_query(&self, q: &LabeledQuery) -> Result<BTreeMap<VarId, Vec<f64>>> {
        Ok(self
            .score_targets(&q.dag)?
            .into_iter()
            .map(|(v, s)| (v, s.into_iter().map(|x| x.to_f64()).collect()))
            .collect())
    }
}

/// Scores 1 for every entity in a positive set and 0 elsewhere. With a
/// filter table the positives are the full answer sets, otherwise just the
/// gold entities.
pub struct OracleScorer<'a> {
    pub num_entities: usize,
    pub positives: Option<&'a FilterTable>,
}

impl QueryScorer for OracleScorer<'_> {
    fn score_query(&self, q: &LabeledQuery) -> Result<BTreeMap<VarId, Vec<f64>>> {
        q.answers
            .iter()
            .map(|(&var, &gold)| {
                let mut s = alloc::vec![0.0; self.num_entities];
                match self.positives {
                    Some(table) => {
                        let set = lookup(table, q, var)?;
                        set.iter().for_each(|&e| s[e as usize] = 1.0);
                    }
                    None => s[gold as usize] = 1.0,
                }
                Ok((var, s))
            })
            .collect()
    }
}

fn lookup<'a>(filters: &'a FilterTable, q: &LabeledQuery, var: VarId) -> Result<&'a BTreeSet<EntityId>> {
    filters.get(&(q.id.clone(), var)).ok_or_else(|| Error::MissingFilter { query: q.id.clone(), var })
}

/// Jointly predicts each query and ranks each target against its filter.
pub fn evaluate_split<S: QueryScorer + ?Sized>(
    scorer: &S,
    queries: &[LabeledQuery],
    filters: &FilterTable,
) -> Result<RankingReport> {
    let mut overall = Accumulator::default();
    let mut by_class: BTreeMap<PositionClass, Accumulator> =
        PositionClass::ALL.iter().map(|&c| (c, Accumulator::default())).collect();
    for q in queries {
        let scores = scorer.score_query(q)?;
        for (&var, &gold) in &q.answers {
            let filter = lookup(filters, q, var)?;
            let s = scores.get(&var).ok_or(Error::MissingVariable(var))?;
            let rank = filtered_rank(s, gold, filter)?;
            overall.push(rank);
            let class = q.position_class(var).ok_or(Error::MissingVariable(var))?;
            by_class.get_mut(&class).expect("all classes").push(rank);
        }
    }
    Ok(RankingReport {
        overall: overall.finish(),
        positions: by_class.into_iter().map(|(c, a)| (c, a.finish())).collect(),
        queries: queries.len(),
        masks: overall.n,
    })
}

/// Mean over queries of the mean Hits@K over every (target, answer) pair,
/// each answer ranked with the rest of its answer set filtered.
pub fn avg_hits_per_query<S: QueryScorer + ?Sized>(
    scorer: &S,
    queries: &[LabeledQuery],
    answers: &FilterTable,
    k: usize,
) -> Result<f64> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for q in queries {
        let scores = scorer.score_query(q)?;
        let (mut hits, mut pairs) = (0usize, 0usize);
        for &var in q.answers.keys() {
            let set = lookup(answers, q, var)?;
            let s = scores.get(&var).ok_or(Error::MissingVariable(var))?;
            for &a in set {
                if filtered_rank(s, a, set)? <= k {
                    hits += 1;
                }
                pairs += 1;
            }
        }
        if pairs == 0 {
            return Err(Error::EmptyAnswerSet(q.id.clone()));
        }
        total += hits as f64 / pairs as f64;
    }
    Ok(total / queries.len() as f64)
}

/// Share of attention a mask slot's row places on tokens that are neither
/// ancestors nor descendants of its variable (nor the variable itself).
/// A relation token is a relative when either end of its edge is. Returns
/// the mean over slots of the given layer, heads averaged.
pub fn nonrelative_fraction_of(
    dag: &QueryDag,
    seq: &TokenSequence,
    record: &AttentionRecord,
    layer: usize,
) -> Result<Option<f64>> {
    if seq.mask_slots.is_empty() {
        return Ok(None);
    }
    let att = record.head_mean(layer);
    let n = record.len;
    let mut sum = 0.0;
    for slot in &seq.mask_slots {
        let node = dag.target_node(slot.var).ok_or(Error::MissingVariable(slot.var))?;
        let (anc, desc) = dag.relatives(node)?;
        let rel = |u: NodeId| u == node || anc.contains(&u) || desc.contains(&u);
        let row = &att[slot.index * n..(slot.index + 1) * n];
        for (j, &a) in row.iter().enumerate() {
            let relative = match seq.origins[j] {
                TokenOrigin::Node(u) => rel(u),
                TokenOrigin::Edge { src, dst } => rel(src) || rel(dst),
            };
            if !relative {
                sum += a;
            }
        }
    }
    Ok(Some(sum / seq.mask_slots.len() as f64))
}

/// Final layer, heads averaged, slot means averaged over queries that have
/// mask slots.
pub fn attention_nonrelative_fraction<S: QueryScorer + ?Sized>(scorer: &S, queries: &[LabeledQuery]) -> Result<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for q in queries {
        let (seq, record) = scorer.attention(&q.dag)?;
        let last = record.layers.len().checked_sub(1).ok_or(Error::NoAttention)?;
        if let Some(f) = nonrelative_fraction_of(&q.dag, &seq, &record, last)? {
            total += f;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::NothingToPredict);
    }
    Ok(total / counted as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub full: RankingReport,
    pub no_future: RankingReport,
}

impl AblationReport {
    /// `full - no_future` for MRR.
    pub fn mrr_delta(&self) -> f64 {
        self.full.overall.mrr - self.no_future.overall.mrr
    }
}

/// Evaluates one set of parameters with unrestricted and with no-future
/// attention on the same path queries.
pub fn run_ablation<F: Real>(
    encoder: &Encoder<F>,
    vocab: &Vocabulary,
    max_len: usize,
    queries: &[LabeledQuery],
    filters: &FilterTable,
) -> Result<AblationReport> {
    if let Some(q) = queries.iter().find(|q| !q.is_path()) {
        return Err(Error::NotAPath(format!("query {} is not a path", q.id)));
    }
    let scorer = |mode| EncoderScorer { encoder, vocab, max_len, mode };
    Ok(AblationReport {
        full: evaluate_split(&scorer(AttentionMode::Bidirectional), queries, filters)?,
        no_future: evaluate_split(&scorer(AttentionMode::NoFuture), queries, filters)?,
    })
}
