//! Bidirectional transformer encoder over query token sequences.
//!
//! Post-LN blocks (self-attention, residual, layer norm, GELU feed-forward,
//! residual, layer norm) on top of summed token and positional embeddings,
//! followed by an untied projection onto the entity tokens only. Forward and
//! reverse passes are written out by hand; `f64` instances are used for
//! gradient checking and `f32` for training.

mod pass;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::encoding::{aggregate_mask_distributions, encode_query, PathOrder, TokenSequence};
use crate::error::{Error, Result};
use crate::kg::{EntityId, Vocabulary};
use crate::query::{QueryDag, VarId};
use crate::real::Real;
use crate::rng::{self, StreamRng};
use crate::tensor::{log_sum_exp, softmax_in_place, ParamSet, Tensor};

pub use pass::AttentionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    #[default]
    Bidirectional,
    /// A token may not attend to tokens further from the path source.
    NoFuture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden: usize,
    pub ff_hidden: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    /// Entity tokens occupy `0..num_entities`; only they are predicted.
    pub num_entities: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Small configuration that trains in minutes on a CPU.
    pub fn desk(vocab: &Vocabulary) -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            hidden: 64,
            ff_hidden: 256,
            max_positions: 16,
            vocab_size: vocab.len(),
            num_entities: vocab.num_entities(),
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.num_layers == 0 || self.num_heads == 0 || self.hidden == 0 || self.ff_hidden == 0 {
            return fail("layers, heads and dimensions must be positive".into());
        }
        if self.hidden % self.num_heads != 0 {
            return fail(format!("hidden dim {} is not divisible by {} heads", self.hidden, self.num_heads));
        }
        if self.max_positions == 0 {
            return fail("max_positions must be positive".into());
        }
        if self.num_entities == 0 || self.num_entities > self.vocab_size {
            return fail("entity range must be a non-empty prefix of the vocabulary".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub query: Tensor<F>,
    pub key: Tensor<F>,
    pub value: Tensor<F>,
    pub output: Tensor<F>,
    pub ln1_gain: Tensor<F>,
    pub ln1_bias: Tensor<F>,
    pub ff_in: Tensor<F>,
    pub ff_in_bias: Tensor<F>,
    pub ff_out: Tensor<F>,
    pub ff_out_bias: Tensor<F>,
    pub ln2_gain: Tensor<F>,
    pub ln2_bias: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams<F> {
    pub token_embedding: Tensor<F>,
    pub position_embedding: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
    /// `hidden × num_entities`
    pub output_weight: Tensor<F>,
    pub output_bias: Tensor<F>,
}

impl<F: Real> ParamSet<F> for TransformerParams<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        out.push((String::from("token_embedding"), &self.token_embedding));
        out.push((String::from("position_embedding"), &self.position_embedding));
        for (l, p) in self.layers.iter().enumerate() {
            for (name, t) in [
                ("query", &p.query),
                ("key", &p.key),
                ("value", &p.value),
                ("output", &p.output),
                ("ln1_gain", &p.ln1_gain),
                ("ln1_bias", &p.ln1_bias),
                ("ff_in", &p.ff_in),
                ("ff_in_bias", &p.ff_in_bias),
                ("ff_out", &p.ff_out),
                ("ff_out_bias", &p.ff_out_bias),
                ("ln2_gain", &p.ln2_gain),
                ("ln2_bias", &p.ln2_bias),
            ] {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push((String::from("output.weight"), &self.output_weight));
        out.push((String::from("output.bias"), &self.output_bias));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        out.push(&mut self.token_embedding);
        out.push(&mut self.position_embedding);
        for p in &mut self.layers {
            out.extend([
                &mut p.query,
                &mut p.key,
                &mut p.value,
                &mut p.output,
                &mut p.ln1_gain,
                &mut p.ln1_bias,
                &mut p.ff_in,
                &mut p.ff_in_bias,
                &mut p.ff_out,
                &mut p.ff_out_bias,
                &mut p.ln2_gain,
                &mut p.ln2_bias,
            ]);
        }
        out.push(&mut self.output_weight);
        out.push(&mut self.output_bias);
        out
    }
}

/// Samples from N(0, std²) truncated to ±2 std.
pub(crate) fn truncated_normal<F: Real>(rng: &mut StreamRng, rows: usize, cols: usize, std: f64) -> Tensor<F> {
    let normal = Normal::new(0.0, std).expect("valid std");
    let data = (0..rows * cols)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break F::from_f64(v);
            }
        })
        .collect();
    Tensor { rows, cols, data }
}

pub const INIT_STD: f64 = 0.02;

pub fn init_params<F: Real>(config: &ModelConfig) -> Result<TransformerParams<F>> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "init", 0);
    let (d, ff) = (config.hidden, config.ff_hidden);
    let mut normal = |r, c| truncated_normal::<F>(&mut rng, r, c, INIT_STD);
    let token_embedding = normal(config.vocab_size, d);
    let position_embedding = normal(config.max_positions, d);
    let layers = (0..config.num_layers)
        .map(|_| LayerParams {
            query: normal(d, d),
            key: normal(d, d),
            value: normal(d, d),
            output: normal(d, d),
            ln1_gain: Tensor::filled(1, d, F::ONE),
            ln1_bias: Tensor::zeros(1, d),
            ff_in: normal(d, ff),
            ff_in_bias: Tensor::zeros(1, ff),
            ff_out: normal(ff, d),
            ff_out_bias: Tensor::zeros(1, d),
            ln2_gain: Tensor::filled(1, d, F::ONE),
            ln2_bias: Tensor::zeros(1, d),
        })
        .collect();
    let output_weight = normal(d, config.num_entities);
    Ok(TransformerParams {
        token_embedding,
        position_embedding,
        layers,
        output_weight,
        output_bias: Tensor::zeros(1, config.num_entities),
    })
}

/// A token sequence with the gold entity of every mask slot, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub sequence: TokenSequence,
    pub labels: Vec<EntityId>,
}

/// Mean over slots of `-log softmax(logits)[gold]`.
pub fn loss_masked_ce<F: Real>(logits: &[Vec<F>], labels: &[EntityId]) -> Result<F> {
    if logits.len() != labels.len() {
        return Err(Error::ShapeMismatch);
    }
    if logits.is_empty() {
        return Err(Error::NothingToPredict);
    }
    let mut total = F::ZERO;
    for (row, &gold) in logits.iter().zip(labels) {
        let g = *row.get(gold as usize).ok_or(Error::LabelOutOfRange(gold))?;
        total += log_sum_exp(row) - g;
    }
    Ok(total / F::from_f64(logits.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarPrediction {
    /// Aggregated distribution over entities.
    pub probabilities: Vec<f64>,
    /// Entities by descending probability, ties by ascending id.
    pub ranking: Vec<EntityId>,
}

#[derive(Debug, Clone)]
pub struct QueryPrediction {
    pub per_var: BTreeMap<VarId, VarPrediction>,
    pub attention: AttentionRecord,
    pub sequence: TokenSequence,
}

pub fn rank_by_score(scores: &[f64]) -> Vec<EntityId> {
    let mut idx: Vec<EntityId> = (0..scores.len() as EntityId).collect();
    idx.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<F> {
    pub config: ModelConfig,
    pub params: TransformerParams<F>,
}

impl<F: Real> Encoder<F> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: TransformerParams<F>) -> Result<Self> {
        config.validate()?;
        let expected = init_params::<F>(&ModelConfig { seed: 0, ..config.clone() })?;
        let shapes = |p: &TransformerParams<F>| -> Vec<(usize, usize)> {
            p.tensors().iter().map(|(_, t)| (t.rows, t.cols)).collect()
        };
        if shapes(&expected) != shapes(&params) {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self { config, params })
    }

    /// Logits over the entity range at every mask slot plus, when asked,
    /// the post-softmax attention of every layer and head.
    pub fn forward(
        &self,
        seq: &TokenSequence,
        mode: AttentionMode,
        record_attention: bool,
    ) -> Result<(Vec<Vec<F>>, Option<AttentionRecord>)> {
        let pass = pass::forward(self, seq, mode, None, false, record_attention)?;
        Ok((pass.logits, pass.attention))
    }

    pub fn forward_batch(
        &self,
        batch: &[TokenSequence],
        mode: AttentionMode,
    ) -> Result<Vec<(Vec<Vec<F>>, Option<AttentionRecord>)>> {
        batch.iter().map(|s| self.forward(s, mode, true)).collect()
    }

    /// Mean masked cross-entropy over the batch and its exact gradient.
    /// With `dropout_rng` set, dropout is active (training).
    pub fn gradients(
        &self,
        batch: &[TrainingExample],
        mode: AttentionMode,
        mut dropout_rng: Option<&mut StreamRng>,
    ) -> Result<(F, TransformerParams<F>)> {
        let total_slots: usize = batch.iter().map(|e| e.sequence.mask_slots.len()).sum();
        if total_slots == 0 {
            return Err(Error::NothingToPredict);
        }
        let scale = F::from_f64(1.0 / total_slots as f64);
        let mut grads = self.params.zeros_like();
        let mut loss = F::ZERO;
        for ex in batch {
            if ex.labels.len() != ex.sequence.mask_slots.len() {
                return Err(Error::ShapeMismatch);
            }
            let rng = dropout_rng.as_deref_mut();
            let pass = pass::forward(self, &ex.sequence, mode, rng, true, false)?;
            let mut dlogits = Vec::with_capacity(pass.logits.len());
            for (row, &gold) in pass.logits.iter().zip(&ex.labels) {
                if gold as usize >= self.config.num_entities {
                    return Err(Error::LabelOutOfRange(gold));
                }
                loss += log_sum_exp(row) - row[gold as usize];
                let mut p = row.clone();
                softmax_in_place(&mut p);
                p[gold as usize] -= F::ONE;
                p.iter_mut().for_each(|v| *v *= scale);
                dlogits.push(p);
            }
            pass::backward(self, &ex.sequence, &pass, &dlogits, &mut grads);
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok((loss, grads))
    }

    /// Mean masked cross-entropy without dropout or gradients.
    pub fn loss(&self, batch: &[TrainingExample], mode: AttentionMode) -> Result<F> {
        let mut logits = Vec::new();
        let mut labels = Vec::new();
        for ex in batch {
            if ex.labels.len() != ex.sequence.mask_slots.len() {
                return Err(Error::ShapeMismatch);
            }
            logits.extend(self.forward(&ex.sequence, mode, false)?.0);
            labels.extend_from_slice(&ex.labels);
        }
        loss_masked_ce(&logits, &labels)
    }

    /// Joint prediction of every target: encode (fixed path order), run the
    /// encoder, softmax each slot and average the slots of each variable.
    pub fn predict_query(
        &self,
        dag: &QueryDag,
        vocab: &Vocabulary,
        max_len: usize,
        mode: AttentionMode,
    ) -> Result<QueryPrediction> {
        self.predict_with_order(dag, vocab, max_len, mode, &PathOrder::Fixed)
    }

    pub fn predict_with_order(
        &self,
        dag: &QueryDag,
        vocab: &Vocabulary,
        max_len: usize,
        mode: AttentionMode,
        order: &PathOrder,
    ) -> Result<QueryPrediction> {
        let seq = encode_query(dag, vocab, max_len, order)?;
        let (logits, attention) = self.forward(&seq, mode, true)?;
        let slot_dists: Vec<(VarId, Vec<f64>)> = seq
            .mask_slots
            .iter()
            .zip(logits)
            .map(|(slot, row)| {
                let mut p: Vec<f64> = row.iter().map(|v| v.to_f64()).collect();
                softmax_in_place(&mut p);
                (slot.var, p)
            })
            .collect();
        let vars: Vec<VarId> = dag.targets().iter().map(|&(v, _)| v).collect();
        let per_var = aggregate_mask_distributions(&slot_dists, &vars)?
            .into_iter()
            .map(|(var, probabilities)| {
                let ranking = rank_by_score(&probabilities);
                (var, VarPrediction { probabilities, ranking })
            })
            .collect();
        Ok(QueryPrediction { per_var, attention: attention.expect("recorded"), sequence: seq })
    }
}

pub(crate) fn dropout_mask<F: Real>(rng: &mut StreamRng, len: usize, p: f64) -> Vec<F> {
    let keep = F::from_f64(1.0 / (1.0 - p));
    (0..len).map(|_| if rng.gen::<f64>() < p { F::ZERO } else { keep }).collect()
}
