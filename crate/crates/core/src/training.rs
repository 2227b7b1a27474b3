//! Mini-batch training shared by the encoder and the GQE-MP baseline.

use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::seq::SliceRandom;

use crate::encoder::{AttentionMode, Encoder, TrainingExample};
use crate::encoding::{encode_query, PathOrder};
use crate::error::{Error, Result};
use crate::kg::{EntityId, Vocabulary};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::query::LabeledQuery;
use crate::real::Real;
use crate::rng;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Linear learning-rate warmup over this many steps.
    pub warmup_steps: u64,
    /// Decay the learning rate linearly to zero over the planned epochs.
    pub linear_decay: bool,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 128, adam: AdamConfig::default(), warmup_steps: 0, linear_decay: false, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: u64,
}

/// Something whose parameters can be fitted to labelled queries.
pub trait Trainable<F: Real> {
    type Params: ParamSet<F>;

    fn params_mut(&mut self) -> &mut Self::Params;

    /// Mean loss over the batch's mask slots, the slot count, and the
    /// gradient. `(index, query)` pairs carry each example's dataset index so
    /// per-example randomness is reproducible.
    fn batch_gradients(
        &self,
        batch: &[(usize, &LabeledQuery)],
        epoch: usize,
        step: u64,
        seed: u64,
    ) -> Result<(f64, usize, Self::Params)>;

    /// Mean slot loss with dropout off and a fixed path order.
    fn eval_loss(&self, data: &[LabeledQuery]) -> Result<f64>;
}

/// Runs `schedule.epochs` epochs of shuffled mini-batches with Adam.
/// `on_epoch` sees every epoch's statistics and may stop training early.
pub fn train<F: Real, M: Trainable<F>>(
    model: &mut M,
    data: &[LabeledQuery],
    schedule: &Schedule,
    mut on_epoch: impl FnMut(&EpochStats, &M) -> ControlFlow<()>,
) -> Result<Vec<EpochStats>> {
    if data.is_empty() || schedule.batch_size == 0 {
        return Err(Error::NothingToPredict);
    }
    let mut state = AdamState::new(model.params_mut());
    let mut curve = Vec::with_capacity(schedule.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let total_steps = (schedule.epochs * data.len().div_ceil(schedule.batch_size)) as f64;
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng::stream(schedule.seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut slot_sum = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<(usize, &LabeledQuery)> = chunk.iter().map(|&i| (i, &data[i])).collect();
            let (loss, slots, grads) = model.batch_gradients(&batch, epoch, state.step, schedule.seed)?;
            let mut hp = schedule.adam;
            if schedule.warmup_steps > 0 {
                hp.lr *= ((state.step + 1) as f64 / schedule.warmup_steps as f64).min(1.0);
            }
            if schedule.linear_decay {
                hp.lr *= 1.0 - state.step as f64 / total_steps;
            }
            adam_step(model.params_mut(), &grads, &mut state, &hp)?;
            loss_sum += loss * slots as f64;
            slot_sum += slots;
        }
        if !model.params_mut().all_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        let stats = EpochStats { epoch, mean_loss: loss_sum / slot_sum.max(1) as f64, steps: state.step };
        curve.push(stats);
        if on_epoch(&stats, model).is_break() {
            break;
        }
    }
    Ok(curve)
}

/// Gold labels for the mask slots of an encoded query, in slot order.
pub(crate) fn slot_labels(q: &LabeledQuery, slots: &[crate::encoding::MaskSlot]) -> Result<Vec<EntityId>> {
    slots
        .iter()
        .map(|s| q.answers.get(&s.var).copied().ok_or(Error::MissingVariable(s.var)))
        .collect()
}

/// Training adapter for the encoder: every example is encoded with a path
/// order shuffled per example and epoch; dropout follows the model config.
pub struct EncoderTask<'a, F> {
    pub encoder: Encoder<F>,
    pub vocab: &'a Vocabulary,
    pub max_len: usize,
    pub mode: AttentionMode,
}

impl<F: Real> EncoderTask<'_, F> {
    pub fn example(&self, q: &LabeledQuery, order: &PathOrder) -> Result<TrainingExample> {
        let sequence = encode_query(&q.dag, self.vocab, self.max_len, order)?;
        let labels = slot_labels(q, &sequence.mask_slots)?;
        Ok(TrainingExample { sequence, labels })
    }
}

impl<F: Real> Trainable<F> for EncoderTask<'_, F> {
    type Params = crate::encoder::TransformerParams<F>;

    fn params_mut(&mut self) -> &mut Self::Params {
        &mut self.encoder.params
    }

    fn batch_gradients(
        &self,
        batch: &[(usize, &LabeledQuery)],
        epoch: usize,
        step: u64,
        seed: u64,
    ) -> Result<(f64, usize, Self::Params)> {
        let examples = batch
            .iter()
            .map(|&(i, q)| {
                let s = rng::derive_seed(seed, "path-order", ((epoch as u64) << 32) | i as u64);
                self.example(q, &PathOrder::Seeded(s))
            })
            .collect::<Result<Vec<_>>>()?;
        let slots = examples.iter().map(|e| e.labels.len()).sum();
        let mut drop_rng = rng::stream(seed, "dropout", step);
        let rng = (self.encoder.config.dropout > 0.0).then_some(&mut drop_rng);
        let (loss, grads) = self.encoder.gradients(&examples, self.mode, rng)?;
        Ok((loss.to_f64(), slots, grads))
    }

    fn eval_loss(&self, data: &[LabeledQuery]) -> Result<f64> {
        let examples = data.iter().map(|q| self.example(q, &PathOrder::Fixed)).collect::<Result<Vec<_>>>()?;
        Ok(self.encoder.loss(&examples, self.mode)?.to_f64())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::triple_query;
    use crate::encoder::ModelConfig;
    use crate::eval::{evaluate_split, EncoderScorer, FilterTable};
    use crate::gqe::{Gqe, GqeConfig};
    use crate::kg::{KnowledgeGraph, Triple};
    use alloc::collections::BTreeSet;

    fn toy() -> (KnowledgeGraph, Vec<LabeledQuery>) {
        let mut text = String::new();
        for h in 0..10 {
            for (r, step) in [(0, 1), (1, 3), (2, 7)] {
                text.push_str(&alloc::format!("e{h}\tr{r}\te{}\n", (h + step) % 10));
            }
        }
        let kg = KnowledgeGraph::from_tsv(&text).unwrap();
        let q = kg.triples().iter().enumerate().map(|(i, t)| triple_query(t, alloc::format!("t{i}"))).collect();
        (kg, q)
    }

    fn small(vocab: &Vocabulary, seed: u64) -> ModelConfig {
        ModelConfig { hidden: 32, ff_hidden: 64, num_heads: 2, dropout: 0.0, seed, ..ModelConfig::desk(vocab) }
    }

    fn schedule(epochs: usize, batch_size: usize) -> Schedule {
        Schedule { epochs, batch_size, adam: AdamConfig { lr: 5e-3, ..Default::default() }, warmup_steps: 0, linear_decay: false, seed: 1 }
    }

    fn gold_filters(qs: &[LabeledQuery]) -> FilterTable {
        qs.iter()
            .flat_map(|q| q.answers.iter().map(|(&v, &g)| ((q.id.clone(), v), BTreeSet::from([g]))))
            .collect()
    }

    #[test]
    fn encoder_loss_falls_and_repeats() {
        let (kg, data) = toy();
        let vocab = Vocabulary::build(&kg);
        let run = || {
            let encoder = Encoder::<f32>::new(small(&vocab, 3)).unwrap();
            let mut task = EncoderTask { encoder, vocab: &vocab, max_len: 8, mode: AttentionMode::Bidirectional };
            train(&mut task, &data, &schedule(5, 8), |_, _| ControlFlow::Continue(())).unwrap()
        };
        let curve = run();
        assert_eq!(curve.len(), 5);
        assert!(curve.windows(2).all(|w| w[1].mean_loss < w[0].mean_loss), "{curve:?}");
        assert_eq!(curve, run());
    }

    #[test]
    fn eval_loss_agrees_with_batch_loss() {
        let (kg, data) = toy();
        let vocab = Vocabulary::build(&kg);
        let batch: Vec<_> = data.iter().enumerate().collect();
        let task = EncoderTask {
            encoder: Encoder::<f64>::new(small(&vocab, 5)).unwrap(),
            vocab: &vocab,
            max_len: 8,
            mode: AttentionMode::Bidirectional,
        };
        let (loss, _, _) = task.batch_gradients(&batch, 0, 0, 0).unwrap();
        assert!((task.eval_loss(&data).unwrap() - loss).abs() < 1e-12);
        // near ln 10 at initialization
        assert!((loss - 10f64.ln()).abs() < 0.1);

        let gqe = Gqe::<f64>::new(GqeConfig { num_entities: 10, num_relations: 3, dim: 8, seed: 5 }).unwrap();
        let (loss, _, _) = gqe.batch_gradients(&batch, 0, 0, 0).unwrap();
        assert!((gqe.eval_loss(&data).unwrap() - loss).abs() < 1e-12);
        assert!(gqe.eval_loss(&[]).is_err());
    }

    #[test]
    fn single_triple_is_memorized() {
        let (kg, _) = toy();
        let vocab = Vocabulary::build(&kg);
        let data = [triple_query(&Triple { head: 2, relation: 1, tail: 7 }, "only".into())];
        let encoder = Encoder::<f32>::new(small(&vocab, 4)).unwrap();
        let mut task = EncoderTask { encoder, vocab: &vocab, max_len: 8, mode: AttentionMode::Bidirectional };
        train(&mut task, &data, &schedule(60, 1), |_, _| ControlFlow::Continue(())).unwrap();
        let scorer = EncoderScorer { encoder: &task.encoder, vocab: &vocab, max_len: 8, mode: AttentionMode::Bidirectional };
        assert_eq!(evaluate_split(&scorer, &data, &gold_filters(&data)).unwrap().overall.hits1, 1.0);

        let mut gqe = Gqe::<f32>::new(GqeConfig { num_entities: 10, num_relations: 3, dim: 16, seed: 4 }).unwrap();
        train(&mut gqe, &data, &schedule(60, 1), |_, _| ControlFlow::Continue(())).unwrap();
        assert_eq!(evaluate_split(&gqe, &data, &gold_filters(&data)).unwrap().overall.hits1, 1.0);
    }

    #[test]
    fn gqe_loss_falls_and_repeats() {
        let (_, data) = toy();
        let run = || {
            let mut g = Gqe::<f32>::new(GqeConfig { num_entities: 10, num_relations: 3, dim: 16, seed: 5 }).unwrap();
            train(&mut g, &data, &schedule(5, 8), |_, _| ControlFlow::Continue(())).unwrap()
        };
        let curve = run();
        assert!(curve.windows(2).all(|w| w[1].mean_loss < w[0].mean_loss), "{curve:?}");
        assert_eq!(curve, run());
    }

    #[test]
    fn callback_can_stop_early() {
        let (_, data) = toy();
        let mut g = Gqe::<f32>::new(GqeConfig { num_entities: 10, num_relations: 3, dim: 8, seed: 5 }).unwrap();
        let curve = train(&mut g, &data, &schedule(50, 8), |s, _| {
            if s.epoch == 2 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }
        })
        .unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!(train(&mut g, &[], &schedule(1, 8), |_, _| ControlFlow::Continue(())).unwrap_err(), Error::NothingToPredict);
    }
}
