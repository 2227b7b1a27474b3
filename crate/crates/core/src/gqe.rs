//! GQE-MP: DistMult projections composed along query branches, mean pooled
//! where branches meet, scored by dot product against every entity.
//!
//! A node's embedding only depends on its ancestors, so every target
//! (including masked intermediates) is scored from its own ancestor prefix.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kg::RelationId;
use crate::query::{LabeledQuery, NodeId, NodeKind, QueryDag};
use crate::real::Real;
use crate::rng;
use crate::tensor::{axpy, dot, log_sum_exp, softmax_in_place, ParamSet, Tensor};
use crate::training::Trainable;

#[derive(Debug, Clone, PartialEq)]
pub struct GqeConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    pub dim: usize,
    pub seed: u64,
}

impl GqeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_entities == 0 || self.num_relations == 0 || self.dim == 0 {
            return Err(Error::InvalidConfig("gqe tables must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GqeParams<F> {
    /// `|E| × d`
    pub entity: Tensor<F>,
    /// `|R| × d`, one diagonal operator per relation
    pub relation: Tensor<F>,
}

impl<F: Real> ParamSet<F> for GqeParams<F> {
    fn tensors(&self) -> Vec<(String, &Tensor<F>)> {
        vec![(String::from("entity"), &self.entity), (String::from("relation"), &self.relation)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        vec![&mut self.entity, &mut self.relation]
    }
}

impl<F: Real> GqeParams<F> {
    /// Entities ~ N(0, 1/d) truncated; relations start near the identity
    /// operator so early compositions do not vanish.
    pub fn init(config: &GqeConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(config.seed, "gqe-init", 0);
        let std = 1.0 / libm::sqrt(config.dim as f64);
        let entity = crate::encoder::truncated_normal(&mut rng, config.num_entities, config.dim, std);
        let mut relation = crate::encoder::truncated_normal(&mut rng, config.num_relations, config.dim, 0.1);
        relation.data.iter_mut().for_each(|v| *v += F::ONE);
        Ok(Self { entity, relation })
    }

    pub fn dim(&self) -> usize {
        self.entity.cols
    }
}

/// `v ⊙ rel[r]`
pub fn project<F: Real>(v: &[F], r: RelationId, params: &GqeParams<F>) -> Result<Vec<F>> {
    if r as usize >= params.relation.rows {
        return Err(Error::UnknownRelation(r));
    }
    if v.len() != params.dim() {
        return Err(Error::ShapeMismatch);
    }
    Ok(v.iter().zip(params.relation.row(r as usize)).map(|(&a, &b)| a * b).collect())
}

pub fn score_candidates<F: Real>(q: &[F], params: &GqeParams<F>) -> Vec<F> {
    (0..params.entity.rows).map(|e| dot(q, params.entity.row(e))).collect()
}

/// Embeddings of every node reachable from an anchor; `None` elsewhere.
fn embed_all<F: Real>(dag: &QueryDag, params: &GqeParams<F>) -> Result<Vec<Option<Vec<F>>>> {
    let mut emb: Vec<Option<Vec<F>>> = vec![None; dag.len()];
    for v in dag.topological_order()? {
        if let NodeKind::Anchor(e) = dag.kind(v)? {
            if e as usize >= params.entity.rows {
                return Err(Error::UnknownEntity(e));
            }
            emb[v as usize] = Some(params.entity.row(e as usize).to_vec());
            continue;
        }
        let mut sum: Option<Vec<F>> = None;
        let mut count = 0usize;
        for edge in dag.edges().iter().filter(|e| e.dst == v) {
            if let Some(u) = &emb[edge.src as usize] {
                let p = project(u, edge.relation, params)?;
                match &mut sum {
                    Some(s) => axpy(F::ONE, &p, s),
                    None => sum = Some(p),
                }
                count += 1;
            }
        }
        emb[v as usize] = sum.map(|mut s| {
            let inv = F::from_f64(1.0 / count as f64);
            s.iter_mut().for_each(|x| *x *= inv);
            s
        });
    }
    Ok(emb)
}

/// Composes projections from every anchor above `v` and mean pools at each
/// node with several reachable incoming edges.
pub fn embed_position<F: Real>(dag: &QueryDag, v: NodeId, params: &GqeParams<F>) -> Result<Vec<F>> {
    dag.kind(v)?;
    embed_all(dag, params)?.swap_remove(v as usize).ok_or(Error::Unreachable(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gqe<F> {
    pub config: GqeConfig,
    pub params: GqeParams<F>,
}

impl<F: Real> Gqe<F> {
    pub fn new(config: GqeConfig) -> Result<Self> {
        let params = GqeParams::init(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: GqeConfig, params: GqeParams<F>) -> Result<Self> {
        config.validate()?;
        let ok = (params.entity.rows, params.entity.cols) == (config.num_entities, config.dim)
            && (params.relation.rows, params.relation.cols) == (config.num_relations, config.dim);
        if !ok {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self { config, params })
    }

    /// Entity scores for every target of `dag`, in target order.
    pub fn score_targets(&self, dag: &QueryDag) -> Result<Vec<(crate::query::VarId, Vec<F>)>> {
        let emb = embed_all(dag, &self.params)?;
        dag.targets()
            .into_iter()
            .map(|(var, node)| {
                let q = emb[node as usize].as_ref().ok_or(Error::Unreachable(node))?;
                Ok((var, score_candidates(q, &self.params)))
            })
            .collect()
    }

    /// Mean cross-entropy over every target of every query and its gradient.
    pub fn gradients(&self, batch: &[&LabeledQuery]) -> Result<(F, usize, GqeParams<F>)> {
        let total: usize = batch.iter().map(|q| q.dag.targets().len()).sum();
        if total == 0 {
            return Err(Error::NothingToPredict);
        }
        let scale = F::from_f64(1.0 / total as f64);
        let mut grads = self.params.zeros_like();
        let mut loss = F::ZERO;
        for q in batch {
            let emb = embed_all(&q.dag, &self.params)?;
            let order = q.dag.topological_order()?;
            for (var, node) in q.dag.targets() {
                let gold = *q.answers.get(&var).ok_or(Error::MissingVariable(var))?;
                if gold as usize >= self.config.num_entities {
                    return Err(Error::LabelOutOfRange(gold));
                }
                let qv = emb[node as usize].as_ref().ok_or(Error::Unreachable(node))?;
                let mut scores = score_candidates(qv, &self.params);
                loss += log_sum_exp(&scores) - scores[gold as usize];
                softmax_in_place(&mut scores);
                scores[gold as usize] -= F::ONE;
                let mut dq = vec![F::ZERO; qv.len()];
                for (e, &s) in scores.iter().enumerate() {
                    let s = s * scale;
                    axpy(s, self.params.entity.row(e), &mut dq);
                    axpy(s, qv, grads.entity.row_mut(e));
                }
                self.backprop(&q.dag, &order, &emb, node, dq, &mut grads)?;
            }
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok((loss, total, grads))
    }

    fn backprop(
        &self,
        dag: &QueryDag,
        order: &[NodeId],
        emb: &[Option<Vec<F>>],
        from: NodeId,
        dq: Vec<F>,
        grads: &mut GqeParams<F>,
    ) -> Result<()> {
        let mut delta: Vec<Option<Vec<F>>> = vec![None; dag.len()];
        delta[from as usize] = Some(dq);
        for &v in order.iter().rev() {
            let Some(dv) = delta[v as usize].take() else { continue };
            if let NodeKind::Anchor(e) = dag.kind(v)? {
                axpy(F::ONE, &dv, grads.entity.row_mut(e as usize));
                continue;
            }
            let incoming: Vec<_> = dag.edges().iter().filter(|e| e.dst == v && emb[e.src as usize].is_some()).collect();
            let inv = F::from_f64(1.0 / incoming.len() as f64);
            for edge in incoming {
                let u = emb[edge.src as usize].as_ref().expect("filtered");
                let rel = self.params.relation.row(edge.relation as usize);
                let grel = grads.relation.row_mut(edge.relation as usize);
                let du = delta[edge.src as usize].get_or_insert_with(|| vec![F::ZERO; dv.len()]);
                for i in 0..dv.len() {
                    grel[i] += inv * dv[i] * u[i];
                    du[i] += inv * dv[i] * rel[i];
                }
            }
        }
        Ok(())
    }
}

impl<F: Real> Trainable<F> for Gqe<F> {
    type Params = GqeParams<F>;

    fn params_mut(&mut self) -> &mut GqeParams<F> {
        &mut self.params
    }

    fn batch_gradients(
        &self,
        batch: &[(usize, &LabeledQuery)],
        _epoch: usize,
        _step: u64,
        _seed: u64,
    ) -> Result<(f64, usize, GqeParams<F>)> {
        let queries: Vec<&LabeledQuery> = batch.iter().map(|&(_, q)| q).collect();
        let (loss, n, g) = self.gradients(&queries)?;
        Ok((loss.to_f64(), n, g))
    }

    fn eval_loss(&self, data: &[LabeledQuery]) -> Result<f64> {
        let (mut total, mut n) = (0.0, 0usize);
        for q in data {
            for (var, scores) in self.score_targets(&q.dag)? {
                let gold = *q.answers.get(&var).ok_or(Error::MissingVariable(var))?;
                let g = *scores.get(gold as usize).ok_or(Error::LabelOutOfRange(gold))?;
                total += (log_sum_exp(&scores) - g).to_f64();
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::NothingToPredict);
        }
        Ok(total / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::NodeKind::*;
    use alloc::collections::BTreeMap;

    fn params(entity: &[[f64; 2]], relation: &[[f64; 2]]) -> GqeParams<f64> {
        GqeParams {
            entity: Tensor::from_vec(entity.len(), 2, entity.concat()).unwrap(),
            relation: Tensor::from_vec(relation.len(), 2, relation.concat()).unwrap(),
        }
    }

    #[test]
    fn projection_examples() {
        let p = params(&[[0.0, 0.0]], &[[3.0, 0.5], [1.0, 1.0], [2.0, -1.0]]);
        assert_eq!(project(&[1.0, 2.0], 0, &p).unwrap(), [3.0, 1.0]);
        assert_eq!(project(&[1.5, -2.0], 1, &p).unwrap(), [1.5, -2.0]);
        let folded = project(&project(&[1.0, 2.0], 0, &p).unwrap(), 2, &p).unwrap();
        assert_eq!(folded, [6.0, -1.0]);
        assert_eq!(project(&[1.0, 2.0], 9, &p).unwrap_err(), Error::UnknownRelation(9));
    }

    #[test]
    fn branch_pooling() {
        let p = params(&[[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]], &[[2.0, 1.0], [1.0, 3.0], [-1.0, 1.0]]);
        let chain = QueryDag::chain(alloc::vec![Anchor(0), Target(0)], &[0]).unwrap();
        assert_eq!(embed_position(&chain, 1, &p).unwrap(), [2.0, 2.0]);
        // branches [2,2] and [3,-3] meet
        let two =
            QueryDag::new(alloc::vec![Anchor(0), Anchor(1), Target(0)], alloc::vec![(0, 0, 2), (1, 1, 2)]).unwrap();
        assert_eq!(embed_position(&two, 2, &p).unwrap(), [2.5, -0.5]);
        // third branch [-0.5, 0.5]: mean of three
        let three = QueryDag::new(
            alloc::vec![Anchor(0), Anchor(1), Anchor(2), Target(0)],
            alloc::vec![(0, 0, 3), (1, 1, 3), (2, 2, 3)],
        )
        .unwrap();
        let got = embed_position(&three, 3, &p).unwrap();
        assert!((got[0] - 1.5).abs() < 1e-12 && (got[1] + 0.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_node_is_an_error() {
        let p = params(&[[1.0, 2.0]], &[[1.0, 1.0]]);
        let dag = QueryDag::new(alloc::vec![Target(0), Target(1)], alloc::vec![(0, 0, 1)]).unwrap();
        assert_eq!(embed_position(&dag, 1, &p).unwrap_err(), Error::Unreachable(1));
    }

    #[test]
    fn scoring_examples() {
        let p = params(&[[1.0, 0.0], [0.0, 1.0], [2.0, 3.0]], &[[1.0, 1.0]]);
        assert_eq!(score_candidates(&[0.0, 1.0], &p), [0.0, 1.0, 3.0]);
        assert_eq!(score_candidates(&[0.0, 0.0], &p), [0.0, 0.0, 0.0]);
        assert_eq!(score_candidates(&[2.0, -1.0], &p), [2.0, -1.0, 1.0]);
        let ortho = params(&[[1.0, 0.0], [0.0, 1.0]], &[[1.0, 1.0]]);
        let s = score_candidates(&[0.0, 1.0], &ortho);
        assert!(s[1] > s[0]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = GqeConfig { num_entities: 5, num_relations: 3, dim: 4, seed: 3 };
        let mut model = Gqe::<f64>::new(cfg).unwrap();
        let dag = QueryDag::new(
            alloc::vec![Anchor(0), Target(0), Anchor(2), Target(1), Target(2)],
            alloc::vec![(0, 0, 1), (1, 1, 3), (2, 2, 3), (3, 0, 4)],
        )
        .unwrap();
        let q = LabeledQuery {
            id: "q".into(),
            dag,
            answers: BTreeMap::from([(0, 1), (1, 3), (2, 4)]),
            center: Some(3),
        };
        let (loss, _, g) = model.gradients(&[&q]).unwrap();
        let h = 1e-5;
        for t in 0..2 {
            for i in 0..model.params.tensors()[t].1.data.len() {
                let orig = model.params.tensors_mut()[t].data[i];
                model.params.tensors_mut()[t].data[i] = orig + h;
                let up = model.gradients(&[&q]).unwrap().0;
                model.params.tensors_mut()[t].data[i] = orig - h;
                let down = model.gradients(&[&q]).unwrap().0;
                model.params.tensors_mut()[t].data[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = g.tensors()[t].1.data[i];
                assert!((numeric - analytic).abs() < 1e-7, "{t}/{i}: {numeric} vs {analytic}");
            }
        }
        assert!(loss > 0.0);
    }
}
