//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;
use std::time::Instant;

use biqe::dataset::Dataset;
use biqe::RunConfig;
use biqe_core::answers::ground_answers;
use biqe_core::checkpoint::{self, ModelKind};
use biqe_core::datagen::{build_filters, generate, mine_paths, GenerateConfig, MiningConfig, Split};
use biqe_core::encoder::{AttentionMode, Encoder, ModelConfig, TrainingExample};
use biqe_core::encoding::{encode_query, PathOrder};
use biqe_core::eval::{
    attention_nonrelative_fraction, evaluate_split, filtered_rank, run_ablation, EncoderScorer, FilterTable,
    OracleScorer,
};
use biqe_core::gqe::{Gqe, GqeConfig};
use biqe_core::optim::AdamConfig;
use biqe_core::query::{ValidateOptions, DEFAULT_PATH_CAP};
use biqe_core::rng::{stream, StreamRng};
use biqe_core::synthetic::{split_graph, synthetic_kg, SyntheticConfig};
use biqe_core::tensor::ParamSet;
use biqe_core::training::{train, EncoderTask, Schedule};
use biqe_core::{Error, KnowledgeGraph, LabeledQuery, NodeKind, QueryDag, Real, Triple, Vocabulary};
use rand::Rng;

type Verdict = (bool, String);

// ---------------------------------------------------------------- helpers

/// Random connected DAG over `n` nodes. Node 0 and any extra roots are
/// anchors; every other node is a target or, sometimes, existential.
fn random_dag(rng: &mut StreamRng, n: usize, extra_roots: usize, entities: u32, relations: u32) -> QueryDag {
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push((j as u32, rng.gen_range(0..relations), i as u32));
        if i >= 2 && rng.gen_bool(0.25) {
            let k = rng.gen_range(0..i);
            if k != j {
                edges.push((k as u32, rng.gen_range(0..relations), i as u32));
            }
        }
    }
    let total = n + extra_roots;
    for r in n..total {
        let dst = rng.gen_range(1..n.max(2)).min(n - 1);
        edges.push((r as u32, rng.gen_range(0..relations), dst as u32));
    }
    let has_in: BTreeSet<u32> = edges.iter().map(|e| e.2).collect();
    let mut var = 0;
    let kinds = (0..total as u32)
        .map(|v| {
            if !has_in.contains(&v) {
                NodeKind::Anchor(rng.gen_range(0..entities))
            } else if rng.gen_bool(0.2) {
                NodeKind::Existential
            } else {
                var += 1;
                NodeKind::Target(var - 1)
            }
        })
        .collect();
    QueryDag::new(kinds, edges).unwrap()
}

fn valid_query(rng: &mut StreamRng, max_nodes: usize, max_paths: usize, entities: u32, relations: u32) -> QueryDag {
    loop {
        let n = rng.gen_range(2..=max_nodes);
        let extra = rng.gen_range(0..=1);
        let dag = random_dag(rng, n, extra, entities, relations);
        let ok = dag.validate(ValidateOptions::default()).is_empty()
            && !dag.targets().is_empty()
            && dag.decompose(DEFAULT_PATH_CAP).map_or(false, |p| p.len() <= max_paths);
        if ok {
            return dag;
        }
    }
}

/// Every root-to-leaf walk as (nodes, relations), by plain recursion.
fn dfs_paths(dag: &QueryDag) -> BTreeSet<(Vec<u32>, Vec<u32>)> {
    fn walk(dag: &QueryDag, v: u32, nodes: &mut Vec<u32>, rels: &mut Vec<u32>, out: &mut BTreeSet<(Vec<u32>, Vec<u32>)>) {
        nodes.push(v);
        let next: Vec<_> = dag.edges().iter().filter(|e| e.src == v).collect();
        if next.is_empty() {
            out.insert((nodes.clone(), rels.clone()));
        }
        for e in next {
            rels.push(e.relation);
            walk(dag, e.dst, nodes, rels, out);
            rels.pop();
        }
        nodes.pop();
    }
    let mut out = BTreeSet::new();
    let dsts: BTreeSet<u32> = dag.edges().iter().map(|e| e.dst).collect();
    for v in (0..dag.len() as u32).filter(|v| !dsts.contains(v)) {
        walk(dag, v, &mut Vec::new(), &mut Vec::new(), &mut out);
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn roughen<F: Real, P: ParamSet<F>>(params: &mut P, rng: &mut StreamRng, amount: f64) {
    for t in params.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += F::from_f64(rng.gen_range(-amount..amount));
        }
    }
}

struct Held {
    vocab: Vocabulary,
    train: Vec<LabeledQuery>,
    test_paths: Vec<LabeledQuery>,
    test_dags: Vec<LabeledQuery>,
    filters: FilterTable,
}

fn held_out(seed: u64, distinct_positions: bool) -> Held {
    let kg = synthetic_kg(&SyntheticConfig { seed, ..Default::default() }).unwrap();
    let [tr, dv, te] = split_graph(&kg, 0.15, 0.15, seed).unwrap();
    let full = tr.union(&dv).unwrap().union(&te).unwrap();
    let cfg = GenerateConfig { seed, walks_per_node: 10, distinct_positions, ..Default::default() };
    let s = generate([&tr, &dv, &te], &cfg);
    let train = s[0].all_queries();
    let (test_paths, test_dags) = (s[2].path_queries(), s[2].dag_queries());
    let mut all: Vec<_> = train.clone();
    all.extend(test_paths.iter().cloned());
    all.extend(test_dags.iter().cloned());
    let filters = build_filters(&all, &full);
    Held { vocab: Vocabulary::build(&kg), train, test_paths, test_dags, filters }
}

const MAX_LEN: usize = 64;

fn encoder_config(vocab: &Vocabulary, seed: u64, dropout: f64) -> ModelConfig {
    ModelConfig { hidden: 32, ff_hidden: 128, num_heads: 4, dropout, seed, ..ModelConfig::desk(vocab) }
}

fn schedule(epochs: usize, lr: f64, seed: u64) -> Schedule {
    Schedule { epochs, batch_size: 32, adam: AdamConfig { lr, ..Default::default() }, warmup_steps: 0, linear_decay: true, seed }
}

fn majority(v: &[bool]) -> bool {
    v.iter().filter(|&&b| b).count() * 2 > v.len()
}

// ---------------------------------------------------------------- criteria

fn gradient_fidelity() -> Verdict {
    let t0 = Instant::now();
    let vocab = Vocabulary::new(12, 4);
    let cfg = ModelConfig {
        num_layers: 2,
        num_heads: 2,
        hidden: 16,
        ff_hidden: 32,
        max_positions: 16,
        vocab_size: vocab.len(),
        num_entities: 12,
        dropout: 0.0,
        seed: 11,
    };
    let mut enc = Encoder::<f64>::new(cfg).unwrap();
    let mut rng = stream(11, "acceptance-grad", 0);
    roughen(&mut enc.params, &mut rng, 0.4);
    let batch: Vec<TrainingExample> = (0..4)
        .map(|_| {
            let dag = valid_query(&mut rng, 5, 4, 12, 4);
            let sequence = encode_query(&dag, &vocab, 32, &PathOrder::Fixed).unwrap();
            let labels = sequence.mask_slots.iter().map(|_| rng.gen_range(0..12)).collect();
            TrainingExample { sequence, labels }
        })
        .collect();
    let (_, grads) = enc.gradients(&batch, AttentionMode::Bidirectional, None).unwrap();
    let loss = |e: &Encoder<f64>| e.loss(&batch, AttentionMode::Bidirectional).unwrap();
    let h = 1e-3;
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.data.clone())).collect();
    let mut worst = (0.0f64, String::new());
    for (g, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for i in 0..a.len() {
            let orig = enc.params.tensors_mut()[g].data[i];
            enc.params.tensors_mut()[g].data[i] = orig + h;
            let up = loss(&enc);
            enc.params.tensors_mut()[g].data[i] = orig - h;
            let down = loss(&enc);
            enc.params.tensors_mut()[g].data[i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let scale = norm(a).max(norm(&numeric));
        let rel = if scale == 0.0 { 0.0 } else { norm(&diff) / scale };
        if rel >= worst.0 {
            worst = (rel, name.clone());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    (
        worst.0 <= 1e-4 && secs < 60.0,
        format!("max relative error {:.2e} ({}) over {} groups in {secs:.1}s", worst.0, worst.1, analytic.len()),
    )
}

fn permutation_equivariance() -> Verdict {
    let vocab = Vocabulary::new(15, 5);
    let cfg = ModelConfig { hidden: 16, ff_hidden: 32, num_heads: 2, dropout: 0.0, seed: 21, ..ModelConfig::desk(&vocab) };
    let mut enc = Encoder::<f64>::new(cfg).unwrap();
    let mut rng = stream(21, "acceptance-perm", 0);
    roughen(&mut enc.params, &mut rng, 0.3);
    let mut worst = 0.0f64;
    let mut orders = 0;
    for _ in 0..100 {
        let dag = valid_query(&mut rng, 8, 4, 15, 5);
        let n = dag.decompose(DEFAULT_PATH_CAP).unwrap().len();
        let predict = |order| enc.predict_with_order(&dag, &vocab, MAX_LEN, AttentionMode::Bidirectional, &order).unwrap();
        let base = predict(PathOrder::Fixed);
        for p in permutations(n) {
            let other = predict(PathOrder::Permutation(p));
            orders += 1;
            for (var, pred) in &base.per_var {
                for (a, b) in pred.probabilities.iter().zip(&other.per_var[var].probabilities) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    (worst <= 1e-5, format!("max |delta p| {worst:.2e} over 100 queries, {orders} path orders"))
}

fn decomposition_oracle() -> Verdict {
    let mut rng = stream(31, "acceptance-decompose", 0);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=10);
        let extra = rng.gen_range(0..=2);
        let dag = random_dag(&mut rng, n, extra, 10, 3);
        let got: BTreeSet<_> =
            dag.decompose(DEFAULT_PATH_CAP).unwrap().into_iter().map(|p| (p.nodes, p.relations)).collect();
        if got != dfs_paths(&dag) {
            mismatches += 1;
        }
    }
    // m root chains into one node that fans out into n leaf chains
    let mut bad_counts = 0;
    for m in 1..=3 {
        for n in 1..=3 {
            let mut kinds = vec![NodeKind::Target(0)];
            let mut edges = Vec::new();
            for i in 0..m {
                kinds.push(NodeKind::Anchor(i));
                edges.push((kinds.len() as u32 - 1, 0, 0));
            }
            for _ in 0..n {
                kinds.push(NodeKind::Existential);
                let mid = kinds.len() as u32 - 1;
                kinds.push(NodeKind::Existential);
                edges.push((0, 1, mid));
                edges.push((mid, 2, mid + 1));
            }
            let dag = QueryDag::new(kinds, edges).unwrap();
            let paths = dag.decompose(DEFAULT_PATH_CAP).unwrap().len();
            if paths != m as usize * n || paths != dag.roots().len() * dag.leaves().len() {
                bad_counts += 1;
            }
        }
    }
    (mismatches == 0 && bad_counts == 0, format!("{mismatches}/200 mismatches vs DFS, {bad_counts}/9 bow-tie count errors"))
}

fn ranking_oracle() -> Verdict {
    let mut rng = stream(41, "acceptance-rank", 0);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..40);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..6) as f64 / 2.0).collect();
        let gold = rng.gen_range(0..n) as u32;
        let mut filter: BTreeSet<u32> = (0..n as u32).filter(|_| rng.gen_bool(0.3)).collect();
        filter.insert(gold);
        let mut kept: Vec<u32> = (0..n as u32).filter(|e| *e == gold || !filter.contains(e)).collect();
        // descending score, gold after its ties
        kept.sort_by(|&a, &b| scores[b as usize].total_cmp(&scores[a as usize]).then((a == gold).cmp(&(b == gold))));
        let naive = kept.iter().position(|&e| e == gold).unwrap() + 1;
        if filtered_rank(&scores, gold, &filter).unwrap() != naive {
            mismatches += 1;
        }
    }
    let data = held_out(0, false);
    let mut queries = data.test_dags.clone();
    queries.extend(data.test_paths.iter().cloned());
    let oracle = OracleScorer { num_entities: data.vocab.num_entities(), positives: Some(&data.filters) };
    let r = evaluate_split(&oracle, &queries, &data.filters).unwrap();
    let m = r.overall;
    let perfect = [m.mrr, m.hits1, m.hits3, m.hits10].iter().all(|&x| x == 1.0);
    (
        mismatches == 0 && perfect,
        format!("{mismatches}/1000 rank mismatches; oracle MRR {} H@1 {} H@3 {} H@10 {} on {} masks", m.mrr, m.hits1, m.hits3, m.hits10, r.masks),
    )
}

/// Every assignment of entities to the non-anchor nodes, kept when all
/// edges hold.
fn enumerate_answers(dag: &QueryDag, kg: &KnowledgeGraph) -> BTreeMap<u32, BTreeSet<u32>> {
    let free: Vec<u32> = dag.nodes().iter().filter(|n| !matches!(n.kind, NodeKind::Anchor(_))).map(|n| n.id).collect();
    let mut out: BTreeMap<u32, BTreeSet<u32>> = dag.targets().iter().map(|&(v, _)| (v, BTreeSet::new())).collect();
    let ne = kg.num_entities() as u64;
    let mut value = vec![0u32; dag.len()];
    for n in dag.nodes() {
        if let NodeKind::Anchor(e) = n.kind {
            value[n.id as usize] = e;
        }
    }
    for code in 0..ne.pow(free.len() as u32) {
        let mut c = code;
        for &v in &free {
            value[v as usize] = (c % ne) as u32;
            c /= ne;
        }
        let holds = dag.edges().iter().all(|e| {
            kg.contains(&Triple { head: value[e.src as usize], relation: e.relation, tail: value[e.dst as usize] })
        });
        if holds {
            for &(var, node) in &dag.targets() {
                out.get_mut(&var).unwrap().insert(value[node as usize]);
            }
        }
    }
    out
}

fn ground_answer_oracle() -> Verdict {
    let mut rng = stream(51, "acceptance-answers", 0);
    let ne = 25u32;
    let mut triples = BTreeSet::new();
    while triples.len() < 90 {
        triples.insert(Triple { head: rng.gen_range(0..ne), relation: rng.gen_range(0..3), tail: rng.gen_range(0..ne) });
    }
    let names = |p: &str, n: u32| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
    let kg = KnowledgeGraph::from_parts(names("e", ne), names("r", 3), triples.into_iter().collect()).unwrap();
    let mut mismatches = 0;
    let mut non_empty = 0;
    for _ in 0..50 {
        let dag = loop {
            let d = valid_query(&mut rng, 5, 8, ne, 3);
            let free = d.nodes().iter().filter(|n| !matches!(n.kind, NodeKind::Anchor(_))).count();
            if free <= 4 {
                break d;
            }
        };
        let want = enumerate_answers(&dag, &kg);
        non_empty += want.values().any(|s| !s.is_empty()) as usize;
        if ground_answers(&dag, &kg) != want {
            mismatches += 1;
        }
    }
    (mismatches == 0, format!("{mismatches}/50 mismatches vs enumeration on a 25-entity graph ({non_empty} satisfiable)"))
}

fn memorization() -> Verdict {
    let t0 = Instant::now();
    let data = held_out(0, true);
    let gold: FilterTable = data
        .train
        .iter()
        .flat_map(|q| q.answers.keys().map(|&v| ((q.id.clone(), v), data.filters[&(q.id.clone(), v)].clone())))
        .collect();
    let mut task = EncoderTask {
        encoder: Encoder::<f32>::new(encoder_config(&data.vocab, 0, 0.0)).unwrap(),
        vocab: &data.vocab,
        max_len: MAX_LEN,
        mode: AttentionMode::Bidirectional,
    };
    let mut best = (0.0, 0);
    train(&mut task, &data.train, &schedule(200, 3e-3, 0), |st, m| {
        if st.epoch % 5 == 4 && st.epoch >= 24 {
            let scorer = EncoderScorer { encoder: &m.encoder, vocab: &data.vocab, max_len: MAX_LEN, mode: AttentionMode::Bidirectional };
            let h1 = evaluate_split(&scorer, &data.train, &gold).unwrap().overall.hits1;
            best = (h1, st.epoch + 1);
            if h1 >= 0.95 {
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })
    .unwrap();
    let secs = t0.elapsed().as_secs_f64();
    (
        best.0 >= 0.95 && secs < 600.0,
        format!(
            "train Hits@1 {:.4} after {} epochs, {:.0}s, {} train queries (stars limited to distinct mask positions)",
            best.0,
            best.1,
            secs,
            data.train.len()
        ),
    )
}

struct SeedRun {
    enc_dag: f64,
    gqe_dag: f64,
    enc_path: f64,
    full: f64,
    no_future: f64,
    forbidden_nonzero: usize,
    fraction: f64,
    path_fraction: f64,
}

fn seed_run(seed: u64) -> SeedRun {
    let data = held_out(seed, false);
    let mut task = EncoderTask {
        encoder: Encoder::<f32>::new(encoder_config(&data.vocab, seed, 0.1)).unwrap(),
        vocab: &data.vocab,
        max_len: MAX_LEN,
        mode: AttentionMode::Bidirectional,
    };
    train(&mut task, &data.train, &schedule(30, 1e-3, seed), |_, _| ControlFlow::Continue(())).unwrap();
    let enc = &task.encoder;
    let scorer = EncoderScorer { encoder: enc, vocab: &data.vocab, max_len: MAX_LEN, mode: AttentionMode::Bidirectional };
    let enc_dag = evaluate_split(&scorer, &data.test_dags, &data.filters).unwrap().overall.mrr;
    let enc_path = evaluate_split(&scorer, &data.test_paths, &data.filters).unwrap().overall.mrr;
    let ablation = run_ablation(enc, &data.vocab, MAX_LEN, &data.test_paths, &data.filters).unwrap();

    let mut forbidden_nonzero = 0;
    for q in &data.test_paths {
        let seq = encode_query(&q.dag, &data.vocab, MAX_LEN, &PathOrder::Fixed).unwrap();
        let offsets = seq.source_offsets();
        let (_, record) = enc.forward(&seq, AttentionMode::NoFuture, true).unwrap();
        let record = record.unwrap();
        for layer in 0..record.layers.len() {
            for head in 0..record.layers[layer].len() {
                for i in 0..seq.len() {
                    let row = record.row(layer, head, i);
                    forbidden_nonzero += (0..seq.len()).filter(|&j| offsets[j] > offsets[i] && row[j] != 0.0).count();
                }
            }
        }
    }

    let mut gqe = Gqe::<f32>::new(GqeConfig {
        num_entities: data.vocab.num_entities(),
        num_relations: data.vocab.num_relations(),
        dim: 32,
        seed,
    })
    .unwrap();
    train(&mut gqe, &data.train, &schedule(30, 1e-2, seed), |_, _| ControlFlow::Continue(())).unwrap();
    let gqe_dag = evaluate_split(&gqe, &data.test_dags, &data.filters).unwrap().overall.mrr;
    SeedRun {
        enc_dag,
        gqe_dag,
        enc_path,
        full: ablation.full.overall.mrr,
        no_future: ablation.no_future.overall.mrr,
        forbidden_nonzero,
        fraction: attention_nonrelative_fraction(&scorer, &data.test_dags).unwrap(),
        path_fraction: attention_nonrelative_fraction(&scorer, &data.test_paths).unwrap(),
    }
}

fn generator_suite() -> Verdict {
    let mut problems = Vec::new();
    let kg = synthetic_kg(&SyntheticConfig { seed: 7, ..Default::default() }).unwrap();
    let graphs = split_graph(&kg, 0.15, 0.15, 7).unwrap();
    let full = graphs[0].union(&graphs[1]).unwrap().union(&graphs[2]).unwrap();
    let cfg = GenerateConfig { seed: 7, walks_per_node: 10, ..Default::default() };
    let [g0, g1, g2] = &graphs;
    let data = generate([g0, g1, g2], &cfg);
    let mut dags = 0;
    for (s, split) in data.iter().enumerate() {
        let g = &graphs[s];
        for p in &split.paths {
            if !(2..=5).contains(&p.depth()) || !p.triples().all(|t| g.contains(&t)) {
                problems.push(format!("path does not replay on {}", split.split.name()));
            }
        }
        for (d, q) in split.dags.iter().zip(split.dag_queries()) {
            dags += 1;
            let dag = &q.dag;
            let center = q.center.unwrap();
            let star = (1..=3).contains(&d.branches.len())
                && dag.out_degree(center) == 1
                && dag.in_degree(center) == d.branches.len()
                && dag.leaves().len() == 1
                && dag.in_degree(dag.leaves()[0]) == 1;
            if !dag.validate(ValidateOptions::default()).is_empty() || !star {
                problems.push(format!("{} is not a valid star", q.id));
            }
            let from_split = d.branches.iter().all(|b| b.path < split.paths.len())
                && d.branches.iter().all(|b| b.relations.iter().enumerate().all(|(i, &r)| {
                    g.contains(&Triple { head: b.entities[i], relation: r, tail: b.entities[i + 1] })
                }))
                && g.contains(&d.tail);
            if !from_split {
                problems.push(format!("{} uses triples outside its split", q.id));
            }
        }
        if split.split != Split::Train {
            let mut qs = split.path_queries();
            qs.extend(split.dag_queries());
            for q in &qs {
                let answers = ground_answers(&q.dag, &full);
                if q.answers.iter().any(|(v, gold)| !answers[v].contains(gold)) {
                    problems.push(format!("{} gold is not a full-graph answer", q.id));
                }
            }
        }
    }
    let mined = mine_paths(&graphs[0], Split::Train, &MiningConfig { seed: 7, walks_per_node: 10, limit: Some(500), ..Default::default() });
    if mined.len() != 500 {
        problems.push(format!("path limit 500 gave {}", mined.len()));
    }
    let capped = generate([g0, g1, g2], &GenerateConfig { dag_limit: Some(40), eval_path_limit: Some(60), ..cfg.clone() });
    if capped[0].dags.len() != 40 || capped[2].paths.len() != 60 {
        problems.push("dag or eval path limit not exact".into());
    }

    // byte-identical reruns through the dataset writer
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("kg.tsv"), biqe::format::write_triples(kg.triples(), &kg)).unwrap();
    let run_cfg = RunConfig { seed: 7, walks_per_node: 10, ..Default::default() };
    let write = |out: &str| {
        let input = biqe::dataset::load_input(&dir.path().join("kg.tsv"), &run_cfg).unwrap();
        Dataset::build(input, &run_cfg).unwrap().write(&dir.path().join(out)).unwrap();
    };
    write("a");
    write("b");
    let files = ["manifest.json", "filters.jsonl", "vocab.tsv", "train/paths.jsonl", "train/dags.jsonl", "test/dags.jsonl", "dev/triples.tsv"];
    for f in files {
        if std::fs::read(dir.path().join("a").join(f)).unwrap() != std::fs::read(dir.path().join("b").join(f)).unwrap() {
            problems.push(format!("{f} differs between reruns"));
        }
    }
    let detail = problems.first().cloned().unwrap_or_else(|| "no violations".into());
    (
        problems.is_empty(),
        format!("{dags} DAGs checked, path/DAG limits exact, reruns identical over {} files: {detail}", files.len()),
    )
}

fn checkpoint_round_trip() -> Verdict {
    let mut rng = stream(61, "acceptance-ckpt", 0);
    let vocab = Vocabulary::new(20, 4);
    let mut enc = Encoder::<f32>::new(ModelConfig { hidden: 16, ff_hidden: 32, num_heads: 2, ..ModelConfig::desk(&vocab) }).unwrap();
    roughen(&mut enc.params, &mut rng, 1.0);
    let mut gqe = Gqe::<f64>::new(GqeConfig { num_entities: 20, num_relations: 4, dim: 8, seed: 1 }).unwrap();
    roughen(&mut gqe.params, &mut rng, 1.0);
    let dir = tempfile::tempdir().unwrap();
    let enc_path = dir.path().join("enc.ckpt");
    std::fs::write(&enc_path, checkpoint::encode(&enc.to_checkpoint())).unwrap();
    let enc_bytes = std::fs::read(&enc_path).unwrap();
    let back = Encoder::<f32>::from_checkpoint(checkpoint::decode(&enc_bytes).unwrap()).unwrap();
    let gqe_bytes = checkpoint::encode(&gqe.to_checkpoint());
    let gback = Gqe::<f64>::from_checkpoint(checkpoint::decode(&gqe_bytes).unwrap()).unwrap();
    let bits32 = |p: &dyn Fn() -> Vec<Vec<u32>>| p();
    let enc_same = bits32(&|| enc.params.tensors().iter().map(|(_, t)| t.data.iter().map(|v| v.to_bits()).collect()).collect())
        == bits32(&|| back.params.tensors().iter().map(|(_, t)| t.data.iter().map(|v| v.to_bits()).collect()).collect());
    let gqe_same = gqe.params.tensors().iter().zip(gback.params.tensors().iter()).all(|((na, a), (nb, b))| {
        na == nb && (a.rows, a.cols) == (b.rows, b.cols) && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let kind_ok = checkpoint::peek_kind(&gqe_bytes).unwrap() == ModelKind::Gqe && back.config == enc.config;
    let mut caught = 0;
    let mut tried = 0;
    for _ in 0..20 {
        let mut bad = enc_bytes.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= 1 << rng.gen_range(0..8);
        tried += 1;
        caught += (checkpoint::decode::<f32>(&bad).unwrap_err() == Error::ChecksumMismatch) as usize;
    }
    for cut in [0, 10, enc_bytes.len() / 2, enc_bytes.len() - 1] {
        tried += 1;
        caught += (checkpoint::decode::<f32>(&enc_bytes[..cut]).unwrap_err() == Error::ChecksumMismatch) as usize;
    }
    (
        enc_same && gqe_same && kind_ok && caught == tried,
        format!("encoder f32 and GQE f64 arrays bit-exact: {}; {caught}/{tried} corruptions rejected by checksum", enc_same && gqe_same),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut report = |n: usize, name: &'static str, v: Verdict| {
        println!("criterion {n:>2} {} {name}: {}", if v.0 { "PASS" } else { "FAIL" }, v.1);
        verdicts.push((n, name, v));
    };
    report(1, "gradient fidelity", gradient_fidelity());
    report(2, "path-permutation equivariance", permutation_equivariance());
    report(3, "decomposition oracle", decomposition_oracle());
    report(4, "ranking oracle", ranking_oracle());
    report(5, "ground-answer oracle", ground_answer_oracle());
    report(6, "memorization", memorization());

    let runs: Vec<SeedRun> = (0..3).map(seed_run).collect();
    let fmt = |f: &dyn Fn(&SeedRun) -> String| runs.iter().map(f).collect::<Vec<_>>().join(", ");
    let wins: Vec<bool> = runs.iter().map(|r| r.enc_dag >= r.gqe_dag).collect();
    report(
        7,
        "encoder vs GQE-MP on held-out CQ",
        (majority(&wins), format!("MRR encoder/GQE-MP per seed {}", fmt(&|r| format!("{:.4}/{:.4}", r.enc_dag, r.gqe_dag)))),
    );
    let wins: Vec<bool> = runs.iter().map(|r| r.enc_path >= r.enc_dag).collect();
    report(
        8,
        "paths easier than DAGs",
        (majority(&wins), format!("MRR paths/DAGs per seed {}", fmt(&|r| format!("{:.4}/{:.4}", r.enc_path, r.enc_dag)))),
    );
    let wins: Vec<bool> = runs.iter().map(|r| r.no_future <= r.full).collect();
    let zeros = runs.iter().all(|r| r.forbidden_nonzero == 0);
    report(
        9,
        "no-future ablation",
        (
            zeros && majority(&wins),
            format!(
                "forbidden entries nonzero {}; MRR full/no-future per seed {}",
                runs.iter().map(|r| r.forbidden_nonzero).sum::<usize>(),
                fmt(&|r| format!("{:.4}/{:.4}", r.full, r.no_future))
            ),
        ),
    );
    report(10, "generator structure", generator_suite());
    let in_range = runs.iter().all(|r| (0.0..=1.0).contains(&r.fraction));
    let zero_on_paths = runs.iter().all(|r| r.path_fraction == 0.0);
    report(
        11,
        "attention analysis",
        (
            in_range && zero_on_paths,
            format!(
                "non-relative share on held-out DAGs {} (reference 0.304), on path queries {}",
                fmt(&|r| format!("{:.4}", r.fraction)),
                fmt(&|r| format!("{}", r.path_fraction))
            ),
        ),
    );
    report(12, "checkpoint round trip", checkpoint_round_trip());

    let failed: Vec<_> = verdicts.iter().filter(|v| !v.2 .0).map(|v| v.0).collect();
    println!("{} of {} criteria passed", verdicts.len() - failed.len(), verdicts.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
