//! The subcommands. Each takes a resolved configuration, writes into
//! `cfg.out` and returns a short human-readable summary.

use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use biqe_core::checkpoint::{self, ModelKind};
use biqe_core::datagen::Split;
use biqe_core::encoder::{AttentionMode, Encoder, ModelConfig};
use biqe_core::encoding::{encode_query, PathOrder};
use biqe_core::eval::{
    attention_nonrelative_fraction, avg_hits_per_query, evaluate_split, run_ablation, EncoderScorer, OracleScorer,
    QueryScorer,
};
use biqe_core::gqe::{Gqe, GqeConfig};
use biqe_core::optim::AdamConfig;
use biqe_core::synthetic::{synthetic_kg, SyntheticConfig};
use biqe_core::training::{train as fit, EncoderTask, EpochStats, Schedule, Trainable};
use biqe_core::LabeledQuery;
use sha2::{Digest, Sha256};

use crate::config::{ModelChoice, RunConfig};
use crate::dataset::{load_input, Dataset};
use crate::error::{CliError, CliResult};
use crate::format::{self, EncodedRecord};
use crate::report::{AnalysisJson, AttentionJson, Provenance, ReportJson, REFERENCE_FRACTION};

pub const MODEL_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const ENCODED_FILE: &str = "encoded-batch.jsonl";
const ENCODED_SAMPLE: usize = 16;

fn prepare_out(cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    cfg.echo_into(&cfg.out)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn generate(cfg: &RunConfig) -> CliResult<String> {
    let input = load_input(&cfg.data, cfg)?;
    let data = Dataset::build(input, cfg)?;
    data.write(&cfg.out)?;
    cfg.echo_into(&cfg.out)?;
    let mut out = format!("dataset written to {}\n", cfg.out.display());
    for (split, c) in &data.manifest.counts {
        let _ = writeln!(out, "{split:<6} triples {:>6}  paths {:>6}  dags {:>6}", c.triples, c.paths, c.dags);
    }
    Ok(out)
}

/// Writes a clustered synthetic graph as a triples file.
pub fn synth(cfg: &SyntheticConfig, out: &Path) -> CliResult<String> {
    let kg = synthetic_kg(cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write(out, format::write_triples(kg.triples(), &kg))?;
    Ok(format!("{} triples written to {}\n", kg.triples().len(), out.display()))
}

fn attention_mode(cfg: &RunConfig) -> AttentionMode {
    if cfg.ablation {
        AttentionMode::NoFuture
    } else {
        AttentionMode::Bidirectional
    }
}

pub fn encoder_config(cfg: &RunConfig, data: &Dataset) -> ModelConfig {
    ModelConfig {
        num_layers: cfg.layers,
        num_heads: cfg.heads,
        hidden: cfg.hidden,
        ff_hidden: cfg.ff_hidden,
        max_positions: cfg.max_positions,
        vocab_size: data.vocab.len(),
        num_entities: data.num_entities(),
        dropout: cfg.dropout,
        seed: cfg.seed,
    }
}

fn schedule(cfg: &RunConfig, lr: f64) -> Schedule {
    Schedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        adam: AdamConfig { lr, ..Default::default() },
        warmup_steps: cfg.warmup_steps,
        linear_decay: cfg.linear_decay,
        seed: cfg.seed,
    }
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Runs the training loop, appending to the loss curve and writing a
/// checkpoint after every epoch.
fn run_training<M: Trainable<f32>>(
    model: &mut M,
    train: &[LabeledQuery],
    dev: &[LabeledQuery],
    schedule: &Schedule,
    out: &Path,
    to_bytes: impl Fn(&M) -> Vec<u8>,
) -> CliResult<Vec<EpochStats>> {
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;
    let mut curve = String::from(format::LOSS_HEADER);
    let mut failure = None;
    let stats = fit(model, train, schedule, |st, m| {
        let mut step = || -> CliResult<()> {
            curve.push_str(&format::loss_row(st.epoch, "train", st.mean_loss));
            if !dev.is_empty() {
                curve.push_str(&format::loss_row(st.epoch, "dev", m.eval_loss(dev)?));
            }
            write(&out.join(LOSS_FILE), &curve)?;
            write(&ckpt_dir.join(format!("epoch-{:03}.ckpt", st.epoch)), to_bytes(m))
        };
        match step() {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                failure = Some(e);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    write(&out.join(MODEL_FILE), to_bytes(model))?;
    Ok(stats)
}

pub fn train(cfg: &RunConfig) -> CliResult<String> {
    let data = Dataset::load(&cfg.data)?;
    prepare_out(cfg)?;
    let train = data.training_queries();
    let dev: Vec<LabeledQuery> = data.paths[Split::Dev as usize].iter().chain(&data.dags[Split::Dev as usize]).cloned().collect();
    let mut sample = String::new();
    for q in train.iter().take(ENCODED_SAMPLE) {
        let seq = encode_query(&q.dag, &data.vocab, cfg.max_len, &PathOrder::Fixed)?;
        sample.push_str(&serde_json::to_string(&EncodedRecord::new(&q.id, &seq))?);
        sample.push('\n');
    }
    write(&cfg.out.join(ENCODED_FILE), sample)?;
    let stats = match cfg.model {
        ModelChoice::Biqe => {
            let encoder = Encoder::<f32>::new(encoder_config(cfg, &data))?;
            let mut task = EncoderTask { encoder, vocab: &data.vocab, max_len: cfg.max_len, mode: attention_mode(cfg) };
            run_training(&mut task, &train, &dev, &schedule(cfg, cfg.lr), &cfg.out, |t| {
                checkpoint::encode(&t.encoder.to_checkpoint())
            })?
        }
        ModelChoice::GqeMp => {
            let gcfg = GqeConfig {
                num_entities: data.num_entities(),
                num_relations: data.vocab.num_relations(),
                dim: cfg.gqe_dim,
                seed: cfg.seed,
            };
            let mut gqe = Gqe::<f32>::new(gcfg)?;
            run_training(&mut gqe, &train, &dev, &schedule(cfg, cfg.gqe_lr), &cfg.out, |g| {
                checkpoint::encode(&g.to_checkpoint())
            })?
        }
    };
    let last = stats.last().map_or(f64::NAN, |s| s.mean_loss);
    let model = cfg.out.join(MODEL_FILE);
    Ok(format!(
        "{} trained {} epochs on {} queries, final train loss {last:.4}\ncheckpoint {} sha256 {}\n",
        cfg.model,
        stats.len(),
        train.len(),
        model.display(),
        sha256_file(&model)?
    ))
}

pub enum LoadedModel {
    Encoder(Encoder<f32>),
    Gqe(Gqe<f32>),
}

pub fn load_model(path: &Path) -> CliResult<LoadedModel> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let wrap = |e: biqe_core::Error| CliError::user(format!("{}: {e}", path.display()));
    let ckpt = checkpoint::decode::<f32>(&bytes).map_err(wrap)?;
    Ok(match ckpt.kind {
        ModelKind::Encoder => LoadedModel::Encoder(Encoder::from_checkpoint(ckpt).map_err(wrap)?),
        ModelKind::Gqe => LoadedModel::Gqe(Gqe::from_checkpoint(ckpt).map_err(wrap)?),
    })
}

fn checkpoint_path(cfg: &RunConfig) -> CliResult<&PathBuf> {
    cfg.checkpoint.as_ref().ok_or_else(|| CliError::user("a checkpoint is required (--checkpoint PATH)"))
}

fn check_vocab(model: &LoadedModel, data: &Dataset) -> CliResult<()> {
    let ok = match model {
        LoadedModel::Encoder(e) => e.config.vocab_size == data.vocab.len() && e.config.num_entities == data.num_entities(),
        LoadedModel::Gqe(g) => {
            g.config.num_entities == data.num_entities() && g.config.num_relations == data.vocab.num_relations()
        }
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::user("checkpoint vocabulary does not match the dataset"))
    }
}

fn provenance(cfg: &RunConfig, data: &Dataset, model: &str, dataset: &str) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        manifest_hash: data.manifest_hash.clone(),
        seed: cfg.seed,
        model: model.into(),
        dataset: dataset.into(),
        split: cfg.split.name().into(),
        attention: if cfg.ablation { "no-future" } else { "bidirectional" }.into(),
    }
}

fn report_sets(data: &Dataset, split: Split) -> [(&'static str, &[LabeledQuery]); 2] {
    [("cq", &data.dags[split as usize]), ("paths", &data.paths[split as usize])]
}

/// Evaluates the split's CQ (DAG) and Paths queries into two reports.
pub fn eval(cfg: &RunConfig) -> CliResult<String> {
    let data = Dataset::load(&cfg.data)?;
    let (loaded, oracle, encoder_scorer);
    let (scorer, name): (&dyn QueryScorer, &str) = if cfg.oracle {
        oracle = OracleScorer { num_entities: data.num_entities(), positives: Some(&data.filters) };
        (&oracle, "oracle")
    } else {
        loaded = load_model(checkpoint_path(cfg)?)?;
        check_vocab(&loaded, &data)?;
        match &loaded {
            LoadedModel::Encoder(encoder) => {
                let mode = attention_mode(cfg);
                encoder_scorer = EncoderScorer { encoder, vocab: &data.vocab, max_len: cfg.max_len, mode };
                (&encoder_scorer, ModelChoice::Biqe.name())
            }
            LoadedModel::Gqe(g) => (g, ModelChoice::GqeMp.name()),
        }
    };
    prepare_out(cfg)?;
    let mut out = String::new();
    for (set, queries) in report_sets(&data, cfg.split) {
        if queries.is_empty() {
            let _ = writeln!(out, "{set}: no {} queries, skipped", cfg.split.name());
            continue;
        }
        let r = evaluate_split(scorer, queries, &data.filters)?;
        let avg = avg_hits_per_query(scorer, queries, &data.filters, 3)?;
        let json = ReportJson::new(&r, avg, provenance(cfg, &data, name, set));
        write(&cfg.out.join(format!("report-{set}.json")), serde_json::to_string_pretty(&json)? + "\n")?;
        out.push_str(&json.table());
    }
    Ok(out)
}

/// Attention statistics on the split's DAGs (paths when there are none)
/// and the paired no-future ablation on its paths.
pub fn analyze(cfg: &RunConfig) -> CliResult<String> {
    let data = Dataset::load(&cfg.data)?;
    let model = load_model(checkpoint_path(cfg)?)?;
    check_vocab(&model, &data)?;
    let encoder = match model {
        LoadedModel::Encoder(e) => e,
        LoadedModel::Gqe(_) => return Err(biqe_core::Error::NoAttention.into()),
    };
    let split = cfg.split as usize;
    let paths = &data.paths[split];
    let dags = &data.dags[split];
    if paths.is_empty() {
        return Err(CliError::user(format!("split {} has no path queries to analyze", cfg.split.name())));
    }
    prepare_out(cfg)?;
    let scorer = EncoderScorer { encoder: &encoder, vocab: &data.vocab, max_len: cfg.max_len, mode: AttentionMode::Bidirectional };
    let probe = if dags.is_empty() { paths } else { dags };
    let attention = AttentionJson {
        nonrelative_fraction: attention_nonrelative_fraction(&scorer, probe)?,
        layer: encoder.config.num_layers - 1,
        heads: "mean".into(),
        queries: probe.len(),
        reference_fraction: REFERENCE_FRACTION,
    };
    let ablation = run_ablation(&encoder, &data.vocab, cfg.max_len, paths, &data.filters)?;
    let json = AnalysisJson::new(attention, &ablation, provenance(cfg, &data, ModelChoice::Biqe.name(), "paths"));
    write(&cfg.out.join("analysis.json"), serde_json::to_string_pretty(&json)? + "\n")?;
    Ok(json.table())
}
