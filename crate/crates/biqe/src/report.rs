//! Machine-readable JSON and plain-text tables for ranking and attention
//! reports.

use std::fmt::Write as _;

use biqe_core::eval::{AblationReport, Metrics, RankingReport};
use biqe_core::query::PositionClass;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub mrr: f64,
    pub h1: f64,
    pub h3: f64,
    pub h10: f64,
}

impl From<&Metrics> for MetricsJson {
    fn from(m: &Metrics) -> Self {
        Self { mrr: m.mrr, h1: m.hits1, h3: m.hits3, h10: m.hits10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Positions {
    pub tail: MetricsJson,
    pub intersection: MetricsJson,
    pub branch: MetricsJson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub queries: usize,
    pub masks: usize,
    pub tail: usize,
    pub intersection: usize,
    pub branch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub manifest_hash: String,
    pub seed: u64,
    pub model: String,
    pub dataset: String,
    pub split: String,
    pub attention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub metrics: MetricsJson,
    pub positions: Positions,
    pub counts: Counts,
    /// Hits@3 over every correct answer, averaged per query and then over queries.
    pub avg_h3_per_query: f64,
    pub provenance: Provenance,
}

impl ReportJson {
    pub fn new(r: &RankingReport, avg_h3: f64, provenance: Provenance) -> Self {
        let at = |c: PositionClass| r.positions.get(&c).cloned().unwrap_or_default();
        let (tail, inter, branch) = (at(PositionClass::Tail), at(PositionClass::Intersection), at(PositionClass::Branch));
        Self {
            metrics: (&r.overall).into(),
            positions: Positions { tail: (&tail).into(), intersection: (&inter).into(), branch: (&branch).into() },
            counts: Counts {
                queries: r.queries,
                masks: r.masks,
                tail: tail.count,
                intersection: inter.count,
                branch: branch.count,
            },
            avg_h3_per_query: avg_h3,
            provenance,
        }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        let _ = writeln!(out, "{} on {} {} ({} queries, {} masks)", p.model, p.dataset, p.split, self.counts.queries, self.counts.masks);
        let _ = writeln!(out, "{:<14}{:>8}{:>8}{:>8}{:>8}{:>8}", "position", "count", "mrr", "h@1", "h@3", "h@10");
        let c = &self.counts;
        let rows = [
            ("all", c.masks, &self.metrics),
            ("tail", c.tail, &self.positions.tail),
            ("intersection", c.intersection, &self.positions.intersection),
            ("branch", c.branch, &self.positions.branch),
        ];
        for (name, n, m) in rows {
            let _ = writeln!(out, "{name:<14}{n:>8}{:>8.4}{:>8.4}{:>8.4}{:>8.4}", m.mrr, m.h1, m.h3, m.h10);
        }
        let _ = writeln!(out, "avg h@3 per query {:.4}", self.avg_h3_per_query);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: String,
    pub metrics: MetricsJson,
    pub masks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionJson {
    pub nonrelative_fraction: f64,
    pub layer: usize,
    pub heads: String,
    pub queries: usize,
    /// Published full-scale figure, for comparison only.
    pub reference_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisJson {
    pub attention: AttentionJson,
    pub ablation: Vec<AblationRow>,
    pub mrr_delta: f64,
    pub provenance: Provenance,
}

pub const REFERENCE_FRACTION: f64 = 0.304;

impl AnalysisJson {
    pub fn new(attention: AttentionJson, ablation: &AblationReport, provenance: Provenance) -> Self {
        let row = |mode: &str, r: &RankingReport| AblationRow { mode: mode.into(), metrics: (&r.overall).into(), masks: r.masks };
        Self {
            attention,
            ablation: vec![row("full", &ablation.full), row("no-future", &ablation.no_future)],
            mrr_delta: ablation.mrr_delta(),
            provenance,
        }
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let a = &self.attention;
        let _ = writeln!(
            out,
            "non-relative attention {:.4} (layer {}, head mean, {} queries; reference {:.3})",
            a.nonrelative_fraction, a.layer, a.queries, a.reference_fraction
        );
        let _ = writeln!(out, "{:<12}{:>8}{:>8}{:>8}{:>8}", "mode", "mrr", "h@1", "h@3", "h@10");
        for r in &self.ablation {
            let m = &r.metrics;
            let _ = writeln!(out, "{:<12}{:>8.4}{:>8.4}{:>8.4}{:>8.4}", r.mode, m.mrr, m.h1, m.h3, m.h10);
        }
        out
    }
}
