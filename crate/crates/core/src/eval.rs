//! End-to-end evaluation, parameter sweeps, and their JSON/CSV/SVG reports.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, normalize_weights, WeightEntry};
use crate::config::{EvidenceMode, RunConfig};
use crate::data::Dataset;
use crate::decoder::decode_greedy;
use crate::encoder::encode;
use crate::error::{Error, Result};
use crate::index::{alignment_score, rank_scores, EvidenceIndex};
use crate::metrics::{score_corpus, score_sample, MetricReport, SampleScores};
use crate::model::Model;
use crate::tensor::l2_norm;
use crate::train::{train, Checkpoint};
use crate::vocab::Vocabulary;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// The knobs that shape an evaluation, plus the checkpoint they ran on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub beta: f64,
    pub top_k: usize,
    pub tau: f64,
    pub lambda: f64,
    pub seed: u64,
    pub max_len: usize,
    pub evidence: EvidenceMode,
    pub checkpoint_fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    /// Nothing survived top-k and the score threshold.
    RetrievalFailure,
    /// Some pipeline stage failed on this sample.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub status: SampleStatus,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    /// Exactly the evidence that formed the aggregate.
    pub evidence: Vec<WeightEntry>,
    pub generated: String,
    pub gold: String,
    pub scores: SampleScores,
    /// `‖h_gen − e‖₂`; absent when nothing was generated.
    pub consistency: Option<f64>,
    pub content_tokens: usize,
    pub supported_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub metrics: MetricReport,
    pub snapshot: ConfigSnapshot,
    pub config: RunConfig,
    pub n_failed: usize,
    pub mean_consistency: f64,
    /// Fraction of generated content tokens found in the retained evidence.
    pub evidence_support_rate: f64,
    pub samples: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Per-chunk encodings shared across samples and sweep points.
struct Encoded {
    index: EvidenceIndex,
    tokens: Vec<HashSet<u32>>,
}

fn encode_dataset(dataset: &Dataset, model: &Model) -> Result<Encoded> {
    let index = EvidenceIndex::build(&dataset.corpus.pairs(), &model.vocab, &model.encoder)?;
    let tokens = dataset
        .corpus
        .entries
        .iter()
        .map(|e| model.vocab.tokenize(&e.text).into_iter().collect())
        .collect();
    Ok(Encoded { index, tokens })
}

fn select_evidence(
    dataset: &Dataset,
    enc: &Encoded,
    model: &Model,
    cfg: &RunConfig,
    i: usize,
) -> Result<Vec<(u64, f64)>> {
    let s = &dataset.samples[i];
    let q = encode(&s.question, &model.vocab, &model.encoder)?;
    let score = |id: u64| -> Result<(u64, f64)> {
        let chunk = enc.index.get(id).ok_or(Error::UnknownChunkId(id))?;
        Ok((id, alignment_score(&q, &chunk.vector)?))
    };
    match cfg.eval.evidence {
        EvidenceMode::Gold => dataset.links[i].gold.iter().map(|&id| score(id)).collect(),
        EvidenceMode::Retrieved => {
            let scored = dataset
                .candidates(i, cfg.retrieval.corpus)
                .into_iter()
                .map(score)
                .collect::<Result<Vec<_>>>()?;
            Ok(rank_scores(scored, cfg.retrieval.top_k)
                .into_iter()
                .take_while(|r| r.score >= cfg.retrieval.tau)
                .map(|r| (r.chunk_id, r.score))
                .collect())
        }
    }
}

fn run_sample(dataset: &Dataset, enc: &Encoded, model: &Model, cfg: &RunConfig, i: usize) -> SampleRecord {
    let s = &dataset.samples[i];
    let mut record = SampleRecord {
        id: s.id.clone(),
        status: SampleStatus::Ok,
        error: None,
        evidence: Vec::new(),
        generated: String::new(),
        gold: s.answer.clone(),
        scores: score_sample("", &s.answer),
        consistency: None,
        content_tokens: 0,
        supported_tokens: 0,
    };
    let result = (|| -> Result<()> {
        let selected = select_evidence(dataset, enc, model, cfg, i)?;
        if selected.is_empty() {
            record.status = SampleStatus::RetrievalFailure;
            return Ok(());
        }
        let weights = normalize_weights(&selected, cfg.retrieval.beta)?;
        record.evidence = weights.entries.clone();
        let agg = aggregate(&weights, &enc.index)?;
        let trace = decode_greedy(
            &s.question,
            &agg,
            &model.vocab,
            &model.encoder,
            &model.decoder,
            cfg.eval.max_len,
        )?;
        let content = trace.content_tokens();
        record.generated = model.vocab.detokenize(content);
        let diff: Vec<f64> = trace
            .h_gen
            .values()
            .iter()
            .zip(agg.vector.values())
            .map(|(a, b)| a - b)
            .collect();
        record.consistency = Some(l2_norm(&diff));
        let support: HashSet<u32> = selected
            .iter()
            .flat_map(|(id, _)| enc.tokens[*id as usize].iter().copied())
            .collect();
        let content: Vec<u32> = content.iter().copied().filter(|t| model.vocab.is_content(*t)).collect();
        record.content_tokens = content.len();
        record.supported_tokens = content.iter().filter(|t| support.contains(t)).count();
        record.scores = score_sample(&record.generated, &s.answer);
        Ok(())
    })();
    if let Err(e) = result {
        record.status = SampleStatus::Error;
        record.error = Some(e.to_string());
        record.evidence.clear();
        record.generated.clear();
        record.consistency = None;
        record.content_tokens = 0;
        record.supported_tokens = 0;
        record.scores = score_sample("", &s.answer);
    }
    record
}

fn evaluate_encoded(
    dataset: &Dataset,
    enc: &Encoded,
    checkpoint: &Checkpoint,
    fingerprint: &str,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let model = &checkpoint.model;
    let samples: Vec<SampleRecord> = (0..dataset.len())
        .map(|i| run_sample(dataset, enc, model, cfg, i))
        .collect();
    let preds: Vec<&str> = samples.iter().map(|r| r.generated.as_str()).collect();
    let golds: Vec<&str> = samples.iter().map(|r| r.gold.as_str()).collect();
    let metrics = score_corpus(&preds, &golds)?;
    let cons: Vec<f64> = samples.iter().filter_map(|r| r.consistency).collect();
    let mean_consistency = if cons.is_empty() {
        0.0
    } else {
        cons.iter().sum::<f64>() / cons.len() as f64
    };
    let content: usize = samples.iter().map(|r| r.content_tokens).sum();
    let supported: usize = samples.iter().map(|r| r.supported_tokens).sum();
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metrics,
        snapshot: ConfigSnapshot {
            beta: cfg.retrieval.beta,
            top_k: cfg.retrieval.top_k,
            tau: cfg.retrieval.tau,
            lambda: cfg.training.lambda,
            seed: cfg.seed,
            max_len: cfg.eval.max_len,
            evidence: cfg.eval.evidence,
            checkpoint_fingerprint: fingerprint.to_string(),
        },
        config: cfg.clone(),
        n_failed: samples.iter().filter(|r| r.status != SampleStatus::Ok).count(),
        mean_consistency,
        evidence_support_rate: if content == 0 {
            0.0
        } else {
            supported as f64 / content as f64
        },
        samples,
    })
}

/// Retrieve, weight, aggregate, decode and score every sample.
///
/// Per-sample failures are recorded (empty prediction) rather than
/// aborting; failures of the corpus as a whole are returned.
pub fn evaluate(dataset: &Dataset, checkpoint: &Checkpoint, cfg: &RunConfig) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    cfg.validate()?;
    let enc = encode_dataset(dataset, &checkpoint.model)?;
    evaluate_encoded(dataset, &enc, checkpoint, &checkpoint.fingerprint(), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Beta,
    TopK,
    Tau,
    Lambda,
    MaxLen,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::TopK => "top_k",
            SweepParam::Tau => "tau",
            SweepParam::Lambda => "lambda",
            SweepParam::MaxLen => "max_len",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "beta" => Some(SweepParam::Beta),
            "top_k" | "top-k" | "k" => Some(SweepParam::TopK),
            "tau" => Some(SweepParam::Tau),
            "lambda" => Some(SweepParam::Lambda),
            "max_len" | "max-len" => Some(SweepParam::MaxLen),
            _ => None,
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepParam::TopK | SweepParam::MaxLen)
    }

    /// `cfg` with this parameter set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: f64) -> RunConfig {
        let mut c = cfg.clone();
        match self {
            SweepParam::Beta => c.retrieval.beta = value,
            SweepParam::TopK => c.retrieval.top_k = value as usize,
            SweepParam::Tau => c.retrieval.tau = value,
            SweepParam::Lambda => c.training.lambda = value,
            SweepParam::MaxLen => c.eval.max_len = value as usize,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub parameter: SweepParam,
    pub grid: Vec<f64>,
    pub reports: Vec<EvalReport>,
}

/// Evaluate once per grid value with everything else held at `cfg`.
pub fn sweep(
    dataset: &Dataset,
    checkpoint: &Checkpoint,
    cfg: &RunConfig,
    param: SweepParam,
    grid: &[f64],
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sweep grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("sweep grid must be strictly increasing".into()));
    }
    if param.is_integer() && grid.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "{} grid values must be positive integers",
            param.name()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let enc = encode_dataset(dataset, &checkpoint.model)?;
    let fingerprint = checkpoint.fingerprint();
    let reports = grid
        .iter()
        .map(|&v| {
            let c = param.apply(cfg, v);
            c.validate()?;
            evaluate_encoded(dataset, &enc, checkpoint, &fingerprint, &c)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult {
        schema_version: REPORT_SCHEMA_VERSION,
        parameter: param,
        grid: grid.to_vec(),
        reports,
    })
}

/// Sweep the weight sharpness; the grid must include 0 and have at least
/// three points.
pub fn sweep_alignment_weight(
    dataset: &Dataset,
    checkpoint: &Checkpoint,
    cfg: &RunConfig,
    beta_grid: &[f64],
) -> Result<SweepResult> {
    if beta_grid.len() < 3 || !beta_grid.contains(&0.0) {
        return Err(Error::InvalidConfig(
            "beta grid needs at least three values including 0".into(),
        ));
    }
    sweep(dataset, checkpoint, cfg, SweepParam::Beta, beta_grid)
}

pub fn sweep_top_k(
    dataset: &Dataset,
    checkpoint: &Checkpoint,
    cfg: &RunConfig,
    k_grid: &[usize],
) -> Result<SweepResult> {
    let grid: Vec<f64> = k_grid.iter().map(|&k| k as f64).collect();
    sweep(dataset, checkpoint, cfg, SweepParam::TopK, &grid)
}

pub const DEFAULT_BETA_GRID: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_K_GRID: [usize; 7] = [1, 2, 3, 5, 8, 12, 20];

impl SweepResult {
    pub fn em(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.metrics.em).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("sweep serializes");
        s.push('\n');
        s
    }

    /// One row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,value,em,f1,bleu,rouge_l,mean_consistency\n");
        for (v, r) in self.grid.iter().zip(&self.reports) {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                self.parameter.name(),
                v,
                m.em,
                m.f1,
                m.bleu,
                m.rouge_l,
                r.mean_consistency
            );
        }
        out
    }

    /// EM against the swept value as a standalone SVG line chart.
    pub fn to_svg(&self) -> String {
        line_chart(self.parameter.name(), &self.grid, &self.em())
    }
}

/// Minimal SVG line chart, y fixed to `[0, 100]`; x is plotted by grid
/// position so uneven grids stay readable.
pub fn line_chart(x_label: &str, xs: &[f64], ys: &[f64]) -> String {
    let (w, h, m) = (480.0, 320.0, 48.0);
    let n = xs.len().max(2) as f64 - 1.0;
    let px = |i: usize| m + (w - 2.0 * m) * i as f64 / n;
    let py = |y: f64| h - m - (h - 2.0 * m) * y.clamp(0.0, 100.0) / 100.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<polyline points="{m},{} {m},{} {},{}" fill="none" stroke="black"/>"#,
        m,
        h - m,
        w - m,
        h - m
    );
    for tick in [0.0, 50.0, 100.0] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{tick}</text>"#,
            m - 6.0,
            py(tick) + 4.0
        );
    }
    let points: Vec<String> = ys
        .iter()
        .enumerate()
        .map(|(i, y)| format!("{:.1},{:.1}", px(i), py(*y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        points.join(" ")
    );
    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, px(i), py(*y));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{x}</text>"#,
            px(i),
            h - m + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x_label}</text>"#,
        w / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">EM</text>"#,
        h / 2.0,
        h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Vocabulary from the dataset texts and a freshly initialized model.
pub fn init_model(dataset: &Dataset, cfg: &RunConfig) -> Model {
    let vocab = Vocabulary::from_texts(dataset.texts(), cfg.encoder.min_count, cfg.encoder.hash_buckets);
    Model::init(vocab, cfg.encoder.dim, cfg.decoder.hidden, cfg.seed)
}

/// Build a model for `dataset` and train it under `cfg`.
pub fn fit(dataset: &Dataset, cfg: &RunConfig) -> Result<Checkpoint> {
    let model = init_model(dataset, cfg);
    let samples = dataset.train_samples(&model.vocab, cfg.retrieval.corpus);
    train(&samples, model, cfg)
}
